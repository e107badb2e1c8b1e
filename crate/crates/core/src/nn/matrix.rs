use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the networks can be evaluated in.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const BITS: u32;

    /// `C = alpha * A * B + beta * C` with explicit strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping (for `c`)
    /// matrices of the given dimensions.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("float literal")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }

    /// `(sin, cos)` used by the sine layers.
    #[inline]
    fn sin_cos_act(self) -> (Self, Self) {
        self.sin_cos()
    }

    #[inline]
    fn sin_act(self) -> Self {
        self.sin()
    }
}

impl Real for f64 {
    const BITS: u32 = 64;

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f32 {
    const BITS: u32 = 32;

    #[inline(always)]
    fn sin_cos_act(self) -> (f32, f32) {
        sin_cos_f32(self)
    }

    #[inline(always)]
    fn sin_act(self) -> f32 {
        sin_cos_f32(self).0
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Branch-free single precision sine and cosine: reduction by `pi / 2` in
/// three parts, then minimax polynomials on `[-pi/4, pi/4]`. Absolute error
/// stays below 2e-7 for `|x| < 1e4`. Written so the loops calling it
/// vectorize, unlike the libm routines.
#[inline(always)]
pub fn sin_cos_f32(x: f32) -> (f32, f32) {
    const SHIFTER: f32 = 12_582_912.0; // 1.5 * 2^23
    const P1: f32 = 1.570_312_5;
    const P2: f32 = 4.837_513e-4;
    const P3: f32 = 7.549_79e-8;
    let kf = (x * std::f32::consts::FRAC_2_PI + SHIFTER) - SHIFTER;
    let q = (kf as i32) as u32;
    let r = ((x - kf * P1) - kf * P2) - kf * P3;
    let z = r * r;
    let s = r + r * z * (-1.666_665_5e-1 + z * (8.332_161e-3 + z * -1.951_529_6e-4));
    let c = 1.0 - 0.5 * z + z * z * (4.166_664_6e-2 + z * (-1.388_731_6e-3 + z * 2.443_315_7e-5));
    let swap = q & 1 == 1;
    let (sv, cv) = if swap { (c, s) } else { (s, c) };
    let sin_sign = (q & 2) << 30;
    let cos_sign = (q.wrapping_add(1) & 2) << 30;
    (
        f32::from_bits(sv.to_bits() ^ sin_sign),
        f32::from_bits(cv.to_bits() ^ cos_sign),
    )
}

/// Dense row-major matrix. Batches of points are stored one point per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.f64())).collect(),
        }
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// `self = alpha * a * b^T + beta * self`, with `a: m x k`, `b: n x k`.
    pub fn gemm_nt(&mut self, alpha: T, a: &Matrix<T>, b: &Matrix<T>, beta: T) {
        assert_eq!(a.cols, b.cols);
        assert_eq!((self.rows, self.cols), (a.rows, b.rows));
        let (m, k, n) = (a.rows, a.cols, b.rows);
        // SAFETY: dimensions checked above; `self` is uniquely borrowed.
        unsafe {
            T::gemm(
                m,
                k,
                n,
                alpha,
                a.data.as_ptr(),
                k as isize,
                1,
                b.data.as_ptr(),
                1,
                k as isize,
                beta,
                self.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    /// `self = alpha * a * b + beta * self`, with `a: m x k`, `b: k x n`.
    pub fn gemm_nn(&mut self, alpha: T, a: &Matrix<T>, b: &Matrix<T>, beta: T) {
        assert_eq!(a.cols, b.rows);
        assert_eq!((self.rows, self.cols), (a.rows, b.cols));
        let (m, k, n) = (a.rows, a.cols, b.cols);
        // SAFETY: dimensions checked above.
        unsafe {
            T::gemm(
                m,
                k,
                n,
                alpha,
                a.data.as_ptr(),
                k as isize,
                1,
                b.data.as_ptr(),
                n as isize,
                1,
                beta,
                self.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    /// `self = alpha * a^T * b + beta * self`, with `a: k x m`, `b: k x n`.
    pub fn gemm_tn(&mut self, alpha: T, a: &Matrix<T>, b: &Matrix<T>, beta: T) {
        assert_eq!(a.rows, b.rows);
        assert_eq!((self.rows, self.cols), (a.cols, b.cols));
        let (m, k, n) = (a.cols, a.rows, b.cols);
        // SAFETY: dimensions checked above.
        unsafe {
            T::gemm(
                m,
                k,
                n,
                alpha,
                a.data.as_ptr(),
                1,
                m as isize,
                b.data.as_ptr(),
                n as isize,
                1,
                beta,
                self.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_sine_matches_libm() {
        let mut worst: f64 = 0.0;
        for i in -200_000..200_000 {
            let x = i as f32 * 7.3e-3;
            let (s, c) = sin_cos_f32(x);
            let xd = x as f64;
            worst = worst.max((s as f64 - xd.sin()).abs()).max((c as f64 - xd.cos()).abs());
        }
        assert!(worst < 2e-7, "{worst}");
        assert_eq!(sin_cos_f32(0.0), (0.0, 1.0));
    }

    fn naive(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                c.set(i, j, s);
            }
        }
        c
    }

    fn transpose(a: &Matrix<f64>) -> Matrix<f64> {
        let mut t = Matrix::zeros(a.cols(), a.rows());
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                t.set(j, i, a.get(i, j));
            }
        }
        t
    }

    #[test]
    fn gemm_variants_agree_with_naive_product() {
        let a = Matrix::from_vec(3, 4, (0..12).map(|v| v as f64 * 0.5 - 2.0).collect());
        let b = Matrix::from_vec(4, 2, (0..8).map(|v| (v as f64).sin()).collect());
        let expected = naive(&a, &b);

        let close = |c: &Matrix<f64>, s: f64| {
            c.as_slice()
                .iter()
                .zip(expected.as_slice())
                .all(|(x, y)| (x - s * y).abs() < 1e-12)
        };
        let mut c = Matrix::zeros(3, 2);
        c.gemm_nn(1.0, &a, &b, 0.0);
        assert!(close(&c, 1.0));

        let mut c = Matrix::zeros(3, 2);
        c.gemm_nt(1.0, &a, &transpose(&b), 0.0);
        assert!(close(&c, 1.0));

        let mut c = Matrix::zeros(3, 2);
        c.gemm_tn(1.0, &transpose(&a), &b, 0.0);
        assert!(close(&c, 1.0));

        // beta = 1 accumulates
        c.gemm_tn(2.0, &transpose(&a), &b, 1.0);
        assert!(close(&c, 3.0));
    }
}
