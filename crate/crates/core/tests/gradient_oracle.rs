use inr4d::gradcheck::{
    check_backward, check_input_jacobian, check_total_loss, fd_jacdet_penalty, random_matrix, random_mlp,
};
use inr4d::losses::{jacdet_penalty, jacobian_determinants, total_loss};
use inr4d::networks::{predict_intensity, NetShape, SanModel, TmnModel};
use inr4d::nn::{init_siren, Activation, Matrix, Mlp};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn dims_strategy() -> impl Strategy<Value = Vec<usize>> {
    (1usize..=5, 1usize..=4, 1usize..=3).prop_flat_map(|(depth, din, dout)| {
        prop::collection::vec(1usize..=64, depth - 1).prop_map(move |hidden| {
            let mut d = vec![din];
            d.extend(hidden);
            d.push(dout);
            d
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn reverse_mode_matches_finite_differences(dims in dims_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_mlp(&mut rng, &dims);
        let x = random_matrix(&mut rng, 3, dims[0], 1.0);
        let c = random_matrix(&mut rng, 3, *dims.last().unwrap(), 1.0);
        let rep = check_backward(&net, &x, &[], &c, &[], H, 12, &mut rng).unwrap();
        prop_assert!(rep.max_rel_err < TOL, "{:?} dims {:?}", rep, dims);
    }

    #[test]
    fn tangent_backward_matches_finite_differences(dims in dims_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_mlp(&mut rng, &dims);
        let cols: Vec<usize> = (0..dims[0]).collect();
        let out = *dims.last().unwrap();
        let x = random_matrix(&mut rng, 3, dims[0], 1.0);
        let c = random_matrix(&mut rng, 3, out, 1.0);
        let d: Vec<Matrix<f64>> = cols.iter().map(|_| random_matrix(&mut rng, 3, out, 1.0)).collect();
        let rep = check_backward(&net, &x, &cols, &c, &d, H, 12, &mut rng).unwrap();
        prop_assert!(rep.max_rel_err < TOL, "{:?} dims {:?}", rep, dims);
    }

    #[test]
    fn input_jacobian_matches_finite_differences(dims in dims_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_mlp(&mut rng, &dims);
        let cols: Vec<usize> = (0..dims[0]).collect();
        let x = random_matrix(&mut rng, 4, dims[0], 1.0);
        let rep = check_input_jacobian(&net, &x, &cols, H).unwrap();
        prop_assert!(rep.max_rel_err < TOL, "{:?} dims {:?}", rep, dims);
    }

    #[test]
    fn sine_activations_stay_bounded(dims in dims_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net: Mlp<f64> = init_siren(&dims, rng.gen_range(1.0..30.0), 1.0, seed).unwrap();
        let x = random_matrix(&mut rng, 8, dims[0], 5.0);
        let (_, tape) = net.forward(&x).unwrap();
        for (l, layer) in net.layers().iter().enumerate() {
            if layer.activation == Activation::Sine {
                let z = tape.pre_activation(l);
                prop_assert!(z.as_slice().iter().all(|v| v.sin().abs() <= 1.0));
            }
        }
        let n = net.layers().len();
        if n > 1 {
            let hidden = net.clone();
            let mut layers = hidden.layers().to_vec();
            layers.truncate(n - 1);
            let trunk = Mlp::from_layers(layers).unwrap();
            let h = trunk.predict(&x).unwrap();
            prop_assert!(h.as_slice().iter().all(|v| v.abs() <= 1.0));
        }
    }
}

fn shape(width: usize, depth: usize, omega0: f64) -> NetShape {
    NetShape {
        width,
        depth,
        omega0,
        omega_hidden: 1.0,
    }
}

fn coords(rng: &mut ChaCha8Rng, n: usize) -> Matrix<f64> {
    random_matrix(rng, n, 3, 1.0)
}

#[test]
fn deform_shrink_jacobian_matches_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tmn = TmnModel::new(shape(32, 4, 30.0), seed).unwrap();
        let x = random_matrix(&mut rng, 6, 4, 1.0);
        let rep = check_input_jacobian(&tmn.mlp, &x, &[0, 1, 2], H).unwrap();
        assert!(rep.max_rel_err < TOL, "{rep:?}");
    }
}

#[test]
fn penalty_matches_finite_difference_jacobian() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let tmn = TmnModel::new(shape(32, 3, 30.0), seed).unwrap();
        let x = coords(&mut rng, 64);
        let s = rng.gen_range(-1.0..1.0);
        let analytic = jacdet_penalty(&tmn, &x, s).unwrap();
        let numeric = fd_jacdet_penalty(&tmn, &x, s, H).unwrap();
        assert!(analytic > 1e-3);
        assert!((analytic - numeric).abs() < 1e-6, "{analytic} vs {numeric}");
    }
}

/// Drops points within `margin` of either absolute-value kink, where a
/// difference quotient straddling the kink is not a derivative.
fn away_from_kinks(
    tmn: &TmnModel<f64>,
    san: &SanModel<f64>,
    x: &Matrix<f64>,
    s: f64,
    gt: &[f64],
    margin: f64,
) -> (Matrix<f64>, Vec<f64>) {
    let dets = jacobian_determinants(tmn, x, s).unwrap();
    let pred = predict_intensity(tmn, san, x, s).unwrap();
    let keep: Vec<usize> = (0..x.rows())
        .filter(|&i| (1.0 - dets[i]).abs() > margin && (pred[i] - gt[i]).abs() > margin)
        .collect();
    let rows: Vec<Vec<f64>> = keep.iter().map(|&i| x.row(i).to_vec()).collect();
    (Matrix::from_rows(&rows), keep.iter().map(|&i| gt[i]).collect())
}

#[test]
fn total_loss_gradients_match_finite_differences() {
    for seed in 0..8 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let mut tmn = TmnModel::new(shape(12, 3, 30.0), seed).unwrap();
        if seed % 2 == 1 {
            for w in tmn.mlp.layers_mut().last_mut().unwrap().weight.as_mut_slice() {
                *w *= 2.0;
            }
        }
        let san = SanModel::new(shape(12, 4, 30.0), seed + 50).unwrap();
        let x = coords(&mut rng, 24);
        let gt: Vec<f64> = (0..24).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s = rng.gen_range(-1.0..1.0);
        let (x, gt) = away_from_kinks(&tmn, &san, &x, s, &gt, 0.02);
        assert!(x.rows() >= 8);
        for lambda in [0.0, 0.05, 1.0] {
            let rep = check_total_loss(&tmn, &san, &x, s, &gt, lambda, H, 30, &mut rng).unwrap();
            assert!(rep.max_rel_err < TOL, "seed {seed} lambda {lambda}: {rep:?}");
        }
    }
}

#[test]
fn penalty_gradient_never_reaches_the_anatomy_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tmn = TmnModel::new(shape(16, 3, 30.0), 1).unwrap();
    let san = SanModel::new(shape(16, 4, 30.0), 2).unwrap();
    let x = coords(&mut rng, 32);
    let gt: Vec<f64> = (0..32).map(|_| rng.gen_range(0.0..1.0)).collect();
    let (_, g0) = total_loss(&tmn, &san, &x, 0.4, &gt, 0.0).unwrap();
    let (_, g1) = total_loss(&tmn, &san, &x, 0.4, &gt, 0.7).unwrap();
    assert_eq!(g0.san, g1.san);
    assert_ne!(g0.tmn, g1.tmn);
}

#[test]
fn composition_gradient_reaches_every_parameter() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let tmn = TmnModel::new(shape(16, 3, 30.0), 3).unwrap();
    let san = SanModel::new(shape(16, 4, 30.0), 4).unwrap();
    let x = coords(&mut rng, 256);
    let gt: Vec<f64> = (0..256).map(|_| rng.gen_range(0.0..1.0)).collect();
    let (_, g) = total_loss(&tmn, &san, &x, -0.2, &gt, 0.05).unwrap();
    let dead = |v: Vec<f64>| v.iter().filter(|&&x| x == 0.0).count();
    assert_eq!(dead(g.tmn.flatten()), 0);
    assert_eq!(dead(g.san.flatten()), 0);
}

#[test]
fn hidden_weight_variance_matches_uniform_law() {
    // U(-b, b) has variance b^2 / 3 with b = sqrt(6 / in) / omega
    for omega in [1.0, 2.0] {
        let net: Mlp<f64> = init_siren(&[3, 512, 512, 1], 30.0, omega, 5).unwrap();
        let w = net.layers()[1].weight.as_slice();
        assert!(w.len() >= 100_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let expected = 6.0 / (512.0 * omega * omega) / 3.0;
        assert!((var / expected - 1.0).abs() < 0.2, "{var} vs {expected}");
    }
    let net: Mlp<f64> = init_siren(&[4, 100_000, 1], 30.0, 1.0, 6).unwrap();
    let w = net.layers()[0].weight.as_slice();
    let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
    let expected = (1.0f64 / 4.0).powi(2) / 3.0;
    assert!((var / expected - 1.0).abs() < 0.2);
}
