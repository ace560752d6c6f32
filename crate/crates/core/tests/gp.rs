use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redzone_core::data::gp_draw;
use redzone_core::gp::{kernel_eval, select_hyperparameters, GpPosterior};
use redzone_core::{KernelParams, LabeledDataset, Position};

const JITTER: f64 = 1e-9;

/// Predictions from an explicit inverse of the regularized Gram matrix.
fn dense_predict(post: &GpPosterior, x: &Position) -> (f64, f64) {
    let p = post.params();
    let data = post.training();
    let n = data.len();
    let pts = data.points();
    let k = DMatrix::from_fn(n, n, |i, j| {
        let mut v = p.amplitude * (-pts[i].squared_distance(&pts[j]) / (2.0 * p.length_scale * p.length_scale)).exp();
        if i == j {
            v += p.noise_variance + data.extra_noise(i) + post.jitter();
        }
        v
    });
    let inv = k.try_inverse().expect("regularized Gram matrix is invertible");
    let kx = DVector::from_fn(n, |i, _| {
        p.amplitude * (-pts[i].squared_distance(x) / (2.0 * p.length_scale * p.length_scale)).exp()
    });
    let resid = DVector::from_fn(n, |i, _| data.values()[i] - post.prior_mean_at_points()[i]);
    let mean = (kx.transpose() * &inv * resid)[0];
    let var = p.amplitude - (kx.transpose() * &inv * &kx)[0];
    (mean, var.clamp(0.0, p.amplitude))
}

fn random_case(rng: &mut ChaCha8Rng, n: usize, heteroscedastic: bool) -> (KernelParams, LabeledDataset) {
    let v = rng.random_range(0.5..4.0);
    let params = KernelParams::new(v, rng.random_range(0.2..2.0), v * rng.random_range(1e-3..1e-1)).unwrap();
    let pts: Vec<Position> = (0..n)
        .map(|_| Position::new(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)))
        .collect();
    let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let data = if heteroscedastic {
        let extra = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
        LabeledDataset::with_extra_noise(pts, ys, extra).unwrap()
    } else {
        LabeledDataset::new(pts, ys).unwrap()
    };
    (params, data)
}

#[test]
fn matches_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..12 {
        let n = rng.random_range(1..=80);
        let (params, data) = random_case(&mut rng, n, case % 2 == 1);
        let prior: Option<Vec<f64>> = (case % 3 == 0).then(|| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let post = GpPosterior::fit(params, data, prior.as_deref()).unwrap();
        assert_eq!(post.jitter(), JITTER * params.amplitude);
        for _ in 0..20 {
            let x = Position::new(rng.random_range(-1.0..6.0), rng.random_range(-1.0..6.0));
            let got = post.predict(&x);
            let (m, v) = dense_predict(&post, &x);
            let ym = post.training().values().iter().fold(1.0f64, |a, y| a.max(y.abs()));
            assert!((got.mean - m).abs() <= 1e-8 * ym, "case {case}: mean {} vs {m}", got.mean);
            assert!((got.variance - v).abs() <= 1e-8 * params.amplitude, "case {case}: var {} vs {v}", got.variance);
        }
    }
}

#[test]
fn push_equals_refit() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (params, data) = random_case(&mut rng, 30, false);
    let head = LabeledDataset::new(data.points()[..10].to_vec(), data.values()[..10].to_vec()).unwrap();
    let mut post = GpPosterior::fit(params, head, None).unwrap();
    for i in 10..30 {
        post.push(data.points()[i], data.values()[i], 0.0, 0.0).unwrap();
    }
    let full = GpPosterior::fit(params, data, None).unwrap();
    for i in 0..30 {
        assert_eq!(post.cholesky_row(i), full.cholesky_row(i));
    }
    assert_eq!(post.dual_weights(), full.dual_weights());
}

#[test]
fn likelihood_search_recovers_length_scale() {
    let grid: Vec<KernelParams> = [0.1, 0.5, 2.5]
        .iter()
        .map(|&l| KernelParams::new(1.0, l, 1e-6).unwrap())
        .collect();
    let truth = KernelParams::new(1.0, 0.5, 0.0).unwrap();
    let mut hits = 0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let pts: Vec<Position> = (0..60)
            .map(|_| Position::new(rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)))
            .collect();
        let ys = gp_draw(&truth, &pts, seed);
        let data = LabeledDataset::new(pts, ys).unwrap();
        let best = select_hyperparameters(&data, &grid).unwrap();
        hits += (best.length_scale == 0.5) as usize;
    }
    assert!(hits >= 8, "selected 0.5 in {hits}/10");
}

fn position() -> impl Strategy<Value = Position> {
    (-5.0f64..5.0, -5.0f64..5.0).prop_map(|(x, y)| Position::new(x, y))
}

fn params() -> impl Strategy<Value = KernelParams> {
    (0.1f64..5.0, 0.1f64..3.0, 1e-4f64..0.5).prop_map(|(v, l, s)| KernelParams::new(v, l, s * v).unwrap())
}

fn dataset(max: usize) -> impl Strategy<Value = LabeledDataset> {
    prop::collection::vec((position(), -3.0f64..3.0), 1..max)
        .prop_map(|v| {
            let (p, y) = v.into_iter().unzip();
            LabeledDataset::new(p, y).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_symmetric_and_bounded(p in params(), a in position(), b in position()) {
        let k = kernel_eval(&p, &a, &b);
        prop_assert_eq!(k, kernel_eval(&p, &b, &a));
        prop_assert!(k >= 0.0 && k <= p.amplitude);
        prop_assert_eq!(kernel_eval(&p, &a, &a), p.amplitude);
    }

    #[test]
    fn variance_bounds_and_monotonicity(
        p in params(),
        data in dataset(30),
        extra in position(),
        extra_y in -3.0f64..3.0,
        queries in prop::collection::vec(position(), 1..20),
    ) {
        let before = GpPosterior::fit(p, data.clone(), None).unwrap();
        let mut grown = data.clone();
        grown.push(extra, extra_y, 0.0);
        let after = GpPosterior::fit(p, grown, None).unwrap();
        for q in &queries {
            let a = before.predict(q).variance;
            let b = after.predict(q).variance;
            prop_assert!(a >= 0.0 && a <= p.amplitude);
            prop_assert!(b >= 0.0 && b <= p.amplitude);
            prop_assert!(b <= a + 1e-9, "variance grew from {} to {}", a, b);
        }
    }

    #[test]
    fn prior_mean_shift_equivariance(
        p in params(),
        data in dataset(25),
        offsets in prop::collection::vec(-2.0f64..2.0, 25),
        queries in prop::collection::vec(position(), 1..10),
    ) {
        let n = data.len();
        let m = &offsets[..n];
        let with_prior = GpPosterior::fit(p, data.clone(), Some(m)).unwrap();
        let shifted: Vec<f64> = data.values().iter().zip(m).map(|(y, m)| y - m).collect();
        let plain = GpPosterior::fit(p, LabeledDataset::new(data.points().to_vec(), shifted).unwrap(), None).unwrap();
        for q in &queries {
            // the prior mean extension off the training points is zero
            let a = with_prior.predict(q);
            let b = plain.predict(q);
            prop_assert!((a.mean - b.mean).abs() <= 1e-10);
            prop_assert!((a.variance - b.variance).abs() <= 1e-10);
        }
    }

    #[test]
    fn noiseless_training_points_are_interpolated(
        v in 0.5f64..3.0,
        l in 0.3f64..1.0,
        pts in prop::collection::btree_set((0i32..8, 0i32..8), 1..12),
        seed in 0u64..1000,
    ) {
        let p = KernelParams::new(v, l, 0.0).unwrap();
        let pts: Vec<Position> = pts.into_iter().map(|(x, y)| Position::new(x as f64 * 1.5, y as f64 * 1.5)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ys: Vec<f64> = pts.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
        let post = GpPosterior::fit(p, LabeledDataset::new(pts.clone(), ys.clone()).unwrap(), None).unwrap();
        for (x, y) in pts.iter().zip(&ys) {
            let pr = post.predict(x);
            prop_assert!((pr.mean - y).abs() <= 1e-6 * y.abs().max(1.0));
            prop_assert!(pr.variance <= 1e-6 * v);
        }
    }
}
