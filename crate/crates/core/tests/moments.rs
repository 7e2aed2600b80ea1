use kmpath::{
    bin_moments, extract_pairs, simulate_em, BinRange, BinningConfig, IncrementPairs, InitialState, SdeModel,
    SecondMoment, SimulationConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn binning(n_bins: usize, range: BinRange, min_count: usize) -> BinningConfig {
    BinningConfig { n_bins, range, min_count, second_moment: SecondMoment::Raw }
}

/// Exact OU (f = -x, sigma^2 = 1) transitions at lag `h` from uniform starts.
fn exact_ou_pairs(h: f64, n: usize, seed: u64) -> IncrementPairs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decay = (-h).exp();
    let sd = ((1.0 - (-2.0 * h).exp()) / 2.0).sqrt();
    let mut x = Vec::with_capacity(n);
    let mut dx = Vec::with_capacity(n);
    for _ in 0..n {
        let x0 = rng.random_range(-2.0..2.0);
        let xi: f64 = rng.sample(StandardNormal);
        x.push(x0);
        dx.push(x0 * (decay - 1.0) + sd * xi);
    }
    IncrementPairs::new(x, dx, h).unwrap()
}

/// Least-squares slope through the origin of `y1` against bin centres.
fn drift_slope(pairs: &IncrementPairs) -> f64 {
    let b = bin_moments(pairs, &binning(40, BinRange::Fixed([-2.0, 2.0]), 100)).unwrap();
    let sxy: f64 = b.centers.iter().zip(&b.y1).map(|(c, y)| c * y).sum();
    let sxx: f64 = b.centers.iter().map(|c| c * c).sum();
    sxy / sxx
}

#[test]
fn finite_lag_drift_bias_is_first_order() {
    // E[dx | x] / h = x (e^{-h} - 1) / h, so the slope bias is about h/2
    let bias = |h: f64| drift_slope(&exact_ou_pairs(h, 2_000_000, 1)) + 1.0;
    let (b_coarse, b_fine) = (bias(0.2), bias(0.1));
    let exact = |h: f64| ((-h).exp() - 1.0) / h + 1.0;
    assert!((b_coarse - exact(0.2)).abs() < 0.01, "{b_coarse} vs {}", exact(0.2));
    assert!((b_fine - exact(0.1)).abs() < 0.01, "{b_fine} vs {}", exact(0.1));
    let ratio = b_coarse / b_fine;
    assert!((ratio - 2.0).abs() < 0.35, "bias ratio {ratio}");
}

#[test]
fn double_well_moments_at_one() {
    // a million single steps from x = 1: f(1) = 3, sigma^2(1) = 1
    let model = SdeModel::new(vec![0.0, 4.0, 0.0, -1.0], vec![1.0]).unwrap();
    let cfg = SimulationConfig {
        dt: 1e-3,
        n_steps: 1,
        n_paths: 1_000_000,
        x0: InitialState::Fixed(1.0),
        seed: 2,
        domain_clip: None,
    };
    let pairs = extract_pairs(&simulate_em(&model, &cfg).unwrap()).unwrap();
    let b = bin_moments(&pairs, &binning(3, BinRange::Fixed([0.85, 1.15]), 100)).unwrap();
    assert_eq!(b.len(), 1);
    assert!((b.centers[0] - 1.0).abs() < 1e-12);
    assert!((b.y1[0] - 3.0).abs() < 0.2, "y1 = {}", b.y1[0]);
    assert!((b.y2[0] - 1.0).abs() < 0.1, "y2 = {}", b.y2[0]);
}

#[test]
fn centred_moment_removes_the_drift_square() {
    let model = SdeModel::new(vec![0.0, 4.0, 0.0, -1.0], vec![1.0]).unwrap();
    let cfg = SimulationConfig {
        dt: 1e-2,
        n_steps: 1,
        n_paths: 200_000,
        x0: InitialState::Fixed(2.5),
        seed: 4,
        domain_clip: None,
    };
    let pairs = extract_pairs(&simulate_em(&model, &cfg).unwrap()).unwrap();
    let mut c = binning(2, BinRange::Fixed([2.0, 3.0]), 10);
    let raw = bin_moments(&pairs, &c).unwrap();
    c.second_moment = SecondMoment::Centered;
    let centred = bin_moments(&pairs, &c).unwrap();
    // f(2.5) = -5.625, so the raw moment carries about f^2 dt = 0.316
    let f = -5.625f64;
    assert!((raw.y2[0] - 1.0 - f * f * 1e-2).abs() < 0.02, "{}", raw.y2[0]);
    assert!((centred.y2[0] - 1.0).abs() < 0.02, "{}", centred.y2[0]);
    assert!((raw.y2[0] - centred.y2[0] - 1e-2 * raw.y1[0].powi(2)).abs() < 1e-9);
}

fn random_pairs(seed: u64, n: usize) -> IncrementPairs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let dx = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
    IncrementPairs::new(x, dx, 1e-3).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn counts_are_conserved(seed in any::<u64>(), n_bins in 2usize..60, min_count in 1usize..50) {
        let pairs = random_pairs(seed, 3000);
        for range in [BinRange::Auto, BinRange::Fixed([-2.0, 2.5]), BinRange::Quantile([0.05, 0.9])] {
            if let Ok(b) = bin_moments(&pairs, &binning(n_bins, range, min_count)) {
                prop_assert_eq!(b.counts.iter().sum::<usize>() + b.dropped, pairs.len());
                prop_assert!(b.counts.iter().all(|c| *c >= min_count));
                prop_assert!(b.centers.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn moments_scale_covariantly(seed in any::<u64>(), k in -3i32..=3) {
        // x -> lambda x, dx -> lambda dx: centres and y1 scale by lambda, y2 by lambda^2
        let lambda = 2f64.powi(k);
        let pairs = random_pairs(seed, 2000);
        let scaled = IncrementPairs::new(
            pairs.x.iter().map(|v| v * lambda).collect(),
            pairs.dx.iter().map(|v| v * lambda).collect(),
            pairs.delta_t,
        ).unwrap();
        let a = bin_moments(&pairs, &binning(12, BinRange::Fixed([-3.0, 3.0]), 5)).unwrap();
        let b = bin_moments(&scaled, &binning(12, BinRange::Fixed([-3.0 * lambda, 3.0 * lambda]), 5)).unwrap();
        prop_assert_eq!(&a.counts, &b.counts);
        for j in 0..a.len() {
            prop_assert_eq!(a.centers[j] * lambda, b.centers[j]);
            prop_assert_eq!(a.y1[j] * lambda, b.y1[j]);
            prop_assert_eq!(a.y2[j] * lambda * lambda, b.y2[j]);
        }
    }
}
