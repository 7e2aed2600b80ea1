use kmpath::{solve_backward, solve_forward, PdeGrid, SdeModel};

fn ou() -> SdeModel {
    SdeModel::new(vec![0.0, -1.0], vec![1.0]).unwrap()
}

fn gaussian(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Transition density of dX = -X dt + dW from `x0` after time `t`.
fn ou_density(x: f64, x0: f64, t: f64) -> f64 {
    gaussian(x, x0 * (-t).exp(), (1.0 - (-2.0 * t).exp()) / 2.0)
}

/// Largest pointwise error over levels with `t >= t_min`.
fn ou_error(grid: &PdeGrid, t_min: f64) -> f64 {
    let field = solve_forward(&ou(), 1.0, grid).unwrap();
    let nodes = grid.nodes();
    (0..=grid.n_t)
        .filter(|&m| grid.time(m) >= t_min)
        .flat_map(|m| {
            let t = grid.time(m);
            let level = field.level(m).to_vec();
            nodes.iter().zip(level).map(move |(&x, v)| (v - ou_density(x, 1.0, t)).abs()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

#[test]
fn ou_matches_the_analytic_density() {
    let grid = PdeGrid::with_default_steps(-6.0, 6.0, 401, 1.0).unwrap();
    let field = solve_forward(&ou(), 1.0, &grid).unwrap();
    for m in 0..=grid.n_t {
        assert!((grid.trapezoid(field.level(m)) - 1.0).abs() <= 1e-4, "mass at level {m}");
    }
    let err = ou_error(&grid, 0.05);
    assert!(err <= 1e-2, "L-inf error {err}");
    assert!(field.diagnostics.max_mass_drift <= 1e-12);
}

#[test]
fn grid_refinement_converges() {
    // halve dx and dt together; the error at t >= 0.2 should drop at least twofold
    let coarse = PdeGrid::new(-6.0, 6.0, 101, 1.0, 100).unwrap();
    let fine = PdeGrid::new(-6.0, 6.0, 201, 1.0, 200).unwrap();
    let (ec, ef) = (ou_error(&coarse, 0.2), ou_error(&fine, 0.2));
    assert!(ec / ef >= 2.0, "errors {ec} -> {ef}, factor {}", ec / ef);
}

#[test]
fn double_well_relaxes_to_its_stationary_density() {
    // starting on the barrier, both wells fill and equilibrate well before t = 3
    let model = SdeModel::new(vec![0.0, 4.0, 0.0, -1.0], vec![1.0]).unwrap();
    let grid = PdeGrid::with_default_steps(-4.0, 4.0, 401, 3.0).unwrap();
    let field = solve_forward(&model, 0.0, &grid).unwrap();
    let nodes = grid.nodes();
    let unnorm: Vec<f64> = nodes.iter().map(|&x| (4.0 * x * x - x.powi(4) / 2.0).exp()).collect();
    let z = grid.trapezoid(&unnorm);
    let diff: Vec<f64> = field.level(grid.n_t).iter().zip(&unnorm).map(|(p, s)| (p - s / z).abs()).collect();
    let l1 = grid.trapezoid(&diff);
    assert!(l1 <= 2e-2, "L1 distance {l1}");
}

#[test]
fn backward_solve_reproduces_the_heat_kernel() {
    // f = 0, sigma^2 = 1: Q(0, 1 | x, t) = N(x; 0, 1 - t)
    let heat = SdeModel::new(vec![0.0], vec![1.0]).unwrap();
    let grid = PdeGrid::with_default_steps(-6.0, 6.0, 401, 1.0).unwrap();
    let field = solve_backward(&heat, 0.0, &grid).unwrap();
    for m in [0, grid.n_t / 4, grid.n_t / 2] {
        let t = grid.time(m);
        let err = grid
            .nodes()
            .iter()
            .zip(field.level(m))
            .map(|(&x, v)| (v - gaussian(x, 0.0, 1.0 - t)).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-2, "t = {t}: {err}");
    }
    assert_eq!(field.level(grid.n_t), &grid.delta(0.0)[..]);
}

#[test]
fn chapman_kolmogorov_integral_is_constant() {
    let grid = PdeGrid::with_default_steps(-6.0, 6.0, 401, 1.0).unwrap();
    let fwd = solve_forward(&ou(), -1.0, &grid).unwrap();
    let bwd = solve_backward(&ou(), 0.5, &grid).unwrap();
    let inner: Vec<f64> = (0..=grid.n_t)
        .filter(|&m| (0.05..=0.95).contains(&grid.time(m)))
        .map(|m| {
            let prod: Vec<f64> = fwd.level(m).iter().zip(bwd.level(m)).map(|(a, b)| a * b).collect();
            grid.trapezoid(&prod)
        })
        .collect();
    let mean = inner.iter().sum::<f64>() / inner.len() as f64;
    let worst = inner.iter().map(|v| (v / mean - 1.0).abs()).fold(0.0, f64::max);
    assert!(worst <= 0.02, "relative spread {worst}");
    // and both agree with the analytic transition density
    let exact = ou_density(0.5, -1.0, 1.0);
    assert!((mean / exact - 1.0).abs() <= 0.02, "{mean} vs {exact}");
}

#[test]
fn forward_and_backward_agree_on_the_transition_density() {
    let model = SdeModel::new(vec![0.0, 4.0, 0.0, -1.0], vec![1.0, 0.0, 0.5]).unwrap();
    let grid = PdeGrid::with_default_steps(-5.0, 5.0, 301, 1.0).unwrap();
    let (x0, xf) = (-1.5, 2.0);
    let fwd = solve_forward(&model, x0, &grid).unwrap();
    let bwd = solve_backward(&model, xf, &grid).unwrap();
    let a = fwd.interpolate(grid.n_t, xf);
    let b = bwd.interpolate(0, x0);
    assert!((a / b - 1.0).abs() <= 1e-2, "{a} vs {b}");
}
