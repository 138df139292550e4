use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nrdc::diffcore::{check_gradients, Tape, Tensor, Var};
use nrdc::dynamics::{Rollout, TrajectoryBatch};
use nrdc::policies::FeedbackPolicy;
use nrdc::problems::{
    generate_delay_matrices, lqr_policy, merton_log_oracle, merton_policy, objective, riccati_lqr_oracle,
    trajectory_costs, LqDelayConfig, LqDelayProblem, LqFbmConfig, LqFbmProblem, LqSpec, MatrixSpec, PortfolioConfig,
    PortfolioProblem, ProblemConfig, Quadrature,
};
use nrdc::training::evaluate;

/// `P(τ)` for `dP/dτ = q + 2aP - sP²`, `P(0) = g`, in reversed time.
fn scalar_riccati(a: f64, s: f64, q: f64, g: f64, tau: f64) -> f64 {
    let gamma = (a * a + s * q).sqrt();
    let (hi, lo) = ((a + gamma) / s, (a - gamma) / s);
    let k = (g - hi) / (g - lo) * (-2.0 * gamma * tau).exp();
    (hi - lo * k) / (1.0 - k)
}

#[test]
fn scalar_riccati_matches_closed_form() {
    let (a, b, sig, q, r, g, t) = (0.8, 1.3, 0.6, 2.0, 0.5, 1.5, 1.2);
    let spec = LqSpec {
        a: DMatrix::from_element(1, 1, a),
        b: DMatrix::from_element(1, 1, b),
        sigma: DMatrix::from_element(1, 1, sig),
        q: DMatrix::from_element(1, 1, q),
        r: DMatrix::from_element(1, 1, r),
        g: DMatrix::from_element(1, 1, g),
        horizon: t,
        x0: vec![0.7],
    };
    let sol = riccati_lqr_oracle(&spec, 2000).unwrap();
    let s = b * b / r;
    for (k, &tk) in sol.times.iter().enumerate().step_by(250) {
        let exact = scalar_riccati(a, s, q, g, t - tk);
        assert!((sol.p[k][(0, 0)] - exact).abs() < 1e-10, "t = {tk}");
        assert!((sol.gains[k][(0, 0)] - b / r * exact).abs() < 1e-9);
    }
    // noise part: σ² ∫ P by Simpson's rule on the closed form
    let n = 20_000;
    let h = t / n as f64;
    let mut integral = 0.0;
    for j in 0..=n {
        let w = if j == 0 || j == n {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        integral += w * scalar_riccati(a, s, q, g, j as f64 * h);
    }
    integral *= h / 3.0;
    let exact = 0.49 * scalar_riccati(a, s, q, g, t) + sig * sig * integral;
    assert!((sol.value - exact).abs() < 1e-9, "{} vs {exact}", sol.value);
}

#[test]
fn riccati_value_bounds_random_linear_feedbacks() {
    let problem = LqFbmProblem::new(LqFbmConfig {
        hurst: 0.5,
        x0: vec![0.5, -0.3],
        ..Default::default()
    })
    .unwrap();
    let sol = riccati_lqr_oracle(&problem.as_lq(), 1000).unwrap();
    let best = evaluate(
        &lqr_policy(sol.clone()),
        &problem,
        100,
        4096,
        3,
        Quadrature::Left,
        512,
        1,
    )
    .unwrap();
    assert!(
        (best.mean - sol.value).abs() / sol.value < 0.02,
        "{} vs {}",
        best.mean,
        sol.value
    );
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..5 {
        let k: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
        let policy = FeedbackPolicy::new(2, 2, move |tape: &mut Tape, _t: f64, x: Var| {
            let m = tape.constant(Tensor::new([2, 2], k.clone()).unwrap());
            tape.matmul(x, m)
        });
        let e = evaluate(&policy, &problem, 100, 4096, 10 + trial, Quadrature::Left, 512, 1).unwrap();
        assert!(
            e.mean >= sol.value - 3.0 * e.std_error,
            "trial {trial}: {} < {}",
            e.mean,
            sol.value
        );
    }
}

/// Reward of constant controls `(π, c)` in the memoryless portfolio
/// problem, from `E log X_t = log φ + m t`.
fn constant_merton_reward(c: &PortfolioConfig, pi: f64, cons: f64) -> f64 {
    let m = c.r + pi * (c.mu1 - c.r) - cons - 0.5 * pi * pi * c.sigma * c.sigma;
    let (b, t) = (c.beta, c.horizon);
    let e = (-b * t).exp();
    let running = (cons.ln() + c.phi.ln()) * (1.0 - e) / b + m * (1.0 - e * (1.0 + b * t)) / (b * b);
    running + e / b * (c.phi.ln() + m * t)
}

#[test]
fn merton_closed_form_beats_a_brute_force_grid() {
    for phi in [1.0, 2.5] {
        let cfg = PortfolioConfig {
            mu2: 0.0,
            phi,
            ..Default::default()
        };
        let sol = merton_log_oracle(&PortfolioProblem::new(cfg.clone()).unwrap()).unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in 0..=400 {
            for j in 1..=400 {
                let (pi, cons) = (i as f64 * 0.0025, j as f64 * 0.001);
                let v = constant_merton_reward(&cfg, pi, cons);
                if v > best.0 {
                    best = (v, pi, cons);
                }
            }
        }
        assert!(best.0 <= sol.value + 1e-12);
        assert!(sol.value - best.0 < 1e-5, "{} vs {}", best.0, sol.value);
        assert!((best.1 - sol.investment).abs() < 0.003);
        assert!((best.2 - sol.consumption).abs() < 0.002);
        assert!((constant_merton_reward(&cfg, sol.investment, sol.consumption) - sol.value).abs() < 1e-12);
    }
    let with_memory = PortfolioProblem::new(PortfolioConfig::default()).unwrap();
    assert!(merton_log_oracle(&with_memory).is_err());
}

#[test]
fn merton_policy_attains_the_value_by_monte_carlo() {
    let problem = PortfolioProblem::new(PortfolioConfig {
        mu2: 0.0,
        ..Default::default()
    })
    .unwrap();
    let sol = merton_log_oracle(&problem).unwrap();
    let e = evaluate(
        &merton_policy(&problem, sol),
        &problem,
        200,
        40_000,
        4,
        Quadrature::Left,
        1000,
        1,
    )
    .unwrap();
    // left-rectangle quadrature of the discounted log consumption is biased by O(dt)
    assert!(
        (e.mean - sol.value).abs() < 3.0 * e.std_error + 0.01,
        "{} ± {} vs {}",
        e.mean,
        e.std_error,
        sol.value
    );
}

fn random_batch(
    rng: &mut ChaCha8Rng,
    count: usize,
    points: usize,
    d: usize,
    da: usize,
    feature: bool,
) -> TrajectoryBatch {
    let mut fill = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    TrajectoryBatch {
        times: (0..points).map(|k| k as f64 / (points - 1) as f64).collect(),
        count,
        state_dim: d,
        control_dim: da,
        feature_dim: if feature { d } else { 0 },
        states: fill(count * points * d),
        controls: fill(count * points * da),
        features: if feature { fill(count * points * d) } else { Vec::new() },
    }
}

#[test]
fn delay_cost_without_delay_coupling_is_the_plain_quadratic_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = vec![vec![2.0, 0.3], vec![0.3, 1.0]];
    let delay = LqDelayProblem::new(LqDelayConfig {
        dim: 2,
        control_dim: 2,
        noise_dim: 2,
        q: MatrixSpec::Rows(q.clone()),
        r: MatrixSpec::Scalar(0.7),
        g: MatrixSpec::Scalar(1.3),
        a3: Some(MatrixSpec::Scalar(0.0)),
        ..Default::default()
    })
    .unwrap();
    // the fBM problem carries a ½ in front of its weights
    let dbl: Vec<Vec<f64>> = q.iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
    let plain = LqFbmProblem::new(LqFbmConfig {
        q: MatrixSpec::Rows(dbl),
        r: MatrixSpec::Scalar(1.4),
        g: MatrixSpec::Scalar(2.6),
        ..Default::default()
    })
    .unwrap();
    let batch = random_batch(&mut rng, 7, 6, 2, 2, true);
    let a = trajectory_costs(&delay, &batch, Quadrature::Left).unwrap();
    let b = trajectory_costs(
        &plain,
        &TrajectoryBatch {
            feature_dim: 0,
            features: Vec::new(),
            ..batch.clone()
        },
        Quadrature::Left,
    )
    .unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn quadratic_cost_by_hand() {
    // one trajectory, two steps of 1/2, d = da = 1, weights ½·1
    let plain = LqFbmProblem::new(LqFbmConfig {
        dim: 1,
        control_dim: 1,
        noise_dim: 1,
        x0: vec![0.0],
        a: MatrixSpec::Scalar(0.0),
        c: MatrixSpec::Scalar(1.0),
        sigma: MatrixSpec::Scalar(1.0),
        q: MatrixSpec::Scalar(1.0),
        r: MatrixSpec::Scalar(1.0),
        g: MatrixSpec::Scalar(1.0),
        ..Default::default()
    })
    .unwrap();
    let batch = TrajectoryBatch {
        times: vec![0.0, 0.5, 1.0],
        count: 1,
        state_dim: 1,
        control_dim: 1,
        feature_dim: 0,
        states: vec![1.0, 2.0, 3.0],
        controls: vec![0.5, -1.0, 4.0],
        features: Vec::new(),
    };
    // left: ½·½(1 + ¼) + ½·½(4 + 1) + ½·9
    let left = trajectory_costs(&plain, &batch, Quadrature::Left).unwrap()[0];
    assert!((left - (0.3125 + 1.25 + 4.5)).abs() < 1e-14);
    // trapezoid adds ¼·½(9 + 16) and halves the first node
    let trap = trajectory_costs(&plain, &batch, Quadrature::Trapezoid).unwrap()[0];
    assert!((trap - (0.15625 + 1.25 + 3.125 + 4.5)).abs() < 1e-14);
}

fn rollout_of(tape: &mut Tape, batch: &TrajectoryBatch, controls: &[Var]) -> Rollout {
    let col = |tape: &mut Tape, k: usize, w: usize, get: &dyn Fn(usize, usize) -> Vec<f64>| {
        let data: Vec<f64> = (0..batch.count).flat_map(|i| get(i, k)).collect();
        tape.constant(Tensor::new([batch.count, w], data).unwrap())
    };
    let n = batch.points();
    let states = (0..n)
        .map(|k| col(tape, k, batch.state_dim, &|i, k| batch.state(i, k).to_vec()))
        .collect();
    let features = if batch.feature_dim > 0 {
        (0..n)
            .map(|k| col(tape, k, batch.feature_dim, &|i, k| batch.feature(i, k).to_vec()))
            .collect()
    } else {
        Vec::new()
    };
    Rollout {
        times: batch.times.clone(),
        states,
        features,
        controls: controls.to_vec(),
        rows: batch.count,
    }
}

#[test]
fn cost_gradients_in_the_controls_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let problems = [
        ProblemConfig::LqFbm(LqFbmConfig::default()),
        ProblemConfig::LqDelay(LqDelayConfig {
            dim: 2,
            control_dim: 2,
            noise_dim: 2,
            ..Default::default()
        }),
        ProblemConfig::Portfolio(PortfolioConfig::default()),
    ];
    for cfg in problems {
        let p = cfg.build().unwrap();
        let (d, da) = (p.state_dim(), p.control_dim());
        let mut batch = random_batch(&mut rng, 3, 4, d, da, p.delay().is_some());
        if cfg.name() == "portfolio" {
            // positive wealth and consumption
            batch.states.iter_mut().for_each(|v| *v += 1.5);
            batch.features.iter_mut().for_each(|v| *v += 1.5);
            batch.controls.iter_mut().for_each(|v| *v += 1.2);
        }
        let controls: Vec<Tensor> = (0..batch.points())
            .map(|k| {
                let data = (0..batch.count).flat_map(|i| batch.control(i, k).to_vec()).collect();
                Tensor::new([batch.count, da], data).unwrap()
            })
            .collect();
        let report = check_gradients(&controls, 1e-6, |tape, vars| {
            let r = rollout_of(tape, &batch, vars);
            let j = objective(&*p, tape, &r, Quadrature::Left)?;
            tape.mean(j)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{}: {report:?}", cfg.name());
    }
}

#[test]
fn delay_matrices_are_seeded_and_bounded() {
    let a = generate_delay_matrices(2021, 10, 10, 10);
    assert_eq!(a.a1, generate_delay_matrices(2021, 10, 10, 10).a1);
    assert_ne!(a.a1, generate_delay_matrices(2022, 10, 10, 10).a1);
    for m in [&a.a1, &a.a3, &a.b, &a.sigma] {
        assert!(m.amax() <= 0.2);
    }
    assert_eq!(a.a2.amax(), 0.0);
}

#[test]
fn configs_reject_unknown_keys() {
    let bad = "kind = \"lq-fbm\"\nhurst = 0.3\nhurts = 1\n";
    assert!(toml::from_str::<ProblemConfig>(bad).is_err());
    let ok: ProblemConfig = toml::from_str("kind = \"portfolio\"\nmu2 = 0.0\n").unwrap();
    assert_eq!(ok.name(), "portfolio");
}
