//! Acceptance gate: one pass/fail line per criterion, all criteria pinned
//! in code. Run with `cargo test --test acceptance -- --nocapture`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use conjlab::config::ExperimentConfig;
use conjlab::conjugacy::{verify_conjugacy, ConjugacySolution, VerifySpec};
use conjlab::error::Error;
use conjlab::harness::{run, Stage};
use conjlab::hypotheses::{certify_bounded_growth, estimate_nonlinearity_bounds, SamplingSpec};
use conjlab::localization::{cutoff_nonlinearity, escape_time, local_linearize, LocalMode};
use conjlab::norms::NormFamily;
use conjlab::omega::{MdsKind, Omega, ShiftMds};
use conjlab::rds::adapted::{adapted_random_norm, check_sandwich};
use conjlab::rds::{lyapunov_spectrum, rds_linearize, Cocycle, RdsOptions};
use conjlab::smooth::conjugacy_jacobian;
use conjlab::system::{LinearPart, Nonlinearity, SemilinearSystem};
use conjlab::window::TimeWindow;

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn record(&mut self, id: u32, name: &str, pass: bool, detail: String, started: Instant) {
        let line = format!(
            "{} criterion {id} ({name}): {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
        println!("{line}");
        if !pass {
            self.failures.push(line);
        }
    }
}

fn bernoulli_mds(symbols: Vec<f64>) -> ShiftMds {
    ShiftMds::new(
        MdsKind::Bernoulli {
            symbols,
            probs: vec![0.5, 0.5],
        },
        42,
    )
    .unwrap()
}

fn build_solution(sys: SemilinearSystem, m: usize) -> ConjugacySolution {
    let omega = Omega::deterministic();
    let growth = certify_bounded_growth(&sys, &omega).unwrap();
    let bounds = estimate_nonlinearity_bounds(&sys, &omega, &SamplingSpec::default(), m).unwrap();
    ConjugacySolution::build(sys, omega, growth, bounds).unwrap()
}

fn scalar_benchmark() -> ConjugacySolution {
    let sys = SemilinearSystem::new(
        LinearPart::constant(DMatrix::from_element(1, 1, 0.5)),
        Nonlinearity::new(1, |_, _, x: &DVector<f64>| {
            DVector::from_element(1, 0.1 * x[0].sin())
        })
        .with_jacobian(|_, _, x: &DVector<f64>| DMatrix::from_element(1, 1, 0.1 * x[0].cos())),
        NormFamily::euclidean(1),
        TimeWindow::new(0, 100).unwrap(),
    )
    .unwrap();
    build_solution(sys, 1)
}

fn criterion_1(gate: &mut Gate) {
    let started = Instant::now();
    let lin = LinearPart::constant(DMatrix::from_diagonal(&DVector::from_vec(vec![
        0.5, 0.7, 0.3,
    ])));
    let sys = SemilinearSystem::linear_only(lin, NormFamily::euclidean(3), TimeWindow::new(0, 40).unwrap())
        .unwrap();
    let sol = build_solution(sys, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let t = rng.gen_range(0..=40i64);
        let x = DVector::from_fn(3, |_, _| rng.gen_range(-10.0..10.0));
        worst = worst.max((sol.forward(t, &x).unwrap() - &x).norm());
        worst = worst.max((sol.inverse(t, &x).unwrap() - &x).norm());
    }
    let pass = worst < 1e-12 && started.elapsed().as_secs_f64() < 5.0;
    gate.record(
        1,
        "linear degeneracy",
        pass,
        format!("identity residual {worst:.2e} < 1e-12"),
        started,
    );
}

fn criterion_2(gate: &mut Gate, sol: &ConjugacySolution) {
    let started = Instant::now();
    let kl = sol.growth.k * sol.bounds.l;
    let cond = kl < 1.0 - sol.growth.alpha;
    let rep = verify_conjugacy(
        sol,
        &VerifySpec {
            n_samples: 150,
            max_horizon: 30,
            ..Default::default()
        },
    )
    .unwrap();
    let residuals = rep
        .conjugation_forward_max
        .max(rep.conjugation_inverse_max)
        .max(rep.roundtrip_gh_max)
        .max(rep.roundtrip_hg_max);
    // near-identity sup over a 10^3-point grid of xi in [-10, 10]
    let bound = sol.near_identity_bound();
    let mut near: f64 = 0.0;
    for (i, t) in [0i64, 25, 50, 75, 100].iter().enumerate() {
        for j in 0..200 {
            let xi = DVector::from_element(1, -10.0 + 20.0 * (j as f64 + i as f64 / 5.0) / 200.0);
            near = near.max((sol.forward(*t, &xi).unwrap() - &xi).norm());
            near = near.max((sol.inverse(*t, &xi).unwrap() - &xi).norm());
        }
    }
    // bound is K M/(1-alpha) with sampled M <= 0.1, so it sits at 0.2 minus
    // sampling slack; the advertised constant is the 0.2 + 1e-8 threshold
    let pass = cond
        && residuals <= 1e-8
        && bound <= 0.2 + 1e-8
        && near <= 0.2 + 1e-8
        && started.elapsed().as_secs_f64() < 30.0;
    gate.record(
        2,
        "scalar benchmark",
        pass,
        format!(
            "KL = {kl:.3} < {:.3}, residuals {residuals:.2e} <= 1e-8, near-identity {near:.4} <= {:.4}",
            1.0 - sol.growth.alpha,
            0.2 + 1e-8
        ),
        started,
    );
}

fn criterion_3(gate: &mut Gate) {
    let started = Instant::now();
    // contraction window where the worst-case deviation sum stays below
    // K M1/(1-alpha): A = 0.9, F = 0.01 sin, window 8
    let sys = SemilinearSystem::new(
        LinearPart::constant(DMatrix::from_element(1, 1, 0.9)),
        Nonlinearity::new(1, |_, _, x: &DVector<f64>| {
            DVector::from_element(1, 0.01 * x[0].sin())
        })
        .with_jacobian(|_, _, x: &DVector<f64>| DMatrix::from_element(1, 1, 0.01 * x[0].cos())),
        NormFamily::euclidean(1),
        TimeWindow::new(0, 8).unwrap(),
    )
    .unwrap();
    let sol = build_solution(sys, 1);
    let bound = sol.growth.k * sol.bounds.mj[1] / (1.0 - sol.growth.alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fd_err: f64 = 0.0;
    let mut dev_violations = 0usize;
    let mut dev_max: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.gen_range(0..=8i64);
        let v = rng.gen_range(-10.0..10.0);
        let eta = DVector::from_element(1, v);
        let d2g = conjugacy_jacobian(&sol, t, &eta).unwrap();
        let h = 1e-6 * v.abs().max(1.0);
        let up = sol.inverse(t, &DVector::from_element(1, v + h)).unwrap();
        let dn = sol.inverse(t, &DVector::from_element(1, v - h)).unwrap();
        let fd = (up[0] - dn[0]) / (2.0 * h);
        fd_err = fd_err.max((d2g[(0, 0)] - fd).abs() / fd.abs());
        let dev = (d2g[(0, 0)] - 1.0).abs();
        dev_max = dev_max.max(dev);
        if dev > bound {
            dev_violations += 1;
        }
    }
    let pass = fd_err <= 1e-5 && dev_violations == 0 && started.elapsed().as_secs_f64() < 60.0;
    gate.record(
        3,
        "smoothness",
        pass,
        format!(
            "D2G vs FD rel err {fd_err:.2e} <= 1e-5, deviation {dev_max:.4e} <= {bound:.4e} on all 100 points"
        ),
        started,
    );
}

fn criterion_4(gate: &mut Gate, sol: &ConjugacySolution) {
    let started = Instant::now();
    let (k, alpha, l) = (sol.growth.k, sol.growth.alpha, sol.bounds.l);
    let rate = alpha + k * l;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0usize;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s = rng.gen_range(0..=100i64);
        let t = rng.gen_range(s..=(s + 30).min(100));
        let eta = DVector::from_element(1, rng.gen_range(-10.0..10.0));
        let eta2 = DVector::from_element(1, rng.gen_range(-10.0..10.0));
        let a = sol.orbit(t, s, &eta).unwrap();
        let b = sol.orbit(t, s, &eta2).unwrap();
        let lhs = (a - b).norm();
        let rhs = k * rate.powi((t - s) as i32) * (&eta - &eta2).norm();
        if lhs > rhs * (1.0 + 1e-12) {
            violations += 1;
        }
        if rhs > 0.0 {
            worst = worst.max(lhs / rhs);
        }
    }
    let pass = violations == 0;
    gate.record(
        4,
        "growth bound",
        pass,
        format!("{violations} violations in 1000 pairs (worst ratio {worst:.3})"),
        started,
    );
}

fn criterion_5(gate: &mut Gate) {
    let started = Instant::now();
    let mds = bernoulli_mds(vec![0.4, 0.6]);
    let c = Cocycle::constant(DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.25])));
    let rep = lyapunov_spectrum(&c, &mds, 200, 2).unwrap();
    let det_err = (rep.lambdas[0] - 0.5f64.ln())
        .abs()
        .max((rep.lambdas[1] - 0.25f64.ln()).abs());

    let random = Cocycle::scalar_from_stream();
    let mds2 = bernoulli_mds(vec![2.0, 0.125]);
    let rep2 = lyapunov_spectrum(&random, &mds2, 10_000, 64).unwrap();
    let rand_err = (rep2.lambdas[0] - (-(2.0f64.ln()))).abs();

    let pass = det_err <= 1e-10 && rand_err <= 0.01 && started.elapsed().as_secs_f64() < 60.0;
    gate.record(
        5,
        "Lyapunov recovery",
        pass,
        format!("deterministic error {det_err:.2e} <= 1e-10, random error {rand_err:.4} <= 0.01"),
        started,
    );
}

fn criterion_6(gate: &mut Gate) {
    let started = Instant::now();
    let mds = bernoulli_mds(vec![0.4, 0.6]);
    let c = Cocycle::constant(DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.25])));
    let rep = lyapunov_spectrum(&c, &mds, 200, 2).unwrap();
    let mut worst: f64 = 0.0;
    for id in 0..64u64 {
        let norm = adapted_random_norm(&c, &rep, &mds.sample(id), 1e-13, 2000).unwrap();
        let sw = check_sandwich(&norm, 50, 4, id).unwrap();
        worst = worst.max(sw.worst_upper_slack).max(sw.worst_lower_slack);
    }
    let pass = worst <= 1e-10;
    gate.record(
        6,
        "adapted norm sandwich",
        pass,
        format!("worst slack {worst:.2e} <= 1e-10 over 64 samples, t <= 50"),
        started,
    );
}

fn criterion_7(gate: &mut Gate) {
    let started = Instant::now();
    let mds = bernoulli_mds(vec![0.4, 0.6]);
    let c = Cocycle::scalar_from_stream();
    let nl = Nonlinearity::new(1, |_, _, x: &DVector<f64>| {
        DVector::from_element(1, 0.05 * x[0].sin())
    })
    .with_jacobian(|_, _, x: &DVector<f64>| DMatrix::from_element(1, 1, 0.05 * x[0].cos()));
    let opts = RdsOptions {
        spectrum_steps: 4000,
        spectrum_samples: 16,
        verify_fibers: 2,
        verify: VerifySpec {
            n_samples: 40,
            max_horizon: 20,
            ..Default::default()
        },
        ..Default::default()
    };
    let lin = rds_linearize(&c, &nl, &mds, TimeWindow::new(0, 40).unwrap(), &opts).unwrap();
    let mut residual: f64 = 0.0;
    let mut near: f64 = 0.0;
    let mut bound = f64::INFINITY;
    for f in &lin.fibers {
        residual = residual
            .max(f.conjugacy.conjugation_forward_max)
            .max(f.conjugacy.conjugation_inverse_max);
        near = near
            .max(f.conjugacy.near_identity_h_max)
            .max(f.conjugacy.near_identity_g_max);
        bound = bound.min(f.near_identity_bound);
    }
    let pass = residual <= 1e-7 && near <= bound && started.elapsed().as_secs_f64() < 120.0;
    gate.record(
        7,
        "RDS linearization",
        pass,
        format!("orbit-conjugation residual {residual:.2e} <= 1e-7, near-identity {near:.4} <= M/(1-alpha) = {bound:.4}"),
        started,
    );
}

fn criterion_8(gate: &mut Gate) {
    let started = Instant::now();
    let mds = bernoulli_mds(vec![0.4, 0.6]);
    let omegas: Vec<Omega> = (0..4).map(|k| mds.sample(k)).collect();
    let square = Nonlinearity::new(1, |_, _, x: &DVector<f64>| {
        DVector::from_element(1, x[0] * x[0])
    })
    .with_jacobian(|_, _, x: &DVector<f64>| DMatrix::from_element(1, 1, 2.0 * x[0]));
    let cut = cutoff_nonlinearity(&square, &omegas, 0.1).unwrap();
    // exact agreement inside U(omega)
    let mut exact = true;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for om in &omegas {
        for _ in 0..100 {
            let x = DVector::from_element(1, rng.gen_range(-1.0..1.0) * 0.999 * cut.sigma);
            exact &= cut.f_tilde.eval(0, om, &x) == cut.f.eval(0, om, &x);
        }
    }
    let c = Cocycle::scalar_from_stream();
    let window = TimeWindow::new(0, 30).unwrap();
    let opts = RdsOptions {
        spectrum_steps: 2000,
        spectrum_samples: 8,
        verify_fibers: 2,
        verify: VerifySpec {
            n_samples: 24,
            max_horizon: 20,
            ..Default::default()
        },
        ..Default::default()
    };
    let (_, local) =
        local_linearize(&c, &cut, &mds, window, LocalMode::Topological, &opts).unwrap();
    // escape times actually bound the checked ranges
    let psi = SemilinearSystem::new(
        LinearPart::new(1, {
            let c2 = c.clone();
            move |t, om: &Omega| c2.at_time(t, om)
        }),
        cut.f.clone(),
        NormFamily::euclidean(1),
        window,
    )
    .unwrap();
    let esc_ok = escape_time(&psi, &cut, &omegas[0], &DVector::zeros(1)) == window.t_max;

    let refused = matches!(
        cutoff_nonlinearity(
            &Nonlinearity::new(1, |_, _, x: &DVector<f64>| x * 0.5),
            &omegas,
            0.1
        ),
        Err(Error::QuotientDoesNotVanish { .. })
    );
    let pass = exact
        && cut.measured_l <= 0.1 * (1.0 + 1e-6)
        && local.identity_max == 0.0
        && local.local_residual_max <= 1e-7
        && esc_ok
        && refused;
    gate.record(
        8,
        "localization",
        pass,
        format!(
            "Lipschitz {:.4} <= 0.1+, exact inside U: {exact}, local residual {:.2e} <= 1e-7, linear map refused: {refused}",
            cut.measured_l, local.local_residual_max
        ),
        started,
    );
}

fn criterion_9(gate: &mut Gate, suite_started: Instant) {
    let started = Instant::now();
    let cfg = ExperimentConfig::from_str(
        r#"
        [system]
        family = "scalar"
        dim = 1
        params = { value = 0.5 }
        nonlinearity = "sin"
        nonlinearity_params = { scale = 0.1 }

        [window]
        t_min = 0
        t_max = 60

        [verify]
        n_samples = 40
        max_horizon = 20
        "#,
    )
    .unwrap();
    let (a, _) = run(&cfg, Stage::Report);
    let (b, _) = run(&cfg, Stage::Report);
    let identical = a.to_json().unwrap() == b.to_json().unwrap();
    let total = suite_started.elapsed().as_secs_f64() + started.elapsed().as_secs_f64();
    let pass = identical && !a.has_hard_error() && total < 300.0;
    gate.record(
        9,
        "determinism",
        pass,
        format!("byte-identical reports: {identical}, suite total {total:.0}s < 300s"),
        started,
    );
}

#[test]
fn acceptance() {
    let suite_started = Instant::now();
    let mut gate = Gate {
        failures: Vec::new(),
    };
    criterion_1(&mut gate);
    let scalar = scalar_benchmark();
    criterion_2(&mut gate, &scalar);
    criterion_3(&mut gate);
    criterion_4(&mut gate, &scalar);
    criterion_5(&mut gate);
    criterion_6(&mut gate);
    criterion_7(&mut gate);
    criterion_8(&mut gate);
    criterion_9(&mut gate, suite_started);
    assert!(
        gate.failures.is_empty(),
        "failed criteria:\n{}",
        gate.failures.join("\n")
    );
}
