//! Construction of the conjugacy H and its inverse G by contraction
//! iteration on the substitution operator, plus residual verification of
//! every conclusion of the linearization theorem.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypotheses::{GrowthCertificate, NonlinearityBounds};
use crate::omega::Omega;
use crate::system::{evolution_operator, general_solution, SemilinearSystem};

/// A sequence over the window, bounded in the time-dependent norms.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundedSequence {
    t_min: i64,
    values: Vec<DVector<f64>>,
}

impl BoundedSequence {
    pub fn zeros(sys: &SemilinearSystem) -> Self {
        BoundedSequence {
            t_min: sys.window.t_min,
            values: vec![DVector::zeros(sys.dim()); sys.window.len()],
        }
    }

    pub fn from_fn(sys: &SemilinearSystem, f: impl Fn(i64) -> DVector<f64>) -> Self {
        BoundedSequence {
            t_min: sys.window.t_min,
            values: sys.window.iter().map(f).collect(),
        }
    }

    pub fn get(&self, t: i64) -> &DVector<f64> {
        &self.values[(t - self.t_min) as usize]
    }

    pub fn add(&self, other: &BoundedSequence) -> BoundedSequence {
        BoundedSequence {
            t_min: self.t_min,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// sup over t of ||values(t)||_{t,w}
    pub fn norm_omega(&self, sys: &SemilinearSystem, omega: &Omega) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| sys.norms.norm(self.t_min + i as i64, omega, v))
            .fold(0.0, f64::max)
    }

    fn sup_distance(&self, other: &BoundedSequence) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// t -> Phi_w(t, tau) xi over the whole window (backward part via A^{-1}).
pub fn lift_sequence(
    sys: &SemilinearSystem,
    omega: &Omega,
    xi: &DVector<f64>,
    tau: i64,
) -> Result<BoundedSequence> {
    sys.window.check(tau)?;
    let w = sys.window;
    let mut values = vec![DVector::zeros(sys.dim()); w.len()];
    let idx = |t: i64| (t - w.t_min) as usize;
    values[idx(tau)] = xi.clone();
    let mut x = xi.clone();
    for t in tau..w.t_max {
        x = sys.linear.at(t, omega) * x;
        values[idx(t + 1)] = x.clone();
    }
    let mut x = xi.clone();
    for t in (w.t_min..tau).rev() {
        x = sys.linear.inverse_at(t, omega)? * x;
        values[idx(t)] = x.clone();
    }
    Ok(BoundedSequence {
        t_min: w.t_min,
        values,
    })
}

/// The substitution operator F_w(phi)(t) = sum_{s=tau0}^{t-1} Phi(t,s+1) F(s, phi(s)),
/// evaluated in one forward sweep via out(t+1) = A(t) out(t) + F(t, phi(t)).
pub fn substitution_operator(
    sys: &SemilinearSystem,
    omega: &Omega,
    phi: &BoundedSequence,
) -> BoundedSequence {
    let w = sys.window;
    let mut values = vec![DVector::zeros(sys.dim()); w.len()];
    let mut acc = DVector::zeros(sys.dim());
    let idx = |t: i64| (t - w.t_min) as usize;
    // the sum is empty for t <= tau0
    for t in w.tau0..w.t_max {
        acc = sys.linear.at(t, omega) * acc + sys.nonlinear.eval(t, omega, phi.get(t));
        values[idx(t + 1)] = acc.clone();
    }
    BoundedSequence {
        t_min: w.t_min,
        values,
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub contraction_factor: f64,
    pub a_priori_error: f64,
    pub last_displacement: f64,
}

/// The computed conjugacy pair (H, G) with its constants and a cache of
/// fixed points phi* keyed by (tau, xi).
pub struct ConjugacySolution {
    pub sys: SemilinearSystem,
    pub omega: Omega,
    pub growth: GrowthCertificate,
    pub bounds: NonlinearityBounds,
    /// contraction factor q = K L / (1 - alpha)
    pub q: f64,
    cache: Mutex<HashMap<(i64, Vec<u64>), Arc<BoundedSequence>>>,
    pub last_solve: Mutex<SolveDiagnostics>,
}

impl ConjugacySolution {
    pub fn build(
        sys: SemilinearSystem,
        omega: Omega,
        growth: GrowthCertificate,
        bounds: NonlinearityBounds,
    ) -> Result<Self> {
        let q = growth.contraction_factor(bounds.l);
        if !(q < 1.0) {
            return Err(Error::HypothesisFailed {
                name: "KL < 1 - alpha".into(),
                detail: format!(
                    "contraction factor q = KL/(1-alpha) = {q} (K={}, L={}, alpha={})",
                    growth.k, bounds.l, growth.alpha
                ),
            });
        }
        Ok(ConjugacySolution {
            sys,
            omega,
            growth,
            bounds,
            q,
            cache: Mutex::new(HashMap::new()),
            last_solve: Mutex::new(SolveDiagnostics::default()),
        })
    }

    /// Near-identity bound K M / (1 - alpha) of the theorem.
    pub fn near_identity_bound(&self) -> f64 {
        self.growth.k * self.bounds.m / (1.0 - self.growth.alpha)
    }

    /// Unique fixed point of phi -> F_w(phi + L_{tau,w} xi), solved by
    /// contraction iteration and cached per (tau, xi).
    pub fn solve_phi_star(&self, xi: &DVector<f64>, tau: i64) -> Result<Arc<BoundedSequence>> {
        let key = (tau, xi.iter().map(|v| v.to_bits()).collect::<Vec<u64>>());
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let lift = lift_sequence(&self.sys, &self.omega, xi, tau)?;
        let mut phi = BoundedSequence::zeros(&self.sys);
        let tol = self.sys.solver.tol;
        let mut first_disp = None;
        let mut diag = SolveDiagnostics {
            contraction_factor: self.q,
            ..Default::default()
        };
        // the operator is triangular in time, so it converges in at most
        // window-length sweeps; with q < 1 it is much faster
        let max_sweeps = self.sys.window.len() + 8;
        for sweep in 1..=max_sweeps {
            let next = substitution_operator(&self.sys, &self.omega, &phi.add(&lift));
            let disp = next.sup_distance(&phi);
            phi = next;
            diag.iterations = sweep;
            diag.last_displacement = disp;
            let fd = *first_disp.get_or_insert(disp);
            diag.a_priori_error = if self.q < 1.0 {
                self.q.powi(sweep as i32) / (1.0 - self.q) * fd
            } else {
                f64::INFINITY
            };
            if disp <= tol {
                *self.last_solve.lock().unwrap() = diag;
                let out = Arc::new(phi);
                self.cache.lock().unwrap().insert(key, out.clone());
                return Ok(out);
            }
        }
        Err(Error::NonConvergence {
            q: self.q,
            residual: diag.last_displacement,
            iterations: diag.iterations,
        })
    }

    /// H_w(t, xi) = xi + phi*_{t,w}(xi)(t)
    pub fn forward(&self, t: i64, xi: &DVector<f64>) -> Result<DVector<f64>> {
        self.sys.window.check(t)?;
        let phi = self.solve_phi_star(xi, t)?;
        Ok(xi + phi.get(t))
    }

    /// G_w(t, eta) = eta - sum_{s=tau0}^{t-1} Phi(t,s+1) F(s, phi(s,t,eta)),
    /// with the orbit through (t, eta) solved backward step by step.
    pub fn inverse(&self, t: i64, eta: &DVector<f64>) -> Result<DVector<f64>> {
        self.sys.window.check(t)?;
        let w = self.sys.window;
        // backward orbit x_s for s = t down to tau0
        let n = (t - w.tau0) as usize;
        let mut orbit = vec![DVector::zeros(self.sys.dim()); n + 1];
        orbit[n] = eta.clone();
        for (k, s) in (w.tau0..t).rev().enumerate() {
            let x_next = orbit[n - k].clone();
            orbit[n - k - 1] = crate::system::invert_step(&self.sys, s, &self.omega, &x_next)?;
        }
        let mut acc = DVector::zeros(self.sys.dim());
        for (k, s) in (w.tau0..t).enumerate() {
            acc = self.sys.linear.at(s, &self.omega) * acc
                + self.sys.nonlinear.eval(s, &self.omega, &orbit[k]);
        }
        Ok(eta - acc)
    }

    /// Orbit of the semilinear system through (tau, xi), evaluated at t.
    pub fn orbit(&self, t: i64, tau: i64, xi: &DVector<f64>) -> Result<DVector<f64>> {
        general_solution(&self.sys, t, tau, &self.omega, xi)
    }
}

/// Sampling plan for `verify_conjugacy`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub seed: u64,
    pub n_samples: usize,
    pub radius: f64,
    /// Largest forward horizon t - s exercised per sample.
    pub max_horizon: i64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec {
            seed: 42,
            n_samples: 200,
            radius: 10.0,
            max_horizon: 30,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConjugacyReport {
    pub samples: usize,
    /// (a) max ||H(t, Phi(t,s) xi) - phi(t,s,H(s,xi))||
    pub conjugation_forward_max: f64,
    /// (b) max ||G(t, phi(t,s,eta)) - Phi(t,s) G(s,eta)||
    pub conjugation_inverse_max: f64,
    pub roundtrip_gh_max: f64,
    pub roundtrip_hg_max: f64,
    pub near_identity_h_max: f64,
    pub near_identity_g_max: f64,
    pub near_identity_bound: f64,
    pub lipschitz_h_ratio_max: f64,
    pub lipschitz_g_ratio_max: f64,
    pub lipschitz_g_formula: f64,
    /// L_H with the alpha^(tau0 - tau) ell(tau, w) factor kept (tau = tau0).
    pub lipschitz_h_formula_weighted: f64,
    /// L_H with that factor dropped, as in the boxed constant.
    pub lipschitz_h_formula_plain: f64,
    /// (e) violations of ||phi(t,s,eta) - phi(t,s,eta')|| <= K (alpha + KL)^(t-s) ||eta - eta'||
    pub growth_violations: usize,
    pub growth_worst_ratio: f64,
    pub translation_identity_max: f64,
    pub composition_tolerance: f64,
}

impl ConjugacyReport {
    pub fn composition_ok(&self) -> bool {
        self.conjugation_forward_max <= self.composition_tolerance
            && self.conjugation_inverse_max <= self.composition_tolerance
            && self.roundtrip_gh_max <= self.composition_tolerance
            && self.roundtrip_hg_max <= self.composition_tolerance
    }
}

/// Exercise all four conclusions of the linearization theorem on sampled
/// points and report worst-case residuals.
pub fn verify_conjugacy(sol: &ConjugacySolution, spec: &VerifySpec) -> Result<ConjugacyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let w = sol.sys.window;
    let d = sol.sys.dim();
    let omega = &sol.omega;
    // composition tolerance: two nested solves plus norm-equivalence inflation
    let comp_tol = 100.0 * sol.sys.solver.tol;

    let mut rep = ConjugacyReport {
        samples: spec.n_samples,
        conjugation_forward_max: 0.0,
        conjugation_inverse_max: 0.0,
        roundtrip_gh_max: 0.0,
        roundtrip_hg_max: 0.0,
        near_identity_h_max: 0.0,
        near_identity_g_max: 0.0,
        near_identity_bound: sol.near_identity_bound(),
        lipschitz_h_ratio_max: 0.0,
        lipschitz_g_ratio_max: 0.0,
        lipschitz_g_formula: 0.0,
        lipschitz_h_formula_weighted: 0.0,
        lipschitz_h_formula_plain: 0.0,
        growth_violations: 0,
        growth_worst_ratio: 0.0,
        translation_identity_max: 0.0,
        composition_tolerance: comp_tol,
    };

    let (k, alpha, l) = (sol.growth.k, sol.growth.alpha, sol.bounds.l);
    let kl = k * l;
    rep.lipschitz_g_formula = 1.0 + k * k * l / (1.0 - alpha);
    let ell_tau0 = sol.sys.norms.ell(w.tau0, omega);
    rep.lipschitz_h_formula_plain =
        1.0 + k * k * l / (1.0 - alpha) + k.powi(3) * l * l / ((1.0 - alpha) * (1.0 - kl));
    rep.lipschitz_h_formula_weighted = 1.0
        + k * k * l / (1.0 - alpha)
        + k.powi(3) * l * l * ell_tau0 / ((1.0 - alpha) * (1.0 - kl));

    let rand_point = |rng: &mut ChaCha8Rng| {
        DVector::from_fn(d, |_, _| rng.gen_range(-spec.radius..spec.radius))
    };

    for _ in 0..spec.n_samples {
        let s = rng.gen_range(w.tau0..=w.t_max);
        let horizon = spec.max_horizon.min(w.t_max - s);
        let t = s + if horizon > 0 { rng.gen_range(0..=horizon) } else { 0 };
        let xi = rand_point(&mut rng);
        let eta = rand_point(&mut rng);

        // (a) forward conjugation identity
        let phi_ts_xi = evolution_operator(&sol.sys, t, s, omega)? * &xi;
        let lhs = sol.forward(t, &phi_ts_xi)?;
        let rhs = sol.orbit(t, s, &sol.forward(s, &xi)?)?;
        rep.conjugation_forward_max = rep.conjugation_forward_max.max((lhs - rhs).norm());

        // (b) inverse conjugation identity
        let orbit_t = sol.orbit(t, s, &eta)?;
        let lhs = sol.inverse(t, &orbit_t)?;
        let rhs = evolution_operator(&sol.sys, t, s, omega)? * sol.inverse(s, &eta)?;
        rep.conjugation_inverse_max = rep.conjugation_inverse_max.max((lhs - rhs).norm());

        // (c) round trips
        let h = sol.forward(t, &xi)?;
        let back = sol.inverse(t, &h)?;
        rep.roundtrip_gh_max = rep.roundtrip_gh_max.max((back - &xi).norm());
        let g = sol.inverse(t, &eta)?;
        let forth = sol.forward(t, &g)?;
        rep.roundtrip_hg_max = rep.roundtrip_hg_max.max((forth - &eta).norm());

        // (iii) near identity in the (t+1, w)-norm
        let h_dev = sol.sys.norms.norm(
            (t + 1).min(w.t_max),
            omega,
            &(sol.forward(t, &xi)? - &xi),
        );
        rep.near_identity_h_max = rep.near_identity_h_max.max(h_dev);
        let g_dev = sol.sys.norms.norm(
            (t + 1).min(w.t_max),
            omega,
            &(sol.inverse(t, &eta)? - &eta),
        );
        rep.near_identity_g_max = rep.near_identity_g_max.max(g_dev);

        // (d) empirical Lipschitz ratios
        let xi2 = rand_point(&mut rng);
        let dh = sol.sys.norms.norm(
            (t + 1).min(w.t_max),
            omega,
            &(sol.forward(t, &xi)? - sol.forward(t, &xi2)?),
        );
        let dx = (&xi - &xi2).norm();
        if dx > 0.0 {
            rep.lipschitz_h_ratio_max = rep.lipschitz_h_ratio_max.max(dh / dx);
        }
        let eta2 = rand_point(&mut rng);
        let dg = sol.sys.norms.norm(
            (t + 1).min(w.t_max),
            omega,
            &(sol.inverse(t, &eta)? - sol.inverse(t, &eta2)?),
        );
        let de = (&eta - &eta2).norm();
        if de > 0.0 {
            rep.lipschitz_g_ratio_max = rep.lipschitz_g_ratio_max.max(dg / de);
        }

        // (e) growth of solution differences against the Gronwall-type bound
        let eta_bar = &eta + rand_point(&mut rng) * 0.1;
        let diff_t = (sol.orbit(t, s, &eta)? - sol.orbit(t, s, &eta_bar)?).norm();
        let denom = (&eta - &eta_bar).norm();
        if denom > 0.0 {
            let bound = k * (alpha + kl).powi((t - s) as i32) * denom;
            let ratio = diff_t / bound;
            rep.growth_worst_ratio = rep.growth_worst_ratio.max(ratio);
            if diff_t > bound * (1.0 + 1e-9) {
                rep.growth_violations += 1;
            }
        }

        // translation identity of phi*
        let r = rng.gen_range(w.t_min..=w.t_max);
        let tau = rng.gen_range(w.t_min..=w.t_max);
        let phi_r_tau_xi = evolution_operator(&sol.sys, r, tau, omega)? * &xi;
        let a = sol.solve_phi_star(&xi, tau)?;
        let b = sol.solve_phi_star(&phi_r_tau_xi, r)?;
        let t_probe = rng.gen_range(w.t_min..=w.t_max);
        rep.translation_identity_max = rep
            .translation_identity_max
            .max((a.get(t_probe) - b.get(t_probe)).norm());
    }
    Ok(rep)
}
