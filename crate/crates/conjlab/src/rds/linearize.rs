//! Linearization of randomly perturbed contractions: spectrum → adapted
//! norm → delegation to the conjugacy machinery with certificate (K = 1,
//! α = e^{λ₁+a}), plus the equivalence check between two-parameter
//! systems and cocycles over the shift.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conjugacy::{verify_conjugacy, ConjugacyReport, ConjugacySolution, VerifySpec};
use crate::error::{Error, Result};
use crate::hypotheses::{estimate_nonlinearity_bounds, GrowthCertificate, SamplingSpec};
use crate::norms::operator_norm;
use crate::omega::ShiftMds;
use crate::rds::adapted::adapted_random_norm;
use crate::rds::cocycle::{lyapunov_spectrum, Cocycle, SpectrumReport};
use crate::smooth::{smoothness_report, SmoothnessReport};
use crate::system::{general_solution, LinearPart, Nonlinearity, SemilinearSystem};
use crate::window::TimeWindow;

/// A two-parameter system recognized as a cocycle over the shift.
pub struct RdsHandle {
    pub sys: SemilinearSystem,
    pub mds: ShiftMds,
    /// worst residual of φ_ω(t,τ,x) = φ_{θ^τ ω}(t-τ,0,x) over samples
    pub equivalence_residual: f64,
}

/// Accept `sys` as an RDS: its generator must depend on (t, ω) only through
/// θ^t ω, and its solution must satisfy the shift-equivalence identity.
pub fn rds_from_system(
    sys: &SemilinearSystem,
    mds: &ShiftMds,
    n_checks: usize,
    seed: u64,
) -> Result<RdsHandle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = sys.dim();
    let w = sys.window;
    let tol = 1e-12;
    for _ in 0..n_checks {
        let omega = mds.sample(rng.gen_range(0..1_000_000));
        let t = rng.gen_range(w.t_min..w.t_max);
        let x = DVector::from_fn(d, |_, _| rng.gen_range(-5.0..5.0));
        // stationarity of the generator: step at time t from ω equals step
        // at time 0 from θ^t ω
        let one = sys.step(t, &omega, &x);
        let other = {
            let a = sys.linear.at(0, &omega.shifted(t));
            a * &x + sys.nonlinear.eval(0, &omega.shifted(t), &x)
        };
        let res = (&one - &other).norm();
        if res > tol {
            return Err(Error::NotShiftStationary {
                residual: res,
                t,
                x: format!("{:?}", x.as_slice()),
            });
        }
    }
    // solution-level equivalence over (t, τ, x) samples
    let mut worst: f64 = 0.0;
    for _ in 0..n_checks {
        let omega = mds.sample(rng.gen_range(0..1_000_000));
        let tau = rng.gen_range(w.t_min..=w.t_max);
        let t = rng.gen_range(tau..=w.t_max);
        let x = DVector::from_fn(d, |_, _| rng.gen_range(-5.0..5.0));
        let lhs = general_solution(sys, t, tau, &omega, &x)?;
        let rhs = general_solution(sys, t - tau, 0, &omega.shifted(tau), &x)?;
        worst = worst.max((lhs - rhs).norm());
    }
    if worst > tol {
        return Err(Error::NotShiftStationary {
            residual: worst,
            t: -1,
            x: "solution-level identity".into(),
        });
    }
    Ok(RdsHandle {
        sys: sys.clone(),
        mds: mds.clone(),
        equivalence_residual: worst,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RdsOptions {
    pub spectrum_steps: usize,
    pub spectrum_samples: usize,
    /// number of fibers the conjugacy is built and verified on
    pub verify_fibers: usize,
    pub tail_cap: f64,
    pub horizon_cap: usize,
    pub verify: VerifySpec,
    pub sampling: SamplingSpec,
    pub smooth: bool,
}

impl Default for RdsOptions {
    fn default() -> Self {
        RdsOptions {
            spectrum_steps: 10_000,
            spectrum_samples: 64,
            verify_fibers: 4,
            tail_cap: 1e-12,
            horizon_cap: 5_000,
            verify: VerifySpec::default(),
            sampling: SamplingSpec::default(),
            smooth: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RdsFiberReport {
    pub omega_id: u64,
    pub l: f64,
    pub m: f64,
    pub growth_residual: f64,
    pub near_identity_bound: f64,
    pub conjugacy: ConjugacyReport,
    pub smooth: Option<SmoothnessReport>,
}

pub struct RdsLinearization {
    pub spectrum: SpectrumReport,
    /// α = e^{λ₁+a}; the adapted-norm certificate is (K = 1, α)
    pub alpha: f64,
    pub fibers: Vec<RdsFiberReport>,
    pub solutions: Vec<ConjugacySolution>,
}

/// Build and verify the conjugacy between the cocycle Φ and its perturbation
/// by Ψ on sampled fibers.
pub fn rds_linearize(
    c: &Cocycle,
    psi: &Nonlinearity,
    mds: &ShiftMds,
    window: TimeWindow,
    opts: &RdsOptions,
) -> Result<RdsLinearization> {
    let spectrum = lyapunov_spectrum(c, mds, opts.spectrum_steps, opts.spectrum_samples)?;
    if !spectrum.negative {
        return Err(Error::HypothesisFailed {
            name: "negative Lyapunov spectrum".into(),
            detail: format!("lambdas = {:?}, gap = {}", spectrum.lambdas, spectrum.gap),
        });
    }
    let alpha = spectrum.adapted_alpha();
    let d = c.dim();

    let mut fibers = Vec::new();
    let mut solutions = Vec::new();
    for fiber in 0..opts.verify_fibers as u64 {
        let omega = mds.sample(fiber);
        let norm = adapted_random_norm(c, &spectrum, &omega, opts.tail_cap, opts.horizon_cap)?;
        let family = norm.family();
        let c2 = c.clone();
        let lin = LinearPart::new(d, move |t, om| c2.at_time(t, om));
        let sys = SemilinearSystem::new(lin, psi.clone(), family, window)?;

        // bounds of Ψ measured in the adapted norm
        let bounds = estimate_nonlinearity_bounds(
            &sys,
            &omega,
            &opts.sampling,
            if opts.smooth { 1 } else { 0 },
        )?;
        // Theorem hypotheses: L ≤ α, and the fixed-point condition
        // K L < 1 - α with K = 1
        if bounds.l > alpha {
            return Err(Error::HypothesisFailed {
                name: "L <= alpha".into(),
                detail: format!("L = {} > alpha = {alpha}", bounds.l),
            });
        }
        if bounds.l >= 1.0 - alpha {
            return Err(Error::HypothesisFailed {
                name: "KL < 1 - alpha".into(),
                detail: format!("L = {}, alpha = {alpha}", bounds.l),
            });
        }
        if opts.smooth && bounds.mj.get(1).copied().unwrap_or(f64::INFINITY) >= 1.0 - alpha {
            return Err(Error::HypothesisFailed {
                name: "M1 K < 1 - alpha".into(),
                detail: format!("M1 = {:?}, alpha = {alpha}", bounds.mj.get(1)),
            });
        }

        // spot-check the certificate ‖Φ(t,s)‖_{s,t,ω} ≤ α^{t-s}
        let mut rng = ChaCha8Rng::seed_from_u64(fiber ^ 0x9d5);
        let mut growth_residual: f64 = 0.0;
        for _ in 0..24 {
            let s = rng.gen_range(window.t_min..=window.t_max);
            let t = rng.gen_range(s..=window.t_max);
            let mut phi = DMatrix::identity(d, d);
            for r in s..t {
                phi = sys.linear.at(r, &omega) * phi;
            }
            let n = operator_norm(&phi, s, t, &omega, &sys.norms)?;
            growth_residual = growth_residual.max(n / alpha.powi((t - s) as i32) - 1.0);
        }
        if growth_residual > 1e-9 {
            return Err(Error::NoGrowthCertificate {
                rho: alpha * (1.0 + growth_residual),
            });
        }

        let growth = GrowthCertificate {
            k: 1.0,
            alpha,
            residual: growth_residual.max(0.0),
        };
        let m = bounds.m;
        let l = bounds.l;
        let sol = ConjugacySolution::build(sys, omega.clone(), growth, bounds)?;
        let conj = verify_conjugacy(&sol, &opts.verify)?;
        let smooth = if opts.smooth {
            Some(smoothness_report(&sol, 1, &opts.verify)?)
        } else {
            None
        };
        fibers.push(RdsFiberReport {
            omega_id: fiber,
            l,
            m,
            growth_residual,
            near_identity_bound: m / (1.0 - alpha),
            conjugacy: conj,
            smooth,
        });
        solutions.push(sol);
    }

    Ok(RdsLinearization {
        spectrum,
        alpha,
        fibers,
        solutions,
    })
}
