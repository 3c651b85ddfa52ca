//! The Lyapunov-exponent-weighted random norm: per-component truncated
//! series weights, resulting SPD quadratic forms per fiber, and the
//! exponential sandwich check.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norms::NormFamily;
use crate::omega::Omega;
use crate::rds::cocycle::{splitting_bases, Cocycle, SpectrumReport};

/// Adapted norm along the orbit of one base fiber ω: |u|_{θ^t ω} is the SPD
/// form Σ_i |P_i u|²_i with per-component weights
/// Σ_{s≤T} e^{-2(λ_i+a)s} ‖Φ(s,θ^t ω)u‖², with Oseledets bases pushed
/// forward from the base fiber so the exponential sandwich is exact up to
/// truncation.
pub struct RandomNorm {
    c: Cocycle,
    pub rep: SpectrumReport,
    base: Omega,
    /// relative tail target: accumulation stops once a term falls below
    /// tail_cap times the running sum
    pub tail_cap: f64,
    /// hard cap on the truncation horizon
    pub t_cap: usize,
    /// largest horizon actually used
    used_horizon: Mutex<usize>,
    bases_cache: Mutex<HashMap<i64, Arc<Vec<DMatrix<f64>>>>>,
    weight_cache: Mutex<HashMap<i64, Arc<DMatrix<f64>>>>,
    /// empirical bounds ‖u‖ ≤ |u|_ω ≤ B_ε ‖u‖ over sampled (t, u)
    pub b_eps: f64,
    pub b_eps_lower: f64,
}

/// Build the adapted norm for one sampled fiber. Requires every λ_i + a < 0.
pub fn adapted_random_norm(
    c: &Cocycle,
    rep: &SpectrumReport,
    omega: &Omega,
    tail_cap: f64,
    t_cap: usize,
) -> Result<Arc<RandomNorm>> {
    if !rep.negative {
        return Err(Error::HypothesisFailed {
            name: "negative Lyapunov spectrum".into(),
            detail: format!("lambdas = {:?}, gap = {}", rep.lambdas, rep.gap),
        });
    }
    let norm = Arc::new(RandomNorm {
        c: c.clone(),
        rep: rep.clone(),
        base: omega.clone(),
        tail_cap,
        t_cap,
        used_horizon: Mutex::new(0),
        bases_cache: Mutex::new(HashMap::new()),
        weight_cache: Mutex::new(HashMap::new()),
        b_eps: 0.0,
        b_eps_lower: f64::INFINITY,
    });
    // probe a few fibers and directions for the equivalence constants
    let mut rng = ChaCha8Rng::seed_from_u64(0xada9);
    let d = c.dim();
    let mut hi: f64 = 0.0;
    let mut lo = f64::INFINITY;
    for t in 0..8i64 {
        let w = norm.weight(t)?;
        for _ in 0..16 {
            let u = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            let nu = u.norm();
            if nu == 0.0 {
                continue;
            }
            let r = (u.dot(&(&*w * &u))).sqrt() / nu;
            hi = hi.max(r);
            lo = lo.min(r);
        }
    }
    let mut norm = Arc::try_unwrap(norm).ok().expect("sole owner");
    norm.b_eps = hi;
    norm.b_eps_lower = lo;
    Ok(Arc::new(norm))
}

fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.clone().qr();
    let q = qr.q();
    q.columns(0, m.ncols()).into_owned()
}

impl RandomNorm {
    pub fn dim(&self) -> usize {
        self.c.dim()
    }

    pub fn base(&self) -> &Omega {
        &self.base
    }

    pub fn used_horizon(&self) -> usize {
        *self.used_horizon.lock().unwrap()
    }

    /// Oseledets bases at θ^t ω, pushed forward (or pulled back) from the
    /// base fiber so that U_i(θ^t ω) = Φ(t,ω) U_i(ω) exactly.
    pub fn bases(&self, t: i64) -> Result<Arc<Vec<DMatrix<f64>>>> {
        if let Some(hit) = self.bases_cache.lock().unwrap().get(&t) {
            return Ok(hit.clone());
        }
        let out: Arc<Vec<DMatrix<f64>>> = if t == 0 {
            Arc::new(splitting_bases(&self.c, &self.rep, &self.base)?)
        } else if t > 0 {
            let prev = self.bases(t - 1)?;
            let a = self.c.at_time(t - 1, &self.base);
            Arc::new(prev.iter().map(|b| orthonormalize(&(&a * b))).collect())
        } else {
            let next = self.bases(t + 1)?;
            let a = self
                .c
                .at_time(t, &self.base)
                .try_inverse()
                .ok_or(Error::SingularStep { t })?;
            Arc::new(next.iter().map(|b| orthonormalize(&(&a * b))).collect())
        };
        self.bases_cache.lock().unwrap().insert(t, out.clone());
        Ok(out)
    }

    /// The SPD weight matrix of |·|_{θ^t ω}.
    pub fn weight(&self, t: i64) -> Result<Arc<DMatrix<f64>>> {
        if let Some(hit) = self.weight_cache.lock().unwrap().get(&t) {
            return Ok(hit.clone());
        }
        let d = self.c.dim();
        let bases = self.bases(t)?;
        // oblique projections P_i onto U_i along the other components
        let mut b = DMatrix::zeros(d, d);
        let mut col = 0;
        for basis in bases.iter() {
            for j in 0..basis.ncols() {
                b.set_column(col, &basis.column(j).into_owned());
                col += 1;
            }
        }
        let b_inv = b.clone().try_inverse().ok_or(Error::NotSpd { t })?;
        // coordinate maps K_i: u ↦ component-i coordinates, so P_i = U_i K_i
        let mut coords = Vec::with_capacity(bases.len());
        let mut at = 0;
        for basis in bases.iter() {
            let m = basis.ncols();
            coords.push(b_inv.rows(at, m).into_owned());
            at += m;
        }

        // truncated series Σ_s e^{-2(λ_i+a)s} ‖Φ(s)P_i u‖², accumulated
        // with the projection folded in: propagate y_i(s) = Φ(s)U_i per
        // component so each term decays like e^{-2as} instead of mixing
        // in the slower components' growth
        let mut g: Vec<DMatrix<f64>> = coords
            .iter()
            .map(|k| DMatrix::zeros(k.nrows(), k.nrows()))
            .collect();
        let mut ys: Vec<DMatrix<f64>> = bases.iter().map(|u| u.clone()).collect();
        let mut sums = vec![0.0f64; bases.len()];
        let mut s = 0usize;
        loop {
            let mut all_small = s > 0;
            for i in 0..bases.len() {
                let wfac = (-2.0 * (self.rep.lambdas[i] + self.rep.gap) * s as f64).exp();
                let term = (ys[i].transpose() * &ys[i]) * wfac;
                let tn = term.norm();
                g[i] += term;
                sums[i] += tn;
                if tn > self.tail_cap * sums[i] {
                    all_small = false;
                }
            }
            if all_small {
                break;
            }
            if s >= self.t_cap {
                return Err(Error::TailBound {
                    tail: self.tail_cap,
                    cap: self.t_cap,
                });
            }
            let a = self.c.at_time(t + s as i64, &self.base);
            for y in ys.iter_mut() {
                *y = &a * &*y;
            }
            s += 1;
        }
        let mut used = self.used_horizon.lock().unwrap();
        *used = (*used).max(s);
        drop(used);

        let mut w = DMatrix::zeros(d, d);
        for (gi, k) in g.iter().zip(&coords) {
            w += k.transpose() * gi * k;
        }
        // symmetrize against roundoff
        let w = Arc::new((&w + w.transpose()) * 0.5);
        self.weight_cache.lock().unwrap().insert(t, w.clone());
        Ok(w)
    }

    pub fn eval(&self, t: i64, u: &DVector<f64>) -> Result<f64> {
        let w = self.weight(t)?;
        Ok(u.dot(&(&*w * u)).sqrt())
    }

    /// Wrap as a time-indexed norm family pinned to the base fiber: the
    /// ω argument of the closures is ignored, t selects θ^t ω.
    pub fn family(self: &Arc<Self>) -> NormFamily {
        let d = self.dim();
        let me = self.clone();
        let me2 = self.clone();
        NormFamily::new(
            d,
            move |t, _| {
                me.weight(t)
                    .map(|w| (*w).clone())
                    .unwrap_or_else(|_| DMatrix::identity(d, d))
            },
            move |_, _| me2.b_eps.max(1.0),
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SandwichReport {
    pub t_max: i64,
    pub samples: usize,
    /// worst relative overshoot of |Φ(t,ω)u| / (e^{(λ_i+a)t} |u|) above 1
    pub worst_upper_slack: f64,
    /// worst relative undershoot below e^{(λ_i-a)t} |u|
    pub worst_lower_slack: f64,
}

/// Check e^{(λ_i-a)t} |u|_ω ≤ |Φ(t,ω)u|_{θ^t ω} ≤ e^{(λ_i+a)t} |u|_ω on
/// the component basis directions and random combinations within them.
pub fn check_sandwich(
    norm: &RandomNorm,
    t_max: i64,
    n_dirs: usize,
    seed: u64,
) -> Result<SandwichReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases0 = norm.bases(0)?;
    let mut upper: f64 = 0.0;
    let mut lower: f64 = 0.0;
    let mut samples = 0;
    for (i, basis) in bases0.iter().enumerate() {
        let li = norm.rep.lambdas[i];
        let a = norm.rep.gap;
        let m = basis.ncols();
        for dir in 0..n_dirs.max(m) {
            let u: DVector<f64> = if dir < m {
                basis.column(dir).into_owned()
            } else {
                let coef = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
                basis * coef
            };
            if u.norm() == 0.0 {
                continue;
            }
            let u0 = norm.eval(0, &u)?;
            let mut phi_u = u.clone();
            for t in 1..=t_max {
                phi_u = norm.c.at_time(t - 1, norm.base()) * phi_u;
                let nt = norm.eval(t, &phi_u)?;
                let up = (li + a) * t as f64;
                let dn = (li - a) * t as f64;
                upper = upper.max(nt / (up.exp() * u0) - 1.0);
                lower = lower.max(1.0 - nt / (dn.exp() * u0));
                samples += 1;
            }
        }
    }
    Ok(SandwichReport {
        t_max,
        samples,
        worst_upper_slack: upper,
        worst_lower_slack: lower,
    })
}
