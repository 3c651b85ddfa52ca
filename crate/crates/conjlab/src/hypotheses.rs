//! Certification of the standing constants (K, alpha, L, M, M_j), the
//! theorems' smallness conditions, and the discrete Gronwall utility.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norms::operator_norm;
use crate::omega::Omega;
use crate::system::SemilinearSystem;

/// Bounded-growth certificate: ||Phi(t,s)||_{s,t,w} <= K alpha^(t-s) on the
/// sampled window.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthCertificate {
    pub k: f64,
    pub alpha: f64,
    /// Worst-case slack K alpha^(t-s) - ||Phi(t,s)|| over all window pairs
    /// (zero at the binding pair by construction).
    pub residual: f64,
}

impl GrowthCertificate {
    pub fn contraction_factor(&self, lipschitz: f64) -> f64 {
        self.k * lipschitz / (1.0 - self.alpha)
    }
}

/// Sampled bounds of the nonlinearity: sup bound M, Lipschitz L and
/// derivative bounds M_j for j = 0..m.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NonlinearityBounds {
    pub m: f64,
    pub l: f64,
    pub mj: Vec<f64>,
    pub sampling: SamplingSpec,
}

/// Sampling specification carried in every report so failures at finer
/// sampling are reproducible.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSpec {
    pub seed: u64,
    pub count: usize,
    pub radius: f64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            seed: 42,
            count: 10_000,
            radius: 10.0,
        }
    }
}

impl SamplingSpec {
    pub fn ball_points(&self, dim: usize) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.count)
            .map(|_| {
                let v = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
                let scale = self.radius * rng.gen::<f64>().powf(1.0 / dim as f64);
                let n = v.norm();
                if n == 0.0 {
                    v
                } else {
                    v * (scale / n)
                }
            })
            .collect()
    }
}

/// Certify (H1) on the window: fit alpha by log-linear regression of the
/// per-gap maxima of ||Phi(s+n, s)||, then take K as the max ratio.
pub fn certify_bounded_growth(sys: &SemilinearSystem, omega: &Omega) -> Result<GrowthCertificate> {
    let w = sys.window;
    let n_gaps = (w.t_max - w.t_min) as usize;
    if n_gaps == 0 {
        return Ok(GrowthCertificate {
            k: 1.0,
            alpha: 0.5,
            residual: 0.0,
        });
    }
    // op_norms[s - t_min][n] = ||Phi(s+n, s)||_{s, s+n, w}, products built incrementally
    let d = sys.dim();
    let mut norms_by_gap: Vec<Vec<f64>> = vec![Vec::new(); n_gaps + 1];
    for s in w.t_min..w.t_max {
        let mut phi = nalgebra::DMatrix::<f64>::identity(d, d);
        for t in s + 1..=w.t_max {
            phi = sys.linear.at(t - 1, omega) * phi;
            let n = operator_norm(&phi, s, t, omega, &sys.norms)?;
            if !n.is_finite() {
                return Err(Error::NonFinite {
                    context: "certify_bounded_growth".into(),
                    sample: format!("s={s}, t={t}"),
                });
            }
            norms_by_gap[(t - s) as usize].push(n);
        }
    }
    let g: Vec<f64> = norms_by_gap[1..]
        .iter()
        .map(|v| v.iter().cloned().fold(0.0f64, f64::max))
        .collect();
    // least-squares fit of ln g(n) = ln K + n ln alpha, n = 1..N
    let n_pts = g.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (idx, gn) in g.iter().enumerate() {
        let x = (idx + 1) as f64;
        let y = gn.max(f64::MIN_POSITIVE).ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let slope = (n_pts * sxy - sx * sy) / (n_pts * sxx - sx * sx);
    let alpha = slope.exp();
    if !(alpha.is_finite() && alpha < 1.0) {
        return Err(Error::NoGrowthCertificate { rho: alpha });
    }
    // K = max over pairs of ||Phi(t,s)|| / alpha^(t-s); the gap-0 norm is 1
    let mut k: f64 = 1.0;
    for (gap, v) in norms_by_gap.iter().enumerate().skip(1) {
        let decay = alpha.powi(gap as i32);
        for n in v {
            k = k.max(n / decay);
        }
    }
    // pointwise re-check and worst-case slack
    let mut residual = f64::INFINITY;
    for (gap, v) in norms_by_gap.iter().enumerate().skip(1) {
        let bound = k * alpha.powi(gap as i32);
        for n in v {
            residual = residual.min(bound - n);
        }
    }
    if residual < -1e-12 {
        return Err(Error::NoGrowthCertificate { rho: alpha });
    }
    Ok(GrowthCertificate {
        k,
        alpha,
        residual: residual.max(0.0),
    })
}

/// Largest ||A(t)^{-1}||_{t+1,t,w} over the window; feeds the invertibility
/// condition of the backward solver.
pub fn sup_inverse_norm(sys: &SemilinearSystem, omega: &Omega) -> Result<f64> {
    let mut sup: f64 = 0.0;
    for t in sys.window.t_min..sys.window.t_max {
        let inv = sys.linear.inverse_at(t, omega)?;
        sup = sup.max(operator_norm(&inv, t + 1, t, omega, &sys.norms)?);
    }
    Ok(sup)
}

/// Estimate (H2^0)/(H2^m) bounds on a sampled domain. The Lipschitz constant
/// uses difference quotients inflated by a 1.05 safety factor.
pub fn estimate_nonlinearity_bounds(
    sys: &SemilinearSystem,
    omega: &Omega,
    domain: &SamplingSpec,
    m: usize,
) -> Result<NonlinearityBounds> {
    let d = sys.dim();
    let pts = domain.ball_points(d);
    let w = sys.window;
    let times: Vec<i64> = sample_times(&w, 16);
    let mut sup_m: f64 = 0.0;
    for t in &times {
        for x in &pts {
            let fx = sys.nonlinear.eval(*t, omega, x);
            if fx.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "estimate_nonlinearity_bounds".into(),
                    sample: format!("t={t}, x={x:?}"),
                });
            }
            sup_m = sup_m.max(sys.norms.norm(t + 1, omega, &fx));
        }
    }
    // Lipschitz: difference quotients over paired samples, >= 10^4 pairs
    let mut rng = ChaCha8Rng::seed_from_u64(domain.seed ^ 0x5eed);
    let n_pairs = domain.count.max(10_000);
    let mut lip: f64 = 0.0;
    for _ in 0..n_pairs {
        let t = times[rng.gen_range(0..times.len())];
        let x = &pts[rng.gen_range(0..pts.len())];
        let mut y = x.clone();
        let scale = 10f64.powf(rng.gen_range(-6.0..0.0)) * domain.radius;
        for j in 0..d {
            y[j] += rng.gen_range(-1.0..1.0) * scale;
        }
        // keep the partner inside the sampled domain
        let r = y.norm();
        if r > domain.radius {
            y *= domain.radius / r;
        }
        let denom = sys.norms.norm(t, omega, &(x - &y));
        if denom == 0.0 {
            continue;
        }
        let num = sys
            .norms
            .norm(t + 1, omega, &(sys.nonlinear.eval(t, omega, x) - sys.nonlinear.eval(t, omega, &y)));
        lip = lip.max(num / denom);
    }
    lip *= 1.05;

    // derivative bounds M_j, j = 0..m
    let mut mj = vec![sup_m];
    if m >= 1 {
        let mut m1: f64 = 0.0;
        for t in &times {
            for x in pts.iter().take(200) {
                let jac = sys.nonlinear.jacobian(*t, omega, x);
                m1 = m1.max(operator_norm(&jac, *t, *t + 1, omega, &sys.norms)?);
            }
        }
        mj.push(m1);
    }
    for j in 2..=m {
        mj.push(directional_derivative_bound(sys, omega, &times, &pts, j, &mut rng));
    }
    Ok(NonlinearityBounds {
        m: sup_m,
        l: lip,
        mj,
        sampling: domain.clone(),
    })
}

fn sample_times(w: &crate::window::TimeWindow, max_count: usize) -> Vec<i64> {
    let len = w.len() as i64;
    let stride = ((len + max_count as i64 - 1) / max_count as i64).max(1);
    (w.t_min..=w.t_max).step_by(stride as usize).collect()
}

/// j-th order directional derivative magnitude by central differences along
/// random unit directions; a conservative stand-in for the multilinear norm.
fn directional_derivative_bound(
    sys: &SemilinearSystem,
    omega: &Omega,
    times: &[i64],
    pts: &[DVector<f64>],
    order: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let d = sys.dim();
    let step = match order {
        2 => 1e-4,
        _ => 1e-3,
    };
    let mut bound: f64 = 0.0;
    for t in times.iter().take(8) {
        for x in pts.iter().take(64) {
            let mut dir = DVector::from_fn(d, |_, _| rng.gen_range(-1.0f64..1.0));
            let n = dir.norm();
            if n == 0.0 {
                continue;
            }
            dir /= n;
            let h = step * x.norm().max(1.0);
            let eval = |c: f64| sys.nonlinear.eval(*t, omega, &(x + &dir * (c * h)));
            let deriv = match order {
                2 => (eval(1.0) - eval(0.0) * 2.0 + eval(-1.0)) / (h * h),
                3 => (eval(2.0) - eval(1.0) * 2.0 + eval(-1.0) * 2.0 - eval(-2.0)) / (2.0 * h * h * h),
                _ => continue,
            };
            bound = bound.max(sys.norms.norm(t + 1, omega, &deriv));
        }
    }
    bound
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    pub margin: f64,
}

impl Condition {
    fn strict(name: &str, lhs: f64, rhs: f64) -> Self {
        Condition {
            name: name.to_string(),
            lhs,
            rhs,
            pass: lhs < rhs,
            margin: rhs - lhs,
        }
    }
}

/// Smallness conditions of the linearization theorems. Failures are
/// reported, not thrown.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionReport {
    /// K L < 1 - alpha
    pub topological: Condition,
    /// M_1 K < 1 - alpha
    pub smooth: Option<Condition>,
    /// L sup_t ||A(t)^{-1}|| < 1
    pub invertibility: Condition,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.topological.pass
            && self.invertibility.pass
            && self.smooth.as_ref().map_or(true, |c| c.pass)
    }
}

pub fn check_conditions(
    growth: &GrowthCertificate,
    bounds: &NonlinearityBounds,
    a_inv_sup: f64,
) -> ConditionReport {
    ConditionReport {
        topological: Condition::strict("KL < 1 - alpha", growth.k * bounds.l, 1.0 - growth.alpha),
        smooth: bounds
            .mj
            .get(1)
            .map(|m1| Condition::strict("M1 K < 1 - alpha", m1 * growth.k, 1.0 - growth.alpha)),
        invertibility: Condition::strict("L sup ||A^-1|| < 1", bounds.l * a_inv_sup, 1.0),
    }
}

/// Right-hand side of the discrete Gronwall lemma:
/// bound(k) = (1+b)^(k-kappa) c(kappa) + sum_{i=kappa+1}^{k} (1+b)^(k-i) (c(i) - c(i-1)).
///
/// `c` is indexed from kappa; the returned vector is aligned with it.
pub fn gronwall_bound(c: &[f64], b: f64) -> Result<Vec<f64>> {
    if b < 0.0 {
        return Err(Error::InvalidConfig(format!("gronwall: negative b = {b}")));
    }
    let mut out = Vec::with_capacity(c.len());
    for k in 0..c.len() {
        let mut bound = (1.0 + b).powi(k as i32) * c[0];
        for i in 1..=k {
            bound += (1.0 + b).powi((k - i) as i32) * (c[i] - c[i - 1]);
        }
        out.push(bound);
    }
    Ok(out)
}

/// Check that `a` satisfies the Gronwall premise a(k) <= c(k) + b sum a(i),
/// and when it does, that the lemma's bound dominates it.
pub fn gronwall_check(a: &[f64], c: &[f64], b: f64) -> Result<bool> {
    let bound = gronwall_bound(c, b)?;
    let mut partial = 0.0;
    for k in 0..a.len().min(c.len()) {
        let premise = a[k] <= c[k] + b * partial + 1e-12 * c[k].abs().max(1.0);
        if premise && a[k] > bound[k] * (1.0 + 1e-12) + 1e-12 {
            return Ok(false);
        }
        partial += a[k];
    }
    Ok(true)
}
