//! Derivative machinery: variational Jacobians of the solution, the explicit
//! derivative of the inverse conjugacy G, invertibility margins, and
//! finite-difference cross-checks up to third order.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conjugacy::{ConjugacySolution, VerifySpec};
use crate::error::{Error, Result};
use crate::norms::operator_norm;
use crate::omega::Omega;
use crate::system::{invert_step, SemilinearSystem};

/// Derivative at time t of the orbit through (s, eta) with respect to eta,
/// propagated forward along the orbit: J_{r+1} = (A(r) + D2F(r, x_r)) J_r,
/// J_s = I. Requires t >= s.
pub fn variational_jacobian(
    sys: &SemilinearSystem,
    s: i64,
    t: i64,
    omega: &Omega,
    eta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    sys.window.check(s)?;
    sys.window.check(t)?;
    if t < s {
        return Err(Error::InvalidConfig(format!(
            "variational_jacobian needs t >= s, got s={s}, t={t}"
        )));
    }
    let d = sys.dim();
    let mut j = DMatrix::identity(d, d);
    let mut x = eta.clone();
    for r in s..t {
        let coeff = sys.linear.at(r, omega) + sys.nonlinear.jacobian(r, omega, &x);
        j = &coeff * j;
        x = sys.step(r, omega, &x);
    }
    Ok(j)
}

/// D2G(t, eta) = I - sum_{s=tau0}^{t-1} Phi(t,s+1) D2F(s, x_s) B_s, where
/// x_s is the backward orbit through (t, eta) and B_s its derivative,
/// B_s = (A(s) + D2F(s, x_s))^{-1} B_{s+1}, B_t = I.
pub fn conjugacy_jacobian(
    sol: &ConjugacySolution,
    t: i64,
    eta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let sys = &sol.sys;
    sys.window.check(t)?;
    let omega = &sol.omega;
    let d = sys.dim();
    let w = sys.window;
    let n = (t - w.tau0) as usize;
    let mut orbit = vec![DVector::zeros(d); n + 1];
    orbit[n] = eta.clone();
    for (k, s) in (w.tau0..t).rev().enumerate() {
        let x_next = orbit[n - k].clone();
        orbit[n - k - 1] = invert_step(sys, s, omega, &x_next)?;
    }
    // backward Jacobians B_s, s = t down to tau0
    let mut b = vec![DMatrix::identity(d, d); n + 1];
    for (k, s) in (w.tau0..t).rev().enumerate() {
        let coeff = sys.linear.at(s, omega) + sys.nonlinear.jacobian(s, omega, &orbit[n - k - 1]);
        let lu = coeff.lu();
        b[n - k - 1] = lu
            .solve(&b[n - k])
            .ok_or(Error::SingularStep { t: s })?;
    }
    // forward sweep: acc(t) = sum_s Phi(t,s+1) D2F(s, x_s) B_s
    let mut acc = DMatrix::zeros(d, d);
    for (k, s) in (w.tau0..t).enumerate() {
        acc = sys.linear.at(s, omega) * acc
            + sys.nonlinear.jacobian(s, omega, &orbit[k]) * &b[k];
    }
    Ok(DMatrix::identity(d, d) - acc)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrderReport {
    pub order: usize,
    pub fd_step: f64,
    /// worst relative disagreement between FD estimates at steps h and h/2
    pub fd_agreement: f64,
    /// |D(h)-D(h/2)| / |D(h/2)-D(h/4)|: near 4 for a second-order scheme
    pub richardson_ratio: f64,
    /// empirical modulus sup |D_j(x)-D_j(y)| / |x-y| over nearby pairs
    pub continuity_modulus: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub smooth_condition_lhs: f64,
    pub smooth_condition_rhs: f64,
    pub smooth_condition_pass: bool,
    pub orders: Vec<OrderReport>,
    /// worst relative error of the explicit D2G against central FD of G
    pub d2g_fd_max_rel_err: f64,
    /// max ||D2G - I|| over samples, against K M1 / (1 - alpha)
    pub deviation_max: f64,
    pub deviation_bound: f64,
    /// 1 - deviation_max: the Neumann-series invertibility margin
    pub invertibility_margin: f64,
    pub variational_violations: usize,
    pub variational_worst_ratio: f64,
    pub chain_rule_max: f64,
    pub consistent: bool,
    pub failures: Vec<String>,
}

fn fd_jacobian_of(
    f: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    x: &DVector<f64>,
    step: f64,
) -> Result<DMatrix<f64>> {
    let d = x.len();
    let probe = f(x)?;
    let mut out = DMatrix::zeros(probe.len(), d);
    for j in 0..d {
        let h = step * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp)? - f(&xm)?) / (2.0 * h);
        out.set_column(j, &col);
    }
    Ok(out)
}

/// Central FD estimate of the j-th directional derivative of f along v.
fn directional_fd(
    f: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    x: &DVector<f64>,
    v: &DVector<f64>,
    order: usize,
    h: f64,
) -> Result<DVector<f64>> {
    let at = |c: f64| f(&(x + v * (c * h)));
    match order {
        1 => Ok((at(1.0)? - at(-1.0)?) / (2.0 * h)),
        2 => Ok((at(1.0)? - at(0.0)? * 2.0 + at(-1.0)?) / (h * h)),
        3 => Ok((at(2.0)? - at(1.0)? * 2.0 + at(-1.0)? * 2.0 - at(-2.0)?) / (2.0 * h * h * h)),
        _ => Err(Error::InvalidConfig(format!(
            "FD smoothness checks support orders 1..=3, got {order}"
        ))),
    }
}

/// Per-order finite-difference consistency of G, the deviation and
/// variational bounds, and the chain-rule identity, sampled per `spec`.
pub fn smoothness_report(
    sol: &ConjugacySolution,
    m: usize,
    spec: &VerifySpec,
) -> Result<SmoothnessReport> {
    let sys = &sol.sys;
    let omega = &sol.omega;
    let w = sys.window;
    let d = sys.dim();
    let (k, alpha) = (sol.growth.k, sol.growth.alpha);
    let m1 = sol.bounds.mj.get(1).copied().unwrap_or(sol.bounds.l);
    let lhs = m1 * k;
    let rhs = 1.0 - alpha;
    let mut failures = Vec::new();
    if lhs >= rhs {
        failures.push(format!("smooth condition M1*K < 1-alpha fails: {lhs} >= {rhs}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5300c9);
    let rand_point = |rng: &mut ChaCha8Rng| {
        DVector::from_fn(d, |_, _| rng.gen_range(-spec.radius..spec.radius))
    };
    let deviation_bound = k * m1 / (1.0 - alpha);

    let mut d2g_err: f64 = 0.0;
    let mut dev_max: f64 = 0.0;
    let mut var_violations = 0usize;
    let mut var_worst: f64 = 0.0;
    let mut chain_max: f64 = 0.0;
    let steps = [1e-5, 1e-4, 1e-3];
    let mut orders: Vec<OrderReport> = (1..=m.min(3))
        .map(|j| OrderReport {
            order: j,
            fd_step: steps[j - 1],
            fd_agreement: 0.0,
            richardson_ratio: 0.0,
            continuity_modulus: 0.0,
        })
        .collect();

    let mut richardson_sum = vec![0.0f64; orders.len()];
    let mut richardson_n = vec![0usize; orders.len()];

    for i in 0..spec.n_samples {
        // the curvature of G grows exponentially in t - tau0 (the backward
        // orbit expands), so FD cross-checks only make sense at capped
        // horizons; max_horizon caps t - tau0 here
        let cap = spec.max_horizon.min(w.t_max - w.tau0).max(0);
        let t = w.tau0 + if cap > 0 { rng.gen_range(0..=cap) } else { 0 };
        let s = rng.gen_range(w.tau0..=t);
        let eta = rand_point(&mut rng);

        // explicit D2G against central FD of G
        let d2g = conjugacy_jacobian(sol, t, &eta)?;
        let g_at = |x: &DVector<f64>| sol.inverse(t, x);
        let fd = fd_jacobian_of(&g_at, &eta, 1e-6)?;
        let rel = (&d2g - &fd).norm() / d2g.norm().max(1e-300);
        d2g_err = d2g_err.max(rel);

        // deviation from identity, in the (t, w) operator norm
        let dev = operator_norm(
            &(&d2g - DMatrix::identity(d, d)),
            t,
            t,
            omega,
            &sys.norms,
        )?;
        dev_max = dev_max.max(dev);

        // variational norm bound K (alpha + K M1)^(t-s)
        let jv = variational_jacobian(sys, s, t, omega, &eta)?;
        let nv = operator_norm(&jv, s, t, omega, &sys.norms)?;
        let bound = k * (alpha + k * m1).powi((t - s) as i32);
        var_worst = var_worst.max(nv / bound);
        if nv > bound * (1.0 + 1e-9) {
            var_violations += 1;
        }

        // chain rule: D2G at the H-image times FD Jacobian of H is identity
        if i < spec.n_samples / 4 + 1 {
            let h_img = sol.forward(t, &eta)?;
            let h_at = |x: &DVector<f64>| sol.forward(t, x);
            let jh = fd_jacobian_of(&h_at, &eta, 1e-5)?;
            let prod = conjugacy_jacobian(sol, t, &h_img)? * jh;
            chain_max = chain_max.max((prod - DMatrix::identity(d, d)).norm());
        }

        // per-order two-step FD consistency of G along a random direction
        let mut v = rand_point(&mut rng);
        let nv = v.norm();
        if nv == 0.0 {
            v = DVector::from_element(d, 1.0 / (d as f64).sqrt());
        } else {
            v /= nv;
        }
        for (oi, rep) in orders.iter_mut().enumerate() {
            let h = rep.fd_step;
            let g_fn = |x: &DVector<f64>| sol.inverse(t, x);
            let dh = directional_fd(&g_fn, &eta, &v, rep.order, h)?;
            let dh2 = directional_fd(&g_fn, &eta, &v, rep.order, h / 2.0)?;
            let dh4 = directional_fd(&g_fn, &eta, &v, rep.order, h / 4.0)?;
            let scale = dh2.norm().max(1.0);
            rep.fd_agreement = rep.fd_agreement.max((&dh - &dh2).norm() / scale);
            let lo = (&dh2 - &dh4).norm();
            if lo > 1e-12 * scale {
                // second-order central schemes: expected near 4
                richardson_sum[oi] += (&dh - &dh2).norm() / lo;
                richardson_n[oi] += 1;
            }
            // continuity modulus at a nearby point
            let eta2 = &eta + rand_point(&mut rng) * 1e-2;
            let dnear = directional_fd(&g_fn, &eta2, &v, rep.order, h)?;
            let dx = (&eta - &eta2).norm();
            if dx > 0.0 {
                rep.continuity_modulus = rep.continuity_modulus.max((&dh - dnear).norm() / dx);
            }
        }
    }
    for (oi, rep) in orders.iter_mut().enumerate() {
        if richardson_n[oi] > 0 {
            rep.richardson_ratio = richardson_sum[oi] / richardson_n[oi] as f64;
        }
    }

    if dev_max > deviation_bound * (1.0 + 1e-9) {
        failures.push(format!(
            "||D2G - I|| = {dev_max} exceeds K M1/(1-alpha) = {deviation_bound}"
        ));
    }
    if d2g_err > 1e-5 {
        failures.push(format!("D2G vs FD relative error {d2g_err} > 1e-5"));
    }
    if var_violations > 0 {
        failures.push(format!(
            "variational bound violated on {var_violations} samples (worst ratio {var_worst})"
        ));
    }
    if chain_max > 1e-4 {
        failures.push(format!("chain-rule residual {chain_max} > 1e-4"));
    }
    for rep in &orders {
        // tolerance loosens with the order: FD truncation error grows fast
        let tol = match rep.order {
            1 => 1e-4,
            2 => 1e-2,
            _ => 0.5,
        };
        if rep.fd_agreement > tol {
            failures.push(format!(
                "order-{} FD estimates at steps h and h/2 disagree by {}",
                rep.order, rep.fd_agreement
            ));
        }
    }

    Ok(SmoothnessReport {
        smooth_condition_lhs: lhs,
        smooth_condition_rhs: rhs,
        smooth_condition_pass: lhs < rhs,
        orders,
        d2g_fd_max_rel_err: d2g_err,
        deviation_max: dev_max,
        deviation_bound,
        invertibility_margin: 1.0 - dev_max,
        variational_violations: var_violations,
        variational_worst_ratio: var_worst,
        chain_rule_max: chain_max,
        consistent: failures.is_empty(),
        failures,
    })
}
