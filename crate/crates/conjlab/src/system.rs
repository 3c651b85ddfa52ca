//! Semilinear systems x_{t+1} = A_w(t) x_t + F_w(t, x_t), their evolution
//! operators and general solutions (forward and backward).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::norms::NormFamily;
use crate::omega::Omega;
use crate::window::TimeWindow;

type MatrixFn = dyn Fn(i64, &Omega) -> DMatrix<f64> + Send + Sync;
type VectorFieldFn = dyn Fn(i64, &Omega, &DVector<f64>) -> DVector<f64> + Send + Sync;
type JacobianFn = dyn Fn(i64, &Omega, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// The invertible linear part A_w(t).
#[derive(Clone)]
pub struct LinearPart {
    dim: usize,
    a: Arc<MatrixFn>,
}

impl LinearPart {
    pub fn new(dim: usize, a: impl Fn(i64, &Omega) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        LinearPart { dim, a: Arc::new(a) }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        let dim = m.nrows();
        LinearPart::new(dim, move |_, _| m.clone())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, t: i64, omega: &Omega) -> DMatrix<f64> {
        (self.a)(t, omega)
    }

    pub fn inverse_at(&self, t: i64, omega: &Omega) -> Result<DMatrix<f64>> {
        self.at(t, omega)
            .try_inverse()
            .ok_or(Error::SingularStep { t })
    }
}

/// The nonlinear part F_w(t, x), with an optional analytic Jacobian oracle.
/// Higher-order derivatives are handled by finite differences downstream.
#[derive(Clone)]
pub struct Nonlinearity {
    dim: usize,
    f: Arc<VectorFieldFn>,
    jacobian: Option<Arc<JacobianFn>>,
    pub smoothness_order: usize,
    pub zero_fixed_point: bool,
}

impl Nonlinearity {
    pub fn new(
        dim: usize,
        f: impl Fn(i64, &Omega, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Nonlinearity {
            dim,
            f: Arc::new(f),
            jacobian: None,
            smoothness_order: 0,
            zero_fixed_point: true,
        }
    }

    pub fn zero(dim: usize) -> Self {
        Nonlinearity::new(dim, move |_, _, _| DVector::zeros(dim)).with_jacobian(
            move |_, _, _| DMatrix::zeros(dim, dim),
        )
    }

    pub fn with_jacobian(
        mut self,
        j: impl Fn(i64, &Omega, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(j));
        if self.smoothness_order == 0 {
            self.smoothness_order = 1;
        }
        self
    }

    pub fn with_smoothness(mut self, m: usize) -> Self {
        self.smoothness_order = m;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: i64, omega: &Omega, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(t, omega, x)
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// D2 F at (t, x): analytic oracle when present, central differences otherwise.
    pub fn jacobian(&self, t: i64, omega: &Omega, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(t, omega, x),
            None => self.fd_jacobian(t, omega, x, 1e-6),
        }
    }

    pub fn fd_jacobian(&self, t: i64, omega: &Omega, x: &DVector<f64>, step: f64) -> DMatrix<f64> {
        let d = self.dim;
        let mut jac = DMatrix::zeros(d, d);
        for j in 0..d {
            let h = step * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let df = (self.eval(t, omega, &xp) - self.eval(t, omega, &xm)) / (2.0 * h);
            jac.set_column(j, &df);
        }
        jac
    }
}

/// Stopping rules for all iterative solves.
#[derive(Clone, Copy, Debug)]
pub struct SolverSettings {
    /// Absolute tolerance in the ambient Euclidean norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

#[derive(Clone)]
pub struct SemilinearSystem {
    pub linear: LinearPart,
    pub nonlinear: Nonlinearity,
    pub norms: NormFamily,
    pub window: TimeWindow,
    pub solver: SolverSettings,
}

impl SemilinearSystem {
    pub fn new(
        linear: LinearPart,
        nonlinear: Nonlinearity,
        norms: NormFamily,
        window: TimeWindow,
    ) -> Result<Self> {
        if linear.dim() != nonlinear.dim() || linear.dim() != norms.dim() {
            return Err(Error::InvalidConfig(format!(
                "dimension mismatch: linear {}, nonlinear {}, norms {}",
                linear.dim(),
                nonlinear.dim(),
                norms.dim()
            )));
        }
        Ok(SemilinearSystem {
            linear,
            nonlinear,
            norms,
            window,
            solver: SolverSettings::default(),
        })
    }

    pub fn linear_only(linear: LinearPart, norms: NormFamily, window: TimeWindow) -> Result<Self> {
        let dim = linear.dim();
        SemilinearSystem::new(linear, Nonlinearity::zero(dim), norms, window)
    }

    pub fn dim(&self) -> usize {
        self.linear.dim()
    }

    /// One full step of the semilinear map.
    pub fn step(&self, t: i64, omega: &Omega, x: &DVector<f64>) -> DVector<f64> {
        self.linear.at(t, omega) * x + self.nonlinear.eval(t, omega, x)
    }
}

/// Evolution operator Phi_w(t, s) of the linear part: identity for t = s,
/// ordered products of A for t > s and of A^{-1} for t < s.
pub fn evolution_operator(
    sys: &SemilinearSystem,
    t: i64,
    s: i64,
    omega: &Omega,
) -> Result<DMatrix<f64>> {
    sys.window.check(t)?;
    sys.window.check(s)?;
    let d = sys.dim();
    let mut phi = DMatrix::identity(d, d);
    if t > s {
        for r in s..t {
            phi = sys.linear.at(r, omega) * phi;
        }
    } else {
        for r in (t..s).rev() {
            phi = sys.linear.inverse_at(r, omega)? * phi;
        }
    }
    Ok(phi)
}

/// Solve A_w(t) x + F_w(t, x) = y for x by the Banach iteration
/// x <- A^{-1} y - A^{-1} F(t, x).
pub fn invert_step(
    sys: &SemilinearSystem,
    t: i64,
    omega: &Omega,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    let a_inv = sys.linear.inverse_at(t, omega)?;
    let base = &a_inv * y;
    let mut x = base.clone();
    let mut last_disp = f64::INFINITY;
    let mut bad_ratio_streak = 0usize;
    for _ in 0..sys.solver.max_iter {
        let next = &base - &a_inv * sys.nonlinear.eval(t, omega, &x);
        let disp = (&next - &x).norm();
        // stop at the absolute tolerance or once at rounding level for this magnitude
        let floor = 4.0 * f64::EPSILON * next.norm().max(1.0);
        x = next;
        if disp <= sys.solver.tol.max(floor) {
            let residual = (sys.linear.at(t, omega) * &x + sys.nonlinear.eval(t, omega, &x) - y).norm();
            if !residual.is_finite() {
                return Err(Error::NonFinite {
                    context: "invert_step".into(),
                    sample: format!("t={t}"),
                });
            }
            return Ok(x);
        }
        if disp >= last_disp {
            bad_ratio_streak += 1;
            if bad_ratio_streak >= 8 || !disp.is_finite() {
                return Err(Error::ContractionViolated {
                    t,
                    product: if last_disp > 0.0 { disp / last_disp } else { f64::INFINITY },
                });
            }
        } else {
            bad_ratio_streak = 0;
        }
        last_disp = disp;
    }
    Err(Error::NonConvergence {
        q: f64::NAN,
        residual: last_disp,
        iterations: sys.solver.max_iter,
    })
}

/// General solution phi(t, tau, omega, xi): forward by recursion, backward
/// through `invert_step`.
pub fn general_solution(
    sys: &SemilinearSystem,
    t: i64,
    tau: i64,
    omega: &Omega,
    xi: &DVector<f64>,
) -> Result<DVector<f64>> {
    sys.window.check(t)?;
    sys.window.check(tau)?;
    let mut x = xi.clone();
    if t >= tau {
        for r in tau..t {
            x = sys.step(r, omega, &x);
        }
    } else {
        for r in (t..tau).rev() {
            x = invert_step(sys, r, omega, &x)?;
        }
    }
    Ok(x)
}

/// Variation-of-constants solution of the forced linear equation
/// x_{t+1} = A_w(t) x_t + f(t, omega).
pub fn variation_of_constants(
    sys: &SemilinearSystem,
    t: i64,
    tau: i64,
    omega: &Omega,
    xi: &DVector<f64>,
    forcing: impl Fn(i64, &Omega) -> DVector<f64>,
) -> Result<DVector<f64>> {
    sys.window.check(t)?;
    sys.window.check(tau)?;
    if t < tau {
        return Err(Error::OutsideWindow {
            t,
            t_min: tau,
            t_max: sys.window.t_max,
        });
    }
    // accumulate Phi(t, tau) xi + sum Phi(t, i+1) f(i) by one forward sweep
    let mut acc = xi.clone();
    for i in tau..t {
        acc = sys.linear.at(i, omega) * acc + forcing(i, omega);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_system(a: f64, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> SemilinearSystem {
        let lin = LinearPart::constant(DMatrix::from_element(1, 1, a));
        let nl = Nonlinearity::new(1, move |_, _, x: &DVector<f64>| {
            DVector::from_element(1, f(x[0]))
        });
        SemilinearSystem::new(
            lin,
            nl,
            NormFamily::euclidean(1),
            TimeWindow::new(0, 20).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn evolution_identity_at_equal_times() {
        let sys = scalar_system(0.5, |_| 0.0);
        let phi = evolution_operator(&sys, 3, 3, &Omega::deterministic()).unwrap();
        assert_eq!(phi, DMatrix::identity(1, 1));
    }

    #[test]
    fn evolution_scalar_power() {
        let sys = scalar_system(0.5, |_| 0.0);
        let phi = evolution_operator(&sys, 3, 0, &Omega::deterministic()).unwrap();
        assert_relative_eq!(phi[(0, 0)], 0.125);
    }

    #[test]
    fn evolution_rotation_scale_matches_direct_product() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, -0.5, 0.0]);
        let sys = SemilinearSystem::linear_only(
            LinearPart::constant(a.clone()),
            NormFamily::euclidean(2),
            TimeWindow::new(0, 10).unwrap(),
        )
        .unwrap();
        let phi = evolution_operator(&sys, 2, 0, &Omega::deterministic()).unwrap();
        let oracle = &a * &a;
        assert_relative_eq!((phi - oracle).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn cocycle_and_inverse_properties() {
        let a = DMatrix::from_row_slice(2, 2, &[0.4, 0.1, -0.2, 0.5]);
        let sys = SemilinearSystem::linear_only(
            LinearPart::constant(a),
            NormFamily::euclidean(2),
            TimeWindow::new(0, 12).unwrap(),
        )
        .unwrap();
        let w = Omega::deterministic();
        for (t, p, s) in [(9i64, 4i64, 1i64), (2, 7, 11), (5, 5, 3)] {
            let lhs = evolution_operator(&sys, t, s, &w).unwrap();
            let rhs = evolution_operator(&sys, t, p, &w).unwrap()
                * evolution_operator(&sys, p, s, &w).unwrap();
            assert!((&lhs - &rhs).norm() <= 1e-12 * lhs.norm().max(1.0));
            let inv = evolution_operator(&sys, s, t, &w).unwrap();
            assert!((lhs * inv - DMatrix::identity(2, 2)).norm() < 1e-12);
        }
    }

    #[test]
    fn singular_step_names_the_step() {
        let sys = SemilinearSystem::linear_only(
            LinearPart::new(1, |t, _| DMatrix::from_element(1, 1, if t == 2 { 0.0 } else { 0.5 })),
            NormFamily::euclidean(1),
            TimeWindow::new(0, 5).unwrap(),
        )
        .unwrap();
        match evolution_operator(&sys, 0, 4, &Omega::deterministic()) {
            Err(Error::SingularStep { t }) => assert_eq!(t, 2),
            other => panic!("expected singular step, got {other:?}"),
        }
    }

    #[test]
    fn linear_general_solution_is_evolution() {
        let sys = scalar_system(0.5, |_| 0.0);
        let w = Omega::deterministic();
        let xi = DVector::from_element(1, 3.0);
        let x = general_solution(&sys, 5, 1, &w, &xi).unwrap();
        assert_relative_eq!(x[0], 3.0 * 0.5f64.powi(4));
    }

    #[test]
    fn effective_linear_recursion() {
        // A = 0.5, F(x) = 0.1 x: x_{t+1} = 0.6 x_t
        let sys = scalar_system(0.5, |x| 0.1 * x);
        let x = general_solution(&sys, 4, 0, &Omega::deterministic(), &DVector::from_element(1, 1.0))
            .unwrap();
        assert_relative_eq!(x[0], 0.6f64.powi(4), max_relative = 1e-14);
    }

    #[test]
    fn sin_recursion_matches_direct_oracle() {
        let sys = scalar_system(0.5, |x| 0.1 * x.sin());
        // direct 3-step recursion oracle
        let mut z: f64 = 1.0;
        for _ in 0..3 {
            z = 0.5 * z + 0.1 * z.sin();
        }
        let x = general_solution(&sys, 3, 0, &Omega::deterministic(), &DVector::from_element(1, 1.0))
            .unwrap();
        assert_relative_eq!(x[0], z, max_relative = 1e-14);
    }

    #[test]
    fn two_parameter_identity_forward() {
        let sys = scalar_system(0.5, |x| 0.1 * x.sin());
        let w = Omega::deterministic();
        let xi = DVector::from_element(1, 0.7);
        let via_s = general_solution(&sys, 9, 0, &w, &xi).unwrap();
        let mid = general_solution(&sys, 4, 0, &w, &xi).unwrap();
        let direct = general_solution(&sys, 9, 4, &w, &mid).unwrap();
        assert_relative_eq!(via_s[0], direct[0], max_relative = 1e-12);
    }

    #[test]
    fn invert_step_linear_case() {
        let sys = scalar_system(2.0, |_| 0.0);
        let x = invert_step(&sys, 0, &Omega::deterministic(), &DVector::from_element(1, 1.0)).unwrap();
        assert_relative_eq!(x[0], 0.5);
    }

    #[test]
    fn invert_step_matches_bisection_oracle() {
        // root of 2x + 0.1 sin x = 1
        let sys = scalar_system(2.0, |x| 0.1 * x.sin());
        let g = |x: f64| 2.0 * x + 0.1 * x.sin() - 1.0;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        let x = invert_step(&sys, 0, &Omega::deterministic(), &DVector::from_element(1, 1.0)).unwrap();
        assert!((x[0] - root).abs() < 1e-10);
    }

    #[test]
    fn invert_step_zero_fixed_point() {
        let sys = scalar_system(2.0, |x| 0.1 * x.sin());
        let x = invert_step(&sys, 0, &Omega::deterministic(), &DVector::zeros(1)).unwrap();
        assert_eq!(x[0], 0.0);
    }

    #[test]
    fn invert_step_detects_no_contraction() {
        // L ||A^-1|| = 0.9 * (1/0.5) = 1.8 >= 1
        let sys = scalar_system(0.5, |x| 0.9 * x.sin().sin() + 0.9 * x);
        let r = invert_step(&sys, 0, &Omega::deterministic(), &DVector::from_element(1, 1.0));
        assert!(r.is_err());
    }

    #[test]
    fn variation_of_constants_trivial_sum() {
        let sys = scalar_system(0.5, |_| 0.0);
        let w = Omega::deterministic();
        let x = variation_of_constants(&sys, 3, 0, &w, &DVector::zeros(1), |_, _| {
            DVector::from_element(1, 1.0)
        })
        .unwrap();
        assert_relative_eq!(x[0], 1.75);
    }

    #[test]
    fn variation_of_constants_matches_forced_recursion() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, -0.1, 0.4]);
        let sys = SemilinearSystem::linear_only(
            LinearPart::constant(a.clone()),
            NormFamily::euclidean(2),
            TimeWindow::new(0, 30).unwrap(),
        )
        .unwrap();
        let w = Omega::deterministic();
        let xi = DVector::from_vec(vec![1.0, -2.0]);
        let forcing = |i: i64, _: &Omega| DVector::from_vec(vec![(i as f64).sin(), 0.25]);
        let voc = variation_of_constants(&sys, 25, 0, &w, &xi, forcing).unwrap();
        let mut x = xi;
        for i in 0..25 {
            x = &a * x + forcing(i, &w);
        }
        assert!((voc - x).norm() < 1e-12);
    }
}
