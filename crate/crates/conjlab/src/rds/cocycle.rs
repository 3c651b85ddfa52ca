//! Matrix cocycles over a shift base, their products, and the QR-based
//! Lyapunov spectrum with Oseledets subspace estimates.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::omega::{Omega, ShiftMds};

type GeneratorFn = dyn Fn(&Omega) -> DMatrix<f64> + Send + Sync;

/// A linear cocycle generated by iterating A(θ^t ω).
#[derive(Clone)]
pub struct Cocycle {
    dim: usize,
    gen: Arc<GeneratorFn>,
}

impl Cocycle {
    pub fn new(
        dim: usize,
        gen: impl Fn(&Omega) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Cocycle {
            dim,
            gen: Arc::new(gen),
        }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        assert!(m.is_square());
        let dim = m.nrows();
        Cocycle::new(dim, move |_| m.clone())
    }

    /// Scalar generator a(ω) read off the driving stream at index 0.
    pub fn scalar_from_stream() -> Self {
        Cocycle::new(1, |omega| DMatrix::from_element(1, 1, omega.value(0)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// A(ω)
    pub fn generator(&self, omega: &Omega) -> DMatrix<f64> {
        (self.gen)(omega)
    }

    /// A(θ^t ω)
    pub fn at_time(&self, t: i64, omega: &Omega) -> DMatrix<f64> {
        (self.gen)(&omega.shifted(t))
    }
}

/// Φ(n,ω): forward products A(θ^{n-1}ω)…A(ω) for n ≥ 0, inverse products
/// A(θ^n ω)^{-1}…A(θ^{-1}ω)^{-1} for n < 0.
pub fn cocycle_products(c: &Cocycle, n: i64, omega: &Omega) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::identity(c.dim, c.dim);
    if n >= 0 {
        for t in 0..n {
            out = c.at_time(t, omega) * out;
        }
    } else {
        for t in n..0 {
            let inv = c
                .at_time(t, omega)
                .try_inverse()
                .ok_or(Error::SingularStep { t })?;
            out = out * inv;
        }
    }
    Ok(out)
}

/// Sample means of log⁺‖A‖ and log⁺‖A⁻¹‖ along the orbit — the MET
/// integrability requirement, checked empirically for finiteness.
pub fn integrability_check(c: &Cocycle, omega: &Omega, n: usize) -> Result<(f64, f64)> {
    let mut fwd = 0.0;
    let mut bwd = 0.0;
    for t in 0..n as i64 {
        let a = c.at_time(t, omega);
        let na = a.norm();
        let inv = a.try_inverse().ok_or(Error::SingularStep { t })?;
        if !na.is_finite() {
            return Err(Error::NonFinite {
                context: "integrability_check".into(),
                sample: format!("t={t}"),
            });
        }
        fwd += na.ln().max(0.0);
        bwd += inv.norm().ln().max(0.0);
    }
    Ok((fwd / n as f64, bwd / n as f64))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// cluster means, strictly decreasing
    pub lambdas: Vec<f64>,
    pub multiplicities: Vec<usize>,
    /// gap parameter a = min(minimal gap, |λ₁|)/2
    pub gap: f64,
    pub n_steps: usize,
    pub n_samples: usize,
    /// standard error of the ω-averaged estimate, per cluster
    pub half_widths: Vec<f64>,
    /// drift between first- and second-half time averages (top exponent)
    pub drift: f64,
    /// true when every λ_i + a < 0
    pub negative: bool,
    /// horizon used for the SVD-based subspace estimates
    pub svd_horizon: usize,
    /// raw per-direction exponents before clustering (ω-averaged, sorted)
    pub raw: Vec<f64>,
}

impl SpectrumReport {
    pub fn top(&self) -> f64 {
        self.lambdas[0]
    }

    /// e^{λ₁ + a}: the contraction rate of the cocycle in the adapted norm.
    pub fn adapted_alpha(&self) -> f64 {
        (self.top() + self.gap).exp()
    }
}

/// QR-method Lyapunov exponents averaged over `n_samples` draws of ω, with
/// clustering into multiplicities at 3× the confidence half-width.
pub fn lyapunov_spectrum(
    c: &Cocycle,
    mds: &ShiftMds,
    n_steps: usize,
    n_samples: usize,
) -> Result<SpectrumReport> {
    assert!(n_steps >= 2 && n_samples >= 1);
    let d = c.dim;
    let mut sums = vec![vec![0.0f64; d]; n_samples];
    let mut first_half = vec![0.0f64; n_samples];
    let mut second_half = vec![0.0f64; n_samples];
    for (k, per_omega) in sums.iter_mut().enumerate() {
        let omega = mds.sample(k as u64);
        let mut q = DMatrix::<f64>::identity(d, d);
        for t in 0..n_steps as i64 {
            let b = c.at_time(t, &omega) * q;
            let qr = b.qr();
            q = qr.q();
            let r = qr.r();
            for i in 0..d {
                let rii = r[(i, i)].abs();
                if rii == 0.0 || !rii.is_finite() {
                    return Err(Error::SingularStep { t });
                }
                let l = rii.ln();
                per_omega[i] += l;
                if i == 0 {
                    if (t as usize) < n_steps / 2 {
                        first_half[k] += l;
                    } else {
                        second_half[k] += l;
                    }
                }
            }
        }
        for v in per_omega.iter_mut() {
            *v /= n_steps as f64;
        }
    }

    // ω-averaged per-direction exponents and their standard errors
    let mut raw = vec![0.0f64; d];
    let mut se = vec![0.0f64; d];
    for i in 0..d {
        let mean = sums.iter().map(|s| s[i]).sum::<f64>() / n_samples as f64;
        raw[i] = mean;
        if n_samples > 1 {
            let var = sums
                .iter()
                .map(|s| (s[i] - mean).powi(2))
                .sum::<f64>()
                / (n_samples as f64 - 1.0);
            // 95% confidence half-width of the ω-averaged estimate
            se[i] = 1.96 * (var / n_samples as f64).sqrt();
        }
    }
    // QR produces them in decreasing order for generic cocycles; enforce it
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| raw[b].partial_cmp(&raw[a]).unwrap());
    let raw: Vec<f64> = order.iter().map(|&i| raw[i]).collect();
    let se: Vec<f64> = order.iter().map(|&i| se[i]).collect();

    let h1 = first_half.iter().sum::<f64>() / (n_samples * (n_steps / 2)) as f64;
    let h2 = second_half.iter().sum::<f64>() / (n_samples * (n_steps - n_steps / 2)) as f64;
    let drift = (h1 - h2).abs();
    let hw_top = se[0];
    if drift > 5.0 * hw_top && hw_top > 0.0 {
        return Err(Error::SpectrumNotConverged {
            drift,
            half_width: hw_top,
        });
    }

    // cluster raw exponents: threshold 3× half-width (floored), fewer
    // clusters on ties
    let thresh = (3.0 * se.iter().cloned().fold(0.0, f64::max)).max(1e-9);
    let mut lambdas = Vec::new();
    let mut mults = Vec::new();
    let mut hws = Vec::new();
    let mut i = 0;
    while i < d {
        let mut j = i + 1;
        while j < d && raw[j - 1] - raw[j] <= thresh {
            j += 1;
        }
        lambdas.push(raw[i..j].iter().sum::<f64>() / (j - i) as f64);
        hws.push(se[i..j].iter().cloned().fold(0.0, f64::max));
        mults.push(j - i);
        i = j;
    }

    let min_gap = lambdas
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::INFINITY, f64::min);
    let gap = 0.5 * min_gap.min(lambdas[0].abs());
    let negative = lambdas.iter().all(|l| l + gap < 0.0);

    Ok(SpectrumReport {
        lambdas,
        multiplicities: mults,
        gap,
        n_steps,
        n_samples,
        half_widths: hws,
        drift,
        negative,
        svd_horizon: n_steps.min(40),
        raw,
    })
}

/// Oseledets splitting bases U_i(ω) at time zero: the right singular
/// subspaces of Φ(n,ω) at a moderate horizon n, grouped per cluster.
pub fn splitting_bases(
    c: &Cocycle,
    rep: &SpectrumReport,
    omega: &Omega,
) -> Result<Vec<DMatrix<f64>>> {
    let d = c.dim;
    let phi = cocycle_products(c, rep.svd_horizon as i64, omega)?;
    let svd = phi.svd(true, true);
    let v_t = svd.v_t.as_ref().expect("svd requested");
    let mut out = Vec::new();
    let mut col = 0;
    for &m in &rep.multiplicities {
        let mut basis = DMatrix::zeros(d, m);
        for j in 0..m {
            basis.set_column(j, &v_t.row(col + j).transpose());
        }
        out.push(basis);
        col += m;
    }
    Ok(out)
}

/// Filtration bases: V_i = U_i ⊕ … ⊕ U_k (the directions decaying at rate
/// λ_i or faster).
pub fn filtration_bases(
    c: &Cocycle,
    rep: &SpectrumReport,
    omega: &Omega,
) -> Result<Vec<DMatrix<f64>>> {
    let split = splitting_bases(c, rep, omega)?;
    let d = c.dim;
    let mut out = Vec::new();
    for i in 0..split.len() {
        let cols: usize = split[i..].iter().map(|b| b.ncols()).sum();
        let mut basis = DMatrix::zeros(d, cols);
        let mut at = 0;
        for b in &split[i..] {
            for j in 0..b.ncols() {
                basis.set_column(at, &b.column(j).into_owned());
                at += 1;
            }
        }
        out.push(basis);
    }
    Ok(out)
}

/// Growth-rate of a vector under the cocycle, for classification tests.
pub fn growth_rate(c: &Cocycle, omega: &Omega, u: &DVector<f64>, n: i64) -> Result<f64> {
    let phi = cocycle_products(c, n, omega)?;
    Ok(((phi * u).norm() / u.norm()).ln() / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::omega::MdsKind;
    use approx::assert_relative_eq;

    fn bernoulli_mds() -> ShiftMds {
        ShiftMds::new(
            MdsKind::Bernoulli {
                symbols: vec![2.0, 0.125],
                probs: vec![0.5, 0.5],
            },
            42,
        )
        .unwrap()
    }

    #[test]
    fn products_identity_and_powers() {
        let c = Cocycle::constant(DMatrix::from_element(1, 1, 0.5));
        let om = Omega::deterministic();
        assert_eq!(cocycle_products(&c, 0, &om).unwrap()[(0, 0)], 1.0);
        assert_relative_eq!(cocycle_products(&c, 5, &om).unwrap()[(0, 0)], 0.5f64.powi(5));
        assert_relative_eq!(
            cocycle_products(&c, -3, &om).unwrap()[(0, 0)],
            2.0f64.powi(3)
        );
    }

    #[test]
    fn cocycle_identity_on_random_stream() {
        // Φ(5,ω) = Φ(3,θ²ω) Φ(2,ω)
        let c = Cocycle::scalar_from_stream();
        let om = bernoulli_mds().sample(7);
        let lhs = cocycle_products(&c, 5, &om).unwrap();
        let rhs = cocycle_products(&c, 3, &om.shifted(2)).unwrap()
            * cocycle_products(&c, 2, &om).unwrap();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn inverse_products_invert_forward() {
        let c = Cocycle::scalar_from_stream();
        let om = bernoulli_mds().sample(3);
        let fwd = cocycle_products(&c, 4, &om).unwrap();
        let bwd = cocycle_products(&c, -4, &om.shifted(4)).unwrap();
        assert!((bwd * fwd - DMatrix::identity(1, 1)).norm() < 1e-12);
    }

    #[test]
    fn integrability_finite() {
        let c = Cocycle::scalar_from_stream();
        let om = bernoulli_mds().sample(0);
        let (f, b) = integrability_check(&c, &om, 1000).unwrap();
        assert!(f.is_finite() && b.is_finite());
        assert!(f <= 2.0f64.ln() + 1e-12);
    }

    #[test]
    fn constant_diagonal_spectrum_exact() {
        let c = Cocycle::constant(DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.25])));
        let rep = lyapunov_spectrum(&c, &bernoulli_mds(), 200, 4).unwrap();
        assert_eq!(rep.multiplicities, vec![1, 1]);
        assert!((rep.lambdas[0] - 0.5f64.ln()).abs() < 1e-10);
        assert!((rep.lambdas[1] - 0.25f64.ln()).abs() < 1e-10);
        assert!(rep.negative);
        // gap: min(gap, |λ₁|)/2 = ln 2 / 2
        assert_relative_eq!(rep.gap, 0.5 * 2.0f64.ln(), max_relative = 1e-9);
    }

    #[test]
    fn repeated_exponent_clusters() {
        let c = Cocycle::constant(DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5])));
        let rep = lyapunov_spectrum(&c, &bernoulli_mds(), 100, 2).unwrap();
        assert_eq!(rep.multiplicities, vec![2]);
        assert_eq!(rep.lambdas.len(), 1);
    }

    #[test]
    fn iid_scalar_top_exponent() {
        // E[ln a] = (ln 2 + ln 1/8)/2 = -ln 2
        let c = Cocycle::scalar_from_stream();
        let rep = lyapunov_spectrum(&c, &bernoulli_mds(), 10_000, 64).unwrap();
        assert!(
            (rep.lambdas[0] + 2.0f64.ln()).abs() < 0.01,
            "λ̂₁ = {}",
            rep.lambdas[0]
        );
    }

    #[test]
    fn triangular_cocycle_matches_svd_oracle() {
        // random triangular generator: exponents are the diagonal averages
        let mds = ShiftMds::new(
            MdsKind::Bernoulli {
                symbols: vec![0.3, 0.6],
                probs: vec![0.5, 0.5],
            },
            11,
        )
        .unwrap();
        let c = Cocycle::new(2, |om: &Omega| {
            DMatrix::from_row_slice(2, 2, &[om.value(0), 0.4, 0.0, 0.05])
        });
        let rep = lyapunov_spectrum(&c, &mds, 4000, 16).unwrap();
        // SVD-of-products oracle: σ₂/σ₁ shrinks by ~0.11 per step, so the
        // horizon must stay short enough for σ₂ to be resolvable; average
        // per-path exponents over many paths instead
        let n = 14i64;
        let paths = 64;
        let mut oracle = vec![0.0f64; 2];
        for k in 0..paths {
            let om = mds.sample(k);
            let phi = cocycle_products(&c, n, &om).unwrap();
            let svd = phi.svd(false, false);
            for (o, s) in oracle.iter_mut().zip(svd.singular_values.iter()) {
                *o += s.ln() / (n as f64 * paths as f64);
            }
        }
        for (l, o) in rep.lambdas.iter().zip(&oracle) {
            assert!((l - o).abs() < 0.05, "{l} vs {o}");
        }
    }

    #[test]
    fn splitting_bases_are_eigendirections_for_diagonal() {
        let c = Cocycle::constant(DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.25])));
        let mds = bernoulli_mds();
        let rep = lyapunov_spectrum(&c, &mds, 100, 2).unwrap();
        let bases = splitting_bases(&c, &rep, &mds.sample(0)).unwrap();
        assert_eq!(bases.len(), 2);
        assert!(bases[0].column(0)[0].abs() > 0.999); // e1 direction
        assert!(bases[1].column(0)[1].abs() > 0.999); // e2 direction
        let filt = filtration_bases(&c, &rep, &mds.sample(0)).unwrap();
        assert_eq!(filt[0].ncols(), 2);
        assert_eq!(filt[1].ncols(), 1);
    }

    #[test]
    fn growth_rate_classifies_directions() {
        let c = Cocycle::constant(DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.25])));
        let om = Omega::deterministic();
        let r1 = growth_rate(&c, &om, &DVector::from_vec(vec![1.0, 0.0]), 30).unwrap();
        let r2 = growth_rate(&c, &om, &DVector::from_vec(vec![0.0, 1.0]), 30).unwrap();
        assert_relative_eq!(r1, 0.5f64.ln(), max_relative = 1e-12);
        assert_relative_eq!(r2, 0.25f64.ln(), max_relative = 1e-12);
    }
}
