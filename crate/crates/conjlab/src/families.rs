//! Named builders for linear parts and nonlinearities. Config files and the
//! CLI select entries from these registries by name; downstream crates can
//! register their own.

use std::collections::BTreeMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::system::{LinearPart, Nonlinearity};

pub trait LinearFamily: Send + Sync {
    fn name(&self) -> &'static str;
    /// Build from family-specific JSON parameters.
    fn build(&self, dim: usize, params: &Value) -> Result<LinearPart>;
}

pub trait NonlinearityFamily: Send + Sync {
    fn name(&self) -> &'static str;
    fn build(&self, dim: usize, params: &Value) -> Result<Nonlinearity>;
}

type LinReg = Mutex<BTreeMap<&'static str, Box<dyn LinearFamily>>>;
type NlReg = Mutex<BTreeMap<&'static str, Box<dyn NonlinearityFamily>>>;

fn linear_registry() -> &'static LinReg {
    static REG: OnceLock<LinReg> = OnceLock::new();
    REG.get_or_init(|| {
        let mut m: BTreeMap<&'static str, Box<dyn LinearFamily>> = BTreeMap::new();
        for f in builtin_linear() {
            m.insert(f.name(), f);
        }
        Mutex::new(m)
    })
}

fn nonlinearity_registry() -> &'static NlReg {
    static REG: OnceLock<NlReg> = OnceLock::new();
    REG.get_or_init(|| {
        let mut m: BTreeMap<&'static str, Box<dyn NonlinearityFamily>> = BTreeMap::new();
        for f in builtin_nonlinear() {
            m.insert(f.name(), f);
        }
        Mutex::new(m)
    })
}

pub fn register_linear(f: Box<dyn LinearFamily>) {
    linear_registry().lock().unwrap().insert(f.name(), f);
}

pub fn register_nonlinearity(f: Box<dyn NonlinearityFamily>) {
    nonlinearity_registry().lock().unwrap().insert(f.name(), f);
}

pub fn linear_names() -> Vec<&'static str> {
    linear_registry().lock().unwrap().keys().copied().collect()
}

pub fn nonlinearity_names() -> Vec<&'static str> {
    nonlinearity_registry().lock().unwrap().keys().copied().collect()
}

pub fn build_linear(name: &str, dim: usize, params: &Value) -> Result<LinearPart> {
    let reg = linear_registry().lock().unwrap();
    let f = reg
        .get(name)
        .ok_or_else(|| Error::UnknownFamily(format!("linear family '{name}'")))?;
    f.build(dim, params)
}

pub fn build_nonlinearity(name: &str, dim: usize, params: &Value) -> Result<Nonlinearity> {
    let reg = nonlinearity_registry().lock().unwrap();
    let f = reg
        .get(name)
        .ok_or_else(|| Error::UnknownFamily(format!("nonlinearity family '{name}'")))?;
    f.build(dim, params)
}

fn param_f64(params: &Value, key: &str) -> Result<f64> {
    params
        .get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::InvalidConfig(format!("missing numeric parameter '{key}'")))
}

fn param_vec(params: &Value, key: &str, dim: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = params
        .get(key)
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_f64).collect())
        .ok_or_else(|| Error::InvalidConfig(format!("missing array parameter '{key}'")))?;
    if v.len() != dim {
        return Err(Error::InvalidConfig(format!(
            "parameter '{key}' has length {}, expected {dim}",
            v.len()
        )));
    }
    Ok(v)
}

// --- built-in linear families ---

/// A(t) = a I
struct Scalar;
impl LinearFamily for Scalar {
    fn name(&self) -> &'static str {
        "scalar"
    }
    fn build(&self, dim: usize, params: &Value) -> Result<LinearPart> {
        let a = param_f64(params, "value")?;
        Ok(LinearPart::constant(DMatrix::from_diagonal_element(
            dim, dim, a,
        )))
    }
}

/// A(t) = diag(d_1, ..., d_n)
struct Diagonal;
impl LinearFamily for Diagonal {
    fn name(&self) -> &'static str {
        "diagonal"
    }
    fn build(&self, dim: usize, params: &Value) -> Result<LinearPart> {
        let d = param_vec(params, "entries", dim)?;
        Ok(LinearPart::constant(DMatrix::from_diagonal(
            &DVector::from_vec(d),
        )))
    }
}

/// A(t) = r R(angle), a scaled planar rotation (dim must be 2)
struct RotationScale;
impl LinearFamily for RotationScale {
    fn name(&self) -> &'static str {
        "rotation-scale"
    }
    fn build(&self, dim: usize, params: &Value) -> Result<LinearPart> {
        if dim != 2 {
            return Err(Error::InvalidConfig(
                "rotation-scale requires dim = 2".into(),
            ));
        }
        let r = param_f64(params, "scale")?;
        let th = param_f64(params, "angle")?;
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                r * th.cos(),
                -r * th.sin(),
                r * th.sin(),
                r * th.cos(),
            ],
        );
        Ok(LinearPart::constant(m))
    }
}

/// A(t, w) = value(w, t) I — the coefficient is read off the driving stream.
struct Driven;
impl LinearFamily for Driven {
    fn name(&self) -> &'static str {
        "driven-scalar"
    }
    fn build(&self, dim: usize, _params: &Value) -> Result<LinearPart> {
        Ok(LinearPart::new(dim, move |t, omega| {
            DMatrix::from_diagonal_element(dim, dim, omega.value(t))
        }))
    }
}

fn builtin_linear() -> Vec<Box<dyn LinearFamily>> {
    vec![
        Box::new(Scalar),
        Box::new(Diagonal),
        Box::new(RotationScale),
        Box::new(Driven),
    ]
}

// --- built-in nonlinearities ---

struct ZeroNl;
impl NonlinearityFamily for ZeroNl {
    fn name(&self) -> &'static str {
        "zero"
    }
    fn build(&self, dim: usize, _params: &Value) -> Result<Nonlinearity> {
        Ok(Nonlinearity::zero(dim))
    }
}

/// F(x) = c sin(x), componentwise; smooth with all derivative orders bounded.
struct SinNl;
impl NonlinearityFamily for SinNl {
    fn name(&self) -> &'static str {
        "sin"
    }
    fn build(&self, dim: usize, params: &Value) -> Result<Nonlinearity> {
        let c = param_f64(params, "scale")?;
        let nl = Nonlinearity::new(dim, move |_, _, x: &DVector<f64>| x.map(|v| c * v.sin()))
            .with_jacobian(move |_, _, x: &DVector<f64>| {
                DMatrix::from_diagonal(&x.map(|v| c * v.cos()))
            })
            .with_smoothness(usize::MAX);
        Ok(nl)
    }
}

/// F(x) = c x^p, componentwise; unbounded — meant to be localized.
struct PolynomialNl;
impl NonlinearityFamily for PolynomialNl {
    fn name(&self) -> &'static str {
        "polynomial"
    }
    fn build(&self, dim: usize, params: &Value) -> Result<Nonlinearity> {
        let c = param_f64(params, "scale")?;
        let p = param_f64(params, "power")? as i32;
        if p < 1 {
            return Err(Error::InvalidConfig("power must be >= 1".into()));
        }
        let nl = Nonlinearity::new(dim, move |_, _, x: &DVector<f64>| x.map(|v| c * v.powi(p)))
            .with_jacobian(move |_, _, x: &DVector<f64>| {
                DMatrix::from_diagonal(&x.map(|v| c * p as f64 * v.powi(p - 1)))
            })
            .with_smoothness(usize::MAX);
        Ok(nl)
    }
}

fn builtin_nonlinear() -> Vec<Box<dyn NonlinearityFamily>> {
    vec![Box::new(ZeroNl), Box::new(SinNl), Box::new(PolynomialNl)]
}
