//! Mini-batch contrastive losses on the sphere and their ambient gradients.
//!
//! Three generic families are parametrised by an inner map `phi` and an
//! outer map `psi`. For anchor `u_i` with positive `v_i`, each negative `x`
//! contributes `phi((x - v_i)^T u_i)` to an inner sum `S_i`, and the loss is
//! `(1/M) sum_i psi(S_i)`. The families differ in which negatives enter:
//!
//! | family | negatives for anchor `i`            |
//! |--------|-------------------------------------|
//! | A      | `v_j`, `j != i`                     |
//! | B      | `v_j` and `u_j`, `j != i`           |
//! | C      | `u_j`, `j != i`                     |
//!
//! InfoNCE is A with `(exp(x/tau), log(1+x))`, SimCLR is B with the same
//! pair, DCL is B with `(exp(x/tau), log x)` and DHEL is C with
//! `(exp(x/tau), log x)`. The kernel contrastive loss (KCL) is separate:
//! `-(1/M) sum_i K_A(u_i, v_i) + gamma/(M(M-1)) sum_{i != j} K_U(u_i, u_j)`.
//!
//! Gradients are ambient (Euclidean) and are taken with respect to the raw
//! coordinates, so they agree with finite differences that step off the
//! sphere. Projection onto the tangent space is left to the optimizer.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_same_shape, EmbeddingBatch};
use crate::kernels::KernelSpec;

/// A differentiable scalar map supplied by the caller.
pub trait ScalarFunction: fmt::Debug + Send + Sync {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
    fn name(&self) -> String;
}

/// Scalar maps used as `phi` or `psi`.
#[derive(Debug, Clone)]
pub enum ScalarMap {
    /// `exp(x / tau)`
    Exp {
        tau: f64,
    },
    Identity,
    Log,
    /// `log(1 + x)`
    Log1p,
    Constant(f64),
    Custom(Arc<dyn ScalarFunction>),
}

impl PartialEq for ScalarMap {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ScalarMap::Exp { tau: a }, ScalarMap::Exp { tau: b }) => a == b,
            (ScalarMap::Identity, ScalarMap::Identity)
            | (ScalarMap::Log, ScalarMap::Log)
            | (ScalarMap::Log1p, ScalarMap::Log1p) => true,
            (ScalarMap::Constant(a), ScalarMap::Constant(b)) => a == b,
            (ScalarMap::Custom(a), ScalarMap::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl ScalarMap {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            ScalarMap::Exp { tau } => (x / tau).exp(),
            ScalarMap::Identity => x,
            ScalarMap::Log => x.ln(),
            ScalarMap::Log1p => x.ln_1p(),
            ScalarMap::Constant(c) => *c,
            ScalarMap::Custom(f) => f.value(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            ScalarMap::Exp { tau } => (x / tau).exp() / tau,
            ScalarMap::Identity => 1.0,
            ScalarMap::Log => 1.0 / x,
            ScalarMap::Log1p => 1.0 / (1.0 + x),
            ScalarMap::Constant(_) => 0.0,
            ScalarMap::Custom(f) => f.derivative(x),
        }
    }

    pub fn name(&self) -> String {
        match self {
            ScalarMap::Exp { .. } => "exp".into(),
            ScalarMap::Identity => "identity".into(),
            ScalarMap::Log => "log".into(),
            ScalarMap::Log1p => "log1p".into(),
            ScalarMap::Constant(c) => format!("constant:{c}"),
            ScalarMap::Custom(f) => format!("custom:{}", f.name()),
        }
    }
}

/// The `(phi, psi)` pair of a generic loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiPsi {
    pub phi: ScalarMap,
    pub psi: ScalarMap,
}

impl PhiPsi {
    pub fn new(phi: ScalarMap, psi: ScalarMap) -> Self {
        Self { phi, psi }
    }

    pub fn name(&self) -> String {
        format!("phi={},psi={}", self.phi.name(), self.psi.name())
    }

    /// `exp(x/tau)` inside a log: evaluated with a log-sum-exp reduction.
    fn log_sum_exp(&self) -> Option<(f64, bool)> {
        match (&self.phi, &self.psi) {
            (ScalarMap::Exp { tau }, ScalarMap::Log) => Some((*tau, false)),
            (ScalarMap::Exp { tau }, ScalarMap::Log1p) => Some((*tau, true)),
            _ => None,
        }
    }
}

/// Which negatives enter the inner sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenericFamily {
    A,
    B,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Infonce,
    Simclr,
    Dcl,
    Dhel,
    Kcl,
    GenericA,
    GenericB,
    GenericC,
}

impl Variant {
    pub const NAMED: [Variant; 4] = [
        Variant::Infonce,
        Variant::Simclr,
        Variant::Dcl,
        Variant::Dhel,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Infonce => "infonce",
            Variant::Simclr => "simclr",
            Variant::Dcl => "dcl",
            Variant::Dhel => "dhel",
            Variant::Kcl => "kcl",
            Variant::GenericA => "generic_a",
            Variant::GenericB => "generic_b",
            Variant::GenericC => "generic_c",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    Infonce {
        tau: f64,
    },
    Simclr {
        tau: f64,
    },
    Dcl {
        tau: f64,
    },
    Dhel {
        tau: f64,
    },
    Kcl {
        kernel_a: KernelSpec,
        kernel_u: KernelSpec,
        gamma: f64,
    },
    Generic {
        family: GenericFamily,
        phi_psi: PhiPsi,
    },
}

/// A loss variant with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLossSpec", into = "RawLossSpec")]
pub struct LossSpec {
    pub kind: LossKind,
    /// Evaluate `(L(U, V) + L(V, U)) / 2`.
    pub symmetric: bool,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Result<Self> {
        let spec = Self {
            kind,
            symmetric: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn infonce(tau: f64) -> Result<Self> {
        Self::new(LossKind::Infonce { tau })
    }

    pub fn simclr(tau: f64) -> Result<Self> {
        Self::new(LossKind::Simclr { tau })
    }

    pub fn dcl(tau: f64) -> Result<Self> {
        Self::new(LossKind::Dcl { tau })
    }

    pub fn dhel(tau: f64) -> Result<Self> {
        Self::new(LossKind::Dhel { tau })
    }

    /// One of the four softmax-style variants.
    pub fn named(variant: Variant, tau: f64) -> Result<Self> {
        match variant {
            Variant::Infonce => Self::infonce(tau),
            Variant::Simclr => Self::simclr(tau),
            Variant::Dcl => Self::dcl(tau),
            Variant::Dhel => Self::dhel(tau),
            other => Err(Error::InvalidLoss(format!(
                "{other} is not a named variant"
            ))),
        }
    }

    pub fn kcl(kernel_a: KernelSpec, kernel_u: KernelSpec, gamma: f64) -> Result<Self> {
        Self::new(LossKind::Kcl {
            kernel_a,
            kernel_u,
            gamma,
        })
    }

    pub fn generic(family: GenericFamily, phi_psi: PhiPsi) -> Result<Self> {
        Self::new(LossKind::Generic { family, phi_psi })
    }

    pub fn with_symmetric(mut self, symmetric: bool) -> Self {
        self.symmetric = symmetric;
        self
    }

    pub fn variant(&self) -> Variant {
        match &self.kind {
            LossKind::Infonce { .. } => Variant::Infonce,
            LossKind::Simclr { .. } => Variant::Simclr,
            LossKind::Dcl { .. } => Variant::Dcl,
            LossKind::Dhel { .. } => Variant::Dhel,
            LossKind::Kcl { .. } => Variant::Kcl,
            LossKind::Generic { family, .. } => match family {
                GenericFamily::A => Variant::GenericA,
                GenericFamily::B => Variant::GenericB,
                GenericFamily::C => Variant::GenericC,
            },
        }
    }

    /// Temperature of the exponential similarity, if the variant has one.
    pub fn tau(&self) -> Option<f64> {
        match &self.kind {
            LossKind::Infonce { tau }
            | LossKind::Simclr { tau }
            | LossKind::Dcl { tau }
            | LossKind::Dhel { tau } => Some(*tau),
            LossKind::Generic { phi_psi, .. } => match phi_psi.phi {
                ScalarMap::Exp { tau } => Some(tau),
                _ => None,
            },
            LossKind::Kcl { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_tau = |tau: f64| {
            if tau > 0.0 && tau.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidLoss(format!(
                    "tau must be positive, got {tau}"
                )))
            }
        };
        match &self.kind {
            LossKind::Infonce { tau }
            | LossKind::Simclr { tau }
            | LossKind::Dcl { tau }
            | LossKind::Dhel { tau } => check_tau(*tau),
            LossKind::Kcl {
                kernel_a,
                kernel_u,
                gamma,
            } => {
                kernel_a.validate()?;
                kernel_u.validate()?;
                if *gamma > 0.0 && gamma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidLoss(format!(
                        "gamma must be positive, got {gamma}"
                    )))
                }
            }
            LossKind::Generic { phi_psi, .. } => match phi_psi.phi {
                ScalarMap::Exp { tau } => check_tau(tau),
                _ => Ok(()),
            },
        }
    }

    /// The `(phi, psi)` instantiation of a softmax-style variant.
    pub fn as_generic(&self) -> Option<(GenericFamily, PhiPsi)> {
        let exp = |tau: f64| ScalarMap::Exp { tau };
        match &self.kind {
            LossKind::Infonce { tau } => {
                Some((GenericFamily::A, PhiPsi::new(exp(*tau), ScalarMap::Log1p)))
            }
            LossKind::Simclr { tau } => {
                Some((GenericFamily::B, PhiPsi::new(exp(*tau), ScalarMap::Log1p)))
            }
            LossKind::Dcl { tau } => {
                Some((GenericFamily::B, PhiPsi::new(exp(*tau), ScalarMap::Log)))
            }
            LossKind::Dhel { tau } => {
                Some((GenericFamily::C, PhiPsi::new(exp(*tau), ScalarMap::Log)))
            }
            LossKind::Generic { family, phi_psi } => Some((*family, phi_psi.clone())),
            LossKind::Kcl { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLossSpec {
    variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel_a: Option<KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel_u: Option<KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    psi: Option<String>,
    #[serde(default)]
    symmetric: bool,
}

impl TryFrom<RawLossSpec> for LossSpec {
    type Error = Error;

    fn try_from(raw: RawLossSpec) -> Result<Self> {
        let variant = raw.variant;
        let reject = |present: bool, field: &str| {
            if present {
                Err(Error::InvalidLoss(format!(
                    "field `{field}` is not used by variant {variant}"
                )))
            } else {
                Ok(())
            }
        };
        let require = |value: Option<f64>, field: &str| {
            value.ok_or_else(|| Error::InvalidLoss(format!("variant {variant} requires `{field}`")))
        };
        let kind = match variant {
            Variant::Infonce | Variant::Simclr | Variant::Dcl | Variant::Dhel => {
                reject(raw.gamma.is_some(), "gamma")?;
                reject(raw.kernel_a.is_some(), "kernel_a")?;
                reject(raw.kernel_u.is_some(), "kernel_u")?;
                reject(raw.phi.is_some(), "phi")?;
                reject(raw.psi.is_some(), "psi")?;
                let tau = require(raw.tau, "tau")?;
                return Ok(LossSpec::named(variant, tau)?.with_symmetric(raw.symmetric));
            }
            Variant::Kcl => {
                reject(raw.tau.is_some(), "tau")?;
                reject(raw.phi.is_some(), "phi")?;
                reject(raw.psi.is_some(), "psi")?;
                LossKind::Kcl {
                    kernel_a: raw
                        .kernel_a
                        .ok_or_else(|| Error::InvalidLoss("kcl requires `kernel_a`".into()))?,
                    kernel_u: raw
                        .kernel_u
                        .ok_or_else(|| Error::InvalidLoss("kcl requires `kernel_u`".into()))?,
                    gamma: require(raw.gamma, "gamma")?,
                }
            }
            Variant::GenericA | Variant::GenericB | Variant::GenericC => {
                reject(raw.gamma.is_some(), "gamma")?;
                reject(raw.kernel_a.is_some(), "kernel_a")?;
                reject(raw.kernel_u.is_some(), "kernel_u")?;
                let phi_name = raw
                    .phi
                    .ok_or_else(|| Error::InvalidLoss(format!("{variant} requires `phi`")))?;
                let psi_name = raw
                    .psi
                    .ok_or_else(|| Error::InvalidLoss(format!("{variant} requires `psi`")))?;
                let phi = match phi_name.as_str() {
                    "exp" => ScalarMap::Exp {
                        tau: require(raw.tau, "tau")?,
                    },
                    "identity" => {
                        reject(raw.tau.is_some(), "tau")?;
                        ScalarMap::Identity
                    }
                    other => return Err(Error::InvalidLoss(format!("unknown phi `{other}`"))),
                };
                let psi = match psi_name.as_str() {
                    "log" => ScalarMap::Log,
                    "log1p" => ScalarMap::Log1p,
                    "identity" => ScalarMap::Identity,
                    other => return Err(Error::InvalidLoss(format!("unknown psi `{other}`"))),
                };
                let family = match variant {
                    Variant::GenericA => GenericFamily::A,
                    Variant::GenericB => GenericFamily::B,
                    _ => GenericFamily::C,
                };
                LossKind::Generic {
                    family,
                    phi_psi: PhiPsi::new(phi, psi),
                }
            }
        };
        Ok(LossSpec::new(kind)?.with_symmetric(raw.symmetric))
    }
}

impl From<LossSpec> for RawLossSpec {
    fn from(spec: LossSpec) -> Self {
        let mut raw = RawLossSpec {
            variant: spec.variant(),
            tau: None,
            gamma: None,
            kernel_a: None,
            kernel_u: None,
            phi: None,
            psi: None,
            symmetric: spec.symmetric,
        };
        match spec.kind {
            LossKind::Infonce { tau }
            | LossKind::Simclr { tau }
            | LossKind::Dcl { tau }
            | LossKind::Dhel { tau } => raw.tau = Some(tau),
            LossKind::Kcl {
                kernel_a,
                kernel_u,
                gamma,
            } => {
                raw.kernel_a = Some(kernel_a);
                raw.kernel_u = Some(kernel_u);
                raw.gamma = Some(gamma);
            }
            LossKind::Generic { phi_psi, .. } => {
                if let ScalarMap::Exp { tau } = phi_psi.phi {
                    raw.tau = Some(tau);
                }
                raw.phi = Some(phi_psi.phi.name());
                raw.psi = Some(phi_psi.psi.name());
            }
        }
        raw
    }
}

/// Loss value with optional ambient gradients.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub value: f64,
    pub grad: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

fn check_arity(m: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::InvalidArity(format!(
            "contrastive losses need M >= 2, got {m}"
        )));
    }
    Ok(())
}

/// Generic loss on raw coordinates.
fn eval_generic(
    family: GenericFamily,
    pp: &PhiPsi,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    want_grad: bool,
) -> Evaluation {
    let m = u.nrows();
    let uv = u * v.transpose();
    let uu = if family == GenericFamily::A {
        DMatrix::zeros(0, 0)
    } else {
        u * u.transpose()
    };
    let use_v = family != GenericFamily::C;
    let use_u = family != GenericFamily::A;

    // weights of d psi(S_i) / d arg for negatives v_j and u_j
    let mut w_v = DMatrix::zeros(if want_grad && use_v { m } else { 0 }, m);
    let mut w_u = DMatrix::zeros(if want_grad && use_u { m } else { 0 }, m);
    let mut total = 0.0;
    let mut args_v = Vec::with_capacity(m);
    let mut args_u = Vec::with_capacity(m);

    for i in 0..m {
        let pos = uv[(i, i)];
        args_v.clear();
        args_u.clear();
        for j in (0..m).filter(|&j| j != i) {
            if use_v {
                args_v.push((j, uv[(i, j)] - pos));
            }
            if use_u {
                args_u.push((j, uu[(i, j)] - pos));
            }
        }
        let all = args_v.iter().chain(args_u.iter());

        if let Some((tau, with_one)) = pp.log_sum_exp() {
            let mut zmax = if with_one { 0.0 } else { f64::NEG_INFINITY };
            for &(_, a) in all.clone() {
                zmax = zmax.max(a / tau);
            }
            let mut sum = if with_one { (-zmax).exp() } else { 0.0 };
            for &(_, a) in all {
                sum += (a / tau - zmax).exp();
            }
            total += zmax + sum.ln();
            if want_grad {
                for &(j, a) in &args_v {
                    w_v[(i, j)] = (a / tau - zmax).exp() / (sum * tau);
                }
                for &(j, a) in &args_u {
                    w_u[(i, j)] = (a / tau - zmax).exp() / (sum * tau);
                }
            }
        } else {
            let mut s = 0.0;
            for &(_, a) in all {
                s += pp.phi.value(a);
            }
            total += pp.psi.value(s);
            if want_grad {
                let outer = pp.psi.derivative(s);
                for &(j, a) in &args_v {
                    w_v[(i, j)] = outer * pp.phi.derivative(a);
                }
                for &(j, a) in &args_u {
                    w_u[(i, j)] = outer * pp.phi.derivative(a);
                }
            }
        }
    }
    let value = total / m as f64;
    if !want_grad {
        return Evaluation { value, grad: None };
    }

    // arg_ij = <x_j, u_i> - <v_i, u_i>
    //   d/du_i = x_j - v_i,   d/dx_j = u_i,   d/dv_i = -u_i
    let scale = 1.0 / m as f64;
    let mut row_weight = DVector::zeros(m);
    let mut grad_u = DMatrix::zeros(m, u.ncols());
    let mut grad_v = DMatrix::zeros(m, u.ncols());
    if use_v {
        grad_u += &w_v * v;
        grad_v += w_v.transpose() * u;
        row_weight += w_v.column_sum();
    }
    if use_u {
        grad_u += &w_u * u + w_u.transpose() * u;
        row_weight += w_u.column_sum();
    }
    for i in 0..m {
        let r = row_weight[i];
        for k in 0..u.ncols() {
            grad_u[(i, k)] -= r * v[(i, k)];
            grad_v[(i, k)] -= r * u[(i, k)];
        }
    }
    grad_u *= scale;
    grad_v *= scale;
    Evaluation {
        value,
        grad: Some((grad_u, grad_v)),
    }
}

fn row_sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    (0..a.ncols())
        .map(|k| {
            let t = a[(i, k)] - b[(j, k)];
            t * t
        })
        .sum()
}

fn eval_kcl(
    kernel_a: &KernelSpec,
    kernel_u: &KernelSpec,
    gamma: f64,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    want_grad: bool,
) -> Result<Evaluation> {
    let m = u.nrows();
    let d = u.ncols();
    let mut grad_u = DMatrix::zeros(if want_grad { m } else { 0 }, d);
    let mut grad_v = DMatrix::zeros(if want_grad { m } else { 0 }, d);

    let mut align = 0.0;
    for i in 0..m {
        let x = row_sq_dist(u, i, v, i);
        align += kernel_a.value_unchecked(x)?;
        if want_grad {
            let c = -2.0 * kernel_a.derivative_unchecked(x, 1)? / m as f64;
            for k in 0..d {
                let diff = u[(i, k)] - v[(i, k)];
                grad_u[(i, k)] += c * diff;
                grad_v[(i, k)] -= c * diff;
            }
        }
    }

    let pair_scale = gamma / (m * (m - 1)) as f64;
    let mut uniform = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let x = row_sq_dist(u, i, u, j);
            uniform += kernel_u.value_unchecked(x)?;
            if want_grad {
                // the ordered pair (i, j) moves both endpoints
                let c = 2.0 * pair_scale * kernel_u.derivative_unchecked(x, 1)?;
                for k in 0..d {
                    let diff = u[(i, k)] - u[(j, k)];
                    grad_u[(i, k)] += c * diff;
                    grad_u[(j, k)] -= c * diff;
                }
            }
        }
    }
    let value = -align / m as f64 + pair_scale * uniform;
    Ok(Evaluation {
        value,
        grad: want_grad.then_some((grad_u, grad_v)),
    })
}

fn eval_one_sided(
    spec: &LossSpec,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    want_grad: bool,
) -> Result<Evaluation> {
    match &spec.kind {
        LossKind::Kcl {
            kernel_a,
            kernel_u,
            gamma,
        } => eval_kcl(kernel_a, kernel_u, *gamma, u, v, want_grad),
        _ => {
            let (family, pp) = spec.as_generic().expect("non-kernel losses are generic");
            Ok(eval_generic(family, &pp, u, v, want_grad))
        }
    }
}

/// Evaluates `spec` on raw coordinates, applying the symmetric wrapper.
pub(crate) fn evaluate_raw(
    spec: &LossSpec,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    want_grad: bool,
) -> Result<Evaluation> {
    if u.shape() != v.shape() {
        return Err(Error::DimensionMismatch(format!(
            "U is {:?}, V is {:?}",
            u.shape(),
            v.shape()
        )));
    }
    check_arity(u.nrows())?;
    let forward = eval_one_sided(spec, u, v, want_grad)?;
    if !spec.symmetric {
        return Ok(forward);
    }
    let backward = eval_one_sided(spec, v, u, want_grad)?;
    let value = 0.5 * (forward.value + backward.value);
    let grad = match (forward.grad, backward.grad) {
        (Some((fu, fv)), Some((bv, bu))) => Some(((fu + bu) * 0.5, (fv + bv) * 0.5)),
        _ => None,
    };
    Ok(Evaluation { value, grad })
}

fn generic_value(
    family: GenericFamily,
    u: &EmbeddingBatch,
    v: &EmbeddingBatch,
    pp: &PhiPsi,
) -> Result<f64> {
    check_same_shape(u, v)?;
    check_arity(u.len())?;
    Ok(eval_generic(family, pp, u.points(), v.points(), false).value)
}

/// `L_a`: negatives are the other second-view embeddings `v_j`.
pub fn loss_generic_a(u: &EmbeddingBatch, v: &EmbeddingBatch, pp: &PhiPsi) -> Result<f64> {
    generic_value(GenericFamily::A, u, v, pp)
}

/// `L_b`: negatives are both views `v_j` and `u_j` of every other pair.
pub fn loss_generic_b(u: &EmbeddingBatch, v: &EmbeddingBatch, pp: &PhiPsi) -> Result<f64> {
    generic_value(GenericFamily::B, u, v, pp)
}

/// `L_c`: negatives are the other first-view embeddings `u_j` only.
pub fn loss_generic_c(u: &EmbeddingBatch, v: &EmbeddingBatch, pp: &PhiPsi) -> Result<f64> {
    generic_value(GenericFamily::C, u, v, pp)
}

/// Evaluates any loss specification, including the symmetric wrapper.
pub fn evaluate(spec: &LossSpec, u: &EmbeddingBatch, v: &EmbeddingBatch) -> Result<f64> {
    spec.validate()?;
    check_same_shape(u, v)?;
    Ok(evaluate_raw(spec, u.points(), v.points(), false)?.value)
}

/// InfoNCE, SimCLR, DCL or DHEL.
pub fn loss_named(spec: &LossSpec, u: &EmbeddingBatch, v: &EmbeddingBatch) -> Result<f64> {
    if !Variant::NAMED.contains(&spec.variant()) {
        return Err(Error::InvalidLoss(format!(
            "{} is not a named softmax variant",
            spec.variant()
        )));
    }
    evaluate(spec, u, v)
}

/// Kernel contrastive loss.
pub fn loss_kcl(spec: &LossSpec, u: &EmbeddingBatch, v: &EmbeddingBatch) -> Result<f64> {
    if spec.variant() != Variant::Kcl {
        return Err(Error::InvalidLoss(format!("{} is not kcl", spec.variant())));
    }
    evaluate(spec, u, v)
}

/// Ambient gradients `(dL/dU, dL/dV)`.
pub fn loss_grad(
    spec: &LossSpec,
    u: &EmbeddingBatch,
    v: &EmbeddingBatch,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    spec.validate()?;
    check_same_shape(u, v)?;
    let eval = evaluate_raw(spec, u.points(), v.points(), true)?;
    Ok(eval.grad.expect("gradient requested"))
}

/// Central finite differences of the loss in every ambient coordinate.
pub fn finite_diff_grad(
    spec: &LossSpec,
    u: &EmbeddingBatch,
    v: &EmbeddingBatch,
    h: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(1e-8..=1e-3).contains(&h) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be in [1e-8, 1e-3], got {h}"
        )));
    }
    spec.validate()?;
    check_same_shape(u, v)?;
    let f = |a: &DMatrix<f64>, b: &DMatrix<f64>| -> Result<f64> {
        Ok(evaluate_raw(spec, a, b, false)?.value)
    };
    let mut a = u.points().clone();
    let mut b = v.points().clone();
    let mut grad_u = DMatrix::zeros(a.nrows(), a.ncols());
    let mut grad_v = DMatrix::zeros(a.nrows(), a.ncols());
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            let orig = a[(i, k)];
            a[(i, k)] = orig + h;
            let plus = f(&a, &b)?;
            a[(i, k)] = orig - h;
            let minus = f(&a, &b)?;
            a[(i, k)] = orig;
            grad_u[(i, k)] = (plus - minus) / (2.0 * h);

            let orig = b[(i, k)];
            b[(i, k)] = orig + h;
            let plus = f(&a, &b)?;
            b[(i, k)] = orig - h;
            let minus = f(&a, &b)?;
            b[(i, k)] = orig;
            grad_v[(i, k)] = (plus - minus) / (2.0 * h);
        }
    }
    Ok((grad_u, grad_v))
}

/// Constant subtracted from the expected loss before comparing with the
/// batch-free asymptotic form.
pub fn normalizing_constant(variant: Variant, m: usize) -> Result<f64> {
    check_arity(m)?;
    let m = m as f64;
    match variant {
        Variant::Infonce | Variant::Dhel => Ok((m - 1.0).ln()),
        Variant::Simclr | Variant::Dcl => Ok((2.0 * m - 2.0).ln()),
        Variant::Kcl => Ok(0.0),
        other => Err(Error::InvalidLoss(format!(
            "no normalizing constant for {other}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normalize_rows;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch(rows: &[&[f64]]) -> EmbeddingBatch {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        EmbeddingBatch::from_rows(&rows).unwrap()
    }

    fn antipodal() -> EmbeddingBatch {
        batch(&[&[1.0, 0.0], &[-1.0, 0.0]])
    }

    fn random_batch(rng: &mut ChaCha8Rng, m: usize, d: usize) -> EmbeddingBatch {
        let raw = DMatrix::from_fn(m, d, |_, _| rng.random::<f64>() - 0.5);
        normalize_rows(&raw).unwrap()
    }

    fn exp_pp(psi: ScalarMap) -> PhiPsi {
        PhiPsi::new(ScalarMap::Exp { tau: 1.0 }, psi)
    }

    /// Direct double loop over the defining sums, used as an oracle.
    fn brute_force(
        family: GenericFamily,
        pp: &PhiPsi,
        u: &EmbeddingBatch,
        v: &EmbeddingBatch,
    ) -> f64 {
        let m = u.len();
        let mut total = 0.0;
        for i in 0..m {
            let ui = u.row(i);
            let vi = v.row(i);
            let mut s = 0.0;
            for j in 0..m {
                if j == i {
                    continue;
                }
                if family != GenericFamily::C {
                    s += pp.phi.value((v.row(j) - &vi).dot(&ui));
                }
                if family != GenericFamily::A {
                    s += pp.phi.value((u.row(j) - &vi).dot(&ui));
                }
            }
            total += pp.psi.value(s);
        }
        total / m as f64
    }

    #[test]
    fn generic_a_examples() {
        let l = loss_generic_a(
            &antipodal(),
            &antipodal(),
            &PhiPsi::new(ScalarMap::Exp { tau: 1.0 }, ScalarMap::Log1p),
        )
        .unwrap();
        assert!((l - (1.0 + (-2f64).exp()).ln()).abs() < 1e-15);
        assert!((l - 0.126_928_0).abs() < 1e-7);

        let same = batch(&[&[0.6, 0.8], &[0.6, 0.8]]);
        let pp = exp_pp(ScalarMap::Log1p);
        let l = loss_generic_a(&same, &same, &pp).unwrap();
        assert!((l - pp.psi.value(pp.phi.value(0.0))).abs() < 1e-15);
    }

    #[test]
    fn generic_b_examples() {
        let l = loss_generic_b(&antipodal(), &antipodal(), &exp_pp(ScalarMap::Log1p)).unwrap();
        assert!((l - (1.0 + 2.0 * (-2f64).exp()).ln()).abs() < 1e-15);
        assert!((l - 0.239_544_8).abs() < 1e-7);
        let l = loss_generic_b(&antipodal(), &antipodal(), &exp_pp(ScalarMap::Log)).unwrap();
        assert!((l - (2f64.ln() - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn generic_c_examples() {
        let l = loss_generic_c(&antipodal(), &antipodal(), &exp_pp(ScalarMap::Log)).unwrap();
        assert!((l + 2.0).abs() < 1e-15);

        let tri = EmbeddingBatch::regular_simplex(3, 2).unwrap();
        let l = loss_generic_c(&tri, &tri, &exp_pp(ScalarMap::Log)).unwrap();
        assert!((l - (2f64.ln() - 1.5)).abs() < 1e-12);
        assert!((l + 0.806_852_8).abs() < 1e-7);
    }

    #[test]
    fn generic_c_sees_v_only_through_positives() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_batch(&mut rng, 5, 4);
        let v1 = random_batch(&mut rng, 5, 4);
        let pp = exp_pp(ScalarMap::Log);
        let l1 = loss_generic_c(&u, &v1, &pp).unwrap();
        // reflect each v_i through the line spanned by u_i: <u_i, v_i> is unchanged
        let mut v2 = v1.points().clone();
        for i in 0..5 {
            let ui = u.row(i);
            let vi = v1.row(i);
            let reflected = &ui * (2.0 * ui.dot(&vi)) - vi;
            v2.set_row(i, &reflected.transpose());
        }
        let v2 = EmbeddingBatch::new(v2).unwrap();
        let l2 = loss_generic_c(&u, &v2, &pp).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn identity_maps_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pp = PhiPsi::new(ScalarMap::Identity, ScalarMap::Identity);
        for _ in 0..10 {
            let u = random_batch(&mut rng, 6, 3);
            let v = random_batch(&mut rng, 6, 3);
            for family in [GenericFamily::A, GenericFamily::B, GenericFamily::C] {
                let l = generic_value(family, &u, &v, &pp).unwrap();
                assert!((l - brute_force(family, &pp, &u, &v)).abs() < 1e-12);
            }
            // identity/identity L_a reduces to Gram sums
            let g = u.points() * v.points().transpose();
            let m = 6.0;
            let expected = (g.sum() - m * g.trace()) / m;
            let l = loss_generic_a(&u, &v, &pp).unwrap();
            assert!((l - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn named_examples() {
        let a = antipodal();
        let l = loss_named(&LossSpec::infonce(1.0).unwrap(), &a, &a).unwrap();
        assert!((l - 0.126_928_0).abs() < 1e-7);
        let dhel = LossSpec::dhel(1.0).unwrap();
        assert!((loss_named(&dhel, &a, &a).unwrap() + 2.0).abs() < 1e-15);
        let sym = dhel.clone().with_symmetric(true);
        assert_eq!(
            loss_named(&sym, &a, &a).unwrap(),
            loss_named(&dhel, &a, &a).unwrap()
        );
        let kcl = LossSpec::kcl(
            KernelSpec::Gaussian { t: 1.0 },
            KernelSpec::Gaussian { t: 1.0 },
            1.0,
        )
        .unwrap();
        assert!(loss_named(&kcl, &a, &a).is_err());
    }

    #[test]
    fn named_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for tau in [0.1, 0.5, 1.0] {
            for variant in Variant::NAMED {
                let spec = LossSpec::named(variant, tau).unwrap();
                let (family, pp) = spec.as_generic().unwrap();
                for _ in 0..5 {
                    let u = random_batch(&mut rng, 4, 3);
                    let v = random_batch(&mut rng, 4, 3);
                    let l = loss_named(&spec, &u, &v).unwrap();
                    let oracle = brute_force(family, &pp, &u, &v);
                    assert!((l - oracle).abs() < 1e-12, "{variant} tau={tau}");
                }
            }
        }
    }

    #[test]
    fn kcl_examples() {
        let g = KernelSpec::Gaussian { t: 1.0 };
        let spec = LossSpec::kcl(g, g, 1.0).unwrap();
        let a = antipodal();
        let l = loss_kcl(&spec, &a, &a).unwrap();
        assert!((l - (-1.0 + (-4f64).exp())).abs() < 1e-15);
        assert!((l + 0.981_684_4).abs() < 1e-7);

        let lin = LossSpec::kcl(g, KernelSpec::Linear { t: 1.0 }, 2.5).unwrap();
        let tri = EmbeddingBatch::regular_simplex(3, 2).unwrap();
        let l = loss_kcl(&lin, &tri, &tri).unwrap();
        // alignment term is -kappa_A(0) = -1, uniformity is gamma * (-3)
        assert!((l - (-1.0 - 2.5 * 3.0)).abs() < 1e-12);
    }

    #[test]
    fn kcl_small_gamma_reduces_to_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_batch(&mut rng, 5, 3);
        let v = random_batch(&mut rng, 5, 3);
        let g = KernelSpec::Gaussian { t: 1.0 };
        let spec = LossSpec::kcl(g, g, 1e-300).unwrap();
        let expected: f64 = -(0..5)
            .map(|i| (-(u.row(i) - v.row(i)).norm_squared()).exp())
            .sum::<f64>()
            / 5.0;
        assert!((loss_kcl(&spec, &u, &v).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn kcl_singular_alignment() {
        let spec = LossSpec::kcl(
            KernelSpec::Riesz { s: 1.0 },
            KernelSpec::Gaussian { t: 1.0 },
            1.0,
        )
        .unwrap();
        let a = antipodal();
        assert!(matches!(
            loss_kcl(&spec, &a, &a),
            Err(Error::SingularEvaluation(_))
        ));
    }

    #[test]
    fn arity_errors() {
        let one = batch(&[&[1.0, 0.0]]);
        let pp = exp_pp(ScalarMap::Log);
        assert!(matches!(
            loss_generic_a(&one, &one, &pp),
            Err(Error::InvalidArity(_))
        ));
        assert!(matches!(
            loss_generic_b(&one, &one, &pp),
            Err(Error::InvalidArity(_))
        ));
        assert!(matches!(
            loss_generic_c(&one, &one, &pp),
            Err(Error::InvalidArity(_))
        ));
        assert!(matches!(
            normalizing_constant(Variant::Infonce, 1),
            Err(Error::InvalidArity(_))
        ));
    }

    #[test]
    fn normalizing_constants() {
        assert!((normalizing_constant(Variant::Infonce, 3).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(normalizing_constant(Variant::Kcl, 17).unwrap(), 0.0);
        assert!((normalizing_constant(Variant::Simclr, 2).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((normalizing_constant(Variant::Dcl, 5).unwrap() - 8f64.ln()).abs() < 1e-15);
        assert!((normalizing_constant(Variant::Dhel, 5).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!(normalizing_constant(Variant::GenericA, 5).is_err());
    }

    #[test]
    fn constant_maps_have_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_batch(&mut rng, 4, 3);
        let v = random_batch(&mut rng, 4, 3);
        let spec = LossSpec::generic(
            GenericFamily::B,
            PhiPsi::new(ScalarMap::Constant(2.0), ScalarMap::Constant(-1.0)),
        )
        .unwrap();
        let (fu, fv) = finite_diff_grad(&spec, &u, &v, 1e-6).unwrap();
        assert_eq!(fu.amax(), 0.0);
        assert_eq!(fv.amax(), 0.0);
        let (gu, gv) = loss_grad(&spec, &u, &v).unwrap();
        assert_eq!(gu.amax(), 0.0);
        assert_eq!(gv.amax(), 0.0);
    }

    #[test]
    fn finite_difference_error_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let u = random_batch(&mut rng, 4, 3);
        let v = random_batch(&mut rng, 4, 3);
        let spec = LossSpec::dhel(0.5).unwrap();
        let (gu, _) = loss_grad(&spec, &u, &v).unwrap();
        let err = |h: f64| {
            let (fu, _) = finite_diff_grad(&spec, &u, &v, h).unwrap();
            (fu - &gu).amax()
        };
        let ratio = err(1e-3) / err(5e-4);
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn finite_difference_step_range() {
        let a = antipodal();
        let spec = LossSpec::infonce(1.0).unwrap();
        assert!(finite_diff_grad(&spec, &a, &a, 1e-2).is_err());
        assert!(finite_diff_grad(&spec, &a, &a, 1e-9).is_err());
    }

    #[test]
    fn spec_serde() {
        let spec: LossSpec =
            serde_json::from_str(r#"{"variant":"infonce","tau":0.5,"symmetric":true}"#).unwrap();
        assert_eq!(spec, LossSpec::infonce(0.5).unwrap().with_symmetric(true));
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"variant":"infonce","tau":0.5,"symmetric":true}"#);

        let kcl: LossSpec = serde_json::from_str(
            r#"{"variant":"kcl","gamma":1,"kernel_a":{"family":"gaussian","params":{"t":1}},
                "kernel_u":{"family":"logarithmic","params":{"s":1,"beta":1}}}"#,
        )
        .unwrap();
        assert_eq!(kcl.variant(), Variant::Kcl);
        assert!(!kcl.symmetric);

        let generic: LossSpec =
            serde_json::from_str(r#"{"variant":"generic_b","phi":"exp","psi":"log1p","tau":2}"#)
                .unwrap();
        assert_eq!(
            generic.as_generic().unwrap(),
            LossSpec::simclr(2.0).unwrap().as_generic().unwrap()
        );

        for bad in [
            r#"{"variant":"infonce"}"#,
            r#"{"variant":"infonce","tau":-1}"#,
            r#"{"variant":"infonce","tau":1,"gamma":1}"#,
            r#"{"variant":"infonce","tau":1,"extra":1}"#,
            r#"{"variant":"kcl","gamma":1}"#,
            r#"{"variant":"generic_a","phi":"exp","psi":"log"}"#,
            r#"{"variant":"generic_a","phi":"sin","psi":"log"}"#,
            r#"{"variant":"softmax","tau":1}"#,
        ] {
            assert!(serde_json::from_str::<LossSpec>(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn custom_scalar_functions_plug_in() {
        #[derive(Debug)]
        struct Softplus;
        impl ScalarFunction for Softplus {
            fn value(&self, x: f64) -> f64 {
                x.exp().ln_1p()
            }
            fn derivative(&self, x: f64) -> f64 {
                1.0 / (1.0 + (-x).exp())
            }
            fn name(&self) -> String {
                "softplus".into()
            }
        }
        let pp = PhiPsi::new(ScalarMap::Custom(Arc::new(Softplus)), ScalarMap::Log);
        let spec = LossSpec::generic(GenericFamily::A, pp.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_batch(&mut rng, 5, 3);
        let v = random_batch(&mut rng, 5, 3);
        let l = evaluate(&spec, &u, &v).unwrap();
        assert!((l - brute_force(GenericFamily::A, &pp, &u, &v)).abs() < 1e-12);
        let (gu, gv) = loss_grad(&spec, &u, &v).unwrap();
        let (fu, fv) = finite_diff_grad(&spec, &u, &v, 1e-6).unwrap();
        assert!((gu - fu).amax() < 1e-7);
        assert!((gv - fv).amax() < 1e-7);
    }
}
