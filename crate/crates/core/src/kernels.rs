//! Radial kernels `K(x, y) = kappa(|x - y|^2)` on the sphere, their closed-form
//! derivatives, and grid screens for the monotonicity conditions the
//! minimiser results depend on.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest squared distance between two unit vectors.
pub const MAX_SQ_DIST: f64 = 4.0;

const DOMAIN_SLACK: f64 = 1e-9;
const MAX_DERIVATIVE_ORDER: u32 = 6;
const GRID_START: f64 = 1e-6;
const CM_ORDER: u32 = 4;

/// A radial kernel profile `kappa` from the standard catalogue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernelSpec", into = "RawKernelSpec")]
pub enum KernelSpec {
    /// `kappa(x) = -t x`
    Linear { t: f64 },
    /// `kappa(x) = exp(-t x)`
    Gaussian { t: f64 },
    /// `kappa(x) = sign(s) x^{-s/2}`
    Riesz { s: f64 },
    /// `kappa(x) = -log(s x + beta) / 2`
    Logarithmic { s: f64, beta: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernelSpec {
    family: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

impl TryFrom<RawKernelSpec> for KernelSpec {
    type Error = Error;

    fn try_from(raw: RawKernelSpec) -> Result<Self> {
        let expected: &[&str] = match raw.family.as_str() {
            "linear" | "gaussian" => &["t"],
            "riesz" => &["s"],
            "logarithmic" => &["s", "beta"],
            other => return Err(Error::InvalidKernel(format!("unknown family `{other}`"))),
        };
        for key in raw.params.keys() {
            if !expected.contains(&key.as_str()) {
                return Err(Error::InvalidKernel(format!(
                    "unexpected parameter `{key}` for {} kernel",
                    raw.family
                )));
            }
        }
        let get = |name: &str| {
            raw.params.get(name).copied().ok_or_else(|| {
                Error::InvalidKernel(format!("{} kernel requires `{name}`", raw.family))
            })
        };
        let spec = match raw.family.as_str() {
            "linear" => KernelSpec::Linear { t: get("t")? },
            "gaussian" => KernelSpec::Gaussian { t: get("t")? },
            "riesz" => KernelSpec::Riesz { s: get("s")? },
            _ => KernelSpec::Logarithmic {
                s: get("s")?,
                beta: get("beta")?,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<KernelSpec> for RawKernelSpec {
    fn from(spec: KernelSpec) -> Self {
        let (family, params) = match spec {
            KernelSpec::Linear { t } => ("linear", vec![("t", t)]),
            KernelSpec::Gaussian { t } => ("gaussian", vec![("t", t)]),
            KernelSpec::Riesz { s } => ("riesz", vec![("s", s)]),
            KernelSpec::Logarithmic { s, beta } => ("logarithmic", vec![("s", s), ("beta", beta)]),
        };
        RawKernelSpec {
            family: family.to_string(),
            params: params
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            KernelSpec::Linear { t } | KernelSpec::Gaussian { t } => t > 0.0 && t.is_finite(),
            KernelSpec::Riesz { s } => s > -2.0 && s != 0.0 && s.is_finite(),
            KernelSpec::Logarithmic { s, beta } => {
                s > 0.0 && beta > 0.0 && s.is_finite() && beta.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidKernel(format!(
                "parameters out of range: {self:?}"
            )))
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            KernelSpec::Linear { .. } => "linear",
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::Riesz { .. } => "riesz",
            KernelSpec::Logarithmic { .. } => "logarithmic",
        }
    }

    /// `kappa(x)` for any `x >= 0`, without the `[0, 4]` domain check.
    /// At `x = 0` this is the right limit; `Riesz` with `s > 0` has none.
    pub(crate) fn value_unchecked(&self, x: f64) -> Result<f64> {
        let x = x.max(0.0);
        let v = match *self {
            KernelSpec::Linear { t } => -t * x,
            KernelSpec::Gaussian { t } => (-t * x).exp(),
            KernelSpec::Riesz { s } => {
                if x == 0.0 {
                    if s > 0.0 {
                        return Err(Error::SingularEvaluation(format!(
                            "riesz kernel with s={s} is unbounded at 0"
                        )));
                    }
                    0.0
                } else {
                    s.signum() * x.powf(-s / 2.0)
                }
            }
            KernelSpec::Logarithmic { s, beta } => -0.5 * (s * x + beta).ln(),
        };
        Ok(v)
    }

    /// `d^n kappa / dx^n` for any `x >= 0`.
    pub(crate) fn derivative_unchecked(&self, x: f64, order: u32) -> Result<f64> {
        let x = x.max(0.0);
        let v = match *self {
            KernelSpec::Linear { t } => {
                if order == 1 {
                    -t
                } else {
                    0.0
                }
            }
            KernelSpec::Gaussian { t } => (-t).powi(order as i32) * (-t * x).exp(),
            KernelSpec::Riesz { s } => {
                let a = -s / 2.0;
                let falling: f64 = (0..order).map(|k| a - k as f64).product();
                s.signum() * falling * x.powf(a - order as f64)
            }
            KernelSpec::Logarithmic { s, beta } => {
                // -(1/2) (-1)^{n-1} (n-1)! s^n / (s x + beta)^n
                let fact: f64 = (1..order).map(f64::from).product();
                let sign = if order % 2 == 1 { 1.0 } else { -1.0 };
                -0.5 * sign * fact * (s / (s * x + beta)).powi(order as i32)
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::SingularEvaluation(format!(
                "derivative of order {order} of {} kernel at x={x}",
                self.family()
            )))
        }
    }
}

fn check_domain(x: f64) -> Result<f64> {
    if !(-DOMAIN_SLACK..=MAX_SQ_DIST + DOMAIN_SLACK).contains(&x) {
        return Err(Error::InvalidArgument(format!(
            "squared distance {x} outside [0, 4]"
        )));
    }
    Ok(x.clamp(0.0, MAX_SQ_DIST))
}

/// `kappa(x)` for a squared distance `x` in `[0, 4]`.
pub fn kernel_eval(spec: &KernelSpec, x: f64) -> Result<f64> {
    spec.validate()?;
    spec.value_unchecked(check_domain(x)?)
}

/// `K(u, v) = kappa(|u - v|^2)`.
pub fn kernel_eval_pair(spec: &KernelSpec, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    kernel_eval(spec, (u - v).norm_squared())
}

/// Closed-form derivative of order `1..=6`.
pub fn kernel_derivative(spec: &KernelSpec, x: f64, order: u32) -> Result<f64> {
    spec.validate()?;
    if order == 0 || order > MAX_DERIVATIVE_ORDER {
        return Err(Error::InvalidArgument(format!(
            "derivative order must be in 1..={MAX_DERIVATIVE_ORDER}, got {order}"
        )));
    }
    let x = check_domain(x)?;
    if x == 0.0 && matches!(spec, KernelSpec::Riesz { .. }) {
        return Err(Error::SingularEvaluation(
            "riesz derivatives are not defined at 0".into(),
        ));
    }
    spec.derivative_unchecked(x, order)
}

/// Result of screening one predicate over the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateOutcome {
    pub holds: bool,
    /// Grid point with the smallest margin.
    pub worst_x: f64,
    /// Smallest margin seen; the predicate requires it `> 0` (strict) or `>= 0`.
    pub worst_margin: f64,
}

/// Per-predicate outcomes of [`check_conditions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub kernel: KernelSpec,
    pub grid_size: usize,
    pub decreasing: PredicateOutcome,
    pub convex: PredicateOutcome,
    pub strictly_convex: PredicateOutcome,
    pub completely_monotone: PredicateOutcome,
    pub strictly_completely_monotone: PredicateOutcome,
    pub neg_derivative_strictly_completely_monotone: PredicateOutcome,
}

impl ConditionReport {
    pub fn predicates(&self) -> BTreeMap<&'static str, bool> {
        BTreeMap::from([
            ("decreasing", self.decreasing.holds),
            ("convex", self.convex.holds),
            ("strictly_convex", self.strictly_convex.holds),
            ("completely_monotone", self.completely_monotone.holds),
            (
                "strictly_completely_monotone",
                self.strictly_completely_monotone.holds,
            ),
            (
                "neg_derivative_strictly_completely_monotone",
                self.neg_derivative_strictly_completely_monotone.holds,
            ),
        ])
    }
}

struct Screen {
    strict: bool,
    worst_x: f64,
    worst_margin: f64,
}

impl Screen {
    fn new(strict: bool) -> Self {
        Self {
            strict,
            worst_x: f64::NAN,
            worst_margin: f64::INFINITY,
        }
    }

    fn observe(&mut self, x: f64, margin: f64) {
        if margin < self.worst_margin || margin.is_nan() {
            self.worst_margin = margin;
            self.worst_x = x;
        }
    }

    fn finish(self) -> PredicateOutcome {
        let m = self.worst_margin;
        let holds = if self.strict { m > 0.0 } else { m >= 0.0 };
        PredicateOutcome {
            holds,
            worst_x: self.worst_x,
            worst_margin: m,
        }
    }
}

/// Screens the monotonicity and convexity predicates on a uniform grid over
/// `[1e-6, 4]`.
///
/// Complete monotonicity is checked through orders `1..=4`:
/// `(-1)^n kappa^(n) >= 0`. The zeroth-order sign is not required because
/// energies are invariant to adding a constant to the kernel (the linear and
/// logarithmic profiles are negative on part of the domain).
/// `-kappa'` strictly completely monotone means `(-1)^n kappa^(n) > 0` for
/// `n = 1..=5`.
pub fn check_conditions(spec: &KernelSpec, grid_size: usize) -> Result<ConditionReport> {
    spec.validate()?;
    if grid_size < 8 {
        return Err(Error::InvalidArgument(format!(
            "grid_size must be at least 8, got {grid_size}"
        )));
    }
    let mut decreasing = Screen::new(true);
    let mut convex = Screen::new(false);
    let mut strictly_convex = Screen::new(true);
    let mut cm = Screen::new(false);
    let mut strict_cm = Screen::new(true);
    let mut neg_deriv_cm = Screen::new(true);

    let step = (MAX_SQ_DIST - GRID_START) / (grid_size - 1) as f64;
    for k in 0..grid_size {
        let x = if k + 1 == grid_size {
            MAX_SQ_DIST
        } else {
            GRID_START + k as f64 * step
        };
        // signed[n-1] = (-1)^n kappa^(n)(x)
        let mut signed = [0.0; (CM_ORDER + 1) as usize];
        for n in 1..=CM_ORDER + 1 {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            signed[(n - 1) as usize] = sign * spec.derivative_unchecked(x, n)?;
        }
        decreasing.observe(x, signed[0]);
        convex.observe(x, signed[1]);
        strictly_convex.observe(x, signed[1]);
        let cm_margin = signed[..CM_ORDER as usize]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        cm.observe(x, cm_margin);
        strict_cm.observe(x, cm_margin);
        neg_deriv_cm.observe(x, signed.iter().copied().fold(f64::INFINITY, f64::min));
    }

    Ok(ConditionReport {
        kernel: *spec,
        grid_size,
        decreasing: decreasing.finish(),
        convex: convex.finish(),
        strictly_convex: strictly_convex.finish(),
        completely_monotone: cm.finish(),
        strictly_completely_monotone: strict_cm.finish(),
        neg_derivative_strictly_completely_monotone: neg_deriv_cm.finish(),
    })
}
