//! Riemannian gradient descent over free points on `(S^{d-1})^{2M}` and the
//! optimise-then-certify harness for the optimal configurations.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    alignment_gap, is_cross_polytope, is_regular_simplex, ConfigurationCheck, EmbeddingBatch,
};
use crate::kernels::{check_conditions, KernelSpec};
use crate::losses::{evaluate_raw, LossKind, LossSpec};
use crate::sampling::{derived_rng, sample_uniform_sphere};

/// Restart losses closer than this are considered tied.
pub const RESTART_TIE_TOL: f64 = 1e-12;
pub const DEFAULT_CERTIFY_TOL: f64 = 1e-3;
pub const DEFAULT_ENERGY_RTOL: f64 = 1e-4;
const CONDITION_GRID: usize = 256;

fn default_learning_rate() -> f64 {
    0.05
}
fn default_steps() -> usize {
    20_000
}
fn default_momentum() -> f64 {
    0.9
}
fn default_grad_tol() -> f64 {
    1e-8
}
fn default_restarts() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_learning_rate(),
            steps: default_steps(),
            momentum: default_momentum(),
            grad_tol: default_grad_tol(),
            restarts: default_restarts(),
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be positive");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Result of a single descent from one initialisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Descent {
    pub u: EmbeddingBatch,
    pub v: EmbeddingBatch,
    pub loss: f64,
    pub grad_norm: f64,
    pub converged: bool,
    /// Number of parameter updates performed.
    pub steps_taken: usize,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Best-of-restarts optimisation outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub best: Descent,
    pub best_restart: usize,
    /// Final loss per restart, `None` where the restart failed.
    pub restart_losses: Vec<Option<f64>>,
}

fn project_rows(points: &DMatrix<f64>, g: &mut DMatrix<f64>) {
    for i in 0..points.nrows() {
        let dot = points.row(i).dot(&g.row(i));
        for k in 0..points.ncols() {
            g[(i, k)] -= dot * points[(i, k)];
        }
    }
}

fn retract_rows(points: &mut DMatrix<f64>, step: &DMatrix<f64>) -> Result<()> {
    *points += step;
    for i in 0..points.nrows() {
        let norm = points.row(i).norm();
        if !(norm >= 1e-12) {
            return Err(Error::DegenerateStep { norm });
        }
        let mut row = points.row_mut(i);
        row /= norm;
    }
    Ok(())
}

fn check_unit_rows(points: &DMatrix<f64>) -> bool {
    (0..points.nrows()).all(|i| (points.row(i).norm() - 1.0).abs() <= 1e-10)
}

/// Riemannian descent with heavy-ball momentum from a given starting point.
///
/// Each step takes the ambient gradient, projects it per row onto the
/// tangent space, re-projects the velocity onto the new tangent space,
/// moves along `-lr * velocity` and retracts by renormalising. Stops as soon
/// as the tangent gradient's Frobenius norm is at most `grad_tol`.
pub fn descend(
    spec: &LossSpec,
    init_u: &EmbeddingBatch,
    init_v: &EmbeddingBatch,
    cfg: &OptimizerConfig,
) -> Result<Descent> {
    spec.validate()?;
    cfg.validate()?;
    let mut u = init_u.points().clone();
    let mut v = init_v.points().clone();
    let (m, d) = u.shape();
    let mut vel_u = DMatrix::zeros(m, d);
    let mut vel_v = DMatrix::zeros(m, d);
    let mut trajectory = Vec::new();
    let mut step = 0;
    loop {
        let eval = evaluate_raw(spec, &u, &v, true)?;
        let (mut gu, mut gv) = eval.grad.expect("gradient requested");
        if !eval.value.is_finite() || gu.iter().chain(gv.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        project_rows(&u, &mut gu);
        project_rows(&v, &mut gv);
        let grad_norm = (gu.norm_squared() + gv.norm_squared()).sqrt();
        trajectory.push(TrajectoryPoint {
            step,
            loss: eval.value,
            grad_norm,
        });
        let converged = grad_norm <= cfg.grad_tol;
        if converged || step == cfg.steps {
            return Ok(Descent {
                u: EmbeddingBatch::from_matrix_unchecked(u),
                v: EmbeddingBatch::from_matrix_unchecked(v),
                loss: eval.value,
                grad_norm,
                converged,
                steps_taken: step,
                trajectory,
            });
        }
        project_rows(&u, &mut vel_u);
        project_rows(&v, &mut vel_v);
        vel_u = vel_u * cfg.momentum + gu;
        vel_v = vel_v * cfg.momentum + gv;
        retract_rows(&mut u, &(&vel_u * -cfg.learning_rate))?;
        retract_rows(&mut v, &(&vel_v * -cfg.learning_rate))?;
        step += 1;
        if step % 100 == 0 {
            debug_assert!(check_unit_rows(&u) && check_unit_rows(&v));
        }
    }
}

/// Optimises `M` free positive pairs in dimension `d` from `cfg.restarts`
/// independent uniform initialisations and keeps the lowest final loss.
pub fn optimize_free_embeddings(
    spec: &LossSpec,
    m: usize,
    d: usize,
    cfg: &OptimizerConfig,
) -> Result<Optimized> {
    spec.validate()?;
    cfg.validate()?;
    if m < 2 || d < 1 {
        return Err(Error::InvalidArity(format!(
            "need M >= 2 and d >= 1, got M={m}, d={d}"
        )));
    }
    let runs: Vec<Result<Descent>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = derived_rng(cfg.seed, r as u64);
            let u0 = sample_uniform_sphere(d, m, &mut rng)?;
            let v0 = sample_uniform_sphere(d, m, &mut rng)?;
            descend(spec, &u0, &v0, cfg)
        })
        .collect();

    let restart_losses: Vec<Option<f64>> = runs
        .iter()
        .map(|r| r.as_ref().ok().map(|d| d.loss))
        .collect();
    let mut best: Option<usize> = None;
    for (r, loss) in restart_losses.iter().enumerate() {
        if let Some(loss) = loss {
            let better = match best {
                None => true,
                Some(b) => *loss < restart_losses[b].expect("kept") - RESTART_TIE_TOL,
            };
            if better {
                best = Some(r);
            }
        }
    }
    match best {
        Some(b) => {
            let best_run = runs
                .into_iter()
                .nth(b)
                .expect("index in range")
                .expect("succeeded");
            Ok(Optimized {
                best: best_run,
                best_restart: b,
                restart_losses,
            })
        }
        None => {
            let last = runs
                .into_iter()
                .last()
                .expect("at least one restart")
                .expect_err("all failed");
            Err(Error::AllRestartsFailed {
                restarts: cfg.restarts,
                last: Box::new(last),
            })
        }
    }
}

/// Writes a trajectory as CSV with header `step,loss,grad_norm`.
pub fn write_trajectory_csv<W: Write>(mut out: W, trajectory: &[TrajectoryPoint]) -> Result<()> {
    writeln!(out, "step,loss,grad_norm")?;
    for p in trajectory {
        writeln!(out, "{},{},{}", p.step, p.loss, p.grad_norm)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_trajectory_csv(path: &Path, trajectory: &[TrajectoryPoint]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_trajectory_csv(std::io::BufWriter::new(file), trajectory)
}

/// Mean ordered-pair kernel energy `1/(M(M-1)) sum_{i != j} K(u_i, u_j)`.
pub fn hyperspherical_energy(kernel: &KernelSpec, u: &EmbeddingBatch) -> Result<f64> {
    kernel.validate()?;
    let m = u.len();
    if m < 2 {
        return Err(Error::InvalidArity(format!("need M >= 2, got {m}")));
    }
    let p = u.points();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                total += kernel.value_unchecked((p.row(i) - p.row(j)).norm_squared())?;
            }
        }
    }
    Ok(total / (m * (m - 1)) as f64)
}

/// Energy of the `2d`-point cross-polytope: each point sees one antipode at
/// squared distance 4 and `2d - 2` orthogonal points at squared distance 2.
pub fn cross_polytope_energy(kernel: &KernelSpec, d: usize) -> Result<f64> {
    kernel.validate()?;
    if d < 1 {
        return Err(Error::InvalidArity("need d >= 1".into()));
    }
    let far = kernel.value_unchecked(4.0)?;
    let near = kernel.value_unchecked(2.0)?;
    let m = 2 * d;
    Ok((far + (m as f64 - 2.0) * near) / (m as f64 - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremVerdict {
    pub loss_spec: LossSpec,
    #[serde(rename = "M")]
    pub m: usize,
    pub d: usize,
    pub best_loss: f64,
    pub alignment_gap: f64,
    pub simplex_check: Option<ConfigurationCheck>,
    pub cross_polytope_check: Option<ConfigurationCheck>,
    pub energy: Option<f64>,
    pub reference_energy: Option<f64>,
    pub energy_rel_error: Option<f64>,
    pub converged: bool,
    pub final_grad_norm: f64,
    pub steps_taken: usize,
    pub restarts_used: usize,
    pub best_restart: usize,
    pub restart_losses: Vec<Option<f64>>,
    pub tol: f64,
    pub passed: bool,
}

fn require_symmetric(spec: &LossSpec) -> Result<()> {
    if !spec.symmetric {
        return Err(Error::InvalidLoss(
            "configuration checks need the symmetric form of the loss".into(),
        ));
    }
    Ok(())
}

/// Optimises `M <= d + 1` free pairs and certifies that the optimum has
/// `U = V` forming a regular simplex.
pub fn verify_simplex_theorem(
    spec: &LossSpec,
    m: usize,
    d: usize,
    cfg: &OptimizerConfig,
    tol: f64,
) -> Result<TheoremVerdict> {
    if m < 2 || m > d + 1 {
        return Err(Error::InvalidArity(format!(
            "simplex optimum needs 1 < M <= d+1, got M={m}, d={d}"
        )));
    }
    require_symmetric(spec)?;
    let run = optimize_free_embeddings(spec, m, d, cfg)?;
    let best = &run.best;
    let gap = alignment_gap(&best.u, &best.v)?;
    let simplex = is_regular_simplex(&best.u, tol)?;
    let passed = gap <= tol && simplex.passed;
    Ok(TheoremVerdict {
        loss_spec: spec.clone(),
        m,
        d,
        best_loss: best.loss,
        alignment_gap: gap,
        simplex_check: Some(simplex),
        cross_polytope_check: None,
        energy: None,
        reference_energy: None,
        energy_rel_error: None,
        converged: best.converged,
        final_grad_norm: best.grad_norm,
        steps_taken: best.steps_taken,
        restarts_used: cfg.restarts,
        best_restart: run.best_restart,
        restart_losses: run.restart_losses,
        tol,
        passed,
    })
}

/// Optimises `M = 2d` free pairs under a kernel loss whose uniformity kernel
/// is completely monotone, and accepts either a geometric cross-polytope
/// certificate at `tol` or a uniformity energy within `energy_rtol`
/// (relative) of the cross-polytope energy.
pub fn verify_cross_polytope(
    spec: &LossSpec,
    d: usize,
    cfg: &OptimizerConfig,
    tol: f64,
    energy_rtol: f64,
) -> Result<TheoremVerdict> {
    let LossKind::Kcl { kernel_u, .. } = &spec.kind else {
        return Err(Error::InvalidLoss(format!(
            "cross-polytope check needs a kcl loss, got {}",
            spec.variant()
        )));
    };
    require_symmetric(spec)?;
    if d < 1 {
        return Err(Error::InvalidArity("need d >= 1".into()));
    }
    let report = check_conditions(kernel_u, CONDITION_GRID)?;
    if !report.completely_monotone.holds {
        return Err(Error::ConditionViolation(format!(
            "uniformity kernel {} fails the complete monotonicity screen",
            kernel_u.family()
        )));
    }
    let m = 2 * d;
    let run = optimize_free_embeddings(spec, m, d, cfg)?;
    let best = &run.best;
    let gap = alignment_gap(&best.u, &best.v)?;
    let geometric = is_cross_polytope(&best.u, tol)?;
    let energy = hyperspherical_energy(kernel_u, &best.u)?;
    let reference = cross_polytope_energy(kernel_u, d)?;
    let rel = (energy - reference).abs() / reference.abs().max(f64::MIN_POSITIVE);
    let passed = geometric.passed || rel <= energy_rtol;
    Ok(TheoremVerdict {
        loss_spec: spec.clone(),
        m,
        d,
        best_loss: best.loss,
        alignment_gap: gap,
        simplex_check: None,
        cross_polytope_check: Some(geometric),
        energy: Some(energy),
        reference_energy: Some(reference),
        energy_rel_error: Some(rel),
        converged: best.converged,
        final_grad_norm: best.grad_norm,
        steps_taken: best.steps_taken,
        restarts_used: cfg.restarts,
        best_restart: run.best_restart,
        restart_losses: run.restart_losses,
        tol,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::gram;
    use crate::losses::evaluate;

    fn gaussian() -> KernelSpec {
        KernelSpec::Gaussian { t: 1.0 }
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg: OptimizerConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, OptimizerConfig::default());
        assert!(serde_json::from_str::<OptimizerConfig>(r#"{"lr":1}"#).is_err());
        for bad in [
            OptimizerConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            OptimizerConfig {
                steps: 0,
                ..Default::default()
            },
            OptimizerConfig {
                momentum: 1.0,
                ..Default::default()
            },
            OptimizerConfig {
                grad_tol: 0.0,
                ..Default::default()
            },
            OptimizerConfig {
                restarts: 0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn dhel_recovers_simplex() {
        let spec = LossSpec::dhel(0.5).unwrap().with_symmetric(true);
        let verdict =
            verify_simplex_theorem(&spec, 4, 8, &OptimizerConfig::default(), 1e-3).unwrap();
        assert!(verdict.converged);
        assert!(verdict.passed, "{verdict:?}");
        assert!(verdict.alignment_gap < 1e-3);
    }

    #[test]
    fn infonce_triangle_has_gram_minus_half() {
        let spec = LossSpec::infonce(1.0).unwrap().with_symmetric(true);
        let cfg = OptimizerConfig::default();
        let run = optimize_free_embeddings(&spec, 3, 4, &cfg).unwrap();
        let g = gram(&run.best.u, &run.best.u).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((g[(i, j)] + 0.5).abs() < 1e-3, "{g}");
                }
            }
        }
    }

    #[test]
    fn simclr_pair_is_antipodal() {
        let spec = LossSpec::simclr(1.0).unwrap().with_symmetric(true);
        let verdict =
            verify_simplex_theorem(&spec, 2, 2, &OptimizerConfig::default(), 1e-3).unwrap();
        assert!(verdict.passed);
        let run = optimize_free_embeddings(&spec, 2, 2, &OptimizerConfig::default()).unwrap();
        let g = gram(&run.best.u, &run.best.u).unwrap();
        assert!((g[(0, 1)] + 1.0).abs() < 1e-3);
    }

    #[test]
    fn kcl_gaussian_recovers_simplex() {
        let spec = LossSpec::kcl(gaussian(), gaussian(), 1.0)
            .unwrap()
            .with_symmetric(true);
        let verdict =
            verify_simplex_theorem(&spec, 5, 8, &OptimizerConfig::default(), 1e-3).unwrap();
        assert!(verdict.passed, "{verdict:?}");
    }

    #[test]
    fn simplex_arity_and_symmetry_are_enforced() {
        let spec = LossSpec::infonce(1.0).unwrap();
        let cfg = OptimizerConfig::default();
        assert!(matches!(
            verify_simplex_theorem(&spec.clone().with_symmetric(true), 6, 4, &cfg, 1e-3),
            Err(Error::InvalidArity(_))
        ));
        assert!(matches!(
            verify_simplex_theorem(&spec, 3, 4, &cfg, 1e-3),
            Err(Error::InvalidLoss(_))
        ));
    }

    #[test]
    fn optimum_is_a_fixed_point() {
        let spec = LossSpec::infonce(0.5).unwrap().with_symmetric(true);
        let s = EmbeddingBatch::regular_simplex(4, 6).unwrap();
        let run = descend(&spec, &s, &s, &OptimizerConfig::default()).unwrap();
        assert!(run.converged);
        assert_eq!(run.steps_taken, 0);
        assert_eq!(run.trajectory.len(), 1);
    }

    #[test]
    fn trajectory_settles_monotonically() {
        let spec = LossSpec::infonce(1.0).unwrap().with_symmetric(true);
        let cfg = OptimizerConfig {
            learning_rate: 0.05,
            momentum: 0.0,
            steps: 2000,
            restarts: 1,
            ..Default::default()
        };
        let run = optimize_free_embeddings(&spec, 4, 8, &cfg).unwrap();
        let traj = &run.best.trajectory;
        let skip = traj.len() / 10;
        for w in traj[skip..].windows(2) {
            assert!(w[1].loss <= w[0].loss + 1e-12, "{:?}", w);
        }
    }

    #[test]
    fn restarts_are_deterministic() {
        let spec = LossSpec::dcl(0.5).unwrap().with_symmetric(true);
        let cfg = OptimizerConfig {
            steps: 300,
            ..Default::default()
        };
        let a = optimize_free_embeddings(&spec, 4, 5, &cfg).unwrap();
        let b = optimize_free_embeddings(&spec, 4, 5, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.restart_losses.len(), 5);
        let min = a
            .restart_losses
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert!(a.best.loss <= min + RESTART_TIE_TOL);
    }

    #[test]
    fn failing_restarts_surface_as_error() {
        // the singular Riesz kernel blows up once U = V
        let spec = LossSpec::kcl(KernelSpec::Riesz { s: 1.0 }, gaussian(), 1.0)
            .unwrap()
            .with_symmetric(true);
        let s = EmbeddingBatch::regular_simplex(3, 3).unwrap();
        assert!(descend(&spec, &s, &s, &OptimizerConfig::default()).is_err());
        let cfg = OptimizerConfig {
            restarts: 2,
            steps: 5000,
            ..Default::default()
        };
        match optimize_free_embeddings(&spec, 3, 3, &cfg) {
            Err(Error::AllRestartsFailed { restarts: 2, .. }) => {}
            Ok(run) => assert!(run.restart_losses.iter().any(Option::is_some)),
            Err(other) => panic!("{other}"),
        }
    }

    #[test]
    fn energy_fixtures() {
        let g = gaussian();
        let pair = EmbeddingBatch::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert!((hyperspherical_energy(&g, &pair).unwrap() - (-4.0f64).exp()).abs() < 1e-15);
        let tri = EmbeddingBatch::regular_simplex(3, 2).unwrap();
        assert!((hyperspherical_energy(&g, &tri).unwrap() - (-3.0f64).exp()).abs() < 1e-12);
        let cp = EmbeddingBatch::cross_polytope(2).unwrap();
        let enumerated = (4.0 * (-4.0f64).exp() + 8.0 * (-2.0f64).exp()) / 12.0;
        assert!((hyperspherical_energy(&g, &cp).unwrap() - enumerated).abs() < 1e-15);
        assert!((cross_polytope_energy(&g, 2).unwrap() - enumerated).abs() < 1e-15);
        for d in 1..6 {
            let cp = EmbeddingBatch::cross_polytope(d).unwrap();
            let e = hyperspherical_energy(&g, &cp).unwrap();
            assert!((e - cross_polytope_energy(&g, d).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn cross_polytope_gaussian_and_linear() {
        let cfg = OptimizerConfig::default();
        for k in [gaussian(), KernelSpec::Linear { t: 1.0 }] {
            let spec = LossSpec::kcl(gaussian(), k, 1.0)
                .unwrap()
                .with_symmetric(true);
            let verdict = verify_cross_polytope(&spec, 2, &cfg, 1e-3, 1e-4).unwrap();
            assert!(verdict.passed, "{verdict:?}");
        }
    }

    #[test]
    fn cross_polytope_rejects_other_losses_and_simplices() {
        let spec = LossSpec::infonce(1.0).unwrap().with_symmetric(true);
        assert!(matches!(
            verify_cross_polytope(&spec, 2, &OptimizerConfig::default(), 1e-3, 1e-4),
            Err(Error::InvalidLoss(_))
        ));
        let simplex = EmbeddingBatch::regular_simplex(4, 3).unwrap();
        assert!(!is_cross_polytope(&simplex, 1e-3).unwrap().passed);
    }

    #[test]
    fn simplex_beats_random_configurations() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let s = EmbeddingBatch::regular_simplex(4, 5).unwrap();
        let spec = LossSpec::simclr(0.5).unwrap().with_symmetric(true);
        let opt = evaluate(&spec, &s, &s).unwrap();
        for _ in 0..100 {
            let u = sample_uniform_sphere(5, 4, &mut rng).unwrap();
            let v = sample_uniform_sphere(5, 4, &mut rng).unwrap();
            assert!(evaluate(&spec, &u, &v).unwrap() > opt);
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let traj = [
            TrajectoryPoint {
                step: 0,
                loss: 1.5,
                grad_norm: 0.25,
            },
            TrajectoryPoint {
                step: 1,
                loss: 1.25,
                grad_norm: 0.125,
            },
        ];
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,loss,grad_norm\n0,1.5,0.25\n1,1.25,0.125\n"
        );
    }
}
