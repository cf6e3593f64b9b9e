//! JSON-configured experiment runner behind the `sphere-cl` binary.
//!
//! A run reads one [`ExperimentConfig`], fills in defaults, executes the
//! command and writes a result document with the fixed top-level keys
//! `command`, `config_echo`, `results`, `wall_time_s` and `version`.
//! Re-running from `config_echo` reproduces `results` byte for byte.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geometry::EmbeddingBatch;
use crate::kernels::{check_conditions, KernelSpec};
use crate::losses::{evaluate, finite_diff_grad, loss_grad, normalizing_constant, LossSpec};
use crate::metrics::{metrics_report, MetricsParams, DEFAULT_N_REF, DEFAULT_UNIFORMITY_T};
use crate::optimize::{
    optimize_free_embeddings, save_trajectory_csv, verify_cross_polytope, verify_simplex_theorem,
    OptimizerConfig, DEFAULT_CERTIFY_TOL, DEFAULT_ENERGY_RTOL,
};
use crate::sampling::{
    convergence_study, estimate_expected_loss, sample_positive_batch, ConvergenceStudy,
    SphereDistribution,
};

/// Schema version of the result document.
pub const RESULTS_VERSION: &str = "1.0.0";
pub const THREADS_ENV: &str = "SPHERE_CL_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERDICT_FAILED: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

const DEFAULT_GRID_SIZE: usize = 256;
const DEFAULT_FD_STEP: f64 = 1e-6;
const DEFAULT_GRAD_RTOL: f64 = 1e-5;
const DEFAULT_N_BATCHES: usize = 400;
const DEFAULT_ASYMPTOTIC_SAMPLES: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    LossEval,
    GradCheck,
    Optimize,
    VerifyTheorems,
    Expectation,
    Convergence,
    Metrics,
    KernelCheck,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("unit variant");
        f.write_str(v.as_str().expect("string tag"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Embeddings {
    pub u: EmbeddingBatch,
    pub v: EmbeddingBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Simplex,
    CrossPolytope,
}

/// One optimise-then-certify case for `verify-theorems`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoremCase {
    pub check: CheckKind,
    pub loss: LossSpec,
    /// Ignored for `cross_polytope`, where `M = 2d`.
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<SphereDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<Embeddings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    /// Finite-difference step for `grad-check`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_batches: Option<usize>,
    #[serde(rename = "M_list", default, skip_serializing_if = "Option::is_none")]
    pub m_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_ref: Option<usize>,
    /// Uniformity metric temperature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_rtol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cases: Option<Vec<TheoremCase>>,
    /// CSV trace: the best trajectory for `optimize`, the per-M table for
    /// `convergence`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_csv: Option<String>,
}

fn missing(command: Command, field: &str) -> Error {
    Error::Config(format!("{command} needs `{field}`"))
}

fn unused(command: Command, field: &str) -> Error {
    Error::Config(format!("`{field}` is not used by {command}"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks per-command requirements and fills every default, so that the
    /// returned config fully determines the run.
    pub fn resolve(mut self) -> Result<Self> {
        let c = self.command;
        if self.output_path.is_none() {
            return Err(missing(c, "output_path"));
        }
        let uses_batch = matches!(c, Command::LossEval | Command::GradCheck | Command::Metrics);
        let allowed: &[&str] = match c {
            Command::LossEval => &["loss", "embeddings", "distribution", "M"],
            Command::GradCheck => &["loss", "embeddings", "distribution", "M", "h", "tol"],
            Command::Optimize => &["loss", "optimizer", "M", "d", "trace_csv"],
            Command::VerifyTheorems => {
                &["loss", "optimizer", "M", "d", "cases", "tol", "energy_rtol"]
            }
            Command::Expectation => &["loss", "distribution", "M", "n_batches"],
            Command::Convergence => &[
                "loss",
                "distribution",
                "M_list",
                "n_batches",
                "n_samples",
                "trace_csv",
            ],
            Command::Metrics => &["embeddings", "distribution", "M", "n_ref", "t"],
            Command::KernelCheck => &["kernel", "grid_size"],
        };
        let present = [
            ("loss", self.loss.is_some()),
            ("distribution", self.distribution.is_some()),
            ("optimizer", self.optimizer.is_some()),
            ("M", self.m.is_some()),
            ("d", self.d.is_some()),
            ("embeddings", self.embeddings.is_some()),
            ("kernel", self.kernel.is_some()),
            ("grid_size", self.grid_size.is_some()),
            ("h", self.h.is_some()),
            ("n_batches", self.n_batches.is_some()),
            ("M_list", self.m_list.is_some()),
            ("n_samples", self.n_samples.is_some()),
            ("n_ref", self.n_ref.is_some()),
            ("t", self.t.is_some()),
            ("tol", self.tol.is_some()),
            ("energy_rtol", self.energy_rtol.is_some()),
            ("cases", self.cases.is_some()),
            ("trace_csv", self.trace_csv.is_some()),
        ];
        for (field, is_set) in present {
            if is_set && !allowed.contains(&field) {
                return Err(unused(c, field));
            }
        }

        if uses_batch {
            match (&self.embeddings, &self.distribution, self.m) {
                (Some(_), None, None) => {}
                (None, Some(_), Some(_)) => {}
                _ => {
                    return Err(Error::Config(format!(
                        "{c} needs either `embeddings` or both `distribution` and `M`"
                    )))
                }
            }
        }
        if let Some(spec) = &self.loss {
            spec.validate()?;
        }
        if let Some(opt) = &mut self.optimizer {
            opt.validate()?;
        }

        match c {
            Command::LossEval => {
                self.loss.as_ref().ok_or_else(|| missing(c, "loss"))?;
            }
            Command::GradCheck => {
                self.loss.as_ref().ok_or_else(|| missing(c, "loss"))?;
                self.h.get_or_insert(DEFAULT_FD_STEP);
                self.tol.get_or_insert(DEFAULT_GRAD_RTOL);
            }
            Command::Optimize => {
                self.loss.as_ref().ok_or_else(|| missing(c, "loss"))?;
                self.m.ok_or_else(|| missing(c, "M"))?;
                self.d.ok_or_else(|| missing(c, "d"))?;
                self.resolve_optimizer();
            }
            Command::VerifyTheorems => {
                if self.cases.is_none() {
                    let loss = self
                        .loss
                        .take()
                        .ok_or_else(|| missing(c, "loss or cases"))?;
                    let m = self.m.take().ok_or_else(|| missing(c, "M"))?;
                    let d = self.d.take().ok_or_else(|| missing(c, "d"))?;
                    self.cases = Some(vec![TheoremCase {
                        check: CheckKind::Simplex,
                        loss,
                        m: Some(m),
                        d,
                    }]);
                } else if self.loss.is_some() || self.m.is_some() || self.d.is_some() {
                    return Err(Error::Config(
                        "give either `cases` or a single `loss`/`M`/`d`, not both".into(),
                    ));
                }
                let cases = self.cases.as_mut().expect("set above");
                if cases.is_empty() {
                    return Err(missing(c, "at least one case"));
                }
                for case in cases.iter_mut() {
                    case.loss.validate()?;
                    match case.check {
                        CheckKind::Simplex if case.m.is_none() => {
                            return Err(missing(c, "cases[].M"))
                        }
                        CheckKind::CrossPolytope => match case.m {
                            Some(m) if m != 2 * case.d => {
                                return Err(Error::Config(format!(
                                    "cross_polytope case needs M = 2d, got M={m}, d={}",
                                    case.d
                                )))
                            }
                            _ => case.m = Some(2 * case.d),
                        },
                        _ => {}
                    }
                }
                self.tol.get_or_insert(DEFAULT_CERTIFY_TOL);
                self.energy_rtol.get_or_insert(DEFAULT_ENERGY_RTOL);
                self.resolve_optimizer();
            }
            Command::Expectation => {
                self.loss.as_ref().ok_or_else(|| missing(c, "loss"))?;
                self.distribution
                    .as_ref()
                    .ok_or_else(|| missing(c, "distribution"))?;
                self.m.ok_or_else(|| missing(c, "M"))?;
                self.n_batches.get_or_insert(DEFAULT_N_BATCHES);
            }
            Command::Convergence => {
                self.loss.as_ref().ok_or_else(|| missing(c, "loss"))?;
                self.distribution
                    .as_ref()
                    .ok_or_else(|| missing(c, "distribution"))?;
                self.m_list.as_ref().ok_or_else(|| missing(c, "M_list"))?;
                self.n_batches.get_or_insert(DEFAULT_N_BATCHES);
                self.n_samples.get_or_insert(DEFAULT_ASYMPTOTIC_SAMPLES);
            }
            Command::Metrics => {
                self.t.get_or_insert(DEFAULT_UNIFORMITY_T);
                self.n_ref.get_or_insert(DEFAULT_N_REF);
            }
            Command::KernelCheck => {
                self.kernel
                    .as_ref()
                    .ok_or_else(|| missing(c, "kernel"))?
                    .validate()?;
                self.grid_size.get_or_insert(DEFAULT_GRID_SIZE);
            }
        }
        Ok(self)
    }

    /// The optimiser always draws from the run seed.
    fn resolve_optimizer(&mut self) {
        let seed = self.seed;
        self.optimizer
            .get_or_insert_with(OptimizerConfig::default)
            .seed = seed;
    }
}

fn batch_for(
    cfg: &ExperimentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(EmbeddingBatch, EmbeddingBatch)> {
    match (&cfg.embeddings, &cfg.distribution, cfg.m) {
        (Some(e), _, _) => Ok((e.u.clone(), e.v.clone())),
        (None, Some(dist), Some(m)) => sample_positive_batch(dist, m, rng),
        _ => unreachable!("checked by resolve"),
    }
}

fn convergence_csv(path: &Path, study: &ConvergenceStudy) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "M,mean,normalized_mean,stderr,gap,asymptotic")?;
    for p in &study.points {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.m, p.mean, p.normalized_mean, p.stderr, p.gap, study.asymptotic.value
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Outcome of executing a resolved config.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub results: Value,
    /// False only when a `verify-theorems` verdict failed.
    pub all_passed: bool,
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("result types serialise")
}

/// Runs a resolved config on the current thread pool.
pub fn execute(cfg: &ExperimentConfig) -> Result<Execution> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut all_passed = true;
    let results = match cfg.command {
        Command::LossEval => {
            let spec = cfg.loss.as_ref().expect("resolved");
            let (u, v) = batch_for(cfg, &mut rng)?;
            let loss = evaluate(spec, &u, &v)?;
            let constant = normalizing_constant(spec.variant(), u.len()).ok();
            json!({
                "variant": spec.variant(),
                "M": u.len(),
                "d": u.dim(),
                "loss": loss,
                "normalizing_constant": constant,
            })
        }
        Command::GradCheck => {
            let spec = cfg.loss.as_ref().expect("resolved");
            let h = cfg.h.expect("resolved");
            let tol = cfg.tol.expect("resolved");
            let (u, v) = batch_for(cfg, &mut rng)?;
            let (gu, gv) = loss_grad(spec, &u, &v)?;
            let (fu, fv) = finite_diff_grad(spec, &u, &v, h)?;
            let diff = (&gu - &fu).amax().max((&gv - &fv).amax());
            let scale = fu.amax().max(fv.amax());
            let rel = if scale > 0.0 { diff / scale } else { diff };
            json!({
                "variant": spec.variant(),
                "max_abs_error": diff,
                "rel_error": rel,
                "passed": rel < tol,
            })
        }
        Command::Optimize => {
            let spec = cfg.loss.as_ref().expect("resolved");
            let opt = cfg.optimizer.as_ref().expect("resolved");
            let run = optimize_free_embeddings(
                spec,
                cfg.m.expect("resolved"),
                cfg.d.expect("resolved"),
                opt,
            )?;
            if let Some(path) = &cfg.trace_csv {
                save_trajectory_csv(Path::new(path), &run.best.trajectory)?;
            }
            let best = &run.best;
            json!({
                "best_loss": best.loss,
                "converged": best.converged,
                "final_grad_norm": best.grad_norm,
                "steps_taken": best.steps_taken,
                "best_restart": run.best_restart,
                "restart_losses": run.restart_losses,
                "alignment_gap": crate::geometry::alignment_gap(&best.u, &best.v)?,
                "u": best.u,
                "v": best.v,
            })
        }
        Command::VerifyTheorems => {
            let opt = cfg.optimizer.as_ref().expect("resolved");
            let tol = cfg.tol.expect("resolved");
            let rtol = cfg.energy_rtol.expect("resolved");
            let mut verdicts = Vec::new();
            for case in cfg.cases.as_ref().expect("resolved") {
                let verdict = match case.check {
                    CheckKind::Simplex => verify_simplex_theorem(
                        &case.loss,
                        case.m.expect("resolved"),
                        case.d,
                        opt,
                        tol,
                    )?,
                    CheckKind::CrossPolytope => {
                        verify_cross_polytope(&case.loss, case.d, opt, tol, rtol)?
                    }
                };
                all_passed &= verdict.passed;
                verdicts.push(verdict);
            }
            json!({ "all_passed": all_passed, "verdicts": verdicts })
        }
        Command::Expectation => {
            let est = estimate_expected_loss(
                cfg.loss.as_ref().expect("resolved"),
                cfg.distribution.as_ref().expect("resolved"),
                cfg.m.expect("resolved"),
                cfg.n_batches.expect("resolved"),
                &mut rng,
            )?;
            to_value(&est)
        }
        Command::Convergence => {
            let study = convergence_study(
                cfg.loss.as_ref().expect("resolved"),
                cfg.distribution.as_ref().expect("resolved"),
                cfg.m_list.as_ref().expect("resolved"),
                cfg.n_batches.expect("resolved"),
                cfg.n_samples.expect("resolved"),
                &mut rng,
            )?;
            if let Some(path) = &cfg.trace_csv {
                convergence_csv(Path::new(path), &study)?;
            }
            to_value(&study)
        }
        Command::Metrics => {
            let (u, v) = batch_for(cfg, &mut rng)?;
            let params = MetricsParams {
                t: cfg.t.expect("resolved"),
                n_ref: cfg.n_ref.expect("resolved"),
                seed: cfg.seed,
            };
            to_value(&metrics_report(&u, &v, params)?)
        }
        Command::KernelCheck => {
            let report = check_conditions(
                cfg.kernel.as_ref().expect("resolved"),
                cfg.grid_size.expect("resolved"),
            )?;
            json!({ "predicates": report.predicates(), "report": report })
        }
    };
    Ok(Execution {
        results,
        all_passed,
    })
}

/// Thread count from `SPHERE_CL_THREADS`; `0` or unset means automatic.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(0),
        Ok(raw) => raw.trim().parse().map_err(|_| {
            Error::Config(format!(
                "{THREADS_ENV} must be a non-negative integer, got {raw:?}"
            ))
        }),
    }
}

/// Exit code for an error raised before or during execution.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::InvalidArity(_)
        | Error::InvalidKernel(_)
        | Error::InvalidLoss(_)
        | Error::DimensionMismatch(_)
        | Error::NotUnitNorm { .. }
        | Error::ZeroRow { .. } => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

/// Serialises the result document (pretty JSON, newline-terminated).
pub fn render_document(cfg: &ExperimentConfig, results: Value, wall_time_s: f64) -> String {
    let doc = json!({
        "command": cfg.command,
        "config_echo": cfg,
        "results": results,
        "wall_time_s": wall_time_s,
        "version": RESULTS_VERSION,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("json values serialise");
    text.push('\n');
    text
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

fn run_inner(
    config: ExperimentConfig,
    overrides: &Overrides,
) -> std::result::Result<i32, (i32, Error)> {
    let mut config = config;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(out) = &overrides.output {
        config.output_path = Some(out.to_string_lossy().into_owned());
    }
    let resolved = config.resolve().map_err(|e| (EXIT_VALIDATION, e))?;
    let threads = threads_from_env().map_err(|e| (EXIT_VALIDATION, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| (EXIT_RUNTIME, Error::Config(e.to_string())))?;

    let start = Instant::now();
    let execution = pool
        .install(|| execute(&resolved))
        .map_err(|e| (exit_code_for(&e), e))?;
    let wall = start.elapsed().as_secs_f64();

    let text = render_document(&resolved, execution.results, wall);
    let path = resolved.output_path.as_deref().expect("resolved");
    std::fs::write(path, text).map_err(|e| (EXIT_RUNTIME, Error::from(e)))?;
    Ok(if execution.all_passed {
        EXIT_OK
    } else {
        EXIT_VERDICT_FAILED
    })
}

/// Runs a parsed config and returns the process exit code. Errors are
/// reported as a single line on stderr.
pub fn run(config: ExperimentConfig, overrides: &Overrides) -> i32 {
    match run_inner(config, overrides) {
        Ok(code) => code,
        Err((code, err)) => {
            eprintln!("sphere-cl: {err}");
            code
        }
    }
}

/// Reads the config at `path`, then behaves like [`run`].
pub fn run_path(path: &Path, overrides: &Overrides) -> i32 {
    match ExperimentConfig::from_path(path) {
        Ok(cfg) => run(cfg, overrides),
        Err(err) => {
            eprintln!("sphere-cl: {err}");
            EXIT_VALIDATION
        }
    }
}
