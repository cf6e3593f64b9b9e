//! Optimise free embeddings and certify that the optimum is a regular
//! simplex with perfectly aligned pairs.

use sphere_cl::geometry::gram;
use sphere_cl::kernels::KernelSpec;
use sphere_cl::losses::LossSpec;
use sphere_cl::optimize::{optimize_free_embeddings, verify_simplex_theorem, OptimizerConfig};

fn main() -> sphere_cl::Result<()> {
    let cfg = OptimizerConfig::default();
    let g = KernelSpec::Gaussian { t: 1.0 };
    let specs = [
        LossSpec::infonce(1.0)?,
        LossSpec::simclr(0.5)?,
        LossSpec::dcl(0.5)?,
        LossSpec::dhel(1.0)?,
        LossSpec::kcl(g, g, 1.0)?,
    ];
    for spec in specs {
        let spec = spec.with_symmetric(true);
        let v = verify_simplex_theorem(&spec, 4, 8, &cfg, 1e-3)?;
        let check = v.simplex_check.as_ref().expect("simplex run");
        println!(
            "{:<8} passed={} loss={:.6} gap={:.1e} residual={:.1e} steps={}",
            spec.variant().as_str(),
            v.passed,
            v.best_loss,
            v.alignment_gap,
            check.max_deviation,
            v.steps_taken
        );
    }

    let run = optimize_free_embeddings(&LossSpec::infonce(1.0)?.with_symmetric(true), 3, 4, &cfg)?;
    println!(
        "Gram matrix of the 3-point optimum:\n{:.4}",
        gram(&run.best.u, &run.best.u)?
    );
    Ok(())
}
