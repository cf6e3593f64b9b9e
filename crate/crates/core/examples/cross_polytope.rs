//! With 2d points and a completely monotone uniformity kernel the optimum
//! is the cross-polytope {±e_i} (up to rotation).

use sphere_cl::kernels::KernelSpec;
use sphere_cl::losses::LossSpec;
use sphere_cl::optimize::{verify_cross_polytope, OptimizerConfig};

fn main() -> sphere_cl::Result<()> {
    let g = KernelSpec::Gaussian { t: 1.0 };
    for d in [2, 3, 4] {
        let spec = LossSpec::kcl(g, g, 1.0)?.with_symmetric(true);
        let v = verify_cross_polytope(&spec, d, &OptimizerConfig::default(), 1e-3, 1e-4)?;
        println!(
            "d={d} M={} energy={:.7} cross-polytope={:.7} geometric={} passed={}",
            v.m,
            v.energy.unwrap_or(f64::NAN),
            v.reference_energy.unwrap_or(f64::NAN),
            v.cross_polytope_check.as_ref().is_some_and(|c| c.passed),
            v.passed
        );
    }
    Ok(())
}
