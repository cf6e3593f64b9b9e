//! Compare analytic gradients against central finite differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sphere_cl::kernels::KernelSpec;
use sphere_cl::losses::{finite_diff_grad, loss_grad, LossSpec};
use sphere_cl::sampling::sample_uniform_sphere;

fn main() -> sphere_cl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = sample_uniform_sphere(6, 5, &mut rng)?;
    let v = sample_uniform_sphere(6, 5, &mut rng)?;
    let g = KernelSpec::Gaussian { t: 1.0 };
    let specs = [
        LossSpec::infonce(0.1)?,
        LossSpec::simclr(0.5)?.with_symmetric(true),
        LossSpec::dcl(1.0)?,
        LossSpec::dhel(0.5)?,
        LossSpec::kcl(g, KernelSpec::Logarithmic { s: 1.0, beta: 1.0 }, 1.0)?,
    ];
    for spec in specs {
        let (gu, gv) = loss_grad(&spec, &u, &v)?;
        let (fu, fv) = finite_diff_grad(&spec, &u, &v, 1e-6)?;
        let err = (&gu - &fu).amax().max((&gv - &fv).amax());
        let rel = err / fu.amax().max(fv.amax());
        println!("{:<8} relative error {rel:.2e}", spec.variant().as_str());
    }
    Ok(())
}
