//! The expected kernel loss does not depend on the batch size, while the
//! expected InfoNCE loss grows with it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sphere_cl::kernels::KernelSpec;
use sphere_cl::losses::LossSpec;
use sphere_cl::sampling::{estimate_expected_loss, SphereDistribution};

fn main() -> sphere_cl::Result<()> {
    let dist = SphereDistribution::jitter(8, 0.2)?;
    let g = KernelSpec::Gaussian { t: 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for spec in [LossSpec::kcl(g, g, 1.0)?, LossSpec::infonce(1.0)?] {
        println!("{}", spec.variant().as_str());
        for m in [4, 16, 64] {
            let est = estimate_expected_loss(&spec, &dist, m, 400, &mut rng)?;
            println!("  M={m:<3} mean={:+.5} stderr={:.5}", est.mean, est.stderr);
        }
    }
    Ok(())
}
