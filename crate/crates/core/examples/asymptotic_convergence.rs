//! Expected losses minus their normalising constants approach the
//! batch-free limit as M grows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sphere_cl::losses::{LossSpec, Variant};
use sphere_cl::sampling::{convergence_study, SphereDistribution};

fn main() -> sphere_cl::Result<()> {
    let dist = SphereDistribution::jitter(8, 0.2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for variant in [
        Variant::Infonce,
        Variant::Simclr,
        Variant::Dcl,
        Variant::Dhel,
    ] {
        let spec = LossSpec::named(variant, 1.0)?;
        let study = convergence_study(&spec, &dist, &[4, 16, 64, 256], 200, 4000, &mut rng)?;
        println!(
            "{} (limit {:.4} ± {:.4})",
            variant.as_str(),
            study.asymptotic.value,
            study.asymptotic.stderr
        );
        for p in &study.points {
            println!(
                "  M={:<4} normalized={:+.4} gap={:.4} stderr={:.4}",
                p.m, p.normalized_mean, p.gap, p.stderr
            );
        }
    }
    Ok(())
}
