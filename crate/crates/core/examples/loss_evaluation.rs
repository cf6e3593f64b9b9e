//! Evaluate every named loss on the same batch, and show that each one is
//! an instance of a generic (phi, psi) family.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sphere_cl::geometry::EmbeddingBatch;
use sphere_cl::losses::{evaluate, normalizing_constant, LossSpec, Variant};
use sphere_cl::sampling::{sample_positive_batch, SphereDistribution};

fn main() -> sphere_cl::Result<()> {
    let dist = SphereDistribution::jitter(8, 0.2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (u, v) = sample_positive_batch(&dist, 32, &mut rng)?;

    println!(
        "{:<8} {:>10} {:>10} {:>12}",
        "variant", "L(U,V)", "sym", "L - const"
    );
    for variant in Variant::NAMED {
        let spec = LossSpec::named(variant, 0.5)?;
        let one_sided = evaluate(&spec, &u, &v)?;
        let sym = evaluate(&spec.clone().with_symmetric(true), &u, &v)?;
        let c = normalizing_constant(variant, u.len())?;
        println!(
            "{:<8} {one_sided:>10.5} {sym:>10.5} {:>12.5}",
            variant.as_str(),
            one_sided - c
        );
        if let Some((family, pp)) = spec.as_generic() {
            let generic = evaluate(&LossSpec::generic(family, pp.clone())?, &u, &v)?;
            println!(
                "         = generic {family:?} with {}: {generic:.5}",
                pp.name()
            );
        }
    }

    // the optimum: U = V = regular simplex
    let s = EmbeddingBatch::regular_simplex(4, 8)?;
    let at_optimum = evaluate(&LossSpec::infonce(1.0)?.with_symmetric(true), &s, &s)?;
    println!("symmetric InfoNCE at the 4-point simplex: {at_optimum:.6}");
    Ok(())
}
