//! Alignment, uniformity, similarity-distribution distance and (effective)
//! rank for a well-spread batch and for a collapsed one.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sphere_cl::geometry::EmbeddingBatch;
use sphere_cl::metrics::{metrics_report, MetricsParams};
use sphere_cl::sampling::{sample_positive_batch, SphereDistribution};

fn main() -> sphere_cl::Result<()> {
    let params = MetricsParams {
        t: 2.0,
        n_ref: 100_000,
        seed: 0,
    };
    let dist = SphereDistribution::jitter(16, 0.1)?;
    let (u, v) = sample_positive_batch(&dist, 1024, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("spread:    {:?}", metrics_report(&u, &v, params.clone())?);

    let collapsed = EmbeddingBatch::new(DMatrix::from_fn(
        256,
        16,
        |_, j| if j == 0 { 1.0 } else { 0.0 },
    ))?;
    println!(
        "collapsed: {:?}",
        metrics_report(&collapsed, &collapsed, params)?
    );
    Ok(())
}
