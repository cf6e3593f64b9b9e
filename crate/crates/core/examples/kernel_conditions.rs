//! Screen each kernel family for monotonicity, convexity and complete
//! monotonicity on the squared-distance range [0, 4].

use sphere_cl::kernels::{check_conditions, kernel_derivative, kernel_eval, KernelSpec};

fn main() -> sphere_cl::Result<()> {
    let kernels = [
        KernelSpec::Linear { t: 1.0 },
        KernelSpec::Gaussian { t: 1.0 },
        KernelSpec::Riesz { s: 2.0 },
        KernelSpec::Riesz { s: -1.0 },
        KernelSpec::Logarithmic { s: 1.0, beta: 1.0 },
    ];
    for k in kernels {
        let report = check_conditions(&k, 256)?;
        println!(
            "{k:?}  k(2)={:.4}  k'(2)={:.4}",
            kernel_eval(&k, 2.0)?,
            kernel_derivative(&k, 2.0, 1)?
        );
        for (name, holds) in report.predicates() {
            println!("    {name:<45} {holds}");
        }
    }
    Ok(())
}
