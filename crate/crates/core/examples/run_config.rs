//! Run an experiment config through the same code path as the `sphere-cl`
//! binary and print the result document.
//!
//!     cargo run --example run_config -- examples/configs/loss_eval.json

use std::path::PathBuf;

use sphere_cl::cli::{run_path, Overrides};

fn main() {
    let config = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/examples/configs/loss_eval.json"
            ))
        });
    let output = std::env::temp_dir().join("sphere-cl-example.json");
    let overrides = Overrides {
        seed: None,
        output: Some(output.clone()),
    };
    let code = run_path(&config, &overrides);
    if let Ok(text) = std::fs::read_to_string(&output) {
        print!("{text}");
    }
    std::process::exit(code);
}
