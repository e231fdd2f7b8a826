//! Three-class 2D study: writes grid log-probabilities and training points
//! as CSV for plotting.
//!
//! cargo run --example toy2d -- [output_dir]

use std::path::PathBuf;

use gpsm::pipeline::cmd_toy2d;

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("toy2d_out"));
    match cmd_toy2d(&dir, 0) {
        Ok(r) => {
            println!("wrote {} grid nodes to {}", r.grid_nodes, dir.display());
            println!(
                "max |sum p - 1| = {:.2e}, finite log p: {}",
                r.max_normalization_error, r.all_log_probs_finite
            );
            println!("training accuracy per cluster: {:?}", r.cluster_accuracy);
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
