//! Downsampling and noisy-label benchmark on the synthetic room: builds
//! both maps and prints the per-class AUC table.
//!
//! cargo run --release --example room_benchmark -- [label_noise]

use gpsm::pipeline::{cmd_build, cmd_eval, RunConfig};

fn main() {
    let label_noise: f64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.0);
    let dir = std::env::temp_dir().join(format!("gpsm_room_{}", std::process::id()));
    let config = RunConfig {
        downsample: 3,
        label_noise,
        output_dir: dir.clone(),
        ..RunConfig::default()
    };
    let run = || -> Result<(), gpsm::pipeline::StageError> {
        let built = cmd_build(&config)?;
        println!(
            "n_t {}, n_u {}, n_q {}, timings {:?}",
            built.n_t, built.n_u, built.n_q, built.timings
        );
        let report = cmd_eval(&config)?;
        println!("{:<10} {:>8} {:>8}", "class", "GPSM", "SOM");
        for row in &report.table {
            let f = |v: Option<f64>| v.map_or("-".to_string(), |a| format!("{a:.4}"));
            println!(
                "{:<10} {:>8} {:>8}",
                row.name,
                f(row.gpsm_auc),
                f(row.som_auc)
            );
        }
        let total =
            |r: &Option<gpsm::evaluation::AucReport>| r.as_ref().map_or(f64::NAN, |r| r.total_auc);
        println!(
            "{:<10} {:>8.4} {:>8.4}",
            "total",
            total(&report.gpsm),
            total(&report.som)
        );
        Ok(())
    };
    let result = run();
    let _ = std::fs::remove_dir_all(&dir);
    if let Err(e) = result {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
