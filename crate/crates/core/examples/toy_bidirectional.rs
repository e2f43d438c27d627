//! Trains the quasiseparable encoder and its parameter-matched causal twin on
//! paired-token masked reconstruction and prints both masked accuracies.
//!
//! `cargo run --release --example toy_bidirectional -- [steps] [lr]`

use std::time::Instant;

use mixerkit::toy::{run_toy, ToyConfig};

fn main() -> mixerkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ToyConfig::default();
    if let Some(s) = args.next() {
        cfg.steps = s.parse().expect("steps");
    }
    if let Some(s) = args.next() {
        cfg.lr = s.parse().expect("lr");
    }
    let t0 = Instant::now();
    let report = run_toy(&cfg)?;
    for o in [&report.hydra, &report.causal] {
        let curve: Vec<String> = o.log.iter().step_by(4).map(|r| format!("{:.3}", r.loss)).collect();
        println!("{:>6}: params {}  loss curve {}", o.model, o.parameter_count, curve.join(" "));
        println!("        final masked accuracy {:.4}", o.final_masked_accuracy);
    }
    println!("gap {:.1} points in {:.1?}", report.gap_points(), t0.elapsed());
    Ok(())
}
