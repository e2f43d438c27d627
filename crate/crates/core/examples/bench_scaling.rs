//! A short timing sweep of the fast paths with log-log slopes. The full
//! sweep (L up to 2¹⁶, 20 repetitions) is `mixerkit bench`.
//!
//! `cargo run --release --example bench_scaling -- [max_log2] [reps]`

use mixerkit::harness::{cmd_bench, Command, RunConfig};

fn main() -> mixerkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let max_log2: u32 = args.next().map_or(13, |s| s.parse().expect("max_log2"));
    let mut cfg = RunConfig::new(Command::Bench);
    cfg.bench_lens = (8..=max_log2).map(|k| 1usize << k).collect();
    cfg.reps = args.next().map_or(5, |s| s.parse().expect("reps"));
    let report = cmd_bench(&cfg)?;
    print!("{}", report.to_csv());
    Ok(())
}
