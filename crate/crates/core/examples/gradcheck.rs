//! Every hand-written backward pass against central finite differences.
//!
//! `cargo run --release --example gradcheck -- [configs] [seed]`

use mixerkit::grad::{gradcheck_suite, FD_STEP, GRAD_TOL};

fn main() -> mixerkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let configs = args.next().map_or(5, |s| s.parse().expect("configs"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    println!("{configs} random configurations per op, h = {FD_STEP:e}, tolerance {GRAD_TOL:e}");
    let reports = gradcheck_suite(seed, configs)?;
    for r in &reports {
        println!("  {:<42} {:>10.3e}  {}", r.op, r.max_rel_error, if r.pass { "ok" } else { "FAIL" });
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    println!("{} ops, {failed} failing", reports.len());
    Ok(())
}
