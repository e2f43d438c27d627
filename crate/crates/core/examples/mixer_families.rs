//! Builds one instance of every family and mode, runs its own apply path and
//! compares it with the dense materialized matrix.
//!
//! `cargo run --release --example mixer_families -- [L]`

use mixerkit::families::build_generic_mixer;
use mixerkit::harness::verify_mixer_config;
use mixerkit::tensor::rel_error;
use mixerkit::{mixer::apply_mixer, Family, RngState};

fn main() -> mixerkit::Result<()> {
    let l: usize = std::env::args().nth(1).map_or(32, |s| s.parse().expect("L"));
    let cfg = verify_mixer_config(l);
    let mut rng = RngState::new(0);
    let x = rng.normal_tensor(&[l, cfg.in_channels], 1.0);
    let v = rng.normal_tensor(&[l, cfg.inner_dim], 1.0);
    println!("L = {l}, C = {}, H = {}, P = {}", cfg.in_channels, cfg.n_heads, cfg.head_dim);
    println!("{:<22} {:>8} {:>6} {:>12}", "mixer", "params", "lower", "apply err");
    for family in Family::ALL {
        for &mode in family.modes() {
            let m = build_generic_mixer(family, mode, &cfg, &mut rng)?;
            let xo = m.is_data_dependent().then_some(&x);
            let dense = m.materialize(xo)?;
            // Materialized apply adds the mixer's own residual weight.
            let want = apply_mixer(&dense, &v)?.add(&v.scale(m.residual_weight()))?;
            let got = m.apply_seq(&v, xo)?;
            println!(
                "{:<22} {:>8} {:>6} {:>12.2e}",
                m.name(),
                m.parameter_count(),
                if dense.is_lower_triangular() { "yes" } else { "no" },
                rel_error(&got, &want)
            );
        }
    }
    Ok(())
}
