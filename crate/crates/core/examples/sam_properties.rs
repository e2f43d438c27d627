//! Prefix consistency and extendability for the data-dependent families, and
//! the typed refusal the fixed-length families give.
//!
//! `cargo run --release --example sam_properties -- [L]`

use mixerkit::families::build_generic_mixer;
use mixerkit::harness::verify_mixer_config;
use mixerkit::mixer::{check_extendability, check_prefix_consistency};
use mixerkit::{Family, Mode, RngState, SequenceBatch};

fn main() -> mixerkit::Result<()> {
    let l: usize = std::env::args().nth(1).map_or(16, |s| s.parse().expect("L"));
    let mut rng = RngState::new(11);
    let cfg = verify_mixer_config(l);
    let long = SequenceBatch::new(rng.normal_tensor(&[2, 2 * l, cfg.in_channels], 1.0))?;
    let short = long.prefix(l);
    for family in Family::ALL {
        for &mode in family.modes() {
            let m = build_generic_mixer(family, mode, &cfg, &mut rng)?;
            if mode != Mode::Dd {
                let e = check_extendability(m.as_ref(), &short, &long).unwrap_err();
                println!("{:<20} {e}", m.name());
                continue;
            }
            let mut worst = 0.0f64;
            for i in 0..l {
                worst = worst.max(check_prefix_consistency(m.as_ref(), &short, i)?.max_error);
            }
            let ext = check_extendability(m.as_ref(), &short, &long)?;
            println!("{:<20} prefix {worst:.2e}  extend L→2L {:.2e}", m.name(), ext.max_error);
        }
    }
    Ok(())
}
