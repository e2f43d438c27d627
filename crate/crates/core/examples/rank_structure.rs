//! Off-diagonal and full-matrix rank of each structured family, with a
//! negative control at bound N − 1.
//!
//! `cargo run --release --example rank_structure -- [L]`

use mixerkit::harness::rank_suite;
use mixerkit::Family;

fn main() -> mixerkit::Result<()> {
    let l: usize = std::env::args().nth(1).map_or(32, |s| s.parse().expect("L"));
    for family in [Family::Quasiseparable, Family::Semiseparable, Family::LowRank, Family::Attention] {
        let report = rank_suite(family, family.modes(), l, 0, 3)?;
        println!("{report}");
    }
    Ok(())
}
