//! Writes each head's matrix to CSV, reads it back and re-applies it.
//!
//! `cargo run --release --example materialize_dump -- [family] [mode] [L]`

use mixerkit::harness::{cmd_materialize, parse_matrix_csv, Command, RunConfig};
use mixerkit::mixer::{apply_mixer, MaterializedMixer};
use mixerkit::tensor::rel_error;
use mixerkit::{Family, Mode, RngState};

fn main() -> mixerkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::new(Command::Materialize);
    cfg.family = Some(args.next().map_or(Ok(Family::Quasiseparable), |s| s.parse())?);
    cfg.mode = Some(args.next().map_or(Ok(Mode::Dd), |s| s.parse())?);
    cfg.seq_len = args.next().map_or(8, |s| s.parse().expect("L"));
    let dir = std::env::temp_dir().join(format!("mixerkit-dump-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    cfg.output = Some(dir.clone());

    let out = cmd_materialize(&cfg)?;
    let heads = out
        .files
        .iter()
        .map(|f| {
            println!("wrote {}", f.display());
            parse_matrix_csv(&std::fs::read_to_string(f)?)
        })
        .collect::<mixerkit::Result<Vec<_>>>()?;
    let reread = MaterializedMixer::new(heads)?;
    let v = RngState::new(1).normal_tensor(&[cfg.seq_len, out.mixer.config().inner_dim], 1.0);
    let err = rel_error(&apply_mixer(&reread, &v)?, &apply_mixer(&out.matrices, &v)?);
    println!("re-applied from disk vs in memory: {err:.2e}");
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
