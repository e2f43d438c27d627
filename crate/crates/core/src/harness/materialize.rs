use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{MixerError, Result};
use crate::families::build_generic_mixer;
use crate::mixer::{MaterializedMixer, MixerSpec};
use crate::rng::RngState;
use crate::tensor::Tensor;

use super::verify::verify_mixer_config;
use super::RunConfig;

pub const MATERIALIZE_MAX_LEN: usize = 256;

/// One row per line, `{:.16e}` entries: 17 significant digits, enough to
/// round-trip every `f64` exactly.
pub fn format_matrix_csv(m: &Tensor) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x:.16e}")).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

pub fn parse_matrix_csv(s: &str) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = s
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| MixerError::Config(format!("bad matrix entry `{x}`: {e}"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(MixerError::shape("parse_matrix_csv", "matrix dump must be square"));
    }
    Tensor::from_vec(&[n, n], rows.concat())
}

/// What [`cmd_materialize`] built and wrote, kept for round-trip checks.
pub struct MaterializeOutput {
    pub mixer: MixerSpec,
    /// Input sequence for data-dependent families.
    pub x: Option<Tensor>,
    pub matrices: MaterializedMixer,
    pub files: Vec<PathBuf>,
}

/// Builds a generic instance of the chosen family at length `L` and writes
/// one CSV per head into `cfg.output` (default: current directory).
pub fn cmd_materialize(cfg: &RunConfig) -> Result<MaterializeOutput> {
    cfg.validate()?;
    let family = cfg.family.ok_or_else(|| MixerError::Config("materialize needs a family".into()))?;
    let mode = cfg.mode.unwrap_or(family.modes()[0]);
    let mcfg = verify_mixer_config(cfg.seq_len);
    let mut rng = RngState::new(cfg.seed);
    let mixer = build_generic_mixer(family, mode, &mcfg, &mut rng)?;
    let x = mixer
        .is_data_dependent()
        .then(|| rng.normal_tensor(&[cfg.seq_len, mcfg.in_channels], 1.0));
    let matrices = mixer.materialize(x.as_ref())?;

    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::with_capacity(matrices.n_heads());
    for (h, m) in matrices.per_head.iter().enumerate() {
        let path = dir.join(format!("{family}-{mode}-L{}-head{h}.csv", cfg.seq_len));
        std::fs::write(&path, format_matrix_csv(m))?;
        files.push(path);
    }
    Ok(MaterializeOutput { mixer, x, matrices, files })
}
