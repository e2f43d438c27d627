//! The four commands behind the `mixerkit` binary: verification suites,
//! scaling benchmarks, matrix dumps and the toy training run.

mod bench;
mod materialize;
mod verify;

pub use bench::{bench_family, cmd_bench, dense_apply_streaming, fit_loglog_slope, BenchReport, BenchRow, BENCH_FAMILIES};
pub use materialize::{cmd_materialize, format_matrix_csv, parse_matrix_csv, MaterializeOutput, MATERIALIZE_MAX_LEN};
pub use verify::{
    cmd_verify, embedding_suite, gradcheck_report, oracle_suite, rank_suite, sam_suite, verify_mixer_config, CheckKind,
    ORACLE_TOL, QS_IDENTITY_TOL,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{MixerError, Result};
use crate::mixer::{Family, Mode};
use crate::toy::{run_toy, ToyConfig, ToyReport};

pub const THREADS_ENV: &str = "MIXERKIT_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Verify,
    Bench,
    Materialize,
    TrainToy,
}

/// Process exit status; stable across platforms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitStatus {
    Pass = 0,
    CheckFailure = 1,
    Usage = 2,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }

    /// Configuration problems are usage errors; anything else that stops a
    /// command is a check failure.
    pub fn from_error(e: &MixerError) -> Self {
        match e {
            MixerError::Config(_) | MixerError::Unsupported { .. } => ExitStatus::Usage,
            _ => ExitStatus::CheckFailure,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    /// `None` means every family (verify) or every benchmarked family (bench).
    pub family: Option<Family>,
    /// `None` means every mode the family supports.
    pub mode: Option<Mode>,
    pub seq_len: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub check: CheckKind,
    /// Random instances per verification check.
    pub instances: usize,
    /// Benchmark sweep, powers of two.
    pub bench_lens: Vec<usize>,
    pub reps: usize,
    pub toy: ToyConfig,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            family: None,
            mode: None,
            seq_len: 16,
            seed: 0,
            output: None,
            check: CheckKind::All,
            instances: 5,
            bench_lens: (10..=16).map(|k| 1usize << k).collect(),
            reps: 20,
            toy: ToyConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let (Some(f), Some(m)) = (self.family, self.mode) {
            if !f.modes().contains(&m) {
                return Err(MixerError::Config(format!("{f} has no {m} mode (available: {:?})", f.modes())));
            }
        }
        match self.command {
            Command::Verify => {
                if self.seq_len < 2 || self.instances == 0 {
                    return Err(MixerError::Config("verify needs L ≥ 2 and at least one instance".into()));
                }
            }
            Command::Bench => {
                if self.bench_lens.is_empty() || self.bench_lens.iter().any(|l| !l.is_power_of_two()) {
                    return Err(MixerError::Config(format!("bench lengths must be powers of two, got {:?}", self.bench_lens)));
                }
                if self.bench_lens.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(MixerError::Config("bench lengths must increase".into()));
                }
                if self.reps == 0 {
                    return Err(MixerError::Config("bench needs at least one repetition".into()));
                }
                if let Some(f) = self.family {
                    if !BENCH_FAMILIES.contains(&f) {
                        return Err(MixerError::Config(format!("no benchmark for {f}; choose from {BENCH_FAMILIES:?}")));
                    }
                }
            }
            Command::Materialize => {
                if self.family.is_none() {
                    return Err(MixerError::Config("materialize needs --family".into()));
                }
                if self.seq_len == 0 || self.seq_len > MATERIALIZE_MAX_LEN {
                    return Err(MixerError::Config(format!(
                        "materialize needs 1 ≤ L ≤ {MATERIALIZE_MAX_LEN}, got {}",
                        self.seq_len
                    )));
                }
            }
            Command::TrainToy => {
                if !(self.toy.mask_rate > 0.0 && self.toy.mask_rate < 1.0) {
                    return Err(MixerError::Config(format!("mask rate must lie in (0, 1), got {}", self.toy.mask_rate)));
                }
                self.toy.validate()?;
            }
        }
        Ok(())
    }
}

/// Worker pool for verification, capped by `MIXERKIT_THREADS` when set.
pub fn verification_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(s) = std::env::var(THREADS_ENV) {
        let n: usize = s
            .trim()
            .parse()
            .map_err(|_| MixerError::Config(format!("{THREADS_ENV} must be a positive integer, got `{s}`")))?;
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| MixerError::Config(format!("thread pool: {e}")))
}

/// Trains both toy arms; the log CSV goes to `cfg.output` when set.
pub fn cmd_train_toy(cfg: &RunConfig) -> Result<ToyReport> {
    cfg.validate()?;
    let mut toy = cfg.toy.clone();
    toy.seed = cfg.seed;
    let report = run_toy(&toy)?;
    if let Some(path) = &cfg.output {
        std::fs::write(path, report.log_csv())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bench_lengths_must_be_powers_of_two() {
        let mut c = RunConfig::new(Command::Bench);
        assert!(c.validate().is_ok());
        c.bench_lens = vec![1024, 3000];
        assert!(c.validate().is_err());
    }

    #[test]
    fn train_toy_mask_rate_open_interval() {
        let mut c = RunConfig::new(Command::TrainToy);
        c.toy.mask_rate = 0.0;
        assert!(c.validate().is_err());
        c.toy.mask_rate = 0.15;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn mode_must_belong_to_family() {
        let mut c = RunConfig::new(Command::Verify);
        c.family = Some(Family::Dense);
        c.mode = Some(Mode::Dd);
        let e = c.validate().unwrap_err();
        assert_eq!(ExitStatus::from_error(&e), ExitStatus::Usage);
    }

    #[test]
    fn materialize_caps_length() {
        let mut c = RunConfig::new(Command::Materialize);
        c.family = Some(Family::Toeplitz);
        c.seq_len = 257;
        assert!(c.validate().is_err());
    }
}
