use std::fmt::Write as _;
use std::time::Instant;

use rand::rngs::SmallRng;
use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{MixerError, Result};
use crate::fft::toeplitz_apply_fft;
use crate::mixer::Family;
use crate::rng::RngState;
use crate::ssm::{qs_apply_coeffs, ss_scan, QuasiCoeffs, ScanCoeffs};
use crate::tensor::Tensor;

use super::RunConfig;

/// Families with a benchmark, each at its own fast path.
pub const BENCH_FAMILIES: [Family; 4] = [Family::Semiseparable, Family::Quasiseparable, Family::Toeplitz, Family::Dense];

const BENCH_HEADS: usize = 1;
const BENCH_HEAD_DIM: usize = 4;
const BENCH_STATE: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub family: Family,
    pub seq_len: usize,
    pub median_ns: f64,
    pub p90_ns: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of `log median` against `log L`, per family.
    pub slopes: Vec<(Family, f64)>,
}

impl BenchReport {
    pub fn slope(&self, f: Family) -> Option<f64> {
        self.slopes.iter().find(|(g, _)| *g == f).map(|&(_, s)| s)
    }

    /// Header, one row per measurement, then one `# slope` comment line per
    /// family.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("family,L,median_ns,p90_ns\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:.0},{:.0}", r.family, r.seq_len, r.median_ns, r.p90_ns);
        }
        for (f, slope) in &self.slopes {
            let _ = writeln!(s, "# slope,{f},{slope:.4}");
        }
        s
    }
}

/// Ordinary least-squares slope of `ln y` on `ln x`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Dense `L × L` apply whose entries are regenerated on the fly, row `i`
/// from its own small generator seeded by `(seed, i)`; memory stays `O(L)` so
/// the sweep reaches `L = 2¹⁶`.
pub fn dense_apply_streaming(seed: u64, v: &Tensor) -> Tensor {
    let (l, p) = (v.rows(), v.cols());
    let scale = 1.0 / (l as f64).sqrt();
    let vt = v.transpose();
    let mut out = Tensor::zeros(&[l, p]);
    let mut row = vec![0.0; l];
    for i in 0..l {
        fill_dense_row(seed, i, scale, &mut row);
        for c in 0..p {
            *out.at2_mut(i, c) = dot_unrolled(&row, vt.row(c));
        }
    }
    out
}

/// Eight independent partial sums so the adds pipeline instead of forming
/// one serial dependency chain.
fn dot_unrolled(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn fill_dense_row(seed: u64, i: usize, scale: f64, row: &mut [f64]) {
    let rng = SmallRng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    for (w, u) in row.iter_mut().zip(rng.sample_iter(Uniform::new(-scale, scale))) {
        *w = u;
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Times `reps` runs of one family's apply at length `l` after one warm-up.
fn time_one(family: Family, l: usize, reps: usize, seed: u64) -> Result<BenchRow> {
    let mut rng = RngState::substream(seed, l as u64);
    let v = rng.normal_tensor(&[l, BENCH_HEADS * BENCH_HEAD_DIM], 1.0);
    let run: Box<dyn Fn() -> Result<Tensor>> = match family {
        Family::Semiseparable => {
            let co = ScanCoeffs::random(l, BENCH_HEADS, BENCH_STATE, &mut rng);
            Box::new(move || ss_scan(&v, &co))
        }
        Family::Quasiseparable => {
            let qc = QuasiCoeffs::random(l, BENCH_HEADS, BENCH_STATE, &mut rng);
            Box::new(move || qs_apply_coeffs(&qc, &v))
        }
        Family::Toeplitz => {
            let kernel: Vec<f64> = (0..2 * l - 1).map(|_| rng.normal() / (l as f64).sqrt()).collect();
            Box::new(move || toeplitz_apply_fft(&kernel, &v))
        }
        Family::Dense => Box::new(move || Ok(dense_apply_streaming(seed, &v))),
        f => return Err(MixerError::Config(format!("no benchmark for {f}"))),
    };
    std::hint::black_box(run()?);
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        std::hint::black_box(run()?);
        times.push(t0.elapsed().as_nanos() as f64);
    }
    times.sort_by(f64::total_cmp);
    Ok(BenchRow {
        family,
        seq_len: l,
        median_ns: percentile(&times, 0.5),
        p90_ns: percentile(&times, 0.9),
    })
}

/// Sweeps `lens` for one family; rows come back in increasing `L`.
pub fn bench_family(family: Family, lens: &[usize], reps: usize, seed: u64) -> Result<Vec<BenchRow>> {
    lens.iter().map(|&l| time_one(family, l, reps, seed)).collect()
}

/// Runs the sweep on a dedicated single-thread pool so repetitions never
/// share the core with verification work.
pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let families: Vec<Family> = cfg.family.map_or(BENCH_FAMILIES.to_vec(), |f| vec![f]);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| MixerError::Config(format!("thread pool: {e}")))?;
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for f in families {
        let fr = pool.install(|| bench_family(f, &cfg.bench_lens, cfg.reps, cfg.seed))?;
        if fr.len() >= 2 {
            let pts: Vec<(f64, f64)> = fr.iter().map(|r| (r.seq_len as f64, r.median_ns)).collect();
            slopes.push((f, fit_loglog_slope(&pts)));
        }
        rows.extend(fr);
    }
    let report = BenchReport { rows, slopes };
    if let Some(path) = &cfg.output {
        std::fs::write(path, report.to_csv())?;
    }
    Ok(report)
}
