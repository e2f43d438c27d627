//! The matrix-mixer abstraction: per-head `L × L` matrices `M^h` acting on
//! contiguous blocks of `P` channels of a preprocessed value stream, and the
//! sequence-alignment checks defined on top of it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::batch::SequenceBatch;
use crate::error::{MixerError, Result};
use crate::report::{CheckRecord, VerificationReport};
use crate::rng::RngState;
use crate::tensor::{matmul, rel_error, Tensor};

pub const SAM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Dense,
    Toeplitz,
    Vandermonde,
    Cauchy,
    LowRank,
    Attention,
    Quasiseparable,
    Semiseparable,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::Dense,
        Family::Toeplitz,
        Family::Vandermonde,
        Family::Cauchy,
        Family::LowRank,
        Family::Attention,
        Family::Quasiseparable,
        Family::Semiseparable,
    ];

    pub fn modes(self) -> &'static [Mode] {
        match self {
            Family::Dense => &[Mode::Di],
            Family::Vandermonde => &[Mode::Dft, Mode::Di, Mode::Dd],
            Family::Quasiseparable | Family::Semiseparable => &[Mode::Dd],
            _ => &[Mode::Di, Mode::Dd],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Dense => "dense",
            Family::Toeplitz => "toeplitz",
            Family::Vandermonde => "vandermonde",
            Family::Cauchy => "cauchy",
            Family::LowRank => "lowrank",
            Family::Attention => "attention",
            Family::Quasiseparable => "quasiseparable",
            Family::Semiseparable => "semiseparable",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = MixerError;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s.to_ascii_lowercase())
            .or(match s {
                "low-rank" | "low_rank" => Some(Family::LowRank),
                "quasi" | "hydra" => Some(Family::Quasiseparable),
                "semi" | "ssm" => Some(Family::Semiseparable),
                "dft" => Some(Family::Vandermonde),
                _ => None,
            })
            .ok_or_else(|| MixerError::Config(format!("unknown family `{s}`")))
    }
}

/// Data-independent, data-dependent, or the fixed DFT matrix (Vandermonde
/// only).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Di,
    Dd,
    Dft,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Di => "di",
            Mode::Dd => "dd",
            Mode::Dft => "dft",
        })
    }
}

impl FromStr for Mode {
    type Err = MixerError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "di" => Ok(Mode::Di),
            "dd" => Ok(Mode::Dd),
            "dft" => Ok(Mode::Dft),
            _ => Err(MixerError::Config(format!("unknown mode `{s}`"))),
        }
    }
}

/// Layout of one mixer layer: `L` positions, `C` input channels, `D = H·P`
/// value channels, and `d` query/key channels per head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixerConfig {
    pub seq_len: usize,
    pub in_channels: usize,
    pub inner_dim: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub qk_dim: usize,
    pub data_dependent: bool,
}

impl MixerConfig {
    pub fn new(seq_len: usize, in_channels: usize, n_heads: usize, head_dim: usize, qk_dim: usize) -> Self {
        MixerConfig {
            seq_len,
            in_channels,
            inner_dim: n_heads * head_dim,
            n_heads,
            head_dim,
            qk_dim,
            data_dependent: false,
        }
    }

    /// Ablation geometry: `expand = 2`, `d = 16, P = 128` for data-dependent
    /// variants and `d = 64, P = 64` for data-independent ones.
    pub fn ablation(seq_len: usize, d_model: usize, mode: Mode) -> Self {
        let inner = 2 * d_model;
        let (qk, p) = match mode {
            Mode::Dd => (16, 128),
            _ => (64, 64),
        };
        MixerConfig {
            seq_len,
            in_channels: d_model,
            inner_dim: inner,
            n_heads: (inner / p).max(1),
            head_dim: p.min(inner),
            qk_dim: qk,
            data_dependent: mode == Mode::Dd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.seq_len,
            self.in_channels,
            self.inner_dim,
            self.n_heads,
            self.head_dim,
            self.qk_dim,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(MixerError::Config(format!("zero dimension in {self:?}")));
        }
        if self.n_heads * self.head_dim != self.inner_dim {
            return Err(MixerError::Config(format!(
                "H × P = {} × {} != D = {}",
                self.n_heads, self.head_dim, self.inner_dim
            )));
        }
        Ok(())
    }
}

/// Per-head dense mixer matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterializedMixer {
    pub per_head: Vec<Tensor>,
}

impl MaterializedMixer {
    pub fn new(per_head: Vec<Tensor>) -> Result<Self> {
        let l = per_head.first().map_or(0, |m| m.rows());
        if per_head.iter().any(|m| m.shape() != [l, l]) {
            return Err(MixerError::shape("MaterializedMixer", "heads must be L × L"));
        }
        for m in &per_head {
            m.ensure_finite("materialized mixer")?;
        }
        Ok(MaterializedMixer { per_head })
    }

    pub fn identity(n_heads: usize, len: usize) -> Self {
        MaterializedMixer {
            per_head: vec![Tensor::identity(len); n_heads],
        }
    }

    pub fn n_heads(&self) -> usize {
        self.per_head.len()
    }

    pub fn len(&self) -> usize {
        self.per_head.first().map_or(0, |m| m.rows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leading `n × n` block of every head.
    pub fn leading(&self, n: usize) -> MaterializedMixer {
        MaterializedMixer {
            per_head: self.per_head.iter().map(|m| m.block(0, n, 0, n)).collect(),
        }
    }

    pub fn max_rel_error(&self, reference: &MaterializedMixer) -> f64 {
        self.per_head
            .iter()
            .zip(&reference.per_head)
            .map(|(a, b)| rel_error(a, b))
            .fold(0.0, f64::max)
    }

    pub fn is_lower_triangular(&self) -> bool {
        self.per_head.iter().all(|m| {
            (0..m.rows()).all(|i| (i + 1..m.cols()).all(|j| m.at2(i, j) == 0.0))
        })
    }
}

/// Column block of head `h` in a `L × (H·P)` matrix.
pub fn head_slice(v: &Tensor, h: usize, p: usize) -> Tensor {
    v.columns(h * p, (h + 1) * p)
}

/// `Y^h = M^h V^h` for every head, contiguous `P`-channel blocks.
pub fn apply_mixer(m: &MaterializedMixer, v: &Tensor) -> Result<Tensor> {
    let (l, d) = (v.rows(), v.cols());
    let h = m.n_heads();
    if h == 0 || d % h != 0 {
        return Err(MixerError::shape(
            "apply_mixer",
            format!("{d} channels cannot split into {h} heads"),
        ));
    }
    if m.len() != l {
        return Err(MixerError::shape(
            "apply_mixer",
            format!("mixer length {} vs sequence length {l}", m.len()),
        ));
    }
    let p = d / h;
    let mut out = Tensor::zeros(&[l, d]);
    for (head, mh) in m.per_head.iter().enumerate() {
        let y = matmul(mh, &head_slice(v, head, p))?;
        out.add_columns(head * p, &y);
    }
    Ok(out)
}

pub fn apply_mixer_batch(m: &MaterializedMixer, v: &SequenceBatch) -> Result<SequenceBatch> {
    v.map_items(|item| apply_mixer(m, item))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreprocessorKind {
    Identity,
    LinearProjection,
    ProjectionPlusShortConv,
}

/// `f_X`: identity, `X W_V`, or `X W_V` followed by a centered depthwise
/// convolution of odd width.
#[derive(Clone, Debug)]
pub struct Preprocessor {
    pub kind: PreprocessorKind,
    /// `C × D` projection (absent for identity).
    pub weight: Option<Tensor>,
    /// `D × width` depthwise taps (short-conv kind only).
    pub conv: Option<Tensor>,
}

impl Preprocessor {
    pub fn identity() -> Self {
        Preprocessor {
            kind: PreprocessorKind::Identity,
            weight: None,
            conv: None,
        }
    }

    pub fn projection(weight: Tensor) -> Self {
        Preprocessor {
            kind: PreprocessorKind::LinearProjection,
            weight: Some(weight),
            conv: None,
        }
    }

    pub fn projection_with_conv(weight: Tensor, conv: Tensor) -> Result<Self> {
        if conv.cols() % 2 == 0 {
            return Err(MixerError::Config(format!(
                "short conv width {} must be odd",
                conv.cols()
            )));
        }
        if conv.rows() != weight.cols() {
            return Err(MixerError::shape(
                "Preprocessor",
                format!("conv has {} channels, projection outputs {}", conv.rows(), weight.cols()),
            ));
        }
        Ok(Preprocessor {
            kind: PreprocessorKind::ProjectionPlusShortConv,
            weight: Some(weight),
            conv: Some(conv),
        })
    }

    pub fn random(kind: PreprocessorKind, c: usize, d: usize, width: usize, rng: &mut RngState) -> Result<Self> {
        match kind {
            PreprocessorKind::Identity => Ok(Preprocessor::identity()),
            PreprocessorKind::LinearProjection => Ok(Preprocessor::projection(rng.xavier_normal(&[c, d]))),
            PreprocessorKind::ProjectionPlusShortConv => {
                Preprocessor::projection_with_conv(rng.xavier_normal(&[c, d]), rng.normal_tensor(&[d, width], 0.3))
            }
        }
    }

    pub fn apply_seq(&self, x: &Tensor) -> Result<Tensor> {
        match self.kind {
            PreprocessorKind::Identity => Ok(x.clone()),
            PreprocessorKind::LinearProjection => {
                let w = self.weight.as_ref().expect("projection weight");
                check_channels(x, w.rows())?;
                matmul(x, w)
            }
            PreprocessorKind::ProjectionPlusShortConv => {
                let w = self.weight.as_ref().expect("projection weight");
                check_channels(x, w.rows())?;
                let u = matmul(x, w)?;
                Ok(depthwise_conv_centered(&u, self.conv.as_ref().expect("conv taps"), None))
            }
        }
    }
}

fn check_channels(x: &Tensor, c: usize) -> Result<()> {
    if x.cols() != c {
        return Err(MixerError::shape(
            "preprocess",
            format!("input has {} channels, expected {c}", x.cols()),
        ));
    }
    Ok(())
}

pub fn preprocess(p: &Preprocessor, x: &SequenceBatch) -> Result<SequenceBatch> {
    x.map_items(|item| p.apply_seq(item))
}

/// Depthwise convolution with a centered, zero-padded window:
/// `y[t, ch] = bias[ch] + Σ_k taps[ch, k] · u[t + k − (w−1)/2, ch]`.
pub fn depthwise_conv_centered(u: &Tensor, taps: &Tensor, bias: Option<&[f64]>) -> Tensor {
    let (l, d) = (u.rows(), u.cols());
    let w = taps.cols();
    let half = (w / 2) as isize;
    let mut out = Tensor::zeros(&[l, d]);
    for t in 0..l {
        let orow = out.row_mut(t);
        if let Some(b) = bias {
            orow.copy_from_slice(b);
        }
        for k in 0..w {
            let src = t as isize + k as isize - half;
            if src < 0 || src >= l as isize {
                continue;
            }
            let urow = u.row(src as usize);
            for ch in 0..d {
                orow[ch] += taps.at2(ch, k) * urow[ch];
            }
        }
    }
    out
}

/// Gradients of one mixer application, parameters in [`MatrixMixer::params`]
/// order.
#[derive(Clone, Debug)]
pub struct MixerGrads {
    pub dv: Tensor,
    pub dx: Option<Tensor>,
    pub params: Vec<Tensor>,
}

/// One sequence-mixer layer `Y = M(X) · V (+ residual)`.
pub trait MatrixMixer: Send + Sync {
    fn family(&self) -> Family;
    fn mode(&self) -> Mode;
    fn config(&self) -> &MixerConfig;

    fn name(&self) -> String {
        format!("{}-{}", self.family(), self.mode())
    }

    fn is_data_dependent(&self) -> bool {
        self.mode() == Mode::Dd
    }

    /// Dense per-head matrices for one sequence. Data-dependent families read
    /// the length from `x`; the others use their fixed length.
    fn materialize(&self, x: Option<&Tensor>) -> Result<MaterializedMixer>;

    /// The family's own (fast or naive) application to one `L × D` sequence,
    /// residual included.
    fn apply_seq(&self, v: &Tensor, x: Option<&Tensor>) -> Result<Tensor>;

    /// Coefficient of the `+ v` term inside `apply_seq`.
    fn residual_weight(&self) -> f64 {
        1.0
    }

    /// Matrix used for sequence-alignment checks.
    fn sam_matrix(&self, x: &Tensor) -> Result<MaterializedMixer> {
        self.materialize(Some(x))
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)>;
    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)>;

    /// Reverse-mode gradients of `apply_seq` given the upstream gradient.
    fn backward_seq(&self, v: &Tensor, x: Option<&Tensor>, dy: &Tensor) -> Result<MixerGrads>;

    fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }
}

pub type MixerSpec = Box<dyn MatrixMixer>;

pub(crate) fn require_x<'a>(m: &dyn MatrixMixer, x: Option<&'a Tensor>) -> Result<&'a Tensor> {
    let x = x.ok_or_else(|| MixerError::MissingInput(m.name()))?;
    if x.cols() != m.config().in_channels {
        return Err(MixerError::shape(
            "mixer input",
            format!("x has {} channels, expected {}", x.cols(), m.config().in_channels),
        ));
    }
    Ok(x)
}

pub(crate) fn check_values(m: &dyn MatrixMixer, v: &Tensor, len: usize) -> Result<()> {
    if v.ndim() != 2 || v.rows() != len || v.cols() != m.config().inner_dim {
        return Err(MixerError::shape(
            "mixer values",
            format!(
                "v is {:?}, expected [{len}, {}]",
                v.shape(),
                m.config().inner_dim
            ),
        ));
    }
    Ok(())
}

/// Shared part of every backward pass: `dv = r·dy + Σ_h M_hᵀ dy_h` and the
/// per-head matrix gradients `dM_h = dy_h v_hᵀ`.
pub fn backward_through_matrix(m: &MaterializedMixer, v: &Tensor, dy: &Tensor, residual: f64) -> Result<(Tensor, Vec<Tensor>)> {
    let h = m.n_heads();
    let p = v.cols() / h;
    let mut dv = dy.scale(residual);
    let mut dms = Vec::with_capacity(h);
    for (head, mh) in m.per_head.iter().enumerate() {
        let dyh = head_slice(dy, head, p);
        let vh = head_slice(v, head, p);
        dv.add_columns(head * p, &crate::tensor::matmul_tn(mh, &dyh)?);
        dms.push(crate::tensor::matmul_nt(&dyh, &vh)?);
    }
    Ok((dv, dms))
}

/// Materializes every item of a batch (DI families give identical copies).
pub fn materialize_family(m: &dyn MatrixMixer, x: Option<&SequenceBatch>) -> Result<Vec<MaterializedMixer>> {
    match x {
        Some(xb) => xb.items().map(|item| m.materialize(Some(&item))).collect(),
        None if !m.is_data_dependent() => Ok(vec![m.materialize(None)?]),
        None => Err(MixerError::MissingInput(m.name())),
    }
}

pub fn apply_family(m: &dyn MatrixMixer, v: &SequenceBatch, x: Option<&SequenceBatch>) -> Result<SequenceBatch> {
    if let Some(xb) = x {
        if xb.batch() != v.batch() {
            return Err(MixerError::shape("apply_family", "x and v batch sizes differ"));
        }
    }
    let mut out = Vec::with_capacity(v.batch());
    for b in 0..v.batch() {
        let xi = x.map(|xb| xb.item(b));
        out.push(m.apply_seq(&v.item(b), xi.as_ref())?);
    }
    SequenceBatch::from_items(&out)
}

/// Checks that the leading `(i+1) × (i+1)` block computed from the whole
/// sequence equals the matrix computed from the prefix `x[..=i]` alone.
pub fn check_prefix_consistency(m: &dyn MatrixMixer, x: &SequenceBatch, i: usize) -> Result<VerificationReport> {
    if !m.is_data_dependent() {
        return Err(MixerError::Unsupported {
            family: m.name(),
            what: "prefix consistency (no data-dependent construction)".into(),
        });
    }
    if i >= x.len() {
        return Err(MixerError::shape("check_prefix_consistency", format!("index {i} ≥ L = {}", x.len())));
    }
    let mut report = VerificationReport::new(format!("prefix-consistency/{}", m.name()));
    let mut worst = 0.0f64;
    for item in x.items() {
        let full = m.sam_matrix(&item)?.leading(i + 1);
        let prefix = m.sam_matrix(&item.block(0, i + 1, 0, item.cols()))?;
        worst = worst.max(full.max_rel_error(&prefix));
    }
    report.push(CheckRecord::at_most(format!("prefix-{i}"), worst, SAM_TOL));
    Ok(report)
}

/// Builds the mixer at a longer length with the same parametric functions and
/// compares the leading block with the short construction.
pub fn check_extendability(m: &dyn MatrixMixer, x_short: &SequenceBatch, x_long: &SequenceBatch) -> Result<VerificationReport> {
    if !m.is_data_dependent() {
        return Err(MixerError::Unsupported {
            family: m.name(),
            what: "extendability (parameters tied to a fixed length)".into(),
        });
    }
    let (l, l2) = (x_short.len(), x_long.len());
    if l2 <= l || x_short.batch() != x_long.batch() {
        return Err(MixerError::shape("check_extendability", format!("need L' > L, got {l2} vs {l}")));
    }
    if x_long.prefix(l).tensor() != x_short.tensor() {
        return Err(MixerError::Config("x_long must extend x_short".into()));
    }
    let mut report = VerificationReport::new(format!("extendability/{}", m.name()));
    let mut worst = 0.0f64;
    for b in 0..x_short.batch() {
        let long = m.sam_matrix(&x_long.item(b))?;
        if long.len() != l2 {
            return Err(MixerError::shape("check_extendability", "long construction has wrong length"));
        }
        let short = m.sam_matrix(&x_short.item(b))?;
        worst = worst.max(long.leading(l).max_rel_error(&short));
    }
    report.push(CheckRecord::at_most(format!("extend-{l}-to-{l2}"), worst, SAM_TOL));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_requires_heads_times_head_dim() {
        let mut c = MixerConfig::new(8, 4, 2, 3, 2);
        assert!(c.validate().is_ok());
        c.inner_dim = 7;
        assert!(c.validate().is_err());
        let ab = MixerConfig::ablation(128, 768, Mode::Dd);
        assert_eq!((ab.inner_dim, ab.n_heads, ab.head_dim, ab.qk_dim), (1536, 12, 128, 16));
        ab.validate().unwrap();
    }

    #[test]
    fn preprocess_identity_and_projection() {
        let mut rng = RngState::new(31);
        let x = SequenceBatch::new(rng.normal_tensor(&[2, 5, 3], 1.0)).unwrap();
        assert_eq!(preprocess(&Preprocessor::identity(), &x).unwrap(), x);
        assert_eq!(preprocess(&Preprocessor::projection(Tensor::identity(3)), &x).unwrap(), x);

        let w = rng.normal_tensor(&[3, 4], 1.0);
        let tok = rng.normal_tensor(&[1, 3], 1.0);
        let y = Preprocessor::projection(w.clone()).apply_seq(&tok).unwrap();
        let mut want = Tensor::zeros(&[1, 4]);
        for j in 0..4 {
            *want.at2_mut(0, j) = (0..3).map(|c| tok.at2(0, c) * w.at2(c, j)).sum();
        }
        assert!(rel_error(&y, &want) <= 1e-14);
        assert!(Preprocessor::projection(w).apply_seq(&rng.normal_tensor(&[2, 5], 1.0)).is_err());
    }

    #[test]
    fn short_conv_requires_odd_width() {
        assert!(Preprocessor::projection_with_conv(Tensor::identity(2), Tensor::zeros(&[2, 4])).is_err());
        let p = Preprocessor::projection_with_conv(Tensor::identity(2), Tensor::from_rows(&[&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0]])).unwrap();
        let x = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(p.apply_seq(&x).unwrap(), x);
    }

    #[test]
    fn apply_identity_and_averaging() {
        let mut rng = RngState::new(32);
        let v = rng.normal_tensor(&[4, 6], 1.0);
        assert_eq!(apply_mixer(&MaterializedMixer::identity(2, 4), &v).unwrap(), v);

        let avg = MaterializedMixer::new(vec![Tensor::full(&[4, 4], 0.25); 3]).unwrap();
        let y = apply_mixer(&avg, &v).unwrap();
        for j in 0..6 {
            let mean: f64 = (0..4).map(|i| v.at2(i, j)).sum::<f64>() / 4.0;
            for i in 0..4 {
                assert!((y.at2(i, j) - mean).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn apply_matches_per_head_oracle() {
        let mut rng = RngState::new(33);
        let m = MaterializedMixer::new(vec![rng.normal_tensor(&[3, 3], 1.0), rng.normal_tensor(&[3, 3], 1.0)]).unwrap();
        let v = rng.normal_tensor(&[3, 4], 1.0);
        let y = apply_mixer(&m, &v).unwrap();
        for h in 0..2 {
            for i in 0..3 {
                for c in 0..2 {
                    let want: f64 = (0..3).map(|j| m.per_head[h].at2(i, j) * v.at2(j, 2 * h + c)).sum();
                    assert!((y.at2(i, 2 * h + c) - want).abs() <= 1e-13 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn apply_is_linear_and_heads_are_independent() {
        let mut rng = RngState::new(34);
        let m = MaterializedMixer::new(vec![rng.normal_tensor(&[5, 5], 1.0), rng.normal_tensor(&[5, 5], 1.0)]).unwrap();
        let v1 = rng.normal_tensor(&[5, 6], 1.0);
        let v2 = rng.normal_tensor(&[5, 6], 1.0);
        let (a, b) = (0.7, -1.3);
        let combo = v1.scale(a).add(&v2.scale(b)).unwrap();
        let lhs = apply_mixer(&m, &combo).unwrap();
        let rhs = apply_mixer(&m, &v1).unwrap().scale(a).add(&apply_mixer(&m, &v2).unwrap().scale(b)).unwrap();
        assert!(rel_error(&lhs, &rhs) <= 1e-12);

        let mut v = v1.clone();
        for i in 0..5 {
            for c in 0..3 {
                *v.at2_mut(i, c) = 0.0;
            }
        }
        let y = apply_mixer(&m, &v).unwrap();
        let full = apply_mixer(&m, &v1).unwrap();
        for i in 0..5 {
            for c in 0..3 {
                assert_eq!(y.at2(i, c), 0.0);
                assert_eq!(y.at2(i, c + 3), full.at2(i, c + 3));
            }
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let m = MaterializedMixer::identity(1, 4);
        assert!(apply_mixer(&m, &Tensor::zeros(&[5, 2])).is_err());
    }

    #[test]
    fn family_names_parse() {
        for f in Family::ALL {
            assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
        }
        assert!("butterfly".parse::<Family>().is_err());
    }
}
