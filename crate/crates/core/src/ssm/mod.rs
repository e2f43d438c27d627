//! Recurrent mixers: the semiseparable scan, its quasiseparable two-direction
//! extension, dense materializers for both, rank checkers and the embeddings
//! of low-rank and addition-based bidirectional mixers into the
//! quasiseparable class.

mod discretize;
mod embed;
mod mixers;
mod quasi;
mod rank;
mod scan;

pub use discretize::{
    discretize, discretize_batch, discretize_features, discretize_features_backward, inv_softplus, sigmoid, softplus,
    DiscretizeGrads, SsmHeadParams,
};
pub(crate) use discretize::init_dt_bias;
pub use embed::{
    addition_bidir_materialize, addition_bidir_to_quasi, embed_addition_bidir_as_quasi, embed_lowrank_as_quasi,
};
pub use mixers::{QuasiMixer, SemiMixer};
pub use quasi::{
    qc_features_backward, qs_apply, qs_apply_batch, qs_apply_coeffs, qs_backward_coeffs, qs_materialize, qs_materialize_coeffs,
    QuasiCoeffGrads, QuasiCoeffs, QuasiFeatureGrads, QuasiFeatures, QuasiParams,
};
pub use rank::{block_ranks, check_quasi_rank, check_semisep_rank};
pub use scan::{backward_ss_scan, ss_materialize, ss_scan, ss_scan_batch, ss_scan_saved, ScanGrads, ScanSaved};

use crate::error::{MixerError, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Per-token scan coefficients of one direction.
///
/// `abar[t, h]` is the scalar transition of head `h`; `bbar` and `c` are
/// `L × H × N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanCoeffs {
    pub abar: Tensor,
    pub bbar: Tensor,
    pub c: Tensor,
}

impl ScanCoeffs {
    pub fn new(abar: Tensor, bbar: Tensor, c: Tensor) -> Result<Self> {
        let (l, h) = (abar.rows(), abar.cols());
        if abar.ndim() != 2 || bbar.ndim() != 3 || bbar.shape()[..2] != [l, h] || bbar.shape() != c.shape() {
            return Err(MixerError::shape(
                "ScanCoeffs",
                format!("abar {:?}, bbar {:?}, c {:?}", abar.shape(), bbar.shape(), c.shape()),
            ));
        }
        Ok(ScanCoeffs { abar, bbar, c })
    }

    /// Generic instance: `ā ~ U(0.6, 0.99)`, unit-normal `b̄` and `c`.
    pub fn random(l: usize, h: usize, n: usize, rng: &mut RngState) -> Self {
        ScanCoeffs {
            abar: rng.uniform_tensor(&[l, h], 0.6, 0.99),
            bbar: rng.normal_tensor(&[l, h, n], 1.0),
            c: rng.normal_tensor(&[l, h, n], 1.0),
        }
    }

    pub fn zeros(l: usize, h: usize, n: usize) -> Self {
        ScanCoeffs {
            abar: Tensor::zeros(&[l, h]),
            bbar: Tensor::zeros(&[l, h, n]),
            c: Tensor::zeros(&[l, h, n]),
        }
    }

    pub fn len(&self) -> usize {
        self.abar.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_heads(&self) -> usize {
        self.abar.cols()
    }

    pub fn n_state(&self) -> usize {
        self.bbar.shape()[2]
    }

    pub(crate) fn b_row(&self, t: usize, h: usize) -> &[f64] {
        let n = self.n_state();
        let off = (t * self.n_heads() + h) * n;
        &self.bbar.data()[off..off + n]
    }

    pub(crate) fn c_row(&self, t: usize, h: usize) -> &[f64] {
        let n = self.n_state();
        let off = (t * self.n_heads() + h) * n;
        &self.c.data()[off..off + n]
    }

    /// Coefficients of the token-reversed sequence.
    pub fn flipped(&self) -> ScanCoeffs {
        ScanCoeffs {
            abar: flip_leading(&self.abar),
            bbar: flip_leading(&self.bbar),
            c: flip_leading(&self.c),
        }
    }
}

/// Reverses the leading axis of a tensor of any rank.
pub(crate) fn flip_leading(t: &Tensor) -> Tensor {
    let l = t.shape()[0];
    let w = t.len() / l.max(1);
    let mut out = Tensor::zeros(t.shape());
    for i in 0..l {
        out.data_mut()[i * w..(i + 1) * w].copy_from_slice(&t.data()[(l - 1 - i) * w..(l - i) * w]);
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
