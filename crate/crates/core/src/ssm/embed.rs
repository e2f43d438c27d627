use crate::error::{MixerError, Result};
use crate::mixer::MaterializedMixer;
use crate::report::{CheckRecord, VerificationReport};
use crate::tensor::{flip_seq, Tensor};

use super::{discretize, dot, qs_materialize_coeffs, ss_materialize, QuasiCoeffs, ScanCoeffs, SsmHeadParams};

const EMBED_TOL: f64 = 1e-12;

/// Single-head quasiseparable coefficients whose matrix is exactly `q kᵀ`.
///
/// All transitions are 1. The forward output vector at scan position `s`
/// is `q_{s+1}` (the shift moves it onto row `s+1`); the reversed branch
/// mirrors this, and `δ_i = q_iᵀk_i`. State width is `d`.
pub fn embed_lowrank_as_quasi(q: &Tensor, k: &Tensor) -> Result<QuasiCoeffs> {
    if q.ndim() != 2 || q.shape() != k.shape() {
        return Err(MixerError::shape("embed_lowrank_as_quasi", "q and k must both be L × d"));
    }
    let (l, d) = (q.rows(), q.cols());
    let mut fwd = ScanCoeffs::zeros(l, 1, d);
    let mut bwd = ScanCoeffs::zeros(l, 1, d);
    let mut delta = Tensor::zeros(&[l, 1]);
    for s in 0..l {
        *fwd.abar.at2_mut(s, 0) = 1.0;
        *bwd.abar.at2_mut(s, 0) = 1.0;
        *delta.at2_mut(s, 0) = dot(q.row(s), k.row(s));
        for n in 0..d {
            *fwd.bbar.at3_mut(s, 0, n) = k.at2(s, n);
            *bwd.bbar.at3_mut(s, 0, n) = k.at2(l - 1 - s, n);
            if s + 1 < l {
                *fwd.c.at3_mut(s, 0, n) = q.at2(s + 1, n);
                *bwd.c.at3_mut(s, 0, n) = q.at2(l - 2 - s, n);
            }
        }
    }
    QuasiCoeffs::new(fwd, bwd, delta)
}

/// `SS_f + J SS_b J` with both diagonals kept; `cb` is in reversed
/// coordinates.
pub fn addition_bidir_materialize(cf: &ScanCoeffs, cb: &ScanCoeffs) -> Result<MaterializedMixer> {
    if cf.len() != cb.len() || cf.n_heads() != cb.n_heads() {
        return Err(MixerError::shape("addition_bidir_materialize", "direction shapes disagree"));
    }
    let l = cf.len();
    let (mf, mb) = (ss_materialize(cf), ss_materialize(cb));
    let heads = mf
        .per_head
        .iter()
        .zip(&mb.per_head)
        .map(|(f, b)| {
            let mut m = f.clone();
            for i in 0..l {
                for j in i..l {
                    *m.at2_mut(i, j) += b.at2(l - 1 - i, l - 1 - j);
                }
            }
            m
        })
        .collect();
    MaterializedMixer::new(heads)
}

/// Absorbs the shift by advancing the output vectors one step,
/// `c'_s = ā_{s+1} c_{s+1}`, and moves both unshifted diagonals into `δ`.
pub fn addition_bidir_to_quasi(cf: &ScanCoeffs, cb: &ScanCoeffs) -> Result<QuasiCoeffs> {
    let (l, h, n) = (cf.len(), cf.n_heads(), cf.n_state());
    let advance = |co: &ScanCoeffs| {
        let mut out = co.clone();
        out.c = Tensor::zeros(co.c.shape());
        for s in 0..l.saturating_sub(1) {
            for k in 0..h {
                let a = co.abar.at2(s + 1, k);
                for m in 0..n {
                    *out.c.at3_mut(s, k, m) = a * co.c.at3(s + 1, k, m);
                }
            }
        }
        out
    };
    let mut delta = Tensor::zeros(&[l, h]);
    for i in 0..l {
        for k in 0..h {
            let r = l - 1 - i;
            *delta.at2_mut(i, k) = dot(cf.c_row(i, k), cf.b_row(i, k)) + dot(cb.c_row(r, k), cb.b_row(r, k));
        }
    }
    QuasiCoeffs::new(advance(cf), advance(cb), delta)
}

/// Discretizes both directions on `x` (the backward one on `flip(x)`),
/// checks the quasiseparable form reproduces the addition-based mixer, then
/// moves one diagonal entry off its constrained value.
pub fn embed_addition_bidir_as_quasi(fwd: &SsmHeadParams, bwd: &SsmHeadParams, x: &Tensor) -> Result<VerificationReport> {
    let cf = discretize(fwd, x)?;
    let cb = discretize(bwd, &flip_seq(x))?;
    let target = addition_bidir_materialize(&cf, &cb)?;
    let mut qc = addition_bidir_to_quasi(&cf, &cb)?;
    let mut report = VerificationReport::new("addition-bidir-embedding");
    let base = qs_materialize_coeffs(&qc);
    report.push(CheckRecord::at_most("entrywise", base.max_rel_error(&target), EMBED_TOL));

    let i0 = x.rows() / 2;
    *qc.delta.at2_mut(i0, 0) += 1.0;
    let moved = qs_materialize_coeffs(&qc);
    let changed = moved.per_head[0]
        .data()
        .iter()
        .zip(base.per_head[0].data())
        .filter(|(a, b)| a != b)
        .count();
    report.push(
        CheckRecord::expect("perturbed-diagonal-locality", changed == 1, changed as f64, 1.0).counting().with_note(format!(
            "δ_{i0} moved by +1 with every off-diagonal entry fixed; the addition form pins its diagonal to c_iᵀb̄_i + c̃_iᵀb̃_i"
        )),
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use crate::ssm::check_quasi_rank;
    use crate::tensor::{matmul_nt, rel_error};

    #[test]
    fn ones_vectors_give_all_ones() {
        let q = Tensor::full(&[5, 1], 1.0);
        let m = qs_materialize_coeffs(&embed_lowrank_as_quasi(&q, &q).unwrap());
        assert!(m.per_head[0].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn random_rank_two_is_reproduced() {
        let mut rng = RngState::new(31);
        let q = rng.normal_tensor(&[8, 2], 1.0);
        let k = rng.normal_tensor(&[8, 2], 1.0);
        let m = &qs_materialize_coeffs(&embed_lowrank_as_quasi(&q, &k).unwrap()).per_head[0];
        assert!(rel_error(m, &matmul_nt(&q, &k).unwrap()) <= 1e-13);
        assert!(check_quasi_rank(m, 2).unwrap().pass);
    }

    #[test]
    fn addition_form_embeds() {
        let mut rng = RngState::new(32);
        let f = SsmHeadParams::new(3, 2, 2, &mut rng);
        let b = SsmHeadParams::new(3, 2, 2, &mut rng);
        let x = rng.normal_tensor(&[8, 3], 1.0);
        let r = embed_addition_bidir_as_quasi(&f, &b, &x).unwrap();
        assert!(r.pass, "{r}");
    }

    #[test]
    fn zeroed_backward_branch_is_the_semiseparable_case() {
        let mut rng = RngState::new(33);
        let f = SsmHeadParams::new(3, 1, 2, &mut rng);
        let b = f.zeroed();
        let x = rng.normal_tensor(&[8, 3], 1.0);
        assert!(embed_addition_bidir_as_quasi(&f, &b, &x).unwrap().pass);
        let cf = discretize(&f, &x).unwrap();
        let cb = discretize(&b, &flip_seq(&x)).unwrap();
        let m = addition_bidir_materialize(&cf, &cb).unwrap();
        assert!(m.is_lower_triangular());
    }
}
