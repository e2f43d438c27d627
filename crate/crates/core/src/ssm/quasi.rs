use crate::batch::SequenceBatch;
use crate::error::{MixerError, Result};
use crate::mixer::MaterializedMixer;
use crate::rng::RngState;
use crate::tensor::{flip_seq, matmul, matmul_nt, matmul_tn, shift_left, shift_right, Tensor};

use super::discretize::features_backward;
use super::{
    backward_ss_scan, discretize_features, discretize_features_backward, dot, ss_scan, ss_scan_saved, ScanCoeffs,
    SsmHeadParams,
};

/// Two scan directions plus the data-dependent diagonal.
///
/// The backward direction reads the token-reversed input. With
/// `share_decay` both directions use `fwd.a_log` and `bwd.a_log` is ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct QuasiParams {
    pub fwd: SsmHeadParams,
    pub bwd: SsmHeadParams,
    /// `C × H`: `δ_t = x_t W_δ`.
    pub delta_weight: Tensor,
    pub share_decay: bool,
}

/// Per-token construction inputs, all in natural token order: step logits
/// `L × H`, state vectors `L × N`, diagonal `L × H`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuasiFeatures {
    pub dt_f: Tensor,
    pub b_f: Tensor,
    pub c_f: Tensor,
    pub dt_b: Tensor,
    pub b_b: Tensor,
    pub c_b: Tensor,
    pub delta: Tensor,
}

/// Discretized coefficients. `bwd` is indexed in reversed coordinates:
/// position `s` belongs to token `L − 1 − s`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuasiCoeffs {
    pub fwd: ScanCoeffs,
    pub bwd: ScanCoeffs,
    pub delta: Tensor,
}

#[derive(Clone, Debug)]
pub struct QuasiCoeffGrads {
    pub dxv: Tensor,
    pub fwd: ScanCoeffs,
    pub bwd: ScanCoeffs,
    pub delta: Tensor,
}

#[derive(Clone, Debug)]
pub struct QuasiFeatureGrads {
    pub features: QuasiFeatures,
    pub a_log_f: Tensor,
    pub dt_bias_f: Tensor,
    pub a_log_b: Tensor,
    pub dt_bias_b: Tensor,
}

impl QuasiParams {
    pub fn new(in_channels: usize, n_heads: usize, n_state: usize, rng: &mut RngState) -> Self {
        let fwd = SsmHeadParams::new(in_channels, n_heads, n_state, rng);
        let mut bwd = SsmHeadParams::new(in_channels, n_heads, n_state, rng);
        bwd.a_log = fwd.a_log.clone();
        QuasiParams {
            fwd,
            bwd,
            delta_weight: rng.xavier_normal(&[in_channels, n_heads]),
            share_decay: true,
        }
    }

    pub fn n_heads(&self) -> usize {
        self.fwd.n_heads()
    }

    pub fn n_state(&self) -> usize {
        self.fwd.n_state()
    }

    pub fn bwd_a_log(&self) -> &Tensor {
        if self.share_decay {
            &self.fwd.a_log
        } else {
            &self.bwd.a_log
        }
    }

    pub fn features(&self, x: &Tensor) -> Result<QuasiFeatures> {
        let (dt_f, b_f, c_f) = self.fwd.features(x)?;
        let (dt_b, b_b, c_b) = self.bwd.features(x)?;
        Ok(QuasiFeatures {
            dt_f,
            b_f,
            c_f,
            dt_b,
            b_b,
            c_b,
            delta: matmul(x, &self.delta_weight)?,
        })
    }

    pub fn coeffs(&self, x: &Tensor) -> Result<QuasiCoeffs> {
        QuasiCoeffs::from_features(
            &self.features(x)?,
            (&self.fwd.a_log, &self.fwd.dt_bias),
            (self.bwd_a_log(), &self.bwd.dt_bias),
        )
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = vec![
            ("fwd.a_log", &self.fwd.a_log),
            ("fwd.dt_weight", &self.fwd.dt_weight),
            ("fwd.dt_bias", &self.fwd.dt_bias),
            ("fwd.b_weight", &self.fwd.b_weight),
            ("fwd.c_weight", &self.fwd.c_weight),
        ];
        if !self.share_decay {
            v.push(("bwd.a_log", &self.bwd.a_log));
        }
        v.extend([
            ("bwd.dt_weight", &self.bwd.dt_weight),
            ("bwd.dt_bias", &self.bwd.dt_bias),
            ("bwd.b_weight", &self.bwd.b_weight),
            ("bwd.c_weight", &self.bwd.c_weight),
            ("delta_weight", &self.delta_weight),
        ]);
        v
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut v = vec![
            ("fwd.a_log", &mut self.fwd.a_log),
            ("fwd.dt_weight", &mut self.fwd.dt_weight),
            ("fwd.dt_bias", &mut self.fwd.dt_bias),
            ("fwd.b_weight", &mut self.fwd.b_weight),
            ("fwd.c_weight", &mut self.fwd.c_weight),
        ];
        if !self.share_decay {
            v.push(("bwd.a_log", &mut self.bwd.a_log));
        }
        v.extend([
            ("bwd.dt_weight", &mut self.bwd.dt_weight),
            ("bwd.dt_bias", &mut self.bwd.dt_bias),
            ("bwd.b_weight", &mut self.bwd.b_weight),
            ("bwd.c_weight", &mut self.bwd.c_weight),
            ("delta_weight", &mut self.delta_weight),
        ]);
        v
    }

    /// `(dxv, dx, parameter grads in [`QuasiParams::named`] order)`.
    pub fn backward(&self, x: &Tensor, xv: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Vec<Tensor>)> {
        let f = self.features(x)?;
        let dec_f = (&self.fwd.a_log, &self.fwd.dt_bias);
        let dec_b = (self.bwd_a_log(), &self.bwd.dt_bias);
        let qc = QuasiCoeffs::from_features(&f, dec_f, dec_b)?;
        let cg = qs_backward_coeffs(&qc, xv, dy)?;
        let fg = qc_features_backward(&f, dec_f, dec_b, &cg)?;
        let g = &fg.features;
        let gf = super::DiscretizeGrads {
            dt_lin: g.dt_f.clone(),
            dt_bias: fg.dt_bias_f.clone(),
            a_log: fg.a_log_f.clone(),
            b: g.b_f.clone(),
            c: g.c_f.clone(),
        };
        let gb = super::DiscretizeGrads {
            dt_lin: g.dt_b.clone(),
            dt_bias: fg.dt_bias_b.clone(),
            a_log: fg.a_log_b.clone(),
            b: g.b_b.clone(),
            c: g.c_b.clone(),
        };
        let (dx_f, dwdt_f, dwb_f, dwc_f) = features_backward(&self.fwd, x, &gf)?;
        let (dx_b, dwdt_b, dwb_b, dwc_b) = features_backward(&self.bwd, x, &gb)?;
        let dx = dx_f.add(&dx_b)?.add(&matmul_nt(&g.delta, &self.delta_weight)?)?;
        let mut grads = Vec::new();
        if self.share_decay {
            grads.push(fg.a_log_f.add(&fg.a_log_b)?);
        } else {
            grads.push(fg.a_log_f.clone());
        }
        grads.extend([dwdt_f, fg.dt_bias_f.clone(), dwb_f, dwc_f]);
        if !self.share_decay {
            grads.push(fg.a_log_b.clone());
        }
        grads.extend([dwdt_b, fg.dt_bias_b.clone(), dwb_b, dwc_b, matmul_tn(x, &g.delta)?]);
        Ok((cg.dxv, dx, grads))
    }
}

impl QuasiCoeffs {
    /// Discretizes both directions; `dec_*` is `(a_log, dt_bias)`.
    pub fn from_features(f: &QuasiFeatures, dec_f: (&Tensor, &Tensor), dec_b: (&Tensor, &Tensor)) -> Result<Self> {
        let fwd = discretize_features(&f.dt_f, dec_f.1, dec_f.0, &f.b_f, &f.c_f)?;
        let bwd = discretize_features(
            &flip_seq(&f.dt_b),
            dec_b.1,
            dec_b.0,
            &flip_seq(&f.b_b),
            &flip_seq(&f.c_b),
        )?;
        f.delta.ensure_finite("delta")?;
        QuasiCoeffs::new(fwd, bwd, f.delta.clone())
    }

    pub fn new(fwd: ScanCoeffs, bwd: ScanCoeffs, delta: Tensor) -> Result<Self> {
        let (l, h) = (fwd.len(), fwd.n_heads());
        if bwd.len() != l || bwd.n_heads() != h || bwd.n_state() != fwd.n_state() || delta.shape() != [l, h] {
            return Err(MixerError::shape("QuasiCoeffs", "direction or diagonal shapes disagree"));
        }
        Ok(QuasiCoeffs { fwd, bwd, delta })
    }

    pub fn random(l: usize, h: usize, n: usize, rng: &mut RngState) -> Self {
        QuasiCoeffs {
            fwd: ScanCoeffs::random(l, h, n, rng),
            bwd: ScanCoeffs::random(l, h, n, rng),
            delta: rng.normal_tensor(&[l, h], 1.0),
        }
    }

    pub fn len(&self) -> usize {
        self.fwd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_heads(&self) -> usize {
        self.fwd.n_heads()
    }
}

fn check_values(qc: &QuasiCoeffs, xv: &Tensor) -> Result<usize> {
    let h = qc.n_heads();
    if xv.ndim() != 2 || xv.rows() != qc.len() || xv.cols() % h != 0 {
        return Err(MixerError::shape(
            "qs_apply",
            format!("values {:?} against {} tokens × {h} heads", xv.shape(), qc.len()),
        ));
    }
    Ok(xv.cols() / h)
}

fn add_diagonal(out: &mut Tensor, delta: &Tensor, xv: &Tensor, p: usize) {
    for t in 0..xv.rows() {
        let d = delta.row(t).to_vec();
        let x = xv.row(t).to_vec();
        for (c, o) in out.row_mut(t).iter_mut().enumerate() {
            *o += d[c / p] * x[c];
        }
    }
}

/// `shift(SS_f(v)) + flip(shift(SS_b(flip(v)))) + δ ⊙ v`.
pub fn qs_apply_coeffs(qc: &QuasiCoeffs, xv: &Tensor) -> Result<Tensor> {
    let p = check_values(qc, xv)?;
    let yf = shift_right(&ss_scan(xv, &qc.fwd)?);
    let yb = flip_seq(&shift_right(&ss_scan(&flip_seq(xv), &qc.bwd)?));
    let mut out = yf.add(&yb)?;
    add_diagonal(&mut out, &qc.delta, xv, p);
    Ok(out)
}

/// `x` drives construction, `xv` is the value stream.
pub fn qs_apply(p: &QuasiParams, x: &Tensor, xv: &Tensor) -> Result<Tensor> {
    qs_apply_coeffs(&p.coeffs(x)?, xv)
}

pub fn qs_apply_batch(p: &QuasiParams, x: &SequenceBatch, xv: &SequenceBatch) -> Result<SequenceBatch> {
    if x.batch() != xv.batch() {
        return Err(MixerError::shape("qs_apply_batch", "x and xv batch sizes differ"));
    }
    let out: Result<Vec<Tensor>> = x.items().zip(xv.items()).map(|(xi, vi)| qs_apply(p, &xi, &vi)).collect();
    SequenceBatch::from_items(&out?)
}

/// Entrywise construction:
/// below the diagonal `m_ij = c⃗_{i−1}ᵀ (∏_{k=j+1}^{i−1} ā⃗_k) b̄⃗_j`;
/// above it the same form in reversed coordinates, `i' = L−2−i`,
/// `j' = L−1−j`; on it `δ_i`.
pub fn qs_materialize_coeffs(qc: &QuasiCoeffs) -> MaterializedMixer {
    let l = qc.len();
    let heads = (0..qc.n_heads())
        .map(|h| {
            let mut m = Tensor::zeros(&[l, l]);
            for i in 0..l {
                *m.at2_mut(i, i) = qc.delta.at2(i, h);
            }
            for j in 0..l {
                // Lower: walk i = j+1.. with prod = ∏_{k=j+1}^{i−1} ā_k.
                let mut prod = 1.0;
                for i in j + 1..l {
                    if i > j + 1 {
                        prod *= qc.fwd.abar.at2(i - 1, h);
                    }
                    *m.at2_mut(i, j) = prod * dot(qc.fwd.c_row(i - 1, h), qc.fwd.b_row(j, h));
                }
                // Upper: reversed source j' = L−1−j, reversed target i' = L−2−i ≥ j'.
                let jr = l - 1 - j;
                let mut prod = 1.0;
                for ir in jr..l.saturating_sub(1) {
                    if ir > jr {
                        prod *= qc.bwd.abar.at2(ir, h);
                    }
                    let i = l - 2 - ir;
                    *m.at2_mut(i, j) = prod * dot(qc.bwd.c_row(ir, h), qc.bwd.b_row(jr, h));
                }
            }
            m
        })
        .collect();
    MaterializedMixer { per_head: heads }
}

pub fn qs_materialize(p: &QuasiParams, x: &Tensor) -> Result<MaterializedMixer> {
    Ok(qs_materialize_coeffs(&p.coeffs(x)?))
}

/// Reverse-mode pass through [`qs_apply_coeffs`]. The adjoint of
/// `shift_right` is `shift_left`.
pub fn qs_backward_coeffs(qc: &QuasiCoeffs, xv: &Tensor, dy: &Tensor) -> Result<QuasiCoeffGrads> {
    let p = check_values(qc, xv)?;
    if dy.shape() != xv.shape() {
        return Err(MixerError::shape("qs backward", "upstream gradient shape"));
    }
    let saved_f = ss_scan_saved(xv, &qc.fwd)?;
    let saved_b = ss_scan_saved(&flip_seq(xv), &qc.bwd)?;
    let gf = backward_ss_scan(&saved_f, &shift_left(dy))?;
    let gb = backward_ss_scan(&saved_b, &shift_left(&flip_seq(dy)))?;
    let mut dxv = gf.dxv.add(&flip_seq(&gb.dxv))?;
    add_diagonal(&mut dxv, &qc.delta, dy, p);
    let h = qc.n_heads();
    let mut ddelta = Tensor::zeros(&[qc.len(), h]);
    for t in 0..qc.len() {
        for k in 0..h {
            *ddelta.at2_mut(t, k) = dot(&dy.row(t)[k * p..(k + 1) * p], &xv.row(t)[k * p..(k + 1) * p]);
        }
    }
    Ok(QuasiCoeffGrads {
        dxv,
        fwd: gf.d,
        bwd: gb.d,
        delta: ddelta,
    })
}

/// Maps coefficient gradients back to [`QuasiFeatures`] and decay parameters.
pub fn qc_features_backward(
    f: &QuasiFeatures,
    dec_f: (&Tensor, &Tensor),
    dec_b: (&Tensor, &Tensor),
    cg: &QuasiCoeffGrads,
) -> Result<QuasiFeatureGrads> {
    let gf = discretize_features_backward(&f.dt_f, dec_f.1, dec_f.0, &f.b_f, &cg.fwd)?;
    let gb = discretize_features_backward(&flip_seq(&f.dt_b), dec_b.1, dec_b.0, &flip_seq(&f.b_b), &cg.bwd)?;
    Ok(QuasiFeatureGrads {
        features: QuasiFeatures {
            dt_f: gf.dt_lin,
            b_f: gf.b,
            c_f: gf.c,
            dt_b: flip_seq(&gb.dt_lin),
            b_b: flip_seq(&gb.b),
            c_b: flip_seq(&gb.c),
            delta: cg.delta.clone(),
        },
        a_log_f: gf.a_log,
        dt_bias_f: gf.dt_bias,
        a_log_b: gb.a_log,
        dt_bias_b: gb.dt_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixer::apply_mixer;
    use crate::tensor::rel_error;

    #[test]
    fn single_token_is_diagonal_only() {
        let mut rng = RngState::new(11);
        let qc = QuasiCoeffs::random(1, 2, 3, &mut rng);
        let xv = rng.normal_tensor(&[1, 4], 1.0);
        let y = qs_apply_coeffs(&qc, &xv).unwrap();
        for c in 0..4 {
            assert!((y.at2(0, c) - qc.delta.at2(0, c / 2) * xv.at2(0, c)).abs() <= 1e-15);
        }
    }

    #[test]
    fn all_ones_gives_sum_of_other_tokens() {
        let ones = ScanCoeffs::new(Tensor::full(&[3, 1], 1.0), Tensor::full(&[3, 1, 1], 1.0), Tensor::full(&[3, 1, 1], 1.0)).unwrap();
        let qc = QuasiCoeffs::new(ones.clone(), ones, Tensor::zeros(&[3, 1])).unwrap();
        let m = qs_materialize_coeffs(&qc);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.per_head[0].at2(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }
        let xv = Tensor::from_vec(&[3, 1], vec![1.0, 10.0, 100.0]).unwrap();
        let y = qs_apply_coeffs(&qc, &xv).unwrap();
        assert_eq!(y.data(), &[110.0, 101.0, 11.0]);
    }

    #[test]
    fn apply_matches_materialization() {
        let mut rng = RngState::new(12);
        for l in [2usize, 3, 8, 16] {
            let qc = QuasiCoeffs::random(l, 2, 3, &mut rng);
            let xv = rng.normal_tensor(&[l, 4], 1.0);
            let want = apply_mixer(&qs_materialize_coeffs(&qc), &xv).unwrap();
            assert!(rel_error(&qs_apply_coeffs(&qc, &xv).unwrap(), &want) <= 1e-11);
        }
    }

    #[test]
    fn basis_vector_probing() {
        let mut rng = RngState::new(13);
        let qc = QuasiCoeffs::random(8, 1, 2, &mut rng);
        let m = qs_materialize_coeffs(&qc);
        for j in 0..8 {
            let mut e = Tensor::zeros(&[8, 1]);
            *e.at2_mut(j, 0) = 1.0;
            let col = qs_apply_coeffs(&qc, &e).unwrap();
            for i in 0..8 {
                assert!((col.at2(i, 0) - m.per_head[0].at2(i, j)).abs() <= 1e-11);
            }
        }
    }

    #[test]
    fn one_sided_reduces_to_shifted_semiseparable() {
        let mut rng = RngState::new(14);
        let mut qc = QuasiCoeffs::random(6, 1, 2, &mut rng);
        qc.bwd = ScanCoeffs::zeros(6, 1, 2);
        qc.delta = Tensor::zeros(&[6, 1]);
        let m = qs_materialize_coeffs(&qc).per_head[0].clone();
        let s = super::super::ss_materialize(&qc.fwd).per_head[0].clone();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i > j { s.at2(i - 1, j) } else { 0.0 };
                assert_eq!(m.at2(i, j), want);
            }
        }
    }

    #[test]
    fn mirrored_directions_give_mirrored_matrix() {
        // Same coefficients both ways: the upper triangle is the lower one
        // rotated by half a turn.
        let mut rng = RngState::new(15);
        let mut qc = QuasiCoeffs::random(7, 1, 2, &mut rng);
        qc.bwd = qc.fwd.clone();
        let m = &qs_materialize_coeffs(&qc).per_head[0];
        for i in 0..7 {
            for j in i + 1..7 {
                assert_eq!(m.at2(i, j), m.at2(6 - i, 6 - j));
            }
        }
    }

    #[test]
    fn perturbation_reach_is_split_by_direction() {
        let mut rng = RngState::new(16);
        let qc = QuasiCoeffs::random(9, 1, 2, &mut rng);
        let xv = rng.normal_tensor(&[9, 1], 1.0);
        let mut x2 = xv.clone();
        *x2.at2_mut(4, 0) += 1.0;
        let fwd_only = |v: &Tensor| shift_right(&ss_scan(v, &qc.fwd).unwrap());
        let bwd_only = |v: &Tensor| flip_seq(&shift_right(&ss_scan(&flip_seq(v), &qc.bwd).unwrap()));
        let (f1, f2) = (fwd_only(&xv), fwd_only(&x2));
        let (b1, b2) = (bwd_only(&xv), bwd_only(&x2));
        for t in 0..9 {
            assert_eq!(f1.at2(t, 0) == f2.at2(t, 0), t <= 4, "fwd t={t}");
            assert_eq!(b1.at2(t, 0) == b2.at2(t, 0), t >= 4, "bwd t={t}");
        }
    }

    #[test]
    fn params_drive_both_paths_identically() {
        let mut rng = RngState::new(17);
        let p = QuasiParams::new(3, 2, 2, &mut rng);
        let x = rng.normal_tensor(&[10, 3], 1.0);
        let xv = rng.normal_tensor(&[10, 6], 1.0);
        let want = apply_mixer(&qs_materialize(&p, &x).unwrap(), &xv).unwrap();
        assert!(rel_error(&qs_apply(&p, &x, &xv).unwrap(), &want) <= 1e-11);
    }
}
