use crate::error::Result;
use crate::mixer::{backward_through_matrix, check_values, head_slice, require_x, Family, MaterializedMixer, MatrixMixer, MixerConfig, MixerGrads, Mode};
use crate::rng::RngState;
use crate::tensor::{matmul, matmul_nt, matmul_tn, softmax_rows, Tensor};

use super::{as_rows, check_fixed_len, project};

/// `M^h = softmax_rows(Q^h K^hᵀ / sqrt(d))`.
///
/// Row normalization couples every entry to the whole row, so the
/// sequence-alignment checks look at the pre-normalization logits.
#[derive(Clone, Debug)]
pub struct AttentionMixer {
    cfg: MixerConfig,
    pub q: Option<Tensor>,
    pub k: Option<Tensor>,
    pub w_q: Option<Tensor>,
    pub w_k: Option<Tensor>,
}

impl AttentionMixer {
    pub fn new(cfg: MixerConfig, rng: &mut RngState) -> Self {
        let (l, h, d, c) = (cfg.seq_len, cfg.n_heads, cfg.qk_dim, cfg.in_channels);
        if cfg.data_dependent {
            AttentionMixer {
                q: None,
                k: None,
                w_q: Some(rng.xavier_normal(&[c, h * d])),
                w_k: Some(rng.xavier_normal(&[c, h * d])),
                cfg,
            }
        } else {
            AttentionMixer {
                q: Some(rng.xavier_normal(&[l, h, d])),
                k: Some(rng.xavier_normal(&[l, h, d])),
                w_q: None,
                w_k: None,
                cfg,
            }
        }
    }

    fn features(&self, x: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        if self.cfg.data_dependent {
            let x = require_x(self, x)?;
            Ok((project(x, self.w_q.as_ref().unwrap())?, project(x, self.w_k.as_ref().unwrap())?))
        } else {
            Ok((as_rows(self.q.as_ref().unwrap()), as_rows(self.k.as_ref().unwrap())))
        }
    }

    fn logit_scale(&self) -> f64 {
        1.0 / (self.cfg.qk_dim as f64).sqrt()
    }

    /// Scaled logits `q_iᵀ k_j / sqrt(d)` per head.
    pub fn logits(&self, x: Option<&Tensor>) -> Result<MaterializedMixer> {
        let (q, k) = self.features(x)?;
        let d = self.cfg.qk_dim;
        let heads: Result<Vec<Tensor>> = (0..self.cfg.n_heads)
            .map(|h| Ok(matmul_nt(&head_slice(&q, h, d), &head_slice(&k, h, d))?.scale(self.logit_scale())))
            .collect();
        MaterializedMixer::new(heads?)
    }
}

impl MatrixMixer for AttentionMixer {
    fn family(&self) -> Family {
        Family::Attention
    }

    fn mode(&self) -> Mode {
        if self.cfg.data_dependent {
            Mode::Dd
        } else {
            Mode::Di
        }
    }

    fn config(&self) -> &MixerConfig {
        &self.cfg
    }

    fn materialize(&self, x: Option<&Tensor>) -> Result<MaterializedMixer> {
        let logits = self.logits(x)?;
        let heads: Result<Vec<Tensor>> = logits.per_head.iter().map(softmax_rows).collect();
        MaterializedMixer::new(heads?)
    }

    fn apply_seq(&self, v: &Tensor, x: Option<&Tensor>) -> Result<Tensor> {
        let m = self.materialize(x)?;
        let l = m.len();
        if !self.cfg.data_dependent {
            check_fixed_len("attention-di", v.rows(), l)?;
        }
        check_values(self, v, l)?;
        let p = self.cfg.head_dim;
        let mut out = v.clone();
        for (h, mh) in m.per_head.iter().enumerate() {
            out.add_columns(h * p, &matmul(mh, &head_slice(v, h, p))?);
        }
        Ok(out)
    }

    fn sam_matrix(&self, x: &Tensor) -> Result<MaterializedMixer> {
        self.logits(Some(x))
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        if self.cfg.data_dependent {
            vec![("w_q", self.w_q.as_ref().unwrap()), ("w_k", self.w_k.as_ref().unwrap())]
        } else {
            vec![("q", self.q.as_ref().unwrap()), ("k", self.k.as_ref().unwrap())]
        }
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        if self.cfg.data_dependent {
            vec![("w_q", self.w_q.as_mut().unwrap()), ("w_k", self.w_k.as_mut().unwrap())]
        } else {
            vec![("q", self.q.as_mut().unwrap()), ("k", self.k.as_mut().unwrap())]
        }
    }

    fn backward_seq(&self, v: &Tensor, x: Option<&Tensor>, dy: &Tensor) -> Result<MixerGrads> {
        let (q, k) = self.features(x)?;
        let mat = self.materialize(x)?;
        let (dv, dms) = backward_through_matrix(&mat, v, dy, 1.0)?;
        let d = self.cfg.qk_dim;
        let mut dq = Tensor::zeros(q.shape());
        let mut dk = Tensor::zeros(k.shape());
        for (h, (g, a)) in dms.iter().zip(&mat.per_head).enumerate() {
            let ds = crate::grad::softmax_rows_backward(a, g)?.scale(self.logit_scale());
            dq.add_columns(h * d, &matmul(&ds, &head_slice(&k, h, d))?);
            dk.add_columns(h * d, &matmul_tn(&ds, &head_slice(&q, h, d))?);
        }
        if !self.cfg.data_dependent {
            let shape = self.q.as_ref().unwrap().shape().to_vec();
            return Ok(MixerGrads {
                dv,
                dx: None,
                params: vec![dq.reshape(&shape)?, dk.reshape(&shape)?],
            });
        }
        let x = require_x(self, x)?;
        let (wq, wk) = (self.w_q.as_ref().unwrap(), self.w_k.as_ref().unwrap());
        let dx = matmul_nt(&dq, wq)?.add(&matmul_nt(&dk, wk)?)?;
        Ok(MixerGrads {
            dv,
            dx: Some(dx),
            params: vec![matmul_tn(x, &dq)?, matmul_tn(x, &dk)?],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_sum_to_one() {
        let mut rng = RngState::new(91);
        let mut cfg = MixerConfig::new(7, 3, 2, 2, 4);
        cfg.data_dependent = true;
        let m = AttentionMixer::new(cfg, &mut rng);
        let x = rng.normal_tensor(&[7, 3], 2.0);
        for h in m.materialize(Some(&x)).unwrap().per_head {
            for i in 0..7 {
                let s: f64 = h.row(i).iter().sum();
                assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn normalized_matrix_is_not_prefix_consistent_but_logits_are() {
        let mut rng = RngState::new(92);
        let mut cfg = MixerConfig::new(6, 3, 1, 2, 2);
        cfg.data_dependent = true;
        let m = AttentionMixer::new(cfg, &mut rng);
        let x = rng.normal_tensor(&[6, 3], 1.0);
        let prefix = x.block(0, 3, 0, 3);
        let full = m.materialize(Some(&x)).unwrap().leading(3);
        let short = m.materialize(Some(&prefix)).unwrap();
        assert!(full.max_rel_error(&short) > 1e-6);
        let fl = m.sam_matrix(&x).unwrap().leading(3);
        assert!(fl.max_rel_error(&m.sam_matrix(&prefix).unwrap()) <= 1e-12);
    }
}
