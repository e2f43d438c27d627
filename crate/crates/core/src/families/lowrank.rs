use crate::error::Result;
use crate::mixer::{backward_through_matrix, check_values, head_slice, require_x, Family, MaterializedMixer, MatrixMixer, MixerConfig, MixerGrads, Mode};
use crate::rng::RngState;
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

use super::{as_rows, check_fixed_len, project};

/// Elementwise map applied to queries and keys before the product.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureMap {
    Identity,
    /// `elu(x) + 1`, the linear-attention feature map.
    EluPlusOne,
}

impl FeatureMap {
    fn apply(self, x: f64) -> f64 {
        match self {
            FeatureMap::Identity => x,
            FeatureMap::EluPlusOne => {
                if x > 0.0 {
                    x + 1.0
                } else {
                    x.exp()
                }
            }
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            FeatureMap::Identity => 1.0,
            FeatureMap::EluPlusOne => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
        }
    }
}

/// `M^h = s · φ(Q^h) φ(K^h)ᵀ`, `s = 1/sqrt(L·d)`; rank ≤ d per head.
#[derive(Clone, Debug)]
pub struct LowRankMixer {
    cfg: MixerConfig,
    pub feature_map: FeatureMap,
    /// DI: `L × H × d` each.
    pub q: Option<Tensor>,
    pub k: Option<Tensor>,
    /// DD: `C × (H·d)` each.
    pub w_q: Option<Tensor>,
    pub w_k: Option<Tensor>,
}

impl LowRankMixer {
    pub fn new(cfg: MixerConfig, feature_map: FeatureMap, rng: &mut RngState) -> Self {
        let (l, h, d, c) = (cfg.seq_len, cfg.n_heads, cfg.qk_dim, cfg.in_channels);
        if cfg.data_dependent {
            LowRankMixer {
                feature_map,
                q: None,
                k: None,
                w_q: Some(rng.xavier_normal(&[c, h * d])),
                w_k: Some(rng.xavier_normal(&[c, h * d])),
                cfg,
            }
        } else {
            LowRankMixer {
                feature_map,
                q: Some(rng.xavier_normal(&[l, h, d])),
                k: Some(rng.xavier_normal(&[l, h, d])),
                w_q: None,
                w_k: None,
                cfg,
            }
        }
    }

    pub fn scale(&self) -> f64 {
        1.0 / ((self.cfg.seq_len * self.cfg.qk_dim) as f64).sqrt()
    }

    /// Pre-map features, `L × (H·d)`.
    fn raw_features(&self, x: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        if self.cfg.data_dependent {
            let x = require_x(self, x)?;
            Ok((project(x, self.w_q.as_ref().unwrap())?, project(x, self.w_k.as_ref().unwrap())?))
        } else {
            Ok((as_rows(self.q.as_ref().unwrap()), as_rows(self.k.as_ref().unwrap())))
        }
    }

    fn mapped(&self, x: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let (q, k) = self.raw_features(x)?;
        let f = self.feature_map;
        Ok((q.map(|v| f.apply(v)), k.map(|v| f.apply(v))))
    }
}

impl MatrixMixer for LowRankMixer {
    fn family(&self) -> Family {
        Family::LowRank
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
        let (q, k) = self.mapped(x)?;
        let d = self.cfg.qk_dim;
        let heads: Result<Vec<Tensor>> = (0..self.cfg.n_heads)
            .map(|h| Ok(matmul_nt(&head_slice(&q, h, d), &head_slice(&k, h, d))?.scale(self.scale())))
            .collect();
        MaterializedMixer::new(heads?)
    }

    /// Factored apply: `s · φ(Q) (φ(K)ᵀ V)`, `O(L·d·P)` per head.
    fn apply_seq(&self, v: &Tensor, x: Option<&Tensor>) -> Result<Tensor> {
        let (q, k) = self.mapped(x)?;
        let l = q.rows();
        if !self.cfg.data_dependent {
            check_fixed_len("lowrank-di", v.rows(), l)?;
        }
        check_values(self, v, l)?;
        let (d, p) = (self.cfg.qk_dim, self.cfg.head_dim);
        let mut out = v.clone();
        for h in 0..self.cfg.n_heads {
            let kv = matmul_tn(&head_slice(&k, h, d), &head_slice(v, h, p))?;
            let y = matmul(&head_slice(&q, h, d), &kv)?;
            out.add_columns(h * p, &y.scale(self.scale()));
        }
        Ok(out)
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
        let (qr, kr) = self.raw_features(x)?;
        let f = self.feature_map;
        let (q, k) = (qr.map(|t| f.apply(t)), kr.map(|t| f.apply(t)));
        let mat = self.materialize(x)?;
        let (dv, dms) = backward_through_matrix(&mat, v, dy, 1.0)?;
        let (d, s) = (self.cfg.qk_dim, self.scale());
        let mut dq = Tensor::zeros(q.shape());
        let mut dk = Tensor::zeros(k.shape());
        for (h, g) in dms.iter().enumerate() {
            dq.add_columns(h * d, &matmul(g, &head_slice(&k, h, d))?.scale(s));
            dk.add_columns(h * d, &matmul_tn(g, &head_slice(&q, h, d))?.scale(s));
        }
        let dq = dq.mul(&qr.map(|t| f.derivative(t)))?;
        let dk = dk.mul(&kr.map(|t| f.derivative(t)))?;
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
    fn tied_projections_on_one_hot_tokens_give_gram_matrix() {
        let mut rng = RngState::new(81);
        let mut cfg = MixerConfig::new(4, 4, 1, 2, 3);
        cfg.data_dependent = true;
        let mut m = LowRankMixer::new(cfg, FeatureMap::Identity, &mut rng);
        m.w_k = m.w_q.clone();
        let x = Tensor::identity(4);
        let mat = m.materialize(Some(&x)).unwrap();
        let w = m.w_q.as_ref().unwrap();
        let gram = matmul_nt(w, w).unwrap().scale(m.scale());
        assert!(crate::tensor::rel_error(&mat.per_head[0], &gram) <= 1e-14);
        let t = mat.per_head[0].transpose();
        assert!(crate::tensor::rel_error(&t, &mat.per_head[0]) <= 1e-15);
    }

    #[test]
    fn factored_path_matches_materialization_with_elu_map() {
        let mut rng = RngState::new(82);
        let mut cfg = MixerConfig::new(8, 3, 2, 2, 2);
        cfg.data_dependent = true;
        let m = LowRankMixer::new(cfg, FeatureMap::EluPlusOne, &mut rng);
        let x = rng.normal_tensor(&[8, 3], 1.0);
        let v = rng.normal_tensor(&[8, 4], 1.0);
        let fast = m.apply_seq(&v, Some(&x)).unwrap();
        let slow = crate::mixer::apply_mixer(&m.materialize(Some(&x)).unwrap(), &v).unwrap().add(&v).unwrap();
        assert!(crate::tensor::rel_error(&fast, &slow) <= 1e-11);
        let mat = m.materialize(Some(&x)).unwrap();
        assert!(mat.per_head.iter().all(|h| h.data().iter().all(|&v| v > 0.0)));
    }
}
