use crate::error::Result;
use crate::mixer::{backward_through_matrix, check_values, Family, MaterializedMixer, MatrixMixer, MixerConfig, MixerGrads, Mode};
use crate::rng::RngState;
use crate::tensor::Tensor;

use super::check_fixed_len;

/// Free `H × L × L` parameter, scaled by `1/sqrt(L)`.
#[derive(Clone, Debug)]
pub struct DenseMixer {
    cfg: MixerConfig,
    pub m: Tensor,
}

impl DenseMixer {
    pub fn new(cfg: MixerConfig, rng: &mut RngState) -> Self {
        let l = cfg.seq_len;
        let m = rng.xavier_normal(&[cfg.n_heads, l, l]);
        DenseMixer { cfg, m }
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.cfg.seq_len as f64).sqrt()
    }

    fn entry(&self, h: usize, i: usize, j: usize) -> f64 {
        self.scale() * self.m.at3(h, i, j)
    }
}

impl MatrixMixer for DenseMixer {
    fn family(&self) -> Family {
        Family::Dense
    }

    fn mode(&self) -> Mode {
        Mode::Di
    }

    fn config(&self) -> &MixerConfig {
        &self.cfg
    }

    fn materialize(&self, _x: Option<&Tensor>) -> Result<MaterializedMixer> {
        let l = self.cfg.seq_len;
        let heads = (0..self.cfg.n_heads)
            .map(|h| {
                let mut t = Tensor::zeros(&[l, l]);
                for i in 0..l {
                    for j in 0..l {
                        *t.at2_mut(i, j) = self.entry(h, i, j);
                    }
                }
                t
            })
            .collect();
        MaterializedMixer::new(heads)
    }

    fn apply_seq(&self, v: &Tensor, _x: Option<&Tensor>) -> Result<Tensor> {
        let l = self.cfg.seq_len;
        check_fixed_len("dense", v.rows(), l)?;
        check_values(self, v, l)?;
        let p = self.cfg.head_dim;
        let mut out = v.clone();
        for h in 0..self.cfg.n_heads {
            for i in 0..l {
                let mut acc = vec![0.0; p];
                for j in 0..l {
                    let w = self.entry(h, i, j);
                    for (a, &vv) in acc.iter_mut().zip(&v.row(j)[h * p..(h + 1) * p]) {
                        *a += w * vv;
                    }
                }
                for (o, a) in out.row_mut(i)[h * p..(h + 1) * p].iter_mut().zip(acc) {
                    *o += a;
                }
            }
        }
        Ok(out)
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("m", &self.m)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("m", &mut self.m)]
    }

    fn backward_seq(&self, v: &Tensor, x: Option<&Tensor>, dy: &Tensor) -> Result<MixerGrads> {
        let mat = self.materialize(x)?;
        let (dv, dms) = backward_through_matrix(&mat, v, dy, 1.0)?;
        let l = self.cfg.seq_len;
        let mut dm = Tensor::zeros(self.m.shape());
        for (h, g) in dms.iter().enumerate() {
            for i in 0..l {
                for j in 0..l {
                    *dm.at3_mut(h, i, j) = self.scale() * g.at2(i, j);
                }
            }
        }
        Ok(MixerGrads { dv, dx: None, params: vec![dm] })
    }
}
