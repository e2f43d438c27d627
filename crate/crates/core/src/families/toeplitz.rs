use crate::error::Result;
use crate::fft::toeplitz_apply_fft;
use crate::mixer::{backward_through_matrix, check_values, head_slice, require_x, Family, MaterializedMixer, MatrixMixer, MixerConfig, MixerGrads, Mode};
use crate::rng::RngState;
use crate::tensor::{matmul_nt, matmul_tn, Tensor};

use super::{check_fixed_len, project};

/// Convolutional mixer `m_ij = s · k_{i−j}` with `s = 0.5/sqrt(L)`.
///
/// The data-independent variant owns a `2L − 1` tap kernel per head. The
/// data-dependent variant has each token `t` emit a forward tap `k_t` (used
/// on and below the diagonal) and a reverse tap `k_{−t}` (above it); the
/// reverse tap of token 0 is never used.
#[derive(Clone, Debug)]
pub struct ToeplitzMixer {
    cfg: MixerConfig,
    /// DI: `H × (2L − 1)`, offset `t` stored at index `t + L − 1`.
    pub kernel: Option<Tensor>,
    /// DD: `C × H` forward-tap projection.
    pub w_fwd: Option<Tensor>,
    /// DD: `C × H` reverse-tap projection.
    pub w_rev: Option<Tensor>,
}

impl ToeplitzMixer {
    pub fn new(cfg: MixerConfig, rng: &mut RngState) -> Self {
        if cfg.data_dependent {
            let (c, h) = (cfg.in_channels, cfg.n_heads);
            ToeplitzMixer {
                w_fwd: Some(rng.xavier_normal(&[c, h])),
                w_rev: Some(rng.xavier_normal(&[c, h])),
                kernel: None,
                cfg,
            }
        } else {
            let k = rng.xavier_uniform(&[cfg.n_heads, 2 * cfg.seq_len - 1]);
            ToeplitzMixer {
                kernel: Some(k),
                w_fwd: None,
                w_rev: None,
                cfg,
            }
        }
    }

    pub fn scale(&self) -> f64 {
        0.5 / (self.cfg.seq_len as f64).sqrt()
    }

    /// Unscaled taps per head, each of length `2L − 1`.
    fn kernels(&self, x: Option<&Tensor>) -> Result<Vec<Vec<f64>>> {
        if let Some(k) = &self.kernel {
            return Ok((0..self.cfg.n_heads).map(|h| k.row(h).to_vec()).collect());
        }
        let x = require_x(self, x)?;
        let l = x.rows();
        let fwd = project(x, self.w_fwd.as_ref().expect("dd"))?;
        let rev = project(x, self.w_rev.as_ref().expect("dd"))?;
        Ok((0..self.cfg.n_heads)
            .map(|h| {
                let mut taps = vec![0.0; 2 * l - 1];
                for t in 0..l {
                    taps[l - 1 + t] = fwd.at2(t, h);
                    if t > 0 {
                        taps[l - 1 - t] = rev.at2(t, h);
                    }
                }
                taps
            })
            .collect())
    }

    fn len_for(&self, x: Option<&Tensor>) -> Result<usize> {
        if self.cfg.data_dependent {
            Ok(require_x(self, x)?.rows())
        } else {
            Ok(self.cfg.seq_len)
        }
    }
}

impl MatrixMixer for ToeplitzMixer {
    fn family(&self) -> Family {
        Family::Toeplitz
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
        let l = self.len_for(x)?;
        let s = self.scale();
        let heads = self
            .kernels(x)?
            .into_iter()
            .map(|taps| {
                let mut m = Tensor::zeros(&[l, l]);
                for i in 0..l {
                    for j in 0..l {
                        *m.at2_mut(i, j) = s * taps[i + l - 1 - j];
                    }
                }
                m
            })
            .collect();
        MaterializedMixer::new(heads)
    }

    fn apply_seq(&self, v: &Tensor, x: Option<&Tensor>) -> Result<Tensor> {
        let l = self.len_for(x)?;
        if !self.cfg.data_dependent {
            check_fixed_len("toeplitz-di", v.rows(), l)?;
        }
        check_values(self, v, l)?;
        let p = self.cfg.head_dim;
        let mut out = v.clone();
        for (h, taps) in self.kernels(x)?.into_iter().enumerate() {
            let y = toeplitz_apply_fft(&taps, &head_slice(v, h, p))?;
            out.add_columns(h * p, &y.scale(self.scale()));
        }
        Ok(out)
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match &self.kernel {
            Some(k) => vec![("kernel", k)],
            None => vec![
                ("w_fwd", self.w_fwd.as_ref().unwrap()),
                ("w_rev", self.w_rev.as_ref().unwrap()),
            ],
        }
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match &mut self.kernel {
            Some(k) => vec![("kernel", k)],
            None => vec![
                ("w_fwd", self.w_fwd.as_mut().unwrap()),
                ("w_rev", self.w_rev.as_mut().unwrap()),
            ],
        }
    }

    fn backward_seq(&self, v: &Tensor, x: Option<&Tensor>, dy: &Tensor) -> Result<MixerGrads> {
        let mat = self.materialize(x)?;
        let (dv, dms) = backward_through_matrix(&mat, v, dy, 1.0)?;
        let l = mat.len();
        let s = self.scale();
        // Gradient of each tap = scaled sum along its diagonal.
        let mut dtaps = Tensor::zeros(&[self.cfg.n_heads, 2 * l - 1]);
        for (h, g) in dms.iter().enumerate() {
            for i in 0..l {
                for j in 0..l {
                    *dtaps.at2_mut(h, i + l - 1 - j) += s * g.at2(i, j);
                }
            }
        }
        if self.kernel.is_some() {
            return Ok(MixerGrads { dv, dx: None, params: vec![dtaps] });
        }
        let x = require_x(self, x)?;
        let h = self.cfg.n_heads;
        let mut dfwd = Tensor::zeros(&[l, h]);
        let mut drev = Tensor::zeros(&[l, h]);
        for head in 0..h {
            for t in 0..l {
                *dfwd.at2_mut(t, head) = dtaps.at2(head, l - 1 + t);
                if t > 0 {
                    *drev.at2_mut(t, head) = dtaps.at2(head, l - 1 - t);
                }
            }
        }
        let w_fwd = self.w_fwd.as_ref().unwrap();
        let w_rev = self.w_rev.as_ref().unwrap();
        let dx = matmul_nt(&dfwd, w_fwd)?.add(&matmul_nt(&drev, w_rev)?)?;
        Ok(MixerGrads {
            dv,
            dx: Some(dx),
            params: vec![matmul_tn(x, &dfwd)?, matmul_tn(x, &drev)?],
        })
    }
}
