use std::f64::consts::PI;

use crate::error::Result;
use crate::mixer::{backward_through_matrix, check_values, require_x, Family, MaterializedMixer, MatrixMixer, MixerConfig, MixerGrads, Mode};
use crate::rng::RngState;
use crate::tensor::{matmul_nt, matmul_tn, Tensor};

use super::{check_fixed_len, project};

/// Angle scale of the data-dependent variant.
pub const VANDERMONDE_EPS: f64 = 1e-3;

/// Cosine (real-part) Vandermonde mixers.
///
/// * DFT: `s · cos(2π i j / L)`, `s = 1/sqrt(L)`.
/// * DI: `s · Σ_d [cos(2π q_{d,i} j) + cos(2π k_{d,j} i)]`, `s = 1/sqrt(2Ld)`.
/// * DD: `s · Σ_d [cos(2π ε q_{d,i} j) − cos(2π ε k_{d,j} i)]` with `q, k`
///   projected from the tokens.
///
/// Angles enter as products `q · j` inside the cosine rather than powers
/// `q^j`; the two agree when `q` is read as an angle on the unit circle.
#[derive(Clone, Debug)]
pub struct VandermondeMixer {
    cfg: MixerConfig,
    mode: Mode,
    /// DI: `H × d × L` each.
    pub q_bias: Option<Tensor>,
    pub k_bias: Option<Tensor>,
    /// DD: `C × (H·d)` each.
    pub w_q: Option<Tensor>,
    pub w_k: Option<Tensor>,
    pub eps: f64,
}

impl VandermondeMixer {
    /// DI biases start at zero, as in the reference construction.
    pub fn new(cfg: MixerConfig, mode: Mode, rng: &mut RngState) -> Self {
        let (h, d, l, c) = (cfg.n_heads, cfg.qk_dim, cfg.seq_len, cfg.in_channels);
        let mut m = VandermondeMixer {
            cfg,
            mode,
            q_bias: None,
            k_bias: None,
            w_q: None,
            w_k: None,
            eps: VANDERMONDE_EPS,
        };
        match mode {
            Mode::Dft => {}
            Mode::Di => {
                m.q_bias = Some(Tensor::zeros(&[h, d, l]));
                m.k_bias = Some(Tensor::zeros(&[h, d, l]));
            }
            Mode::Dd => {
                m.w_q = Some(rng.xavier_normal(&[c, h * d]));
                m.w_k = Some(rng.xavier_normal(&[c, h * d]));
            }
        }
        m
    }

    /// Replaces zero-initialized DI biases with Gaussian draws.
    pub fn randomize(&mut self, std: f64, rng: &mut RngState) {
        for t in [&mut self.q_bias, &mut self.k_bias].into_iter().flatten() {
            *t = rng.normal_tensor(t.shape(), std);
        }
    }

    pub fn scale(&self) -> f64 {
        let l = self.cfg.seq_len as f64;
        match self.mode {
            Mode::Dft => 1.0 / l.sqrt(),
            _ => 1.0 / (2.0 * l * self.cfg.qk_dim as f64).sqrt(),
        }
    }

    fn features(&self, x: Option<&Tensor>) -> Result<Option<(Tensor, Tensor)>> {
        if self.mode != Mode::Dd {
            return Ok(None);
        }
        let x = require_x(self, x)?;
        Ok(Some((
            project(x, self.w_q.as_ref().unwrap())?,
            project(x, self.w_k.as_ref().unwrap())?,
        )))
    }

    fn len_for(&self, x: Option<&Tensor>) -> Result<usize> {
        if self.mode == Mode::Dd {
            Ok(require_x(self, x)?.rows())
        } else {
            Ok(self.cfg.seq_len)
        }
    }

    /// Entry `(i, j)` of head `h`; `feats` carries the DD projections.
    fn entry(&self, h: usize, i: usize, j: usize, feats: Option<&(Tensor, Tensor)>) -> f64 {
        let d = self.cfg.qk_dim;
        let (fi, fj) = (i as f64, j as f64);
        let sum = match self.mode {
            Mode::Dft => (2.0 * PI * fi * fj / self.cfg.seq_len as f64).cos(),
            Mode::Di => {
                let (q, k) = (self.q_bias.as_ref().unwrap(), self.k_bias.as_ref().unwrap());
                (0..d)
                    .map(|e| (2.0 * PI * q.at3(h, e, i) * fj).cos() + (2.0 * PI * k.at3(h, e, j) * fi).cos())
                    .sum()
            }
            Mode::Dd => {
                let (q, k) = feats.expect("dd features");
                let w = 2.0 * PI * self.eps;
                (0..d)
                    .map(|e| (w * q.at2(i, h * d + e) * fj).cos() - (w * k.at2(j, h * d + e) * fi).cos())
                    .sum()
            }
        };
        self.scale() * sum
    }
}

impl MatrixMixer for VandermondeMixer {
    fn family(&self) -> Family {
        Family::Vandermonde
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn config(&self) -> &MixerConfig {
        &self.cfg
    }

    fn materialize(&self, x: Option<&Tensor>) -> Result<MaterializedMixer> {
        let l = self.len_for(x)?;
        let feats = self.features(x)?;
        let heads = (0..self.cfg.n_heads)
            .map(|h| {
                let mut m = Tensor::zeros(&[l, l]);
                for i in 0..l {
                    for j in 0..l {
                        *m.at2_mut(i, j) = self.entry(h, i, j, feats.as_ref());
                    }
                }
                m
            })
            .collect();
        MaterializedMixer::new(heads)
    }

    /// Naive `O(L² (d + P))` apply, entries generated on the fly.
    fn apply_seq(&self, v: &Tensor, x: Option<&Tensor>) -> Result<Tensor> {
        let l = self.len_for(x)?;
        if self.mode != Mode::Dd {
            check_fixed_len("vandermonde", v.rows(), l)?;
        }
        check_values(self, v, l)?;
        let feats = self.features(x)?;
        let p = self.cfg.head_dim;
        let mut out = v.clone();
        for h in 0..self.cfg.n_heads {
            for i in 0..l {
                let mut acc = vec![0.0; p];
                for j in 0..l {
                    let w = self.entry(h, i, j, feats.as_ref());
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
        match self.mode {
            Mode::Dft => vec![],
            Mode::Di => vec![("q_bias", self.q_bias.as_ref().unwrap()), ("k_bias", self.k_bias.as_ref().unwrap())],
            Mode::Dd => vec![("w_q", self.w_q.as_ref().unwrap()), ("w_k", self.w_k.as_ref().unwrap())],
        }
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self.mode {
            Mode::Dft => vec![],
            Mode::Di => vec![("q_bias", self.q_bias.as_mut().unwrap()), ("k_bias", self.k_bias.as_mut().unwrap())],
            Mode::Dd => vec![("w_q", self.w_q.as_mut().unwrap()), ("w_k", self.w_k.as_mut().unwrap())],
        }
    }

    fn backward_seq(&self, v: &Tensor, x: Option<&Tensor>, dy: &Tensor) -> Result<MixerGrads> {
        let mat = self.materialize(x)?;
        let (dv, dms) = backward_through_matrix(&mat, v, dy, 1.0)?;
        let l = mat.len();
        let d = self.cfg.qk_dim;
        let s = self.scale();
        match self.mode {
            Mode::Dft => Ok(MixerGrads { dv, dx: None, params: vec![] }),
            Mode::Di => {
                let (q, k) = (self.q_bias.as_ref().unwrap(), self.k_bias.as_ref().unwrap());
                let mut dq = Tensor::zeros(q.shape());
                let mut dk = Tensor::zeros(k.shape());
                for (h, g) in dms.iter().enumerate() {
                    for e in 0..d {
                        for i in 0..l {
                            for j in 0..l {
                                let (fi, fj) = (i as f64, j as f64);
                                let gij = s * g.at2(i, j);
                                *dq.at3_mut(h, e, i) -= gij * (2.0 * PI * q.at3(h, e, i) * fj).sin() * 2.0 * PI * fj;
                                *dk.at3_mut(h, e, j) -= gij * (2.0 * PI * k.at3(h, e, j) * fi).sin() * 2.0 * PI * fi;
                            }
                        }
                    }
                }
                Ok(MixerGrads { dv, dx: None, params: vec![dq, dk] })
            }
            Mode::Dd => {
                let x = require_x(self, x)?;
                let (q, k) = self.features(Some(x))?.unwrap();
                let w = 2.0 * PI * self.eps;
                let mut dq = Tensor::zeros(q.shape());
                let mut dk = Tensor::zeros(k.shape());
                for (h, g) in dms.iter().enumerate() {
                    for e in 0..d {
                        let c = h * d + e;
                        for i in 0..l {
                            for j in 0..l {
                                let (fi, fj) = (i as f64, j as f64);
                                let gij = s * g.at2(i, j);
                                *dq.at2_mut(i, c) -= gij * (w * q.at2(i, c) * fj).sin() * w * fj;
                                *dk.at2_mut(j, c) += gij * (w * k.at2(j, c) * fi).sin() * w * fi;
                            }
                        }
                    }
                }
                let (wq, wk) = (self.w_q.as_ref().unwrap(), self.w_k.as_ref().unwrap());
                let dx = matmul_nt(&dq, wq)?.add(&matmul_nt(&dk, wk)?)?;
                Ok(MixerGrads {
                    dv,
                    dx: Some(dx),
                    params: vec![matmul_tn(x, &dq)?, matmul_tn(x, &dk)?],
                })
            }
        }
    }
}
