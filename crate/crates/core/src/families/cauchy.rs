use crate::error::{MixerError, Result};
use crate::mixer::{backward_through_matrix, check_values, require_x, Family, MaterializedMixer, MatrixMixer, MixerConfig, MixerGrads, Mode};
use crate::rng::RngState;
use crate::tensor::{matmul_nt, matmul_tn, Tensor};

use super::{as_rows, check_fixed_len, project};

pub const CAUCHY_TOL: f64 = 1e-8;

/// Denominator of each Cauchy term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CauchyForm {
    /// `exp(q) + exp(k) + 2·bias + tol`, always positive for `bias ≥ 0`.
    Exponential,
    /// `q − k + c`; may vanish, kept only as an alternate construction.
    Difference { c: f64 },
}

/// `m_ij = s · Σ_d 1 / den(q_{d,i}, k_{d,j})`, `s = 1/sqrt(L·d)`.
#[derive(Clone, Debug)]
pub struct CauchyMixer {
    cfg: MixerConfig,
    pub form: CauchyForm,
    /// DI: `L × H × d` each.
    pub q: Option<Tensor>,
    pub k: Option<Tensor>,
    /// DD: `C × (H·d)` each.
    pub w_q: Option<Tensor>,
    pub w_k: Option<Tensor>,
    /// DD: trainable scalar, starts at 0.5. DI uses a fixed 0.
    pub bias: Tensor,
}

impl CauchyMixer {
    pub fn new(cfg: MixerConfig, rng: &mut RngState) -> Self {
        let (l, h, d, c) = (cfg.seq_len, cfg.n_heads, cfg.qk_dim, cfg.in_channels);
        if cfg.data_dependent {
            CauchyMixer {
                form: CauchyForm::Exponential,
                q: None,
                k: None,
                w_q: Some(rng.xavier_normal(&[c, h * d])),
                w_k: Some(rng.xavier_normal(&[c, h * d])),
                bias: Tensor::full(&[1], 0.5),
                cfg,
            }
        } else {
            CauchyMixer {
                form: CauchyForm::Exponential,
                q: Some(rng.xavier_normal(&[l, h, d])),
                k: Some(rng.xavier_normal(&[l, h, d])),
                w_q: None,
                w_k: None,
                bias: Tensor::zeros(&[1]),
                cfg,
            }
        }
    }

    pub fn scale(&self) -> f64 {
        1.0 / ((self.cfg.seq_len * self.cfg.qk_dim) as f64).sqrt()
    }

    fn features(&self, x: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        if self.cfg.data_dependent {
            let x = require_x(self, x)?;
            Ok((project(x, self.w_q.as_ref().unwrap())?, project(x, self.w_k.as_ref().unwrap())?))
        } else {
            Ok((as_rows(self.q.as_ref().unwrap()), as_rows(self.k.as_ref().unwrap())))
        }
    }

    fn denominator(&self, q: f64, k: f64) -> f64 {
        match self.form {
            CauchyForm::Exponential => q.exp() + k.exp() + 2.0 * self.bias.data()[0] + CAUCHY_TOL,
            CauchyForm::Difference { c } => q - k + c,
        }
    }

    /// Smallest denominator over all `(i, j, d)` and heads.
    pub fn min_denominator(&self, x: Option<&Tensor>) -> Result<f64> {
        let (q, k) = self.features(x)?;
        let mut lo = f64::INFINITY;
        for c in 0..q.cols() {
            for i in 0..q.rows() {
                for j in 0..k.rows() {
                    lo = lo.min(self.denominator(q.at2(i, c), k.at2(j, c)));
                }
            }
        }
        Ok(lo)
    }

    fn build(&self, q: &Tensor, k: &Tensor) -> Result<MaterializedMixer> {
        let l = q.rows();
        let d = self.cfg.qk_dim;
        let s = self.scale();
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        for h in 0..self.cfg.n_heads {
            let mut m = Tensor::zeros(&[l, l]);
            for i in 0..l {
                for j in 0..l {
                    let mut acc = 0.0;
                    for e in 0..d {
                        let den = self.denominator(q.at2(i, h * d + e), k.at2(j, h * d + e));
                        if den == 0.0 {
                            return Err(MixerError::NonFinite("cauchy denominator".into()));
                        }
                        acc += 1.0 / den;
                    }
                    *m.at2_mut(i, j) = s * acc;
                }
            }
            heads.push(m);
        }
        MaterializedMixer::new(heads)
    }
}

impl MatrixMixer for CauchyMixer {
    fn family(&self) -> Family {
        Family::Cauchy
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
        let (q, k) = self.features(x)?;
        self.build(&q, &k)
    }

    /// Naive apply; each entry is summed over `d` and used immediately.
    fn apply_seq(&self, v: &Tensor, x: Option<&Tensor>) -> Result<Tensor> {
        let (q, k) = self.features(x)?;
        let l = q.rows();
        if !self.cfg.data_dependent {
            check_fixed_len("cauchy-di", v.rows(), l)?;
        }
        check_values(self, v, l)?;
        let (p, d, s) = (self.cfg.head_dim, self.cfg.qk_dim, self.scale());
        let mut out = v.clone();
        for h in 0..self.cfg.n_heads {
            for i in 0..l {
                let mut acc = vec![0.0; p];
                for j in 0..l {
                    let w: f64 = (0..d)
                        .map(|e| 1.0 / self.denominator(q.at2(i, h * d + e), k.at2(j, h * d + e)))
                        .sum::<f64>()
                        * s;
                    for (a, &vv) in acc.iter_mut().zip(&v.row(j)[h * p..(h + 1) * p]) {
                        *a += w * vv;
                    }
                }
                for (o, a) in out.row_mut(i)[h * p..(h + 1) * p].iter_mut().zip(acc) {
                    *o += a;
                }
            }
        }
        out.ensure_finite("cauchy apply")?;
        Ok(out)
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        if self.cfg.data_dependent {
            vec![("w_q", self.w_q.as_ref().unwrap()), ("w_k", self.w_k.as_ref().unwrap()), ("bias", &self.bias)]
        } else {
            vec![("q", self.q.as_ref().unwrap()), ("k", self.k.as_ref().unwrap())]
        }
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        if self.cfg.data_dependent {
            vec![("w_q", self.w_q.as_mut().unwrap()), ("w_k", self.w_k.as_mut().unwrap()), ("bias", &mut self.bias)]
        } else {
            vec![("q", self.q.as_mut().unwrap()), ("k", self.k.as_mut().unwrap())]
        }
    }

    fn backward_seq(&self, v: &Tensor, x: Option<&Tensor>, dy: &Tensor) -> Result<MixerGrads> {
        let (q, k) = self.features(x)?;
        let mat = self.build(&q, &k)?;
        let (dv, dms) = backward_through_matrix(&mat, v, dy, 1.0)?;
        let (l, d, s) = (q.rows(), self.cfg.qk_dim, self.scale());
        let mut dq = Tensor::zeros(q.shape());
        let mut dk = Tensor::zeros(k.shape());
        let mut dbias = 0.0;
        for (h, g) in dms.iter().enumerate() {
            for e in 0..d {
                let c = h * d + e;
                for i in 0..l {
                    for j in 0..l {
                        let (qi, kj) = (q.at2(i, c), k.at2(j, c));
                        let den = self.denominator(qi, kj);
                        let gd = -s * g.at2(i, j) / (den * den);
                        match self.form {
                            CauchyForm::Exponential => {
                                *dq.at2_mut(i, c) += gd * qi.exp();
                                *dk.at2_mut(j, c) += gd * kj.exp();
                                dbias += 2.0 * gd;
                            }
                            CauchyForm::Difference { .. } => {
                                *dq.at2_mut(i, c) += gd;
                                *dk.at2_mut(j, c) -= gd;
                            }
                        }
                    }
                }
            }
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
            params: vec![matmul_tn(x, &dq)?, matmul_tn(x, &dk)?, Tensor::full(&[1], dbias)],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn denominators_stay_above_tol() {
        let mut rng = RngState::new(71);
        let mut cfg = MixerConfig::new(16, 6, 2, 2, 4);
        cfg.data_dependent = true;
        let m = CauchyMixer::new(cfg, &mut rng);
        for _ in 0..10 {
            let mut x = rng.normal_tensor(&[16, 6], 4.0);
            for v in x.data_mut() {
                *v = v.clamp(-10.0, 10.0);
            }
            assert!(m.min_denominator(Some(&x)).unwrap() > CAUCHY_TOL);
        }
    }

    #[test]
    fn single_entry_closed_form() {
        let mut rng = RngState::new(72);
        let mut m = CauchyMixer::new(MixerConfig::new(2, 1, 1, 1, 1), &mut rng);
        m.q = Some(Tensor::from_vec(&[2, 1, 1], vec![0.0, 1.0]).unwrap());
        m.k = Some(Tensor::from_vec(&[2, 1, 1], vec![0.0, 2.0f64.ln()]).unwrap());
        let mat = m.materialize(None).unwrap();
        let s = 1.0 / 2f64.sqrt();
        // exp(1) + 2 + tol in the denominator of entry (1, 1).
        let want = s / (1f64.exp() + 2.0 + CAUCHY_TOL);
        assert!((mat.per_head[0].at2(1, 1) - want).abs() < 1e-15);
    }

    #[test]
    fn difference_form_materializes() {
        let mut rng = RngState::new(73);
        let mut m = CauchyMixer::new(MixerConfig::new(3, 1, 1, 1, 1), &mut rng);
        m.form = CauchyForm::Difference { c: 10.0 };
        m.q = Some(Tensor::from_vec(&[3, 1, 1], vec![0.0, 1.0, 2.0]).unwrap());
        m.k = Some(Tensor::from_vec(&[3, 1, 1], vec![0.0, 0.5, 1.0]).unwrap());
        let mat = m.materialize(None).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert!((mat.per_head[0].at2(2, 1) - s / 11.5).abs() < 1e-15);
    }
}
