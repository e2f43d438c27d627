use crate::batch::SequenceBatch;
use crate::error::{MixerError, Result};
use crate::rng::RngState;
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

use super::ScanCoeffs;

pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

pub fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Projections and decay of one scan direction.
///
/// `A_h = −exp(a_log[h])`; `Δ_t = softplus(x_t W_dt + dt_bias)`;
/// `b_t = x_t W_b`, `c_t = x_t W_c` are shared by all heads.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmHeadParams {
    pub a_log: Tensor,
    pub dt_weight: Tensor,
    pub dt_bias: Tensor,
    pub b_weight: Tensor,
    pub c_weight: Tensor,
}

impl SsmHeadParams {
    /// `|A|` log-uniform on `[e⁻⁴, 1]`; `dt_bias` puts the initial step size
    /// log-uniform on `[1e-3, 1e-1]`.
    pub fn new(in_channels: usize, n_heads: usize, n_state: usize, rng: &mut RngState) -> Self {
        let a_log = Tensor::from_vec(&[n_heads], (0..n_heads).map(|_| rng.uniform_range(-4.0, 0.0)).collect())
            .expect("finite");
        SsmHeadParams {
            a_log,
            dt_weight: rng.xavier_normal(&[in_channels, n_heads]),
            dt_bias: init_dt_bias(n_heads, rng),
            b_weight: rng.xavier_normal(&[in_channels, n_state]),
            c_weight: rng.xavier_normal(&[in_channels, n_state]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.dt_weight.rows()
    }

    pub fn n_heads(&self) -> usize {
        self.a_log.len()
    }

    pub fn n_state(&self) -> usize {
        self.b_weight.cols()
    }

    pub fn zeroed(&self) -> SsmHeadParams {
        SsmHeadParams {
            a_log: self.a_log.clone(),
            dt_weight: Tensor::zeros(self.dt_weight.shape()),
            dt_bias: self.dt_bias.clone(),
            b_weight: Tensor::zeros(self.b_weight.shape()),
            c_weight: Tensor::zeros(self.c_weight.shape()),
        }
    }

    /// `(dt_lin, b, c)` before discretization.
    pub fn features(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        if x.cols() != self.in_channels() {
            return Err(MixerError::shape(
                "discretize",
                format!("x has {} channels, expected {}", x.cols(), self.in_channels()),
            ));
        }
        Ok((matmul(x, &self.dt_weight)?, matmul(x, &self.b_weight)?, matmul(x, &self.c_weight)?))
    }
}

pub(crate) fn init_dt_bias(n_heads: usize, rng: &mut RngState) -> Tensor {
    let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
    let v = (0..n_heads).map(|_| inv_softplus(rng.uniform_range(lo, hi).exp())).collect();
    Tensor::from_vec(&[n_heads], v).expect("finite")
}

/// `ā = exp(Δ·A)`, `b̄ = Δ·b`, `c` broadcast over heads, with
/// `Δ = softplus(dt_lin + dt_bias)` and `A = −exp(a_log)`.
pub fn discretize_features(dt_lin: &Tensor, dt_bias: &Tensor, a_log: &Tensor, b: &Tensor, c: &Tensor) -> Result<ScanCoeffs> {
    let (l, h) = (dt_lin.rows(), dt_lin.cols());
    let n = b.cols();
    if dt_bias.len() != h || a_log.len() != h || b.rows() != l || c.shape() != b.shape() {
        return Err(MixerError::shape("discretize", "feature shapes disagree"));
    }
    let mut abar = Tensor::zeros(&[l, h]);
    let mut bbar = Tensor::zeros(&[l, h, n]);
    let mut cc = Tensor::zeros(&[l, h, n]);
    for t in 0..l {
        for k in 0..h {
            let delta = softplus(dt_lin.at2(t, k) + dt_bias.data()[k]);
            let a = -a_log.data()[k].exp();
            *abar.at2_mut(t, k) = (delta * a).exp();
            for s in 0..n {
                *bbar.at3_mut(t, k, s) = delta * b.at2(t, s);
                *cc.at3_mut(t, k, s) = c.at2(t, s);
            }
        }
    }
    for (name, t) in [("abar", &abar), ("bbar", &bbar), ("c", &cc)] {
        if !t.is_finite() {
            return Err(MixerError::NonFinite(format!("discretized {name}")));
        }
    }
    ScanCoeffs::new(abar, bbar, cc)
}

pub fn discretize(p: &SsmHeadParams, x: &Tensor) -> Result<ScanCoeffs> {
    let (dt, b, c) = p.features(x)?;
    discretize_features(&dt, &p.dt_bias, &p.a_log, &b, &c)
}

pub fn discretize_batch(p: &SsmHeadParams, x: &SequenceBatch) -> Result<Vec<ScanCoeffs>> {
    x.items().map(|item| discretize(p, &item)).collect()
}

/// Gradients of [`discretize_features`] with respect to each input.
#[derive(Clone, Debug)]
pub struct DiscretizeGrads {
    pub dt_lin: Tensor,
    pub dt_bias: Tensor,
    pub a_log: Tensor,
    pub b: Tensor,
    pub c: Tensor,
}

pub fn discretize_features_backward(
    dt_lin: &Tensor,
    dt_bias: &Tensor,
    a_log: &Tensor,
    b: &Tensor,
    grads: &ScanCoeffs,
) -> Result<DiscretizeGrads> {
    let (l, h) = (dt_lin.rows(), dt_lin.cols());
    let n = b.cols();
    if grads.abar.shape() != [l, h] || grads.bbar.shape() != [l, h, n] {
        return Err(MixerError::shape("discretize backward", "gradient shapes disagree"));
    }
    let mut d_dt = Tensor::zeros(&[l, h]);
    let mut d_bias = Tensor::zeros(&[h]);
    let mut d_alog = Tensor::zeros(&[h]);
    let mut d_b = Tensor::zeros(&[l, n]);
    let mut d_c = Tensor::zeros(&[l, n]);
    for t in 0..l {
        for k in 0..h {
            let z = dt_lin.at2(t, k) + dt_bias.data()[k];
            let delta = softplus(z);
            let a = -a_log.data()[k].exp();
            let abar = (delta * a).exp();
            let g_abar = grads.abar.at2(t, k) * abar;
            let mut g_delta = g_abar * a;
            d_alog.data_mut()[k] += g_abar * delta * a;
            for s in 0..n {
                let g = grads.bbar.at3(t, k, s);
                g_delta += g * b.at2(t, s);
                *d_b.at2_mut(t, s) += g * delta;
                *d_c.at2_mut(t, s) += grads.c.at3(t, k, s);
            }
            let gz = g_delta * sigmoid(z);
            *d_dt.at2_mut(t, k) = gz;
            d_bias.data_mut()[k] += gz;
        }
    }
    Ok(DiscretizeGrads {
        dt_lin: d_dt,
        dt_bias: d_bias,
        a_log: d_alog,
        b: d_b,
        c: d_c,
    })
}

/// Gradients of the three projections of [`SsmHeadParams::features`]:
/// `(dx, dW_dt, dW_b, dW_c)`.
pub(crate) fn features_backward(p: &SsmHeadParams, x: &Tensor, g: &DiscretizeGrads) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let dx = matmul_nt(&g.dt_lin, &p.dt_weight)?
        .add(&matmul_nt(&g.b, &p.b_weight)?)?
        .add(&matmul_nt(&g.c, &p.c_weight)?)?;
    Ok((dx, matmul_tn(x, &g.dt_lin)?, matmul_tn(x, &g.b)?, matmul_tn(x, &g.c)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(l: usize, dt: f64, bias: f64, a_log: f64) -> ScanCoeffs {
        let dt_lin = Tensor::full(&[l, 1], dt);
        let b = Tensor::full(&[l, 1], 1.0);
        discretize_features(&dt_lin, &Tensor::full(&[1], bias), &Tensor::full(&[1], a_log), &b, &b).unwrap()
    }

    #[test]
    fn very_negative_step_logit_is_pure_memory() {
        let co = single(3, -30.0, 0.0, 0.0);
        assert!((co.abar.at2(0, 0) - 1.0).abs() <= 1e-12);
        assert!(co.bbar.at3(0, 0, 0).abs() <= 1e-12);
    }

    #[test]
    fn closed_form_decay_and_step() {
        // Δ = softplus(0) = ln 2 and A = −1 give ā = 1/2.
        let co = single(1, 0.0, 0.0, 0.0);
        assert!((co.bbar.at3(0, 0, 0) - 2f64.ln()).abs() <= 1e-15);
        assert!((co.abar.at2(0, 0) - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn init_ranges() {
        let mut rng = RngState::new(5);
        let p = SsmHeadParams::new(3, 64, 4, &mut rng);
        for (&al, &bias) in p.a_log.data().iter().zip(p.dt_bias.data()) {
            assert!((-4.0..=0.0).contains(&al));
            let d = softplus(bias);
            assert!((1e-3 - 1e-15..=1e-1 + 1e-15).contains(&d));
        }
        let x = rng.normal_tensor(&[5, 3], 1.0);
        let co = discretize(&p, &x).unwrap();
        assert!(co.abar.data().iter().all(|&a| a > 0.0 && a < 1.0));
    }

    #[test]
    fn softplus_round_trip() {
        for y in [1e-6, 1e-3, 0.5, 3.0, 40.0] {
            assert!((softplus(inv_softplus(y)) - y).abs() <= 1e-12 * y.max(1.0));
        }
    }
}
