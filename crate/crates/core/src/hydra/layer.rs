use serde::{Deserialize, Serialize};

use crate::error::{MixerError, Result};
use crate::grad::{causal_conv, causal_conv_backward, depthwise_conv_backward, rms_norm, rms_norm_backward, silu, silu_backward};
use crate::mixer::depthwise_conv_centered;
use crate::rng::RngState;
use crate::ssm::{
    backward_ss_scan, discretize_features, discretize_features_backward, qc_features_backward, qs_apply_coeffs,
    qs_backward_coeffs, ss_scan_saved, QuasiCoeffs, QuasiFeatures, ScanCoeffs, ScanSaved,
};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

pub const NORM_EPS: f64 = 1e-5;

/// Sequence mixing inside a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mixing {
    /// Two shifted scans plus a diagonal, centered short conv.
    Quasi,
    /// One unshifted scan plus a per-head skip, causal short conv.
    Causal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub c_model: usize,
    pub d_inner: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub n_state: usize,
    pub conv_width: usize,
}

impl LayerDims {
    pub fn validate(&self) -> Result<()> {
        if [self.c_model, self.n_heads, self.head_dim, self.n_state, self.conv_width].contains(&0) {
            return Err(MixerError::Config(format!("zero dimension in {self:?}")));
        }
        if self.n_heads * self.head_dim != self.d_inner {
            return Err(MixerError::Config(format!(
                "H × P = {} × {} != D = {}",
                self.n_heads, self.head_dim, self.d_inner
            )));
        }
        if self.conv_width % 2 == 0 {
            return Err(MixerError::Config(format!("conv width {} must be odd", self.conv_width)));
        }
        Ok(())
    }

    /// Width of the construction block of the input projection.
    pub fn cons_width(&self, mixing: Mixing) -> usize {
        match mixing {
            Mixing::Quasi => 3 * self.n_heads + 4 * self.n_state,
            Mixing::Causal => self.n_heads + 2 * self.n_state,
        }
    }
}

/// One block:
/// `u = rmsnorm(x) ⊙ g`; `[z | v₀ | cons] = u W_in`;
/// `v = silu(conv(v₀) + b_conv)`; `y = mix(v; cons)`;
/// `out = x + (y ⊙ silu(z)) W_out`.
///
/// Quasi construction channels are `[dt_f | dt_b | b_f | c_f | b_b | c_b | δ]`
/// with widths `H, H, N, N, N, N, H`; causal ones are `[dt | b | c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HydraLayerParams {
    pub mixing: Mixing,
    pub dims: LayerDims,
    pub share_decay: bool,
    pub norm: Tensor,
    pub in_proj: Tensor,
    pub conv: Tensor,
    pub conv_bias: Tensor,
    pub a_log_f: Tensor,
    /// Backward decay; empty when `share_decay` or causal.
    pub a_log_b: Tensor,
    pub dt_bias_f: Tensor,
    /// Empty when causal.
    pub dt_bias_b: Tensor,
    /// Per-head skip; empty unless causal.
    pub d_skip: Tensor,
    pub out_proj: Tensor,
}

impl HydraLayerParams {
    pub fn new(mixing: Mixing, dims: LayerDims, share_decay: bool, rng: &mut RngState) -> Result<Self> {
        dims.validate()?;
        let (c, d, h) = (dims.c_model, dims.d_inner, dims.n_heads);
        let width = 2 * d + dims.cons_width(mixing);
        let a_log_f = rng.uniform_tensor(&[h], -4.0, 0.0);
        let quasi = mixing == Mixing::Quasi;
        let a_log_b = if quasi && !share_decay { rng.uniform_tensor(&[h], -4.0, 0.0) } else { Tensor::zeros(&[0]) };
        let dt_bias_b = if quasi { crate::ssm::init_dt_bias(h, rng) } else { Tensor::zeros(&[0]) };
        let d_skip = if quasi { Tensor::zeros(&[0]) } else { Tensor::full(&[h], 1.0) };
        let conv_bound = 1.0 / (dims.conv_width as f64).sqrt();
        Ok(HydraLayerParams {
            mixing,
            dims,
            share_decay,
            norm: Tensor::full(&[c], 1.0),
            in_proj: rng.normal_tensor(&[c, width], 1.0 / (c as f64).sqrt()),
            conv: rng.uniform_tensor(&[d, dims.conv_width], -conv_bound, conv_bound),
            conv_bias: rng.uniform_tensor(&[d], -conv_bound, conv_bound),
            a_log_f,
            a_log_b,
            dt_bias_f: crate::ssm::init_dt_bias(h, rng),
            dt_bias_b,
            d_skip,
            out_proj: rng.normal_tensor(&[d, c], 1.0 / (d as f64).sqrt()),
        })
    }

    fn decay_b(&self) -> &Tensor {
        if self.share_decay {
            &self.a_log_f
        } else {
            &self.a_log_b
        }
    }

    /// Trainable tensors in a fixed order; inactive slots are omitted.
    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = vec![
            ("norm", &self.norm),
            ("in_proj", &self.in_proj),
            ("conv", &self.conv),
            ("conv_bias", &self.conv_bias),
            ("a_log_f", &self.a_log_f),
            ("dt_bias_f", &self.dt_bias_f),
        ];
        match self.mixing {
            Mixing::Quasi => {
                if !self.share_decay {
                    v.push(("a_log_b", &self.a_log_b));
                }
                v.push(("dt_bias_b", &self.dt_bias_b));
            }
            Mixing::Causal => v.push(("d_skip", &self.d_skip)),
        }
        v.push(("out_proj", &self.out_proj));
        v
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut v = vec![
            ("norm", &mut self.norm),
            ("in_proj", &mut self.in_proj),
            ("conv", &mut self.conv),
            ("conv_bias", &mut self.conv_bias),
            ("a_log_f", &mut self.a_log_f),
            ("dt_bias_f", &mut self.dt_bias_f),
        ];
        match self.mixing {
            Mixing::Quasi => {
                if !self.share_decay {
                    v.push(("a_log_b", &mut self.a_log_b));
                }
                v.push(("dt_bias_b", &mut self.dt_bias_b));
            }
            Mixing::Causal => v.push(("d_skip", &mut self.d_skip)),
        }
        v.push(("out_proj", &mut self.out_proj));
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    fn quasi_features(&self, cons: &Tensor) -> QuasiFeatures {
        let (h, n) = (self.dims.n_heads, self.dims.n_state);
        let mut at = 0;
        let mut take = |w: usize| {
            let t = cons.columns(at, at + w);
            at += w;
            t
        };
        QuasiFeatures {
            dt_f: take(h),
            dt_b: take(h),
            b_f: take(n),
            c_f: take(n),
            b_b: take(n),
            c_b: take(n),
            delta: take(h),
        }
    }
}

enum MixCache {
    Quasi { features: QuasiFeatures, coeffs: QuasiCoeffs },
    Causal { dt: Tensor, b: Tensor, saved: ScanSaved },
}

/// Forward intermediates kept for [`hydra_layer_backward`].
pub struct LayerCache {
    x: Tensor,
    u: Tensor,
    z: Tensor,
    v0: Tensor,
    pre: Tensor,
    v: Tensor,
    y: Tensor,
    gated: Tensor,
    mix: MixCache,
}

fn finite(t: &Tensor, layer: usize, stage: &'static str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(MixerError::LayerDiverged { layer, stage })
    }
}

fn add_head_skip(y: &mut Tensor, skip: &Tensor, v: &Tensor, p: usize) {
    for t in 0..v.rows() {
        let vr = v.row(t).to_vec();
        for (c, o) in y.row_mut(t).iter_mut().enumerate() {
            *o += skip.data()[c / p] * vr[c];
        }
    }
}

pub fn hydra_layer_forward_cached(p: &HydraLayerParams, x: &Tensor, layer: usize) -> Result<(Tensor, LayerCache)> {
    let dims = p.dims;
    if x.ndim() != 2 || x.cols() != dims.c_model {
        return Err(MixerError::shape("hydra layer", format!("input {:?}, expected [L, {}]", x.shape(), dims.c_model)));
    }
    finite(x, layer, "input")?;
    let d = dims.d_inner;
    let (u, _) = rms_norm(x, &p.norm, NORM_EPS)?;
    let proj = matmul(&u, &p.in_proj)?;
    finite(&proj, layer, "in_proj")?;
    let z = proj.columns(0, d);
    let v0 = proj.columns(d, 2 * d);
    let cons = proj.columns(2 * d, proj.cols());
    let pre = match p.mixing {
        Mixing::Quasi => depthwise_conv_centered(&v0, &p.conv, Some(p.conv_bias.data())),
        Mixing::Causal => causal_conv(&v0, &p.conv, Some(p.conv_bias.data())),
    };
    let v = silu(&pre);
    let (y, mix) = match p.mixing {
        Mixing::Quasi => {
            let features = p.quasi_features(&cons);
            let coeffs = QuasiCoeffs::from_features(&features, (&p.a_log_f, &p.dt_bias_f), (p.decay_b(), &p.dt_bias_b))
                .map_err(|_| MixerError::LayerDiverged { layer, stage: "discretize" })?;
            (qs_apply_coeffs(&coeffs, &v)?, MixCache::Quasi { features, coeffs })
        }
        Mixing::Causal => {
            let n = dims.n_state;
            let dt = cons.columns(0, dims.n_heads);
            let b = cons.columns(dims.n_heads, dims.n_heads + n);
            let c = cons.columns(dims.n_heads + n, dims.n_heads + 2 * n);
            let co: ScanCoeffs = discretize_features(&dt, &p.dt_bias_f, &p.a_log_f, &b, &c)
                .map_err(|_| MixerError::LayerDiverged { layer, stage: "discretize" })?;
            let saved = ss_scan_saved(&v, &co)?;
            let mut y = saved.y.clone();
            add_head_skip(&mut y, &p.d_skip, &v, dims.head_dim);
            (y, MixCache::Causal { dt, b, saved })
        }
    };
    finite(&y, layer, "mixer")?;
    let gated = y.mul(&silu(&z))?;
    let out = x.add(&matmul(&gated, &p.out_proj)?)?;
    finite(&out, layer, "out_proj")?;
    Ok((
        out,
        LayerCache {
            x: x.clone(),
            u,
            z,
            v0,
            pre,
            v,
            y,
            gated,
            mix,
        },
    ))
}

pub fn hydra_layer_forward(p: &HydraLayerParams, x: &Tensor) -> Result<Tensor> {
    Ok(hydra_layer_forward_cached(p, x, 0)?.0)
}

/// `(dx, grads in [`HydraLayerParams::named`] order)`.
pub fn hydra_layer_backward(p: &HydraLayerParams, cache: &LayerCache, dout: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
    let dims = p.dims;
    let d = dims.d_inner;
    let d_out_proj = matmul_tn(&cache.gated, dout)?;
    let dgated = matmul_nt(dout, &p.out_proj)?;
    let dy = dgated.mul(&silu(&cache.z))?;
    let dz = silu_backward(&cache.z, &dgated.mul(&cache.y)?)?;

    let mut dcons = Tensor::zeros(&[cache.x.rows(), dims.cons_width(p.mixing)]);
    let mut decay_grads = Vec::new();
    let dv = match &cache.mix {
        MixCache::Quasi { features, coeffs } => {
            let cg = qs_backward_coeffs(coeffs, &cache.v, &dy)?;
            let fg = qc_features_backward(features, (&p.a_log_f, &p.dt_bias_f), (p.decay_b(), &p.dt_bias_b), &cg)?;
            let g = &fg.features;
            let mut at = 0;
            for t in [&g.dt_f, &g.dt_b, &g.b_f, &g.c_f, &g.b_b, &g.c_b, &g.delta] {
                dcons.add_columns(at, t);
                at += t.cols();
            }
            if p.share_decay {
                decay_grads.push(fg.a_log_f.add(&fg.a_log_b)?);
                decay_grads.push(fg.dt_bias_f.clone());
            } else {
                decay_grads.push(fg.a_log_f.clone());
                decay_grads.push(fg.dt_bias_f.clone());
                decay_grads.push(fg.a_log_b.clone());
            }
            decay_grads.push(fg.dt_bias_b.clone());
            cg.dxv
        }
        MixCache::Causal { dt, b, saved } => {
            let gs = backward_ss_scan(saved, &dy)?;
            let dg = discretize_features_backward(dt, &p.dt_bias_f, &p.a_log_f, b, &gs.d)?;
            let h = dims.n_heads;
            dcons.add_columns(0, &dg.dt_lin);
            dcons.add_columns(h, &dg.b);
            dcons.add_columns(h + dims.n_state, &dg.c);
            let mut dskip = Tensor::zeros(&[h]);
            let pdim = dims.head_dim;
            for t in 0..dy.rows() {
                for (c, (&g, &v)) in dy.row(t).iter().zip(cache.v.row(t)).enumerate() {
                    dskip.data_mut()[c / pdim] += g * v;
                }
            }
            let mut dv = gs.dxv;
            add_head_skip(&mut dv, &p.d_skip, &dy, pdim);
            decay_grads.push(dg.a_log);
            decay_grads.push(dg.dt_bias);
            decay_grads.push(dskip);
            dv
        }
    };

    let dpre = silu_backward(&cache.pre, &dv)?;
    let (dv0, dconv, dconv_bias) = match p.mixing {
        Mixing::Quasi => depthwise_conv_backward(&cache.v0, &p.conv, &dpre),
        Mixing::Causal => causal_conv_backward(&cache.v0, &p.conv, &dpre),
    };
    let mut dproj = Tensor::zeros(&[cache.x.rows(), p.in_proj.cols()]);
    dproj.add_columns(0, &dz);
    dproj.add_columns(d, &dv0);
    dproj.add_columns(2 * d, &dcons);
    let d_in_proj = matmul_tn(&cache.u, &dproj)?;
    let du = matmul_nt(&dproj, &p.in_proj)?;
    let (dxn, dnorm) = rms_norm_backward(&cache.x, &p.norm, NORM_EPS, &du)?;
    let dx = dout.add(&dxn)?;

    let mut grads = vec![dnorm, d_in_proj, dconv, dconv_bias];
    grads.extend(decay_grads);
    grads.push(d_out_proj);
    Ok((dx, grads))
}
