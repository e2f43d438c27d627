use serde::{Deserialize, Serialize};

use crate::error::{MixerError, Result};
use crate::grad::{rms_norm, rms_norm_backward};
use crate::rng::RngState;
use crate::tensor::{matmul_nt, matmul_tn, Tensor};

use super::layer::{hydra_layer_backward, hydra_layer_forward_cached, HydraLayerParams, LayerCache, LayerDims, Mixing, NORM_EPS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub c_model: usize,
    pub expand: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub n_state: usize,
    pub conv_width: usize,
    pub vocab: usize,
    pub mixing: Mixing,
    pub share_decay: bool,
}

impl Default for EncoderConfig {
    /// Desk scale: 4 layers of width 64, `D = 128 = 4 × 32`, `N = 16`.
    fn default() -> Self {
        EncoderConfig {
            n_layers: 4,
            c_model: 64,
            expand: 2,
            n_heads: 4,
            head_dim: 32,
            n_state: 16,
            conv_width: 7,
            vocab: 17,
            mixing: Mixing::Quasi,
            share_decay: true,
        }
    }
}

impl EncoderConfig {
    pub fn layer_dims(&self) -> LayerDims {
        LayerDims {
            c_model: self.c_model,
            d_inner: self.expand * self.c_model,
            n_heads: self.n_heads,
            head_dim: self.head_dim,
            n_state: self.n_state,
            conv_width: self.conv_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.expand == 0 {
            return Err(MixerError::Config("vocab and expand must be positive".into()));
        }
        self.layer_dims().validate()
    }
}

/// Token embedding, a stack of layers, a final norm and the tied unembedding
/// `logits = norm(h) Eᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub embed: Tensor,
    pub layers: Vec<HydraLayerParams>,
    pub final_norm: Tensor,
}

/// Forward intermediates kept for [`encoder_backward`].
pub struct EncoderCache {
    tokens: Vec<usize>,
    layers: Vec<LayerCache>,
    h_last: Tensor,
    normed: Tensor,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig, rng: &mut RngState) -> Result<Self> {
        cfg.validate()?;
        let embed = rng.normal_tensor(&[cfg.vocab, cfg.c_model], 1.0 / (cfg.c_model as f64).sqrt());
        let layers = (0..cfg.n_layers)
            .map(|_| HydraLayerParams::new(cfg.mixing, cfg.layer_dims(), cfg.share_decay, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoder {
            final_norm: Tensor::full(&[cfg.c_model], 1.0),
            embed,
            layers,
            cfg,
        })
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![("embed".to_string(), &self.embed)];
        for (i, l) in self.layers.iter().enumerate() {
            v.extend(l.named().into_iter().map(|(n, t)| (format!("layers.{i}.{n}"), t)));
        }
        v.push(("final_norm".to_string(), &self.final_norm));
        v
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = vec![("embed".to_string(), &mut self.embed)];
        for (i, l) in self.layers.iter_mut().enumerate() {
            v.extend(l.named_mut().into_iter().map(|(n, t)| (format!("layers.{i}.{n}"), t)));
        }
        v.push(("final_norm".to_string(), &mut self.final_norm));
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    fn embed_tokens(&self, tokens: &[usize]) -> Result<Tensor> {
        let c = self.cfg.c_model;
        let mut x = Tensor::zeros(&[tokens.len(), c]);
        for (t, &tok) in tokens.iter().enumerate() {
            if tok >= self.cfg.vocab {
                return Err(MixerError::Config(format!("token {tok} at position {t} ≥ vocab {}", self.cfg.vocab)));
            }
            x.row_mut(t).copy_from_slice(self.embed.row(tok));
        }
        Ok(x)
    }
}

pub fn encoder_forward_cached(enc: &Encoder, tokens: &[usize]) -> Result<(Tensor, EncoderCache)> {
    if tokens.is_empty() {
        return Err(MixerError::shape("encoder", "empty token sequence"));
    }
    let mut h = enc.embed_tokens(tokens)?;
    let mut caches = Vec::with_capacity(enc.layers.len());
    for (i, layer) in enc.layers.iter().enumerate() {
        let (out, cache) = hydra_layer_forward_cached(layer, &h, i)?;
        caches.push(cache);
        h = out;
    }
    let (normed, _) = rms_norm(&h, &enc.final_norm, NORM_EPS)?;
    let logits = matmul_nt(&normed, &enc.embed)?;
    Ok((
        logits,
        EncoderCache {
            tokens: tokens.to_vec(),
            layers: caches,
            h_last: h,
            normed,
        },
    ))
}

/// Per-token logits, `L × vocab`.
pub fn encoder_forward(enc: &Encoder, tokens: &[usize]) -> Result<Tensor> {
    Ok(encoder_forward_cached(enc, tokens)?.0)
}

/// Gradients in [`Encoder::named`] order.
pub fn encoder_backward(enc: &Encoder, cache: &EncoderCache, dlogits: &Tensor) -> Result<Vec<Tensor>> {
    let mut d_embed = matmul_tn(dlogits, &cache.normed)?;
    let dnormed = crate::tensor::matmul(dlogits, &enc.embed)?;
    let (mut dh, d_final) = rms_norm_backward(&cache.h_last, &enc.final_norm, NORM_EPS, &dnormed)?;
    let mut layer_grads = Vec::with_capacity(enc.layers.len());
    for (layer, lc) in enc.layers.iter().zip(&cache.layers).rev() {
        let (dx, g) = hydra_layer_backward(layer, lc, &dh)?;
        layer_grads.push(g);
        dh = dx;
    }
    for (t, &tok) in cache.tokens.iter().enumerate() {
        for (o, &g) in d_embed.row_mut(tok).iter_mut().zip(dh.row(t)) {
            *o += g;
        }
    }
    let mut grads = vec![d_embed];
    for g in layer_grads.into_iter().rev() {
        grads.extend(g);
    }
    grads.push(d_final);
    Ok(grads)
}
