use std::fmt;

use serde::{Deserialize, Serialize};

use super::encoder::EncoderConfig;
use super::layer::{LayerDims, Mixing};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub module: String,
    pub hydra: usize,
    pub baseline: usize,
}

/// One Hydra layer against two independent causal layers (each with its own
/// input projection, conv, decay, skip, output projection and norm) covering
/// the two directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCountReport {
    pub rows: Vec<CountRow>,
    pub hydra_layer: usize,
    pub baseline_layer: usize,
    pub ratio: f64,
    pub embedding: usize,
    pub hydra_total: usize,
}

fn layer_rows(dims: &LayerDims, mixing: Mixing, share_decay: bool) -> Vec<(&'static str, usize)> {
    let (c, d, h) = (dims.c_model, dims.d_inner, dims.n_heads);
    let mut rows = vec![
        ("norm", c),
        ("in_proj", c * (2 * d + dims.cons_width(mixing))),
        ("conv", d * dims.conv_width + d),
    ];
    match mixing {
        Mixing::Quasi => {
            rows.push(("decay", if share_decay { h } else { 2 * h }));
            rows.push(("dt_bias", 2 * h));
        }
        Mixing::Causal => {
            rows.push(("decay", h));
            rows.push(("dt_bias", h));
            rows.push(("d_skip", h));
        }
    }
    rows.push(("out_proj", d * c));
    rows
}

pub fn layer_parameter_count(dims: &LayerDims, mixing: Mixing, share_decay: bool) -> usize {
    layer_rows(dims, mixing, share_decay).iter().map(|(_, n)| n).sum()
}

pub fn parameter_count_report(cfg: &EncoderConfig) -> ParamCountReport {
    let dims = cfg.layer_dims();
    let hydra = layer_rows(&dims, Mixing::Quasi, cfg.share_decay);
    let causal = layer_rows(&dims, Mixing::Causal, true);
    let mut rows: Vec<CountRow> = Vec::new();
    for (name, n) in &hydra {
        rows.push(CountRow {
            module: name.to_string(),
            hydra: *n,
            baseline: 0,
        });
    }
    for (name, n) in &causal {
        match rows.iter_mut().find(|r| r.module == *name) {
            Some(r) => r.baseline = 2 * n,
            None => rows.push(CountRow {
                module: name.to_string(),
                hydra: 0,
                baseline: 2 * n,
            }),
        }
    }
    let hydra_layer: usize = rows.iter().map(|r| r.hydra).sum();
    let baseline_layer: usize = rows.iter().map(|r| r.baseline).sum();
    let embedding = cfg.vocab * cfg.c_model;
    ParamCountReport {
        ratio: hydra_layer as f64 / baseline_layer as f64,
        hydra_total: embedding + cfg.n_layers * hydra_layer + cfg.c_model,
        rows,
        hydra_layer,
        baseline_layer,
        embedding,
    }
}

impl fmt::Display for ParamCountReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>12} {:>16}", "module", "hydra", "two-ssm")?;
        for r in &self.rows {
            writeln!(f, "{:<10} {:>12} {:>16}", r.module, r.hydra, r.baseline)?;
        }
        writeln!(f, "{:<10} {:>12} {:>16}", "layer", self.hydra_layer, self.baseline_layer)?;
        writeln!(f, "ratio {:.4}", self.ratio)?;
        write!(f, "encoder total {} (embedding {})", self.hydra_total, self.embedding)
    }
}

/// Ablation scale: 12 layers of width 768, head dim 64, state 128 and a
/// 30522-token vocabulary.
pub fn ablation_scale_config() -> EncoderConfig {
    EncoderConfig {
        n_layers: 12,
        c_model: 768,
        expand: 2,
        n_heads: 24,
        head_dim: 64,
        n_state: 128,
        conv_width: 7,
        vocab: 30522,
        mixing: Mixing::Quasi,
        share_decay: true,
    }
}
