use crate::error::Result;
use crate::families::build_generic_mixer;
use crate::hydra::{
    encoder_backward, encoder_forward, encoder_forward_cached, hydra_layer_backward, hydra_layer_forward,
    hydra_layer_forward_cached, Encoder, EncoderConfig, HydraLayerParams, LayerDims, Mixing,
};
use crate::mixer::{depthwise_conv_centered, Family, MixerConfig, MixerSpec, Mode};
use crate::rng::RngState;
use crate::ssm::{
    backward_ss_scan, discretize_features, discretize_features_backward, qs_apply_coeffs, qs_backward_coeffs, ss_scan,
    ss_scan_saved, QuasiCoeffs, ScanCoeffs,
};
use crate::tensor::{softmax_rows, Tensor};

use super::ops::{
    causal_conv, causal_conv_backward, depthwise_conv_backward, rms_norm, rms_norm_backward, silu, silu_backward,
    softmax_cross_entropy, softmax_rows_backward,
};
use super::{finite_difference_grad, grad_rel_error, GradReport, FD_STEP};

type CaseFn = Box<dyn Fn(&mut RngState) -> Result<f64> + Send + Sync>;

/// One registered backward pass; `run` draws a random configuration and
/// returns the worst relative error over all of its inputs.
pub struct GradCase {
    pub name: String,
    pub run: CaseFn,
}

fn case(name: impl Into<String>, f: impl Fn(&mut RngState) -> Result<f64> + Send + Sync + 'static) -> GradCase {
    GradCase {
        name: name.into(),
        run: Box::new(f),
    }
}

/// `Σ w ⊙ y`, the scalar used to probe vector-valued ops.
fn probe(w: &Tensor, y: &Tensor) -> f64 {
    w.dot(y)
}

fn fd(analytic: &Tensor, theta: &Tensor, f: impl FnMut(&Tensor) -> Result<f64>) -> Result<f64> {
    Ok(grad_rel_error(analytic, &finite_difference_grad(f, theta, FD_STEP)?))
}

fn scan_case(rng: &mut RngState) -> Result<f64> {
    let (l, h, n, p) = (2 + rng.below(7), 1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(3));
    let co = ScanCoeffs::random(l, h, n, rng);
    let xv = rng.normal_tensor(&[l, h * p], 1.0);
    let w = rng.normal_tensor(&[l, h * p], 1.0);
    let g = backward_ss_scan(&ss_scan_saved(&xv, &co)?, &w)?;
    let mut worst = fd(&g.dxv, &xv, |t| Ok(probe(&w, &ss_scan(t, &co)?)))?;
    let with = |f: &dyn Fn(&mut ScanCoeffs, &Tensor), t: &Tensor| -> Result<f64> {
        let mut c = co.clone();
        f(&mut c, t);
        Ok(probe(&w, &ss_scan(&xv, &c)?))
    };
    worst = worst.max(fd(&g.d.abar, &co.abar, |t| with(&|c, t| c.abar = t.clone(), t))?);
    worst = worst.max(fd(&g.d.bbar, &co.bbar, |t| with(&|c, t| c.bbar = t.clone(), t))?);
    worst = worst.max(fd(&g.d.c, &co.c, |t| with(&|c, t| c.c = t.clone(), t))?);
    Ok(worst)
}

fn discretize_case(rng: &mut RngState) -> Result<f64> {
    let (l, h, n) = (2 + rng.below(5), 1 + rng.below(3), 1 + rng.below(3));
    let dt = rng.normal_tensor(&[l, h], 1.0);
    let bias = rng.normal_tensor(&[h], 0.5);
    let alog = rng.uniform_tensor(&[h], -2.0, 0.5);
    let b = rng.normal_tensor(&[l, n], 1.0);
    let c = rng.normal_tensor(&[l, n], 1.0);
    let w = ScanCoeffs::random(l, h, n, rng);
    let loss = |dt: &Tensor, bias: &Tensor, alog: &Tensor, b: &Tensor, c: &Tensor| -> Result<f64> {
        let co = discretize_features(dt, bias, alog, b, c)?;
        Ok(probe(&w.abar, &co.abar) + probe(&w.bbar, &co.bbar) + probe(&w.c, &co.c))
    };
    let g = discretize_features_backward(&dt, &bias, &alog, &b, &w)?;
    let mut worst = fd(&g.dt_lin, &dt, |t| loss(t, &bias, &alog, &b, &c))?;
    worst = worst.max(fd(&g.dt_bias, &bias, |t| loss(&dt, t, &alog, &b, &c))?);
    worst = worst.max(fd(&g.a_log, &alog, |t| loss(&dt, &bias, t, &b, &c))?);
    worst = worst.max(fd(&g.b, &b, |t| loss(&dt, &bias, &alog, t, &c))?);
    worst = worst.max(fd(&g.c, &c, |t| loss(&dt, &bias, &alog, &b, t))?);
    Ok(worst)
}

fn quasi_case(rng: &mut RngState) -> Result<f64> {
    let (l, h, n, p) = (2 + rng.below(7), 1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(3));
    let qc = QuasiCoeffs::random(l, h, n, rng);
    let xv = rng.normal_tensor(&[l, h * p], 1.0);
    let w = rng.normal_tensor(&[l, h * p], 1.0);
    let g = qs_backward_coeffs(&qc, &xv, &w)?;
    let with = |f: &dyn Fn(&mut QuasiCoeffs, &Tensor), t: &Tensor| -> Result<f64> {
        let mut c = qc.clone();
        f(&mut c, t);
        Ok(probe(&w, &qs_apply_coeffs(&c, &xv)?))
    };
    let mut worst = fd(&g.dxv, &xv, |t| Ok(probe(&w, &qs_apply_coeffs(&qc, t)?)))?;
    worst = worst.max(fd(&g.delta, &qc.delta, |t| with(&|c, t| c.delta = t.clone(), t))?);
    worst = worst.max(fd(&g.fwd.abar, &qc.fwd.abar, |t| with(&|c, t| c.fwd.abar = t.clone(), t))?);
    worst = worst.max(fd(&g.fwd.bbar, &qc.fwd.bbar, |t| with(&|c, t| c.fwd.bbar = t.clone(), t))?);
    worst = worst.max(fd(&g.fwd.c, &qc.fwd.c, |t| with(&|c, t| c.fwd.c = t.clone(), t))?);
    worst = worst.max(fd(&g.bwd.abar, &qc.bwd.abar, |t| with(&|c, t| c.bwd.abar = t.clone(), t))?);
    worst = worst.max(fd(&g.bwd.bbar, &qc.bwd.bbar, |t| with(&|c, t| c.bwd.bbar = t.clone(), t))?);
    worst = worst.max(fd(&g.bwd.c, &qc.bwd.c, |t| with(&|c, t| c.bwd.c = t.clone(), t))?);
    Ok(worst)
}

fn elementwise_case(rng: &mut RngState) -> Result<f64> {
    let (l, c) = (1 + rng.below(6), 1 + rng.below(5));
    let x = rng.normal_tensor(&[l, c], 1.5);
    let g = rng.normal_tensor(&[c], 1.0);
    let w = rng.normal_tensor(&[l, c], 1.0);
    let mut worst = fd(&silu_backward(&x, &w)?, &x, |t| Ok(probe(&w, &silu(t))))?;
    let (dx, dg) = rms_norm_backward(&x, &g, 1e-5, &w)?;
    worst = worst.max(fd(&dx, &x, |t| Ok(probe(&w, &rms_norm(t, &g, 1e-5)?.0)))?);
    worst = worst.max(fd(&dg, &g, |t| Ok(probe(&w, &rms_norm(&x, t, 1e-5)?.0)))?);
    let a = softmax_rows(&x)?;
    worst = worst.max(fd(&softmax_rows_backward(&a, &w)?, &x, |t| Ok(probe(&w, &softmax_rows(t)?)))?);
    let targets: Vec<usize> = (0..l).map(|_| rng.below(c)).collect();
    let weights: Vec<f64> = (0..l).map(|_| rng.uniform()).collect();
    let (_, dlog) = softmax_cross_entropy(&x, &targets, &weights)?;
    worst = worst.max(fd(&dlog, &x, |t| Ok(softmax_cross_entropy(t, &targets, &weights)?.0))?);
    Ok(worst)
}

fn conv_case(rng: &mut RngState) -> Result<f64> {
    let (l, d, k) = (1 + rng.below(9), 1 + rng.below(4), 2 * rng.below(4) + 1);
    let u = rng.normal_tensor(&[l, d], 1.0);
    let taps = rng.normal_tensor(&[d, k], 1.0);
    let bias = rng.normal_tensor(&[d], 1.0);
    let w = rng.normal_tensor(&[l, d], 1.0);
    let mut worst: f64 = 0.0;
    for causal in [false, true] {
        let run = |u: &Tensor, taps: &Tensor, b: &Tensor| {
            if causal {
                causal_conv(u, taps, Some(b.data()))
            } else {
                depthwise_conv_centered(u, taps, Some(b.data()))
            }
        };
        let (du, dt, db) = if causal {
            causal_conv_backward(&u, &taps, &w)
        } else {
            depthwise_conv_backward(&u, &taps, &w)
        };
        worst = worst.max(fd(&du, &u, |t| Ok(probe(&w, &run(t, &taps, &bias))))?);
        worst = worst.max(fd(&dt, &taps, |t| Ok(probe(&w, &run(&u, t, &bias))))?);
        worst = worst.max(fd(&db, &bias, |t| Ok(probe(&w, &run(&u, &taps, t))))?);
    }
    Ok(worst)
}

fn build_randomized(family: Family, mode: Mode, cfg: &MixerConfig, seed: u64) -> Result<MixerSpec> {
    build_generic_mixer(family, mode, cfg, &mut RngState::new(seed))
}

fn mixer_case(family: Family, mode: Mode) -> impl Fn(&mut RngState) -> Result<f64> + Send + Sync {
    move |rng| {
        let l = 2 + rng.below(5);
        let cfg = MixerConfig::new(l, 3, 2, 2, 2);
        let seed = rng.next_u64();
        let m = build_randomized(family, mode, &cfg, seed)?;
        let x = rng.normal_tensor(&[l, 3], 1.0);
        let v = rng.normal_tensor(&[l, 4], 1.0);
        let w = rng.normal_tensor(&[l, 4], 1.0);
        let xo = m.is_data_dependent().then_some(&x);
        let g = m.backward_seq(&v, xo, &w)?;
        let mut worst = fd(&g.dv, &v, |t| Ok(probe(&w, &m.apply_seq(t, xo)?)))?;
        if let Some(dx) = &g.dx {
            worst = worst.max(fd(dx, &x, |t| Ok(probe(&w, &m.apply_seq(&v, Some(t))?)))?);
        }
        let originals: Vec<Tensor> = m.params().into_iter().map(|(_, t)| t.clone()).collect();
        for (k, (theta, dtheta)) in originals.iter().zip(&g.params).enumerate() {
            worst = worst.max(fd(dtheta, theta, |t| {
                let mut probe_m = build_randomized(family, mode, &cfg, seed)?;
                *probe_m.params_mut()[k].1 = t.clone();
                Ok(probe(&w, &probe_m.apply_seq(&v, xo)?))
            })?);
        }
        Ok(worst)
    }
}

/// Step sizes of order one. At the small-step initialization `ā ≈ 1` and
/// the decay gradients sink to the finite-difference noise floor.
fn generic_decay(p: &mut HydraLayerParams, rng: &mut RngState) {
    for (name, t) in p.named_mut() {
        match name {
            "a_log_f" | "a_log_b" => *t = rng.uniform_tensor(t.shape(), -1.0, 0.5),
            "dt_bias_f" | "dt_bias_b" => *t = rng.normal_tensor(t.shape(), 0.5),
            _ => {}
        }
    }
}

fn tiny_dims() -> LayerDims {
    LayerDims {
        c_model: 4,
        d_inner: 8,
        n_heads: 2,
        head_dim: 4,
        n_state: 2,
        conv_width: 3,
    }
}

fn layer_case(mixing: Mixing, share_decay: bool) -> impl Fn(&mut RngState) -> Result<f64> + Send + Sync {
    move |rng| {
        let l = 2 + rng.below(6);
        let mut p = HydraLayerParams::new(mixing, tiny_dims(), share_decay, rng)?;
        generic_decay(&mut p, rng);
        let x = rng.normal_tensor(&[l, 4], 1.0);
        let w = rng.normal_tensor(&[l, 4], 1.0);
        let (_, cache) = hydra_layer_forward_cached(&p, &x, 0)?;
        let (dx, grads) = hydra_layer_backward(&p, &cache, &w)?;
        let mut worst = fd(&dx, &x, |t| Ok(probe(&w, &hydra_layer_forward(&p, t)?)))?;
        let originals: Vec<Tensor> = p.named().into_iter().map(|(_, t)| t.clone()).collect();
        for (k, (theta, g)) in originals.iter().zip(&grads).enumerate() {
            worst = worst.max(fd(g, theta, |t| {
                let mut q = p.clone();
                *q.named_mut()[k].1 = t.clone();
                Ok(probe(&w, &hydra_layer_forward(&q, &x)?))
            })?);
        }
        Ok(worst)
    }
}

/// Cross-entropy of a one-layer encoder on a random masked sequence, the
/// same objective the toy task trains.
fn encoder_case(rng: &mut RngState) -> Result<f64> {
    let cfg = EncoderConfig {
        n_layers: 1,
        c_model: 4,
        expand: 2,
        n_heads: 2,
        head_dim: 4,
        n_state: 2,
        conv_width: 3,
        vocab: 5,
        mixing: Mixing::Quasi,
        share_decay: true,
    };
    let mut enc = Encoder::new(cfg, rng)?;
    for layer in &mut enc.layers {
        generic_decay(layer, rng);
    }
    let l = 8;
    let targets: Vec<usize> = (0..l).map(|_| rng.below(4)).collect();
    let tokens: Vec<usize> = targets.iter().map(|&t| if rng.uniform() < 0.3 { 4 } else { t }).collect();
    let weights = vec![1.0; l];
    let (logits, cache) = encoder_forward_cached(&enc, &tokens)?;
    let (_, dlogits) = softmax_cross_entropy(&logits, &targets, &weights)?;
    let grads = encoder_backward(&enc, &cache, &dlogits)?;
    let originals: Vec<Tensor> = enc.named().into_iter().map(|(_, t)| t.clone()).collect();
    let mut worst: f64 = 0.0;
    for (k, (theta, g)) in originals.iter().zip(&grads).enumerate() {
        worst = worst.max(fd(g, theta, |t| {
            let mut e = enc.clone();
            *e.named_mut()[k].1 = t.clone();
            Ok(softmax_cross_entropy(&encoder_forward(&e, &tokens)?, &targets, &weights)?.0)
        })?);
    }
    Ok(worst)
}

/// Every registered backward pass.
pub fn registry() -> Vec<GradCase> {
    let mut cases = vec![
        case("ss_scan", scan_case),
        case("discretize", discretize_case),
        case("qs_apply", quasi_case),
        case("silu/rms_norm/softmax/cross_entropy", elementwise_case),
        case("short_conv", conv_case),
    ];
    for f in Family::ALL {
        for &mode in f.modes() {
            cases.push(case(format!("mixer/{f}-{mode}"), mixer_case(f, mode)));
        }
    }
    cases.push(case("hydra_layer/quasi", layer_case(Mixing::Quasi, true)));
    cases.push(case("hydra_layer/quasi-separate-decay", layer_case(Mixing::Quasi, false)));
    cases.push(case("hydra_layer/causal", layer_case(Mixing::Causal, true)));
    cases.push(case("encoder/1-layer-hydra-L8", encoder_case));
    cases
}

/// Runs every case over `n_configs` random configurations drawn from
/// per-case substreams of `seed`.
pub fn gradcheck_suite(seed: u64, n_configs: usize) -> Result<Vec<GradReport>> {
    gradcheck_filtered(seed, n_configs, |_| true)
}

/// [`gradcheck_suite`] restricted to the cases `keep` accepts. A case sees
/// the same substream whether or not others are filtered out.
pub fn gradcheck_filtered(seed: u64, n_configs: usize, keep: impl Fn(&str) -> bool) -> Result<Vec<GradReport>> {
    registry()
        .into_iter()
        .enumerate()
        .filter(|(_, c)| keep(&c.name))
        .map(|(i, c)| {
            let mut rng = RngState::substream(seed, i as u64);
            let mut worst: f64 = 0.0;
            for _ in 0..n_configs {
                worst = worst.max((c.run)(&mut rng)?);
            }
            Ok(GradReport::new(c.name, worst, FD_STEP))
        })
        .collect()
}
