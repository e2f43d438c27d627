use crate::error::{MixerError, Result};
use crate::ssm::sigmoid;
use crate::tensor::{softmax_rows, Tensor};

pub fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid(v))
}

/// `d/dx [x σ(x)] = σ(x) (1 + x (1 − σ(x)))`.
pub fn silu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    dy.mul(&x.map(|v| {
        let s = sigmoid(v);
        s * (1.0 + v * (1.0 - s))
    }))
}

/// `y_t = g ⊙ x_t / sqrt(mean(x_t²) + eps)`; also returns the per-row
/// inverse scale.
pub fn rms_norm(x: &Tensor, g: &Tensor, eps: f64) -> Result<(Tensor, Vec<f64>)> {
    if g.len() != x.cols() {
        return Err(MixerError::shape("rms_norm", format!("gain has {} entries for {} channels", g.len(), x.cols())));
    }
    let c = x.cols() as f64;
    let mut y = Tensor::zeros(x.shape());
    let mut inv = Vec::with_capacity(x.rows());
    for t in 0..x.rows() {
        let r = 1.0 / (x.row(t).iter().map(|v| v * v).sum::<f64>() / c + eps).sqrt();
        inv.push(r);
        for ((o, &v), &gv) in y.row_mut(t).iter_mut().zip(x.row(t)).zip(g.data()) {
            *o = v * r * gv;
        }
    }
    Ok((y, inv))
}

/// Returns `(dx, dg)`.
pub fn rms_norm_backward(x: &Tensor, g: &Tensor, eps: f64, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_, inv) = rms_norm(x, g, eps)?;
    let c = x.cols();
    let mut dx = Tensor::zeros(x.shape());
    let mut dg = Tensor::zeros(g.shape());
    for (t, &r) in inv.iter().enumerate() {
        let xr = x.row(t);
        let dyr = dy.row(t);
        let mut proj = 0.0;
        for k in 0..c {
            let xhat = xr[k] * r;
            dg.data_mut()[k] += dyr[k] * xhat;
            proj += dyr[k] * g.data()[k] * xhat;
        }
        proj /= c as f64;
        for (k, o) in dx.row_mut(t).iter_mut().enumerate() {
            *o = r * (dyr[k] * g.data()[k] - xr[k] * r * proj);
        }
    }
    Ok((dx, dg))
}

/// Adjoint of [`crate::mixer::depthwise_conv_centered`]: `(du, dtaps, dbias)`.
pub fn depthwise_conv_backward(u: &Tensor, taps: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    conv_backward(u, taps, dy, (taps.cols() / 2) as isize)
}

/// `y[t, ch] = bias[ch] + Σ_k taps[ch, k] · u[t + k − (w − 1), ch]`: only
/// current and past tokens.
pub fn causal_conv(u: &Tensor, taps: &Tensor, bias: Option<&[f64]>) -> Tensor {
    let (l, d) = (u.rows(), u.cols());
    let w = taps.cols();
    let mut out = Tensor::zeros(&[l, d]);
    for t in 0..l {
        let orow = out.row_mut(t);
        if let Some(b) = bias {
            orow.copy_from_slice(b);
        }
        for k in 0..w {
            let src = t as isize + k as isize - (w as isize - 1);
            if src < 0 {
                continue;
            }
            let urow = u.row(src as usize);
            for ch in 0..d {
                orow[ch] += taps.at2(ch, k) * urow[ch];
            }
        }
    }
    out
}

pub fn causal_conv_backward(u: &Tensor, taps: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    conv_backward(u, taps, dy, taps.cols() as isize - 1)
}

fn conv_backward(u: &Tensor, taps: &Tensor, dy: &Tensor, back: isize) -> (Tensor, Tensor, Tensor) {
    let (l, d) = (u.rows(), u.cols());
    let w = taps.cols();
    let mut du = Tensor::zeros(u.shape());
    let mut dtaps = Tensor::zeros(taps.shape());
    let mut dbias = Tensor::zeros(&[d]);
    for t in 0..l {
        let g = dy.row(t);
        for ch in 0..d {
            dbias.data_mut()[ch] += g[ch];
        }
        for k in 0..w {
            let src = t as isize + k as isize - back;
            if src < 0 || src >= l as isize {
                continue;
            }
            let s = src as usize;
            for ch in 0..d {
                *dtaps.at2_mut(ch, k) += g[ch] * u.at2(s, ch);
                *du.at2_mut(s, ch) += g[ch] * taps.at2(ch, k);
            }
        }
    }
    (du, dtaps, dbias)
}

/// Adjoint of row softmax given its output `a`: `a ⊙ (g − rowsum(g ⊙ a))`.
pub fn softmax_rows_backward(a: &Tensor, g: &Tensor) -> Result<Tensor> {
    if a.shape() != g.shape() {
        return Err(MixerError::shape("softmax backward", "gradient shape"));
    }
    let mut out = Tensor::zeros(a.shape());
    for i in 0..a.rows() {
        let s: f64 = a.row(i).iter().zip(g.row(i)).map(|(x, y)| x * y).sum();
        for ((o, &av), &gv) in out.row_mut(i).iter_mut().zip(a.row(i)).zip(g.row(i)) {
            *o = av * (gv - s);
        }
    }
    Ok(out)
}

/// Weighted mean of `−log softmax(logits_t)[target_t]` and its gradient.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize], weights: &[f64]) -> Result<(f64, Tensor)> {
    let (l, v) = (logits.rows(), logits.cols());
    if targets.len() != l || weights.len() != l {
        return Err(MixerError::shape("cross entropy", "one target and weight per row"));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
        return Err(MixerError::shape("cross entropy", format!("target {bad} ≥ vocab {v}")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Ok((0.0, Tensor::zeros(logits.shape())));
    }
    let p = softmax_rows(logits)?;
    let mut loss = 0.0;
    let mut d = p.clone();
    for t in 0..l {
        let w = weights[t] / total;
        let row = logits.row(t);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
        loss += w * (lse - row[targets[t]]);
        *d.at2_mut(t, targets[t]) -= 1.0;
        d.row_mut(t).iter_mut().for_each(|x| *x *= w);
    }
    Ok((loss, d))
}
