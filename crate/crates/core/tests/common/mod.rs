//! Oracles written from the definitions with plain loops, independent of the
//! library's materializers.
#![allow(dead_code)]

use mixerkit::ssm::{QuasiCoeffs, ScanCoeffs};
use mixerkit::Tensor;

/// `c_tᵀ (Π_{k=s+1}^{t} ā_k) b̄_s` for `s ≤ t`, else 0.
pub fn ss_entry(co: &ScanCoeffs, h: usize, t: usize, s: usize) -> f64 {
    if s > t {
        return 0.0;
    }
    let n = co.bbar.shape()[2];
    let mut decay = 1.0;
    for k in s + 1..=t {
        decay *= co.abar.at2(k, h);
    }
    (0..n).map(|e| co.c.at3(t, h, e) * co.bbar.at3(s, h, e)).sum::<f64>() * decay
}

pub fn ss_matrix(co: &ScanCoeffs, h: usize) -> Tensor {
    let l = co.abar.rows();
    let mut m = Tensor::zeros(&[l, l]);
    for i in 0..l {
        for j in 0..=i {
            *m.at2_mut(i, j) = ss_entry(co, h, i, j);
        }
    }
    m
}

/// Forward scan shifted down one row, backward scan run on the reversed
/// sequence and shifted, plus the free diagonal.
pub fn qs_matrix(qc: &QuasiCoeffs, h: usize) -> Tensor {
    let l = qc.delta.rows();
    let mut m = Tensor::zeros(&[l, l]);
    for i in 0..l {
        for j in 0..l {
            *m.at2_mut(i, j) = if i > j {
                ss_entry(&qc.fwd, h, i - 1, j)
            } else if i < j {
                ss_entry(&qc.bwd, h, l - 2 - i, l - 1 - j)
            } else {
                qc.delta.at2(i, h)
            };
        }
    }
    m
}

/// `y[:, hP..(h+1)P] = M_h v[:, hP..(h+1)P] + r · v`.
pub fn apply_heads(mats: &[Tensor], v: &Tensor, residual: f64) -> Tensor {
    let (l, d) = (v.rows(), v.cols());
    let p = d / mats.len();
    let mut y = Tensor::zeros(&[l, d]);
    for (h, m) in mats.iter().enumerate() {
        for i in 0..l {
            for c in h * p..(h + 1) * p {
                let mut acc = residual * v.at2(i, c);
                for j in 0..l {
                    acc += m.at2(i, j) * v.at2(j, c);
                }
                *y.at2_mut(i, c) = acc;
            }
        }
    }
    y
}

/// `max |a − b| / max |b|` (absolute when `b` is zero).
pub fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.data().iter().map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn outer(q: &Tensor, k: &Tensor) -> Tensor {
    let (l, d) = (q.rows(), q.cols());
    let mut m = Tensor::zeros(&[l, l]);
    for i in 0..l {
        for j in 0..l {
            *m.at2_mut(i, j) = (0..d).map(|e| q.at2(i, e) * k.at2(j, e)).sum();
        }
    }
    m
}
