//! Iterative radix-2 FFT and the convolutions built on it.

use num_complex::Complex64;

use crate::error::{MixerError, Result};
use crate::tensor::Tensor;

/// Precomputed bit-reversal table and twiddles for one power-of-two size.
#[derive(Clone, Debug)]
pub struct FftPlan {
    n: usize,
    rev: Vec<usize>,
    twiddles: Vec<Complex64>,
}

impl FftPlan {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two(), "FFT size must be a power of two");
        let bits = n.trailing_zeros();
        let rev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 / n as f64))
            .collect();
        FftPlan { n, rev, twiddles }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    /// Inverse transform, including the `1/n` normalization.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
        let s = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        assert_eq!(buf.len(), n);
        for i in 0..n {
            let j = self.rev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

fn to_complex(x: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (b, &v) in buf.iter_mut().zip(x) {
        b.re = v;
    }
    buf
}

/// Full linear convolution of two real sequences, length `x.len() + h.len() - 1`.
pub fn linear_conv_fft(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    let plan = FftPlan::new(out_len.next_power_of_two());
    let mut fx = to_complex(x, plan.len());
    let mut fh = to_complex(h, plan.len());
    plan.forward(&mut fx);
    plan.forward(&mut fh);
    for (a, b) in fx.iter_mut().zip(&fh) {
        *a *= b;
    }
    plan.inverse(&mut fx);
    fx.iter().take(out_len).map(|c| c.re).collect()
}

/// Circular convolution `y[k] = Σ_j x[j] h[(k − j) mod n]` of two length-`n`
/// sequences. Any `n ≥ 1`: the linear convolution is folded back onto `n`.
pub fn circular_conv_fft(x: &Tensor, h: &Tensor) -> Result<Tensor> {
    let n = x.len();
    if n == 0 || h.len() != n {
        return Err(MixerError::shape(
            "circular_conv_fft",
            format!("lengths {} and {}", x.len(), h.len()),
        ));
    }
    let lin = linear_conv_fft(x.data(), h.data());
    let mut out = vec![0.0; n];
    for (k, v) in lin.into_iter().enumerate() {
        out[k % n] += v;
    }
    let out = Tensor::from_vec(&[n], out)?;
    Ok(out)
}

/// Applies the Toeplitz operator `y_i = Σ_j kernel[i − j + L − 1] · x_j` to
/// every column of an `L × P` matrix. `kernel` holds the `2L − 1` taps for
/// offsets `−(L−1) ..= L−1`.
pub fn toeplitz_apply_fft(kernel: &[f64], x: &Tensor) -> Result<Tensor> {
    let l = x.rows();
    if kernel.len() != 2 * l - 1 {
        return Err(MixerError::shape(
            "toeplitz_apply_fft",
            format!("kernel length {} for L = {}", kernel.len(), l),
        ));
    }
    let plan = FftPlan::new((2 * l - 1).next_power_of_two());
    let n = plan.len();
    // Offset t sits at index t mod n.
    let mut fk = vec![Complex64::new(0.0, 0.0); n];
    for (idx, &tap) in kernel.iter().enumerate() {
        let offset = idx as isize - (l as isize - 1);
        fk[offset.rem_euclid(n as isize) as usize].re = tap;
    }
    plan.forward(&mut fk);

    let p = x.cols();
    let mut out = Tensor::zeros(&[l, p]);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    // Two real columns share one complex transform.
    let mut col = 0;
    while col < p {
        let pair = col + 1 < p;
        for v in buf.iter_mut() {
            *v = Complex64::new(0.0, 0.0);
        }
        for i in 0..l {
            buf[i].re = x.at2(i, col);
            if pair {
                buf[i].im = x.at2(i, col + 1);
            }
        }
        plan.forward(&mut buf);
        for (a, b) in buf.iter_mut().zip(&fk) {
            *a *= b;
        }
        plan.inverse(&mut buf);
        for i in 0..l {
            *out.at2_mut(i, col) = buf[i].re;
            if pair {
                *out.at2_mut(i, col + 1) = buf[i].im;
            }
        }
        col += 2;
    }
    out.ensure_finite("toeplitz_apply_fft")?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use crate::tensor::rel_error;

    fn direct_circular(x: &Tensor, h: &Tensor) -> Tensor {
        let n = x.len();
        let mut out = vec![0.0; n];
        for (k, o) in out.iter_mut().enumerate() {
            for j in 0..n {
                *o += x.data()[j] * h.data()[(k + n - j) % n];
            }
        }
        Tensor::from_vec(&[n], out).unwrap()
    }

    #[test]
    fn impulse_is_identity() {
        let mut rng = RngState::new(11);
        let x = rng.normal_tensor(&[10], 1.0);
        let mut h = Tensor::zeros(&[10]);
        h.data_mut()[0] = 1.0;
        let y = circular_conv_fft(&x, &h).unwrap();
        assert!(rel_error(&y, &x) <= 1e-14);
    }

    #[test]
    fn length_one_is_product() {
        let x = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let h = Tensor::from_vec(&[1], vec![-2.5]).unwrap();
        let y = circular_conv_fft(&x, &h).unwrap();
        assert!((y.data()[0] + 7.5).abs() < 1e-14);
    }

    #[test]
    fn matches_direct_sum_for_all_small_lengths() {
        let mut rng = RngState::new(12);
        for n in 1..=64 {
            let x = rng.normal_tensor(&[n], 1.0);
            let h = rng.normal_tensor(&[n], 1.0);
            let err = rel_error(&circular_conv_fft(&x, &h).unwrap(), &direct_circular(&x, &h));
            assert!(err <= 1e-12, "n = {n}: {err}");
        }
    }

    #[test]
    fn rejects_length_mismatch() {
        let x = Tensor::zeros(&[4]);
        let h = Tensor::zeros(&[5]);
        assert!(circular_conv_fft(&x, &h).is_err());
    }

    #[test]
    fn toeplitz_matches_dense() {
        let mut rng = RngState::new(13);
        for l in [1usize, 2, 5, 16, 33] {
            let kernel = rng.normal_tensor(&[2 * l - 1], 1.0);
            let x = rng.normal_tensor(&[l, 3], 1.0);
            let mut dense = Tensor::zeros(&[l, l]);
            for i in 0..l {
                for j in 0..l {
                    *dense.at2_mut(i, j) = kernel.data()[i + l - 1 - j];
                }
            }
            let want = crate::tensor::matmul(&dense, &x).unwrap();
            let got = toeplitz_apply_fft(kernel.data(), &x).unwrap();
            assert!(rel_error(&got, &want) <= 1e-12);
        }
    }
}
