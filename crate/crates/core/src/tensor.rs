//! Row-major dense tensors of `f64` and the handful of primitives the mixers
//! are built from.

use serde::{Deserialize, Serialize};

use crate::error::{MixerError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(MixerError::shape(
                "Tensor::from_vec",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MixerError::NonFinite("Tensor::from_vec".into()));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a 2-D tensor from nested rows. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        let data = rows.iter().flat_map(|row| row.iter().copied()).collect();
        Tensor {
            shape: vec![r, c],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[self.shape.len() - 1]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(MixerError::shape(
                "Tensor::reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn at2_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let c = self.shape[1];
        &mut self.data[i * c + j]
    }

    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    #[inline]
    pub fn at3_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f64 {
        let (s1, s2) = (self.shape[1], self.shape[2]);
        &mut self.data[(i * s1 + j) * s2 + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(MixerError::NonFinite(what.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(MixerError::shape(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(MixerError::shape(
                "add_assign",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn transpose(&self) -> Tensor {
        assert_eq!(self.ndim(), 2, "transpose needs a matrix");
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    /// Copies a rectangular block `[r0, r1) × [c0, c1)` out of a matrix.
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Tensor {
        let mut out = Tensor::zeros(&[r1 - r0, c1 - c0]);
        for i in r0..r1 {
            out.row_mut(i - r0)
                .copy_from_slice(&self.row(i)[c0..c1]);
        }
        out
    }

    /// Copies columns `[c0, c1)` of every row of a matrix.
    pub fn columns(&self, c0: usize, c1: usize) -> Tensor {
        self.block(0, self.rows(), c0, c1)
    }

    /// Writes `src` into columns starting at `c0`, adding to what is there.
    pub fn add_columns(&mut self, c0: usize, src: &Tensor) {
        for i in 0..src.rows() {
            let dst = &mut self.row_mut(i)[c0..c0 + src.cols()];
            for (d, s) in dst.iter_mut().zip(src.row(i)) {
                *d += s;
            }
        }
    }
}

/// Matrix product with 64-bit accumulation.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0] {
        return Err(MixerError::shape(
            "matmul",
            format!("{:?} x {:?}", a.shape, b.shape),
        ));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    let out = Tensor {
        shape: vec![m, n],
        data: out,
    };
    out.ensure_finite("matmul")?;
    Ok(out)
}

/// `aᵀ b` without materializing the transpose.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape[0] != b.shape[0] {
        return Err(MixerError::shape(
            "matmul_tn",
            format!("{:?}ᵀ x {:?}", a.shape, b.shape),
        ));
    }
    let (k, m, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a.data[p * m..(p + 1) * m];
        let brow = &b.data[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `a bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[1] {
        return Err(MixerError::shape(
            "matmul_nt",
            format!("{:?} x {:?}ᵀ", a.shape, b.shape),
        ));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[0]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    if m.ndim() != 2 {
        return Err(MixerError::shape("softmax_rows", format!("{:?}", m.shape)));
    }
    m.ensure_finite("softmax_rows input")?;
    let mut out = m.clone();
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Reverses the sequence (row) axis of an `L × d` matrix.
pub fn flip_seq(x: &Tensor) -> Tensor {
    let l = x.rows();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..l {
        out.row_mut(i).copy_from_slice(x.row(l - 1 - i));
    }
    out
}

/// Moves every row down by one; row 0 becomes zero and the last row drops.
pub fn shift_right(x: &Tensor) -> Tensor {
    let l = x.rows();
    let mut out = Tensor::zeros(x.shape());
    for i in 1..l {
        out.row_mut(i).copy_from_slice(x.row(i - 1));
    }
    out
}

/// Moves every row up by one with a zero row at the end. Adjoint of
/// [`shift_right`].
pub fn shift_left(x: &Tensor) -> Tensor {
    let l = x.rows();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..l.saturating_sub(1) {
        out.row_mut(i).copy_from_slice(x.row(i + 1));
    }
    out
}

/// Largest relative deviation `‖a − b‖∞ / max(‖b‖∞, floor)`.
pub fn rel_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "rel_error shape mismatch");
    let diff = a
        .data
        .iter()
        .zip(&b.data)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / b.max_abs().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn triple_loop(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.at2(i, p) * b.at2(p, j);
                }
                *out.at2_mut(i, j) = s;
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_small_case() {
        let mut rng = RngState::new(1);
        let b = rng.normal_tensor(&[3, 4], 1.0);
        assert_eq!(matmul(&Tensor::identity(3), &b).unwrap(), b);

        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let ones = Tensor::from_rows(&[&[1.0], &[1.0]]);
        assert_eq!(
            matmul(&a, &ones).unwrap(),
            Tensor::from_rows(&[&[3.0], &[7.0]])
        );
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = RngState::new(2);
        let a = rng.normal_tensor(&[8, 8], 1.0);
        let b = rng.normal_tensor(&[8, 8], 1.0);
        assert!(rel_error(&matmul(&a, &b).unwrap(), &triple_loop(&a, &b)) <= 1e-14);
        assert!(rel_error(&matmul_tn(&a, &b).unwrap(), &triple_loop(&a.transpose(), &b)) <= 1e-14);
        assert!(rel_error(&matmul_nt(&a, &b).unwrap(), &triple_loop(&a, &b.transpose())) <= 1e-14);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(MixerError::Shape { .. })));
    }

    #[test]
    fn matmul_associative() {
        let mut rng = RngState::new(3);
        for _ in 0..10 {
            let a = rng.normal_tensor(&[5, 7], 1.0);
            let b = rng.normal_tensor(&[7, 4], 1.0);
            let c = rng.normal_tensor(&[4, 6], 1.0);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            assert!(rel_error(&left, &right) <= 1e-10);
        }
    }

    #[test]
    fn softmax_closed_forms() {
        let s = softmax_rows(&Tensor::from_rows(&[&[2.0, 2.0, 2.0, 2.0]])).unwrap();
        assert!(s.data().iter().all(|v| (v - 0.25).abs() < 1e-15));

        let s = softmax_rows(&Tensor::from_rows(&[&[0.0, 3f64.ln()]])).unwrap();
        assert!((s.at2(0, 0) - 0.25).abs() < 1e-15);
        assert!((s.at2(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariant_and_normalized() {
        let mut rng = RngState::new(4);
        let m = rng.normal_tensor(&[6, 9], 3.0);
        let s = softmax_rows(&m).unwrap();
        for i in 0..6 {
            let total: f64 = s.row(i).iter().sum();
            assert!((total - 1.0).abs() <= 1e-12);
            assert!(s.row(i).iter().all(|&v| v >= 0.0));
        }
        let shifted = softmax_rows(&m.map(|v| v + 17.5)).unwrap();
        assert!(rel_error(&shifted, &s) <= 1e-12);
    }

    #[test]
    fn flip_and_shift_examples() {
        let x = Tensor::from_rows(&[&[1.0], &[2.0], &[3.0]]);
        assert_eq!(flip_seq(&x), Tensor::from_rows(&[&[3.0], &[2.0], &[1.0]]));
        assert_eq!(shift_right(&x), Tensor::from_rows(&[&[0.0], &[1.0], &[2.0]]));

        let one = Tensor::from_rows(&[&[5.0, 6.0]]);
        assert_eq!(flip_seq(&one), one);
        assert_eq!(shift_right(&one), Tensor::zeros(&[1, 2]));
    }

    #[test]
    fn shift_is_nilpotent_and_flip_conjugates_to_left_shift() {
        let mut rng = RngState::new(5);
        let x = rng.normal_tensor(&[7, 3], 1.0);
        let mut y = x.clone();
        for _ in 0..7 {
            y = shift_right(&y);
        }
        assert_eq!(y, Tensor::zeros(&[7, 3]));
        assert_eq!(flip_seq(&flip_seq(&x)), x);
        assert_eq!(flip_seq(&shift_right(&flip_seq(&x))), shift_left(&x));
    }
}
