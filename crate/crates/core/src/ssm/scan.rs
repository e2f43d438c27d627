use crate::batch::SequenceBatch;
use crate::error::{MixerError, Result};
use crate::mixer::MaterializedMixer;
use crate::tensor::Tensor;

use super::{dot, ScanCoeffs};

/// Forward scan inputs and every state `h_t` (`L·H·N·P` reals), kept for the
/// adjoint pass.
#[derive(Clone, Debug)]
pub struct ScanSaved {
    pub xv: Tensor,
    pub coeffs: ScanCoeffs,
    pub y: Tensor,
    states: Option<Vec<f64>>,
}

impl ScanSaved {
    pub fn drop_states(&mut self) {
        self.states = None;
    }

    pub fn has_states(&self) -> bool {
        self.states.is_some()
    }
}

/// Gradients of [`ss_scan`]; `d` holds `(∂ā, ∂b̄, ∂c)` in coefficient layout.
#[derive(Clone, Debug)]
pub struct ScanGrads {
    pub dxv: Tensor,
    pub d: ScanCoeffs,
}

fn check(xv: &Tensor, co: &ScanCoeffs) -> Result<usize> {
    let h = co.n_heads();
    if xv.ndim() != 2 || xv.rows() != co.len() || h == 0 || xv.cols() % h != 0 {
        return Err(MixerError::shape(
            "ss_scan",
            format!("values {:?} against {} tokens × {h} heads", xv.shape(), co.len()),
        ));
    }
    Ok(xv.cols() / h)
}

fn scan_impl(xv: &Tensor, co: &ScanCoeffs, keep: bool) -> Result<(Tensor, Option<Vec<f64>>)> {
    let p = check(xv, co)?;
    let (l, h, n) = (co.len(), co.n_heads(), co.n_state());
    let mut y = Tensor::zeros(xv.shape());
    let mut states = keep.then(|| vec![0.0; l * h * n * p]);
    let mut s = vec![0.0; n * p];
    for head in 0..h {
        s.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..l {
            let a = co.abar.at2(t, head);
            let b = co.b_row(t, head);
            let c = co.c_row(t, head);
            let x = &xv.row(t)[head * p..(head + 1) * p];
            for (k, &bk) in b.iter().enumerate() {
                let sk = &mut s[k * p..(k + 1) * p];
                for (sv, &xv) in sk.iter_mut().zip(x) {
                    *sv = a * *sv + bk * xv;
                }
            }
            let yrow = &mut y.row_mut(t)[head * p..(head + 1) * p];
            for (k, &ck) in c.iter().enumerate() {
                for (yv, &sv) in yrow.iter_mut().zip(&s[k * p..(k + 1) * p]) {
                    *yv += ck * sv;
                }
            }
            if let Some(st) = states.as_mut() {
                let off = (t * h + head) * n * p;
                st[off..off + n * p].copy_from_slice(&s);
            }
        }
    }
    Ok((y, states))
}

/// `h_t = ā_t h_{t−1} + b̄_t x_tᵀ`, `y_t = c_tᵀ h_t`, `h_{−1} = 0`; one
/// left-to-right pass per head over `P`-channel value blocks.
pub fn ss_scan(xv: &Tensor, co: &ScanCoeffs) -> Result<Tensor> {
    Ok(scan_impl(xv, co, false)?.0)
}

pub fn ss_scan_saved(xv: &Tensor, co: &ScanCoeffs) -> Result<ScanSaved> {
    let (y, states) = scan_impl(xv, co, true)?;
    Ok(ScanSaved {
        xv: xv.clone(),
        coeffs: co.clone(),
        y,
        states,
    })
}

pub fn ss_scan_batch(xv: &SequenceBatch, coeffs: &[ScanCoeffs]) -> Result<SequenceBatch> {
    if coeffs.len() != xv.batch() {
        return Err(MixerError::shape("ss_scan_batch", "one coefficient set per item"));
    }
    let out: Result<Vec<Tensor>> = xv.items().zip(coeffs).map(|(v, co)| ss_scan(&v, co)).collect();
    SequenceBatch::from_items(&out?)
}

/// Adjoint recurrence `g_t = c_t dy_tᵀ + ā_{t+1} g_{t+1}` run right to left.
pub fn backward_ss_scan(saved: &ScanSaved, dy: &Tensor) -> Result<ScanGrads> {
    let states = saved
        .states
        .as_ref()
        .ok_or_else(|| MixerError::MissingInput("saved scan states".into()))?;
    let co = &saved.coeffs;
    let xv = &saved.xv;
    if dy.shape() != xv.shape() {
        return Err(MixerError::shape("backward_ss_scan", "upstream gradient shape"));
    }
    let p = check(xv, co)?;
    let (l, h, n) = (co.len(), co.n_heads(), co.n_state());
    let mut d = ScanCoeffs::zeros(l, h, n);
    let mut dxv = Tensor::zeros(xv.shape());
    let mut g = vec![0.0; n * p];
    for head in 0..h {
        g.iter_mut().for_each(|v| *v = 0.0);
        for t in (0..l).rev() {
            let dyt = &dy.row(t)[head * p..(head + 1) * p];
            let x = &xv.row(t)[head * p..(head + 1) * p];
            let c = co.c_row(t, head);
            let b = co.b_row(t, head);
            let off = (t * h + head) * n * p;
            let st = &states[off..off + n * p];
            for k in 0..n {
                let gk = &mut g[k * p..(k + 1) * p];
                for (gv, &dv) in gk.iter_mut().zip(dyt) {
                    *gv += c[k] * dv;
                }
                *d.c.at3_mut(t, head, k) = dot(&st[k * p..(k + 1) * p], dyt);
                *d.bbar.at3_mut(t, head, k) = dot(gk, x);
            }
            if t > 0 {
                let prev = &states[off - h * n * p..off - h * n * p + n * p];
                *d.abar.at2_mut(t, head) = dot(&g, prev);
            }
            let dx = &mut dxv.row_mut(t)[head * p..(head + 1) * p];
            for k in 0..n {
                for (dv, &gv) in dx.iter_mut().zip(&g[k * p..(k + 1) * p]) {
                    *dv += b[k] * gv;
                }
            }
            let a = co.abar.at2(t, head);
            g.iter_mut().for_each(|v| *v *= a);
        }
    }
    Ok(ScanGrads { dxv, d })
}

/// `m_ij = c_iᵀ (∏_{k=j+1}^{i} ā_k) b̄_j` for `i ≥ j` (empty product at
/// `i = j`), zero above the diagonal.
pub fn ss_materialize(co: &ScanCoeffs) -> MaterializedMixer {
    let l = co.len();
    let heads = (0..co.n_heads())
        .map(|h| {
            let mut m = Tensor::zeros(&[l, l]);
            for j in 0..l {
                let mut prod = 1.0;
                for i in j..l {
                    if i > j {
                        prod *= co.abar.at2(i, h);
                    }
                    *m.at2_mut(i, j) = prod * dot(co.c_row(i, h), co.b_row(j, h));
                }
            }
            m
        })
        .collect();
    MaterializedMixer { per_head: heads }
}
