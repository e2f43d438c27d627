use crate::error::{MixerError, Result};
use crate::linalg::{numerical_rank, DEFAULT_RANK_TOL};
use crate::report::{CheckRecord, VerificationReport};
use crate::tensor::Tensor;

const MAX_RANK_LEN: usize = 64;

fn square(m: &Tensor, op: &'static str) -> Result<usize> {
    if m.ndim() != 2 || m.rows() != m.cols() || m.rows() == 0 {
        return Err(MixerError::shape(op, format!("expected a square matrix, got {:?}", m.shape())));
    }
    if m.rows() > MAX_RANK_LEN {
        return Err(MixerError::shape(op, format!("L = {} exceeds {MAX_RANK_LEN}", m.rows())));
    }
    Ok(m.rows())
}

/// Ranks of the maximal strictly-lower blocks `m[i+1:, :i+1]` and strictly
/// upper blocks `m[:i+1, i+1:]` for `i = 0..L−1`. Every off-diagonal
/// submatrix sits inside one of them.
pub fn block_ranks(m: &Tensor) -> Result<(Vec<usize>, Vec<usize>)> {
    let l = square(m, "block_ranks")?;
    let mut lower = Vec::with_capacity(l.saturating_sub(1));
    let mut upper = Vec::with_capacity(l.saturating_sub(1));
    for i in 0..l - 1 {
        lower.push(numerical_rank(&m.block(i + 1, l, 0, i + 1), DEFAULT_RANK_TOL)?);
        upper.push(numerical_rank(&m.block(0, i + 1, i + 1, l), DEFAULT_RANK_TOL)?);
    }
    Ok((lower, upper))
}

fn argmax(v: &[usize]) -> (usize, usize) {
    v.iter().enumerate().fold((0, 0), |best, (i, &r)| if r > best.1 { (i, r) } else { best })
}

/// Off-diagonal rank bound: every strictly-lower and strictly-upper block has
/// rank ≤ `n_bound`.
pub fn check_quasi_rank(m: &Tensor, n_bound: usize) -> Result<VerificationReport> {
    let (lower, upper) = block_ranks(m)?;
    let mut report = VerificationReport::new("quasi-rank");
    for (name, ranks) in [("strict-lower", &lower), ("strict-upper", &upper)] {
        let (at, r) = argmax(ranks);
        report.push(CheckRecord::at_most(name, r as f64, n_bound as f64).with_note(format!("max at split {at}")).counting());
    }
    Ok(report)
}

/// Lower-triangle rank bound: every block `m[i:, :i+1]` (diagonal included)
/// has rank ≤ `n_bound`.
pub fn check_semisep_rank(m: &Tensor, n_bound: usize) -> Result<VerificationReport> {
    let l = square(m, "check_semisep_rank")?;
    let mut report = VerificationReport::new("semisep-rank");
    let upper_mass = (0..l).flat_map(|i| (i + 1..l).map(move |j| (i, j))).map(|(i, j)| m.at2(i, j).abs()).fold(0.0, f64::max);
    report.push(CheckRecord::at_most("strict-upper-is-zero", upper_mass, 0.0));
    let ranks: Result<Vec<usize>> = (0..l).map(|i| numerical_rank(&m.block(i, l, 0, i + 1), DEFAULT_RANK_TOL)).collect();
    let (at, r) = argmax(&ranks?);
    report.push(CheckRecord::at_most("lower-with-diagonal", r as f64, n_bound as f64).with_note(format!("max at split {at}")).counting());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use crate::ssm::{qs_materialize_coeffs, ss_materialize, QuasiCoeffs, ScanCoeffs};

    #[test]
    fn generic_quasiseparable_has_rank_exactly_n() {
        let mut rng = RngState::new(21);
        let m = &qs_materialize_coeffs(&QuasiCoeffs::random(16, 1, 2, &mut rng)).per_head[0];
        assert!(check_quasi_rank(m, 2).unwrap().pass);
        assert!(!check_quasi_rank(m, 1).unwrap().pass);
        let (lower, upper) = block_ranks(m).unwrap();
        assert!(lower[2..13].iter().chain(&upper[2..13]).all(|&r| r == 2));
    }

    #[test]
    fn diagonal_has_zero_off_diagonal_rank() {
        let m = Tensor::from_vec(&[4, 4], (0..16).map(|k| if k % 5 == 0 { k as f64 + 1.0 } else { 0.0 }).collect()).unwrap();
        let r = check_quasi_rank(&m, 0).unwrap();
        assert!(r.pass);
        assert_eq!(r.max_measured(), 0.0);
    }

    #[test]
    fn dense_random_is_a_negative_control() {
        let mut rng = RngState::new(22);
        let m = rng.normal_tensor(&[12, 12], 1.0);
        assert!(!check_quasi_rank(&m, 5).unwrap().pass);
    }

    #[test]
    fn semiseparable_bounds() {
        let mut rng = RngState::new(23);
        let m1 = &ss_materialize(&ScanCoeffs::random(10, 1, 1, &mut rng)).per_head[0];
        assert!(check_semisep_rank(m1, 1).unwrap().pass);
        let m3 = &ss_materialize(&ScanCoeffs::random(24, 1, 3, &mut rng)).per_head[0];
        assert!(check_semisep_rank(m3, 3).unwrap().pass);
        assert!(!check_semisep_rank(m3, 2).unwrap().pass);
        let id = Tensor::identity(6);
        let r = check_semisep_rank(&id, 1).unwrap();
        assert!(r.pass);
        assert_eq!(r.checks[1].measured, 1.0);
    }

    #[test]
    fn upper_entries_fail_semiseparable_check() {
        let mut m = Tensor::identity(4);
        *m.at2_mut(0, 3) = 1.0;
        assert!(!check_semisep_rank(&m, 4).unwrap().pass);
    }
}
