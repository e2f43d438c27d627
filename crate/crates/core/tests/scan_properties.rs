mod common;

use mixerkit::ssm::{qs_apply_coeffs, qs_materialize_coeffs, ss_materialize, ss_scan, QuasiCoeffs, ScanCoeffs};
use mixerkit::tensor::flip_seq;
use mixerkit::{RngState, Tensor};
use proptest::prelude::*;

use common::{apply_heads, qs_matrix, rel_err, ss_matrix};

fn dims() -> impl Strategy<Value = (usize, usize, usize, usize, u64)> {
    // (L, H, N, P, seed)
    (1usize..14, 1usize..4, 1usize..5, 1usize..4, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn semiseparable_matrix_matches_loop_definition((l, h, n, _p, seed) in dims()) {
        let co = ScanCoeffs::random(l, h, n, &mut RngState::new(seed));
        let m = ss_materialize(&co);
        for head in 0..h {
            prop_assert!(rel_err(&m.per_head[head], &ss_matrix(&co, head)) <= 1e-12);
        }
    }

    #[test]
    fn quasiseparable_matrix_and_apply_match_definition((l, h, n, p, seed) in dims()) {
        let mut rng = RngState::new(seed);
        let qc = QuasiCoeffs::random(l, h, n, &mut rng);
        let oracle: Vec<Tensor> = (0..h).map(|k| qs_matrix(&qc, k)).collect();
        let m = qs_materialize_coeffs(&qc);
        for k in 0..h {
            prop_assert!(rel_err(&m.per_head[k], &oracle[k]) <= 1e-12);
        }
        let v = rng.normal_tensor(&[l, h * p], 1.0);
        prop_assert!(rel_err(&qs_apply_coeffs(&qc, &v).unwrap(), &apply_heads(&oracle, &v, 0.0)) <= 1e-12);
    }

    #[test]
    fn scan_is_linear_in_values((l, h, n, p, seed) in dims(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = RngState::new(seed);
        let co = ScanCoeffs::random(l, h, n, &mut rng);
        let v1 = rng.normal_tensor(&[l, h * p], 1.0);
        let v2 = rng.normal_tensor(&[l, h * p], 1.0);
        let lhs = ss_scan(&v1.scale(a).add(&v2.scale(b)).unwrap(), &co).unwrap();
        let rhs = ss_scan(&v1, &co).unwrap().scale(a).add(&ss_scan(&v2, &co).unwrap().scale(b)).unwrap();
        prop_assert!(rel_err(&lhs, &rhs) <= 1e-12);
    }

    #[test]
    fn scan_output_ignores_later_values((l, h, n, p, seed) in dims(), frac in 0.0f64..1.0) {
        let mut rng = RngState::new(seed);
        let co = ScanCoeffs::random(l, h, n, &mut rng);
        let v = rng.normal_tensor(&[l, h * p], 1.0);
        let t = ((l as f64 * frac) as usize).min(l - 1);
        let mut w = v.clone();
        for c in 0..h * p {
            *w.at2_mut(t, c) += 10.0;
        }
        let (y, z) = (ss_scan(&v, &co).unwrap(), ss_scan(&w, &co).unwrap());
        for i in 0..t {
            prop_assert_eq!(y.row(i), z.row(i));
        }
    }

    /// Swapping the two directions and reversing the diagonal gives `J M J`.
    #[test]
    fn swapping_directions_reverses_the_matrix((l, h, n, _p, seed) in dims()) {
        let qc = QuasiCoeffs::random(l, h, n, &mut RngState::new(seed));
        let swapped = QuasiCoeffs::new(qc.bwd.clone(), qc.fwd.clone(), flip_seq(&qc.delta)).unwrap();
        let (m, s) = (qs_materialize_coeffs(&qc), qs_materialize_coeffs(&swapped));
        for k in 0..h {
            for i in 0..l {
                for j in 0..l {
                    prop_assert_eq!(s.per_head[k].at2(i, j), m.per_head[k].at2(l - 1 - i, l - 1 - j));
                }
            }
        }
    }
}
