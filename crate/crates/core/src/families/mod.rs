//! The non-recurrent mixer families: dense, Toeplitz, Vandermonde (with the
//! DFT special case), Cauchy, low-rank and softmax attention. Each has a
//! materializer and its own apply path; the recurrent families live in
//! [`crate::ssm`].

mod attention;
mod cauchy;
mod dense;
mod lowrank;
mod toeplitz;
mod vandermonde;

pub use attention::AttentionMixer;
pub use cauchy::{CauchyForm, CauchyMixer, CAUCHY_TOL};
pub use dense::DenseMixer;
pub use lowrank::{FeatureMap, LowRankMixer};
pub use toeplitz::ToeplitzMixer;
pub use vandermonde::{VandermondeMixer, VANDERMONDE_EPS};

use crate::error::{MixerError, Result};
use crate::linalg::{numerical_rank, DEFAULT_RANK_TOL};
use crate::mixer::{Family, MaterializedMixer, MixerConfig, MixerSpec, Mode};
use crate::report::{CheckRecord, VerificationReport};
use crate::rng::RngState;
use crate::ssm::{QuasiMixer, SemiMixer};
use crate::tensor::{matmul, Tensor};

/// Builds a randomly initialized mixer of the given family and mode.
///
/// Initializers follow the ablation reference constructions; where those
/// start from a degenerate constant (Vandermonde DI biases are zeros) use
/// [`VandermondeMixer::randomize`] for a generic instance.
pub fn build_mixer(family: Family, mode: Mode, cfg: &MixerConfig, rng: &mut RngState) -> Result<MixerSpec> {
    cfg.validate()?;
    if !family.modes().contains(&mode) {
        return Err(MixerError::Unsupported {
            family: family.to_string(),
            what: format!("mode {mode}"),
        });
    }
    let mut cfg = cfg.clone();
    cfg.data_dependent = mode == Mode::Dd;
    Ok(match family {
        Family::Dense => Box::new(DenseMixer::new(cfg, rng)),
        Family::Toeplitz => Box::new(ToeplitzMixer::new(cfg, rng)),
        Family::Vandermonde => Box::new(VandermondeMixer::new(cfg, mode, rng)),
        Family::Cauchy => Box::new(CauchyMixer::new(cfg, rng)),
        Family::LowRank => Box::new(LowRankMixer::new(cfg, FeatureMap::Identity, rng)),
        Family::Attention => Box::new(AttentionMixer::new(cfg, rng)),
        Family::Quasiseparable => Box::new(QuasiMixer::new(cfg, rng)),
        Family::Semiseparable => Box::new(SemiMixer::new(cfg, rng)),
    })
}

/// [`build_mixer`] followed by Gaussian Vandermonde DI biases, so every
/// variant is a generic member of its class.
pub fn build_generic_mixer(family: Family, mode: Mode, cfg: &MixerConfig, rng: &mut RngState) -> Result<MixerSpec> {
    if family == Family::Vandermonde && mode == Mode::Di {
        cfg.validate()?;
        let mut cfg = cfg.clone();
        cfg.data_dependent = false;
        let mut m = VandermondeMixer::new(cfg, mode, rng);
        m.randomize(0.3, rng);
        return Ok(Box::new(m));
    }
    build_mixer(family, mode, cfg, rng)
}

/// Numerical rank of each head's full matrix against an upper bound.
pub fn family_rank_report(m: &MaterializedMixer, expected_bound: usize) -> Result<VerificationReport> {
    let mut report = VerificationReport::new("family-rank");
    for (h, mh) in m.per_head.iter().enumerate() {
        let r = numerical_rank(mh, DEFAULT_RANK_TOL)?;
        report.push(CheckRecord::at_most(format!("head-{h}"), r as f64, expected_bound as f64).counting());
    }
    Ok(report)
}

pub(crate) fn project(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let y = matmul(x, w)?;
    y.ensure_finite("projection")?;
    Ok(y)
}

/// `(L, H, d)` storage viewed as `L × (H·d)` rows.
pub(crate) fn as_rows(t: &Tensor) -> Tensor {
    let l = t.shape()[0];
    let rest = t.len() / l.max(1);
    t.clone().reshape(&[l, rest]).expect("same element count")
}

pub(crate) fn check_fixed_len(name: &str, got: usize, fixed: usize) -> Result<()> {
    if got != fixed {
        return Err(MixerError::shape(
            "data-independent mixer",
            format!("{name} is tied to L = {fixed}, got {got}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixer::{apply_mixer, check_extendability, check_prefix_consistency, MatrixMixer};
    use crate::batch::SequenceBatch;
    use crate::tensor::rel_error;

    fn small_cfg(l: usize) -> MixerConfig {
        MixerConfig::new(l, 5, 2, 3, 2)
    }

    fn all_variants(l: usize, rng: &mut RngState) -> Vec<MixerSpec> {
        let mut out = Vec::new();
        for f in Family::ALL {
            for &mode in f.modes() {
                let mut m = build_mixer(f, mode, &small_cfg(l), rng).unwrap();
                randomize_all(&mut *m, rng);
                out.push(m);
            }
        }
        out
    }

    fn randomize_all(m: &mut dyn MatrixMixer, rng: &mut RngState) {
        if m.family() == Family::Vandermonde && m.mode() == Mode::Di {
            for (_, t) in m.params_mut() {
                *t = rng.normal_tensor(t.shape(), 0.3);
            }
        }
    }

    #[test]
    fn fast_apply_matches_materialization() {
        let mut rng = RngState::new(41);
        for l in [1usize, 4, 9, 16] {
            for m in all_variants(l, &mut rng) {
                let x = rng.normal_tensor(&[l, 5], 1.0);
                let v = rng.normal_tensor(&[l, 6], 1.0);
                let xo = m.is_data_dependent().then_some(&x);
                let fast = m.apply_seq(&v, xo).unwrap();
                let mat = m.materialize(xo).unwrap();
                let want = apply_mixer(&mat, &v).unwrap().add(&v.scale(m.residual_weight())).unwrap();
                let err = rel_error(&fast, &want);
                assert!(err <= 1e-10, "{} L={l}: {err}", m.name());
            }
        }
    }

    #[test]
    fn zero_values_give_zero_output() {
        let mut rng = RngState::new(42);
        for m in all_variants(6, &mut rng) {
            let x = rng.normal_tensor(&[6, 5], 1.0);
            let xo = m.is_data_dependent().then_some(&x);
            let y = m.apply_seq(&Tensor::zeros(&[6, 6]), xo).unwrap();
            assert_eq!(y.max_abs(), 0.0, "{}", m.name());
        }
    }

    #[test]
    fn data_dependent_variants_need_x() {
        let mut rng = RngState::new(43);
        for m in all_variants(4, &mut rng) {
            if m.is_data_dependent() {
                assert!(matches!(m.materialize(None), Err(MixerError::MissingInput(_))));
            }
        }
    }

    #[test]
    fn sam_properties_for_data_dependent_variants() {
        let mut rng = RngState::new(44);
        for m in all_variants(8, &mut rng) {
            let long = SequenceBatch::new(rng.normal_tensor(&[2, 16, 5], 1.0)).unwrap();
            let short = long.prefix(8);
            if m.is_data_dependent() {
                for i in 0..8 {
                    assert!(check_prefix_consistency(&*m, &short, i).unwrap().pass, "{} i={i}", m.name());
                }
                assert!(check_extendability(&*m, &short, &long).unwrap().pass, "{}", m.name());
            } else {
                assert!(matches!(check_extendability(&*m, &short, &long), Err(MixerError::Unsupported { .. })));
                assert!(matches!(check_prefix_consistency(&*m, &short, 0), Err(MixerError::Unsupported { .. })));
            }
        }
    }

    #[test]
    fn rank_report_examples() {
        let mut rng = RngState::new(45);
        let cfg = MixerConfig::new(12, 4, 1, 2, 1);
        let lr = build_mixer(Family::LowRank, Mode::Di, &cfg, &mut rng).unwrap();
        let r = family_rank_report(&lr.materialize(None).unwrap(), 1).unwrap();
        assert!(r.pass);
        assert_eq!(r.checks[0].measured, 1.0);

        let dense = build_mixer(Family::Dense, Mode::Di, &cfg, &mut rng).unwrap();
        let r = family_rank_report(&dense.materialize(None).unwrap(), 12).unwrap();
        assert_eq!(r.checks[0].measured, 12.0);

        // Row normalization lifts the rank-d logits to a higher-rank matrix.
        let cfg2 = MixerConfig::new(12, 4, 1, 2, 2);
        let att = build_mixer(Family::Attention, Mode::Di, &cfg2, &mut rng).unwrap();
        let r = family_rank_report(&att.materialize(None).unwrap(), 12).unwrap();
        assert!(r.checks[0].measured > 2.0);
    }

    #[test]
    fn unsupported_mode_rejected() {
        let mut rng = RngState::new(46);
        assert!(build_mixer(Family::Dense, Mode::Dd, &small_cfg(4), &mut rng).is_err());
        assert!(build_mixer(Family::Toeplitz, Mode::Dft, &small_cfg(4), &mut rng).is_err());
    }
}
