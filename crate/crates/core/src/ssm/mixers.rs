use crate::error::Result;
use crate::mixer::{check_values, require_x, Family, MaterializedMixer, MatrixMixer, MixerConfig, MixerGrads, Mode};
use crate::rng::RngState;
use crate::tensor::Tensor;

use super::discretize::features_backward;
use super::{
    backward_ss_scan, discretize, discretize_features_backward, qs_apply, qs_materialize, ss_materialize, ss_scan,
    ss_scan_saved, QuasiParams, SsmHeadParams,
};

/// Quasiseparable mixer with projections from `x`; `qk_dim` is the state
/// width `N`. The diagonal `δ` replaces the additive residual.
#[derive(Clone, Debug)]
pub struct QuasiMixer {
    cfg: MixerConfig,
    pub params: QuasiParams,
}

impl QuasiMixer {
    pub fn new(mut cfg: MixerConfig, rng: &mut RngState) -> Self {
        cfg.data_dependent = true;
        let params = QuasiParams::new(cfg.in_channels, cfg.n_heads, cfg.qk_dim, rng);
        QuasiMixer { cfg, params }
    }
}

impl MatrixMixer for QuasiMixer {
    fn family(&self) -> Family {
        Family::Quasiseparable
    }

    fn mode(&self) -> Mode {
        Mode::Dd
    }

    fn config(&self) -> &MixerConfig {
        &self.cfg
    }

    fn materialize(&self, x: Option<&Tensor>) -> Result<MaterializedMixer> {
        qs_materialize(&self.params, require_x(self, x)?)
    }

    fn apply_seq(&self, v: &Tensor, x: Option<&Tensor>) -> Result<Tensor> {
        let x = require_x(self, x)?;
        check_values(self, v, x.rows())?;
        qs_apply(&self.params, x, v)
    }

    fn residual_weight(&self) -> f64 {
        0.0
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        self.params.named()
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        self.params.named_mut()
    }

    fn backward_seq(&self, v: &Tensor, x: Option<&Tensor>, dy: &Tensor) -> Result<MixerGrads> {
        let x = require_x(self, x)?;
        check_values(self, v, x.rows())?;
        let (dv, dx, params) = self.params.backward(x, v, dy)?;
        Ok(MixerGrads { dv, dx: Some(dx), params })
    }
}

/// Causal semiseparable mixer, one scan over the value stream.
#[derive(Clone, Debug)]
pub struct SemiMixer {
    cfg: MixerConfig,
    pub params: SsmHeadParams,
}

impl SemiMixer {
    pub fn new(mut cfg: MixerConfig, rng: &mut RngState) -> Self {
        cfg.data_dependent = true;
        let params = SsmHeadParams::new(cfg.in_channels, cfg.n_heads, cfg.qk_dim, rng);
        SemiMixer { cfg, params }
    }
}

impl MatrixMixer for SemiMixer {
    fn family(&self) -> Family {
        Family::Semiseparable
    }

    fn mode(&self) -> Mode {
        Mode::Dd
    }

    fn config(&self) -> &MixerConfig {
        &self.cfg
    }

    fn materialize(&self, x: Option<&Tensor>) -> Result<MaterializedMixer> {
        Ok(ss_materialize(&discretize(&self.params, require_x(self, x)?)?))
    }

    fn apply_seq(&self, v: &Tensor, x: Option<&Tensor>) -> Result<Tensor> {
        let x = require_x(self, x)?;
        check_values(self, v, x.rows())?;
        ss_scan(v, &discretize(&self.params, x)?)
    }

    fn residual_weight(&self) -> f64 {
        0.0
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        let p = &self.params;
        vec![
            ("a_log", &p.a_log),
            ("dt_weight", &p.dt_weight),
            ("dt_bias", &p.dt_bias),
            ("b_weight", &p.b_weight),
            ("c_weight", &p.c_weight),
        ]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let p = &mut self.params;
        vec![
            ("a_log", &mut p.a_log),
            ("dt_weight", &mut p.dt_weight),
            ("dt_bias", &mut p.dt_bias),
            ("b_weight", &mut p.b_weight),
            ("c_weight", &mut p.c_weight),
        ]
    }

    fn backward_seq(&self, v: &Tensor, x: Option<&Tensor>, dy: &Tensor) -> Result<MixerGrads> {
        let x = require_x(self, x)?;
        check_values(self, v, x.rows())?;
        let p = &self.params;
        let (dt, b, _) = p.features(x)?;
        let saved = ss_scan_saved(v, &discretize(p, x)?)?;
        let g = backward_ss_scan(&saved, dy)?;
        let dg = discretize_features_backward(&dt, &p.dt_bias, &p.a_log, &b, &g.d)?;
        let (dx, dw_dt, dw_b, dw_c) = features_backward(p, x, &dg)?;
        Ok(MixerGrads {
            dv: g.dxv,
            dx: Some(dx),
            params: vec![dg.a_log, dw_dt, dg.dt_bias, dw_b, dw_c],
        })
    }
}
