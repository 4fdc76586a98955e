//! Reduced pendulum model of walking: position of the base relative to the
//! stance contact paired with the angular momentum about that contact. The
//! dynamics are linear, so step-to-step prediction is closed form, and a
//! one-step dead-beat foot placement rule makes a serviceable model-based
//! walking controller.

use serde::{Deserialize, Serialize};

/// Reduced state: horizontal base offset from the stance contact and the
/// pitch angular momentum about the contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlipState {
    /// Base position relative to the stance contact (m).
    pub p: f64,
    /// Angular momentum about the stance contact (kg·m²/s).
    pub l: f64,
}

/// Pendulum parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AlipParams {
    /// Total robot mass (kg).
    pub m: f64,
    /// Constant pendulum height (m).
    pub h: f64,
    pub g: f64,
    /// Nominal step duration (s).
    pub t_step: f64,
}

impl AlipParams {
    pub fn new(m: f64, h: f64, t_step: f64) -> AlipParams {
        AlipParams { m, h, g: 9.81, t_step }
    }

    /// Natural frequency sqrt(g/H).
    pub fn ell(&self) -> f64 {
        (self.g / self.h).sqrt()
    }
}

/// Continuous dynamics: ṗ = L/(mH), L̇ = mgp.
pub fn alip_derivative(s: AlipState, params: &AlipParams) -> (f64, f64) {
    (s.l / (params.m * params.h), params.m * params.g * s.p)
}

/// Closed-form flow of the pendulum dynamics over time `t`.
pub fn alip_flow(s0: AlipState, t: f64, params: &AlipParams) -> AlipState {
    let ell = params.ell();
    let mh = params.m * params.h;
    let (sh, ch) = ((ell * t).sinh(), (ell * t).cosh());
    AlipState {
        p: s0.p * ch + s0.l * sh / (mh * ell),
        l: mh * ell * s0.p * sh + s0.l * ch,
    }
}

/// Orbital energy L²/(2m²H²) − (g/2H)p², conserved along any flow.
pub fn orbital_energy(s: AlipState, params: &AlipParams) -> f64 {
    let mh = params.m * params.h;
    s.l * s.l / (2.0 * mh * mh) - params.g / (2.0 * params.h) * s.p * s.p
}

/// One-step dead-beat foot placement: predict the momentum at the end of the
/// current step, then place the swing foot so the *next* step's closed-form
/// flow ends at the momentum matching `v_des`.
///
/// The returned value is the landing position of the swing foot relative to
/// the base, clamped to `max_offset`. After touchdown the base sits at
/// `-p_sw` relative to the new contact, which is where the sign comes from.
pub fn alip_planner_step(
    current: AlipState,
    t_step: f64,
    v_des: f64,
    params: &AlipParams,
    max_offset: f64,
) -> f64 {
    let remaining = (params.t_step - t_step).max(0.0);
    let end = alip_flow(current, remaining, params);
    let ell = params.ell();
    let mh = params.m * params.h;
    let l_des = mh * v_des;
    let (sh, ch) = ((ell * params.t_step).sinh(), (ell * params.t_step).cosh());
    let p_sw = (ch * end.l - l_des) / (mh * ell * sh);
    p_sw.clamp(-max_offset, max_offset)
}

/// One recorded walking step: the reduced state observed at step start and
/// the angular momentum actually measured at touchdown.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub start: AlipState,
    pub l_touchdown: f64,
}

/// Per-step prediction vs. reality, both scaled by 1/(mH) (units m/s).
#[derive(Debug, Clone, Copy)]
pub struct StepPrediction {
    pub step_index: usize,
    pub predicted: f64,
    pub actual: f64,
}

impl StepPrediction {
    pub fn error(&self) -> f64 {
        (self.predicted - self.actual).abs()
    }
}

#[derive(Debug, thiserror::Error)]
#[error("empty rollout log")]
pub struct EmptyLog;

/// Compare the closed-form end-of-step momentum prediction made at each step
/// start against the measured momentum at touchdown.
pub fn prediction_error_study(
    records: &[StepRecord],
    params: &AlipParams,
) -> Result<Vec<StepPrediction>, EmptyLog> {
    if records.is_empty() {
        return Err(EmptyLog);
    }
    let mh = params.m * params.h;
    Ok(records
        .iter()
        .enumerate()
        .map(|(i, r)| StepPrediction {
            step_index: i,
            predicted: alip_flow(r.start, params.t_step, params).l / mh,
            actual: r.l_touchdown / mh,
        })
        .collect())
}
