//! Episodic walking environment: wraps the simulator, the trajectory
//! generator, and a low-level controller behind a reduced observation and a
//! three-dimensional task-space action.
//!
//! The low-level loop runs at 1 kHz; the planner acts every 30 ticks (~33 Hz).
//! Episodes are capped at 300 planner steps (9 s of simulated time).

use nalgebra::{DVector, Vector2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::alip::{alip_planner_step, AlipParams, AlipState, StepRecord};
use crate::gait::{GaitConfig, GaitGenerator, HLAction};
use crate::rigid_body::{
    angular_momentum, com_state, foot_point, standing_pose, step, FullState, Kinematics,
    RobotModel, RobotVariant, Side, StepOptions, TerrainSpec,
};
use crate::tracking::{
    fl_controller, idqp_controller, n_outputs, output_eval, ControllerKind, GainSet, QpWeights,
};

/// Low-level control period (s).
pub const LL_DT: f64 = 1e-3;
/// Low-level ticks per planner step.
pub const HL_TICKS: usize = 30;
/// Episode cap in planner steps (9 s of simulated time).
pub const MAX_HL_STEPS: usize = 300;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("invalid episode config: {0}")]
    InvalidConfig(String),
}

/// Reduced observation, a planar cut of the pendulum-inspired state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Base x relative to the stance contact (m).
    pub x: f64,
    /// Angular momentum about the stance contact (kg·m²/s).
    pub l_y: f64,
    /// Average-velocity tracking error (m/s).
    pub e_vx: f64,
    /// Commanded speed (m/s).
    pub v_x_d: f64,
    /// Terrain slope (rad).
    pub alpha: f64,
}

impl Observation {
    pub const DIM: usize = 5;

    pub fn to_array(self) -> [f64; 5] {
        [self.x, self.l_y, self.e_vx, self.v_x_d, self.alpha]
    }
}

/// Reward weights over (r_vx, r_vy, r_LCoM, r_a). The lateral term is
/// structurally 1 in the planar build and carries weight zero.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardWeights(pub [f64; 4]);

impl RewardWeights {
    pub const PLANAR: RewardWeights = RewardWeights([0.6, 0.0, 0.2, 0.2]);

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Weighted product-of-exponentials reward. `l_com` is the angular momentum
/// about the center of mass scaled to velocity units (divided by mH), and the
/// action-rate term is taken on normalized actions so the penalty is
/// scale-free.
pub fn reward(
    v_bar: f64,
    v_des: f64,
    l_com: f64,
    prev_action: [f64; 3],
    action: [f64; 3],
    weights: &RewardWeights,
) -> (f64, [f64; 4]) {
    let e_v = v_bar - v_des;
    let da: f64 = prev_action
        .iter()
        .zip(action.iter())
        .map(|(p, a)| (a - p) * (a - p))
        .sum();
    let terms = [
        (-e_v * e_v).exp(),
        1.0,
        (-l_com * l_com).exp(),
        (-da).exp(),
    ];
    let total = weights
        .0
        .iter()
        .zip(terms.iter())
        .map(|(w, r)| w * r)
        .sum();
    (total, terms)
}

/// A horizontal base push over a time window.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Disturbance {
    pub t_start: f64,
    pub duration: f64,
    pub f_x: f64,
}

/// Episode setup: commanded-speed profile, terrain, disturbances, and the
/// reset distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Piecewise-constant speed command: (start time s, v_x_d m/s). Ignored
    /// when `curriculum_velocity` is set.
    pub v_profile: Vec<(f64, f64)>,
    /// Terrain slope (rad). Ignored when `curriculum_slope` is set.
    pub alpha: f64,
    pub disturbances: Vec<Disturbance>,
    pub max_hl_steps: usize,
    pub seed: u64,
    /// Standard deviations of the reset noise on q (rad/m) and q̇.
    pub noise_q: f64,
    pub noise_qd: f64,
    /// Resample v_x_d from [-1, 1] m/s (extremes-biased) every 2 s.
    pub curriculum_velocity: bool,
    /// Sample the slope uniformly from [-5°, 10°] each episode.
    pub curriculum_slope: bool,
}

impl EpisodeConfig {
    /// Constant-speed evaluation episode on flat ground.
    pub fn constant_speed(v: f64, seed: u64) -> EpisodeConfig {
        EpisodeConfig {
            v_profile: vec![(0.0, v)],
            alpha: 0.0,
            disturbances: Vec::new(),
            max_hl_steps: MAX_HL_STEPS,
            seed,
            noise_q: 0.03,
            noise_qd: 0.05,
            curriculum_velocity: false,
            curriculum_slope: false,
        }
    }

    /// Training episode: random speed schedule and slope curriculum.
    pub fn training(seed: u64) -> EpisodeConfig {
        EpisodeConfig {
            curriculum_velocity: true,
            curriculum_slope: true,
            ..EpisodeConfig::constant_speed(0.0, seed)
        }
    }

    fn validate(&self) -> Result<(), EnvError> {
        if self.alpha.abs() > 0.35 {
            return Err(EnvError::InvalidConfig(format!(
                "slope {} rad out of range",
                self.alpha
            )));
        }
        for d in &self.disturbances {
            if d.f_x.abs() > 80.0 {
                return Err(EnvError::InvalidConfig(format!(
                    "disturbance {} N out of range",
                    d.f_x
                )));
            }
            if d.duration < 0.0 || d.t_start < 0.0 {
                return Err(EnvError::InvalidConfig("negative disturbance time".into()));
            }
        }
        if self.max_hl_steps == 0 || self.max_hl_steps > MAX_HL_STEPS {
            return Err(EnvError::InvalidConfig(format!(
                "max_hl_steps {} out of range",
                self.max_hl_steps
            )));
        }
        if self.v_profile.is_empty() && !self.curriculum_velocity {
            return Err(EnvError::InvalidConfig("empty speed profile".into()));
        }
        Ok(())
    }
}

/// Why an episode ended early.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FallCause {
    /// |q_φ| reached 1 rad.
    Pitch,
    /// Base dropped below 0.5 m above the local terrain.
    Height,
    /// The simulator or controller failed (singularity, infeasible impact).
    Dynamics,
}

/// Per-step diagnostics for logging and analysis.
#[derive(Debug, Clone, Copy)]
pub struct Diagnostics {
    pub t: f64,
    pub v_bar: f64,
    pub v_des: f64,
    /// Scaled angular momentum about the CoM (velocity units).
    pub l_com: f64,
    /// Angular momentum about the stance contact.
    pub l_y: f64,
    pub q_phi: f64,
    /// Base height above the local terrain.
    pub h: f64,
    pub reward_terms: [f64; 4],
    /// Physical action applied this step.
    pub action: HLAction,
    pub fall: Option<FallCause>,
}

/// Result of one planner step.
#[derive(Debug, Clone, Copy)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    /// Episode hit the step cap without falling.
    pub truncated: bool,
    pub diagnostics: Diagnostics,
}

/// Nominal base height for a robot variant, with enough leg-length margin to
/// swing.
pub fn nominal_height(model: &RobotModel) -> f64 {
    match model.variant {
        RobotVariant::Rabbit | RobotVariant::RabbitIdeal => 0.7,
        RobotVariant::Walker2d => 0.73,
    }
}

/// The walking MDP.
pub struct WalkEnv {
    pub model: RobotModel,
    pub controller: ControllerKind,
    pub gains: GainSet,
    pub qp_weights: QpWeights,
    pub reward_weights: RewardWeights,
    pub cfg: EpisodeConfig,
    pub gait_cfg: GaitConfig,
    pub alip: AlipParams,
    pub state: FullState,
    gen: GaitGenerator,
    terrain: TerrainSpec,
    rng: ChaCha8Rng,
    t: f64,
    hl_steps: usize,
    v_des: f64,
    next_resample: f64,
    prev_action: [f64; 3],
    current_action: HLAction,
    /// Per-tick base velocities since the last touchdown.
    step_ticks: Vec<f64>,
    /// Mean base velocity over the last completed step.
    last_step_mean: Option<f64>,
    /// Trailing per-tick velocities (0.4 s) used before the first touchdown.
    trailing: std::collections::VecDeque<f64>,
    /// Completed reduced-model step records for the prediction study.
    pub step_records: Vec<StepRecord>,
    pending_record: Option<AlipState>,
    done: bool,
    /// Description of the most recent dynamics/controller failure.
    pub last_error: Option<String>,
}

impl WalkEnv {
    pub fn new(
        model: RobotModel,
        controller: ControllerKind,
        gains: GainSet,
        cfg: EpisodeConfig,
    ) -> Result<WalkEnv, EnvError> {
        cfg.validate()?;
        let h0 = nominal_height(&model);
        let gait_cfg = GaitConfig::nominal(h0);
        // pendulum height = CoM height in the nominal standing pose
        let q_stand = standing_pose(&model, h0);
        let kin = Kinematics::compute(&model, &q_stand, &DVector::zeros(model.dof()));
        let (com, _) = com_state(&model, &kin);
        // the reduced model's step duration is the time the nominal swing
        // profile actually reaches the ground, not the trajectory horizon
        let t_td = crate::gait::nominal_touchdown_time(&gait_cfg);
        let alip = AlipParams::new(model.total_mass(), com.y, t_td);
        let ny = n_outputs(&model);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut env = WalkEnv {
            qp_weights: QpWeights::nominal(ny),
            reward_weights: RewardWeights::PLANAR,
            gait_cfg,
            alip,
            state: FullState {
                q: DVector::zeros(model.dof()),
                qd: DVector::zeros(model.dof()),
                stance: Side::Right,
                t_step: 0.0,
                contact_point: Vector2::zeros(),
            },
            gen: GaitGenerator::new(gait_cfg, ny, 0.0, Vector2::zeros(), 0.0, h0),
            terrain: TerrainSpec { alpha: cfg.alpha },
            rng,
            t: 0.0,
            hl_steps: 0,
            v_des: 0.0,
            next_resample: 2.0,
            prev_action: [0.0; 3],
            current_action: HLAction::ZERO,
            step_ticks: Vec::new(),
            last_step_mean: None,
            trailing: std::collections::VecDeque::with_capacity(400),
            step_records: Vec::new(),
            pending_record: None,
            done: false,
            last_error: None,
            model,
            controller,
            gains,
            cfg,
        };
        env.reset();
        Ok(env)
    }

    /// Start a new episode, sampling the initial state from a normal
    /// distribution about the standing pose.
    pub fn reset(&mut self) -> Observation {
        self.terrain = TerrainSpec {
            alpha: if self.cfg.curriculum_slope {
                self.rng.random_range(-(5f64.to_radians())..10f64.to_radians())
            } else {
                self.cfg.alpha
            },
        };
        self.t = 0.0;
        self.hl_steps = 0;
        self.next_resample = 2.0;
        self.v_des = if self.cfg.curriculum_velocity {
            sample_speed(&mut self.rng)
        } else {
            profile_value(&self.cfg.v_profile, 0.0)
        };
        self.prev_action = [0.0; 3];
        self.step_ticks.clear();
        self.last_step_mean = None;
        self.trailing.clear();
        self.step_records.clear();
        self.pending_record = None;
        self.done = false;

        let h0 = self.gait_cfg.h0;
        let nq = Normal::new(0.0, self.cfg.noise_q).unwrap();
        let nqd = Normal::new(0.0, self.cfg.noise_qd).unwrap();
        let nominal = standing_pose(&self.model, h0);

        // rejection loop: a bad velocity draw can make the stance projection
        // infeasible (contact would have to pull)
        for attempt in 0..16 {
            let scale = if attempt == 15 { 0.0 } else { 1.0 };
            let mut q = nominal.clone();
            let mut qd = DVector::zeros(self.model.dof());
            for i in 0..self.model.dof() {
                q[i] += scale * nq.sample(&mut self.rng);
                qd[i] = scale * nqd.sample(&mut self.rng);
            }
            // raise the base so the stance foot sits on the terrain surface
            let kin = Kinematics::compute(&self.model, &q, &qd);
            let (p_st, _, _) = foot_point(&self.model, &kin, Side::Right);
            q[1] += self.terrain.height(p_st.x) - p_st.y;

            // project velocities onto the stance constraint via the impact
            // map (stance label comes out as Right)
            let pre = FullState {
                q,
                qd,
                stance: Side::Left,
                t_step: 0.0,
                contact_point: Vector2::zeros(),
            };
            match crate::rigid_body::impact_reset(&self.model, &pre) {
                Ok(projected) => {
                    self.state = projected;
                    break;
                }
                Err(_) if attempt < 15 => continue,
                Err(_) => {
                    self.state = pre;
                    break;
                }
            }
        }

        let kin = self.state.kinematics(&self.model);
        let (p_sw, _, _) = foot_point(&self.model, &kin, self.state.swing());
        self.gen = GaitGenerator::new(
            self.gait_cfg,
            n_outputs(&self.model),
            self.terrain.alpha,
            self.swing_output_coords(p_sw),
            self.state.q[2],
            self.state.q[1] - self.terrain.alpha.tan() * self.state.q[0],
        );
        self.pending_record = Some(self.alip_state(&kin));
        self.observe(&kin)
    }

    /// Swing-foot position in output coordinates (relative to the base and
    /// the terrain under the base).
    fn swing_output_coords(&self, p_sw: Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            p_sw.x - self.state.q[0],
            p_sw.y - self.terrain.alpha.tan() * self.state.q[0],
        )
    }

    /// Reduced pendulum state at the current instant: CoM position relative
    /// to the stance contact and angular momentum about the contact.
    pub fn alip_state(&self, kin: &Kinematics) -> AlipState {
        let (com, _) = com_state(&self.model, kin);
        AlipState {
            p: com.x - self.state.contact_point.x,
            l: angular_momentum(&self.model, kin, self.state.contact_point),
        }
    }

    /// The model-based baseline action: dead-beat foot placement from the
    /// reduced state, level torso, nominal height. The planner works in CoM
    /// coordinates; the action is translated to the base-relative frame the
    /// gait generator expects.
    pub fn baseline_action(&self) -> HLAction {
        let kin = self.state.kinematics(&self.model);
        // The dead-beat placement targets the momentum at the *end* of the
        // next step, but the tracked quantity is the average velocity over a
        // step. In the reduced model the two differ by a fixed gain,
        // v̄ = 2(cosh(ℓT)−1)/(ℓT sinh(ℓT)) · v_end; invert that here and add
        // a small proportional correction on the measured average.
        let lt = self.alip.ell() * self.alip.t_step;
        let gain = lt * lt.sinh() / (2.0 * (lt.cosh() - 1.0));
        let v_cmd = self.v_des * gain + 1.0 * (self.v_des - self.average_velocity());
        let p_sw_com = alip_planner_step(
            self.alip_state(&kin),
            self.state.t_step,
            v_cmd,
            &self.alip,
            crate::gait::ACTION_BOUNDS[0],
        );
        let (com, _) = com_state(&self.model, &kin);
        HLAction {
            p_sw_x: p_sw_com + com.x - self.state.q[0],
            q_phi: 0.0,
            h_d: 0.0,
        }
    }

    pub fn terrain(&self) -> TerrainSpec {
        self.terrain
    }

    pub fn v_des(&self) -> f64 {
        self.v_des
    }

    pub fn episode_done(&self) -> bool {
        self.done
    }

    pub fn observation_dim(&self) -> usize {
        Observation::DIM
    }

    /// Advance one planner step: 30 low-level ticks of tracking control.
    /// The action is in normalized units in [-1, 1]³.
    pub fn hl_step(&mut self, action_norm: [f64; 3]) -> StepResult {
        let action = HLAction::from_normalized(action_norm);
        let mut fall: Option<FallCause> = None;

        self.current_action = action;
        self.gen.set_action(action, self.state.t_step);
        for _ in 0..HL_TICKS {
            if let Err(e) = self.ll_tick() {
                self.last_error = Some(e);
                fall = Some(FallCause::Dynamics);
                break;
            }
            if self.state.q[2].abs() >= 1.0 {
                fall = Some(FallCause::Pitch);
                break;
            }
            let h = self.state.q[1] - self.terrain.height(self.state.q[0]);
            if h <= 0.5 {
                fall = Some(FallCause::Height);
                break;
            }
        }

        let kin = self.state.kinematics(&self.model);
        let v_bar = self.average_velocity();
        let (com, _) = com_state(&self.model, &kin);
        let l_com = angular_momentum(&self.model, &kin, com) / (self.alip.m * self.alip.h);
        let norm = action.to_normalized();
        let (r, terms) = reward(
            v_bar,
            self.v_des,
            l_com,
            self.prev_action,
            norm,
            &self.reward_weights,
        );
        self.prev_action = norm;

        self.hl_steps += 1;
        let terminated = fall.is_some();
        let truncated = !terminated && self.hl_steps >= self.cfg.max_hl_steps;
        self.done = terminated || truncated;

        // speed schedule
        if self.t >= self.next_resample {
            self.next_resample += 2.0;
            if self.cfg.curriculum_velocity {
                self.v_des = sample_speed(&mut self.rng);
            }
        }
        if !self.cfg.curriculum_velocity {
            self.v_des = profile_value(&self.cfg.v_profile, self.t);
        }

        let observation = self.observe(&kin);
        StepResult {
            observation,
            reward: r,
            terminated,
            truncated,
            diagnostics: Diagnostics {
                t: self.t,
                v_bar,
                v_des: self.v_des,
                l_com,
                l_y: observation.l_y,
                q_phi: self.state.q[2],
                h: self.state.q[1] - self.terrain.height(self.state.q[0]),
                reward_terms: terms,
                action,
                fall,
            },
        }
    }

    /// One 1 kHz tick: evaluate outputs, run the controller, integrate.
    fn ll_tick(&mut self) -> Result<(), String> {
        let kin = self.state.kinematics(&self.model);
        let outputs = output_eval(&self.model, &kin, &self.state, self.terrain.alpha);
        let desired = self.gen.eval(self.state.t_step);

        let u = match self.controller {
            ControllerKind::Fl => fl_controller(
                &self.model,
                &kin,
                &self.state,
                &outputs,
                &desired,
                &self.gains,
            ),
            ControllerKind::Idqp => idqp_controller(
                &self.model,
                &kin,
                &self.state,
                &outputs,
                &desired,
                &self.gains,
                &self.qp_weights,
            ),
        }
        .map_err(|e| e.to_string())?;

        let disturbance = self
            .cfg
            .disturbances
            .iter()
            .find(|d| self.t >= d.t_start && self.t < d.t_start + d.duration)
            .map(|d| Vector2::new(d.f_x, 0.0));
        let opts = StepOptions {
            dt: LL_DT,
            terrain: self.terrain,
            disturbance,
            min_step_time: 0.1,
        };
        let out = step(&self.model, &self.state, &u, &opts).map_err(|e| e.to_string())?;

        if out.touched_down {
            // close the reduced-model record with the momentum measured at
            // touchdown about the outgoing stance contact
            if let (Some(start), Some(pre)) = (self.pending_record.take(), &out.pre_impact) {
                let kin_pre = pre.kinematics(&self.model);
                let l_td = angular_momentum(&self.model, &kin_pre, pre.contact_point);
                self.step_records.push(StepRecord { start, l_touchdown: l_td });
            }
            self.last_step_mean = Some(mean(&self.step_ticks));
            self.step_ticks.clear();
        }

        self.state = out.state;
        self.t += LL_DT;
        self.step_ticks.push(self.state.qd[0]);
        if self.trailing.len() == 400 {
            self.trailing.pop_front();
        }
        self.trailing.push_back(self.state.qd[0]);

        if out.touched_down {
            let kin = self.state.kinematics(&self.model);
            let (p_sw, _, _) = foot_point(&self.model, &kin, self.state.swing());
            self.gen.on_touchdown(self.swing_output_coords(p_sw));
            // the fresh swing segment keeps tracking the current command
            self.gen.set_action(self.current_action, self.state.t_step);
            self.pending_record = Some(self.alip_state(&kin));
        }
        Ok(())
    }

    /// Mean base x-velocity over the most recent completed step, falling back
    /// to the trailing 0.4 s window before the first touchdown.
    pub fn average_velocity(&self) -> f64 {
        match self.last_step_mean {
            Some(v) => v,
            None => {
                let (a, b) = self.trailing.as_slices();
                if a.is_empty() && b.is_empty() {
                    self.state.qd[0]
                } else {
                    (a.iter().sum::<f64>() + b.iter().sum::<f64>())
                        / (a.len() + b.len()) as f64
                }
            }
        }
    }

    fn observe(&self, kin: &Kinematics) -> Observation {
        Observation {
            x: self.state.q[0] - self.state.contact_point.x,
            l_y: angular_momentum(&self.model, kin, self.state.contact_point),
            e_vx: self.average_velocity() - self.v_des,
            v_x_d: self.v_des,
            alpha: self.terrain.alpha,
        }
    }
}

/// Curriculum speed draw over [-1, 1] m/s with extra mass near the
/// extremes (sign-preserving square root of a uniform draw), so fast
/// forward and backward gaits are practiced as often as moderate ones.
fn sample_speed(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random_range(-1.0..1.0);
    u.signum() * u.abs().sqrt()
}

fn profile_value(profile: &[(f64, f64)], t: f64) -> f64 {
    let mut v = profile.first().map_or(0.0, |&(_, v)| v);
    for &(start, value) in profile {
        if t >= start {
            v = value;
        }
    }
    v
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}
