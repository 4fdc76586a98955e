//! Task-space trajectory generation: converts a high-level action (swing-foot
//! landing offset, torso pitch, height offset) into smooth desired outputs
//! with first and second derivatives.
//!
//! Output ordering is `[torso pitch, base height, swing x, swing z, (swing
//! foot pitch)]`; the last channel exists only for flat-foot robots. Swing x
//! is relative to the base; swing z and base height are relative to the
//! terrain surface under the base.

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

/// Offset below the landing target so the swing foot is guaranteed to make
/// contact.
pub const P_Z_OFFSET: f64 = 0.005;

/// Action bounds: |p_sw_x| ≤ 0.6 m, |q_phi| ≤ 0.5 rad, |h_d| ≤ 0.1 m.
pub const ACTION_BOUNDS: [f64; 3] = [0.6, 0.5, 0.1];

/// High-level task-space command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HLAction {
    /// Swing-foot landing x relative to the base (m).
    pub p_sw_x: f64,
    /// Absolute torso pitch target (rad).
    pub q_phi: f64,
    /// Offset on the nominal base height (m).
    pub h_d: f64,
}

impl HLAction {
    pub const ZERO: HLAction = HLAction { p_sw_x: 0.0, q_phi: 0.0, h_d: 0.0 };

    pub fn clamped(self) -> HLAction {
        HLAction {
            p_sw_x: self.p_sw_x.clamp(-ACTION_BOUNDS[0], ACTION_BOUNDS[0]),
            q_phi: self.q_phi.clamp(-ACTION_BOUNDS[1], ACTION_BOUNDS[1]),
            h_d: self.h_d.clamp(-ACTION_BOUNDS[2], ACTION_BOUNDS[2]),
        }
    }

    /// Map from normalized units in [-1, 1] to physical units.
    pub fn from_normalized(a: [f64; 3]) -> HLAction {
        HLAction {
            p_sw_x: a[0] * ACTION_BOUNDS[0],
            q_phi: a[1] * ACTION_BOUNDS[1],
            h_d: a[2] * ACTION_BOUNDS[2],
        }
        .clamped()
    }

    pub fn to_normalized(self) -> [f64; 3] {
        [
            self.p_sw_x / ACTION_BOUNDS[0],
            self.q_phi / ACTION_BOUNDS[1],
            self.h_d / ACTION_BOUNDS[2],
        ]
    }
}

/// Swing trajectory parameters for one step.
#[derive(Debug, Clone, Copy)]
pub struct SwingSpec {
    /// Swing-foot position at step start (output coordinates).
    pub p0: Vector2<f64>,
    /// Target landing position.
    pub pt: Vector2<f64>,
    /// Apex height of the vertical Bézier.
    pub z_clearance: f64,
    /// Step duration (s).
    pub t_step: f64,
}

/// Quintic blend s(τ) = 10τ³ − 15τ⁴ + 6τ⁵ from `p0` to `pt` with zero
/// velocity and acceleration at both ends. Derivatives are with respect to
/// the phase τ; divide by T and T² for time derivatives.
pub fn min_jerk(p0: f64, pt: f64, tau: f64) -> (f64, f64, f64) {
    let t = tau.clamp(0.0, 1.0);
    let t2 = t * t;
    let t3 = t2 * t;
    let s = 10.0 * t3 - 15.0 * t2 * t2 + 6.0 * t2 * t3;
    let ds = 30.0 * t2 - 60.0 * t3 + 30.0 * t2 * t2;
    let dds = 60.0 * t - 180.0 * t2 + 120.0 * t3;
    let d = pt - p0;
    (p0 + d * s, d * ds, d * dds)
}

/// Evaluate a 5th-order Bézier in Bernstein form; derivatives are with
/// respect to the phase τ.
pub fn bezier5(b: &[f64; 6], tau: f64) -> (f64, f64, f64) {
    let t = tau.clamp(0.0, 1.0);
    let pos = bernstein(b, t);
    let d1: Vec<f64> = (0..5).map(|i| 5.0 * (b[i + 1] - b[i])).collect();
    let d2: Vec<f64> = (0..4).map(|i| 4.0 * (d1[i + 1] - d1[i])).collect();
    (pos, bernstein(&d1, t), bernstein(&d2, t))
}

fn bernstein(b: &[f64], t: f64) -> f64 {
    // de Casteljau
    let mut c = b.to_vec();
    for level in (1..c.len()).rev() {
        for i in 0..level {
            c[i] = (1.0 - t) * c[i] + t * c[i + 1];
        }
    }
    c[0]
}

/// Vertical swing trajectory: repeated endpoints give zero end velocities,
/// the repeated middle pair shapes the apex at `z_clearance`.
pub fn bezier5_z(spec: &SwingSpec, tau: f64) -> (f64, f64, f64) {
    let b = [
        spec.p0.y,
        spec.p0.y,
        spec.z_clearance,
        spec.z_clearance,
        spec.pt.y,
        spec.pt.y,
    ];
    bezier5(&b, tau)
}

/// Landing height target: p_z = −h_d + p_x·tan(α) − p_z_off.
pub fn landing_height(h_d: f64, p_sw_x: f64, alpha: f64) -> f64 {
    -h_d + p_sw_x * alpha.tan() - P_Z_OFFSET
}

/// Desired outputs with derivatives at one instant.
#[derive(Debug, Clone)]
pub struct DesiredOutputs {
    pub y: DVector<f64>,
    pub yd: DVector<f64>,
    pub ydd: DVector<f64>,
    /// Step phase t_step/T clamped to [0, 1].
    pub tau: f64,
}

/// Gait generator configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GaitConfig {
    /// Nominal step duration (s).
    pub t_step: f64,
    /// Swing apex height (m).
    pub z_clearance: f64,
    /// Nominal base height above the terrain (m).
    pub h0: f64,
    /// Torso pitch slew limit between planner ticks (rad/s).
    pub pitch_slew: f64,
    /// Base height slew limit (m/s).
    pub height_slew: f64,
    /// Landing-height retarget slew limit (m/s).
    pub landing_slew: f64,
    /// Planner period (s); targets are refreshed at this rate.
    pub hl_dt: f64,
    /// Downward swing-foot speed at touchdown (m/s); a firm approach keeps
    /// the contact time predictable instead of grazing the surface.
    pub landing_speed: f64,
}

impl GaitConfig {
    pub fn nominal(h0: f64) -> GaitConfig {
        GaitConfig {
            t_step: 0.4,
            z_clearance: 0.12,
            h0,
            pitch_slew: 2.0,
            height_slew: 1.0,
            landing_slew: 1.0,
            hl_dt: 0.03,
            landing_speed: 0.4,
        }
    }
}

/// Quintic segment with full boundary conditions, used to re-blend the swing
/// x trajectory toward a retargeted landing point without discontinuity.
#[derive(Debug, Clone, Copy)]
struct Quintic {
    t0: f64,
    t1: f64,
    c: [f64; 6],
}

impl Quintic {
    fn fit(t0: f64, t1: f64, p0: f64, v0: f64, a0: f64, p1: f64, v1: f64, a1: f64) -> Quintic {
        let d = t1 - t0;
        let (d2, d3, d4, d5) = (d * d, d * d * d, d * d * d * d, d * d * d * d * d);
        // coefficients of p(s) = c0 + c1 s + ... + c5 s^5 with s = t - t0
        let c0 = p0;
        let c1 = v0;
        let c2 = a0 / 2.0;
        let r0 = p1 - (c0 + c1 * d + c2 * d2);
        let r1 = v1 - (c1 + 2.0 * c2 * d);
        let r2 = a1 - 2.0 * c2;
        let c3 = (20.0 * r0 - 8.0 * r1 * d + r2 * d2) / (2.0 * d3);
        let c4 = (-30.0 * r0 + 14.0 * r1 * d - 2.0 * r2 * d2) / (2.0 * d4);
        let c5 = (12.0 * r0 - 6.0 * r1 * d + r2 * d2) / (2.0 * d5);
        Quintic { t0, t1, c: [c0, c1, c2, c3, c4, c5] }
    }

    fn constant(value: f64, t0: f64, t1: f64) -> Quintic {
        Quintic { t0, t1, c: [value, 0.0, 0.0, 0.0, 0.0, 0.0] }
    }

    /// Evaluate position, velocity, acceleration; holds the endpoint beyond t1.
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let s = (t - self.t0).clamp(0.0, self.t1 - self.t0);
        let c = &self.c;
        let p = c[0] + s * (c[1] + s * (c[2] + s * (c[3] + s * (c[4] + s * c[5]))));
        if t > self.t1 {
            return (p, 0.0, 0.0);
        }
        let v = c[1] + s * (2.0 * c[2] + s * (3.0 * c[3] + s * (4.0 * c[4] + s * 5.0 * c[5])));
        let a = 2.0 * c[2] + s * (6.0 * c[3] + s * (12.0 * c[4] + s * 20.0 * c[5]));
        (p, v, a)
    }
}

/// Stateful trajectory generator: holds the current swing segment and the
/// slew-limited pitch/height targets, refreshed once per planner tick.
#[derive(Debug, Clone)]
pub struct GaitGenerator {
    pub cfg: GaitConfig,
    pub n_outputs: usize,
    alpha: f64,
    pitch_cmd: f64,
    height_cmd: f64,
    x_segment: Quintic,
    z_points: [f64; 6],
    landing_z: f64,
    p0: Vector2<f64>,
}

impl GaitGenerator {
    /// Create a generator at a touchdown event. `p_sw0` is the swing-foot
    /// position in output coordinates; `pitch0`/`height0` seed the
    /// slew-limited targets so the first tick starts from the current pose.
    pub fn new(cfg: GaitConfig, n_outputs: usize, alpha: f64, p_sw0: Vector2<f64>, pitch0: f64, height0: f64) -> GaitGenerator {
        let mut g = GaitGenerator {
            cfg,
            n_outputs,
            alpha,
            pitch_cmd: pitch0,
            height_cmd: height0,
            x_segment: Quintic::constant(p_sw0.x, 0.0, cfg.t_step),
            z_points: [p_sw0.y; 6],
            landing_z: p_sw0.y,
            p0: p_sw0,
        };
        g.z_points[2] = cfg.z_clearance;
        g.z_points[3] = cfg.z_clearance;
        g.z_points[4] = g.approach_point();
        g
    }

    /// Fifth control point for the vertical Bézier: offset above the landing
    /// point so the end velocity equals −landing_speed.
    fn approach_point(&self) -> f64 {
        self.landing_z + self.cfg.landing_speed * self.cfg.t_step / 5.0
    }

    /// Reset the swing segment at a touchdown event.
    pub fn on_touchdown(&mut self, p_sw0: Vector2<f64>) {
        self.p0 = p_sw0;
        self.x_segment = Quintic::constant(p_sw0.x, 0.0, self.cfg.t_step);
        self.z_points = [
            p_sw0.y,
            p_sw0.y,
            self.cfg.z_clearance,
            self.cfg.z_clearance,
            self.approach_point(),
            self.landing_z,
        ];
    }

    /// Apply a planner action at step time `t_step`: re-blend the swing x
    /// segment from the current desired point to the new landing target and
    /// slew the remaining targets toward the commanded values.
    pub fn set_action(&mut self, action: HLAction, t_step: f64) {
        let action = action.clamped();
        let cfg = self.cfg;

        let slew = |cur: f64, target: f64, rate: f64| {
            cur + (target - cur).clamp(-rate * cfg.hl_dt, rate * cfg.hl_dt)
        };
        self.pitch_cmd = slew(self.pitch_cmd, action.q_phi, cfg.pitch_slew);
        self.height_cmd = slew(self.height_cmd, cfg.h0 + action.h_d, cfg.height_slew);

        // swing x: quintic from the current desired state to the new target
        let (p, v, a) = self.x_segment.eval(t_step);
        let t1 = cfg.t_step.max(t_step + cfg.hl_dt);
        self.x_segment = Quintic::fit(t_step, t1, p, v, a, action.p_sw_x, 0.0, 0.0);

        // swing z: slew the Bézier landing endpoint toward the new target
        let z_target = landing_height(action.h_d, action.p_sw_x, self.alpha);
        self.landing_z = slew(self.landing_z, z_target, cfg.landing_slew);
        self.z_points[4] = self.approach_point();
        self.z_points[5] = self.landing_z;
    }

    /// Desired outputs and derivatives at step time `t_step`.
    pub fn eval(&self, t_step: f64) -> DesiredOutputs {
        let cfg = &self.cfg;
        let tau = (t_step / cfg.t_step).clamp(0.0, 1.0);

        let mut y = DVector::zeros(self.n_outputs);
        let mut yd = DVector::zeros(self.n_outputs);
        let mut ydd = DVector::zeros(self.n_outputs);

        y[0] = self.pitch_cmd;
        y[1] = self.height_cmd;

        let (px, vx, ax) = self.x_segment.eval(t_step);
        y[2] = px;
        yd[2] = vx;
        ydd[2] = ax;

        let (pz, vz, az) = bezier5(&self.z_points, tau);
        y[3] = pz;
        if tau < 1.0 {
            yd[3] = vz / cfg.t_step;
            ydd[3] = az / (cfg.t_step * cfg.t_step);
        }

        if self.n_outputs > 4 {
            // flat foot held parallel to the walking surface
            y[4] = self.alpha;
        }

        DesiredOutputs { y, yd, ydd, tau }
    }
}

/// Time at which the nominal swing profile (flat ground, zero action) crosses
/// the surface: the landing target sits slightly below ground, so touchdown
/// happens a little before the nominal step duration. Solved by bisection.
pub fn nominal_touchdown_time(cfg: &GaitConfig) -> f64 {
    let land = landing_height(0.0, 0.0, 0.0);
    let b = [
        0.0,
        0.0,
        cfg.z_clearance,
        cfg.z_clearance,
        land + cfg.landing_speed * cfg.t_step / 5.0,
        land,
    ];
    let (mut lo, mut hi) = (0.6, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if bezier5(&b, mid).0 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) * cfg.t_step
}

/// One-shot desired outputs for an action applied at step start, without
/// slew history: the trajectory a fresh step would follow.
pub fn desired_outputs(
    action: HLAction,
    spec: &SwingSpec,
    t_step: f64,
    h0: f64,
    alpha: f64,
    n_outputs: usize,
) -> DesiredOutputs {
    let action = action.clamped();
    let tau = (t_step / spec.t_step).clamp(0.0, 1.0);
    let mut y = DVector::zeros(n_outputs);
    let mut yd = DVector::zeros(n_outputs);
    let mut ydd = DVector::zeros(n_outputs);

    y[0] = action.q_phi;
    y[1] = h0 + action.h_d;

    let (px, vx, ax) = min_jerk(spec.p0.x, action.p_sw_x, tau);
    y[2] = px;
    yd[2] = vx / spec.t_step;
    ydd[2] = ax / (spec.t_step * spec.t_step);

    let z_spec = SwingSpec {
        pt: Vector2::new(action.p_sw_x, landing_height(action.h_d, action.p_sw_x, alpha)),
        ..*spec
    };
    let (pz, vz, az) = bezier5_z(&z_spec, tau);
    y[3] = pz;
    yd[3] = vz / spec.t_step;
    ydd[3] = az / (spec.t_step * spec.t_step);

    if n_outputs > 4 {
        y[4] = alpha;
    }

    DesiredOutputs { y, yd, ydd, tau }
}
