//! Low-level task-space controllers: feedback linearization and an
//! inverse-dynamics QP, interchangeable behind the same interface. Both drive
//! the output error y = y^a − y^d(τ) to zero through the stance-constrained
//! dynamics.

mod qp;

pub use qp::{qp_solve, QpError, QpSolution};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::gait::DesiredOutputs;
use crate::rigid_body::{
    bias_forces_with_kin, contact_jacobian, mass_matrix_with_kin, FullState, Kinematics,
    RobotModel,
};

#[derive(Debug, thiserror::Error)]
pub enum TrackingError {
    #[error("decoupling matrix is singular (condition number {cond:.2e})")]
    DecouplingSingular { cond: f64 },
    #[error("inverse-dynamics QP infeasible")]
    QpInfeasible,
    #[error("numerical failure in controller: {0}")]
    Numerical(String),
}

/// Controller selection for runs and configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Fl,
    Idqp,
}

impl ControllerKind {
    pub fn parse(s: &str) -> Option<ControllerKind> {
        match s {
            "fl" => Some(ControllerKind::Fl),
            "idqp" => Some(ControllerKind::Idqp),
            _ => None,
        }
    }
}

/// Diagonal PD gains on the outputs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GainSet {
    pub kp: f64,
    pub kd: f64,
}

impl GainSet {
    pub const NOMINAL: GainSet = GainSet { kp: 400.0, kd: 40.0 };
    pub const HIGH_GAIN: GainSet = GainSet { kp: 2500.0, kd: 100.0 };

    pub fn parse(s: &str) -> Option<GainSet> {
        match s {
            "nominal" => Some(GainSet::NOMINAL),
            "high" | "high_gain" => Some(GainSet::HIGH_GAIN),
            _ => None,
        }
    }
}

/// Task weights and constraint toggles for the inverse-dynamics QP.
#[derive(Debug, Clone)]
pub struct QpWeights {
    /// Per-output task weight.
    pub task: DVector<f64>,
    /// Torque regularization weight.
    pub torque_reg: f64,
    /// Require vertical contact force components to be non-negative.
    pub unilateral: bool,
}

impl QpWeights {
    pub fn nominal(n_outputs: usize) -> QpWeights {
        QpWeights {
            task: DVector::from_element(n_outputs, 1.0),
            torque_reg: 1e-4,
            unilateral: true,
        }
    }
}

/// Actual outputs with their Jacobian and drift term J̇_y q̇.
#[derive(Debug, Clone)]
pub struct OutputBundle {
    pub y: DVector<f64>,
    pub ydot: DVector<f64>,
    pub jac: DMatrix<f64>,
    pub drift: DVector<f64>,
}

/// Number of task-space outputs for a robot: 4 for point feet, 5 with the
/// swing-foot pitch channel for flat feet.
pub fn n_outputs(model: &RobotModel) -> usize {
    if model.foot.is_flat() {
        5
    } else {
        4
    }
}

/// Evaluate the actual outputs `[torso pitch, base height, swing x, swing z,
/// (swing foot pitch)]` with analytic Jacobians.
///
/// Base height and swing z are measured above the terrain surface under the
/// base, swing x relative to the base, so the whole bundle is slope-aware.
pub fn output_eval(
    model: &RobotModel,
    kin: &Kinematics,
    state: &FullState,
    alpha: f64,
) -> OutputBundle {
    let n = model.dof();
    let ny = n_outputs(model);
    let tan_a = alpha.tan();

    let mut y = DVector::zeros(ny);
    let mut jac = DMatrix::zeros(ny, n);
    let mut drift = DVector::zeros(ny);

    // torso pitch: a coordinate
    y[0] = state.q[2];
    jac[(0, 2)] = 1.0;

    // base height above the terrain
    y[1] = state.q[1] - tan_a * state.q[0];
    jac[(1, 1)] = 1.0;
    jac[(1, 0)] = -tan_a;

    // swing foot, relative to base (x) and terrain under the base (z)
    let swing_link = model.foot_link(state.swing());
    let offset = model.foot.contact_offset();
    let (p_sw, _, a0_sw) = kin.point_state(swing_link, offset);
    let j_sw = kin.point_jacobian(n, swing_link, p_sw);

    y[2] = p_sw.x - state.q[0];
    for c in 0..n {
        jac[(2, c)] = j_sw[(0, c)];
    }
    jac[(2, 0)] -= 1.0;
    drift[2] = a0_sw.x;

    y[3] = p_sw.y - tan_a * state.q[0];
    for c in 0..n {
        jac[(3, c)] = j_sw[(1, c)];
    }
    jac[(3, 0)] -= tan_a;
    drift[3] = a0_sw.y;

    if ny > 4 {
        let jw = kin.angle_jacobian(n, swing_link);
        y[4] = kin.links[swing_link].theta;
        for c in 0..n {
            jac[(4, c)] = jw[c];
        }
    }

    let ydot = &jac * &state.qd;
    OutputBundle { y, ydot, jac, drift }
}

/// PD law shared by both controllers: ÿ_cmd = ÿ_d − Kp(y−y_d) − Kd(ẏ−ẏ_d).
pub fn commanded_accel(
    outputs: &OutputBundle,
    desired: &DesiredOutputs,
    gains: &GainSet,
) -> DVector<f64> {
    let e = &outputs.y - &desired.y;
    let ed = &outputs.ydot - &desired.yd;
    &desired.ydd - gains.kp * e - gains.kd * ed
}

/// The stance-constrained dynamics written as q̈ = P u + c.
struct AffineDynamics {
    p: DMatrix<f64>,
    c: DVector<f64>,
}

fn affine_dynamics(
    model: &RobotModel,
    kin: &Kinematics,
    state: &FullState,
) -> Result<AffineDynamics, TrackingError> {
    let n = model.dof();
    let contact = contact_jacobian(model, kin, state.stance);
    let nc = contact.rows();
    let mass = mass_matrix_with_kin(model, kin);
    let bias = bias_forces_with_kin(model, kin);

    let mut kkt = DMatrix::zeros(n + nc, n + nc);
    kkt.view_mut((0, 0), (n, n)).copy_from(&mass);
    kkt.view_mut((0, n), (n, nc)).copy_from(&(-contact.jac.transpose()));
    kkt.view_mut((n, 0), (nc, n)).copy_from(&contact.jac);

    let m_act = model.n_actuators();
    let mut rhs = DMatrix::zeros(n + nc, m_act + 1);
    let b = model.actuation_matrix();
    rhs.view_mut((0, 0), (n, m_act)).copy_from(&b);
    rhs.view_mut((0, m_act), (n, 1)).copy_from(&(-&bias));
    rhs.view_mut((n, m_act), (nc, 1)).copy_from(&(-&contact.drift));

    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| TrackingError::Numerical("singular contact KKT system".into()))?;

    Ok(AffineDynamics {
        p: sol.view((0, 0), (n, m_act)).into_owned(),
        c: sol.view((0, m_act), (n, 1)).column(0).into_owned(),
    })
}

/// Feedback linearization: invert the output-to-torque map through the
/// constrained dynamics so the closed loop realizes the PD error dynamics.
/// Wide decoupling matrices (more actuators than outputs) take the min-norm
/// torque. The result is clamped to the torque limits.
pub fn fl_controller(
    model: &RobotModel,
    kin: &Kinematics,
    state: &FullState,
    outputs: &OutputBundle,
    desired: &DesiredOutputs,
    gains: &GainSet,
) -> Result<DVector<f64>, TrackingError> {
    let dyn_ = affine_dynamics(model, kin, state)?;
    let decoupling = &outputs.jac * &dyn_.p;
    let rhs = commanded_accel(outputs, desired, gains)
        - &outputs.jac * &dyn_.c
        - &outputs.drift;

    let svd = decoupling.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let cond = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    if cond > 1e8 {
        return Err(TrackingError::DecouplingSingular { cond });
    }
    let u = svd
        .solve(&rhs, 0.0)
        .map_err(|e| TrackingError::Numerical(e.to_string()))?;
    Ok(model.clamp_torques(&u))
}

/// Inverse-dynamics QP over (q̈, u, λ): weighted task tracking plus torque
/// regularization subject to the dynamics, the contact constraint, torque
/// limits, and non-negative vertical contact force.
pub fn idqp_controller(
    model: &RobotModel,
    kin: &Kinematics,
    state: &FullState,
    outputs: &OutputBundle,
    desired: &DesiredOutputs,
    gains: &GainSet,
    weights: &QpWeights,
) -> Result<DVector<f64>, TrackingError> {
    let n = model.dof();
    let m_act = model.n_actuators();
    let contact = contact_jacobian(model, kin, state.stance);
    let nc = contact.rows();
    let nv = n + m_act + nc;

    let mass = mass_matrix_with_kin(model, kin);
    let bias = bias_forces_with_kin(model, kin);
    let ycmd = commanded_accel(outputs, desired, gains);

    let w = DMatrix::from_diagonal(&weights.task);
    let jw = outputs.jac.transpose() * &w;

    let mut h = DMatrix::zeros(nv, nv);
    h.view_mut((0, 0), (n, n)).copy_from(&(2.0 * &jw * &outputs.jac));
    for a in 0..m_act {
        h[(n + a, n + a)] = 2.0 * weights.torque_reg;
    }
    let mut f = DVector::zeros(nv);
    f.rows_mut(0, n)
        .copy_from(&(2.0 * &jw * (&outputs.drift - &ycmd)));

    let b = model.actuation_matrix();
    let mut a_eq = DMatrix::zeros(n + nc, nv);
    let mut b_eq = DVector::zeros(n + nc);
    a_eq.view_mut((0, 0), (n, n)).copy_from(&mass);
    a_eq.view_mut((0, n), (n, m_act)).copy_from(&(-&b));
    a_eq.view_mut((0, n + m_act), (n, nc))
        .copy_from(&(-contact.jac.transpose()));
    b_eq.rows_mut(0, n).copy_from(&(-&bias));
    a_eq.view_mut((n, 0), (nc, n)).copy_from(&contact.jac);
    b_eq.rows_mut(n, nc).copy_from(&(-&contact.drift));

    let mut lower = DVector::from_element(nv, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(nv, f64::INFINITY);
    for a in 0..m_act {
        lower[n + a] = -model.torque_limits[a];
        upper[n + a] = model.torque_limits[a];
    }
    if weights.unilateral {
        for &r in &contact.vertical_rows {
            lower[n + m_act + r] = 0.0;
        }
    }

    let x = match qp_solve(&h, &f, &a_eq, &b_eq, &lower, &upper) {
        Ok(sol) => sol.x,
        // cycling guard tripped: use the best feasible iterate
        Err(QpError::MaxIterations { best }) => *best,
        Err(QpError::Infeasible) => return Err(TrackingError::QpInfeasible),
        Err(QpError::Numerical(e)) => return Err(TrackingError::Numerical(e)),
    };
    Ok(x.rows(n, m_act).into_owned())
}
