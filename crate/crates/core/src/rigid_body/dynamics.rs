//! Constrained dynamics: mass matrix, bias forces, stance-contact KKT solve,
//! plastic impact reset, and the semi-implicit Euler step with touchdown
//! detection.

use nalgebra::{DMatrix, DVector, Vector2};

use super::kinematics::{foot_point, Kinematics};
use super::model::{FootGeometry, RobotModel, Side};
use super::RigidBodyError;

/// Swing-foot touchdown threshold above the terrain surface.
pub const CONTACT_THRESHOLD: f64 = 1e-4;

/// Relative pivot tolerance below which the contact KKT system is treated as
/// singular.
pub const SINGULARITY_TOL: f64 = 1e-10;

/// Full-order robot state plus contact/phase bookkeeping.
#[derive(Debug, Clone)]
pub struct FullState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub stance: Side,
    /// Time since the last touchdown.
    pub t_step: f64,
    /// World-frame stance contact point.
    pub contact_point: Vector2<f64>,
}

impl FullState {
    pub fn kinematics(&self, model: &RobotModel) -> Kinematics {
        Kinematics::compute(model, &self.q, &self.qd)
    }

    pub fn swing(&self) -> Side {
        self.stance.other()
    }
}

/// Planar terrain: a uniform slope through the origin.
#[derive(Debug, Clone, Copy)]
pub struct TerrainSpec {
    /// Slope angle in radians.
    pub alpha: f64,
}

impl TerrainSpec {
    pub fn flat() -> TerrainSpec {
        TerrainSpec { alpha: 0.0 }
    }

    pub fn height(&self, x: f64) -> f64 {
        self.alpha.tan() * x
    }

    /// Vertical clearance of a point above the surface.
    pub fn clearance(&self, p: Vector2<f64>) -> f64 {
        p.y - self.height(p.x)
    }

    /// Time derivative of the clearance for a point moving at `v`.
    pub fn clearance_rate(&self, v: Vector2<f64>) -> f64 {
        v.y - self.alpha.tan() * v.x
    }
}

/// Holonomic stance-contact constraint: rows of J, the drift J̇q̇, and which
/// rows carry vertical (unilateral) contact force.
#[derive(Debug, Clone)]
pub struct ContactJacobian {
    pub jac: DMatrix<f64>,
    pub drift: DVector<f64>,
    pub vertical_rows: Vec<usize>,
}

impl ContactJacobian {
    pub fn rows(&self) -> usize {
        self.jac.nrows()
    }
}

/// Constraint Jacobian of the stance foot. A point foot pins its contact
/// point; a flat foot pins the toe and the heel height, fixing the foot pose.
pub fn contact_jacobian(model: &RobotModel, kin: &Kinematics, stance: Side) -> ContactJacobian {
    let dof = model.dof();
    let link = model.foot_link(stance);
    match &model.foot {
        FootGeometry::Point { contact_offset } => {
            let (p, _, a0) = kin.point_state(link, *contact_offset);
            ContactJacobian {
                jac: kin.point_jacobian(dof, link, p),
                drift: DVector::from_vec(vec![a0.x, a0.y]),
                vertical_rows: vec![1],
            }
        }
        FootGeometry::Flat {
            toe_offset,
            heel_offset,
            ..
        } => {
            let (pt, _, at) = kin.point_state(link, *toe_offset);
            let (ph, _, ah) = kin.point_state(link, *heel_offset);
            let jt = kin.point_jacobian(dof, link, pt);
            let jh = kin.point_jacobian(dof, link, ph);
            let mut jac = DMatrix::zeros(3, dof);
            jac.row_mut(0).copy_from(&jt.row(0));
            jac.row_mut(1).copy_from(&jt.row(1));
            jac.row_mut(2).copy_from(&jh.row(1));
            ContactJacobian {
                jac,
                drift: DVector::from_vec(vec![at.x, at.y, ah.y]),
                vertical_rows: vec![1, 2],
            }
        }
    }
}

/// Generalized accelerations and stance constraint forces.
#[derive(Debug, Clone)]
pub struct ContactSolution {
    pub qdd: DVector<f64>,
    pub lambda: DVector<f64>,
}

/// Joint-space mass matrix M(q), symmetric positive definite.
pub fn mass_matrix(model: &RobotModel, q: &DVector<f64>) -> DMatrix<f64> {
    let kin = Kinematics::compute(model, q, &DVector::zeros(model.dof()));
    mass_matrix_with_kin(model, &kin)
}

pub fn mass_matrix_with_kin(model: &RobotModel, kin: &Kinematics) -> DMatrix<f64> {
    let n = model.dof();
    let mut m = DMatrix::zeros(n, n);
    for (i, link) in model.links.iter().enumerate() {
        let jv = kin.com_jacobian(n, i);
        let jw = kin.angle_jacobian(n, i);
        // m J'J accumulated column-by-column; J has only a few nonzero columns
        m.gemm_tr(link.mass, &jv, &jv, 1.0);
        for a in 0..n {
            if jw[a] == 0.0 {
                continue;
            }
            for b in 0..n {
                m[(a, b)] += link.inertia * jw[a] * jw[b];
            }
        }
    }
    m
}

/// Bias forces H(q, q̇) = C(q, q̇)q̇ + G(q); no joint friction modeled.
pub fn bias_forces(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
    let kin = Kinematics::compute(model, q, qd);
    bias_forces_with_kin(model, &kin)
}

pub fn bias_forces_with_kin(model: &RobotModel, kin: &Kinematics) -> DVector<f64> {
    let n = model.dof();
    let mut h = DVector::zeros(n);
    let g = Vector2::new(0.0, model.gravity);
    for (i, link) in model.links.iter().enumerate() {
        let jv = kin.com_jacobian(n, i);
        let f = link.mass * (kin.links[i].a0_com + g);
        // h += Jv' f  (angular part vanishes: link angular acceleration is
        // zero at q̈ = 0 in the plane)
        h.gemv_tr(1.0, &jv, &f, 1.0);
    }
    h
}

/// Solve the stance-constrained forward dynamics KKT system
/// `[M, -Jᵀ; J, 0] [q̈; λ] = [Bu - H + f_ext; -J̇q̇]`.
///
/// `u` is clamped to the torque limits. `ext_force` is an optional external
/// force applied at the base point.
pub fn contact_dynamics(
    model: &RobotModel,
    state: &FullState,
    u: &DVector<f64>,
    ext_force: Option<Vector2<f64>>,
) -> Result<ContactSolution, RigidBodyError> {
    let kin = state.kinematics(model);
    let contact = contact_jacobian(model, &kin, state.stance);
    contact_dynamics_with(model, &kin, &contact, u, ext_force)
}

pub fn contact_dynamics_with(
    model: &RobotModel,
    kin: &Kinematics,
    contact: &ContactJacobian,
    u: &DVector<f64>,
    ext_force: Option<Vector2<f64>>,
) -> Result<ContactSolution, RigidBodyError> {
    let n = model.dof();
    let nc = contact.rows();
    let m = mass_matrix_with_kin(model, kin);
    let h = bias_forces_with_kin(model, kin);

    let mut rhs = model.apply_torques(u) - h;
    if let Some(f) = ext_force {
        rhs[0] += f.x;
        rhs[1] += f.y;
    }

    let mut kkt = DMatrix::zeros(n + nc, n + nc);
    kkt.view_mut((0, 0), (n, n)).copy_from(&m);
    kkt.view_mut((0, n), (n, nc)).copy_from(&(-contact.jac.transpose()));
    kkt.view_mut((n, 0), (nc, n)).copy_from(&contact.jac);
    let mut full_rhs = DVector::zeros(n + nc);
    full_rhs.rows_mut(0, n).copy_from(&rhs);
    full_rhs.rows_mut(n, nc).copy_from(&(-&contact.drift));

    let sol = solve_kkt(kkt, full_rhs)?;
    Ok(ContactSolution {
        qdd: sol.rows(0, n).into_owned(),
        lambda: sol.rows(n, nc).into_owned(),
    })
}

fn solve_kkt(kkt: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>, RigidBodyError> {
    let lu = kkt.full_piv_lu();
    let diag = lu.u().diagonal();
    let max = diag.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = diag.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if !max.is_finite() || max == 0.0 || min < SINGULARITY_TOL * max {
        return Err(RigidBodyError::SingularConstraint);
    }
    let sol = lu.solve(&rhs).ok_or(RigidBodyError::SingularConstraint)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(RigidBodyError::SingularConstraint);
    }
    Ok(sol)
}

/// Rigid plastic impact at swing-foot touchdown: positions unchanged,
/// post-impact velocities solve `[M, -Jᵀ; J, 0][q̇⁺; Λ] = [Mq̇⁻; 0]` with J
/// taken at the new stance contact; stance and swing labels swap.
pub fn impact_reset(model: &RobotModel, pre: &FullState) -> Result<FullState, RigidBodyError> {
    let kin = pre.kinematics(model);
    let new_stance = pre.swing();
    let contact = contact_jacobian(model, &kin, new_stance);

    let n = model.dof();
    let nc = contact.rows();
    let m = mass_matrix_with_kin(model, &kin);

    let mut kkt = DMatrix::zeros(n + nc, n + nc);
    kkt.view_mut((0, 0), (n, n)).copy_from(&m);
    kkt.view_mut((0, n), (n, nc)).copy_from(&(-contact.jac.transpose()));
    kkt.view_mut((n, 0), (nc, n)).copy_from(&contact.jac);
    let mut rhs = DVector::zeros(n + nc);
    rhs.rows_mut(0, n).copy_from(&(&m * &pre.qd));

    let sol = solve_kkt(kkt, rhs)?;
    let qd_plus = sol.rows(0, n).into_owned();
    let impulse = sol.rows(n, nc).into_owned();

    let vertical: f64 = contact.vertical_rows.iter().map(|&r| impulse[r]).sum();
    if vertical < -1e-9 {
        return Err(RigidBodyError::ImpactInfeasible { impulse_z: vertical });
    }

    let (p_new, _, _) = foot_point(model, &kin, new_stance);
    Ok(FullState {
        q: pre.q.clone(),
        qd: qd_plus,
        stance: new_stance,
        t_step: 0.0,
        contact_point: p_new,
    })
}

/// Options for one integration step.
#[derive(Debug, Clone, Copy)]
pub struct StepOptions {
    pub dt: f64,
    pub terrain: TerrainSpec,
    /// External force at the base, if any.
    pub disturbance: Option<Vector2<f64>>,
    /// Touchdowns are ignored before this much time into the step, so the
    /// lifting swing foot cannot immediately re-trigger contact.
    pub min_step_time: f64,
}

impl StepOptions {
    pub fn new(dt: f64, terrain: TerrainSpec) -> StepOptions {
        StepOptions {
            dt,
            terrain,
            disturbance: None,
            min_step_time: 0.1,
        }
    }
}

/// Result of one simulation step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: FullState,
    pub touched_down: bool,
    /// State just before the impact reset, when `touched_down` is set.
    pub pre_impact: Option<FullState>,
}

/// One semi-implicit Euler step of the stance-constrained dynamics, followed
/// by touchdown detection and the impact reset when the swing foot crosses
/// the terrain surface while descending.
pub fn step(
    model: &RobotModel,
    state: &FullState,
    u: &DVector<f64>,
    opts: &StepOptions,
) -> Result<StepOutcome, RigidBodyError> {
    let sol = contact_dynamics(model, state, u, opts.disturbance)?;

    let qd = &state.qd + opts.dt * &sol.qdd;
    let q = &state.q + opts.dt * &qd;
    let next = FullState {
        q,
        qd,
        stance: state.stance,
        t_step: state.t_step + opts.dt,
        contact_point: state.contact_point,
    };

    if next.t_step >= opts.min_step_time {
        let kin = next.kinematics(model);
        let swing = next.swing();
        let (clearance, rate) = swing_clearance(model, &kin, swing, &opts.terrain);
        if clearance <= CONTACT_THRESHOLD && rate < 0.0 {
            let post = impact_reset(model, &next)?;
            return Ok(StepOutcome {
                state: post,
                touched_down: true,
                pre_impact: Some(next),
            });
        }
    }

    Ok(StepOutcome {
        state: next,
        touched_down: false,
        pre_impact: None,
    })
}

/// Clearance of the swing foot above the terrain and its time derivative.
/// For a flat foot, the lowest of toe and heel governs.
pub fn swing_clearance(
    model: &RobotModel,
    kin: &Kinematics,
    swing: Side,
    terrain: &TerrainSpec,
) -> (f64, f64) {
    let link = model.foot_link(swing);
    match &model.foot {
        FootGeometry::Point { contact_offset } => {
            let (p, v, _) = kin.point_state(link, *contact_offset);
            (terrain.clearance(p), terrain.clearance_rate(v))
        }
        FootGeometry::Flat {
            toe_offset,
            heel_offset,
            ..
        } => {
            let (pt, vt, _) = kin.point_state(link, *toe_offset);
            let (ph, vh, _) = kin.point_state(link, *heel_offset);
            let (ct, ch) = (terrain.clearance(pt), terrain.clearance(ph));
            if ct <= ch {
                (ct, terrain.clearance_rate(vt))
            } else {
                (ch, terrain.clearance_rate(vh))
            }
        }
    }
}

/// Double-support standing pose with the base `h0` above the ground and both
/// feet directly under it. Knees bend forward; flat feet stay level.
pub fn standing_pose(model: &RobotModel, h0: f64) -> DVector<f64> {
    let mut q = DVector::zeros(model.dof());
    q[1] = h0;

    for side in [Side::Right, Side::Left] {
        let foot = model.foot_link(side);
        // walk up from the foot link to the torso: chain = thigh, shin, [foot]
        let mut chain = Vec::new();
        let mut l = foot;
        loop {
            chain.push(l);
            match model.links[l].parent {
                Some(p) if p != 0 => l = p,
                _ => break,
            }
        }
        chain.reverse();

        let l1 = model.links[chain[0]].length;
        let (l2, reach) = if model.foot.is_flat() {
            let sole = -model.foot.contact_offset().y;
            (model.links[chain[1]].length, h0 - sole)
        } else {
            (model.foot.contact_offset().norm(), h0)
        };

        // two-link IK for the hip-to-ankle distance, knee bending forward
        let d = reach.clamp((l1 - l2).abs() + 1e-9, l1 + l2 - 1e-12);
        let gamma = ((l1 * l1 + d * d - l2 * l2) / (2.0 * l1 * d)).clamp(-1.0, 1.0).acos();
        let beta = ((l2 * l2 + d * d - l1 * l1) / (2.0 * l2 * d)).clamp(-1.0, 1.0).acos();

        q[model.angle_coord(chain[0])] = gamma;
        q[model.angle_coord(chain[1])] = -(gamma + beta);
        if let Some(&ft) = chain.get(2) {
            q[model.angle_coord(ft)] = beta;
        }
    }
    q
}
