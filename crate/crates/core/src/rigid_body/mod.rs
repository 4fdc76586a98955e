//! Planar multibody dynamics for n-link bipeds with holonomic ground contact
//! and hybrid impact resets.

mod dynamics;
mod kinematics;
mod model;

pub use dynamics::{
    bias_forces, bias_forces_with_kin, contact_dynamics, contact_dynamics_with, contact_jacobian,
    impact_reset, mass_matrix, mass_matrix_with_kin, standing_pose, step, swing_clearance,
    ContactJacobian, ContactSolution, FullState, StepOptions, StepOutcome, TerrainSpec,
    CONTACT_THRESHOLD, SINGULARITY_TOL,
};
pub use kinematics::{
    angular_momentum, com_state, cross2, foot_point, kinetic_energy, potential_energy, Kinematics,
    LinkKin,
};
pub use model::{FootGeometry, LinkParams, RobotModel, RobotVariant, Side};

#[derive(Debug, thiserror::Error)]
pub enum RigidBodyError {
    #[error("invalid robot model: {0}")]
    BadModel(String),
    #[error("contact KKT system is singular (kinematic singularity)")]
    SingularConstraint,
    #[error("impact requires pulling contact (vertical impulse {impulse_z})")]
    ImpactInfeasible { impulse_z: f64 },
}
