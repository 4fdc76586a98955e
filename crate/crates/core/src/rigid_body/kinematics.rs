//! Forward kinematics, geometric Jacobians, and momentum/energy quantities
//! for planar serial-branched chains.
//!
//! Everything here is exact (no numerical differentiation). The drift terms
//! (`a0_*`) are point accelerations evaluated at zero generalized
//! acceleration, which is what both the bias-force assembly and the
//! constraint drift J̇q̇ need.

use nalgebra::{DMatrix, DVector, Matrix2, RowDVector, Vector2};

use super::model::{RobotModel, Side};

/// Rotate a vector by +90 degrees (d/dθ of a rotation).
#[inline]
fn perp(v: Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-v.y, v.x)
}

#[inline]
fn rot(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Planar cross product of two vectors (scalar).
#[inline]
pub fn cross2(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Per-link kinematic state from one forward pass.
#[derive(Debug, Clone)]
pub struct LinkKin {
    pub theta: f64,
    pub omega: f64,
    pub origin: Vector2<f64>,
    pub v_origin: Vector2<f64>,
    /// Origin acceleration with q̈ = 0.
    pub a0_origin: Vector2<f64>,
    pub com: Vector2<f64>,
    pub v_com: Vector2<f64>,
    pub a0_com: Vector2<f64>,
}

/// Result of a forward kinematics pass over the whole robot.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub links: Vec<LinkKin>,
    /// For each link, the chain of (angle coordinate, joint anchor position)
    /// from the base pitch down to the link itself.
    ancestors: Vec<Vec<(usize, Vector2<f64>)>>,
}

impl Kinematics {
    pub fn compute(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> Kinematics {
        let n = model.links.len();
        let mut links: Vec<LinkKin> = Vec::with_capacity(n);
        let mut ancestors: Vec<Vec<(usize, Vector2<f64>)>> = Vec::with_capacity(n);

        for (i, link) in model.links.iter().enumerate() {
            let coord = model.angle_coord(i);
            let (theta, omega, origin, v_origin, a0_origin, mut chain) = match link.parent {
                None => {
                    let origin = Vector2::new(q[0], q[1]);
                    let v = Vector2::new(qd[0], qd[1]);
                    (q[2], qd[2], origin, v, Vector2::zeros(), Vec::new())
                }
                Some(p) => {
                    let pk = &links[p];
                    let r = rot(pk.theta) * link.attach;
                    let theta = pk.theta + q[coord];
                    let omega = pk.omega + qd[coord];
                    let origin = pk.origin + r;
                    let v = pk.v_origin + pk.omega * perp(r);
                    let a0 = pk.a0_origin - pk.omega * pk.omega * r;
                    (theta, omega, origin, v, a0, ancestors[p].clone())
                }
            };
            chain.push((coord, origin));
            let rc = rot(theta) * link.com;
            links.push(LinkKin {
                theta,
                omega,
                origin,
                v_origin,
                a0_origin,
                com: origin + rc,
                v_com: v_origin + omega * perp(rc),
                a0_com: a0_origin - omega * omega * rc,
            });
            ancestors.push(chain);
        }

        Kinematics { links, ancestors }
    }

    /// World position, velocity, and zero-q̈ acceleration of a point given in
    /// link-local coordinates.
    pub fn point_state(&self, link: usize, local: Vector2<f64>) -> (Vector2<f64>, Vector2<f64>, Vector2<f64>) {
        let lk = &self.links[link];
        let r = rot(lk.theta) * local;
        (
            lk.origin + r,
            lk.v_origin + lk.omega * perp(r),
            lk.a0_origin - lk.omega * lk.omega * r,
        )
    }

    /// 2×n Jacobian of a world point attached to `link`.
    pub fn point_jacobian(&self, dof: usize, link: usize, point: Vector2<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(2, dof);
        jac[(0, 0)] = 1.0;
        jac[(1, 1)] = 1.0;
        for &(coord, anchor) in &self.ancestors[link] {
            let d = perp(point - anchor);
            jac[(0, coord)] = d.x;
            jac[(1, coord)] = d.y;
        }
        jac
    }

    /// 1×n angular Jacobian of `link`'s absolute angle.
    pub fn angle_jacobian(&self, dof: usize, link: usize) -> RowDVector<f64> {
        let mut row = RowDVector::zeros(dof);
        for &(coord, _) in &self.ancestors[link] {
            row[coord] = 1.0;
        }
        row
    }

    /// Jacobian of the link's center of mass.
    pub fn com_jacobian(&self, dof: usize, link: usize) -> DMatrix<f64> {
        self.point_jacobian(dof, link, self.links[link].com)
    }
}

/// Foot contact point (the reference point used for the pendulum state and
/// impact bookkeeping) in world coordinates: (position, velocity, drift).
pub fn foot_point(
    model: &RobotModel,
    kin: &Kinematics,
    side: Side,
) -> (Vector2<f64>, Vector2<f64>, Vector2<f64>) {
    kin.point_state(model.foot_link(side), model.foot.contact_offset())
}

/// Whole-robot center of mass position and velocity.
pub fn com_state(model: &RobotModel, kin: &Kinematics) -> (Vector2<f64>, Vector2<f64>) {
    let mut p = Vector2::zeros();
    let mut v = Vector2::zeros();
    let mut m = 0.0;
    for (link, lk) in model.links.iter().zip(&kin.links) {
        p += link.mass * lk.com;
        v += link.mass * lk.v_com;
        m += link.mass;
    }
    (p / m, v / m)
}

/// Angular momentum of the whole robot about a world point, taken about the
/// pitch axis of the right-handed (x, y, z) frame with x forward and z up, so
/// forward motion of an elevated mass gives a positive value (L = mHv for a
/// point mass at height H). Link angles are measured the other way around
/// (counter-clockwise in the x-z plane), hence the sign flips.
pub fn angular_momentum(model: &RobotModel, kin: &Kinematics, about: Vector2<f64>) -> f64 {
    -model
        .links
        .iter()
        .zip(&kin.links)
        .map(|(link, lk)| link.mass * cross2(lk.com - about, lk.v_com) + link.inertia * lk.omega)
        .sum::<f64>()
}

pub fn kinetic_energy(model: &RobotModel, kin: &Kinematics) -> f64 {
    model
        .links
        .iter()
        .zip(&kin.links)
        .map(|(link, lk)| {
            0.5 * link.mass * lk.v_com.norm_squared() + 0.5 * link.inertia * lk.omega * lk.omega
        })
        .sum()
}

pub fn potential_energy(model: &RobotModel, kin: &Kinematics) -> f64 {
    model
        .links
        .iter()
        .zip(&kin.links)
        .map(|(link, lk)| link.mass * model.gravity * lk.com.y)
        .sum()
}
