//! Robot description: link parameters, topology, actuation, and contact geometry.
//!
//! Models are loaded from TOML parameter files. The three named variants
//! (`rabbit`, `rabbit_ideal`, `walker2d`) are embedded in the binary; arbitrary
//! files with the same schema can be loaded by path.

use nalgebra::{DVector, Vector2};
use serde::Deserialize;
use std::path::Path;

use super::RigidBodyError;

/// Named robot variants shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobotVariant {
    Rabbit,
    /// Rabbit with link inertias scaled down to emulate very thin links.
    RabbitIdeal,
    Walker2d,
}

impl RobotVariant {
    pub fn name(self) -> &'static str {
        match self {
            RobotVariant::Rabbit => "rabbit",
            RobotVariant::RabbitIdeal => "rabbit_ideal",
            RobotVariant::Walker2d => "walker2d",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rabbit" => Some(RobotVariant::Rabbit),
            "rabbit_ideal" => Some(RobotVariant::RabbitIdeal),
            "walker2d" => Some(RobotVariant::Walker2d),
            _ => None,
        }
    }
}

/// One rigid link. The link frame has its origin at the proximal joint and
/// rotates with the link's absolute angle.
#[derive(Debug, Clone)]
pub struct LinkParams {
    pub name: String,
    /// Parent link index; `None` for the torso (attached to the floating base).
    pub parent: Option<usize>,
    /// Joint location in the parent link frame.
    pub attach: Vector2<f64>,
    pub mass: f64,
    /// Center of mass in the link frame.
    pub com: Vector2<f64>,
    /// Rotational inertia about the center of mass.
    pub inertia: f64,
    pub length: f64,
}

/// Foot contact geometry shared by both legs.
#[derive(Debug, Clone)]
pub enum FootGeometry {
    /// Single contact point at `contact_offset` in the foot link frame.
    Point { contact_offset: Vector2<f64> },
    /// Rigid flat foot: the stance constraint pins the toe and the heel height,
    /// fixing the full planar pose of the foot.
    Flat {
        contact_offset: Vector2<f64>,
        toe_offset: Vector2<f64>,
        heel_offset: Vector2<f64>,
    },
}

impl FootGeometry {
    pub fn is_flat(&self) -> bool {
        matches!(self, FootGeometry::Flat { .. })
    }

    /// Reference contact point in the foot link frame.
    pub fn contact_offset(&self) -> Vector2<f64> {
        match self {
            FootGeometry::Point { contact_offset } => *contact_offset,
            FootGeometry::Flat { contact_offset, .. } => *contact_offset,
        }
    }
}

/// Kinematic, inertial, and actuation description of a planar biped.
///
/// Generalized coordinates are `q = [x_base, z_base, pitch, joint angles...]`
/// with one joint angle per non-torso link, in link order.
#[derive(Debug, Clone)]
pub struct RobotModel {
    pub variant: RobotVariant,
    pub name: String,
    pub links: Vec<LinkParams>,
    /// Joint coordinate index (into `q`) per actuator.
    pub actuated_coords: Vec<usize>,
    pub torque_limits: DVector<f64>,
    pub foot: FootGeometry,
    pub right_foot_link: usize,
    pub left_foot_link: usize,
    pub gravity: f64,
}

impl RobotModel {
    /// Load one of the embedded named variants.
    pub fn named(variant: RobotVariant) -> RobotModel {
        let text = match variant {
            RobotVariant::Rabbit => include_str!("../../params/rabbit.toml"),
            RobotVariant::RabbitIdeal => include_str!("../../params/rabbit_ideal.toml"),
            RobotVariant::Walker2d => include_str!("../../params/walker2d.toml"),
        };
        Self::from_toml(text).expect("embedded parameter file is valid")
    }

    pub fn from_file(path: &Path) -> Result<RobotModel, RigidBodyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RigidBodyError::BadModel(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<RobotModel, RigidBodyError> {
        let raw: RawModel =
            toml::from_str(text).map_err(|e| RigidBodyError::BadModel(e.to_string()))?;
        raw.build()
    }

    /// Degrees of freedom: 3 floating-base coordinates plus one per joint.
    pub fn dof(&self) -> usize {
        2 + self.links.len()
    }

    pub fn n_actuators(&self) -> usize {
        self.actuated_coords.len()
    }

    /// Coordinate index of link `i`'s angle (base pitch for the torso).
    pub fn angle_coord(&self, link: usize) -> usize {
        if link == 0 {
            2
        } else {
            2 + link
        }
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    /// Actuation matrix B mapping actuator torques into generalized forces.
    pub fn actuation_matrix(&self) -> nalgebra::DMatrix<f64> {
        let mut b = nalgebra::DMatrix::zeros(self.dof(), self.n_actuators());
        for (a, &coord) in self.actuated_coords.iter().enumerate() {
            b[(coord, a)] = 1.0;
        }
        b
    }

    /// Scatter actuator torques into a generalized force vector, clamped to
    /// the torque limits.
    pub fn apply_torques(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut f = DVector::zeros(self.dof());
        for (a, &coord) in self.actuated_coords.iter().enumerate() {
            f[coord] = u[a].clamp(-self.torque_limits[a], self.torque_limits[a]);
        }
        f
    }

    pub fn clamp_torques(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |a, _| {
            u[a].clamp(-self.torque_limits[a], self.torque_limits[a])
        })
    }

    pub fn foot_link(&self, side: Side) -> usize {
        match side {
            Side::Left => self.left_foot_link,
            Side::Right => self.right_foot_link,
        }
    }

    fn validate(&self) -> Result<(), RigidBodyError> {
        for l in &self.links {
            if l.mass <= 0.0 || l.inertia <= 0.0 || l.length <= 0.0 {
                return Err(RigidBodyError::BadModel(format!(
                    "link {}: masses, inertias, and lengths must be positive",
                    l.name
                )));
            }
        }
        for (i, l) in self.links.iter().enumerate() {
            if let Some(p) = l.parent {
                if p >= i {
                    return Err(RigidBodyError::BadModel(format!(
                        "link {}: parent must precede child",
                        l.name
                    )));
                }
            } else if i != 0 {
                return Err(RigidBodyError::BadModel(
                    "only the first link may be parentless".into(),
                ));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for &c in &self.actuated_coords {
            if c < 3 || c >= self.dof() || !seen.insert(c) {
                return Err(RigidBodyError::BadModel(
                    "actuated coordinates must be distinct joint angles".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Stance leg label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Deserialize)]
struct RawModel {
    name: String,
    variant: String,
    gravity: f64,
    links: Vec<RawLink>,
    feet: RawFeet,
}

#[derive(Deserialize)]
struct RawLink {
    name: String,
    parent: Option<String>,
    attach: Option<[f64; 2]>,
    mass: f64,
    com: [f64; 2],
    inertia: f64,
    length: f64,
    #[serde(default)]
    actuated: bool,
    torque_limit: Option<f64>,
}

#[derive(Deserialize)]
struct RawFeet {
    kind: String,
    right: String,
    left: String,
    contact_offset: [f64; 2],
    toe_offset: Option<[f64; 2]>,
    heel_offset: Option<[f64; 2]>,
}

impl RawModel {
    fn build(self) -> Result<RobotModel, RigidBodyError> {
        let mut links = Vec::with_capacity(self.links.len());
        let mut actuated_coords = Vec::new();
        let mut torque_limits = Vec::new();
        for (i, raw) in self.links.iter().enumerate() {
            let parent = match &raw.parent {
                None => None,
                Some(p) => Some(
                    links
                        .iter()
                        .position(|l: &LinkParams| &l.name == p)
                        .ok_or_else(|| {
                            RigidBodyError::BadModel(format!("unknown parent link {p}"))
                        })?,
                ),
            };
            links.push(LinkParams {
                name: raw.name.clone(),
                parent,
                attach: raw.attach.map_or_else(Vector2::zeros, Vector2::from),
                mass: raw.mass,
                com: Vector2::from(raw.com),
                inertia: raw.inertia,
                length: raw.length,
            });
            if raw.actuated {
                actuated_coords.push(2 + i);
                torque_limits.push(raw.torque_limit.unwrap_or(f64::INFINITY));
            }
        }

        let foot = match self.feet.kind.as_str() {
            "point" => FootGeometry::Point {
                contact_offset: Vector2::from(self.feet.contact_offset),
            },
            "flat" => FootGeometry::Flat {
                contact_offset: Vector2::from(self.feet.contact_offset),
                toe_offset: Vector2::from(self.feet.toe_offset.ok_or_else(|| {
                    RigidBodyError::BadModel("flat foot requires toe_offset".into())
                })?),
                heel_offset: Vector2::from(self.feet.heel_offset.ok_or_else(|| {
                    RigidBodyError::BadModel("flat foot requires heel_offset".into())
                })?),
            },
            other => {
                return Err(RigidBodyError::BadModel(format!("unknown foot kind {other}")));
            }
        };

        let find = |name: &str| {
            links
                .iter()
                .position(|l: &LinkParams| l.name == name)
                .ok_or_else(|| RigidBodyError::BadModel(format!("unknown foot link {name}")))
        };
        let right_foot_link = find(&self.feet.right)?;
        let left_foot_link = find(&self.feet.left)?;

        let variant = RobotVariant::parse(&self.variant).ok_or_else(|| {
            RigidBodyError::BadModel(format!("unknown variant {}", self.variant))
        })?;

        let model = RobotModel {
            variant,
            name: self.name,
            links,
            actuated_coords,
            torque_limits: DVector::from_vec(torque_limits),
            foot,
            right_foot_link,
            left_foot_link,
            gravity: self.gravity,
        };
        model.validate()?;
        Ok(model)
    }
}
