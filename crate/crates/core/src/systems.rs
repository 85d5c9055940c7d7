//! Builders for the test systems and their states.
//!
//! All systems move in the world y-z plane. Links are slender rods whose body z axis
//! runs along the rod; a link at absolute angle φ about x points along
//! `e(φ) = (0, sin φ, −cos φ)`, so φ = 0 hangs straight down.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::constraints;
use crate::error::{Error, Result};
use crate::math::lu_is_singular;
use crate::mechanism::{Body, BodyState, Joint, JointKind, Mechanism, MechanismState};

pub const GRAVITY: f64 = 9.81;

pub fn link_direction(phi: f64) -> Vector3<f64> {
    Vector3::new(0.0, phi.sin(), -phi.cos())
}

/// Angular rate direction of `link_direction`.
pub fn link_direction_rate(phi: f64) -> Vector3<f64> {
    Vector3::new(0.0, phi.cos(), phi.sin())
}

pub fn planar_rotation(phi: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::x_axis(), phi)
}

/// Serial planar chain of rods, optionally riding on a cart that slides along y.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarChain {
    pub cart: Option<Body>,
    pub links: Vec<Body>,
    /// Absolute angle of the first link when its minimal angle is zero.
    pub base_angle: f64,
    /// Actuation flag per joint, cart joint first when present.
    pub actuated: Vec<bool>,
    pub gravity: f64,
}

impl PlanarChain {
    /// Minimal coordinate count (positions only).
    pub fn dof(&self) -> usize {
        self.links.len() + usize::from(self.cart.is_some())
    }

    pub fn bodies(&self) -> Vec<Body> {
        self.cart.iter().cloned().chain(self.links.iter().cloned()).collect()
    }

    pub fn mechanism(&self) -> Result<Mechanism> {
        let has_cart = self.cart.is_some();
        let off = usize::from(has_cart);
        if self.actuated.len() != self.dof() {
            return Err(Error::InvalidMechanism("one actuation flag per joint expected".into()));
        }
        let mut joints = Vec::new();
        if has_cart {
            let mut j = Joint::new(JointKind::Prismatic, None, 0).named("cart").axis(Vector3::y());
            j.actuated = self.actuated[0];
            joints.push(j);
        }
        for (i, link) in self.links.iter().enumerate() {
            let (parent, anchor_parent) = if i == 0 {
                (has_cart.then_some(0), Vector3::zeros())
            } else {
                let prev = &self.links[i - 1];
                (Some(off + i - 1), Vector3::new(0.0, 0.0, -prev.length / 2.0))
            };
            let mut j = Joint::new(JointKind::Revolute, parent, off + i)
                .named(format!("joint{}", i + 1))
                .axis(Vector3::x())
                .anchors(anchor_parent, Vector3::new(0.0, 0.0, link.length / 2.0));
            j.actuated = self.actuated[off + i];
            joints.push(j);
        }
        Mechanism::new(self.bodies(), joints, Vector3::new(0.0, 0.0, -self.gravity))
    }

    /// Absolute link angles and rates from minimal coordinates `[y?, θ…, ẏ?, θ̇…]`.
    pub fn absolute_angles(&self, c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.dof();
        let off = usize::from(self.cart.is_some());
        let mut phi = Vec::with_capacity(self.links.len());
        let mut rate = Vec::with_capacity(self.links.len());
        let (mut a, mut w) = (self.base_angle, 0.0);
        for i in 0..self.links.len() {
            a += c[off + i];
            w += c[n + off + i];
            phi.push(a);
            rate.push(w);
        }
        (phi, rate)
    }

    /// Maximal state from minimal coordinates.
    pub fn state(&self, c: &[f64]) -> Result<MechanismState> {
        let n = self.dof();
        if c.len() != 2 * n {
            return Err(Error::Dimension(format!("expected {} minimal coordinates, got {}", 2 * n, c.len())));
        }
        let (phi, rate) = self.absolute_angles(c);
        let mut bodies = Vec::new();
        let (mut p, mut pd) = (Vector3::zeros(), Vector3::zeros());
        if self.cart.is_some() {
            p = Vector3::new(0.0, c[0], 0.0);
            pd = Vector3::new(0.0, c[n], 0.0);
            bodies.push(BodyState { x: p, v: pd, q: UnitQuaternion::identity(), omega: Vector3::zeros() });
        }
        for (i, link) in self.links.iter().enumerate() {
            let e = link_direction(phi[i]);
            let ed = link_direction_rate(phi[i]) * rate[i];
            let half = link.length / 2.0;
            bodies.push(BodyState {
                x: p + half * e,
                v: pd + half * ed,
                q: planar_rotation(phi[i]),
                omega: Vector3::new(rate[i], 0.0, 0.0),
            });
            p += link.length * e;
            pd += link.length * ed;
        }
        Ok(MechanismState::new(bodies))
    }
}

/// Rod with a given transverse inertia.
fn rod(name: &str, mass: f64, inertia: f64, length: f64) -> Body {
    Body::rod(name, mass, inertia, length)
}

/// Rod whose transverse inertia is that of a uniform bar.
fn uniform_rod(name: &str, mass: f64, length: f64) -> Body {
    Body::rod(name, mass, mass * length * length / 12.0, length)
}

/// Single link pinned to the world, unactuated.
pub fn pendulum_chain() -> PlanarChain {
    PlanarChain {
        cart: None,
        links: vec![rod("link1", 1.0, 0.084, 1.0)],
        base_angle: 0.0,
        actuated: vec![false],
        gravity: GRAVITY,
    }
}

/// Two links, elbow actuated; minimal angles measured from hanging.
pub fn acrobot_chain() -> PlanarChain {
    PlanarChain {
        cart: None,
        links: vec![rod("link1", 1.0, 0.084, 1.0), rod("link2", 1.0, 0.334, 2.0)],
        base_angle: 0.0,
        actuated: vec![false, true],
        gravity: GRAVITY,
    }
}

/// Acrobot geometry with no actuators.
pub fn double_pendulum_chain() -> PlanarChain {
    PlanarChain { actuated: vec![false, false], ..acrobot_chain() }
}

/// Cart with one pole; pole angle measured from upright.
pub fn cartpole_chain() -> PlanarChain {
    PlanarChain {
        cart: Some(uniform_rod("cart", 0.5, 0.5)),
        links: vec![rod("pole", 1.0, 0.084, 1.0)],
        base_angle: PI,
        actuated: vec![true, false],
        gravity: GRAVITY,
    }
}

/// Cart with three poles; first pole angle from upright, the others relative.
pub fn triple_cartpole_chain() -> PlanarChain {
    PlanarChain {
        cart: Some(uniform_rod("cart", 0.5, 0.5)),
        links: (1..=3).map(|i| rod(&format!("pole{i}"), 1.0, 0.084, 1.0)).collect(),
        base_angle: PI,
        actuated: vec![true, false, false, false],
        gravity: GRAVITY,
    }
}

/// Free rigid body with no joints.
pub fn free_body(gravity: Vector3<f64>) -> Result<Mechanism> {
    Mechanism::new(vec![rod("body", 1.0, 0.084, 1.0)], Vec::new(), gravity)
}

/// Planar two-leg delta robot.
///
/// Both lower legs are pinned to the world origin; each upper leg connects a knee to one
/// end of the base. The base keeps its orientation. The actuators sit at the two
/// base-to-upper-leg joints, left first.
#[derive(Debug, Clone, PartialEq)]
pub struct Delta2d {
    pub lower: Body,
    pub upper: Body,
    pub base: Body,
    pub gravity: f64,
}

/// Body order of the delta robot mechanism.
pub mod delta_body {
    pub const LOWER_LEFT: usize = 0;
    pub const LOWER_RIGHT: usize = 1;
    pub const UPPER_LEFT: usize = 2;
    pub const UPPER_RIGHT: usize = 3;
    pub const BASE: usize = 4;
}

impl Default for Delta2d {
    fn default() -> Self {
        Delta2d {
            lower: rod("lower", 1.0, 0.084, 1.0),
            upper: rod("upper", 0.5, 0.011, 0.5),
            base: uniform_rod("base", 0.71, FRAC_1_SQRT_2),
            gravity: GRAVITY,
        }
    }
}

impl Delta2d {
    /// Base position at the reference pose.
    pub fn reference_position(&self) -> (f64, f64) {
        (0.0, 1.061)
    }

    pub fn mechanism(&self) -> Result<Mechanism> {
        use delta_body::*;
        let (ll, lu, w) = (self.lower.length, self.upper.length, self.base.length);
        let ax = Vector3::x();
        let top = |l: f64| Vector3::new(0.0, 0.0, l / 2.0);
        let bottom = |l: f64| Vector3::new(0.0, 0.0, -l / 2.0);
        let joints = vec![
            Joint::new(JointKind::Revolute, None, LOWER_LEFT).named("hip_left").axis(ax).anchors(Vector3::zeros(), top(ll)),
            Joint::new(JointKind::Revolute, None, LOWER_RIGHT).named("hip_right").axis(ax).anchors(Vector3::zeros(), top(ll)),
            Joint::new(JointKind::Revolute, Some(LOWER_LEFT), UPPER_LEFT)
                .named("knee_left")
                .axis(ax)
                .anchors(bottom(ll), top(lu)),
            Joint::new(JointKind::Revolute, Some(LOWER_RIGHT), UPPER_RIGHT)
                .named("knee_right")
                .axis(ax)
                .anchors(bottom(ll), top(lu)),
            Joint::new(JointKind::OriginPin, Some(BASE), UPPER_LEFT)
                .named("wrist_left")
                .axis(ax)
                .anchors(Vector3::new(0.0, -w / 2.0, 0.0), bottom(lu))
                .actuated(),
            Joint::new(JointKind::PlanarPin, Some(BASE), UPPER_RIGHT)
                .named("wrist_right")
                .axis(ax)
                .anchors(Vector3::new(0.0, w / 2.0, 0.0), bottom(lu))
                .actuated(),
            Joint::new(JointKind::FixedOrientation, None, BASE).named("base_attitude"),
        ];
        let bodies = vec![
            Body { name: "lower_left".into(), ..self.lower.clone() },
            Body { name: "lower_right".into(), ..self.lower.clone() },
            Body { name: "upper_left".into(), ..self.upper.clone() },
            Body { name: "upper_right".into(), ..self.upper.clone() },
            self.base.clone(),
        ];
        Mechanism::new(bodies, joints, Vector3::new(0.0, 0.0, -self.gravity))
    }

    /// Knee positions for a base position, legs bent outward. `None` outside the workspace.
    pub fn knees(&self, yb: f64, zb: f64) -> Option<[Vector3<f64>; 2]> {
        let (ll, lu, w) = (self.lower.length, self.upper.length, self.base.length);
        let mut out = [Vector3::zeros(); 2];
        for (side, sign) in [(0usize, -1.0), (1, 1.0)] {
            let e = Vector3::new(0.0, yb + sign * w / 2.0, zb);
            let d = e.norm();
            if !(d > (ll - lu).abs() + 1e-9 && d < ll + lu - 1e-9) {
                return None;
            }
            let a = (ll * ll - lu * lu + d * d) / (2.0 * d);
            let h = (ll * ll - a * a).max(0.0).sqrt();
            let p = e * (a / d);
            let n = Vector3::new(0.0, -e.z, e.y) / d;
            out[side] = if sign < 0.0 { p + h * n } else { p - h * n };
        }
        Some(out)
    }

    /// Static configuration with the base at `(yb, zb)`.
    pub fn configuration(&self, yb: f64, zb: f64) -> Result<MechanismState> {
        use delta_body::*;
        let knees = self
            .knees(yb, zb)
            .ok_or_else(|| Error::Infeasible(format!("base position ({yb}, {zb}) is outside the workspace")))?;
        let w = self.base.length;
        let angle = |d: Vector3<f64>| d.y.atan2(-d.z);
        let mut bodies = vec![BodyState::at_rest(Vector3::zeros(), UnitQuaternion::identity()); 5];
        for (side, sign) in [(0usize, -1.0), (1, 1.0)] {
            let k = knees[side];
            let end = Vector3::new(0.0, yb + sign * w / 2.0, zb);
            let lower = if side == 0 { LOWER_LEFT } else { LOWER_RIGHT };
            let upper = if side == 0 { UPPER_LEFT } else { UPPER_RIGHT };
            bodies[lower] = BodyState::at_rest(k / 2.0, planar_rotation(angle(k)));
            bodies[upper] = BodyState::at_rest((k + end) / 2.0, planar_rotation(angle(end - k)));
        }
        bodies[BASE] = BodyState::at_rest(Vector3::new(0.0, yb, zb), UnitQuaternion::identity());
        Ok(MechanismState::new(bodies))
    }

    /// State with base position and velocity `(yb, zb, ẏb, żb)`; link velocities follow from
    /// the velocity constraints.
    pub fn state(&self, mech: &Mechanism, c: &[f64]) -> Result<MechanismState> {
        if c.len() != 4 {
            return Err(Error::Dimension("delta robot state has 4 reduced coordinates".into()));
        }
        let mut s = self.configuration(c[0], c[1])?;
        if c[2] == 0.0 && c[3] == 0.0 {
            return Ok(s);
        }
        let g = constraints::jacobian_config(mech, &constraints::poses(&s));
        let n = g.ncols();
        let mut a = DMatrix::zeros(g.nrows() + 2, n);
        a.view_mut((0, 0), (g.nrows(), n)).copy_from(&g);
        let base = 6 * delta_body::BASE;
        a[(g.nrows(), base + 1)] = 1.0;
        a[(g.nrows() + 1, base + 2)] = 1.0;
        let mut rhs = DVector::zeros(g.nrows() + 2);
        rhs[g.nrows()] = c[2];
        rhs[g.nrows() + 1] = c[3];
        let lu = a.lu();
        if lu_is_singular(&lu, 1e-12) {
            return Err(Error::Infeasible("velocity map is singular at this configuration".into()));
        }
        let nu = lu.solve(&rhs).ok_or_else(|| Error::Infeasible("velocity map is singular".into()))?;
        for (i, b) in s.bodies.iter_mut().enumerate() {
            b.v = Vector3::new(nu[6 * i], nu[6 * i + 1], nu[6 * i + 2]);
            b.omega = Vector3::new(nu[6 * i + 3], nu[6 * i + 4], nu[6 * i + 5]);
        }
        Ok(s)
    }
}

/// Named built-in systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Pendulum,
    DoublePendulum,
    Acrobot,
    Cartpole,
    TripleCartpole,
    Delta2d,
}

impl SystemKind {
    pub const ALL: [SystemKind; 6] = [
        SystemKind::Pendulum,
        SystemKind::DoublePendulum,
        SystemKind::Acrobot,
        SystemKind::Cartpole,
        SystemKind::TripleCartpole,
        SystemKind::Delta2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Pendulum => "pendulum",
            SystemKind::DoublePendulum => "double_pendulum",
            SystemKind::Acrobot => "acrobot",
            SystemKind::Cartpole => "cartpole",
            SystemKind::TripleCartpole => "triple_cartpole",
            SystemKind::Delta2d => "delta2d",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        let key = name.replace('-', "_");
        SystemKind::ALL.into_iter().find(|s| s.name() == key).ok_or_else(|| {
            let names: Vec<_> = SystemKind::ALL.iter().map(|s| s.name()).collect();
            Error::InvalidArgument(format!("unknown system '{name}'; valid systems: {}", names.join(", ")))
        })
    }

    /// Chain description for the serial systems.
    pub fn chain(self) -> Option<PlanarChain> {
        match self {
            SystemKind::Pendulum => Some(pendulum_chain()),
            SystemKind::DoublePendulum => Some(double_pendulum_chain()),
            SystemKind::Acrobot => Some(acrobot_chain()),
            SystemKind::Cartpole => Some(cartpole_chain()),
            SystemKind::TripleCartpole => Some(triple_cartpole_chain()),
            SystemKind::Delta2d => None,
        }
    }

    pub fn mechanism(self) -> Result<Mechanism> {
        match self.chain() {
            Some(c) => c.mechanism(),
            None => Delta2d::default().mechanism(),
        }
    }
}

/// Mechanism definition file layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismFile {
    pub bodies: Vec<BodySpec>,
    pub joints: Vec<JointSpec>,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -GRAVITY]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    #[serde(default)]
    pub name: String,
    pub mass: f64,
    pub inertia: [f64; 3],
    pub length: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    #[serde(default)]
    pub name: String,
    pub kind: JointKind,
    /// Parent body index; absent for the world.
    #[serde(default)]
    pub parent: Option<usize>,
    pub child: usize,
    #[serde(default = "default_axis")]
    pub axis: [f64; 3],
    #[serde(default)]
    pub anchor_parent: [f64; 3],
    #[serde(default)]
    pub anchor_child: [f64; 3],
    #[serde(default)]
    pub actuated: bool,
    #[serde(default)]
    pub friction: f64,
}

fn default_axis() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

impl MechanismFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<Mechanism> {
        let bodies = self
            .bodies
            .iter()
            .map(|b| {
                Body::new(
                    b.name.clone(),
                    b.mass,
                    nalgebra::Matrix3::from_diagonal(&Vector3::from(b.inertia)),
                    b.length,
                )
            })
            .collect();
        let joints = self
            .joints
            .iter()
            .map(|j| {
                let mut joint = Joint::new(j.kind, j.parent, j.child)
                    .named(j.name.clone())
                    .axis(Vector3::from(j.axis))
                    .anchors(Vector3::from(j.anchor_parent), Vector3::from(j.anchor_child))
                    .friction(j.friction);
                joint.actuated = j.actuated;
                joint
            })
            .collect();
        Mechanism::new(bodies, joints, Vector3::from(self.gravity))
    }
}
