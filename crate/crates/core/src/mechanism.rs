//! Bodies, joints, and the maximal-coordinate state of a mechanism.

use nalgebra::{DVector, Matrix3, SymmetricEigen, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{exp_map, log_map};

/// Tangent-space dimension per body: (δx, δv, δθ, δω).
pub const TANGENT_DIM: usize = 12;
/// Raw coordinate count per body: x(3), v(3), q(4), ω(3).
pub const RAW_DIM: usize = 13;

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub name: String,
    pub mass: f64,
    /// Inertia about the center of mass, body frame.
    pub inertia: Matrix3<f64>,
    pub length: f64,
}

impl Body {
    pub fn new(name: impl Into<String>, mass: f64, inertia: Matrix3<f64>, length: f64) -> Self {
        Body { name: name.into(), mass, inertia, length }
    }

    /// Slender rod along the body z axis; `inertia` is the moment about the transverse axes.
    pub fn rod(name: impl Into<String>, mass: f64, inertia: f64, length: f64) -> Self {
        let axial = (inertia * 1e-2).max(1e-6);
        Body::new(name, mass, Matrix3::from_diagonal(&Vector3::new(inertia, inertia, axial)), length)
    }

    fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::InvalidMechanism(format!("body {}: mass must be positive", self.name)));
        }
        let j = &self.inertia;
        if (j - j.transpose()).abs().max() > 1e-12 * (1.0 + j.abs().max()) {
            return Err(Error::InvalidMechanism(format!("body {}: inertia is not symmetric", self.name)));
        }
        let eig = SymmetricEigen::new(*j);
        if eig.eigenvalues.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::InvalidMechanism(format!(
                "body {}: inertia must be positive definite",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointKind {
    /// Coincident anchors plus aligned axes; one rotational degree of freedom.
    Revolute,
    /// Locked relative orientation plus in-line anchors; one translational degree of freedom.
    Prismatic,
    /// Locked relative orientation only.
    FixedOrientation,
    /// Coincident anchors only (ball joint).
    OriginPin,
    /// Anchors coincide in the plane orthogonal to the axis. Closes planar loops
    /// without the out-of-plane rows a full pin would duplicate.
    PlanarPin,
}

impl JointKind {
    pub fn residual_dim(self) -> usize {
        match self {
            JointKind::Revolute | JointKind::Prismatic => 5,
            JointKind::FixedOrientation | JointKind::OriginPin => 3,
            JointKind::PlanarPin => 2,
        }
    }

    pub fn is_rotational(self) -> bool {
        matches!(self, JointKind::Revolute | JointKind::OriginPin | JointKind::PlanarPin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    /// `None` attaches the joint to the world frame.
    pub parent: Option<usize>,
    pub child: usize,
    /// Joint axis in the parent frame.
    pub axis: Vector3<f64>,
    /// Joint axis in the child frame.
    pub axis_child: Vector3<f64>,
    pub anchor_parent: Vector3<f64>,
    pub anchor_child: Vector3<f64>,
    /// Orientation of the child relative to the parent that orientation locks hold.
    pub rest_orientation: UnitQuaternion<f64>,
    pub actuated: bool,
    /// Viscous coefficient on the relative joint velocity.
    pub friction: f64,
}

impl Joint {
    pub fn new(kind: JointKind, parent: Option<usize>, child: usize) -> Self {
        Joint {
            name: String::new(),
            kind,
            parent,
            child,
            axis: Vector3::x(),
            axis_child: Vector3::x(),
            anchor_parent: Vector3::zeros(),
            anchor_child: Vector3::zeros(),
            rest_orientation: UnitQuaternion::identity(),
            actuated: false,
            friction: 0.0,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Sets the axis in both frames.
    pub fn axis(mut self, axis: Vector3<f64>) -> Self {
        self.axis = axis;
        self.axis_child = axis;
        self
    }

    pub fn anchors(mut self, parent: Vector3<f64>, child: Vector3<f64>) -> Self {
        self.anchor_parent = parent;
        self.anchor_child = child;
        self
    }

    pub fn rest(mut self, q: UnitQuaternion<f64>) -> Self {
        self.rest_orientation = q;
        self
    }

    pub fn actuated(mut self) -> Self {
        self.actuated = true;
        self
    }

    pub fn friction(mut self, k: f64) -> Self {
        self.friction = k;
        self
    }
}

/// A set of bodies connected by joints. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Mechanism {
    bodies: Vec<Body>,
    joints: Vec<Joint>,
    gravity: Vector3<f64>,
    constraint_offsets: Vec<usize>,
    constraint_dim: usize,
    actuators: Vec<usize>,
}

impl Mechanism {
    pub fn new(bodies: Vec<Body>, mut joints: Vec<Joint>, gravity: Vector3<f64>) -> Result<Self> {
        if bodies.is_empty() {
            return Err(Error::InvalidMechanism("mechanism has no bodies".into()));
        }
        for b in &bodies {
            b.validate()?;
        }
        if !gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::InvalidMechanism("gravity must be finite".into()));
        }
        let mut offsets = Vec::with_capacity(joints.len());
        let mut actuators = Vec::new();
        let mut dim = 0;
        for (i, j) in joints.iter_mut().enumerate() {
            if j.child >= bodies.len() || j.parent.is_some_and(|p| p >= bodies.len()) {
                return Err(Error::InvalidMechanism(format!("joint {i} references a missing body")));
            }
            if j.parent == Some(j.child) {
                return Err(Error::InvalidMechanism(format!("joint {i} connects a body to itself")));
            }
            for axis in [&mut j.axis, &mut j.axis_child] {
                let n = axis.norm();
                if !(n > 1e-9) || !n.is_finite() {
                    return Err(Error::InvalidMechanism(format!("joint {i} has a degenerate axis")));
                }
                *axis /= n;
            }
            if j.friction < 0.0 || !j.friction.is_finite() {
                return Err(Error::InvalidMechanism(format!("joint {i} has negative friction")));
            }
            if j.actuated {
                if j.kind == JointKind::FixedOrientation {
                    return Err(Error::InvalidMechanism(format!(
                        "joint {i}: a fixed-orientation joint cannot be actuated"
                    )));
                }
                actuators.push(i);
            }
            offsets.push(dim);
            dim += j.kind.residual_dim();
        }
        Ok(Mechanism { bodies, joints, gravity, constraint_offsets: offsets, constraint_dim: dim, actuators })
    }

    pub fn bodies(&self) -> &[Body] {
        &self.bodies
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity
    }

    pub fn body_count(&self) -> usize {
        self.bodies.len()
    }

    pub fn constraint_dim(&self) -> usize {
        self.constraint_dim
    }

    /// Row offset of each joint in the stacked constraint vector.
    pub fn constraint_offsets(&self) -> &[usize] {
        &self.constraint_offsets
    }

    pub fn tangent_dim(&self) -> usize {
        TANGENT_DIM * self.bodies.len()
    }

    pub fn raw_state_dim(&self) -> usize {
        RAW_DIM * self.bodies.len()
    }

    /// Joint indices receiving successive entries of the control vector.
    pub fn actuators(&self) -> &[usize] {
        &self.actuators
    }

    pub fn input_dim(&self) -> usize {
        self.actuators.len()
    }

    /// Copy with new mass and inertia per body (same topology).
    pub fn with_body_parameters(&self, params: &[(f64, Matrix3<f64>)]) -> Result<Self> {
        if params.len() != self.bodies.len() {
            return Err(Error::Dimension("one (mass, inertia) pair per body expected".into()));
        }
        let bodies = self
            .bodies
            .iter()
            .zip(params)
            .map(|(b, (m, j))| Body { mass: *m, inertia: *j, ..b.clone() })
            .collect();
        Mechanism::new(bodies, self.joints.clone(), self.gravity)
    }

    /// Copy with the same viscous coefficient on every joint that has a degree of freedom.
    pub fn with_joint_friction(&self, k: f64) -> Result<Self> {
        let joints = self
            .joints
            .iter()
            .map(|j| {
                let mut j = j.clone();
                if j.kind != JointKind::FixedOrientation {
                    j.friction = k;
                }
                j
            })
            .collect();
        Mechanism::new(self.bodies.clone(), joints, self.gravity)
    }

    pub fn check_state(&self, state: &MechanismState) -> Result<()> {
        if state.bodies.len() != self.bodies.len() {
            return Err(Error::Dimension(format!(
                "state has {} bodies, mechanism has {}",
                state.bodies.len(),
                self.bodies.len()
            )));
        }
        Ok(())
    }

    pub fn check_input(&self, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "control has {} entries, mechanism has {} actuators",
                u.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    pub x: Vector3<f64>,
    pub v: Vector3<f64>,
    pub q: UnitQuaternion<f64>,
    /// Body-frame angular velocity.
    pub omega: Vector3<f64>,
}

impl BodyState {
    pub fn at_rest(x: Vector3<f64>, q: UnitQuaternion<f64>) -> Self {
        BodyState { x, v: Vector3::zeros(), q, omega: Vector3::zeros() }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.q.to_rotation_matrix().into_inner()
    }

    pub fn to_raw(&self) -> [f64; RAW_DIM] {
        let q = self.q.quaternion();
        [
            self.x.x, self.x.y, self.x.z, self.v.x, self.v.y, self.v.z, q.w, q.i, q.j, q.k, self.omega.x,
            self.omega.y, self.omega.z,
        ]
    }

    /// Builds a body state from raw coordinates. The quaternion (w, x, y, z) is kept as is when
    /// already unit within 1e-12 and normalized otherwise.
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        if raw.len() != RAW_DIM || raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("body state needs 13 finite numbers".into()));
        }
        let q = nalgebra::Quaternion::new(raw[6], raw[7], raw[8], raw[9]);
        if q.norm() < 1e-12 {
            return Err(Error::Format("zero quaternion".into()));
        }
        Ok(BodyState {
            x: Vector3::new(raw[0], raw[1], raw[2]),
            v: Vector3::new(raw[3], raw[4], raw[5]),
            q: if (q.norm() - 1.0).abs() <= 1e-12 {
                UnitQuaternion::new_unchecked(q)
            } else {
                UnitQuaternion::from_quaternion(q)
            },
            omega: Vector3::new(raw[10], raw[11], raw[12]),
        })
    }
}

/// Stacked body states plus the time-step index.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismState {
    pub bodies: Vec<BodyState>,
    pub k: usize,
}

impl MechanismState {
    pub fn new(bodies: Vec<BodyState>) -> Self {
        MechanismState { bodies, k: 0 }
    }

    pub fn tangent_dim(&self) -> usize {
        TANGENT_DIM * self.bodies.len()
    }

    /// `self ⊞ delta`: positions and velocities add, attitudes compose on the right.
    pub fn retract(&self, delta: &DVector<f64>) -> MechanismState {
        assert_eq!(delta.len(), self.tangent_dim(), "tangent dimension mismatch");
        let bodies = self
            .bodies
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let o = TANGENT_DIM * i;
                let d = |j: usize| Vector3::new(delta[o + j], delta[o + j + 1], delta[o + j + 2]);
                BodyState {
                    x: b.x + d(0),
                    v: b.v + d(3),
                    q: b.q * exp_map(&d(6)),
                    omega: b.omega + d(9),
                }
            })
            .collect();
        MechanismState { bodies, k: self.k }
    }

    /// `self ⊖ reference`, the tangent vector taking `reference` to `self`.
    pub fn difference(&self, reference: &MechanismState) -> DVector<f64> {
        assert_eq!(self.bodies.len(), reference.bodies.len(), "body count mismatch");
        let mut out = DVector::zeros(self.tangent_dim());
        for (i, (a, b)) in self.bodies.iter().zip(&reference.bodies).enumerate() {
            let o = TANGENT_DIM * i;
            out.fixed_rows_mut::<3>(o).copy_from(&(a.x - b.x));
            out.fixed_rows_mut::<3>(o + 3).copy_from(&(a.v - b.v));
            out.fixed_rows_mut::<3>(o + 6).copy_from(&log_map(&(b.q.inverse() * a.q)));
            out.fixed_rows_mut::<3>(o + 9).copy_from(&(a.omega - b.omega));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.bodies.iter().all(|b| b.to_raw().iter().all(|x| x.is_finite()))
    }

    pub fn max_angular_speed(&self) -> f64 {
        self.bodies.iter().flat_map(|b| b.omega.iter().copied()).fold(0.0, |m, w| m.max(w.abs()))
    }

    pub fn renormalize(&mut self) {
        for b in &mut self.bodies {
            b.q = UnitQuaternion::from_quaternion(b.q.into_inner());
        }
    }
}

/// Constraint forces, one entry per constraint row.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers(pub DVector<f64>);

impl Multipliers {
    pub fn zeros(dim: usize) -> Self {
        Multipliers(DVector::zeros(dim))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_rods() -> Mechanism {
        Mechanism::new(
            vec![Body::rod("a", 1.0, 0.1, 1.0), Body::rod("b", 1.0, 0.1, 1.0)],
            vec![
                Joint::new(JointKind::Revolute, None, 0).axis(Vector3::new(2.0, 0.0, 0.0)),
                Joint::new(JointKind::Revolute, Some(0), 1).actuated(),
            ],
            Vector3::new(0.0, 0.0, -9.81),
        )
        .unwrap()
    }

    #[test]
    fn derived_dimensions() {
        let m = two_rods();
        assert_eq!(m.constraint_dim(), 10);
        assert_eq!(m.tangent_dim(), 24);
        assert_eq!(m.raw_state_dim(), 26);
        assert_eq!(m.actuators(), &[1]);
        assert_eq!(m.constraint_offsets(), &[0, 5]);
        assert_relative_eq!(m.joints()[0].axis.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_bodies_and_joints() {
        let bad_mass = Body::rod("x", 0.0, 0.1, 1.0);
        assert!(Mechanism::new(vec![bad_mass], vec![], Vector3::zeros()).is_err());
        let bad_inertia = Body::new("x", 1.0, Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0)), 1.0);
        assert!(Mechanism::new(vec![bad_inertia], vec![], Vector3::zeros()).is_err());
        let dangling = Joint::new(JointKind::Revolute, Some(3), 0);
        assert!(Mechanism::new(vec![Body::rod("x", 1.0, 0.1, 1.0)], vec![dangling], Vector3::zeros()).is_err());
        let fixed_actuated = Joint::new(JointKind::FixedOrientation, None, 0).actuated();
        assert!(Mechanism::new(vec![Body::rod("x", 1.0, 0.1, 1.0)], vec![fixed_actuated], Vector3::zeros())
            .is_err());
    }

    #[test]
    fn retract_difference_inverse() {
        let s = MechanismState::new(vec![BodyState {
            x: Vector3::new(0.1, 0.2, 0.3),
            v: Vector3::new(1.0, 0.0, -1.0),
            q: exp_map(&Vector3::new(0.3, 0.1, -0.2)),
            omega: Vector3::new(0.5, 0.0, 0.1),
        }]);
        let d = DVector::from_iterator(12, (0..12).map(|i| 0.01 * (i as f64 - 5.0)));
        let t = s.retract(&d);
        assert_relative_eq!(t.difference(&s), d, epsilon = 1e-14);
    }
}
