//! Linearized constrained dynamics `z' = A z + B u + C λ`, `G z' = 0` in tangent coordinates.

use nalgebra::{DMatrix, DVector, Matrix3};
use rayon::prelude::*;

use crate::constraints::{self, CONFIG_DIM};
use crate::dynamics::{
    actuation_config_jacobian, actuation_matrix, constraint_jacobian, evaluate_constraints, friction_wrench,
    step_residual, step_with_multipliers,
};
use crate::error::{Error, Result};
use crate::math::{condition_number, exp_map, max_abs, right_jacobian, skew};
use crate::mechanism::{Mechanism, MechanismState, Multipliers, TANGENT_DIM};
use crate::trajectory::TrajectoryRecord;

/// Point about which a model was linearized.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub state: MechanismState,
    pub input: DVector<f64>,
    pub multipliers: Multipliers,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub reference: Option<Reference>,
}

impl LinearizedSystem {
    /// Bare matrices without a reference point.
    pub fn from_matrices(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, g: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let ok = a.ncols() == n
            && b.nrows() == n
            && c.nrows() == n
            && g.ncols() == n
            && g.nrows() == c.ncols();
        if !ok {
            return Err(Error::Dimension(format!(
                "A {:?}, B {:?}, C {:?}, G {:?} are not conformable",
                a.shape(),
                b.shape(),
                c.shape(),
                g.shape()
            )));
        }
        Ok(LinearizedSystem { a, b, c, g, reference: None })
    }

    /// Unconstrained system (empty C and G).
    pub fn unconstrained(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Self::from_matrices(a, b, DMatrix::zeros(n, 0), DMatrix::zeros(0, n))
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn constraint_dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn is_finite(&self) -> bool {
        [&self.a, &self.b, &self.c, &self.g].iter().all(|m| m.iter().all(|x| x.is_finite()))
    }

    /// Writes `A.txt`, `B.txt`, `C.txt`, `G.txt` into `dir`.
    pub fn export(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, m) in [("A", &self.a), ("B", &self.b), ("C", &self.c), ("G", &self.g)] {
            crate::trajectory::write_matrix(&dir.join(format!("{name}.txt")), m)?;
        }
        Ok(())
    }
}

fn put(m: &mut DMatrix<f64>, r: usize, c: usize, b: &Matrix3<f64>) {
    let mut v = m.view_mut((r, c), (3, 3));
    v += b;
}

/// Analytic linearization at `(z*, u*, λ*)` via the implicit function theorem.
pub fn linearize(
    mech: &Mechanism,
    z: &MechanismState,
    u: &DVector<f64>,
    lambda: &Multipliers,
    dt: f64,
) -> Result<LinearizedSystem> {
    let next = step_with_multipliers(mech, z, u, lambda, dt)?;
    let violation = max_abs(evaluate_constraints(mech, &next).iter().copied());
    if violation > 1e-8 {
        return Err(Error::InconsistentReference { residual: violation });
    }
    let nb = mech.body_count();
    let n = TANGENT_DIM * nb;
    let nc = mech.constraint_dim();
    let poses = constraints::poses(z);
    let g_start = constraints::jacobian_config(mech, &poses);
    let wrench = constraints::wrench_jacobian(mech, &poses, &lambda.0) + actuation_config_jacobian(mech, &poses, u);
    let act = actuation_matrix(mech, &poses);
    let (_, dfric) = friction_wrench(mech, &next);

    let mut d1 = DMatrix::zeros(n, n);
    let mut d0 = DMatrix::zeros(n, n);
    let mut du = DMatrix::zeros(n, act.ncols());
    let mut dl = DMatrix::zeros(n, nc);
    let id = Matrix3::identity();
    for (i, body) in mech.bodies().iter().enumerate() {
        let o = TANGENT_DIM * i;
        let (a, b) = (&z.bodies[i], &next.bodies[i]);
        let phi = dt * b.omega;
        let wm = 0.5 * (a.omega + b.omega);
        let gyro = 0.5 * (skew(&wm) * body.inertia - skew(&(body.inertia * wm)));
        // position kinematics
        put(&mut d1, o, o, &id);
        put(&mut d1, o, o + 3, &(-dt * id));
        put(&mut d0, o, o, &(-id));
        // linear momentum
        put(&mut d1, o + 3, o + 3, &(id * (body.mass / dt)));
        put(&mut d0, o + 3, o + 3, &(-id * (body.mass / dt)));
        // attitude kinematics, premultiplied by J_r(φ)
        put(&mut d1, o + 6, o + 6, &id);
        put(&mut d1, o + 6, o + 9, &(-dt * right_jacobian(&phi)));
        put(&mut d0, o + 6, o + 6, &(-exp_map(&phi).to_rotation_matrix().into_inner().transpose()));
        // angular momentum
        put(&mut d1, o + 9, o + 9, &(body.inertia / dt + gyro));
        put(&mut d0, o + 9, o + 9, &(-body.inertia / dt + gyro));
    }
    for bi in 0..nb {
        for (row_off, src_off) in [(3usize, 0usize), (9, 3)] {
            let row = TANGENT_DIM * bi + row_off;
            for k in 0..3 {
                let src = CONFIG_DIM * bi + src_off + k;
                for bj in 0..nb {
                    for l in 0..3 {
                        d0[(row + k, TANGENT_DIM * bj + l)] -= wrench[(src, CONFIG_DIM * bj + l)];
                        d0[(row + k, TANGENT_DIM * bj + 6 + l)] -= wrench[(src, CONFIG_DIM * bj + 3 + l)];
                    }
                }
                for col in 0..n {
                    d1[(row + k, col)] -= dfric[(src, col)];
                }
                for col in 0..act.ncols() {
                    du[(row + k, col)] = -act[(src, col)];
                }
                for col in 0..nc {
                    dl[(row + k, col)] = -g_start[(col, src)];
                }
            }
        }
    }

    let condition = condition_number(&d1);
    if condition > 1e12 {
        return Err(Error::SingularDynamicsJacobian { condition });
    }
    let lu = d1.lu();
    let solve = |m: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        lu.solve(&(-m)).ok_or(Error::SingularDynamicsJacobian { condition: f64::INFINITY })
    };
    let sys = LinearizedSystem {
        a: solve(&d0)?,
        b: solve(&du)?,
        c: solve(&dl)?,
        g: constraint_jacobian(mech, &next),
        reference: Some(Reference { state: z.clone(), input: u.clone(), multipliers: lambda.clone(), dt }),
    };
    if !sys.is_finite() {
        return Err(Error::SingularDynamicsJacobian { condition: f64::INFINITY });
    }
    Ok(sys)
}

/// Central-difference linearization of the fixed-multiplier step map.
///
/// Each perturbation is scaled by `1 + |entry|` of the perturbed coordinate.
pub fn finite_difference_jacobians(
    mech: &Mechanism,
    z: &MechanismState,
    u: &DVector<f64>,
    lambda: &Multipliers,
    dt: f64,
    h: f64,
) -> Result<LinearizedSystem> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("perturbation size must be positive, got {h}")));
    }
    let next = step_with_multipliers(mech, z, u, lambda, dt)?;
    let n = z.tangent_dim();
    let nc = lambda.len();
    let map = |zz: &MechanismState, uu: &DVector<f64>, ll: &Multipliers| -> Result<DVector<f64>> {
        Ok(step_with_multipliers(mech, zz, uu, ll, dt)?.difference(&next))
    };

    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        let hj = h * (1.0 + raw_tangent_entry(z, j).abs());
        let mut d = DVector::zeros(n);
        d[j] = hj;
        let plus = map(&z.retract(&d), u, lambda)?;
        let minus = map(&z.retract(&(-d)), u, lambda)?;
        a.set_column(j, &((plus - minus) / (2.0 * hj)));
    }
    let mut b = DMatrix::zeros(n, u.len());
    for j in 0..u.len() {
        let hj = h * (1.0 + u[j].abs());
        let (mut up, mut um) = (u.clone(), u.clone());
        up[j] += hj;
        um[j] -= hj;
        b.set_column(j, &((map(z, &up, lambda)? - map(z, &um, lambda)?) / (2.0 * hj)));
    }
    let mut c = DMatrix::zeros(n, nc);
    for j in 0..nc {
        let hj = h * (1.0 + lambda.0[j].abs());
        let (mut lp, mut lm) = (lambda.clone(), lambda.clone());
        lp.0[j] += hj;
        lm.0[j] -= hj;
        c.set_column(j, &((map(z, u, &lp)? - map(z, u, &lm)?) / (2.0 * hj)));
    }
    let mut g = DMatrix::zeros(nc, n);
    for j in 0..n {
        let hj = h * (1.0 + raw_tangent_entry(&next, j).abs());
        let mut d = DVector::zeros(n);
        d[j] = hj;
        let plus = evaluate_constraints(mech, &next.retract(&d));
        let minus = evaluate_constraints(mech, &next.retract(&(-d)));
        g.set_column(j, &((plus - minus) / (2.0 * hj)));
    }
    Ok(LinearizedSystem {
        a,
        b,
        c,
        g,
        reference: Some(Reference { state: z.clone(), input: u.clone(), multipliers: lambda.clone(), dt }),
    })
}

/// Value of the coordinate a tangent direction perturbs (zero for attitude directions).
fn raw_tangent_entry(z: &MechanismState, j: usize) -> f64 {
    let b = &z.bodies[j / TANGENT_DIM];
    let k = j % TANGENT_DIM;
    match k / 3 {
        0 => b.x[k % 3],
        1 => b.v[k % 3],
        2 => 0.0,
        _ => b.omega[k % 3],
    }
}

/// One linearization per transition of a dynamically consistent nominal.
pub fn linearize_trajectory(mech: &Mechanism, nominal: &TrajectoryRecord, dt: f64) -> Result<Vec<LinearizedSystem>> {
    nominal.validate()?;
    (0..nominal.len())
        .into_par_iter()
        .map(|k| {
            let (z, u, l) = (&nominal.states[k], &nominal.controls[k], &nominal.multipliers[k]);
            let r = step_residual(mech, z, &nominal.states[k + 1], u, l, dt)?;
            let residual = max_abs(r.iter().copied());
            if !(residual <= 1e-6) {
                return Err(Error::InconsistentNominal { index: k, residual });
            }
            linearize(mech, z, u, l, dt).map_err(|e| Error::AtStep { index: k, source: Box::new(e) })
        })
        .collect()
}
