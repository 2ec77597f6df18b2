use nalgebra::DMatrix;

use super::{
    HandError, HandPoseParams, HandSide, HandState, NUM_ARTICULATION, NUM_BETAS, NUM_KINEMATIC_JOINTS,
    NUM_OUTPUT_JOINTS, NUM_POSE_PARAMS, NUM_THETA,
};
use crate::geometry::{so3_exp, so3_left_jacobian, Mat3, TriMesh, Vec3};

const WEIGHT_SUM_TOL: f64 = 1e-6;

/// Immutable hand model. Dense arrays mirror the file layout; sparse views of
/// the weights and regressors are derived on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    pub(super) side: HandSide,
    pub(super) template: Vec<Vec3>,
    /// Per vertex, one offset per shape coefficient.
    pub(super) shapedirs: Vec<[Vec3; NUM_BETAS]>,
    pub(super) weights: Vec<[f64; NUM_KINEMATIC_JOINTS]>,
    /// Rest joints from the shaped template, row-major 16 × N.
    pub(super) joint_regressor: Vec<f64>,
    /// Output joints from posed vertices, row-major 21 × N.
    pub(super) output_regressor: Vec<f64>,
    pub(super) faces: Vec<[usize; 3]>,
    pub(super) lower: Vec<f64>,
    pub(super) upper: Vec<f64>,
    pub(super) parents: [Option<usize>; NUM_KINEMATIC_JOINTS],
    sparse: Sparse,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Sparse {
    weights: Vec<Vec<(usize, f64)>>,
    joint_rows: Vec<Vec<(usize, f64)>>,
    output_rows: Vec<Vec<(usize, f64)>>,
    /// Joint itself followed by its ancestors up to the root.
    chains: Vec<Vec<usize>>,
}

fn nonzero_rows(dense: &[f64], rows: usize, cols: usize) -> Vec<Vec<(usize, f64)>> {
    (0..rows)
        .map(|r| (0..cols).filter_map(|c| Some((c, dense[r * cols + c])).filter(|(_, w)| *w != 0.0)).collect())
        .collect()
}

/// Shape-dependent quantities, fixed while only θ and t change.
#[derive(Debug, Clone, PartialEq)]
pub struct Shaped {
    pub vertices: Vec<Vec3>,
    /// Rest joint locations.
    pub joints: Vec<Vec3>,
}

/// A posed hand with the intermediate transforms needed for derivatives.
#[derive(Debug, Clone)]
pub struct Posed {
    pub vertices: Vec<Vec3>,
    pub joints: Vec<Vec3>,
    pub translation: Vec3,
    /// World rotation of each joint frame.
    world_rot: Vec<Mat3>,
    /// World displacement of each joint from its rest location (no t).
    disp: Vec<Vec3>,
    /// Left Jacobian of each local rotation.
    left_jac: Vec<Mat3>,
}

impl Posed {
    pub fn state(&self) -> HandState {
        HandState { joints: self.joints.clone(), vertices: self.vertices.clone() }
    }
}

/// Derivatives of joints (63 rows) and vertices (3N rows) with respect to the
/// pose vector `[θ (48), t (3)]`.
#[derive(Debug, Clone)]
pub struct HandJacobian {
    pub joints: DMatrix<f64>,
    pub vertices: DMatrix<f64>,
}

impl HandModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        side: HandSide,
        template: Vec<Vec3>,
        shapedirs: Vec<[Vec3; NUM_BETAS]>,
        weights: Vec<[f64; NUM_KINEMATIC_JOINTS]>,
        joint_regressor: Vec<f64>,
        output_regressor: Vec<f64>,
        faces: Vec<[usize; 3]>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        parents: [Option<usize>; NUM_KINEMATIC_JOINTS],
    ) -> Result<Self, HandError> {
        // all model data is single precision, which makes file round trips exact
        let q = |x: f64| x as f32 as f64;
        let qv = |v: Vec3| v.map(q);
        let mut model = Self {
            side,
            template: template.into_iter().map(qv).collect(),
            shapedirs: shapedirs.into_iter().map(|d| d.map(qv)).collect(),
            weights: weights.into_iter().map(|w| w.map(q)).collect(),
            joint_regressor: joint_regressor.into_iter().map(q).collect(),
            output_regressor: output_regressor.into_iter().map(q).collect(),
            faces,
            lower: lower.into_iter().map(q).collect(),
            upper: upper.into_iter().map(q).collect(),
            parents,
            sparse: Sparse::default(),
        };
        model.validate()?;
        model.build_sparse();
        Ok(model)
    }

    fn validate(&self) -> Result<(), HandError> {
        let bad = |m: String| Err(HandError::InvariantViolation(m));
        let n = self.template.len();
        if n == 0 {
            return bad("empty template".into());
        }
        if self.shapedirs.len() != n || self.weights.len() != n {
            return bad("per-vertex arrays differ in length".into());
        }
        if self.joint_regressor.len() != NUM_KINEMATIC_JOINTS * n {
            return bad("joint regressor has the wrong shape".into());
        }
        if self.output_regressor.len() != NUM_OUTPUT_JOINTS * n {
            return bad("output regressor has the wrong shape".into());
        }
        if self.lower.len() != NUM_ARTICULATION || self.upper.len() != NUM_ARTICULATION {
            return bad(format!("expected {NUM_ARTICULATION} angle bounds"));
        }
        if let Some(i) = (0..NUM_ARTICULATION).find(|&i| !(self.lower[i] <= self.upper[i])) {
            return bad(format!("bound {i}: lower {} > upper {}", self.lower[i], self.upper[i]));
        }
        if self.parents[0].is_some() {
            return bad("joint 0 must be the root".into());
        }
        if let Some(j) = (1..NUM_KINEMATIC_JOINTS).find(|&j| !matches!(self.parents[j], Some(p) if p < j)) {
            return bad(format!("joint {j} must have a parent with a smaller index"));
        }
        if let Some(v) = self.weights.iter().position(|w| {
            (w.iter().sum::<f64>() - 1.0).abs() > WEIGHT_SUM_TOL || w.iter().any(|x| !x.is_finite() || *x < 0.0)
        }) {
            return bad(format!("skinning weights of vertex {v} are not a partition of unity"));
        }
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return bad(format!("face {f:?} out of range"));
        }
        let finite = self.template.iter().all(|v| v.iter().all(|c| c.is_finite()))
            && self.shapedirs.iter().flatten().all(|v| v.iter().all(|c| c.is_finite()))
            && self.joint_regressor.iter().chain(&self.output_regressor).all(|c| c.is_finite());
        if !finite {
            return bad("non-finite model data".into());
        }
        Ok(())
    }

    fn build_sparse(&mut self) {
        let n = self.template.len();
        let weights = self
            .weights
            .iter()
            .map(|w| w.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(j, x)| (j, *x)).collect())
            .collect();
        let chains = (0..NUM_KINEMATIC_JOINTS)
            .map(|j| {
                let mut chain = vec![j];
                let mut cur = j;
                while let Some(p) = self.parents[cur] {
                    chain.push(p);
                    cur = p;
                }
                chain
            })
            .collect();
        self.sparse = Sparse {
            weights,
            joint_rows: nonzero_rows(&self.joint_regressor, NUM_KINEMATIC_JOINTS, n),
            output_rows: nonzero_rows(&self.output_regressor, NUM_OUTPUT_JOINTS, n),
            chains,
        };
    }

    pub fn side(&self) -> HandSide {
        self.side
    }

    pub fn num_vertices(&self) -> usize {
        self.template.len()
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn template(&self) -> &[Vec3] {
        &self.template
    }

    pub fn parents(&self) -> &[Option<usize>; NUM_KINEMATIC_JOINTS] {
        &self.parents
    }

    /// Lower and upper bounds of the 45 articulation components.
    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    pub fn skinning_weight(&self, vertex: usize, joint: usize) -> f64 {
        self.weights[vertex][joint]
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, HandError> {
        self.lower = lower;
        self.upper = upper;
        self.validate()?;
        Ok(self)
    }

    /// Shape blend `V_T + S β` and the rest joints regressed from it.
    pub fn shape(&self, beta: &[f64]) -> Shaped {
        assert_eq!(beta.len(), NUM_BETAS);
        let vertices: Vec<Vec3> = self
            .template
            .iter()
            .zip(&self.shapedirs)
            .map(|(v, dirs)| {
                let mut out = *v;
                for (d, b) in dirs.iter().zip(beta) {
                    if *b != 0.0 {
                        out += d * *b;
                    }
                }
                out
            })
            .collect();
        let joints = self
            .sparse
            .joint_rows
            .iter()
            .map(|row| row.iter().map(|&(i, w)| vertices[i] * w).sum())
            .collect();
        Shaped { vertices, joints }
    }

    /// Poses a shaped hand. `theta` holds 16 axis-angle triples.
    pub fn pose(&self, shaped: &Shaped, theta: &[f64], translation: Vec3) -> Posed {
        assert_eq!(theta.len(), NUM_THETA);
        let rest = &shaped.joints;
        let mut world_rot = vec![Mat3::identity(); NUM_KINEMATIC_JOINTS];
        let mut disp = vec![Vec3::zeros(); NUM_KINEMATIC_JOINTS];
        let mut left_jac = vec![Mat3::identity(); NUM_KINEMATIC_JOINTS];
        for j in 0..NUM_KINEMATIC_JOINTS {
            let w = Vec3::new(theta[3 * j], theta[3 * j + 1], theta[3 * j + 2]);
            let local = so3_exp(&w);
            left_jac[j] = so3_left_jacobian(&w);
            match self.parents[j] {
                None => {
                    world_rot[j] = local;
                }
                Some(p) => {
                    world_rot[j] = world_rot[p] * local;
                    // displacement form keeps the rest pose exact: (A_p - I) = 0 at θ = 0
                    disp[j] = (world_rot[p] - Mat3::identity()) * (rest[j] - rest[p]) + disp[p];
                }
            }
        }
        let vertices: Vec<Vec3> = shaped
            .vertices
            .iter()
            .zip(&self.sparse.weights)
            .map(|(v, ws)| {
                let mut acc = Vec3::zeros();
                let mut total = 0.0;
                for &(j, w) in ws {
                    acc += w * ((world_rot[j] - Mat3::identity()) * (v - rest[j]) + disp[j]);
                    total += w;
                }
                acc + total * v + translation
            })
            .collect();
        let joints = self
            .sparse
            .output_rows
            .iter()
            .map(|row| row.iter().map(|&(i, w)| (vertices[i] - translation) * w).sum::<Vec3>() + translation)
            .collect();
        Posed { vertices, joints, translation, world_rot, disp, left_jac }
    }

    pub fn forward(&self, params: &HandPoseParams) -> Result<HandState, HandError> {
        params.validate()?;
        let shaped = self.shape(&params.beta);
        Ok(self.pose(&shaped, &params.theta, params.translation()).state())
    }

    /// World position (without t) of joint `k` and of vertex `v` as carried
    /// rigidly by joint `j`.
    fn joint_world(&self, shaped: &Shaped, posed: &Posed, k: usize) -> Vec3 {
        shaped.joints[k] + posed.disp[k]
    }

    fn carried(&self, shaped: &Shaped, posed: &Posed, v: usize, j: usize) -> Vec3 {
        let x = shaped.vertices[v];
        (posed.world_rot[j] - Mat3::identity()) * (x - shaped.joints[j]) + posed.disp[j] + x
    }

    /// Axis map of joint `k`: `∂(world rotation vector)/∂θ_k`.
    fn axis_map(&self, posed: &Posed, k: usize) -> Mat3 {
        match self.parents[k] {
            None => posed.left_jac[k],
            Some(p) => posed.world_rot[p] * posed.left_jac[k],
        }
    }

    /// Analytic Jacobian of the posed joints and vertices. β is held fixed.
    pub fn jacobian(&self, shaped: &Shaped, posed: &Posed) -> HandJacobian {
        let n = self.num_vertices();
        let mut dv = DMatrix::zeros(3 * n, NUM_POSE_PARAMS);
        let axes: Vec<Mat3> = (0..NUM_KINEMATIC_JOINTS).map(|k| self.axis_map(posed, k)).collect();
        let joint_pos: Vec<Vec3> = (0..NUM_KINEMATIC_JOINTS).map(|k| self.joint_world(shaped, posed, k)).collect();
        let mut s = [Vec3::zeros(); NUM_KINEMATIC_JOINTS];
        for v in 0..n {
            s.iter_mut().for_each(|x| *x = Vec3::zeros());
            for &(j, w) in &self.sparse.weights[v] {
                let u = self.carried(shaped, posed, v, j);
                for &k in &self.sparse.chains[j] {
                    s[k] += w * (u - joint_pos[k]);
                }
            }
            for k in 0..NUM_KINEMATIC_JOINTS {
                if s[k] == Vec3::zeros() {
                    continue;
                }
                for c in 0..3 {
                    let col = axes[k].column(c).cross(&s[k]);
                    for r in 0..3 {
                        dv[(3 * v + r, 3 * k + c)] = col[r];
                    }
                }
            }
            for r in 0..3 {
                dv[(3 * v + r, NUM_THETA + r)] = 1.0;
            }
        }
        let mut dj = DMatrix::zeros(3 * NUM_OUTPUT_JOINTS, NUM_POSE_PARAMS);
        for (i, row) in self.sparse.output_rows.iter().enumerate() {
            for &(v, w) in row {
                for r in 0..3 {
                    for c in 0..NUM_THETA {
                        dj[(3 * i + r, c)] += w * dv[(3 * v + r, c)];
                    }
                }
            }
            for r in 0..3 {
                dj[(3 * i + r, NUM_THETA + r)] = 1.0;
            }
        }
        HandJacobian { joints: dj, vertices: dv }
    }

    pub fn forward_jacobian(&self, params: &HandPoseParams) -> Result<HandJacobian, HandError> {
        params.validate()?;
        let shaped = self.shape(&params.beta);
        let posed = self.pose(&shaped, &params.theta, params.translation());
        Ok(self.jacobian(&shaped, &posed))
    }

    /// Gradient with respect to `[θ, t]` of a scalar whose gradients with
    /// respect to the output joints and the vertices are given.
    pub fn vjp(
        &self,
        shaped: &Shaped,
        posed: &Posed,
        grad_joints: Option<&[Vec3]>,
        grad_vertices: Option<&[Vec3]>,
    ) -> [f64; NUM_POSE_PARAMS] {
        let n = self.num_vertices();
        let mut g: Vec<Vec3> = match grad_vertices {
            Some(gv) => gv.to_vec(),
            None => vec![Vec3::zeros(); n],
        };
        let mut grad_t: Vec3 = g.iter().sum();
        if let Some(gj) = grad_joints {
            for (row, gi) in self.sparse.output_rows.iter().zip(gj) {
                grad_t += gi;
                for &(v, w) in row {
                    g[v] += w * gi;
                }
            }
        }
        let mut torque = [Vec3::zeros(); NUM_KINEMATIC_JOINTS];
        let mut force = [Vec3::zeros(); NUM_KINEMATIC_JOINTS];
        for (v, gv) in g.iter().enumerate() {
            if *gv == Vec3::zeros() {
                continue;
            }
            for &(j, w) in &self.sparse.weights[v] {
                let u = self.carried(shaped, posed, v, j);
                torque[j] += w * u.cross(gv);
                force[j] += w * gv;
            }
        }
        for j in (1..NUM_KINEMATIC_JOINTS).rev() {
            let p = self.parents[j].expect("non-root joint has a parent");
            torque[p] = torque[p] + torque[j];
            force[p] = force[p] + force[j];
        }
        let mut out = [0.0; NUM_POSE_PARAMS];
        for k in 0..NUM_KINEMATIC_JOINTS {
            let tau = torque[k] - self.joint_world(shaped, posed, k).cross(&force[k]);
            let gk = self.axis_map(posed, k).transpose() * tau;
            out[3 * k..3 * k + 3].copy_from_slice(gk.as_slice());
        }
        out[NUM_THETA..].copy_from_slice(grad_t.as_slice());
        out
    }

    /// Surface mesh of a hand state.
    pub fn mesh(&self, state: &HandState) -> TriMesh {
        TriMesh::from_faces(state.vertices.clone(), self.faces.clone())
            .or_else(|_| {
                // degenerate normals (collapsed faces): fall back to template normals
                let rest = TriMesh::from_faces(self.template.clone(), self.faces.clone())?;
                TriMesh::new(state.vertices.clone(), self.faces.clone(), rest.normals().to_vec())
            })
            .expect("hand model faces are valid")
    }

    /// The model reflected through the x = 0 plane (right ↔ left hand).
    /// Poses map across with [`HandPoseParams::mirrored`].
    pub fn mirrored(&self) -> HandModel {
        let flip = |v: &Vec3| Vec3::new(-v.x, v.y, v.z);
        let mut lower = self.lower.clone();
        let mut upper = self.upper.clone();
        for i in 0..NUM_ARTICULATION {
            if i % 3 != 0 {
                lower[i] = -self.upper[i];
                upper[i] = -self.lower[i];
            }
        }
        let mut m = HandModel {
            side: self.side.other(),
            template: self.template.iter().map(flip).collect(),
            shapedirs: self.shapedirs.iter().map(|d| d.map(|v| flip(&v))).collect(),
            weights: self.weights.clone(),
            joint_regressor: self.joint_regressor.clone(),
            output_regressor: self.output_regressor.clone(),
            faces: self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect(),
            lower,
            upper,
            parents: self.parents,
            sparse: Sparse::default(),
        };
        m.build_sparse();
        m
    }
}
