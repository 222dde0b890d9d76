//! Kinematic trees, angle-axis poses, forward kinematics, and the linear
//! shape basis.
//!
//! A pose assigns each part a rotation about its rest joint; the part's
//! global transform chains those local rotations root-to-leaf:
//! `T_k = T_parent(k) . Rot(theta_k about rest_joint_k)`. The zero pose is
//! the canonical pose, in which every part transform is the identity.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::se3::{self, RigidTransform};

/// Minimum bone length (mm) between a child's rest joint and its parent's.
const MIN_BONE_LENGTH: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct KinematicTree {
    parents: Vec<Option<usize>>,
    rest_joints: Vec<Vector3<f64>>,
    part_names: Vec<String>,
    /// Parents before children; computed once at construction.
    topo_order: Vec<usize>,
}

impl KinematicTree {
    pub fn new(
        parents: Vec<Option<usize>>,
        rest_joints: Vec<Vector3<f64>>,
        part_names: Vec<String>,
    ) -> Result<Self> {
        let k = parents.len();
        if rest_joints.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: rest_joints.len() });
        }
        if part_names.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: part_names.len() });
        }
        if k == 0 {
            return Err(Error::InvalidTree("tree has no parts".into()));
        }
        let roots = parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return Err(Error::InvalidTree(format!("expected exactly one root, found {roots}")));
        }
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= k {
                    return Err(Error::InvalidTree(format!(
                        "part {i} has parent {p} out of range"
                    )));
                }
                if (rest_joints[i] - rest_joints[p]).norm() <= MIN_BONE_LENGTH {
                    return Err(Error::InvalidTree(format!(
                        "part {i} rest joint coincides with its parent's"
                    )));
                }
            }
        }
        let topo_order = topological_order(&parents)
            .ok_or_else(|| Error::InvalidTree("parent indices contain a cycle".into()))?;
        Ok(KinematicTree { parents, rest_joints, part_names, topo_order })
    }

    pub fn part_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, k: usize) -> Option<usize> {
        self.parents[k]
    }

    pub fn rest_joint(&self, k: usize) -> Vector3<f64> {
        self.rest_joints[k]
    }

    pub fn part_name(&self, k: usize) -> &str {
        &self.part_names[k]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn rest_joints(&self) -> &[Vector3<f64>] {
        &self.rest_joints
    }

    pub fn part_names(&self) -> &[String] {
        &self.part_names
    }

    /// Part indices from the root down to `k`, inclusive.
    pub fn root_path(&self, k: usize) -> Vec<usize> {
        let mut path = vec![k];
        let mut cur = k;
        while let Some(p) = self.parents[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }
}

fn topological_order(parents: &[Option<usize>]) -> Option<Vec<usize>> {
    let k = parents.len();
    let mut order = Vec::with_capacity(k);
    let mut placed = vec![false; k];
    // Repeatedly emit parts whose parent is already placed; a cycle stalls.
    while order.len() < k {
        let before = order.len();
        for i in 0..k {
            if placed[i] {
                continue;
            }
            let ready = match parents[i] {
                None => true,
                Some(p) => placed[p],
            };
            if ready {
                placed[i] = true;
                order.push(i);
            }
        }
        if order.len() == before {
            return None;
        }
    }
    Some(order)
}

/// Per-part angle-axis rotations, one 3-vector per part.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub theta: Vec<Vector3<f64>>,
}

impl Pose {
    pub fn new(theta: Vec<Vector3<f64>>) -> Result<Self> {
        for (k, t) in theta.iter().enumerate() {
            if t.norm() >= 2.0 * std::f64::consts::PI {
                return Err(Error::SpecInvalid(format!(
                    "pose angle for part {k} is {:.3} rad, must be < 2*pi",
                    t.norm()
                )));
            }
        }
        Ok(Pose { theta })
    }

    pub fn zeros(k: usize) -> Self {
        Pose { theta: vec![Vector3::zeros(); k] }
    }

    pub fn part_count(&self) -> usize {
        self.theta.len()
    }
}

/// Forward kinematics: the global rigid transform of every part.
pub fn forward_kinematics(tree: &KinematicTree, pose: &Pose) -> Result<Vec<RigidTransform>> {
    let k = tree.part_count();
    if pose.part_count() != k {
        return Err(Error::DimensionMismatch { expected: k, got: pose.part_count() });
    }
    let mut transforms = vec![RigidTransform::identity(); k];
    for &i in &tree.topo_order {
        let local = RigidTransform::from_rotation_about(pose.theta[i], tree.rest_joint(i));
        transforms[i] = match tree.parent(i) {
            None => local,
            Some(p) => se3::compose(&transforms[p], &local),
        };
    }
    Ok(transforms)
}

/// Analytic derivative of T_k's 4x4 entries with respect to every pose
/// coordinate; entry [j][a] is dT_k / d theta_j^a (zero off the root path).
pub fn fk_jacobian(
    tree: &KinematicTree,
    pose: &Pose,
    k: usize,
) -> Result<Vec<[Matrix4<f64>; 3]>> {
    let parts = tree.part_count();
    if pose.part_count() != parts {
        return Err(Error::DimensionMismatch { expected: parts, got: pose.part_count() });
    }
    let path = tree.root_path(k);
    let locals: Vec<Matrix4<f64>> = path
        .iter()
        .map(|&j| RigidTransform::from_rotation_about(pose.theta[j], tree.rest_joint(j)).matrix())
        .collect();
    // Prefix and suffix products around each path position.
    let m = path.len();
    let mut prefix: Vec<Matrix4<f64>> = vec![Matrix4::identity(); m + 1];
    for i in 0..m {
        prefix[i + 1] = prefix[i] * locals[i];
    }
    let mut suffix: Vec<Matrix4<f64>> = vec![Matrix4::identity(); m + 1];
    for i in (0..m).rev() {
        suffix[i] = locals[i] * suffix[i + 1];
    }
    let mut out: Vec<[Matrix4<f64>; 3]> = vec![[Matrix4::zeros(); 3]; parts];
    for (pos, &j) in path.iter().enumerate() {
        let theta = pose.theta[j];
        let pivot = tree.rest_joint(j);
        let rot = se3::so3_exp(&theta);
        let jac_left = se3::so3_left_jacobian(&theta);
        for a in 0..3 {
            // d/d theta_a exp([theta]x) = [J_l(theta) e_a]x R(theta)
            let col = jac_left.column(a).into_owned();
            let d_rot: Matrix3<f64> = se3::so3_hat(&col) * rot;
            let mut d_local = Matrix4::zeros();
            d_local.fixed_view_mut::<3, 3>(0, 0).copy_from(&d_rot);
            let d_trans = -(d_rot * pivot);
            d_local.fixed_view_mut::<3, 1>(0, 3).copy_from(&d_trans);
            out[j][a] = prefix[pos] * d_local * suffix[pos + 1];
        }
    }
    Ok(out)
}

/// Compare the analytic FK Jacobian of part `k` against central finite
/// differences over every pose coordinate; returns the largest absolute
/// entry discrepancy.
pub fn pose_jacobian_check(
    tree: &KinematicTree,
    pose: &Pose,
    k: usize,
    epsilon: f64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::SpecInvalid(format!(
            "finite-difference step {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let analytic = fk_jacobian(tree, pose, k)?;
    let mut worst: f64 = 0.0;
    for j in 0..tree.part_count() {
        for a in 0..3 {
            let mut plus = pose.clone();
            plus.theta[j][a] += epsilon;
            let mut minus = pose.clone();
            minus.theta[j][a] -= epsilon;
            let tp = forward_kinematics(tree, &plus)?[k].matrix();
            let tm = forward_kinematics(tree, &minus)?[k].matrix();
            let fd = (tp - tm) / (2.0 * epsilon);
            worst = worst.max((fd - analytic[j][a]).abs().max());
        }
    }
    Ok(worst)
}

/// Linear shape basis: vertices(beta) = mean + sum_j beta_j * component_j.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeBasis {
    mean_vertices: Vec<Vector3<f64>>,
    components: Vec<Vec<Vector3<f64>>>,
}

impl ShapeBasis {
    /// Components must be mutually orthogonal (as flattened 3N-vectors) to
    /// within 1e-6 relative, matching the PCA convention.
    pub fn new(
        mean_vertices: Vec<Vector3<f64>>,
        components: Vec<Vec<Vector3<f64>>>,
    ) -> Result<Self> {
        let n = mean_vertices.len();
        for c in &components {
            if c.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: c.len() });
            }
        }
        for i in 0..components.len() {
            for j in (i + 1)..components.len() {
                let dot: f64 = components[i]
                    .iter()
                    .zip(&components[j])
                    .map(|(a, b)| a.dot(b))
                    .sum();
                let ni: f64 = components[i].iter().map(|a| a.norm_squared()).sum::<f64>().sqrt();
                let nj: f64 = components[j].iter().map(|a| a.norm_squared()).sum::<f64>().sqrt();
                if ni > 0.0 && nj > 0.0 && dot.abs() > 1e-6 * ni * nj {
                    return Err(Error::SpecInvalid(format!(
                        "shape components {i} and {j} are not orthogonal"
                    )));
                }
            }
        }
        Ok(ShapeBasis { mean_vertices, components })
    }

    pub fn vertex_count(&self) -> usize {
        self.mean_vertices.len()
    }

    pub fn beta_dim(&self) -> usize {
        self.components.len()
    }

    pub fn mean_vertices(&self) -> &[Vector3<f64>] {
        &self.mean_vertices
    }

    pub fn components(&self) -> &[Vec<Vector3<f64>>] {
        &self.components
    }

    /// vertices(beta) = mean + B beta.
    pub fn shape_vertices(&self, beta: &[f64]) -> Result<Vec<Vector3<f64>>> {
        if beta.len() != self.beta_dim() {
            return Err(Error::DimensionMismatch { expected: self.beta_dim(), got: beta.len() });
        }
        let mut out = self.mean_vertices.clone();
        for (j, &b) in beta.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            for (v, c) in out.iter_mut().zip(&self.components[j]) {
                *v += c * b;
            }
        }
        Ok(out)
    }

    /// Constant vertex velocity along the linear path from `beta_start` to
    /// `beta_end`: B (beta_end - beta_start).
    pub fn boundary_velocity(
        &self,
        beta_start: &[f64],
        beta_end: &[f64],
    ) -> Result<Vec<Vector3<f64>>> {
        if beta_start.len() != self.beta_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.beta_dim(),
                got: beta_start.len(),
            });
        }
        if beta_end.len() != self.beta_dim() {
            return Err(Error::DimensionMismatch { expected: self.beta_dim(), got: beta_end.len() });
        }
        let mut out = vec![Vector3::zeros(); self.vertex_count()];
        for j in 0..self.beta_dim() {
            let d = beta_end[j] - beta_start[j];
            if d == 0.0 {
                continue;
            }
            for (v, c) in out.iter_mut().zip(&self.components[j]) {
                *v += c * d;
            }
        }
        Ok(out)
    }
}

/// Optional pose-dependent vertex offsets: a linear map from the flattened
/// rotation residuals (R_k - I) to per-vertex displacements. Ships disabled
/// (zero matrix) because learned coefficients are external data.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseBlend {
    /// Row-major (3N) x (9K); all zeros disables the hook.
    pub matrix: Vec<f64>,
    pub vertex_count: usize,
    pub part_count: usize,
}

impl PoseBlend {
    pub fn zeros(vertex_count: usize, part_count: usize) -> Self {
        PoseBlend { matrix: vec![0.0; 9 * part_count * 3 * vertex_count], vertex_count, part_count }
    }

    pub fn offsets(&self, pose: &Pose) -> Result<Vec<Vector3<f64>>> {
        if pose.part_count() != self.part_count {
            return Err(Error::DimensionMismatch {
                expected: self.part_count,
                got: pose.part_count(),
            });
        }
        let mut features = vec![0.0; 9 * self.part_count];
        for (k, theta) in pose.theta.iter().enumerate() {
            let residual = se3::so3_exp(theta) - Matrix3::identity();
            for r in 0..3 {
                for c in 0..3 {
                    features[9 * k + 3 * r + c] = residual[(r, c)];
                }
            }
        }
        let cols = 9 * self.part_count;
        let mut out = vec![Vector3::zeros(); self.vertex_count];
        for (row, chunk) in self.matrix.chunks(cols).enumerate() {
            let value: f64 = chunk.iter().zip(&features).map(|(m, f)| m * f).sum();
            out[row / 3][row % 3] = value;
        }
        Ok(out)
    }
}
