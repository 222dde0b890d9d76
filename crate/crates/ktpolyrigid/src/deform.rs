//! Articulated volumetric deformations.
//!
//! Three evaluators share the part transforms {T_k} and the volumetric
//! weights w_k(x):
//!
//! * LBS: convex combination of the transform matrices.
//! * PolyRigid: convex combination of the matrix logarithms at the
//!   identity, exponentiated.
//! * KTPolyRigid: the same average taken in a local tangent space anchored
//!   at the highest-weight part, so only small relative motions are logged.
//!
//! All fields map canonical coordinates to native coordinates; images are
//! pulled back through them.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::se3::{self, RigidTransform, Twist, DEFAULT_BRANCH_EPSILON};
use crate::volume::{GridSpec, OutOfBounds, VolumeGrid};
use crate::weights::WeightField;

/// Parts with weight at or below this are skipped by KTPolyRigid: a distant
/// part may sit outside the injectivity radius of the local tangent space,
/// and with vanishing weight it must not poison the blend.
pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeformMethod {
    Lbs,
    PolyRigid,
    KtPolyRigid,
}

impl DeformMethod {
    pub fn name(&self) -> &'static str {
        match self {
            DeformMethod::Lbs => "lbs",
            DeformMethod::PolyRigid => "polyrigid",
            DeformMethod::KtPolyRigid => "ktpolyrigid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lbs" => Ok(DeformMethod::Lbs),
            "polyrigid" => Ok(DeformMethod::PolyRigid),
            "ktpolyrigid" => Ok(DeformMethod::KtPolyRigid),
            _ => Err(Error::SpecInvalid(format!(
                "unknown method '{s}', expected lbs|polyrigid|ktpolyrigid"
            ))),
        }
    }
}

/// Index of the largest weight; ties go to the smallest index.
pub fn select_reference(weights: &[f64]) -> usize {
    let mut best = 0;
    for (i, &w) in weights.iter().enumerate().skip(1) {
        if w > weights[best] {
            best = i;
        }
    }
    best
}

/// Linear blend skinning at a point: (sum_k w_k M_k) x.
pub fn eval_lbs(x: &Vector3<f64>, transforms: &[RigidTransform], weights: &[f64]) -> Vector3<f64> {
    let mut rot = nalgebra::Matrix3::zeros();
    let mut trans = Vector3::zeros();
    for (t, &w) in transforms.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        rot += t.rotation * w;
        trans += t.translation * w;
    }
    rot * x + trans
}

/// PolyRigid at a point: exp(sum_k w_k log T_k) applied to x.
///
/// Fails with [`Error::BranchAmbiguity`] when any T_k leaves the injectivity
/// radius, the documented failure mode for large motions.
pub fn eval_polyrigid(
    x: &Vector3<f64>,
    transforms: &[RigidTransform],
    weights: &[f64],
) -> Result<Vector3<f64>> {
    let logs = transforms.iter().map(se3::se3_log).collect::<Result<Vec<_>>>()?;
    Ok(eval_polyrigid_cached(x, &logs, weights))
}

fn eval_polyrigid_cached(x: &Vector3<f64>, logs: &[Twist], weights: &[f64]) -> Vector3<f64> {
    let mut blend = Twist::zero();
    for (xi, &w) in logs.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        blend = blend.add(&xi.scaled(w));
    }
    se3::apply(&se3::se3_exp(&blend), x)
}

/// KTPolyRigid at a point: T_ref . exp(sum_k w_k log(T_ref^-1 T_k)).
///
/// Parts with weight at or below `weight_floor` are skipped; their relative
/// logarithm need not exist.
pub fn eval_ktpolyrigid(
    x: &Vector3<f64>,
    transforms: &[RigidTransform],
    weights: &[f64],
    reference: usize,
) -> Result<Vector3<f64>> {
    eval_ktpolyrigid_with(
        x,
        transforms,
        weights,
        reference,
        DEFAULT_BRANCH_EPSILON,
        DEFAULT_WEIGHT_FLOOR,
    )
}

pub fn eval_ktpolyrigid_with(
    x: &Vector3<f64>,
    transforms: &[RigidTransform],
    weights: &[f64],
    reference: usize,
    epsilon_branch: f64,
    weight_floor: f64,
) -> Result<Vector3<f64>> {
    let ref_inv = se3::inverse(&transforms[reference]);
    let mut blend = Twist::zero();
    for (k, (t, &w)) in transforms.iter().zip(weights).enumerate() {
        if w <= weight_floor {
            continue;
        }
        let rel = if k == reference {
            Twist::zero()
        } else {
            se3::se3_log_with_epsilon(&se3::compose(&ref_inv, t), epsilon_branch)?
        };
        blend = blend.add(&rel.scaled(w));
    }
    let local = se3::se3_exp(&blend);
    Ok(se3::apply(&transforms[reference], &se3::apply(&local, x)))
}

enum MethodCache {
    Lbs,
    Poly(Vec<Twist>),
    /// rel[r][k] = log(T_r^-1 T_k); None when out of the injectivity radius.
    Kt(Vec<Vec<Option<Twist>>>),
}

/// An articulated deformation prepared for dense evaluation: part logs are
/// computed once, not per voxel.
pub struct ArticulatedField<'a> {
    pub method: DeformMethod,
    pub transforms: &'a [RigidTransform],
    pub weights: &'a WeightField,
    pub epsilon_branch: f64,
    pub weight_floor: f64,
    cache: MethodCache,
}

impl<'a> ArticulatedField<'a> {
    pub fn new(
        method: DeformMethod,
        transforms: &'a [RigidTransform],
        weights: &'a WeightField,
    ) -> Result<Self> {
        Self::with_params(method, transforms, weights, DEFAULT_BRANCH_EPSILON, DEFAULT_WEIGHT_FLOOR)
    }

    pub fn with_params(
        method: DeformMethod,
        transforms: &'a [RigidTransform],
        weights: &'a WeightField,
        epsilon_branch: f64,
        weight_floor: f64,
    ) -> Result<Self> {
        if transforms.len() != weights.channels() {
            return Err(Error::DimensionMismatch {
                expected: weights.channels(),
                got: transforms.len(),
            });
        }
        let cache = match method {
            DeformMethod::Lbs => MethodCache::Lbs,
            DeformMethod::PolyRigid => MethodCache::Poly(
                transforms
                    .iter()
                    .map(|t| se3::se3_log_with_epsilon(t, epsilon_branch))
                    .collect::<Result<Vec<_>>>()?,
            ),
            DeformMethod::KtPolyRigid => {
                let k = transforms.len();
                let mut rel = Vec::with_capacity(k);
                for r in 0..k {
                    let ref_inv = se3::inverse(&transforms[r]);
                    let mut row = Vec::with_capacity(k);
                    for (kk, t) in transforms.iter().enumerate() {
                        if kk == r {
                            row.push(Some(Twist::zero()));
                        } else {
                            row.push(
                                se3::se3_log_with_epsilon(&se3::compose(&ref_inv, t), epsilon_branch)
                                    .ok(),
                            );
                        }
                    }
                    rel.push(row);
                }
                MethodCache::Kt(rel)
            }
        };
        Ok(ArticulatedField { method, transforms, weights, epsilon_branch, weight_floor, cache })
    }

    /// Evaluate with explicit weights (must lie on the simplex).
    pub fn eval_with_weights(&self, x: &Vector3<f64>, w: &[f64]) -> Result<Vector3<f64>> {
        match &self.cache {
            MethodCache::Lbs => Ok(eval_lbs(x, self.transforms, w)),
            MethodCache::Poly(logs) => Ok(eval_polyrigid_cached(x, logs, w)),
            MethodCache::Kt(rel) => {
                let r = select_reference(w);
                let mut blend = Twist::zero();
                for (k, &wk) in w.iter().enumerate() {
                    if wk <= self.weight_floor {
                        continue;
                    }
                    match &rel[r][k] {
                        Some(xi) => blend = blend.add(&xi.scaled(wk)),
                        None => {
                            let angle =
                                se3::compose(&se3::inverse(&self.transforms[r]), &self.transforms[k])
                                    .rotation_angle();
                            return Err(Error::BranchAmbiguity {
                                angle,
                                epsilon: self.epsilon_branch,
                            });
                        }
                    }
                }
                let local = se3::se3_exp(&blend);
                Ok(se3::apply(&self.transforms[r], &se3::apply(&local, x)))
            }
        }
    }

    /// Evaluate at a world point, taking weights from the weight field.
    pub fn eval(&self, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        let mut w = vec![0.0; self.weights.channels()];
        self.weights.weights_at_into(x, &mut w);
        self.eval_with_weights(x, &w)
    }

    /// Sample the displacement u(x) = phi(x) - x on a grid. Parallel over
    /// voxels; the result is independent of the thread count.
    pub fn sample_dense(&self, out_spec: &GridSpec) -> Result<VolumeGrid> {
        let n = out_spec.voxel_count();
        let channels = self.weights.channels();
        let results: Vec<std::result::Result<[f64; 3], Error>> = (0..n)
            .into_par_iter()
            .map_init(
                || vec![0.0; channels],
                |wbuf, idx| {
                    let [i, j, k] = out_spec.unravel(idx);
                    let x = out_spec.world_at(i, j, k);
                    self.weights.weights_at_into(&x, wbuf);
                    let y = self.eval_with_weights(&x, wbuf)?;
                    let u = y - x;
                    Ok([u.x, u.y, u.z])
                },
            )
            .collect();
        let mut grid = VolumeGrid::zeros(*out_spec, 3);
        for (idx, r) in results.into_iter().enumerate() {
            let u = r?;
            let base = idx * 3;
            grid.data[base] = u[0];
            grid.data[base + 1] = u[1];
            grid.data[base + 2] = u[2];
        }
        Ok(grid)
    }
}

/// Inverse of a dense displacement field.
#[derive(Clone, Debug)]
pub struct InvertedField {
    /// 3-channel inverse displacement; `grid.mask` flags converged voxels.
    pub grid: VolumeGrid,
    pub converged_fraction: f64,
}

/// Invert a displacement field by damped per-voxel Newton iteration on
/// phi(y) = x, with the Jacobian sampled from the field. Convergence is
/// checked as the forward roundtrip error |phi(y) - x| in voxel units
/// against `tol_voxels`.
///
/// Plain fixed-point iteration y <- x - u(y) contracts at rate 2 sin(a/2)
/// for a local rotation by angle a, so it diverges beyond pi/3; the Newton
/// update handles the large articulations this library exists for.
pub fn invert_field(field: &VolumeGrid, max_iters: usize, tol_voxels: f64) -> InvertedField {
    assert_eq!(field.channels, 3, "displacement fields have 3 channels");
    let spec = field.spec;
    let n = spec.voxel_count();
    let min_spacing = spec.spacing[0].min(spec.spacing[1]).min(spec.spacing[2]);
    let h = 0.5 * min_spacing;
    let max_step = 4.0 * (spec.spacing[0] + spec.spacing[1] + spec.spacing[2]);
    let err_voxels = |r: &Vector3<f64>| -> f64 {
        Vector3::new(r.x / spec.spacing[0], r.y / spec.spacing[1], r.z / spec.spacing[2]).norm()
    };
    let results: Vec<([f64; 3], bool)> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let [i, j, k] = spec.unravel(idx);
            let x = spec.world_at(i, j, k);
            let mut y = x;
            let mut best_y = y;
            let mut best_err = f64::INFINITY;
            for _ in 0..max_iters {
                let residual = y + field.trilinear_vector(&y, OutOfBounds::Clamp) - x;
                let err = err_voxels(&residual);
                if err < best_err {
                    best_err = err;
                    best_y = y;
                }
                if err <= 0.25 * tol_voxels {
                    break;
                }
                // J = I + grad u from central differences of the interpolant.
                let mut jac = nalgebra::Matrix3::identity();
                for axis in 0..3 {
                    let mut e = Vector3::zeros();
                    e[axis] = h;
                    let du = (field.trilinear_vector(&(y + e), OutOfBounds::Clamp)
                        - field.trilinear_vector(&(y - e), OutOfBounds::Clamp))
                        / (2.0 * h);
                    for row in 0..3 {
                        jac[(row, axis)] += du[row];
                    }
                }
                let delta = match jac.lu().solve(&residual) {
                    Some(d) => d,
                    None => residual, // singular Jacobian: gradient step
                };
                let step = if delta.norm() > max_step {
                    delta * (max_step / delta.norm())
                } else {
                    delta
                };
                y -= step;
            }
            let u_inv = best_y - x;
            ([u_inv.x, u_inv.y, u_inv.z], best_err <= tol_voxels)
        })
        .collect();
    let mut grid = VolumeGrid::zeros(spec, 3);
    let mut valid = vec![false; n];
    let mut converged = 0usize;
    for (idx, (u, ok)) in results.into_iter().enumerate() {
        let base = idx * 3;
        grid.data[base] = u[0];
        grid.data[base + 1] = u[1];
        grid.data[base + 2] = u[2];
        valid[idx] = ok;
        if ok {
            converged += 1;
        }
    }
    grid.mask = Some(valid);
    InvertedField { grid, converged_fraction: converged as f64 / n as f64 }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    Trilinear,
    /// For label volumes.
    Nearest,
}

/// Pull an image back through a displacement field: out(x) = image(x + u(x)).
/// Samples outside the image read as background 0.
pub fn resample_image(
    image: &VolumeGrid,
    field: &VolumeGrid,
    out_spec: &GridSpec,
    interp: Interpolation,
) -> VolumeGrid {
    assert_eq!(field.channels, 3, "displacement fields have 3 channels");
    let channels = image.channels;
    let n = out_spec.voxel_count();
    let data: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|idx| {
            let [i, j, k] = out_spec.unravel(idx);
            let x = out_spec.world_at(i, j, k);
            let u = field.trilinear_vector(&x, OutOfBounds::Clamp);
            let p = x + u;
            let mut out = vec![0.0; channels];
            match interp {
                Interpolation::Trilinear => image.trilinear(&p, OutOfBounds::Zero, &mut out),
                Interpolation::Nearest => image.nearest(&p, OutOfBounds::Zero, &mut out),
            }
            out
        })
        .collect();
    VolumeGrid { spec: *out_spec, channels, data, mask: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridSpec;
    use crate::weights::{solve_weights, BoundaryWeights, SolveConfig, WeightField};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rot_about(angle: f64, axis: Vector3<f64>, pivot: Vector3<f64>) -> RigidTransform {
        RigidTransform::from_rotation_about(axis.normalize() * angle, pivot)
    }

    /// Two-part weight field on a small bar: channel 0 fades out along +x.
    fn two_part_field() -> WeightField {
        let spec = GridSpec::new([9, 5, 5], [1.0; 3], [-4.0, -2.0, -2.0]).unwrap();
        let mask = vec![true; spec.voxel_count()];
        let bvox = crate::weights::boundary_voxels(&spec, &mask);
        let mut values = Vec::new();
        for &v in &bvox {
            let [i, _, _] = spec.unravel(v);
            let w0 = 1.0 - i as f64 / 8.0;
            values.extend_from_slice(&[w0, 1.0 - w0]);
        }
        let boundary = BoundaryWeights { channels: 2, voxels: bvox, values };
        solve_weights(&spec, &mask, &boundary, &SolveConfig::default()).unwrap()
    }

    #[test]
    fn select_reference_examples() {
        assert_eq!(select_reference(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(select_reference(&[0.5, 0.5]), 0);
        assert_eq!(select_reference(&[0.0, 0.0, 0.0, 1.0]), 3);
    }

    #[test]
    fn lbs_single_active_part() {
        let ts = vec![
            rot_about(0.4, Vector3::z(), Vector3::zeros()),
            RigidTransform::from_translation(Vector3::new(5.0, 0.0, 0.0)),
        ];
        let x = Vector3::new(1.0, 2.0, 3.0);
        let y = eval_lbs(&x, &ts, &[0.0, 1.0]);
        assert_relative_eq!(y, se3::apply(&ts[1], &x), epsilon = 1e-12);
    }

    #[test]
    fn lbs_equal_transforms_ignore_weights() {
        let t = rot_about(0.9, Vector3::new(1.0, 1.0, 0.0), Vector3::new(1.0, 0.0, 0.0));
        let ts = vec![t, t, t];
        let x = Vector3::new(0.5, -1.0, 2.0);
        let y = eval_lbs(&x, &ts, &[0.2, 0.3, 0.5]);
        assert_relative_eq!(y, se3::apply(&t, &x), epsilon = 1e-12);
    }

    #[test]
    fn lbs_blends_translations_linearly() {
        let ts = vec![
            RigidTransform::from_translation(Vector3::new(2.0, 0.0, 0.0)),
            RigidTransform::from_translation(Vector3::new(0.0, 4.0, 0.0)),
        ];
        let x = Vector3::new(1.0, 1.0, 1.0);
        let y = eval_lbs(&x, &ts, &[0.5, 0.5]);
        assert_relative_eq!(y, x + Vector3::new(1.0, 2.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn polyrigid_identity_and_single_part() {
        let ts = vec![RigidTransform::identity(), rot_about(1.2, Vector3::x(), Vector3::zeros())];
        let x = Vector3::new(0.0, 1.0, 0.0);
        let y = eval_polyrigid(&x, &[RigidTransform::identity(); 2], &[0.5, 0.5]).unwrap();
        assert_relative_eq!(y, x, epsilon = 1e-12);
        let y1 = eval_polyrigid(&x, &ts, &[0.0, 1.0]).unwrap();
        assert_relative_eq!(y1, se3::apply(&ts[1], &x), epsilon = 1e-9);
    }

    #[test]
    fn polyrigid_opposite_rotations_cancel() {
        let ts = vec![
            rot_about(0.5, Vector3::z(), Vector3::zeros()),
            rot_about(-0.5, Vector3::z(), Vector3::zeros()),
        ];
        let x = Vector3::new(2.0, 1.0, -1.0);
        let y = eval_polyrigid(&x, &ts, &[0.5, 0.5]).unwrap();
        assert_relative_eq!(y, x, epsilon = 1e-12);
    }

    #[test]
    fn ktpolyrigid_equal_transforms_are_exact() {
        let t = rot_about(2.2, Vector3::new(0.3, 1.0, 0.2), Vector3::new(5.0, 1.0, 0.0));
        let ts = vec![t, t];
        let x = Vector3::new(1.0, 2.0, 3.0);
        let y = eval_ktpolyrigid(&x, &ts, &[0.4, 0.6], 1).unwrap();
        assert_relative_eq!(y, se3::apply(&t, &x), epsilon = 1e-14);
    }

    #[test]
    fn ktpolyrigid_reference_only() {
        let ts = vec![
            rot_about(2.8, Vector3::z(), Vector3::zeros()),
            rot_about(0.3, Vector3::x(), Vector3::new(0.0, 4.0, 0.0)),
        ];
        let x = Vector3::new(1.0, 0.5, 0.0);
        let y = eval_ktpolyrigid(&x, &ts, &[1.0, 0.0], 0).unwrap();
        assert_relative_eq!(y, se3::apply(&ts[0], &x), epsilon = 1e-12);
    }

    #[test]
    fn ktpolyrigid_handles_large_global_small_relative() {
        // Elbow: part A at 2.8 rad, part B at 2.8 + 0.9; the relative angle
        // 0.9 stays well inside the radius even though both global angles
        // are large.
        let pivot = Vector3::new(0.0, 10.0, 0.0);
        let a = rot_about(2.8, Vector3::z(), Vector3::zeros());
        let b = se3::compose(&a, &rot_about(0.9, Vector3::z(), pivot));
        let ts = vec![a, b];
        let x = Vector3::new(0.0, 10.0, 0.0);
        let y = eval_ktpolyrigid(&x, &ts, &[0.5, 0.5], 0).unwrap();
        assert!(y.iter().all(|c| c.is_finite()));
        // PolyRigid refuses outright when a global angle reaches pi.
        let c = rot_about(PI, Vector3::z(), Vector3::zeros());
        match eval_polyrigid(&x, &[a, c], &[0.5, 0.5]) {
            Err(Error::BranchAmbiguity { .. }) => {}
            other => panic!("expected BranchAmbiguity, got {other:?}"),
        }
    }

    #[test]
    fn ktpolyrigid_floor_skips_negligible_parts() {
        // A distant part at angle pi relative to the reference would be
        // ambiguous, but its weight is below the floor.
        let a = RigidTransform::identity();
        let far = rot_about(PI, Vector3::z(), Vector3::zeros());
        let x = Vector3::new(1.0, 1.0, 1.0);
        let y = eval_ktpolyrigid(&x, &[a, far], &[1.0, 0.0], 0).unwrap();
        assert_relative_eq!(y, x, epsilon = 1e-12);
        // With real weight on the ambiguous part it must fail.
        match eval_ktpolyrigid(&x, &[a, far], &[0.6, 0.4], 0) {
            Err(Error::BranchAmbiguity { .. }) => {}
            other => panic!("expected BranchAmbiguity, got {other:?}"),
        }
    }

    #[test]
    fn near_identity_methods_agree() {
        let field = two_part_field();
        let pivot = Vector3::new(0.0, 0.0, 0.0);
        let ts = vec![
            rot_about(0.05, Vector3::z(), pivot),
            rot_about(0.04, Vector3::x(), pivot),
        ];
        let lbs = ArticulatedField::new(DeformMethod::Lbs, &ts, &field).unwrap();
        let poly = ArticulatedField::new(DeformMethod::PolyRigid, &ts, &field).unwrap();
        let kt = ArticulatedField::new(DeformMethod::KtPolyRigid, &ts, &field).unwrap();
        let spec = field.grid.spec;
        let mut worst: f64 = 0.0;
        for idx in 0..spec.voxel_count() {
            let [i, j, k] = spec.unravel(idx);
            let x = spec.world_at(i, j, k);
            let a = lbs.eval(&x).unwrap();
            let b = poly.eval(&x).unwrap();
            let c = kt.eval(&x).unwrap();
            worst = worst.max((a - b).norm()).max((a - c).norm()).max((b - c).norm());
        }
        assert!(worst <= 0.01, "near-identity disagreement {worst} mm");
    }

    #[test]
    fn rigidity_preserved_when_all_parts_equal() {
        let field = two_part_field();
        let t = rot_about(1.4, Vector3::new(0.2, 0.9, 0.1), Vector3::new(2.0, -1.0, 0.5));
        let ts = vec![t, t];
        for method in [DeformMethod::Lbs, DeformMethod::PolyRigid, DeformMethod::KtPolyRigid] {
            let f = ArticulatedField::new(method, &ts, &field).unwrap();
            let x = Vector3::new(1.3, 0.4, -0.8);
            assert_relative_eq!(f.eval(&x).unwrap(), se3::apply(&t, &x), epsilon = 1e-9);
        }
    }

    #[test]
    fn dense_sampling_matches_pointwise() {
        let field = two_part_field();
        let ts = vec![
            rot_about(0.7, Vector3::z(), Vector3::new(0.0, 0.0, 0.0)),
            rot_about(1.1, Vector3::z(), Vector3::new(2.0, 0.0, 0.0)),
        ];
        let kt = ArticulatedField::new(DeformMethod::KtPolyRigid, &ts, &field).unwrap();
        let dense = kt.sample_dense(&field.grid.spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..100 {
            let idx = rng.random_range(0..field.grid.spec.voxel_count());
            let [i, j, k] = field.grid.spec.unravel(idx);
            let x = field.grid.spec.world_at(i, j, k);
            let u = dense.vector_at(idx);
            let y = kt.eval(&x).unwrap();
            assert_relative_eq!(x + u, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn dense_identity_is_zero_and_translation_is_constant() {
        let field = two_part_field();
        let ident = vec![RigidTransform::identity(); 2];
        let f = ArticulatedField::new(DeformMethod::KtPolyRigid, &ident, &field).unwrap();
        let dense = f.sample_dense(&field.grid.spec).unwrap();
        assert!(dense.data.iter().all(|&v| v.abs() < 1e-12));

        let d = Vector3::new(1.5, -2.0, 0.5);
        let ts = vec![RigidTransform::from_translation(d); 2];
        let f = ArticulatedField::new(DeformMethod::Lbs, &ts, &field).unwrap();
        let dense = f.sample_dense(&field.grid.spec).unwrap();
        for idx in 0..dense.spec.voxel_count() {
            assert_relative_eq!(dense.vector_at(idx), d, epsilon = 1e-12);
        }
    }

    #[test]
    fn invert_identity_and_translation() {
        let spec = GridSpec::new([10, 10, 10], [1.0; 3], [0.0; 3]).unwrap();
        let zero = VolumeGrid::zeros(spec, 3);
        let inv = invert_field(&zero, 50, 0.05);
        assert!(inv.converged_fraction == 1.0);
        assert!(inv.grid.data.iter().all(|&v| v.abs() < 1e-12));

        let mut shift = VolumeGrid::zeros(spec, 3);
        for idx in 0..spec.voxel_count() {
            shift.data[idx * 3] = 2.0;
        }
        let inv = invert_field(&shift, 50, 0.05);
        // Interior voxels see the exact constant inverse; voxels whose
        // iterate walks off the grid edge clamp.
        let mid = spec.linear_index(5, 5, 5);
        assert_relative_eq!(inv.grid.vector_at(mid), Vector3::new(-2.0, 0.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn invert_smooth_field_roundtrip() {
        let spec = GridSpec::new([16, 16, 16], [1.0; 3], [0.0; 3]).unwrap();
        let mut field = VolumeGrid::zeros(spec, 3);
        for idx in 0..spec.voxel_count() {
            let [i, j, k] = spec.unravel(idx);
            let x = spec.world_at(i, j, k);
            field.data[idx * 3] = 1.2 * (0.3 * x.y).sin();
            field.data[idx * 3 + 1] = 0.8 * (0.25 * x.z).cos() - 0.8;
            field.data[idx * 3 + 2] = 0.5 * (0.2 * x.x).sin();
        }
        let inv = invert_field(&field, 50, 0.05);
        assert!(
            inv.converged_fraction >= 0.99,
            "converged fraction {}",
            inv.converged_fraction
        );
    }

    #[test]
    fn resample_identity_is_bitwise() {
        let spec = GridSpec::new([8, 8, 8], [1.0; 3], [0.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut image = VolumeGrid::zeros(spec, 1);
        for v in image.data.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        let zero = VolumeGrid::zeros(spec, 3);
        let out = resample_image(&image, &zero, &spec, Interpolation::Trilinear);
        assert_eq!(out.data, image.data);
    }

    #[test]
    fn resample_one_voxel_shift_is_bitwise_in_the_interior() {
        let spec = GridSpec::new([8, 8, 8], [0.7; 3], [0.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut image = VolumeGrid::zeros(spec, 1);
        for v in image.data.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        let mut field = VolumeGrid::zeros(spec, 3);
        for idx in 0..spec.voxel_count() {
            field.data[idx * 3] = spec.spacing[0];
        }
        let out = resample_image(&image, &field, &spec, Interpolation::Trilinear);
        for k in 0..8 {
            for j in 0..8 {
                for i in 0..7 {
                    let a = out.get(spec.linear_index(i, j, k), 0);
                    let b = image.get(spec.linear_index(i + 1, j, k), 0);
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn resample_ramp_through_arbitrary_field() {
        let spec = GridSpec::new([10, 10, 10], [1.0; 3], [-5.0; 3]).unwrap();
        let mut image = VolumeGrid::zeros(spec, 1);
        for idx in 0..spec.voxel_count() {
            let [i, j, k] = spec.unravel(idx);
            let x = spec.world_at(i, j, k);
            image.set(idx, 0, 0.5 * x.x - 0.25 * x.y + x.z + 2.0);
        }
        let mut field = VolumeGrid::zeros(spec, 3);
        for idx in 0..spec.voxel_count() {
            let [i, j, k] = spec.unravel(idx);
            let x = spec.world_at(i, j, k);
            field.data[idx * 3] = 0.8 * (0.4 * x.y).sin();
            field.data[idx * 3 + 1] = 0.6 * (0.3 * x.x).cos() - 0.6;
            field.data[idx * 3 + 2] = 0.3;
        }
        let out = resample_image(&image, &field, &spec, Interpolation::Trilinear);
        for idx in 0..spec.voxel_count() {
            let [i, j, k] = spec.unravel(idx);
            let x = spec.world_at(i, j, k);
            let p = x + field.vector_at(idx);
            // Only compare where the mapped point stays inside the image.
            let c = spec.continuous_index(&p);
            if (0..3).any(|a| c[a] < 0.0 || c[a] > 9.0) {
                continue;
            }
            let expected = 0.5 * p.x - 0.25 * p.y + p.z + 2.0;
            assert_relative_eq!(out.get(idx, 0), expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn kt_pose_derivative_is_stable_across_steps() {
        use crate::kinematics::{forward_kinematics, KinematicTree, Pose};
        let tree = KinematicTree::new(
            vec![None, Some(0)],
            vec![Vector3::zeros(), Vector3::new(0.0, 3.0, 0.0)],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let field = two_part_field();
        let base = Pose::new(vec![
            Vector3::new(0.1, 0.0, 0.2),
            Vector3::new(0.0, 0.3, -0.1),
        ])
        .unwrap();
        let x = Vector3::new(0.5, 0.5, 0.5);
        let w = field.weights_at(&x);
        let eval_at = |pose: &Pose| -> Vector3<f64> {
            let ts = forward_kinematics(&tree, pose).unwrap();
            eval_ktpolyrigid(&x, &ts, &w, select_reference(&w)).unwrap()
        };
        for (j, a) in [(0usize, 2usize), (1usize, 1usize)] {
            let mut d_prev = Vector3::zeros();
            for (step_idx, h) in [1e-4, 1e-5].iter().enumerate() {
                let mut plus = base.clone();
                plus.theta[j][a] += h;
                let mut minus = base.clone();
                minus.theta[j][a] -= h;
                let d = (eval_at(&plus) - eval_at(&minus)) / (2.0 * h);
                assert!(d.iter().all(|c| c.is_finite()));
                if step_idx == 1 {
                    let denom = d.norm().max(1e-9);
                    assert!(
                        (d - d_prev).norm() / denom <= 0.15,
                        "derivative drift {} exceeds 15%",
                        (d - d_prev).norm() / denom
                    );
                }
                d_prev = d;
            }
        }
    }
}
