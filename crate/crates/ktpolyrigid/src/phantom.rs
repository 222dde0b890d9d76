//! Synthetic articulated phantoms: a kinematic tree, a closed capsule-union
//! surface, constructive skinning weights, an interior mask, and a
//! structured intensity volume with embedded organs. Phantoms stand in for
//! subjects in every experiment and carry known ground-truth deformations.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deform::{invert_field, resample_image, ArticulatedField, DeformMethod, Interpolation};
use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, KinematicTree, Pose, ShapeBasis};
use crate::mesh::SurfaceMesh;
use crate::volume::{GridSpec, VolumeGrid};
use crate::weights::WeightField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// `parts` segments stacked along +z.
    Chain,
    /// Torso, head, two two-segment arms, two two-segment legs (10 parts).
    Biped,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrganSpec {
    pub center: [f64; 3],
    pub radius: f64,
    pub intensity: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub topology: Topology,
    /// Segment count for chains; ignored for bipeds (always 10).
    pub parts: usize,
    /// Chain segment length (mm); scales the biped proportions.
    pub limb_length: f64,
    /// Chain capsule radius (mm); scales the biped radii.
    pub limb_radius: f64,
    pub organs: Vec<OrganSpec>,
    pub grid: GridSpec,
    pub seed: u64,
    /// Half-width of the joint blend band (mm); defaults to 0.8 * radius.
    pub blend_band: Option<f64>,
    /// Circumferential mesh resolution.
    pub segments: usize,
    /// Intensity noise amplitude (uniform, seeded); 0 disables.
    pub noise: f64,
}

impl PhantomSpec {
    pub fn chain(parts: usize, grid: GridSpec, seed: u64) -> Self {
        PhantomSpec {
            topology: Topology::Chain,
            parts,
            limb_length: 40.0,
            limb_radius: 14.0,
            organs: Vec::new(),
            grid,
            seed,
            blend_band: None,
            segments: 16,
            noise: 0.0,
        }
    }

    pub fn biped(grid: GridSpec, seed: u64) -> Self {
        PhantomSpec {
            topology: Topology::Biped,
            parts: 10,
            limb_length: 40.0,
            limb_radius: 14.0,
            organs: Vec::new(),
            grid,
            seed,
            blend_band: None,
            segments: 16,
            noise: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.limb_radius <= 0.0 || self.limb_length <= 0.0 {
            return Err(Error::SpecInvalid("limb dimensions must be positive".into()));
        }
        if self.limb_radius >= self.limb_length / 2.0 {
            return Err(Error::SpecInvalid(format!(
                "limb radius {} must be below half the limb length {}",
                self.limb_radius, self.limb_length
            )));
        }
        if self.topology == Topology::Chain && self.parts == 0 {
            return Err(Error::SpecInvalid("chain needs at least one part".into()));
        }
        if self.segments < 6 {
            return Err(Error::SpecInvalid("need at least 6 circumferential segments".into()));
        }
        for (i, o) in self.organs.iter().enumerate() {
            if o.radius <= 0.0 {
                return Err(Error::SpecInvalid(format!("organ {i} has non-positive radius")));
            }
        }
        Ok(())
    }
}

/// One rigid part: the capsule from `p0` (its joint) to `p1`.
#[derive(Clone, Debug)]
pub struct PartGeometry {
    pub p0: Vector3<f64>,
    pub p1: Vector3<f64>,
    pub radius: f64,
}

impl PartGeometry {
    pub fn axis(&self) -> Vector3<f64> {
        (self.p1 - self.p0).normalize()
    }

    pub fn length(&self) -> f64 {
        (self.p1 - self.p0).norm()
    }

    /// Signed distance of a point to the capsule surface.
    pub fn sdf(&self, x: &Vector3<f64>) -> f64 {
        let axis = self.p1 - self.p0;
        let t = ((x - self.p0).dot(&axis) / axis.norm_squared()).clamp(0.0, 1.0);
        let closest = self.p0 + axis * t;
        (x - closest).norm() - self.radius
    }
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub tree: KinematicTree,
    pub parts: Vec<PartGeometry>,
    pub mesh: SurfaceMesh,
    pub vertex_weights: Vec<Vec<f64>>,
    /// Canonical intensity image; `mask` is its interior.
    pub image: VolumeGrid,
    pub mask: Vec<bool>,
    /// Integer-valued organ labels (organ index + 1, 0 background).
    pub labels: VolumeGrid,
    /// Four analytic shape modes, orthogonalized.
    pub basis: ShapeBasis,
    pub spec: PhantomSpec,
}

fn skeleton(spec: &PhantomSpec) -> Result<(KinematicTree, Vec<PartGeometry>)> {
    let l = spec.limb_length;
    let r = spec.limb_radius;
    match spec.topology {
        Topology::Chain => {
            let mut parents = Vec::new();
            let mut joints = Vec::new();
            let mut names = Vec::new();
            let mut parts = Vec::new();
            for k in 0..spec.parts {
                parents.push(if k == 0 { None } else { Some(k - 1) });
                let z0 = k as f64 * l;
                joints.push(Vector3::new(0.0, 0.0, z0));
                names.push(format!("seg{k}"));
                parts.push(PartGeometry {
                    p0: Vector3::new(0.0, 0.0, z0),
                    p1: Vector3::new(0.0, 0.0, z0 + l),
                    radius: r,
                });
            }
            Ok((KinematicTree::new(parents, joints, names)?, parts))
        }
        Topology::Biped => {
            // Proportions scale with limb_length / limb_radius.
            let s = l / 40.0;
            let torso_len = 60.0 * s;
            let torso_r = 1.15 * r;
            let head_len = 24.0 * s;
            let head_r = 0.8 * r;
            let arm_len = 30.0 * s;
            let arm_r = 0.6 * r;
            let leg_len = 38.0 * s;
            let leg_r = 0.72 * r;
            let shoulder_x = torso_r * 0.85;
            let shoulder_z = torso_len * 0.86;
            let hip_x = torso_r * 0.55;

            let mut parents = vec![None];
            let mut joints = vec![Vector3::new(0.0, 0.0, 0.0)];
            let mut names = vec!["torso".to_string()];
            let mut parts = vec![PartGeometry {
                p0: Vector3::new(0.0, 0.0, 0.0),
                p1: Vector3::new(0.0, 0.0, torso_len),
                radius: torso_r,
            }];

            // Head.
            parents.push(Some(0));
            joints.push(Vector3::new(0.0, 0.0, torso_len));
            names.push("head".into());
            parts.push(PartGeometry {
                p0: Vector3::new(0.0, 0.0, torso_len),
                p1: Vector3::new(0.0, 0.0, torso_len + head_len),
                radius: head_r,
            });

            // Arms: upper + forearm per side, along +-x.
            for (side, sx) in [("l", -1.0), ("r", 1.0)] {
                let shoulder = Vector3::new(sx * shoulder_x, 0.0, shoulder_z);
                let elbow = Vector3::new(sx * (shoulder_x + arm_len), 0.0, shoulder_z);
                let wrist = Vector3::new(sx * (shoulder_x + 2.0 * arm_len), 0.0, shoulder_z);
                parents.push(Some(0));
                joints.push(shoulder);
                names.push(format!("{side}_upper_arm"));
                parts.push(PartGeometry { p0: shoulder, p1: elbow, radius: arm_r });
                let upper_index = parts.len() - 1;
                parents.push(Some(upper_index));
                joints.push(elbow);
                names.push(format!("{side}_forearm"));
                parts.push(PartGeometry { p0: elbow, p1: wrist, radius: arm_r });
            }

            // Legs: thigh + calf per side, along -z.
            for (side, sx) in [("l", -1.0), ("r", 1.0)] {
                let hip = Vector3::new(sx * hip_x, 0.0, 0.0);
                let knee = Vector3::new(sx * hip_x, 0.0, -leg_len);
                let ankle = Vector3::new(sx * hip_x, 0.0, -2.0 * leg_len);
                parents.push(Some(0));
                joints.push(hip);
                names.push(format!("{side}_thigh"));
                parts.push(PartGeometry { p0: hip, p1: knee, radius: leg_r });
                let thigh_index = parts.len() - 1;
                parents.push(Some(thigh_index));
                joints.push(knee);
                names.push(format!("{side}_calf"));
                parts.push(PartGeometry { p0: knee, p1: ankle, radius: leg_r });
            }

            Ok((KinematicTree::new(parents, joints, names)?, parts))
        }
    }
}

/// Closed capsule mesh along a segment. Orientation is fixed afterwards by
/// a winding-number probe at the capsule center.
fn capsule_mesh(part: &PartGeometry, segments: usize) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let cap_rings = 3usize;
    let cyl_rings = ((part.length() / part.radius).ceil() as usize).clamp(2, 10);
    let w = part.axis();
    let pick = if w.x.abs() < 0.7 { Vector3::x() } else { Vector3::y() };
    let u = w.cross(&pick).normalize();
    let v = w.cross(&u);

    let mut rings: Vec<(Vector3<f64>, f64)> = Vec::new();
    for i in 1..=cap_rings {
        let phi = -std::f64::consts::FRAC_PI_2
            + std::f64::consts::FRAC_PI_2 * i as f64 / cap_rings as f64;
        rings.push((part.p0 + w * (part.radius * phi.sin()), part.radius * phi.cos()));
    }
    for i in 1..=cyl_rings {
        let t = i as f64 / cyl_rings as f64;
        rings.push((part.p0 + (part.p1 - part.p0) * t, part.radius));
    }
    for i in 1..cap_rings {
        let phi = std::f64::consts::FRAC_PI_2 * i as f64 / cap_rings as f64;
        rings.push((part.p1 + w * (part.radius * phi.sin()), part.radius * phi.cos()));
    }

    let mut vertices = Vec::new();
    vertices.push(part.p0 - w * part.radius);
    for (center, radius) in &rings {
        for s in 0..segments {
            let a = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            vertices.push(center + (u * a.cos() + v * a.sin()) * *radius);
        }
    }
    vertices.push(part.p1 + w * part.radius);

    let ring_base = |r: usize| 1 + r * segments;
    let mut faces = Vec::new();
    for s in 0..segments {
        let s1 = (s + 1) % segments;
        faces.push([0, ring_base(0) + s1, ring_base(0) + s]);
    }
    for r in 0..rings.len() - 1 {
        for s in 0..segments {
            let s1 = (s + 1) % segments;
            let a = ring_base(r) + s;
            let b = ring_base(r) + s1;
            let c = ring_base(r + 1) + s1;
            let d = ring_base(r + 1) + s;
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    let top = vertices.len() - 1;
    let last = rings.len() - 1;
    for s in 0..segments {
        let s1 = (s + 1) % segments;
        faces.push([top, ring_base(last) + s, ring_base(last) + s1]);
    }
    (vertices, faces)
}

/// Smooth ramp: 0 at s <= -1, 0.5 at 0, 1 at s >= 1.
fn ramp(s: f64) -> f64 {
    if s <= -1.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        0.5 * (1.0 + (std::f64::consts::FRAC_PI_2 * s).sin())
    }
}

/// Root-to-leaf path through the part whose capsule is closest to `x`,
/// descending by smallest SDF (ties to the smallest index).
fn root_to_leaf_path(tree: &KinematicTree, parts: &[PartGeometry], x: &Vector3<f64>) -> Vec<usize> {
    let k = parts.len();
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, p) in parts.iter().enumerate() {
        let d = p.sdf(x);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    let mut path = tree.root_path(best);
    // Extend to a leaf, preferring the nearest child.
    let children: Vec<Vec<usize>> = {
        let mut c = vec![Vec::new(); k];
        for i in 0..k {
            if let Some(p) = tree.parent(i) {
                c[p].push(i);
            }
        }
        c
    };
    let mut cur = best;
    while !children[cur].is_empty() {
        let next = *children[cur]
            .iter()
            .min_by(|&&a, &&b| parts[a].sdf(x).total_cmp(&parts[b].sdf(x)))
            .unwrap();
        path.push(next);
        cur = next;
    }
    path
}

/// Skinning weights as a pure function of position: telescoping ramps along
/// the root-to-leaf path. Exactly on the simplex by construction, pure far
/// from joints, (0.5, 0.5) on joint planes.
pub fn skeleton_weights(
    tree: &KinematicTree,
    parts: &[PartGeometry],
    band: f64,
    x: &Vector3<f64>,
) -> Vec<f64> {
    let path = root_to_leaf_path(tree, parts, x);
    let mut w = vec![0.0; parts.len()];
    // beta[i] is the blend across the joint between path[i-1] and path[i].
    let mut carry = 1.0;
    for (pos, &part) in path.iter().enumerate() {
        let beta_next = if pos + 1 < path.len() {
            let child = path[pos + 1];
            let t = (x - tree.rest_joint(child)).dot(&parts[child].axis());
            ramp(t / band)
        } else {
            0.0
        };
        w[part] = carry * (1.0 - beta_next);
        carry *= beta_next;
    }
    w
}

pub fn build_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let (tree, parts) = skeleton(spec)?;
    let band = spec.blend_band.unwrap_or(0.8 * spec.limb_radius);

    // Union-of-closed-components surface; orientation fixed per component.
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for part in &parts {
        let (mut pv, pf) = capsule_mesh(part, spec.segments);
        let offset = vertices.len();
        let component = SurfaceMesh {
            vertices: pv.clone(),
            faces: pf.clone(),
        };
        let center = (part.p0 + part.p1) * 0.5;
        let flip = component.winding_number(&center) < 0.0;
        for f in &pf {
            if flip {
                faces.push([offset + f[0], offset + f[2], offset + f[1]]);
            } else {
                faces.push([offset + f[0], offset + f[1], offset + f[2]]);
            }
        }
        vertices.append(&mut pv);
    }
    let mesh = SurfaceMesh::new(vertices, faces)?;

    let vertex_weights: Vec<Vec<f64>> = mesh
        .vertices
        .iter()
        .map(|v| skeleton_weights(&tree, &parts, band, v))
        .collect();

    // Interior mask and image from the analytic union SDF.
    let grid = spec.grid;
    let n = grid.voxel_count();
    let mut mask = vec![false; n];
    let mut image = VolumeGrid::zeros(grid, 1);
    let mut labels = VolumeGrid::zeros(grid, 1);
    let k = parts.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    for idx in 0..n {
        let [i, j, kk] = grid.unravel(idx);
        let x = grid.world_at(i, j, kk);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (p, part) in parts.iter().enumerate() {
            let d = part.sdf(&x);
            if d < best_d {
                best_d = d;
                best = p;
            }
        }
        let noise = if spec.noise > 0.0 { rng.random_range(-spec.noise..spec.noise) } else { 0.0 };
        if best_d <= 0.0 {
            mask[idx] = true;
            let base = 0.35 + 0.5 * best as f64 / k.max(2) as f64;
            let mut value = base;
            for (oi, organ) in spec.organs.iter().enumerate() {
                let c = Vector3::new(organ.center[0], organ.center[1], organ.center[2]);
                if (x - c).norm() <= organ.radius {
                    value = organ.intensity;
                    labels.set(idx, 0, (oi + 1) as f64);
                    break;
                }
            }
            image.set(idx, 0, (value + noise).clamp(0.0, 1.0));
        }
    }
    image.mask = Some(mask.clone());
    labels.mask = Some(mask.clone());

    let basis = analytic_basis(&mesh, &tree, &parts)?;
    Ok(Phantom {
        tree,
        parts,
        mesh,
        vertex_weights,
        image,
        mask,
        labels,
        basis,
        spec: spec.clone(),
    })
}

/// Four analytic shape modes (global scale, axial stretch, thickening,
/// lateral bow), Gram-Schmidt orthogonalized and scaled so the largest
/// per-vertex offset is 1 mm.
fn analytic_basis(
    mesh: &SurfaceMesh,
    tree: &KinematicTree,
    parts: &[PartGeometry],
) -> Result<ShapeBasis> {
    let center = mesh.vertices.iter().sum::<Vector3<f64>>() / mesh.vertices.len() as f64;
    let nearest_part = |x: &Vector3<f64>| -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in parts.iter().enumerate() {
            let d = p.sdf(x);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    };
    let mut modes: Vec<Vec<Vector3<f64>>> = Vec::new();
    // Global scale.
    modes.push(mesh.vertices.iter().map(|v| (v - center) * 0.02).collect());
    // Axial stretch within each part.
    modes.push(
        mesh.vertices
            .iter()
            .map(|v| {
                let p = &parts[nearest_part(v)];
                let a = (v - p.p0).dot(&p.axis());
                p.axis() * (a / p.length())
            })
            .collect(),
    );
    // Radial thickening.
    modes.push(
        mesh.vertices
            .iter()
            .map(|v| {
                let p = &parts[nearest_part(v)];
                let axis = p.p1 - p.p0;
                let t = ((v - p.p0).dot(&axis) / axis.norm_squared()).clamp(0.0, 1.0);
                let radial = v - (p.p0 + axis * t);
                let norm = radial.norm();
                if norm > 1e-9 {
                    radial / norm
                } else {
                    Vector3::zeros()
                }
            })
            .collect(),
    );
    // Lateral bow, quadratic along each part axis.
    modes.push(
        mesh.vertices
            .iter()
            .map(|v| {
                let p = &parts[nearest_part(v)];
                let a = ((v - p.p0).dot(&p.axis()) / p.length()).clamp(-0.3, 1.3);
                let lateral = {
                    let w = p.axis();
                    let pick = if w.y.abs() < 0.7 { Vector3::y() } else { Vector3::z() };
                    w.cross(&pick).normalize()
                };
                lateral * (a * a)
            })
            .collect(),
    );
    let _ = tree;

    // Gram-Schmidt over flattened 3N vectors, then scale each mode so its
    // largest vertex offset is 1 mm.
    let dot = |a: &[Vector3<f64>], b: &[Vector3<f64>]| -> f64 {
        a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
    };
    let mut ortho: Vec<Vec<Vector3<f64>>> = Vec::new();
    for mut mode in modes {
        for prev in &ortho {
            let coeff = dot(&mode, prev) / dot(prev, prev);
            for (m, p) in mode.iter_mut().zip(prev) {
                *m -= p * coeff;
            }
        }
        let max_offset = mode.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if max_offset > 1e-9 {
            for m in mode.iter_mut() {
                *m /= max_offset;
            }
            ortho.push(mode);
        }
    }
    ShapeBasis::new(mesh.vertices.clone(), ortho)
}

/// A posed (native) phantom image with its ground-truth forward field.
#[derive(Clone, Debug)]
pub struct PosedPhantom {
    pub native_image: VolumeGrid,
    /// Canonical -> native displacement on the canonical grid.
    pub forward_field: VolumeGrid,
    /// Inverse displacement used to synthesize the native image.
    pub inverse_field: VolumeGrid,
}

/// Synthesize a native image by pulling the canonical image back through
/// the inverse of the articulated deformation, giving a known ground-truth
/// correspondence.
pub fn pose_phantom(
    phantom: &Phantom,
    weights: &WeightField,
    pose: &Pose,
    method: DeformMethod,
) -> Result<PosedPhantom> {
    let transforms = forward_kinematics(&phantom.tree, pose)?;
    let field = ArticulatedField::new(method, &transforms, weights)?;
    let forward = field.sample_dense(&phantom.image.spec)?;
    let inverse = invert_field(&forward, 50, 0.05);
    let native = resample_image(
        &phantom.image,
        &inverse.grid,
        &phantom.image.spec,
        Interpolation::Trilinear,
    );
    Ok(PosedPhantom {
        native_image: native,
        forward_field: forward,
        inverse_field: inverse.grid,
    })
}

/// Deterministic per-subject shape coefficients for a cohort.
pub fn cohort_betas(seed: u64, subjects: usize, beta_dim: usize, scale: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..subjects)
        .map(|_| (0..beta_dim).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3;
    use crate::weights::{rasterize_boundary_weights, solve_weights, SolveConfig};
    use approx::assert_relative_eq;

    fn small_grid(n: usize, half: f64) -> GridSpec {
        GridSpec::centered_cube(n, half)
    }

    #[test]
    fn one_part_capsule_volume_matches_analytic() {
        let grid = GridSpec::new([96, 96, 96], [1.05; 3], [-50.0, -50.0, -30.0]).unwrap();
        let spec = PhantomSpec::chain(1, grid, 7);
        let phantom = build_phantom(&spec).unwrap();
        let voxels = phantom.mask.iter().filter(|&&m| m).count();
        let measured = voxels as f64 * grid.voxel_volume();
        let r = spec.limb_radius;
        let l = spec.limb_length;
        let analytic = std::f64::consts::PI * r * r * l
            + 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
        let rel = (measured - analytic).abs() / analytic;
        assert!(rel <= 0.02, "capsule volume off by {rel}");
        // Single part: every vertex weight is e_0.
        assert!(phantom.vertex_weights.iter().all(|w| w == &vec![1.0]));
    }

    #[test]
    fn chain_weights_ramp_across_the_joint() {
        let grid = small_grid(48, 60.0);
        let spec = PhantomSpec::chain(2, grid, 1);
        let phantom = build_phantom(&spec).unwrap();
        // Joint plane is z = limb_length.
        let joint_z = spec.limb_length;
        for (v, w) in phantom.mesh.vertices.iter().zip(&phantom.vertex_weights) {
            let sum: f64 = w.iter().sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(w.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));
            if (v.z - joint_z).abs() < 1e-9 {
                assert_relative_eq!(w[0], 0.5, epsilon = 1e-9);
                assert_relative_eq!(w[1], 0.5, epsilon = 1e-9);
            }
            let band = 0.8 * spec.limb_radius;
            if v.z < joint_z - band - 1e-9 {
                assert_eq!(w[0], 1.0, "far proximal vertex not pure");
            }
            if v.z > joint_z + band + 1e-9 {
                assert_eq!(w[1], 1.0, "far distal vertex not pure");
            }
        }
    }

    #[test]
    fn phantom_is_deterministic() {
        let grid = small_grid(32, 60.0);
        let mut spec = PhantomSpec::chain(2, grid, 42);
        spec.noise = 0.05;
        let a = build_phantom(&spec).unwrap();
        let b = build_phantom(&spec).unwrap();
        assert_eq!(a.image.data, b.image.data);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.mesh.vertices, b.mesh.vertices);
        assert_eq!(a.vertex_weights, b.vertex_weights);
    }

    #[test]
    fn biped_mesh_is_closed_and_oriented() {
        let grid = small_grid(32, 100.0);
        let spec = PhantomSpec::biped(grid, 3);
        let phantom = build_phantom(&spec).unwrap();
        phantom.mesh.validate().unwrap();
        assert_eq!(phantom.tree.part_count(), 10);
        // Winding number sees the torso interior once.
        let inside = Vector3::new(0.0, 0.0, 30.0);
        assert!(phantom.mesh.winding_number(&inside) >= 0.5);
        // Shape basis is orthogonal with four modes.
        assert_eq!(phantom.basis.beta_dim(), 4);
    }

    #[test]
    fn rejects_degenerate_spec() {
        let grid = small_grid(16, 50.0);
        let mut spec = PhantomSpec::chain(2, grid, 0);
        spec.limb_radius = 30.0;
        assert!(matches!(build_phantom(&spec), Err(Error::SpecInvalid(_))));
    }

    fn solved_weights(phantom: &Phantom) -> WeightField {
        let boundary = rasterize_boundary_weights(
            &phantom.mesh,
            &phantom.vertex_weights,
            &phantom.image.spec,
            &phantom.mask,
        )
        .unwrap();
        solve_weights(&phantom.image.spec, &phantom.mask, &boundary, &SolveConfig::default())
            .unwrap()
    }

    #[test]
    fn zero_pose_leaves_canonical_image() {
        let grid = small_grid(32, 70.0);
        let mut spec = PhantomSpec::chain(2, grid, 5);
        spec.organs = vec![OrganSpec { center: [0.0, 0.0, 20.0], radius: 8.0, intensity: 0.95 }];
        let phantom = build_phantom(&spec).unwrap();
        let weights = solved_weights(&phantom);
        let posed =
            pose_phantom(&phantom, &weights, &Pose::zeros(2), DeformMethod::KtPolyRigid).unwrap();
        for idx in 0..grid.voxel_count() {
            assert_relative_eq!(
                posed.native_image.get(idx, 0),
                phantom.image.get(idx, 0),
                epsilon = 1e-9
            );
        }
    }

    fn intensity_centroid(image: &VolumeGrid, threshold: f64) -> Vector3<f64> {
        let mut acc = Vector3::zeros();
        let mut count = 0.0;
        for idx in 0..image.spec.voxel_count() {
            if image.get(idx, 0) >= threshold {
                let [i, j, k] = image.spec.unravel(idx);
                acc += image.spec.world_at(i, j, k);
                count += 1.0;
            }
        }
        acc / count
    }

    #[test]
    fn rigid_global_motion_moves_organ_centroid() {
        let grid = small_grid(48, 80.0);
        let mut spec = PhantomSpec::chain(2, grid, 5);
        let organ_center = Vector3::new(0.0, 0.0, 20.0);
        spec.organs =
            vec![OrganSpec { center: [0.0, 0.0, 20.0], radius: 9.0, intensity: 0.95 }];
        let phantom = build_phantom(&spec).unwrap();
        let weights = solved_weights(&phantom);
        // Rotating the root rotates the whole chain rigidly.
        let mut pose = Pose::zeros(2);
        pose.theta[0] = Vector3::new(0.5, 0.0, 0.0);
        let posed = pose_phantom(&phantom, &weights, &pose, DeformMethod::KtPolyRigid).unwrap();
        let transforms = forward_kinematics(&phantom.tree, &pose).unwrap();
        let expected = se3::apply(&transforms[0], &organ_center);
        let centroid = intensity_centroid(&posed.native_image, 0.9);
        let voxel = grid.spacing[0];
        assert!(
            (centroid - expected).norm() <= 0.5 * voxel,
            "centroid off by {} mm",
            (centroid - expected).norm()
        );
    }

    #[test]
    fn elbow_bend_moves_distal_organ_with_its_part() {
        let grid = small_grid(48, 90.0);
        let mut spec = PhantomSpec::chain(2, grid, 5);
        let organ_center = Vector3::new(0.0, 0.0, 60.0); // mid part 1
        spec.organs =
            vec![OrganSpec { center: [0.0, 0.0, 60.0], radius: 9.0, intensity: 0.95 }];
        let phantom = build_phantom(&spec).unwrap();
        let weights = solved_weights(&phantom);
        let mut pose = Pose::zeros(2);
        pose.theta[1] = Vector3::new(1.0, 0.0, 0.0);
        let posed = pose_phantom(&phantom, &weights, &pose, DeformMethod::KtPolyRigid).unwrap();
        let transforms = forward_kinematics(&phantom.tree, &pose).unwrap();
        let expected = se3::apply(&transforms[1], &organ_center);
        let centroid = intensity_centroid(&posed.native_image, 0.9);
        let voxel = grid.spacing[0];
        assert!(
            (centroid - expected).norm() <= voxel,
            "centroid off by {} mm (expected {expected:?}, got {centroid:?})",
            (centroid - expected).norm()
        );
    }

    #[test]
    fn cohort_betas_are_seeded_and_distinct() {
        let a = cohort_betas(9, 3, 4, 0.2);
        let b = cohort_betas(9, 3, 4, 0.2);
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert!(a.iter().flatten().all(|&x| x.abs() <= 0.2));
    }
}
