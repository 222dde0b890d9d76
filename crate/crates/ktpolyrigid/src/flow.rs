//! Shape-standardizing diffeomorphic flow.
//!
//! The boundary moves along a linear path in shape space, so every vertex
//! has a constant velocity. Mean value coordinates extend that boundary
//! velocity to the interior, and the flow ODE
//! `dphi/dt = v(phi(t), t)` is integrated with explicit Euler, recomputing
//! the coordinates against the evolving boundary at every step (a freeze
//! option reuses the initial coordinates for speed comparisons).

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kinematics::ShapeBasis;
use crate::mesh::{closest_point_on_triangle, SurfaceMesh};
use crate::volume::{GridSpec, VolumeGrid};

/// Points closer to the surface than this (mm) fall back to barycentric
/// interpolation at the nearest surface point.
pub const DEFAULT_SURFACE_EPSILON: f64 = 1e-6;

/// Guard for the on-face case of the spherical-triangle formula.
const ON_FACE_EPSILON: f64 = 1e-7;

/// Guard against faces coplanar with the query point.
const COPLANAR_EPSILON: f64 = 1e-10;

/// Reusable buffers for repeated mean-value-coordinate evaluations.
#[derive(Default)]
pub struct MvcWorkspace {
    dist: Vec<f64>,
    unit: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
}

pub(crate) enum MvcOutcome {
    Inside,
    /// The unnormalized weight sum was not positive: the point is outside
    /// the (union of) closed components.
    Outside,
}

/// Mean value coordinates of `x` with respect to a closed triangle mesh,
/// normalized to sum to one.
pub fn mvc_weights(x: &Vector3<f64>, mesh: &SurfaceMesh) -> Result<Vec<f64>> {
    let mut ws = MvcWorkspace::default();
    match mvc_weights_into(x, &mesh.vertices, &mesh.faces, DEFAULT_SURFACE_EPSILON, &mut ws)? {
        MvcOutcome::Inside => Ok(ws.weights),
        MvcOutcome::Outside => Err(Error::SpecInvalid(
            "mean value coordinates evaluated outside the mesh".into(),
        )),
    }
}

/// Core mean-value evaluation (Ju/Schaefer/Warren spherical formulation).
/// On success `ws.weights` holds normalized coordinates.
pub(crate) fn mvc_weights_into(
    x: &Vector3<f64>,
    vertices: &[Vector3<f64>],
    faces: &[[usize; 3]],
    epsilon_surface: f64,
    ws: &mut MvcWorkspace,
) -> Result<MvcOutcome> {
    let n = vertices.len();
    ws.dist.clear();
    ws.dist.reserve(n);
    ws.unit.clear();
    ws.unit.reserve(n);
    for v in vertices {
        let d = (v - x).norm();
        if d <= epsilon_surface {
            return Err(Error::OnSurface { distance: d, epsilon: epsilon_surface });
        }
        ws.dist.push(d);
        ws.unit.push((v - x) / d);
    }
    ws.weights.clear();
    ws.weights.resize(n, 0.0);

    for f in faces {
        let idx = [f[0], f[1], f[2]];
        let u = [ws.unit[idx[0]], ws.unit[idx[1]], ws.unit[idx[2]]];
        let mut theta = [0.0f64; 3];
        for i in 0..3 {
            let l = (u[(i + 1) % 3] - u[(i + 2) % 3]).norm();
            theta[i] = 2.0 * (0.5 * l).clamp(0.0, 1.0).asin();
        }
        let h = 0.5 * (theta[0] + theta[1] + theta[2]);
        if std::f64::consts::PI - h < ON_FACE_EPSILON {
            // x lies on this face.
            let tri = [vertices[idx[0]], vertices[idx[1]], vertices[idx[2]]];
            let (p, _) = closest_point_on_triangle(x, &tri);
            return Err(Error::OnSurface {
                distance: (p - x).norm(),
                epsilon: epsilon_surface,
            });
        }
        let mut c = [0.0f64; 3];
        let mut s = [0.0f64; 3];
        let det = u[0].dot(&u[1].cross(&u[2]));
        let sign = if det >= 0.0 { 1.0 } else { -1.0 };
        let mut skip = false;
        for i in 0..3 {
            let denom = (theta[(i + 1) % 3]).sin() * (theta[(i + 2) % 3]).sin();
            c[i] = ((2.0 * h.sin() * (h - theta[i]).sin()) / denom - 1.0).clamp(-1.0, 1.0);
            s[i] = sign * (1.0 - c[i] * c[i]).max(0.0).sqrt();
            if s[i].abs() <= COPLANAR_EPSILON {
                // x is coplanar with the face but outside it; ignore.
                skip = true;
            }
        }
        if skip {
            continue;
        }
        for i in 0..3 {
            let w = (theta[i] - c[(i + 1) % 3] * theta[(i + 2) % 3]
                - c[(i + 2) % 3] * theta[(i + 1) % 3])
                / (ws.dist[idx[i]] * (theta[(i + 1) % 3]).sin() * s[(i + 2) % 3]);
            ws.weights[idx[i]] += w;
        }
    }

    let total: f64 = ws.weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Ok(MvcOutcome::Outside);
    }
    for w in ws.weights.iter_mut() {
        *w /= total;
    }
    Ok(MvcOutcome::Inside)
}

/// A linear path in shape space with an Euler step count.
#[derive(Clone, Debug)]
pub struct FlowSpec {
    pub beta_start: Vec<f64>,
    pub beta_end: Vec<f64>,
    pub steps: usize,
    /// Recompute coordinates against the evolving boundary each step
    /// (default); `false` freezes the initial coordinates.
    pub recompute_weights: bool,
}

impl FlowSpec {
    pub fn new(beta_start: Vec<f64>, beta_end: Vec<f64>, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::SpecInvalid("flow step count must be >= 1".into()));
        }
        Ok(FlowSpec { beta_start, beta_end, steps, recompute_weights: true })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointStatus {
    Ok,
    /// Velocity came from the nearest-surface-point fallback at least once.
    SnappedToSurface,
    /// The point exited the evolving domain and was pulled back inside.
    LeftDomain,
}

#[derive(Clone, Debug)]
pub struct FlowResult {
    pub points: Vec<Vector3<f64>>,
    pub status: Vec<PointStatus>,
}

struct StepContext<'a> {
    vertices: &'a [Vector3<f64>],
    faces: &'a [[usize; 3]],
    velocities: &'a [Vector3<f64>],
    inward_nudge: f64,
}

/// Velocity by barycentric interpolation at the nearest surface point.
fn fallback_velocity(ctx: &StepContext, p: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let mut best_d = f64::INFINITY;
    let mut best_face = 0usize;
    let mut best_bary = [0.0f64; 3];
    let mut best_point = *p;
    for (fi, f) in ctx.faces.iter().enumerate() {
        let tri = [ctx.vertices[f[0]], ctx.vertices[f[1]], ctx.vertices[f[2]]];
        let (q, bary) = closest_point_on_triangle(p, &tri);
        let d = (q - p).norm();
        if d < best_d {
            best_d = d;
            best_face = fi;
            best_bary = bary;
            best_point = q;
        }
    }
    let f = ctx.faces[best_face];
    let v = ctx.velocities[f[0]] * best_bary[0]
        + ctx.velocities[f[1]] * best_bary[1]
        + ctx.velocities[f[2]] * best_bary[2];
    (v, best_point)
}

/// Integrate points through the shape flow. The mesh supplies the face
/// topology; vertex positions are taken from the basis along the beta path.
pub fn integrate_flow(
    spec: &FlowSpec,
    basis: &ShapeBasis,
    mesh0: &SurfaceMesh,
    points: &[Vector3<f64>],
) -> Result<FlowResult> {
    if mesh0.vertices.len() != basis.vertex_count() {
        return Err(Error::DimensionMismatch {
            expected: basis.vertex_count(),
            got: mesh0.vertices.len(),
        });
    }
    let velocities = basis.boundary_velocity(&spec.beta_start, &spec.beta_end)?;
    let dt = 1.0 / spec.steps as f64;
    let faces = &mesh0.faces;

    let mut current: Vec<Vector3<f64>> = points.to_vec();
    let mut status = vec![PointStatus::Ok; points.len()];

    // Frozen-weight mode evaluates coordinates once against the start shape.
    let start_vertices = basis.shape_vertices(&spec.beta_start)?;
    let frozen: Option<Vec<Result<Vec<f64>>>> = if spec.recompute_weights {
        None
    } else {
        Some(
            points
                .par_iter()
                .map_init(MvcWorkspace::default, |ws, p| {
                    match mvc_weights_into(
                        p,
                        &start_vertices,
                        faces,
                        DEFAULT_SURFACE_EPSILON,
                        ws,
                    )? {
                        MvcOutcome::Inside => Ok(ws.weights.clone()),
                        MvcOutcome::Outside => Err(Error::SpecInvalid(
                            "flow point starts outside the mesh".into(),
                        )),
                    }
                })
                .collect(),
        )
    };

    let inward_nudge = 1e-3 * mesh0.bbox_diagonal().max(1e-9);
    for step in 0..spec.steps {
        let t = step as f64 * dt;
        let beta_t: Vec<f64> = spec
            .beta_start
            .iter()
            .zip(&spec.beta_end)
            .map(|(s, e)| (1.0 - t) * s + t * e)
            .collect();
        let vertices = basis.shape_vertices(&beta_t)?;
        let ctx = StepContext {
            vertices: &vertices,
            faces,
            velocities: &velocities,
            inward_nudge,
        };
        let updates: Vec<Result<(Vector3<f64>, PointStatus)>> = current
            .par_iter()
            .enumerate()
            .map_init(MvcWorkspace::default, |ws, (pi, p)| {
                let prior = status[pi];
                if let Some(frozen) = &frozen {
                    let w = frozen[pi].as_ref().map_err(|e| clone_err(e))?;
                    let mut v = Vector3::zeros();
                    for (wn, vel) in w.iter().zip(ctx.velocities) {
                        v += vel * *wn;
                    }
                    return Ok((p + v * dt, prior));
                }
                match mvc_weights_into(p, ctx.vertices, ctx.faces, DEFAULT_SURFACE_EPSILON, ws) {
                    Ok(MvcOutcome::Inside) => {
                        let mut v = Vector3::zeros();
                        for (wn, vel) in ws.weights.iter().zip(ctx.velocities) {
                            if *wn != 0.0 {
                                v += vel * *wn;
                            }
                        }
                        Ok((p + v * dt, prior))
                    }
                    Ok(MvcOutcome::Outside) => {
                        // Euler overshoot: pull back just inside the surface
                        // and keep going, flagged.
                        let (v, q) = fallback_velocity(&ctx, p);
                        let gap = q - p;
                        let pulled = if gap.norm() > 1e-12 {
                            q + gap.normalize() * ctx.inward_nudge
                        } else {
                            q
                        };
                        Ok((pulled + v * dt, PointStatus::LeftDomain))
                    }
                    Err(Error::OnSurface { .. }) => {
                        let (v, _) = fallback_velocity(&ctx, p);
                        let next = if prior == PointStatus::LeftDomain {
                            PointStatus::LeftDomain
                        } else {
                            PointStatus::SnappedToSurface
                        };
                        Ok((p + v * dt, next))
                    }
                    Err(e) => Err(e),
                }
            })
            .collect();
        for (pi, u) in updates.into_iter().enumerate() {
            let (p, st) = u?;
            current[pi] = p;
            status[pi] = st;
        }
    }
    Ok(FlowResult { points: current, status })
}

fn clone_err(e: &Error) -> Error {
    Error::SpecInvalid(format!("{e}"))
}

/// Dense displacement of the flow on a grid: in-mask voxel centers are
/// integrated, exterior voxels copy their nearest integrated voxel.
pub fn sample_dense_flow(
    spec: &FlowSpec,
    basis: &ShapeBasis,
    mesh0: &SurfaceMesh,
    grid: &GridSpec,
    mask: Option<&[bool]>,
) -> Result<VolumeGrid> {
    let n = grid.voxel_count();
    let all_mask;
    let mask = match mask {
        Some(m) => m,
        None => {
            all_mask = vec![true; n];
            &all_mask
        }
    };
    if mask.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: mask.len() });
    }
    let interior: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let points: Vec<Vector3<f64>> = interior
        .iter()
        .map(|&idx| {
            let [i, j, k] = grid.unravel(idx);
            grid.world_at(i, j, k)
        })
        .collect();
    let result = integrate_flow(spec, basis, mesh0, &points)?;
    let mut out = VolumeGrid::zeros(*grid, 3);
    for (slot, &idx) in interior.iter().enumerate() {
        let u = result.points[slot] - points[slot];
        out.data[idx * 3] = u.x;
        out.data[idx * 3 + 1] = u.y;
        out.data[idx * 3 + 2] = u.z;
    }
    crate::weights::extend_vector_field_to_exterior(grid, mask, &mut out.data);
    out.mask = Some(mask.to_vec());
    Ok(out)
}
