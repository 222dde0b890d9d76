//! Deformation-regularity diagnostics: Jacobian determinant fields, fold
//! percentages, and log2 |det J| statistics.

use std::time::Instant;

use rayon::prelude::*;

use crate::deform::{ArticulatedField, DeformMethod};
use crate::error::{Error, Result};
use crate::se3::RigidTransform;
use crate::volume::{GridSpec, VolumeGrid};
use crate::weights::WeightField;

/// Floor for |det| before taking logarithms, to keep the field finite.
const DET_FLOOR: f64 = 1e-18;

#[derive(Clone, Debug)]
pub struct RegularityReport {
    /// 100 * (voxels with det <= 0) / (interior voxel count).
    pub fold_percent: f64,
    pub mean_log2_absdet: f64,
    pub std_log2_absdet: f64,
    /// Two channels: log2 |det J| and the sign of det (+1 / 0 / -1).
    pub jacobian_field: VolumeGrid,
    /// Filled by [`compare_methods`] when timing is requested; otherwise 0.
    pub wall_time_ms: f64,
    /// Deterministic footprint estimate of the dense field plus the
    /// Jacobian buffers, not an OS measurement.
    pub peak_mem_mb: f64,
}

/// Determinant of the Jacobian of phi(x) = x + u(x) by central differences,
/// one-sided where a neighbor leaves the mask or the grid.
pub fn jacobian_determinant(field: &VolumeGrid, mask: Option<&[bool]>) -> Result<VolumeGrid> {
    if field.channels != 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: field.channels });
    }
    let spec = field.spec;
    if spec.dims.iter().any(|&d| d < 3) {
        return Err(Error::GridTooSmall { dims: spec.dims });
    }
    if let Some(m) = mask {
        if m.len() != spec.voxel_count() {
            return Err(Error::DimensionMismatch {
                expected: spec.voxel_count(),
                got: m.len(),
            });
        }
    }
    let in_domain = |i: isize, j: isize, k: isize| -> bool {
        if i < 0
            || j < 0
            || k < 0
            || i >= spec.dims[0] as isize
            || j >= spec.dims[1] as isize
            || k >= spec.dims[2] as isize
        {
            return false;
        }
        match mask {
            Some(m) => m[spec.linear_index(i as usize, j as usize, k as usize)],
            None => true,
        }
    };
    let n = spec.voxel_count();
    let data: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|idx| {
            if let Some(m) = mask {
                if !m[idx] {
                    return 1.0;
                }
            }
            let [i, j, k] = spec.unravel(idx);
            let c = [i as isize, j as isize, k as isize];
            let mut jac = [[0.0f64; 3]; 3];
            for axis in 0..3 {
                let mut lo = c;
                lo[axis] -= 1;
                let mut hi = c;
                hi[axis] += 1;
                let has_lo = in_domain(lo[0], lo[1], lo[2]);
                let has_hi = in_domain(hi[0], hi[1], hi[2]);
                let (a, b, span) = if has_lo && has_hi {
                    (lo, hi, 2.0 * spec.spacing[axis])
                } else if has_hi {
                    (c, hi, spec.spacing[axis])
                } else if has_lo {
                    (lo, c, spec.spacing[axis])
                } else {
                    // Isolated along this axis: no displacement gradient.
                    for row in 0..3 {
                        jac[row][axis] = if row == axis { 1.0 } else { 0.0 };
                    }
                    continue;
                };
                let ia = spec.linear_index(a[0] as usize, a[1] as usize, a[2] as usize);
                let ib = spec.linear_index(b[0] as usize, b[1] as usize, b[2] as usize);
                for row in 0..3 {
                    let du = (field.get(ib, row) - field.get(ia, row)) / span;
                    jac[row][axis] = du + if row == axis { 1.0 } else { 0.0 };
                }
            }
            det3(&jac)
        })
        .collect();
    let mut out = VolumeGrid { spec, channels: 1, data, mask: mask.map(|m| m.to_vec()) };
    if mask.is_none() {
        out.mask = None;
    }
    Ok(out)
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Summary statistics of a displacement field's Jacobian.
///
/// Folds are counted at det <= 0. The log2 statistics run over det > 0
/// voxels by default; `include_folds` switches them to |det| over all
/// interior voxels with |det| above a tiny floor.
pub fn regularity_report(
    field: &VolumeGrid,
    mask: Option<&[bool]>,
    include_folds: bool,
) -> Result<RegularityReport> {
    let det = jacobian_determinant(field, mask)?;
    let spec = det.spec;
    let mut jac = VolumeGrid::zeros(spec, 2);
    jac.mask = mask.map(|m| m.to_vec());
    let mut interior = 0usize;
    let mut folds = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for idx in 0..spec.voxel_count() {
        let inside = mask.map_or(true, |m| m[idx]);
        let d = det.get(idx, 0);
        let log2 = (d.abs().max(DET_FLOOR)).log2();
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        jac.set(idx, 0, log2);
        jac.set(idx, 1, sign);
        if !inside {
            continue;
        }
        interior += 1;
        if d <= 0.0 {
            folds += 1;
        }
        let use_voxel = if include_folds { d.abs() > DET_FLOOR } else { d > 0.0 };
        if use_voxel {
            sum += log2;
            sum_sq += log2 * log2;
            count += 1;
        }
    }
    let fold_percent = if interior == 0 { 0.0 } else { 100.0 * folds as f64 / interior as f64 };
    let (mean, std) = if count == 0 {
        (0.0, 0.0)
    } else {
        let mean = sum / count as f64;
        let var = (sum_sq / count as f64 - mean * mean).max(0.0);
        (mean, var.sqrt())
    };
    let peak_mem_mb = (spec.voxel_count() * (3 + 1 + 2) * 8) as f64 / 1e6;
    Ok(RegularityReport {
        fold_percent,
        mean_log2_absdet: mean,
        std_log2_absdet: std,
        jacobian_field: jac,
        wall_time_ms: 0.0,
        peak_mem_mb,
    })
}

/// One row of the method-comparison table.
#[derive(Clone, Debug)]
pub struct MethodRow {
    pub method: DeformMethod,
    pub pose_magnitude_rad: f64,
    pub report: Option<RegularityReport>,
    /// "ok" or the failure kind ("branch-ambiguity").
    pub status: String,
}

/// Evaluate each method on each posed transform set against one shared
/// weight field. Timing wraps the dense evaluation only; rows whose method
/// cannot represent the pose are recorded as failures rather than errors.
pub fn compare_methods(
    weights: &WeightField,
    poses: &[(f64, Vec<RigidTransform>)],
    grid: &GridSpec,
    methods: &[DeformMethod],
    include_folds: bool,
    with_timing: bool,
) -> Result<Vec<MethodRow>> {
    let mask = weights.grid.mask.clone();
    let mut rows = Vec::new();
    for &(magnitude, ref transforms) in poses {
        for &method in methods {
            let start = Instant::now();
            let dense = ArticulatedField::new(method, transforms, weights)
                .and_then(|f| f.sample_dense(grid));
            match dense {
                Ok(dense) => {
                    let elapsed = start.elapsed().as_secs_f64() * 1e3;
                    let mut report =
                        regularity_report(&dense, mask.as_deref(), include_folds)?;
                    if with_timing {
                        report.wall_time_ms = elapsed;
                    }
                    rows.push(MethodRow {
                        method,
                        pose_magnitude_rad: magnitude,
                        report: Some(report),
                        status: "ok".into(),
                    });
                }
                Err(Error::BranchAmbiguity { .. }) => rows.push(MethodRow {
                    method,
                    pose_magnitude_rad: magnitude,
                    report: None,
                    status: "branch-ambiguity".into(),
                }),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(rows)
}

/// Dice overlap of one label value between two label volumes.
pub fn dice(a: &VolumeGrid, b: &VolumeGrid, label: f64) -> f64 {
    assert_eq!(a.spec.dims, b.spec.dims, "label volumes must share a grid");
    let mut inter = 0usize;
    let mut count_a = 0usize;
    let mut count_b = 0usize;
    for idx in 0..a.spec.voxel_count() {
        let in_a = a.get(idx, 0) == label;
        let in_b = b.get(idx, 0) == label;
        count_a += in_a as usize;
        count_b += in_b as usize;
        inter += (in_a && in_b) as usize;
    }
    if count_a + count_b == 0 {
        return 1.0;
    }
    2.0 * inter as f64 / (count_a + count_b) as f64
}

/// CSV serialization of comparison rows. Failed rows leave the numeric
/// columns empty.
pub fn rows_to_csv(rows: &[MethodRow]) -> String {
    let mut out = String::from(
        "method,pose_magnitude_rad,fold_percent,mean_log2_absdet,std_log2_absdet,wall_time_ms,peak_mem_mb,status\n",
    );
    for row in rows {
        match &row.report {
            Some(r) => out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.3},{:.3},{}\n",
                row.method.name(),
                row.pose_magnitude_rad,
                r.fold_percent,
                r.mean_log2_absdet,
                r.std_log2_absdet,
                r.wall_time_ms,
                r.peak_mem_mb,
                row.status
            )),
            None => out.push_str(&format!(
                "{},{:.6},,,,,,{}\n",
                row.method.name(),
                row.pose_magnitude_rad,
                row.status
            )),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Vector3};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn affine_field(spec: &GridSpec, a: &Matrix3<f64>, b: &Vector3<f64>) -> VolumeGrid {
        // u(x) = (A - I) x + b so that phi(x) = A x + b.
        let mut g = VolumeGrid::zeros(*spec, 3);
        for idx in 0..spec.voxel_count() {
            let [i, j, k] = spec.unravel(idx);
            let x = spec.world_at(i, j, k);
            let u = a * x + b - x;
            g.data[idx * 3] = u.x;
            g.data[idx * 3 + 1] = u.y;
            g.data[idx * 3 + 2] = u.z;
        }
        g
    }

    #[test]
    fn identity_field_reports_clean() {
        let spec = GridSpec::new([8, 8, 8], [1.0; 3], [0.0; 3]).unwrap();
        let field = VolumeGrid::zeros(spec, 3);
        let r = regularity_report(&field, None, false).unwrap();
        assert_eq!(r.fold_percent, 0.0);
        assert_relative_eq!(r.mean_log2_absdet, 0.0, epsilon = 1e-12);
        assert_relative_eq!(r.std_log2_absdet, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_scale_has_log2_three() {
        let spec = GridSpec::new([9, 9, 9], [1.0; 3], [-4.0; 3]).unwrap();
        let field = affine_field(&spec, &(Matrix3::identity() * 2.0), &Vector3::zeros());
        let det = jacobian_determinant(&field, None).unwrap();
        for idx in 0..spec.voxel_count() {
            assert_relative_eq!(det.get(idx, 0), 8.0, epsilon = 1e-9);
        }
        let r = regularity_report(&field, None, false).unwrap();
        assert_relative_eq!(r.mean_log2_absdet, 3.0, epsilon = 1e-9);
        assert_relative_eq!(r.std_log2_absdet, 0.0, epsilon = 1e-9);
        assert_eq!(r.fold_percent, 0.0);
    }

    #[test]
    fn reflection_is_all_folds() {
        let spec = GridSpec::new([7, 7, 7], [1.0; 3], [0.0; 3]).unwrap();
        let mut a = Matrix3::identity();
        a[(0, 0)] = -1.0;
        let field = affine_field(&spec, &a, &Vector3::new(6.0, 0.0, 0.0));
        let r = regularity_report(&field, None, false).unwrap();
        assert_eq!(r.fold_percent, 100.0);
        // det = -1 everywhere; the sign channel agrees.
        assert!(r.jacobian_field.data.chunks(2).all(|c| c[1] == -1.0));
    }

    #[test]
    fn affine_exactness_random() {
        let spec = GridSpec::new([6, 7, 8], [0.8, 1.1, 0.9], [-2.0, 0.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let mut a = Matrix3::identity();
            for r in 0..3 {
                for c in 0..3 {
                    a[(r, c)] += rng.random_range(-0.3..0.3);
                }
            }
            let b = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let field = affine_field(&spec, &a, &b);
            let det = jacobian_determinant(&field, None).unwrap();
            for idx in 0..spec.voxel_count() {
                assert_relative_eq!(det.get(idx, 0), a.determinant(), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn translation_invariance_of_report() {
        let spec = GridSpec::new([8, 8, 8], [1.0; 3], [0.0; 3]).unwrap();
        let mut field = VolumeGrid::zeros(spec, 3);
        for idx in 0..spec.voxel_count() {
            let [i, j, k] = spec.unravel(idx);
            let x = spec.world_at(i, j, k);
            field.data[idx * 3] = 0.3 * (0.5 * x.y).sin();
            field.data[idx * 3 + 1] = 0.2 * (0.4 * x.z).cos();
            field.data[idx * 3 + 2] = 0.1 * x.x * 0.05;
        }
        let base = regularity_report(&field, None, false).unwrap();
        let mut shifted = field.clone();
        for idx in 0..spec.voxel_count() {
            shifted.data[idx * 3] += 7.0;
            shifted.data[idx * 3 + 1] -= 3.0;
            shifted.data[idx * 3 + 2] += 11.0;
        }
        let moved = regularity_report(&shifted, None, false).unwrap();
        assert_eq!(base.fold_percent, moved.fold_percent);
        // The shift cancels in the differences up to rounding.
        assert_relative_eq!(base.mean_log2_absdet, moved.mean_log2_absdet, epsilon = 1e-12);
        assert!((base.std_log2_absdet - moved.std_log2_absdet).abs() <= 1e-12);
    }

    #[test]
    fn fold_percent_recomputable_from_field() {
        let spec = GridSpec::new([6, 6, 6], [1.0; 3], [0.0; 3]).unwrap();
        let mut a = Matrix3::identity();
        a[(1, 1)] = -0.5;
        let field = affine_field(&spec, &a, &Vector3::zeros());
        let r = regularity_report(&field, None, false).unwrap();
        let interior = spec.voxel_count();
        let refolds = r
            .jacobian_field
            .data
            .chunks(2)
            .filter(|c| c[1] <= 0.0)
            .count();
        assert_relative_eq!(
            r.fold_percent,
            100.0 * refolds as f64 / interior as f64,
            epsilon = 1e-12
        );
    }

    #[test]
    fn small_grid_is_rejected() {
        let spec = GridSpec::new([2, 8, 8], [1.0; 3], [0.0; 3]).unwrap();
        let field = VolumeGrid::zeros(spec, 3);
        assert!(matches!(
            jacobian_determinant(&field, None),
            Err(Error::GridTooSmall { .. })
        ));
    }

    #[test]
    fn resolution_consistency_on_smooth_field() {
        for n in [16, 32, 48] {
            let spec = GridSpec::centered_cube(n, 8.0);
            let mut field = VolumeGrid::zeros(spec, 3);
            for idx in 0..spec.voxel_count() {
                let [i, j, k] = spec.unravel(idx);
                let x = spec.world_at(i, j, k);
                // Small smooth displacement: gradient well under 1.
                field.data[idx * 3] = 0.4 * (0.2 * x.y).sin();
                field.data[idx * 3 + 1] = 0.3 * (0.15 * x.z).sin();
                field.data[idx * 3 + 2] = 0.35 * (0.18 * x.x).cos();
            }
            let r = regularity_report(&field, None, false).unwrap();
            assert_eq!(r.fold_percent, 0.0, "folds appeared at n={n}");
        }
    }

    #[test]
    fn csv_has_schema_and_failure_rows() {
        let rows = vec![
            MethodRow {
                method: DeformMethod::Lbs,
                pose_magnitude_rad: 0.5,
                report: Some(RegularityReport {
                    fold_percent: 1.25,
                    mean_log2_absdet: 0.1,
                    std_log2_absdet: 0.2,
                    jacobian_field: VolumeGrid::zeros(
                        GridSpec::new([3, 3, 3], [1.0; 3], [0.0; 3]).unwrap(),
                        2,
                    ),
                    wall_time_ms: 0.0,
                    peak_mem_mb: 1.0,
                }),
                status: "ok".into(),
            },
            MethodRow {
                method: DeformMethod::PolyRigid,
                pose_magnitude_rad: 3.3,
                report: None,
                status: "branch-ambiguity".into(),
            },
        ];
        let csv = rows_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,pose_magnitude_rad,fold_percent,mean_log2_absdet,std_log2_absdet,wall_time_ms,peak_mem_mb,status"
        );
        assert!(csv.contains("lbs,0.500000,1.250000"));
        assert!(csv.contains("polyrigid,3.300000,,,,,,branch-ambiguity"));
    }
}
