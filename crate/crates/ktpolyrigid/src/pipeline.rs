//! Glue between the modules: weight solving for phantoms, composition of
//! the articulated transform with the shape flow, and canonical-image
//! construction.

use rayon::prelude::*;

use crate::deform::{resample_image, ArticulatedField, Interpolation};
use crate::error::Result;
use crate::flow::{sample_dense_flow, FlowSpec};
use crate::kinematics::ShapeBasis;
use crate::mesh::SurfaceMesh;
use crate::phantom::Phantom;
use crate::volume::{GridSpec, VolumeGrid};
use crate::weights::{rasterize_boundary_weights, solve_weights, SolveConfig, WeightField};

/// Rasterize a phantom's surface weights and extend them into its interior.
pub fn solve_phantom_weights(phantom: &Phantom, config: &SolveConfig) -> Result<WeightField> {
    let boundary = rasterize_boundary_weights(
        &phantom.mesh,
        &phantom.vertex_weights,
        &phantom.image.spec,
        &phantom.mask,
    )?;
    solve_weights(&phantom.image.spec, &phantom.mask, &boundary, config)
}

/// Dense displacement of the full map: articulated transform composed with
/// an optional precomputed flow displacement,
/// u(x) = phi_T(x + u_P(x)) - x.
pub fn dense_total_field(
    articulated: &ArticulatedField,
    flow_displacement: Option<&VolumeGrid>,
    grid: &GridSpec,
) -> Result<VolumeGrid> {
    let n = grid.voxel_count();
    let channels = articulated.weights.channels();
    let results: Vec<std::result::Result<[f64; 3], crate::error::Error>> = (0..n)
        .into_par_iter()
        .map_init(
            || vec![0.0; channels],
            |wbuf, idx| {
                let [i, j, k] = grid.unravel(idx);
                let x = grid.world_at(i, j, k);
                let y = match flow_displacement {
                    Some(flow) => {
                        x + flow.trilinear_vector(&x, crate::volume::OutOfBounds::Clamp)
                    }
                    None => x,
                };
                articulated.weights.weights_at_into(&y, wbuf);
                let z = articulated.eval_with_weights(&y, wbuf)?;
                let u = z - x;
                Ok([u.x, u.y, u.z])
            },
        )
        .collect();
    let mut out = VolumeGrid::zeros(*grid, 3);
    for (idx, r) in results.into_iter().enumerate() {
        let u = r?;
        out.data[idx * 3] = u[0];
        out.data[idx * 3 + 1] = u[1];
        out.data[idx * 3 + 2] = u[2];
    }
    Ok(out)
}

/// Dense pull-back flow displacement for canonicalization: grid points in
/// the population canonical space follow the shape path from the population
/// mean to the subject's shape.
pub fn subject_flow_displacement(
    basis: &ShapeBasis,
    faces: &[[usize; 3]],
    beta: &[f64],
    steps: usize,
    grid: &GridSpec,
    mask: Option<&[bool]>,
) -> Result<VolumeGrid> {
    let population_mesh = SurfaceMesh {
        vertices: basis.mean_vertices().to_vec(),
        faces: faces.to_vec(),
    };
    let spec = FlowSpec::new(vec![0.0; beta.len()], beta.to_vec(), steps)?;
    sample_dense_flow(&spec, basis, &population_mesh, grid, mask)
}

/// Pull a native image back into canonical space through the total map.
pub fn canonicalize_image(
    native: &VolumeGrid,
    articulated: &ArticulatedField,
    flow_displacement: Option<&VolumeGrid>,
    grid: &GridSpec,
) -> Result<VolumeGrid> {
    let field = dense_total_field(articulated, flow_displacement, grid)?;
    let mut out = resample_image(native, &field, grid, Interpolation::Trilinear);
    out.mask = articulated.weights.grid.mask.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::DeformMethod as Method;
    use crate::kinematics::{forward_kinematics, Pose};
    use crate::phantom::{build_phantom, PhantomSpec};
    use crate::volume::GridSpec;
    use approx::assert_relative_eq;

    #[test]
    fn identity_total_field_is_zero_and_canonicalize_is_identity() {
        let grid = GridSpec::centered_cube(24, 40.0);
        let spec = PhantomSpec::chain(2, grid, 3);
        let phantom = build_phantom(&spec).unwrap();
        let weights = solve_phantom_weights(&phantom, &SolveConfig::default()).unwrap();
        let transforms = forward_kinematics(&phantom.tree, &Pose::zeros(2)).unwrap();
        let articulated =
            ArticulatedField::new(Method::KtPolyRigid, &transforms, &weights).unwrap();
        let field = dense_total_field(&articulated, None, &grid).unwrap();
        assert!(field.data.iter().all(|&v| v.abs() < 1e-12));
        let canonical = canonicalize_image(&phantom.image, &articulated, None, &grid).unwrap();
        for idx in 0..grid.voxel_count() {
            assert_relative_eq!(
                canonical.get(idx, 0),
                phantom.image.get(idx, 0),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn zero_beta_flow_displacement_is_zero() {
        let grid = GridSpec::centered_cube(16, 40.0);
        let spec = PhantomSpec::chain(2, grid, 3);
        let phantom = build_phantom(&spec).unwrap();
        let disp = subject_flow_displacement(
            &phantom.basis,
            &phantom.mesh.faces,
            &[0.0; 4],
            4,
            &grid,
            Some(&phantom.mask),
        )
        .unwrap();
        assert!(disp.data.iter().all(|&v| v.abs() < 1e-12));
    }
}
