//! Volumetric skinning weights: surface weights rasterized onto the mask
//! boundary, then extended into the interior by minimizing the discrete
//! Laplacian energy under simplex and Dirichlet constraints with projected
//! gradient descent.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::SurfaceMesh;
use crate::volume::{GridSpec, OutOfBounds, VolumeGrid};

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &mut [f64]) {
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (i as f64 + 1.0);
        if u - t > 0.0 {
            tau = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

/// Dirichlet data: weight vectors pinned at specific voxels.
#[derive(Clone, Debug)]
pub struct BoundaryWeights {
    pub channels: usize,
    /// Linear voxel indices, strictly increasing.
    pub voxels: Vec<usize>,
    /// `voxels.len() * channels` values, one simplex vector per voxel.
    pub values: Vec<f64>,
}

/// Interior indicator from a closed mesh via generalized winding numbers.
/// Handles overlapping unions of closed components.
pub fn mask_from_mesh(mesh: &SurfaceMesh, spec: &GridSpec) -> Vec<bool> {
    let (lo, hi) = mesh.bbox();
    let n = spec.voxel_count();
    let mut mask = vec![false; n];
    mask.par_iter_mut().enumerate().for_each(|(idx, m)| {
        let [i, j, k] = spec.unravel(idx);
        let p = spec.world_at(i, j, k);
        if p.x < lo.x || p.y < lo.y || p.z < lo.z || p.x > hi.x || p.y > hi.y || p.z > hi.z {
            return;
        }
        *m = mesh.contains(&p);
    });
    mask
}

/// Voxels inside the mask with at least one face-adjacent exterior neighbor
/// (grid edges count as exterior).
pub fn boundary_voxels(spec: &GridSpec, mask: &[bool]) -> Vec<usize> {
    let dims = spec.dims;
    let mut out = Vec::new();
    for idx in 0..spec.voxel_count() {
        if !mask[idx] {
            continue;
        }
        let [i, j, k] = spec.unravel(idx);
        let coords = [i as isize, j as isize, k as isize];
        let mut exposed = false;
        'outer: for axis in 0..3 {
            for delta in [-1isize, 1] {
                let mut nb = coords;
                nb[axis] += delta;
                if nb[axis] < 0 || nb[axis] >= dims[axis] as isize {
                    exposed = true;
                    break 'outer;
                }
                let nidx = spec.linear_index(nb[0] as usize, nb[1] as usize, nb[2] as usize);
                if !mask[nidx] {
                    exposed = true;
                    break 'outer;
                }
            }
        }
        if exposed {
            out.push(idx);
        }
    }
    out
}

/// Rasterize surface vertex weights onto the mask boundary: each boundary
/// voxel takes the barycentric interpolation of the vertex weights at its
/// nearest surface point. Distance ties go to the smallest face index.
pub fn rasterize_boundary_weights(
    mesh: &SurfaceMesh,
    vertex_weights: &[Vec<f64>],
    spec: &GridSpec,
    mask: &[bool],
) -> Result<BoundaryWeights> {
    let channels = vertex_weights.first().map_or(0, |w| w.len());
    if vertex_weights.len() != mesh.vertices.len() {
        return Err(Error::DimensionMismatch {
            expected: mesh.vertices.len(),
            got: vertex_weights.len(),
        });
    }
    for (i, w) in vertex_weights.iter().enumerate() {
        if w.len() != channels {
            return Err(Error::DimensionMismatch { expected: channels, got: w.len() });
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || w.iter().any(|&x| x < -1e-9) {
            return Err(Error::SpecInvalid(format!(
                "vertex {i} weights are off the simplex (sum {sum})"
            )));
        }
    }
    let boundary = boundary_voxels(spec, mask);
    if boundary.is_empty() {
        return Err(Error::EmptyBoundary);
    }
    // Per-face bounding spheres let distant faces be skipped.
    let face_bounds: Vec<(Vector3<f64>, f64)> = (0..mesh.faces.len())
        .map(|fi| {
            let tri = mesh.face_vertices(fi);
            let c = (tri[0] + tri[1] + tri[2]) / 3.0;
            let r = tri.iter().map(|v| (v - c).norm()).fold(0.0, f64::max);
            (c, r)
        })
        .collect();
    let values: Vec<f64> = boundary
        .par_iter()
        .flat_map_iter(|&idx| {
            let [i, j, k] = spec.unravel(idx);
            let p = spec.world_at(i, j, k);
            let mut best_d = f64::INFINITY;
            let mut best: Option<(usize, [f64; 3])> = None;
            for fi in 0..mesh.faces.len() {
                let (c, r) = face_bounds[fi];
                if (p - c).norm() - r >= best_d {
                    continue;
                }
                let tri = mesh.face_vertices(fi);
                let (q, bary) = crate::mesh::closest_point_on_triangle(&p, &tri);
                let d = (q - p).norm();
                if d < best_d {
                    best_d = d;
                    best = Some((fi, bary));
                }
            }
            let (fi, bary) = best.expect("mesh has faces");
            let f = mesh.faces[fi];
            let mut w = vec![0.0; channels];
            for ch in 0..channels {
                for corner in 0..3 {
                    w[ch] += bary[corner] * vertex_weights[f[corner]][ch];
                }
            }
            project_simplex(&mut w);
            w
        })
        .collect();
    Ok(BoundaryWeights { channels, voxels: boundary, values })
}

#[derive(Clone, Copy, Debug)]
pub struct SolveConfig {
    pub max_iters: usize,
    /// Stop when the projected-gradient max-norm falls below this.
    pub tol: f64,
    /// Defaults to 0.9 / (2 sum_i 1/h_i^2), the explicit-scheme bound.
    pub step: Option<f64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig { max_iters: 4000, tol: 1e-7, step: None }
    }
}

/// Solved volumetric weights on the full grid. Interior voxels satisfy the
/// simplex constraints; exterior voxels copy their nearest interior voxel so
/// deformations can be evaluated slightly outside the domain.
#[derive(Clone, Debug)]
pub struct WeightField {
    /// K channels; `grid.mask` is the interior domain.
    pub grid: VolumeGrid,
    /// Dirichlet voxel indices.
    pub boundary: Vec<usize>,
    /// Energy after each iteration (non-increasing).
    pub energy_trace: Vec<f64>,
    pub iterations: usize,
}

impl WeightField {
    pub fn channels(&self) -> usize {
        self.grid.channels
    }

    /// Trilinear weights at a world point, renormalized onto the simplex.
    pub fn weights_at_into(&self, world: &Vector3<f64>, out: &mut [f64]) {
        self.grid.trilinear(world, OutOfBounds::Clamp, out);
        let sum: f64 = out.iter().sum();
        if sum > 0.0 {
            for w in out.iter_mut() {
                *w /= sum;
            }
        }
    }

    pub fn weights_at(&self, world: &Vector3<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.channels()];
        self.weights_at_into(world, &mut out);
        out
    }

    /// Simplex constraints at every interior voxel and exact Dirichlet data.
    pub fn check_invariants(&self, boundary: &BoundaryWeights) -> Result<()> {
        let k = self.channels();
        let mask = self.grid.mask.as_ref().expect("weight field carries a mask");
        for idx in 0..self.grid.spec.voxel_count() {
            if !mask[idx] {
                continue;
            }
            let w = self.grid.voxel_values(idx);
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || w.iter().any(|&x| x < 0.0) {
                return Err(Error::SpecInvalid(format!(
                    "voxel {idx} violates the simplex: sum {sum}"
                )));
            }
        }
        for (bi, &idx) in boundary.voxels.iter().enumerate() {
            let w = self.grid.voxel_values(idx);
            let expect = &boundary.values[bi * k..(bi + 1) * k];
            if w != expect {
                return Err(Error::SpecInvalid(format!("Dirichlet voxel {idx} was modified")));
            }
        }
        Ok(())
    }
}

/// Nearest-seed labels by multi-source BFS over 6-connectivity, restricted
/// to `domain` (or the whole grid when `None`). Deterministic: seeds enter
/// the queue in index order and axes are scanned in a fixed order.
fn nearest_seed_bfs(
    spec: &GridSpec,
    seeds: &[usize],
    domain: Option<&[bool]>,
) -> Vec<Option<usize>> {
    let n = spec.voxel_count();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut queue = std::collections::VecDeque::new();
    for &s in seeds {
        owner[s] = Some(s);
        queue.push_back(s);
    }
    let dims = spec.dims;
    while let Some(idx) = queue.pop_front() {
        let [i, j, k] = spec.unravel(idx);
        let coords = [i as isize, j as isize, k as isize];
        for axis in 0..3 {
            for delta in [-1isize, 1] {
                let mut nb = coords;
                nb[axis] += delta;
                if nb[axis] < 0 || nb[axis] >= dims[axis] as isize {
                    continue;
                }
                let nidx = spec.linear_index(nb[0] as usize, nb[1] as usize, nb[2] as usize);
                if owner[nidx].is_some() {
                    continue;
                }
                if let Some(d) = domain {
                    if !d[nidx] {
                        continue;
                    }
                }
                owner[nidx] = owner[idx];
                queue.push_back(nidx);
            }
        }
    }
    owner
}

/// Laplacian energy of the weight field over in-mask neighbor pairs.
fn laplacian_energy(
    spec: &GridSpec,
    mask: &[bool],
    weights: &[f64],
    channels: usize,
) -> f64 {
    let dims = spec.dims;
    let inv_h2 = [
        1.0 / (spec.spacing[0] * spec.spacing[0]),
        1.0 / (spec.spacing[1] * spec.spacing[1]),
        1.0 / (spec.spacing[2] * spec.spacing[2]),
    ];
    let mut energy = 0.0;
    for idx in 0..spec.voxel_count() {
        if !mask[idx] {
            continue;
        }
        let [i, j, k] = spec.unravel(idx);
        let coords = [i, j, k];
        for axis in 0..3 {
            if coords[axis] + 1 >= dims[axis] {
                continue;
            }
            let mut nb = coords;
            nb[axis] += 1;
            let nidx = spec.linear_index(nb[0], nb[1], nb[2]);
            if !mask[nidx] {
                continue;
            }
            for ch in 0..channels {
                let d = weights[idx * channels + ch] - weights[nidx * channels + ch];
                energy += d * d * inv_h2[axis];
            }
        }
    }
    energy
}

/// Extend interior values onto exterior voxels (nearest interior voxel).
pub(crate) fn extend_to_exterior(
    spec: &GridSpec,
    mask: &[bool],
    data: &mut [f64],
    channels: usize,
) {
    let interior: Vec<usize> = (0..spec.voxel_count()).filter(|&i| mask[i]).collect();
    let owner = nearest_seed_bfs(spec, &interior, None);
    for idx in 0..spec.voxel_count() {
        if mask[idx] {
            continue;
        }
        if let Some(src) = owner[idx] {
            for ch in 0..channels {
                data[idx * channels + ch] = data[src * channels + ch];
            }
        }
    }
}

/// Nearest-interior extension for 3-channel displacement data.
pub(crate) fn extend_vector_field_to_exterior(spec: &GridSpec, mask: &[bool], data: &mut [f64]) {
    extend_to_exterior(spec, mask, data, 3);
}

/// Extend surface weights into the interior by projected gradient descent on
/// the Laplacian energy, with Dirichlet data pinned and every update
/// projected back onto the simplex.
pub fn solve_weights(
    spec: &GridSpec,
    mask: &[bool],
    boundary: &BoundaryWeights,
    config: &SolveConfig,
) -> Result<WeightField> {
    let channels = boundary.channels;
    let n = spec.voxel_count();
    if mask.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: mask.len() });
    }
    if boundary.voxels.is_empty() {
        return Err(Error::EmptyBoundary);
    }
    let mut is_dirichlet = vec![false; n];
    for &v in &boundary.voxels {
        is_dirichlet[v] = true;
    }

    // Feasible start: indicator of the dominant channel of the nearest
    // Dirichlet voxel, then one projection.
    let owner = nearest_seed_bfs(spec, &boundary.voxels, Some(mask));
    let boundary_slot: std::collections::HashMap<usize, usize> =
        boundary.voxels.iter().enumerate().map(|(slot, &v)| (v, slot)).collect();
    let mut unreachable = 0usize;
    let mut weights = vec![0.0; n * channels];
    for idx in 0..n {
        if !mask[idx] {
            continue;
        }
        match owner[idx] {
            Some(src) => {
                let slot = boundary_slot[&src];
                let w = &boundary.values[slot * channels..(slot + 1) * channels];
                let dominant = w
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                    .map(|(ch, _)| ch)
                    .unwrap_or(0);
                weights[idx * channels + dominant] = 1.0;
            }
            None => {
                unreachable += 1;
                for ch in 0..channels {
                    weights[idx * channels + ch] = 1.0 / channels as f64;
                }
            }
        }
        project_simplex(&mut weights[idx * channels..(idx + 1) * channels]);
    }
    if unreachable > 0 {
        eprintln!(
            "warning: interior mask is disconnected; {unreachable} voxels unreachable from the boundary"
        );
    }
    for (slot, &v) in boundary.voxels.iter().enumerate() {
        weights[v * channels..(v + 1) * channels]
            .copy_from_slice(&boundary.values[slot * channels..(slot + 1) * channels]);
    }

    let inv_h2 = [
        1.0 / (spec.spacing[0] * spec.spacing[0]),
        1.0 / (spec.spacing[1] * spec.spacing[1]),
        1.0 / (spec.spacing[2] * spec.spacing[2]),
    ];
    let step = config
        .step
        .unwrap_or(0.9 / (2.0 * (inv_h2[0] + inv_h2[1] + inv_h2[2])));
    let free: Vec<usize> =
        (0..n).filter(|&i| mask[i] && !is_dirichlet[i]).collect();

    let dims = spec.dims;
    let mut energy_trace = vec![laplacian_energy(spec, mask, &weights, channels)];
    let mut next = weights.clone();
    let mut rises = 0usize;
    let mut iterations = 0usize;
    for iter in 0..config.max_iters {
        // Jacobi sweep: gradients from the current state, then one
        // projected step per free voxel.
        let mut residual: f64 = 0.0;
        for &idx in &free {
            let [i, j, k] = spec.unravel(idx);
            let coords = [i as isize, j as isize, k as isize];
            let base = idx * channels;
            let mut updated: Vec<f64> = Vec::with_capacity(channels);
            for ch in 0..channels {
                let w = weights[base + ch];
                let mut g = 0.0;
                for axis in 0..3 {
                    for delta in [-1isize, 1] {
                        let mut nb = coords;
                        nb[axis] += delta;
                        if nb[axis] < 0 || nb[axis] >= dims[axis] as isize {
                            continue;
                        }
                        let nidx =
                            spec.linear_index(nb[0] as usize, nb[1] as usize, nb[2] as usize);
                        if !mask[nidx] {
                            continue;
                        }
                        g += (w - weights[nidx * channels + ch]) * inv_h2[axis];
                    }
                }
                updated.push(w - step * g);
            }
            project_simplex(&mut updated);
            for ch in 0..channels {
                let delta = (updated[ch] - weights[base + ch]).abs();
                residual = residual.max(delta / step);
                next[base + ch] = updated[ch];
            }
        }
        std::mem::swap(&mut weights, &mut next);
        iterations = iter + 1;
        let energy = laplacian_energy(spec, mask, &weights, channels);
        let prev = *energy_trace.last().unwrap();
        energy_trace.push(energy);
        if energy > prev + 1e-12 {
            rises += 1;
            if rises >= 10 {
                return Err(Error::Diverged { iterations });
            }
        } else {
            rises = 0;
        }
        if residual <= config.tol {
            break;
        }
    }

    extend_to_exterior(spec, mask, &mut weights, channels);
    let mut grid = VolumeGrid::from_data(*spec, channels, weights)?;
    grid.mask = Some(mask.to_vec());
    Ok(WeightField { grid, boundary: boundary.voxels.clone(), energy_trace, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_tetrahedron;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn simplex_projection_examples() {
        let mut a = vec![0.2, 0.8];
        project_simplex(&mut a);
        assert_relative_eq!(a[0], 0.2, epsilon = 1e-12);
        assert_relative_eq!(a[1], 0.8, epsilon = 1e-12);

        // Brute-force oracle on the 2-simplex: minimize (t-2)^2 + (1-t)^2
        // over t in [0,1] gives t = 1.
        let mut b = vec![2.0, 0.0];
        project_simplex(&mut b);
        assert_relative_eq!(b[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(b[1], 0.0, epsilon = 1e-12);

        let mut c = vec![-1.0, -1.0, -1.0];
        project_simplex(&mut c);
        for x in &c {
            assert_relative_eq!(*x, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn simplex_projection_is_feasible(v in proptest::collection::vec(-5.0..5.0f64, 1..6)) {
            let mut w = v.clone();
            project_simplex(&mut w);
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn simplex_projection_is_permutation_equivariant(v in proptest::collection::vec(-3.0..3.0f64, 3..3usize.wrapping_add(1))) {
            let mut w = v.clone();
            project_simplex(&mut w);
            let mut rev: Vec<f64> = v.iter().rev().copied().collect();
            project_simplex(&mut rev);
            let rev_back: Vec<f64> = rev.iter().rev().copied().collect();
            prop_assert_eq!(w, rev_back);
        }
    }

    fn bar_setup(n: usize) -> (GridSpec, Vec<bool>, BoundaryWeights) {
        // A 1-D bar of n voxels along x inside a thin grid.
        let spec = GridSpec::new([n, 3, 3], [1.0; 3], [0.0; 3]).unwrap();
        let mut mask = vec![false; spec.voxel_count()];
        for i in 0..n {
            mask[spec.linear_index(i, 1, 1)] = true;
        }
        let a = spec.linear_index(0, 1, 1);
        let b = spec.linear_index(n - 1, 1, 1);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let boundary = BoundaryWeights {
            channels: 2,
            voxels: vec![lo, hi],
            values: vec![1.0, 0.0, 0.0, 1.0],
        };
        (spec, mask, boundary)
    }

    #[test]
    fn bar_converges_to_linear_ramp() {
        let n = 32;
        let (spec, mask, boundary) = bar_setup(n);
        let config = SolveConfig { max_iters: 30000, tol: 1e-9, step: None };
        let field = solve_weights(&spec, &mask, &boundary, &config).unwrap();
        field.check_invariants(&boundary).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let idx = spec.linear_index(i, 1, 1);
            let expected = 1.0 - i as f64 / (n as f64 - 1.0);
            worst = worst.max((field.grid.get(idx, 0) - expected).abs());
        }
        assert!(worst <= 1e-3, "ramp deviation {worst}");
        // Energy trace is non-increasing.
        for w in field.energy_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn constant_boundary_gives_constant_interior() {
        let spec = GridSpec::new([8, 8, 8], [1.0; 3], [0.0; 3]).unwrap();
        let mask: Vec<bool> = (0..spec.voxel_count())
            .map(|idx| {
                let [i, j, k] = spec.unravel(idx);
                (1..7).contains(&i) && (1..7).contains(&j) && (1..7).contains(&k)
            })
            .collect();
        let bvox = boundary_voxels(&spec, &mask);
        let mut values = Vec::new();
        for _ in &bvox {
            values.extend_from_slice(&[0.5, 0.5]);
        }
        let boundary = BoundaryWeights { channels: 2, voxels: bvox, values };
        let config = SolveConfig { max_iters: 4000, tol: 1e-13, step: None };
        let field = solve_weights(&spec, &mask, &boundary, &config).unwrap();
        for idx in 0..spec.voxel_count() {
            if mask[idx] {
                assert_relative_eq!(field.grid.get(idx, 0), 0.5, epsilon = 1e-9);
                assert_relative_eq!(field.grid.get(idx, 1), 0.5, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn single_channel_is_all_ones() {
        let (spec, mask, _) = bar_setup(16);
        let bvox = boundary_voxels(&spec, &mask);
        let values = vec![1.0; bvox.len()];
        let boundary = BoundaryWeights { channels: 1, voxels: bvox, values };
        let field =
            solve_weights(&spec, &mask, &boundary, &SolveConfig::default()).unwrap();
        // The simplex pins K=1 at w = 1, so the first sweep already has a
        // zero projected gradient and nothing ever moves.
        assert!(field.iterations <= 1);
        for idx in 0..spec.voxel_count() {
            if mask[idx] {
                assert_eq!(field.grid.get(idx, 0), 1.0);
            }
        }
    }

    #[test]
    fn maximum_principle_on_bar() {
        let (spec, mask, boundary) = bar_setup(24);
        let field = solve_weights(
            &spec,
            &mask,
            &boundary,
            &SolveConfig { max_iters: 20000, tol: 1e-9, step: None },
        )
        .unwrap();
        for idx in 0..spec.voxel_count() {
            if mask[idx] {
                for ch in 0..2 {
                    let w = field.grid.get(idx, ch);
                    assert!((-1e-6..=1.0 + 1e-6).contains(&w));
                }
            }
        }
    }

    #[test]
    fn channel_permutation_equivariance() {
        let (spec, mask, boundary) = bar_setup(12);
        let swapped = BoundaryWeights {
            channels: 2,
            voxels: boundary.voxels.clone(),
            values: boundary
                .values
                .chunks(2)
                .flat_map(|c| [c[1], c[0]])
                .collect(),
        };
        let config = SolveConfig { max_iters: 500, tol: 0.0, step: None };
        let a = solve_weights(&spec, &mask, &boundary, &config).unwrap();
        let b = solve_weights(&spec, &mask, &swapped, &config).unwrap();
        for idx in 0..spec.voxel_count() {
            assert_eq!(a.grid.get(idx, 0).to_bits(), b.grid.get(idx, 1).to_bits());
            assert_eq!(a.grid.get(idx, 1).to_bits(), b.grid.get(idx, 0).to_bits());
        }
    }

    #[test]
    fn divergence_is_reported_for_oversized_steps() {
        // Slightly above the 1-D stability bound: the highest mode grows
        // steadily instead of saturating immediately.
        let (spec, mask, boundary) = bar_setup(32);
        let config = SolveConfig { max_iters: 2000, tol: 0.0, step: Some(0.52) };
        match solve_weights(&spec, &mask, &boundary, &config) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|f| f.iterations)),
        }
    }

    #[test]
    fn empty_boundary_is_an_error() {
        let spec = GridSpec::new([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap();
        let mask = vec![false; spec.voxel_count()];
        let boundary = BoundaryWeights { channels: 1, voxels: vec![], values: vec![] };
        assert!(matches!(
            solve_weights(&spec, &mask, &boundary, &SolveConfig::default()),
            Err(Error::EmptyBoundary)
        ));
    }

    #[test]
    fn rasterize_single_part_is_constant() {
        let mesh = unit_tetrahedron();
        let spec = GridSpec::new([12, 12, 12], [0.1; 3], [-0.6; 3]).unwrap();
        let mask = mask_from_mesh(&mesh, &spec);
        assert!(mask.iter().any(|&m| m), "tetrahedron encloses some voxel centers");
        let vw = vec![vec![1.0]; 4];
        let b = rasterize_boundary_weights(&mesh, &vw, &spec, &mask).unwrap();
        assert!(!b.voxels.is_empty());
        assert!(b.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rasterize_two_region_mesh_matches_labels() {
        // Tetrahedron with vertex weights constant per region: vertex 0 owns
        // channel 0, the rest own channel 1. Boundary voxels nearest to the
        // corner at vertex 0 should lean channel 0.
        let mesh = unit_tetrahedron();
        let vw = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ];
        let spec = GridSpec::new([16, 16, 16], [0.08; 3], [-0.64; 3]).unwrap();
        let mask = mask_from_mesh(&mesh, &spec);
        let b = rasterize_boundary_weights(&mesh, &vw, &spec, &mask).unwrap();
        // Every rasterized weight stays a convex combination.
        for chunk in b.values.chunks(2) {
            assert_relative_eq!(chunk[0] + chunk[1], 1.0, epsilon = 1e-9);
        }
        // The boundary voxel closest to vertex 0 leans channel 0.
        let v0 = mesh.vertices[0];
        let (best, _) = b
            .voxels
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &c)| {
                let [ai, aj, ak] = spec.unravel(a);
                let [ci, cj, ck] = spec.unravel(c);
                let da = (spec.world_at(ai, aj, ak) - v0).norm();
                let dc = (spec.world_at(ci, cj, ck) - v0).norm();
                da.total_cmp(&dc)
            })
            .unwrap();
        assert!(b.values[best * 2] > 0.5);
    }
}
