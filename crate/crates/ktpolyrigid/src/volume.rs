//! Regular voxel grids of multi-channel f64 data.
//!
//! Storage is x-fastest: `index = x + dims[0] * (y + dims[1] * z)`, with
//! `channels` values per voxel stored contiguously. Voxel centers live at
//! `origin + index * spacing` (no orientation matrix).

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::SpecInvalid(format!("grid dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::SpecInvalid(format!(
                "grid spacing must be strictly positive, got {spacing:?}"
            )));
        }
        Ok(GridSpec { dims, spacing, origin })
    }

    /// Isotropic grid centered on the origin-symmetric box [-half, half]^3.
    pub fn centered_cube(n: usize, half_extent: f64) -> Self {
        let spacing = 2.0 * half_extent / (n as f64 - 1.0);
        GridSpec {
            dims: [n, n, n],
            spacing: [spacing; 3],
            origin: [-half_extent; 3],
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn world_at(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        )
    }

    /// Continuous voxel coordinates of a world point.
    #[inline]
    pub fn continuous_index(&self, world: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            (world.x - self.origin[0]) / self.spacing[0],
            (world.y - self.origin[1]) / self.spacing[1],
            (world.z - self.origin[2]) / self.spacing[2],
        )
    }
}

/// How sampling treats points outside the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutOfBounds {
    /// Background value 0 (images).
    Zero,
    /// Clamp to the nearest edge voxel (displacement and weight fields).
    Clamp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeGrid {
    pub spec: GridSpec,
    pub channels: usize,
    /// Length `voxel_count * channels`, channel-interleaved per voxel.
    pub data: Vec<f64>,
    /// Optional interior indicator (the domain Omega), one flag per voxel.
    pub mask: Option<Vec<bool>>,
}

impl VolumeGrid {
    pub fn zeros(spec: GridSpec, channels: usize) -> Self {
        let n = spec.voxel_count() * channels;
        VolumeGrid { spec, channels, data: vec![0.0; n], mask: None }
    }

    pub fn from_data(spec: GridSpec, channels: usize, data: Vec<f64>) -> Result<Self> {
        let expected = spec.voxel_count() * channels;
        if data.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: data.len() });
        }
        Ok(VolumeGrid { spec, channels, data, mask: None })
    }

    #[inline]
    pub fn get(&self, voxel: usize, channel: usize) -> f64 {
        self.data[voxel * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, voxel: usize, channel: usize, value: f64) {
        self.data[voxel * self.channels + channel] = value;
    }

    #[inline]
    pub fn voxel_values(&self, voxel: usize) -> &[f64] {
        &self.data[voxel * self.channels..(voxel + 1) * self.channels]
    }

    /// Displacement vector stored at a voxel of a 3-channel grid.
    #[inline]
    pub fn vector_at(&self, voxel: usize) -> Vector3<f64> {
        debug_assert_eq!(self.channels, 3);
        let b = voxel * 3;
        Vector3::new(self.data[b], self.data[b + 1], self.data[b + 2])
    }

    pub fn in_mask(&self, voxel: usize) -> bool {
        self.mask.as_ref().map_or(true, |m| m[voxel])
    }

    /// Number of voxels inside the mask (all voxels when no mask).
    pub fn interior_count(&self) -> usize {
        match &self.mask {
            Some(m) => m.iter().filter(|&&b| b).count(),
            None => self.spec.voxel_count(),
        }
    }

    /// Trilinear sample of all channels at a world point into `out`.
    pub fn trilinear(&self, world: &Vector3<f64>, oob: OutOfBounds, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels);
        let c = self.spec.continuous_index(world);
        let dims = self.spec.dims;
        if let OutOfBounds::Zero = oob {
            for (axis, &d) in dims.iter().enumerate() {
                if c[axis] < 0.0 || c[axis] > (d - 1) as f64 {
                    out.fill(0.0);
                    return;
                }
            }
        }
        let mut i0 = [0usize; 3];
        let mut f = [0.0f64; 3];
        for axis in 0..3 {
            let max = (dims[axis] - 1) as f64;
            let mut x = c[axis].clamp(0.0, max);
            // Snap to the lattice so displacements that land exactly on
            // voxel centers reproduce stored values bit for bit.
            let r = x.round();
            if (x - r).abs() < 1e-9 {
                x = r.clamp(0.0, max);
            }
            let lo = x.floor().min(max - 1.0).max(0.0);
            i0[axis] = lo as usize;
            f[axis] = (x - lo).clamp(0.0, 1.0);
        }
        // Degenerate axes (single voxel) interpolate trivially.
        for axis in 0..3 {
            if dims[axis] == 1 {
                i0[axis] = 0;
                f[axis] = 0.0;
            }
        }
        out.fill(0.0);
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let w = (if dx == 0 { 1.0 - f[0] } else { f[0] })
                        * (if dy == 0 { 1.0 - f[1] } else { f[1] })
                        * (if dz == 0 { 1.0 - f[2] } else { f[2] });
                    if w == 0.0 {
                        continue;
                    }
                    let ix = (i0[0] + dx).min(dims[0] - 1);
                    let iy = (i0[1] + dy).min(dims[1] - 1);
                    let iz = (i0[2] + dz).min(dims[2] - 1);
                    let v = self.spec.linear_index(ix, iy, iz);
                    let base = v * self.channels;
                    for ch in 0..self.channels {
                        out[ch] += w * self.data[base + ch];
                    }
                }
            }
        }
    }

    /// Nearest-neighbor sample of all channels at a world point.
    pub fn nearest(&self, world: &Vector3<f64>, oob: OutOfBounds, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels);
        let c = self.spec.continuous_index(world);
        let dims = self.spec.dims;
        if let OutOfBounds::Zero = oob {
            for (axis, &d) in dims.iter().enumerate() {
                if c[axis] < -0.5 || c[axis] > (d - 1) as f64 + 0.5 {
                    out.fill(0.0);
                    return;
                }
            }
        }
        let mut idx = [0usize; 3];
        for axis in 0..3 {
            let max = (dims[axis] - 1) as f64;
            idx[axis] = c[axis].round().clamp(0.0, max) as usize;
        }
        let v = self.spec.linear_index(idx[0], idx[1], idx[2]);
        out.copy_from_slice(self.voxel_values(v));
    }

    /// Trilinear sample of a 3-channel grid as a vector.
    pub fn trilinear_vector(&self, world: &Vector3<f64>, oob: OutOfBounds) -> Vector3<f64> {
        let mut buf = [0.0; 3];
        self.trilinear(world, oob, &mut buf);
        Vector3::new(buf[0], buf[1], buf[2])
    }

    /// Trilinear sample plus the exact in-cell spatial gradient of the
    /// interpolant, one value and one gradient vector per channel.
    pub fn trilinear_with_gradient(
        &self,
        world: &Vector3<f64>,
        oob: OutOfBounds,
        out: &mut [f64],
        grad: &mut [Vector3<f64>],
    ) {
        debug_assert_eq!(out.len(), self.channels);
        debug_assert_eq!(grad.len(), self.channels);
        let c = self.spec.continuous_index(world);
        let dims = self.spec.dims;
        if let OutOfBounds::Zero = oob {
            for (axis, &d) in dims.iter().enumerate() {
                if c[axis] < 0.0 || c[axis] > (d - 1) as f64 {
                    out.fill(0.0);
                    grad.fill(Vector3::zeros());
                    return;
                }
            }
        }
        let mut i0 = [0usize; 3];
        let mut f = [0.0f64; 3];
        for axis in 0..3 {
            let max = (dims[axis] - 1) as f64;
            let x = c[axis].clamp(0.0, max);
            let lo = x.floor().min(max - 1.0).max(0.0);
            i0[axis] = lo as usize;
            f[axis] = (x - lo).clamp(0.0, 1.0);
        }
        for axis in 0..3 {
            if dims[axis] == 1 {
                i0[axis] = 0;
                f[axis] = 0.0;
            }
        }
        out.fill(0.0);
        grad.fill(Vector3::zeros());
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - f[0] } else { f[0] };
                    let wy = if dy == 0 { 1.0 - f[1] } else { f[1] };
                    let wz = if dz == 0 { 1.0 - f[2] } else { f[2] };
                    let sx = if dx == 0 { -1.0 } else { 1.0 };
                    let sy = if dy == 0 { -1.0 } else { 1.0 };
                    let sz = if dz == 0 { -1.0 } else { 1.0 };
                    let ix = (i0[0] + dx).min(dims[0] - 1);
                    let iy = (i0[1] + dy).min(dims[1] - 1);
                    let iz = (i0[2] + dz).min(dims[2] - 1);
                    let v = self.spec.linear_index(ix, iy, iz);
                    let base = v * self.channels;
                    for ch in 0..self.channels {
                        let value = self.data[base + ch];
                        out[ch] += wx * wy * wz * value;
                        grad[ch].x += sx * wy * wz * value / self.spec.spacing[0];
                        grad[ch].y += wx * sy * wz * value / self.spec.spacing[1];
                        grad[ch].z += wx * wy * sz * value / self.spec.spacing[2];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ramp_grid() -> VolumeGrid {
        // value = 2x + 3y - z + 5 evaluated at voxel centers
        let spec = GridSpec::new([4, 5, 6], [1.0, 2.0, 0.5], [-1.0, 0.0, 2.0]).unwrap();
        let mut g = VolumeGrid::zeros(spec, 1);
        for k in 0..6 {
            for j in 0..5 {
                for i in 0..4 {
                    let w = spec.world_at(i, j, k);
                    let v = spec.linear_index(i, j, k);
                    g.set(v, 0, 2.0 * w.x + 3.0 * w.y - w.z + 5.0);
                }
            }
        }
        g
    }

    #[test]
    fn linear_index_is_x_fastest() {
        let spec = GridSpec::new([3, 4, 5], [1.0; 3], [0.0; 3]).unwrap();
        assert_eq!(spec.linear_index(1, 0, 0), 1);
        assert_eq!(spec.linear_index(0, 1, 0), 3);
        assert_eq!(spec.linear_index(0, 0, 1), 12);
        for idx in 0..spec.voxel_count() {
            let [i, j, k] = spec.unravel(idx);
            assert_eq!(spec.linear_index(i, j, k), idx);
        }
    }

    #[test]
    fn trilinear_is_exact_on_linear_functions() {
        let g = ramp_grid();
        let mut out = [0.0];
        for &(x, y, z) in &[(0.2, 3.7, 3.1), (-0.9, 0.1, 2.05), (1.99, 7.9, 4.2)] {
            let w = Vector3::new(x, y, z);
            g.trilinear(&w, OutOfBounds::Zero, &mut out);
            assert_relative_eq!(out[0], 2.0 * x + 3.0 * y - z + 5.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn trilinear_zero_outside() {
        let g = ramp_grid();
        let mut out = [1.0];
        g.trilinear(&Vector3::new(-50.0, 0.0, 0.0), OutOfBounds::Zero, &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn trilinear_clamps_to_edge() {
        let g = ramp_grid();
        let mut out = [0.0];
        let edge = g.spec.world_at(0, 0, 0);
        g.trilinear(&Vector3::new(edge.x - 10.0, edge.y, edge.z), OutOfBounds::Clamp, &mut out);
        assert_relative_eq!(out[0], g.get(0, 0), epsilon = 1e-12);
    }

    #[test]
    fn trilinear_matches_voxel_values_at_centers() {
        let g = ramp_grid();
        let mut out = [0.0];
        for idx in 0..g.spec.voxel_count() {
            let [i, j, k] = g.spec.unravel(idx);
            g.trilinear(&g.spec.world_at(i, j, k), OutOfBounds::Zero, &mut out);
            assert_relative_eq!(out[0], g.get(idx, 0), epsilon = 1e-9);
        }
    }

    #[test]
    fn nearest_picks_closest_center() {
        let g = ramp_grid();
        let mut out = [0.0];
        let w = g.spec.world_at(2, 3, 4) + Vector3::new(0.3, 0.4, -0.2);
        g.nearest(&w, OutOfBounds::Zero, &mut out);
        assert_eq!(out[0], g.get(g.spec.linear_index(2, 3, 4), 0));
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(GridSpec::new([0, 2, 2], [1.0; 3], [0.0; 3]).is_err());
        assert!(GridSpec::new([2, 2, 2], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
    }
}
