//! PNG slice renders for quick inspection of volumes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::VolumeGrid;

/// Window/level mapping to 8-bit gray: values at `level - window/2` map to
/// black, `level + window/2` to white.
fn to_gray(value: f64, window: f64, level: f64) -> u8 {
    let lo = level - window / 2.0;
    (((value - lo) / window).clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Render the three orthogonal center slices (or explicit indices) of one
/// channel to `<prefix>_{sagittal,coronal,axial}.png`. Deterministic: the
/// encoder embeds no timestamps.
pub fn render_slices(
    volume: &VolumeGrid,
    channel: usize,
    window: f64,
    level: f64,
    slice_indices: Option<[usize; 3]>,
    prefix: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    if channel >= volume.channels {
        return Err(Error::DimensionMismatch { expected: volume.channels, got: channel });
    }
    if window <= 0.0 {
        return Err(Error::SpecInvalid("window must be positive".into()));
    }
    let dims = volume.spec.dims;
    let centers = slice_indices.unwrap_or([dims[0] / 2, dims[1] / 2, dims[2] / 2]);
    for (axis, &idx) in centers.iter().enumerate() {
        if idx >= dims[axis] {
            return Err(Error::SpecInvalid(format!(
                "slice index {idx} out of range for axis {axis} (dim {})",
                dims[axis]
            )));
        }
    }
    let names = ["sagittal", "coronal", "axial"];
    let mut written = Vec::new();
    for (axis, name) in names.iter().enumerate() {
        let (w_axis, h_axis) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let width = dims[w_axis] as u32;
        let height = dims[h_axis] as u32;
        let mut img = image::GrayImage::new(width, height);
        for py in 0..height {
            for px in 0..width {
                let mut coords = centers;
                coords[w_axis] = px as usize;
                // Flip vertically so +axis points up in the image.
                coords[h_axis] = dims[h_axis] - 1 - py as usize;
                let v = volume.get(
                    volume.spec.linear_index(coords[0], coords[1], coords[2]),
                    channel,
                );
                img.put_pixel(px, py, image::Luma([to_gray(v, window, level)]));
            }
        }
        let out = prefix.with_file_name(format!(
            "{}_{name}.png",
            prefix.file_name().and_then(|s| s.to_str()).unwrap_or("slice")
        ));
        img.save(&out)?;
        written.push(out);
    }
    Ok(written)
}
