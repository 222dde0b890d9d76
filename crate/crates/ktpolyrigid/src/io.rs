//! File formats: volumes (JSON header + raw little-endian f32 payload),
//! meshes (minimal OBJ subset), kinematic models, poses, and cohort
//! manifests (JSON).

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{KinematicTree, Pose, ShapeBasis};
use crate::mesh::SurfaceMesh;
use crate::volume::{GridSpec, VolumeGrid};

/// Sidecar header for a raw volume payload.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub channels: usize,
    pub dtype: String,
    pub order: String,
    pub encoding: String,
    /// Payload filename, relative to the header's directory.
    pub payload: String,
    /// Optional mask volume (1-channel, 0/1) relative path.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

fn payload_path(header_path: &Path, payload: &str) -> PathBuf {
    header_path.parent().unwrap_or_else(|| Path::new(".")).join(payload)
}

/// Write a volume: `<path>` gets the JSON header, the payload lands next to
/// it with the extension replaced by `.raw`. A mask, when present, becomes a
/// sibling 0/1 volume.
pub fn write_volume(grid: &VolumeGrid, path: &Path) -> Result<()> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::MalformedHeader(format!("bad volume path {}", path.display())))?;
    let payload_name = format!("{stem}.raw");
    let mask_name = grid.mask.as_ref().map(|_| format!("{stem}.mask.json"));
    let header = VolumeHeader {
        dims: grid.spec.dims,
        spacing: grid.spec.spacing,
        origin: grid.spec.origin,
        channels: grid.channels,
        dtype: "f32".into(),
        order: "x-fastest".into(),
        encoding: "raw-little-endian".into(),
        payload: payload_name.clone(),
        mask: mask_name.clone(),
    };
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&file, &header)?;
    let mut bytes = Vec::with_capacity(grid.data.len() * 4);
    for &v in &grid.data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(payload_path(path, &payload_name), bytes)?;
    if let (Some(mask), Some(mask_name)) = (&grid.mask, &mask_name) {
        let mut m = VolumeGrid::zeros(grid.spec, 1);
        for (i, &inside) in mask.iter().enumerate() {
            m.data[i] = if inside { 1.0 } else { 0.0 };
        }
        write_volume(&m, &payload_path(path, mask_name))?;
    }
    Ok(())
}

/// Read a volume written by [`write_volume`]; lossless for f32 data.
pub fn read_volume(path: &Path) -> Result<VolumeGrid> {
    let file = std::fs::File::open(path)?;
    let header: VolumeHeader = serde_json::from_reader(file)?;
    if header.dtype != "f32" {
        return Err(Error::MalformedHeader(format!(
            "unsupported dtype '{}', only f32 volumes exist",
            header.dtype
        )));
    }
    if header.order != "x-fastest" {
        return Err(Error::MalformedHeader(format!("unsupported order '{}'", header.order)));
    }
    if header.encoding != "raw-little-endian" {
        return Err(Error::MalformedHeader(format!(
            "unsupported encoding '{}'",
            header.encoding
        )));
    }
    let spec = GridSpec::new(header.dims, header.spacing, header.origin)
        .map_err(|e| Error::MalformedHeader(format!("{e}")))?;
    let expected = spec.voxel_count() * header.channels * 4;
    let mut bytes = Vec::new();
    std::fs::File::open(payload_path(path, &header.payload))?.read_to_end(&mut bytes)?;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch { expected, actual: bytes.len() });
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut grid = VolumeGrid::from_data(spec, header.channels, data)?;
    if let Some(mask_name) = &header.mask {
        let m = read_volume(&payload_path(path, mask_name))?;
        if m.spec.dims != spec.dims {
            return Err(Error::MalformedHeader("mask dims do not match volume".into()));
        }
        grid.mask = Some(m.data.iter().map(|&v| v != 0.0).collect());
    }
    Ok(grid)
}

/// Write the OBJ subset: `v x y z` and 1-based `f a b c` records.
pub fn write_mesh(mesh: &SurfaceMesh, path: &Path) -> Result<()> {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for f in &mesh.faces {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read the OBJ subset; closedness is validated unless `validate` is false.
pub fn read_mesh(path: &Path, validate: bool) -> Result<SurfaceMesh> {
    let text = std::fs::read_to_string(path)?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        let lineno = lineno + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .map(|t| {
                        t.parse::<f64>().map_err(|_| {
                            Error::MalformedHeader(format!(
                                "line {lineno}: bad vertex coordinate '{t}'"
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(Error::MalformedHeader(format!(
                        "line {lineno}: vertex needs 3 coordinates"
                    )));
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tokens
                    .map(|t| {
                        if t.contains('/') {
                            return Err(Error::MalformedHeader(format!(
                                "line {lineno}: texture/normal indices are not supported"
                            )));
                        }
                        let i: i64 = t.parse().map_err(|_| {
                            Error::MalformedHeader(format!("line {lineno}: bad face index '{t}'"))
                        })?;
                        if i < 1 {
                            return Err(Error::BadIndex { index: 0, count: vertices.len() });
                        }
                        Ok((i - 1) as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(Error::NonTriangleFace { line: lineno });
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            // Ignore the parts of OBJ this subset does not carry.
            Some("vn") | Some("vt") | Some("o") | Some("g") | Some("s") | Some("usemtl")
            | Some("mtllib") => {}
            Some(other) => {
                return Err(Error::MalformedHeader(format!(
                    "line {lineno}: unsupported record '{other}'"
                )))
            }
            None => {}
        }
    }
    let mesh = SurfaceMesh { vertices, faces };
    if validate {
        mesh.validate()?;
    } else {
        // Index bounds always hold.
        for f in &mesh.faces {
            for &i in f {
                if i >= mesh.vertices.len() {
                    return Err(Error::BadIndex { index: i, count: mesh.vertices.len() });
                }
            }
        }
    }
    Ok(mesh)
}

/// Kinematic model document: tree topology, rest pose, optional shape basis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KinematicModelFile {
    pub part_names: Vec<String>,
    /// Parent index per part; null marks the root.
    pub parents: Vec<Option<usize>>,
    pub rest_joints: Vec<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape_basis: Option<ShapeBasisFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShapeBasisFile {
    pub mean_vertices: Vec<[f64; 3]>,
    pub components: Vec<Vec<[f64; 3]>>,
}

pub fn write_kinematic_model(
    tree: &KinematicTree,
    basis: Option<&ShapeBasis>,
    path: &Path,
) -> Result<()> {
    let doc = KinematicModelFile {
        part_names: tree.part_names().to_vec(),
        parents: tree.parents().to_vec(),
        rest_joints: tree.rest_joints().iter().map(|j| [j.x, j.y, j.z]).collect(),
        shape_basis: basis.map(|b| ShapeBasisFile {
            mean_vertices: b.mean_vertices().iter().map(|v| [v.x, v.y, v.z]).collect(),
            components: b
                .components()
                .iter()
                .map(|c| c.iter().map(|v| [v.x, v.y, v.z]).collect())
                .collect(),
        }),
    };
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&file, &doc)?;
    Ok(())
}

pub fn read_kinematic_model(path: &Path) -> Result<(KinematicTree, Option<ShapeBasis>)> {
    let file = std::fs::File::open(path)?;
    let doc: KinematicModelFile = serde_json::from_reader(file)?;
    let tree = KinematicTree::new(
        doc.parents,
        doc.rest_joints.iter().map(|j| Vector3::new(j[0], j[1], j[2])).collect(),
        doc.part_names,
    )?;
    let basis = doc
        .shape_basis
        .map(|b| {
            ShapeBasis::new(
                b.mean_vertices.iter().map(|v| Vector3::new(v[0], v[1], v[2])).collect(),
                b.components
                    .iter()
                    .map(|c| c.iter().map(|v| Vector3::new(v[0], v[1], v[2])).collect())
                    .collect(),
            )
        })
        .transpose()?;
    Ok((tree, basis))
}

/// Pose file: a JSON array of K angle-axis triples.
pub fn write_pose(pose: &Pose, path: &Path) -> Result<()> {
    let rows: Vec<[f64; 3]> = pose.theta.iter().map(|t| [t.x, t.y, t.z]).collect();
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&file, &rows)?;
    Ok(())
}

pub fn read_pose(path: &Path) -> Result<Pose> {
    let file = std::fs::File::open(path)?;
    let rows: Vec<[f64; 3]> = serde_json::from_reader(file)?;
    Pose::new(rows.iter().map(|r| Vector3::new(r[0], r[1], r[2])).collect())
}

/// Vertex weights file: a JSON array of N simplex rows.
pub fn write_vertex_weights(weights: &[Vec<f64>], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(&file, weights)?;
    Ok(())
}

pub fn read_vertex_weights(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(file)?)
}

/// One cohort subject's files, all relative to the manifest directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestSubject {
    pub image: String,
    pub tree: String,
    pub pose: String,
    pub mesh: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    pub beta: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CohortManifest {
    pub canonical_grid: GridSpec,
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub subjects: Vec<ManifestSubject>,
}

pub fn write_manifest(manifest: &CohortManifest, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&file, manifest)?;
    Ok(())
}

/// Read and validate a manifest: every referenced file must exist, and all
/// subjects must agree on the part count.
pub fn read_manifest(path: &Path) -> Result<CohortManifest> {
    let file = std::fs::File::open(path)?;
    let manifest: CohortManifest = serde_json::from_reader(file)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut part_count: Option<usize> = None;
    for (i, s) in manifest.subjects.iter().enumerate() {
        for rel in [&s.image, &s.tree, &s.pose, &s.mesh] {
            let p = dir.join(rel);
            if !p.exists() {
                return Err(Error::SpecInvalid(format!(
                    "manifest subject {i}: missing file {}",
                    p.display()
                )));
            }
        }
        if let Some(w) = &s.weights {
            if !dir.join(w).exists() {
                return Err(Error::SpecInvalid(format!(
                    "manifest subject {i}: missing weights {w}"
                )));
            }
        }
        let (tree, _) = read_kinematic_model(&dir.join(&s.tree))?;
        match part_count {
            None => part_count = Some(tree.part_count()),
            Some(k) if k != tree.part_count() => {
                return Err(Error::SpecInvalid(format!(
                    "manifest subject {i}: part count {} differs from {k}",
                    tree.part_count()
                )))
            }
            _ => {}
        }
    }
    Ok(manifest)
}

/// Twist bank file: S x K rows of [wx, wy, wz, vx, vy, vz].
pub fn write_twist_bank(bank: &crate::groupwise::TwistBank, path: &Path) -> Result<()> {
    let rows: Vec<Vec<[f64; 6]>> = bank
        .xi
        .iter()
        .map(|row| row.iter().map(|t| t.coords()).collect())
        .collect();
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&file, &rows)?;
    Ok(())
}

pub fn read_twist_bank(path: &Path) -> Result<crate::groupwise::TwistBank> {
    let file = std::fs::File::open(path)?;
    let rows: Vec<Vec<[f64; 6]>> = serde_json::from_reader(file)?;
    Ok(crate::groupwise::TwistBank {
        xi: rows
            .iter()
            .map(|row| row.iter().map(crate::se3::Twist::from_coords).collect())
            .collect(),
    })
}

/// Write a string atomically enough for our purposes.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
