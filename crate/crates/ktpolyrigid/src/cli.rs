//! Command-line surface: phantom generation, weight solving, dense
//! deformation sampling, regularity metrics, shape flows, canonicalization,
//! groupwise registration, field inversion, label transfer, and PNG
//! renders.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;

use crate::deform::{invert_field, resample_image, ArticulatedField, DeformMethod, Interpolation};
use crate::error::{Error, Result};
use crate::groupwise::{self, Cohort, CohortSubject, GradMode, GroupwiseConfig};
use crate::io;
use crate::kinematics::{forward_kinematics, Pose};
use crate::metrics::{regularity_report, rows_to_csv, MethodRow};
use crate::phantom::{build_phantom, cohort_betas, pose_phantom, OrganSpec, PhantomSpec, Topology};
use crate::pipeline;
use crate::volume::{GridSpec, VolumeGrid};
use crate::weights::{
    mask_from_mesh, rasterize_boundary_weights, solve_weights, SolveConfig, WeightField,
};

#[derive(Parser)]
#[command(
    name = "ktpoly",
    about = "Articulated volumetric deformation toolkit: skinning weights, polyrigid fields, shape flows, groupwise registration",
    version
)]
struct Cli {
    /// Worker thread cap (default: KTPOLY_THREADS or all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic articulated subject (or cohort) with known
    /// ground truth.
    Phantom(PhantomArgs),
    /// Extend surface skinning weights into the interior volume.
    Weights(WeightsArgs),
    /// Sample a dense articulated deformation field.
    Deform(DeformArgs),
    /// Jacobian regularity metrics of a displacement field.
    Metrics(MetricsArgs),
    /// Integrate the shape-standardizing flow into a dense field.
    Flow(FlowArgs),
    /// Pull a native image back to the canonical space (pose + shape).
    Canonicalize(CanonicalizeArgs),
    /// Groupwise intensity-variance refinement of a cohort.
    Groupwise(GroupwiseArgs),
    /// Invert a dense displacement field.
    Invert(InvertArgs),
    /// Transfer a label volume through a displacement field
    /// (nearest-neighbor).
    WarpLabels(WarpLabelsArgs),
    /// Render orthogonal PNG slices of a volume.
    Render(RenderArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "chain")]
    topology: String,
    /// Segment count for chain phantoms.
    #[arg(long, default_value_t = 2)]
    parts: usize,
    #[arg(long, default_value_t = 64)]
    grid_dim: usize,
    /// Half extent of the cubic grid in mm (default fits the body).
    #[arg(long)]
    grid_extent: Option<f64>,
    #[arg(long, default_value_t = 40.0)]
    limb_length: f64,
    #[arg(long, default_value_t = 14.0)]
    limb_radius: f64,
    #[arg(long, default_value_t = 16)]
    segments: usize,
    /// Joint blend band half-width in mm (default 0.8 * radius).
    #[arg(long)]
    blend_band: Option<f64>,
    /// Intensity noise amplitude.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    subjects: usize,
    /// Spread of the per-subject shape coefficients.
    #[arg(long, default_value_t = 0.15)]
    beta_scale: f64,
    /// Organ as "x,y,z,radius,intensity"; repeatable. Default: one organ
    /// per part.
    #[arg(long = "organ")]
    organs: Vec<String>,
    /// Pose file applied to synthesize native images (default: zero pose).
    #[arg(long)]
    pose: Option<PathBuf>,
    /// Deformation used for native-image synthesis.
    #[arg(long, default_value = "ktpolyrigid")]
    method: String,
}

#[derive(Args)]
struct WeightsArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    vertex_weights: PathBuf,
    /// Volume whose grid (and mask, if present) defines the solve domain.
    #[arg(long)]
    grid_from: PathBuf,
    /// Explicit mask volume overriding the one from --grid-from.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 4000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Gradient step (default 0.9x the stability bound).
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Skip mesh closedness validation.
    #[arg(long)]
    no_validate: bool,
}

#[derive(Args)]
struct DeformArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    pose: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// lbs | polyrigid | ktpolyrigid
    #[arg(long, default_value = "ktpolyrigid")]
    method: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    field: PathBuf,
    /// Mask volume (default: the field's own mask, if any).
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    csv: PathBuf,
    /// Also write the log2|det J| + sign volume.
    #[arg(long)]
    jacobian: Option<PathBuf>,
    /// Include |det| of folded voxels in the log statistics.
    #[arg(long)]
    include_folds: bool,
    /// Record wall time in the CSV (breaks bit-reproducibility of the CSV).
    #[arg(long)]
    timing: bool,
    /// Method label for the CSV row.
    #[arg(long, default_value = "field")]
    label: String,
    /// Pose magnitude column value.
    #[arg(long, default_value_t = 0.0)]
    pose_magnitude: f64,
}

#[derive(Args)]
struct FlowArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    mesh: PathBuf,
    /// Comma-separated shape coefficients at t = 0.
    #[arg(long)]
    beta_start: String,
    /// Comma-separated shape coefficients at t = 1.
    #[arg(long)]
    beta_end: String,
    #[arg(long, default_value_t = 16)]
    steps: usize,
    #[arg(long)]
    grid_from: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Evaluate coordinates once against the start shape.
    #[arg(long)]
    freeze_weights: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CanonicalizeArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    pose: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value = "ktpolyrigid")]
    method: String,
    /// Subject shape coefficients; enables the shape-flow composition.
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    steps: usize,
    /// Skip the shape flow even when beta is present.
    #[arg(long)]
    skip_flow: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GroupwiseArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_bank: PathBuf,
    #[arg(long)]
    out_trace: PathBuf,
    #[arg(long)]
    out_mean: PathBuf,
    /// Regularization weight (default 1e-2 x pooled image variance).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    /// fd | analytic
    #[arg(long, default_value = "fd")]
    grad_mode: String,
    #[arg(long, default_value_t = 1e-4)]
    fd_step: f64,
    /// Use the frozen-mean alternating scheme instead of joint descent.
    #[arg(long)]
    alternating: bool,
    #[arg(long, default_value_t = 5)]
    outer_rounds: usize,
    #[arg(long, default_value_t = 10)]
    inner_iters: usize,
    #[arg(long, default_value_t = 16)]
    flow_steps: usize,
}

#[derive(Args)]
struct InvertArgs {
    #[arg(long)]
    field: PathBuf,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    /// Roundtrip tolerance in voxels.
    #[arg(long, default_value_t = 0.05)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WarpLabelsArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    field: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    volume: PathBuf,
    /// Output prefix; writes <prefix>_{sagittal,coronal,axial}.png.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    channel: usize,
    #[arg(long, default_value_t = 1.0)]
    window: f64,
    #[arg(long, default_value_t = 0.5)]
    level: f64,
    /// Slice indices "i,j,k" (default: volume center).
    #[arg(long)]
    slice: Option<String>,
}

/// Entry point used by the `ktpoly` binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = cli
        .threads
        .or_else(|| std::env::var("KTPOLY_THREADS").ok().and_then(|t| t.parse().ok()));
    if let Some(n) = threads {
        // The global pool can only be installed once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ktpoly: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Weights(a) => cmd_weights(a),
        Command::Deform(a) => cmd_deform(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Flow(a) => cmd_flow(a),
        Command::Canonicalize(a) => cmd_canonicalize(a),
        Command::Groupwise(a) => cmd_groupwise(a),
        Command::Invert(a) => cmd_invert(a),
        Command::WarpLabels(a) => cmd_warp_labels(a),
        Command::Render(a) => cmd_render(a),
    }
}

fn parse_floats(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::SpecInvalid(format!("bad number '{t}'")))
        })
        .collect()
}

fn weight_field_from_volume(grid: VolumeGrid) -> Result<WeightField> {
    if grid.mask.is_none() {
        return Err(Error::SpecInvalid(
            "weights volume carries no interior mask".into(),
        ));
    }
    Ok(WeightField { grid, boundary: Vec::new(), energy_trace: Vec::new(), iterations: 0 })
}

fn cmd_phantom(a: PhantomArgs) -> Result<()> {
    let topology = match a.topology.as_str() {
        "chain" => Topology::Chain,
        "biped" => Topology::Biped,
        other => return Err(Error::SpecInvalid(format!("unknown topology '{other}'"))),
    };
    let scale = a.limb_length / 40.0;
    let extent = a.grid_extent.unwrap_or(match topology {
        Topology::Chain => a.parts as f64 * a.limb_length + 2.0 * a.limb_radius + 10.0,
        Topology::Biped => 110.0 * scale,
    });
    let grid = GridSpec::centered_cube(a.grid_dim, extent);
    let mut spec = PhantomSpec {
        topology,
        parts: a.parts,
        limb_length: a.limb_length,
        limb_radius: a.limb_radius,
        organs: Vec::new(),
        grid,
        seed: a.seed,
        blend_band: a.blend_band,
        segments: a.segments,
        noise: a.noise,
    };
    spec.organs = if a.organs.is_empty() {
        default_organs(&spec)?
    } else {
        a.organs
            .iter()
            .map(|o| {
                let v = parse_floats(o)?;
                if v.len() != 5 {
                    return Err(Error::SpecInvalid(format!(
                        "organ '{o}' needs x,y,z,radius,intensity"
                    )));
                }
                Ok(OrganSpec { center: [v[0], v[1], v[2]], radius: v[3], intensity: v[4] })
            })
            .collect::<Result<_>>()?
    };
    let method = DeformMethod::parse(&a.method)?;
    let phantom = build_phantom(&spec)?;
    let pose = match &a.pose {
        Some(p) => io::read_pose(p)?,
        None => Pose::zeros(phantom.tree.part_count()),
    };
    if pose.part_count() != phantom.tree.part_count() {
        return Err(Error::DimensionMismatch {
            expected: phantom.tree.part_count(),
            got: pose.part_count(),
        });
    }
    let posed = pose.theta.iter().any(|t| t.norm() > 0.0);

    std::fs::create_dir_all(&a.out)?;
    let betas = cohort_betas(a.seed, a.subjects, phantom.basis.beta_dim(), a.beta_scale);
    let mut manifest_subjects = Vec::new();
    // The weight solve is shared: all subjects use the canonical geometry.
    let weights = if posed {
        Some(pipeline::solve_phantom_weights(&phantom, &SolveConfig::default())?)
    } else {
        None
    };
    for (s, beta) in betas.iter().enumerate() {
        let subdir = a.out.join(format!("subject_{s:03}"));
        std::fs::create_dir_all(&subdir)?;
        io::write_mesh(&phantom.mesh, &subdir.join("mesh.obj"))?;
        io::write_kinematic_model(
            &phantom.tree,
            Some(&phantom.basis),
            &subdir.join("model.json"),
        )?;
        io::write_pose(&pose, &subdir.join("pose.json"))?;
        io::write_vertex_weights(&phantom.vertex_weights, &subdir.join("vertex_weights.json"))?;
        io::write_volume(&phantom.image, &subdir.join("canonical.json"))?;
        io::write_volume(&phantom.labels, &subdir.join("labels.json"))?;
        let native = match &weights {
            Some(w) => pose_phantom(&phantom, w, &pose, method)?.native_image,
            None => phantom.image.clone(),
        };
        let mut native = native;
        native.mask = Some(phantom.mask.clone());
        io::write_volume(&native, &subdir.join("image.json"))?;
        manifest_subjects.push(io::ManifestSubject {
            image: format!("subject_{s:03}/image.json"),
            tree: format!("subject_{s:03}/model.json"),
            pose: format!("subject_{s:03}/pose.json"),
            mesh: format!("subject_{s:03}/mesh.obj"),
            weights: None,
            beta: beta.clone(),
        });
    }
    let manifest = io::CohortManifest {
        canonical_grid: grid,
        method: method.name().into(),
        mask: Some("subject_000/image.mask.json".into()),
        subjects: manifest_subjects,
    };
    io::write_manifest(&manifest, &a.out.join("manifest.json"))?;
    println!(
        "phantom: {} subject(s), {} parts, grid {}^3, wrote {}",
        a.subjects,
        phantom.tree.part_count(),
        a.grid_dim,
        a.out.display()
    );
    Ok(())
}

/// One organ per part, centered in the limb.
fn default_organs(spec: &PhantomSpec) -> Result<Vec<OrganSpec>> {
    let phantom = build_phantom(&PhantomSpec { organs: Vec::new(), ..spec.clone() })?;
    Ok(phantom
        .parts
        .iter()
        .map(|p| {
            let mid = (p.p0 + p.p1) * 0.5;
            OrganSpec { center: [mid.x, mid.y, mid.z], radius: 0.55 * p.radius, intensity: 0.95 }
        })
        .collect())
}

fn cmd_weights(a: WeightsArgs) -> Result<()> {
    let mesh = io::read_mesh(&a.mesh, !a.no_validate)?;
    let vertex_weights = io::read_vertex_weights(&a.vertex_weights)?;
    let reference = io::read_volume(&a.grid_from)?;
    let spec = reference.spec;
    let mask: Vec<bool> = match &a.mask {
        Some(path) => {
            let m = io::read_volume(path)?;
            m.data.iter().map(|&v| v != 0.0).collect()
        }
        None => match reference.mask {
            Some(m) => m,
            None => mask_from_mesh(&mesh, &spec),
        },
    };
    let boundary = rasterize_boundary_weights(&mesh, &vertex_weights, &spec, &mask)?;
    let config = SolveConfig { max_iters: a.max_iters, tol: a.tol, step: a.step };
    let field = solve_weights(&spec, &mask, &boundary, &config)?;
    io::write_volume(&field.grid, &a.out)?;
    println!(
        "weights: {} channels, {} iterations, energy {:.6e} -> {:.6e}",
        field.channels(),
        field.iterations,
        field.energy_trace.first().unwrap_or(&0.0),
        field.energy_trace.last().unwrap_or(&0.0)
    );
    Ok(())
}

fn cmd_deform(a: DeformArgs) -> Result<()> {
    let (tree, _) = io::read_kinematic_model(&a.model)?;
    let pose = io::read_pose(&a.pose)?;
    let weights = weight_field_from_volume(io::read_volume(&a.weights)?)?;
    let method = DeformMethod::parse(&a.method)?;
    let transforms = forward_kinematics(&tree, &pose)?;
    let field = ArticulatedField::new(method, &transforms, &weights)?;
    let grid = weights.grid.spec;
    let mut dense = field.sample_dense(&grid)?;
    dense.mask = weights.grid.mask.clone();
    io::write_volume(&dense, &a.out)?;
    println!("deform: {} field on {:?} grid -> {}", method.name(), grid.dims, a.out.display());
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let field = io::read_volume(&a.field)?;
    let mask: Option<Vec<bool>> = match &a.mask {
        Some(path) => Some(io::read_volume(path)?.data.iter().map(|&v| v != 0.0).collect()),
        None => field.mask.clone(),
    };
    let start = std::time::Instant::now();
    let mut report = regularity_report(&field, mask.as_deref(), a.include_folds)?;
    if a.timing {
        report.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    }
    if let Some(path) = &a.jacobian {
        io::write_volume(&report.jacobian_field, path)?;
    }
    println!(
        "metrics: folds {:.4}% | log2|det J| mean {:.4} std {:.4}",
        report.fold_percent, report.mean_log2_absdet, report.std_log2_absdet
    );
    let row = MethodRow {
        method: DeformMethod::KtPolyRigid,
        pose_magnitude_rad: a.pose_magnitude,
        report: Some(report),
        status: "ok".into(),
    };
    let mut csv = rows_to_csv(&[row]);
    // The row's method column carries the user label, not a method guess.
    csv = csv.replacen("ktpolyrigid", &a.label, 1);
    io::write_text(&a.csv, &csv)?;
    Ok(())
}

fn cmd_flow(a: FlowArgs) -> Result<()> {
    let (_, basis) = io::read_kinematic_model(&a.model)?;
    let basis = basis.ok_or_else(|| {
        Error::SpecInvalid("model carries no shape basis; the flow needs one".into())
    })?;
    let mesh = io::read_mesh(&a.mesh, true)?;
    let beta_start = parse_floats(&a.beta_start)?;
    let beta_end = parse_floats(&a.beta_end)?;
    let reference = io::read_volume(&a.grid_from)?;
    let mask: Option<Vec<bool>> = match &a.mask {
        Some(path) => Some(io::read_volume(path)?.data.iter().map(|&v| v != 0.0).collect()),
        None => reference.mask.clone(),
    };
    let mut spec = crate::flow::FlowSpec::new(beta_start.clone(), beta_end, a.steps)?;
    spec.recompute_weights = !a.freeze_weights;
    let start_mesh = crate::mesh::SurfaceMesh {
        vertices: basis.shape_vertices(&beta_start)?,
        faces: mesh.faces.clone(),
    };
    let dense =
        crate::flow::sample_dense_flow(&spec, &basis, &start_mesh, &reference.spec, mask.as_deref())?;
    io::write_volume(&dense, &a.out)?;
    println!("flow: {} steps on {:?} grid -> {}", a.steps, reference.spec.dims, a.out.display());
    Ok(())
}

fn cmd_canonicalize(a: CanonicalizeArgs) -> Result<()> {
    let native = io::read_volume(&a.image)?;
    let (tree, basis) = io::read_kinematic_model(&a.model)?;
    let pose = io::read_pose(&a.pose)?;
    let weights = weight_field_from_volume(io::read_volume(&a.weights)?)?;
    let method = DeformMethod::parse(&a.method)?;
    let transforms = forward_kinematics(&tree, &pose)?;
    let articulated = ArticulatedField::new(method, &transforms, &weights)?;
    let grid = weights.grid.spec;

    let flow_disp = match (&a.beta, a.skip_flow) {
        (Some(beta_text), false) => {
            let beta = parse_floats(beta_text)?;
            if beta.iter().all(|&b| b == 0.0) {
                None
            } else {
                let basis = basis.ok_or_else(|| {
                    Error::SpecInvalid("model carries no shape basis; --beta needs one".into())
                })?;
                let mesh_path = a.mesh.as_ref().ok_or_else(|| {
                    Error::SpecInvalid("--mesh is required when --beta is given".into())
                })?;
                let mesh = io::read_mesh(mesh_path, true)?;
                Some(pipeline::subject_flow_displacement(
                    &basis,
                    &mesh.faces,
                    &beta,
                    a.steps,
                    &grid,
                    weights.grid.mask.as_deref(),
                )?)
            }
        }
        _ => None,
    };
    let canonical =
        pipeline::canonicalize_image(&native, &articulated, flow_disp.as_ref(), &grid)?;
    io::write_volume(&canonical, &a.out)?;
    println!(
        "canonicalize: {}{} -> {}",
        method.name(),
        if flow_disp.is_some() { " + shape flow" } else { "" },
        a.out.display()
    );
    Ok(())
}

fn cmd_groupwise(a: GroupwiseArgs) -> Result<()> {
    let manifest = io::read_manifest(&a.manifest)?;
    let dir = a.manifest.parent().unwrap_or_else(|| Path::new("."));
    let method = DeformMethod::parse(&manifest.method)?;
    let grid = manifest.canonical_grid;
    let mask: Option<Vec<bool>> = match &manifest.mask {
        Some(rel) => Some(
            io::read_volume(&dir.join(rel))?
                .data
                .iter()
                .map(|&v| v != 0.0)
                .collect(),
        ),
        None => None,
    };
    let mut subjects = Vec::new();
    for s in &manifest.subjects {
        let image = io::read_volume(&dir.join(&s.image))?;
        let (tree, basis) = io::read_kinematic_model(&dir.join(&s.tree))?;
        let pose = io::read_pose(&dir.join(&s.pose))?;
        let transforms = forward_kinematics(&tree, &pose)?;
        let weights = match &s.weights {
            Some(rel) => weight_field_from_volume(io::read_volume(&dir.join(rel))?)?,
            None => {
                // Solve from the mesh and vertex weights next to the model.
                let mesh = io::read_mesh(&dir.join(&s.mesh), true)?;
                let vw_path = dir
                    .join(&s.mesh)
                    .with_file_name("vertex_weights.json");
                let vertex_weights = io::read_vertex_weights(&vw_path)?;
                let mask_for_solve: Vec<bool> = match &mask {
                    Some(m) => m.clone(),
                    None => mask_from_mesh(&mesh, &grid),
                };
                let boundary =
                    rasterize_boundary_weights(&mesh, &vertex_weights, &grid, &mask_for_solve)?;
                solve_weights(&grid, &mask_for_solve, &boundary, &SolveConfig::default())?
            }
        };
        let flow_displacement = if s.beta.iter().any(|&b| b != 0.0) {
            let basis = basis.ok_or_else(|| {
                Error::SpecInvalid("subject has beta but its model has no shape basis".into())
            })?;
            let mesh = io::read_mesh(&dir.join(&s.mesh), true)?;
            Some(pipeline::subject_flow_displacement(
                &basis,
                &mesh.faces,
                &s.beta,
                a.flow_steps,
                &grid,
                mask.as_deref(),
            )?)
        } else {
            None
        };
        subjects.push(CohortSubject { image, transforms, weights, flow_displacement });
    }
    let cohort = Cohort::new(subjects, grid, mask, method)?;
    let config = GroupwiseConfig {
        lambda: a.lambda,
        step: a.step,
        max_iters: a.max_iters,
        grad_mode: match a.grad_mode.as_str() {
            "fd" => GradMode::Fd,
            "analytic" => GradMode::Analytic,
            other => return Err(Error::SpecInvalid(format!("unknown grad mode '{other}'"))),
        },
        fd_step: a.fd_step,
    };
    let result = if a.alternating {
        groupwise::optimize_alternating(&cohort, &config, a.outer_rounds, a.inner_iters)?
    } else {
        groupwise::optimize(&cohort, &config)?
    };
    io::write_twist_bank(&result.bank, &a.out_bank)?;
    let mut trace = String::from("iteration,loss,data_term,reg_term\n");
    for (i, ((l, d), r)) in result
        .loss_trace
        .iter()
        .zip(&result.data_trace)
        .zip(&result.reg_trace)
        .enumerate()
    {
        trace.push_str(&format!("{i},{l:.9e},{d:.9e},{r:.9e}\n"));
    }
    io::write_text(&a.out_trace, &trace)?;
    let mean = groupwise::cohort_mean(&cohort, &result.bank)?;
    io::write_volume(&mean, &a.out_mean)?;
    println!(
        "groupwise: loss {:.6e} -> {:.6e} over {} accepted iteration(s){}{}",
        result.loss_trace.first().unwrap_or(&0.0),
        result.loss_trace.last().unwrap_or(&0.0),
        result.loss_trace.len() - 1,
        if result.stalled { ", line search stalled" } else { "" },
        if a.alternating { " (alternating)" } else { "" }
    );
    Ok(())
}

fn cmd_invert(a: InvertArgs) -> Result<()> {
    let field = io::read_volume(&a.field)?;
    if field.channels != 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: field.channels });
    }
    let inverted = invert_field(&field, a.max_iters, a.tol);
    io::write_volume(&inverted.grid, &a.out)?;
    println!(
        "invert: {:.2}% of voxels converged to {} voxel roundtrip",
        100.0 * inverted.converged_fraction,
        a.tol
    );
    Ok(())
}

fn cmd_warp_labels(a: WarpLabelsArgs) -> Result<()> {
    let labels = io::read_volume(&a.labels)?;
    let field = io::read_volume(&a.field)?;
    if field.channels != 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: field.channels });
    }
    let warped = resample_image(&labels, &field, &field.spec, Interpolation::Nearest);
    io::write_volume(&warped, &a.out)?;
    println!("warp-labels: {} -> {}", a.labels.display(), a.out.display());
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let volume = io::read_volume(&a.volume)?;
    let slices = match &a.slice {
        Some(text) => {
            let v = parse_floats(text)?;
            if v.len() != 3 {
                return Err(Error::SpecInvalid("slice needs i,j,k".into()));
            }
            Some([v[0] as usize, v[1] as usize, v[2] as usize])
        }
        None => None,
    };
    let files =
        crate::render::render_slices(&volume, a.channel, a.window, a.level, slices, &a.out)?;
    for f in files {
        println!("render: {}", f.display());
    }
    Ok(())
}
