//! Groupwise intensity-variance registration: per-subject, per-joint twist
//! perturbations of the initial rigid transforms, optimized to minimize the
//! voxelwise intensity variance across the cohort in canonical space.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::deform::{eval_lbs, ArticulatedField, DeformMethod};
use crate::error::{Error, Result};
use crate::se3::{self, so3_hat, RigidTransform, Twist};
use crate::volume::{GridSpec, OutOfBounds, VolumeGrid};
use crate::weights::WeightField;

/// Linearization validity guard on the rotational twist norm (radians).
pub const OMEGA_LIMIT: f64 = 0.3;

/// A 4x4 action whose linear block need not be orthogonal; produced by the
/// linearized perturbation and consumed only inside blended evaluations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine3 {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Affine3 {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.linear * x + self.translation
    }
}

/// Linearized left perturbation (I + hat(xi)) . T.
pub fn perturb_transform(t: &RigidTransform, xi: &Twist) -> Result<Affine3> {
    let norm = xi.omega.norm();
    if norm > OMEGA_LIMIT {
        return Err(Error::TwistTooLarge { norm, limit: OMEGA_LIMIT });
    }
    let skew = so3_hat(&xi.omega);
    Ok(Affine3 {
        linear: t.rotation + skew * t.rotation,
        translation: t.translation + skew * t.translation + xi.v,
    })
}

/// Exact variant exp(xi) . T, used for validation and for log-based blends.
pub fn perturb_transform_exact(t: &RigidTransform, xi: &Twist) -> Result<RigidTransform> {
    let norm = xi.omega.norm();
    if norm > OMEGA_LIMIT {
        return Err(Error::TwistTooLarge { norm, limit: OMEGA_LIMIT });
    }
    Ok(se3::compose(&se3::se3_exp(xi), t))
}

/// S x K twist perturbations.
#[derive(Clone, Debug, PartialEq)]
pub struct TwistBank {
    pub xi: Vec<Vec<Twist>>,
}

impl TwistBank {
    pub fn zeros(subjects: usize, parts: usize) -> Self {
        TwistBank { xi: vec![vec![Twist::zero(); parts]; subjects] }
    }

    pub fn squared_norm(&self) -> f64 {
        self.xi
            .iter()
            .flatten()
            .map(|t| t.omega.norm_squared() + t.v.norm_squared())
            .sum()
    }

    pub fn max_omega_norm(&self) -> f64 {
        self.xi
            .iter()
            .flatten()
            .map(|t| t.omega.norm())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct CohortSubject {
    /// Native-space intensity image.
    pub image: VolumeGrid,
    /// Initial per-part transforms (canonical -> native).
    pub transforms: Vec<RigidTransform>,
    pub weights: WeightField,
    /// Dense shape-flow displacement on the canonical grid (population ->
    /// subject canonical); identity when None.
    pub flow_displacement: Option<VolumeGrid>,
}

#[derive(Clone, Debug)]
pub struct Cohort {
    pub subjects: Vec<CohortSubject>,
    pub grid: GridSpec,
    /// Integration domain Omega; whole grid when None.
    pub mask: Option<Vec<bool>>,
    pub method: DeformMethod,
    interior: Vec<usize>,
}

impl Cohort {
    pub fn new(
        subjects: Vec<CohortSubject>,
        grid: GridSpec,
        mask: Option<Vec<bool>>,
        method: DeformMethod,
    ) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::SpecInvalid("cohort has no subjects".into()));
        }
        let k = subjects[0].transforms.len();
        for (s, subject) in subjects.iter().enumerate() {
            if subject.transforms.len() != k {
                return Err(Error::DimensionMismatch { expected: k, got: subject.transforms.len() });
            }
            if subject.weights.channels() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: subject.weights.channels(),
                });
            }
            if let Some(flow) = &subject.flow_displacement {
                if flow.spec != grid {
                    return Err(Error::SpecInvalid(format!(
                        "subject {s} flow grid does not match the canonical grid"
                    )));
                }
            }
        }
        if let Some(m) = &mask {
            if m.len() != grid.voxel_count() {
                return Err(Error::DimensionMismatch {
                    expected: grid.voxel_count(),
                    got: m.len(),
                });
            }
        }
        let interior = match &mask {
            Some(m) => (0..grid.voxel_count()).filter(|&i| m[i]).collect(),
            None => (0..grid.voxel_count()).collect(),
        };
        Ok(Cohort { subjects, grid, mask, method, interior })
    }

    pub fn subject_count(&self) -> usize {
        self.subjects.len()
    }

    pub fn part_count(&self) -> usize {
        self.subjects[0].transforms.len()
    }

    pub fn interior_count(&self) -> usize {
        self.interior.len()
    }

    /// Subject image resampled into canonical space under its perturbed
    /// transforms; one value per interior voxel.
    pub fn warp_subject(&self, s: usize, xi_row: &[Twist]) -> Result<Vec<f64>> {
        let subject = &self.subjects[s];
        match self.method {
            DeformMethod::Lbs => {
                // Linearized perturbation blends exactly under LBS.
                let affines: Vec<Affine3> = subject
                    .transforms
                    .iter()
                    .zip(xi_row)
                    .map(|(t, xi)| perturb_transform(t, xi))
                    .collect::<Result<_>>()?;
                let values: Vec<f64> = self
                    .interior
                    .par_iter()
                    .map_init(
                        || vec![0.0; self.part_count()],
                        |wbuf, &idx| {
                            let [i, j, k] = self.grid.unravel(idx);
                            let x = self.grid.world_at(i, j, k);
                            let y = match &subject.flow_displacement {
                                Some(flow) => x + flow.vector_at(idx),
                                None => x,
                            };
                            subject.weights.weights_at_into(&y, wbuf);
                            let mut linear = Matrix3::zeros();
                            let mut trans = Vector3::zeros();
                            for (a, &w) in affines.iter().zip(wbuf.iter()) {
                                if w == 0.0 {
                                    continue;
                                }
                                linear += a.linear * w;
                                trans += a.translation * w;
                            }
                            let p = linear * y + trans;
                            let mut out = [0.0];
                            subject.image.trilinear(&p, OutOfBounds::Zero, &mut out);
                            out[0]
                        },
                    )
                    .collect();
                Ok(values)
            }
            _ => {
                // Log-based blends need group elements: exact perturbation.
                let perturbed: Vec<RigidTransform> = subject
                    .transforms
                    .iter()
                    .zip(xi_row)
                    .map(|(t, xi)| perturb_transform_exact(t, xi))
                    .collect::<Result<_>>()?;
                let field = ArticulatedField::new(self.method, &perturbed, &subject.weights)?;
                let results: Vec<Result<f64>> = self
                    .interior
                    .par_iter()
                    .map_init(
                        || vec![0.0; self.part_count()],
                        |wbuf, &idx| {
                            let [i, j, k] = self.grid.unravel(idx);
                            let x = self.grid.world_at(i, j, k);
                            let y = match &subject.flow_displacement {
                                Some(flow) => x + flow.vector_at(idx),
                                None => x,
                            };
                            subject.weights.weights_at_into(&y, wbuf);
                            let p = field.eval_with_weights(&y, wbuf)?;
                            let mut out = [0.0];
                            subject.image.trilinear(&p, OutOfBounds::Zero, &mut out);
                            Ok(out[0])
                        },
                    )
                    .collect();
                results.into_iter().collect()
            }
        }
    }

    fn warp_all(&self, bank: &TwistBank) -> Result<Vec<Vec<f64>>> {
        (0..self.subject_count()).map(|s| self.warp_subject(s, &bank.xi[s])).collect()
    }
}

/// Voxelwise mean of the warped cohort in canonical space.
pub fn cohort_mean(cohort: &Cohort, bank: &TwistBank) -> Result<VolumeGrid> {
    let warps = cohort.warp_all(bank)?;
    let s = cohort.subject_count() as f64;
    let mut mean = VolumeGrid::zeros(cohort.grid, 1);
    for (slot, &idx) in cohort.interior.iter().enumerate() {
        let sum: f64 = warps.iter().map(|w| w[slot]).sum();
        mean.set(idx, 0, sum / s);
    }
    mean.mask = cohort.mask.clone();
    Ok(mean)
}

fn data_term(cohort: &Cohort, warps: &[Vec<f64>]) -> f64 {
    let s = warps.len() as f64;
    let voxel_volume = cohort.grid.voxel_volume();
    let mut total = 0.0;
    for slot in 0..cohort.interior.len() {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for w in warps {
            sum += w[slot];
            sum_sq += w[slot] * w[slot];
        }
        total += sum_sq - sum * sum / s;
    }
    total * voxel_volume
}

/// (total loss, data term, regularization term).
pub fn objective(cohort: &Cohort, bank: &TwistBank, lambda: f64) -> Result<(f64, f64, f64)> {
    let warps = cohort.warp_all(bank)?;
    let data = data_term(cohort, &warps);
    let reg = lambda * bank.squared_norm();
    Ok((data + reg, data, reg))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    /// Central finite differences over every twist coordinate (default).
    Fd,
    /// Chain rule through the linearized action; LBS only.
    Analytic,
}

#[derive(Clone, Debug)]
pub struct GroupwiseConfig {
    /// None: 1e-2 times the pooled image variance.
    pub lambda: Option<f64>,
    /// Target largest twist-coordinate change per iteration.
    pub step: f64,
    pub max_iters: usize,
    pub grad_mode: GradMode,
    pub fd_step: f64,
}

impl Default for GroupwiseConfig {
    fn default() -> Self {
        GroupwiseConfig {
            lambda: None,
            step: 0.05,
            max_iters: 50,
            grad_mode: GradMode::Fd,
            fd_step: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroupwiseResult {
    pub bank: TwistBank,
    pub loss_trace: Vec<f64>,
    pub data_trace: Vec<f64>,
    pub reg_trace: Vec<f64>,
    pub lambda: f64,
    /// Line search failed to find a descent step; the best bank is kept.
    pub stalled: bool,
}

fn pooled_variance(cohort: &Cohort) -> f64 {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut n = 0.0;
    for subject in &cohort.subjects {
        for &v in &subject.image.data {
            sum += v;
            sum_sq += v * v;
            n += 1.0;
        }
    }
    if n == 0.0 {
        return 0.0;
    }
    let mean = sum / n;
    (sum_sq / n - mean * mean).max(0.0)
}

fn bump(bank: &TwistBank, s: usize, k: usize, coord: usize, delta: f64) -> Vec<Twist> {
    let mut row = bank.xi[s].clone();
    let mut coords = row[k].coords();
    coords[coord] += delta;
    row[k] = Twist::from_coords(&coords);
    row
}

/// Gradient descent with backtracking line search over all twists jointly.
pub fn optimize(cohort: &Cohort, config: &GroupwiseConfig) -> Result<GroupwiseResult> {
    let s_count = cohort.subject_count();
    let k_count = cohort.part_count();
    let lambda = config.lambda.unwrap_or_else(|| 1e-2 * pooled_variance(cohort));
    let voxel_volume = cohort.grid.voxel_volume();
    let s_f = s_count as f64;

    let mut bank = TwistBank::zeros(s_count, k_count);
    let mut warps = cohort.warp_all(&bank)?;
    let mut data = data_term(cohort, &warps);
    let mut loss = data + lambda * bank.squared_norm();
    let mut loss_trace = vec![loss];
    let mut data_trace = vec![data];
    let mut reg_trace = vec![lambda * bank.squared_norm()];
    let mut stalled = false;

    // Per-voxel sums reused by the gradient probes.
    let mut sum_w: Vec<f64> = vec![0.0; cohort.interior_count()];
    let mut sum_sq: Vec<f64> = vec![0.0; cohort.interior_count()];
    let recompute_sums = |warps: &[Vec<f64>], sum_w: &mut [f64], sum_sq: &mut [f64]| {
        for slot in 0..sum_w.len() {
            let mut a = 0.0;
            let mut b = 0.0;
            for w in warps {
                a += w[slot];
                b += w[slot] * w[slot];
            }
            sum_w[slot] = a;
            sum_sq[slot] = b;
        }
    };
    recompute_sums(&warps, &mut sum_w, &mut sum_sq);

    for _iter in 0..config.max_iters {
        // Data gradient for one probe: replace subject s's warp and re-sum.
        let probe_data = |s: usize, w_new: &[f64]| -> f64 {
            let mut total = 0.0;
            for slot in 0..w_new.len() {
                let sw = sum_w[slot] - warps[s][slot] + w_new[slot];
                let sq =
                    sum_sq[slot] - warps[s][slot] * warps[s][slot] + w_new[slot] * w_new[slot];
                total += sq - sw * sw / s_f;
            }
            total * voxel_volume
        };

        let mut grad = vec![vec![[0.0f64; 6]; k_count]; s_count];
        match config.grad_mode {
            GradMode::Fd => {
                let h = config.fd_step;
                for s in 0..s_count {
                    for k in 0..k_count {
                        for c in 0..6 {
                            let plus = cohort.warp_subject(s, &bump(&bank, s, k, c, h))?;
                            let minus = cohort.warp_subject(s, &bump(&bank, s, k, c, -h))?;
                            let d_plus = probe_data(s, &plus);
                            let d_minus = probe_data(s, &minus);
                            let mut coords = bank.xi[s][k].coords();
                            let reg_plus = {
                                coords[c] += h;
                                let r: f64 = coords.iter().map(|x| x * x).sum();
                                coords[c] -= h;
                                r
                            };
                            let reg_minus = {
                                coords[c] -= h;
                                let r: f64 = coords.iter().map(|x| x * x).sum();
                                coords[c] += h;
                                r
                            };
                            let base_reg: f64 = bank.xi[s][k]
                                .coords()
                                .iter()
                                .map(|x| x * x)
                                .sum();
                            let loss_plus = d_plus + lambda * (bank.squared_norm() - base_reg + reg_plus);
                            let loss_minus =
                                d_minus + lambda * (bank.squared_norm() - base_reg + reg_minus);
                            grad[s][k][c] = (loss_plus - loss_minus) / (2.0 * h);
                        }
                    }
                }
            }
            GradMode::Analytic => {
                if cohort.method != DeformMethod::Lbs {
                    return Err(Error::SpecInvalid(
                        "analytic gradients require the lbs method (log-based blends use fd)"
                            .into(),
                    ));
                }
                analytic_gradient(cohort, &bank, &warps, &sum_w, lambda, &mut grad)?;
            }
        }

        let grad_inf = grad
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |m, &g| m.max(g.abs()));
        if grad_inf <= 1e-14 {
            break;
        }

        // Backtracking line search, halving up to 8 times.
        let mut alpha = config.step / grad_inf;
        let mut accepted = false;
        for _ in 0..=8 {
            let mut candidate = bank.clone();
            for s in 0..s_count {
                for k in 0..k_count {
                    let mut coords = candidate.xi[s][k].coords();
                    for c in 0..6 {
                        coords[c] -= alpha * grad[s][k][c];
                    }
                    candidate.xi[s][k] = Twist::from_coords(&coords);
                }
            }
            if candidate.max_omega_norm() > OMEGA_LIMIT {
                alpha *= 0.5;
                continue;
            }
            let cand_warps = cohort.warp_all(&candidate)?;
            let cand_data = data_term(cohort, &cand_warps);
            let cand_loss = cand_data + lambda * candidate.squared_norm();
            if cand_loss < loss {
                bank = candidate;
                warps = cand_warps;
                data = cand_data;
                loss = cand_loss;
                recompute_sums(&warps, &mut sum_w, &mut sum_sq);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            stalled = true;
            break;
        }
        loss_trace.push(loss);
        data_trace.push(data);
        reg_trace.push(lambda * bank.squared_norm());
    }

    Ok(GroupwiseResult {
        bank,
        loss_trace,
        data_trace,
        reg_trace,
        lambda,
        stalled,
    })
}

/// Alternating (frozen-mean) variant: each outer round freezes the cohort
/// mean, fully realigns every subject against it independently, then
/// updates the mean. Joint descent from zero spreads a single subject's
/// misalignment across the whole cohort (the variance is flat along a
/// common-motion gauge direction), while block alignment against the
/// frozen mean snaps the misaligned subject back onto the consensus. The
/// recorded joint loss is monotone: the mean minimizes the frozen-mean
/// objective, so each round's joint loss is bounded by the previous one.
pub fn optimize_alternating(
    cohort: &Cohort,
    config: &GroupwiseConfig,
    outer_rounds: usize,
    inner_iters: usize,
) -> Result<GroupwiseResult> {
    let s_count = cohort.subject_count();
    let k_count = cohort.part_count();
    let lambda = config.lambda.unwrap_or_else(|| 1e-2 * pooled_variance(cohort));
    let voxel_volume = cohort.grid.voxel_volume();

    let mut bank = TwistBank::zeros(s_count, k_count);
    let mut warps = cohort.warp_all(&bank)?;
    let mut loss = data_term(cohort, &warps) + lambda * bank.squared_norm();
    let mut loss_trace = vec![loss];
    let mut data_trace = vec![data_term(cohort, &warps)];
    let mut reg_trace = vec![lambda * bank.squared_norm()];
    let mut stalled = false;

    for _round in 0..outer_rounds {
        let s_f = s_count as f64;
        let mean: Vec<f64> = (0..cohort.interior_count())
            .map(|slot| warps.iter().map(|w| w[slot]).sum::<f64>() / s_f)
            .collect();
        // Independent per-subject alignment against the frozen mean.
        let rows: Vec<Result<Vec<Twist>>> = (0..s_count)
            .map(|s| {
                let mut row = bank.xi[s].clone();
                let row_loss = |r: &[Twist], w: &[f64]| -> f64 {
                    let ssd: f64 = w
                        .iter()
                        .zip(&mean)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    let reg: f64 =
                        r.iter().map(|t| t.omega.norm_squared() + t.v.norm_squared()).sum();
                    ssd * voxel_volume + lambda * reg
                };
                let mut w_cur = cohort.warp_subject(s, &row)?;
                let mut f_cur = row_loss(&row, &w_cur);
                for _ in 0..inner_iters {
                    // FD gradient of the frozen-mean objective.
                    let h = config.fd_step;
                    let mut grad = vec![[0.0f64; 6]; k_count];
                    let mut grad_inf = 0.0f64;
                    for k in 0..k_count {
                        for c in 0..6 {
                            let mut plus = row.clone();
                            let mut coords = plus[k].coords();
                            coords[c] += h;
                            plus[k] = Twist::from_coords(&coords);
                            let mut minus = row.clone();
                            let mut coords = minus[k].coords();
                            coords[c] -= h;
                            minus[k] = Twist::from_coords(&coords);
                            let fp = row_loss(&plus, &cohort.warp_subject(s, &plus)?);
                            let fm = row_loss(&minus, &cohort.warp_subject(s, &minus)?);
                            grad[k][c] = (fp - fm) / (2.0 * h);
                            grad_inf = grad_inf.max(grad[k][c].abs());
                        }
                    }
                    if grad_inf <= 1e-14 {
                        break;
                    }
                    let mut alpha = config.step / grad_inf;
                    let mut advanced = false;
                    for _ in 0..=8 {
                        let mut cand = row.clone();
                        for k in 0..k_count {
                            let mut coords = cand[k].coords();
                            for c in 0..6 {
                                coords[c] -= alpha * grad[k][c];
                            }
                            cand[k] = Twist::from_coords(&coords);
                        }
                        if cand.iter().any(|t| t.omega.norm() > OMEGA_LIMIT) {
                            alpha *= 0.5;
                            continue;
                        }
                        let w_cand = cohort.warp_subject(s, &cand)?;
                        let f_cand = row_loss(&cand, &w_cand);
                        if f_cand < f_cur {
                            row = cand;
                            w_cur = w_cand;
                            f_cur = f_cand;
                            advanced = true;
                            break;
                        }
                        alpha *= 0.5;
                    }
                    if !advanced {
                        break;
                    }
                }
                Ok(row)
            })
            .collect();
        let mut round_bank = TwistBank::zeros(s_count, k_count);
        for (s, r) in rows.into_iter().enumerate() {
            round_bank.xi[s] = r?;
        }
        let round_warps = cohort.warp_all(&round_bank)?;
        let round_loss = data_term(cohort, &round_warps) + lambda * round_bank.squared_norm();
        if round_loss < loss {
            bank = round_bank;
            warps = round_warps;
            loss = round_loss;
            loss_trace.push(loss);
            data_trace.push(data_term(cohort, &warps));
            reg_trace.push(lambda * bank.squared_norm());
        } else {
            stalled = true;
            break;
        }
    }
    Ok(GroupwiseResult { bank, loss_trace, data_trace, reg_trace, lambda, stalled })
}

/// Analytic gradient through the linearized LBS action. Uses the variance
/// identity sum_t (W_t - mean) = 0, so the full-mean gradient reduces to
/// 2 (W_s - mean) dW_s.
fn analytic_gradient(
    cohort: &Cohort,
    bank: &TwistBank,
    warps: &[Vec<f64>],
    sum_w: &[f64],
    lambda: f64,
    grad: &mut [Vec<[f64; 6]>],
) -> Result<()> {
    let s_f = cohort.subject_count() as f64;
    let voxel_volume = cohort.grid.voxel_volume();
    let k_count = cohort.part_count();
    for (s, subject) in cohort.subjects.iter().enumerate() {
        let affines: Vec<Affine3> = subject
            .transforms
            .iter()
            .zip(&bank.xi[s])
            .map(|(t, xi)| perturb_transform(t, xi))
            .collect::<Result<_>>()?;
        let contributions: Vec<[f64; 6]> = cohort
            .interior
            .par_iter()
            .enumerate()
            .map_init(
                || vec![0.0; k_count],
                |wbuf, (slot, &idx)| {
                    let [i, j, k] = cohort.grid.unravel(idx);
                    let x = cohort.grid.world_at(i, j, k);
                    let y = match &subject.flow_displacement {
                        Some(flow) => x + flow.vector_at(idx),
                        None => x,
                    };
                    subject.weights.weights_at_into(&y, wbuf);
                    let mut linear = Matrix3::zeros();
                    let mut trans = Vector3::zeros();
                    for (a, &w) in affines.iter().zip(wbuf.iter()) {
                        linear += a.linear * w;
                        trans += a.translation * w;
                    }
                    let p = linear * y + trans;
                    // Exact in-cell gradient of the trilinear interpolant.
                    let mut value = [0.0];
                    let mut grads = [Vector3::zeros()];
                    subject.image.trilinear_with_gradient(
                        &p,
                        OutOfBounds::Zero,
                        &mut value,
                        &mut grads,
                    );
                    let img_grad = grads[0];
                    let residual = warps[s][slot] - sum_w[slot] / s_f;
                    let scale = 2.0 * residual * voxel_volume;
                    let mut out = vec![[0.0f64; 6]; k_count];
                    for (k, (t, &w)) in subject.transforms.iter().zip(wbuf.iter()).enumerate()
                    {
                        if w == 0.0 {
                            continue;
                        }
                        // d/d omega_c: w * e_c x (R y + t); d/d v_c: w * e_c.
                        let base = t.rotation * y + t.translation;
                        for c in 0..3 {
                            let mut e = Vector3::zeros();
                            e[c] = 1.0;
                            let d_omega = e.cross(&base) * w;
                            out[k][c] = scale * img_grad.dot(&d_omega);
                            out[k][3 + c] = scale * img_grad[c] * w;
                        }
                    }
                    out
                },
            )
            .reduce(
                || vec![[0.0f64; 6]; k_count],
                |mut acc, item| {
                    for (a, b) in acc.iter_mut().zip(&item) {
                        for c in 0..6 {
                            a[c] += b[c];
                        }
                    }
                    acc
                },
            );
        for k in 0..k_count {
            for c in 0..6 {
                let coords = bank.xi[s][k].coords();
                grad[s][k][c] = contributions[k][c] + 2.0 * lambda * coords[c];
            }
        }
    }
    Ok(())
}
