//! Squared-error loss against CTF-filtered projections and its exact
//! gradient with respect to all 11 parameters of every kernel.
//!
//! The backward pass walks the same tiles and terms the forward pass
//! rendered, so the gradient is that of the culled forward actually
//! computed. Per-tile partials are kept per (tile, entry) and reduced in
//! tile order, which makes the result independent of thread scheduling.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ctf::{apply_ctf, eval_ctf, filter_in_place, CtfArray, CtfParams};
use crate::error::{Error, Result};
use crate::fft::to_complex;
use crate::gauss_model::{quat_norm, rotation_from_unit_quat, uniform_quaternion, Gaussian, GaussianSet, PARAMS_PER_KERNEL};
use crate::grid::{Image, ImageSpec};
use crate::projector::{project, Pose, ProjectorConfig, Raster};

/// Parameter classes in kernel-parameter order.
pub const PARAM_CLASSES: [(&str, std::ops::Range<usize>); 4] =
    [("center", 0..3), ("log_scales", 3..6), ("quat", 6..10), ("density", 10..11)];

/// Below this absolute disagreement a finite-difference comparison counts as exact.
pub const FD_ABS_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    /// One row per kernel: d_center (3), d_log_scales (3), d_quat (4), d_density.
    pub rows: Vec<[f64; PARAMS_PER_KERNEL]>,
    pub loss: f64,
}

impl GradientSet {
    pub fn zeros(m: usize) -> Self {
        Self { rows: vec![[0.0; PARAMS_PER_KERNEL]; m], loss: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn accumulate(&mut self, other: &GradientSet) {
        self.loss += other.loss;
        for (a, b) in self.rows.iter_mut().zip(&other.rows) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite() && self.rows.iter().all(|r| r.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.rows.iter().flat_map(|r| r.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// One particle's observation: pose, transfer function, and image.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    pub pose: &'a Pose,
    pub ctf: &'a CtfArray,
    pub observed: &'a Image,
}

fn check_dims(ctf: &CtfArray, observed: &Image) -> Result<()> {
    if ctf.spec != observed.spec {
        return Err(Error::Dimension(format!(
            "observed image spec {:?} does not match CTF spec {:?}",
            observed.spec, ctf.spec
        )));
    }
    Ok(())
}

/// CTF-filtered prediction for one particle.
pub fn predict(set: &GaussianSet, pose: &Pose, ctf: &CtfArray, cfg: &ProjectorConfig) -> Result<Image> {
    let raster = Raster::build(set, pose, &ctf.spec, cfg)?;
    let img = raster.render(&ctf.spec, cfg.tau);
    let mut buf = to_complex(&img.data);
    filter_in_place(&mut buf, ctf);
    Ok(Image { spec: ctf.spec, data: buf.iter().map(|c| c.re).collect() })
}

/// Sum of squared residuals, forward pass only.
pub fn loss(set: &GaussianSet, pose: &Pose, ctf: &CtfArray, observed: &Image, cfg: &ProjectorConfig) -> Result<f64> {
    check_dims(ctf, observed)?;
    let pred = predict(set, pose, ctf, cfg)?;
    Ok(pred.data.iter().zip(&observed.data).map(|(p, o)| (p - o) * (p - o)).sum())
}

pub fn loss_and_grad(
    set: &GaussianSet,
    pose: &Pose,
    ctf: &CtfArray,
    observed: &Image,
    cfg: &ProjectorConfig,
) -> Result<GradientSet> {
    check_dims(ctf, observed)?;
    let spec = ctf.spec;
    let raster = Raster::build(set, pose, &spec, cfg)?;
    let rendered = raster.render(&spec, cfg.tau);

    let mut buf = to_complex(&rendered.data);
    drop(rendered);
    filter_in_place(&mut buf, ctf);
    let mut loss = 0.0;
    for (c, o) in buf.iter_mut().zip(&observed.data) {
        let r = c.re - o;
        loss += r * r;
        // The filter is self-adjoint (real, even transfer function), so the
        // image-space gradient is the filtered doubled residual.
        *c = (2.0 * r).into();
    }
    filter_in_place(&mut buf, ctf);
    let pixel_grad: Vec<f64> = buf.iter().map(|c| c.re).collect();
    drop(buf);

    let splat_grads = splat_backward(&raster, &pixel_grad, &spec, cfg.tau);
    let mut out = GradientSet::zeros(set.len());
    out.loss = loss;
    chain_to_kernels(set, pose, &raster, &splat_grads, &mut out);
    Ok(out)
}

/// Per-splat partials: `[d_amplitude, d_mx, d_my, d_Cxx, d_Cxy, d_Cyy]`
/// where `C` is the in-plane precision and `d_Cxy` is the derivative with
/// respect to one off-diagonal entry.
fn splat_backward(raster: &Raster, pixel_grad: &[f64], spec: &crate::grid::ImageSpec, tau: f64) -> Vec<[f64; 6]> {
    let bins = &raster.bins;
    let per_tile: Vec<Vec<[f64; 6]>> = (0..bins.tile_count())
        .into_par_iter()
        .map(|t| {
            let list = bins.tile(t);
            let mut acc = vec![[0.0; 6]; list.len()];
            let mut slot = usize::MAX;
            let mut current = u32::MAX;
            raster.for_each_term(t, spec, tau, |p, si, dx, dy, term| {
                if si as u32 != current {
                    current = si as u32;
                    // Entries are visited in list order; advance to this splat.
                    slot = slot.wrapping_add(1);
                    while list[slot] != current {
                        slot += 1;
                    }
                }
                let g = pixel_grad[p];
                let s = &raster.splats[si];
                let [ca, cb, cc] = raster.conics[si];
                let gt = g * term;
                let a = &mut acc[slot];
                if s.amplitude != 0.0 {
                    a[0] += gt / s.amplitude;
                }
                a[1] += gt * (ca * dx + cb * dy);
                a[2] += gt * (cb * dx + cc * dy);
                a[3] += -0.5 * gt * dx * dx;
                a[4] += -0.5 * gt * dx * dy;
                a[5] += -0.5 * gt * dy * dy;
            });
            acc
        })
        .collect();

    let mut out = vec![[0.0; 6]; raster.splats.len()];
    for (t, acc) in per_tile.iter().enumerate() {
        for (&si, g) in bins.tile(t).iter().zip(acc) {
            let o = &mut out[si as usize];
            for k in 0..6 {
                o[k] += g[k];
            }
        }
    }
    out
}

/// Partial derivatives of the rotation matrix with respect to `(w, x, y, z)`.
fn rotation_jacobian(w: f64, x: f64, y: f64, z: f64) -> [Matrix3<f64>; 4] {
    [
        Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0),
        Matrix3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x),
        Matrix3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y),
        Matrix3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0),
    ]
}

fn chain_to_kernels(set: &GaussianSet, pose: &Pose, raster: &Raster, splat_grads: &[[f64; 6]], out: &mut GradientSet) {
    let w = pose.view();
    let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
    for (si, g) in splat_grads.iter().enumerate() {
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        let j = raster.kernel_of[si];
        let kernel = &set.kernels[j];
        let splat = &raster.splats[si];
        let [ca, cb, cc] = raster.conics[si];
        let conic = Matrix2::new(ca, cb, cb, cc);
        let d_amp = g[0];

        // Gradient w.r.t. the in-plane covariance (full-matrix convention).
        let d_conic = Matrix2::new(g[3], g[4], g[4], g[5]);
        let mut d_cov2 = -conic * d_conic * conic;
        d_cov2 += conic * (-0.5 * splat.amplitude * d_amp);

        let mut d_cov_cam = Matrix3::zeros();
        d_cov_cam.fixed_view_mut::<2, 2>(0, 0).copy_from(&d_cov2);
        let d_sigma = w.transpose() * d_cov_cam * w;

        let qn = quat_norm(&kernel.quat);
        let [qw, qx, qy, qz] = kernel.quat.map(|v| v / qn);
        let r = rotation_from_unit_quat(qw, qx, qy, qz);
        let s = kernel.log_scales.map(f64::exp);
        let m = r * Matrix3::from_diagonal(&s);
        let d_m = (d_sigma + d_sigma.transpose()) * m;

        let row = &mut out.rows[j];

        // Center: mu = first two rows of W p.
        let d_mu = Vector2::new(g[1], g[2]);
        for a in 0..3 {
            row[a] = w[(0, a)] * d_mu.x + w[(1, a)] * d_mu.y;
        }

        // Scales: through M = R S and through the amplitude's prod(s).
        for c in 0..3 {
            let mut d_s = 0.0;
            for i in 0..3 {
                d_s += d_m[(i, c)] * r[(i, c)];
            }
            row[3 + c] = d_s * s[c] + d_amp * splat.amplitude;
        }

        // Rotation: d_R = d_M S, then through the normalized quaternion.
        let d_r = d_m * Matrix3::from_diagonal(&s);
        let jac = rotation_jacobian(qw, qx, qy, qz);
        let d_qhat: [f64; 4] = std::array::from_fn(|k| d_r.component_mul(&jac[k]).sum());
        let qhat = [qw, qx, qy, qz];
        let radial: f64 = (0..4).map(|k| qhat[k] * d_qhat[k]).sum();
        for k in 0..4 {
            row[6 + k] = (d_qhat[k] - qhat[k] * radial) / qn;
        }

        let det2 = splat.cov2[0] * splat.cov2[2] - splat.cov2[1] * splat.cov2[1];
        let unit_amp = sqrt_2pi * s.x * s.y * s.z / det2.sqrt();
        row[10] = d_amp * unit_amp;
    }
}

/// Sum of per-image gradients over a minibatch. Images run in parallel; the
/// partial results are combined by a fixed pairwise tree in index order.
pub fn batch_loss_and_grad(set: &GaussianSet, batch: &[Observation<'_>], cfg: &ProjectorConfig) -> Result<GradientSet> {
    let parts: Vec<GradientSet> = batch
        .par_iter()
        .map(|o| loss_and_grad(set, o.pose, o.ctf, o.observed, cfg))
        .collect::<Result<_>>()?;
    Ok(tree_sum(parts).unwrap_or_else(|| GradientSet::zeros(set.len())))
}

fn tree_sum(mut parts: Vec<GradientSet>) -> Option<GradientSet> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.accumulate(&b);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassError {
    pub max_rel: f64,
    pub mean_rel: f64,
    pub count: usize,
}

/// Finite-difference comparison per parameter class.
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub step: f64,
    pub classes: Vec<(String, ClassError)>,
}

impl FdReport {
    pub fn worst(&self) -> f64 {
        self.classes.iter().map(|(_, c)| c.max_rel).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.classes.iter().all(|(_, c)| c.max_rel < tol)
    }

    pub fn class(&self, name: &str) -> Option<&ClassError> {
        self.classes.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }
}

impl std::fmt::Display for FdReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "# finite-difference check, step {:e}", self.step)?;
        writeln!(f, "{:<12} {:>14} {:>14} {:>8}", "class", "max_rel", "mean_rel", "count")?;
        for (name, c) in &self.classes {
            writeln!(f, "{:<12} {:>14.6e} {:>14.6e} {:>8}", name, c.max_rel, c.mean_rel, c.count)?;
        }
        Ok(())
    }
}

/// Relative disagreement with an absolute floor.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= FD_ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Central differences of the loss with respect to every raw parameter,
/// compared against [`loss_and_grad`]. Quaternion gradients are compared
/// after projecting out the radial component.
pub fn finite_diff_check(
    set: &GaussianSet,
    pose: &Pose,
    ctf: &CtfArray,
    observed: &Image,
    cfg: &ProjectorConfig,
    step: f64,
) -> Result<FdReport> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let analytic = loss_and_grad(set, pose, ctf, observed, cfg)?;
    let base = set.to_params();
    let numeric: Vec<f64> = (0..base.len())
        .into_par_iter()
        .map(|i| {
            let mut probe = set.clone();
            let mut p = base.clone();
            p[i] = base[i] + step;
            probe.set_params(&p);
            let up = loss(&probe, pose, ctf, observed, cfg)?;
            p[i] = base[i] - step;
            probe.set_params(&p);
            let down = loss(&probe, pose, ctf, observed, cfg)?;
            Ok((up - down) / (2.0 * step))
        })
        .collect::<Result<_>>()?;

    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); PARAM_CLASSES.len()];
    for (j, row) in analytic.rows.iter().enumerate() {
        let fd = &numeric[j * PARAMS_PER_KERNEL..(j + 1) * PARAMS_PER_KERNEL];
        let q = set.kernels[j].quat;
        let qn = quat_norm(&q);
        let qhat = q.map(|v| v / qn);
        let tangent = |v: &[f64]| -> [f64; 4] {
            let radial: f64 = (0..4).map(|k| v[k] * qhat[k]).sum();
            std::array::from_fn(|k| v[k] - radial * qhat[k])
        };
        let (ta, tn) = (tangent(&row[6..10]), tangent(&fd[6..10]));
        for (c, (_, range)) in PARAM_CLASSES.iter().enumerate() {
            for i in range.clone() {
                let (a, n) = if c == 2 { (ta[i - 6], tn[i - 6]) } else { (row[i], fd[i]) };
                errors[c].push(relative_error(a, n));
            }
        }
    }
    let classes = PARAM_CLASSES
        .iter()
        .zip(errors)
        .map(|((name, _), e)| {
            let max_rel = e.iter().cloned().fold(0.0, f64::max);
            let mean_rel = e.iter().sum::<f64>() / e.len().max(1) as f64;
            (name.to_string(), ClassError { max_rel, mean_rel, count: e.len() })
        })
        .collect();
    Ok(FdReport { step, classes })
}

/// A self-contained loss evaluation: a model, a pose, a CTF and an image
/// generated from a different model.
#[derive(Clone, Debug)]
pub struct GradProblem {
    pub set: GaussianSet,
    pub pose: Pose,
    pub ctf: CtfArray,
    pub observed: Image,
}

/// `n` random kernels of unit-order density inside the central half of a
/// `dim`-pixel box, a random pose with a small shift, a random astigmatic
/// CTF and a target projected from an independent random model.
pub fn random_problem(n: usize, dim: usize, pixel_size: f64, seed: u64) -> Result<GradProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ImageSpec::new(dim, pixel_size)?;
    let reach = spec.box_size() / 4.0;
    let make = |rng: &mut ChaCha8Rng| {
        let kernels = (0..n)
            .map(|_| Gaussian {
                center: Vector3::new(
                    rng.random_range(-reach..reach),
                    rng.random_range(-reach..reach),
                    rng.random_range(-reach..reach),
                ),
                log_scales: Vector3::new(
                    rng.random_range(0.0..0.9),
                    rng.random_range(0.0..0.9),
                    rng.random_range(0.0..0.9),
                ),
                quat: uniform_quaternion(rng),
                density: rng.random_range(0.2..1.0),
            })
            .collect();
        GaussianSet::new(kernels, [reach; 3])
    };
    let set = make(&mut rng)?;
    let other = make(&mut rng)?;
    let pose = Pose::from_quat(uniform_quaternion(&mut rng), [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])?;
    let params = CtfParams {
        defocus_u: rng.random_range(8000.0..15000.0),
        defocus_v: rng.random_range(8000.0..15000.0),
        astig_angle: rng.random_range(0.0..3.0),
        b_factor: 20.0,
        ..CtfParams::default()
    };
    let ctf = eval_ctf(&params, &spec);
    let clean = project(&other, &pose, &spec, &ProjectorConfig::exact())?.image;
    let observed = apply_ctf(&clean, &ctf)?;
    Ok(GradProblem { set, pose, ctf, observed })
}
