//! Parallel-beam projection of a Gaussian set by closed-form marginalization.
//!
//! A posed 3D kernel integrates along the beam (camera z) to a 2D Gaussian
//! whose covariance is the in-plane 2x2 block and whose amplitude is
//! `rho * sqrt(2 pi) * sqrt(|Sigma| / |Sigma_2d|)`. Splats are culled by a
//! contribution threshold, binned into square tiles and depth sorted inside
//! each tile; every tile is rendered independently.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gauss_model::{
    assemble_covariance, quat_multiply, quat_to_rotation, rasterize_lattice, rotation_to_quat,
    Gaussian, GaussianSet, Lattice, DEFAULT_MEMORY_BUDGET,
};
use crate::grid::{Image, ImageSpec};

/// Splats whose in-plane covariance is worse conditioned than this are skipped.
pub const MAX_SPLAT_CONDITION: f64 = 1e12;

/// Mahalanobis reach of the dense oracle's voxelization (exp(-32) ~ 1e-14).
pub const DENSE_CUTOFF_SIGMAS: f64 = 8.0;

/// Particle orientation: `rotation` maps the particle frame into the world;
/// the camera sees `rotation^T * x`, shifted in-plane by `translation` (Å).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: [f64; 2],
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: [0.0; 2] }
    }

    pub fn new(rotation: Matrix3<f64>, translation: [f64; 2]) -> Result<Self> {
        let dev = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if dev > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "pose rotation is not a proper rotation (orthonormality deviation {dev:.3e})"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_quat(quat: [f64; 4], translation: [f64; 2]) -> Result<Self> {
        Ok(Self { rotation: quat_to_rotation(quat)?, translation })
    }

    /// World-to-camera matrix.
    pub fn view(&self) -> Matrix3<f64> {
        self.rotation.transpose()
    }
}

/// A kernel expressed in the camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraKernel {
    pub center: Vector3<f64>,
    pub cov: Matrix3<f64>,
    pub density: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D {
    pub center2: [f64; 2],
    /// In-plane covariance `(xx, xy, yy)`.
    pub cov2: [f64; 3],
    pub amplitude: f64,
    pub depth: f64,
}

impl Splat2D {
    /// Inverse of the in-plane covariance as `(xx, xy, yy)`.
    pub fn conic(&self) -> [f64; 3] {
        let [a, b, c] = self.cov2;
        let det = a * c - b * b;
        [c / det, -b / det, a / det]
    }

    /// Value of the splat at an in-plane point.
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        let [ca, cb, cc] = self.conic();
        let dx = x[0] - self.center2[0];
        let dy = x[1] - self.center2[1];
        self.amplitude * (-0.5 * (ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy)).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectorConfig {
    /// Contribution threshold: splats with `|amplitude| <= tau` are dropped and
    /// per-pixel terms with `|term| < tau` are skipped.
    pub tau: f64,
    /// Pixel coverage radius in Mahalanobis units.
    pub footprint_sigmas: f64,
    /// Tile edge in pixels.
    pub tile: usize,
}

impl Default for ProjectorConfig {
    fn default() -> Self {
        Self { tau: 1e-3, footprint_sigmas: 3.5, tile: 16 }
    }
}

impl ProjectorConfig {
    /// No culling at all: every splat touches every pixel.
    pub fn exact() -> Self {
        Self { tau: 0.0, footprint_sigmas: f64::INFINITY, tile: 16 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) || !(self.footprint_sigmas > 0.0) || self.tile == 0 {
            return Err(Error::InvalidArgument(format!("invalid projector config {self:?}")));
        }
        Ok(())
    }

    /// Squared Mahalanobis reach of a splat with the given amplitude. Beyond
    /// `sqrt(2 ln(|a| / tau))` every term is below the threshold anyway.
    pub fn reach_sq(&self, amplitude: f64) -> f64 {
        let fp = self.footprint_sigmas * self.footprint_sigmas;
        if self.tau > 0.0 {
            let r = 2.0 * (amplitude.abs() / self.tau).ln();
            fp.min(r.max(0.0))
        } else {
            fp
        }
    }
}

/// Moves every kernel into the camera frame of `pose`.
pub fn apply_pose(set: &GaussianSet, pose: &Pose) -> Vec<CameraKernel> {
    let w = pose.view();
    set.kernels
        .iter()
        .map(|g| {
            let mut center = w * g.center;
            center.x += pose.translation[0];
            center.y += pose.translation[1];
            CameraKernel { center, cov: w * assemble_covariance(g) * w.transpose(), density: g.density }
        })
        .collect()
}

/// Integrates one camera-frame kernel along z.
pub fn marginalize(center_cam: Vector3<f64>, cov_cam: &Matrix3<f64>, density: f64) -> Result<Splat2D> {
    let a = cov_cam[(0, 0)];
    let b = 0.5 * (cov_cam[(0, 1)] + cov_cam[(1, 0)]);
    let c = cov_cam[(1, 1)];
    let det2 = a * c - b * b;
    let half_tr = 0.5 * (a + c);
    let disc = (half_tr * half_tr - det2).max(0.0).sqrt();
    let (hi, lo) = (half_tr + disc, half_tr - disc);
    if !(lo > 0.0) || hi / lo > MAX_SPLAT_CONDITION || !det2.is_finite() {
        return Err(Error::Degenerate(format!(
            "in-plane covariance [[{a}, {b}], [{b}, {c}]] is singular or ill-conditioned"
        )));
    }
    let det3 = cov_cam.determinant();
    let amplitude = density * (2.0 * std::f64::consts::PI).sqrt() * (det3 / det2).sqrt();
    Ok(Splat2D {
        center2: [center_cam.x, center_cam.y],
        cov2: [a, b, c],
        amplitude,
        depth: center_cam.z,
    })
}

/// Per-tile splat lists in CSR layout. Tile `t` owns
/// `entries[offsets[t]..offsets[t + 1]]`, sorted by ascending depth.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TileBins {
    pub tile: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub offsets: Vec<usize>,
    pub entries: Vec<u32>,
    /// Pixel bounding box `[x0, x1, y0, y1)` of each splat; empty when culled.
    pub bounds: Vec<[usize; 4]>,
    /// Squared Mahalanobis reach of each splat.
    pub reach_sq: Vec<f64>,
}

impl TileBins {
    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    pub fn tile(&self, t: usize) -> &[u32] {
        &self.entries[self.offsets[t]..self.offsets[t + 1]]
    }

    /// Pixel rectangle `[x0, x1, y0, y1)` covered by tile `t`.
    pub fn tile_rect(&self, t: usize, dim: usize) -> [usize; 4] {
        let tx = t % self.tiles_x;
        let ty = t / self.tiles_x;
        [
            tx * self.tile,
            ((tx + 1) * self.tile).min(dim),
            ty * self.tile,
            ((ty + 1) * self.tile).min(dim),
        ]
    }

    /// Number of splats listed in at least one tile.
    pub fn surviving(&self) -> usize {
        self.bounds.iter().filter(|b| b[0] < b[1] && b[2] < b[3]).count()
    }
}

fn pixel_range(lo: f64, hi: f64, origin: f64, step: f64, dim: usize) -> (usize, usize) {
    if !lo.is_finite() || !hi.is_finite() {
        return (0, dim);
    }
    let a = ((lo - origin) / step).ceil();
    let b = ((hi - origin) / step).floor();
    if b < 0.0 || a > (dim - 1) as f64 || a > b {
        return (0, 0);
    }
    (a.max(0.0) as usize, b.min((dim - 1) as f64) as usize + 1)
}

/// Drops negligible splats and assigns the rest to every tile their
/// footprint box overlaps.
pub fn cull_and_bin(splats: &[Splat2D], spec: &ImageSpec, cfg: &ProjectorConfig) -> TileBins {
    let d = spec.dim;
    let tiles_x = d.div_ceil(cfg.tile);
    let tiles_y = tiles_x;
    let mut bounds = vec![[0usize; 4]; splats.len()];
    let mut reach = vec![0.0; splats.len()];
    let mut pairs: Vec<(u32, f64, u32)> = Vec::new();
    for (i, s) in splats.iter().enumerate() {
        if !(s.amplitude.abs() > cfg.tau) {
            continue;
        }
        let r2 = cfg.reach_sq(s.amplitude);
        reach[i] = r2;
        let r = r2.sqrt();
        let hx = r * s.cov2[0].sqrt();
        let hy = r * s.cov2[2].sqrt();
        let (x0, x1) = pixel_range(s.center2[0] - hx, s.center2[0] + hx, spec.origin[0], spec.pixel_size, d);
        let (y0, y1) = pixel_range(s.center2[1] - hy, s.center2[1] + hy, spec.origin[1], spec.pixel_size, d);
        if x0 >= x1 || y0 >= y1 {
            continue;
        }
        bounds[i] = [x0, x1, y0, y1];
        for ty in y0 / cfg.tile..=(y1 - 1) / cfg.tile {
            for tx in x0 / cfg.tile..=(x1 - 1) / cfg.tile {
                pairs.push(((ty * tiles_x + tx) as u32, s.depth, i as u32));
            }
        }
    }
    pairs.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut offsets = vec![0usize; tiles_x * tiles_y + 1];
    for p in &pairs {
        offsets[p.0 as usize + 1] += 1;
    }
    for t in 0..tiles_x * tiles_y {
        offsets[t + 1] += offsets[t];
    }
    TileBins {
        tile: cfg.tile,
        tiles_x,
        tiles_y,
        offsets,
        entries: pairs.into_iter().map(|p| p.2).collect(),
        bounds,
        reach_sq: reach,
    }
}

/// Everything the forward pass produced, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Raster {
    pub splats: Vec<Splat2D>,
    pub conics: Vec<[f64; 3]>,
    /// Index of the source kernel of each splat.
    pub kernel_of: Vec<usize>,
    pub bins: TileBins,
    /// Kernels skipped because their splat was degenerate.
    pub degenerate: usize,
}

impl Raster {
    pub fn build(set: &GaussianSet, pose: &Pose, spec: &ImageSpec, cfg: &ProjectorConfig) -> Result<Self> {
        cfg.validate()?;
        let posed = apply_pose(set, pose);
        let mut splats = Vec::with_capacity(posed.len());
        let mut kernel_of = Vec::with_capacity(posed.len());
        let mut degenerate = 0;
        for (j, k) in posed.iter().enumerate() {
            match marginalize(k.center, &k.cov, k.density) {
                Ok(s) => {
                    splats.push(s);
                    kernel_of.push(j);
                }
                Err(_) => degenerate += 1,
            }
        }
        let conics = splats.iter().map(Splat2D::conic).collect();
        let bins = cull_and_bin(&splats, spec, cfg);
        Ok(Self { splats, conics, kernel_of, bins, degenerate })
    }

    /// Calls `visit(pixel_index, splat_index, dx, dy, term)` for every
    /// surviving term of tile `t`, in depth order per pixel.
    #[inline]
    pub(crate) fn for_each_term<F>(&self, t: usize, spec: &ImageSpec, tau: f64, mut visit: F)
    where
        F: FnMut(usize, usize, f64, f64, f64),
    {
        let rect = self.bins.tile_rect(t, spec.dim);
        for &si in self.bins.tile(t) {
            let si = si as usize;
            let b = self.bins.bounds[si];
            let (x0, x1) = (b[0].max(rect[0]), b[1].min(rect[1]));
            let (y0, y1) = (b[2].max(rect[2]), b[3].min(rect[3]));
            let s = &self.splats[si];
            let [ca, cb, cc] = self.conics[si];
            let r2 = self.bins.reach_sq[si];
            for iy in y0..y1 {
                let dy = spec.pixel_y(iy) - s.center2[1];
                for ix in x0..x1 {
                    let dx = spec.pixel_x(ix) - s.center2[0];
                    let q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy;
                    if q > r2 {
                        continue;
                    }
                    let term = s.amplitude * (-0.5 * q).exp();
                    if term.abs() < tau {
                        continue;
                    }
                    visit(iy * spec.dim + ix, si, dx, dy, term);
                }
            }
        }
    }

    /// Renders the splats; tiles run in parallel and write disjoint pixels.
    pub fn render(&self, spec: &ImageSpec, tau: f64) -> Image {
        let tiles: Vec<(usize, Vec<f64>)> = (0..self.bins.tile_count())
            .into_par_iter()
            .map(|t| {
                let rect = self.bins.tile_rect(t, spec.dim);
                let w = rect[1] - rect[0];
                let mut buf = vec![0.0; w * (rect[3] - rect[2])];
                self.for_each_term(t, spec, tau, |p, _, _, _, term| {
                    let (ix, iy) = (p % spec.dim, p / spec.dim);
                    buf[(iy - rect[2]) * w + ix - rect[0]] += term;
                });
                (t, buf)
            })
            .collect();
        let mut img = Image::zeros(*spec);
        for (t, buf) in tiles {
            let rect = self.bins.tile_rect(t, spec.dim);
            let w = rect[1] - rect[0];
            for (row, iy) in (rect[2]..rect[3]).enumerate() {
                img.data[iy * spec.dim + rect[0]..iy * spec.dim + rect[1]]
                    .copy_from_slice(&buf[row * w..(row + 1) * w]);
            }
        }
        img
    }

    /// Largest number of splats listed for a single tile.
    pub fn max_tile_load(&self) -> usize {
        (0..self.bins.tile_count()).map(|t| self.bins.tile(t).len()).max().unwrap_or(0)
    }
}

/// Rendered image plus the number of kernels skipped as degenerate.
#[derive(Clone, Debug)]
pub struct Projection {
    pub image: Image,
    pub degenerate: usize,
}

pub fn project(set: &GaussianSet, pose: &Pose, spec: &ImageSpec, cfg: &ProjectorConfig) -> Result<Projection> {
    let raster = Raster::build(set, pose, spec, cfg)?;
    Ok(Projection { image: raster.render(spec, cfg.tau), degenerate: raster.degenerate })
}

/// Kernels of `set` re-expressed in the camera frame of `pose`.
pub fn posed_kernels(set: &GaussianSet, pose: &Pose) -> Vec<Gaussian> {
    let w = pose.view();
    let qw = rotation_to_quat(&w);
    set.kernels
        .iter()
        .map(|g| {
            let mut center = w * g.center;
            center.x += pose.translation[0];
            center.y += pose.translation[1];
            Gaussian { center, log_scales: g.log_scales, quat: quat_multiply(qw, g.quat), density: g.density }
        })
        .collect()
}

/// Reference projection by brute force: samples the posed density on a
/// `d x d x z_samples` lattice spanning the box along z and sums each column
/// (midpoint rule). Allocates the full 3D lattice.
pub fn project_dense_oracle(set: &GaussianSet, pose: &Pose, spec: &ImageSpec, z_samples: usize) -> Result<Image> {
    if z_samples < 16 {
        return Err(Error::InvalidArgument(format!("dense oracle needs z_samples >= 16, got {z_samples}")));
    }
    let d = spec.dim;
    let length = spec.box_size();
    let h = length / z_samples as f64;
    let lattice = Lattice {
        n: [d, d, z_samples],
        origin: [spec.origin[0], spec.origin[1], -0.5 * length + 0.5 * h],
        step: [spec.pixel_size, spec.pixel_size, h],
    };
    let posed = posed_kernels(set, pose);
    let grid = rasterize_lattice(&posed, lattice, DENSE_CUTOFF_SIGMAS, DEFAULT_MEMORY_BUDGET)?;
    let mut img = Image::zeros(*spec);
    for slab in grid.chunks_exact(d * d) {
        for (o, v) in img.data.iter_mut().zip(slab) {
            *o += v;
        }
    }
    for v in &mut img.data {
        *v *= h;
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss_model::uniform_quaternion;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(n: usize, seed: u64, spread: f64) -> GaussianSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernels = (0..n)
            .map(|_| Gaussian {
                center: Vector3::new(
                    rng.random_range(-spread..spread),
                    rng.random_range(-spread..spread),
                    rng.random_range(-spread..spread),
                ),
                log_scales: Vector3::new(
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                ),
                quat: uniform_quaternion(&mut rng),
                density: rng.random_range(0.1..1.0),
            })
            .collect();
        GaussianSet::new(kernels, [spread; 3]).unwrap()
    }

    /// Adaptive Simpson quadrature, used as the marginal-integral oracle.
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, eps: f64, depth: u32) -> f64 {
        let c = 0.5 * (a + b);
        let (fa, fb, fc) = (f(a), f(b), f(c));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
        fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fb: f64, fc: f64, whole: f64, eps: f64, depth: u32) -> f64 {
            let c = 0.5 * (a + b);
            let (d, e) = (0.5 * (a + c), 0.5 * (c + b));
            let (fd, fe) = (f(d), f(e));
            let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
            let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, c, fa, fc, fd, left, eps / 2.0, depth - 1) + rec(f, c, b, fc, fb, fe, right, eps / 2.0, depth - 1)
        }
        rec(f, a, b, fa, fb, fc, whole, eps, depth)
    }

    #[test]
    fn identity_pose_keeps_kernels() {
        let set = random_set(4, 1, 5.0);
        let cams = apply_pose(&set, &Pose::identity());
        for (g, k) in set.kernels.iter().zip(&cams) {
            assert_eq!(k.center, g.center);
            assert!((k.cov - assemble_covariance(g)).abs().max() < 1e-15);
        }
    }

    #[test]
    fn translation_shifts_in_plane_only() {
        let set = random_set(3, 2, 5.0);
        let pose = Pose { rotation: Matrix3::identity(), translation: [5.0, -3.0] };
        for (g, k) in set.kernels.iter().zip(apply_pose(&set, &pose)) {
            assert!((k.center - (g.center + Vector3::new(5.0, -3.0, 0.0))).norm() < 1e-12);
            assert!((k.cov - assemble_covariance(g)).abs().max() < 1e-15);
        }
    }

    #[test]
    fn quarter_turn_pose_rotates_covariance() {
        let mut g = Gaussian::isotropic([0.0; 3], 1.0, 1.0);
        g.log_scales.x = 2f64.ln();
        let set = GaussianSet::new(vec![g], [1.0; 3]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let pose = Pose::from_quat([h, 0.0, 0.0, h], [0.0; 2]).unwrap();
        let w = pose.view();
        let oracle = w * Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)) * w.transpose();
        let cov = apply_pose(&set, &pose)[0].cov;
        assert!((cov - oracle).abs().max() < 1e-9);
        assert!((cov - Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0))).abs().max() < 1e-9);
    }

    #[test]
    fn marginal_amplitude_matches_quadrature() {
        let s = marginalize(Vector3::zeros(), &Matrix3::identity(), 1.0).unwrap();
        let oracle = simpson(&|z: f64| (-0.5 * z * z).exp(), -40.0, 40.0, 1e-13, 50);
        assert!((s.amplitude - oracle).abs() < 1e-9);
        assert!((s.amplitude - 2.5066282746310002).abs() < 1e-12);
        assert_eq!(s.cov2, [1.0, 0.0, 1.0]);

        let (s1, s2, s3, rho) = (1.3f64, 0.7f64, 2.2f64, 0.8);
        let cov = Matrix3::from_diagonal(&Vector3::new(s1 * s1, s2 * s2, s3 * s3));
        let s = marginalize(Vector3::new(1.0, 2.0, 3.0), &cov, rho).unwrap();
        let oracle = rho * simpson(&|z: f64| (-0.5 * z * z / (s3 * s3)).exp(), -60.0, 60.0, 1e-13, 50);
        assert!((s.amplitude - oracle).abs() < 1e-9);
        assert!((s.cov2[0] - s1 * s1).abs() < 1e-15 && (s.cov2[2] - s2 * s2).abs() < 1e-15);
        assert_eq!(s.depth, 3.0);

        let zero = marginalize(Vector3::zeros(), &Matrix3::identity(), 0.0).unwrap();
        assert_eq!(zero.amplitude, 0.0);
    }

    #[test]
    fn marginal_of_rotated_kernel_matches_line_integral() {
        // Full 3D line integral at an off-center pixel for a tilted kernel.
        let set = random_set(1, 7, 1.0);
        let g = &set.kernels[0];
        let cam = &apply_pose(&set, &Pose::identity())[0];
        let s = marginalize(cam.center, &cam.cov, cam.density).unwrap();
        let single = GaussianSet::new(vec![*g], [1.0; 3]).unwrap();
        let (x, y) = (0.9, -0.4);
        let line = simpson(&|z: f64| crate::gauss_model::query_density(&single, [x, y, z]), -60.0, 60.0, 1e-13, 50);
        assert!((s.eval([x, y]) - line).abs() < 1e-9, "{} vs {line}", s.eval([x, y]));
    }

    #[test]
    fn singular_in_plane_covariance_is_degenerate() {
        let cov = Matrix3::from_diagonal(&Vector3::new(1.0, 1e-14, 1.0));
        assert!(matches!(marginalize(Vector3::zeros(), &cov, 1.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn binning_sorts_by_depth_and_drops_offscreen() {
        let spec = ImageSpec::new(32, 1.0).unwrap();
        let cfg = ProjectorConfig::default();
        let mk = |x: f64, depth: f64| Splat2D { center2: [x, 0.0], cov2: [1.0, 0.0, 1.0], amplitude: 1.0, depth };
        let splats = vec![mk(0.0, 3.0), mk(0.5, -2.0), mk(500.0, 0.0)];
        let bins = cull_and_bin(&splats, &spec, &cfg);
        let mut seen_offscreen = false;
        for t in 0..bins.tile_count() {
            let list = bins.tile(t);
            if list.contains(&2) {
                seen_offscreen = true;
            }
            if list.contains(&0) && list.contains(&1) {
                assert_eq!(list, &[1, 0]);
            }
        }
        assert!(!seen_offscreen);
        assert_eq!(bins.surviving(), 2);
    }

    #[test]
    fn no_op_culling_equals_unculled_sum() {
        let set = random_set(12, 5, 6.0);
        let spec = ImageSpec::new(24, 1.0).unwrap();
        let pose = Pose::identity();
        let img = project(&set, &pose, &spec, &ProjectorConfig::exact()).unwrap().image;
        let splats: Vec<Splat2D> = apply_pose(&set, &pose)
            .iter()
            .map(|k| marginalize(k.center, &k.cov, k.density).unwrap())
            .collect();
        for iy in 0..24 {
            for ix in 0..24 {
                let p = [spec.pixel_x(ix), spec.pixel_y(iy)];
                let want: f64 = splats.iter().map(|s| s.eval(p)).sum();
                assert!((img.get(ix, iy) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn centered_isotropic_kernel_image() {
        let set = GaussianSet::new(vec![Gaussian::isotropic([0.0; 3], 1.0, 1.0)], [1.0; 3]).unwrap();
        let spec = ImageSpec::new(32, 1.0).unwrap();
        let img = project(&set, &Pose::identity(), &spec, &ProjectorConfig::default()).unwrap().image;
        let oracle = simpson(&|z: f64| (-0.5 * z * z).exp(), -40.0, 40.0, 1e-13, 50);
        assert!((img.get(16, 16) - oracle).abs() < 1e-6);
        for iy in 1..32 {
            for ix in 1..32 {
                let v = img.get(ix, iy);
                assert!((v - img.get(32 - ix, iy)).abs() < 1e-12);
                assert!((v - img.get(ix, 32 - iy)).abs() < 1e-12);
                assert!((v - img.get(iy, ix)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn half_turn_about_beam_rotates_image() {
        let set = random_set(10, 8, 6.0);
        let spec = ImageSpec::new(32, 1.0).unwrap();
        let cfg = ProjectorConfig::exact();
        let a = project(&set, &Pose::identity(), &spec, &cfg).unwrap().image;
        let half = Pose::from_quat([0.0, 0.0, 0.0, 1.0], [0.0; 2]).unwrap();
        let b = project(&set, &half, &spec, &cfg).unwrap().image;
        for iy in 1..32 {
            for ix in 1..32 {
                assert!((a.get(ix, iy) - b.get(32 - ix, 32 - iy)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn culling_error_is_bounded_by_tau_times_load() {
        let set = random_set(200, 12, 10.0);
        let spec = ImageSpec::new(32, 1.0).unwrap();
        let tau = 1e-3;
        let culled_cfg = ProjectorConfig { tau, footprint_sigmas: f64::INFINITY, tile: 16 };
        let culled = Raster::build(&set, &Pose::identity(), &spec, &culled_cfg).unwrap();
        let exact = project(&set, &Pose::identity(), &spec, &ProjectorConfig::exact()).unwrap().image;
        let got = culled.render(&spec, tau);
        let mut count = vec![0usize; spec.len()];
        for t in 0..culled.bins.tile_count() {
            culled.for_each_term(t, &spec, tau, |p, _, _, _, _| count[p] += 1);
        }
        let k_max = *count.iter().max().unwrap();
        let err = got.data.iter().zip(&exact.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= tau * k_max as f64, "err {err} > {tau} * {k_max}");
        // Per pixel: each dropped term is below tau, at most M - surviving of them.
        for (p, (a, b)) in got.data.iter().zip(&exact.data).enumerate() {
            assert!((a - b).abs() <= tau * (set.len() - count[p]) as f64 + 1e-12);
        }
    }

    #[test]
    fn dense_oracle_agrees_and_converges() {
        let set = random_set(15, 21, 5.0);
        let spec = ImageSpec::new(32, 1.0).unwrap();
        let pose = Pose::from_quat([0.3, -0.5, 0.7, 0.2], [0.5, -1.0]).unwrap();
        let splat = project(&set, &pose, &spec, &ProjectorConfig::exact()).unwrap().image;
        let peak = splat.max_abs();
        let err = |z: usize| {
            let dense = project_dense_oracle(&set, &pose, &spec, z).unwrap();
            dense.data.iter().zip(&splat.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        assert!(err(128) < 5e-3 * peak);
        let (coarse, fine) = (err(16), err(32));
        assert!(fine <= 0.5 * coarse, "{coarse} -> {fine}");

        let mut zero = set.clone();
        zero.kernels.iter_mut().for_each(|g| g.density = 0.0);
        assert!(project_dense_oracle(&zero, &pose, &spec, 16).unwrap().data.iter().all(|v| *v == 0.0));
        assert!(project_dense_oracle(&set, &pose, &spec, 8).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn projection_is_linear_additive_and_order_free(seed in 0u64..1000) {
            let spec = ImageSpec::new(16, 1.0).unwrap();
            let cfg = ProjectorConfig::exact();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pose = Pose::from_quat(uniform_quaternion(&mut rng), [0.3, -0.2]).unwrap();
            let a = random_set(5, seed, 4.0);
            let b = random_set(4, seed + 1, 4.0);
            let pa = project(&a, &pose, &spec, &cfg).unwrap().image;
            let pb = project(&b, &pose, &spec, &cfg).unwrap().image;

            let mut doubled = a.clone();
            doubled.kernels.iter_mut().for_each(|g| g.density *= 2.0);
            let p2 = project(&doubled, &pose, &spec, &cfg).unwrap().image;
            for (x, y) in p2.data.iter().zip(&pa.data) {
                prop_assert_eq!(*x, 2.0 * y);
            }

            let mut union = a.clone();
            union.kernels.extend(b.kernels.iter().cloned());
            let pu = project(&union, &pose, &spec, &cfg).unwrap().image;
            for ((u, x), y) in pu.data.iter().zip(&pa.data).zip(&pb.data) {
                prop_assert!((u - x - y).abs() < 1e-9);
            }

            let mut shuffled = union.clone();
            shuffled.kernels.reverse();
            let ps = project(&shuffled, &pose, &spec, &cfg).unwrap().image;
            for (x, y) in ps.data.iter().zip(&pu.data) {
                prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-12));
            }
        }
    }
}
