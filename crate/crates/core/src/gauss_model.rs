//! Explicit density model: a set of anisotropic 3D Gaussian kernels.
//!
//! Each kernel is `rho * exp(-0.5 (x - p)^T Sigma^-1 (x - p))` with
//! `Sigma = R S S^T R^T`. The kernel is unnormalized: its peak value is the
//! density coefficient. Scales are stored as logarithms and the rotation as a
//! quaternion `(w, x, y, z)`, giving 11 free parameters per kernel.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::atomic::{read_all, write_atomic};
use crate::error::{Error, FormatError, Result};
use crate::grid::{GridSpec, Volume};

pub const PARAMS_PER_KERNEL: usize = 11;

/// Largest output buffer `voxelize` will allocate unless told otherwise.
pub const DEFAULT_MEMORY_BUDGET: u64 = 2 << 30;

const SET_MAGIC: &[u8; 4] = b"GEMG";
const SET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    pub center: Vector3<f64>,
    pub log_scales: Vector3<f64>,
    /// Rotation quaternion `(w, x, y, z)`.
    pub quat: [f64; 4],
    pub density: f64,
}

impl Gaussian {
    pub fn isotropic(center: [f64; 3], sigma: f64, density: f64) -> Self {
        let ls = sigma.ln();
        Self {
            center: Vector3::from(center),
            log_scales: Vector3::new(ls, ls, ls),
            quat: [1.0, 0.0, 0.0, 0.0],
            density,
        }
    }

    pub fn scales(&self) -> Vector3<f64> {
        self.log_scales.map(f64::exp)
    }

    /// Flattened parameters in checkpoint order: center, log-scales, quat, density.
    pub fn to_params(&self) -> [f64; PARAMS_PER_KERNEL] {
        let c = &self.center;
        let s = &self.log_scales;
        let q = &self.quat;
        [c.x, c.y, c.z, s.x, s.y, s.z, q[0], q[1], q[2], q[3], self.density]
    }

    pub fn from_params(p: &[f64]) -> Self {
        Self {
            center: Vector3::new(p[0], p[1], p[2]),
            log_scales: Vector3::new(p[3], p[4], p[5]),
            quat: [p[6], p[7], p[8], p[9]],
            density: p[10],
        }
    }

    /// Rescales the quaternion to unit length. A zero quaternion becomes identity.
    pub fn normalize_quat(&mut self) {
        let n = quat_norm(&self.quat);
        if n > 0.0 && n.is_finite() {
            for v in &mut self.quat {
                *v /= n;
            }
        } else {
            self.quat = [1.0, 0.0, 0.0, 0.0];
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSet {
    pub kernels: Vec<Gaussian>,
    /// Half-widths (Å) of the box the set was initialized in.
    pub extent: Vector3<f64>,
}

impl GaussianSet {
    pub fn new(kernels: Vec<Gaussian>, extent: [f64; 3]) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::InvalidArgument("a Gaussian set needs at least one kernel".into()));
        }
        Ok(Self { kernels, extent: Vector3::from(extent) })
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn to_params(&self) -> Vec<f64> {
        self.kernels.iter().flat_map(|g| g.to_params()).collect()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.len() * PARAMS_PER_KERNEL);
        for (g, p) in self.kernels.iter_mut().zip(params.chunks_exact(PARAMS_PER_KERNEL)) {
            *g = Gaussian::from_params(p);
        }
    }

    /// Binary checkpoint encoding (little-endian).
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(SET_MAGIC);
        out.extend_from_slice(&SET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for v in self.extent.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for g in &self.kernels {
            for v in g.to_params() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }

    /// Decodes a set from the front of `bytes`, returning it and the bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != SET_MAGIC {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(SET_MAGIC).into_owned(),
                found: String::from_utf8_lossy(magic).into_owned(),
            }
            .into());
        }
        let version = r.u32()?;
        if version != SET_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let count = r.u64()? as usize;
        if count == 0 {
            return Err(FormatError::Schema("checkpoint holds zero kernels".into()).into());
        }
        let extent = [r.f64()?, r.f64()?, r.f64()?];
        r.require(count.saturating_mul(PARAMS_PER_KERNEL * 8))?;
        let mut kernels = Vec::with_capacity(count);
        let mut p = [0.0; PARAMS_PER_KERNEL];
        for _ in 0..count {
            for v in &mut p {
                *v = r.f64()?;
            }
            kernels.push(Gaussian::from_params(&p));
        }
        Ok((Self { kernels, extent: Vector3::from(extent) }, r.pos))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.encode(&mut buf);
        write_atomic(path, |w| {
            w.write_all(&buf)?;
            Ok(())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_all(path)?;
        Ok(Self::decode(&bytes)?.0)
    }

    /// Human-readable export: one kernel per line, 11 fields.
    pub fn write_text(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(w, "# cx cy cz log_sx log_sy log_sz qw qx qy qz density")?;
        for g in &self.kernels {
            let line: Vec<String> = g.to_params().iter().map(|v| format!("{v:.10e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Little-endian cursor that reports truncation with byte counts.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn require(&self, n: usize) -> Result<()> {
        let needed = self.pos as u64 + n as u64;
        if needed > self.bytes.len() as u64 {
            return Err(FormatError::Truncated { needed, found: self.bytes.len() as u64 }.into());
        }
        Ok(())
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.require(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn quat_norm(q: &[f64; 4]) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// Rotation matrix of a quaternion `(w, x, y, z)`, normalized internally.
pub fn quat_to_rotation(quat: [f64; 4]) -> Result<Matrix3<f64>> {
    let n = quat_norm(&quat);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Degenerate(format!("quaternion {quat:?} has no usable norm")));
    }
    let [w, x, y, z] = quat.map(|v| v / n);
    Ok(rotation_from_unit_quat(w, x, y, z))
}

#[inline]
pub(crate) fn rotation_from_unit_quat(w: f64, x: f64, y: f64, z: f64) -> Matrix3<f64> {
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Hamilton product `a * b`; the rotation of the result applies `b` first.
pub fn quat_multiply(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Unit quaternion of a proper rotation matrix (Shepperd's method).
pub fn rotation_to_quat(r: &Matrix3<f64>) -> [f64; 4] {
    let t = r.trace();
    let q = if t > 0.0 {
        let s = (t + 1.0).sqrt() * 2.0;
        [0.25 * s, (r[(2, 1)] - r[(1, 2)]) / s, (r[(0, 2)] - r[(2, 0)]) / s, (r[(1, 0)] - r[(0, 1)]) / s]
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        [(r[(2, 1)] - r[(1, 2)]) / s, 0.25 * s, (r[(0, 1)] + r[(1, 0)]) / s, (r[(0, 2)] + r[(2, 0)]) / s]
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        [(r[(0, 2)] - r[(2, 0)]) / s, (r[(0, 1)] + r[(1, 0)]) / s, 0.25 * s, (r[(1, 2)] + r[(2, 1)]) / s]
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        [(r[(1, 0)] - r[(0, 1)]) / s, (r[(0, 2)] + r[(2, 0)]) / s, (r[(1, 2)] + r[(2, 1)]) / s, 0.25 * s]
    };
    let n = quat_norm(&q);
    q.map(|v| v / n)
}

/// Uniformly distributed unit quaternion (Shoemake's subgroup method).
pub fn uniform_quaternion<R: Rng + ?Sized>(rng: &mut R) -> [f64; 4] {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let tau = std::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    [b * (tau * u3).cos(), a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin()]
}

/// `Sigma = R S S^T R^T`.
pub fn assemble_covariance(g: &Gaussian) -> Matrix3<f64> {
    let r = quat_to_rotation(g.quat).unwrap_or_else(|_| Matrix3::identity());
    let s2 = g.log_scales.map(|l| (2.0 * l).exp());
    r * Matrix3::from_diagonal(&s2) * r.transpose()
}

/// Inverse covariance, built from the factors rather than by inverting Sigma.
pub fn assemble_precision(g: &Gaussian) -> Matrix3<f64> {
    let r = quat_to_rotation(g.quat).unwrap_or_else(|_| Matrix3::identity());
    let inv_s2 = g.log_scales.map(|l| (-2.0 * l).exp());
    r * Matrix3::from_diagonal(&inv_s2) * r.transpose()
}

/// A kernel prepared for repeated point evaluation.
#[derive(Clone, Copy, Debug)]
struct KernelEval {
    center: [f64; 3],
    precision: [[f64; 3]; 3],
    density: f64,
    /// Per-axis standard deviation (sqrt of the covariance diagonal).
    axis_sigma: [f64; 3],
}

impl KernelEval {
    fn new(g: &Gaussian) -> Self {
        let p = assemble_precision(g);
        let c = assemble_covariance(g);
        Self {
            center: [g.center.x, g.center.y, g.center.z],
            precision: [
                [p[(0, 0)], p[(0, 1)], p[(0, 2)]],
                [p[(1, 0)], p[(1, 1)], p[(1, 2)]],
                [p[(2, 0)], p[(2, 1)], p[(2, 2)]],
            ],
            density: g.density,
            axis_sigma: [c[(0, 0)].sqrt(), c[(1, 1)].sqrt(), c[(2, 2)].sqrt()],
        }
    }

    #[inline]
    fn mahalanobis_sq(&self, x: [f64; 3]) -> f64 {
        let d = [x[0] - self.center[0], x[1] - self.center[1], x[2] - self.center[2]];
        let p = &self.precision;
        p[0][0] * d[0] * d[0]
            + p[1][1] * d[1] * d[1]
            + p[2][2] * d[2] * d[2]
            + 2.0 * (p[0][1] * d[0] * d[1] + p[0][2] * d[0] * d[2] + p[1][2] * d[1] * d[2])
    }

    #[inline]
    fn eval(&self, x: [f64; 3]) -> f64 {
        self.density * (-0.5 * self.mahalanobis_sq(x)).exp()
    }
}

/// Density of the mixture at a point.
pub fn query_density(set: &GaussianSet, point: [f64; 3]) -> f64 {
    let mut acc = 0.0;
    for g in &set.kernels {
        acc += KernelEval::new(g).eval(point);
    }
    acc
}

/// Rectilinear sample lattice: `n[a]` samples at `origin[a] + i * step[a]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Lattice {
    pub n: [usize; 3],
    pub origin: [f64; 3],
    pub step: [f64; 3],
}

impl Lattice {
    fn coord(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + i as f64 * self.step[axis]
    }

    /// Index range `[lo, hi)` of samples within `[a, b]` along `axis`.
    fn range(&self, axis: usize, a: f64, b: f64) -> (usize, usize) {
        let n = self.n[axis];
        if !a.is_finite() || !b.is_finite() {
            return (0, n);
        }
        let lo = ((a - self.origin[axis]) / self.step[axis]).ceil();
        let hi = ((b - self.origin[axis]) / self.step[axis]).floor();
        if hi < 0.0 || lo > (n - 1) as f64 {
            return (0, 0);
        }
        (lo.max(0.0) as usize, (hi.min((n - 1) as f64) as usize) + 1)
    }
}

/// Sums the kernels onto a lattice, skipping contributions beyond
/// `cutoff_sigmas` Mahalanobis radius. Parallel over z slices; each voxel
/// accumulates kernels in list order.
pub(crate) fn rasterize_lattice(
    kernels: &[Gaussian],
    lattice: Lattice,
    cutoff_sigmas: f64,
    budget: u64,
) -> Result<Vec<f64>> {
    let count = lattice.n.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
    let requested = count.and_then(|c| c.checked_mul(8)).map(|b| b as u64).unwrap_or(u64::MAX);
    if requested > budget {
        return Err(Error::Capacity { requested, budget });
    }
    let count = count.unwrap();
    let evals: Vec<KernelEval> = kernels.iter().map(KernelEval::new).collect();
    let r2 = cutoff_sigmas * cutoff_sigmas;
    let [nx, ny, _] = lattice.n;
    let mut data = vec![0.0; count];
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(iz, slab)| {
        let z = lattice.coord(2, iz);
        for k in &evals {
            let reach = |a: usize| cutoff_sigmas * k.axis_sigma[a];
            if cutoff_sigmas.is_finite() && (z - k.center[2]).abs() > reach(2) {
                continue;
            }
            let (y0, y1) = lattice.range(1, k.center[1] - reach(1), k.center[1] + reach(1));
            let (x0, x1) = lattice.range(0, k.center[0] - reach(0), k.center[0] + reach(0));
            for iy in y0..y1 {
                let y = lattice.coord(1, iy);
                let row = &mut slab[iy * nx..(iy + 1) * nx];
                for ix in x0..x1 {
                    let m = k.mahalanobis_sq([lattice.coord(0, ix), y, z]);
                    if m <= r2 {
                        row[ix] += k.density * (-0.5 * m).exp();
                    }
                }
            }
        }
    });
    Ok(data)
}

/// Samples the mixture at every voxel center of `grid`.
pub fn voxelize(set: &GaussianSet, grid: &GridSpec, cutoff_sigmas: f64) -> Result<Volume> {
    voxelize_with_budget(set, grid, cutoff_sigmas, DEFAULT_MEMORY_BUDGET)
}

pub fn voxelize_with_budget(
    set: &GaussianSet,
    grid: &GridSpec,
    cutoff_sigmas: f64,
    budget: u64,
) -> Result<Volume> {
    if !(cutoff_sigmas > 0.0) {
        return Err(Error::InvalidArgument(format!("cutoff must be positive, got {cutoff_sigmas}")));
    }
    let lattice = Lattice {
        n: [grid.dim; 3],
        origin: grid.origin,
        step: [grid.voxel_size; 3],
    };
    let data = rasterize_lattice(&set.kernels, lattice, cutoff_sigmas, budget)?;
    Volume::from_data(*grid, data)
}

/// Knobs for [`random_init_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitOptions {
    /// Initial scale as a fraction of the mean nearest-neighbor distance.
    pub scale_fraction: f64,
    pub density: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self { scale_fraction: 0.5, density: 0.05 }
    }
}

pub fn random_init(count: usize, extent: [f64; 3], seed: u64) -> Result<GaussianSet> {
    random_init_with(count, extent, seed, &InitOptions::default())
}

/// Centers uniform in `[-extent, extent]`, rotations uniform, isotropic
/// scales tied to the sampled point density.
pub fn random_init_with(
    count: usize,
    extent: [f64; 3],
    seed: u64,
    opts: &InitOptions,
) -> Result<GaussianSet> {
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one Gaussian".into()));
    }
    if extent.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument(format!("extent must be positive, got {extent:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<[f64; 3]> = (0..count)
        .map(|_| {
            [
                rng.random_range(-extent[0]..extent[0]),
                rng.random_range(-extent[1]..extent[1]),
                rng.random_range(-extent[2]..extent[2]),
            ]
        })
        .collect();
    let quats: Vec<[f64; 4]> = (0..count).map(|_| uniform_quaternion(&mut rng)).collect();
    let nn = if count > 1 {
        mean_nearest_neighbor(&centers)
    } else {
        // A single kernel: fall back to the smallest box half-width.
        extent.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let ls = (opts.scale_fraction * nn).ln();
    let kernels = centers
        .into_iter()
        .zip(quats)
        .map(|(c, q)| Gaussian {
            center: Vector3::from(c),
            log_scales: Vector3::new(ls, ls, ls),
            quat: q,
            density: opts.density,
        })
        .collect();
    GaussianSet::new(kernels, extent)
}

/// Mean distance from each point to its nearest other point.
pub fn mean_nearest_neighbor(points: &[[f64; 3]]) -> f64 {
    nearest_neighbor_distances(points).iter().sum::<f64>() / points.len() as f64
}

/// Distance from each point to its nearest other point, via a uniform cell
/// grid.
pub fn nearest_neighbor_distances(points: &[[f64; 3]]) -> Vec<f64> {
    let n = points.len();
    assert!(n >= 2);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let span: Vec<f64> = (0..3).map(|a| (hi[a] - lo[a]).max(1e-9)).collect();
    let cell = (span[0] * span[1] * span[2] / n as f64).cbrt().max(1e-9);
    let dims: Vec<usize> = span.iter().map(|s| ((s / cell).floor() as usize + 1).min(1024)).collect();
    let cell_of = |p: &[f64; 3]| -> [usize; 3] {
        let mut c = [0; 3];
        for a in 0..3 {
            c[a] = (((p[a] - lo[a]) / cell) as usize).min(dims[a] - 1);
        }
        c
    };
    let flat = |c: [usize; 3]| (c[2] * dims[1] + c[1]) * dims[0] + c[0];
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
    for (i, p) in points.iter().enumerate() {
        buckets[flat(cell_of(p))].push(i);
    }
    let max_ring = *dims.iter().max().unwrap() as i64;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let p = &points[i];
            let c = cell_of(p);
            let mut best = f64::INFINITY;
            for ring in 0..=max_ring {
                // Any point in ring r is at least (r - 1) * cell away.
                if best.is_finite() && ((ring - 1) as f64) * cell > best {
                    break;
                }
                for dz in -ring..=ring {
                    for dy in -ring..=ring {
                        for dx in -ring..=ring {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                                continue;
                            }
                            let q = [c[0] as i64 + dx, c[1] as i64 + dy, c[2] as i64 + dz];
                            if (0..3).any(|a| q[a] < 0 || q[a] >= dims[a] as i64) {
                                continue;
                            }
                            for &j in &buckets[flat([q[0] as usize, q[1] as usize, q[2] as usize])] {
                                if j == i {
                                    continue;
                                }
                                let o = &points[j];
                                let d2 = (p[0] - o[0]).powi(2) + (p[1] - o[1]).powi(2) + (p[2] - o[2]).powi(2);
                                best = best.min(d2.sqrt());
                            }
                        }
                    }
                }
            }
            best
        })
        .collect()
}
