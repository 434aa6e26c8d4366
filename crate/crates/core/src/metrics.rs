//! Resolution metrics: Fourier shell correlation, windowed local
//! resolution, and directional Fourier slice correlation.

use std::io::Write;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{fft3, signed_freq, to_complex};
use crate::grid::{GridSpec, Volume};

/// Threshold conventionally used for half-map comparisons.
pub const GOLD_STANDARD_THRESHOLD: f64 = 0.143;

/// Marker for voxels without a local estimate.
pub const UNRESOLVED: f64 = -1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct FscCurve {
    /// Shell centers in Å⁻¹; shell `i` has radius `i` Fourier voxels.
    pub shell_freq: Vec<f64>,
    pub fsc: Vec<f64>,
    pub voxel_size: f64,
    /// Shells where both maps had no power; their correlation is reported as 0.
    pub empty_shells: Vec<usize>,
}

impl FscCurve {
    /// Two columns: resolution (Å) and correlation. The DC shell has
    /// infinite resolution and is written as `inf`.
    pub fn write_text(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(w, "# resolution_A fsc")?;
        for (f, c) in self.shell_freq.iter().zip(&self.fsc) {
            let res = if *f > 0.0 { format!("{:.6}", 1.0 / f) } else { "inf".to_string() };
            writeln!(w, "{res} {c:.9}")?;
        }
        Ok(())
    }
}

fn check_pair(a: &Volume, b: &Volume) -> Result<()> {
    if a.grid.dim != b.grid.dim || a.data.len() != b.data.len() {
        return Err(Error::Dimension(format!("volume dims differ: {} vs {}", a.grid.dim, b.grid.dim)));
    }
    if (a.grid.voxel_size - b.grid.voxel_size).abs() > 1e-9 * a.grid.voxel_size {
        return Err(Error::Dimension(format!(
            "voxel sizes differ: {} vs {}",
            a.grid.voxel_size, b.grid.voxel_size
        )));
    }
    Ok(())
}

fn spectrum(vol: &Volume) -> Vec<Complex64> {
    let mut buf = to_complex(&vol.data);
    fft3(&mut buf, vol.grid.dim, false);
    buf
}

fn curve_from_spectra(fa: &[Complex64], fb: &[Complex64], dim: usize, voxel_size: f64) -> FscCurve {
    let shells = dim / 2 + 1;
    let mut num = vec![0.0; shells];
    let mut pa = vec![0.0; shells];
    let mut pb = vec![0.0; shells];
    for iz in 0..dim {
        let kz = signed_freq(iz, dim) as f64;
        for iy in 0..dim {
            let ky = signed_freq(iy, dim) as f64;
            let base = (iz * dim + iy) * dim;
            for ix in 0..dim {
                let kx = signed_freq(ix, dim) as f64;
                let r = (kx * kx + ky * ky + kz * kz).sqrt().round() as usize;
                if r >= shells {
                    continue;
                }
                let (x, y) = (fa[base + ix], fb[base + ix]);
                num[r] += (x * y.conj()).re;
                pa[r] += x.norm_sqr();
                pb[r] += y.norm_sqr();
            }
        }
    }
    let mut empty_shells = Vec::new();
    let fsc = (0..shells)
        .map(|r| {
            let den = (pa[r] * pb[r]).sqrt();
            if den > 0.0 {
                (num[r] / den).clamp(-1.0, 1.0)
            } else {
                empty_shells.push(r);
                0.0
            }
        })
        .collect();
    let len = dim as f64 * voxel_size;
    FscCurve {
        shell_freq: (0..shells).map(|r| r as f64 / len).collect(),
        fsc,
        voxel_size,
        empty_shells,
    }
}

/// Per-shell normalized cross-correlation of the two maps' spectra.
pub fn fsc_curve(a: &Volume, b: &Volume) -> Result<FscCurve> {
    check_pair(a, b)?;
    let (fa, fb) = rayon::join(|| spectrum(a), || spectrum(b));
    Ok(curve_from_spectra(&fa, &fb, a.grid.dim, a.grid.voxel_size))
}

/// Resolution (Å) where the curve first drops below `threshold`, linearly
/// interpolated between shells. A curve that never drops reports Nyquist
/// (twice the voxel size); one already below at the DC shell reports
/// infinity.
pub fn resolution_at_threshold(curve: &FscCurve, threshold: f64) -> f64 {
    let f = &curve.shell_freq;
    let c = &curve.fsc;
    for i in 0..c.len() {
        if c[i] < threshold {
            if i == 0 {
                return f64::INFINITY;
            }
            let t = (c[i - 1] - threshold) / (c[i - 1] - c[i]);
            let cross = f[i - 1] + t * (f[i] - f[i - 1]);
            return if cross > 0.0 { 1.0 / cross } else { f64::INFINITY };
        }
    }
    2.0 * curve.voxel_size
}

/// Gold-standard FSC between two independently reconstructed half maps.
pub fn gsfsc(half_a: &Volume, half_b: &Volume) -> Result<(FscCurve, f64)> {
    let curve = fsc_curve(half_a, half_b)?;
    let res = resolution_at_threshold(&curve, GOLD_STANDARD_THRESHOLD);
    Ok((curve, res))
}

/// Multiplies a volume by a soft spherical mask centered on the grid:
/// 1 inside `radius` (Å), cosine falloff over `edge` Å, 0 beyond.
pub fn apply_soft_mask(vol: &Volume, radius: f64, edge: f64) -> Volume {
    let g = vol.grid;
    let center = (g.dim / 2) as f64;
    let mut out = vol.clone();
    for iz in 0..g.dim {
        for iy in 0..g.dim {
            for ix in 0..g.dim {
                let r = ((ix as f64 - center).powi(2) + (iy as f64 - center).powi(2) + (iz as f64 - center).powi(2))
                    .sqrt()
                    * g.voxel_size;
                let m = if r <= radius {
                    1.0
                } else if r >= radius + edge || edge <= 0.0 {
                    0.0
                } else {
                    0.5 * (1.0 + (std::f64::consts::PI * (r - radius) / edge).cos())
                };
                let i = out.index(ix, iy, iz);
                out.data[i] *= m;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalResMap {
    /// Local resolution (Å) per voxel, or [`UNRESOLVED`].
    pub values: Volume,
    pub window: usize,
    pub stride: usize,
}

impl LocalResMap {
    pub fn resolved(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.data.iter().cloned().filter(|v| *v != UNRESOLVED && v.is_finite())
    }

    /// Mean local resolution over resolved voxels.
    pub fn mean_resolved(&self) -> Option<f64> {
        let (sum, n) = self.resolved().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Sliding-window FSC: each cube of edge `window` on a `stride` lattice is
/// Hann-weighted in both maps, correlated, and its threshold resolution is
/// assigned to the cube-center voxel. Other voxels take the nearest lattice
/// value; voxels whose own cube would leave the volume, and windows with no
/// power in either map, stay unresolved.
pub fn local_resolution(a: &Volume, b: &Volume, window: usize, stride: usize, threshold: f64) -> Result<LocalResMap> {
    check_pair(a, b)?;
    let d = a.grid.dim;
    if window > d {
        return Err(Error::InvalidArgument(format!("window {window} exceeds volume dim {d}")));
    }
    if window < 8 || !window.is_multiple_of(2) || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "window must be even and >= 8 and stride >= 1 (window {window}, stride {stride})"
        )));
    }
    let half = window / 2;
    let steps = (d - window) / stride + 1;
    let taper = hann(window);
    let sub_grid = GridSpec::new(window, a.grid.voxel_size)?;
    let positions: Vec<[usize; 3]> = (0..steps * steps * steps)
        .map(|i| [i % steps, (i / steps) % steps, i / (steps * steps)])
        .collect();
    let estimates: Vec<f64> = positions
        .par_iter()
        .map(|p| {
            let start = p.map(|s| s * stride);
            let cut = |v: &Volume| {
                let mut data = Vec::with_capacity(window * window * window);
                for z in 0..window {
                    for y in 0..window {
                        let wzy = taper[z] * taper[y];
                        for x in 0..window {
                            data.push(v.get(start[0] + x, start[1] + y, start[2] + z) * wzy * taper[x]);
                        }
                    }
                }
                Volume { grid: sub_grid, data }
            };
            let (ca, cb) = (cut(a), cut(b));
            if ca.data.iter().all(|v| *v == 0.0) && cb.data.iter().all(|v| *v == 0.0) {
                return UNRESOLVED;
            }
            let curve = curve_from_spectra(&spectrum(&ca), &spectrum(&cb), window, a.grid.voxel_size);
            resolution_at_threshold(&curve, threshold)
        })
        .collect();

    let lattice_index = |v: usize| -> Option<usize> {
        if v < half || v + half > d {
            return None;
        }
        let k = ((v - half) as f64 / stride as f64).round() as usize;
        Some(k.min(steps - 1))
    };
    let mut values = Volume::zeros(a.grid);
    for iz in 0..d {
        for iy in 0..d {
            for ix in 0..d {
                let v = match (lattice_index(ix), lattice_index(iy), lattice_index(iz)) {
                    (Some(x), Some(y), Some(z)) => estimates[(z * steps + y) * steps + x],
                    _ => UNRESOLVED,
                };
                let i = values.index(ix, iy, iz);
                values.data[i] = v;
            }
        }
    }
    Ok(LocalResMap { values, window, stride })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FslcMap {
    pub elevations_deg: Vec<f64>,
    pub azimuths_deg: Vec<f64>,
    /// Row-major `[elevation][azimuth]` correlations.
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl FslcMap {
    pub fn get(&self, elev: usize, azim: usize) -> f64 {
        self.values[elev * self.azimuths_deg.len() + azim]
    }

    pub fn summary(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean, self.std)
    }

    /// Grid with a header row of azimuths; each row starts with its elevation.
    /// The last line is the `mean ± std` summary.
    pub fn write_text(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(w, "# fslc grid: rows = elevation (deg), columns = azimuth (deg)")?;
        let header: Vec<String> = self.azimuths_deg.iter().map(|a| format!("{a:.2}")).collect();
        writeln!(w, "elev\\azim {}", header.join(" "))?;
        for (i, e) in self.elevations_deg.iter().enumerate() {
            let row: Vec<String> =
                (0..self.azimuths_deg.len()).map(|j| format!("{:.6}", self.get(i, j))).collect();
            writeln!(w, "{e:.2} {}", row.join(" "))?;
        }
        writeln!(w, "mean ± std: {}", self.summary())?;
        Ok(())
    }
}

fn trilinear(spec: &[Complex64], n: usize, k: [f64; 3]) -> Complex64 {
    let wrap = |i: i64| i.rem_euclid(n as i64) as usize;
    let f = k.map(f64::floor);
    let t = [k[0] - f[0], k[1] - f[1], k[2] - f[2]];
    let base = f.map(|v| v as i64);
    let mut acc = Complex64::new(0.0, 0.0);
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - t[2] } else { t[2] };
        let z = wrap(base[2] + dz);
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - t[1] } else { t[1] };
            let y = wrap(base[1] + dy);
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - t[0] } else { t[0] };
                let w = wx * wy * wz;
                if w != 0.0 {
                    acc += spec[(z * n + y) * n + wrap(base[0] + dx)] * w;
                }
            }
        }
    }
    acc
}

/// Orthonormal basis of the plane perpendicular to `n`.
fn plane_basis(n: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let cross = |a: [f64; 3], b: [f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let norm = |a: [f64; 3]| {
        let l = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        a.map(|v| v / l)
    };
    let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u = norm(cross(n, helper));
    let v = norm(cross(n, u));
    (u, v)
}

/// Correlation of matching central Fourier slices for each direction on a
/// uniform (elevation in [0, 180], azimuth in [0, 360)) grid.
pub fn fslc_map(a: &Volume, b: &Volume, n_elev: usize, n_azim: usize) -> Result<FslcMap> {
    check_pair(a, b)?;
    if n_elev < 2 || n_azim < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2x2 directions, got {n_elev}x{n_azim}")));
    }
    let d = a.grid.dim;
    let (fa, fb) = rayon::join(|| spectrum(a), || spectrum(b));
    let radius = (d / 2).saturating_sub(1) as i64;
    let elevations_deg: Vec<f64> = (0..n_elev).map(|i| 180.0 * i as f64 / (n_elev - 1) as f64).collect();
    let azimuths_deg: Vec<f64> = (0..n_azim).map(|j| 360.0 * j as f64 / n_azim as f64).collect();
    let dirs: Vec<(f64, f64)> = elevations_deg
        .iter()
        .flat_map(|e| azimuths_deg.iter().map(move |z| (*e, *z)))
        .collect();
    let values: Vec<f64> = dirs
        .par_iter()
        .map(|(elev, azim)| {
            let (te, ta) = (elev.to_radians(), azim.to_radians());
            let n = [te.sin() * ta.cos(), te.sin() * ta.sin(), te.cos()];
            let (u, v) = plane_basis(n);
            let (mut num, mut pa, mut pb) = (0.0, 0.0, 0.0);
            for s in -radius..=radius {
                for t in -radius..=radius {
                    if s * s + t * t > radius * radius {
                        continue;
                    }
                    let (s, t) = (s as f64, t as f64);
                    let k = [s * u[0] + t * v[0], s * u[1] + t * v[1], s * u[2] + t * v[2]];
                    let x = trilinear(&fa, d, k);
                    let y = trilinear(&fb, d, k);
                    num += (x * y.conj()).re;
                    pa += x.norm_sqr();
                    pb += y.norm_sqr();
                }
            }
            let den = (pa * pb).sqrt();
            if den > 0.0 {
                (num / den).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
    Ok(FslcMap { elevations_deg, azimuths_deg, values, mean, std })
}
