//! Contrast transfer function and the additive noise model.
//!
//! The transfer function is the weak-phase-object CTF with astigmatic
//! defocus, spherical aberration, amplitude contrast, a constant phase shift
//! and an optional B-factor envelope:
//!
//! ```text
//! gamma(k) = -pi * lambda * dz(theta) * |k|^2 + pi/2 * Cs * lambda^3 * |k|^4 + phase_shift
//! ctf(k)   = -env(|k|) * (sqrt(1 - a^2) * sin(gamma) + a * cos(gamma))
//! env(k)   = exp(-B |k|^2 / 4)
//! ```
//!
//! Frequencies live on a centered grid: index `i` maps to
//! `(i - d/2) / (d * pixel_size)` Å⁻¹.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{fft2, to_complex};
use crate::grid::{Image, ImageSpec};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CtfParams {
    /// Defocus along the major axis, Å (positive = underfocus).
    pub defocus_u: f64,
    pub defocus_v: f64,
    /// Azimuth of the major defocus axis, radians.
    pub astig_angle: f64,
    /// Acceleration voltage, kV.
    pub voltage: f64,
    /// Spherical aberration, mm.
    pub cs: f64,
    pub amplitude_contrast: f64,
    pub phase_shift: f64,
    /// Envelope B-factor, Å².
    pub b_factor: f64,
}

impl Default for CtfParams {
    fn default() -> Self {
        Self {
            defocus_u: 15000.0,
            defocus_v: 15000.0,
            astig_angle: 0.0,
            voltage: 300.0,
            cs: 2.7,
            amplitude_contrast: 0.1,
            phase_shift: 0.0,
            b_factor: 0.0,
        }
    }
}

impl CtfParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.voltage > 0.0
            && (0.0..=1.0).contains(&self.amplitude_contrast)
            && self.b_factor >= 0.0
            && [self.defocus_u, self.defocus_v, self.astig_angle, self.cs, self.phase_shift]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid CTF parameters {self:?}")))
        }
    }

    /// Relativistic electron wavelength in Å.
    pub fn wavelength(&self) -> f64 {
        electron_wavelength(self.voltage)
    }
}

/// Relativistic de Broglie wavelength (Å) of electrons accelerated through
/// `kilovolts`.
pub fn electron_wavelength(kilovolts: f64) -> f64 {
    const H: f64 = 6.626_070_15e-34;
    const M0: f64 = 9.109_383_701_5e-31;
    const E: f64 = 1.602_176_634e-19;
    const C: f64 = 299_792_458.0;
    let v = kilovolts * 1e3;
    let p = (2.0 * M0 * E * v * (1.0 + E * v / (2.0 * M0 * C * C))).sqrt();
    H / p * 1e10
}

/// A transfer function sampled on the centered frequency grid of an image.
#[derive(Clone, Debug, PartialEq)]
pub struct CtfArray {
    pub values: Vec<f64>,
    pub spec: ImageSpec,
}

impl CtfArray {
    pub fn constant(spec: ImageSpec, value: f64) -> Self {
        Self { values: vec![value; spec.len()], spec }
    }

    /// Value for FFT-ordered bin `(u, v)` (DC at 0).
    #[inline]
    pub fn at_fft_bin(&self, u: usize, v: usize) -> f64 {
        let d = self.spec.dim;
        let h = d / 2;
        self.values[((v + h) % d) * d + (u + h) % d]
    }

    /// Elementwise product, i.e. the transfer function of applying both.
    pub fn compose(&self, other: &CtfArray) -> Result<CtfArray> {
        if self.spec != other.spec {
            return Err(Error::Dimension("CTF arrays on different grids".into()));
        }
        Ok(Self { values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(), spec: self.spec })
    }
}

/// Samples the CTF on the centered frequency grid of `spec`.
pub fn eval_ctf(p: &CtfParams, spec: &ImageSpec) -> CtfArray {
    let d = spec.dim;
    let lambda = p.wavelength();
    let cs = p.cs * 1e7;
    let alpha = p.amplitude_contrast;
    let w_sin = (1.0 - alpha * alpha).sqrt();
    let pi = std::f64::consts::PI;
    let inv_len = 1.0 / (d as f64 * spec.pixel_size);
    let mut values = Vec::with_capacity(d * d);
    for iy in 0..d {
        let ky = (iy as f64 - (d / 2) as f64) * inv_len;
        for ix in 0..d {
            let kx = (ix as f64 - (d / 2) as f64) * inv_len;
            let k2 = kx * kx + ky * ky;
            let theta = ky.atan2(kx);
            let dz = 0.5 * (p.defocus_u + p.defocus_v + (p.defocus_u - p.defocus_v) * (2.0 * (theta - p.astig_angle)).cos());
            let gamma = -pi * lambda * dz * k2 + 0.5 * pi * cs * lambda.powi(3) * k2 * k2 + p.phase_shift;
            let env = (-p.b_factor * k2 / 4.0).exp();
            values.push(-env * (w_sin * gamma.sin() + alpha * gamma.cos()));
        }
    }
    CtfArray { values, spec: *spec }
}

/// Multiplies the image spectrum by the transfer function.
pub fn apply_ctf(img: &Image, ctf: &CtfArray) -> Result<Image> {
    if img.spec != ctf.spec {
        return Err(Error::Dimension(format!(
            "image spec {:?} does not match CTF spec {:?}",
            img.spec, ctf.spec
        )));
    }
    let mut buf = to_complex(&img.data);
    filter_in_place(&mut buf, ctf);
    Ok(Image { spec: img.spec, data: buf.iter().map(|c| c.re).collect() })
}

/// Forward transform, multiply, inverse transform, normalize. Leaves the
/// (real-valued) result in the real parts of `buf`.
pub(crate) fn filter_in_place(buf: &mut [Complex64], ctf: &CtfArray) {
    let d = ctf.spec.dim;
    fft2(buf, d, false);
    let scale = 1.0 / (d * d) as f64;
    for v in 0..d {
        for u in 0..d {
            buf[v * d + u] *= ctf.at_fft_bin(u, v) * scale;
        }
    }
    fft2(buf, d, true);
}

/// Applies the CTF with 2x zero padding, which removes circular wraparound
/// of the point-spread function at the cost of a 4x larger transform.
pub fn apply_ctf_padded(img: &Image, params: &CtfParams) -> Result<Image> {
    let d = img.spec.dim;
    let big = ImageSpec::new(2 * d, img.spec.pixel_size)?;
    let ctf = eval_ctf(params, &big);
    let off = d / 2;
    let mut padded = Image::zeros(big);
    for iy in 0..d {
        padded.data[(iy + off) * 2 * d + off..(iy + off) * 2 * d + off + d]
            .copy_from_slice(&img.data[iy * d..(iy + 1) * d]);
    }
    let out = apply_ctf(&padded, &ctf)?;
    let mut cropped = Image::zeros(img.spec);
    for iy in 0..d {
        cropped.data[iy * d..(iy + 1) * d]
            .copy_from_slice(&out.data[(iy + off) * 2 * d + off..(iy + off) * 2 * d + off + d]);
    }
    Ok(cropped)
}

/// Result of [`add_noise`].
#[derive(Clone, Debug)]
pub struct Noisy {
    pub image: Image,
    pub noise_variance: f64,
    /// Set when the input had zero variance and the variance fell back to `1 / snr`.
    pub constant_input: bool,
}

/// Adds white Gaussian noise with variance `var(img) / snr`.
pub fn add_noise(img: &Image, snr: f64, seed: u64) -> Result<Noisy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    add_noise_with(img, snr, &mut rng)
}

pub fn add_noise_with<R: rand::Rng + ?Sized>(img: &Image, snr: f64, rng: &mut R) -> Result<Noisy> {
    if !(snr > 0.0) {
        return Err(Error::InvalidArgument(format!("snr must be positive, got {snr}")));
    }
    let n = img.data.len() as f64;
    let mean = img.data.iter().sum::<f64>() / n;
    let var = img.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let constant_input = var == 0.0;
    let noise_variance = if constant_input { 1.0 / snr } else { var / snr };
    let normal = Normal::new(0.0, noise_variance.sqrt())
        .map_err(|e| Error::Numerical(format!("noise distribution: {e}")))?;
    let data = img.data.iter().map(|v| v + normal.sample(rng)).collect();
    Ok(Noisy { image: Image { spec: img.spec, data }, noise_variance, constant_input })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn spec(d: usize) -> ImageSpec {
        ImageSpec::new(d, 1.5).unwrap()
    }

    fn random_image(spec: ImageSpec, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image { spec, data: (0..spec.len()).map(|_| rng.random_range(-1.0..1.0)).collect() }
    }

    fn astig_params() -> CtfParams {
        CtfParams {
            defocus_u: 12000.0,
            defocus_v: 9000.0,
            astig_angle: 0.6,
            b_factor: 40.0,
            phase_shift: 0.3,
            ..CtfParams::default()
        }
    }

    #[test]
    fn pure_amplitude_contrast_is_minus_one() {
        let p = CtfParams {
            defocus_u: 0.0,
            defocus_v: 0.0,
            cs: 0.0,
            amplitude_contrast: 1.0,
            ..CtfParams::default()
        };
        assert!(eval_ctf(&p, &spec(16)).values.iter().all(|v| (v + 1.0).abs() < 1e-15));
    }

    #[test]
    fn dc_value() {
        let p = CtfParams { amplitude_contrast: 0.0, ..CtfParams::default() };
        let c = eval_ctf(&p, &spec(16));
        assert_eq!(c.values[8 * 16 + 8], 0.0);
        let q = astig_params();
        let c = eval_ctf(&q, &spec(16));
        let want = -q.amplitude_contrast * q.phase_shift.cos() - (1.0 - 0.01f64).sqrt() * q.phase_shift.sin();
        assert!((c.values[8 * 16 + 8] - want).abs() < 1e-15);
    }

    #[test]
    fn wavelength_at_300kv() {
        // Oracle: total energy route, lambda = hc / sqrt(E_k^2 + 2 E_k m c^2).
        let mc2_kev: f64 = 510.998_950_00;
        let hc_kev_angstrom = 12.398_419_843_32;
        let ek: f64 = 300.0;
        let oracle = hc_kev_angstrom / (ek * ek + 2.0 * ek * mc2_kev).sqrt();
        let got = electron_wavelength(300.0);
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
        assert!((got - 0.019687).abs() < 5e-7);
    }

    #[test]
    fn friedel_symmetric_and_bounded() {
        let p = astig_params();
        let s = spec(32);
        let c = eval_ctf(&p, &s);
        let d = 32;
        for iy in 1..d {
            for ix in 1..d {
                let a = c.values[iy * d + ix];
                let b = c.values[(d - iy) * d + (d - ix)];
                assert!((a - b).abs() < 1e-9);
                let kx = (ix as f64 - 16.0) / (d as f64 * 1.5);
                let ky = (iy as f64 - 16.0) / (d as f64 * 1.5);
                let env = (-p.b_factor * (kx * kx + ky * ky) / 4.0).exp();
                assert!(a.abs() <= env + 1e-12 && env <= 1.0);
            }
        }
    }

    #[test]
    fn unit_and_negative_ctf() {
        let img = random_image(spec(16), 1);
        let same = apply_ctf(&img, &CtfArray::constant(img.spec, 1.0)).unwrap();
        let neg = apply_ctf(&img, &CtfArray::constant(img.spec, -1.0)).unwrap();
        for ((a, b), c) in img.data.iter().zip(&same.data).zip(&neg.data) {
            assert!((a - b).abs() < 1e-9 && (a + c).abs() < 1e-9);
        }
    }

    #[test]
    fn spec_mismatch_is_rejected() {
        let img = random_image(spec(16), 1);
        let ctf = CtfArray::constant(spec(32), 1.0);
        assert!(matches!(apply_ctf(&img, &ctf), Err(Error::Dimension(_))));
    }

    #[test]
    fn delta_response_matches_direct_convolution() {
        let s = spec(32);
        let d = 32;
        let ctf = eval_ctf(&astig_params(), &s);
        // Real-space kernel by direct inverse DFT of the centered CTF.
        let mut psf = vec![0.0; d * d];
        for y in 0..d {
            for x in 0..d {
                let mut acc = Complex64::new(0.0, 0.0);
                for v in 0..d {
                    for u in 0..d {
                        let phase = 2.0 * std::f64::consts::PI * ((u * x + v * y) as f64) / d as f64;
                        acc += Complex64::from_polar(ctf.at_fft_bin(u, v), phase);
                    }
                }
                psf[y * d + x] = acc.re / (d * d) as f64;
            }
        }
        let mut img = Image::zeros(s);
        let (hx, hy) = (5usize, 20usize);
        img.data[hy * d + hx] = 1.0;
        let out = apply_ctf(&img, &ctf).unwrap();
        // Circular convolution of the delta with the kernel.
        for y in 0..d {
            for x in 0..d {
                let mut acc = 0.0;
                for sy in 0..d {
                    for sx in 0..d {
                        let v = img.data[sy * d + sx];
                        if v != 0.0 {
                            acc += v * psf[((y + d - sy) % d) * d + (x + d - sx) % d];
                        }
                    }
                }
                assert!((out.data[y * d + x] - acc).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn padded_application_differs_only_by_wraparound() {
        let s = spec(32);
        let mut img = Image::zeros(s);
        img.data[16 * 32 + 16] = 1.0;
        let p = CtfParams { defocus_u: 2000.0, defocus_v: 2000.0, b_factor: 200.0, ..CtfParams::default() };
        let plain = apply_ctf(&img, &eval_ctf(&p, &s)).unwrap();
        let padded = apply_ctf_padded(&img, &p).unwrap();
        // Low defocus with a strong envelope keeps the PSF compact, so both
        // agree near the hot pixel.
        assert!((plain.get(16, 16) - padded.get(16, 16)).abs() < 0.05 * padded.get(16, 16).abs());
    }

    #[test]
    fn noise_examples() {
        let img = random_image(spec(32), 3);
        let std = (img.data.iter().map(|v| v * v).sum::<f64>() / img.data.len() as f64).sqrt();
        let quiet = add_noise(&img, 1e12, 4).unwrap().image;
        let max_dev = img.data.iter().zip(&quiet.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_dev < 1e-4 * std);

        let a = add_noise(&img, 1.0, 5).unwrap().image;
        let b = add_noise(&img, 1.0, 5).unwrap().image;
        assert_eq!(a, b);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let s = spec(128);
        let unit = Image { spec: s, data: (0..s.len()).map(|_| normal.sample(&mut rng)).collect() };
        let noisy = add_noise(&unit, 1.0, 7).unwrap();
        let diff: Vec<f64> = noisy.image.data.iter().zip(&unit.data).map(|(a, b)| a - b).collect();
        let m = diff.iter().sum::<f64>() / diff.len() as f64;
        let var = diff.iter().map(|v| (v - m).powi(2)).sum::<f64>() / diff.len() as f64;
        assert!((0.9..=1.1).contains(&var), "{var}");

        let flat = Image { spec: spec(8), data: vec![2.0; 64] };
        let out = add_noise(&flat, 4.0, 1).unwrap();
        assert!(out.constant_input && out.noise_variance == 0.25);
        assert!(add_noise(&flat, 0.0, 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn filtering_is_linear_composable_and_parseval(seed in 0u64..1000, a in -3.0..3.0f64, b in -3.0..3.0f64) {
            let s = spec(16);
            let x = random_image(s, seed);
            let y = random_image(s, seed + 1);
            let c1 = eval_ctf(&astig_params(), &s);
            let c2 = eval_ctf(&CtfParams::default(), &s);

            let combo = Image { spec: s, data: x.data.iter().zip(&y.data).map(|(p, q)| a * p + b * q).collect() };
            let lhs = apply_ctf(&combo, &c1).unwrap();
            let fx = apply_ctf(&x, &c1).unwrap();
            let fy = apply_ctf(&y, &c1).unwrap();
            for ((l, p), q) in lhs.data.iter().zip(&fx.data).zip(&fy.data) {
                prop_assert!((l - (a * p + b * q)).abs() < 1e-9);
            }

            let twice = apply_ctf(&fx, &c2).unwrap();
            let once = apply_ctf(&x, &c1.compose(&c2).unwrap()).unwrap();
            for (p, q) in twice.data.iter().zip(&once.data) {
                prop_assert!((p - q).abs() < 1e-9);
            }

            let mut spec_buf = to_complex(&x.data);
            fft2(&mut spec_buf, 16, false);
            let mut want = 0.0;
            for v in 0..16 {
                for u in 0..16 {
                    want += (spec_buf[v * 16 + u] * c2.at_fft_bin(u, v)).norm_sqr();
                }
            }
            want /= 256.0;
            // Radially symmetric so the Nyquist row keeps Hermitian symmetry.
            let f2 = apply_ctf(&x, &c2).unwrap();
            prop_assert!((f2.energy() - want).abs() <= 1e-6 * want);
        }
    }
}
