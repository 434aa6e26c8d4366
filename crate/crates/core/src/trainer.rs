//! Reconstruction by minibatch Adam over the particle dataset.
//!
//! Every step is deterministic given the seed: minibatches come from a
//! per-epoch seeded shuffle and per-image gradients are combined in a fixed
//! order, so a run resumed from a checkpoint retraces the uninterrupted run
//! bit for bit.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::atomic::{read_all, write_atomic};
use crate::ctf::{eval_ctf, CtfArray};
use crate::dataio::Dataset;
use crate::error::{Error, FormatError, Result};
use crate::gauss_model::{nearest_neighbor_distances, random_init_with, ByteReader, GaussianSet, InitOptions, PARAMS_PER_KERNEL};
use crate::gradients::{batch_loss_and_grad, loss, Observation};
use crate::projector::ProjectorConfig;

const OPT_MAGIC: &[u8; 4] = b"GEMO";
const OPT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Full,
    /// Every kernel keeps the identity rotation.
    NoRotation,
    /// Scales are isotropic, fixed at each kernel's initial nearest-neighbor distance.
    IsotropicScale,
    Both,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoRotation, Ablation::IsotropicScale, Ablation::Both];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoRotation => "no_rotation",
            Ablation::IsotropicScale => "isotropic_scale",
            Ablation::Both => "both",
        }
    }

    pub fn freezes_rotation(self) -> bool {
        matches!(self, Ablation::NoRotation | Ablation::Both)
    }

    pub fn isotropic(self) -> bool {
        matches!(self, Ablation::IsotropicScale | Ablation::Both)
    }

    fn code(self) -> u32 {
        Ablation::ALL.iter().position(|a| *a == self).unwrap() as u32
    }

    fn from_code(code: u32) -> Result<Self> {
        Ablation::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| FormatError::Schema(format!("unknown ablation code {code}")).into())
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .iter()
            .find(|a| a.name() == s)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation {s:?} (full, no_rotation, isotropic_scale, both)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Center step size as a fraction of the mean initialization half-width.
    pub lr_center: f64,
    pub lr_log_scales: f64,
    pub lr_quat: f64,
    pub lr_density: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub tau: f64,
    pub footprint_sigmas: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub m_gaussians: usize,
    /// Save a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
    /// Kernel centers start uniform in a cube of this fraction of the box.
    pub init_extent: f64,
    pub init_scale: f64,
    pub init_density: f64,
    /// Rescale the minibatch gradient to at most this norm (0 = off).
    pub grad_clip: f64,
    /// Clamp densities at zero after every step.
    pub nonnegative: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr_center: 1e-3,
            lr_log_scales: 5e-3,
            lr_quat: 1e-3,
            lr_density: 5e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            tau: 1e-3,
            footprint_sigmas: 3.5,
            seed: 0,
            ablation: Ablation::Full,
            m_gaussians: 50_000,
            checkpoint_every: 0,
            init_extent: 0.7,
            init_scale: InitOptions::default().scale_fraction,
            init_density: InitOptions::default().density,
            grad_clip: 0.0,
            nonnegative: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.epochs == 0 || self.batch_size == 0 || self.m_gaussians == 0 {
            return bad(format!(
                "epochs, batch_size and m_gaussians must be >= 1 (got {}, {}, {})",
                self.epochs, self.batch_size, self.m_gaussians
            ));
        }
        for (name, lr) in [
            ("lr_center", self.lr_center),
            ("lr_log_scales", self.lr_log_scales),
            ("lr_quat", self.lr_quat),
            ("lr_density", self.lr_density),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if !(self.init_extent > 0.0 && self.init_extent <= 1.0) {
            return bad(format!("init_extent must lie in (0, 1], got {}", self.init_extent));
        }
        if !(self.init_scale > 0.0) || !self.init_density.is_finite() || !(self.grad_clip >= 0.0) {
            return bad("init_scale must be positive, init_density finite, grad_clip >= 0".into());
        }
        self.projector().validate()
    }

    pub fn projector(&self) -> ProjectorConfig {
        ProjectorConfig { tau: self.tau, footprint_sigmas: self.footprint_sigmas, ..ProjectorConfig::default() }
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr_center", self.lr_center.to_string()),
            ("lr_log_scales", self.lr_log_scales.to_string()),
            ("lr_quat", self.lr_quat.to_string()),
            ("lr_density", self.lr_density.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("tau", self.tau.to_string()),
            ("footprint_sigmas", self.footprint_sigmas.to_string()),
            ("seed", self.seed.to_string()),
            ("ablation", self.ablation.to_string()),
            ("m_gaussians", self.m_gaussians.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("init_extent", self.init_extent.to_string()),
            ("init_scale", self.init_scale.to_string()),
            ("init_density", self.init_density.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
            ("nonnegative", self.nonnegative.to_string()),
        ]
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::InvalidArgument(format!("bad value {value:?} for {key}")))
        }
        match key {
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr_center" => self.lr_center = num(key, value)?,
            "lr_log_scales" => self.lr_log_scales = num(key, value)?,
            "lr_quat" => self.lr_quat = num(key, value)?,
            "lr_density" => self.lr_density = num(key, value)?,
            "adam_beta1" => self.adam_beta1 = num(key, value)?,
            "adam_beta2" => self.adam_beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "footprint_sigmas" => self.footprint_sigmas = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "ablation" => self.ablation = value.parse()?,
            "m_gaussians" => self.m_gaussians = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "init_extent" => self.init_extent = num(key, value)?,
            "init_scale" => self.init_scale = num(key, value)?,
            "init_density" => self.init_density = num(key, value)?,
            "grad_clip" => self.grad_clip = num(key, value)?,
            "nonnegative" => self.nonnegative = num(key, value)?,
            other => return Err(Error::InvalidArgument(format!("unknown training key {other:?}"))),
        }
        Ok(())
    }

    /// `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Overrides the fields named in `text`, leaving the rest untouched.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| FormatError::Parse {
                line: i + 1,
                message: format!("expected key = value, found {line:?}"),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Adam moments for every parameter, in kernel-parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub set: GaussianSet,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: u64,
    pub ablation: Ablation,
    /// Mean per-pixel squared residual of each completed epoch.
    pub loss_history: Vec<f64>,
}

impl TrainState {
    pub fn new(set: GaussianSet, ablation: Ablation) -> Self {
        let n = set.len() * PARAMS_PER_KERNEL;
        Self { set, adam: AdamState::zeros(n), epoch: 0, ablation, loss_history: Vec::new() }
    }

    /// Model section followed by the optimizer section; a plain model
    /// reader sees a valid Gaussian set.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.set.encode(&mut out);
        out.extend_from_slice(OPT_MAGIC);
        out.extend_from_slice(&OPT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.ablation.code().to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        out.extend_from_slice(&(self.adam.m.len() as u64).to_le_bytes());
        for v in self.adam.m.iter().chain(&self.adam.v) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.loss_history.len() as u64).to_le_bytes());
        for v in &self.loss_history {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (set, used) = GaussianSet::decode(bytes)?;
        let mut r = ByteReader::new(&bytes[used..]);
        let magic = r.take(4)?;
        if magic != OPT_MAGIC {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(OPT_MAGIC).into_owned(),
                found: String::from_utf8_lossy(magic).into_owned(),
            }
            .into());
        }
        let version = r.u32()?;
        if version != OPT_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let ablation = Ablation::from_code(r.u32()?)?;
        let epoch = r.u64()?;
        let step = r.u64()?;
        let n = r.u64()? as usize;
        if n != set.len() * PARAMS_PER_KERNEL {
            return Err(FormatError::Schema(format!(
                "optimizer state has {n} entries for {} kernels",
                set.len()
            ))
            .into());
        }
        r.require(n * 16)?;
        let mut read = |count: usize| -> Result<Vec<f64>> { (0..count).map(|_| r.f64()).collect() };
        let m = read(n)?;
        let v = read(n)?;
        let h = r.u64()? as usize;
        r.require(h.saturating_mul(8))?;
        let loss_history = (0..h).map(|_| r.f64()).collect::<Result<_>>()?;
        if r.remaining() != 0 {
            return Err(FormatError::Schema(format!("{} trailing bytes after checkpoint", r.remaining())).into());
        }
        Ok(Self { set, adam: AdamState { m, v, step }, epoch, ablation, loss_history })
    }
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = state.encode();
    write_atomic(path, |w| {
        w.write_all(&bytes)?;
        Ok(())
    })
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    TrainState::decode(&read_all(path)?)
}

/// Two-column text: epoch and mean loss.
pub fn write_loss_history(history: &[f64], w: &mut dyn Write) -> Result<()> {
    writeln!(w, "# epoch mean_loss")?;
    for (i, l) in history.iter().enumerate() {
        writeln!(w, "{} {l:.12e}", i + 1)?;
    }
    Ok(())
}

/// A seed for an independent sub-stream (halves, shuffles) of `seed`.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    // SplitMix64 finalizer.
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Applies the ablation's structural constraints in place.
fn enforce_ablation(set: &mut GaussianSet, ablation: Ablation) {
    for g in &mut set.kernels {
        if ablation.freezes_rotation() {
            g.quat = [1.0, 0.0, 0.0, 0.0];
        }
        if ablation.isotropic() {
            let mean = g.log_scales.sum() / 3.0;
            g.log_scales = Vector3::new(mean, mean, mean);
        }
    }
}

/// Random initialization inside the central `init_extent` of the box, then
/// the ablation's structure: identity rotations, and/or isotropic scales at
/// each kernel's nearest-neighbor distance.
pub fn initial_model(data: &Dataset, cfg: &TrainConfig) -> Result<GaussianSet> {
    let half = 0.5 * cfg.init_extent * data.spec.box_size();
    let opts = InitOptions { scale_fraction: cfg.init_scale, density: cfg.init_density };
    let mut set = random_init_with(cfg.m_gaussians, [half; 3], derive_seed(cfg.seed, 0x1217), &opts)?;
    if cfg.ablation.isotropic() && set.len() > 1 {
        let centers: Vec<[f64; 3]> = set.kernels.iter().map(|g| g.center.into()).collect();
        for (g, d) in set.kernels.iter_mut().zip(nearest_neighbor_distances(&centers)) {
            let ls = d.max(1e-3 * data.spec.pixel_size).ln();
            g.log_scales = Vector3::new(ls, ls, ls);
        }
    }
    enforce_ablation(&mut set, cfg.ablation);
    Ok(set)
}

/// Per-parameter step sizes for one kernel.
fn learning_rates(cfg: &TrainConfig, extent: &Vector3<f64>) -> [f64; PARAMS_PER_KERNEL] {
    let center = cfg.lr_center * extent.mean();
    let mut lr = [0.0; PARAMS_PER_KERNEL];
    lr[0..3].fill(center);
    lr[3..6].fill(cfg.lr_log_scales);
    lr[6..10].fill(cfg.lr_quat);
    lr[10] = cfg.lr_density;
    lr
}

/// A dataset prepared for training: transfer functions evaluated once.
pub struct Trainer<'a> {
    data: &'a Dataset,
    cfg: TrainConfig,
    ctfs: Vec<CtfArray>,
    projector: ProjectorConfig,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub set: GaussianSet,
    pub loss_history: Vec<f64>,
    pub state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        data.validate()?;
        if data.len() < cfg.batch_size {
            return Err(Error::InvalidArgument(format!(
                "dataset has {} images, fewer than the batch size {}",
                data.len(),
                cfg.batch_size
            )));
        }
        let ctfs = data
            .ctfs
            .iter()
            .map(|c| {
                c.validate()?;
                Ok(eval_ctf(c, &data.spec))
            })
            .collect::<Result<_>>()?;
        let projector = cfg.projector();
        Ok(Self { data, cfg, ctfs, projector })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn initial_state(&self) -> Result<TrainState> {
        Ok(TrainState::new(initial_model(self.data, &self.cfg)?, self.cfg.ablation))
    }

    fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, 0x5348));
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    /// One Adam step on the gradient summed over the images at `batch`.
    /// Returns the summed loss. On a non-finite loss or gradient the state is
    /// left untouched.
    pub fn step(&self, state: &mut TrainState, batch: &[usize]) -> Result<f64> {
        let obs: Vec<Observation<'_>> = batch
            .iter()
            .map(|&i| Observation { pose: &self.data.poses[i], ctf: &self.ctfs[i], observed: &self.data.images[i] })
            .collect();
        let mut grad = batch_loss_and_grad(&state.set, &obs, &self.projector)?;
        if !grad.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss or gradient at epoch {}, step {}; state kept at the last finite step",
                state.epoch + 1,
                state.adam.step + 1
            )));
        }
        for row in &mut grad.rows {
            if state.ablation.freezes_rotation() {
                row[6..10].fill(0.0);
            }
            if state.ablation.isotropic() {
                row[3..6].fill(0.0);
            }
        }
        if self.cfg.grad_clip > 0.0 {
            let norm = grad.norm();
            if norm > self.cfg.grad_clip {
                let s = self.cfg.grad_clip / norm;
                grad.rows.iter_mut().flatten().for_each(|v| *v *= s);
            }
        }

        let cfg = &self.cfg;
        let adam = &mut state.adam;
        adam.step += 1;
        let t = adam.step as i32;
        let bias1 = 1.0 - cfg.adam_beta1.powi(t);
        let bias2 = 1.0 - cfg.adam_beta2.powi(t);
        let lr = learning_rates(cfg, &state.set.extent);
        for (k, (g, row)) in state.set.kernels.iter_mut().zip(&grad.rows).enumerate() {
            let mut p = g.to_params();
            for j in 0..PARAMS_PER_KERNEL {
                let i = k * PARAMS_PER_KERNEL + j;
                let gj = row[j];
                adam.m[i] = cfg.adam_beta1 * adam.m[i] + (1.0 - cfg.adam_beta1) * gj;
                adam.v[i] = cfg.adam_beta2 * adam.v[i] + (1.0 - cfg.adam_beta2) * gj * gj;
                let mhat = adam.m[i] / bias1;
                let vhat = adam.v[i] / bias2;
                p[j] -= lr[j] * mhat / (vhat.sqrt() + cfg.adam_eps);
            }
            *g = crate::gauss_model::Gaussian::from_params(&p);
            if g.quat.iter().any(|q| *q != 0.0) {
                g.normalize_quat();
            } else {
                g.quat = [1.0, 0.0, 0.0, 0.0];
            }
            if cfg.nonnegative && g.density < 0.0 {
                g.density = 0.0;
            }
        }
        enforce_ablation(&mut state.set, state.ablation);
        Ok(grad.loss)
    }

    /// Runs one full epoch and records its mean per-pixel loss.
    pub fn run_epoch(&self, state: &mut TrainState) -> Result<f64> {
        let order = self.epoch_order(state.epoch);
        let mut total = 0.0;
        for batch in order.chunks(self.cfg.batch_size) {
            total += self.step(state, batch)?;
        }
        let mean = total / (self.data.len() * self.data.spec.len()) as f64;
        state.epoch += 1;
        state.loss_history.push(mean);
        Ok(mean)
    }

    /// Continues `state` until `cfg.epochs` epochs are complete, saving to
    /// `checkpoint` every `checkpoint_every` epochs and at the end. A failed
    /// epoch leaves the last saved checkpoint in place.
    pub fn run(
        &self,
        state: &mut TrainState,
        checkpoint: Option<&Path>,
        mut progress: impl FnMut(u64, f64),
    ) -> Result<()> {
        if state.ablation != self.cfg.ablation {
            return Err(Error::InvalidArgument(format!(
                "checkpoint was trained with ablation {}, config asks for {}",
                state.ablation, self.cfg.ablation
            )));
        }
        if state.set.len() * PARAMS_PER_KERNEL != state.adam.m.len() {
            return Err(Error::Dimension("optimizer state does not match the model".into()));
        }
        while (state.epoch as usize) < self.cfg.epochs {
            let before = state.clone();
            match self.run_epoch(state) {
                Ok(l) => progress(state.epoch, l),
                Err(e) => {
                    *state = before;
                    return Err(e);
                }
            }
            let every = self.cfg.checkpoint_every;
            if let Some(path) = checkpoint {
                if every > 0 && (state.epoch as usize).is_multiple_of(every) {
                    save_checkpoint(state, path)?;
                }
            }
        }
        if let Some(path) = checkpoint {
            save_checkpoint(state, path)?;
        }
        Ok(())
    }

    /// Mean per-pixel loss over `indices` without updating anything.
    pub fn evaluate(&self, set: &GaussianSet, indices: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for &i in indices {
            total += loss(set, &self.data.poses[i], &self.ctfs[i], &self.data.images[i], &self.projector)?;
        }
        Ok(total / (indices.len().max(1) * self.data.spec.len()) as f64)
    }
}

pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    let trainer = Trainer::new(data, cfg.clone())?;
    let mut state = trainer.initial_state()?;
    trainer.run(&mut state, None, |_, _| {})?;
    Ok(TrainOutput { set: state.set.clone(), loss_history: state.loss_history.clone(), state })
}

/// Seeded split of `0..n` into two disjoint halves (even and odd positions
/// of a random permutation).
pub fn split_halves(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x4841)));
    let a = order.iter().step_by(2).copied().collect();
    let b = order.iter().skip(1).step_by(2).copied().collect();
    (a, b)
}

#[derive(Clone, Debug)]
pub struct HalfOutputs {
    pub a: TrainOutput,
    pub b: TrainOutput,
    pub split: (Vec<usize>, Vec<usize>),
}

/// Trains independent models on the two halves with derived seeds.
pub fn train_halves(data: &Dataset, cfg: &TrainConfig) -> Result<HalfOutputs> {
    if data.len() < 2 {
        return Err(Error::InvalidArgument("half-set training needs at least two images".into()));
    }
    let split = split_halves(data.len(), cfg.seed);
    let run = |idx: &[usize], salt: u64| {
        let sub = data.subset(idx);
        let half_cfg = TrainConfig { seed: derive_seed(cfg.seed, salt), ..cfg.clone() };
        train(&sub, &half_cfg)
    };
    let a = run(&split.0, 0xA)?;
    let b = run(&split.1, 0xB)?;
    Ok(HalfOutputs { a, b, split })
}
