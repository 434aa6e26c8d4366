//! Throughput and memory measurements shared by the CLI and the test suite.
//!
//! Heap figures come from [`crate::alloc_track`] and read zero unless the
//! calling binary installs [`crate::alloc_track::CountingAlloc`].

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alloc_track::{measure, AllocStats};
use crate::ctf::{eval_ctf, CtfParams};
use crate::dataio::{simulate_dataset, Dataset, SimConfig};
use crate::error::Result;
use crate::gauss_model::uniform_quaternion;
use crate::gradients::loss_and_grad;
use crate::grid::{Image, ImageSpec};
use crate::phantom::ribo_toy;
use crate::projector::{project, project_dense_oracle, Pose, ProjectorConfig};
use crate::trainer::{TrainConfig, Trainer};

/// Box edge (Å) the built-in phantom is framed in at every dimension.
pub const PHANTOM_BOX: f64 = 96.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SplatVsDense {
    pub dim: usize,
    pub kernels: usize,
    pub z_samples: usize,
    pub reps: usize,
    /// Mean wall time of one splatted forward + backward pass, seconds.
    pub splat_seconds: f64,
    /// Mean wall time of one dense-oracle forward pass, seconds.
    pub dense_seconds: f64,
    /// Largest pixel disagreement between the two forwards over the image peak.
    pub max_rel_diff: f64,
}

impl SplatVsDense {
    pub fn speedup(&self) -> f64 {
        self.dense_seconds / self.splat_seconds
    }
}

fn random_pose(seed: u64) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Pose::from_quat(uniform_quaternion(&mut rng), [0.0; 2]).expect("unit quaternion")
}

/// Times splatted forward + backward against the dense-oracle forward on the
/// built-in phantom at `dim` pixels (z samples = `dim`), averaged over `reps`
/// random poses.
pub fn splat_vs_dense(dim: usize, reps: usize, seed: u64) -> Result<SplatVsDense> {
    let phantom = ribo_toy();
    let spec = ImageSpec::new(dim, PHANTOM_BOX / dim as f64)?;
    let ctf = eval_ctf(&CtfParams::default(), &spec);
    let cfg = ProjectorConfig::default();
    let reps = reps.max(1);
    let (mut splat, mut dense, mut worst) = (0.0, 0.0, 0.0f64);
    for r in 0..reps {
        let pose = random_pose(seed.wrapping_add(r as u64));
        let observed = Image::zeros(spec);
        let t = Instant::now();
        let g = loss_and_grad(&phantom, &pose, &ctf, &observed, &cfg)?;
        splat += t.elapsed().as_secs_f64();
        std::hint::black_box(&g);

        let t = Instant::now();
        let reference = project_dense_oracle(&phantom, &pose, &spec, dim)?;
        dense += t.elapsed().as_secs_f64();

        let fast = project(&phantom, &pose, &spec, &cfg)?.image;
        let peak = reference.max_abs();
        let diff = fast.data.iter().zip(&reference.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(diff / peak);
    }
    Ok(SplatVsDense {
        dim,
        kernels: phantom.len(),
        z_samples: dim,
        reps,
        splat_seconds: splat / reps as f64,
        dense_seconds: dense / reps as f64,
        max_rel_diff: worst,
    })
}

/// A two-particle dataset of the phantom at `dim` pixels of `pixel_size` Å.
pub fn tiny_dataset(dim: usize, pixel_size: f64, seed: u64) -> Result<Dataset> {
    let spec = ImageSpec::new(dim, pixel_size)?;
    Ok(simulate_dataset(&ribo_toy(), &SimConfig::new(2, spec, 1.0, seed))?.0)
}

/// Heap profile of building a trainer and taking one Adam step with
/// `m_gaussians` kernels spread over a fixed `extent_angstrom` cube, whatever
/// the box size.
pub fn training_step_memory(data: &Dataset, m_gaussians: usize, extent_angstrom: f64, seed: u64) -> Result<AllocStats> {
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: data.len(),
        m_gaussians,
        seed,
        init_extent: (extent_angstrom / data.spec.box_size()).min(1.0),
        ..TrainConfig::default()
    };
    let batch: Vec<usize> = (0..data.len()).collect();
    let (res, stats) = measure(|| -> Result<()> {
        let trainer = Trainer::new(data, cfg)?;
        let mut state = trainer.initial_state()?;
        trainer.step(&mut state, &batch)?;
        Ok(())
    });
    res?;
    Ok(stats)
}

/// Heap profile of one dense-oracle projection with `dim` z samples.
pub fn dense_oracle_memory(dim: usize, pixel_size: f64, seed: u64) -> Result<AllocStats> {
    let phantom = ribo_toy();
    let spec = ImageSpec::new(dim, pixel_size)?;
    let pose = random_pose(seed);
    let (res, stats) = measure(|| project_dense_oracle(&phantom, &pose, &spec, dim));
    res?;
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingPoint {
    pub kernels: usize,
    pub dim: usize,
    /// Mean forward + backward wall time per image, seconds.
    pub seconds: f64,
}

/// Forward + backward time per image for each `(kernels, dim)` pair. Kernels
/// are a random initialization over the phantom's extent.
pub fn scaling(points: &[(usize, usize)], reps: usize, seed: u64) -> Result<Vec<ScalingPoint>> {
    let mut out = Vec::with_capacity(points.len());
    for &(m, dim) in points {
        let spec = ImageSpec::new(dim, PHANTOM_BOX / dim as f64)?;
        let set = crate::gauss_model::random_init(m, [30.0; 3], seed)?;
        let ctf = eval_ctf(&CtfParams::default(), &spec);
        let observed = Image::zeros(spec);
        let reps = reps.max(1);
        let t = Instant::now();
        for r in 0..reps {
            let g = loss_and_grad(&set, &random_pose(seed + r as u64), &ctf, &observed, &ProjectorConfig::default())?;
            std::hint::black_box(&g);
        }
        out.push(ScalingPoint { kernels: m, dim, seconds: t.elapsed().as_secs_f64() / reps as f64 });
    }
    Ok(out)
}
