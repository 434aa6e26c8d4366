//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Runs as a plain binary (no libtest harness) so the verdict lines are
//! always printed and the counting allocator can be installed globally.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use splatem::alloc_track::CountingAlloc;
use splatem::bench::{dense_oracle_memory, splat_vs_dense, tiny_dataset, training_step_memory, PHANTOM_BOX};
use splatem::dataio::simulate::GROUND_TRUTH_CUTOFF;
use splatem::dataio::{simulate_dataset, write_volume, SimConfig};
use splatem::gauss_model::{uniform_quaternion, voxelize};
use splatem::gradients::{finite_diff_check, random_problem};
use splatem::metrics::{fsc_curve, fslc_map, gsfsc, local_resolution, resolution_at_threshold, GOLD_STANDARD_THRESHOLD};
use splatem::phantom::ribo_toy;
use splatem::projector::{project, project_dense_oracle, Pose, ProjectorConfig};
use splatem::trainer::{save_checkpoint, train_halves, Ablation, TrainConfig};
use splatem::{GridSpec, ImageSpec, Volume};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn run(id: usize, name: &str, check: impl FnOnce() -> splatem::Result<Verdict>) -> bool {
    let t = Instant::now();
    let v = check().unwrap_or_else(|e| verdict(false, format!("error: {e}")));
    println!(
        "[{}] criterion {id} {name}: {} ({:.1} s)",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
        t.elapsed().as_secs_f64()
    );
    v.pass
}

fn projection_matches_dense_oracle() -> splatem::Result<Verdict> {
    let t = Instant::now();
    let phantom = ribo_toy();
    let d = 64;
    let spec = ImageSpec::new(d, PHANTOM_BOX / d as f64)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let shift = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let pose = Pose::from_quat(uniform_quaternion(&mut rng), shift)?;
        let fast = project(&phantom, &pose, &spec, &ProjectorConfig::default())?.image;
        let reference = project_dense_oracle(&phantom, &pose, &spec, 4 * d)?;
        let peak = reference.max_abs();
        let err = fast.data.iter().zip(&reference.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err / peak);
    }
    let secs = t.elapsed().as_secs_f64();
    Ok(verdict(
        worst <= 5e-3 && secs < 10.0,
        format!("max error {:.3}% of peak over 3 poses (limit 0.5%), {secs:.1} s (limit 10 s)", 100.0 * worst),
    ))
}

fn gradients_match_finite_differences() -> splatem::Result<Verdict> {
    let t = Instant::now();
    let problem = random_problem(20, 32, 1.0, 21)?;
    let report =
        finite_diff_check(&problem.set, &problem.pose, &problem.ctf, &problem.observed, &ProjectorConfig::exact(), 1e-4)?;
    let classes: Vec<String> = report.classes.iter().map(|(n, c)| format!("{n} {:.1e}", c.max_rel)).collect();
    let secs = t.elapsed().as_secs_f64();
    Ok(verdict(
        report.passes(1e-4) && secs < 30.0,
        format!("max relative error {} (limit 1e-4), {secs:.1} s (limit 30 s)", classes.join(", ")),
    ))
}

struct RoundTrip {
    gsfsc: f64,
    gt_res: f64,
    seconds: f64,
}

/// Simulate, train two halves, voxelize and score. Every artifact is written
/// into `dir` so runs can be compared byte for byte.
fn round_trip(n: usize, epochs: usize, ablation: Ablation, dir: &Path) -> splatem::Result<RoundTrip> {
    let t = Instant::now();
    let spec = ImageSpec::new(64, 1.5)?;
    let (data, gt) = simulate_dataset(&ribo_toy(), &SimConfig::new(n, spec, 0.5, 1))?;
    let cfg = TrainConfig { m_gaussians: 2000, epochs, ablation, seed: 1, ..TrainConfig::default() };
    let halves = train_halves(&data, &cfg)?;
    let grid = spec.grid_spec()?;
    let va = voxelize(&halves.a.set, &grid, GROUND_TRUTH_CUTOFF)?;
    let vb = voxelize(&halves.b.set, &grid, GROUND_TRUTH_CUTOFF)?;
    let (curve, gsfsc_res) = gsfsc(&va, &vb)?;
    let gt_curve = fsc_curve(&Volume::average(&va, &vb)?, &gt)?;
    let gt_res = resolution_at_threshold(&gt_curve, 0.5);
    let seconds = t.elapsed().as_secs_f64();

    save_checkpoint(&halves.a.state, &dir.join("half_a.ckpt"))?;
    save_checkpoint(&halves.b.state, &dir.join("half_b.ckpt"))?;
    write_volume(&dir.join("half_a.mrc"), &va)?;
    write_volume(&dir.join("half_b.mrc"), &vb)?;
    splatem::atomic::write_atomic(&dir.join("gsfsc.txt"), |w| curve.write_text(w))?;
    splatem::atomic::write_atomic(&dir.join("fsc_gt.txt"), |w| gt_curve.write_text(w))?;
    Ok(RoundTrip { gsfsc: gsfsc_res, gt_res, seconds })
}

const ARTIFACTS: [&str; 6] = ["half_a.ckpt", "half_b.ckpt", "half_a.mrc", "half_b.mrc", "gsfsc.txt", "fsc_gt.txt"];

fn round_trip_resolution(dir: &Path) -> splatem::Result<Verdict> {
    let r = round_trip(2000, 30, Ablation::Full, dir)?;
    Ok(verdict(
        r.gsfsc <= 6.0 && r.gt_res <= 7.5 && r.seconds < 1800.0,
        format!(
            "GSFSC@0.143 {:.2} A (limit 6.0), FSC vs truth@0.5 {:.2} A (limit 7.5), {:.0} s on {} threads (limit 1800 s)",
            r.gsfsc,
            r.gt_res,
            r.seconds,
            rayon::current_num_threads()
        ),
    ))
}

fn ablations_degrade_resolution() -> splatem::Result<Verdict> {
    let t = Instant::now();
    let mut res = Vec::new();
    for ablation in [Ablation::Full, Ablation::NoRotation, Ablation::IsotropicScale, Ablation::Both] {
        let dir = tempfile::tempdir()?;
        res.push(round_trip(1000, 15, ablation, dir.path())?.gsfsc);
    }
    let [full, no_rot, iso, both] = [res[0], res[1], res[2], res[3]];
    let le = |a: f64, b: f64| a <= 1.05 * b;
    let ordered = le(full, no_rot) && le(no_rot, both) && le(full, iso) && le(iso, both);
    let secs = t.elapsed().as_secs_f64();
    Ok(verdict(
        ordered && secs < 2700.0,
        format!(
            "full {full:.2} A, no_rotation {no_rot:.2} A, isotropic_scale {iso:.2} A, both {both:.2} A (5% slack per tier), {secs:.0} s (limit 2700 s)"
        ),
    ))
}

fn metrics_are_self_consistent() -> splatem::Result<Verdict> {
    let t = Instant::now();
    let grid = GridSpec::new(64, 1.5)?;
    let v = voxelize(&ribo_toy(), &grid, GROUND_TRUTH_CUTOFF)?;
    let mut failures = Vec::new();

    let self_curve = fsc_curve(&v, &v)?;
    let self_dev = self_curve.fsc.iter().map(|c| (c - 1.0).abs()).fold(0.0, f64::max);
    if self_dev > 1e-9 {
        failures.push(format!("fsc(V,V) off by {self_dev:.1e}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let peak = v.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let noisy = |rng: &mut ChaCha8Rng| {
        let mut w = v.clone();
        w.data.iter_mut().for_each(|x| *x += 0.3 * peak * rng.random_range(-1.0..1.0));
        w
    };
    let (a, b) = (noisy(&mut rng), noisy(&mut rng));
    let base = fsc_curve(&a, &b)?;
    let scaled = {
        let mut s = b.clone();
        s.data.iter_mut().for_each(|x| *x *= 3.7);
        fsc_curve(&a, &s)?
    };
    let negated = {
        let mut s = b.clone();
        s.data.iter_mut().for_each(|x| *x = -*x);
        fsc_curve(&a, &s)?
    };
    let scale_dev = base.fsc.iter().zip(&scaled.fsc).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let neg_dev = base.fsc.iter().zip(&negated.fsc).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max);
    if scale_dev > 1e-9 {
        failures.push(format!("scaling changed fsc by {scale_dev:.1e}"));
    }
    if neg_dev > 1e-9 {
        failures.push(format!("negation is not antisymmetric ({neg_dev:.1e})"));
    }

    let thresholds: Vec<f64> = (1..20).map(|i| i as f64 * 0.05).collect();
    let res: Vec<f64> = thresholds.iter().map(|th| resolution_at_threshold(&base, *th)).collect();
    if res.windows(2).any(|w| w[1] < w[0]) {
        failures.push(format!("resolution not monotone in threshold: {res:?}"));
    }

    let fslc = fslc_map(&v, &v, 7, 12)?;
    if !(fslc.std < 1e-6) {
        failures.push(format!("fslc(V,V) std {:.1e}", fslc.std));
    }

    let local = local_resolution(&v, &v, 16, 8, GOLD_STANDARD_THRESHOLD)?;
    let nyquist = 2.0 * grid.voxel_size;
    let resolved: Vec<f64> = local.resolved().collect();
    if resolved.is_empty() || resolved.iter().any(|r| (r - nyquist).abs() > 1e-9) {
        failures.push(format!("local resolution of identical halves not Nyquist ({} resolved)", resolved.len()));
    }

    let secs = t.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 60.0;
    let detail = if failures.is_empty() {
        format!(
            "fsc(V,V) dev {self_dev:.1e}, scale dev {scale_dev:.1e}, negation dev {neg_dev:.1e}, fslc std {:.1e}, {} local voxels at Nyquist, {secs:.1} s (limit 60 s)",
            fslc.std,
            resolved.len()
        )
    } else {
        failures.join("; ")
    };
    Ok(verdict(pass, detail))
}

fn memory_contract() -> splatem::Result<Verdict> {
    let m = 50_000;
    let px = 1.5;
    // Kernels fill the same physical cube at both box sizes.
    let extent = 0.7 * 128.0 * px;
    let mut train = Vec::new();
    let mut dense = Vec::new();
    for d in [128usize, 256] {
        let data = tiny_dataset(d, px, 3)?;
        train.push(training_step_memory(&data, m, extent, 3)?);
        dense.push(dense_oracle_memory(d, px, 3)?);
    }
    let volume_bytes = 128usize.pow(3) * std::mem::size_of::<f32>();
    let no_volume = train[0].largest < volume_bytes;
    let train_ratio = train[1].peak as f64 / train[0].peak as f64;
    let dense_ratio = dense[1].peak as f64 / dense[0].peak as f64;
    Ok(verdict(
        no_volume && train_ratio <= 1.3 && dense_ratio >= 7.0,
        format!(
            "d=128 M={m}: largest allocation {} B (d^3 f32 volume is {volume_bytes} B), training peak {} -> {} B (x{train_ratio:.2}, limit 1.3), dense peak {} -> {} B (x{dense_ratio:.2}, need >= 7)",
            train[0].largest, train[0].peak, train[1].peak, dense[0].peak, dense[1].peak
        ),
    ))
}

fn splatting_outpaces_dense() -> splatem::Result<Verdict> {
    let r = splat_vs_dense(128, 3, 7)?;
    Ok(verdict(
        r.speedup() >= 5.0,
        format!(
            "d=128: splat forward+backward {:.3} s, dense forward {:.3} s, speedup x{:.1} (need >= 5)",
            r.splat_seconds,
            r.dense_seconds,
            r.speedup()
        ),
    ))
}

fn runs_are_bitwise_identical(first: &Path) -> splatem::Result<Verdict> {
    if !first.join(ARTIFACTS[0]).exists() {
        round_trip(2000, 30, Ablation::Full, first)?;
    }
    let second = tempfile::tempdir()?;
    // A different pool size must not change a single bit.
    let threads = rayon::current_num_threads() + 2;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| splatem::Error::InvalidArgument(e.to_string()))?;
    pool.install(|| round_trip(2000, 30, Ablation::Full, second.path()))?;
    let mut differing = Vec::new();
    for name in ARTIFACTS {
        let a = std::fs::read(first.join(name))?;
        let b = std::fs::read(second.path().join(name))?;
        if a != b {
            differing.push(name);
        }
    }
    Ok(verdict(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts identical across runs ({} vs {threads} threads)", ARTIFACTS.len(), rayon::current_num_threads())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    ))
}

fn main() -> ExitCode {
    // Optional arguments select criteria by number; the default runs all.
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: usize| selected.is_empty() || selected.contains(&id);
    let round_trip_dir = tempfile::tempdir().expect("temp dir");
    let criteria: [(&str, Box<dyn FnOnce() -> splatem::Result<Verdict> + '_>); 8] = [
        ("projection vs dense oracle", Box::new(projection_matches_dense_oracle)),
        ("gradient vs finite differences", Box::new(gradients_match_finite_differences)),
        ("synthetic round trip", Box::new(|| round_trip_resolution(round_trip_dir.path()))),
        ("ablation ordering", Box::new(ablations_degrade_resolution)),
        ("metric self-consistency", Box::new(metrics_are_self_consistent)),
        ("memory contract", Box::new(memory_contract)),
        ("throughput direction", Box::new(splatting_outpaces_dense)),
        ("determinism", Box::new(|| runs_are_bitwise_identical(round_trip_dir.path()))),
    ];
    let mut results = Vec::new();
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        if wanted(i + 1) {
            results.push(run(i + 1, name, check));
        }
    }
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
