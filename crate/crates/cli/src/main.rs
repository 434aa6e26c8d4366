//! `splatem`: simulate, reconstruct, voxelize, evaluate, gradcheck, bench.
//!
//! Exit codes: 0 success, 2 argument error, 3 data or format error,
//! 4 numerical failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use splatem::alloc_track::CountingAlloc;
use splatem::atomic::write_atomic;
use splatem::dataio::{self, load_dataset, read_volume, simulate_dataset, write_dataset, write_volume, SimConfig};
use splatem::gauss_model::{voxelize, GaussianSet};
use splatem::gradients::{finite_diff_check, random_problem};
use splatem::grid::{GridSpec, ImageSpec};
use splatem::metrics::{fslc_map, gsfsc, local_resolution, GOLD_STANDARD_THRESHOLD};
use splatem::phantom;
use splatem::projector::ProjectorConfig;
use splatem::trainer::{load_checkpoint, train_halves, write_loss_history, Ablation, TrainConfig, Trainer};
use splatem::{bench, Error};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

const EXIT_ARGUMENT: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "splatem", version, about = "Gaussian-splatting reconstruction for single-particle cryo-EM")]
struct Cli {
    /// Master seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Request bitwise-reproducible output. Reductions are always ordered, so
    /// this is recorded in the sidecar but changes no arithmetic.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a particle dataset from a phantom.
    Simulate(SimulateArgs),
    /// Reconstruct a Gaussian model from a particle dataset.
    Reconstruct(ReconstructArgs),
    /// Sample a trained model on a voxel grid.
    Voxelize(VoxelizeArgs),
    /// Compare two maps.
    Evaluate(EvaluateArgs),
    /// Compare analytic and finite-difference gradients on a random problem.
    Gradcheck(GradcheckArgs),
    /// Measure speed and memory.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// A checkpoint path, or the name of a built-in phantom (ribo-toy).
    #[arg(long, default_value = "ribo-toy")]
    phantom: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 1.5)]
    pixel_size: f64,
    #[arg(long, default_value_t = 0.5)]
    snr: f64,
    #[arg(long, default_value_t = 2.0)]
    max_shift_px: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    stack: PathBuf,
    #[arg(long)]
    meta: PathBuf,
    /// Checkpoint path; with --halves, `.half_a` / `.half_b` are inserted before the extension.
    #[arg(long)]
    out: PathBuf,
    /// Train two independent half-set models for gold-standard FSC.
    #[arg(long)]
    halves: bool,
    /// Training config file (`key = value`); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from a checkpoint (single-model runs only).
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, value_enum)]
    ablation: Option<AblationArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    m_gaussians: Option<usize>,
    #[arg(long)]
    lr_center: Option<f64>,
    #[arg(long)]
    lr_log_scales: Option<f64>,
    #[arg(long)]
    lr_quat: Option<f64>,
    #[arg(long)]
    lr_density: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Mahalanobis cutoff when writing the reconstructed volume(s).
    #[arg(long, default_value_t = 6.0)]
    volume_cutoff: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AblationArg {
    Full,
    NoRotation,
    IsotropicScale,
    Both,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Full => Ablation::Full,
            AblationArg::NoRotation => Ablation::NoRotation,
            AblationArg::IsotropicScale => Ablation::IsotropicScale,
            AblationArg::Both => Ablation::Both,
        }
    }
}

#[derive(Args, Debug)]
struct VoxelizeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    pixel_size: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = dataio::simulate::GROUND_TRUTH_CUTOFF)]
    cutoff: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum EvalMode {
    Gsfsc,
    Local,
    Fslc,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long, value_enum)]
    mode: EvalMode,
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = GOLD_STANDARD_THRESHOLD)]
    threshold: f64,
    /// Local mode: cube edge in voxels.
    #[arg(long, default_value_t = 16)]
    window: usize,
    /// Local mode: lattice spacing in voxels.
    #[arg(long, default_value_t = 8)]
    stride: usize,
    /// FSLC mode: elevation samples over [0, 180] degrees.
    #[arg(long, default_value_t = 7)]
    n_elev: usize,
    /// FSLC mode: azimuth samples over [0, 360) degrees.
    #[arg(long, default_value_t = 12)]
    n_azim: usize,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    kernels: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pixel_size: f64,
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum BenchMode {
    SplatVsDense,
    Scaling,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_enum)]
    mode: BenchMode,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Kernels in the training-memory probe of scaling mode.
    #[arg(long, default_value_t = 50_000)]
    m_gaussians: usize,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) | Error::Capacity { .. } => EXIT_ARGUMENT,
            Error::Format(_) | Error::Io(_) | Error::Dimension(_) => EXIT_DATA,
            Error::Numerical(_) | Error::Degenerate(_) => EXIT_NUMERICAL,
        };
        Failure { code, message: e.to_string() }
    }
}

fn argument(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_ARGUMENT, message: message.into() }
}

type CliResult<T = ()> = Result<T, Failure>;

/// `key = value` lines recording everything that determined an output.
struct Sidecar {
    text: String,
}

impl Sidecar {
    fn new(cli: &Cli, command: &str) -> Self {
        let mut s = Sidecar { text: format!("# splatem {command} v1\n") };
        s.put("version", env!("CARGO_PKG_VERSION"));
        s.put("seed", cli.seed);
        s.put("deterministic", cli.deterministic);
        s.put("threads", cli.threads.map_or("auto".to_string(), |t| t.to_string()));
        s
    }

    fn put(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.text, "{key} = {value}");
    }

    fn write(&self, path: &Path) -> CliResult {
        write_atomic(path, |w| {
            w.write_all(self.text.as_bytes())?;
            Ok(())
        })?;
        Ok(())
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".config");
    PathBuf::from(s)
}

/// `model.ckpt` + `half_a` -> `model.half_a.ckpt`.
fn with_tag(path: &Path, tag: &str, ext: Option<&str>) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = ext
        .map(str::to_string)
        .or_else(|| path.extension().map(|e| e.to_string_lossy().into_owned()));
    let name = match (tag.is_empty(), ext) {
        (true, Some(e)) => format!("{stem}.{e}"),
        (true, None) => stem,
        (false, Some(e)) => format!("{stem}.{tag}.{e}"),
        (false, None) => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}

fn ensure_parent(path: &Path) -> CliResult {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !dir.is_dir() {
            return Err(Failure { code: EXIT_DATA, message: format!("output directory {} does not exist", dir.display()) });
        }
    }
    Ok(())
}

fn check_grid(dim: usize, pixel_size: f64) -> CliResult {
    if dim < 2 || !dim.is_multiple_of(2) {
        return Err(argument(format!("--dim must be an even number >= 2, got {dim}")));
    }
    if !(pixel_size > 0.0 && pixel_size.is_finite()) {
        return Err(argument(format!("--pixel-size must be positive, got {pixel_size}")));
    }
    Ok(())
}

fn load_phantom(spec: &str) -> CliResult<GaussianSet> {
    if phantom::BUILTIN_NAMES.contains(&spec) {
        return Ok(phantom::builtin(spec)?);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(argument(format!(
            "--phantom {spec:?} is neither a file nor a built-in phantom ({})",
            phantom::BUILTIN_NAMES.join(", ")
        )));
    }
    Ok(GaussianSet::load(path)?)
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> CliResult {
    if a.n == 0 {
        return Err(argument("--n must be at least 1"));
    }
    check_grid(a.dim, a.pixel_size)?;
    if !(a.snr > 0.0) {
        return Err(argument(format!("--snr must be positive, got {}", a.snr)));
    }
    if !(a.max_shift_px >= 0.0) {
        return Err(argument("--max-shift-px must be non-negative"));
    }
    let phantom = load_phantom(&a.phantom)?;
    let spec = ImageSpec::new(a.dim, a.pixel_size)?;
    let cfg = SimConfig { max_shift_px: a.max_shift_px, ..SimConfig::new(a.n, spec, a.snr, cli.seed) };
    if !a.out_dir.is_dir() {
        std::fs::create_dir_all(&a.out_dir)
            .map_err(|e| Failure { code: EXIT_DATA, message: format!("cannot create {}: {e}", a.out_dir.display()) })?;
    }
    let (data, gt) = simulate_dataset(&phantom, &cfg)?;
    write_dataset(&a.out_dir, &data, Some(&gt))?;

    let mut side = Sidecar::new(cli, "simulate");
    side.put("phantom", &a.phantom);
    side.put("n", a.n);
    side.put("dim", a.dim);
    side.put("pixel_size", a.pixel_size);
    side.put("snr", a.snr);
    side.put("max_shift_px", a.max_shift_px);
    let r = cfg.ctf_ranges;
    side.put("defocus_min", r.defocus.0);
    side.put("defocus_max", r.defocus.1);
    side.put("astigmatism", r.astigmatism);
    side.put("voltage", r.voltage);
    side.put("cs", r.cs);
    side.put("amplitude_contrast", r.amplitude_contrast);
    side.put("ground_truth_cutoff", dataio::simulate::GROUND_TRUTH_CUTOFF);
    side.write(&a.out_dir.join("simulate.config"))?;
    println!(
        "wrote {} particles to {}",
        a.n,
        a.out_dir.display()
    );
    Ok(())
}

fn resolve_train_config(cli: &Cli, a: &ReconstructArgs) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig { seed: cli.seed, ..TrainConfig::default() };
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure { code: EXIT_DATA, message: format!("cannot read {}: {e}", path.display()) })?;
        cfg.apply_text(&text)?;
        // The global flag wins over the file.
        cfg.seed = cli.seed;
    }
    if let Some(v) = a.ablation {
        cfg.ablation = v.into();
    }
    macro_rules! take {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { cfg.$field = v; } )* };
    }
    take!(epochs, batch_size, m_gaussians, lr_center, lr_log_scales, lr_quat, lr_density, tau, checkpoint_every, grad_clip);
    cfg.validate()?;
    Ok(cfg)
}

fn reconstruct(cli: &Cli, a: &ReconstructArgs) -> CliResult {
    let cfg = resolve_train_config(cli, a)?;
    if a.halves && a.resume.is_some() {
        return Err(argument("--resume is only supported for single-model runs"));
    }
    ensure_parent(&a.out)?;
    let data = load_dataset(&a.stack, &a.meta)?;
    let grid = data.spec.grid_spec()?;

    let mut side = Sidecar::new(cli, "reconstruct");
    side.put("stack", a.stack.display());
    side.put("meta", a.meta.display());
    side.put("halves", a.halves);
    side.put("volume_cutoff", a.volume_cutoff);
    side.put("images", data.len());
    side.text.push_str(&cfg.to_text());

    let write_history = |path: &Path, history: &[f64]| -> CliResult {
        write_atomic(path, |w| write_loss_history(history, w))?;
        Ok(())
    };

    if a.halves {
        let h = train_halves(&data, &cfg)?;
        for (tag, out) in [("half_a", &h.a), ("half_b", &h.b)] {
            splatem::trainer::save_checkpoint(&out.state, &with_tag(&a.out, tag, None))?;
            write_volume(&with_tag(&a.out, tag, Some("mrc")), &voxelize(&out.set, &grid, a.volume_cutoff)?)?;
            write_history(&with_tag(&a.out, &format!("{tag}.loss"), Some("txt")), &out.loss_history)?;
            println!(
                "{tag}: {} images, final loss {:.6e}",
                if tag == "half_a" { h.split.0.len() } else { h.split.1.len() },
                out.loss_history.last().copied().unwrap_or(f64::NAN)
            );
        }
    } else {
        let trainer = Trainer::new(&data, cfg.clone())?;
        let mut state = match &a.resume {
            Some(p) => {
                side.put("resume", p.display());
                load_checkpoint(p)?
            }
            None => trainer.initial_state()?,
        };
        let result = trainer.run(&mut state, Some(&a.out), |epoch, loss| {
            eprintln!("epoch {epoch}: loss {loss:.6e}");
        });
        if let Err(e) = result {
            // Keep the last good state on disk for inspection or resumption.
            splatem::trainer::save_checkpoint(&state, &a.out)?;
            return Err(e.into());
        }
        write_volume(&with_tag(&a.out, "", Some("mrc")), &voxelize(&state.set, &grid, a.volume_cutoff)?)?;
        write_history(&with_tag(&a.out, "loss", Some("txt")), &state.loss_history)?;
        println!("final loss {:.6e}", state.loss_history.last().copied().unwrap_or(f64::NAN));
    }
    side.write(&sidecar_path(&a.out))?;
    Ok(())
}

fn voxelize_cmd(cli: &Cli, a: &VoxelizeArgs) -> CliResult {
    check_grid(a.dim, a.pixel_size)?;
    if !(a.cutoff > 0.0) {
        return Err(argument("--cutoff must be positive"));
    }
    ensure_parent(&a.out)?;
    let set = GaussianSet::load(&a.ckpt)?;
    let vol = voxelize(&set, &GridSpec::new(a.dim, a.pixel_size)?, a.cutoff)?;
    write_volume(&a.out, &vol)?;
    let mut side = Sidecar::new(cli, "voxelize");
    side.put("ckpt", a.ckpt.display());
    side.put("dim", a.dim);
    side.put("pixel_size", a.pixel_size);
    side.put("cutoff", a.cutoff);
    side.write(&sidecar_path(&a.out))
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> CliResult {
    ensure_parent(&a.out)?;
    let va = read_volume(&a.a)?;
    let vb = read_volume(&a.b)?;
    let mut side = Sidecar::new(cli, "evaluate");
    side.put("mode", format!("{:?}", a.mode).to_lowercase());
    side.put("a", a.a.display());
    side.put("b", a.b.display());
    match a.mode {
        EvalMode::Gsfsc => {
            let (curve, _) = gsfsc(&va, &vb)?;
            let res = splatem::metrics::resolution_at_threshold(&curve, a.threshold);
            write_atomic(&a.out, |w| {
                writeln!(w, "# threshold = {}", a.threshold)?;
                writeln!(w, "# resolution_A = {res:.6}")?;
                curve.write_text(w)
            })?;
            side.put("threshold", a.threshold);
            println!("resolution at {}: {res:.3} Å", a.threshold);
        }
        EvalMode::Local => {
            let map = local_resolution(&va, &vb, a.window, a.stride, a.threshold)?;
            write_volume(&a.out, &map.values)?;
            side.put("threshold", a.threshold);
            side.put("window", a.window);
            side.put("stride", a.stride);
            match map.mean_resolved() {
                Some(m) => println!("mean local resolution {m:.3} Å"),
                None => println!("no voxel could be resolved"),
            }
        }
        EvalMode::Fslc => {
            let map = fslc_map(&va, &vb, a.n_elev, a.n_azim)?;
            write_atomic(&a.out, |w| map.write_text(w))?;
            side.put("n_elev", a.n_elev);
            side.put("n_azim", a.n_azim);
            println!("FSLC {}", map.summary());
        }
    }
    side.write(&sidecar_path(&a.out))
}

fn gradcheck(cli: &Cli, a: &GradcheckArgs) -> CliResult {
    check_grid(a.dim, a.pixel_size)?;
    if a.kernels == 0 || !(a.step > 0.0) || !(a.tolerance > 0.0) {
        return Err(argument("--kernels, --step and --tolerance must be positive"));
    }
    let problem = random_problem(a.kernels, a.dim, a.pixel_size, cli.seed)?;
    let report = finite_diff_check(&problem.set, &problem.pose, &problem.ctf, &problem.observed, &ProjectorConfig::exact(), a.step)?;
    print!("{report}");
    let verdict = if report.passes(a.tolerance) { "pass" } else { "fail" };
    println!("worst = {:.3e} (tolerance {:.1e}): {verdict}", report.worst(), a.tolerance);
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        write_atomic(out, |w| {
            write!(w, "{report}")?;
            writeln!(w, "worst = {:.6e}", report.worst())?;
            Ok(())
        })?;
        let mut side = Sidecar::new(cli, "gradcheck");
        side.put("kernels", a.kernels);
        side.put("dim", a.dim);
        side.put("pixel_size", a.pixel_size);
        side.put("step", a.step);
        side.put("tolerance", a.tolerance);
        side.write(&sidecar_path(out))?;
    }
    if report.passes(a.tolerance) {
        Ok(())
    } else {
        Err(Failure { code: EXIT_NUMERICAL, message: format!("gradient check failed: worst relative error {:.3e}", report.worst()) })
    }
}

/// Report format: a `# splatem bench v1` header line, then `key = value`
/// lines. Keys are documented in the README.
fn bench_cmd(cli: &Cli, a: &BenchArgs) -> CliResult {
    check_grid(a.dim, 1.0)?;
    if a.dim < 16 {
        return Err(argument("--dim must be at least 16 for benchmarks"));
    }
    ensure_parent(&a.out)?;
    let mut report = String::from("# splatem bench v1\n");
    let mut put = |k: &str, v: String| {
        let _ = writeln!(report, "{k} = {v}");
    };
    put("mode", format!("{:?}", a.mode).to_lowercase().replace("splatvsdense", "splat_vs_dense"));
    put("threads", rayon::current_num_threads().to_string());
    match a.mode {
        BenchMode::SplatVsDense => {
            let r = bench::splat_vs_dense(a.dim, a.reps, cli.seed)?;
            put("dim", r.dim.to_string());
            put("kernels", r.kernels.to_string());
            put("z_samples", r.z_samples.to_string());
            put("reps", r.reps.to_string());
            put("splat_fwd_bwd_seconds", format!("{:.6e}", r.splat_seconds));
            put("dense_fwd_seconds", format!("{:.6e}", r.dense_seconds));
            put("splat_images_per_second", format!("{:.3}", 1.0 / r.splat_seconds));
            put("dense_images_per_second", format!("{:.3}", 1.0 / r.dense_seconds));
            put("speedup", format!("{:.3}", r.speedup()));
            put("max_rel_diff", format!("{:.3e}", r.max_rel_diff));
            let px = bench::PHANTOM_BOX / a.dim as f64;
            let data = bench::tiny_dataset(a.dim, px, cli.seed)?;
            let train = bench::training_step_memory(&data, 2000, 60.0, cli.seed)?;
            let dense = bench::dense_oracle_memory(a.dim, px, cli.seed)?;
            put("splat_train_step_peak_bytes", train.peak.to_string());
            put("dense_fwd_peak_bytes", dense.peak.to_string());
        }
        BenchMode::Scaling => {
            let d = a.dim;
            let points: Vec<(usize, usize)> = [500, 1000, 2000, 4000, 8000]
                .iter()
                .map(|m| (*m, d / 2))
                .chain([d / 4, d / 2, d].iter().map(|dd| (2000, *dd)))
                .collect();
            for p in bench::scaling(&points, a.reps, cli.seed)? {
                put(&format!("seconds_m{}_d{}", p.kernels, p.dim), format!("{:.6e}", p.seconds));
            }
            let px = 1.5;
            let mut peaks = Vec::new();
            for dd in [d, 2 * d] {
                let data = bench::tiny_dataset(dd, px, cli.seed)?;
                let s = bench::training_step_memory(&data, a.m_gaussians, 0.7 * d as f64 * px, cli.seed)?;
                let dense = bench::dense_oracle_memory(dd, px, cli.seed)?;
                put(&format!("train_peak_bytes_d{dd}"), s.peak.to_string());
                put(&format!("train_largest_alloc_bytes_d{dd}"), s.largest.to_string());
                put(&format!("dense_peak_bytes_d{dd}"), dense.peak.to_string());
                peaks.push((s.peak as f64, dense.peak as f64));
            }
            put("m_gaussians", a.m_gaussians.to_string());
            put("train_peak_ratio", format!("{:.4}", peaks[1].0 / peaks[0].0));
            put("dense_peak_ratio", format!("{:.4}", peaks[1].1 / peaks[0].1));
        }
    }
    write_atomic(&a.out, |w| {
        w.write_all(report.as_bytes())?;
        Ok(())
    })?;
    print!("{report}");
    let mut side = Sidecar::new(cli, "bench");
    side.put("mode", format!("{:?}", a.mode));
    side.put("dim", a.dim);
    side.put("reps", a.reps);
    side.put("m_gaussians", a.m_gaussians);
    side.write(&sidecar_path(&a.out))
}

fn run(cli: &Cli) -> CliResult {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(argument("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| argument(format!("cannot size the thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Reconstruct(a) => reconstruct(cli, a),
        Command::Voxelize(a) => voxelize_cmd(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Gradcheck(a) => gradcheck(cli, a),
        Command::Bench(a) => bench_cmd(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ARGUMENT } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
