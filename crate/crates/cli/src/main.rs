mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use config::{RunConfig, FAST_SUBSAMPLE};
use segcrf::dense::{dense_message, BilateralKernel, DENSE_MAX_PIXELS};
use segcrf::guided::{filter_fast, GuidedFilterConfig, GuidedFilterPlan};
use segcrf::io;
use segcrf::training::{format_log, train_pipeline_with, Arch, Model, SyntheticConfig};
use segcrf::verify::{self, CheckOptions, Component};
use segcrf::{Error, ScoreMap, Tensor2D};

#[derive(Parser)]
#[command(name = "segcrf", version, about = "Coarse-to-fine CRF refinement of segmentation scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Refine a unary score map with a trained bundle
    Infer(InferArgs),
    /// Train one arch setting on a manifest of samples
    Train(TrainArgs),
    /// Time guided-filter message passing
    Bench(BenchArgs),
    /// Run the oracle and gradient checks
    Check(CheckArgs),
    /// Write a synthetic dataset and its manifest
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set radius=8
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> segcrf::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    unary: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Parameter bundle; without one the unaries pass through unchanged
    #[arg(long)]
    params: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Refined score map
    #[arg(long)]
    out: Option<PathBuf>,
    /// Argmax label map (PGM)
    #[arg(long)]
    out_label: Option<PathBuf>,
    /// Use the subsampled filter
    #[arg(long)]
    fast: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Samples for the per-epoch metrics; defaults to the training set
    #[arg(long)]
    eval_manifest: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    /// unary, A, B or C
    #[arg(long)]
    arch: String,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV log
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// HxW
    #[arg(long, default_value = "512x512")]
    size: String,
    /// Comma-separated radii
    #[arg(long, default_value = "5,50")]
    radius: String,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 4)]
    labels: usize,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Also time the subsampled filter
    #[arg(long)]
    fast: bool,
    /// Also time a brute-force dense pairwise pass (at most 64x64)
    #[arg(long)]
    compare_dense: bool,
}

#[derive(Args)]
struct CheckArgs {
    /// all, guided, guidance, context or loss
    #[arg(long, default_value = "all")]
    component: String,
    #[arg(long, hide = true, default_value_t = 0.0)]
    perturb_backward: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 250)]
    count: usize,
    /// HxW
    #[arg(long, default_value = "64x64")]
    size: String,
    #[arg(long, default_value_t = 4)]
    labels: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 2)]
    jitter: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

enum Failure {
    Verification,
    Input(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Infer(a) => infer(a),
        Command::Train(a) => train(a),
        Command::Bench(a) => bench(a),
        Command::Check(a) => check(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(1),
        Err(Failure::Input(e)) => {
            match &e {
                Error::Format(f) => eprintln!("error [{}]: {e}", f.code()),
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(2)
        }
    }
}

fn parse_size(s: &str) -> segcrf::Result<(usize, usize)> {
    let bad = || Error::InvalidArgument(format!("size {s:?} is not HxW"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.parse().map_err(|_| bad())?;
    let w: usize = w.parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

fn infer(a: InferArgs) -> Result<(), Failure> {
    if a.out.is_none() && a.out_label.is_none() {
        return Err(Error::InvalidArgument("nothing to write: give --out and/or --out-label".into()).into());
    }
    let cfg = a.config.load()?;
    let unary = io::load_score_map(&a.unary)?;
    let image = io::load_image(&a.image)?;
    let (uh, uw) = (unary.height(), unary.width());
    let (ih, iw) = (image.height(), image.width());
    if uh > ih || uw > iw {
        return Err(Error::InvalidArgument(format!("unary {uh}x{uw} is larger than image {ih}x{iw}")).into());
    }
    let labels = unary.channels();
    let defaults = cfg.model(labels);
    let mut model = match &a.params {
        Some(p) => io::model_from_bundle(&io::ParamBundle::load(p)?, labels, &defaults)?,
        None => Model::new(Arch::Unary, &defaults, 0)?,
    };
    let g = &mut model.guidance.params;
    if cfg.is_explicit("radius") {
        g.filter.radius = cfg.radius;
    }
    if cfg.is_explicit("epsilon") {
        g.filter.epsilon = cfg.epsilon;
    }
    if cfg.is_explicit("lambda") {
        g.lambda = cfg.lambda;
    }
    if cfg.is_explicit("iters") {
        g.iters = cfg.iters;
    }
    g.filter.subsample = match (a.fast, cfg.is_explicit("subsample")) {
        (false, _) => 1,
        (true, true) => cfg.subsample,
        (true, false) => FAST_SUBSAMPLE,
    };
    g.validate()?;
    if cfg.is_explicit("context.k") {
        model.context.iters = cfg.context_k;
    }

    let refined = model.infer(&unary, &image)?;
    if let Some(p) = &a.out {
        io::save_score_map(p, &refined)?;
    }
    if let Some(p) = &a.out_label {
        io::save_label_map(p, &refined.argmin_labels())?;
    }
    println!(
        "{} {}x{} -> {}x{}, {} labels{}",
        model.arch,
        uh,
        uw,
        ih,
        iw,
        labels,
        if a.fast { ", fast" } else { "" }
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let arch: Arch = a.arch.parse()?;
    let cfg = a.config.load()?;
    let samples = io::load_dataset(&a.manifest)?;
    let eval = match &a.eval_manifest {
        Some(p) => io::load_dataset(p)?,
        None => Vec::new(),
    };
    let labels = samples
        .first()
        .map(|s| s.unary.channels())
        .ok_or_else(|| Error::InvalidArgument("manifest lists no samples".into()))?;
    let mc = cfg.model(labels);
    println!("{}", segcrf::training::LOG_HEADER);
    let outcome = train_pipeline_with(&samples, &eval, arch, &mc, &cfg.train, |row| {
        let csv = format_log(std::slice::from_ref(row));
        println!("{}", csv.lines().last().unwrap_or_default());
    })?;
    io::model_to_bundle(&outcome.model)?.save(&a.out)?;
    if let Some(p) = &a.log {
        io::save_log(p, &outcome.log)?;
    }
    Ok(())
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

fn time_reps(reps: usize, mut f: impl FnMut() -> segcrf::Result<()>) -> segcrf::Result<Duration> {
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed());
    }
    Ok(median(times))
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// A smooth guide and random probabilities, fixed for every run.
fn bench_inputs(h: usize, w: usize, labels: usize) -> (Tensor2D, ScoreMap) {
    let guide = Tensor2D::from_fn(h, w, 3, |y, x, c| {
        let t = (y * 7 + x * 3 + c * 11) as f64;
        0.5 + 0.4 * (t * 0.013).sin()
    });
    let phi = ScoreMap::from_fn(h, w, labels, |y, x, c| ((y * 31 + x * 17 + c * 13) % 23) as f64 / 23.0);
    (guide, phi.softmax_neg())
}

fn bench(a: BenchArgs) -> Result<(), Failure> {
    let (h, w) = parse_size(&a.size)?;
    if a.reps == 0 {
        return Err(Error::InvalidArgument("--reps must be >= 1".into()).into());
    }
    if a.labels < 2 {
        return Err(Error::InvalidArgument("--labels must be >= 2".into()).into());
    }
    let radii = a
        .radius
        .split(',')
        .map(|r| {
            r.trim()
                .parse::<usize>()
                .ok()
                .filter(|&r| r >= 1)
                .ok_or_else(|| Error::InvalidArgument(format!("bad radius {r:?}")))
        })
        .collect::<segcrf::Result<Vec<_>>>()?;
    let (guide, q) = bench_inputs(h, w, a.labels);
    println!("guided message pass, {h}x{w}, {} labels, median of {}", a.labels, a.reps);
    let mut exact_ms = Vec::new();
    for &r in &radii {
        let cfg = GuidedFilterConfig::new(r, a.epsilon);
        cfg.validate()?;
        let t = time_reps(a.reps, || {
            let plan = GuidedFilterPlan::new(&guide, &cfg)?;
            plan.filter(&q).map(drop)
        })?;
        exact_ms.push(ms(t));
        print!("radius {r:>4}: exact {:>10.3} ms", ms(t));
        if a.fast {
            let fcfg = cfg.with_subsample(FAST_SUBSAMPLE);
            match fcfg.validate() {
                Ok(()) => {
                    let tf = time_reps(a.reps, || filter_fast(&guide, &q, &fcfg).map(drop))?;
                    print!("  fast(s={FAST_SUBSAMPLE}) {:>10.3} ms  speedup {:.1}x", ms(tf), ms(t) / ms(tf));
                }
                Err(e) => print!("  fast: {e}"),
            }
        }
        println!();
    }
    if exact_ms.len() > 1 {
        let lo = exact_ms.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = exact_ms.iter().cloned().fold(0.0, f64::max);
        println!("max/min across radii: {:.2}", hi / lo);
    }
    if a.compare_dense {
        let side = (DENSE_MAX_PIXELS as f64).sqrt() as usize;
        let (dh, dw) = (h.min(side), w.min(side));
        let (g, q) = bench_inputs(dh, dw, a.labels);
        let r = radii[0].min(dh.min(dw) / 2).max(1);
        let cfg = GuidedFilterConfig::new(r, a.epsilon);
        let tg = time_reps(a.reps, || GuidedFilterPlan::new(&g, &cfg)?.filter(&q).map(drop))?;
        let td = time_reps(a.reps, || dense_message(&g, &q, &BilateralKernel::default()).map(drop))?;
        println!(
            "dense comparison {dh}x{dw}: guided(r={r}) {:.3} ms, dense {:.3} ms, ratio {:.1}x",
            ms(tg),
            ms(td),
            ms(td) / ms(tg)
        );
    }
    Ok(())
}

fn check(a: CheckArgs) -> Result<(), Failure> {
    let component: Component = a.component.parse()?;
    let results = verify::run(component, CheckOptions { perturb: a.perturb_backward })?;
    println!("{:<34} {:>11} {:>9}", "check", "max error", "tol");
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        println!("{failed} of {} checks failed", results.len());
        return Err(Failure::Verification);
    }
    println!("all {} checks passed", results.len());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let (height, width) = parse_size(&a.size)?;
    let data = segcrf::training::make_synthetic_dataset(
        a.count,
        &SyntheticConfig {
            height,
            width,
            labels: a.labels,
            sigma: a.sigma,
            jitter: a.jitter,
            seed: a.seed,
        },
    )?;
    let samples: Vec<_> = data.into_iter().map(Into::into).collect();
    let manifest = io::write_dataset(&a.out, &samples)?;
    println!("wrote {} samples, manifest {}", samples.len(), manifest.display());
    Ok(())
}
