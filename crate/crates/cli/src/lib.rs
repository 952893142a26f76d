//! Command-line front end: training, evaluation, fusion, benchmarking and
//! challenge scoring for the zoo models.

pub mod config;
pub mod report;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nanosr::data::{bicubic_upscale, make_fixtures, DatasetIndex, FixtureSpec, FrameStore, Split};
use nanosr::eval::{
    challenge_score, count_macs, measure_runtime, psnr, published_records, ssim, MetricsRecord, ScoreRecord,
};
use nanosr::reparam::fuse_model;
use nanosr::train::{run_recipe, validate};
use nanosr::weights::{encoded_len, load_weights, save_weights};
use nanosr::zoo::{arch_card, build_model, infer_dims, render_cards, run_sequence, ArchConfig, ModelGraph};

pub use config::RunConfig;
pub use report::write_report;

#[derive(Parser, Debug)]
#[command(name = "nanosr", version, about = "Power-efficient video super-resolution zoo")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model through its recipe.
    Train(TrainArgs),
    /// PSNR/SSIM of a model on a dataset split, next to bicubic.
    Eval(EvalArgs),
    /// Fold multi-branch blocks into plain convolutions.
    Fuse(FuseArgs),
    /// Host runtime, MACs and size at the challenge resolution.
    Bench(BenchArgs),
    /// Challenge score from PSNR, power and runtime.
    Score(ScoreArgs),
    /// Write a seeded synthetic dataset.
    MakeFixtures(FixtureArgs),
    /// Architecture card and layer table.
    Describe(DescribeArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Desk-scale the stages regardless of the config.
    #[arg(long)]
    pub desk: bool,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    #[arg(long)]
    pub arch: String,
    /// Weight file; seeded initial weights when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// The weights belong to the fused graph.
    #[arg(long)]
    pub fused: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Dataset root.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    pub split: SplitArg,
    /// Accept sequence counts other than REDS.
    #[arg(long)]
    pub desk: bool,
    #[arg(long)]
    pub max_frames: Option<usize>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    #[arg(long)]
    pub arch: String,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 180)]
    pub height: usize,
    #[arg(long, default_value_t = 320)]
    pub width: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    /// PSNR to score with (e.g. from `eval`).
    #[arg(long, requires = "power")]
    pub psnr: Option<f64>,
    /// Measured power in W@30FPS.
    #[arg(long)]
    pub power: Option<f64>,
    #[arg(long)]
    pub no_runtime_gate: bool,
    /// Also write a one-row leaderboard here.
    #[arg(long, requires = "psnr")]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long, required_unless_present = "published")]
    pub psnr: Option<f64>,
    #[arg(long, required_unless_present = "published")]
    pub power: Option<f64>,
    #[arg(long, required_unless_present = "published")]
    pub runtime: Option<f64>,
    #[arg(long)]
    pub no_runtime_gate: bool,
    /// Rescore the published leaderboard instead.
    #[arg(long, conflicts_with_all = ["psnr", "power", "runtime"])]
    pub published: bool,
    /// Write the leaderboard as text plus CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2022)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub train: usize,
    #[arg(long, default_value_t = 2)]
    pub val: usize,
    #[arg(long, default_value_t = 2)]
    pub test: usize,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    /// Square HR frame side.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
}

#[derive(Args, Debug)]
pub struct DescribeArgs {
    #[arg(required_unless_present = "cards")]
    pub arch: Option<String>,
    /// Describe the fused graph.
    #[arg(long)]
    pub fused: bool,
    /// Print every architecture card as Markdown.
    #[arg(long, conflicts_with = "arch")]
    pub cards: bool,
}

/// Caps rayon workers when `NANOSR_THREADS` is set. Later calls are no-ops.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("NANOSR_THREADS") {
        let n: usize = v.parse().with_context(|| format!("NANOSR_THREADS={v}"))?;
        // A second initialisation (tests, repeated runs) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 ok, 1 runtime error, 2 usage error.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match init_threads().and_then(|_| dispatch(cli.command, out)) {
        Ok(()) => 0,
        Err(e) => {
            let line = format!("{e:#}").replace('\n', " ");
            let _ = writeln!(err, "error: {line}");
            1
        }
    }
}

pub fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Fuse(a) => fuse(a, out),
        Command::Bench(a) => bench(a, out),
        Command::Score(a) => score(a, out),
        Command::MakeFixtures(a) => fixtures(a, out),
        Command::Describe(a) => describe(a, out),
    }
}

/// Builds the graph for `arch` (fused when asked) with weights from `path`
/// or seeded initial values.
pub fn load_model(arch: &str, weights: Option<&Path>, fused: bool, seed: u64) -> Result<ModelGraph> {
    let blank = build_model(arch, &ArchConfig::default())?;
    let init = nanosr::zoo::init_weights(&blank, nanosr::zoo::InitScheme::UniformFanIn, seed);
    let g = if fused { fuse_model(&init)? } else { init };
    Ok(match weights {
        Some(p) => load_weights(&g, p)?,
        None => g,
    })
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.desk |= a.desk;
    let stages = cfg.resolved_stages()?;
    let idx = DatasetIndex::scan(&cfg.dataset, cfg.desk)?;
    let store = FrameStore::new(&idx);
    let (g, logs) = run_recipe(&cfg.arch, &cfg.arch_config, &stages, &store, cfg.seed, cfg.init)?;
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    for (i, (s, log)) in stages.iter().zip(&logs).enumerate() {
        let p = cfg.out.join(format!("log-{i}-{}.txt", s.name));
        std::fs::write(&p, log.to_lines()).with_context(|| format!("writing {}", p.display()))?;
        if let Some(last) = log.records.last() {
            writeln!(out, "stage {i} {}: {} steps, final loss {:.6e}", s.name, s.iterations, last.loss)?;
        }
    }
    let w = cfg.out.join("weights.nsrw");
    save_weights(&g, &w)?;
    writeln!(out, "weights: {}", w.display())?;
    match validate(&g, &store, Split::Val, None) {
        Ok(v) => writeln!(
            out,
            "val psnr {:.3} dB (bicubic {:.3} dB) over {} frames",
            v.psnr, v.bicubic_psnr, v.frames
        )?,
        Err(nanosr::Error::Dataset(_)) => writeln!(out, "no validation split; skipped")?,
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

/// Per-frame mean PSNR/SSIM of model and bicubic on `split`.
pub struct EvalSummary {
    pub psnr: f64,
    pub ssim: f64,
    pub bicubic_psnr: f64,
    pub bicubic_ssim: f64,
    pub frames: usize,
}

pub fn evaluate(g: &ModelGraph, idx: &DatasetIndex, split: Split, max_frames: Option<usize>) -> Result<EvalSummary> {
    if g.scale != 4 {
        bail!("{} is a ×{} model; evaluation runs at ×4", g.arch, g.scale);
    }
    let store = FrameStore::new(idx);
    let seqs: Vec<usize> = (0..idx.sequences.len()).filter(|&i| idx.sequences[i].split == split).collect();
    if seqs.is_empty() {
        bail!("{} split is empty", split.dir_name());
    }
    let mut acc = [0.0f64; 4];
    let mut frames = 0;
    for s in seqs {
        let n = idx.sequences[s].frames.min(max_frames.unwrap_or(usize::MAX));
        let pairs = (0..n).map(|f| store.pair(s, f)).collect::<nanosr::Result<Vec<_>>>()?;
        let lr: Vec<_> = pairs.iter().map(|p| p.0.clone()).collect();
        for (sr, p) in run_sequence(g, &lr)?.iter().zip(&pairs) {
            let sr = sr.map(|v| v.clamp(0.0, 1.0));
            let up = bicubic_upscale(&p.0, 4)?.map(|v| v.clamp(0.0, 1.0));
            acc[0] += psnr(&sr, &p.1, 1.0)?;
            acc[1] += ssim(&sr, &p.1)?;
            acc[2] += psnr(&up, &p.1, 1.0)?;
            acc[3] += ssim(&up, &p.1)?;
            frames += 1;
        }
    }
    let k = frames as f64;
    Ok(EvalSummary {
        psnr: acc[0] / k,
        ssim: acc[1] / k,
        bicubic_psnr: acc[2] / k,
        bicubic_ssim: acc[3] / k,
        frames,
    })
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let g = load_model(&a.model.arch, a.model.weights.as_deref(), a.model.fused, a.model.seed)?;
    let idx = DatasetIndex::scan(&a.data, a.desk)?;
    let r = evaluate(&g, &idx, a.split.into(), a.max_frames)?;
    writeln!(out, "model    psnr {:.3} dB  ssim {:.4}", r.psnr, r.ssim)?;
    writeln!(out, "bicubic  psnr {:.3} dB  ssim {:.4}", r.bicubic_psnr, r.bicubic_ssim)?;
    writeln!(out, "frames {} (RGB, full frame, no border crop)", r.frames)?;
    Ok(())
}

fn fuse(a: FuseArgs, out: &mut dyn Write) -> Result<()> {
    let g = load_model(&a.arch, Some(&a.weights), false, 0)?;
    let f = fuse_model(&g)?;
    save_weights(&f, &a.out)?;
    writeln!(out, "{}: {} -> {} parameters, wrote {}", a.arch, g.param_count(), f.param_count(), a.out.display())?;
    Ok(())
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> Result<()> {
    let g = load_model(&a.model.arch, a.model.weights.as_deref(), a.model.fused, a.model.seed)?;
    let frame = [1, 3, a.height, a.width];
    let macs = count_macs(&g, frame)?;
    let rt = measure_runtime(&g, frame, a.warmup, a.iters)?;
    writeln!(out, "arch        {}{}", g.arch, if a.model.fused { " (fused)" } else { "" })?;
    writeln!(out, "input       {}x{} -> {}x{}", a.height, a.width, a.height * g.scale, a.width * g.scale)?;
    writeln!(out, "params      {}", g.param_count())?;
    writeln!(out, "bytes       {}", encoded_len(&g))?;
    writeln!(out, "macs        {macs}")?;
    writeln!(
        out,
        "runtime     {:.3} ms median of {} (min {:.3}, max {:.3}) on {}; host timing, not comparable to NPU figures",
        rt.median_ms, rt.iters, rt.min_ms, rt.max_ms, rt.host
    )?;
    writeln!(out, "energy proxy (macs x ms, not a power figure) {:.4e}", macs as f64 * rt.median_ms)?;
    if let (Some(p), Some(w)) = (a.psnr, a.power) {
        let mut m = MetricsRecord::new(&g.arch, p, None, rt.median_ms, w);
        m.param_count = Some(g.param_count());
        m.macs = Some(macs);
        m.model_bytes = Some(encoded_len(&g));
        let rec = ScoreRecord::score(m, !a.no_runtime_gate);
        writeln!(out, "score       {:.2}", rec.final_score)?;
        if let Some(path) = &a.report {
            let (t, c) = write_report(&[rec], path)?;
            writeln!(out, "report      {} {}", t.display(), c.display())?;
        }
    }
    Ok(())
}

fn score(a: ScoreArgs, out: &mut dyn Write) -> Result<()> {
    let enforce = !a.no_runtime_gate;
    let records = if a.published {
        published_records(enforce)
    } else {
        let (p, w, r) = (a.psnr.unwrap(), a.power.unwrap(), a.runtime.unwrap());
        if w < 0.0 {
            bail!("power must be non-negative, got {w}");
        }
        writeln!(out, "{:.2}", challenge_score(p, w, r, enforce))?;
        vec![ScoreRecord::score(MetricsRecord::new("entry", p, None, r, w), enforce)]
    };
    if a.published {
        out.write_all(nanosr::eval::render_table(&nanosr::eval::leaderboard(&records)).as_bytes())?;
    }
    if let Some(path) = &a.report {
        write_report(&records, path)?;
    }
    Ok(())
}

fn fixtures(a: FixtureArgs, out: &mut dyn Write) -> Result<()> {
    let spec = FixtureSpec {
        train: a.train,
        val: a.val,
        test: a.test,
        frames: a.frames,
        height: a.size,
        width: a.size,
    };
    let idx = make_fixtures(&a.out, a.seed, &spec)?;
    writeln!(
        out,
        "{} sequences of {} frames at {}x{} under {}",
        idx.sequences.len(),
        a.frames,
        a.size,
        a.size,
        a.out.display()
    )?;
    Ok(())
}

/// Layer table of `g` with output shapes at the challenge LR size.
pub fn layer_table(g: &ModelGraph) -> Result<String> {
    let dims = infer_dims(g, [1, 3, 180, 320])?;
    let mut rows = vec![["#".to_string(), "name".into(), "op".into(), "inputs".into(), "params".into(), "output".into()]];
    for (n, d) in g.nodes.iter().zip(&dims) {
        let ins: Vec<String> = n.inputs.iter().map(|i| i.to_string()).collect();
        rows.push([
            n.id.to_string(),
            n.name.clone(),
            n.op.kind().to_string(),
            ins.join(","),
            n.op.param_count().to_string(),
            format!("{}x{}x{}", d[1], d[2], d[3]),
        ]);
    }
    let mut widths = [0usize; 6];
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut s = String::new();
    for r in &rows {
        let cells: Vec<String> = r.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        s.push_str(cells.join("  ").trim_end());
        s.push('\n');
    }
    Ok(s)
}

fn describe(a: DescribeArgs, out: &mut dyn Write) -> Result<()> {
    if a.cards {
        out.write_all(render_cards()?.as_bytes())?;
        return Ok(());
    }
    let arch = a.arch.expect("clap requires arch");
    let card = arch_card(&arch, &ArchConfig::default())?;
    let mut g = build_model(&arch, &ArchConfig::default())?;
    if a.fused {
        g = fuse_model(&g)?;
    }
    writeln!(out, "{} ({})", card.arch, card.team)?;
    writeln!(out, "{}", card.structure)?;
    writeln!(out, "params {}", g.param_count())?;
    writeln!(out, "weight file bytes {}", encoded_len(&g))?;
    writeln!(out, "macs at 180x320 {}", count_macs(&g, [1, 3, 180, 320])?)?;
    if !card.notes.is_empty() {
        writeln!(out, "note: {}", card.notes)?;
    }
    writeln!(out)?;
    out.write_all(layer_table(&g)?.as_bytes())?;
    Ok(())
}
