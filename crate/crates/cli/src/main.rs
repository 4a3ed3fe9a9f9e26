use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use setref_core::analysis::{count_cost, perturbation_matrix, Displacement};
use setref_core::data::{generate_dataset, read_scenes, write_scenes, InteractionMix, KFold};
use setref_core::metrics::{evaluate, MetricReport};
use setref_core::model::{load, save};
use setref_core::train::train;
use setref_core::{Error, InteractionMode, RefinerModel, Scene};

mod config;

use config::{Fold, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "setref", version, about = "Set-attention residual refinement of multi-person 3D poses")]
struct Cli {
    /// Master seed; every other seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration; flags given on the command line override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Suppress progress and summary output on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene file.
    Gen(GenArgs),
    /// Train a refiner on a scene file with ground truth.
    Train(TrainArgs),
    /// Refine every scene of a file with a trained model.
    Refine(RefineArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Perturbation interaction matrix of one scene, as CSV.
    Perturb(PerturbArgs),
    /// Parameter count, FLOPs and wall-clock for one refine call.
    Count(CountArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    scenes: Option<usize>,
    /// Fixed person count (sets both bounds).
    #[arg(long, conflicts_with_all = ["min_persons", "max_persons"])]
    persons: Option<usize>,
    #[arg(long)]
    min_persons: Option<usize>,
    #[arg(long)]
    max_persons: Option<usize>,
    /// Handshake,group,independent weights.
    #[arg(long, value_parser = parse_mix)]
    mix: Option<InteractionMix>,
    #[arg(long, value_name = "M")]
    joint_noise: Option<f64>,
    #[arg(long, value_name = "M")]
    depth_offset: Option<f64>,
    #[arg(long, value_name = "P")]
    truncation_prob: Option<f64>,
    #[arg(long, value_name = "M")]
    truncation_noise: Option<f64>,
    #[arg(long)]
    corruption_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    mode: Option<InteractionMode>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    decoder_hidden: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Line-delimited JSON training log; stdout when omitted.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Held-out fold as `k/i`, or `none` to train on everything.
    #[arg(long, value_parser = parse_fold)]
    fold: Option<HeldOut>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct RefineArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predictions; carries ground truth unless `--gt` is given.
    #[arg(long)]
    data: PathBuf,
    /// Ground truth file, matched to `--data` scene by scene.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Unrefined scene file to report alongside, with deltas.
    #[arg(long, value_name = "FILE")]
    initial: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PerturbArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Scene position in the file.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, value_name = "M")]
    delta: Option<f64>,
    /// Displace one axis at a time and keep the largest change.
    #[arg(long)]
    per_axis: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CountArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 2)]
    persons: usize,
}

fn parse_mix(s: &str) -> Result<InteractionMix, String> {
    let w: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect::<Result<_, _>>()?;
    match w[..] {
        [handshake, group, independent] => Ok(InteractionMix {
            handshake,
            group,
            independent,
        }),
        _ => Err(format!("expected three comma-separated weights, got {}", w.len())),
    }
}

/// Parsed `--fold`; `None` inside means no held-out set.
#[derive(Debug, Clone, Copy)]
struct HeldOut(Option<Fold>);

fn parse_fold(s: &str) -> Result<HeldOut, String> {
    if s == "none" {
        Ok(HeldOut(None))
    } else {
        s.parse().map(|f| HeldOut(Some(f)))
    }
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(e) if e.is_numeric() => 3,
            Failure::Core(_) => 2,
        }
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

type Outcome = Result<(), Failure>;

struct Ctx {
    run: RunConfig,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn record(&self, command: &str, paths: BTreeMap<&str, &Path>) -> serde_json::Value {
        json!({ "command": command, "paths": paths, "run_config": self.run })
    }

    fn log_run(&self, command: &str, paths: BTreeMap<&str, &Path>) {
        self.note(self.record(command, paths).to_string());
    }
}

fn paths<'a>(items: &[(&'a str, &'a Path)]) -> BTreeMap<&'a str, &'a Path> {
    items.iter().copied().collect()
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json(out: &mut dyn Write, value: &impl Serialize) -> Outcome {
    serde_json::to_writer_pretty(&mut *out, value).map_err(Error::from)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn cmd_gen(ctx: &mut Ctx, a: &GenArgs) -> Outcome {
    let d = &mut ctx.run.dataset;
    if let Some(v) = a.scenes {
        d.scenes = v;
    }
    if let Some(n) = a.persons {
        d.min_persons = n;
        d.max_persons = n;
    }
    if let Some(v) = a.min_persons {
        d.min_persons = v;
    }
    if let Some(v) = a.max_persons {
        d.max_persons = v;
    }
    if let Some(v) = a.mix {
        d.mix = v;
    }
    let c = &mut d.corruption;
    if let Some(v) = a.joint_noise {
        c.joint_noise_sigma = v;
    }
    if let Some(v) = a.depth_offset {
        c.depth_offset_sigma = v;
    }
    if let Some(v) = a.truncation_prob {
        c.truncation_prob = v;
    }
    if let Some(v) = a.truncation_noise {
        c.truncation_noise_sigma = v;
    }
    if let Some(v) = a.corruption_seed {
        c.seed = v;
    }
    d.validate().map_err(usage)?;
    ctx.log_run("gen", paths(&[("out", &a.out)]));

    let data = generate_dataset(&ctx.run.dataset)?;
    let mut by_kind: BTreeMap<String, usize> = BTreeMap::new();
    let mut by_n: BTreeMap<usize, usize> = BTreeMap::new();
    for g in &data {
        *by_kind.entry(format!("{:?}", g.interaction).to_lowercase()).or_default() += 1;
        *by_n.entry(g.scene.num_persons()).or_default() += 1;
    }
    let scenes: Vec<Scene> = data.into_iter().map(|g| g.scene).collect();
    write_scenes(&a.out, &scenes)?;
    ctx.note(json!({ "scenes": scenes.len(), "interactions": by_kind, "persons": by_n }).to_string());
    Ok(())
}

fn apply_model_args(ctx: &mut Ctx, a: &ModelArgs) -> Outcome {
    let m = &mut ctx.run.model;
    if let Some(v) = a.mode {
        m.mode = v;
    }
    if let Some(v) = a.dim {
        m.dim = v;
    }
    if let Some(v) = a.blocks {
        m.blocks = v;
    }
    if let Some(v) = a.heads {
        m.heads = v;
    }
    if let Some(v) = a.decoder_hidden {
        m.decoder_hidden = v;
    }
    m.validate().map_err(usage)
}

fn cmd_train(ctx: &mut Ctx, a: &TrainArgs) -> Outcome {
    apply_model_args(ctx, &a.model)?;
    let t = &mut ctx.run.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.adam.lr = v;
    }
    t.validate().map_err(usage)?;
    if let Some(HeldOut(f)) = a.fold {
        ctx.run.fold = f;
    }

    let scenes = read_scenes(&a.data)?;
    let joints = scenes.first().map_or(ctx.run.model.joints, Scene::num_joints);
    ctx.run.model.joints = joints;
    let (train_set, heldout) = match ctx.run.fold {
        Some(f) => {
            let split = KFold::new(scenes.len(), f.k, ctx.run.fold_seed())?;
            let (tr, te) = split.split(f.index)?;
            let pick = |ix: Vec<usize>| ix.into_iter().map(|i| scenes[i].clone()).collect::<Vec<_>>();
            (pick(tr), pick(te))
        }
        None => (scenes.clone(), Vec::new()),
    };

    let mut log = output(a.log.as_deref())?;
    let mut p = vec![("data", a.data.as_path()), ("out", a.out.as_path())];
    if let Some(l) = &a.log {
        p.push(("log", l.as_path()));
    }
    ctx.log_run("train", paths(&p));
    writeln!(log, "{}", ctx.record("train", paths(&p)))?;

    let mut model = RefinerModel::init(ctx.run.model, ctx.run.model_seed())?;
    let mut io_err = None;
    let result = train(&mut model, &train_set, &heldout, &ctx.run.train, |r| {
        let line = serde_json::to_string(r).expect("epoch records serialize");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            io_err.get_or_insert(e);
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let records = result?;
    save(&model, &a.out)?;
    if let Some(last) = records.last() {
        ctx.note(format!(
            "trained {} epochs on {} scenes ({} held out); final loss {:.6}",
            last.epoch,
            train_set.len(),
            heldout.len(),
            last.train_loss
        ));
    }
    Ok(())
}

fn cmd_refine(ctx: &mut Ctx, a: &RefineArgs) -> Outcome {
    let model = load(&a.model)?;
    ctx.run.model = *model.config();
    ctx.log_run(
        "refine",
        paths(&[("model", &a.model), ("data", &a.data), ("out", &a.out)]),
    );
    let scenes = read_scenes(&a.data)?;
    let refined = scenes
        .iter()
        .map(|s| {
            Ok(Scene {
                persons: model.refine(s)?.refined,
                ..s.clone()
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    write_scenes(&a.out, &refined)?;
    ctx.note(format!("refined {} scenes", refined.len()));
    Ok(())
}

/// Attaches ground truth from `source` (its `gt`, or its `persons` when it has
/// none) to `scenes`, position by position.
fn attach_gt(scenes: &mut [Scene], source: &[Scene]) -> Result<(), Error> {
    if scenes.len() != source.len() {
        return Err(Error::Config(format!(
            "{} scenes but {} ground-truth scenes",
            scenes.len(),
            source.len()
        )));
    }
    for (s, g) in scenes.iter_mut().zip(source) {
        if s.id != g.id {
            return Err(Error::Scene {
                id: s.id.clone(),
                reason: format!("ground-truth file has `{}` at this position", g.id),
            });
        }
        s.gt = Some(g.gt.clone().unwrap_or_else(|| g.persons.clone()));
        s.validate(None)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Deltas {
    mpjpe_mm: f64,
    mpjpe_pa_mm: f64,
    pck_pct: f64,
    auc_pct: f64,
    pck_abs_pct: f64,
}

fn deltas(refined: &MetricReport, initial: &MetricReport) -> Deltas {
    Deltas {
        mpjpe_mm: refined.mpjpe_mm - initial.mpjpe_mm,
        mpjpe_pa_mm: refined.mpjpe_pa_mm - initial.mpjpe_pa_mm,
        pck_pct: refined.pck_pct - initial.pck_pct,
        auc_pct: refined.auc_pct - initial.auc_pct,
        pck_abs_pct: refined.pck_abs_pct - initial.pck_abs_pct,
    }
}

fn cmd_eval(ctx: &mut Ctx, a: &EvalArgs) -> Outcome {
    let mut p = vec![("data", a.data.as_path())];
    for (k, v) in [("gt", &a.gt), ("initial", &a.initial), ("out", &a.out)] {
        if let Some(v) = v {
            p.push((k, v.as_path()));
        }
    }
    ctx.log_run("eval", paths(&p));
    let mut pred = read_scenes(&a.data)?;
    if let Some(g) = &a.gt {
        attach_gt(&mut pred, &read_scenes(g)?)?;
    }
    let report = evaluate(&pred, &ctx.run.metrics)?;
    let mut out = output(a.out.as_deref())?;
    match &a.initial {
        None => write_json(&mut *out, &report),
        Some(path) => {
            let mut initial = read_scenes(path)?;
            attach_gt(&mut initial, &pred)?;
            // `attach_gt` copies pred's gt, which is always present here
            let base = evaluate(&initial, &ctx.run.metrics)?;
            let delta = deltas(&report, &base);
            write_json(
                &mut *out,
                &json!({ "refined": report, "initial": base, "delta": delta }),
            )
        }
    }
}

fn cmd_perturb(ctx: &mut Ctx, a: &PerturbArgs) -> Outcome {
    if let Some(d) = a.delta {
        ctx.run.perturb.delta = d;
    }
    if a.per_axis {
        ctx.run.perturb.displacement = Displacement::PerAxis;
    }
    if !ctx.run.perturb.delta.is_finite() {
        return Err(Failure::Usage("--delta must be finite".into()));
    }
    let model = load(&a.model)?;
    ctx.run.model = *model.config();
    ctx.log_run("perturb", paths(&[("model", &a.model), ("data", &a.data)]));
    let scenes = read_scenes(&a.data)?;
    let scene = scenes.get(a.index).ok_or(Error::OutOfRange {
        index: a.index,
        limit: scenes.len(),
    })?;
    let pm = perturbation_matrix(&model, scene, ctx.run.perturb.delta, ctx.run.perturb.displacement)?;
    let mut out = output(a.out.as_deref())?;
    out.write_all(pm.to_csv().as_bytes())?;
    out.flush()?;
    Ok(())
}

fn cmd_count(ctx: &mut Ctx, a: &CountArgs) -> Outcome {
    if a.persons == 0 {
        return Err(Failure::Usage("--persons must be at least 1".into()));
    }
    let model = load(&a.model)?;
    ctx.run.model = *model.config();
    ctx.log_run("count", paths(&[("model", &a.model)]));
    let report = count_cost(&model, a.persons)?;
    write_json(&mut *output(None)?, &report)
}

fn run(cli: Cli) -> Outcome {
    let mut run = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        run.seed = s;
    }
    run.derive_seeds();
    let mut ctx = Ctx {
        run,
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Gen(a) => cmd_gen(&mut ctx, a),
        Command::Train(a) => cmd_train(&mut ctx, a),
        Command::Refine(a) => cmd_refine(&mut ctx, a),
        Command::Eval(a) => cmd_eval(&mut ctx, a),
        Command::Perturb(a) => cmd_perturb(&mut ctx, a),
        Command::Count(a) => cmd_count(&mut ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(msg) => eprintln!("error: {msg}\n\nFor more information, try '--help'."),
                Failure::Core(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}
