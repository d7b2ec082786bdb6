//! `prunespace` command-line interface.
//!
//! Machine-readable results go to stdout (or `--out`); logs go to stderr.
//! Exit codes: 2 usage, 3 invalid input, 4 infeasible space, 5 training failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use prunespace::cost::{dense_cost, recipe_cost};
use prunespace::io::{self as pio, Checkpoint, TrialLog};
use prunespace::nn::{init_weights, one_shot_prune, train, DatasetSpec, ScheduleKind, ScheduleSpec};
use prunespace::pipeline::{self, resolve_arch, Experiment, PipelineConfig};
use prunespace::recipe::{is_member, recipe_std, sample_population};
use prunespace::spaces::{
    compare_spaces, distribution_summary, edf, top_k_winners, winner_mcb_by_regime, Phase, SummaryField, TrialRecord,
};
use prunespace::{ArchitectureSpec, Error, PruningRecipe, Result, SpaceSpec};

#[derive(Parser)]
#[command(name = "prunespace", version, about = "Explore filter-pruning spaces of convolutional networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a validated architecture with its prunable units and dense cost.
    Arch(ArchArgs),
    /// Cost report of a pruning recipe.
    Cost(CostArgs),
    /// Sample recipes from a constrained pruning space (JSONL).
    Sample(SampleArgs),
    /// One-shot prune a checkpoint by a recipe.
    Prune(PruneArgs),
    /// Train a network on the synthetic dataset.
    Train(TrainArgs),
    /// Retrain a sampled population and log every trial.
    Explore(ExploreArgs),
    /// Summaries of trial logs as CSV.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Full search: dense baseline, screening, top-k retraining.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct ArchArgs {
    /// Builtin name (chain3, resnet-tiny, resnet50-shape) or architecture JSON path.
    #[arg(long)]
    arch: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long)]
    arch: String,
    /// Recipe JSON file: {"ratios": [...]}.
    #[arg(long, conflicts_with = "uniform", required_unless_present = "uniform")]
    recipe: Option<PathBuf>,
    /// Apply the same ratio to every unit.
    #[arg(long)]
    uniform: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SpaceArgs {
    /// Space JSON file (fields of SpaceSpec).
    #[arg(long, conflicts_with = "cflops")]
    space: Option<PathBuf>,
    /// Target c_flops (when no space file is given).
    #[arg(long)]
    cflops: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    std_cap: Option<f64>,
    /// mCB band as center,half_width.
    #[arg(long, value_parser = parse_pair)]
    mcb_band: Option<(f64, f64)>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    arch: String,
    #[command(flatten)]
    space: SpaceArgs,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PruneArgs {
    /// Checkpoint JSON holding the architecture and weights.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    recipe: PathBuf,
    /// Destination of the pruned checkpoint.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    contrast: Option<f64>,
}

impl DataArgs {
    fn spec(&self, arch: &ArchitectureSpec) -> DatasetSpec {
        let mut d = DatasetSpec::new(self.data_seed, arch.num_classes(), self.per_class, arch.input_shape);
        if let Some(n) = self.noise {
            d.noise = n;
        }
        if let Some(c) = self.contrast {
            d.contrast = c;
        }
        d
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Sched {
    Finetune,
    Rewind,
    Scratch,
}

impl From<Sched> for ScheduleKind {
    fn from(s: Sched) -> Self {
        match s {
            Sched::Finetune => ScheduleKind::Finetune,
            Sched::Rewind => ScheduleKind::Rewind,
            Sched::Scratch => ScheduleKind::Scratch,
        }
    }
}

#[derive(Args, Clone)]
struct ScheduleArgs {
    #[arg(long, value_enum, default_value = "finetune")]
    schedule: Sched,
    #[arg(long, default_value_t = 2)]
    epochs: usize,
    /// Overrides the schedule's default initial learning rate.
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl ScheduleArgs {
    fn spec(&self) -> ScheduleSpec {
        let mut s = ScheduleSpec::new(self.schedule.into(), self.epochs);
        if let Some(lr) = self.lr0 {
            s.lr0 = lr;
        }
        if let Some(b) = self.batch_size {
            s.batch_size = b;
        }
        s
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Start from this checkpoint.
    #[arg(long, conflicts_with = "arch", required_unless_present = "arch")]
    checkpoint: Option<PathBuf>,
    /// Start from fresh weights of this architecture.
    #[arg(long)]
    arch: Option<String>,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Destination of the trained checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExploreArgs {
    #[arg(long)]
    arch: String,
    #[command(flatten)]
    space: SpaceArgs,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Dense checkpoint to prune; trained from scratch when absent.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    dense_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trial log (JSONL) to write or resume.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Empirical distribution of accuracy drops.
    Edf {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Histograms of cost and recipe fields.
    Hist {
        #[arg(long)]
        trials: PathBuf,
        /// c_flops, c_params, mcb, recipe_std or accuracy_drop; all cost fields when omitted.
        #[arg(long)]
        field: Vec<String>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Write quantiles instead of bins.
        #[arg(long)]
        quantiles: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-k trials by accuracy drop.
    Winners {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Winner mCB per FLOPs regime; one TARGET=PATH per regime.
    Budget {
        #[arg(long)]
        arch: String,
        #[arg(long = "regime", value_parser = parse_named, required = true)]
        regimes: Vec<(String, PathBuf)>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0.002)]
        delta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pairwise EDF differences; one NAME=PATH per space.
    Compare {
        #[arg(long = "space", value_parser = parse_named, required = true)]
        spaces: Vec<(String, PathBuf)>,
        /// Also print the dominance verdicts as JSON on stderr.
        #[arg(long)]
        verdicts: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PipelineArgs {
    /// Config JSON mirroring PipelineConfig; a preset is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Architecture for the preset.
    #[arg(long, default_value = "resnet-tiny")]
    arch: String,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    FullScale,
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected CENTER,HALF_WIDTH")?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

fn parse_named(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (a, b) = s.split_once('=').ok_or("expected NAME=PATH")?;
    Ok((a.to_string(), PathBuf::from(b)))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => pio::write_atomic(p, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn json_line<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

impl SpaceArgs {
    fn spec(&self) -> Result<SpaceSpec> {
        let mut s = match (&self.space, self.cflops) {
            (Some(p), _) => read_json::<SpaceSpec>(p)?,
            (None, Some(t)) => SpaceSpec::flops(t),
            (None, None) => return Err(Error::Validation("give --space FILE or --cflops TARGET".into())),
        };
        if let Some(d) = self.delta {
            s.delta = d;
        }
        if let Some(c) = self.std_cap {
            s.std_cap = Some(c);
        }
        if let Some(b) = self.mcb_band {
            s.mcb_band = Some(b);
        }
        s.validate()?;
        Ok(s)
    }
}

fn cmd_arch(a: ArchArgs) -> Result<()> {
    let arch = resolve_arch(&a.arch)?;
    let units: Vec<_> = arch
        .prunable_units()
        .iter()
        .map(|u| serde_json::json!({"unit": u.index, "layers": u.layers, "group": u.group, "c_out": u.c_out}))
        .collect();
    let doc = serde_json::json!({
        "architecture": arch.to_document(),
        "units": units,
        "dense": dense_cost(&arch),
    });
    emit(a.out.as_deref(), &json_line(&doc)?)
}

fn cmd_cost(a: CostArgs) -> Result<()> {
    let arch = resolve_arch(&a.arch)?;
    let recipe = match (a.recipe, a.uniform) {
        (Some(p), _) => read_json::<PruningRecipe>(&p)?,
        (None, Some(u)) => PruningRecipe::uniform(&arch, u),
        (None, None) => unreachable!("clap requires one"),
    };
    let cost = recipe_cost(&arch, &recipe)?;
    let doc = serde_json::json!({
        "arch": arch.name,
        "flops": cost.flops,
        "params": cost.params,
        "c_flops": cost.c_flops,
        "c_params": cost.c_params,
        "mcb": cost.mcb,
        "recipe_std": recipe_std(&recipe.ratios)?,
    });
    emit(a.out.as_deref(), &json_line(&doc)?)
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let arch = resolve_arch(&a.arch)?;
    let space = a.space.spec()?;
    let recipes = sample_population(&arch, &space, a.n, a.seed)?;
    let mut text = String::new();
    for (i, r) in recipes.iter().enumerate() {
        let m = is_member(&arch, &space, r)?;
        let line = serde_json::json!({
            "index": i,
            "ratios": r.ratios,
            "c_flops": m.cost.c_flops,
            "c_params": m.cost.c_params,
            "mcb": m.cost.mcb,
            "recipe_std": m.recipe_std,
        });
        text.push_str(&serde_json::to_string(&line)?);
        text.push('\n');
    }
    emit(a.out.as_deref(), &text)
}

fn cmd_prune(a: PruneArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let recipe: PruningRecipe = read_json(&a.recipe)?;
    let pruned = one_shot_prune(&ck.weights, &ck.arch, &recipe)?;
    Checkpoint::new(pruned.arch.clone(), pruned.weights).save(&a.out)?;
    let kept: Vec<_> = pruned.plan.layers.iter().map(|l| &l.kept_indices).collect();
    let doc = serde_json::json!({"cost": recipe_cost(&ck.arch, &recipe)?, "kept_indices": kept});
    emit(None, &json_line(&doc)?)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let (arch, weights) = match (&a.checkpoint, &a.arch) {
        (Some(p), _) => {
            let ck = Checkpoint::load(p)?;
            (ck.arch, ck.weights)
        }
        (None, Some(name)) => {
            let arch = resolve_arch(name)?;
            let w = init_weights(&arch, a.seed);
            (arch, w)
        }
        (None, None) => unreachable!("clap requires one"),
    };
    let data = a.data.spec(&arch);
    let exp = Experiment::new(arch, &data)?;
    let schedule = a.schedule.spec();
    let out = train(&weights, &exp.arch, &exp.train, &exp.val, &schedule, a.seed)?;
    if let Some(p) = &a.out {
        let mut ck = Checkpoint::new(exp.arch.clone(), out.weights.clone());
        ck.accuracy = Some(out.final_accuracy());
        ck.save(p)?;
    }
    let doc = serde_json::json!({
        "schedule": schedule,
        "seed": a.seed,
        "trace": out.trace,
        "accuracy": out.final_accuracy(),
    });
    emit(None, &json_line(&doc)?)
}

fn cmd_explore(a: ExploreArgs) -> Result<()> {
    let arch = resolve_arch(&a.arch)?;
    let space = a.space.spec()?;
    let schedule = a.schedule.spec();
    schedule.validate()?;
    let exp = Experiment::new(arch.clone(), &a.data.spec(&arch))?;
    let (dense, dense_acc) = match &a.baseline {
        Some(p) if p.exists() => {
            let ck = Checkpoint::load(p)?;
            if ck.arch.to_document() != arch.to_document() {
                return Err(Error::Validation(format!("{} holds a different architecture", p.display())));
            }
            let acc = match ck.accuracy {
                Some(acc) => acc,
                None => prunespace::nn::evaluate(&ck.weights, &arch, &exp.val)?,
            };
            (ck.weights, acc)
        }
        other => {
            let (w, acc) = pipeline::train_dense_baseline(&exp, &ScheduleSpec::scratch(a.dense_epochs), a.seed)?;
            if let Some(p) = other {
                let mut ck = Checkpoint::new(arch.clone(), w.clone());
                ck.accuracy = Some(acc);
                ck.save(p)?;
            }
            (w, acc)
        }
    };
    log::info!("dense accuracy {dense_acc:.4}");
    let hash = pio::config_hash(&serde_json::json!({
        "arch": arch.to_document(),
        "space": space,
        "n": a.n,
        "schedule": schedule,
        "dataset": a.data.spec(&arch),
        "dense_accuracy": dense_acc,
        "seed": a.seed,
    }))?;
    let (mut log, done) = TrialLog::resume(&a.out, &hash)?;
    let records = pipeline::evaluate_population(
        &exp,
        &dense,
        dense_acc,
        &space,
        a.n,
        &schedule,
        a.seed,
        Phase::Explore,
        done,
        Some(&mut log),
    )?;
    let e = edf(&records)?;
    log::info!("{} trials, median drop {}", records.len(), prunespace::spaces::quantile_sorted(&e.drops, 0.5));
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    Ok(pio::read_trials(path)?.1)
}

fn cmd_report(r: ReportCommand) -> Result<()> {
    match r {
        ReportCommand::Edf { trials, out } => emit(out.as_deref(), &pio::edf_csv(&edf(&read_records(&trials)?)?)),
        ReportCommand::Hist {
            trials,
            field,
            bins,
            quantiles,
            out,
        } => {
            let recs = read_records(&trials)?;
            let fields = if field.is_empty() {
                vec![SummaryField::CFlops, SummaryField::CParams, SummaryField::Mcb, SummaryField::RecipeStd]
            } else {
                field.iter().map(|f| SummaryField::parse(f)).collect::<Result<Vec<_>>>()?
            };
            let summaries = fields
                .iter()
                .map(|&f| distribution_summary(&recs, f, bins))
                .collect::<Result<Vec<_>>>()?;
            let text = if quantiles { pio::quantiles_csv(&summaries) } else { pio::hist_csv(&summaries) };
            emit(out.as_deref(), &text)
        }
        ReportCommand::Winners { trials, k, out } => {
            let recs = read_records(&trials)?;
            emit(out.as_deref(), &pio::winners_csv(&top_k_winners(&recs, k)?))
        }
        ReportCommand::Budget {
            arch,
            regimes,
            k,
            delta,
            out,
        } => {
            let arch = resolve_arch(&arch)?;
            let sets = regimes
                .iter()
                .map(|(t, p)| {
                    let target: f64 = t
                        .parse()
                        .map_err(|_| Error::Validation(format!("regime target '{t}' is not a number")))?;
                    Ok((target, read_records(p)?))
                })
                .collect::<Result<Vec<_>>>()?;
            emit(out.as_deref(), &pio::budget_csv(&winner_mcb_by_regime(&arch, &sets, k, delta)?))
        }
        ReportCommand::Compare { spaces, verdicts, out } => {
            let sets = spaces
                .iter()
                .map(|(name, p)| Ok((name.clone(), read_records(p)?.iter().map(|t| t.accuracy_drop).collect())))
                .collect::<Result<Vec<_>>>()?;
            let pairs = compare_spaces(&sets)?;
            if verdicts {
                for p in &pairs {
                    eprintln!(
                        "{}",
                        serde_json::json!({"a": p.a, "b": p.b, "pooled_median": p.pooled_median,
                            "a_dominates_at_median": p.a_dominates_at_median,
                            "a_dominates_everywhere": p.a_dominates_everywhere})
                    );
                }
            }
            emit(out.as_deref(), &pio::compare_csv(&pairs))
        }
    }
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => read_json::<PipelineConfig>(p)?,
        None => match a.preset {
            Preset::Desk => PipelineConfig::desk(&a.arch)?,
            Preset::FullScale => PipelineConfig::full_scale(&a.arch)?,
        },
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.out_dir = Some(a.out.clone());
    let result = pipeline::run_pipeline(&config)?;
    let w = &result.winner;
    let doc = serde_json::json!({
        "dense_accuracy": result.dense_accuracy,
        "winner_index": w.index,
        "winner_accuracy_drop": w.accuracy_drop,
        "winner_c_flops": w.cost.c_flops,
        "winner_mcb": w.cost.mcb,
        "epochs": result.epochs,
        "out": a.out,
    });
    emit(None, &json_line(&doc)?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Arch(a) => cmd_arch(a),
        Command::Cost(a) => cmd_cost(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Train(a) => cmd_train(a),
        Command::Explore(a) => cmd_explore(a),
        Command::Report(r) => cmd_report(r),
        Command::Pipeline(a) => cmd_pipeline(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Feasibility(_) => 4,
        Error::Training { .. } => 5,
        _ => 3,
    }
}
