//! Search procedure: train a dense baseline, sample a constrained population,
//! screen every candidate with a short retraining, fully retrain the top-k
//! and keep the best.
//!
//! Every candidate is replayable from `(config, master seed, index)`: the
//! sampler draws recipe `i` from stream `i`, and its training seed is derived
//! from the master seed and `i` alone.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::ArchitectureSpec;
use crate::builtin;
use crate::cost::recipe_cost;
use crate::error::{Error, Result};
use crate::io::{self, Checkpoint, TrialLog};
use crate::nn::{
    init_weights, one_shot_prune, synth_dataset, train, Dataset, DatasetSpec, NetworkWeights, ScheduleSpec,
};
use crate::recipe::{recipe_std, sample_population, PruningRecipe, SpaceSpec};
use crate::spaces::{accuracy_drop, distribution_summary, edf, top_k_winners, Phase, SummaryField, TrialRecord};

pub const WORKERS_ENV: &str = "PRUNESPACE_WORKERS";

/// Builtin architecture by name, otherwise an architecture JSON file.
pub fn resolve_arch(name_or_path: &str) -> Result<ArchitectureSpec> {
    if builtin::BUILTIN_NAMES.contains(&name_or_path) {
        return builtin::by_name(name_or_path);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(Error::Validation(format!(
            "'{name_or_path}' is neither a builtin architecture ({}) nor a file",
            builtin::BUILTIN_NAMES.join(", ")
        )));
    }
    ArchitectureSpec::from_json(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Builtin architecture name or path to an architecture JSON file.
    pub arch: String,
    pub dataset: DatasetSpec,
    pub space: SpaceSpec,
    /// Number of screened candidates.
    pub n: usize,
    pub dense_schedule: ScheduleSpec,
    pub short_schedule: ScheduleSpec,
    pub full_schedule: ScheduleSpec,
    pub top_k: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl PipelineConfig {
    fn preset(arch: &str, n: usize, short: usize, top_k: usize, full: usize, dense: usize) -> Result<Self> {
        let a = resolve_arch(arch)?;
        Ok(PipelineConfig {
            arch: arch.to_string(),
            dataset: DatasetSpec::new(1, a.num_classes(), 200, a.input_shape),
            space: SpaceSpec::flops(0.5).with_mcb_band(1.0, 0.1),
            n,
            dense_schedule: ScheduleSpec::scratch(dense),
            short_schedule: ScheduleSpec::finetune(short),
            full_schedule: ScheduleSpec::finetune(full),
            top_k,
            seed: 0,
            out_dir: None,
        })
    }

    /// Desk-scale defaults: 30 candidates, 2 screening epochs, top 3 retrained for 20.
    pub fn desk(arch: &str) -> Result<Self> {
        Self::preset(arch, 30, 2, 3, 20, 20)
    }

    /// Full-scale defaults: 300 candidates, 5 screening epochs, top 5 retrained for 100.
    pub fn full_scale(arch: &str) -> Result<Self> {
        Self::preset(arch, 300, 5, 5, 100, 100)
    }

    pub fn validate(&self, arch: &ArchitectureSpec) -> Result<()> {
        self.space.validate()?;
        self.dataset.validate()?;
        for s in [&self.dense_schedule, &self.short_schedule, &self.full_schedule] {
            s.validate()?;
        }
        if self.top_k < 1 || self.top_k > self.n {
            return Err(Error::Validation(format!(
                "need n >= top_k >= 1, got n = {}, top_k = {}",
                self.n, self.top_k
            )));
        }
        if self.short_schedule.epochs > self.full_schedule.epochs {
            return Err(Error::Validation(format!(
                "short schedule ({} epochs) is longer than the full schedule ({})",
                self.short_schedule.epochs, self.full_schedule.epochs
            )));
        }
        if self.dataset.shape != arch.input_shape {
            return Err(Error::Validation(format!(
                "dataset shape {:?} does not match {} input {:?}",
                self.dataset.shape, arch.name, arch.input_shape
            )));
        }
        if self.dataset.num_classes != arch.num_classes() {
            return Err(Error::Validation(format!(
                "dataset has {} classes, {} predicts {}",
                self.dataset.num_classes,
                arch.name,
                arch.num_classes()
            )));
        }
        Ok(())
    }

    /// Hash of everything that determines results (the output directory excluded).
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.out_dir = None;
        io::config_hash(&c)
    }
}

/// Architecture and dataset splits shared by all phases of a run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub arch: ArchitectureSpec,
    pub train: Dataset,
    pub val: Dataset,
}

impl Experiment {
    pub fn new(arch: ArchitectureSpec, dataset: &DatasetSpec) -> Result<Self> {
        let (train, val) = synth_dataset(dataset)?;
        Ok(Experiment { arch, train, val })
    }

    pub fn from_config(config: &PipelineConfig) -> Result<Self> {
        let arch = resolve_arch(&config.arch)?;
        config.validate(&arch)?;
        Self::new(arch, &config.dataset)
    }
}

/// Training seed of candidate `index` under `master`.
pub fn candidate_seed(master: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scratch-train the dense network; returns its weights and validation accuracy.
pub fn train_dense_baseline(exp: &Experiment, schedule: &ScheduleSpec, seed: u64) -> Result<(NetworkWeights<f32>, f64)> {
    let w0 = init_weights(&exp.arch, seed);
    let out = train(&w0, &exp.arch, &exp.train, &exp.val, schedule, seed)?;
    let acc = out.final_accuracy();
    Ok((out.weights, acc))
}

/// Prune `dense` by `recipe`, retrain, and record the result. Divergence
/// yields a record with an infinite drop instead of an error.
#[allow(clippy::too_many_arguments)]
pub fn retrain_candidate(
    exp: &Experiment,
    dense: &NetworkWeights<f32>,
    dense_acc: f64,
    recipe: &PruningRecipe,
    schedule: &ScheduleSpec,
    seed: u64,
    phase: Phase,
    index: u64,
) -> Result<TrialRecord> {
    let cost = recipe_cost(&exp.arch, recipe)?;
    let pruned = one_shot_prune(dense, &exp.arch, recipe)?;
    let accuracy = match train(&pruned.weights, &pruned.arch, &exp.train, &exp.val, schedule, seed) {
        Ok(out) => Some(out.final_accuracy()),
        Err(Error::Training { epoch, message, .. }) => {
            log::warn!("candidate {index} diverged at epoch {epoch}: {message}");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(TrialRecord {
        index,
        phase,
        ratios: recipe.ratios.clone(),
        cost,
        recipe_std: recipe_std(&recipe.ratios)?,
        accuracy,
        accuracy_drop: accuracy.map_or(f64::INFINITY, |a| accuracy_drop(dense_acc, a)),
        schedule: schedule.kind,
        epochs: schedule.epochs,
        seed,
    })
}

/// Sample `n` recipes from `space` and retrain each one. Records already in
/// `done` (matched by index) are reused; new records are appended to `log`
/// in index order.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_population(
    exp: &Experiment,
    dense: &NetworkWeights<f32>,
    dense_acc: f64,
    space: &SpaceSpec,
    n: usize,
    schedule: &ScheduleSpec,
    seed: u64,
    phase: Phase,
    done: Vec<TrialRecord>,
    mut log: Option<&mut TrialLog>,
) -> Result<Vec<TrialRecord>> {
    let recipes = sample_population(&exp.arch, space, n, seed)?;
    let mut records: Vec<Option<TrialRecord>> = vec![None; n];
    for r in done {
        let i = r.index as usize;
        if i >= n || r.ratios != recipes[i].ratios {
            return Err(Error::Validation(format!("logged trial {} does not belong to this population", r.index)));
        }
        records[i] = Some(r);
    }
    let todo: Vec<usize> = (0..n).filter(|&i| records[i].is_none()).collect();
    let chunk = rayon::current_num_threads().max(1);
    for idx in todo.chunks(chunk) {
        let fresh = idx
            .par_iter()
            .map(|&i| {
                let index = i as u64;
                retrain_candidate(exp, dense, dense_acc, &recipes[i], schedule, candidate_seed(seed, index), phase, index)
            })
            .collect::<Result<Vec<_>>>()?;
        for (&i, rec) in idx.iter().zip(fresh) {
            log::info!("candidate {i}: c_flops {:.4}, drop {:.3}", rec.cost.c_flops, rec.accuracy_drop);
            if let Some(l) = log.as_deref_mut() {
                l.append(&rec)?;
            }
            records[i] = Some(rec);
        }
    }
    Ok(records.into_iter().map(|r| r.expect("all candidates evaluated")).collect())
}

/// Screening phase: `n` candidates with the short schedule.
pub fn screen_candidates(
    config: &PipelineConfig,
    exp: &Experiment,
    dense: &NetworkWeights<f32>,
    dense_acc: f64,
    done: Vec<TrialRecord>,
    log: Option<&mut TrialLog>,
) -> Result<Vec<TrialRecord>> {
    evaluate_population(
        exp,
        dense,
        dense_acc,
        &config.space,
        config.n,
        &config.short_schedule,
        config.seed,
        Phase::Screen,
        done,
        log,
    )
}

/// Re-prune the screening top-k from the dense weights and retrain each with
/// the full schedule. Returns the full records ranked best first.
pub fn retrain_top_k(
    config: &PipelineConfig,
    exp: &Experiment,
    screening: &[TrialRecord],
    dense: &NetworkWeights<f32>,
    dense_acc: f64,
) -> Result<Vec<TrialRecord>> {
    let top = top_k_winners(screening, config.top_k)?;
    let full = top
        .par_iter()
        .map(|r| {
            retrain_candidate(
                exp,
                dense,
                dense_acc,
                &r.recipe(),
                &config.full_schedule,
                candidate_seed(config.seed, r.index),
                Phase::Full,
                r.index,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    top_k_winners(&full, full.len())
}

/// Training epochs spent by each phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochBudget {
    pub dense: usize,
    pub screening: usize,
    pub full: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub config: PipelineConfig,
    pub config_hash: String,
    pub dense_accuracy: f64,
    #[serde(skip)]
    pub screening: Vec<TrialRecord>,
    /// Fully retrained top-k, best first.
    pub full: Vec<TrialRecord>,
    pub winner: TrialRecord,
    pub epochs: EpochBudget,
}

/// Thread pool sized by `PRUNESPACE_WORKERS` (default: available parallelism).
pub fn worker_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let n = match workers {
        Some(n) => n,
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| Error::Validation(format!("{WORKERS_ENV} must be a positive integer, got '{v}'")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Validation(format!("cannot start {n} workers: {e}")))
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineResult> {
    run_pipeline_with_workers(config, None)
}

/// Run all phases, persisting artifacts to `config.out_dir` when set. An
/// existing trial log and baseline from the same configuration are resumed.
pub fn run_pipeline_with_workers(config: &PipelineConfig, workers: Option<usize>) -> Result<PipelineResult> {
    let exp = Experiment::from_config(config)?;
    let hash = config.hash()?;
    worker_pool(workers)?.install(|| {
        let t0 = Instant::now();
        if let Some(dir) = &config.out_dir {
            std::fs::create_dir_all(dir)?;
        }
        let baseline_path = config.out_dir.as_ref().map(|d| d.join("baseline.json"));
        let reuse = baseline_path
            .as_ref()
            .filter(|p| p.exists())
            .map(|p| Checkpoint::load(p))
            .transpose()?
            .filter(|c| c.config_hash.as_deref() == Some(hash.as_str()) && c.accuracy.is_some());
        let (dense, dense_acc) = match reuse {
            Some(c) => (c.weights, c.accuracy.unwrap()),
            None => {
                let (w, acc) = train_dense_baseline(&exp, &config.dense_schedule, config.seed)?;
                if let Some(p) = &baseline_path {
                    let mut c = Checkpoint::new(exp.arch.clone(), w.clone());
                    c.config_hash = Some(hash.clone());
                    c.accuracy = Some(acc);
                    c.save(p)?;
                }
                (w, acc)
            }
        };
        log::info!("dense accuracy {dense_acc:.4} after {:.1}s", t0.elapsed().as_secs_f64());

        let screening = match &config.out_dir {
            Some(dir) => {
                let (mut log, done) = TrialLog::resume(&dir.join("trials.jsonl"), &hash)?;
                screen_candidates(config, &exp, &dense, dense_acc, done, Some(&mut log))?
            }
            None => screen_candidates(config, &exp, &dense, dense_acc, Vec::new(), None)?,
        };
        log::info!("screening done after {:.1}s", t0.elapsed().as_secs_f64());
        let full = retrain_top_k(config, &exp, &screening, &dense, dense_acc)?;
        log::info!("full retraining done after {:.1}s", t0.elapsed().as_secs_f64());

        let epochs = EpochBudget {
            dense: config.dense_schedule.epochs,
            screening: screening.iter().map(|r| r.epochs).sum(),
            full: full.iter().map(|r| r.epochs).sum(),
            total: 0,
        };
        let result = PipelineResult {
            config: config.clone(),
            config_hash: hash.clone(),
            dense_accuracy: dense_acc,
            winner: full[0].clone(),
            full,
            screening,
            epochs: EpochBudget {
                total: epochs.dense + epochs.screening + epochs.full,
                ..epochs
            },
        };
        if let Some(dir) = &config.out_dir {
            write_reports(dir, &result)?;
        }
        Ok(result)
    })
}

/// `winners.json`, `edf.csv`, `hist.csv`, `quantiles.csv` and `winners.csv`.
pub fn write_reports(dir: &Path, result: &PipelineResult) -> Result<()> {
    let mut doc = serde_json::to_value(result)?;
    doc["schema_version"] = io::SCHEMA_VERSION.into();
    // artifacts must not depend on where they are written
    if let Some(c) = doc["config"].as_object_mut() {
        c.remove("out_dir");
    }
    io::write_atomic(&dir.join("winners.json"), (serde_json::to_string_pretty(&doc)? + "\n").as_bytes())?;
    io::write_atomic(&dir.join("edf.csv"), io::edf_csv(&edf(&result.screening)?).as_bytes())?;
    let fields = [SummaryField::CFlops, SummaryField::CParams, SummaryField::Mcb, SummaryField::RecipeStd];
    let summaries = fields
        .iter()
        .map(|&f| distribution_summary(&result.screening, f, 20))
        .collect::<Result<Vec<_>>>()?;
    io::write_atomic(&dir.join("hist.csv"), io::hist_csv(&summaries).as_bytes())?;
    io::write_atomic(&dir.join("quantiles.csv"), io::quantiles_csv(&summaries).as_bytes())?;
    io::write_atomic(&dir.join("winners.csv"), io::winners_csv(&result.full).as_bytes())?;
    Ok(())
}
