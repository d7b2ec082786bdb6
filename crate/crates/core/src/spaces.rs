//! Population analytics over retrained subnetworks: accuracy drops, empirical
//! distribution functions, summaries and winner extraction.

use std::cmp::Ordering;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::arch::ArchitectureSpec;
use crate::cost::{recipe_cost, CostReport};
use crate::error::{Error, Result};
use crate::nn::ScheduleKind;
use crate::recipe::{uniform_base_ratio, PruningRecipe};

/// Which stage of a search produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Short retraining of a sampled candidate.
    Screen,
    /// Complete retraining of a top-ranked candidate.
    Full,
    /// Population sampled for analysis only.
    Explore,
}

/// One retrained subnetwork.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRecord {
    /// Candidate index within its population; also the sampler stream.
    pub index: u64,
    pub phase: Phase,
    pub ratios: Vec<f64>,
    pub cost: CostReport,
    pub recipe_std: f64,
    /// Validation accuracy of the retrained subnetwork; absent on divergence.
    pub accuracy: Option<f64>,
    /// Percentage points lost against the dense network; `+inf` on divergence.
    #[serde(with = "drop_serde")]
    pub accuracy_drop: f64,
    pub schedule: ScheduleKind,
    pub epochs: usize,
    pub seed: u64,
}

mod drop_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("invalid accuracy drop '{s}'"))),
        }
    }
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Screen => "screen",
            Phase::Full => "full",
            Phase::Explore => "explore",
        }
    }
}

impl TrialRecord {
    pub fn recipe(&self) -> PruningRecipe {
        PruningRecipe::new(self.ratios.clone())
    }

    pub fn diverged(&self) -> bool {
        self.accuracy.is_none()
    }

    /// Stored cost equals the cost recomputed from the recipe.
    pub fn cost_consistent(&self, arch: &ArchitectureSpec) -> Result<bool> {
        let c = recipe_cost(arch, &self.recipe())?;
        Ok(c == self.cost)
    }
}

/// `(dense - sub) * 100`; negative when the subnetwork beats the dense network.
pub fn accuracy_drop(dense_acc: f64, sub_acc: f64) -> f64 {
    (dense_acc - sub_acc) * 100.0
}

/// Empirical distribution of accuracy drops, `F(e) = #{e_i < e} / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdfCurve {
    /// Ascending.
    pub drops: Vec<f64>,
}

impl EdfCurve {
    pub fn from_drops(drops: &[f64]) -> Result<Self> {
        if drops.is_empty() {
            return Err(Error::Validation("EDF needs at least one trial".into()));
        }
        if drops.iter().any(|d| d.is_nan()) {
            return Err(Error::Validation("accuracy drops must not be NaN".into()));
        }
        let mut drops = drops.to_vec();
        drops.sort_by(f64::total_cmp);
        Ok(EdfCurve { drops })
    }

    pub fn n(&self) -> usize {
        self.drops.len()
    }

    /// Number of drops strictly below `e`.
    pub fn count_below(&self, e: f64) -> usize {
        self.drops.partition_point(|&d| d < e)
    }

    pub fn eval(&self, e: f64) -> f64 {
        self.count_below(e) as f64 / self.n() as f64
    }

    /// One row per distinct drop: `(e, F(e), F just above e)`.
    pub fn steps(&self) -> Vec<(f64, f64, f64)> {
        let n = self.n() as f64;
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.drops.len() {
            let e = self.drops[i];
            let j = self.drops.partition_point(|&d| d <= e);
            out.push((e, i as f64 / n, j as f64 / n));
            i = j;
        }
        out
    }
}

pub fn edf(trials: &[TrialRecord]) -> Result<EdfCurve> {
    EdfCurve::from_drops(&trials.iter().map(|t| t.accuracy_drop).collect::<Vec<_>>())
}

pub fn edf_eval(curve: &EdfCurve, e: f64) -> f64 {
    curve.eval(e)
}

/// Record attribute summarized by [`distribution_summary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryField {
    CFlops,
    CParams,
    Mcb,
    RecipeStd,
    AccuracyDrop,
}

impl SummaryField {
    pub const ALL: [SummaryField; 5] = [
        SummaryField::CFlops,
        SummaryField::CParams,
        SummaryField::Mcb,
        SummaryField::RecipeStd,
        SummaryField::AccuracyDrop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SummaryField::CFlops => "c_flops",
            SummaryField::CParams => "c_params",
            SummaryField::Mcb => "mcb",
            SummaryField::RecipeStd => "recipe_std",
            SummaryField::AccuracyDrop => "accuracy_drop",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown summary field '{s}'")))
    }

    pub fn of(self, t: &TrialRecord) -> f64 {
        match self {
            SummaryField::CFlops => t.cost.c_flops,
            SummaryField::CParams => t.cost.c_params,
            SummaryField::Mcb => t.cost.mcb,
            SummaryField::RecipeStd => t.recipe_std,
            SummaryField::AccuracyDrop => t.accuracy_drop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub field: SummaryField,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub bins: Vec<HistogramBin>,
}

/// Linear-interpolation quantile of ascending `sorted` at `p` in `[0, 1]`:
/// position `(n - 1) * p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 >= sorted.len() {
        return sorted[lo];
    }
    let (a, b) = (sorted[lo], sorted[lo + 1]);
    if a == b || b.is_infinite() {
        return b;
    }
    a + frac * (b - a)
}

/// Histogram over `[min, max]` in `bins` equal-width bins (the last bin is
/// closed) plus min / quartiles / max. Non-finite values are excluded.
pub fn distribution_summary(trials: &[TrialRecord], field: SummaryField, bins: usize) -> Result<DistributionSummary> {
    if bins == 0 {
        return Err(Error::Validation("histogram needs at least one bin".into()));
    }
    let mut v: Vec<f64> = trials.iter().map(|t| field.of(t)).filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return Err(Error::Validation(format!("no finite {} values to summarize", field.name())));
    }
    v.sort_by(f64::total_cmp);
    let (min, max) = (v[0], v[v.len() - 1]);
    let width = (max - min) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in &v {
        let b = if width > 0.0 { (((x - min) / width) as usize).min(bins - 1) } else { 0 };
        counts[b] += 1;
    }
    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo: min + width * i as f64,
            hi: if i + 1 == bins { max } else { min + width * (i + 1) as f64 },
            count,
        })
        .collect();
    Ok(DistributionSummary {
        field,
        n: v.len(),
        min,
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
        max,
        bins,
    })
}

fn rank(a: &TrialRecord, b: &TrialRecord) -> Ordering {
    a.accuracy_drop
        .total_cmp(&b.accuracy_drop)
        .then(a.cost.c_flops.total_cmp(&b.cost.c_flops))
        .then(a.seed.cmp(&b.seed))
        .then(a.index.cmp(&b.index))
}

/// The `k` smallest drops; ties go to smaller c_flops, then lower seed, then lower index.
pub fn top_k_winners(trials: &[TrialRecord], k: usize) -> Result<Vec<TrialRecord>> {
    if k > trials.len() {
        return Err(Error::Validation(format!("top-{k} requested from {} trials", trials.len())));
    }
    let mut sorted = trials.to_vec();
    sorted.sort_by(rank);
    sorted.truncate(k);
    Ok(sorted)
}

/// Winner mCB statistics for one FLOPs regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub target_cflops: f64,
    /// `1 - target_cflops`.
    pub flops_reduction: f64,
    pub k: usize,
    pub mcb_q1: f64,
    pub mcb_median: f64,
    pub mcb_q3: f64,
    pub best_drop: f64,
    /// mCB of the uniform recipe meeting the same target.
    pub uniform_mcb: f64,
}

/// Per regime: quartiles of the top-`k` winners' mCB, the best drop, and the
/// uniform recipe's mCB. Rows follow descending target c_flops.
pub fn winner_mcb_by_regime(
    arch: &ArchitectureSpec,
    regimes: &[(f64, Vec<TrialRecord>)],
    k: usize,
    delta: f64,
) -> Result<Vec<RegimeRow>> {
    if regimes.is_empty() {
        return Err(Error::Validation("need at least one regime".into()));
    }
    if k == 0 {
        return Err(Error::Validation("k must be >= 1".into()));
    }
    let mut rows = regimes
        .iter()
        .map(|(target, trials)| {
            if trials.len() < k {
                return Err(Error::Validation(format!(
                    "regime c_flops = {target} has {} trials, fewer than k = {k}",
                    trials.len()
                )));
            }
            let winners = top_k_winners(trials, k)?;
            let mut m: Vec<f64> = winners.iter().map(|t| t.cost.mcb).collect();
            m.sort_by(f64::total_cmp);
            let base = uniform_base_ratio(arch, *target, delta)?;
            let uniform = recipe_cost(arch, &PruningRecipe::uniform(arch, base.u))?;
            Ok(RegimeRow {
                target_cflops: *target,
                flops_reduction: 1.0 - target,
                k,
                mcb_q1: quantile_sorted(&m, 0.25),
                mcb_median: quantile_sorted(&m, 0.5),
                mcb_q3: quantile_sorted(&m, 0.75),
                best_drop: winners[0].accuracy_drop,
                uniform_mcb: uniform.mcb,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.target_cflops.total_cmp(&a.target_cflops));
    Ok(rows)
}

/// `F_A - F_B` over a set of thresholds for one ordered pair of spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub a: String,
    pub b: String,
    pub thresholds: Vec<f64>,
    pub diffs: Vec<f64>,
    pub pooled_median: f64,
    /// `F_A >= F_B` at the pooled median.
    pub a_dominates_at_median: bool,
    /// `F_A >= F_B` at every threshold.
    pub a_dominates_everywhere: bool,
}

/// Compare every pair `(A, B)`, `A` listed before `B`, at the pooled
/// 10 %, 20 %, ..., 90 % drop quantiles.
pub fn compare_spaces(spaces: &[(String, Vec<f64>)]) -> Result<Vec<PairComparison>> {
    if spaces.len() < 2 {
        return Err(Error::Validation("comparison needs at least two spaces".into()));
    }
    let curves = spaces
        .iter()
        .map(|(name, d)| {
            EdfCurve::from_drops(d).map_err(|_| Error::Validation(format!("space '{name}' has no usable drops")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for i in 0..spaces.len() {
        for j in i + 1..spaces.len() {
            let mut pooled: Vec<f64> = curves[i].drops.iter().chain(&curves[j].drops).copied().collect();
            pooled.sort_by(f64::total_cmp);
            let thresholds: Vec<f64> = (1..10).map(|q| quantile_sorted(&pooled, q as f64 / 10.0)).collect();
            let diffs: Vec<f64> = thresholds.iter().map(|&e| curves[i].eval(e) - curves[j].eval(e)).collect();
            let med = quantile_sorted(&pooled, 0.5);
            out.push(PairComparison {
                a: spaces[i].0.clone(),
                b: spaces[j].0.clone(),
                a_dominates_at_median: curves[i].eval(med) >= curves[j].eval(med),
                a_dominates_everywhere: diffs.iter().all(|&d| d >= 0.0),
                thresholds,
                diffs,
                pooled_median: med,
            });
        }
    }
    Ok(out)
}
