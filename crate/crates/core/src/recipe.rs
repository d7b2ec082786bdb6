//! Pruning recipes, pruning (sub)spaces, and constrained recipe sampling.
//!
//! Sampling starts from a uniform ratio `u` chosen so that the uniform recipe
//! meets the space's FLOPs (or parameter) target, perturbs every entry with
//! Gaussian noise, clamps to `[0, R]`, and rejects draws until all active
//! constraints hold.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureSpec, DEFAULT_RATIO_MAX};
use crate::cost::{CostEvaluator, CostReport};
use crate::error::{Error, Result};

pub const DEFAULT_DELTA: f64 = 0.002;
pub const DEFAULT_SIGMA: f64 = 0.05;
pub const DEFAULT_MAX_ATTEMPTS: u64 = 100_000;

/// Per-unit pruning ratios `r_1..r_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningRecipe {
    pub ratios: Vec<f64>,
}

impl PruningRecipe {
    pub fn new(ratios: Vec<f64>) -> Self {
        PruningRecipe { ratios }
    }

    pub fn uniform(arch: &ArchitectureSpec, ratio: f64) -> Self {
        PruningRecipe::new(vec![ratio; arch.num_units()])
    }

    pub fn len(&self) -> usize {
        self.ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
    }

    pub fn validate_for(&self, arch: &ArchitectureSpec, ratio_max: f64) -> Result<()> {
        if self.ratios.len() != arch.num_units() {
            return Err(Error::Validation(format!(
                "recipe has {} ratios but {} has {} prunable units",
                self.ratios.len(),
                arch.name,
                arch.num_units()
            )));
        }
        if let Some((i, r)) = self
            .ratios
            .iter()
            .enumerate()
            .find(|(_, r)| !(r.is_finite() && **r >= 0.0 && **r <= ratio_max))
        {
            return Err(Error::Validation(format!(
                "ratio r_{} = {r} outside [0, {ratio_max}]",
                i + 1
            )));
        }
        Ok(())
    }

    pub fn std(&self) -> Result<f64> {
        recipe_std(&self.ratios)
    }
}

/// Population standard deviation of the ratios.
///
/// Computed from pairwise differences so that a constant vector yields
/// exactly zero.
pub fn recipe_std(ratios: &[f64]) -> Result<f64> {
    if ratios.is_empty() {
        return Err(Error::Validation("standard deviation of an empty recipe".into()));
    }
    let n = ratios.len() as f64;
    let mut acc = 0.0;
    for (i, a) in ratios.iter().enumerate() {
        for b in &ratios[i + 1..] {
            acc += (a - b) * (a - b);
        }
    }
    Ok((acc / (n * n)).sqrt())
}

/// Constraint set defining a pruning (sub)space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_cflops: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_cparams: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_cap: Option<f64>,
    /// `(center, half_width)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mcb_band: Option<(f64, f64)>,
    #[serde(default = "default_ratio_max")]
    pub ratio_max: f64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u64,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_ratio_max() -> f64 {
    DEFAULT_RATIO_MAX
}
fn default_max_attempts() -> u64 {
    DEFAULT_MAX_ATTEMPTS
}

impl SpaceSpec {
    /// The initial space: `c_flops = target ± 0.002`.
    pub fn flops(target: f64) -> Self {
        SpaceSpec {
            target_cflops: Some(target),
            delta: DEFAULT_DELTA,
            target_cparams: None,
            delta_p: DEFAULT_DELTA,
            std_cap: None,
            mcb_band: None,
            ratio_max: DEFAULT_RATIO_MAX,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }

    pub fn params(target: f64) -> Self {
        SpaceSpec {
            target_cflops: None,
            target_cparams: Some(target),
            ..SpaceSpec::flops(1.0)
        }
    }

    pub fn with_std_cap(mut self, cap: f64) -> Self {
        self.std_cap = Some(cap);
        self
    }

    pub fn with_mcb_band(mut self, center: f64, half_width: f64) -> Self {
        self.mcb_band = Some((center, half_width));
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.target_cflops.is_none() && self.target_cparams.is_none() {
            return bad("space needs target_cflops or target_cparams".into());
        }
        for (name, t, d) in [
            ("target_cflops", self.target_cflops, self.delta),
            ("target_cparams", self.target_cparams, self.delta_p),
        ] {
            if let Some(t) = t {
                if !(t > 0.0 && t <= 1.0) {
                    return bad(format!("{name} = {t} outside (0, 1]"));
                }
                if !(d >= 0.0 && d.is_finite()) {
                    return bad(format!("band half-width for {name} must be >= 0"));
                }
            }
        }
        if let Some(c) = self.std_cap {
            if !(c >= 0.0 && c.is_finite()) {
                return bad(format!("std_cap = {c} must be >= 0"));
            }
        }
        if let Some((c, w)) = self.mcb_band {
            if !(c > 0.0 && c.is_finite() && w >= 0.0 && w.is_finite()) {
                return bad(format!("mcb band ({c}, {w}) must have positive center and non-negative width"));
            }
        }
        if !(self.ratio_max >= 0.0 && self.ratio_max < 1.0) {
            return bad(format!("ratio_max = {} outside [0, 1)", self.ratio_max));
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be >= 1".into());
        }
        Ok(())
    }

    /// Perturbation scale used by the sampler.
    pub fn sigma(&self) -> f64 {
        self.std_cap.unwrap_or(DEFAULT_SIGMA)
    }
}

/// Per-constraint membership report. `None` means the constraint is inactive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    pub c_flops: Option<bool>,
    pub c_params: Option<bool>,
    pub std: Option<bool>,
    pub mcb: Option<bool>,
    pub cost: CostReport,
    pub recipe_std: f64,
}

fn check(cost: &CostReport, std: f64, space: &SpaceSpec) -> Membership {
    let band = |v: f64, c: f64, w: f64| (v - c).abs() <= w;
    let c_flops = space.target_cflops.map(|t| band(cost.c_flops, t, space.delta));
    let c_params = space.target_cparams.map(|t| band(cost.c_params, t, space.delta_p));
    let std_ok = space.std_cap.map(|cap| std <= cap);
    let mcb = space.mcb_band.map(|(c, w)| band(cost.mcb, c, w));
    let member = [c_flops, c_params, std_ok, mcb].iter().all(|p| p.unwrap_or(true));
    Membership {
        member,
        c_flops,
        c_params,
        std: std_ok,
        mcb,
        cost: *cost,
        recipe_std: std,
    }
}

/// Evaluate every active constraint of `space` for `recipe`.
pub fn is_member(arch: &ArchitectureSpec, space: &SpaceSpec, recipe: &PruningRecipe) -> Result<Membership> {
    space.validate()?;
    recipe.validate_for(arch, space.ratio_max)?;
    if arch.num_units() == 0 {
        return Err(Error::Validation(format!("{} has no prunable units", arch.name)));
    }
    let ev = CostEvaluator::new(arch);
    let cost = ev.eval_ratios(&recipe.ratios);
    Ok(check(&cost, recipe_std(&recipe.ratios)?, space))
}

/// Result of searching the uniform ratio that meets a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseRatio {
    pub u: f64,
    /// Metric (c_flops or c_params) of the uniform recipe at `u`.
    pub value: f64,
    /// False when the rounding step function jumps over the band; `u` is then
    /// the plateau boundary where the jump happens.
    pub in_band: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMetric {
    Flops,
    Params,
}

fn metric_of(cost: &CostReport, m: TargetMetric) -> f64 {
    match m {
        TargetMetric::Flops => cost.c_flops,
        TargetMetric::Params => cost.c_params,
    }
}

/// Uniform ratio whose recipe lands in `target ± delta` for c_flops.
pub fn uniform_base_ratio(arch: &ArchitectureSpec, target: f64, delta: f64) -> Result<BaseRatio> {
    uniform_base_ratio_for(arch, TargetMetric::Flops, target, delta, DEFAULT_RATIO_MAX)
}

/// Bisection over the plateaus of the monotone step function
/// `u -> metric(uniform(u))` on `[0, ratio_max]`.
///
/// Plateau boundaries are where some unit's rounded channel count changes,
/// so they are enumerated exactly and each plateau is probed at its midpoint
/// (the first plateau at `u = 0`, others at their shortest decimal).
pub fn uniform_base_ratio_for(
    arch: &ArchitectureSpec,
    metric: TargetMetric,
    target: f64,
    delta: f64,
    ratio_max: f64,
) -> Result<BaseRatio> {
    if arch.num_units() == 0 {
        return Err(Error::Feasibility(format!("{} has no prunable units", arch.name)));
    }
    let ev = CostEvaluator::new(arch);
    let n = arch.num_units();

    let mut bounds: Vec<f64> = Vec::new();
    for u in arch.prunable_units() {
        let c = u.c_out as f64;
        for j in 1..u.c_out {
            let b = 1.0 - (j as f64 + 0.5) / c;
            if b > 0.0 && b < ratio_max {
                bounds.push(b);
            }
        }
    }
    bounds.sort_by(f64::total_cmp);
    bounds.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    // plateau i spans (edge[i], edge[i+1]]
    let mut edges = Vec::with_capacity(bounds.len() + 2);
    edges.push(0.0);
    edges.extend_from_slice(&bounds);
    edges.push(ratio_max);
    let plateaus = edges.len() - 1;
    let probe = |i: usize| if i == 0 { 0.0 } else { simplest_between(edges[i], edges[i + 1]) };
    let value = |u: f64| metric_of(&ev.eval_ratios(&vec![u; n]), metric);

    let hi_bound = target + delta;
    let lo_bound = target - delta;
    if value(0.0) < lo_bound {
        return Err(Error::Feasibility(format!(
            "target {target} ± {delta} is above the dense network"
        )));
    }
    let last_val = value(probe(plateaus - 1));
    if last_val > hi_bound {
        return Err(Error::Feasibility(format!(
            "target {target} ± {delta} unreachable on {}: uniform ratio {ratio_max} still gives {last_val:.6}",
            arch.name
        )));
    }

    // smallest plateau index whose value is <= hi_bound
    let (mut lo, mut hi) = (0usize, plateaus - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if value(probe(mid)) <= hi_bound {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let v = value(probe(lo));
    if v >= lo_bound {
        return Ok(BaseRatio {
            u: probe(lo),
            value: v,
            in_band: true,
        });
    }
    // the band falls between plateau lo-1 (above) and lo (below)
    let above = value(probe(lo - 1));
    Ok(BaseRatio {
        u: edges[lo],
        value: if (above - target).abs() <= (v - target).abs() { above } else { v },
        in_band: false,
    })
}

/// The decimal with the fewest digits strictly inside `(lo, hi)`, nearest the
/// midpoint; falls back to the midpoint itself.
fn simplest_between(lo: f64, hi: f64) -> f64 {
    let mid = 0.5 * (lo + hi);
    let margin = 1e-9;
    for digits in 1..=9 {
        let scale = 10f64.powi(digits);
        let first = ((lo + margin) * scale).ceil() as i64;
        let last = ((hi - margin) * scale).floor() as i64;
        if first <= last {
            let k = ((mid * scale).round() as i64).clamp(first, last);
            return k as f64 / scale;
        }
    }
    mid
}

/// Reusable constrained sampler for one `(arch, space)` pair.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    ev: CostEvaluator<'a>,
    space: SpaceSpec,
    base: BaseRatio,
}

impl<'a> Sampler<'a> {
    pub fn new(arch: &'a ArchitectureSpec, space: &SpaceSpec) -> Result<Self> {
        space.validate()?;
        let (metric, target, delta) = match (space.target_cflops, space.target_cparams) {
            (Some(t), _) => (TargetMetric::Flops, t, space.delta),
            (None, Some(t)) => (TargetMetric::Params, t, space.delta_p),
            (None, None) => unreachable!("validated"),
        };
        let base = uniform_base_ratio_for(arch, metric, target, delta, space.ratio_max)?;
        Ok(Sampler {
            ev: CostEvaluator::new(arch),
            space: space.clone(),
            base,
        })
    }

    pub fn base(&self) -> BaseRatio {
        self.base
    }

    /// First accepted draw for `(seed, index)`.
    pub fn sample(&self, seed: u64, index: u64) -> Result<PruningRecipe> {
        let n = self.ev.arch().num_units();
        let r_max = self.space.ratio_max;
        let sigma = self.space.sigma();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::Validation(format!("bad sigma {sigma}: {e}")))?;
        let mut ratios = vec![0.0; n];
        for _ in 0..self.space.max_attempts {
            for r in ratios.iter_mut() {
                let eps = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                *r = (self.base.u + eps).clamp(0.0, r_max);
            }
            let cost = self.ev.eval_ratios(&ratios);
            if check(&cost, recipe_std(&ratios)?, &self.space).member {
                return Ok(PruningRecipe::new(ratios));
            }
        }
        Err(Error::Feasibility(format!(
            "no recipe accepted after {} attempts (seed {seed}, index {index}); space is over-constrained",
            self.space.max_attempts
        )))
    }
}

pub fn sample_recipe(arch: &ArchitectureSpec, space: &SpaceSpec, seed: u64, index: u64) -> Result<PruningRecipe> {
    Sampler::new(arch, space)?.sample(seed, index)
}

/// `n` accepted recipes, recipe `i` drawn from stream `(seed, i)`.
pub fn sample_population(arch: &ArchitectureSpec, space: &SpaceSpec, n: usize, seed: u64) -> Result<Vec<PruningRecipe>> {
    if n == 0 {
        return Err(Error::Validation("population size must be >= 1".into()));
    }
    let sampler = Sampler::new(arch, space)?;
    (0..n as u64).into_par_iter().map(|i| sampler.sample(seed, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;

    fn mean_std(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn std_examples() {
        assert_eq!(recipe_std(&[0.5, 0.5, 0.5]).unwrap(), 0.0);
        assert!((recipe_std(&[0.4, 0.6]).unwrap() - 0.1).abs() < 1e-12);
        let v = recipe_std(&[0.2, 0.5, 0.8]).unwrap();
        assert!((v - mean_std(&[0.2, 0.5, 0.8])).abs() < 1e-12);
        assert!((v - 0.244_948_974_278_317_8).abs() < 1e-12);
        assert!(recipe_std(&[]).is_err());
    }

    #[test]
    fn base_ratio_examples() {
        let a = builtin::chain3();
        let b = uniform_base_ratio(&a, 0.33381, 0.002).unwrap();
        assert!(b.in_band);
        assert_eq!(b.u, 0.5);

        for arch in [builtin::chain3(), builtin::resnet_tiny()] {
            let b = uniform_base_ratio(&arch, 1.0, 0.002).unwrap();
            assert_eq!(b.u, 0.0);
            assert_eq!(b.value, 1.0);
        }

        let e = uniform_base_ratio(&a, 0.001, 0.002).unwrap_err();
        assert!(matches!(e, Error::Feasibility(_)), "{e}");
    }

    #[test]
    fn std_zero_space_gives_uniform() {
        let a = builtin::chain3();
        let space = SpaceSpec::flops(0.334).with_std_cap(0.0);
        let r = sample_recipe(&a, &space, 3, 0).unwrap();
        assert_eq!(r.ratios, vec![0.5, 0.5]);
    }

    #[test]
    fn identity_band_means_no_pruning() {
        let a = builtin::resnet_tiny();
        let r = sample_recipe(&a, &SpaceSpec::flops(1.0), 11, 0).unwrap();
        let plan = a.resolve_plan(&r).unwrap();
        assert_eq!(plan, crate::arch::SubnetworkPlan::dense(&a));
    }

    #[test]
    fn membership_examples() {
        let a = builtin::chain3();
        let r = PruningRecipe::new(vec![0.5, 0.5]);
        let m = is_member(&a, &SpaceSpec::flops(0.334), &r).unwrap();
        assert!(m.member);
        assert_eq!(m.std, None);
        let m = is_member(&a, &SpaceSpec::flops(0.334).with_std_cap(0.01), &r).unwrap();
        assert!(m.member);
        assert_eq!(m.std, Some(true));
        let m = is_member(&a, &SpaceSpec::flops(0.5), &r).unwrap();
        assert!(!m.member);
        assert_eq!(m.c_flops, Some(false));

        let e = is_member(&a, &SpaceSpec::flops(0.334), &PruningRecipe::new(vec![0.99, 0.5])).unwrap_err();
        assert!(matches!(e, Error::Validation(_)));
    }

    #[test]
    fn space_validation() {
        let mut s = SpaceSpec::flops(0.5);
        s.target_cflops = None;
        assert!(s.validate().is_err());
        assert!(SpaceSpec::flops(1.5).validate().is_err());
        assert!(SpaceSpec::flops(0.5).with_std_cap(-0.1).validate().is_err());
        assert!(SpaceSpec::params(0.3).validate().is_ok());
    }

    #[test]
    fn space_json_defaults() {
        let s: SpaceSpec = serde_json::from_str(r#"{"target_cflops":0.25,"std_cap":0.01}"#).unwrap();
        assert_eq!(s.delta, 0.002);
        assert_eq!(s.ratio_max, 0.95);
        assert_eq!(s.max_attempts, 100_000);
        assert!(serde_json::from_str::<SpaceSpec>(r#"{"target_cflops":0.25,"bogus":1}"#).is_err());
    }

    #[test]
    fn population_singleton_matches_recipe() {
        let a = builtin::resnet_tiny();
        let s = SpaceSpec::flops(0.5).with_mcb_band(1.0, 0.1);
        let pop = sample_population(&a, &s, 1, 42).unwrap();
        assert_eq!(pop, vec![sample_recipe(&a, &s, 42, 0).unwrap()]);
    }

    #[test]
    fn overconstrained_times_out() {
        let a = builtin::chain3();
        let mut s = SpaceSpec::flops(0.5).with_std_cap(0.0);
        s.max_attempts = 50;
        let e = sample_recipe(&a, &s, 1, 0).unwrap_err();
        assert!(matches!(e, Error::Feasibility(_)), "{e}");
    }

    #[test]
    fn params_target_space() {
        let a = builtin::resnet_tiny();
        let s = SpaceSpec::params(0.4);
        let r = sample_recipe(&a, &s, 5, 0).unwrap();
        let m = is_member(&a, &s, &r).unwrap();
        assert!(m.member && m.c_params == Some(true));
    }
}
