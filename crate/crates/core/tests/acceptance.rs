//! Acceptance gate. Each criterion prints one PASS/FAIL line; any failure
//! makes the process exit non-zero. Criterion 11 is reported, never gating.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use prunespace::builtin;
use prunespace::cost::{dense_cost, layer_cost, network_cost, recipe_cost};
use prunespace::io::{self as pio, Checkpoint};
use prunespace::nn::{
    forward, init_weights, loss_and_grads, lr_at, mask_dense, one_shot_prune, Batch, NetworkWeights, ScheduleSpec,
};
use prunespace::pipeline::{self, evaluate_population, Experiment, PipelineConfig};
use prunespace::recipe::{is_member, sample_population};
use prunespace::spaces::{compare_spaces, winner_mcb_by_regime, EdfCurve, Phase, TrialRecord};
use prunespace::{ArchitectureSpec, LayerKind, PruningRecipe, SpaceSpec};
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;
type Criterion = (u32, &'static str, bool, Box<dyn Fn() -> Check>);

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> std::result::Result<(), String> {
    ensure(
        elapsed.as_secs_f64() <= limit_s,
        format!("{what} took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 1

/// Counts every multiply-accumulate and every parameter of the subnetwork by
/// walking output positions, kernel taps and kept channels one by one.
fn brute_force_cost(arch: &ArchitectureSpec, ratios: &[f64]) -> (u64, u64) {
    let units = arch.prunable_units();
    let n = arch.layers.len();
    let out_ch: Vec<usize> = (0..n)
        .map(|i| match arch.unit_of_layer(i) {
            Some(u) => ((1.0 - ratios[u]) * units[u].c_out as f64 + 0.5).floor().max(1.0) as usize,
            None => arch.layers[i].c_out,
        })
        .collect();
    let mut out_hw = vec![(0usize, 0usize); n];
    let (mut flops, mut params) = (0u64, 0u64);
    let positions = |size: usize, k: usize, s: usize, p: usize| (0..).take_while(|o| o * s + k <= size + 2 * p).count();
    for &i in arch.order() {
        let l = &arch.layers[i];
        let (in_ch, (mut h, mut w)) = match arch.producers(i) {
            [] => (arch.input_shape[0], (arch.input_shape[1], arch.input_shape[2])),
            [p, ..] => (out_ch[*p], out_hw[*p]),
        };
        if l.kind == LayerKind::Fc {
            h = 1;
            w = 1;
        }
        let oh = positions(h, l.kernel, l.stride, l.padding);
        let ow = positions(w, l.kernel, l.stride, l.padding);
        for _y in 0..oh {
            for _x in 0..ow {
                for _co in 0..out_ch[i] {
                    for _ci in 0..in_ch {
                        for _t in 0..l.kernel * l.kernel {
                            flops += 1;
                        }
                    }
                }
            }
        }
        for _co in 0..out_ch[i] {
            for _ci in 0..in_ch {
                for _t in 0..l.kernel * l.kernel {
                    params += 1;
                }
            }
            params += l.has_bias as u64 + 2 * l.affine as u64;
        }
        out_hw[i] = match l.pool {
            Some(p) => (positions(oh, p.kernel, p.stride, p.padding), positions(ow, p.kernel, p.stride, p.padding)),
            None => (oh, ow),
        };
    }
    (flops, params)
}

fn grid(units: usize) -> impl Iterator<Item = Vec<f64>> {
    const LEVELS: [f64; 4] = [0.0, 0.25, 0.5, 0.75];
    (0..4usize.pow(units as u32)).map(move |mut code| {
        (0..units)
            .map(|_| {
                let v = LEVELS[code % 4];
                code /= 4;
                v
            })
            .collect()
    })
}

fn criterion_1() -> Check {
    let t0 = Instant::now();
    let mut checked = 0;
    for arch in [builtin::chain3(), builtin::resnet_tiny()] {
        for ratios in grid(arch.num_units()) {
            let plan = arch.resolve_plan(&PruningRecipe::new(ratios.clone())).map_err(|e| e.to_string())?;
            let c = network_cost(&arch, &plan).map_err(|e| e.to_string())?;
            let oracle = brute_force_cost(&arch, &ratios);
            ensure((c.flops, c.params) == oracle, format!("{} {ratios:?}: {:?} vs {oracle:?}", arch.name, (c.flops, c.params)))?;
            checked += 1;
        }
    }
    within(t0.elapsed(), 10.0, "grid")?;
    Ok(format!("{checked} recipes match exactly"))
}

// ---------------------------------------------------------------- 2

fn plain_chain() -> ArchitectureSpec {
    ArchitectureSpec::from_json(
        r#"{"name":"plain","input":[3,6,6],"layers":[
        {"id":0,"kind":"conv","c_in":3,"c_out":8,"k":3,"stride":1,"pad":1,"bias":true,"prunable":true},
        {"id":1,"kind":"conv","c_in":8,"c_out":8,"k":3,"stride":1,"pad":1,"bias":true,"prunable":true},
        {"id":2,"kind":"conv","c_in":8,"c_out":8,"k":3,"stride":1,"pad":1,"bias":true,"prunable":true},
        {"id":3,"kind":"fc","c_in":8,"c_out":4,"k":1,"stride":1,"pad":0,"bias":true,"prunable":false}],
        "edges":[[0,1],[1,2],[2,3]],"classifier":3}"#,
    )
    .unwrap()
}

fn layer_macs(arch: &ArchitectureSpec, ratios: Vec<f64>) -> Vec<u64> {
    let plan = arch.resolve_plan(&PruningRecipe::new(ratios)).unwrap();
    (0..arch.layers.len())
        .map(|i| layer_cost(&arch.layers[i], plan.kept_in(arch, i), plan.layers[i].kept_out).unwrap().0)
        .collect()
}

fn criterion_2() -> Check {
    let arch = plain_chain();
    let dense = layer_macs(&arch, vec![0.0; 3]);
    for layer in 0..2 {
        for m in [2u64, 4, 6] {
            let mut r = vec![0.0; 3];
            r[layer] = m as f64 / 8.0;
            let pruned = layer_macs(&arch, r);
            for (i, (&p, &d)) in pruned.iter().zip(&dense).enumerate() {
                let expect = if i == layer || i == layer + 1 { d * (8 - m) } else { d * 8 };
                ensure(p * 8 == expect, format!("layer {layer}, m = {m}: layer {i} has {p} MACs of {d}"))?;
            }
        }
    }
    Ok("layers i and i+1 scale by (8-m)/8 for m in {2,4,6}".into())
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Check {
    let t0 = Instant::now();
    let arch = builtin::resnet50_shape();
    let c = recipe_cost(&arch, &PruningRecipe::uniform(&arch, 0.5)).map_err(|e| e.to_string())?;
    within(t0.elapsed(), 1.0, "cost")?;
    ensure((c.c_flops - 0.259).abs() <= 0.015, format!("c_flops {}", c.c_flops))?;
    Ok(format!("c_flops {:.4}", c.c_flops))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Check {
    for arch in [builtin::chain3(), builtin::resnet_tiny(), builtin::resnet50_shape()] {
        let d = dense_cost(&arch);
        ensure(d.mcb == 1.0 && d.c_flops == 1.0 && d.c_params == 1.0, format!("{}: dense {d:?}", arch.name))?;
        let zero = PruningRecipe::uniform(&arch, 0.0);
        let c = recipe_cost(&arch, &zero).map_err(|e| e.to_string())?;
        ensure(c.c_flops == 1.0 && c.c_params == 1.0, format!("{}: zero recipe {c:?}", arch.name))?;
    }
    for arch in [builtin::chain3(), builtin::resnet_tiny()] {
        let w: NetworkWeights<f32> = init_weights(&arch, 5);
        let p = one_shot_prune(&w, &arch, &PruningRecipe::uniform(&arch, 0.0)).map_err(|e| e.to_string())?;
        ensure(p.arch == arch, format!("{}: zero recipe changed the architecture", arch.name))?;
        let same = p.weights.num_params() == w.num_params() && p.weights.values().zip(w.values()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, format!("{}: zero recipe changed the weights", arch.name))?;
    }
    Ok("dense mCB 1.0; zero recipe is the identity".into())
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Check {
    let t0 = Instant::now();
    let spaces = [
        SpaceSpec::flops(0.25),
        SpaceSpec::flops(0.25).with_std_cap(0.01),
        SpaceSpec::flops(0.25).with_mcb_band(1.0, 0.1),
    ];
    let mut total = 0;
    for arch in [builtin::resnet_tiny(), builtin::resnet50_shape()] {
        for space in &spaces {
            let pop = sample_population(&arch, space, 1000, 17).map_err(|e| e.to_string())?;
            ensure(pop.len() == 1000, "short population")?;
            for r in &pop {
                let m = is_member(&arch, space, r).map_err(|e| e.to_string())?;
                ensure(m.member, format!("{}: {r:?} rejected: {m:?}", arch.name))?;
            }
            let again = sample_population(&arch, space, 1000, 17).map_err(|e| e.to_string())?;
            ensure(pop == again, format!("{}: resampling differs", arch.name))?;
            total += pop.len();
        }
    }
    within(t0.elapsed(), 60.0, "sampling")?;
    Ok(format!("{total} recipes, all members, reproducible"))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Check {
    let mut runner = TestRunner::new(PtConfig {
        cases: 1000,
        failure_persistence: None,
        ..PtConfig::default()
    });
    let drops = prop::collection::vec(prop_oneof![(-5i32..30).prop_map(|v| v as f64 * 0.5), -10.0f64..60.0], 1..40);
    let probes = prop::collection::vec(-20.0f64..80.0, 1..20);
    runner
        .run(&(drops, probes), |(drops, mut probes)| {
            let curve = EdfCurve::from_drops(&drops).unwrap();
            let n = drops.len() as f64;
            probes.extend(drops.iter().copied());
            probes.sort_by(f64::total_cmp);
            let mut last = 0.0;
            for &e in &probes {
                let f = curve.eval(e);
                let below = drops.iter().filter(|&&d| d < e).count();
                prop_assert_eq!(f, below as f64 / n);
                prop_assert!(f >= last);
                let scaled = f * n;
                prop_assert!((scaled - scaled.round()).abs() < 1e-9);
                last = f;
            }
            let lo = drops.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = drops.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(curve.eval(lo), 0.0);
            prop_assert_eq!(curve.eval(hi + 1e-9), 1.0);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("1000 random trial sets".into())
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Check {
    let arch = builtin::resnet_tiny();
    let per: usize = arch.input_shape.iter().product();
    let mut worst = 0.0f64;
    for case in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let w: NetworkWeights<f32> = init_weights(&arch, case);
        let recipe = PruningRecipe::new((0..arch.num_units()).map(|_| rng.random_range(0.0..0.9)).collect());
        let p = one_shot_prune(&w, &arch, &recipe).map_err(|e| e.to_string())?;
        let masked = mask_dense(&w, &arch, &p.plan);
        let batch = Batch {
            inputs: (0..4 * per).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            labels: vec![0; 4],
            shape: arch.input_shape,
        };
        let (lp, _) = forward(&p.weights, &p.arch, &batch).map_err(|e| e.to_string())?;
        let (lm, _) = forward(&masked, &arch, &batch).map_err(|e| e.to_string())?;
        for (x, y) in lp.iter().zip(&lm) {
            let rel = ((x - y).abs() / y.abs().max(f32::MIN_POSITIVE)) as f64;
            worst = worst.max(if x == y { 0.0 } else { rel });
        }
    }
    ensure(worst <= 1e-5, format!("worst relative error {worst:e}"))?;
    Ok(format!("50 pairs, worst relative error {worst:e}"))
}

// ---------------------------------------------------------------- 8

/// Conv with bias and affine, a coupled residual add, max pooling and a
/// global-average-pooled fc head.
fn grad_net() -> ArchitectureSpec {
    ArchitectureSpec::from_json(
        r#"{"name":"grad","input":[2,5,5],"layers":[
        {"id":0,"kind":"conv","c_in":2,"c_out":3,"k":3,"stride":1,"pad":1,"bias":true,"affine":true,"prunable":true,"group":0},
        {"id":1,"kind":"conv","c_in":3,"c_out":3,"k":3,"stride":1,"pad":1,"bias":false,"affine":true,"prunable":true,"group":0},
        {"id":2,"kind":"conv","c_in":3,"c_out":4,"k":3,"stride":1,"pad":1,"bias":true,"prunable":true,"pool":[2,2,0]},
        {"id":3,"kind":"fc","c_in":4,"c_out":3,"k":1,"stride":1,"pad":0,"bias":true,"prunable":false}],
        "edges":[[0,1],[0,2],[1,2],[2,3]],"classifier":3}"#,
    )
    .unwrap()
}

fn grad_setup(seed: u64) -> (ArchitectureSpec, NetworkWeights<f64>, Batch<f64>) {
    let a = grad_net();
    let mut w: NetworkWeights<f64> = init_weights(&a, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    // move biases and affine off their initial values
    for l in w.layers.iter_mut() {
        for t in [&mut l.bias, &mut l.scale, &mut l.shift].into_iter().flatten() {
            t.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
    }
    let batch = Batch {
        inputs: (0..3 * 50).map(|_| rng.random_range(-1.0..1.0)).collect(),
        labels: vec![0, 1, 2],
        shape: [2, 5, 5],
    };
    (a, w, batch)
}

fn finite_differences(a: &ArchitectureSpec, w: &NetworkWeights<f64>, batch: &Batch<f64>, h: f64) -> Vec<f64> {
    (0..w.num_params())
        .map(|i| {
            let mut plus = w.clone();
            *plus.values_mut().nth(i).unwrap() += h;
            let mut minus = w.clone();
            *minus.values_mut().nth(i).unwrap() -= h;
            let (lp, _) = loss_and_grads(&plus, a, batch).unwrap();
            let (lm, _) = loss_and_grads(&minus, a, batch).unwrap();
            (lp - lm) / (2.0 * h)
        })
        .collect()
}

/// Largest per-tensor normwise relative error.
fn worst_grad_error(analytic: &NetworkWeights<f64>, fd: &[f64]) -> f64 {
    let mut offset = 0;
    let mut worst = 0.0f64;
    for l in &analytic.layers {
        for t in [Some(&l.weight), l.bias.as_ref(), l.scale.as_ref(), l.shift.as_ref()].into_iter().flatten() {
            let f = &fd[offset..offset + t.len()];
            let diff = t.iter().zip(f).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let norm = f.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8);
            worst = worst.max(diff / norm);
            offset += t.len();
        }
    }
    worst
}

fn criterion_8() -> Check {
    let (mut e64, mut e32) = (0.0f64, 0.0f64);
    let (a, w, _) = grad_setup(0);
    ensure(w.num_params() <= 500, format!("{} parameters", w.num_params()))?;
    ensure(a.producers(2) == [0, 1], "net lacks the residual add")?;
    for seed in 0..5 {
        let (a, w, batch) = grad_setup(seed);
        let fd = finite_differences(&a, &w, &batch, 1e-5);
        let (_, g) = loss_and_grads(&w, &a, &batch).map_err(|e| e.to_string())?;
        e64 = e64.max(worst_grad_error(&g, &fd));
        let batch32 = Batch {
            inputs: batch.inputs.iter().map(|&v| v as f32).collect(),
            labels: batch.labels.clone(),
            shape: batch.shape,
        };
        let (_, g32) = loss_and_grads(&w.cast::<f32>(), &a, &batch32).map_err(|e| e.to_string())?;
        e32 = e32.max(worst_grad_error(&g32.cast(), &fd));
    }
    ensure(e64 < 1e-6 && e32 < 1e-3, format!("double {e64:e}, single {e32:e}"))?;
    Ok(format!("{} params, double {e64:.1e}, single {e32:.1e}", w.num_params()))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Check {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let t = 20;
    let f = ScheduleSpec::finetune(t);
    let lr = |s: &ScheduleSpec, e: f64| lr_at(s, e).map_err(|e| e.to_string());
    ensure(close(lr(&f, 0.0)?, 0.01), "finetune lr(0)")?;
    ensure(close(lr(&f, t as f64 / 2.0)?, 0.005), "finetune lr(t/2)")?;
    let end = lr(&f, t as f64 - 1e-9)?;
    ensure(end < 1e-9, format!("finetune lr near t is {end:e}"))?;
    ensure(lr_at(&f, t as f64).is_err(), "lr(t) is outside the schedule")?;
    let r = ScheduleSpec::rewind(t);
    ensure(r.warmup_epochs == 5, "rewind warmup")?;
    ensure(close(lr(&r, 5.0)?, r.lr0), format!("rewind lr(5) = {}", lr(&r, 5.0)?))?;
    ensure(lr(&r, 2.5)? < r.lr0, "rewind ramps up")?;
    Ok(format!("finetune 0.01 / 0.005 / {end:.1e}; rewind lr(5) = {}", r.lr0))
}

// ---------------------------------------------------------------- 10

struct Desk {
    arch: ArchitectureSpec,
    dense: NetworkWeights<f32>,
    dense_acc: f64,
    screening: Vec<TrialRecord>,
    config: PipelineConfig,
}

static DESK: OnceLock<Desk> = OnceLock::new();

fn criterion_10(dir: &Path) -> Check {
    let config = PipelineConfig::desk("resnet-tiny").map_err(|e| e.to_string())?;
    let exp = Experiment::from_config(&config).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let (_, acc) = pipeline::worker_pool(Some(1))
        .and_then(|p| p.install(|| pipeline::train_dense_baseline(&exp, &config.dense_schedule, config.seed)))
        .map_err(|e| e.to_string())?;
    let dense_time = t0.elapsed();

    let mut run = config.clone();
    run.out_dir = Some(dir.join("desk"));
    let t1 = Instant::now();
    let result = pipeline::run_pipeline_with_workers(&run, Some(1)).map_err(|e| e.to_string())?;
    let pipe_time = t1.elapsed();
    let ck = Checkpoint::load(&dir.join("desk/baseline.json")).map_err(|e| e.to_string())?;
    let _ = DESK.set(Desk {
        arch: exp.arch.clone(),
        dense: ck.weights,
        dense_acc: result.dense_accuracy,
        screening: result.screening.clone(),
        config,
    });

    let summary = format!(
        "dense {:.2}% in {:.0}s; pipeline {:.0}s, winner drop {:.2} (c_flops {:.3}, mCB {:.3})",
        acc * 100.0,
        dense_time.as_secs_f64(),
        pipe_time.as_secs_f64(),
        result.winner.accuracy_drop,
        result.winner.cost.c_flops,
        result.winner.cost.mcb
    );
    ensure(acc >= 0.95, format!("dense accuracy too low: {summary}"))?;
    within(dense_time, 300.0, "dense training")?;
    within(pipe_time, 600.0, "pipeline")?;
    ensure(result.winner.accuracy_drop <= 2.0, format!("winner drop too large: {summary}"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- 11

fn criterion_11() -> Check {
    let desk = DESK.get().ok_or("needs the desk baseline")?;
    let exp = Experiment::new(desk.arch.clone(), &desk.config.dataset).map_err(|e| e.to_string())?;
    let mut sets = Vec::new();
    for cap in [0.01, 0.1] {
        let space = SpaceSpec::flops(0.1).with_std_cap(cap);
        let recs = pipeline::worker_pool(Some(1))
            .and_then(|p| {
                p.install(|| {
                    evaluate_population(
                        &exp,
                        &desk.dense,
                        desk.dense_acc,
                        &space,
                        50,
                        &desk.config.short_schedule,
                        desk.config.seed,
                        Phase::Explore,
                        Vec::new(),
                        None,
                    )
                })
            })
            .map_err(|e| e.to_string())?;
        sets.push((format!("std<={cap}"), recs));
    }
    let drops: Vec<_> = sets.iter().map(|(n, r)| (n.clone(), r.iter().map(|t| t.accuracy_drop).collect())).collect();
    let cmp = compare_spaces(&drops).map_err(|e| e.to_string())?;
    let pair = cmp.iter().find(|p| p.a == "std<=0.01").ok_or("no comparison row")?;
    let regimes = vec![(0.5, desk.screening.clone()), (0.1, sets[1].1.clone())];
    let rows = winner_mcb_by_regime(&desk.arch, &regimes, 5, 0.002).map_err(|e| e.to_string())?;
    let mcb: Vec<String> = rows.iter().map(|r| format!("c_flops {}: winner mCB median {:.3}", r.target_cflops, r.mcb_median)).collect();
    Ok(format!(
        "std<=0.01 {} std<=0.1 at pooled median {:.2} (F diff {:+.2}); {}",
        if pair.a_dominates_at_median { "dominates" } else { "does not dominate" },
        pair.pooled_median,
        pair.diffs[4],
        mcb.join("; ")
    ))
}

// ---------------------------------------------------------------- 12

fn small_config(out: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::desk("chain3").unwrap();
    c.dataset.per_class = 40;
    c.n = 6;
    c.top_k = 2;
    c.short_schedule = ScheduleSpec::finetune(1);
    c.full_schedule = ScheduleSpec::finetune(3);
    c.dense_schedule = ScheduleSpec::scratch(5);
    c.seed = 9;
    c.out_dir = Some(out.to_path_buf());
    c
}

const ARTIFACTS: [&str; 6] = ["trials.jsonl", "edf.csv", "hist.csv", "quantiles.csv", "winners.csv", "winners.json"];

fn criterion_12(dir: &Path) -> Check {
    let arch = builtin::resnet_tiny();
    let space = SpaceSpec::flops(0.5).with_mcb_band(1.0, 0.1);
    let jsonl = |seed| -> String {
        sample_population(&arch, &space, 200, seed)
            .unwrap()
            .iter()
            .map(|r| serde_json::to_string(r).unwrap() + "\n")
            .collect()
    };
    ensure(jsonl(4) == jsonl(4), "sampled JSONL differs")?;
    ensure(jsonl(4) != jsonl(5), "seed has no effect")?;

    let (a, b, c) = (dir.join("a"), dir.join("b"), dir.join("c"));
    for d in [&a, &b] {
        pipeline::run_pipeline_with_workers(&small_config(d), Some(1)).map_err(|e| e.to_string())?;
    }
    pipeline::run_pipeline_with_workers(&small_config(&c), Some(2)).map_err(|e| e.to_string())?;
    for f in ARTIFACTS {
        let x = std::fs::read(a.join(f)).map_err(|e| e.to_string())?;
        ensure(x == std::fs::read(b.join(f)).unwrap(), format!("{f} differs between reruns"))?;
        ensure(x == std::fs::read(c.join(f)).unwrap(), format!("{f} depends on the worker count"))?;
    }
    let (_, recs) = pio::read_trials(&a.join("trials.jsonl")).map_err(|e| e.to_string())?;
    let edf = pio::edf_csv(&prunespace::spaces::edf(&recs).map_err(|e| e.to_string())?);
    ensure(edf.as_bytes() == std::fs::read(a.join("edf.csv")).unwrap(), "edf.csv differs from a fresh report")?;
    Ok(format!("sample JSONL and {} pipeline artifacts byte-identical across reruns and worker counts", ARTIFACTS.len()))
}

// ----------------------------------------------------------------

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = tmp.path().to_path_buf();
    let d10 = dir.clone();
    let d12 = dir.clone();
    let criteria: Vec<Criterion> = vec![
        (1, "cost model equals MAC enumeration", true, Box::new(criterion_1)),
        (2, "pruning m filters scales layers i and i+1", true, Box::new(criterion_2)),
        (3, "resnet50-shape uniform 0.5 c_flops", true, Box::new(criterion_3)),
        (4, "dense mCB and zero-recipe identity", true, Box::new(criterion_4)),
        (5, "sampler soundness", true, Box::new(criterion_5)),
        (6, "EDF laws", true, Box::new(criterion_6)),
        (7, "masking equivalence", true, Box::new(criterion_7)),
        (8, "gradient check", true, Box::new(criterion_8)),
        (9, "schedule values", true, Box::new(criterion_9)),
        (10, "end-to-end desk run", true, Box::new(move || criterion_10(&d10))),
        (11, "std-space dominance at c_flops 0.1", false, Box::new(criterion_11)),
        (12, "determinism", true, Box::new(move || criterion_12(&d12))),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, gating, check) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        let status = match (&outcome, gating) {
            (Ok(_), true) => "PASS",
            (Err(_), true) => {
                failed += 1;
                "FAIL"
            }
            (_, false) => "REPORTED",
        };
        let detail = outcome.unwrap_or_else(|e| e);
        println!("criterion {n:>2} {status:<8} {name} [{secs:.1}s]: {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
