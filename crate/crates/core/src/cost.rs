//! Exact FLOPs (multiply-accumulate) and parameter accounting.
//!
//! Absolute `flops` always counts MACs of conv and fc layers; normalization,
//! activation and pooling are free. Parameters include weights, biases, and
//! the per-channel affine scale/shift of layers that carry one.

use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureSpec, LayerKind, LayerSpec, SubnetworkPlan};
use crate::error::{Error, Result};
use crate::recipe::PruningRecipe;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub flops: u64,
    pub params: u64,
    pub c_flops: f64,
    pub c_params: f64,
    pub mcb: f64,
}

/// MACs and parameters of `layer` with the given effective channel counts.
pub fn layer_cost(layer: &LayerSpec, in_ch: usize, out_ch: usize) -> Result<(u64, u64)> {
    if in_ch < 1 || in_ch > layer.c_in || out_ch < 1 || out_ch > layer.c_out {
        return Err(Error::Validation(format!(
            "layer {}: channels ({in_ch}, {out_ch}) outside [1, {}] x [1, {}]",
            layer.id, layer.c_in, layer.c_out
        )));
    }
    Ok(layer_cost_unchecked(layer, in_ch as u64, out_ch as u64))
}

fn layer_cost_unchecked(layer: &LayerSpec, in_ch: u64, out_ch: u64) -> (u64, u64) {
    let k2 = (layer.kernel * layer.kernel) as u64;
    let weights = in_ch * out_ch * k2;
    let macs = match layer.kind {
        LayerKind::Conv => weights * (layer.conv_h * layer.conv_w) as u64,
        LayerKind::Fc => weights,
    };
    let mut params = weights;
    if layer.has_bias {
        params += out_ch;
    }
    if layer.affine {
        params += 2 * out_ch;
    }
    (macs, params)
}

/// Mean computation budget: `c_flops / c_params`.
pub fn mcb(c_flops: f64, c_params: f64) -> Result<f64> {
    if !(c_flops > 0.0 && c_params > 0.0) || !c_flops.is_finite() || !c_params.is_finite() {
        return Err(Error::Validation(format!(
            "mcb requires positive finite ratios, got ({c_flops}, {c_params})"
        )));
    }
    Ok(c_flops / c_params)
}

/// Integer `(flops, params)` for `arch` under `plan`.
pub fn totals(arch: &ArchitectureSpec, plan: &SubnetworkPlan) -> Result<(u64, u64)> {
    plan.check_against(arch)?;
    let mut flops = 0;
    let mut params = 0;
    for (i, layer) in arch.layers.iter().enumerate() {
        let (m, p) = layer_cost(layer, plan.kept_in(arch, i), plan.layers[i].kept_out)?;
        flops += m;
        params += p;
    }
    Ok((flops, params))
}

pub fn dense_cost(arch: &ArchitectureSpec) -> CostReport {
    network_cost(arch, &SubnetworkPlan::dense(arch)).expect("dense plan is consistent")
}

pub fn network_cost(arch: &ArchitectureSpec, plan: &SubnetworkPlan) -> Result<CostReport> {
    let dense = totals(arch, &SubnetworkPlan::dense(arch))?;
    let sub = totals(arch, plan)?;
    Ok(report(sub, dense))
}

pub fn recipe_cost(arch: &ArchitectureSpec, recipe: &PruningRecipe) -> Result<CostReport> {
    network_cost(arch, &arch.resolve_plan(recipe)?)
}

fn report(sub: (u64, u64), dense: (u64, u64)) -> CostReport {
    let c_flops = sub.0 as f64 / dense.0 as f64;
    let c_params = sub.1 as f64 / dense.1 as f64;
    CostReport {
        flops: sub.0,
        params: sub.1,
        c_flops,
        c_params,
        mcb: c_flops / c_params,
    }
}

/// Precomputed evaluator for the sampler's inner loop: maps per-unit kept
/// counts to a [`CostReport`] without materializing a plan.
#[derive(Debug, Clone)]
pub struct CostEvaluator<'a> {
    arch: &'a ArchitectureSpec,
    dense: (u64, u64),
    /// Per layer: unit feeding its input channels (None = fixed count).
    in_unit: Vec<Option<usize>>,
    in_fixed: Vec<u64>,
    out_unit: Vec<Option<usize>>,
}

impl<'a> CostEvaluator<'a> {
    pub fn new(arch: &'a ArchitectureSpec) -> Self {
        let n = arch.layers.len();
        let mut in_unit = vec![None; n];
        let mut in_fixed = vec![0; n];
        let mut out_unit = vec![None; n];
        for (i, l) in arch.layers.iter().enumerate() {
            out_unit[i] = arch.unit_of_layer(i);
            match arch.producers(i).first() {
                Some(&p) => {
                    in_unit[i] = arch.unit_of_layer(p);
                    in_fixed[i] = arch.layers[p].c_out as u64;
                }
                None => in_fixed[i] = l.c_in as u64,
            }
        }
        let dense = totals(arch, &SubnetworkPlan::dense(arch)).expect("dense plan");
        CostEvaluator {
            arch,
            dense,
            in_unit,
            in_fixed,
            out_unit,
        }
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        self.arch
    }

    pub fn dense_totals(&self) -> (u64, u64) {
        self.dense
    }

    pub fn eval_kept(&self, kept: &[usize]) -> CostReport {
        let mut flops = 0;
        let mut params = 0;
        for (i, l) in self.arch.layers.iter().enumerate() {
            let cin = self.in_unit[i].map_or(self.in_fixed[i], |u| kept[u] as u64);
            let cout = self.out_unit[i].map_or(l.c_out as u64, |u| kept[u] as u64);
            let (m, p) = layer_cost_unchecked(l, cin, cout);
            flops += m;
            params += p;
        }
        report((flops, params), self.dense)
    }

    /// Cost of a ratio vector (no range validation).
    pub fn eval_ratios(&self, ratios: &[f64]) -> CostReport {
        self.eval_kept(&self.arch.kept_per_unit(ratios))
    }
}
