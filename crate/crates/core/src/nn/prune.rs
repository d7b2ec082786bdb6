//! L2-norm filter ranking and one-shot structural pruning.

use super::{NetworkWeights, Scalar};
use crate::arch::{ArchitectureSpec, SubnetworkPlan};
use crate::error::{Error, Result};
use crate::recipe::PruningRecipe;

/// Per-filter L2 norms of prunable unit `unit`, pooled over the members of a
/// coupling group: `norm_j = sqrt(sum over members of |F_{m,j}|^2)`.
pub fn filter_l2_norms<T: Scalar>(weights: &NetworkWeights<T>, arch: &ArchitectureSpec, unit: usize) -> Result<Vec<f64>> {
    let u = arch
        .prunable_units()
        .get(unit)
        .ok_or_else(|| Error::Validation(format!("unit {unit} out of range (architecture has {})", arch.num_units())))?;
    weights.validate(arch)?;
    let mut sq = vec![0.0f64; u.c_out];
    for &m in &u.layers {
        let len = arch.layers[m].filter_len();
        for (j, s) in sq.iter_mut().enumerate() {
            *s += weights.layers[m].weight[j * len..(j + 1) * len]
                .iter()
                .map(|v| {
                    let v = v.to_f64().unwrap();
                    v * v
                })
                .sum::<f64>();
        }
    }
    Ok(sq.into_iter().map(f64::sqrt).collect())
}

/// Indices of the `kept` largest norms, ascending. Equal norms prefer the lower index.
pub fn select_kept(norms: &[f64], kept: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..norms.len()).collect();
    idx.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    idx.truncate(kept);
    idx.sort_unstable();
    idx
}

/// A materialized subnetwork.
#[derive(Debug, Clone)]
pub struct PrunedNetwork<T = f32> {
    pub weights: NetworkWeights<T>,
    pub arch: ArchitectureSpec,
    pub plan: SubnetworkPlan,
}

/// The norm-ranked plan for `recipe` on the given weights.
pub fn norm_plan<T: Scalar>(weights: &NetworkWeights<T>, arch: &ArchitectureSpec, recipe: &PruningRecipe) -> Result<SubnetworkPlan> {
    recipe.validate_for(arch, 1.0)?;
    let kept = arch.kept_per_unit(&recipe.ratios);
    let indices = (0..arch.num_units())
        .map(|u| Ok(select_kept(&filter_l2_norms(weights, arch, u)?, kept[u])))
        .collect::<Result<Vec<_>>>()?;
    Ok(arch.plan_from_unit_kept(&kept, Some(&indices)))
}

/// Remove the lowest-norm filters of every unit together with their bias and
/// affine entries and the matching input kernels of each consumer.
pub fn one_shot_prune<T: Scalar>(
    weights: &NetworkWeights<T>,
    arch: &ArchitectureSpec,
    recipe: &PruningRecipe,
) -> Result<PrunedNetwork<T>> {
    let plan = norm_plan(weights, arch, recipe)?;
    let pruned_arch = arch.apply_plan(&plan)?;
    let layers = arch
        .layers
        .iter()
        .zip(&weights.layers)
        .map(|(l, p)| {
            let rows = &plan.layers[l.id].kept_indices;
            let cols = plan.kept_in_indices(arch, l.id);
            let kk = l.filter_len() / l.c_in;
            let mut weight = Vec::with_capacity(rows.len() * cols.len() * kk);
            for &r in rows {
                let filter = &p.weight[r * l.filter_len()..(r + 1) * l.filter_len()];
                for &c in &cols {
                    weight.extend_from_slice(&filter[c * kk..(c + 1) * kk]);
                }
            }
            let pick = |v: &Vec<T>| rows.iter().map(|&r| v[r]).collect::<Vec<T>>();
            super::LayerParams {
                weight,
                bias: p.bias.as_ref().map(pick),
                scale: p.scale.as_ref().map(pick),
                shift: p.shift.as_ref().map(pick),
            }
        })
        .collect();
    Ok(PrunedNetwork {
        weights: NetworkWeights { layers },
        arch: pruned_arch,
        plan,
    })
}

/// Dense weights with every filter absent from `plan` zeroed, along with its
/// bias, scale and shift.
pub fn mask_dense<T: Scalar>(weights: &NetworkWeights<T>, arch: &ArchitectureSpec, plan: &SubnetworkPlan) -> NetworkWeights<T> {
    let mut out = weights.clone();
    for (l, p) in arch.layers.iter().zip(out.layers.iter_mut()) {
        let keep = &plan.layers[l.id].kept_indices;
        let len = l.filter_len();
        for j in (0..l.c_out).filter(|j| keep.binary_search(j).is_err()) {
            p.weight[j * len..(j + 1) * len].iter_mut().for_each(|v| *v = T::zero());
            for t in [&mut p.bias, &mut p.scale, &mut p.shift].into_iter().flatten() {
                t[j] = T::zero();
            }
        }
    }
    out
}
