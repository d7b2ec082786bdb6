//! Abstract network architectures and pruning-plan resolution.
//!
//! An [`ArchitectureSpec`] is an ordered list of conv/fc layers plus a set of
//! channel-flow edges. A layer with several producers consumes the elementwise
//! sum of their outputs, which is how residual adds are expressed. Layers whose
//! outputs are summed must share a coupling group so that pruning keeps the add
//! well-typed; every group is pruned as a single unit with shared filter
//! indices.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recipe::PruningRecipe;

/// Default upper bound `R` on any single pruning ratio.
pub const DEFAULT_RATIO_MAX: f64 = 0.95;

/// Slack used when rounding `(1 - r) * c_out`; values within this distance of
/// a half-integer round up.
const ROUNDING_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
}

/// Max pooling applied after a layer's activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub id: usize,
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool: Option<PoolSpec>,
    /// Spatial size of the layer input (after summing producers).
    pub in_h: usize,
    pub in_w: usize,
    /// Spatial size before pooling.
    pub conv_h: usize,
    pub conv_w: usize,
    /// Spatial size of the layer output (after pooling, if any).
    pub out_h: usize,
    pub out_w: usize,
    pub has_bias: bool,
    /// Per-channel scale and shift after the linear op.
    pub affine: bool,
    pub prunable: bool,
    pub coupling_group: Option<usize>,
}

impl LayerSpec {
    /// Number of weights in one filter (`c_in * k * k`).
    pub fn filter_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }
}

/// One independently-ratioed pruning unit: a free layer or a coupling group.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunableUnit {
    pub index: usize,
    /// Member layer indices, ascending.
    pub layers: Vec<usize>,
    pub group: Option<usize>,
    pub c_out: usize,
}

/// A validated architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    pub name: String,
    /// `(channels, height, width)`.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub edges: Vec<(usize, usize)>,
    pub classifier_id: usize,
    order: Vec<usize>,
    producers: Vec<Vec<usize>>,
    consumers: Vec<Vec<usize>>,
    units: Vec<PrunableUnit>,
    unit_of_layer: Vec<Option<usize>>,
}

/// Per-layer result of resolving a recipe against an architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub kept_out: usize,
    /// Sorted retained filter indices.
    pub kept_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetworkPlan {
    pub layers: Vec<LayerPlan>,
}

impl SubnetworkPlan {
    /// The unpruned plan.
    pub fn dense(arch: &ArchitectureSpec) -> Self {
        SubnetworkPlan {
            layers: arch
                .layers
                .iter()
                .map(|l| LayerPlan {
                    kept_out: l.c_out,
                    kept_indices: (0..l.c_out).collect(),
                })
                .collect(),
        }
    }

    /// Number of filters removed from layer `i`.
    pub fn pruned_count(&self, arch: &ArchitectureSpec, i: usize) -> usize {
        arch.layers[i].c_out - self.layers[i].kept_out
    }

    /// Effective input channel count of layer `i` under this plan.
    pub fn kept_in(&self, arch: &ArchitectureSpec, i: usize) -> usize {
        match arch.producers(i).first() {
            Some(&p) => self.layers[p].kept_out,
            None => arch.input_shape[0],
        }
    }

    /// Input channel indices (into the dense producer) retained for layer `i`.
    pub fn kept_in_indices(&self, arch: &ArchitectureSpec, i: usize) -> Vec<usize> {
        match arch.producers(i).first() {
            Some(&p) => self.layers[p].kept_indices.clone(),
            None => (0..arch.input_shape[0]).collect(),
        }
    }

    pub(crate) fn check_against(&self, arch: &ArchitectureSpec) -> Result<()> {
        if self.layers.len() != arch.layers.len() {
            return Err(Error::validation(format!(
                "plan has {} layers, architecture {} has {}",
                self.layers.len(),
                arch.name,
                arch.layers.len()
            )));
        }
        for (l, p) in arch.layers.iter().zip(&self.layers) {
            if p.kept_out < 1 || p.kept_out > l.c_out || p.kept_indices.len() != p.kept_out {
                return Err(Error::validation(format!(
                    "plan entry for layer {} is inconsistent (kept {}, c_out {})",
                    l.id, p.kept_out, l.c_out
                )));
            }
            if p.kept_indices.windows(2).any(|w| w[0] >= w[1])
                || p.kept_indices.iter().any(|&j| j >= l.c_out)
            {
                return Err(Error::validation(format!(
                    "kept indices of layer {} must be sorted, unique and < c_out",
                    l.id
                )));
            }
        }
        for u in &arch.units {
            let first = &self.layers[u.layers[0]].kept_indices;
            if u.layers.iter().any(|&m| &self.layers[m].kept_indices != first) {
                return Err(Error::validation(format!(
                    "coupled layers of unit {} disagree on kept indices",
                    u.index
                )));
            }
        }
        Ok(())
    }
}

/// `max(1, round_half_up((1 - r) * c_out))`.
pub fn kept_channels(c_out: usize, ratio: f64) -> usize {
    let kept = ((1.0 - ratio) * c_out as f64 + 0.5 + ROUNDING_SLACK).floor();
    (kept.max(1.0) as usize).min(c_out)
}

impl ArchitectureSpec {
    /// Build and validate an architecture from its interchange document.
    pub fn from_document(doc: ArchDocument) -> Result<Self> {
        let ArchDocument {
            name,
            input,
            layers: raw,
            edges,
            classifier,
        } = doc;

        if input.contains(&0) {
            return Err(Error::validation("input shape entries must be >= 1"));
        }
        if raw.is_empty() {
            return Err(Error::validation("architecture has no layers"));
        }
        let n = raw.len();
        for (i, l) in raw.iter().enumerate() {
            if l.id != i {
                return Err(Error::validation(format!(
                    "layer ids must equal their position: found id {} at position {}",
                    l.id, i
                )));
            }
            if l.c_in == 0 || l.c_out == 0 || l.k == 0 || l.stride == 0 {
                return Err(Error::validation(format!(
                    "layer {}: c_in, c_out, k and stride must be >= 1",
                    l.id
                )));
            }
            if l.kind == LayerKind::Fc && (l.k != 1 || l.stride != 1 || l.pad != 0 || l.pool.is_some()) {
                return Err(Error::validation(format!(
                    "layer {}: fc layers require k = 1, stride = 1, pad = 0 and no pooling",
                    l.id
                )));
            }
            if let Some([pk, ps, _]) = l.pool {
                if pk == 0 || ps == 0 {
                    return Err(Error::validation(format!("layer {}: bad pool spec", l.id)));
                }
            }
        }

        let mut producers = vec![Vec::new(); n];
        let mut consumers = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for &[a, b] in &edges {
            if a >= n || b >= n {
                return Err(Error::validation(format!("edge [{a}, {b}] references a missing layer")));
            }
            if a == b {
                return Err(Error::validation(format!("cyclic graph: self-edge on layer {a}")));
            }
            if !seen.insert((a, b)) {
                return Err(Error::validation(format!("duplicate edge [{a}, {b}]")));
            }
            producers[b].push(a);
            consumers[a].push(b);
        }
        for p in &mut producers {
            p.sort_unstable();
        }
        for c in &mut consumers {
            c.sort_unstable();
        }

        // Kahn's algorithm, smallest ready id first.
        let mut indegree: Vec<usize> = producers.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &c in &consumers[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != n {
            return Err(Error::validation("cyclic graph: edges do not form a DAG"));
        }

        if classifier >= n {
            return Err(Error::validation(format!("classifier id {classifier} out of range")));
        }
        if raw[classifier].kind != LayerKind::Fc {
            return Err(Error::validation("classifier must be an fc layer"));
        }
        if raw[classifier].prunable {
            return Err(Error::validation("classifier output channels are not prunable"));
        }
        if !consumers[classifier].is_empty() {
            return Err(Error::validation("classifier must not feed other layers"));
        }
        for (i, c) in consumers.iter().enumerate() {
            if i != classifier && c.is_empty() {
                return Err(Error::validation(format!(
                    "layer {i} has no consumers and is not the classifier"
                )));
            }
        }

        // Channel and spatial propagation.
        let mut layers: Vec<LayerSpec> = Vec::with_capacity(n);
        let mut spatial = vec![(0usize, 0usize); n];
        let mut built: Vec<Option<LayerSpec>> = vec![None; n];
        for &i in &order {
            let l = &raw[i];
            let (in_c, in_h, in_w) = match producers[i].as_slice() {
                [] => (input[0], input[1], input[2]),
                ps => {
                    let c0 = raw[ps[0]].c_out;
                    let s0 = spatial[ps[0]];
                    for &p in &ps[1..] {
                        if raw[p].c_out != c0 {
                            return Err(Error::validation(format!(
                                "layer {i} sums producers with different c_out ({} vs {})",
                                c0, raw[p].c_out
                            )));
                        }
                        if spatial[p] != s0 {
                            return Err(Error::validation(format!(
                                "spatial-shape inconsistency: producers of layer {i} disagree ({:?} vs {:?})",
                                s0, spatial[p]
                            )));
                        }
                    }
                    (c0, s0.0, s0.1)
                }
            };
            if l.c_in != in_c {
                return Err(Error::validation(format!(
                    "layer {i}: declared c_in {} but receives {in_c} channels",
                    l.c_in
                )));
            }
            let (conv_h, conv_w) = match l.kind {
                LayerKind::Fc => (1, 1),
                LayerKind::Conv => {
                    let oh = conv_out(in_h, l.k, l.stride, l.pad);
                    let ow = conv_out(in_w, l.k, l.stride, l.pad);
                    match (oh, ow) {
                        (Some(h), Some(w)) => (h, w),
                        _ => {
                            return Err(Error::validation(format!(
                                "spatial-shape inconsistency: layer {i} kernel {} does not fit input {in_h}x{in_w}",
                                l.k
                            )))
                        }
                    }
                }
            };
            let pool = l.pool.map(|[kernel, stride, padding]| PoolSpec { kernel, stride, padding });
            let (out_h, out_w) = match pool {
                None => (conv_h, conv_w),
                Some(p) => match (
                    conv_out(conv_h, p.kernel, p.stride, p.padding),
                    conv_out(conv_w, p.kernel, p.stride, p.padding),
                ) {
                    (Some(h), Some(w)) if p.padding < p.kernel => (h, w),
                    _ => {
                        return Err(Error::validation(format!(
                            "spatial-shape inconsistency: pooling of layer {i} does not fit"
                        )))
                    }
                },
            };
            spatial[i] = (out_h, out_w);
            built[i] = Some(LayerSpec {
                id: i,
                kind: l.kind,
                c_in: l.c_in,
                c_out: l.c_out,
                kernel: l.k,
                stride: l.stride,
                padding: l.pad,
                pool,
                in_h,
                in_w,
                conv_h,
                conv_w,
                out_h,
                out_w,
                has_bias: l.bias,
                affine: l.affine,
                prunable: l.prunable,
                coupling_group: l.group,
            });
        }
        layers.extend(built.into_iter().map(|l| l.expect("every layer visited")));

        // Coupling groups.
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for l in &layers {
            if let Some(g) = l.coupling_group {
                groups.entry(g).or_default().push(l.id);
            }
        }
        for (g, members) in &groups {
            let c = layers[members[0]].c_out;
            if members.iter().any(|&m| layers[m].c_out != c) {
                return Err(Error::validation(format!(
                    "coupling group {g} has members with mismatched c_out"
                )));
            }
            let prunable = layers[members[0]].prunable;
            if members.iter().any(|&m| layers[m].prunable != prunable) {
                return Err(Error::validation(format!(
                    "coupling group {g} mixes prunable and fixed layers"
                )));
            }
            if members.contains(&classifier) {
                return Err(Error::validation("classifier cannot belong to a coupling group"));
            }
        }
        for (i, ps) in producers.iter().enumerate() {
            if ps.len() > 1 {
                let g0 = layers[ps[0]].coupling_group;
                if g0.is_none() || ps.iter().any(|&p| layers[p].coupling_group != g0) {
                    return Err(Error::validation(format!(
                        "layer {i} adds outputs of layers {ps:?}, which must share a coupling group"
                    )));
                }
            }
        }

        let mut units = Vec::new();
        let mut unit_of_layer = vec![None; n];
        let mut group_unit: BTreeMap<usize, usize> = BTreeMap::new();
        for l in &layers {
            if !l.prunable || l.id == classifier {
                continue;
            }
            match l.coupling_group {
                Some(g) => {
                    if let Some(&u) = group_unit.get(&g) {
                        unit_of_layer[l.id] = Some(u);
                        continue;
                    }
                    let idx = units.len();
                    group_unit.insert(g, idx);
                    units.push(PrunableUnit {
                        index: idx,
                        layers: groups[&g].clone(),
                        group: Some(g),
                        c_out: l.c_out,
                    });
                    unit_of_layer[l.id] = Some(idx);
                }
                None => {
                    let idx = units.len();
                    units.push(PrunableUnit {
                        index: idx,
                        layers: vec![l.id],
                        group: None,
                        c_out: l.c_out,
                    });
                    unit_of_layer[l.id] = Some(idx);
                }
            }
        }

        Ok(ArchitectureSpec {
            name,
            input_shape: input,
            layers,
            edges: edges.iter().map(|&[a, b]| (a, b)).collect(),
            classifier_id: classifier,
            order,
            producers,
            consumers,
            units,
            unit_of_layer,
        })
    }

    /// Parse and validate a JSON architecture document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ArchDocument = serde_json::from_str(text)
            .map_err(|e| Error::validation(format!("architecture schema violation: {e}")))?;
        Self::from_document(doc)
    }

    pub fn to_document(&self) -> ArchDocument {
        ArchDocument {
            name: self.name.clone(),
            input: self.input_shape,
            layers: self
                .layers
                .iter()
                .map(|l| LayerDocument {
                    id: l.id,
                    kind: l.kind,
                    c_in: l.c_in,
                    c_out: l.c_out,
                    k: l.kernel,
                    stride: l.stride,
                    pad: l.padding,
                    bias: l.has_bias,
                    affine: l.affine,
                    prunable: l.prunable,
                    group: l.coupling_group,
                    pool: l.pool.map(|p| [p.kernel, p.stride, p.padding]),
                })
                .collect(),
            edges: self.edges.iter().map(|&(a, b)| [a, b]).collect(),
            classifier: self.classifier_id,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("architecture serializes")
    }

    /// Layer indices in topological order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn producers(&self, layer: usize) -> &[usize] {
        &self.producers[layer]
    }

    pub fn consumers(&self, layer: usize) -> &[usize] {
        &self.consumers[layer]
    }

    /// Prunable units in layer-id order of their first member; the classifier
    /// is never a unit.
    pub fn prunable_units(&self) -> &[PrunableUnit] {
        &self.units
    }

    /// `N`, the recipe length for this architecture.
    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    pub fn unit_of_layer(&self, layer: usize) -> Option<usize> {
        self.unit_of_layer[layer]
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.classifier_id].c_out
    }

    /// Resolve a recipe into per-layer kept channel counts.
    ///
    /// Kept indices are the identity prefix; weight-aware selection happens in
    /// the training kernel's one-shot pruning.
    pub fn resolve_plan(&self, recipe: &PruningRecipe) -> Result<SubnetworkPlan> {
        self.resolve_plan_with_max(recipe, DEFAULT_RATIO_MAX)
    }

    pub fn resolve_plan_with_max(&self, recipe: &PruningRecipe, ratio_max: f64) -> Result<SubnetworkPlan> {
        recipe.validate_for(self, ratio_max)?;
        let kept = self.kept_per_unit(&recipe.ratios);
        Ok(self.plan_from_unit_kept(&kept, None))
    }

    pub(crate) fn kept_per_unit(&self, ratios: &[f64]) -> Vec<usize> {
        self.units
            .iter()
            .zip(ratios)
            .map(|(u, &r)| kept_channels(u.c_out, r))
            .collect()
    }

    /// Build a plan from per-unit kept counts and optional per-unit indices.
    pub(crate) fn plan_from_unit_kept(&self, kept: &[usize], indices: Option<&[Vec<usize>]>) -> SubnetworkPlan {
        SubnetworkPlan {
            layers: self
                .layers
                .iter()
                .map(|l| match self.unit_of_layer[l.id] {
                    Some(u) => LayerPlan {
                        kept_out: kept[u],
                        kept_indices: match indices {
                            Some(ix) => ix[u].clone(),
                            None => (0..kept[u]).collect(),
                        },
                    },
                    None => LayerPlan {
                        kept_out: l.c_out,
                        kept_indices: (0..l.c_out).collect(),
                    },
                })
                .collect(),
        }
    }

    /// The shrunken architecture obtained by applying `plan`.
    pub fn apply_plan(&self, plan: &SubnetworkPlan) -> Result<ArchitectureSpec> {
        plan.check_against(self)?;
        let mut doc = self.to_document();
        for (i, l) in doc.layers.iter_mut().enumerate() {
            l.c_out = plan.layers[i].kept_out;
            l.c_in = plan.kept_in(self, i);
        }
        ArchitectureSpec::from_document(doc)
    }
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// JSON interchange form of an architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchDocument {
    pub name: String,
    pub input: [usize; 3],
    pub layers: Vec<LayerDocument>,
    pub edges: Vec<[usize; 2]>,
    pub classifier: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDocument {
    pub id: usize,
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub affine: bool,
    pub prunable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
    /// `[kernel, stride, pad]` of a max pool following the activation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<[usize; 3]>,
}

fn is_false(b: &bool) -> bool {
    !*b
}
