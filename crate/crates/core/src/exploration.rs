//! Periodic connectivity exploration: magnitude pruning of the weakest active
//! weights followed by gradient-magnitude regrowth at zero positions.

use crate::error::{Error, Result};
use crate::optimizer::SparseParam;
use crate::tensor::Tensor;
use crate::topology::top_k_by_magnitude;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decay {
    Cosine,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorationSchedule {
    /// Steps between explorations.
    pub delta_t: u64,
    /// Initial pruning rate, in (0,1).
    pub p0: f64,
    pub decay: Decay,
    /// Step after which exploration stops.
    pub t_end: u64,
}

impl ExplorationSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.delta_t < 1 {
            return Err(Error::Domain("delta_t must be >= 1".into()));
        }
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return Err(Error::Domain(format!("p0 {} outside (0,1)", self.p0)));
        }
        Ok(())
    }

    /// True when step t is an exploration step under this schedule.
    pub fn fires_at(&self, t: u64) -> bool {
        t > 0 && t <= self.t_end && t % self.delta_t == 0
    }
}

/// Pruning rate at step t, or None once the schedule is exhausted (t > t_end).
pub fn pruning_rate(sched: &ExplorationSchedule, t: u64) -> Option<f64> {
    if t > sched.t_end {
        return None;
    }
    match sched.decay {
        Decay::Constant => Some(sched.p0),
        Decay::Cosine => {
            let ratio = if sched.t_end == 0 {
                0.0
            } else {
                t as f64 / sched.t_end as f64
            };
            Some(sched.p0 / 2.0 * (1.0 + (std::f64::consts::PI * ratio).cos()))
        }
    }
}

/// Prunes the weakest active weights: retains the ceil((1-p)*n_active)
/// largest-magnitude active positions, deactivates the rest. Returns the
/// pruned count k.
pub fn prune_topk(param: &mut SparseParam, p: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("pruning rate {} outside [0,1]", p)));
    }
    let n_active = param.active_count();
    if n_active == 0 {
        return Ok(0);
    }
    let retained = ((1.0 - p) * n_active as f64).ceil() as usize;
    let k = n_active - retained;
    if k == 0 {
        return Ok(0);
    }
    let keep = top_k_by_magnitude(
        (0..param.len())
            .filter(|&i| param.mask.get(i))
            .map(|i| (i, param.values.data()[i].abs())),
        retained,
    );
    let keep_set: std::collections::HashSet<usize> = keep.into_iter().collect();
    for i in 0..param.len() {
        if param.mask.get(i) && !keep_set.contains(&i) {
            param.deactivate(i);
        }
    }
    Ok(k)
}

/// Activates the k zero positions with the largest dense-gradient magnitude,
/// at value exactly 0 with fresh moments. Just-pruned positions are eligible
/// unless the caller filtered them out of the candidate set.
pub fn regrow_gradient(
    param: &mut SparseParam,
    dense_grad: &Tensor,
    k: usize,
    excluded: &[usize],
) -> Result<()> {
    if dense_grad.shape() != param.values.shape() {
        return Err(Error::Dimension(format!(
            "grad {:?} vs param {:?}",
            dense_grad.shape(),
            param.values.shape()
        )));
    }
    if k == 0 {
        return Ok(());
    }
    let excluded: std::collections::HashSet<usize> = excluded.iter().copied().collect();
    let candidates: Vec<(usize, f64)> = (0..param.len())
        .filter(|&i| !param.mask.get(i) && !excluded.contains(&i))
        .map(|i| (i, dense_grad.data()[i].abs()))
        .collect();
    if k > candidates.len() {
        return Err(Error::Contract(format!(
            "regrow k={} exceeds {} zero positions",
            k,
            candidates.len()
        )));
    }
    for i in top_k_by_magnitude(candidates.into_iter(), k) {
        param.activate(i);
    }
    Ok(())
}

/// Activates k zero positions chosen uniformly at random (ablation criterion).
pub fn regrow_random<R: Rng>(
    param: &mut SparseParam,
    k: usize,
    excluded: &[usize],
    rng: &mut R,
) -> Result<()> {
    if k == 0 {
        return Ok(());
    }
    let excluded: std::collections::HashSet<usize> = excluded.iter().copied().collect();
    let candidates: Vec<usize> = (0..param.len())
        .filter(|&i| !param.mask.get(i) && !excluded.contains(&i))
        .collect();
    if k > candidates.len() {
        return Err(Error::Contract(format!(
            "regrow k={} exceeds {} zero positions",
            k,
            candidates.len()
        )));
    }
    for idx in rand::seq::index::sample(rng, candidates.len(), k) {
        param.activate(candidates[idx]);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploreScope {
    /// Prune/regrow budgets per layer; layer densities preserved.
    PerLayer,
    /// One budget across all layers; weights may migrate between layers.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegrowCriterion {
    Gradient,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExploreOptions {
    pub scope: ExploreScope,
    pub regrow: RegrowCriterion,
    /// Bar just-pruned positions from immediate regrowth (ablation).
    pub exclude_just_pruned: bool,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            scope: ExploreScope::PerLayer,
            regrow: RegrowCriterion::Gradient,
            exclude_just_pruned: false,
        }
    }
}

/// One prune-and-regrow event, recorded for the run log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreEvent {
    pub step: u64,
    pub layer: usize,
    pub pruned: usize,
    pub pre_support: u64,
    pub post_support: u64,
}

/// Ever-activated support per layer; the union only grows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItopTracker {
    ever: Vec<Vec<u8>>,
    total_params: usize,
}

impl ItopTracker {
    pub fn new(params: &[&SparseParam]) -> Self {
        let ever: Vec<Vec<u8>> = params.iter().map(|p| p.mask.bits().to_vec()).collect();
        let total_params = params.iter().map(|p| p.len()).sum();
        ItopTracker { ever, total_params }
    }

    pub fn absorb(&mut self, params: &[&SparseParam]) {
        for (bits, p) in self.ever.iter_mut().zip(params) {
            for (e, &b) in bits.iter_mut().zip(p.mask.bits()) {
                *e |= b;
            }
        }
    }

    pub fn union_count(&self) -> usize {
        self.ever
            .iter()
            .map(|bits| bits.iter().map(|&b| b as usize).sum::<usize>())
            .sum()
    }

    /// Fraction of all dense positions ever activated.
    pub fn rate(&self) -> f64 {
        if self.total_params == 0 {
            return 0.0;
        }
        self.union_count() as f64 / self.total_params as f64
    }

    pub fn layer_bits(&self) -> &[Vec<u8>] {
        &self.ever
    }

    pub fn restore(ever: Vec<Vec<u8>>) -> Self {
        let total_params = ever.iter().map(|b| b.len()).sum();
        ItopTracker { ever, total_params }
    }
}

/// One exploration pass over a parameter set: prune the weakest active
/// weights, regrow the same count at zero positions, union the tracker.
/// No-op (empty event list) once the schedule is exhausted.
pub fn explore_step<R: Rng>(
    params: &mut [&mut SparseParam],
    dense_grads: &[Tensor],
    sched: &ExplorationSchedule,
    t: u64,
    opts: &ExploreOptions,
    tracker: &mut ItopTracker,
    rng: &mut R,
) -> Result<Vec<ExploreEvent>> {
    let Some(p) = pruning_rate(sched, t) else {
        return Ok(Vec::new());
    };
    if params.len() != dense_grads.len() {
        return Err(Error::Contract("one dense gradient per parameter".into()));
    }
    let pre: Vec<u64> = params.iter().map(|p| p.mask.support_hash()).collect();
    let mut events = Vec::with_capacity(params.len());
    match opts.scope {
        ExploreScope::PerLayer => {
            for (layer, (param, grad)) in params.iter_mut().zip(dense_grads).enumerate() {
                let before = param.mask.bits().to_vec();
                let k = prune_topk(param, p)?;
                let just_pruned: Vec<usize> = if opts.exclude_just_pruned {
                    (0..param.len())
                        .filter(|&i| before[i] == 1 && !param.mask.get(i))
                        .collect()
                } else {
                    Vec::new()
                };
                match opts.regrow {
                    RegrowCriterion::Gradient => regrow_gradient(param, grad, k, &just_pruned)?,
                    RegrowCriterion::Random => regrow_random(param, k, &just_pruned, rng)?,
                }
                events.push(ExploreEvent {
                    step: t,
                    layer,
                    pruned: k,
                    pre_support: pre[layer],
                    post_support: param.mask.support_hash(),
                });
            }
        }
        ExploreScope::Global => {
            explore_global(params, dense_grads, p, opts, rng)?;
            for (layer, param) in params.iter().enumerate() {
                events.push(ExploreEvent {
                    step: t,
                    layer,
                    pruned: 0,
                    pre_support: pre[layer],
                    post_support: param.mask.support_hash(),
                });
            }
        }
    }
    let snapshot: Vec<&SparseParam> = params.iter().map(|p| &**p).collect();
    tracker.absorb(&snapshot);
    Ok(events)
}

/// Single cross-layer budget: one TopK over all active weights, one TopK over
/// all zero positions. Layer densities may drift.
fn explore_global<R: Rng>(
    params: &mut [&mut SparseParam],
    dense_grads: &[Tensor],
    p: f64,
    opts: &ExploreOptions,
    rng: &mut R,
) -> Result<()> {
    let mut offsets = Vec::with_capacity(params.len());
    let mut off = 0usize;
    for param in params.iter() {
        offsets.push(off);
        off += param.len();
    }
    let locate = |flat: usize| {
        let layer = match offsets.binary_search(&flat) {
            Ok(l) => l,
            Err(l) => l - 1,
        };
        (layer, flat - offsets[layer])
    };

    let n_active: usize = params.iter().map(|p| p.active_count()).sum();
    if n_active == 0 {
        return Ok(());
    }
    let retained = ((1.0 - p) * n_active as f64).ceil() as usize;
    let k = n_active - retained;
    if k == 0 {
        return Ok(());
    }
    let actives = params.iter().enumerate().flat_map(|(l, param)| {
        let base = offsets[l];
        (0..param.len())
            .filter(|&i| param.mask.get(i))
            .map(move |i| (base + i, param.values.data()[i].abs()))
            .collect::<Vec<_>>()
    });
    let keep: std::collections::HashSet<usize> =
        top_k_by_magnitude(actives, retained).into_iter().collect();
    let mut just_pruned = Vec::new();
    for (l, param) in params.iter_mut().enumerate() {
        let base = offsets[l];
        for i in 0..param.len() {
            if param.mask.get(i) && !keep.contains(&(base + i)) {
                param.deactivate(i);
                just_pruned.push(base + i);
            }
        }
    }
    let excluded: std::collections::HashSet<usize> = if opts.exclude_just_pruned {
        just_pruned.into_iter().collect()
    } else {
        Default::default()
    };
    let zeros: Vec<usize> = (0..off)
        .filter(|&flat| {
            let (l, i) = locate(flat);
            !params[l].mask.get(i) && !excluded.contains(&flat)
        })
        .collect();
    if k > zeros.len() {
        return Err(Error::Contract(format!(
            "regrow k={} exceeds {} zero positions",
            k,
            zeros.len()
        )));
    }
    let grown: Vec<usize> = match opts.regrow {
        RegrowCriterion::Gradient => top_k_by_magnitude(
            zeros.iter().map(|&flat| {
                let (l, i) = locate(flat);
                (flat, dense_grads[l].data()[i].abs())
            }),
            k,
        ),
        RegrowCriterion::Random => rand::seq::index::sample(rng, zeros.len(), k)
            .into_iter()
            .map(|idx| zeros[idx])
            .collect(),
    };
    for flat in grown {
        let (l, i) = locate(flat);
        params[l].activate(i);
    }
    Ok(())
}
