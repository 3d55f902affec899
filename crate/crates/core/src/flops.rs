//! Analytical FLOPs accounting. Counting convention, stated once: a weight
//! layer's forward pass costs 2 x (multiply-accumulates), backward costs 2x
//! forward, bias adds and optimizer/averaging arithmetic are excluded, and a
//! masked weight costs nothing (cost scales linearly with density). All
//! figures are reported as ratios against the dense configuration.

use crate::error::{Error, Result};
use crate::topology::LayerSpec;
use serde::{Deserialize, Serialize};

/// Forward FLOPs for one layer at the given density.
/// `out_spatial` is the number of output positions (1 for dense layers).
pub fn layer_flops_forward(layer: &LayerSpec, density: f64, batch: usize, out_spatial: usize) -> f64 {
    let dense = 2.0 * layer.param_count() as f64 * out_spatial as f64 * batch as f64;
    dense * density
}

/// Forward FLOPs for a stack of dense-kind layers (out_spatial = 1).
pub fn forward_flops(layers: &[LayerSpec], densities: &[f64], batch: usize) -> f64 {
    layers
        .iter()
        .zip(densities)
        .map(|(l, &d)| layer_flops_forward(l, d, batch, 1))
        .sum()
}

/// FLOPs of one full training step at 1 discriminator update per generator
/// update times `d_steps`. Per update:
///   D update: G forward (fakes) + D forward on real and fake + D backward.
///   G update: G forward + D forward + backward through both.
pub fn training_step_flops(
    g_layers: &[LayerSpec],
    g_densities: &[f64],
    d_layers: &[LayerSpec],
    d_densities: &[f64],
    batch: usize,
    d_steps: u32,
) -> f64 {
    let fg = forward_flops(g_layers, g_densities, batch);
    let fd = forward_flops(d_layers, d_densities, batch);
    let d_update = fg + 2.0 * fd + 2.0 * (2.0 * fd);
    let g_update = fg + fd + 2.0 * (fg + fd);
    d_steps as f64 * d_update + g_update
}

/// Generator-only forward cost for one sample; the testing-cost figure.
pub fn testing_flops(g_layers: &[LayerSpec], g_densities: &[f64]) -> f64 {
    forward_flops(g_layers, g_densities, 1)
}

/// Cumulative training-cost meter with dense-normalized ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsLedger {
    step_flops: f64,
    dense_step: f64,
    test_sparse: f64,
    test_dense: f64,
    cumulative: f64,
    /// Steps defining the 1x denominator (one standard training run).
    baseline_steps: u64,
}

impl FlopsLedger {
    pub fn new(
        g_layers: &[LayerSpec],
        g_densities: &[f64],
        d_layers: &[LayerSpec],
        d_densities: &[f64],
        batch: usize,
        d_steps: u32,
        baseline_steps: u64,
    ) -> Result<Self> {
        if baseline_steps == 0 {
            return Err(Error::Domain("baseline_steps must be >= 1".into()));
        }
        let ones_g = vec![1.0; g_layers.len()];
        let ones_d = vec![1.0; d_layers.len()];
        Ok(FlopsLedger {
            step_flops: training_step_flops(g_layers, g_densities, d_layers, d_densities, batch, d_steps),
            dense_step: training_step_flops(g_layers, &ones_g, d_layers, &ones_d, batch, d_steps),
            test_sparse: testing_flops(g_layers, g_densities),
            test_dense: testing_flops(g_layers, &ones_g),
            cumulative: 0.0,
            baseline_steps,
        })
    }

    /// Re-prices the per-step cost after a density change (exploration under
    /// a cross-layer budget, or the fine-tune phase of prune-then-tune).
    pub fn reprice(
        &mut self,
        g_layers: &[LayerSpec],
        g_densities: &[f64],
        d_layers: &[LayerSpec],
        d_densities: &[f64],
        batch: usize,
        d_steps: u32,
    ) {
        self.step_flops =
            training_step_flops(g_layers, g_densities, d_layers, d_densities, batch, d_steps);
        self.test_sparse = testing_flops(g_layers, g_densities);
    }

    pub fn add_step(&mut self) {
        self.cumulative += self.step_flops;
    }

    pub fn cumulative(&self) -> f64 {
        self.cumulative
    }

    /// Cumulative cost over one dense training run of baseline_steps.
    pub fn training_ratio(&self) -> f64 {
        self.cumulative / (self.baseline_steps as f64 * self.dense_step)
    }

    /// Per-sample generation cost over the dense generator's.
    pub fn testing_ratio(&self) -> f64 {
        self.test_sparse / self.test_dense
    }
}

/// Total training cost of prune-then-fine-tune: a dense phase of
/// `steps` plus a masked fine-tune phase of `steps`.
pub fn pf_total_flops(
    g_layers: &[LayerSpec],
    g_densities: &[f64],
    d_layers: &[LayerSpec],
    d_densities: &[f64],
    batch: usize,
    d_steps: u32,
    steps: u64,
) -> f64 {
    let ones_g = vec![1.0; g_layers.len()];
    let ones_d = vec![1.0; d_layers.len()];
    let dense = training_step_flops(g_layers, &ones_g, d_layers, &ones_d, batch, d_steps);
    let tuned = training_step_flops(g_layers, g_densities, d_layers, d_densities, batch, d_steps);
    steps as f64 * dense + steps as f64 * tuned
}
