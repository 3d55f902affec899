//! Layer-wise sparsity allocation, mask initialization, and magnitude pruning.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv2d,
}

/// Shape of one weight layer. Kernel is (1, 1) for dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub fan_in: usize,
    pub fan_out: usize,
    #[serde(default = "unit_kernel")]
    pub kernel: (usize, usize),
}

fn unit_kernel() -> (usize, usize) {
    (1, 1)
}

impl LayerSpec {
    pub fn dense(fan_in: usize, fan_out: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            fan_in,
            fan_out,
            kernel: (1, 1),
        }
    }

    pub fn conv2d(fan_in: usize, fan_out: usize, kw: usize, kh: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv2d,
            fan_in,
            fan_out,
            kernel: (kw, kh),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fan_in < 1 || self.fan_out < 1 || self.kernel.0 < 1 || self.kernel.1 < 1 {
            return Err(Error::Domain(format!("layer counts must be >= 1: {:?}", self)));
        }
        if self.kind == LayerKind::Dense && self.kernel != (1, 1) {
            return Err(Error::Domain("dense layer with non-unit kernel".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.fan_in * self.fan_out * self.kernel.0 * self.kernel.1
    }

    /// Weight tensor shape: [in, out] for dense, [out, in, kh, kw] for conv.
    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense => vec![self.fan_in, self.fan_out],
            LayerKind::Conv2d => vec![self.fan_out, self.fan_in, self.kernel.1, self.kernel.0],
        }
    }
}

/// Binary support pattern congruent with a weight tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    bits: Vec<u8>,
}

impl Mask {
    pub fn ones(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Mask {
            shape: shape.to_vec(),
            bits: vec![1; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Mask {
            shape: shape.to_vec(),
            bits: vec![0; n],
        }
    }

    pub fn from_bits(shape: Vec<usize>, bits: Vec<u8>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != bits.len() {
            return Err(Error::Dimension(format!(
                "mask shape {:?} vs {} bits",
                shape,
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Domain("mask bits must be 0 or 1".into()));
        }
        Ok(Mask { shape, bits })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i] == 1
    }

    pub fn set(&mut self, i: usize, active: bool) {
        self.bits[i] = active as u8;
    }

    pub fn nonzero_count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn density(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.nonzero_count() as f64 / self.bits.len() as f64
    }

    /// Zeroes `values` wherever the mask is off.
    pub fn apply(&self, values: &mut Tensor) {
        for (v, &b) in values.data_mut().iter_mut().zip(&self.bits) {
            if b == 0 {
                *v = 0.0;
            }
        }
    }

    /// FNV-1a over the bit pattern; used for support audit trails.
    pub fn support_hash(&self) -> u64 {
        fnv1a(&self.bits)
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Per-layer density allocation for a global sparsity target.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyPlan {
    pub sparsity: f64,
    pub densities: Vec<f64>,
    pub keep_counts: Vec<usize>,
}

impl TopologyPlan {
    pub fn total_kept(&self) -> usize {
        self.keep_counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allocation {
    Uniform,
    Er,
    Erk,
}

fn check_sparsity(s: f64) -> Result<()> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::Domain(format!("sparsity {} outside [0,1)", s)));
    }
    Ok(())
}

fn keep_count(density: f64, n: usize) -> usize {
    ((density * n as f64).round() as usize).clamp(1, n)
}

/// Same density 1-s in every layer, at least one active weight per layer.
pub fn allocate_uniform(layers: &[LayerSpec], s: f64) -> Result<TopologyPlan> {
    check_sparsity(s)?;
    let density = 1.0 - s;
    let keep_counts: Vec<usize> = layers
        .iter()
        .map(|l| keep_count(density, l.param_count()))
        .collect();
    Ok(TopologyPlan {
        sparsity: s,
        densities: vec![density; layers.len()],
        keep_counts,
    })
}

/// Raw (unnormalized) density for one layer.
/// With `kernel_terms`, conv layers use (fan_in+fan_out+kw+kh)/(fan_in*fan_out*kw*kh);
/// dense layers and the no-kernel-terms variant use (fan_in+fan_out)/(fan_in*fan_out).
pub fn raw_density(layer: &LayerSpec, kernel_terms: bool) -> f64 {
    let (n_in, n_out) = (layer.fan_in as f64, layer.fan_out as f64);
    let (kw, kh) = (layer.kernel.0 as f64, layer.kernel.1 as f64);
    if kernel_terms && layer.kind == LayerKind::Conv2d {
        (n_in + n_out + kw + kh) / (n_in * n_out * kw * kh)
    } else {
        (n_in + n_out) / (n_in * n_out)
    }
}

fn allocate_scaled(layers: &[LayerSpec], s: f64, kernel_terms: bool) -> Result<TopologyPlan> {
    check_sparsity(s)?;
    for l in layers {
        l.validate()?;
    }
    let sizes: Vec<f64> = layers.iter().map(|l| l.param_count() as f64).collect();
    let total: f64 = sizes.iter().sum();
    let budget = ((1.0 - s) * total).round();
    let raws: Vec<f64> = layers.iter().map(|l| raw_density(l, kernel_terms)).collect();

    // Scale raw densities by a single global factor; cap at 1 and rescale the
    // remainder until the cap set is stable.
    let mut capped = vec![false; layers.len()];
    let mut densities = vec![0.0; layers.len()];
    loop {
        let capped_weight: f64 = sizes
            .iter()
            .zip(&capped)
            .filter(|(_, &c)| c)
            .map(|(n, _)| n)
            .sum();
        let remaining = budget - capped_weight;
        let mass: f64 = raws
            .iter()
            .zip(&sizes)
            .zip(&capped)
            .filter(|(_, &c)| !c)
            .map(|((r, n), _)| r * n)
            .sum();
        if mass <= 0.0 {
            if remaining > 0.5 {
                return Err(Error::Domain(format!(
                    "allocation infeasible: {} weights left with every layer capped",
                    remaining
                )));
            }
            break;
        }
        let scale = remaining / mass;
        let mut new_cap = false;
        for (i, &r) in raws.iter().enumerate() {
            if !capped[i] && scale * r > 1.0 {
                capped[i] = true;
                new_cap = true;
            }
        }
        if !new_cap {
            for (i, &r) in raws.iter().enumerate() {
                if !capped[i] {
                    densities[i] = scale * r;
                }
            }
            break;
        }
    }
    for (i, &c) in capped.iter().enumerate() {
        if c {
            densities[i] = 1.0;
        }
    }
    let keep_counts: Vec<usize> = densities
        .iter()
        .zip(layers)
        .map(|(&d, l)| keep_count(d, l.param_count()))
        .collect();
    Ok(TopologyPlan {
        sparsity: s,
        densities,
        keep_counts,
    })
}

/// Erdos-Renyi-Kernel allocation: conv layers scale with kernel terms,
/// dense layers with fan terms only.
pub fn allocate_erk(layers: &[LayerSpec], s: f64) -> Result<TopologyPlan> {
    allocate_scaled(layers, s, true)
}

/// Erdos-Renyi allocation: fan terms only for every layer.
pub fn allocate_er(layers: &[LayerSpec], s: f64) -> Result<TopologyPlan> {
    allocate_scaled(layers, s, false)
}

pub fn allocate(method: Allocation, layers: &[LayerSpec], s: f64) -> Result<TopologyPlan> {
    match method {
        Allocation::Uniform => allocate_uniform(layers, s),
        Allocation::Er => allocate_er(layers, s),
        Allocation::Erk => allocate_erk(layers, s),
    }
}

/// Random masks matching a plan's keep counts: per layer, exactly
/// `keep_counts[l]` ones placed uniformly without replacement.
pub fn init_masks<R: Rng>(plan: &TopologyPlan, layers: &[LayerSpec], rng: &mut R) -> Vec<Mask> {
    plan.keep_counts
        .iter()
        .zip(layers)
        .map(|(&keep, layer)| {
            let shape = layer.weight_shape();
            let n = layer.param_count();
            let mut mask = Mask::zeros(&shape);
            for idx in rand::seq::index::sample(rng, n, keep) {
                mask.set(idx, true);
            }
            mask
        })
        .collect()
}

/// Indices of the `keep` largest-magnitude entries, ties broken by lowest
/// flat index. Input pairs are (flat index, |value|).
pub fn top_k_by_magnitude(magnitudes: impl Iterator<Item = (usize, f64)>, keep: usize) -> Vec<usize> {
    let mut entries: Vec<(usize, f64)> = magnitudes.collect();
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite magnitudes").then(a.0.cmp(&b.0)));
    let mut kept: Vec<usize> = entries.into_iter().take(keep).map(|(i, _)| i).collect();
    kept.sort_unstable();
    kept
}

/// Layer-by-layer one-shot magnitude pruning: keep round((1-s)*N_l) largest
/// weights per layer, at least one.
pub fn magnitude_prune_uniform(values: &[&Tensor], s: f64) -> Result<Vec<Mask>> {
    check_sparsity(s)?;
    Ok(values
        .iter()
        .map(|v| {
            let n = v.len();
            let keep = keep_count(1.0 - s, n);
            let kept = top_k_by_magnitude(v.data().iter().map(|x| x.abs()).enumerate(), keep);
            let mut mask = Mask::zeros(v.shape());
            for i in kept {
                mask.set(i, true);
            }
            mask
        })
        .collect())
}

/// One-shot magnitude pruning over the concatenation of all layers: a single
/// top-k across layers, so a whole layer may end up empty.
pub fn magnitude_prune_global(values: &[&Tensor], s: f64) -> Result<Vec<Mask>> {
    check_sparsity(s)?;
    let total: usize = values.iter().map(|v| v.len()).sum();
    let keep = ((1.0 - s) * total as f64).round() as usize;
    let mut all: Vec<(usize, f64)> = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(values.len());
    let mut off = 0;
    for v in values {
        offsets.push(off);
        for (i, x) in v.data().iter().enumerate() {
            all.push((off + i, x.abs()));
        }
        off += v.len();
    }
    let kept = top_k_by_magnitude(all.into_iter(), keep);
    let mut masks: Vec<Mask> = values.iter().map(|v| Mask::zeros(v.shape())).collect();
    let mut layer = 0;
    for flat in kept {
        while layer + 1 < offsets.len() && flat >= offsets[layer + 1] {
            layer += 1;
        }
        masks[layer].set(flat - offsets[layer], true);
    }
    Ok(masks)
}

// ── Mask file format ─────────────────────────────────────────────────
//
// Compact binary layout:
//   magic "SEMK", u32 version, u32 layer count,
//   per layer: u32 rank, u64 dims..., u64 nonzero count,
//   then all bit payloads packed 8 masks per byte, LSB first.

const MASK_MAGIC: &[u8; 4] = b"SEMK";
const MASK_VERSION: u32 = 1;

pub fn write_masks<W: Write>(out: &mut W, masks: &[Mask]) -> Result<()> {
    out.write_all(MASK_MAGIC)?;
    out.write_all(&MASK_VERSION.to_le_bytes())?;
    out.write_all(&(masks.len() as u32).to_le_bytes())?;
    for m in masks {
        out.write_all(&(m.shape().len() as u32).to_le_bytes())?;
        for &d in m.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        out.write_all(&(m.nonzero_count() as u64).to_le_bytes())?;
    }
    let mut byte = 0u8;
    let mut fill = 0u8;
    for m in masks {
        for &b in m.bits() {
            byte |= b << fill;
            fill += 1;
            if fill == 8 {
                out.write_all(&[byte])?;
                byte = 0;
                fill = 0;
            }
        }
    }
    if fill > 0 {
        out.write_all(&[byte])?;
    }
    Ok(())
}

pub fn read_masks<R: Read>(input: &mut R) -> Result<Vec<Mask>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MASK_MAGIC {
        return Err(Error::Config("not a mask file".into()));
    }
    let version = read_u32(input)?;
    if version != MASK_VERSION {
        return Err(Error::Config(format!("unsupported mask file version {}", version)));
    }
    let count = read_u32(input)? as usize;
    let mut shapes = Vec::with_capacity(count);
    let mut declared = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = read_u32(input)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(input)? as usize);
        }
        declared.push(read_u64(input)? as usize);
        shapes.push(shape);
    }
    let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let mut payload = vec![0u8; total.div_ceil(8)];
    input.read_exact(&mut payload)?;
    let mut masks = Vec::with_capacity(count);
    let mut pos = 0usize;
    for (shape, nz) in shapes.into_iter().zip(declared) {
        let n: usize = shape.iter().product();
        let mut bits = Vec::with_capacity(n);
        for _ in 0..n {
            bits.push((payload[pos / 8] >> (pos % 8)) & 1);
            pos += 1;
        }
        let mask = Mask::from_bits(shape, bits)?;
        if mask.nonzero_count() != nz {
            return Err(Error::Config("mask file nonzero count mismatch".into()));
        }
        masks.push(mask);
    }
    Ok(masks)
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
