//! End-to-end training: alternating D/G updates with optional connectivity
//! exploration, dense/static/prune-then-tune baselines, run recording, and
//! bit-exact checkpointing.

use crate::error::{Error, Result};
use crate::exploration::{
    explore_step, pruning_rate, ExploreEvent, ExploreOptions, ExplorationSchedule, Decay,
    ItopTracker,
};
use crate::flops::FlopsLedger;
use crate::gan::{
    d_loss, g_loss, sample_latent, Activation, DataKind, DataSampler, GanSpec, LossGrads,
    LossMode, Mlp, WeightSource,
};
use crate::metrics;
use crate::optimizer::{adam_step, ema_update, sema_update, AdamConfig, SparseParam};
use crate::rng::{derive_key, derive_rng, restore_rng, save_rng, Domain, RngState};
use crate::tensor::Tensor;
use crate::topology::{
    allocate, fnv1a, init_masks, magnitude_prune_global, magnitude_prune_uniform, read_masks,
    write_masks, Allocation, Mask,
};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExploreTarget {
    G,
    D,
    Both,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Sema,
    Ema,
    None,
}

/// Exploration timing; t_end defaults to 75% of total steps when unset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub delta_t: u64,
    pub p0: f64,
    pub decay: Decay,
    pub t_end: Option<u64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            delta_t: 100,
            p0: 0.5,
            decay: Decay::Cosine,
            t_end: None,
        }
    }
}

impl ScheduleConfig {
    pub fn resolve(&self, steps: u64) -> ExplorationSchedule {
        ExplorationSchedule {
            delta_t: self.delta_t,
            p0: self.p0,
            decay: self.decay,
            t_end: self.t_end.unwrap_or(steps * 3 / 4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub s_g: f64,
    pub s_d: f64,
    pub allocation: Allocation,
    pub steps: u64,
    pub batch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub d_steps_per_g: u32,
    pub schedule: ScheduleConfig,
    pub explore_target: ExploreTarget,
    pub explore: ExploreOptions,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub latent_dim: usize,
    pub g_hidden: Vec<usize>,
    pub d_hidden: Vec<usize>,
    pub data: DataKind,
    pub sigma: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub averaging: Averaging,
    pub avg_beta: f64,
    pub eval_interval: u64,
    pub eval_samples: usize,
    pub eval_projections: usize,
    pub radius_mult: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            s_g: 0.9,
            s_d: 0.5,
            allocation: Allocation::Erk,
            steps: 3000,
            batch: 64,
            lr_g: 1e-3,
            lr_d: 1e-3,
            d_steps_per_g: 1,
            schedule: ScheduleConfig::default(),
            explore_target: ExploreTarget::G,
            explore: ExploreOptions::default(),
            seed: 0,
            loss_mode: LossMode::Nonsaturating,
            latent_dim: 8,
            g_hidden: vec![64, 64],
            d_hidden: vec![64, 64],
            data: DataKind::Ring8,
            sigma: 0.05,
            adam_beta1: 0.0,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            averaging: Averaging::Sema,
            avg_beta: 0.999,
            eval_interval: 500,
            eval_samples: 2000,
            eval_projections: 16,
            radius_mult: metrics::DEFAULT_RADIUS_MULT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("s_g", self.s_g), ("s_d", self.s_d)] {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::Config(format!("{} = {} outside [0,1)", name, s)));
            }
        }
        if self.steps < 1 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.batch < 1 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if self.d_steps_per_g < 1 {
            return Err(Error::Config("d_steps_per_g must be >= 1".into()));
        }
        self.schedule.resolve(self.steps).validate().map_err(|e| {
            Error::Config(format!("schedule: {}", e))
        })?;
        if let Some(t_end) = self.schedule.t_end {
            if t_end > self.steps {
                return Err(Error::Config(format!(
                    "schedule.t_end {} exceeds steps {}",
                    t_end, self.steps
                )));
            }
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config("sigma must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must be in [0,1)".into()));
        }
        if !(0.0..=1.0).contains(&self.avg_beta) {
            return Err(Error::Config("avg_beta must be in [0,1]".into()));
        }
        if self.eval_interval < 1 || self.eval_samples < 1 || self.eval_projections < 1 {
            return Err(Error::Config("eval settings must be >= 1".into()));
        }
        if !(self.radius_mult > 0.0) {
            return Err(Error::Config("radius_mult must be > 0".into()));
        }
        self.gan_spec().validate()?;
        Ok(())
    }

    pub fn gan_spec(&self) -> GanSpec {
        GanSpec::mlp(self.latent_dim, &self.g_hidden, &self.d_hidden)
    }

    /// 64-bit key of the canonical JSON form; names runs and sweep rows.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        fnv1a(json.as_bytes())
    }
}

/// One metrics.csv row. Column order is the file format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub coverage: f64,
    pub hq_ratio: f64,
    pub w1: f64,
    pub itop_rate: f64,
    pub flops_cum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: TrainConfig,
    pub rows: Vec<MetricsRow>,
    pub events: Vec<ExploreEvent>,
    pub diverged: bool,
    pub diverged_at: Option<u64>,
    pub steps_done: u64,
    pub training_flops_ratio: f64,
    pub testing_flops_ratio: f64,
    pub flops_cum: f64,
    pub g_masks_initial: Vec<u64>,
    pub g_masks_final: Vec<u64>,
    pub d_masks_initial: Vec<u64>,
    pub d_masks_final: Vec<u64>,
    pub itop_rate_g: f64,
    pub itop_rate_d: f64,
}

impl RunResult {
    pub fn final_row(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    sched: ExplorationSchedule,
    pub g: Mlp,
    pub d: Mlp,
    sampler: DataSampler,
    adam_g: AdamConfig,
    adam_d: AdamConfig,
    rng_data: ChaCha8Rng,
    rng_latent: ChaCha8Rng,
    rng_explore: ChaCha8Rng,
    pub tracker_g: ItopTracker,
    pub tracker_d: ItopTracker,
    ledger: FlopsLedger,
    /// Completed full steps.
    t: u64,
    adam_t_g: u64,
    adam_t_d: u64,
    /// Step count that defines eval scheduling and the final step.
    planned_steps: u64,
    rows: Vec<MetricsRow>,
    events: Vec<ExploreEvent>,
    diverged_at: Option<u64>,
    g_masks_initial: Vec<u64>,
    d_masks_initial: Vec<u64>,
    last_d_grads: Option<LossGrads>,
    last_g_grads: Option<LossGrads>,
    last_d_loss: f64,
    last_g_loss: f64,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.gan_spec();
        let sampler = DataSampler::new(cfg.data, cfg.sigma)?;
        let sched = cfg.schedule.resolve(cfg.steps);

        let g_plan = allocate(cfg.allocation, &spec.g_layers, cfg.s_g)?;
        let d_plan = allocate(cfg.allocation, &spec.d_layers, cfg.s_d)?;
        let g_masks = init_masks(&g_plan, &spec.g_layers, &mut derive_rng(cfg.seed, Domain::InitG, 1));
        let d_masks = init_masks(&d_plan, &spec.d_layers, &mut derive_rng(cfg.seed, Domain::InitD, 1));
        let g = Mlp::init(
            spec.g_layers.clone(),
            g_masks,
            spec.g_hidden_act,
            spec.g_out_act,
            &mut derive_rng(cfg.seed, Domain::InitG, 0),
        )?;
        let d = Mlp::init(
            spec.d_layers.clone(),
            d_masks,
            spec.d_hidden_act,
            Activation::Identity,
            &mut derive_rng(cfg.seed, Domain::InitD, 0),
        )?;

        let ledger = FlopsLedger::new(
            &spec.g_layers,
            &g.densities(),
            &spec.d_layers,
            &d.densities(),
            cfg.batch,
            cfg.d_steps_per_g,
            cfg.steps,
        )?;
        let tracker_g = ItopTracker::new(&g.weights.iter().collect::<Vec<_>>());
        let tracker_d = ItopTracker::new(&d.weights.iter().collect::<Vec<_>>());
        let g_masks_initial = g.mask_hashes();
        let d_masks_initial = d.mask_hashes();
        Ok(Trainer {
            adam_g: AdamConfig {
                lr: cfg.lr_g,
                beta1: cfg.adam_beta1,
                beta2: cfg.adam_beta2,
                eps: cfg.adam_eps,
            },
            adam_d: AdamConfig {
                lr: cfg.lr_d,
                beta1: cfg.adam_beta1,
                beta2: cfg.adam_beta2,
                eps: cfg.adam_eps,
            },
            rng_data: derive_rng(cfg.seed, Domain::Data, 0),
            rng_latent: derive_rng(cfg.seed, Domain::Latent, 0),
            rng_explore: derive_rng(cfg.seed, Domain::Explore, 0),
            tracker_g,
            tracker_d,
            ledger,
            t: 0,
            adam_t_g: 0,
            adam_t_d: 0,
            planned_steps: cfg.steps,
            rows: Vec::new(),
            events: Vec::new(),
            diverged_at: None,
            g_masks_initial,
            d_masks_initial,
            last_d_grads: None,
            last_g_grads: None,
            last_d_loss: f64::NAN,
            last_g_loss: f64::NAN,
            cfg: cfg.clone(),
            sched,
            g,
            d,
            sampler,
        })
    }

    pub fn steps_done(&self) -> u64 {
        self.t
    }

    pub fn planned_steps(&self) -> u64 {
        self.planned_steps
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn sampler(&self) -> &DataSampler {
        &self.sampler
    }

    fn apply_updates(
        net: &mut Mlp,
        grads: &LossGrads,
        adam: &AdamConfig,
        t: u64,
    ) -> Result<()> {
        for (param, dense) in net.weights.iter_mut().zip(&grads.w_grads) {
            let mg = param.masked_grad(dense);
            adam_step(param, &mg, adam, t)?;
        }
        for (param, dense) in net.biases.iter_mut().zip(&grads.b_grads) {
            let mg = param.masked_grad(dense);
            adam_step(param, &mg, adam, t)?;
        }
        Ok(())
    }

    /// One full iteration: d_steps_per_g discriminator updates against the
    /// current generator, one generator update against the updated
    /// discriminator, averaging, then exploration when the schedule fires.
    fn step_inner(&mut self) -> Result<()> {
        self.t += 1;
        let t = self.t;

        for _ in 0..self.cfg.d_steps_per_g {
            let real = self.sampler.sample(self.cfg.batch, &mut self.rng_data);
            let z = sample_latent(self.cfg.batch, self.cfg.latent_dim, &mut self.rng_latent);
            let dg = d_loss(&self.d, &self.g, &real, &z)?;
            if !dg.loss.is_finite() {
                return Err(Error::NonFinite(format!("d_loss at step {}", t)));
            }
            self.adam_t_d += 1;
            Self::apply_updates(&mut self.d, &dg, &self.adam_d, self.adam_t_d)?;
            self.last_d_loss = dg.loss;
            self.last_d_grads = Some(dg);
        }

        let z = sample_latent(self.cfg.batch, self.cfg.latent_dim, &mut self.rng_latent);
        let gg = g_loss(&self.g, &self.d, &z, self.cfg.loss_mode)?;
        if !gg.loss.is_finite() {
            return Err(Error::NonFinite(format!("g_loss at step {}", t)));
        }
        self.adam_t_g += 1;
        Self::apply_updates(&mut self.g, &gg, &self.adam_g, self.adam_t_g)?;
        self.last_g_loss = gg.loss;
        self.last_g_grads = Some(gg);

        match self.cfg.averaging {
            Averaging::Sema => {
                for p in self.g.weights.iter_mut().chain(self.g.biases.iter_mut()) {
                    sema_update(p, self.cfg.avg_beta);
                }
            }
            Averaging::Ema => {
                for p in self.g.weights.iter_mut().chain(self.g.biases.iter_mut()) {
                    let values = p.values.clone();
                    ema_update(&mut p.avg, &values, self.cfg.avg_beta);
                }
            }
            Averaging::None => {}
        }

        self.ledger.add_step();

        if self.cfg.explore_target != ExploreTarget::None && self.sched.fires_at(t) {
            self.explore(t)?;
        }

        if t % self.cfg.eval_interval == 0 || t == self.planned_steps {
            self.evaluate(t)?;
        }
        Ok(())
    }

    fn explore(&mut self, t: u64) -> Result<()> {
        let target = self.cfg.explore_target;
        if matches!(target, ExploreTarget::G | ExploreTarget::Both) {
            let grads = self
                .last_g_grads
                .as_ref()
                .ok_or_else(|| Error::Contract("exploration before any generator update".into()))?
                .w_grads
                .clone();
            let mut params: Vec<&mut SparseParam> = self.g.weights.iter_mut().collect();
            let events = explore_step(
                &mut params,
                &grads,
                &self.sched,
                t,
                &self.cfg.explore,
                &mut self.tracker_g,
                &mut self.rng_explore,
            )?;
            self.events.extend(events);
        }
        if matches!(target, ExploreTarget::D | ExploreTarget::Both) {
            let grads = self
                .last_d_grads
                .as_ref()
                .ok_or_else(|| Error::Contract("exploration before any discriminator update".into()))?
                .w_grads
                .clone();
            let mut params: Vec<&mut SparseParam> = self.d.weights.iter_mut().collect();
            let mut events = explore_step(
                &mut params,
                &grads,
                &self.sched,
                t,
                &self.cfg.explore,
                &mut self.tracker_d,
                &mut self.rng_explore,
            )?;
            // discriminator layers recorded after the generator's
            for e in &mut events {
                e.layer += self.g.n_layers();
            }
            self.events.extend(events);
        }
        // densities can drift under a cross-layer budget; keep the meter honest
        let spec = self.cfg.gan_spec();
        self.ledger.reprice(
            &spec.g_layers,
            &self.g.densities(),
            &spec.d_layers,
            &self.d.densities(),
            self.cfg.batch,
            self.cfg.d_steps_per_g,
        );
        Ok(())
    }

    fn evaluate(&mut self, t: u64) -> Result<()> {
        let n = self.cfg.eval_samples;
        let mut rng = derive_rng(self.cfg.seed, Domain::Eval, t);
        let z = sample_latent(n, self.cfg.latent_dim, &mut rng);
        let source = match self.cfg.averaging {
            Averaging::None => WeightSource::Current,
            _ => WeightSource::Averaged,
        };
        let samples = self.g.eval(&z, source)?;
        samples.check_finite("eval samples")?;
        let reference = self.sampler.sample(n, &mut rng);
        let rep = metrics::report(
            &samples,
            &reference,
            self.sampler.centers(),
            self.cfg.sigma,
            self.cfg.radius_mult,
            self.cfg.eval_projections,
            derive_key(self.cfg.seed, Domain::Eval, t),
        )?;
        self.rows.push(MetricsRow {
            step: t,
            d_loss: self.last_d_loss,
            g_loss: self.last_g_loss,
            coverage: rep.mode_coverage,
            hq_ratio: rep.hq_ratio,
            w1: rep.w1,
            itop_rate: self.tracker_g.rate(),
            flops_cum: self.ledger.cumulative(),
        });
        Ok(())
    }

    /// Runs up to n more steps. Non-finite losses or gradients end the run
    /// early: the failure is recorded and partial results stand.
    pub fn run_steps(&mut self, n: u64) -> Result<()> {
        for _ in 0..n {
            if self.diverged_at.is_some() {
                return Ok(());
            }
            match self.step_inner() {
                Ok(()) => {}
                Err(Error::NonFinite(_)) => {
                    self.diverged_at = Some(self.t);
                    return Ok(());
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    /// One-shot magnitude pruning of the live networks to (s_g, s_d); the
    /// prune-then-tune transition. Supports can only shrink.
    pub fn prune_to(&mut self, s_g: f64, s_d: f64, mode: PruneMode, target: PruneTarget) -> Result<()> {
        let prune_net = |net: &Mlp, s: f64, mode: PruneMode| -> Result<Vec<Mask>> {
            let values: Vec<&Tensor> = net.weights.iter().map(|p| &p.values).collect();
            let masks = match mode {
                PruneMode::Uniform => magnitude_prune_uniform(&values, s)?,
                PruneMode::Global => magnitude_prune_global(&values, s)?,
            };
            Ok(masks)
        };
        let apply = |net: &mut Mlp, masks: Vec<Mask>| {
            for (param, mask) in net.weights.iter_mut().zip(masks) {
                for i in 0..param.len() {
                    if param.mask.get(i) && !mask.get(i) {
                        param.deactivate(i);
                    }
                }
            }
        };
        let g_masks = prune_net(&self.g, s_g, mode)?;
        apply(&mut self.g, g_masks);
        if target == PruneTarget::GAndD {
            let d_masks = prune_net(&self.d, s_d, mode)?;
            apply(&mut self.d, d_masks);
        }
        let spec = self.cfg.gan_spec();
        self.ledger.reprice(
            &spec.g_layers,
            &self.g.densities(),
            &spec.d_layers,
            &self.d.densities(),
            self.cfg.batch,
            self.cfg.d_steps_per_g,
        );
        Ok(())
    }

    pub fn result(&self) -> RunResult {
        RunResult {
            diverged: self.diverged_at.is_some(),
            diverged_at: self.diverged_at,
            steps_done: self.t,
            training_flops_ratio: self.ledger.training_ratio(),
            testing_flops_ratio: self.ledger.testing_ratio(),
            flops_cum: self.ledger.cumulative(),
            g_masks_final: self.g.mask_hashes(),
            d_masks_final: self.d.mask_hashes(),
            g_masks_initial: self.g_masks_initial.clone(),
            d_masks_initial: self.d_masks_initial.clone(),
            itop_rate_g: self.tracker_g.rate(),
            itop_rate_d: self.tracker_d.rate(),
            config: self.cfg.clone(),
            rows: self.rows.clone(),
            events: self.events.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneMode {
    Global,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneTarget {
    G,
    GAndD,
}

/// Sparse (or dense) training from scratch per the config.
pub fn train(cfg: &TrainConfig) -> Result<RunResult> {
    train_to_dir(cfg, None)
}

/// As train, but also records the run (metrics, masks, checkpoint) under dir.
pub fn train_to_dir(cfg: &TrainConfig, dir: Option<&Path>) -> Result<RunResult> {
    let mut tr = Trainer::new(cfg)?;
    tr.run_steps(cfg.steps)?;
    let result = tr.result();
    if let Some(dir) = dir {
        write_run_dir(dir, &result, Some(&tr))?;
    }
    Ok(result)
}

/// Prune-then-tune baseline: dense training for cfg.steps, one-shot
/// magnitude pruning to (cfg.s_g, cfg.s_d), then fine-tuning for cfg.steps
/// more with the pruned supports fixed. The cost meter spans both phases, so
/// the training ratio lands above 1x dense.
pub fn run_pf(cfg: &TrainConfig, mode: PruneMode, target: PruneTarget) -> Result<RunResult> {
    run_pf_to_dir(cfg, mode, target, None)
}

pub fn run_pf_to_dir(
    cfg: &TrainConfig,
    mode: PruneMode,
    target: PruneTarget,
    dir: Option<&Path>,
) -> Result<RunResult> {
    cfg.validate()?;
    let dense_cfg = TrainConfig {
        s_g: 0.0,
        s_d: 0.0,
        explore_target: ExploreTarget::None,
        ..cfg.clone()
    };
    let mut tr = Trainer::new(&dense_cfg)?;
    tr.planned_steps = 2 * cfg.steps;
    tr.run_steps(cfg.steps)?;
    if !tr.diverged() {
        tr.prune_to(cfg.s_g, cfg.s_d, mode, target)?;
        tr.run_steps(cfg.steps)?;
    }
    let mut result = tr.result();
    // the run is described by the requested config, not the dense bootstrap
    result.config = cfg.clone();
    if let Some(dir) = dir {
        write_run_dir(dir, &result, Some(&tr))?;
    }
    Ok(result)
}

/// n generator outputs from fresh seeded latents.
pub fn sample_generator(
    g: &Mlp,
    source: WeightSource,
    latent_dim: usize,
    n: usize,
    seed: u64,
) -> Result<Tensor> {
    if n < 1 {
        return Err(Error::Domain("sample count must be >= 1".into()));
    }
    let z = sample_latent(n, latent_dim, &mut derive_rng(seed, Domain::Eval, 0));
    g.eval(&z, source)
}

// ── Run directory ────────────────────────────────────────────────────

pub const METRICS_HEADER: [&str; 8] = [
    "step", "d_loss", "g_loss", "coverage", "hq_ratio", "w1", "itop_rate", "flops_cum",
];

/// Writes config.json, metrics.csv, events.log, masks/, and summary.json.
pub fn write_run_dir(dir: &Path, result: &RunResult, trainer: Option<&Trainer>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&result.config)?,
    )?;

    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(dir.join("metrics.csv"))?;
    w.write_record(METRICS_HEADER)?;
    for row in &result.rows {
        w.serialize(row)?;
    }
    w.flush()?;

    let mut events = String::new();
    for e in &result.events {
        events.push_str(&serde_json::to_string(e)?);
        events.push('\n');
    }
    std::fs::write(dir.join("events.log"), events)?;

    let summary = serde_json::json!({
        "config_hash": format!("{:016x}", result.config.hash()),
        "diverged": result.diverged,
        "diverged_at": result.diverged_at,
        "steps_done": result.steps_done,
        "training_flops_ratio": result.training_flops_ratio,
        "testing_flops_ratio": result.testing_flops_ratio,
        "flops_cum": result.flops_cum,
        "itop_rate_g": result.itop_rate_g,
        "itop_rate_d": result.itop_rate_d,
        "g_masks_initial": hex_all(&result.g_masks_initial),
        "g_masks_final": hex_all(&result.g_masks_final),
        "d_masks_initial": hex_all(&result.d_masks_initial),
        "d_masks_final": hex_all(&result.d_masks_final),
        "final": result.final_row(),
    });
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;

    if let Some(tr) = trainer {
        let mask_dir = dir.join("masks");
        std::fs::create_dir_all(&mask_dir)?;
        let g_masks: Vec<Mask> = tr.g.weights.iter().map(|p| p.mask.clone()).collect();
        let d_masks: Vec<Mask> = tr.d.weights.iter().map(|p| p.mask.clone()).collect();
        let mut f = std::fs::File::create(mask_dir.join("g_final.bin"))?;
        write_masks(&mut f, &g_masks)?;
        let mut f = std::fs::File::create(mask_dir.join("d_final.bin"))?;
        write_masks(&mut f, &d_masks)?;
        tr.save_checkpoint(&dir.join("checkpoint.bin"))?;
    }
    Ok(())
}

fn hex_all(hashes: &[u64]) -> Vec<String> {
    hashes.iter().map(|h| format!("{:016x}", h)).collect()
}

// ── Checkpointing ────────────────────────────────────────────────────
//
// Binary layout, little-endian: magic "SECK", u32 version, then
// length-prefixed JSON chunks for config/rows/events/ledger, scalar state,
// three RNG streams, every parameter tensor, and the tracker bitsets.
// Restores bit-exactly: a resumed run finishes identical to an uninterrupted
// one.

const CKPT_MAGIC: &[u8; 4] = b"SECK";
const CKPT_VERSION: u32 = 1;

struct Enc<W: Write>(W);

impl<W: Write> Enc<W> {
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.u64(b.len() as u64)?;
        Ok(self.0.write_all(b)?)
    }
    fn tensor(&mut self, t: &Tensor) -> Result<()> {
        self.u32(t.shape().len() as u32)?;
        for &d in t.shape() {
            self.u64(d as u64)?;
        }
        for &v in t.data() {
            self.f64(v)?;
        }
        Ok(())
    }
    fn rng(&mut self, state: &RngState) -> Result<()> {
        self.0.write_all(&state.seed)?;
        self.0.write_all(&state.word_pos.to_le_bytes())?;
        self.u64(state.stream)
    }
    fn param(&mut self, p: &SparseParam) -> Result<()> {
        self.tensor(&p.values)?;
        self.bytes(p.mask.bits())?;
        self.tensor(&p.adam_m)?;
        self.tensor(&p.adam_v)?;
        self.tensor(&p.avg)?;
        for &a in &p.age {
            self.u64(a)?;
        }
        Ok(())
    }
}

struct Dec<R: Read>(R);

impl<R: Read> Dec<R> {
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.u64()? as usize;
        let mut b = vec![0u8; n];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.f64()?);
        }
        Tensor::new(shape, data)
    }
    fn rng(&mut self) -> Result<RngState> {
        let mut seed = [0u8; 32];
        self.0.read_exact(&mut seed)?;
        let mut wp = [0u8; 16];
        self.0.read_exact(&mut wp)?;
        Ok(RngState {
            seed,
            word_pos: u128::from_le_bytes(wp),
            stream: self.u64()?,
        })
    }
    fn param(&mut self) -> Result<SparseParam> {
        let values = self.tensor()?;
        let bits = self.bytes()?;
        let mask = Mask::from_bits(values.shape().to_vec(), bits)?;
        let adam_m = self.tensor()?;
        let adam_v = self.tensor()?;
        let avg = self.tensor()?;
        let n = values.len();
        let mut age = Vec::with_capacity(n);
        for _ in 0..n {
            age.push(self.u64()?);
        }
        Ok(SparseParam {
            values,
            mask,
            adam_m,
            adam_v,
            avg,
            age,
        })
    }
}

impl Trainer {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut enc = Enc(std::io::BufWriter::new(file));
        enc.0.write_all(CKPT_MAGIC)?;
        enc.u32(CKPT_VERSION)?;
        enc.bytes(serde_json::to_string(&self.cfg)?.as_bytes())?;
        enc.bytes(serde_json::to_string(&self.rows)?.as_bytes())?;
        enc.bytes(serde_json::to_string(&self.events)?.as_bytes())?;
        enc.bytes(serde_json::to_string(&self.ledger)?.as_bytes())?;
        enc.u64(self.t)?;
        enc.u64(self.adam_t_g)?;
        enc.u64(self.adam_t_d)?;
        enc.u64(self.planned_steps)?;
        enc.u64(match self.diverged_at {
            Some(t) => t + 1,
            None => 0,
        })?;
        enc.f64(self.last_d_loss)?;
        enc.f64(self.last_g_loss)?;
        enc.rng(&save_rng(&self.rng_data))?;
        enc.rng(&save_rng(&self.rng_latent))?;
        enc.rng(&save_rng(&self.rng_explore))?;
        for net in [&self.g, &self.d] {
            for p in net.weights.iter().chain(net.biases.iter()) {
                enc.param(p)?;
            }
        }
        let grads_blob = |lg: &Option<LossGrads>| -> Result<Vec<u8>> {
            Ok(serde_json::to_string(&lg.as_ref().map(|g| {
                (
                    g.loss,
                    g.w_grads.iter().map(flat).collect::<Vec<_>>(),
                    g.b_grads.iter().map(flat).collect::<Vec<_>>(),
                )
            }))?
            .into_bytes())
        };
        enc.bytes(&grads_blob(&self.last_d_grads)?)?;
        enc.bytes(&grads_blob(&self.last_g_grads)?)?;
        for tracker in [&self.tracker_g, &self.tracker_d] {
            enc.u32(tracker.layer_bits().len() as u32)?;
            for bits in tracker.layer_bits() {
                enc.bytes(bits)?;
            }
        }
        for hashes in [&self.g_masks_initial, &self.d_masks_initial] {
            enc.u32(hashes.len() as u32)?;
            for &h in hashes.iter() {
                enc.u64(h)?;
            }
        }
        enc.0.flush()?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut dec = Dec(std::io::BufReader::new(file));
        let mut magic = [0u8; 4];
        dec.0.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Config("not a checkpoint file".into()));
        }
        if dec.u32()? != CKPT_VERSION {
            return Err(Error::Config("unsupported checkpoint version".into()));
        }
        let cfg: TrainConfig = serde_json::from_slice(&dec.bytes()?)?;
        let rows: Vec<MetricsRow> = serde_json::from_slice(&dec.bytes()?)?;
        let events: Vec<ExploreEvent> = serde_json::from_slice(&dec.bytes()?)?;
        let ledger: FlopsLedger = serde_json::from_slice(&dec.bytes()?)?;
        let t = dec.u64()?;
        let adam_t_g = dec.u64()?;
        let adam_t_d = dec.u64()?;
        let planned_steps = dec.u64()?;
        let diverged_at = match dec.u64()? {
            0 => None,
            v => Some(v - 1),
        };
        let last_d_loss = dec.f64()?;
        let last_g_loss = dec.f64()?;
        let rng_data = restore_rng(&dec.rng()?);
        let rng_latent = restore_rng(&dec.rng()?);
        let rng_explore = restore_rng(&dec.rng()?);

        let mut fresh = Trainer::new(&cfg)?;
        let read_net = |dec: &mut Dec<_>, net: &mut Mlp| -> Result<()> {
            for p in net.weights.iter_mut() {
                *p = dec.param()?;
            }
            for p in net.biases.iter_mut() {
                *p = dec.param()?;
            }
            Ok(())
        };
        read_net(&mut dec, &mut fresh.g)?;
        read_net(&mut dec, &mut fresh.d)?;
        type GradsBlob = Option<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)>;
        let mut read_grads = |net: &Mlp| -> Result<Option<LossGrads>> {
            let blob: GradsBlob = serde_json::from_slice(&dec.bytes()?)?;
            Ok(blob.map(|(loss, w, b)| LossGrads {
                loss,
                w_grads: w
                    .into_iter()
                    .zip(&net.weights)
                    .map(|(d, p)| Tensor::new(p.values.shape().to_vec(), d).expect("shape"))
                    .collect(),
                b_grads: b
                    .into_iter()
                    .zip(&net.biases)
                    .map(|(d, p)| Tensor::new(p.values.shape().to_vec(), d).expect("shape"))
                    .collect(),
            }))
        };
        let last_d_grads = read_grads(&fresh.d)?;
        let last_g_grads = read_grads(&fresh.g)?;
        let read_tracker = |dec: &mut Dec<_>| -> Result<ItopTracker> {
            let n = dec.u32()? as usize;
            let mut layers = Vec::with_capacity(n);
            for _ in 0..n {
                layers.push(dec.bytes()?);
            }
            Ok(ItopTracker::restore(layers))
        };
        fresh.tracker_g = read_tracker(&mut dec)?;
        fresh.tracker_d = read_tracker(&mut dec)?;
        let read_hashes = |dec: &mut Dec<_>| -> Result<Vec<u64>> {
            let n = dec.u32()? as usize;
            let mut h = Vec::with_capacity(n);
            for _ in 0..n {
                h.push(dec.u64()?);
            }
            Ok(h)
        };
        fresh.g_masks_initial = read_hashes(&mut dec)?;
        fresh.d_masks_initial = read_hashes(&mut dec)?;
        fresh.rows = rows;
        fresh.events = events;
        fresh.ledger = ledger;
        fresh.t = t;
        fresh.adam_t_g = adam_t_g;
        fresh.adam_t_d = adam_t_d;
        fresh.planned_steps = planned_steps;
        fresh.diverged_at = diverged_at;
        fresh.last_d_loss = last_d_loss;
        fresh.last_g_loss = last_g_loss;
        fresh.rng_data = rng_data;
        fresh.rng_latent = rng_latent;
        fresh.rng_explore = rng_explore;
        fresh.last_d_grads = last_d_grads;
        fresh.last_g_grads = last_g_grads;
        Ok(fresh)
    }
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.data().to_vec()
}

/// Reads a masks file written into a run directory.
pub fn read_mask_file(path: &Path) -> Result<Vec<Mask>> {
    let mut f = std::fs::File::open(path)?;
    read_masks(&mut f)
}

/// Unused by the engine itself: kept public so external tools can re-derive
/// the pruning rate the run used at a given step.
pub fn schedule_rate(cfg: &TrainConfig, t: u64) -> Option<f64> {
    pruning_rate(&cfg.schedule.resolve(cfg.steps), t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            steps: 40,
            batch: 16,
            g_hidden: vec![16],
            d_hidden: vec![16],
            latent_dim: 4,
            eval_interval: 20,
            eval_samples: 200,
            eval_projections: 4,
            schedule: ScheduleConfig {
                delta_t: 10,
                p0: 0.5,
                decay: Decay::Cosine,
                t_end: Some(30),
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn validate_rejects_bad_fields() {
        let mut cfg = quick_cfg();
        cfg.s_g = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = quick_cfg();
        cfg.schedule.t_end = Some(99);
        assert!(cfg.validate().is_err());
        let mut cfg = quick_cfg();
        cfg.batch = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let r: std::result::Result<TrainConfig, _> =
            serde_json::from_str(r#"{"steps": 10, "stepz": 3}"#);
        let msg = r.unwrap_err().to_string();
        assert!(msg.contains("stepz"));
    }

    #[test]
    fn static_run_keeps_masks_stationary() {
        let cfg = TrainConfig {
            explore_target: ExploreTarget::None,
            ..quick_cfg()
        };
        let result = train(&cfg).unwrap();
        assert!(!result.diverged);
        assert_eq!(result.g_masks_initial, result.g_masks_final);
        assert_eq!(result.d_masks_initial, result.d_masks_final);
        assert!(result.events.is_empty());
    }

    #[test]
    fn dense_run_is_all_ones() {
        let cfg = TrainConfig {
            s_g: 0.0,
            s_d: 0.0,
            explore_target: ExploreTarget::None,
            ..quick_cfg()
        };
        let tr = {
            let mut tr = Trainer::new(&cfg).unwrap();
            tr.run_steps(cfg.steps).unwrap();
            tr
        };
        for p in tr.g.weights.iter().chain(tr.d.weights.iter()) {
            assert_eq!(p.active_count(), p.len());
        }
        let result = tr.result();
        assert_eq!(result.training_flops_ratio, 1.0);
        assert_eq!(result.testing_flops_ratio, 1.0);
    }

    #[test]
    fn stu_run_explores_and_conserves_sparsity() {
        let cfg = quick_cfg();
        let mut tr = Trainer::new(&cfg).unwrap();
        let counts_before = tr.g.active_counts();
        tr.run_steps(cfg.steps).unwrap();
        assert!(!tr.diverged());
        assert_eq!(tr.g.active_counts(), counts_before);
        let result = tr.result();
        // delta_t=10, t_end=30: explorations at 10, 20, 30
        let expected_events = 3 * cfg.gan_spec().g_layers.len();
        assert_eq!(result.events.len(), expected_events);
        assert_ne!(result.g_masks_initial, result.g_masks_final);
        assert_eq!(result.d_masks_initial, result.d_masks_final);
    }

    #[test]
    fn run_is_bit_deterministic() {
        let cfg = quick_cfg();
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seeds_change_the_run() {
        let cfg = quick_cfg();
        let a = train(&cfg).unwrap();
        let b = train(&TrainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.rows, b.rows);
    }

    #[test]
    fn explore_d_touches_only_d() {
        let cfg = TrainConfig {
            explore_target: ExploreTarget::D,
            ..quick_cfg()
        };
        let result = train(&cfg).unwrap();
        assert_eq!(result.g_masks_initial, result.g_masks_final);
        assert_ne!(result.d_masks_initial, result.d_masks_final);
    }

    #[test]
    fn pf_spans_two_phases_and_exceeds_dense_budget() {
        let cfg = quick_cfg();
        let result = run_pf(&cfg, PruneMode::Uniform, PruneTarget::GAndD).unwrap();
        assert!(!result.diverged);
        assert_eq!(result.steps_done, 2 * cfg.steps);
        assert!(result.training_flops_ratio > 1.0);
        assert!(result.testing_flops_ratio < 1.0);
    }

    #[test]
    fn pf_zero_sparsity_is_double_dense() {
        let cfg = TrainConfig {
            s_g: 0.0,
            s_d: 0.0,
            ..quick_cfg()
        };
        let result = run_pf(&cfg, PruneMode::Global, PruneTarget::GAndD).unwrap();
        assert_eq!(result.training_flops_ratio, 2.0);
        assert_eq!(result.testing_flops_ratio, 1.0);
    }

    #[test]
    fn pf_prune_target_g_keeps_d_dense() {
        let cfg = quick_cfg();
        let dense_cfg = TrainConfig {
            s_g: 0.0,
            s_d: 0.0,
            explore_target: ExploreTarget::None,
            ..cfg.clone()
        };
        let mut tr = Trainer::new(&dense_cfg).unwrap();
        tr.run_steps(5).unwrap();
        tr.prune_to(0.5, 0.5, PruneMode::Uniform, PruneTarget::G).unwrap();
        for p in &tr.d.weights {
            assert_eq!(p.active_count(), p.len());
        }
        for p in &tr.g.weights {
            assert_eq!(p.active_count(), (p.len() + 1) / 2);
        }
    }

    #[test]
    fn pf_modes_differ_on_heterogeneous_layers() {
        let cfg = TrainConfig {
            g_hidden: vec![32, 8],
            ..quick_cfg()
        };
        let a = run_pf(&cfg, PruneMode::Uniform, PruneTarget::GAndD).unwrap();
        let b = run_pf(&cfg, PruneMode::Global, PruneTarget::GAndD).unwrap();
        assert_ne!(a.g_masks_final, b.g_masks_final);
    }

    #[test]
    fn sample_generator_is_seed_deterministic() {
        let cfg = quick_cfg();
        let mut tr = Trainer::new(&cfg).unwrap();
        tr.run_steps(5).unwrap();
        let a = sample_generator(&tr.g, WeightSource::Current, cfg.latent_dim, 32, 11).unwrap();
        let b = sample_generator(&tr.g, WeightSource::Current, cfg.latent_dim, 32, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[32, 2]);
        assert!(sample_generator(&tr.g, WeightSource::Current, cfg.latent_dim, 0, 1).is_err());
    }

    #[test]
    fn checkpoint_resume_is_bit_exact() {
        let cfg = quick_cfg();
        let uninterrupted = train(&cfg).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("mid.bin");
        let mut tr = Trainer::new(&cfg).unwrap();
        tr.run_steps(17).unwrap();
        tr.save_checkpoint(&ckpt).unwrap();
        drop(tr);
        let mut resumed = Trainer::load_checkpoint(&ckpt).unwrap();
        resumed.run_steps(cfg.steps - 17).unwrap();
        let result = resumed.result();
        assert_eq!(result, uninterrupted);
    }

    #[test]
    fn run_dir_contains_expected_files() {
        let cfg = quick_cfg();
        let mut tr = Trainer::new(&cfg).unwrap();
        tr.run_steps(cfg.steps).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let result = RunResult {
            config: cfg.clone(),
            rows: vec![],
            events: vec![],
            diverged: false,
            diverged_at: None,
            steps_done: cfg.steps,
            training_flops_ratio: 0.5,
            testing_flops_ratio: 0.5,
            flops_cum: 1.0,
            g_masks_initial: tr.g_masks_initial.clone(),
            g_masks_final: tr.g.mask_hashes(),
            d_masks_initial: tr.d_masks_initial.clone(),
            d_masks_final: tr.d.mask_hashes(),
            itop_rate_g: 0.0,
            itop_rate_d: 0.0,
        };
        write_run_dir(dir.path(), &result, Some(&tr)).unwrap();
        for f in ["config.json", "metrics.csv", "events.log", "summary.json", "checkpoint.bin"] {
            assert!(dir.path().join(f).exists(), "{} missing", f);
        }
        let masks = read_mask_file(&dir.path().join("masks/g_final.bin")).unwrap();
        let hashes: Vec<u64> = masks.iter().map(|m| m.support_hash()).collect();
        assert_eq!(hashes, result.g_masks_final);
    }

    #[test]
    fn env_free_config_roundtrip() {
        let cfg = quick_cfg();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }
}
