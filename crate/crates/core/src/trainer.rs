//! Online/target training loop.
//!
//! Each step samples `M` trajectories from the target network's forward
//! policy, takes one Adam step on the online network's loss over those
//! trajectories, and, on schedule, moves the target toward the online
//! network by Polyak averaging. No importance weights are applied: both
//! balance objectives are valid off-policy, so any full-support sampler
//! (here the target network) can supply the training trajectories.
//!
//! The plain GFlowNet baseline has no separate target; it samples from the
//! network it trains.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig};
use crate::checkpoint::{Checkpoint, RngState};
use crate::env::{EnvConfig, HyperGrid, Trajectory, MAX_ENUMERABLE_STATES};
use crate::metrics::{MetricRecord, MetricsTracker, SampleWindow, DEFAULT_WINDOW};
use crate::objectives::{loss_and_grads, LossReport, Objective};
use crate::oracle::{sampler_distribution, target_distribution};
use crate::policy::{polyak, sample_batch, ModelConfig, PolicyArch, PolicySet};
use crate::Error;

/// Window of the smoothed training loss.
pub const LOSS_SMOOTHING: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Gfn,
    Dgfn,
}

impl Algorithm {
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Gfn => "GFN",
            Algorithm::Dgfn => "DGFN",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub algorithm: Algorithm,
    pub objective: Objective,
    /// Steps `t < initial_phase` always update the target.
    pub initial_phase: u64,
    /// After the initial phase the target is updated when `t % update_period == 0`.
    pub update_period: u64,
    /// Polyak coefficient `alpha` in `target <- alpha * online + (1 - alpha) * target`.
    pub polyak: f64,
    /// Copy the online network outright during the initial phase.
    pub initial_phase_full_copy: bool,
    pub batch_size: usize,
    pub total_steps: u64,
    pub lr: f64,
    pub lr_logz: f64,
    pub subtb_lambda: f64,
    pub exploration_eps: f64,
    pub seed: u64,
    pub metric_cadence: u64,
    /// Zero keeps only the final checkpoint.
    pub checkpoint_cadence: u64,
    /// Terminal states kept for the empirical L1.
    pub window: usize,
    /// Largest grid on which the exact sampler L1 is computed at each metric step.
    pub oracle_max_states: usize,
    pub model: ModelConfig,
    pub adam: AdamConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        let (initial_phase, update_period) = Self::hypergrid_schedule(Objective::Tb);
        Self {
            algorithm: Algorithm::Dgfn,
            objective: Objective::Tb,
            initial_phase,
            update_period,
            polyak: 0.25,
            initial_phase_full_copy: false,
            batch_size: 64,
            total_steps: 10_000,
            lr: 1e-3,
            lr_logz: 1e-1,
            subtb_lambda: 0.9,
            exploration_eps: 0.0,
            seed: 0,
            metric_cadence: 10,
            checkpoint_cadence: 1000,
            window: DEFAULT_WINDOW,
            oracle_max_states: 4096,
            model: ModelConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainerConfig {
    /// Tuned `(T_I, T_U)` for the hypergrid per objective.
    pub fn hypergrid_schedule(objective: Objective) -> (u64, u64) {
        match objective {
            Objective::Tb => (698, 137),
            Objective::SubTb => (794, 149),
        }
    }

    /// Field-level validation; the message names the offending field.
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |field: &str, msg: String| Err(Error::InvalidConfig(format!("{field}: {msg}")));
        if self.update_period < 1 {
            return bad("update_period", "must be at least 1".into());
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return bad("polyak", format!("must lie in (0, 1], got {}", self.polyak));
        }
        if self.batch_size < 1 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.metric_cadence < 1 {
            return bad("metric_cadence", "must be at least 1".into());
        }
        for (field, lr) in [("lr", self.lr), ("lr_logz", self.lr_logz)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(field, format!("must be positive, got {lr}"));
            }
        }
        if !(self.subtb_lambda > 0.0 && self.subtb_lambda <= 1.0) {
            return bad(
                "subtb_lambda",
                format!("must lie in (0, 1], got {}", self.subtb_lambda),
            );
        }
        if !(0.0..1.0).contains(&self.exploration_eps) {
            return bad(
                "exploration_eps",
                format!("must lie in [0, 1), got {}", self.exploration_eps),
            );
        }
        if self.window < 1 {
            return bad("window", "must be at least 1".into());
        }
        if self.model.hidden < 1 {
            return bad("model.hidden", "must be at least 1".into());
        }
        if !(self.model.leaky_slope >= 0.0 && self.model.leaky_slope < 1.0) {
            return bad(
                "model.leaky_slope",
                format!("must lie in [0, 1), got {}", self.model.leaky_slope),
            );
        }
        Ok(())
    }
}

/// `t < T_I` or `t mod T_U == 0`, for steps numbered from 1.
pub fn should_update_target(t: u64, config: &TrainerConfig) -> bool {
    t < config.initial_phase || t.is_multiple_of(config.update_period)
}

/// The sampling network and the step at which it last changed.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetState {
    pub params: PolicySet,
    pub last_update: u64,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub report: LossReport,
    pub batch: Vec<Trajectory>,
    pub target_updated: bool,
}

fn learning_rates(params: &PolicySet, config: &TrainerConfig) -> Vec<f64> {
    params
        .names()
        .iter()
        .map(|n| if n == "logz" { config.lr_logz } else { config.lr })
        .collect()
}

/// One iteration of the training loop at step `t`.
///
/// Trajectories come from `target` when present and from `online`
/// otherwise; the loss is differentiated with respect to `online` only.
pub fn train_step<R: Rng + ?Sized>(
    env: &HyperGrid,
    config: &TrainerConfig,
    t: u64,
    online: &mut PolicySet,
    target: Option<&mut TargetState>,
    adam: &mut Adam,
    rng: &mut R,
) -> Result<StepOutcome, Error> {
    let sampler = match &target {
        Some(state) => &state.params,
        None => &*online,
    };
    let batch = sample_batch(sampler, env, config.batch_size, config.exploration_eps, rng)?;
    let (report, grads) = loss_and_grads(online, env, &batch, config.objective, config.subtb_lambda)
        .map_err(|e| match e {
            Error::NonFiniteLoss { residuals, .. } => Error::NonFiniteLoss { step: t, residuals },
            e => e,
        })?;
    adam.step(online.tensors_mut(), &grads)?;

    let mut target_updated = false;
    if let Some(state) = target {
        if should_update_target(t, config) {
            let alpha = if t < config.initial_phase && config.initial_phase_full_copy {
                1.0
            } else {
                config.polyak
            };
            polyak(&mut state.params, online, alpha)?;
            state.last_update = t;
            target_updated = true;
        }
    }
    Ok(StepOutcome {
        report,
        batch,
        target_updated,
    })
}

/// Complete state of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    env: HyperGrid,
    config: TrainerConfig,
    online: PolicySet,
    target: Option<TargetState>,
    adam: Adam,
    rng: ChaCha8Rng,
    step: u64,
    trajectories: u64,
    metrics: MetricsTracker,
    recent_losses: VecDeque<f64>,
}

impl Trainer {
    /// Fresh run; the online network is initialized from `config.seed` and
    /// the target starts as an exact copy.
    pub fn new(env_config: EnvConfig, config: TrainerConfig) -> Result<Self, Error> {
        config.validate()?;
        let env = HyperGrid::new(env_config)?;
        let arch = PolicyArch::new(&env, config.model.clone(), config.objective.needs_log_flow());
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let online = PolicySet::init(arch, &mut init_rng);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let target = match config.algorithm {
            Algorithm::Gfn => None,
            Algorithm::Dgfn => Some(TargetState {
                params: online.clone(),
                last_update: 0,
            }),
        };
        let adam = Adam::new(
            config.adam,
            online.tensors(),
            online.names().to_vec(),
            learning_rates(&online, &config),
        );
        let enumerable = env.num_states_u128().is_some_and(|n| n <= MAX_ENUMERABLE_STATES);
        let target_probs = if enumerable {
            Some(target_distribution(&env)?.probs)
        } else {
            None
        };
        let metrics = MetricsTracker::new(&env, config.window, target_probs)?;
        Ok(Self {
            env,
            config,
            online,
            target,
            adam,
            rng,
            step: 0,
            trajectories: 0,
            metrics,
            recent_losses: VecDeque::with_capacity(LOSS_SMOOTHING),
        })
    }

    pub fn env(&self) -> &HyperGrid {
        &self.env
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn online(&self) -> &PolicySet {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut PolicySet {
        &mut self.online
    }

    /// The sampling network: the target for DGFN, the online network for GFN.
    pub fn sampler(&self) -> &PolicySet {
        match &self.target {
            Some(t) => &t.params,
            None => &self.online,
        }
    }

    pub fn target(&self) -> Option<&TargetState> {
        self.target.as_ref()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn trajectories(&self) -> u64 {
        self.trajectories
    }

    pub fn metrics(&self) -> &MetricsTracker {
        &self.metrics
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.total_steps
    }

    /// Mean of the last [`LOSS_SMOOTHING`] step losses.
    pub fn smoothed_loss(&self) -> Option<f64> {
        if self.recent_losses.is_empty() {
            return None;
        }
        Some(self.recent_losses.iter().sum::<f64>() / self.recent_losses.len() as f64)
    }

    /// Exact L1 between the online sampler and the target, if the grid is small enough.
    pub fn oracle_l1(&self) -> Result<Option<f64>, Error> {
        let small = self
            .env
            .num_states_u128()
            .is_some_and(|n| n <= self.config.oracle_max_states as u128);
        let Some(target) = self.metrics.target().filter(|_| small) else {
            return Ok(None);
        };
        let p = sampler_distribution(&self.online, &self.env)?;
        Ok(Some(crate::metrics::l1_distance(&p.probs, target)))
    }

    /// Run one step; returns a metric record on cadence steps and at the last step.
    pub fn advance(&mut self) -> Result<(StepOutcome, Option<MetricRecord>), Error> {
        let t = self.step + 1;
        let outcome = train_step(
            &self.env,
            &self.config,
            t,
            &mut self.online,
            self.target.as_mut(),
            &mut self.adam,
            &mut self.rng,
        )?;
        self.step = t;
        self.trajectories += outcome.batch.len() as u64;
        self.metrics.observe(
            &self.env,
            outcome.batch.iter().map(|tau| tau.terminal()),
            self.trajectories,
        );
        if self.recent_losses.len() == LOSS_SMOOTHING {
            self.recent_losses.pop_front();
        }
        self.recent_losses.push_back(outcome.report.loss);

        let record = if t.is_multiple_of(self.config.metric_cadence) || t == self.config.total_steps {
            Some(self.record(&outcome)?)
        } else {
            None
        };
        Ok((outcome, record))
    }

    fn record(&self, outcome: &StepOutcome) -> Result<MetricRecord, Error> {
        let mean_reward =
            outcome.batch.iter().map(|tau| tau.reward).sum::<f64>() / outcome.batch.len() as f64;
        Ok(MetricRecord {
            step: self.step,
            trajectories: self.trajectories,
            loss: outcome.report.loss,
            l1: self.metrics.window_l1(),
            modes: self.metrics.modes.count(),
            modes_frac: self.metrics.modes.fraction(),
            mean_reward,
            log_z: self.online.log_z(),
            oracle_l1: self.oracle_l1()?,
        })
    }

    /// Run to `total_steps`, collecting the metric stream.
    pub fn run(&mut self) -> Result<Vec<MetricRecord>, Error> {
        let mut records = Vec::new();
        while !self.is_done() {
            if let (_, Some(r)) = self.advance()? {
                records.push(r);
            }
        }
        Ok(records)
    }

    /// Snapshot of everything needed to continue the run bit for bit.
    pub fn checkpoint(&self, config_hash: &str) -> Checkpoint {
        let (m, v) = self.adam.moments();
        Checkpoint {
            step: self.step,
            trajectories: self.trajectories,
            config_hash: config_hash.to_string(),
            names: self.online.names().to_vec(),
            online: self.online.tensors().to_vec(),
            target: self
                .target
                .as_ref()
                .map(|t| (t.params.tensors().to_vec(), t.last_update)),
            adam_m: m.to_vec(),
            adam_v: v.to_vec(),
            adam_t: self.adam.step_count(),
            rng: RngState {
                seed: self.rng.get_seed(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos(),
            },
            window: self
                .metrics
                .window
                .as_ref()
                .map(|w| w.contents().collect())
                .unwrap_or_default(),
            discovered: self.metrics.modes.discovered().cloned().collect(),
            trajectories_to_all_modes: self.metrics.trajectories_to_all_modes,
            recent_losses: self.recent_losses.iter().copied().collect(),
        }
    }

    /// Rebuild a run from a checkpoint taken under the same configuration.
    pub fn restore(env_config: EnvConfig, config: TrainerConfig, ckpt: &Checkpoint) -> Result<Self, Error> {
        let mut trainer = Self::new(env_config, config)?;
        if ckpt.names != trainer.online.names() {
            return Err(Error::Checkpoint("parameter names do not match the model".into()));
        }
        let arch = trainer.online.arch().clone();
        trainer.online = PolicySet::from_tensors(arch.clone(), ckpt.online.clone())?;
        trainer.target = match (&trainer.target, &ckpt.target) {
            (Some(_), Some((tensors, last_update))) => Some(TargetState {
                params: PolicySet::from_tensors(arch, tensors.clone())?,
                last_update: *last_update,
            }),
            (None, None) => None,
            _ => {
                return Err(Error::Checkpoint(
                    "checkpoint and configuration disagree on the target network".into(),
                ))
            }
        };
        trainer
            .adam
            .restore(ckpt.adam_m.clone(), ckpt.adam_v.clone(), ckpt.adam_t)?;
        let mut rng = ChaCha8Rng::from_seed(ckpt.rng.seed);
        rng.set_stream(ckpt.rng.stream);
        rng.set_word_pos(ckpt.rng.word_pos);
        trainer.rng = rng;
        trainer.step = ckpt.step;
        trainer.trajectories = ckpt.trajectories;
        if let Some(w) = &mut trainer.metrics.window {
            let mut restored = SampleWindow::new(w.capacity(), w.counts().len());
            for &i in &ckpt.window {
                if i >= w.counts().len() {
                    return Err(Error::Checkpoint(format!("window entry {i} out of range")));
                }
                restored.push(i);
            }
            *w = restored;
        }
        trainer.metrics.modes.update(ckpt.discovered.iter());
        trainer.metrics.trajectories_to_all_modes = ckpt.trajectories_to_all_modes;
        trainer.recent_losses = ckpt.recent_losses.iter().copied().collect();
        Ok(trainer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(algorithm: Algorithm) -> TrainerConfig {
        TrainerConfig {
            algorithm,
            batch_size: 8,
            total_steps: 20,
            metric_cadence: 5,
            model: ModelConfig {
                hidden: 32,
                ..ModelConfig::default()
            },
            ..TrainerConfig::default()
        }
    }

    #[test]
    fn schedule_examples() {
        let cfg = TrainerConfig {
            initial_phase: 698,
            update_period: 137,
            ..TrainerConfig::default()
        };
        assert!(should_update_target(5, &cfg));
        assert!(!should_update_target(700, &cfg));
        assert!(should_update_target(822, &cfg));
        assert!(should_update_target(697, &cfg));
        assert!(!should_update_target(698, &cfg));
    }

    #[test]
    fn validation_names_field() {
        let cfg = TrainerConfig {
            update_period: 0,
            ..TrainerConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("update_period"), "{msg}");
        let cfg = TrainerConfig {
            polyak: 0.0,
            ..TrainerConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("polyak"));
    }

    #[test]
    fn off_schedule_target_is_untouched() {
        let cfg = TrainerConfig {
            initial_phase: 2,
            update_period: 5,
            ..small(Algorithm::Dgfn)
        };
        let mut tr = Trainer::new(EnvConfig::new(2, 4), cfg).unwrap();
        let mut prev = tr.target().unwrap().params.clone();
        for t in 1..=12 {
            let (out, _) = tr.advance().unwrap();
            let now = &tr.target().unwrap().params;
            let expected = t < 2 || t % 5 == 0;
            assert_eq!(out.target_updated, expected, "step {t}");
            if !expected {
                assert!(now.bits_eq(&prev), "target moved at step {t}");
            } else {
                assert!(!now.bits_eq(&prev), "target did not move at step {t}");
                assert_eq!(tr.target().unwrap().last_update, t);
            }
            prev = now.clone();
        }
    }

    #[test]
    fn sampled_batch_ignores_online_parameters() {
        let cfg = small(Algorithm::Dgfn);
        let env = EnvConfig::new(2, 5);
        let mut a = Trainer::new(env.clone(), cfg.clone()).unwrap();
        let mut b = Trainer::new(env, cfg).unwrap();
        b.online_mut().param_mut("pf.bias").data_mut()[0] += 3.0;
        let (oa, _) = a.advance().unwrap();
        let (ob, _) = b.advance().unwrap();
        assert_eq!(oa.batch, ob.batch);
        assert_ne!(oa.report.loss, ob.report.loss);
    }

    #[test]
    fn copy_every_step_reduces_to_baseline() {
        let dgfn = TrainerConfig {
            initial_phase: 0,
            update_period: 1,
            polyak: 1.0,
            ..small(Algorithm::Dgfn)
        };
        let env = EnvConfig::new(2, 6);
        let a = Trainer::new(env.clone(), small(Algorithm::Gfn))
            .unwrap()
            .run()
            .unwrap();
        let b = Trainer::new(env, dgfn).unwrap().run().unwrap();
        assert_eq!(a.len(), 4);
        let csv = |rs: &[MetricRecord]| rs.iter().map(|r| r.csv_row()).collect::<Vec<_>>();
        assert_eq!(csv(&a), csv(&b));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let cfg = TrainerConfig {
            initial_phase: 3,
            update_period: 4,
            ..small(Algorithm::Dgfn)
        };
        let env = EnvConfig::new(2, 5);
        let full = Trainer::new(env.clone(), cfg.clone()).unwrap().run().unwrap();

        let mut first = Trainer::new(env.clone(), cfg.clone()).unwrap();
        for _ in 0..7 {
            first.advance().unwrap();
        }
        let ckpt = first.checkpoint("h");
        let mut resumed = Trainer::restore(env, cfg, &ckpt).unwrap();
        let tail = resumed.run().unwrap();
        assert_eq!(&full[full.len() - tail.len()..], &tail[..]);
        assert!(resumed.online().bits_eq(&{
            let mut again = first;
            again.run().unwrap();
            again.online().clone()
        }));
    }

    #[test]
    fn records_follow_cadence() {
        let cfg = TrainerConfig {
            total_steps: 12,
            ..small(Algorithm::Gfn)
        };
        let records = Trainer::new(EnvConfig::new(2, 4), cfg).unwrap().run().unwrap();
        let steps: Vec<u64> = records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![5, 10, 12]);
        assert_eq!(records[2].trajectories, 96);
        assert!(records.iter().all(|r| r.oracle_l1.is_some() && r.l1.is_some()));
    }
}
