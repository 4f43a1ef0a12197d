//! Balance objectives, computed entirely in log space.
//!
//! Trajectory balance: for a complete trajectory `tau` ending in `x`,
//!
//! ```text
//! residual(tau) = log Z + sum log P_F(tau) - log R(x) - sum log P_B(tau | x)
//! loss          = mean residual^2
//! ```
//!
//! Sub-trajectory balance applies the same residual to every contiguous
//! piece of a trajectory using a learned state flow `log F(s)`. The positions
//! of a trajectory with `n` increments are `0 ..= n+1`, where position 0 is
//! `s_0` with its flow tied to `log Z`, positions `1..=n` are the visited
//! states with learned `log F`, and position `n+1` is the sink whose incoming
//! flow is pinned to `log R(x)`. For every pair `i < j`,
//!
//! ```text
//! residual(i, j) = log F_i + sum_{i<t<=j} (log P_F_t - log P_B_t) - log F_j
//! ```
//!
//! with weight `lambda^(j-i)`. Each trajectory contributes its weighted mean
//! squared residual and the batch loss is the mean over trajectories. This
//! is a reconstruction of sub-trajectory balance; the pair `(0, n+1)` is the
//! trajectory-balance residual, so single-step trajectories reduce to TB.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::env::{HyperGrid, Trajectory};
use crate::policy::{batch_terms, log_pf_pb_on_tape, BatchTerms, PolicySet, PolicyVars};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Tb,
    #[serde(rename = "subtb")]
    SubTb,
}

impl Objective {
    pub fn label(self) -> &'static str {
        match self {
            Objective::Tb => "TB",
            Objective::SubTb => "SubTB",
        }
    }

    pub fn needs_log_flow(self) -> bool {
        matches!(self, Objective::SubTb)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// Full-trajectory balance residual of each trajectory.
    pub residuals: Vec<f64>,
    pub log_z: f64,
}

/// Loss node and the values needed for the report.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: Var,
    pub residuals: Var,
    pub log_z: Var,
}

impl LossOutput {
    pub fn report(&self, tape: &Tape) -> LossReport {
        LossReport {
            loss: tape.value(self.loss).data()[0],
            residuals: tape.value(self.residuals).data().to_vec(),
            log_z: tape.value(self.log_z).data()[0],
        }
    }
}

/// Scalar TB residual from its four components.
pub fn tb_residual(log_z: f64, sum_log_pf: f64, log_reward: f64, sum_log_pb: f64) -> f64 {
    log_z + sum_log_pf - log_reward - sum_log_pb
}

/// TB residuals and mean squared loss from per-trajectory sums on the tape.
pub fn tb_from_sums(
    tape: &mut Tape,
    log_z: Var,
    sum_log_pf: Var,
    sum_log_pb: Var,
    log_rewards: &[f64],
) -> Result<LossOutput, Error> {
    let neg_log_r = tape.constant(Tensor::vector(log_rewards.iter().map(|r| -r).collect()));
    let flow_gap = tape.sub(sum_log_pf, sum_log_pb)?;
    let with_z = tape.add_scalar(flow_gap, log_z)?;
    let residuals = tape.add(with_z, neg_log_r)?;
    let sq = tape.square(residuals);
    let loss = tape.mean(sq);
    Ok(LossOutput {
        loss,
        residuals,
        log_z,
    })
}

fn log_rewards(env: &HyperGrid, batch: &[Trajectory]) -> Result<Vec<f64>, Error> {
    batch
        .iter()
        .map(|tau| {
            let r = env.reward(tau.terminal());
            if r > 0.0 && r.is_finite() {
                Ok(r.ln())
            } else {
                Err(Error::NonPositiveReward(r))
            }
        })
        .collect()
}

/// Record the TB loss of `batch` under `params` on `tape`.
pub fn tb_on_tape(
    tape: &mut Tape,
    terms: &BatchTerms,
    env: &HyperGrid,
    batch: &[Trajectory],
) -> Result<LossOutput, Error> {
    let log_r = log_rewards(env, batch)?;
    let (sum_pf, sum_pb) = log_pf_pb_on_tape(tape, terms)?;
    tb_from_sums(tape, terms.log_z, sum_pf, sum_pb, &log_r)
}

/// Record the SubTB loss of `batch` on `tape`; requires the state-flow head.
pub fn subtb_on_tape(
    tape: &mut Tape,
    terms: &BatchTerms,
    env: &HyperGrid,
    batch: &[Trajectory],
    lambda: f64,
) -> Result<LossOutput, Error> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "subtb lambda must lie in (0, 1], got {lambda}"
        )));
    }
    let state_flow = terms.state_log_flow.ok_or(Error::MissingLogFlow)?;
    let log_r = log_rewards(env, batch)?;

    // Per-position sources, indexed into [0, log Z, log F(states..), log R(batch..)]
    // for flows and [0, transitions..] for the increments.
    let n_states: usize = batch.iter().map(|t| t.states.len()).sum();
    let mut flow_index = Vec::new();
    let mut step_index = Vec::new();
    let mut starts = Vec::new();
    let mut pair_i = Vec::new();
    let mut pair_j = Vec::new();
    let mut weights = Vec::new();
    let mut full_pairs = Vec::with_capacity(batch.len());
    let mut state_offset = 0;
    let batch_weight = 1.0 / batch.len() as f64;
    for (k, (tau, span)) in batch.iter().zip(&terms.spans).enumerate() {
        let base = flow_index.len();
        let n = tau.num_moves();
        for pos in 0..=n + 1 {
            flow_index.push(match pos {
                0 => 1,
                p if p <= n => 2 + state_offset + p,
                _ => 2 + n_states + k,
            });
            step_index.push(if pos == 0 { 0 } else { 1 + span.start + pos - 1 });
            starts.push(pos == 0);
        }
        state_offset += tau.states.len();

        let mut total = 0.0;
        let first_weight = weights.len();
        for i in 0..=n + 1 {
            for j in i + 1..=n + 1 {
                let w = lambda.powi((j - i) as i32);
                pair_i.push(base + i);
                pair_j.push(base + j);
                weights.push(w);
                total += w;
            }
        }
        for w in &mut weights[first_weight..] {
            *w *= batch_weight / total;
        }
        // pair (0, n+1) is the (n+1)-th pair with i = 0
        full_pairs.push(first_weight + n);
    }

    let zero = tape.constant(Tensor::scalar(0.0));
    let log_r_const = tape.constant(Tensor::vector(log_r));
    let flow_pool = tape.concat(&[zero, terms.log_z, state_flow, log_r_const]);
    let flows = tape.gather(flow_pool, flow_index)?;
    let deltas = tape.sub(terms.log_pf, terms.log_pb)?;
    let step_pool = tape.concat(&[zero, deltas]);
    let steps = tape.gather(step_pool, step_index)?;
    let cumulative = tape.segment_cumsum(steps, starts)?;
    // residual(i, j) = g_i - g_j with g = log F - cumulative increments
    let g = tape.sub(flows, cumulative)?;
    let g_i = tape.gather(g, pair_i)?;
    let g_j = tape.gather(g, pair_j)?;
    let pair_residuals = tape.sub(g_i, g_j)?;
    let sq = tape.square(pair_residuals);
    let loss = tape.weighted_sum(sq, weights)?;
    let residuals = tape.gather(pair_residuals, full_pairs)?;
    Ok(LossOutput {
        loss,
        residuals,
        log_z: terms.log_z,
    })
}

/// Record the chosen objective for `batch` under `params`.
pub fn loss_on_tape(
    tape: &mut Tape,
    params: &PolicySet,
    env: &HyperGrid,
    batch: &[Trajectory],
    objective: Objective,
    lambda: f64,
) -> Result<(LossOutput, Vec<Var>), Error> {
    let vars = params.bind(tape);
    let out = loss_with_vars(tape, params, &vars, env, batch, objective, lambda)?;
    Ok((out, vars.vars))
}

/// Like [`loss_on_tape`], reading parameter values from already bound `vars`.
pub fn loss_with_vars(
    tape: &mut Tape,
    params: &PolicySet,
    vars: &PolicyVars,
    env: &HyperGrid,
    batch: &[Trajectory],
    objective: Objective,
    lambda: f64,
) -> Result<LossOutput, Error> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty trajectory batch".into()));
    }
    let terms = batch_terms(tape, params, vars, env, batch)?;
    match objective {
        Objective::Tb => tb_on_tape(tape, &terms, env, batch),
        Objective::SubTb => subtb_on_tape(tape, &terms, env, batch, lambda),
    }
}

pub fn tb_loss(params: &PolicySet, env: &HyperGrid, batch: &[Trajectory]) -> Result<LossReport, Error> {
    let mut tape = Tape::new();
    let (out, _) = loss_on_tape(&mut tape, params, env, batch, Objective::Tb, 1.0)?;
    Ok(out.report(&tape))
}

pub fn subtb_loss(
    params: &PolicySet,
    env: &HyperGrid,
    batch: &[Trajectory],
    lambda: f64,
) -> Result<LossReport, Error> {
    let mut tape = Tape::new();
    let (out, _) = loss_on_tape(&mut tape, params, env, batch, Objective::SubTb, lambda)?;
    Ok(out.report(&tape))
}

/// Loss report and gradient of every parameter of `params`.
pub fn loss_and_grads(
    params: &PolicySet,
    env: &HyperGrid,
    batch: &[Trajectory],
    objective: Objective,
    lambda: f64,
) -> Result<(LossReport, Vec<Tensor>), Error> {
    let mut tape = Tape::new();
    let (out, vars) = loss_on_tape(&mut tape, params, env, batch, objective, lambda)?;
    let report = out.report(&tape);
    if !report.loss.is_finite() {
        // the caller fills in the step index
        return Err(Error::NonFiniteLoss {
            step: 0,
            residuals: report.residuals,
        });
    }
    let grads = tape.backward(out.loss)?;
    Ok((report, vars.iter().map(|&v| grads.wrt(v)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::env::{Action, EnvConfig, GridState};
    use crate::policy::{log_pf_pb, sample_batch, ModelConfig, PolicyArch};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(dim: usize, side: usize, hidden: usize, flow: bool, seed: u64) -> (HyperGrid, PolicySet) {
        let env = HyperGrid::new(EnvConfig::new(dim, side)).unwrap();
        let model = ModelConfig {
            hidden,
            ..ModelConfig::default()
        };
        let arch = PolicyArch::new(&env, model, flow);
        let params = PolicySet::init(arch, &mut ChaCha8Rng::seed_from_u64(seed));
        (env, params)
    }

    fn trajectory(env: &HyperGrid, moves: &[usize]) -> Trajectory {
        let mut states = vec![env.initial_state()];
        let mut actions = Vec::new();
        for &d in moves {
            let mut next = states.last().unwrap().clone();
            next.0[d] += 1;
            states.push(next);
            actions.push(Action::Increment(d));
        }
        actions.push(Action::Terminate);
        let reward = env.reward(states.last().unwrap());
        Trajectory {
            states,
            actions,
            reward,
            log_pf: None,
            log_pb: None,
        }
    }

    fn batch(env: &HyperGrid, params: &PolicySet, count: usize, seed: u64) -> Vec<Trajectory> {
        sample_batch(params, env, count, 0.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn residual_arithmetic() {
        let r = tb_residual(0.0, -2.0, -1.0, -0.5);
        assert_eq!(r, -0.5);
        assert_eq!(r * r, 0.25);
    }

    #[test]
    fn uniform_policy_balances_two_state_grid() {
        let (env, mut params) = setup(1, 2, 8, false, 0);
        for name in ["pf.weight", "pf.bias"] {
            params.param_mut(name).data_mut().fill(0.0);
        }
        let z = env.reward(&GridState(vec![0])) + env.reward(&GridState(vec![1]));
        params.set_log_z(z.ln());
        let both = [trajectory(&env, &[]), trajectory(&env, &[0])];
        let report = tb_loss(&params, &env, &both).unwrap();
        for r in &report.residuals {
            assert!(r.abs() < 1e-15, "{r}");
        }
        assert!(report.loss < 1e-30);
    }

    #[test]
    fn zero_loss_means_balanced_products() {
        let (env, mut params) = setup(1, 2, 8, false, 0);
        for name in ["pf.weight", "pf.bias"] {
            params.param_mut(name).data_mut().fill(0.0);
        }
        params.set_log_z(1.002f64.ln());
        for tau in [trajectory(&env, &[]), trajectory(&env, &[0])] {
            let (pf, pb) = log_pf_pb(&params, &env, &tau).unwrap();
            let lhs = params.log_z().exp() * pf.exp();
            let rhs = tau.reward * pb.exp();
            assert!((lhs - rhs).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicated_batch_has_the_same_loss() {
        let (env, params) = setup(2, 4, 16, true, 1);
        let one = batch(&env, &params, 1, 3);
        let two = vec![one[0].clone(), one[0].clone()];
        for objective in [Objective::Tb, Objective::SubTb] {
            let (a, _) = loss_and_grads(&params, &env, &one, objective, 0.9).unwrap();
            let (b, _) = loss_and_grads(&params, &env, &two, objective, 0.9).unwrap();
            assert!((a.loss - b.loss).abs() <= 1e-15 * a.loss.max(1.0));
        }
    }

    #[test]
    fn log_z_shift_moves_every_residual() {
        let (env, mut params) = setup(2, 4, 16, false, 2);
        let b = batch(&env, &params, 16, 5);
        let before = tb_loss(&params, &env, &b).unwrap();
        let c = 0.75;
        params.set_log_z(params.log_z() + c);
        let after = tb_loss(&params, &env, &b).unwrap();
        for (x, y) in before.residuals.iter().zip(&after.residuals) {
            assert!((y - x - c).abs() < 1e-12);
        }
        assert_eq!(after.log_z, before.log_z + c);
    }

    #[test]
    fn subtb_matches_tb_on_immediate_stops() {
        let (env, mut params) = setup(2, 4, 16, true, 3);
        params.set_log_z(0.3);
        let b = vec![trajectory(&env, &[]); 3];
        let tb = tb_loss(&params, &env, &b).unwrap();
        for lambda in [0.1, 0.9, 1.0] {
            let sub = subtb_loss(&params, &env, &b, lambda).unwrap();
            assert!((sub.loss - tb.loss).abs() < 1e-12);
            assert_eq!(sub.residuals.len(), 3);
            for (x, y) in sub.residuals.iter().zip(&tb.residuals) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn subtb_two_transitions_three_pairs() {
        let (env, params) = setup(2, 4, 16, true, 4);
        let tau = trajectory(&env, &[1]);
        let s0 = &tau.states[0];
        let s1 = &tau.states[1];
        let heads = params.evaluate(&env, &[s0, s1]).unwrap();
        let pf = heads.pf_logp.data();
        let pb = heads.pb_logp.data();
        let flow = heads.log_flow.unwrap();
        let log_z = params.log_z();
        let log_r = tau.reward.ln();
        // positions: s0 (log Z), s1 (learned flow), sink (log R)
        let d1 = pf[1] - pb[2 + 1];
        let d2 = pf[3 + 2];
        let r01 = log_z + d1 - flow[1];
        let r12 = flow[1] + d2 - log_r;
        let r02 = log_z + d1 + d2 - log_r;
        let expected = (r01 * r01 + r12 * r12 + r02 * r02) / 3.0;
        let got = subtb_loss(&params, &env, &[tau], 1.0).unwrap();
        assert!((got.loss - expected).abs() < 1e-12, "{} vs {expected}", got.loss);
        assert!((got.residuals[0] - r02).abs() < 1e-12);
    }

    #[test]
    fn subtb_needs_flow_head() {
        let (env, params) = setup(2, 4, 8, false, 0);
        let b = batch(&env, &params, 2, 0);
        assert!(matches!(
            subtb_loss(&params, &env, &b, 0.9),
            Err(Error::MissingLogFlow)
        ));
        assert!(subtb_loss(&setup(2, 4, 8, true, 0).1, &env, &b, 0.0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (objective, flow) in [(Objective::Tb, false), (Objective::SubTb, true)] {
            let (env, params) = setup(2, 3, 6, flow, 11);
            let b = batch(&env, &params, 6, 12);
            let report = grad_check(params.tensors(), 1e-3, |tape, vars| {
                let vars = PolicyVars { vars: vars.to_vec() };
                loss_with_vars(tape, &params, &vars, &env, &b, objective, 0.9)
                    .unwrap()
                    .loss
            });
            let (p, i) = report.worst.unwrap_or((0, 0));
            assert!(report.unresolved.len() * 20 < params.num_params());
            assert!(
                report.max_rel_error < 1e-5,
                "{objective:?}: {} at {:?} a={} n={}",
                report.max_rel_error,
                report.worst,
                report.analytic[p].data()[i],
                report.numeric[p].data()[i]
            );
        }
    }
}
