//! Parameterized sampler: one-hot state encoding, a shared LeakyReLU trunk,
//! forward and backward policy heads, the scalar `log Z`, and an optional
//! state-flow head used by sub-trajectory balance.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Tape, Tensor, Var};
use crate::env::{Action, GridState, HyperGrid, Trajectory, Transition};
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    /// Fix `P_B` to the uniform distribution over parents instead of learning it.
    #[serde(default)]
    pub uniform_pb: bool,
}

fn default_hidden() -> usize {
    256
}
fn default_layers() -> usize {
    2
}
fn default_slope() -> f64 {
    0.01
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            layers: default_layers(),
            leaky_slope: default_slope(),
            uniform_pb: false,
        }
    }
}

/// Everything that determines the parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyArch {
    pub dim: usize,
    pub side: usize,
    pub model: ModelConfig,
    pub with_log_flow: bool,
}

impl PolicyArch {
    pub fn new(env: &HyperGrid, model: ModelConfig, with_log_flow: bool) -> Self {
        Self {
            dim: env.dim(),
            side: env.side(),
            model,
            with_log_flow,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dim * self.side
    }

    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.model.hidden;
        let mut out = Vec::new();
        let mut fan_in = self.input_dim();
        for l in 0..self.model.layers {
            out.push((format!("trunk.{l}.weight"), vec![fan_in, h]));
            out.push((format!("trunk.{l}.bias"), vec![h]));
            fan_in = h;
        }
        out.push(("pf.weight".into(), vec![fan_in, self.dim + 1]));
        out.push(("pf.bias".into(), vec![self.dim + 1]));
        if !self.model.uniform_pb {
            out.push(("pb.weight".into(), vec![fan_in, self.dim]));
            out.push(("pb.bias".into(), vec![self.dim]));
        }
        out.push(("logz".into(), vec![1]));
        if self.with_log_flow {
            out.push(("logf.weight".into(), vec![fan_in, 1]));
            out.push(("logf.bias".into(), vec![1]));
        }
        out
    }
}

/// All learnable quantities of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySet {
    arch: PolicyArch,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl PolicySet {
    /// PyTorch-style uniform init `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; `log Z` starts at 0.
    pub fn init<R: Rng + ?Sized>(arch: PolicyArch, rng: &mut R) -> Self {
        let layout = arch.layout();
        let mut tensors = Vec::with_capacity(layout.len());
        let mut bound = 0.0;
        for (name, shape) in &layout {
            let mut t = Tensor::zeros(shape);
            if name == "logz" {
                tensors.push(t);
                continue;
            }
            if name.ends_with(".weight") {
                bound = 1.0 / (shape[0] as f64).sqrt();
            }
            for v in t.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            tensors.push(t);
        }
        Self {
            arch,
            names: layout.into_iter().map(|(n, _)| n).collect(),
            tensors,
        }
    }

    /// Assemble from explicit tensors, checking the layout.
    pub fn from_tensors(arch: PolicyArch, tensors: Vec<Tensor>) -> Result<Self, Error> {
        let layout = arch.layout();
        if layout.len() != tensors.len() {
            return Err(Error::ParamMismatch(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::ParamMismatch(format!(
                    "{name}: expected shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            arch,
            names: layout.into_iter().map(|(n, _)| n).collect(),
            tensors,
        })
    }

    pub fn arch(&self) -> &PolicyArch {
        &self.arch
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    fn index_of(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn log_z(&self) -> f64 {
        self.tensors[self.index_of("logz")].data()[0]
    }

    pub fn set_log_z(&mut self, value: f64) {
        let i = self.index_of("logz");
        self.tensors[i].data_mut()[0] = value;
    }

    /// Mutable access to a named parameter.
    pub fn param_mut(&mut self, name: &str) -> &mut Tensor {
        let i = self.index_of(name);
        &mut self.tensors[i]
    }

    /// Bitwise equality of every parameter.
    pub fn bits_eq(&self, other: &PolicySet) -> bool {
        self.arch == other.arch && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.bits_eq(b))
    }

    /// Bind every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> PolicyVars {
        PolicyVars {
            vars: self.tensors.iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Head outputs for a batch of states, without recording a tape.
    pub fn evaluate(&self, env: &HyperGrid, states: &[&GridState]) -> Result<Heads, Error> {
        let (input, fmask, bmask) = encode_batch(env, states)?;
        let a = &self.arch;
        let mut h = input;
        let mut idx = 0;
        for _ in 0..a.model.layers {
            h = autodiff::affine(&h, &self.tensors[idx], &self.tensors[idx + 1])?;
            h = autodiff::leaky_relu(&h, a.model.leaky_slope);
            idx += 2;
        }
        let pf = autodiff::affine(&h, &self.tensors[idx], &self.tensors[idx + 1])?;
        idx += 2;
        let pf_logp = autodiff::masked_log_softmax(&pf, &fmask)?;
        let pb = if a.model.uniform_pb {
            Tensor::zeros(&[states.len(), a.dim])
        } else {
            idx += 2;
            autodiff::affine(&h, &self.tensors[idx - 2], &self.tensors[idx - 1])?
        };
        let pb_logp = autodiff::masked_log_softmax(&pb, &bmask)?;
        idx += 1; // logz
        let log_flow = if a.with_log_flow {
            Some(autodiff::affine(&h, &self.tensors[idx], &self.tensors[idx + 1])?.into_data())
        } else {
            None
        };
        if !pf_logp.is_finite() || !pb_logp.is_finite() {
            return Err(Error::NonFinite("policy forward pass".into()));
        }
        Ok(Heads {
            pf_logp,
            pb_logp,
            log_flow,
        })
    }
}

/// Parameters of a [`PolicySet`] bound on a tape, in the same order.
#[derive(Clone, Debug)]
pub struct PolicyVars {
    pub vars: Vec<Var>,
}

/// Plain head outputs for `N` states.
#[derive(Clone, Debug)]
pub struct Heads {
    /// `[N, D+1]` masked log-probabilities of the forward policy.
    pub pf_logp: Tensor,
    /// `[N, D]` masked log-probabilities of the backward policy.
    pub pb_logp: Tensor,
    pub log_flow: Option<Vec<f64>>,
}

/// Head outputs recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TapeHeads {
    pub pf_logp: Var,
    pub pb_logp: Var,
    /// `[N, 1]` state log-flows.
    pub log_flow: Option<Var>,
    pub log_z: Var,
}

/// One-hot per coordinate: position `d*H + coords[d]` is 1.
pub fn encode_state(s: &GridState, side: usize) -> Vec<f64> {
    let mut out = vec![0.0; s.0.len() * side];
    for (d, &c) in s.0.iter().enumerate() {
        out[d * side + c] = 1.0;
    }
    out
}

fn encode_batch(env: &HyperGrid, states: &[&GridState]) -> Result<(Tensor, Vec<bool>, Vec<bool>), Error> {
    let side = env.side();
    let width = env.dim() * side;
    let mut data = vec![0.0; states.len() * width];
    let mut fmask = Vec::with_capacity(states.len() * (env.dim() + 1));
    let mut bmask = Vec::with_capacity(states.len() * env.dim());
    for (row, s) in states.iter().enumerate() {
        env.check_bounds(s)?;
        for (d, &c) in s.0.iter().enumerate() {
            data[row * width + d * side + c] = 1.0;
        }
        fmask.extend(env.forward_mask(s));
        bmask.extend(env.parents_mask(s));
    }
    Ok((Tensor::matrix(states.len(), width, data)?, fmask, bmask))
}

/// Record the forward pass for `states` on `tape`.
pub fn forward_on_tape(
    tape: &mut Tape,
    params: &PolicySet,
    vars: &PolicyVars,
    env: &HyperGrid,
    states: &[&GridState],
) -> Result<TapeHeads, Error> {
    let (input, fmask, bmask) = encode_batch(env, states)?;
    let a = params.arch();
    let v = &vars.vars;
    let mut h = tape.constant(input);
    let mut idx = 0;
    for _ in 0..a.model.layers {
        h = tape.affine(h, v[idx], v[idx + 1])?;
        h = tape.leaky_relu(h, a.model.leaky_slope);
        idx += 2;
    }
    let pf = tape.affine(h, v[idx], v[idx + 1])?;
    idx += 2;
    let pf_logp = tape.masked_log_softmax(pf, &fmask)?;
    let pb = if a.model.uniform_pb {
        tape.constant(Tensor::zeros(&[states.len(), a.dim]))
    } else {
        idx += 2;
        tape.affine(h, v[idx - 2], v[idx - 1])?
    };
    let pb_logp = tape.masked_log_softmax(pb, &bmask)?;
    let log_z = v[idx];
    idx += 1;
    let log_flow = if a.with_log_flow {
        Some(tape.affine(h, v[idx], v[idx + 1])?)
    } else {
        None
    };
    Ok(TapeHeads {
        pf_logp,
        pb_logp,
        log_flow,
        log_z,
    })
}

/// Forward-policy probabilities over the `D+1` actions at `s`.
pub fn pf_distribution(params: &PolicySet, env: &HyperGrid, s: &GridState) -> Result<Vec<f64>, Error> {
    let heads = params.evaluate(env, &[s])?;
    Ok(heads.pf_logp.data().iter().map(|v| v.exp()).collect())
}

/// Backward-policy probabilities over the `D` parents of `s`.
pub fn pb_distribution(params: &PolicySet, env: &HyperGrid, s: &GridState) -> Result<Vec<f64>, Error> {
    if s.is_origin() {
        return Err(Error::NoParents);
    }
    let heads = params.evaluate(env, &[s])?;
    Ok(heads.pb_logp.data().iter().map(|v| v.exp()).collect())
}

/// Draw from a masked categorical given its log-probabilities.
fn draw(logp: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_legal = logp.len() - 1;
    for (i, &lp) in logp.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            last_legal = i;
            cum += p;
            if u < cum {
                return i;
            }
        }
    }
    last_legal
}

/// Sample `count` complete trajectories from the forward policy of `params`.
///
/// All trajectories advance in lock step and the random stream is consumed
/// in trajectory order, so the result is a pure function of `(params, rng)`.
/// With `explore_eps > 0` each action is replaced, with that probability, by
/// a uniformly random legal one; the recorded `log P_F` is always the policy's.
pub fn sample_batch<R: Rng + ?Sized>(
    params: &PolicySet,
    env: &HyperGrid,
    count: usize,
    explore_eps: f64,
    rng: &mut R,
) -> Result<Vec<Trajectory>, Error> {
    let dim = env.dim();
    let origin = env.initial_state();
    let mut states: Vec<Vec<GridState>> = vec![vec![origin]; count];
    let mut actions: Vec<Vec<Action>> = vec![Vec::new(); count];
    let mut log_pf: Vec<Vec<f64>> = vec![Vec::new(); count];
    let mut active: Vec<usize> = (0..count).collect();
    let max_len = env.max_trajectory_len();

    while !active.is_empty() {
        let mut rows = StateRows::default();
        let row_of: Vec<usize> = active
            .iter()
            .map(|&i| rows.row(states[i].last().expect("non-empty")))
            .collect();
        let heads = params.evaluate(env, &rows.unique)?;
        let logp_rows: Vec<&[f64]> = heads.pf_logp.data().chunks(dim + 1).collect();

        let mut still_active = Vec::with_capacity(active.len());
        for (&i, &row) in active.iter().zip(&row_of) {
            let logp = logp_rows[row];
            let mut choice = draw(logp, rng.gen::<f64>());
            if explore_eps > 0.0 && rng.gen::<f64>() < explore_eps {
                let legal: Vec<usize> = (0..=dim).filter(|&a| logp[a].exp() > 0.0).collect();
                choice = legal[rng.gen_range(0..legal.len())];
            }
            let action = Action::from_index(choice, dim);
            let current = states[i].last().expect("non-empty").clone();
            actions[i].push(action);
            log_pf[i].push(logp[choice]);
            match env.step(&current, action)? {
                Transition::Moved(next) => {
                    states[i].push(next);
                    if actions[i].len() >= max_len {
                        return Err(Error::TrajectoryTooLong(max_len));
                    }
                    still_active.push(i);
                }
                Transition::Terminated(_) => {}
            }
        }
        active = still_active;
    }

    Ok(states
        .into_iter()
        .zip(actions)
        .zip(log_pf)
        .map(|((states, actions), log_pf)| {
            let reward = env.reward(states.last().expect("non-empty"));
            Trajectory {
                states,
                actions,
                reward,
                log_pf: Some(log_pf),
                log_pb: None,
            }
        })
        .collect())
}

pub fn sample_trajectory<R: Rng + ?Sized>(
    params: &PolicySet,
    env: &HyperGrid,
    rng: &mut R,
) -> Result<Trajectory, Error> {
    Ok(sample_batch(params, env, 1, 0.0, rng)?.remove(0))
}

/// Per-transition quantities of a batch, recorded on a tape.
///
/// Transitions are numbered trajectory-major; trajectory `k` with `n`
/// increments owns `n + 1` transitions, the last being Terminate.
#[derive(Clone, Debug)]
pub struct BatchTerms {
    /// `log P_F` of every transition.
    pub log_pf: Var,
    /// `log P_B` of every transition (0 for the Terminate transition).
    pub log_pb: Var,
    /// `log F(s)` for every visited state `s_0 ..= s_n`, trajectory-major.
    pub state_log_flow: Option<Var>,
    pub log_z: Var,
    /// Transition range of each trajectory.
    pub spans: Vec<std::ops::Range<usize>>,
}

/// Evaluate the policy once per distinct state of `batch` and gather the
/// per-transition log-probabilities.
pub fn batch_terms(
    tape: &mut Tape,
    params: &PolicySet,
    vars: &PolicyVars,
    env: &HyperGrid,
    batch: &[Trajectory],
) -> Result<BatchTerms, Error> {
    let dim = env.dim();
    let mut rows = StateRows::default();

    let mut pf_index = Vec::new();
    let mut pb_index = Vec::new();
    let mut pb_slot = Vec::new();
    let mut state_rows = Vec::new();
    let mut spans = Vec::with_capacity(batch.len());
    let mut moves = 0;
    for tau in batch {
        let start = pf_index.len();
        for (t, (s, a)) in tau.states.iter().zip(&tau.actions).enumerate() {
            let r = rows.row(s);
            state_rows.push(r);
            pf_index.push(r * (dim + 1) + a.index(dim));
            if let Action::Increment(d) = a {
                let next = &tau.states[t + 1];
                let rn = rows.row(next);
                pb_index.push(rn * dim + d);
                moves += 1;
                pb_slot.push(moves);
            } else {
                pb_slot.push(0);
            }
        }
        spans.push(start..pf_index.len());
    }

    let heads = forward_on_tape(tape, params, vars, env, &rows.unique)?;
    let log_pf = tape.gather(heads.pf_logp, pf_index)?;
    let pb_moves = tape.gather(heads.pb_logp, pb_index)?;
    let zero = tape.constant(Tensor::scalar(0.0));
    let padded = tape.concat(&[zero, pb_moves]);
    let log_pb = tape.gather(padded, pb_slot)?;
    let state_log_flow = match heads.log_flow {
        Some(f) => Some(tape.gather(f, state_rows)?),
        None => None,
    };
    Ok(BatchTerms {
        log_pf,
        log_pb,
        state_log_flow,
        log_z: heads.log_z,
        spans,
    })
}

/// Assigns each distinct state a row of the evaluation batch.
#[derive(Default)]
struct StateRows<'a> {
    index: HashMap<&'a GridState, usize>,
    unique: Vec<&'a GridState>,
}

impl<'a> StateRows<'a> {
    fn row(&mut self, s: &'a GridState) -> usize {
        let unique = &mut self.unique;
        *self.index.entry(s).or_insert_with(|| {
            unique.push(s);
            unique.len() - 1
        })
    }
}

/// `(sum log P_F, sum log P_B)` of each trajectory, recorded on the tape.
pub fn log_pf_pb_on_tape(tape: &mut Tape, terms: &BatchTerms) -> Result<(Var, Var), Error> {
    let mut owner = Vec::new();
    for (k, span) in terms.spans.iter().enumerate() {
        owner.extend(std::iter::repeat_n(k, span.len()));
    }
    let n = terms.spans.len();
    let sum_pf = tape.index_add(terms.log_pf, owner.clone(), n)?;
    let sum_pb = tape.index_add(terms.log_pb, owner, n)?;
    Ok((sum_pf, sum_pb))
}

/// `(sum log P_F, sum log P_B)` of a single trajectory under `params`.
pub fn log_pf_pb(params: &PolicySet, env: &HyperGrid, tau: &Trajectory) -> Result<(f64, f64), Error> {
    tau.validate(env)?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let terms = batch_terms(&mut tape, params, &vars, env, std::slice::from_ref(tau))?;
    let (pf, pb) = log_pf_pb_on_tape(&mut tape, &terms)?;
    Ok((tape.value(pf).data()[0], tape.value(pb).data()[0]))
}

/// `target <- alpha * online + (1 - alpha) * target`, including `log Z`.
///
/// `alpha == 1` copies `online` bit for bit.
pub fn polyak(target: &mut PolicySet, online: &PolicySet, alpha: f64) -> Result<(), Error> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "polyak coefficient must lie in (0, 1], got {alpha}"
        )));
    }
    if target.arch != online.arch {
        return Err(Error::ParamMismatch(
            "target and online networks differ in architecture".into(),
        ));
    }
    if alpha == 1.0 {
        target.tensors.clone_from(&online.tensors);
        return Ok(());
    }
    for (t, o) in target.tensors.iter_mut().zip(&online.tensors) {
        for (tv, &ov) in t.data_mut().iter_mut().zip(o.data()) {
            *tv = alpha * ov + (1.0 - alpha) * *tv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(dim: usize, side: usize, hidden: usize) -> (HyperGrid, PolicySet) {
        let env = HyperGrid::new(EnvConfig::new(dim, side)).unwrap();
        let model = ModelConfig {
            hidden,
            ..ModelConfig::default()
        };
        let arch = PolicyArch::new(&env, model, false);
        let params = PolicySet::init(arch, &mut ChaCha8Rng::seed_from_u64(7));
        (env, params)
    }

    /// Zero the final layer so every head outputs zero logits.
    fn uniform(mut params: PolicySet) -> PolicySet {
        for name in ["pf.weight", "pf.bias", "pb.weight", "pb.bias"] {
            params.param_mut(name).data_mut().fill(0.0);
        }
        params
    }

    #[test]
    fn encoding() {
        let e = encode_state(&GridState(vec![1, 2]), 3);
        assert_eq!(e, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let o = encode_state(&GridState(vec![0, 0, 0]), 4);
        let ones: Vec<usize> = o
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(ones, vec![0, 4, 8]);
        assert_eq!(encode_state(&GridState(vec![1]), 2), vec![0.0, 1.0]);
    }

    #[test]
    fn uniform_forward_policy() {
        let (env, params) = setup(2, 4, 8);
        let params = uniform(params);
        let p = pf_distribution(&params, &env, &env.initial_state()).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let corner = pf_distribution(&params, &env, &GridState(vec![3, 3])).unwrap();
        assert_eq!(corner, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn forward_policy_softmax_arithmetic() {
        let (env, params) = setup(2, 4, 8);
        let mut params = uniform(params);
        params.param_mut("pf.bias").data_mut()[0] = std::f64::consts::LN_2;
        let p = pf_distribution(&params, &env, &env.initial_state()).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15);
        assert!((p[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn backward_policy() {
        let (env, params) = setup(2, 4, 8);
        let mut params = uniform(params);
        assert_eq!(
            pb_distribution(&params, &env, &GridState(vec![0, 2])).unwrap(),
            vec![0.0, 1.0]
        );
        assert_eq!(
            pb_distribution(&params, &env, &GridState(vec![1, 1])).unwrap(),
            vec![0.5, 0.5]
        );
        params.param_mut("pb.bias").data_mut()[1] = 3f64.ln();
        let p = pb_distribution(&params, &env, &GridState(vec![1, 1])).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        assert!(matches!(
            pb_distribution(&params, &env, &env.initial_state()),
            Err(Error::NoParents)
        ));
    }

    #[test]
    fn tiny_grid_has_two_trajectories() {
        let (env, params) = setup(1, 2, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = sample_batch(&params, &env, 200, 0.0, &mut rng).unwrap();
        for tau in &batch {
            tau.validate(&env).unwrap();
            assert!(tau.states.len() <= 2);
            assert_eq!(tau.log_pf.as_ref().unwrap().len(), tau.actions.len());
        }
        assert!(batch.iter().any(|t| t.states.len() == 1));
        assert!(batch.iter().any(|t| t.states.len() == 2));
    }

    #[test]
    fn forced_stop() {
        let (env, params) = setup(2, 4, 8);
        let mut params = uniform(params);
        params.param_mut("pf.bias").data_mut()[2] = 1e9;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for tau in sample_batch(&params, &env, 50, 0.0, &mut rng).unwrap() {
            assert_eq!(tau.states, vec![env.initial_state()]);
            assert_eq!(tau.actions, vec![Action::Terminate]);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let (env, params) = setup(2, 5, 16);
        let a = sample_batch(&params, &env, 32, 0.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_batch(&params, &env, 32, 0.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let single_a = sample_trajectory(&params, &env, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let single_b = sample_trajectory(&params, &env, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(single_a, single_b);
    }

    #[test]
    fn cached_log_pf_matches_recomputation() {
        let (env, params) = setup(3, 4, 16);
        let batch = sample_batch(&params, &env, 16, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for tau in &batch {
            let cached: f64 = tau.log_pf.as_ref().unwrap().iter().sum();
            let (pf, _) = log_pf_pb(&params, &env, tau).unwrap();
            assert!((cached - pf).abs() < 1e-12);
        }
    }

    #[test]
    fn log_sums_under_uniform_policy() {
        let (env, params) = setup(1, 2, 8);
        let params = uniform(params);
        let stop = Trajectory {
            states: vec![GridState(vec![0])],
            actions: vec![Action::Terminate],
            reward: env.reward(&GridState(vec![0])),
            log_pf: None,
            log_pb: None,
        };
        let (pf, pb) = log_pf_pb(&params, &env, &stop).unwrap();
        assert!((pf + std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(pb, 0.0);

        let full = Trajectory {
            states: vec![GridState(vec![0]), GridState(vec![1])],
            actions: vec![Action::Increment(0), Action::Terminate],
            reward: env.reward(&GridState(vec![1])),
            log_pf: None,
            log_pb: None,
        };
        let (pf, pb) = log_pf_pb(&params, &env, &full).unwrap();
        assert!((pf + std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(pb, 0.0);
    }

    #[test]
    fn polyak_rules() {
        let (_, online) = setup(2, 3, 4);
        let (_, mut target) = {
            let env = HyperGrid::new(EnvConfig::new(2, 3)).unwrap();
            let arch = PolicyArch::new(
                &env,
                ModelConfig {
                    hidden: 4,
                    ..Default::default()
                },
                false,
            );
            (env, PolicySet::init(arch, &mut ChaCha8Rng::seed_from_u64(99)))
        };
        let mut copy = target.clone();
        polyak(&mut copy, &online, 1.0).unwrap();
        assert!(copy.bits_eq(&online));

        target
            .tensors_mut()
            .iter_mut()
            .for_each(|t| t.data_mut().fill(0.0));
        let mut two = online.clone();
        two.tensors_mut().iter_mut().for_each(|t| t.data_mut().fill(2.0));
        let mut mid = target.clone();
        polyak(&mut mid, &two, 0.5).unwrap();
        assert!(mid.tensors().iter().all(|t| t.data().iter().all(|&v| v == 1.0)));

        // after k updates toward a fixed theta: theta * (1 - (1-alpha)^k)
        let alpha = 0.25;
        let mut trail = target.clone();
        for k in 1..=10 {
            polyak(&mut trail, &two, alpha).unwrap();
            let expected = 2.0 * (1.0 - (1.0f64 - alpha).powi(k));
            for t in trail.tensors() {
                for &v in t.data() {
                    assert!((v - expected).abs() < 1e-12);
                }
            }
        }
        assert!(polyak(&mut trail, &two, 0.0).is_err());
        assert!(polyak(&mut trail, &two, 1.5).is_err());
        let (_, other) = setup(2, 3, 8);
        assert!(polyak(&mut trail, &other, 0.5).is_err());
    }
}
