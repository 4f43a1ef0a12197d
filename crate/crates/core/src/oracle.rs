//! Ground truth for enumerable grids: the reward-proportional target, the
//! exact terminal distribution of a forward policy, brute-force trajectory
//! enumeration, and flow-conservation checks.

use std::io::Write;

use crate::env::{Action, EnvError, GridState, HyperGrid, Trajectory, Transition};
use crate::policy::PolicySet;
use crate::Error;

/// Rows evaluated per network call when tabulating the policy.
const EVAL_CHUNK: usize = 4096;

/// A probability per grid state, indexed by [`HyperGrid::state_index`].
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionTable {
    pub probs: Vec<f64>,
}

impl DistributionTable {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn l1(&self, other: &DistributionTable) -> f64 {
        crate::metrics::l1_distance(&self.probs, &other.probs)
    }

    /// CSV with one coordinate column per dimension and a `probability` column.
    pub fn write_csv<W: Write>(&self, env: &HyperGrid, mut out: W) -> std::io::Result<()> {
        let coords: Vec<String> = (0..env.dim()).map(|d| format!("x{d}")).collect();
        writeln!(out, "{},probability", coords.join(","))?;
        for (i, p) in self.probs.iter().enumerate() {
            let s = env.state_from_index(i);
            let c: Vec<String> = s.0.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{},{}", c.join(","), p)?;
        }
        Ok(())
    }
}

/// `p*(x) = R(x) / Z` over every state.
pub fn target_distribution(env: &HyperGrid) -> Result<DistributionTable, Error> {
    let rewards: Vec<f64> = env.all_states()?.map(|s| env.reward(&s)).collect();
    let z: f64 = rewards.iter().sum();
    Ok(DistributionTable {
        probs: rewards.into_iter().map(|r| r / z).collect(),
    })
}

/// `Z = sum_x R(x)`.
pub fn partition_function(env: &HyperGrid) -> Result<f64, Error> {
    Ok(env.all_states()?.map(|s| env.reward(&s)).sum())
}

/// Forward-policy probabilities for every state, row-major `[H^D, D+1]`.
pub fn forward_table(params: &PolicySet, env: &HyperGrid) -> Result<Vec<f64>, Error> {
    let states: Vec<GridState> = env.all_states()?.collect();
    let mut table = Vec::with_capacity(states.len() * env.num_actions());
    for chunk in states.chunks(EVAL_CHUNK) {
        let refs: Vec<&GridState> = chunk.iter().collect();
        let heads = params.evaluate(env, &refs)?;
        table.extend(heads.pf_logp.data().iter().map(|v| v.exp()));
    }
    Ok(table)
}

/// Terminal distribution induced by a tabulated forward policy.
///
/// States are processed level by level in increasing coordinate sum, which
/// is a topological order of the lattice.
pub fn terminal_distribution(env: &HyperGrid, pf: &[f64]) -> Result<DistributionTable, Error> {
    let n = env.num_states()?;
    let width = env.num_actions();
    if pf.len() != n * width {
        return Err(Error::ParamMismatch(format!(
            "policy table has {} entries, expected {}",
            pf.len(),
            n * width
        )));
    }
    let dim = env.dim();
    let mut levels: Vec<Vec<usize>> = vec![Vec::new(); dim * (env.side() - 1) + 1];
    for i in 0..n {
        levels[env.state_from_index(i).coord_sum()].push(i);
    }
    let strides: Vec<usize> = (0..dim).map(|d| env.stride(d)).collect();
    let mut reach = vec![0.0; n];
    let mut probs = vec![0.0; n];
    reach[0] = 1.0;
    for level in &levels {
        for &i in level {
            let r = reach[i];
            if r == 0.0 {
                continue;
            }
            let row = &pf[i * width..(i + 1) * width];
            for d in 0..dim {
                if row[d] > 0.0 {
                    reach[i + strides[d]] += r * row[d];
                }
            }
            probs[i] = r * row[dim];
        }
    }
    Ok(DistributionTable { probs })
}

/// Exact terminal distribution of the forward policy of `params`.
pub fn sampler_distribution(params: &PolicySet, env: &HyperGrid) -> Result<DistributionTable, Error> {
    let pf = forward_table(params, env)?;
    terminal_distribution(env, &pf)
}

/// Every complete trajectory with its probability.
#[derive(Clone, Debug)]
pub struct Enumeration {
    pub trajectories: Vec<(Vec<GridState>, f64)>,
    /// Per-terminal sums of trajectory probabilities.
    pub terminal: DistributionTable,
}

/// Depth-first enumeration of all complete trajectories (D <= 2, H <= 4).
pub fn enumerate_trajectories(params: &PolicySet, env: &HyperGrid) -> Result<Enumeration, Error> {
    check_tiny(env)?;
    let pf = forward_table(params, env)?;
    Ok(enumerate_with_table(env, &pf))
}

pub(crate) fn enumerate_with_table(env: &HyperGrid, pf: &[f64]) -> Enumeration {
    let width = env.num_actions();
    let n = env.num_states().expect("tiny grid");
    let mut trajectories = Vec::new();
    let mut terminal = vec![0.0; n];
    let mut stack = vec![(vec![env.initial_state()], 1.0)];
    while let Some((path, prob)) = stack.pop() {
        let s = path.last().expect("non-empty");
        let row = &pf[env.state_index(s) * width..][..width];
        for d in (0..env.dim()).rev() {
            if let Some(next) = (s.0[d] + 1 < env.side()).then(|| {
                let mut t = s.clone();
                t.0[d] += 1;
                t
            }) {
                let mut extended = path.clone();
                extended.push(next);
                stack.push((extended, prob * row[d]));
            }
        }
        let p = prob * row[env.dim()];
        terminal[env.state_index(s)] += p;
        trajectories.push((path, p));
    }
    Enumeration {
        trajectories,
        terminal: DistributionTable { probs: terminal },
    }
}

/// Every complete trajectory of a tiny grid (D <= 2, H <= 4), depth first.
pub fn complete_trajectories(env: &HyperGrid) -> Result<Vec<Trajectory>, Error> {
    check_tiny(env)?;
    let mut out = Vec::new();
    let mut stack = vec![(vec![env.initial_state()], Vec::new())];
    while let Some((states, actions)) = stack.pop() {
        let s: &GridState = states.last().expect("non-empty");
        for d in (0..env.dim()).rev() {
            if let Ok(Transition::Moved(next)) = env.step(s, Action::Increment(d)) {
                let mut st = states.clone();
                st.push(next);
                let mut ac = actions.clone();
                ac.push(Action::Increment(d));
                stack.push((st, ac));
            }
        }
        let mut actions = actions;
        actions.push(Action::Terminate);
        let reward = env.reward(s);
        out.push(Trajectory {
            states,
            actions,
            reward,
            log_pf: None,
            log_pb: None,
        });
    }
    Ok(out)
}

fn check_tiny(env: &HyperGrid) -> Result<(), Error> {
    if env.dim() > 2 || env.side() > 4 {
        return Err(Error::Env(EnvError::TooLarge {
            states: env.num_states_u128().unwrap_or(u128::MAX),
            limit: 16,
        }));
    }
    Ok(())
}

/// Explicit flows on the hypergrid DAG.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowAssignment {
    pub state_flow: Vec<f64>,
    /// `edge_flow[s * D + d]` is the flow of the edge incrementing `d` at `s`.
    pub edge_flow: Vec<f64>,
    /// Flow of `s -> s_f`.
    pub terminal_flow: Vec<f64>,
}

/// A balanced flow for `rewards`, built by splitting each state's flow
/// uniformly among its parents, from the deepest states upward.
pub fn balanced_flows(env: &HyperGrid, rewards: &[f64]) -> Result<FlowAssignment, Error> {
    let n = env.num_states()?;
    let dim = env.dim();
    let mut state_flow = vec![0.0; n];
    let mut edge_flow = vec![0.0; n * dim];
    for i in (0..n).rev() {
        let out: f64 = edge_flow[i * dim..(i + 1) * dim].iter().sum();
        state_flow[i] = rewards[i] + out;
        let s = env.state_from_index(i);
        let parents: Vec<usize> = (0..dim).filter(|&d| s.0[d] > 0).collect();
        for &d in &parents {
            let p = i - env.stride(d);
            edge_flow[p * dim + d] = state_flow[i] / parents.len() as f64;
        }
    }
    Ok(FlowAssignment {
        state_flow,
        edge_flow,
        terminal_flow: rewards.to_vec(),
    })
}

/// Largest violation of flow conservation: `|in - out|` at every non-origin
/// state and `|F(s -> s_f) - R(s)|` at every terminal edge.
pub fn check_flow_balance(flows: &FlowAssignment, env: &HyperGrid, rewards: &[f64]) -> Result<f64, Error> {
    let n = env.num_states()?;
    if rewards.len() != n {
        return Err(Error::Metric(format!("{} rewards for {n} states", rewards.len())));
    }
    let dim = env.dim();
    let mut worst: f64 = 0.0;
    for (i, &reward) in rewards.iter().enumerate() {
        let s = env.state_from_index(i);
        worst = worst.max((flows.terminal_flow[i] - reward).abs());
        if s.is_origin() {
            continue;
        }
        let inflow: f64 = (0..dim)
            .filter(|&d| s.0[d] > 0)
            .map(|d| flows.edge_flow[(i - env.stride(d)) * dim + d])
            .sum();
        let outflow: f64 =
            flows.edge_flow[i * dim..(i + 1) * dim].iter().sum::<f64>() + flows.terminal_flow[i];
        worst = worst.max((inflow - outflow).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::policy::{ModelConfig, PolicyArch};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env(dim: usize, side: usize) -> HyperGrid {
        HyperGrid::new(EnvConfig::new(dim, side)).unwrap()
    }

    fn net(env: &HyperGrid, seed: u64) -> PolicySet {
        let arch = PolicyArch::new(
            env,
            ModelConfig {
                hidden: 16,
                ..Default::default()
            },
            false,
        );
        PolicySet::init(arch, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn uniform_table(env: &HyperGrid) -> Vec<f64> {
        env.all_states()
            .unwrap()
            .flat_map(|s| {
                let mask = env.valid_actions(&s).unwrap();
                let k = mask.iter().filter(|&&m| m).count() as f64;
                mask.into_iter().map(move |m| if m { 1.0 / k } else { 0.0 })
            })
            .collect()
    }

    #[test]
    fn target_examples() {
        let t = target_distribution(&env(1, 2)).unwrap();
        assert_eq!(t.probs, vec![0.5, 0.5]);

        let g = env(2, 8);
        let t = target_distribution(&g).unwrap();
        assert!((t.total() - 1.0).abs() < 1e-12);
        let z: f64 = g.all_states().unwrap().map(|s| g.reward(&s)).sum();
        for m in g.mode_set().unwrap() {
            assert!((t.probs[g.state_index(&m)] - 2.501 / z).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_policy_terminal_distribution() {
        let g = env(1, 2);
        let d = terminal_distribution(&g, &uniform_table(&g)).unwrap();
        assert_eq!(d.probs, vec![0.5, 0.5]);

        let g3 = env(1, 3);
        let e = enumerate_with_table(&g3, &uniform_table(&g3));
        assert_eq!(e.terminal.probs, vec![0.5, 0.25, 0.25]);
    }

    #[test]
    fn always_stop_is_a_point_mass() {
        let g = env(2, 4);
        let table: Vec<f64> = (0..16).flat_map(|_| [0.0, 0.0, 1.0]).collect();
        let d = terminal_distribution(&g, &table).unwrap();
        assert_eq!(d.probs[0], 1.0);
        assert_eq!(d.total(), 1.0);
    }

    #[test]
    fn enumeration_counts_paths() {
        let g = env(2, 2);
        let e = enumerate_trajectories(&net(&g, 1), &g).unwrap();
        let to_corner = e
            .trajectories
            .iter()
            .filter(|(p, _)| p.last() == Some(&GridState(vec![1, 1])))
            .count();
        assert_eq!(to_corner, 2);
        assert_eq!(e.trajectories.len(), 5);
        let total: f64 = e.trajectories.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(enumerate_trajectories(&net(&env(3, 2), 1), &env(3, 2)).is_err());
    }

    #[test]
    fn enumeration_agrees_with_dynamic_program() {
        let g = env(2, 4);
        for seed in 0..5 {
            let p = net(&g, seed);
            let a = enumerate_trajectories(&p, &g).unwrap().terminal;
            let b = sampler_distribution(&p, &g).unwrap();
            assert!(a.l1(&b) < 1e-12);
        }
    }

    #[test]
    fn complete_trajectory_count() {
        // monotone paths to (i, j) number C(i+j, i): 1+1+1+1+2+3+1+3+6
        let t = complete_trajectories(&env(2, 3)).unwrap();
        assert_eq!(t.len(), 19);
        for tau in &t {
            tau.validate(&env(2, 3)).unwrap();
        }
        assert_eq!(complete_trajectories(&env(1, 3)).unwrap().len(), 3);
        assert!(complete_trajectories(&env(3, 2)).is_err());
    }

    #[test]
    fn flow_balance_checks() {
        let g = env(2, 4);
        let t = target_distribution(&g).unwrap();
        let z = partition_function(&g).unwrap();
        let rewards: Vec<f64> = t.probs.iter().map(|p| p * z).collect();
        let mut flows = balanced_flows(&g, &rewards).unwrap();
        assert!(check_flow_balance(&flows, &g, &rewards).unwrap() < 1e-9);
        assert!((flows.state_flow[0] - z).abs() < 1e-9);

        let delta = 0.125;
        flows.edge_flow[5 * 2 + 1] += delta;
        assert!(check_flow_balance(&flows, &g, &rewards).unwrap() >= delta - 1e-12);

        let zero = FlowAssignment {
            state_flow: vec![0.0; 16],
            edge_flow: vec![0.0; 32],
            terminal_flow: vec![0.0; 16],
        };
        let max_r = rewards.iter().copied().fold(0.0, f64::max);
        assert_eq!(check_flow_balance(&zero, &g, &rewards).unwrap(), max_r);
    }

    #[test]
    fn csv_dump() {
        let g = env(1, 2);
        let mut buf = Vec::new();
        target_distribution(&g).unwrap().write_csv(&g, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x0,probability\n0,0.5\n1,0.5\n");
    }
}
