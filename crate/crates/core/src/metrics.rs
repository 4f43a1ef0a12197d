//! Evaluation metrics: empirical L1 distance to the target distribution over
//! a sliding window of terminal states, mode discovery, Top-K reward and the
//! diversity-filtered Top-K.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::env::{EnvError, GridState, HyperGrid};
use crate::Error;

pub const DEFAULT_WINDOW: usize = 200_000;

/// Header of the metric CSV.
pub const CSV_HEADER: &str = "step,trajectories,loss,l1,modes,modes_frac,mean_reward,logZ";

/// The most recent terminal states, as state indices, with per-state counts.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    capacity: usize,
    recent: VecDeque<usize>,
    counts: Vec<u64>,
}

impl SampleWindow {
    pub fn new(capacity: usize, num_states: usize) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        Self {
            capacity,
            recent: VecDeque::with_capacity(capacity.min(1 << 20)),
            counts: vec![0; num_states],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Oldest first.
    pub fn contents(&self) -> impl Iterator<Item = usize> + '_ {
        self.recent.iter().copied()
    }

    pub fn push(&mut self, state_index: usize) {
        if self.recent.len() == self.capacity {
            let old = self.recent.pop_front().expect("full window");
            self.counts[old] -= 1;
        }
        self.recent.push_back(state_index);
        self.counts[state_index] += 1;
    }
}

/// `sum_x |p_hat(x) - p*(x)|` over every state, with `p_hat` the window frequencies.
pub fn l1_error(window: &SampleWindow, target: &[f64]) -> Result<f64, Error> {
    if window.is_empty() {
        return Err(Error::Metric("L1 error of an empty window".into()));
    }
    if target.len() != window.counts.len() {
        return Err(Error::Metric(format!(
            "target has {} states, window tracks {}",
            target.len(),
            window.counts.len()
        )));
    }
    let n = window.len() as f64;
    Ok(window
        .counts
        .iter()
        .zip(target)
        .map(|(&c, &p)| (c as f64 / n - p).abs())
        .sum())
}

/// L1 distance between two dense distributions.
pub fn l1_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

/// Set of mode cells seen so far.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeTracker {
    modes: HashSet<GridState>,
    discovered: BTreeSet<GridState>,
}

impl ModeTracker {
    pub fn new(mode_set: Vec<GridState>) -> Self {
        Self {
            modes: mode_set.into_iter().collect(),
            discovered: BTreeSet::new(),
        }
    }

    /// Union the batch's mode hits into the discovered set; returns the new count.
    pub fn update<'a>(&mut self, terminals: impl IntoIterator<Item = &'a GridState>) -> usize {
        for x in terminals {
            if self.modes.contains(x) && !self.discovered.contains(x) {
                self.discovered.insert(x.clone());
            }
        }
        self.discovered.len()
    }

    pub fn count(&self) -> usize {
        self.discovered.len()
    }

    pub fn total(&self) -> usize {
        self.modes.len()
    }

    pub fn fraction(&self) -> f64 {
        if self.modes.is_empty() {
            return 0.0;
        }
        self.discovered.len() as f64 / self.modes.len() as f64
    }

    pub fn discovered(&self) -> impl Iterator<Item = &GridState> {
        self.discovered.iter()
    }

    pub fn all_found(&self) -> bool {
        !self.modes.is_empty() && self.discovered.len() == self.modes.len()
    }
}

/// Mean reward of the `k` highest rewards, duplicates counted per occurrence.
pub fn top_k_reward(rewards: &[f64], k: usize) -> Result<f64, Error> {
    if k == 0 || k > rewards.len() {
        return Err(Error::Metric(format!(
            "top-{k} requested from {} samples",
            rewards.len()
        )));
    }
    let mut sorted = rewards.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiverseTopK {
    pub mean_reward: f64,
    pub accepted: usize,
    /// Fewer than `k` samples passed the similarity filter.
    pub shortfall: bool,
}

/// Greedy diversity-filtered Top-K.
///
/// Samples are scanned by descending reward, ties broken by ascending item
/// order; a sample is accepted iff its similarity to every accepted sample is
/// at most `threshold`.
pub fn diverse_top_k<T, F>(samples: &[(T, f64)], k: usize, similarity: F, threshold: f64) -> DiverseTopK
where
    T: Ord,
    F: Fn(&T, &T) -> f64,
{
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| match samples[b].1.total_cmp(&samples[a].1) {
        Ordering::Equal => samples[a].0.cmp(&samples[b].0),
        other => other,
    });
    let mut accepted: Vec<usize> = Vec::with_capacity(k);
    for i in order {
        if accepted.len() == k {
            break;
        }
        if accepted
            .iter()
            .all(|&j| similarity(&samples[i].0, &samples[j].0) <= threshold)
        {
            accepted.push(i);
        }
    }
    let mean_reward = if accepted.is_empty() {
        0.0
    } else {
        accepted.iter().map(|&i| samples[i].1).sum::<f64>() / accepted.len() as f64
    };
    DiverseTopK {
        mean_reward,
        accepted: accepted.len(),
        shortfall: accepted.len() < k,
    }
}

/// Fraction of coordinates on which two states agree.
pub fn hamming_similarity(a: &GridState, b: &GridState) -> f64 {
    let same = a.0.iter().zip(&b.0).filter(|(x, y)| x == y).count();
    same as f64 / a.0.len().max(1) as f64
}

/// One row of the metric stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub trajectories: u64,
    pub loss: f64,
    /// Empirical L1 of the window; `None` when the grid is not enumerable.
    pub l1: Option<f64>,
    pub modes: usize,
    pub modes_frac: f64,
    pub mean_reward: f64,
    #[serde(rename = "logZ")]
    pub log_z: f64,
    /// Exact L1 between the online sampler and the target, when computed.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle_l1: Option<f64>,
}

impl MetricRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.trajectories,
            self.loss,
            self.l1.unwrap_or(f64::NAN),
            self.modes,
            self.modes_frac,
            self.mean_reward,
            self.log_z
        )
    }
}

/// Running state behind the metric stream of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTracker {
    pub window: Option<SampleWindow>,
    pub modes: ModeTracker,
    target: Option<Vec<f64>>,
    /// Trajectories sampled up to and including the batch that found the last mode.
    pub trajectories_to_all_modes: Option<u64>,
}

impl MetricsTracker {
    /// `target` enables the windowed L1 (it requires an enumerable grid).
    pub fn new(env: &HyperGrid, window: usize, target: Option<Vec<f64>>) -> Result<Self, Error> {
        let window = target.as_ref().map(|t| SampleWindow::new(window, t.len()));
        Ok(Self {
            window,
            modes: ModeTracker::new(match env.mode_set() {
                Err(EnvError::EmptyModeSet { .. }) => Vec::new(),
                other => other?,
            }),
            target,
            trajectories_to_all_modes: None,
        })
    }

    /// Account for the terminal states of one batch.
    pub fn observe<'a>(
        &mut self,
        env: &HyperGrid,
        terminals: impl IntoIterator<Item = &'a GridState>,
        trajectories_so_far: u64,
    ) {
        let terminals: Vec<&GridState> = terminals.into_iter().collect();
        if let Some(w) = &mut self.window {
            for x in &terminals {
                w.push(env.state_index(x));
            }
        }
        let had_all = self.modes.all_found();
        self.modes.update(terminals.iter().copied());
        if !had_all && self.modes.all_found() {
            self.trajectories_to_all_modes = Some(trajectories_so_far);
        }
    }

    pub fn window_l1(&self) -> Option<f64> {
        match (&self.window, &self.target) {
            (Some(w), Some(t)) if !w.is_empty() => l1_error(w, t).ok(),
            _ => None,
        }
    }

    pub fn target(&self) -> Option<&[f64]> {
        self.target.as_deref()
    }
}
