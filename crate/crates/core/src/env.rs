//! The hypergrid DAG: states are points of `{0, .., H-1}^D`, each action
//! increments one coordinate, and every state may terminate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("state {coords:?} is outside the grid (D={dim}, H={side})")]
    OutOfBounds {
        coords: Vec<usize>,
        dim: usize,
        side: usize,
    },
    #[error("illegal action {action:?} at state {coords:?}")]
    IllegalAction { coords: Vec<usize>, action: Action },
    #[error("grid has {states} states, above the enumeration limit of {limit}")]
    TooLarge { states: u128, limit: u128 },
    #[error("reward has no maximal-reward cells for H={side}; check the coordinate normalization")]
    EmptyModeSet { side: usize },
}

/// Largest grid that may be enumerated state by state.
pub const MAX_ENUMERABLE_STATES: u128 = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    /// Number of dimensions `D`.
    pub dim: usize,
    /// Side length `H`.
    pub side: usize,
    #[serde(default = "default_r0")]
    pub r0: f64,
    #[serde(default = "default_r1")]
    pub r1: f64,
    #[serde(default = "default_r2")]
    pub r2: f64,
}

fn default_r0() -> f64 {
    1e-3
}
fn default_r1() -> f64 {
    0.5
}
fn default_r2() -> f64 {
    2.0
}

impl EnvConfig {
    pub fn new(dim: usize, side: usize) -> Self {
        Self {
            dim,
            side,
            r0: default_r0(),
            r1: default_r1(),
            r2: default_r2(),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.dim < 1 {
            return Err(EnvError::InvalidConfig("dim must be at least 1".into()));
        }
        if self.side < 2 {
            return Err(EnvError::InvalidConfig("side must be at least 2".into()));
        }
        if !(0.0 < self.r0 && self.r0 < self.r1 && self.r1 < self.r2) || !self.r2.is_finite() {
            return Err(EnvError::InvalidConfig(format!(
                "rewards must satisfy 0 < r0 < r1 < r2 (got {}, {}, {})",
                self.r0, self.r1, self.r2
            )));
        }
        Ok(())
    }
}

/// A point of the grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridState(pub Vec<usize>);

impl GridState {
    pub fn coords(&self) -> &[usize] {
        &self.0
    }

    pub fn coord_sum(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Increment(usize),
    Terminate,
}

impl Action {
    /// Position in the forward-policy output (`D` is Terminate).
    pub fn index(self, dim: usize) -> usize {
        match self {
            Action::Increment(d) => d,
            Action::Terminate => dim,
        }
    }

    pub fn from_index(index: usize, dim: usize) -> Self {
        if index == dim {
            Action::Terminate
        } else {
            Action::Increment(index)
        }
    }
}

/// Result of [`HyperGrid::step`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Transition {
    Moved(GridState),
    Terminated(GridState),
}

/// A complete trajectory `s_0 -> .. -> s_n -> s_f`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `s_0 ..= s_n`; `s_n` is the terminal object.
    pub states: Vec<GridState>,
    /// One action per state; the last is always `Terminate`.
    pub actions: Vec<Action>,
    pub reward: f64,
    /// Per-step `log P_F` under the sampling network, when recorded.
    pub log_pf: Option<Vec<f64>>,
    /// Per-step `log P_B` (one per increment), when recorded.
    pub log_pb: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn terminal(&self) -> &GridState {
        self.states.last().expect("trajectory has at least the origin")
    }

    /// Number of increments (`n`).
    pub fn num_moves(&self) -> usize {
        self.states.len() - 1
    }

    /// Structural validity against `env`.
    pub fn validate(&self, env: &HyperGrid) -> Result<(), EnvError> {
        let bad = |msg: &str| EnvError::InvalidConfig(format!("malformed trajectory: {msg}"));
        let first = self.states.first().ok_or_else(|| bad("no states"))?;
        if *first != env.initial_state() {
            return Err(bad("does not start at the origin"));
        }
        if self.actions.len() != self.states.len() {
            return Err(bad("action count differs from state count"));
        }
        for (i, (s, &a)) in self.states.iter().zip(&self.actions).enumerate() {
            match env.step(s, a)? {
                Transition::Moved(next) if i + 1 < self.states.len() => {
                    if next != self.states[i + 1] {
                        return Err(bad("consecutive states are not one increment apart"));
                    }
                }
                Transition::Terminated(_) if i + 1 == self.states.len() => {}
                _ => return Err(bad("Terminate must be exactly the last action")),
            }
        }
        Ok(())
    }
}

/// The hypergrid environment.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperGrid {
    config: EnvConfig,
}

impl HyperGrid {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn side(&self) -> usize {
        self.config.side
    }

    /// Size of the forward action space (`D` increments plus Terminate).
    pub fn num_actions(&self) -> usize {
        self.config.dim + 1
    }

    /// Longest possible trajectory, counted in actions.
    pub fn max_trajectory_len(&self) -> usize {
        self.config.dim * (self.config.side - 1) + 1
    }

    /// `H^D`, or `None` on overflow.
    pub fn num_states_u128(&self) -> Option<u128> {
        (self.config.side as u128).checked_pow(self.config.dim as u32)
    }

    /// `H^D` if the grid can be enumerated.
    pub fn num_states(&self) -> Result<usize, EnvError> {
        match self.num_states_u128() {
            Some(n) if n <= MAX_ENUMERABLE_STATES => Ok(n as usize),
            Some(n) => Err(EnvError::TooLarge {
                states: n,
                limit: MAX_ENUMERABLE_STATES,
            }),
            None => Err(EnvError::TooLarge {
                states: u128::MAX,
                limit: MAX_ENUMERABLE_STATES,
            }),
        }
    }

    pub fn initial_state(&self) -> GridState {
        GridState(vec![0; self.config.dim])
    }

    pub fn check_bounds(&self, s: &GridState) -> Result<(), EnvError> {
        if s.0.len() != self.config.dim || s.0.iter().any(|&c| c >= self.config.side) {
            return Err(EnvError::OutOfBounds {
                coords: s.0.clone(),
                dim: self.config.dim,
                side: self.config.side,
            });
        }
        Ok(())
    }

    /// Legal forward actions: entry `d` is `coords[d] < H-1`, entry `D` is Terminate.
    pub fn valid_actions(&self, s: &GridState) -> Result<Vec<bool>, EnvError> {
        self.check_bounds(s)?;
        Ok(self.forward_mask(s))
    }

    pub(crate) fn forward_mask(&self, s: &GridState) -> Vec<bool> {
        let mut mask: Vec<bool> = s.0.iter().map(|&c| c + 1 < self.config.side).collect();
        mask.push(true);
        mask
    }

    /// Entry `d` is true iff decrementing `d` leads to a parent.
    pub fn parents_mask(&self, s: &GridState) -> Vec<bool> {
        s.0.iter().map(|&c| c > 0).collect()
    }

    pub fn step(&self, s: &GridState, action: Action) -> Result<Transition, EnvError> {
        self.check_bounds(s)?;
        match action {
            Action::Terminate => Ok(Transition::Terminated(s.clone())),
            Action::Increment(d) if d < self.config.dim && s.0[d] + 1 < self.config.side => {
                let mut next = s.clone();
                next.0[d] += 1;
                Ok(Transition::Moved(next))
            }
            Action::Increment(_) => Err(EnvError::IllegalAction {
                coords: s.0.clone(),
                action,
            }),
        }
    }

    /// Parent reached by undoing an increment of dimension `d`.
    pub fn parent(&self, s: &GridState, d: usize) -> Option<GridState> {
        (d < s.0.len() && s.0[d] > 0).then(|| {
            let mut p = s.clone();
            p.0[d] -= 1;
            p
        })
    }

    /// `R(x) = R0 + R1 * prod 1[0.25 < |x/(H-1) - 0.5|] + R2 * prod 1[0.3 < |x/(H-1) - 0.5| < 0.4]`.
    ///
    /// The thresholds are compared in exact integer arithmetic:
    /// `|x/(H-1) - 0.5| = |2x - (H-1)| / (2(H-1))`.
    pub fn reward(&self, x: &GridState) -> f64 {
        let (outer, band) = self.indicators(x);
        self.config.r0 + if outer { self.config.r1 } else { 0.0 } + if band { self.config.r2 } else { 0.0 }
    }

    pub fn log_reward(&self, x: &GridState) -> f64 {
        self.reward(x).ln()
    }

    fn indicators(&self, x: &GridState) -> (bool, bool) {
        let mut outer = true;
        let mut band = true;
        for &c in &x.0 {
            let (o, b) = coordinate_indicators(c, self.config.side);
            outer &= o;
            band &= b;
        }
        (outer, band)
    }

    /// Whether `x` lies in the maximal-reward region.
    pub fn is_mode(&self, x: &GridState) -> bool {
        self.indicators(x).1
    }

    /// All maximal-reward cells, in lexicographic order.
    pub fn mode_set(&self) -> Result<Vec<GridState>, EnvError> {
        let per_dim: Vec<usize> = (0..self.config.side)
            .filter(|&c| coordinate_indicators(c, self.config.side).1)
            .collect();
        if per_dim.is_empty() {
            return Err(EnvError::EmptyModeSet {
                side: self.config.side,
            });
        }
        let mut modes = vec![GridState(Vec::with_capacity(self.config.dim))];
        for _ in 0..self.config.dim {
            modes = modes
                .into_iter()
                .flat_map(|prefix| {
                    per_dim.iter().map(move |&c| {
                        let mut next = prefix.clone();
                        next.0.push(c);
                        next
                    })
                })
                .collect();
        }
        Ok(modes)
    }

    /// Mixed-radix index with the first coordinate most significant, so
    /// index order is lexicographic order.
    pub fn state_index(&self, s: &GridState) -> usize {
        s.0.iter().fold(0, |acc, &c| acc * self.config.side + c)
    }

    pub fn state_from_index(&self, mut index: usize) -> GridState {
        let mut coords = vec![0; self.config.dim];
        for c in coords.iter_mut().rev() {
            *c = index % self.config.side;
            index /= self.config.side;
        }
        GridState(coords)
    }

    /// Every state in index order.
    pub fn all_states(&self) -> Result<impl Iterator<Item = GridState> + '_, EnvError> {
        let n = self.num_states()?;
        Ok((0..n).map(|i| self.state_from_index(i)))
    }

    /// Index offset produced by incrementing dimension `d`.
    pub fn stride(&self, d: usize) -> usize {
        self.config.side.pow((self.config.dim - 1 - d) as u32)
    }
}

/// `(0.25 < |u - 0.5|, 0.3 < |u - 0.5| < 0.4)` for `u = c / (H-1)`.
fn coordinate_indicators(c: usize, side: usize) -> (bool, bool) {
    let span = (side - 1) as i64;
    let a = (2 * c as i64 - span).abs();
    let den = 2 * span;
    (4 * a > den, 10 * a > 3 * den && 10 * a < 4 * den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dim: usize, side: usize) -> HyperGrid {
        HyperGrid::new(EnvConfig::new(dim, side)).unwrap()
    }

    #[test]
    fn origin() {
        assert_eq!(grid(2, 8).initial_state(), GridState(vec![0, 0]));
        assert_eq!(grid(6, 8).initial_state(), GridState(vec![0; 6]));
        assert_eq!(grid(1, 2).initial_state(), GridState(vec![0]));
    }

    #[test]
    fn config_validation() {
        assert!(HyperGrid::new(EnvConfig::new(0, 4)).is_err());
        assert!(HyperGrid::new(EnvConfig::new(2, 1)).is_err());
        let mut c = EnvConfig::new(2, 4);
        c.r0 = 0.0;
        assert!(HyperGrid::new(c.clone()).is_err());
        c.r0 = 0.6;
        assert!(HyperGrid::new(c).is_err());
    }

    #[test]
    fn valid_actions_masks() {
        let g = grid(2, 3);
        assert_eq!(
            g.valid_actions(&GridState(vec![2, 0])).unwrap(),
            vec![false, true, true]
        );
        assert_eq!(
            g.valid_actions(&GridState(vec![2, 2])).unwrap(),
            vec![false, false, true]
        );
        assert_eq!(g.valid_actions(&g.initial_state()).unwrap(), vec![true; 3]);
        assert!(g.valid_actions(&GridState(vec![3, 0])).is_err());
        assert!(g.valid_actions(&GridState(vec![0])).is_err());
    }

    #[test]
    fn parents() {
        let g = grid(2, 3);
        assert_eq!(g.parents_mask(&GridState(vec![1, 0])), vec![true, false]);
        assert_eq!(g.parents_mask(&g.initial_state()), vec![false, false]);
        assert_eq!(g.parents_mask(&GridState(vec![2, 2])), vec![true, true]);
    }

    #[test]
    fn stepping() {
        let g = grid(2, 3);
        assert_eq!(
            g.step(&GridState(vec![0, 0]), Action::Increment(1)).unwrap(),
            Transition::Moved(GridState(vec![0, 1]))
        );
        assert_eq!(
            g.step(&GridState(vec![1, 2]), Action::Terminate).unwrap(),
            Transition::Terminated(GridState(vec![1, 2]))
        );
        assert!(matches!(
            g.step(&GridState(vec![2, 0]), Action::Increment(0)),
            Err(EnvError::IllegalAction { .. })
        ));
    }

    #[test]
    fn reward_examples() {
        let g = grid(2, 8);
        assert!((g.reward(&GridState(vec![0, 0])) - 0.501).abs() < 1e-12);
        assert!((g.reward(&GridState(vec![1, 6])) - 2.501).abs() < 1e-12);
        assert!((g.reward(&GridState(vec![4, 4])) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn reward_matches_float_formula_away_from_boundaries() {
        for side in [8, 10, 12] {
            let g = grid(1, side);
            for c in 0..side {
                let u = ((c as f64) / (side as f64 - 1.0) - 0.5).abs();
                let expected =
                    1e-3 + if u > 0.25 { 0.5 } else { 0.0 } + if u > 0.3 && u < 0.4 { 2.0 } else { 0.0 };
                assert_eq!(g.reward(&GridState(vec![c])), expected, "H={side} c={c}");
            }
        }
    }

    #[test]
    fn mode_sets() {
        let m = grid(2, 8).mode_set().unwrap();
        assert_eq!(
            m,
            vec![
                GridState(vec![1, 1]),
                GridState(vec![1, 6]),
                GridState(vec![6, 1]),
                GridState(vec![6, 6])
            ]
        );
        let m10 = grid(6, 10).mode_set().unwrap();
        assert_eq!(m10.len(), 64);
        assert!(m10.iter().all(|s| s.0.iter().all(|&c| c == 1 || c == 8)));
        let m12 = grid(6, 12).mode_set().unwrap();
        assert_eq!(m12.len(), 64);
        assert!(m12.iter().all(|s| s.0.iter().all(|&c| c == 2 || c == 9)));
        for s in &m12 {
            assert!((grid(6, 12).reward(s) - 2.501).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_count_is_two_to_the_d() {
        for side in [8, 10, 12] {
            for dim in 1..=6 {
                assert_eq!(grid(dim, side).mode_set().unwrap().len(), 1 << dim);
            }
        }
    }

    #[test]
    fn empty_mode_set_is_an_error() {
        assert!(matches!(
            grid(2, 3).mode_set(),
            Err(EnvError::EmptyModeSet { side: 3 })
        ));
    }

    #[test]
    fn reachability_and_parents_exhaustive() {
        for dim in 1..=3 {
            for side in 2..=8 {
                let g = grid(dim, side);
                let n = g.num_states().unwrap();
                let mut reached = vec![false; n];
                reached[0] = true;
                for i in 0..n {
                    let s = g.state_from_index(i);
                    assert_eq!(g.state_index(&s), i);
                    if !s.is_origin() {
                        assert!(g.parents_mask(&s).iter().any(|&p| p));
                    }
                    if !reached[i] {
                        continue;
                    }
                    for d in 0..dim {
                        if let Ok(Transition::Moved(next)) = g.step(&s, Action::Increment(d)) {
                            reached[g.state_index(&next)] = true;
                            // step then parent is the identity
                            assert_eq!(g.parent(&next, d), Some(s.clone()));
                            assert_eq!(g.state_index(&next), i + g.stride(d));
                        }
                    }
                }
                assert!(reached.iter().all(|&r| r), "D={dim} H={side}");
            }
        }
    }

    #[test]
    fn trajectory_validation() {
        let g = grid(2, 3);
        let good = Trajectory {
            states: vec![GridState(vec![0, 0]), GridState(vec![0, 1])],
            actions: vec![Action::Increment(1), Action::Terminate],
            reward: 1.0,
            log_pf: None,
            log_pb: None,
        };
        assert!(good.validate(&g).is_ok());
        let mut bad = good.clone();
        bad.actions[1] = Action::Increment(0);
        assert!(bad.validate(&g).is_err());
        let mut skip = good;
        skip.states[1] = GridState(vec![1, 1]);
        assert!(skip.validate(&g).is_err());
    }
}
