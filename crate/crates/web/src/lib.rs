//! Browser demo: a GFN and a DGFN trained side by side on the same 2-D
//! hypergrid and seed, with exact distributions for heatmaps.
//!
//! [`Comparison`] holds the logic and is usable natively; [`Demo`] is its
//! wasm-bindgen face.

use dgfn_core::env::{EnvConfig, HyperGrid};
use dgfn_core::oracle::{sampler_distribution, target_distribution};
use dgfn_core::trainer::{Algorithm, Trainer, TrainerConfig};
use dgfn_core::Error;
use wasm_bindgen::prelude::*;

pub const MIN_SIDE: usize = 3;
pub const MAX_SIDE: usize = 32;

/// Which distribution a heatmap shows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Target,
    GfnOnline,
    DgfnOnline,
    /// The delayed network DGFN samples from.
    DgfnSampler,
}

impl View {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "target" => Some(View::Target),
            "gfn" => Some(View::GfnOnline),
            "dgfn" => Some(View::DgfnOnline),
            "dgfn-sampler" => Some(View::DgfnSampler),
            _ => None,
        }
    }
}

/// Per-step trace of one trainer: `(trajectories, modes found, loss)`.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub trajectories: Vec<f64>,
    pub modes: Vec<f64>,
    pub loss: Vec<f64>,
}

pub struct Comparison {
    gfn: Trainer,
    dgfn: Trainer,
    traces: [Trace; 2],
}

impl Comparison {
    pub fn new(side: usize, r0: f64, seed: u64) -> Result<Self, Error> {
        if !(MIN_SIDE..=MAX_SIDE).contains(&side) {
            return Err(Error::InvalidConfig(format!(
                "side: must lie in {MIN_SIDE}..={MAX_SIDE}, got {side}"
            )));
        }
        let env = EnvConfig {
            r0,
            ..EnvConfig::new(2, side)
        };
        let base = TrainerConfig {
            seed,
            total_steps: u64::MAX,
            metric_cadence: u64::MAX,
            window: 1,
            ..TrainerConfig::default()
        };
        let trainer = |algorithm| {
            Trainer::new(
                env.clone(),
                TrainerConfig {
                    algorithm,
                    ..base.clone()
                },
            )
        };
        Ok(Self {
            gfn: trainer(Algorithm::Gfn)?,
            dgfn: trainer(Algorithm::Dgfn)?,
            traces: Default::default(),
        })
    }

    pub fn env(&self) -> &HyperGrid {
        self.gfn.env()
    }

    pub fn trainers(&self) -> [&Trainer; 2] {
        [&self.gfn, &self.dgfn]
    }

    pub fn traces(&self) -> &[Trace; 2] {
        &self.traces
    }

    /// Advance both trainers by `n` steps.
    pub fn step(&mut self, n: u32) -> Result<(), Error> {
        for _ in 0..n {
            for (trainer, trace) in [&mut self.gfn, &mut self.dgfn].into_iter().zip(&mut self.traces) {
                let (outcome, _) = trainer.advance()?;
                trace.trajectories.push(trainer.trajectories() as f64);
                trace.modes.push(trainer.metrics().modes.count() as f64);
                trace.loss.push(outcome.report.loss);
            }
        }
        Ok(())
    }

    /// Exact distribution over cells, row-major with `x0` along rows.
    pub fn heatmap(&self, view: View) -> Result<Vec<f64>, Error> {
        let env = self.env();
        let table = match view {
            View::Target => target_distribution(env)?,
            View::GfnOnline => sampler_distribution(self.gfn.online(), env)?,
            View::DgfnOnline => sampler_distribution(self.dgfn.online(), env)?,
            View::DgfnSampler => sampler_distribution(self.dgfn.sampler(), env)?,
        };
        Ok(table.probs)
    }

    /// Exact L1 to the target of each online network.
    pub fn oracle_l1(&self) -> Result<[f64; 2], Error> {
        let l1 = |t: &Trainer| t.oracle_l1().map(|v| v.unwrap_or(f64::NAN));
        Ok([l1(&self.gfn)?, l1(&self.dgfn)?])
    }
}

fn js_err(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    inner: Comparison,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(side: usize, r0: f64, seed: u32) -> Result<Demo, JsError> {
        Comparison::new(side, r0, seed as u64)
            .map(|inner| Demo { inner })
            .map_err(js_err)
    }

    pub fn side(&self) -> usize {
        self.inner.env().side()
    }

    pub fn steps(&self) -> f64 {
        self.inner.gfn.step() as f64
    }

    pub fn modes_total(&self) -> usize {
        self.inner.gfn.metrics().modes.total()
    }

    pub fn step(&mut self, n: u32) -> Result<(), JsError> {
        self.inner.step(n).map_err(js_err)
    }

    /// `view` is one of `target`, `gfn`, `dgfn`, `dgfn-sampler`.
    pub fn heatmap(&self, view: &str) -> Result<Vec<f64>, JsError> {
        let view = View::parse(view).ok_or_else(|| JsError::new(&format!("unknown view {view}")))?;
        self.inner.heatmap(view).map_err(js_err)
    }

    /// `[gfn, dgfn]` exact L1 of the online networks.
    pub fn oracle_l1(&self) -> Result<Vec<f64>, JsError> {
        self.inner.oracle_l1().map(|v| v.to_vec()).map_err(js_err)
    }

    /// Trace column for trainer 0 (GFN) or 1 (DGFN): `trajectories`, `modes` or `loss`.
    pub fn trace(&self, which: usize, column: &str) -> Vec<f64> {
        let Some(t) = self.inner.traces.get(which) else {
            return Vec::new();
        };
        match column {
            "trajectories" => t.trajectories.clone(),
            "modes" => t.modes.clone(),
            "loss" => t.loss.clone(),
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmaps_are_distributions() {
        let mut c = Comparison::new(6, 1e-3, 0).unwrap();
        c.step(3).unwrap();
        for view in [View::Target, View::GfnOnline, View::DgfnOnline, View::DgfnSampler] {
            let h = c.heatmap(view).unwrap();
            assert_eq!(h.len(), 36);
            assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(c.traces()[0].modes.len(), 3);
        assert_eq!(c.traces()[1].trajectories, vec![64.0, 128.0, 192.0]);
    }

    #[test]
    fn shared_seed_gives_shared_start() {
        let c = Comparison::new(5, 1e-3, 7).unwrap();
        assert_eq!(
            c.heatmap(View::GfnOnline).unwrap(),
            c.heatmap(View::DgfnOnline).unwrap()
        );
        let [a, b] = c.oracle_l1().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn side_is_bounded() {
        assert!(Comparison::new(2, 1e-3, 0).is_err());
        assert!(Comparison::new(MAX_SIDE + 1, 1e-3, 0).is_err());
        assert_eq!(View::parse("dgfn-sampler"), Some(View::DgfnSampler));
        assert_eq!(View::parse("other"), None);
    }
}
