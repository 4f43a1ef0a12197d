//! Named experiment configurations. The same configurations ship as TOML
//! files under `presets/` at the repository root.

use crate::env::EnvConfig;
use crate::objectives::Objective;
use crate::trainer::{Algorithm, TrainerConfig};

use super::ExperimentConfig;

const VARIANTS: [(Algorithm, Objective); 4] = [
    (Algorithm::Gfn, Objective::Tb),
    (Algorithm::Gfn, Objective::SubTb),
    (Algorithm::Dgfn, Objective::Tb),
    (Algorithm::Dgfn, Objective::SubTb),
];

/// `(grid name, D, H, total steps)`.
const GRIDS: [(&str, usize, usize, u64); 4] = [
    ("hypergrid-d6-h8", 6, 8, 10_000),
    ("hypergrid-d6-h10", 6, 10, 10_000),
    ("hypergrid-d6-h12", 6, 12, 10_000),
    ("hypergrid-desk", 2, 8, 2_000),
];

fn variant_suffix(algorithm: Algorithm, objective: Objective) -> String {
    format!(
        "{}-{}",
        algorithm.label().to_lowercase(),
        objective.label().to_lowercase()
    )
}

pub fn preset_names() -> Vec<String> {
    GRIDS
        .iter()
        .flat_map(|(grid, ..)| {
            VARIANTS
                .iter()
                .map(move |&(a, o)| format!("{grid}-{}", variant_suffix(a, o)))
        })
        .collect()
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    for &(grid, dim, side, total_steps) in &GRIDS {
        for &(algorithm, objective) in &VARIANTS {
            if name != format!("{grid}-{}", variant_suffix(algorithm, objective)) {
                continue;
            }
            let (initial_phase, update_period) = TrainerConfig::hypergrid_schedule(objective);
            return Some(ExperimentConfig {
                name: name.to_string(),
                seeds: (0..5).collect(),
                output_dir: "runs".into(),
                env: EnvConfig::new(dim, side),
                trainer: TrainerConfig {
                    algorithm,
                    objective,
                    initial_phase,
                    update_period,
                    total_steps,
                    ..TrainerConfig::default()
                },
            });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_presets() {
        let names = preset_names();
        assert_eq!(names.len(), 16);
        for n in &names {
            let p = preset(n).unwrap();
            p.validate().unwrap();
            assert_eq!(&p.name, n);
        }
        assert!(preset("hypergrid-desk-dgfn-qm").is_none());
    }

    #[test]
    fn full_scale_dgfn_tb() {
        let p = preset("hypergrid-d6-h10-dgfn-tb").unwrap();
        assert_eq!((p.env.dim, p.env.side), (6, 10));
        let t = &p.trainer;
        assert_eq!((t.initial_phase, t.update_period, t.batch_size), (698, 137, 64));
        assert_eq!(t.total_steps * t.batch_size as u64, 640_000);
        let s = preset("hypergrid-desk-dgfn-subtb").unwrap();
        assert_eq!((s.trainer.initial_phase, s.trainer.update_period), (794, 149));
    }
}
