use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::EnvConfig;
use crate::trainer::TrainerConfig;
use crate::Error;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_ROOT_VAR: &str = "DGFN_OUTPUT_ROOT";

/// Hex digits kept from the SHA-256 config digest.
const HASH_LEN: usize = 16;

/// One experiment: an environment, a trainer, and the seeds to run it with.
///
/// `trainer.seed` is replaced by each entry of `seeds` in turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub env: EnvConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let config: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(Error::InvalidConfig(format!(
                "name: {:?} is not a usable directory name",
                self.name
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds: must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::InvalidConfig("seeds: contains duplicates".into()));
        }
        self.env
            .validate()
            .map_err(|e| Error::InvalidConfig(format!("env: {e}")))?;
        self.trainer
            .validate()
            .map_err(|e| Error::InvalidConfig(format!("trainer.{}", strip_prefix(&e))))
    }

    /// Digest of everything that affects results, excluding the seeds and
    /// the output location so runs of one experiment share it.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.seeds.clear();
        canonical.output_dir = PathBuf::new();
        canonical.trainer.seed = 0;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(digest)[..HASH_LEN].to_string()
    }

    /// `algorithm-objective`, e.g. `DGFN-TB`.
    pub fn label(&self) -> String {
        format!(
            "{}-{}",
            self.trainer.algorithm.label(),
            self.trainer.objective.label()
        )
    }

    /// Output root: the override variable if set, otherwise `output_dir`.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if !root.is_empty() => PathBuf::from(root),
            _ => self.output_dir.clone(),
        }
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.output_root().join(&self.name)
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::InvalidConfig(msg) => msg.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Algorithm;

    const MINIMAL: &str = r#"
name = "demo"

[env]
dim = 2
side = 8
"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(c.trainer, TrainerConfig::default());
        assert_eq!(c.env.r0, 1e-3);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.trainer.polyak = 0.1 + 0.2;
        c.trainer.lr = 3e-4;
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.config_hash(), c.config_hash());
    }

    #[test]
    fn hash_ignores_seeds_and_location() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.seeds = vec![9];
        b.output_dir = "/elsewhere".into();
        b.trainer.seed = 4;
        assert_eq!(a.config_hash(), b.config_hash());
        b.trainer.algorithm = Algorithm::Gfn;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 16);
    }

    #[test]
    fn errors_name_the_field() {
        let text = MINIMAL.to_string() + "\n[trainer]\nupdate_period = 0\n";
        let msg = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(msg.contains("trainer.update_period"), "{msg}");

        let text = MINIMAL.to_string() + "\n[trainer]\npolyak_alpha = 0.5\n";
        let msg = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(msg.contains("polyak_alpha"), "{msg}");

        let msg = ExperimentConfig::from_toml(&MINIMAL.replace("side = 8", "side = 1"))
            .unwrap_err()
            .to_string();
        assert!(msg.contains("env"), "{msg}");
    }
}
