//! Checkpoint files.
//!
//! A checkpoint is a directory holding `manifest.json` and `tensors.bin`.
//! The manifest carries scalars and a table of arrays (name, dtype, shape,
//! byte offset); the payload is the arrays back to back in little-endian
//! order. Floats travel only through the payload so they round-trip exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::env::GridState;
use crate::Error;

const FORMAT: &str = "dgfn-checkpoint";
const VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "tensors.bin";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    #[serde(with = "hex_seed")]
    pub seed: [u8; 32],
    pub stream: u64,
    /// Stored as a decimal string; JSON numbers cannot hold a u128.
    #[serde(with = "decimal_u128")]
    pub word_pos: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub trajectories: u64,
    pub config_hash: String,
    pub names: Vec<String>,
    pub online: Vec<Tensor>,
    /// Target tensors and the step of their last update.
    pub target: Option<(Vec<Tensor>, u64)>,
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
    pub adam_t: u64,
    pub rng: RngState,
    /// State indices of the sample window, oldest first.
    pub window: Vec<usize>,
    pub discovered: Vec<GridState>,
    pub trajectories_to_all_modes: Option<u64>,
    pub recent_losses: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F64,
    U64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config_hash: String,
    step: u64,
    trajectories: u64,
    adam_t: u64,
    target_last_update: Option<u64>,
    rng: RngState,
    discovered: Vec<GridState>,
    trajectories_to_all_modes: Option<u64>,
    params: Vec<String>,
    arrays: Vec<ArrayEntry>,
}

#[derive(Default)]
struct Payload {
    bytes: Vec<u8>,
    arrays: Vec<ArrayEntry>,
}

impl Payload {
    fn push_f64(&mut self, name: String, shape: &[usize], data: &[f64]) {
        self.arrays.push(ArrayEntry {
            name,
            dtype: Dtype::F64,
            shape: shape.to_vec(),
            offset: self.bytes.len(),
        });
        for v in data {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn push_u64(&mut self, name: String, data: &[u64]) {
        self.arrays.push(ArrayEntry {
            name,
            dtype: Dtype::U64,
            shape: vec![data.len()],
            offset: self.bytes.len(),
        });
        for v in data {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    arrays: &'a [ArrayEntry],
}

impl Reader<'_> {
    fn raw(&self, name: &str, dtype: Dtype) -> Result<(&ArrayEntry, Vec<[u8; 8]>), Error> {
        let entry = self
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
        if entry.dtype != dtype {
            return Err(Error::Checkpoint(format!(
                "array {name} has dtype {:?}",
                entry.dtype
            )));
        }
        let len: usize = entry.shape.iter().product();
        let end = entry.offset + 8 * len;
        let slice = self
            .bytes
            .get(entry.offset..end)
            .ok_or_else(|| Error::Checkpoint(format!("array {name} runs past the payload")))?;
        Ok((
            entry,
            slice
                .chunks_exact(8)
                .map(|c| c.try_into().expect("8 bytes"))
                .collect(),
        ))
    }

    fn tensor(&self, name: &str) -> Result<Tensor, Error> {
        let (entry, words) = self.raw(name, Dtype::F64)?;
        let data = words.into_iter().map(f64::from_le_bytes).collect();
        Tensor::new(entry.shape.clone(), data).map_err(Error::from)
    }

    fn u64s(&self, name: &str) -> Result<Vec<u64>, Error> {
        Ok(self
            .raw(name, Dtype::U64)?
            .1
            .into_iter()
            .map(u64::from_le_bytes)
            .collect())
    }
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<(), Error> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let mut payload = Payload::default();
        let groups: [(&str, &[Tensor]); 3] = [
            ("online", &self.online),
            ("adam_m", &self.adam_m),
            ("adam_v", &self.adam_v),
        ];
        for (group, tensors) in groups {
            for (name, t) in self.names.iter().zip(tensors) {
                payload.push_f64(format!("{group}/{name}"), t.shape(), t.data());
            }
        }
        if let Some((tensors, _)) = &self.target {
            for (name, t) in self.names.iter().zip(tensors) {
                payload.push_f64(format!("target/{name}"), t.shape(), t.data());
            }
        }
        let window: Vec<u64> = self.window.iter().map(|&i| i as u64).collect();
        payload.push_u64("window".into(), &window);
        payload.push_f64(
            "recent_losses".into(),
            &[self.recent_losses.len()],
            &self.recent_losses,
        );

        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            config_hash: self.config_hash.clone(),
            step: self.step,
            trajectories: self.trajectories,
            adam_t: self.adam_t,
            target_last_update: self.target.as_ref().map(|(_, s)| *s),
            rng: self.rng.clone(),
            discovered: self.discovered.clone(),
            trajectories_to_all_modes: self.trajectories_to_all_modes,
            params: self.names.clone(),
            arrays: payload.arrays,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
        // payload first, so a manifest never points at a missing payload
        write(&dir.join(PAYLOAD_FILE), &payload.bytes)?;
        write(&dir.join(MANIFEST_FILE), json.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self, Error> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| Error::io(format!("reading {}", manifest_path.display()), e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {} v{}",
                manifest.format, manifest.version
            )));
        }
        let payload_path = dir.join(PAYLOAD_FILE);
        let bytes = fs::read(&payload_path)
            .map_err(|e| Error::io(format!("reading {}", payload_path.display()), e))?;
        let reader = Reader {
            bytes: &bytes,
            arrays: &manifest.arrays,
        };
        let group = |g: &str| -> Result<Vec<Tensor>, Error> {
            manifest
                .params
                .iter()
                .map(|n| reader.tensor(&format!("{g}/{n}")))
                .collect()
        };
        let target = match manifest.target_last_update {
            Some(s) => Some((group("target")?, s)),
            None => None,
        };
        Ok(Checkpoint {
            step: manifest.step,
            trajectories: manifest.trajectories,
            config_hash: manifest.config_hash.clone(),
            names: manifest.params.clone(),
            online: group("online")?,
            target,
            adam_m: group("adam_m")?,
            adam_v: group("adam_v")?,
            adam_t: manifest.adam_t,
            rng: manifest.rng.clone(),
            window: reader.u64s("window")?.into_iter().map(|i| i as usize).collect(),
            discovered: manifest.discovered.clone(),
            trajectories_to_all_modes: manifest.trajectories_to_all_modes,
            recent_losses: reader.tensor("recent_losses")?.into_data(),
        })
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

mod hex_seed {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(seed))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(&text).map_err(D::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| D::Error::custom("rng seed must be 32 bytes"))
    }
}

mod decimal_u128 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let t = |v: f64| Tensor::vector(vec![v, -v, 0.1 + v]);
        Checkpoint {
            step: 42,
            trajectories: 2688,
            config_hash: "abc".into(),
            names: vec!["a".into(), "logz".into()],
            online: vec![t(1.0), Tensor::vector(vec![0.3])],
            target: Some((vec![t(2.0), Tensor::vector(vec![f64::MIN_POSITIVE])], 40)),
            adam_m: vec![t(3.0), Tensor::vector(vec![1e-300])],
            adam_v: vec![t(4.0), Tensor::vector(vec![7.0])],
            adam_t: 42,
            rng: RngState {
                seed: [7; 32],
                stream: 1,
                word_pos: u128::from(u64::MAX) + 5,
            },
            window: vec![3, 1, 4, 1, 5],
            discovered: vec![GridState(vec![1, 6])],
            trajectories_to_all_modes: None,
            recent_losses: vec![0.1, 0.2 + 1e-17],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = sample();
        ckpt.save(dir.path()).unwrap();
        assert_eq!(Checkpoint::load(dir.path()).unwrap(), ckpt);

        let gfn = Checkpoint {
            target: None,
            ..sample()
        };
        gfn.save(dir.path()).unwrap();
        assert_eq!(Checkpoint::load(dir.path()).unwrap(), gfn);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let path = dir.path().join(PAYLOAD_FILE);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        let err = Checkpoint::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("runs past"), "{err}");
    }
}
