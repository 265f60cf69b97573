use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::write_atomic;
use crate::diffnet::hex_digest;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One `(s, a, r, s', done)` tuple. Serialized with the short keys
/// `s`, `a`, `r`, `s2`, `done`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    #[serde(rename = "s")]
    pub state: Vec<f64>,
    #[serde(rename = "a")]
    pub action: Vec<f64>,
    #[serde(rename = "r")]
    pub reward: f64,
    #[serde(rename = "s2")]
    pub next_state: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Random,
    Medium,
    MediumReplay,
    MediumExpert,
    Expert,
    Custom,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 6] = [
        GeneratorKind::Random,
        GeneratorKind::Medium,
        GeneratorKind::MediumReplay,
        GeneratorKind::MediumExpert,
        GeneratorKind::Expert,
        GeneratorKind::Custom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GeneratorKind::Random => "random",
            GeneratorKind::Medium => "medium",
            GeneratorKind::MediumReplay => "medium_replay",
            GeneratorKind::MediumExpert => "medium_expert",
            GeneratorKind::Expert => "expert",
            GeneratorKind::Custom => "custom",
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        GeneratorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::Unknown {
                what: "dataset kind",
                name: s.to_string(),
            })
    }
}

/// Sidecar record describing how a dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub env_name: String,
    pub generator_kind: GeneratorKind,
    pub seed: u64,
    pub size: usize,
    /// Generator knobs and summary numbers (noise levels, achieved scores, ...).
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Hash of the experiment config that produced the file, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Minibatch in matrix form, one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    /// 1.0 for terminal transitions, 0.0 otherwise.
    pub dones: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_transitions(transitions: &[&Transition]) -> Self {
        let n = transitions.len();
        let sd = transitions.first().map_or(0, |t| t.state.len());
        let ad = transitions.first().map_or(0, |t| t.action.len());
        let mut states = Array2::zeros((n, sd));
        let mut actions = Array2::zeros((n, ad));
        let mut next_states = Array2::zeros((n, sd));
        let mut rewards = Array1::zeros(n);
        let mut dones = Array1::zeros(n);
        for (i, t) in transitions.iter().enumerate() {
            states.row_mut(i).assign(&ndarray::aview1(&t.state));
            actions.row_mut(i).assign(&ndarray::aview1(&t.action));
            next_states
                .row_mut(i)
                .assign(&ndarray::aview1(&t.next_state));
            rewards[i] = t.reward;
            dones[i] = if t.done { 1.0 } else { 0.0 };
        }
        Batch {
            states,
            actions,
            rewards,
            next_states,
            dones,
        }
    }
}

/// A fixed, validated collection of transitions.
///
/// There is no API to append to or modify a dataset once built; learners only
/// ever borrow it.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    transitions: Vec<Transition>,
    metadata: DatasetMetadata,
}

impl TransitionDataset {
    pub fn new(transitions: Vec<Transition>, metadata: DatasetMetadata) -> Result<Self> {
        let first = transitions.first().ok_or(Error::EmptyDataset)?;
        let (sd, ad) = (first.state.len(), first.action.len());
        if sd == 0 || ad == 0 {
            return Err(Error::invalid("dataset", "zero-width states or actions"));
        }
        for (i, t) in transitions.iter().enumerate() {
            if t.state.len() != sd || t.next_state.len() != sd {
                return Err(Error::shape(
                    "dataset state",
                    sd,
                    t.state.len().max(t.next_state.len()),
                ));
            }
            if t.action.len() != ad {
                return Err(Error::shape("dataset action", ad, t.action.len()));
            }
            if t.action.iter().any(|a| !(-1.0..=1.0).contains(a)) {
                return Err(Error::invalid(
                    format!("transitions[{i}].a"),
                    "action outside [-1, 1]",
                ));
            }
            let finite =
                t.reward.is_finite() && t.state.iter().chain(&t.next_state).all(|v| v.is_finite());
            if !finite {
                return Err(Error::non_finite(format!("transitions[{i}]")));
            }
        }
        if metadata.size != transitions.len() {
            return Err(Error::invalid(
                "metadata.size",
                format!("{} but dataset holds {}", metadata.size, transitions.len()),
            ));
        }
        Ok(TransitionDataset {
            transitions,
            metadata,
        })
    }

    /// Builds metadata from the arguments and the transition count.
    pub fn from_transitions(
        env_name: &str,
        kind: GeneratorKind,
        seed: u64,
        transitions: Vec<Transition>,
    ) -> Result<Self> {
        let metadata = DatasetMetadata {
            env_name: env_name.to_string(),
            generator_kind: kind,
            seed,
            size: transitions.len(),
            params: BTreeMap::new(),
            config_hash: None,
        };
        Self::new(transitions, metadata)
    }

    /// Records the hash of the experiment config that produced this dataset.
    pub fn stamp(&mut self, config_hash: &str) {
        self.metadata.config_hash = Some(config_hash.to_string());
    }

    pub(crate) fn with_param(mut self, key: &str, value: f64) -> Self {
        self.metadata.params.insert(key.to_string(), value);
        self
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn metadata(&self) -> &DatasetMetadata {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.transitions[0].state.len()
    }

    pub fn action_dim(&self) -> usize {
        self.transitions[0].action.len()
    }

    /// `k` indices drawn uniformly with replacement.
    pub fn sample_indices(&self, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if k == 0 {
            return Err(Error::invalid("k", "minibatch size must be positive"));
        }
        if k > self.len() {
            return Err(Error::invalid(
                "k",
                format!("minibatch size {k} exceeds dataset size {}", self.len()),
            ));
        }
        let n = self.len();
        Ok((0..k).map(|_| rng.random_range(0..n)).collect())
    }

    pub fn sample_minibatch(&self, k: usize, rng: &mut Rng) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(k, rng)?
            .into_iter()
            .map(|i| self.transitions[i].clone())
            .collect())
    }

    pub fn sample_batch(&self, k: usize, rng: &mut Rng) -> Result<Batch> {
        let idx = self.sample_indices(k, rng)?;
        Ok(self.batch(&idx))
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let rows: Vec<&Transition> = indices.iter().map(|&i| &self.transitions[i]).collect();
        Batch::from_transitions(&rows)
    }

    pub fn states(&self) -> Array2<f64> {
        rows_to_matrix(
            self.transitions.iter().map(|t| t.state.as_slice()),
            self.state_dim(),
        )
    }

    pub fn actions(&self) -> Array2<f64> {
        rows_to_matrix(
            self.transitions.iter().map(|t| t.action.as_slice()),
            self.action_dim(),
        )
    }

    /// `first` followed by `second`, order preserved.
    pub fn concat(
        first: &TransitionDataset,
        second: &TransitionDataset,
        kind: GeneratorKind,
        seed: u64,
    ) -> Result<Self> {
        let transitions = first
            .transitions
            .iter()
            .chain(&second.transitions)
            .cloned()
            .collect();
        Self::from_transitions(&first.metadata.env_name, kind, seed, transitions)
    }

    /// One JSON object per line, newline terminated.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::with_capacity(self.len() * 96);
        for t in &self.transitions {
            out.push_str(&serde_json::to_string(t)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, metadata: DatasetMetadata) -> Result<Self> {
        let transitions = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str(line).map_err(|e| Error::Format {
                    what: "dataset line",
                    reason: format!("line {}: {e}", i + 1),
                })
            })
            .collect::<Result<Vec<Transition>>>()?;
        Self::new(transitions, metadata)
    }

    /// SHA-256 of the JSONL serialization.
    pub fn content_hash(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        hasher.update(self.to_jsonl()?.as_bytes());
        hasher.update(serde_json::to_string(&self.metadata)?.as_bytes());
        Ok(hex_digest(hasher))
    }

    /// `data.jsonl` → `data.meta.json`.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("meta.json")
    }

    /// Writes the JSONL file and its metadata sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())?;
        let meta = serde_json::to_string_pretty(&self.metadata)?;
        write_atomic(&Self::sidecar_path(path), meta.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta_path = Self::sidecar_path(path);
        let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let metadata: DatasetMetadata = serde_json::from_str(&meta_text)?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, metadata)
    }
}

fn rows_to_matrix<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Array2<f64> {
    let flat: Vec<f64> = rows.flat_map(|r| r.iter().copied()).collect();
    let n = flat.len() / width;
    Array2::from_shape_vec((n, width), flat).expect("rows share a width")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tiny(n: usize) -> TransitionDataset {
        let transitions = (0..n)
            .map(|i| Transition {
                state: vec![i as f64],
                action: vec![0.0],
                reward: 1.0,
                next_state: vec![i as f64 + 1.0],
                done: false,
            })
            .collect();
        TransitionDataset::from_transitions("edge-following", GeneratorKind::Custom, 0, transitions)
            .unwrap()
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let err = TransitionDataset::from_transitions("x", GeneratorKind::Custom, 0, vec![]);
        assert!(matches!(err, Err(Error::EmptyDataset)));
    }

    #[test]
    fn out_of_bounds_action_is_rejected() {
        let t = Transition {
            state: vec![0.0],
            action: vec![1.5],
            reward: 0.0,
            next_state: vec![0.0],
            done: true,
        };
        assert!(
            TransitionDataset::from_transitions("x", GeneratorKind::Custom, 0, vec![t]).is_err()
        );
    }

    #[test]
    fn metadata_size_must_match() {
        let ds = tiny(3);
        let mut meta = ds.metadata().clone();
        meta.size = 4;
        assert!(TransitionDataset::new(ds.transitions().to_vec(), meta).is_err());
    }

    #[test]
    fn size_one_dataset_repeats_its_transition() {
        let ds = tiny(1);
        let mut rng = rng::stream(3, 0);
        let batch = ds.sample_minibatch(1, &mut rng).unwrap();
        assert_eq!(batch, vec![ds.transitions()[0].clone()]);
    }

    #[test]
    fn zero_or_oversized_minibatch_is_an_error() {
        let ds = tiny(5);
        let mut rng = rng::stream(0, 0);
        assert!(ds.sample_minibatch(0, &mut rng).is_err());
        assert!(ds.sample_minibatch(6, &mut rng).is_err());
    }

    #[test]
    fn fixed_seed_repeats_indices() {
        let ds = tiny(50);
        let a = ds.sample_indices(20, &mut rng::stream(9, 4)).unwrap();
        let b = ds.sample_indices(20, &mut rng::stream(9, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kind_parses_both_spellings() {
        assert_eq!(
            "medium-expert".parse::<GeneratorKind>().unwrap(),
            GeneratorKind::MediumExpert
        );
        assert_eq!(
            "medium_replay".parse::<GeneratorKind>().unwrap(),
            GeneratorKind::MediumReplay
        );
        assert!("expertish".parse::<GeneratorKind>().is_err());
    }

    #[test]
    fn jsonl_uses_short_keys() {
        let line = tiny(1).to_jsonl().unwrap();
        assert_eq!(
            line,
            "{\"s\":[0.0],\"a\":[0.0],\"r\":1.0,\"s2\":[1.0],\"done\":false}\n"
        );
    }
}
