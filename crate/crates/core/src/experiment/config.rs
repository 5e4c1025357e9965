use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{acoustic_index, SplitSpec, ACOUSTIC_COLUMNS};
use crate::error::{Error, Result};
use crate::features::FeaturePlan;
use crate::nn::LossKind;

/// Experiment description, usually read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Corpus directory; relative paths resolve against the config file.
    pub corpus: PathBuf,
    pub split: SplitSpec,
    pub plan: FeaturePlan,
    #[serde(default = "default_objective")]
    pub objective: LossKind,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default = "default_runs_per_hidden")]
    pub runs_per_hidden_size: usize,
    #[serde(default = "default_final_runs")]
    pub final_runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub training: TrainingSettings,
    #[serde(default)]
    pub sfs: SfsSettings,
}

fn default_objective() -> LossKind {
    LossKind::Bce
}

fn default_runs_per_hidden() -> usize {
    3
}

fn default_final_runs() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub hidden: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub l2: Vec<f64>,
    /// Hidden size used while choosing the learning rate and L2.
    pub reference_hidden: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            hidden: vec![20, 40, 60, 80, 100],
            learning_rate: vec![0.001, 0.01],
            l2: vec![0.001, 0.0001],
            reference_hidden: 60,
        }
    }
}

impl Grid {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.learning_rate.is_empty() || self.l2.is_empty() {
            return Err(Error::config("grid.hidden, grid.learning_rate and grid.l2 must be non-empty"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("grid.hidden sizes must be positive"));
        }
        if self.learning_rate.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::config("grid.learning_rate values must be positive"));
        }
        if self.l2.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::config("grid.l2 values must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSettings {
    pub max_epochs: usize,
    pub patience: usize,
    pub chunk_frames: usize,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        TrainingSettings {
            max_epochs: 40,
            patience: 3,
            chunk_frames: 600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfsSettings {
    pub steps: usize,
    /// Candidate acoustic columns; empty means all 21.
    pub candidates: Vec<String>,
    /// Runs averaged per candidate.
    pub runs: usize,
}

impl Default for SfsSettings {
    fn default() -> Self {
        SfsSettings {
            steps: 10,
            candidates: Vec::new(),
            runs: 1,
        }
    }
}

impl SfsSettings {
    /// Candidate names in canonical column order.
    pub fn candidate_names(&self) -> Result<Vec<String>> {
        if self.candidates.is_empty() {
            return Ok(ACOUSTIC_COLUMNS.iter().map(|c| c.to_string()).collect());
        }
        let mut idx = self
            .candidates
            .iter()
            .map(|c| acoustic_index(c).ok_or_else(|| Error::config(format!("unknown acoustic column {c:?}"))))
            .collect::<Result<Vec<_>>>()?;
        idx.sort_unstable();
        idx.dedup();
        Ok(idx.into_iter().map(|i| ACOUSTIC_COLUMNS[i].to_string()).collect())
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.plan.validate()?;
        self.grid.validate()?;
        if self.runs_per_hidden_size == 0 || self.final_runs == 0 {
            return Err(Error::config("runs_per_hidden_size and final_runs must be at least 1"));
        }
        let t = &self.training;
        if t.max_epochs == 0 || t.patience == 0 || t.chunk_frames == 0 {
            return Err(Error::config(
                "training.max_epochs, training.patience and training.chunk_frames must be positive",
            ));
        }
        self.sfs.candidate_names()?;
        Ok(())
    }

    /// Parses TOML, applies `key=value` overrides (dotted paths, values in
    /// TOML syntax or bare strings) and validates.
    pub fn from_toml_str(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut value: toml::Value =
            toml::from_str(text).map_err(|e| Error::config(format!("config: {}", e.message())))?;
        for (k, v) in overrides {
            apply_override(&mut value, k, v)?;
        }
        let config: ExperimentConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("config: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; a relative `corpus` path is resolved against the
    /// file's directory.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut c = Self::from_toml_str(&text, overrides)?;
        if c.corpus.is_relative() {
            if let Some(dir) = path.parent() {
                c.corpus = dir.join(&c.corpus);
            }
        }
        Ok(c)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Sets `dotted.key` in a TOML document. The value is parsed as a TOML value
/// when possible and taken as a string otherwise.
pub fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("invalid override key {key:?}")));
    }
    let mut cur = root;
    for p in &parts[..parts.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override {key}: {p} is not a table")))?;
        cur = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    cur.as_table_mut()
        .ok_or_else(|| Error::config(format!("override {key}: parent is not a table")))?
        .insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
corpus = "data"
seed = 3

[split]
train = ["a", "b"]
heldout = ["c"]
test = ["d"]

[plan]
acoustic = ["all"]
va = true
"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_toml_str(BASE, &[]).unwrap();
        assert_eq!(c.grid, Grid::default());
        assert_eq!(c.runs_per_hidden_size, 3);
        assert_eq!(c.final_runs, 10);
        assert_eq!(c.objective, LossKind::Bce);
        assert_eq!(c.sfs.steps, 10);
    }

    #[test]
    fn overrides_apply_before_validation() {
        let o = |k: &str, v: &str| (k.to_string(), v.to_string());
        let c = ExperimentConfig::from_toml_str(
            BASE,
            &[
                o("grid.hidden", "[8]"),
                o("objective", "mae"),
                o("training.max_epochs", "5"),
                o("seed", "77"),
            ],
        )
        .unwrap();
        assert_eq!(c.grid.hidden, vec![8]);
        assert_eq!(c.objective, LossKind::Mae);
        assert_eq!(c.training.max_epochs, 5);
        assert_eq!(c.seed, 77);

        let e = ExperimentConfig::from_toml_str(BASE, &[o("grid.hiden", "[8]")]).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let e = ExperimentConfig::from_toml_str(BASE, &[o("final_runs", "0")]).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{BASE}\nbogus = 1\n");
        assert!(matches!(ExperimentConfig::from_toml_str(&text, &[]), Err(Error::Config(_))));
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::from_toml_str(BASE, &[]).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&c.to_toml_string(), &[]).unwrap(), c);
    }
}
