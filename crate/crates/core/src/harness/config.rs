use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dp::DpGrid;
use crate::env::{BuiltinPlant, PlantKind};
use crate::error::{Error, Result};
use crate::learner::LearnerConfig;

/// Built-in plant selection with optional parameter overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub kind: PlantKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_region: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_guard: Option<f64>,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            kind: PlantKind::PaperScalar,
            action_bound: None,
            initial_region: None,
            state_guard: None,
        }
    }
}

impl PlantConfig {
    pub fn build(&self) -> Result<BuiltinPlant<f64>> {
        let wrap = |field: &str, e: Error| Error::Config {
            field: format!("plant.{field}"),
            message: e.to_string(),
        };
        let mut plant = BuiltinPlant::new(self.kind);
        if let Some(c) = self.action_bound {
            plant = plant.with_action_bound(c).map_err(|e| wrap("action_bound", e))?;
        }
        if let Some([lo, hi]) = self.initial_region {
            plant = plant
                .with_initial_region(lo, hi)
                .map_err(|e| wrap("initial_region", e))?;
        }
        if let Some(g) = self.state_guard {
            plant = plant.with_state_guard(g).map_err(|e| wrap("state_guard", e))?;
        }
        Ok(plant)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

/// Everything one experiment needs. Every field has a default, so `{}` is a
/// valid config for the benchmark plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub plant: PlantConfig,
    pub learner: LearnerConfig,
    pub grid: DpGrid,
    pub eval_x0: Vec<f64>,
    pub seeds: Vec<u64>,
    pub outputs: OutputPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            plant: PlantConfig::default(),
            learner: LearnerConfig::default(),
            grid: DpGrid::default(),
            eval_x0: vec![0.25, 0.5, 0.75, 1.0],
            seeds: vec![0, 1, 2],
            outputs: OutputPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config {
            field: unknown_field(&e.to_string()).unwrap_or_else(|| "<document>".into()),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.build()?;
        self.learner.validate()?;
        self.grid.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config {
                field: "seeds".into(),
                message: "need at least one seed".into(),
            });
        }
        if let Some(x) = self.eval_x0.iter().find(|x| !x.is_finite()) {
            return Err(Error::Config {
                field: "eval_x0".into(),
                message: format!("non-finite initial state {x}"),
            });
        }
        Ok(())
    }

    /// Replaces the learner seed and the seed list with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.learner.seed = seed;
        self.seeds = vec![seed];
        self
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn unknown_field(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_json(r#"{"learner": {"gama": 0.5}}"#).unwrap_err();
        assert_eq!(err.category(), "config-parse");
        assert!(err.to_string().contains("gama"), "{err}");
    }

    #[test]
    fn bad_gamma_is_named() {
        let err = RunConfig::from_json(r#"{"learner": {"gamma": 1.5}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "gamma"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig::default().with_seed(9);
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn plant_overrides() {
        let cfg = RunConfig::from_json(
            r#"{"plant": {"kind": "deadbeat_linear", "action_bound": 2.0, "initial_region": [0.5, 0.5]}}"#,
        )
        .unwrap();
        let plant = cfg.plant.build().unwrap();
        use crate::env::Environment;
        assert_eq!(plant.action_bound(), 2.0);
        assert!(RunConfig::from_json(r#"{"plant": {"kind": "paper_scalar", "action_bound": -1}}"#).is_err());
    }
}
