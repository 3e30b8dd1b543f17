//! Pipeline configuration file (TOML).
//!
//! Relative paths are resolved against the directory holding the file. The
//! top-level `seed` and `unit_scale_to_cm` are copied into every section
//! that needs them, so `ransac.seed` in a file is ignored.

use std::path::{Path, PathBuf};

use lsepose::{LseParams, MatchParams, RansacConfig, VsdParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub id: String,
    /// OBJ or PLY mesh.
    pub path: PathBuf,
    /// Scored with ADI instead of ADD.
    #[serde(default)]
    pub symmetric: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub unit_scale_to_cm: f64,
    pub sample_count: usize,
    /// Directory of `<model id>.lsei` files.
    pub index_dir: PathBuf,
    pub output_dir: PathBuf,
    pub models: Vec<ModelEntry>,
    pub lse: LseParams,
    pub matching: MatchParams,
    pub ransac: RansacConfig,
    pub vsd: VsdParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            unit_scale_to_cm: 0.1,
            sample_count: 20000,
            index_dir: PathBuf::from("indices"),
            output_dir: PathBuf::from("out"),
            models: Vec::new(),
            lse: LseParams::default(),
            matching: MatchParams::default(),
            ransac: RansacConfig::default(),
            vsd: VsdParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.index_dir = base.join(&cfg.index_dir);
        cfg.output_dir = base.join(&cfg.output_dir);
        for m in &mut cfg.models {
            m.path = base.join(&m.path);
        }
        Ok(cfg)
    }

    /// Propagates the shared fields and checks every numeric domain.
    pub fn finish(mut self, seed: Option<u64>) -> Result<Self, String> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.ransac.seed = self.seed;
        self.lse.unit_scale_to_cm = self.unit_scale_to_cm;
        self.vsd.unit_scale_to_cm = self.unit_scale_to_cm;
        if self.sample_count == 0 {
            return Err("sample_count must be at least 1".into());
        }
        self.lse.validate().map_err(|e| e.to_string())?;
        self.matching.validate()?;
        self.ransac.validate()?;
        self.vsd.validate().map_err(|e| e.to_string())?;
        let mut ids: Vec<&str> = self.models.iter().map(|m| m.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err("model ids must be unique".into());
        }
        Ok(self)
    }

    /// Fails unless every model mesh exists.
    pub fn check_models(&self) -> Result<(), String> {
        if self.models.is_empty() {
            return Err("no models configured".into());
        }
        for m in &self.models {
            if !m.path.is_file() {
                return Err(format!("model {}: {} not found", m.id, m.path.display()));
            }
        }
        Ok(())
    }

    pub fn index_path(&self, id: &str) -> PathBuf {
        self.index_dir.join(format!("{id}.lsei"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }
}
