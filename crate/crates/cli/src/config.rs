//! Run configuration: preset defaults, then a TOML or JSON file, then flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use ror::corpus::{SynthConfig, TypeSchema};
use ror::model::ModelConfig;
use ror::DType;

use crate::failure::{DataContext, Failure, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-size model.
    #[default]
    Default,
    /// Small model for CPU-scale runs.
    Desk,
}

impl Preset {
    fn model(self) -> ModelConfig {
        match self {
            Preset::Default => ModelConfig::default(),
            Preset::Desk => ModelConfig::desk(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub corpus: Option<PathBuf>,
    /// Selection corpus; without it a share of `corpus` is held out.
    pub val_corpus: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Default log filter when ROR_LOG is unset.
    pub log_level: String,
    /// Training arithmetic and checkpoint storage.
    pub precision: DType,
    pub model: ModelConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Default,
            corpus: None,
            val_corpus: None,
            schema: None,
            embeddings: None,
            ckpt: None,
            out: None,
            log_level: "info".into(),
            precision: DType::F32,
            model: ModelConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Recursively overlays `top` onto `base`; tables merge, everything else replaces.
fn overlay(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn read_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).data(|| format!("reading config {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed: std::result::Result<Value, String> = if is_json {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str::<toml::Table>(&text)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::to_value(t).map_err(|e| e.to_string()))
    };
    parsed.map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
}

/// Relative paths in a config file are taken from the file's directory.
fn anchor(cfg: &mut RunConfig, dir: &Path) {
    for p in [
        &mut cfg.corpus,
        &mut cfg.val_corpus,
        &mut cfg.schema,
        &mut cfg.embeddings,
        &mut cfg.ckpt,
        &mut cfg.out,
    ]
    .into_iter()
    .flatten()
    {
        if p.is_relative() {
            *p = dir.join(&*p);
        }
    }
}

/// Builds the config from the preset (flag, else file key, else default) and
/// the optional file. Flags are applied afterwards by the caller.
pub fn load(file: Option<&Path>, preset_flag: Option<Preset>) -> Result<RunConfig> {
    let file_value = file.map(read_file).transpose()?;
    let file_preset = match file_value.as_ref().and_then(|v| v.get("preset")) {
        Some(p) => Some(
            serde_json::from_value::<Preset>(p.clone()).map_err(|e| Failure::usage(format!("config preset: {e}")))?,
        ),
        None => None,
    };
    let preset = preset_flag.or(file_preset).unwrap_or_default();
    let base_cfg = RunConfig {
        preset,
        model: preset.model(),
        ..RunConfig::default()
    };
    let mut value = serde_json::to_value(&base_cfg).expect("config serializes");
    if let Some(v) = file_value {
        overlay(&mut value, v);
    }
    value["preset"] = serde_json::to_value(preset).expect("preset serializes");
    let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| {
        let src = file.map(|p| p.display().to_string()).unwrap_or_default();
        Failure::usage(format!("config {src}: {e}"))
    })?;
    if let Some(dir) = file.and_then(Path::parent) {
        anchor(&mut cfg, dir);
    }
    Ok(cfg)
}

impl RunConfig {
    pub fn schema(&self) -> Result<TypeSchema> {
        match &self.schema {
            Some(p) => TypeSchema::load(p).data(|| format!("loading schema {}", p.display())),
            None => Ok(TypeSchema::ace05()),
        }
    }

    pub fn require_corpus(&self) -> Result<&Path> {
        self.corpus
            .as_deref()
            .ok_or_else(|| Failure::usage("no corpus given (--corpus or `corpus` in the config)"))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn ckpt_dir(&self) -> PathBuf {
        self.ckpt.clone().unwrap_or_else(|| self.out_dir().join("model"))
    }
}
