use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stemgan::data_io::DatasetSpec;
use stemgan::losses::LossWeights;
use stemgan::model::{DiscriminatorConfig, GeneratorConfig, ModelConfig};
use stemgan::pipeline::LoaderConfig;
use stemgan::scoring::DEFAULT_LAMBDA_D;
use stemgan::synth::SynthConfig;
use stemgan::trainer::TrainConfig;
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Preset layout: umn, ucsd, avenue, subway, synthetic or custom.
    pub preset: String,
    /// Dataset root scanned by `prepare`; `synth` writes here too.
    pub root: PathBuf,
    /// Manifest CSV; defaults to `<output.dir>/manifest.csv`.
    pub manifest: Option<PathBuf>,
    pub window: usize,
    pub stride: usize,
    /// Replaces the preset layout when given.
    pub layout: Option<DatasetSpec>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            preset: "synthetic".into(),
            root: PathBuf::from("data/synthetic"),
            manifest: None,
            window: 5,
            stride: 1,
            layout: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub precision: Precision,
    pub frame_size: usize,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        let desk = ModelConfig::desk();
        ModelSection {
            precision: Precision::F32,
            frame_size: desk.frame_size,
            generator: desk.generator,
            discriminator: desk.discriminator,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub lambda_int: f64,
    pub lambda_gra: f64,
    pub lambda_adv: f64,
    pub lambda_d: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        LossSection {
            lambda_int: w.lambda_int,
            lambda_gra: w.lambda_gra,
            lambda_adv: w.lambda_adv,
            lambda_d: DEFAULT_LAMBDA_D,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSection {
    /// Checkpoint directory to warm-start `train` from.
    pub base: Option<PathBuf>,
    /// Defaults to half of the base run's learning rate.
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub duration_secs: f64,
    /// Repetitions per configuration; the median is reported.
    pub runs: usize,
    pub loader: LoaderConfig,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            duration_secs: 3.0,
            runs: 3,
            loader: LoaderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("runs/default"),
            checkpoint: None,
            scores: None,
            report: None,
        }
    }
}

impl OutputSection {
    pub fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.dir.join("checkpoint"))
    }

    pub fn last_checkpoint_dir(&self) -> PathBuf {
        self.dir.join("checkpoint_last")
    }

    pub fn scores_dir(&self) -> PathBuf {
        self.scores.clone().unwrap_or_else(|| self.dir.join("scores"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.report.clone().unwrap_or_else(|| self.dir.join("report"))
    }
}

/// Everything one invocation needs; each key has a default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub loss: LossSection,
    pub transfer: TransferSection,
    pub bench: BenchSection,
    pub synth: SynthConfig,
    pub output: OutputSection,
}

impl RunConfig {
    /// Reads `path` (if any), applies `key=value` overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for (key, value) in overrides {
            apply_override(&mut table, key, value)?;
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid configuration: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            frame_size: self.model.frame_size,
            window_total: self.dataset.window,
            generator: self.model.generator.clone(),
            discriminator: self.model.discriminator.clone(),
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_int: self.loss.lambda_int,
            lambda_gra: self.loss.lambda_gra,
            lambda_adv: self.loss.lambda_adv,
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dataset
            .manifest
            .clone()
            .unwrap_or_else(|| self.output.dir.join("manifest.csv"))
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec, CliError> {
        match &self.dataset.layout {
            Some(l) => Ok(l.clone()),
            None => DatasetSpec::preset(&self.dataset.preset).map_err(|e| CliError::Usage(e.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: stemgan::Error| CliError::Usage(e.to_string());
        self.model_config().validate().map_err(usage)?;
        self.train.validate().map_err(usage)?;
        self.loss_weights().validate().map_err(usage)?;
        self.dataset_spec()?;
        if self.dataset.stride == 0 {
            return Err(CliError::Usage("dataset.stride must be at least 1".into()));
        }
        if !(self.loss.lambda_d >= 0.0 && self.loss.lambda_d.is_finite()) {
            return Err(CliError::Usage("loss.lambda_d must be nonnegative".into()));
        }
        if !(self.bench.duration_secs > 0.0) || self.bench.runs == 0 {
            return Err(CliError::Usage("bench needs a positive duration and at least one run".into()));
        }
        if matches!(self.transfer.learning_rate, Some(lr) if !(lr > 0.0)) {
            return Err(CliError::Usage("transfer.learning_rate must be positive".into()));
        }
        self.bench.loader.validate(self.dataset.window).map_err(usage)?;
        self.synth.validate().map_err(usage)?;
        Ok(())
    }

    /// Every effective value, as TOML.
    pub fn resolved(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    pub fn write_resolved(&self) -> Result<PathBuf, CliError> {
        let dir = &self.output.dir;
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(stemgan::Error::io(dir, e)))?;
        let p = dir.join("resolved_config.txt");
        fs::write(&p, self.resolved()).map_err(|e| CliError::Runtime(stemgan::Error::io(&p, e)))?;
        Ok(p)
    }
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key v was just written"),
        Err(_) => Value::String(raw.to_string()),
    }
}

pub fn apply_override(table: &mut Table, key: &str, raw: &str) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("malformed override key {key:?}")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override {key}: {part} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw));
    Ok(())
}
