//! Run configuration: a TOML file, overridden by command-line flags, resolved into
//! model and schedule settings and persisted next to the run's outputs.
//!
//! ```toml
//! architecture = "parallel"   # or "serial"
//! k = 64                      # required
//! features = 10
//! iterations = 6
//! seed = 0
//!
//! [net]
//! conv_layers = 2
//! filters = 100
//!
//! [schedule]
//! epochs = 30
//! [[schedule.stages]]
//! batch_size = 500
//! learning_rate = 1e-4
//!
//! [eval]
//! snr_db = [0.0, 1.0, 2.0, 3.0, 4.0]
//! ```
//!
//! Every omitted key takes its default; `config.resolved.toml` in the run
//! directory lists them all.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use turboae::blocks::InterleaveMode;
use turboae::evaluate::StopRule;
use turboae::models::{AnyModel, Architecture, NetArch, ParallelConfig, SerialConfig};
use turboae::training::TrainSchedule;

pub const OUTPUT_ROOT_ENV: &str = "TURBOAE_OUTPUT_ROOT";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

/// A problem with the configuration rather than with the run; exits with code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub snr_db: Vec<f64>,
    pub min_block_errors: u64,
    pub max_blocks: u64,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let stop = StopRule::default();
        Self {
            snr_db: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            min_block_errors: stop.min_block_errors,
            max_blocks: stop.max_blocks,
            seed: 0,
        }
    }
}

impl EvalSection {
    pub fn stop(&self) -> StopRule {
        StopRule {
            min_block_errors: self.min_block_errors,
            max_blocks: self.max_blocks,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_architecture")]
    pub architecture: Architecture,
    pub k: usize,
    /// Channel uses per block; always `2k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default = "default_features")]
    pub features: usize,
    /// Serial models only; defaults to `features`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coded_features: Option<usize>,
    #[serde(default)]
    pub binarize_symbols: bool,
    #[serde(default = "default_true")]
    pub binarize_coded: bool,
    #[serde(default)]
    pub weight_sharing: bool,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub interleaver_seed: u64,
    #[serde(default)]
    pub interleaver_mode: InterleaveMode,
    #[serde(default)]
    pub net: NetArch,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub schedule: Table,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_architecture() -> Architecture {
    Architecture::Parallel
}

fn default_features() -> usize {
    ParallelConfig::default().features
}

fn default_iterations() -> usize {
    ParallelConfig::default().iterations
}

fn default_true() -> bool {
    true
}

/// Reads a TOML file into a table; syntax errors carry the line and column.
pub fn read_table(path: &Path) -> anyhow::Result<Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| config_error(format!("{}: {e}", path.display())))
}

/// Applies `key.path=value` overrides; values parse as TOML and fall back to strings.
pub fn apply_overrides(table: &mut Table, overrides: &[String]) -> anyhow::Result<()> {
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| config_error(format!("override `{item}` is not key=value")))?;
        let value = parse_value(raw);
        set_path(table, path.trim(), value)?;
    }
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn set_path(table: &mut Table, path: &str, value: Value) -> anyhow::Result<()> {
    let mut keys: Vec<&str> = path.split('.').collect();
    let last = keys.pop().filter(|k| !k.is_empty()).ok_or_else(|| config_error("empty override key"))?;
    let mut cur = table;
    for key in keys {
        let entry = cur.entry(key.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_error(format!("`{key}` in `{path}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Later tables win key by key; nested tables merge recursively.
pub fn merge(base: &mut Table, over: Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

impl RunConfig {
    pub fn from_table(table: Table) -> anyhow::Result<Self> {
        RunConfig::deserialize(table).map_err(|e| config_error(format!("invalid config: {}", e.message())))
    }

    /// The model fields of an existing model, with everything else at its default.
    pub fn describing(model: &AnyModel) -> Table {
        let mut t = Table::new();
        let put = |t: &mut Table, k: &str, v: Value| {
            t.insert(k.into(), v);
        };
        let net = |n: &NetArch| Value::try_from(n).expect("net settings serialize");
        match model {
            AnyModel::Parallel(m) => {
                let c = m.config();
                put(&mut t, "architecture", Value::from("parallel"));
                put(&mut t, "k", Value::from(c.k as i64));
                put(&mut t, "features", Value::from(c.features as i64));
                put(&mut t, "iterations", Value::from(c.iterations as i64));
                put(&mut t, "weight_sharing", Value::from(c.weight_sharing));
                put(&mut t, "binarize_symbols", Value::from(c.binarize_symbols));
                put(&mut t, "interleaver_seed", Value::from(c.interleaver_seed as i64));
                put(&mut t, "net", net(&c.net));
            }
            AnyModel::Serial(m) => {
                let c = m.config();
                put(&mut t, "architecture", Value::from("serial"));
                put(&mut t, "k", Value::from(c.k as i64));
                put(&mut t, "features", Value::from(c.features as i64));
                put(&mut t, "coded_features", Value::from(c.coded_features as i64));
                put(&mut t, "iterations", Value::from(c.iterations as i64));
                put(&mut t, "weight_sharing", Value::from(c.weight_sharing));
                put(&mut t, "binarize_symbols", Value::from(c.binarize_symbols));
                put(&mut t, "binarize_coded", Value::from(c.binarize_coded));
                put(&mut t, "interleaver_seed", Value::from(c.interleaver_seed as i64));
                let mode = Value::try_from(c.interleaver_mode).expect("mode serializes");
                put(&mut t, "interleaver_mode", mode);
                put(&mut t, "net", net(&c.net));
            }
        }
        t
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if let Some(n) = self.n {
            if n != 2 * self.k {
                return Err(config_error(format!("n must equal 2k = {}, got {n}", 2 * self.k)));
            }
        }
        if self.architecture == Architecture::Parallel && self.coded_features.is_some() {
            return Err(config_error("coded_features applies to serial models only"));
        }
        let checked = match self.architecture {
            Architecture::Parallel => self.parallel().validate(),
            Architecture::Serial => self.serial().validate(),
        };
        checked.map_err(|e| config_error(e.to_string()))
    }

    pub fn parallel(&self) -> ParallelConfig {
        ParallelConfig {
            k: self.k,
            features: self.features,
            net: self.net,
            iterations: self.iterations,
            weight_sharing: self.weight_sharing,
            binarize_symbols: self.binarize_symbols,
            interleaver_seed: self.interleaver_seed,
        }
    }

    pub fn serial(&self) -> SerialConfig {
        SerialConfig {
            k: self.k,
            features: self.features,
            coded_features: self.coded_features.unwrap_or(self.features),
            net: self.net,
            iterations: self.iterations,
            weight_sharing: self.weight_sharing,
            binarize_coded: self.binarize_coded,
            binarize_symbols: self.binarize_symbols,
            interleaver_mode: self.interleaver_mode,
            interleaver_seed: self.interleaver_seed,
        }
    }

    /// The training schedule: `base` overlaid with the `[schedule]` table.
    pub fn schedule(&self, base: TrainSchedule) -> anyhow::Result<TrainSchedule> {
        let mut table = Table::try_from(&base)?;
        merge(&mut table, self.schedule.clone());
        let schedule = TrainSchedule::deserialize(table)
            .map_err(|e| config_error(format!("invalid [schedule]: {}", e.message())))?;
        schedule.validate().map_err(|e| config_error(e.to_string()))?;
        Ok(schedule)
    }

    /// Directory for this run: the configured one, else a name under the output root.
    pub fn output_dir(&self, command: &str) -> PathBuf {
        if let Some(dir) = &self.output_dir {
            return dir.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(format!("{command}-{}-k{}-seed{}", self.architecture, self.k, self.seed))
    }

    /// Fills every default so the file alone reproduces the run.
    pub fn resolved(&self, schedule: &TrainSchedule, output_dir: &Path) -> anyhow::Result<RunConfig> {
        let mut out = self.clone();
        out.n = Some(2 * self.k);
        if self.architecture == Architecture::Serial {
            out.coded_features = Some(self.coded_features.unwrap_or(self.features));
        }
        out.output_dir = Some(output_dir.to_path_buf());
        out.schedule = Table::try_from(schedule)?;
        Ok(out)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}
