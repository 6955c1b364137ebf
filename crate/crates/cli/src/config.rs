//! Run configuration: built-in defaults, then an optional TOML file, then
//! command-line overrides. Every leaf key remembers where its value came from.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use vdgns::mpm::{MaterialKind, SimConfig};
use vdgns::train::TrainConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub classes: Vec<MaterialKind>,
    pub per_class: usize,
    /// Generate the sand friction sweep instead of the class dataset.
    pub sweep: bool,
    /// Render one clip per trajectory after simulation.
    pub render: bool,
    /// Directory of PPM backgrounds; the built-in set when unset.
    pub backgrounds: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            classes: MaterialKind::ALL.to_vec(),
            per_class: vdgns::dataset::TRAJECTORIES_PER_CLASS,
            sweep: false,
            render: true,
            backgrounds: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seed: u64,
    pub window_n: usize,
    pub step_stride: usize,
    pub rollout_start: usize,
    pub rollout_steps: usize,
    /// Probe states for the interpolation analysis.
    pub probe_states: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seed: 0,
            window_n: 20,
            step_stride: 1,
            rollout_start: vdgns::eval::ROLLOUT_START,
            rollout_steps: vdgns::eval::DEFAULT_ROLLOUT_STEPS,
            probe_states: 16,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Default,
    File,
    Cli,
    Checkpoint,
}

#[derive(Clone, Debug, Serialize)]
pub struct Resolved {
    pub config: RunConfig,
    /// Dotted key to the layer that set it.
    pub provenance: BTreeMap<String, Source>,
}

fn leaves(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaves(&key, child, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

/// Replaces the leaf at `key`, rejecting keys the defaults do not have.
fn set_leaf(root: &mut Value, key: &str, value: Value, layer: &str) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("{layer}: `{}` is not a table", parts[..i].join("."))))?;
        if !obj.contains_key(*part) {
            return Err(CliError::Usage(format!("{layer}: unknown configuration key `{key}`")));
        }
        node = obj.get_mut(*part).expect("checked");
    }
    *node = value;
    Ok(())
}

/// Parses `key=value`; the value is read as a TOML literal, or as a bare
/// string when it is not one.
pub fn parse_override(s: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{s}` is not of the form key=value")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("parsed key")).map_err(|e| CliError::Usage(e.to_string()))?,
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((key.trim().to_string(), value))
}

pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Resolved, CliError> {
    let mut merged = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    let mut provenance = BTreeMap::new();
    let mut default_leaves = Vec::new();
    leaves("", &merged, &mut default_leaves);
    for (k, _) in default_leaves {
        provenance.insert(k, Source::Default);
    }

    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let value = serde_json::to_value(table).map_err(|e| CliError::Usage(e.to_string()))?;
        let mut file_leaves = Vec::new();
        leaves("", &value, &mut file_leaves);
        let layer = format!("config {}", path.display());
        for (k, v) in file_leaves {
            set_leaf(&mut merged, &k, v, &layer)?;
            provenance.insert(k, Source::File);
        }
    }
    for (k, v) in overrides {
        set_leaf(&mut merged, k, v.clone(), "command line")?;
        provenance.insert(k.clone(), Source::Cli);
    }

    let config: RunConfig = serde_json::from_value(merged).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
    config.sim.validate()?;
    config.train.validate()?;
    if config.eval.window_n == 0 || config.eval.step_stride == 0 {
        return Err(CliError::Usage("eval.window_n and eval.step_stride must be positive".into()));
    }
    Ok(Resolved { config, provenance })
}

impl Resolved {
    /// Marks every `train.*` key as coming from a checkpoint.
    pub fn adopt_train(&mut self, train: TrainConfig) {
        self.config.train = train;
        for (k, src) in self.provenance.iter_mut() {
            if k.starts_with("train.") {
                *src = Source::Checkpoint;
            }
        }
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("config".into(), serde_json::to_value(&self.config).expect("config serializes"));
        m.insert("provenance".into(), serde_json::to_value(&self.provenance).expect("provenance serializes"));
        Value::Object(m)
    }
}
