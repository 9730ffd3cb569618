//! Run configuration: a sectioned TOML file, optionally overridden by
//! `section.key=value` assignments.
//!
//! ```toml
//! [output]
//! dir = "runs/baseline"
//!
//! [model]
//! decoder_width = 64
//!
//! [train]
//! iterations = 500
//! pyramid_weight = 0.4
//!
//! [augment]
//! crop = 128
//!
//! [sampler]
//! ratio = 2.0
//!
//! [eval]
//! strategy = "auto_void"
//!
//! [[datasets]]
//! id = "cityscapes"
//! root = "data/train"
//! split = "train"
//! group = "driving"
//!
//! [[generate]]
//! root = "data/train"
//! dataset_id = "cityscapes"
//! classes = ["road", "car", "sky"]
//! count = 20
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset_io::{AugmentParams, SyntheticSpec};
use crate::error::{Error, Result};
use crate::evaluation::EvalOptions;
use crate::labelspace::{build_default_space, Group, LabelSpace, RemapStrategy};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

/// Environment variable overriding `output.dir`.
pub const OUTPUT_ENV: &str = "LADDERSEG_OUTPUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/default") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Driving:indoor example ratio per epoch.
    pub ratio: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { ratio: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// `identity`, `auto_void` or `to_class:<class>`.
    pub strategy: String,
    pub eval_scale: f64,
    pub negative_rule: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            strategy: "auto_void".into(),
            eval_scale: 1.0,
            negative_rule: true,
        }
    }
}

impl EvalConfig {
    pub fn options(&self, space: &LabelSpace) -> Result<EvalOptions> {
        let strategy =
            RemapStrategy::parse(&self.strategy, space).map_err(|e| Error::config("eval.strategy", e.to_string()))?;
        if !(self.eval_scale > 0.0 && self.eval_scale.is_finite()) {
            return Err(Error::config("eval.eval_scale", "must be positive"));
        }
        Ok(EvalOptions {
            strategy,
            eval_scale: self.eval_scale,
            negative_rule: self.negative_rule,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub id: String,
    pub root: PathBuf,
    pub split: Split,
    /// Optional tag, checked against the label space.
    #[serde(default)]
    pub group: Option<Group>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateEntry {
    pub root: PathBuf,
    pub dataset_id: String,
    /// Class references (`name`, `group/name` or unified id).
    pub classes: Vec<String>,
    pub count: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_max_shapes")]
    pub max_shapes: usize,
    #[serde(default)]
    pub negative_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_side() -> usize {
    128
}

fn default_max_shapes() -> usize {
    4
}

impl GenerateEntry {
    pub fn spec(&self, space: &LabelSpace) -> Result<SyntheticSpec> {
        let classes = self
            .classes
            .iter()
            .map(|c| space.lookup(c))
            .collect::<Result<Vec<u8>>>()
            .map_err(|e| Error::config("generate.classes", e.to_string()))?;
        let spec = SyntheticSpec {
            dataset_id: self.dataset_id.clone(),
            classes,
            count: self.count,
            height: self.height,
            width: self.width,
            max_shapes: self.max_shapes,
            negative_fraction: self.negative_fraction,
        };
        spec.validate(space).map_err(|e| match e {
            Error::Config { field, message } => Error::config(format!("generate.{field}"), message),
            other => Error::config("generate.dataset_id", other.to_string()),
        })?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Optional label table replacing the built-in one.
    pub label_table: Option<PathBuf>,
    pub output: OutputConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentParams,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
    pub datasets: Vec<DatasetEntry>,
    pub generate: Vec<GenerateEntry>,
}

fn toml_error(source: &str, e: impl std::fmt::Display) -> Error {
    let text = e.to_string();
    Error::config(source, text.split_whitespace().collect::<Vec<_>>().join(" "))
}

/// Splits `a.b.c=value` and stores `value` (parsed as a TOML value, or as a
/// bare string when that fails) at the dotted path of `doc`.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like section.key=value"))?;
    let path = path.trim();
    let keys: Vec<&str> = path.split('.').map(str::trim).collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(path, "empty key in override"));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = keys.split_last().expect("nonempty");
    let mut table = doc;
    for k in parents {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(path, format!("`{k}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text after applying `overrides`.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| toml_error("config", e))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let config: RunConfig = RunConfig::deserialize(toml::Value::Table(doc)).map_err(|e| toml_error("config", e))?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::parse(&text, overrides)?;
        // relative paths are taken relative to the config file
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(t) = self.label_table.as_mut() {
            fix(t);
        }
        fix(&mut self.output.dir);
        for d in &mut self.datasets {
            fix(&mut d.root);
        }
        for g in &mut self.generate {
            fix(&mut g.root);
        }
    }

    /// Applies the output-root environment override, if set.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()) {
            self.output.dir = PathBuf::from(dir);
        }
    }

    /// The configuration as stored in checkpoints.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn label_space(&self) -> Result<LabelSpace> {
        match &self.label_table {
            None => Ok(build_default_space()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::config("label_table", format!("{}: {e}", p.display())))?;
                LabelSpace::parse(&text)
            }
        }
    }

    /// Checks numeric invariants and dataset references; paths are checked
    /// by [`RunConfig::check_paths`].
    pub fn validate(&self, space: &LabelSpace) -> Result<()> {
        self.model
            .validate()
            .map_err(|e| prefix("model", e))?;
        if self.model.num_classes != space.num_classes() {
            return Err(Error::config(
                "model.num_classes",
                format!("must equal the {} classes of the label space", space.num_classes()),
            ));
        }
        self.train.validate()?;
        self.augment.validate()?;
        if !self.augment.crop.is_multiple_of(crate::model::INPUT_DIVISOR) {
            return Err(Error::config(
                "augment.crop",
                format!("must be a multiple of {}", crate::model::INPUT_DIVISOR),
            ));
        }
        if !(self.sampler.ratio >= 0.0 && self.sampler.ratio.is_finite()) {
            return Err(Error::config("sampler.ratio", "must be finite and nonnegative"));
        }
        self.eval.options(space)?;
        for (i, d) in self.datasets.iter().enumerate() {
            let map = space
                .dataset(&d.id)
                .map_err(|e| Error::config(format!("datasets[{i}].id"), e.to_string()))?;
            if let Some(g) = d.group {
                if g != map.group() {
                    return Err(Error::config(
                        format!("datasets[{i}].group"),
                        format!("`{}` belongs to group {}", d.id, map.group()),
                    ));
                }
            }
        }
        for g in &self.generate {
            g.spec(space)?;
        }
        Ok(())
    }

    pub fn check_paths(&self) -> Result<()> {
        for (i, d) in self.datasets.iter().enumerate() {
            let dir = d.root.join(&d.id);
            if !dir.is_dir() {
                return Err(Error::config(
                    format!("datasets[{i}].root"),
                    format!("{} does not exist", dir.display()),
                ));
            }
        }
        Ok(())
    }

    pub fn datasets_in(&self, split: Split) -> impl Iterator<Item = &DatasetEntry> {
        self.datasets.iter().filter(move |d| d.split == split)
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::Config { field, message } => Error::config(format!("{section}.{field}"), message),
        Error::BadShape(m) | Error::ShapeMismatch(m) => Error::config(section, m),
        other => other,
    }
}
