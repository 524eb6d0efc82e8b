//! Run configuration: a TOML file, `--set key=value` overrides, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tohm::bound::suggest_c0;
use tohm::ProcessFamily;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bump,
    Nonnested,
    Breakpoint,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Detection,
    Exclusion,
    Twosided,
}

/// A number, or the string `"auto"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum C0Setting {
    Value(f64),
    Named(String),
}

impl C0Setting {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        if s == "auto" {
            return Ok(C0Setting::Named(s.into()));
        }
        s.parse()
            .map(C0Setting::Value)
            .map_err(|_| CliError::config(format!("c0: expected a number or \"auto\", got {s:?}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoPaths {
    pub data: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub ensemble: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelKind>,
    pub test: Option<TestKind>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub range: Option<(f64, f64)>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    pub c0: Option<C0Setting>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_replicates")]
    pub n_replicates: usize,
    pub n_obs: Option<usize>,
    /// Grid sizes for `upcross` and `compare`.
    pub resolutions: Option<Vec<usize>>,
    /// Thresholds for `compare` and `oracle`.
    pub thresholds: Option<Vec<f64>>,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    /// Not part of the config hash.
    #[serde(default, skip_serializing)]
    pub io: IoPaths,
}

fn default_resolution() -> usize {
    50
}

fn default_replicates() -> usize {
    200
}

fn default_paths() -> usize {
    5
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn insert_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty());
    let Some(last) = last else {
        return Err(CliError::config(format!("--set: empty key in {key:?}")));
    };
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("--set {key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads `path` (if any) and applies `key=value` overrides in order.
    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("--set expects key=value, got {s:?}")))?;
            insert_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let origin = path.map_or("config".to_string(), |p| p.display().to_string());
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let field = e.path().to_string();
            CliError::config(format!("{origin}: {field}: {}", e.inner().message()))
        })
    }

    pub fn model(&self) -> ModelKind {
        self.model.expect("model checked by finish")
    }

    pub fn test(&self) -> TestKind {
        self.test.expect("test filled by finish")
    }

    pub fn range(&self) -> (f64, f64) {
        self.range.expect("range filled by finish")
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    pub fn param_or(&self, name: &str, default: f64) -> f64 {
        self.param(name).unwrap_or(default)
    }

    pub fn need(&self, name: &str) -> Result<f64, CliError> {
        self.param(name)
            .ok_or_else(|| CliError::config(format!("params.{name} is required for model {:?}", self.model())))
    }

    /// Fills model-dependent defaults and checks field combinations.
    pub fn finish(&mut self) -> Result<(), CliError> {
        let model = self
            .model
            .ok_or_else(|| CliError::config("model: missing (bump, nonnested, breakpoint or synthetic)"))?;
        let test = *self.test.get_or_insert(match model {
            ModelKind::Breakpoint => TestKind::Twosided,
            _ => TestKind::Detection,
        });
        let allowed: &[TestKind] = match model {
            ModelKind::Bump => &[TestKind::Detection],
            ModelKind::Nonnested => &[TestKind::Detection, TestKind::Exclusion],
            ModelKind::Breakpoint => &[TestKind::Twosided],
            ModelKind::Synthetic => &[TestKind::Detection, TestKind::Twosided],
        };
        if !allowed.contains(&test) {
            return Err(CliError::config(format!("test: {test:?} is not available for model {model:?}")));
        }
        let range = *self.range.get_or_insert(match (model, test) {
            (ModelKind::Bump, _) => (1.0, 35.0),
            (ModelKind::Nonnested, TestKind::Exclusion) => (0.2, 3.0),
            (ModelKind::Nonnested, _) => (1.0, 100.0),
            (ModelKind::Breakpoint, _) => (20.0, 44.0),
            (ModelKind::Synthetic, _) => (0.0, 1.0),
        });
        if !(range.0.is_finite() && range.1.is_finite() && range.0 < range.1) {
            return Err(CliError::config(format!("range: need lower < upper, got [{}, {}]", range.0, range.1)));
        }
        if self.resolution < 2 {
            return Err(CliError::config("resolution: must be >= 2"));
        }
        if self.n_replicates < 2 {
            return Err(CliError::config("n_replicates: must be >= 2"));
        }
        if self.n_obs == Some(0) {
            return Err(CliError::config("n_obs: must be >= 1"));
        }
        if self.n_paths == 0 {
            return Err(CliError::config("n_paths: must be >= 1"));
        }
        if let Some(C0Setting::Named(s)) = &self.c0 {
            if s != "auto" {
                return Err(CliError::config(format!("c0: expected a number or \"auto\", got {s:?}")));
            }
        }
        if let Some(dof) = self.param("dof") {
            if !(dof >= 1.0 && dof.fract() == 0.0 && dof <= 1000.0) {
                return Err(CliError::config(format!("params.dof: must be a positive integer, got {dof}")));
            }
        }
        if self.c0.is_none() {
            self.c0 = Some(match (model, self.family()) {
                (ModelKind::Synthetic, ProcessFamily::ChiSquare { s }) if s > 1 => C0Setting::Named("auto".into()),
                (ModelKind::Synthetic, ProcessFamily::ChiSquare { .. }) => C0Setting::Value(1.0),
                (ModelKind::Bump | ModelKind::Nonnested, _) => C0Setting::Value(0.1),
                _ => C0Setting::Value(0.0),
            });
        }
        if self.resolutions.is_none() {
            self.resolutions = Some(vec![15, 30, 50, 100, 200, 500]);
        }
        if self.thresholds.is_none() {
            let top = if self.family().is_gaussian() { 12 } else { 36 };
            let step = if self.family().is_gaussian() { 0.5 } else { 1.0 };
            self.thresholds = Some((1..=top).map(|k| k as f64 * step).collect());
        }
        Ok(())
    }

    pub fn family(&self) -> ProcessFamily {
        match (self.model(), self.test()) {
            (ModelKind::Breakpoint, _) | (ModelKind::Synthetic, TestKind::Twosided) => ProcessFamily::GaussianTwoSided,
            (ModelKind::Synthetic, _) => ProcessFamily::ChiSquare {
                s: self.param_or("dof", 1.0) as u32,
            },
            _ => ProcessFamily::ChiBar01,
        }
    }

    /// c0 as a number; "auto" needs a family with an interior maximum of a(c).
    pub fn c0_value(&self) -> Result<f64, CliError> {
        match self.c0.as_ref().expect("c0 filled by finish") {
            C0Setting::Value(v) => Ok(*v),
            C0Setting::Named(_) => suggest_c0(self.family()).ok_or_else(|| {
                CliError::config(format!(
                    "c0 = \"auto\" has no closed form for the {} family; run `tohm sensitivity` and set c0 explicitly",
                    self.family()
                ))
            }),
        }
    }

    /// SHA-256 of the canonical JSON form, excluding io paths.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
