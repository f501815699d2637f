//! Resolved run configuration.
//!
//! A configuration is built in layers: built-in defaults, then an optional
//! named preset, then an optional config file, then command-line flags.
//! Config files are either flat `key = value` text (`#` starts a comment)
//! or a JSON object; keys are the field names of [`RunConfig`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::CliError;
use crate::data::{CoefficientDist, SynthConfig};
use crate::model::{DistHyperparams, Hyperparams, StepMode, StepSizes, UpdateForm};

const PRESETS: &[(&str, &str)] = &[
    ("yaleb", include_str!("../../presets/yaleb.conf")),
    ("ar", include_str!("../../presets/ar.conf")),
    ("caltech101", include_str!("../../presets/caltech101.conf")),
    ("scene15", include_str!("../../presets/scene15.conf")),
    ("caltech256-dist", include_str!("../../presets/caltech256-dist.conf")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormSetting {
    Consistent,
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub x: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub test_x: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub model_in: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
    pub out_dir: PathBuf,

    /// Dictionary size r; defaults to the feature dimension.
    pub atoms: Option<usize>,
    /// Rows s of the structure target; defaults to the sample count.
    pub structure_rows: Option<usize>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub mu: Option<f64>,
    /// `auto` or three comma-separated step sizes `eta_u,eta_q,eta_w`.
    pub eta: String,
    pub margin: f64,
    pub iters: usize,
    pub tol: f64,
    pub form: FormSetting,

    pub clusters: usize,
    pub xi1: f64,
    pub xi2: f64,
    pub xi3: f64,
    pub growth_rho: f64,
    /// Cap on the annealed μ; defaults to ten times its initial value.
    pub mu_max: Option<f64>,
    pub xi_max: f64,
    pub threads: usize,

    pub seed: u64,
    pub normalize: bool,
    pub projection_dim: Option<usize>,
    pub save_state: bool,

    pub classes: usize,
    pub subspace_dim: usize,
    pub ambient_dim: usize,
    pub per_class: usize,
    pub noise: f64,
    pub coefficients: CoefficientDist,

    /// `key=v1,v2;key2=w1,w2` search grid for cross-validation.
    pub grid: Option<String>,
    pub cv_folds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = Hyperparams::default();
        let d = DistHyperparams::default();
        let s = SynthConfig::default();
        RunConfig {
            x: None,
            labels: None,
            test_x: None,
            test_labels: None,
            model_in: None,
            model_out: None,
            out_dir: PathBuf::from("out"),
            atoms: None,
            structure_rows: None,
            lambda1: h.lambda1,
            lambda2: h.lambda2,
            rho1: h.rho1,
            rho2: h.rho2,
            delta1: h.delta1,
            delta2: h.delta2,
            mu: None,
            eta: "auto".into(),
            margin: 0.1,
            iters: h.max_iter,
            tol: h.tol,
            form: FormSetting::Consistent,
            clusters: d.n_clusters,
            xi1: d.xi1,
            xi2: d.xi2,
            xi3: d.xi3,
            growth_rho: d.growth_rho,
            mu_max: None,
            xi_max: d.xi1_max,
            threads: 0,
            seed: s.seed,
            normalize: false,
            projection_dim: None,
            save_state: false,
            classes: s.classes,
            subspace_dim: s.subspace_dim,
            ambient_dim: s.ambient_dim,
            per_class: s.n_per_class,
            noise: s.noise_sigma,
            coefficients: s.coefficients,
            grid: None,
            cv_folds: 5,
        }
    }
}

fn scalar(text: &str) -> Value {
    let t = text.trim();
    let unquoted = t
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .map(str::to_string);
    if let Some(s) = unquoted {
        return Value::String(s);
    }
    match t {
        "true" => return Value::Bool(true),
        "false" => return Value::Bool(false),
        "null" | "none" => return Value::Null,
        _ => {}
    }
    if let Ok(v) = t.parse::<u64>() {
        return Value::from(v);
    }
    if let Ok(v) = t.parse::<i64>() {
        return Value::from(v);
    }
    if let Ok(v) = t.parse::<f64>() {
        if let Some(n) = serde_json::Number::from_f64(v) {
            return Value::Number(n);
        }
    }
    Value::String(t.to_string())
}

fn canonical_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

/// Parses flat `key = value` text into ordered pairs.
pub fn parse_flat(text: &str, origin: &str) -> Result<Vec<(String, Value)>, CliError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("{origin}:{}: expected `key = value`", i + 1))
        })?;
        pairs.push((canonical_key(k), scalar(v)));
    }
    Ok(pairs)
}

/// Parses a config file: JSON if it starts with `{`, flat text otherwise.
pub fn parse_config_text(text: &str, origin: &str) -> Result<Vec<(String, Value)>, CliError> {
    if text.trim_start().starts_with('{') {
        let obj: Map<String, Value> = serde_json::from_str(text)
            .map_err(|e| CliError::Usage(format!("{origin}: invalid JSON config: {e}")))?;
        Ok(obj.into_iter().map(|(k, v)| (canonical_key(&k), v)).collect())
    } else {
        parse_flat(text, origin)
    }
}

pub fn read_config_file(path: &Path) -> Result<Vec<(String, Value)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::SadlError::io(path, e))?;
    parse_config_text(&text, &path.display().to_string())
}

impl RunConfig {
    /// Applies `pairs` on top of `self`; later pairs win.
    pub fn merged(
        &self,
        pairs: impl IntoIterator<Item = (String, Value)>,
        origin: &str,
    ) -> Result<RunConfig, CliError> {
        let mut map = match serde_json::to_value(self).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("config is a struct"),
        };
        for (k, v) in pairs {
            if !map.contains_key(&k) {
                return Err(CliError::Usage(format!("{origin}: unknown config key `{k}`")));
            }
            map.insert(k, v);
        }
        serde_json::from_value(Value::Object(map))
            .map_err(|e| CliError::Usage(format!("{origin}: {e}")))
    }

    /// Flat `key = value` dump, one line per key in alphabetical order.
    /// Reading it back yields the same configuration.
    pub fn to_flat(&self) -> String {
        let map = match serde_json::to_value(self).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("config is a struct"),
        };
        let mut keys: Vec<&String> = map.keys().collect();
        keys.sort();
        let mut out = String::new();
        for k in keys {
            let v = match &map[k] {
                Value::String(s) => format!("\"{s}\""),
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn steps(&self) -> Result<StepMode, CliError> {
        if self.eta.trim() == "auto" {
            return Ok(StepMode::Auto { margin: self.margin });
        }
        let parts: Vec<&str> = self.eta.split(',').map(str::trim).collect();
        let parsed: Option<Vec<f64>> = parts.iter().map(|p| p.parse().ok()).collect();
        match parsed.as_deref() {
            Some([u, q, w]) => Ok(StepMode::Fixed(StepSizes::new(*u, *q, *w)?)),
            _ => Err(CliError::Usage(format!(
                "--eta must be `auto` or `eta_u,eta_q,eta_w`, got {:?}",
                self.eta
            ))),
        }
    }

    pub fn hyperparams(&self) -> Result<Hyperparams, CliError> {
        let h = Hyperparams {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            rho1: self.rho1,
            rho2: self.rho2,
            delta1: self.delta1,
            delta2: self.delta2,
            mu: self.mu,
            steps: self.steps()?,
            max_iter: self.iters,
            tol: self.tol,
            form: match self.form {
                FormSetting::Consistent => UpdateForm::Consistent,
                FormSetting::Literal => UpdateForm::Literal,
            },
        };
        h.validate()?;
        Ok(h)
    }

    pub fn dist_hyperparams(&self) -> Result<DistHyperparams, CliError> {
        let base = self.hyperparams()?;
        let d = DistHyperparams {
            base,
            n_clusters: self.clusters,
            xi1: self.xi1,
            xi2: self.xi2,
            xi3: self.xi3,
            growth_rho: self.growth_rho,
            mu_max: self.mu_max.unwrap_or(10.0 * base.mu()),
            xi1_max: self.xi_max,
            xi2_max: self.xi_max,
            xi3_max: self.xi_max,
            seed: self.seed,
            threads: self.threads,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            classes: self.classes,
            subspace_dim: self.subspace_dim,
            ambient_dim: self.ambient_dim,
            n_per_class: self.per_class,
            noise_sigma: self.noise,
            coefficients: self.coefficients,
            seed: self.seed,
        }
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
        value
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("missing required --{flag}")))
    }
}

/// One candidate per point of the cartesian product of a search grid.
pub fn expand_grid(spec: &str) -> Result<Vec<Vec<(String, Value)>>, CliError> {
    let mut axes: Vec<(String, Vec<Value>)> = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, vs) = part
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("grid entry {part:?} is not `key=v1,v2`")))?;
        let values: Vec<Value> = vs.split(',').map(scalar).collect();
        axes.push((canonical_key(k), values));
    }
    if axes.is_empty() {
        return Err(CliError::Usage("empty search grid".into()));
    }
    let mut out: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for (key, values) in &axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    Ok(out)
}
