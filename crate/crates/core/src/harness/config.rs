use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selfpaced::{AgePolicy, RegularizerKind};
use crate::stream::{StreamSource, StreamSpec};
use crate::trainer::{Hyper, Method};

/// Environment variable naming the directory that relative data paths are
/// resolved against.
pub const DATA_DIR_ENV: &str = "SPWC_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    Finetune,
    Joint,
    Ewc,
    OnlineEwc,
    Mas,
    SpEwc,
    SpMas,
}

/// One method entry of a config. Grids given here replace the top-level
/// ones for this method only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: MethodTag,
    /// Name in the outputs; defaults to the method tag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_policy: Option<AgePolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularizer: Option<RegularizerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
}

impl MethodSpec {
    pub fn new(method: MethodTag) -> Self {
        MethodSpec {
            method,
            label: None,
            lr: None,
            lambda: None,
            gamma: None,
            mu_policy: None,
            regularizer: None,
            decay: None,
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| {
            serde_json::to_value(self.method)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default()
        })
    }
}

fn default_batch_size() -> usize {
    128
}

fn default_momentum() -> f64 {
    0.9
}

fn default_importance_samples() -> usize {
    1000
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stream: StreamSpec,
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_importance_samples")]
    pub importance_samples: usize,
    pub lr: Vec<f64>,
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub mu_policy: AgePolicy,
    #[serde(default)]
    pub regularizer: RegularizerKind,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// One training run of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub label: String,
    pub method: Method,
    pub hyper: Hyper,
    /// λ or γ; 0 for methods without a penalty.
    pub strength: f64,
    pub seed: u64,
}

impl RunSpec {
    /// Stable file-name stem.
    pub fn id(&self) -> String {
        format!(
            "{}_lr{:e}_s{:e}_seed{}",
            self.label, self.hyper.lr, self.strength, self.seed
        )
    }
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn check_grid(path: &str, grid: &[f64], positive: bool) -> Result<()> {
    if grid.is_empty() {
        return Err(config_err(path, "grid is empty"));
    }
    for (i, &x) in grid.iter().enumerate() {
        let ok = x.is_finite() && if positive { x > 0.0 } else { x >= 0.0 };
        if !ok {
            let need = if positive { "positive" } else { "nonnegative" };
            return Err(config_err(format!("{path}[{i}]"), format!("{x} is not {need}")));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses JSON, reporting the field path of the first error.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    fn lr_grid<'a>(&'a self, m: &'a MethodSpec) -> &'a [f64] {
        m.lr.as_deref().unwrap_or(&self.lr)
    }

    fn strength_grid(&self, m: &MethodSpec) -> (&'static str, Vec<f64>) {
        match m.method {
            MethodTag::Finetune | MethodTag::Joint => ("", vec![0.0]),
            MethodTag::Ewc | MethodTag::OnlineEwc | MethodTag::SpEwc => {
                ("lambda", m.lambda.clone().unwrap_or_else(|| self.lambda.clone()))
            }
            MethodTag::Mas | MethodTag::SpMas => {
                ("gamma", m.gamma.clone().unwrap_or_else(|| self.gamma.clone()))
            }
        }
    }

    /// Checks every field; errors name the offending field path.
    pub fn validate(&self) -> Result<()> {
        self.stream
            .validate()
            .map_err(|e| config_err("stream", e.to_string()))?;
        if self.methods.is_empty() {
            return Err(config_err("methods", "no methods given"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "no seeds given"));
        }
        let unique: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if unique.len() != self.seeds.len() {
            return Err(config_err("seeds", "duplicate seed"));
        }
        check_grid("lr", &self.lr, true)?;
        self.base_hyper(self.lr[0])
            .validate()
            .map_err(|e| config_err("hyper", e.to_string()))?;
        self.mu_policy
            .validate()
            .map_err(|e| config_err("mu_policy", e.to_string()))?;
        let mut labels = BTreeSet::new();
        for (i, m) in self.methods.iter().enumerate() {
            let at = |field: &str| format!("methods[{i}].{field}");
            if !labels.insert(m.label()) {
                return Err(config_err(at("label"), format!("duplicate label `{}`", m.label())));
            }
            if m.label().is_empty() || m.label().contains(['/', '\\', ',', '\n']) {
                return Err(config_err(at("label"), "labels must be nonempty file-name-safe text"));
            }
            check_grid(&at("lr"), self.lr_grid(m), true)?;
            let (name, grid) = self.strength_grid(m);
            if !name.is_empty() {
                let field = if m.lambda.is_some() || m.gamma.is_some() {
                    at(name)
                } else {
                    name.to_string()
                };
                check_grid(&field, &grid, false)?;
            }
            let sp = matches!(m.method, MethodTag::SpEwc | MethodTag::SpMas);
            if !sp && (m.mu_policy.is_some() || m.regularizer.is_some()) {
                return Err(config_err(at("mu_policy"), "only sp_ewc and sp_mas take a policy"));
            }
            if m.decay.is_some() && m.method != MethodTag::OnlineEwc {
                return Err(config_err(at("decay"), "only online_ewc takes a decay"));
            }
            for (j, method) in self.methods_for(m).into_iter().enumerate() {
                method
                    .validate()
                    .map_err(|e| config_err(format!("methods[{i}] grid point {j}"), e.to_string()))?;
            }
        }
        Ok(())
    }

    fn base_hyper(&self, lr: f64) -> Hyper {
        Hyper {
            hidden: self.hidden.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr,
            momentum: self.momentum,
            importance_samples: self.importance_samples,
        }
    }

    fn methods_for(&self, m: &MethodSpec) -> Vec<Method> {
        let policy = m.mu_policy.unwrap_or(self.mu_policy);
        let kind = m.regularizer.unwrap_or(self.regularizer);
        let (_, grid) = self.strength_grid(m);
        grid.into_iter()
            .map(|s| match m.method {
                MethodTag::Finetune => Method::Finetune,
                MethodTag::Joint => Method::Joint,
                MethodTag::Ewc => Method::Ewc { lambda: s },
                MethodTag::OnlineEwc => Method::OnlineEwc {
                    lambda: s,
                    decay: m.decay.unwrap_or(1.0),
                },
                MethodTag::Mas => Method::Mas { gamma: s },
                MethodTag::SpEwc => Method::SpEwc {
                    lambda: s,
                    kind,
                    policy,
                },
                MethodTag::SpMas => Method::SpMas {
                    gamma: s,
                    kind,
                    policy,
                },
            })
            .collect()
    }

    /// Every (method, lr, strength, seed) combination, sorted by label,
    /// lr, strength and seed.
    pub fn runs(&self) -> Vec<RunSpec> {
        let mut runs = Vec::new();
        for m in &self.methods {
            for &lr in self.lr_grid(m) {
                for method in self.methods_for(m) {
                    for &seed in &self.seeds {
                        runs.push(RunSpec {
                            label: m.label(),
                            method,
                            hyper: self.base_hyper(lr),
                            strength: method.strength(),
                            seed,
                        });
                    }
                }
            }
        }
        runs.sort_by(|a, b| {
            a.label
                .cmp(&b.label)
                .then(a.hyper.lr.total_cmp(&b.hyper.lr))
                .then(a.strength.total_cmp(&b.strength))
                .then(a.seed.cmp(&b.seed))
        });
        runs
    }

    /// Makes data paths absolute: relative ones are joined to `data_dir`
    /// when given, else to the current directory.
    pub fn resolve_paths(&mut self, data_dir: Option<&Path>) -> Result<()> {
        let cwd = std::env::current_dir()?;
        let base = data_dir.map_or(cwd.clone(), |d| cwd.join(d));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.stream.source {
            StreamSource::Permuted { images, labels } | StreamSource::Split { images, labels, .. } => {
                fix(images);
                fix(labels);
            }
            StreamSource::Synthetic { .. } => {}
        }
        if self.output_dir.is_relative() {
            self.output_dir = cwd.join(&self.output_dir);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "stream": {"source": {"type": "synthetic", "classes": 3, "dim": 4},
                   "tasks": 2, "train": 30, "valid": 6, "test": 12, "eval_subset": 6, "seed": 1},
        "methods": [{"method": "finetune"}, {"method": "sp_ewc", "lambda": [1, 10]}],
        "seeds": [0, 1],
        "hidden": [8],
        "epochs": 2,
        "lr": [0.1, 0.01],
        "lambda": [5]
    }"#;

    #[test]
    fn parses_and_expands() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.batch_size, 128);
        let runs = cfg.runs();
        // finetune: 2 lr × 2 seeds; sp_ewc: 2 lr × 2 λ × 2 seeds
        assert_eq!(runs.len(), 4 + 8);
        assert_eq!(runs[0].label, "finetune");
        assert_eq!(runs[0].hyper.lr, 0.01);
        assert!(runs.iter().filter(|r| r.label == "sp_ewc").all(|r| r.strength != 5.0));
    }

    #[test]
    fn unknown_key_names_its_path() {
        let text = MINIMAL.replace(r#""dim": 4"#, r#""dim": 4, "dims": 5"#);
        match ExperimentConfig::from_json(&text).unwrap_err() {
            Error::Config { path, message } => {
                assert_eq!(path, "stream.source");
                assert!(message.contains("dims"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn wrong_type_names_its_path() {
        let text = MINIMAL.replace(r#""lambda": [1, 10]"#, r#""lambda": ["x"]"#);
        match ExperimentConfig::from_json(&text).unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "methods[1].lambda[0]"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn validation_paths() {
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.methods[1].lambda = Some(vec![]);
        match cfg.validate().unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "methods[1].lambda"),
            e => panic!("unexpected {e}"),
        }
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.lr = vec![0.1, -1.0];
        match cfg.validate().unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "lr[1]"),
            e => panic!("unexpected {e}"),
        }
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.methods[0].mu_policy = Some(AgePolicy::TopK(1));
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.methods.push(MethodSpec::new(MethodTag::Finetune));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn resolves_relative_data_paths() {
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.stream.source = StreamSource::Permuted {
            images: "img.gz".into(),
            labels: "/abs/lab.gz".into(),
        };
        cfg.resolve_paths(Some(Path::new("/data"))).unwrap();
        match &cfg.stream.source {
            StreamSource::Permuted { images, labels } => {
                assert_eq!(images, Path::new("/data/img.gz"));
                assert_eq!(labels, Path::new("/abs/lab.gz"));
            }
            _ => unreachable!(),
        }
        assert!(cfg.output_dir.is_absolute());
    }
}
