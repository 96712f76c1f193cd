//! Experiment configuration: defaults, key=value config files, and CLI-style
//! overrides. Every run embeds its effective config verbatim in the report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Delala,
    Multimetric,
    Lapoleaf,
    RandomBaseline,
}

impl Pipeline {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "delala" => Ok(Pipeline::Delala),
            "multimetric" => Ok(Pipeline::Multimetric),
            "lapoleaf" => Ok(Pipeline::Lapoleaf),
            "random-baseline" => Ok(Pipeline::RandomBaseline),
            other => Err(Error::Config(format!(
                "unknown pipeline {other:?}; expected delala|multimetric|lapoleaf|random-baseline"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::Delala => "delala",
            Pipeline::Multimetric => "multimetric",
            Pipeline::Lapoleaf => "lapoleaf",
            Pipeline::RandomBaseline => "random-baseline",
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Pipeline::Delala | Pipeline::Multimetric)
    }
}

/// All tunables of every stage. `None` fields fall back to data-derived
/// defaults at run time (recorded in the report).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub pipeline: Pipeline,
    /// Z-score features before distance computation.
    pub normalize: bool,
    /// Density bandwidth σ; default: 2% percentile of off-diagonal distances.
    pub sigma: Option<f64>,
    /// Kernel bandwidth σ̃; default: median off-diagonal distance.
    pub sigma_tilde: Option<f64>,
    /// Continuous-XOR weight between typicalness and divergence.
    pub w: f64,
    /// Per-class quota, also the KLMCA target-neighbor count.
    pub k: usize,
    /// Labeling budget; default: k·C (the minimum feasible).
    pub l: Option<usize>,
    /// Projected dimension; default: min(C+2, l−1).
    pub p: Option<usize>,
    /// Push-loss weight.
    pub c: f64,
    /// Learning rate.
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Class-count threshold for multi-metric recursion.
    pub c_tilde: usize,
    pub alpha_lodog: f64,
    /// LoDOG candidate cap; default: min(n, 4·⌈√n⌉).
    pub n_max: Option<usize>,
    /// Weight α used when reporting the selection objective J(L); defaults to w.
    pub alpha_select: Option<f64>,
    /// Used only by random pipelines and the degenerate KPCA fallback.
    pub seed: u64,
    pub repeats: usize,
    /// Strip wall-clock timings from reports for byte-stable output.
    pub canonical: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: PathBuf::new(),
            pipeline: Pipeline::Delala,
            normalize: true,
            sigma: None,
            sigma_tilde: None,
            w: 0.5,
            k: 3,
            l: None,
            p: None,
            c: 1.0,
            lambda: 1e-3,
            max_iters: 100,
            tol: 1e-7,
            c_tilde: 5,
            alpha_lodog: 0.5,
            n_max: None,
            alpha_select: None,
            seed: 42,
            repeats: 1,
            canonical: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::Config("no dataset path given".into()));
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::Config(format!("w must lie in [0,1], got {}", self.w)));
        }
        if !(self.alpha_lodog > 0.0 && self.alpha_lodog < 1.0) {
            return Err(Error::Config(format!(
                "alpha_lodog must lie strictly inside (0,1), got {}",
                self.alpha_lodog
            )));
        }
        if self.k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0) {
                return Err(Error::Config(format!("sigma must be positive, got {s}")));
            }
        }
        if let Some(s) = self.sigma_tilde {
            if !(s > 0.0) {
                return Err(Error::Config(format!("sigma_tilde must be positive, got {s}")));
            }
        }
        if !(self.c > 0.0) {
            return Err(Error::Config(format!("c must be positive, got {}", self.c)));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.repeats < 1 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if let Some(p) = self.p {
            if p < 1 {
                return Err(Error::Config("p must be at least 1".into()));
            }
        }
        if let Some(l) = self.l {
            if l < 1 {
                return Err(Error::Config("l must be at least 1".into()));
            }
        }
        Ok(())
    }

    /// Apply one `key=value` assignment (config-file line or CLI override).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid value {value:?} for {what}"));
        match key {
            "dataset" => self.dataset = PathBuf::from(value),
            "pipeline" => self.pipeline = Pipeline::parse(value)?,
            "normalize" => {
                self.normalize = value.parse().map_err(|_| bad("normalize (true|false)"))?
            }
            "sigma" => self.sigma = Some(value.parse().map_err(|_| bad("sigma"))?),
            "sigma_tilde" => self.sigma_tilde = Some(value.parse().map_err(|_| bad("sigma_tilde"))?),
            "w" => self.w = value.parse().map_err(|_| bad("w"))?,
            "k" => self.k = value.parse().map_err(|_| bad("k"))?,
            "l" => self.l = Some(value.parse().map_err(|_| bad("l"))?),
            "p" => self.p = Some(value.parse().map_err(|_| bad("p"))?),
            "c" => self.c = value.parse().map_err(|_| bad("c"))?,
            "lambda" => self.lambda = value.parse().map_err(|_| bad("lambda"))?,
            "max_iters" => self.max_iters = value.parse().map_err(|_| bad("max_iters"))?,
            "tol" => self.tol = value.parse().map_err(|_| bad("tol"))?,
            "c_tilde" => self.c_tilde = value.parse().map_err(|_| bad("c_tilde"))?,
            "alpha_lodog" => self.alpha_lodog = value.parse().map_err(|_| bad("alpha_lodog"))?,
            "n_max" => self.n_max = Some(value.parse().map_err(|_| bad("n_max"))?),
            "alpha_select" => {
                self.alpha_select = Some(value.parse().map_err(|_| bad("alpha_select"))?)
            }
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "repeats" => self.repeats = value.parse().map_err(|_| bad("repeats"))?,
            "canonical" => {
                self.canonical = value.parse().map_err(|_| bad("canonical (true|false)"))?
            }
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parse a config file of `key=value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key=value", path.display(), no + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Stable key=value map of the effective config, embedded in reports.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("dataset", self.dataset.display().to_string());
        put("pipeline", self.pipeline.name().to_string());
        put("normalize", self.normalize.to_string());
        put("sigma", self.sigma.map_or("auto".into(), |v| v.to_string()));
        put("sigma_tilde", self.sigma_tilde.map_or("auto".into(), |v| v.to_string()));
        put("w", self.w.to_string());
        put("k", self.k.to_string());
        put("l", self.l.map_or("auto".into(), |v| v.to_string()));
        put("p", self.p.map_or("auto".into(), |v| v.to_string()));
        put("c", self.c.to_string());
        put("lambda", self.lambda.to_string());
        put("max_iters", self.max_iters.to_string());
        put("tol", self.tol.to_string());
        put("c_tilde", self.c_tilde.to_string());
        put("alpha_lodog", self.alpha_lodog.to_string());
        put("n_max", self.n_max.map_or("auto".into(), |v| v.to_string()));
        put("alpha_select", self.alpha_select.map_or("auto".into(), |v| v.to_string()));
        put("seed", self.seed.to_string());
        put("repeats", self.repeats.to_string());
        put("canonical", self.canonical.to_string());
        m
    }
}
