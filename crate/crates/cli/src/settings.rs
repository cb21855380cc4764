//! Run configuration: a flat JSON file holding selection knobs plus IO
//! settings. Precedence is flag > file > built-in default.

use std::path::{Path, PathBuf};

use coreset_core::record::Format;
use coreset_core::synth::SynthSpec;
use coreset_core::SelectionConfig;
use serde_json::{Map, Value};

use crate::Failure;

/// Keys of the run file that are not selection knobs.
const IO_KEYS: &[&str] = &["input", "format", "scores", "records", "out_prefix", "output", "threads", "synth"];

#[derive(Debug, Default)]
pub struct RunFile {
    pub selection: SelectionConfig,
    pub input: Option<PathBuf>,
    pub format: Option<Format>,
    pub scores: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub out_prefix: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
    pub synth: Option<SynthSpec>,
}

fn config_err(path: &Path, msg: impl std::fmt::Display) -> Failure {
    Failure::config(format!("{}: {msg}", path.display()))
}

impl RunFile {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| config_err(path, e))?;
        let Value::Object(mut map) = value else {
            return Err(config_err(path, "expected a JSON object"));
        };
        let mut io = Map::new();
        for key in IO_KEYS {
            if let Some(v) = map.remove(*key) {
                io.insert(key.to_string(), v);
            }
        }
        let selection: SelectionConfig = serde_json::from_value(Value::Object(map)).map_err(|e| config_err(path, e))?;

        let path_of = |key: &str| -> Result<Option<PathBuf>, Failure> {
            match io.get(key) {
                None => Ok(None),
                Some(Value::String(s)) => Ok(Some(PathBuf::from(s))),
                Some(_) => Err(config_err(path, format!("`{key}` must be a string"))),
            }
        };
        let format = match io.get("format") {
            None => None,
            Some(Value::String(s)) => Some(s.parse::<Format>().map_err(|e| config_err(path, e))?),
            Some(_) => return Err(config_err(path, "`format` must be a string")),
        };
        let threads = match io.get("threads") {
            None => None,
            Some(v) => Some(
                v.as_u64()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| config_err(path, "`threads` must be a positive integer"))? as usize,
            ),
        };
        let synth = match io.get("synth") {
            None => None,
            Some(v) => Some(serde_json::from_value(v.clone()).map_err(|e| config_err(path, format!("synth: {e}")))?),
        };
        Ok(Self {
            selection,
            input: path_of("input")?,
            format,
            scores: path_of("scores")?,
            records: path_of("records")?,
            out_prefix: path_of("out_prefix")?,
            output: path_of("output")?,
            threads,
            synth,
        })
    }
}

/// Selection knobs settable from the command line.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct SelectionFlags {
    /// Absolute budget M.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Budget as a fraction of the population, used when no M is given.
    #[arg(long)]
    pub budget_fraction: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Comma-separated signature length per layer.
    #[arg(long, value_delimiter = ',')]
    pub k_per_layer: Option<Vec<usize>>,
    /// Comma-separated layer ids.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<u32>>,
    /// Allow backfilling from the whole population.
    #[arg(long)]
    pub allow_global_backfill: bool,
}

impl SelectionFlags {
    pub fn apply(&self, mut cfg: SelectionConfig) -> Result<SelectionConfig, Failure> {
        if let Some(m) = self.budget {
            cfg.budget_m = Some(m);
        }
        if let Some(f) = self.budget_fraction {
            cfg.budget_fraction = f;
            if self.budget.is_none() {
                cfg.budget_m = None;
            }
        }
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                })*
            };
        }
        set!(rho, eta, alpha, beta, tau, gamma, k_per_layer, layers);
        if self.allow_global_backfill {
            cfg.allow_global_backfill = true;
        }
        cfg.validate().map_err(Failure::from)?;
        Ok(cfg)
    }
}

pub fn pick<T>(flag: Option<T>, file: Option<T>, what: &str) -> Result<T, Failure> {
    flag.or(file)
        .ok_or_else(|| Failure::config(format!("missing {what} (pass it as a flag or in --config)")))
}
