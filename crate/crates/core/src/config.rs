//! Flat `key = value` run configuration.
//!
//! Every key has a default (see [`KEYS`]); unknown keys are rejected. Lines
//! starting with `#` are comments. List values are comma-separated.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{self, Dataset, InputFormat};
use crate::engine::{EngineConfig, RestartPolicy};
use crate::error::{Error, Result};
use crate::evalkit::SplitSpec;
use crate::predictor::PredictorConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    FutureItem,
    NextInteraction,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::FutureItem => "future-item",
            Task::NextInteraction => "next-interaction",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "future-item" => Ok(Task::FutureItem),
            "next-interaction" => Ok(Task::NextInteraction),
            other => Err(Error::config(
                "task",
                format!("unknown task `{other}` (expected future-item or next-interaction)"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    None,
    Monitor,
    Time,
    Count,
}

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("task", "next-interaction", "future-item | next-interaction"),
    ("dataset", "", "path to the event data"),
    ("dataset_format", "canonical", "canonical | generic | movielens-100k | movielens-1m | recbole | jodie"),
    ("min_item_count", "0", "drop items with fewer interactions"),
    ("use_attrs", "true", "use user/item attributes when present"),
    ("shift_time", "true", "subtract the first timestamp so the stream starts at 0"),
    ("alpha", "0.0", "degree-normalisation exponent"),
    ("gamma", "0.5", "frequency exponent in (0, 0.5]"),
    ("k1", "64", "rank budget of the user-item matrix"),
    ("k2", "0", "rank budget of the user-attribute matrix"),
    ("k3", "0", "rank budget of the item-attribute matrix"),
    ("k4", "0", "rank budget of the user_attribute-item matrix"),
    ("k5", "0", "rank budget of the user-item_attribute matrix"),
    ("k6", "0", "rank budget of the attribute-attribute matrix"),
    ("path_weights", "1,0,0", "weights of the three concatenated paths"),
    ("beta", "0.0", "decay strength of the first stage (0 disables decay)"),
    ("degree_floor", "1.0", "lower clamp on degrees"),
    ("restart_policy", "none", "none | monitor | time | count"),
    ("restart_threshold", "0", "distance, seconds or event count for the restart policy"),
    ("online", "true", "apply rank-1 updates between restarts"),
    ("a", "1", "snapshots in the long-term preference"),
    ("b", "0", "recent items in the short-term preference"),
    ("lambda", "0.0", "weight of the short-term preference"),
    ("train_frac", "0.8", "training share of interactions"),
    ("valid_frac", "0.1", "validation share of interactions"),
    ("test_frac", "0.1", "test share of interactions"),
    ("top_k", "10", "cutoff K of Recall@K / Hit@K"),
    ("exclude_seen", "auto", "auto | true | false; auto excludes seen items only for future-item"),
    ("clamp_out_of_order", "false", "clamp out-of-order timestamps instead of failing"),
    ("trace", "false", "record the per-event trace CSV"),
    ("group_by", "", "comma list of cold_start and/or user_attr_<j>"),
    ("study_checkpoints", "100", "true-error checkpoints in the restart study"),
    ("monitor_fracs", "0.06,0.07,0.08,0.09,0.10", "monitor thresholds as fractions of the total online error"),
    ("corr_intervals", "100", "intervals T of the correlation study"),
    ("corr_max_delta", "10", "largest interval offset of the correlation study"),
    ("corr_powers", "1,2,3", "distance powers m tried in the correlation study"),
    ("robust_train_fracs", "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8", "training shares of the robustness sweep"),
    ("output_dir", "reports", "where reports and CSVs are written"),
    ("seed", "0", "accepted and echoed; runs are deterministic"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub dataset: Option<PathBuf>,
    pub dataset_format: InputFormat,
    pub min_item_count: usize,
    pub use_attrs: bool,
    pub shift_time: bool,
    pub alpha: f64,
    pub gamma: f64,
    pub ranks: [usize; 6],
    pub path_weights: [f64; 3],
    pub beta: f64,
    pub degree_floor: f64,
    pub restart_policy: PolicyKind,
    pub restart_threshold: f64,
    pub online: bool,
    pub a: usize,
    pub b: usize,
    pub lambda: f64,
    pub split: SplitSpec,
    pub top_k: usize,
    pub exclude_seen: Option<bool>,
    pub clamp_out_of_order: bool,
    pub trace: bool,
    pub group_by: Vec<String>,
    pub study_checkpoints: usize,
    pub monitor_fracs: Vec<f64>,
    pub corr_intervals: usize,
    pub corr_max_delta: usize,
    pub corr_powers: Vec<u32>,
    pub robust_train_fracs: Vec<f64>,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            task: Task::NextInteraction,
            dataset: None,
            dataset_format: InputFormat::Canonical,
            min_item_count: 0,
            use_attrs: true,
            shift_time: true,
            alpha: 0.0,
            gamma: 0.5,
            ranks: [64, 0, 0, 0, 0, 0],
            path_weights: [1.0, 0.0, 0.0],
            beta: 0.0,
            degree_floor: 1.0,
            restart_policy: PolicyKind::None,
            restart_threshold: 0.0,
            online: true,
            a: 1,
            b: 0,
            lambda: 0.0,
            split: SplitSpec::new(0.8, 0.1, 0.1),
            top_k: 10,
            exclude_seen: None,
            clamp_out_of_order: false,
            trace: false,
            group_by: Vec::new(),
            study_checkpoints: 100,
            monitor_fracs: Vec::new(),
            corr_intervals: 100,
            corr_max_delta: 10,
            corr_powers: Vec::new(),
            robust_train_fracs: Vec::new(),
            output_dir: PathBuf::from("reports"),
            seed: 0,
        };
        for (k, v, _) in KEYS {
            cfg.set(k, v).expect("defaults parse");
        }
        cfg
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::config(key, format!("expected true/false, got `{other}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "task" => self.task = v.parse()?,
            "dataset" => self.dataset = (!v.is_empty()).then(|| PathBuf::from(v)),
            "dataset_format" => {
                self.dataset_format = v.parse().map_err(|e: Error| Error::config(key, e.to_string()))?
            }
            "min_item_count" => self.min_item_count = parse(key, v)?,
            "use_attrs" => self.use_attrs = parse_bool(key, v)?,
            "shift_time" => self.shift_time = parse_bool(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "gamma" => self.gamma = parse_fraction(key, v)?,
            "k1" | "k2" | "k3" | "k4" | "k5" | "k6" => {
                let slot: usize = key[1..].parse().expect("k1..k6");
                self.ranks[slot - 1] = parse(key, v)?;
            }
            "path_weights" => {
                let w: Vec<f64> = parse_list(key, v)?;
                self.path_weights = w
                    .try_into()
                    .map_err(|_| Error::config(key, "expected three comma-separated weights"))?;
            }
            "beta" => self.beta = parse(key, v)?,
            "degree_floor" => self.degree_floor = parse(key, v)?,
            "restart_policy" => {
                self.restart_policy = match v {
                    "none" => PolicyKind::None,
                    "monitor" => PolicyKind::Monitor,
                    "time" => PolicyKind::Time,
                    "count" => PolicyKind::Count,
                    other => {
                        return Err(Error::config(key, format!("unknown policy `{other}`")));
                    }
                }
            }
            "restart_threshold" => self.restart_threshold = parse(key, v)?,
            "online" => self.online = parse_bool(key, v)?,
            "a" => self.a = parse(key, v)?,
            "b" => self.b = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "train_frac" => self.split.train_frac = parse(key, v)?,
            "valid_frac" => self.split.valid_frac = parse(key, v)?,
            "test_frac" => self.split.test_frac = parse(key, v)?,
            "top_k" => self.top_k = parse(key, v)?,
            "exclude_seen" => {
                self.exclude_seen = if v == "auto" { None } else { Some(parse_bool(key, v)?) }
            }
            "clamp_out_of_order" => self.clamp_out_of_order = parse_bool(key, v)?,
            "trace" => self.trace = parse_bool(key, v)?,
            "group_by" => self.group_by = parse_list(key, v)?,
            "study_checkpoints" => self.study_checkpoints = parse(key, v)?,
            "monitor_fracs" => self.monitor_fracs = parse_list(key, v)?,
            "corr_intervals" => self.corr_intervals = parse(key, v)?,
            "corr_max_delta" => self.corr_max_delta = parse(key, v)?,
            "corr_powers" => self.corr_powers = parse_list(key, v)?,
            "robust_train_fracs" => self.robust_train_fracs = parse_list(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Applies `key = value` lines.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, "expected `key = value`"))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Reads a config file. A relative `dataset` is resolved against the
    /// file's directory when it does not exist relative to the working
    /// directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        if let (Some(ds), Some(dir)) = (cfg.dataset.clone(), path.parent()) {
            if ds.is_relative() && !ds.exists() && dir.join(&ds).exists() {
                cfg.dataset = Some(dir.join(ds));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Re-checks every constraint owned by the engine, predictor and split.
    pub fn validate(&self) -> Result<()> {
        self.engine_config()?.validate()?;
        self.predictor_config().validate()?;
        self.split.validate()?;
        if self.top_k == 0 {
            return Err(Error::config("top_k", "must be >= 1"));
        }
        if self.restart_policy != PolicyKind::None && !(self.restart_threshold > 0.0) {
            return Err(Error::config("restart_threshold", "must be positive for an active policy"));
        }
        for g in &self.group_by {
            if g != "cold_start" && !g.strip_prefix("user_attr_").is_some_and(|j| j.parse::<usize>().is_ok()) {
                return Err(Error::config("group_by", format!("unknown grouping `{g}`")));
            }
        }
        if self.monitor_fracs.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::config("monitor_fracs", "fractions must be positive"));
        }
        if self.corr_intervals < 2 || self.corr_max_delta == 0 || self.corr_max_delta >= self.corr_intervals {
            return Err(Error::config("corr_intervals", "need corr_intervals > corr_max_delta >= 1"));
        }
        if self.corr_powers.is_empty() || self.corr_powers.contains(&0) {
            return Err(Error::config("corr_powers", "need positive powers"));
        }
        if self.robust_train_fracs.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::config("robust_train_fracs", "fractions must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn policy(&self) -> Result<RestartPolicy> {
        Ok(match self.restart_policy {
            PolicyKind::None => RestartPolicy::never(),
            PolicyKind::Monitor => RestartPolicy::MonitorThreshold(self.restart_threshold),
            PolicyKind::Time => RestartPolicy::FixedTime(self.restart_threshold),
            PolicyKind::Count => {
                let n = self.restart_threshold;
                if n.fract() != 0.0 || n < 1.0 {
                    return Err(Error::config("restart_threshold", "count policy needs a positive integer"));
                }
                RestartPolicy::FixedCount(n as usize)
            }
        })
    }

    pub fn engine_config(&self) -> Result<EngineConfig> {
        Ok(EngineConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            ranks: self.ranks,
            path_weights: self.path_weights,
            beta: self.beta,
            degree_floor: self.degree_floor,
            policy: self.policy()?,
            online: self.online,
            clamp_out_of_order: self.clamp_out_of_order,
            trace: self.trace,
        })
    }

    pub fn predictor_config(&self) -> PredictorConfig {
        PredictorConfig {
            a: self.a,
            b: self.b,
            lambda: self.lambda,
        }
    }

    pub fn exclude_seen(&self) -> bool {
        self.exclude_seen.unwrap_or(self.task == Task::FutureItem)
    }

    /// Every key with its current value, in key order.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let policy = match self.restart_policy {
            PolicyKind::None => "none",
            PolicyKind::Monitor => "monitor",
            PolicyKind::Time => "time",
            PolicyKind::Count => "count",
        };
        let format = match self.dataset_format {
            InputFormat::Canonical => "canonical",
            InputFormat::Generic => "generic",
            InputFormat::MovieLens100k => "movielens-100k",
            InputFormat::MovieLens1m => "movielens-1m",
            InputFormat::Recbole => "recbole",
            InputFormat::Jodie => "jodie",
        };
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("task", self.task.as_str().into());
        put("dataset", self.dataset.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        put("dataset_format", format.into());
        put("min_item_count", self.min_item_count.to_string());
        put("use_attrs", self.use_attrs.to_string());
        put("shift_time", self.shift_time.to_string());
        put("alpha", self.alpha.to_string());
        put("gamma", self.gamma.to_string());
        for (j, k) in self.ranks.iter().enumerate() {
            put(&format!("k{}", j + 1), k.to_string());
        }
        put("path_weights", join(&self.path_weights));
        put("beta", self.beta.to_string());
        put("degree_floor", self.degree_floor.to_string());
        put("restart_policy", policy.into());
        put("restart_threshold", self.restart_threshold.to_string());
        put("online", self.online.to_string());
        put("a", self.a.to_string());
        put("b", self.b.to_string());
        put("lambda", self.lambda.to_string());
        put("train_frac", self.split.train_frac.to_string());
        put("valid_frac", self.split.valid_frac.to_string());
        put("test_frac", self.split.test_frac.to_string());
        put("top_k", self.top_k.to_string());
        put(
            "exclude_seen",
            self.exclude_seen.map(|b| b.to_string()).unwrap_or_else(|| "auto".into()),
        );
        put("clamp_out_of_order", self.clamp_out_of_order.to_string());
        put("trace", self.trace.to_string());
        put("group_by", self.group_by.join(","));
        put("study_checkpoints", self.study_checkpoints.to_string());
        put("monitor_fracs", join(&self.monitor_fracs));
        put("corr_intervals", self.corr_intervals.to_string());
        put("corr_max_delta", self.corr_max_delta.to_string());
        put("corr_powers", join(&self.corr_powers));
        put("robust_train_fracs", join(&self.robust_train_fracs));
        put("output_dir", self.output_dir.display().to_string());
        put("seed", self.seed.to_string());
        m
    }

    /// Hex SHA-256 of the echoed configuration.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (k, v) in self.echo() {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Loads, filters and time-shifts the configured dataset.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let path = self
            .dataset
            .as_ref()
            .ok_or_else(|| Error::config("dataset", "no dataset configured"))?;
        if !path.exists() {
            return Err(Error::Invalid(format!("dataset not found: {}", path.display())));
        }
        let mut ds = data::load(path, self.dataset_format)?;
        self.prepare(&mut ds);
        Ok(ds)
    }

    /// Applies the item filter, attribute switch and optional time shift.
    pub fn prepare(&self, ds: &mut Dataset) {
        ds.filter_min_item_count(self.min_item_count);
        if !self.use_attrs {
            ds.strip_attrs();
        }
        if self.shift_time {
            ds.shift_to_origin();
        }
    }
}

/// Accepts decimals and simple fractions such as `1/5`.
fn parse_fraction(key: &str, v: &str) -> Result<f64> {
    if let Some((n, d)) = v.split_once('/') {
        let n: f64 = parse(key, n)?;
        let d: f64 = parse(key, d)?;
        return Ok(n / d);
    }
    parse(key, v)
}
