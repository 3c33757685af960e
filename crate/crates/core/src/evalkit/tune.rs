use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};

use super::tasks::run_task;

/// Ordered list of `(key, candidate values)`; the grid is their product.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchSpace {
    pub axes: Vec<(String, Vec<String>)>,
}

impl SearchSpace {
    pub fn size(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    /// The `index`-th grid point; the last axis varies fastest.
    pub fn point(&self, mut index: usize) -> Vec<(String, String)> {
        let mut out = vec![(String::new(), String::new()); self.axes.len()];
        for (slot, (k, vals)) in out.iter_mut().zip(&self.axes).rev() {
            *slot = (k.clone(), vals[index % vals.len()].clone());
            index /= vals.len();
        }
        out
    }
}

/// Parses lines of `key = v1; v2; ...`. A value of the form `lo..hi` or
/// `lo..hi:step` expands to an inclusive numeric range.
pub fn parse_space(text: &str) -> Result<SearchSpace> {
    let mut axes = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line
            .split_once('=')
            .ok_or_else(|| Error::config("search_space", format!("line {}: expected `key = values`", n + 1)))?;
        let key = key.trim().to_string();
        let mut vals = Vec::new();
        for v in rest.split(';').map(str::trim).filter(|v| !v.is_empty()) {
            match expand_range(v) {
                Some(r) => vals.extend(r?),
                None => vals.push(v.to_string()),
            }
        }
        if vals.is_empty() {
            return Err(Error::config(&key, "no candidate values"));
        }
        axes.push((key, vals));
    }
    Ok(SearchSpace { axes })
}

fn expand_range(v: &str) -> Option<Result<Vec<String>>> {
    let (lo, rest) = v.split_once("..")?;
    let (hi, step) = rest.split_once(':').unwrap_or((rest, "1"));
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::config("search_space", format!("bad range `{v}`")))
    };
    Some((|| {
        let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
        if !(step > 0.0) || hi < lo {
            return Err(Error::config("search_space", format!("empty range `{v}`")));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        Ok((0..=n)
            .map(|i| {
                let x = lo + i as f64 * step;
                let r = (x * 1e9).round() / 1e9;
                format!("{r}")
            })
            .collect())
    })())
}

/// One evaluated grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderRow {
    pub index: usize,
    pub params: BTreeMap<String, String>,
    pub objective: f64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub objective: String,
    /// Sorted by objective (descending), ties by grid index.
    pub leaderboard: Vec<LeaderRow>,
}

impl TuneResult {
    pub fn best(&self) -> Option<&LeaderRow> {
        self.leaderboard.first()
    }

    pub fn to_csv(&self) -> String {
        let keys: Vec<&String> = self.leaderboard.first().map(|r| r.params.keys().collect()).unwrap_or_default();
        let mut s = String::from("rank,index");
        for k in &keys {
            s.push(',');
            s.push_str(k);
        }
        s.push_str(&format!(",{}\n", self.objective));
        for (rank, r) in self.leaderboard.iter().enumerate() {
            s.push_str(&format!("{},{}", rank + 1, r.index));
            for k in &keys {
                s.push(',');
                s.push_str(&r.params[*k]);
            }
            s.push_str(&format!(",{}\n", r.objective));
        }
        s
    }
}

/// Evaluates every grid point on `ds` and ranks them by the report metric
/// `objective` (normally a validation metric). Runs on `jobs` threads; the
/// result does not depend on the thread count.
pub fn grid_search(
    base: &RunConfig,
    space: &SearchSpace,
    ds: &Dataset,
    objective: &str,
    jobs: usize,
) -> Result<TuneResult> {
    let n = space.size();
    if n == 0 {
        return Err(Error::config("search_space", "empty search space"));
    }
    let mut configs = Vec::with_capacity(n);
    for idx in 0..n {
        let mut cfg = base.clone();
        for (k, v) in space.point(idx) {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        configs.push(cfg);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let rows: Vec<Result<LeaderRow>> = pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(idx, cfg)| {
                let report = run_task(cfg, ds)?;
                let value = report
                    .metric(objective)
                    .ok_or_else(|| Error::config("objective", format!("report has no metric `{objective}`")))?;
                log::info!("grid point {idx}: {objective} = {value:.4}");
                Ok(LeaderRow {
                    index: idx,
                    params: space.point(idx).into_iter().collect(),
                    objective: value,
                    metrics: report.metrics,
                })
            })
            .collect()
    });
    let mut leaderboard = rows.into_iter().collect::<Result<Vec<_>>>()?;
    leaderboard.sort_by(|a, b| b.objective.total_cmp(&a.objective).then(a.index.cmp(&b.index)));
    Ok(TuneResult {
        objective: objective.to_string(),
        leaderboard,
    })
}
