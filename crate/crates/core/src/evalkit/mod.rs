//! Splits, metrics, task drivers, baselines and studies.

mod studies;
mod tasks;
mod tune;

pub use studies::{correlation_study, restart_policy_study, robustness_study, CorrelationPoint};
pub use tasks::{
    group_metrics, last_k_baseline, run_ablation, run_future_item_recommendation, run_next_interaction,
    run_task, user_groups, UserScore,
};
pub use tune::{grid_search, parse_space, LeaderRow, SearchSpace, TuneResult};

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Chronological split shares, applied to interaction counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, valid_frac: f64, test_frac: f64) -> Self {
        SplitSpec {
            train_frac,
            valid_frac,
            test_frac,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.valid_frac, self.test_frac];
        if fr.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || !(self.train_frac > 0.0) {
            return Err(Error::config("train_frac", "fractions must be >= 0 with train_frac > 0"));
        }
        if fr.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(Error::config("test_frac", "fractions must sum to at most 1"));
        }
        Ok(())
    }

    /// End indices `(train_end, valid_end, test_end)` for `n` events.
    pub fn bounds(&self, n: usize) -> (usize, usize, usize) {
        let cut = |f: f64| (((f * n as f64) + 1e-9).floor() as usize).min(n);
        let a = cut(self.train_frac);
        let b = cut(self.train_frac + self.valid_frac).max(a);
        let c = cut(self.train_frac + self.valid_frac + self.test_frac).max(b);
        (a, b, c)
    }
}

/// Contiguous train/valid/test slices in stream order.
pub fn chronological_split<T: Clone>(events: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    spec.validate()?;
    let (a, b, c) = spec.bounds(events.len());
    Ok((events[..a].to_vec(), events[a..b].to_vec(), events[b..c].to_vec()))
}

/// Mean over users with non-empty truth of `|top_k ∩ truth| / |truth|`.
pub fn recall_at_k(topk: &[Vec<usize>], truth: &[HashSet<usize>], k: usize) -> Result<f64> {
    if topk.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} ranked lists vs {} truth sets",
            topk.len(),
            truth.len()
        )));
    }
    let mut sum = 0.0;
    let mut users = 0usize;
    for (top, t) in topk.iter().zip(truth) {
        if t.is_empty() {
            continue;
        }
        let hits = top.iter().take(k).filter(|i| t.contains(i)).count();
        sum += hits as f64 / t.len() as f64;
        users += 1;
    }
    if users == 0 {
        return Err(Error::Degenerate("no user has a non-empty truth set".into()));
    }
    Ok(sum / users as f64)
}

/// `(MRR, Hit@k)` from 1-based ranks. `usize::MAX` marks a miss.
pub fn mrr_and_hit(ranks: &[usize], k: usize) -> Result<(f64, f64)> {
    if ranks.is_empty() {
        return Err(Error::Degenerate("no test events".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Invalid("ranks are 1-based".into()));
    }
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|&r| if r == usize::MAX { 0.0 } else { 1.0 / r as f64 }).sum::<f64>() / n;
    let hit = ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok((mrr, hit))
}

/// Average ranks (ties share their mean rank), 1-based.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            ranks[p] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x[..n].iter().zip(&y[..n]) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// A table of numbers written as a CSV file next to the report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Curve {
    pub fn new(columns: &[&str]) -> Self {
        Curve {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }
}

/// Result document of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    /// Accuracy metrics, all in `[0, 1]`.
    pub metrics: BTreeMap<String, f64>,
    /// Other numbers: errors, correlations, counts.
    pub stats: BTreeMap<String, f64>,
    /// Group label -> metrics.
    pub groups: BTreeMap<String, BTreeMap<String, f64>>,
    /// Labelled rows of an ablation or search.
    pub variants: BTreeMap<String, BTreeMap<String, f64>>,
    pub curves: BTreeMap<String, Curve>,
    pub restart_count: usize,
    pub wall_clock_seconds: f64,
    pub config: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn new(task: &str, config: BTreeMap<String, String>) -> Self {
        EvalReport {
            task: task.to_string(),
            config,
            ..EvalReport::default()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// The report without its wall-clock field; identical across reruns.
    pub fn body_json(&self) -> String {
        let mut copy = self.clone();
        copy.wall_clock_seconds = 0.0;
        copy.to_json()
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    /// Writes `<stem>.json` and one `<stem>-<curve>.csv` per curve into
    /// `dir`; returns the JSON path.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.to_json())?;
        for (name, c) in &self.curves {
            std::fs::write(dir.join(format!("{stem}-{name}.csv")), c.to_csv())?;
        }
        Ok(json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn split_sizes() {
        let ev: Vec<usize> = (0..10).collect();
        let (a, b, c) = chronological_split(&ev, &SplitSpec::new(0.8, 0.1, 0.1)).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        assert_eq!(b, vec![8]);
        let (a, b, c) = chronological_split(&ev, &SplitSpec::new(0.1, 0.1, 0.1)).unwrap();
        assert_eq!((a, b, c), (vec![0], vec![1], vec![2]));
        assert!(chronological_split(&ev, &SplitSpec::new(0.8, 0.2, 0.1)).is_err());
    }

    #[test]
    fn recall_examples() {
        let s = |v: &[usize]| v.iter().copied().collect::<HashSet<_>>();
        let top = vec![vec![1, 2, 3], vec![4, 5], vec![7]];
        // user 0: 2/2, user 1: 1/2, user 2: 0/1
        let truth = vec![s(&[1, 3]), s(&[5, 9]), s(&[8])];
        assert_abs_diff_eq!(recall_at_k(&top, &truth, 10).unwrap(), (1.0 + 0.5 + 0.0) / 3.0, epsilon = 1e-15);
        // cutoff applies
        assert_abs_diff_eq!(recall_at_k(&top[..1], &truth[..1], 1).unwrap(), 0.5, epsilon = 1e-15);
        // users without truth are skipped
        let truth2 = vec![s(&[1]), s(&[]), s(&[])];
        assert_eq!(recall_at_k(&top, &truth2, 10).unwrap(), 1.0);
        assert!(recall_at_k(&top, &[s(&[]), s(&[]), s(&[])], 10).is_err());
    }

    #[test]
    fn mrr_hit_examples() {
        assert_eq!(mrr_and_hit(&[1, 1, 1], 10).unwrap(), (1.0, 1.0));
        let (mrr, hit) = mrr_and_hit(&[1, 2, 10, 11], 10).unwrap();
        assert_abs_diff_eq!(mrr, (1.0 + 0.5 + 0.1 + 1.0 / 11.0) / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mrr, 0.4227, epsilon = 1e-4);
        assert_eq!(hit, 0.75);
        assert!(mrr_and_hit(&[], 10).is_err());
        assert_eq!(mrr_and_hit(&[usize::MAX, 1], 10).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn spearman_examples() {
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0, epsilon = 1e-12);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), 0.0);
        // ties get average ranks
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn report_body_ignores_wall_clock() {
        let mut a = EvalReport::new("t", BTreeMap::new());
        a.metrics.insert("mrr".into(), 0.5);
        let mut b = a.clone();
        a.wall_clock_seconds = 1.0;
        b.wall_clock_seconds = 2.0;
        assert_eq!(a.body_json(), b.body_json());
        let back: EvalReport = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(back, a);
    }
}
