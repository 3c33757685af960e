//! Long/short-term preference modelling and item scoring.
//!
//! The long-term vector is a harmonically weighted sum of the user's current
//! embedding row and the rows saved after their previous interactions
//! (newest first). The short-term vector attends over
//! the decayed embeddings of the user's recently visited items. Scores are
//! inner products with the item embeddings, multiplied back by the item
//! degree factors.

use std::collections::{HashMap, VecDeque};

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::graphmat::EmbeddingBundle;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorConfig {
    /// Number of user rows in the long-term vector (the current one included).
    pub a: usize,
    /// Number of recent items in the short-term vector.
    pub b: usize,
    /// Weight of the short-term vector.
    pub lambda: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig { a: 1, b: 0, lambda: 0.0 }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.a == 0 {
            return Err(Error::config("a", "must be >= 1"));
        }
        if !(self.lambda.is_finite() && (0.0..=1.0).contains(&self.lambda)) {
            return Err(Error::config("lambda", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Bounded per-user memory: embedding snapshots and recent items with their
/// timestamps, newest last.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UserHistory {
    snapshots: VecDeque<Vec<f64>>,
    recent_items: VecDeque<(usize, f64)>,
}

impl UserHistory {
    pub fn push_snapshot(&mut self, row: Vec<f64>, cap: usize) {
        if cap == 0 {
            return;
        }
        self.snapshots.push_back(row);
        while self.snapshots.len() > cap {
            self.snapshots.pop_front();
        }
    }

    pub fn push_item(&mut self, item: usize, t: f64, cap: usize) {
        if cap == 0 {
            return;
        }
        self.recent_items.push_back((item, t));
        while self.recent_items.len() > cap {
            self.recent_items.pop_front();
        }
    }

    /// Newest first.
    pub fn snapshots(&self) -> impl Iterator<Item = &[f64]> {
        self.snapshots.iter().rev().map(Vec::as_slice)
    }

    /// Oldest first.
    pub fn recent_items(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.recent_items.iter().copied()
    }

    pub fn clear_snapshots(&mut self) {
        self.snapshots.clear();
    }
}

/// `sum_{r=1..a} (1/r) * snapshots[r-1]`, snapshots newest first. `None` for
/// an empty input.
pub fn long_term<'a>(snapshots: impl IntoIterator<Item = &'a [f64]>, a: usize) -> Option<Vec<f64>> {
    let mut out: Option<Vec<f64>> = None;
    for (r, s) in snapshots.into_iter().take(a).enumerate() {
        let w = 1.0 / (r + 1) as f64;
        match out.as_mut() {
            None => out = Some(s.iter().map(|x| w * x).collect()),
            Some(acc) => acc.iter_mut().zip(s).for_each(|(o, x)| *o += w * x),
        }
    }
    out
}

/// Attention over the columns of `S` (decayed item embeddings):
/// `S' = (S^T S / sqrt k) S^T`, `e_short = S'^T (S' e_long / sqrt k)`.
/// `k` is the embedding width. No items gives the zero vector.
pub fn short_term(columns: &[Vec<f64>], e_long: &[f64]) -> Result<Vec<f64>> {
    let k = e_long.len();
    if let Some(c) = columns.iter().find(|c| c.len() != k) {
        return Err(Error::Dimension(format!("item embedding of width {} vs {k}", c.len())));
    }
    let b = columns.len();
    if b == 0 || k == 0 {
        return Ok(vec![0.0; k]);
    }
    let sk = (k as f64).sqrt();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    // gram[i][j] = s_i . s_j
    let gram: Vec<Vec<f64>> = columns
        .iter()
        .map(|ci| columns.iter().map(|cj| dot(ci, cj)).collect())
        .collect();
    // S' rows: s'_i = (1/sqrt k) sum_j gram[i][j] s_j
    let s_prime: Vec<Vec<f64>> = gram
        .iter()
        .map(|g| {
            let mut row = vec![0.0; k];
            for (gij, cj) in g.iter().zip(columns) {
                row.iter_mut().zip(cj).for_each(|(r, x)| *r += gij * x / sk);
            }
            row
        })
        .collect();
    let att: Vec<f64> = s_prime.iter().map(|r| dot(r, e_long) / sk).collect();
    let mut out = vec![0.0; k];
    for (ai, ri) in att.iter().zip(&s_prime) {
        out.iter_mut().zip(ri).for_each(|(o, x)| *o += ai * x);
    }
    Ok(out)
}

/// `lambda * e_short + (1 - lambda) * e_long`
pub fn fuse(e_short: &[f64], e_long: &[f64], lambda: f64) -> Vec<f64> {
    e_short
        .iter()
        .zip(e_long)
        .map(|(s, l)| lambda * s + (1.0 - lambda) * l)
        .collect()
}

/// Denormalised scores `(E_I e) * item_deg^alpha` for every item.
pub fn score_items(bundle: &EmbeddingBundle, e: &[f64]) -> Result<Vec<f64>> {
    let emb = bundle.item_emb();
    if e.len() != emb.ncols() {
        return Err(Error::Dimension(format!(
            "preference of width {} vs embeddings of width {}",
            e.len(),
            emb.ncols()
        )));
    }
    let mut scores = vec![0.0; emb.nrows()];
    for (j, &ej) in e.iter().enumerate() {
        if ej == 0.0 {
            continue;
        }
        scores.iter_mut().zip(emb.col(j).iter()).for_each(|(s, x)| *s += ej * x);
    }
    if bundle.scalers().alpha() != 0.0 {
        for (s, m) in scores.iter_mut().zip(bundle.scalers().item_multipliers()) {
            *s *= m;
        }
    }
    Ok(scores)
}

fn outranks(scores: &[f64], a: usize, b: usize) -> bool {
    scores[a] > scores[b] || (scores[a] == scores[b] && a < b)
}

/// The `k` best items by descending score, ties by ascending index,
/// skipping `exclude`.
pub fn top_k(scores: &[f64], k: usize, exclude: &dyn Fn(usize) -> bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| !exclude(i)).collect();
    let cmp = |a: &usize, b: &usize| {
        scores[*b]
            .total_cmp(&scores[*a])
            .then_with(|| a.cmp(b))
    };
    if k < idx.len() && k > 0 {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx.truncate(k);
    idx
}

/// 1-based rank of `target` among the non-excluded items.
pub fn rank_of(scores: &[f64], target: usize, exclude: &dyn Fn(usize) -> bool) -> usize {
    1 + (0..scores.len())
        .filter(|&j| j != target && !exclude(j) && outranks(scores, j, target))
        .count()
}

/// Per-user histories plus the preference computation.
#[derive(Clone, Debug, Default)]
pub struct Predictor {
    config: PredictorConfig,
    histories: HashMap<usize, UserHistory>,
}

impl Predictor {
    pub fn new(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Predictor {
            config,
            histories: HashMap::new(),
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn history(&self, u: usize) -> Option<&UserHistory> {
        self.histories.get(&u)
    }

    /// Records that `u` visited `item` at `t` and saves its current row.
    pub fn observe(&mut self, engine: &mut Engine, u: usize, item: usize, t: f64) -> Result<()> {
        let (a, b) = (self.config.a, self.config.b);
        let h = self.histories.entry(u).or_default();
        if a > 1 {
            let row = engine.bundle()?.user_row(u);
            h.push_snapshot(row, a - 1);
        }
        h.push_item(item, t, b);
        Ok(())
    }

    /// Seeds every history with the last `b` items of each user from the
    /// engine's interaction log. No saved rows: the long-term vector starts
    /// from the current row alone.
    pub fn seed(&mut self, engine: &Engine) {
        self.histories.clear();
        let b = self.config.b;
        for ev in engine.interactions() {
            self.histories.entry(ev.user).or_default().push_item(ev.item, ev.t, b);
        }
    }

    /// Drops saved rows; needed after a restart since they live in the old
    /// basis.
    pub fn reseed_snapshots(&mut self) {
        for h in self.histories.values_mut() {
            h.clear_snapshots();
        }
    }

    /// Fused preference vector of user `u` under the engine's current stage.
    pub fn preference(&self, engine: &mut Engine, u: usize) -> Result<Vec<f64>> {
        let weights: Vec<(usize, f64)> = self
            .histories
            .get(&u)
            .map(|h| h.recent_items().map(|(i, t)| (i, engine.current_weight(t))).collect())
            .unwrap_or_default();
        let bundle = engine.bundle()?;
        let current = bundle.user_row(u);
        let saved = self.histories.get(&u).into_iter().flat_map(|h| h.snapshots());
        let e_long = long_term(std::iter::once(current.as_slice()).chain(saved), self.config.a)
            .expect("current row present");
        if self.config.lambda == 0.0 || weights.is_empty() {
            return Ok(fuse(&vec![0.0; e_long.len()], &e_long, self.config.lambda));
        }
        let cols: Vec<Vec<f64>> = weights
            .iter()
            .map(|&(i, w)| bundle.item_row(i).into_iter().map(|x| w * x).collect())
            .collect();
        let e_short = short_term(&cols, &e_long)?;
        Ok(fuse(&e_short, &e_long, self.config.lambda))
    }

    pub fn scores(&self, engine: &mut Engine, u: usize) -> Result<Vec<f64>> {
        let e = self.preference(engine, u)?;
        score_items(engine.bundle()?, &e)
    }
}
