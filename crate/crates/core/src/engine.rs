//! Stage lifecycle: offline initialisation, online rank-1 updates, the
//! embedding-shift monitor and restart policies.
//!
//! A stage starts at time `T_i` with decay strength `beta_i`. Interactions
//! seen so far are decayed with [`decay_weight`], degree-normalised with
//! scalers frozen for the whole stage, and factorised offline. Events
//! arriving inside the stage are folded in with [`brand_update`]. After
//! every event the monitor reports `||R_snapshot - R_current||_F` computed
//! from the factors alone.

use indexmap::IndexMap;
use std::io::Write;

use crate::data::EventRecord;
use crate::error::{Error, Result};
use crate::graphmat::{
    build_path_embeddings, derive_matrices, normalize, DegreeScalers, EmbeddingBundle, PathFactors,
    DEGREE_FLOOR,
};
use crate::linalg::{
    brand_update, extend_dims, factored_frobenius_distance, truncated_svd, FactoredMatrix,
    SparseMatrix,
};

/// `exp(beta * (t / stage_start - 1))`. Exactly 1 at `t == stage_start`.
/// `stage_start` must be positive.
pub fn decay_weight(t: f64, stage_start: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        return 1.0;
    }
    (beta * (t / stage_start - 1.0)).exp()
}

/// When to rebuild the factorisation offline. Pure online updating is
/// `FixedCount(usize::MAX)`.
#[derive(Clone, Debug, PartialEq)]
pub enum RestartPolicy {
    /// Restart once the monitored distance exceeds the threshold.
    MonitorThreshold(f64),
    /// Restart once this much time has passed since the stage began.
    FixedTime(f64),
    /// Restart after this many events in the stage.
    FixedCount(usize),
}

impl RestartPolicy {
    pub fn never() -> Self {
        RestartPolicy::FixedCount(usize::MAX)
    }

    fn validate(&self) -> Result<()> {
        match self {
            RestartPolicy::MonitorThreshold(x) | RestartPolicy::FixedTime(x)
                if !(x.is_finite() && *x > 0.0) =>
            {
                Err(Error::config("restart_policy", format!("threshold must be positive, got {x}")))
            }
            RestartPolicy::FixedCount(0) => Err(Error::config("restart_policy", "count must be >= 1")),
            _ => Ok(()),
        }
    }
}

/// Rank budgets `k1..k6` for the slots
/// `R, G, H, G^T R, R H, G^T R H`.
pub type RankBudgets = [usize; 6];

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    /// Degree-normalisation exponent.
    pub alpha: f64,
    /// Frequency exponent, in `(0, 0.5]`.
    pub gamma: f64,
    pub ranks: RankBudgets,
    pub path_weights: [f64; 3],
    /// Decay strength of the first stage; 0 disables decay.
    pub beta: f64,
    pub degree_floor: f64,
    pub policy: RestartPolicy,
    /// When false, events are recorded but the factors stay frozen until the
    /// next restart.
    pub online: bool,
    /// Clamp out-of-order timestamps to the previous one instead of failing.
    pub clamp_out_of_order: bool,
    /// Record one trace row per processed event.
    pub trace: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            alpha: 0.0,
            gamma: 0.5,
            ranks: [64, 0, 0, 0, 0, 0],
            path_weights: [1.0, 0.0, 0.0],
            beta: 0.0,
            degree_floor: DEGREE_FLOOR,
            policy: RestartPolicy::never(),
            online: true,
            clamp_out_of_order: false,
            trace: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::config("alpha", "must be finite and >= 0"));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0 && self.gamma <= 0.5) {
            return Err(Error::config("gamma", "must lie in (0, 0.5]"));
        }
        if self.ranks[0] == 0 {
            return Err(Error::config("k1", "must be >= 1"));
        }
        if self.path_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("path_weights", "must be finite and >= 0"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config("beta", "must be finite and >= 0"));
        }
        if !(self.degree_floor.is_finite() && self.degree_floor > 0.0) {
            return Err(Error::config("degree_floor", "must be positive"));
        }
        self.policy.validate()
    }
}

/// One processed event in the stream trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub event_idx: usize,
    pub t: f64,
    pub stage: usize,
    pub distance: f64,
    pub restarted: bool,
}

pub const TRACE_HEADER: &str = "event_idx,t,stage,distance,restarted";

pub fn write_trace(records: &[TraceRecord], out: &mut impl Write) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(out, "{},{},{},{},{}", r.event_idx, r.t, r.stage, r.distance, r.restarted as u8)?;
    }
    Ok(())
}

/// Per-stage state.
#[derive(Clone, Debug)]
pub struct StageState {
    /// 1-based.
    pub index: usize,
    /// `T_i`
    pub start: f64,
    /// `beta_i`
    pub beta: f64,
    pub events_in_stage: usize,
    pub monitor_distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Interaction {
    pub user: usize,
    pub item: usize,
    pub t: f64,
}

/// Dynamic factorisation of a growing interaction graph.
#[derive(Clone, Debug)]
pub struct Engine {
    config: EngineConfig,
    stage: StageState,
    first_start: f64,
    users: IndexMap<String, usize>,
    items: IndexMap<String, usize>,
    user_attrs: Vec<Vec<f64>>,
    item_attrs: Vec<Vec<f64>>,
    p: usize,
    q: usize,
    history: Vec<Interaction>,
    last_t: f64,
    bundle: EmbeddingBundle,
    dirty: bool,
    snapshot: FactoredMatrix,
    exact: SparseMatrix,
    processed: usize,
    restarts: Vec<usize>,
    trace: Vec<TraceRecord>,
}

fn clamp_rank(k: usize, rows: usize, cols: usize) -> usize {
    k.min(rows).min(cols)
}

fn factorize_slot(a: &SparseMatrix, k: usize) -> Result<Option<FactoredMatrix>> {
    let k = clamp_rank(k, a.rows(), a.cols());
    if k == 0 {
        return Ok(None);
    }
    if a.is_zero() {
        return Ok(Some(FactoredMatrix::zeros(a.rows(), a.cols(), k)));
    }
    truncated_svd(a, k).map(Some)
}

fn unit(len: usize, at: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[at] = scale;
    v
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|x| *x == 0.0)
}

impl Engine {
    /// Offline initialisation from a history, with the first stage starting
    /// at `stage_start` (the end of the training window).
    pub fn init(history: &[EventRecord], stage_start: f64, config: EngineConfig) -> Result<Engine> {
        config.validate()?;
        if history.is_empty() {
            return Err(Error::Degenerate("empty training history".into()));
        }
        if !(stage_start.is_finite() && stage_start > 0.0) {
            return Err(Error::Invalid(format!(
                "stage start must be positive, got {stage_start}; shift timestamps so the stream starts before it"
            )));
        }
        let (p, q) = widths(history)?;
        let mut engine = Engine {
            stage: StageState {
                index: 1,
                start: stage_start,
                beta: config.beta,
                events_in_stage: 0,
                monitor_distance: 0.0,
            },
            first_start: stage_start,
            users: IndexMap::new(),
            items: IndexMap::new(),
            user_attrs: Vec::new(),
            item_attrs: Vec::new(),
            p,
            q,
            history: Vec::with_capacity(history.len()),
            last_t: f64::NEG_INFINITY,
            bundle: placeholder_bundle(config.path_weights, config.gamma)?,
            dirty: false,
            snapshot: FactoredMatrix::zeros(0, 0, 0),
            exact: SparseMatrix::new(0, 0),
            processed: 0,
            restarts: Vec::new(),
            trace: Vec::new(),
            config,
        };
        for (idx, e) in history.iter().enumerate() {
            let t = engine.check_time(idx, e.timestamp)?;
            let u = engine.intern_user(&e.user_id, e.user_attrs.as_deref())?;
            let i = engine.intern_item(&e.item_id, e.item_attrs.as_deref())?;
            engine.history.push(Interaction { user: u, item: i, t });
        }
        engine.rebuild()?;
        Ok(engine)
    }

    /// Convenience: the stage starts at the last history timestamp.
    pub fn init_at_end(history: &[EventRecord], config: EngineConfig) -> Result<Engine> {
        let end = history
            .last()
            .map(|e| e.timestamp)
            .ok_or_else(|| Error::Degenerate("empty training history".into()))?;
        Engine::init(history, end, config)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn stage(&self) -> &StageState {
        &self.stage
    }

    pub fn monitor_distance(&self) -> f64 {
        self.stage.monitor_distance
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.users.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.items.get(id).copied()
    }

    pub fn item_id(&self, idx: usize) -> Option<&str> {
        self.items.get_index(idx).map(|(k, _)| k.as_str())
    }

    pub fn user_id(&self, idx: usize) -> Option<&str> {
        self.users.get_index(idx).map(|(k, _)| k.as_str())
    }

    pub fn attr_widths(&self) -> (usize, usize) {
        (self.p, self.q)
    }

    /// Number of stream events processed since initialisation.
    pub fn processed(&self) -> usize {
        self.processed
    }

    /// Stream indices (0-based, counted from the end of initialisation)
    /// after which a restart happened.
    pub fn restart_events(&self) -> &[usize] {
        &self.restarts
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    /// Current factorisation of the normalised interaction matrix.
    pub fn user_item_factors(&self) -> &FactoredMatrix {
        &self.bundle.factors().user_item
    }

    /// Factorisation taken at the start of the stage.
    pub fn snapshot(&self) -> &FactoredMatrix {
        &self.snapshot
    }

    /// The exact decayed, normalised matrix the online factors approximate.
    pub fn exact_matrix(&self) -> &SparseMatrix {
        &self.exact
    }

    pub fn scalers(&self) -> &DegreeScalers {
        self.bundle.scalers()
    }

    /// Embeddings reflecting every ingested event.
    pub fn bundle(&mut self) -> Result<&EmbeddingBundle> {
        if self.dirty {
            self.bundle.refresh()?;
            self.dirty = false;
        }
        Ok(&self.bundle)
    }

    /// Decay weight of an interaction at time `t` under the current stage.
    pub fn current_weight(&self, t: f64) -> f64 {
        decay_weight(t, self.stage.start, self.stage.beta)
    }

    fn check_time(&mut self, index: usize, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::NonFinite("event timestamp"));
        }
        let t = if t < self.last_t {
            if !self.config.clamp_out_of_order {
                return Err(Error::OutOfOrder {
                    index,
                    timestamp: t,
                    previous: self.last_t,
                });
            }
            self.last_t
        } else {
            t
        };
        self.last_t = t;
        Ok(t)
    }

    fn check_attrs(width: usize, attrs: Option<&[f64]>, what: &str) -> Result<Vec<f64>> {
        match attrs {
            None => Ok(vec![0.0; width]),
            Some(a) if a.len() != width => Err(Error::Dimension(format!(
                "{what} attribute vector has length {}, expected {width}",
                a.len()
            ))),
            Some(a) if a.iter().any(|x| !x.is_finite()) => Err(Error::NonFinite("attribute vector")),
            Some(a) => Ok(a.to_vec()),
        }
    }

    fn intern_user(&mut self, id: &str, attrs: Option<&[f64]>) -> Result<usize> {
        if let Some(&u) = self.users.get(id) {
            return Ok(u);
        }
        let a = Self::check_attrs(self.p, attrs, "user")?;
        let u = self.users.len();
        self.users.insert(id.to_string(), u);
        self.user_attrs.push(a);
        Ok(u)
    }

    fn intern_item(&mut self, id: &str, attrs: Option<&[f64]>) -> Result<usize> {
        if let Some(&i) = self.items.get(id) {
            return Ok(i);
        }
        let a = Self::check_attrs(self.q, attrs, "item")?;
        let i = self.items.len();
        self.items.insert(id.to_string(), i);
        self.item_attrs.push(a);
        Ok(i)
    }

    /// Decayed raw interaction matrix for the current stage.
    fn decayed_matrix(&self) -> Result<SparseMatrix> {
        let mut r = SparseMatrix::new(self.users.len(), self.items.len());
        for ev in &self.history {
            r.add(ev.user, ev.item, self.current_weight(ev.t))?;
        }
        Ok(r)
    }

    fn attr_matrix(rows: &[Vec<f64>], width: usize) -> Result<SparseMatrix> {
        SparseMatrix::from_triplets(
            rows.len(),
            width,
            rows.iter()
                .enumerate()
                .flat_map(|(r, v)| v.iter().enumerate().filter(|(_, x)| **x != 0.0).map(move |(c, &x)| (r, c, x))),
        )
    }

    /// Offline factorisation of everything seen so far under the current
    /// stage parameters.
    fn rebuild(&mut self) -> Result<()> {
        let cfg = &self.config;
        let raw = self.decayed_matrix()?;
        let scalers = DegreeScalers::from_matrix(&raw, cfg.alpha, cfg.degree_floor)?;
        let r = normalize(&raw, &scalers)?;
        let k = cfg.ranks;
        let user_item = match factorize_slot(&r, k[0])? {
            Some(f) => f,
            None => return Err(Error::Degenerate("empty interaction matrix".into())),
        };
        let mut factors = PathFactors::plain(user_item);
        factors.user_attr_width = self.p;
        factors.item_attr_width = self.q;
        if self.p > 0 || self.q > 0 {
            let g = Self::attr_matrix(&self.user_attrs, self.p)?;
            let h = Self::attr_matrix(&self.item_attrs, self.q)?;
            let (gtr, rh, gtrh) = derive_matrices(&r, &g, &h)?;
            factors.user_attr = factorize_slot(&g, k[1])?;
            factors.item_attr = factorize_slot(&h, k[2])?;
            factors.attr_item = factorize_slot(&gtr, k[3])?;
            factors.user_item_attr = factorize_slot(&rh, k[4])?;
            factors.attr_attr = factorize_slot(&gtrh, k[5])?;
        }
        self.snapshot = factors.user_item.clone();
        self.bundle = build_path_embeddings(factors, cfg.path_weights, cfg.gamma, scalers)?;
        self.exact = r;
        self.dirty = false;
        self.stage.events_in_stage = 0;
        self.stage.monitor_distance = 0.0;
        Ok(())
    }

    /// Registers a user without an interaction (e.g. a cold-start user whose
    /// attributes are known). Returns its index.
    pub fn register_user(&mut self, id: &str, attrs: Option<&[f64]>) -> Result<usize> {
        if let Some(&u) = self.users.get(id) {
            return Ok(u);
        }
        let u = self.intern_user(id, attrs)?;
        self.grow_users()?;
        if self.config.online {
            self.insert_user_attr_row(u)?;
        }
        self.dirty = true;
        Ok(u)
    }

    pub fn register_item(&mut self, id: &str, attrs: Option<&[f64]>) -> Result<usize> {
        if let Some(&i) = self.items.get(id) {
            return Ok(i);
        }
        let i = self.intern_item(id, attrs)?;
        self.grow_items()?;
        if self.config.online {
            self.insert_item_attr_row(i)?;
        }
        self.dirty = true;
        Ok(i)
    }

    fn grow_users(&mut self) -> Result<()> {
        let m = self.users.len();
        let n = self.items.len();
        let f = self.bundle.factors_mut();
        f.user_item = extend_dims(&f.user_item, m, n)?;
        if let Some(g) = f.user_attr.as_mut() {
            *g = extend_dims(g, m, g.cols())?;
        }
        if let Some(rh) = f.user_item_attr.as_mut() {
            *rh = extend_dims(rh, m, rh.cols())?;
        }
        self.bundle.scalers_mut().extend(m, n);
        self.snapshot = extend_dims(&self.snapshot, m, n)?;
        self.exact.grow(m, n)?;
        Ok(())
    }

    fn grow_items(&mut self) -> Result<()> {
        let m = self.users.len();
        let n = self.items.len();
        let f = self.bundle.factors_mut();
        f.user_item = extend_dims(&f.user_item, m, n)?;
        if let Some(h) = f.item_attr.as_mut() {
            *h = extend_dims(h, n, h.cols())?;
        }
        if let Some(gr) = f.attr_item.as_mut() {
            *gr = extend_dims(gr, gr.rows(), n)?;
        }
        self.bundle.scalers_mut().extend(m, n);
        self.snapshot = extend_dims(&self.snapshot, m, n)?;
        self.exact.grow(m, n)?;
        Ok(())
    }

    fn insert_user_attr_row(&mut self, u: usize) -> Result<()> {
        let m = self.users.len();
        let attrs = &self.user_attrs[u];
        if let Some(g) = self.bundle.factors_mut().user_attr.as_mut() {
            if !is_zero(attrs) {
                *g = brand_update(g, &unit(m, u, 1.0), attrs, 1.0)?;
            }
        }
        Ok(())
    }

    fn insert_item_attr_row(&mut self, i: usize) -> Result<()> {
        let n = self.items.len();
        let attrs = &self.item_attrs[i];
        if let Some(h) = self.bundle.factors_mut().item_attr.as_mut() {
            if !is_zero(attrs) {
                *h = brand_update(h, &unit(n, i, 1.0), attrs, 1.0)?;
            }
        }
        Ok(())
    }

    /// Folds one interaction into every factorisation and refreshes the
    /// monitor. Does not restart; see [`Engine::process`].
    pub fn ingest(&mut self, e: &EventRecord) -> Result<(usize, usize)> {
        let idx = self.processed;
        let t = self.check_time(idx, e.timestamp)?;
        let new_user = !self.users.contains_key(&e.user_id);
        let new_item = !self.items.contains_key(&e.item_id);
        let u = self.intern_user(&e.user_id, e.user_attrs.as_deref())?;
        let i = self.intern_item(&e.item_id, e.item_attrs.as_deref())?;
        if new_user {
            self.grow_users()?;
        }
        if new_item {
            self.grow_items()?;
        }
        self.history.push(Interaction { user: u, item: i, t });
        self.processed += 1;
        self.stage.events_in_stage += 1;

        if !self.config.online {
            return Ok((u, i));
        }
        if new_user {
            self.insert_user_attr_row(u)?;
        }
        if new_item {
            self.insert_item_attr_row(i)?;
        }

        let w = self.current_weight(t);
        let (m, n) = (self.users.len(), self.items.len());
        let scalers = self.bundle.scalers();
        let (uf, itf) = (scalers.user_factor(u), scalers.item_factor(i));
        self.exact.add(u, i, w * uf * itf)?;

        let gu = self.user_attrs[u].clone();
        let hi = self.item_attrs[i].clone();
        let eu = unit(m, u, uf);
        let ei = unit(n, i, itf);
        let f = self.bundle.factors_mut();
        f.user_item = brand_update(&f.user_item, &eu, &ei, w)?;
        // induced changes of the derived matrices:
        // G^T dR = w uf g_u (itf e_i)^T, dR H = w (uf e_u)(itf h_i)^T, ...
        if let Some(gr) = f.attr_item.as_mut() {
            if !is_zero(&gu) {
                *gr = brand_update(gr, &gu, &ei, w * uf)?;
            }
        }
        if let Some(rh) = f.user_item_attr.as_mut() {
            if !is_zero(&hi) {
                *rh = brand_update(rh, &eu, &hi, w * itf)?;
            }
        }
        if let Some(grh) = f.attr_attr.as_mut() {
            if !is_zero(&gu) && !is_zero(&hi) {
                *grh = brand_update(grh, &gu, &hi, w * uf * itf)?;
            }
        }
        self.stage.monitor_distance = factored_frobenius_distance(&self.snapshot, &self.bundle.factors().user_item)?;
        self.dirty = true;
        Ok((u, i))
    }

    /// Whether the active policy asks for a restart at time `now`.
    pub fn should_restart(&self, now: f64) -> bool {
        match self.config.policy {
            RestartPolicy::MonitorThreshold(th) => self.stage.monitor_distance > th,
            RestartPolicy::FixedTime(dt) => now - self.stage.start >= dt,
            RestartPolicy::FixedCount(c) => self.stage.events_in_stage >= c,
        }
    }

    /// Begins a new stage at `now`: `beta` scales with the stage start so
    /// that `beta_i / T_i` stays constant, then everything seen so far is
    /// refactorised offline.
    pub fn restart(&mut self, now: f64) -> Result<()> {
        if !(now.is_finite() && now > 0.0) {
            return Err(Error::Invalid(format!("restart time must be positive, got {now}")));
        }
        self.stage.index += 1;
        self.stage.start = now;
        self.stage.beta = self.config.beta * now / self.first_start;
        self.rebuild()?;
        self.restarts.push(self.processed.saturating_sub(1));
        Ok(())
    }

    /// Ingests an event and restarts when the policy fires. Returns whether
    /// a restart happened.
    pub fn process(&mut self, e: &EventRecord) -> Result<bool> {
        self.ingest(e)?;
        let now = self.last_t;
        let restarted = if self.should_restart(now) {
            let distance = self.stage.monitor_distance;
            self.restart(now)?;
            if self.config.trace {
                self.push_trace(now, distance, true);
            }
            true
        } else {
            if self.config.trace {
                self.push_trace(now, self.stage.monitor_distance, false);
            }
            false
        };
        Ok(restarted)
    }

    fn push_trace(&mut self, t: f64, distance: f64, restarted: bool) {
        self.trace.push(TraceRecord {
            event_idx: self.processed - 1,
            t,
            stage: if restarted { self.stage.index - 1 } else { self.stage.index },
            distance,
            restarted,
        });
    }

    /// Offline rank-`k1` factorisation of the exact stage matrix, for
    /// measuring how far the online factors have drifted.
    pub fn offline_user_item(&self) -> Result<FactoredMatrix> {
        let k = clamp_rank(self.config.ranks[0], self.exact.rows(), self.exact.cols());
        truncated_svd(&self.exact, k)
    }

    /// `||offline - online||_F` for the user-item slot.
    pub fn true_error(&self) -> Result<f64> {
        factored_frobenius_distance(&self.offline_user_item()?, self.user_item_factors())
    }

    /// Items a user has interacted with (indices, chronological).
    pub fn user_items(&self, u: usize) -> Vec<usize> {
        self.history.iter().filter(|ev| ev.user == u).map(|ev| ev.item).collect()
    }

    pub(crate) fn interactions(&self) -> &[Interaction] {
        &self.history
    }
}

fn widths(history: &[EventRecord]) -> Result<(usize, usize)> {
    let mut p = 0;
    let mut q = 0;
    for e in history {
        if let Some(a) = &e.user_attrs {
            p = p.max(a.len());
        }
        if let Some(a) = &e.item_attrs {
            q = q.max(a.len());
        }
    }
    Ok((p, q))
}

fn placeholder_bundle(weights: [f64; 3], gamma: f64) -> Result<EmbeddingBundle> {
    build_path_embeddings(
        PathFactors::plain(FactoredMatrix::zeros(0, 0, 0)),
        weights,
        gamma,
        DegreeScalers::new(Vec::new(), Vec::new(), 0.0)?,
    )
}
