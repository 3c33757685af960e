use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::time::Instant;

use crate::config::{RunConfig, Task};
use crate::data::{Dataset, EventRecord};
use crate::engine::{Engine, EngineConfig, RestartPolicy, TraceRecord};
use crate::error::{Error, Result};
use crate::predictor::{rank_of, top_k, Predictor, PredictorConfig};

use super::{mrr_and_hit, recall_at_k, Curve, EvalReport};

/// Per-user (or per-event) metric values tagged with the user id.
#[derive(Clone, Debug, PartialEq)]
pub struct UserScore {
    pub user_id: String,
    pub metrics: BTreeMap<String, f64>,
}

/// Registers every item of `events` in first-appearance order so all of
/// them can be ranked.
fn register_catalogue(engine: &mut Engine, events: &[EventRecord]) -> Result<()> {
    for e in events {
        if engine.item_index(&e.item_id).is_none() {
            engine.register_item(&e.item_id, e.item_attrs.as_deref())?;
        }
    }
    Ok(())
}

fn stage_start(events: &[EventRecord]) -> Result<f64> {
    events
        .last()
        .map(|e| e.timestamp)
        .ok_or_else(|| Error::Degenerate("empty training window".into()))
}

/// Evaluates future-item recommendation for users of `eval`, with the model
/// fitted on `fit` and frozen.
fn future_item_eval(
    cfg: &RunConfig,
    ecfg: &EngineConfig,
    pcfg: &PredictorConfig,
    all: &[EventRecord],
    fit: &[EventRecord],
    eval: &[EventRecord],
) -> Result<(f64, Vec<UserScore>)> {
    let mut engine = Engine::init(fit, stage_start(fit)?, ecfg.clone())?;
    register_catalogue(&mut engine, all)?;
    let mut users: Vec<&EventRecord> = Vec::new();
    let mut truth: HashMap<&str, HashSet<usize>> = HashMap::new();
    for e in eval {
        let t = truth.entry(e.user_id.as_str()).or_default();
        if t.is_empty() {
            users.push(e);
        }
        t.insert(engine.item_index(&e.item_id).expect("catalogue is complete"));
    }
    // register cold users before scoring so the order of evaluation does
    // not matter
    let idx: Vec<usize> = users
        .iter()
        .map(|e| engine.register_user(&e.user_id, e.user_attrs.as_deref()))
        .collect::<Result<_>>()?;
    if engine.attr_widths() != (0, 0) {
        // refit so the attribute factorizations include cold users and
        // catalogue items; the interaction matrix is unchanged
        let start = engine.stage().start;
        engine.restart(start)?;
    }
    let mut seen: HashMap<usize, HashSet<usize>> = HashMap::new();
    if cfg.exclude_seen() {
        for e in fit {
            let u = engine.user_index(&e.user_id).expect("fitted user");
            seen.entry(u).or_default().insert(engine.item_index(&e.item_id).expect("fitted item"));
        }
    }
    let mut predictor = Predictor::new(pcfg.clone())?;
    predictor.seed(&engine);
    let empty = HashSet::new();
    let key = format!("recall@{}", cfg.top_k);
    let mut tops = Vec::with_capacity(users.len());
    let mut truths = Vec::with_capacity(users.len());
    let mut per_user = Vec::with_capacity(users.len());
    for (e, &u) in users.iter().zip(&idx) {
        let scores = predictor.scores(&mut engine, u)?;
        let excl = seen.get(&u).unwrap_or(&empty);
        let top = top_k(&scores, cfg.top_k, &|i| excl.contains(&i));
        let t = truth[e.user_id.as_str()].clone();
        let r = recall_at_k(std::slice::from_ref(&top), std::slice::from_ref(&t), cfg.top_k)?;
        per_user.push(UserScore {
            user_id: e.user_id.clone(),
            metrics: BTreeMap::from([(key.clone(), r)]),
        });
        tops.push(top);
        truths.push(t);
    }
    Ok((recall_at_k(&tops, &truths, cfg.top_k)?, per_user))
}

/// Trains on the training split, freezes the model and ranks unseen items
/// for every user of the evaluation split. Reports validation recall
/// (fit on train) and test recall (fit on train+valid).
pub fn run_future_item_recommendation(cfg: &RunConfig, ds: &Dataset) -> Result<EvalReport> {
    future_item_with(cfg, &cfg.engine_config()?, &cfg.predictor_config(), ds)
}

fn future_item_with(cfg: &RunConfig, ecfg: &EngineConfig, pcfg: &PredictorConfig, ds: &Dataset) -> Result<EvalReport> {
    let started = Instant::now();
    let ev = &ds.events;
    let (a, b, c) = cfg.split.bounds(ev.len());
    let mut ecfg = ecfg.clone();
    ecfg.online = false;
    ecfg.policy = RestartPolicy::never();
    let mut report = EvalReport::new(Task::FutureItem.as_str(), cfg.echo());
    let key = format!("recall@{}", cfg.top_k);
    if b > a {
        let (r, _) = future_item_eval(cfg, &ecfg, pcfg, &ev[..c], &ev[..a], &ev[a..b])?;
        report.metrics.insert(format!("valid_{key}"), r);
    }
    if c > b {
        let (r, per_user) = future_item_eval(cfg, &ecfg, pcfg, &ev[..c], &ev[..b], &ev[b..c])?;
        report.metrics.insert(key, r);
        report.stats.insert("test_users".into(), per_user.len() as f64);
        if !cfg.group_by.is_empty() {
            let known: HashSet<&str> = ev[..b].iter().map(|e| e.user_id.as_str()).collect();
            let labels = user_groups(&ev[..c], &cfg.group_by, &known);
            add_groups(&mut report, &per_user, &labels);
            add_dataset_groups(&mut report, &ev[..c], &cfg.group_by, &known);
        }
    }
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

pub(crate) struct StreamOutcome {
    pub valid_ranks: Vec<usize>,
    pub test_ranks: Vec<usize>,
    pub test_users: Vec<String>,
    pub restart_events: Vec<usize>,
    pub trace: Vec<TraceRecord>,
}

/// Streams `events[train_end..test_end]`: predict, then ingest. Restarts
/// follow the engine policy, plus any stream indices in `schedule`.
pub(crate) fn stream_next_interaction(
    ecfg: &EngineConfig,
    pcfg: &PredictorConfig,
    events: &[EventRecord],
    bounds: (usize, usize, usize),
    exclude_seen: bool,
    schedule: Option<&BTreeSet<usize>>,
) -> Result<StreamOutcome> {
    let (a, b, c) = bounds;
    let train = &events[..a];
    let mut engine = Engine::init(train, stage_start(train)?, ecfg.clone())?;
    register_catalogue(&mut engine, &events[..c])?;
    let mut predictor = Predictor::new(pcfg.clone())?;
    predictor.seed(&engine);
    let mut seen: HashMap<usize, HashSet<usize>> = HashMap::new();
    if exclude_seen {
        for e in train {
            let u = engine.user_index(&e.user_id).expect("trained user");
            seen.entry(u).or_default().insert(engine.item_index(&e.item_id).expect("trained item"));
        }
    }
    let empty = HashSet::new();
    let mut out = StreamOutcome {
        valid_ranks: Vec::with_capacity(b - a),
        test_ranks: Vec::with_capacity(c - b),
        test_users: Vec::with_capacity(c - b),
        restart_events: Vec::new(),
        trace: Vec::new(),
    };
    for (j, e) in events[a..c].iter().enumerate() {
        let u = engine.register_user(&e.user_id, e.user_attrs.as_deref())?;
        let i = engine.item_index(&e.item_id).expect("catalogue is complete");
        let scores = predictor.scores(&mut engine, u)?;
        let excl = seen.get(&u).unwrap_or(&empty);
        let rank = rank_of(&scores, i, &|x| excl.contains(&x));
        if a + j < b {
            out.valid_ranks.push(rank);
        } else {
            out.test_ranks.push(rank);
            out.test_users.push(e.user_id.clone());
        }
        let mut restarted = engine.process(e)?;
        if schedule.is_some_and(|s| s.contains(&j)) {
            engine.restart(e.timestamp)?;
            restarted = true;
        }
        if restarted {
            predictor.reseed_snapshots();
        }
        predictor.observe(&mut engine, u, i, e.timestamp)?;
        if exclude_seen {
            seen.entry(u).or_default().insert(i);
        }
    }
    out.restart_events = engine.restart_events().to_vec();
    out.trace = engine.trace().to_vec();
    Ok(out)
}

fn rank_metrics(report: &mut EvalReport, prefix: &str, ranks: &[usize], k: usize) -> Result<()> {
    if ranks.is_empty() {
        return Ok(());
    }
    let (mrr, hit) = mrr_and_hit(ranks, k)?;
    report.metrics.insert(format!("{prefix}mrr"), mrr);
    report.metrics.insert(format!("{prefix}hit@{k}"), hit);
    Ok(())
}

/// Streams validation and test events through the live engine, predicting
/// each interaction before ingesting it.
pub fn run_next_interaction(cfg: &RunConfig, ds: &Dataset) -> Result<EvalReport> {
    next_interaction_with(cfg, &cfg.engine_config()?, &cfg.predictor_config(), ds, None).map(|(r, _)| r)
}

fn next_interaction_with(
    cfg: &RunConfig,
    ecfg: &EngineConfig,
    pcfg: &PredictorConfig,
    ds: &Dataset,
    schedule: Option<&BTreeSet<usize>>,
) -> Result<(EvalReport, Vec<usize>)> {
    let started = Instant::now();
    let ev = &ds.events;
    let bounds = cfg.split.bounds(ev.len());
    let out = stream_next_interaction(ecfg, pcfg, ev, bounds, cfg.exclude_seen(), schedule)?;
    let mut report = EvalReport::new(Task::NextInteraction.as_str(), cfg.echo());
    rank_metrics(&mut report, "valid_", &out.valid_ranks, cfg.top_k)?;
    rank_metrics(&mut report, "", &out.test_ranks, cfg.top_k)?;
    report.restart_count = out.restart_events.len();
    if !out.trace.is_empty() {
        let mut c = Curve::new(&["event_idx", "t", "stage", "distance", "restarted"]);
        for r in &out.trace {
            c.push(vec![r.event_idx as f64, r.t, r.stage as f64, r.distance, r.restarted as u8 as f64]);
        }
        report.curves.insert("trace".into(), c);
    }
    if !cfg.group_by.is_empty() && !out.test_ranks.is_empty() {
        let k = cfg.top_k;
        let per_event: Vec<UserScore> = out
            .test_users
            .iter()
            .zip(&out.test_ranks)
            .map(|(u, &r)| UserScore {
                user_id: u.clone(),
                metrics: BTreeMap::from([
                    ("mrr".to_string(), if r == usize::MAX { 0.0 } else { 1.0 / r as f64 }),
                    (format!("hit@{k}"), (r <= k) as u8 as f64),
                ]),
            })
            .collect();
        let (_, b, c) = bounds;
        let known: HashSet<&str> = ev[..b].iter().map(|e| e.user_id.as_str()).collect();
        let labels = user_groups(&ev[..c], &cfg.group_by, &known);
        add_groups(&mut report, &per_event, &labels);
    }
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok((report, out.restart_events))
}

pub fn run_task(cfg: &RunConfig, ds: &Dataset) -> Result<EvalReport> {
    match cfg.task {
        Task::FutureItem => run_future_item_recommendation(cfg, ds),
        Task::NextInteraction => run_next_interaction(cfg, ds),
    }
}

/// Predictions of the Last-k baseline: before each stream event, the user's
/// `k` most recent distinct items, newest first.
pub fn last_k_baseline<'a>(prior: &'a [EventRecord], stream: &'a [EventRecord], k: usize) -> Vec<Vec<String>> {
    fn push<'a>(recent: &mut HashMap<&'a str, VecDeque<&'a str>>, e: &'a EventRecord, k: usize) {
        let q = recent.entry(e.user_id.as_str()).or_default();
        let item = e.item_id.as_str();
        if let Some(p) = q.iter().position(|x| *x == item) {
            q.remove(p);
        }
        q.push_front(item);
        q.truncate(k);
    }
    let mut recent: HashMap<&str, VecDeque<&str>> = HashMap::new();
    for e in prior {
        push(&mut recent, e, k);
    }
    let mut out = Vec::with_capacity(stream.len());
    for e in stream {
        let preds = recent
            .get(e.user_id.as_str())
            .map(|q| q.iter().map(|s| s.to_string()).collect())
            .unwrap_or_default();
        out.push(preds);
        push(&mut recent, e, k);
    }
    out
}

fn last_k_ranks(preds: &[Vec<String>], stream: &[EventRecord]) -> Vec<usize> {
    preds
        .iter()
        .zip(stream)
        .map(|(p, e)| p.iter().position(|x| *x == e.item_id).map_or(usize::MAX, |r| r + 1))
        .collect()
}

fn variant_row(report: &EvalReport) -> BTreeMap<String, f64> {
    let mut row = report.metrics.clone();
    row.insert("restarts".into(), report.restart_count as f64);
    row
}

/// The ablation grid for the configured task, one labelled row per
/// variant. Future-item: A (no modeller, no reconstruction), B (no
/// modeller), C (no reconstruction) and the full model. Next-interaction:
/// Last-1, Last-10, D (frozen), E (offline restarts at the points where G
/// restarted), F (online, no restart), G (online + monitor), H (G + decay),
/// I (G + attention) and the full model.
pub fn run_ablation(cfg: &RunConfig, ds: &Dataset) -> Result<EvalReport> {
    let started = Instant::now();
    let ecfg = cfg.engine_config()?;
    let pcfg = cfg.predictor_config();
    let mut report = EvalReport::new(&format!("ablation-{}", cfg.task.as_str()), cfg.echo());
    match cfg.task {
        Task::FutureItem => {
            let no_model = |e: &mut EngineConfig, p: &mut PredictorConfig| {
                e.beta = 0.0;
                p.lambda = 0.0;
            };
            let no_recon = |e: &mut EngineConfig| {
                e.alpha = 0.0;
                e.gamma = 0.5;
            };
            let variants: [(&str, bool, bool); 4] = [("A", false, false), ("B", false, true), ("C", true, false), ("full", true, true)];
            for (label, modeller, recon) in variants {
                let (mut e, mut p) = (ecfg.clone(), pcfg.clone());
                if !modeller {
                    no_model(&mut e, &mut p);
                }
                if !recon {
                    no_recon(&mut e);
                }
                let r = future_item_with(cfg, &e, &p, ds)?;
                report.variants.insert(label.into(), variant_row(&r));
            }
            if let Some(full) = report.variants.get("full") {
                report.metrics = full.iter().filter(|(k, _)| k.contains('@')).map(|(k, v)| (k.clone(), *v)).collect();
            }
        }
        Task::NextInteraction => {
            let ev = &ds.events;
            let (a, b, c) = cfg.split.bounds(ev.len());
            let k = cfg.top_k;
            for (label, depth) in [("last-1", 1usize), ("last-10", 10)] {
                let preds = last_k_baseline(&ev[..a], &ev[a..c], depth);
                let ranks = last_k_ranks(&preds, &ev[a..c]);
                let (mrr, hit) = mrr_and_hit(&ranks[b - a..], k)?;
                let mut row = BTreeMap::from([("mrr".to_string(), mrr), (format!("hit@{k}"), hit)]);
                if depth == 1 {
                    // reported as Hit@1 in both columns
                    let (_, hit1) = mrr_and_hit(&ranks[b - a..], 1)?;
                    row.insert("hit@1".into(), hit1);
                    row.insert(format!("hit@{k}"), hit1);
                }
                report.variants.insert(label.into(), row);
            }
            let base = {
                let mut e = ecfg.clone();
                e.beta = 0.0;
                e
            };
            let p0 = PredictorConfig { lambda: 0.0, ..pcfg.clone() };
            let (g, g_restarts) = next_interaction_with(cfg, &base, &p0, ds, None)?;
            let schedule: BTreeSet<usize> = g_restarts.into_iter().collect();
            let frozen = EngineConfig {
                online: false,
                policy: RestartPolicy::never(),
                ..base.clone()
            };
            let (d, _) = next_interaction_with(cfg, &frozen, &p0, ds, None)?;
            let (e, _) = next_interaction_with(cfg, &frozen, &p0, ds, Some(&schedule))?;
            let online_only = EngineConfig {
                policy: RestartPolicy::never(),
                ..base.clone()
            };
            let (f, _) = next_interaction_with(cfg, &online_only, &p0, ds, None)?;
            let (h, _) = next_interaction_with(cfg, &EngineConfig { beta: ecfg.beta, ..base.clone() }, &p0, ds, None)?;
            let (i, _) = next_interaction_with(cfg, &base, &pcfg, ds, None)?;
            let (full, _) = next_interaction_with(cfg, &ecfg, &pcfg, ds, None)?;
            for (label, r) in [("D", &d), ("E", &e), ("F", &f), ("G", &g), ("H", &h), ("I", &i), ("full", &full)] {
                report.variants.insert(label.into(), variant_row(r));
            }
            report.metrics = full.metrics.clone();
            report.restart_count = full.restart_count;
        }
    }
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Group labels per user: `cold_start=yes|no` (absent from `known`) and
/// `user_attr_<j>=<value>` from the user's first attribute vector.
pub fn user_groups(events: &[EventRecord], grouping: &[String], known: &HashSet<&str>) -> HashMap<String, Vec<String>> {
    let mut out: HashMap<String, Vec<String>> = HashMap::new();
    for e in events {
        if out.contains_key(&e.user_id) {
            continue;
        }
        let mut labels = Vec::with_capacity(grouping.len());
        for g in grouping {
            if g == "cold_start" {
                let cold = !known.contains(e.user_id.as_str());
                labels.push(format!("cold_start={}", if cold { "yes" } else { "no" }));
            } else if let Some(j) = g.strip_prefix("user_attr_").and_then(|j| j.parse::<usize>().ok()) {
                let v = e
                    .user_attrs
                    .as_ref()
                    .and_then(|a| a.get(j))
                    .map_or("na".to_string(), |x| x.to_string());
                labels.push(format!("user_attr_{j}={v}"));
            }
        }
        out.insert(e.user_id.clone(), labels);
    }
    out
}

/// Mean of every metric within each group, plus the group sizes.
pub fn group_metrics(
    scores: &[UserScore],
    labels: &HashMap<String, Vec<String>>,
) -> (BTreeMap<String, BTreeMap<String, f64>>, BTreeMap<String, usize>) {
    let mut sums: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in scores {
        let Some(ls) = labels.get(&s.user_id) else { continue };
        for l in ls {
            *counts.entry(l.clone()).or_default() += 1;
            let acc = sums.entry(l.clone()).or_default();
            for (k, v) in &s.metrics {
                *acc.entry(k.clone()).or_default() += v;
            }
        }
    }
    for (l, acc) in sums.iter_mut() {
        let n = counts[l] as f64;
        acc.values_mut().for_each(|v| *v /= n);
    }
    (sums, counts)
}

fn add_groups(report: &mut EvalReport, scores: &[UserScore], labels: &HashMap<String, Vec<String>>) {
    let (groups, counts) = group_metrics(scores, labels);
    report.groups = groups;
    for (l, n) in counts {
        report.stats.insert(format!("group_size/{l}"), n as f64);
    }
}

fn add_dataset_groups(report: &mut EvalReport, events: &[EventRecord], grouping: &[String], known: &HashSet<&str>) {
    let labels = user_groups(events, grouping, known);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for ls in labels.values() {
        for l in ls {
            *counts.entry(l.clone()).or_default() += 1;
        }
    }
    for (l, n) in counts {
        report.stats.insert(format!("dataset_users/{l}"), n as f64);
    }
}
