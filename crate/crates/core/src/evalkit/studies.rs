use std::collections::BTreeMap;
use std::time::Instant;

use crate::config::RunConfig;
use crate::data::{Dataset, EventRecord};
use crate::engine::{Engine, EngineConfig, RestartPolicy};
use crate::error::{Error, Result};

use super::tasks::stream_next_interaction;
use super::{mrr_and_hit, pearson, spearman, Curve, EvalReport};

/// Evenly spaced 0-based checkpoint indices over `n` stream events; the last
/// checkpoint is the last event.
fn checkpoints(n: usize, count: usize) -> Vec<usize> {
    let count = count.clamp(1, n.max(1));
    let mut out: Vec<usize> = (1..=count).map(|c| (c * n / count).max(1) - 1).collect();
    out.dedup();
    out
}

struct Replay {
    mean_error: f64,
    errors: Vec<f64>,
    restarts: usize,
}

/// Streams `stream` under `policy`, recording the true error at each
/// checkpoint.
fn replay(
    ecfg: &EngineConfig,
    history: &[EventRecord],
    stream: &[EventRecord],
    policy: RestartPolicy,
    checks: &[usize],
) -> Result<Replay> {
    let cfg = EngineConfig {
        policy,
        online: true,
        trace: false,
        ..ecfg.clone()
    };
    let start = history.last().map(|e| e.timestamp).unwrap_or(0.0);
    let mut engine = Engine::init(history, start, cfg)?;
    let mut errors = Vec::with_capacity(checks.len());
    let mut next = 0;
    for (j, e) in stream.iter().enumerate() {
        engine.process(e)?;
        if next < checks.len() && checks[next] == j {
            errors.push(engine.true_error()?);
            next += 1;
        }
    }
    let mean_error = if errors.is_empty() {
        0.0
    } else {
        errors.iter().sum::<f64>() / errors.len() as f64
    };
    Ok(Replay {
        mean_error,
        errors,
        restarts: engine.restart_events().len(),
    })
}

/// Compares Monitor, FixedCount and FixedTime restarts at equal restart
/// counts. The model is initialised on the training split and every later
/// event is streamed. Monitor thresholds are fractions of the true error
/// reached by pure online updating; the other policies are tuned to the
/// number of restarts Monitor made.
pub fn restart_policy_study(cfg: &RunConfig, ds: &Dataset) -> Result<EvalReport> {
    let started = Instant::now();
    let ecfg = cfg.engine_config()?;
    let ev = &ds.events;
    let (a, _, _) = cfg.split.bounds(ev.len());
    let (history, stream) = ev.split_at(a);
    if stream.is_empty() {
        return Err(Error::Degenerate("nothing to stream after the training split".into()));
    }
    let checks = checkpoints(stream.len(), cfg.study_checkpoints);
    let span = stream.last().unwrap().timestamp - history.last().map_or(0.0, |e| e.timestamp);

    let online = replay(&ecfg, history, stream, RestartPolicy::never(), &[stream.len() - 1])?;
    let total_error = online.errors[0];
    let mut report = EvalReport::new("study-monitor", cfg.echo());
    report.stats.insert("total_error".into(), total_error);

    let mut table = Curve::new(&[
        "frac",
        "threshold",
        "restarts_monitor",
        "error_monitor",
        "restarts_count",
        "error_count",
        "restarts_time",
        "error_time",
    ]);
    let mut errs = Curve::new(&["frac", "checkpoint", "event_idx", "monitor", "count", "time"]);
    let (mut sum_m, mut sum_c, mut sum_t) = (0.0, 0.0, 0.0);
    for &frac in &cfg.monitor_fracs {
        let threshold = frac * total_error;
        if !(threshold > 0.0) {
            return Err(Error::Degenerate("pure online updating accumulated no error".into()));
        }
        let m = replay(&ecfg, history, stream, RestartPolicy::MonitorThreshold(threshold), &checks)?;
        let r = m.restarts;
        let count = RestartPolicy::FixedCount(stream.len() / (r + 1) + 1);
        let c = replay(&ecfg, history, stream, count, &checks)?;
        let t = matched_time_replay(&ecfg, history, stream, &checks, span, r)?;
        table.push(vec![
            frac,
            threshold,
            r as f64,
            m.mean_error,
            c.restarts as f64,
            c.mean_error,
            t.restarts as f64,
            t.mean_error,
        ]);
        for (n, &j) in checks.iter().enumerate() {
            errs.push(vec![frac, n as f64, j as f64, m.errors[n], c.errors[n], t.errors[n]]);
        }
        report.stats.insert(format!("restarts/{frac}"), r as f64);
        report.stats.insert(format!("error_monitor/{frac}"), m.mean_error);
        report.stats.insert(format!("error_count/{frac}"), c.mean_error);
        report.stats.insert(format!("error_time/{frac}"), t.mean_error);
        sum_m += m.mean_error;
        sum_c += c.mean_error;
        sum_t += t.mean_error;
    }
    if sum_m > 0.0 {
        report.stats.insert("gap_count".into(), sum_c / sum_m - 1.0);
        report.stats.insert("gap_time".into(), sum_t / sum_m - 1.0);
    }
    report.stats.insert("error_monitor".into(), sum_m / cfg.monitor_fracs.len().max(1) as f64);
    report.stats.insert("error_count".into(), sum_c / cfg.monitor_fracs.len().max(1) as f64);
    report.stats.insert("error_time".into(), sum_t / cfg.monitor_fracs.len().max(1) as f64);
    report.curves.insert("policies".into(), table);
    report.curves.insert("errors".into(), errs);
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// FixedTime replay whose interval is bisected until it restarts `target`
/// times (or the search budget runs out; the closest run is kept).
fn matched_time_replay(
    ecfg: &EngineConfig,
    history: &[EventRecord],
    stream: &[EventRecord],
    checks: &[usize],
    span: f64,
    target: usize,
) -> Result<Replay> {
    if !(span > 0.0) {
        return replay(ecfg, history, stream, RestartPolicy::never(), checks);
    }
    let mut lo = span / (target as f64 + 2.0) / 4.0; // many restarts
    let mut hi = span * 2.0; // none
    let mut interval = span / (target as f64 + 1.0);
    let mut best: Option<Replay> = None;
    for _ in 0..16 {
        let r = replay(ecfg, history, stream, RestartPolicy::FixedTime(interval), checks)?;
        let got = r.restarts;
        let better = best
            .as_ref()
            .map_or(true, |b| got.abs_diff(target) < b.restarts.abs_diff(target));
        if better {
            best = Some(r);
        }
        if got == target {
            break;
        }
        if got > target {
            lo = interval;
        } else {
            hi = interval;
        }
        interval = 0.5 * (lo + hi);
    }
    Ok(best.expect("at least one replay"))
}

/// Mean distance and true error for one interval offset.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationPoint {
    pub delta: usize,
    pub distance: f64,
    pub error: f64,
    pub samples: usize,
}

/// Splits the stream into `corr_intervals` equal-count intervals. For every
/// start interval `t` the model is rebuilt offline (with the decay rate of
/// the configured first stage), then updated online;
/// after `delta = 1..corr_max_delta` more intervals the monitor distance and
/// the true error are recorded. Per-delta means are normalised by their
/// maxima (distance raised to the power `m`) and compared by rank
/// correlation; the `m` with the highest Pearson value is reported.
pub fn correlation_study(cfg: &RunConfig, ds: &Dataset) -> Result<EvalReport> {
    let started = Instant::now();
    let ecfg = EngineConfig {
        policy: RestartPolicy::never(),
        online: true,
        trace: false,
        ..cfg.engine_config()?
    };
    let ev = &ds.events;
    let big_t = cfg.corr_intervals;
    let max_delta = cfg.corr_max_delta;
    if ev.len() < big_t {
        return Err(Error::Degenerate(format!("{} events cannot fill {big_t} intervals", ev.len())));
    }
    let bound = |t: usize| t * ev.len() / big_t;
    // every start keeps the decay rate beta / T of the configured first stage
    let (train_end, _, _) = cfg.split.bounds(ev.len());
    let reference = ev[train_end.max(1) - 1].timestamp;
    let mut sums = vec![(0.0, 0.0, 0usize); max_delta + 1];
    for t in 1..big_t {
        let history = &ev[..bound(t)];
        let start = history.last().unwrap().timestamp;
        if !(start > 0.0) {
            continue;
        }
        let beta = if reference > 0.0 { ecfg.beta * start / reference } else { ecfg.beta };
        let mut engine = Engine::init(history, start, EngineConfig { beta, ..ecfg.clone() })?;
        for delta in 1..=max_delta.min(big_t - t) {
            for e in &ev[bound(t + delta - 1)..bound(t + delta)] {
                engine.ingest(e)?;
            }
            let s = &mut sums[delta];
            s.0 += engine.monitor_distance();
            s.1 += engine.true_error()?;
            s.2 += 1;
        }
    }
    let points: Vec<CorrelationPoint> = (1..=max_delta)
        .filter(|&d| sums[d].2 > 0)
        .map(|d| CorrelationPoint {
            delta: d,
            distance: sums[d].0 / sums[d].2 as f64,
            error: sums[d].1 / sums[d].2 as f64,
            samples: sums[d].2,
        })
        .collect();
    let mut report = EvalReport::new("study-correlation", cfg.echo());
    let mut curve = Curve::new(&["delta", "m", "distance", "error", "x", "y"]);
    let mut best: Option<(u32, f64, f64)> = None;
    for &m in &cfg.corr_powers {
        let (x, y) = normalised(&points, m);
        let rho = spearman(&x, &y);
        let r = pearson(&x, &y);
        report.stats.insert(format!("spearman/m={m}"), rho);
        report.stats.insert(format!("pearson/m={m}"), r);
        for (p, (xi, yi)) in points.iter().zip(x.iter().zip(&y)) {
            curve.push(vec![p.delta as f64, m as f64, p.distance, p.error, *xi, *yi]);
        }
        if best.map_or(true, |(_, _, bp)| r > bp) {
            best = Some((m, rho, r));
        }
    }
    if let Some((m, rho, r)) = best {
        report.stats.insert("best_m".into(), m as f64);
        report.stats.insert("spearman".into(), rho);
        report.stats.insert("pearson".into(), r);
    }
    report.curves.insert("correlation".into(), curve);
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// `x = d^m / max(d^m)`, `y = e / max(e)` over all offsets.
pub(crate) fn normalised(points: &[CorrelationPoint], m: u32) -> (Vec<f64>, Vec<f64>) {
    let dm: Vec<f64> = points.iter().map(|p| p.distance.powi(m as i32)).collect();
    let e: Vec<f64> = points.iter().map(|p| p.error).collect();
    let scale = |v: &[f64]| {
        let mx = v.iter().cloned().fold(0.0, f64::max);
        v.iter().map(|x| if mx > 0.0 { x / mx } else { 0.0 }).collect::<Vec<_>>()
    };
    (scale(&dm), scale(&e))
}

/// Next-interaction accuracy as the training share shrinks; validation and
/// test shares stay as configured and follow the training window.
pub fn robustness_study(cfg: &RunConfig, ds: &Dataset) -> Result<EvalReport> {
    let started = Instant::now();
    let ecfg = cfg.engine_config()?;
    let pcfg = cfg.predictor_config();
    let mut report = EvalReport::new("study-robustness", cfg.echo());
    let k = cfg.top_k;
    let mut curve = Curve::new(&["train_frac", "mrr", &format!("hit@{k}")]);
    let mut mrrs = Vec::new();
    for &f in &cfg.robust_train_fracs {
        let mut split = cfg.split;
        split.train_frac = f;
        split.validate()?;
        let out = stream_next_interaction(
            &ecfg,
            &pcfg,
            &ds.events,
            split.bounds(ds.events.len()),
            cfg.exclude_seen(),
            None,
        )?;
        let (mrr, hit) = mrr_and_hit(&out.test_ranks, k)?;
        curve.push(vec![f, mrr, hit]);
        report
            .variants
            .insert(format!("train_frac={f}"), BTreeMap::from([("mrr".to_string(), mrr), (format!("hit@{k}"), hit)]));
        mrrs.push(mrr);
    }
    if !mrrs.is_empty() {
        let hi = mrrs.iter().cloned().fold(f64::MIN, f64::max);
        let lo = mrrs.iter().cloned().fold(f64::MAX, f64::min);
        report.stats.insert("mrr_spread".into(), hi - lo);
    }
    report.curves.insert("robustness".into(), curve);
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_spacing() {
        assert_eq!(checkpoints(10, 5), vec![1, 3, 5, 7, 9]);
        assert_eq!(checkpoints(3, 100), vec![0, 1, 2]);
        assert_eq!(checkpoints(10, 1), vec![9]);
    }

    #[test]
    fn normalisation_by_overall_max() {
        let pts: Vec<CorrelationPoint> = [(1.0, 2.0), (2.0, 4.0), (4.0, 5.0)]
            .iter()
            .enumerate()
            .map(|(i, &(d, e))| CorrelationPoint {
                delta: i + 1,
                distance: d,
                error: e,
                samples: 1,
            })
            .collect();
        let (x, y) = normalised(&pts, 2);
        assert_eq!(x, vec![1.0 / 16.0, 4.0 / 16.0, 1.0]);
        assert_eq!(y, vec![0.4, 0.8, 1.0]);
        assert_eq!(spearman(&x, &y), 1.0);
    }
}
