//! Helpers shared by the integration, property and acceptance targets.
//! Each check returns `Err(description)` on the first violation.
#![allow(dead_code)]

use std::path::PathBuf;

use dynembed::data::{Dataset, EventRecord};
use dynembed::engine::{decay_weight, Engine, EngineConfig, RestartPolicy};
use dynembed::evalkit::{mrr_and_hit, pearson, spearman, SplitSpec};
use dynembed::graphmat::{denormalize, frequency_weights, normalize, DegreeScalers};
use dynembed::linalg::{brand_update, factored_frobenius_distance, truncated_svd_dense, FactoredMatrix, SparseMatrix};
use dynembed::predictor::{fuse, short_term, top_k};
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = std::result::Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `DYNEMBED_DATA_DIR`, else `<workspace>/data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os("DYNEMBED_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data"))
}

pub fn configs_dir() -> PathBuf {
    workspace_root().join("configs")
}

fn workspace_root() -> PathBuf {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    crate_dir.ancestors().nth(2).expect("crate sits two levels below the root").to_path_buf()
}

pub fn frob(a: &Mat<f64>) -> f64 {
    a.norm_l2()
}

pub fn one_hot(n: usize, j: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[j] = 1.0;
    v
}

pub fn random_dense(r: &mut ChaCha8Rng, m: usize, n: usize) -> Mat<f64> {
    Mat::from_fn(m, n, |_, _| r.gen_range(-1.0..1.0))
}

/// Random rank-1 stream applied to an initially zero factorization.
/// Entries stay inside a `rows x cols` corner so the true rank is bounded
/// by `min(rows, cols)`; returns the online factors and the exact sum.
pub fn random_stream(
    r: &mut ChaCha8Rng,
    m: usize,
    n: usize,
    k: usize,
    len: usize,
) -> Result<(FactoredMatrix, Mat<f64>), String> {
    let mut f = FactoredMatrix::zeros(m, n, k);
    let mut exact = Mat::<f64>::zeros(m, n);
    let rows = k.min(m);
    for _ in 0..len {
        let u = r.gen_range(0..rows);
        let i = r.gen_range(0..n);
        let w = r.gen_range(0.1..2.0);
        f = brand_update(&f, &one_hot(m, u), &one_hot(n, i), w).map_err(|e| e.to_string())?;
        exact[(u, i)] += w;
    }
    Ok((f, exact))
}

/// Online rank-1 updates reproduce the offline truncated SVD when the rank
/// budget covers the true rank.
pub fn check_oracle_equivalence(seed: u64) -> Check {
    let mut r = rng(seed);
    let m = r.gen_range(1..=10);
    let n = r.gen_range(1..=10);
    let k = r.gen_range(1..=m.min(n));
    let len = r.gen_range(1..=40);
    let (f, exact) = random_stream(&mut r, m, n, k, len)?;
    let off = truncated_svd_dense(exact.as_ref(), k).map_err(|e| e.to_string())?;
    let err = frob(&(f.reconstruct() - off.reconstruct()));
    if err > 1e-6 {
        return Err(format!("seed {seed}: {m}x{n} k={k} len={len}: error {err:e}"));
    }
    Ok(())
}

fn random_factored(r: &mut ChaCha8Rng, m: usize, n: usize, k: usize, drift: usize) -> Result<FactoredMatrix, String> {
    let a = random_dense(r, m, n);
    let mut f = truncated_svd_dense(a.as_ref(), k).map_err(|e| e.to_string())?;
    for _ in 0..drift {
        let u: Vec<f64> = (0..m).map(|_| r.gen_range(-1.0..1.0)).collect();
        let i: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        f = brand_update(&f, &u, &i, r.gen_range(0.1..1.0)).map_err(|e| e.to_string())?;
    }
    Ok(f)
}

/// The factored distance equals the materialized one.
pub fn check_factored_distance(seed: u64) -> Check {
    let mut r = rng(seed);
    let m = r.gen_range(2..=30);
    let n = r.gen_range(2..=30);
    let k1 = r.gen_range(1..=m.min(n));
    let k2 = r.gen_range(1..=m.min(n));
    let d1 = r.gen_range(0..5);
    let f1 = random_factored(&mut r, m, n, k1, d1)?;
    let f2 = if r.gen_bool(0.3) {
        // nearby pair: one more update
        brand_update(&f1, &one_hot(m, 0), &one_hot(n, 0), 1e-3).map_err(|e| e.to_string())?
    } else {
        let d2 = r.gen_range(0..5);
        random_factored(&mut r, m, n, k2, d2)?
    };
    let got = factored_frobenius_distance(&f1, &f2).map_err(|e| e.to_string())?;
    let want = frob(&(f1.reconstruct() - f2.reconstruct()));
    if (got - want).abs() > 1e-6 * want.max(1e-12) {
        return Err(format!("seed {seed}: factored {got:e} vs materialized {want:e}"));
    }
    Ok(())
}

pub fn check_distance_metric(seed: u64) -> Check {
    let mut r = rng(seed);
    let (m, n) = (r.gen_range(2..=12), r.gen_range(2..=12));
    let k = r.gen_range(1..=m.min(n));
    let a = random_factored(&mut r, m, n, k, 2)?;
    let b = random_factored(&mut r, m, n, k, 2)?;
    let c = random_factored(&mut r, m, n, k, 2)?;
    let d = |x: &FactoredMatrix, y: &FactoredMatrix| factored_frobenius_distance(x, y).map_err(|e| e.to_string());
    let (ab, ba, bc, ac) = (d(&a, &b)?, d(&b, &a)?, d(&b, &c)?, d(&a, &c)?);
    if (ab - ba).abs() > 1e-6 {
        return Err(format!("seed {seed}: asymmetric {ab} vs {ba}"));
    }
    if ac > ab + bc + 1e-6 {
        return Err(format!("seed {seed}: triangle violated {ac} > {ab} + {bc}"));
    }
    Ok(())
}

/// Orthonormality of the bases degrades by at most 1e-3 over 100 updates.
pub fn check_orthonormality_drift(seed: u64) -> Check {
    let mut r = rng(seed);
    let (m, n) = (r.gen_range(10..=40), r.gen_range(10..=40));
    let k = r.gen_range(2..=8);
    let mut f = random_factored(&mut r, m, n, k, 0)?;
    for _ in 0..100 {
        let (u, i) = (r.gen_range(0..m), r.gen_range(0..n));
        f = brand_update(&f, &one_hot(m, u), &one_hot(n, i), r.gen_range(0.1..2.0)).map_err(|e| e.to_string())?;
    }
    let defect = f.orthonormality_defect();
    if defect > 1e-3 {
        return Err(format!("seed {seed}: defect {defect:e}"));
    }
    Ok(())
}

/// Truncation error does not grow with the rank.
pub fn check_error_monotone_in_rank(seed: u64) -> Check {
    let mut r = rng(seed);
    let (m, n) = (r.gen_range(2..=12), r.gen_range(2..=12));
    let a = random_dense(&mut r, m, n);
    let mut prev = f64::INFINITY;
    for k in 1..=m.min(n) {
        let f = truncated_svd_dense(a.as_ref(), k).map_err(|e| e.to_string())?;
        let err = frob(&(&a - f.reconstruct()));
        if err > prev + 1e-9 {
            return Err(format!("seed {seed}: error rose from {prev} to {err} at k={k}"));
        }
        prev = err;
    }
    Ok(())
}

/// A unit one-hot update changes the represented norm by at most 1.
pub fn check_one_hot_norm_growth(seed: u64) -> Check {
    let mut r = rng(seed);
    let (m, n) = (r.gen_range(2..=12), r.gen_range(2..=12));
    let k = r.gen_range(1..=m.min(n));
    let f = random_factored(&mut r, m, n, k, 0)?;
    let (u, i) = (r.gen_range(0..m), r.gen_range(0..n));
    let g = brand_update(&f, &one_hot(m, u), &one_hot(n, i), 1.0).map_err(|e| e.to_string())?;
    let (before, after) = (frob(&f.reconstruct()), frob(&g.reconstruct()));
    if after > before + 1.0 + 1e-9 {
        return Err(format!("seed {seed}: norm {before} -> {after}"));
    }
    Ok(())
}

pub fn random_sparse(r: &mut ChaCha8Rng, m: usize, n: usize, density: f64) -> SparseMatrix {
    let mut s = SparseMatrix::new(m, n);
    for u in 0..m {
        for i in 0..n {
            if r.gen_bool(density) {
                s.add(u, i, r.gen_range(0.1..5.0)).unwrap();
            }
        }
    }
    s
}

pub fn check_normalize_inverse(seed: u64) -> Check {
    let mut r = rng(seed);
    let (m, n) = (r.gen_range(1..=15), r.gen_range(1..=15));
    let x = random_sparse(&mut r, m, n, 0.4);
    let alpha = r.gen_range(0.0..3.0);
    let du: Vec<f64> = (0..m).map(|_| r.gen_range(0.05..20.0)).collect();
    let di: Vec<f64> = (0..n).map(|_| r.gen_range(0.05..20.0)).collect();
    let sc = DegreeScalers::with_floor(du, di, alpha, 1e-6).map_err(|e| e.to_string())?;
    let back = denormalize(normalize(&x, &sc).map_err(|e| e.to_string())?.to_dense().as_ref(), &sc)
        .map_err(|e| e.to_string())?;
    let dense = x.to_dense();
    for u in 0..m {
        for i in 0..n {
            let (a, b) = (dense[(u, i)], back[(u, i)]);
            if (a - b).abs() > 1e-10 * a.abs().max(1.0) {
                return Err(format!("seed {seed}: entry ({u},{i}) {a} -> {b}"));
            }
        }
    }
    Ok(())
}

/// `s^(2 gamma) / s` strictly decreases over `s > 1` for `gamma < 0.5`.
pub fn check_attenuation(seed: u64) -> Check {
    let mut r = rng(seed);
    let gamma = r.gen_range(0.01..0.49);
    let mut grid: Vec<f64> = (0..50).map(|_| r.gen_range(1.0001..1e4)).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    // frequency_weights works on a sorted spectrum; feed it descending values
    let desc: Vec<f64> = grid.iter().rev().copied().collect();
    let w = frequency_weights(&desc, gamma).map_err(|e| e.to_string())?;
    let ratio: Vec<f64> = w.iter().zip(&desc).map(|(wi, s)| wi * wi / s).collect();
    for j in 1..ratio.len() {
        // desc is decreasing in s, so the ratio must increase along it
        if !(ratio[j] > ratio[j - 1]) {
            return Err(format!("seed {seed}: gamma {gamma}: ratio not monotone at s={}", desc[j]));
        }
    }
    Ok(())
}

/// Decay ratios depend only on time differences when `beta / T` is shared.
pub fn check_memoryless_decay(seed: u64) -> Check {
    let mut r = rng(seed);
    let ti: f64 = r.gen_range(1.0..1e4);
    let tj: f64 = r.gen_range(1.0..1e4);
    let bi = r.gen_range(0.1..50.0);
    let bj = bi * tj / ti;
    let t1 = r.gen_range(0.0..ti);
    let dt = r.gen_range(0.0..ti.min(tj) * 0.5);
    let t3 = r.gen_range(0.0..tj);
    let lhs = decay_weight(t1 + dt, ti, bi) / decay_weight(t1, ti, bi);
    let rhs = decay_weight(t3 + dt, tj, bj) / decay_weight(t3, tj, bj);
    if (lhs - rhs).abs() > 1e-9 * lhs.abs().max(1.0) {
        return Err(format!("seed {seed}: {lhs} vs {rhs}"));
    }
    Ok(())
}

/// Random toy stream of string events, timestamps from 1.
pub fn toy_events(r: &mut ChaCha8Rng, users: usize, items: usize, len: usize) -> Vec<EventRecord> {
    let mut t = 1.0;
    (0..len)
        .map(|_| {
            t += r.gen_range(0.1..1.0);
            EventRecord::new(
                &format!("u{}", r.gen_range(0..users)),
                &format!("i{}", r.gen_range(0..items)),
                t,
            )
        })
        .collect()
}

/// Under restarts every stage keeps `beta / T` of the first one.
pub fn check_stage_beta_ratio(seed: u64) -> Check {
    let mut r = rng(seed);
    let ev = toy_events(&mut r, 6, 6, 60);
    let cfg = EngineConfig {
        ranks: [3, 0, 0, 0, 0, 0],
        beta: r.gen_range(0.5..20.0),
        policy: RestartPolicy::FixedCount(r.gen_range(1..8)),
        ..EngineConfig::default()
    };
    let mut eng = Engine::init(&ev[..20], ev[19].timestamp, cfg).map_err(|e| e.to_string())?;
    let rate = eng.stage().beta / eng.stage().start;
    for e in &ev[20..] {
        eng.process(e).map_err(|e| e.to_string())?;
        let now = eng.stage().beta / eng.stage().start;
        if (now - rate).abs() > 1e-9 * rate {
            return Err(format!("seed {seed}: stage {} ratio {now} vs {rate}", eng.stage().index));
        }
    }
    Ok(())
}

/// The monitor distance equals the materialized distance to the snapshot.
pub fn check_monitor_distance(seed: u64) -> Check {
    let mut r = rng(seed);
    let ev = toy_events(&mut r, 8, 8, 50);
    let cfg = EngineConfig {
        ranks: [r.gen_range(1..=4), 0, 0, 0, 0, 0],
        alpha: r.gen_range(0.0..1.0),
        beta: r.gen_range(0.0..5.0),
        ..EngineConfig::default()
    };
    let mut eng = Engine::init(&ev[..15], ev[14].timestamp, cfg).map_err(|e| e.to_string())?;
    for e in &ev[15..] {
        eng.ingest(e).map_err(|e| e.to_string())?;
        let want = frob(&(eng.user_item_factors().reconstruct() - eng.snapshot().reconstruct()));
        let got = eng.monitor_distance();
        if (got - want).abs() > 1e-6 * want.max(1.0) {
            return Err(format!("seed {seed}: monitor {got} vs {want}"));
        }
    }
    Ok(())
}

/// Mean true error after `j` online events, over many toy streams.
pub fn accumulation_curve(streams: u64, horizon: usize) -> Result<Vec<f64>, String> {
    let mut sums = vec![0.0; horizon];
    for seed in 0..streams {
        let mut r = rng(1000 + seed);
        let ev = toy_events(&mut r, 10, 10, 30 + horizon);
        let cfg = EngineConfig {
            ranks: [3, 0, 0, 0, 0, 0],
            ..EngineConfig::default()
        };
        let mut eng = Engine::init(&ev[..30], ev[29].timestamp, cfg).map_err(|e| e.to_string())?;
        for (j, e) in ev[30..].iter().enumerate() {
            eng.ingest(e).map_err(|e| e.to_string())?;
            sums[j] += eng.true_error().map_err(|e| e.to_string())?;
        }
    }
    Ok(sums.iter().map(|s| s / streams as f64).collect())
}

/// Distance and true error at the moments a monitor-driven engine restarts.
pub fn restart_moments(streams: u64, lo: f64, hi: f64) -> Result<(Vec<f64>, Vec<f64>), String> {
    let (mut d, mut e) = (Vec::new(), Vec::new());
    for seed in 0..streams {
        let mut r = rng(2000 + seed);
        let ev = toy_events(&mut r, 10, 10, 120);
        let threshold = r.gen_range(lo..hi);
        let cfg = EngineConfig {
            ranks: [3, 0, 0, 0, 0, 0],
            policy: RestartPolicy::MonitorThreshold(threshold),
            ..EngineConfig::default()
        };
        let mut eng = Engine::init(&ev[..30], ev[29].timestamp, cfg).map_err(|e| e.to_string())?;
        for x in &ev[30..] {
            eng.ingest(x).map_err(|e| e.to_string())?;
            if eng.should_restart(x.timestamp) {
                d.push(eng.monitor_distance());
                e.push(eng.true_error().map_err(|e| e.to_string())?);
                eng.restart(x.timestamp).map_err(|e| e.to_string())?;
            }
        }
    }
    Ok((d, e))
}

/// Residual of projecting `v` onto the span of `cols` (Gram-Schmidt).
pub fn span_residual(cols: &[Vec<f64>], v: &[f64]) -> f64 {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for c in cols {
        let mut w = c.clone();
        for q in &basis {
            let p: f64 = w.iter().zip(q).map(|(a, b)| a * b).sum();
            w.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
        }
        let nrm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 1e-10 {
            basis.push(w.iter().map(|x| x / nrm).collect());
        }
    }
    let mut res = v.to_vec();
    for q in &basis {
        let p: f64 = res.iter().zip(q).map(|(a, b)| a * b).sum();
        res.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
    }
    res.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn check_short_term_span(seed: u64) -> Check {
    let mut r = rng(seed);
    let k = r.gen_range(2..=16);
    let b = r.gen_range(1..k);
    let cols: Vec<Vec<f64>> = (0..b).map(|_| (0..k).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let e_long: Vec<f64> = (0..k).map(|_| r.gen_range(-1.0..1.0)).collect();
    let s = short_term(&cols, &e_long).map_err(|e| e.to_string())?;
    let scale = s.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    let res = span_residual(&cols, &s);
    if res > 1e-8 * scale {
        return Err(format!("seed {seed}: residual {res:e}"));
    }
    Ok(())
}

fn matvec(rows: &[Vec<f64>], e: &[f64]) -> Vec<f64> {
    rows.iter().map(|r| r.iter().zip(e).map(|(a, b)| a * b).sum()).collect()
}

/// Scaling the decay weights by `c` scales `e_short` by `c^6` (three factors
/// of `S` in `S'`, two copies of `S'`) and, with
/// `lambda = 1`, leaves the item ranking unchanged.
pub fn check_short_term_scaling(seed: u64) -> Check {
    let mut r = rng(seed);
    let k = r.gen_range(2..=12);
    let b = r.gen_range(1..=5);
    let n = r.gen_range(5..=40);
    let items: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let picks: Vec<usize> = (0..b).map(|_| r.gen_range(0..n)).collect();
    let weights: Vec<f64> = (0..b).map(|_| r.gen_range(0.1..1.0)).collect();
    let e_long: Vec<f64> = (0..k).map(|_| r.gen_range(-1.0..1.0)).collect();
    let c = r.gen_range(0.2..5.0);
    let cols = |s: f64| -> Vec<Vec<f64>> {
        picks
            .iter()
            .zip(&weights)
            .map(|(&i, w)| items[i].iter().map(|x| s * w * x).collect())
            .collect()
    };
    let s1 = short_term(&cols(1.0), &e_long).map_err(|e| e.to_string())?;
    let sc = short_term(&cols(c), &e_long).map_err(|e| e.to_string())?;
    let c6 = c.powi(6);
    for (a, b) in s1.iter().zip(&sc) {
        if (a * c6 - b).abs() > 1e-9 * b.abs().max(1e-9).max(a.abs() * c6) {
            return Err(format!("seed {seed}: {a} * c^6 != {b}"));
        }
    }
    let rank1 = top_k(&matvec(&items, &fuse(&s1, &e_long, 1.0)), n, &|_| false);
    let rankc = top_k(&matvec(&items, &fuse(&sc, &e_long, 1.0)), n, &|_| false);
    if rank1 != rankc {
        return Err(format!("seed {seed}: ranking changed under c = {c}"));
    }
    Ok(())
}

pub fn check_fuse_linear(seed: u64) -> Check {
    let mut r = rng(seed);
    let k = r.gen_range(1..=10);
    let s: Vec<f64> = (0..k).map(|_| r.gen_range(-5.0..5.0)).collect();
    let l: Vec<f64> = (0..k).map(|_| r.gen_range(-5.0..5.0)).collect();
    let (l1, l2, t) = (r.gen_range(0.0..1.0), r.gen_range(0.0..1.0), r.gen_range(0.0..1.0));
    let mix = fuse(&s, &l, t * l1 + (1.0 - t) * l2);
    let (a, b) = (fuse(&s, &l, l1), fuse(&s, &l, l2));
    for j in 0..k {
        let want = t * a[j] + (1.0 - t) * b[j];
        if (mix[j] - want).abs() > 1e-12 * want.abs().max(1.0) {
            return Err(format!("seed {seed}: not linear at {j}"));
        }
    }
    Ok(())
}

/// Appending zero columns to user and item embeddings keeps the ranking.
pub fn check_zero_column_padding(seed: u64) -> Check {
    let mut r = rng(seed);
    let (k, n, pad) = (r.gen_range(1..=8), r.gen_range(2..=30), r.gen_range(1..=5));
    let items: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let e: Vec<f64> = (0..k).map(|_| r.gen_range(-1.0..1.0)).collect();
    let padded: Vec<Vec<f64>> = items.iter().map(|v| v.iter().copied().chain(std::iter::repeat(0.0).take(pad)).collect()).collect();
    let ep: Vec<f64> = e.iter().copied().chain(std::iter::repeat(0.0).take(pad)).collect();
    let a = top_k(&matvec(&items, &e), n, &|_| false);
    let b = top_k(&matvec(&padded, &ep), n, &|_| false);
    if a != b {
        return Err(format!("seed {seed}: padding changed the ranking"));
    }
    Ok(())
}

/// Hit@K is non-decreasing in K and MRR is at least the Hit@1 share.
pub fn check_metric_bounds(seed: u64) -> Check {
    let mut r = rng(seed);
    let len = r.gen_range(1..=50);
    let ranks: Vec<usize> = (0..len)
        .map(|_| if r.gen_bool(0.1) { usize::MAX } else { r.gen_range(1..30) })
        .collect();
    let mut prev = 0.0;
    for k in 1..=30 {
        let (mrr, hit) = mrr_and_hit(&ranks, k).map_err(|e| e.to_string())?;
        if !(0.0..=1.0).contains(&mrr) || !(0.0..=1.0).contains(&hit) {
            return Err(format!("seed {seed}: metric out of range"));
        }
        if hit < prev {
            return Err(format!("seed {seed}: hit@{k} decreased"));
        }
        if k == 1 && mrr + 1e-15 < hit {
            return Err(format!("seed {seed}: mrr {mrr} below hit@1 {hit}"));
        }
        prev = hit;
    }
    Ok(())
}

/// Small synthetic stream with per-user favourite items.
pub fn synthetic_dataset(seed: u64, users: usize, items: usize, len: usize) -> Dataset {
    let mut r = rng(seed);
    let fav: Vec<Vec<usize>> = (0..users).map(|_| (0..3).map(|_| r.gen_range(0..items)).collect()).collect();
    let mut t = 1.0;
    let events = (0..len)
        .map(|_| {
            t += r.gen_range(0.1..2.0);
            let u = r.gen_range(0..users);
            let i = if r.gen_bool(0.7) { fav[u][r.gen_range(0..3)] } else { r.gen_range(0..items) };
            EventRecord::new(&format!("u{u}"), &format!("i{i}"), t)
        })
        .collect();
    Dataset::new(events).expect("valid synthetic data")
}

pub fn default_split() -> SplitSpec {
    SplitSpec::new(0.8, 0.1, 0.1)
}

pub fn correlation(x: &[f64], y: &[f64]) -> (f64, f64) {
    (spearman(x, y), pearson(x, y))
}
