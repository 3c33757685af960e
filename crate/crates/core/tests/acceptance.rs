//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit when any
//! fails. Datasets are read from `DYNEMBED_DATA_DIR` (default `data/`) as
//! canonical CSVs: `ml-100k.csv`, `ml-1m.csv`, `wikipedia.csv`, `lastfm.csv`.

mod common;

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use dynembed::config::RunConfig;
use dynembed::data::Dataset;
use dynembed::evalkit::{self, EvalReport};

type Outcome = Result<String, String>;

fn preset(name: &str, data: &str) -> Result<(RunConfig, Dataset), String> {
    let path = data_dir().join(data);
    if !path.exists() {
        return Err(format!("dataset not found: {}", path.display()));
    }
    let mut cfg = RunConfig::from_file(&configs_dir().join(name)).map_err(|e| e.to_string())?;
    cfg.set("dataset", &path.display().to_string()).map_err(|e| e.to_string())?;
    cfg.output_dir = std::env::temp_dir().join("dynembed-acceptance");
    let ds = cfg.load_dataset().map_err(|e| e.to_string())?;
    Ok((cfg, ds))
}

fn run(name: &str, data: &str, f: fn(&RunConfig, &Dataset) -> dynembed::Result<EvalReport>) -> Result<EvalReport, String> {
    let (cfg, ds) = preset(name, data)?;
    f(&cfg, &ds).map_err(|e| e.to_string())
}

fn within(label: &str, got: f64, target: f64, tol: f64) -> Outcome {
    let line = format!("{label} {got:.4} (target {target} ± {tol})");
    if (got - target).abs() <= tol + 1e-12 {
        Ok(line)
    } else {
        Err(line)
    }
}

/// Runs every sub-check; the criterion passes only if all of them do.
fn all(parts: Vec<Outcome>) -> Outcome {
    let ok = parts.iter().all(Result::is_ok);
    let text = parts.into_iter().map(|p| p.unwrap_or_else(|e| e)).collect::<Vec<_>>().join("; ");
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn seeded(seeds: std::ops::Range<u64>, limit: Duration, check: fn(u64) -> Check) -> Outcome {
    let started = Instant::now();
    for s in seeds.clone() {
        check(s)?;
    }
    let took = started.elapsed();
    let line = format!("{} seeds in {:.2}s (limit {}s)", seeds.end - seeds.start, took.as_secs_f64(), limit.as_secs());
    if took < limit {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_1() -> Outcome {
    seeded(0..100, Duration::from_secs(10), check_oracle_equivalence)
}

fn criterion_2() -> Outcome {
    seeded(0..100, Duration::from_secs(5), check_factored_distance)
}

fn criterion_3() -> Outcome {
    let wiki = run("wikipedia.cfg", "wikipedia.csv", evalkit::run_task).and_then(|r| {
        all(vec![
            within("wikipedia mrr", r.metric("mrr").unwrap_or(f64::NAN), 0.786, 0.02),
            within("wikipedia hit@10", r.metric("hit@10").unwrap_or(f64::NAN), 0.852, 0.02),
        ])
    });
    let lastfm = run("lastfm.cfg", "lastfm.csv", evalkit::run_task).and_then(|r| {
        all(vec![
            within("lastfm mrr", r.metric("mrr").unwrap_or(f64::NAN), 0.195, 0.02),
            within("lastfm hit@10", r.metric("hit@10").unwrap_or(f64::NAN), 0.453, 0.03),
        ])
    });
    all(vec![wiki, lastfm])
}

fn criterion_4() -> Outcome {
    let recall = |cfg: &str, data: &str, target: f64, tol: f64| {
        run(cfg, data, evalkit::run_task)
            .and_then(|r| within(&format!("{cfg} recall@10"), r.metric("recall@10").unwrap_or(f64::NAN), target, tol))
    };
    all(vec![
        recall("ml100k.cfg", "ml-100k.csv", 0.114, 0.01),
        recall("ml100k-attr.cfg", "ml-100k.csv", 0.149, 0.015),
        recall("ml1m.cfg", "ml-1m.csv", 0.053, 0.01),
        recall("ml1m-attr.cfg", "ml-1m.csv", 0.065, 0.015),
    ])
}

/// The Wikipedia ablation serves criteria 5 and 6.
fn wikipedia_ablation() -> Result<&'static EvalReport, String> {
    static CELL: OnceLock<Result<EvalReport, String>> = OnceLock::new();
    CELL.get_or_init(|| run("wikipedia.cfg", "wikipedia.csv", evalkit::run_ablation)).as_ref().map_err(Clone::clone)
}

fn criterion_5() -> Outcome {
    let r = wikipedia_ablation()?;
    let row = &r.variants["last-10"];
    all(vec![
        within("last-10 mrr", row["mrr"], 0.792, 0.005),
        within("last-10 hit@10", row["hit@10"], 0.842, 0.005),
    ])
}

fn criterion_6() -> Outcome {
    let r = wikipedia_ablation()?;
    let mrr = |v: &str| r.variants[v]["mrr"];
    let (g, h, i, full) = (mrr("G"), mrr("H"), mrr("I"), mrr("full"));
    let line = format!("G {g:.4} H {h:.4} I {i:.4} full {full:.4}");
    if g < h && g < i && h <= i && i < full {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_7() -> Outcome {
    let study = |cfg: &str, data: &str| -> Outcome {
        let r = run(cfg, data, evalkit::restart_policy_study)?;
        let s = |k: &str| r.stats.get(k).copied().unwrap_or(f64::NAN);
        let line = format!(
            "{data}: monitor {:.4} count {:.4} time {:.4} (gaps {:.2}% / {:.2}%)",
            s("error_monitor"),
            s("error_count"),
            s("error_time"),
            100.0 * s("gap_count"),
            100.0 * s("gap_time")
        );
        if s("gap_count") >= 0.01 && s("gap_time") >= 0.01 {
            Ok(line)
        } else {
            Err(line)
        }
    };
    all(vec![study("wikipedia.cfg", "wikipedia.csv"), study("lastfm.cfg", "lastfm.csv")])
}

fn criterion_8() -> Outcome {
    let study = |cfg: &str, data: &str| -> Outcome {
        let r = run(cfg, data, evalkit::correlation_study)?;
        let rho = r.stats.get("spearman").copied().unwrap_or(f64::NAN);
        let m = r.stats.get("best_m").copied().unwrap_or(f64::NAN);
        let line = format!("{data}: spearman {rho:.3} at m={m}");
        if rho > 0.5 {
            Ok(line)
        } else {
            Err(line)
        }
    };
    all(vec![study("wikipedia.cfg", "wikipedia.csv"), study("lastfm.cfg", "lastfm.csv")])
}

fn criterion_9() -> Outcome {
    let started = Instant::now();
    let checks: [(&str, fn(u64) -> Check); 16] = [
        ("oracle", check_oracle_equivalence),
        ("factored distance", check_factored_distance),
        ("distance metric", check_distance_metric),
        ("orthonormality drift", check_orthonormality_drift),
        ("rank monotone error", check_error_monotone_in_rank),
        ("one-hot norm growth", check_one_hot_norm_growth),
        ("normalize inverse", check_normalize_inverse),
        ("attenuation", check_attenuation),
        ("memoryless decay", check_memoryless_decay),
        ("stage beta ratio", check_stage_beta_ratio),
        ("monitor distance", check_monitor_distance),
        ("short-term span", check_short_term_span),
        ("short-term scaling", check_short_term_scaling),
        ("fuse linear", check_fuse_linear),
        ("zero column padding", check_zero_column_padding),
        ("metric bounds", check_metric_bounds),
    ];
    for (name, check) in checks {
        for seed in 0..64 {
            check(seed).map_err(|e| format!("{name}: {e}"))?;
        }
    }
    let curve = accumulation_curve(200, 25)?;
    if curve.windows(2).any(|w| w[1] + 1e-12 < w[0]) {
        return Err(format!("online error not accumulating: {curve:?}"));
    }
    let (d, e) = restart_moments(30, 0.1, 10.0)?;
    let (rho, _) = correlation(&d, &e);
    if d.len() < 20 || rho <= 0.5 {
        return Err(format!("restart distance vs error: {} restarts, spearman {rho:.3}", d.len()));
    }
    let took = started.elapsed().as_secs_f64();
    let line = format!("{} invariant checks x 64 seeds plus stream properties in {took:.2}s (limit 60s)", checks.len());
    if took < 60.0 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_10() -> Outcome {
    let r = run("wikipedia.cfg", "wikipedia.csv", evalkit::robustness_study)?;
    let spread = r.stats.get("mrr_spread").copied().unwrap_or(f64::NAN);
    let line = format!("mrr spread {spread:.4} over train shares 0.1..0.8 (limit 0.05)");
    if spread < 0.05 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("online updates match offline SVD", criterion_1),
        ("factored distance", criterion_2),
        ("next-interaction reproduction", criterion_3),
        ("future-item reproduction", criterion_4),
        ("last-10 baseline", criterion_5),
        ("ablation ordering", criterion_6),
        ("monitor beats fixed schedules", criterion_7),
        ("distance/error correlation", criterion_8),
        ("property suites", criterion_9),
        ("robustness to training share", criterion_10),
    ];
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let id = n + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        match f() {
            Ok(detail) => println!("PASS criterion {id} ({name}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
