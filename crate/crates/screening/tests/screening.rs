mod common;

use common::*;
use dynscreen::config::MonitoredSelector;
use dynscreen::report::{classify, parse_report, zone_label};
use dynscreen::runner::{rank_faulted_lines, rank_vulnerable_elements};
use dynscreen::{emit_report, read_report, run_screening, RiskReport};
use dynscreen_core::dynamics::ScenarioScore;
use dynscreen_core::rare_event::{DurationFamily, Sample, SamplePool, ScenarioDistribution, ScenarioDraw};
use dynscreen_core::grid::parse_grid_json;

fn toy_report() -> RiskReport {
    run_screening(&toy_config(), false).unwrap()
}

#[test]
fn conditional_matrix_matches_enumeration() {
    let cfg = toy_config();
    let report = toy_report();
    let exact = toy_conditional(cfg.policy.max_overload_seconds);
    let n = cfg.samples_per_branch as f64;
    assert_eq!(report.conditional.faulted, vec![0, 1, 2]);
    let mut nontrivial = 0;
    for (a, row) in report.conditional.probabilities.iter().enumerate() {
        for (b, &q) in row.iter().enumerate() {
            let p = exact[a][b];
            let se = (p * (1.0 - p) / n).sqrt();
            if se == 0.0 {
                assert_eq!(q, p, "faulted {a} monitored {b}");
            } else {
                nontrivial += 1;
                assert!((q - p).abs() <= 3.0 * se, "faulted {a} monitored {b}: {q} vs {p} ± {se}");
            }
        }
    }
    assert!(nontrivial > 0, "toy fixture has no non-trivial conditional probability");
}

#[test]
fn report_files_round_trip() {
    let report = toy_report();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path()).unwrap();
    let back = read_report(&dir.path().join("report.json")).unwrap();
    assert_eq!(back, report);

    let mut rd = csv::Reader::from_path(dir.path().join("zones.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), report.zones.len());
    for (row, z) in rows.iter().zip(&report.zones) {
        assert_eq!(row[0].parse::<usize>().unwrap(), z.branch);
        let worst: f64 = row[4].parse().unwrap();
        assert_eq!(worst, z.worst_probability);
        assert_eq!(&row[6], zone_label(classify(&report, worst)));
    }
    for name in ["conditional.csv", "faulted_ranking.csv", "vulnerability.csv", "curves.csv"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
}

#[test]
fn report_version_is_checked() {
    let mut v: serde_json::Value = serde_json::from_str(&toy_report().to_json()).unwrap();
    v["schema_version"] = serde_json::json!(99);
    assert!(parse_report(&v.to_string()).is_err());
}

#[test]
fn zero_samples_is_a_contract_error() {
    let mut cfg = toy_config();
    cfg.samples = 0;
    assert!(run_screening(&cfg, false).is_err());
    let mut cfg = toy_config();
    cfg.samples_per_branch = 0;
    assert!(run_screening(&cfg, false).is_err());
}

#[test]
fn empty_monitored_set_gives_empty_report() {
    let mut cfg = toy_config();
    cfg.monitored = MonitoredSelector::List(vec![]);
    let report = run_screening(&cfg, false).unwrap();
    assert!(report.zones.is_empty());
    assert!(report.curves.is_empty());
    assert!(report.conditional.probabilities.iter().all(|r| r.is_empty()));
    assert!(report.exceedance.iter().filter(|e| e.gamma > 0.0).all(|e| e.estimate == 0.0));
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let mut cfg = toy_config();
    cfg.noise_scale = 0.05;
    cfg.duration_family = DurationFamily::Exponential;
    cfg.workers = Some(1);
    let a = run_screening(&cfg, false).unwrap();
    cfg.workers = Some(4);
    let b = run_screening(&cfg, false).unwrap();
    assert_eq!(a.without_runtime().to_json(), b.without_runtime().to_json());
}

#[test]
fn recurrence_is_bounded_by_top_scenarios() {
    let mut cfg = toy_config();
    cfg.noise_scale = 0.05;
    let report = run_screening(&cfg, false).unwrap();
    let total: usize = report.vulnerability_ranking.iter().map(|v| v.recurrence).sum();
    assert!(total <= cfg.top_scenarios * report.zones.len());
    assert!(report.vulnerability_ranking.windows(2).all(|w| w[0].recurrence >= w[1].recurrence));
}

fn sample(branch: usize, overload: Vec<f64>) -> Sample {
    let global = overload.iter().sum();
    Sample {
        draw: ScenarioDraw { branch: Some(branch), duration: 1.0 },
        score: Some(ScenarioScore { overload_seconds: overload, global, steps_simulated: 0 }),
        failure: None,
        weight: 1.0,
    }
}

fn pool(samples: Vec<Sample>) -> SamplePool {
    SamplePool { proposal: ScenarioDistribution::uniform(3, 1.0, DurationFamily::Exponential), samples }
}

#[test]
fn only_overloading_fault_ranks_first() {
    let p = pool(vec![sample(0, vec![0.0; 3]), sample(2, vec![0.0, 1.5, 0.0]), sample(1, vec![0.0; 3])]);
    let r = rank_faulted_lines(&p, 3, 1.0);
    assert_eq!(r.iter().map(|x| x.branch).collect::<Vec<_>>(), vec![2, 0, 1]);
    assert!(r[1..].iter().all(|x| x.frequency == 0.0 && x.overload_seconds == 0.0));
}

#[test]
fn zero_overload_rankings_keep_index_order() {
    let p = pool(vec![sample(2, vec![0.0; 3]), sample(1, vec![0.0; 3]), sample(0, vec![0.0; 3])]);
    let r = rank_faulted_lines(&p, 3, 1.0);
    assert_eq!(r.iter().map(|x| x.branch).collect::<Vec<_>>(), vec![0, 1, 2]);

    let grid = parse_grid_json(&std::fs::read_to_string(fixture("toy3.json")).unwrap()).unwrap();
    let v = rank_vulnerable_elements(&p, &[0, 1, 2], &grid, &[0.0; 3], 10);
    assert_eq!(v.iter().map(|x| x.branch).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert!(v.iter().all(|x| x.recurrence == 0));
}

#[test]
fn vulnerability_breaks_recurrence_ties_by_probability() {
    let p = pool(vec![sample(0, vec![0.5, 0.5, 0.0]), sample(1, vec![0.0, 0.0, 2.0])]);
    let grid = parse_grid_json(&std::fs::read_to_string(fixture("toy3.json")).unwrap()).unwrap();
    let v = rank_vulnerable_elements(&p, &[0, 1, 2], &grid, &[0.1, 0.3, 0.2], 10);
    assert_eq!(v.iter().map(|x| (x.branch, x.recurrence)).collect::<Vec<_>>(), vec![(1, 1), (2, 1), (0, 1)]);
}
