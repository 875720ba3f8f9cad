use std::io::Cursor;

use approx::assert_relative_eq;

use super::*;
use crate::evaluator::{SimSpec, Simulator};
use crate::surrogate::{condition, Scales};
use crate::test_support::harness9;

fn sim9() -> Simulator {
    let spec = SimSpec::parse(include_str!("../../tests/fixtures/sim9.toml")).unwrap();
    Simulator::new(spec, &harness9()).unwrap()
}

fn quick(seed: u64) -> RunConfig {
    RunConfig { budget_search: 8.0, sobol: 12, seed, samples: 64, parallelism: 2, ..RunConfig::default() }
}

fn run_sim(rc: &RunConfig, sim: &Simulator) -> (RunResult, Vec<u8>) {
    let mut out = Vec::new();
    let rr = run(rc, sim.space(), sim, &sim.suite(), &[], &mut out).unwrap();
    (rr, out)
}

#[test]
fn run_stays_inside_the_budget_and_ledgers_exactly() {
    let sim = sim9();
    let (rr, bytes) = run_sim(&quick(1), &sim);
    let history = History::parse(Cursor::new(&bytes)).unwrap();
    let total: f64 = history.records().map(|r| r.total_cost).sum();
    assert!(total <= 8.0 * rr.ledger.unit_cost);
    assert_eq!(total, rr.ledger.total_cost);
    assert_eq!(rr.ledger.rows.iter().map(|r| r.cost).sum::<f64>(), total);
    assert_eq!(rr.ledger.rows[0].phase, Phase::Baseline);
    assert_eq!(rr.ledger.rows[0].fidelities, vec![89]);
    assert_relative_eq!(rr.ledger.rows[0].cost / rr.ledger.unit_cost, 1.0);
    assert_eq!(history.records().last().unwrap().cumulative_cost, total);
    assert_eq!(history.result(), Some(&rr));
    assert!(!rr.front.is_empty());
}

#[test]
fn identical_runs_write_identical_bytes() {
    let sim = sim9();
    let (_, a) = run_sim(&quick(5), &sim);
    let (_, b) = run_sim(&quick(5), &sim);
    assert_eq!(a, b);
    let (_, c) = run_sim(&quick(6), &sim);
    assert_ne!(a, c);
}

#[test]
fn budget_for_baseline_and_init_only_skips_the_loop() {
    let sim = sim9();
    // Baseline is one unit; twelve evaluations at m=8 cost a little over one.
    let probe = run_sim(&RunConfig { budget_search: 2.6, max_iterations: 0, ..quick(2) }, &sim).0;
    let init_units: f64 = probe.ledger.rows.iter().filter(|r| r.phase == Phase::Init).map(|r| r.cost).sum::<f64>()
        / probe.ledger.unit_cost;
    let rc = RunConfig { budget_search: 1.0 + init_units + 0.2, ..quick(2) };
    let (rr, bytes) = run_sim(&rc, &sim);
    let history = History::parse(Cursor::new(&bytes)).unwrap();
    assert!(history.records().all(|r| r.phase != Phase::Search));
    assert!(rr.ledger.rows.iter().all(|r| r.phase != Phase::Search));
}

#[test]
fn tiny_budget_aborts_with_an_estimate() {
    let sim = sim9();
    let rc = RunConfig { budget_search: 1.2, ..quick(0) };
    let err = run(&rc, sim.space(), &sim, &sim.suite(), &[], Vec::new()).unwrap_err();
    match err {
        Error::Budget { needed, available } => {
            assert!(needed > 1.2);
            assert_eq!(available, 1.2);
        }
        other => panic!("{other}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let base = RunConfig::default();
    assert!(base.validate(89).is_ok());
    assert!(RunConfig { fidelities: vec![8, 22, 44], ..base.clone() }.validate(89).is_err());
    assert!(RunConfig { fidelities: vec![22, 8, 89], ..base.clone() }.validate(89).is_err());
    assert!(RunConfig { eta: 0.6, ..base.clone() }.validate(89).is_err());
    assert!(RunConfig { delta: -0.1, ..base.clone() }.validate(89).is_err());
    assert!(RunConfig { budget_deploy: 0.0, ..base }.validate(89).is_err());
}

fn front_setup() -> (FlagSpace, Surrogate, CostModel, Vec<EvaluationRecord>) {
    let space = harness9();
    let a = space.default_config();
    let mut b = a.clone();
    b.set(0, 1);
    let records: Vec<EvaluationRecord> = [(&a, 0.2), (&b, 0.3)]
        .into_iter()
        .map(|(c, _)| crate::test_support::record_with(c, Default::default(), 12))
        .collect();
    let obs = vec![
        Observation { config: a.clone(), target: 0.2, variance: 1e-4 },
        Observation { config: b.clone(), target: 0.3, variance: 1e-4 },
    ];
    let s = condition(&obs, &space, Scales { main: vec![0.01; 6], cross: 0.0 }, 0.2).unwrap();
    let cost = CostModel { intercept: 1.0, coef: Vec::new(), residual_sd: 0.0, task_sd: 0.0 };
    (space, s, cost, records)
}

#[test]
fn dominating_config_leaves_a_single_point() {
    let (space, s, cost, records) = front_setup();
    let safety = Safety { r0: 0.2, delta: 0.05, eta: 0.1 };
    let front = pareto_front(&records, &s, &cost, 10.0, &safety, (0.0, 2.0), &space.baseline_config());
    // Equal costs, so the higher mean dominates.
    assert_eq!(front.points().len(), 1);
    assert_eq!(front.points()[0].config, records[1].config);

    let single = pareto_front(&records[..1], &s, &cost, 10.0, &safety, (0.0, 2.0), &space.baseline_config());
    assert_eq!(single.points()[0].config, records[0].config);
}

#[test]
fn nothing_affordable_falls_back_to_the_baseline() {
    let (space, s, cost, records) = front_setup();
    let safety = Safety { r0: 0.2, delta: 0.05, eta: 0.1 };
    let front = pareto_front(&records, &s, &cost, 0.5, &safety, (0.0, 2.0), &space.baseline_config());
    assert_eq!(front.points().len(), 1);
    assert_eq!(front.points()[0].config, space.baseline_config());
}

#[test]
fn three_point_front_shape() {
    let space = harness9();
    let flagless = space.default_config();
    let mut mid = flagless.clone();
    mid.set(0, 1);
    let mut top = mid.clone();
    top.set(8, 1);
    let obs: Vec<Observation> = [(&flagless, 0.17), (&mid, 0.22), (&top, 0.30)]
        .into_iter()
        .map(|(c, t)| Observation { config: c.clone(), target: t, variance: 1e-5 })
        .collect();
    let s = condition(&obs, &space, Scales { main: vec![0.02; 6], cross: 0.0 }, 0.17).unwrap();
    let cost = CostModel {
        intercept: 1.0,
        coef: (0..9).map(|i| if i == 0 || i == 8 { 0.05 } else { 0.0 }).collect(),
        residual_sd: 0.0,
        task_sd: 0.0,
    };
    let records: Vec<EvaluationRecord> =
        [&flagless, &mid, &top].iter().map(|c| crate::test_support::record_with(c, Default::default(), 12)).collect();
    let safety = Safety { r0: 0.17, delta: 0.05, eta: 0.1 };
    let front = pareto_front(&records, &s, &cost, 10.0, &safety, (0.0, 3.0), &flagless);
    let configs: Vec<&Configuration> = front.points().iter().map(|p| &p.config).collect();
    assert_eq!(configs, vec![&flagless, &mid, &top]);
}

fn write_history(rr_seed: u64) -> (tempfile::TempDir, std::path::PathBuf, RunResult) {
    let sim = sim9();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.jsonl");
    let file = std::fs::File::create(&path).unwrap();
    let rr = run(&quick(rr_seed), sim.space(), &sim, &sim.suite(), &[], file).unwrap();
    (dir, path, rr)
}

#[test]
fn meta_history_projects_and_inflates() {
    let (_dir, path, _) = write_history(3);
    let space = harness9();
    let history = History::read(&path).unwrap();
    let originals: Vec<EvaluationRecord> = history.records().map(|r| r.to_record(&space).unwrap()).collect();

    let same = load_meta_history(&[&path], &space, 1.0).unwrap();
    assert_eq!(same.len(), originals.len());
    for (m, o) in same.iter().zip(&originals) {
        assert_eq!(&m.record, o);
        assert_eq!(m.source, path.display().to_string());
    }

    let inflated = load_meta_history(&[&path], &space, 4.0).unwrap();
    for (m, o) in inflated.iter().zip(&originals) {
        assert_eq!(m.record.correction.unwrap().variance, 4.0 * o.correction.unwrap().variance);
    }

    // A space without `paste`: that column is dropped, the rest kept.
    let trimmed_doc = include_str!("../../tests/fixtures/harness9.toml")
        .replace("[[flag]]\nname = \"paste\"", "[[unused]]\nname = \"paste\"")
        .replace("flags = [\"speculative_prediction\", \"paste\"]", "flags = [\"speculative_prediction\"]");
    let trimmed_doc: String = trimmed_doc
        .split("[[unused]]")
        .enumerate()
        .map(|(i, part)| {
            if i == 0 {
                part.to_string()
            } else {
                part.split_once("\n\n").map(|x| x.1.to_string()).unwrap_or_default()
            }
        })
        .collect();
    let trimmed = FlagSpace::parse(&trimmed_doc).unwrap();
    assert_eq!(trimmed.len(), 8);
    let projected = load_meta_history(&[&path], &trimmed, 1.0).unwrap();
    for (p, o) in projected.iter().zip(&originals) {
        let full = space.assignment(&o.config);
        let mut kept = trimmed.assignment(&p.record.config);
        assert!(!kept.contains_key("paste"));
        kept.insert("paste".into(), full["paste"].clone());
        assert_eq!(kept, full);
        assert_eq!(p.record.outcomes, o.outcomes);
    }

    let other = FlagSpace::parse(include_str!("../../tests/fixtures/bool8.toml")).unwrap();
    assert!(matches!(load_meta_history(&[&path], &other, 4.0), Err(Error::NoOverlap { .. })));
}

#[test]
fn machine_report_round_trips() {
    let (_dir, path, rr) = write_history(4);
    let history = History::read(&path).unwrap();
    let stored = history.result().unwrap();
    let doc = report(stored, Format::Machine).unwrap();
    let back = parse_report(&doc).unwrap();
    assert_eq!(&back, stored);
    assert_eq!(back.front, rr.front);

    let text = report(&rr, Format::Text).unwrap();
    assert!(text.contains("Search-cost ledger"));
    assert!(text.contains(&format!("of a nominal {}", rr.run.budget_search)));
    let anova_line = text.lines().find(|l| l.starts_with("Block ANOVA")).unwrap();
    assert!(anova_line.ends_with(&format!("cross {:.3}", rr.anova.cross.as_ref().unwrap().raw)));
    let raws: Vec<f64> = rr.anova.main.iter().map(|e| e.raw).collect();
    assert!(raws.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn vetoed_commitment_lists_reasons() {
    let (_, _, mut rr) = write_history(4);
    rr.committed = None;
    rr.vetoes = vec![Veto {
        config: rr.front[0].config.clone(),
        reason: "RED flags: semantic_cache".into(),
        verdicts: Vec::new(),
    }];
    let text = report(&rr, Format::Text).unwrap();
    assert!(text.contains("none: every front candidate was vetoed"));
    assert!(text.contains("RED flags: semantic_cache"));
}

#[test]
fn silent_gate_is_pinned_off_after_three_on_records() {
    let mut spec = SimSpec::parse(include_str!("../../tests/fixtures/sim9.toml")).unwrap();
    spec.silent = vec!["tiered_compression".into()];
    let sim = Simulator::new(spec, &harness9()).unwrap();
    let (rr, bytes) = run_sim(&quick(8), &sim);
    let history = History::parse(Cursor::new(&bytes)).unwrap();
    let on: Vec<usize> = history
        .records()
        .filter(|r| r.config["tiered_compression"] == FlagValue::Bool(true))
        .map(|r| r.index)
        .collect();
    assert_eq!(on.len(), 3, "{on:?}");
    assert_eq!(rr.silent.len(), 1);
    assert_eq!(rr.silent[0].evidence.flag, "tiered_compression");
    assert_eq!(rr.silent[0].after_record, on[2]);
    assert!(rr.front.iter().all(|p| p.config["tiered_compression"] == FlagValue::Bool(false)));
}
