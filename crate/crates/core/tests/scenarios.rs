//! Every built-in scenario loads, runs to completion and re-grades
//! identically from its stored trace.

use evsec::cli::config::ScenarioConfig;
use evsec::cli::runner::{run_config, verify_trace, write_trace};
use evsec::cli::suite::{builtin, matrix_keys, matrix_scenario, BUILTINS};
use evsec::trace::{EventKind, Trace};
use evsec::verdict::check_all;

#[test]
fn builtins_run_to_completion() {
    for (name, text) in BUILTINS {
        let config = ScenarioConfig::from_toml(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(&config.name, name, "file name and scenario name agree");
        assert!(!config.description.is_empty(), "{name} has a description");
        let out = run_config(&config, None).unwrap();
        assert!(out.trace.is_complete(), "{name}");
        assert_eq!(out.verdicts.len(), 9, "{name}");
    }
}

#[test]
fn builtin_steps_succeed_except_the_refused_handshake() {
    for (name, _) in BUILTINS {
        let out = run_config(&builtin(name).unwrap().unwrap(), None).unwrap();
        let failed: Vec<String> = out
            .trace
            .events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::StepFailed { error, .. } => Some(error.clone()),
                _ => None,
            })
            .collect();
        if *name == "unapproved_suite" {
            assert_eq!(failed.len(), 1, "{failed:?}");
            assert!(failed[0].contains("UnapprovedSuite"), "{failed:?}");
        } else {
            assert!(failed.is_empty(), "{name}: {failed:?}");
        }
    }
}

#[test]
fn stored_trace_regrades_identically() {
    let dir = tempfile::tempdir().unwrap();
    for (name, _) in BUILTINS {
        let out = run_config(&builtin(name).unwrap().unwrap(), None).unwrap();
        let path = dir.path().join(format!("{name}.jsonl"));
        write_trace(&out.trace, &path).unwrap();
        let again = verify_trace(&path).unwrap();
        assert_eq!(again.trace, out.trace, "{name}");
        assert_eq!(again.verdicts, out.verdicts, "{name}");
    }
}

#[test]
fn seed_override_changes_trace_but_not_the_config_story() {
    let config = builtin("honest_all_secured").unwrap().unwrap();
    let a = run_config(&config, None).unwrap();
    let b = run_config(&config, Some(config.seed + 1)).unwrap();
    assert_ne!(a.trace.to_jsonl(), b.trace.to_jsonl());
    let grades = |v: &[evsec::verdict::Verdict]| v.iter().map(|v| v.grade).collect::<Vec<_>>();
    assert_eq!(grades(&a.verdicts), grades(&b.verdicts));
    assert_eq!(b.trace.header.seed, config.seed + 1);
}

#[test]
fn every_matrix_template_is_a_valid_scenario() {
    let keys = matrix_keys();
    assert_eq!(keys.len(), 4 * 5 * 3 * 4);
    for key in keys {
        let config = matrix_scenario(&key);
        assert!(config.validate().is_ok());
        let round = ScenarioConfig::from_toml(&config.to_toml()).unwrap();
        assert_eq!(round, config);
    }
}

#[test]
fn trace_header_alone_is_enough_to_regrade() {
    let out = run_config(
        &builtin("tariff_filter_unprotected").unwrap().unwrap(),
        None,
    )
    .unwrap();
    let text = out.trace.to_jsonl();
    let reloaded = Trace::from_jsonl(&text).unwrap();
    assert_eq!(check_all(&reloaded).unwrap(), out.verdicts);
}

#[test]
fn each_builtin_runs_in_under_a_second() {
    for (name, _) in BUILTINS {
        let config = builtin(name).unwrap().unwrap();
        let start = std::time::Instant::now();
        run_config(&config, None).unwrap();
        let took = start.elapsed();
        assert!(
            took < std::time::Duration::from_secs(1),
            "{name} took {took:?}"
        );
    }
}

#[test]
fn readme_scenario_example_runs_clean() {
    let readme = include_str!("../../../README.md");
    let start = readme.find("```toml").expect("toml block") + "```toml".len();
    let end = start + readme[start..].find("```").unwrap();
    let config = ScenarioConfig::from_toml(&readme[start..end]).unwrap();
    let out = run_config(&config, None).unwrap();
    assert!(!out
        .trace
        .events
        .iter()
        .any(|e| matches!(e.kind, EventKind::StepFailed { .. })));
    assert_eq!(out.exit_code(), 0);
}
