//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use evsec::adversary::{AttackAction, AttackerKind, AttackerSpec, Matcher, Mutation, Target};
use evsec::channel::{ClientAuthMethod, LinkMode};
use evsec::cli::config::{AuthMethod, ScenarioConfig, Step};
use evsec::cli::runner::run_config;
use evsec::cli::suite::{
    builtin, diff_against, run_matrix, to_tsv, AttackerClass, MatrixKey, BUILTINS, EXPECTED_MATRIX,
};
use evsec::envelope::ProtectionMode;
use evsec::model::{build_topology, ActorId, CredentialId, DocType, LinkId, Payload};
use evsec::trace::{EventKind, Trace};
use evsec::verdict::{congestion_check, redaction_gdpr_check, CheckOutcome, Grade, SrId};

const MATRIX_BUDGET: Duration = Duration::from_secs(30);
const FUZZ_BUDGET: Duration = Duration::from_secs(60);
const FUZZ_RUNS: usize = 1000;
const CONTROL_RUNS: u64 = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        (
            "matrix, anchored rows and built-in verdicts within 30 s",
            matrix_and_builtins,
        ),
        (
            "redaction keeps a selective CDR verifiable and breaks a whole-message one",
            gdpr_redaction,
        ),
        (
            "1000 random attacker scripts on all-secured configs within 60 s",
            random_attackers,
        ),
        (
            "congestion check passes honest and fails inflated forecasts",
            congestion,
        ),
        ("identical seeds give byte-identical traces", determinism),
        (
            "lossy conversion breaks verification, envelope-preserving keeps it",
            format_conversion,
        ),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {}: {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            n + 1,
            o.detail
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criterion(s) failed");
        std::process::exit(1);
    }
}

fn run_builtin(name: &str) -> Trace {
    let config = builtin(name)
        .expect("known builtin")
        .expect("valid builtin");
    run_config(&config, None).expect("runs").trace
}

fn grades_of(name: &str) -> BTreeMap<SrId, Grade> {
    let config = builtin(name)
        .expect("known builtin")
        .expect("valid builtin");
    run_config(&config, None)
        .expect("runs")
        .verdicts
        .into_iter()
        .map(|v| (v.requirement, v.grade))
        .collect()
}

/// Grades that follow from a matrix row's configuration alone, derived
/// without running anything. Columns not listed here are left to the TSV.
fn anchored(key: &MatrixKey) -> Vec<(SrId, Grade)> {
    use AttackerClass as A;
    use Grade::*;
    let plain = key.link_mode == LinkMode::Plain;
    let signed = key.protection != ProtectionMode::NoProtection;
    let sr1a = match (key.auth, key.attacker) {
        (_, A::None) => Holds,
        // Reading a UID is enough to clone it; a symmetric card also needs
        // the charge point's master key, which the physical attacker pulls.
        (AuthMethod::Uid, _) => Violated,
        (AuthMethod::Symmetric, A::Physical) => Violated,
        // The operator backend knows online-card secrets; an air tap sees
        // them too unless a forged backend reply is rejected and blocks the
        // backend round trip altogether.
        (AuthMethod::Online, A::EndpointCpo) => Violated,
        (AuthMethod::Online, A::Network) if plain && signed => Holds,
        (AuthMethod::Online, A::Network) => Violated,
        _ => Holds,
    };
    let sr2b = match (key.link_mode, key.client_auth) {
        (LinkMode::MutualAuth, _) => Holds,
        (LinkMode::ServerAuth, ClientAuthMethod::StaticToken) => ConditionallyHolds,
        _ => Violated,
    };
    let sr5 = if !signed {
        Violated
    } else if plain && key.attacker == A::Network {
        // The rewritten CDR fails verification and is never stored.
        NotExercised
    } else {
        Holds
    };
    vec![
        (SrId::SR1a, sr1a),
        (
            SrId::SR1c,
            if key.auth == AuthMethod::Online {
                Violated
            } else {
                Holds
            },
        ),
        (SrId::SR2a, if plain { Violated } else { Holds }),
        (SrId::SR2b, sr2b),
        (SrId::SR3, if plain { Violated } else { Holds }),
        (
            SrId::SR4b,
            if key.protection == ProtectionMode::SelectiveDisclosure {
                Holds
            } else {
                Violated
            },
        ),
        (SrId::SR5, sr5),
    ]
}

/// The requirement each built-in scenario is about, and its expected grade.
const BUILTIN_EXPECTATIONS: &[(&str, SrId, Grade)] = &[
    ("weak_uid_cloning", SrId::SR1a, Grade::Violated),
    ("weak_uid_air_eavesdrop", SrId::SR1a, Grade::Violated),
    ("symmetric_cr_replay", SrId::SR1a, Grade::Holds),
    ("symmetric_master_extraction", SrId::SR1a, Grade::Violated),
    ("asymmetric_cr_card_read", SrId::SR1a, Grade::Holds),
    ("asymmetric_cr_offline", SrId::SR1c, Grade::Holds),
    ("online_auth_offline", SrId::SR1c, Grade::Violated),
    ("online_auth_injected_grant", SrId::SR1a, Grade::Violated),
    ("stale_whitelist", SrId::SR1b, Grade::Violated),
    ("static_token_plain", SrId::SR2b, Grade::Violated),
    (
        "static_token_secured",
        SrId::SR2b,
        Grade::ConditionallyHolds,
    ),
    (
        "static_token_insecure_bootstrap",
        SrId::SR2b,
        Grade::Violated,
    ),
    ("client_certificates", SrId::SR2b, Grade::Holds),
    ("unapproved_suite", SrId::SR3, Grade::Violated),
    ("tariff_filter_unprotected", SrId::SR4a, Grade::Violated),
    ("tariff_filter_selective", SrId::SR4a, Grade::Holds),
    ("tariff_confidential_prices", SrId::SR4b, Grade::Holds),
    ("cdr_unsigned_falsified", SrId::SR5, Grade::Violated),
    ("cdr_selective_falsified", SrId::SR5, Grade::Holds),
    ("cdr_whole_message_clearing_house", SrId::SR5, Grade::Holds),
    ("billing_redaction", SrId::SR5, Grade::Holds),
    ("smart_charging_honest", SrId::SR4a, Grade::Holds),
    ("smart_charging_inflated", SrId::SR4a, Grade::Violated),
    ("firmware_signed_swap", SrId::SR4a, Grade::Holds),
    ("firmware_unsigned_swap", SrId::SR4a, Grade::Violated),
    ("nfc_session", SrId::SR1a, Grade::Holds),
    ("format_conversion", SrId::SR4a, Grade::Holds),
    ("honest_all_secured", SrId::SR4b, Grade::Holds),
];

fn matrix_and_builtins() -> Outcome {
    let start = Instant::now();
    let rows = match run_matrix() {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("matrix failed to run: {e}")),
    };
    let mut problems = match diff_against(&rows, EXPECTED_MATRIX) {
        Ok(d) => d,
        Err(e) => vec![format!("expected matrix unreadable: {e}")],
    };
    let mut anchored_cells = 0;
    for r in &rows {
        for (sr, want) in anchored(&r.key) {
            anchored_cells += 1;
            if r.grades.get(&sr) != Some(&want) {
                problems.push(format!(
                    "{:?} {sr}: anchored {want}, got {:?}",
                    r.key,
                    r.grades.get(&sr)
                ));
            }
        }
    }
    let mut checked = 0;
    for (name, sr, want) in BUILTIN_EXPECTATIONS {
        checked += 1;
        let got = grades_of(name).get(sr).copied();
        if got != Some(*want) {
            problems.push(format!("{name} {sr}: expected {want}, got {got:?}"));
        }
    }
    if checked != BUILTINS.len() {
        problems.push(format!(
            "{} built-ins but {checked} expectations",
            BUILTINS.len()
        ));
    }
    let elapsed = start.elapsed();
    if elapsed > MATRIX_BUDGET {
        problems.push(format!("took {elapsed:?}, budget {MATRIX_BUDGET:?}"));
    }
    let detail = format!(
        "{} rows, {anchored_cells} anchored cells, {checked} built-ins in {:.2} s (budget {} s)",
        rows.len(),
        elapsed.as_secs_f64(),
        MATRIX_BUDGET.as_secs()
    );
    if problems.is_empty() {
        outcome(true, detail)
    } else {
        outcome(
            false,
            format!(
                "{detail}; {} problem(s), first: {}",
                problems.len(),
                problems[0]
            ),
        )
    }
}

fn stored_cdr(t: &Trace) -> Option<(ActorId, evsec::envelope::SecuredDocument)> {
    t.events.iter().find_map(|e| match &e.kind {
        EventKind::Stored { holder, doc } if doc.header.doc_type == DocType::ChargeDetailRecord => {
            Some((holder.clone(), (**doc).clone()))
        }
        _ => None,
    })
}

fn gdpr_redaction() -> Outcome {
    let check = |name: &str, field: &str| {
        let t = run_builtin(name);
        let topology = build_topology(&t.header.config).expect("topology");
        let (holder, doc) = stored_cdr(&t).expect("a stored CDR");
        let anchors = topology.actors[&holder].trusted_anchors.clone();
        redaction_gdpr_check(&doc, field, &topology.pki, &anchors)
    };
    let mut pass = true;
    let mut parts = vec![];
    for field in ["location", "contract_id"] {
        let selective = check("billing_redaction", field);
        let whole = check("cdr_whole_message_clearing_house", field);
        pass &= selective.outcome == CheckOutcome::Pass && whole.outcome == CheckOutcome::Fail;
        parts.push(format!(
            "{field}: selective {:?} ({}), whole {:?} ({})",
            selective.outcome, selective.explanation, whole.outcome, whole.explanation
        ));
    }
    outcome(pass, parts.join("; "))
}

fn random_action(rng: &mut ChaCha8Rng, links: &[LinkId]) -> AttackAction {
    let doc_types = [
        None,
        Some(DocType::TariffTable),
        Some(DocType::ChargeDetailRecord),
        Some(DocType::AuthorizationRequest),
        Some(DocType::AuthorizationResponse),
        Some(DocType::SelectedRate),
    ];
    let matcher = |rng: &mut ChaCha8Rng| Matcher {
        doc_type: *doc_types.choose(rng).unwrap(),
        from: None,
        to: None,
    };
    let fields = [
        "cost",
        "energy",
        "contract_id",
        "location",
        "entries.0.price_per_kwh",
        "entries.1.slot_start",
        "granted",
        "entry_index",
    ];
    let mutation = |rng: &mut ChaCha8Rng| match rng.gen_range(0..4) {
        0 => Mutation::SetField {
            field: fields.choose(rng).unwrap().to_string(),
            value: "0.001".into(),
        },
        1 => Mutation::RemoveField {
            field: fields.choose(rng).unwrap().to_string(),
        },
        2 => Mutation::KeepMostExpensive {
            keep: rng.gen_range(0..3),
        },
        _ => Mutation::Resign,
    };
    match rng.gen_range(0..9) {
        0 => AttackAction::Eavesdrop,
        1 | 2 => {
            let n = rng.gen_range(1..4);
            AttackAction::ModifyInTransit {
                matcher: matcher(rng),
                mutations: (0..n).map(|_| mutation(rng)).collect(),
            }
        }
        3 => {
            let payload = if rng.gen_bool(0.5) {
                Payload::AuthorizationResponse {
                    granted: true,
                    reason: "ok".into(),
                }
            } else {
                Payload::SelectedRate {
                    session_id: "s0".into(),
                    entry_index: 2,
                }
            };
            AttackAction::Inject {
                matcher: matcher(rng),
                payload,
            }
        }
        4 => AttackAction::Drop {
            matcher: matcher(rng),
        },
        5 => AttackAction::ReadCardUid,
        6 => AttackAction::ExtractMasterKey,
        7 => AttackAction::CompromiseActor,
        _ => AttackAction::ReplayTranscript {
            link: links.choose(rng).unwrap().clone(),
        },
    }
}

fn random_config(base: &ScenarioConfig, seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut config = base.clone();
    config.name = format!("random-{seed}");
    config.seed = seed;
    let links: Vec<LinkId> = config.links.iter().map(|l| l.id.clone()).collect();
    let actors: Vec<ActorId> = config.actors.iter().map(|a| a.id.clone()).collect();
    let field_devices = [ActorId::new("ev1"), ActorId::new("cp1")];
    for i in 0..rng.gen_range(1..4) {
        let (kind, target) = match rng.gen_range(0..3) {
            0 => (
                AttackerKind::Network,
                Target::Link(links.choose(&mut rng).unwrap().clone()),
            ),
            1 => (
                AttackerKind::Endpoint,
                Target::Actor(actors.choose(&mut rng).unwrap().clone()),
            ),
            _ => (
                AttackerKind::Physical,
                Target::Actor(field_devices.choose(&mut rng).unwrap().clone()),
            ),
        };
        let script = (0..rng.gen_range(1..5))
            .map(|_| random_action(&mut rng, &links))
            .collect();
        config.attackers.push(AttackerSpec {
            id: format!("a{i}"),
            kind,
            target,
            script,
        });
    }
    config.steps.push(Step::FalsifyStored {
        holder: ActorId::new("emsp1"),
        field: "cost".into(),
        value: "0.010".into(),
    });
    config.steps.push(Step::Authorize {
        method: AuthMethod::Asymmetric,
        charge_point: ActorId::new("cp1"),
        credential: CredentialId::new("card1"),
        holder: None,
        attacker: Some("a0".into()),
        energy_kwh: None,
    });
    config
}

fn random_attackers() -> Outcome {
    let base = builtin("honest_all_secured")
        .expect("builtin")
        .expect("valid");
    let start = Instant::now();
    let results: Vec<Result<Vec<String>, String>> = (0..FUZZ_RUNS as u64)
        .into_par_iter()
        .map(|seed| {
            let config = random_config(&base, 10_000 + seed);
            config.validate().map_err(|e| format!("seed {seed}: {e}"))?;
            let out = run_config(&config, None).map_err(|e| format!("seed {seed}: {e}"))?;
            Ok(out
                .verdicts
                .iter()
                .filter(|v| {
                    matches!(v.requirement, SrId::SR4a | SrId::SR4b | SrId::SR5)
                        && v.grade == Grade::Violated
                })
                .map(|v| {
                    format!(
                        "seed {}: {} {}",
                        10_000 + seed,
                        v.requirement,
                        v.explanation
                    )
                })
                .collect())
        })
        .collect();
    let elapsed = start.elapsed();

    // Negative control: the same generator against unsigned documents must
    // find something, or the generator is not exercising anything.
    let mut unsigned = base.clone();
    unsigned.protection.default = ProtectionMode::NoProtection;
    let control: usize = (0..CONTROL_RUNS)
        .into_par_iter()
        .map(|seed| {
            let out =
                run_config(&random_config(&unsigned, 10_000 + seed), None).expect("control run");
            out.verdicts
                .iter()
                .filter(|v| {
                    matches!(v.requirement, SrId::SR4a | SrId::SR5) && v.grade == Grade::Violated
                })
                .count()
        })
        .sum();
    let attacks: usize = (0..CONTROL_RUNS)
        .map(|seed| {
            let t = run_config(&random_config(&base, 10_000 + seed), None)
                .expect("run")
                .trace;
            t.events
                .iter()
                .filter(|e| matches!(e.kind, EventKind::Attack { .. }))
                .count()
        })
        .sum();

    let errors: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    let violations: Vec<&String> = results
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .flatten()
        .collect();
    let pass = errors.is_empty() && violations.is_empty() && elapsed <= FUZZ_BUDGET && control > 0;
    let mut detail = format!(
        "{FUZZ_RUNS} runs, {} SR4a/SR4b/SR5 violation(s), {} error(s), {:.2} s (budget {} s); \
         control: {attacks} attack(s) in the first {CONTROL_RUNS} secured runs, {control} violation(s) once unsigned",
        violations.len(),
        errors.len(),
        elapsed.as_secs_f64(),
        FUZZ_BUDGET.as_secs()
    );
    if let Some(first) = violations.first().copied().or(errors.first().copied()) {
        detail.push_str(&format!("; first: {first}"));
    }
    outcome(pass, detail)
}

fn congestion() -> Outcome {
    let honest = congestion_check(&run_builtin("smart_charging_honest"));
    let inflated_trace = run_builtin("smart_charging_inflated");
    let inflated = congestion_check(&inflated_trace);
    let attack = inflated_trace
        .events
        .iter()
        .find(|e| {
            matches!(
                e.kind,
                EventKind::Attack {
                    doc_type: DocType::CapacityForecast,
                    ..
                }
            )
        })
        .map(|e| e.index);
    let pass = honest.outcome == CheckOutcome::Pass
        && inflated.outcome == CheckOutcome::Fail
        && attack.is_some_and(|a| inflated.witnesses.contains(&a));
    outcome(
        pass,
        format!(
            "honest: {:?}; inflated: {:?} with witnesses {:?} (attack event #{})",
            honest.outcome,
            inflated.outcome,
            inflated.witnesses,
            attack
                .map(|a| a.to_string())
                .unwrap_or_else(|| "none".into())
        ),
    )
}

fn determinism() -> Outcome {
    let mut differing = vec![];
    for (name, _) in BUILTINS {
        if run_builtin(name).to_jsonl() != run_builtin(name).to_jsonl() {
            differing.push(*name);
        }
    }
    let a = run_matrix().map(|r| to_tsv(&r)).unwrap_or_default();
    let b = run_matrix().map(|r| to_tsv(&r)).unwrap_or_default();
    let matrix_same = !a.is_empty() && a == b;
    outcome(
        differing.is_empty() && matrix_same,
        format!(
            "{} built-ins compared, {} differ; matrix identical across runs: {matrix_same}",
            BUILTINS.len(),
            differing.len()
        ),
    )
}

fn format_conversion() -> Outcome {
    let t = run_builtin("format_conversion");
    let mut lossy = None;
    let mut preserving = None;
    for e in &t.events {
        if let EventKind::FormatConverted {
            doc_id,
            lossy: l,
            verifies_before,
            verifies_after,
            ..
        } = &e.kind
        {
            let slot = if *l { &mut lossy } else { &mut preserving };
            *slot = Some((doc_id.clone(), *verifies_before, *verifies_after));
        }
    }
    let accepted_verified = |id: &str| {
        t.events.iter().any(|e| matches!(&e.kind, EventKind::Accepted { doc_id, verified: true, .. } if doc_id == id))
    };
    let (Some(l), Some(p)) = (lossy, preserving) else {
        return outcome(false, "conversion events missing");
    };
    let pass = l.1 && !l.2 && !accepted_verified(&l.0) && p.1 && p.2 && accepted_verified(&p.0);
    outcome(
        pass,
        format!(
            "lossy verifies before/after {}/{}, accepted: {}; envelope-preserving {}/{}, accepted: {}",
            l.1,
            l.2,
            accepted_verified(&l.0),
            p.1,
            p.2,
            accepted_verified(&p.0)
        ),
    )
}
