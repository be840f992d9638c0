use super::*;
use crate::cli::config::AuthMethod;
use crate::model::{Fixed3, LinkId, TariffEntry};
use crate::trace::Event;

const BASE: &str = r#"
name = "flows"
seed = 7

[[actors]]
id = "ev1"
role = "EV"
credentials = [{ id = "card1", kind = "uid", uid = "04A1B2C3" }, { id = "card2", kind = "symmetric_card", uid = "04FFEE01", master = "mk1" }]

[[actors]]
id = "cp1"
role = "ChargePoint"
operator = "cpo1"
master_key = "mk1"
location = "Amersfoort Zuid"

[[actors]]
id = "cpo1"
role = "CPO"

[[actors]]
id = "emsp1"
role = "EMSP"

[[contracts]]
id = "C1"
emsp = "emsp1"
credential = "card1"

[[contracts]]
id = "C2"
emsp = "emsp1"
credential = "card2"

[[links]]
id = "air"
a = "ev1"
b = "cp1"
medium = "nfc"
mode = "plain"

[[links]]
id = "hlc"
a = "ev1"
b = "cp1"
mode = "mutual_auth"

[[links]]
id = "backhaul"
a = "cp1"
b = "cpo1"
mode = "mutual_auth"

[[links]]
id = "roaming"
a = "cpo1"
b = "emsp1"
mode = "server_auth"
client_auth = "static_token"
"#;

fn run_with(extra: &str) -> Trace {
    let config = ScenarioConfig::from_toml(&format!("{BASE}\n{extra}")).unwrap();
    run(&config).unwrap()
}

fn kinds(t: &Trace) -> impl Iterator<Item = (&Event, &EventKind)> {
    t.events.iter().map(|e| (e, &e.kind))
}

fn decisions(t: &Trace) -> Vec<(bool, String)> {
    kinds(t)
        .filter_map(|(_, k)| match k {
            EventKind::AuthorizationDecision {
                granted, reason, ..
            } => Some((*granted, reason.clone())),
            _ => None,
        })
        .collect()
}

fn failures(t: &Trace) -> Vec<String> {
    kinds(t)
        .filter_map(|(_, k)| match k {
            EventKind::StepFailed { error, .. } => Some(error.clone()),
            _ => None,
        })
        .collect()
}

const AUTH_UID: &str = r#"
[[steps]]
flow = "authorize"
method = "uid"
charge_point = "cp1"
credential = "card1"
holder = "ev1"
"#;

#[test]
fn honest_uid_grant_delivers_default_energy() {
    let t = run_with(AUTH_UID);
    assert!(t.is_complete());
    assert!(failures(&t).is_empty(), "{:?}", failures(&t));
    let grant = t
        .events
        .iter()
        .find(|e| {
            matches!(
                e.kind,
                EventKind::AuthorizationDecision { granted: true, .. }
            )
        })
        .expect("granted")
        .index;
    let delivery = kinds(&t).find_map(|(_, k)| match k {
        EventKind::EnergyDelivered {
            energy,
            authorization,
            ..
        } => Some((*energy, *authorization)),
        _ => None,
    });
    assert_eq!(
        delivery,
        Some((Fixed3::from_int(DEFAULT_ENERGY_KWH), Some(grant)))
    );
}

#[test]
fn failed_step_does_not_stop_the_run() {
    let t = run_with(&format!(
        r#"
[[steps]]
flow = "cdr"
cpo = "cpo1"
emsp = "emsp1"
{AUTH_UID}"#
    ));
    assert_eq!(failures(&t).len(), 1);
    assert_eq!(decisions(&t), vec![(true, decisions(&t)[0].1.clone())]);
}

#[test]
fn cdr_bills_cheapest_readable_rate() {
    let entries = [(0, 410), (1, 180), (2, 180), (3, 520)];
    let table: Vec<String> = entries
        .iter()
        .map(|(i, price)| {
            format!(
                "{{ slot_start = {}, slot_end = {}, price_per_kwh = \"{}\", max_power_kw = \"11\" }}",
                EPOCH + i * 3600,
                EPOCH + (i + 1) * 3600,
                Fixed3::from_milli(*price)
            )
        })
        .collect();
    let t = run_with(&format!(
        r#"{AUTH_UID}
[[steps]]
flow = "tariff"
emsp = "emsp1"
cpo = "cpo1"
charge_point = "cp1"
ev = "ev1"
entries = [{}]

[[steps]]
flow = "cdr"
cpo = "cpo1"
emsp = "emsp1"
"#,
        table.join(", ")
    ));
    assert!(failures(&t).is_empty(), "{:?}", failures(&t));

    // Oracle: lowest price, lowest index on ties; cost in milli-units.
    let (want_index, want_price) = entries
        .iter()
        .map(|(i, p)| (*p, *i))
        .min()
        .map(|(p, i)| (i as u32, p))
        .unwrap();
    let selected = kinds(&t).find_map(|(_, k)| match k {
        EventKind::RateSelected {
            entry_index,
            price_per_kwh,
            ..
        } => Some((*entry_index, price_per_kwh.milli())),
        _ => None,
    });
    assert_eq!(selected, Some((want_index, want_price)));

    let stored = kinds(&t)
        .find_map(|(_, k)| match k {
            EventKind::Stored { doc, .. } => Some(doc.public_fields()),
            _ => None,
        })
        .expect("cdr stored");
    let cost = stored
        .iter()
        .find(|(k, _)| k == "cost")
        .map(|(_, v)| v.clone())
        .unwrap();
    let want_cost = DEFAULT_ENERGY_KWH * want_price;
    assert_eq!(
        cost,
        format!("{}.{:03}", want_cost / 1000, want_cost % 1000)
    );
}

#[test]
fn same_seed_same_trace_other_seed_other_nonces() {
    let a = run_with(AUTH_UID);
    let b = run_with(AUTH_UID);
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    let mut other = ScenarioConfig::from_toml(&format!("{BASE}\n{AUTH_UID}")).unwrap();
    other.seed = 8;
    assert_ne!(run(&other).unwrap().to_jsonl(), a.to_jsonl());
}

#[test]
fn symmetric_card_verifies_against_diversified_key() {
    let t = run_with(
        r#"
[[steps]]
flow = "authorize"
method = "symmetric"
charge_point = "cp1"
credential = "card2"
holder = "ev1"
"#,
    );
    assert_eq!(
        decisions(&t).iter().map(|d| d.0).collect::<Vec<_>>(),
        vec![true]
    );
}

#[test]
fn wrong_mechanism_for_card_is_denied() {
    let t = run_with(
        r#"
[[steps]]
flow = "authorize"
method = "symmetric"
charge_point = "cp1"
credential = "card1"
holder = "ev1"
"#,
    );
    let granted: Vec<bool> = decisions(&t).iter().map(|d| d.0).collect();
    assert!(granted.iter().all(|g| !g), "{:?}", decisions(&t));
}

#[test]
fn token_rotation_replaces_expected_token() {
    let config = ScenarioConfig::from_toml(&format!(
        r#"{BASE}
[[steps]]
flow = "rotate_token"
link = "roaming"
client = "cpo1"

[[steps]]
flow = "exchange"
link = "roaming"
client = "cpo1"
"#
    ))
    .unwrap();
    let mut world = World::new(&config).unwrap();
    let before = world.topology.expected_tokens[&LinkId::new("roaming")].clone();
    world.run_steps();
    let after = world.topology.expected_tokens[&LinkId::new("roaming")].clone();
    assert_ne!(before, after);
    let held = &world.topology.actors[&ActorId::new("cpo1")].static_secrets;
    assert_eq!(
        held.iter().map(|t| &t.secret).collect::<Vec<_>>(),
        vec![&after]
    );
    assert!(
        failures(&world.trace).is_empty(),
        "{:?}",
        failures(&world.trace)
    );
    assert!(kinds(&world.trace)
        .any(|(_, k)| matches!(k, EventKind::TokenRotated { secured: true, .. })));
}

#[test]
fn offline_online_card_is_refused() {
    let config = BASE.replace(
        r#"{ id = "card1", kind = "uid", uid = "04A1B2C3" }"#,
        r#"{ id = "card1", kind = "online_card", uid = "04A1B2C3" }"#,
    );
    let config = ScenarioConfig::from_toml(&format!(
        r#"{config}
[[steps]]
flow = "set_online"
actor = "cp1"
online = false

[[steps]]
flow = "authorize"
method = "online"
charge_point = "cp1"
credential = "card1"
holder = "ev1"
"#
    ))
    .unwrap();
    let t = run(&config).unwrap();
    assert_eq!(decisions(&t), vec![(false, "offline".to_string())]);
    let offline = kinds(&t).any(|(_, k)| {
        matches!(
            k,
            EventKind::AuthorizationDecision {
                mechanism: AuthMethod::Online,
                offline: true,
                contract_valid: true,
                ..
            }
        )
    });
    assert!(offline);
}

#[test]
fn default_tariff_is_sorted_by_slot() {
    let t: Vec<TariffEntry> = crate::model::default_tariff();
    assert!(t.windows(2).all(|w| w[0].slot_end == w[1].slot_start));
}
