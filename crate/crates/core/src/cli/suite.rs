//! Built-in scenarios and the security matrix.
//!
//! The matrix crosses every card authorization mechanism with every valid
//! link configuration, every protection mode and four attacker classes, runs
//! each combination on a fixed four-actor topology and grades all nine
//! requirements. The expected grades live in `scenarios/expected_matrix.tsv`.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::channel::{ClientAuthMethod, LinkMode};
use crate::cli::config::{AuthMethod, ConfigError, ScenarioConfig};
use crate::cli::runner::{run_config, CliError};
use crate::envelope::ProtectionMode;
use crate::verdict::{Grade, SrId};

macro_rules! builtins {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../scenarios/", $name, ".toml")))),*]
    };
}

/// Name and TOML source of every built-in scenario.
pub const BUILTINS: &[(&str, &str)] = builtins![
    "weak_uid_cloning",
    "weak_uid_air_eavesdrop",
    "symmetric_cr_replay",
    "symmetric_master_extraction",
    "asymmetric_cr_card_read",
    "asymmetric_cr_offline",
    "online_auth_offline",
    "online_auth_injected_grant",
    "stale_whitelist",
    "static_token_plain",
    "static_token_secured",
    "static_token_insecure_bootstrap",
    "client_certificates",
    "unapproved_suite",
    "tariff_filter_unprotected",
    "tariff_filter_selective",
    "tariff_confidential_prices",
    "cdr_unsigned_falsified",
    "cdr_selective_falsified",
    "cdr_whole_message_clearing_house",
    "billing_redaction",
    "smart_charging_honest",
    "smart_charging_inflated",
    "firmware_signed_swap",
    "firmware_unsigned_swap",
    "nfc_session",
    "format_conversion",
    "honest_all_secured",
];

pub const EXPECTED_MATRIX: &str = include_str!("../../scenarios/expected_matrix.tsv");

pub fn builtin(name: &str) -> Option<Result<ScenarioConfig, ConfigError>> {
    BUILTINS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ScenarioConfig::from_toml(text))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttackerClass {
    None,
    /// Reads the driver's card and opens the charge point.
    Physical,
    /// Controls the charge point operator's backend.
    EndpointCpo,
    /// Taps and rewrites every link.
    Network,
}

impl AttackerClass {
    pub const ALL: [AttackerClass; 4] = [
        AttackerClass::None,
        AttackerClass::Physical,
        AttackerClass::EndpointCpo,
        AttackerClass::Network,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackerClass::None => "none",
            AttackerClass::Physical => "physical",
            AttackerClass::EndpointCpo => "endpoint-cpo",
            AttackerClass::Network => "network",
        }
    }
}

/// Link configurations that a topology accepts: client certificates only
/// exist with mutual authentication.
pub const LINK_CONFIGS: [(LinkMode, ClientAuthMethod); 5] = [
    (LinkMode::Plain, ClientAuthMethod::None),
    (LinkMode::Plain, ClientAuthMethod::StaticToken),
    (LinkMode::ServerAuth, ClientAuthMethod::None),
    (LinkMode::ServerAuth, ClientAuthMethod::StaticToken),
    (LinkMode::MutualAuth, ClientAuthMethod::ClientCertificate),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MatrixKey {
    pub auth: AuthMethod,
    pub link_mode: LinkMode,
    pub client_auth: ClientAuthMethod,
    pub protection: ProtectionMode,
    pub attacker: AttackerClass,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatrixRow {
    pub key: MatrixKey,
    pub grades: BTreeMap<SrId, Grade>,
}

pub fn matrix_keys() -> Vec<MatrixKey> {
    let mut keys = vec![];
    for auth in AuthMethod::CARD_METHODS {
        for (link_mode, client_auth) in LINK_CONFIGS {
            for protection in ProtectionMode::ALL {
                for attacker in AttackerClass::ALL {
                    keys.push(MatrixKey {
                        auth,
                        link_mode,
                        client_auth,
                        protection,
                        attacker,
                    });
                }
            }
        }
    }
    keys
}

/// The scenario a matrix row runs.
pub fn matrix_scenario(key: &MatrixKey) -> ScenarioConfig {
    let text = matrix_toml(key);
    ScenarioConfig::from_toml(&text)
        .unwrap_or_else(|e| panic!("matrix template for {key:?} is invalid: {e}\n{text}"))
}

fn matrix_toml(key: &MatrixKey) -> String {
    let credential = match key.auth {
        AuthMethod::Uid => r#"{ id = "card1", kind = "uid", uid = "04A1B2C3" }"#,
        AuthMethod::Symmetric => {
            r#"{ id = "card1", kind = "symmetric_card", uid = "04A1B2C3", master = "mk1" }"#
        }
        AuthMethod::Asymmetric => r#"{ id = "card1", kind = "contract_certificate" }"#,
        AuthMethod::Online => r#"{ id = "card1", kind = "online_card", uid = "04A1B2C3" }"#,
        AuthMethod::SignedSession => unreachable!("not a card mechanism"),
    };
    let master = if key.auth == AuthMethod::Symmetric {
        "master_key = \"mk1\"\n"
    } else {
        ""
    };
    let method = key.auth.as_str();
    let mode = key.link_mode.as_str();
    let client_auth = key.client_auth.as_str();
    let mut text = format!(
        r#"
name = "matrix/{method}/{mode}/{client_auth}/{protection}/{attacker}"
seed = 2024

[protection]
default = "{protection_mode}"

[[confidentiality]]
doc_type = "TariffTable"
field = "price_per_kwh"
recipients = ["ev1"]

[[actors]]
id = "ev1"
role = "EV"
credentials = [{credential}]

[[actors]]
id = "cp1"
role = "ChargePoint"
operator = "cpo1"
location = "Utrecht Centraal P2"
{master}
[[actors]]
id = "cpo1"
role = "CPO"

[[actors]]
id = "emsp1"
role = "EMSP"

[[contracts]]
id = "NL-EMS-C00001"
emsp = "emsp1"
credential = "card1"

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
mode = "{mode}"
client_auth = "{client_auth}"

[[links]]
id = "backhaul"
a = "cp1"
b = "cpo1"
mode = "{mode}"
client_auth = "{client_auth}"

[[links]]
id = "roaming"
a = "cpo1"
b = "emsp1"
mode = "{mode}"
client_auth = "{client_auth}"
"#,
        protection = key.protection.as_str(),
        protection_mode = toml_name(key.protection),
        attacker = key.attacker.as_str(),
    );
    text.push_str(match key.attacker {
        AttackerClass::None => "",
        AttackerClass::Physical => {
            r#"
[[attackers]]
id = "thief"
kind = "physical"
target = { actor = "ev1" }
script = [{ type = "read_card_uid" }]

[[attackers]]
id = "opener"
kind = "physical"
target = { actor = "cp1" }
script = [{ type = "extract_master_key" }]
"#
        }
        AttackerClass::EndpointCpo => {
            r#"
[[attackers]]
id = "insider"
kind = "endpoint"
target = { actor = "cpo1" }
script = [{ type = "modify_in_transit", matcher = { doc_type = "TariffTable" }, mutations = [{ op = "keep_most_expensive", keep = 1 }] }]
"#
        }
        AttackerClass::Network => {
            r#"
[[attackers]]
id = "tap_air"
kind = "network"
target = { link = "air" }
script = [{ type = "eavesdrop" }, { type = "replay_transcript", link = "air" }]

[[attackers]]
id = "mitm_hlc"
kind = "network"
target = { link = "hlc" }
script = [{ type = "eavesdrop" }, { type = "modify_in_transit", matcher = { doc_type = "TariffTable" }, mutations = [{ op = "keep_most_expensive", keep = 1 }] }]

[[attackers]]
id = "mitm_backhaul"
kind = "network"
target = { link = "backhaul" }
script = [{ type = "eavesdrop" }, { type = "inject", matcher = { doc_type = "AuthorizationResponse" }, payload = { type = "AuthorizationResponse", granted = true, reason = "ok" } }]

[[attackers]]
id = "mitm_roaming"
kind = "network"
target = { link = "roaming" }
script = [{ type = "eavesdrop" }, { type = "modify_in_transit", matcher = { doc_type = "ChargeDetailRecord" }, mutations = [{ op = "set_field", field = "cost", value = "0.000" }] }]
"#
        }
    });
    text.push_str(&format!(
        r#"
[[steps]]
flow = "authorize"
method = "{method}"
charge_point = "cp1"
credential = "card1"
holder = "ev1"

[[steps]]
flow = "set_online"
actor = "cp1"
online = false

[[steps]]
flow = "authorize"
method = "{method}"
charge_point = "cp1"
credential = "card1"
holder = "ev1"

[[steps]]
flow = "set_online"
actor = "cp1"
online = true

[[steps]]
flow = "tariff"
emsp = "emsp1"
cpo = "cpo1"
charge_point = "cp1"
ev = "ev1"

[[steps]]
flow = "cdr"
cpo = "cpo1"
emsp = "emsp1"
"#
    ));
    let attacker_id = match key.attacker {
        AttackerClass::None => None,
        AttackerClass::Physical => Some("thief"),
        AttackerClass::EndpointCpo => Some("insider"),
        AttackerClass::Network => Some("tap_air"),
    };
    if let Some(id) = attacker_id {
        text.push_str(&format!(
            r#"
[[steps]]
flow = "authorize"
method = "{method}"
charge_point = "cp1"
credential = "card1"
attacker = "{id}"
"#
        ));
    }
    if key.attacker == AttackerClass::Network {
        text.push_str(
            r#"
[[steps]]
flow = "impersonate_client"
attacker = "mitm_roaming"
link = "roaming"
client = "cpo1"
"#,
        );
    }
    text
}

fn toml_name(mode: ProtectionMode) -> &'static str {
    match mode {
        ProtectionMode::NoProtection => "no_protection",
        ProtectionMode::WholeMessageSignature => "whole_message_signature",
        ProtectionMode::SelectiveDisclosure => "selective_disclosure",
    }
}

pub fn run_row(key: &MatrixKey) -> Result<MatrixRow, CliError> {
    let outcome = run_config(&matrix_scenario(key), None)?;
    Ok(MatrixRow {
        key: *key,
        grades: outcome
            .verdicts
            .iter()
            .map(|v| (v.requirement, v.grade))
            .collect(),
    })
}

/// Runs every row in parallel; rows come back in key order.
pub fn run_matrix() -> Result<Vec<MatrixRow>, CliError> {
    matrix_keys().par_iter().map(run_row).collect()
}

const TSV_KEY_COLUMNS: [&str; 5] = ["auth", "link_mode", "client_auth", "protection", "attacker"];

pub fn to_tsv(rows: &[MatrixRow]) -> String {
    let mut out = TSV_KEY_COLUMNS.join("\t");
    for sr in SrId::ALL {
        out.push('\t');
        out.push_str(sr.as_str());
    }
    out.push('\n');
    for r in rows {
        let k = &r.key;
        let mut cells = vec![
            k.auth.as_str().to_string(),
            k.link_mode.as_str().to_string(),
            k.client_auth.as_str().to_string(),
            k.protection.as_str().to_string(),
            k.attacker.as_str().to_string(),
        ];
        cells.extend(SrId::ALL.iter().map(|sr| {
            r.grades
                .get(sr)
                .map(|g| g.as_str())
                .unwrap_or("?")
                .to_string()
        }));
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    out
}

/// Parses a matrix TSV into (key columns joined by '/', grades).
pub fn parse_tsv(text: &str) -> Result<BTreeMap<String, BTreeMap<SrId, Grade>>, String> {
    let mut lines = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines
        .next()
        .ok_or("empty matrix file")?
        .split('\t')
        .collect();
    if header.len() != TSV_KEY_COLUMNS.len() + SrId::ALL.len() || header[..5] != TSV_KEY_COLUMNS {
        return Err("unexpected matrix header".into());
    }
    let srs: Vec<SrId> = header[5..]
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_, _>>()?;
    let mut rows = BTreeMap::new();
    for (n, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != header.len() {
            return Err(format!(
                "row {}: expected {} cells, got {}",
                n + 1,
                header.len(),
                cells.len()
            ));
        }
        let grades = srs
            .iter()
            .zip(&cells[5..])
            .map(|(sr, g)| Ok((*sr, g.parse()?)))
            .collect::<Result<_, String>>()?;
        rows.insert(cells[..5].join("/"), grades);
    }
    Ok(rows)
}

pub fn row_label(key: &MatrixKey) -> String {
    [
        key.auth.as_str(),
        key.link_mode.as_str(),
        key.client_auth.as_str(),
        key.protection.as_str(),
        key.attacker.as_str(),
    ]
    .join("/")
}

/// Differences between computed rows and an expected TSV, one line each.
pub fn diff_against(rows: &[MatrixRow], expected_tsv: &str) -> Result<Vec<String>, String> {
    let expected = parse_tsv(expected_tsv)?;
    let mut out = vec![];
    for r in rows {
        let label = row_label(&r.key);
        match expected.get(&label) {
            None => out.push(format!("{label}: missing from expected matrix")),
            Some(want) => {
                for sr in SrId::ALL {
                    let (got, exp) = (r.grades.get(&sr), want.get(&sr));
                    if got != exp {
                        out.push(format!(
                            "{label} {sr}: expected {}, got {}",
                            exp.map(|g| g.as_str()).unwrap_or("?"),
                            got.map(|g| g.as_str()).unwrap_or("?")
                        ));
                    }
                }
            }
        }
    }
    if expected.len() != rows.len() {
        out.push(format!(
            "expected matrix has {} rows, computed {}",
            expected.len(),
            rows.len()
        ));
    }
    Ok(out)
}
