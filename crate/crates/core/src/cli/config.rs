//! Scenario files: a TOML document with a fixed key schema.
//!
//! Unknown keys anywhere in the document are rejected, and every cross
//! reference (actor ids, link ids, attacker ids) is checked by
//! [`ScenarioConfig::validate`] before anything executes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::AttackerSpec;
use crate::channel::{Bootstrap, ClientAuthMethod, LinkMode, Medium};
use crate::envelope::ProtectionMode;
use crate::model::{
    ActorId, AnchorId, ContractId, CredentialId, DocType, ForecastSlot, Kw, Kwh, LinkId, Role,
    TariffEntry,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    #[serde(default)]
    pub pki: PkiConfig,
    pub actors: Vec<ActorConfig>,
    #[serde(default)]
    pub links: Vec<LinkConfig>,
    #[serde(default)]
    pub contracts: Vec<ContractConfig>,
    #[serde(default)]
    pub whitelists: Vec<WhitelistConfig>,
    #[serde(default)]
    pub attackers: Vec<AttackerSpec>,
    #[serde(default)]
    pub protection: ProtectionDefaults,
    #[serde(default)]
    pub confidentiality: Vec<ConfidentialityRule>,
    #[serde(default)]
    pub options: Options,
    #[serde(default)]
    pub steps: Vec<Step>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PkiConfig {
    /// Trust anchors; more than one requires `split = true`.
    #[serde(default = "default_anchors")]
    pub anchors: Vec<AnchorId>,
    #[serde(default)]
    pub split: bool,
    /// Optional second approved suite built on different primitives.
    #[serde(default)]
    pub additional_cipher_suite: Option<String>,
    /// Replaces the approved list entirely; must not be empty.
    #[serde(default)]
    pub cipher_suites: Option<Vec<String>>,
}

fn default_anchors() -> Vec<AnchorId> {
    vec![AnchorId::new("root")]
}

impl Default for PkiConfig {
    fn default() -> Self {
        PkiConfig {
            anchors: default_anchors(),
            split: false,
            additional_cipher_suite: None,
            cipher_suites: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorConfig {
    pub id: ActorId,
    pub role: Role,
    #[serde(default = "yes")]
    pub online: bool,
    /// Operating CPO of a charge point; also its certificate issuer.
    #[serde(default)]
    pub operator: Option<ActorId>,
    /// Anchor the actor's certificate is issued under (defaults to the first).
    #[serde(default)]
    pub tree: Option<AnchorId>,
    /// Anchors this actor trusts (defaults to all).
    #[serde(default)]
    pub trusts: Option<Vec<AnchorId>>,
    #[serde(default)]
    pub revoked: bool,
    /// Name of a symmetric card master key installed on this charge point.
    #[serde(default)]
    pub master_key: Option<String>,
    /// Another actor whose key material this one reuses (one party, two roles).
    #[serde(default)]
    pub shares_keys_with: Option<ActorId>,
    #[serde(default)]
    pub location: Option<String>,
    #[serde(default)]
    pub credentials: Vec<CredentialConfig>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CredentialKindConfig {
    Uid,
    SymmetricCard,
    ContractCertificate,
    OnlineCard,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CredentialConfig {
    pub id: CredentialId,
    pub kind: CredentialKindConfig,
    #[serde(default)]
    pub uid: Option<String>,
    /// Master key the card key is diversified from (symmetric cards).
    #[serde(default)]
    pub master: Option<String>,
    /// eMSP issuing the contract certificate.
    #[serde(default)]
    pub issuer: Option<ActorId>,
    /// Give the card its own signing key (EIM signing of meter data).
    #[serde(default)]
    pub signing: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub id: LinkId,
    pub a: ActorId,
    pub b: ActorId,
    #[serde(default)]
    pub medium: Medium,
    pub mode: LinkMode,
    #[serde(default)]
    pub cipher_suite: Option<String>,
    #[serde(default)]
    pub client_auth: Option<ClientAuthMethod>,
    #[serde(default)]
    pub bootstrap: Bootstrap,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractConfig {
    pub id: ContractId,
    pub emsp: ActorId,
    pub credential: CredentialId,
    #[serde(default = "yes")]
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhitelistConfig {
    pub cpo: ActorId,
    pub uids: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtectionDefaults {
    #[serde(default)]
    pub default: ProtectionMode,
}

/// Marks a field of a document type as readable only by `recipients`.
///
/// `field` matches a full field name or its last dotted segment, so
/// `price_per_kwh` covers every tariff entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidentialityRule {
    pub doc_type: DocType,
    pub field: String,
    pub recipients: Vec<ActorId>,
}

impl ConfidentialityRule {
    pub fn matches(&self, doc_type: DocType, field: &str) -> bool {
        self.doc_type == doc_type
            && (field == self.field || field.rsplit('.').next() == Some(self.field.as_str()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    /// Minimum charge for drivers who would otherwise be refused. Parsed and
    /// carried in the trace header only; no flow or verdict reads it.
    #[serde(default)]
    pub minimum_charge: Option<Kwh>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthMethod {
    Uid,
    Symmetric,
    Asymmetric,
    Online,
    /// CPO-signed session description carried over NFC by a phone. Only the
    /// `nfc_session` flow produces it.
    SignedSession,
}

impl AuthMethod {
    pub const CARD_METHODS: [AuthMethod; 4] = [
        AuthMethod::Uid,
        AuthMethod::Symmetric,
        AuthMethod::Asymmetric,
        AuthMethod::Online,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AuthMethod::Uid => "uid",
            AuthMethod::Symmetric => "symmetric",
            AuthMethod::Asymmetric => "asymmetric",
            AuthMethod::Online => "online",
            AuthMethod::SignedSession => "signed_session",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conversion {
    #[default]
    None,
    Lossy,
    EnvelopePreserving,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeterSigner {
    Ev,
    Card,
    ChargePoint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "flow", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    /// A driver (holder) or an attacker presents a credential at a charge point.
    Authorize {
        method: AuthMethod,
        charge_point: ActorId,
        credential: CredentialId,
        #[serde(default)]
        holder: Option<ActorId>,
        #[serde(default)]
        attacker: Option<String>,
        #[serde(default)]
        energy_kwh: Option<Kwh>,
    },
    SetOnline {
        actor: ActorId,
        online: bool,
    },
    /// Energy delivered by a (compromised) charge point with no authorization.
    UnauthorizedCharge {
        charge_point: ActorId,
        energy_kwh: Kwh,
    },
    Tariff {
        emsp: ActorId,
        cpo: ActorId,
        charge_point: ActorId,
        ev: ActorId,
        #[serde(default)]
        protection: Option<ProtectionMode>,
        #[serde(default)]
        entries: Option<Vec<TariffEntry>>,
    },
    Cdr {
        cpo: ActorId,
        emsp: ActorId,
        #[serde(default)]
        via: Option<ActorId>,
        #[serde(default)]
        protection: Option<ProtectionMode>,
    },
    FalsifyStored {
        holder: ActorId,
        field: String,
        value: String,
    },
    MeterReading {
        signer: MeterSigner,
        ev: ActorId,
        charge_point: ActorId,
        cpo: ActorId,
        emsp: ActorId,
        #[serde(default)]
        credential: Option<CredentialId>,
        #[serde(default)]
        conversion: Conversion,
        #[serde(default)]
        protection: Option<ProtectionMode>,
    },
    SmartCharging {
        dso: ActorId,
        cpo: ActorId,
        charge_points: Vec<ActorId>,
        forecast: Vec<ForecastSlot>,
        #[serde(default)]
        min_kw_per_point: Option<Kw>,
        #[serde(default)]
        protection: Option<ProtectionMode>,
    },
    Firmware {
        cpio: ActorId,
        cpo: ActorId,
        charge_point: ActorId,
        version: String,
        image: String,
        #[serde(default)]
        protection: Option<ProtectionMode>,
    },
    NfcSession {
        cpo: ActorId,
        phone: ActorId,
        charge_point: ActorId,
        contract: ContractId,
        max_energy: Kwh,
        #[serde(default)]
        protection: Option<ProtectionMode>,
    },
    /// Re-presents the last session description seen on the phone's NFC hop.
    NfcReplay {
        charge_point: ActorId,
        #[serde(default)]
        phone: Option<ActorId>,
        #[serde(default)]
        attacker: Option<String>,
    },
    /// An explicit client-authenticated exchange on a link.
    Exchange {
        link: LinkId,
        client: ActorId,
    },
    RotateToken {
        link: LinkId,
        client: ActorId,
    },
    /// An attacker presents the best static token it knows for `client`.
    ImpersonateClient {
        attacker: String,
        link: LinkId,
        client: ActorId,
    },
}

impl Step {
    pub fn flow_name(&self) -> &'static str {
        match self {
            Step::Authorize { .. } => "authorize",
            Step::SetOnline { .. } => "set_online",
            Step::UnauthorizedCharge { .. } => "unauthorized_charge",
            Step::Tariff { .. } => "tariff",
            Step::Cdr { .. } => "cdr",
            Step::FalsifyStored { .. } => "falsify_stored",
            Step::MeterReading { .. } => "meter_reading",
            Step::SmartCharging { .. } => "smart_charging",
            Step::Firmware { .. } => "firmware",
            Step::NfcSession { .. } => "nfc_session",
            Step::NfcReplay { .. } => "nfc_replay",
            Step::Exchange { .. } => "exchange",
            Step::RotateToken { .. } => "rotate_token",
            Step::ImpersonateClient { .. } => "impersonate_client",
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }

    /// Cross-reference checks that the serde schema cannot express.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let actors: BTreeSet<&ActorId> = self.actors.iter().map(|a| &a.id).collect();
        let links: BTreeSet<&LinkId> = self.links.iter().map(|l| &l.id).collect();
        let attackers: BTreeSet<&str> = self.attackers.iter().map(|a| a.id.as_str()).collect();
        let credentials: BTreeSet<&CredentialId> = self
            .actors
            .iter()
            .flat_map(|a| a.credentials.iter().map(|c| &c.id))
            .collect();
        let contracts: BTreeSet<&ContractId> = self.contracts.iter().map(|c| &c.id).collect();

        if self.pki.anchors.is_empty() {
            return invalid("pki.anchors must name at least one trust anchor".into());
        }
        if self.pki.anchors.len() > 1 && !self.pki.split {
            return invalid("more than one trust anchor requires pki.split = true".into());
        }
        if let Some(list) = &self.pki.cipher_suites {
            if list.is_empty() {
                return invalid("pki.cipher_suites must contain at least one suite".into());
            }
        }
        if attackers.len() != self.attackers.len() {
            return invalid("duplicate attacker id".into());
        }
        for a in &self.actors {
            for r in a.operator.iter().chain(a.shares_keys_with.iter()) {
                if !actors.contains(r) {
                    return invalid(format!("actor {} references unknown actor {r}", a.id));
                }
            }
            for anchor in a.tree.iter().chain(a.trusts.iter().flatten()) {
                if !self.pki.anchors.contains(anchor) {
                    return invalid(format!("actor {} references unknown anchor {anchor}", a.id));
                }
            }
        }
        for w in &self.whitelists {
            if !actors.contains(&w.cpo) {
                return invalid(format!("whitelist references unknown actor {}", w.cpo));
            }
        }
        for r in &self.confidentiality {
            if let Some(x) = r.recipients.iter().find(|x| !actors.contains(x)) {
                return invalid(format!("confidentiality rule references unknown actor {x}"));
            }
        }
        let known_actor = |a: &ActorId| -> Result<(), ConfigError> {
            if actors.contains(a) {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!(
                    "step references unknown actor {a}"
                )))
            }
        };
        let known_link = |l: &LinkId| -> Result<(), ConfigError> {
            if links.contains(l) {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!(
                    "step references unknown link {l}"
                )))
            }
        };
        let known_attacker = |a: &str| -> Result<(), ConfigError> {
            if attackers.contains(a) {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!(
                    "step references unknown attacker {a}"
                )))
            }
        };
        for (i, step) in self.steps.iter().enumerate() {
            match step {
                Step::Authorize {
                    charge_point,
                    credential,
                    holder,
                    attacker,
                    ..
                } => {
                    known_actor(charge_point)?;
                    if !credentials.contains(credential) {
                        return invalid(format!(
                            "step {i} references unknown credential {credential}"
                        ));
                    }
                    match (holder, attacker) {
                        (Some(h), None) => known_actor(h)?,
                        (None, Some(a)) => known_attacker(a)?,
                        _ => {
                            return invalid(format!(
                                "step {i}: authorize needs exactly one of holder or attacker"
                            ))
                        }
                    }
                }
                Step::SetOnline { actor, .. } => known_actor(actor)?,
                Step::UnauthorizedCharge { charge_point, .. } => known_actor(charge_point)?,
                Step::Tariff {
                    emsp,
                    cpo,
                    charge_point,
                    ev,
                    ..
                } => {
                    for a in [emsp, cpo, charge_point, ev] {
                        known_actor(a)?;
                    }
                }
                Step::Cdr { cpo, emsp, via, .. } => {
                    for a in [cpo, emsp].into_iter().chain(via.iter()) {
                        known_actor(a)?;
                    }
                }
                Step::FalsifyStored { holder, .. } => known_actor(holder)?,
                Step::MeterReading {
                    ev,
                    charge_point,
                    cpo,
                    emsp,
                    credential,
                    ..
                } => {
                    for a in [ev, charge_point, cpo, emsp] {
                        known_actor(a)?;
                    }
                    if let Some(c) = credential {
                        if !credentials.contains(c) {
                            return invalid(format!("step {i} references unknown credential {c}"));
                        }
                    }
                }
                Step::SmartCharging {
                    dso,
                    cpo,
                    charge_points,
                    ..
                } => {
                    for a in [dso, cpo].into_iter().chain(charge_points.iter()) {
                        known_actor(a)?;
                    }
                }
                Step::Firmware {
                    cpio,
                    cpo,
                    charge_point,
                    ..
                } => {
                    for a in [cpio, cpo, charge_point] {
                        known_actor(a)?;
                    }
                }
                Step::NfcSession {
                    cpo,
                    phone,
                    charge_point,
                    contract,
                    ..
                } => {
                    for a in [cpo, phone, charge_point] {
                        known_actor(a)?;
                    }
                    if !contracts.contains(contract) {
                        return invalid(format!("step {i} references unknown contract {contract}"));
                    }
                }
                Step::NfcReplay {
                    charge_point,
                    phone,
                    attacker,
                } => {
                    known_actor(charge_point)?;
                    match (phone, attacker) {
                        (Some(p), None) => known_actor(p)?,
                        (None, Some(a)) => known_attacker(a)?,
                        _ => {
                            return invalid(format!(
                                "step {i}: nfc_replay needs exactly one of phone or attacker"
                            ))
                        }
                    }
                }
                Step::Exchange { link, client } | Step::RotateToken { link, client } => {
                    known_link(link)?;
                    known_actor(client)?;
                }
                Step::ImpersonateClient {
                    attacker,
                    link,
                    client,
                } => {
                    known_attacker(attacker)?;
                    known_link(link)?;
                    known_actor(client)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "minimal"
seed = 1

[[actors]]
id = "cp1"
role = "ChargePoint"
operator = "cpo1"

[[actors]]
id = "cpo1"
role = "CPO"

[[links]]
id = "backhaul"
a = "cp1"
b = "cpo1"
mode = "mutual_auth"

[[steps]]
flow = "set_online"
actor = "cp1"
online = false
"#;

    #[test]
    fn parses_minimal() {
        let c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.actors.len(), 2);
        assert_eq!(c.links[0].medium, Medium::Network);
        assert!(matches!(c.steps[0], Step::SetOnline { online: false, .. }));
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("seed = 1", "seed = 1\ncolour = \"blue\"");
        let err = ScenarioConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
    }

    #[test]
    fn unknown_key_inside_step_is_named() {
        let text = MINIMAL.replace("online = false", "online = false\nspeed = 3");
        let err = ScenarioConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("speed"), "{err}");
    }

    #[test]
    fn dangling_step_reference_is_rejected() {
        let text = MINIMAL.replace("actor = \"cp1\"", "actor = \"cp9\"");
        let err = ScenarioConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("cp9"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(ScenarioConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
