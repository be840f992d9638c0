//! Actors, roles, credentials, contracts, links and application payloads.

mod ids;
mod payload;
mod topology;
mod units;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::{Bootstrap, ClientAuthMethod, LinkMode, Medium, StaticToken};
use crate::crypto::{Certificate, KeyPair, Term};

pub use ids::{ActorId, AnchorId, CertId, ContractId, CredentialId, KeyId, LinkId};
pub use payload::{
    default_tariff, embedded_term, tariff_entry_labels, ChargeDetailRecord, CredentialPresentation,
    DocType, Fields, ForecastSlot, Payload, PayloadError, ProfileSlot, TariffEntry, Timestamp,
    SLOT_SECONDS,
};
pub use topology::{build_topology, build_topology_with, Topology, TopologyError};
pub use units::{Fixed3, Kw, Kwh, Money, ParseFixedError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    EV,
    ChargePoint,
    #[serde(rename = "CPO")]
    Cpo,
    #[serde(rename = "EMSP")]
    Emsp,
    ClearingHouse,
    #[serde(rename = "DSO")]
    Dso,
    #[serde(rename = "CPIO")]
    Cpio,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::EV => "EV",
            Role::ChargePoint => "ChargePoint",
            Role::Cpo => "CPO",
            Role::Emsp => "EMSP",
            Role::ClearingHouse => "ClearingHouse",
            Role::Dso => "DSO",
            Role::Cpio => "CPIO",
        }
    }

    /// Devices located in the field, reachable by physical attackers.
    pub fn is_field_device(self) -> bool {
        matches!(self, Role::EV | Role::ChargePoint)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    pub id: ActorId,
    pub role: Role,
    /// The first entry is the actor's identity key.
    pub key_material: Vec<KeyPair>,
    /// The first entry certifies the identity key.
    pub certificates: Vec<Certificate>,
    pub static_secrets: Vec<StaticToken>,
    /// Credentials (cards, contract certificates) carried by this actor.
    pub credentials: Vec<CredentialId>,
    /// Symmetric card master key installed on a charge point.
    pub master_key: Option<Term>,
    pub trusted_anchors: Vec<AnchorId>,
    pub operator: Option<ActorId>,
    pub location: String,
    pub compromised: bool,
    pub online: bool,
}

impl Actor {
    pub fn identity_key(&self) -> Option<&KeyPair> {
        self.key_material.first()
    }

    pub fn identity_certificate(&self) -> Option<&Certificate> {
        self.certificates.first()
    }

    pub fn holds_private(&self, key: KeyId) -> bool {
        self.key_material
            .iter()
            .any(|k| k.key_id == key && k.has_private)
    }

    /// Every secret term this actor holds; what a compromise hands over.
    pub fn secret_terms(&self) -> Vec<Term> {
        let mut out: Vec<Term> = self
            .key_material
            .iter()
            .filter(|k| k.has_private)
            .map(KeyPair::private_part)
            .collect();
        out.extend(self.static_secrets.iter().map(|s| s.secret.clone()));
        out.extend(self.master_key.iter().cloned());
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CredentialKind {
    /// RFID card identified only by its UID.
    Uid { uid: String },
    /// Card holding a key diversified from a shared master key.
    SymmetricCard { uid: String, card_key: Term },
    /// Contract certificate with its own key pair (Plug-and-Charge or EMV-style card).
    ContractCertificate {
        key: KeyPair,
        certificate: Box<Certificate>,
    },
    /// Opaque credential checked upstream by the CPO/eMSP.
    OnlineCard { uid: String, secret: Term },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub id: CredentialId,
    pub holder: ActorId,
    pub kind: CredentialKind,
    /// Optional signing key for meter data, with its certificate.
    pub signing: Option<(KeyPair, Certificate)>,
}

impl Credential {
    pub fn uid(&self) -> Option<&str> {
        match &self.kind {
            CredentialKind::Uid { uid }
            | CredentialKind::SymmetricCard { uid, .. }
            | CredentialKind::OnlineCard { uid, .. } => Some(uid),
            CredentialKind::ContractCertificate { .. } => None,
        }
    }

    /// Material that only the legitimate holder should possess. A bare UID
    /// card has none.
    pub fn secret_terms(&self) -> Vec<Term> {
        let mut out = match &self.kind {
            CredentialKind::Uid { .. } => vec![],
            CredentialKind::SymmetricCard { card_key, .. } => vec![card_key.clone()],
            CredentialKind::ContractCertificate { key, .. } => vec![key.private_part()],
            CredentialKind::OnlineCard { secret, .. } => vec![secret.clone()],
        };
        if let Some((k, _)) = &self.signing {
            out.push(k.private_part());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contract {
    pub contract_id: ContractId,
    pub emsp: ActorId,
    pub driver_credential: CredentialId,
    pub valid: bool,
}

/// A point-to-point connection. `a` initiates (TLS client), `b` accepts (TLS server).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub a: ActorId,
    pub b: ActorId,
    pub medium: Medium,
    pub mode: LinkMode,
    pub cipher_suite: String,
    pub client_auth: ClientAuthMethod,
    pub bootstrap: Bootstrap,
}

impl Link {
    pub fn connects(&self, x: &ActorId, y: &ActorId) -> bool {
        (&self.a == x && &self.b == y) || (&self.a == y && &self.b == x)
    }

    pub fn has_endpoint(&self, x: &ActorId) -> bool {
        &self.a == x || &self.b == x
    }

    pub fn peer_of(&self, x: &ActorId) -> Option<&ActorId> {
        if &self.a == x {
            Some(&self.b)
        } else if &self.b == x {
            Some(&self.a)
        } else {
            None
        }
    }

    pub fn is_secured(&self) -> bool {
        self.mode != LinkMode::Plain
    }
}
