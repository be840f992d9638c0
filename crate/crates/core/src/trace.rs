//! Ordered event log of a run and its JSON-lines file format.
//!
//! The file has one header line followed by one line per event. Every line
//! carries `hash = sha256(previous hash ‖ canonical JSON of the record)`, so
//! deleting, reordering or editing a line is detected on load.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adversary::{AttackerKind, Target};
use crate::channel::{Bootstrap, ClientAuthMethod, HandshakeFailureReason, LinkMode, Medium};
use crate::cli::config::{AuthMethod, ScenarioConfig};
use crate::crypto::{Subject, Term};
use crate::envelope::{ProtectionMode, SecuredDocument};
use crate::model::{
    ActorId, ContractId, CredentialId, DocType, Fields, ForecastSlot, Kwh, LinkId, Money,
    ProfileSlot,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("corrupt trace: {0}")]
    CorruptTrace(String),
    #[error("incomplete trace: no completion record")]
    IncompleteTrace,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Who presented a credential or token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Presenter {
    Holder(ActorId),
    Attacker(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackEffect {
    Modified,
    Dropped,
    Injected,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    LinkConfigured {
        link: LinkId,
        a: ActorId,
        b: ActorId,
        medium: Medium,
        mode: LinkMode,
        cipher_suite: String,
        approved_suite: bool,
        client_auth: ClientAuthMethod,
        bootstrap: Bootstrap,
    },
    AttackerActivated {
        attacker: String,
        attacker_kind: AttackerKind,
        target: Target,
    },
    ActorCompromised {
        attacker: String,
        actor: ActorId,
    },
    /// Terms that entered the adversary's knowledge, before closure.
    Learned {
        attacker: String,
        terms: Vec<Term>,
    },
    /// A scripted action the attacker's position does not allow.
    AttackBlocked {
        attacker: String,
        action: String,
        reason: String,
    },
    Attack {
        attacker: String,
        link: Option<LinkId>,
        at: Option<ActorId>,
        effect: AttackEffect,
        doc_type: DocType,
        before: Option<Box<SecuredDocument>>,
        after: Option<Box<SecuredDocument>>,
    },
    HandshakeCompleted {
        link: LinkId,
        client: ActorId,
        server: ActorId,
        authenticated_server: Option<ActorId>,
        authenticated_client: Option<ActorId>,
    },
    HandshakeFailed {
        link: LinkId,
        reason: HandshakeFailureReason,
    },
    PeerOffline {
        link: LinkId,
        actor: ActorId,
    },
    StaticTokenPresented {
        link: LinkId,
        presenter: Presenter,
        secured: bool,
        bootstrap: Bootstrap,
        accepted: bool,
    },
    TokenRotated {
        link: LinkId,
        client: ActorId,
        secured: bool,
    },
    /// A connection opened by someone other than the link's configured client.
    ClientImpersonation {
        link: LinkId,
        attacker: String,
        client: ActorId,
        accepted: bool,
        reason: String,
    },
    Sent {
        link: LinkId,
        from: ActorId,
        to: ActorId,
        doc_id: String,
        doc_type: DocType,
        medium: Medium,
        secured: bool,
        server_authenticated: bool,
    },
    Delivered {
        link: LinkId,
        from: ActorId,
        to: ActorId,
        doc: Box<SecuredDocument>,
    },
    /// Ground truth at the originator.
    Produced {
        producer: Subject,
        doc_id: String,
        doc_type: DocType,
        mode: ProtectionMode,
        recipients: Vec<ActorId>,
        fields: Fields,
        /// Confidential field name to its intended readers.
        confidential: BTreeMap<String, Vec<ActorId>>,
    },
    Accepted {
        recipient: ActorId,
        doc_id: String,
        doc_type: DocType,
        claimed_producer: Subject,
        verified: bool,
        view: Fields,
    },
    VerificationFailed {
        recipient: ActorId,
        doc_id: String,
        doc_type: DocType,
        reason: String,
    },
    AuthorizationDecision {
        charge_point: ActorId,
        mechanism: AuthMethod,
        presenter: Presenter,
        credential: CredentialId,
        granted: bool,
        offline: bool,
        contract: Option<ContractId>,
        contract_valid: bool,
        reason: String,
    },
    EnergyDelivered {
        charge_point: ActorId,
        session_id: String,
        energy: Kwh,
        authorization: Option<usize>,
    },
    OnlineChanged {
        actor: ActorId,
        online: bool,
    },
    Stored {
        holder: ActorId,
        doc: Box<SecuredDocument>,
    },
    Quarantined {
        holder: ActorId,
        doc_id: String,
        reason: String,
    },
    Falsified {
        holder: ActorId,
        doc_id: String,
        field: String,
        snapshot: Box<SecuredDocument>,
    },
    FormatConverted {
        at: ActorId,
        doc_id: String,
        from: String,
        to: String,
        lossy: bool,
        verifies_before: bool,
        verifies_after: bool,
    },
    FirmwareInstalled {
        charge_point: ActorId,
        version: String,
        image_digest: String,
        verified: bool,
    },
    FirmwareRejected {
        charge_point: ActorId,
        version: String,
        reason: String,
    },
    RateSelected {
        ev: ActorId,
        session_id: String,
        entry_index: u32,
        price_per_kwh: Money,
    },
    ProfilesPlanned {
        cpo: ActorId,
        forecast: Vec<ForecastSlot>,
        profiles: Vec<(ActorId, Vec<ProfileSlot>)>,
    },
    ProfileApplied {
        charge_point: ActorId,
        slots: Vec<ProfileSlot>,
    },
    ReplayRejected {
        charge_point: ActorId,
        session_id: String,
    },
    StepFailed {
        failed_step: usize,
        flow: String,
        error: String,
    },
    ScenarioCompleted {
        steps: usize,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::LinkConfigured { .. } => "link_configured",
            EventKind::AttackerActivated { .. } => "attacker_activated",
            EventKind::ActorCompromised { .. } => "actor_compromised",
            EventKind::Learned { .. } => "learned",
            EventKind::AttackBlocked { .. } => "attack_blocked",
            EventKind::Attack { .. } => "attack",
            EventKind::HandshakeCompleted { .. } => "handshake_completed",
            EventKind::HandshakeFailed { .. } => "handshake_failed",
            EventKind::PeerOffline { .. } => "peer_offline",
            EventKind::StaticTokenPresented { .. } => "static_token_presented",
            EventKind::TokenRotated { .. } => "token_rotated",
            EventKind::ClientImpersonation { .. } => "client_impersonation",
            EventKind::Sent { .. } => "sent",
            EventKind::Delivered { .. } => "delivered",
            EventKind::Produced { .. } => "produced",
            EventKind::Accepted { .. } => "accepted",
            EventKind::VerificationFailed { .. } => "verification_failed",
            EventKind::AuthorizationDecision { .. } => "authorization_decision",
            EventKind::EnergyDelivered { .. } => "energy_delivered",
            EventKind::OnlineChanged { .. } => "online_changed",
            EventKind::Stored { .. } => "stored",
            EventKind::Quarantined { .. } => "quarantined",
            EventKind::Falsified { .. } => "falsified",
            EventKind::FormatConverted { .. } => "format_converted",
            EventKind::FirmwareInstalled { .. } => "firmware_installed",
            EventKind::FirmwareRejected { .. } => "firmware_rejected",
            EventKind::RateSelected { .. } => "rate_selected",
            EventKind::ProfilesPlanned { .. } => "profiles_planned",
            EventKind::ProfileApplied { .. } => "profile_applied",
            EventKind::ReplayRejected { .. } => "replay_rejected",
            EventKind::StepFailed { .. } => "step_failed",
            EventKind::ScenarioCompleted { .. } => "scenario_completed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub index: usize,
    /// Config step that caused the event; `None` during setup.
    pub step: Option<usize>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub scenario: String,
    pub seed: u64,
    pub tool_version: String,
    /// The full config, so a stored trace can be re-checked on its own.
    pub config: ScenarioConfig,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<Event>,
}

#[derive(Serialize, Deserialize)]
struct Line<T> {
    #[serde(flatten)]
    record: T,
    hash: String,
}

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    header: TraceHeader,
}

fn chain(prev: &str, record_json: &str) -> String {
    let mut h = Sha256::new();
    h.update(prev.as_bytes());
    h.update(record_json.as_bytes());
    hex::encode(h.finalize())
}

impl Trace {
    pub fn new(header: TraceHeader) -> Self {
        Trace {
            header,
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, step: Option<usize>, kind: EventKind) -> usize {
        let index = self.events.len();
        self.events.push(Event { index, step, kind });
        index
    }

    pub fn is_complete(&self) -> bool {
        matches!(
            self.events.last(),
            Some(Event {
                kind: EventKind::ScenarioCompleted { .. },
                ..
            })
        )
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        let header = HeaderRecord {
            header: self.header.clone(),
        };
        let header_json = serde_json::to_string(&header).expect("trace header serializes");
        let mut prev = chain("", &header_json);
        writeln!(
            out,
            "{}",
            serde_json::to_string(&Line {
                record: header,
                hash: prev.clone()
            })
            .expect("serializes")
        )?;
        for e in &self.events {
            let json = serde_json::to_string(e).expect("events serialize");
            prev = chain(&prev, &json);
            writeln!(
                out,
                "{}",
                serde_json::to_string(&Line {
                    record: e,
                    hash: prev.clone()
                })
                .expect("serializes")
            )?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    /// Loads and checks a trace: hash chain, dense indices, completion.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Trace, TraceError> {
        let corrupt = |m: String| TraceError::CorruptTrace(m);
        let mut lines = input.lines();
        let first = lines.next().ok_or_else(|| corrupt("empty file".into()))??;
        let header_line: Line<HeaderRecord> =
            serde_json::from_str(&first).map_err(|e| corrupt(format!("header: {e}")))?;
        let header_json = serde_json::to_string(&header_line.record).expect("serializes");
        let mut prev = chain("", &header_json);
        if prev != header_line.hash {
            return Err(corrupt("header hash mismatch".into()));
        }
        let mut trace = Trace::new(header_line.record.header);
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line<Event> =
                serde_json::from_str(&line).map_err(|e| corrupt(format!("line {}: {e}", n + 2)))?;
            if parsed.record.index != trace.events.len() {
                return Err(corrupt(format!(
                    "expected event index {}, found {}",
                    trace.events.len(),
                    parsed.record.index
                )));
            }
            let json = serde_json::to_string(&parsed.record).expect("serializes");
            prev = chain(&prev, &json);
            if prev != parsed.hash {
                return Err(corrupt(format!(
                    "hash mismatch at event {}",
                    parsed.record.index
                )));
            }
            trace.events.push(parsed.record);
        }
        if !trace.is_complete() {
            return Err(TraceError::IncompleteTrace);
        }
        Ok(trace)
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, TraceError> {
        Trace::read_jsonl(text.as_bytes())
    }
}
