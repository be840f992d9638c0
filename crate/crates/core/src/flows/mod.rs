//! Scenario execution. A [`World`] owns the mutable topology, the sessions,
//! the adversary and the trace, and runs each config step as a protocol flow.
//!
//! Every flow reports through trace events only; verdicts are computed from
//! the finished trace by [`crate::verdict`].

mod authorization;
mod billing;
mod devices;
mod links;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::adversary::{Adversary, AdversaryError};
use crate::channel::{self, ChannelError, ClientAuthMethod, Medium, Session};
use crate::cli::config::{ScenarioConfig, Step};
use crate::crypto::{Certificate, Fresh, KeyPair, Subject};
use crate::envelope::{
    open_for, protect, verify_document, ConfidentialityPolicy, DocumentBody, EnvelopeError,
    Producer, ProtectionMode, SecuredDocument,
};
use crate::model::{
    build_topology_with, ActorId, ContractId, Fields, Kwh, Link, Money, Payload, PayloadError,
    Role, Timestamp, Topology, TopologyError,
};
use crate::trace::{EventKind, Presenter, Trace, TraceHeader, TOOL_VERSION};

/// Energy delivered per grant when a step does not say.
pub const DEFAULT_ENERGY_KWH: i64 = 10;
/// Start of the simulated clock.
pub const EPOCH: Timestamp = 1_700_000_000;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("no link between {0} and {1}")]
    NoLink(ActorId, ActorId),
    #[error("unknown actor {0}")]
    UnknownActor(ActorId),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Payload(#[from] PayloadError),
    #[error(
        "infeasible allocation at slot {slot_start}: {needed} kW needed, {allotted} kW allotted"
    )]
    InfeasibleAllocation {
        slot_start: Timestamp,
        needed: Kwh,
        allotted: Kwh,
    },
    #[error("{0}")]
    Precondition(String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
}

/// A delivered charging session, kept for billing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChargeSession {
    pub session_id: String,
    pub charge_point: ActorId,
    pub holder: Option<ActorId>,
    pub contract: Option<ContractId>,
    pub energy: Kwh,
    pub start: Timestamp,
    pub end: Timestamp,
    pub billed: bool,
}

pub struct World {
    pub config: ScenarioConfig,
    pub topology: Topology,
    pub fresh: Fresh,
    pub trace: Trace,
    pub adversary: Adversary,
    sessions: BTreeMap<crate::model::LinkId, Session>,
    step: Option<usize>,
    now: Timestamp,
    next_doc: u64,
    next_session: u64,
    /// Records each actor keeps at rest.
    pub stores: BTreeMap<ActorId, Vec<SecuredDocument>>,
    pub charge_sessions: Vec<ChargeSession>,
    /// Price per kWh each EV last selected.
    rates: BTreeMap<ActorId, Money>,
    replay_cache: BTreeMap<ActorId, BTreeSet<String>>,
    /// Session descriptions each phone has carried.
    phone_seen: BTreeMap<ActorId, Vec<SecuredDocument>>,
}

/// Runs a scenario to completion.
pub fn run(config: &ScenarioConfig) -> Result<Trace, RunError> {
    let mut world = World::new(config)?;
    world.run_steps();
    Ok(world.trace)
}

impl World {
    pub fn new(config: &ScenarioConfig) -> Result<Self, RunError> {
        let mut fresh = Fresh::new(config.seed);
        let topology = build_topology_with(config, &mut fresh)?;
        let trace = Trace::new(TraceHeader {
            scenario: config.name.clone(),
            seed: config.seed,
            tool_version: TOOL_VERSION.to_string(),
            config: config.clone(),
        });
        let mut world = World {
            config: config.clone(),
            topology,
            fresh,
            trace,
            adversary: Adversary::new(),
            sessions: BTreeMap::new(),
            step: None,
            now: EPOCH,
            next_doc: 0,
            next_session: 0,
            stores: BTreeMap::new(),
            charge_sessions: Vec::new(),
            rates: BTreeMap::new(),
            replay_cache: BTreeMap::new(),
            phone_seen: BTreeMap::new(),
        };
        world.setup()?;
        Ok(world)
    }

    fn setup(&mut self) -> Result<(), RunError> {
        for l in self.topology.links.clone() {
            self.emit(EventKind::LinkConfigured {
                approved_suite: self.topology.suites.is_approved(&l.cipher_suite),
                link: l.id,
                a: l.a,
                b: l.b,
                medium: l.medium,
                mode: l.mode,
                cipher_suite: l.cipher_suite,
                client_auth: l.client_auth,
                bootstrap: l.bootstrap,
            });
        }
        if self.config.attackers.is_empty() {
            return Ok(());
        }
        if let Some(e) = self.adversary.seed_public(&self.topology) {
            self.emit(e);
        }
        for spec in self.config.attackers.clone() {
            let events = self.adversary.activate(spec, &mut self.topology)?;
            self.emit_all(events);
        }
        // A token handed over in the clear at provisioning time is seen by
        // whoever taps the link.
        for l in self.topology.links.clone() {
            if l.client_auth != ClientAuthMethod::StaticToken
                || l.bootstrap != channel::Bootstrap::Insecure
            {
                continue;
            }
            let Some(token) = self.topology.expected_tokens.get(&l.id).cloned() else {
                continue;
            };
            let plain = Session {
                link: l.id.clone(),
                client: l.a.clone(),
                server: l.b.clone(),
                mode: channel::LinkMode::Plain,
                authenticated_server: None,
                authenticated_client: None,
                token_client: None,
                established: true,
                session_key: None,
            };
            let events = self.adversary.observe(&plain, &token);
            self.emit_all(events);
        }
        Ok(())
    }

    pub fn run_steps(&mut self) {
        let steps = self.config.steps.clone();
        for (i, step) in steps.iter().enumerate() {
            self.step = Some(i);
            if let Err(e) = self.run_step(step) {
                self.emit(EventKind::StepFailed {
                    failed_step: i,
                    flow: step.flow_name().to_string(),
                    error: e.to_string(),
                });
            }
        }
        self.step = None;
        self.emit(EventKind::ScenarioCompleted { steps: steps.len() });
    }

    fn run_step(&mut self, step: &Step) -> Result<(), FlowError> {
        match step.clone() {
            Step::Authorize {
                method,
                charge_point,
                credential,
                holder,
                attacker,
                energy_kwh,
            } => self.authorize(
                method,
                &charge_point,
                &credential,
                holder,
                attacker,
                energy_kwh,
            ),
            Step::SetOnline { actor, online } => self.set_online(&actor, online),
            Step::UnauthorizedCharge {
                charge_point,
                energy_kwh,
            } => {
                self.require_role(&charge_point, Role::ChargePoint)?;
                self.deliver_energy(&charge_point, None, None, energy_kwh, None);
                Ok(())
            }
            Step::Tariff {
                emsp,
                cpo,
                charge_point,
                ev,
                protection,
                entries,
            } => {
                let mode = self.mode(protection);
                self.tariff(&emsp, &cpo, &charge_point, &ev, mode, entries)
            }
            Step::Cdr {
                cpo,
                emsp,
                via,
                protection,
            } => {
                let mode = self.mode(protection);
                self.cdr(&cpo, &emsp, via.as_ref(), mode)
            }
            Step::FalsifyStored {
                holder,
                field,
                value,
            } => self.falsify_stored(&holder, &field, &value),
            Step::MeterReading {
                signer,
                ev,
                charge_point,
                cpo,
                emsp,
                credential,
                conversion,
                protection,
            } => {
                let mode = self.mode(protection);
                self.meter_reading(
                    signer,
                    &ev,
                    &charge_point,
                    &cpo,
                    &emsp,
                    credential.as_ref(),
                    conversion,
                    mode,
                )
            }
            Step::SmartCharging {
                dso,
                cpo,
                charge_points,
                forecast,
                min_kw_per_point,
                protection,
            } => {
                let mode = self.mode(protection);
                self.smart_charging(&dso, &cpo, &charge_points, forecast, min_kw_per_point, mode)
            }
            Step::Firmware {
                cpio,
                cpo,
                charge_point,
                version,
                image,
                protection,
            } => {
                let mode = self.mode(protection);
                self.firmware(&cpio, &cpo, &charge_point, &version, &image, mode)
            }
            Step::NfcSession {
                cpo,
                phone,
                charge_point,
                contract,
                max_energy,
                protection,
            } => {
                let mode = self.mode(protection);
                self.nfc_session(&cpo, &phone, &charge_point, &contract, max_energy, mode)
            }
            Step::NfcReplay {
                charge_point,
                phone,
                attacker,
            } => self.nfc_replay(&charge_point, phone, attacker),
            Step::Exchange { link, client } => self.exchange(&link, &client),
            Step::RotateToken { link, client } => self.rotate_token(&link, &client),
            Step::ImpersonateClient {
                attacker,
                link,
                client,
            } => self.impersonate_client(&attacker, &link, &client),
        }
    }

    fn mode(&self, step_mode: Option<ProtectionMode>) -> ProtectionMode {
        step_mode.unwrap_or(self.config.protection.default)
    }

    pub(crate) fn emit(&mut self, kind: EventKind) -> usize {
        self.trace.push(self.step, kind)
    }

    pub(crate) fn emit_all<I: IntoIterator<Item = EventKind>>(&mut self, events: I) {
        for e in events {
            self.emit(e);
        }
    }

    pub(crate) fn actor(&self, id: &ActorId) -> Result<&crate::model::Actor, FlowError> {
        self.topology
            .actors
            .get(id)
            .ok_or_else(|| FlowError::UnknownActor(id.clone()))
    }

    pub(crate) fn require_role(&self, id: &ActorId, role: Role) -> Result<(), FlowError> {
        let actual = self.actor(id)?.role;
        if actual != role {
            return Err(FlowError::Precondition(format!(
                "{id} is a {actual}, expected {role}"
            )));
        }
        Ok(())
    }

    pub(crate) fn signer_of(&self, id: &ActorId) -> Option<(KeyPair, Certificate)> {
        let a = self.topology.actors.get(id)?;
        Some((a.identity_key()?.clone(), a.identity_certificate()?.clone()))
    }

    fn set_online(&mut self, actor: &ActorId, online: bool) -> Result<(), FlowError> {
        let a = self
            .topology
            .actors
            .get_mut(actor)
            .ok_or_else(|| FlowError::UnknownActor(actor.clone()))?;
        a.online = online;
        let touched: Vec<_> = self
            .topology
            .links
            .iter()
            .filter(|l| l.has_endpoint(actor))
            .map(|l| l.id.clone())
            .collect();
        for l in touched {
            if let Some(mut s) = self.sessions.remove(&l) {
                s.close();
            }
        }
        self.emit(EventKind::OnlineChanged {
            actor: actor.clone(),
            online,
        });
        Ok(())
    }

    /// Records delivered energy and returns the new session id.
    pub(crate) fn deliver_energy(
        &mut self,
        charge_point: &ActorId,
        holder: Option<ActorId>,
        contract: Option<ContractId>,
        energy: Kwh,
        authorization: Option<usize>,
    ) -> String {
        self.next_session += 1;
        let session_id = format!("s{}", self.next_session);
        let start = self.now;
        self.now += 3600;
        self.charge_sessions.push(ChargeSession {
            session_id: session_id.clone(),
            charge_point: charge_point.clone(),
            holder,
            contract,
            energy,
            start,
            end: self.now,
            billed: false,
        });
        self.emit(EventKind::EnergyDelivered {
            charge_point: charge_point.clone(),
            session_id: session_id.clone(),
            energy,
            authorization,
        });
        session_id
    }

    /// Link to use between two actors, preferring `medium`.
    fn pick_link(&self, from: &ActorId, to: &ActorId, medium: Medium) -> Option<Link> {
        let candidates: Vec<&Link> = self
            .topology
            .links
            .iter()
            .filter(|l| l.connects(from, to))
            .collect();
        candidates
            .iter()
            .find(|l| l.medium == medium)
            .or(candidates.first())
            .map(|l| (*l).clone())
    }

    /// Returns the established session on `link`, running the handshake if needed.
    pub(crate) fn session_for(&mut self, link: &Link) -> Result<Session, FlowError> {
        if let Some(s) = self.sessions.get(&link.id).filter(|s| s.established) {
            return Ok(s.clone());
        }
        match channel::establish(&self.topology, link, &mut self.fresh) {
            Ok(s) => {
                self.emit(EventKind::HandshakeCompleted {
                    link: link.id.clone(),
                    client: s.client.clone(),
                    server: s.server.clone(),
                    authenticated_server: s.authenticated_server.clone(),
                    authenticated_client: s.authenticated_client.clone(),
                });
                self.sessions.insert(link.id.clone(), s.clone());
                Ok(s)
            }
            Err(ChannelError::PeerOffline(actor)) => {
                self.emit(EventKind::PeerOffline {
                    link: link.id.clone(),
                    actor: actor.clone(),
                });
                Err(ChannelError::PeerOffline(actor).into())
            }
            Err(ChannelError::HandshakeFailure { link: l, reason }) => {
                self.emit(EventKind::HandshakeFailed {
                    link: l.clone(),
                    reason,
                });
                Err(ChannelError::HandshakeFailure { link: l, reason }.into())
            }
            Err(e) => Err(e.into()),
        }
    }

    /// The configured client presents its static token on a fresh session.
    pub(crate) fn present_token(&mut self, link: &Link) -> Result<bool, FlowError> {
        let client = link.a.clone();
        let secret = self
            .actor(&client)?
            .static_secrets
            .iter()
            .find(|t| t.link == link.id)
            .map(|t| t.secret.clone())
            .ok_or_else(|| {
                FlowError::Precondition(format!("{client} holds no token for {}", link.id))
            })?;
        let expected = self.topology.expected_tokens.get(&link.id).cloned();
        let session = self
            .sessions
            .get_mut(&link.id)
            .ok_or(ChannelError::SessionClosed(link.id.clone()))?;
        let accepted = expected
            .is_some_and(|e| channel::authenticate_client_static(session, &secret, &e, &client));
        let session = session.clone();
        self.emit(EventKind::StaticTokenPresented {
            link: link.id.clone(),
            presenter: Presenter::Holder(client),
            secured: session.session_key.is_some(),
            bootstrap: link.bootstrap,
            accepted,
        });
        let learned = self.adversary.observe(&session, &secret);
        self.emit_all(learned);
        Ok(accepted)
    }

    /// Sends `doc` over one hop. `Ok(None)` means an attacker dropped it.
    pub(crate) fn transmit(
        &mut self,
        from: &ActorId,
        to: &ActorId,
        doc: SecuredDocument,
        medium: Medium,
    ) -> Result<Option<SecuredDocument>, FlowError> {
        let link = self
            .pick_link(from, to, medium)
            .ok_or_else(|| FlowError::NoLink(from.clone(), to.clone()))?;
        let mut session = self.session_for(&link)?;
        if link.client_auth == ClientAuthMethod::StaticToken && session.token_client.is_none() {
            if !self.present_token(&link)? {
                return Err(ChannelError::NotAuthenticated(link.id.clone()).into());
            }
            session = self.sessions[&link.id].clone();
        }
        self.emit(EventKind::Sent {
            link: link.id.clone(),
            from: from.clone(),
            to: to.clone(),
            doc_id: doc.header.doc_id.clone(),
            doc_type: doc.header.doc_type,
            medium: link.medium,
            secured: session.session_key.is_some(),
            server_authenticated: session.authenticated_server.is_some(),
        });
        let (delivery, events) = self.adversary.on_wire(&link, &session, from, to, doc);
        self.emit_all(events);
        let Some(doc) = delivery.into_doc() else {
            return Ok(None);
        };
        self.emit(EventKind::Delivered {
            link: link.id.clone(),
            from: from.clone(),
            to: to.clone(),
            doc: Box::new(doc.clone()),
        });
        self.learn_at(to, &doc);
        Ok(Some(doc))
    }

    /// A compromised actor hands everything it receives to its attacker.
    fn learn_at(&mut self, actor: &ActorId, doc: &SecuredDocument) {
        if let Some(attacker) = self.adversary.controller_of(actor).map(str::to_string) {
            if let Some(e) = self.adversary.learn(&attacker, vec![doc.term()]) {
                self.emit(e);
            }
        }
    }

    /// Passes `doc` through an intermediary on its way to `next`.
    pub(crate) fn relay(
        &mut self,
        actor: &ActorId,
        next: &ActorId,
        doc: SecuredDocument,
    ) -> Option<SecuredDocument> {
        if !self.adversary.controls(actor) {
            return Some(doc);
        }
        let (delivery, events) =
            self.adversary
                .at_endpoint(actor, actor, next, doc, &self.topology);
        self.emit_all(events);
        delivery.into_doc()
    }

    /// Forwards `doc` along `path` over network links, relaying at each
    /// intermediate actor.
    pub(crate) fn send_path(
        &mut self,
        path: &[ActorId],
        doc: SecuredDocument,
    ) -> Result<Option<SecuredDocument>, FlowError> {
        let mut doc = doc;
        for (i, hop) in path.windows(2).enumerate() {
            if i > 0 {
                doc = match self.relay(&hop[0], &hop[1], doc) {
                    Some(d) => d,
                    None => return Ok(None),
                };
            }
            doc = match self.transmit(&hop[0], &hop[1], doc, Medium::Network)? {
                Some(d) => d,
                None => return Ok(None),
            };
        }
        Ok(Some(doc))
    }

    /// Builds, protects and records a document at its originator.
    pub(crate) fn produce(
        &mut self,
        subject: Subject,
        signer: Option<(KeyPair, Certificate)>,
        payload: &Payload,
        recipients: Vec<ActorId>,
        mode: ProtectionMode,
        encoding: &str,
    ) -> Result<SecuredDocument, FlowError> {
        self.next_doc += 1;
        let doc_id = format!("doc-{}", self.next_doc);
        let doc_type = payload.doc_type();
        let fields = payload.fields();
        let mut confidential: BTreeMap<String, Vec<ActorId>> = BTreeMap::new();
        for (name, _) in &fields {
            let mut readers: Vec<ActorId> = self
                .config
                .confidentiality
                .iter()
                .filter(|r| r.matches(doc_type, name))
                .flat_map(|r| r.recipients.iter().cloned())
                .collect();
            readers.sort();
            readers.dedup();
            if !readers.is_empty() {
                confidential.insert(name.clone(), readers);
            }
        }
        let policy: ConfidentialityPolicy = confidential
            .iter()
            .map(|(name, readers)| {
                let keys = readers
                    .iter()
                    .filter_map(|r| {
                        let key = self.topology.actors.get(r)?.identity_key()?.key_id;
                        Some((r.clone(), key))
                    })
                    .collect();
                (name.clone(), keys)
            })
            .collect();
        let (key, cert) = match &signer {
            Some((k, c)) => (Some(k), Some(c)),
            None => (None, None),
        };
        let producer = Producer {
            subject: subject.clone(),
            key,
            certificate: cert,
        };
        let doc = protect(
            &producer,
            &doc_id,
            payload,
            recipients.clone(),
            mode,
            &policy,
            encoding,
            &mut self.fresh,
        )?;
        self.emit(EventKind::Produced {
            producer: subject,
            doc_id,
            doc_type,
            mode,
            recipients,
            fields,
            confidential,
        });
        Ok(doc)
    }

    /// The recipient checks `doc` and, if satisfied, reads what it can.
    /// Unprotected documents are taken at face value.
    pub(crate) fn accept(
        &mut self,
        recipient: &ActorId,
        doc: &SecuredDocument,
        expected: &Subject,
        required: ProtectionMode,
    ) -> Result<Fields, String> {
        let actor = self.actor(recipient).map_err(|e| e.to_string())?;
        let keys = actor.key_material.clone();
        let anchors = actor.trusted_anchors.clone();
        let check = if doc.mode() == ProtectionMode::NoProtection {
            if required == ProtectionMode::NoProtection {
                Ok(false)
            } else {
                Err("unsigned document where a signature is required".to_string())
            }
        } else {
            match verify_document(doc, &self.topology.pki, &anchors) {
                Ok(p) if &p == expected => Ok(true),
                Ok(p) => Err(format!("signed by {p}, expected {expected}")),
                Err(f) => Err(f.to_string()),
            }
            .and_then(|v| {
                if has_redacted_slots(doc) {
                    Err("redacted in transit".to_string())
                } else {
                    Ok(v)
                }
            })
        };
        match check {
            Ok(verified) => {
                let view = open_for(doc, recipient, &keys);
                self.emit(EventKind::Accepted {
                    recipient: recipient.clone(),
                    doc_id: doc.header.doc_id.clone(),
                    doc_type: doc.header.doc_type,
                    claimed_producer: doc.header.producer.clone(),
                    verified,
                    view: view.clone(),
                });
                Ok(view)
            }
            Err(reason) => {
                self.emit(EventKind::VerificationFailed {
                    recipient: recipient.clone(),
                    doc_id: doc.header.doc_id.clone(),
                    doc_type: doc.header.doc_type,
                    reason: reason.clone(),
                });
                Err(reason)
            }
        }
    }
}

/// A slot with neither a disclosure nor an encrypted copy for anyone was
/// withheld by someone on the path.
fn has_redacted_slots(doc: &SecuredDocument) -> bool {
    match &doc.body {
        DocumentBody::Selective { slots, .. } => slots
            .iter()
            .any(|s| s.disclosure.is_none() && s.confidential_for.is_empty()),
        _ => false,
    }
}

#[cfg(test)]
mod tests;
