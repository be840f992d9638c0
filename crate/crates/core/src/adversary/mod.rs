//! Physical, endpoint and network attackers driven by deterministic scripts,
//! sharing one symbolic knowledge set.

mod knowledge;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::Session;
use crate::crypto::Term;
use crate::envelope::{DocumentBody, SecuredDocument};
use crate::model::{ActorId, CredentialKind, DocType, Link, LinkId, Payload, Role, Topology};
use crate::trace::{AttackEffect, EventKind};

pub use knowledge::Knowledge;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackerKind {
    /// Hands-on access to a field device.
    Physical,
    /// Controls a legitimate system.
    Endpoint,
    /// Controls the traffic on one link.
    Network,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Actor(ActorId),
    Link(LinkId),
}

/// Selects messages by type and direction; an empty matcher matches all.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matcher {
    #[serde(default)]
    pub doc_type: Option<DocType>,
    #[serde(default)]
    pub from: Option<ActorId>,
    #[serde(default)]
    pub to: Option<ActorId>,
}

impl Matcher {
    pub fn matches(&self, doc: &SecuredDocument, from: &ActorId, to: &ActorId) -> bool {
        self.doc_type.is_none_or(|t| t == doc.header.doc_type)
            && self.from.as_ref().is_none_or(|f| f == from)
            && self.to.as_ref().is_none_or(|t| t == to)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mutation {
    SetField {
        field: String,
        value: String,
    },
    RemoveField {
        field: String,
    },
    /// Drops tariff entries until only the `keep` most expensive readable ones remain.
    KeepMostExpensive {
        keep: u32,
    },
    ReplaceFirmwareImage {
        image: String,
    },
    /// Re-signs with the compromised actor's own key after any other change.
    Resign,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackAction {
    Eavesdrop,
    ModifyInTransit {
        #[serde(default)]
        matcher: Matcher,
        mutations: Vec<Mutation>,
    },
    /// Replaces a matching message with a forged, unsigned one.
    Inject {
        #[serde(default)]
        matcher: Matcher,
        payload: Payload,
    },
    Drop {
        #[serde(default)]
        matcher: Matcher,
    },
    ReadCardUid,
    ExtractMasterKey,
    CompromiseActor,
    /// Allows replaying messages recorded on `link` when forging is impossible.
    ReplayTranscript {
        link: LinkId,
    },
}

impl AttackAction {
    pub fn name(&self) -> &'static str {
        match self {
            AttackAction::Eavesdrop => "eavesdrop",
            AttackAction::ModifyInTransit { .. } => "modify_in_transit",
            AttackAction::Inject { .. } => "inject",
            AttackAction::Drop { .. } => "drop",
            AttackAction::ReadCardUid => "read_card_uid",
            AttackAction::ExtractMasterKey => "extract_master_key",
            AttackAction::CompromiseActor => "compromise_actor",
            AttackAction::ReplayTranscript { .. } => "replay_transcript",
        }
    }

    fn content_rule(&self) -> Option<&Matcher> {
        match self {
            AttackAction::ModifyInTransit { matcher, .. }
            | AttackAction::Inject { matcher, .. }
            | AttackAction::Drop { matcher } => Some(matcher),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerSpec {
    pub id: String,
    pub kind: AttackerKind,
    pub target: Target,
    #[serde(default)]
    pub script: Vec<AttackAction>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdversaryError {
    #[error("attacker {attacker}: invalid target: {reason}")]
    InvalidTarget { attacker: String, reason: String },
}

/// Result of pushing a message past the attackers on its path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Delivery {
    Deliver(SecuredDocument),
    Modified(SecuredDocument),
    Injected(SecuredDocument),
    Dropped,
}

impl Delivery {
    pub fn into_doc(self) -> Option<SecuredDocument> {
        match self {
            Delivery::Deliver(d) | Delivery::Modified(d) | Delivery::Injected(d) => Some(d),
            Delivery::Dropped => None,
        }
    }
}

/// All attackers of a run. They collude: every observation feeds one
/// knowledge set.
#[derive(Clone, Debug, Default)]
pub struct Adversary {
    pub specs: Vec<AttackerSpec>,
    pub knowledge: Knowledge,
    /// Plaintext documents seen on tapped links, in order.
    pub transcripts: Vec<(LinkId, SecuredDocument)>,
    /// Actors whose behaviour attackers control, with the controlling attacker.
    controlled: Vec<(ActorId, usize)>,
}

impl Adversary {
    pub fn new() -> Self {
        Adversary::default()
    }

    pub fn controls(&self, actor: &ActorId) -> bool {
        self.controlled.iter().any(|(a, _)| a == actor)
    }

    /// Id of the attacker that controls `actor`.
    pub fn controller_of(&self, actor: &ActorId) -> Option<&str> {
        self.controlled
            .iter()
            .find(|(a, _)| a == actor)
            .map(|(_, i)| self.specs[*i].id.as_str())
    }

    pub fn controlled_actors(&self) -> BTreeSet<ActorId> {
        self.controlled.iter().map(|(a, _)| a.clone()).collect()
    }

    pub fn spec(&self, id: &str) -> Option<&AttackerSpec> {
        self.specs.iter().find(|s| s.id == id)
    }

    pub fn has_action(&self, id: &str, pred: impl Fn(&AttackAction) -> bool) -> bool {
        self.spec(id).is_some_and(|s| s.script.iter().any(pred))
    }

    /// Adds terms and reports what was new, as a trace event.
    pub fn learn(&mut self, attacker: &str, terms: Vec<Term>) -> Option<EventKind> {
        let fresh: Vec<Term> = terms
            .into_iter()
            .filter(|t| !self.knowledge.contains(t))
            .collect();
        if fresh.is_empty() {
            return None;
        }
        let added = self.knowledge.add_all(fresh.clone());
        if added.is_empty() {
            return None;
        }
        Some(EventKind::Learned {
            attacker: attacker.to_string(),
            terms: fresh,
        })
    }

    pub fn can_derive(&self, t: &Term) -> bool {
        self.knowledge.can_derive(t)
    }

    /// Seeds public knowledge. Called once before any activation.
    pub fn seed_public(&mut self, topology: &Topology) -> Option<EventKind> {
        self.learn("adversary", topology.public_terms())
    }

    /// Brings an attacker into play. Endpoint attackers and physical ones
    /// that compromise their device take over the actor, which hands over
    /// all of its secrets.
    pub fn activate(
        &mut self,
        spec: AttackerSpec,
        topology: &mut Topology,
    ) -> Result<Vec<EventKind>, AdversaryError> {
        let invalid = |reason: String| AdversaryError::InvalidTarget {
            attacker: spec.id.clone(),
            reason,
        };
        let index = self.specs.len();
        let mut events = vec![EventKind::AttackerActivated {
            attacker: spec.id.clone(),
            attacker_kind: spec.kind,
            target: spec.target.clone(),
        }];
        match (&spec.kind, &spec.target) {
            (AttackerKind::Network, Target::Link(l)) => {
                if topology.link(l).is_none() {
                    return Err(invalid(format!("no link {l}")));
                }
                for action in &spec.script {
                    if matches!(
                        action,
                        AttackAction::ReadCardUid
                            | AttackAction::ExtractMasterKey
                            | AttackAction::CompromiseActor
                    ) {
                        events.push(blocked(&spec.id, action, "needs physical access"));
                    }
                }
            }
            (AttackerKind::Network, Target::Actor(a)) => {
                return Err(invalid(format!(
                    "network attacker needs a link, got actor {a}"
                )))
            }
            (_, Target::Link(l)) => {
                return Err(invalid(format!(
                    "{:?} attacker needs an actor, got link {l}",
                    spec.kind
                )))
            }
            (AttackerKind::Endpoint, Target::Actor(a)) => {
                if !topology.actors.contains_key(a) {
                    return Err(invalid(format!("no actor {a}")));
                }
                events.extend(self.compromise(&spec.id, a, index, topology));
            }
            (AttackerKind::Physical, Target::Actor(a)) => {
                let role = topology
                    .actors
                    .get(a)
                    .ok_or_else(|| invalid(format!("no actor {a}")))?
                    .role;
                if !role.is_field_device() {
                    return Err(invalid(format!("{a} is a {role}, not a field device")));
                }
                for action in &spec.script {
                    match action {
                        AttackAction::ReadCardUid => {
                            let terms = card_readable_terms(topology, a);
                            events.extend(self.learn(&spec.id, terms));
                        }
                        AttackAction::ExtractMasterKey => {
                            match (&topology.actors[a].master_key, role) {
                                (Some(m), Role::ChargePoint) => {
                                    events.extend(self.learn(&spec.id, vec![m.clone()]))
                                }
                                _ => events.push(blocked(
                                    &spec.id,
                                    action,
                                    "target holds no master key",
                                )),
                            }
                        }
                        AttackAction::CompromiseActor => {
                            events.extend(self.compromise(&spec.id, a, index, topology))
                        }
                        AttackAction::Eavesdrop
                        | AttackAction::ModifyInTransit { .. }
                        | AttackAction::Inject { .. }
                        | AttackAction::Drop { .. }
                        | AttackAction::ReplayTranscript { .. } => {}
                    }
                }
            }
        }
        self.specs.push(spec);
        Ok(events)
    }

    fn compromise(
        &mut self,
        attacker: &str,
        actor: &ActorId,
        spec_index: usize,
        topology: &mut Topology,
    ) -> Vec<EventKind> {
        let mut events = vec![];
        let a = topology.actors.get_mut(actor).expect("checked by caller");
        a.compromised = true;
        let mut secrets = a.secret_terms();
        let creds = a.credentials.clone();
        for c in creds {
            if let Some(cred) = topology.credentials.get(&c) {
                secrets.extend(cred.secret_terms());
                secrets.extend(cred.uid().map(Term::atom));
            }
        }
        // An operator backend holds the whitelist it pushes to its charge
        // points and the online-card secrets it checks.
        if topology.actors[actor].role == Role::Cpo {
            secrets.extend(
                topology
                    .uid_whitelists
                    .get(actor)
                    .into_iter()
                    .flatten()
                    .map(Term::atom),
            );
            secrets.extend(topology.credentials.values().filter_map(|c| match &c.kind {
                CredentialKind::OnlineCard { secret, .. } => Some(secret.clone()),
                _ => None,
            }));
        }
        if !self.controls(actor) {
            self.controlled.push((actor.clone(), spec_index));
        }
        events.push(EventKind::ActorCompromised {
            attacker: attacker.to_string(),
            actor: actor.clone(),
        });
        events.extend(self.learn(attacker, secrets));
        events
    }

    fn network_attackers_on(&self, link: &LinkId) -> impl Iterator<Item = &AttackerSpec> {
        let link = link.clone();
        self.specs.iter().filter(move |s| {
            s.kind == AttackerKind::Network && s.target == Target::Link(link.clone())
        })
    }

    /// Lets tapping attackers see `content` as it appears on the wire.
    pub fn observe(&mut self, session: &Session, content: &Term) -> Vec<EventKind> {
        let wire = session.wire_view(content);
        let tappers: Vec<String> = self
            .network_attackers_on(&session.link)
            .filter(|s| s.script.contains(&AttackAction::Eavesdrop))
            .map(|s| s.id.clone())
            .collect();
        tappers
            .into_iter()
            .filter_map(|id| self.learn(&id, vec![wire.clone()]))
            .collect()
    }

    /// Records a plaintext document for later replay, if anyone taps the link.
    fn record(&mut self, link: &Link, session: &Session, doc: &SecuredDocument) {
        let tapped = self
            .network_attackers_on(&link.id)
            .any(|s| s.script.contains(&AttackAction::Eavesdrop));
        if tapped && session.session_key.is_none() {
            self.transcripts.push((link.id.clone(), doc.clone()));
        }
    }

    /// Runs every network attacker on `link` over a message in transit.
    pub fn on_wire(
        &mut self,
        link: &Link,
        session: &Session,
        from: &ActorId,
        to: &ActorId,
        doc: SecuredDocument,
    ) -> (Delivery, Vec<EventKind>) {
        let mut events = self.observe(session, &doc.term());
        self.record(link, session, &doc);
        let specs: Vec<AttackerSpec> = self.network_attackers_on(&link.id).cloned().collect();
        let mut current = Delivery::Deliver(doc);
        for spec in specs {
            let Some(doc) = current.clone().into_doc() else {
                break;
            };
            let Some(action) = spec
                .script
                .iter()
                .find(|a| a.content_rule().is_some_and(|m| m.matches(&doc, from, to)))
            else {
                continue;
            };
            if session.session_key.is_some() && !matches!(action, AttackAction::Drop { .. }) {
                events.push(blocked(
                    &spec.id,
                    action,
                    "content of a secured session is not accessible",
                ));
                continue;
            }
            let (next, ev) = self.apply(&spec.id, action, doc, Some(&link.id), None, None);
            events.extend(ev);
            current = next;
        }
        (current, events)
    }

    /// Applies the controlling attacker's first matching rule to a message
    /// passing through a compromised endpoint.
    pub fn at_endpoint(
        &mut self,
        actor: &ActorId,
        from: &ActorId,
        to: &ActorId,
        doc: SecuredDocument,
        topology: &Topology,
    ) -> (Delivery, Vec<EventKind>) {
        let Some(&(_, idx)) = self.controlled.iter().find(|(a, _)| a == actor) else {
            return (Delivery::Deliver(doc), vec![]);
        };
        let spec = self.specs[idx].clone();
        let Some(action) = spec
            .script
            .iter()
            .find(|a| a.content_rule().is_some_and(|m| m.matches(&doc, from, to)))
        else {
            return (Delivery::Deliver(doc), vec![]);
        };
        let signer = topology.actors.get(actor);
        self.apply(&spec.id, action, doc, None, Some(actor), signer)
    }

    fn apply(
        &mut self,
        attacker: &str,
        action: &AttackAction,
        doc: SecuredDocument,
        link: Option<&LinkId>,
        at: Option<&ActorId>,
        signer: Option<&crate::model::Actor>,
    ) -> (Delivery, Vec<EventKind>) {
        let doc_type = doc.header.doc_type;
        let event = |effect, before: Option<&SecuredDocument>, after: Option<&SecuredDocument>| {
            EventKind::Attack {
                attacker: attacker.to_string(),
                link: link.cloned(),
                at: at.cloned(),
                effect,
                doc_type,
                before: before.map(|d| Box::new(d.clone())),
                after: after.map(|d| Box::new(d.clone())),
            }
        };
        match action {
            AttackAction::Drop { .. } => (
                Delivery::Dropped,
                vec![event(AttackEffect::Dropped, Some(&doc), None)],
            ),
            AttackAction::Inject { payload, .. } => {
                let mut forged = doc.clone();
                forged.body = DocumentBody::Unprotected {
                    fields: payload.fields(),
                };
                forged.header.doc_type = payload.doc_type();
                forged.signer_certificate = None;
                let ev = event(AttackEffect::Injected, Some(&doc), Some(&forged));
                (Delivery::Injected(forged), vec![ev])
            }
            AttackAction::ModifyInTransit { mutations, .. } => {
                let mut out = doc.clone();
                for m in mutations {
                    mutate(&mut out, m, signer);
                }
                let ev = event(AttackEffect::Modified, Some(&doc), Some(&out));
                (Delivery::Modified(out), vec![ev])
            }
            _ => (Delivery::Deliver(doc), vec![]),
        }
    }
}

fn blocked(attacker: &str, action: &AttackAction, reason: &str) -> EventKind {
    EventKind::AttackBlocked {
        attacker: attacker.to_string(),
        action: action.name().to_string(),
        reason: reason.to_string(),
    }
}

/// What a standard NFC reader gets from the cards a device carries: UIDs
/// and public certificates, never private keys.
fn card_readable_terms(topology: &Topology, holder: &ActorId) -> Vec<Term> {
    let mut out = vec![];
    for c in topology
        .credentials
        .values()
        .filter(|c| &c.holder == holder)
    {
        match &c.kind {
            CredentialKind::Uid { uid }
            | CredentialKind::SymmetricCard { uid, .. }
            | CredentialKind::OnlineCard { uid, .. } => out.push(Term::atom(uid)),
            CredentialKind::ContractCertificate { certificate, .. } => {
                out.push(Term::PubKey(certificate.public_key));
                out.push(certificate.signature.clone());
            }
        }
    }
    out
}

fn mutate(doc: &mut SecuredDocument, m: &Mutation, signer: Option<&crate::model::Actor>) {
    match m {
        Mutation::SetField { field, value } => {
            let _ = doc.tamper_set(field, value);
        }
        Mutation::RemoveField { field } => {
            let _ = doc.tamper_remove(field);
        }
        Mutation::KeepMostExpensive { keep } => {
            let readable = doc.public_fields();
            let price = |i: u32| {
                readable
                    .iter()
                    .find(|(k, _)| k == &format!("entries.{i}.price_per_kwh"))
                    .and_then(|(_, v)| v.parse::<crate::model::Fixed3>().ok())
            };
            let mut all: Vec<u32> = crate::model::tariff_entry_labels(
                &doc.field_names()
                    .iter()
                    .map(|n| (n.to_string(), String::new()))
                    .collect::<Vec<_>>(),
            );
            // Rank by readable price; unreadable entries rank by position.
            all.sort_by_key(|&i| (std::cmp::Reverse(price(i)), std::cmp::Reverse(i)));
            for i in all.into_iter().skip(*keep as usize) {
                let prefix = format!("entries.{i}.");
                let names: Vec<String> = doc
                    .field_names()
                    .iter()
                    .filter(|n| n.starts_with(&prefix))
                    .map(|n| n.to_string())
                    .collect();
                for n in names {
                    let _ = doc.tamper_remove(&n);
                }
            }
        }
        Mutation::ReplaceFirmwareImage { image } => {
            let digest =
                serde_json::to_string(&Term::hash(Term::atom(image))).expect("terms serialize");
            let _ = doc.tamper_set("image_digest", &digest);
        }
        Mutation::Resign => {
            if let Some(actor) = signer {
                if let (Some(k), Some(c)) = (actor.identity_key(), actor.identity_certificate()) {
                    doc.resign(k, c);
                }
            }
        }
    }
}
