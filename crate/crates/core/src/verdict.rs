//! Grades each security requirement from a finished trace. Verdicts depend
//! only on the trace and on the topology rebuilt from its header, so a
//! stored trace can be re-checked offline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::Knowledge;
use crate::channel::{Bootstrap, ClientAuthMethod, LinkMode, Medium};
use crate::crypto::{field_term, Pki, Term};
use crate::envelope::{
    prove_origin, redact, verify_document, OriginProof, ProtectionMode, SecuredDocument,
};
use crate::model::{
    build_topology, ActorId, AnchorId, DocType, Fields, LinkId, Payload, Timestamp, Topology,
    TopologyError,
};
use crate::trace::{Event, EventKind, Presenter, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SrId {
    SR1a,
    SR1b,
    SR1c,
    SR2a,
    SR2b,
    SR3,
    SR4a,
    SR4b,
    SR5,
}

impl SrId {
    pub const ALL: [SrId; 9] = [
        SrId::SR1a,
        SrId::SR1b,
        SrId::SR1c,
        SrId::SR2a,
        SrId::SR2b,
        SrId::SR3,
        SrId::SR4a,
        SrId::SR4b,
        SrId::SR5,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SrId::SR1a => "SR1a",
            SrId::SR1b => "SR1b",
            SrId::SR1c => "SR1c",
            SrId::SR2a => "SR2a",
            SrId::SR2b => "SR2b",
            SrId::SR3 => "SR3",
            SrId::SR4a => "SR4a",
            SrId::SR4b => "SR4b",
            SrId::SR5 => "SR5",
        }
    }

    /// One-line summary of what is checked.
    pub fn summary(self) -> &'static str {
        match self {
            SrId::SR1a => "only the rightful holder of a credential obtains a grant with it",
            SrId::SR1b => "energy flows only after a grant tied to a valid contract",
            SrId::SR1c => "valid drivers can charge while the charge point is offline",
            SrId::SR2a => "application data only goes to authenticated servers",
            SrId::SR2b => "servers only serve authenticated clients",
            SrId::SR3 => "every backend link is encrypted with an approved suite",
            SrId::SR4a => "accepted data is exactly what its originator produced",
            SrId::SR4b => "confidential fields reach only their intended readers",
            SrId::SR5 => "stored billing records prove their origin",
        }
    }
}

impl fmt::Display for SrId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SrId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SrId::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown requirement {s}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Grade {
    Holds,
    /// Holds under an assumption the trace cannot discharge, such as a
    /// static secret never leaking.
    ConditionallyHolds,
    Violated,
    NotExercised,
}

impl Grade {
    pub fn as_str(self) -> &'static str {
        match self {
            Grade::Holds => "Holds",
            Grade::ConditionallyHolds => "ConditionallyHolds",
            Grade::Violated => "Violated",
            Grade::NotExercised => "NotExercised",
        }
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Grade {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Grade::Holds,
            Grade::ConditionallyHolds,
            Grade::Violated,
            Grade::NotExercised,
        ]
        .into_iter()
        .find(|g| g.as_str() == s)
        .ok_or_else(|| format!("unknown grade {s}"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub requirement: SrId,
    pub grade: Grade,
    /// Indices of the events that justify the grade.
    pub witnesses: Vec<usize>,
    pub explanation: String,
}

#[derive(Debug, Error)]
pub enum VerdictError {
    #[error("trace has no completion record")]
    IncompleteTrace,
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Grades every requirement. Rebuilds the topology from the trace header.
pub fn check_all(trace: &Trace) -> Result<Vec<Verdict>, VerdictError> {
    if !trace.is_complete() {
        return Err(VerdictError::IncompleteTrace);
    }
    let topology = build_topology(&trace.header.config)?;
    Ok(check_with(trace, &topology))
}

pub fn check_with(trace: &Trace, topology: &Topology) -> Vec<Verdict> {
    let ev = &trace.events;
    vec![
        sr1a(ev),
        sr1b(ev),
        sr1c(ev),
        sr2a(ev),
        sr2b(ev),
        sr3(ev),
        sr4a(ev),
        sr4b(ev, topology),
        sr5(ev, topology),
    ]
}

pub fn any_violated(verdicts: &[Verdict]) -> bool {
    verdicts.iter().any(|v| v.grade == Grade::Violated)
}

fn verdict(
    requirement: SrId,
    grade: Grade,
    witnesses: Vec<usize>,
    explanation: impl Into<String>,
) -> Verdict {
    Verdict {
        requirement,
        grade,
        witnesses,
        explanation: explanation.into(),
    }
}

fn sr1a(ev: &[Event]) -> Verdict {
    let mut decisions = 0;
    let mut bad = vec![];
    for e in ev {
        if let EventKind::AuthorizationDecision {
            granted, presenter, ..
        } = &e.kind
        {
            decisions += 1;
            if *granted && matches!(presenter, Presenter::Attacker(_)) {
                bad.push(e.index);
            }
        }
    }
    match (decisions, bad.is_empty()) {
        (0, _) => verdict(
            SrId::SR1a,
            Grade::NotExercised,
            vec![],
            "no authorization decisions",
        ),
        (_, false) => verdict(
            SrId::SR1a,
            Grade::Violated,
            bad.clone(),
            format!("{} grant(s) to an attacker", bad.len()),
        ),
        (n, true) => verdict(
            SrId::SR1a,
            Grade::Holds,
            vec![],
            format!("{n} decision(s), none granted to an attacker"),
        ),
    }
}

fn sr1b(ev: &[Event]) -> Verdict {
    let mut deliveries = 0;
    let mut bad = vec![];
    for e in ev {
        let EventKind::EnergyDelivered { authorization, .. } = &e.kind else {
            continue;
        };
        deliveries += 1;
        let ok = authorization.is_some_and(|a| {
            a < e.index
                && matches!(
                    ev.get(a).map(|d| &d.kind),
                    Some(EventKind::AuthorizationDecision {
                        granted: true,
                        contract_valid: true,
                        ..
                    })
                )
        });
        if !ok {
            bad.push(e.index);
        }
    }
    match (deliveries, bad.is_empty()) {
        (0, _) => verdict(
            SrId::SR1b,
            Grade::NotExercised,
            vec![],
            "no energy delivered",
        ),
        (_, false) => verdict(
            SrId::SR1b,
            Grade::Violated,
            bad.clone(),
            format!(
                "{} delivery(ies) without a grant on a valid contract",
                bad.len()
            ),
        ),
        (n, true) => verdict(
            SrId::SR1b,
            Grade::Holds,
            vec![],
            format!("{n} delivery(ies), all backed by a valid grant"),
        ),
    }
}

fn sr1c(ev: &[Event]) -> Verdict {
    let mut offline = 0;
    let mut bad = vec![];
    for e in ev {
        if let EventKind::AuthorizationDecision {
            granted,
            offline: true,
            presenter: Presenter::Holder(_),
            contract_valid,
            ..
        } = &e.kind
        {
            offline += 1;
            if !granted && *contract_valid {
                bad.push(e.index);
            }
        }
    }
    match (offline, bad.is_empty()) {
        (0, _) => verdict(
            SrId::SR1c,
            Grade::NotExercised,
            vec![],
            "no holder presented a credential while offline",
        ),
        (_, false) => verdict(
            SrId::SR1c,
            Grade::Violated,
            bad.clone(),
            format!("{} valid holder(s) refused offline", bad.len()),
        ),
        (n, true) => verdict(
            SrId::SR1c,
            Grade::Holds,
            vec![],
            format!("{n} offline decision(s), all valid holders served"),
        ),
    }
}

struct LinkInfo {
    index: usize,
    medium: Medium,
    mode: LinkMode,
    approved: bool,
    client_auth: ClientAuthMethod,
    bootstrap: Bootstrap,
}

fn links(ev: &[Event]) -> BTreeMap<LinkId, LinkInfo> {
    ev.iter()
        .filter_map(|e| match &e.kind {
            EventKind::LinkConfigured {
                link,
                medium,
                mode,
                approved_suite,
                client_auth,
                bootstrap,
                ..
            } => Some((
                link.clone(),
                LinkInfo {
                    index: e.index,
                    medium: *medium,
                    mode: *mode,
                    approved: *approved_suite,
                    client_auth: *client_auth,
                    bootstrap: *bootstrap,
                },
            )),
            _ => None,
        })
        .collect()
}

fn sr2a(ev: &[Event]) -> Verdict {
    let mut sent = 0;
    let mut bad = vec![];
    for e in ev {
        if let EventKind::Sent {
            medium: Medium::Network,
            server_authenticated,
            ..
        } = &e.kind
        {
            sent += 1;
            if !server_authenticated {
                bad.push(e.index);
            }
        }
    }
    match (sent, bad.is_empty()) {
        (0, _) => verdict(
            SrId::SR2a,
            Grade::NotExercised,
            vec![],
            "no network messages",
        ),
        (_, false) => verdict(
            SrId::SR2a,
            Grade::Violated,
            bad.clone(),
            format!("{} message(s) sent to an unauthenticated server", bad.len()),
        ),
        (n, true) => verdict(
            SrId::SR2a,
            Grade::Holds,
            vec![],
            format!("{n} message(s), all to authenticated servers"),
        ),
    }
}

fn sr2b(ev: &[Event]) -> Verdict {
    let info = links(ev);
    let mut used: BTreeMap<LinkId, usize> = BTreeMap::new();
    let mut bad = vec![];
    let mut notes = vec![];
    for e in ev {
        match &e.kind {
            EventKind::HandshakeCompleted { link, .. }
            | EventKind::ClientImpersonation { link, .. }
                if info.get(link).is_some_and(|l| l.medium == Medium::Network) =>
            {
                used.entry(link.clone()).or_insert(e.index);
            }
            _ => {}
        }
        match &e.kind {
            EventKind::StaticTokenPresented {
                secured: false,
                presenter: Presenter::Holder(_),
                ..
            } => {
                bad.push(e.index);
                notes.push("static token sent in the clear");
            }
            EventKind::StaticTokenPresented {
                accepted: true,
                presenter: Presenter::Attacker(_),
                ..
            } => {
                bad.push(e.index);
                notes.push("attacker token accepted");
            }
            EventKind::ClientImpersonation { accepted: true, .. } => {
                bad.push(e.index);
                notes.push("client impersonated");
            }
            _ => {}
        }
    }
    let mut static_used = false;
    for (link, first) in &used {
        let l = &info[link];
        match l.client_auth {
            ClientAuthMethod::None => {
                bad.push(*first);
                notes.push("link without client authentication");
            }
            ClientAuthMethod::StaticToken => {
                static_used = true;
                if l.bootstrap == Bootstrap::Insecure {
                    bad.push(l.index);
                    notes.push("static token provisioned insecurely");
                }
            }
            ClientAuthMethod::ClientCertificate => {}
        }
    }
    bad.sort_unstable();
    bad.dedup();
    notes.sort_unstable();
    notes.dedup();
    if !bad.is_empty() {
        verdict(SrId::SR2b, Grade::Violated, bad, notes.join("; "))
    } else if used.is_empty() {
        verdict(
            SrId::SR2b,
            Grade::NotExercised,
            vec![],
            "no client connections",
        )
    } else if static_used {
        verdict(
            SrId::SR2b,
            Grade::ConditionallyHolds,
            vec![],
            "static tokens only over secured links; holds while they do not leak",
        )
    } else {
        verdict(
            SrId::SR2b,
            Grade::Holds,
            vec![],
            "all clients authenticated by certificate",
        )
    }
}

fn sr3(ev: &[Event]) -> Verdict {
    let info = links(ev);
    let network: Vec<&LinkInfo> = info
        .values()
        .filter(|l| l.medium == Medium::Network)
        .collect();
    let bad: Vec<usize> = network
        .iter()
        .filter(|l| l.mode == LinkMode::Plain || !l.approved)
        .map(|l| l.index)
        .collect();
    if network.is_empty() {
        verdict(SrId::SR3, Grade::NotExercised, vec![], "no network links")
    } else if !bad.is_empty() {
        verdict(
            SrId::SR3,
            Grade::Violated,
            bad.clone(),
            format!("{} link(s) plain or using an unapproved suite", bad.len()),
        )
    } else {
        verdict(
            SrId::SR3,
            Grade::Holds,
            vec![],
            format!(
                "{} link(s), all encrypted with approved suites",
                network.len()
            ),
        )
    }
}

struct Produced<'a> {
    index: usize,
    mode: ProtectionMode,
    fields: &'a Fields,
    confidential: &'a BTreeMap<String, Vec<ActorId>>,
}

fn produced(ev: &[Event]) -> BTreeMap<&str, Produced<'_>> {
    ev.iter()
        .filter_map(|e| match &e.kind {
            EventKind::Produced {
                doc_id,
                mode,
                fields,
                confidential,
                ..
            } => Some((
                doc_id.as_str(),
                Produced {
                    index: e.index,
                    mode: *mode,
                    fields,
                    confidential,
                },
            )),
            _ => None,
        })
        .collect()
}

/// What `recipient` should see of an honestly delivered document.
fn entitled_view(p: &Produced<'_>, recipient: &ActorId) -> Fields {
    p.fields
        .iter()
        .filter(|(name, _)| {
            p.mode != ProtectionMode::SelectiveDisclosure
                || p.confidential
                    .get(name)
                    .is_none_or(|r| r.contains(recipient))
        })
        .cloned()
        .collect()
}

fn sorted(mut f: Fields) -> Fields {
    f.sort();
    f
}

fn sr4a(ev: &[Event]) -> Verdict {
    let originals = produced(ev);
    let mut checked = 0;
    let mut detected = 0;
    let mut bad = vec![];
    for e in ev {
        match &e.kind {
            EventKind::Accepted {
                recipient,
                doc_id,
                view,
                ..
            } => {
                checked += 1;
                let ok = originals
                    .get(doc_id.as_str())
                    .is_some_and(|p| sorted(entitled_view(p, recipient)) == sorted(view.clone()));
                if !ok {
                    bad.push(e.index);
                    bad.extend(originals.get(doc_id.as_str()).map(|p| p.index));
                    for a in ev {
                        if let EventKind::Attack {
                            before: Some(d), ..
                        } = &a.kind
                        {
                            if &d.header.doc_id == doc_id && a.index < e.index {
                                bad.push(a.index);
                            }
                        }
                    }
                }
            }
            EventKind::VerificationFailed { .. } => {
                checked += 1;
                detected += 1;
            }
            _ => {}
        }
    }
    bad.sort_unstable();
    bad.dedup();
    if checked == 0 {
        verdict(
            SrId::SR4a,
            Grade::NotExercised,
            vec![],
            "no document reached its recipient",
        )
    } else if !bad.is_empty() {
        verdict(
            SrId::SR4a,
            Grade::Violated,
            bad,
            "a recipient accepted content its originator did not produce",
        )
    } else {
        verdict(
            SrId::SR4a,
            Grade::Holds,
            vec![],
            format!("{checked} delivery(ies) checked, {detected} manipulation(s) detected"),
        )
    }
}

struct Secret<'a> {
    produced_at: usize,
    doc_id: &'a str,
    field: Term,
    readers: &'a [ActorId],
}

fn sr4b(ev: &[Event], topology: &Topology) -> Verdict {
    let mut secrets: Vec<Secret<'_>> = vec![];
    let mut producers: BTreeMap<&str, String> = BTreeMap::new();
    for e in ev {
        if let EventKind::Produced {
            doc_id,
            fields,
            confidential,
            producer,
            ..
        } = &e.kind
        {
            producers.insert(doc_id, producer.to_string());
            for (name, value) in fields {
                if let Some(readers) = confidential.get(name) {
                    secrets.push(Secret {
                        produced_at: e.index,
                        doc_id,
                        field: field_term(name, value),
                        readers,
                    });
                }
            }
        }
    }
    if secrets.is_empty() {
        return verdict(
            SrId::SR4b,
            Grade::NotExercised,
            vec![],
            "no confidential fields",
        );
    }
    let compromised: BTreeSet<&ActorId> = ev
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::ActorCompromised { actor, .. } => Some(actor),
            _ => None,
        })
        .collect();
    let entitled = |s: &Secret<'_>, who: &ActorId| {
        s.readers.contains(who)
            || producers
                .get(s.doc_id)
                .is_some_and(|p| p == &format!("actor:{who}"))
    };
    let mut bad = vec![];
    let mut leaked = BTreeSet::new();

    // Attackers, as their knowledge grows.
    let mut adversary = Knowledge::new();
    for e in ev {
        let EventKind::Learned { terms, .. } = &e.kind else {
            continue;
        };
        adversary.add_all(terms.iter().cloned());
        for (i, s) in secrets.iter().enumerate() {
            let insider = compromised.iter().any(|c| entitled(s, c));
            if s.produced_at < e.index
                && !insider
                && !leaked.contains(&i)
                && adversary.can_derive(&s.field)
            {
                leaked.insert(i);
                bad.extend([s.produced_at, e.index]);
            }
        }
    }

    // Honest parties that handled a document they were not meant to read.
    let mut received: BTreeMap<&ActorId, Vec<(usize, &SecuredDocument)>> = BTreeMap::new();
    for e in ev {
        if let EventKind::Delivered { to, doc, .. } = &e.kind {
            received.entry(to).or_default().push((e.index, doc));
        }
    }
    let public = topology.public_terms();
    for (actor, docs) in &received {
        if compromised.contains(actor) {
            continue;
        }
        let own = topology
            .actors
            .get(*actor)
            .map(|a| a.secret_terms())
            .unwrap_or_default();
        let kn = Knowledge::from_terms(
            own.into_iter()
                .chain(public.iter().cloned())
                .chain(docs.iter().map(|(_, d)| d.term())),
        );
        for (i, s) in secrets.iter().enumerate() {
            if entitled(s, actor) || !kn.can_derive(&s.field) {
                continue;
            }
            leaked.insert(i);
            bad.push(s.produced_at);
            bad.extend(
                docs.iter()
                    .filter(|(_, d)| d.header.doc_id == s.doc_id)
                    .map(|(idx, _)| *idx),
            );
        }
    }
    bad.sort_unstable();
    bad.dedup();
    if bad.is_empty() {
        verdict(
            SrId::SR4b,
            Grade::Holds,
            vec![],
            format!(
                "{} confidential field(s), none readable by others",
                secrets.len()
            ),
        )
    } else {
        verdict(
            SrId::SR4b,
            Grade::Violated,
            bad,
            format!(
                "{} confidential field(s) readable by unintended parties",
                leaked.len()
            ),
        )
    }
}

fn sr5(ev: &[Event], topology: &Topology) -> Verdict {
    let anchors_of = |a: &ActorId| {
        topology
            .actors
            .get(a)
            .map(|x| x.trusted_anchors.clone())
            .unwrap_or_default()
    };
    let mut stored = 0;
    let mut bad = vec![];
    let mut originals: BTreeMap<&str, &SecuredDocument> = BTreeMap::new();
    let mut detected = 0;
    for e in ev {
        match &e.kind {
            EventKind::Stored { holder, doc } if doc.header.doc_type.is_billing() => {
                stored += 1;
                originals.insert(&doc.header.doc_id, doc);
                if prove_origin(
                    doc,
                    &doc.header.producer,
                    &topology.pki,
                    &anchors_of(holder),
                ) != OriginProof::Proof
                {
                    bad.push(e.index);
                }
            }
            EventKind::Falsified {
                holder,
                doc_id,
                snapshot,
                ..
            } => {
                let changed = originals
                    .get(doc_id.as_str())
                    .is_none_or(|o| o.public_fields() != snapshot.public_fields());
                let proof = prove_origin(
                    snapshot,
                    &snapshot.header.producer,
                    &topology.pki,
                    &anchors_of(holder),
                );
                if changed && proof == OriginProof::Proof {
                    bad.push(e.index);
                } else if changed {
                    detected += 1;
                }
            }
            _ => {}
        }
    }
    if stored == 0 {
        verdict(
            SrId::SR5,
            Grade::NotExercised,
            vec![],
            "no billing records stored",
        )
    } else if !bad.is_empty() {
        verdict(
            SrId::SR5,
            Grade::Violated,
            bad,
            "a stored billing record does not prove its origin",
        )
    } else {
        verdict(
            SrId::SR5,
            Grade::Holds,
            vec![],
            format!(
                "{stored} record(s) prove their origin; {detected} falsification(s) detectable"
            ),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckOutcome {
    Pass,
    Fail,
    NotExercised,
    /// The property holds only because there was nothing to protect.
    VacuousFail,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub outcome: CheckOutcome,
    pub witnesses: Vec<usize>,
    pub explanation: String,
}

fn report(
    check: &str,
    outcome: CheckOutcome,
    witnesses: Vec<usize>,
    explanation: impl Into<String>,
) -> CheckReport {
    CheckReport {
        check: check.to_string(),
        outcome,
        witnesses,
        explanation: explanation.into(),
    }
}

/// Per-slot sum of applied charge profiles must stay within the allotment
/// the grid operator actually published.
pub fn congestion_check(trace: &Trace) -> CheckReport {
    let ev = &trace.events;
    let mut truth: BTreeMap<Option<usize>, BTreeMap<Timestamp, i64>> = BTreeMap::new();
    for e in ev {
        if let EventKind::Produced {
            doc_type: DocType::CapacityForecast,
            fields,
            ..
        } = &e.kind
        {
            if let Ok(Payload::CapacityForecast { slots }) =
                Payload::from_fields(DocType::CapacityForecast, fields)
            {
                truth.insert(
                    e.step,
                    slots
                        .iter()
                        .map(|s| (s.slot_start, s.allotted_kw.milli()))
                        .collect(),
                );
            }
        }
    }
    // Per step: summed limit per slot, and the events that contributed.
    type SlotSums = (BTreeMap<Timestamp, i64>, Vec<usize>);
    let mut applied: BTreeMap<Option<usize>, SlotSums> = BTreeMap::new();
    for e in ev {
        if let EventKind::ProfileApplied { slots, .. } = &e.kind {
            let entry = applied.entry(e.step).or_default();
            for s in slots {
                *entry.0.entry(s.slot_start).or_default() += s.limit_kw.milli();
            }
            entry.1.push(e.index);
        }
    }
    if applied.is_empty() {
        return report(
            "congestion",
            CheckOutcome::NotExercised,
            vec![],
            "no charge profiles applied",
        );
    }
    let mut witnesses = vec![];
    let mut breaches = 0;
    for (step, (sums, indices)) in &applied {
        let allotted = truth.get(step);
        let over = sums
            .iter()
            .filter(|(slot, sum)| allotted.and_then(|a| a.get(slot)).is_none_or(|a| *sum > a))
            .count();
        if over > 0 {
            breaches += over;
            witnesses.extend(
                ev.iter()
                    .filter(|e| {
                        e.step == *step
                            && matches!(
                                &e.kind,
                                EventKind::Attack {
                                    doc_type: DocType::CapacityForecast,
                                    ..
                                }
                            )
                    })
                    .map(|e| e.index),
            );
            witnesses.extend(indices.iter().copied());
        }
    }
    witnesses.sort_unstable();
    witnesses.dedup();
    if breaches == 0 {
        report(
            "congestion",
            CheckOutcome::Pass,
            vec![],
            "every slot within the published allotment",
        )
    } else {
        report(
            "congestion",
            CheckOutcome::Fail,
            witnesses,
            format!("{breaches} slot(s) over the published allotment"),
        )
    }
}

/// Erases `field` from a stored record and checks that the record still
/// proves its origin while the erased value is gone.
pub fn redaction_gdpr_check(
    doc: &SecuredDocument,
    field: &str,
    pki: &Pki,
    anchors: &[AnchorId],
) -> CheckReport {
    const NAME: &str = "redaction_gdpr";
    let Some(value) = doc
        .public_fields()
        .into_iter()
        .find(|(k, _)| k == field)
        .map(|(_, v)| v)
    else {
        return report(
            NAME,
            CheckOutcome::NotExercised,
            vec![],
            format!("record has no readable {field}"),
        );
    };
    if verify_document(doc, pki, anchors).is_err() {
        return report(
            NAME,
            CheckOutcome::VacuousFail,
            vec![],
            "record carried no verifiable origin before erasure",
        );
    }
    let redacted = match redact(doc, field) {
        Ok(r) => r,
        Err(e) => return report(NAME, CheckOutcome::Fail, vec![], e.to_string()),
    };
    let still_verifies = verify_document(&redacted, pki, anchors).is_ok();
    let kn = Knowledge::from_terms([redacted.term()]);
    let gone = !kn.can_derive(&field_term(field, &value));
    match (still_verifies, gone) {
        (true, true) => report(
            NAME,
            CheckOutcome::Pass,
            vec![],
            "erased and origin still verifies",
        ),
        (false, _) => report(
            NAME,
            CheckOutcome::Fail,
            vec![],
            "erasure breaks the origin signature",
        ),
        (true, false) => report(
            NAME,
            CheckOutcome::Fail,
            vec![],
            "erased value is still recoverable",
        ),
    }
}
