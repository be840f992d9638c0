//! Building a [`Topology`] from a decoded scenario config.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    Actor, ActorId, AnchorId, Contract, ContractId, Credential, CredentialId, CredentialKind,
    CredentialPresentation, Link, LinkId, Role,
};
use crate::channel::{ClientAuthMethod, LinkMode, Medium, StaticToken};
use crate::cli::config::{CredentialKindConfig, ScenarioConfig};
use crate::crypto::{
    kdf_diversify, keygen, master_key, CipherSuitePolicy, CryptoError, Fresh, Issuer, KeyPair, Pki,
    PkiError, Subject, Term, MANDATORY_SUITE,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("duplicate actor id {0}")]
    DuplicateActorId(ActorId),
    #[error("duplicate link id {0}")]
    DuplicateLinkId(LinkId),
    #[error("link {link} names unknown actor {actor}")]
    DanglingLinkEndpoint { link: LinkId, actor: ActorId },
    #[error("duplicate contract id {0}")]
    DuplicateContractId(ContractId),
    #[error("duplicate credential id {0}")]
    DuplicateCredentialId(CredentialId),
    #[error("unknown reference: {0}")]
    DanglingReference(String),
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("two contracts match credential {0}")]
    AmbiguousContract(CredentialId),
    #[error("no contract matches the presented credential")]
    NotFound,
    #[error(transparent)]
    Pki(#[from] PkiError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// The static world of a scenario: who exists, who holds which keys, and
/// who is connected to whom.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub actors: BTreeMap<ActorId, Actor>,
    /// In config order.
    pub links: Vec<Link>,
    pub contracts: BTreeMap<ContractId, Contract>,
    pub credentials: BTreeMap<CredentialId, Credential>,
    pub pki: Pki,
    pub uid_whitelists: BTreeMap<ActorId, BTreeSet<String>>,
    pub suites: CipherSuitePolicy,
    /// Token the server side of a static-token link expects.
    pub expected_tokens: BTreeMap<LinkId, Term>,
}

pub fn build_topology(config: &ScenarioConfig) -> Result<Topology, TopologyError> {
    build_topology_with(config, &mut Fresh::new(config.seed))
}

/// Builds with a caller-supplied freshness source so a run can keep drawing
/// from the same deterministic sequence afterwards.
pub fn build_topology_with(
    config: &ScenarioConfig,
    fresh: &mut Fresh,
) -> Result<Topology, TopologyError> {
    let dangling = |what: String| TopologyError::DanglingReference(what);

    let suites = match &config.pki.cipher_suites {
        Some(list) => CipherSuitePolicy::from_override(list.clone())?,
        None => CipherSuitePolicy::with_additional(config.pki.additional_cipher_suite.as_deref()),
    };
    if config.pki.anchors.len() > 1 && !config.pki.split {
        return Err(TopologyError::Invalid(
            "more than one trust anchor requires a split PKI".into(),
        ));
    }

    let mut pki = Pki::new();
    let mut roots: BTreeMap<AnchorId, KeyPair> = BTreeMap::new();
    for anchor in &config.pki.anchors {
        let root = keygen(&ActorId::new(format!("anchor:{anchor}")), "root", fresh);
        pki.add_anchor(anchor.clone(), &root)?;
        roots.insert(anchor.clone(), root);
    }
    let default_anchor = config.pki.anchors[0].clone();

    // Actors and their identity keys.
    let mut actors: BTreeMap<ActorId, Actor> = BTreeMap::new();
    for ac in &config.actors {
        if actors.contains_key(&ac.id) {
            return Err(TopologyError::DuplicateActorId(ac.id.clone()));
        }
        let key_material = if ac.shares_keys_with.is_some() {
            vec![]
        } else {
            vec![keygen(&ac.id, "sig", fresh)]
        };
        actors.insert(
            ac.id.clone(),
            Actor {
                id: ac.id.clone(),
                role: ac.role,
                key_material,
                certificates: vec![],
                static_secrets: vec![],
                credentials: vec![],
                master_key: ac.master_key.as_deref().map(master_key),
                trusted_anchors: ac
                    .trusts
                    .clone()
                    .unwrap_or_else(|| config.pki.anchors.clone()),
                operator: ac.operator.clone(),
                location: ac
                    .location
                    .clone()
                    .unwrap_or_else(|| format!("site-{}", ac.id)),
                compromised: false,
                online: ac.online,
            },
        );
    }
    for ac in &config.actors {
        if let Some(other) = &ac.shares_keys_with {
            let keys = actors
                .get(other)
                .ok_or_else(|| dangling(format!("actor {other}")))?
                .key_material
                .clone();
            if keys.is_empty() {
                return Err(TopologyError::Invalid(format!(
                    "{} shares keys with {other}, which has none of its own",
                    ac.id
                )));
            }
            actors.get_mut(&ac.id).expect("inserted above").key_material = keys;
        }
        if let Some(op) = &ac.operator {
            match actors.get(op) {
                Some(a) if a.role == Role::Cpo => {}
                Some(_) => {
                    return Err(TopologyError::Invalid(format!(
                        "operator {op} of {} is not a CPO",
                        ac.id
                    )))
                }
                None => return Err(dangling(format!("actor {op}"))),
            }
        }
    }

    // Identity certificates: organisations under their tree's anchor first,
    // then charge points under their operator's certificate.
    let ordered: Vec<_> = config
        .actors
        .iter()
        .filter(|a| a.role != Role::ChargePoint || a.operator.is_none())
        .chain(
            config
                .actors
                .iter()
                .filter(|a| a.role == Role::ChargePoint && a.operator.is_some()),
        )
        .collect();
    for ac in ordered {
        let key = actors[&ac.id].key_material[0].clone();
        let (issuer, issuer_key) = match (&ac.operator, ac.role) {
            (Some(op), Role::ChargePoint) => {
                let parent = &actors[op];
                let cert = parent
                    .certificates
                    .first()
                    .ok_or_else(|| dangling(format!("certificate of {op}")))?;
                (
                    Issuer::Certificate(cert.id.clone()),
                    parent.key_material[0].clone(),
                )
            }
            _ => {
                let anchor = ac.tree.clone().unwrap_or_else(|| default_anchor.clone());
                let root = roots
                    .get(&anchor)
                    .ok_or_else(|| dangling(format!("anchor {anchor}")))?
                    .clone();
                (Issuer::Anchor(anchor), root)
            }
        };
        let cert = pki.issue_certificate(
            &issuer,
            &issuer_key,
            Subject::Actor(ac.id.clone()),
            ac.role,
            key.key_id,
        )?;
        actors
            .get_mut(&ac.id)
            .expect("exists")
            .certificates
            .push(cert);
    }

    // Contracts are needed to pick contract-certificate issuers.
    let mut contracts: BTreeMap<ContractId, Contract> = BTreeMap::new();
    for cc in &config.contracts {
        if contracts.contains_key(&cc.id) {
            return Err(TopologyError::DuplicateContractId(cc.id.clone()));
        }
        match actors.get(&cc.emsp) {
            Some(a) if a.role == Role::Emsp => {}
            Some(_) => {
                return Err(TopologyError::Invalid(format!(
                    "contract {} names non-eMSP {}",
                    cc.id, cc.emsp
                )))
            }
            None => return Err(dangling(format!("actor {}", cc.emsp))),
        }
        contracts.insert(
            cc.id.clone(),
            Contract {
                contract_id: cc.id.clone(),
                emsp: cc.emsp.clone(),
                driver_credential: cc.credential.clone(),
                valid: cc.valid,
            },
        );
    }

    let mut credentials: BTreeMap<CredentialId, Credential> = BTreeMap::new();
    for ac in &config.actors {
        for cc in &ac.credentials {
            if credentials.contains_key(&cc.id) {
                return Err(TopologyError::DuplicateCredentialId(cc.id.clone()));
            }
            let uid = cc.uid.clone().unwrap_or_else(|| cc.id.to_string());
            let contract = contracts.values().find(|c| c.driver_credential == cc.id);
            let issuer_actor = cc
                .issuer
                .clone()
                .or_else(|| contract.map(|c| c.emsp.clone()));
            let issue = |pki: &mut Pki, key: &KeyPair| -> Result<_, TopologyError> {
                let (issuer, issuer_key) = match &issuer_actor {
                    Some(e) => {
                        let emsp = actors
                            .get(e)
                            .ok_or_else(|| dangling(format!("actor {e}")))?;
                        let cert = emsp
                            .certificates
                            .first()
                            .ok_or_else(|| dangling(format!("certificate of {e}")))?;
                        (
                            Issuer::Certificate(cert.id.clone()),
                            emsp.key_material[0].clone(),
                        )
                    }
                    None => (
                        Issuer::Anchor(default_anchor.clone()),
                        roots[&default_anchor].clone(),
                    ),
                };
                let cert = pki.issue_certificate(
                    &issuer,
                    &issuer_key,
                    Subject::Credential(cc.id.clone()),
                    Role::EV,
                    key.key_id,
                )?;
                if contract.is_some_and(|c| !c.valid) {
                    pki.set_validity(&cert.id, false)?;
                }
                Ok(pki.certificate(&cert.id).expect("just issued").clone())
            };
            let kind = match cc.kind {
                CredentialKindConfig::Uid => CredentialKind::Uid { uid },
                CredentialKindConfig::SymmetricCard => {
                    let master = cc.master.as_deref().ok_or_else(|| {
                        TopologyError::Invalid(format!(
                            "symmetric card {} needs a master key",
                            cc.id
                        ))
                    })?;
                    CredentialKind::SymmetricCard {
                        card_key: kdf_diversify(&master_key(master), &uid),
                        uid,
                    }
                }
                CredentialKindConfig::ContractCertificate => {
                    let key = keygen(&ac.id, "contract", fresh);
                    let certificate = Box::new(issue(&mut pki, &key)?);
                    CredentialKind::ContractCertificate { key, certificate }
                }
                CredentialKindConfig::OnlineCard => CredentialKind::OnlineCard {
                    uid,
                    secret: fresh.secret_atom("card"),
                },
            };
            let signing = match (&kind, cc.signing) {
                (CredentialKind::ContractCertificate { key, certificate }, true) => {
                    Some((key.clone(), (**certificate).clone()))
                }
                (_, true) => {
                    let key = keygen(&ac.id, "card-sig", fresh);
                    let cert = issue(&mut pki, &key)?;
                    Some((key, cert))
                }
                (_, false) => None,
            };
            actors
                .get_mut(&ac.id)
                .expect("exists")
                .credentials
                .push(cc.id.clone());
            credentials.insert(
                cc.id.clone(),
                Credential {
                    id: cc.id.clone(),
                    holder: ac.id.clone(),
                    kind,
                    signing,
                },
            );
        }
    }
    for c in contracts.values() {
        if !credentials.contains_key(&c.driver_credential) {
            return Err(dangling(format!("credential {}", c.driver_credential)));
        }
    }

    for ac in &config.actors {
        if ac.revoked {
            let id = actors[&ac.id].certificates[0].id.clone();
            pki.set_validity(&id, false)?;
        }
    }
    // Keep each actor's copy of its certificate in step with the registry.
    for actor in actors.values_mut() {
        for cert in &mut actor.certificates {
            *cert = pki.certificate(&cert.id).expect("registered").clone();
        }
    }

    let mut links: Vec<Link> = Vec::new();
    let mut expected_tokens = BTreeMap::new();
    for lc in &config.links {
        if links.iter().any(|l| l.id == lc.id) {
            return Err(TopologyError::DuplicateLinkId(lc.id.clone()));
        }
        for end in [&lc.a, &lc.b] {
            if !actors.contains_key(end) {
                return Err(TopologyError::DanglingLinkEndpoint {
                    link: lc.id.clone(),
                    actor: end.clone(),
                });
            }
        }
        // Radio hops carry no TLS whatever the config says.
        let mode = if lc.medium == Medium::Nfc {
            LinkMode::Plain
        } else {
            lc.mode
        };
        let client_auth = match (mode, lc.client_auth) {
            (LinkMode::MutualAuth, None | Some(ClientAuthMethod::ClientCertificate)) => {
                ClientAuthMethod::ClientCertificate
            }
            (LinkMode::MutualAuth, Some(other)) => {
                return Err(TopologyError::Invalid(format!(
                    "link {}: mutual_auth implies client_certificate, not {}",
                    lc.id,
                    other.as_str()
                )))
            }
            (_, Some(ClientAuthMethod::ClientCertificate)) => {
                return Err(TopologyError::Invalid(format!(
                    "link {}: client_certificate requires mutual_auth",
                    lc.id
                )))
            }
            (_, Some(m)) => m,
            (_, None) => ClientAuthMethod::None,
        };
        if client_auth == ClientAuthMethod::StaticToken {
            let secret = fresh.secret_atom(&format!("token:{}", lc.id));
            actors
                .get_mut(&lc.a)
                .expect("checked")
                .static_secrets
                .push(StaticToken {
                    link: lc.id.clone(),
                    secret: secret.clone(),
                });
            expected_tokens.insert(lc.id.clone(), secret);
        }
        links.push(Link {
            id: lc.id.clone(),
            a: lc.a.clone(),
            b: lc.b.clone(),
            medium: lc.medium,
            mode,
            cipher_suite: lc
                .cipher_suite
                .clone()
                .unwrap_or_else(|| MANDATORY_SUITE.to_string()),
            client_auth,
            bootstrap: lc.bootstrap,
        });
    }

    // Every CPO accepts the UIDs of all valid contracts unless its list is configured.
    let valid_uids: BTreeSet<String> = contracts
        .values()
        .filter(|c| c.valid)
        .filter_map(|c| {
            credentials
                .get(&c.driver_credential)?
                .uid()
                .map(str::to_string)
        })
        .collect();
    let mut uid_whitelists: BTreeMap<ActorId, BTreeSet<String>> = actors
        .values()
        .filter(|a| a.role == Role::Cpo)
        .map(|a| (a.id.clone(), valid_uids.clone()))
        .collect();
    for w in &config.whitelists {
        if !actors.contains_key(&w.cpo) {
            return Err(dangling(format!("actor {}", w.cpo)));
        }
        uid_whitelists.insert(w.cpo.clone(), w.uids.iter().cloned().collect());
    }

    Ok(Topology {
        actors,
        links,
        contracts,
        credentials,
        pki,
        uid_whitelists,
        suites,
        expected_tokens,
    })
}

impl Topology {
    pub fn actor(&self, id: &ActorId) -> Option<&Actor> {
        self.actors.get(id)
    }

    pub fn link(&self, id: &LinkId) -> Option<&Link> {
        self.links.iter().find(|l| &l.id == id)
    }

    /// First configured link joining `x` and `y`, if any.
    pub fn link_between(&self, x: &ActorId, y: &ActorId) -> Option<&Link> {
        self.links.iter().find(|l| l.connects(x, y))
    }

    pub fn anchor_ids(&self) -> Vec<AnchorId> {
        self.pki.anchors().map(|a| a.anchor_id.clone()).collect()
    }

    /// Credential a presentation claims to be.
    pub fn credential_of(&self, presentation: &CredentialPresentation) -> Option<&Credential> {
        match presentation {
            CredentialPresentation::UidBroadcast { uid }
            | CredentialPresentation::SymmetricResponse { uid, .. } => self
                .credentials
                .values()
                .find(|c| c.uid() == Some(uid.as_str())),
            CredentialPresentation::AsymmetricResponse { certificate, .. } => {
                match &certificate.subject {
                    Subject::Credential(id) => self.credentials.get(id),
                    Subject::Actor(_) => None,
                }
            }
            CredentialPresentation::OnlineToken { credential, .. } => {
                self.credentials.get(credential)
            }
        }
    }

    /// The unique contract bound to the presented credential.
    pub fn lookup_contract(
        &self,
        presentation: &CredentialPresentation,
    ) -> Result<&Contract, TopologyError> {
        let cred = self
            .credential_of(presentation)
            .ok_or(TopologyError::NotFound)?;
        let mut matches = self
            .contracts
            .values()
            .filter(|c| c.driver_credential == cred.id);
        let first = matches.next().ok_or(TopologyError::NotFound)?;
        if matches.next().is_some() {
            return Err(TopologyError::AmbiguousContract(cred.id.clone()));
        }
        Ok(first)
    }

    /// Shortest actor path from `cpo` to `emsp` that is either direct or
    /// passes only through clearing houses. Both ends are included.
    pub fn billing_route(&self, cpo: &ActorId, emsp: &ActorId) -> Option<Vec<ActorId>> {
        let mut prev: BTreeMap<&ActorId, &ActorId> = BTreeMap::new();
        let mut queue = VecDeque::from([cpo]);
        let mut seen = BTreeSet::from([cpo]);
        while let Some(at) = queue.pop_front() {
            if at == emsp {
                let mut path = vec![emsp.clone()];
                let mut cur = emsp;
                while let Some(p) = prev.get(cur) {
                    path.push((*p).clone());
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            if at != cpo && self.actors.get(at).map(|a| a.role) != Some(Role::ClearingHouse) {
                continue;
            }
            for l in self.links.iter().filter(|l| l.medium == Medium::Network) {
                if let Some(next) = l.peer_of(at) {
                    if seen.insert(next) {
                        prev.insert(next, at);
                        queue.push_back(next);
                    }
                }
            }
        }
        None
    }

    /// Every public term: certificates and public keys.
    pub fn public_terms(&self) -> Vec<Term> {
        let mut out = Vec::new();
        for a in self.pki.anchors() {
            out.push(Term::PubKey(a.root_key));
        }
        for c in self.pki.certificates() {
            out.push(Term::PubKey(c.public_key));
            out.push(c.signature.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::ScenarioConfig;

    fn config(extra: &str) -> ScenarioConfig {
        let text = format!(
            r#"
name = "t"
seed = 5
[[actors]]
id = "ev1"
role = "EV"
credentials = [{{ id = "card1", kind = "uid", uid = "04AABB" }}]
[[actors]]
id = "cp1"
role = "ChargePoint"
operator = "cpo1"
[[actors]]
id = "cpo1"
role = "CPO"
[[actors]]
id = "emsp1"
role = "EMSP"
[[contracts]]
id = "c1"
emsp = "emsp1"
credential = "card1"
[[links]]
id = "backhaul"
a = "cp1"
b = "cpo1"
mode = "mutual_auth"
{extra}
"#
        );
        toml::from_str(&text).unwrap()
    }

    #[test]
    fn direct_construction() {
        let t = build_topology(&config(
            "[[links]]\nid = \"roaming\"\na = \"cpo1\"\nb = \"emsp1\"\nmode = \"mutual_auth\"\n",
        ))
        .unwrap();
        assert_eq!(t.actors.len(), 4);
        assert_eq!(t.links.len(), 2);
        let cp = &t.actors[&ActorId::new("cp1")];
        assert!(t
            .pki
            .verify_chain(cp.identity_certificate().unwrap(), &AnchorId::new("root")));
        assert_eq!(t.pki.chain_of(cp.identity_certificate().unwrap()).len(), 2);
    }

    #[test]
    fn dangling_endpoint() {
        let err = build_topology(&config(
            "[[links]]\nid = \"x\"\na = \"cpo1\"\nb = \"emsp9\"\nmode = \"plain\"\n",
        ))
        .unwrap_err();
        assert_eq!(
            err,
            TopologyError::DanglingLinkEndpoint {
                link: LinkId::new("x"),
                actor: ActorId::new("emsp9")
            }
        );
    }

    #[test]
    fn duplicates_rejected() {
        let mut c = config("");
        c.actors.push(c.actors[0].clone());
        assert!(matches!(
            build_topology(&c),
            Err(TopologyError::DuplicateActorId(_))
        ));
        let mut c = config("");
        c.contracts.push(c.contracts[0].clone());
        assert!(matches!(
            build_topology(&c),
            Err(TopologyError::DuplicateContractId(_))
        ));
    }

    #[test]
    fn deterministic() {
        let c = config("");
        assert_eq!(build_topology(&c).unwrap(), build_topology(&c).unwrap());
    }

    #[test]
    fn contract_lookup() {
        let t = build_topology(&config("")).unwrap();
        let p = CredentialPresentation::UidBroadcast {
            uid: "04AABB".into(),
        };
        assert_eq!(
            t.lookup_contract(&p).unwrap().contract_id,
            ContractId::new("c1")
        );
        let unknown = CredentialPresentation::UidBroadcast {
            uid: "04FFFF".into(),
        };
        assert_eq!(t.lookup_contract(&unknown), Err(TopologyError::NotFound));

        let mut c = config("");
        let mut dup = c.contracts[0].clone();
        dup.id = ContractId::new("c2");
        c.contracts.push(dup);
        let t = build_topology(&c).unwrap();
        assert_eq!(
            t.lookup_contract(&p),
            Err(TopologyError::AmbiguousContract(CredentialId::new("card1")))
        );
    }

    /// Independent shortest-path oracle: breadth-first over hop counts using
    /// an adjacency matrix, restricted to clearing-house intermediates.
    fn oracle_hops(t: &Topology, from: &ActorId, to: &ActorId) -> Option<usize> {
        let ids: Vec<&ActorId> = t.actors.keys().collect();
        let n = ids.len();
        let idx = |a: &ActorId| ids.iter().position(|x| *x == a).unwrap();
        let mut adj = vec![vec![false; n]; n];
        for l in &t.links {
            adj[idx(&l.a)][idx(&l.b)] = true;
            adj[idx(&l.b)][idx(&l.a)] = true;
        }
        let mut dist = vec![usize::MAX; n];
        dist[idx(from)] = 0;
        for _ in 0..n {
            for u in 0..n {
                if dist[u] == usize::MAX {
                    continue;
                }
                let relay_ok = u == idx(from) || t.actors[ids[u]].role == Role::ClearingHouse;
                for v in 0..n {
                    if adj[u][v] && relay_ok && dist[u] + 1 < dist[v] {
                        dist[v] = dist[u] + 1;
                    }
                }
            }
        }
        (dist[idx(to)] != usize::MAX).then_some(dist[idx(to)])
    }

    #[test]
    fn clearing_house_route() {
        let extra = r#"
[[actors]]
id = "ch1"
role = "ClearingHouse"
[[links]]
id = "cpo-ch"
a = "cpo1"
b = "ch1"
mode = "mutual_auth"
[[links]]
id = "ch-emsp"
a = "ch1"
b = "emsp1"
mode = "mutual_auth"
"#;
        let t = build_topology(&config(extra)).unwrap();
        let (cpo, emsp) = (ActorId::new("cpo1"), ActorId::new("emsp1"));
        let route = t.billing_route(&cpo, &emsp).unwrap();
        assert_eq!(route.len() - 1, 2);
        assert_eq!(Some(route.len() - 1), oracle_hops(&t, &cpo, &emsp));
        // A charge point is not a valid relay.
        assert_eq!(t.billing_route(&ActorId::new("cp1"), &emsp), None);
    }

    #[test]
    fn invalid_contract_revokes_its_certificate() {
        let extra = r#"
[[actors]]
id = "ev2"
role = "EV"
credentials = [{ id = "pnc2", kind = "contract_certificate" }]
[[contracts]]
id = "c2"
emsp = "emsp1"
credential = "pnc2"
valid = false
"#;
        let t = build_topology(&config(extra)).unwrap();
        let CredentialKind::ContractCertificate { certificate, .. } =
            &t.credentials[&CredentialId::new("pnc2")].kind
        else {
            panic!("expected a contract certificate")
        };
        assert!(!certificate.valid);
        assert!(!t.pki.verify_chain(certificate, &AnchorId::new("root")));
    }
}
