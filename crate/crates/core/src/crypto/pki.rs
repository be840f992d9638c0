//! Certificates, trust anchors and chain validation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{sign, verify, KeyPair, Term};
use crate::model::{ActorId, AnchorId, CertId, CredentialId, KeyId, Role};

/// Longest issuer path accepted before a chain is treated as cyclic.
const MAX_CHAIN_DEPTH: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Subject {
    Actor(ActorId),
    Credential(CredentialId),
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Actor(a) => write!(f, "actor:{a}"),
            Subject::Credential(c) => write!(f, "credential:{c}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Issuer {
    Anchor(AnchorId),
    Certificate(CertId),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustAnchor {
    pub anchor_id: AnchorId,
    pub root_key: KeyId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub id: CertId,
    pub subject: Subject,
    pub subject_role: Role,
    pub public_key: KeyId,
    pub issuer: Issuer,
    pub valid: bool,
    /// Issuer signature over [`Certificate::tbs_term`].
    pub signature: Term,
}

impl Certificate {
    /// The to-be-signed content; the validity flag is deliberately excluded so
    /// that revocation does not require re-issuing.
    pub fn tbs_term(
        id: &CertId,
        subject: &Subject,
        role: Role,
        public_key: KeyId,
        issuer: &Issuer,
    ) -> Term {
        let issuer_atom = match issuer {
            Issuer::Anchor(a) => format!("anchor:{a}"),
            Issuer::Certificate(c) => format!("cert:{c}"),
        };
        Term::hash(Term::tuple(vec![
            Term::atom(id.as_str()),
            Term::atom(subject.to_string()),
            Term::atom(role.as_str()),
            Term::PubKey(public_key),
            Term::atom(issuer_atom),
        ]))
    }

    fn own_tbs(&self) -> Term {
        Certificate::tbs_term(
            &self.id,
            &self.subject,
            self.subject_role,
            self.public_key,
            &self.issuer,
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PkiError {
    #[error("issuer {0} is unknown, revoked, or does not chain to a trust anchor")]
    InvalidIssuer(String),
    #[error("issuer key does not match {0}")]
    IssuerKeyMismatch(String),
    #[error("duplicate trust anchor {0}")]
    DuplicateAnchor(AnchorId),
    #[error("unknown certificate {0}")]
    UnknownCertificate(CertId),
}

/// Registry of anchors and issued certificates; the authoritative revocation state.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pki {
    anchors: BTreeMap<AnchorId, TrustAnchor>,
    certificates: BTreeMap<CertId, Certificate>,
}

impl Pki {
    pub fn new() -> Self {
        Pki::default()
    }

    pub fn add_anchor(
        &mut self,
        anchor_id: AnchorId,
        root: &KeyPair,
    ) -> Result<TrustAnchor, PkiError> {
        if self.anchors.contains_key(&anchor_id) {
            return Err(PkiError::DuplicateAnchor(anchor_id));
        }
        let anchor = TrustAnchor {
            anchor_id: anchor_id.clone(),
            root_key: root.key_id,
        };
        self.anchors.insert(anchor_id, anchor.clone());
        Ok(anchor)
    }

    pub fn anchors(&self) -> impl Iterator<Item = &TrustAnchor> {
        self.anchors.values()
    }

    pub fn anchor(&self, id: &AnchorId) -> Option<&TrustAnchor> {
        self.anchors.get(id)
    }

    pub fn certificate(&self, id: &CertId) -> Option<&Certificate> {
        self.certificates.get(id)
    }

    pub fn certificates(&self) -> impl Iterator<Item = &Certificate> {
        self.certificates.values()
    }

    /// Issues a certificate for `public_key` signed with `issuer_key`.
    pub fn issue_certificate(
        &mut self,
        issuer: &Issuer,
        issuer_key: &KeyPair,
        subject: Subject,
        subject_role: Role,
        public_key: KeyId,
    ) -> Result<Certificate, PkiError> {
        let expected_key = match issuer {
            Issuer::Anchor(a) => {
                self.anchors
                    .get(a)
                    .ok_or_else(|| PkiError::InvalidIssuer(format!("anchor {a}")))?
                    .root_key
            }
            Issuer::Certificate(c) => {
                let parent = self
                    .certificates
                    .get(c)
                    .ok_or_else(|| PkiError::InvalidIssuer(format!("cert {c}")))?;
                if self.root_of(parent).is_none() {
                    return Err(PkiError::InvalidIssuer(format!("cert {c}")));
                }
                parent.public_key
            }
        };
        if expected_key != issuer_key.key_id {
            return Err(PkiError::IssuerKeyMismatch(format!("{issuer:?}")));
        }
        let id = CertId::new(format!("cert-{}-{}", subject, self.certificates.len()));
        let tbs = Certificate::tbs_term(&id, &subject, subject_role, public_key, issuer);
        let signature = sign(issuer_key, tbs)
            .map_err(|_| PkiError::IssuerKeyMismatch(format!("{issuer:?}")))?;
        let cert = Certificate {
            id: id.clone(),
            subject,
            subject_role,
            public_key,
            issuer: issuer.clone(),
            valid: true,
            signature,
        };
        self.certificates.insert(id, cert.clone());
        Ok(cert)
    }

    pub fn set_validity(&mut self, id: &CertId, valid: bool) -> Result<(), PkiError> {
        let cert = self
            .certificates
            .get_mut(id)
            .ok_or_else(|| PkiError::UnknownCertificate(id.clone()))?;
        cert.valid = valid;
        Ok(())
    }

    /// Anchor the certificate's valid chain terminates at, if any.
    pub fn root_of(&self, cert: &Certificate) -> Option<AnchorId> {
        let mut current = cert;
        for _ in 0..MAX_CHAIN_DEPTH {
            let registered = self.certificates.get(&current.id)?;
            if registered != current || !registered.valid {
                return None;
            }
            let (issuer_key, parent) = match &current.issuer {
                Issuer::Anchor(a) => (self.anchors.get(a)?.root_key, None),
                Issuer::Certificate(c) => {
                    let p = self.certificates.get(c)?;
                    (p.public_key, Some(p))
                }
            };
            if !verify(
                &Term::PubKey(issuer_key),
                &current.signature,
                &current.own_tbs(),
            ) {
                return None;
            }
            match (parent, &current.issuer) {
                (None, Issuer::Anchor(a)) => return Some(a.clone()),
                (Some(p), _) => current = p,
                (None, _) => return None,
            }
        }
        None
    }

    /// True iff every certificate on the issuer path is registered, valid and
    /// correctly signed, and the path ends at `anchor`.
    pub fn verify_chain(&self, cert: &Certificate, anchor: &AnchorId) -> bool {
        self.root_of(cert).as_ref() == Some(anchor)
    }

    /// True iff the chain ends at any of `anchors`.
    pub fn verify_chain_any(&self, cert: &Certificate, anchors: &[AnchorId]) -> bool {
        self.root_of(cert)
            .is_some_and(|root| anchors.contains(&root))
    }

    /// Certificates on the issuer path, leaf first (registered copies).
    pub fn chain_of(&self, cert: &Certificate) -> Vec<CertId> {
        let mut out = vec![cert.id.clone()];
        let mut current = cert.issuer.clone();
        while let Issuer::Certificate(c) = current {
            if out.len() > MAX_CHAIN_DEPTH || out.contains(&c) {
                break;
            }
            out.push(c.clone());
            match self.certificates.get(&c) {
                Some(p) => current = p.issuer.clone(),
                None => break,
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{keygen, Fresh};
    use proptest::prelude::*;

    struct Fixture {
        pki: Pki,
        anchor_a: AnchorId,
        anchor_b: AnchorId,
        cpo_cert: Certificate,
        cp_cert: Certificate,
        fresh: Fresh,
        root_a: KeyPair,
    }

    fn fixture() -> Fixture {
        let mut fresh = Fresh::new(5);
        let root_a = keygen(&ActorId::new("root-a"), "ecdsa", &mut fresh);
        let root_b = keygen(&ActorId::new("root-b"), "ecdsa", &mut fresh);
        let cpo_key = keygen(&ActorId::new("cpo1"), "ecdsa", &mut fresh);
        let cp_key = keygen(&ActorId::new("cp1"), "ecdsa", &mut fresh);
        let mut pki = Pki::new();
        let anchor_a = pki
            .add_anchor(AnchorId::new("A"), &root_a)
            .unwrap()
            .anchor_id;
        let anchor_b = pki
            .add_anchor(AnchorId::new("B"), &root_b)
            .unwrap()
            .anchor_id;
        let cpo_cert = pki
            .issue_certificate(
                &Issuer::Anchor(anchor_a.clone()),
                &root_a,
                Subject::Actor(ActorId::new("cpo1")),
                Role::Cpo,
                cpo_key.key_id,
            )
            .unwrap();
        let cp_cert = pki
            .issue_certificate(
                &Issuer::Certificate(cpo_cert.id.clone()),
                &cpo_key,
                Subject::Actor(ActorId::new("cp1")),
                Role::ChargePoint,
                cp_key.key_id,
            )
            .unwrap();
        Fixture {
            pki,
            anchor_a,
            anchor_b,
            cpo_cert,
            cp_cert,
            fresh,
            root_a,
        }
    }

    #[test]
    fn anchor_sub_ca_leaf_verifies() {
        let f = fixture();
        assert!(f.pki.verify_chain(&f.cp_cert, &f.anchor_a));
    }

    #[test]
    fn revoked_intermediate_breaks_chain() {
        let mut f = fixture();
        f.pki.set_validity(&f.cpo_cert.id, false).unwrap();
        assert!(!f.pki.verify_chain(&f.cp_cert, &f.anchor_a));
    }

    #[test]
    fn cross_tree_is_rejected() {
        let f = fixture();
        // Oracle: walk issuers by hand until an anchor is reached.
        let mut issuer = f.cp_cert.issuer.clone();
        let root = loop {
            match issuer {
                Issuer::Anchor(a) => break a,
                Issuer::Certificate(c) => issuer = f.pki.certificate(&c).unwrap().issuer.clone(),
            }
        };
        assert_eq!(root, f.anchor_a);
        assert!(!f.pki.verify_chain(&f.cp_cert, &f.anchor_b));
    }

    #[test]
    fn issuing_under_revoked_issuer_fails() {
        let mut f = fixture();
        f.pki.set_validity(&f.cpo_cert.id, false).unwrap();
        let k = keygen(&ActorId::new("cp2"), "ecdsa", &mut f.fresh);
        let wrong = keygen(&ActorId::new("x"), "ecdsa", &mut f.fresh);
        let err = f
            .pki
            .issue_certificate(
                &Issuer::Certificate(f.cpo_cert.id.clone()),
                &wrong,
                Subject::Actor(ActorId::new("cp2")),
                Role::ChargePoint,
                k.key_id,
            )
            .unwrap_err();
        assert!(matches!(err, PkiError::InvalidIssuer(_)));
    }

    #[test]
    fn forged_certificate_is_rejected() {
        let f = fixture();
        let mut forged = f.cp_cert.clone();
        forged.public_key = KeyId(42);
        assert!(!f.pki.verify_chain(&forged, &f.anchor_a));
        let _ = f.root_a;
    }

    proptest! {
        /// Invalidating any certificate on a chain flips verification to false.
        #[test]
        fn chain_validation_is_monotone(depth in 1usize..6, revoke_at in 0usize..6) {
            let mut fresh = Fresh::new(depth as u64);
            let root = keygen(&ActorId::new("root"), "ecdsa", &mut fresh);
            let mut pki = Pki::new();
            let anchor = pki.add_anchor(AnchorId::new("root"), &root).unwrap().anchor_id;
            let mut issuer = Issuer::Anchor(anchor.clone());
            let mut issuer_key = root.clone();
            let mut chain = Vec::new();
            for i in 0..depth {
                let k = keygen(&ActorId::new(format!("n{i}")), "ecdsa", &mut fresh);
                let c = pki.issue_certificate(&issuer, &issuer_key, Subject::Actor(ActorId::new(format!("n{i}"))), Role::Cpo, k.key_id).unwrap();
                issuer = Issuer::Certificate(c.id.clone());
                issuer_key = k;
                chain.push(c);
            }
            let leaf = chain.last().unwrap().clone();
            prop_assert!(pki.verify_chain(&leaf, &anchor));
            let idx = revoke_at % depth;
            pki.set_validity(&chain[idx].id, false).unwrap();
            let leaf_now = pki.certificate(&leaf.id).unwrap().clone();
            prop_assert!(!pki.verify_chain(&leaf_now, &anchor));
        }
    }
}
