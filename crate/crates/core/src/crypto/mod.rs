//! Perfect (symbolic) cryptography, deterministic key material and the
//! TLS cipher-suite profile.

mod pki;
mod term;

use std::collections::BTreeSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActorId, KeyId};

pub use pki::{Certificate, Issuer, Pki, PkiError, Subject, TrustAnchor};
pub use term::{field_term, Term};

/// The single cipher suite shared by ISO 15118 and OCPP 2.0.
pub const MANDATORY_SUITE: &str = "TLS_ECDHE_ECDSA_WITH_AES_128_GCM_SHA256";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("key {0} has no private part available to this signer")]
    MissingPrivateKey(KeyId),
    #[error("cipher-suite list must contain at least one suite")]
    EmptySuiteList,
}

/// Seeded source of fresh identifiers, nonces and salts.
///
/// Every value handed out is unique for the lifetime of the source, and the
/// sequence is a pure function of the seed.
#[derive(Debug, Clone)]
pub struct Fresh {
    rng: ChaCha8Rng,
    issued: BTreeSet<u64>,
}

impl Fresh {
    pub fn new(seed: u64) -> Self {
        Fresh {
            rng: ChaCha8Rng::seed_from_u64(seed),
            issued: BTreeSet::new(),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        loop {
            let v = self.rng.next_u64();
            if self.issued.insert(v) {
                return v;
            }
        }
    }

    pub fn nonce(&mut self) -> Term {
        Term::Nonce(self.next_u64())
    }

    /// Random secret bitstring, used for static client tokens.
    pub fn secret_atom(&mut self, prefix: &str) -> Term {
        Term::Atom(format!("{prefix}:{:016x}", self.next_u64()))
    }
}

/// Symbolic asymmetric key pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPair {
    pub key_id: KeyId,
    pub owner: ActorId,
    pub algorithm_label: String,
    /// False for a handle that only carries the public half.
    pub has_private: bool,
}

impl KeyPair {
    pub fn public_part(&self) -> Term {
        Term::PubKey(self.key_id)
    }

    pub fn private_part(&self) -> Term {
        Term::PrivKey(self.key_id)
    }

    pub fn public_only(&self) -> KeyPair {
        KeyPair {
            has_private: false,
            ..self.clone()
        }
    }
}

pub fn keygen(owner: &ActorId, algorithm_label: &str, fresh: &mut Fresh) -> KeyPair {
    KeyPair {
        key_id: KeyId(fresh.next_u64()),
        owner: owner.clone(),
        algorithm_label: algorithm_label.to_string(),
        has_private: true,
    }
}

pub fn sign(keypair: &KeyPair, body: Term) -> Result<Term, CryptoError> {
    if !keypair.has_private {
        return Err(CryptoError::MissingPrivateKey(keypair.key_id));
    }
    Ok(Term::sign(keypair.key_id, body))
}

/// True iff `signature` is a signature under `public_key` over exactly `body`.
pub fn verify(public_key: &Term, signature: &Term, body: &Term) -> bool {
    match (public_key, signature) {
        (Term::PubKey(pk), Term::Sign(sk, signed)) => pk == sk && signed.as_ref() == body,
        _ => false,
    }
}

pub fn encrypt(key: &Term, body: Term) -> Term {
    Term::enc(key.clone(), body)
}

/// Opens `ciphertext` with `key`; a wrong key yields `None`, never another plaintext.
pub fn decrypt(key: &Term, ciphertext: &Term) -> Option<Term> {
    match ciphertext {
        Term::Enc(k, body) if &k.decryption_key() == key => Some(body.as_ref().clone()),
        _ => None,
    }
}

pub fn mac(key: &Term, body: Term) -> Term {
    Term::mac(key.clone(), body)
}

/// Per-card key derived from a shared master key and the card UID.
pub fn kdf_diversify(master_key: &Term, uid: &str) -> Term {
    Term::kdf(master_key.clone(), Term::atom(uid))
}

/// Named symmetric master key.
pub fn master_key(name: &str) -> Term {
    Term::SymKey(format!("master:{name}"))
}

/// Approved TLS cipher suites for a deployment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CipherSuitePolicy {
    suites: Vec<String>,
}

impl Default for CipherSuitePolicy {
    fn default() -> Self {
        CipherSuitePolicy {
            suites: vec![MANDATORY_SUITE.to_string()],
        }
    }
}

impl CipherSuitePolicy {
    /// Mandatory suite plus an optional fallback built on different primitives.
    pub fn with_additional(extra: Option<&str>) -> Self {
        let mut policy = CipherSuitePolicy::default();
        if let Some(extra) = extra {
            if extra != MANDATORY_SUITE {
                policy.suites.push(extra.to_string());
            }
        }
        policy
    }

    /// Replaces the list wholesale; at least one suite is required.
    pub fn from_override(suites: Vec<String>) -> Result<Self, CryptoError> {
        if suites.is_empty() {
            return Err(CryptoError::EmptySuiteList);
        }
        Ok(CipherSuitePolicy { suites })
    }

    pub fn approved_cipher_suites(&self) -> &[String] {
        &self.suites
    }

    pub fn is_approved(&self, suite: &str) -> bool {
        self.suites.iter().any(|s| s == suite)
    }
}

/// The default approved list.
pub fn approved_cipher_suites() -> Vec<String> {
    CipherSuitePolicy::default().suites
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev() -> ActorId {
        ActorId::new("ev1")
    }

    #[test]
    fn keygen_is_fresh_and_deterministic() {
        let mut fresh = Fresh::new(11);
        let a = keygen(&ev(), "sig", &mut fresh);
        let b = keygen(&ev(), "sig", &mut fresh);
        assert_ne!(a.key_id, b.key_id);

        let mut again = Fresh::new(11);
        assert_eq!(keygen(&ev(), "sig", &mut again).key_id, a.key_id);
        assert_eq!(keygen(&ev(), "sig", &mut again).key_id, b.key_id);
    }

    #[test]
    fn sign_and_verify() {
        let mut fresh = Fresh::new(1);
        let k = keygen(&ev(), "sig", &mut fresh);
        let other = keygen(&ev(), "sig", &mut fresh);
        let body = Term::atom("t");
        let sig = sign(&k, body.clone()).unwrap();
        assert!(verify(&k.public_part(), &sig, &body));
        assert!(!verify(&other.public_part(), &sig, &body));
        assert!(!verify(&k.public_part(), &sig, &Term::atom("t'")));
    }

    #[test]
    fn signing_without_private_part_fails() {
        let mut fresh = Fresh::new(1);
        let k = keygen(&ev(), "sig", &mut fresh).public_only();
        assert_eq!(
            sign(&k, Term::atom("x")),
            Err(CryptoError::MissingPrivateKey(k.key_id))
        );
    }

    #[test]
    fn decrypt_with_wrong_key_fails() {
        let mut fresh = Fresh::new(2);
        let k = keygen(&ev(), "enc", &mut fresh);
        let other = keygen(&ev(), "enc", &mut fresh);
        let c = encrypt(&k.public_part(), Term::atom("secret"));
        assert_eq!(decrypt(&k.private_part(), &c), Some(Term::atom("secret")));
        assert_eq!(decrypt(&other.private_part(), &c), None);
        assert_eq!(decrypt(&k.public_part(), &c), None);
    }

    #[test]
    fn kdf_is_deterministic_per_uid() {
        let m = master_key("mk1");
        assert_eq!(kdf_diversify(&m, "04AABB"), kdf_diversify(&m, "04AABB"));
        assert_ne!(kdf_diversify(&m, "04AABB"), kdf_diversify(&m, "04CCDD"));
    }

    #[test]
    fn cipher_suites() {
        assert_eq!(
            approved_cipher_suites(),
            vec!["TLS_ECDHE_ECDSA_WITH_AES_128_GCM_SHA256".to_string()]
        );
        let two = CipherSuitePolicy::with_additional(Some("TLS_CHACHA20_POLY1305_SHA256"));
        assert_eq!(two.approved_cipher_suites().len(), 2);
        assert_eq!(
            CipherSuitePolicy::from_override(vec![]),
            Err(CryptoError::EmptySuiteList)
        );
    }
}
