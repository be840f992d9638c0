//! Dolev-Yao knowledge: a set of terms closed under analysis, plus a
//! synthesis check for terms that can be built from it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::crypto::Term;

/// Terms an observer holds, closed under the analysis rules:
///
/// * `Pair(a, b)` yields `a` and `b`;
/// * `Sign(k, b)` yields `b` (signatures do not hide their body);
/// * `Enc(k, b)` yields `b` once the decryption key is derivable.
///
/// `Hash`, `Mac` and `Kdf` are one-way and are never analysed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Knowledge {
    terms: BTreeSet<Term>,
    /// Ciphertexts whose key is not (yet) derivable.
    #[serde(skip)]
    sealed: BTreeSet<Term>,
}

impl Knowledge {
    pub fn new() -> Self {
        Knowledge::default()
    }

    pub fn from_terms<I: IntoIterator<Item = Term>>(terms: I) -> Self {
        let mut k = Knowledge::new();
        k.add_all(terms);
        k
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.terms.iter()
    }

    /// Membership in the analysed set, without synthesis.
    pub fn contains(&self, t: &Term) -> bool {
        self.terms.contains(t)
    }

    /// Adds a term and re-closes. Returns the terms that were new.
    pub fn add(&mut self, t: Term) -> Vec<Term> {
        self.add_all([t])
    }

    pub fn add_all<I: IntoIterator<Item = Term>>(&mut self, terms: I) -> Vec<Term> {
        let mut added = Vec::new();
        let mut work: Vec<Term> = terms.into_iter().collect();
        loop {
            while let Some(t) = work.pop() {
                if self.terms.contains(&t) {
                    continue;
                }
                self.terms.insert(t.clone());
                match &t {
                    Term::Pair(a, b) => {
                        work.push(a.as_ref().clone());
                        work.push(b.as_ref().clone());
                    }
                    Term::Sign(_, body) => work.push(body.as_ref().clone()),
                    Term::Enc(..) => {
                        self.sealed.insert(t.clone());
                    }
                    _ => {}
                }
                added.push(t);
            }
            // A newly learned key may open earlier ciphertexts.
            let openable: Vec<Term> = self
                .sealed
                .iter()
                .filter(|c| match c {
                    Term::Enc(k, _) => self.can_derive(&k.decryption_key()),
                    _ => false,
                })
                .cloned()
                .collect();
            if openable.is_empty() {
                break;
            }
            for c in openable {
                self.sealed.remove(&c);
                if let Term::Enc(_, body) = c {
                    work.push(*body);
                }
            }
        }
        added
    }

    /// True iff `t` is in the closure or can be composed from it.
    pub fn can_derive(&self, t: &Term) -> bool {
        if self.terms.contains(t) {
            return true;
        }
        match t {
            Term::Pair(a, b) | Term::Kdf(a, b) | Term::Enc(a, b) | Term::Mac(a, b) => {
                self.can_derive(a) && self.can_derive(b)
            }
            Term::Hash(a) => self.can_derive(a),
            Term::Sign(k, body) => self.can_derive(&Term::PrivKey(*k)) && self.can_derive(body),
            Term::Atom(s) => s.is_empty(),
            Term::Nonce(_) | Term::PubKey(_) | Term::PrivKey(_) | Term::SymKey(_) => false,
        }
    }

    /// Re-seals ciphertexts after deserialisation, which drops the cache.
    pub fn reclose(&mut self) {
        let terms: Vec<Term> = std::mem::take(&mut self.terms).into_iter().collect();
        self.sealed.clear();
        self.add_all(terms);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{kdf_diversify, master_key};
    use crate::model::KeyId;
    use proptest::prelude::*;

    #[test]
    fn unpairs_and_opens_with_known_key() {
        let k = Term::SymKey("s".into());
        let secret = Term::atom("price");
        let mut kn = Knowledge::from_terms([Term::enc(
            k.clone(),
            Term::pair(secret.clone(), Term::Nonce(1)),
        )]);
        assert!(!kn.can_derive(&secret));
        kn.add(k);
        assert!(kn.can_derive(&secret));
        assert!(kn.can_derive(&Term::Nonce(1)));
    }

    #[test]
    fn public_key_encryption_needs_private_half() {
        let c = Term::enc(Term::PubKey(KeyId(3)), Term::atom("x"));
        let mut kn = Knowledge::from_terms([c, Term::PubKey(KeyId(3))]);
        assert!(!kn.can_derive(&Term::atom("x")));
        kn.add(Term::PrivKey(KeyId(3)));
        assert!(kn.can_derive(&Term::atom("x")));
    }

    #[test]
    fn hashes_are_one_way() {
        let kn = Knowledge::from_terms([Term::hash(Term::atom("v"))]);
        assert!(!kn.can_derive(&Term::atom("v")));
    }

    #[test]
    fn signature_reveals_body_but_cannot_be_forged() {
        let sig = Term::sign(KeyId(9), Term::atom("cdr"));
        let kn = Knowledge::from_terms([sig.clone(), Term::PubKey(KeyId(9))]);
        assert!(kn.can_derive(&Term::atom("cdr")));
        assert!(kn.can_derive(&sig));
        assert!(!kn.can_derive(&Term::sign(KeyId(9), Term::atom("other"))));
    }

    #[test]
    fn master_key_yields_every_card_key() {
        let m = master_key("mk");
        let kn = Knowledge::from_terms([m.clone(), Term::atom("04AABB"), Term::atom("04CCDD")]);
        assert!(kn.can_derive(&kdf_diversify(&m, "04AABB")));
        assert!(kn.can_derive(&kdf_diversify(&m, "04CCDD")));
    }

    #[test]
    fn one_card_key_does_not_yield_a_sibling() {
        let m = master_key("mk");
        let kn = Knowledge::from_terms([
            kdf_diversify(&m, "04AABB"),
            Term::atom("04AABB"),
            Term::atom("04CCDD"),
        ]);
        assert!(kn.can_derive(&kdf_diversify(&m, "04AABB")));
        assert!(!kn.can_derive(&kdf_diversify(&m, "04CCDD")));
        assert!(!kn.can_derive(&m));
    }

    #[test]
    fn salted_commitment_resists_dictionary_confirmation() {
        let field = Term::pair(Term::atom("location"), Term::atom("Utrecht"));
        let commitment = Term::hash(Term::pair(Term::Nonce(77), field.clone()));
        let kn = Knowledge::from_terms([
            commitment.clone(),
            Term::atom("location"),
            Term::atom("Utrecht"),
        ]);
        // The candidate value itself is known, but the commitment cannot be recomputed.
        assert!(kn.can_derive(&field));
        assert!(!kn.can_derive(&Term::hash(Term::pair(Term::Nonce(78), field.clone()))));
        let with_salt = Knowledge::from_terms([
            Term::Nonce(77),
            Term::atom("location"),
            Term::atom("Utrecht"),
        ]);
        assert!(with_salt.can_derive(&commitment));
    }

    /// Reference closure computed by naive iteration to a fixpoint.
    fn oracle_closure(seed: &[Term]) -> BTreeSet<Term> {
        let mut set: BTreeSet<Term> = seed.iter().cloned().collect();
        loop {
            let mut next = set.clone();
            for t in &set {
                match t {
                    Term::Pair(a, b) => {
                        next.insert(a.as_ref().clone());
                        next.insert(b.as_ref().clone());
                    }
                    Term::Sign(_, b) => {
                        next.insert(b.as_ref().clone());
                    }
                    Term::Enc(k, b) => {
                        let kn = Knowledge {
                            terms: set.clone(),
                            sealed: BTreeSet::new(),
                        };
                        if kn.can_derive(&k.decryption_key()) {
                            next.insert(b.as_ref().clone());
                        }
                    }
                    _ => {}
                }
            }
            if next == set {
                return set;
            }
            set = next;
        }
    }

    fn leaf() -> impl Strategy<Value = Term> {
        prop_oneof![
            (0u8..4).prop_map(|i| Term::atom(format!("a{i}"))),
            (0u64..4).prop_map(Term::Nonce),
            (0u64..3).prop_map(|k| Term::PubKey(KeyId(k))),
            (0u64..3).prop_map(|k| Term::PrivKey(KeyId(k))),
            (0u8..2).prop_map(|i| Term::SymKey(format!("s{i}"))),
        ]
    }

    fn term() -> impl Strategy<Value = Term> {
        leaf().prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::pair(a, b)),
                inner.clone().prop_map(Term::hash),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::enc(a, b)),
                ((0u64..3), inner.clone()).prop_map(|(k, b)| Term::sign(KeyId(k), b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::mac(a, b)),
            ]
        })
    }

    proptest! {
        #[test]
        fn closure_matches_oracle(seed in prop::collection::vec(term(), 0..6)) {
            let kn = Knowledge::from_terms(seed.clone());
            prop_assert_eq!(kn.terms.clone(), oracle_closure(&seed));
        }

        #[test]
        fn closure_is_idempotent_and_monotone(seed in prop::collection::vec(term(), 0..6), extra in term()) {
            let mut kn = Knowledge::from_terms(seed.clone());
            let before = kn.terms.clone();
            prop_assert!(kn.add_all(before.iter().cloned()).is_empty());
            kn.add(extra);
            prop_assert!(before.is_subset(&kn.terms));
        }

        /// No analysis or synthesis produces a signature under a key whose
        /// private half is not derivable, unless that exact signature was observed.
        #[test]
        fn signatures_unforgeable(seed in prop::collection::vec(term(), 0..6), k in 0u64..3, body in term()) {
            let kn = Knowledge::from_terms(seed.clone());
            let target = Term::sign(KeyId(k), body);
            let observed = seed.iter().any(|s| s.contains(&target));
            if !kn.can_derive(&Term::PrivKey(KeyId(k))) && !observed {
                prop_assert!(!kn.can_derive(&target));
            }
        }
    }
}
