//! Symbolic message terms.
//!
//! Cryptography is perfect: a term built with [`Term::Sign`] can only be
//! produced by someone holding the matching private key, [`Term::Hash`] has
//! no inverse, and [`Term::Enc`] opens only with the matching key. The
//! deduction rules that give these constructors meaning live in
//! [`crate::adversary::Knowledge`].

use serde::{Deserialize, Serialize};

use crate::model::KeyId;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "t", content = "v", rename_all = "snake_case")]
pub enum Term {
    Atom(String),
    Nonce(u64),
    PubKey(KeyId),
    PrivKey(KeyId),
    /// A named symmetric secret such as a card master key or a TLS session key.
    SymKey(String),
    Pair(Box<Term>, Box<Term>),
    Hash(Box<Term>),
    /// Key diversification: `Kdf(master, input)`.
    Kdf(Box<Term>, Box<Term>),
    /// `Enc(key, body)`; a `PubKey` key is opened by the matching `PrivKey`.
    Enc(Box<Term>, Box<Term>),
    /// Signature by the private half of the key pair, carrying its body.
    Sign(KeyId, Box<Term>),
    Mac(Box<Term>, Box<Term>),
}

impl Term {
    pub fn atom(s: impl Into<String>) -> Term {
        Term::Atom(s.into())
    }

    pub fn pair(a: Term, b: Term) -> Term {
        Term::Pair(Box::new(a), Box::new(b))
    }

    pub fn hash(t: Term) -> Term {
        Term::Hash(Box::new(t))
    }

    pub fn kdf(master: Term, input: Term) -> Term {
        Term::Kdf(Box::new(master), Box::new(input))
    }

    pub fn enc(key: Term, body: Term) -> Term {
        Term::Enc(Box::new(key), Box::new(body))
    }

    pub fn sign(key: KeyId, body: Term) -> Term {
        Term::Sign(key, Box::new(body))
    }

    pub fn mac(key: Term, body: Term) -> Term {
        Term::Mac(Box::new(key), Box::new(body))
    }

    /// Right-nested pairing of a list; the empty list is the atom `""`.
    pub fn tuple<I>(items: I) -> Term
    where
        I: IntoIterator<Item = Term>,
        I::IntoIter: DoubleEndedIterator,
    {
        let mut iter = items.into_iter().rev();
        let Some(mut acc) = iter.next() else {
            return Term::atom("");
        };
        for t in iter {
            acc = Term::pair(t, acc);
        }
        acc
    }

    /// The key that opens an `Enc` built with `self` as its key.
    pub fn decryption_key(&self) -> Term {
        match self {
            Term::PubKey(k) => Term::PrivKey(*k),
            other => other.clone(),
        }
    }

    /// Number of constructor nodes, used to bound randomized deduction.
    pub fn size(&self) -> usize {
        match self {
            Term::Atom(_)
            | Term::Nonce(_)
            | Term::PubKey(_)
            | Term::PrivKey(_)
            | Term::SymKey(_) => 1,
            Term::Hash(a) | Term::Sign(_, a) => 1 + a.size(),
            Term::Pair(a, b) | Term::Kdf(a, b) | Term::Enc(a, b) | Term::Mac(a, b) => {
                1 + a.size() + b.size()
            }
        }
    }

    /// True if `needle` occurs anywhere inside `self`, including under hashes.
    pub fn contains(&self, needle: &Term) -> bool {
        if self == needle {
            return true;
        }
        match self {
            Term::Hash(a) | Term::Sign(_, a) => a.contains(needle),
            Term::Pair(a, b) | Term::Kdf(a, b) | Term::Enc(a, b) | Term::Mac(a, b) => {
                a.contains(needle) || b.contains(needle)
            }
            _ => false,
        }
    }
}

/// The canonical term for a named application field.
pub fn field_term(name: &str, value: &str) -> Term {
    Term::pair(Term::atom(name), Term::atom(value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tuple_nests_right() {
        let t = Term::tuple(vec![Term::atom("a"), Term::atom("b"), Term::atom("c")]);
        assert_eq!(
            t,
            Term::pair(
                Term::atom("a"),
                Term::pair(Term::atom("b"), Term::atom("c"))
            )
        );
        assert_eq!(Term::tuple(Vec::new()), Term::atom(""));
    }

    #[test]
    fn serde_round_trip() {
        let t = Term::sign(
            KeyId(7),
            Term::hash(Term::pair(Term::Nonce(3), Term::atom("x"))),
        );
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<Term>(&json).unwrap(), t);
    }
}
