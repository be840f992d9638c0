//! End-to-end document protection.
//!
//! Three modes are supported:
//!
//! * `NoProtection`: fields travel as-is.
//! * `WholeMessageSignature`: one signature over the header, the encoding
//!   label and every field. Any change, including dropping a field or
//!   re-encoding, breaks it.
//! * `SelectiveDisclosure`: each field is bound by a salted hash commitment
//!   `Hash(salt, (name, value))`; one signature covers the header and the
//!   ordered commitment list. A field can be redacted by dropping its salt
//!   and value while the signature stays valid, and a field can be made
//!   readable only by chosen recipients by encrypting `(salt, (name, value))`
//!   to each of them.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    decrypt, field_term, sign, verify, Certificate, Fresh, KeyPair, Pki, Subject, Term,
};
use crate::model::{
    embedded_term, ActorId, AnchorId, DocType, Fields, KeyId, Payload, PayloadError,
};

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ProtectionMode {
    #[default]
    NoProtection,
    WholeMessageSignature,
    SelectiveDisclosure,
}

impl ProtectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ProtectionMode::NoProtection => "none",
            ProtectionMode::WholeMessageSignature => "whole",
            ProtectionMode::SelectiveDisclosure => "selective",
        }
    }

    pub const ALL: [ProtectionMode; 3] = [
        ProtectionMode::NoProtection,
        ProtectionMode::WholeMessageSignature,
        ProtectionMode::SelectiveDisclosure,
    ];
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvelopeError {
    #[error("producer has no signing key")]
    MissingKey,
    #[error("duplicate field name {0}")]
    DuplicateFieldName(String),
    #[error("unknown field {0}")]
    UnknownField(String),
    #[error("field {0} is not readable by this party")]
    AccessDenied(String),
    #[error(transparent)]
    Payload(#[from] PayloadError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationFailure {
    Unsigned,
    BadChain,
    BadSignature,
    CommitmentMismatch,
}

impl fmt::Display for VerificationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerificationFailure::Unsigned => "unsigned",
            VerificationFailure::BadChain => {
                "signer certificate does not chain to a trusted anchor"
            }
            VerificationFailure::BadSignature => "bad signature",
            VerificationFailure::CommitmentMismatch => {
                "disclosed value does not match its commitment"
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentHeader {
    pub producer: Subject,
    pub doc_id: String,
    pub doc_type: DocType,
    pub intended_recipients: Vec<ActorId>,
    /// Serialization the signature was computed over.
    pub encoding: String,
}

impl DocumentHeader {
    pub fn term(&self) -> Term {
        Term::tuple(vec![
            Term::atom(self.producer.to_string()),
            Term::atom(&self.doc_id),
            Term::atom(self.doc_type.as_str()),
            Term::tuple(
                self.intended_recipients
                    .iter()
                    .map(|r| Term::atom(r.as_str()))
                    .collect::<Vec<_>>(),
            ),
            Term::atom(&self.encoding),
        ])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disclosure {
    pub value: String,
    pub salt: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSlot {
    pub name: String,
    pub commitment: Term,
    pub disclosure: Option<Disclosure>,
    /// Per-recipient `Enc(PubKey, (salt, (name, value)))`.
    pub confidential_for: Vec<(ActorId, Term)>,
}

impl FieldSlot {
    fn term(&self) -> Term {
        let disclosed = match &self.disclosure {
            Some(d) => Term::pair(Term::Nonce(d.salt), field_term(&self.name, &d.value)),
            None => Term::atom(""),
        };
        Term::tuple(vec![
            Term::atom(&self.name),
            self.commitment.clone(),
            disclosed,
            Term::tuple(
                self.confidential_for
                    .iter()
                    .map(|(_, c)| c.clone())
                    .collect::<Vec<_>>(),
            ),
        ])
    }
}

pub fn commitment(salt: u64, name: &str, value: &str) -> Term {
    Term::hash(Term::pair(Term::Nonce(salt), field_term(name, value)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DocumentBody {
    Unprotected {
        fields: Fields,
    },
    WholeMessage {
        fields: Fields,
        signature: Term,
        signature_broken: bool,
    },
    Selective {
        slots: Vec<FieldSlot>,
        signature: Term,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecuredDocument {
    pub header: DocumentHeader,
    pub body: DocumentBody,
    pub signer_certificate: Option<Certificate>,
    /// Current serialization; differs from `header.encoding` after an
    /// envelope-preserving conversion.
    pub transport_format: String,
}

/// Who signs: the subject named as producer, its key and certificate.
#[derive(Clone, Debug)]
pub struct Producer<'a> {
    pub subject: Subject,
    pub key: Option<&'a KeyPair>,
    pub certificate: Option<&'a Certificate>,
}

/// Field name to the recipients (and their encryption keys) allowed to read it.
pub type ConfidentialityPolicy = BTreeMap<String, Vec<(ActorId, KeyId)>>;

fn whole_message_input(header: &DocumentHeader, fields: &Fields) -> Term {
    Term::hash(Term::pair(
        header.term(),
        Term::tuple(
            fields
                .iter()
                .map(|(k, v)| field_term(k, v))
                .collect::<Vec<_>>(),
        ),
    ))
}

fn selective_input(header: &DocumentHeader, slots: &[FieldSlot]) -> Term {
    Term::hash(Term::pair(
        header.term(),
        Term::tuple(
            slots
                .iter()
                .map(|s| s.commitment.clone())
                .collect::<Vec<_>>(),
        ),
    ))
}

/// Protects `payload` for `recipients`.
#[allow(clippy::too_many_arguments)]
pub fn protect(
    producer: &Producer<'_>,
    doc_id: &str,
    payload: &Payload,
    recipients: Vec<ActorId>,
    mode: ProtectionMode,
    policy: &ConfidentialityPolicy,
    encoding: &str,
    fresh: &mut Fresh,
) -> Result<SecuredDocument, EnvelopeError> {
    payload.validate()?;
    let fields = payload.fields();
    let mut seen = std::collections::BTreeSet::new();
    for (k, _) in &fields {
        if !seen.insert(k.as_str()) {
            return Err(EnvelopeError::DuplicateFieldName(k.clone()));
        }
    }
    let header = DocumentHeader {
        producer: producer.subject.clone(),
        doc_id: doc_id.to_string(),
        doc_type: payload.doc_type(),
        intended_recipients: recipients,
        encoding: encoding.to_string(),
    };
    let signing = || -> Result<(&KeyPair, Certificate), EnvelopeError> {
        match (producer.key, producer.certificate) {
            (Some(k), Some(c)) if k.has_private && k.key_id == c.public_key => Ok((k, c.clone())),
            _ => Err(EnvelopeError::MissingKey),
        }
    };
    let (body, signer_certificate) = match mode {
        ProtectionMode::NoProtection => (DocumentBody::Unprotected { fields }, None),
        ProtectionMode::WholeMessageSignature => {
            let (key, cert) = signing()?;
            let signature = sign(key, whole_message_input(&header, &fields))
                .map_err(|_| EnvelopeError::MissingKey)?;
            (
                DocumentBody::WholeMessage {
                    fields,
                    signature,
                    signature_broken: false,
                },
                Some(cert),
            )
        }
        ProtectionMode::SelectiveDisclosure => {
            let (key, cert) = signing()?;
            let slots: Vec<FieldSlot> = fields
                .into_iter()
                .map(|(name, value)| {
                    let salt = fresh.next_u64();
                    let opening = Term::pair(Term::Nonce(salt), field_term(&name, &value));
                    let (disclosure, confidential_for) = match policy.get(&name) {
                        Some(readers) => (
                            None,
                            readers
                                .iter()
                                .map(|(a, k)| {
                                    (a.clone(), Term::enc(Term::PubKey(*k), opening.clone()))
                                })
                                .collect(),
                        ),
                        None => (
                            Some(Disclosure {
                                value: value.clone(),
                                salt,
                            }),
                            vec![],
                        ),
                    };
                    FieldSlot {
                        commitment: commitment(salt, &name, &value),
                        name,
                        disclosure,
                        confidential_for,
                    }
                })
                .collect();
            let signature = sign(key, selective_input(&header, &slots))
                .map_err(|_| EnvelopeError::MissingKey)?;
            (DocumentBody::Selective { slots, signature }, Some(cert))
        }
    };
    Ok(SecuredDocument {
        header,
        body,
        signer_certificate,
        transport_format: encoding.to_string(),
    })
}

impl SecuredDocument {
    pub fn mode(&self) -> ProtectionMode {
        match self.body {
            DocumentBody::Unprotected { .. } => ProtectionMode::NoProtection,
            DocumentBody::WholeMessage { .. } => ProtectionMode::WholeMessageSignature,
            DocumentBody::Selective { .. } => ProtectionMode::SelectiveDisclosure,
        }
    }

    pub fn field_names(&self) -> Vec<&str> {
        match &self.body {
            DocumentBody::Unprotected { fields } | DocumentBody::WholeMessage { fields, .. } => {
                fields.iter().map(|(k, _)| k.as_str()).collect()
            }
            DocumentBody::Selective { slots, .. } => {
                slots.iter().map(|s| s.name.as_str()).collect()
            }
        }
    }

    /// Fields readable by anyone, without keys.
    pub fn public_fields(&self) -> Fields {
        match &self.body {
            DocumentBody::Unprotected { fields } | DocumentBody::WholeMessage { fields, .. } => {
                fields.clone()
            }
            DocumentBody::Selective { slots, .. } => slots
                .iter()
                .filter_map(|s| {
                    s.disclosure
                        .as_ref()
                        .map(|d| (s.name.clone(), d.value.clone()))
                })
                .collect(),
        }
    }

    /// Symbolic content of the whole document as it appears on a wire.
    pub fn term(&self) -> Term {
        let body = match &self.body {
            DocumentBody::Unprotected { fields } => Term::tuple(
                fields
                    .iter()
                    .map(|(k, v)| field_term(k, v))
                    .collect::<Vec<_>>(),
            ),
            DocumentBody::WholeMessage {
                fields, signature, ..
            } => Term::pair(
                Term::tuple(
                    fields
                        .iter()
                        .map(|(k, v)| field_term(k, v))
                        .collect::<Vec<_>>(),
                ),
                signature.clone(),
            ),
            DocumentBody::Selective { slots, signature } => Term::pair(
                Term::tuple(slots.iter().map(FieldSlot::term).collect::<Vec<_>>()),
                signature.clone(),
            ),
        };
        let cert = match &self.signer_certificate {
            Some(c) => Term::pair(Term::PubKey(c.public_key), c.signature.clone()),
            None => Term::atom(""),
        };
        let embedded: Vec<Term> = self
            .public_fields()
            .iter()
            .filter_map(|(k, v)| embedded_term(self.header.doc_type, k, v))
            .collect();
        Term::tuple(vec![self.header.term(), body, cert, Term::tuple(embedded)])
    }

    /// Replaces a field value in place, as a tamperer without keys would.
    /// Commitments and signatures are left untouched.
    pub fn tamper_set(&mut self, name: &str, value: &str) -> Result<(), EnvelopeError> {
        match &mut self.body {
            DocumentBody::Unprotected { fields } | DocumentBody::WholeMessage { fields, .. } => {
                match fields.iter_mut().find(|(k, _)| k == name) {
                    Some(f) => f.1 = value.to_string(),
                    None => fields.push((name.to_string(), value.to_string())),
                }
            }
            DocumentBody::Selective { slots, .. } => {
                let slot = slots
                    .iter_mut()
                    .find(|s| s.name == name)
                    .ok_or_else(|| EnvelopeError::UnknownField(name.into()))?;
                let salt = slot.disclosure.as_ref().map(|d| d.salt).unwrap_or(0);
                slot.disclosure = Some(Disclosure {
                    value: value.to_string(),
                    salt,
                });
                slot.confidential_for.clear();
            }
        }
        Ok(())
    }

    /// Drops a field together with its commitment slot.
    pub fn tamper_remove(&mut self, name: &str) -> Result<(), EnvelopeError> {
        let before = self.field_names().len();
        match &mut self.body {
            DocumentBody::Unprotected { fields } | DocumentBody::WholeMessage { fields, .. } => {
                fields.retain(|(k, _)| k != name)
            }
            DocumentBody::Selective { slots, .. } => slots.retain(|s| s.name != name),
        }
        if self.field_names().len() == before {
            return Err(EnvelopeError::UnknownField(name.into()));
        }
        Ok(())
    }

    /// Replaces the signature with one by `key`, keeping the claimed producer.
    pub fn resign(&mut self, key: &KeyPair, certificate: &Certificate) {
        let input = match &self.body {
            DocumentBody::Unprotected { .. } => return,
            DocumentBody::WholeMessage { fields, .. } => whole_message_input(&self.header, fields),
            DocumentBody::Selective { slots, .. } => selective_input(&self.header, slots),
        };
        let Ok(new_sig) = sign(key, input) else {
            return;
        };
        match &mut self.body {
            DocumentBody::WholeMessage {
                signature,
                signature_broken,
                ..
            } => {
                *signature = new_sig;
                *signature_broken = false;
            }
            DocumentBody::Selective { signature, .. } => *signature = new_sig,
            DocumentBody::Unprotected { .. } => {}
        }
        self.signer_certificate = Some(certificate.clone());
    }
}

/// Removes a field's value. Under selective disclosure the commitment stays,
/// so the signature still verifies.
pub fn redact(
    document: &SecuredDocument,
    field_name: &str,
) -> Result<SecuredDocument, EnvelopeError> {
    let mut out = document.clone();
    match &mut out.body {
        DocumentBody::Unprotected { fields } => {
            let n = fields.len();
            fields.retain(|(k, _)| k != field_name);
            if fields.len() == n {
                return Err(EnvelopeError::UnknownField(field_name.into()));
            }
        }
        DocumentBody::WholeMessage {
            fields,
            signature_broken,
            ..
        } => {
            let n = fields.len();
            fields.retain(|(k, _)| k != field_name);
            if fields.len() == n {
                return Err(EnvelopeError::UnknownField(field_name.into()));
            }
            *signature_broken = true;
        }
        DocumentBody::Selective { slots, .. } => {
            let slot = slots
                .iter_mut()
                .find(|s| s.name == field_name)
                .ok_or_else(|| EnvelopeError::UnknownField(field_name.into()))?;
            slot.disclosure = None;
            slot.confidential_for.clear();
        }
    }
    Ok(out)
}

/// Checks the signer chain, the disclosed commitments and the signature.
/// Returns the attested producer.
pub fn verify_document(
    document: &SecuredDocument,
    pki: &Pki,
    anchors: &[AnchorId],
) -> Result<Subject, VerificationFailure> {
    let cert = match (&document.body, &document.signer_certificate) {
        (DocumentBody::Unprotected { .. }, _) | (_, None) => {
            return Err(VerificationFailure::Unsigned)
        }
        (_, Some(c)) => c,
    };
    if !pki.verify_chain_any(cert, anchors) || cert.subject != document.header.producer {
        return Err(VerificationFailure::BadChain);
    }
    let pk = Term::PubKey(cert.public_key);
    match &document.body {
        DocumentBody::Unprotected { .. } => unreachable!("handled above"),
        DocumentBody::WholeMessage {
            fields,
            signature,
            signature_broken,
        } => {
            if *signature_broken
                || !verify(
                    &pk,
                    signature,
                    &whole_message_input(&document.header, fields),
                )
            {
                return Err(VerificationFailure::BadSignature);
            }
        }
        DocumentBody::Selective { slots, signature } => {
            for s in slots {
                if let Some(d) = &s.disclosure {
                    if commitment(d.salt, &s.name, &d.value) != s.commitment {
                        return Err(VerificationFailure::CommitmentMismatch);
                    }
                }
            }
            if !verify(&pk, signature, &selective_input(&document.header, slots)) {
                return Err(VerificationFailure::BadSignature);
            }
        }
    }
    Ok(document.header.producer.clone())
}

/// Reads one field as `recipient`, holding `keys`.
pub fn decrypt_field(
    document: &SecuredDocument,
    field_name: &str,
    recipient: &ActorId,
    keys: &[KeyPair],
) -> Result<String, EnvelopeError> {
    match &document.body {
        DocumentBody::Unprotected { fields } | DocumentBody::WholeMessage { fields, .. } => fields
            .iter()
            .find(|(k, _)| k == field_name)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| EnvelopeError::UnknownField(field_name.into())),
        DocumentBody::Selective { slots, .. } => {
            let slot = slots
                .iter()
                .find(|s| s.name == field_name)
                .ok_or_else(|| EnvelopeError::UnknownField(field_name.into()))?;
            if let Some(d) = &slot.disclosure {
                return Ok(d.value.clone());
            }
            for (reader, ct) in &slot.confidential_for {
                if reader != recipient {
                    continue;
                }
                for k in keys.iter().filter(|k| k.has_private) {
                    let Some(Term::Pair(salt, field)) = decrypt(&k.private_part(), ct) else {
                        continue;
                    };
                    let (Term::Nonce(salt), Term::Pair(name, value)) = (*salt, *field) else {
                        continue;
                    };
                    let (Term::Atom(name), Term::Atom(value)) = (*name, *value) else {
                        continue;
                    };
                    if name == field_name && commitment(salt, &name, &value) == slot.commitment {
                        return Ok(value);
                    }
                }
            }
            Err(EnvelopeError::AccessDenied(field_name.into()))
        }
    }
}

/// Every field `recipient` can read, in document order.
pub fn open_for(document: &SecuredDocument, recipient: &ActorId, keys: &[KeyPair]) -> Fields {
    document
        .field_names()
        .into_iter()
        .filter_map(|name| {
            decrypt_field(document, name, recipient, keys)
                .ok()
                .map(|v| (name.to_string(), v))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginProof {
    Proof,
    RepudiationPossible,
    /// Signed, but no longer verifies: the stored copy was altered.
    Tampered,
}

/// Whether a stored document proves `claimed_producer` produced it.
pub fn prove_origin(
    document: &SecuredDocument,
    claimed_producer: &Subject,
    pki: &Pki,
    anchors: &[AnchorId],
) -> OriginProof {
    match verify_document(document, pki, anchors) {
        Err(VerificationFailure::Unsigned) => OriginProof::RepudiationPossible,
        Err(_) => OriginProof::Tampered,
        Ok(p) if &p == claimed_producer => OriginProof::Proof,
        Ok(_) => OriginProof::RepudiationPossible,
    }
}

/// Re-encodes a document. A lossy conversion re-serializes the content under
/// the new format and keeps only readable field values; an envelope-preserving
/// one carries the signed envelope through unchanged.
pub fn format_convert(
    document: &SecuredDocument,
    from_format: &str,
    to_format: &str,
    lossy: bool,
) -> SecuredDocument {
    let mut out = document.clone();
    out.transport_format = to_format.to_string();
    if !lossy || from_format == to_format {
        return out;
    }
    match &mut out.body {
        DocumentBody::Unprotected { .. } => {}
        DocumentBody::WholeMessage { .. } => out.header.encoding = to_format.to_string(),
        DocumentBody::Selective { slots, .. } => {
            out.header.encoding = to_format.to_string();
            slots.retain(|s| s.disclosure.is_some());
            for s in slots.iter_mut() {
                s.confidential_for.clear();
            }
        }
    }
    out
}
