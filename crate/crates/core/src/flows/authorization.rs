//! Credential presentation at a charge point and the grant decision.

use crate::adversary::AttackAction;
use crate::channel::Medium;
use crate::cli::config::AuthMethod;
use crate::crypto::{kdf_diversify, mac, sign, verify, Subject, Term};
use crate::envelope::ProtectionMode;
use crate::model::{
    ActorId, ContractId, CredentialId, CredentialKind, CredentialPresentation, DocType, Fixed3,
    Kwh, Payload, Role,
};
use crate::trace::{EventKind, Presenter};

use super::{FlowError, World, DEFAULT_ENERGY_KWH};

struct Decision {
    granted: bool,
    reason: String,
}

impl Decision {
    fn grant(reason: &str) -> Self {
        Decision {
            granted: true,
            reason: reason.to_string(),
        }
    }

    fn deny(reason: impl Into<String>) -> Self {
        Decision {
            granted: false,
            reason: reason.into(),
        }
    }
}

impl World {
    pub(super) fn authorize(
        &mut self,
        method: AuthMethod,
        charge_point: &ActorId,
        credential: &CredentialId,
        holder: Option<ActorId>,
        attacker: Option<String>,
        energy: Option<Kwh>,
    ) -> Result<(), FlowError> {
        self.require_role(charge_point, Role::ChargePoint)?;
        if method == AuthMethod::SignedSession {
            return Err(FlowError::Precondition(
                "signed sessions are started by the nfc_session flow".into(),
            ));
        }
        let cred = self
            .topology
            .credentials
            .get(credential)
            .cloned()
            .ok_or_else(|| FlowError::Precondition(format!("unknown credential {credential}")))?;
        let challenge = self.fresh.nonce();
        let challenge_body = Term::pair(challenge.clone(), Term::atom(charge_point.as_str()));

        let (presenter, presentation) = match &attacker {
            Some(id) => {
                if self.adversary.spec(id).is_none() {
                    return Err(FlowError::Precondition(format!("unknown attacker {id}")));
                }
                (
                    Presenter::Attacker(id.clone()),
                    self.forge_presentation(id, method, &cred, &challenge, &challenge_body),
                )
            }
            None => {
                let holder = holder.unwrap_or_else(|| cred.holder.clone());
                let presentation = honest_presentation(method, &cred, &challenge, &challenge_body)?;
                let payload = Payload::AuthorizationRequest { presentation };
                let doc = self.produce(
                    Subject::Actor(holder.clone()),
                    None,
                    &payload,
                    vec![charge_point.clone()],
                    ProtectionMode::NoProtection,
                    "json",
                )?;
                let Some(doc) = self.transmit(&holder, charge_point, doc, Medium::Nfc)? else {
                    return Ok(());
                };
                let presentation =
                    match Payload::from_fields(DocType::AuthorizationRequest, &doc.public_fields())
                    {
                        Ok(Payload::AuthorizationRequest { presentation }) => presentation,
                        _ => {
                            return Err(FlowError::Precondition(
                                "unreadable credential presentation".into(),
                            ))
                        }
                    };
                (Presenter::Holder(holder), presentation)
            }
        };

        let offline = !self.actor(charge_point)?.online;
        let decision = self.decide(
            method,
            charge_point,
            &presentation,
            &challenge,
            &challenge_body,
        )?;
        let contract = self.topology.lookup_contract(&presentation).ok().cloned();
        let presented_cred = self
            .topology
            .credential_of(&presentation)
            .map(|c| c.id.clone())
            .unwrap_or(credential.clone());
        let idx = self.emit(EventKind::AuthorizationDecision {
            charge_point: charge_point.clone(),
            mechanism: method,
            presenter: presenter.clone(),
            credential: presented_cred,
            granted: decision.granted,
            offline,
            contract: contract.as_ref().map(|c| c.contract_id.clone()),
            contract_valid: contract.as_ref().is_some_and(|c| c.valid),
            reason: decision.reason,
        });
        if decision.granted {
            let holder = match presenter {
                Presenter::Holder(h) => Some(h),
                Presenter::Attacker(_) => None,
            };
            let energy = energy.unwrap_or(Fixed3::from_int(DEFAULT_ENERGY_KWH));
            self.deliver_energy(
                charge_point,
                holder,
                contract.map(|c| c.contract_id),
                energy,
                Some(idx),
            );
        }
        Ok(())
    }

    /// The best presentation an attacker can produce from what it knows:
    /// a fresh forgery if the secret is derivable, else a recorded replay if
    /// the script allows it, else a guess.
    fn forge_presentation(
        &self,
        attacker: &str,
        method: AuthMethod,
        cred: &crate::model::Credential,
        challenge: &Term,
        challenge_body: &Term,
    ) -> CredentialPresentation {
        let kn = &self.adversary;
        let replay = self.replayable(attacker, method, &cred.id);
        let guess_uid = || format!("guess:{}", cred.id);
        match (method, &cred.kind) {
            (AuthMethod::Uid, _) => {
                let uid = cred
                    .uid()
                    .filter(|u| kn.can_derive(&Term::atom(*u)))
                    .map(str::to_string);
                CredentialPresentation::UidBroadcast {
                    uid: uid.unwrap_or_else(guess_uid),
                }
            }
            (AuthMethod::Symmetric, CredentialKind::SymmetricCard { uid, card_key }) => {
                if kn.can_derive(card_key) && kn.can_derive(&Term::atom(uid)) {
                    CredentialPresentation::SymmetricResponse {
                        uid: uid.clone(),
                        mac: mac(card_key, challenge.clone()),
                    }
                } else if let Some(p) = replay {
                    p
                } else {
                    CredentialPresentation::SymmetricResponse {
                        uid: uid.clone(),
                        mac: mac(&Term::atom("guess"), challenge.clone()),
                    }
                }
            }
            (AuthMethod::Asymmetric, CredentialKind::ContractCertificate { key, certificate }) => {
                if kn.can_derive(&key.private_part()) {
                    CredentialPresentation::AsymmetricResponse {
                        certificate: certificate.clone(),
                        signature: Term::sign(key.key_id, challenge_body.clone()),
                    }
                } else if let Some(p) = replay {
                    p
                } else {
                    CredentialPresentation::AsymmetricResponse {
                        certificate: certificate.clone(),
                        signature: Term::atom("guess"),
                    }
                }
            }
            (AuthMethod::Online, CredentialKind::OnlineCard { secret, .. }) => {
                if kn.can_derive(secret) {
                    CredentialPresentation::OnlineToken {
                        credential: cred.id.clone(),
                        token: secret.clone(),
                    }
                } else if let Some(p) = replay {
                    p
                } else {
                    CredentialPresentation::OnlineToken {
                        credential: cred.id.clone(),
                        token: Term::atom("guess"),
                    }
                }
            }
            // Mechanism and credential kind disagree; present the bare uid.
            _ => CredentialPresentation::UidBroadcast {
                uid: cred.uid().map(str::to_string).unwrap_or_else(guess_uid),
            },
        }
    }

    /// Latest recorded presentation of `credential` on a link the attacker
    /// is scripted to replay from.
    fn replayable(
        &self,
        attacker: &str,
        method: AuthMethod,
        credential: &CredentialId,
    ) -> Option<CredentialPresentation> {
        let spec = self.adversary.spec(attacker)?;
        let links: Vec<_> = spec
            .script
            .iter()
            .filter_map(|a| match a {
                AttackAction::ReplayTranscript { link } => Some(link.clone()),
                _ => None,
            })
            .collect();
        self.adversary
            .transcripts
            .iter()
            .rev()
            .filter(|(l, _)| links.contains(l))
            .find_map(|(_, doc)| {
                if doc.header.doc_type != DocType::AuthorizationRequest {
                    return None;
                }
                let Ok(Payload::AuthorizationRequest { presentation }) =
                    Payload::from_fields(DocType::AuthorizationRequest, &doc.public_fields())
                else {
                    return None;
                };
                let same_kind = matches!(
                    (method, &presentation),
                    (
                        AuthMethod::Symmetric,
                        CredentialPresentation::SymmetricResponse { .. }
                    ) | (
                        AuthMethod::Asymmetric,
                        CredentialPresentation::AsymmetricResponse { .. }
                    ) | (
                        AuthMethod::Online,
                        CredentialPresentation::OnlineToken { .. }
                    )
                );
                let same_cred = self
                    .topology
                    .credential_of(&presentation)
                    .is_some_and(|c| &c.id == credential);
                (same_kind && same_cred).then_some(presentation)
            })
    }

    fn decide(
        &mut self,
        method: AuthMethod,
        charge_point: &ActorId,
        presentation: &CredentialPresentation,
        challenge: &Term,
        challenge_body: &Term,
    ) -> Result<Decision, FlowError> {
        let cp = self.actor(charge_point)?.clone();
        let decision = match (method, presentation) {
            (AuthMethod::Uid, CredentialPresentation::UidBroadcast { uid }) => {
                let whitelisted = cp
                    .operator
                    .as_ref()
                    .and_then(|op| self.topology.uid_whitelists.get(op))
                    .is_some_and(|w| w.contains(uid));
                if whitelisted {
                    Decision::grant("uid whitelisted")
                } else {
                    Decision::deny("unknown uid")
                }
            }
            (
                AuthMethod::Symmetric,
                CredentialPresentation::SymmetricResponse {
                    uid,
                    mac: presented,
                },
            ) => match &cp.master_key {
                None => Decision::deny("charge point has no master key"),
                Some(master)
                    if mac(&kdf_diversify(master, uid), challenge.clone()) == *presented =>
                {
                    Decision::grant("mac verified")
                }
                Some(_) => Decision::deny("mac mismatch"),
            },
            (
                AuthMethod::Asymmetric,
                CredentialPresentation::AsymmetricResponse {
                    certificate,
                    signature,
                },
            ) => {
                if !self
                    .topology
                    .pki
                    .verify_chain_any(certificate, &cp.trusted_anchors)
                {
                    Decision::deny("certificate chain rejected")
                } else if !verify(
                    &Term::PubKey(certificate.public_key),
                    signature,
                    challenge_body,
                ) {
                    Decision::deny("bad challenge signature")
                } else {
                    Decision::grant("challenge signature verified")
                }
            }
            (AuthMethod::Online, CredentialPresentation::OnlineToken { .. }) => {
                if !cp.online {
                    Decision::deny("offline")
                } else {
                    self.online_check(&cp.id, cp.operator.as_ref(), presentation)?
                }
            }
            _ => Decision::deny("presentation does not match the mechanism"),
        };
        Ok(decision)
    }

    /// Round trip to the operator's backend, which holds the card secrets.
    fn online_check(
        &mut self,
        charge_point: &ActorId,
        operator: Option<&ActorId>,
        presentation: &CredentialPresentation,
    ) -> Result<Decision, FlowError> {
        let Some(cpo) = operator.cloned() else {
            return Ok(Decision::deny("no operator to ask"));
        };
        let mode = self.config.protection.default;
        let payload = Payload::AuthorizationRequest {
            presentation: presentation.clone(),
        };
        let signer = self.signer_of(charge_point);
        let request = self.produce(
            Subject::Actor(charge_point.clone()),
            signer,
            &payload,
            vec![cpo.clone()],
            mode,
            "json",
        )?;
        let Some(request) = self.transmit(charge_point, &cpo, request, Medium::Network)? else {
            return Ok(Decision::deny("no response from backend"));
        };
        let Ok(view) = self.accept(&cpo, &request, &Subject::Actor(charge_point.clone()), mode)
        else {
            return Ok(Decision::deny("backend rejected the request"));
        };
        let (granted, reason) = match Payload::from_fields(DocType::AuthorizationRequest, &view) {
            Ok(Payload::AuthorizationRequest { presentation: p }) => self.backend_verdict(&p),
            _ => (false, "malformed request".to_string()),
        };
        let response = Payload::AuthorizationResponse { granted, reason };
        let signer = self.signer_of(&cpo);
        let doc = self.produce(
            Subject::Actor(cpo.clone()),
            signer,
            &response,
            vec![charge_point.clone()],
            mode,
            "json",
        )?;
        let Some(doc) = self.transmit(&cpo, charge_point, doc, Medium::Network)? else {
            return Ok(Decision::deny("no response from backend"));
        };
        let Ok(view) = self.accept(charge_point, &doc, &Subject::Actor(cpo), mode) else {
            return Ok(Decision::deny("backend response rejected"));
        };
        Ok(
            match Payload::from_fields(DocType::AuthorizationResponse, &view) {
                Ok(Payload::AuthorizationResponse {
                    granted: true,
                    reason,
                }) => Decision {
                    granted: true,
                    reason,
                },
                Ok(Payload::AuthorizationResponse {
                    granted: false,
                    reason,
                }) => Decision::deny(reason),
                _ => Decision::deny("malformed backend response"),
            },
        )
    }

    fn backend_verdict(&self, presentation: &CredentialPresentation) -> (bool, String) {
        let CredentialPresentation::OnlineToken { credential, token } = presentation else {
            return (false, "not an online token".into());
        };
        let Some(cred) = self.topology.credentials.get(credential) else {
            return (false, "unknown credential".into());
        };
        match &cred.kind {
            CredentialKind::OnlineCard { secret, .. } if secret == token => {}
            _ => return (false, "token mismatch".into()),
        }
        match self.topology.lookup_contract(presentation) {
            Ok(c) if c.valid => (true, "token verified".into()),
            Ok(_) => (false, "contract invalid".into()),
            Err(e) => (false, e.to_string()),
        }
    }

    /// Contract a signed session description refers to, and its validity.
    pub(super) fn contract_status(
        &self,
        id: &ContractId,
    ) -> (Option<ContractId>, bool, Option<CredentialId>) {
        match self.topology.contracts.get(id) {
            Some(c) => (
                Some(c.contract_id.clone()),
                c.valid,
                Some(c.driver_credential.clone()),
            ),
            None => (None, false, None),
        }
    }
}

fn honest_presentation(
    method: AuthMethod,
    cred: &crate::model::Credential,
    challenge: &Term,
    challenge_body: &Term,
) -> Result<CredentialPresentation, FlowError> {
    let mismatch = || {
        FlowError::Precondition(format!(
            "credential {} cannot be used with {}",
            cred.id,
            method.as_str()
        ))
    };
    Ok(match (method, &cred.kind) {
        (AuthMethod::Uid, _) => CredentialPresentation::UidBroadcast {
            uid: cred.uid().ok_or_else(mismatch)?.to_string(),
        },
        (AuthMethod::Symmetric, CredentialKind::SymmetricCard { uid, card_key }) => {
            CredentialPresentation::SymmetricResponse {
                uid: uid.clone(),
                mac: mac(card_key, challenge.clone()),
            }
        }
        (AuthMethod::Asymmetric, CredentialKind::ContractCertificate { key, certificate }) => {
            CredentialPresentation::AsymmetricResponse {
                certificate: certificate.clone(),
                signature: sign(key, challenge_body.clone())
                    .map_err(|e| FlowError::Precondition(e.to_string()))?,
            }
        }
        (AuthMethod::Online, CredentialKind::OnlineCard { secret, .. }) => {
            CredentialPresentation::OnlineToken {
                credential: cred.id.clone(),
                token: secret.clone(),
            }
        }
        _ => return Err(mismatch()),
    })
}
