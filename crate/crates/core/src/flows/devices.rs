//! Flows that end at a charge point: capacity planning, firmware updates and
//! NFC session descriptions.

use crate::channel::Medium;
use crate::cli::config::AuthMethod;
use crate::crypto::{Subject, Term};
use crate::envelope::{ProtectionMode, SecuredDocument};
use crate::model::{
    ActorId, ContractId, DocType, ForecastSlot, Kw, Kwh, Payload, ProfileSlot, Role,
};
use crate::trace::{EventKind, Presenter};

use super::{FlowError, World};

/// Splits each slot's allotment equally over `points`, rounding down so the
/// sum never exceeds the allotment.
pub fn plan_profiles(
    forecast: &[ForecastSlot],
    points: &[ActorId],
    min_per_point: Option<Kw>,
) -> Result<Vec<(ActorId, Vec<ProfileSlot>)>, FlowError> {
    if points.is_empty() {
        return Err(FlowError::Precondition(
            "no charge points to plan for".into(),
        ));
    }
    let n = points.len() as u32;
    let mut per_slot = Vec::with_capacity(forecast.len());
    for slot in forecast {
        let share = slot.allotted_kw.split_floor(n);
        if let Some(min) = min_per_point {
            if share < min {
                return Err(FlowError::InfeasibleAllocation {
                    slot_start: slot.slot_start,
                    needed: Kwh::from_milli(min.milli() * i64::from(n)),
                    allotted: slot.allotted_kw,
                });
            }
        }
        per_slot.push(ProfileSlot {
            slot_start: slot.slot_start,
            limit_kw: share,
        });
    }
    Ok(points
        .iter()
        .map(|p| (p.clone(), per_slot.clone()))
        .collect())
}

impl World {
    pub(super) fn smart_charging(
        &mut self,
        dso: &ActorId,
        cpo: &ActorId,
        charge_points: &[ActorId],
        forecast: Vec<ForecastSlot>,
        min_per_point: Option<Kw>,
        mode: ProtectionMode,
    ) -> Result<(), FlowError> {
        self.require_role(dso, Role::Dso)?;
        let payload = Payload::CapacityForecast { slots: forecast };
        let signer = self.signer_of(dso);
        let doc = self.produce(
            Subject::Actor(dso.clone()),
            signer,
            &payload,
            vec![cpo.clone()],
            mode,
            "json",
        )?;
        let Some(doc) = self.send_path(&[dso.clone(), cpo.clone()], doc)? else {
            return Ok(());
        };
        let Ok(view) = self.accept(cpo, &doc, &Subject::Actor(dso.clone()), mode) else {
            return Ok(());
        };
        let Payload::CapacityForecast { slots } =
            Payload::from_fields(DocType::CapacityForecast, &view)?
        else {
            unreachable!("doc type fixes the variant")
        };
        let profiles = plan_profiles(&slots, charge_points, min_per_point)?;
        self.emit(EventKind::ProfilesPlanned {
            cpo: cpo.clone(),
            forecast: slots,
            profiles: profiles.clone(),
        });
        for (cp, slots) in profiles {
            let payload = Payload::ChargeProfile {
                charge_point: cp.clone(),
                slots,
            };
            let signer = self.signer_of(cpo);
            let doc = self.produce(
                Subject::Actor(cpo.clone()),
                signer,
                &payload,
                vec![cp.clone()],
                mode,
                "json",
            )?;
            let Some(doc) = self.send_path(&[cpo.clone(), cp.clone()], doc)? else {
                continue;
            };
            let Ok(view) = self.accept(&cp, &doc, &Subject::Actor(cpo.clone()), mode) else {
                continue;
            };
            if let Ok(Payload::ChargeProfile { slots, .. }) =
                Payload::from_fields(DocType::ChargeProfile, &view)
            {
                self.emit(EventKind::ProfileApplied {
                    charge_point: cp,
                    slots,
                });
            }
        }
        Ok(())
    }

    pub(super) fn firmware(
        &mut self,
        cpio: &ActorId,
        cpo: &ActorId,
        charge_point: &ActorId,
        version: &str,
        image: &str,
        mode: ProtectionMode,
    ) -> Result<(), FlowError> {
        let payload = Payload::FirmwareUpdate {
            version: version.to_string(),
            image_digest: Term::hash(Term::atom(image)),
        };
        let signer = self.signer_of(cpio);
        let doc = self.produce(
            Subject::Actor(cpio.clone()),
            signer,
            &payload,
            vec![charge_point.clone()],
            mode,
            "json",
        )?;
        let path = if self.topology.link_between(cpio, charge_point).is_some() {
            vec![cpio.clone(), charge_point.clone()]
        } else {
            vec![cpio.clone(), cpo.clone(), charge_point.clone()]
        };
        let Some(doc) = self.send_path(&path, doc)? else {
            return Ok(());
        };
        match self.accept(charge_point, &doc, &Subject::Actor(cpio.clone()), mode) {
            Ok(view) => {
                let digest = view
                    .iter()
                    .find(|(k, _)| k == "image_digest")
                    .map(|(_, v)| v.clone())
                    .unwrap_or_default();
                self.emit(EventKind::FirmwareInstalled {
                    charge_point: charge_point.clone(),
                    version: version.to_string(),
                    image_digest: digest,
                    verified: doc.mode() != ProtectionMode::NoProtection,
                });
            }
            Err(reason) => {
                self.emit(EventKind::FirmwareRejected {
                    charge_point: charge_point.clone(),
                    version: version.to_string(),
                    reason,
                });
            }
        }
        Ok(())
    }

    pub(super) fn nfc_session(
        &mut self,
        cpo: &ActorId,
        phone: &ActorId,
        charge_point: &ActorId,
        contract: &ContractId,
        max_energy: Kwh,
        mode: ProtectionMode,
    ) -> Result<(), FlowError> {
        self.require_role(charge_point, Role::ChargePoint)?;
        let session_id = format!("nfc-{}", self.fresh.next_u64() % 1_000_000);
        let payload = Payload::SignedSessionDescription {
            session_id,
            charge_point: charge_point.clone(),
            contract_id: contract.clone(),
            max_energy,
        };
        let signer = self.signer_of(cpo);
        let doc = self.produce(
            Subject::Actor(cpo.clone()),
            signer,
            &payload,
            vec![charge_point.clone()],
            mode,
            "json",
        )?;
        let Some(doc) = self.transmit(cpo, phone, doc, Medium::Network)? else {
            return Ok(());
        };
        let Some(doc) = self.relay(phone, charge_point, doc) else {
            return Ok(());
        };
        self.phone_seen
            .entry(phone.clone())
            .or_default()
            .push(doc.clone());
        let Some(doc) = self.transmit(phone, charge_point, doc, Medium::Nfc)? else {
            return Ok(());
        };
        let presenter = self.presenter_for(phone);
        self.redeem_session(charge_point, doc, presenter)
    }

    /// Re-presents a session description that was already used once.
    pub(super) fn nfc_replay(
        &mut self,
        charge_point: &ActorId,
        phone: Option<ActorId>,
        attacker: Option<String>,
    ) -> Result<(), FlowError> {
        let is_description =
            |d: &&SecuredDocument| d.header.doc_type == DocType::SignedSessionDescription;
        match (phone, attacker) {
            (Some(phone), None) => {
                let doc = self
                    .phone_seen
                    .get(&phone)
                    .and_then(|v| v.iter().rev().find(is_description))
                    .cloned()
                    .ok_or_else(|| {
                        FlowError::Precondition(format!(
                            "{phone} has carried no session description"
                        ))
                    })?;
                let Some(doc) = self.transmit(&phone, charge_point, doc, Medium::Nfc)? else {
                    return Ok(());
                };
                let presenter = self.presenter_for(&phone);
                self.redeem_session(charge_point, doc, presenter)
            }
            (None, Some(attacker)) => {
                let controlled = self.adversary.controlled_actors();
                let from_phone = self
                    .phone_seen
                    .iter()
                    .filter(|(p, _)| controlled.contains(*p))
                    .flat_map(|(_, v)| v.iter())
                    .rev()
                    .find(is_description);
                let tapped = self
                    .adversary
                    .transcripts
                    .iter()
                    .rev()
                    .map(|(_, d)| d)
                    .find(is_description);
                let doc = from_phone.or(tapped).cloned().ok_or_else(|| {
                    FlowError::Precondition(format!(
                        "{attacker} has no session description to replay"
                    ))
                })?;
                self.redeem_session(charge_point, doc, Presenter::Attacker(attacker))
            }
            _ => Err(FlowError::Precondition(
                "nfc_replay needs exactly one of phone or attacker".into(),
            )),
        }
    }

    fn presenter_for(&self, actor: &ActorId) -> Presenter {
        match self.adversary.controller_of(actor) {
            Some(a) => Presenter::Attacker(a.to_string()),
            None => Presenter::Holder(actor.clone()),
        }
    }

    /// The charge point checks a description and starts charging. It needs
    /// no backend connection.
    fn redeem_session(
        &mut self,
        charge_point: &ActorId,
        doc: SecuredDocument,
        presenter: Presenter,
    ) -> Result<(), FlowError> {
        let cp = self.actor(charge_point)?.clone();
        let operator = cp
            .operator
            .clone()
            .ok_or_else(|| FlowError::Precondition(format!("{charge_point} has no operator")))?;
        let offline = !cp.online;
        let decide =
            |world: &mut World, granted: bool, reason: &str, contract: Option<ContractId>| {
                let (contract, valid, credential) = match &contract {
                    Some(c) => world.contract_status(c),
                    None => (None, false, None),
                };
                let idx = world.emit(EventKind::AuthorizationDecision {
                    charge_point: charge_point.clone(),
                    mechanism: AuthMethod::SignedSession,
                    presenter: presenter.clone(),
                    credential: credential
                        .unwrap_or_else(|| crate::model::CredentialId::new("unknown")),
                    granted,
                    offline,
                    contract: contract.clone(),
                    contract_valid: valid,
                    reason: reason.to_string(),
                });
                (idx, contract)
            };
        let view = match self.accept(
            charge_point,
            &doc,
            &Subject::Actor(operator),
            self.config.protection.default,
        ) {
            Ok(v) => v,
            Err(reason) => {
                decide(self, false, &reason, None);
                return Ok(());
            }
        };
        let Ok(Payload::SignedSessionDescription {
            session_id,
            charge_point: bound,
            contract_id,
            max_energy,
        }) = Payload::from_fields(DocType::SignedSessionDescription, &view)
        else {
            decide(self, false, "malformed session description", None);
            return Ok(());
        };
        if &bound != charge_point {
            decide(
                self,
                false,
                "description is for another charge point",
                Some(contract_id),
            );
            return Ok(());
        }
        let seen = self.replay_cache.entry(charge_point.clone()).or_default();
        if !seen.insert(session_id.clone()) {
            self.emit(EventKind::ReplayRejected {
                charge_point: charge_point.clone(),
                session_id,
            });
            decide(self, false, "session already redeemed", Some(contract_id));
            return Ok(());
        }
        let (idx, contract) = decide(
            self,
            true,
            "session description accepted",
            Some(contract_id),
        );
        let holder = match &presenter {
            Presenter::Holder(h) => Some(h.clone()),
            Presenter::Attacker(_) => None,
        };
        self.deliver_energy(charge_point, holder, contract, max_energy, Some(idx));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Fixed3;
    use proptest::prelude::*;

    fn cps(n: usize) -> Vec<ActorId> {
        (0..n).map(|i| ActorId::new(format!("cp{i}"))).collect()
    }

    #[test]
    fn infeasible_when_minimums_exceed_allotment() {
        let f = [ForecastSlot {
            slot_start: 0,
            allotted_kw: Fixed3::from_int(20),
            spare_kw: Fixed3::ZERO,
        }];
        let err = plan_profiles(&f, &cps(3), Some(Fixed3::from_int(7))).unwrap_err();
        assert!(matches!(err, FlowError::InfeasibleAllocation { .. }));
        assert!(plan_profiles(&f, &cps(3), Some(Fixed3::from_milli(6_666))).is_ok());
    }

    proptest! {
        /// Per-slot sums never exceed the allotment, and flooring wastes
        /// less than one thousandth per point.
        #[test]
        fn plans_respect_allotment(allotted in prop::collection::vec(0i64..500_000, 1..6), n in 1usize..9) {
            let forecast: Vec<ForecastSlot> = allotted
                .iter()
                .enumerate()
                .map(|(i, a)| ForecastSlot { slot_start: i as i64 * 900, allotted_kw: Fixed3::from_milli(*a), spare_kw: Fixed3::ZERO })
                .collect();
            let plan = plan_profiles(&forecast, &cps(n), None).unwrap();
            for (i, slot) in forecast.iter().enumerate() {
                let sum: i64 = plan.iter().map(|(_, s)| s[i].limit_kw.milli()).sum();
                prop_assert!(sum <= slot.allotted_kw.milli());
                prop_assert!(slot.allotted_kw.milli() - sum < n as i64);
            }
        }
    }
}
