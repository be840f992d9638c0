//! Tariff distribution, charge detail records and signed meter readings.

use crate::cli::config::{Conversion, MeterSigner};
use crate::crypto::Subject;
use crate::envelope::{format_convert, verify_document, ProtectionMode};
use crate::model::{
    default_tariff, tariff_entry_labels, ActorId, ChargeDetailRecord, CredentialId, Fixed3, Money,
    Payload, TariffEntry,
};
use crate::trace::EventKind;

use super::{FlowError, World, DEFAULT_ENERGY_KWH};

/// Price billed when the driver never selected a rate.
pub const DEFAULT_PRICE_MILLI: i64 = 300;

/// Encoding meter readings are signed in at the vehicle.
const FIELD_ENCODING: &str = "exi";
/// Encoding used between backends.
const BACKEND_ENCODING: &str = "json";

impl World {
    fn route(&self, cpo: &ActorId, emsp: &ActorId) -> Result<Vec<ActorId>, FlowError> {
        self.topology.billing_route(cpo, emsp).ok_or_else(|| {
            FlowError::Precondition(format!("no billing route from {cpo} to {emsp}"))
        })
    }

    pub(super) fn tariff(
        &mut self,
        emsp: &ActorId,
        cpo: &ActorId,
        charge_point: &ActorId,
        ev: &ActorId,
        mode: ProtectionMode,
        entries: Option<Vec<TariffEntry>>,
    ) -> Result<(), FlowError> {
        let payload = Payload::TariffTable {
            entries: entries.unwrap_or_else(default_tariff),
        };
        let signer = self.signer_of(emsp);
        let doc = self.produce(
            Subject::Actor(emsp.clone()),
            signer,
            &payload,
            vec![ev.clone()],
            mode,
            BACKEND_ENCODING,
        )?;
        let mut path = self.route(cpo, emsp)?;
        path.reverse();
        path.push(charge_point.clone());
        path.push(ev.clone());
        let Some(doc) = self.send_path(&path, doc)? else {
            return Ok(());
        };
        let Ok(view) = self.accept(ev, &doc, &Subject::Actor(emsp.clone()), mode) else {
            return Ok(());
        };

        // Cheapest readable entry; ties go to the lowest index.
        let price_of = |i: u32| {
            view.iter()
                .find(|(k, _)| k == &format!("entries.{i}.price_per_kwh"))
                .and_then(|(_, v)| v.parse::<Money>().ok())
        };
        let best = tariff_entry_labels(&view)
            .into_iter()
            .filter_map(|i| price_of(i).map(|p| (p, i)))
            .min()
            .ok_or_else(|| FlowError::Precondition("tariff offers no readable price".into()))?;
        let (price, index) = best;
        let session_id = self
            .charge_sessions
            .iter()
            .rev()
            .find(|s| s.holder.as_ref() == Some(ev))
            .map(|s| s.session_id.clone())
            .unwrap_or_else(|| format!("pending:{}", doc.header.doc_id));
        self.emit(EventKind::RateSelected {
            ev: ev.clone(),
            session_id: session_id.clone(),
            entry_index: index,
            price_per_kwh: price,
        });
        self.rates.insert(ev.clone(), price);

        let reply = Payload::SelectedRate {
            session_id,
            entry_index: index,
        };
        let signer = self.signer_of(ev);
        let reply = self.produce(
            Subject::Actor(ev.clone()),
            signer,
            &reply,
            vec![emsp.clone()],
            mode,
            BACKEND_ENCODING,
        )?;
        path.reverse();
        let Some(reply) = self.send_path(&path, reply)? else {
            return Ok(());
        };
        let _ = self.accept(emsp, &reply, &Subject::Actor(ev.clone()), mode);
        Ok(())
    }

    pub(super) fn cdr(
        &mut self,
        cpo: &ActorId,
        emsp: &ActorId,
        via: Option<&ActorId>,
        mode: ProtectionMode,
    ) -> Result<(), FlowError> {
        let operated = |cp: &ActorId| {
            self.topology
                .actors
                .get(cp)
                .and_then(|a| a.operator.as_ref())
                == Some(cpo)
        };
        let pos = self
            .charge_sessions
            .iter()
            .rposition(|s| !s.billed && s.contract.is_some() && operated(&s.charge_point))
            .ok_or_else(|| {
                FlowError::Precondition(format!("no unbilled session at a {cpo} charge point"))
            })?;
        self.charge_sessions[pos].billed = true;
        let session = self.charge_sessions[pos].clone();
        let price = session
            .holder
            .as_ref()
            .and_then(|h| self.rates.get(h).copied())
            .unwrap_or(Fixed3::from_milli(DEFAULT_PRICE_MILLI));
        let location = self.actor(&session.charge_point)?.location.clone();
        let record = ChargeDetailRecord {
            cdr_id: format!("cdr-{}", session.session_id),
            contract_id: session.contract.clone().expect("filtered above"),
            location,
            start_time: session.start,
            end_time: session.end,
            energy: session.energy,
            cost: session.energy * price,
        };
        let payload = Payload::ChargeDetailRecord(record);
        let signer = self.signer_of(cpo);
        let doc = self.produce(
            Subject::Actor(cpo.clone()),
            signer,
            &payload,
            vec![emsp.clone()],
            mode,
            BACKEND_ENCODING,
        )?;
        let path = match via {
            Some(v) => vec![cpo.clone(), v.clone(), emsp.clone()],
            None => self.route(cpo, emsp)?,
        };
        let Some(doc) = self.send_path(&path, doc)? else {
            return Ok(());
        };
        match self.accept(emsp, &doc, &Subject::Actor(cpo.clone()), mode) {
            Ok(_) => {
                self.stores
                    .entry(emsp.clone())
                    .or_default()
                    .push(doc.clone());
                self.emit(EventKind::Stored {
                    holder: emsp.clone(),
                    doc: Box::new(doc),
                });
            }
            Err(reason) => {
                self.emit(EventKind::Quarantined {
                    holder: emsp.clone(),
                    doc_id: doc.header.doc_id.clone(),
                    reason,
                });
            }
        }
        Ok(())
    }

    /// Someone with write access to the store edits the latest record.
    pub(super) fn falsify_stored(
        &mut self,
        holder: &ActorId,
        field: &str,
        value: &str,
    ) -> Result<(), FlowError> {
        let doc = self
            .stores
            .get_mut(holder)
            .and_then(|s| s.last_mut())
            .ok_or_else(|| FlowError::Precondition(format!("{holder} stores no records")))?;
        doc.tamper_set(field, value)?;
        let snapshot = doc.clone();
        self.emit(EventKind::Falsified {
            holder: holder.clone(),
            doc_id: snapshot.header.doc_id.clone(),
            field: field.to_string(),
            snapshot: Box::new(snapshot),
        });
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn meter_reading(
        &mut self,
        signer: MeterSigner,
        ev: &ActorId,
        charge_point: &ActorId,
        cpo: &ActorId,
        emsp: &ActorId,
        credential: Option<&CredentialId>,
        conversion: Conversion,
        mode: ProtectionMode,
    ) -> Result<(), FlowError> {
        let (subject, keys, origin) = match signer {
            MeterSigner::Ev => (Subject::Actor(ev.clone()), self.signer_of(ev), ev.clone()),
            MeterSigner::ChargePoint => (
                Subject::Actor(charge_point.clone()),
                self.signer_of(charge_point),
                charge_point.clone(),
            ),
            MeterSigner::Card => {
                let id = credential.ok_or_else(|| {
                    FlowError::Precondition("card signer needs a credential".into())
                })?;
                let cred =
                    self.topology.credentials.get(id).ok_or_else(|| {
                        FlowError::Precondition(format!("unknown credential {id}"))
                    })?;
                let keys = cred.signing.clone();
                if keys.is_none() && mode != ProtectionMode::NoProtection {
                    return Err(FlowError::Precondition(format!(
                        "credential {id} cannot sign"
                    )));
                }
                (Subject::Credential(id.clone()), keys, cred.holder.clone())
            }
        };
        let value = self
            .charge_sessions
            .iter()
            .rev()
            .find(|s| &s.charge_point == charge_point)
            .map(|s| s.energy)
            .unwrap_or(Fixed3::from_int(DEFAULT_ENERGY_KWH));
        let payload = Payload::MeterReading {
            meter_id: format!("meter:{charge_point}"),
            timestamp: self.now,
            value,
        };
        let doc = self.produce(
            subject.clone(),
            keys,
            &payload,
            vec![emsp.clone()],
            mode,
            FIELD_ENCODING,
        )?;

        let mut field_path = vec![];
        if origin != *charge_point {
            field_path.push(origin);
        }
        field_path.push(charge_point.clone());
        field_path.push(cpo.clone());
        let Some(mut doc) = self.send_path(&field_path, doc)? else {
            return Ok(());
        };

        if conversion != Conversion::None {
            let anchors = self.actor(emsp)?.trusted_anchors.clone();
            let lossy = conversion == Conversion::Lossy;
            let converted = format_convert(&doc, FIELD_ENCODING, BACKEND_ENCODING, lossy);
            self.emit(EventKind::FormatConverted {
                at: cpo.clone(),
                doc_id: doc.header.doc_id.clone(),
                from: FIELD_ENCODING.into(),
                to: BACKEND_ENCODING.into(),
                lossy,
                verifies_before: verify_document(&doc, &self.topology.pki, &anchors).is_ok(),
                verifies_after: verify_document(&converted, &self.topology.pki, &anchors).is_ok(),
            });
            doc = converted;
        }

        let backend_path = self.route(cpo, emsp)?;
        if let Some(next) = backend_path.get(1).cloned() {
            doc = match self.relay(cpo, &next, doc) {
                Some(d) => d,
                None => return Ok(()),
            };
        }
        let Some(doc) = self.send_path(&backend_path, doc)? else {
            return Ok(());
        };
        let _ = self.accept(emsp, &doc, &subject, mode);
        Ok(())
    }
}
