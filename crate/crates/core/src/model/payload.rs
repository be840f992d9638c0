//! Application-layer payloads and their flat field encoding.
//!
//! Every payload flattens into an ordered list of `(name, value)` pairs.
//! The envelope layer commits to, signs and redacts those fields one by one,
//! so the encoding here is the unit of end-to-end protection.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ActorId, ContractId, CredentialId, Fixed3, Kw, Kwh, Money};
use crate::crypto::{Certificate, Term};

/// Seconds since the Unix epoch.
pub type Timestamp = i64;

/// Capacity forecasts are issued on quarter-hour boundaries.
pub const SLOT_SECONDS: Timestamp = 15 * 60;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CredentialPresentation {
    /// Plaintext card UID; carries no secret.
    UidBroadcast {
        uid: String,
    },
    SymmetricResponse {
        uid: String,
        mac: Term,
    },
    AsymmetricResponse {
        certificate: Box<Certificate>,
        signature: Term,
    },
    OnlineToken {
        credential: CredentialId,
        token: Term,
    },
}

impl CredentialPresentation {
    pub fn term(&self) -> Term {
        match self {
            CredentialPresentation::UidBroadcast { uid } => Term::atom(uid),
            CredentialPresentation::SymmetricResponse { uid, mac } => {
                Term::pair(Term::atom(uid), mac.clone())
            }
            CredentialPresentation::AsymmetricResponse {
                certificate,
                signature,
            } => Term::pair(
                Term::pair(
                    Term::atom(certificate.id.as_str()),
                    Term::PubKey(certificate.public_key),
                ),
                signature.clone(),
            ),
            CredentialPresentation::OnlineToken { credential, token } => {
                Term::pair(Term::atom(credential.as_str()), token.clone())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TariffEntry {
    pub slot_start: Timestamp,
    pub slot_end: Timestamp,
    pub price_per_kwh: Money,
    pub max_power_kw: Kw,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastSlot {
    pub slot_start: Timestamp,
    pub allotted_kw: Kw,
    #[serde(default)]
    pub spare_kw: Kw,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileSlot {
    pub slot_start: Timestamp,
    pub limit_kw: Kw,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargeDetailRecord {
    pub cdr_id: String,
    pub contract_id: ContractId,
    pub location: String,
    pub start_time: Timestamp,
    pub end_time: Timestamp,
    pub energy: Kwh,
    pub cost: Money,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DocType {
    AuthorizationRequest,
    AuthorizationResponse,
    ChargeDetailRecord,
    TariffTable,
    SelectedRate,
    MeterReading,
    CapacityForecast,
    ChargeProfile,
    FirmwareUpdate,
    SignedSessionDescription,
}

impl DocType {
    pub fn as_str(self) -> &'static str {
        match self {
            DocType::AuthorizationRequest => "AuthorizationRequest",
            DocType::AuthorizationResponse => "AuthorizationResponse",
            DocType::ChargeDetailRecord => "ChargeDetailRecord",
            DocType::TariffTable => "TariffTable",
            DocType::SelectedRate => "SelectedRate",
            DocType::MeterReading => "MeterReading",
            DocType::CapacityForecast => "CapacityForecast",
            DocType::ChargeProfile => "ChargeProfile",
            DocType::FirmwareUpdate => "FirmwareUpdate",
            DocType::SignedSessionDescription => "SignedSessionDescription",
        }
    }

    /// Records that feed the billing process and must survive at rest.
    pub fn is_billing(self) -> bool {
        matches!(self, DocType::ChargeDetailRecord)
    }
}

impl fmt::Display for DocType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Payload {
    AuthorizationRequest {
        presentation: CredentialPresentation,
    },
    AuthorizationResponse {
        granted: bool,
        reason: String,
    },
    ChargeDetailRecord(ChargeDetailRecord),
    TariffTable {
        entries: Vec<TariffEntry>,
    },
    SelectedRate {
        session_id: String,
        entry_index: u32,
    },
    MeterReading {
        meter_id: String,
        timestamp: Timestamp,
        value: Kwh,
    },
    CapacityForecast {
        slots: Vec<ForecastSlot>,
    },
    ChargeProfile {
        charge_point: ActorId,
        slots: Vec<ProfileSlot>,
    },
    FirmwareUpdate {
        version: String,
        image_digest: Term,
    },
    SignedSessionDescription {
        session_id: String,
        charge_point: ActorId,
        contract_id: ContractId,
        max_energy: Kwh,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PayloadError {
    #[error("missing field {0}")]
    Missing(String),
    #[error("invalid value for field {0}")]
    Invalid(String),
    #[error("unexpected field {0}")]
    Unexpected(String),
    #[error("payload invariant violated: {0}")]
    Invariant(String),
}

pub type Fields = Vec<(String, String)>;

impl Payload {
    pub fn doc_type(&self) -> DocType {
        match self {
            Payload::AuthorizationRequest { .. } => DocType::AuthorizationRequest,
            Payload::AuthorizationResponse { .. } => DocType::AuthorizationResponse,
            Payload::ChargeDetailRecord(_) => DocType::ChargeDetailRecord,
            Payload::TariffTable { .. } => DocType::TariffTable,
            Payload::SelectedRate { .. } => DocType::SelectedRate,
            Payload::MeterReading { .. } => DocType::MeterReading,
            Payload::CapacityForecast { .. } => DocType::CapacityForecast,
            Payload::ChargeProfile { .. } => DocType::ChargeProfile,
            Payload::FirmwareUpdate { .. } => DocType::FirmwareUpdate,
            Payload::SignedSessionDescription { .. } => DocType::SignedSessionDescription,
        }
    }

    pub fn validate(&self) -> Result<(), PayloadError> {
        match self {
            Payload::ChargeDetailRecord(cdr) => {
                if cdr.end_time < cdr.start_time {
                    return Err(PayloadError::Invariant("CDR ends before it starts".into()));
                }
                if cdr.energy.is_negative() || cdr.cost.is_negative() {
                    return Err(PayloadError::Invariant(
                        "CDR energy and cost must be non-negative".into(),
                    ));
                }
            }
            Payload::CapacityForecast { slots } => {
                if let Some(s) = slots
                    .iter()
                    .find(|s| s.slot_start.rem_euclid(SLOT_SECONDS) != 0)
                {
                    return Err(PayloadError::Invariant(format!(
                        "forecast slot at {} is not on a 15-minute boundary",
                        s.slot_start
                    )));
                }
            }
            Payload::TariffTable { entries }
                if entries
                    .iter()
                    .any(|e| e.slot_end < e.slot_start || e.price_per_kwh.is_negative()) =>
            {
                return Err(PayloadError::Invariant("malformed tariff entry".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Flattens to ordered, uniquely named fields.
    pub fn fields(&self) -> Fields {
        let mut out = Fields::new();
        let mut put = |k: String, v: String| out.push((k, v));
        match self {
            Payload::AuthorizationRequest { presentation } => {
                put("presentation".into(), to_json(presentation));
            }
            Payload::AuthorizationResponse { granted, reason } => {
                put("granted".into(), granted.to_string());
                put("reason".into(), reason.clone());
            }
            Payload::ChargeDetailRecord(cdr) => {
                put("cdr_id".into(), cdr.cdr_id.clone());
                put("contract_id".into(), cdr.contract_id.to_string());
                put("location".into(), cdr.location.clone());
                put(
                    "period".into(),
                    format!("{}..{}", cdr.start_time, cdr.end_time),
                );
                put("energy".into(), cdr.energy.to_string());
                put("cost".into(), cdr.cost.to_string());
            }
            Payload::TariffTable { entries } => {
                for (i, e) in entries.iter().enumerate() {
                    put(format!("entries.{i}.slot_start"), e.slot_start.to_string());
                    put(format!("entries.{i}.slot_end"), e.slot_end.to_string());
                    put(
                        format!("entries.{i}.price_per_kwh"),
                        e.price_per_kwh.to_string(),
                    );
                    put(
                        format!("entries.{i}.max_power_kw"),
                        e.max_power_kw.to_string(),
                    );
                }
            }
            Payload::SelectedRate {
                session_id,
                entry_index,
            } => {
                put("session_id".into(), session_id.clone());
                put("entry_index".into(), entry_index.to_string());
            }
            Payload::MeterReading {
                meter_id,
                timestamp,
                value,
            } => {
                put("meter_id".into(), meter_id.clone());
                put("timestamp".into(), timestamp.to_string());
                put("value".into(), value.to_string());
            }
            Payload::CapacityForecast { slots } => {
                for (i, s) in slots.iter().enumerate() {
                    put(format!("slots.{i}.slot_start"), s.slot_start.to_string());
                    put(format!("slots.{i}.allotted_kw"), s.allotted_kw.to_string());
                    put(format!("slots.{i}.spare_kw"), s.spare_kw.to_string());
                }
            }
            Payload::ChargeProfile {
                charge_point,
                slots,
            } => {
                put("charge_point".into(), charge_point.to_string());
                for (i, s) in slots.iter().enumerate() {
                    put(format!("slots.{i}.slot_start"), s.slot_start.to_string());
                    put(format!("slots.{i}.limit_kw"), s.limit_kw.to_string());
                }
            }
            Payload::FirmwareUpdate {
                version,
                image_digest,
            } => {
                put("version".into(), version.clone());
                put("image_digest".into(), to_json(image_digest));
            }
            Payload::SignedSessionDescription {
                session_id,
                charge_point,
                contract_id,
                max_energy,
            } => {
                put("session_id".into(), session_id.clone());
                put("charge_point".into(), charge_point.to_string());
                put("contract_id".into(), contract_id.to_string());
                put("max_energy".into(), max_energy.to_string());
            }
        }
        out
    }

    /// Rebuilds a payload from fields. Indexed lists may have gaps (entries
    /// dropped in transit); they are returned in index order.
    pub fn from_fields(
        doc_type: DocType,
        fields: &[(String, String)],
    ) -> Result<Payload, PayloadError> {
        let mut map = FieldMap::new(fields)?;
        let payload = match doc_type {
            DocType::AuthorizationRequest => Payload::AuthorizationRequest {
                presentation: map.json("presentation")?,
            },
            DocType::AuthorizationResponse => Payload::AuthorizationResponse {
                granted: map.parse("granted")?,
                reason: map.take("reason")?,
            },
            DocType::ChargeDetailRecord => {
                let period = map.take("period")?;
                let (start, end) = period
                    .split_once("..")
                    .ok_or_else(|| PayloadError::Invalid("period".into()))?;
                Payload::ChargeDetailRecord(ChargeDetailRecord {
                    cdr_id: map.take("cdr_id")?,
                    contract_id: ContractId::new(map.take("contract_id")?),
                    location: map.take("location")?,
                    start_time: start
                        .parse()
                        .map_err(|_| PayloadError::Invalid("period".into()))?,
                    end_time: end
                        .parse()
                        .map_err(|_| PayloadError::Invalid("period".into()))?,
                    energy: map.parse("energy")?,
                    cost: map.parse("cost")?,
                })
            }
            DocType::TariffTable => {
                let mut entries = Vec::new();
                for i in map.indices("entries") {
                    let p = format!("entries.{i}");
                    entries.push(TariffEntry {
                        slot_start: map.parse(&format!("{p}.slot_start"))?,
                        slot_end: map.parse(&format!("{p}.slot_end"))?,
                        price_per_kwh: map.parse(&format!("{p}.price_per_kwh"))?,
                        max_power_kw: map.parse(&format!("{p}.max_power_kw"))?,
                    });
                }
                Payload::TariffTable { entries }
            }
            DocType::SelectedRate => Payload::SelectedRate {
                session_id: map.take("session_id")?,
                entry_index: map.parse("entry_index")?,
            },
            DocType::MeterReading => Payload::MeterReading {
                meter_id: map.take("meter_id")?,
                timestamp: map.parse("timestamp")?,
                value: map.parse("value")?,
            },
            DocType::CapacityForecast => {
                let mut slots = Vec::new();
                for i in map.indices("slots") {
                    let p = format!("slots.{i}");
                    slots.push(ForecastSlot {
                        slot_start: map.parse(&format!("{p}.slot_start"))?,
                        allotted_kw: map.parse(&format!("{p}.allotted_kw"))?,
                        spare_kw: map.parse(&format!("{p}.spare_kw"))?,
                    });
                }
                Payload::CapacityForecast { slots }
            }
            DocType::ChargeProfile => {
                let charge_point = ActorId::new(map.take("charge_point")?);
                let mut slots = Vec::new();
                for i in map.indices("slots") {
                    let p = format!("slots.{i}");
                    slots.push(ProfileSlot {
                        slot_start: map.parse(&format!("{p}.slot_start"))?,
                        limit_kw: map.parse(&format!("{p}.limit_kw"))?,
                    });
                }
                Payload::ChargeProfile {
                    charge_point,
                    slots,
                }
            }
            DocType::FirmwareUpdate => Payload::FirmwareUpdate {
                version: map.take("version")?,
                image_digest: map.json("image_digest")?,
            },
            DocType::SignedSessionDescription => Payload::SignedSessionDescription {
                session_id: map.take("session_id")?,
                charge_point: ActorId::new(map.take("charge_point")?),
                contract_id: ContractId::new(map.take("contract_id")?),
                max_energy: map.parse("max_energy")?,
            },
        };
        map.finish()?;
        Ok(payload)
    }
}

/// Symbolic content carried inside a field value, for fields that embed
/// terms as JSON.
pub fn embedded_term(doc_type: DocType, name: &str, value: &str) -> Option<Term> {
    match (doc_type, name) {
        (DocType::AuthorizationRequest, "presentation") => {
            serde_json::from_str::<CredentialPresentation>(value)
                .ok()
                .map(|p| p.term())
        }
        (DocType::FirmwareUpdate, "image_digest") => serde_json::from_str::<Term>(value).ok(),
        _ => None,
    }
}

/// Index labels of a tariff table's entries as they appear in `fields`.
pub fn tariff_entry_labels(fields: &[(String, String)]) -> Vec<u32> {
    let mut labels: Vec<u32> = fields
        .iter()
        .filter_map(|(k, _)| list_index(k, "entries"))
        .collect();
    labels.sort_unstable();
    labels.dedup();
    labels
}

fn list_index(name: &str, list: &str) -> Option<u32> {
    let rest = name.strip_prefix(list)?.strip_prefix('.')?;
    rest.split('.').next()?.parse().ok()
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("payload terms always serialize")
}

struct FieldMap {
    values: BTreeMap<String, String>,
}

impl FieldMap {
    fn new(fields: &[(String, String)]) -> Result<Self, PayloadError> {
        let mut values = BTreeMap::new();
        for (k, v) in fields {
            if values.insert(k.clone(), v.clone()).is_some() {
                return Err(PayloadError::Unexpected(format!("duplicate {k}")));
            }
        }
        Ok(FieldMap { values })
    }

    fn take(&mut self, name: &str) -> Result<String, PayloadError> {
        self.values
            .remove(name)
            .ok_or_else(|| PayloadError::Missing(name.to_string()))
    }

    fn parse<T: std::str::FromStr>(&mut self, name: &str) -> Result<T, PayloadError> {
        self.take(name)?
            .parse()
            .map_err(|_| PayloadError::Invalid(name.to_string()))
    }

    fn json<T: for<'de> Deserialize<'de>>(&mut self, name: &str) -> Result<T, PayloadError> {
        serde_json::from_str(&self.take(name)?).map_err(|_| PayloadError::Invalid(name.to_string()))
    }

    fn indices(&self, list: &str) -> Vec<u32> {
        let mut idx: Vec<u32> = self
            .values
            .keys()
            .filter_map(|k| list_index(k, list))
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    fn finish(self) -> Result<(), PayloadError> {
        match self.values.into_keys().next() {
            Some(k) => Err(PayloadError::Unexpected(k)),
            None => Ok(()),
        }
    }
}

/// Default three-entry tariff used when a scenario does not supply one.
pub fn default_tariff() -> Vec<TariffEntry> {
    let slot = |i: i64, price: i64, power: i64| TariffEntry {
        slot_start: 1_700_000_000 + i * 3600,
        slot_end: 1_700_000_000 + (i + 1) * 3600,
        price_per_kwh: Fixed3::from_milli(price),
        max_power_kw: Fixed3::from_int(power),
    };
    vec![slot(0, 250, 11), slot(1, 300, 22), slot(2, 450, 50)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cdr() -> Payload {
        Payload::ChargeDetailRecord(ChargeDetailRecord {
            cdr_id: "cdr-1".into(),
            contract_id: ContractId::new("c1"),
            location: "Utrecht, Stationsplein".into(),
            start_time: 100,
            end_time: 200,
            energy: Fixed3::from_milli(12_500),
            cost: Fixed3::from_milli(3_750),
        })
    }

    #[test]
    fn cdr_has_six_fields() {
        let names: Vec<String> = cdr().fields().into_iter().map(|(k, _)| k).collect();
        assert_eq!(
            names,
            [
                "cdr_id",
                "contract_id",
                "location",
                "period",
                "energy",
                "cost"
            ]
        );
    }

    #[test]
    fn tolerates_gaps_in_lists() {
        let table = Payload::TariffTable {
            entries: default_tariff(),
        };
        let fields: Fields = table
            .fields()
            .into_iter()
            .filter(|(k, _)| !k.starts_with("entries.1."))
            .collect();
        let Payload::TariffTable { entries } =
            Payload::from_fields(DocType::TariffTable, &fields).unwrap()
        else {
            panic!("wrong type");
        };
        assert_eq!(
            entries,
            vec![default_tariff()[0].clone(), default_tariff()[2].clone()]
        );
        assert_eq!(tariff_entry_labels(&fields), vec![0, 2]);
    }

    #[test]
    fn partial_entry_is_missing_field() {
        let table = Payload::TariffTable {
            entries: default_tariff(),
        };
        let fields: Fields = table
            .fields()
            .into_iter()
            .filter(|(k, _)| k != "entries.1.price_per_kwh")
            .collect();
        assert_eq!(
            Payload::from_fields(DocType::TariffTable, &fields),
            Err(PayloadError::Missing("entries.1.price_per_kwh".into()))
        );
    }

    #[test]
    fn invariants() {
        let bad = Payload::CapacityForecast {
            slots: vec![ForecastSlot {
                slot_start: 901,
                allotted_kw: Fixed3::from_int(10),
                spare_kw: Fixed3::ZERO,
            }],
        };
        assert!(bad.validate().is_err());
        let Payload::ChargeDetailRecord(mut rec) = cdr() else {
            unreachable!()
        };
        rec.end_time = 50;
        assert!(Payload::ChargeDetailRecord(rec).validate().is_err());
        assert!(cdr().validate().is_ok());
    }

    #[test]
    fn unexpected_field_is_rejected() {
        let mut fields = cdr().fields();
        fields.push(("colour".into(), "blue".into()));
        assert_eq!(
            Payload::from_fields(DocType::ChargeDetailRecord, &fields),
            Err(PayloadError::Unexpected("colour".into()))
        );
    }

    fn arb_payload() -> impl Strategy<Value = Payload> {
        let fixed = (0i64..1_000_000).prop_map(Fixed3::from_milli);
        prop_oneof![
            (any::<bool>(), "[a-z ]{0,12}")
                .prop_map(|(granted, reason)| Payload::AuthorizationResponse { granted, reason }),
            (
                "[a-z0-9-]{1,8}",
                "[A-Za-z ,]{0,16}",
                0i64..10_000,
                0i64..10_000,
                fixed.clone(),
                fixed.clone()
            )
                .prop_map(|(id, loc, a, b, energy, cost)| Payload::ChargeDetailRecord(
                    ChargeDetailRecord {
                        cdr_id: id,
                        contract_id: ContractId::new("c9"),
                        location: loc,
                        start_time: a.min(b),
                        end_time: a.max(b),
                        energy,
                        cost,
                    }
                )),
            prop::collection::vec((0i64..96, fixed.clone(), fixed.clone()), 0..5).prop_map(|v| {
                Payload::CapacityForecast {
                    slots: v
                        .into_iter()
                        .map(|(i, a, s)| ForecastSlot {
                            slot_start: i * SLOT_SECONDS,
                            allotted_kw: a,
                            spare_kw: s,
                        })
                        .collect(),
                }
            }),
            prop::collection::vec((0i64..10_000, fixed.clone(), fixed), 0..5).prop_map(|v| {
                Payload::TariffTable {
                    entries: v
                        .into_iter()
                        .map(|(t, p, m)| TariffEntry {
                            slot_start: t,
                            slot_end: t + 60,
                            price_per_kwh: p,
                            max_power_kw: m,
                        })
                        .collect(),
                }
            }),
            "[a-z0-9]{1,8}".prop_map(|uid| Payload::AuthorizationRequest {
                presentation: CredentialPresentation::UidBroadcast { uid }
            }),
            ("[0-9.]{1,6}", "[a-z]{1,6}").prop_map(|(version, img)| Payload::FirmwareUpdate {
                version,
                image_digest: Term::hash(Term::atom(img)),
            }),
        ]
    }

    proptest! {
        #[test]
        fn fields_round_trip(p in arb_payload()) {
            let back = Payload::from_fields(p.doc_type(), &p.fields()).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
