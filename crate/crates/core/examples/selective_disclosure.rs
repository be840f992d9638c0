//! Protects a tariff table directly with the envelope API: prices readable
//! only by the EV, every other field disclosed. Then shows what each party
//! sees, that redaction keeps the signature valid, and that tampering does not.

use std::collections::BTreeMap;

use evsec::cli::suite::builtin;
use evsec::crypto::{Fresh, Subject};
use evsec::envelope::{
    open_for, protect, redact, verify_document, ConfidentialityPolicy, Producer, ProtectionMode,
};
use evsec::model::{build_topology, default_tariff, ActorId, Payload};

fn main() {
    let config = builtin("honest_all_secured").unwrap().unwrap();
    let topology = build_topology(&config).unwrap();
    let emsp = &topology.actors[&ActorId::new("emsp1")];
    let ev = &topology.actors[&ActorId::new("ev1")];
    let cpo = &topology.actors[&ActorId::new("cpo1")];

    let entries = default_tariff();
    let mut policy: ConfidentialityPolicy = BTreeMap::new();
    for i in 0..entries.len() {
        policy.insert(
            format!("entries.{i}.price_per_kwh"),
            vec![(ev.id.clone(), ev.key_material[0].key_id)],
        );
    }
    let producer = Producer {
        subject: Subject::Actor(emsp.id.clone()),
        key: Some(&emsp.key_material[0]),
        certificate: Some(&emsp.certificates[0]),
    };
    let mut fresh = Fresh::new(42);
    let doc = protect(
        &producer,
        "tariff-1",
        &Payload::TariffTable { entries },
        vec![ev.id.clone()],
        ProtectionMode::SelectiveDisclosure,
        &policy,
        "json",
        &mut fresh,
    )
    .unwrap();

    println!(
        "verifies for the EV: {:?}",
        verify_document(&doc, &topology.pki, &ev.trusted_anchors)
    );
    let price = "entries.0.price_per_kwh";
    for reader in [ev, cpo] {
        let fields = open_for(&doc, &reader.id, &reader.key_material);
        let seen = fields
            .iter()
            .find(|(k, _)| k == price)
            .map(|(_, v)| v.as_str());
        println!("{} reads {price}: {:?}", reader.id, seen);
    }

    let redacted = redact(&doc, "entries.0.slot_start").unwrap();
    println!(
        "after redaction: {:?}",
        verify_document(&redacted, &topology.pki, &ev.trusted_anchors).is_ok()
    );

    let mut tampered = doc.clone();
    tampered
        .tamper_set("entries.0.max_power_kw", "99.000")
        .unwrap();
    match verify_document(&tampered, &topology.pki, &ev.trusted_anchors) {
        Ok(_) => println!("tampered copy verifies"),
        Err(e) => println!("tampered copy rejected: {e}"),
    }
}
