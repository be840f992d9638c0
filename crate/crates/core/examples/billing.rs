//! Charge detail records under each protection mode, falsified in storage,
//! plus removal of the contract id from a stored record.

use evsec::cli::runner::run_config;
use evsec::cli::suite::builtin;
use evsec::envelope::SecuredDocument;
use evsec::model::{build_topology, DocType};
use evsec::trace::EventKind;
use evsec::verdict::{redaction_gdpr_check, SrId};

fn main() {
    for name in [
        "cdr_unsigned_falsified",
        "cdr_whole_message_clearing_house",
        "cdr_selective_falsified",
        "billing_redaction",
    ] {
        let out = run_config(&builtin(name).unwrap().unwrap(), None).unwrap();
        let sr5 = out
            .verdicts
            .iter()
            .find(|v| v.requirement == SrId::SR5)
            .unwrap();
        println!(
            "{name:<34} SR5 {:<18} {}",
            sr5.grade.as_str(),
            sr5.explanation
        );

        let stored: Option<(_, &SecuredDocument)> =
            out.trace.events.iter().find_map(|e| match &e.kind {
                EventKind::Stored { holder, doc }
                    if doc.header.doc_type == DocType::ChargeDetailRecord =>
                {
                    Some((holder, &**doc))
                }
                _ => None,
            });
        if let Some((holder, doc)) = stored {
            let topology = build_topology(&out.trace.header.config).unwrap();
            let anchors = &topology.actors[holder].trusted_anchors;
            let r = redaction_gdpr_check(doc, "contract_id", &topology.pki, anchors);
            println!(
                "{:<34} erase contract_id: {:?} ({})",
                "", r.outcome, r.explanation
            );
        }
    }
}
