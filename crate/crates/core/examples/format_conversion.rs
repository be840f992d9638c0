//! The same signed document converted between encodings twice: once
//! preserving the envelope and once rebuilding it.

use evsec::cli::runner::run_config;
use evsec::cli::suite::builtin;
use evsec::trace::EventKind;

fn main() {
    let out = run_config(&builtin("format_conversion").unwrap().unwrap(), None).unwrap();
    for e in &out.trace.events {
        match &e.kind {
            EventKind::FormatConverted { doc_id, from, to, lossy, verifies_before, verifies_after, .. } => println!(
                "{doc_id}: {from} -> {to} lossy={lossy} verifies {verifies_before} -> {verifies_after}"
            ),
            EventKind::Accepted { doc_id, verified, .. } => println!("{doc_id}: accepted, verified={verified}"),
            EventKind::VerificationFailed { doc_id, reason, .. } => println!("{doc_id}: rejected ({reason})"),
            _ => {}
        }
    }
}
