//! A phone redeems a signed session over NFC while an attacker listens on
//! the air link. Prints the trace events of the session.

use evsec::cli::runner::run_config;
use evsec::cli::suite::builtin;

fn main() {
    let out = run_config(&builtin("nfc_session").unwrap().unwrap(), None).unwrap();
    for e in &out.trace.events {
        println!("#{:<3} {}", e.index, e.kind.name());
    }
    for v in &out.verdicts {
        println!("{:<5} {}", v.requirement.as_str(), v.grade);
    }
}
