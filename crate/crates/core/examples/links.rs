//! Link security: static tokens on plain and secured links, client
//! certificates, and a cipher suite outside the approved list.

use evsec::cli::runner::run_config;
use evsec::cli::suite::builtin;
use evsec::verdict::SrId;

fn main() {
    for name in [
        "static_token_plain",
        "static_token_insecure_bootstrap",
        "static_token_secured",
        "client_certificates",
        "unapproved_suite",
    ] {
        let out = run_config(&builtin(name).unwrap().unwrap(), None).unwrap();
        let grade = |sr| {
            out.verdicts
                .iter()
                .find(|v| v.requirement == sr)
                .map(|v| v.grade)
                .unwrap()
        };
        println!(
            "{name:<32} SR2a {:<18} SR2b {:<18} SR3 {}",
            grade(SrId::SR2a).as_str(),
            grade(SrId::SR2b).as_str(),
            grade(SrId::SR3).as_str()
        );
    }
}
