//! Card authorization under the four mechanisms, each against its typical
//! attacker. Prints the unauthorized-charging verdict for each scenario.

use evsec::cli::runner::run_config;
use evsec::cli::suite::builtin;
use evsec::verdict::SrId;

fn main() {
    for name in [
        "weak_uid_cloning",
        "symmetric_cr_replay",
        "symmetric_master_extraction",
        "asymmetric_cr_card_read",
        "online_auth_injected_grant",
        "online_auth_offline",
    ] {
        let config = builtin(name).unwrap().unwrap();
        let out = run_config(&config, None).unwrap();
        println!("{name}");
        for v in out
            .verdicts
            .iter()
            .filter(|v| matches!(v.requirement, SrId::SR1a | SrId::SR1c))
        {
            println!(
                "  {:<5} {:<18} {}",
                v.requirement.as_str(),
                v.grade.as_str(),
                v.explanation
            );
        }
    }
}
