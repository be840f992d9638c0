//! Capacity forecasts from the grid operator, honest and inflated in transit,
//! checked against the profiles the charge points actually applied.

use evsec::cli::report::check_report;
use evsec::cli::runner::run_config;
use evsec::cli::suite::builtin;
use evsec::verdict::congestion_check;

fn main() {
    for name in ["smart_charging_honest", "smart_charging_inflated"] {
        let out = run_config(&builtin(name).unwrap().unwrap(), None).unwrap();
        println!("{name}: {}", check_report(&congestion_check(&out.trace)));
    }
}
