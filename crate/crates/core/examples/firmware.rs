//! A firmware image swapped in transit by the operator backend, with and
//! without a vendor signature.

use evsec::cli::report::verdict_report;
use evsec::cli::runner::run_config;
use evsec::cli::suite::builtin;

fn main() {
    for name in ["firmware_signed_swap", "firmware_unsigned_swap"] {
        let out = run_config(&builtin(name).unwrap().unwrap(), None).unwrap();
        println!("== {name}");
        print!("{}", verdict_report(&out.trace, &out.verdicts));
    }
}
