//! Writes a trace, re-grades it from disk, then shows that an edited copy
//! is refused.

use evsec::cli::runner::{run_config, verify_trace, write_trace};
use evsec::cli::suite::builtin;

fn main() {
    let dir = std::env::temp_dir().join(format!("evsec-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("trace.jsonl");

    let out = run_config(
        &builtin("tariff_filter_unprotected").unwrap().unwrap(),
        None,
    )
    .unwrap();
    write_trace(&out.trace, &path).unwrap();
    let again = verify_trace(&path).unwrap();
    println!(
        "{} events, same verdicts after reload: {}",
        again.trace.events.len(),
        again.verdicts == out.verdicts
    );

    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(
        &path,
        text.replacen("\"granted\":true", "\"granted\":false", 1),
    )
    .unwrap();
    match verify_trace(&path) {
        Ok(_) => println!("edited trace accepted"),
        Err(e) => println!("edited trace refused: {e}"),
    }
    std::fs::remove_dir_all(&dir).unwrap();
}
