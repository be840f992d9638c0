//! Tampering with a stored trace is detected on load.

use proptest::prelude::*;

use evsec::cli::runner::run_config;
use evsec::cli::suite::builtin;
use evsec::trace::{Trace, TraceError};

fn jsonl() -> String {
    run_config(&builtin("cdr_unsigned_falsified").unwrap().unwrap(), None)
        .unwrap()
        .trace
        .to_jsonl()
}

#[test]
fn untouched_trace_loads() {
    assert!(Trace::from_jsonl(&jsonl()).is_ok());
}

#[test]
fn dropping_the_completion_record_is_reported() {
    let text = jsonl();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.pop();
    let err = Trace::from_jsonl(&lines.join("\n")).unwrap_err();
    assert!(matches!(err, TraceError::IncompleteTrace), "{err}");
}

#[test]
fn editing_a_value_breaks_the_chain() {
    let original = jsonl();
    let text = original.replacen("\"granted\":true", "\"granted\":false", 1);
    assert_ne!(text, original);
    assert!(matches!(
        Trace::from_jsonl(&text),
        Err(TraceError::CorruptTrace(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn removing_or_swapping_any_line_is_detected(a in 0usize..1000, b in 0usize..1000, swap in any::<bool>()) {
        let text = jsonl();
        let mut lines: Vec<&str> = text.lines().collect();
        let n = lines.len();
        let (a, b) = (a % n, b % n);
        if swap {
            prop_assume!(a != b && lines[a] != lines[b]);
            lines.swap(a, b);
        } else {
            // Removing the last line is the incomplete-trace case.
            prop_assume!(a != n - 1);
            lines.remove(a);
        }
        prop_assert!(Trace::from_jsonl(&lines.join("\n")).is_err());
    }
}
