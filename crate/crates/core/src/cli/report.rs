//! Plain-text rendering of verdicts, checks and the matrix.

use std::fmt::Write;

use crate::cli::suite::MatrixRow;
use crate::trace::{EventKind, Trace};
use crate::verdict::{CheckReport, SrId, Verdict};

pub fn verdict_report(trace: &Trace, verdicts: &[Verdict]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "scenario {} (seed {}, {} events)",
        trace.header.scenario,
        trace.header.seed,
        trace.events.len()
    );
    for v in verdicts {
        let _ = write!(
            out,
            "  {:<5} {:<19} {}",
            v.requirement.as_str(),
            v.grade.as_str(),
            v.explanation
        );
        if !v.witnesses.is_empty() {
            let w: Vec<String> = v.witnesses.iter().map(|i| format!("#{i}")).collect();
            let _ = write!(out, " [{}]", w.join(" "));
        }
        out.push('\n');
    }
    for e in &trace.events {
        if let EventKind::StepFailed {
            failed_step: step,
            flow,
            error,
        } = &e.kind
        {
            let _ = writeln!(out, "  note: step {step} ({flow}) failed: {error}");
        }
    }
    out
}

pub fn check_report(r: &CheckReport) -> String {
    let mut line = format!("{}: {:?} ({})", r.check, r.outcome, r.explanation);
    if !r.witnesses.is_empty() {
        let w: Vec<String> = r.witnesses.iter().map(|i| format!("#{i}")).collect();
        line.push_str(&format!(" [{}]", w.join(" ")));
    }
    line
}

/// Fixed-width table; the TSV form is in [`crate::cli::suite::to_tsv`].
pub fn matrix_table(rows: &[MatrixRow]) -> String {
    let abbreviate = |g: &str| match g {
        "Holds" => "H",
        "ConditionallyHolds" => "CH",
        "Violated" => "V",
        "NotExercised" => "-",
        _ => "?",
    };
    let mut out = String::new();
    let _ = write!(
        out,
        "{:<11}{:<12}{:<19}{:<10}{:<13}",
        "auth", "link", "client_auth", "protect", "attacker"
    );
    for sr in SrId::ALL {
        let _ = write!(out, "{:<5}", sr.as_str());
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{:<11}{:<12}{:<19}{:<10}{:<13}",
            r.key.auth.as_str(),
            r.key.link_mode.as_str(),
            r.key.client_auth.as_str(),
            r.key.protection.as_str(),
            r.key.attacker.as_str()
        );
        for sr in SrId::ALL {
            let _ = write!(
                out,
                "{:<5}",
                abbreviate(r.grades.get(&sr).map(|g| g.as_str()).unwrap_or("?"))
            );
        }
        out.push('\n');
    }
    out.push_str("H = Holds, CH = ConditionallyHolds, V = Violated, - = NotExercised\n");
    out
}
