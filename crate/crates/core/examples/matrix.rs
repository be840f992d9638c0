//! Runs the full configuration matrix and prints it as a table.

use evsec::cli::report::matrix_table;
use evsec::cli::suite::{diff_against, run_matrix, EXPECTED_MATRIX};

fn main() {
    let rows = run_matrix().unwrap();
    print!("{}", matrix_table(&rows));
    let diff = diff_against(&rows, EXPECTED_MATRIX).unwrap();
    println!(
        "{} rows, {} cells differ from scenarios/expected_matrix.tsv",
        rows.len(),
        diff.len()
    );
}
