//! Printer over the library's self-check suites: one line per case,
//! a summary line, and reproduction info for the first failure.

use pathint::verify::{fk_suite, lq_suite, ratio_suite, SuiteReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Ratio,
    Fk,
    Lq,
}

/// Default battery sizes; chosen to finish in seconds while matching
/// the scales the library's own tests gate at.
pub fn run_suite(which: Suite) -> SuiteReport {
    match which {
        Suite::Ratio => ratio_suite(1000, 12345),
        Suite::Fk => fk_suite(100_000, 2024),
        Suite::Lq => lq_suite(50, 11),
    }
}

pub fn print_report(report: &SuiteReport) {
    for (i, err) in report.case_errors.iter().enumerate() {
        println!("case {i:4}: {} {err:.3e}", report.metric);
    }
    println!("{}", report.summary_line());
    if let Some(first) = report.failures.first() {
        println!("reproduce: {first}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_run_small() {
        let r = ratio_suite(5, 1);
        assert!(r.passed());
        assert_eq!(r.case_errors.len(), 5);
        let l = lq_suite(3, 1);
        assert!(l.passed());
    }
}
