//! Runner for the acceptance suite: one PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

/// Result of one criterion.
pub struct Outcome {
    pub passed: bool,
    pub detail: String,
    /// Extra lines printed under the verdict.
    pub notes: Vec<String>,
}

impl Outcome {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
            notes: Vec::new(),
        }
    }

    pub fn note(mut self, line: impl Into<String>) -> Self {
        self.notes.push(line.into());
        self
    }
}

#[derive(Default)]
pub struct Suite {
    results: Vec<(String, bool)>,
    filter: Vec<String>,
}

impl Suite {
    /// `ALKGP_ACCEPTANCE` (comma-separated) restricts the run to criteria
    /// whose names contain one of its entries.
    pub fn from_env() -> Self {
        let filter = std::env::var("ALKGP_ACCEPTANCE").unwrap_or_default();
        Self {
            results: Vec::new(),
            filter: filter.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
        }
    }

    pub fn run(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        if !self.filter.is_empty() && !self.filter.iter().any(|f| name.contains(f.as_str())) {
            return;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Outcome::new(false, format!("error: {msg}"))
        });
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {name}: {} [{:.1}s]", outcome.detail, start.elapsed().as_secs_f64());
        for n in &outcome.notes {
            println!("     {n}");
        }
        self.results.push((name.to_string(), outcome.passed));
    }

    /// Prints the tally and exits non-zero when anything failed.
    pub fn finish(self) -> ! {
        let failed: Vec<&str> = self.results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
        println!(
            "\nacceptance: {} passed, {} failed",
            self.results.len() - failed.len(),
            failed.len()
        );
        if !failed.is_empty() {
            println!("failed: {}", failed.join(", "));
        }
        std::process::exit(if failed.is_empty() { 0 } else { 1 });
    }
}
