//! Helpers for the acceptance suite: verdict bookkeeping and regime maps over gap sweeps.

use std::fmt::Write;

use crosswalk_core::{Mode, TrialResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub id: u32,
    pub title: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    /// One line: `criterion <id> <title>: PASS|FAIL (<detail>)`.
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {}: {} ({})",
            self.id,
            self.title,
            if self.pass { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

#[derive(Debug, Default)]
pub struct Report {
    pub verdicts: Vec<Verdict>,
}

impl Report {
    /// Records and immediately prints a verdict.
    pub fn record(&mut self, id: u32, title: &str, pass: bool, detail: impl Into<String>) {
        let v = Verdict {
            id,
            title: title.to_string(),
            pass,
            detail: detail.into(),
        };
        println!("{}", v.line());
        self.verdicts.push(v);
    }

    pub fn failed(&self) -> Vec<u32> {
        self.verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect()
    }
}

/// Behavior class of one trial in a gap sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Never left Driving.
    PureDriving,
    /// First interaction mode entered.
    Interaction(Mode),
}

impl Regime {
    pub fn of(result: &TrialResult) -> Regime {
        match result.mode_sequence().into_iter().find(|&m| m != Mode::Driving) {
            Some(m) => Regime::Interaction(m),
            None => Regime::PureDriving,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Regime::PureDriving => "Driving",
            Regime::Interaction(m) => m.name(),
        }
    }
}

/// Maximal runs of equal regimes over gaps sorted ascending: `(regime, first_gap, last_gap)`.
pub fn regime_runs(points: &[(f64, Regime)]) -> Vec<(Regime, f64, f64)> {
    let mut runs: Vec<(Regime, f64, f64)> = Vec::new();
    for &(g, r) in points {
        match runs.last_mut() {
            Some(last) if last.0 == r => last.2 = g,
            _ => runs.push((r, g, g)),
        }
    }
    runs
}

/// CSV rendering of regime runs; the golden file stores exactly this text.
pub fn runs_csv(runs: &[(Regime, f64, f64)]) -> String {
    let mut out = String::from("regime,first_gap_s,last_gap_s\n");
    for (r, lo, hi) in runs {
        let _ = writeln!(out, "{},{lo},{hi}", r.label());
    }
    out
}
