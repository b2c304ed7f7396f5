//! The conformance criteria on every bundled scenario.
//!
//! Same report as `sea check --preset NAME`. The square-root-perception
//! variant is the negative control and is expected to fail some criteria.

use sea_thermo::cli::{self, Status};

fn main() {
    for preset in cli::PRESETS {
        let cfg = cli::preset(preset.name).expect("bundled presets parse");
        match cli::cmd_check(&cfg, None) {
            Ok(report) => {
                println!("{} ({:?})", report.name, report.model);
                for c in &report.criteria {
                    let tag = match c.status {
                        Status::Pass => "pass",
                        Status::Fail => "FAIL",
                        Status::ProbeOnly => "probe",
                        Status::NotApplicable => "n/a",
                    };
                    println!("  {:>5} {} {}", tag, c.id, c.title);
                }
            }
            Err(e) => println!("{}: {e}", preset.name),
        }
    }
}
