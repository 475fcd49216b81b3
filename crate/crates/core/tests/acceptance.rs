//! Acceptance run at the full desk configuration. Prints one line per
//! criterion and exits non-zero if a blocking criterion fails. The markdown
//! report is written next to the test binaries.

use std::process::ExitCode;
use std::time::Instant;

use dr_core::lab::{LabConfig, Report, Session};

fn main() -> ExitCode {
    let start = Instant::now();
    let cfg = LabConfig::full();
    let mut session = match Session::new(cfg) {
        Ok(s) => s,
        Err(e) => {
            println!("acceptance setup: FAIL ({e})");
            return ExitCode::FAILURE;
        }
    };
    println!(
        "teacher {} val acc {:.2}% ({:.1}s)",
        session.lab.cfg.teacher_arch,
        session.lab.teacher_acc * 100.0,
        session.lab.teacher_secs
    );
    let mut outcomes = Vec::new();
    let mut failed = false;
    for id in 1..=8 {
        match session.criterion(id) {
            Ok(o) => {
                println!("criterion {id} ({}): {}: {} [{:.1}s]", o.title, o.status(), o.summary, o.secs);
                failed |= o.blocking && !o.passed;
                outcomes.push(o);
            }
            Err(e) => {
                println!("criterion {id}: FAIL (error: {e})");
                failed = true;
            }
        }
    }
    let report = Report {
        config: session.lab.cfg.clone(),
        teacher_acc: session.lab.teacher_acc,
        teacher_secs: session.lab.teacher_secs,
        outcomes,
        total_secs: start.elapsed().as_secs_f64(),
    };
    let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-report.md");
    if std::fs::write(&path, report.to_markdown()).is_ok() {
        println!("report written to {}", path.display());
    }
    println!("acceptance total {:.1}s", report.total_secs);
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
