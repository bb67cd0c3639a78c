//! Prints one PASS/FAIL line per acceptance criterion, followed by the
//! individual checks. Exits with status 1 if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

fn main() -> ExitCode {
    let verbose = !std::env::args().any(|a| a == "--brief");
    let mut failed = 0;
    for run in tpqi_acceptance::CRITERIA {
        let start = Instant::now();
        let c = run();
        let verdict = if c.passed() { "PASS" } else { "FAIL" };
        if !c.passed() {
            failed += 1;
        }
        println!(
            "criterion {:>2} {verdict}  {} ({:.1} s)",
            c.number,
            c.title,
            start.elapsed().as_secs_f64()
        );
        if verbose {
            for check in &c.checks {
                let mark = if check.passed { "ok  " } else { "FAIL" };
                println!("    {mark} {}: {}", check.name, check.detail);
            }
        }
    }
    println!("{} of 10 criteria pass", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
