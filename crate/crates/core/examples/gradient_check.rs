//! Finite-difference checks of every differentiable operation and of the
//! composite generator loss.

use tpa3d::diagnostics::gradient_suite;

fn main() -> tpa3d::Result<()> {
    let report = gradient_suite()?;
    for e in report.entries.iter().filter(|e| !e.passed) {
        println!("FAIL {} {:.3e} (tolerance {:.0e})", e.name, e.max_rel_err, e.tolerance);
    }
    if let Some(w) = report.worst() {
        println!("worst relative error {:.3e} at {}", w.max_rel_err, w.name);
    }
    println!(
        "{}/{} checks passed in {:.2}s",
        report.entries.iter().filter(|e| e.passed).count(),
        report.entries.len(),
        report.seconds
    );
    Ok(())
}
