//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use fbe_cli::criteria;

fn main() {
    // libtest flags such as `--nocapture` or filters are accepted and ignored
    let list_only = std::env::args().any(|a| a == "--list");
    if list_only {
        for (k, t) in criteria::TITLES.iter().enumerate() {
            println!("AC-{}: {t}: test", k + 1);
        }
        return;
    }
    let start = std::time::Instant::now();
    let outcomes = criteria::run_all(0, |o| println!("{}", o.line()));
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    println!(
        "acceptance: {} passed, {} failed in {:.1?}",
        outcomes.len() - failed.len(),
        failed.len(),
        start.elapsed()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
