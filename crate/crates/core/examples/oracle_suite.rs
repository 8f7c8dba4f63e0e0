// Linear-Gaussian checks against brute-force re-filtering.

fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let checks = tskf::oracle::run_suite();
    for c in &checks {
        println!("{} {:<48} {:.2e}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.max_rel_error);
    }
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(format!("failed: {}", failed.join(", ")).into())
    }
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
