// A small seeded batch with the summary table and CSV export.

use tskf::harness::{format_table, run_batch, write_results_csv, Algorithm, DelayCell, SimulationSetup};

fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut setup = SimulationSetup::default();
    setup.scenario.duration = 120.0;
    setup.algorithms.enabled = vec![Algorithm::Ekf, Algorithm::Tskf];
    let cells = [DelayCell::Fixed(10.0), DelayCell::Fixed(20.0), DelayCell::Dynamic];
    let batch = run_batch(&setup, &cells, 3, 42, |_, _| {})?;
    print!("{}", format_table(&batch.cells));

    let mut csv = Vec::new();
    write_results_csv(&mut csv, &batch.cells)?;
    println!("\n{}", String::from_utf8(csv)?);
    println!("seeds {:?}", batch.seeds);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
