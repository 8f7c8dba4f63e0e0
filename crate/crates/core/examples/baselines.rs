// Every estimator on one shared run.

use tskf::harness::{run_single, Algorithm, DelayCell, RunOptions, SimulationSetup};

fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut setup = SimulationSetup::default();
    setup.scenario.duration = 180.0;
    setup.algorithms.enabled = Algorithm::ALL.to_vec();
    for cell in [DelayCell::Fixed(10.0), DelayCell::Fixed(30.0)] {
        let run = run_single(&setup, cell, 5, 0, RunOptions::default())?;
        println!("delay {:?}", cell);
        for m in &run.metrics {
            println!(
                "  {:<8} rmse {:>7.2} m  {:>8.4} ms/step{}",
                m.algorithm.id(),
                m.rmse_m,
                m.step_time_ms_mean,
                if m.diverged { "  diverged" } else { "" }
            );
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
