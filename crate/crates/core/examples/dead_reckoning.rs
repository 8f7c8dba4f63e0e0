// Dead reckoning through the lawnmower survey with noisy gyro and DVL.
//
// The DVL measures velocity relative to the water, so the unmodeled current
// shows up as a steady drift of roughly `current * t`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tskf::models::{KinematicModel, NavState, ProcessModel};
use tskf::scenario::{generate_truth, sample_controls, ScenarioConfig, SensorSpec};

fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig { duration: 300.0, ..ScenarioConfig::default() };
    let truth = generate_truth(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let controls = sample_controls(&truth, &SensorSpec::default(), &mut rng);

    let model = KinematicModel::default();
    let mut x = truth.samples[0].state.to_vector();
    println!("{:>6} {:>10} {:>10} {:>12}", "t_s", "drift_m", "current_m", "heading_deg");
    for (k, u) in controls.iter().enumerate() {
        x = model.normalize(model.transition(&x, u, cfg.dt)?);
        let s = &truth.samples[k + 1];
        if (k + 1) % 3000 == 0 {
            let est = NavState::from_vector(&x);
            println!(
                "{:>6.0} {:>10.2} {:>10.2} {:>12.1}",
                s.time,
                (est.position - s.state.position).norm(),
                s.current.norm() * s.time,
                est.attitude.z.to_degrees()
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
