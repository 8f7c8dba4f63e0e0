// Packet loss and distance-driven delay over one survey.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tskf::channel::{simulate_channel, ChannelConfig};
use tskf::models::MeasurementMode;
use tskf::scenario::{generate_truth, ScenarioConfig};

fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::default();
    let truth = generate_truth(&cfg)?;
    let channel = ChannelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trace = simulate_channel(&truth, cfg.dt, &channel, &MeasurementMode::Position, &mut rng)?;

    let delays: Vec<f64> = trace.records.iter().filter_map(|r| r.delay_s).collect();
    let mean = delays.iter().sum::<f64>() / delays.len() as f64;
    println!(
        "{} broadcasts, loss {:.1}%, delay {:.2}..{:.2} s (mean {mean:.2})",
        trace.records.len(),
        100.0 * trace.loss_rate(),
        delays.iter().copied().fold(f64::INFINITY, f64::min),
        delays.iter().copied().fold(0.0, f64::max),
    );
    println!("{:>4} {:>8} {:>10} {:>8}", "seq", "gen_s", "dist_m", "delay_s");
    for r in trace.records.iter().step_by(12) {
        let d = r.delay_s.map_or("lost".to_string(), |d| format!("{d:.2}"));
        println!("{:>4} {:>8.1} {:>10.1} {:>8}", r.seq, r.gen_time, r.distance_m, d);
    }

    // A fixed-delay cell snaps every packet to the same latency.
    let fixed = channel.with_fixed_delay(20.0);
    let trace = simulate_channel(&truth, cfg.dt, &fixed, &MeasurementMode::Position, &mut rng)?;
    let first = &trace.delivered[0];
    println!(
        "fixed cell: packet {} generated at step {}, delivered {} steps later",
        first.seq,
        first.gen_step,
        first.delay_steps()
    );
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
