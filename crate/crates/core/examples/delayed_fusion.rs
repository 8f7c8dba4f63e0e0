// Drives the buffered delayed-measurement filter by hand over a 20 s fixed-delay run.

use tskf::harness::{prepare_run, DelayCell, SimulationSetup};
use tskf::tskf::{Tskf, TskfConfig, UpdateOutcome};

fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut setup = SimulationSetup::default();
    setup.scenario.duration = 240.0;
    let inputs = prepare_run(&setup, DelayCell::Fixed(20.0), 11, 0)?;
    let dt = setup.scenario.dt;
    let noise = setup.filter.noise(dt, inputs.channel.measurement_noise_std);
    let cfg = TskfConfig { max_delay_s: inputs.channel.delay_ceiling, ..TskfConfig::default() };
    let mut f = Tskf::new(
        &inputs.truth.samples[0].state,
        setup.filter.initial_covariance(),
        noise,
        setup.measurement,
        dt,
        cfg,
    )?;

    let packets = &inputs.packets.delivered;
    let mut next = 0;
    for (k, u) in inputs.controls.iter().enumerate() {
        f.fast_predict(u)?;
        while next < packets.len() && packets[next].delivery_step <= k + 1 {
            let p = &packets[next];
            if let UpdateOutcome::Applied { delay_steps, correction_norm, nis } = f.on_measurement(p)? {
                if next % 8 == 0 {
                    let err = (f.state().position - inputs.truth.samples[k + 1].state.position).norm();
                    println!(
                        "t {:>6.1}  fix from {:>5.1} s ago  correction {correction_norm:>6.3} m  nis {nis:>5.2}  error {err:.2} m",
                        (k + 1) as f64 * dt,
                        delay_steps as f64 * dt,
                    );
                }
            }
            next += 1;
        }
    }
    let s = f.stats();
    println!("{} updates, {} rejected ({} gated)", s.updates, s.rejected, s.gated);
    let r = f.last_residual();
    let c = inputs.truth.samples.last().map(|s| s.current).unwrap_or_default();
    println!(
        "learned residual ({:.3}, {:.3}) m/s, std {:.3}; true current ({:.3}, {:.3})",
        r.mean.x,
        r.mean.y,
        r.variance.sqrt(),
        c.x,
        c.y
    );
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
