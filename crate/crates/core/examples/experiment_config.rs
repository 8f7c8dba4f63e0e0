// Loading a partial TOML config, applying flag overrides, and validation errors.

use tskf::config::{ExperimentConfig, Overrides};
use tskf::harness::Algorithm;

const PARTIAL: &str = r#"
runs = 20
delay_cells = [5.0, 15.0]

[channel]
loss_probability = 0.3

[scenario]
current_velocity = [0.0, 0.3, 0.0]
"#;

fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::from_toml_str(PARTIAL, "inline")?;
    println!("file: {} runs, cells {:?}, loss {}", cfg.runs, cfg.cells(), cfg.channel.loss_probability);

    cfg.apply(&Overrides {
        delay_ceiling: Some(25.0),
        algorithms: Some(vec![Algorithm::Tskf]),
        ..Overrides::default()
    });
    cfg.validate()?;
    println!("overridden: cells {:?}, algorithms {:?}", cfg.cells(), cfg.algorithms.enabled);

    match ExperimentConfig::from_toml_str("[channel]\nloss_probability = 1.5\n", "bad").and_then(|c| c.validate()) {
        Err(e) => println!("rejected: {e}"),
        Ok(()) => return Err("out-of-range loss was accepted".into()),
    }
    match ExperimentConfig::from_toml_str("runs = 3\nrunz = 4\n", "typo") {
        Err(e) => println!("rejected: {}", e.to_string().lines().next().unwrap_or_default()),
        Ok(_) => return Err("unknown key was accepted".into()),
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
