// Sliding-window GP regression of a heading-dependent velocity residual.

use nalgebra::{SVector, Vector3};
use tskf::gp::{GpHyperparams, GpWindow};

type X = SVector<f64, 2>;

fn residual(heading: f64) -> Vector3<f64> {
    Vector3::new(0.2 + 0.05 * heading.cos(), 0.1 + 0.05 * heading.sin(), 0.0)
}

fn feature(heading: f64) -> X {
    X::new(heading.cos(), heading.sin())
}

fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let hp = GpHyperparams { sigma_f: 0.3, length_scale: 1.0, sigma_n: 0.02 };
    let mut gp = GpWindow::<2>::new(20, hp)?;
    let prior = gp.predict(&feature(0.0));
    println!("empty window: mean {:?}, std {:.3}", prior.mean.as_slice(), prior.variance.sqrt());

    // Only the newest 20 of 40 samples are kept.
    for i in 0..40 {
        let h = i as f64 * 0.3;
        gp.observe(feature(h), residual(h));
    }
    println!("window holds {} samples", gp.len());
    println!("{:>8} {:>18} {:>18} {:>8}", "heading", "mean (n, e)", "truth (n, e)", "std");
    for deg in [0.0f64, 90.0, 180.0, 270.0] {
        let h = deg.to_radians();
        let p = gp.predict(&feature(h));
        let t = residual(h);
        println!("{deg:>8.0} {:>8.4} {:>9.4} {:>8.4} {:>9.4} {:>8.4}", p.mean.x, p.mean.y, t.x, t.y, p.variance.sqrt());
    }
    let far = gp.predict(&X::new(5.0, 5.0));
    println!("far from the data the std returns to {:.3} (sigma_f {})", far.variance.sqrt(), hp.sigma_f);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
