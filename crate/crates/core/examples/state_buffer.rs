// Ring buffer of filter snapshots and transition products.

use nalgebra::{Matrix2, Vector2};
use tskf::buffer::{BufferEntry, CircularBuffer};

fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dt = 0.1;
    // Constant-velocity model: position += velocity * dt.
    let f = Matrix2::new(1.0, dt, 0.0, 1.0);
    let mut buf = CircularBuffer::<2>::new(CircularBuffer::<2>::capacity_for(1.0, dt))?;
    let mut x = Vector2::new(0.0, 1.0);
    for step in 0..25 {
        if step > 0 {
            x = f * x;
        }
        buf.push(BufferEntry { step, x_pred: x, p_pred: Matrix2::identity(), f, q_eff: Matrix2::zeros() })?;
    }
    println!("capacity {}, holds steps {:?}..={:?}", buf.capacity(), buf.oldest(), buf.head());
    println!("step 20 position {:.2}", buf.lookup(20)?.x_pred.x);
    println!("step 5 retained: {}", buf.lookup(5).is_ok());

    // Ten steps of the model move position by velocity * 1 s.
    let phi = buf.stm_product(14, 24)?;
    println!("phi(14 -> 24) = {phi}");
    let split = buf.stm_product(19, 24)? * buf.stm_product(14, 19)?;
    println!("split product differs by {:.1e}", (phi - split).abs().max());
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
