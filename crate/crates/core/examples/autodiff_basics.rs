//! Records a small computation on a tape and reads back values and gradients.
//!
//! cargo run --example autodiff_basics

use sgraf::{Axis, Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.0, -0.5]));
    let w = tape.param(Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.3, 0.2, 0.1]));

    // softmax attention over the rows of x, then a sum
    let logits = tape.matmul_nt(x, w)?;
    let probs = tape.softmax(logits, Axis::Cols);
    let mixed = tape.matmul(probs, x)?;
    let act = tape.tanh(mixed);
    let loss = tape.sum(act);
    tape.backward(loss)?;

    println!("loss   {:.6}", tape.value(loss).item());
    println!("probs  {:?}", tape.value(probs).data());
    println!("dL/dx  {:?}", tape.grad(x).unwrap());
    println!("dL/dw  {:?}", tape.grad(w).unwrap());
    Ok(())
}
