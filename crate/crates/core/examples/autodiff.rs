//! Building a small graph by hand and reading gradients back.

use lstsd::autodiff::Tape;
use lstsd::tensor::Tensor;

fn main() -> lstsd::Result<()> {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]])?);
    let w = tape.leaf(Tensor::from_rows(&[vec![0.2, -0.1, 0.4], vec![0.3, 0.8, -0.5]])?);
    let b = tape.leaf(Tensor::new(vec![3], vec![0.0, 0.1, -0.1])?);

    let h = tape.matmul(x, w)?;
    let z = tape.add_bias(h, b)?;
    let ce = tape.cross_entropy(z, &[2, 0])?;
    let teacher = Tensor::from_rows(&[vec![0.1, 0.2, 0.7], vec![0.6, 0.3, 0.1]])?;
    let kl = tape.kl_divergence(z, &teacher, 2.0)?;
    let weighted = tape.scale(kl, 4.0);
    let loss = tape.add(ce, weighted)?;

    println!("logits {:?}", tape.value(z).data());
    println!("loss   {:.6}", tape.value(loss).item()?);
    let mut grads = tape.backward(loss)?;
    println!("dL/dW  {:?}", grads.take(w).expect("w is a leaf").data());
    println!("dL/db  {:?}", grads.take(b).expect("b is a leaf").data());
    Ok(())
}
