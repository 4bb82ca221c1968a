use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// `mean((pred − truth)²) + λ·Σ b²` over the given bias vectors.
pub fn loss_on_tape(tape: &mut Tape, pred: Var, truth: Var, biases: &[Var], lambda: f64) -> Result<Var> {
    if tape.shape(pred) != tape.shape(truth) {
        return Err(Error::shape("loss", tape.shape(pred), tape.shape(truth)));
    }
    let diff = tape.sub(pred, truth)?;
    let sq = tape.mul(diff, diff)?;
    let mut total = tape.mean(sq);
    if lambda != 0.0 {
        for &b in biases {
            let b2 = tape.mul(b, b)?;
            let s = tape.sum(b2);
            let weighted = tape.scale(s, lambda);
            total = tape.add(total, weighted)?;
        }
    }
    Ok(total)
}

/// Plain-value form of [`loss_on_tape`].
pub fn loss(pred: &Tensor, truth: &Tensor, biases: &[Tensor], lambda: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let t = tape.constant(truth.clone());
    let bs: Vec<Var> = biases.iter().map(|b| tape.constant(b.clone())).collect();
    let l = loss_on_tape(&mut tape, p, t, &bs, lambda)?;
    Ok(tape.value(l).item())
}
