//! Gradient evaluation over a recorded program and the central-difference oracle.

use crate::error::{contract, Result};
use crate::scalar::Real;

use super::{Tape, Tensor, Var};

/// Runs `record` on `inputs` and returns the selected scalar together with its
/// gradient with respect to every leaf, in leaf order.
pub fn evaluate_with_gradients<T: Real>(
    record: &Tape<T>,
    inputs: &[Tensor<T>],
    loss: Var,
) -> Result<(T, Vec<Tensor<T>>)> {
    let tape = record.replay(inputs)?;
    let value = tape.value(loss).item()?;
    let grads = tape.backward(loss)?;
    Ok((value, tape.leaves().into_iter().map(|v| grads.wrt(v)).collect()))
}

/// Largest `|analytic - central| / max(|analytic|, |central|, 1e-12)` over every
/// leaf coordinate.
pub fn finite_difference_check<T: Real>(
    record: &Tape<T>,
    inputs: &[Tensor<T>],
    loss: Var,
    h: T,
) -> Result<T> {
    if !(h > T::zero()) {
        return Err(contract("finite-difference step must be positive"));
    }
    let (_, analytic) = evaluate_with_gradients(record, inputs, loss)?;
    let mut probe = inputs.to_vec();
    let two_h = h + h;
    let floor = T::lit(1e-12);
    let mut worst = T::zero();
    for (t, grad) in analytic.iter().enumerate() {
        for j in 0..probe[t].len() {
            let orig = probe[t].data()[j];
            probe[t].data_mut()[j] = orig + h;
            let up = record.replay(&probe)?.value(loss).item()?;
            probe[t].data_mut()[j] = orig - h;
            let down = record.replay(&probe)?.value(loss).item()?;
            probe[t].data_mut()[j] = orig;
            let central = (up - down) / two_h;
            let a = grad.data()[j];
            let denom = a.abs().max(central.abs()).max(floor);
            worst = worst.max((a - central).abs() / denom);
        }
    }
    Ok(worst)
}
