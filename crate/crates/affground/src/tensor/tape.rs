//! Thread-local computation tape.
//!
//! Every differentiable op pushes one node recording its inputs, its output
//! and a closure that maps the output gradient to per-input gradients.
//! `backward` replays nodes in exact reverse execution order, accumulating
//! into each tensor's grad slot, then clears the tape.

use std::cell::RefCell;

use super::Tensor;
use crate::error::{Error, Result};

/// Maps (grad of output, inputs) to one optional gradient per input.
/// `wants[i]` tells the closure which inputs actually need a gradient.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[Tensor], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    inputs: Vec<Tensor>,
    output: Tensor,
    backward: BackwardFn,
}

struct TapeState {
    nodes: Vec<Node>,
    enabled: bool,
}

thread_local! {
    static TAPE: RefCell<TapeState> = RefCell::new(TapeState { nodes: Vec::new(), enabled: true });
}

/// True when recording is enabled and at least one input requires grad.
pub(crate) fn should_record(inputs: &[&Tensor]) -> bool {
    TAPE.with(|t| t.borrow().enabled) && inputs.iter().any(|t| t.needs_grad())
}

pub(crate) fn record(inputs: Vec<Tensor>, output: Tensor, backward: BackwardFn) {
    TAPE.with(|t| {
        t.borrow_mut().nodes.push(Node { inputs, output, backward });
    });
}

/// Run `f` with gradient recording disabled on this thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = TAPE.with(|t| {
        let mut s = t.borrow_mut();
        let prev = s.enabled;
        s.enabled = false;
        prev
    });
    let out = f();
    TAPE.with(|t| t.borrow_mut().enabled = prev);
    out
}

pub fn tape_len() -> usize {
    TAPE.with(|t| t.borrow().nodes.len())
}

pub fn tape_is_empty() -> bool {
    tape_len() == 0
}

pub(crate) fn backward(loss: &Tensor) -> Result<()> {
    if !loss.is_scalar() {
        return Err(Error::Shape(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    let nodes = TAPE.with(|t| std::mem::take(&mut t.borrow_mut().nodes));
    if nodes.is_empty() {
        return Err(Error::Autograd("backward on an empty tape".into()));
    }

    loss.accumulate_grad(&[1.0]);

    for node in nodes.iter().rev() {
        let gout = match node.output.grad() {
            Some(g) => g,
            None => continue, // did not contribute to the loss
        };
        let wants: Vec<bool> = node.inputs.iter().map(Tensor::needs_grad).collect();
        let grads = (node.backward)(&gout, &node.inputs, &wants);
        debug_assert_eq!(grads.len(), node.inputs.len());
        for ((input, grad), wanted) in node.inputs.iter().zip(grads).zip(&wants) {
            if let (true, Some(g)) = (*wanted, grad) {
                input.accumulate_grad(&g);
            }
        }
    }

    // Fail fast on numeric blow-ups instead of silently training on NaNs.
    for node in &nodes {
        for t in node.inputs.iter().chain(std::iter::once(&node.output)) {
            if let Some(g) = t.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Autograd(format!(
                        "non-finite gradient for tensor {} with shape {:?}",
                        t.id(),
                        t.shape()
                    )));
                }
            }
        }
    }
    Ok(())
}
