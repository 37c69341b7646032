//! SGD with momentum and the step-decay learning-rate schedule.

use super::{ParamStore, Result, TensorError};

/// `lr(t) = initial * factor^floor(t / every)`.
pub fn step_decay_lr(initial: f64, factor: f64, every: u64, step: u64) -> f64 {
    let k = step / every.max(1);
    initial * factor.powi(k as i32)
}

/// One update of every parameter in `store`:
/// `buf <- momentum * buf + grad`, `param <- param - lr * buf`.
/// Gradients are cleared afterwards.
pub fn sgd_momentum_step(store: &mut ParamStore, lr: f64, momentum: f64) -> Result<()> {
    if let Some(p) = store.params().iter().find(|p| p.tensor.grad().is_none()) {
        return Err(TensorError::MissingGrad(p.name.clone()));
    }
    for p in store.params_mut() {
        let grad = p.tensor.grad_slot().take().expect("checked above");
        for ((buf, g), w) in p
            .momentum_buffer
            .iter_mut()
            .zip(&grad)
            .zip(p.tensor.data_mut().iter_mut())
        {
            *buf = momentum * *buf + g;
            *w -= lr * *buf;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn store_with(value: f64) -> (ParamStore, crate::tensor::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::full(Shape::scalar(), value)).unwrap();
        (s, id)
    }

    #[test]
    fn plain_sgd_step() {
        let (mut s, id) = store_with(0.0);
        s.get_mut(id).tensor.set_grad(Some(vec![1.0])).unwrap();
        sgd_momentum_step(&mut s, 0.1, 0.0).unwrap();
        assert!((s.get(id).tensor.item() + 0.1).abs() < 1e-15);
        assert!(s.get(id).tensor.grad().is_none());
    }

    #[test]
    fn zero_grad_zero_buffer_is_noop() {
        let (mut s, id) = store_with(0.7);
        s.get_mut(id).tensor.set_grad(Some(vec![0.0])).unwrap();
        sgd_momentum_step(&mut s, 0.1, 0.9).unwrap();
        assert_eq!(s.get(id).tensor.item(), 0.7);
    }

    #[test]
    fn two_momentum_steps_closed_form() {
        let (mut s, id) = store_with(0.0);
        for _ in 0..2 {
            s.get_mut(id).tensor.set_grad(Some(vec![1.0])).unwrap();
            sgd_momentum_step(&mut s, 0.01, 0.9).unwrap();
        }
        // buffers 1 and 1.9, so displacement 0.01 + 0.019
        assert!((s.get(id).tensor.item() + 0.029).abs() < 1e-15);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let (mut s, _) = store_with(0.0);
        assert_eq!(
            sgd_momentum_step(&mut s, 0.1, 0.9),
            Err(TensorError::MissingGrad("p".into()))
        );
    }

    #[test]
    fn schedule_decays_every_interval() {
        assert_eq!(step_decay_lr(0.01, 0.1, 10_000, 0), 0.01);
        assert_eq!(step_decay_lr(0.01, 0.1, 10_000, 9_999), 0.01);
        assert_eq!(step_decay_lr(0.01, 0.1, 10_000, 10_000), 0.01 * 0.1);
        assert_eq!(
            step_decay_lr(0.01, 0.1, 10_000, 25_000),
            0.01 * 0.1f64.powi(2)
        );
    }
}
