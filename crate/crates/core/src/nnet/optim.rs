use super::param::{Param, Parameters};
use crate::error::{Error, Result};

/// One momentum-SGD update: `v <- momentum * v + grad; p <- p - lr * v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Shape(format!(
            "sgd: params {} grads {} velocity {}",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Applies accumulated gradients to every trainable parameter.
    pub fn step(&mut self, model: &mut dyn Parameters) -> Result<()> {
        let mut i = 0;
        let mut err = None;
        let (lr, momentum) = (self.lr, self.momentum);
        let velocity = &mut self.velocity;
        model.visit("", &mut |_, p: &mut Param| {
            if !p.trainable || err.is_some() {
                return;
            }
            if velocity.len() <= i {
                velocity.push(vec![0.0; p.value.len()]);
            }
            let Param { value, grad, .. } = p;
            if let Err(e) = sgd_step(value.data_mut(), grad.data(), &mut velocity[i], lr, momentum) {
                err = Some(e);
            }
            i += 1;
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}
