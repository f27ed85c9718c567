use ndarray::{Array, Dimension, Zip};
use serde::{Deserialize, Serialize};

use super::dense::{DenseNet, LayerGrads, NetGrads};
use crate::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First and second moment estimates for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: NetGrads,
    pub v: NetGrads,
    pub t: u64,
}

impl AdamState {
    pub fn new(net: &DenseNet) -> Self {
        Self {
            m: NetGrads::zeros_like(net),
            v: NetGrads::zeros_like(net),
            t: 0,
        }
    }
}

/// A network with its optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub net: DenseNet,
    pub moments: AdamState,
}

impl TrainState {
    pub fn new(net: DenseNet) -> Self {
        let moments = AdamState::new(&net);
        Self { net, moments }
    }

    pub fn steps(&self) -> u64 {
        self.moments.t
    }

    /// One Adam update. Non-finite gradients abort without touching the
    /// parameters.
    pub fn optimizer_step(&mut self, grads: &NetGrads, adam: &Adam) -> Result<()> {
        check_shapes(&self.net, grads)?;
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::Divergence(format!("non-finite gradient in {name}")));
        }
        self.moments.t += 1;
        let t = self.moments.t as i32;
        let c1 = 1.0 - adam.beta1.powi(t);
        let c2 = 1.0 - adam.beta2.powi(t);
        let upd = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = adam.beta1 * *m + (1.0 - adam.beta1) * g;
            *v = adam.beta2 * *v + (1.0 - adam.beta2) * g * g;
            *p -= adam.lr * (*m / c1) / ((*v / c2).sqrt() + adam.eps);
        };
        let layers = self.net.layers_mut();
        for (i, layer) in layers.iter_mut().enumerate() {
            let g = &grads.layers[i];
            let m = &mut self.moments.m.layers[i];
            let v = &mut self.moments.v.layers[i];
            apply(&mut layer.weight, &g.weight, &mut m.weight, &mut v.weight, upd);
            apply(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias, upd);
            if let Some(bn) = layer.norm.as_mut() {
                let (gs, gh) = (g.scale.as_ref().expect("checked"), g.shift.as_ref().expect("checked"));
                apply(&mut bn.scale, gs, m.scale.as_mut().expect("matching"), v.scale.as_mut().expect("matching"), upd);
                apply(&mut bn.shift, gh, m.shift.as_mut().expect("matching"), v.shift.as_mut().expect("matching"), upd);
            }
        }
        Ok(())
    }
}

fn apply<D: Dimension>(
    p: &mut Array<f64, D>,
    g: &Array<f64, D>,
    m: &mut Array<f64, D>,
    v: &mut Array<f64, D>,
    f: impl Fn(&mut f64, f64, &mut f64, &mut f64),
) {
    Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| f(p, g, m, v));
}

fn check_shapes(net: &DenseNet, grads: &NetGrads) -> Result<()> {
    let ok = net.layers().len() == grads.layers.len()
        && net.layers().iter().zip(&grads.layers).all(|(l, g): (_, &LayerGrads)| {
            l.weight.dim() == g.weight.dim()
                && l.bias.len() == g.bias.len()
                && l.norm.is_some() == g.scale.is_some()
                && l.norm.is_some() == g.shift.is_some()
        });
    if ok {
        Ok(())
    } else {
        Err(Error::Shape("gradients do not match the network".into()))
    }
}
