use std::collections::BTreeMap;

use crate::error::{invalid, Result};
use crate::tensor::{NamedGradients, ParamStore};

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Bias-corrected adaptive-moment update.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(invalid(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(invalid("moment decay rates must lie in [0, 1)"));
        }
        if !(epsilon > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            epsilon,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one step with gradient `g`; parameters without an entry
    /// see a zero gradient.
    pub fn update(&mut self, store: &mut ParamStore, g: &NamedGradients) -> Result<()> {
        g.validate(store)?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let grad = g.get(&name).map(|t| t.data());
            let param = store.get_mut(id);
            let len = param.len();
            let m = self.moments.entry(name).or_insert_with(|| Moments {
                first: vec![0.0; len],
                second: vec![0.0; len],
            });
            for (j, p) in param.data_mut().iter_mut().enumerate() {
                let gj = grad.map_or(0.0, |d| d[j]);
                m.first[j] = self.beta1 * m.first[j] + (1.0 - self.beta1) * gj;
                m.second[j] = self.beta2 * m.second[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m.first[j] / c1;
                let vh = m.second[j] / c2;
                *p -= self.lr * mh / (vh.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
