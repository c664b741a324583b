//! First-order adaptive-moment optimizer, keyed by parameter name so its
//! state serializes alongside the model for exact resume.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::elem::{c, Elem};

/// Conventional defaults; the learning rate comes from the run config.
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

pub struct Adam<F: Elem> {
    pub lr: f64,
    t: u64,
    m: BTreeMap<String, ArrayD<F>>,
    v: BTreeMap<String, ArrayD<F>>,
}

impl<F: Elem> Adam<F> {
    pub fn new(lr: f64) -> Self {
        Adam { lr, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// Rebuilds an optimizer mid-run from serialized moments.
    pub fn restore(lr: f64, t: u64, m: BTreeMap<String, ArrayD<F>>, v: BTreeMap<String, ArrayD<F>>) -> Self {
        Adam { lr, t, m, v }
    }

    /// Step counter and both moment maps, for serialization.
    pub fn snapshot(&self) -> (u64, &BTreeMap<String, ArrayD<F>>, &BTreeMap<String, ArrayD<F>>) {
        (self.t, &self.m, &self.v)
    }

    /// Advances the shared step counter; call once per batch, before any
    /// `apply` for that batch.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Updates one parameter in place from its (batch-averaged) gradient.
    pub fn apply(&mut self, name: &str, param: &mut ArrayD<F>, grad: &ArrayD<F>) {
        assert!(self.t > 0, "begin_step must run before apply");
        assert_eq!(param.shape(), grad.shape(), "gradient shape mismatch for {name}");
        let m = self.m.entry(name.to_string()).or_insert_with(|| ArrayD::zeros(param.raw_dim()));
        let v = self.v.entry(name.to_string()).or_insert_with(|| ArrayD::zeros(param.raw_dim()));

        let b1 = c::<F>(BETA1);
        let b2 = c::<F>(BETA2);
        let ob1 = c::<F>(1.0 - BETA1);
        let ob2 = c::<F>(1.0 - BETA2);
        let corr1 = c::<F>(1.0 / (1.0 - BETA1.powi(self.t as i32)));
        let corr2 = c::<F>(1.0 / (1.0 - BETA2.powi(self.t as i32)));
        let lr = c::<F>(self.lr);
        let eps = c::<F>(EPS);

        ndarray::Zip::from(param).and(grad).and(m).and(v).for_each(|p, &g, m, v| {
            *m = b1 * *m + ob1 * g;
            *v = b2 * *v + ob2 * g * g;
            let mhat = *m * corr1;
            let vhat = *v * corr2;
            *p = *p - lr * mhat / (vhat.sqrt() + eps);
        });
    }
}
