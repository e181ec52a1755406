use std::collections::BTreeMap;

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Adam with bias correction. Moments are keyed by parameter name so the
/// state can be checkpointed alongside the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T = f32> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    first: BTreeMap<String, Vec<T>>,
    second: BTreeMap<String, Vec<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(lr: T, (beta1, beta2): (T, T), eps: T) -> Self {
        Adam { lr, beta1, beta2, eps, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> impl Iterator<Item = (&str, &[T], &[T])> {
        self.first.iter().map(|(k, m)| (k.as_str(), m.as_slice(), self.second[k].as_slice()))
    }

    /// Restores state previously read back from [`Adam::moments`].
    pub fn restore(&mut self, step: u64, moments: impl IntoIterator<Item = (String, Vec<T>, Vec<T>)>) -> Result<()> {
        self.first.clear();
        self.second.clear();
        for (name, m, v) in moments {
            if m.len() != v.len() {
                return Err(Error::dim(format!("moment length mismatch for {name}")));
            }
            self.first.insert(name.clone(), m);
            self.second.insert(name, v);
        }
        self.step = step;
        Ok(())
    }

    /// One update of every parameter that carries a gradient. Parameters
    /// without a gradient keep their value and moments; the step counter
    /// advances regardless.
    pub fn step<'a, I>(&mut self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a String, &'a mut Tensor<T>)>,
    {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for (name, p) in params {
            let Some(g) = p.grad.take() else { continue };
            let n = p.numel();
            if g.len() != n {
                return Err(Error::dim(format!("gradient length {} for {name} of {n}", g.len())));
            }
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
            if m.len() != n || v.len() != n {
                return Err(Error::dim(format!(
                    "optimizer state for {name} has {} entries, parameter has {n}",
                    m.len()
                )));
            }
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (T::one() - self.beta1) * gi;
                *vi = self.beta2 * *vi + (T::one() - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w = *w - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
