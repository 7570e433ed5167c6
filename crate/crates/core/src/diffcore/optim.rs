//! Named parameters, Adam, and the cosine-annealing learning-rate schedule.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::diag::Diagnostics;
use crate::math;

/// A trainable tensor with its Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let n = value.numel();
        Parameter {
            name: name.into(),
            value,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step_count: 0,
        }
    }
}

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Ordered collection of parameters. Order is creation order and is what
/// checkpoints persist.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Rounds every value to the nearest `f32`, the precision checkpoints
    /// store, so a saved and reloaded store computes exactly what this one does.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            for x in p.value.data_mut() {
                *x = *x as f32 as f64;
            }
        }
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Adds every parameter to `g` as a trainable leaf; index `i` of the
    /// result is the leaf for `ParamId(i)`.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| g.leaf(p.value.clone()))
            .collect()
    }

    /// Adds every parameter as a constant (inference only).
    pub fn bind_frozen(&self, g: &mut Graph) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| g.constant(p.value.clone()))
            .collect()
    }

    /// Gradients of bound leaves; parameters the backward pass never
    /// reached get zeros.
    pub fn collect_grads(&self, g: &Graph, vars: &[Var]) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .zip(vars)
            .map(|(p, &v)| {
                g.grad(v)
                    .map(|s| s.to_vec())
                    .unwrap_or_else(|| vec![0.0; p.value.numel()])
            })
            .collect()
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    /// One bias-corrected Adam update. A parameter whose gradient holds a
    /// non-finite value is left untouched (moments and step count
    /// included) and counted in `diag`.
    pub fn step(
        &self,
        params: &mut ParamStore,
        grads: &[Vec<f64>],
        lr: f64,
        diag: &mut Diagnostics,
    ) {
        assert_eq!(
            params.len(),
            grads.len(),
            "contract violation: one gradient per parameter"
        );
        for (p, g) in params.iter_mut().zip(grads) {
            assert_eq!(
                p.value.numel(),
                g.len(),
                "contract violation: gradient shape for {}",
                p.name
            );
            if g.iter().any(|x| !x.is_finite()) {
                diag.skipped_nonfinite_grads += 1;
                continue;
            }
            p.step_count += 1;
            let t = p.step_count as i32;
            let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
            let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
            let data = p.value.data_mut();
            for i in 0..g.len() {
                p.adam_m[i] = self.beta1 * p.adam_m[i] + (1.0 - self.beta1) * g[i];
                p.adam_v[i] = self.beta2 * p.adam_v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = p.adam_m[i] / bc1;
                let v_hat = p.adam_v[i] / bc2;
                data[i] -= lr * m_hat / (math::sqrt(v_hat) + self.eps);
            }
        }
    }
}

/// Cosine annealing from `lr_max` at step 0 down to `lr_min` at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct LrSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            lr_max: 1e-4,
            lr_min: 1e-7,
            total_steps: 1,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite())
            || self.total_steps == 0
        {
            return Err(crate::contract!(
                "lr schedule needs 0 < lr_min <= lr_max and total_steps > 0, got {:?}",
                self
            ));
        }
        Ok(())
    }

    /// Learning rate at `step`; steps past the end are clamped and counted.
    pub fn lr_at(&self, step: u64, diag: &mut Diagnostics) -> f64 {
        let s = if step > self.total_steps {
            diag.lr_step_clamped += 1;
            self.total_steps
        } else {
            step
        };
        if s == 0 {
            return self.lr_max;
        }
        if s == self.total_steps {
            return self.lr_min;
        }
        let frac = s as f64 / self.total_steps as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + math::cos(math::PI * frac))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![v]));
        s
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2 after bias correction: delta = -lr * g / (|g| + eps)
        let mut s = one_param(0.0);
        let mut d = Diagnostics::default();
        Adam::default().step(&mut s, &[vec![1.0]], 1e-3, &mut d);
        let expect = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((s.get(ParamId(0)).value.item() - expect).abs() < 1e-15);
        assert_eq!(s.get(ParamId(0)).step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = one_param(0.75);
        let mut d = Diagnostics::default();
        Adam::default().step(&mut s, &[vec![0.0]], 1e-3, &mut d);
        assert_eq!(s.get(ParamId(0)).value.item(), 0.75);
    }

    #[test]
    fn two_unit_steps_decrease_monotonically() {
        let mut s = one_param(0.0);
        let mut d = Diagnostics::default();
        let adam = Adam::default();
        adam.step(&mut s, &[vec![1.0]], 1e-3, &mut d);
        let after1 = s.get(ParamId(0)).value.item();
        adam.step(&mut s, &[vec![1.0]], 1e-3, &mut d);
        let after2 = s.get(ParamId(0)).value.item();
        // Formula oracle: constant g keeps m_hat = v_hat^(1/2) = 1, so each step is ~ -lr.
        assert!(after1 < 0.0 && after2 < after1);
        assert!((after2 - 2.0 * after1).abs() < 1e-12);
    }

    #[test]
    fn nonfinite_gradient_is_skipped() {
        let mut s = one_param(1.0);
        let mut d = Diagnostics::default();
        Adam::default().step(&mut s, &[vec![f64::NAN]], 1e-3, &mut d);
        assert_eq!(s.get(ParamId(0)).value.item(), 1.0);
        assert_eq!(s.get(ParamId(0)).step_count, 0);
        assert_eq!(d.skipped_nonfinite_grads, 1);
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let sched = LrSchedule {
            total_steps: 100,
            ..Default::default()
        };
        let mut d = Diagnostics::default();
        assert_eq!(sched.lr_at(0, &mut d), 1e-4);
        assert_eq!(sched.lr_at(100, &mut d), 1e-7);
        assert!((sched.lr_at(50, &mut d) - 5.005e-5).abs() < 1e-18);
        assert_eq!(d.lr_step_clamped, 0);
        assert_eq!(sched.lr_at(101, &mut d), 1e-7);
        assert_eq!(d.lr_step_clamped, 1);
    }

    #[test]
    fn schedule_is_non_increasing() {
        let sched = LrSchedule {
            total_steps: 37,
            ..Default::default()
        };
        let mut d = Diagnostics::default();
        let lrs: Vec<f64> = (0..=37).map(|s| sched.lr_at(s, &mut d)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn schedule_validation() {
        assert!(LrSchedule {
            lr_min: 1e-3,
            lr_max: 1e-4,
            total_steps: 5
        }
        .validate()
        .is_err());
        assert!(LrSchedule {
            total_steps: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LrSchedule {
            total_steps: 5,
            ..Default::default()
        }
        .validate()
        .is_ok());
    }
}
