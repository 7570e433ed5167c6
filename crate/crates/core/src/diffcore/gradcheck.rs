//! Central-difference verification of analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::math;

/// Settings for [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub h: f64,
    /// Largest acceptable relative error.
    pub tol: f64,
    /// Gradients smaller than this are compared on an absolute scale of
    /// `abs_floor` instead of their own magnitude.
    pub abs_floor: f64,
    /// Check at most this many coordinates per parameter, evenly strided.
    pub max_coords: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            tol: 1e-4,
            abs_floor: 1e-6,
            max_coords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// Relative error with an absolute floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let denom = math::abs(analytic).max(math::abs(numeric)).max(abs_floor);
    math::abs(analytic - numeric) / denom
}

/// Compares the analytic gradient of a scalar function against
/// `(f(x + h) - f(x - h)) / 2h` for every named parameter.
///
/// `f` receives a fresh graph and one leaf per parameter (in order) and
/// must return a scalar node. It is called once for the analytic pass and
/// twice per checked coordinate.
pub fn grad_check<F>(f: F, params: &[(String, Tensor)], cfg: GradCheckConfig) -> GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |values: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let root = f(&mut g, &vars);
        g.value(root).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| g.leaf(t.clone())).collect();
    let root = f(&mut g, &vars);
    let f0 = g.value(root).item();
    let mut report = GradCheckReport { params: Vec::new() };
    if !f0.is_finite() {
        for (name, _) in params {
            report.params.push(ParamCheck {
                name: name.clone(),
                coords_checked: 0,
                max_rel_error: f64::INFINITY,
                passed: false,
                failure: Some(alloc::format!("function value is {f0}")),
            });
        }
        return report;
    }
    g.backward(root);

    let mut values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    for (pi, (name, t)) in params.iter().enumerate() {
        let n = t.numel();
        let zeros = alloc::vec![0.0; n];
        let analytic: Vec<f64> = g.grad(vars[pi]).map(|s| s.to_vec()).unwrap_or(zeros);
        let stride = match cfg.max_coords {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let mut max_err: f64 = 0.0;
        let mut failure = None;
        let mut checked = 0;
        for c in (0..n).step_by(stride) {
            let orig = values[pi].data()[c];
            values[pi].data_mut()[c] = orig + cfg.h;
            let fp = eval(&values);
            values[pi].data_mut()[c] = orig - cfg.h;
            let fm = eval(&values);
            values[pi].data_mut()[c] = orig;
            checked += 1;
            if !fp.is_finite() || !fm.is_finite() {
                failure = Some(alloc::format!(
                    "non-finite function value near coordinate {c}"
                ));
                max_err = f64::INFINITY;
                break;
            }
            let numeric = (fp - fm) / (2.0 * cfg.h);
            let err = relative_error(analytic[c], numeric, cfg.abs_floor);
            if err > max_err {
                max_err = err;
            }
        }
        report.params.push(ParamCheck {
            name: name.clone(),
            coords_checked: checked,
            max_rel_error: max_err,
            passed: failure.is_none() && max_err <= cfg.tol,
            failure,
        });
    }
    report
}
