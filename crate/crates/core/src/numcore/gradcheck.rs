//! Central-difference validation of tape gradients.

use std::collections::BTreeMap;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Test hook: scales the analytic gradient of the named parameter by
    /// 1.5 before comparison, simulating a broken backward pass.
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub module: String,
    pub max_rel_err: f64,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub elements: usize,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    pub fn per_module(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for p in &self.params {
            let e = out.entry(p.module.clone()).or_insert(0.0_f64);
            *e = e.max(p.max_rel_err);
        }
        out
    }

    pub fn failures(&self, tol: f64) -> Vec<&ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_err >= tol).collect()
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares tape gradients of `f` against `(f(θ+h) − f(θ−h)) / 2h` for
/// every element of every trainable parameter. `f` must be deterministic.
pub fn grad_check<F>(store: &mut ParamStore, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    grad_check_with(store, &GradCheckOptions::default(), f)
}

pub fn grad_check_with<F>(
    store: &mut ParamStore,
    opts: &GradCheckOptions,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let h = opts.step;
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, store)?;
        Ok(g.value(out).data().iter().sum())
    };

    store.zero_grads();
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let base = g.value(loss).data().iter().sum::<f64>();
    if !base.is_finite() {
        return Err(Error::NonFinite {
            context: "grad_check".into(),
            detail: format!("objective is {base} at the unperturbed point"),
        });
    }
    g.backward(loss, store);
    drop(g);

    let ids: Vec<ParamId> = store.ids().filter(|&id| store.entry(id).trainable).collect();
    let mut report = GradCheckReport::default();
    for id in ids {
        let name = store.name(id).to_string();
        let module = store.entry(id).module.clone();
        let mut analytic = store.grad(id).clone();
        if opts.corrupt.as_deref() == Some(name.as_str()) {
            analytic.data_mut().iter_mut().for_each(|v| *v *= 1.5);
        }
        let mut worst = ParamCheck {
            name: name.clone(),
            module,
            max_rel_err: 0.0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..analytic.len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + h;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - h;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    context: "grad_check".into(),
                    detail: format!("objective non-finite when perturbing {name}[{i}]"),
                });
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[i];
            let e = rel_err(a, numeric);
            if e > worst.max_rel_err || i == 0 {
                worst.max_rel_err = worst.max_rel_err.max(e);
                worst.analytic = a;
                worst.numeric = numeric;
            }
            report.elements += 1;
        }
        report.params.push(worst);
    }
    store.zero_grads();
    Ok(report)
}
