//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Worst relative error found in one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamError {
    pub index: usize,
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub per_param: Vec<ParamError>,
    pub evaluations: usize,
}

/// `|a − b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central difference formula used for the numeric derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`
    #[default]
    ThreePoint,
    /// `(f(x−2h) − 8f(x−h) + 8f(x+h) − f(x+2h)) / 12h`
    FivePoint,
}

/// Compares reverse-mode gradients of a scalar-valued computation against
/// `(f(x+h) − f(x−h)) / 2h` for every coordinate of every parameter.
///
/// `f` receives a fresh graph and the parameter nodes (in `params` order)
/// and must return a `[1×1]` node.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    grad_check_with(f, params, step, Stencil::ThreePoint)
}

/// [`grad_check`] with a selectable difference formula.
pub fn grad_check_with<F>(f: F, params: &[Tensor], step: f64, stencil: Stencil) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {step}")));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &ids)?;
        let v = g.value(out).data()[0];
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("objective evaluated to {v}")));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &ids)?;
    if !g.value(out).data()[0].is_finite() {
        return Err(Error::NonFinite("objective is not finite".into()));
    }
    let grads = g.backward(out)?;

    let mut work: Vec<Tensor> = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    let mut evaluations = 1;
    for (pi, id) in ids.iter().enumerate() {
        let analytic: Vec<f64> = grads
            .get(*id)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; params[pi].len()]);
        let mut worst = ParamError {
            index: pi,
            max_rel_error: 0.0,
            worst_coord: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for c in 0..params[pi].len() {
            let orig = params[pi].data()[c];
            let mut at = |delta: f64| -> Result<f64> {
                work[pi].data_mut()[c] = orig + delta;
                let v = eval(&work);
                work[pi].data_mut()[c] = orig;
                evaluations += 1;
                v
            };
            let numeric = match stencil {
                Stencil::ThreePoint => (at(step)? - at(-step)?) / (2.0 * step),
                Stencil::FivePoint => {
                    let (p1, m1) = (at(step)?, at(-step)?);
                    let (p2, m2) = (at(2.0 * step)?, at(-2.0 * step)?);
                    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step)
                }
            };
            let err = relative_error(analytic[c], numeric);
            if err > worst.max_rel_error {
                worst = ParamError {
                    index: pi,
                    max_rel_error: err,
                    worst_coord: c,
                    analytic: analytic[c],
                    numeric,
                };
            }
        }
        per_param.push(worst);
    }
    let max_rel_error = per_param.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_param,
        evaluations,
    })
}
