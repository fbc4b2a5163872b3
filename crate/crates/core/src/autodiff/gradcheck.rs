//! Finite-difference verification of analytic gradients (64-bit).

use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Relative error `|a - b| / max(|a|, |b|, 1e-12)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Builds a scalar-valued graph from leaf inputs.
pub trait GraphFn: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var> {}
impl<F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>> GraphFn for F {}

/// Value and analytic gradients of `f` at `inputs`.
pub fn value_and_grads<F: GraphFn>(f: &mut F, inputs: &[Tensor<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let value = g.value(out).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("gradient check output {value}")));
    }
    let grads = g.backward(out)?;
    let analytic = vars.iter().zip(inputs).map(|(&v, t)| grads.get_or_zeros(v, t.numel())).collect();
    Ok((value, analytic))
}

fn eval<F: GraphFn>(f: &mut F, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out).item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("gradient check output {v}")));
    }
    Ok(v)
}

/// Compares `analytic` against central differences at the listed
/// `(input, element)` coordinates, or at every coordinate when `coords` is
/// `None`. Returns the maximum relative error.
pub fn compare_gradients<F: GraphFn>(
    f: &mut F,
    inputs: &[Tensor<f64>],
    analytic: &[Vec<f64>],
    h: f64,
    coords: Option<&[(usize, usize)]>,
) -> Result<f64> {
    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = inputs.iter().enumerate().flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j))).collect();
            &all
        }
    };
    let mut work = inputs.to_vec();
    let mut worst = 0.0f64;
    for &(i, j) in coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + h;
        let up = eval(f, &work)?;
        work[i].data_mut()[j] = orig - h;
        let down = eval(f, &work)?;
        work[i].data_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i][j], numeric));
    }
    Ok(worst)
}

/// Maximum relative error between the analytic gradient of `f` and central
/// differences with step `h`, over every input coordinate.
pub fn gradient_check<F: GraphFn>(mut f: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64> {
    let (_, analytic) = value_and_grads(&mut f, inputs)?;
    compare_gradients(&mut f, inputs, &analytic, h, None)
}
