//! Central finite-difference gradient verification.

use crate::error::{Error, Result};

use super::{Graph, Scalar, Tensor, Var};

/// Compares analytic gradients of `f` against central finite differences
/// over every coordinate of every parameter and returns the worst relative
/// error, with denominator `max(|analytic|, |numeric|, 1e-8)`.
///
/// `f` receives a fresh graph plus one leaf per parameter (in order) and
/// must return a scalar output node.
pub fn grad_check<T, F>(f: F, params: &[Tensor<T>], h: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    if h <= T::zero() {
        return Err(Error::InvalidSpec("grad_check step h must be positive".into()));
    }
    // analytic pass
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(Error::NotScalar(g.value(out).numel()));
    }
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
        .collect();

    let eval = |ps: &[Tensor<T>]| -> Result<T> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.leaf(p.clone(), false)).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let floor = T::c(1e-8);
    let two = T::c(2.0);
    let mut worst = T::zero();
    let mut work: Vec<Tensor<T>> = params.to_vec();
    for pi in 0..params.len() {
        for ci in 0..params[pi].numel() {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + h;
            let fp = eval(&work)?;
            work[pi].data_mut()[ci] = orig - h;
            let fm = eval(&work)?;
            work[pi].data_mut()[ci] = orig;
            let numeric = (fp - fm) / (two * h);
            let a = analytic[pi].data()[ci];
            let denom = a.abs().max(numeric.abs()).max(floor);
            let err = (a - numeric).abs() / denom;
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
