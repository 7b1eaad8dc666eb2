//! Central-difference gradient checking.

use crate::diffcore::graph::{Graph, Var};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};
use crate::par::{self, Schedule};

/// Step used by the gradient suites.
pub const DEFAULT_H: f64 = 1e-5;

/// Max over all coordinates of `|analytic - numeric| / max(1, |numeric|)`.
pub fn gradcheck<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var> + Sync,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    gradcheck_coords(f, point, h, &coords)
}

/// Like [`gradcheck`] but restricted to the listed coordinates.
pub fn gradcheck_coords<F>(f: F, point: &Tensor, h: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var> + Sync,
{
    let analytic = analytic_grad(&f, point)?;
    let numeric = par::map_range(Schedule::default(), coords.len(), |k| {
        let i = coords[k];
        let eval = |delta: f64| -> Result<f64> {
            let mut p = point.clone();
            p.data_mut()[i] += delta;
            let mut g = Graph::with_schedule(Schedule::Sequential);
            let x = g.param(p);
            let y = f(&mut g, x)?;
            Ok(g.value(y).item())
        };
        let d = (eval(h)? - eval(-h)?) / (2.0 * h);
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::NonFinite { op: "gradcheck" })
        }
    });
    let mut worst = 0.0f64;
    for (k, n) in coords.iter().zip(numeric) {
        let n = n?;
        let a = analytic.data()[*k];
        worst = worst.max((a - n).abs() / n.abs().max(1.0));
    }
    Ok(worst)
}

/// Reverse-mode gradient of the scalar `f` at `point`.
pub fn analytic_grad<F>(f: &F, point: &Tensor) -> Result<Tensor>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.param(point.clone());
    let y = f(&mut g, x)?;
    Ok(g.backward(y)?.get(x))
}
