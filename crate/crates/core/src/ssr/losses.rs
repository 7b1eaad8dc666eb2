use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::ssr::ErrorMap;
use crate::warp::Frame;

pub const CHARBONNIER_EPS: f64 = 1e-6;

/// Channel-summed absolute residual normalised by its frame maximum; an
/// all-zero residual gives an all-zero map.
pub fn error_target(it: &Frame, gt: &Frame) -> Result<ErrorMap> {
    if it.tensor().shape() != gt.tensor().shape() {
        return Err(Error::shape(
            "error_target",
            format!("{:?}", it.tensor().shape()),
            format!("{:?}", gt.tensor().shape()),
        ));
    }
    let (h, w) = (it.height(), it.width());
    let mut r = vec![0.0; h * w];
    for c in 0..it.channels() {
        for (o, (a, b)) in r.iter_mut().zip(it.plane(c).iter().zip(gt.plane(c))) {
            *o += (a - b).abs();
        }
    }
    let max = r.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        r.iter_mut().for_each(|v| *v /= max);
    }
    ErrorMap::new(h, w, r)
}

/// Mean absolute difference between a predicted error var (`[H,W]` or
/// `[1,H,W]`) and `target`.
pub fn err_loss(g: &mut Graph, e: Var, target: &ErrorMap) -> Result<Var> {
    if g.value(e).len() != target.data().len() {
        return Err(Error::shape(
            "err_loss",
            format!("{} values", target.data().len()),
            format!("{:?}", g.shape(e)),
        ));
    }
    let shape = g.shape(e).to_vec();
    let t = g.constant(target.tensor().clone().reshape(shape)?);
    let d = g.sub(e, t)?;
    let a = g.abs(d)?;
    g.mean(a)
}

pub fn err_loss_value(e: &ErrorMap, target: &ErrorMap) -> Result<f64> {
    if e.tensor().shape() != target.tensor().shape() {
        return Err(Error::shape(
            "err_loss",
            format!("{:?}", target.tensor().shape()),
            format!("{:?}", e.tensor().shape()),
        ));
    }
    let n = e.data().len() as f64;
    Ok(e.data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

/// `mean(sqrt(d^2 + eps^2))` with `eps = 1e-6`.
pub fn charbonnier(g: &mut Graph, pred: Var, truth: Var) -> Result<Var> {
    let d = g.sub(pred, truth)?;
    let sq = g.mul(d, d)?;
    let s = g.add_scalar(sq, CHARBONNIER_EPS * CHARBONNIER_EPS)?;
    let r = g.sqrt(s)?;
    g.mean(r)
}

pub fn charbonnier_value(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(
            "charbonnier",
            format!("{:?}", truth.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    let e2 = CHARBONNIER_EPS * CHARBONNIER_EPS;
    Ok(pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| ((a - b) * (a - b) + e2).sqrt())
        .sum::<f64>()
        / pred.len() as f64)
}
