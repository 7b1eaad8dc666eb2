use crate::diffcore::graph::{GradSink, Graph, Op, Var};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

pub const LAYERNORM_EPS: f64 = 1e-5;

pub(crate) struct LayerNormMeta {
    x: Var,
    gamma: Option<Var>,
    beta: Option<Var>,
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

impl Graph {
    /// Normalises over the last axis, then applies the optional affine terms.
    pub fn layernorm(&mut self, x: Var, gamma: Option<Var>, beta: Option<Var>) -> Result<Var> {
        let tx = self.value(x);
        let n = *tx
            .shape()
            .last()
            .ok_or_else(|| Error::shape("layernorm", "rank >= 1", "scalar"))?;
        for p in [gamma, beta].into_iter().flatten() {
            self.value(p).expect_shape("layernorm", &[n])?;
        }
        let gam = gamma.map(|v| self.value(v).data().to_vec());
        let bet = beta.map(|v| self.value(v).data().to_vec());
        let rows = tx.len() / n;
        let mut xhat = vec![0.0; tx.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let s = 1.0 / (var + LAYERNORM_EPS).sqrt();
            rstd[r] = s;
            for i in 0..n {
                let xh = (row[i] - mean) * s;
                xhat[r * n + i] = xh;
                let mut y = xh;
                if let Some(gm) = &gam {
                    y *= gm[i];
                }
                if let Some(bt) = &bet {
                    y += bt[i];
                }
                out[r * n + i] = y;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        self.add_macs(5 * t.len() as u64);
        let mut inputs = vec![x];
        inputs.extend(gamma);
        inputs.extend(beta);
        self.push(
            t,
            Op::LayerNorm(LayerNormMeta {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            }),
            &inputs,
        )
    }
}

pub(crate) fn layernorm_backward(meta: &LayerNormMeta, g: &[f64], sink: &mut GradSink<'_>) {
    let n = meta.xhat.len() / meta.rstd.len();
    let gam = meta.gamma.map(|v| sink.value(v).data().to_vec());
    if let Some(gv) = meta.gamma {
        sink.accumulate(gv, |acc| {
            for (i, (gg, xh)) in g.iter().zip(&meta.xhat).enumerate() {
                acc[i % n] += gg * xh;
            }
        });
    }
    if let Some(bv) = meta.beta {
        sink.accumulate(bv, |acc| {
            for (i, gg) in g.iter().enumerate() {
                acc[i % n] += gg;
            }
        });
    }
    if !sink.wants(meta.x) {
        return;
    }
    sink.accumulate(meta.x, |acc| {
        for (r, &s) in meta.rstd.iter().enumerate() {
            let xh = &meta.xhat[r * n..(r + 1) * n];
            let dxh: Vec<f64> = (0..n)
                .map(|i| g[r * n + i] * gam.as_ref().map_or(1.0, |gm| gm[i]))
                .collect();
            let mean_d = dxh.iter().sum::<f64>() / n as f64;
            let mean_dx = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            for i in 0..n {
                acc[r * n + i] += s * (dxh[i] - mean_d - xh[i] * mean_dx);
            }
        }
    });
}
