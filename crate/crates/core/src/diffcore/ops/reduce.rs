use crate::diffcore::graph::{GradSink, Graph, Op, Var};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

pub(crate) struct SumAxisMeta {
    x: Var,
    outer: usize,
    len: usize,
    inner: usize,
}

impl Graph {
    /// Mean over every axis but the first: `[C, ...] -> [C]`.
    pub fn global_avgpool(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() < 2 {
            return Err(Error::shape(
                "global_avgpool",
                "rank >= 2",
                format!("{:?}", tx.shape()),
            ));
        }
        let c = tx.shape()[0];
        let per = tx.len() / c;
        let data = tx
            .data()
            .chunks(per)
            .map(|ch| ch.iter().sum::<f64>() / per as f64)
            .collect();
        let t = Tensor::new([c], data)?;
        self.add_macs(tx.len() as u64);
        self.push(t, Op::GlobalAvgPool(x), &[x])
    }

    /// Sums out one axis.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return Err(Error::shape(
                "sum_axis",
                format!("axis < {}", tx.rank()),
                axis,
            ));
        }
        let s = tx.shape();
        let outer: usize = s[..axis].iter().product();
        let len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += tx.data()[(o * len + a) * inner + i];
                }
            }
        }
        let mut shape = s.to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let t = Tensor::new(shape, out)?;
        self.add_macs(tx.len() as u64);
        self.push(
            t,
            Op::SumAxis(SumAxisMeta {
                x,
                outer,
                len,
                inner,
            }),
            &[x],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(x).sum());
        self.add_macs(self.value(x).len() as u64);
        self.push(t, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let t = Tensor::scalar(tx.sum() / tx.len() as f64);
        self.add_macs(tx.len() as u64);
        self.push(t, Op::Mean(x), &[x])
    }
}

pub(crate) fn global_avgpool_backward(x: Var, g: &[f64], sink: &mut GradSink<'_>) {
    let c = g.len();
    let per = sink.value(x).len() / c;
    sink.accumulate(x, |acc| {
        for (i, a) in acc.iter_mut().enumerate() {
            *a += g[i / per] / per as f64;
        }
    });
}

pub(crate) fn sum_axis_backward(m: &SumAxisMeta, g: &[f64], sink: &mut GradSink<'_>) {
    let SumAxisMeta {
        x,
        outer,
        len,
        inner,
    } = *m;
    sink.accumulate(x, |acc| {
        for o in 0..outer {
            for a in 0..len {
                for i in 0..inner {
                    acc[(o * len + a) * inner + i] += g[o * inner + i];
                }
            }
        }
    });
}
