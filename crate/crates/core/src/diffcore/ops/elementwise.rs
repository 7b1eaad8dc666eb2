use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::diffcore::graph::{GradSink, Graph, Op, UnaryKind, Var};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

/// Exact (erf-based) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                name,
                format!("{:?}", ta.shape()),
                format!("{:?}", tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        self.add_macs(t.len() as u64);
        self.push(t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        self.add_macs(t.len() as u64);
        self.push(t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        self.add_macs(t.len() as u64);
        self.push(t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let t = self.value(x).map(|v| v * k);
        self.add_macs(t.len() as u64);
        self.push(t, Op::Scale(x, k), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Result<Var> {
        let t = self.value(x).map(|v| v + k);
        self.add_macs(t.len() as u64);
        self.push(t, Op::AddScalar(x), &[x])
    }

    /// Adds `b` (length n) along the last axis of `x`.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let tx = self.value(x);
        let tb = self.value(b);
        let n = *tx.shape().last().unwrap_or(&0);
        if tb.len() != n || n == 0 {
            return Err(Error::shape(
                "bias_add",
                format!("bias of {n}"),
                format!("{:?}", tb.shape()),
            ));
        }
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tb.data()[i % n])
            .collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        self.add_macs(t.len() as u64);
        self.push(t, Op::BiasAdd(x, b), &[x, b])
    }

    pub fn unary(&mut self, x: Var, kind: UnaryKind) -> Result<Var> {
        let f: fn(f64) -> f64 = match kind {
            UnaryKind::Gelu => gelu,
            UnaryKind::Sigmoid => sigmoid,
            UnaryKind::Exp => f64::exp,
            UnaryKind::Abs => f64::abs,
            UnaryKind::Sqrt => f64::sqrt,
        };
        if kind == UnaryKind::Sqrt && self.value(x).data().iter().any(|&v| v < 0.0) {
            return Err(Error::NonFinite { op: "sqrt" });
        }
        let t = self.value(x).map(f);
        self.add_macs(t.len() as u64);
        self.push(t, Op::Unary(x, kind), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Exp)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Abs)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Sqrt)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let t = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(t, Op::Clamp { x, lo, hi }, &[x])
    }
}

pub(crate) fn mul_backward(a: Var, b: Var, g: &[f64], sink: &mut GradSink<'_>) {
    if sink.wants(a) {
        let vb = sink.value(b).data().to_vec();
        sink.accumulate(a, |acc| {
            for ((acc, g), y) in acc.iter_mut().zip(g).zip(&vb) {
                *acc += g * y;
            }
        });
    }
    if sink.wants(b) {
        let va = sink.value(a).data().to_vec();
        sink.accumulate(b, |acc| {
            for ((acc, g), x) in acc.iter_mut().zip(g).zip(&va) {
                *acc += g * x;
            }
        });
    }
}

pub(crate) fn bias_add_backward(x: Var, b: Var, g: &[f64], sink: &mut GradSink<'_>) {
    sink.add_slice(x, g);
    let n = sink.value(b).len();
    sink.accumulate(b, |acc| {
        for (i, gv) in g.iter().enumerate() {
            acc[i % n] += gv;
        }
    });
}

pub(crate) fn unary_backward(
    x: Var,
    kind: UnaryKind,
    out: &Tensor,
    g: &[f64],
    sink: &mut GradSink<'_>,
) {
    if !sink.wants(x) {
        return;
    }
    let xs = sink.value(x).data().to_vec();
    let ys = out.data();
    sink.accumulate(x, |acc| {
        for i in 0..acc.len() {
            let d = match kind {
                UnaryKind::Gelu => gelu_grad(xs[i]),
                UnaryKind::Sigmoid => ys[i] * (1.0 - ys[i]),
                UnaryKind::Exp => ys[i],
                UnaryKind::Abs => {
                    if xs[i] > 0.0 {
                        1.0
                    } else if xs[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                UnaryKind::Sqrt => {
                    if ys[i] > 0.0 {
                        0.5 / ys[i]
                    } else {
                        0.0
                    }
                }
            };
            acc[i] += g[i] * d;
        }
    });
}

pub(crate) fn clamp_backward(x: Var, lo: f64, hi: f64, g: &[f64], sink: &mut GradSink<'_>) {
    if !sink.wants(x) {
        return;
    }
    let xs = sink.value(x).data().to_vec();
    sink.accumulate(x, |acc| {
        for i in 0..acc.len() {
            if xs[i] >= lo && xs[i] <= hi {
                acc[i] += g[i];
            }
        }
    });
}
