use crate::diffcore::graph::{GradSink, Graph, Op, Var};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};
use crate::par;

pub(crate) struct MatMulMeta {
    a: Var,
    b: Var,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a_batched: bool,
    b_batched: bool,
}

/// `[m,k] x [k,n]`, with an optional leading batch axis on either side.
fn dims(a: &[usize], b: &[usize]) -> Option<(usize, usize, usize, usize, bool, bool)> {
    let (ab, m, k) = match *a {
        [m, k] => (None, m, k),
        [bt, m, k] => (Some(bt), m, k),
        _ => return None,
    };
    let (bb, k2, n) = match *b {
        [k, n] => (None, k, n),
        [bt, k, n] => (Some(bt), k, n),
        _ => return None,
    };
    if k != k2 {
        return None;
    }
    let batch = match (ab, bb) {
        (Some(x), Some(y)) if x != y => return None,
        (Some(x), _) | (_, Some(x)) => x,
        (None, None) => 1,
    };
    Some((batch, m, k, n, ab.is_some(), bb.is_some()))
}

impl Graph {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (batch, m, k, n, a_batched, b_batched) =
            dims(ta.shape(), tb.shape()).ok_or_else(|| {
                Error::shape(
                    "matmul",
                    format!("{:?} x [.., k, n]", ta.shape()),
                    format!("{:?}", tb.shape()),
                )
            })?;
        let (ad, bd) = (ta.data(), tb.data());
        let rows = par::map_range(self.schedule(), batch * m, |r| {
            let (bi, i) = (r / m, r % m);
            let ao = if a_batched { bi * m * k } else { 0 } + i * k;
            let bo = if b_batched { bi * k * n } else { 0 };
            let mut row = vec![0.0; n];
            for p in 0..k {
                let av = ad[ao + p];
                let brow = &bd[bo + p * n..bo + (p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
            row
        });
        let mut shape = vec![m, n];
        if a_batched || b_batched {
            shape.insert(0, batch);
        }
        let t = Tensor::new(shape, rows.concat())?;
        self.add_macs((batch * m * k * n) as u64);
        let meta = MatMulMeta {
            a,
            b,
            batch,
            m,
            k,
            n,
            a_batched,
            b_batched,
        };
        self.push(t, Op::MatMul(meta), &[a, b])
    }
}

pub(crate) fn matmul_backward(meta: &MatMulMeta, g: &[f64], sink: &mut GradSink<'_>) {
    let MatMulMeta {
        a,
        b,
        batch,
        m,
        k,
        n,
        a_batched,
        b_batched,
    } = *meta;
    if sink.wants(a) {
        // dA = G B^T
        let bd = sink.value(b).data().to_vec();
        sink.accumulate(a, |acc| {
            for bi in 0..batch {
                let ao = if a_batched { bi * m * k } else { 0 };
                let bo = if b_batched { bi * k * n } else { 0 };
                for i in 0..m {
                    let grow = &g[(bi * m + i) * n..(bi * m + i + 1) * n];
                    for p in 0..k {
                        let brow = &bd[bo + p * n..bo + (p + 1) * n];
                        acc[ao + i * k + p] +=
                            grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
        });
    }
    if sink.wants(b) {
        // dB = A^T G
        let ad = sink.value(a).data().to_vec();
        sink.accumulate(b, |acc| {
            for bi in 0..batch {
                let ao = if a_batched { bi * m * k } else { 0 };
                let bo = if b_batched { bi * k * n } else { 0 };
                for i in 0..m {
                    let grow = &g[(bi * m + i) * n..(bi * m + i + 1) * n];
                    for p in 0..k {
                        let av = ad[ao + i * k + p];
                        let arow = &mut acc[bo + p * n..bo + (p + 1) * n];
                        for (o, gv) in arow.iter_mut().zip(grow) {
                            *o += av * gv;
                        }
                    }
                }
            }
        });
    }
}
