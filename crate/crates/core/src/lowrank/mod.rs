//! Low-rank feature modulation.
//!
//! A `[C,H,W]` feature map is pooled to one vector per dimension; each
//! vector feeds a small projector that emits M sigmoid-bounded vectors. The
//! M triples are composed into rank-1 tensors, averaged, and used as
//! pointwise weights on the input.

use rand::Rng;

use crate::diffcore::{Bound, CustomOp, GradSink, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Default number of rank-1 terms.
pub const DEFAULT_M: usize = 16;

const DIMS: [&str; 3] = ["c", "h", "w"];

/// Shape contract of the three projector groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectorSet {
    pub m: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ProjectorSet {
    pub fn new(m: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        if m == 0 || m >= channels.min(height).min(width) {
            return Err(Error::invalid(format!(
                "need 0 < M < min(C,H,W), got M={m} for {channels}x{height}x{width}"
            )));
        }
        Ok(ProjectorSet {
            m,
            channels,
            height,
            width,
        })
    }

    pub fn hidden(&self) -> usize {
        self.m.max(4)
    }

    fn lens(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    /// Registers `{prefix}.{c,h,w}.{w1,b1,w2,b2}`.
    pub fn init<R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<()> {
        let hid = self.hidden();
        for (d, len) in DIMS.iter().zip(self.lens()) {
            let a = 1.0 / (len as f64).sqrt();
            let b = 1.0 / (hid as f64).sqrt();
            store.insert(
                format!("{prefix}.{d}.w1"),
                Tensor::uniform([len, hid], -a, a, rng),
            )?;
            store.insert(format!("{prefix}.{d}.b1"), Tensor::zeros([hid]))?;
            store.insert(
                format!("{prefix}.{d}.w2"),
                Tensor::uniform([hid, self.m * len], -b, b, rng),
            )?;
            store.insert(format!("{prefix}.{d}.b2"), Tensor::zeros([self.m * len]))?;
        }
        Ok(())
    }

    /// Registers the same parameters with every weight at zero.
    pub fn init_zero(&self, store: &mut ParamStore, prefix: &str) -> Result<()> {
        let hid = self.hidden();
        for (d, len) in DIMS.iter().zip(self.lens()) {
            store.insert(format!("{prefix}.{d}.w1"), Tensor::zeros([len, hid]))?;
            store.insert(format!("{prefix}.{d}.b1"), Tensor::zeros([hid]))?;
            store.insert(
                format!("{prefix}.{d}.w2"),
                Tensor::zeros([hid, self.m * len]),
            )?;
            store.insert(format!("{prefix}.{d}.b2"), Tensor::zeros([self.m * len]))?;
        }
        Ok(())
    }

    /// `(U: [M,C], V: [M,H], W: [M,W])`.
    pub fn project_dims(
        &self,
        g: &mut Graph,
        p: &Bound<'_>,
        prefix: &str,
        x: Var,
    ) -> Result<(Var, Var, Var)> {
        g.value(x)
            .expect_shape("project_dims", &[self.channels, self.height, self.width])?;
        let pooled = [
            g.global_avgpool(x)?,
            {
                let t = g.permute(x, &[1, 0, 2])?;
                g.global_avgpool(t)?
            },
            {
                let t = g.permute(x, &[2, 0, 1])?;
                g.global_avgpool(t)?
            },
        ];
        let mut out = Vec::with_capacity(3);
        for ((d, len), v) in DIMS.iter().zip(self.lens()).zip(pooled) {
            let row = g.reshape(v, [1, len])?;
            let h = g.matmul(row, p.get(&format!("{prefix}.{d}.w1"))?)?;
            let h = g.bias_add(h, p.get(&format!("{prefix}.{d}.b1"))?)?;
            let h = g.gelu(h)?;
            let o = g.matmul(h, p.get(&format!("{prefix}.{d}.w2"))?)?;
            let o = g.bias_add(o, p.get(&format!("{prefix}.{d}.b2"))?)?;
            let o = g.sigmoid(o)?;
            out.push(g.reshape(o, [self.m, len])?);
        }
        Ok((out[0], out[1], out[2]))
    }

    /// Full block: project, compose, modulate.
    pub fn forward(&self, g: &mut Graph, p: &Bound<'_>, prefix: &str, x: Var) -> Result<Var> {
        let (u, v, w) = self.project_dims(g, p, prefix, x)?;
        let t = rank1_compose_graph(g, u, v, w)?;
        modulate(g, x, t)
    }
}

/// `T[c,h,w] = (1/M) sum_m U[m,c] V[m,h] W[m,w]`.
pub fn rank1_compose(u: &Tensor, v: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (m, c, h, wd) = compose_dims(u, v, w)?;
    let mut out = vec![0.0; c * h * wd];
    let (ud, vd, wdat) = (u.data(), v.data(), w.data());
    for k in 0..m {
        for ci in 0..c {
            let a = ud[k * c + ci];
            for hi in 0..h {
                let ab = a * vd[k * h + hi];
                let row = &mut out[(ci * h + hi) * wd..(ci * h + hi + 1) * wd];
                for (o, &z) in row.iter_mut().zip(&wdat[k * wd..(k + 1) * wd]) {
                    *o += ab * z;
                }
            }
        }
    }
    let inv = 1.0 / m as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Tensor::new([c, h, wd], out)
}

fn compose_dims(u: &Tensor, v: &Tensor, w: &Tensor) -> Result<(usize, usize, usize, usize)> {
    for t in [u, v, w] {
        t.expect_rank("rank1_compose", 2)?;
    }
    let m = u.shape()[0];
    if v.shape()[0] != m || w.shape()[0] != m || m == 0 {
        return Err(Error::shape(
            "rank1_compose",
            format!("{m} terms in every group"),
            format!("{} and {}", v.shape()[0], w.shape()[0]),
        ));
    }
    Ok((m, u.shape()[1], v.shape()[1], w.shape()[1]))
}

pub fn rank1_compose_graph(g: &mut Graph, u: Var, v: Var, w: Var) -> Result<Var> {
    let t = rank1_compose(g.value(u), g.value(v), g.value(w))?;
    g.add_macs(2 * g.value(u).shape()[0] as u64 * t.len() as u64);
    g.push_custom(t, Box::new(Compose { u, v, w }))
}

struct Compose {
    u: Var,
    v: Var,
    w: Var,
}

impl CustomOp for Compose {
    fn name(&self) -> &'static str {
        "rank1_compose"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.u, self.v, self.w]
    }

    fn backward(&self, grad: &[f64], sink: &mut GradSink<'_>) {
        let (u, v, w) = (sink.value(self.u), sink.value(self.v), sink.value(self.w));
        let (m, c, h, wd) = (u.shape()[0], u.shape()[1], v.shape()[1], w.shape()[1]);
        let inv = 1.0 / m as f64;
        let (ud, vd, wdat) = (u.data(), v.data(), w.data());
        let mut du = vec![0.0; m * c];
        let mut dv = vec![0.0; m * h];
        let mut dw = vec![0.0; m * wd];
        for k in 0..m {
            for ci in 0..c {
                for hi in 0..h {
                    let gr = &grad[(ci * h + hi) * wd..(ci * h + hi + 1) * wd];
                    let wr = &wdat[k * wd..(k + 1) * wd];
                    let gw: f64 = gr.iter().zip(wr).map(|(a, b)| a * b).sum();
                    du[k * c + ci] += inv * vd[k * h + hi] * gw;
                    dv[k * h + hi] += inv * ud[k * c + ci] * gw;
                    let uv = inv * ud[k * c + ci] * vd[k * h + hi];
                    for (d, &gv) in dw[k * wd..(k + 1) * wd].iter_mut().zip(gr) {
                        *d += uv * gv;
                    }
                }
            }
        }
        sink.add_slice(self.u, &du);
        sink.add_slice(self.v, &dv);
        sink.add_slice(self.w, &dw);
    }
}

/// Pointwise modulation `X * T`.
pub fn modulate(g: &mut Graph, x: Var, t: Var) -> Result<Var> {
    if g.shape(x) != g.shape(t) {
        return Err(Error::shape(
            "modulate",
            format!("{:?}", g.shape(x)),
            format!("{:?}", g.shape(t)),
        ));
    }
    g.mul(x, t)
}
