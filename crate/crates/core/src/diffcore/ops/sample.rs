use crate::diffcore::graph::{GradSink, Graph, Op, Var};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

pub(crate) struct BilinearMeta {
    src: Var,
    coords: Var,
}

/// Clamp-to-edge bilinear footprint of a sample point along one axis.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Axis {
    pub i0: usize,
    pub i1: usize,
    pub frac: f64,
    /// d(clamped coordinate)/d(coordinate)
    pub inside: bool,
}

pub(crate) fn axis(c: f64, len: usize) -> Axis {
    let max = (len - 1) as f64;
    let cc = c.clamp(0.0, max);
    let i0 = cc.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    Axis {
        i0,
        i1,
        frac: cc - i0 as f64,
        inside: c > 0.0 && c < max,
    }
}

/// Bilinear sample of one channel plane at `(x, y)`; zero-weight taps are
/// skipped so integer coordinates return the stored value bitwise.
pub(crate) fn sample_plane(plane: &[f64], w: usize, ax: Axis, ay: Axis) -> f64 {
    let taps = [
        ((1.0 - ax.frac) * (1.0 - ay.frac), ay.i0 * w + ax.i0),
        (ax.frac * (1.0 - ay.frac), ay.i0 * w + ax.i1),
        ((1.0 - ax.frac) * ay.frac, ay.i1 * w + ax.i0),
        (ax.frac * ay.frac, ay.i1 * w + ax.i1),
    ];
    let mut acc: Option<f64> = None;
    for (wt, idx) in taps {
        if wt != 0.0 {
            let v = wt * plane[idx];
            acc = Some(acc.map_or(v, |a| a + v));
        }
    }
    acc.unwrap_or(0.0)
}

impl Graph {
    /// Samples `src: [C,H,W]` at absolute pixel coordinates `coords: [2,Ho,Wo]`
    /// (x plane then y plane) with clamp-to-edge borders.
    pub fn bilinear_sample(&mut self, src: Var, coords: Var) -> Result<Var> {
        let ts = self.value(src);
        let tc = self.value(coords);
        ts.expect_rank("bilinear_sample", 3)?;
        tc.expect_rank("bilinear_sample", 3)?;
        if tc.shape()[0] != 2 {
            return Err(Error::shape(
                "bilinear_sample",
                "[2,Ho,Wo] coordinates",
                format!("{:?}", tc.shape()),
            ));
        }
        let (c, h, w) = (ts.shape()[0], ts.shape()[1], ts.shape()[2]);
        let (ho, wo) = (tc.shape()[1], tc.shape()[2]);
        let np = ho * wo;
        let (cx, cy) = tc.data().split_at(np);
        let mut out = vec![0.0; c * np];
        for p in 0..np {
            let (ax, ay) = (axis(cx[p], w), axis(cy[p], h));
            for ch in 0..c {
                out[ch * np + p] =
                    sample_plane(&ts.data()[ch * h * w..(ch + 1) * h * w], w, ax, ay);
            }
        }
        let t = Tensor::new([c, ho, wo], out)?;
        self.add_macs(4 * t.len() as u64);
        self.push(
            t,
            Op::BilinearSample(BilinearMeta { src, coords }),
            &[src, coords],
        )
    }

    /// Max pooling with a `k x k` window and stride `k`; ragged edge blocks use
    /// the pixels available. Ties resolve to the first pixel in row-major order.
    pub fn maxpool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        if k == 0 {
            return Err(Error::invalid("maxpool2d kernel must be >= 1"));
        }
        let tx = self.value(x);
        tx.expect_rank("maxpool2d", 3)?;
        let (c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (ho, wo) = (h.div_ceil(k), w.div_ceil(k));
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = (f64::NEG_INFINITY, 0);
                    for y in oy * k..((oy + 1) * k).min(h) {
                        for xx in ox * k..((ox + 1) * k).min(w) {
                            let idx = ch * h * w + y * w + xx;
                            if tx.data()[idx] > best.0 {
                                best = (tx.data()[idx], idx);
                            }
                        }
                    }
                    out.push(best.0);
                    argmax.push(best.1);
                }
            }
        }
        let t = Tensor::new([c, ho, wo], out)?;
        self.push(t, Op::MaxPool2d { x, argmax }, &[x])
    }
}

pub(crate) fn bilinear_backward(meta: &BilinearMeta, g: &[f64], sink: &mut GradSink<'_>) {
    let BilinearMeta { src, coords } = *meta;
    let ts = sink.value(src).clone();
    let tc = sink.value(coords).clone();
    let (c, h, w) = (ts.shape()[0], ts.shape()[1], ts.shape()[2]);
    let np = tc.shape()[1] * tc.shape()[2];
    let (cx, cy) = tc.data().split_at(np);
    let sd = ts.data();
    let mut dsrc = vec![0.0; ts.len()];
    let mut dcoord = vec![0.0; tc.len()];
    for p in 0..np {
        let (ax, ay) = (axis(cx[p], w), axis(cy[p], h));
        let (fx, fy) = (ax.frac, ay.frac);
        for ch in 0..c {
            let gv = g[ch * np + p];
            let base = ch * h * w;
            let v00 = sd[base + ay.i0 * w + ax.i0];
            let v10 = sd[base + ay.i0 * w + ax.i1];
            let v01 = sd[base + ay.i1 * w + ax.i0];
            let v11 = sd[base + ay.i1 * w + ax.i1];
            dsrc[base + ay.i0 * w + ax.i0] += gv * (1.0 - fx) * (1.0 - fy);
            dsrc[base + ay.i0 * w + ax.i1] += gv * fx * (1.0 - fy);
            dsrc[base + ay.i1 * w + ax.i0] += gv * (1.0 - fx) * fy;
            dsrc[base + ay.i1 * w + ax.i1] += gv * fx * fy;
            if ax.inside {
                dcoord[p] += gv * ((1.0 - fy) * (v10 - v00) + fy * (v11 - v01));
            }
            if ay.inside {
                dcoord[np + p] += gv * ((1.0 - fx) * (v01 - v00) + fx * (v11 - v10));
            }
        }
    }
    sink.add_slice(src, &dsrc);
    sink.add_slice(coords, &dcoord);
}
