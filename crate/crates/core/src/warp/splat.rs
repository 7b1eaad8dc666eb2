//! Many-to-many forward splatting with softmax-style fusion.
//!
//! Every source pixel is pushed along each of its N sub-flows and lands on
//! the four integer neighbours of its warped position. A tap carries
//!
//! ```text
//! w = bilinear(tap) * exp(clamp(b*s*alpha - shift_j, -c, c)) * r
//! ```
//!
//! and target `j` receives `sum(w * v) / sum(w)`. `shift_j` is the largest
//! exponent among taps with non-zero footprint weight landing on `j`; it
//! cancels in the ratio. Accumulation order is normative: source frame, then
//! sub-flow index, then source pixel in row-major order, then the four taps
//! (top-left, top-right, bottom-left, bottom-right). The parallel schedule
//! bins taps by target row with a stable sort so every target sees the same
//! order, making both schedules bitwise identical.

use crate::diffcore::{CustomOp, GradSink, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::par::{self, Schedule};

/// One splatted input: values with their time-scaled sub-flows and fusion terms.
#[derive(Debug, Clone, Copy)]
pub struct SplatSource<'a> {
    /// `[C,H,W]` shared by all sub-flows, or `[N,C,H,W]` per sub-flow.
    pub values: &'a Tensor,
    /// `[N,2,H,W]`, already scaled to the target time.
    pub flows: &'a Tensor,
    /// Brightness consistency `b`, `[H,W]`.
    pub brightness: &'a Tensor,
    /// Reliability `s`, `[H,W]`.
    pub reliability: &'a Tensor,
    /// Temporal relevance `r`.
    pub relevance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatParams {
    pub exponent_clamp: f64,
    pub weight_eps: f64,
    /// Written at hole pixels.
    pub hole_value: f64,
}

#[derive(Debug, Clone)]
pub struct SplatForward {
    /// Fused `[C,H,W]`.
    pub values: Tensor,
    /// Total tap weight per target pixel, `[H,W]`.
    pub weights: Tensor,
    pub holes: Vec<bool>,
    shift: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Dims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
}

impl Dims {
    fn hw(&self) -> usize {
        self.h * self.w
    }
}

fn validate(sources: &[SplatSource<'_>], params: &SplatParams) -> Result<Dims> {
    if params.exponent_clamp.is_nan()
        || params.exponent_clamp <= 0.0
        || params.weight_eps.is_nan()
        || params.weight_eps <= 0.0
    {
        return Err(Error::invalid(
            "exponent_clamp and weight_eps must be positive",
        ));
    }
    let first = sources
        .first()
        .ok_or_else(|| Error::invalid("splat needs at least one source"))?;
    let fs = first.flows.shape();
    if fs.len() != 4 || fs[1] != 2 || fs[0] == 0 {
        return Err(Error::shape(
            "m2m_splat",
            "[N,2,H,W] flows",
            format!("{fs:?}"),
        ));
    }
    let (n, h, w) = (fs[0], fs[2], fs[3]);
    let c = match first.values.shape() {
        [c, ..] if first.values.rank() == 3 => *c,
        [_, c, ..] if first.values.rank() == 4 => *c,
        s => {
            return Err(Error::shape(
                "m2m_splat",
                "[C,H,W] or [N,C,H,W] values",
                format!("{s:?}"),
            ))
        }
    };
    for src in sources {
        src.flows.expect_shape("m2m_splat", &[n, 2, h, w])?;
        if src.values.shape() != [c, h, w] && src.values.shape() != [n, c, h, w] {
            return Err(Error::shape(
                "m2m_splat",
                format!("[{c},{h},{w}] or [{n},{c},{h},{w}]"),
                format!("{:?}", src.values.shape()),
            ));
        }
        src.brightness.expect_shape("m2m_splat", &[h, w])?;
        src.reliability.expect_shape("m2m_splat", &[h, w])?;
        if src.relevance.is_nan() || src.relevance < 0.0 {
            return Err(Error::invalid("temporal relevance must be non-negative"));
        }
    }
    Ok(Dims { n, c, h, w })
}

/// A tap of one splatted contribution.
#[derive(Debug, Clone, Copy)]
struct Tap {
    target: usize,
    weight: f64,
    dwx: f64,
    dwy: f64,
}

/// In-bounds taps of the bilinear footprint at `(px, py)`.
fn footprint(px: f64, py: f64, h: usize, w: usize, out: &mut [Tap; 4]) -> usize {
    let (x0f, y0f) = (px.floor(), py.floor());
    let (ax, ay) = (px - x0f, py - y0f);
    let corners = [
        (0, 0, (1.0 - ax) * (1.0 - ay), -(1.0 - ay), -(1.0 - ax)),
        (1, 0, ax * (1.0 - ay), 1.0 - ay, -ax),
        (0, 1, (1.0 - ax) * ay, -ay, 1.0 - ax),
        (1, 1, ax * ay, ay, ax),
    ];
    let mut k = 0;
    for (ox, oy, weight, dwx, dwy) in corners {
        let (tx, ty) = (x0f + ox as f64, y0f + oy as f64);
        if tx >= 0.0 && ty >= 0.0 && tx < w as f64 && ty < h as f64 {
            out[k] = Tap {
                target: ty as usize * w + tx as usize,
                weight,
                dwx,
                dwy,
            };
            k += 1;
        }
    }
    k
}

/// `(tap weight, exp factor, clamped)` for one tap.
#[inline]
fn tap_weight(bilinear: f64, z: f64, shift: f64, relevance: f64, clamp: f64) -> (f64, f64, bool) {
    let d = z - shift;
    let clamped = d.abs() > clamp;
    let e = d.clamp(-clamp, clamp).exp();
    (bilinear * e * relevance, e, clamped)
}

fn exponents(sources: &[SplatSource<'_>], alpha: f64) -> Vec<Vec<f64>> {
    sources
        .iter()
        .map(|s| {
            s.brightness
                .data()
                .iter()
                .zip(s.reliability.data())
                .map(|(b, r)| b * r * alpha)
                .collect()
        })
        .collect()
}

#[inline]
fn value_offset(src: &SplatSource<'_>, d: &Dims, flow: usize) -> usize {
    if src.values.rank() == 4 {
        flow * d.c * d.hw()
    } else {
        0
    }
}

/// Visits every in-bounds tap in normative order.
fn for_each_tap(
    sources: &[SplatSource<'_>],
    d: &Dims,
    mut f: impl FnMut(usize, usize, usize, &Tap),
) {
    let hw = d.hw();
    let mut taps = [Tap {
        target: 0,
        weight: 0.0,
        dwx: 0.0,
        dwy: 0.0,
    }; 4];
    for (si, src) in sources.iter().enumerate() {
        let fl = src.flows.data();
        for n in 0..d.n {
            let (fx, fy) = (
                &fl[n * 2 * hw..(n * 2 + 1) * hw],
                &fl[(n * 2 + 1) * hw..(n * 2 + 2) * hw],
            );
            for p in 0..hw {
                let (x, y) = ((p % d.w) as f64, (p / d.w) as f64);
                let k = footprint(x + fx[p], y + fy[p], d.h, d.w, &mut taps);
                for tap in &taps[..k] {
                    f(si, n, p, tap);
                }
            }
        }
    }
}

/// Fuses all sources; see the module docs for the exact semantics.
pub fn splat(
    sources: &[SplatSource<'_>],
    alpha: f64,
    params: &SplatParams,
    schedule: Schedule,
) -> Result<SplatForward> {
    let d = validate(sources, params)?;
    if !alpha.is_finite() {
        return Err(Error::NonFinite { op: "m2m_splat" });
    }
    let z = exponents(sources, alpha);
    let (den, num, shift) = if schedule.is_parallel() {
        accumulate_binned(sources, &d, &z, params, schedule)
    } else {
        accumulate_sequential(sources, &d, &z, params)
    };
    finish(&d, den, num, shift, params)
}

fn accumulate_sequential(
    sources: &[SplatSource<'_>],
    d: &Dims,
    z: &[Vec<f64>],
    params: &SplatParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hw = d.hw();
    let mut shift = vec![f64::NEG_INFINITY; hw];
    for_each_tap(sources, d, |si, _, p, tap| {
        if tap.weight > 0.0 && z[si][p] > shift[tap.target] {
            shift[tap.target] = z[si][p];
        }
    });
    for s in &mut shift {
        if *s == f64::NEG_INFINITY {
            *s = 0.0;
        }
    }
    let mut den = vec![0.0; hw];
    let mut num = vec![0.0; d.c * hw];
    for_each_tap(sources, d, |si, n, p, tap| {
        let src = &sources[si];
        let (wt, _, _) = tap_weight(
            tap.weight,
            z[si][p],
            shift[tap.target],
            src.relevance,
            params.exponent_clamp,
        );
        den[tap.target] += wt;
        let vo = value_offset(src, d, n);
        let vals = src.values.data();
        for ch in 0..d.c {
            num[ch * hw + tap.target] += wt * vals[vo + ch * hw + p];
        }
    });
    (den, num, shift)
}

#[derive(Debug, Clone, Copy)]
struct BinnedTap {
    target: u32,
    src: u32,
    source: u16,
    flow: u16,
    weight: f64,
}

fn accumulate_binned(
    sources: &[SplatSource<'_>],
    d: &Dims,
    z: &[Vec<f64>],
    params: &SplatParams,
    schedule: Schedule,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (hw, w) = (d.hw(), d.w);
    // Taps per (source, flow, source row), in normative order.
    let items = sources.len() * d.n * d.h;
    let chunks: Vec<Vec<BinnedTap>> = par::map_range(schedule, items, |item| {
        let (si, rest) = (item / (d.n * d.h), item % (d.n * d.h));
        let (n, y) = (rest / d.h, rest % d.h);
        let fl = sources[si].flows.data();
        let mut taps = [Tap {
            target: 0,
            weight: 0.0,
            dwx: 0.0,
            dwy: 0.0,
        }; 4];
        let mut out = Vec::with_capacity(4 * w);
        for x in 0..w {
            let p = y * w + x;
            let (fx, fy) = (fl[n * 2 * hw + p], fl[(n * 2 + 1) * hw + p]);
            let k = footprint(x as f64 + fx, y as f64 + fy, d.h, d.w, &mut taps);
            for t in &taps[..k] {
                out.push(BinnedTap {
                    target: t.target as u32,
                    src: p as u32,
                    source: si as u16,
                    flow: n as u16,
                    weight: t.weight,
                });
            }
        }
        out
    });
    // Stable counting sort by target row.
    let mut offsets = vec![0usize; d.h + 1];
    for t in chunks.iter().flatten() {
        offsets[t.target as usize / w + 1] += 1;
    }
    for r in 0..d.h {
        offsets[r + 1] += offsets[r];
    }
    let mut cursor = offsets.clone();
    let mut binned = vec![
        BinnedTap {
            target: 0,
            src: 0,
            source: 0,
            flow: 0,
            weight: 0.0
        };
        offsets[d.h]
    ];
    for t in chunks.iter().flatten() {
        let r = t.target as usize / w;
        binned[cursor[r]] = *t;
        cursor[r] += 1;
    }
    drop(chunks);

    let rows = par::map_range(schedule, d.h, |r| {
        let row = &binned[offsets[r]..offsets[r + 1]];
        let base = r * w;
        let mut shift = vec![f64::NEG_INFINITY; w];
        for t in row {
            let zz = z[t.source as usize][t.src as usize];
            let j = t.target as usize - base;
            if t.weight > 0.0 && zz > shift[j] {
                shift[j] = zz;
            }
        }
        for s in &mut shift {
            if *s == f64::NEG_INFINITY {
                *s = 0.0;
            }
        }
        let mut den = vec![0.0; w];
        let mut num = vec![0.0; d.c * w];
        for t in row {
            let src = &sources[t.source as usize];
            let p = t.src as usize;
            let j = t.target as usize - base;
            let (wt, _, _) = tap_weight(
                t.weight,
                z[t.source as usize][p],
                shift[j],
                src.relevance,
                params.exponent_clamp,
            );
            den[j] += wt;
            let vo = value_offset(src, d, t.flow as usize);
            let vals = src.values.data();
            for ch in 0..d.c {
                num[ch * w + j] += wt * vals[vo + ch * hw + p];
            }
        }
        (den, num, shift)
    });
    let mut den = vec![0.0; hw];
    let mut num = vec![0.0; d.c * hw];
    let mut shift = vec![0.0; hw];
    for (r, (rd, rn, rs)) in rows.into_iter().enumerate() {
        den[r * w..(r + 1) * w].copy_from_slice(&rd);
        shift[r * w..(r + 1) * w].copy_from_slice(&rs);
        for ch in 0..d.c {
            num[ch * hw + r * w..ch * hw + (r + 1) * w].copy_from_slice(&rn[ch * w..(ch + 1) * w]);
        }
    }
    (den, num, shift)
}

fn finish(
    d: &Dims,
    den: Vec<f64>,
    mut num: Vec<f64>,
    shift: Vec<f64>,
    params: &SplatParams,
) -> Result<SplatForward> {
    let hw = d.hw();
    if den.iter().chain(&num).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "m2m_splat" });
    }
    let holes: Vec<bool> = den.iter().map(|&v| v <= params.weight_eps).collect();
    for ch in 0..d.c {
        for j in 0..hw {
            let o = &mut num[ch * hw + j];
            *o = if holes[j] {
                params.hole_value
            } else {
                *o / den[j]
            };
        }
    }
    Ok(SplatForward {
        values: Tensor::new([d.c, d.h, d.w], num)?,
        weights: Tensor::new([d.h, d.w], den)?,
        holes,
        shift,
    })
}

/// Nominal multiply-accumulate count of a splat; independent of where taps land.
pub fn splat_macs(
    n_sources: usize,
    n_flows: usize,
    channels: usize,
    height: usize,
    width: usize,
) -> u64 {
    let hw = (height * width) as u64;
    n_sources as u64 * n_flows as u64 * hw * 4 * (channels as u64 + 4) + channels as u64 * hw
}

/// Graph handles of one splat source.
#[derive(Debug, Clone, Copy)]
pub struct SplatSourceVars {
    pub values: Var,
    pub flows: Var,
    pub brightness: Var,
    pub reliability: Var,
    pub relevance: f64,
}

/// Non-differentiable side outputs of a graph splat.
#[derive(Debug, Clone)]
pub struct SplatInfo {
    pub weights: Tensor,
    pub holes: Vec<bool>,
}

impl SplatInfo {
    pub fn hole_ratio(&self) -> f64 {
        self.holes.iter().filter(|&&h| h).count() as f64 / self.holes.len() as f64
    }
}

/// Differentiable splat with respect to values, flows, brightness,
/// reliability and `alpha` (a one-element tensor).
pub fn splat_graph(
    g: &mut Graph,
    sources: &[SplatSourceVars],
    alpha: Var,
    params: &SplatParams,
) -> Result<(Var, SplatInfo)> {
    g.value(alpha).expect_shape("m2m_splat", &[1])?;
    let alpha_v = g.value(alpha).item();
    let fwd = {
        let refs: Vec<SplatSource<'_>> = sources
            .iter()
            .map(|s| SplatSource {
                values: g.value(s.values),
                flows: g.value(s.flows),
                brightness: g.value(s.brightness),
                reliability: g.value(s.reliability),
                relevance: s.relevance,
            })
            .collect();
        splat(&refs, alpha_v, params, g.schedule())?
    };
    let fs = g.shape(sources[0].flows).to_vec();
    let c = fwd.values.shape()[0];
    g.add_macs(splat_macs(sources.len(), fs[0], c, fs[2], fs[3]));
    let info = SplatInfo {
        weights: fwd.weights.clone(),
        holes: fwd.holes.clone(),
    };
    let op = SplatOp {
        sources: sources.to_vec(),
        alpha,
        params: *params,
        out: fwd.values.clone(),
        den: fwd.weights.into_data(),
        shift: fwd.shift,
        holes: fwd.holes,
    };
    let v = g.push_custom(fwd.values, Box::new(op))?;
    Ok((v, info))
}

struct SplatOp {
    sources: Vec<SplatSourceVars>,
    alpha: Var,
    params: SplatParams,
    out: Tensor,
    den: Vec<f64>,
    shift: Vec<f64>,
    holes: Vec<bool>,
}

impl CustomOp for SplatOp {
    fn name(&self) -> &'static str {
        "m2m_splat"
    }

    fn inputs(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self
            .sources
            .iter()
            .flat_map(|s| [s.values, s.flows, s.brightness, s.reliability])
            .collect();
        v.push(self.alpha);
        v
    }

    fn backward(&self, grad: &[f64], sink: &mut GradSink<'_>) {
        let alpha = sink.value(self.alpha).item();
        let refs: Vec<SplatSource<'_>> = self
            .sources
            .iter()
            .map(|s| SplatSource {
                values: sink.value(s.values),
                flows: sink.value(s.flows),
                brightness: sink.value(s.brightness),
                reliability: sink.value(s.reliability),
                relevance: s.relevance,
            })
            .collect();
        let fs = refs[0].flows.shape();
        let d = Dims {
            n: fs[0],
            c: self.out.shape()[0],
            h: fs[2],
            w: fs[3],
        };
        let hw = d.hw();
        let z = exponents(&refs, alpha);
        let out = self.out.data();
        let mut dvals: Vec<Vec<f64>> = refs.iter().map(|s| vec![0.0; s.values.len()]).collect();
        let mut dflows: Vec<Vec<f64>> = refs.iter().map(|s| vec![0.0; s.flows.len()]).collect();
        let mut db: Vec<Vec<f64>> = vec![vec![0.0; hw]; refs.len()];
        let mut ds: Vec<Vec<f64>> = vec![vec![0.0; hw]; refs.len()];
        let mut dalpha = 0.0;
        for_each_tap(&refs, &d, |si, n, p, tap| {
            let j = tap.target;
            if self.holes[j] {
                return;
            }
            let src = &refs[si];
            let (wt, e, clamped) = tap_weight(
                tap.weight,
                z[si][p],
                self.shift[j],
                src.relevance,
                self.params.exponent_clamp,
            );
            let vo = value_offset(src, &d, n);
            let vals = src.values.data();
            let inv = 1.0 / self.den[j];
            let mut dw = 0.0;
            for ch in 0..d.c {
                let gc = grad[ch * hw + j] * inv;
                dvals[si][vo + ch * hw + p] += wt * gc;
                dw += gc * (vals[vo + ch * hw + p] - out[ch * hw + j]);
            }
            let dbil = dw * e * src.relevance;
            dflows[si][n * 2 * hw + p] += dbil * tap.dwx;
            dflows[si][(n * 2 + 1) * hw + p] += dbil * tap.dwy;
            if !clamped {
                let dz = dw * wt;
                let (b, s) = (src.brightness.data()[p], src.reliability.data()[p]);
                db[si][p] += dz * s * alpha;
                ds[si][p] += dz * b * alpha;
                dalpha += dz * b * s;
            }
        });
        drop(refs);
        for (i, s) in self.sources.iter().enumerate() {
            sink.add_slice(s.values, &dvals[i]);
            sink.add_slice(s.flows, &dflows[i]);
            sink.add_slice(s.brightness, &db[i]);
            sink.add_slice(s.reliability, &ds[i]);
        }
        sink.add_slice(self.alpha, &[dalpha]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: SplatParams = SplatParams {
        exponent_clamp: 20.0,
        weight_eps: 1e-12,
        hole_value: 0.0,
    };

    fn src<'a>(
        v: &'a Tensor,
        f: &'a Tensor,
        b: &'a Tensor,
        s: &'a Tensor,
        r: f64,
    ) -> SplatSource<'a> {
        SplatSource {
            values: v,
            flows: f,
            brightness: b,
            reliability: s,
            relevance: r,
        }
    }

    #[test]
    fn footprint_weights_sum_to_one() {
        let mut taps = [Tap {
            target: 0,
            weight: 0.0,
            dwx: 0.0,
            dwy: 0.0,
        }; 4];
        let k = footprint(1.3, 2.6, 5, 5, &mut taps);
        assert_eq!(k, 4);
        let s: f64 = taps.iter().map(|t| t.weight).sum();
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(footprint(-1.5, 0.0, 5, 5, &mut taps), 0);
        assert_eq!(footprint(-0.5, 0.0, 5, 5, &mut taps), 2);
    }

    #[test]
    fn exact_landing_returns_the_value() {
        // 1x3 row, only the middle pixel has non-zero reach: flows move it 1 right.
        let v = Tensor::new([1, 1, 3], vec![0.1, 0.7, 0.3]).unwrap();
        let f = Tensor::new([1, 2, 1, 3], vec![5.0, 1.0, 5.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Tensor::new([1, 3], vec![0.0, -2.0, 0.0]).unwrap();
        let s = Tensor::ones([1, 3]);
        let out = splat(&[src(&v, &f, &b, &s, 0.3)], 1.0, &P, Schedule::Sequential).unwrap();
        assert_eq!(out.values.data()[2], 0.7);
        assert!(out.holes[0] && out.holes[1] && !out.holes[2]);
    }

    #[test]
    fn weighted_mean_of_two_contributors() {
        // Two sources land on pixel 0 with b = 0 and b = -3.
        let (c1, c2) = (0.2, 0.9);
        let v1 = Tensor::new([1, 1, 1], vec![c1]).unwrap();
        let v2 = Tensor::new([1, 1, 1], vec![c2]).unwrap();
        let f = Tensor::zeros([1, 2, 1, 1]);
        let b1 = Tensor::zeros([1, 1]);
        let b2 = Tensor::full([1, 1], -3.0);
        let s = Tensor::ones([1, 1]);
        let out = splat(
            &[src(&v1, &f, &b1, &s, 0.5), src(&v2, &f, &b2, &s, 0.5)],
            1.0,
            &P,
            Schedule::Sequential,
        )
        .unwrap();
        let e = (-3.0f64).exp();
        let expect = (c1 + e * c2) / (1.0 + e);
        assert!((out.values.item() - expect).abs() < 1e-15);

        let same = splat(
            &[src(&v1, &f, &b1, &s, 0.5), src(&v2, &f, &b1, &s, 0.5)],
            1.0,
            &P,
            Schedule::Sequential,
        )
        .unwrap();
        assert!((same.values.item() - (c1 + c2) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn bad_configuration() {
        let v = Tensor::zeros([1, 2, 2]);
        let f = Tensor::zeros([1, 2, 2, 2]);
        let b = Tensor::zeros([2, 2]);
        let bad = SplatParams {
            weight_eps: 0.0,
            ..P
        };
        assert!(splat(&[src(&v, &f, &b, &b, 1.0)], 1.0, &bad, Schedule::Sequential).is_err());
        let wrong = Tensor::zeros([3, 3]);
        assert!(splat(
            &[src(&v, &f, &wrong, &b, 1.0)],
            1.0,
            &P,
            Schedule::Sequential
        )
        .is_err());
        assert!(splat(&[], 1.0, &P, Schedule::Sequential).is_err());
    }

    #[test]
    fn schedules_are_bitwise_identical() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (n, c, h, w) = (3, 2, 17, 13);
        let v = Tensor::uniform([n, c, h, w], 0.0, 1.0, &mut rng);
        let f = Tensor::uniform([n, 2, h, w], -3.0, 3.0, &mut rng);
        let b = Tensor::uniform([h, w], -3.0, 0.0, &mut rng);
        let s = Tensor::uniform([h, w], 0.0, 1.0, &mut rng);
        let alpha: f64 = rng.random_range(0.5..2.0);
        let s2 = b.map(|x| -x / 3.0);
        let sources = [src(&v, &f, &b, &s, 0.4), src(&v, &f, &s, &s2, 0.6)];
        let a = splat(&sources, alpha, &P, Schedule::Sequential).unwrap();
        let p = splat(&sources, alpha, &P, Schedule::Parallel).unwrap();
        assert_eq!(a.values, p.values);
        assert_eq!(a.weights, p.weights);
        assert_eq!(a.holes, p.holes);
    }
}
