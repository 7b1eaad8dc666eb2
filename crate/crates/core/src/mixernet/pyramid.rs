use rand::Rng;

use crate::diffcore::{Bound, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::par::Schedule;
use crate::warp::{resize_bilinear, splat_direction, Frame, FusionConfig, MultiFlowSet};

pub const LEVELS: usize = 4;

/// Four levels of features; level `l` is `(H/2^l, W/2^l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<Frame>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Frame>) -> Result<Self> {
        if levels.len() != LEVELS {
            return Err(Error::invalid(format!(
                "a pyramid has {LEVELS} levels, got {}",
                levels.len()
            )));
        }
        let (h, w) = (levels[0].height(), levels[0].width());
        for (l, f) in levels.iter().enumerate() {
            f.expect_size("feature_pyramid", h >> l, w >> l)?;
        }
        Ok(FeaturePyramid { levels })
    }

    pub fn channels(&self) -> [usize; LEVELS] {
        std::array::from_fn(|l| self.levels[l].channels())
    }

    /// Crops the `side x side` level-0 window at `(top, left)` and the
    /// matching window `side/2^l` at `(top/2^l, left/2^l)` on every level.
    pub fn crop(&self, top: usize, left: usize, side: usize) -> Result<Vec<Tensor>> {
        let align = 1 << (LEVELS - 1);
        if !top.is_multiple_of(align) || !left.is_multiple_of(align) || !side.is_multiple_of(align)
        {
            return Err(Error::invalid(format!(
                "crop ({top},{left}) side {side} is not aligned to {align}"
            )));
        }
        self.levels
            .iter()
            .enumerate()
            .map(|(l, f)| crop_tensor(f.tensor(), top >> l, left >> l, side >> l, side >> l))
            .collect()
    }
}

/// Spatial crop of a `[C,H,W]` tensor.
pub fn crop_tensor(t: &Tensor, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor> {
    t.expect_rank("crop", 3)?;
    let (c, hh, ww) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    if top + h > hh || left + w > ww {
        return Err(Error::OutOfRange(format!(
            "crop {h}x{w} at ({top},{left}) exceeds {hh}x{ww}"
        )));
    }
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in top..top + h {
            let row = (ch * hh + y) * ww;
            out.extend_from_slice(&t.data()[row + left..row + left + w]);
        }
    }
    Tensor::new([c, h, w], out)
}

/// Encoder channel counts: level 0 is the image itself.
pub fn pyramid_channels(image_channels: usize, widths: &[usize; LEVELS]) -> [usize; LEVELS] {
    [image_channels, widths[1], widths[2], widths[3]]
}

/// Registers `{prefix}.l{1,2,3}.{w,b}`.
pub fn init_pyramid_encoder<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    channels: &[usize; LEVELS],
    rng: &mut R,
) -> Result<()> {
    for l in 1..LEVELS {
        let (cin, cout) = (channels[l - 1], channels[l]);
        let a = 1.0 / ((cin * 9) as f64).sqrt();
        store.insert(
            format!("{prefix}.l{l}.w"),
            Tensor::uniform([cout, cin, 3, 3], -a, a, rng),
        )?;
        store.insert(format!("{prefix}.l{l}.b"), Tensor::zeros([cout]))?;
    }
    Ok(())
}

/// Level 0 is `image`; level `l` is `gelu(conv_stride2(level l-1))`.
pub fn build_context_pyramid_graph(
    g: &mut Graph,
    p: &Bound<'_>,
    prefix: &str,
    image: Var,
) -> Result<Vec<Var>> {
    let s = g.shape(image).to_vec();
    let align = 1 << (LEVELS - 1);
    if s.len() != 3 || !s[1].is_multiple_of(align) || !s[2].is_multiple_of(align) {
        return Err(Error::invalid(format!(
            "pyramid input {s:?} must have H and W divisible by {align}"
        )));
    }
    let mut levels = vec![image];
    for l in 1..LEVELS {
        let c = g.conv2d(
            levels[l - 1],
            p.get(&format!("{prefix}.l{l}.w"))?,
            Some(p.get(&format!("{prefix}.l{l}.b"))?),
            2,
        )?;
        levels.push(g.gelu(c)?);
    }
    Ok(levels)
}

/// Eager pyramid with frozen parameters; returns the pyramid and its MAC count.
pub fn build_context_pyramid(
    image: &Frame,
    store: &ParamStore,
    prefix: &str,
    schedule: Schedule,
) -> Result<(FeaturePyramid, u64)> {
    let mut g = Graph::with_schedule(schedule);
    let p = store.bind_frozen(&mut g);
    let x = g.constant(image.tensor().clone());
    let levels = build_context_pyramid_graph(&mut g, &p, prefix, x)?;
    let frames = levels
        .iter()
        .map(|&v| Frame::from_tensor(g.value(v).clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok((FeaturePyramid::new(frames)?, g.macs()))
}

/// Warps both pyramids to time `t`, each direction fused on its own.
/// `flows_at_t` is at level-0 resolution and already time-scaled; `b0`, `b1`
/// are level-0 brightness maps resized per level. Returns the warped pyramids
/// and the MACs spent.
pub fn splat_pyramid(
    pyr0: &FeaturePyramid,
    pyr1: &FeaturePyramid,
    flows_at_t: &MultiFlowSet,
    b0: &Tensor,
    b1: &Tensor,
    cfg: &FusionConfig,
    schedule: Schedule,
) -> Result<(FeaturePyramid, FeaturePyramid, u64)> {
    let (mut out0, mut out1) = (Vec::new(), Vec::new());
    let mut macs = 0;
    for l in 0..LEVELS {
        let f = flows_at_t.at_level(l)?;
        let (h, w) = (f.height(), f.width());
        let bl = |b: &Tensor| -> Result<Tensor> {
            if l == 0 {
                return Ok(b.clone());
            }
            let t = b.clone().reshape([1, b.shape()[0], b.shape()[1]])?;
            resize_bilinear(&t, h, w)?.reshape([h, w])
        };
        let (fwd, bwd) = (f.stacked_forward(), f.stacked_backward());
        let a = splat_direction(
            &pyr0.levels[l],
            &fwd,
            &bl(b0)?,
            f.reliability0(),
            cfg,
            schedule,
        )?;
        let b = splat_direction(
            &pyr1.levels[l],
            &bwd,
            &bl(b1)?,
            f.reliability1(),
            cfg,
            schedule,
        )?;
        macs += crate::warp::splat_macs(1, f.n_flows(), pyr0.levels[l].channels(), h, w)
            + crate::warp::splat_macs(1, f.n_flows(), pyr1.levels[l].channels(), h, w);
        out0.push(a.frame);
        out1.push(b.frame);
    }
    Ok((FeaturePyramid::new(out0)?, FeaturePyramid::new(out1)?, macs))
}
