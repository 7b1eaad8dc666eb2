use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::par::Schedule;
use crate::ssr::ErrorMap;
use crate::warp::flow::{temporal_relevance, Source};
use crate::warp::frame::{Frame, MultiFlowSet};
use crate::warp::splat::{
    splat, splat_graph, SplatInfo, SplatParams, SplatSource, SplatSourceVars,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HolePolicy {
    /// Holes stay at zero.
    MarkOnly,
    /// Holes receive `(1-t)*I0 + t*I1`.
    BlendInputs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub alpha: f64,
    pub exponent_clamp: f64,
    pub weight_eps: f64,
    pub hole_policy: HolePolicy,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            alpha: 1.0,
            exponent_clamp: 20.0,
            weight_eps: 1e-12,
            hole_policy: HolePolicy::BlendInputs,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weight_eps.is_nan()
            || self.weight_eps <= 0.0
            || self.exponent_clamp.is_nan()
            || self.exponent_clamp <= 0.0
        {
            return Err(Error::invalid(
                "weight_eps and exponent_clamp must be positive",
            ));
        }
        if !self.alpha.is_finite() {
            return Err(Error::invalid("alpha must be finite"));
        }
        Ok(())
    }

    pub(crate) fn params(&self, hole_value: f64) -> SplatParams {
        SplatParams {
            exponent_clamp: self.exponent_clamp,
            weight_eps: self.weight_eps,
            hole_value,
        }
    }
}

/// Fused frame with per-pixel total weight and hole mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatOutput {
    pub frame: Frame,
    pub weights: Tensor,
    pub holes: Vec<bool>,
}

impl SplatOutput {
    pub fn hole_count(&self) -> usize {
        self.holes.iter().filter(|&&h| h).count()
    }

    pub fn hole_ratio(&self) -> f64 {
        self.hole_count() as f64 / self.holes.len() as f64
    }
}

fn check_pair(
    i0: &Frame,
    i1: &Frame,
    flows: &MultiFlowSet,
    b0: &Tensor,
    b1: &Tensor,
) -> Result<()> {
    let (h, w) = (flows.height(), flows.width());
    i0.expect_size("m2m_splat_fuse", h, w)?;
    i1.expect_size("m2m_splat_fuse", h, w)?;
    if i0.channels() != i1.channels() {
        return Err(Error::shape(
            "m2m_splat_fuse",
            format!("{} channels", i0.channels()),
            i1.channels(),
        ));
    }
    b0.expect_shape("m2m_splat_fuse", &[h, w])?;
    b1.expect_shape("m2m_splat_fuse", &[h, w])
}

/// Fuses both frames at time `t`; `flows_at_t` must already be time-scaled.
pub fn m2m_splat_fuse(
    i0: &Frame,
    i1: &Frame,
    flows_at_t: &MultiFlowSet,
    b0: &Tensor,
    b1: &Tensor,
    cfg: &FusionConfig,
    t: f64,
) -> Result<SplatOutput> {
    m2m_splat_fuse_with(i0, i1, flows_at_t, b0, b1, cfg, t, Schedule::default())
}

#[allow(clippy::too_many_arguments)]
pub fn m2m_splat_fuse_with(
    i0: &Frame,
    i1: &Frame,
    flows_at_t: &MultiFlowSet,
    b0: &Tensor,
    b1: &Tensor,
    cfg: &FusionConfig,
    t: f64,
    schedule: Schedule,
) -> Result<SplatOutput> {
    cfg.validate()?;
    check_pair(i0, i1, flows_at_t, b0, b1)?;
    let (f0, f1) = (flows_at_t.stacked_forward(), flows_at_t.stacked_backward());
    let sources = [
        SplatSource {
            values: i0.tensor(),
            flows: &f0,
            brightness: b0,
            reliability: flows_at_t.reliability0(),
            relevance: temporal_relevance(Source::Frame0, t)?,
        },
        SplatSource {
            values: i1.tensor(),
            flows: &f1,
            brightness: b1,
            reliability: flows_at_t.reliability1(),
            relevance: temporal_relevance(Source::Frame1, t)?,
        },
    ];
    let out = splat(&sources, cfg.alpha, &cfg.params(0.0), schedule)?;
    Ok(SplatOutput {
        frame: Frame::from_tensor(out.values)?,
        weights: out.weights,
        holes: out.holes,
    })
}

/// Splats one direction's values with unit temporal relevance.
pub fn splat_direction(
    values: &Frame,
    flows: &Tensor,
    brightness: &Tensor,
    reliability: &Tensor,
    cfg: &FusionConfig,
    schedule: Schedule,
) -> Result<SplatOutput> {
    cfg.validate()?;
    let sources = [SplatSource {
        values: values.tensor(),
        flows,
        brightness,
        reliability,
        relevance: 1.0,
    }];
    let out = splat(&sources, cfg.alpha, &cfg.params(0.0), schedule)?;
    Ok(SplatOutput {
        frame: Frame::from_tensor(out.values)?,
        weights: out.weights,
        holes: out.holes,
    })
}

fn check_scores(e: &Tensor, n: usize, h: usize, w: usize) -> Result<Tensor> {
    e.expect_shape("splat_error", &[n, h, w])?;
    if let Some(v) = e.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::OutOfRange(format!("error score {v} outside [0,1]")));
    }
    e.clone().reshape([n, 1, h, w])
}

/// Fuses per-sub-flow error scores (`[N,H,W]` per direction) into an
/// error map; holes receive 1.0.
pub fn splat_error(
    errors0: &Tensor,
    errors1: &Tensor,
    flows_at_t: &MultiFlowSet,
    b0: &Tensor,
    b1: &Tensor,
    cfg: &FusionConfig,
    t: f64,
) -> Result<ErrorMap> {
    cfg.validate()?;
    let (n, h, w) = (
        flows_at_t.n_flows(),
        flows_at_t.height(),
        flows_at_t.width(),
    );
    let (e0, e1) = (
        check_scores(errors0, n, h, w)?,
        check_scores(errors1, n, h, w)?,
    );
    b0.expect_shape("splat_error", &[h, w])?;
    b1.expect_shape("splat_error", &[h, w])?;
    let (f0, f1) = (flows_at_t.stacked_forward(), flows_at_t.stacked_backward());
    let sources = [
        SplatSource {
            values: &e0,
            flows: &f0,
            brightness: b0,
            reliability: flows_at_t.reliability0(),
            relevance: temporal_relevance(Source::Frame0, t)?,
        },
        SplatSource {
            values: &e1,
            flows: &f1,
            brightness: b1,
            reliability: flows_at_t.reliability1(),
            relevance: temporal_relevance(Source::Frame1, t)?,
        },
    ];
    let out = splat(&sources, cfg.alpha, &cfg.params(1.0), Schedule::default())?;
    // Rounding can push a convex combination of values in [0,1] a hair outside.
    ErrorMap::from_tensor(out.values.reshape([h, w])?.map(|v| v.clamp(0.0, 1.0)))
}

/// Applies `policy` at hole pixels of `out`.
pub fn fill_holes(
    out: &SplatOutput,
    i0: &Frame,
    i1: &Frame,
    t: f64,
    policy: HolePolicy,
) -> Result<Frame> {
    let mut frame = out.frame.clone();
    if policy == HolePolicy::MarkOnly {
        return Ok(frame);
    }
    temporal_relevance(Source::Frame0, t)?;
    let (h, w) = (frame.height(), frame.width());
    i0.expect_size("fill_holes", h, w)?;
    i1.expect_size("fill_holes", h, w)?;
    let hw = h * w;
    let (a, b) = (i0.data(), i1.data());
    for (k, v) in frame.data_mut().iter_mut().enumerate() {
        if out.holes[k % hw] {
            *v = (1.0 - t) * a[k] + t * b[k];
        }
    }
    Ok(frame)
}

/// Graph handles for a two-frame fusion.
#[derive(Debug, Clone, Copy)]
pub struct FuseVars {
    /// `[C,H,W]` or `[N,C,H,W]` values of frame 0.
    pub values0: Var,
    pub values1: Var,
    /// `[N,2,H,W]` time-scaled sub-flows.
    pub flows0: Var,
    pub flows1: Var,
    pub brightness0: Var,
    pub brightness1: Var,
    pub reliability0: Var,
    pub reliability1: Var,
    /// One-element tensor.
    pub alpha: Var,
}

fn fuse_graph(
    g: &mut Graph,
    v: &FuseVars,
    cfg: &FusionConfig,
    t: f64,
    hole_value: f64,
) -> Result<(Var, SplatInfo)> {
    cfg.validate()?;
    let sources = [
        SplatSourceVars {
            values: v.values0,
            flows: v.flows0,
            brightness: v.brightness0,
            reliability: v.reliability0,
            relevance: temporal_relevance(Source::Frame0, t)?,
        },
        SplatSourceVars {
            values: v.values1,
            flows: v.flows1,
            brightness: v.brightness1,
            reliability: v.reliability1,
            relevance: temporal_relevance(Source::Frame1, t)?,
        },
    ];
    splat_graph(g, &sources, v.alpha, &cfg.params(hole_value))
}

/// Differentiable [`m2m_splat_fuse`]; `cfg.alpha` is ignored in favour of `v.alpha`.
pub fn m2m_splat_fuse_graph(
    g: &mut Graph,
    v: &FuseVars,
    cfg: &FusionConfig,
    t: f64,
) -> Result<(Var, SplatInfo)> {
    fuse_graph(g, v, cfg, t, 0.0)
}

/// Differentiable [`splat_error`] over `[N,1,H,W]` score tensors; returns `[1,H,W]`.
pub fn splat_error_graph(
    g: &mut Graph,
    v: &FuseVars,
    cfg: &FusionConfig,
    t: f64,
) -> Result<(Var, SplatInfo)> {
    for s in [v.values0, v.values1] {
        let shape = g.shape(s);
        if shape.len() != 4 || shape[1] != 1 {
            return Err(Error::shape(
                "splat_error",
                "[N,1,H,W] scores",
                format!("{shape:?}"),
            ));
        }
    }
    fuse_graph(g, v, cfg, t, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::frame::FlowField;

    fn still(h: usize, w: usize, n: usize) -> MultiFlowSet {
        MultiFlowSet::replicate(&FlowField::zeros(h, w), &FlowField::zeros(h, w), n, false).unwrap()
    }

    #[test]
    fn zero_flow_identity() {
        let i = Frame::from_fn(3, 6, 5, |c, y, x| {
            ((c + 2 * y + 3 * x) as f64 * 0.13).sin().abs()
        });
        let b = Tensor::zeros([6, 5]);
        let out = m2m_splat_fuse(
            &i,
            &i,
            &still(6, 5, 4),
            &b,
            &b,
            &FusionConfig::default(),
            0.3,
        )
        .unwrap();
        assert_eq!(out.hole_count(), 0);
        assert!(out.frame.tensor().max_abs_diff(i.tensor()) < 1e-12);
    }

    #[test]
    fn error_scores() {
        let (h, w, n) = (4, 4, 2);
        let m = still(h, w, n);
        let b = Tensor::zeros([h, w]);
        let cfg = FusionConfig::default();
        let zeros = Tensor::zeros([n, h, w]);
        let ones = Tensor::ones([n, h, w]);
        let e = splat_error(&zeros, &zeros, &m, &b, &b, &cfg, 0.5).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
        let e = splat_error(&ones, &ones, &m, &b, &b, &cfg, 0.5).unwrap();
        assert!(e.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(splat_error(&Tensor::full([n, h, w], 1.5), &zeros, &m, &b, &b, &cfg, 0.5).is_err());

        // A flow pushing everything off-frame leaves holes scored 1.
        let away = FlowField::from_fn(h, w, |_, _| (10.0, 0.0));
        let gone = MultiFlowSet::replicate(&away, &away, n, false).unwrap();
        let e = splat_error(&zeros, &zeros, &gone, &b, &b, &cfg, 0.5).unwrap();
        assert!(e.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mixed_scores_match_scalar_formula() {
        // Frame 0 carries score 0.2 with b=0, frame 1 carries 0.9 with b=-3; t=0.5 gives equal r.
        let m = still(1, 1, 1);
        let cfg = FusionConfig::default();
        let e0 = Tensor::full([1, 1, 1], 0.2);
        let e1 = Tensor::full([1, 1, 1], 0.9);
        let e = splat_error(
            &e0,
            &e1,
            &m,
            &Tensor::zeros([1, 1]),
            &Tensor::full([1, 1], -3.0),
            &cfg,
            0.5,
        )
        .unwrap();
        let k = (-3.0f64).exp();
        assert!((e.data()[0] - (0.2 + k * 0.9) / (1.0 + k)).abs() < 1e-15);
    }

    #[test]
    fn hole_filling() {
        let i0 = Frame::filled(2, 2, 3, 0.2);
        let i1 = Frame::filled(2, 2, 3, 0.6);
        let mut out = SplatOutput {
            frame: Frame::filled(2, 2, 3, 0.5),
            weights: Tensor::ones([2, 3]),
            holes: vec![false; 6],
        };
        assert_eq!(
            fill_holes(&out, &i0, &i1, 0.25, HolePolicy::BlendInputs).unwrap(),
            out.frame
        );
        out.holes[4] = true;
        let f = fill_holes(&out, &i0, &i1, 0.25, HolePolicy::BlendInputs).unwrap();
        assert!((f.get(1, 1, 1) - (0.75 * 0.2 + 0.25 * 0.6)).abs() < 1e-15);
        assert_eq!(f.get(1, 0, 0), 0.5);
        assert_eq!(
            fill_holes(&out, &i0, &i1, 0.25, HolePolicy::MarkOnly).unwrap(),
            out.frame
        );

        let all = SplatOutput {
            frame: Frame::zeros(2, 2, 3),
            weights: Tensor::zeros([2, 3]),
            holes: vec![true; 6],
        };
        let f = fill_holes(&all, &i0, &i1, 0.5, HolePolicy::BlendInputs).unwrap();
        assert!(f.data().iter().all(|v| (v - 0.4).abs() < 1e-15));
    }
}
