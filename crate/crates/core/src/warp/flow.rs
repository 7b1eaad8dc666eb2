use crate::diffcore::ops::sample::{axis, sample_plane};
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::warp::frame::{FlowField, Frame, MultiFlowSet};

/// Which input frame a warped pixel comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Frame0,
    Frame1,
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("time step {t} outside (0,1)")))
    }
}

/// Linear-motion flows at time `t`: 0->1 sub-flows scaled by `t`, 1->0 by `1-t`.
pub fn scale_flows(flows: &MultiFlowSet, t: f64) -> Result<MultiFlowSet> {
    check_time(t)?;
    Ok(flows.map_flows(|f| f.scaled(t), |f| f.scaled(1.0 - t)))
}

/// Linear temporal weight of a contribution from `source`.
pub fn temporal_relevance(source: Source, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(match source {
        Source::Frame0 => 1.0 - t,
        Source::Frame1 => t,
    })
}

/// `output(p) = frame(p + flow(p))`, bilinear with clamp-to-edge.
pub fn backward_warp(frame: &Frame, flow: &FlowField) -> Result<Frame> {
    frame.expect_size("backward_warp", flow.height(), flow.width())?;
    let (c, h, w) = (frame.channels(), frame.height(), frame.width());
    let (dx, dy) = (flow.dx(), flow.dy());
    let mut out = vec![0.0; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let (ax, ay) = (axis(x as f64 + dx[p], w), axis(y as f64 + dy[p], h));
            for ch in 0..c {
                out[ch * h * w + p] = sample_plane(frame.plane(ch), w, ax, ay);
            }
        }
    }
    Frame::new(c, h, w, out)
}

/// Pixel-center grid `[2,H,W]` (x plane then y plane).
pub fn pixel_grid(height: usize, width: usize) -> Tensor {
    let hw = height * width;
    Tensor::from_fn([2, height, width], |i| {
        let p = i % hw;
        if i < hw {
            (p % width) as f64
        } else {
            (p / width) as f64
        }
    })
}

/// Differentiable backward warp of `frame: [C,H,W]` by `flow: [2,H,W]`.
pub fn backward_warp_graph(g: &mut Graph, frame: Var, flow: Var) -> Result<Var> {
    let s = g.shape(flow).to_vec();
    if s.len() != 3 || s[0] != 2 {
        return Err(Error::shape(
            "backward_warp",
            "[2,H,W] flow",
            format!("{s:?}"),
        ));
    }
    let grid = g.constant(pixel_grid(s[1], s[2]));
    let coords = g.add(grid, flow)?;
    g.bilinear_sample(frame, coords)
}

/// Negated channel-L1 photometric residual of each frame against the other,
/// backward-warped with the mean flows. Returns `(b0, b1)` as `[H,W]` maps.
pub fn brightness_consistency(
    i0: &Frame,
    i1: &Frame,
    mean_flow_01: &FlowField,
    mean_flow_10: &FlowField,
) -> Result<(Tensor, Tensor)> {
    if !i0.same_size(i1) || i0.channels() != i1.channels() {
        return Err(Error::shape(
            "brightness_consistency",
            format!("{:?}", i0.tensor().shape()),
            format!("{:?}", i1.tensor().shape()),
        ));
    }
    let one = |a: &Frame, b: &Frame, f: &FlowField| -> Result<Tensor> {
        let warped = backward_warp(b, f)?;
        let (h, w) = (a.height(), a.width());
        let mut out = vec![0.0; h * w];
        for ch in 0..a.channels() {
            for (o, (x, y)) in out.iter_mut().zip(a.plane(ch).iter().zip(warped.plane(ch))) {
                *o -= (x - y).abs();
            }
        }
        Tensor::new([h, w], out)
    };
    Ok((one(i0, i1, mean_flow_01)?, one(i1, i0, mean_flow_10)?))
}

/// Graph form of one direction of [`brightness_consistency`].
pub fn brightness_consistency_graph(
    g: &mut Graph,
    frame: Var,
    other: Var,
    mean_flow: Var,
) -> Result<Var> {
    let warped = backward_warp_graph(g, other, mean_flow)?;
    let d = g.sub(frame, warped)?;
    let a = g.abs(d)?;
    let s = g.sum_axis(a, 0)?;
    g.scale(s, -1.0)
}

/// Bilinear resize of `[C,H,W]` with half-pixel centers and clamp-to-edge.
/// An exact 2x reduction averages each 2x2 block.
pub fn resize_bilinear(t: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    t.expect_rank("resize", 3)?;
    if height == 0 || width == 0 {
        return Err(Error::invalid("resize to an empty size"));
    }
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let (sy, sx) = (h as f64 / height as f64, w as f64 / width as f64);
    let mut out = vec![0.0; c * height * width];
    for y in 0..height {
        let ay = axis((y as f64 + 0.5) * sy - 0.5, h);
        for x in 0..width {
            let ax = axis((x as f64 + 0.5) * sx - 0.5, w);
            for ch in 0..c {
                out[(ch * height + y) * width + x] =
                    sample_plane(&t.data()[ch * h * w..(ch + 1) * h * w], w, ax, ay);
            }
        }
    }
    Tensor::new([c, height, width], out)
}

impl FlowField {
    /// Flow at pyramid level `level`: resized to `(H/2^l, W/2^l)` with vectors scaled by `1/2^l`.
    pub fn at_level(&self, level: usize) -> Result<FlowField> {
        if level == 0 {
            return Ok(self.clone());
        }
        let f = 1usize << level;
        let t = resize_bilinear(self.tensor(), self.height() / f, self.width() / f)?;
        FlowField::from_tensor(t.map(|v| v / f as f64))
    }
}

impl MultiFlowSet {
    /// Every sub-flow and reliability map at pyramid level `level`.
    pub fn at_level(&self, level: usize) -> Result<MultiFlowSet> {
        if level == 0 {
            return Ok(self.clone());
        }
        let f = 1usize << level;
        let (h, w) = (self.height() / f, self.width() / f);
        let down = |flows: &[FlowField]| {
            flows
                .iter()
                .map(|fl| fl.at_level(level))
                .collect::<Result<Vec<_>>>()
        };
        let rel = |s: &Tensor| -> Result<Tensor> {
            let t = s.clone().reshape([1, s.shape()[0], s.shape()[1]])?;
            resize_bilinear(&t, h, w)?.reshape([h, w])
        };
        Ok(MultiFlowSet::with_parts(
            down(self.forward())?,
            down(self.backward())?,
            rel(self.reliability0())?,
            rel(self.reliability1())?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_scaling() {
        let f01 = FlowField::from_fn(1, 1, |_, _| (2.0, -4.0));
        let f10 = FlowField::from_fn(1, 1, |_, _| (1.0, 1.0));
        let m = MultiFlowSet::with_unit_reliability(vec![f01.clone()], vec![f10.clone()]).unwrap();
        let s = scale_flows(&m, 0.25).unwrap();
        assert_eq!(s.forward()[0].at(0, 0), (0.5, -1.0));
        assert_eq!(s.backward()[0].at(0, 0), (0.75, 0.75));
        let half = scale_flows(&m, 0.5).unwrap();
        assert_eq!(half.forward()[0].at(0, 0), (1.0, -2.0));
        assert_eq!(half.backward()[0].at(0, 0), (0.5, 0.5));
        for t in [0.0, 1.0, -0.1, 1.5] {
            assert!(scale_flows(&m, t).is_err());
        }
    }

    #[test]
    fn relevance() {
        assert_eq!(temporal_relevance(Source::Frame0, 0.25).unwrap(), 0.75);
        assert_eq!(temporal_relevance(Source::Frame1, 0.25).unwrap(), 0.25);
        assert_eq!(temporal_relevance(Source::Frame0, 0.5).unwrap(), 0.5);
        assert_eq!(temporal_relevance(Source::Frame1, 0.5).unwrap(), 0.5);
        assert!(temporal_relevance(Source::Frame1, 1.0).is_err());
    }

    #[test]
    fn backward_warp_cases() {
        let f = Frame::from_fn(2, 4, 5, |c, y, x| (c + y * 5 + x) as f64 / 40.0);
        assert_eq!(backward_warp(&f, &FlowField::zeros(4, 5)).unwrap(), f);

        let shifted = backward_warp(&f, &FlowField::from_fn(4, 5, |_, _| (1.0, 0.0))).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(shifted.get(1, y, x), f.get(1, y, x + 1));
            }
        }

        // Two-pixel gradient 0.2 -> 0.6 sampled half a pixel right: (0.2 + 0.6) / 2.
        let two = Frame::new(1, 1, 2, vec![0.2, 0.6]).unwrap();
        let mid = backward_warp(&two, &FlowField::from_fn(1, 2, |_, _| (0.5, 0.0))).unwrap();
        assert!((mid.get(0, 0, 0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn brightness_cases() {
        let c = Frame::filled(3, 5, 5, 0.3);
        let fl = FlowField::from_fn(5, 5, |_, _| (0.7, -0.2));
        let (b0, b1) = brightness_consistency(&c, &c, &fl, &fl).unwrap();
        assert!(b0.data().iter().chain(b1.data()).all(|&v| v.abs() < 1e-15));

        let white = Frame::filled(3, 2, 2, 1.0);
        let black = Frame::filled(3, 2, 2, 0.0);
        let z = FlowField::zeros(2, 2);
        let (b0, _) = brightness_consistency(&white, &black, &z, &z).unwrap();
        assert!(b0.data().iter().all(|&v| v == -3.0));

        // Horizontal ramp I1(x) = x/10, I0 = 0: sampling at x + 0.25 gives residual (x + 0.25)/10.
        let zero = Frame::zeros(1, 3, 6);
        let ramp = Frame::from_fn(1, 3, 6, |_, _, x| x as f64 / 10.0);
        let q = FlowField::from_fn(3, 6, |_, _| (0.25, 0.0));
        let (b0, _) = brightness_consistency(&zero, &ramp, &q, &q).unwrap();
        for x in 0..5 {
            assert!((b0.data()[x] + (x as f64 + 0.25) / 10.0).abs() < 1e-15);
        }
    }

    #[test]
    fn graph_brightness_matches_eager() {
        let a = Frame::from_fn(2, 4, 4, |c, y, x| {
            ((c * 7 + y * 3 + x) as f64 * 0.37).sin().abs()
        });
        let b = Frame::from_fn(2, 4, 4, |c, y, x| {
            ((c * 5 + y + x * 2) as f64 * 0.21).cos().abs()
        });
        let f = FlowField::from_fn(4, 4, |y, x| (0.3 * x as f64 - 0.4, 0.2 * y as f64 - 0.1));
        let (b0, _) = brightness_consistency(&a, &b, &f, &f).unwrap();
        let mut g = Graph::new();
        let (va, vb, vf) = (
            g.constant(a.tensor().clone()),
            g.constant(b.tensor().clone()),
            g.constant(f.tensor().clone()),
        );
        let out = brightness_consistency_graph(&mut g, va, vb, vf).unwrap();
        assert!(g.value(out).max_abs_diff(&b0) < 1e-14);
    }

    #[test]
    fn level_resize_averages_blocks() {
        let f = FlowField::from_fn(4, 4, |y, x| ((y * 4 + x) as f64, 2.0));
        let l1 = f.at_level(1).unwrap();
        assert_eq!((l1.height(), l1.width()), (2, 2));
        // block mean of (0,1,4,5) = 2.5, halved
        assert_eq!(l1.at(0, 0), (1.25, 1.0));
    }
}
