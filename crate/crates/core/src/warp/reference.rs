//! Direct loop implementation of the fused splat, kept deliberately simple
//! as an oracle for the production path.

use crate::warp::frame::{Frame, MultiFlowSet};
use crate::warp::fusion::FusionConfig;

/// Reference fusion: returns the fused `[C,H,W]` values (holes at 0) and the hole mask.
pub fn reference_splat_fuse(
    i0: &Frame,
    i1: &Frame,
    flows_at_t: &MultiFlowSet,
    b0: &[f64],
    b1: &[f64],
    cfg: &FusionConfig,
    t: f64,
) -> (Vec<f64>, Vec<bool>) {
    let (c, h, w) = (i0.channels(), i0.height(), i0.width());
    let frames = [i0, i1];
    let flows = [flows_at_t.forward(), flows_at_t.backward()];
    let bright = [b0, b1];
    let rel = [
        flows_at_t.reliability0().data(),
        flows_at_t.reliability1().data(),
    ];
    let time = [1.0 - t, t];

    // Every contribution: (target y, target x, bilinear weight, exponent, relevance, source frame, source y, source x).
    let mut contribs = Vec::new();
    for f in 0..2 {
        for flow in flows[f] {
            for y in 0..h {
                for x in 0..w {
                    let (dx, dy) = flow.at(y, x);
                    let (px, py) = (x as f64 + dx, y as f64 + dy);
                    let (fx, fy) = (px.floor(), py.floor());
                    let (ax, ay) = (px - fx, py - fy);
                    let z = bright[f][y * w + x] * rel[f][y * w + x] * cfg.alpha;
                    for (oy, ox, wb) in [
                        (0.0, 0.0, (1.0 - ax) * (1.0 - ay)),
                        (0.0, 1.0, ax * (1.0 - ay)),
                        (1.0, 0.0, (1.0 - ax) * ay),
                        (1.0, 1.0, ax * ay),
                    ] {
                        let (tx, ty) = (fx + ox, fy + oy);
                        if tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 {
                            continue;
                        }
                        contribs.push((ty as usize, tx as usize, wb, z, time[f], f, y, x));
                    }
                }
            }
        }
    }

    let mut shift = vec![f64::NEG_INFINITY; h * w];
    for &(ty, tx, wb, z, ..) in &contribs {
        if wb > 0.0 {
            shift[ty * w + tx] = shift[ty * w + tx].max(z);
        }
    }
    let mut num = vec![0.0; c * h * w];
    let mut den = vec![0.0; h * w];
    for &(ty, tx, wb, z, r, f, sy, sx) in &contribs {
        let j = ty * w + tx;
        let m = if shift[j].is_finite() { shift[j] } else { 0.0 };
        let weight = wb * (z - m).clamp(-cfg.exponent_clamp, cfg.exponent_clamp).exp() * r;
        den[j] += weight;
        for ch in 0..c {
            num[ch * h * w + j] += weight * frames[f].get(ch, sy, sx);
        }
    }
    let holes: Vec<bool> = den.iter().map(|&d| d <= cfg.weight_eps).collect();
    for ch in 0..c {
        for j in 0..h * w {
            num[ch * h * w + j] = if holes[j] {
                0.0
            } else {
                num[ch * h * w + j] / den[j]
            };
        }
    }
    (num, holes)
}
