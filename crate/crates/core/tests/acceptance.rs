//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero on any failure.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use m2m_core::diffcore::{AdamConfig, AdamState, Graph, ParamStore, Tensor};
use m2m_core::lowrank::rank1_compose;
use m2m_core::mixernet::{prn_refine_patch, refine_patch, PatchPyramids, PrnConfig, LEVELS};
use m2m_core::par::Schedule;
use m2m_core::pipeline::checks::{gradient_suite, GRAD_TOLERANCE};
use m2m_core::pipeline::{
    decode_flo, decode_image, encode_flo, encode_image, interpolate, interpolate_frames, write_flo,
    write_image, ImageKind, InterpolationInputs, InterpolationRequest, InterpolationSettings,
    Prepared, RunManifest, SsrSettings, TimeSpec,
};
use m2m_core::ssr::{charbonnier, charbonnier_value, err_loss, select_top_p, ErrorMap};
use m2m_core::warp::{
    m2m_splat_fuse_with, reference_splat_fuse, scale_flows, splat_error_graph, FlowField, Frame,
    FuseVars, FusionConfig, HolePolicy, MultiFlowSet,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Outcome = Result<String, String>;
type Criterion = fn() -> Outcome;

const MARK: FusionConfig = FusionConfig {
    alpha: 1.0,
    exponent_clamp: 20.0,
    weight_eps: 1e-12,
    hole_policy: HolePolicy::MarkOnly,
};

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

struct Scene {
    i0: Frame,
    i1: Frame,
    flows: MultiFlowSet,
    b0: Tensor,
    b1: Tensor,
    t: f64,
}

fn scene(rng: &mut ChaCha8Rng, h: usize, w: usize, n: usize, mag: f64) -> Scene {
    let i0 = Frame::from_tensor(Tensor::uniform([3, h, w], 0.0, 1.0, rng)).unwrap();
    let i1 = Frame::from_tensor(Tensor::uniform([3, h, w], 0.0, 1.0, rng)).unwrap();
    let fwd: Vec<_> = (0..n)
        .map(|_| FlowField::from_tensor(Tensor::uniform([2, h, w], -mag, mag, rng)).unwrap())
        .collect();
    let bwd: Vec<_> = (0..n)
        .map(|_| FlowField::from_tensor(Tensor::uniform([2, h, w], -mag, mag, rng)).unwrap())
        .collect();
    let s0 = Tensor::uniform([h, w], 0.0, 1.0, rng);
    let s1 = Tensor::uniform([h, w], 0.0, 1.0, rng);
    let flows = MultiFlowSet::new(fwd, bwd, s0, s1).unwrap();
    let b0 = Tensor::uniform([h, w], -2.0, 0.0, rng);
    let b1 = Tensor::uniform([h, w], -2.0, 0.0, rng);
    let t = rng.random_range(0.05..0.95);
    Scene {
        i0,
        i1,
        flows,
        b0,
        b1,
        t,
    }
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let reports = gradient_suite(0).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} {:.2e}", r.name, r.max_rel_error))
        .collect();
    ensure(failed.is_empty(), || {
        format!("above {GRAD_TOLERANCE:e}: {}", failed.join(", "))
    })?;
    ensure(secs < 300.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} checks, max rel err {worst:.2e} <= {GRAD_TOLERANCE:e}, {secs:.1}s < 300s",
        reports.len()
    ))
}

fn c2_splat_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let s = scene(&mut rng, 64, 64, 4, 6.0);
        let out = m2m_splat_fuse_with(
            &s.i0,
            &s.i1,
            &s.flows,
            &s.b0,
            &s.b1,
            &MARK,
            s.t,
            Schedule::Parallel,
        )
        .map_err(err)?;
        let (reference, holes) =
            reference_splat_fuse(&s.i0, &s.i1, &s.flows, s.b0.data(), s.b1.data(), &MARK, s.t);
        ensure(holes == out.holes, || {
            format!("instance {k}: hole masks differ")
        })?;
        worst = out
            .frame
            .data()
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(worst, f64::max);
    }
    ensure(worst <= 1e-10, || format!("max |diff| {worst:e}"))?;
    Ok(format!(
        "20 instances 64x64 N=4, max |diff| {worst:.2e} <= 1e-10"
    ))
}

fn contributor_range(s: &Scene) -> Vec<(f64, f64)> {
    let (h, w) = (s.i0.height(), s.i0.width());
    let mut range = vec![(f64::INFINITY, f64::NEG_INFINITY); 3 * h * w];
    for (frame, flows) in [(&s.i0, s.flows.forward()), (&s.i1, s.flows.backward())] {
        for f in flows {
            for y in 0..h {
                for x in 0..w {
                    let (dx, dy) = f.at(y, x);
                    let (px, py) = (x as f64 + dx, y as f64 + dy);
                    let (x0, y0) = (px.floor(), py.floor());
                    for (tx, ty) in [
                        (x0, y0),
                        (x0 + 1.0, y0),
                        (x0, y0 + 1.0),
                        (x0 + 1.0, y0 + 1.0),
                    ] {
                        let wb = (1.0 - (px - tx).abs()) * (1.0 - (py - ty).abs());
                        if tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 || wb <= 0.0 {
                            continue;
                        }
                        for c in 0..3 {
                            let r = &mut range[(c * h + ty as usize) * w + tx as usize];
                            let v = frame.get(c, y, x);
                            *r = (r.0.min(v), r.1.max(v));
                        }
                    }
                }
            }
        }
    }
    range
}

fn c3_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, w) = (12, 14);
    let hw = h * w;
    let (mut shift, mut hull, mut constant, mut identity) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let s = scene(&mut rng, h, w, 3, 3.0);
        let unit = MultiFlowSet::with_unit_reliability(
            s.flows.forward().to_vec(),
            s.flows.backward().to_vec(),
        )
        .map_err(err)?;
        let k = rng.random_range(-5.0..5.0);
        let a = m2m_splat_fuse_with(
            &s.i0,
            &s.i1,
            &unit,
            &s.b0,
            &s.b1,
            &MARK,
            s.t,
            Schedule::Sequential,
        )
        .map_err(err)?;
        let b = m2m_splat_fuse_with(
            &s.i0,
            &s.i1,
            &unit,
            &s.b0.map(|v| v + k),
            &s.b1.map(|v| v + k),
            &MARK,
            s.t,
            Schedule::Sequential,
        )
        .map_err(err)?;
        ensure(a.holes == b.holes, || "shift changed the hole mask".into())?;
        shift = shift.max(a.frame.tensor().max_abs_diff(b.frame.tensor()));

        let out = m2m_splat_fuse_with(
            &s.i0,
            &s.i1,
            &s.flows,
            &s.b0,
            &s.b1,
            &MARK,
            s.t,
            Schedule::Sequential,
        )
        .map_err(err)?;
        for (i, ((&v, &(lo, hi)), _)) in out
            .frame
            .data()
            .iter()
            .zip(&contributor_range(&s))
            .zip(0..)
            .enumerate()
        {
            if !out.holes[i % hw] {
                hull = hull.max(lo - v).max(v - hi);
            }
        }

        let v = rng.random_range(0.0..1.0);
        let c = Frame::filled(3, h, w, v);
        let out = m2m_splat_fuse_with(
            &c,
            &c,
            &s.flows,
            &s.b0,
            &s.b1,
            &MARK,
            s.t,
            Schedule::Parallel,
        )
        .map_err(err)?;
        for (i, &x) in out.frame.data().iter().enumerate() {
            if !out.holes[i % hw] {
                constant = constant.max((x - v).abs());
            }
        }

        let zero =
            MultiFlowSet::replicate(&FlowField::zeros(h, w), &FlowField::zeros(h, w), 4, false)
                .map_err(err)?;
        let out = m2m_splat_fuse_with(
            &s.i0,
            &s.i0,
            &zero,
            &s.b0,
            &s.b1,
            &MARK,
            s.t,
            Schedule::Sequential,
        )
        .map_err(err)?;
        ensure(out.hole_count() == 0, || "zero flow left holes".into())?;
        identity = identity.max(out.frame.tensor().max_abs_diff(s.i0.tensor()));
    }
    ensure(shift <= 1e-9, || format!("exponent shift {shift:e}"))?;
    ensure(hull <= 1e-12, || format!("convex hull violation {hull:e}"))?;
    ensure(constant <= 1e-9, || format!("constant drift {constant:e}"))?;
    ensure(identity <= 1e-12, || {
        format!("zero-flow identity {identity:e}")
    })?;
    Ok(format!("100 trials each: shift {shift:.1e}, hull {hull:.1e}, constant {constant:.1e}, identity {identity:.1e}"))
}

fn texture(c: usize, y: f64, x: f64) -> f64 {
    0.5 + 0.25 * (0.31 * x + 0.17 * y + c as f64).sin()
        + 0.2 * (0.07 * x * y / 8.0 + 0.5 * c as f64).cos()
}

/// Uniform 1.2x zoom about the centre of a 128x128 frame.
fn c4_holes() -> Outcome {
    let dir = TempDir::new().map_err(err)?;
    let (n, c) = (128, 63.5);
    let f0 = Frame::from_fn(3, n, n, |ch, y, x| {
        (texture(ch, y as f64, x as f64) * 255.0).round() / 255.0
    });
    let f1 = Frame::from_fn(3, n, n, |ch, y, x| {
        (texture(ch, c + (y as f64 - c) / 1.2, c + (x as f64 - c) / 1.2) * 255.0).round() / 255.0
    });
    let zoom = FlowField::from_fn(n, n, |y, x| (0.2 * (x as f64 - c), 0.2 * (y as f64 - c)));
    let unzoom = FlowField::from_fn(n, n, |y, x| {
        (
            (1.0 / 1.2 - 1.0) * (x as f64 - c),
            (1.0 / 1.2 - 1.0) * (y as f64 - c),
        )
    });
    let p = |name: &str| dir.path().join(name);
    write_image(p("a.png"), &f0).map_err(err)?;
    write_image(p("b.png"), &f1).map_err(err)?;
    write_flo(p("f01.flo"), &zoom).map_err(err)?;
    write_flo(p("f10.flo"), &unzoom).map_err(err)?;
    let times = vec![0.25, 0.5, 0.75];
    let req = InterpolationRequest {
        frame0: p("a.png"),
        frame1: p("b.png"),
        flow01: vec![p("f01.flo")],
        flow10: vec![p("f10.flo")],
        prn_weights: None,
        settings: InterpolationSettings {
            times: TimeSpec::List(times.clone()),
            fusion: FusionConfig {
                hole_policy: HolePolicy::MarkOnly,
                ..FusionConfig::default()
            },
            n_flows: Some(4),
            jitter: true,
            ..Default::default()
        },
        out: p("out"),
    };
    interpolate(&req).map_err(err)?;
    let m = RunManifest::read(p("out").join("manifest.txt")).map_err(err)?;

    // Direct count through the naive reference, from the flows as written to disk.
    let (rf, rb) = (
        m2m_core::pipeline::read_flo(p("f01.flo")).map_err(err)?,
        m2m_core::pipeline::read_flo(p("f10.flo")).map_err(err)?,
    );
    let count = |set: &MultiFlowSet, t: f64| -> Result<f64, String> {
        let scaled = scale_flows(set, t).map_err(err)?;
        let zero = vec![0.0; n * n];
        let (_, holes) = reference_splat_fuse(&f0, &f1, &scaled, &zero, &zero, &MARK, t);
        Ok(holes.iter().filter(|&&h| h).count() as f64 / (n * n) as f64)
    };
    let one = MultiFlowSet::replicate(&rf, &rb, 1, false).map_err(err)?;
    let four = MultiFlowSet::replicate(&rf, &rb, 4, true).map_err(err)?;
    let mut parts = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let r4 = m.get_f64(&format!("frame.{i}.hole_ratio")).map_err(err)?;
        let r1 = m
            .get_f64(&format!("frame.{i}.hole_ratio_n1"))
            .map_err(err)?;
        let (d4, d1) = (count(&four, t)?, count(&one, t)?);
        ensure(r4 == d4 && r1 == d1, || {
            format!("t={t}: manifest ({r4}, {r1}) vs direct count ({d4}, {d1})")
        })?;
        ensure(r4 <= r1, || {
            format!("t={t}: N=4 hole ratio {r4} > N=1 {r1}")
        })?;
        parts.push(format!("t={t} N=4 {r4:.5} <= N=1 {r1:.5}"));
    }
    Ok(parts.join("; "))
}

fn c5_error_learning() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, h, w, t) = (4, 32, 32, 0.4);
    let flows: [Tensor; 2] = [0, 1].map(|_| Tensor::uniform([n, 2, h, w], -2.0, 2.0, &mut rng));
    let b: [Tensor; 2] = [0, 1].map(|_| Tensor::uniform([h, w], -1.0, 0.0, &mut rng));
    let s: [Tensor; 2] = [0, 1].map(|_| Tensor::uniform([h, w], 0.2, 1.0, &mut rng));
    let truth: [Tensor; 2] = [0, 1].map(|_| Tensor::uniform([n, 1, h, w], -3.0, 3.0, &mut rng));

    let forward = |g: &mut Graph,
                   logits: [m2m_core::diffcore::Var; 2]|
     -> m2m_core::Result<m2m_core::diffcore::Var> {
        let v = FuseVars {
            values0: g.sigmoid(logits[0])?,
            values1: g.sigmoid(logits[1])?,
            flows0: g.constant(flows[0].clone()),
            flows1: g.constant(flows[1].clone()),
            brightness0: g.constant(b[0].clone()),
            brightness1: g.constant(b[1].clone()),
            reliability0: g.constant(s[0].clone()),
            reliability1: g.constant(s[1].clone()),
            alpha: g.constant(Tensor::new([1], vec![1.0])?),
        };
        Ok(splat_error_graph(g, &v, &MARK, t)?.0)
    };
    let target = {
        let mut g = Graph::new();
        let l = [g.constant(truth[0].clone()), g.constant(truth[1].clone())];
        let e = forward(&mut g, l).map_err(err)?;
        ErrorMap::new(h, w, g.value(e).data().to_vec()).map_err(err)?
    };

    let mut params = vec![Tensor::zeros([n, 1, h, w]), Tensor::zeros([n, 1, h, w])];
    let mut adam = AdamState::new(
        AdamConfig {
            lr: 0.05,
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
        &params,
    );
    let mut first = None;
    let mut last = f64::NAN;
    for _ in 0..1000 {
        let mut g = Graph::new();
        let l = [g.param(params[0].clone()), g.param(params[1].clone())];
        let e = forward(&mut g, l).map_err(err)?;
        let loss = err_loss(&mut g, e, &target).map_err(err)?;
        last = g.value(loss).item();
        first.get_or_insert(last);
        let grads = g.backward(loss).map_err(err)?;
        adam.step(&mut params, &[grads.get(l[0]), grads.get(l[1])])
            .map_err(err)?;
    }
    let first = first.unwrap();
    let reduction = 1.0 - last / first;
    ensure(reduction >= 0.9, || {
        format!(
            "loss {first:.4e} -> {last:.4e}, reduction {:.1}%",
            reduction * 100.0
        )
    })?;
    Ok(format!(
        "32x32 N=4, loss {first:.3e} -> {last:.3e} in 1000 steps ({:.1}% >= 90%)",
        reduction * 100.0
    ))
}

/// Background moves 2px right and the flows say so. A high-contrast square
/// moves 8px and a faint one 4px; the flows miss both, so the interpolation
/// error sits in a few patches.
fn c6_ssr_monotone() -> Outcome {
    let (h, w) = (64, 64);
    let at = |c: usize, y: usize, x: usize, bg: f64, big: f64, faint: f64| {
        let (xb, xf) = (x as f64 - big, x as f64 - faint);
        if (20..32).contains(&y) && (20.0..32.0).contains(&xb) {
            0.15 + 0.7 * (((y + xb as usize + c) % 3) as f64 / 2.0)
        } else if (44..52).contains(&y) && (36.0..44.0).contains(&xf) {
            texture(c, y as f64, xf) + 0.04 * ((y + xf as usize) % 2) as f64
        } else {
            texture(c, y as f64, x as f64 - bg)
        }
    };
    let f0 = Frame::from_fn(3, h, w, |c, y, x| at(c, y, x, 0.0, 0.0, 0.0));
    let f1 = Frame::from_fn(3, h, w, |c, y, x| at(c, y, x, 2.0, 8.0, 4.0));
    let truth = Frame::from_fn(3, h, w, |c, y, x| at(c, y, x, 1.0, 4.0, 2.0));
    let inputs = InterpolationInputs {
        frame0: f0,
        frame1: f1,
        flow01: vec![FlowField::from_fn(h, w, |_, _| (2.0, 0.0))],
        flow10: vec![FlowField::from_fn(h, w, |_, _| (-2.0, 0.0))],
        reliability0: None,
        reliability1: None,
        prn: None,
    };
    let settings = InterpolationSettings {
        ssr: Some(SsrSettings {
            ratio: 0.0,
            patch: 8,
        }),
        ..Default::default()
    };
    let prep = Prepared::new(inputs, &settings).map_err(err)?;
    let rows = prep
        .sweep(0.5, &truth, &[0.0, 0.25, 0.5, 0.75, 1.0], true)
        .map_err(err)?;
    let p: Vec<f64> = rows.iter().map(|r| r.psnr_db).collect();
    ensure(p.windows(2).all(|w| w[1] >= w[0]), || {
        format!("PSNR not monotone: {p:?}")
    })?;
    let (early, late) = (p[1] - p[0], p[4] - p[3]);
    ensure(early > late, || {
        format!("gain 0->.25 {early:.3} dB <= gain .75->1 {late:.3} dB")
    })?;
    Ok(format!(
        "PSNR {} dB; gain 0->.25 {early:.2} dB > .75->1 {late:.2} dB",
        p.iter()
            .map(|v| format!("{v:.2}"))
            .collect::<Vec<_>>()
            .join(" / ")
    ))
}

fn c7_selection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..1000 {
        let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
        let levels = rng.random_range(1..6);
        let data: Vec<f64> = (0..h * w)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let p = if trial % 10 == 0 {
            [0.0, 1.0, 0.5][trial / 10 % 3]
        } else {
            rng.random_range(0.0..=1.0)
        };
        let sel =
            select_top_p(&ErrorMap::new(h, w, data.clone()).map_err(err)?, p, 8).map_err(err)?;
        let count = ((p * (h * w) as f64) - 1e-9).ceil().max(0.0) as usize;
        let mut idx: Vec<usize> = (0..h * w).collect();
        idx.sort_by(|&a, &b| data[b].partial_cmp(&data[a]).unwrap().then(a.cmp(&b)));
        let mut want: Vec<(usize, usize)> = idx[..count].iter().map(|&i| (i / w, i % w)).collect();
        want.sort_unstable();
        ensure(sel.cells == want, || {
            format!("trial {trial}: {h}x{w} p={p}")
        })?;
    }
    Ok("1000 random maps with ties match the full-sort oracle".into())
}

fn c8_cost() -> Outcome {
    let (h, w) = (32, 32);
    let f0 = Frame::from_fn(3, h, w, |c, y, x| texture(c, y as f64, x as f64));
    let f1 = Frame::from_fn(3, h, w, |c, y, x| {
        texture(c, y as f64 + 0.5, x as f64 - 1.3)
    });
    let flow = FlowField::from_fn(h, w, |y, _| (1.3, -0.5 + 0.01 * y as f64));
    let mut base: Option<(u64, u64)> = None;
    for n in [1usize, 2, 8, 16] {
        let inputs = InterpolationInputs {
            frame0: f0.clone(),
            frame1: f1.clone(),
            flow01: vec![flow.clone()],
            flow10: vec![flow.scaled(-1.0)],
            reliability0: None,
            reliability1: None,
            prn: None,
        };
        let settings = InterpolationSettings {
            times: TimeSpec::Factor(n + 1),
            ssr: Some(SsrSettings {
                ratio: 0.25,
                patch: 8,
            }),
            ..Default::default()
        };
        let run = interpolate_frames(inputs, &settings).map_err(err)?;
        let l = &run.ledger;
        let u = l.unshared().map_err(err)?;
        ensure(
            l.frames().len() == n && l.total() == l.shared() + n as u64 * u,
            || format!("n={n}: total {} != {} + {n}*{u}", l.total(), l.shared()),
        )?;
        if let Some(b) = base {
            ensure((l.shared(), u) == b, || {
                format!("n={n}: shared/unshared drifted")
            })?;
        }
        base = Some((l.shared(), u));
    }
    let (s, u) = base.unwrap();
    Ok(format!(
        "total(n) = {s} + n*{u} exactly for n in {{1,2,8,16}}"
    ))
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn c9_formats() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let flow = FlowField::from_tensor(Tensor::from_fn([2, 9, 11], |_| {
        rng.random_range(-50.0f32..50.0) as f64
    }))
    .map_err(err)?;
    let mut flo = Vec::new();
    encode_flo(&flow, &mut flo).map_err(err)?;
    ensure(decode_flo(&flo).map_err(err)? == flow, || {
        ".flo round trip changed values".into()
    })?;
    let mut again = Vec::new();
    encode_flo(&decode_flo(&flo).map_err(err)?, &mut again).map_err(err)?;
    ensure(again == flo, || ".flo bytes not stable".into())?;

    let frame = Frame::from_fn(3, 13, 17, |_, _, _| {
        rng.random_range(0u8..=255) as f64 / 255.0
    });
    for kind in [ImageKind::Ppm, ImageKind::Png] {
        let bytes = encode_image(&frame, kind).map_err(err)?;
        let back = decode_image(&bytes).map_err(err)?;
        ensure(back == frame, || format!("{kind:?} round trip lost data"))?;
        ensure(encode_image(&back, kind).map_err(err)? == bytes, || {
            format!("{kind:?} bytes not stable")
        })?;
    }

    let dir = TempDir::new().map_err(err)?;
    let p = |s: &str| dir.path().join(s).display().to_string();
    let f1 = Frame::from_fn(3, 16, 16, |c, y, x| frame.get(c, y % 13, (x + 1) % 17));
    write_image(
        p("a.png"),
        &Frame::from_fn(3, 16, 16, |c, y, x| frame.get(c, y % 13, x % 17)),
    )
    .map_err(err)?;
    write_image(p("b.png"), &f1).map_err(err)?;
    write_flo(
        p("f01.flo"),
        &FlowField::from_fn(16, 16, |y, x| {
            (0.3 * (x as f64 * 0.5).sin(), 0.2 * y as f64 / 16.0)
        }),
    )
    .map_err(err)?;
    write_flo(
        p("f10.flo"),
        &FlowField::from_fn(16, 16, |_, _| (-0.4, 0.1)),
    )
    .map_err(err)?;
    for out in ["r1", "r2"] {
        let args = [
            "interpolate",
            "--frame0",
            &p("a.png"),
            "--frame1",
            &p("b.png"),
            "--flow01",
            &p("f01.flo"),
            "--flow10",
            &p("f10.flo"),
            "--factor",
            "4",
            "--jitter",
            "--ssr-ratio",
            "0.5",
            "--patch-size",
            "8",
            "--seed",
            "42",
            "--out",
            &p(out),
        ];
        let o = Command::new(env!("CARGO_BIN_EXE_m2m"))
            .args(args)
            .output()
            .map_err(err)?;
        ensure(o.status.success(), || {
            String::from_utf8_lossy(&o.stderr).into_owned()
        })?;
    }
    let (a, b) = (
        listing(&dir.path().join("r1")),
        listing(&dir.path().join("r2")),
    );
    ensure(a.len() == 4 && a == b, || {
        "CLI outputs differ between seeded runs".into()
    })?;
    Ok(format!(
        ".flo and PPM bitwise, PNG lossless, {} CLI output files identical across runs",
        a.len()
    ))
}

fn unfolding_singular_values(t: &Tensor, k: usize) -> Vec<f64> {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let rows = [c, h, w][k];
    let m = DMatrix::from_fn(rows, c * h * w / rows, |r, q| {
        let (a, b, d) = match k {
            0 => (r, q / w, q % w),
            1 => (q / w, r, q % w),
            _ => (q / h, q % h, r),
        };
        t.data()[(a * h + b) * w + d]
    });
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

fn c10_low_rank() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for m in [1, 3, 4] {
        for _ in 0..50 {
            let (c, h, w) = (
                rng.random_range(5..9),
                rng.random_range(5..9),
                rng.random_range(5..9),
            );
            let u = Tensor::uniform([m, c], -1.0, 1.0, &mut rng);
            let v = Tensor::uniform([m, h], -1.0, 1.0, &mut rng);
            let z = Tensor::uniform([m, w], -1.0, 1.0, &mut rng);
            let t = rank1_compose(&u, &v, &z).map_err(err)?;
            for k in 0..3 {
                let s = unfolding_singular_values(&t, k);
                worst = s.iter().skip(m).map(|x| x / s[0]).fold(worst, f64::max);
            }
        }
    }
    ensure(worst <= 1e-8, || {
        format!("sigma_(M+1)/sigma_1 reached {worst:e}")
    })?;
    Ok(format!(
        "M in {{1,3,4}}, 50 instances each, max sigma_(M+1)/sigma_1 {worst:.1e} <= 1e-8"
    ))
}

fn c11_prn() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = PrnConfig::toy();
    let ch = cfg.pyramid_channels();
    let mk = |rng: &mut ChaCha8Rng| -> Vec<Tensor> {
        (0..LEVELS)
            .map(|l| Tensor::uniform([ch[l], cfg.patch >> l, cfg.patch >> l], 0.0, 1.0, rng))
            .collect()
    };
    let pyr = PatchPyramids {
        levels0: mk(&mut rng),
        levels1: mk(&mut rng),
    };
    let k = cfg.patch;

    let mut store = ParamStore::new();
    cfg.init(&mut store, &mut rng).map_err(err)?;
    for _ in 0..5 {
        let init =
            Frame::from_tensor(Tensor::uniform([3, k, k], 0.0, 1.0, &mut rng)).map_err(err)?;
        let (out, _) = refine_patch(&store, &cfg, &pyr, &init, Schedule::Parallel).map_err(err)?;
        ensure(out == init, || "zero head changed the patch".into())?;
    }

    let truth = Tensor::from_fn([3, k, k], |i| {
        0.5 + 0.3 * ((i % (k * k)) as f64 * 0.37 + (i / (k * k)) as f64).sin()
    });
    let initial = Tensor::from_fn([3, k, k], |i| {
        truth.data()[i] + 0.15 * ((i as f64) * 1.3).cos()
    });
    let start = charbonnier_value(&initial, &truth).map_err(err)?;
    let mut adam = AdamState::new(
        AdamConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
        store.tensors(),
    );
    let mut last = start;
    let mut steps = 0;
    while steps < 500 && last > 0.1 * start {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let ctx: Vec<_> = pyr
            .levels0
            .iter()
            .zip(&pyr.levels1)
            .map(|(a, b)| (g.constant(a.clone()), g.constant(b.clone())))
            .collect();
        let x = g.constant(initial.clone());
        let y = prn_refine_patch(&mut g, &p, &cfg, &ctx, x).map_err(err)?;
        let tv = g.constant(truth.clone());
        let loss = charbonnier(&mut g, y, tv).map_err(err)?;
        last = g.value(loss).item();
        if last <= 0.1 * start {
            break;
        }
        let grads = p.grads(&g.backward(loss).map_err(err)?);
        drop(p);
        adam.step(store.tensors_mut(), &grads).map_err(err)?;
        steps += 1;
    }
    let reduction = 1.0 - last / start;
    ensure(reduction >= 0.9, || {
        format!(
            "Charbonnier {start:.3e} -> {last:.3e} after {steps} steps ({:.1}%)",
            reduction * 100.0
        )
    })?;
    Ok(format!("zero head is a bitwise no-op; overfit Charbonnier {start:.3e} -> {last:.3e} in {steps} steps ({:.1}% >= 90%)", reduction * 100.0))
}

fn main() {
    let criteria: [(&str, Criterion); 11] = [
        ("C1 gradient suite", c1_gradients),
        ("C2 splat oracle", c2_splat_oracle),
        ("C3 fusion invariants", c3_invariants),
        ("C4 hole property", c4_holes),
        ("C5 error learning", c5_error_learning),
        ("C6 SSR monotonicity", c6_ssr_monotone),
        ("C7 selection oracle", c7_selection),
        ("C8 cost-model exactness", c8_cost),
        ("C9 format round trips", c9_formats),
        ("C10 low-rank bound", c10_low_rank),
        ("C11 PRN no-op and overfit", c11_prn),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{secs:.1}s]");
            }
        }
    }
    println!("{} criteria, {failed} failed", criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
