//! Built-in verification suites behind the `gradcheck` and `selftest` commands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{gradcheck, Graph, ParamStore, Tensor, Var, DEFAULT_H};
use crate::error::Result;
use crate::lowrank::ProjectorSet;
use crate::mixernet::{
    channel_mix, prn_refine_patch, smb_forward, token_mix, w_mixer_block, window_merge,
    window_partition, MixerDims, PrnConfig, SmbDims, WindowSpec, LEVELS,
};
use crate::par::Schedule;
use crate::pipeline::cost::CostLedger;
use crate::pipeline::flo::{decode_flo, encode_flo};
use crate::pipeline::image_io::{decode_image, encode_image, ImageKind};
use crate::pipeline::interpolate::{
    interpolate_frames, InterpolationInputs, InterpolationSettings, TimeSpec,
};
use crate::pipeline::metrics::psnr;
use crate::ssr::{
    err_loss, error_target, refine_selected, select_top_p, selection_count, ErrorMap, OracleRefiner,
};
use crate::warp::{
    m2m_splat_fuse_graph, m2m_splat_fuse_with, reference_splat_fuse, splat_error_graph, FlowField,
    Frame, FuseVars, FusionConfig, HolePolicy, MultiFlowSet,
};

/// Worst relative gradient error accepted by the suite.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub coords: usize,
    pub max_rel_error: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRAD_TOLERANCE
    }
}

/// Sum of `y` against a fixed pseudo-random weighting, so every output
/// element reaches the loss with a distinct weight.
pub fn probe(g: &mut Graph, y: Var) -> Result<Var> {
    let w = Tensor::from_fn(g.shape(y).to_vec(), |i| (i as f64 * 0.7123 + 0.31).sin());
    let c = g.constant(w);
    let m = g.mul(y, c)?;
    g.sum(m)
}

/// Consecutive slices of a flat var with the given shapes.
pub fn split(g: &mut Graph, x: Var, shapes: &[&[usize]]) -> Result<Vec<Var>> {
    let mut off = 0;
    let mut out = Vec::with_capacity(shapes.len());
    for s in shapes {
        let n: usize = s.iter().product();
        out.push(g.gather(x, (off..off + n).collect(), s.to_vec())?);
        off += n;
    }
    Ok(out)
}

fn uniform(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform([n], lo, hi, rng)
}

/// Values whose magnitude stays at least `gap` away from zero.
fn away_from_zero(n: usize, gap: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn([n], |_| {
        let v = rng.random_range(gap..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Flow components with fractional parts in `[0.2, 0.8]`, so no landing
/// position sits on a pixel boundary.
pub fn fractional_flows(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn([n], |_| {
        rng.random_range(-1i32..=1) as f64 + rng.random_range(0.2..0.8)
    })
}

fn concat_flat(parts: &[&Tensor]) -> Tensor {
    let data: Vec<f64> = parts
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .collect();
    let n = data.len();
    Tensor::new([n], data).expect("flat")
}

struct SplatCase {
    c: usize,
    h: usize,
    w: usize,
    n: usize,
    values: [Tensor; 2],
    flows: [Tensor; 2],
    brightness: [Tensor; 2],
    reliability: [Tensor; 2],
    alpha: f64,
}

#[derive(Clone, Copy)]
enum SplatWrt {
    Colors,
    Flows,
    Brightness,
    Reliability,
    Alpha,
}

impl SplatCase {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let (c, h, w, n) = (2, 5, 6, 2);
        let hw = h * w;
        let reshape = |t: Tensor, s: &[usize]| t.reshape(s.to_vec()).expect("shape");
        SplatCase {
            c,
            h,
            w,
            n,
            values: [0, 1].map(|_| reshape(uniform(c * hw, 0.0, 1.0, rng), &[c, h, w])),
            flows: [0, 1].map(|_| reshape(fractional_flows(n * 2 * hw, rng), &[n, 2, h, w])),
            brightness: [0, 1].map(|_| reshape(uniform(hw, -1.0, 0.0, rng), &[h, w])),
            reliability: [0, 1].map(|_| reshape(uniform(hw, 0.2, 1.0, rng), &[h, w])),
            alpha: 1.3,
        }
    }

    fn point(&self, wrt: SplatWrt) -> Tensor {
        match wrt {
            SplatWrt::Colors => concat_flat(&[&self.values[0], &self.values[1]]),
            SplatWrt::Flows => concat_flat(&[&self.flows[0], &self.flows[1]]),
            SplatWrt::Brightness => concat_flat(&[&self.brightness[0], &self.brightness[1]]),
            SplatWrt::Reliability => concat_flat(&[&self.reliability[0], &self.reliability[1]]),
            SplatWrt::Alpha => Tensor::new([1], vec![self.alpha]).expect("scalar"),
        }
    }

    /// Builds the fusion inputs with the `wrt` group read from `x`.
    fn vars(&self, g: &mut Graph, x: Var, wrt: SplatWrt, scores: bool) -> Result<FuseVars> {
        let (c, h, w, n) = (self.c, self.h, self.w, self.n);
        let vshape: Vec<usize> = if scores {
            vec![n, 1, h, w]
        } else {
            vec![c, h, w]
        };
        let pair =
            |g: &mut Graph, ts: &[Tensor; 2], shape: &[usize], mine: bool| -> Result<(Var, Var)> {
                if mine {
                    let v = split(g, x, &[shape, shape])?;
                    Ok((v[0], v[1]))
                } else {
                    Ok((
                        g.constant(ts[0].clone().reshape(shape.to_vec())?),
                        g.constant(ts[1].clone().reshape(shape.to_vec())?),
                    ))
                }
            };
        let (values0, values1) = pair(g, &self.values, &vshape, matches!(wrt, SplatWrt::Colors))?;
        let (flows0, flows1) = pair(
            g,
            &self.flows,
            &[n, 2, h, w],
            matches!(wrt, SplatWrt::Flows),
        )?;
        let (brightness0, brightness1) = pair(
            g,
            &self.brightness,
            &[h, w],
            matches!(wrt, SplatWrt::Brightness),
        )?;
        let (reliability0, reliability1) = pair(
            g,
            &self.reliability,
            &[h, w],
            matches!(wrt, SplatWrt::Reliability),
        )?;
        let alpha = if matches!(wrt, SplatWrt::Alpha) {
            x
        } else {
            g.constant(Tensor::new([1], vec![self.alpha])?)
        };
        Ok(FuseVars {
            values0,
            values1,
            flows0,
            flows1,
            brightness0,
            brightness1,
            reliability0,
            reliability1,
            alpha,
        })
    }
}

type BinaryOp = fn(&mut Graph, Var, Var) -> Result<Var>;
type UnaryOp = fn(&mut Graph, Var) -> Result<Var>;

fn run(
    name: &str,
    point: &Tensor,
    f: impl Fn(&mut Graph, Var) -> Result<Var> + Sync,
) -> Result<GradReport> {
    Ok(GradReport {
        name: name.to_string(),
        coords: point.len(),
        max_rel_error: gradcheck(f, point, DEFAULT_H)?,
    })
}

fn primitive_cases(rng: &mut ChaCha8Rng) -> Result<Vec<GradReport>> {
    let mut out = Vec::new();
    let pair = uniform(24, -1.0, 1.0, rng);
    let binary: [(&str, BinaryOp); 3] = [
        ("add", |g, a, b| g.add(a, b)),
        ("sub", |g, a, b| g.sub(a, b)),
        ("mul", |g, a, b| g.mul(a, b)),
    ];
    for (name, op) in binary {
        out.push(run(name, &pair, |g, x| {
            let v = split(g, x, &[&[3, 4], &[3, 4]])?;
            let y = op(g, v[0], v[1])?;
            probe(g, y)
        })?);
    }
    let x12 = uniform(12, -2.0, 2.0, rng);
    let unary: [(&str, UnaryOp); 5] = [
        ("scale", |g, x| g.scale(x, -1.7)),
        ("add_scalar", |g, x| g.add_scalar(x, 0.3)),
        ("gelu", |g, x| g.gelu(x)),
        ("sigmoid", |g, x| g.sigmoid(x)),
        ("exp", |g, x| g.exp(x)),
    ];
    for (name, op) in unary {
        out.push(run(name, &x12, |g, x| {
            let y = op(g, x)?;
            probe(g, y)
        })?);
    }
    out.push(run("abs", &away_from_zero(12, 0.05, rng), |g, x| {
        let y = g.abs(x)?;
        probe(g, y)
    })?);
    out.push(run("sqrt", &uniform(12, 0.2, 2.0, rng), |g, x| {
        let y = g.sqrt(x)?;
        probe(g, y)
    })?);
    let clamp_pt = Tensor::from_fn([12], |i| [-0.8, -0.3, 0.1, 0.45][i % 4] + 0.01 * i as f64);
    out.push(run("clamp", &clamp_pt, |g, x| {
        let y = g.clamp(x, -0.5, 0.5)?;
        probe(g, y)
    })?);
    out.push(run(
        "bias_add",
        &uniform(12 + 4, -1.0, 1.0, rng),
        |g, x| {
            let v = split(g, x, &[&[3, 4], &[4]])?;
            let y = g.bias_add(v[0], v[1])?;
            probe(g, y)
        },
    )?);
    out.push(run("matmul", &uniform(12 + 20, -1.0, 1.0, rng), |g, x| {
        let v = split(g, x, &[&[3, 4], &[4, 5]])?;
        let y = g.matmul(v[0], v[1])?;
        probe(g, y)
    })?);
    out.push(run(
        "matmul_batched_right",
        &uniform(6 + 24, -1.0, 1.0, rng),
        |g, x| {
            let v = split(g, x, &[&[2, 3], &[2, 3, 4]])?;
            let y = g.matmul(v[0], v[1])?;
            probe(g, y)
        },
    )?);
    out.push(run(
        "matmul_batched_left",
        &uniform(24 + 6, -1.0, 1.0, rng),
        |g, x| {
            let v = split(g, x, &[&[2, 4, 3], &[3, 2]])?;
            let y = g.matmul(v[0], v[1])?;
            probe(g, y)
        },
    )?);
    for stride in [1, 2] {
        out.push(run(
            &format!("conv2d_stride{stride}"),
            &uniform(2 * 25 + 3 * 2 * 9 + 3, -1.0, 1.0, rng),
            |g, x| {
                let v = split(g, x, &[&[2, 5, 5], &[3, 2, 3, 3], &[3]])?;
                let y = g.conv2d(v[0], v[1], Some(v[2]), stride)?;
                probe(g, y)
            },
        )?);
    }
    out.push(run(
        "layernorm",
        &uniform(15 + 5 + 5, -1.0, 1.0, rng),
        |g, x| {
            let v = split(g, x, &[&[3, 5], &[5], &[5]])?;
            let y = g.layernorm(v[0], Some(v[1]), Some(v[2]))?;
            probe(g, y)
        },
    )?);
    let x3 = uniform(2 * 3 * 4, -1.0, 1.0, rng);
    out.push(run("global_avgpool", &x3, |g, x| {
        let t = g.reshape(x, [2, 3, 4])?;
        let y = g.global_avgpool(t)?;
        probe(g, y)
    })?);
    for axis in 0..3 {
        out.push(run(&format!("sum_axis{axis}"), &x3, |g, x| {
            let t = g.reshape(x, [2, 3, 4])?;
            let y = g.sum_axis(t, axis)?;
            probe(g, y)
        })?);
    }
    out.push(run("sum", &x3, |g, x| {
        let y = g.mul(x, x)?;
        g.sum(y)
    })?);
    out.push(run("mean", &x3, |g, x| {
        let y = g.mul(x, x)?;
        g.mean(y)
    })?);
    let coords = Tensor::from_fn([2 * 3 * 4], |i| {
        (i % 4) as f64 * 0.9 + 0.3 + 0.01 * i as f64
    });
    let sample_pt = concat_flat(&[&uniform(2 * 4 * 5, 0.0, 1.0, rng), &coords]);
    out.push(run("bilinear_sample", &sample_pt, |g, x| {
        let v = split(g, x, &[&[2, 4, 5], &[2, 3, 4]])?;
        let y = g.bilinear_sample(v[0], v[1])?;
        probe(g, y)
    })?);
    // Distinct values keep every pooling window's argmax unambiguous.
    let pool_pt = Tensor::from_fn([2 * 5 * 5], |i| ((i * 37 % 50) as f64) * 0.05 - 1.0);
    out.push(run("maxpool2d", &pool_pt, |g, x| {
        let t = g.reshape(x, [2, 5, 5])?;
        let y = g.maxpool2d(t, 2)?;
        probe(g, y)
    })?);
    out.push(run("gather", &x12, |g, x| {
        let y = g.gather(x, vec![3, 0, 3, 11, 7, 7, 7], vec![7])?;
        let y = g.mul(y, y)?;
        probe(g, y)
    })?);
    out.push(run("permute", &x3, |g, x| {
        let t = g.reshape(x, [2, 3, 4])?;
        let y = g.permute(t, &[2, 0, 1])?;
        probe(g, y)
    })?);
    let x4 = uniform(2 * 5 * 6, -1.0, 1.0, rng);
    out.push(run("crop2d", &x4, |g, x| {
        let t = g.reshape(x, [2, 5, 6])?;
        let y = g.crop2d(t, 1, 2, 3, 3)?;
        probe(g, y)
    })?);
    out.push(run("upsample_nearest2x", &x3, |g, x| {
        let t = g.reshape(x, [2, 3, 4])?;
        let y = g.upsample_nearest2x(t)?;
        probe(g, y)
    })?);
    out.push(run("concat", &uniform(12 + 8, -1.0, 1.0, rng), |g, x| {
        let v = split(g, x, &[&[3, 2, 2], &[2, 2, 2]])?;
        let y = g.concat(&[v[0], v[1], v[0]])?;
        probe(g, y)
    })?);
    Ok(out)
}

fn splat_cases(rng: &mut ChaCha8Rng) -> Result<Vec<GradReport>> {
    let case = SplatCase::random(rng);
    let cfg = FusionConfig {
        hole_policy: HolePolicy::MarkOnly,
        ..FusionConfig::default()
    };
    let t = 0.4;
    let mut out = Vec::new();
    for (name, wrt) in [
        ("m2m_splat_fuse/colors", SplatWrt::Colors),
        ("m2m_splat_fuse/flows", SplatWrt::Flows),
        ("m2m_splat_fuse/brightness", SplatWrt::Brightness),
        ("m2m_splat_fuse/reliability", SplatWrt::Reliability),
        ("m2m_splat_fuse/alpha", SplatWrt::Alpha),
    ] {
        out.push(run(name, &case.point(wrt), |g, x| {
            let v = case.vars(g, x, wrt, false)?;
            let (y, _) = m2m_splat_fuse_graph(g, &v, &cfg, t)?;
            probe(g, y)
        })?);
    }
    let (n, h, w) = (case.n, case.h, case.w);
    let scores = [0, 1].map(|_| uniform(n * h * w, 0.05, 0.95, rng));
    let target = ErrorMap::new(
        h,
        w,
        (0..h * w).map(|i| ((i * 7 % 11) as f64) / 10.0).collect(),
    )?;
    let score_case = SplatCase {
        values: scores,
        ..case
    };
    out.push(run(
        "splat_error+err_loss",
        &score_case.point(SplatWrt::Colors),
        |g, x| {
            let v = score_case.vars(g, x, SplatWrt::Colors, true)?;
            let (e, _) = splat_error_graph(g, &v, &cfg, t)?;
            err_loss(g, e, &target)
        },
    )?);
    Ok(out)
}

/// Gradient check over `x` followed by every parameter of `store`.
fn with_params<F>(name: &str, store: &ParamStore, x: &Tensor, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &crate::diffcore::Bound<'_>, Var) -> Result<Var> + Sync,
{
    let point = concat_flat(&[x, &store.pack()]);
    let nx = x.len();
    let np = store.num_scalars();
    run(name, &point, |g, p| {
        let xv = g.gather(p, (0..nx).collect(), x.shape().to_vec())?;
        let pv = g.gather(p, (nx..nx + np).collect(), vec![np])?;
        let bound = store.bind_packed(g, pv)?;
        let y = f(g, &bound, xv)?;
        probe(g, y)
    })
}

fn network_cases(rng: &mut ChaCha8Rng) -> Result<Vec<GradReport>> {
    let mut out = Vec::new();

    let proj = ProjectorSet::new(2, 3, 4, 5)?;
    let mut store = ParamStore::new();
    proj.init(&mut store, "lr", rng)?;
    let x = Tensor::uniform([3, 4, 5], -1.0, 1.0, rng);
    out.push(with_params("lowrank_block", &store, &x, |g, p, x| {
        proj.forward(g, p, "lr", x)
    })?);

    let spec = WindowSpec::new(8, 4, 0)?;
    let dims = MixerDims {
        q: spec.q(),
        channels: 4,
    };
    let mut store = ParamStore::new();
    dims.init(&mut store, "m", rng)?;
    let tokens = Tensor::uniform([spec.n_windows(), spec.q(), 4], -1.0, 1.0, rng);
    out.push(with_params("token_mix", &store, &tokens, |g, p, x| {
        token_mix(g, p, "m", x)
    })?);
    out.push(with_params("channel_mix", &store, &tokens, |g, p, x| {
        channel_mix(g, p, "m", x)
    })?);
    let img = Tensor::uniform([4, 8, 8], -1.0, 1.0, rng);
    for s in [spec, spec.shifted()] {
        out.push(with_params(
            &format!("w_mixer_block/shift{}", s.shift),
            &store,
            &img,
            |g, p, x| w_mixer_block(g, p, "m", x, &s),
        )?);
    }

    let smb = SmbDims {
        channels: 3,
        context: 2,
        spec: WindowSpec::new(4, 2, 0)?,
    };
    let mut store = ParamStore::new();
    smb.init(&mut store, "s", rng)?;
    let xc = Tensor::uniform([5, 4, 4], -1.0, 1.0, rng);
    out.push(with_params("smb_forward", &store, &xc, |g, p, x| {
        let v = split(g, x, &[&[3, 4, 4], &[2, 4, 4]])?;
        let (a, b) = (g.reshape(v[0], [3, 4, 4])?, g.reshape(v[1], [2, 4, 4])?);
        smb_forward(g, p, "s", a, b, &smb)
    })?);

    let cfg = PrnConfig::micro();
    let mut store = ParamStore::new();
    cfg.init(&mut store, rng)?;
    // The zero head would block every gradient but its own.
    for name in ["prn.head.w", "prn.head.b"] {
        let t = store.get_mut(name).expect("head registered");
        let fresh = Tensor::uniform(t.shape().to_vec(), -0.05, 0.05, rng);
        *t = fresh;
    }
    let ch = cfg.pyramid_channels();
    let ctx_shapes: Vec<Vec<usize>> = (0..LEVELS)
        .flat_map(|l| [0, 1].map(|_| vec![ch[l], cfg.patch >> l, cfg.patch >> l]))
        .collect();
    let ctx_len: usize = ctx_shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let initial_len = 3 * cfg.patch * cfg.patch;
    let input = concat_flat(&[
        &uniform(initial_len, 0.3, 0.7, rng),
        &uniform(ctx_len, 0.0, 1.0, rng),
    ]);
    out.push(with_params(
        "prn_refine_patch",
        &store,
        &input,
        |g, p, x| {
            let first = [3, cfg.patch, cfg.patch];
            let mut shapes: Vec<&[usize]> = vec![&first];
            shapes.extend(ctx_shapes.iter().map(Vec::as_slice));
            let v = split(g, x, &shapes)?;
            let ctx: Vec<(Var, Var)> = (0..LEVELS).map(|l| (v[1 + 2 * l], v[2 + 2 * l])).collect();
            prn_refine_patch(g, p, &cfg, &ctx, v[0])
        },
    )?);
    Ok(out)
}

/// Central-difference checks of every differentiable operator.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = primitive_cases(&mut rng)?;
    out.extend(splat_cases(&mut rng)?);
    out.extend(network_cases(&mut rng)?);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub name: &'static str,
    pub trials: usize,
    /// First failure, if any.
    pub failure: Option<String>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

fn property(
    name: &'static str,
    trials: usize,
    seed: u64,
    check: impl Fn(&mut ChaCha8Rng) -> Result<Option<String>>,
) -> PropertyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        match check(&mut rng) {
            Ok(None) => {}
            Ok(Some(msg)) => {
                return PropertyReport {
                    name,
                    trials,
                    failure: Some(msg),
                }
            }
            Err(e) => {
                return PropertyReport {
                    name,
                    trials,
                    failure: Some(e.to_string()),
                }
            }
        }
    }
    PropertyReport {
        name,
        trials,
        failure: None,
    }
}

fn random_frame(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Frame {
    Frame::from_fn(c, h, w, |_, _, _| rng.random_range(0.0..1.0))
}

fn random_flows(
    h: usize,
    w: usize,
    n: usize,
    mag: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MultiFlowSet> {
    let mut one = || -> Result<FlowField> {
        FlowField::from_tensor(Tensor::uniform([2, h, w], -mag, mag, rng))
    };
    let fwd = (0..n).map(|_| one()).collect::<Result<_>>()?;
    let bwd = (0..n).map(|_| one()).collect::<Result<_>>()?;
    MultiFlowSet::with_unit_reliability(fwd, bwd)
}

fn bright(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform([h, w], -1.0, 0.0, rng)
}

/// Randomised checks of the splatting, selection, format and cost contracts.
pub fn property_suite(seed: u64) -> Vec<PropertyReport> {
    let mark = FusionConfig {
        hole_policy: HolePolicy::MarkOnly,
        ..FusionConfig::default()
    };
    let seq = Schedule::Sequential;
    vec![
        property("splat matches naive reference", 5, seed, |rng| {
            let (h, w) = (16, 16);
            let (i0, i1) = (random_frame(3, h, w, rng), random_frame(3, h, w, rng));
            let f = random_flows(h, w, 4, 3.0, rng)?;
            let (b0, b1) = (bright(h, w, rng), bright(h, w, rng));
            let t = rng.random_range(0.1..0.9);
            let out = m2m_splat_fuse_with(&i0, &i1, &f, &b0, &b1, &mark, t, Schedule::Parallel)?;
            let (reference, holes) =
                reference_splat_fuse(&i0, &i1, &f, b0.data(), b1.data(), &mark, t);
            let worst = out
                .frame
                .data()
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            Ok((worst > 1e-10 || holes != out.holes).then(|| format!("max deviation {worst:e}")))
        }),
        property(
            "fusion is invariant to a common exponent shift",
            10,
            seed + 1,
            |rng| {
                let (h, w) = (8, 8);
                let (i0, i1) = (random_frame(3, h, w, rng), random_frame(3, h, w, rng));
                let f = random_flows(h, w, 2, 2.0, rng)?;
                let (b0, b1) = (bright(h, w, rng), bright(h, w, rng));
                let k = rng.random_range(-3.0..3.0);
                let a = m2m_splat_fuse_with(&i0, &i1, &f, &b0, &b1, &mark, 0.5, seq)?;
                let b = m2m_splat_fuse_with(
                    &i0,
                    &i1,
                    &f,
                    &b0.map(|v| v + k),
                    &b1.map(|v| v + k),
                    &mark,
                    0.5,
                    seq,
                )?;
                let d = a.frame.tensor().max_abs_diff(b.frame.tensor());
                Ok((d > 1e-9).then(|| format!("shift {k} moved the output by {d:e}")))
            },
        ),
        property("constant frames are preserved", 10, seed + 2, |rng| {
            let (h, w) = (8, 8);
            let v = rng.random_range(0.0..1.0);
            let i = Frame::filled(3, h, w, v);
            let f = random_flows(h, w, 3, 4.0, rng)?;
            let out = m2m_splat_fuse_with(
                &i,
                &i,
                &f,
                &bright(h, w, rng),
                &bright(h, w, rng),
                &mark,
                0.3,
                seq,
            )?;
            let bad = out
                .frame
                .data()
                .iter()
                .enumerate()
                .find(|(k, x)| !out.holes[k % (h * w)] && (*x - v).abs() > 1e-9);
            Ok(bad.map(|(k, x)| format!("pixel {k}: {x} != {v}")))
        }),
        property(
            "zero flow reproduces identical inputs",
            10,
            seed + 3,
            |rng| {
                let (h, w) = (8, 8);
                let i = random_frame(3, h, w, rng);
                let f = MultiFlowSet::replicate(
                    &FlowField::zeros(h, w),
                    &FlowField::zeros(h, w),
                    4,
                    false,
                )?;
                let out = m2m_splat_fuse_with(
                    &i,
                    &i,
                    &f,
                    &bright(h, w, rng),
                    &bright(h, w, rng),
                    &mark,
                    0.7,
                    seq,
                )?;
                let d = out.frame.tensor().max_abs_diff(i.tensor());
                Ok((d > 1e-12).then(|| format!("deviation {d:e}")))
            },
        ),
        property("top-p selection equals a full sort", 200, seed + 4, |rng| {
            let (gh, gw) = (rng.random_range(1..6), rng.random_range(1..6));
            let levels = rng.random_range(1..5);
            let data: Vec<f64> = (0..gh * gw)
                .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
                .collect();
            let p = rng.random_range(0..=8) as f64 / 8.0;
            let sel = select_top_p(&ErrorMap::new(gh, gw, data.clone())?, p, 4)?;
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.sort_by(|&a, &b| {
                data[b]
                    .partial_cmp(&data[a])
                    .expect("finite")
                    .then(a.cmp(&b))
            });
            let mut want: Vec<usize> = order[..selection_count(p, data.len())].to_vec();
            want.sort_unstable();
            let got: Vec<usize> = sel.cells.iter().map(|&(r, c)| r * gw + c).collect();
            Ok((got != want).then(|| format!("p={p}: got {got:?}, want {want:?}")))
        }),
        property("window partition round trips", 20, seed + 5, |rng| {
            let side = [1, 2, 4][rng.random_range(0..3)];
            let shift = if rng.random_bool(0.5) { side / 2 } else { 0 };
            let spec = WindowSpec::new(8, side, shift)?;
            let x = Tensor::uniform([3, 8, 8], -1.0, 1.0, rng);
            let back = window_merge(&window_partition(&x, &spec)?, &spec)?;
            Ok((back != x).then(|| format!("side {side} shift {shift} changed the input")))
        }),
        property("flo and PPM round trip bitwise", 10, seed + 6, |rng| {
            let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
            let f = FlowField::from_tensor(Tensor::from_fn([2, h, w], |_| {
                rng.random_range(-40.0f32..40.0) as f64
            }))?;
            let mut buf = Vec::new();
            encode_flo(&f, &mut buf)?;
            if decode_flo(&buf)? != f {
                return Ok(Some("flo mismatch".into()));
            }
            let img = Frame::from_fn(3, h, w, |_, _, _| {
                rng.random_range(0..=255u32) as f64 / 255.0
            });
            let back = decode_image(&encode_image(&img, ImageKind::Ppm)?)?;
            Ok((back != img).then(|| "ppm mismatch".into()))
        }),
        property("oracle refinement never lowers PSNR", 5, seed + 7, |rng| {
            let (init, truth) = (random_frame(3, 16, 16, rng), random_frame(3, 16, 16, rng));
            let e = error_target(&init, &truth)?;
            let oracle = OracleRefiner { truth: &truth };
            let mut last = f64::NEG_INFINITY;
            for p in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let r = refine_selected(&init, &e, p, 4, &oracle, seq)?;
                let q = psnr(&r.frame, &truth, 1.0)?;
                if q < last {
                    return Ok(Some(format!("PSNR fell to {q} at p={p}")));
                }
                last = q;
            }
            Ok(None)
        }),
        property(
            "cost ledger is linear in the frame count",
            1,
            seed + 8,
            |rng| {
                let (h, w) = (16, 16);
                let inputs = InterpolationInputs {
                    frame0: random_frame(3, h, w, rng),
                    frame1: random_frame(3, h, w, rng),
                    flow01: vec![FlowField::from_fn(h, w, |_, _| (1.5, -0.5))],
                    flow10: vec![FlowField::from_fn(h, w, |_, _| (-1.5, 0.5))],
                    reliability0: None,
                    reliability1: None,
                    prn: None,
                };
                let mut seen: Option<CostLedger> = None;
                for n in [2, 3, 5] {
                    let s = InterpolationSettings {
                        times: TimeSpec::Factor(n),
                        ..InterpolationSettings::default()
                    };
                    let run = interpolate_frames(inputs.clone(), &s)?;
                    if run.ledger.total() != run.ledger.model_total((n - 1) as u64)? {
                        return Ok(Some(format!("total({}) is not shared + n*unshared", n - 1)));
                    }
                    if let Some(prev) = &seen {
                        if prev.shared() != run.ledger.shared()
                            || prev.unshared()? != run.ledger.unshared()?
                        {
                            return Ok(Some(
                                "shared or unshared cost depends on the time list".into(),
                            ));
                        }
                    }
                    seen = Some(run.ledger);
                }
                Ok(None)
            },
        ),
    ]
}
