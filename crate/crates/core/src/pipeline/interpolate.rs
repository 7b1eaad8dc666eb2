//! Single- and multi-frame interpolation runs.
//!
//! The shared stage loads and replicates flows, measures brightness
//! consistency and, with selective refinement on, builds both context
//! pyramids and the per-pixel error scores. Every time step then scales the
//! flows, splats and fuses, fills holes and optionally refines the
//! highest-error patches.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::mixernet::{build_context_pyramid, splat_pyramid, FeaturePyramid, PrnConfig};
use crate::par::{self, Schedule};
use crate::pipeline::cost::CostLedger;
use crate::pipeline::flo::read_flo;
use crate::pipeline::image_io::{read_image, write_image};
use crate::pipeline::manifest::RunManifest;
use crate::pipeline::metrics::{PSNR_CAP_DB, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
use crate::ssr::{
    refine_selected, sweep_ratio, ErrorMap, OracleRefiner, PatchRefiner, PrnRefiner, SweepRow,
};
use crate::warp::{
    brightness_consistency, fill_holes, m2m_splat_fuse_with, scale_flows, splat_error, splat_macs,
    FlowField, Frame, FusionConfig, HolePolicy, MultiFlowSet, SplatOutput,
};

pub const DEFAULT_N_FLOWS: usize = 4;
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub enum TimeSpec {
    List(Vec<f64>),
    /// `t = k/n` for `k = 1..n-1`.
    Factor(usize),
}

impl TimeSpec {
    pub fn times(&self) -> Result<Vec<f64>> {
        let ts = match self {
            TimeSpec::Factor(n) if *n < 2 => {
                return Err(Error::invalid(format!(
                    "factor must be at least 2, got {n}"
                )))
            }
            TimeSpec::Factor(n) => (1..*n).map(|k| k as f64 / *n as f64).collect(),
            TimeSpec::List(v) => v.clone(),
        };
        if ts.is_empty() {
            return Err(Error::invalid("no time steps requested"));
        }
        if let Some(t) = ts.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::OutOfRange(format!("time step {t} outside (0,1)")));
        }
        if ts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("time steps must be strictly increasing"));
        }
        Ok(ts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsrSettings {
    pub ratio: f64,
    pub patch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationSettings {
    pub times: TimeSpec,
    pub fusion: FusionConfig,
    /// Sub-flows per direction when a single flow is given; defaults to 4.
    pub n_flows: Option<usize>,
    pub jitter: bool,
    pub ssr: Option<SsrSettings>,
    pub seed: u64,
    pub schedule: Schedule,
}

impl Default for InterpolationSettings {
    fn default() -> Self {
        InterpolationSettings {
            times: TimeSpec::Factor(2),
            fusion: FusionConfig::default(),
            n_flows: None,
            jitter: false,
            ssr: None,
            seed: 0,
            schedule: Schedule::default(),
        }
    }
}

/// In-memory inputs.
#[derive(Debug, Clone)]
pub struct InterpolationInputs {
    pub frame0: Frame,
    pub frame1: Frame,
    /// One flow (replicated) or N sub-flows, 0->1.
    pub flow01: Vec<FlowField>,
    pub flow10: Vec<FlowField>,
    /// `[H,W]` reliability maps; all ones when absent.
    pub reliability0: Option<Tensor>,
    pub reliability1: Option<Tensor>,
    /// Refinement network weights; randomly initialised from the seed when absent.
    pub prn: Option<ParamStore>,
}

/// File-based request.
#[derive(Debug, Clone)]
pub struct InterpolationRequest {
    pub frame0: PathBuf,
    pub frame1: PathBuf,
    pub flow01: Vec<PathBuf>,
    pub flow10: Vec<PathBuf>,
    pub prn_weights: Option<PathBuf>,
    pub settings: InterpolationSettings,
    pub out: PathBuf,
}

impl InterpolationRequest {
    pub fn load(&self) -> Result<InterpolationInputs> {
        let flows = |ps: &[PathBuf]| ps.iter().map(read_flo).collect::<Result<Vec<_>>>();
        Ok(InterpolationInputs {
            frame0: read_image(&self.frame0)?,
            frame1: read_image(&self.frame1)?,
            flow01: flows(&self.flow01)?,
            flow10: flows(&self.flow10)?,
            reliability0: None,
            reliability1: None,
            prn: self
                .prn_weights
                .as_ref()
                .map(ParamStore::load)
                .transpose()?,
        })
    }
}

/// One interpolated frame.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub t: f64,
    pub frame: Frame,
    pub hole_ratio: f64,
    /// Hole ratio of a diagnostic single-flow splat of the mean flows.
    pub hole_ratio_n1: f64,
    pub refined_patches: usize,
    pub unshared_macs: u64,
}

impl FrameResult {
    pub fn file_name(&self) -> String {
        frame_file_name(self.t)
    }
}

pub fn frame_file_name(t: f64) -> String {
    format!("frame_t{t}.png")
}

#[derive(Debug, Clone)]
pub struct Interpolation {
    pub n_flows: usize,
    pub frames: Vec<FrameResult>,
    pub ledger: CostLedger,
}

struct Refinement {
    store: ParamStore,
    cfg: PrnConfig,
    pyr0: FeaturePyramid,
    pyr1: FeaturePyramid,
    errors0: Tensor,
    errors1: Tensor,
    settings: SsrSettings,
}

/// Output of the shared stage, reusable across time steps.
pub struct Prepared {
    frame0: Frame,
    frame1: Frame,
    flows: MultiFlowSet,
    single: MultiFlowSet,
    b0: Tensor,
    b1: Tensor,
    fusion: FusionConfig,
    schedule: Schedule,
    refinement: Option<Refinement>,
    shared_macs: u64,
}

/// Per-time-step result before refinement.
pub struct Stage {
    pub t: f64,
    pub splat: SplatOutput,
    pub initial: Frame,
    pub error: Option<ErrorMap>,
    pub warped: Option<(FeaturePyramid, FeaturePyramid)>,
    pub hole_ratio_n1: f64,
    pub macs: u64,
}

impl Prepared {
    pub fn new(inputs: InterpolationInputs, settings: &InterpolationSettings) -> Result<Self> {
        settings.fusion.validate()?;
        let InterpolationInputs {
            frame0,
            frame1,
            flow01,
            flow10,
            reliability0,
            reliability1,
            prn,
        } = inputs;
        if !frame0.same_size(&frame1) || frame0.channels() != frame1.channels() {
            return Err(Error::shape(
                "interpolate",
                format!("{:?}", frame0.tensor().shape()),
                format!("{:?}", frame1.tensor().shape()),
            ));
        }
        let (c, h, w) = (frame0.channels(), frame0.height(), frame0.width());
        for f in flow01.iter().chain(&flow10) {
            if f.height() != h || f.width() != w {
                return Err(Error::shape(
                    "interpolate",
                    format!("{h}x{w} flow"),
                    format!("{}x{}", f.height(), f.width()),
                ));
            }
        }
        let flows = match (flow01.len(), flow10.len()) {
            (1, 1) => MultiFlowSet::replicate(
                &flow01[0],
                &flow10[0],
                settings.n_flows.unwrap_or(DEFAULT_N_FLOWS),
                settings.jitter,
            )?,
            (a, b) if a == b && a > 1 => {
                if settings.n_flows.is_some_and(|n| n != a) {
                    return Err(Error::invalid(format!(
                        "{a} sub-flows given but n_flows is {}",
                        settings.n_flows.unwrap_or(0)
                    )));
                }
                MultiFlowSet::with_unit_reliability(flow01, flow10)?
            }
            (a, b) => {
                return Err(Error::invalid(format!(
                    "need matching flow counts per direction, got {a} and {b}"
                )))
            }
        };
        let flows = match (reliability0, reliability1) {
            (None, None) => flows,
            (s0, s1) => {
                let ones = || Tensor::ones([h, w]);
                MultiFlowSet::new(
                    flows.forward().to_vec(),
                    flows.backward().to_vec(),
                    s0.unwrap_or_else(ones),
                    s1.unwrap_or_else(ones),
                )?
            }
        };
        let n = flows.n_flows();
        let hw = (h * w) as u64;
        let (mean01, mean10) = (flows.mean_forward(), flows.mean_backward());
        let (b0, b1) = brightness_consistency(&frame0, &frame1, &mean01, &mean10)?;
        // Mean flows, then per direction a bilinear backward warp (4 taps) and a residual.
        let mut shared_macs = 2 * (2 * n as u64 * hw) + 2 * (5 * c as u64 * hw);
        let single = MultiFlowSet::new(
            vec![mean01],
            vec![mean10],
            flows.reliability0().clone(),
            flows.reliability1().clone(),
        )?;

        let refinement = match settings.ssr {
            None => None,
            Some(s) => {
                if !(0.0..=1.0).contains(&s.ratio) {
                    return Err(Error::OutOfRange(format!(
                        "ssr ratio {} outside [0,1]",
                        s.ratio
                    )));
                }
                let cfg = PrnConfig {
                    image_channels: c,
                    ..PrnConfig::default()
                }
                .with_patch(s.patch)?;
                let align = 8;
                if h % align != 0 || w % align != 0 || h < s.patch || w < s.patch {
                    return Err(Error::invalid(format!(
                        "selective refinement needs frame sides that are multiples of {align} and at least the patch size {}, got {h}x{w}",
                        s.patch
                    )));
                }
                let store = match prn {
                    Some(store) => store,
                    None => {
                        let mut store = ParamStore::new();
                        cfg.init(&mut store, &mut ChaCha8Rng::seed_from_u64(settings.seed))?;
                        store
                    }
                };
                let (pyr0, m0) = build_context_pyramid(&frame0, &store, "pyr", settings.schedule)?;
                let (pyr1, m1) = build_context_pyramid(&frame1, &store, "pyr", settings.schedule)?;
                let scores = |b: &Tensor| -> Result<Tensor> {
                    let e: Vec<f64> = b.data().iter().map(|v| 1.0 - v.exp()).collect();
                    let rep: Vec<f64> = (0..n).flat_map(|_| e.iter().copied()).collect();
                    Tensor::new([n, h, w], rep)
                };
                shared_macs += m0 + m1 + 2 * hw;
                Some(Refinement {
                    errors0: scores(&b0)?,
                    errors1: scores(&b1)?,
                    store,
                    cfg,
                    pyr0,
                    pyr1,
                    settings: s,
                })
            }
        };
        Ok(Prepared {
            frame0,
            frame1,
            flows,
            single,
            b0,
            b1,
            fusion: settings.fusion,
            schedule: settings.schedule,
            refinement,
            shared_macs,
        })
    }

    pub fn shared_macs(&self) -> u64 {
        self.shared_macs
    }

    pub fn flows(&self) -> &MultiFlowSet {
        &self.flows
    }

    /// Brightness consistency maps `(b0, b1)`.
    pub fn brightness(&self) -> (&Tensor, &Tensor) {
        (&self.b0, &self.b1)
    }

    /// Everything up to, not including, patch refinement.
    pub fn stage(&self, t: f64) -> Result<Stage> {
        let (c, h, w) = (
            self.frame0.channels(),
            self.frame0.height(),
            self.frame0.width(),
        );
        let n = self.flows.n_flows();
        let hw = (h * w) as u64;
        let flows_t = scale_flows(&self.flows, t)?;
        let splat = m2m_splat_fuse_with(
            &self.frame0,
            &self.frame1,
            &flows_t,
            &self.b0,
            &self.b1,
            &self.fusion,
            t,
            self.schedule,
        )?;
        let initial = fill_holes(
            &splat,
            &self.frame0,
            &self.frame1,
            t,
            self.fusion.hole_policy,
        )?;
        let mut macs = 2 * n as u64 * 2 * hw + splat_macs(2, n, c, h, w);
        if self.fusion.hole_policy == HolePolicy::BlendInputs {
            macs += 2 * c as u64 * hw;
        }

        let single_t = scale_flows(&self.single, t)?;
        let hole_ratio_n1 = m2m_splat_fuse_with(
            &self.frame0,
            &self.frame1,
            &single_t,
            &self.b0,
            &self.b1,
            &self.fusion,
            t,
            self.schedule,
        )?
        .hole_ratio();

        let (error, warped) = match &self.refinement {
            None => (None, None),
            Some(r) => {
                let e = splat_error(
                    &r.errors0,
                    &r.errors1,
                    &flows_t,
                    &self.b0,
                    &self.b1,
                    &self.fusion,
                    t,
                )?;
                macs += splat_macs(2, n, 1, h, w);
                let (w0, w1, m) = splat_pyramid(
                    &r.pyr0,
                    &r.pyr1,
                    &flows_t,
                    &self.b0,
                    &self.b1,
                    &self.fusion,
                    self.schedule,
                )?;
                macs += m;
                (Some(e), Some((w0, w1)))
            }
        };
        Ok(Stage {
            t,
            splat,
            initial,
            error,
            warped,
            hole_ratio_n1,
            macs,
        })
    }

    /// Full per-time-step stage.
    pub fn render(&self, t: f64) -> Result<FrameResult> {
        let stage = self.stage(t)?;
        let hole_ratio = stage.splat.hole_ratio();
        let (frame, refined_patches, extra) = match (&self.refinement, &stage.error, &stage.warped)
        {
            (Some(r), Some(e), Some((w0, w1))) => {
                let refiner = PrnRefiner {
                    store: &r.store,
                    cfg: r.cfg,
                    warped0: w0,
                    warped1: w1,
                    schedule: self.schedule,
                };
                let out = refine_selected(
                    &stage.initial,
                    e,
                    r.settings.ratio,
                    r.settings.patch,
                    &refiner,
                    self.schedule,
                )?;
                (out.frame, out.selection.cells.len(), out.macs)
            }
            _ => (stage.initial, 0, 0),
        };
        frame.check_color_range()?;
        Ok(FrameResult {
            t,
            frame,
            hole_ratio,
            hole_ratio_n1: stage.hole_ratio_n1,
            refined_patches,
            unshared_macs: stage.macs + extra,
        })
    }

    /// Quality and cost of refining `ratios` of the patches at time `t`.
    /// The oracle refiner copies `truth`; otherwise the network refines.
    pub fn sweep(
        &self,
        t: f64,
        truth: &Frame,
        ratios: &[f64],
        oracle: bool,
    ) -> Result<Vec<SweepRow>> {
        let r = self
            .refinement
            .as_ref()
            .ok_or_else(|| Error::invalid("sweep needs selective refinement settings"))?;
        let stage = self.stage(t)?;
        let (error, (w0, w1)) = (
            stage.error.as_ref().expect("refinement on"),
            stage.warped.as_ref().expect("refinement on"),
        );
        let prn = PrnRefiner {
            store: &r.store,
            cfg: r.cfg,
            warped0: w0,
            warped1: w1,
            schedule: self.schedule,
        };
        let orc = OracleRefiner { truth };
        let refiner: &dyn PatchRefiner = if oracle { &orc } else { &prn };
        sweep_ratio(
            &stage.initial,
            error,
            truth,
            ratios,
            r.settings.patch,
            refiner,
            stage.macs,
            self.schedule,
        )
    }
}

/// Runs the shared stage once and every time step, concurrently under a
/// parallel schedule.
pub fn interpolate_frames(
    inputs: InterpolationInputs,
    settings: &InterpolationSettings,
) -> Result<Interpolation> {
    let times = settings.times.times()?;
    let prep = Prepared::new(inputs, settings)?;
    let results = par::map_range(settings.schedule, times.len(), |i| prep.render(times[i]));
    let mut ledger = CostLedger::new();
    ledger.add_shared(prep.shared_macs());
    let mut frames = Vec::with_capacity(results.len());
    for r in results {
        let r = r?;
        ledger.push_frame(r.unshared_macs);
        frames.push(r);
    }
    Ok(Interpolation {
        n_flows: prep.flows().n_flows(),
        frames,
        ledger,
    })
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn path_list(ps: &[PathBuf]) -> String {
    join(
        &ps.iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>(),
    )
}

/// Config echo, metric conventions, ledger and per-frame records. Output
/// paths are recorded relative to the output directory.
pub fn build_manifest(req: &InterpolationRequest, run: &Interpolation) -> Result<RunManifest> {
    let s = &req.settings;
    let mut m = RunManifest::new();
    m.push("manifest_version", 1)?;
    m.push("crate_version", env!("CARGO_PKG_VERSION"))?;
    m.push("config.frame0", req.frame0.display())?;
    m.push("config.frame1", req.frame1.display())?;
    m.push("config.flow01", path_list(&req.flow01))?;
    m.push("config.flow10", path_list(&req.flow10))?;
    m.push(
        "config.prn_weights",
        req.prn_weights
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "none".into()),
    )?;
    m.push("config.times", join(&s.times.times()?))?;
    m.push("config.alpha", s.fusion.alpha)?;
    m.push("config.exponent_clamp", s.fusion.exponent_clamp)?;
    m.push("config.weight_eps", s.fusion.weight_eps)?;
    m.push("config.hole_policy", format!("{:?}", s.fusion.hole_policy))?;
    m.push("config.n_flows", run.n_flows)?;
    m.push("config.jitter", s.jitter)?;
    match s.ssr {
        Some(r) => {
            m.push("config.ssr_ratio", r.ratio)?;
            m.push("config.patch_size", r.patch)?;
        }
        None => {
            m.push("config.ssr_ratio", "off")?;
            m.push("config.patch_size", "off")?;
        }
    }
    m.push("config.seed", s.seed)?;
    let hash = m.digest("config.");
    m.push("config_sha256", hash)?;
    m.push(
        "metric.psnr",
        format!("10*log10(1/mse), identical frames reported as {PSNR_CAP_DB} dB"),
    )?;
    m.push(
        "metric.ssim",
        format!("mean over valid {SSIM_WINDOW}x{SSIM_WINDOW} gaussian windows (sigma {SSIM_SIGMA}, K1 {SSIM_K1}, K2 {SSIM_K2}) of Rec.601 luma"),
    )?;
    m.push("ledger.unit", "multiply-accumulate operations")?;
    m.push("ledger.shared", run.ledger.shared())?;
    m.push("ledger.unshared", run.ledger.unshared()?)?;
    m.push("ledger.frames", run.frames.len())?;
    m.push("ledger.total", run.ledger.total())?;
    for (i, f) in run.frames.iter().enumerate() {
        m.push(format!("frame.{i}.t"), f.t)?;
        m.push(format!("frame.{i}.file"), f.file_name())?;
        m.push(format!("frame.{i}.hole_ratio"), f.hole_ratio)?;
        m.push(format!("frame.{i}.hole_ratio_n1"), f.hole_ratio_n1)?;
        m.push(format!("frame.{i}.refined_patches"), f.refined_patches)?;
        m.push(format!("frame.{i}.unshared"), f.unshared_macs)?;
    }
    Ok(m)
}

/// Loads inputs, interpolates, writes every frame and `manifest.txt` into `req.out`.
pub fn interpolate(req: &InterpolationRequest) -> Result<(Interpolation, RunManifest)> {
    let run = interpolate_frames(req.load()?, &req.settings)?;
    let manifest = build_manifest(req, &run)?;
    write_outputs(&req.out, &run, &manifest)?;
    Ok((run, manifest))
}

fn write_outputs(out: &Path, run: &Interpolation, manifest: &RunManifest) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    for f in &run.frames {
        write_image(out.join(f.file_name()), &f.frame)?;
    }
    manifest.write(out.join(MANIFEST_FILE))
}
