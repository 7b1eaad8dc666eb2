//! Patch refinement network.
//!
//! An encoder-decoder over four levels. Every level runs one Swin-Mixer
//! block whose context is the channel concatenation of the two warped
//! pyramid crops at that level. The decoder upsamples with nearest
//! neighbour plus a conv, adds the encoder skip and runs another block.
//! A zero-initialised head predicts a residual on the initial patch.

use rand::Rng;

use crate::diffcore::{Bound, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::mixernet::mixer::SmbDims;
use crate::mixernet::pyramid::{init_pyramid_encoder, pyramid_channels, LEVELS};
use crate::mixernet::smb_forward;
use crate::mixernet::window::WindowSpec;
use crate::par::Schedule;
use crate::warp::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrnConfig {
    /// Patch side K at level 0.
    pub patch: usize,
    /// Feature widths per level.
    pub widths: [usize; LEVELS],
    /// Window side per level.
    pub window_sides: [usize; LEVELS],
    pub image_channels: usize,
}

impl Default for PrnConfig {
    fn default() -> Self {
        PrnConfig {
            patch: 32,
            widths: [16, 32, 64, 128],
            window_sides: [8, 8, 8, 4],
            image_channels: 3,
        }
    }
}

impl PrnConfig {
    pub fn toy() -> Self {
        PrnConfig {
            patch: 16,
            widths: [4, 8, 16, 32],
            window_sides: [4, 4, 4, 2],
            image_channels: 3,
        }
    }

    /// Smallest useful configuration, sized for gradient checks.
    pub fn micro() -> Self {
        PrnConfig {
            patch: 8,
            widths: [4, 4, 4, 4],
            window_sides: [4, 2, 2, 1],
            image_channels: 3,
        }
    }

    /// Same widths with a different patch side; window sides shrink to fit
    /// levels smaller than them.
    pub fn with_patch(self, patch: usize) -> Result<Self> {
        let window_sides = std::array::from_fn(|l| self.window_sides[l].min((patch >> l).max(1)));
        let c = PrnConfig {
            patch,
            window_sides,
            ..self
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let align = 1 << (LEVELS - 1);
        if self.patch == 0 || !self.patch.is_multiple_of(align) {
            return Err(Error::invalid(format!(
                "patch side {} must be a positive multiple of {align}",
                self.patch
            )));
        }
        for l in 0..LEVELS {
            WindowSpec::new(self.patch >> l, self.window_sides[l], 0)?;
        }
        if self.widths.contains(&0) || self.image_channels == 0 {
            return Err(Error::invalid("widths must be positive"));
        }
        Ok(())
    }

    /// Channels of the context pyramid levels.
    pub fn pyramid_channels(&self) -> [usize; LEVELS] {
        pyramid_channels(self.image_channels, &self.widths)
    }

    fn smb(&self, l: usize) -> SmbDims {
        SmbDims {
            channels: self.widths[l],
            context: 2 * self.pyramid_channels()[l],
            spec: WindowSpec {
                patch: self.patch >> l,
                side: self.window_sides[l],
                shift: 0,
            },
        }
    }

    /// Registers the PRN (`prn.*`) and context encoder (`pyr.*`) parameters.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.validate()?;
        init_pyramid_encoder(store, "pyr", &self.pyramid_channels(), rng)?;
        let w = self.widths;
        conv_param(store, "prn.stem", w[0], self.image_channels, rng)?;
        for l in 0..LEVELS {
            self.smb(l).init(store, &format!("prn.enc{l}"), rng)?;
        }
        for l in 1..LEVELS {
            conv_param(store, &format!("prn.down{l}"), w[l], w[l - 1], rng)?;
            conv_param(store, &format!("prn.up{l}"), w[l - 1], w[l], rng)?;
        }
        for l in 0..LEVELS - 1 {
            self.smb(l).init(store, &format!("prn.dec{l}"), rng)?;
        }
        store.insert(
            "prn.head.w",
            Tensor::zeros([self.image_channels, w[0], 3, 3]),
        )?;
        store.insert("prn.head.b", Tensor::zeros([self.image_channels]))
    }
}

fn conv_param<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    cout: usize,
    cin: usize,
    rng: &mut R,
) -> Result<()> {
    let a = 1.0 / ((cin * 9) as f64).sqrt();
    store.insert(
        format!("{prefix}.w"),
        Tensor::uniform([cout, cin, 3, 3], -a, a, rng),
    )?;
    store.insert(format!("{prefix}.b"), Tensor::zeros([cout]))
}

fn conv(g: &mut Graph, p: &Bound<'_>, prefix: &str, x: Var, stride: usize) -> Result<Var> {
    g.conv2d(
        x,
        p.get(&format!("{prefix}.w"))?,
        Some(p.get(&format!("{prefix}.b"))?),
        stride,
    )
}

/// Patch-level warped pyramids: `levels0[l]` and `levels1[l]` are `[C_l, K/2^l, K/2^l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPyramids {
    pub levels0: Vec<Tensor>,
    pub levels1: Vec<Tensor>,
}

impl PatchPyramids {
    pub fn check(&self, cfg: &PrnConfig) -> Result<()> {
        let ch = cfg.pyramid_channels();
        for levels in [&self.levels0, &self.levels1] {
            if levels.len() != LEVELS {
                return Err(Error::invalid(format!(
                    "patch pyramid needs {LEVELS} levels"
                )));
            }
            for (l, t) in levels.iter().enumerate() {
                let k = cfg.patch >> l;
                t.expect_shape("prn_refine_patch", &[ch[l], k, k])?;
            }
        }
        Ok(())
    }
}

/// Refines `initial: [3,K,K]` given per-level crops `(q_t0^l, q_t1^l)`.
pub fn prn_refine_patch(
    g: &mut Graph,
    p: &Bound<'_>,
    cfg: &PrnConfig,
    ctx: &[(Var, Var)],
    initial: Var,
) -> Result<Var> {
    cfg.validate()?;
    if ctx.len() != LEVELS {
        return Err(Error::invalid(format!(
            "patch pyramid needs {LEVELS} levels"
        )));
    }
    g.value(initial).expect_shape(
        "prn_refine_patch",
        &[cfg.image_channels, cfg.patch, cfg.patch],
    )?;
    let mut cat = Vec::with_capacity(LEVELS);
    for (l, &(a, b)) in ctx.iter().enumerate() {
        let k = cfg.patch >> l;
        for v in [a, b] {
            let s = g.shape(v);
            if s.len() != 3 || s[1] != k || s[2] != k {
                return Err(Error::shape(
                    "prn_refine_patch",
                    format!("level {l} crop of side {k}"),
                    format!("{s:?}"),
                ));
            }
        }
        cat.push(g.concat(&[a, b])?);
    }

    let mut x = conv(g, p, "prn.stem", initial, 1)?;
    let mut skips = Vec::with_capacity(LEVELS);
    for (l, &context) in cat.iter().enumerate() {
        if l > 0 {
            let d = conv(g, p, &format!("prn.down{l}"), x, 2)?;
            x = g.gelu(d)?;
        }
        x = smb_forward(g, p, &format!("prn.enc{l}"), x, context, &cfg.smb(l))?;
        skips.push(x);
    }
    for l in (0..LEVELS - 1).rev() {
        let u = g.upsample_nearest2x(x)?;
        let u = conv(g, p, &format!("prn.up{}", l + 1), u, 1)?;
        let s = g.add(u, skips[l])?;
        x = smb_forward(g, p, &format!("prn.dec{l}"), s, cat[l], &cfg.smb(l))?;
    }
    let r = conv(g, p, "prn.head", x, 1)?;
    let out = g.add(initial, r)?;
    g.clamp(out, 0.0, 1.0)
}

/// Eager refinement with frozen parameters; returns the patch and its MAC count.
pub fn refine_patch(
    store: &ParamStore,
    cfg: &PrnConfig,
    pyr: &PatchPyramids,
    initial: &Frame,
    schedule: Schedule,
) -> Result<(Frame, u64)> {
    pyr.check(cfg)?;
    let mut g = Graph::with_schedule(schedule);
    let p = store.bind_frozen(&mut g);
    let ctx: Vec<(Var, Var)> = pyr
        .levels0
        .iter()
        .zip(&pyr.levels1)
        .map(|(a, b)| (g.constant(a.clone()), g.constant(b.clone())))
        .collect();
    let x = g.constant(initial.tensor().clone());
    let y = prn_refine_patch(&mut g, &p, cfg, &ctx, x)?;
    Ok((Frame::from_tensor(g.value(y).clone())?, g.macs()))
}
