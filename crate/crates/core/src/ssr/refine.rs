use std::io::Write;

use crate::diffcore::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::mixernet::{crop_tensor, refine_patch, FeaturePyramid, PatchPyramids, PrnConfig};
use crate::par::{self, Schedule};
use crate::pipeline::metrics::{psnr, ssim};
use crate::ssr::select::{downsample_error, select_top_p, PatchSelection};
use crate::ssr::ErrorMap;
use crate::warp::Frame;

/// Crops every selected patch of `frame`.
pub fn crop_patches(frame: &Frame, sel: &PatchSelection) -> Result<Vec<Tensor>> {
    sel.check_frame(frame.height(), frame.width())?;
    sel.cells
        .iter()
        .map(|&cell| {
            let (t, l, h, w) = sel.rect(cell, frame.height(), frame.width());
            crop_tensor(frame.tensor(), t, l, h, w)
        })
        .collect()
}

/// Writes `patches` over `base` at the selected cells.
pub fn paste_patches(base: &Frame, patches: &[Tensor], sel: &PatchSelection) -> Result<Frame> {
    sel.check_frame(base.height(), base.width())?;
    if patches.len() != sel.cells.len() {
        return Err(Error::shape(
            "paste_patches",
            format!("{} patches", sel.cells.len()),
            patches.len(),
        ));
    }
    let mut out = base.clone();
    let (c, hh, ww) = (base.channels(), base.height(), base.width());
    for (&cell, p) in sel.cells.iter().zip(patches) {
        let (t, l, h, w) = sel.rect(cell, hh, ww);
        p.expect_shape("paste_patches", &[c, h, w])?;
        for ch in 0..c {
            for y in 0..h {
                let dst = (ch * hh + t + y) * ww + l;
                out.data_mut()[dst..dst + w]
                    .copy_from_slice(&p.data()[(ch * h + y) * w..(ch * h + y + 1) * w]);
            }
        }
    }
    Ok(out)
}

/// Produces the refined content of one selected cell.
pub trait PatchRefiner: Sync {
    /// Returns the refined `[C,h,w]` region of `cell` and the MACs spent.
    fn refine(
        &self,
        initial: &Frame,
        sel: &PatchSelection,
        cell: (usize, usize),
    ) -> Result<(Tensor, u64)>;
}

/// Replaces patches with ground truth; charged a nominal copy cost of `K*K*C` per patch.
#[derive(Debug, Clone)]
pub struct OracleRefiner<'a> {
    pub truth: &'a Frame,
}

impl PatchRefiner for OracleRefiner<'_> {
    fn refine(
        &self,
        initial: &Frame,
        sel: &PatchSelection,
        cell: (usize, usize),
    ) -> Result<(Tensor, u64)> {
        let (t, l, h, w) = sel.rect(cell, initial.height(), initial.width());
        let cost = (sel.patch * sel.patch * initial.channels()) as u64;
        Ok((crop_tensor(self.truth.tensor(), t, l, h, w)?, cost))
    }
}

/// Runs the patch refinement network on a full `K x K` window. Edge cells
/// use the window shifted inward to fit the frame and keep their own region.
pub struct PrnRefiner<'a> {
    pub store: &'a ParamStore,
    pub cfg: PrnConfig,
    pub warped0: &'a FeaturePyramid,
    pub warped1: &'a FeaturePyramid,
    pub schedule: Schedule,
}

impl PatchRefiner for PrnRefiner<'_> {
    fn refine(
        &self,
        initial: &Frame,
        sel: &PatchSelection,
        cell: (usize, usize),
    ) -> Result<(Tensor, u64)> {
        let k = self.cfg.patch;
        let (hh, ww) = (initial.height(), initial.width());
        if sel.patch != k || hh < k || ww < k {
            return Err(Error::invalid(format!(
                "patch side {} needs a frame of at least {k}x{k}, got {hh}x{ww}",
                sel.patch
            )));
        }
        let (t, l, h, w) = sel.rect(cell, hh, ww);
        let (wt, wl) = (t.min(hh - k), l.min(ww - k));
        let pyr = PatchPyramids {
            levels0: self.warped0.crop(wt, wl, k)?,
            levels1: self.warped1.crop(wt, wl, k)?,
        };
        let init = Frame::from_tensor(crop_tensor(initial.tensor(), wt, wl, k, k)?)?;
        let (out, macs) = refine_patch(self.store, &self.cfg, &pyr, &init, self.schedule)?;
        Ok((crop_tensor(out.tensor(), t - wt, l - wl, h, w)?, macs))
    }
}

#[derive(Debug, Clone)]
pub struct Refined {
    pub frame: Frame,
    pub selection: PatchSelection,
    /// MACs added by refinement.
    pub macs: u64,
}

/// Downsample, select the top-`p` cells, refine each and paste back.
pub fn refine_selected(
    initial: &Frame,
    error: &ErrorMap,
    p: f64,
    patch: usize,
    refiner: &dyn PatchRefiner,
    schedule: Schedule,
) -> Result<Refined> {
    initial.expect_size("refine_selected", error.height(), error.width())?;
    let coarse = downsample_error(error, patch)?;
    let selection = select_top_p(&coarse, p, patch)?;
    let results = par::map_range(schedule, selection.cells.len(), |i| {
        refiner.refine(initial, &selection, selection.cells[i])
    });
    let mut patches = Vec::with_capacity(results.len());
    let mut macs = 0;
    for r in results {
        let (t, m) = r?;
        patches.push(t);
        macs += m;
    }
    let frame = paste_patches(initial, &patches, &selection)?;
    Ok(Refined {
        frame,
        selection,
        macs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub ratio: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub unshared_flops: u64,
}

/// One row per ratio: quality against `truth` and the unshared cost
/// (`base_unshared` plus refinement).
#[allow(clippy::too_many_arguments)]
pub fn sweep_ratio(
    initial: &Frame,
    error: &ErrorMap,
    truth: &Frame,
    ratios: &[f64],
    patch: usize,
    refiner: &dyn PatchRefiner,
    base_unshared: u64,
    schedule: Schedule,
) -> Result<Vec<SweepRow>> {
    ratios
        .iter()
        .map(|&ratio| {
            let r = refine_selected(initial, error, ratio, patch, refiner, schedule)?;
            Ok(SweepRow {
                ratio,
                psnr_db: psnr(&r.frame, truth, 1.0)?,
                ssim: ssim(&r.frame, truth)?,
                unshared_flops: base_unshared + r.macs,
            })
        })
        .collect()
}

pub const SWEEP_HEADER: &str = "ratio,psnr_db,ssim,unshared_flops";

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.ratio, r.psnr_db, r.ssim, r.unshared_flops
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(h: usize, w: usize, seed: f64) -> Frame {
        Frame::from_fn(3, h, w, |c, y, x| {
            ((c as f64 + seed) * 0.7 + y as f64 * 0.31 + x as f64 * 0.17).sin() * 0.5 + 0.5
        })
    }

    #[test]
    fn crop_paste_round_trip_with_ragged_edges() {
        let f = frame(20, 27, 0.0);
        let all: Vec<(usize, usize)> = (0..3).flat_map(|r| (0..4).map(move |c| (r, c))).collect();
        let sel = PatchSelection::from_cells(8, 3, 4, all).unwrap();
        let patches = crop_patches(&f, &sel).unwrap();
        assert_eq!(patches[11].shape(), &[3, 4, 3]);
        assert_eq!(paste_patches(&f, &patches, &sel).unwrap(), f);

        let none = PatchSelection::from_cells(8, 3, 4, vec![]).unwrap();
        assert_eq!(paste_patches(&f, &[], &none).unwrap(), f);
        assert!(PatchSelection::from_cells(8, 3, 4, vec![(3, 0)]).is_err());
    }

    #[test]
    fn oracle_refinement() {
        let (init, truth) = (frame(16, 16, 0.0), frame(16, 16, 1.0));
        let e = crate::ssr::error_target(&init, &truth).unwrap();
        let oracle = OracleRefiner { truth: &truth };
        let zero = refine_selected(&init, &e, 0.0, 8, &oracle, Schedule::Sequential).unwrap();
        assert_eq!((zero.frame.clone(), zero.macs), (init.clone(), 0));
        let full = refine_selected(&init, &e, 1.0, 8, &oracle, Schedule::Parallel).unwrap();
        assert_eq!(full.frame, truth);
        assert_eq!(full.macs, 4 * 8 * 8 * 3);

        let rows = sweep_ratio(
            &init,
            &e,
            &truth,
            &[0.0, 0.5, 0.5],
            8,
            &oracle,
            10,
            Schedule::Sequential,
        )
        .unwrap();
        assert_eq!(rows[0].unshared_flops, 10);
        assert_eq!(rows[1], rows[2]);
        let mut csv = Vec::new();
        write_sweep_csv(&rows, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("ratio,psnr_db,ssim,unshared_flops\n0,"));
        assert_eq!(text.lines().count(), 4);
    }
}
