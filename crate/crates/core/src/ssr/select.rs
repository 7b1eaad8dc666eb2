use crate::error::{Error, Result};
use crate::ssr::ErrorMap;

/// Max-pools `e` over `k x k` blocks; ragged edge blocks use the pixels available.
pub fn downsample_error(e: &ErrorMap, k: usize) -> Result<ErrorMap> {
    if k == 0 {
        return Err(Error::invalid("downsample factor must be >= 1"));
    }
    let (h, w) = (e.height(), e.width());
    let (gh, gw) = (h.div_ceil(k), w.div_ceil(k));
    let mut out = vec![f64::NEG_INFINITY; gh * gw];
    for y in 0..h {
        for x in 0..w {
            let o = &mut out[(y / k) * gw + x / k];
            *o = o.max(e.get(y, x));
        }
    }
    ErrorMap::new(gh, gw, out)
}

/// Patches chosen for refinement on a `grid_h x grid_w` grid of side-`patch` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSelection {
    pub patch: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub ratio: f64,
    /// `(row, col)` cells in row-major order.
    pub cells: Vec<(usize, usize)>,
}

impl PatchSelection {
    /// Selection of explicit cells, validated against the grid.
    pub fn from_cells(
        patch: usize,
        grid_h: usize,
        grid_w: usize,
        mut cells: Vec<(usize, usize)>,
    ) -> Result<Self> {
        cells.sort_unstable();
        cells.dedup();
        if let Some(&(r, c)) = cells.iter().find(|&&(r, c)| r >= grid_h || c >= grid_w) {
            return Err(Error::OutOfRange(format!(
                "patch ({r},{c}) outside {grid_h}x{grid_w} grid"
            )));
        }
        let total = (grid_h * grid_w).max(1);
        let ratio = cells.len() as f64 / total as f64;
        Ok(PatchSelection {
            patch,
            grid_h,
            grid_w,
            ratio,
            cells,
        })
    }

    pub fn total_cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// `(top, left, height, width)` of a cell in a `height x width` frame; edge cells are cut at the border.
    pub fn rect(
        &self,
        cell: (usize, usize),
        height: usize,
        width: usize,
    ) -> (usize, usize, usize, usize) {
        let (top, left) = (cell.0 * self.patch, cell.1 * self.patch);
        (
            top,
            left,
            self.patch.min(height - top),
            self.patch.min(width - left),
        )
    }

    pub(crate) fn check_frame(&self, height: usize, width: usize) -> Result<()> {
        if height.div_ceil(self.patch) != self.grid_h || width.div_ceil(self.patch) != self.grid_w {
            return Err(Error::shape(
                "patch_selection",
                format!("{}x{} grid", self.grid_h, self.grid_w),
                format!("{height}x{width} frame with patch {}", self.patch),
            ));
        }
        Ok(())
    }
}

/// Number of cells selected at ratio `p`: `ceil(p * total)`, tolerant of
/// products like `0.7 * 10` landing a rounding error above an integer.
pub fn selection_count(p: f64, total: usize) -> usize {
    let x = p * total as f64;
    let r = x.round();
    let n = if (x - r).abs() <= 1e-9 * total.max(1) as f64 {
        r
    } else {
        x.ceil()
    };
    (n.max(0.0) as usize).min(total)
}

/// The `ceil(p * cells)` highest cells of the downsampled map; ties go to the
/// lower row-major index.
pub fn select_top_p(coarse: &ErrorMap, p: f64, patch: usize) -> Result<PatchSelection> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfRange(format!(
            "selection ratio {p} outside [0,1]"
        )));
    }
    let (gh, gw) = (coarse.height(), coarse.width());
    let total = gh * gw;
    let count = selection_count(p, total);
    let mut order: Vec<usize> = (0..total).collect();
    let v = coarse.data();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut idx = order[..count].to_vec();
    idx.sort_unstable();
    Ok(PatchSelection {
        patch,
        grid_h: gh,
        grid_w: gw,
        ratio: p,
        cells: idx.into_iter().map(|i| (i / gw, i % gw)).collect(),
    })
}
