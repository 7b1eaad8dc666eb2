use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Square window partition of a `K x K` patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    /// Patch side K.
    pub patch: usize,
    /// Window side, the square root of the window area Q.
    pub side: usize,
    /// Cyclic shift applied before partitioning: 0 or `side / 2`.
    pub shift: usize,
}

impl WindowSpec {
    pub fn new(patch: usize, side: usize, shift: usize) -> Result<Self> {
        if side == 0 || patch == 0 || !patch.is_multiple_of(side) {
            return Err(Error::invalid(format!(
                "window side {side} must divide patch side {patch}"
            )));
        }
        if shift != 0 && (!side.is_multiple_of(2) || shift != side / 2) {
            return Err(Error::invalid(format!(
                "shift must be 0 or side/2 with an even side, got side {side} shift {shift}"
            )));
        }
        Ok(WindowSpec { patch, side, shift })
    }

    /// The shifted partner of an unshifted spec; windows of side 1 cannot shift.
    pub fn shifted(self) -> Self {
        WindowSpec {
            shift: if self.side.is_multiple_of(2) {
                self.side / 2
            } else {
                0
            },
            ..self
        }
    }

    /// Window area Q.
    pub fn q(&self) -> usize {
        self.side * self.side
    }

    pub fn n_windows(&self) -> usize {
        let n = self.patch / self.side;
        n * n
    }

    /// For each `[nW,Q,C]` output element, its index in the `[C,K,K]` input.
    pub fn partition_index(&self, channels: usize) -> Vec<usize> {
        let (k, s, q) = (self.patch, self.side, self.q());
        let per_row = k / s;
        let mut index = Vec::with_capacity(self.n_windows() * q * channels);
        for win in 0..self.n_windows() {
            let (wy, wx) = (win / per_row, win % per_row);
            for tok in 0..q {
                let (ry, rx) = (wy * s + tok / s, wx * s + tok % s);
                let (y, x) = ((ry + self.shift) % k, (rx + self.shift) % k);
                for c in 0..channels {
                    index.push((c * k + y) * k + x);
                }
            }
        }
        index
    }

    /// Inverse of [`partition_index`](Self::partition_index).
    pub fn merge_index(&self, channels: usize) -> Vec<usize> {
        let fwd = self.partition_index(channels);
        let mut inv = vec![0; fwd.len()];
        for (o, &i) in fwd.iter().enumerate() {
            inv[i] = o;
        }
        inv
    }

    fn check(&self, shape: &[usize]) -> Result<usize> {
        if shape.len() != 3 || shape[1] != self.patch || shape[2] != self.patch {
            return Err(Error::shape(
                "window_partition",
                format!("[C,{k},{k}]", k = self.patch),
                format!("{shape:?}"),
            ));
        }
        Ok(shape[0])
    }
}

/// `[C,K,K] -> [nW,Q,C]`.
pub fn window_partition(x: &Tensor, spec: &WindowSpec) -> Result<Tensor> {
    let c = spec.check(x.shape())?;
    let data = spec
        .partition_index(c)
        .iter()
        .map(|&i| x.data()[i])
        .collect();
    Tensor::new([spec.n_windows(), spec.q(), c], data)
}

/// `[nW,Q,C] -> [C,K,K]`.
pub fn window_merge(w: &Tensor, spec: &WindowSpec) -> Result<Tensor> {
    let s = w.shape();
    if s.len() != 3 || s[0] != spec.n_windows() || s[1] != spec.q() {
        return Err(Error::shape(
            "window_merge",
            format!("[{},{},C]", spec.n_windows(), spec.q()),
            format!("{s:?}"),
        ));
    }
    let c = s[2];
    let data = spec.merge_index(c).iter().map(|&i| w.data()[i]).collect();
    Tensor::new([c, spec.patch, spec.patch], data)
}

pub fn window_partition_graph(g: &mut Graph, x: Var, spec: &WindowSpec) -> Result<Var> {
    let c = spec.check(g.shape(x))?;
    g.gather(
        x,
        spec.partition_index(c),
        vec![spec.n_windows(), spec.q(), c],
    )
}

pub fn window_merge_graph(g: &mut Graph, w: Var, spec: &WindowSpec) -> Result<Var> {
    let s = g.shape(w).to_vec();
    if s.len() != 3 || s[0] != spec.n_windows() || s[1] != spec.q() {
        return Err(Error::shape(
            "window_merge",
            format!("[{},{},C]", spec.n_windows(), spec.q()),
            format!("{s:?}"),
        ));
    }
    g.gather(
        w,
        spec.merge_index(s[2]),
        vec![s[2], spec.patch, spec.patch],
    )
}
