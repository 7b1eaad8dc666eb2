use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Channel-major image or feature map, stored as a `[C,H,W]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame(Tensor);

impl Frame {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_tensor(Tensor::new([channels, height, width], data)?)
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        t.expect_rank("frame", 3)?;
        if t.is_empty() {
            return Err(Error::invalid("empty frame"));
        }
        Ok(Frame(t))
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Frame(Tensor::zeros([channels, height, width]))
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Frame(Tensor::full([channels, height, width], value))
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let hw = height * width;
        Frame(Tensor::from_fn([channels, height, width], |i| {
            f(i / hw, (i % hw) / width, i % width)
        }))
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn pixels(&self) -> usize {
        self.height() * self.width()
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.0.data_mut()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.0.data()[(c * self.height() + y) * self.width() + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let (h, w) = (self.height(), self.width());
        self.0.data_mut()[(c * h + y) * w + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let hw = self.pixels();
        &self.0.data()[c * hw..(c + 1) * hw]
    }

    pub fn same_size(&self, other: &Frame) -> bool {
        self.height() == other.height() && self.width() == other.width()
    }

    pub(crate) fn expect_size(&self, op: &'static str, height: usize, width: usize) -> Result<()> {
        if self.height() != height || self.width() != width {
            return Err(Error::shape(
                op,
                format!("{height}x{width}"),
                format!("{}x{}", self.height(), self.width()),
            ));
        }
        Ok(())
    }

    /// Color frames must lie in `[0, 1]`.
    pub fn check_color_range(&self) -> Result<()> {
        match self.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            Some(v) => Err(Error::OutOfRange(format!("color value {v} outside [0,1]"))),
            None => Ok(()),
        }
    }
}

/// Per-pixel displacement `(dx, dy)` in pixels, stored as `[2,H,W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField(Tensor);

impl FlowField {
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        t.expect_rank("flow", 3)?;
        if t.shape()[0] != 2 {
            return Err(Error::shape("flow", "[2,H,W]", format!("{:?}", t.shape())));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite { op: "flow" });
        }
        Ok(FlowField(t))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField(Tensor::zeros([2, height, width]))
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> Self {
        let hw = height * width;
        let mut data = vec![0.0; 2 * hw];
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = f(y, x);
                data[y * width + x] = dx;
                data[hw + y * width + x] = dy;
            }
        }
        FlowField(Tensor::new([2, height, width], data).expect("flow shape"))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let (h, w) = (self.height(), self.width());
        (self.0.data()[y * w + x], self.0.data()[h * w + y * w + x])
    }

    pub fn dx(&self) -> &[f64] {
        &self.0.data()[..self.height() * self.width()]
    }

    pub fn dy(&self) -> &[f64] {
        &self.0.data()[self.height() * self.width()..]
    }

    pub fn scaled(&self, k: f64) -> FlowField {
        FlowField(self.0.map(|v| v * k))
    }

    pub fn offset(&self, dx: f64, dy: f64) -> FlowField {
        let hw = self.height() * self.width();
        let mut t = self.0.clone();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += if i < hw { dx } else { dy };
        }
        FlowField(t)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// N sub-flows per direction plus one reliability map per direction.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiFlowSet {
    forward: Vec<FlowField>,
    backward: Vec<FlowField>,
    reliability0: Tensor,
    reliability1: Tensor,
}

impl MultiFlowSet {
    /// `forward` holds the 0->1 sub-flows, `backward` the 1->0 sub-flows;
    /// reliability maps are `[H,W]` in `[0,1]`.
    pub fn new(
        forward: Vec<FlowField>,
        backward: Vec<FlowField>,
        reliability0: Tensor,
        reliability1: Tensor,
    ) -> Result<Self> {
        let first = forward
            .first()
            .ok_or_else(|| Error::invalid("at least one sub-flow per direction is required"))?;
        let (h, w) = (first.height(), first.width());
        if forward.len() != backward.len() {
            return Err(Error::shape(
                "multi_flow",
                format!("{} backward sub-flows", forward.len()),
                backward.len(),
            ));
        }
        for f in forward.iter().chain(&backward) {
            if f.height() != h || f.width() != w {
                return Err(Error::shape(
                    "multi_flow",
                    format!("{h}x{w}"),
                    format!("{}x{}", f.height(), f.width()),
                ));
            }
        }
        for s in [&reliability0, &reliability1] {
            s.expect_shape("reliability", &[h, w])?;
            if let Some(v) = s.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::OutOfRange(format!("reliability {v} outside [0,1]")));
            }
        }
        Ok(MultiFlowSet {
            forward,
            backward,
            reliability0,
            reliability1,
        })
    }

    /// Reliability maps of all ones.
    pub fn with_unit_reliability(
        forward: Vec<FlowField>,
        backward: Vec<FlowField>,
    ) -> Result<Self> {
        let (h, w) = forward
            .first()
            .map(|f| (f.height(), f.width()))
            .unwrap_or((0, 0));
        Self::new(
            forward,
            backward,
            Tensor::ones([h, w]),
            Tensor::ones([h, w]),
        )
    }

    /// Replicates one flow per direction `n` times; with `jitter`, the copies
    /// are offset by the diagonal half-pixel pattern `(±0.5, ±0.5)`.
    pub fn replicate(f01: &FlowField, f10: &FlowField, n: usize, jitter: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n_flows must be >= 1"));
        }
        const OFFSETS: [(f64, f64); 4] = [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)];
        let make = |f: &FlowField| -> Vec<FlowField> {
            (0..n)
                .map(|i| {
                    if jitter && n > 1 {
                        let (dx, dy) = OFFSETS[i % 4];
                        f.offset(dx, dy)
                    } else {
                        f.clone()
                    }
                })
                .collect()
        };
        Self::with_unit_reliability(make(f01), make(f10))
    }

    pub fn n_flows(&self) -> usize {
        self.forward.len()
    }

    pub fn height(&self) -> usize {
        self.forward[0].height()
    }

    pub fn width(&self) -> usize {
        self.forward[0].width()
    }

    pub fn forward(&self) -> &[FlowField] {
        &self.forward
    }

    pub fn backward(&self) -> &[FlowField] {
        &self.backward
    }

    pub fn reliability0(&self) -> &Tensor {
        &self.reliability0
    }

    pub fn reliability1(&self) -> &Tensor {
        &self.reliability1
    }

    /// Unweighted per-pixel mean of the 0->1 sub-flows.
    pub fn mean_forward(&self) -> FlowField {
        mean_flow(&self.forward)
    }

    pub fn mean_backward(&self) -> FlowField {
        mean_flow(&self.backward)
    }

    /// The 0->1 sub-flows stacked as `[N,2,H,W]`.
    pub fn stacked_forward(&self) -> Tensor {
        stack(&self.forward)
    }

    pub fn stacked_backward(&self) -> Tensor {
        stack(&self.backward)
    }

    pub(crate) fn map_flows(
        &self,
        f: impl Fn(&FlowField) -> FlowField,
        g: impl Fn(&FlowField) -> FlowField,
    ) -> Self {
        MultiFlowSet {
            forward: self.forward.iter().map(f).collect(),
            backward: self.backward.iter().map(g).collect(),
            reliability0: self.reliability0.clone(),
            reliability1: self.reliability1.clone(),
        }
    }

    pub(crate) fn with_parts(
        forward: Vec<FlowField>,
        backward: Vec<FlowField>,
        reliability0: Tensor,
        reliability1: Tensor,
    ) -> Self {
        MultiFlowSet {
            forward,
            backward,
            reliability0,
            reliability1,
        }
    }
}

fn mean_flow(flows: &[FlowField]) -> FlowField {
    let n = flows.len() as f64;
    let mut acc = flows[0].tensor().clone();
    for f in &flows[1..] {
        for (a, b) in acc.data_mut().iter_mut().zip(f.tensor().data()) {
            *a += b;
        }
    }
    FlowField(acc.map(|v| v / n))
}

fn stack(flows: &[FlowField]) -> Tensor {
    let (h, w) = (flows[0].height(), flows[0].width());
    let data = flows
        .iter()
        .flat_map(|f| f.tensor().data().iter().copied())
        .collect();
    Tensor::new([flows.len(), 2, h, w], data).expect("stacked flow shape")
}
