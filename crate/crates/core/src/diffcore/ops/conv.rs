use crate::diffcore::graph::{GradSink, Graph, Op, Var};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};
use crate::par;

pub(crate) struct ConvMeta {
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: usize,
}

pub fn conv_out_len(len: usize, stride: usize) -> usize {
    (len - 1) / stride + 1
}

impl Graph {
    /// 3x3 convolution with zero padding 1; `x: [Cin,H,W]`, `w: [Cout,Cin,3,3]`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        if stride != 1 && stride != 2 {
            return Err(Error::invalid(format!(
                "conv2d stride must be 1 or 2, got {stride}"
            )));
        }
        let tx = self.value(x);
        let tw = self.value(w);
        tx.expect_rank("conv2d", 3)?;
        let [cin, h, wd] = [tx.shape()[0], tx.shape()[1], tx.shape()[2]];
        let cout = tw.shape().first().copied().unwrap_or(0);
        tw.expect_shape("conv2d", &[cout, cin, 3, 3])?;
        let bias = match b {
            Some(b) => {
                self.value(b).expect_shape("conv2d", &[cout])?;
                Some(self.value(b).data().to_vec())
            }
            None => None,
        };
        let (ho, wo) = (conv_out_len(h, stride), conv_out_len(wd, stride));
        let (xd, wdat) = (tx.data(), tw.data());
        let planes = par::map_range(self.schedule(), cout, |co| {
            let mut out = vec![bias.as_ref().map_or(0.0, |b| b[co]); ho * wo];
            for ci in 0..cin {
                let plane = &xd[ci * h * wd..(ci + 1) * h * wd];
                let k = &wdat[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
                for oy in 0..ho {
                    for ky in 0..3 {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &plane[iy as usize * wd..(iy as usize + 1) * wd];
                        for ox in 0..wo {
                            let mut acc = 0.0;
                            for kx in 0..3 {
                                let ix = (ox * stride + kx) as isize - 1;
                                if ix >= 0 && ix < wd as isize {
                                    acc += k[ky * 3 + kx] * row[ix as usize];
                                }
                            }
                            out[oy * wo + ox] += acc;
                        }
                    }
                }
            }
            out
        });
        let t = Tensor::new([cout, ho, wo], planes.concat())?;
        self.add_macs((cout * cin * 9 * ho * wo) as u64);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(t, Op::Conv2d(ConvMeta { x, w, b, stride }), &inputs)
    }
}

pub(crate) fn conv2d_backward(meta: &ConvMeta, g: &[f64], sink: &mut GradSink<'_>) {
    let ConvMeta { x, w, b, stride } = *meta;
    let xs = sink.value(x).shape().to_vec();
    let (cin, h, wd) = (xs[0], xs[1], xs[2]);
    let cout = sink.value(w).shape()[0];
    let (ho, wo) = (conv_out_len(h, stride), conv_out_len(wd, stride));
    // Visits (co, ci, k, out index, in index) for every in-bounds tap.
    let taps = |f: &mut dyn FnMut(usize, usize, usize, usize, usize)| {
        for co in 0..cout {
            for ci in 0..cin {
                for oy in 0..ho {
                    for ky in 0..3 {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            for kx in 0..3 {
                                let ix = (ox * stride + kx) as isize - 1;
                                if ix >= 0 && ix < wd as isize {
                                    f(
                                        co,
                                        ci,
                                        ky * 3 + kx,
                                        co * ho * wo + oy * wo + ox,
                                        ci * h * wd + iy as usize * wd + ix as usize,
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
    };
    if sink.wants(x) {
        let wdat = sink.value(w).data().to_vec();
        sink.accumulate(x, |acc| {
            taps(&mut |co, ci, k, o, i| acc[i] += g[o] * wdat[(co * cin + ci) * 9 + k]);
        });
    }
    if sink.wants(w) {
        let xd = sink.value(x).data().to_vec();
        sink.accumulate(w, |acc| {
            taps(&mut |co, ci, k, o, i| acc[(co * cin + ci) * 9 + k] += g[o] * xd[i]);
        });
    }
    if let Some(b) = b {
        sink.accumulate(b, |acc| {
            for co in 0..cout {
                acc[co] += g[co * ho * wo..(co + 1) * ho * wo].iter().sum::<f64>();
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_and_stride_two_shape() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn([1, 5, 5], |i| i as f64));
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = g.constant(Tensor::new([1, 1, 3, 3], k).unwrap());
        let y = g.conv2d(x, w, None, 1).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let y2 = g.conv2d(x, w, None, 2).unwrap();
        assert_eq!(g.shape(y2), &[1, 3, 3]);
        assert_eq!(
            g.value(y2).data(),
            &[0., 2., 4., 10., 12., 14., 20., 22., 24.]
        );
    }

    #[test]
    fn zero_padding_at_borders() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones([1, 3, 3]));
        let w = g.constant(Tensor::ones([1, 1, 3, 3]));
        let y = g.conv2d(x, w, None, 1).unwrap();
        assert_eq!(g.value(y).data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    }

    #[test]
    fn rejects_bad_stride_and_channels() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones([2, 3, 3]));
        let w = g.constant(Tensor::ones([1, 1, 3, 3]));
        assert!(g.conv2d(x, w, None, 1).is_err());
        let w2 = g.constant(Tensor::ones([1, 2, 3, 3]));
        assert!(g.conv2d(x, w2, None, 3).is_err());
    }
}
