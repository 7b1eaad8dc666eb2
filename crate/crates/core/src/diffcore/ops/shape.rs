//! Data-movement operations, all expressed as index gathers.

use crate::diffcore::graph::{Graph, Op, Var};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

impl Graph {
    /// `out[i] = x[index[i]]`; the backward pass scatter-adds.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let tx = self.value(x);
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::shape(
                "gather",
                format!("{} indices", index.len()),
                format!("{shape:?}"),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= tx.len()) {
            return Err(Error::shape("gather", format!("index < {}", tx.len()), bad));
        }
        let data = index.iter().map(|&i| tx.data()[i]).collect();
        let t = Tensor::new(shape, data)?;
        self.push(t, Op::Gather { x, index }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let n = self.value(x).len();
        let shape = shape.into();
        if shape.iter().product::<usize>() != n {
            return Err(Error::shape(
                "reshape",
                format!("{n} elements"),
                format!("{shape:?}"),
            ));
        }
        self.gather(x, (0..n).collect(), shape)
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len()
            || perm
                .iter()
                .any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::shape(
                "permute",
                format!("permutation of {} axes", s.len()),
                format!("{perm:?}"),
            ));
        }
        let mut in_strides = vec![1; s.len()];
        for i in (0..s.len().saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * s[i + 1];
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let n: usize = out_shape.iter().product();
        let mut index = Vec::with_capacity(n);
        let mut counter = vec![0usize; s.len()];
        for _ in 0..n {
            index.push(
                counter
                    .iter()
                    .zip(perm)
                    .map(|(&c, &p)| c * in_strides[p])
                    .sum(),
            );
            for ax in (0..counter.len()).rev() {
                counter[ax] += 1;
                if counter[ax] < out_shape[ax] {
                    break;
                }
                counter[ax] = 0;
            }
        }
        self.gather(x, index, out_shape)
    }

    /// Spatial crop of `x: [C,H,W]`.
    pub fn crop2d(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 3 || top + h > s[1] || left + w > s[2] {
            return Err(Error::shape(
                "crop2d",
                format!("window {h}x{w} at ({top},{left}) inside"),
                format!("{s:?}"),
            ));
        }
        let (c, hh, ww) = (s[0], s[1], s[2]);
        let mut index = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in top..top + h {
                for xx in left..left + w {
                    index.push(ch * hh * ww + y * ww + xx);
                }
            }
        }
        self.gather(x, index, vec![c, h, w])
    }

    /// Nearest-neighbour 2x upsampling of `x: [C,H,W]`.
    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 3 {
            return Err(Error::shape(
                "upsample_nearest2x",
                "[C,H,W]",
                format!("{s:?}"),
            ));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut index = Vec::with_capacity(c * 4 * h * w);
        for ch in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    index.push(ch * h * w + (y / 2) * w + xx / 2);
                }
            }
        }
        self.gather(x, index, vec![c, 2 * h, 2 * w])
    }

    /// Concatenation along the first axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat of nothing"))?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        let mut sizes = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let t = self.value(v);
            if t.shape()[1..] != tail[..] {
                return Err(Error::shape(
                    "concat",
                    format!("[_, {tail:?}]"),
                    format!("{:?}", t.shape()),
                ));
            }
            lead += t.shape()[0];
            sizes.push(t.len());
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let t = Tensor::new(shape, data)?;
        self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                sizes,
            },
            inputs,
        )
    }
}
