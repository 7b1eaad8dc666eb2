//! Named parameter storage and the `M2MP` binary container.
//!
//! Layout (little-endian): magic `M2MP`, version `u32`, then entries until
//! end of file, each `name_len: u16, name bytes, rank: u8, extents: u32 x
//! rank, payload: f64 x product(extents)`.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::diffcore::graph::{Gradients, Graph, Var};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

pub const PARAM_MAGIC: &[u8; 4] = b"M2MP";
pub const PARAM_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(Error::invalid("parameter name too long"));
        }
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Registers every parameter as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound<'_> {
        let vars = self.tensors.iter().map(|t| g.param(t.clone())).collect();
        Bound { store: self, vars }
    }

    /// Registers every parameter as a constant.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound<'_> {
        let vars = self.tensors.iter().map(|t| g.constant(t.clone())).collect();
        Bound { store: self, vars }
    }

    /// Every parameter concatenated in store order.
    pub fn pack(&self) -> Tensor {
        let data: Vec<f64> = self
            .tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect();
        let n = data.len();
        Tensor::new([n], data).expect("length matches")
    }

    /// Binds parameters as slices of `packed`, a flat var laid out as [`ParamStore::pack`].
    pub fn bind_packed(&self, g: &mut Graph, packed: Var) -> Result<Bound<'_>> {
        g.value(packed)
            .expect_shape("bind_packed", &[self.num_scalars()])?;
        let mut offset = 0;
        let mut vars = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let n = t.len();
            vars.push(g.gather(packed, (offset..offset + n).collect(), t.shape().to_vec())?);
            offset += n;
        }
        Ok(Bound { store: self, vars })
    }

    /// Overwrites every parameter from a flat vector laid out as [`ParamStore::pack`].
    pub fn unpack(&mut self, packed: &Tensor) -> Result<()> {
        packed.expect_shape("unpack", &[self.num_scalars()])?;
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut()
                .copy_from_slice(&packed.data()[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PARAM_MAGIC)?;
        w.write_all(&PARAM_VERSION.to_le_bytes())?;
        for (name, t) in self.iter() {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let rank =
                u8::try_from(t.rank()).map_err(|_| Error::invalid("tensor rank exceeds 255"))?;
            w.write_all(&[rank])?;
            for &e in t.shape() {
                let e = u32::try_from(e).map_err(|_| Error::invalid("extent exceeds u32"))?;
                w.write_all(&e.to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut cur = Cursor { buf: &buf, pos: 0 };
        if cur.take(4)? != PARAM_MAGIC {
            return Err(Error::BadMagic {
                what: "parameter container",
            });
        }
        let version = u32::from_le_bytes(cur.array()?);
        if version != PARAM_VERSION {
            return Err(Error::Parse(format!(
                "unsupported parameter container version {version}"
            )));
        }
        let mut store = ParamStore::new();
        while cur.pos < buf.len() {
            let nlen = u16::from_le_bytes(cur.array()?) as usize;
            let name = std::str::from_utf8(cur.take(nlen)?)
                .map_err(|_| Error::Parse("parameter name is not UTF-8".into()))?
                .to_owned();
            let rank = cur.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(cur.array()?) as usize);
            }
            let n: usize = shape.iter().product();
            let data = cur
                .take(
                    n.checked_mul(8)
                        .ok_or_else(|| Error::Parse("tensor too large".into()))?,
                )?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            store.insert(name, Tensor::new(shape, data)?)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::read_from(bytes.as_slice())
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(Error::Truncated {
                what: "parameter container",
                expected: self.pos.saturating_add(n),
                found: self.buf.len(),
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }
}

/// A [`ParamStore`] registered on a graph.
#[derive(Debug)]
pub struct Bound<'a> {
    store: &'a ParamStore,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.store
            .index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in store order, ready for [`crate::diffcore::AdamState::step`].
    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.get(v)).collect()
    }
}
