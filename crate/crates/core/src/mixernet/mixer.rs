//! Window MLP-mixer and Swin-Mixer blocks.
//!
//! Windows are `[nW,Q,C]` tensors. Token mixing multiplies along Q,
//! channel mixing along C, both with a pre-norm residual:
//!
//! ```text
//! U = X + W2 . gelu(W1 . LN(X))
//! Y = U + gelu(LN(U) . W1) . W2
//! ```

use rand::Rng;

use crate::diffcore::{Bound, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::mixernet::window::{window_merge_graph, window_partition_graph, WindowSpec};

/// Hidden widths of one W-Mixer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixerDims {
    pub q: usize,
    pub channels: usize,
}

impl MixerDims {
    /// Token-mix hidden width `Q/2`, at least 1.
    pub fn token_hidden(&self) -> usize {
        (self.q / 2).max(1)
    }

    /// Channel-mix hidden width `2C`.
    pub fn channel_hidden(&self) -> usize {
        2 * self.channels
    }

    /// Registers `{prefix}.{tok,ch}.{w1,w2}` and `{prefix}.{ln1,ln2}.{g,b}`.
    pub fn init<R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<()> {
        let (q, c, m, d) = (
            self.q,
            self.channels,
            self.token_hidden(),
            self.channel_hidden(),
        );
        let u = |n: usize| 1.0 / (n as f64).sqrt();
        store.insert(
            format!("{prefix}.tok.w1"),
            Tensor::uniform([m, q], -u(q), u(q), rng),
        )?;
        store.insert(
            format!("{prefix}.tok.w2"),
            Tensor::uniform([q, m], -u(m), u(m), rng),
        )?;
        store.insert(
            format!("{prefix}.ch.w1"),
            Tensor::uniform([c, d], -u(c), u(c), rng),
        )?;
        store.insert(
            format!("{prefix}.ch.w2"),
            Tensor::uniform([d, c], -u(d), u(d), rng),
        )?;
        for ln in ["ln1", "ln2"] {
            store.insert(format!("{prefix}.{ln}.g"), Tensor::ones([c]))?;
            store.insert(format!("{prefix}.{ln}.b"), Tensor::zeros([c]))?;
        }
        Ok(())
    }
}

/// `U = X + W2 . gelu(W1 . LN(X))` on `x: [nW,Q,C]` (or `[Q,C]`).
pub fn token_mix(g: &mut Graph, p: &Bound<'_>, prefix: &str, x: Var) -> Result<Var> {
    let ln = g.layernorm(
        x,
        Some(p.get(&format!("{prefix}.ln1.g"))?),
        Some(p.get(&format!("{prefix}.ln1.b"))?),
    )?;
    let h = g.matmul(p.get(&format!("{prefix}.tok.w1"))?, ln)?;
    let h = g.gelu(h)?;
    let o = g.matmul(p.get(&format!("{prefix}.tok.w2"))?, h)?;
    g.add(x, o)
}

/// `Y = U + gelu(LN(U) . W1) . W2` on `u: [nW,Q,C]` (or `[Q,C]`).
pub fn channel_mix(g: &mut Graph, p: &Bound<'_>, prefix: &str, u: Var) -> Result<Var> {
    let ln = g.layernorm(
        u,
        Some(p.get(&format!("{prefix}.ln2.g"))?),
        Some(p.get(&format!("{prefix}.ln2.b"))?),
    )?;
    let h = g.matmul(ln, p.get(&format!("{prefix}.ch.w1"))?)?;
    let h = g.gelu(h)?;
    let o = g.matmul(h, p.get(&format!("{prefix}.ch.w2"))?)?;
    g.add(u, o)
}

/// Partition, token mix, channel mix, merge; `x: [C,K,K]`.
pub fn w_mixer_block(
    g: &mut Graph,
    p: &Bound<'_>,
    prefix: &str,
    x: Var,
    spec: &WindowSpec,
) -> Result<Var> {
    let w = window_partition_graph(g, x, spec)?;
    let u = token_mix(g, p, prefix, w)?;
    let y = channel_mix(g, p, prefix, u)?;
    window_merge_graph(g, y, spec)
}

/// Shape of one Swin-Mixer block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmbDims {
    pub channels: usize,
    pub context: usize,
    pub spec: WindowSpec,
}

impl SmbDims {
    fn mixer(&self) -> MixerDims {
        MixerDims {
            q: self.spec.q(),
            channels: self.channels,
        }
    }

    /// Registers `{prefix}.fuse.{w,b}`, `{prefix}.mix0.*` and `{prefix}.mix1.*`.
    pub fn init<R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<()> {
        let cin = self.channels + self.context;
        let a = 1.0 / ((cin * 9) as f64).sqrt();
        store.insert(
            format!("{prefix}.fuse.w"),
            Tensor::uniform([self.channels, cin, 3, 3], -a, a, rng),
        )?;
        store.insert(format!("{prefix}.fuse.b"), Tensor::zeros([self.channels]))?;
        self.mixer().init(store, &format!("{prefix}.mix0"), rng)?;
        self.mixer().init(store, &format!("{prefix}.mix1"), rng)
    }
}

/// Conv fusion of `x: [C,K,K]` with aligned `ctx: [Cc,K,K]`, then an
/// unshifted and a shifted W-Mixer block.
pub fn smb_forward(
    g: &mut Graph,
    p: &Bound<'_>,
    prefix: &str,
    x: Var,
    ctx: Var,
    dims: &SmbDims,
) -> Result<Var> {
    let (xs, cs) = (g.shape(x).to_vec(), g.shape(ctx).to_vec());
    if xs.len() != 3 || cs.len() != 3 || xs[1..] != cs[1..] {
        return Err(Error::shape(
            "smb_forward",
            format!("context aligned with {xs:?}"),
            format!("{cs:?}"),
        ));
    }
    let cat = g.concat(&[x, ctx])?;
    let f = g.conv2d(
        cat,
        p.get(&format!("{prefix}.fuse.w"))?,
        Some(p.get(&format!("{prefix}.fuse.b"))?),
        1,
    )?;
    let plain = WindowSpec {
        shift: 0,
        ..dims.spec
    };
    let a = w_mixer_block(g, p, &format!("{prefix}.mix0"), f, &plain)?;
    w_mixer_block(g, p, &format!("{prefix}.mix1"), a, &plain.shifted())
}

/// Zeroes every `*.w2` weight under `prefix`, turning its mixers into identities.
pub fn zero_mixer_outputs(store: &mut ParamStore, prefix: &str) {
    let names: Vec<String> = store
        .names()
        .iter()
        .filter(|n| n.starts_with(prefix) && n.ends_with(".w2"))
        .cloned()
        .collect();
    for n in names {
        if let Some(t) = store.get_mut(&n) {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_output_weights_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = MixerDims { q: 16, channels: 4 };
        let mut store = ParamStore::new();
        dims.init(&mut store, "m", &mut rng).unwrap();
        zero_mixer_outputs(&mut store, "m");
        let x = Tensor::uniform([4, 8, 8], -1.0, 1.0, &mut rng);
        for shift in [0, 2] {
            let mut g = Graph::new();
            let p = store.bind_frozen(&mut g);
            let xv = g.constant(x.clone());
            let y =
                w_mixer_block(&mut g, &p, "m", xv, &WindowSpec::new(8, 4, shift).unwrap()).unwrap();
            assert_eq!(g.value(y), &x);
        }
    }

    #[test]
    fn smb_with_zero_context_and_identity_mixers_is_the_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = SmbDims {
            channels: 3,
            context: 2,
            spec: WindowSpec::new(8, 4, 0).unwrap(),
        };
        let mut store = ParamStore::new();
        dims.init(&mut store, "s", &mut rng).unwrap();
        zero_mixer_outputs(&mut store, "s");
        let x = Tensor::uniform([3, 8, 8], 0.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let ctx = g.constant(Tensor::zeros([2, 8, 8]));
        let y = smb_forward(&mut g, &p, "s", xv, ctx, &dims).unwrap();
        assert_eq!(g.shape(y), &[3, 8, 8]);

        // Conv of x alone using the x-slice of the fusion kernel.
        let w = store.get("s.fuse.w").unwrap();
        let wx = Tensor::from_fn([3, 3, 3, 3], |i| {
            let (co, rest) = (i / 27, i % 27);
            w.data()[co * 45 + rest]
        });
        let wv = g.constant(wx);
        let b = g.constant(store.get("s.fuse.b").unwrap().clone());
        let c = g.conv2d(xv, wv, Some(b), 1).unwrap();
        assert!(g.value(y).max_abs_diff(g.value(c)) < 1e-15);

        let bad = g.constant(Tensor::zeros([2, 4, 4]));
        assert!(smb_forward(&mut g, &p, "s", xv, bad, &dims).is_err());
    }
}
