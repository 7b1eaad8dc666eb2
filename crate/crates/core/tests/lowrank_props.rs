use m2m_core::diffcore::{Graph, ParamStore, Tensor};
use m2m_core::lowrank::{rank1_compose, ProjectorSet};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn forward(proj: &ProjectorSet, store: &ParamStore, x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let xv = g.constant(x.clone());
    let y = proj.forward(&mut g, &p, "lr", xv).unwrap();
    g.value(y).clone()
}

/// Singular values of the mode-`k` unfolding of a `[C,H,W]` tensor.
fn mode_singular_values(t: &Tensor, k: usize) -> Vec<f64> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let lens = [c, h, w];
    let rows = lens[k];
    let cols = c * h * w / rows;
    let m = DMatrix::from_fn(rows, cols, |r, q| {
        let (a, b, d) = match k {
            0 => (r, q / w, q % w),
            1 => (q / w, r, q % w),
            _ => (q / h, q % h, r),
        };
        t.data()[(a * h + b) * w + d]
    });
    m.singular_values().iter().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn modulation_never_amplifies(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proj = ProjectorSet::new(3, 5, 6, 4).unwrap();
        let mut store = ParamStore::new();
        proj.init(&mut store, "lr", &mut rng).unwrap();
        let x = Tensor::uniform([5, 6, 4], -3.0, 3.0, &mut rng);
        let y = forward(&proj, &store, &x);
        for (a, b) in y.data().iter().zip(x.data()) {
            prop_assert!(a.abs() <= b.abs());
        }
    }

    #[test]
    fn composed_tensor_has_rank_at_most_m(seed in any::<u64>(), m in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, w) = (6, 7, 8);
        let u = Tensor::uniform([m, c], 0.0, 1.0, &mut rng);
        let v = Tensor::uniform([m, h], 0.0, 1.0, &mut rng);
        let z = Tensor::uniform([m, w], 0.0, 1.0, &mut rng);
        let t = rank1_compose(&u, &v, &z).unwrap();
        for k in 0..3 {
            let sv = mode_singular_values(&t, k);
            let top = sv.iter().copied().fold(0.0, f64::max);
            for &s in sv.iter().skip(m) {
                prop_assert!(s <= 1e-8 * top, "mode {k}: {s:e} vs {top:e}");
            }
        }
    }

    #[test]
    fn block_is_channel_permutation_equivariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, c, h, w) = (2, 5, 4, 6);
        let proj = ProjectorSet::new(m, c, h, w).unwrap();
        let mut store = ParamStore::new();
        proj.init(&mut store, "lr", &mut rng).unwrap();
        for name in ["lr.c.b1", "lr.c.b2"] {
            let t = store.get_mut(name).unwrap();
            *t = Tensor::uniform(t.shape().to_vec(), -0.5, 0.5, &mut rng);
        }
        let mut perm: Vec<usize> = (0..c).collect();
        perm.shuffle(&mut rng);

        let x = Tensor::uniform([c, h, w], -1.0, 1.0, &mut rng);
        let hw = h * w;
        let px = Tensor::from_fn([c, h, w], |i| x.data()[perm[i / hw] * hw + i % hw]);

        let mut permuted = store.clone();
        let hid = proj.hidden();
        let w1 = store.get("lr.c.w1").unwrap();
        *permuted.get_mut("lr.c.w1").unwrap() = Tensor::from_fn([c, hid], |i| w1.data()[perm[i / hid] * hid + i % hid]);
        let w2 = store.get("lr.c.w2").unwrap();
        *permuted.get_mut("lr.c.w2").unwrap() = Tensor::from_fn([hid, m * c], |i| {
            let (r, col) = (i / (m * c), i % (m * c));
            w2.data()[r * m * c + (col / c) * c + perm[col % c]]
        });
        let b2 = store.get("lr.c.b2").unwrap();
        *permuted.get_mut("lr.c.b2").unwrap() = Tensor::from_fn([m * c], |i| b2.data()[(i / c) * c + perm[i % c]]);

        let y = forward(&proj, &store, &x);
        let py = forward(&proj, &permuted, &px);
        for i in 0..c * hw {
            prop_assert!((py.data()[i] - y.data()[perm[i / hw] * hw + i % hw]).abs() <= 1e-12);
        }
    }
}
