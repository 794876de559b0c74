use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::harness::block_property_suite;
use crate::tensor::{Binder, Linear, ParamStore, Pointwise, Tensor};
use crate::zoo::CanonMode;

fn value(store: &ParamStore, x: Tensor, f: impl FnOnce(&mut Binder, crate::tensor::Var) -> crate::tensor::Var) -> Tensor {
    let mut b = Binder::new(store, false);
    let v = b.tape.constant(x);
    let y = f(&mut b, v);
    b.tape.value(y).clone()
}

#[test]
fn randomized_group_actions() {
    for c in block_property_suite(100, 42).unwrap() {
        assert_eq!(c.trials, 100);
        assert!(c.max_rel_err < 1e-10, "{} {:?} {:?}: {}", c.name, c.group, c.canon, c.max_rel_err);
    }
}

#[test]
fn norm_divide_examples() {
    let store = ParamStore::new();
    let c = Canonicalizer {
        mode: CanonMode::NormDivide,
        mlp: None,
        in_dim: 2,
    };
    let x = Tensor::matrix(3, 2, vec![3.0, 4.0, 6.0, 8.0, 0.0, 0.0]).unwrap();
    let y = value(&store, x, |b, v| c.forward(b, v).unwrap());
    let want = [0.6, 0.8, 0.6, 0.8, 0.0, 0.0];
    for (a, b) in y.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn linear_symmetrizer_vanishes() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = BlockConfig {
        act: Pointwise::Identity,
        ..Default::default()
    };
    let c = Canonicalizer::new(&mut store, "c", CanonMode::SignSymmetrize, 3, &cfg, &mut rng);
    // strip the biases so the MLP is purely linear
    for (name, t) in store.names().to_vec().iter().zip(store.tensors_mut()) {
        if name.ends_with("bias") {
            *t = Tensor::new(t.shape().to_vec(), vec![0.0; t.numel()]).unwrap();
        }
    }
    let x = Tensor::from_fn(4, 3, |r, c| (r as f64 - 1.5) * (c as f64 + 0.5));
    let y = value(&store, x, |b, v| c.forward(b, v).unwrap());
    assert!(y.max_abs() < 1e-12);
}

#[test]
fn symmetrized_invariant_matches_explicit_sum() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = BlockConfig::default();
    let inv = ScaleInvNet::new(&mut store, "inv", &[3], 0, 2, &cfg, &mut rng);
    let x = Tensor::from_fn(5, 3, |r, c| ((r * 3 + c) as f64 * 0.37).sin());
    let got = value(&store, x.clone(), |b, v| inv.forward(b, &[v], None).unwrap());
    // oracle: mlp(x) + mlp(-x) then rho, computed from the raw tensors
    let mlp = inv.canons[0].mlp.as_ref().unwrap();
    let eval_mlp = |m: &crate::tensor::Mlp, row: &[f64]| -> Vec<f64> {
        let mut h = row.to_vec();
        for (k, lin) in m.layers.iter().enumerate() {
            let w = store.get(lin.weight);
            let bias = store.get(lin.bias.unwrap());
            let mut o: Vec<f64> = (0..w.rows())
                .map(|i| (0..w.cols()).map(|j| w.get(i, j) * h[j]).sum::<f64>() + bias.data()[i])
                .collect();
            if k + 1 < m.layers.len() {
                o = o.into_iter().map(|v| v / (1.0 + (-v).exp())).collect();
            }
            h = o;
        }
        h
    };
    for r in 0..5 {
        let row = x.row_slice(r);
        let neg: Vec<f64> = row.iter().map(|v| -v).collect();
        let s: Vec<f64> = eval_mlp(mlp, row).iter().zip(eval_mlp(mlp, &neg)).map(|(a, b)| a + b).collect();
        let out = eval_mlp(&inv.rho, &s);
        for (a, b) in got.row_slice(r).iter().zip(out) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn identity_equivariant_layer() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = ScaleEqNet::new(&mut store, "eq", &[3], &[3], 0, 1, &BlockConfig::default(), &mut rng);
    let (gammas, inv) = net.layer_parts(0);
    let gw = gammas[0].weight;
    let last = inv.rho.layers.last().unwrap();
    let (last_w, last_b) = (last.weight, last.bias);
    *store.get_mut(gw) = Tensor::identity(3);
    let shape = store.get(last_w).shape().to_vec();
    *store.get_mut(last_w) = Tensor::new(shape, vec![0.0; 3 * 16]).unwrap();
    *store.get_mut(last_b.unwrap()) = Tensor::row(vec![1.0; 3]);
    let x = Tensor::from_fn(4, 3, |r, c| r as f64 - c as f64 * 0.5);
    let y = value(&store, x.clone(), |b, v| net.forward1(b, v, None).unwrap());
    assert_eq!(y, x);
}

#[test]
fn outer_with_diagonal_selection_is_hadamard() {
    let cfg = BlockConfig::default();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let outer = ReScaleEqNet::new(&mut store, "o", RescaleVariant::Outer, &[3, 3], 3, &cfg, &mut rng);
    let ReScaleEqNet::Outer { eq } = &outer else { unreachable!() };
    let (gammas, inv) = eq.layer_parts(0);
    // Γ picks entry (i, i) of the 3×3 outer product; the gate is all ones
    let sel = Tensor::from_fn(3, 9, |i, k| if k == i * 3 + i { 1.0 } else { 0.0 });
    let gw = gammas[0].weight;
    let last = inv.rho.layers.last().unwrap();
    let (last_w, last_b) = (last.weight, last.bias);
    *store.get_mut(gw) = sel;
    *store.get_mut(last_w) = Tensor::zeros(3, 16);
    *store.get_mut(last_b.unwrap()) = Tensor::row(vec![1.0; 3]);
    let mut hs = ParamStore::new();
    let had = ReScaleEqNet::Hadamard {
        gammas: vec![
            Linear::new(&mut hs, "a", 3, 3, false, &mut rng),
            Linear::new(&mut hs, "b", 3, 3, false, &mut rng),
        ],
    };
    for t in hs.tensors_mut() {
        *t = Tensor::identity(3);
    }
    let x = Tensor::from_fn(2, 3, |r, c| (r + c) as f64 - 1.0);
    let y = Tensor::from_fn(2, 3, |r, c| (r * c) as f64 + 0.5);
    let run = |store: &ParamStore, net: &ReScaleEqNet| {
        let mut b = Binder::new(store, false);
        let xv = b.tape.constant(x.clone());
        let yv = b.tape.constant(y.clone());
        let o = net.forward(&mut b, &[xv, yv]).unwrap();
        b.tape.value(o).clone()
    };
    assert_eq!(run(&store, &outer), run(&hs, &had));
}

#[test]
fn aug_input_matters_and_width_zero_degenerates() {
    let cfg = BlockConfig::default();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = ScaleEqNet::new(&mut store, "eq", &[3], &[3], 2, 1, &cfg, &mut rng);
    let x = Tensor::from_fn(2, 3, |r, c| (r + c) as f64 - 1.0);
    let run = |p: Tensor| {
        let mut b = Binder::new(&store, false);
        let xv = b.tape.constant(x.clone());
        let pv = b.tape.constant(p);
        let o = net.forward1(&mut b, xv, Some(pv)).unwrap();
        b.tape.value(o).clone()
    };
    assert_ne!(run(Tensor::zeros(2, 2)), run(Tensor::full(2, 2, 1.0)));

    let mut s2 = ParamStore::new();
    let plain = ScaleEqNet::new(&mut s2, "eq", &[3], &[3], 0, 1, &cfg, &mut ChaCha8Rng::seed_from_u64(5));
    let mut b = Binder::new(&s2, false);
    let xv = b.tape.constant(x.clone());
    let a = plain.forward1(&mut b, xv, None).unwrap();
    let empty = b.tape.constant(Tensor::zeros(2, 0));
    let c = plain.forward1(&mut b, xv, Some(empty)).unwrap();
    assert_eq!(b.tape.value(a), b.tape.value(c));
}
