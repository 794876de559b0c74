use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scalegmn_core::experiment::{canonicalize, CanonicalForm};
use scalegmn_core::gmn::{HeadKind, ScaleGmn, ScaleGmnConfig};
use scalegmn_core::graph::{assign_pe, build_graph, transform_graph, BackwardFeature, Direction};
use scalegmn_core::harness::{
    check_function_preservation, pair_counts, pair_counts_brute, reference_pass, simulate_ffnn,
};
use scalegmn_core::tensor::Tensor;
use scalegmn_core::zoo::{
    apply_orbit, bias_shift, ActivationDescriptor, CanonMode, FfnnParams, GroupKind, OrbitElement,
    ScaleSampler,
};

#[derive(Clone, Copy, Debug)]
enum Act {
    Relu,
    Tanh,
    Sine,
}

impl Act {
    fn descriptor(self) -> ActivationDescriptor {
        match self {
            Act::Relu => ActivationDescriptor::relu(),
            Act::Tanh => ActivationDescriptor::tanh(),
            Act::Sine => ActivationDescriptor::sine(3.0).unwrap(),
        }
    }

    fn sampler(self) -> ScaleSampler {
        match self {
            Act::Relu => ScaleSampler::Positive { lambda: 1.0 },
            _ => ScaleSampler::Sign,
        }
    }
}

fn any_act() -> impl Strategy<Value = Act> {
    prop_oneof![Just(Act::Relu), Just(Act::Tanh), Just(Act::Sine)]
}

fn dims() -> impl Strategy<Value = Vec<usize>> {
    (1usize..4, prop::collection::vec(1usize..6, 1..4), 1usize..3).prop_map(|(i, mut h, o)| {
        h.insert(0, i);
        h.push(o);
        h
    })
}

fn net(dims: &[usize], act: Act, rng: &mut ChaCha8Rng) -> FfnnParams {
    let mut acts = vec![act.descriptor(); dims.len() - 1];
    *acts.last_mut().unwrap() = ActivationDescriptor::identity();
    FfnnParams::random(dims, &acts, 1.0, rng).unwrap()
}

fn points(m: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(m, d, |_, _| rng.random_range(-1.0..1.0))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn orbit_elements_preserve_the_function(d in dims(), act in any_act(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = net(&d, act, &mut rng);
        let g = OrbitElement::sample(act.sampler(), true, &d, &mut rng).unwrap();
        let m = apply_orbit(&n, &g).unwrap();
        let x = points(16, d[0], &mut rng);
        let scale = 1.0 + n.forward(&x).unwrap().max_abs();
        prop_assert!(check_function_preservation(&n, &m, &x).unwrap() < 1e-9 * scale);
    }

    #[test]
    fn composition_matches_sequential_application(d in dims(), act in any_act(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = net(&d, act, &mut rng);
        let a = OrbitElement::sample(act.sampler(), true, &d, &mut rng).unwrap();
        let b = OrbitElement::sample(act.sampler(), true, &d, &mut rng).unwrap();
        let seq = apply_orbit(&apply_orbit(&n, &a).unwrap(), &b).unwrap().to_flat();
        let once = apply_orbit(&n, &a.compose(&b).unwrap()).unwrap().to_flat();
        let scale = 1.0 + seq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(max_abs_diff(&seq, &once) <= 1e-12 * scale);
        let id = OrbitElement::identity(&d);
        prop_assert_eq!(apply_orbit(&n, &id).unwrap(), n);
    }

    #[test]
    fn bias_shift_is_idempotent_and_preserves_the_neuron(
        b in -50.0f64..50.0,
        w in prop::collection::vec(-3.0f64..3.0, 1..5),
        omega0 in prop_oneof![Just(1.0f64), Just(3.0), Just(30.0)],
        x in prop::collection::vec(-1.0f64..1.0, 5),
    ) {
        let (b1, w1) = bias_shift(b, &w, omega0);
        let (b2, w2) = bias_shift(b1, &w1, omega0);
        prop_assert!((b1 - b2).abs() <= 1e-12 * (1.0 + b1.abs()));
        prop_assert_eq!(&w1, &w2);
        let p = omega0 * b1;
        prop_assert!(p > -std::f64::consts::FRAC_PI_2 - 1e-12 && p <= std::f64::consts::FRAC_PI_2 + 1e-12);
        let neuron = |b: f64, w: &[f64]| (omega0 * (w.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>() + b)).sin();
        prop_assert!((neuron(b, &w) - neuron(b1, &w1)).abs() < 1e-9);
    }

    #[test]
    fn transforming_a_graph_matches_rebuilding_it(
        d in dims(),
        relu in any::<bool>(),
        bidir in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let act = if relu { Act::Relu } else { Act::Tanh };
        let dir = if bidir { Direction::Bidirectional } else { Direction::Forward };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = net(&d, act, &mut rng);
        let g = OrbitElement::sample(act.sampler(), true, &d, &mut rng).unwrap();
        let base = build_graph(&n, dir).unwrap();
        let mode = BackwardFeature::for_group(act.descriptor().group());
        let moved = transform_graph(&base, &g, mode).unwrap();
        let rebuilt = build_graph(&apply_orbit(&n, &g).unwrap(), dir).unwrap();
        let close = |a: &Tensor, b: &Tensor| {
            let s = 1.0 + b.max_abs();
            max_abs_diff(a.data(), b.data()) <= 1e-12 * s
        };
        prop_assert!(close(&moved.vertex_feat, &rebuilt.vertex_feat));
        prop_assert!(close(&moved.edge_feat, &rebuilt.edge_feat));
        prop_assert_eq!(&moved.edge_src, &rebuilt.edge_src);
        match (&moved.backward_feat, &rebuilt.backward_feat) {
            (Some(a), Some(b)) => prop_assert!(max_abs_diff(a.data(), b.data()) <= 1e-9 * (1.0 + b.max_abs())),
            (None, None) => {}
            _ => prop_assert!(false, "backward features present on one side only"),
        }
    }

    #[test]
    fn positional_classes_ignore_hidden_permutations(d in dims(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = net(&d, Act::Tanh, &mut rng);
        let graph = build_graph(&n, Direction::Forward).unwrap();
        let pe = assign_pe(&graph);
        let big_l = d.len() - 1;
        for v in 0..graph.num_vertices() {
            let (l, _) = graph.vertex_position(v);
            if l > 0 && l < big_l {
                prop_assert_eq!(pe.vertex_class[v], pe.vertex_class[graph.vertex_id(l, 0)]);
            }
        }
        let g = OrbitElement::sample(ScaleSampler::Sign, true, &d, &mut rng).unwrap();
        let moved = build_graph(&apply_orbit(&n, &g).unwrap(), Direction::Forward).unwrap();
        prop_assert_eq!(assign_pe(&moved), pe);
    }

    #[test]
    fn kendall_counts_match_brute_force(
        pairs in prop::collection::vec((0i32..6, 0i32..6), 2..50),
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        prop_assert_eq!(pair_counts(&a, &b).unwrap(), pair_counts_brute(&a, &b).unwrap());
    }

    #[test]
    fn canonical_forms_are_idempotent_and_collapse_orbits(d in dims(), act in any_act(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = net(&d, act, &mut rng);
        let c = canonicalize(&n, CanonicalForm::Scale).unwrap();
        prop_assert_eq!(canonicalize(&c, CanonicalForm::Scale).unwrap(), c.clone());
        let x = points(16, d[0], &mut rng);
        let scale = 1.0 + n.forward(&x).unwrap().max_abs();
        prop_assert!(check_function_preservation(&n, &c, &x).unwrap() < 1e-9 * scale);
        let g = OrbitElement::sample(act.sampler(), false, &d, &mut rng).unwrap();
        let moved = canonicalize(&apply_orbit(&n, &g).unwrap(), CanonicalForm::Scale).unwrap();
        let cf = c.to_flat();
        let s = 1.0 + cf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(max_abs_diff(&cf, &moved.to_flat()) < 1e-6 * s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulation_reproduces_forward_and_backward_passes(sine in any::<bool>(), seed in any::<u64>()) {
        let act = if sine { Act::Sine } else { Act::Tanh };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = [2, rng.random_range(2..6), rng.random_range(2..6), 2];
        let n = net(&d, act, &mut rng);
        let x = points(4, 2, &mut rng);
        let g = points(4, 2, &mut rng);
        let got = simulate_ffnn(&n, &x, Some(&g)).unwrap();
        let (fwd, bwd) = got.deviation(&reference_pass(&n, &x, &g).unwrap());
        prop_assert!(fwd < 1e-9);
        prop_assert!(bwd.unwrap() < 1e-6);
    }

    #[test]
    fn gmn_embeddings_are_orbit_invariant(act in any_act(), bidir in any::<bool>(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = vec![2, 4, 3, 1];
        let group = act.descriptor().group();
        let cfg = ScaleGmnConfig {
            layer_dims: d.clone(),
            group,
            canon: CanonMode::for_group(group),
            direction: if bidir { Direction::Bidirectional } else { Direction::Forward },
            head: HeadKind::Invariant,
            ..Default::default()
        };
        prop_assert!(group != GroupKind::Trivial);
        let model = ScaleGmn::new(cfg, &mut rng).unwrap();
        let n = net(&d, act, &mut rng);
        let g = OrbitElement::sample(act.sampler(), true, &d, &mut rng).unwrap();
        let m = apply_orbit(&n, &g).unwrap();
        let e = model.embed_nets(&[&n, &m]).unwrap();
        let s = 1e-9 + e.row_slice(0).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!(max_abs_diff(e.row_slice(0), e.row_slice(1)) / s < 1e-8);
    }
}
