//! Permutation equivariance of the per-member layers and invariance of the
//! set-level heads.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setconv_core::explain::{grad_cam, CamTarget, LayerSelector};
use setconv_core::model::{preset, Model, PresetOptions};
use setconv_core::nn::{
    self, init, HeadGeometry, LateFusionParams, LayerNormParams, Mode, SabParams, SetConvParams, VolumeSet,
};
use setconv_core::ops::{Activation, ConvGeometry};
use setconv_core::{Tape, Tensor, Var};

const TOL: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Rows `order[i]` of `t` along the outer axis.
fn permute(t: &Tensor<f64>, order: &[usize]) -> Tensor<f64> {
    t.select_outer(order)
}

fn cases() -> ProptestConfig {
    ProptestConfig::with_cases(24)
}

/// `f(P x)` against `P f(x)` for a tape function of one `[N, ...]` input.
fn equivariant(x: &Tensor<f64>, order: &[usize], f: impl Fn(&mut Tape<f64>, Var) -> Var) -> f64 {
    let run = |input: &Tensor<f64>| {
        let mut tape = Tape::new();
        let v = tape.constant(input.clone());
        let out = f(&mut tape, v);
        tape.value(out).clone()
    };
    run(&permute(x, order)).max_abs_diff(&permute(&run(x), order))
}

fn invariant(x: &Tensor<f64>, order: &[usize], f: impl Fn(&mut Tape<f64>, Var) -> Var) -> f64 {
    let run = |input: &Tensor<f64>| {
        let mut tape = Tape::new();
        let v = tape.constant(input.clone());
        let out = f(&mut tape, v);
        tape.value(out).clone()
    };
    run(&permute(x, order)).max_abs_diff(&run(x))
}

fn setconv_params(rng: &mut ChaCha8Rng, c_in: usize, filters: usize) -> SetConvParams<f64> {
    SetConvParams::new(
        init::conv(rng, 3, c_in, filters, ConvGeometry::same()),
        init::mhsa(rng, filters, HeadGeometry::new(2, filters / 2).unwrap(), 0.1),
        Activation::Relu,
    )
    .unwrap()
}

fn sab_params(rng: &mut ChaCha8Rng, width: usize) -> SabParams<f64> {
    SabParams {
        mhsa: init::mhsa(rng, width, HeadGeometry::new(2, width / 2).unwrap(), 0.0),
        norm1: LayerNormParams::unit(width),
        rff: init::dense(rng, width, width),
        rff_activation: Activation::Relu,
        norm2: LayerNormParams::unit(width),
    }
}

proptest! {
    #![proptest_config(cases())]

    #[test]
    fn setconv2d_is_equivariant(seed: u64, n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = setconv_params(&mut rng, 2, 4);
        let x = random(&mut rng, &[n, 5, 5, 2]);
        let order = permutation(&mut rng, n);
        let err = equivariant(&x, &order, |t, v| {
            let p = params.bind(t);
            nn::setconv2d(t, v, &p, Mode::Eval).unwrap()
        });
        prop_assert!(err <= TOL, "{err}");
    }

    #[test]
    fn mhsa_sab_and_deepsets_are_equivariant(seed: u64, n in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[n, 6]);
        let order = permutation(&mut rng, n);
        let attn = init::mhsa(&mut rng, 6, HeadGeometry::new(3, 2).unwrap(), 0.1);
        let sab = sab_params(&mut rng, 6);
        let ds = init::dense(&mut rng, 6, 4);
        let e1 = equivariant(&x, &order, |t, v| {
            let p = attn.bind(t);
            nn::mhsa(t, v, &p, Mode::Eval).unwrap()
        });
        let e2 = equivariant(&x, &order, |t, v| {
            let p = sab.bind(t);
            nn::sab(t, v, &p).unwrap()
        });
        let e3 = equivariant(&x, &order, |t, v| {
            let p = ds.bind(t);
            nn::deepsets_layer(t, v, &p, Activation::Relu).unwrap()
        });
        prop_assert!(e1 <= TOL && e2 <= TOL && e3 <= TOL, "{e1} {e2} {e3}");
    }

    #[test]
    fn fusion_heads_are_invariant(seed: u64, n in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[n, 5]);
        let order = permutation(&mut rng, n);
        let score = invariant(&x, &order, |t, v| {
            let p = t.softmax(v);
            nn::score_fusion(t, p).unwrap()
        });
        let lf = LateFusionParams {
            gamma: random(&mut rng, &[5, 4]),
            beta: random(&mut rng, &[4]),
            activation: Activation::Relu,
            norm: LayerNormParams::unit(4),
        };
        let late = invariant(&x, &order, |t, v| {
            let p = lf.bind(t);
            nn::late_fusion(t, v, &p).unwrap()
        });
        prop_assert!(score <= TOL && late <= TOL, "{score} {late}");
    }
}

fn small(name: &str) -> Model<f64> {
    let opts = PresetOptions {
        divisor: 16,
        ..PresetOptions::default()
    };
    Model::build(&preset(name, &opts).unwrap(), 2).unwrap()
}

fn random_set(rng: &mut ChaCha8Rng, n: usize, size: usize) -> VolumeSet<f64> {
    VolumeSet::from_tensor(random(rng, &[n, size, size, 1]).map(|v| v.abs())).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn whole_models_respect_permutations(seed: u64, n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng, n, 16);
        let order = permutation(&mut rng, n);
        let shuffled = set.permuted(&order);
        for name in ["cifar-cst", "cifar-cst-lf", "cifar-cst-sf", "st-s"] {
            let m = small(name);
            let (a, b) = (m.predict(&set).unwrap(), m.predict(&shuffled).unwrap());
            let expected = if m.head_mode().is_set_level() { a } else { permute(&a, &order) };
            prop_assert!(b.max_abs_diff(&expected) <= TOL, "{name}");
        }
    }

    #[test]
    fn anomaly_model_and_grad_cam_are_equivariant(seed: u64, n in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let opts = PresetOptions { divisor: 16, ..PresetOptions::default() };
        let m: Model<f64> = Model::build(&preset("desk-anomaly-cst", &opts).unwrap(), 4).unwrap();
        let set = random_set(&mut rng, n, 24);
        let order = permutation(&mut rng, n);
        let shuffled = set.permuted(&order);
        let out = m.predict(&set).unwrap();
        prop_assert!(m.predict(&shuffled).unwrap().max_abs_diff(&permute(&out, &order)) <= TOL);
        let maps = grad_cam(&m, &set, CamTarget::EachImage, LayerSelector::PenultimateSetconv).unwrap();
        let moved = grad_cam(&m, &shuffled, CamTarget::EachImage, LayerSelector::PenultimateSetconv).unwrap();
        for (i, &src) in order.iter().enumerate() {
            prop_assert!(moved[i].values.max_abs_diff(&maps[src].values) <= TOL);
        }
    }
}
