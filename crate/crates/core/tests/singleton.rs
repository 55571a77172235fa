//! A one-member set attends only to itself, so every SetConv2D block
//! reduces to `act(conv(x) + gap(conv(x)) W_v W_o)` and attention inside a
//! SAB to `x W_v W_o`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setconv_core::model::{preset, LayerParams, Model, PresetOptions};
use setconv_core::nn::{LayerNormParams, MhsaParams, Mode, VolumeSet};
use setconv_core::{Tape, Tensor, Var};

fn attention_collapsed(tape: &mut Tape<f64>, x: Var, p: &MhsaParams<f64>) -> Var {
    let wv = tape.constant(p.value.clone());
    let wo = tape.constant(p.output.clone());
    let v = tape.matmul(x, wv).unwrap();
    tape.matmul(v, wo).unwrap()
}

fn norm(tape: &mut Tape<f64>, x: Var, p: &LayerNormParams<f64>) -> Var {
    let g = tape.constant(p.gain.clone());
    let s = tape.constant(p.shift.clone());
    tape.layer_norm(x, g, s, p.eps).unwrap()
}

fn linear_path(model: &Model<f64>, image: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let mut x = tape.constant(image.clone());
    for layer in model.layers() {
        x = match layer {
            LayerParams::SetConv(p) => {
                let k = tape.constant(p.conv.kernel.clone());
                let b = tape.constant(p.conv.bias.clone());
                let conv = tape.conv2d(x, k, b, p.conv.geometry).unwrap();
                let pooled = tape.global_avg_pool(conv).unwrap();
                let projected = attention_collapsed(&mut tape, pooled, &p.mhsa);
                let biased = tape.add_channel_bias(conv, projected).unwrap();
                tape.activation(biased, p.activation)
            }
            LayerParams::Conv(p, act) => {
                let k = tape.constant(p.kernel.clone());
                let b = tape.constant(p.bias.clone());
                let conv = tape.conv2d(x, k, b, p.geometry).unwrap();
                tape.activation(conv, *act)
            }
            LayerParams::Sab(p) => {
                let attended = attention_collapsed(&mut tape, x, &p.mhsa);
                let residual = tape.add(x, attended).unwrap();
                let hidden = norm(&mut tape, residual, &p.norm1);
                let w = tape.constant(p.rff.weight.clone());
                let b = tape.constant(p.rff.bias.clone());
                let mapped = tape.dense(hidden, w, b).unwrap();
                let mapped = tape.activation(mapped, p.rff_activation);
                let residual = tape.add(hidden, mapped).unwrap();
                norm(&mut tape, residual, &p.norm2)
            }
            LayerParams::Maxpool(k) => tape.maxpool2d(x, *k).unwrap(),
            LayerParams::Gap => tape.global_avg_pool(x).unwrap(),
            LayerParams::Dense(p) => {
                let w = tape.constant(p.weight.clone());
                let b = tape.constant(p.bias.clone());
                tape.dense(x, w, b).unwrap()
            }
            LayerParams::Softmax => tape.softmax(x),
            LayerParams::Sigmoid => tape.sigmoid(x),
            other => panic!("no singleton path for {other:?}"),
        };
    }
    tape.value(x).clone()
}

#[test]
fn singleton_sets_collapse_to_the_linear_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let opts = PresetOptions {
        divisor: 8,
        ..PresetOptions::default()
    };
    for (name, size) in [("cifar-cst", 16), ("desk-anomaly-cst", 24)] {
        let model = Model::<f64>::build(&preset(name, &opts).unwrap(), 1).unwrap();
        for _ in 0..5 {
            let data = (0..size * size).map(|_| rng.random_range(0.0..1.0)).collect();
            let image = Tensor::new(&[1, size, size, 1], data).unwrap();
            let mut tape = Tape::new();
            let set = VolumeSet::from_tensor(image.clone()).unwrap();
            let (_, trace) = model.forward(&mut tape, &set, Mode::Eval).unwrap();
            let diff = tape.value(trace.output).max_abs_diff(&linear_path(&model, &image));
            assert!(diff <= 1e-6, "{name}: {diff}");
        }
    }
}
