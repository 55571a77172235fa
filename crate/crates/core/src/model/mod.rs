//! Declarative networks: a [`ModelSpec`] lists layers, [`Model::build`]
//! initializes their parameters from a seed.

mod presets;
mod spec;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use presets::{preset, PresetOptions, PRESETS};
pub use spec::{HeadMode, LayerSpec, ModelSpec};

use crate::nn::{
    self, init, ConvParams, ConvVars, DenseParams, DenseVars, HeadGeometry, LateFusionParams, LateFusionVars,
    LayerNormParams, Mode, SabParams, SabVars, SetConvParams, SetConvVars, VolumeSet,
};
use crate::ops::Activation;
use crate::{Error, Real, Result, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T = f32> {
    SetConv(SetConvParams<T>),
    Conv(ConvParams<T>, Activation),
    Maxpool(usize),
    Gap,
    Sab(SabParams<T>),
    Deepsets(DenseParams<T>, Activation),
    Dense(DenseParams<T>),
    LateFusion(LateFusionParams<T>),
    Softmax,
    Sigmoid,
}

/// [`LayerParams`] recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub enum LayerVars {
    SetConv(SetConvVars),
    Conv(ConvVars, Activation),
    Maxpool(usize),
    Gap,
    Sab(SabVars),
    Deepsets(DenseVars, Activation),
    Dense(DenseVars),
    LateFusion(LateFusionVars),
    Softmax,
    Sigmoid,
}

impl<T: Real> LayerParams<T> {
    fn bind(&self, tape: &mut Tape<T>) -> LayerVars {
        match self {
            LayerParams::SetConv(p) => LayerVars::SetConv(p.bind(tape)),
            LayerParams::Conv(p, a) => LayerVars::Conv(p.bind(tape), *a),
            LayerParams::Maxpool(k) => LayerVars::Maxpool(*k),
            LayerParams::Gap => LayerVars::Gap,
            LayerParams::Sab(p) => LayerVars::Sab(p.bind(tape)),
            LayerParams::Deepsets(p, a) => LayerVars::Deepsets(p.bind(tape), *a),
            LayerParams::Dense(p) => LayerVars::Dense(p.bind(tape)),
            LayerParams::LateFusion(p) => LayerVars::LateFusion(p.bind(tape)),
            LayerParams::Softmax => LayerVars::Softmax,
            LayerParams::Sigmoid => LayerVars::Sigmoid,
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            LayerParams::SetConv(p) => p.tensors(),
            LayerParams::Conv(p, _) => p.tensors(),
            LayerParams::Sab(p) => p.tensors(),
            LayerParams::Deepsets(p, _) | LayerParams::Dense(p) => p.tensors(),
            LayerParams::LateFusion(p) => p.tensors(),
            _ => Vec::new(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            LayerParams::SetConv(p) => p.tensors_mut(),
            LayerParams::Conv(p, _) => p.tensors_mut(),
            LayerParams::Sab(p) => p.tensors_mut(),
            LayerParams::Deepsets(p, _) | LayerParams::Dense(p) => p.tensors_mut(),
            LayerParams::LateFusion(p) => p.tensors_mut(),
            _ => Vec::new(),
        }
    }
}

impl LayerVars {
    pub fn vars(&self) -> Vec<Var> {
        match self {
            LayerVars::SetConv(v) => v.vars(),
            LayerVars::Conv(v, _) => v.vars(),
            LayerVars::Sab(v) => v.vars(),
            LayerVars::Deepsets(v, _) | LayerVars::Dense(v) => v.vars(),
            LayerVars::LateFusion(v) => v.vars(),
            _ => Vec::new(),
        }
    }
}

/// Every parameter of a model recorded on one tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub layers: Vec<LayerVars>,
}

impl BoundModel {
    /// Parameter variables in [`Model::named_parameters`] order.
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(LayerVars::vars).collect()
    }
}

/// Variables produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Output of each executed layer, in order.
    pub layer_outputs: Vec<Var>,
    /// Input of the final softmax / sigmoid: `[N, K]`, `[1, K]` or `[N, 1]`.
    pub logits: Var,
    /// `[N, K]` distributions (cic), `[1, K]` (both set-level heads) or
    /// `[N, 1]` probabilities (anomaly).
    pub output: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    spec: ModelSpec,
    layers: Vec<LayerParams<T>>,
}

impl<T: Real> Model<T> {
    /// Initializes parameters deterministically from `seed`.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let widths = spec.widths()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (layer, w) in spec.layers.iter().zip(widths) {
            let params = match layer {
                LayerSpec::Setconv2d {
                    filters,
                    kernel,
                    geometry,
                    activation,
                    dropout,
                    heads,
                } => {
                    let conv = init::conv(&mut rng, *kernel, w.input, *filters, *geometry);
                    let heads = heads.unwrap_or_else(|| HeadGeometry::for_width(*filters));
                    let mhsa = init::mhsa(&mut rng, *filters, heads, *dropout);
                    LayerParams::SetConv(SetConvParams::new(conv, mhsa, *activation)?)
                }
                LayerSpec::Conv2d {
                    filters,
                    kernel,
                    geometry,
                    activation,
                } => LayerParams::Conv(init::conv(&mut rng, *kernel, w.input, *filters, *geometry), *activation),
                LayerSpec::Maxpool { pool } => LayerParams::Maxpool(*pool),
                LayerSpec::Gap => LayerParams::Gap,
                LayerSpec::Sab { width, heads } => {
                    let heads = heads.unwrap_or_else(|| HeadGeometry::for_width(*width));
                    LayerParams::Sab(SabParams {
                        mhsa: init::mhsa(&mut rng, *width, heads, 0.0),
                        norm1: LayerNormParams::unit(*width),
                        rff: init::dense(&mut rng, *width, *width),
                        rff_activation: Activation::Relu,
                        norm2: LayerNormParams::unit(*width),
                    })
                }
                LayerSpec::Deepsets { width, activation } => {
                    LayerParams::Deepsets(init::dense(&mut rng, w.input, *width), *activation)
                }
                LayerSpec::Dense { units } => LayerParams::Dense(init::dense(&mut rng, w.input, *units)),
                LayerSpec::LateFusion { units, activation } => {
                    let d = init::dense::<T>(&mut rng, w.input, *units);
                    LayerParams::LateFusion(LateFusionParams::new(d.weight, d.bias, *activation)?)
                }
                LayerSpec::Softmax => LayerParams::Softmax,
                LayerSpec::Sigmoid => LayerParams::Sigmoid,
            };
            layers.push(params);
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    /// Builds `spec` and overwrites its parameters, in
    /// [`Model::named_parameters`] order.
    pub fn from_parameters(spec: &ModelSpec, params: Vec<Tensor<T>>) -> Result<Self> {
        let mut model = Self::build(spec, 0)?;
        let mut slots = model.parameters_mut();
        if slots.len() != params.len() {
            return Err(Error::invalid(
                "model",
                format!("expected {} parameter tensors, got {}", slots.len(), params.len()),
            ));
        }
        for (slot, value) in slots.iter_mut().zip(params) {
            if slot.shape() != value.shape() {
                return Err(Error::shape("model parameter", slot.shape(), value.shape()));
            }
            **slot = value;
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn head_mode(&self) -> HeadMode {
        self.spec.head_mode
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    /// `("layers.{i}.{name}", tensor)` for every parameter.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.tensors() {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(LayerParams::tensors_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        let params = self.named_parameters().into_iter().map(|(_, t)| t.cast()).collect();
        Model::from_parameters(&self.spec, params).expect("same spec")
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundModel {
        BoundModel {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
        }
    }

    /// Runs layers `start..` on `input`, which must have the shape that
    /// layer `start` expects.
    pub fn run(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundModel,
        input: Var,
        start: usize,
        mut mode: Mode<'_>,
    ) -> Result<Trace> {
        if start == 0 {
            let shape = tape.shape(input);
            if shape.len() != 4 || shape[3] != self.spec.input_channels {
                return Err(Error::invalid(
                    "model input",
                    format!(
                        "expected [N, H, W, {}] volumes, got {:?}",
                        self.spec.input_channels, shape
                    ),
                ));
            }
        }
        let mut x = input;
        let mut layer_outputs = Vec::with_capacity(bound.layers.len());
        let mut logits = None;
        for (i, layer) in bound.layers.iter().enumerate().skip(start) {
            x = match layer {
                LayerVars::SetConv(v) => nn::setconv2d(tape, x, v, mode.reborrow()),
                LayerVars::Conv(v, act) => tape
                    .conv2d(x, v.kernel, v.bias, v.geometry)
                    .map(|y| tape.activation(y, *act)),
                LayerVars::Maxpool(k) => tape.maxpool2d(x, *k),
                LayerVars::Gap => tape.global_avg_pool(x),
                LayerVars::Sab(v) => nn::sab(tape, x, v),
                LayerVars::Deepsets(v, act) => nn::deepsets_layer(tape, x, v, *act),
                LayerVars::Dense(v) => v.apply(tape, x),
                LayerVars::LateFusion(v) => nn::late_fusion(tape, x, v),
                LayerVars::Softmax => {
                    logits = Some(x);
                    Ok(tape.softmax(x))
                }
                LayerVars::Sigmoid => {
                    logits = Some(x);
                    Ok(tape.sigmoid(x))
                }
            }
            .map_err(|e| match e {
                Error::ShapeMismatch { .. } | Error::InvalidArgument { .. } => Error::InvalidModel {
                    index: i,
                    reason: format!("{e}"),
                },
                other => other,
            })?;
            layer_outputs.push(x);
        }
        let logits = logits.ok_or(Error::invalid("model", "no final activation"))?;
        let output = if self.spec.head_mode == HeadMode::ScScoreFusion {
            nn::score_fusion(tape, x)?
        } else {
            x
        };
        Ok(Trace {
            layer_outputs,
            logits,
            output,
        })
    }

    /// Binds parameters, records `input` as a constant and runs every layer.
    pub fn forward(&self, tape: &mut Tape<T>, input: &VolumeSet<T>, mode: Mode<'_>) -> Result<(BoundModel, Trace)> {
        let bound = self.bind(tape);
        let x = tape.constant(input.as_tensor().clone());
        let trace = self.run(tape, &bound, x, 0, mode)?;
        Ok((bound, trace))
    }

    /// Eval-mode output: `[N, K]` for cic, `[K]` for set-level heads and
    /// `[N]` for anomaly.
    pub fn predict(&self, input: &VolumeSet<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let (_, trace) = self.forward(&mut tape, input, Mode::Eval)?;
        let out = tape.value(trace.output).clone();
        match self.spec.head_mode {
            HeadMode::Cic => Ok(out),
            HeadMode::ScScoreFusion | HeadMode::ScLateFusion => {
                let k = out.len();
                out.reshape(&[k])
            }
            HeadMode::Anomaly => out.reshape(&[input.len()]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::Rng;

    fn random_set(seed: u64, n: usize, hw: usize, c: usize) -> VolumeSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * hw * hw * c).map(|_| rng.random_range(0.0..1.0)).collect();
        VolumeSet::from_tensor(Tensor::new(&[n, hw, hw, c], data).unwrap()).unwrap()
    }

    #[test]
    fn build_is_deterministic_and_seed_dependent() {
        let spec = preset("cifar-cst", &PresetOptions::default()).unwrap();
        let a = Model::<f32>::build(&spec, 3).unwrap();
        let b = Model::<f32>::build(&spec, 3).unwrap();
        let c = Model::<f32>::build(&spec, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.param_count(), spec.param_count().unwrap());
        assert_eq!(a.param_count(), c.param_count());
    }

    #[test]
    fn parameter_names_are_unique() {
        let spec = preset("st-l-lf", &PresetOptions::default()).unwrap();
        let model = Model::<f32>::build(&spec, 0).unwrap();
        let mut names: Vec<_> = model.named_parameters().into_iter().map(|(n, _)| n).collect();
        let total = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), total);
    }

    #[test]
    fn rejects_misplaced_layers_with_index() {
        let mut spec = preset("st-s", &PresetOptions::default()).unwrap();
        let sab = spec.layers.remove(10);
        spec.layers.insert(1, sab);
        match spec.validate() {
            Err(Error::InvalidModel { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        let mut spec = preset("cifar-cst", &PresetOptions::default()).unwrap();
        spec.layers.insert(10, LayerSpec::conv(4, 3));
        assert!(matches!(spec.validate(), Err(Error::InvalidModel { index: 10, .. })));
        let mut spec = preset("cifar-cst", &PresetOptions::default()).unwrap();
        spec.head_mode = HeadMode::Anomaly;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn output_kinds_per_head_mode() {
        let o = PresetOptions {
            divisor: 8,
            ..PresetOptions::default()
        };
        let set = random_set(1, 3, 8, 1);
        for (name, shape) in [("cifar-cst", vec![3, 10]), ("st-s-sf", vec![10]), ("ds-lf", vec![10])] {
            let model = Model::<f64>::build(&preset(name, &o).unwrap(), 0).unwrap();
            let out = model.predict(&set).unwrap();
            assert_eq!(out.shape(), shape.as_slice(), "{name}");
            for row in out.data().chunks(10) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        let model = Model::<f64>::build(&preset("desk-anomaly-cst", &o).unwrap(), 0).unwrap();
        let out = model.predict(&random_set(2, 4, 24, 1)).unwrap();
        assert_eq!(out.shape(), &[4]);
        assert!(out.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn singleton_and_varying_sizes_without_rebuild() {
        let model = Model::<f64>::build(&preset("cifar-cst", &PresetOptions::default()).unwrap(), 5).unwrap();
        for n in 1..=8 {
            let out = model.predict(&random_set(n as u64, n, 8, 1)).unwrap();
            assert_eq!(out.shape(), &[n, 10]);
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let model = Model::<f64>::build(&preset("cifar-cst", &PresetOptions::default()).unwrap(), 5).unwrap();
        assert!(model.predict(&random_set(0, 2, 8, 3)).is_err());
    }

    #[test]
    fn equivalent_cnn_keeps_output_shape() {
        for name in ["cifar-cst", "desk-anomaly-cst"] {
            let spec = preset(name, &PresetOptions::default()).unwrap();
            let cnn = spec.equivalent_cnn();
            assert!(cnn.setconv_indices().is_empty());
            let hw = if name == "cifar-cst" { 16 } else { 24 };
            let set = random_set(9, 1, hw, 1);
            let a = Model::<f64>::build(&spec, 0).unwrap().predict(&set).unwrap();
            let b = Model::<f64>::build(&cnn, 0).unwrap().predict(&set).unwrap();
            assert_eq!(a.shape(), b.shape());
        }
    }

    #[test]
    fn cast_round_trip_preserves_parameters() {
        let model = Model::<f32>::build(&preset("ds-sf", &PresetOptions::default()).unwrap(), 1).unwrap();
        assert_eq!(model.cast::<f64>().cast::<f32>(), model);
    }
}
