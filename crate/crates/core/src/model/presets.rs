//! Named architectures.
//!
//! Base names: `cifar-cst`, `cifar-cnn`, `st-s`, `st-l`, `ds`, each usable
//! with a `-sf` (score fusion) or `-lf` (late fusion) suffix for set-level
//! classification; `anomaly-{cst,st-s,st-l,ds}` and their truncated
//! `desk-anomaly-*` counterparts for 24x24 inputs; and `cst15`.
//!
//! Filter counts and set-layer widths are divided by
//! [`PresetOptions::divisor`] (never below 1).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::model::{HeadMode, LayerSpec, ModelSpec};
use crate::ops::Activation;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PresetOptions {
    pub divisor: usize,
    pub num_classes: usize,
    pub input_channels: usize,
}

impl Default for PresetOptions {
    fn default() -> Self {
        Self {
            divisor: 4,
            num_classes: 10,
            input_channels: 1,
        }
    }
}

impl PresetOptions {
    pub fn full_scale(num_classes: usize, input_channels: usize) -> Self {
        Self {
            divisor: 1,
            num_classes,
            input_channels,
        }
    }

    fn scale(&self, filters: usize) -> usize {
        (filters / self.divisor.max(1)).max(1)
    }
}

pub const PRESETS: &[&str] = &[
    "cifar-cst",
    "cifar-cnn",
    "st-s",
    "st-l",
    "ds",
    "cifar-cst-sf",
    "cifar-cst-lf",
    "cifar-cnn-sf",
    "cifar-cnn-lf",
    "st-s-sf",
    "st-s-lf",
    "st-l-sf",
    "st-l-lf",
    "ds-sf",
    "ds-lf",
    "anomaly-cst",
    "anomaly-st-s",
    "anomaly-st-l",
    "anomaly-ds",
    "desk-anomaly-cst",
    "desk-anomaly-st-s",
    "desk-anomaly-st-l",
    "desk-anomaly-ds",
    "cst15",
];

enum Trunk {
    Set,
    Plain,
}

fn block(o: &PresetOptions, trunk: &Trunk, filters: usize, repeat: usize) -> Vec<LayerSpec> {
    let f = o.scale(filters);
    let layer = match trunk {
        Trunk::Set => LayerSpec::setconv(f, 3),
        Trunk::Plain => LayerSpec::conv(f, 3),
    };
    vec![layer; repeat]
}

fn cifar_trunk(o: &PresetOptions, trunk: Trunk) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for filters in [32, 64, 128] {
        layers.extend(block(o, &trunk, filters, 2));
        layers.push(LayerSpec::Maxpool { pool: 2 });
    }
    layers.push(LayerSpec::Gap);
    layers
}

/// Conv64 x2, pool, Conv128 x2, pool, then `tail` stages of
/// `(filters, repeat)` separated by pools.
fn anomaly_trunk(o: &PresetOptions, set: bool, tail: &[(usize, usize)], pool_last: bool) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for filters in [64, 128] {
        layers.extend(block(o, &Trunk::Plain, filters, 2));
        layers.push(LayerSpec::Maxpool { pool: 2 });
    }
    let trunk = if set { Trunk::Set } else { Trunk::Plain };
    for (i, &(filters, repeat)) in tail.iter().enumerate() {
        layers.extend(block(o, &trunk, filters, repeat));
        if pool_last || i + 1 < tail.len() {
            layers.push(LayerSpec::Maxpool { pool: 2 });
        }
    }
    layers.push(LayerSpec::Gap);
    layers
}

fn set_head(o: &PresetOptions, family: &str, width: usize) -> Option<Vec<LayerSpec>> {
    let w = o.scale(width);
    let sab = LayerSpec::Sab { width: w, heads: None };
    let ds = LayerSpec::Deepsets {
        width: w,
        activation: Activation::Relu,
    };
    Some(match family {
        "cst" | "cnn" => Vec::new(),
        "st-s" => vec![sab; 2],
        "st-l" => vec![sab; 3],
        "ds" => vec![ds; 3],
        _ => return None,
    })
}

fn classifier(
    name: &str,
    o: &PresetOptions,
    mut layers: Vec<LayerSpec>,
    mode: HeadMode,
) -> ModelSpec {
    if mode == HeadMode::ScLateFusion {
        let units = layers
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerSpec::Sab { width, .. } | LayerSpec::Deepsets { width, .. } => Some(*width),
                LayerSpec::Setconv2d { filters, .. } | LayerSpec::Conv2d { filters, .. } => Some(*filters),
                _ => None,
            })
            .unwrap_or(o.input_channels);
        layers.push(LayerSpec::LateFusion {
            units,
            activation: Activation::Relu,
        });
    }
    layers.push(LayerSpec::Dense { units: o.num_classes });
    layers.push(LayerSpec::Softmax);
    ModelSpec {
        name: String::from(name),
        input_channels: o.input_channels,
        layers,
        head_mode: mode,
    }
}

fn anomaly(name: &str, o: &PresetOptions, family: &str, desk: bool) -> Option<ModelSpec> {
    let tail: &[(usize, usize)] = if desk {
        &[(256, 2), (512, 2)]
    } else {
        &[(256, 2), (512, 4), (512, 4)]
    };
    let mut layers = anomaly_trunk(o, family == "cst", tail, !desk);
    let w = o.scale(512);
    match family {
        "cst" => {}
        "st-s" => layers.extend(vec![LayerSpec::Sab { width: w, heads: None }; 8]),
        "st-l" => layers.extend(vec![LayerSpec::Sab { width: w, heads: None }; 9]),
        "ds" => layers.push(LayerSpec::Deepsets {
            width: w,
            activation: Activation::Relu,
        }),
        _ => return None,
    }
    layers.push(LayerSpec::Dense { units: 1 });
    layers.push(LayerSpec::Sigmoid);
    Some(ModelSpec {
        name: String::from(name),
        input_channels: o.input_channels,
        layers,
        head_mode: HeadMode::Anomaly,
    })
}

/// SetConv2D from the third stage onward, ReLU6 throughout, GAP then a
/// single dense layer.
fn cst15(o: &PresetOptions) -> ModelSpec {
    let relu6 = |l: LayerSpec| match l {
        LayerSpec::Setconv2d {
            filters,
            kernel,
            geometry,
            dropout,
            heads,
            ..
        } => LayerSpec::Setconv2d {
            filters,
            kernel,
            geometry,
            activation: Activation::Relu6,
            dropout,
            heads,
        },
        LayerSpec::Conv2d {
            filters,
            kernel,
            geometry,
            ..
        } => LayerSpec::Conv2d {
            filters,
            kernel,
            geometry,
            activation: Activation::Relu6,
        },
        other => other,
    };
    let stages: [(usize, usize, Trunk); 5] = [
        (64, 2, Trunk::Plain),
        (128, 2, Trunk::Plain),
        (256, 2, Trunk::Set),
        (512, 4, Trunk::Set),
        (512, 4, Trunk::Set),
    ];
    let mut layers = Vec::new();
    for (filters, repeat, trunk) in &stages {
        layers.extend(block(o, trunk, *filters, *repeat).into_iter().map(relu6));
        layers.push(LayerSpec::Maxpool { pool: 2 });
    }
    layers.push(LayerSpec::Gap);
    layers.push(LayerSpec::Dense { units: o.num_classes });
    layers.push(LayerSpec::Softmax);
    ModelSpec {
        name: String::from("cst15"),
        input_channels: o.input_channels,
        layers,
        head_mode: HeadMode::Cic,
    }
}

/// Builds the named preset.
pub fn preset(name: &str, options: &PresetOptions) -> Result<ModelSpec> {
    let unknown = || Error::invalid("preset", format!("unknown preset {name:?}"));
    if name == "cst15" {
        return Ok(cst15(options));
    }
    if let Some(family) = name.strip_prefix("desk-anomaly-") {
        return anomaly(name, options, family, true).ok_or_else(unknown);
    }
    if let Some(family) = name.strip_prefix("anomaly-") {
        return anomaly(name, options, family, false).ok_or_else(unknown);
    }
    let (base, mode) = if let Some(b) = name.strip_suffix("-sf") {
        (b, HeadMode::ScScoreFusion)
    } else if let Some(b) = name.strip_suffix("-lf") {
        (b, HeadMode::ScLateFusion)
    } else {
        (name, HeadMode::Cic)
    };
    let family = base.strip_prefix("cifar-").unwrap_or(base);
    if matches!(base, "cst" | "cnn") {
        return Err(unknown());
    }
    let trunk = if family == "cst" { Trunk::Set } else { Trunk::Plain };
    let mut layers = cifar_trunk(options, trunk);
    layers.extend(set_head(options, family, 128).ok_or_else(unknown)?);
    Ok(classifier(name, options, layers, mode))
}
