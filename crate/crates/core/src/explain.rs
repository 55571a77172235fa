//! Grad-CAM over the volumes of a set model, one heatmap per member.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{attribute_region, AnomalyEpisode, Region};
use crate::model::{HeadMode, LayerSpec, Model};
use crate::nn::{Mode, VolumeSet};
use crate::{Error, Real, Result, Tape, Tensor, Var};

/// Which layer's output volume the CAM is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSelector {
    #[default]
    PenultimateSetconv,
    LastSetconv,
    /// Last convolutional layer of either kind; used for baselines with a
    /// plain CNN trunk.
    LastConv,
    /// Any spatial layer by model index.
    Index(usize),
}

/// Score whose gradient drives the CAM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CamTarget {
    /// Logit of class `c`, summed over every row of the class head.
    Class(usize),
    /// Anomaly logit of member `j`; every heatmap uses this one score.
    Image(usize),
    /// Heatmap `i` uses member `i`'s own anomaly logit.
    EachImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap<T = f32> {
    /// `[H, W]` in `[0, 1]`, at input resolution.
    pub values: Tensor<T>,
    pub image: usize,
    /// Spatial mean of the gradient per channel of the selected volume.
    pub channel_weights: Vec<f64>,
    /// The rectified map was zero everywhere; `values` is all zeros.
    pub vanished: bool,
}

/// Resolves `selector` to a model layer index.
pub fn select_layer(layers: &[LayerSpec], selector: LayerSelector) -> Result<usize> {
    let setconvs: Vec<usize> = layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Setconv2d { .. }))
        .map(|(i, _)| i)
        .collect();
    let missing = |what: &str| Error::invalid("grad_cam", format!("model has no {what}"));
    match selector {
        LayerSelector::PenultimateSetconv => {
            if setconvs.len() < 2 {
                return Err(missing("penultimate setconv2d layer"));
            }
            Ok(setconvs[setconvs.len() - 2])
        }
        LayerSelector::LastSetconv => setconvs.last().copied().ok_or_else(|| missing("setconv2d layer")),
        LayerSelector::LastConv => layers.iter().rposition(LayerSpec::is_conv).ok_or_else(|| missing("conv layer")),
        LayerSelector::Index(k) => match layers.get(k) {
            Some(LayerSpec::Setconv2d { .. } | LayerSpec::Conv2d { .. } | LayerSpec::Maxpool { .. }) => Ok(k),
            Some(other) => Err(Error::invalid(
                "grad_cam",
                format!("layer {k} ({}) has no spatial output", other.kind()),
            )),
            None => Err(Error::invalid("grad_cam", format!("layer {k} out of range"))),
        },
    }
}

/// Bilinear resize of a row-major `[h, w]` map with half-pixel centres.
pub fn resize_bilinear<T: Real>(map: &[T], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<T> {
    let sample = |src: usize, dst: usize, o: usize| -> (usize, usize, T) {
        let pos = ((o as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = pos as usize;
        let hi = (lo + 1).min(src - 1);
        (lo, hi, T::of(pos - lo as f64))
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = sample(h, out_h, y);
        for x in 0..out_w {
            let (x0, x1, fx) = sample(w, out_w, x);
            let top = map[y0 * w + x0] * (T::one() - fx) + map[y0 * w + x1] * fx;
            let bottom = map[y1 * w + x0] * (T::one() - fx) + map[y1 * w + x1] * fx;
            out.push(top * (T::one() - fy) + bottom * fy);
        }
    }
    out
}

fn target_scores<T: Real>(
    tape: &mut Tape<T>,
    logits: Var,
    mode: HeadMode,
    target: CamTarget,
    members: usize,
) -> Result<Vec<Var>> {
    let shape = tape.shape(logits).to_vec();
    let (rows, k) = (shape[0], shape[1]);
    match (target, mode) {
        (CamTarget::Class(c), m) if m != HeadMode::Anomaly => {
            if c >= k {
                return Err(Error::LabelOutOfRange { label: c, classes: k });
            }
            let mut score = tape.pick(logits, c)?;
            for r in 1..rows {
                let next = tape.pick(logits, r * k + c)?;
                score = tape.add(score, next)?;
            }
            Ok(alloc::vec![score; members])
        }
        (CamTarget::Image(j), HeadMode::Anomaly) => {
            if j >= members {
                return Err(Error::invalid("grad_cam", format!("image {j} of a {members}-set")));
            }
            Ok(alloc::vec![tape.pick(logits, j)?; members])
        }
        (CamTarget::EachImage, HeadMode::Anomaly) => (0..members).map(|j| tape.pick(logits, j)).collect(),
        (t, m) => Err(Error::invalid("grad_cam", format!("target {t:?} does not apply to a {m:?} head"))),
    }
}

/// CAM of member `i` from the selected volume and its gradient.
fn member_heatmap<T: Real>(volume: &Tensor<T>, grad: &Tensor<T>, i: usize, out_h: usize, out_w: usize) -> Heatmap<T> {
    let s = volume.shape();
    let (h, w, c) = (s[1], s[2], s[3]);
    let (a, g) = (volume.outer(i), grad.outer(i));
    let cells = (h * w) as f64;
    let mut weights = alloc::vec![0.0f64; c];
    for cell in g.chunks_exact(c) {
        for (wc, &gc) in weights.iter_mut().zip(cell) {
            *wc += gc.f64();
        }
    }
    weights.iter_mut().for_each(|wc| *wc /= cells);
    let raw: Vec<T> = a
        .chunks_exact(c)
        .map(|cell| {
            let v: f64 = cell.iter().zip(&weights).map(|(&x, &wc)| x.f64() * wc).sum();
            T::of(v.max(0.0))
        })
        .collect();
    let mut values = resize_bilinear(&raw, h, w, out_h, out_w);
    let peak = values.iter().copied().fold(T::zero(), T::max);
    let vanished = peak <= T::zero();
    if vanished {
        values.iter_mut().for_each(|v| *v = T::zero());
    } else {
        values.iter_mut().for_each(|v| *v /= peak);
    }
    Heatmap {
        values: Tensor::new(&[out_h, out_w], values).expect("sized by construction"),
        image: i,
        channel_weights: weights,
        vanished,
    }
}

/// One heatmap per member of `input`, in member order. Runs in eval mode.
pub fn grad_cam<T: Real>(
    model: &Model<T>,
    input: &VolumeSet<T>,
    target: CamTarget,
    selector: LayerSelector,
) -> Result<Vec<Heatmap<T>>> {
    let layer = select_layer(&model.spec().layers, selector)?;
    let mut tape = Tape::new();
    let (_, trace) = model.forward(&mut tape, input, Mode::Eval)?;
    let n = input.len();
    let shape = input.member_shape();
    let (out_h, out_w) = (shape[0], shape[1]);
    let volume_var = trace.layer_outputs[layer];
    let scores = target_scores(&mut tape, trace.logits, model.head_mode(), target, n)?;
    let volume = tape.value(volume_var).clone();
    let mut heatmaps = Vec::with_capacity(n);
    let mut cached: Option<(Var, Tensor<T>)> = None;
    for (i, &score) in scores.iter().enumerate() {
        let grad = match &cached {
            Some((v, g)) if *v == score => g.clone(),
            _ => {
                let g = tape.backward(score)?.get_or_zeros(volume_var, volume.shape());
                cached = Some((score, g.clone()));
                g
            }
        };
        heatmaps.push(member_heatmap(&volume, &grad, i, out_h, out_w));
    }
    Ok(heatmaps)
}

/// Fraction of heatmap mass inside any of `regions`; zero for an empty map.
pub fn mass_fraction<T: Real>(heatmap: &Tensor<T>, regions: &[Region]) -> f64 {
    let w = heatmap.shape()[1];
    let (mut inside, mut total) = (0.0, 0.0);
    for (idx, &v) in heatmap.data().iter().enumerate() {
        let v = v.f64();
        total += v;
        if regions.iter().any(|r| r.contains(idx / w, idx % w)) {
            inside += v;
        }
    }
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}

/// Mean over flagged members of the heatmap mass inside the two chosen
/// attribute cells. `heatmaps[i]` belongs to member `i`.
pub fn localization_score<T: Real>(heatmaps: &[Heatmap<T>], episode: &AnomalyEpisode) -> Result<f64> {
    if heatmaps.len() != episode.len() {
        return Err(Error::invalid(
            "localization_score",
            format!("{} heatmaps for {} members", heatmaps.len(), episode.len()),
        ));
    }
    let flagged: Vec<&Heatmap<T>> = heatmaps.iter().zip(&episode.flags).filter(|(_, &f)| f).map(|(h, _)| h).collect();
    if flagged.is_empty() {
        return Err(Error::UndefinedMetric("localization score without flagged images"));
    }
    let size = flagged[0].values.shape()[0];
    let (a, b) = episode.chosen;
    let regions = [attribute_region(a, size), attribute_region(b, size)];
    Ok(flagged.iter().map(|h| mass_fraction(&h.values, &regions)).sum::<f64>() / flagged.len() as f64)
}
