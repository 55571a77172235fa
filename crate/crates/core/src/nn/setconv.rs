use crate::nn::{mhsa, Mode, SetConvVars};
use crate::{Real, Result, Tape, Var};

/// SetConv2D over a `[N, H, W, C]` set.
///
/// 1. shared convolution, no activation;
/// 2. global average pooling of each member;
/// 3. self-attention across the pooled vectors;
/// 4. each attended vector is added as a per-channel bias over the whole
///    spatial extent of its member's stage-1 volume;
/// 5. activation.
pub fn setconv2d<T: Real>(tape: &mut Tape<T>, input: Var, params: &SetConvVars, mode: Mode<'_>) -> Result<Var> {
    let conv = tape.conv2d(input, params.conv.kernel, params.conv.bias, params.conv.geometry)?;
    let pooled = tape.global_avg_pool(conv)?;
    let context = mhsa(tape, pooled, &params.mhsa, mode)?;
    let biased = tape.add_channel_bias(conv, context)?;
    Ok(tape.activation(biased, params.activation))
}
