use crate::nn::DenseVars;
use crate::ops::Activation;
use crate::{Real, Result, Tape, Var};

/// `act(rFF(S + mean(S)))`: the set mean is added to every row before a
/// shared affine map.
pub fn deepsets_layer<T: Real>(
    tape: &mut Tape<T>,
    input: Var,
    rff: &DenseVars,
    activation: Activation,
) -> Result<Var> {
    let mean = tape.mean_rows(input)?;
    let shifted = tape.add_row(input, mean)?;
    let mapped = rff.apply(tape, shifted)?;
    Ok(tape.activation(mapped, activation))
}
