use crate::nn::{mhsa, Mode, SabVars};
use crate::{Real, Result, Tape, Var};

/// Set attention block. Runs without dropout regardless of mode.
pub fn sab<T: Real>(tape: &mut Tape<T>, input: Var, params: &SabVars) -> Result<Var> {
    let attended = mhsa(tape, input, &params.mhsa, Mode::Eval)?;
    let residual = tape.add(input, attended)?;
    let hidden = params.norm1.apply(tape, residual)?;
    let mapped = params.rff.apply(tape, hidden)?;
    let mapped = tape.activation(mapped, params.rff_activation);
    let residual = tape.add(hidden, mapped)?;
    params.norm2.apply(tape, residual)
}
