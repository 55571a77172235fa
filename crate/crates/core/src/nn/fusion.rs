use crate::nn::LateFusionVars;
use crate::{Error, Real, Result, Tape, Var};

/// Mean of per-member class distributions `[N, K] -> [1, K]`.
pub fn score_fusion<T: Real>(tape: &mut Tape<T>, probs: Var) -> Result<Var> {
    let p = tape.value(probs);
    if p.rank() != 2 {
        return Err(Error::invalid("score_fusion", "expected [N, K] distributions"));
    }
    let width = p.shape()[1];
    for row in p.data().chunks_exact(width) {
        let total: f64 = row.iter().map(|v| v.f64()).sum();
        if (total - 1.0).abs() > 1e-5 {
            return Err(Error::invalid("score_fusion", "rows must sum to 1"));
        }
    }
    tape.mean_rows(probs)
}

/// `LayerNorm(σ(β + mean(S) · Γ))`, `[N, C] -> [1, K]`.
pub fn late_fusion<T: Real>(tape: &mut Tape<T>, input: Var, params: &LateFusionVars) -> Result<Var> {
    let mean = tape.mean_rows(input)?;
    let mapped = tape.dense(mean, params.gamma, params.beta)?;
    let mapped = tape.activation(mapped, params.activation);
    params.norm.apply(tape, mapped)
}
