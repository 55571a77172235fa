//! Task losses for one set. Each returns the set's share of a batch mean,
//! so summing over the sets of a batch gives the batch loss.

use alloc::vec;

use crate::{Real, Result, Tape, Var};

/// Cross-entropy of every member's distribution `[N, K]` against the set
/// label, divided by `batch_images`.
pub fn cic_loss<T: Real>(tape: &mut Tape<T>, probs: Var, label: usize, batch_images: usize) -> Result<Var> {
    let rows = tape.shape(probs)[0];
    tape.nll(probs, &vec![label; rows], T::of(1.0 / batch_images as f64))
}

/// Cross-entropy of the set distribution `[1, K]`, divided by `batch_sets`.
pub fn sc_loss<T: Real>(tape: &mut Tape<T>, probs: Var, label: usize, batch_sets: usize) -> Result<Var> {
    tape.nll(probs, &[label], T::of(1.0 / batch_sets as f64))
}

/// Binary cross-entropy of per-member probabilities `[N, 1]` against the
/// anomaly flags, divided by `batch_images`.
pub fn anomaly_loss<T: Real>(tape: &mut Tape<T>, probs: Var, flags: &[bool], batch_images: usize) -> Result<Var> {
    tape.bce(probs, flags, T::of(1.0 / batch_images as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Error, Tensor};
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_prediction_costs_ln_k() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::full(&[3, 4], 0.25));
        let l = cic_loss(&mut tape, p, 2, 3).unwrap();
        assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-12);
        let q = tape.leaf(Tensor::full(&[1, 4], 0.25));
        let l = sc_loss(&mut tape, q, 0, 1).unwrap();
        assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_near_zero_and_clamped() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::from_f64(&[2, 2], &[0.0, 1.0, 0.0, 1.0]).unwrap());
        let good = cic_loss(&mut tape, p, 1, 2).unwrap();
        assert_eq!(tape.value(good).item(), 0.0);
        let bad = cic_loss(&mut tape, p, 0, 2).unwrap();
        assert!((tape.value(bad).item() + 1e-12f64.ln()).abs() < 1e-9);
        assert!(tape.value(bad).all_finite());
    }

    #[test]
    fn label_out_of_range() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::full(&[1, 3], 1.0 / 3.0));
        assert_eq!(
            sc_loss(&mut tape, p, 3, 1).unwrap_err(),
            Error::LabelOutOfRange { label: 3, classes: 3 }
        );
    }

    #[test]
    fn batch_of_three_sets_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sizes = [2usize, 3, 4];
        let total: usize = sizes.iter().sum();
        let mut tape = Tape::<f64>::new();
        let (mut cic, mut anomaly) = (0.0, 0.0);
        let (mut cic_oracle, mut anomaly_oracle) = (0.0, 0.0);
        for &n in &sizes {
            let label = rng.random_range(0..3);
            let rows: Vec<f64> = (0..n)
                .flat_map(|_| {
                    let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.into_iter().map(move |v| v / s)
                })
                .collect();
            for row in rows.chunks(3) {
                cic_oracle -= row[label].ln();
            }
            let p = tape.leaf(Tensor::from_f64(&[n, 3], &rows).unwrap());
            let l = cic_loss(&mut tape, p, label, total).unwrap();
            cic += tape.value(l).item();

            let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
            let flags: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            for (&q, &f) in probs.iter().zip(&flags) {
                anomaly_oracle -= if f { q.ln() } else { (1.0 - q).ln() };
            }
            let q = tape.leaf(Tensor::from_f64(&[n, 1], &probs).unwrap());
            let l = anomaly_loss(&mut tape, q, &flags, total).unwrap();
            anomaly += tape.value(l).item();
        }
        assert!((cic - cic_oracle / total as f64).abs() < 1e-12);
        assert!((anomaly - anomaly_oracle / total as f64).abs() < 1e-12);
    }
}
