use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Log-probabilities of a categorical distribution given unnormalised logits.
///
/// Uses max-subtraction so large logits never overflow.
pub fn log_softmax<F: Scalar>(logits: &[F]) -> Result<Vec<F>> {
    let mut out = Vec::with_capacity(logits.len());
    log_softmax_into(logits, &mut out)?;
    Ok(out)
}

pub fn log_softmax_into<F: Scalar>(logits: &[F], out: &mut Vec<F>) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::Domain("log_softmax of an empty vector".into()));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("log_softmax", "non-finite logit"));
    }
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let sum: F = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_z = max + sum.ln();
    out.clear();
    out.extend(logits.iter().map(|&z| z - log_z));
    Ok(())
}

/// Shannon entropy `-sum p log p` from log-probabilities. Zero-probability terms contribute 0.
pub fn entropy_from_log_probs<F: Scalar>(log_probs: &[F]) -> F {
    log_probs
        .iter()
        .map(|&lp| {
            let p = lp.exp();
            if p == F::zero() {
                F::zero()
            } else {
                -p * lp
            }
        })
        .sum()
}
