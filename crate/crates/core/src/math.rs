//! Float helpers backed by `libm` so the crate stays `no_std`.

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// Numerically stable softmax of `logits` written into `out`.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = exp(z - max);
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `log softmax(logits)[k]`.
pub(crate) fn log_softmax_at(logits: &[f64], k: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|&z| exp(z - max)).sum();
    logits[k] - max - ln(total)
}
