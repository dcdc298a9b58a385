//! Generalized extreme studentized deviate test.

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::DetectError;

/// Consistency constant turning MAD into a normal-scale estimate.
pub const MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EsdOutcome {
    /// Flagged indices in removal order.
    pub anomalies: Vec<usize>,
    /// Scale collapsed to zero before `max_anoms` iterations completed.
    pub truncated: bool,
}

/// Student-t quantile with `df` degrees of freedom.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("df > 0").inverse_cdf(p)
}

/// Critical value for the `k`-th (1-based) removal from a sample of size `n`.
pub fn esd_critical_value(n: usize, k: usize, alpha: f64) -> f64 {
    let remaining = (n - k) as f64;
    let p = 1.0 - alpha / (2.0 * (n - k + 1) as f64);
    let t = t_quantile(p, remaining - 1.0);
    remaining * t / ((remaining - 1.0 + t * t) * (remaining + 1.0)).sqrt()
}

pub(crate) fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

fn center_scale(values: &[f64], robust: bool, scratch: &mut Vec<f64>) -> (f64, f64) {
    let n = values.len() as f64;
    if robust {
        scratch.clear();
        scratch.extend_from_slice(values);
        let med = median_in_place(scratch);
        for v in scratch.iter_mut() {
            *v = (*v - med).abs();
        }
        let mad = median_in_place(scratch);
        (med, MAD_SCALE * mad)
    } else {
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }
}

/// Runs up to `max_anoms` removal rounds. Each round removes the point with the
/// largest studentized deviation (lowest index on ties); the reported set is
/// every point removed up to the last round whose statistic exceeded its
/// critical value.
pub fn generalized_esd(
    series: &[f64],
    max_anoms: usize,
    alpha: f64,
    robust: bool,
) -> Result<EsdOutcome, DetectError> {
    let n = series.len();
    if n < max_anoms + 2 {
        return Err(DetectError::TooShort { n, required: max_anoms + 2 });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DetectError::InvalidConfig(format!("alpha {alpha} outside (0, 1)")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(DetectError::NonFinite);
    }

    let mut idx: Vec<usize> = (0..n).collect();
    let mut vals: Vec<f64> = series.to_vec();
    let mut scratch = Vec::with_capacity(n);
    let mut removed = Vec::with_capacity(max_anoms);
    let mut last_passing = 0;
    let mut truncated = false;

    for k in 1..=max_anoms {
        let (center, scale) = center_scale(&vals, robust, &mut scratch);
        if !(scale > 0.0) {
            truncated = true;
            break;
        }
        let mut best = 0;
        let mut best_dev = f64::NEG_INFINITY;
        for (pos, v) in vals.iter().enumerate() {
            let dev = (v - center).abs();
            if dev > best_dev {
                best = pos;
                best_dev = dev;
            }
        }
        let stat = best_dev / scale;
        // order-preserving removal keeps sums in index order
        removed.push(idx.remove(best));
        vals.remove(best);
        if stat > esd_critical_value(n, k, alpha) {
            last_passing = k;
        }
    }
    removed.truncate(last_passing);
    Ok(EsdOutcome { anomalies: removed, truncated })
}
