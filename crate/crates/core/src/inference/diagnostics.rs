//! Chain summaries: medians, highest posterior density intervals and
//! Geweke's convergence diagnostic.

use super::InferenceError;

/// Median of a sample (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Shortest interval spanning `ceil(mass * n)` of the sorted samples.
///
/// Ties between equally short windows go to the leftmost one.
pub fn hpdi(samples: &[f64], mass: f64) -> Result<(f64, f64), InferenceError> {
    if !(mass > 0.0 && mass < 1.0) {
        return Err(InferenceError::Diagnostic(format!(
            "interval mass {mass} must lie in (0, 1)"
        )));
    }
    if samples.len() < 2 || samples.iter().any(|x| !x.is_finite()) {
        return Err(InferenceError::Diagnostic(
            "an interval needs at least two finite samples".into(),
        ));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let k = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (v[0], v[k - 1]);
    for i in 1..=n - k {
        let w = v[i + k - 1] - v[i];
        if w < best.1 - best.0 {
            best = (v[i], v[i + k - 1]);
        }
    }
    Ok(best)
}

/// Spectral density at frequency zero from an autoregressive fit.
///
/// The AR order is chosen by AIC among `0..=min(n - 1, 10 log10 n)` with
/// Yule-Walker estimates from the Levinson-Durbin recursion.
pub fn spectrum_at_zero(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let max_order = ((10.0 * (n as f64).log10()).floor() as usize).min(n - 1);
    let acov: Vec<f64> = (0..=max_order)
        .map(|k| {
            c[..n - k]
                .iter()
                .zip(&c[k..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n as f64
        })
        .collect();
    if acov[0] <= 0.0 {
        return 0.0;
    }

    let mut phi: Vec<f64> = Vec::new();
    let mut sigma2 = acov[0];
    let mut best = (n as f64 * sigma2.ln(), 0usize, sigma2, Vec::new());
    for p in 1..=max_order {
        let num = acov[p]
            - phi
                .iter()
                .enumerate()
                .map(|(j, f)| f * acov[p - 1 - j])
                .sum::<f64>();
        let k = num / sigma2;
        if !k.is_finite() || k.abs() >= 1.0 {
            break;
        }
        let mut next = Vec::with_capacity(p);
        for j in 0..p - 1 {
            next.push(phi[j] - k * phi[p - 2 - j]);
        }
        next.push(k);
        phi = next;
        sigma2 *= 1.0 - k * k;
        if sigma2 <= 0.0 {
            break;
        }
        let aic = n as f64 * sigma2.ln() + 2.0 * p as f64;
        if aic < best.0 {
            best = (aic, p, sigma2, phi.clone());
        }
    }
    let (_, order, s2, coefs) = best;
    let var_pred = s2 * n as f64 / (n - (order + 1)).max(1) as f64;
    var_pred / (1.0 - coefs.iter().sum::<f64>()).powi(2)
}

/// Outcome of Geweke's test on one parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geweke {
    Z(f64),
    /// Both windows have zero variance: the chain never moved.
    Stuck,
}

impl Geweke {
    pub fn z(self) -> Option<f64> {
        match self {
            Geweke::Z(z) => Some(z),
            Geweke::Stuck => None,
        }
    }

    /// `|z| < limit`; a stuck chain never passes.
    pub fn passes(self, limit: f64) -> bool {
        self.z().is_some_and(|z| z.abs() < limit)
    }
}

/// Compares the mean of the first `first_frac` of a chain with the mean of
/// its last `last_frac`, standardised by spectral variance estimates.
pub fn geweke(chain: &[f64], first_frac: f64, last_frac: f64) -> Result<Geweke, InferenceError> {
    if chain.len() < 100 {
        return Err(InferenceError::Diagnostic(format!(
            "Geweke's diagnostic needs at least 100 draws, got {}",
            chain.len()
        )));
    }
    if !(first_frac > 0.0 && last_frac > 0.0 && first_frac + last_frac <= 1.0) {
        return Err(InferenceError::Diagnostic(format!(
            "window fractions {first_frac} and {last_frac} must be positive and sum to at most 1"
        )));
    }
    let n = chain.len();
    let n1 = ((first_frac * n as f64).floor() as usize).max(2);
    let n2 = ((last_frac * n as f64).floor() as usize).max(2);
    let a = &chain[..n1];
    let b = &chain[n - n2..];
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let var = spectrum_at_zero(a) / n1 as f64 + spectrum_at_zero(b) / n2 as f64;
    if var <= 0.0 || !var.is_finite() {
        return Ok(Geweke::Stuck);
    }
    Ok(Geweke::Z((mean(a) - mean(b)) / var.sqrt()))
}
