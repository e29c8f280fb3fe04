//! Prior distributions on model parameters.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF};

use super::InferenceError;

/// Univariate prior. Gamma priors are stored by rate; configs may give
/// either `rate` or `scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PriorRepr", into = "PriorRepr")]
pub enum Prior {
    Uniform { lower: f64, upper: f64 },
    Beta { a: f64, b: f64 },
    Gamma { shape: f64, rate: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
enum PriorRepr {
    Uniform {
        lower: f64,
        upper: f64,
    },
    Beta {
        a: f64,
        b: f64,
    },
    Gamma {
        shape: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
    },
}

impl TryFrom<PriorRepr> for Prior {
    type Error = InferenceError;

    fn try_from(r: PriorRepr) -> Result<Self, Self::Error> {
        match r {
            PriorRepr::Uniform { lower, upper } => Prior::uniform(lower, upper),
            PriorRepr::Beta { a, b } => Prior::beta(a, b),
            PriorRepr::Gamma { shape, rate, scale } => match (rate, scale) {
                (Some(rate), None) => Prior::gamma(shape, rate),
                (None, Some(scale)) => Prior::gamma_scale(shape, scale),
                _ => Err(InferenceError::Prior(
                    "gamma prior needs exactly one of `rate` or `scale`".into(),
                )),
            },
        }
    }
}

impl From<Prior> for PriorRepr {
    fn from(p: Prior) -> Self {
        match p {
            Prior::Uniform { lower, upper } => PriorRepr::Uniform { lower, upper },
            Prior::Beta { a, b } => PriorRepr::Beta { a, b },
            Prior::Gamma { shape, rate } => PriorRepr::Gamma {
                shape,
                rate: Some(rate),
                scale: None,
            },
        }
    }
}

fn positive(what: &str, v: f64) -> Result<(), InferenceError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(InferenceError::Prior(format!(
            "{what} must be positive, got {v}"
        )))
    }
}

impl Prior {
    pub fn uniform(lower: f64, upper: f64) -> Result<Self, InferenceError> {
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(InferenceError::Prior(format!(
                "uniform bounds [{lower}, {upper}] are not an interval"
            )));
        }
        Ok(Prior::Uniform { lower, upper })
    }

    pub fn beta(a: f64, b: f64) -> Result<Self, InferenceError> {
        positive("beta a", a)?;
        positive("beta b", b)?;
        Ok(Prior::Beta { a, b })
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self, InferenceError> {
        positive("gamma shape", shape)?;
        positive("gamma rate", rate)?;
        Ok(Prior::Gamma { shape, rate })
    }

    pub fn gamma_scale(shape: f64, scale: f64) -> Result<Self, InferenceError> {
        positive("gamma scale", scale)?;
        Prior::gamma(shape, 1.0 / scale)
    }

    /// Log density, `-inf` outside the support. Support boundaries are
    /// excluded so that every stored value is a valid parameter.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            Prior::Uniform { lower, upper } => {
                if x > lower && x < upper {
                    -(upper - lower).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::Beta { a, b } => {
                if x > 0.0 && x < 1.0 {
                    statrs::distribution::Beta::new(a, b).unwrap().ln_pdf(x)
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::Gamma { shape, rate } => {
                if x > 0.0 && x.is_finite() {
                    statrs::distribution::Gamma::new(shape, rate)
                        .unwrap()
                        .ln_pdf(x)
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn in_support(&self, x: f64) -> bool {
        self.ln_pdf(x) > f64::NEG_INFINITY
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            Prior::Uniform { lower, upper } => lower + p * (upper - lower),
            Prior::Beta { a, b } => statrs::distribution::Beta::new(a, b)
                .unwrap()
                .inverse_cdf(p),
            Prior::Gamma { shape, rate } => statrs::distribution::Gamma::new(shape, rate)
                .unwrap()
                .inverse_cdf(p),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Prior::Uniform { lower, upper } => 0.5 * (lower + upper),
            Prior::Beta { a, b } => a / (a + b),
            Prior::Gamma { shape, rate } => shape / rate,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Prior::Uniform { lower, upper } => (upper - lower).powi(2) / 12.0,
            Prior::Beta { a, b } => a * b / ((a + b).powi(2) * (a + b + 1.0)),
            Prior::Gamma { shape, rate } => shape / (rate * rate),
        }
    }

    /// Scale used for the first random-walk step.
    pub fn spread(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Prior::Uniform { lower, upper } => {
                rand_distr::Uniform::new(lower, upper).unwrap().sample(rng)
            }
            Prior::Beta { a, b } => rand_distr::Beta::new(a, b).unwrap().sample(rng),
            Prior::Gamma { shape, rate } => rand_distr::Gamma::new(shape, 1.0 / rate)
                .unwrap()
                .sample(rng),
        }
    }
}

impl std::fmt::Display for Prior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Prior::Uniform { lower, upper } => write!(f, "Uniform({lower}, {upper})"),
            Prior::Beta { a, b } => write!(f, "Beta({a}, {b})"),
            Prior::Gamma { shape, rate } => write!(f, "Gamma(shape {shape}, rate {rate})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scale_and_rate_agree() {
        let a = Prior::gamma_scale(3.0, 20.0).unwrap();
        let b = Prior::gamma(3.0, 0.05).unwrap();
        assert_eq!(a, b);
        assert!((a.mean() - 60.0).abs() < 1e-12);
    }

    #[test]
    fn densities_match_closed_forms() {
        let u = Prior::uniform(0.0, 100.0).unwrap();
        assert!((u.ln_pdf(3.0) + 100f64.ln()).abs() < 1e-12);
        assert_eq!(u.ln_pdf(0.0), f64::NEG_INFINITY);
        assert_eq!(u.ln_pdf(100.0), f64::NEG_INFINITY);
        // Beta(1,2): 2(1-x)
        let b = Prior::beta(1.0, 2.0).unwrap();
        assert!((b.ln_pdf(0.25) - (1.5f64).ln()).abs() < 1e-12);
        // Gamma(2, rate 0.25): x e^{-x/4} / 16
        let g = Prior::gamma_scale(2.0, 4.0).unwrap();
        let x: f64 = 3.0;
        assert!((g.ln_pdf(x) - (x * (-x / 4.0).exp() / 16.0).ln()).abs() < 1e-12);
        assert_eq!(g.ln_pdf(-1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn medians() {
        assert_eq!(Prior::uniform(0.0, 100.0).unwrap().median(), 50.0);
        assert!((Prior::beta(1.0, 1.0).unwrap().median() - 0.5).abs() < 1e-9);
        // Beta(1,2): 1 - (1-x)^2 = 1/2
        let m = Prior::beta(1.0, 2.0).unwrap().median();
        assert!((m - (1.0 - 0.5f64.sqrt())).abs() < 1e-8);
        // Gamma(1, rate 1) is Exp(1)
        assert!((Prior::gamma(1.0, 1.0).unwrap().median() - 2f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in [
            Prior::beta(2.0, 5.0).unwrap(),
            Prior::gamma_scale(3.0, 20.0).unwrap(),
            Prior::uniform(-1.0, 3.0).unwrap(),
        ] {
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| p.sample(&mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let se = (p.variance() / n as f64).sqrt();
            assert!((mean - p.mean()).abs() < 4.0 * se, "{p}: {mean}");
            assert!(xs.iter().all(|&x| p.in_support(x)));
        }
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(Prior::uniform(1.0, 1.0).is_err());
        assert!(Prior::beta(0.0, 1.0).is_err());
        assert!(Prior::gamma(2.0, -1.0).is_err());
    }

    #[test]
    fn serde_round_trip_and_scale_key() {
        #[derive(Deserialize, Serialize)]
        struct W {
            p: Prior,
        }
        let w: W =
            serde_json::from_str(r#"{"p": {"dist": "gamma", "shape": 3, "scale": 20}}"#).unwrap();
        assert_eq!(w.p, Prior::gamma_scale(3.0, 20.0).unwrap());
        let back: W = serde_json::from_str(&serde_json::to_string(&w).unwrap()).unwrap();
        assert_eq!(back.p, w.p);
        let bad = serde_json::from_str::<W>(r#"{"p": {"dist": "gamma", "shape": 3}}"#);
        assert!(bad.is_err());
        let bad = serde_json::from_str::<W>(r#"{"p": {"dist": "beta", "a": -1, "b": 1}}"#);
        assert!(bad.is_err());
    }
}
