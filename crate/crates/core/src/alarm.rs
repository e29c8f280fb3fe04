//! Parametric alarm functions and the signals that drive them.
//!
//! An alarm `a_t ∈ [0, 1)` summarises how strongly the population has changed
//! its behaviour at time `t`. It is always read off the signal one step
//! earlier, at `t - 1`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epidemic::EpidemicHistory;

#[derive(Debug, Error, PartialEq)]
pub enum AlarmError {
    #[error("signal value {0} is outside the alarm domain")]
    Domain(f64),
    #[error("{family:?} parameter {name} = {value} is out of range")]
    Parameter {
        family: AlarmFamily,
        name: &'static str,
        value: f64,
    },
    #[error("the Hill alarm needs a proportion-valued signal")]
    HillNeedsProportion,
    #[error("external signal is missing at times {0:?}")]
    MissingTimes(Vec<i64>),
    #[error("an external signal requires a series")]
    NoSeries,
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmFamily {
    Threshold,
    Exponential,
    ScaledExponential,
    Hill,
}

impl AlarmFamily {
    pub const ALL: [AlarmFamily; 4] = [
        AlarmFamily::Threshold,
        AlarmFamily::Exponential,
        AlarmFamily::ScaledExponential,
        AlarmFamily::Hill,
    ];

    /// Whether the family uses a second parameter `delta2`.
    pub fn has_delta2(self) -> bool {
        !matches!(self, AlarmFamily::Exponential)
    }

    /// Whether some parameter value switches the alarm off for every signal,
    /// which spike-and-slab screening relies on.
    pub fn has_exact_zero(self) -> bool {
        !matches!(self, AlarmFamily::Hill)
    }

    /// Open/closed support of `(delta1, delta2)` as `(lo, hi, hi_inclusive)`.
    pub fn support(self) -> [(f64, f64, bool); 2] {
        match self {
            AlarmFamily::Threshold => [(0.0, 1.0, false), (0.0, f64::INFINITY, false)],
            AlarmFamily::Exponential => [(0.0, 1.0, false), (0.0, 0.0, false)],
            AlarmFamily::ScaledExponential => [(0.0, 1.0, false), (0.0, 1.0, true)],
            AlarmFamily::Hill => [(0.0, 1.0, false), (0.0, f64::INFINITY, false)],
        }
    }

    /// True when `value` lies in the support of parameter `index` (0 or 1).
    pub fn in_support(self, index: usize, value: f64) -> bool {
        let (lo, hi, hi_incl) = self.support()[index];
        value > lo && (value < hi || (hi_incl && value == hi))
    }

    pub fn short_name(self) -> &'static str {
        match self {
            AlarmFamily::Threshold => "threshold",
            AlarmFamily::Exponential => "exponential",
            AlarmFamily::ScaledExponential => "scaled_exponential",
            AlarmFamily::Hill => "hill",
        }
    }
}

/// A family together with concrete parameter values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlarmFunction {
    pub family: AlarmFamily,
    pub delta1: f64,
    pub delta2: f64,
}

impl AlarmFunction {
    pub fn new(family: AlarmFamily, delta1: f64, delta2: f64) -> Result<Self, AlarmError> {
        let f = Self {
            family,
            delta1,
            delta2,
        };
        f.check_parameters()?;
        Ok(f)
    }

    /// Admits the closed-at-zero extension of every support so that
    /// `delta = 0` switches the alarm off.
    fn check_parameters(&self) -> Result<(), AlarmError> {
        let bad = |name, value| AlarmError::Parameter {
            family: self.family,
            name,
            value,
        };
        if !(0.0..1.0).contains(&self.delta1) {
            return Err(bad("delta1", self.delta1));
        }
        let d2_ok = match self.family {
            AlarmFamily::Exponential => true,
            AlarmFamily::ScaledExponential => (0.0..=1.0).contains(&self.delta2),
            AlarmFamily::Threshold => self.delta2 >= 0.0 && self.delta2.is_finite(),
            AlarmFamily::Hill => self.delta2 > 0.0 && self.delta2.is_finite(),
        };
        if !d2_ok {
            return Err(bad("delta2", self.delta2));
        }
        Ok(())
    }

    /// Alarm level for a (lagged) signal value.
    pub fn value(&self, signal: f64) -> Result<f64, AlarmError> {
        if !(signal >= 0.0) || !signal.is_finite() {
            return Err(AlarmError::Domain(signal));
        }
        let (d1, d2) = (self.delta1, self.delta2);
        Ok(match self.family {
            AlarmFamily::Threshold => {
                if signal > d2 {
                    d1
                } else {
                    0.0
                }
            }
            AlarmFamily::Exponential => below_one(-(-d1 * signal).exp_m1()),
            AlarmFamily::ScaledExponential => below_one(d2 * -(-d1 * signal).exp_m1()),
            AlarmFamily::Hill => {
                if signal > 1.0 {
                    return Err(AlarmError::Domain(signal));
                }
                let num = signal.powf(d2);
                let den = d1.powf(d2) + num;
                if den == 0.0 {
                    0.0
                } else {
                    below_one(num / den)
                }
            }
        })
    }
}

/// Saturating alarms round to 1.0 in floating point; keep `1 - a_t > 0`.
#[inline]
fn below_one(a: f64) -> f64 {
    a.min(1.0 - f64::EPSILON)
}

/// Where the alarm signal comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    /// Number of infectious individuals.
    #[default]
    PrevalenceCount,
    /// Fraction of the population that is infectious.
    PrevalenceProportion,
    /// A supplied time series, e.g. smoothed culling incidence.
    External,
}

/// A real-valued series indexed by integer time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExternalSeries {
    values: BTreeMap<i64, f64>,
}

impl ExternalSeries {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (i64, f64)>) -> Self {
        Self {
            values: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, t: i64) -> Option<f64> {
        self.values.get(&t).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.values.iter().map(|(&t, &v)| (t, v))
    }

    /// Trailing mean over `t - window + 1 ..= t`, defined wherever the whole
    /// window is present.
    pub fn rolling_mean(&self, window: u32) -> Self {
        let w = i64::from(window.max(1));
        let values = self
            .values
            .keys()
            .filter_map(|&t| {
                let mut sum = 0.0;
                for s in (t - w + 1)..=t {
                    sum += self.values.get(&s)?;
                }
                Some((t, sum / w as f64))
            })
            .collect();
        Self { values }
    }

    /// Reads a `t,value` CSV.
    pub fn load(path: &Path) -> Result<Self, AlarmError> {
        let err = |m: String| AlarmError::Io(format!("{}: {m}", path.display()));
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| err(e.to_string()))?;
        let headers = reader.headers().map_err(|e| err(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t", "value"] {
            return Err(err("line 1: header must be t,value".into()));
        }
        let mut values = BTreeMap::new();
        for (k, rec) in reader.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| err(format!("line {line}: {e}")))?;
            let t: i64 = rec[0]
                .parse()
                .map_err(|_| err(format!("line {line}: bad time '{}'", &rec[0])))?;
            let v: f64 = rec[1]
                .parse()
                .map_err(|_| err(format!("line {line}: bad value '{}'", &rec[1])))?;
            if values.insert(t, v).is_some() {
                return Err(err(format!("line {line}: duplicate time {t}")));
            }
        }
        Ok(Self { values })
    }
}

/// Signal configuration attached to an alarm.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlarmSignal {
    pub kind: SignalKind,
    pub series: Option<ExternalSeries>,
    /// Rolling-average window applied to a raw external series.
    pub window: Option<u32>,
    /// The series is already smoothed; `window` is informational only.
    pub presmoothed: bool,
}

impl AlarmSignal {
    pub fn count() -> Self {
        Self::default()
    }

    pub fn proportion() -> Self {
        Self {
            kind: SignalKind::PrevalenceProportion,
            ..Self::default()
        }
    }

    pub fn external(series: ExternalSeries, window: Option<u32>, presmoothed: bool) -> Self {
        Self {
            kind: SignalKind::External,
            series: Some(series),
            window,
            presmoothed,
        }
    }

    /// The external series after any smoothing this signal asks for.
    pub fn effective_series(&self) -> Result<ExternalSeries, AlarmError> {
        let raw = self.series.as_ref().ok_or(AlarmError::NoSeries)?;
        Ok(match (self.window, self.presmoothed) {
            (Some(w), false) if w > 1 => raw.rolling_mean(w),
            _ => raw.clone(),
        })
    }

    /// Signal value driving `a_t` for each `t` in `steps`, read at `t - 1`.
    ///
    /// Internal signals before the window opens use the prevalence at
    /// `t_min`, i.e. the seed prevalence.
    pub fn values_for(
        &self,
        history: Option<&EpidemicHistory>,
        n: usize,
        steps: std::ops::Range<i64>,
    ) -> Result<Vec<f64>, AlarmError> {
        match self.kind {
            SignalKind::External => {
                let series = self.effective_series()?;
                let mut missing = Vec::new();
                let vals: Vec<f64> = steps
                    .clone()
                    .map(|t| {
                        series.get(t - 1).unwrap_or_else(|| {
                            missing.push(t - 1);
                            f64::NAN
                        })
                    })
                    .collect();
                if missing.is_empty() {
                    Ok(vals)
                } else {
                    Err(AlarmError::MissingTimes(missing))
                }
            }
            SignalKind::PrevalenceCount | SignalKind::PrevalenceProportion => {
                let h = history.ok_or(AlarmError::NoSeries)?;
                Ok(steps
                    .map(|t| {
                        let s = (t - 1).max(h.t_min());
                        self.scale(h.infectious_at(s).len(), n)
                    })
                    .collect())
            }
        }
    }

    /// Converts an infectious count into this signal's units.
    #[inline]
    pub fn scale(&self, count: usize, n: usize) -> f64 {
        match self.kind {
            SignalKind::PrevalenceProportion => count as f64 / n as f64,
            _ => count as f64,
        }
    }
}

/// Family plus signal; parameter values live in the model's parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AlarmSpec {
    pub family: AlarmFamily,
    pub signal: AlarmSignal,
}

impl AlarmSpec {
    pub fn new(family: AlarmFamily, signal: AlarmSignal) -> Result<Self, AlarmError> {
        if family == AlarmFamily::Hill && signal.kind == SignalKind::PrevalenceCount {
            return Err(AlarmError::HillNeedsProportion);
        }
        if signal.kind == SignalKind::External && signal.series.is_none() {
            return Err(AlarmError::NoSeries);
        }
        Ok(Self { family, signal })
    }

    pub fn function(&self, delta1: f64, delta2: f64) -> Result<AlarmFunction, AlarmError> {
        AlarmFunction::new(self.family, delta1, delta2)
    }
}

/// Alarm level `a_t` for each `t` in `steps`.
pub fn alarm_series(
    function: &AlarmFunction,
    signal: &AlarmSignal,
    history: Option<&EpidemicHistory>,
    n: usize,
    steps: std::ops::Range<i64>,
) -> Result<Vec<f64>, AlarmError> {
    signal
        .values_for(history, n, steps)?
        .into_iter()
        .map(|s| function.value(s))
        .collect()
}
