//! Infection probabilities and likelihoods for the baseline spatial ILM and
//! the two behavioural-change forms.
//!
//! For susceptible `i` at time `t` the infection hazard is
//!
//! ```text
//! h(i,t) = Ω_S(i) · m_t · Σ_{j ∈ I(t)} (d_ij + offset)^(-β_t) + ε
//! P(i,t) = 1 - exp(-h(i,t))
//! ```
//!
//! with `m_t = 1, β_t = β` for the baseline, `m_t = 1 - a_t` for type A and
//! `β_t = β / (1 - a_t)` for type B. `Ω_S(i)` is either `α` or `α0 + α1 z_i`.

mod likelihood;

pub use likelihood::{LikelihoodData, LikelihoodEvaluator};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alarm::{AlarmError, AlarmFamily, AlarmSignal, AlarmSpec};
use crate::epidemic::{Compartment, EpidemicError, EpidemicHistory, Framework};
use crate::population::Population;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Spec(String),
    #[error("individual {i} is not susceptible at time {t}")]
    NotSusceptible { i: usize, t: i64 },
    #[error("population has {pop} individuals but the history has {history}")]
    SizeMismatch { pop: usize, history: usize },
    #[error("parameter {0} is outside its support")]
    OutOfSupport(ParamName),
    #[error(transparent)]
    Alarm(#[from] AlarmError),
    #[error(transparent)]
    Epidemic(#[from] EpidemicError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    #[default]
    Baseline,
    TypeA,
    TypeB,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Susceptibility {
    /// `Ω_S(i) = α`.
    #[default]
    Constant,
    /// `Ω_S(i) = α0 + α1 z_i` with `z_i ∈ {0, 1}` read from a population column.
    BinaryCovariate { column: String },
}

/// Model parameters, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamName {
    Alpha,
    Alpha0,
    Alpha1,
    Beta,
    Delta1,
    Delta2,
    Epsilon,
}

impl ParamName {
    pub const ALL: [ParamName; 7] = [
        ParamName::Alpha,
        ParamName::Alpha0,
        ParamName::Alpha1,
        ParamName::Beta,
        ParamName::Delta1,
        ParamName::Delta2,
        ParamName::Epsilon,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::Alpha => "alpha",
            ParamName::Alpha0 => "alpha0",
            ParamName::Alpha1 => "alpha1",
            ParamName::Beta => "beta",
            ParamName::Delta1 => "delta1",
            ParamName::Delta2 => "delta2",
            ParamName::Epsilon => "epsilon",
        }
    }

    pub fn is_alarm(self) -> bool {
        matches!(self, ParamName::Delta1 | ParamName::Delta2)
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamName {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ParamName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| ModelError::Spec(format!("unknown parameter '{s}'")))
    }
}

/// Values for every parameter name; unused ones are ignored by the model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Params([f64; 7]);

impl Params {
    pub fn get(&self, p: ParamName) -> f64 {
        self.0[p as usize]
    }

    pub fn set(&mut self, p: ParamName, v: f64) {
        self.0[p as usize] = v;
    }

    pub fn with(mut self, p: ParamName, v: f64) -> Self {
        self.set(p, v);
        self
    }

    pub fn baseline(alpha: f64, beta: f64) -> Self {
        Self::default()
            .with(ParamName::Alpha, alpha)
            .with(ParamName::Beta, beta)
    }

    pub fn alarm(alpha: f64, beta: f64, delta1: f64, delta2: f64) -> Self {
        Self::baseline(alpha, beta)
            .with(ParamName::Delta1, delta1)
            .with(ParamName::Delta2, delta2)
    }
}

/// Complete description of a (BC-)ILM apart from parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub form: Form,
    pub alarm: Option<AlarmSpec>,
    pub framework: Framework,
    pub susceptibility: Susceptibility,
    /// Added to every distance inside the power-law kernel.
    pub kernel_offset: f64,
}

impl ModelSpec {
    pub fn baseline() -> Self {
        Self {
            form: Form::Baseline,
            alarm: None,
            framework: Framework::Sir,
            susceptibility: Susceptibility::Constant,
            kernel_offset: 1.0,
        }
    }

    pub fn with_alarm(form: Form, alarm: AlarmSpec) -> Self {
        Self {
            form,
            alarm: Some(alarm),
            ..Self::baseline()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match (self.form, &self.alarm) {
            (Form::Baseline, Some(_)) => {
                return Err(ModelError::Spec("the baseline model takes no alarm".into()))
            }
            (Form::TypeA | Form::TypeB, None) => {
                return Err(ModelError::Spec(format!(
                    "{:?} requires an alarm function",
                    self.form
                )))
            }
            _ => {}
        }
        if !(self.kernel_offset >= 0.0) || !self.kernel_offset.is_finite() {
            return Err(ModelError::Spec(format!(
                "kernel offset {} must be a non-negative number",
                self.kernel_offset
            )));
        }
        Ok(())
    }

    pub fn family(&self) -> Option<AlarmFamily> {
        self.alarm.as_ref().map(|a| a.family)
    }

    /// The same model with behavioural change removed.
    pub fn to_baseline(&self) -> Self {
        Self {
            form: Form::Baseline,
            alarm: None,
            ..self.clone()
        }
    }

    /// Parameters this model reads, in canonical order.
    pub fn parameter_names(&self) -> Vec<ParamName> {
        let mut names = match self.susceptibility {
            Susceptibility::Constant => vec![ParamName::Alpha],
            Susceptibility::BinaryCovariate { .. } => vec![ParamName::Alpha0, ParamName::Alpha1],
        };
        names.push(ParamName::Beta);
        if let Some(family) = self.family() {
            names.push(ParamName::Delta1);
            if family.has_delta2() {
                names.push(ParamName::Delta2);
            }
        }
        names.push(ParamName::Epsilon);
        names
    }

    /// Whether `value` is admissible for parameter `p` under this model.
    pub fn in_support(&self, p: ParamName, value: f64) -> bool {
        if !value.is_finite() {
            return false;
        }
        match p {
            ParamName::Alpha | ParamName::Alpha0 | ParamName::Alpha1 | ParamName::Beta => {
                value > 0.0
            }
            ParamName::Epsilon => value >= 0.0,
            ParamName::Delta1 => self.family().is_some_and(|f| f.in_support(0, value)),
            ParamName::Delta2 => self.family().is_some_and(|f| f.in_support(1, value)),
        }
    }

    /// Short label such as `Base`, `2A` or `4B`, numbering families in the
    /// order threshold, exponential, scaled exponential, Hill.
    pub fn label(&self) -> String {
        match (self.form, self.family()) {
            (Form::Baseline, _) | (_, None) => "Base".into(),
            (form, Some(fam)) => {
                let k = AlarmFamily::ALL.iter().position(|f| *f == fam).unwrap() + 1;
                let t = if form == Form::TypeA { 'A' } else { 'B' };
                format!("{k}{t}")
            }
        }
    }

    /// Inverse of [`ModelSpec::label`] for prevalence-driven models: the
    /// Hill alarm reads the infectious proportion, the others the count.
    pub fn from_label(label: &str) -> Result<Self, ModelError> {
        if label == "Base" {
            return Ok(Self::baseline());
        }
        let bad = || ModelError::Spec(format!("unknown model label '{label}'"));
        let mut chars = label.chars();
        let (Some(k), Some(t), None) = (chars.next(), chars.next(), chars.next()) else {
            return Err(bad());
        };
        let family = k
            .to_digit(10)
            .and_then(|k| AlarmFamily::ALL.get((k as usize).checked_sub(1)?))
            .copied()
            .ok_or_else(bad)?;
        let form = match t {
            'A' => Form::TypeA,
            'B' => Form::TypeB,
            _ => return Err(bad()),
        };
        let signal = if family == AlarmFamily::Hill {
            AlarmSignal::proportion()
        } else {
            AlarmSignal::count()
        };
        Ok(Self::with_alarm(form, AlarmSpec::new(family, signal)?))
    }
}

/// Ordered parameter values for a model with a fixed-vs-free mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub names: Vec<ParamName>,
    pub values: Vec<f64>,
    pub free: Vec<bool>,
}

impl ParameterVector {
    /// All of the spec's parameters, every one free, values taken from `params`.
    pub fn new(spec: &ModelSpec, params: &Params) -> Self {
        let names = spec.parameter_names();
        let values = names.iter().map(|&p| params.get(p)).collect();
        let free = names.iter().map(|&p| p != ParamName::Epsilon).collect();
        Self {
            names,
            values,
            free,
        }
    }

    pub fn params(&self) -> Params {
        let mut p = Params::default();
        for (&n, &v) in self.names.iter().zip(&self.values) {
            p.set(n, v);
        }
        p
    }

    pub fn free_names(&self) -> Vec<ParamName> {
        self.names
            .iter()
            .zip(&self.free)
            .filter(|(_, &f)| f)
            .map(|(&n, _)| n)
            .collect()
    }

    pub fn set_fixed(&mut self, p: ParamName, value: f64) {
        if let Some(k) = self.names.iter().position(|&n| n == p) {
            self.values[k] = value;
            self.free[k] = false;
        }
    }
}

/// Susceptibility multiplier `Ω_S(i)`.
#[inline]
pub(crate) fn susceptibility(params: &Params, covariate: Option<f64>) -> f64 {
    match covariate {
        None => params.get(ParamName::Alpha),
        Some(z) => params.get(ParamName::Alpha0) + params.get(ParamName::Alpha1) * z,
    }
}

/// Multiplier on susceptibility and exponent on the kernel at alarm `a`.
#[inline]
pub(crate) fn form_terms(form: Form, beta: f64, a: f64) -> (f64, f64) {
    match form {
        Form::Baseline => (1.0, beta),
        Form::TypeA => (1.0 - a, beta),
        Form::TypeB => (1.0, beta / (1.0 - a)),
    }
}

/// Kernel contribution given `ln(d + offset)`.
#[inline]
pub(crate) fn kernel_term(log_dist: f64, exponent: f64) -> f64 {
    (-exponent * log_dist).exp()
}

/// `ln P` for hazard `h`, stable for small and large `h`.
#[inline]
pub(crate) fn log_prob_infected(h: f64) -> f64 {
    (-(-h).exp_m1()).ln()
}

/// Resolves binary covariate values for every individual, if the model uses
/// them.
pub(crate) fn covariate_values(
    spec: &ModelSpec,
    pop: &Population,
) -> Result<Option<Vec<f64>>, ModelError> {
    let Susceptibility::BinaryCovariate { column } = &spec.susceptibility else {
        return Ok(None);
    };
    let idx = pop.covariate_index(column).ok_or_else(|| {
        ModelError::Spec(format!("population has no covariate column '{column}'"))
    })?;
    pop.individuals()
        .iter()
        .map(|ind| {
            let z = ind.covariates[idx];
            if z == 0.0 || z == 1.0 {
                Ok(z)
            } else {
                Err(ModelError::Spec(format!(
                    "covariate '{column}' of individual {} is {z}, expected 0 or 1",
                    ind.id
                )))
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

/// Checks that every parameter the model reads is in its support.
pub fn check_support(spec: &ModelSpec, params: &Params) -> Result<(), ModelError> {
    for p in spec.parameter_names() {
        let v = params.get(p);
        let ok = spec.in_support(p, v)
            // zero alarm parameters switch behavioural change off
            || (p.is_alarm() && v == 0.0 && spec.family().is_some_and(|f| f.has_exact_zero()));
        if !ok {
            return Err(ModelError::OutOfSupport(p));
        }
    }
    Ok(())
}

/// Alarm level at `t` for a model, from the history's signal at `t - 1`.
pub fn alarm_at(
    spec: &ModelSpec,
    params: &Params,
    history: &EpidemicHistory,
    n: usize,
    t: i64,
) -> Result<f64, ModelError> {
    let Some(alarm) = &spec.alarm else {
        return Ok(0.0);
    };
    let f = alarm.function(params.get(ParamName::Delta1), params.get(ParamName::Delta2))?;
    let s = alarm.signal.values_for(Some(history), n, t..t + 1)?[0];
    Ok(f.value(s)?)
}

/// `P(i, t)` evaluated directly from the history.
pub fn infection_probability(
    spec: &ModelSpec,
    pop: &Population,
    history: &EpidemicHistory,
    params: &Params,
    i: usize,
    t: i64,
) -> Result<f64, ModelError> {
    spec.validate()?;
    if history.state_of(i, t)? != Compartment::Susceptible {
        return Err(ModelError::NotSusceptible { i, t });
    }
    let covs = covariate_values(spec, pop)?;
    let a = alarm_at(spec, params, history, pop.len(), t)?;
    let (mult, exponent) = form_terms(spec.form, params.get(ParamName::Beta), a);
    let pressure: f64 = history
        .infectious_at(t)
        .into_iter()
        .map(|j| kernel_term((pop.distance(i, j) + spec.kernel_offset).ln(), exponent))
        .sum();
    let omega = susceptibility(params, covs.as_ref().map(|c| c[i]));
    let h = omega * mult * pressure + params.get(ParamName::Epsilon);
    Ok(-(-h).exp_m1())
}

/// Log-likelihood of the history's transitions over its window.
pub fn log_likelihood(
    spec: &ModelSpec,
    pop: &Population,
    history: &EpidemicHistory,
    params: &Params,
) -> Result<f64, ModelError> {
    LikelihoodData::new(spec, pop, history)?.log_likelihood(params)
}

/// One log-Bernoulli term per susceptible individual and time step.
pub fn pointwise_log_terms(
    spec: &ModelSpec,
    pop: &Population,
    history: &EpidemicHistory,
    params: &Params,
) -> Result<Vec<f64>, ModelError> {
    LikelihoodData::new(spec, pop, history)?.pointwise_log_terms(params)
}
