//! Bayesian fitting by component-wise adaptive random-walk Metropolis-Hastings.
//!
//! Each free parameter gets a Gaussian random-walk proposal in its natural
//! scale. Proposals outside the prior or model support are rejected without
//! evaluating the likelihood. During burn-in every log step size moves by
//! `(accepted - target) * i^-0.6` after each update at iteration `i`, and is
//! frozen afterwards, so post-burn-in draws come from a fixed kernel.

pub mod diagnostics;
pub mod prior;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diagnostics::{geweke, hpdi, median, spectrum_at_zero, Geweke};
pub use prior::Prior;

use crate::alarm::AlarmFamily;
use crate::epidemic::EpidemicHistory;
use crate::model::{
    check_support, LikelihoodData, LikelihoodEvaluator, ModelError, ModelSpec, ParamName, Params,
};
use crate::population::{fmt_f64, Population};
use crate::simulate::replicate_rng;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("invalid prior: {0}")]
    Prior(String),
    #[error("{0}")]
    Diagnostic(String),
    #[error("invalid sampler settings: {0}")]
    Config(String),
    #[error("cannot start the chain: {0}")]
    Initialization(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {message}")]
    Chain { path: String, message: String },
}

pub type PriorSet = BTreeMap<ParamName, Prior>;

/// Vague priors on susceptibility and spatial parameters with the usual
/// alarm-parameter priors for `spec`'s family.
pub fn default_priors(spec: &ModelSpec) -> PriorSet {
    let vague = Prior::uniform(0.0, 100.0).unwrap();
    let mut priors = PriorSet::new();
    for p in spec.parameter_names() {
        let prior = match (p, spec.family()) {
            (ParamName::Epsilon, _) => continue,
            (ParamName::Delta1, Some(AlarmFamily::Threshold)) => Prior::beta(1.0, 1.0),
            (ParamName::Delta2, Some(AlarmFamily::Threshold)) => Prior::gamma_scale(3.0, 20.0),
            (ParamName::Delta1, Some(AlarmFamily::Exponential)) => Prior::beta(1.0, 2.0),
            (ParamName::Delta1, Some(AlarmFamily::ScaledExponential)) => Prior::beta(1.0, 2.0),
            (ParamName::Delta2, Some(AlarmFamily::ScaledExponential)) => Prior::beta(1.0, 1.0),
            (ParamName::Delta1, Some(AlarmFamily::Hill)) => Prior::beta(1.0, 2.0),
            (ParamName::Delta2, Some(AlarmFamily::Hill)) => Prior::gamma_scale(2.0, 4.0),
            _ => Ok(vague),
        };
        priors.insert(p, prior.unwrap());
    }
    priors
}

fn default_target() -> f64 {
    0.44
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_target")]
    pub target_acceptance: f64,
    /// Adapt step sizes during burn-in.
    #[serde(default = "default_true")]
    pub adapt: bool,
    /// Starting values; prior medians for parameters not listed.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub initial_values: BTreeMap<ParamName, f64>,
    /// Starting random-walk standard deviations.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub initial_steps: BTreeMap<ParamName, f64>,
}

impl McmcConfig {
    pub fn new(iterations: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            iterations,
            burn_in,
            seed,
            target_acceptance: default_target(),
            adapt: true,
            initial_values: BTreeMap::new(),
            initial_steps: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(InferenceError::Config(format!(
                "burn-in {} must be smaller than the {} iterations",
                self.burn_in, self.iterations
            )));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(InferenceError::Config(format!(
                "target acceptance {} must lie in (0, 1)",
                self.target_acceptance
            )));
        }
        Ok(())
    }
}

/// Adaptive step sizes and acceptance counters for component-wise updates.
#[derive(Debug, Clone)]
pub(crate) struct Stepper {
    log_step: Vec<f64>,
    target: f64,
    tried: Vec<u64>,
    accepted: Vec<u64>,
}

impl Stepper {
    pub(crate) fn new(steps: Vec<f64>, target: f64) -> Self {
        let k = steps.len();
        Self {
            log_step: steps.into_iter().map(f64::ln).collect(),
            target,
            tried: vec![0; k],
            accepted: vec![0; k],
        }
    }

    pub(crate) fn propose<R: Rng>(&self, k: usize, x: f64, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        x + self.log_step[k].exp() * z
    }

    /// Records an outcome; adapts when `iteration` is `Some`.
    pub(crate) fn record(&mut self, k: usize, accepted: bool, iteration: Option<usize>) {
        if let Some(i) = iteration {
            let a = if accepted { 1.0 } else { 0.0 };
            self.log_step[k] += (a - self.target) * (i as f64).powf(-0.6);
        } else {
            self.tried[k] += 1;
            self.accepted[k] += u64::from(accepted);
        }
    }

    pub(crate) fn acceptance(&self) -> Vec<f64> {
        self.tried
            .iter()
            .zip(&self.accepted)
            .map(|(&t, &a)| if t == 0 { 0.0 } else { a as f64 / t as f64 })
            .collect()
    }

    pub(crate) fn steps(&self) -> Vec<f64> {
        self.log_step.iter().map(|l| l.exp()).collect()
    }
}

/// Stored chain for the free parameters of one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    /// Free parameters, in canonical order.
    pub names: Vec<ParamName>,
    /// Values of the fixed parameters (free entries hold the initial state).
    pub base: Params,
    /// One column per free parameter, one entry per iteration.
    pub draws: Vec<Vec<f64>>,
    pub log_posterior: Vec<f64>,
    pub burn_in: usize,
    /// Post-burn-in acceptance rate per free parameter.
    pub acceptance: Vec<f64>,
    /// Random-walk standard deviations after adaptation.
    pub steps: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Per-parameter posterior summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: ParamName,
    pub median: f64,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    pub acceptance: f64,
    pub geweke: Geweke,
}

impl PosteriorSample {
    /// A chain that sits at `values` for `n` iterations, with no burn-in.
    pub fn constant(names: Vec<ParamName>, base: Params, values: &[f64], n: usize) -> Self {
        Self {
            draws: values.iter().map(|&v| vec![v; n]).collect(),
            log_posterior: vec![0.0; n],
            burn_in: 0,
            acceptance: vec![0.0; names.len()],
            steps: vec![0.0; names.len()],
            warnings: Vec::new(),
            names,
            base,
        }
    }

    pub fn iterations(&self) -> usize {
        self.log_posterior.len()
    }

    /// Number of post-burn-in draws.
    pub fn kept(&self) -> usize {
        self.iterations() - self.burn_in
    }

    pub fn column(&self, name: ParamName) -> Option<&[f64]> {
        let k = self.names.iter().position(|&n| n == name)?;
        Some(&self.draws[k][self.burn_in..])
    }

    /// Full parameter set at iteration index `i` (0-based, burn-in included).
    pub fn params_at(&self, i: usize) -> Params {
        let mut p = self.base;
        for (k, &n) in self.names.iter().enumerate() {
            p.set(n, self.draws[k][i]);
        }
        p
    }

    /// `n` post-burn-in draws chosen uniformly at random, without
    /// replacement when the chain is long enough.
    pub fn sample_draws<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Params> {
        let kept = self.kept();
        if kept == 0 {
            return Vec::new();
        }
        let picks: Vec<usize> = if n <= kept {
            index::sample(rng, kept, n).into_vec()
        } else {
            (0..n).map(|_| rng.random_range(0..kept)).collect()
        };
        picks
            .into_iter()
            .map(|i| self.params_at(self.burn_in + i))
            .collect()
    }

    /// At most `max` post-burn-in draws at evenly spaced iterations.
    pub fn thinned(&self, max: usize) -> Vec<Params> {
        let kept = self.kept();
        let take = kept.min(max.max(1));
        (0..take)
            .map(|j| self.params_at(self.burn_in + j * kept / take))
            .collect()
    }

    /// Posterior medians of the free parameters on top of the fixed values.
    pub fn medians(&self) -> Params {
        let mut p = self.base;
        for &n in &self.names {
            p.set(n, median(self.column(n).unwrap()));
        }
        p
    }

    pub fn geweke(&self, first_frac: f64, last_frac: f64) -> Result<Vec<Geweke>, InferenceError> {
        self.names
            .iter()
            .map(|&n| geweke(self.column(n).unwrap(), first_frac, last_frac))
            .collect()
    }

    /// Medians, `mass` HPDIs, acceptance rates and Geweke scores.
    pub fn summary(&self, mass: f64) -> Result<Vec<ParamSummary>, InferenceError> {
        self.names
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let xs = self.column(n).unwrap();
                let m = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / m;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
                let (lower, upper) = hpdi(xs, mass)?;
                let geweke = if xs.len() >= 100 {
                    geweke(xs, 0.1, 0.5)?
                } else {
                    Geweke::Stuck
                };
                Ok(ParamSummary {
                    name: n,
                    median: median(xs),
                    mean,
                    sd: var.sqrt(),
                    lower,
                    upper,
                    acceptance: self.acceptance[k],
                    geweke,
                })
            })
            .collect()
    }

    /// Writes `iteration,<free parameters>,logpost`, one row per iteration.
    pub fn write_chain_csv(&self, path: &Path) -> Result<(), std::io::Error> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["iteration".to_string()];
        header.extend(self.names.iter().map(|n| n.to_string()));
        header.push("logpost".into());
        w.write_record(&header)?;
        for i in 0..self.iterations() {
            let mut row = vec![(i + 1).to_string()];
            row.extend(self.draws.iter().map(|c| fmt_f64(c[i])));
            row.push(fmt_f64(self.log_posterior[i]));
            w.write_record(&row)?;
        }
        w.flush()
    }

    /// Reads a chain written by [`write_chain_csv`](Self::write_chain_csv).
    pub fn read_chain_csv(
        path: &Path,
        base: Params,
        burn_in: usize,
    ) -> Result<Self, InferenceError> {
        let err = |message: String| InferenceError::Chain {
            path: path.display().to_string(),
            message,
        };
        let mut r = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
        let header = r.headers().map_err(|e| err(e.to_string()))?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 3 || cols[0] != "iteration" || cols[cols.len() - 1] != "logpost" {
            return Err(err(
                "expected header `iteration,<parameters>,logpost`".into()
            ));
        }
        let names = cols[1..cols.len() - 1]
            .iter()
            .map(|s| s.parse::<ParamName>().map_err(|e| err(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let mut draws = vec![Vec::new(); names.len()];
        let mut log_posterior = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            let num = |k: usize| {
                rec.get(k)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| err(format!("line {}: bad value in column {}", line + 2, k + 1)))
            };
            for (k, col) in draws.iter_mut().enumerate() {
                col.push(num(k + 1)?);
            }
            log_posterior.push(num(names.len() + 1)?);
        }
        if burn_in >= log_posterior.len() {
            return Err(err(format!(
                "burn-in {burn_in} leaves no draws from {} rows",
                log_posterior.len()
            )));
        }
        let k = names.len();
        Ok(Self {
            names,
            base,
            draws,
            log_posterior,
            burn_in,
            acceptance: vec![f64::NAN; k],
            steps: vec![f64::NAN; k],
            warnings: Vec::new(),
        })
    }
}

/// Writes `parameter,median,mean,sd,hpdi_lower,hpdi_upper,acceptance,geweke_z`.
pub fn write_summary_csv(summary: &[ParamSummary], path: &Path) -> Result<(), std::io::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "parameter",
        "median",
        "mean",
        "sd",
        "hpdi_lower",
        "hpdi_upper",
        "acceptance",
        "geweke_z",
    ])?;
    for s in summary {
        w.write_record([
            s.name.to_string(),
            fmt_f64(s.median),
            fmt_f64(s.mean),
            fmt_f64(s.sd),
            fmt_f64(s.lower),
            fmt_f64(s.upper),
            fmt_f64(s.acceptance),
            s.geweke.z().map(fmt_f64).unwrap_or_else(|| "stuck".into()),
        ])?;
    }
    w.flush()
}

/// Checks that `priors` name exactly the parameters to estimate.
fn free_parameters(spec: &ModelSpec, priors: &PriorSet) -> Result<Vec<ParamName>, InferenceError> {
    let names = spec.parameter_names();
    for &p in priors.keys() {
        if p == ParamName::Epsilon {
            return Err(InferenceError::Config("epsilon can only be fixed".into()));
        }
        if !names.contains(&p) {
            return Err(InferenceError::Config(format!(
                "model {} has no parameter '{p}'",
                spec.label()
            )));
        }
    }
    if priors.is_empty() {
        return Err(InferenceError::Config("no free parameters to fit".into()));
    }
    Ok(names
        .into_iter()
        .filter(|p| priors.contains_key(p))
        .collect())
}

/// Fits `spec` to one epidemic. Parameters without a prior are held at
/// their values in `fixed`.
pub fn fit(
    spec: &ModelSpec,
    pop: &Population,
    history: &EpidemicHistory,
    priors: &PriorSet,
    fixed: &Params,
    config: &McmcConfig,
) -> Result<PosteriorSample, InferenceError> {
    let data = LikelihoodData::new(spec, pop, history)?;
    fit_data(spec, &data, priors, fixed, config)
}

/// [`fit`] on precomputed likelihood data.
pub fn fit_data(
    spec: &ModelSpec,
    data: &LikelihoodData,
    priors: &PriorSet,
    fixed: &Params,
    config: &McmcConfig,
) -> Result<PosteriorSample, InferenceError> {
    config.validate()?;
    let names = free_parameters(spec, priors)?;
    let priors: Vec<Prior> = names.iter().map(|n| priors[n]).collect();

    let mut x: Vec<f64> = names
        .iter()
        .zip(&priors)
        .map(|(n, p)| {
            config
                .initial_values
                .get(n)
                .copied()
                .unwrap_or_else(|| p.median())
        })
        .collect();
    let mut current = *fixed;
    for (&n, &v) in names.iter().zip(&x) {
        current.set(n, v);
    }
    for (k, &n) in names.iter().enumerate() {
        if !priors[k].in_support(x[k]) || !spec.in_support(n, x[k]) {
            return Err(InferenceError::Initialization(format!(
                "initial {n} = {} is outside its support; adjust the initial values",
                x[k]
            )));
        }
    }
    check_support(spec, &current)
        .map_err(|e| InferenceError::Initialization(format!("{e}; adjust the fixed values")))?;

    let mut ev = LikelihoodEvaluator::new(data);
    let log_prior = |x: &[f64]| {
        x.iter()
            .zip(&priors)
            .map(|(v, p)| p.ln_pdf(*v))
            .sum::<f64>()
    };
    let mut lp = ev.evaluate(&current)? + log_prior(&x);
    ev.accept();
    if lp == f64::NEG_INFINITY || lp.is_nan() {
        return Err(InferenceError::Initialization(format!(
            "log-posterior is {lp} at {}; adjust the initial values",
            names
                .iter()
                .zip(&x)
                .map(|(n, v)| format!("{n}={v}"))
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }

    let steps = names
        .iter()
        .zip(&priors)
        .zip(&x)
        .map(|((n, p), &v)| {
            config
                .initial_steps
                .get(n)
                .copied()
                .unwrap_or_else(|| (0.1 * v.abs()).min(p.spread()).max(1e-6))
        })
        .collect();
    let mut stepper = Stepper::new(steps, config.target_acceptance);
    let mut rng = replicate_rng(config.seed, 0);
    let mut draws = vec![Vec::with_capacity(config.iterations); names.len()];
    let mut log_posterior = Vec::with_capacity(config.iterations);

    for it in 1..=config.iterations {
        for k in 0..names.len() {
            let v = stepper.propose(k, x[k], &mut rng);
            let accepted = if priors[k].in_support(v) && spec.in_support(names[k], v) {
                let old = x[k];
                x[k] = v;
                let proposal = current.with(names[k], v);
                let lp_new = ev.evaluate(&proposal)? + log_prior(&x);
                let u: f64 = rng.random();
                if u.ln() < lp_new - lp {
                    ev.accept();
                    current = proposal;
                    lp = lp_new;
                    true
                } else {
                    x[k] = old;
                    false
                }
            } else {
                false
            };
            if it > config.burn_in {
                stepper.record(k, accepted, None);
            } else if config.adapt {
                stepper.record(k, accepted, Some(it));
            }
        }
        for (col, &v) in draws.iter_mut().zip(&x) {
            col.push(v);
        }
        log_posterior.push(lp);
    }

    let acceptance = stepper.acceptance();
    let warnings = names
        .iter()
        .zip(&acceptance)
        .filter(|(_, &a)| !(0.15..=0.7).contains(&a))
        .map(|(n, a)| format!("acceptance rate for {n} is {a:.3}, outside [0.15, 0.7]"))
        .collect();
    Ok(PosteriorSample {
        names,
        base: *fixed,
        draws,
        log_posterior,
        burn_in: config.burn_in,
        acceptance,
        steps: stepper.steps(),
        warnings,
    })
}
