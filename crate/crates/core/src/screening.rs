//! Spike-and-slab screening for behavioural change.
//!
//! Alarm parameters are written `δ = z δ*` with a single indicator `z`
//! shared by every alarm parameter, so `z = 0` switches behavioural change
//! off exactly. Each sweep updates, in order:
//!
//! 1. `α` (or `α0, α1`) and `β` by adaptive random-walk Metropolis-Hastings;
//! 2. each `δ*_j` by an independence proposal drawn from its slab prior;
//! 3. `z` by a Metropolised flip against its conditional given `δ*` and `π`;
//! 4. `π` from its Beta conditional, unless it is fixed.
//!
//! The inclusion probability is the mean of `z` after a warm-up.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alarm::AlarmFamily;
use crate::epidemic::EpidemicHistory;
use crate::inference::{
    default_priors, fit_data, median, InferenceError, McmcConfig, PosteriorSample, Prior, PriorSet,
    Stepper,
};
use crate::model::{LikelihoodData, LikelihoodEvaluator, ModelError, ModelSpec, ParamName, Params};
use crate::population::Population;
use crate::simulate::replicate_rng;

#[derive(Debug, Error)]
pub enum ScreeningError {
    #[error("screening is not available for {0}")]
    Unsupported(String),
    #[error("invalid screening settings: {0}")]
    Config(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Prior on the inclusion probability `π`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Inclusion {
    Fixed { pi: f64 },
    Beta { a: f64, b: f64 },
}

impl Default for Inclusion {
    fn default() -> Self {
        Inclusion::Beta { a: 5.0, b: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikeSlabConfig {
    /// Slab priors for the alarm parameters, plus priors for the
    /// susceptibility and spatial parameters. Missing entries take the
    /// defaults for the model.
    pub priors: PriorSet,
    pub inclusion: Inclusion,
    pub iterations: usize,
    pub final_iterations: usize,
    /// Fraction of the final fit discarded as burn-in.
    pub final_burn_in: f64,
    /// Fraction of screening iterations discarded before estimating the
    /// inclusion probability and medians.
    pub warm_up: f64,
    /// Behavioural change is selected when the inclusion probability exceeds this.
    pub threshold: f64,
    pub seed: u64,
    pub target_acceptance: f64,
    /// Starting values for the random-walk parameters; prior medians otherwise.
    pub initial_values: BTreeMap<ParamName, f64>,
}

impl Default for SpikeSlabConfig {
    fn default() -> Self {
        Self {
            priors: PriorSet::new(),
            inclusion: Inclusion::default(),
            iterations: 25_000,
            final_iterations: 75_000,
            final_burn_in: 0.1,
            warm_up: 0.2,
            threshold: 0.5,
            seed: 0,
            target_acceptance: 0.44,
            initial_values: BTreeMap::new(),
        }
    }
}

impl SpikeSlabConfig {
    pub fn validate(&self) -> Result<(), ScreeningError> {
        let bad = |m: String| Err(ScreeningError::Config(m));
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} must lie in (0, 1)", self.threshold));
        }
        if self.iterations < 1000 {
            return bad(format!(
                "{} screening iterations is below 1000",
                self.iterations
            ));
        }
        if !(0.0..1.0).contains(&self.warm_up) || !(0.0..1.0).contains(&self.final_burn_in) {
            return bad("warm-up and burn-in fractions must lie in [0, 1)".into());
        }
        match self.inclusion {
            Inclusion::Fixed { pi } if !(0.0..=1.0).contains(&pi) => {
                bad(format!("inclusion probability {pi} must lie in [0, 1]"))
            }
            Inclusion::Beta { a, b } if !(a > 0.0 && b > 0.0) => {
                bad(format!("Beta({a}, {b}) needs positive parameters"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelClass {
    Baseline,
    BehaviouralChange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningResult {
    /// Indicator value at every iteration.
    pub indicator: Vec<u8>,
    pub inclusion_probability: f64,
    pub selected: ModelClass,
    /// Medians after warm-up. Alarm parameters use the slab values from
    /// iterations with `z = 1`, so they stay inside the slab support.
    pub medians: Params,
    /// Random-walk and slab parameter chains, every iteration.
    pub chains: BTreeMap<ParamName, Vec<f64>>,
    pub pi: Vec<f64>,
    pub warm_up: usize,
    pub acceptance: BTreeMap<ParamName, f64>,
}

fn check_family(spec: &ModelSpec) -> Result<AlarmFamily, ScreeningError> {
    match spec.family() {
        None => Err(ScreeningError::Unsupported(
            "a model without an alarm function".into(),
        )),
        Some(f) if !f.has_exact_zero() => Err(ScreeningError::Unsupported(format!(
            "the {} alarm, which has no exact-zero representation",
            f.short_name()
        ))),
        Some(f) => Ok(f),
    }
}

fn resolve_priors(spec: &ModelSpec, given: &PriorSet) -> PriorSet {
    let mut p = default_priors(spec);
    for (k, v) in given {
        if p.contains_key(k) {
            p.insert(*k, *v);
        }
    }
    p
}

/// Runs the spike-and-slab sampler for a type A or B model.
pub fn screen(
    spec: &ModelSpec,
    pop: &Population,
    history: &EpidemicHistory,
    fixed: &Params,
    config: &SpikeSlabConfig,
) -> Result<ScreeningResult, ScreeningError> {
    check_family(spec)?;
    let data = LikelihoodData::new(spec, pop, history)?;
    screen_data(spec, &data, fixed, config)
}

pub fn screen_data(
    spec: &ModelSpec,
    data: &LikelihoodData,
    fixed: &Params,
    config: &SpikeSlabConfig,
) -> Result<ScreeningResult, ScreeningError> {
    check_family(spec)?;
    config.validate()?;
    let priors = resolve_priors(spec, &config.priors);
    let walk: Vec<ParamName> = priors.keys().copied().filter(|p| !p.is_alarm()).collect();
    let slab: Vec<ParamName> = priors.keys().copied().filter(|p| p.is_alarm()).collect();
    let walk_priors: Vec<Prior> = walk.iter().map(|p| priors[p]).collect();
    let slab_priors: Vec<Prior> = slab.iter().map(|p| priors[p]).collect();

    let mut x: Vec<f64> = walk
        .iter()
        .zip(&walk_priors)
        .map(|(n, p)| {
            config
                .initial_values
                .get(n)
                .copied()
                .unwrap_or_else(|| p.median())
        })
        .collect();
    let mut d_star: Vec<f64> = slab_priors.iter().map(Prior::median).collect();
    let mut pi = match config.inclusion {
        Inclusion::Fixed { pi } => pi,
        Inclusion::Beta { a, b } => a / (a + b),
    };
    let mut z: u8 = u8::from(pi > 0.0);

    let assemble = |x: &[f64], d: &[f64], z: u8| {
        let mut p = *fixed;
        for (&n, &v) in walk.iter().zip(x) {
            p.set(n, v);
        }
        for (&n, &v) in slab.iter().zip(d) {
            p.set(n, if z == 1 { v } else { 0.0 });
        }
        p
    };
    let log_prior = |x: &[f64]| {
        x.iter()
            .zip(&walk_priors)
            .map(|(v, p)| p.ln_pdf(*v))
            .sum::<f64>()
    };
    for (k, &n) in walk.iter().enumerate() {
        if !walk_priors[k].in_support(x[k]) || !spec.in_support(n, x[k]) {
            return Err(InferenceError::Initialization(format!(
                "initial {n} = {} is outside its support; adjust the initial values",
                x[k]
            ))
            .into());
        }
    }

    let mut ev = LikelihoodEvaluator::new(data);
    let mut ll = ev.evaluate(&assemble(&x, &d_star, z))?;
    ev.accept();
    if !(ll > f64::NEG_INFINITY) {
        return Err(InferenceError::Initialization(format!(
            "log-likelihood is {ll} at the starting values; adjust the initial values"
        ))
        .into());
    }

    let mut rng = replicate_rng(config.seed, 0);
    let steps = x
        .iter()
        .zip(&walk_priors)
        .map(|(&v, p)| (0.1 * v.abs()).min(p.spread()).max(1e-6))
        .collect();
    let mut stepper = Stepper::new(steps, config.target_acceptance);
    let n_iter = config.iterations;
    let warm_up = (config.warm_up * n_iter as f64).floor() as usize;
    let mut chains: Vec<Vec<f64>> = vec![Vec::with_capacity(n_iter); walk.len() + slab.len()];
    let mut indicator = Vec::with_capacity(n_iter);
    let mut pi_chain = Vec::with_capacity(n_iter);
    let mut slab_tried = vec![0u64; slab.len()];
    let mut slab_accepted = vec![0u64; slab.len()];

    for it in 1..=n_iter {
        // susceptibility and spatial parameters
        for k in 0..walk.len() {
            let v = stepper.propose(k, x[k], &mut rng);
            let accepted = if walk_priors[k].in_support(v) && spec.in_support(walk[k], v) {
                let old = x[k];
                let lp_old = log_prior(&x);
                x[k] = v;
                let ll_new = ev.evaluate(&assemble(&x, &d_star, z))?;
                let u: f64 = rng.random();
                if u.ln() < ll_new + log_prior(&x) - ll - lp_old {
                    ev.accept();
                    ll = ll_new;
                    true
                } else {
                    x[k] = old;
                    false
                }
            } else {
                false
            };
            stepper.record(k, accepted, (it <= warm_up).then_some(it));
        }
        // slab values: independence proposals from the prior, so the
        // acceptance ratio is the likelihood ratio alone
        for j in 0..slab.len() {
            let v = slab_priors[j].sample(&mut rng);
            if !spec.in_support(slab[j], v) {
                continue;
            }
            let old = d_star[j];
            d_star[j] = v;
            if z == 0 {
                // likelihood does not depend on δ*
                slab_accepted[j] += u64::from(it > warm_up);
            } else {
                let ll_new = ev.evaluate(&assemble(&x, &d_star, z))?;
                let u: f64 = rng.random();
                if u.ln() < ll_new - ll {
                    ev.accept();
                    ll = ll_new;
                    slab_accepted[j] += u64::from(it > warm_up);
                } else {
                    d_star[j] = old;
                }
            }
            slab_tried[j] += u64::from(it > warm_up);
        }
        // indicator flip
        let z_new = 1 - z;
        let prior_ratio = match z_new {
            1 => (pi / (1.0 - pi)).ln(),
            _ => ((1.0 - pi) / pi).ln(),
        };
        if prior_ratio > f64::NEG_INFINITY {
            let ll_new = ev.evaluate(&assemble(&x, &d_star, z_new))?;
            let u: f64 = rng.random();
            if u.ln() < ll_new - ll + prior_ratio {
                ev.accept();
                ll = ll_new;
                z = z_new;
            }
        }
        // inclusion probability
        if let Inclusion::Beta { a, b } = config.inclusion {
            let zf = f64::from(z);
            pi = rand_distr::Beta::new(a + zf, b + 1.0 - zf)
                .unwrap()
                .sample(&mut rng);
        }

        for (k, &v) in x.iter().enumerate() {
            chains[k].push(v);
        }
        for (j, &v) in d_star.iter().enumerate() {
            chains[walk.len() + j].push(v);
        }
        indicator.push(z);
        pi_chain.push(pi);
    }

    let kept = &indicator[warm_up..];
    let inclusion_probability = kept.iter().map(|&z| f64::from(z)).sum::<f64>() / kept.len() as f64;
    let selected = if inclusion_probability > config.threshold {
        ModelClass::BehaviouralChange
    } else {
        ModelClass::Baseline
    };

    let mut medians = *fixed;
    for (k, &n) in walk.iter().enumerate() {
        medians.set(n, median(&chains[k][warm_up..]));
    }
    for (j, &n) in slab.iter().enumerate() {
        let col = &chains[walk.len() + j];
        let included: Vec<f64> = (warm_up..n_iter)
            .filter(|&i| indicator[i] == 1)
            .map(|i| col[i])
            .collect();
        let m = if included.is_empty() {
            median(&col[warm_up..])
        } else {
            median(&included)
        };
        medians.set(n, m);
    }

    let mut acceptance = BTreeMap::new();
    for (&n, a) in walk.iter().zip(stepper.acceptance()) {
        acceptance.insert(n, a);
    }
    for (j, &n) in slab.iter().enumerate() {
        let a = if slab_tried[j] == 0 {
            0.0
        } else {
            slab_accepted[j] as f64 / slab_tried[j] as f64
        };
        acceptance.insert(n, a);
    }
    let chains = walk.iter().chain(&slab).copied().zip(chains).collect();
    Ok(ScreeningResult {
        indicator,
        inclusion_probability,
        selected,
        medians,
        chains,
        pi: pi_chain,
        warm_up,
        acceptance,
    })
}

/// Screens, then fits the selected class initialised at the screening
/// medians. Returns the fitted model alongside its chain.
pub fn screen_then_fit(
    spec: &ModelSpec,
    pop: &Population,
    history: &EpidemicHistory,
    fixed: &Params,
    config: &SpikeSlabConfig,
) -> Result<(ScreeningResult, ModelSpec, PosteriorSample), ScreeningError> {
    check_family(spec)?;
    let data = LikelihoodData::new(spec, pop, history)?;
    let result = screen_data(spec, &data, fixed, config)?;
    let chosen = match result.selected {
        ModelClass::Baseline => spec.to_baseline(),
        ModelClass::BehaviouralChange => spec.clone(),
    };
    let priors: PriorSet = resolve_priors(spec, &config.priors)
        .into_iter()
        .filter(|(p, _)| chosen.parameter_names().contains(p))
        .collect();
    let burn_in = (config.final_burn_in * config.final_iterations as f64).floor() as usize;
    let mut mcmc = McmcConfig::new(
        config.final_iterations,
        burn_in,
        config.seed.wrapping_add(1),
    );
    mcmc.target_acceptance = config.target_acceptance;
    for &p in priors.keys() {
        mcmc.initial_values.insert(p, result.medians.get(p));
    }
    let mut base = *fixed;
    let final_data;
    let data_ref = if chosen.alarm.is_none() {
        base.set(ParamName::Delta1, 0.0);
        base.set(ParamName::Delta2, 0.0);
        final_data = LikelihoodData::new(&chosen, pop, history)?;
        &final_data
    } else {
        &data
    };
    let posterior = fit_data(&chosen, data_ref, &priors, &base, &mcmc)?;
    Ok((result, chosen, posterior))
}
