//! Forward simulation of discrete-time epidemics under any model form.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alarm::{AlarmError, SignalKind};
use crate::epidemic::{Compartment, EpidemicError, EpidemicHistory, PeriodSpec, TransitionTimes};
use crate::model::{
    check_support, covariate_values, form_terms, kernel_term, susceptibility, ModelError,
    ModelSpec, ParamName, Params,
};
use crate::population::{Population, PopulationError};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("invalid simulation settings: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Epidemic(#[from] EpidemicError),
    #[error(transparent)]
    Population(#[from] PopulationError),
}

impl From<AlarmError> for SimulateError {
    fn from(e: AlarmError) -> Self {
        Self::Model(e.into())
    }
}

/// Which individuals start the epidemic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSelection {
    #[default]
    Random,
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// First time point; seeds are infectious (or exposed) from here.
    pub t_min: i64,
    /// Last time point; infection events are simulated up to `t_max - 1`.
    pub t_max: i64,
    pub n_seeds: usize,
    pub seeds: SeedSelection,
    pub rng_seed: u64,
    pub periods: PeriodSpec,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            t_min: 1,
            t_max: 31,
            n_seeds: 3,
            seeds: SeedSelection::Random,
            rng_seed: 0,
            periods: PeriodSpec::sir(3),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self, spec: &ModelSpec) -> Result<(), SimulateError> {
        if self.t_max < self.t_min {
            return Err(SimulateError::Config(format!(
                "t_max {} precedes t_min {}",
                self.t_max, self.t_min
            )));
        }
        match &self.seeds {
            SeedSelection::Random if self.n_seeds == 0 => {
                return Err(SimulateError::Config(
                    "at least one seed is required".into(),
                ))
            }
            SeedSelection::Explicit(ids) if ids.is_empty() => {
                return Err(SimulateError::Config(
                    "at least one seed is required".into(),
                ))
            }
            _ => {}
        }
        self.periods.validate(spec.framework)?;
        Ok(())
    }
}

/// Where resimulation starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    /// From the observed seeds, over the whole window.
    FullEpidemic,
    /// From the observed state, keeping every infection event before `t_cut`.
    TruncatedAt(i64),
}

/// Independent RNG for replicate `k` of a run seeded with `master`.
pub fn replicate_rng(master: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(k);
    rng
}

/// Simulates one epidemic with the RNG derived from `config.rng_seed`.
pub fn simulate_epidemic(
    spec: &ModelSpec,
    params: &Params,
    pop: &Population,
    config: &SimulationConfig,
) -> Result<EpidemicHistory, SimulateError> {
    simulate_epidemic_with(
        spec,
        params,
        pop,
        config,
        &mut replicate_rng(config.rng_seed, 0),
    )
}

pub fn simulate_epidemic_with<R: Rng>(
    spec: &ModelSpec,
    params: &Params,
    pop: &Population,
    config: &SimulationConfig,
    rng: &mut R,
) -> Result<EpidemicHistory, SimulateError> {
    config.validate(spec)?;
    let n = pop.len();
    let seeds = match &config.seeds {
        SeedSelection::Random => {
            if config.n_seeds > n {
                return Err(SimulateError::Config(format!(
                    "{} seeds requested from {n} individuals",
                    config.n_seeds
                )));
            }
            let mut s = index::sample(rng, n, config.n_seeds).into_vec();
            s.sort_unstable();
            s
        }
        SeedSelection::Explicit(ids) => {
            if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
                return Err(SimulateError::Config(format!(
                    "seed {bad} is not in a population of {n}"
                )));
            }
            ids.clone()
        }
    };
    let mut transitions = vec![TransitionTimes::SUSCEPTIBLE; n];
    for &s in &seeds {
        transitions[s] = config
            .periods
            .transitions_for(spec.framework, s, config.t_min - 1);
    }
    run(
        spec,
        params,
        pop,
        &config.periods,
        transitions,
        config.t_min,
        config.t_min,
        config.t_max,
        rng,
    )
}

/// Simulates `m` populations and epidemics. Replicate `k` draws its
/// population and then its epidemic from [`replicate_rng`]`(config.rng_seed, k)`,
/// so results do not depend on scheduling.
pub fn simulate_batch<G>(
    spec: &ModelSpec,
    params: &Params,
    generate: G,
    config: &SimulationConfig,
    m: usize,
) -> Result<Vec<(Population, EpidemicHistory)>, SimulateError>
where
    G: Fn(&mut ChaCha8Rng) -> Result<Population, PopulationError> + Sync,
{
    (0..m)
        .into_par_iter()
        .map(|k| {
            let mut rng = replicate_rng(config.rng_seed, k as u64);
            let pop = generate(&mut rng)?;
            let h = simulate_epidemic_with(spec, params, &pop, config, &mut rng)?;
            Ok((pop, h))
        })
        .collect()
}

/// Simulates one epidemic per parameter draw, continuing from `observed`.
///
/// With [`Start::FullEpidemic`] the observed seeds restart the epidemic over
/// `observed`'s window. With [`Start::TruncatedAt`] every infection event
/// before `t_cut` is kept and events from `t_cut` to `horizon - 1` are
/// simulated. Draw `k` uses [`replicate_rng`]`(rng_seed, k)`.
#[allow(clippy::too_many_arguments)]
pub fn resimulate(
    spec: &ModelSpec,
    pop: &Population,
    observed: &EpidemicHistory,
    periods: &PeriodSpec,
    draws: &[Params],
    start: Start,
    horizon: i64,
    rng_seed: u64,
) -> Result<Vec<EpidemicHistory>, SimulateError> {
    let t_min = observed.t_min();
    let (initial, t_start) = match start {
        Start::FullEpidemic => {
            let mut tr = vec![TransitionTimes::SUSCEPTIBLE; observed.len()];
            for s in observed.seeds() {
                tr[s] = observed.transitions()[s];
            }
            (tr, t_min)
        }
        Start::TruncatedAt(t_cut) => {
            if t_cut <= t_min || t_cut > observed.t_max() {
                return Err(SimulateError::Epidemic(EpidemicError::OutOfWindow {
                    t: t_cut,
                    t_min: t_min + 1,
                    t_max: observed.t_max(),
                }));
            }
            (observed.truncated(t_cut)?.transitions().to_vec(), t_cut)
        }
    };
    if horizon < t_start {
        return Err(SimulateError::Config(format!(
            "horizon {horizon} precedes the simulation start {t_start}"
        )));
    }
    periods.validate(spec.framework)?;
    draws
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let mut rng = replicate_rng(rng_seed, k as u64);
            run(
                spec,
                p,
                pop,
                periods,
                initial.clone(),
                t_min,
                t_start,
                horizon,
                &mut rng,
            )
        })
        .collect()
}

/// Core loop: simulates infection events at `t_start ..= t_end - 1` on top of
/// `transitions`, returning a history over `[t_min, t_end]`.
#[allow(clippy::too_many_arguments)]
fn run<R: Rng>(
    spec: &ModelSpec,
    params: &Params,
    pop: &Population,
    periods: &PeriodSpec,
    mut transitions: Vec<TransitionTimes>,
    t_min: i64,
    t_start: i64,
    t_end: i64,
    rng: &mut R,
) -> Result<EpidemicHistory, SimulateError> {
    spec.validate()?;
    check_support(spec, params)?;
    let n = pop.len();
    if transitions.len() != n {
        return Err(ModelError::SizeMismatch {
            pop: n,
            history: transitions.len(),
        }
        .into());
    }
    let fw = spec.framework;
    let covs = covariate_values(spec, pop)?;
    let alarm = match &spec.alarm {
        Some(a) => Some((
            a,
            a.function(params.get(ParamName::Delta1), params.get(ParamName::Delta2))?,
        )),
        None => None,
    };
    let external = match &spec.alarm {
        Some(a) if a.signal.kind == SignalKind::External => Some(
            a.signal
                .values_for(None, n, t_start..t_end)
                .map_err(|e| SimulateError::Config(format!("external alarm signal: {e}")))?,
        ),
        _ => None,
    };
    let eps = params.get(ParamName::Epsilon);
    let beta = params.get(ParamName::Beta);
    let infectious_count = |tr: &[TransitionTimes], t: i64| {
        tr.iter()
            .filter(|x| x.state_at(fw, t) == Compartment::Infectious)
            .count()
    };

    for t in t_start..t_end {
        let a = match &alarm {
            None => 0.0,
            Some((spec_alarm, f)) => {
                let s = match &external {
                    Some(vals) => vals[(t - t_start) as usize],
                    None => spec_alarm
                        .signal
                        .scale(infectious_count(&transitions, (t - 1).max(t_min)), n),
                };
                f.value(s)?
            }
        };
        let (mult, exponent) = form_terms(spec.form, beta, a);
        let infectious: Vec<usize> = (0..n)
            .filter(|&j| transitions[j].state_at(fw, t) == Compartment::Infectious)
            .collect();
        if infectious.is_empty() && eps == 0.0 {
            continue;
        }
        let mut newly = Vec::new();
        for (i, tr) in transitions.iter().enumerate() {
            if tr.state_at(fw, t) != Compartment::Susceptible || tr.last_susceptible(fw) == Some(t)
            {
                continue;
            }
            let row = pop.distance_row(i);
            let pressure: f64 = infectious
                .iter()
                .map(|&j| kernel_term((row[j] + spec.kernel_offset).ln(), exponent))
                .sum();
            let h = susceptibility(params, covs.as_ref().map(|c| c[i])) * mult * pressure + eps;
            let p = -(-h).exp_m1();
            if rng.random::<f64>() < p {
                newly.push(i);
            }
        }
        for i in newly {
            // keep a pre-recorded removal (a cull) if it comes first
            let prior_removal = transitions[i].removal_time;
            let mut tr = periods.transitions_for(fw, i, t);
            if let (Some(r), Some(new_r)) = (prior_removal, tr.removal_time) {
                if r > t && r < new_r {
                    tr.removal_time = Some(r.max(tr.infection_time.unwrap() + 1));
                }
            }
            transitions[i] = tr;
        }
    }
    Ok(EpidemicHistory::new(fw, transitions, t_min, t_end)?)
}
