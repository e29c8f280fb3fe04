//! Precomputed likelihood data and a caching evaluator for the MCMC hot loop.
//!
//! Per time step the data keeps the individuals that contribute a Bernoulli
//! term (newly infected, or still susceptible at `t + 1`) together with a
//! packed block of `ln(d_ij + offset)` against that step's infectious set.
//! Kernel sums depend on the parameters only through the step's kernel
//! exponent, so [`LikelihoodEvaluator`] recomputes them only for steps whose
//! exponent changed. Cached and fresh evaluations run the same arithmetic in
//! the same order and agree bit for bit.

use rayon::prelude::*;

use super::{
    covariate_values, form_terms, kernel_term, log_prob_infected, susceptibility, Form, ModelError,
    ModelSpec, ParamName, Params,
};
use crate::alarm::{AlarmFamily, AlarmFunction, SignalKind};
use crate::epidemic::{EpidemicHistory, Framework};
use crate::population::Population;

/// Below this many kernel evaluations per sweep, threading costs more than it saves.
const PARALLEL_MIN_WORK: usize = 200_000;

#[derive(Debug, Clone)]
struct Step {
    contributors: Vec<u32>,
    infected: Vec<bool>,
    n_infectious: usize,
    /// Row-major `contributors × infectious` block of log distances.
    log_dist: Vec<f64>,
}

impl Step {
    fn kernel_sums(&self, exponent: f64, out: &mut Vec<f64>) {
        out.clear();
        let m = self.n_infectious;
        if m == 0 {
            out.resize(self.contributors.len(), 0.0);
            return;
        }
        out.extend(self.log_dist.chunks_exact(m).map(|row| {
            let mut s = 0.0;
            for &l in row {
                s += kernel_term(l, exponent);
            }
            s
        }));
    }

    fn work(&self) -> usize {
        self.log_dist.len()
    }
}

/// Everything about one dataset that does not depend on parameter values.
#[derive(Debug, Clone)]
pub struct LikelihoodData {
    form: Form,
    family: Option<AlarmFamily>,
    t_min: i64,
    steps: Vec<Step>,
    signals: Vec<f64>,
    covariates: Option<Vec<f64>>,
    n_points: usize,
    total_work: usize,
}

impl LikelihoodData {
    pub fn new(
        spec: &ModelSpec,
        pop: &Population,
        history: &EpidemicHistory,
    ) -> Result<Self, ModelError> {
        spec.validate()?;
        if pop.len() != history.len() {
            return Err(ModelError::SizeMismatch {
                pop: pop.len(),
                history: history.len(),
            });
        }
        if spec.framework != history.framework() {
            return Err(ModelError::Spec(format!(
                "model framework {:?} does not match history framework {:?}",
                spec.framework,
                history.framework()
            )));
        }
        let covariates = covariate_values(spec, pop)?;
        let framework: Framework = history.framework();
        let (t_min, t_max) = (history.t_min(), history.t_max());

        let mut steps = Vec::with_capacity((t_max - t_min).max(0) as usize);
        for t in t_min..t_max {
            let infectious = history.infectious_at(t);
            let mut contributors = Vec::new();
            let mut infected = Vec::new();
            for (i, tr) in history.transitions().iter().enumerate() {
                // susceptible at t: still in S, or leaving S exactly now
                match tr.last_susceptible(framework) {
                    Some(last) if last < t => continue,
                    Some(last) if last == t => {
                        if tr.infection_event(framework) == Some(t) {
                            contributors.push(i as u32);
                            infected.push(true);
                        }
                        // removed without infection: no term
                    }
                    _ => {
                        contributors.push(i as u32);
                        infected.push(false);
                    }
                }
            }
            let mut log_dist = Vec::with_capacity(contributors.len() * infectious.len());
            for &i in &contributors {
                let row = pop.distance_row(i as usize);
                log_dist.extend(
                    infectious
                        .iter()
                        .map(|&j| (row[j] + spec.kernel_offset).ln()),
                );
            }
            steps.push(Step {
                contributors,
                infected,
                n_infectious: infectious.len(),
                log_dist,
            });
        }

        let signals = match &spec.alarm {
            Some(alarm) => {
                let s = alarm
                    .signal
                    .values_for(Some(history), pop.len(), t_min..t_max)?;
                if alarm.family == AlarmFamily::Hill
                    || alarm.signal.kind == SignalKind::PrevalenceProportion
                {
                    if let Some(&bad) = s.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
                        return Err(crate::alarm::AlarmError::Domain(bad).into());
                    }
                }
                if let Some(&bad) = s.iter().find(|&&v| !(v >= 0.0) || !v.is_finite()) {
                    return Err(crate::alarm::AlarmError::Domain(bad).into());
                }
                s
            }
            None => Vec::new(),
        };
        let n_points = steps.iter().map(|s| s.contributors.len()).sum();
        let total_work = steps.iter().map(Step::work).sum();
        Ok(Self {
            form: spec.form,
            family: spec.family(),
            t_min,
            steps,
            signals,
            covariates,
            n_points,
            total_work,
        })
    }

    /// Number of per-(i, t) Bernoulli terms.
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn t_min(&self) -> i64 {
        self.t_min
    }

    /// Alarm level for every likelihood step.
    pub fn alarm_levels(&self, params: &Params) -> Result<Vec<f64>, ModelError> {
        match self.family {
            None => Ok(vec![0.0; self.steps.len()]),
            Some(family) => {
                let f = AlarmFunction::new(
                    family,
                    params.get(ParamName::Delta1),
                    params.get(ParamName::Delta2),
                )?;
                self.signals
                    .iter()
                    .map(|&s| f.value(s).map_err(ModelError::from))
                    .collect()
            }
        }
    }

    /// `(susceptibility multiplier, kernel exponent)` per step.
    fn step_terms(&self, params: &Params) -> Result<Vec<(f64, f64)>, ModelError> {
        let beta = params.get(ParamName::Beta);
        Ok(self
            .alarm_levels(params)?
            .into_iter()
            .map(|a| form_terms(self.form, beta, a))
            .collect())
    }

    fn step_log_lik(&self, s: usize, mult: f64, sums: &[f64], params: &Params) -> f64 {
        let step = &self.steps[s];
        let eps = params.get(ParamName::Epsilon);
        let mut acc = 0.0;
        for (k, &i) in step.contributors.iter().enumerate() {
            let omega = susceptibility(params, self.covariates.as_ref().map(|c| c[i as usize]));
            let h = omega * mult * sums[k] + eps;
            acc += if step.infected[k] {
                log_prob_infected(h)
            } else {
                -h
            };
        }
        acc
    }

    fn step_points(&self, s: usize, mult: f64, sums: &[f64], params: &Params, out: &mut Vec<f64>) {
        let step = &self.steps[s];
        let eps = params.get(ParamName::Epsilon);
        for (k, &i) in step.contributors.iter().enumerate() {
            let omega = susceptibility(params, self.covariates.as_ref().map(|c| c[i as usize]));
            let h = omega * mult * sums[k] + eps;
            out.push(if step.infected[k] {
                log_prob_infected(h)
            } else {
                -h
            });
        }
    }

    /// Full evaluation without caching.
    pub fn log_likelihood(&self, params: &Params) -> Result<f64, ModelError> {
        let terms = self.step_terms(params)?;
        let mut sums = Vec::new();
        let mut total = 0.0;
        for (s, &(mult, exponent)) in terms.iter().enumerate() {
            self.steps[s].kernel_sums(exponent, &mut sums);
            total += self.step_log_lik(s, mult, &sums, params);
        }
        Ok(total)
    }

    /// Per-(i, t) log terms, ordered by time step then individual index.
    pub fn pointwise_log_terms(&self, params: &Params) -> Result<Vec<f64>, ModelError> {
        let terms = self.step_terms(params)?;
        let mut sums = Vec::new();
        let mut out = Vec::with_capacity(self.n_points);
        for (s, &(mult, exponent)) in terms.iter().enumerate() {
            self.steps[s].kernel_sums(exponent, &mut sums);
            self.step_points(s, mult, &sums, params, &mut out);
        }
        Ok(out)
    }
}

/// Stateful evaluator that reuses kernel sums between MCMC proposals.
///
/// Call [`evaluate`](Self::evaluate) for a proposal, then
/// [`accept`](Self::accept) if the chain moves; a rejected proposal needs no
/// clean-up.
#[derive(Debug, Clone)]
pub struct LikelihoodEvaluator<'a> {
    data: &'a LikelihoodData,
    current_exponent: Vec<f64>,
    current_sums: Vec<Vec<f64>>,
    proposed_exponent: Vec<f64>,
    proposed_sums: Vec<Vec<f64>>,
    fresh: Vec<bool>,
}

impl<'a> LikelihoodEvaluator<'a> {
    pub fn new(data: &'a LikelihoodData) -> Self {
        let n = data.steps.len();
        Self {
            data,
            current_exponent: vec![f64::NAN; n],
            current_sums: vec![Vec::new(); n],
            proposed_exponent: vec![f64::NAN; n],
            proposed_sums: vec![Vec::new(); n],
            fresh: vec![false; n],
        }
    }

    pub fn data(&self) -> &'a LikelihoodData {
        self.data
    }

    pub fn evaluate(&mut self, params: &Params) -> Result<f64, ModelError> {
        let terms = self.data.step_terms(params)?;
        let mut work = 0;
        for (s, &(_, exponent)) in terms.iter().enumerate() {
            let stale = self.current_exponent[s].to_bits() != exponent.to_bits();
            self.fresh[s] = stale;
            if stale {
                self.proposed_exponent[s] = exponent;
                work += self.data.steps[s].work();
            }
        }

        let steps = &self.data.steps;
        let fill = |(s, (sums, &fresh)): (usize, (&mut Vec<f64>, &bool))| {
            if fresh {
                steps[s].kernel_sums(terms[s].1, sums);
            }
        };
        if work >= PARALLEL_MIN_WORK && rayon::current_num_threads() > 1 {
            self.proposed_sums
                .par_iter_mut()
                .zip(self.fresh.par_iter())
                .enumerate()
                .for_each(fill);
        } else {
            self.proposed_sums
                .iter_mut()
                .zip(self.fresh.iter())
                .enumerate()
                .for_each(fill);
        }

        let mut total = 0.0;
        for (s, &(mult, _)) in terms.iter().enumerate() {
            let sums = if self.fresh[s] {
                &self.proposed_sums[s]
            } else {
                &self.current_sums[s]
            };
            total += self.data.step_log_lik(s, mult, sums, params);
        }
        Ok(total)
    }

    /// Makes the most recently evaluated parameters the current state.
    pub fn accept(&mut self) {
        for s in 0..self.fresh.len() {
            if self.fresh[s] {
                std::mem::swap(&mut self.current_sums[s], &mut self.proposed_sums[s]);
                self.current_exponent[s] = self.proposed_exponent[s];
                self.fresh[s] = false;
            }
        }
    }

    /// Total number of kernel terms in one full sweep.
    pub fn full_work(&self) -> usize {
        self.data.total_work
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alarm::{AlarmSignal, AlarmSpec};
    use crate::epidemic::{PeriodSpec, TransitionTimes};
    use crate::model::{log_likelihood, pointwise_log_terms};

    /// Four individuals on a line over t = 1..=4; 0 is a seed, 1 and 2 are
    /// infected at t = 1 and t = 2, 3 escapes.
    fn tiny() -> (Population, EpidemicHistory) {
        let pop = Population::from_coordinates(&[(0.0, 0.0), (1.0, 0.0), (3.0, 0.0), (7.0, 0.0)])
            .unwrap();
        let p = PeriodSpec::sir(2);
        let f = Framework::Sir;
        let h = EpidemicHistory::new(
            f,
            vec![
                p.transitions_for(f, 0, 0),
                p.transitions_for(f, 1, 1),
                p.transitions_for(f, 2, 2),
                TransitionTimes::SUSCEPTIBLE,
            ],
            1,
            4,
        )
        .unwrap();
        (pop, h)
    }

    /// Direct product of Bernoulli terms, written out by hand.
    fn hand_log_lik(alpha: f64, beta: f64) -> f64 {
        let k = |d: f64| (d + 1.0f64).powf(-beta);
        let p = |s: f64| 1.0 - (-alpha * s).exp();
        // t=1: I={0}; 1 infected, 2 and 3 stay susceptible
        let t1 = p(k(1.0)).ln() + (1.0 - p(k(3.0))).ln() + (1.0 - p(k(7.0))).ln();
        // t=2: I={0,1}; 2 infected, 3 stays
        let t2 = p(k(3.0) + k(2.0)).ln() + (1.0 - p(k(7.0) + k(6.0))).ln();
        // t=3: I={1,2}; 3 stays
        let t3 = (1.0 - p(k(6.0) + k(4.0))).ln();
        t1 + t2 + t3
    }

    #[test]
    fn matches_hand_enumeration() {
        let (pop, h) = tiny();
        let ll = log_likelihood(
            &ModelSpec::baseline(),
            &pop,
            &h,
            &Params::baseline(1.3, 1.7),
        )
        .unwrap();
        assert!((ll - hand_log_lik(1.3, 1.7)).abs() < 1e-12, "{ll}");
    }

    #[test]
    fn pointwise_terms_sum_to_log_likelihood() {
        let (pop, h) = tiny();
        let spec = ModelSpec::baseline();
        let params = Params::baseline(0.8, 2.0);
        let pts = pointwise_log_terms(&spec, &pop, &h, &params).unwrap();
        // |S(1)| = 3, |S(2)| = 2, |S(3)| = 1
        assert_eq!(pts.len(), 6);
        let ll = log_likelihood(&spec, &pop, &h, &params).unwrap();
        assert!((pts.iter().sum::<f64>() - ll).abs() < 1e-9);
    }

    #[test]
    fn no_transmission_gives_zero() {
        let pop = Population::from_coordinates(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]).unwrap();
        let h = EpidemicHistory::new(Framework::Sir, vec![TransitionTimes::SUSCEPTIBLE; 3], 1, 5)
            .unwrap();
        let ll = log_likelihood(
            &ModelSpec::baseline(),
            &pop,
            &h,
            &Params::baseline(2.0, 2.0),
        )
        .unwrap();
        assert_eq!(ll, 0.0);
    }

    #[test]
    fn impossible_infection_is_negative_infinity() {
        let pop = Population::from_coordinates(&[(0.0, 0.0), (1.0, 0.0)]).unwrap();
        let p = PeriodSpec::sir(1);
        // individual 1 infected at t=2 with nobody infectious at t=2
        let h = EpidemicHistory::new(
            Framework::Sir,
            vec![
                p.transitions_for(Framework::Sir, 0, 0),
                p.transitions_for(Framework::Sir, 1, 2),
            ],
            1,
            4,
        )
        .unwrap();
        let ll = log_likelihood(
            &ModelSpec::baseline(),
            &pop,
            &h,
            &Params::baseline(2.0, 2.0),
        )
        .unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn zero_delta_type_a_equals_baseline_bitwise() {
        let (pop, h) = tiny();
        let base = log_likelihood(
            &ModelSpec::baseline(),
            &pop,
            &h,
            &Params::baseline(1.1, 2.3),
        )
        .unwrap();
        for form in [Form::TypeA, Form::TypeB] {
            let spec = ModelSpec::with_alarm(
                form,
                AlarmSpec::new(AlarmFamily::Threshold, AlarmSignal::count()).unwrap(),
            );
            let ll = log_likelihood(&spec, &pop, &h, &Params::alarm(1.1, 2.3, 0.0, 0.5)).unwrap();
            assert_eq!(ll.to_bits(), base.to_bits());
        }
    }

    #[test]
    fn cached_evaluation_is_bitwise_identical() {
        let (pop, h) = tiny();
        let spec = ModelSpec::with_alarm(
            Form::TypeB,
            AlarmSpec::new(AlarmFamily::Threshold, AlarmSignal::count()).unwrap(),
        );
        let data = LikelihoodData::new(&spec, &pop, &h).unwrap();
        let mut ev = LikelihoodEvaluator::new(&data);
        let a = Params::alarm(1.0, 2.0, 0.3, 1.0);
        let b = Params::alarm(1.4, 2.0, 0.3, 1.0);
        let c = Params::alarm(1.4, 2.5, 0.6, 1.0);
        for p in [a, b, c, a] {
            let cached = ev.evaluate(&p).unwrap();
            assert_eq!(cached.to_bits(), data.log_likelihood(&p).unwrap().to_bits());
            ev.accept();
        }
        // reject path: evaluate without accepting, then go back
        ev.evaluate(&c).unwrap();
        assert_eq!(
            ev.evaluate(&a).unwrap().to_bits(),
            data.log_likelihood(&a).unwrap().to_bits()
        );
    }

    #[test]
    fn size_mismatch_is_reported() {
        let (_, h) = tiny();
        let pop = Population::from_coordinates(&[(0.0, 0.0)]).unwrap();
        assert!(matches!(
            LikelihoodData::new(&ModelSpec::baseline(), &pop, &h),
            Err(ModelError::SizeMismatch { .. })
        ));
    }
}
