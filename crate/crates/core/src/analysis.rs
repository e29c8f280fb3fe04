//! Posterior predictive epidemic curves, forecasts from a truncated
//! epidemic, and WAIC model comparison.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::epidemic::{EpidemicHistory, PeriodSpec};
use crate::inference::{hpdi, InferenceError, PosteriorSample};
use crate::model::{LikelihoodData, ModelError, ModelSpec, Params};
use crate::population::{fmt_f64, Population};
use crate::simulate::{replicate_rng, resimulate, SimulateError, Start};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pointwise summary of simulated epidemic curves. `times[k]` is the time
/// at which the `k`th count of new infections appears.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveBand {
    pub times: Vec<i64>,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
    pub n_draws: usize,
}

impl CurveBand {
    /// Summarises `curves` (one per draw, equal lengths) with the lower
    /// median and a `mass` highest density interval at each time.
    pub fn from_curves(
        times: Vec<i64>,
        curves: &[Vec<usize>],
        mass: f64,
    ) -> Result<Self, AnalysisError> {
        if curves.is_empty() {
            return Err(AnalysisError::Config("no curves to summarise".into()));
        }
        if curves.iter().any(|c| c.len() != times.len()) {
            return Err(AnalysisError::Config("curve lengths differ".into()));
        }
        let mut band = CurveBand {
            lower: Vec::with_capacity(times.len()),
            median: Vec::with_capacity(times.len()),
            upper: Vec::with_capacity(times.len()),
            n_draws: curves.len(),
            times,
        };
        for k in 0..band.times.len() {
            let mut col: Vec<f64> = curves.iter().map(|c| c[k] as f64).collect();
            col.sort_by(f64::total_cmp);
            // lower median keeps the summary an attainable count
            let mid = col[(col.len() - 1) / 2];
            let (lo, hi) = if col.len() == 1 {
                (mid, mid)
            } else {
                hpdi(&col, mass)?
            };
            band.lower.push(lo);
            band.median.push(mid);
            band.upper.push(hi);
        }
        Ok(band)
    }

    /// Fraction of `observed` counts inside the band, matched by time.
    pub fn coverage(&self, observed: &EpidemicHistory) -> f64 {
        let curve = observed.epidemic_curve();
        let mut inside = 0;
        let mut total = 0;
        for (k, &t) in self.times.iter().enumerate() {
            let idx = t - 1 - observed.t_min();
            if idx < 0 || idx as usize >= curve.len() {
                continue;
            }
            let v = curve[idx as usize] as f64;
            total += 1;
            if self.lower[k] <= v && v <= self.upper[k] {
                inside += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            inside as f64 / total as f64
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), std::io::Error> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "lower", "median", "upper"])?;
        for k in 0..self.times.len() {
            w.write_record([
                self.times[k].to_string(),
                fmt_f64(self.lower[k]),
                fmt_f64(self.median[k]),
                fmt_f64(self.upper[k]),
            ])?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSettings {
    pub n_draws: usize,
    pub mass: f64,
    pub seed: u64,
    pub periods: PeriodSpec,
}

impl Default for CurveSettings {
    fn default() -> Self {
        Self {
            n_draws: 100,
            mass: 0.95,
            seed: 0,
            periods: PeriodSpec::sir(3),
        }
    }
}

fn pick_draws(
    posterior: &PosteriorSample,
    settings: &CurveSettings,
) -> Result<Vec<Params>, AnalysisError> {
    if settings.n_draws == 0 {
        return Err(AnalysisError::Config(
            "at least one posterior draw is needed".into(),
        ));
    }
    if posterior.kept() == 0 {
        return Err(AnalysisError::Config(
            "the chain has no post-burn-in draws".into(),
        ));
    }
    let mut rng = replicate_rng(settings.seed, 0);
    Ok(posterior.sample_draws(settings.n_draws, &mut rng))
}

/// Posterior predictive band: whole epidemics resimulated from the observed
/// seeds under posterior draws, over the observed window.
pub fn ppd_curve(
    spec: &ModelSpec,
    pop: &Population,
    observed: &EpidemicHistory,
    posterior: &PosteriorSample,
    settings: &CurveSettings,
) -> Result<CurveBand, AnalysisError> {
    let draws = pick_draws(posterior, settings)?;
    let sims = resimulate(
        spec,
        pop,
        observed,
        &settings.periods,
        &draws,
        Start::FullEpidemic,
        observed.t_max(),
        settings.seed.wrapping_add(1),
    )?;
    let curves: Vec<Vec<usize>> = sims.iter().map(EpidemicHistory::epidemic_curve).collect();
    let times = (observed.t_min()..observed.t_max())
        .map(|t| t + 1)
        .collect();
    CurveBand::from_curves(times, &curves, settings.mass)
}

/// Forecast band: the observed epidemic up to `t_cut` is kept and the rest
/// is simulated to `horizon`. The band covers new infections appearing at
/// `t_cut + 1 ..= horizon`.
pub fn forecast_curve(
    spec: &ModelSpec,
    pop: &Population,
    observed: &EpidemicHistory,
    posterior: &PosteriorSample,
    t_cut: i64,
    horizon: i64,
    settings: &CurveSettings,
) -> Result<CurveBand, AnalysisError> {
    if horizon <= t_cut {
        return Err(AnalysisError::Config(format!(
            "forecast horizon {horizon} must exceed the truncation time {t_cut}"
        )));
    }
    let draws = pick_draws(posterior, settings)?;
    let sims = resimulate(
        spec,
        pop,
        observed,
        &settings.periods,
        &draws,
        Start::TruncatedAt(t_cut),
        horizon,
        settings.seed.wrapping_add(1),
    )?;
    let skip = (t_cut - observed.t_min()) as usize;
    let curves: Vec<Vec<usize>> = sims
        .iter()
        .map(|h| h.epidemic_curve()[skip..].to_vec())
        .collect();
    let times = (t_cut..horizon).map(|t| t + 1).collect();
    CurveBand::from_curves(times, &curves, settings.mass)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaicEntry {
    pub label: String,
    pub lppd: f64,
    pub p_waic: f64,
    pub waic: f64,
    pub n_draws: usize,
    pub n_points: usize,
}

/// Per-point running log-sum-exp and Welford variance over draws.
struct PointAccumulator {
    max: Vec<f64>,
    sum: Vec<f64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
    count: usize,
}

impl PointAccumulator {
    fn new(n: usize) -> Self {
        Self {
            max: vec![f64::NEG_INFINITY; n],
            sum: vec![0.0; n],
            mean: vec![0.0; n],
            m2: vec![0.0; n],
            count: 0,
        }
    }

    fn push(&mut self, terms: &[f64]) {
        self.count += 1;
        let c = self.count as f64;
        for (i, &x) in terms.iter().enumerate() {
            if x > self.max[i] {
                self.sum[i] = self.sum[i] * (self.max[i] - x).exp() + 1.0;
                self.max[i] = x;
            } else {
                self.sum[i] += (x - self.max[i]).exp();
            }
            let delta = x - self.mean[i];
            self.mean[i] += delta / c;
            self.m2[i] += delta * (x - self.mean[i]);
        }
    }
}

/// WAIC, `-2 (lppd - p_waic)`, from at most `max_draws` evenly thinned
/// post-burn-in draws. `p_waic` sums the sample variances of the pointwise
/// log-likelihood terms.
pub fn waic(
    spec: &ModelSpec,
    pop: &Population,
    observed: &EpidemicHistory,
    posterior: &PosteriorSample,
    max_draws: usize,
) -> Result<WaicEntry, AnalysisError> {
    let data = LikelihoodData::new(spec, pop, observed)?;
    waic_data(&spec.label(), &data, &posterior.thinned(max_draws))
}

pub fn waic_data(
    label: &str,
    data: &LikelihoodData,
    draws: &[Params],
) -> Result<WaicEntry, AnalysisError> {
    if draws.len() < 2 {
        return Err(AnalysisError::Config(format!(
            "WAIC needs at least two posterior draws, got {}",
            draws.len()
        )));
    }
    let mut acc = PointAccumulator::new(data.n_points());
    for chunk in draws.chunks(64) {
        let terms: Vec<Vec<f64>> = chunk
            .par_iter()
            .map(|p| data.pointwise_log_terms(p))
            .collect::<Result<_, _>>()?;
        for t in &terms {
            if t.iter().any(|x| !x.is_finite()) {
                return Err(AnalysisError::Config(
                    "a posterior draw gives the data zero likelihood".into(),
                ));
            }
            acc.push(t);
        }
    }
    let s = draws.len() as f64;
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    for i in 0..data.n_points() {
        lppd += acc.max[i] + (acc.sum[i] / s).ln();
        p_waic += acc.m2[i] / (s - 1.0);
    }
    Ok(WaicEntry {
        label: label.to_string(),
        lppd,
        p_waic,
        waic: -2.0 * (lppd - p_waic),
        n_draws: draws.len(),
        n_points: data.n_points(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaicReport {
    pub entries: Vec<WaicEntry>,
    /// `waic - min waic` for each entry.
    pub delta: Vec<f64>,
    pub best: usize,
}

impl WaicReport {
    pub fn new(entries: Vec<WaicEntry>) -> Result<Self, AnalysisError> {
        if entries.is_empty() {
            return Err(AnalysisError::Config("no models to compare".into()));
        }
        let best = (0..entries.len())
            .min_by(|&a, &b| entries[a].waic.total_cmp(&entries[b].waic))
            .unwrap();
        let delta = entries
            .iter()
            .map(|e| e.waic - entries[best].waic)
            .collect();
        Ok(Self {
            entries,
            delta,
            best,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), std::io::Error> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "model",
            "lppd",
            "p_waic",
            "waic",
            "delta_waic",
            "best",
            "draws",
        ])?;
        for (k, e) in self.entries.iter().enumerate() {
            w.write_record([
                e.label.clone(),
                fmt_f64(e.lppd),
                fmt_f64(e.p_waic),
                fmt_f64(e.waic),
                fmt_f64(self.delta[k]),
                (k == self.best).to_string(),
                e.n_draws.to_string(),
            ])?;
        }
        w.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alarm::{AlarmFamily, AlarmSignal, AlarmSpec};
    use crate::inference::{default_priors, fit, McmcConfig};
    use crate::model::{Form, ParamName};
    use crate::population::generate_population;
    use crate::simulate::{simulate_epidemic, SimulationConfig};

    fn data(seed: u64) -> (Population, EpidemicHistory) {
        let pop = generate_population(200, (0.0, 90.0), (0.0, 90.0), seed).unwrap();
        let cfg = SimulationConfig {
            rng_seed: seed,
            ..SimulationConfig::default()
        };
        let h = simulate_epidemic(
            &ModelSpec::baseline(),
            &Params::baseline(2.4, 2.0),
            &pop,
            &cfg,
        )
        .unwrap();
        (pop, h)
    }

    fn constant(values: &[f64], n: usize) -> PosteriorSample {
        PosteriorSample::constant(
            vec![ParamName::Alpha, ParamName::Beta],
            Params::default(),
            values,
            n,
        )
    }

    #[test]
    fn band_of_identical_curves_is_degenerate() {
        let curves = vec![vec![1, 4, 2]; 5];
        let b = CurveBand::from_curves(vec![2, 3, 4], &curves, 0.95).unwrap();
        assert_eq!(b.lower, vec![1.0, 4.0, 2.0]);
        assert_eq!(b.lower, b.upper);
        assert_eq!(b.median, b.upper);
        let one = CurveBand::from_curves(vec![2], &[vec![7]], 0.95).unwrap();
        assert_eq!((one.lower[0], one.median[0], one.upper[0]), (7.0, 7.0, 7.0));
    }

    #[test]
    fn band_median_is_lower_middle_value() {
        let curves: Vec<Vec<usize>> = [3, 1, 4, 2].iter().map(|&v| vec![v]).collect();
        let b = CurveBand::from_curves(vec![2], &curves, 0.5).unwrap();
        assert_eq!(b.median[0], 2.0);
        assert!(b.lower[0] <= b.median[0] && b.median[0] <= b.upper[0]);
    }

    #[test]
    fn ppd_band_is_ordered_and_sized() {
        let (pop, h) = data(1);
        let post = constant(&[2.4, 2.0], 50);
        let s = CurveSettings {
            n_draws: 40,
            ..CurveSettings::default()
        };
        let b = ppd_curve(&ModelSpec::baseline(), &pop, &h, &post, &s).unwrap();
        assert_eq!(b.times, (2..=31).collect::<Vec<_>>());
        assert_eq!(b.n_draws, 40);
        for k in 0..b.times.len() {
            assert!(b.lower[k] <= b.median[k] && b.median[k] <= b.upper[k]);
        }
        let again = ppd_curve(&ModelSpec::baseline(), &pop, &h, &post, &s).unwrap();
        assert_eq!(b, again);
        assert!(b.coverage(&h) > 0.5);
    }

    #[test]
    fn forecast_covers_only_the_future() {
        let (pop, h) = data(2);
        let post = constant(&[2.4, 2.0], 50);
        let s = CurveSettings {
            n_draws: 20,
            ..CurveSettings::default()
        };
        let b = forecast_curve(&ModelSpec::baseline(), &pop, &h, &post, 8, 21, &s).unwrap();
        assert_eq!(b.times, (9..=21).collect::<Vec<_>>());
        let err = forecast_curve(&ModelSpec::baseline(), &pop, &h, &post, 8, 8, &s);
        assert!(matches!(err, Err(AnalysisError::Config(_))));
    }

    #[test]
    fn band_csv_columns() {
        let b = CurveBand::from_curves(vec![2, 3], &[vec![1, 2], vec![3, 4]], 0.9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        b.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,lower,median,upper");
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn waic_of_point_mass_is_deviance() {
        let (pop, h) = data(3);
        let spec = ModelSpec::baseline();
        let post = constant(&[2.4, 2.0], 30);
        let w = waic(&spec, &pop, &h, &post, 1000).unwrap();
        let ll =
            crate::model::log_likelihood(&spec, &pop, &h, &Params::baseline(2.4, 2.0)).unwrap();
        assert_eq!(w.p_waic, 0.0);
        assert!((w.lppd - ll).abs() < 1e-9 * ll.abs());
        assert!((w.waic + 2.0 * ll).abs() < 1e-8 * ll.abs());
        assert_eq!(w.n_draws, 30);
    }

    #[test]
    fn waic_needs_two_draws() {
        let (pop, h) = data(4);
        let post = constant(&[2.4, 2.0], 1);
        assert!(waic(&ModelSpec::baseline(), &pop, &h, &post, 10).is_err());
    }

    #[test]
    fn waic_matches_direct_formula_and_ignores_draw_order() {
        let (pop, h) = data(5);
        let spec = ModelSpec::baseline();
        let mut mcmc = McmcConfig::new(1500, 500, 2);
        mcmc.initial_values.insert(ParamName::Alpha, 2.0);
        mcmc.initial_values.insert(ParamName::Beta, 2.0);
        let post = fit(
            &spec,
            &pop,
            &h,
            &default_priors(&spec),
            &Params::default(),
            &mcmc,
        )
        .unwrap();
        let lik = LikelihoodData::new(&spec, &pop, &h).unwrap();
        let draws = post.thinned(200);
        let w = waic_data("m", &lik, &draws).unwrap();

        let terms: Vec<Vec<f64>> = draws
            .iter()
            .map(|p| lik.pointwise_log_terms(p).unwrap())
            .collect();
        let s = draws.len() as f64;
        let (mut lppd, mut pw) = (0.0, 0.0);
        for i in 0..lik.n_points() {
            let col: Vec<f64> = terms.iter().map(|t| t[i]).collect();
            let m = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            lppd += m + (col.iter().map(|x| (x - m).exp()).sum::<f64>() / s).ln();
            let mean = col.iter().sum::<f64>() / s;
            pw += col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (s - 1.0);
        }
        assert!((w.lppd - lppd).abs() < 1e-8 * lppd.abs());
        assert!((w.p_waic - pw).abs() < 1e-8 * pw.max(1.0));
        assert!(w.p_waic > 0.0);

        let mut reversed = draws.clone();
        reversed.reverse();
        let r = waic_data("m", &lik, &reversed).unwrap();
        assert!((r.waic - w.waic).abs() < 1e-8 * w.waic.abs());
    }

    #[test]
    fn report_picks_smallest_waic() {
        let e = |label: &str, waic: f64| WaicEntry {
            label: label.into(),
            lppd: 0.0,
            p_waic: 0.0,
            waic,
            n_draws: 2,
            n_points: 1,
        };
        let r = WaicReport::new(vec![e("a", 10.0), e("b", 4.0), e("c", 7.5)]).unwrap();
        assert_eq!(r.best, 1);
        assert_eq!(r.delta, vec![6.0, 0.0, 3.5]);
        assert!(WaicReport::new(vec![]).is_err());
    }

    #[test]
    fn alarm_model_waic_runs_on_baseline_data() {
        let (pop, h) = data(6);
        let spec = ModelSpec::with_alarm(
            Form::TypeA,
            AlarmSpec::new(AlarmFamily::Exponential, AlarmSignal::count()).unwrap(),
        );
        let post = PosteriorSample::constant(
            vec![ParamName::Alpha, ParamName::Beta, ParamName::Delta1],
            Params::default(),
            &[2.4, 2.0, 0.01],
            10,
        );
        let w = waic(&spec, &pop, &h, &post, 1000).unwrap();
        assert!(w.waic.is_finite());
        assert_eq!(w.p_waic, 0.0);
    }
}
