//! Run configuration, read from TOML.
//!
//! One file describes the population source, the model, periods, the
//! simulation window and the sampler settings. Commands read only the
//! blocks they need. Relative paths are resolved against the directory of
//! the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bcilm::alarm::{AlarmFamily, AlarmSignal, AlarmSpec, ExternalSeries, SignalKind};
use bcilm::epidemic::{Framework, PeriodSpec};
use bcilm::inference::{default_priors, McmcConfig, Prior, PriorSet};
use bcilm::model::{Form, ModelSpec, ParamName, Params, Susceptibility};
use bcilm::population::{generate_population_with, load_population, Population};
use bcilm::screening::SpikeSlabConfig;
use bcilm::simulate::{SeedSelection, SimulationConfig};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<PopulationSource>,
    /// Observed data for fit, screen, ppd, forecast and compare.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataBlock>,
    pub model: ModelBlock,
    #[serde(default)]
    pub periods: PeriodsBlock,
    #[serde(default)]
    pub simulation: SimulationBlock,
    #[serde(default)]
    pub mcmc: McmcBlock,
    #[serde(default)]
    pub screening: ScreeningBlock,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyBlock>,
}

/// Exactly one way of obtaining the population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationSource {
    /// Uniform positions over a rectangle, redrawn for every replicate.
    Generate {
        n: usize,
        x_range: [f64; 2],
        y_range: [f64; 2],
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<PathBuf>,
    /// Fit only the part of the epidemic before this time, as for forecasting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate_at: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    /// Shorthand such as `2A` or `Base`; sets form and alarm family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<Form>,
    #[serde(default)]
    pub framework: Framework,
    #[serde(default = "one")]
    pub kernel_offset: f64,
    #[serde(default)]
    pub susceptibility: Susceptibility,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alarm: Option<AlarmBlock>,
    /// Parameter values: the truth for `simulate`, fixed values otherwise.
    #[serde(default)]
    pub params: BTreeMap<ParamName, f64>,
    /// Parameters to estimate; all model parameters except `epsilon` by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free: Option<Vec<ParamName>>,
    /// Prior overrides; the remaining free parameters get the defaults.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub priors: BTreeMap<ParamName, Prior>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlarmBlock {
    pub family: AlarmFamily,
    #[serde(default)]
    pub signal: SignalKind,
    /// `t,value` CSV for an external signal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<u32>,
    #[serde(default)]
    pub presmoothed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodsBlock {
    pub infectious: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposed: Option<u32>,
}

impl Default for PeriodsBlock {
    fn default() -> Self {
        Self {
            infectious: 3,
            exposed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationBlock {
    pub replicates: usize,
    pub t_min: i64,
    pub t_max: i64,
    pub n_seeds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<usize>>,
}

impl Default for SimulationBlock {
    fn default() -> Self {
        Self {
            replicates: 1,
            t_min: 1,
            t_max: 31,
            n_seeds: 3,
            seeds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcBlock {
    pub iterations: usize,
    pub burn_in: usize,
    pub target_acceptance: f64,
    pub adapt: bool,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub initial_values: BTreeMap<ParamName, f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub initial_steps: BTreeMap<ParamName, f64>,
}

impl Default for McmcBlock {
    fn default() -> Self {
        Self {
            iterations: 25_000,
            burn_in: 2_500,
            target_acceptance: 0.44,
            adapt: true,
            initial_values: BTreeMap::new(),
            initial_steps: BTreeMap::new(),
        }
    }
}

/// Spike-and-slab settings; slab priors come from the model block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreeningBlock {
    pub inclusion: bcilm::screening::Inclusion,
    pub iterations: usize,
    pub final_iterations: usize,
    pub final_burn_in: f64,
    pub warm_up: f64,
    pub threshold: f64,
}

impl Default for ScreeningBlock {
    fn default() -> Self {
        let d = SpikeSlabConfig::default();
        Self {
            inclusion: d.inclusion,
            iterations: d.iterations,
            final_iterations: d.final_iterations,
            final_burn_in: d.final_burn_in,
            warm_up: d.warm_up,
            threshold: d.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisBlock {
    pub n_draws: usize,
    pub mass: f64,
    pub t_cut: i64,
    pub horizon: i64,
    pub waic_draws: usize,
}

impl Default for AnalysisBlock {
    fn default() -> Self {
        Self {
            n_draws: 100,
            mass: 0.95,
            t_cut: 8,
            horizon: 21,
            waic_draws: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMode {
    /// Fit every listed model and compare by WAIC.
    Waic,
    /// Spike-and-slab screening of each dataset.
    Screen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyBlock {
    pub mode: StudyMode,
    pub replicates: usize,
    /// Models fitted to every dataset in WAIC mode, by label.
    #[serde(default)]
    pub fitted: Vec<String>,
    pub scenarios: Vec<Scenario>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Generating model, by label.
    pub truth: String,
    pub params: BTreeMap<ParamName, f64>,
    /// Model screened in screen mode; defaults to the generating model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen_with: Option<String>,
}

impl RunConfig {
    /// Reads and validates a config, resolving relative paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(PopulationSource::File { path }) = &mut self.population {
            fix(path);
        }
        if let Some(d) = &mut self.data {
            d.population.as_mut().map(fix);
            d.events.as_mut().map(fix);
        }
        if let Some(a) = &mut self.model.alarm {
            a.series.as_mut().map(fix);
        }
        if let Some(o) = &mut self.output {
            fix(o);
        }
    }

    /// Canonical TOML text; its hash identifies the run.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn periods(&self) -> PeriodSpec {
        match self.periods.exposed {
            Some(e) => PeriodSpec::seir(e, self.periods.infectious),
            None => PeriodSpec::sir(self.periods.infectious),
        }
    }

    pub fn simulation(&self, rng_seed: u64) -> SimulationConfig {
        let s = &self.simulation;
        SimulationConfig {
            t_min: s.t_min,
            t_max: s.t_max,
            n_seeds: s.n_seeds,
            seeds: match &s.seeds {
                Some(ids) => SeedSelection::Explicit(ids.clone()),
                None => SeedSelection::Random,
            },
            rng_seed,
            periods: self.periods(),
        }
    }

    pub fn mcmc(&self, seed: u64) -> McmcConfig {
        let m = &self.mcmc;
        let mut c = McmcConfig::new(m.iterations, m.burn_in, seed);
        c.target_acceptance = m.target_acceptance;
        c.adapt = m.adapt;
        c.initial_values = m.initial_values.clone();
        c.initial_steps = m.initial_steps.clone();
        c
    }

    pub fn screening(&self, seed: u64, priors: PriorSet) -> SpikeSlabConfig {
        let s = &self.screening;
        SpikeSlabConfig {
            priors,
            inclusion: s.inclusion,
            iterations: s.iterations,
            final_iterations: s.final_iterations,
            final_burn_in: s.final_burn_in,
            warm_up: s.warm_up,
            threshold: s.threshold,
            seed,
            target_acceptance: self.mcmc.target_acceptance,
            initial_values: self.mcmc.initial_values.clone(),
        }
    }

    /// Path of an observed-data file, from a flag or the `[data]` block.
    pub fn data_path(&self, flag: Option<&Path>, which: &str) -> Result<PathBuf, CliError> {
        if let Some(p) = flag {
            return Ok(p.to_path_buf());
        }
        let from_block = self.data.as_ref().and_then(|d| match which {
            "population" => d.population.clone(),
            _ => d.events.clone(),
        });
        let from_source = match (&self.population, which) {
            (Some(PopulationSource::File { path }), "population") => Some(path.clone()),
            _ => None,
        };
        from_block.or(from_source).ok_or_else(|| {
            CliError::Config(format!(
                "no {which} file: pass --{which} or set data.{which} in the config"
            ))
        })
    }
}

/// Draws or loads one population.
pub fn make_population(
    source: &PopulationSource,
    rng: &mut ChaCha8Rng,
) -> Result<Population, bcilm::population::PopulationError> {
    match source {
        PopulationSource::Generate {
            n,
            x_range,
            y_range,
        } => generate_population_with(*n, (x_range[0], x_range[1]), (y_range[0], y_range[1]), rng),
        PopulationSource::File { path } => load_population(path),
    }
}

impl ModelBlock {
    pub fn spec(&self) -> Result<ModelSpec, CliError> {
        let mut spec = match (&self.label, self.form, &self.alarm) {
            (Some(label), None, None) => ModelSpec::from_label(label)?,
            (Some(_), _, _) => {
                return Err(CliError::Config(
                    "model.label cannot be combined with model.form or model.alarm".into(),
                ))
            }
            (None, form, alarm) => {
                let form = form.unwrap_or_default();
                match alarm {
                    None => ModelSpec {
                        form,
                        ..ModelSpec::baseline()
                    },
                    Some(a) => {
                        let signal = match a.signal {
                            SignalKind::PrevalenceCount => AlarmSignal::count(),
                            SignalKind::PrevalenceProportion => AlarmSignal::proportion(),
                            SignalKind::External => {
                                let path = a.series.as_ref().ok_or_else(|| {
                                    CliError::Config(
                                        "an external alarm signal needs model.alarm.series".into(),
                                    )
                                })?;
                                let series = ExternalSeries::load(path)
                                    .map_err(|e| CliError::Config(e.to_string()))?;
                                AlarmSignal::external(series, a.window, a.presmoothed)
                            }
                        };
                        ModelSpec::with_alarm(form, AlarmSpec::new(a.family, signal)?)
                    }
                }
            }
        };
        spec.framework = self.framework;
        spec.kernel_offset = self.kernel_offset;
        spec.susceptibility = self.susceptibility.clone();
        spec.validate()?;
        Ok(spec)
    }

    /// Parameter values with `epsilon` defaulting to zero.
    pub fn params(&self) -> Params {
        let mut p = Params::default();
        for (&k, &v) in &self.params {
            p.set(k, v);
        }
        p
    }

    pub fn free(&self, spec: &ModelSpec) -> Vec<ParamName> {
        match &self.free {
            Some(f) => f.clone(),
            None => spec
                .parameter_names()
                .into_iter()
                .filter(|&p| p != ParamName::Epsilon)
                .collect(),
        }
    }

    /// Priors for the free parameters. Every free parameter needs one and
    /// every fixed parameter needs a value.
    pub fn priors(&self, spec: &ModelSpec) -> Result<PriorSet, CliError> {
        let names = spec.parameter_names();
        let free = self.free(spec);
        for p in free
            .iter()
            .chain(self.priors.keys())
            .chain(self.params.keys())
        {
            if !names.contains(p) {
                return Err(CliError::Config(format!(
                    "parameter {p} is not part of model {}",
                    spec.label()
                )));
            }
        }
        let defaults = default_priors(spec);
        let mut set = PriorSet::new();
        for &p in &free {
            let prior = self.priors.get(&p).or_else(|| defaults.get(&p)).copied();
            match prior {
                Some(prior) => {
                    set.insert(p, prior);
                }
                None => return Err(CliError::Config(format!("free parameter {p} has no prior"))),
            }
        }
        for &p in &names {
            if !free.contains(&p) && p != ParamName::Epsilon && !self.params.contains_key(&p) {
                return Err(CliError::Config(format!(
                    "parameter {p} is neither free nor given a value in model.params"
                )));
            }
        }
        Ok(set)
    }

    /// Checks that every model parameter has a value, as simulation needs.
    pub fn require_values(&self, spec: &ModelSpec) -> Result<Params, CliError> {
        for p in spec.parameter_names() {
            if p != ParamName::Epsilon && !self.params.contains_key(&p) {
                return Err(CliError::Config(format!(
                    "simulation needs a value for {p} in model.params"
                )));
            }
        }
        let params = self.params();
        bcilm::model::check_support(spec, &params)?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 7
        [population]
        source = "generate"
        n = 50
        x_range = [0.0, 10.0]
        y_range = [0.0, 10.0]
        [model]
        form = "type_a"
        params = { alpha = 2.4, beta = 2.0, delta1 = 0.01 }
        [model.alarm]
        family = "exponential"
    "#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c: RunConfig = toml::from_str(MINIMAL).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.simulation, SimulationBlock::default());
        assert_eq!(c.mcmc.iterations, 25_000);
        let spec = c.model.spec().unwrap();
        assert_eq!(spec.label(), "2A");
        let priors = c.model.priors(&spec).unwrap();
        assert_eq!(
            priors.keys().copied().collect::<Vec<_>>(),
            vec![ParamName::Alpha, ParamName::Beta, ParamName::Delta1]
        );
        assert_eq!(
            c.model
                .require_values(&spec)
                .unwrap()
                .get(ParamName::Delta1),
            0.01
        );
    }

    #[test]
    fn canonical_text_round_trips() {
        let c: RunConfig = toml::from_str(MINIMAL).unwrap();
        let back: RunConfig = toml::from_str(&c.canonical()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn free_parameter_without_prior_is_rejected() {
        let mut c: RunConfig = toml::from_str(MINIMAL).unwrap();
        c.model.free = Some(vec![
            ParamName::Alpha,
            ParamName::Beta,
            ParamName::Delta1,
            ParamName::Epsilon,
        ]);
        let spec = c.model.spec().unwrap();
        let err = c.model.priors(&spec).unwrap_err().to_string();
        assert!(err.contains("epsilon has no prior"), "{err}");
    }

    #[test]
    fn fixed_parameter_needs_value() {
        let mut c: RunConfig = toml::from_str(MINIMAL).unwrap();
        c.model.free = Some(vec![ParamName::Alpha]);
        c.model.params.remove(&ParamName::Beta);
        let spec = c.model.spec().unwrap();
        assert!(c.model.priors(&spec).is_err());
    }

    #[test]
    fn unknown_keys_and_two_sources_are_rejected() {
        let bad = MINIMAL.replace("seed = 7", "seed = 7\nsede = 8");
        assert!(toml::from_str::<RunConfig>(&bad).is_err());
        let bad = MINIMAL.replace(
            "source = \"generate\"",
            "source = \"generate\"\npath = \"x.csv\"",
        );
        assert!(toml::from_str::<RunConfig>(&bad).is_err());
    }

    #[test]
    fn label_shorthand() {
        let text = MINIMAL
            .replace("form = \"type_a\"\n", "label = \"4B\"\n")
            .replace("[model.alarm]\n        family = \"exponential\"", "")
            .replace("delta1 = 0.01", "delta1 = 0.1, delta2 = 3.0");
        let c: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(c.model.spec().unwrap().label(), "4B");
        let both = MINIMAL.replace("form = \"type_a\"\n", "form = \"type_a\"\nlabel = \"2A\"\n");
        let c: RunConfig = toml::from_str(&both).unwrap();
        assert!(c.model.spec().is_err());
    }
}
