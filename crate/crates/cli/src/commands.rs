//! One function per subcommand. Each writes its files through an
//! [`OutputDir`] and finishes with a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bcilm::analysis::{forecast_curve, ppd_curve, waic_data, CurveBand, CurveSettings, WaicReport};
use bcilm::epidemic::{load_events, EpidemicHistory};
use bcilm::inference::{fit_data, write_summary_csv, Geweke, PosteriorSample};
use bcilm::model::{Form, LikelihoodData, ModelSpec, ParamName};
use bcilm::population::{load_population, Population};
use bcilm::screening::{screen_data, ModelClass, ScreeningResult};
use bcilm::simulate::{replicate_rng, simulate_epidemic_with};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{make_population, DataBlock, RunConfig};
use crate::error::CliError;
use crate::manifest::{check_input, Manifest, OutputDir};
use crate::svg::band_plot;
use crate::{Cli, Command, CurveArgs};

pub const CONFIG_FILE: &str = "config.toml";
pub const CHAIN_FILE: &str = "chain.csv";

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate => simulate(cli),
        Command::Fit(a) => fit(cli, a.population.as_deref(), a.events.as_deref(), a.t_cut),
        Command::Screen(a) => screen(
            cli,
            a.population.as_deref(),
            a.events.as_deref(),
            a.then_fit,
        ),
        Command::Ppd(a) => curve(cli, a, None),
        Command::Forecast(a) => curve(cli, &a.curve, Some((a.t_cut, a.horizon))),
        Command::Compare(a) => compare(cli, &a.fits, a.population.as_deref(), a.events.as_deref()),
        Command::Study => crate::study::run(cli),
    }
}

/// The config named by `--config`, with `--seed` and `--out` applied.
pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs --config".into()))?;
    let mut cfg = RunConfig::load(path)?;
    apply_overrides(cli, &mut cfg);
    Ok(cfg)
}

fn apply_overrides(cli: &Cli, cfg: &mut RunConfig) {
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output = Some(o.clone());
    }
}

pub fn output_dir(cfg: &RunConfig) -> Result<OutputDir, CliError> {
    let root = cfg
        .output
        .as_ref()
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set output".into()))?;
    OutputDir::create(root)
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn simulate(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let spec = cfg.model.spec()?;
    let params = cfg.model.require_values(&spec)?;
    let source = cfg
        .population
        .clone()
        .ok_or_else(|| CliError::Config("simulate needs a [population] block".into()))?;
    let sim = cfg.simulation(cfg.seed);
    sim.validate(&spec)?;
    let m = cfg.simulation.replicates;
    if m == 0 {
        return Err(CliError::Config(
            "simulation.replicates must be at least 1".into(),
        ));
    }
    let mut out = output_dir(&cfg)?;
    let mut manifest = Manifest::new("simulate", &cfg);
    if let crate::config::PopulationSource::File { path } = &source {
        manifest.input("population", path)?;
    }

    let runs: Vec<(Population, EpidemicHistory)> = (0..m)
        .into_par_iter()
        .map(|k| {
            let mut rng = replicate_rng(cfg.seed, k as u64);
            let pop = make_population(&source, &mut rng)?;
            let h = simulate_epidemic_with(&spec, &params, &pop, &sim, &mut rng)?;
            Ok((pop, h))
        })
        .collect::<Result<_, CliError>>()?;

    let times: Vec<i64> = (sim.t_min..sim.t_max).map(|t| t + 1).collect();
    let mut curves = String::from("replicate");
    for t in &times {
        curves.push_str(&format!(",{t}"));
    }
    curves.push('\n');
    let mut sizes = String::from("replicate,final_size,final_size_without_seeds\n");
    for (k, (pop, h)) in runs.iter().enumerate() {
        let dir = format!("rep_{k:03}");
        pop.save(&out.file(&format!("{dir}/population.csv"))?)?;
        h.save_events(&out.file(&format!("{dir}/events.csv"))?)?;
        curves.push_str(&k.to_string());
        for c in h.epidemic_curve() {
            curves.push_str(&format!(",{c}"));
        }
        curves.push('\n');
        let size = h.final_size();
        sizes.push_str(&format!("{k},{size},{}\n", size - h.seeds().len()));
        manifest
            .seeds
            .insert(format!("replicate_{k:03}_stream"), k as u64);
    }
    out.write("curves.csv", &curves)?;
    out.write("sizes.csv", &sizes)?;
    out.write(CONFIG_FILE, &cfg.canonical())?;
    println!(
        "simulated {m} epidemic(s) from model {} into {}",
        spec.label(),
        out.root().display()
    );
    out.finish(manifest)
}

/// Loads the observed population and events named by flags or the config.
fn load_data(
    cfg: &RunConfig,
    spec: &ModelSpec,
    population: Option<&Path>,
    events: Option<&Path>,
) -> Result<(PathBuf, PathBuf, Population, EpidemicHistory), CliError> {
    let pop_path = cfg.data_path(population, "population")?;
    let ev_path = cfg.data_path(events, "events")?;
    let pop = load_population(&pop_path)?;
    let h = load_events(
        &ev_path,
        spec.framework,
        cfg.simulation.t_min,
        cfg.simulation.t_max,
    )?;
    if h.len() != pop.len() {
        return Err(CliError::Config(format!(
            "{} has {} individuals but {} has {}",
            pop_path.display(),
            pop.len(),
            ev_path.display(),
            h.len()
        )));
    }
    Ok((pop_path, ev_path, pop, h))
}

fn write_fit_outputs(
    out: &mut OutputDir,
    posterior: &PosteriorSample,
    mass: f64,
) -> Result<(), CliError> {
    let io = |p: &Path, e: std::io::Error| CliError::io(p, e);
    let chain = out.file(CHAIN_FILE)?;
    posterior
        .write_chain_csv(&chain)
        .map_err(|e| io(&chain, e))?;
    let summary = posterior.summary(mass)?;
    let path = out.file("summary.csv")?;
    write_summary_csv(&summary, &path).map_err(|e| io(&path, e))?;
    let mut g = String::from("parameter,z,converged\n");
    for s in &summary {
        let z = match s.geweke {
            Geweke::Z(z) => fmt(z),
            Geweke::Stuck => "stuck".into(),
        };
        g.push_str(&format!("{},{z},{}\n", s.name, s.geweke.passes(3.0)));
    }
    out.write("geweke.csv", &g)?;
    if !posterior.warnings.is_empty() {
        out.write("warnings.txt", &(posterior.warnings.join("\n") + "\n"))?;
    }
    for s in &summary {
        println!(
            "{:>8}  median {:<12.6} 95% HPDI [{:.6}, {:.6}]  acceptance {:.2}",
            s.name.as_str(),
            s.median,
            s.lower,
            s.upper,
            s.acceptance
        );
    }
    for w in &posterior.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn fit(
    cli: &Cli,
    population: Option<&Path>,
    events: Option<&Path>,
    t_cut: Option<i64>,
) -> Result<(), CliError> {
    let mut cfg = load_config(cli)?;
    let spec = cfg.model.spec()?;
    let priors = cfg.model.priors(&spec)?;
    let mcmc = cfg.mcmc(cfg.seed);
    mcmc.validate()?;
    let (pop_path, ev_path, pop, mut h) = load_data(&cfg, &spec, population, events)?;
    let truncate_at = t_cut.or(cfg.data.as_ref().and_then(|d| d.truncate_at));
    if let Some(t) = truncate_at {
        h = h.truncated(t)?;
    }
    // the saved config records exactly what was fitted
    cfg.data = Some(DataBlock {
        population: Some(pop_path.clone()),
        events: Some(ev_path.clone()),
        truncate_at,
    });
    let mut out = output_dir(&cfg)?;
    let mut manifest = Manifest::new("fit", &cfg);
    manifest.input("population", &pop_path)?;
    manifest.input("events", &ev_path)?;
    manifest.seeds.insert("mcmc".into(), cfg.seed);

    let data = LikelihoodData::new(&spec, &pop, &h)?;
    let posterior = fit_data(&spec, &data, &priors, &cfg.model.params(), &mcmc)?;
    write_fit_outputs(&mut out, &posterior, cfg.analysis.mass)?;
    out.write(CONFIG_FILE, &cfg.canonical())?;
    out.finish(manifest)
}

#[derive(Serialize)]
struct ScreeningReport<'a> {
    model: String,
    inclusion_probability: f64,
    selected: ModelClass,
    threshold: f64,
    iterations: usize,
    warm_up: usize,
    medians: BTreeMap<ParamName, f64>,
    acceptance: &'a BTreeMap<ParamName, f64>,
    final_model: Option<String>,
}

fn write_screening_chain(out: &mut OutputDir, r: &ScreeningResult) -> Result<(), CliError> {
    let names: Vec<ParamName> = r.chains.keys().copied().collect();
    let mut s = String::from("iteration,z,pi");
    for n in &names {
        s.push(',');
        s.push_str(n.as_str());
    }
    s.push('\n');
    for i in 0..r.indicator.len() {
        s.push_str(&format!("{},{},{}", i + 1, r.indicator[i], fmt(r.pi[i])));
        for n in &names {
            s.push(',');
            s.push_str(&fmt(r.chains[n][i]));
        }
        s.push('\n');
    }
    out.write("screening_chain.csv", &s)
}

fn screen(
    cli: &Cli,
    population: Option<&Path>,
    events: Option<&Path>,
    then_fit: bool,
) -> Result<(), CliError> {
    let mut cfg = load_config(cli)?;
    let spec = cfg.model.spec()?;
    if let Some(f) = spec.family() {
        if !f.has_exact_zero() {
            return Err(CliError::Unsupported(format!(
                "spike-and-slab screening is not available for the {} alarm: it has no exact-zero representation",
                f.short_name()
            )));
        }
    }
    let priors = cfg.model.priors(&spec)?;
    let screening = cfg.screening(cfg.seed, priors.clone());
    let (pop_path, ev_path, pop, h) = load_data(&cfg, &spec, population, events)?;
    cfg.data = Some(DataBlock {
        population: Some(pop_path.clone()),
        events: Some(ev_path.clone()),
        truncate_at: None,
    });
    let mut out = output_dir(&cfg)?;
    let mut manifest = Manifest::new(
        if then_fit {
            "screen --then-fit"
        } else {
            "screen"
        },
        &cfg,
    );
    manifest.input("population", &pop_path)?;
    manifest.input("events", &ev_path)?;
    manifest.seeds.insert("screening".into(), cfg.seed);

    let fixed = cfg.model.params();
    let data = LikelihoodData::new(&spec, &pop, &h)?;
    let result = screen_data(&spec, &data, &fixed, &screening)?;
    write_screening_chain(&mut out, &result)?;
    println!(
        "inclusion probability {:.4}; selected {}",
        result.inclusion_probability,
        match result.selected {
            ModelClass::Baseline => "baseline",
            ModelClass::BehaviouralChange => "behavioural change",
        }
    );

    let mut final_model = None;
    if then_fit {
        // refit the selected class from the screening medians
        let mut fit_cfg = cfg.clone();
        if result.selected == ModelClass::Baseline {
            let m = &mut fit_cfg.model;
            m.label = None;
            m.form = Some(Form::Baseline);
            m.alarm = None;
            m.params.retain(|p, _| !p.is_alarm());
            m.priors.retain(|p, _| !p.is_alarm());
            if let Some(f) = &mut m.free {
                f.retain(|p| !p.is_alarm());
            }
        }
        let chosen = fit_cfg.model.spec()?;
        let fit_priors = fit_cfg.model.priors(&chosen)?;
        let iterations = cfg.screening.final_iterations;
        fit_cfg.mcmc.iterations = iterations;
        fit_cfg.mcmc.burn_in = (cfg.screening.final_burn_in * iterations as f64).floor() as usize;
        fit_cfg.mcmc.initial_values = fit_priors
            .keys()
            .map(|&p| (p, result.medians.get(p)))
            .collect();
        let fit_seed = cfg.seed.wrapping_add(1);
        let mcmc = fit_cfg.mcmc(fit_seed);
        manifest.seeds.insert("final_fit".into(), fit_seed);
        let fit_data_ref = if chosen.alarm.is_none() {
            LikelihoodData::new(&chosen, &pop, &h)?
        } else {
            data
        };
        let mut base = fixed;
        if chosen.alarm.is_none() {
            base.set(ParamName::Delta1, 0.0);
            base.set(ParamName::Delta2, 0.0);
        }
        let posterior = fit_data(&chosen, &fit_data_ref, &fit_priors, &base, &mcmc)?;
        write_fit_outputs(&mut out, &posterior, cfg.analysis.mass)?;
        fit_cfg.seed = fit_seed;
        out.write(CONFIG_FILE, &fit_cfg.canonical())?;
        final_model = Some(chosen.label());
    }

    let report = ScreeningReport {
        model: spec.label(),
        inclusion_probability: result.inclusion_probability,
        selected: result.selected,
        threshold: screening.threshold,
        iterations: screening.iterations,
        warm_up: result.warm_up,
        medians: priors.keys().map(|&p| (p, result.medians.get(p))).collect(),
        acceptance: &result.acceptance,
        final_model,
    };
    out.write(
        "screening.json",
        &(serde_json::to_string_pretty(&report).expect("report serialises") + "\n"),
    )?;
    out.finish(manifest)
}

/// A completed fit read back from its output directory.
pub struct FitRun {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub spec: ModelSpec,
    pub posterior: PosteriorSample,
}

pub fn read_fit(dir: &Path) -> Result<FitRun, CliError> {
    let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let spec = config.model.spec()?;
    let posterior = PosteriorSample::read_chain_csv(
        &dir.join(CHAIN_FILE),
        config.model.params(),
        config.mcmc.burn_in,
    )?;
    Ok(FitRun {
        dir: dir.to_path_buf(),
        config,
        spec,
        posterior,
    })
}

/// Observed data for a fit, checked against the fit's manifest.
fn fit_data_files(
    run: &FitRun,
    population: Option<&Path>,
    events: Option<&Path>,
) -> Result<(PathBuf, PathBuf, Population, EpidemicHistory), CliError> {
    let (pop_path, ev_path, pop, h) = load_data(&run.config, &run.spec, population, events)?;
    check_input(&run.dir, "population", &pop_path)?;
    check_input(&run.dir, "events", &ev_path)?;
    Ok((pop_path, ev_path, pop, h))
}

fn curve(
    cli: &Cli,
    args: &CurveArgs,
    forecast: Option<(Option<i64>, Option<i64>)>,
) -> Result<(), CliError> {
    let run = read_fit(&args.fit)?;
    // settings from --config when given, else from the fit
    let mut cfg = match &cli.config {
        Some(_) => load_config(cli)?,
        None => {
            let mut c = run.config.clone();
            c.output = None;
            apply_overrides(cli, &mut c);
            c
        }
    };
    if cli.config.is_some() {
        cfg.data = run.config.data.clone();
    }
    let (pop_path, ev_path, pop, h) =
        fit_data_files(&run, args.population.as_deref(), args.events.as_deref())?;
    let settings = CurveSettings {
        n_draws: args.draws.unwrap_or(cfg.analysis.n_draws),
        mass: cfg.analysis.mass,
        seed: cfg.seed,
        periods: run.config.periods(),
    };
    let mut out = output_dir(&cfg)?;
    let name = if forecast.is_some() {
        "forecast"
    } else {
        "ppd"
    };
    let mut manifest = Manifest::new(name, &cfg);
    manifest.input("population", &pop_path)?;
    manifest.input("events", &ev_path)?;
    manifest.input("chain", &run.dir.join(CHAIN_FILE))?;
    manifest.seeds.insert("draws".into(), cfg.seed);
    manifest
        .seeds
        .insert("resimulation".into(), cfg.seed.wrapping_add(1));

    let (band, title) = match forecast {
        None => (
            ppd_curve(&run.spec, &pop, &h, &run.posterior, &settings)?,
            format!(
                "Posterior predictive epidemic curve, model {}",
                run.spec.label()
            ),
        ),
        Some((t_cut, horizon)) => {
            let t_cut = t_cut.unwrap_or(cfg.analysis.t_cut);
            let horizon = horizon.unwrap_or(cfg.analysis.horizon);
            let fitted_cut = run.config.data.as_ref().and_then(|d| d.truncate_at);
            if fitted_cut != Some(t_cut) {
                eprintln!(
                    "warning: {} was not fitted to data truncated at t = {t_cut}",
                    run.dir.display()
                );
            }
            (
                forecast_curve(
                    &run.spec,
                    &pop,
                    &h,
                    &run.posterior,
                    t_cut,
                    horizon,
                    &settings,
                )?,
                format!("Forecast from t = {t_cut}, model {}", run.spec.label()),
            )
        }
    };
    let band_path = out.file("band.csv")?;
    band.write_csv(&band_path)
        .map_err(|e| CliError::io(&band_path, e))?;
    let observed = observed_curve(&h, &band);
    out.write("band.svg", &band_plot(&title, &band, &observed))?;
    println!(
        "{name} band over t = {}..={} from {} draws; {:.0}% of observed counts inside",
        band.times.first().unwrap_or(&0),
        band.times.last().unwrap_or(&0),
        band.n_draws,
        100.0 * band.coverage(&h)
    );
    out.finish(manifest)
}

/// Observed new infections at the band's times, where observed.
fn observed_curve(h: &EpidemicHistory, band: &CurveBand) -> Vec<(i64, usize)> {
    let curve = h.epidemic_curve();
    band.times
        .iter()
        .filter_map(|&t| {
            let idx = t - 1 - h.t_min();
            (idx >= 0 && (idx as usize) < curve.len()).then(|| (t, curve[idx as usize]))
        })
        .collect()
}

fn compare(
    cli: &Cli,
    fits: &[PathBuf],
    population: Option<&Path>,
    events: Option<&Path>,
) -> Result<(), CliError> {
    let runs: Vec<FitRun> = fits.iter().map(|d| read_fit(d)).collect::<Result<_, _>>()?;
    let mut cfg = match &cli.config {
        Some(_) => load_config(cli)?,
        None => {
            let mut c = runs[0].config.clone();
            c.output = None;
            apply_overrides(cli, &mut c);
            c
        }
    };
    cfg.data = runs[0].config.data.clone();
    let truncation = |r: &FitRun| r.config.data.as_ref().and_then(|d| d.truncate_at);
    if runs.iter().any(|r| truncation(r) != truncation(&runs[0])) {
        return Err(CliError::Config(
            "the fits were made to differently truncated data".into(),
        ));
    }
    let mut out = output_dir(&cfg)?;
    let mut manifest = Manifest::new("compare", &cfg);
    let mut entries = Vec::new();
    for (k, run) in runs.iter().enumerate() {
        let (pop_path, ev_path, pop, mut h) = fit_data_files(run, population, events)?;
        if k == 0 {
            manifest.input("population", &pop_path)?;
            manifest.input("events", &ev_path)?;
        }
        if let Some(t) = truncation(run) {
            h = h.truncated(t)?;
        }
        manifest.input(&format!("chain_{k}"), &run.dir.join(CHAIN_FILE))?;
        let data = LikelihoodData::new(&run.spec, &pop, &h)?;
        let draws = run.posterior.thinned(cfg.analysis.waic_draws);
        entries.push(waic_data(&run.spec.label(), &data, &draws)?);
    }
    let report = WaicReport::new(entries)?;
    let path = out.file("waic.csv")?;
    report
        .write_csv(&path)
        .map_err(|e| CliError::io(&path, e))?;
    for (k, e) in report.entries.iter().enumerate() {
        println!(
            "{:>5}  WAIC {:>12.3}  delta {:>9.3}{}",
            e.label,
            e.waic,
            report.delta[k],
            if k == report.best { "  best" } else { "" }
        );
    }
    out.finish(manifest)
}
