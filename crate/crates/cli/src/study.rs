//! Simulation studies: simulate each scenario repeatedly, then either fit a
//! list of models and compare them by WAIC, or screen each dataset for
//! behavioural change. Cells run in parallel; a failed cell is recorded
//! and does not stop the study.

use bcilm::analysis::waic_data;
use bcilm::epidemic::EpidemicHistory;
use bcilm::inference::{default_priors, fit_data, McmcConfig};
use bcilm::model::{LikelihoodData, ModelSpec, Params};
use bcilm::population::Population;
use bcilm::screening::{screen_data, ModelClass};
use bcilm::simulate::{replicate_rng, simulate_epidemic_with};
use rand::Rng;
use rayon::prelude::*;

use crate::commands::{load_config, output_dir, CONFIG_FILE};
use crate::config::{make_population, RunConfig, Scenario, StudyBlock, StudyMode};
use crate::error::CliError;
use crate::manifest::Manifest;
use crate::Cli;

/// Seed for fitting model `j` to dataset `cell`.
pub fn fit_seed(master: u64, cell: usize, j: usize) -> u64 {
    replicate_rng(master, (1u64 << 40) + (cell as u64) * 1024 + j as u64).random()
}

/// Outcome of one model on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum CellResult {
    Waic(f64),
    Screen {
        inclusion: f64,
        selected: ModelClass,
    },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub scenario: usize,
    pub replicate: usize,
    pub final_size: Option<usize>,
    /// One entry per fitted model (WAIC mode) or a single screening result.
    pub results: Vec<CellResult>,
}

/// Checks a study block, returning the fitted and screened models.
pub fn validate(study: &StudyBlock) -> Result<(Vec<ModelSpec>, Vec<ModelSpec>), CliError> {
    if study.replicates == 0 || study.scenarios.is_empty() {
        return Err(CliError::Config(
            "a study needs at least one scenario and one replicate".into(),
        ));
    }
    let fitted = study
        .fitted
        .iter()
        .map(|l| ModelSpec::from_label(l).map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    if study.mode == StudyMode::Waic && fitted.is_empty() {
        return Err(CliError::Config(
            "a WAIC study needs study.fitted models".into(),
        ));
    }
    let mut screened = Vec::new();
    for s in &study.scenarios {
        let truth = ModelSpec::from_label(&s.truth)?;
        for p in truth.parameter_names() {
            if p != bcilm::model::ParamName::Epsilon && !s.params.contains_key(&p) {
                return Err(CliError::Config(format!(
                    "scenario '{}' needs a value for {p}",
                    s.name
                )));
            }
        }
        let label = s.screen_with.as_deref().unwrap_or(&s.truth);
        let spec = ModelSpec::from_label(label)?;
        if study.mode == StudyMode::Screen {
            match spec.family() {
                None => {
                    return Err(CliError::Config(format!(
                        "scenario '{}' has no alarm model to screen; set screen_with",
                        s.name
                    )))
                }
                Some(f) if !f.has_exact_zero() => {
                    return Err(CliError::Unsupported(format!(
                        "scenario '{}': the {} alarm cannot be screened",
                        s.name,
                        f.short_name()
                    )))
                }
                _ => {}
            }
        }
        screened.push(spec);
    }
    Ok((fitted, screened))
}

fn scenario_params(s: &Scenario) -> Params {
    let mut p = Params::default();
    for (&k, &v) in &s.params {
        p.set(k, v);
    }
    p
}

fn simulate_cell(
    cfg: &RunConfig,
    scenario: &Scenario,
    stream: u64,
) -> Result<(Population, EpidemicHistory), CliError> {
    let source = cfg
        .population
        .as_ref()
        .ok_or_else(|| CliError::Config("a study needs a [population] block".into()))?;
    let truth = ModelSpec::from_label(&scenario.truth)?;
    let sim = cfg.simulation(cfg.seed);
    let mut rng = replicate_rng(cfg.seed, stream);
    let pop = make_population(source, &mut rng)?;
    let h = simulate_epidemic_with(&truth, &scenario_params(scenario), &pop, &sim, &mut rng)?;
    Ok((pop, h))
}

fn mcmc_for(cfg: &RunConfig, spec: &ModelSpec, seed: u64) -> McmcConfig {
    let mut c = cfg.mcmc(seed);
    let names = spec.parameter_names();
    c.initial_values.retain(|p, _| names.contains(p));
    c.initial_steps.retain(|p, _| names.contains(p));
    c
}

fn waic_cell(
    cfg: &RunConfig,
    spec: &ModelSpec,
    pop: &Population,
    h: &EpidemicHistory,
    seed: u64,
) -> Result<f64, CliError> {
    let data = LikelihoodData::new(spec, pop, h)?;
    let post = fit_data(
        spec,
        &data,
        &default_priors(spec),
        &Params::default(),
        &mcmc_for(cfg, spec, seed),
    )?;
    let draws = post.thinned(cfg.analysis.waic_draws);
    Ok(waic_data(&spec.label(), &data, &draws)?.waic)
}

fn screen_cell(
    cfg: &RunConfig,
    spec: &ModelSpec,
    pop: &Population,
    h: &EpidemicHistory,
    seed: u64,
) -> Result<CellResult, CliError> {
    let data = LikelihoodData::new(spec, pop, h)?;
    let mut settings = cfg.screening(seed, default_priors(spec));
    let names = spec.parameter_names();
    settings.initial_values.retain(|p, _| names.contains(p));
    let r = screen_data(spec, &data, &Params::default(), &settings)?;
    Ok(CellResult::Screen {
        inclusion: r.inclusion_probability,
        selected: r.selected,
    })
}

/// Runs every cell of a study. Cell `c = scenario * replicates + replicate`
/// simulates from stream `c` of the master seed.
pub fn run_cells(cfg: &RunConfig) -> Result<Vec<Cell>, CliError> {
    let study = cfg
        .study
        .as_ref()
        .ok_or_else(|| CliError::Config("the config has no [study] block".into()))?;
    let (fitted, screened) = validate(study)?;
    let m = study.replicates;
    let cells: Vec<(usize, usize)> = (0..study.scenarios.len())
        .flat_map(|s| (0..m).map(move |r| (s, r)))
        .collect();
    Ok(cells
        .into_par_iter()
        .map(|(s, r)| {
            let c = s * m + r;
            let scenario = &study.scenarios[s];
            let (pop, h) = match simulate_cell(cfg, scenario, c as u64) {
                Ok(x) => x,
                Err(e) => {
                    return Cell {
                        scenario: s,
                        replicate: r,
                        final_size: None,
                        results: vec![CellResult::Failed(e.to_string())],
                    }
                }
            };
            let results = match study.mode {
                StudyMode::Waic => fitted
                    .iter()
                    .enumerate()
                    .map(|(j, spec)| {
                        waic_cell(cfg, spec, &pop, &h, fit_seed(cfg.seed, c, j))
                            .map_or_else(|e| CellResult::Failed(e.to_string()), CellResult::Waic)
                    })
                    .collect(),
                StudyMode::Screen => {
                    vec![
                        screen_cell(cfg, &screened[s], &pop, &h, fit_seed(cfg.seed, c, 0))
                            .unwrap_or_else(|e| CellResult::Failed(e.to_string())),
                    ]
                }
            };
            Cell {
                scenario: s,
                replicate: r,
                final_size: Some(h.final_size()),
                results,
            }
        })
        .collect())
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Proportion of datasets on which each model has the lowest WAIC, and the
/// mean WAIC difference from the generating model (or, when it was not
/// fitted, from the best model), one row per scenario.
pub fn waic_tables(study: &StudyBlock, cells: &[Cell]) -> (String, String) {
    let mut header = String::from("true_model");
    for l in &study.fitted {
        header.push(',');
        header.push_str(l);
    }
    header.push_str(",datasets\n");
    let mut selection = header.clone();
    let mut deltas = header;
    for (s, scenario) in study.scenarios.iter().enumerate() {
        let truth_idx = study.fitted.iter().position(|l| *l == scenario.truth);
        let mut wins = vec![0usize; study.fitted.len()];
        let mut sums = vec![0.0; study.fitted.len()];
        let mut complete = 0usize;
        for cell in cells.iter().filter(|c| c.scenario == s) {
            let values: Option<Vec<f64>> = cell
                .results
                .iter()
                .map(|r| match r {
                    CellResult::Waic(w) => Some(*w),
                    _ => None,
                })
                .collect();
            let Some(values) = values.filter(|v| v.len() == study.fitted.len()) else {
                continue;
            };
            complete += 1;
            let best = (0..values.len())
                .min_by(|&a, &b| values[a].total_cmp(&values[b]))
                .unwrap();
            wins[best] += 1;
            let reference = values[truth_idx.unwrap_or(best)];
            for (j, v) in values.iter().enumerate() {
                sums[j] += v - reference;
            }
        }
        selection.push_str(&scenario.name);
        deltas.push_str(&scenario.name);
        for j in 0..study.fitted.len() {
            if complete == 0 {
                selection.push_str(",NA");
                deltas.push_str(",NA");
            } else {
                selection.push_str(&format!(",{}", fmt(wins[j] as f64 / complete as f64)));
                deltas.push_str(&format!(",{}", fmt(sums[j] / complete as f64)));
            }
        }
        selection.push_str(&format!(",{complete}\n"));
        deltas.push_str(&format!(",{complete}\n"));
    }
    (selection, deltas)
}

/// Proportion of datasets assigned to each class, one row per scenario.
pub fn screening_table(study: &StudyBlock, cells: &[Cell]) -> String {
    let mut t = String::from(
        "scenario,screened_model,baseline,behavioural_change,mean_inclusion,datasets\n",
    );
    for (s, scenario) in study.scenarios.iter().enumerate() {
        let mut base = 0usize;
        let mut bc = 0usize;
        let mut incl = 0.0;
        for cell in cells.iter().filter(|c| c.scenario == s) {
            if let Some(CellResult::Screen {
                inclusion,
                selected,
            }) = cell.results.first()
            {
                incl += inclusion;
                match selected {
                    ModelClass::Baseline => base += 1,
                    ModelClass::BehaviouralChange => bc += 1,
                }
            }
        }
        let n = base + bc;
        let label = scenario.screen_with.as_deref().unwrap_or(&scenario.truth);
        if n == 0 {
            t.push_str(&format!("{},{label},NA,NA,NA,0\n", scenario.name));
        } else {
            let nf = n as f64;
            t.push_str(&format!(
                "{},{label},{},{},{},{n}\n",
                scenario.name,
                fmt(base as f64 / nf),
                fmt(bc as f64 / nf),
                fmt(incl / nf)
            ));
        }
    }
    t
}

fn cells_csv(study: &StudyBlock, cells: &[Cell]) -> String {
    let mut t = String::from("scenario,replicate,final_size,model,status,value,selected\n");
    for cell in cells {
        let name = &study.scenarios[cell.scenario].name;
        let size = cell.final_size.map_or("NA".into(), |s| s.to_string());
        for (j, r) in cell.results.iter().enumerate() {
            let model = match study.mode {
                StudyMode::Waic => study.fitted.get(j).cloned().unwrap_or_default(),
                StudyMode::Screen => {
                    let s = &study.scenarios[cell.scenario];
                    s.screen_with.clone().unwrap_or_else(|| s.truth.clone())
                }
            };
            let (status, value, selected) = match r {
                CellResult::Waic(w) => ("ok".to_string(), fmt(*w), String::new()),
                CellResult::Screen {
                    inclusion,
                    selected,
                } => (
                    "ok".to_string(),
                    fmt(*inclusion),
                    match selected {
                        ModelClass::Baseline => "baseline".into(),
                        ModelClass::BehaviouralChange => "behavioural_change".into(),
                    },
                ),
                CellResult::Failed(msg) => (
                    format!("failed: {}", msg.replace([',', '\n'], ";")),
                    String::new(),
                    String::new(),
                ),
            };
            t.push_str(&format!(
                "{name},{},{size},{model},{status},{value},{selected}\n",
                cell.replicate
            ));
        }
    }
    t
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let study = cfg
        .study
        .clone()
        .ok_or_else(|| CliError::Config("the config has no [study] block".into()))?;
    let mut out = output_dir(&cfg)?;
    let mut manifest = Manifest::new("study", &cfg);
    let cells = run_cells(&cfg)?;
    for cell in &cells {
        let c = cell.scenario * study.replicates + cell.replicate;
        manifest
            .seeds
            .insert(format!("cell_{c:04}_stream"), c as u64);
        for j in 0..cell.results.len() {
            manifest
                .seeds
                .insert(format!("cell_{c:04}_model_{j}"), fit_seed(cfg.seed, c, j));
        }
    }
    out.write("cells.csv", &cells_csv(&study, &cells))?;
    match study.mode {
        StudyMode::Waic => {
            let (selection, deltas) = waic_tables(&study, &cells);
            out.write("selection.csv", &selection)?;
            out.write("delta_waic.csv", &deltas)?;
            print!("{selection}");
        }
        StudyMode::Screen => {
            let table = screening_table(&study, &cells);
            out.write("screening.csv", &table)?;
            print!("{table}");
        }
    }
    let failed = cells
        .iter()
        .flat_map(|c| &c.results)
        .filter(|r| matches!(r, CellResult::Failed(_)))
        .count();
    if failed > 0 {
        eprintln!("warning: {failed} cell(s) failed; see cells.csv");
    }
    out.write(CONFIG_FILE, &cfg.canonical())?;
    out.finish(manifest)
}
