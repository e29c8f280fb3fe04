//! Static spatial populations and their cached pairwise distances.
//!
//! Every likelihood evaluation reads distances between susceptible and
//! infectious individuals, so the full Euclidean distance matrix is computed
//! once at construction and shared read-only afterwards.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PopulationError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot rescale: individuals {0} and {1} are coincident")]
    Coincident(usize, usize),
}

/// A single member of the population.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub covariates: Vec<f64>,
}

/// Immutable population with a dense, symmetric distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    individuals: Vec<Individual>,
    covariate_names: Vec<String>,
    distances: Vec<f64>,
}

impl Population {
    /// Builds a population from individuals whose ids must be exactly `0..n`
    /// in order.
    pub fn new(
        individuals: Vec<Individual>,
        covariate_names: Vec<String>,
    ) -> Result<Self, PopulationError> {
        if individuals.is_empty() {
            return Err(PopulationError::Config("population is empty".into()));
        }
        for (k, ind) in individuals.iter().enumerate() {
            if ind.id != k {
                return Err(PopulationError::Config(format!(
                    "ids must be contiguous 0..n-1; found id {} at position {k}",
                    ind.id
                )));
            }
            if ind.covariates.len() != covariate_names.len() {
                return Err(PopulationError::Config(format!(
                    "individual {} has {} covariates, expected {}",
                    ind.id,
                    ind.covariates.len(),
                    covariate_names.len()
                )));
            }
            if !ind.x.is_finite() || !ind.y.is_finite() {
                return Err(PopulationError::Config(format!(
                    "individual {} has non-finite coordinates",
                    ind.id
                )));
            }
        }
        let distances = distance_matrix(&individuals);
        Ok(Self {
            individuals,
            covariate_names,
            distances,
        })
    }

    /// Convenience constructor from bare coordinates, with no covariates.
    pub fn from_coordinates(coords: &[(f64, f64)]) -> Result<Self, PopulationError> {
        let individuals = coords
            .iter()
            .enumerate()
            .map(|(id, &(x, y))| Individual {
                id,
                x,
                y,
                covariates: Vec::new(),
            })
            .collect();
        Self::new(individuals, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.len() + j]
    }

    /// Row `i` of the distance matrix.
    pub fn distance_row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.distances[i * n..(i + 1) * n]
    }

    /// Smallest off-diagonal distance and the pair attaining it, or `None`
    /// for a single individual.
    pub fn min_distance(&self) -> Option<(f64, usize, usize)> {
        let n = self.len();
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = self.distance(i, j);
                if best.is_none_or(|(b, _, _)| d < b) {
                    best = Some((d, i, j));
                }
            }
        }
        best
    }

    /// Writes the population as `id,x,y[,covariates...]`.
    pub fn save(&self, path: &Path) -> Result<(), PopulationError> {
        let io_err = |e: std::io::Error| PopulationError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| io_err(e.into()))?;
        let mut header = vec!["id".to_string(), "x".into(), "y".into()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header).map_err(|e| io_err(e.into()))?;
        for ind in &self.individuals {
            let mut row = vec![ind.id.to_string(), fmt_f64(ind.x), fmt_f64(ind.y)];
            row.extend(ind.covariates.iter().map(|&c| fmt_f64(c)));
            w.write_record(&row).map_err(|e| io_err(e.into()))?;
        }
        w.flush().map_err(io_err)
    }
}

/// Shortest round-trip representation of a float.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn distance_matrix(individuals: &[Individual]) -> Vec<f64> {
    let n = individuals.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = individuals[i].x - individuals[j].x;
            let dy = individuals[i].y - individuals[j].y;
            let v = dx.hypot(dy);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Draws `n` individuals uniformly over `x_range × y_range`.
pub fn generate_population(
    n: usize,
    x_range: (f64, f64),
    y_range: (f64, f64),
    rng_seed: u64,
) -> Result<Population, PopulationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    generate_population_with(n, x_range, y_range, &mut rng)
}

/// As [`generate_population`], drawing from a caller-supplied stream.
pub fn generate_population_with<R: Rng>(
    n: usize,
    x_range: (f64, f64),
    y_range: (f64, f64),
    rng: &mut R,
) -> Result<Population, PopulationError> {
    if n == 0 {
        return Err(PopulationError::Config("n must be at least 1".into()));
    }
    for (name, (lo, hi)) in [("x", x_range), ("y", y_range)] {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(PopulationError::Config(format!(
                "{name} range ({lo}, {hi}) is degenerate"
            )));
        }
    }
    let individuals = (0..n)
        .map(|id| Individual {
            id,
            x: rng.random_range(x_range.0..x_range.1),
            y: rng.random_range(y_range.0..y_range.1),
            covariates: Vec::new(),
        })
        .collect();
    Population::new(individuals, Vec::new())
}

/// Reads a population CSV with header `id,x,y[,cov1,...]`.
///
/// Rows may appear in any order; ids must form the contiguous set `0..n`.
pub fn load_population(path: &Path) -> Result<Population, PopulationError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| PopulationError::Io {
            path: display.clone(),
            source: e.into(),
        })?;
    let parse_err = |line: usize, message: String| PopulationError::Parse {
        path: display.clone(),
        line,
        message,
    };

    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 3 || cols[0] != "id" || cols[1] != "x" || cols[2] != "y" {
        return Err(parse_err(
            1,
            format!("header must start with id,x,y; found {}", cols.join(",")),
        ));
    }
    let covariate_names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();

    let mut rows: Vec<Option<Individual>> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != cols.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", cols.len(), record.len()),
            ));
        }
        let id: usize = record[0]
            .parse()
            .map_err(|_| parse_err(line, format!("id '{}' is not an integer", &record[0])))?;
        let num = |idx: usize| -> Result<f64, PopulationError> {
            record[idx].parse::<f64>().map_err(|_| {
                parse_err(
                    line,
                    format!(
                        "column '{}' value '{}' is not numeric",
                        cols[idx], &record[idx]
                    ),
                )
            })
        };
        let x = num(1)?;
        let y = num(2)?;
        let covariates = (3..cols.len()).map(num).collect::<Result<Vec<_>, _>>()?;
        if rows.len() <= id {
            rows.resize(id + 1, None);
        }
        if rows[id].is_some() {
            return Err(parse_err(line, format!("duplicate id {id}")));
        }
        rows[id] = Some(Individual {
            id,
            x,
            y,
            covariates,
        });
    }
    let mut individuals = Vec::with_capacity(rows.len());
    for (id, row) in rows.into_iter().enumerate() {
        match row {
            Some(ind) => individuals.push(ind),
            None => {
                return Err(parse_err(
                    0,
                    format!("ids are not contiguous: id {id} is missing"),
                ))
            }
        }
    }
    Population::new(individuals, covariate_names)
}

/// Uniformly scales coordinates so the closest pair is `target_min` apart.
///
/// Populations already satisfying the bound are returned unchanged.
pub fn rescale_min_distance(
    pop: &Population,
    target_min: f64,
) -> Result<Population, PopulationError> {
    if pop.len() < 2 {
        return Err(PopulationError::Config(
            "rescaling needs at least two individuals".into(),
        ));
    }
    if !(target_min > 0.0) {
        return Err(PopulationError::Config(format!(
            "target minimum distance must be positive, got {target_min}"
        )));
    }
    let (min, i, j) = pop.min_distance().expect("n >= 2");
    if min == 0.0 {
        return Err(PopulationError::Coincident(i, j));
    }
    if min >= target_min {
        return Ok(pop.clone());
    }
    let factor = target_min / min;
    let individuals = pop
        .individuals
        .iter()
        .map(|ind| Individual {
            x: ind.x * factor,
            y: ind.y * factor,
            ..ind.clone()
        })
        .collect();
    Population::new(individuals, pop.covariate_names.clone())
}
