//! Discrete-time SIR/SEIR state bookkeeping and event-history files.
//!
//! Transition times follow one boundary convention throughout: an individual
//! infected at time `t` leaves the susceptible set at `t + 1`. In SIR it is
//! infectious over `infection_time + 1 ..= removal_time`; in SEIR it is exposed
//! over `exposure_time + 1 ..= infection_time` and infectious afterwards up to
//! and including `removal_time`. Removed means strictly after `removal_time`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EpidemicError {
    #[error("time {t} is outside the study window [{t_min}, {t_max}]")]
    OutOfWindow { t: i64, t_min: i64, t_max: i64 },
    #[error("individual {id}: {message}")]
    Invalid { id: usize, message: String },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    #[default]
    Sir,
    Seir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Compartment {
    Susceptible,
    Exposed,
    Infectious,
    Removed,
}

/// Per-individual transition times; `None` means the transition never
/// happens within the record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TransitionTimes {
    pub exposure_time: Option<i64>,
    pub infection_time: Option<i64>,
    pub removal_time: Option<i64>,
}

impl TransitionTimes {
    pub const SUSCEPTIBLE: Self = Self {
        exposure_time: None,
        infection_time: None,
        removal_time: None,
    };

    fn validate(&self, framework: Framework, id: usize) -> Result<(), EpidemicError> {
        let invalid = |message: String| EpidemicError::Invalid { id, message };
        match framework {
            Framework::Sir => {
                if self.exposure_time.is_some() {
                    return Err(invalid("exposure time given in an SIR history".into()));
                }
            }
            Framework::Seir => match (self.exposure_time, self.infection_time) {
                (Some(e), Some(i)) if e >= i => {
                    return Err(invalid(format!(
                        "exposure time {e} must precede infection time {i}"
                    )))
                }
                (Some(_), None) => {
                    return Err(invalid("exposed but never infectious".into()));
                }
                (None, Some(_)) => {
                    return Err(invalid("infectious without an exposure time".into()));
                }
                _ => {}
            },
        }
        if let (Some(i), Some(r)) = (self.infection_time, self.removal_time) {
            if r <= i {
                return Err(invalid(format!(
                    "removal time {r} must follow infection time {i}"
                )));
            }
        }
        Ok(())
    }

    /// Time of the infection event that moves the individual out of S.
    #[inline]
    pub fn infection_event(&self, framework: Framework) -> Option<i64> {
        match framework {
            Framework::Sir => self.infection_time,
            Framework::Seir => self.exposure_time,
        }
    }

    /// Last time at which the individual is susceptible, if it ever leaves S
    /// (by infection, or by removal without infection).
    #[inline]
    pub fn last_susceptible(&self, framework: Framework) -> Option<i64> {
        self.infection_event(framework).or(self.removal_time)
    }

    #[inline]
    pub fn state_at(&self, framework: Framework, t: i64) -> Compartment {
        let after = |x: Option<i64>| x.is_some_and(|x| t > x);
        if self.infection_event(framework).is_none() {
            return if after(self.removal_time) {
                Compartment::Removed
            } else {
                Compartment::Susceptible
            };
        }
        if after(self.removal_time) {
            Compartment::Removed
        } else if after(self.infection_time) {
            Compartment::Infectious
        } else if after(self.exposure_time) {
            Compartment::Exposed
        } else {
            Compartment::Susceptible
        }
    }
}

/// Known infectious and exposed period lengths, in time steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSpec {
    pub infectious: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposed: Option<u32>,
    /// Individual removal times that take precedence over the infectious
    /// period (culls).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub removal_overrides: BTreeMap<usize, i64>,
}

impl PeriodSpec {
    pub fn sir(infectious: u32) -> Self {
        Self {
            infectious,
            exposed: None,
            removal_overrides: BTreeMap::new(),
        }
    }

    pub fn seir(exposed: u32, infectious: u32) -> Self {
        Self {
            infectious,
            exposed: Some(exposed),
            removal_overrides: BTreeMap::new(),
        }
    }

    pub fn validate(&self, framework: Framework) -> Result<(), EpidemicError> {
        if self.infectious == 0 {
            return Err(EpidemicError::Config(
                "infectious period must be at least 1".into(),
            ));
        }
        match (framework, self.exposed) {
            (Framework::Seir, None) | (Framework::Seir, Some(0)) => Err(EpidemicError::Config(
                "SEIR requires an exposed period of at least 1".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Transition times for individual `id` infected at `event_time`.
    pub fn transitions_for(
        &self,
        framework: Framework,
        id: usize,
        event_time: i64,
    ) -> TransitionTimes {
        let (exposure_time, infection_time) = match framework {
            Framework::Sir => (None, event_time),
            Framework::Seir => (
                Some(event_time),
                event_time + i64::from(self.exposed.unwrap_or(1)),
            ),
        };
        let mut removal = infection_time + i64::from(self.infectious);
        if let Some(&r) = self.removal_overrides.get(&id) {
            // A cull can shorten, never lengthen, the infectious period and
            // cannot precede infectiousness.
            removal = removal.min(r.max(infection_time + 1));
        }
        TransitionTimes {
            exposure_time,
            infection_time: Some(infection_time),
            removal_time: Some(removal),
        }
    }
}

/// Complete event history of one epidemic over a study window.
#[derive(Debug, Clone, PartialEq)]
pub struct EpidemicHistory {
    framework: Framework,
    transitions: Vec<TransitionTimes>,
    t_min: i64,
    t_max: i64,
}

impl EpidemicHistory {
    pub fn new(
        framework: Framework,
        transitions: Vec<TransitionTimes>,
        t_min: i64,
        t_max: i64,
    ) -> Result<Self, EpidemicError> {
        if t_min > t_max {
            return Err(EpidemicError::Config(format!(
                "study window [{t_min}, {t_max}] is empty"
            )));
        }
        for (id, tr) in transitions.iter().enumerate() {
            tr.validate(framework, id)?;
        }
        Ok(Self {
            framework,
            transitions,
            t_min,
            t_max,
        })
    }

    pub fn framework(&self) -> Framework {
        self.framework
    }

    pub fn transitions(&self) -> &[TransitionTimes] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn t_min(&self) -> i64 {
        self.t_min
    }

    pub fn t_max(&self) -> i64 {
        self.t_max
    }

    fn check_window(&self, t: i64) -> Result<(), EpidemicError> {
        if t < self.t_min || t > self.t_max {
            Err(EpidemicError::OutOfWindow {
                t,
                t_min: self.t_min,
                t_max: self.t_max,
            })
        } else {
            Ok(())
        }
    }

    pub fn state_of(&self, i: usize, t: i64) -> Result<Compartment, EpidemicError> {
        self.check_window(t)?;
        Ok(self.transitions[i].state_at(self.framework, t))
    }

    /// Individuals infectious at `t`, in index order. No window check.
    pub fn infectious_at(&self, t: i64) -> Vec<usize> {
        self.members_at(t, Compartment::Infectious)
    }

    pub fn susceptible_at(&self, t: i64) -> Vec<usize> {
        self.members_at(t, Compartment::Susceptible)
    }

    fn members_at(&self, t: i64, c: Compartment) -> Vec<usize> {
        self.transitions
            .iter()
            .enumerate()
            .filter(|(_, tr)| tr.state_at(self.framework, t) == c)
            .map(|(i, _)| i)
            .collect()
    }

    /// Compartment sizes `[S, E, I, R]` at `t`.
    pub fn counts(&self, t: i64) -> Result<[usize; 4], EpidemicError> {
        self.check_window(t)?;
        let mut c = [0usize; 4];
        for tr in &self.transitions {
            c[tr.state_at(self.framework, t) as usize] += 1;
        }
        Ok(c)
    }

    /// Individuals infected at `t`: those entering I (SIR) or E (SEIR) at `t + 1`.
    pub fn new_infections(&self, t: i64) -> Result<Vec<usize>, EpidemicError> {
        self.check_window(t)?;
        self.check_window(t + 1)?;
        Ok(self
            .transitions
            .iter()
            .enumerate()
            .filter(|(_, tr)| tr.infection_event(self.framework) == Some(t))
            .map(|(i, _)| i)
            .collect())
    }

    /// New-infection counts for `t = t_min .. t_max - 1`; entry `k` counts
    /// individuals entering I (or E) at `t_min + k + 1`.
    pub fn epidemic_curve(&self) -> Vec<usize> {
        let len = (self.t_max - self.t_min) as usize;
        let mut curve = vec![0usize; len];
        for tr in &self.transitions {
            if let Some(e) = tr.infection_event(self.framework) {
                if e >= self.t_min && e < self.t_max {
                    curve[(e - self.t_min) as usize] += 1;
                }
            }
        }
        curve
    }

    /// Individuals infected before the window opens.
    pub fn seeds(&self) -> Vec<usize> {
        self.transitions
            .iter()
            .enumerate()
            .filter(|(_, tr)| {
                tr.infection_event(self.framework)
                    .is_some_and(|e| e < self.t_min)
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of individuals ever infected, seeds included.
    pub fn final_size(&self) -> usize {
        self.transitions
            .iter()
            .filter(|tr| {
                tr.infection_event(self.framework)
                    .is_some_and(|e| e < self.t_max)
            })
            .count()
    }

    /// History as observed up to `t_cut`: infection events at or after
    /// `t_cut` are forgotten and the window ends at `t_cut`.
    pub fn truncated(&self, t_cut: i64) -> Result<Self, EpidemicError> {
        self.check_window(t_cut)?;
        let transitions = self
            .transitions
            .iter()
            .map(|tr| match tr.last_susceptible(self.framework) {
                Some(e) if e < t_cut => *tr,
                _ => TransitionTimes::SUSCEPTIBLE,
            })
            .collect();
        Ok(Self {
            framework: self.framework,
            transitions,
            t_min: self.t_min,
            t_max: t_cut,
        })
    }

    /// Same transitions under a different study window.
    pub fn with_window(&self, t_min: i64, t_max: i64) -> Result<Self, EpidemicError> {
        Self::new(self.framework, self.transitions.clone(), t_min, t_max)
    }

    /// Writes `id,exposure_time,infection_time,removal_time`, blank for never.
    pub fn save_events(&self, path: &Path) -> Result<(), EpidemicError> {
        let io_err = |e: std::io::Error| EpidemicError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| io_err(e.into()))?;
        w.write_record(["id", "exposure_time", "infection_time", "removal_time"])
            .map_err(|e| io_err(e.into()))?;
        let cell = |v: Option<i64>| v.map(|v| v.to_string()).unwrap_or_default();
        for (id, tr) in self.transitions.iter().enumerate() {
            w.write_record([
                id.to_string(),
                cell(tr.exposure_time),
                cell(tr.infection_time),
                cell(tr.removal_time),
            ])
            .map_err(|e| io_err(e.into()))?;
        }
        w.flush().map_err(io_err)
    }
}

/// Reads an events CSV. Every id `0..n` must appear exactly once; the study
/// window comes from the caller's configuration.
pub fn load_events(
    path: &Path,
    framework: Framework,
    t_min: i64,
    t_max: i64,
) -> Result<EpidemicHistory, EpidemicError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| EpidemicError::Io {
            path: display.clone(),
            source: e.into(),
        })?;
    let parse_err = |line: usize, message: String| EpidemicError::Parse {
        path: display.clone(),
        line,
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let expected = ["id", "exposure_time", "infection_time", "removal_time"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(parse_err(
            1,
            format!("header must be {}", expected.join(",")),
        ));
    }
    let mut rows: BTreeMap<usize, TransitionTimes> = BTreeMap::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        let id: usize = record[0]
            .parse()
            .map_err(|_| parse_err(line, format!("id '{}' is not an integer", &record[0])))?;
        let opt = |idx: usize| -> Result<Option<i64>, EpidemicError> {
            let s = &record[idx];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<i64>().map(Some).map_err(|_| {
                    parse_err(line, format!("{} '{s}' is not an integer", expected[idx]))
                })
            }
        };
        let tr = TransitionTimes {
            exposure_time: opt(1)?,
            infection_time: opt(2)?,
            removal_time: opt(3)?,
        };
        if rows.insert(id, tr).is_some() {
            return Err(parse_err(line, format!("duplicate id {id}")));
        }
    }
    let mut transitions = Vec::with_capacity(rows.len());
    for (expected_id, (id, tr)) in rows.into_iter().enumerate() {
        if id != expected_id {
            return Err(EpidemicError::Invalid {
                id: expected_id,
                message: "missing from events file".into(),
            });
        }
        transitions.push(tr);
    }
    EpidemicHistory::new(framework, transitions, t_min, t_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Compartment::*;

    fn sir(inf: Option<i64>, rem: Option<i64>) -> TransitionTimes {
        TransitionTimes {
            exposure_time: None,
            infection_time: inf,
            removal_time: rem,
        }
    }

    /// Five individuals over t = 1..=8: two seeds, three later infections,
    /// one never infected.
    fn small_history() -> EpidemicHistory {
        let periods = PeriodSpec::sir(3);
        let f = Framework::Sir;
        EpidemicHistory::new(
            f,
            vec![
                periods.transitions_for(f, 0, 0),
                periods.transitions_for(f, 1, 0),
                periods.transitions_for(f, 2, 2),
                periods.transitions_for(f, 3, 2),
                periods.transitions_for(f, 4, 5),
                TransitionTimes::SUSCEPTIBLE,
            ],
            1,
            8,
        )
        .unwrap()
    }

    #[test]
    fn never_infected_is_always_susceptible() {
        let h = small_history();
        for t in 1..=8 {
            assert_eq!(h.state_of(5, t).unwrap(), Susceptible);
        }
    }

    #[test]
    fn sir_infectious_interval() {
        let tr = PeriodSpec::sir(3).transitions_for(Framework::Sir, 0, 4);
        assert_eq!(tr.removal_time, Some(7));
        let states: Vec<_> = (3..=9).map(|t| tr.state_at(Framework::Sir, t)).collect();
        assert_eq!(
            states,
            vec![
                Susceptible,
                Susceptible,
                Infectious,
                Infectious,
                Infectious,
                Removed,
                Removed
            ]
        );
    }

    #[test]
    fn seir_exposed_then_infectious() {
        let tr = PeriodSpec::seir(5, 4).transitions_for(Framework::Seir, 0, 10);
        let f = Framework::Seir;
        assert_eq!(tr.state_at(f, 10), Susceptible);
        for t in 11..=15 {
            assert_eq!(tr.state_at(f, t), Exposed, "t={t}");
        }
        for t in 16..=19 {
            assert_eq!(tr.state_at(f, t), Infectious, "t={t}");
        }
        assert_eq!(tr.state_at(f, 20), Removed);
    }

    #[test]
    fn removal_override_truncates() {
        let mut p = PeriodSpec::seir(5, 4);
        p.removal_overrides.insert(3, 17);
        let tr = p.transitions_for(Framework::Seir, 3, 10);
        assert_eq!(tr.removal_time, Some(17));
        assert_eq!(tr.state_at(Framework::Seir, 18), Removed);
        // later overrides do not extend the period
        p.removal_overrides.insert(3, 40);
        assert_eq!(
            p.transitions_for(Framework::Seir, 3, 10).removal_time,
            Some(19)
        );
    }

    #[test]
    fn window_is_enforced() {
        let h = small_history();
        assert!(matches!(
            h.state_of(0, 0),
            Err(EpidemicError::OutOfWindow { t: 0, .. })
        ));
        assert!(h.state_of(0, 9).is_err());
        assert!(h.new_infections(8).is_err());
    }

    #[test]
    fn seeds_are_not_new_infections() {
        let h = small_history();
        assert!(h.new_infections(1).unwrap().is_empty());
        assert_eq!(h.new_infections(2).unwrap(), vec![2, 3]);
        assert_eq!(h.seeds(), vec![0, 1]);
    }

    #[test]
    fn new_infections_match_set_difference() {
        let h = small_history();
        for t in 1..8 {
            let brute: Vec<usize> = (0..h.len())
                .filter(|&i| {
                    h.state_of(i, t + 1).unwrap() == Infectious
                        && h.state_of(i, t).unwrap() != Infectious
                })
                .collect();
            assert_eq!(h.new_infections(t).unwrap(), brute, "t={t}");
        }
    }

    #[test]
    fn curve_of_small_history() {
        let h = small_history();
        // events at t=2 (two) and t=5 (one); entries for t=1..7
        assert_eq!(h.epidemic_curve(), vec![0, 2, 0, 0, 1, 0, 0]);
        let total: usize = h.epidemic_curve().iter().sum();
        assert_eq!(total, h.final_size() - h.seeds().len());
    }

    #[test]
    fn empty_epidemic_curve_is_zero() {
        let h = EpidemicHistory::new(Framework::Sir, vec![TransitionTimes::SUSCEPTIBLE; 4], 1, 6)
            .unwrap();
        assert_eq!(h.epidemic_curve(), vec![0; 5]);
    }

    #[test]
    fn counts_partition_population() {
        let h = small_history();
        for t in 1..=8 {
            let c = h.counts(t).unwrap();
            assert_eq!(c.iter().sum::<usize>(), h.len());
        }
        assert_eq!(h.counts(1).unwrap(), [4, 0, 2, 0]);
    }

    #[test]
    fn ordering_violations_are_rejected() {
        let err = EpidemicHistory::new(
            Framework::Sir,
            vec![sir(None, None), sir(Some(5), Some(4))],
            1,
            10,
        )
        .unwrap_err();
        assert!(matches!(err, EpidemicError::Invalid { id: 1, .. }));
        let seir_bad = TransitionTimes {
            exposure_time: Some(6),
            infection_time: Some(6),
            removal_time: Some(9),
        };
        assert!(EpidemicHistory::new(Framework::Seir, vec![seir_bad], 1, 10).is_err());
    }

    #[test]
    fn culled_without_infection_leaves_susceptible_set() {
        let tr = sir(None, Some(4));
        assert_eq!(tr.state_at(Framework::Sir, 4), Susceptible);
        assert_eq!(tr.state_at(Framework::Sir, 5), Removed);
        assert_eq!(tr.last_susceptible(Framework::Sir), Some(4));
    }

    #[test]
    fn events_round_trip() {
        let h = small_history();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        h.save_events(&path).unwrap();
        let back = load_events(&path, Framework::Sir, 1, 8).unwrap();
        assert_eq!(h, back);
    }

    #[test]
    fn load_rejects_removal_before_infection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        std::fs::write(
            &path,
            "id,exposure_time,infection_time,removal_time\n0,,3,5\n1,,6,2\n",
        )
        .unwrap();
        match load_events(&path, Framework::Sir, 1, 10) {
            Err(EpidemicError::Invalid { id, .. }) => assert_eq!(id, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_rejects_gaps_in_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        std::fs::write(
            &path,
            "id,exposure_time,infection_time,removal_time\n0,,,\n2,,,\n",
        )
        .unwrap();
        assert!(matches!(
            load_events(&path, Framework::Sir, 1, 10),
            Err(EpidemicError::Invalid { id: 1, .. })
        ));
    }

    #[test]
    fn truncation_forgets_future_events() {
        let h = small_history();
        let cut = h.truncated(4).unwrap();
        assert_eq!(cut.t_max(), 4);
        assert_eq!(cut.transitions()[2], h.transitions()[2]);
        assert_eq!(cut.transitions()[4], TransitionTimes::SUSCEPTIBLE);
        for t in 1..=4 {
            for i in 0..h.len() {
                assert_eq!(cut.state_of(i, t).unwrap(), h.state_of(i, t).unwrap());
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_history() -> impl Strategy<Value = EpidemicHistory> {
            (
                prop::collection::vec(prop::option::of(0i64..12), 1..20),
                1u32..5,
                prop::bool::ANY,
            )
                .prop_map(|(events, lambda, seir)| {
                    let (f, p) = if seir {
                        (Framework::Seir, PeriodSpec::seir(2, lambda))
                    } else {
                        (Framework::Sir, PeriodSpec::sir(lambda))
                    };
                    let tr = events
                        .iter()
                        .enumerate()
                        .map(|(i, e)| match e {
                            Some(e) => p.transitions_for(f, i, *e),
                            None => TransitionTimes::SUSCEPTIBLE,
                        })
                        .collect();
                    EpidemicHistory::new(f, tr, 1, 14).unwrap()
                })
        }

        proptest! {
            #[test]
            fn states_only_move_forward(h in arb_history()) {
                for i in 0..h.len() {
                    let mut prev = h.state_of(i, 1).unwrap();
                    for t in 2..=14 {
                        let s = h.state_of(i, t).unwrap();
                        prop_assert!(s >= prev);
                        prev = s;
                    }
                }
            }

            #[test]
            fn curve_consistent_with_state_changes(h in arb_history()) {
                let entering = match h.framework() {
                    Framework::Sir => Infectious,
                    Framework::Seir => Exposed,
                };
                let curve = h.epidemic_curve();
                for t in 1..14 {
                    let changed = (0..h.len()).filter(|&i| {
                        h.state_of(i, t).unwrap() == Susceptible
                            && h.state_of(i, t + 1).unwrap() == entering
                    }).count();
                    prop_assert_eq!(curve[(t - 1) as usize], changed);
                    let s = h.counts(t).unwrap()[0];
                    prop_assert!(curve[(t - 1) as usize] <= s);
                }
            }
        }
    }
}
