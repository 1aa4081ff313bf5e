//! Constraint-filtered, objective-ranked configuration queries.

mod dataset;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::analysis::ConfigMetrics;
pub use crate::metrics::{MetricId, UnknownMetric};
pub use dataset::{Dataset, DatasetError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    AtMost,
    AtLeast,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        }
    }
}

/// An inclusive bound on one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constraint {
    pub metric: MetricId,
    pub relation: Relation,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("constraint '{0}' must look like <metric><=<bound> or <metric>>=<bound>")]
    Shape(String),
    #[error(transparent)]
    Metric(#[from] UnknownMetric),
    #[error("bound '{0}' is not a finite number")]
    Bound(String),
    #[error("direction '{0}' must be min or max")]
    Direction(String),
}

impl Constraint {
    pub fn at_most(metric: MetricId, bound: f64) -> Self {
        Self {
            metric,
            relation: Relation::AtMost,
            bound,
        }
    }

    pub fn at_least(metric: MetricId, bound: f64) -> Self {
        Self {
            metric,
            relation: Relation::AtLeast,
            bound,
        }
    }

    pub fn admits(&self, value: f64) -> bool {
        match self.relation {
            Relation::AtMost => value <= self.bound,
            Relation::AtLeast => value >= self.bound,
        }
    }
}

impl FromStr for Constraint {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (at, relation) = match (s.find("<="), s.find(">=")) {
            (Some(i), None) => (i, Relation::AtMost),
            (None, Some(i)) => (i, Relation::AtLeast),
            _ => return Err(ParseError::Shape(s.to_string())),
        };
        let metric: MetricId = s[..at].parse()?;
        let raw = s[at + 2..].trim();
        let bound: f64 = raw
            .parse()
            .map_err(|_| ParseError::Bound(raw.to_string()))?;
        if !bound.is_finite() {
            return Err(ParseError::Bound(raw.to_string()));
        }
        Ok(Self {
            metric,
            relation,
            bound,
        })
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.metric, self.relation.symbol(), self.bound)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Minimize,
    Maximize,
}

impl Direction {
    /// Orders `a` before `b` when `a` is the better value.
    pub fn rank(self, a: f64, b: f64) -> Ordering {
        match self {
            Direction::Minimize => a.total_cmp(&b),
            Direction::Maximize => b.total_cmp(&a),
        }
    }
}

impl FromStr for Direction {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "min" | "minimize" => Ok(Direction::Minimize),
            "max" | "maximize" => Ok(Direction::Maximize),
            _ => Err(ParseError::Direction(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub constraints: Vec<Constraint>,
    pub objective: MetricId,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("metric accuracy needs an accuracy table; ingest one with --schema accuracy")]
    MissingJoin,
    #[error("metric {0} is not present in the dataset")]
    MissingMetric(MetricId),
    #[error("at least one metric is required")]
    NoMetrics,
}

fn check_resolvable(dataset: &Dataset, metric: MetricId) -> Result<(), QueryError> {
    if metric == MetricId::Accuracy && dataset.accuracy_table.is_none() {
        return Err(QueryError::MissingJoin);
    }
    if !dataset.is_empty() && !dataset.has_metric(metric) {
        return Err(QueryError::MissingMetric(metric));
    }
    Ok(())
}

/// Entries satisfying every constraint, in dataset order. An entry missing
/// a constrained value cannot be shown to satisfy it and is dropped.
pub fn filter<'a>(
    dataset: &'a Dataset,
    constraints: &[Constraint],
) -> Result<Vec<&'a ConfigMetrics>, QueryError> {
    for c in constraints {
        check_resolvable(dataset, c.metric)?;
    }
    Ok(dataset
        .entries
        .values()
        .filter(|e| {
            constraints
                .iter()
                .all(|c| dataset.value(e, c.metric).is_some_and(|v| c.admits(v)))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ranked<'a> {
    pub entry: &'a ConfigMetrics,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection<'a> {
    /// Best first; the first `tied` entries share the optimal value.
    Feasible {
        ranking: Vec<Ranked<'a>>,
        tied: usize,
    },
    /// No entry satisfies the constraints.
    Infeasible,
}

impl<'a> Selection<'a> {
    pub fn best(&self) -> Option<&Ranked<'a>> {
        self.ties().first()
    }

    pub fn ties(&self) -> &[Ranked<'a>] {
        match self {
            Selection::Feasible { ranking, tied } => &ranking[..*tied],
            Selection::Infeasible => &[],
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Selection::Feasible { .. })
    }
}

/// Ranks the feasible entries by the objective. Equal values keep dataset
/// order and are all reported as tied. Feasible entries lacking the
/// objective are left out of the ranking.
pub fn select_best<'a>(dataset: &'a Dataset, query: &Query) -> Result<Selection<'a>, QueryError> {
    check_resolvable(dataset, query.objective)?;
    let mut ranking: Vec<Ranked<'a>> = filter(dataset, &query.constraints)?
        .into_iter()
        .filter_map(|entry| {
            Some(Ranked {
                entry,
                value: dataset.value(entry, query.objective)?,
            })
        })
        .collect();
    if ranking.is_empty() {
        return Ok(Selection::Infeasible);
    }
    ranking.sort_by(|a, b| query.direction.rank(a.value, b.value));
    let best = ranking[0].value;
    let tied = ranking.iter().take_while(|r| r.value == best).count();
    Ok(Selection::Feasible { ranking, tied })
}

/// Entries not dominated on the listed metrics, in dataset order. Entries
/// missing any of the metrics are left out.
pub fn pareto_front<'a>(
    dataset: &'a Dataset,
    objectives: &[(MetricId, Direction)],
) -> Result<Vec<&'a ConfigMetrics>, QueryError> {
    if objectives.is_empty() {
        return Err(QueryError::NoMetrics);
    }
    for &(m, _) in objectives {
        check_resolvable(dataset, m)?;
    }
    let mut points: Vec<(usize, Vec<f64>)> = dataset
        .entries
        .values()
        .enumerate()
        .filter_map(|(i, e)| {
            let v: Option<Vec<f64>> = objectives
                .iter()
                .map(|&(m, _)| dataset.value(e, m))
                .collect();
            Some((i, v?))
        })
        .collect();
    // Lexicographically best first: anything dominating a point sorts before it.
    points.sort_by(|a, b| {
        objectives
            .iter()
            .enumerate()
            .map(|(k, &(_, d))| d.rank(a.1[k], b.1[k]))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let dominates = |a: &[f64], b: &[f64]| {
        let mut strict = false;
        for (k, &(_, d)) in objectives.iter().enumerate() {
            match d.rank(a[k], b[k]) {
                Ordering::Greater => return false,
                Ordering::Less => strict = true,
                Ordering::Equal => {}
            }
        }
        strict
    };
    let mut front: Vec<(usize, Vec<f64>)> = Vec::new();
    for p in points {
        if !front.iter().any(|f| dominates(&f.1, &p.1)) {
            front.push(p);
        }
    }
    front.sort_by_key(|f| f.0);
    Ok(front
        .into_iter()
        .map(|(i, _)| &dataset.entries[i])
        .collect())
}

pub struct UseCaseRow<'a> {
    pub query: Query,
    pub selection: Selection<'a>,
}

/// One row per query.
pub struct UseCaseReport<'a> {
    pub rows: Vec<UseCaseRow<'a>>,
}

pub fn use_case_report<'a>(
    dataset: &'a Dataset,
    queries: &[Query],
) -> Result<UseCaseReport<'a>, QueryError> {
    let rows = queries
        .iter()
        .map(|q| {
            Ok(UseCaseRow {
                query: q.clone(),
                selection: select_best(dataset, q)?,
            })
        })
        .collect::<Result<_, QueryError>>()?;
    Ok(UseCaseReport { rows })
}

pub const INFEASIBLE: &str = "infeasible: no configuration satisfies the constraints";

fn bound_cell(c: &Constraint) -> String {
    let sym = match c.relation {
        Relation::AtMost => "≤",
        Relation::AtLeast => "≥",
    };
    format!("{sym} {} {}", c.bound, c.metric.unit())
}

fn objective_header(q: &Query) -> String {
    let extreme = match q.direction {
        Direction::Minimize => "Lowest",
        Direction::Maximize => "Highest",
    };
    format!("Configuration with {extreme} {}", q.objective.label())
}

impl UseCaseReport<'_> {
    /// Header and cells: one column per constraint metric when every query
    /// constrains the same metrics in the same order, else one combined
    /// column.
    pub fn cells(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let Some(first) = self.rows.first() else {
            return (Vec::new(), Vec::new());
        };
        let shape = |q: &Query| q.constraints.iter().map(|c| c.metric).collect::<Vec<_>>();
        let uniform = self
            .rows
            .iter()
            .all(|r| shape(&r.query) == shape(&first.query));
        let mut header: Vec<String> = if uniform {
            first
                .query
                .constraints
                .iter()
                .map(|c| c.metric.label().to_string())
                .collect()
        } else {
            vec!["Constraints".to_string()]
        };
        let same_objective = self.rows.iter().all(|r| {
            (r.query.objective, r.query.direction) == (first.query.objective, first.query.direction)
        });
        header.push(if same_objective {
            objective_header(&first.query)
        } else {
            "Configuration".to_string()
        });

        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut cells: Vec<String> = if uniform {
                    row.query.constraints.iter().map(bound_cell).collect()
                } else {
                    let all: Vec<String> = row
                        .query
                        .constraints
                        .iter()
                        .map(|c| format!("{} {}", c.metric.label(), bound_cell(c)))
                        .collect();
                    vec![if all.is_empty() {
                        "none".to_string()
                    } else {
                        all.join(", ")
                    }]
                };
                let mut chosen = match &row.selection {
                    Selection::Infeasible => INFEASIBLE.to_string(),
                    Selection::Feasible { .. } => row
                        .selection
                        .ties()
                        .iter()
                        .map(|r| r.entry.config.describe())
                        .collect::<Vec<_>>()
                        .join("; tied with "),
                };
                if !same_objective {
                    chosen = format!("{}: {chosen}", objective_header(&row.query));
                }
                cells.push(chosen);
                cells
            })
            .collect();
        (header, rows)
    }
}

impl fmt::Display for UseCaseReport<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (header, rows) = self.cells();
        if header.is_empty() {
            return Ok(());
        }
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for row in &rows {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |f: &mut fmt::Formatter<'_>, cells: &[String]| -> fmt::Result {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            writeln!(f, "| {} |", padded.join(" | "))
        };
        let rule: String = widths
            .iter()
            .map(|&w| format!("+{}", "-".repeat(w + 2)))
            .collect::<String>()
            + "+";
        writeln!(f, "{rule}")?;
        line(f, &header)?;
        writeln!(f, "{rule}")?;
        for row in &rows {
            line(f, row)?;
        }
        writeln!(f, "{rule}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConfigPoint, Quantization};
    use proptest::prelude::*;

    fn entry(i: usize, values: &[(MetricId, f64)]) -> ConfigMetrics {
        let mut e = ConfigMetrics::new(ConfigPoint::new(
            "dev",
            &format!("{i}W"),
            "m",
            Quantization::None,
        ));
        for &(m, v) in values {
            e.medians.set(m, Some(v));
        }
        e
    }

    fn dataset(entries: Vec<ConfigMetrics>) -> Dataset {
        let mut d = Dataset::new();
        for e in entries {
            d.merge(e).unwrap();
        }
        d
    }

    #[test]
    fn parse_constraints() {
        let c: Constraint = "gen_latency<=7.0".parse().unwrap();
        assert_eq!(c, Constraint::at_most(MetricId::GenLatency, 7.0));
        let c: Constraint = " accuracy >= 40 ".parse().unwrap();
        assert_eq!(c, Constraint::at_least(MetricId::Accuracy, 40.0));
        assert!(matches!(
            "gen_latency<7".parse::<Constraint>(),
            Err(ParseError::Shape(_))
        ));
        assert!(matches!(
            "gen_latency<=inf".parse::<Constraint>(),
            Err(ParseError::Bound(_))
        ));
        let err = "speed<=3".parse::<Constraint>().unwrap_err().to_string();
        assert!(
            err.contains("gen_latency") && err.contains("speed"),
            "{err}"
        );
        assert_eq!(c.to_string(), "accuracy>=40");
    }

    #[test]
    fn bounds_are_inclusive() {
        let d = dataset(vec![entry(0, &[(MetricId::GenLatency, 7.0)])]);
        assert_eq!(
            filter(&d, &[Constraint::at_most(MetricId::GenLatency, 7.0)])
                .unwrap()
                .len(),
            1
        );
        assert_eq!(
            filter(&d, &[Constraint::at_least(MetricId::GenLatency, 7.0)])
                .unwrap()
                .len(),
            1
        );
        assert_eq!(filter(&d, &[]).unwrap().len(), 1);
    }

    #[test]
    fn missing_join_and_metric() {
        let d = dataset(vec![entry(0, &[(MetricId::GenLatency, 7.0)])]);
        assert_eq!(
            filter(&d, &[Constraint::at_least(MetricId::Accuracy, 1.0)]),
            Err(QueryError::MissingJoin)
        );
        assert_eq!(
            filter(&d, &[Constraint::at_most(MetricId::PeakRam, 1.0)]),
            Err(QueryError::MissingMetric(MetricId::PeakRam))
        );
    }

    #[test]
    fn ties_are_reported_in_dataset_order() {
        let d = dataset(vec![
            entry(0, &[(MetricId::GenLatency, 9.0)]),
            entry(1, &[(MetricId::GenLatency, 8.0)]),
            entry(2, &[(MetricId::GenLatency, 8.0)]),
        ]);
        let q = Query {
            constraints: vec![],
            objective: MetricId::GenLatency,
            direction: Direction::Minimize,
        };
        let s = select_best(&d, &q).unwrap();
        let tied: Vec<&str> = s
            .ties()
            .iter()
            .map(|r| r.entry.config.power_model.as_str())
            .collect();
        assert_eq!(tied, ["1W", "2W"]);
        let q = Query {
            constraints: vec![Constraint::at_most(MetricId::GenLatency, 0.0)],
            ..q
        };
        assert_eq!(select_best(&d, &q).unwrap(), Selection::Infeasible);
    }

    #[test]
    fn singleton_dataset() {
        let d = dataset(vec![entry(0, &[(MetricId::PeakRam, 900.0)])]);
        let q = Query {
            constraints: vec![Constraint::at_most(MetricId::PeakRam, 1000.0)],
            objective: MetricId::PeakRam,
            direction: Direction::Maximize,
        };
        assert_eq!(
            select_best(&d, &q).unwrap().best().unwrap().entry,
            &d.entries[0]
        );
    }

    #[test]
    fn pareto_small_cases() {
        let d = dataset(vec![
            entry(0, &[(MetricId::GenLatency, 1.0), (MetricId::PeakRam, 9.0)]),
            entry(1, &[(MetricId::GenLatency, 9.0), (MetricId::PeakRam, 1.0)]),
        ]);
        let objs = [
            (MetricId::GenLatency, Direction::Minimize),
            (MetricId::PeakRam, Direction::Minimize),
        ];
        assert_eq!(pareto_front(&d, &objs).unwrap().len(), 2);
        assert_eq!(pareto_front(&d, &[]), Err(QueryError::NoMetrics));
        let single = pareto_front(&d, &objs[..1]).unwrap();
        assert_eq!(single, vec![&d.entries[0]]);
    }

    #[test]
    fn report_layout() {
        let d = dataset(vec![
            entry(
                0,
                &[(MetricId::PeakPowerGen, 40.0), (MetricId::GenLatency, 9.0)],
            ),
            entry(
                1,
                &[(MetricId::PeakPowerGen, 20.0), (MetricId::GenLatency, 12.0)],
            ),
        ]);
        let q = |p: f64| Query {
            constraints: vec![Constraint::at_most(MetricId::PeakPowerGen, p)],
            objective: MetricId::GenLatency,
            direction: Direction::Minimize,
        };
        let report = use_case_report(&d, &[q(45.0), q(10.0)]).unwrap();
        let (header, rows) = report.cells();
        assert_eq!(header, ["Power", "Configuration with Lowest Gen. Latency"]);
        assert_eq!(
            rows[0],
            ["≤ 45 W", "dev, 0W NV power model, m, no quantization"]
        );
        assert_eq!(rows[1][1], INFEASIBLE);
        let text = report.to_string();
        assert_eq!(text.lines().count(), 6);
        assert!(use_case_report(&d, &[]).unwrap().to_string().is_empty());
    }

    fn random_dataset(values: &[Vec<f64>]) -> Dataset {
        let metrics = [
            MetricId::GenLatency,
            MetricId::PeakPowerGen,
            MetricId::PeakRam,
        ];
        dataset(
            values
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    entry(
                        i,
                        &metrics
                            .iter()
                            .copied()
                            .zip(v.iter().copied())
                            .collect::<Vec<_>>(),
                    )
                })
                .collect(),
        )
    }

    proptest! {
        #[test]
        fn adding_a_constraint_never_enlarges(
            values in prop::collection::vec(prop::collection::vec(0u8..10, 3), 1..30),
            b1 in 0u8..10, b2 in 0u8..10,
        ) {
            let values: Vec<Vec<f64>> = values.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect();
            let d = random_dataset(&values);
            let c1 = Constraint::at_most(MetricId::GenLatency, b1 as f64);
            let c2 = Constraint::at_least(MetricId::PeakRam, b2 as f64);
            let one = filter(&d, &[c1]).unwrap();
            let two = filter(&d, &[c1, c2]).unwrap();
            prop_assert!(two.len() <= one.len());
            prop_assert!(two.iter().all(|e| one.contains(e)));
        }

        #[test]
        fn scaling_a_metric_keeps_the_choice(
            values in prop::collection::vec(prop::collection::vec(0u8..10, 3), 1..30),
            scale in 0.001f64..1000.0,
        ) {
            let values: Vec<Vec<f64>> = values.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect();
            let scaled: Vec<Vec<f64>> = values.iter().map(|v| vec![v[0] * scale, v[1], v[2]]).collect();
            let q = Query { constraints: vec![], objective: MetricId::GenLatency, direction: Direction::Maximize };
            let (a, b) = (random_dataset(&values), random_dataset(&scaled));
            let keys = |d: &Dataset| -> Vec<ConfigPoint> {
                select_best(d, &q).unwrap().ties().iter().map(|r| r.entry.config.clone()).collect()
            };
            prop_assert_eq!(keys(&a), keys(&b));
        }

        #[test]
        fn one_metric_front_is_the_tie_set(
            values in prop::collection::vec(prop::collection::vec(0u8..5, 3), 1..30),
            maximize in any::<bool>(),
        ) {
            let values: Vec<Vec<f64>> = values.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect();
            let d = random_dataset(&values);
            let direction = if maximize { Direction::Maximize } else { Direction::Minimize };
            let q = Query { constraints: vec![], objective: MetricId::PeakRam, direction };
            let sel = select_best(&d, &q).unwrap();
            let ties: Vec<&ConfigMetrics> = sel.ties().iter().map(|r| r.entry).collect();
            prop_assert_eq!(pareto_front(&d, &[(MetricId::PeakRam, direction)]).unwrap(), ties);
        }
    }
}
