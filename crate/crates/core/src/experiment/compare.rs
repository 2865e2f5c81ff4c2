//! Windowed comparison of one agent's mean curve across experiments.

use std::fmt;

use super::curves::window_mean;
use super::{CurveSet, ExperimentError};

/// Half-open epoch windows, 0-based.
pub const WINDOWS: [(usize, usize); 3] = [(20, 40), (40, 60), (60, 100)];

/// Relative gap below which two neighbours in a ranking are flagged.
pub const MARGIN: f64 = 0.05;

/// `a >= b * (1 + margin)`.
pub fn beats(a: f64, b: f64, margin: f64) -> bool {
    a >= b * (1.0 + margin)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRow {
    pub label: String,
    /// One entry per window; `None` when the run is too short for it.
    pub means: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub agent: String,
    pub windows: Vec<(usize, usize)>,
    pub rows: Vec<WindowRow>,
    /// Per window, labels ordered by decreasing mean.
    pub rankings: Vec<Vec<String>>,
    /// Neighbouring ranks separated by less than [`MARGIN`].
    pub flags: Vec<String>,
}

/// Windowed means of `agent` for every labelled curve set, and their ordering.
pub fn compare_report(
    sets: &[(String, CurveSet)],
    agent: &str,
    windows: &[(usize, usize)],
) -> Result<CompareReport, ExperimentError> {
    let first = sets
        .first()
        .ok_or_else(|| ExperimentError::InvalidSpec("nothing to compare".into()))?;
    let epochs = first.1.epochs();
    let mut rows = Vec::with_capacity(sets.len());
    for (label, cs) in sets {
        if cs.epochs() != epochs {
            return Err(ExperimentError::InvalidSpec(format!(
                "{label} has {} epochs, {} has {epochs}",
                cs.epochs(),
                first.0
            )));
        }
        let a = cs
            .agent_index(agent)
            .ok_or_else(|| ExperimentError::InvalidSpec(format!("{label} has no agent {agent}")))?;
        rows.push(WindowRow {
            label: label.clone(),
            means: windows
                .iter()
                .map(|&(s, e)| window_mean(&cs.mean[a], s, e))
                .collect(),
        });
    }

    let mut rankings = Vec::with_capacity(windows.len());
    let mut flags = Vec::new();
    for (w, &(s, e)) in windows.iter().enumerate() {
        let mut ranked: Vec<(&str, f64)> = rows
            .iter()
            .filter_map(|r| r.means[w].map(|m| (r.label.as_str(), m)))
            .collect();
        ranked.sort_by(|x, y| y.1.total_cmp(&x.1));
        for pair in ranked.windows(2) {
            if !beats(pair[0].1, pair[1].1, MARGIN) {
                flags.push(format!(
                    "epochs {s}-{e}: {} ({:.2}) leads {} ({:.2}) by less than {:.0}%",
                    pair[0].0,
                    pair[0].1,
                    pair[1].0,
                    pair[1].1,
                    MARGIN * 100.0
                ));
            }
        }
        rankings.push(ranked.into_iter().map(|(l, _)| l.to_string()).collect());
    }
    Ok(CompareReport {
        agent: agent.to_string(),
        windows: windows.to_vec(),
        rows,
        rankings,
        flags,
    })
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(5)
            .max(5);
        write!(f, "{:width$}", "label")?;
        for (s, e) in &self.windows {
            write!(f, "  {:>10}", format!("{s}-{e}"))?;
        }
        writeln!(f)?;
        for row in &self.rows {
            write!(f, "{:width$}", row.label)?;
            for m in &row.means {
                match m {
                    Some(v) => write!(f, "  {v:>10.2}")?,
                    None => write!(f, "  {:>10}", "-")?,
                }
            }
            writeln!(f)?;
        }
        for ((s, e), ranking) in self.windows.iter().zip(&self.rankings) {
            if !ranking.is_empty() {
                writeln!(
                    f,
                    "agent {} epochs {s}-{e}: {}",
                    self.agent,
                    ranking.join(" > ")
                )?;
            }
        }
        for flag in &self.flags {
            writeln!(f, "FLAG {flag}")?;
        }
        Ok(())
    }
}
