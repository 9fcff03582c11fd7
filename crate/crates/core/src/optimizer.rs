//! Interaction-time sweeps and a grid-then-refine optimizer.
//!
//! Every pass of the template protocol is one time variable, in pass order.
//! Grid points are evaluated in parallel and merged by grid index, so results
//! are identical regardless of thread scheduling.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{fidelity_no_detection, fidelity_post_selected, TargetState};
use crate::protocol::{project_atom, AtomLevel, ProtocolSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Fidelity of the post-selected field state.
    #[default]
    Fidelity,
    /// Fidelity of the field with the atom traced out.
    FidelityNoDetection,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Fidelity => "fidelity",
            Objective::FidelityNoDetection => "fidelity_no_detection",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub times: Vec<f64>,
    /// Objective value; `None` when the detection branch is empty.
    pub fidelity: Option<f64>,
    /// Probability of the detection outcome (`|g>` unless the template says otherwise).
    pub probability: f64,
}

impl SweepRecord {
    pub fn is_empty_branch(&self) -> bool {
        self.fidelity.is_none()
    }

    fn feasible(&self, floor: Option<f64>) -> Option<f64> {
        let f = self.fidelity?;
        match floor {
            Some(p) if self.probability < p => None,
            _ => Some(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axes: Vec<Vec<f64>>,
    pub records: Vec<SweepRecord>,
    /// Index into `records` of the maximal objective, if any record is defined.
    pub best: Option<usize>,
}

impl SweepResult {
    pub fn best_record(&self) -> Option<&SweepRecord> {
        self.best.map(|i| &self.records[i])
    }

    /// Argmax restricted to records whose probability reaches `floor`.
    pub fn best_with_floor(&self, floor: Option<f64>) -> Option<usize> {
        argmax(&self.records, floor)
    }
}

// Records arrive in lexicographic time order, so keeping the first maximum
// breaks ties toward the smallest time tuple.
fn argmax(records: &[SweepRecord], floor: Option<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in records.iter().enumerate() {
        if let Some(f) = r.feasible(floor) {
            if best.is_none_or(|(_, b)| f > b) {
                best = Some((i, f));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Evaluate the template at one set of pass durations.
pub fn evaluate(
    template: &ProtocolSpec,
    times: &[f64],
    objective: Objective,
    target: &TargetState,
) -> Result<SweepRecord> {
    let spec = template.with_durations(times)?;
    let state = spec.evolve()?;
    let detect = spec.detection.unwrap_or(AtomLevel::G);
    let (fidelity, probability) = match objective {
        Objective::Fidelity => match fidelity_post_selected(&state, detect, target) {
            Ok(f) => (Some(f.fidelity), f.probability),
            Err(Error::EmptyBranch { probability, .. }) => (None, probability),
            Err(e) => return Err(e),
        },
        Objective::FidelityNoDetection => {
            let f = fidelity_no_detection(&state, target)?;
            let p = match project_atom(&state, detect) {
                Ok(c) => c.probability,
                Err(Error::EmptyBranch { probability, .. }) => probability,
                Err(e) => return Err(e),
            };
            (Some(f), p)
        }
    };
    Ok(SweepRecord { times: times.to_vec(), fidelity, probability })
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidGrid(format!("time {t} is not a finite nonnegative value")))
    }
}

fn evaluate_all(
    template: &ProtocolSpec,
    points: Vec<Vec<f64>>,
    objective: Objective,
    target: &TargetState,
) -> Result<Vec<SweepRecord>> {
    points.into_par_iter().map(|times| evaluate(template, &times, objective, target)).collect()
}

/// Evaluate every point of the Cartesian product of `grids`.
///
/// Axis values are sorted ascending; records are ordered lexicographically
/// with the last axis varying fastest.
pub fn sweep(
    template: &ProtocolSpec,
    grids: &[Vec<f64>],
    objective: Objective,
    target: &TargetState,
) -> Result<SweepResult> {
    template.validate()?;
    if grids.len() != template.passes.len() {
        return Err(Error::InvalidGrid(format!(
            "{} grids given for {} passes",
            grids.len(),
            template.passes.len()
        )));
    }
    let mut axes = grids.to_vec();
    for axis in &mut axes {
        if axis.is_empty() {
            return Err(Error::InvalidGrid("empty time grid".into()));
        }
        for &t in axis.iter() {
            check_time(t)?;
        }
        axis.sort_by(f64::total_cmp);
    }

    let total: usize = axes.iter().map(Vec::len).product();
    let points: Vec<Vec<f64>> = (0..total)
        .map(|mut idx| {
            let mut times = vec![0.0; axes.len()];
            for (slot, axis) in times.iter_mut().zip(&axes).rev() {
                *slot = axis[idx % axis.len()];
                idx /= axis.len();
            }
            times
        })
        .collect();
    let records = evaluate_all(template, points, objective, target)?;
    let best = argmax(&records, None);
    Ok(SweepResult { axes, records, best })
}

/// `points` evenly spaced values from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (stop - start) / (points - 1) as f64;
            (0..points)
                .map(|i| if i + 1 == points { stop } else { start + step * i as f64 })
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    /// Coarse grid points per axis.
    pub coarse_points: usize,
    /// Refinement stops once every bracket is narrower than this fraction of its bound.
    pub relative_tolerance: f64,
    /// Candidates tried on each side of the incumbent per axis and iteration.
    pub candidates_per_side: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings { coarse_points: 64, relative_tolerance: 1e-3, candidates_per_side: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub best: SweepRecord,
    pub objective: Objective,
    pub min_probability: Option<f64>,
    /// Best coarse-grid record the refinement started from.
    pub coarse_best: SweepRecord,
    /// Incumbent objective after the coarse grid and after each refinement round.
    pub history: Vec<f64>,
    pub evaluations: usize,
}

pub fn optimize_times(
    template: &ProtocolSpec,
    bounds: &[(f64, f64)],
    target: &TargetState,
    objective: Objective,
    min_probability: Option<f64>,
) -> Result<OptimizeResult> {
    optimize_times_with(template, bounds, target, objective, min_probability, OptimizerSettings::default())
}

/// Coarse grid over `bounds`, then per-axis bracket halving around the
/// incumbent. Bound intervals may be degenerate (`lo == hi`).
pub fn optimize_times_with(
    template: &ProtocolSpec,
    bounds: &[(f64, f64)],
    target: &TargetState,
    objective: Objective,
    min_probability: Option<f64>,
    settings: OptimizerSettings,
) -> Result<OptimizeResult> {
    if let Some(p) = min_probability {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("min_probability {p} outside [0, 1]")));
        }
    }
    if settings.coarse_points < 2 || settings.candidates_per_side == 0 || settings.relative_tolerance.is_nan() || settings.relative_tolerance <= 0.0 {
        return Err(Error::InvalidParameter("invalid optimizer settings".into()));
    }
    for &(lo, hi) in bounds {
        check_time(lo)?;
        check_time(hi)?;
        if lo > hi {
            return Err(Error::InvalidGrid(format!("bound [{lo}, {hi}] is reversed")));
        }
    }
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| if lo == hi { vec![lo] } else { linspace(lo, hi, settings.coarse_points) })
        .collect();
    let coarse = sweep(template, &axes, objective, target)?;
    let start = coarse
        .best_with_floor(min_probability)
        .ok_or(Error::NoFeasiblePoint(min_probability.unwrap_or(0.0)))?;
    let coarse_best = coarse.records[start].clone();
    let mut evaluations = coarse.records.len();

    let mut incumbent = coarse_best.clone();
    let mut value = incumbent.fidelity.expect("feasible records have a fidelity");
    let mut history = vec![value];
    let widths: Vec<f64> = bounds.iter().map(|&(lo, hi)| hi - lo).collect();
    let mut half: Vec<f64> = widths.iter().map(|w| w / (settings.coarse_points - 1) as f64).collect();
    let m = settings.candidates_per_side;

    let active = |half: &[f64]| {
        widths.iter().zip(half).any(|(&w, &h)| w > 0.0 && 2.0 * h >= settings.relative_tolerance * w)
    };
    while active(&half) {
        for axis in 0..bounds.len() {
            if widths[axis] == 0.0 {
                continue;
            }
            let (lo, hi) = bounds[axis];
            let centre = incumbent.times[axis];
            let mut values: Vec<f64> = (1..=m)
                .flat_map(|k| {
                    let off = half[axis] * k as f64 / m as f64;
                    [centre - off, centre + off]
                })
                .map(|t| t.clamp(lo, hi))
                .filter(|&t| t != centre)
                .collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            let points = values
                .into_iter()
                .map(|t| {
                    let mut times = incumbent.times.clone();
                    times[axis] = t;
                    times
                })
                .collect();
            let candidates = evaluate_all(template, points, objective, target)?;
            evaluations += candidates.len();
            if let Some(i) = argmax(&candidates, min_probability) {
                let f = candidates[i].fidelity.expect("feasible");
                if f > value {
                    value = f;
                    incumbent = candidates[i].clone();
                }
            }
        }
        for h in &mut half {
            *h *= 0.5;
        }
        history.push(value);
    }

    Ok(OptimizeResult { best: incumbent, objective, min_probability, coarse_best, history, evaluations })
}
