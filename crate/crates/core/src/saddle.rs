//! Saddle-point solver for objectives that are convex in the model parameters
//! and linear in a simplex-constrained labeling.
//!
//! Each iteration fits the parameters exactly for the current labeling, takes
//! one projected gradient-ascent step on the labeling, and stops once the
//! objective changes by at most `epsilon`.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::simplex::{is_row_stochastic, project_rows_with, SoftLabelMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    /// `alpha0 / (t + 1)`
    InverseT,
    /// `alpha0 / sqrt(t + 1)`
    InverseSqrtT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub alpha0: f64,
    pub schedule: StepSchedule,
    pub epsilon: f64,
    pub max_iter: usize,
    pub trace: bool,
    /// Multiply the learning rate by the number of target samples, so that
    /// `alpha0` is a step on each sample's own simplex rather than on the
    /// `1/m`-scaled mean gradient.
    pub per_sample_step: bool,
    /// Debugging aid: step against the gradient instead of along it.
    pub descent: bool,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            schedule: StepSchedule::InverseT,
            epsilon: 1e-9,
            max_iter: 5000,
            trace: false,
            per_sample_step: true,
            descent: false,
            exec: Execution::default(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::InvalidOption(format!("alpha0 must be > 0, got {}", self.alpha0)));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidOption(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidOption("max_iter must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate for the update that produces iterate `t + 1`.
    pub fn step_size(&self, t: usize, m: usize) -> f64 {
        let base = match self.schedule {
            StepSchedule::InverseT => self.alpha0 / (t + 1) as f64,
            StepSchedule::InverseSqrtT => self.alpha0 / ((t + 1) as f64).sqrt(),
        };
        if self.per_sample_step {
            base * m as f64
        } else {
            base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleResult<P> {
    pub params: P,
    pub q_star: SoftLabelMatrix,
    /// TCP objective at (`params`, `q_star`).
    pub objective: f64,
    /// Exact maximum of the contrast over all labelings for `params`, when
    /// the model provides it. Non-positive means never worse than the source.
    pub worst_case_contrast: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Option<Vec<TraceEntry>>,
}

/// Runs the alternating minimisation / projected-ascent loop.
///
/// * `inner_min(q, previous)` returns the exact minimiser for the labeling
///   `q`; `previous` is the last iterate's parameters (`None` at start).
/// * `grad_q(params)` is the gradient of the objective in `q`, `m × k`.
/// * `objective(params, q)` is the TCP value.
///
/// Starts from the uniform labeling. When `max_iter` is exhausted the iterate
/// with the largest objective is returned with `converged == false`; every
/// iterate's value lower-bounds the saddle value because the inner step is exact.
pub fn solve_saddle<P, I, G, O>(
    mut inner_min: I,
    mut grad_q: G,
    mut objective: O,
    m: usize,
    k: usize,
    opts: &SolverOptions,
) -> Result<SaddleResult<P>>
where
    P: Clone,
    I: FnMut(&SoftLabelMatrix, Option<&P>) -> Result<P>,
    G: FnMut(&P) -> Result<DMatrix<f64>>,
    O: FnMut(&P, &SoftLabelMatrix) -> Result<f64>,
{
    opts.validate()?;
    let mut q = SoftLabelMatrix::uniform(m, k);
    let mut params = inner_min(&q, None)?;
    let mut value = finite(objective(&params, &q)?, 0)?;

    let mut trace = opts.trace.then(|| {
        vec![TraceEntry {
            iteration: 0,
            objective: value,
            step_size: 0.0,
        }]
    });
    let mut best = (params.clone(), q.clone(), value);
    let sign = if opts.descent { -1.0 } else { 1.0 };

    for t in 0..opts.max_iter {
        let step = opts.step_size(t, m);
        let g = grad_q(&params)?;
        if g.shape() != (m, k) {
            return Err(Error::DimensionMismatch {
                what: "gradient rows",
                expected: m,
                found: g.nrows(),
            });
        }
        let moved = q.clone().into_inner() + g * (sign * step);
        let q_next = project_rows_with(&moved, opts.exec);
        debug_assert!(is_row_stochastic(
            crate::data::Labeling::weights(&q_next),
            1e-12
        ));
        let params_next = inner_min(&q_next, Some(&params))?;
        let value_next = finite(objective(&params_next, &q_next)?, t + 1)?;

        if let Some(tr) = trace.as_mut() {
            tr.push(TraceEntry {
                iteration: t + 1,
                objective: value_next,
                step_size: step,
            });
        }

        let delta = (value_next - value).abs();
        q = q_next;
        params = params_next;
        value = value_next;
        if value > best.2 {
            best = (params.clone(), q.clone(), value);
        }
        if delta <= opts.epsilon {
            return Ok(SaddleResult {
                params,
                q_star: q,
                objective: value,
                worst_case_contrast: None,
                iterations: t + 1,
                converged: true,
                trace,
            });
        }
    }

    Ok(SaddleResult {
        params: best.0,
        q_star: best.1,
        objective: best.2,
        worst_case_contrast: None,
        iterations: opts.max_iter,
        converged: false,
        trace,
    })
}

fn finite(value: f64, iteration: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { iteration, value })
    }
}

/// Writes `iteration,objective,step_size` rows.
pub fn write_trace_csv<W: Write>(trace: &[TraceEntry], mut out: W) -> Result<()> {
    writeln!(out, "iteration,objective,step_size")?;
    for e in trace {
        writeln!(out, "{},{},{}", e.iteration, e.objective, e.step_size)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Labeling;

    /// Linear objective `Σ_jk c_jk q_jk` with no parameters.
    fn linear_program(c: DMatrix<f64>, opts: &SolverOptions) -> SaddleResult<()> {
        let (m, k) = c.shape();
        solve_saddle(
            |_: &SoftLabelMatrix, _: Option<&()>| Ok(()),
            |_: &()| Ok(c.clone()),
            |_: &(), q: &SoftLabelMatrix| Ok(c.component_mul(q.weights()).sum()),
            m,
            k,
            opts,
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_converges_immediately() {
        let r = linear_program(DMatrix::zeros(3, 2), &SolverOptions::default());
        assert!(r.converged);
        assert!(r.iterations <= 2);
        assert!(r.q_star.weights().iter().all(|&v| v == 0.5));
        assert!(r.objective <= 0.0);
    }

    #[test]
    fn single_sample_moves_to_best_vertex() {
        let c = DMatrix::from_row_slice(1, 2, &[0.3, 1.0]);
        let r = linear_program(c, &SolverOptions::default());
        assert!((r.q_star.weights()[(0, 1)] - 1.0).abs() < 1e-3);
        assert!((r.objective - 1.0).abs() < 1e-3);
    }

    #[test]
    fn descent_flag_reverses_direction() {
        let c = DMatrix::from_row_slice(1, 2, &[0.3, 1.0]);
        let opts = SolverOptions {
            descent: true,
            ..Default::default()
        };
        let r = linear_program(c, &opts);
        assert!((r.q_star.weights()[(0, 0)] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn non_finite_objective_reports_iteration() {
        let err = solve_saddle(
            |_: &SoftLabelMatrix, prev: Option<&u32>| Ok(prev.map_or(0, |p| p + 1)),
            |_: &u32| Ok(DMatrix::from_element(1, 2, 1.0)),
            |p: &u32, _: &SoftLabelMatrix| Ok(if *p == 3 { f64::NAN } else { -(*p as f64) }),
            1,
            2,
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { iteration: 3, .. }));
    }

    #[test]
    fn max_iter_returns_best_iterate() {
        // Objective increases then decreases with the iteration counter.
        let r = solve_saddle(
            |_: &SoftLabelMatrix, prev: Option<&u32>| Ok(prev.map_or(0, |p| p + 1)),
            |_: &u32| Ok(DMatrix::zeros(1, 2)),
            |p: &u32, _: &SoftLabelMatrix| Ok(-((*p as f64) - 4.0).powi(2)),
            1,
            2,
            &SolverOptions {
                max_iter: 10,
                trace: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!r.converged);
        assert_eq!(r.params, 4);
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.trace.unwrap().len(), 11);
    }

    #[test]
    fn rejects_bad_options() {
        for opts in [
            SolverOptions { alpha0: 0.0, ..Default::default() },
            SolverOptions { epsilon: 0.0, ..Default::default() },
            SolverOptions { max_iter: 0, ..Default::default() },
        ] {
            assert!(opts.validate().is_err());
        }
    }

    #[test]
    fn schedules() {
        let o = SolverOptions { per_sample_step: false, alpha0: 2.0, ..Default::default() };
        assert_eq!(o.step_size(3, 10), 0.5);
        let o = SolverOptions { schedule: StepSchedule::InverseSqrtT, ..o };
        assert_eq!(o.step_size(3, 10), 1.0);
        let o = SolverOptions { per_sample_step: true, ..o };
        assert_eq!(o.step_size(3, 10), 10.0);
    }
}
