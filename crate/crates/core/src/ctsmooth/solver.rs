//! Dense Levenberg-Marquardt on a manifold.

use nalgebra::{DMatrix, DVector};

/// A nonlinear least-squares problem over a state that is updated by a
/// retraction in a flat tangent space.
pub trait Problem {
    type State: Clone;

    /// Robustified cost, or `None` where the cost is undefined.
    fn cost(&self, state: &Self::State) -> Option<f64>;

    /// Gauss-Newton normal equations `(JᵀWJ, JᵀWr)` at `state`.
    fn normal_equations(&self, state: &Self::State) -> (DMatrix<f64>, DVector<f64>);

    fn retract(&self, state: &Self::State, delta: &DVector<f64>) -> Self::State;

    /// Solves `(H + λI) x = g`, `None` if the damped system is not positive
    /// definite.
    fn solve_damped(&self, h: &DMatrix<f64>, g: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
        let mut damped = h.clone();
        for i in 0..damped.nrows() {
            damped[(i, i)] += lambda;
        }
        Some(damped.cholesky()?.solve(g))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmParams {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub lambda_factor: f64,
    /// Relative cost decrease below which an accepted step ends the solve.
    pub relative_tolerance: f64,
    /// Damping beyond which no further improvement is sought.
    pub max_lambda: f64,
    /// Damping at which an indefinite system is reported as singular.
    pub singular_lambda: f64,
}

impl Default for LmParams {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            initial_lambda: 1e-4,
            lambda_factor: 10.0,
            relative_tolerance: 1e-6,
            max_lambda: 1e10,
            singular_lambda: 1e6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmSummary {
    /// Number of accepted steps.
    pub iterations: usize,
    /// Cost before the first step followed by the cost after each accepted one.
    pub cost_history: Vec<f64>,
    pub final_cost: f64,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("cost is undefined at the initial state")]
    UndefinedInitialCost,
    #[error("normal equations stay indefinite up to damping {lambda:e}")]
    SingularSystem { lambda: f64 },
}

pub fn levenberg_marquardt<P: Problem>(
    problem: &P,
    initial: P::State,
    params: &LmParams,
) -> Result<(P::State, LmSummary), SolveError> {
    let mut state = initial;
    let mut cost = problem
        .cost(&state)
        .filter(|c| c.is_finite())
        .ok_or(SolveError::UndefinedInitialCost)?;
    let mut history = vec![cost];
    let mut lambda = params.initial_lambda;

    'outer: for _ in 0..params.max_iterations {
        if cost == 0.0 {
            break;
        }
        let (h, g) = problem.normal_equations(&state);
        loop {
            let Some(step) = problem.solve_damped(&h, &g, lambda) else {
                if lambda >= params.singular_lambda {
                    return Err(SolveError::SingularSystem { lambda });
                }
                lambda *= params.lambda_factor;
                continue;
            };
            let delta = -step;
            let candidate = problem.retract(&state, &delta);
            match problem.cost(&candidate) {
                Some(c) if c.is_finite() && c < cost => {
                    let relative = (cost - c) / cost;
                    state = candidate;
                    cost = c;
                    history.push(cost);
                    lambda = (lambda / params.lambda_factor).max(f64::MIN_POSITIVE);
                    if relative < params.relative_tolerance {
                        break 'outer;
                    }
                    break;
                }
                _ => {
                    lambda *= params.lambda_factor;
                    if lambda > params.max_lambda {
                        break 'outer;
                    }
                }
            }
        }
    }

    let summary = LmSummary {
        iterations: history.len() - 1,
        cost_history: history,
        final_cost: cost,
    };
    Ok((state, summary))
}
