//! Solver contract and the interior-point adapter backed by Clarabel.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use super::program::{Cone, ConicProgram};
use crate::error::Result;

/// In configuration files every field must be given.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub tol_feas: f64,
    pub max_iter: u32,
    /// An `Optimal` answer whose directly evaluated row violation exceeds
    /// this is reported as `NearOptimal` instead.
    pub certify_tol: f64,
}

impl SolverSettings {
    /// Tight tolerances for standalone solves.
    pub fn strict() -> Self {
        Self { tol_gap_abs: 1e-8, tol_gap_rel: 1e-8, tol_feas: 1e-8, max_iter: 200, certify_tol: 1e-6 }
    }

    /// Looser tolerances used inside the alternating loop.
    pub fn sca() -> Self {
        Self { tol_gap_abs: 1e-6, tol_gap_rel: 1e-6, tol_feas: 1e-6, max_iter: 100, certify_tol: 1e-5 }
    }
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self::strict()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl SolveStatus {
    /// Whether the primal values are usable as an iterate.
    pub fn is_usable(&self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::NearOptimal)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    /// Largest cone or bound violation of `x`, recomputed from the program rows.
    pub max_violation: f64,
    pub iterations: u32,
}

pub trait ConicSolver {
    fn solve(&self, program: &ConicProgram, settings: &SolverSettings) -> Result<Solution>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ClarabelSolver;

const DEFAULT_STEP_FRACTION: f64 = 0.99;
/// Retried with after a stall. Shorter steps keep iterates away from the
/// exponential cone boundary, where the default run can lose progress.
const CAUTIOUS_STEP_FRACTION: f64 = 0.9;

struct Standard {
    a: CscMatrix<f64>,
    b: Vec<f64>,
    q: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

/// Rewrites `expr in K` rows as `A x + s = b, s in K` with `A = -coef`, `b = constant`.
fn standard_form(program: &ConicProgram) -> Standard {
    let n = program.num_vars();
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();

    let mut push_row = |terms: &mut dyn Iterator<Item = (usize, f64)>, constant: f64, b: &mut Vec<f64>| {
        let r = b.len();
        for (j, c) in terms {
            rows.push(r);
            cols.push(j);
            vals.push(-c);
        }
        b.push(constant);
    };

    // finite variable bounds as a single nonnegative block
    let mut bound_rows = 0;
    for j in 0..n {
        let (lo, hi) = program.bounds(j);
        if lo.is_finite() {
            push_row(&mut std::iter::once((j, 1.0)), -lo, &mut b);
            bound_rows += 1;
        }
        if hi.is_finite() {
            push_row(&mut std::iter::once((j, -1.0)), hi, &mut b);
            bound_rows += 1;
        }
    }
    if bound_rows > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(bound_rows));
    }

    for c in &program.constraints {
        for row in &c.rows {
            push_row(&mut row.terms.iter().copied(), row.constant, &mut b);
        }
        let k = c.rows.len();
        cones.push(match c.cone {
            Cone::Zero => SupportedConeT::ZeroConeT(k),
            Cone::NonNeg => SupportedConeT::NonnegativeConeT(k),
            Cone::SecondOrder => SupportedConeT::SecondOrderConeT(k),
            Cone::Exponential => SupportedConeT::ExponentialConeT(),
        });
    }

    let mut q = vec![0.0; n];
    for &(j, c) in &program.objective.terms {
        q[j] += c;
    }
    let a = CscMatrix::new_from_triplets(b.len(), n, rows, cols, vals);
    Standard { a, b, q, cones }
}

impl ConicSolver for ClarabelSolver {
    fn solve(&self, program: &ConicProgram, settings: &SolverSettings) -> Result<Solution> {
        program.validate()?;
        let n = program.num_vars();
        let std = standard_form(program);
        let p = CscMatrix::zeros((n, n));
        let clarabel_settings = |max_step_fraction: f64| DefaultSettings {
            verbose: false,
            max_iter: settings.max_iter,
            tol_gap_abs: settings.tol_gap_abs,
            tol_gap_rel: settings.tol_gap_rel,
            tol_feas: settings.tol_feas,
            max_step_fraction,
            presolve_enable: false,
            max_threads: 1,
            ..DefaultSettings::default()
        };

        let mut solver = None;
        for fraction in [DEFAULT_STEP_FRACTION, CAUTIOUS_STEP_FRACTION] {
            let Ok(mut s) = DefaultSolver::new(&p, &std.q, &std.a, &std.b, &std.cones, clarabel_settings(fraction)) else {
                break;
            };
            s.solve();
            let stalled = matches!(s.solution.status, SolverStatus::InsufficientProgress | SolverStatus::NumericalError);
            solver = Some(s);
            if !stalled {
                break;
            }
        }
        let Some(solver) = solver else {
            return Ok(Solution {
                objective: f64::NAN,
                status: SolveStatus::IterationLimit,
                primal_residual: f64::NAN,
                dual_residual: f64::NAN,
                gap: f64::NAN,
                max_violation: f64::INFINITY,
                iterations: 0,
                x: vec![f64::NAN; n],
            });
        };
        let sol = &solver.solution;

        let mut status = match sol.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved => SolveStatus::NearOptimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
            _ => SolveStatus::IterationLimit,
        };
        let x = sol.x.clone();
        let finite = x.iter().all(|v| v.is_finite());
        let max_violation = if finite { program.max_violation(&x) } else { f64::INFINITY };
        if status.is_usable() && !finite {
            status = SolveStatus::IterationLimit;
        }
        if status == SolveStatus::Optimal && max_violation > settings.certify_tol {
            status = SolveStatus::NearOptimal;
        }
        let objective = program.objective_value(&x);
        let gap = (sol.obj_val - sol.obj_val_dual).abs();
        Ok(Solution {
            x,
            objective,
            status,
            primal_residual: sol.r_prim,
            dual_residual: sol.r_dual,
            gap,
            max_violation,
            iterations: sol.iterations,
        })
    }
}

/// Solves with the bundled interior-point backend.
pub fn solve(program: &ConicProgram, settings: &SolverSettings) -> Result<Solution> {
    ClarabelSolver.solve(program, settings)
}
