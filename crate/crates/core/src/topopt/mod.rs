//! Density-based topology optimization of the flow-field layer.
//!
//! The design is one density per design-layer cell (1 = open channel,
//! 0 = land). It is smoothed by a Helmholtz filter, mapped to a fictitious
//! inverse permeability, and scored by the electrode-volume mean of the
//! V³⁺ surface concentration at fixed boundary pressures. Gradients come
//! from a discrete adjoint through the electrochemistry, the flow and the
//! filter; designs are updated by sequential linear programming.

mod filter;
mod slp;

pub use filter::{helmholtz_length, HelmholtzFilter};
pub use slp::{slp_step, slp_step_per_variable, LinearConstraint};

use crate::config::CaseConfig;
use crate::electrochem::{mass_transfer_coeff_derivative, ElectroProblem, ElectroState, MIN_LINEAR_TOL};
use crate::error::{Error, Result};
use crate::flow::{alpha_fic_derivative, alpha_fic_max, assemble_brinkman, FlowState, InversePermeabilityField};
use crate::geometry::{Axis, Grid};

const MOVE_SHRINK: f64 = 0.5;
const MOVE_GROW: f64 = 1.2;
const MIN_MOVE_FRACTION: f64 = 0.01;

/// Raw and filtered design densities, indexed like [`Grid::design_cells`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub rho: Vec<f64>,
    pub filtered: Vec<f64>,
    pub radius: f64,
}

impl DensityField {
    /// Prescribed density used as is, without filtering.
    pub fn unfiltered(rho: Vec<f64>) -> Self {
        Self {
            filtered: rho.clone(),
            rho,
            radius: 0.0,
        }
    }

    pub fn uniform(grid: &Grid, value: f64) -> Self {
        Self::unfiltered(vec![value; grid.design_cells().len()])
    }

    pub fn filtered_with(rho: Vec<f64>, filter: &HelmholtzFilter) -> Result<Self> {
        let filtered = filter.apply(&rho)?;
        Ok(Self {
            rho,
            filtered,
            radius: filter.radius(),
        })
    }

    /// Sizes match the grid and all values lie in [0, 1].
    pub fn check(&self, grid: &Grid) -> Result<()> {
        let n = grid.design_cells().len();
        for (what, v) in [("density", &self.rho), ("filtered density", &self.filtered)] {
            if v.len() != n {
                return Err(Error::SizeMismatch {
                    what,
                    got: v.len(),
                    expected: n,
                });
            }
            if let Some(bad) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(Error::OutOfRange {
                    name: "rho",
                    value: *bad,
                    reason: "density must lie in [0, 1]",
                });
            }
        }
        Ok(())
    }

    /// Filtered density on a full cell array (electrode cells set to NaN).
    pub fn to_cells(&self, grid: &Grid) -> Vec<f64> {
        let mut out = vec![f64::NAN; grid.n_cells()];
        for (d, &c) in grid.design_cells().iter().enumerate() {
            out[c] = self.filtered[d];
        }
        out
    }
}

/// Filter radius from the configuration: explicit value or two cell widths.
pub fn filter_radius(grid: &Grid, config: &CaseConfig) -> f64 {
    config.numerics.filter_radius.unwrap_or(2.0 * grid.hx)
}

/// Flow and electrochemistry of one design, optionally with the objective
/// gradient with respect to the raw densities.
#[derive(Debug, Clone)]
pub struct DesignEvaluation {
    pub density: DensityField,
    pub flow: FlowState,
    pub electro: ElectroState,
    pub objective: f64,
    pub gradient: Option<Vec<f64>>,
}

/// Objective: electrode-volume mean of c³⁺ at the fiber surface.
pub fn objective(grid: &Grid, state: &ElectroState) -> f64 {
    state.mean_c3s(grid)
}

/// Solves flow and electrochemistry for `rho` and, if asked, the adjoint.
/// `warm` is an optional initial guess for the electrochemistry unknowns.
pub fn evaluate(
    grid: &Grid,
    config: &CaseConfig,
    filter: &HelmholtzFilter,
    rho: &[f64],
    with_gradient: bool,
    warm: Option<&[f64]>,
) -> Result<DesignEvaluation> {
    let density = DensityField::filtered_with(rho.to_vec(), filter)?;
    let alpha = InversePermeabilityField::from_density(grid, &density, config)?;
    let flow_sys = assemble_brinkman(grid, &alpha, config)?.factor()?;
    let tol = config.numerics.linear_tol;
    let flow = flow_sys.solve(grid, config.operating.p_in, config.operating.p_out, tol)?;
    let problem = ElectroProblem::new(grid, &flow, config)?;
    let electro = match warm.filter(|w| w.len() == problem.len()) {
        Some(w) => problem.solve_from(w.to_vec()).or_else(|e| {
            log::debug!("warm start failed ({e}), restarting from the default guess");
            problem.solve()
        })?,
        None => problem.solve()?,
    };
    let y = electro.unknowns();
    let (value, dfdy) = problem.objective_gradient(&y);
    if !with_gradient {
        return Ok(DesignEvaluation {
            density,
            flow,
            electro,
            objective: value,
            gradient: None,
        });
    }

    // electrochemistry adjoint: Jᵀ λ = −∂F/∂y
    let jac = problem.jacobian(&y)?;
    let rhs: Vec<f64> = dfdy.iter().map(|v| -v).collect();
    let lambda = jac.solve_transpose(&rhs, tol.max(MIN_LINEAR_TOL))?;
    let dq = problem.flux_sensitivity(&y, &lambda);
    let dkm = problem.km_sensitivity(&y, &lambda);

    // back to face velocities, through fluxes and through k_m(|u|)
    let dofs = &flow_sys.system.dofs;
    let layout = &dofs.layout;
    let mut du: Vec<f64> = layout.faces().iter().zip(&dq).map(|(i, d)| i.area * d).collect();
    let floor = config.numerics.km_floor;
    for (e, &c) in grid.electrode_cells().iter().enumerate() {
        let s = flow.speed(c);
        let dk = mass_transfer_coeff_derivative(s, floor);
        if dk == 0.0 || s == 0.0 {
            continue;
        }
        let w = dkm[e] * dk;
        for (a, axis) in [Axis::X, Axis::Y, Axis::Z].into_iter().enumerate() {
            let ubar = flow.cell_velocity[c][a];
            let (lo, hi) = layout.cell_faces(grid, c, axis);
            let ds = ubar / (2.0 * s);
            du[lo] += w * ds;
            du[hi] += w * ds;
        }
    }

    // flow adjoint: Aᵀ ψ = ∂F/∂x, dF/dα_f = −ψ_f V_f u_f
    let mut g = vec![0.0; dofs.len()];
    for (f, d) in dofs.face_dof.iter().enumerate() {
        if let Some(d) = d {
            g[*d] = du[f];
        }
    }
    let mut dalpha_cell = vec![0.0; grid.n_cells()];
    if g.iter().any(|v| *v != 0.0) {
        let psi = flow_sys.lu.solve_transpose(&g, tol.max(MIN_LINEAR_TOL))?;
        for (f, d) in dofs.face_dof.iter().enumerate() {
            let Some(d) = d else { continue };
            let da = -psi[*d] * dofs.face_volume[f] * flow.face_velocity[f];
            let info = layout.face(f);
            match (info.lower, info.upper) {
                (Some(a), Some(b)) => {
                    dalpha_cell[a] += 0.5 * da;
                    dalpha_cell[b] += 0.5 * da;
                }
                (Some(a), None) | (None, Some(a)) => dalpha_cell[a] += da,
                (None, None) => {}
            }
        }
    }
    let amax = alpha_fic_max(config)?;
    let q = config.numerics.q;
    let dfiltered: Vec<f64> = grid
        .design_cells()
        .iter()
        .zip(&density.filtered)
        .map(|(&c, &r)| dalpha_cell[c] * alpha_fic_derivative(r, q, amax))
        .collect();
    let gradient = filter.apply_transpose(&dfiltered)?;
    Ok(DesignEvaluation {
        density,
        flow,
        electro,
        objective: value,
        gradient: Some(gradient),
    })
}

/// One row of the optimization trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub pressure_drop: f64,
    pub flow_rate: f64,
    pub mean_abs_eta: f64,
    pub max_change: f64,
}

/// Everything needed to continue an optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Index of the next iteration to evaluate.
    pub iteration: usize,
    pub rho: Vec<f64>,
    pub move_limit: f64,
    /// Consecutive iterations with a worse objective.
    pub worse_count: usize,
    /// Consecutive iterations with relative change below tolerance.
    pub stall_count: usize,
    /// Per-variable move limits, shrunk where the update direction flips.
    pub variable_moves: Vec<f64>,
    /// Sign of the last update per variable (−1, 0, 1).
    pub last_direction: Vec<i8>,
    /// Electrochemistry unknowns of the previous design, used as the Newton
    /// starting point of the next one.
    pub warm_start: Option<Vec<f64>>,
    pub trace: Vec<IterationRecord>,
}

impl OptimizerState {
    pub fn new(grid: &Grid, config: &CaseConfig) -> Self {
        let n = grid.design_cells().len();
        Self {
            iteration: 0,
            rho: vec![config.numerics.rho_init; n],
            move_limit: config.numerics.move_limit,
            worse_count: 0,
            stall_count: 0,
            variable_moves: vec![config.numerics.move_limit; n],
            last_direction: vec![0; n],
            warm_start: None,
            trace: Vec::new(),
        }
    }
}

/// Outcome of [`Optimizer::run`].
#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub converged: bool,
    /// The last evaluated design and its fields.
    pub last: DesignEvaluation,
    pub trace: Vec<IterationRecord>,
}

pub struct Optimizer<'a> {
    grid: &'a Grid,
    config: &'a CaseConfig,
    filter: HelmholtzFilter,
    pub state: OptimizerState,
    pub constraint: Option<LinearConstraint>,
}

impl<'a> Optimizer<'a> {
    pub fn new(grid: &'a Grid, config: &'a CaseConfig) -> Result<Self> {
        Self::resume(grid, config, OptimizerState::new(grid, config))
    }

    pub fn resume(grid: &'a Grid, config: &'a CaseConfig, state: OptimizerState) -> Result<Self> {
        config.validate()?;
        let n = grid.design_cells().len();
        if state.rho.len() != n {
            return Err(Error::SizeMismatch {
                what: "design field",
                got: state.rho.len(),
                expected: n,
            });
        }
        let filter = HelmholtzFilter::new(grid, filter_radius(grid, config))?;
        Ok(Self {
            grid,
            config,
            filter,
            state,
            constraint: None,
        })
    }

    pub fn filter(&self) -> &HelmholtzFilter {
        &self.filter
    }

    fn converged(&self) -> bool {
        self.state.stall_count >= self.config.numerics.opt_window
    }

    /// Evaluates the current design, records it and takes one SLP step.
    pub fn step(&mut self) -> Result<(IterationRecord, DesignEvaluation)> {
        let it = self.state.iteration;
        let wrap = |e: Error| Error::Iteration {
            iteration: it,
            source: Box::new(e),
        };
        let eval = evaluate(
            self.grid,
            self.config,
            &self.filter,
            &self.state.rho,
            true,
            self.state.warm_start.as_deref(),
        )
        .map_err(wrap)?;
        let grad = eval.gradient.as_ref().expect("gradient requested");
        let moves: Vec<f64> = self
            .state
            .variable_moves
            .iter()
            .map(|m| m.min(self.state.move_limit))
            .collect();
        let next = slp_step_per_variable(&self.state.rho, grad, &moves, self.constraint.as_ref()).map_err(wrap)?;
        let max_change = next
            .iter()
            .zip(&self.state.rho)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);

        if let Some(prev) = self.state.trace.last() {
            let rel = (eval.objective - prev.objective).abs() / prev.objective.abs().max(f64::MIN_POSITIVE);
            if rel < self.config.numerics.opt_tol {
                self.state.stall_count += 1;
            } else {
                self.state.stall_count = 0;
            }
            if eval.objective < prev.objective {
                self.state.worse_count += 1;
                if self.state.worse_count >= 2 {
                    self.state.move_limit *= 0.5;
                    self.state.worse_count = 0;
                    log::info!("iteration {it}: move limit reduced to {}", self.state.move_limit);
                }
            } else {
                self.state.worse_count = 0;
            }
        }
        let record = IterationRecord {
            iteration: it,
            objective: eval.objective,
            pressure_drop: eval.flow.pressure_drop(),
            flow_rate: eval.flow.q_in,
            mean_abs_eta: eval.electro.mean_abs_eta(self.grid),
            max_change,
        };
        log::info!(
            "iteration {it}: F = {:.6} dp = {:.3} Q = {:.3e} |eta| = {:.4e} max drho = {:.3}",
            record.objective,
            record.pressure_drop,
            record.flow_rate,
            record.mean_abs_eta,
            record.max_change
        );
        self.state.trace.push(record);
        self.state.warm_start = Some(eval.electro.unknowns());
        if !self.converged() {
            self.adapt_moves(&next);
            self.state.rho = next;
        }
        self.state.iteration += 1;
        Ok((record, eval))
    }

    /// Oscillation control: a variable whose update reverses direction has
    /// its move limit halved; one that keeps its direction regains range.
    fn adapt_moves(&mut self, next: &[f64]) {
        let cap = self.state.move_limit;
        let floor = MIN_MOVE_FRACTION * self.config.numerics.move_limit;
        let st = &mut self.state;
        for (e, (&new, &old)) in next.iter().zip(&st.rho).enumerate() {
            let dir = if new > old {
                1
            } else if new < old {
                -1
            } else {
                0
            };
            let m = &mut st.variable_moves[e];
            if dir != 0 && st.last_direction[e] == -dir {
                *m = (*m * MOVE_SHRINK).max(floor);
            } else if dir != 0 {
                *m = (*m * MOVE_GROW).min(cap);
            }
            if dir != 0 {
                st.last_direction[e] = dir;
            }
        }
    }

    /// Iterates until the objective stalls or the iteration cap is reached.
    /// `observer` sees every record with the evaluated design and may abort
    /// the run by returning an error.
    pub fn run(
        &mut self,
        mut observer: impl FnMut(&IterationRecord, &DesignEvaluation, &OptimizerState) -> Result<()>,
    ) -> Result<OptimizationResult> {
        let cap = self.config.numerics.opt_max_iter;
        let mut last = None;
        while self.state.iteration < cap && !self.converged() {
            let (rec, eval) = self.step()?;
            observer(&rec, &eval, &self.state)?;
            last = Some(eval);
        }
        let last = match last {
            Some(l) => l,
            None => evaluate(self.grid, self.config, &self.filter, &self.state.rho, false, None)?,
        };
        Ok(OptimizationResult {
            converged: self.converged(),
            last,
            trace: self.state.trace.clone(),
        })
    }
}

/// Adjoint versus central finite difference for one design variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheckEntry {
    pub variable: usize,
    pub adjoint: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

/// Compares adjoint sensitivities with central differences of step `h`.
pub fn gradient_check(
    grid: &Grid,
    config: &CaseConfig,
    rho: &[f64],
    variables: &[usize],
    h: f64,
) -> Result<Vec<GradientCheckEntry>> {
    let filter = HelmholtzFilter::new(grid, filter_radius(grid, config))?;
    let base = evaluate(grid, config, &filter, rho, true, None)?;
    let grad = base.gradient.expect("gradient requested");
    let warm = base.electro.unknowns();
    let mut out = Vec::with_capacity(variables.len());
    for &v in variables {
        if v >= rho.len() {
            return Err(Error::SizeMismatch {
                what: "gradient check variable",
                got: v,
                expected: rho.len(),
            });
        }
        let mut plus = rho.to_vec();
        let mut minus = rho.to_vec();
        plus[v] = (plus[v] + h).min(1.0);
        minus[v] = (minus[v] - h).max(0.0);
        let fp = evaluate(grid, config, &filter, &plus, false, Some(&warm))?.objective;
        let fm = evaluate(grid, config, &filter, &minus, false, Some(&warm))?.objective;
        let fd = (fp - fm) / (plus[v] - minus[v]);
        let scale = grad[v].abs().max(fd.abs()).max(f64::MIN_POSITIVE);
        out.push(GradientCheckEntry {
            variable: v,
            adjoint: grad[v],
            finite_difference: fd,
            relative_error: (grad[v] - fd).abs() / scale,
        });
    }
    Ok(out)
}
