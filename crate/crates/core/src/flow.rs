//! Stationary Brinkman flow on a staggered (MAC) grid.
//!
//! Normal velocities live on cell faces and pressures at cell centres.
//! Wall faces carry no unknown; inlet and outlet faces carry a velocity
//! whose momentum balance sees the prescribed boundary pressure half a
//! cell away. The assembled saddle-point matrix is symmetric:
//!
//! ```text
//! | K(α)  G | | u |   | b(p_in, p_out) |
//! | Gᵀ    0 | | p | = | 0              |
//! ```

use crate::config::CaseConfig;
use crate::error::{Error, Result};
use crate::geometry::{permeability, Axis, Grid, Patch, Region};
use crate::sparse::{LuFactor, TripletBuilder};
use crate::topopt::DensityField;

/// Fictitious inverse permeability of a design cell with filtered density `rho`.
pub fn alpha_fic(rho: f64, config: &CaseConfig) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::OutOfRange {
            name: "rho",
            value: rho,
            reason: "density must lie in [0, 1]",
        });
    }
    Ok(alpha_fic_unchecked(rho, config.numerics.q, alpha_fic_max(config)?))
}

/// The solid-limit value α^fic = multiplier · μ/K.
pub fn alpha_fic_max(config: &CaseConfig) -> Result<f64> {
    Ok(config.numerics.alpha_fic_multiplier * electrode_alpha(config)?)
}

/// μ/K of the porous electrode.
pub fn electrode_alpha(config: &CaseConfig) -> Result<f64> {
    Ok(config.electrolyte.viscosity / permeability(config)?)
}

#[inline]
pub(crate) fn alpha_fic_unchecked(rho: f64, q: f64, alpha_max: f64) -> f64 {
    q * (1.0 - rho) / (rho + q) * alpha_max
}

/// d α_fic / d ρ
#[inline]
pub(crate) fn alpha_fic_derivative(rho: f64, q: f64, alpha_max: f64) -> f64 {
    -q * (1.0 + q) / ((rho + q) * (rho + q)) * alpha_max
}

/// Inverse permeability per cell (Pa·s/m²).
#[derive(Debug, Clone, PartialEq)]
pub struct InversePermeabilityField {
    pub cell: Vec<f64>,
}

impl InversePermeabilityField {
    pub fn uniform(grid: &Grid, alpha: f64) -> Self {
        Self {
            cell: vec![alpha; grid.n_cells()],
        }
    }

    /// μ/K in the electrode and α_fic(ρ̃) in the design layer.
    pub fn from_density(grid: &Grid, density: &DensityField, config: &CaseConfig) -> Result<Self> {
        density.check(grid)?;
        let electrode = electrode_alpha(config)?;
        let amax = alpha_fic_max(config)?;
        let q = config.numerics.q;
        let mut cell = vec![electrode; grid.n_cells()];
        for (d, &c) in grid.design_cells().iter().enumerate() {
            cell[c] = alpha_fic_unchecked(density.filtered[d], q, amax);
        }
        Ok(Self { cell })
    }
}

/// One cell face of the staggered grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceInfo {
    pub axis: Axis,
    /// Cell below the face along its axis.
    pub lower: Option<usize>,
    /// Cell above the face along its axis.
    pub upper: Option<usize>,
    pub area: f64,
    /// Label for boundary faces.
    pub patch: Option<Patch>,
}

impl FaceInfo {
    pub fn is_interior(&self) -> bool {
        self.lower.is_some() && self.upper.is_some()
    }
}

/// Face numbering: all x-faces, then y-faces, then z-faces, each x-fastest.
#[derive(Debug, Clone)]
pub struct FaceLayout {
    nx: usize,
    ny: usize,
    nz: usize,
    nfx: usize,
    nfy: usize,
    faces: Vec<FaceInfo>,
}

impl FaceLayout {
    pub fn new(grid: &Grid) -> Self {
        let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz());
        let nfx = (nx + 1) * ny * nz;
        let nfy = nx * (ny + 1) * nz;
        let nfz = nx * ny * (nz + 1);
        let mut faces = Vec::with_capacity(nfx + nfy + nfz);
        let boundary_patch = |b, cell| Some(grid.patch_of(b, cell));
        use crate::geometry::Boundary as B;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..=nx {
                    let lower = (i > 0).then(|| grid.cell(i - 1, j, k));
                    let upper = (i < nx).then(|| grid.cell(i, j, k));
                    let patch = match (lower, upper) {
                        (None, Some(c)) => boundary_patch(B::XMin, c),
                        (Some(c), None) => boundary_patch(B::XMax, c),
                        _ => None,
                    };
                    let area = grid.face_area(Axis::X, grid.cell(i.min(nx - 1), j, k));
                    faces.push(FaceInfo {
                        axis: Axis::X,
                        lower,
                        upper,
                        area,
                        patch,
                    });
                }
            }
        }
        for k in 0..nz {
            for j in 0..=ny {
                for i in 0..nx {
                    let lower = (j > 0).then(|| grid.cell(i, j - 1, k));
                    let upper = (j < ny).then(|| grid.cell(i, j, k));
                    let patch = match (lower, upper) {
                        (None, Some(c)) => boundary_patch(B::YMin, c),
                        (Some(c), None) => boundary_patch(B::YMax, c),
                        _ => None,
                    };
                    let area = grid.face_area(Axis::Y, grid.cell(i, j.min(ny - 1), k));
                    faces.push(FaceInfo {
                        axis: Axis::Y,
                        lower,
                        upper,
                        area,
                        patch,
                    });
                }
            }
        }
        for k in 0..=nz {
            for j in 0..ny {
                for i in 0..nx {
                    let lower = (k > 0).then(|| grid.cell(i, j, k - 1));
                    let upper = (k < nz).then(|| grid.cell(i, j, k));
                    let patch = match (lower, upper) {
                        (None, Some(c)) => boundary_patch(B::ZMin, c),
                        (Some(c), None) => boundary_patch(B::ZMax, c),
                        _ => None,
                    };
                    let area = grid.hx * grid.hy;
                    faces.push(FaceInfo {
                        axis: Axis::Z,
                        lower,
                        upper,
                        area,
                        patch,
                    });
                }
            }
        }
        Self {
            nx,
            ny,
            nz,
            nfx,
            nfy,
            faces,
        }
    }

    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn faces(&self) -> &[FaceInfo] {
        &self.faces
    }

    pub fn face(&self, f: usize) -> &FaceInfo {
        &self.faces[f]
    }

    #[inline]
    pub fn x_face(&self, i: usize, j: usize, k: usize) -> usize {
        i + (self.nx + 1) * (j + self.ny * k)
    }

    #[inline]
    pub fn y_face(&self, i: usize, j: usize, k: usize) -> usize {
        self.nfx + i + self.nx * (j + (self.ny + 1) * k)
    }

    #[inline]
    pub fn z_face(&self, i: usize, j: usize, k: usize) -> usize {
        self.nfx + self.nfy + i + self.nx * (j + self.ny * k)
    }

    /// (i, j, k) position of a face in its own family's index space.
    pub fn face_ijk(&self, f: usize) -> (Axis, usize, usize, usize) {
        if f < self.nfx {
            let i = f % (self.nx + 1);
            let r = f / (self.nx + 1);
            (Axis::X, i, r % self.ny, r / self.ny)
        } else if f < self.nfx + self.nfy {
            let g = f - self.nfx;
            let i = g % self.nx;
            let r = g / self.nx;
            (Axis::Y, i, r % (self.ny + 1), r / (self.ny + 1))
        } else {
            let g = f - self.nfx - self.nfy;
            let i = g % self.nx;
            let r = g / self.nx;
            (Axis::Z, i, r % self.ny, r / self.ny)
        }
    }

    /// Lower and upper face of `cell` along `axis`.
    #[inline]
    pub fn cell_faces(&self, grid: &Grid, cell: usize, axis: Axis) -> (usize, usize) {
        let (i, j, k) = grid.ijk(cell);
        match axis {
            Axis::X => (self.x_face(i, j, k), self.x_face(i + 1, j, k)),
            Axis::Y => (self.y_face(i, j, k), self.y_face(i, j + 1, k)),
            Axis::Z => (self.z_face(i, j, k), self.z_face(i, j, k + 1)),
        }
    }

    /// Same-axis face shifted by one along `dir`, if inside the face family.
    fn shifted(&self, f: usize, dir: Axis, upper: bool) -> Option<usize> {
        let (axis, i, j, k) = self.face_ijk(f);
        let (ni, nj, nk) = match axis {
            Axis::X => (self.nx + 1, self.ny, self.nz),
            Axis::Y => (self.nx, self.ny + 1, self.nz),
            Axis::Z => (self.nx, self.ny, self.nz + 1),
        };
        let step = |v: usize, n: usize| -> Option<usize> {
            if upper {
                (v + 1 < n).then_some(v + 1)
            } else {
                v.checked_sub(1)
            }
        };
        let (i, j, k) = match dir {
            Axis::X => (step(i, ni)?, j, k),
            Axis::Y => (i, step(j, nj)?, k),
            Axis::Z => (i, j, step(k, nk)?),
        };
        Some(match axis {
            Axis::X => self.x_face(i, j, k),
            Axis::Y => self.y_face(i, j, k),
            Axis::Z => self.z_face(i, j, k),
        })
    }
}

/// Degree-of-freedom map of the Brinkman system.
#[derive(Debug, Clone)]
pub struct FlowDofs {
    pub layout: FaceLayout,
    /// Velocity unknown of each face; `None` on walls.
    pub face_dof: Vec<Option<usize>>,
    pub n_velocity: usize,
    pub n_cells: usize,
    /// Control-volume size of each face's momentum balance.
    pub face_volume: Vec<f64>,
}

impl FlowDofs {
    pub fn new(grid: &Grid) -> Self {
        let layout = FaceLayout::new(grid);
        let mut face_dof = vec![None; layout.len()];
        let mut n = 0;
        let mut face_volume = vec![0.0; layout.len()];
        for (f, info) in layout.faces().iter().enumerate() {
            let active = info.is_interior() || matches!(info.patch, Some(Patch::Inlet | Patch::Outlet));
            if active {
                face_dof[f] = Some(n);
                n += 1;
            }
            let extent: f64 = [info.lower, info.upper]
                .iter()
                .flatten()
                .map(|&c| 0.5 * grid.h(info.axis, grid.ijk(c).2))
                .sum();
            face_volume[f] = extent * info.area;
        }
        Self {
            layout,
            face_dof,
            n_velocity: n,
            n_cells: grid.n_cells(),
            face_volume,
        }
    }

    pub fn len(&self) -> usize {
        self.n_velocity + self.n_cells
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn pressure_dof(&self, cell: usize) -> usize {
        self.n_velocity + cell
    }

    /// Face α: mean of the adjacent cells.
    #[inline]
    pub fn face_alpha(&self, f: usize, alpha: &InversePermeabilityField) -> f64 {
        let info = self.layout.face(f);
        match (info.lower, info.upper) {
            (Some(a), Some(b)) => 0.5 * (alpha.cell[a] + alpha.cell[b]),
            (Some(a), None) | (None, Some(a)) => alpha.cell[a],
            (None, None) => 0.0,
        }
    }
}

/// Assembled Brinkman system. The right-hand side is linear in the two
/// boundary pressures: `b = p_in · rhs_in + p_out · rhs_out`.
#[derive(Debug, Clone)]
pub struct BrinkmanSystem {
    pub dofs: FlowDofs,
    pub matrix: crate::sparse::SparseMatrix,
    pub rhs_in: Vec<f64>,
    pub rhs_out: Vec<f64>,
}

/// Assembles −∇p + μ∇²u − αu = 0, ∇·u = 0 with pressure inlet/outlet and
/// no-slip walls.
pub fn assemble_brinkman(grid: &Grid, alpha: &InversePermeabilityField, config: &CaseConfig) -> Result<BrinkmanSystem> {
    if alpha.cell.len() != grid.n_cells() {
        return Err(Error::SizeMismatch {
            what: "inverse permeability",
            got: alpha.cell.len(),
            expected: grid.n_cells(),
        });
    }
    if alpha.cell.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
        return Err(Error::Config(
            "inverse permeability must be finite and non-negative".into(),
        ));
    }
    let mu = config.electrolyte.viscosity;
    let dofs = FlowDofs::new(grid);
    let layout = &dofs.layout;
    let n = dofs.len();
    let mut t = TripletBuilder::with_capacity(n, 11 * dofs.n_velocity);
    let mut rhs_in = vec![0.0; n];
    let mut rhs_out = vec![0.0; n];

    let cell_k = |c: usize| grid.ijk(c).2;

    for (f, info) in layout.faces().iter().enumerate() {
        let Some(row) = dofs.face_dof[f] else { continue };
        let a = info.axis;
        let vol = dofs.face_volume[f];
        let mut diag = dofs.face_alpha(f, alpha) * vol;

        // viscous coupling along the face normal
        for (cell, upper) in [(info.lower, false), (info.upper, true)] {
            let Some(c) = cell else { continue };
            let coef = mu * grid.face_area(a, c) / grid.h(a, cell_k(c));
            diag += coef;
            let nb = layout
                .shifted(f, a, upper)
                .expect("neighbour face exists across a cell");
            if let Some(col) = dofs.face_dof[nb] {
                t.add(row, col, -coef);
            }
        }

        // tangential viscous coupling
        let (_, _, _, fk) = layout.face_ijk(f);
        let extent_a = vol / info.area;
        for b in [Axis::X, Axis::Y, Axis::Z] {
            if b == a {
                continue;
            }
            let c_axis = [Axis::X, Axis::Y, Axis::Z]
                .into_iter()
                .find(|&x| x != a && x != b)
                .unwrap();
            // the face layer index is the cell layer for x/y faces
            let extent_c = grid.h(c_axis, fk.min(grid.nz() - 1));
            let area = extent_a * extent_c;
            let hb_here = grid.h(b, fk.min(grid.nz() - 1));
            for upper in [false, true] {
                match layout.shifted(f, b, upper) {
                    Some(nb) => {
                        let dist = if b == Axis::Z {
                            let nk = if upper { fk + 1 } else { fk - 1 };
                            0.5 * (grid.dz(fk) + grid.dz(nk))
                        } else {
                            hb_here
                        };
                        let coef = mu * area / dist;
                        diag += coef;
                        if let Some(col) = dofs.face_dof[nb] {
                            t.add(row, col, -coef);
                        }
                    }
                    None => {
                        // no-slip wall half a cell away
                        diag += mu * area / (0.5 * hb_here);
                    }
                }
            }
        }
        t.add(row, row, diag);

        // pressure gradient and its transpose (continuity)
        let area = info.area;
        match (info.lower, info.upper) {
            (Some(l), Some(u)) => {
                t.add(row, dofs.pressure_dof(u), area);
                t.add(row, dofs.pressure_dof(l), -area);
                t.add(dofs.pressure_dof(u), row, area);
                t.add(dofs.pressure_dof(l), row, -area);
            }
            (None, Some(u)) => {
                t.add(row, dofs.pressure_dof(u), area);
                t.add(dofs.pressure_dof(u), row, area);
                match info.patch {
                    Some(Patch::Inlet) => rhs_in[row] += area,
                    Some(Patch::Outlet) => rhs_out[row] += area,
                    _ => unreachable!("active boundary face without pressure patch"),
                }
            }
            (Some(l), None) => {
                t.add(row, dofs.pressure_dof(l), -area);
                t.add(dofs.pressure_dof(l), row, -area);
                match info.patch {
                    Some(Patch::Inlet) => rhs_in[row] -= area,
                    Some(Patch::Outlet) => rhs_out[row] -= area,
                    _ => unreachable!("active boundary face without pressure patch"),
                }
            }
            (None, None) => unreachable!(),
        }
    }
    // keep every pressure diagonal in the pattern
    for c in 0..grid.n_cells() {
        t.add(dofs.pressure_dof(c), dofs.pressure_dof(c), 0.0);
    }
    let matrix = t.build()?;
    Ok(BrinkmanSystem {
        dofs,
        matrix,
        rhs_in,
        rhs_out,
    })
}

impl BrinkmanSystem {
    pub fn factor(self) -> Result<FactoredBrinkman> {
        let lu = self.matrix.lu("Brinkman system")?;
        Ok(FactoredBrinkman { system: self, lu })
    }

    /// Right-hand side for the given boundary pressures.
    pub fn rhs(&self, p_in: f64, p_out: f64) -> Vec<f64> {
        self.rhs_in
            .iter()
            .zip(&self.rhs_out)
            .map(|(a, b)| p_in * a + p_out * b)
            .collect()
    }
}

/// Factorized Brinkman system, reusable across boundary pressures and for
/// adjoint solves.
#[derive(Debug, Clone)]
pub struct FactoredBrinkman {
    pub system: BrinkmanSystem,
    pub lu: LuFactor,
}

impl FactoredBrinkman {
    pub fn solve(&self, grid: &Grid, p_in: f64, p_out: f64, tol: f64) -> Result<FlowState> {
        let b = self.system.rhs(p_in, p_out);
        let x = self.lu.solve(&b, tol)?;
        Ok(FlowState::from_solution(grid, &self.system.dofs, &x, p_in, p_out))
    }
}

/// Velocity and pressure of a converged flow solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    /// Normal velocity on every face (m/s), zero on walls.
    pub face_velocity: Vec<f64>,
    /// Cell-centre pressure (Pa).
    pub pressure: Vec<f64>,
    /// Volumetric flux through each face in its axis direction (m³/s).
    pub face_flux: Vec<f64>,
    pub q_in: f64,
    pub q_out: f64,
    pub p_in: f64,
    pub p_out: f64,
    /// Cell-centred velocity vectors.
    pub cell_velocity: Vec<[f64; 3]>,
}

impl FlowState {
    fn from_solution(grid: &Grid, dofs: &FlowDofs, x: &[f64], p_in: f64, p_out: f64) -> Self {
        let layout = &dofs.layout;
        let face_velocity: Vec<f64> = dofs.face_dof.iter().map(|d| d.map_or(0.0, |d| x[d])).collect();
        let face_flux: Vec<f64> = face_velocity
            .iter()
            .zip(layout.faces())
            .map(|(u, info)| u * info.area)
            .collect();
        let pressure = x[dofs.n_velocity..].to_vec();
        let mut q_in = 0.0;
        let mut q_out = 0.0;
        for (f, info) in layout.faces().iter().enumerate() {
            // positive = entering the domain
            let inward = if info.lower.is_none() {
                face_flux[f]
            } else {
                -face_flux[f]
            };
            match info.patch {
                Some(Patch::Inlet) => q_in += inward,
                Some(Patch::Outlet) => q_out -= inward,
                _ => {}
            }
        }
        let cell_velocity = (0..grid.n_cells())
            .map(|c| {
                let mut v = [0.0; 3];
                for (d, axis) in [Axis::X, Axis::Y, Axis::Z].into_iter().enumerate() {
                    let (lo, hi) = layout.cell_faces(grid, c, axis);
                    v[d] = 0.5 * (face_velocity[lo] + face_velocity[hi]);
                }
                v
            })
            .collect();
        Self {
            face_velocity,
            pressure,
            face_flux,
            q_in,
            q_out,
            p_in,
            p_out,
            cell_velocity,
        }
    }

    pub fn pressure_drop(&self) -> f64 {
        self.p_in - self.p_out
    }

    pub fn speed(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cell_velocity[cell];
        (a * a + b * b + c * c).sqrt()
    }

    /// Largest |net outflow| over all cells relative to the inlet flow rate.
    pub fn max_divergence(&self, grid: &Grid, layout: &FaceLayout) -> f64 {
        let mut worst: f64 = 0.0;
        for c in 0..grid.n_cells() {
            let mut net = 0.0;
            for axis in [Axis::X, Axis::Y, Axis::Z] {
                let (lo, hi) = layout.cell_faces(grid, c, axis);
                net += self.face_flux[hi] - self.face_flux[lo];
            }
            worst = worst.max(net.abs());
        }
        worst / self.q_in.abs().max(f64::MIN_POSITIVE)
    }

    /// Mean speed over the cells of one region.
    pub fn mean_speed(&self, grid: &Grid, region: Region) -> f64 {
        let cells: Vec<usize> = (0..grid.n_cells()).filter(|&c| grid.region(c) == region).collect();
        cells.iter().map(|&c| self.speed(c)).sum::<f64>() / cells.len() as f64
    }
}

/// Solves the flow for a density field at the configured boundary pressures.
pub fn solve_flow(grid: &Grid, density: &DensityField, config: &CaseConfig) -> Result<FlowState> {
    let (state, _) = solve_flow_factored(grid, density, config)?;
    Ok(state)
}

/// Like [`solve_flow`] but also returns the factorized system for reuse.
pub fn solve_flow_factored(
    grid: &Grid,
    density: &DensityField,
    config: &CaseConfig,
) -> Result<(FlowState, FactoredBrinkman)> {
    let alpha = InversePermeabilityField::from_density(grid, density, config)?;
    let factored = assemble_brinkman(grid, &alpha, config)?.factor()?;
    let state = factored.solve(
        grid,
        config.operating.p_in,
        config.operating.p_out,
        config.numerics.linear_tol,
    )?;
    Ok((state, factored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Side;
    use crate::geometry::{build_grid, GridSpec, PatchRect};

    #[test]
    fn alpha_fic_end_points_and_midpoint() {
        let c = CaseConfig::default();
        let amax = alpha_fic_max(&c).unwrap();
        assert_eq!(alpha_fic(1.0, &c).unwrap(), 0.0);
        assert!((alpha_fic(0.0, &c).unwrap() - amax).abs() < 1e-9 * amax);
        let mid = alpha_fic(0.5, &c).unwrap();
        assert!((mid / amax - 0.01 * 0.5 / 0.51).abs() < 1e-15);
        assert!((mid / amax - 0.0098).abs() < 1e-4);
        assert!(alpha_fic(1.1, &c).is_err());
        assert!(alpha_fic(-0.1, &c).is_err());
    }

    #[test]
    fn alpha_fic_derivative_matches_differences() {
        let (q, amax) = (0.01, 3.0e7);
        for rho in [0.05, 0.3, 0.5, 0.9] {
            let h = 1e-6;
            let fd = (alpha_fic_unchecked(rho + h, q, amax) - alpha_fic_unchecked(rho - h, q, amax)) / (2.0 * h);
            let an = alpha_fic_derivative(rho, q, amax);
            assert!((fd - an).abs() < 1e-6 * an.abs());
        }
    }

    #[test]
    fn face_layout_round_trips() {
        let g = build_grid(&{
            let mut c = CaseConfig::default();
            c.geometry.nx = 3;
            c.geometry.ny = 4;
            c.geometry.nz_channel = 1;
            c.geometry.nz_electrode = 2;
            c
        })
        .unwrap();
        let l = FaceLayout::new(&g);
        for f in 0..l.len() {
            let (axis, i, j, k) = l.face_ijk(f);
            let back = match axis {
                Axis::X => l.x_face(i, j, k),
                Axis::Y => l.y_face(i, j, k),
                Axis::Z => l.z_face(i, j, k),
            };
            assert_eq!(back, f);
        }
    }

    fn duct(nx: usize, ny: usize, nz_e: usize, nz_c: usize, l: f64, w: f64, t: f64) -> Grid {
        Grid::from_spec(&GridSpec {
            length: l,
            width: w,
            electrode_thickness: t * nz_e as f64 / (nz_e + nz_c) as f64,
            channel_thickness: t * nz_c as f64 / (nz_e + nz_c) as f64,
            nx,
            ny,
            nz_electrode: nz_e,
            nz_channel: nz_c,
            inlet: PatchRect {
                side: Side::West,
                lo: 0.0,
                hi: w,
                z_lo: 0.0,
                z_hi: t,
            },
            outlet: PatchRect {
                side: Side::East,
                lo: 0.0,
                hi: w,
                z_lo: 0.0,
                z_hi: t,
            },
        })
        .unwrap()
    }

    #[test]
    fn mass_is_conserved_on_a_mixed_field() {
        let cfg = CaseConfig::default();
        let g = duct(6, 5, 2, 2, 0.02, 0.01, 0.004);
        let mut alpha = InversePermeabilityField::uniform(&g, 0.0);
        for (c, a) in alpha.cell.iter_mut().enumerate() {
            *a = 1.0e5 * ((c * 7919) % 13) as f64;
        }
        let sys = assemble_brinkman(&g, &alpha, &cfg).unwrap().factor().unwrap();
        let s = sys.solve(&g, 10.0, 0.0, 1e-8).unwrap();
        assert!(s.q_in > 0.0);
        assert!(((s.q_in - s.q_out) / s.q_in).abs() < 1e-10);
        assert!(s.max_divergence(&g, &sys.system.dofs.layout) < 1e-10);
    }

    #[test]
    fn rejects_wrong_alpha_size() {
        let g = duct(3, 3, 1, 1, 0.01, 0.01, 0.002);
        let alpha = InversePermeabilityField { cell: vec![0.0; 2] };
        assert!(assemble_brinkman(&g, &alpha, &CaseConfig::default()).is_err());
    }
}
