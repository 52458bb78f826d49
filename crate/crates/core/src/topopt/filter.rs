//! Helmholtz (PDE) density filter on the design layer:
//! `-r_H² ∇²ρ̃ + ρ̃ = ρ` with zero-flux boundaries, discretized with the same
//! finite volumes as the flow and solved once per design.
//!
//! The configured radius `R` is read as the radius of the equivalent linear
//! (cone) density filter, so `r_H = R / (2√3)`.

use crate::error::{Error, Result};
use crate::geometry::{Axis, Grid};
use crate::sparse::{LuFactor, TripletBuilder};

/// Helmholtz length scale matching a cone filter of radius `radius`.
pub fn helmholtz_length(radius: f64) -> f64 {
    radius / (2.0 * 3f64.sqrt())
}

#[derive(Debug, Clone)]
pub struct HelmholtzFilter {
    radius: f64,
    mass: Vec<f64>,
    lu: Option<LuFactor>,
}

impl HelmholtzFilter {
    /// Builds the filter; a zero radius is the identity.
    pub fn new(grid: &Grid, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::OutOfRange {
                name: "filter_radius",
                value: radius,
                reason: "filter radius must be finite and non-negative",
            });
        }
        let cells = grid.design_cells();
        let mass: Vec<f64> = cells.iter().map(|&c| grid.volume(c)).collect();
        if radius == 0.0 {
            return Ok(Self { radius, mass, lu: None });
        }
        let n = cells.len();
        let rh = helmholtz_length(radius);
        let r2 = rh * rh;
        let mut t = TripletBuilder::with_capacity(n, 7 * n);
        for (d, &c) in cells.iter().enumerate() {
            t.add(d, d, mass[d]);
            for axis in [Axis::X, Axis::Y, Axis::Z] {
                let Some(nb) = grid.neighbor(c, axis, true) else {
                    continue;
                };
                let Some(dn) = grid.design_index(nb) else { continue };
                let g = r2 * grid.face_area(axis, c) / grid.center_distance(c, nb, axis);
                t.add(d, d, g);
                t.add(dn, dn, g);
                t.add(d, dn, -g);
                t.add(dn, d, -g);
            }
        }
        let lu = t.build()?.lu("density filter")?;
        Ok(Self {
            radius,
            mass,
            lu: Some(lu),
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::SizeMismatch {
                what: "design field",
                got: v.len(),
                expected: self.len(),
            });
        }
        Ok(())
    }

    /// ρ̃ = H⁻¹ M ρ, clipped to [0, 1] against round-off.
    pub fn apply(&self, rho: &[f64]) -> Result<Vec<f64>> {
        self.check_len(rho)?;
        let Some(lu) = &self.lu else { return Ok(rho.to_vec()) };
        let b: Vec<f64> = rho.iter().zip(&self.mass).map(|(r, m)| r * m).collect();
        let x = lu.solve(&b, 1e-10)?;
        Ok(x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    /// Chain rule through the filter: dF/dρ = M H⁻ᵀ dF/dρ̃.
    pub fn apply_transpose(&self, grad: &[f64]) -> Result<Vec<f64>> {
        self.check_len(grad)?;
        let Some(lu) = &self.lu else { return Ok(grad.to_vec()) };
        if grad.iter().all(|g| *g == 0.0) {
            return Ok(grad.to_vec());
        }
        let x = lu.solve_transpose(grad, 1e-10)?;
        Ok(x.into_iter().zip(&self.mass).map(|(v, m)| v * m).collect())
    }
}
