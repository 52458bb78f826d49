//! Species transport, charge conservation and Butler–Volmer kinetics in the
//! negative half-cell, solved on a converged flow field.
//!
//! Unknowns are ordered `[c_V2+ | c_V3+ | φ_s | φ_e]`: the concentrations on
//! every cell, the potentials on electrode cells only. All balances are
//! cell-integrated finite volumes; advection is first-order upwind on the
//! face fluxes of the flow solve.
//!
//! Sign conventions: `j > 0` is V³⁺ reduction (charging). V²⁺ is produced at
//! `j/F`, V³⁺ consumed at the same rate, ionic current enters through the
//! membrane and electronic current leaves toward the current collector.

use crate::config::{CaseConfig, ConductivityMode};
use crate::dual::{Dual, Real};
use crate::error::{Error, Result};
use crate::flow::{FaceLayout, FlowState};
use crate::geometry::{Axis, Grid, Patch, Region};
use crate::sparse::{LuFactor, SparseMatrix, TripletBuilder};

/// Prefactor of the mass-transfer correlation k_m = 1.6e-4 · |u|^0.4 (SI).
pub const KM_PREFACTOR: f64 = 1.6e-4;
pub const KM_EXPONENT: f64 = 0.4;

/// Mass transfer coefficient (m/s) for a local speed (m/s).
pub fn mass_transfer_coeff(speed: f64, floor: f64) -> Result<f64> {
    if !(speed >= 0.0) {
        return Err(Error::OutOfRange {
            name: "speed",
            value: speed,
            reason: "speed must be non-negative",
        });
    }
    Ok(KM_PREFACTOR * speed.max(floor).powf(KM_EXPONENT))
}

/// d k_m / d speed, zero below the floor.
pub(crate) fn mass_transfer_coeff_derivative(speed: f64, floor: f64) -> f64 {
    if speed > floor {
        KM_EXPONENT * KM_PREFACTOR * speed.powf(KM_EXPONENT - 1.0)
    } else {
        0.0
    }
}

/// Kinetic constants gathered from a [`CaseConfig`].
#[derive(Debug, Clone, Copy)]
pub struct KineticConstants {
    pub faraday: f64,
    /// F / RT
    pub f_rt: f64,
    pub rate_constant: f64,
    pub alpha_c: f64,
    pub alpha_a: f64,
    pub u0: f64,
    pub specific_area: f64,
    pub clamp: f64,
}

impl KineticConstants {
    pub fn new(config: &CaseConfig) -> Self {
        Self {
            faraday: config.constants.faraday,
            f_rt: 1.0 / config.thermal_voltage(),
            rate_constant: config.kinetics.rate_constant,
            alpha_c: config.kinetics.alpha_c,
            alpha_a: config.kinetics.alpha_a,
            u0: config.kinetics.u0,
            specific_area: config.electrode.specific_area,
            clamp: config.numerics.bv_clamp,
        }
    }
}

/// exp(x) with |x| clamped; the second value reports whether the clamp hit.
#[inline]
fn clamped_exp<T: Real>(x: T, clamp: f64) -> (T, bool) {
    let v = x.value();
    if v > clamp {
        (T::cst(clamp.exp()), true)
    } else if v < -clamp {
        (T::cst((-clamp).exp()), true)
    } else {
        (x.exp(), false)
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            value: v,
            reason: "concentration must be positive",
        })
    }
}

/// Open-circuit potential from the Nernst relation (V).
pub fn open_circuit_potential(c2: f64, c3: f64, config: &CaseConfig) -> Result<f64> {
    check_positive("c_V2+", c2)?;
    check_positive("c_V3+", c3)?;
    Ok(config.kinetics.u0 + config.thermal_voltage() * (c3 / c2).ln())
}

/// Surface-to-bulk correction ratios (M̄, P̄).
fn mp_ratios<T: Real>(c2: T, c3: T, eta: T, km: T, k: &KineticConstants) -> (T, T, bool) {
    let r = T::cst(k.rate_constant) / km;
    let (ea, h1) = clamped_exp(eta * (k.alpha_a * k.f_rt), k.clamp);
    let (ec, h2) = clamped_exp(eta * (-k.alpha_c * k.f_rt), k.clamp);
    let m = r * c2.powf(k.alpha_c - 1.0) * c3.powf(k.alpha_a) * ea;
    let p = r * c2.powf(k.alpha_c) * c3.powf(k.alpha_a - 1.0) * ec;
    (m, p, h1 || h2)
}

#[inline]
fn surface_from_mp<T: Real>(c2: T, c3: T, m: T, p: T) -> (T, T) {
    let den = m + p + 1.0;
    let c2s = (p * c3 + (p + 1.0) * c2) / den;
    let c3s = (m * c2 + (m + 1.0) * c3) / den;
    (c2s, c3s)
}

/// Surface concentrations (c²⁺_s, c³⁺_s) from bulk values, overpotential and
/// mass transfer coefficient.
pub fn surface_concentrations(c2: f64, c3: f64, eta: f64, km: f64, config: &CaseConfig) -> Result<(f64, f64)> {
    check_positive("c_V2+", c2)?;
    check_positive("c_V3+", c3)?;
    if !(km > 0.0) {
        return Err(Error::OutOfRange {
            name: "k_m",
            value: km,
            reason: "mass transfer coefficient must be positive",
        });
    }
    let k = KineticConstants::new(config);
    let (m, p, _) = mp_ratios(c2, c3, eta, km, &k);
    let (a, b) = surface_from_mp(c2, c3, m, p);
    Ok((a.max(0.0), b.max(0.0)))
}

/// Exchange current density i0 = a F k c2^αc c3^αa (A/m³).
pub fn exchange_current_density(c2: f64, c3: f64, config: &CaseConfig) -> f64 {
    let k = KineticConstants::new(config);
    k.specific_area * k.faraday * k.rate_constant * c2.powf(k.alpha_c) * c3.powf(k.alpha_a)
}

/// Transfer current density (A/m³) of the Butler–Volmer law. The second
/// value reports whether an exponential argument was clamped.
pub fn butler_volmer(c2: f64, c3: f64, c2s: f64, c3s: f64, eta: f64, config: &CaseConfig) -> Result<(f64, bool)> {
    check_positive("c_V2+", c2)?;
    check_positive("c_V3+", c3)?;
    let k = KineticConstants::new(config);
    let i0 = exchange_current_density(c2, c3, config);
    let (ec, h1) = clamped_exp(-k.alpha_c * k.f_rt * eta, k.clamp);
    let (ea, h2) = clamped_exp(k.alpha_a * k.f_rt * eta, k.clamp);
    Ok((i0 * (c3s / c3 * ec - c2s / c2 * ea), h1 || h2))
}

/// Effective ionic conductivity of the electrolyte inside the electrode (S/m).
pub fn effective_ionic_conductivity(c2: f64, c3: f64, config: &CaseConfig) -> Result<f64> {
    check_positive("c_V2+", c2)?;
    check_positive("c_V3+", c3)?;
    let props = EffectiveProperties::new(config);
    Ok(match config.electrolyte.kappa_mode {
        ConductivityMode::Constant => config.electrolyte.kappa_e,
        ConductivityMode::Computed => props.kappa(c2, c3),
    })
}

/// Bruggemann-corrected transport properties.
#[derive(Debug, Clone, Copy)]
pub struct EffectiveProperties {
    /// Electrode diffusivities (m²/s) of V²⁺ and V³⁺.
    pub d_eff: [f64; 2],
    /// Open-channel diffusivities.
    pub d_open: [f64; 2],
    pub sigma_eff: f64,
    pub mode: ConductivityMode,
    pub kappa_const: f64,
    /// (F²/RT) z_i² D_i^eff per species.
    kappa_coeff: [f64; 2],
}

impl EffectiveProperties {
    pub fn new(config: &CaseConfig) -> Self {
        let eps = config.electrode.porosity;
        let br = eps.powf(1.5);
        let el = &config.electrolyte;
        let d_eff = [br * el.diffusivity_v2, br * el.diffusivity_v3];
        let f = config.constants.faraday;
        let pre = f * f / (config.constants.gas_constant * config.operating.temperature);
        let z = [config.constants.z_v2, config.constants.z_v3];
        Self {
            d_eff,
            d_open: [el.diffusivity_v2, el.diffusivity_v3],
            sigma_eff: (1.0 - eps).powf(1.5) * config.electrode.sigma_s,
            mode: el.kappa_mode,
            kappa_const: el.kappa_e,
            kappa_coeff: [pre * z[0] * z[0] * d_eff[0], pre * z[1] * z[1] * d_eff[1]],
        }
    }

    pub fn diffusivity(&self, region: Region, species: usize) -> f64 {
        match region {
            Region::Electrode => self.d_eff[species],
            Region::DesignLayer => self.d_open[species],
        }
    }

    #[inline]
    pub fn kappa<T: Real>(&self, c2: T, c3: T) -> T {
        match self.mode {
            ConductivityMode::Constant => T::cst(self.kappa_const),
            ConductivityMode::Computed => c2 * self.kappa_coeff[0] + c3 * self.kappa_coeff[1],
        }
    }
}

/// Local kinetics of one electrode cell.
#[derive(Debug, Clone, Copy)]
pub struct CellKinetics<T> {
    pub j: T,
    pub eta: T,
    pub ocp: T,
    pub i0: T,
    pub c2s: T,
    pub c3s: T,
    pub m: T,
    pub p: T,
    pub clamped: bool,
}

/// Full kinetics closure of one electrode cell.
pub fn cell_kinetics<T: Real>(c2: T, c3: T, phi_s: T, phi_e: T, km: T, k: &KineticConstants) -> CellKinetics<T> {
    let ocp = (c3 / c2).ln() / k.f_rt + k.u0;
    let eta = phi_s - phi_e - ocp;
    let (m, p, h1) = mp_ratios(c2, c3, eta, km, k);
    let (c2s, c3s) = surface_from_mp(c2, c3, m, p);
    let i0 = c2.powf(k.alpha_c) * c3.powf(k.alpha_a) * (k.specific_area * k.faraday * k.rate_constant);
    let (ec, h2) = clamped_exp(eta * (-k.alpha_c * k.f_rt), k.clamp);
    let (ea, h3) = clamped_exp(eta * (k.alpha_a * k.f_rt), k.clamp);
    let j = i0 * (c3s / c3 * ec - c2s / c2 * ea);
    CellKinetics {
        j,
        eta,
        ocp,
        i0,
        c2s,
        c3s,
        m,
        p,
        clamped: h1 || h2 || h3,
    }
}

/// Cell-wise derived fields over the electrode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ElectrodeFields {
    pub j: Vec<f64>,
    pub eta: Vec<f64>,
    pub ocp: Vec<f64>,
    pub i0: Vec<f64>,
    pub c2s: Vec<f64>,
    pub c3s: Vec<f64>,
    pub km: Vec<f64>,
    pub m: Vec<f64>,
    pub p: Vec<f64>,
    /// Surface-to-bulk ratios c_s / c.
    pub r2: Vec<f64>,
    pub r3: Vec<f64>,
}

/// Converged electrochemical state.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectroState {
    /// Bulk V²⁺ concentration on every cell (mol/m³).
    pub c2: Vec<f64>,
    /// Bulk V³⁺ concentration on every cell (mol/m³).
    pub c3: Vec<f64>,
    /// Electrode potential on electrode cells (V).
    pub phi_s: Vec<f64>,
    /// Electrolyte potential on electrode cells (V).
    pub phi_e: Vec<f64>,
    pub fields: ElectrodeFields,
    pub iterations: usize,
    pub update_history: Vec<f64>,
    /// Number of cells where a Butler–Volmer exponent hit the clamp.
    pub clamped_cells: usize,
}

impl ElectroState {
    /// Packs the unknowns in solver order.
    pub fn unknowns(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(2 * self.c2.len() + 2 * self.phi_s.len());
        y.extend_from_slice(&self.c2);
        y.extend_from_slice(&self.c3);
        y.extend_from_slice(&self.phi_s);
        y.extend_from_slice(&self.phi_e);
        y
    }

    /// Electrode-volume average of |η| (V).
    pub fn mean_abs_eta(&self, grid: &Grid) -> f64 {
        let v = grid.electrode_volume();
        grid.electrode_cells()
            .iter()
            .zip(&self.fields.eta)
            .map(|(&c, e)| grid.volume(c) * e.abs())
            .sum::<f64>()
            / v
    }

    /// ∫ j dΩ over the electrode (A).
    pub fn total_current(&self, grid: &Grid) -> f64 {
        grid.electrode_cells()
            .iter()
            .zip(&self.fields.j)
            .map(|(&c, j)| grid.volume(c) * j)
            .sum()
    }

    /// Electrode-volume average of the V³⁺ surface concentration.
    pub fn mean_c3s(&self, grid: &Grid) -> f64 {
        grid.electrode_cells()
            .iter()
            .zip(&self.fields.c3s)
            .map(|(&c, v)| grid.volume(c) * v)
            .sum::<f64>()
            / grid.electrode_volume()
    }

    /// Flux-weighted outlet concentrations (c_V2+, c_V3+).
    pub fn outlet_average(&self, grid: &Grid, flow: &FlowState) -> (f64, f64) {
        let layout = FaceLayout::new(grid);
        let mut q = 0.0;
        let mut a = 0.0;
        let mut b = 0.0;
        for (f, info) in layout.faces().iter().enumerate() {
            if info.patch == Some(Patch::Outlet) {
                let out = if info.upper.is_none() {
                    flow.face_flux[f]
                } else {
                    -flow.face_flux[f]
                };
                let c = info.lower.or(info.upper).unwrap();
                q += out;
                a += out * self.c2[c];
                b += out * self.c3[c];
            }
        }
        (a / q, b / q)
    }
}

/// Electrochemistry problem on a fixed flow field.
pub struct ElectroProblem<'a> {
    grid: &'a Grid,
    layout: FaceLayout,
    flux: &'a [f64],
    config: &'a CaseConfig,
    kin: KineticConstants,
    props: EffectiveProperties,
    /// k_m on electrode cells.
    km: Vec<f64>,
    /// Electrode cell pinned to φ_s = 0.
    pin: usize,
    pin_scale: f64,
    n: usize,
    ne: usize,
}

/// Number of electrode neighbours used in the stencil of a φ_e face term.
const FACE_VARS: usize = 6;
/// Local variables of a kinetics evaluation: c2, c3, φ_s, φ_e, k_m.
const CELL_VARS: usize = 5;
/// Floor on the backward error demanded of linear solves with the coupled
/// Jacobian, whose rows mix mol/s and A and are round-off limited.
pub const MIN_LINEAR_TOL: f64 = 1e-8;
/// Scaled residual norm below which any Newton step is accepted.
const MERIT_FLOOR: f64 = 1e-10;

impl<'a> ElectroProblem<'a> {
    pub fn new(grid: &'a Grid, flow: &'a FlowState, config: &'a CaseConfig) -> Result<Self> {
        let floor = config.numerics.km_floor;
        let km = grid
            .electrode_cells()
            .iter()
            .map(|&c| mass_transfer_coeff(flow.speed(c), floor))
            .collect::<Result<Vec<_>>>()?;
        let top = grid.nz_electrode - 1;
        let pin_cell = grid.cell(0, 0, top);
        let props = EffectiveProperties::new(config);
        Ok(Self {
            grid,
            layout: FaceLayout::new(grid),
            flux: &flow.face_flux,
            config,
            kin: KineticConstants::new(config),
            props,
            km,
            pin: grid.electrode_index(pin_cell).unwrap(),
            pin_scale: props.sigma_eff * grid.hx,
            n: grid.n_cells(),
            ne: grid.electrode_cells().len(),
        })
    }

    pub fn len(&self) -> usize {
        2 * self.n + 2 * self.ne
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn km(&self) -> &[f64] {
        &self.km
    }

    #[inline]
    fn ic2(&self, c: usize) -> usize {
        c
    }
    #[inline]
    fn ic3(&self, c: usize) -> usize {
        self.n + c
    }
    #[inline]
    fn is(&self, e: usize) -> usize {
        2 * self.n + e
    }
    #[inline]
    fn ie(&self, e: usize) -> usize {
        2 * self.n + self.ne + e
    }

    fn c_in(&self) -> [f64; 2] {
        [self.config.electrolyte.c_in_v2, self.config.electrolyte.c_in_v3]
    }

    fn current_density(&self) -> f64 {
        self.config.operating.current / self.grid.footprint()
    }

    /// Diffusive conductance D A / d between two cells for one species.
    fn diff_conductance(&self, a: usize, b: usize, axis: Axis, area: f64, s: usize) -> f64 {
        let g = self.grid;
        let da = self.props.diffusivity(g.region(a), s);
        let db = self.props.diffusivity(g.region(b), s);
        let ha = 0.5 * g.h(axis, g.ijk(a).2);
        let hb = 0.5 * g.h(axis, g.ijk(b).2);
        area / (ha / da + hb / db)
    }

    /// Entering flux through a boundary face (positive into the domain).
    #[inline]
    fn entering(&self, f: usize) -> f64 {
        let info = self.layout.face(f);
        if info.lower.is_none() {
            self.flux[f]
        } else {
            -self.flux[f]
        }
    }

    /// Residual and, optionally, Jacobian at `y`.
    pub fn assemble(&self, y: &[f64], with_jacobian: bool) -> (Vec<f64>, Option<TripletBuilder>) {
        let g = self.grid;
        let n_unknowns = self.len();
        let mut r = vec![0.0; n_unknowns];
        let mut t = with_jacobian.then(|| TripletBuilder::with_capacity(n_unknowns, 16 * n_unknowns));
        let c_in = self.c_in();

        // species transport
        for (f, info) in self.layout.faces().iter().enumerate() {
            let q = self.flux[f];
            match (info.lower, info.upper) {
                (Some(l), Some(u)) => {
                    let qp = q.max(0.0);
                    let qm = (-q).max(0.0);
                    for s in 0..2 {
                        let (il, iu) = if s == 0 {
                            (self.ic2(l), self.ic2(u))
                        } else {
                            (self.ic3(l), self.ic3(u))
                        };
                        let gd = self.diff_conductance(l, u, info.axis, info.area, s);
                        let flux = qp * y[il] - qm * y[iu] + gd * (y[il] - y[iu]);
                        r[il] += flux;
                        r[iu] -= flux;
                        if let Some(t) = t.as_mut() {
                            let dl = qp + gd;
                            let du = -qm - gd;
                            t.add(il, il, dl);
                            t.add(il, iu, du);
                            t.add(iu, il, -dl);
                            t.add(iu, iu, -du);
                        }
                    }
                }
                (Some(c), None) | (None, Some(c)) => match info.patch {
                    Some(Patch::Inlet) => {
                        let e = self.entering(f);
                        for s in 0..2 {
                            let ic = if s == 0 { self.ic2(c) } else { self.ic3(c) };
                            let h = 0.5 * g.h(info.axis, g.ijk(c).2);
                            let gd = self.props.diffusivity(g.region(c), s) * info.area / h;
                            let adv_diag = if e > 0.0 { 0.0 } else { -e };
                            r[ic] += -e.max(0.0) * c_in[s] + adv_diag * y[ic] + gd * (y[ic] - c_in[s]);
                            if let Some(t) = t.as_mut() {
                                t.add(ic, ic, adv_diag + gd);
                            }
                        }
                    }
                    Some(Patch::Outlet) => {
                        let out = -self.entering(f);
                        for s in 0..2 {
                            let ic = if s == 0 { self.ic2(c) } else { self.ic3(c) };
                            r[ic] += out * y[ic];
                            if let Some(t) = t.as_mut() {
                                t.add(ic, ic, out);
                            }
                        }
                    }
                    _ => {}
                },
                (None, None) => {}
            }
        }

        // conduction in the electrode
        let ie_flux = self.current_density();
        let sigma = self.props.sigma_eff;
        for (e, &c) in g.electrode_cells().iter().enumerate() {
            let (_, _, k) = g.ijk(c);
            for axis in [Axis::X, Axis::Y, Axis::Z] {
                let Some(nb) = g.neighbor(c, axis, true) else { continue };
                let Some(enb) = g.electrode_index(nb) else { continue };
                let area = g.face_area(axis, c);
                let dist = g.center_distance(c, nb, axis);
                // electronic
                let gs = sigma * area / dist;
                let (a, b) = (self.is(e), self.is(enb));
                let flux = gs * (y[a] - y[b]);
                r[a] += flux;
                r[b] -= flux;
                if let Some(t) = t.as_mut() {
                    t.add(a, a, gs);
                    t.add(a, b, -gs);
                    t.add(b, a, -gs);
                    t.add(b, b, gs);
                }
                // ionic, with concentration-dependent conductivity
                let ha = 0.5 * g.h(axis, k);
                let hb = 0.5 * g.h(axis, g.ijk(nb).2);
                let vars = [
                    Dual::<FACE_VARS>::var(y[self.ic2(c)], 0),
                    Dual::var(y[self.ic3(c)], 1),
                    Dual::var(y[self.ic2(nb)], 2),
                    Dual::var(y[self.ic3(nb)], 3),
                    Dual::var(y[self.ie(e)], 4),
                    Dual::var(y[self.ie(enb)], 5),
                ];
                let ka = self.props.kappa(vars[0], vars[1]);
                let kb = self.props.kappa(vars[2], vars[3]);
                let cond = Dual::cst(area) / (Dual::cst(ha) / ka + Dual::cst(hb) / kb);
                let flux = cond * (vars[4] - vars[5]);
                let (a, b) = (self.ie(e), self.ie(enb));
                r[a] += flux.v;
                r[b] -= flux.v;
                if let Some(t) = t.as_mut() {
                    let cols = [self.ic2(c), self.ic3(c), self.ic2(nb), self.ic3(nb), a, b];
                    for (col, d) in cols.into_iter().zip(flux.d) {
                        t.add(a, col, d);
                        t.add(b, col, -d);
                    }
                }
            }
            // galvanostatic boundary fluxes
            let area = g.face_area(Axis::Z, c);
            if k == g.nz_electrode - 1 {
                r[self.is(e)] += ie_flux * area;
            }
            if k == 0 {
                r[self.ie(e)] -= ie_flux * area;
            }
        }

        // reaction sources
        let fc = self.kin.faraday;
        for (e, &c) in g.electrode_cells().iter().enumerate() {
            let v = g.volume(c);
            let idx = [self.ic2(c), self.ic3(c), self.is(e), self.ie(e)];
            let kin = cell_kinetics(
                Dual::<CELL_VARS>::var(y[idx[0]], 0),
                Dual::var(y[idx[1]], 1),
                Dual::var(y[idx[2]], 2),
                Dual::var(y[idx[3]], 3),
                Dual::cst(self.km[e]),
                &self.kin,
            );
            let j = kin.j;
            // row weights: c2 -= V j/F, c3 += V j/F, φs -= V j, φe += V j
            let weights = [-v / fc, v / fc, -v, v];
            for (row, w) in idx.into_iter().zip(weights) {
                r[row] += w * j.v;
                if let Some(t) = t.as_mut() {
                    for (col, d) in idx.into_iter().zip(&j.d[..4]) {
                        t.add(row, col, w * d);
                    }
                }
            }
        }

        // reference potential replaces one electronic balance
        let pin = self.is(self.pin);
        r[pin] = self.pin_scale * y[pin];
        if let Some(t) = t.as_mut() {
            t.retain(|row, _| row != pin);
            t.add(pin, pin, self.pin_scale);
        }
        (r, t)
    }

    /// Residual scales used by the line search: species balances (mol/s)
    /// and charge balances (A).
    fn scales(&self) -> (f64, f64) {
        let c_ref = self.c_in()[0].max(self.c_in()[1]);
        let q_in: f64 = self
            .layout
            .faces()
            .iter()
            .enumerate()
            .filter(|(_, i)| i.patch == Some(Patch::Inlet))
            .map(|(f, _)| self.entering(f).abs())
            .sum();
        let g = self.grid;
        let d = self.props.d_eff[0].max(self.props.d_eff[1]);
        let q_diff = d * g.footprint() / g.length;
        let i_ref = self.config.operating.current.abs().max(1e-6);
        (c_ref * q_in.max(q_diff), i_ref)
    }

    fn merit(&self, r: &[f64], scales: (f64, f64)) -> f64 {
        let nc = 2 * self.n;
        r.iter()
            .enumerate()
            .map(|(i, v)| {
                let s = if i < nc { scales.0 } else { scales.1 };
                (v / s).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Electronic and ionic current (A) crossing each horizontal plane of
    /// the electrode in +z, from the membrane face (index 0) to the collector
    /// face (index `nz_electrode`). Charge conservation makes every total I.
    pub fn plane_currents(&self, y: &[f64]) -> Vec<[f64; 2]> {
        let g = self.grid;
        let ne_z = g.nz_electrode;
        let mut out = vec![[0.0; 2]; ne_z + 1];
        let total = self.current_density() * g.footprint();
        out[0][1] = total;
        out[ne_z][0] = total;
        for (e, &c) in g.electrode_cells().iter().enumerate() {
            let k = g.ijk(c).2;
            let Some(nb) = g.neighbor(c, Axis::Z, true) else {
                continue;
            };
            let Some(enb) = g.electrode_index(nb) else { continue };
            let area = g.face_area(Axis::Z, c);
            let dist = g.center_distance(c, nb, Axis::Z);
            out[k + 1][0] += self.props.sigma_eff * area / dist * (y[self.is(e)] - y[self.is(enb)]);
            let ka = self.props.kappa(y[self.ic2(c)], y[self.ic3(c)]);
            let kb = self.props.kappa(y[self.ic2(nb)], y[self.ic3(nb)]);
            let cond = area / (0.5 * g.h(Axis::Z, k) / ka + 0.5 * g.h(Axis::Z, k + 1) / kb);
            out[k + 1][1] += cond * (y[self.ie(e)] - y[self.ie(enb)]);
        }
        out
    }

    /// Upper bound on the current the electrode can carry: the local rate
    /// aF k_m (c − c_s) never exceeds aF k_m c_in of the consumed species.
    pub fn limiting_current(&self) -> f64 {
        let [c2, c3] = self.c_in();
        let c = if self.config.operating.current >= 0.0 { c3 } else { c2 };
        let af = self.kin.specific_area * self.kin.faraday;
        self.grid
            .electrode_cells()
            .iter()
            .zip(&self.km)
            .map(|(&cell, km)| af * km * c * self.grid.volume(cell))
            .sum()
    }

    /// Initial state: inlet composition everywhere and a uniform overpotential
    /// that carries the applied current.
    pub fn initial_guess(&self) -> Result<Vec<f64>> {
        let [c2, c3] = self.c_in();
        let mut y = vec![0.0; self.len()];
        y[..self.n].fill(c2);
        y[self.n..2 * self.n].fill(c3);
        let target = self.config.operating.current / self.grid.electrode_volume();
        let i0 = exchange_current_density(c2, c3, self.config);
        let k = &self.kin;
        let bv = |eta: f64| i0 * ((-k.alpha_c * k.f_rt * eta).exp() - (k.alpha_a * k.f_rt * eta).exp()) - target;
        // bv is decreasing in eta
        let (mut lo, mut hi) = (-1.0, 1.0);
        if bv(lo) < 0.0 || bv(hi) > 0.0 {
            return Err(Error::OutOfRange {
                name: "current",
                value: self.config.operating.current,
                reason: "applied current exceeds the kinetic limit of the initial guess",
            });
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if bv(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let eta0 = 0.5 * (lo + hi);
        let ocp = open_circuit_potential(c2, c3, self.config)?;
        let phi_e = -(eta0 + ocp);
        y[2 * self.n + self.ne..].fill(phi_e);
        Ok(y)
    }

    /// Damped Newton iteration from `y0`.
    pub fn solve_from(&self, y0: Vec<f64>) -> Result<ElectroState> {
        let current = self.config.operating.current;
        if current.abs() >= self.limiting_current() {
            return Err(Error::OutOfRange {
                name: "current",
                value: current,
                reason: "applied current exceeds the mass-transport limit of this flow field",
            });
        }
        let nm = &self.config.numerics;
        let scales = self.scales();
        let vt = 1.0 / self.kin.f_rt;
        let c_ref = self.c_in()[0].max(self.c_in()[1]);
        let mut y = y0;
        let mut history = Vec::new();
        let mut symbolic = None;
        let (mut r, _) = self.assemble(&y, false);
        let mut phi = self.merit(&r, scales);
        for it in 1..=nm.electro_max_iter {
            let (_, t) = self.assemble(&y, true);
            let jac = t.expect("jacobian requested").build()?;
            let lu = match &symbolic {
                Some(s) => jac.lu_with_symbolic(s, "electrochemistry Newton step")?,
                None => jac.lu("electrochemistry Newton step")?,
            };
            if symbolic.is_none() {
                symbolic = Some(lu.symbolic().clone());
            }
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let dy = lu.solve(&neg, nm.linear_tol.max(MIN_LINEAR_TOL))?;

            // backtracking on the scaled residual, keeping concentrations positive
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let trial: Vec<f64> = y.iter().zip(&dy).map(|(a, b)| a + step * b).collect();
                if trial[..2 * self.n].iter().all(|&c| c > 0.0) {
                    let (rt, _) = self.assemble(&trial, false);
                    let pt = self.merit(&rt, scales);
                    if pt.is_finite() && (pt <= (1.0 - 1e-4 * step) * phi || pt < MERIT_FLOOR) {
                        accepted = Some((trial, rt, pt));
                        break;
                    }
                }
                step *= 0.5;
            }
            let full_update = self.scaled_update(&dy, 1.0, c_ref, vt);
            if accepted.is_none() && full_update < nm.electro_tol {
                // already at round-off level: the residual cannot decrease further
                history.push(full_update);
                return self.finish(y, it, history);
            }
            let Some((trial, rt, pt)) = accepted else {
                return Err(Error::NotConverged {
                    solver: "electrochemistry Newton",
                    iterations: it,
                    last_update: history.last().copied().unwrap_or(f64::NAN),
                    history,
                });
            };
            let update = self.scaled_update(&dy, step, c_ref, vt);
            history.push(update);
            log::debug!("newton {it}: update {update:.3e} merit {pt:.3e} step {step}");
            y = trial;
            r = rt;
            phi = pt;
            if update < nm.electro_tol && step == 1.0 {
                return self.finish(y, it, history);
            }
        }
        Err(Error::NotConverged {
            solver: "electrochemistry Newton",
            iterations: nm.electro_max_iter,
            last_update: history.last().copied().unwrap_or(f64::NAN),
            history,
        })
    }

    /// Largest update, concentrations relative to the inlet value and
    /// potentials relative to RT/F.
    fn scaled_update(&self, dy: &[f64], step: f64, c_ref: f64, vt: f64) -> f64 {
        dy.iter()
            .enumerate()
            .map(|(i, d)| {
                let s = if i < 2 * self.n { c_ref } else { vt };
                (step * d / s).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn solve(&self) -> Result<ElectroState> {
        self.solve_from(self.initial_guess()?)
    }

    fn finish(&self, y: Vec<f64>, iterations: usize, update_history: Vec<f64>) -> Result<ElectroState> {
        for (cell, &v) in y[..2 * self.n].iter().enumerate() {
            if !(v > 0.0) {
                return Err(Error::Positivity {
                    cell: cell % self.n,
                    value: v,
                });
            }
        }
        let n = self.n;
        let ne = self.ne;
        let c2 = y[..n].to_vec();
        let c3 = y[n..2 * n].to_vec();
        let phi_s = y[2 * n..2 * n + ne].to_vec();
        let phi_e = y[2 * n + ne..].to_vec();
        let mut fields = ElectrodeFields::default();
        let mut clamped_cells = 0;
        for (e, &c) in self.grid.electrode_cells().iter().enumerate() {
            let k = cell_kinetics(c2[c], c3[c], phi_s[e], phi_e[e], self.km[e], &self.kin);
            clamped_cells += k.clamped as usize;
            fields.j.push(k.j);
            fields.eta.push(k.eta);
            fields.ocp.push(k.ocp);
            fields.i0.push(k.i0);
            fields.c2s.push(k.c2s);
            fields.c3s.push(k.c3s);
            fields.km.push(self.km[e]);
            fields.m.push(k.m);
            fields.p.push(k.p);
            fields.r2.push(k.c2s / c2[c]);
            fields.r3.push(k.c3s / c3[c]);
        }
        if clamped_cells > 0 {
            log::warn!("Butler-Volmer exponent clamped in {clamped_cells} cells");
        }
        Ok(ElectroState {
            c2,
            c3,
            phi_s,
            phi_e,
            fields,
            iterations,
            update_history,
            clamped_cells,
        })
    }

    /// Jacobian of the residual at a converged state, factorized.
    pub fn jacobian(&self, y: &[f64]) -> Result<LuFactor> {
        let (_, t) = self.assemble(y, true);
        t.expect("jacobian requested").build()?.lu("electrochemistry adjoint")
    }

    /// Jacobian as an unfactorized matrix.
    pub fn jacobian_matrix(&self, y: &[f64]) -> Result<SparseMatrix> {
        let (_, t) = self.assemble(y, true);
        t.expect("jacobian requested").build()
    }

    /// λᵀ ∂R/∂q for every face flux q.
    pub fn flux_sensitivity(&self, y: &[f64], lambda: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.layout.len()];
        for (f, info) in self.layout.faces().iter().enumerate() {
            let q = self.flux[f];
            let mut acc = 0.0;
            match (info.lower, info.upper) {
                (Some(l), Some(u)) => {
                    for s in 0..2 {
                        let (il, iu) = if s == 0 {
                            (self.ic2(l), self.ic2(u))
                        } else {
                            (self.ic3(l), self.ic3(u))
                        };
                        let dflux = if q > 0.0 { y[il] } else { y[iu] };
                        acc += (lambda[il] - lambda[iu]) * dflux;
                    }
                }
                (Some(c), None) | (None, Some(c)) => {
                    let sign = if info.lower.is_none() { 1.0 } else { -1.0 };
                    let c_in = self.c_in();
                    for s in 0..2 {
                        let ic = if s == 0 { self.ic2(c) } else { self.ic3(c) };
                        let d = match info.patch {
                            Some(Patch::Inlet) => {
                                if self.entering(f) > 0.0 {
                                    -sign * c_in[s]
                                } else {
                                    -sign * y[ic]
                                }
                            }
                            Some(Patch::Outlet) => -sign * y[ic],
                            _ => 0.0,
                        };
                        acc += lambda[ic] * d;
                    }
                }
                (None, None) => {}
            }
            out[f] = acc;
        }
        out
    }

    /// ∂(λᵀR)/∂k_m and ∂(objective)/∂k_m per electrode cell, where the
    /// objective is the electrode-volume mean of c³⁺_s.
    pub fn km_sensitivity(&self, y: &[f64], lambda: &[f64]) -> Vec<f64> {
        let g = self.grid;
        let vol = g.electrode_volume();
        g.electrode_cells()
            .iter()
            .enumerate()
            .map(|(e, &c)| {
                let v = g.volume(c);
                let idx = [self.ic2(c), self.ic3(c), self.is(e), self.ie(e)];
                let k = cell_kinetics(
                    Dual::<1>::cst(y[idx[0]]),
                    Dual::cst(y[idx[1]]),
                    Dual::cst(y[idx[2]]),
                    Dual::cst(y[idx[3]]),
                    Dual::var(self.km[e], 0),
                    &self.kin,
                );
                let fc = self.kin.faraday;
                let weights = [-v / fc, v / fc, -v, v];
                let pin = self.is(self.pin);
                let res: f64 = idx
                    .iter()
                    .zip(weights)
                    .filter(|(&row, _)| row != pin)
                    .map(|(&row, w)| lambda[row] * w * k.j.d[0])
                    .sum();
                res + v / vol * k.c3s.d[0]
            })
            .collect()
    }

    /// Objective (electrode mean of c³⁺_s) and its gradient in the unknowns.
    pub fn objective_gradient(&self, y: &[f64]) -> (f64, Vec<f64>) {
        let g = self.grid;
        let vol = g.electrode_volume();
        let mut grad = vec![0.0; self.len()];
        let mut f = 0.0;
        for (e, &c) in g.electrode_cells().iter().enumerate() {
            let w = g.volume(c) / vol;
            let idx = [self.ic2(c), self.ic3(c), self.is(e), self.ie(e)];
            let k = cell_kinetics(
                Dual::<4>::var(y[idx[0]], 0),
                Dual::var(y[idx[1]], 1),
                Dual::var(y[idx[2]], 2),
                Dual::var(y[idx[3]], 3),
                Dual::cst(self.km[e]),
                &self.kin,
            );
            f += w * k.c3s.v;
            for (i, d) in idx.into_iter().zip(k.c3s.d) {
                grad[i] += w * d;
            }
        }
        (f, grad)
    }
}

/// Solves the electrochemistry on a given flow field.
pub fn solve_electrochemistry(grid: &Grid, flow: &FlowState, config: &CaseConfig) -> Result<ElectroState> {
    ElectroProblem::new(grid, flow, config)?.solve()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::solve_flow;
    use crate::geometry::build_grid;
    use crate::topopt::DensityField;
    use proptest::prelude::*;

    fn small_case(current: f64) -> (CaseConfig, Grid) {
        let mut c = CaseConfig::default();
        c.geometry.nx = 8;
        c.geometry.ny = 8;
        c.geometry.nz_channel = 2;
        c.geometry.nz_electrode = 2;
        c.geometry.inlet.width = 0.0125;
        c.geometry.outlet.width = 0.0125;
        c.operating.current = current;
        let g = build_grid(&c).unwrap();
        (c, g)
    }

    #[test]
    fn mass_transfer_coefficient_values() {
        let km = mass_transfer_coeff(0.01, 1e-9).unwrap();
        assert!((km - 2.5358e-5).abs() < 1e-9);
        assert_eq!(mass_transfer_coeff(0.0, 1e-6).unwrap(), 1.6e-4 * 1e-6f64.powf(0.4));
        assert!(mass_transfer_coeff(-1.0, 1e-9).is_err());
        let h = 1e-7;
        let fd =
            (mass_transfer_coeff(0.01 + h, 1e-9).unwrap() - mass_transfer_coeff(0.01 - h, 1e-9).unwrap()) / (2.0 * h);
        assert!((mass_transfer_coeff_derivative(0.01, 1e-9) - fd).abs() < 1e-6 * fd);
    }

    #[test]
    fn exchange_current_at_inlet_state() {
        let c = CaseConfig::default();
        let i0 = exchange_current_density(750.0, 750.0, &c);
        assert!((i0 - 1.993e5).abs() < 1e2, "{i0}");
    }

    #[test]
    fn open_circuit_potential_nernst() {
        let c = CaseConfig::default();
        assert!((open_circuit_potential(750.0, 750.0, &c).unwrap() + 0.255).abs() < 1e-15);
        let vt = 8.314462618 * 298.0 / 96485.33212;
        let u = open_circuit_potential(100.0, 100.0 * std::f64::consts::E, &c).unwrap();
        assert!((u - (-0.255 + vt)).abs() < 1e-14);
        assert!(open_circuit_potential(0.0, 1.0, &c).is_err());
        assert!(open_circuit_potential(1.0, -1.0, &c).is_err());
    }

    #[test]
    fn equilibrium_has_zero_current() {
        let c = CaseConfig::default();
        let (j, clamped) = butler_volmer(600.0, 900.0, 600.0, 900.0, 0.0, &c).unwrap();
        assert_eq!(j, 0.0);
        assert!(!clamped);
        let (c2s, c3s) = surface_concentrations(600.0, 900.0, 0.0, 1e-5, &c).unwrap();
        assert!((c2s - 600.0).abs() < 1e-9 && (c3s - 900.0).abs() < 1e-9);
    }

    #[test]
    fn clamp_is_reported() {
        let c = CaseConfig::default();
        let (_, clamped) = butler_volmer(750.0, 750.0, 750.0, 750.0, 10.0, &c).unwrap();
        assert!(clamped);
    }

    #[test]
    fn surface_values_balance_reaction_and_film_transport() {
        let c = CaseConfig::default();
        let (c2, c3, km) = (500.0, 1000.0, 3e-5);
        let af = c.electrode.specific_area * c.constants.faraday;
        for eta in [-0.1, -0.02, 0.0, 0.03, 0.08] {
            let (c2s, c3s) = surface_concentrations(c2, c3, eta, km, &c).unwrap();
            let (j, _) = butler_volmer(c2, c3, c2s, c3s, eta, &c).unwrap();
            let scale = af * km * (c2 + c3);
            assert!((j - af * km * (c3 - c3s)).abs() < 1e-10 * scale, "eta {eta}");
            assert!((j - af * km * (c2s - c2)).abs() < 1e-10 * scale, "eta {eta}");
        }
    }

    #[test]
    fn cell_kinetics_matches_scalar_functions() {
        let c = CaseConfig::default();
        let k = KineticConstants::new(&c);
        let (c2, c3, ps, pe, km) = (700.0, 800.0, 0.0, 0.27, 2e-5);
        let ck = cell_kinetics(c2, c3, ps, pe, km, &k);
        let u = open_circuit_potential(c2, c3, &c).unwrap();
        let eta = ps - pe - u;
        let (c2s, c3s) = surface_concentrations(c2, c3, eta, km, &c).unwrap();
        let (j, _) = butler_volmer(c2, c3, c2s, c3s, eta, &c).unwrap();
        assert!((ck.eta - eta).abs() < 1e-14);
        assert!((ck.j - j).abs() < 1e-9 * j.abs());
    }

    #[test]
    fn conductivity_modes() {
        let mut c = CaseConfig::default();
        c.electrolyte.kappa_mode = ConductivityMode::Constant;
        assert_eq!(effective_ionic_conductivity(750.0, 750.0, &c).unwrap(), 7.8);
        c.electrolyte.kappa_mode = ConductivityMode::Computed;
        let k1 = effective_ionic_conductivity(750.0, 750.0, &c).unwrap();
        let k2 = effective_ionic_conductivity(1500.0, 1500.0, &c).unwrap();
        assert!(k1 > 0.0 && (k2 / k1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn galvanostatic_solve_conserves_charge_and_charges_the_electrolyte() {
        let (c, g) = small_case(4.0);
        let flow = solve_flow(&g, &DensityField::uniform(&g, 1.0), &c).unwrap();
        let st = solve_electrochemistry(&g, &flow, &c).unwrap();
        assert!((st.total_current(&g) - 4.0).abs() < 1e-4 * 4.0);
        let (c2, c3) = st.outlet_average(&g, &flow);
        assert!(c2 > 750.0 && c3 < 750.0, "{c2} {c3}");
        assert!(st.mean_c3s(&g) < 750.0);
        assert!(st.mean_abs_eta(&g) > 0.0);
    }

    #[test]
    fn zero_current_stays_at_equilibrium() {
        let (c, g) = small_case(0.0);
        let flow = solve_flow(&g, &DensityField::uniform(&g, 1.0), &c).unwrap();
        let st = solve_electrochemistry(&g, &flow, &c).unwrap();
        assert!(st.total_current(&g).abs() < 1e-8);
        assert!(st.c2.iter().chain(&st.c3).all(|v| (v - 750.0).abs() < 1e-6));
        assert!(st.mean_abs_eta(&g) < 1e-8);
    }

    #[test]
    fn every_plane_carries_the_applied_current() {
        let (c, g) = small_case(4.0);
        let flow = solve_flow(&g, &DensityField::uniform(&g, 1.0), &c).unwrap();
        let p = ElectroProblem::new(&g, &flow, &c).unwrap();
        let st = p.solve().unwrap();
        let planes = p.plane_currents(&st.unknowns());
        assert_eq!(planes.len(), g.nz_electrode + 1);
        assert_eq!(planes[0][0], 0.0);
        assert_eq!(planes[g.nz_electrode][1], 0.0);
        for [s, e] in planes {
            assert!((s + e - 4.0).abs() < 1e-4 * 4.0, "{s} + {e}");
        }
    }

    #[test]
    fn current_above_transport_limit_is_rejected() {
        let (c, g) = small_case(4.0);
        let flow = solve_flow(&g, &DensityField::uniform(&g, 1.0), &c).unwrap();
        let limit = ElectroProblem::new(&g, &flow, &c).unwrap().limiting_current();
        assert!(limit > 4.0);
        let (c, _) = small_case(1.01 * limit);
        let err = solve_electrochemistry(&g, &flow, &c).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { name: "current", .. }), "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn surface_sum_is_conserved(c2 in 1.0f64..2000.0, c3 in 1.0f64..2000.0, eta in -0.3f64..0.3, km in 1e-7f64..1e-3) {
            let c = CaseConfig::default();
            let (a, b) = surface_concentrations(c2, c3, eta, km, &c).unwrap();
            prop_assert!(((a + b) - (c2 + c3)).abs() <= 4.0 * f64::EPSILON * (c2 + c3));
        }
    }
}
