//! Reference flow fields, design evaluation at matched operating points and
//! power-loss sweeps.
//!
//! Rasterization: channels are straight bands along x, centred across the
//! width at the configured pitch (centre to centre), one channel width wide.
//! Manifolds are one channel width wide and run along the west (inlet) and
//! east (outlet) edges over the full width. Channels span the full depth of
//! the design layer unless a shallower depth is given.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::config::CaseConfig;
use crate::electrochem::{ElectroProblem, ElectroState};
use crate::error::{Error, Result};
use crate::flow::{assemble_brinkman, FactoredBrinkman, FlowState, InversePermeabilityField};
use crate::geometry::{Axis, Grid};
use crate::topopt::DensityField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReferenceKind {
    Parallel,
    Interdigitated,
}

impl FromStr for ReferenceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "parallel" => Ok(Self::Parallel),
            "interdigitated" => Ok(Self::Interdigitated),
            other => Err(Error::Config(format!("unknown reference field `{other}`"))),
        }
    }
}

impl fmt::Display for ReferenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Parallel => "parallel",
            Self::Interdigitated => "interdigitated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceFieldSpec {
    pub kind: ReferenceKind,
    pub channel_width: f64,
    /// Centre-to-centre distance between neighbouring channels.
    pub channel_pitch: f64,
    pub channel_thickness: f64,
    pub manifold_width: f64,
}

impl ReferenceFieldSpec {
    pub fn from_config(kind: ReferenceKind, config: &CaseConfig) -> Self {
        let r = &config.reference;
        Self {
            kind,
            channel_width: r.channel_width,
            channel_pitch: r.channel_pitch,
            channel_thickness: config.geometry.channel_thickness,
            manifold_width: r.channel_width,
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        for (name, v) in [
            ("channel_width", self.channel_width),
            ("channel_pitch", self.channel_pitch),
            ("channel_thickness", self.channel_thickness),
            ("manifold_width", self.manifold_width),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::OutOfRange {
                    name,
                    value: v,
                    reason: "must be positive",
                });
            }
        }
        if self.channel_pitch <= self.channel_width {
            return Err(Error::OutOfRange {
                name: "channel_pitch",
                value: self.channel_pitch,
                reason: "pitch must exceed the channel width",
            });
        }
        if self.channel_width > grid.width {
            return Err(Error::Grid("channel wider than the cell footprint".into()));
        }
        if 2.0 * self.manifold_width >= grid.length {
            return Err(Error::Grid("manifolds do not fit in the cell length".into()));
        }
        if self.channel_thickness > grid.channel_thickness * (1.0 + 1e-9) {
            return Err(Error::Grid("channel deeper than the design layer".into()));
        }
        Ok(())
    }

    /// floor((W − width) / pitch) + 1
    pub fn channel_count(&self, width: f64) -> usize {
        ((width - self.channel_width) / self.channel_pitch + 1e-9).floor() as usize + 1
    }

    /// Channel centre lines (y), centred across the footprint.
    pub fn channel_centers(&self, width: f64) -> Vec<f64> {
        let n = self.channel_count(width);
        let span = (n - 1) as f64 * self.channel_pitch;
        let y0 = 0.5 * (width - span);
        (0..n).map(|i| y0 + i as f64 * self.channel_pitch).collect()
    }
}

/// Cell band [start, end) covering an interval of length `w` centred at `c`.
fn band(c: f64, w: f64, h: f64, n: usize) -> (usize, usize) {
    let count = ((w / h).round() as usize).max(1);
    let start = ((c - 0.5 * w) / h).round().max(0.0) as usize;
    let start = start.min(n - count.min(n));
    (start, (start + count).min(n))
}

/// Binary density raster of a reference flow field.
pub fn generate_reference(spec: &ReferenceFieldSpec, grid: &Grid) -> Result<DensityField> {
    spec.validate(grid)?;
    let (nx, ny) = (grid.nx, grid.ny);
    let manifold = ((spec.manifold_width / grid.hx).round() as usize).max(1);
    let gap = (((spec.channel_pitch - spec.channel_width) / grid.hx).round() as usize).max(1);
    if 2 * manifold + gap >= nx {
        return Err(Error::Grid("reference field does not fit on the grid".into()));
    }
    let mut open2d = vec![false; nx * ny];
    for j in 0..ny {
        for i in (0..manifold).chain(nx - manifold..nx) {
            open2d[i + nx * j] = true;
        }
    }
    for (n, y) in spec.channel_centers(grid.width).into_iter().enumerate() {
        let (j0, j1) = band(y, spec.channel_width, grid.hy, ny);
        let (i0, i1) = match spec.kind {
            ReferenceKind::Parallel => (manifold, nx - manifold),
            ReferenceKind::Interdigitated if n % 2 == 0 => (manifold, nx - manifold - gap),
            ReferenceKind::Interdigitated => (manifold + gap, nx - manifold),
        };
        for j in j0..j1 {
            for i in i0..i1 {
                open2d[i + nx * j] = true;
            }
        }
    }
    let depth_top = grid.electrode_thickness + spec.channel_thickness;
    let rho = grid
        .design_cells()
        .iter()
        .map(|&c| {
            let (i, j, k) = grid.ijk(c);
            let z_mid = 0.5 * (grid.z[k] + grid.z[k + 1]);
            if open2d[i + nx * j] && z_mid < depth_top {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(DensityField::unfiltered(rho))
}

/// Binary design from the filtered density: 1 where ρ̃ ≥ threshold.
pub fn threshold_design(density: &DensityField, threshold: f64) -> DensityField {
    DensityField::unfiltered(
        density
            .filtered
            .iter()
            .map(|&r| if r >= threshold { 1.0 } else { 0.0 })
            .collect(),
    )
}

/// True when open design cells (ρ̃ ≥ threshold) connect an inlet cell to an
/// outlet cell through face neighbours.
pub fn is_through_connected(grid: &Grid, density: &DensityField, threshold: f64) -> bool {
    let open = |c: usize| grid.design_index(c).is_some_and(|d| density.filtered[d] >= threshold);
    let mut seen = vec![false; grid.n_cells()];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for f in grid.inlet_faces() {
        if open(f.cell) && !seen[f.cell] {
            seen[f.cell] = true;
            queue.push_back(f.cell);
        }
    }
    let targets: Vec<usize> = grid.outlet_faces().iter().map(|f| f.cell).collect();
    while let Some(c) = queue.pop_front() {
        if targets.contains(&c) {
            return true;
        }
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            for upper in [false, true] {
                if let Some(nb) = grid.neighbor(c, axis, upper) {
                    if !seen[nb] && open(nb) {
                        seen[nb] = true;
                        queue.push_back(nb);
                    }
                }
            }
        }
    }
    false
}

/// How the flow is driven at an operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowControl {
    /// Inlet minus outlet pressure (Pa).
    PressureDrop(f64),
    /// Inlet volumetric flow rate (m³/s).
    FlowRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub current: f64,
    pub porosity: f64,
    pub control: FlowControl,
}

impl OperatingPoint {
    pub fn config_for(&self, base: &CaseConfig) -> Result<CaseConfig> {
        let cfg = base.with_porosity(self.porosity).with_current(self.current);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Performance figures of one design at one operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerformanceReport {
    pub current: f64,
    pub porosity: f64,
    pub pressure_drop: f64,
    pub flow_rate: f64,
    /// Electrode-volume mean of |η| (V).
    pub mean_abs_eta: f64,
    /// Electrode-volume mean of c³⁺_s (mol/m³).
    pub objective: f64,
    pub polarization_loss: f64,
    pub pumping_loss: f64,
    pub power_loss: f64,
}

impl PerformanceReport {
    /// Assembles the report; P_loss = Iη + QΔp.
    pub fn new(
        current: f64,
        porosity: f64,
        pressure_drop: f64,
        flow_rate: f64,
        mean_abs_eta: f64,
        objective: f64,
    ) -> Self {
        let polarization_loss = current * mean_abs_eta;
        let pumping_loss = flow_rate * pressure_drop;
        Self {
            current,
            porosity,
            pressure_drop,
            flow_rate,
            mean_abs_eta,
            objective,
            polarization_loss,
            pumping_loss,
            power_loss: polarization_loss + pumping_loss,
        }
    }
}

/// Flow solved for a design, reusable across flow-rate targets.
pub struct PreparedDesign {
    factored: FactoredBrinkman,
    config: CaseConfig,
}

impl PreparedDesign {
    pub fn new(grid: &Grid, density: &DensityField, config: &CaseConfig) -> Result<Self> {
        let alpha = InversePermeabilityField::from_density(grid, density, config)?;
        let factored = assemble_brinkman(grid, &alpha, config)?.factor()?;
        Ok(Self {
            factored,
            config: config.clone(),
        })
    }

    fn solve_at(&self, grid: &Grid, p_in: f64) -> Result<FlowState> {
        let c = &self.config;
        self.factored
            .solve(grid, p_in, c.operating.p_out, c.numerics.linear_tol)
    }

    /// Flow at a prescribed pressure drop or flow rate. Flow-rate targets
    /// use a secant iteration on the inlet pressure.
    pub fn flow(&self, grid: &Grid, control: FlowControl) -> Result<FlowState> {
        let p_out = self.config.operating.p_out;
        match control {
            FlowControl::PressureDrop(dp) => self.solve_at(grid, p_out + dp),
            FlowControl::FlowRate(q) => {
                if !(q > 0.0) {
                    return Err(Error::OutOfRange {
                        name: "flow_rate",
                        value: q,
                        reason: "target flow rate must be positive",
                    });
                }
                let mut p0 = p_out;
                let mut s0 = self.solve_at(grid, p0)?;
                let mut p1 = p_out + self.config.operating.p_in.abs().max(1.0);
                let mut s1 = self.solve_at(grid, p1)?;
                for _ in 0..20 {
                    if ((s1.q_in - q) / q).abs() < 1e-9 {
                        return Ok(s1);
                    }
                    let slope = (s1.q_in - s0.q_in) / (p1 - p0);
                    if !(slope > 0.0) {
                        return Err(Error::Singular("flow-rate targeting: design blocks the flow"));
                    }
                    let p2 = p1 + (q - s1.q_in) / slope;
                    (p0, s0) = (p1, s1);
                    p1 = p2;
                    s1 = self.solve_at(grid, p1)?;
                }
                if ((s1.q_in - q) / q).abs() < 5e-3 {
                    Ok(s1)
                } else {
                    Err(Error::NotConverged {
                        solver: "flow-rate targeting",
                        iterations: 20,
                        last_update: (s1.q_in - q) / q,
                        history: vec![],
                    })
                }
            }
        }
    }
}

/// Full evaluation result, with fields for export.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: PerformanceReport,
    pub flow: FlowState,
    pub electro: ElectroState,
}

fn evaluate_prepared(grid: &Grid, prepared: &PreparedDesign, point: &OperatingPoint) -> Result<Evaluation> {
    let flow = prepared.flow(grid, point.control)?;
    let electro = ElectroProblem::new(grid, &flow, &prepared.config)?.solve()?;
    let report = PerformanceReport::new(
        point.current,
        point.porosity,
        flow.pressure_drop(),
        flow.q_in,
        electro.mean_abs_eta(grid),
        electro.mean_c3s(grid),
    );
    Ok(Evaluation { report, flow, electro })
}

/// Runs flow and electrochemistry for a design at an operating point.
pub fn evaluate_design(
    grid: &Grid,
    density: &DensityField,
    point: &OperatingPoint,
    config: &CaseConfig,
) -> Result<Evaluation> {
    let cfg = point.config_for(config)?;
    let prepared = PreparedDesign::new(grid, density, &cfg)?;
    evaluate_prepared(grid, &prepared, point)
}

/// One cell of a sweep table.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub design: String,
    pub point: OperatingPoint,
    pub result: std::result::Result<PerformanceReport, String>,
}

/// Cross product of designs and operating points. Failures are recorded
/// per row and the sweep continues.
pub fn sweep(
    grid: &Grid,
    designs: &[(String, DensityField)],
    points: &[OperatingPoint],
    config: &CaseConfig,
) -> Result<Vec<SweepRow>> {
    if designs.is_empty() || points.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one design and one operating point".into(),
        ));
    }
    let mut rows = Vec::with_capacity(designs.len() * points.len());
    for (name, density) in designs {
        // the flow factorization depends on the porosity only
        let mut cache: Vec<(u64, PreparedDesign)> = Vec::new();
        for point in points {
            let result = (|| {
                let key = point.porosity.to_bits();
                if !cache.iter().any(|(k, _)| *k == key) {
                    let cfg = point.config_for(config)?;
                    cache.push((key, PreparedDesign::new(grid, density, &cfg)?));
                }
                let prepared = &mut cache.iter_mut().find(|(k, _)| *k == key).unwrap().1;
                prepared.config = prepared.config.with_current(point.current);
                evaluate_prepared(grid, prepared, point).map(|e| e.report)
            })();
            if let Err(e) = &result {
                log::warn!("sweep {name} at {point:?} failed: {e}");
            }
            rows.push(SweepRow {
                design: name.clone(),
                point: *point,
                result: result.map_err(|e| e.to_string()),
            });
        }
    }
    Ok(rows)
}

/// Column order of sweep and evaluation tables.
pub const CSV_HEADER: &str = "design,current_a,porosity,flow_rate_m3_s,pressure_drop_pa,mean_abs_eta_v,objective_mol_m3,polarization_loss_w,pumping_loss_w,power_loss_w,status";

/// One CSV line (without newline) for a report.
pub fn csv_row(design: &str, report: &PerformanceReport) -> String {
    let r = report;
    format!(
        "{design},{},{},{:e},{},{},{},{},{},{},ok",
        r.current,
        r.porosity,
        r.flow_rate,
        r.pressure_drop,
        r.mean_abs_eta,
        r.objective,
        r.polarization_loss,
        r.pumping_loss,
        r.power_loss
    )
}

pub fn write_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        match &row.result {
            Ok(r) => writeln!(out, "{}", csv_row(&row.design, r))?,
            Err(e) => {
                let q = match row.point.control {
                    FlowControl::FlowRate(q) => format!("{q:e}"),
                    FlowControl::PressureDrop(_) => String::new(),
                };
                let msg = e.replace([',', '\n'], ";");
                writeln!(
                    out,
                    "{},{},{},{q},,,,,,,error: {msg}",
                    row.design, row.point.current, row.point.porosity
                )?;
            }
        }
    }
    Ok(())
}
