//! Structured hexahedral grid of the two-layer half-cell.
//!
//! The porous electrode occupies `z ∈ [0, t_e]` and the flow-field design
//! layer sits on top of it, `z ∈ [t_e, t_e + t_c]`. Cells are numbered
//! x-fastest: `id = i + nx * (j + ny * k)`.

use crate::config::{CaseConfig, Side};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Electrode,
    DesignLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Patch {
    Inlet,
    Outlet,
    CollectorWall,
    MembraneWall,
    SideWall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// One of the six outer faces of the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Boundary {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Boundary {
    pub fn from_side(side: Side) -> Self {
        match side {
            Side::West => Boundary::XMin,
            Side::East => Boundary::XMax,
            Side::South => Boundary::YMin,
            Side::North => Boundary::YMax,
        }
    }

    pub fn axis(self) -> Axis {
        match self {
            Boundary::XMin | Boundary::XMax => Axis::X,
            Boundary::YMin | Boundary::YMax => Axis::Y,
            Boundary::ZMin | Boundary::ZMax => Axis::Z,
        }
    }

    /// True for the face at the upper end of its axis.
    pub fn is_max(self) -> bool {
        matches!(self, Boundary::XMax | Boundary::YMax | Boundary::ZMax)
    }
}

/// Rectangular inlet/outlet patch on a side face: `[lo, hi]` along the face
/// and `[z_lo, z_hi]` through the thickness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchRect {
    pub side: Side,
    pub lo: f64,
    pub hi: f64,
    pub z_lo: f64,
    pub z_hi: f64,
}

/// Low-level grid description. [`build_grid`] derives one from a
/// [`CaseConfig`]; verification cases construct their own.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub length: f64,
    pub width: f64,
    pub electrode_thickness: f64,
    pub channel_thickness: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz_electrode: usize,
    pub nz_channel: usize,
    pub inlet: PatchRect,
    pub outlet: PatchRect,
}

/// A boundary face of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub boundary: Boundary,
    pub cell: usize,
    pub area: f64,
    pub patch: Patch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz_electrode: usize,
    pub nz_channel: usize,
    pub length: f64,
    pub width: f64,
    pub electrode_thickness: f64,
    pub channel_thickness: f64,
    pub hx: f64,
    pub hy: f64,
    /// z coordinates of the nz + 1 horizontal grid planes.
    pub z: Vec<f64>,
    pub inlet: PatchRect,
    pub outlet: PatchRect,
    electrode_cells: Vec<usize>,
    design_cells: Vec<usize>,
    electrode_index: Vec<Option<usize>>,
    design_index: Vec<Option<usize>>,
    inlet_faces: Vec<BoundaryFace>,
    outlet_faces: Vec<BoundaryFace>,
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

impl Grid {
    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        for (name, v) in [
            ("length", spec.length),
            ("width", spec.width),
            ("electrode_thickness", spec.electrode_thickness),
            ("channel_thickness", spec.channel_thickness),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Grid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, n) in [
            ("nx", spec.nx),
            ("ny", spec.ny),
            ("nz_electrode", spec.nz_electrode),
            ("nz_channel", spec.nz_channel),
        ] {
            if n == 0 {
                return Err(Error::Grid(format!("{name} must be positive")));
            }
        }

        let nz = spec.nz_electrode + spec.nz_channel;
        let hze = spec.electrode_thickness / spec.nz_electrode as f64;
        let hzc = spec.channel_thickness / spec.nz_channel as f64;
        let mut z = Vec::with_capacity(nz + 1);
        for k in 0..=nz {
            z.push(if k <= spec.nz_electrode {
                k as f64 * hze
            } else {
                spec.electrode_thickness + (k - spec.nz_electrode) as f64 * hzc
            });
        }

        let n = spec.nx * spec.ny * nz;
        let layer = spec.nx * spec.ny;
        let mut electrode_cells = Vec::new();
        let mut design_cells = Vec::new();
        let mut electrode_index = vec![None; n];
        let mut design_index = vec![None; n];
        for id in 0..n {
            if id / layer < spec.nz_electrode {
                electrode_index[id] = Some(electrode_cells.len());
                electrode_cells.push(id);
            } else {
                design_index[id] = Some(design_cells.len());
                design_cells.push(id);
            }
        }

        let mut grid = Grid {
            nx: spec.nx,
            ny: spec.ny,
            nz_electrode: spec.nz_electrode,
            nz_channel: spec.nz_channel,
            length: spec.length,
            width: spec.width,
            electrode_thickness: spec.electrode_thickness,
            channel_thickness: spec.channel_thickness,
            hx: spec.length / spec.nx as f64,
            hy: spec.width / spec.ny as f64,
            z,
            inlet: spec.inlet,
            outlet: spec.outlet,
            electrode_cells,
            design_cells,
            electrode_index,
            design_index,
            inlet_faces: Vec::new(),
            outlet_faces: Vec::new(),
        };

        for (name, rect) in [("inlet", spec.inlet), ("outlet", spec.outlet)] {
            let face_len = match rect.side {
                Side::West | Side::East => grid.width,
                Side::South | Side::North => grid.length,
            };
            let tol = 1e-12 * face_len.max(grid.thickness());
            if !(rect.lo < rect.hi && rect.z_lo < rect.z_hi)
                || rect.lo < -tol
                || rect.hi > face_len + tol
                || rect.z_lo < -tol
                || rect.z_hi > grid.thickness() + tol
            {
                return Err(Error::Grid(format!("{name} patch out of bounds: {rect:?}")));
            }
        }
        let (a, b) = (spec.inlet, spec.outlet);
        if a.side == b.side && overlap(a.lo, a.hi, b.lo, b.hi) > 0.0 && overlap(a.z_lo, a.z_hi, b.z_lo, b.z_hi) > 0.0 {
            return Err(Error::Grid("inlet and outlet patches overlap".into()));
        }

        grid.inlet_faces = grid.collect_patch_faces(&spec.inlet, Patch::Inlet);
        grid.outlet_faces = grid.collect_patch_faces(&spec.outlet, Patch::Outlet);
        if grid.inlet_faces.is_empty() || grid.outlet_faces.is_empty() {
            return Err(Error::Grid(
                "inlet and outlet patches must cover at least one face".into(),
            ));
        }
        Ok(grid)
    }

    fn collect_patch_faces(&self, rect: &PatchRect, patch: Patch) -> Vec<BoundaryFace> {
        let boundary = Boundary::from_side(rect.side);
        self.side_faces(boundary)
            .filter(|f| self.in_rect(f.boundary, f.cell, rect))
            .map(|f| BoundaryFace { patch, ..f })
            .collect()
    }

    fn in_rect(&self, boundary: Boundary, cell: usize, rect: &PatchRect) -> bool {
        if Boundary::from_side(rect.side) != boundary {
            return false;
        }
        let (i, j, k) = self.ijk(cell);
        let (a0, a1, h) = match boundary {
            Boundary::XMin | Boundary::XMax => (j as f64 * self.hy, (j + 1) as f64 * self.hy, self.hy),
            Boundary::YMin | Boundary::YMax => (i as f64 * self.hx, (i + 1) as f64 * self.hx, self.hx),
            _ => return false,
        };
        let eps = 1e-9;
        overlap(a0, a1, rect.lo, rect.hi) > eps * h
            && overlap(self.z[k], self.z[k + 1], rect.z_lo, rect.z_hi) > eps * self.dz(k)
    }

    /// Faces of one outer side, with provisional `SideWall`/wall labels.
    fn side_faces(&self, boundary: Boundary) -> impl Iterator<Item = BoundaryFace> + '_ {
        let (nx, ny, nz) = (self.nx, self.ny, self.nz());
        let cells: Vec<usize> = match boundary {
            Boundary::XMin | Boundary::XMax => {
                let i = if boundary.is_max() { nx - 1 } else { 0 };
                (0..nz)
                    .flat_map(|k| (0..ny).map(move |j| (j, k)))
                    .map(|(j, k)| self.cell(i, j, k))
                    .collect()
            }
            Boundary::YMin | Boundary::YMax => {
                let j = if boundary.is_max() { ny - 1 } else { 0 };
                (0..nz)
                    .flat_map(|k| (0..nx).map(move |i| (i, k)))
                    .map(|(i, k)| self.cell(i, j, k))
                    .collect()
            }
            Boundary::ZMin | Boundary::ZMax => {
                let k = if boundary.is_max() { nz - 1 } else { 0 };
                (0..ny)
                    .flat_map(|j| (0..nx).map(move |i| (i, j)))
                    .map(|(i, j)| self.cell(i, j, k))
                    .collect()
            }
        };
        let patch = match boundary {
            Boundary::ZMin => Patch::MembraneWall,
            Boundary::ZMax => Patch::CollectorWall,
            _ => Patch::SideWall,
        };
        cells.into_iter().map(move |cell| BoundaryFace {
            boundary,
            cell,
            area: self.face_area(boundary.axis(), cell),
            patch,
        })
    }

    /// Every boundary face with its patch label.
    pub fn boundary_faces(&self) -> Vec<BoundaryFace> {
        let sides = [
            Boundary::XMin,
            Boundary::XMax,
            Boundary::YMin,
            Boundary::YMax,
            Boundary::ZMin,
            Boundary::ZMax,
        ];
        sides
            .into_iter()
            .flat_map(|b| self.side_faces(b))
            .map(|f| BoundaryFace {
                patch: self.patch_of(f.boundary, f.cell),
                ..f
            })
            .collect()
    }

    /// Patch label of the boundary face of `cell` on `boundary`.
    pub fn patch_of(&self, boundary: Boundary, cell: usize) -> Patch {
        if self.in_rect(boundary, cell, &self.inlet) {
            Patch::Inlet
        } else if self.in_rect(boundary, cell, &self.outlet) {
            Patch::Outlet
        } else {
            match boundary {
                Boundary::ZMin => Patch::MembraneWall,
                Boundary::ZMax => Patch::CollectorWall,
                _ => Patch::SideWall,
            }
        }
    }

    pub fn inlet_faces(&self) -> &[BoundaryFace] {
        &self.inlet_faces
    }

    pub fn outlet_faces(&self) -> &[BoundaryFace] {
        &self.outlet_faces
    }

    pub fn nz(&self) -> usize {
        self.nz_electrode + self.nz_channel
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nz()
    }

    pub fn thickness(&self) -> f64 {
        self.electrode_thickness + self.channel_thickness
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    #[inline]
    pub fn ijk(&self, id: usize) -> (usize, usize, usize) {
        let i = id % self.nx;
        let j = (id / self.nx) % self.ny;
        let k = id / (self.nx * self.ny);
        (i, j, k)
    }

    #[inline]
    pub fn dz(&self, k: usize) -> f64 {
        self.z[k + 1] - self.z[k]
    }

    /// Cell extent along an axis.
    #[inline]
    pub fn h(&self, axis: Axis, k: usize) -> f64 {
        match axis {
            Axis::X => self.hx,
            Axis::Y => self.hy,
            Axis::Z => self.dz(k),
        }
    }

    /// Area of a cell face normal to `axis`.
    #[inline]
    pub fn face_area(&self, axis: Axis, cell: usize) -> f64 {
        let k = cell / (self.nx * self.ny);
        match axis {
            Axis::X => self.hy * self.dz(k),
            Axis::Y => self.hx * self.dz(k),
            Axis::Z => self.hx * self.hy,
        }
    }

    #[inline]
    pub fn volume(&self, cell: usize) -> f64 {
        let k = cell / (self.nx * self.ny);
        self.hx * self.hy * self.dz(k)
    }

    pub fn center(&self, cell: usize) -> [f64; 3] {
        let (i, j, k) = self.ijk(cell);
        [
            (i as f64 + 0.5) * self.hx,
            (j as f64 + 0.5) * self.hy,
            0.5 * (self.z[k] + self.z[k + 1]),
        ]
    }

    pub fn region(&self, cell: usize) -> Region {
        if cell / (self.nx * self.ny) < self.nz_electrode {
            Region::Electrode
        } else {
            Region::DesignLayer
        }
    }

    pub fn electrode_cells(&self) -> &[usize] {
        &self.electrode_cells
    }

    pub fn design_cells(&self) -> &[usize] {
        &self.design_cells
    }

    /// Position of `cell` in [`Grid::electrode_cells`].
    pub fn electrode_index(&self, cell: usize) -> Option<usize> {
        self.electrode_index[cell]
    }

    /// Position of `cell` in [`Grid::design_cells`].
    pub fn design_index(&self, cell: usize) -> Option<usize> {
        self.design_index[cell]
    }

    pub fn electrode_volume(&self) -> f64 {
        self.electrode_cells.iter().map(|&c| self.volume(c)).sum()
    }

    /// Footprint area L·W, the electrode surface area the current is spread over.
    pub fn footprint(&self) -> f64 {
        self.length * self.width
    }

    /// Neighbour of `cell` one step along `axis` in direction `dir` (±1).
    #[inline]
    pub fn neighbor(&self, cell: usize, axis: Axis, upper: bool) -> Option<usize> {
        let (i, j, k) = self.ijk(cell);
        let (idx, n) = match axis {
            Axis::X => (i, self.nx),
            Axis::Y => (j, self.ny),
            Axis::Z => (k, self.nz()),
        };
        if upper {
            if idx + 1 >= n {
                return None;
            }
        } else if idx == 0 {
            return None;
        }
        let (i, j, k) = match (axis, upper) {
            (Axis::X, true) => (i + 1, j, k),
            (Axis::X, false) => (i - 1, j, k),
            (Axis::Y, true) => (i, j + 1, k),
            (Axis::Y, false) => (i, j - 1, k),
            (Axis::Z, true) => (i, j, k + 1),
            (Axis::Z, false) => (i, j, k - 1),
        };
        Some(self.cell(i, j, k))
    }

    /// Distance between the centres of `cell` and its neighbour along `axis`.
    #[inline]
    pub fn center_distance(&self, a: usize, b: usize, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.hx,
            Axis::Y => self.hy,
            Axis::Z => {
                let ka = a / (self.nx * self.ny);
                let kb = b / (self.nx * self.ny);
                0.5 * (self.dz(ka) + self.dz(kb))
            }
        }
    }

    /// True when the z spacing is the same in both layers.
    pub fn uniform_z(&self) -> bool {
        let a = self.dz(0);
        let b = self.dz(self.nz() - 1);
        (a - b).abs() <= 1e-12 * a.max(b)
    }

    /// Key/value description of the grid for run metadata.
    pub fn describe(&self) -> Vec<(&'static str, String)> {
        vec![
            ("nx", self.nx.to_string()),
            ("ny", self.ny.to_string()),
            ("nz_electrode", self.nz_electrode.to_string()),
            ("nz_channel", self.nz_channel.to_string()),
            ("length", self.length.to_string()),
            ("width", self.width.to_string()),
            ("electrode_thickness", self.electrode_thickness.to_string()),
            ("channel_thickness", self.channel_thickness.to_string()),
            ("cells", self.n_cells().to_string()),
            ("inlet_faces", self.inlet_faces.len().to_string()),
            ("outlet_faces", self.outlet_faces.len().to_string()),
        ]
    }
}

fn patch_rect(p: &crate::config::PatchPlacement, z_lo: f64, z_hi: f64) -> PatchRect {
    PatchRect {
        side: p.side,
        lo: p.center - 0.5 * p.width,
        hi: p.center + 0.5 * p.width,
        z_lo,
        z_hi,
    }
}

/// Builds the two-layer grid with inlet/outlet patches spanning the design
/// layer thickness.
pub fn build_grid(config: &CaseConfig) -> Result<Grid> {
    let g = &config.geometry;
    let z_lo = g.electrode_thickness;
    let z_hi = g.electrode_thickness + g.channel_thickness;
    Grid::from_spec(&GridSpec {
        length: g.length,
        width: g.width,
        electrode_thickness: g.electrode_thickness,
        channel_thickness: g.channel_thickness,
        nx: g.nx,
        ny: g.ny,
        nz_electrode: g.nz_electrode,
        nz_channel: g.nz_channel,
        inlet: patch_rect(&g.inlet, z_lo, z_hi),
        outlet: patch_rect(&g.outlet, z_lo, z_hi),
    })
}

/// Kozeny–Carman permeability of the fibrous electrode (m²).
pub fn permeability(config: &CaseConfig) -> Result<f64> {
    let e = &config.electrode;
    let eps = e.porosity;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::OutOfRange {
            name: "epsilon",
            value: eps,
            reason: "porosity must lie in (0, 1)",
        });
    }
    Ok(e.fiber_diameter.powi(2) * eps.powi(3) / (16.0 * e.kozeny_carman * (1.0 - eps).powi(2)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(n: usize, nz: usize) -> CaseConfig {
        let mut c = CaseConfig::default();
        c.geometry.nx = n;
        c.geometry.ny = n;
        c.geometry.nz_channel = nz;
        c.geometry.nz_electrode = nz;
        c
    }

    #[test]
    fn cell_counts_per_region() {
        let g = build_grid(&small_config(4, 2)).unwrap();
        assert_eq!(g.n_cells(), 64);
        assert_eq!(g.electrode_cells().len(), 32);
        assert_eq!(g.design_cells().len(), 32);
    }

    #[test]
    fn electrode_volume_matches_footprint_times_thickness() {
        let g = build_grid(&CaseConfig::default()).unwrap();
        assert!((g.electrode_volume() - 3.0e-5).abs() < 1e-12 * 3.0e-5);
    }

    #[test]
    fn boundary_area_is_closed_surface_area() {
        for (n, nz) in [(4, 2), (7, 3), (33, 3)] {
            let g = build_grid(&small_config(n, nz)).unwrap();
            let total: f64 = g.boundary_faces().iter().map(|f| f.area).sum();
            let t = g.thickness();
            let expected = 2.0 * (g.length * g.width + g.length * t + g.width * t);
            assert!((total - expected).abs() < 1e-12 * expected, "{total} vs {expected}");
        }
    }

    #[test]
    fn every_boundary_face_has_one_label_and_patches_sit_on_design_layer() {
        let g = build_grid(&CaseConfig::default()).unwrap();
        let faces = g.boundary_faces();
        let nx = g.nx;
        let (ny, nz) = (g.ny, g.nz());
        assert_eq!(faces.len(), 2 * (nx * ny + nx * nz + ny * nz));
        let inlets: Vec<_> = faces.iter().filter(|f| f.patch == Patch::Inlet).collect();
        assert_eq!(inlets.len(), g.inlet_faces().len());
        assert!(inlets.iter().all(|f| g.region(f.cell) == Region::DesignLayer));
        assert!(g.outlet_faces().iter().all(|f| g.region(f.cell) == Region::DesignLayer));
        assert!(faces
            .iter()
            .filter(|f| f.boundary == Boundary::ZMin)
            .all(|f| f.patch == Patch::MembraneWall));
        assert!(faces
            .iter()
            .filter(|f| f.boundary == Boundary::ZMax)
            .all(|f| f.patch == Patch::CollectorWall));
    }

    #[test]
    fn default_patches_cover_the_centre_column() {
        let g = build_grid(&CaseConfig::default()).unwrap();
        // 33 cells across 0.1 m put the 3 mm patch on cell column 16 only
        assert_eq!(g.inlet_faces().len(), 3);
        for f in g.inlet_faces() {
            let (i, j, _) = g.ijk(f.cell);
            assert_eq!((i, j), (0, 16));
        }
    }

    #[test]
    fn invalid_grids_are_rejected() {
        let mut c = small_config(4, 2);
        c.geometry.nx = 0;
        assert!(build_grid(&c).is_err());

        let mut c = small_config(4, 2);
        c.geometry.inlet.center = 0.099;
        assert!(build_grid(&c).is_err());

        let mut c = small_config(4, 2);
        c.geometry.outlet.side = Side::West;
        assert!(build_grid(&c).is_err());
    }

    #[test]
    fn construction_is_deterministic() {
        let c = small_config(6, 2);
        assert_eq!(build_grid(&c).unwrap(), build_grid(&c).unwrap());
    }

    #[test]
    fn kozeny_carman_permeability() {
        let c = CaseConfig::default();
        let k = permeability(&c).unwrap();
        // 1.76e-5² · 0.929³ / (16 · 4.28 · 0.071²)
        let expected = 3.0976e-10 * 0.801765089 / (68.48 * 0.005041);
        assert!((k - expected).abs() < 1e-12 * expected);
        assert!((k - 7.19e-10).abs() < 0.01e-10);

        let mut d = c.clone();
        d.electrode.fiber_diameter *= 2.0;
        assert!((permeability(&d).unwrap() / k - 4.0).abs() < 1e-12);

        let mut prev = k;
        for eps in [0.8, 0.6, 0.4, 0.2, 0.05, 0.01] {
            let kk = permeability(&c.with_porosity(eps)).unwrap();
            assert!(kk < prev);
            prev = kk;
        }
        assert!(permeability(&c.with_porosity(1.0)).is_err());
    }

    #[test]
    fn permeability_is_independent_of_the_grid() {
        let a = small_config(4, 2);
        let b = small_config(40, 5);
        assert_eq!(permeability(&a).unwrap(), permeability(&b).unwrap());
    }
}
