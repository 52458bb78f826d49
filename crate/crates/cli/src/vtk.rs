//! Legacy VTK output of cell-centred fields.
//!
//! Files use `DATASET STRUCTURED_POINTS` when the layer thicknesses are
//! uniform and `DATASET RECTILINEAR_GRID` otherwise. `DIMENSIONS` counts
//! points, so a grid of `nx × ny × nz` cells has `(nx+1)(ny+1)(nz+1)` points
//! and `CELL_DATA nx·ny·nz`. Cell data is ordered with x fastest, then y,
//! then z. Binary files store big-endian IEEE doubles as the legacy format
//! prescribes; ASCII files print the shortest round-tripping decimal.

use std::io::Write;
use std::path::Path;

use vrfb_core::Grid;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Ascii,
    BinaryBigEndian,
}

/// Box of cells with uniform x/y spacing and arbitrary z layer boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct VtkGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub hx: f64,
    pub hy: f64,
    pub origin: [f64; 3],
    /// `nz + 1` layer boundaries.
    pub z: Vec<f64>,
}

impl VtkGrid {
    /// The whole computational grid.
    pub fn full(grid: &Grid) -> Self {
        Self::layers(grid, 0, grid.nz())
    }

    /// The design (channel) layers only, matching the ordering of design
    /// variables.
    pub fn design(grid: &Grid) -> Self {
        Self::layers(grid, grid.nz_electrode, grid.nz())
    }

    fn layers(grid: &Grid, k0: usize, k1: usize) -> Self {
        let mut z = vec![0.0];
        for k in 0..k1 {
            let top = z.last().copied().unwrap_or(0.0) + grid.dz(k);
            z.push(top);
        }
        let z = z[k0..].to_vec();
        Self {
            nx: grid.nx,
            ny: grid.ny,
            nz: k1 - k0,
            hx: grid.hx,
            hy: grid.hy,
            origin: [0.0, 0.0, z[0]],
            z,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    fn uniform_dz(&self) -> Option<f64> {
        let dz0 = self.z[1] - self.z[0];
        self.z
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dz0).abs() <= 1e-12 * dz0)
            .then_some(dz0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    Scalar(Vec<f64>),
    Vector(Vec<[f64; 3]>),
}

impl FieldData {
    fn len(&self) -> usize {
        match self {
            Self::Scalar(v) => v.len(),
            Self::Vector(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub data: FieldData,
}

impl Field {
    pub fn scalar(name: &str, v: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            data: FieldData::Scalar(v),
        }
    }

    pub fn vector(name: &str, v: Vec<[f64; 3]>) -> Self {
        Self {
            name: name.to_string(),
            data: FieldData::Vector(v),
        }
    }
}

/// Contents of a file read back by [`read_vtk`].
#[derive(Debug, Clone, PartialEq)]
pub struct VtkFile {
    pub title: String,
    /// Point counts along x, y, z.
    pub dimensions: [usize; 3],
    pub origin: [f64; 3],
    /// Only set for structured points.
    pub spacing: Option<[f64; 3]>,
    pub fields: Vec<Field>,
}

impl VtkFile {
    pub fn field(&self, name: &str) -> Option<&FieldData> {
        self.fields.iter().find(|f| f.name == name).map(|f| &f.data)
    }
}

fn write_values(out: &mut Vec<u8>, values: impl Iterator<Item = f64>, enc: Encoding, per_line: usize) {
    match enc {
        Encoding::Ascii => {
            for (i, v) in values.enumerate() {
                if i > 0 {
                    out.push(if i % per_line == 0 { b'\n' } else { b' ' });
                }
                let _ = write!(out, "{v:e}");
            }
        }
        Encoding::BinaryBigEndian => {
            for v in values {
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
    }
    out.push(b'\n');
}

/// Serializes fields on `grid` to legacy VTK bytes.
pub fn to_bytes(title: &str, grid: &VtkGrid, fields: &[Field], enc: Encoding) -> CliResult<Vec<u8>> {
    let n = grid.n_cells();
    for f in fields {
        if f.data.len() != n {
            return Err(CliError::Usage(format!(
                "field '{}' has {} values, grid has {} cells",
                f.name,
                f.data.len(),
                n
            )));
        }
        if f.name.is_empty() || f.name.contains(char::is_whitespace) {
            return Err(CliError::Usage(format!("invalid VTK field name '{}'", f.name)));
        }
    }
    let mut out = Vec::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0");
    let _ = writeln!(
        out,
        "{}",
        title.lines().next().unwrap_or("").chars().take(255).collect::<String>()
    );
    let _ = writeln!(out, "{}", if enc == Encoding::Ascii { "ASCII" } else { "BINARY" });
    let dims = [grid.nx + 1, grid.ny + 1, grid.nz + 1];
    match grid.uniform_dz() {
        Some(dz) => {
            let _ = writeln!(out, "DATASET STRUCTURED_POINTS");
            let _ = writeln!(out, "DIMENSIONS {} {} {}", dims[0], dims[1], dims[2]);
            let o = grid.origin;
            let _ = writeln!(out, "ORIGIN {:e} {:e} {:e}", o[0], o[1], o[2]);
            let _ = writeln!(out, "SPACING {:e} {:e} {:e}", grid.hx, grid.hy, dz);
        }
        None => {
            let _ = writeln!(out, "DATASET RECTILINEAR_GRID");
            let _ = writeln!(out, "DIMENSIONS {} {} {}", dims[0], dims[1], dims[2]);
            let coords = [
                (0..dims[0])
                    .map(|i| grid.origin[0] + i as f64 * grid.hx)
                    .collect::<Vec<_>>(),
                (0..dims[1]).map(|j| grid.origin[1] + j as f64 * grid.hy).collect(),
                grid.z.clone(),
            ];
            for (axis, c) in ["X", "Y", "Z"].iter().zip(coords) {
                let _ = writeln!(out, "{axis}_COORDINATES {} double", c.len());
                write_values(&mut out, c.into_iter(), enc, 9);
            }
        }
    }
    let _ = writeln!(out, "CELL_DATA {n}");
    for f in fields {
        match &f.data {
            FieldData::Scalar(v) => {
                let _ = writeln!(out, "SCALARS {} double 1", f.name);
                let _ = writeln!(out, "LOOKUP_TABLE default");
                write_values(&mut out, v.iter().copied(), enc, 9);
            }
            FieldData::Vector(v) => {
                let _ = writeln!(out, "VECTORS {} double", f.name);
                write_values(&mut out, v.iter().flatten().copied(), enc, 9);
            }
        }
    }
    Ok(out)
}

pub fn write_vtk(path: &Path, title: &str, grid: &VtkGrid, fields: &[Field], enc: Encoding) -> CliResult<()> {
    let bytes = to_bytes(title, grid, fields, enc)?;
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Option<&'a str> {
        if self.pos >= self.bytes.len() {
            return None;
        }
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
        self.pos += (end + 1).min(rest.len());
        std::str::from_utf8(&rest[..end]).ok().map(|s| s.trim_end_matches('\r'))
    }

    fn nonempty_line(&mut self) -> Option<&'a str> {
        loop {
            let l = self.line()?;
            if !l.trim().is_empty() {
                return Some(l);
            }
        }
    }

    fn values(&mut self, count: usize, enc: Encoding) -> Option<Vec<f64>> {
        match enc {
            Encoding::BinaryBigEndian => {
                let len = 8 * count;
                let chunk = self.bytes.get(self.pos..self.pos + len)?;
                self.pos += len;
                if self.bytes.get(self.pos) == Some(&b'\n') {
                    self.pos += 1;
                }
                Some(
                    chunk
                        .chunks_exact(8)
                        .map(|c| f64::from_be_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                )
            }
            Encoding::Ascii => {
                let mut v = Vec::with_capacity(count);
                while v.len() < count {
                    for tok in self.line()?.split_whitespace() {
                        v.push(tok.parse().ok()?);
                    }
                }
                (v.len() == count).then_some(v)
            }
        }
    }
}

fn parse_triple<T: std::str::FromStr>(line: &str, keyword: &str) -> Option<[T; 3]> {
    let mut it = line.split_whitespace();
    if it.next()? != keyword {
        return None;
    }
    let v = [
        it.next()?.parse().ok()?,
        it.next()?.parse().ok()?,
        it.next()?.parse().ok()?,
    ];
    it.next().is_none().then_some(v)
}

/// Parses the subset of the legacy format written by [`to_bytes`].
pub fn from_bytes(bytes: &[u8], path: &Path) -> CliResult<VtkFile> {
    let bad = |reason: &str| CliError::format(path, reason.to_string());
    let mut cur = Cursor { bytes, pos: 0 };
    let version = cur.line().ok_or_else(|| bad("empty file"))?;
    if !version.starts_with("# vtk DataFile Version") {
        return Err(bad("missing VTK version line"));
    }
    let title = cur.line().ok_or_else(|| bad("missing title"))?.to_string();
    let enc = match cur.line().map(str::trim) {
        Some("ASCII") => Encoding::Ascii,
        Some("BINARY") => Encoding::BinaryBigEndian,
        _ => return Err(bad("expected ASCII or BINARY")),
    };
    let dataset = cur.nonempty_line().ok_or_else(|| bad("missing DATASET"))?;
    let rectilinear = match dataset.trim() {
        "DATASET STRUCTURED_POINTS" => false,
        "DATASET RECTILINEAR_GRID" => true,
        _ => return Err(bad("unsupported DATASET")),
    };
    let dimensions: [usize; 3] =
        parse_triple(cur.nonempty_line().unwrap_or(""), "DIMENSIONS").ok_or_else(|| bad("bad DIMENSIONS"))?;
    let (origin, spacing) = if rectilinear {
        let mut first = [0.0; 3];
        for (d, axis) in ["X_COORDINATES", "Y_COORDINATES", "Z_COORDINATES"].iter().enumerate() {
            let head = cur.nonempty_line().ok_or_else(|| bad("missing coordinates"))?;
            let mut it = head.split_whitespace();
            if it.next() != Some(*axis) || it.next().and_then(|s| s.parse::<usize>().ok()) != Some(dimensions[d]) {
                return Err(bad("bad coordinate header"));
            }
            let c = cur
                .values(dimensions[d], enc)
                .ok_or_else(|| bad("truncated coordinates"))?;
            first[d] = c[0];
        }
        (first, None)
    } else {
        let o = parse_triple(cur.nonempty_line().unwrap_or(""), "ORIGIN").ok_or_else(|| bad("bad ORIGIN"))?;
        let s = parse_triple(cur.nonempty_line().unwrap_or(""), "SPACING").ok_or_else(|| bad("bad SPACING"))?;
        (o, Some(s))
    };
    let n_cells = dimensions.iter().map(|d| d.saturating_sub(1)).product::<usize>();
    let head = cur.nonempty_line().ok_or_else(|| bad("missing CELL_DATA"))?;
    if head.split_whitespace().collect::<Vec<_>>() != ["CELL_DATA", &n_cells.to_string()] {
        return Err(bad("CELL_DATA count does not match DIMENSIONS"));
    }
    let mut fields = Vec::new();
    while let Some(line) = cur.nonempty_line() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["SCALARS", name, _ty, rest @ ..] => {
                let comps: usize = rest
                    .first()
                    .map_or(Ok(1), |s| s.parse())
                    .map_err(|_| bad("bad component count"))?;
                if comps != 1 {
                    return Err(bad("only single-component scalars are supported"));
                }
                if cur.nonempty_line().map(str::trim) != Some("LOOKUP_TABLE default") {
                    return Err(bad("expected LOOKUP_TABLE default"));
                }
                let v = cur.values(n_cells, enc).ok_or_else(|| bad("truncated scalar data"))?;
                fields.push(Field::scalar(name, v));
            }
            ["VECTORS", name, _ty] => {
                let v = cur
                    .values(3 * n_cells, enc)
                    .ok_or_else(|| bad("truncated vector data"))?;
                fields.push(Field::vector(
                    name,
                    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
                ));
            }
            _ => return Err(bad(&format!("unexpected line '{line}'"))),
        }
    }
    Ok(VtkFile {
        title,
        dimensions,
        origin,
        spacing,
        fields,
    })
}

pub fn read_vtk(path: &Path) -> CliResult<VtkFile> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    from_bytes(&bytes, path)
}
