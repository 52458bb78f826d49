//! The `optimize`, `evaluate`, `sweep` and `gradcheck` pipelines.
//!
//! Every command writes into one run directory with fixed file names:
//!
//! | file | written by |
//! |------|------------|
//! | `config.cfg` | all commands with `--out` |
//! | `trace.csv` | optimize |
//! | `snapshots/density_NNNN.{vtk,bin}` | optimize |
//! | `checkpoint.json` | optimize |
//! | `design.bin`, `design.vtk` | optimize (final design) |
//! | `fields.vtk` | optimize (final design), evaluate |
//! | `evaluation.csv` | evaluate |
//! | `sweep.csv` | sweep |
//! | `gradcheck.csv` | gradcheck |
//! | `manifest.json` | all commands with `--out` |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vrfb_core::flowfields::{
    csv_row, evaluate_design, generate_reference, sweep, write_csv, Evaluation, FlowControl, OperatingPoint,
    PerformanceReport, ReferenceFieldSpec, ReferenceKind, CSV_HEADER,
};
use vrfb_core::topopt::{gradient_check, GradientCheckEntry};
use vrfb_core::{build_grid, CaseConfig, DensityField, Grid, Optimizer};

use crate::config_file;
use crate::error::{CliError, CliResult};
use crate::manifest::{checkpoint_hash, RunManifest};
use crate::snapshot::{Checkpoint, DensitySnapshot};
use crate::vtk::{self, Encoding, Field, VtkGrid};

pub const TRACE_HEADER: &str = "iteration,objective_mol_m3,pressure_drop_pa,flow_rate_m3_s,mean_abs_eta_v,max_change";

/// Where a design for `evaluate` or `sweep` comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignSource {
    Reference(ReferenceKind),
    /// Final design of an optimize run directory.
    Optimized,
    /// A density snapshot (`.bin`) or VTK file with a `rho_filtered` field.
    File(PathBuf),
}

impl FromStr for DesignSource {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        if let Some(p) = s.strip_prefix("file:") {
            return Ok(Self::File(PathBuf::from(p)));
        }
        match s {
            "optimized" => Ok(Self::Optimized),
            other => other.parse().map(Self::Reference).map_err(|_| {
                CliError::Usage(format!(
                    "unknown design '{other}' (parallel, interdigitated, optimized, file:<path>)"
                ))
            }),
        }
    }
}

impl DesignSource {
    pub fn label(&self) -> String {
        match self {
            Self::Reference(k) => k.to_string(),
            Self::Optimized => "optimized".to_string(),
            Self::File(p) => p
                .file_stem()
                .map_or("file".into(), |s| s.to_string_lossy().into_owned()),
        }
    }

    /// Loads the design; `run` is the optimize directory used by `optimized`.
    pub fn load(&self, grid: &Grid, cfg: &CaseConfig, run: Option<&Path>) -> CliResult<DensityField> {
        match self {
            Self::Reference(kind) => Ok(generate_reference(&ReferenceFieldSpec::from_config(*kind, cfg), grid)?),
            Self::Optimized => {
                let dir = run.ok_or_else(|| {
                    CliError::Usage("design 'optimized' needs --run <optimize output directory>".into())
                })?;
                DensitySnapshot::read(&dir.join("design.bin"))?.density(grid)
            }
            Self::File(p) => load_design_file(p, grid),
        }
    }
}

fn load_design_file(path: &Path, grid: &Grid) -> CliResult<DensityField> {
    if path.extension().is_some_and(|e| e == "vtk") {
        let file = vtk::read_vtk(path)?;
        let Some(vtk::FieldData::Scalar(v)) = file.field("rho_filtered") else {
            return Err(CliError::format(path, "no scalar field 'rho_filtered'"));
        };
        let n = grid.design_cells().len();
        let values = if v.len() == n {
            v.clone()
        } else if v.len() == grid.n_cells() {
            grid.design_cells().iter().map(|&c| v[c]).collect()
        } else {
            return Err(CliError::format(
                path,
                "field size matches neither the design layer nor the grid",
            ));
        };
        let d = DensityField::unfiltered(values);
        d.check(grid)?;
        Ok(d)
    } else {
        DensitySnapshot::read(path)?.density(grid)
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    // fail early on read-only directories
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"").map_err(|e| CliError::io(dir, e))?;
    std::fs::remove_file(&probe).map_err(|e| CliError::io(&probe, e))
}

fn write_text(dir: &Path, name: &str, text: &str, manifest: &mut RunManifest) -> CliResult<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    manifest.add_output(name);
    Ok(())
}

fn nan_outside(grid: &Grid, cells: &[usize], values: &[f64]) -> Vec<f64> {
    let mut out = vec![f64::NAN; grid.n_cells()];
    for (&c, v) in cells.iter().zip(values) {
        out[c] = *v;
    }
    out
}

/// Cell fields of an evaluated design on the full grid. Electrode-only
/// quantities are NaN in channel cells and the design density is NaN in
/// electrode cells.
pub fn field_list(
    grid: &Grid,
    density: &DensityField,
    flow: &vrfb_core::FlowState,
    electro: &vrfb_core::ElectroState,
) -> Vec<Field> {
    let e = grid.electrode_cells();
    vec![
        Field::scalar("rho_filtered", density.to_cells(grid)),
        Field::scalar("pressure", flow.pressure.clone()),
        Field::vector("velocity", flow.cell_velocity.clone()),
        Field::scalar("c_v2", electro.c2.clone()),
        Field::scalar("c_v3", electro.c3.clone()),
        Field::scalar("phi_s", nan_outside(grid, e, &electro.phi_s)),
        Field::scalar("phi_e", nan_outside(grid, e, &electro.phi_e)),
        Field::scalar("transfer_current", nan_outside(grid, e, &electro.fields.j)),
        Field::scalar("overpotential", nan_outside(grid, e, &electro.fields.eta)),
        Field::scalar("c_v3_surface", nan_outside(grid, e, &electro.fields.c3s)),
    ]
}

fn design_fields(density: &DensityField) -> Vec<Field> {
    vec![
        Field::scalar("rho", density.rho.clone()),
        Field::scalar("rho_filtered", density.filtered.clone()),
    ]
}

/// Shared output options.
#[derive(Debug, Clone, Copy)]
pub struct OutputOptions {
    pub encoding: Encoding,
    /// Write a density snapshot every this many iterations (0 = never).
    pub snapshot_every: usize,
}

impl Default for OutputOptions {
    fn default() -> Self {
        Self {
            encoding: Encoding::BinaryBigEndian,
            snapshot_every: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeSummary {
    pub converged: bool,
    pub iterations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub final_density: DensityField,
    pub manifest: PathBuf,
}

pub fn trace_csv(records: &[vrfb_core::IterationRecord]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.iteration, r.objective, r.pressure_drop, r.flow_rate, r.mean_abs_eta, r.max_change
        );
    }
    s
}

/// Runs the optimization loop, writing trace, snapshots and checkpoints
/// after every iteration. With `resume`, continues from the checkpoint in
/// that directory (which must belong to the same configuration).
pub fn optimize(
    cfg: &CaseConfig,
    out: &Path,
    resume: Option<&Path>,
    opts: OutputOptions,
) -> CliResult<OptimizeSummary> {
    create_dir(out)?;
    let snap_dir = out.join("snapshots");
    create_dir(&snap_dir)?;
    let grid = build_grid(cfg)?;
    let hash = checkpoint_hash(cfg);
    let mut manifest = RunManifest::start("optimize", cfg);
    write_text(out, "config.cfg", &config_file::to_string(cfg), &mut manifest)?;

    let mut optimizer = match resume {
        Some(dir) => {
            let path = if dir.is_dir() {
                dir.join("checkpoint.json")
            } else {
                dir.to_path_buf()
            };
            let ck = Checkpoint::read(&path)?;
            if ck.config_hash != hash {
                return Err(CliError::Usage(format!(
                    "{} was written for configuration {}, current configuration is {hash}",
                    path.display(),
                    ck.config_hash
                )));
            }
            log::info!("resuming at iteration {}", ck.iteration);
            Optimizer::resume(&grid, cfg, ck.state())?
        }
        None => Optimizer::new(&grid, cfg)?,
    };
    // keep snapshots written before an interruption in the inventory
    if let Ok(entries) = std::fs::read_dir(&snap_dir) {
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .map(|e| format!("snapshots/{}", e.file_name().to_string_lossy()))
            .collect();
        names.sort();
        for n in names {
            manifest.add_output(n);
        }
    }

    let mut newton = 0;
    let result = optimizer.run(|rec, eval, state| {
        newton += eval.electro.iterations;
        let io = |e: CliError| vrfb_core::Error::Config(e.to_string());
        if opts.snapshot_every > 0 && rec.iteration % opts.snapshot_every == 0 {
            let stem = format!("density_{:04}", rec.iteration);
            let snap = DensitySnapshot::new(&grid, rec.iteration, &eval.density);
            snap.write(&snap_dir.join(format!("{stem}.bin"))).map_err(io)?;
            vtk::write_vtk(
                &snap_dir.join(format!("{stem}.vtk")),
                &format!("design density, iteration {}", rec.iteration),
                &VtkGrid::design(&grid),
                &design_fields(&eval.density),
                opts.encoding,
            )
            .map_err(io)?;
            manifest.add_output(format!("snapshots/{stem}.bin"));
            manifest.add_output(format!("snapshots/{stem}.vtk"));
        }
        let trace = trace_csv(&state.trace);
        std::fs::write(out.join("trace.csv"), trace).map_err(|e| io(CliError::io(&out.join("trace.csv"), e)))?;
        Checkpoint::new(&hash, state)
            .write(&out.join("checkpoint.json"))
            .map_err(io)?;
        Ok(())
    })?;
    let trace = trace_csv(&result.trace);
    write_text(out, "trace.csv", &trace, &mut manifest)?;
    Checkpoint::new(&hash, &optimizer.state).write(&out.join("checkpoint.json"))?;
    manifest.add_output("checkpoint.json");

    let final_eval = result.last;
    DensitySnapshot::new(&grid, final_eval_iteration(&result.trace), &final_eval.density)
        .write(&out.join("design.bin"))?;
    manifest.add_output("design.bin");
    vtk::write_vtk(
        &out.join("design.vtk"),
        "final design density",
        &VtkGrid::design(&grid),
        &design_fields(&final_eval.density),
        opts.encoding,
    )?;
    manifest.add_output("design.vtk");
    vtk::write_vtk(
        &out.join("fields.vtk"),
        "final design fields",
        &VtkGrid::full(&grid),
        &field_list(&grid, &final_eval.density, &final_eval.flow, &final_eval.electro),
        opts.encoding,
    )?;
    manifest.add_output("fields.vtk");

    manifest.solver.optimizer_iterations = result.trace.len();
    manifest.solver.flow_solves = result.trace.len();
    manifest.solver.newton_iterations = newton;
    let manifest_path = manifest.finish(out)?;
    Ok(OptimizeSummary {
        converged: result.converged,
        iterations: result.trace.len(),
        initial_objective: result.trace.first().map_or(f64::NAN, |r| r.objective),
        final_objective: result.trace.last().map_or(final_eval.objective, |r| r.objective),
        final_density: final_eval.density,
        manifest: manifest_path,
    })
}

fn final_eval_iteration(trace: &[vrfb_core::IterationRecord]) -> usize {
    trace.last().map_or(0, |r| r.iteration)
}

/// Operating point from command-line overrides on top of the configuration.
pub fn operating_point(
    cfg: &CaseConfig,
    flowrate: Option<f64>,
    current: Option<f64>,
    porosity: Option<f64>,
) -> OperatingPoint {
    OperatingPoint {
        current: current.unwrap_or(cfg.operating.current),
        porosity: porosity.unwrap_or(cfg.electrode.porosity),
        control: match flowrate {
            Some(q) => FlowControl::FlowRate(q),
            None => FlowControl::PressureDrop(cfg.operating.p_in - cfg.operating.p_out),
        },
    }
}

/// Evaluates one design at one operating point. Returns the report and the
/// CSV text (header and one row).
pub fn evaluate(
    cfg: &CaseConfig,
    design: &DesignSource,
    point: &OperatingPoint,
    run: Option<&Path>,
    out: Option<&Path>,
    opts: OutputOptions,
) -> CliResult<(PerformanceReport, String)> {
    let grid = build_grid(cfg)?;
    let density = design.load(&grid, cfg, run)?;
    let Evaluation { report, flow, electro } = evaluate_design(&grid, &density, point, cfg)?;
    let csv = format!("{CSV_HEADER}\n{}\n", csv_row(&design.label(), &report));
    if let Some(dir) = out {
        create_dir(dir)?;
        let mut manifest = RunManifest::start("evaluate", cfg);
        write_text(dir, "config.cfg", &config_file::to_string(cfg), &mut manifest)?;
        write_text(dir, "evaluation.csv", &csv, &mut manifest)?;
        vtk::write_vtk(
            &dir.join("fields.vtk"),
            &format!("{} fields", design.label()),
            &VtkGrid::full(&grid),
            &field_list(&grid, &density, &flow, &electro),
            opts.encoding,
        )?;
        manifest.add_output("fields.vtk");
        manifest.solver.flow_solves = 1;
        manifest.solver.newton_iterations = electro.iterations;
        manifest.finish(dir)?;
    }
    Ok((report, csv))
}

/// Cross product of designs, flow rates, currents and porosities.
pub fn sweep_designs(
    cfg: &CaseConfig,
    designs: &[DesignSource],
    flowrates: &[f64],
    currents: &[f64],
    porosities: &[f64],
    run: Option<&Path>,
    out: &Path,
) -> CliResult<String> {
    create_dir(out)?;
    let grid = build_grid(cfg)?;
    let loaded = designs
        .iter()
        .map(|d| Ok((d.label(), d.load(&grid, cfg, run)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let mut points = Vec::new();
    for &porosity in porosities {
        for &current in currents {
            for &q in flowrates {
                points.push(OperatingPoint {
                    current,
                    porosity,
                    control: FlowControl::FlowRate(q),
                });
            }
        }
    }
    let rows = sweep(&grid, &loaded, &points, cfg)?;
    let mut bytes = Vec::new();
    write_csv(&mut bytes, &rows).map_err(|e| CliError::io(&out.join("sweep.csv"), e))?;
    let text = String::from_utf8(bytes).expect("CSV is UTF-8");
    let mut manifest = RunManifest::start("sweep", cfg);
    write_text(out, "config.cfg", &config_file::to_string(cfg), &mut manifest)?;
    write_text(out, "sweep.csv", &text, &mut manifest)?;
    manifest.solver.flow_solves = rows.len();
    manifest.finish(out)?;
    Ok(text)
}

/// Random interior design and distinct variables for a gradient check.
pub fn gradcheck_sample(n: usize, count: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..0.8)).collect();
    let mut vars = rand::seq::index::sample(&mut rng, n, count.min(n)).into_vec();
    vars.sort_unstable();
    (rho, vars)
}

/// Adjoint versus central differences on random design variables. Returns
/// the entries and the maximum relative error.
pub fn gradcheck(
    cfg: &CaseConfig,
    count: usize,
    step: f64,
    seed: u64,
    out: Option<&Path>,
) -> CliResult<(Vec<GradientCheckEntry>, f64)> {
    let grid = build_grid(cfg)?;
    let (rho, vars) = gradcheck_sample(grid.design_cells().len(), count, seed);
    let entries = gradient_check(&grid, cfg, &rho, &vars, step)?;
    let max = entries.iter().map(|e| e.relative_error).fold(0.0, f64::max);
    if let Some(dir) = out {
        create_dir(dir)?;
        let mut manifest = RunManifest::start("gradcheck", cfg);
        let mut csv = String::from("variable,adjoint,finite_difference,relative_error\n");
        for e in &entries {
            let _ = writeln!(
                csv,
                "{},{:e},{:e},{:e}",
                e.variable, e.adjoint, e.finite_difference, e.relative_error
            );
        }
        write_text(dir, "config.cfg", &config_file::to_string(cfg), &mut manifest)?;
        write_text(dir, "gradcheck.csv", &csv, &mut manifest)?;
        manifest.solver.flow_solves = 1 + 2 * entries.len();
        manifest.finish(dir)?;
    }
    Ok((entries, max))
}
