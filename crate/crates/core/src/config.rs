//! Case configuration: physical, geometric, numerical and optimization
//! parameters with the half-cell defaults.
//!
//! Every parameter is addressable through a flat string key so that the
//! configuration can be read from and written to plain `key = value` text.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How the effective ionic conductivity of the electrolyte is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConductivityMode {
    /// Summed over the vanadium species from their concentrations.
    Computed,
    /// Fixed `kappa_e` value.
    Constant,
}

impl FromStr for ConductivityMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "computed" => Ok(Self::Computed),
            "constant" => Ok(Self::Constant),
            other => Err(Error::Config(format!("unknown conductivity mode '{other}'"))),
        }
    }
}

impl fmt::Display for ConductivityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Computed => "computed",
            Self::Constant => "constant",
        })
    }
}

/// Side face of the cell footprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// x = 0
    West,
    /// x = L
    East,
    /// y = 0
    South,
    /// y = W
    North,
}

impl FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "west" => Ok(Self::West),
            "east" => Ok(Self::East),
            "south" => Ok(Self::South),
            "north" => Ok(Self::North),
            other => Err(Error::Config(format!("unknown side '{other}'"))),
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::West => "west",
            Self::East => "east",
            Self::South => "south",
            Self::North => "north",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeParams {
    pub porosity: f64,
    /// Specific surface area (1/m).
    pub specific_area: f64,
    pub fiber_diameter: f64,
    /// Electronic conductivity of the solid phase (S/m).
    pub sigma_s: f64,
    pub kozeny_carman: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElectrolyteParams {
    pub viscosity: f64,
    pub c_in_v2: f64,
    pub c_in_v3: f64,
    pub diffusivity_v2: f64,
    pub diffusivity_v3: f64,
    /// Used when `kappa_mode` is `Constant` (S/m).
    pub kappa_e: f64,
    pub kappa_mode: ConductivityMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KineticParams {
    /// Standard reaction rate constant (m/s).
    pub rate_constant: f64,
    pub alpha_c: f64,
    pub alpha_a: f64,
    /// Equilibrium potential (V).
    pub u0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatingParams {
    pub temperature: f64,
    pub p_in: f64,
    pub p_out: f64,
    /// Applied current (A); positive while charging.
    pub current: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalConstants {
    pub faraday: f64,
    pub gas_constant: f64,
    pub z_v2: f64,
    pub z_v3: f64,
}

/// Placement of a rectangular inlet or outlet patch on a side face of the
/// design layer. The patch always spans the full design-layer thickness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchPlacement {
    pub side: Side,
    /// Centre of the patch along the face (m).
    pub center: f64,
    /// Extent of the patch along the face (m).
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryParams {
    pub length: f64,
    pub width: f64,
    pub electrode_thickness: f64,
    pub channel_thickness: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz_channel: usize,
    pub nz_electrode: usize,
    pub inlet: PatchPlacement,
    pub outlet: PatchPlacement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericalParams {
    /// Relative residual accepted from the linear solves.
    pub linear_tol: f64,
    /// Maximum relative update at which the electrochemistry iteration stops.
    pub electro_tol: f64,
    pub electro_max_iter: usize,
    /// Regularization floor for the speed entering the mass-transfer correlation (m/s).
    pub km_floor: f64,
    /// Clamp on |alpha F eta / RT| inside the Butler-Volmer exponentials.
    pub bv_clamp: f64,
    /// Helmholtz filter radius (m); `None` selects twice the in-plane cell size.
    pub filter_radius: Option<f64>,
    pub move_limit: f64,
    /// Convexity parameter of the fictitious inverse permeability.
    pub q: f64,
    /// Fictitious inverse permeability as a multiple of the electrode's mu/K.
    pub alpha_fic_multiplier: f64,
    pub opt_max_iter: usize,
    pub opt_tol: f64,
    pub opt_window: usize,
    pub rho_init: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceParams {
    pub channel_width: f64,
    /// Centre-to-centre spacing of neighbouring branches.
    pub channel_pitch: f64,
}

/// All parameters of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseConfig {
    pub electrode: ElectrodeParams,
    pub electrolyte: ElectrolyteParams,
    pub kinetics: KineticParams,
    pub operating: OperatingParams,
    pub constants: PhysicalConstants,
    pub geometry: GeometryParams,
    pub numerics: NumericalParams,
    pub reference: ReferenceParams,
}

impl Default for CaseConfig {
    fn default() -> Self {
        Self {
            electrode: ElectrodeParams {
                porosity: 0.929,
                specific_area: 1.62e4,
                fiber_diameter: 1.76e-5,
                sigma_s: 1.0e3,
                kozeny_carman: 4.28,
            },
            electrolyte: ElectrolyteParams {
                viscosity: 4.928e-3,
                c_in_v2: 750.0,
                c_in_v3: 750.0,
                diffusivity_v2: 2.4e-4,
                diffusivity_v3: 2.4e-4,
                kappa_e: 7.8,
                kappa_mode: ConductivityMode::Computed,
            },
            kinetics: KineticParams {
                rate_constant: 1.7e-7,
                alpha_c: 0.5,
                alpha_a: 0.5,
                u0: -0.255,
            },
            operating: OperatingParams {
                temperature: 298.0,
                p_in: 1.0e3,
                p_out: 0.0,
                current: 4.0,
            },
            constants: PhysicalConstants {
                faraday: 96485.33212,
                gas_constant: 8.314462618,
                z_v2: 2.0,
                z_v3: 3.0,
            },
            geometry: GeometryParams {
                length: 0.1,
                width: 0.1,
                electrode_thickness: 3.0e-3,
                channel_thickness: 3.0e-3,
                nx: 33,
                ny: 33,
                nz_channel: 3,
                nz_electrode: 3,
                inlet: PatchPlacement {
                    side: Side::West,
                    center: 0.05,
                    width: 3.0e-3,
                },
                outlet: PatchPlacement {
                    side: Side::East,
                    center: 0.05,
                    width: 3.0e-3,
                },
            },
            numerics: NumericalParams {
                linear_tol: 1e-8,
                electro_tol: 1e-6,
                electro_max_iter: 200,
                km_floor: 1e-9,
                bv_clamp: 50.0,
                filter_radius: None,
                move_limit: 0.1,
                q: 0.01,
                alpha_fic_multiplier: 5.0,
                opt_max_iter: 100,
                opt_tol: 1e-6,
                opt_window: 5,
                rho_init: 0.5,
                threshold: 0.5,
            },
            reference: ReferenceParams {
                channel_width: 3.0e-3,
                channel_pitch: 9.0e-3,
            },
        }
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("key '{key}': expected a number, got '{value}'")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("key '{key}': expected a non-negative integer, got '{value}'")))
}

trait ConfigValue: Sized {
    fn parse_value(key: &str, value: &str) -> Result<Self>;
    fn format_value(&self) -> String;
}

impl ConfigValue for f64 {
    fn parse_value(key: &str, value: &str) -> Result<Self> {
        parse_f64(key, value)
    }
    fn format_value(&self) -> String {
        // Display for f64 is the shortest representation that round-trips.
        format!("{self}")
    }
}

impl ConfigValue for usize {
    fn parse_value(key: &str, value: &str) -> Result<Self> {
        parse_usize(key, value)
    }
    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for Option<f64> {
    fn parse_value(key: &str, value: &str) -> Result<Self> {
        if value == "auto" {
            Ok(None)
        } else {
            parse_f64(key, value).map(Some)
        }
    }
    fn format_value(&self) -> String {
        match self {
            Some(v) => v.format_value(),
            None => "auto".to_string(),
        }
    }
}

impl ConfigValue for ConductivityMode {
    fn parse_value(key: &str, value: &str) -> Result<Self> {
        value.parse().map_err(|e| Error::Config(format!("key '{key}': {e}")))
    }
    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for Side {
    fn parse_value(key: &str, value: &str) -> Result<Self> {
        value.parse().map_err(|e| Error::Config(format!("key '{key}': {e}")))
    }
    fn format_value(&self) -> String {
        self.to_string()
    }
}

macro_rules! config_keys {
    ($( $section:literal { $( $key:literal => $($field:ident).+ ; )* } )*) => {
        /// Configuration keys grouped by section, in serialization order.
        pub const CONFIG_SECTIONS: &[(&str, &[&str])] = &[
            $( ($section, &[ $( $key ),* ]) ),*
        ];

        impl CaseConfig {
            /// Sets one parameter from its textual value. Unknown keys are rejected.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( $( $key => { self.$($field).+ = ConfigValue::parse_value(key, value)?; } )* )*
                    _ => return Err(Error::Config(format!("unknown key '{key}'"))),
                }
                Ok(())
            }

            /// Textual value of one parameter.
            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $( $( $key => Some(ConfigValue::format_value(&self.$($field).+)), )* )*
                    _ => None,
                }
            }
        }
    };
}

config_keys! {
    "electrode" {
        "epsilon" => electrode.porosity;
        "specific_area" => electrode.specific_area;
        "fiber_diameter" => electrode.fiber_diameter;
        "sigma_s" => electrode.sigma_s;
        "kozeny_carman" => electrode.kozeny_carman;
    }
    "electrolyte" {
        "viscosity" => electrolyte.viscosity;
        "c_in_v2" => electrolyte.c_in_v2;
        "c_in_v3" => electrolyte.c_in_v3;
        "diffusivity_v2" => electrolyte.diffusivity_v2;
        "diffusivity_v3" => electrolyte.diffusivity_v3;
        "kappa_e" => electrolyte.kappa_e;
        "kappa_mode" => electrolyte.kappa_mode;
    }
    "kinetics" {
        "rate_constant" => kinetics.rate_constant;
        "alpha_c" => kinetics.alpha_c;
        "alpha_a" => kinetics.alpha_a;
        "u0" => kinetics.u0;
    }
    "operating" {
        "temperature" => operating.temperature;
        "p_in" => operating.p_in;
        "p_out" => operating.p_out;
        "current" => operating.current;
    }
    "constants" {
        "faraday" => constants.faraday;
        "gas_constant" => constants.gas_constant;
        "z_v2" => constants.z_v2;
        "z_v3" => constants.z_v3;
    }
    "geometry" {
        "length" => geometry.length;
        "width" => geometry.width;
        "electrode_thickness" => geometry.electrode_thickness;
        "channel_thickness" => geometry.channel_thickness;
        "nx" => geometry.nx;
        "ny" => geometry.ny;
        "nz_channel" => geometry.nz_channel;
        "nz_electrode" => geometry.nz_electrode;
        "inlet_side" => geometry.inlet.side;
        "inlet_center" => geometry.inlet.center;
        "inlet_width" => geometry.inlet.width;
        "outlet_side" => geometry.outlet.side;
        "outlet_center" => geometry.outlet.center;
        "outlet_width" => geometry.outlet.width;
    }
    "numerics" {
        "linear_tol" => numerics.linear_tol;
        "electro_tol" => numerics.electro_tol;
        "electro_max_iter" => numerics.electro_max_iter;
        "km_floor" => numerics.km_floor;
        "bv_clamp" => numerics.bv_clamp;
        "filter_radius" => numerics.filter_radius;
        "move_limit" => numerics.move_limit;
        "q" => numerics.q;
        "alpha_fic_multiplier" => numerics.alpha_fic_multiplier;
        "opt_max_iter" => numerics.opt_max_iter;
        "opt_tol" => numerics.opt_tol;
        "opt_window" => numerics.opt_window;
        "rho_init" => numerics.rho_init;
        "threshold" => numerics.threshold;
    }
    "reference" {
        "ref_channel_width" => reference.channel_width;
        "ref_channel_pitch" => reference.channel_pitch;
    }
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            value,
            reason: "must be strictly positive",
        })
    }
}

impl CaseConfig {
    /// All keys in serialization order.
    pub fn keys() -> impl Iterator<Item = &'static str> {
        CONFIG_SECTIONS.iter().flat_map(|(_, keys)| keys.iter().copied())
    }

    /// Checks the ranges of every parameter.
    pub fn validate(&self) -> Result<()> {
        let e = &self.electrode;
        if !(e.porosity > 0.0 && e.porosity < 1.0) {
            return Err(Error::OutOfRange {
                name: "epsilon",
                value: e.porosity,
                reason: "porosity must lie in (0, 1)",
            });
        }
        positive("specific_area", e.specific_area)?;
        positive("fiber_diameter", e.fiber_diameter)?;
        positive("sigma_s", e.sigma_s)?;
        positive("kozeny_carman", e.kozeny_carman)?;

        let el = &self.electrolyte;
        positive("viscosity", el.viscosity)?;
        positive("c_in_v2", el.c_in_v2)?;
        positive("c_in_v3", el.c_in_v3)?;
        positive("diffusivity_v2", el.diffusivity_v2)?;
        positive("diffusivity_v3", el.diffusivity_v3)?;
        positive("kappa_e", el.kappa_e)?;

        let k = &self.kinetics;
        positive("rate_constant", k.rate_constant)?;
        positive("alpha_c", k.alpha_c)?;
        positive("alpha_a", k.alpha_a)?;

        let op = &self.operating;
        positive("temperature", op.temperature)?;
        positive("p_in", op.p_in)?;
        if op.current < 0.0 || !op.current.is_finite() {
            return Err(Error::OutOfRange {
                name: "current",
                value: op.current,
                reason: "applied current must be non-negative",
            });
        }

        let c = &self.constants;
        positive("faraday", c.faraday)?;
        positive("gas_constant", c.gas_constant)?;
        positive("z_v2", c.z_v2)?;
        positive("z_v3", c.z_v3)?;

        let g = &self.geometry;
        positive("length", g.length)?;
        positive("width", g.width)?;
        positive("electrode_thickness", g.electrode_thickness)?;
        positive("channel_thickness", g.channel_thickness)?;
        positive("inlet_width", g.inlet.width)?;
        positive("outlet_width", g.outlet.width)?;
        for (name, n) in [
            ("nx", g.nx),
            ("ny", g.ny),
            ("nz_channel", g.nz_channel),
            ("nz_electrode", g.nz_electrode),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("cell count '{name}' must be positive")));
            }
        }

        let n = &self.numerics;
        positive("linear_tol", n.linear_tol)?;
        positive("electro_tol", n.electro_tol)?;
        positive("km_floor", n.km_floor)?;
        positive("bv_clamp", n.bv_clamp)?;
        positive("q", n.q)?;
        positive("alpha_fic_multiplier", n.alpha_fic_multiplier)?;
        positive("opt_tol", n.opt_tol)?;
        if let Some(r) = n.filter_radius {
            if !(r >= 0.0) {
                return Err(Error::OutOfRange {
                    name: "filter_radius",
                    value: r,
                    reason: "must be non-negative",
                });
            }
        }
        if !(n.move_limit > 0.0 && n.move_limit <= 1.0) {
            return Err(Error::OutOfRange {
                name: "move_limit",
                value: n.move_limit,
                reason: "must lie in (0, 1]",
            });
        }
        for (name, v) in [("rho_init", n.rho_init), ("threshold", n.threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange {
                    name,
                    value: v,
                    reason: "must lie in [0, 1]",
                });
            }
        }
        if n.electro_max_iter == 0 || n.opt_window == 0 {
            return Err(Error::Config("iteration caps must be positive".into()));
        }

        let r = &self.reference;
        positive("ref_channel_width", r.channel_width)?;
        positive("ref_channel_pitch", r.channel_pitch)?;
        if r.channel_pitch <= r.channel_width {
            return Err(Error::Config(
                "reference channel pitch must exceed the channel width".into(),
            ));
        }
        Ok(())
    }

    /// Thermal voltage RT/F (V).
    pub fn thermal_voltage(&self) -> f64 {
        self.constants.gas_constant * self.operating.temperature / self.constants.faraday
    }

    /// Returns a copy with a different electrode porosity. Every
    /// porosity-dependent quantity is derived on use, so nothing else changes.
    pub fn with_porosity(&self, porosity: f64) -> Self {
        let mut c = self.clone();
        c.electrode.porosity = porosity;
        c
    }

    /// Returns a copy with a different applied current.
    pub fn with_current(&self, current: f64) -> Self {
        let mut c = self.clone();
        c.operating.current = current;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips_through_text() {
        let cfg = CaseConfig::default();
        let mut copy = CaseConfig::default();
        copy.electrode.porosity = 0.5;
        copy.numerics.filter_radius = Some(1e-3);
        copy.electrolyte.kappa_mode = ConductivityMode::Constant;
        for key in CaseConfig::keys() {
            let text = cfg.get(key).unwrap();
            copy.set(key, &text).unwrap();
        }
        assert_eq!(copy, cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut cfg = CaseConfig::default();
        let err = cfg.set("epsilonn", "0.5").unwrap_err().to_string();
        assert!(err.contains("epsilonn"), "{err}");
    }

    #[test]
    fn type_errors_are_reported() {
        let mut cfg = CaseConfig::default();
        assert!(cfg.set("nx", "3.5").is_err());
        assert!(cfg.set("epsilon", "high").is_err());
        assert!(cfg.set("kappa_mode", "guess").is_err());
    }

    #[test]
    fn porosity_at_one_is_rejected() {
        let cfg = CaseConfig::default().with_porosity(1.0);
        assert!(cfg.validate().is_err());
        assert!(CaseConfig::default().validate().is_ok());
    }

    #[test]
    fn keys_are_unique() {
        let mut keys: Vec<_> = CaseConfig::keys().collect();
        let n = keys.len();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), n);
    }
}
