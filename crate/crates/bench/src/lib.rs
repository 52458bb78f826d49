//! Fixtures shared by the benchmarks.

use vrfb_core::{build_grid, CaseConfig, Grid};

/// Default case on an `n × n` footprint with `layers` cells per layer.
pub fn case(n: usize, layers: usize) -> (CaseConfig, Grid) {
    let mut cfg = CaseConfig::default();
    cfg.geometry.nx = n;
    cfg.geometry.ny = n;
    cfg.geometry.nz_channel = layers;
    cfg.geometry.nz_electrode = layers;
    let grid = build_grid(&cfg).expect("benchmark grid");
    (cfg, grid)
}

#[cfg(test)]
mod tests {
    #[test]
    fn fixture_builds() {
        let (_, g) = super::case(8, 2);
        assert_eq!(g.n_cells(), 256);
    }
}
