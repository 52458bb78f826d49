//! Conservation and response of the coupled species/charge solve.

use vrfb_core::electrochem::ElectroProblem;
use vrfb_core::flowfields::{generate_reference, ReferenceFieldSpec, ReferenceKind};
use vrfb_core::{build_grid, solve_electrochemistry, solve_flow, CaseConfig, ConductivityMode, DensityField, Grid};

fn case(n: usize, current: f64) -> (CaseConfig, Grid) {
    let mut cfg = CaseConfig::default();
    cfg.geometry.nx = n;
    cfg.geometry.ny = n;
    cfg.geometry.nz_channel = 2;
    cfg.geometry.nz_electrode = 2;
    cfg.operating.current = current;
    let g = build_grid(&cfg).unwrap();
    (cfg, g)
}

#[test]
fn transfer_current_integrates_to_applied_current() {
    for current in [1.0, 4.0, 10.0] {
        let (cfg, g) = case(12, current);
        let d = generate_reference(
            &ReferenceFieldSpec::from_config(ReferenceKind::Interdigitated, &cfg),
            &g,
        )
        .unwrap();
        let flow = solve_flow(&g, &d, &cfg).unwrap();
        let st = solve_electrochemistry(&g, &flow, &cfg).unwrap();
        let total = st.total_current(&g);
        assert!(((total - current) / current).abs() < 1e-4, "I = {current}: {total}");
    }
}

#[test]
fn species_are_balanced_between_inlet_outlet_and_reaction() {
    let (cfg, g) = case(12, 4.0);
    let flow = solve_flow(&g, &DensityField::uniform(&g, 1.0), &cfg).unwrap();
    let st = solve_electrochemistry(&g, &flow, &cfg).unwrap();
    let (c2_out, c3_out) = st.outlet_average(&g, &flow);
    // outflow of V2+ exceeds inflow by I/F, V3+ falls short by the same amount;
    // the large diffusivity adds a dispersive boundary flux, so only the
    // signs and the sum are checked exactly
    assert!(c2_out > cfg.electrolyte.c_in_v2);
    assert!(c3_out < cfg.electrolyte.c_in_v3);
    let total_in = cfg.electrolyte.c_in_v2 + cfg.electrolyte.c_in_v3;
    assert!(((c2_out + c3_out) - total_in).abs() < 1e-6 * total_in);
}

#[test]
fn higher_current_raises_overpotential_and_depletes_the_surface() {
    let (cfg4, g) = case(10, 4.0);
    let cfg8 = cfg4.with_current(8.0);
    let flow = solve_flow(&g, &DensityField::uniform(&g, 1.0), &cfg4).unwrap();
    let s4 = solve_electrochemistry(&g, &flow, &cfg4).unwrap();
    let s8 = solve_electrochemistry(&g, &flow, &cfg8).unwrap();
    assert!(s8.mean_abs_eta(&g) > s4.mean_abs_eta(&g));
    assert!(s8.mean_c3s(&g) < s4.mean_c3s(&g));
}

#[test]
fn constant_conductivity_mode_solves() {
    let (mut cfg, g) = case(8, 4.0);
    cfg.electrolyte.kappa_mode = ConductivityMode::Constant;
    let flow = solve_flow(&g, &DensityField::uniform(&g, 1.0), &cfg).unwrap();
    let st = solve_electrochemistry(&g, &flow, &cfg).unwrap();
    assert!((st.total_current(&g) - 4.0).abs() < 4e-4);
}

#[test]
fn converged_state_has_small_residual() {
    let (cfg, g) = case(8, 4.0);
    let flow = solve_flow(&g, &DensityField::uniform(&g, 0.7), &cfg).unwrap();
    let p = ElectroProblem::new(&g, &flow, &cfg).unwrap();
    let st = p.solve().unwrap();
    let y = st.unknowns();
    let (r, _) = p.assemble(&y, false);
    let (r0, _) = p.assemble(&p.initial_guess().unwrap(), false);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm(&r) < 1e-6 * norm(&r0), "{} vs {}", norm(&r), norm(&r0));
    assert!(st.iterations <= 20);
}
