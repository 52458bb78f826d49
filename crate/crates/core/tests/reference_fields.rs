//! Reference layouts, operating-point control and loss bookkeeping.

use vrfb_core::flowfields::{
    evaluate_design, generate_reference, is_through_connected, sweep, FlowControl, OperatingPoint, PreparedDesign,
    ReferenceFieldSpec, ReferenceKind,
};
use vrfb_core::{build_grid, CaseConfig, DensityField, Grid};

fn case(n: usize) -> (CaseConfig, Grid) {
    let mut cfg = CaseConfig::default();
    cfg.geometry.nx = n;
    cfg.geometry.ny = n;
    cfg.geometry.nz_channel = 2;
    cfg.geometry.nz_electrode = 2;
    let g = build_grid(&cfg).unwrap();
    (cfg, g)
}

fn reference(kind: ReferenceKind, cfg: &CaseConfig, g: &Grid) -> DensityField {
    generate_reference(&ReferenceFieldSpec::from_config(kind, cfg), g).unwrap()
}

#[test]
fn connectivity_labels_hold_on_several_grids() {
    for n in [24, 33, 40, 48] {
        let (cfg, g) = case(n);
        assert!(
            is_through_connected(&g, &reference(ReferenceKind::Parallel, &cfg, &g), 0.5),
            "n = {n}"
        );
        assert!(
            !is_through_connected(&g, &reference(ReferenceKind::Interdigitated, &cfg, &g), 0.5),
            "n = {n}"
        );
    }
}

#[test]
fn flow_rate_target_is_met() {
    let (cfg, g) = case(24);
    let d = reference(ReferenceKind::Interdigitated, &cfg, &g);
    let p = PreparedDesign::new(&g, &d, &cfg).unwrap();
    for q in [1e-6, 5e-6, 1.5e-5] {
        let s = p.flow(&g, FlowControl::FlowRate(q)).unwrap();
        assert!(((s.q_in - q) / q).abs() < 5e-3, "{} vs {q}", s.q_in);
    }
}

#[test]
fn pressure_drop_scales_linearly_with_flow_rate() {
    let (cfg, g) = case(24);
    let d = reference(ReferenceKind::Parallel, &cfg, &g);
    let p = PreparedDesign::new(&g, &d, &cfg).unwrap();
    let dp1 = p.flow(&g, FlowControl::FlowRate(1e-6)).unwrap().pressure_drop();
    let dp5 = p.flow(&g, FlowControl::FlowRate(5e-6)).unwrap().pressure_drop();
    assert!((dp5 / dp1 - 5.0).abs() < 0.05, "{dp1} {dp5}");
}

#[test]
fn interdigitated_costs_more_pressure_than_parallel() {
    let (cfg, g) = case(24);
    let point = OperatingPoint {
        current: 4.0,
        porosity: 0.929,
        control: FlowControl::FlowRate(1e-6),
    };
    let par = evaluate_design(&g, &reference(ReferenceKind::Parallel, &cfg, &g), &point, &cfg).unwrap();
    let int = evaluate_design(&g, &reference(ReferenceKind::Interdigitated, &cfg, &g), &point, &cfg).unwrap();
    assert!(int.report.pressure_drop > par.report.pressure_drop);
    let r = int.report;
    assert_eq!(r.power_loss, r.current * r.mean_abs_eta + r.flow_rate * r.pressure_drop);
}

#[test]
fn sweep_matches_single_evaluations() {
    let (cfg, g) = case(12);
    let d = reference(ReferenceKind::Parallel, &cfg, &g);
    let points = [
        OperatingPoint {
            current: 4.0,
            porosity: 0.929,
            control: FlowControl::FlowRate(2e-6),
        },
        OperatingPoint {
            current: 4.0,
            porosity: 0.68,
            control: FlowControl::FlowRate(5e-6),
        },
    ];
    let rows = sweep(&g, &[("parallel".into(), d.clone())], &points, &cfg).unwrap();
    for (row, p) in rows.iter().zip(&points) {
        let single = evaluate_design(&g, &d, p, &cfg).unwrap().report;
        let r = row.result.as_ref().unwrap();
        assert!((r.pressure_drop - single.pressure_drop).abs() < 1e-6 * single.pressure_drop);
        assert!((r.mean_abs_eta - single.mean_abs_eta).abs() < 1e-6 * single.mean_abs_eta);
    }
}
