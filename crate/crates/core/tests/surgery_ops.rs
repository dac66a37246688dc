use karea_core::bundle::{
    concentrated_monopole_bundle, monopole_bundle, trivial_bundle, Bundle, FluxSpec,
};
use karea_core::chern::chern_densities;
use karea_core::linalg::{fro_norm, identity};
use karea_core::mesh::{
    connected_sum, gen_mesh, plan_sphere_tube_surgery, plan_torus4_ring_surgery,
    plan_torus_band_surgery, surgery, GeneratorSpec, Mesh, SurgeryPlan,
};
use karea_core::surgery::{
    collapse_map_pullback, threshold_scan, transplant, transplant_sum, TransplantOutcome,
    TransplantResult, CAP_REGION,
};
use karea_core::trivialize::ObstructionKind;
use nalgebra::Complex;
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

fn torus2(n: usize) -> Arc<Mesh<f64>> {
    Arc::new(
        gen_mesh(&GeneratorSpec::Torus2 {
            nx: n,
            ny: n,
            lx: n as f64,
            ly: n as f64,
        })
        .unwrap(),
    )
}

fn banded_torus(n: usize) -> (Arc<Mesh<f64>>, SurgeryPlan<f64>) {
    let m = torus2(n);
    let plan = plan_torus_band_surgery(&m, 2).unwrap();
    let surgered = Arc::new(surgery(&m, &plan).unwrap());
    (surgered, plan)
}

fn tubed_sphere(n: usize) -> (Arc<Mesh<f64>>, SurgeryPlan<f64>) {
    let m = Arc::new(gen_mesh(&GeneratorSpec::CubedSphere { n, radius: 1.0 }).unwrap());
    let plan = plan_sphere_tube_surgery(&m).unwrap();
    let surgered = Arc::new(surgery(&m, &plan).unwrap());
    (surgered, plan)
}

fn assert_done(outcome: TransplantOutcome<f64>) -> TransplantResult<f64> {
    match outcome {
        TransplantOutcome::Done(r) => r,
        TransplantOutcome::Obstructed(o) => panic!("unexpected obstruction: {:?}", o),
    }
}

/// Top cell (of a 2D or 4D mesh) with every plaquette of its closure
/// holding bit-exact identity holonomy.
fn flat_top_cell(b: &Bundle<f64>) -> usize {
    let m = &b.base;
    let idm = identity::<f64>(b.rank);
    'cells: for c in 0..m.top_dim_cells() {
        let plaqs: Vec<usize> = if m.dim == 2 {
            vec![c]
        } else {
            m.boundary_of(4, c)
                .iter()
                .flat_map(|f| m.boundary_of(3, f.id))
                .map(|p| p.id)
                .collect()
        };
        for p in plaqs {
            if fro_norm(&(b.plaquette_holonomy(p) - &idm)) > 1e-12 {
                continue 'cells;
            }
        }
        return c;
    }
    panic!("no flat top cell found");
}

#[test]
fn band_surgery_trivial_bundle_keeps_zero_chern() {
    let (surgered, plan) = banded_torus(12);
    let b = trivial_bundle(&surgered, 1);
    let res = assert_done(transplant(&b, &plan, 1e-6).unwrap());
    assert!(res.identity_residual <= 1e-6, "residual {}", res.identity_residual);
    for row in &res.integrals {
        assert!(row.total_input.abs() <= 1e-9);
        assert!(row.total_my.abs() <= 1e-9);
        assert!(row.total_xy.abs() <= 1e-9);
    }
    // M' + the tube re-closes the torus; X + the reversed tube is a sphere.
    assert_eq!(res.bundle_my.base.betti1(), 2);
    assert_eq!(res.bundle_xy.base.betti1(), 0);
    assert!(res.bundle_my.base.boundary.is_empty());
    assert!(res.bundle_xy.base.boundary.is_empty());
    assert_eq!(res.bundle_my.flat_regions, vec![CAP_REGION.to_string()]);
}

#[test]
fn band_surgery_flux_bundle_bookkeeping_closes() {
    let (surgered, plan) = banded_torus(12);
    let b = monopole_bundle(&surgered, &FluxSpec::Simple(1)).unwrap();
    let res = assert_done(transplant(&b, &plan, 0.5).unwrap());
    assert!(res.identity_residual <= 1e-6, "residual {}", res.identity_residual);
    let row = &res.integrals[0];
    assert_eq!(row.monomial, "c1");
    assert!((row.total_input - 1.0).abs() <= 1e-6, "input {}", row.total_input);
    // Both reconstituted bundles live on closed surfaces, so their totals
    // are integers in their own right.
    assert!((row.total_my - row.total_my.round()).abs() <= 1e-6);
    assert!((row.total_xy - row.total_xy.round()).abs() <= 1e-6);
    assert!((row.total_my + row.total_xy - 1.0).abs() <= 1e-6);
}

#[test]
fn band_surgery_transplant_restricts_to_the_input_away_from_the_cut() {
    let (surgered, plan) = banded_torus(12);
    let b = monopole_bundle(&surgered, &FluxSpec::Simple(1)).unwrap();
    let res = assert_done(transplant(&b, &plan, 0.5).unwrap());
    let m_region = &surgered.regions["M_prime"];
    let collar_edges = &surgered.regions["collar"].cells[1];
    let mut checked = 0usize;
    for &p in &m_region.cells[2] {
        // Skip plaquettes sharing an edge with the collar: those may pick
        // up the flattening.
        if surgered.plaquettes[p].iter().any(|e| collar_edges.contains(&e.id)) {
            continue;
        }
        let pp = res.my_cut_maps.forward[2][p].expect("interior plaquette survives the cut");
        let (np, sign) = res.my_piece_map.plaq[pp];
        let h_in = b.plaquette_holonomy(p);
        let h_out = res.bundle_my.plaquette_holonomy(np);
        let h_out = if sign < 0 { h_out.adjoint() } else { h_out };
        assert!(fro_norm(&(h_in - h_out)) <= 1e-12);
        checked += 1;
    }
    assert!(checked > 50, "only {} interior plaquettes checked", checked);
}

#[test]
fn sphere_tube_surgery_trivial_transplant_and_flat_caps() {
    let (surgered, plan) = tubed_sphere(5);
    let b = trivial_bundle(&surgered, 1);
    let res = assert_done(transplant(&b, &plan, 1e-6).unwrap());
    assert!(res.identity_residual <= 1e-6);
    for row in &res.integrals {
        assert!(row.total_my.abs() <= 1e-9 && row.total_xy.abs() <= 1e-9);
    }
    let idm = identity::<f64>(1);
    for bundle in [&res.bundle_my, &res.bundle_xy] {
        let cap = &bundle.base.regions[CAP_REGION];
        assert!(!cap.cells[2].is_empty());
        for &p in &cap.cells[2] {
            assert!(fro_norm(&(bundle.plaquette_holonomy(p) - &idm)) <= 1e-13);
        }
    }
}

#[test]
fn sphere_tube_surgery_detects_circle_holonomy() {
    let (surgered, plan) = tubed_sphere(5);
    let mut b = trivial_bundle(&surgered, 1);
    // A flat phase field along the tube whose holonomy around each cut
    // circle is -1: undetectable by curvature, fatal for trivialization.
    let collar = surgered.collar.as_ref().unwrap();
    let slice = &collar.slice;
    // Circle membership and length per slice edge.
    let (labels, _) = component_labels(slice.num_vertices, &slice.edges);
    let circle_len = |k: usize| -> usize {
        slice
            .edges
            .iter()
            .filter(|[a, _]| labels[*a] == labels[slice.edges[k][0]])
            .count()
    };
    for layer in &collar.layers {
        for (k, [a, h]) in slice.edges.iter().enumerate() {
            let e = layer.cells[1][k];
            let (va, vh) = (layer.cells[0][*a], layer.cells[0][*h]);
            let dir = if surgered.edges[e] == [va, vh] {
                1.0
            } else {
                assert_eq!(surgered.edges[e], [vh, va]);
                -1.0
            };
            let th = dir * PI / circle_len(k) as f64;
            let mut u = identity::<f64>(1);
            u[(0, 0)] = Complex::new(th.cos(), th.sin());
            b.transport[e] = u;
        }
    }
    b.flat_regions.clear();
    b.validate().unwrap();
    match transplant(&b, &plan, 0.5).unwrap() {
        TransplantOutcome::Obstructed(o) => {
            assert_eq!(o.kind, ObstructionKind::NotSimplyConnected);
        }
        TransplantOutcome::Done(_) => panic!("expected an obstruction"),
    }
}

fn component_labels(n: usize, edges: &[[usize; 2]]) -> (Vec<usize>, usize) {
    let mut lab: Vec<Option<usize>> = vec![None; n];
    let mut comps = 0;
    for start in 0..n {
        if lab[start].is_some() {
            continue;
        }
        let mut stack = vec![start];
        lab[start] = Some(comps);
        while let Some(v) = stack.pop() {
            for [a, b] in edges {
                let w = if *a == v {
                    *b
                } else if *b == v {
                    *a
                } else {
                    continue;
                };
                if lab[w].is_none() {
                    lab[w] = Some(comps);
                    stack.push(w);
                }
            }
        }
        comps += 1;
    }
    (lab.into_iter().map(|l| l.unwrap()).collect(), comps)
}

#[test]
fn connected_sum_pullback_preserves_chern_2d() {
    let m1 = torus2(6);
    let m2 = torus2(6);
    let b1 = concentrated_monopole_bundle(&m1, &FluxSpec::Simple(1)).unwrap();
    let cell = flat_top_cell(&b1);
    let sum = connected_sum(&m1, &m2, cell, 0).unwrap();
    let b = collapse_map_pullback(&b1, &sum).unwrap();
    assert_eq!(b.base.betti1(), 4);
    let rep_in = chern_densities(&b1).unwrap();
    let rep = chern_densities(&b).unwrap();
    assert!((rep.totals[0] - rep_in.totals[0]).abs() <= 1e-9);
    assert!((rep.totals[0] - 1.0).abs() <= 1e-6);
}

#[test]
fn connected_sum_transplant_4d_bookkeeping() {
    let m1 = Arc::new(gen_mesh(&GeneratorSpec::Torus4 { n: 5, length: 5.0 }).unwrap());
    let m2 = Arc::new(gen_mesh(&GeneratorSpec::Torus4 { n: 5, length: 5.0 }).unwrap());
    let fluxes = FluxSpec::Planes(vec![((0, 1), 1), ((2, 3), 1)]);
    let b1 = concentrated_monopole_bundle(&m1, &fluxes).unwrap();
    let cell = flat_top_cell(&b1);
    let sum = connected_sum(&m1, &m2, cell, cell).unwrap();
    let b = collapse_map_pullback(&b1, &sum).unwrap();
    let rep = chern_densities(&b).unwrap();
    // c1^2 of a (1,1) two-plane flux is 2 k01 k23 = 2; c2 vanishes for a
    // line bundle.
    assert_eq!(rep.basis, vec!["c1^2", "c2"]);
    assert!((rep.totals[0] - 2.0).abs() <= 1e-6, "c1^2 {}", rep.totals[0]);
    assert!(rep.totals[1].abs() <= 1e-6);

    let res = assert_done(transplant_sum(&b, 1e-6).unwrap());
    assert!(res.identity_residual <= 1e-4, "residual {}", res.identity_residual);
    let c1sq = &res.integrals[0];
    assert!((c1sq.total_my - 2.0).abs() <= 1e-4, "my {}", c1sq.total_my);
    assert!(c1sq.total_xy.abs() <= 1e-4, "xy {}", c1sq.total_xy);
    assert!(res.bundle_my.base.boundary.is_empty());
    assert!(res.bundle_xy.base.boundary.is_empty());
}

#[test]
fn ring_surgery_transplant_is_reported_unsupported() {
    let m = Arc::new(gen_mesh(&GeneratorSpec::Torus4 { n: 3, length: 3.0 }).unwrap());
    let plan = plan_torus4_ring_surgery(&m).unwrap();
    let b = trivial_bundle(&m, 1);
    let err = transplant(&b, &plan, 1e-3).unwrap_err();
    assert!(err.to_string().contains("not implemented"), "{}", err);
}

#[test]
fn transplant_sum_requires_sum_regions() {
    let b = trivial_bundle(&torus2(6), 1);
    assert!(transplant_sum(&b, 1e-3).is_err());
}

#[test]
fn threshold_scan_finds_the_monopole_curvature_level() {
    let base = torus2(8);
    let scan = threshold_scan(&base, &[0, 1], &[0.0, 0.02], 0..2, 0.5).unwrap();
    assert_eq!(scan.samples.len(), 8);
    // Constant-curvature flux 1 on 64 unit plaquettes: |log h| = 2 pi / 64,
    // and no perturbation can push every plaquette below it (total winding
    // is pinned), so the threshold sits exactly there.
    let expected = TAU / 64.0;
    let ds = scan.delta_star.expect("flux samples must trip the scan");
    assert!((ds - expected).abs() <= 1e-9, "delta* {} vs {}", ds, expected);
    for s in &scan.samples {
        if s.flux == 0 {
            assert!(s.max_basis_total <= 1e-6);
        } else {
            assert!(s.max_basis_total > 0.5);
        }
        if s.sup_norm < ds {
            assert!(s.max_basis_total <= 0.5);
        }
    }
}
