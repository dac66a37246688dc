use karea_core::bundle::{
    curvature, gauge, monopole_bundle, perturb, random_gauge, trivial_bundle, Bundle, FluxSpec,
};
use karea_core::chern::chern_densities;
use karea_core::linalg::{identity, CMat};
use karea_core::mesh::{connected_sum, gen_mesh, GeneratorSpec, Mesh};
use karea_core::trivialize::{
    collar_extend, flatten_collar, frame_residual, relax_gauge, tree_gauge, trivialize,
    CutoffProfile, ObstructionKind, TrivializeOutcome, FLAT_END_REGION,
};
use nalgebra::Complex;
use std::f64::consts::TAU;
use std::sync::Arc;

fn sphere(n: usize) -> Arc<Mesh<f64>> {
    Arc::new(gen_mesh(&GeneratorSpec::CubedSphere { n, radius: 1.0 }).unwrap())
}

/// Unit-scale cylinder: edge length, spacing and plaquette area all 1.
fn cylinder(n: usize, levels: usize) -> Arc<Mesh<f64>> {
    Arc::new(
        gen_mesh(&GeneratorSpec::Cylinder {
            n,
            radius: n as f64 / TAU,
            t0: 0.0,
            t1: levels as f64,
            levels,
        })
        .unwrap(),
    )
}

/// Unit-scale cylinder over t in [-2, 2]: five layers, all inside the
/// squeeze zone of `flatten_collar`.
fn cylinder_sym(n: usize) -> Arc<Mesh<f64>> {
    Arc::new(
        gen_mesh(&GeneratorSpec::Cylinder {
            n,
            radius: n as f64 / TAU,
            t0: -2.0,
            t1: 2.0,
            levels: 4,
        })
        .unwrap(),
    )
}

/// Two disjoint spheres in one complex.
fn disjoint_spheres(n: usize) -> Arc<Mesh<f64>> {
    let s = sphere(n);
    let mut m = (*s).clone();
    let (nv, ne, np) = (m.num_vertices, m.edges.len(), m.plaquettes.len());
    m.num_vertices *= 2;
    for i in 0..ne {
        let [t, h] = s.edges[i];
        m.edges.push([t + nv, h + nv]);
        m.edge_length.push(s.edge_length[i]);
    }
    for p in 0..np {
        let cycle = s.plaquettes[p]
            .iter()
            .map(|e| karea_core::mesh::SignedCell::new(e.id + ne, e.sign))
            .collect();
        m.plaquettes.push(cycle);
        m.plaquette_area.push(s.plaquette_area[p]);
    }
    m.regions.clear();
    m.generator = None;
    m.validate().unwrap();
    Arc::new(m)
}

#[test]
fn tree_gauge_restores_a_flat_bundle() {
    let m = sphere(8);
    let flat = trivial_bundle(&m, 2);
    let hidden = gauge(&flat, &random_gauge(&m, 2, 3)).unwrap();
    let g = tree_gauge(&hidden, 0).unwrap();
    let restored = gauge(&hidden, &g).unwrap();
    // Flat holonomy on contractible loops: every edge returns to the
    // identity, tree edges by construction and the rest because the
    // bundle is flat.
    assert!(frame_residual(&restored) < 1e-12);
}

#[test]
fn tree_gauge_basepoint_does_not_change_curvature() {
    let m = sphere(8);
    let b = perturb(&trivial_bundle(&m, 2), 0.05, 7);
    let before = curvature(&b).unwrap().sup_norm;
    for basepoint in [0usize, 17] {
        let g = tree_gauge(&b, basepoint).unwrap();
        let gb = gauge(&b, &g).unwrap();
        gb.validate().unwrap();
        assert!((curvature(&gb).unwrap().sup_norm - before).abs() < 1e-12);
    }
}

#[test]
fn relax_is_monotone_and_contracts_the_residual() {
    let m = sphere(8);
    let b = perturb(&trivial_bundle(&m, 2), 0.01, 1);
    let input_residual = frame_residual(&b);
    let tb = gauge(&b, &tree_gauge(&b, 0).unwrap()).unwrap();
    let report = relax_gauge(&tb, 500, 0.0).unwrap();
    for w in report.objective.windows(2) {
        assert!(w[1] <= w[0], "objective increased: {} -> {}", w[0], w[1]);
    }
    assert!(report.residual <= 10.0 * input_residual);
    assert!(report.sweeps <= 500);
}

#[test]
fn relax_on_identity_does_nothing() {
    let m = sphere(4);
    let b = trivial_bundle(&m, 2);
    let report = relax_gauge(&b, 100, 1e-14).unwrap();
    assert_eq!(report.sweeps, 0);
    assert_eq!(report.residual, 0.0);
}

#[test]
fn relax_on_a_monopole_plateaus_above_the_flux_floor() {
    let m = sphere(8);
    let b = monopole_bundle(&m, &FluxSpec::Simple(1)).unwrap();
    let report = relax_gauge(&b, 200, 0.0).unwrap();
    // Total plaquette phase 2 pi must persist: each plaquette phase is a
    // signed sum of 4 edge phases and each edge feeds 2 plaquettes, so
    // 2 pi <= 2 sum |phi_e| <= 2 sqrt(E * objective).
    let ne = m.edges.len() as f64;
    let floor = std::f64::consts::PI.powi(2) / ne;
    assert!(
        *report.objective.last().unwrap() >= floor,
        "objective {} below flux floor {}",
        report.objective.last().unwrap(),
        floor
    );
}

#[test]
fn trivialize_disconnected_flat_bundle() {
    let m = disjoint_spheres(4);
    let flat = trivial_bundle(&m, 2);
    let hidden = gauge(&flat, &random_gauge(&m, 2, 5)).unwrap();
    let cert = trivialize(&hidden, 0.1).unwrap().certificate().unwrap();
    assert!(cert.residual <= 1e-10);
    // The certificate must reproduce its residual from scratch.
    let applied = gauge(&hidden, &cert.gauge).unwrap();
    assert!((frame_residual(&applied) - cert.residual).abs() < 1e-12);
}

#[test]
fn trivialize_rejects_a_monopole() {
    let b = monopole_bundle(&sphere(8), &FluxSpec::Simple(1)).unwrap();
    match trivialize(&b, 0.1).unwrap() {
        TrivializeOutcome::Obstructed(o) => {
            assert_eq!(o.kind, ObstructionKind::NonzeroChern);
            assert!((o.witness_value - 1.0).abs() < 1e-6);
        }
        TrivializeOutcome::Trivial(_) => panic!("monopole must not trivialize"),
    }
}

/// Flat rank-1 bundle on a cylinder with holonomy -1 spread around the
/// circle: e^{i pi / n} on every circle edge.
fn half_turn_ring(m: &Arc<Mesh<f64>>, n: usize) -> Bundle<f64> {
    let theta = std::f64::consts::PI / n as f64;
    let phase = Complex::new(theta.cos(), theta.sin());
    let transport = m
        .edges
        .iter()
        .enumerate()
        .map(|(e, _)| {
            let mut u = CMat::<f64>::zeros(1, 1);
            // Circle edges have length 1 and connect same-level vertices;
            // use the collar layers to identify them.
            u[(0, 0)] = Complex::new(1.0, 0.0);
            let collar = m.collar.as_ref().unwrap();
            for layer in &collar.layers {
                if layer.cells[1].contains(&e) {
                    u[(0, 0)] = phase;
                }
            }
            u
        })
        .collect();
    Bundle {
        base: m.clone(),
        rank: 1,
        transport,
        flat_regions: Vec::new(),
    }
}

#[test]
fn trivialize_rejects_essential_holonomy() {
    let n = 8;
    let m = cylinder(n, 2);
    let b = half_turn_ring(&m, n);
    assert_eq!(curvature(&b).unwrap().sup_norm, 0.0);
    match trivialize(&b, 0.1).unwrap() {
        TrivializeOutcome::Obstructed(o) => {
            assert_eq!(o.kind, ObstructionKind::Holonomy);
            // The witness loop carries holonomy -1: distance 2 from I.
            assert!((o.witness_value - 2.0).abs() < 1e-9);
        }
        TrivializeOutcome::Trivial(_) => panic!("-1 holonomy must obstruct"),
    }
}

#[test]
fn cutoff_profile_guards_its_invariants() {
    CutoffProfile::<f64>::standard().validate().unwrap();
    let steep = CutoffProfile {
        samples: vec![(2.0, 1.0), (2.5, 0.4), (4.0, 0.0), (6.0, 0.0)],
        slope_bound: 1.0,
    };
    assert!(steep.validate().is_err());
    let p = CutoffProfile::<f64>::standard();
    assert_eq!(p.eval(1.0), 1.0);
    assert_eq!(p.eval(2.0), 1.0);
    assert_eq!(p.eval(3.0), 0.5);
    assert_eq!(p.eval(4.0), 0.0);
    assert_eq!(p.eval(5.5), 0.0);
}

#[test]
fn collar_extend_of_a_flat_bundle_stays_flat() {
    let m = cylinder(8, 2);
    let b = trivial_bundle(&m, 2);
    let out = collar_extend(&b, &CutoffProfile::standard(), 0.01).unwrap();
    assert_eq!(curvature(&out).unwrap().sup_norm, 0.0);
    let id = identity::<f64>(2);
    for u in &out.transport {
        assert_eq!(*u, id);
    }
    let collar = out.base.collar.as_ref().unwrap();
    assert_eq!(collar.t_range, [0.0, 6.0]);
    assert_eq!(collar.layers.len(), 7);
}

#[test]
fn collar_extend_bound_and_exact_flat_end() {
    let m = cylinder_sym(8);
    let eps0 = 0.02;
    let b = flatten_collar(&perturb(&trivial_bundle(&m, 2), 0.002, 4)).unwrap();
    let delta = curvature(&b).unwrap().sup_norm;
    let out = collar_extend(&b, &CutoffProfile::standard(), eps0).unwrap();
    out.validate().unwrap();
    let sup = curvature(&out).unwrap().sup_norm;
    assert!(
        sup <= 1.05 * (delta + eps0 + eps0 * eps0),
        "extension curvature {} exceeds bound with delta {}",
        sup,
        delta
    );
    // Past the cutoff the holonomy is the identity bit-exactly.
    let id = identity::<f64>(2);
    let flat = out.base.region(FLAT_END_REGION).unwrap();
    assert!(!flat.cells[2].is_empty());
    for &p in &flat.cells[2] {
        assert_eq!(out.plaquette_holonomy(p), id);
    }
    // Layers with t > 4 carry identity transports outright.
    let out_collar = out.base.collar.as_ref().unwrap();
    assert_eq!(out_collar.t_range, [-2.0, 6.0]);
    for layer in &out_collar.layers {
        if layer.t > 4.0 {
            for &e in &layer.cells[1] {
                assert_eq!(out.transport[e], id);
            }
        }
    }
    // The restriction to the original cells is untouched.
    for e in 0..b.transport.len() {
        assert_eq!(out.transport[e], b.transport[e]);
    }
}

#[test]
fn collar_extend_rejects_steep_profiles() {
    let m = cylinder(8, 2);
    let b = trivial_bundle(&m, 1);
    let steep = CutoffProfile {
        samples: vec![(2.0, 1.0), (2.5, 0.4), (4.0, 0.0), (6.0, 0.0)],
        slope_bound: 1.0,
    };
    assert!(collar_extend(&b, &steep, 0.01).is_err());
}

#[test]
fn flatten_collar_is_idempotent_and_translation_invariant() {
    let m = cylinder_sym(6);
    let b = perturb(&trivial_bundle(&m, 2), 0.02, 9);
    let flat = flatten_collar(&b).unwrap();
    let again = flatten_collar(&flat).unwrap();
    assert_eq!(flat.transport, again.transport);
    // All layers now carry the t = 0 layer's transports.
    let collar = m.collar.as_ref().unwrap();
    let l0 = &collar.layers[collar.layer_at(0.0)];
    for layer in &collar.layers {
        for (k, &e) in layer.cells[1].iter().enumerate() {
            assert_eq!(flat.transport[e], flat.transport[l0.cells[1][k]]);
        }
    }
}

#[test]
fn flatten_collar_bounds_curvature_and_keeps_chern() {
    let t: Arc<Mesh<f64>> = Arc::new(
        gen_mesh(&GeneratorSpec::Torus2 {
            nx: 6,
            ny: 6,
            lx: 6.0,
            ly: 6.0,
        })
        .unwrap(),
    );
    let s = gen_mesh(&GeneratorSpec::CubedSphere { n: 3, radius: 1.0 }).unwrap();
    let cs = Arc::new(connected_sum(&t, &s, 0, 0).unwrap().mesh);
    for seed in 0..50 {
        let b = perturb(&trivial_bundle(&cs, 1), 0.02, seed);
        let flat = flatten_collar(&b).unwrap();
        flat.validate().unwrap();
        let before = curvature(&b).unwrap().sup_norm;
        let after = curvature(&flat).unwrap().sup_norm;
        assert!(
            after <= 4.0 * before + 1e-12,
            "seed {}: {} > 4 * {}",
            seed,
            after,
            before
        );
        let c_before = chern_densities(&b).unwrap().totals[0];
        let c_after = chern_densities(&flat).unwrap().totals[0];
        assert!((c_before - c_after).abs() < 1e-9);
    }
}

#[test]
fn certificate_constants_have_bounded_spread() {
    let m = sphere(8);
    let mut estimates = Vec::new();
    for seed in 0..20 {
        let b = perturb(&trivial_bundle(&m, 2), 0.01, seed);
        let cert = trivialize(&b, 0.05).unwrap().certificate().unwrap();
        assert!(cert.constant_estimate > 0.0);
        estimates.push(cert.constant_estimate);
    }
    let max = estimates.iter().cloned().fold(0.0, f64::max);
    let min = estimates.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        max / min <= 10.0,
        "constant spread too wide: {} / {}",
        max,
        min
    );
}
