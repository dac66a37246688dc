//! Acceptance suite: one test per release criterion, each printing a
//! `criterion NN PASS` line on success (run with `--nocapture` to see the
//! lines for passing tests).

use karea_core::bundle::{
    concentrated_monopole_bundle, curvature, direct_image, gauge, monopole_bundle, perturb,
    random_gauge, trivial_bundle, Bundle, FluxSpec,
};
use karea_core::chern::chern_densities;
use karea_core::experiments::surgery_bookkeeping_experiment;
use karea_core::karea::{minimize_curvature, scaling_experiment, OptimizerConfig};
use karea_core::linalg::identity;
use karea_core::mesh::{connected_sum, covering, gen_mesh, scale_metric, GeneratorSpec, Mesh};
use karea_core::surgery::{collapse_map_pullback, transplant_sum, TransplantOutcome};
use karea_core::trivialize::{
    calibrate_constant, collar_extend, flatten_collar, trivialize, CutoffProfile, ObstructionKind,
    TrivializeOutcome,
};
use nalgebra::Complex;
use std::f64::consts::TAU;
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

fn sphere(n: usize) -> Arc<Mesh<f64>> {
    Arc::new(gen_mesh(&GeneratorSpec::CubedSphere { n, radius: 1.0 }).unwrap())
}

fn cylinder(n: usize, t0: f64, t1: f64, levels: usize) -> Arc<Mesh<f64>> {
    Arc::new(
        gen_mesh(&GeneratorSpec::Cylinder {
            n,
            radius: n as f64 / TAU,
            t0,
            t1,
            levels,
        })
        .unwrap(),
    )
}

/// Writes flat phase e^{i dir 2 pi w / len} on every collar copy of each
/// slice circle, giving holonomy e^{2 pi i w} around the cut.
fn ring_holonomy_bundle(m: &Arc<Mesh<f64>>, winding: f64) -> Bundle<f64> {
    let mut b = trivial_bundle(m, 1);
    b.flat_regions.clear();
    let collar = m.collar.as_ref().expect("mesh must carry a collar");
    let slice = &collar.slice;
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
            let dir = if m.edges[e] == [va, vh] {
                1.0
            } else {
                assert_eq!(m.edges[e], [vh, va]);
                -1.0
            };
            let th = dir * winding * TAU / circle_len(k) as f64;
            let mut u = identity::<f64>(1);
            u[(0, 0)] = Complex::new(th.cos(), th.sin());
            b.transport[e] = u;
        }
    }
    b.validate().unwrap();
    b
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
            if karea_core::linalg::fro_norm(&(b.plaquette_holonomy(p) - &idm)) > 1e-12 {
                continue 'cells;
            }
        }
        return c;
    }
    panic!("no flat top cell found");
}

#[test]
fn criterion_01_chern_integrality() {
    for mesh in [sphere(16), torus2(16)] {
        for k in -3i64..=3 {
            let b = monopole_bundle(&mesh, &FluxSpec::Simple(k)).unwrap();
            let rep = chern_densities(&b).unwrap();
            assert!(
                (rep.totals[0] - k as f64).abs() <= 1e-9,
                "flux {} reported c1 {}",
                k,
                rep.totals[0]
            );
        }
    }
    println!("criterion 01 PASS: monopole c1 = k within 1e-9 for k in -3..=3 on S2(16) and T2(16)");
}

#[test]
fn criterion_02_curvature_oracle() {
    let mut errs = Vec::new();
    for n in [8usize, 16, 32] {
        let m = sphere(n);
        let b = monopole_bundle(&m, &FluxSpec::Simple(1)).unwrap();
        let sup = curvature(&b).unwrap().sup_norm;
        errs.push((n, (sup - 0.5).abs()));
    }
    assert!(errs[1].1 < errs[0].1 && errs[2].1 < errs[1].1, "errors {:?}", errs);
    for (n, e) in &errs[1..] {
        assert!(*e <= 0.02 * 0.5, "N={} error {}", n, e);
    }
    println!(
        "criterion 02 PASS: flux-1 sup norm within 2% of 0.5 on the unit sphere for N >= 16, \
         errors {:.2e}/{:.2e}/{:.2e} decreasing over N = 8/16/32",
        errs[0].1, errs[1].1, errs[2].1
    );
}

#[test]
fn criterion_03_metric_scaling() {
    let m = torus2(8);
    let scaled = Arc::new(scale_metric(&m, 2.0).unwrap());
    let b0 = monopole_bundle(&m, &FluxSpec::Simple(1)).unwrap();
    for seed in 0..20 {
        let b = perturb(&b0, 0.05, seed);
        let mut bs = b.clone();
        bs.base = scaled.clone();
        let s0 = curvature(&b).unwrap().sup_norm;
        let s1 = curvature(&bs).unwrap().sup_norm;
        assert_eq!(s1, s0 / 4.0, "seed {}", seed);
    }
    let rep = scaling_experiment(&m, 2.0, (1, FluxSpec::Simple(1)), &OptimizerConfig::default())
        .unwrap();
    assert!(
        ((rep.ratio - 4.0) / 4.0).abs() <= 1e-3,
        "bound ratio {}",
        rep.ratio
    );
    println!(
        "criterion 03 PASS: c = 2 rescale divides the sup norm by 4 bit-exactly on 20 random \
         bundles and multiplies the optimizer bound by {:.6}",
        rep.ratio
    );
}

#[test]
fn criterion_04_covering_experiment() {
    let rep = karea_core::karea::covering_experiment(
        &torus2(8),
        &[2, 2],
        (1, FluxSpec::Simple(1)),
        &OptimizerConfig::default(),
    )
    .unwrap();
    assert!(
        ((rep.ratio - 4.0) / 4.0).abs() <= 0.01,
        "covering ratio {}",
        rep.ratio
    );
    let cov = covering(&torus2(6), &[2, 2]).unwrap();
    let b0 = monopole_bundle(&cov.total, &FluxSpec::Simple(1)).unwrap();
    for seed in 0..100 {
        let b = perturb(&b0, 0.2, seed);
        let up = curvature(&b).unwrap().sup_norm;
        let down = curvature(&direct_image(&b, &cov).unwrap()).unwrap().sup_norm;
        assert!(down <= up + 1e-12, "seed {}: {} > {}", seed, down, up);
    }
    println!(
        "criterion 04 PASS: (2,2) covering bound ratio {:.4} within 1% of 4; direct-image \
         curvature monotone on 100 random inputs",
        rep.ratio
    );
}

#[test]
fn criterion_05_trivialization() {
    let m = sphere(8);
    // (a) flat bundles trivialize to residual <= 1e-10.
    let mut worst_flat = 0.0f64;
    for seed in 0..4 {
        let b = gauge(&trivial_bundle(&m, 2), &random_gauge(&m, 2, seed)).unwrap();
        let cert = trivialize(&b, 0.5).unwrap().certificate().unwrap();
        worst_flat = worst_flat.max(cert.residual);
    }
    assert!(worst_flat <= 1e-10, "flat residual {}", worst_flat);

    // (b) residual <= C_mesh * delta over 50 perturbed-flat inputs whose
    // measured sup norms land around 0.005 / 0.01 / 0.02, with bounded
    // spread of the per-input constants.
    let c_mesh = calibrate_constant(&m, 1, 0.01, 0..8).unwrap();
    let base = trivial_bundle(&m, 1);
    let amplitudes = [4.0e-5, 8.0e-5, 1.6e-4];
    let (mut cmin, mut cmax) = (f64::INFINITY, 0.0f64);
    let mut count = 0;
    'outer: for seed in 0.. {
        for (i, &a) in amplitudes.iter().enumerate() {
            let b = perturb(&base, a, 3000 + seed + ((i as u64) << 9));
            let delta = curvature(&b).unwrap().sup_norm;
            let cert = trivialize(&b, 1.0).unwrap().certificate().unwrap();
            assert!(
                cert.residual <= c_mesh * delta,
                "residual {} exceeds {} * {}",
                cert.residual,
                c_mesh,
                delta
            );
            cmin = cmin.min(cert.constant_estimate);
            cmax = cmax.max(cert.constant_estimate);
            count += 1;
            if count == 50 {
                break 'outer;
            }
        }
    }
    assert!(cmax / cmin <= 10.0, "constant spread {}", cmax / cmin);

    // (c) flux and circle-holonomy obstructions.
    let mono = monopole_bundle(&m, &FluxSpec::Simple(1)).unwrap();
    match trivialize(&mono, 0.5).unwrap() {
        TrivializeOutcome::Obstructed(o) => assert_eq!(o.kind, ObstructionKind::NonzeroChern),
        TrivializeOutcome::Trivial(_) => panic!("monopole must obstruct"),
    }
    let cyl = cylinder(8, 0.0, 4.0, 4);
    let minus_one = ring_holonomy_bundle(&cyl, 0.5);
    assert_eq!(curvature(&minus_one).unwrap().sup_norm, 0.0);
    match trivialize(&minus_one, 0.5).unwrap() {
        TrivializeOutcome::Obstructed(o) => assert_eq!(o.kind, ObstructionKind::Holonomy),
        TrivializeOutcome::Trivial(_) => panic!("-1 holonomy must obstruct"),
    }
    println!(
        "criterion 05 PASS: flat residual {:.1e} <= 1e-10; 50 perturbed inputs obey residual <= \
         C*delta with C = {:.3} and spread {:.2} <= 10; monopole and -1 holonomy both obstructed",
        worst_flat,
        c_mesh,
        cmax / cmin
    );
}

#[test]
fn criterion_06_collar_extension_bound() {
    let m = cylinder(8, -2.0, 2.0, 4);
    let eps0 = 0.05;
    let profile = CutoffProfile::standard();
    let id = identity::<f64>(2);
    let mut worst_margin = 0.0f64;
    for seed in 0..50 {
        let amp = [0.0005, 0.001, 0.002][(seed % 3) as usize];
        let b = flatten_collar(&perturb(&trivial_bundle(&m, 2), amp, seed)).unwrap();
        let delta = curvature(&b).unwrap().sup_norm;
        assert!(delta <= 0.02, "input delta {}", delta);
        let out = collar_extend(&b, &profile, eps0).unwrap();
        let sup = curvature(&out).unwrap().sup_norm;
        let bound = 1.05 * (delta + eps0 + eps0 * eps0);
        assert!(sup <= bound, "seed {}: {} > {}", seed, sup, bound);
        worst_margin = worst_margin.max(sup / bound);
        let collar = out.base.collar.as_ref().unwrap();
        for layer in &collar.layers {
            if layer.t > 4.0 {
                for &e in &layer.cells[1] {
                    assert_eq!(out.transport[e], id);
                }
            }
        }
    }
    println!(
        "criterion 06 PASS: 50 collar extensions stay under 1.05*(delta + eps0 + eps0^2) \
         (worst fill {:.2}) with bit-exact flat transports past t = 4",
        worst_margin
    );
}

#[test]
fn criterion_07_surgery_bookkeeping_2d() {
    let rep = surgery_bookkeeping_experiment::<f64>(12, 0..2).unwrap();
    assert!(
        rep.identity_residual <= 1e-6,
        "identity residual {}",
        rep.identity_residual
    );
    let ds = rep.delta_star.expect("scan must find a threshold");
    assert!(ds > 0.0);
    assert!(rep.pass, "sub-threshold corpus bundles must have |c1| <= 1e-6");
    println!(
        "criterion 07 PASS: T2 band-surgery transplant closes the integral table to {:.1e} and \
         the scan finds delta* = {:.4} > 0 with trivial sub-threshold sectors",
        rep.identity_residual, ds
    );
}

#[test]
fn criterion_08_surgery_bookkeeping_4d() {
    let m1 = Arc::new(gen_mesh(&GeneratorSpec::Torus4 { n: 4, length: 4.0 }).unwrap());
    let m2 = Arc::new(gen_mesh(&GeneratorSpec::Torus4 { n: 4, length: 4.0 }).unwrap());
    let fluxes = FluxSpec::Planes(vec![((0, 1), 1), ((2, 3), 1)]);
    let b1 = concentrated_monopole_bundle(&m1, &fluxes).unwrap();
    let cell = flat_top_cell(&b1);
    let sum = connected_sum(&m1, &m2, cell, cell).unwrap();
    let b = collapse_map_pullback(&b1, &sum).unwrap();
    let rep = chern_densities(&b).unwrap();
    // c1^2 total of the (1,1) two-plane flux is 2; 2% integrality budget.
    assert!((rep.totals[0] - 2.0).abs() <= 0.02 * 2.0, "c1^2 {}", rep.totals[0]);
    let res = match transplant_sum(&b, 1e-6).unwrap() {
        TransplantOutcome::Done(r) => r,
        TransplantOutcome::Obstructed(o) => panic!("unexpected obstruction {:?}", o.kind),
    };
    assert!(
        res.identity_residual <= 1e-4,
        "identity residual {}",
        res.identity_residual
    );
    println!(
        "criterion 08 PASS: T4(4) # T4(4) two-flux transplant closes the c1^2 table to {:.1e} \
         with total {:.4} within 2% of 2",
        res.identity_residual, rep.totals[0]
    );
}

#[test]
fn criterion_09_optimizer_recovery() {
    let m = torus2(12);
    let b0 = monopole_bundle(&m, &FluxSpec::Simple(1)).unwrap();
    let oracle = TAU / 144.0; // 2 pi / area
    let cfg = OptimizerConfig {
        max_iters: 5000,
        ..OptimizerConfig::default()
    };
    for seed in [3u64, 7, 11] {
        let est = minimize_curvature(&perturb(&b0, 0.1, seed), &cfg).unwrap();
        assert!(
            (est.sup_norm - oracle).abs() <= 0.01 * oracle,
            "seed {}: sup {} vs {} after {} iterations",
            seed,
            est.sup_norm,
            oracle,
            est.iterations
        );
        assert!(est.iterations <= 5000);
        for w in est.trace.windows(2) {
            assert!(w[1] <= w[0], "objective increased {} -> {}", w[0], w[1]);
        }
        // Zero sector escapes: the run returned Ok and the end totals
        // still round to the starting integers.
        for (t, k) in est.sector_end.iter().zip(&est.sector) {
            assert!((t - *k as f64).abs() <= 1e-6);
        }
    }
    println!(
        "criterion 09 PASS: amplitude-0.1 starts recover the uniform T2 optimum within 1% of \
         2*pi/A monotonically, without sector escapes, in <= 5000 iterations"
    );
}

#[test]
fn criterion_10_q2_negative_control() {
    let m1 = torus2(6);
    let m2 = torus2(6);
    let sum = Arc::new(connected_sum(&m1, &m2, 0, 0).unwrap().mesh);
    for (i, winding) in [0.5, 0.25, 0.37].iter().enumerate() {
        let b = ring_holonomy_bundle(&sum, *winding);
        match transplant_sum(&b, 0.5).unwrap() {
            TransplantOutcome::Obstructed(o) => assert!(
                matches!(
                    o.kind,
                    ObstructionKind::NotSimplyConnected | ObstructionKind::Holonomy
                ),
                "case {}: unexpected kind {:?}",
                i,
                o.kind
            ),
            TransplantOutcome::Done(_) => {
                panic!("case {}: non-identity cut holonomy must obstruct", i)
            }
        }
    }
    println!(
        "criterion 10 PASS: connected-sum transplants across a holonomy-carrying circle always \
         return an obstruction, never a certificate"
    );
}
