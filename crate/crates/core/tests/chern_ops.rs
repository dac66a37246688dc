use karea_core::bundle::{
    concentrated_monopole_bundle, gauge, monopole_bundle, perturb, pullback, random_gauge,
    trivial_bundle, Bundle, FluxSpec,
};
use karea_core::chern::{chern_densities, chern_number, in_k_cross, ChernPolynomial};
use karea_core::linalg::CMat;
use karea_core::mesh::{collapse_map, covering, covering_projection_map, gen_mesh, GeneratorSpec, Mesh};
use num_rational::Ratio;
use std::sync::Arc;

fn torus(n: usize, l: f64) -> Arc<Mesh<f64>> {
    Arc::new(
        gen_mesh(&GeneratorSpec::Torus2 {
            nx: n,
            ny: n,
            lx: l,
            ly: l,
        })
        .unwrap(),
    )
}

fn torus4(n: usize) -> Arc<Mesh<f64>> {
    Arc::new(
        gen_mesh(&GeneratorSpec::Torus4 {
            n,
            length: n as f64,
        })
        .unwrap(),
    )
}

#[test]
fn monopole_fluxes_give_integer_c1() {
    let sphere = Arc::new(gen_mesh(&GeneratorSpec::CubedSphere { n: 16, radius: 1.0 }).unwrap());
    let t2 = torus(16, 1.0);
    for k in -3..=3i64 {
        for base in [&sphere, &t2] {
            let b = monopole_bundle(base, &FluxSpec::Simple(k)).unwrap();
            let r = chern_densities(&b).unwrap();
            assert!(
                (r.total("c1").unwrap() - k as f64).abs() < 1e-9,
                "flux {} gave c1 {}",
                k,
                r.total("c1").unwrap()
            );
            assert!(r.integrality_residual < 1e-9);
        }
    }
}

#[test]
fn trivial_bundle_has_zero_densities() {
    let b = trivial_bundle(&torus4(3), 2);
    let r = chern_densities(&b).unwrap();
    assert!(r.densities.iter().flatten().all(|&d| d == 0.0));
    assert_eq!(r.totals, vec![0.0, 0.0]);
}

#[test]
fn torus4_product_flux_c1sq_is_exact() {
    // Clover averaging preserves plane-wise flux sums, so the product
    // structure makes c1^2 = 2 k1 k2 exact even at coarse resolution.
    let m = torus4(4);
    let b = monopole_bundle(&m, &FluxSpec::Planes(vec![((0, 1), 2), ((2, 3), 3)])).unwrap();
    let r = chern_densities(&b).unwrap();
    assert!((r.total("c1^2").unwrap() - 12.0).abs() < 1e-9);
    assert!(r.total("c2").unwrap().abs() < 1e-12); // rank 1
    let poly = ChernPolynomial::parse(4, "c1^2 - 2 c2").unwrap();
    let v = chern_number(&b, &poly).unwrap();
    assert!((v - 12.0).abs() < 1e-9);
}

#[test]
fn direct_sum_gives_c2_oracle() {
    // E = L1 (+) L2 with fluxes in transverse planes: c2 = k1 k2 and
    // c1^2 = 2 k1 k2.
    let m = torus4(4);
    let l1 = monopole_bundle(&m, &FluxSpec::Planes(vec![((0, 1), 2)])).unwrap();
    let l2 = monopole_bundle(&m, &FluxSpec::Planes(vec![((2, 3), 3)])).unwrap();
    let transport: Vec<CMat<f64>> = l1
        .transport
        .iter()
        .zip(&l2.transport)
        .map(|(a, b)| {
            let mut u = CMat::<f64>::zeros(2, 2);
            u[(0, 0)] = a[(0, 0)];
            u[(1, 1)] = b[(0, 0)];
            u
        })
        .collect();
    let e = Bundle {
        base: m.clone(),
        rank: 2,
        transport,
        flat_regions: Vec::new(),
    };
    let r = chern_densities(&e).unwrap();
    assert!((r.total("c1^2").unwrap() - 12.0).abs() < 1e-9);
    assert!((r.total("c2").unwrap() - 6.0).abs() < 1e-9);
}

#[test]
fn totals_are_gauge_invariant() {
    let m = torus(8, 1.0);
    let b = perturb(&monopole_bundle(&m, &FluxSpec::Simple(2)).unwrap(), 0.02, 3);
    let base_total = chern_densities(&b).unwrap().totals[0];
    for seed in 0..10 {
        let g = random_gauge(&m, 1, seed);
        let t = chern_densities(&gauge(&b, &g).unwrap()).unwrap().totals[0];
        assert!((t - base_total).abs() < 1e-10);
    }
}

#[test]
fn pullback_scales_totals_by_degree() {
    let base = torus(8, 1.0);
    let b = monopole_bundle(&base, &FluxSpec::Simple(1)).unwrap();
    let cov = covering(&base, &[2, 2]).unwrap();
    let f = covering_projection_map(&cov);
    let up = pullback(&b, &f).unwrap();
    let t = chern_densities(&up).unwrap().totals[0];
    assert!((t - 4.0).abs() < 1e-8);

    // Degree-1 collapse map: bundle flat on the collapsed block keeps c1.
    let big = torus(9, 4.5);
    let small = {
        let f = collapse_map(&big).unwrap();
        f
    };
    let down = concentrated_monopole_bundle(&small.target, &FluxSpec::Simple(1)).unwrap();
    let pulled = pullback(&down, &small).unwrap();
    let t = chern_densities(&pulled).unwrap().totals[0];
    assert!((t - 1.0).abs() < 1e-8);
}

#[test]
fn parser_accepts_the_documented_grammar() {
    let p = ChernPolynomial::parse(4, "3/2 c1^2 + c2 - 2 c2").unwrap();
    assert_eq!(
        p.terms,
        vec![
            ("c1^2".into(), Ratio::new(3, 2)),
            ("c2".into(), Ratio::from_integer(1)),
            ("c2".into(), Ratio::from_integer(-2)),
        ]
    );
    assert!(ChernPolynomial::parse(2, "c2").is_err());
    assert!(ChernPolynomial::parse(2, "nonsense").is_err());
    let zero = ChernPolynomial::parse(2, "0").unwrap();
    let b = trivial_bundle(&torus(4, 1.0), 1);
    assert_eq!(chern_number(&b, &zero).unwrap(), 0.0);
}

#[test]
fn k_cross_verdicts() {
    let sphere = Arc::new(gen_mesh(&GeneratorSpec::CubedSphere { n: 8, radius: 1.0 }).unwrap());
    let mono = monopole_bundle(&sphere, &FluxSpec::Simple(1)).unwrap();
    let v = in_k_cross(&mono, 1e-6).unwrap();
    assert!(v.admissible);
    assert_eq!(v.witness, Some("c1"));

    let triv = trivial_bundle(&sphere, 1);
    let v = in_k_cross(&triv, 1e-6).unwrap();
    assert!(!v.admissible);
    assert!(v.flat_regions_ok);

    // A flagged-flat region that is actually curved fails condition (i).
    let mut curved = mono.clone();
    let mut base = (*sphere).clone();
    let mut all = karea_core::mesh::CellSet::new();
    for p in 0..base.plaquettes.len() {
        all.insert(2, p);
    }
    base.regions.insert("everything".into(), all);
    curved.base = Arc::new(base);
    curved.flat_regions = vec!["everything".into()];
    let v = in_k_cross(&curved, 1e-6).unwrap();
    assert!(!v.flat_regions_ok);
    assert!(!v.admissible);
}
