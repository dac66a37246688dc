use karea_core::mesh::{
    collapse_map, connected_sum, covering, covering_projection_map, double, gen_mesh,
    plan_sphere_tube_surgery, plan_torus4_ring_surgery, plan_torus_band_surgery, scale_metric,
    surgery, GeneratorSpec, Mesh,
};
use std::collections::HashSet;
use std::sync::Arc;

fn torus(n: usize, l: f64) -> Mesh<f64> {
    gen_mesh(&GeneratorSpec::Torus2 {
        nx: n,
        ny: n,
        lx: l,
        ly: l,
    })
    .unwrap()
}

#[test]
fn scale_metric_scales_measures_exactly() {
    let m = torus(6, 3.0);
    let s = scale_metric(&m, 2.0).unwrap();
    assert_eq!(s.total_area(), 4.0 * m.total_area());
    assert_eq!(s.edge_length[7], 2.0 * m.edge_length[7]);
    assert_eq!(s.edges, m.edges);
}

#[test]
fn torus_covering_has_consistent_projection() {
    let base = torus(4, 2.0);
    let cov = covering(&base, &[2, 2]).unwrap();
    assert_eq!(cov.sheets, 4);
    assert_eq!(cov.total.num_vertices, 4 * base.num_vertices);
    // Every base vertex has exactly `sheets` preimages, one per sheet.
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    for v in 0..cov.total.num_vertices {
        assert!(seen.insert((cov.projection[v], cov.vertex_sheet[v])));
    }
    // Edge map respects endpoints.
    for (e, [t, h]) in cov.total.edges.iter().enumerate() {
        let be = cov.edge_map[e];
        let [bt, bh] = cov.base.edges[be];
        assert_eq!((cov.projection[*t], cov.projection[*h]), (bt, bh));
        assert_eq!(cov.total.edge_length[e], cov.base.edge_length[be]);
    }
    let map = covering_projection_map(&cov);
    assert_eq!(map.degree, 4);
}

#[test]
fn collapse_map_is_cellular_and_degree_one() {
    let m = Arc::new(torus(6, 3.0));
    let f = collapse_map(&m).unwrap();
    assert_eq!(f.degree, 1);
    assert_eq!(f.target.num_vertices, 25);
    let mut collapsed = 0usize;
    for (e, [t, h]) in m.edges.iter().enumerate() {
        match f.edge_map[e] {
            None => {
                assert_eq!(f.vertex_map[*t], f.vertex_map[*h]);
                collapsed += 1;
            }
            Some((be, sign)) => {
                let [bt, bh] = f.target.edges[be];
                let (mt, mh) = (f.vertex_map[*t], f.vertex_map[*h]);
                if sign == 1 {
                    assert_eq!((mt, mh), (bt, bh));
                } else {
                    assert_eq!((mt, mh), (bh, bt));
                }
            }
        }
    }
    // One collapsed segment per direction per circle position.
    assert_eq!(collapsed, 2 * 6);
}

#[test]
fn connected_sum_of_torus_and_sphere_is_a_torus() {
    let t = torus(6, 6.0);
    let s = gen_mesh(&GeneratorSpec::CubedSphere { n: 3, radius: 1.0 }).unwrap();
    let cs = connected_sum(&t, &s, 0, 0).unwrap();
    assert_eq!(cs.mesh.euler_characteristic(), 0);
    assert!(cs.mesh.boundary.is_empty());
    assert!(cs.mesh.regions.contains_key("M1"));
    assert!(cs.mesh.regions.contains_key("M2"));
    let collar = cs.mesh.collar.as_ref().unwrap();
    assert_eq!(collar.layers.len(), 9);
    assert_eq!(collar.t_range, [-4.0, 4.0]);
    // Summand maps hit distinct plaquettes except for the removed cells.
    let imgs: Vec<usize> = cs.m1_map[2]
        .iter()
        .chain(cs.m2_map[2].iter())
        .flatten()
        .map(|&(id, _)| id)
        .collect();
    let distinct: HashSet<usize> = imgs.iter().copied().collect();
    assert_eq!(imgs.len(), distinct.len());
    assert_eq!(imgs.len(), t.plaquettes.len() + s.plaquettes.len() - 2);
}

#[test]
fn double_of_a_disk_is_a_sphere_with_involution() {
    let d = gen_mesh(&GeneratorSpec::Disk { n: 8, radius: 1.0 }).unwrap();
    let (m, _maps) = double(&d).unwrap();
    assert_eq!(m.euler_characteristic(), 2);
    assert!(m.boundary.is_empty());
    let inv = m.involution.as_ref().unwrap();
    for v in 0..m.num_vertices {
        assert_eq!(inv[inv[v]], v);
    }
    // Fixed points are exactly the old boundary circle.
    let fixed = (0..m.num_vertices).filter(|&v| inv[v] == v).count();
    assert_eq!(fixed, 8);
}

#[test]
fn band_surgery_turns_torus_into_sphere() {
    let t = torus(8, 8.0);
    let plan = plan_torus_band_surgery(&t, 2).unwrap();
    assert_eq!((plan.p, plan.q), (1, 1));
    let out = surgery(&t, &plan).unwrap();
    assert_eq!(out.euler_characteristic(), 2);
    assert!(out.boundary.is_empty());
    assert!(out.regions.contains_key("M_prime"));
    assert!(out.regions.contains_key("X"));
    assert!(out.collar.is_some());
}

#[test]
fn tube_surgery_turns_sphere_into_torus() {
    let s = gen_mesh(&GeneratorSpec::CubedSphere { n: 3, radius: 1.0 }).unwrap();
    let plan = plan_sphere_tube_surgery(&s).unwrap();
    assert_eq!((plan.p, plan.q), (0, 2));
    let out = surgery(&s, &plan).unwrap();
    assert_eq!(out.euler_characteristic(), 0);
    assert!(out.boundary.is_empty());
    assert_eq!(out.betti1(), 2);
}

#[test]
fn ring_surgery_on_torus4_has_sphere_bundle_euler() {
    let m = gen_mesh(&GeneratorSpec::Torus4 {
        n: 4,
        length: 4.0,
    })
    .unwrap();
    let plan = plan_torus4_ring_surgery(&m).unwrap();
    assert_eq!((plan.p, plan.q), (1, 3));
    let out = surgery(&m, &plan).unwrap();
    assert!(out.boundary.is_empty());
    // chi = chi(T^4 minus S^1 x D^3) + chi(D^2 x S^2) = 0 + 2.
    assert_eq!(out.euler_characteristic(), 2);
}
