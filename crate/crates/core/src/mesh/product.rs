//! Product complexes with Koszul-signed boundaries, and the collar-building
//! slice-times-path product.

use super::{Collar, CollarLayer, Mesh, SignedCell, SliceTopology};
use crate::error::{KareaError, Result};
use crate::scalar::{sc, Scalar};
use std::collections::HashMap;

/// Id lookup for product cells: (dim_a, id_a, dim_b, id_b) -> product id.
#[derive(Clone, Debug, Default)]
pub struct ProductLayout {
    map: HashMap<(usize, usize, usize, usize), usize>,
}

impl ProductLayout {
    pub fn id(&self, da: usize, ida: usize, db: usize, idb: usize) -> usize {
        self.map[&(da, ida, db, idb)]
    }

    pub fn get(&self, da: usize, ida: usize, db: usize, idb: usize) -> Option<usize> {
        self.map.get(&(da, ida, db, idb)).copied()
    }
}

fn measure<S: Scalar>(m: &Mesh<S>, dim: usize, id: usize) -> S {
    match dim {
        0 => S::one(),
        1 => m.edge_length[id],
        2 => m.plaquette_area[id],
        3 => m.cell3_volume[id],
        _ => m.cell4_volume[id],
    }
}

/// Cartesian product of two complexes (total dimension at most 4).
pub fn product<S: Scalar>(a: &Mesh<S>, b: &Mesh<S>) -> Result<(Mesh<S>, ProductLayout)> {
    let dim = a.dim + b.dim;
    if dim > 4 {
        return Err(KareaError::Config(
            "product dimension exceeds 4".into(),
        ));
    }
    let mut layout = ProductLayout::default();
    let mut out = Mesh::empty(dim);

    // Vertices.
    for va in 0..a.num_vertices {
        for vb in 0..b.num_vertices {
            layout.map.insert((0, va, 0, vb), va * b.num_vertices + vb);
        }
    }
    out.num_vertices = a.num_vertices * b.num_vertices;

    // Cells of each product dimension, grouped by (da, db) with da
    // ascending; the group order fixes the ids.
    for d in 1..=dim {
        for da in (d.saturating_sub(b.dim))..=d.min(a.dim) {
            let db = d - da;
            for ida in 0..a.cell_count(da) {
                for idb in 0..b.cell_count(db) {
                    let id = push_product_cell(&mut out, a, b, &layout, da, ida, db, idb)?;
                    layout.map.insert((da, ida, db, idb), id);
                }
            }
        }
    }
    out.boundary = out.compute_boundary();
    Ok((out, layout))
}

#[allow(clippy::too_many_arguments)]
fn push_product_cell<S: Scalar>(
    out: &mut Mesh<S>,
    a: &Mesh<S>,
    b: &Mesh<S>,
    layout: &ProductLayout,
    da: usize,
    ida: usize,
    db: usize,
    idb: usize,
) -> Result<usize> {
    let d = da + db;
    let m = measure(a, da, ida) * measure(b, db, idb);
    match d {
        1 => {
            let [t, h] = if da == 1 {
                let [t, h] = a.edges[ida];
                [layout.id(0, t, 0, idb), layout.id(0, h, 0, idb)]
            } else {
                let [t, h] = b.edges[idb];
                [layout.id(0, ida, 0, t), layout.id(0, ida, 0, h)]
            };
            out.edges.push([t, h]);
            out.edge_length.push(m);
            Ok(out.edges.len() - 1)
        }
        2 => {
            let cycle = match (da, db) {
                (2, 0) => a.plaquettes[ida]
                    .iter()
                    .map(|f| SignedCell::new(layout.id(1, f.id, 0, idb), f.sign))
                    .collect(),
                (0, 2) => b.plaquettes[idb]
                    .iter()
                    .map(|f| SignedCell::new(layout.id(0, ida, 1, f.id), f.sign))
                    .collect(),
                (1, 1) => {
                    let [at, ah] = a.edges[ida];
                    let [bt, bh] = b.edges[idb];
                    vec![
                        SignedCell::new(layout.id(1, ida, 0, bt), 1),
                        SignedCell::new(layout.id(0, ah, 1, idb), 1),
                        SignedCell::new(layout.id(1, ida, 0, bh), -1),
                        SignedCell::new(layout.id(0, at, 1, idb), -1),
                    ]
                }
                _ => unreachable!(),
            };
            out.plaquettes.push(cycle);
            out.plaquette_area.push(m);
            Ok(out.plaquettes.len() - 1)
        }
        3 | 4 => {
            // Koszul: d(ca x cb) = (d ca) x cb + (-1)^da ca x (d cb).
            let mut faces = Vec::new();
            for f in a.boundary_of(da, ida) {
                faces.push(SignedCell::new(layout.id(da - 1, f.id, db, idb), f.sign));
            }
            let koszul: i8 = if da % 2 == 0 { 1 } else { -1 };
            for f in b.boundary_of(db, idb) {
                faces.push(SignedCell::new(
                    layout.id(da, ida, db - 1, f.id),
                    f.sign * koszul,
                ));
            }
            if d == 3 {
                out.cells3.push(faces);
                out.cell3_volume.push(m);
                Ok(out.cells3.len() - 1)
            } else {
                out.cells4.push(faces);
                out.cell4_volume.push(m);
                Ok(out.cells4.len() - 1)
            }
        }
        _ => unreachable!(),
    }
}

/// Metric data of a collar cross-section, by dimension.
#[derive(Clone, Debug)]
pub struct SliceMetric<S: Scalar> {
    pub edge_length: Vec<S>,
    pub plaquette_area: Vec<S>,
    pub cell3_volume: Vec<S>,
}

impl<S: Scalar> SliceMetric<S> {
    pub fn of(m: &Mesh<S>) -> Self {
        SliceMetric {
            edge_length: m.edge_length.clone(),
            plaquette_area: m.plaquette_area.clone(),
            cell3_volume: m.cell3_volume.clone(),
        }
    }

    fn get(&self, dim: usize, id: usize) -> S {
        match dim {
            1 => self.edge_length[id],
            2 => self.plaquette_area[id],
            _ => self.cell3_volume[id],
        }
    }
}

/// Product of a slice with a path of t-levels; installs the collar
/// structure. If end metrics are given, layer metrics interpolate linearly
/// between them along t.
pub fn product_with_path<S: Scalar>(
    slice: &Mesh<S>,
    ts: &[S],
    end_metrics: Option<(&SliceMetric<S>, &SliceMetric<S>)>,
) -> Result<(Mesh<S>, ProductLayout)> {
    if ts.len() < 2 {
        return Err(KareaError::Config("collar needs at least two t-levels".into()));
    }
    for w in ts.windows(2) {
        if w[1] <= w[0] {
            return Err(KareaError::Config("t-levels must increase".into()));
        }
    }
    let levels = ts.len() - 1;
    let mut path = Mesh::empty(1);
    path.num_vertices = levels + 1;
    for i in 0..levels {
        path.edges.push([i, i + 1]);
        path.edge_length.push(ts[i + 1] - ts[i]);
    }
    path.boundary = path.compute_boundary();
    let (mut mesh, layout) = product(slice, &path)?;

    if let Some((m0, m1)) = end_metrics {
        let span = ts[levels] - ts[0];
        let alpha: Vec<S> = ts.iter().map(|&t| (t - ts[0]) / span).collect();
        let lerp = |d: usize, k: usize, al: S| -> S {
            m0.get(d, k) * (S::one() - al) + m1.get(d, k) * al
        };
        for d in 1..=slice.dim {
            for k in 0..slice.cell_count(d) {
                for (i, &al) in alpha.iter().enumerate() {
                    let id = layout.id(d, k, 0, i);
                    let v = lerp(d, k, al);
                    match d {
                        1 => mesh.edge_length[id] = v,
                        2 => mesh.plaquette_area[id] = v,
                        _ => mesh.cell3_volume[id] = v,
                    }
                }
            }
        }
        // Vertical cells: average of the two layer measures times dt.
        for d in 0..=slice.dim.min(3) {
            for k in 0..slice.cell_count(d) {
                for i in 0..levels {
                    let id = layout.id(d, k, 1, i);
                    let dt = ts[i + 1] - ts[i];
                    let avg = if d == 0 {
                        S::one()
                    } else {
                        (lerp(d, k, alpha[i]) + lerp(d, k, alpha[i + 1])) / sc::<S>(2.0)
                    };
                    let v = avg * dt;
                    match d {
                        0 => mesh.edge_length[id] = v,
                        1 => mesh.plaquette_area[id] = v,
                        2 => mesh.cell3_volume[id] = v,
                        _ => mesh.cell4_volume[id] = v,
                    }
                }
            }
        }
    }

    let mut layers = Vec::with_capacity(ts.len());
    for (i, &t) in ts.iter().enumerate() {
        let mut cells: [Vec<usize>; 4] = Default::default();
        let mut vertical: [Vec<usize>; 4] = Default::default();
        for d in 0..=slice.dim {
            for k in 0..slice.cell_count(d) {
                cells[d].push(layout.id(d, k, 0, i));
                if i < levels {
                    vertical[d].push(layout.id(d, k, 1, i));
                }
            }
        }
        layers.push(CollarLayer { t, cells, vertical });
    }
    mesh.collar = Some(Collar {
        slice: SliceTopology {
            dim: slice.dim,
            num_vertices: slice.num_vertices,
            edges: slice.edges.clone(),
            plaquettes: slice.plaquettes.clone(),
            cells3: slice.cells3.clone(),
            edge_length: slice.edge_length.clone(),
            plaquette_area: slice.plaquette_area.clone(),
            cell3_volume: slice.cell3_volume.clone(),
        },
        layers,
        t_range: [ts[0], ts[levels]],
    });
    Ok((mesh, layout))
}
