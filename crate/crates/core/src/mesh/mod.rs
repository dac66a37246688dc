//! Oriented cell complexes (dims 0..4) with piecewise-flat metric data,
//! named regions, and product collars.
//!
//! Combinatorics and metric are carried explicitly: edge lengths and
//! plaquette areas are stored rather than derived from an embedding, so
//! metric scaling laws hold bit-exactly.

mod assemble;
mod extract;
mod generators;
mod iso;
mod ops;
mod product;

pub use assemble::{MeshAssembler, PieceFinalMap};
pub use extract::{build_from_cells, extract_boundary_complex, extract_subcomplex, ExtractMaps};
pub use generators::{gen_mesh, GeneratorSpec};
pub use iso::find_isomorphism;
pub(crate) use generators::BoxIndexer;
pub(crate) use ops::{
    cut_at, glue_with_flip_retry, metric_through_iso, region_from_piece, remap_collar,
};
pub(crate) use product::SliceMetric;
pub use ops::{
    collapse_map, connected_sum, covering, covering_projection_map, double, identity_map,
    plan_sphere_tube_surgery, plan_torus4_ring_surgery, plan_torus_band_surgery, scale_metric,
    surgery, ConnectedSum, CoveringMap, CutPiece, MeshMap, SurgeryPlan,
};
pub use product::{product, product_with_path, ProductLayout};

use crate::error::{KareaError, Result};
use crate::scalar::{sc, Scalar};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// A face reference with an orientation sign (+1/-1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedCell {
    pub id: usize,
    pub sign: i8,
}

impl SignedCell {
    pub fn new(id: usize, sign: i8) -> Self {
        SignedCell { id, sign }
    }
}

/// Subset of cells, organized by dimension.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSet {
    pub cells: [BTreeSet<usize>; 5],
}

impl CellSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, dim: usize, id: usize) {
        self.cells[dim].insert(id);
    }

    pub fn contains(&self, dim: usize, id: usize) -> bool {
        self.cells[dim].contains(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(|s| s.is_empty())
    }

    pub fn len(&self) -> usize {
        self.cells.iter().map(|s| s.len()).sum()
    }
}

/// Provenance of a generated mesh, used by operations that need the
/// generator's global structure (e.g. torus coverings).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub enum Generator<S: Scalar> {
    Torus { dims: Vec<usize>, lengths: Vec<S> },
    CubedSphere { n: usize, radius: S },
    Other,
}

/// Combinatorics of a collar cross-section in local indices.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct SliceTopology<S: Scalar> {
    pub dim: usize,
    pub num_vertices: usize,
    pub edges: Vec<[usize; 2]>,
    pub plaquettes: Vec<Vec<SignedCell>>,
    pub cells3: Vec<Vec<SignedCell>>,
    pub edge_length: Vec<S>,
    pub plaquette_area: Vec<S>,
    pub cell3_volume: Vec<S>,
}

/// One t-level of a collar: mesh ids of the layer's copies of the slice
/// cells, and of the prisms connecting it to the next layer.
///
/// `cells[d][k]` is the mesh id of the layer copy of slice cell `k` of
/// dimension `d`; `vertical[d][k]` is the mesh id of the (d+1)-dimensional
/// prism over slice cell `k` towards the next layer (empty on the last
/// layer).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct CollarLayer<S: Scalar> {
    pub t: S,
    pub cells: [Vec<usize>; 4],
    pub vertical: [Vec<usize>; 4],
}

/// Product collar `N x {t-levels}` with translation-isomorphic layers.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct Collar<S: Scalar> {
    pub slice: SliceTopology<S>,
    pub layers: Vec<CollarLayer<S>>,
    pub t_range: [S; 2],
}

impl<S: Scalar> Collar<S> {
    /// Index of the layer whose t is closest to the given value.
    pub fn layer_at(&self, t: S) -> usize {
        let mut best = 0;
        let mut best_d = sc::<S>(f64::MAX);
        for (i, l) in self.layers.iter().enumerate() {
            let d = (l.t - t).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Per-4-cell metadata for lattice Chern-Weil evaluation: for each of the
/// six coordinate planes, the four clover loops based at the cell's base
/// vertex. Loops are stored as ordered signed edge sequences.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Cell4Planes {
    pub base_vertex: usize,
    /// Plane order: (0,1), (0,2), (0,3), (1,2), (1,3), (2,3).
    pub planes: [[Vec<SignedCell>; 4]; 6],
}

/// Oriented cell complex with metric data.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct Mesh<S: Scalar> {
    pub version: u32,
    pub dim: usize,
    pub num_vertices: usize,
    /// Oriented edges, stored once per unoriented edge as [tail, head].
    pub edges: Vec<[usize; 2]>,
    /// Ordered signed edge cycles of length 3 or 4.
    pub plaquettes: Vec<Vec<SignedCell>>,
    pub cells3: Vec<Vec<SignedCell>>,
    pub cells4: Vec<Vec<SignedCell>>,
    pub edge_length: Vec<S>,
    pub plaquette_area: Vec<S>,
    pub cell3_volume: Vec<S>,
    pub cell4_volume: Vec<S>,
    pub regions: BTreeMap<String, CellSet>,
    pub boundary: CellSet,
    pub collar: Option<Collar<S>>,
    #[serde(default)]
    pub cell4_planes: Vec<Option<Cell4Planes>>,
    pub generator: Option<Generator<S>>,
    /// Vertex involution recorded by `double`.
    pub involution: Option<Vec<usize>>,
}

impl<S: Scalar> Mesh<S> {
    pub(crate) fn empty(dim: usize) -> Self {
        Mesh {
            version: 1,
            dim,
            num_vertices: 0,
            edges: Vec::new(),
            plaquettes: Vec::new(),
            cells3: Vec::new(),
            cells4: Vec::new(),
            edge_length: Vec::new(),
            plaquette_area: Vec::new(),
            cell3_volume: Vec::new(),
            cell4_volume: Vec::new(),
            regions: BTreeMap::new(),
            boundary: CellSet::new(),
            collar: None,
            cell4_planes: Vec::new(),
            generator: None,
            involution: None,
        }
    }

    pub fn cell_count(&self, dim: usize) -> usize {
        match dim {
            0 => self.num_vertices,
            1 => self.edges.len(),
            2 => self.plaquettes.len(),
            3 => self.cells3.len(),
            4 => self.cells4.len(),
            _ => 0,
        }
    }

    pub fn top_dim_cells(&self) -> usize {
        self.cell_count(self.dim)
    }

    /// Signed boundary faces of a cell (dim >= 1).
    pub fn boundary_of(&self, dim: usize, id: usize) -> Vec<SignedCell> {
        match dim {
            1 => vec![
                SignedCell::new(self.edges[id][1], 1),
                SignedCell::new(self.edges[id][0], -1),
            ],
            2 => self.plaquettes[id].clone(),
            3 => self.cells3[id].clone(),
            4 => self.cells4[id].clone(),
            _ => Vec::new(),
        }
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.num_vertices as i64 - self.edges.len() as i64 + self.plaquettes.len() as i64
            - self.cells3.len() as i64
            + self.cells4.len() as i64
    }

    pub fn total_area(&self) -> S {
        crate::scalar::kahan_sum(self.plaquette_area.iter().copied())
    }

    /// Ordered vertex cycle of a plaquette, starting at the tail of its
    /// first (sign-adjusted) edge.
    pub fn plaquette_vertices(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for sc in &self.plaquettes[id] {
            let [t, h] = self.edges[sc.id];
            out.push(if sc.sign > 0 { t } else { h });
        }
        out
    }

    /// Vertices incident to a cell of any dimension.
    pub fn cell_vertices(&self, dim: usize, id: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        match dim {
            0 => {
                out.insert(id);
            }
            1 => {
                out.insert(self.edges[id][0]);
                out.insert(self.edges[id][1]);
            }
            _ => {
                for f in self.boundary_of(dim, id) {
                    out.extend(self.cell_vertices(dim - 1, f.id));
                }
            }
        }
        out
    }

    /// Checks every structural invariant: cycle closure of plaquettes,
    /// boundary-of-boundary zero for 3- and 4-cells, positive metric, and
    /// matching array lengths.
    pub fn validate(&self) -> Result<()> {
        if self.edge_length.len() != self.edges.len() {
            return Err(KareaError::Invariant("edge_length length mismatch".into()));
        }
        if self.plaquette_area.len() != self.plaquettes.len() {
            return Err(KareaError::Invariant(
                "plaquette_area length mismatch".into(),
            ));
        }
        if self.cell3_volume.len() != self.cells3.len()
            || self.cell4_volume.len() != self.cells4.len()
        {
            return Err(KareaError::Invariant("cell volume length mismatch".into()));
        }
        for (i, l) in self.edge_length.iter().enumerate() {
            if *l <= S::zero() {
                return Err(KareaError::Invariant(format!(
                    "edge {} has non-positive length",
                    i
                )));
            }
        }
        for (i, a) in self.plaquette_area.iter().enumerate() {
            if *a <= S::zero() {
                return Err(KareaError::Invariant(format!(
                    "plaquette {} has non-positive area",
                    i
                )));
            }
        }
        for (e, [t, h]) in self.edges.iter().enumerate() {
            if *t >= self.num_vertices || *h >= self.num_vertices {
                return Err(KareaError::Invariant(format!(
                    "edge {} references missing vertex",
                    e
                )));
            }
        }
        for (p, cycle) in self.plaquettes.iter().enumerate() {
            if cycle.len() < 3 || cycle.len() > 4 {
                return Err(KareaError::Invariant(format!(
                    "plaquette {} has cycle length {}",
                    p,
                    cycle.len()
                )));
            }
            let n = cycle.len();
            for k in 0..n {
                let cur = &cycle[k];
                let nxt = &cycle[(k + 1) % n];
                let cur_head = if cur.sign > 0 {
                    self.edges[cur.id][1]
                } else {
                    self.edges[cur.id][0]
                };
                let nxt_tail = if nxt.sign > 0 {
                    self.edges[nxt.id][0]
                } else {
                    self.edges[nxt.id][1]
                };
                if cur_head != nxt_tail {
                    return Err(KareaError::Invariant(format!(
                        "plaquette {} cycle broken at position {}",
                        p, k
                    )));
                }
            }
        }
        for dim in 3..=4 {
            let cells = if dim == 3 { &self.cells3 } else { &self.cells4 };
            for (c, faces) in cells.iter().enumerate() {
                let mut acc: HashMap<usize, i64> = HashMap::new();
                for f in faces {
                    for sub in self.boundary_of(dim - 1, f.id) {
                        *acc.entry(sub.id).or_insert(0) += f.sign as i64 * sub.sign as i64;
                    }
                }
                if acc.values().any(|&v| v != 0) {
                    return Err(KareaError::Invariant(format!(
                        "cell ({},{}) boundary-of-boundary nonzero",
                        dim, c
                    )));
                }
            }
        }
        // Top-cell orientation consistency: every interior (d-1)-cell must
        // be shared by exactly two top cells with opposite induced signs.
        if self.dim >= 2 && self.top_dim_cells() > 0 {
            let mut acc: HashMap<usize, i64> = HashMap::new();
            let mut count: HashMap<usize, usize> = HashMap::new();
            for c in 0..self.top_dim_cells() {
                for f in self.boundary_of(self.dim, c) {
                    *acc.entry(f.id).or_insert(0) += f.sign as i64;
                    *count.entry(f.id).or_insert(0) += 1;
                }
            }
            for id in 0..self.cell_count(self.dim - 1) {
                let n = count.get(&id).copied().unwrap_or(0);
                let s = acc.get(&id).copied().unwrap_or(0);
                match n {
                    0 | 1 => {} // boundary or dangling face
                    2 => {
                        if s != 0 {
                            return Err(KareaError::Invariant(format!(
                                "face ({},{}) has inconsistent top-cell orientations",
                                self.dim - 1,
                                id
                            )));
                        }
                    }
                    _ => {
                        return Err(KareaError::Invariant(format!(
                            "face ({},{}) shared by {} top cells",
                            self.dim - 1,
                            id,
                            n
                        )));
                    }
                }
            }
        }
        if !self.cell4_planes.is_empty() && self.cell4_planes.len() != self.cells4.len() {
            return Err(KareaError::Invariant("cell4_planes length mismatch".into()));
        }
        Ok(())
    }

    /// Cells flagged as boundary: (d-1)-cells incident to exactly one top
    /// cell, together with their closure.
    pub fn compute_boundary(&self) -> CellSet {
        let mut out = CellSet::new();
        if self.dim == 0 || self.top_dim_cells() == 0 {
            return out;
        }
        let mut count: HashMap<usize, usize> = HashMap::new();
        for c in 0..self.top_dim_cells() {
            for f in self.boundary_of(self.dim, c) {
                *count.entry(f.id).or_insert(0) += 1;
            }
        }
        let mut frontier: Vec<(usize, usize)> = Vec::new();
        for id in 0..self.cell_count(self.dim - 1) {
            if count.get(&id).copied().unwrap_or(0) == 1 {
                out.insert(self.dim - 1, id);
                frontier.push((self.dim - 1, id));
            }
        }
        while let Some((d, id)) = frontier.pop() {
            if d == 0 {
                continue;
            }
            for f in self.boundary_of(d, id) {
                if !out.contains(d - 1, f.id) {
                    out.insert(d - 1, f.id);
                    frontier.push((d - 1, f.id));
                }
            }
        }
        out
    }

    /// Connected component label per vertex (via edges).
    pub fn vertex_components(&self) -> (Vec<usize>, usize) {
        let mut parent: Vec<usize> = (0..self.num_vertices).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for [a, b] in &self.edges {
            let ra = find(&mut parent, *a);
            let rb = find(&mut parent, *b);
            if ra != rb {
                parent[ra] = rb;
            }
        }
        let mut label: HashMap<usize, usize> = HashMap::new();
        let mut out = vec![0usize; self.num_vertices];
        for v in 0..self.num_vertices {
            let r = find(&mut parent, v);
            let next = label.len();
            let l = *label.entry(r).or_insert(next);
            out[v] = l;
        }
        let n = label.len();
        (out, n)
    }

    /// First Betti number of the whole complex (rational coefficients,
    /// computed as rank over a large prime field).
    pub fn betti1(&self) -> usize {
        let (_, comps) = self.vertex_components();
        let rank2 = rank_boundary2(self);
        self.edges.len() + comps - self.num_vertices - rank2
    }

    pub fn region(&self, name: &str) -> Result<&CellSet> {
        self.regions
            .get(name)
            .ok_or_else(|| KareaError::Config(format!("no region named '{}'", name)))
    }

    /// Canonical content hash of the serialized mesh.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("mesh serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hex_string(&hasher.finalize())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mesh: Mesh<S> = serde_json::from_str(text)?;
        mesh.validate()?;
        Ok(mesh)
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{:02x}", b));
    }
    s
}

const RANK_PRIME: i64 = 2_147_483_647;

/// Signed edge-incidence columns of the plaquette boundary matrix.
pub(crate) fn boundary2_columns<S: Scalar>(mesh: &Mesh<S>) -> Vec<HashMap<usize, i64>> {
    let mut columns: Vec<HashMap<usize, i64>> = Vec::with_capacity(mesh.plaquettes.len());
    for cycle in &mesh.plaquettes {
        let mut col: HashMap<usize, i64> = HashMap::new();
        for sc in cycle {
            *col.entry(sc.id).or_insert(0) += sc.sign as i64;
        }
        col.retain(|_, v| (*v).rem_euclid(RANK_PRIME) != 0);
        columns.push(col);
    }
    columns
}

/// Rank of the plaquette->edge boundary matrix over GF(p).
pub(crate) fn rank_boundary2<S: Scalar>(mesh: &Mesh<S>) -> usize {
    let rows = mesh.edges.len();
    sparse_rank_gf(boundary2_columns(mesh), rows)
}

/// Incremental column span over GF(p), used for rank and membership tests.
pub(crate) struct GfSpan {
    /// pivot row -> reduced column with a unit pivot.
    pivots: HashMap<usize, HashMap<usize, i64>>,
    pub rank: usize,
}

impl GfSpan {
    pub fn new() -> Self {
        GfSpan {
            pivots: HashMap::new(),
            rank: 0,
        }
    }

    /// Fully reduces a column against the current pivots.
    fn reduce(&self, col: HashMap<usize, i64>) -> HashMap<usize, i64> {
        let p = RANK_PRIME;
        let mut cur: HashMap<usize, i64> = col
            .into_iter()
            .map(|(r, v)| (r, v.rem_euclid(p)))
            .filter(|(_, v)| *v != 0)
            .collect();
        loop {
            let Some((&r, &v)) = cur.iter().min_by_key(|(r, _)| **r).map(|(r, v)| (r, v)) else {
                break;
            };
            let Some(piv) = self.pivots.get(&r) else {
                break;
            };
            for (pr, pv) in piv {
                let delta = mul_mod(v, *pv, p);
                let entry = cur.entry(*pr).or_insert(0);
                *entry = (*entry - delta).rem_euclid(p);
                if *entry == 0 {
                    cur.remove(pr);
                }
            }
        }
        cur
    }

    /// Adds a column; returns true when it was independent of the span.
    pub fn insert(&mut self, col: HashMap<usize, i64>) -> bool {
        let cur = self.reduce(col);
        let Some((&r, &v)) = cur.iter().min_by_key(|(r, _)| **r).map(|(r, v)| (r, v)) else {
            return false;
        };
        let inv = mod_inv(v, RANK_PRIME);
        let normalized: HashMap<usize, i64> = cur
            .iter()
            .map(|(rr, vv)| (*rr, mul_mod(*vv, inv, RANK_PRIME)))
            .collect();
        self.pivots.insert(r, normalized);
        self.rank += 1;
        true
    }

    pub fn contains(&self, col: HashMap<usize, i64>) -> bool {
        self.reduce(col).is_empty()
    }
}

fn mod_inv(a: i64, p: i64) -> i64 {
    // Fermat little theorem.
    let mut result = 1i64;
    let mut base = a.rem_euclid(p);
    let mut exp = p - 2;
    while exp > 0 {
        if exp & 1 == 1 {
            result = mul_mod(result, base, p);
        }
        base = mul_mod(base, base, p);
        exp >>= 1;
    }
    result
}

fn mul_mod(a: i64, b: i64, p: i64) -> i64 {
    ((a as i128 * b as i128) % p as i128) as i64
}

/// Sparse Gaussian elimination over GF(p); returns the column rank.
pub(crate) fn sparse_rank_gf(columns: Vec<HashMap<usize, i64>>, _rows: usize) -> usize {
    let mut span = GfSpan::new();
    for col in columns {
        span.insert(col);
    }
    span.rank
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_counts_and_euler() {
        let m: Mesh<f64> = gen_mesh(&GeneratorSpec::Torus2 {
            nx: 8,
            ny: 8,
            lx: std::f64::consts::TAU,
            ly: std::f64::consts::TAU,
        })
        .unwrap();
        assert_eq!(m.num_vertices, 64);
        assert_eq!(m.edges.len(), 128);
        assert_eq!(m.plaquettes.len(), 64);
        assert_eq!(m.euler_characteristic(), 0);
        let a = m.total_area();
        assert!((a - 4.0 * std::f64::consts::PI * std::f64::consts::PI).abs() < 1e-9);
        m.validate().unwrap();
        assert!(m.compute_boundary().is_empty());
        assert_eq!(m.betti1(), 2);
    }

    #[test]
    fn sphere_euler_and_area() {
        let m: Mesh<f64> = gen_mesh(&GeneratorSpec::CubedSphere { n: 4, radius: 1.0 }).unwrap();
        assert_eq!(m.euler_characteristic(), 2);
        m.validate().unwrap();
        let a = m.total_area();
        let exact = 4.0 * std::f64::consts::PI;
        assert!((a - exact).abs() / exact < 0.05, "area {} vs {}", a, exact);
        assert_eq!(m.betti1(), 0);
        assert!(m.compute_boundary().is_empty());
    }

    #[test]
    fn sphere_area_improves_with_resolution() {
        let exact = 4.0 * std::f64::consts::PI;
        let mut last = f64::MAX;
        for n in [4usize, 8, 16] {
            let m: Mesh<f64> =
                gen_mesh(&GeneratorSpec::CubedSphere { n, radius: 1.0 }).unwrap();
            let err = (m.total_area() - exact).abs();
            assert!(err < last, "area error should shrink with n");
            last = err;
        }
    }

    #[test]
    fn cylinder_boundary_is_two_circles() {
        let m: Mesh<f64> = gen_mesh(&GeneratorSpec::Cylinder {
            n: 8,
            radius: 8.0 / std::f64::consts::TAU,
            t0: 0.0,
            t1: 1.0,
            levels: 4,
        })
        .unwrap();
        m.validate().unwrap();
        let b = m.compute_boundary();
        assert_eq!(b.cells[1].len(), 16);
        assert_eq!(b.cells[0].len(), 16);
        let collar = m.collar.as_ref().unwrap();
        assert_eq!(collar.layers.len(), 5);
        assert!((collar.t_range[0] - 0.0).abs() < 1e-12);
        assert!((collar.t_range[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn torus4_complex_invariants() {
        let m: Mesh<f64> = gen_mesh(&GeneratorSpec::Torus4 {
            n: 3,
            length: 3.0,
        })
        .unwrap();
        m.validate().unwrap();
        assert_eq!(m.num_vertices, 81);
        assert_eq!(m.edges.len(), 4 * 81);
        assert_eq!(m.plaquettes.len(), 6 * 81);
        assert_eq!(m.cells3.len(), 4 * 81);
        assert_eq!(m.cells4.len(), 81);
        assert_eq!(m.euler_characteristic(), 0);
        assert!(m.compute_boundary().is_empty());
    }

    #[test]
    fn json_roundtrip_preserves_hash() {
        let m: Mesh<f64> = gen_mesh(&GeneratorSpec::CubedSphere { n: 3, radius: 2.0 }).unwrap();
        let text = m.to_json().unwrap();
        let back = Mesh::<f64>::from_json(&text).unwrap();
        assert_eq!(m.hash(), back.hash());
    }
}
