//! Subcomplex and boundary-complex extraction with id maps back to the
//! parent mesh.

use super::{CellSet, Mesh, SignedCell};
use crate::error::{KareaError, Result};
use crate::scalar::Scalar;
use std::collections::BTreeSet;

/// Ids in the parent mesh for each cell of an extracted mesh, per dimension.
#[derive(Clone, Debug)]
pub struct ExtractMaps {
    /// new id -> parent id, per dimension.
    pub back: [Vec<usize>; 5],
    /// parent id -> new id, per dimension.
    pub forward: [Vec<Option<usize>>; 5],
}

impl ExtractMaps {
    fn new(parent: &[usize; 5]) -> Self {
        ExtractMaps {
            back: Default::default(),
            forward: [
                vec![None; parent[0]],
                vec![None; parent[1]],
                vec![None; parent[2]],
                vec![None; parent[3]],
                vec![None; parent[4]],
            ],
        }
    }

    fn push(&mut self, dim: usize, parent_id: usize) -> usize {
        let id = self.back[dim].len();
        self.back[dim].push(parent_id);
        self.forward[dim][parent_id] = Some(id);
        id
    }
}

fn counts<S: Scalar>(m: &Mesh<S>) -> [usize; 5] {
    [
        m.num_vertices,
        m.edges.len(),
        m.plaquettes.len(),
        m.cells3.len(),
        m.cells4.len(),
    ]
}

/// Extracts the closed subcomplex spanned by the given top cells.
pub fn extract_subcomplex<S: Scalar>(
    mesh: &Mesh<S>,
    keep_top: &BTreeSet<usize>,
) -> Result<(Mesh<S>, ExtractMaps)> {
    let dim = mesh.dim;
    let mut keep = CellSet::new();
    let mut frontier: Vec<(usize, usize)> = Vec::new();
    for &c in keep_top {
        if c >= mesh.cell_count(dim) {
            return Err(KareaError::Config(format!(
                "top cell {} out of range",
                c
            )));
        }
        keep.insert(dim, c);
        frontier.push((dim, c));
    }
    while let Some((d, id)) = frontier.pop() {
        if d == 0 {
            continue;
        }
        for f in mesh.boundary_of(d, id) {
            if !keep.contains(d - 1, f.id) {
                keep.insert(d - 1, f.id);
                frontier.push((d - 1, f.id));
            }
        }
    }
    build_from_cells(mesh, dim, &keep)
}

/// Builds a standalone mesh from an explicit closed cell set of the parent.
pub fn build_from_cells<S: Scalar>(
    mesh: &Mesh<S>,
    dim: usize,
    keep: &CellSet,
) -> Result<(Mesh<S>, ExtractMaps)> {
    let mut maps = ExtractMaps::new(&counts(mesh));
    let mut out = Mesh::empty(dim);
    for &v in &keep.cells[0] {
        maps.push(0, v);
    }
    out.num_vertices = keep.cells[0].len();
    for &e in &keep.cells[1] {
        let [t, h] = mesh.edges[e];
        let (Some(t2), Some(h2)) = (maps.forward[0][t], maps.forward[0][h]) else {
            return Err(KareaError::Invariant("cell set not closed at edge".into()));
        };
        maps.push(1, e);
        out.edges.push([t2, h2]);
        out.edge_length.push(mesh.edge_length[e]);
    }
    for &p in &keep.cells[2] {
        let cycle: Option<Vec<SignedCell>> = mesh.plaquettes[p]
            .iter()
            .map(|f| maps.forward[1][f.id].map(|id| SignedCell::new(id, f.sign)))
            .collect();
        let Some(cycle) = cycle else {
            return Err(KareaError::Invariant(
                "cell set not closed at plaquette".into(),
            ));
        };
        maps.push(2, p);
        out.plaquettes.push(cycle);
        out.plaquette_area.push(mesh.plaquette_area[p]);
    }
    for &c in &keep.cells[3] {
        let faces: Option<Vec<SignedCell>> = mesh.cells3[c]
            .iter()
            .map(|f| maps.forward[2][f.id].map(|id| SignedCell::new(id, f.sign)))
            .collect();
        let Some(faces) = faces else {
            return Err(KareaError::Invariant(
                "cell set not closed at 3-cell".into(),
            ));
        };
        maps.push(3, c);
        out.cells3.push(faces);
        out.cell3_volume.push(mesh.cell3_volume[c]);
    }
    for &c in &keep.cells[4] {
        let faces: Option<Vec<SignedCell>> = mesh.cells4[c]
            .iter()
            .map(|f| maps.forward[3][f.id].map(|id| SignedCell::new(id, f.sign)))
            .collect();
        let Some(faces) = faces else {
            return Err(KareaError::Invariant(
                "cell set not closed at 4-cell".into(),
            ));
        };
        let new_id = maps.push(4, c);
        out.cells4.push(faces);
        out.cell4_volume.push(mesh.cell4_volume[c]);
        if !mesh.cell4_planes.is_empty() {
            if out.cell4_planes.len() < new_id {
                out.cell4_planes.resize(new_id, None);
            }
            let planes = mesh.cell4_planes[c].as_ref().and_then(|pl| {
                let base_vertex = maps.forward[0][pl.base_vertex]?;
                let mut planes_out: [[Vec<SignedCell>; 4]; 6] = Default::default();
                for (i, loops) in pl.planes.iter().enumerate() {
                    for (j, l) in loops.iter().enumerate() {
                        let mapped: Option<Vec<SignedCell>> = l
                            .iter()
                            .map(|e| {
                                maps.forward[1][e.id].map(|id| SignedCell::new(id, e.sign))
                            })
                            .collect();
                        planes_out[i][j] = mapped?;
                    }
                }
                Some(super::Cell4Planes {
                    base_vertex,
                    planes: planes_out,
                })
            });
            out.cell4_planes.push(planes);
        }
    }
    out.boundary = out.compute_boundary();
    Ok((out, maps))
}

/// Extracts the boundary of a mesh as a standalone (dim-1)-mesh, with the
/// boundary orientation induced by the top cells.
///
/// Returns the boundary mesh, id maps to the parent, and the induced sign
/// per boundary top cell (relative to the parent's stored orientation).
pub fn extract_boundary_complex<S: Scalar>(
    mesh: &Mesh<S>,
) -> Result<(Mesh<S>, ExtractMaps, Vec<i8>)> {
    let dim = mesh.dim;
    if dim == 0 {
        return Err(KareaError::Config("0-dimensional mesh has no boundary".into()));
    }
    // Induced sign of each once-incident (dim-1)-cell.
    let mut induced: Vec<i8> = vec![0; mesh.cell_count(dim - 1)];
    let mut incidence: Vec<usize> = vec![0; mesh.cell_count(dim - 1)];
    for c in 0..mesh.top_dim_cells() {
        for f in mesh.boundary_of(dim, c) {
            incidence[f.id] += 1;
            induced[f.id] = f.sign;
        }
    }
    let mut keep = CellSet::new();
    let mut tops: Vec<usize> = Vec::new();
    for id in 0..mesh.cell_count(dim - 1) {
        if incidence[id] == 1 {
            tops.push(id);
            keep.insert(dim - 1, id);
        }
    }
    if tops.is_empty() {
        return Err(KareaError::Config("mesh is closed; no boundary".into()));
    }
    let mut frontier: Vec<(usize, usize)> = tops.iter().map(|&id| (dim - 1, id)).collect();
    while let Some((d, id)) = frontier.pop() {
        if d == 0 {
            continue;
        }
        for f in mesh.boundary_of(d, id) {
            if !keep.contains(d - 1, f.id) {
                keep.insert(d - 1, f.id);
                frontier.push((d - 1, f.id));
            }
        }
    }
    let (mut out, maps) = build_from_cells(mesh, dim - 1, &keep)?;
    // Apply the induced orientation to the new top cells.
    let mut signs: Vec<i8> = Vec::with_capacity(out.top_dim_cells());
    for new_id in 0..out.top_dim_cells() {
        let parent = maps.back[dim - 1][new_id];
        let s = induced[parent];
        signs.push(s);
        if s == -1 {
            match dim - 1 {
                1 => {
                    let [t, h] = out.edges[new_id];
                    out.edges[new_id] = [h, t];
                }
                2 => {
                    out.plaquettes[new_id].reverse();
                    for f in &mut out.plaquettes[new_id] {
                        f.sign = -f.sign;
                    }
                }
                _ => {
                    for f in &mut out.cells3[new_id] {
                        f.sign = -f.sign;
                    }
                }
            }
        }
    }
    out.boundary = out.compute_boundary();
    Ok((out, maps, signs))
}
