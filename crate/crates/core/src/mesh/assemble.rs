//! Gluing machinery: disjoint unions of meshes with vertex identifications,
//! face deduplication, and a global orientation pass.

use super::{Cell4Planes, Mesh, SignedCell};
use crate::error::{KareaError, Result};
use crate::scalar::{sc, Scalar};
use std::collections::HashMap;

/// Final cell ids (and relative orientation signs) of one glued piece.
#[derive(Clone, Debug)]
pub struct PieceFinalMap {
    pub vertex: Vec<usize>,
    pub edge: Vec<(usize, i8)>,
    pub plaq: Vec<(usize, i8)>,
    pub cell3: Vec<(usize, i8)>,
    pub cell4: Vec<(usize, i8)>,
}

struct RawPiece {
    vertex_offset: usize,
    edge_offset: usize,
    plaq_offset: usize,
    cell3_offset: usize,
    cell4_offset: usize,
    counts: [usize; 5],
}

/// Builds a mesh from pieces glued along identified vertices. Cells whose
/// vertex sets coincide after identification are merged; relative
/// orientations are tracked so bundle data can be transported through the
/// id maps.
pub struct MeshAssembler<S: Scalar> {
    dim: usize,
    num_vertices: usize,
    edges: Vec<[usize; 2]>,
    edge_length: Vec<S>,
    plaquettes: Vec<Vec<SignedCell>>,
    plaquette_area: Vec<S>,
    cells3: Vec<Vec<SignedCell>>,
    cell3_volume: Vec<S>,
    cells4: Vec<Vec<SignedCell>>,
    cell4_volume: Vec<S>,
    cell4_planes: Vec<Option<Cell4Planes>>,
    pieces: Vec<RawPiece>,
    identifications: Vec<(usize, usize)>,
}

impl<S: Scalar> MeshAssembler<S> {
    pub fn new(dim: usize) -> Self {
        MeshAssembler {
            dim,
            num_vertices: 0,
            edges: Vec::new(),
            edge_length: Vec::new(),
            plaquettes: Vec::new(),
            plaquette_area: Vec::new(),
            cells3: Vec::new(),
            cell3_volume: Vec::new(),
            cells4: Vec::new(),
            cell4_volume: Vec::new(),
            cell4_planes: Vec::new(),
            pieces: Vec::new(),
            identifications: Vec::new(),
        }
    }

    /// Adds a mesh as a piece; returns the piece index.
    ///
    /// `flip` reverses the piece's global orientation (used for the mirror
    /// copy in doubling and for orientation-reversing gluings).
    pub fn add_piece(&mut self, mesh: &Mesh<S>, flip: bool) -> usize {
        let vo = self.num_vertices;
        let eo = self.edges.len();
        let po = self.plaquettes.len();
        let c3o = self.cells3.len();
        let c4o = self.cells4.len();
        self.num_vertices += mesh.num_vertices;
        for (k, [t, h]) in mesh.edges.iter().enumerate() {
            self.edges.push([t + vo, h + vo]);
            self.edge_length.push(mesh.edge_length[k]);
        }
        let flip_top = |d: usize| flip && d == mesh.dim;
        for (k, cycle) in mesh.plaquettes.iter().enumerate() {
            let mut c: Vec<SignedCell> = cycle
                .iter()
                .map(|f| SignedCell::new(f.id + eo, f.sign))
                .collect();
            if flip_top(2) {
                c.reverse();
                for f in &mut c {
                    f.sign = -f.sign;
                }
            }
            self.plaquettes.push(c);
            self.plaquette_area.push(mesh.plaquette_area[k]);
        }
        for (k, faces) in mesh.cells3.iter().enumerate() {
            let s = if flip_top(3) { -1 } else { 1 };
            self.cells3.push(
                faces
                    .iter()
                    .map(|f| SignedCell::new(f.id + po, f.sign * s))
                    .collect(),
            );
            self.cell3_volume.push(mesh.cell3_volume[k]);
        }
        for (k, faces) in mesh.cells4.iter().enumerate() {
            let s = if flip_top(4) { -1 } else { 1 };
            self.cells4.push(
                faces
                    .iter()
                    .map(|f| SignedCell::new(f.id + c3o, f.sign * s))
                    .collect(),
            );
            self.cell4_volume.push(mesh.cell4_volume[k]);
            let planes = if mesh.cell4_planes.is_empty() {
                None
            } else {
                mesh.cell4_planes[k].as_ref().map(|p| Cell4Planes {
                    base_vertex: p.base_vertex + vo,
                    planes: p.planes.clone().map(|loops| {
                        loops.map(|l| {
                            l.into_iter()
                                .map(|e| SignedCell::new(e.id + eo, e.sign))
                                .collect()
                        })
                    }),
                })
            };
            self.cell4_planes.push(planes);
        }
        self.pieces.push(RawPiece {
            vertex_offset: vo,
            edge_offset: eo,
            plaq_offset: po,
            cell3_offset: c3o,
            cell4_offset: c4o,
            counts: [
                mesh.num_vertices,
                mesh.edges.len(),
                mesh.plaquettes.len(),
                mesh.cells3.len(),
                mesh.cells4.len(),
            ],
        });
        self.pieces.len() - 1
    }

    /// Identifies vertex `a` of piece `pa` with vertex `b` of piece `pb`.
    pub fn identify(&mut self, pa: usize, a: usize, pb: usize, b: usize) {
        let ga = self.pieces[pa].vertex_offset + a;
        let gb = self.pieces[pb].vertex_offset + b;
        self.identifications.push((ga, gb));
    }

    /// Resolves identifications, dedupes shared cells, orients top cells
    /// consistently, and returns the mesh plus per-piece id maps.
    pub fn finish(self) -> Result<(Mesh<S>, Vec<PieceFinalMap>)> {
        let MeshAssembler {
            dim,
            num_vertices,
            edges,
            edge_length,
            plaquettes,
            plaquette_area,
            cells3,
            cell3_volume,
            cells4,
            cell4_volume,
            cell4_planes,
            pieces,
            identifications,
        } = self;

        // Union-find over raw vertices.
        let mut parent: Vec<usize> = (0..num_vertices).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (a, b) in identifications {
            let ra = find(&mut parent, a);
            let rb = find(&mut parent, b);
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut vmap = vec![usize::MAX; num_vertices];
        let mut next = 0usize;
        for v in 0..num_vertices {
            let r = find(&mut parent, v);
            if vmap[r] == usize::MAX {
                vmap[r] = next;
                next += 1;
            }
            vmap[v] = vmap[r];
        }
        let final_vertices = next;

        // Edges: dedupe by unordered endpoint pair.
        let metric_close = |a: S, b: S| -> bool {
            let denom = a.abs().max(b.abs()).max(S::one());
            (a - b).abs() / denom < sc(1e-6)
        };
        let mut edge_lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut final_edges: Vec<[usize; 2]> = Vec::new();
        let mut final_edge_len: Vec<S> = Vec::new();
        let mut emap: Vec<(usize, i8)> = Vec::with_capacity(edges.len());
        for (k, [t, h]) in edges.iter().enumerate() {
            let (t, h) = (vmap[*t], vmap[*h]);
            if t == h {
                return Err(KareaError::Gluing(format!(
                    "edge {} degenerates under identification",
                    k
                )));
            }
            let key = (t.min(h), t.max(h));
            match edge_lookup.get(&key) {
                Some(&id) => {
                    if !metric_close(final_edge_len[id], edge_length[k]) {
                        return Err(KareaError::Gluing(format!(
                            "edge length mismatch at glued edge {}",
                            id
                        )));
                    }
                    let sign = if final_edges[id] == [t, h] { 1 } else { -1 };
                    emap.push((id, sign));
                }
                None => {
                    let id = final_edges.len();
                    final_edges.push([t, h]);
                    final_edge_len.push(edge_length[k]);
                    edge_lookup.insert(key, id);
                    emap.push((id, 1));
                }
            }
        }

        // Plaquettes: dedupe by sorted final edge ids.
        let mut plaq_lookup: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut final_plaqs: Vec<Vec<SignedCell>> = Vec::new();
        let mut final_area: Vec<S> = Vec::new();
        let mut pmap: Vec<(usize, i8)> = Vec::with_capacity(plaquettes.len());
        for (k, cycle) in plaquettes.iter().enumerate() {
            let mapped: Vec<SignedCell> = cycle
                .iter()
                .map(|f| {
                    let (id, flip) = emap[f.id];
                    SignedCell::new(id, f.sign * flip)
                })
                .collect();
            let mut key: Vec<usize> = mapped.iter().map(|f| f.id).collect();
            key.sort_unstable();
            match plaq_lookup.get(&key) {
                Some(&id) => {
                    if !metric_close(final_area[id], plaquette_area[k]) {
                        return Err(KareaError::Gluing(format!(
                            "plaquette area mismatch at glued plaquette {}",
                            id
                        )));
                    }
                    let probe = mapped[0];
                    let kept_sign = final_plaqs[id]
                        .iter()
                        .find(|f| f.id == probe.id)
                        .map(|f| f.sign)
                        .unwrap_or(probe.sign);
                    let rel = if kept_sign == probe.sign { 1 } else { -1 };
                    pmap.push((id, rel));
                }
                None => {
                    let id = final_plaqs.len();
                    final_plaqs.push(mapped);
                    final_area.push(plaquette_area[k]);
                    plaq_lookup.insert(key, id);
                    pmap.push((id, 1));
                }
            }
        }

        // 3-cells and 4-cells: dedupe by sorted face ids.
        let dedupe_shells = |shells: &[Vec<SignedCell>],
                             volumes: &[S],
                             sub_map: &[(usize, i8)]|
         -> Result<(Vec<Vec<SignedCell>>, Vec<S>, Vec<(usize, i8)>)> {
            let mut lookup: HashMap<Vec<usize>, usize> = HashMap::new();
            let mut out: Vec<Vec<SignedCell>> = Vec::new();
            let mut out_vol: Vec<S> = Vec::new();
            let mut map: Vec<(usize, i8)> = Vec::with_capacity(shells.len());
            for (k, faces) in shells.iter().enumerate() {
                let mapped: Vec<SignedCell> = faces
                    .iter()
                    .map(|f| {
                        let (id, rel) = sub_map[f.id];
                        SignedCell::new(id, f.sign * rel)
                    })
                    .collect();
                let mut key: Vec<usize> = mapped.iter().map(|f| f.id).collect();
                key.sort_unstable();
                match lookup.get(&key) {
                    Some(&id) => {
                        if !metric_close(out_vol[id], volumes[k]) {
                            return Err(KareaError::Gluing(
                                "cell volume mismatch at glued cell".into(),
                            ));
                        }
                        let probe = mapped[0];
                        let kept_sign = out[id]
                            .iter()
                            .find(|f| f.id == probe.id)
                            .map(|f| f.sign)
                            .unwrap_or(probe.sign);
                        let rel = if kept_sign == probe.sign { 1 } else { -1 };
                        map.push((id, rel));
                    }
                    None => {
                        let id = out.len();
                        out.push(mapped);
                        out_vol.push(volumes[k]);
                        lookup.insert(key, id);
                        map.push((id, 1));
                    }
                }
            }
            Ok((out, out_vol, map))
        };
        let (mut final_c3, final_v3, c3map) = dedupe_shells(&cells3, &cell3_volume, &pmap)?;
        let (mut final_c4, final_v4, c4map) = dedupe_shells(&cells4, &cell4_volume, &c3map)?;

        // Remap chern metadata onto surviving 4-cells (first writer wins).
        let mut final_planes: Vec<Option<Cell4Planes>> = vec![None; final_c4.len()];
        for (k, planes) in cell4_planes.iter().enumerate() {
            if let Some(p) = planes {
                let (id, _) = c4map[k];
                if final_planes[id].is_none() {
                    final_planes[id] = Some(Cell4Planes {
                        base_vertex: vmap[p.base_vertex],
                        planes: p.planes.clone().map(|loops| {
                            loops.map(|l| {
                                l.into_iter()
                                    .map(|e| {
                                        let (eid, flip) = emap[e.id];
                                        SignedCell::new(eid, e.sign * flip)
                                    })
                                    .collect()
                            })
                        }),
                    });
                }
            }
        }
        let has_planes = final_planes.iter().any(|p| p.is_some());

        // Orientation pass over top cells.
        let mut flips: Vec<i8> = Vec::new();
        if dim >= 2 {
            let top_count = match dim {
                2 => final_plaqs.len(),
                3 => final_c3.len(),
                _ => final_c4.len(),
            };
            let top_boundary = |c: usize| -> Vec<SignedCell> {
                match dim {
                    2 => final_plaqs[c].clone(),
                    3 => final_c3[c].clone(),
                    _ => final_c4[c].clone(),
                }
            };
            let mut incidence: HashMap<usize, Vec<(usize, i8)>> = HashMap::new();
            for c in 0..top_count {
                let mut face_sign: HashMap<usize, i64> = HashMap::new();
                for f in top_boundary(c) {
                    *face_sign.entry(f.id).or_insert(0) += f.sign as i64;
                }
                for (fid, s) in face_sign {
                    if s != 0 {
                        incidence
                            .entry(fid)
                            .or_default()
                            .push((c, if s > 0 { 1 } else { -1 }));
                    }
                }
            }
            flips = vec![0i8; top_count];
            for seed in 0..top_count {
                if flips[seed] != 0 {
                    continue;
                }
                flips[seed] = 1;
                let mut queue = vec![seed];
                while let Some(c) = queue.pop() {
                    for f in top_boundary(c) {
                        if let Some(incident) = incidence.get(&f.id) {
                            if incident.len() == 2 {
                                let (other, s_other) = if incident[0].0 == c {
                                    incident[1]
                                } else {
                                    incident[0]
                                };
                                let s_self = if incident[0].0 == c {
                                    incident[0].1
                                } else {
                                    incident[1].1
                                };
                                let needed = -s_self * flips[c] * s_other;
                                if flips[other] == 0 {
                                    flips[other] = needed;
                                    queue.push(other);
                                } else if flips[other] != needed {
                                    return Err(KareaError::Gluing(
                                        "glued complex is not orientable".into(),
                                    ));
                                }
                            }
                        }
                    }
                }
            }
            for c in 0..top_count {
                if flips[c] == -1 {
                    match dim {
                        2 => {
                            final_plaqs[c].reverse();
                            for f in &mut final_plaqs[c] {
                                f.sign = -f.sign;
                            }
                        }
                        3 => {
                            for f in &mut final_c3[c] {
                                f.sign = -f.sign;
                            }
                        }
                        _ => {
                            for f in &mut final_c4[c] {
                                f.sign = -f.sign;
                            }
                        }
                    }
                }
            }
        }

        // Compose per-piece final maps (top-cell signs adjusted by flips).
        let mut piece_maps = Vec::with_capacity(pieces.len());
        for piece in &pieces {
            let vertex: Vec<usize> = (0..piece.counts[0])
                .map(|k| vmap[piece.vertex_offset + k])
                .collect();
            let edge: Vec<(usize, i8)> = (0..piece.counts[1])
                .map(|k| emap[piece.edge_offset + k])
                .collect();
            let adjust = |map_entry: (usize, i8), d: usize| -> (usize, i8) {
                let (id, s) = map_entry;
                if d == dim && !flips.is_empty() {
                    (id, s * flips[id])
                } else {
                    (id, s)
                }
            };
            let plaq: Vec<(usize, i8)> = (0..piece.counts[2])
                .map(|k| adjust(pmap[piece.plaq_offset + k], 2))
                .collect();
            let cell3: Vec<(usize, i8)> = (0..piece.counts[3])
                .map(|k| adjust(c3map[piece.cell3_offset + k], 3))
                .collect();
            let cell4: Vec<(usize, i8)> = (0..piece.counts[4])
                .map(|k| adjust(c4map[piece.cell4_offset + k], 4))
                .collect();
            piece_maps.push(PieceFinalMap {
                vertex,
                edge,
                plaq,
                cell3,
                cell4,
            });
        }

        let mut mesh = Mesh::empty(dim);
        mesh.num_vertices = final_vertices;
        mesh.edges = final_edges;
        mesh.edge_length = final_edge_len;
        mesh.plaquettes = final_plaqs;
        mesh.plaquette_area = final_area;
        mesh.cells3 = final_c3;
        mesh.cell3_volume = final_v3;
        mesh.cells4 = final_c4;
        mesh.cell4_volume = final_v4;
        if has_planes {
            mesh.cell4_planes = final_planes;
        }
        mesh.boundary = mesh.compute_boundary();
        Ok((mesh, piece_maps))
    }
}
