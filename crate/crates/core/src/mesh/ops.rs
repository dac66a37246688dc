//! Mesh rewriting: metric scaling, coverings, cellular maps, connected
//! sums, surgery, doubling, and collar cuts.

use super::assemble::{MeshAssembler, PieceFinalMap};
use super::extract::{extract_boundary_complex, extract_subcomplex, ExtractMaps};
use super::generators::{ball_mesh, shell, BoxIndexer};
use super::iso::find_isomorphism;
use super::product::{product, product_with_path, SliceMetric};
use super::{CellSet, Collar, CollarLayer, Generator, GeneratorSpec, Mesh};
use crate::error::{KareaError, Result};
use crate::scalar::{sc, Scalar};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

/// Cellular map between meshes: edges map to edges (with relative
/// orientation) or collapse to a vertex.
#[derive(Clone, Debug)]
pub struct MeshMap<S: Scalar> {
    pub source: Arc<Mesh<S>>,
    pub target: Arc<Mesh<S>>,
    pub vertex_map: Vec<usize>,
    pub edge_map: Vec<Option<(usize, i8)>>,
    pub degree: i64,
    pub lipschitz: S,
}

/// Factor-wise covering of a torus mesh.
#[derive(Clone, Debug)]
pub struct CoveringMap<S: Scalar> {
    pub total: Arc<Mesh<S>>,
    pub base: Arc<Mesh<S>>,
    pub sheets: usize,
    /// total vertex -> base vertex.
    pub projection: Vec<usize>,
    /// total vertex -> sheet index.
    pub vertex_sheet: Vec<usize>,
    /// total edge -> base edge (orientation always preserved here).
    pub edge_map: Vec<usize>,
    /// total plaquette -> base plaquette.
    pub plaq_map: Vec<usize>,
}

/// Embedded S^p x D^q region plus the prebuilt replacement handle.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct SurgeryPlan<S: Scalar> {
    pub p: usize,
    pub q: usize,
    pub region: CellSet,
    pub collar_levels: usize,
    pub handle: Mesh<S>,
}

/// Connected sum with id maps from both summands into the result.
#[derive(Clone, Debug)]
pub struct ConnectedSum<S: Scalar> {
    pub mesh: Mesh<S>,
    /// summand cell -> sum cell with relative orientation; None for the
    /// removed top cells.
    pub m1_map: [Vec<Option<(usize, i8)>>; 5],
    pub m2_map: [Vec<Option<(usize, i8)>>; 5],
}

/// Multiplies edge lengths by c, areas by c^2, volumes by c^3/c^4.
pub fn scale_metric<S: Scalar>(m: &Mesh<S>, c: S) -> Result<Mesh<S>> {
    if c <= S::zero() {
        return Err(KareaError::Config("scale factor must be positive".into()));
    }
    let c2 = c * c;
    let c3 = c2 * c;
    let c4 = c2 * c2;
    let mut out = m.clone();
    for l in &mut out.edge_length {
        *l *= c;
    }
    for a in &mut out.plaquette_area {
        *a *= c2;
    }
    for v in &mut out.cell3_volume {
        *v *= c3;
    }
    for v in &mut out.cell4_volume {
        *v *= c4;
    }
    if let Some(collar) = &mut out.collar {
        for l in &mut collar.slice.edge_length {
            *l *= c;
        }
        for a in &mut collar.slice.plaquette_area {
            *a *= c2;
        }
        for v in &mut collar.slice.cell3_volume {
            *v *= c3;
        }
    }
    if let Some(Generator::Torus { lengths, .. }) = &mut out.generator {
        for l in lengths {
            *l *= c;
        }
    }
    if let Some(Generator::CubedSphere { radius, .. }) = &mut out.generator {
        *radius *= c;
    }
    Ok(out)
}

/// Identity cellular map.
pub fn identity_map<S: Scalar>(m: &Arc<Mesh<S>>) -> MeshMap<S> {
    MeshMap {
        source: m.clone(),
        target: m.clone(),
        vertex_map: (0..m.num_vertices).collect(),
        edge_map: (0..m.edges.len()).map(|e| Some((e, 1))).collect(),
        degree: 1,
        lipschitz: S::one(),
    }
}

fn torus_generator<S: Scalar>(m: &Mesh<S>) -> Result<(Vec<usize>, Vec<S>)> {
    match &m.generator {
        Some(Generator::Torus { dims, lengths }) => Ok((dims.clone(), lengths.clone())),
        _ => Err(KareaError::Unsupported(
            "operation requires a torus generator".into(),
        )),
    }
}

fn torus_mesh<S: Scalar>(dims: &[usize], lengths: &[S]) -> Result<Mesh<S>> {
    match dims.len() {
        2 => super::generators::gen_mesh(&GeneratorSpec::Torus2 {
            nx: dims[0],
            ny: dims[1],
            lx: lengths[0],
            ly: lengths[1],
        }),
        4 => {
            if dims.iter().any(|&d| d != dims[0]) || lengths.iter().any(|&l| l != lengths[0]) {
                return Err(KareaError::Unsupported(
                    "4-tori must be hypercubic".into(),
                ));
            }
            super::generators::gen_mesh(&GeneratorSpec::Torus4 {
                n: dims[0],
                length: lengths[0],
            })
        }
        _ => Err(KareaError::Unsupported("torus rank must be 2 or 4".into())),
    }
}

/// Factor-wise unrolled covering of a torus.
pub fn covering<S: Scalar>(m: &Mesh<S>, factors: &[usize]) -> Result<CoveringMap<S>> {
    let (dims, lengths) = torus_generator(m)?;
    if factors.len() != dims.len() || factors.iter().any(|&f| f == 0) {
        return Err(KareaError::Config(
            "covering factors must be positive, one per direction".into(),
        ));
    }
    let tdims: Vec<usize> = dims.iter().zip(factors).map(|(n, f)| n * f).collect();
    let tlens: Vec<S> = lengths
        .iter()
        .zip(factors)
        .map(|(&l, &f)| l * sc::<S>(f as f64))
        .collect();
    let total = torus_mesh(&tdims, &tlens)?;
    let base = torus_mesh(&dims, &lengths)?;
    let k = dims.len();
    let ix_t = BoxIndexer::new(tdims.clone(), vec![true; k]);
    let ix_b = BoxIndexer::new(dims.clone(), vec![true; k]);
    let sheets: usize = factors.iter().product();
    let mut projection = Vec::with_capacity(total.num_vertices);
    let mut vertex_sheet = Vec::with_capacity(total.num_vertices);
    for v in 0..total.num_vertices {
        let c = ix_t.vertex_coords(v);
        let base_c: Vec<usize> = c.iter().zip(&dims).map(|(&x, &n)| x % n).collect();
        projection.push(ix_b.vid(&base_c));
        let mut sheet = 0usize;
        for d in (0..k).rev() {
            sheet = sheet * factors[d] + c[d] / dims[d];
        }
        vertex_sheet.push(sheet);
    }
    let mut edge_map = Vec::with_capacity(total.edges.len());
    for mask in ix_t.masks(1) {
        let a = mask[0];
        for idx in 0..total.num_vertices {
            let c = ix_t.vertex_coords(idx);
            let base_c: Vec<usize> = c.iter().zip(&dims).map(|(&x, &n)| x % n).collect();
            debug_assert_eq!(edge_map.len(), ix_t.eid(a, &c));
            edge_map.push(ix_b.eid(a, &base_c));
        }
    }
    let mut plaq_map = Vec::with_capacity(total.plaquettes.len());
    for mask in ix_t.masks(2) {
        let (a, b) = (mask[0], mask[1]);
        for idx in 0..total.num_vertices {
            let c = ix_t.vertex_coords(idx);
            let base_c: Vec<usize> = c.iter().zip(&dims).map(|(&x, &n)| x % n).collect();
            debug_assert_eq!(plaq_map.len(), ix_t.pid(a, b, &c));
            plaq_map.push(ix_b.pid(a, b, &base_c));
        }
    }
    Ok(CoveringMap {
        total: Arc::new(total),
        base: Arc::new(base),
        sheets,
        projection,
        vertex_sheet,
        edge_map,
        plaq_map,
    })
}

/// The covering projection as a cellular map (degree = sheets).
pub fn covering_projection_map<S: Scalar>(cov: &CoveringMap<S>) -> MeshMap<S> {
    MeshMap {
        source: cov.total.clone(),
        target: cov.base.clone(),
        vertex_map: cov.projection.clone(),
        edge_map: cov.edge_map.iter().map(|&e| Some((e, 1))).collect(),
        degree: cov.sheets as i64,
        lipschitz: S::one(),
    }
}

/// Degree-1 collapse map T^k(n) -> T^k(n-1) sending the origin unit cell
/// block to vertex 0 (each circle factor collapses its first segment).
pub fn collapse_map<S: Scalar>(m: &Arc<Mesh<S>>) -> Result<MeshMap<S>> {
    let (dims, lengths) = torus_generator(m)?;
    if dims.iter().any(|&n| n < 4) {
        return Err(KareaError::Config(
            "collapse map needs torus resolution >= 4".into(),
        ));
    }
    let k = dims.len();
    let tdims: Vec<usize> = dims.iter().map(|&n| n - 1).collect();
    let tlens: Vec<S> = dims
        .iter()
        .zip(&lengths)
        .map(|(&n, &l)| l * sc::<S>((n - 1) as f64) / sc::<S>(n as f64))
        .collect();
    let target = Arc::new(torus_mesh(&tdims, &tlens)?);
    let ix_s = BoxIndexer::new(dims.clone(), vec![true; k]);
    let ix_t = BoxIndexer::new(tdims.clone(), vec![true; k]);
    let phi = |x: usize| x.saturating_sub(1);
    let mut vertex_map = Vec::with_capacity(m.num_vertices);
    for v in 0..m.num_vertices {
        let c = ix_s.vertex_coords(v);
        let tc: Vec<usize> = c.iter().map(|&x| phi(x)).collect();
        vertex_map.push(ix_t.vid(&tc));
    }
    let mut edge_map = Vec::with_capacity(m.edges.len());
    for mask in ix_s.masks(1) {
        let a = mask[0];
        for idx in 0..m.num_vertices {
            let c = ix_s.vertex_coords(idx);
            debug_assert_eq!(edge_map.len(), ix_s.eid(a, &c));
            if c[a] == 0 {
                edge_map.push(None); // collapsed segment
            } else {
                let tc: Vec<usize> = c.iter().map(|&x| phi(x)).collect();
                edge_map.push(Some((ix_t.eid(a, &tc), 1)));
            }
        }
    }
    Ok(MeshMap {
        source: m.clone(),
        target,
        vertex_map,
        edge_map,
        degree: 1,
        lipschitz: S::one(),
    })
}

/// Composes extraction maps with assembler piece maps into full-size maps
/// from an original mesh into a glued result.
fn compose_maps<S: Scalar>(
    original: &Mesh<S>,
    extract: &ExtractMaps,
    piece: &PieceFinalMap,
) -> [Vec<Option<(usize, i8)>>; 5] {
    let mut out: [Vec<Option<(usize, i8)>>; 5] = Default::default();
    for d in 0..=4 {
        let count = original.cell_count(d);
        let mut v = vec![None; count];
        for (orig, slot) in v.iter_mut().enumerate() {
            if let Some(mid) = extract.forward[d][orig] {
                *slot = Some(match d {
                    0 => (piece.vertex[mid], 1),
                    1 => piece.edge[mid],
                    2 => piece.plaq[mid],
                    3 => piece.cell3[mid],
                    _ => piece.cell4[mid],
                });
            }
        }
        out[d] = v;
    }
    out
}

pub(crate) fn region_from_piece(piece: &PieceFinalMap) -> CellSet {
    let mut set = CellSet::new();
    for &v in &piece.vertex {
        set.insert(0, v);
    }
    for (d, list) in [(1usize, &piece.edge), (2, &piece.plaq), (3, &piece.cell3), (4, &piece.cell4)]
    {
        for &(id, _) in list.iter() {
            set.insert(d, id);
        }
    }
    set
}

/// Remaps a collar's cell ids through an assembler piece map.
pub(crate) fn remap_collar<S: Scalar>(collar: &Collar<S>, piece: &PieceFinalMap) -> Collar<S> {
    let map_id = |d: usize, id: usize| -> usize {
        match d {
            0 => piece.vertex[id],
            1 => piece.edge[id].0,
            2 => piece.plaq[id].0,
            3 => piece.cell3[id].0,
            _ => piece.cell4[id].0,
        }
    };
    let mut layers = Vec::with_capacity(collar.layers.len());
    for l in &collar.layers {
        let mut cells: [Vec<usize>; 4] = Default::default();
        let mut vertical: [Vec<usize>; 4] = Default::default();
        for d in 0..4 {
            cells[d] = l.cells[d].iter().map(|&id| map_id(d, id)).collect();
            vertical[d] = l.vertical[d].iter().map(|&id| map_id(d + 1, id)).collect();
        }
        layers.push(CollarLayer {
            t: l.t,
            cells,
            vertical,
        });
    }
    Collar {
        slice: collar.slice.clone(),
        layers,
        t_range: collar.t_range,
    }
}

/// Pulls the metric of mesh `b` onto the cell labels of mesh `a` through a
/// vertex isomorphism a -> b.
pub(crate) fn metric_through_iso<S: Scalar>(
    a: &Mesh<S>,
    b: &Mesh<S>,
    iso: &[usize],
) -> Result<SliceMetric<S>> {
    let mut edge_of: HashMap<(usize, usize), usize> = HashMap::new();
    for (e, [t, h]) in b.edges.iter().enumerate() {
        edge_of.insert((*t.min(h), *t.max(h)), e);
    }
    let mut plaq_of: HashMap<BTreeSet<usize>, usize> = HashMap::new();
    for p in 0..b.plaquettes.len() {
        plaq_of.insert(b.cell_vertices(2, p), p);
    }
    let mut cell3_of: HashMap<BTreeSet<usize>, usize> = HashMap::new();
    for c in 0..b.cells3.len() {
        cell3_of.insert(b.cell_vertices(3, c), c);
    }
    let missing = || KareaError::Gluing("isomorphism does not map cells to cells".into());
    let mut out = SliceMetric {
        edge_length: Vec::with_capacity(a.edges.len()),
        plaquette_area: Vec::with_capacity(a.plaquettes.len()),
        cell3_volume: Vec::with_capacity(a.cells3.len()),
    };
    for [t, h] in &a.edges {
        let key = (iso[*t].min(iso[*h]), iso[*t].max(iso[*h]));
        let e = edge_of.get(&key).ok_or_else(missing)?;
        out.edge_length.push(b.edge_length[*e]);
    }
    for p in 0..a.plaquettes.len() {
        let key: BTreeSet<usize> = a.cell_vertices(2, p).into_iter().map(|v| iso[v]).collect();
        let id = plaq_of.get(&key).ok_or_else(missing)?;
        out.plaquette_area.push(b.plaquette_area[*id]);
    }
    for c in 0..a.cells3.len() {
        let key: BTreeSet<usize> = a.cell_vertices(3, c).into_iter().map(|v| iso[v]).collect();
        let id = cell3_of.get(&key).ok_or_else(missing)?;
        out.cell3_volume.push(b.cell3_volume[*id]);
    }
    Ok(out)
}

pub(crate) struct GlueOutcome<S: Scalar> {
    pub(crate) mesh: Mesh<S>,
    pub(crate) piece_maps: Vec<PieceFinalMap>,
}

/// Glues pieces with identifications, retrying with the last piece flipped
/// if the first attempt is non-orientable.
pub(crate) fn glue_with_flip_retry<S: Scalar>(
    pieces: &[&Mesh<S>],
    identify: &[(usize, usize, usize, usize)],
) -> Result<GlueOutcome<S>> {
    for flip_last in [false, true] {
        let mut asm = MeshAssembler::new(pieces[0].dim);
        for (i, p) in pieces.iter().enumerate() {
            let flip = flip_last && i + 1 == pieces.len();
            asm.add_piece(p, flip);
        }
        for &(pa, a, pb, b) in identify {
            asm.identify(pa, a, pb, b);
        }
        match asm.finish() {
            Ok((mesh, piece_maps)) => return Ok(GlueOutcome { mesh, piece_maps }),
            Err(KareaError::Gluing(msg)) if !flip_last && msg.contains("orientable") => continue,
            Err(e) => return Err(e),
        }
    }
    Err(KareaError::Gluing(
        "could not orient the glued complex".into(),
    ))
}

/// Connected sum: removes one top cell from each summand and joins the
/// holes with a product tube carrying a collar (t in [-4, 4]).
pub fn connected_sum<S: Scalar>(
    m1: &Mesh<S>,
    m2: &Mesh<S>,
    cell1: usize,
    cell2: usize,
) -> Result<ConnectedSum<S>> {
    if m1.dim != m2.dim {
        return Err(KareaError::Config("summands must share dimension".into()));
    }
    if !m1.boundary.is_empty() || !m2.boundary.is_empty() {
        return Err(KareaError::Config("summands must be closed".into()));
    }
    let keep1: BTreeSet<usize> = (0..m1.top_dim_cells()).filter(|&c| c != cell1).collect();
    let keep2: BTreeSet<usize> = (0..m2.top_dim_cells()).filter(|&c| c != cell2).collect();
    let (mc1, ex1) = extract_subcomplex(m1, &keep1)?;
    let (mc2, ex2) = extract_subcomplex(m2, &keep2)?;
    let (b1, b1_maps, _) = extract_boundary_complex(&mc1)?;
    let (b2, b2_maps, _) = extract_boundary_complex(&mc2)?;
    let iso = find_isomorphism(&b1, &b2).ok_or_else(|| {
        KareaError::Gluing("summand hole boundaries are not isomorphic".into())
    })?;
    let metric2 = metric_through_iso(&b1, &b2, &iso)?;
    let ts: Vec<S> = (-4..=4).map(|t| sc::<S>(t as f64)).collect();
    let (tube, layout) =
        product_with_path(&b1, &ts, Some((&SliceMetric::of(&b1), &metric2)))?;
    let tube_collar = tube.collar.clone().expect("tube has collar");
    let levels = ts.len() - 1;

    let mut identify = Vec::new();
    for k in 0..b1.num_vertices {
        // Tube near end <-> m1 hole boundary.
        identify.push((1, layout.id(0, k, 0, 0), 0, b1_maps.back[0][k]));
        // Tube far end <-> m2 hole boundary (through the isomorphism).
        identify.push((1, layout.id(0, k, 0, levels), 2, b2_maps.back[0][iso[k]]));
    }
    let outcome = glue_with_flip_retry(&[&mc1, &tube, &mc2], &identify)?;
    let mut mesh = outcome.mesh;
    mesh.regions
        .insert("M1".into(), region_from_piece(&outcome.piece_maps[0]));
    mesh.regions
        .insert("M2".into(), region_from_piece(&outcome.piece_maps[2]));
    mesh.regions
        .insert("collar".into(), region_from_piece(&outcome.piece_maps[1]));
    mesh.collar = Some(remap_collar(&tube_collar, &outcome.piece_maps[1]));
    mesh.generator = Some(Generator::Other);
    mesh.validate()?;
    Ok(ConnectedSum {
        m1_map: compose_maps(m1, &ex1, &outcome.piece_maps[0]),
        m2_map: compose_maps(m2, &ex2, &outcome.piece_maps[2]),
        mesh,
    })
}

/// Replaces an embedded S^p x D^q region by the plan's handle, inserting a
/// product collar (t in [-2, 2]) between complement and handle.
pub fn surgery<S: Scalar>(m: &Mesh<S>, plan: &SurgeryPlan<S>) -> Result<Mesh<S>> {
    if plan.p + plan.q != m.dim {
        return Err(KareaError::Plan("plan dimensions do not match mesh".into()));
    }
    if plan.collar_levels < 4 || plan.collar_levels % 2 != 0 {
        return Err(KareaError::Plan(
            "collar_levels must be even and at least 4".into(),
        ));
    }
    let region_top = &plan.region.cells[m.dim];
    if region_top.is_empty() {
        return Err(KareaError::Plan("plan region has no top cells".into()));
    }
    if region_top.iter().any(|&c| c >= m.top_dim_cells()) {
        return Err(KareaError::Plan("plan region references missing cells".into()));
    }
    let keep: BTreeSet<usize> = (0..m.top_dim_cells())
        .filter(|c| !region_top.contains(c))
        .collect();
    if keep.is_empty() {
        return Err(KareaError::Plan("plan region covers the whole mesh".into()));
    }
    let (complement, _ex) = extract_subcomplex(m, &keep)?;
    let (b, b_maps, _) = extract_boundary_complex(&complement)?;
    let (hb, hb_maps, _) = extract_boundary_complex(&plan.handle)?;
    let iso = find_isomorphism(&b, &hb).ok_or_else(|| {
        KareaError::Plan("region and handle boundary complexes are not isomorphic".into())
    })?;
    let metric_far = metric_through_iso(&b, &hb, &iso)?;
    let levels = plan.collar_levels;
    let dt = sc::<S>(4.0) / sc::<S>(levels as f64);
    let ts: Vec<S> = (0..=levels)
        .map(|i| sc::<S>(-2.0) + dt * sc::<S>(i as f64))
        .collect();
    let (tube, layout) = product_with_path(&b, &ts, Some((&SliceMetric::of(&b), &metric_far)))?;
    let tube_collar = tube.collar.clone().expect("tube has collar");

    let mut identify = Vec::new();
    for k in 0..b.num_vertices {
        identify.push((1, layout.id(0, k, 0, 0), 0, b_maps.back[0][k]));
        identify.push((1, layout.id(0, k, 0, levels), 2, hb_maps.back[0][iso[k]]));
    }
    let outcome = glue_with_flip_retry(&[&complement, &tube, &plan.handle], &identify)?;
    let mut mesh = outcome.mesh;
    mesh.regions
        .insert("M_prime".into(), region_from_piece(&outcome.piece_maps[0]));
    mesh.regions
        .insert("X".into(), region_from_piece(&outcome.piece_maps[2]));
    mesh.regions
        .insert("collar".into(), region_from_piece(&outcome.piece_maps[1]));
    mesh.collar = Some(remap_collar(&tube_collar, &outcome.piece_maps[1]));
    mesh.generator = Some(Generator::Other);
    mesh.validate()?;
    Ok(mesh)
}

/// Glues an orientation-reversed copy along the boundary; records the
/// swapping involution.
pub fn double<S: Scalar>(m: &Mesh<S>) -> Result<(Mesh<S>, Vec<PieceFinalMap>)> {
    if m.boundary.is_empty() {
        return Err(KareaError::Config("double requires a boundary".into()));
    }
    let mut identify = Vec::new();
    for &v in &m.boundary.cells[0] {
        identify.push((0usize, v, 1usize, v));
    }
    let outcome = glue_with_flip_retry(&[m, m], &identify)?;
    let mut mesh = outcome.mesh;
    let mut inv: Vec<usize> = (0..mesh.num_vertices).collect();
    for v in 0..m.num_vertices {
        let a = outcome.piece_maps[0].vertex[v];
        let b = outcome.piece_maps[1].vertex[v];
        inv[a] = b;
        inv[b] = a;
    }
    mesh.involution = Some(inv);
    mesh.regions
        .insert("front".into(), region_from_piece(&outcome.piece_maps[0]));
    mesh.regions
        .insert("back".into(), region_from_piece(&outcome.piece_maps[1]));
    mesh.validate()?;
    Ok((mesh, outcome.piece_maps))
}

/// One side of a collar cut.
#[derive(Clone, Debug)]
pub struct CutPiece<S: Scalar> {
    pub mesh: Mesh<S>,
    pub maps: ExtractMaps,
    /// Indices (into the parent collar's layer list) still present.
    pub layer_range: (usize, usize),
}

/// Cuts a mesh along collar slices at the given t values (which must be
/// collar layer levels). Slice cells are duplicated into both sides.
pub(crate) fn cut_at<S: Scalar>(m: &Mesh<S>, t_cuts: &[S]) -> Result<Vec<CutPiece<S>>> {
    let collar = m
        .collar
        .as_ref()
        .ok_or_else(|| KareaError::Config("cut requires a collar".into()))?;
    let mut cut_layers: Vec<usize> = Vec::new();
    for &t in t_cuts {
        let l = collar.layer_at(t);
        if (collar.layers[l].t - t).abs() > sc(1e-9) {
            return Err(KareaError::Config("cut level is not a collar layer".into()));
        }
        if l == 0 || l + 1 == collar.layers.len() {
            return Err(KareaError::Config("cannot cut at a collar end".into()));
        }
        cut_layers.push(l);
    }
    cut_layers.sort_unstable();
    cut_layers.dedup();
    if cut_layers.is_empty() {
        return Err(KareaError::Config("no cut levels given".into()));
    }
    let dim = m.dim;
    let n_pieces = cut_layers.len() + 1;
    // Interval index of each vertical top cell between layers i and i+1.
    let mut label: Vec<Option<usize>> = vec![None; m.top_dim_cells()];
    for (i, layer) in collar.layers.iter().enumerate() {
        for &id in &layer.vertical[dim - 1] {
            let piece = cut_layers.iter().filter(|&&c| c <= i).count();
            label[id] = Some(piece);
        }
    }
    // Faces lying in a cut slice block adjacency propagation.
    let mut cut_faces: BTreeSet<usize> = BTreeSet::new();
    for &l in &cut_layers {
        for &id in &collar.layers[l].cells[dim - 1] {
            cut_faces.insert(id);
        }
    }
    // Propagate labels across shared non-cut faces.
    let mut face_to_cells: HashMap<usize, Vec<usize>> = HashMap::new();
    for c in 0..m.top_dim_cells() {
        for f in m.boundary_of(dim, c) {
            face_to_cells.entry(f.id).or_default().push(c);
        }
    }
    let mut queue: Vec<usize> = (0..m.top_dim_cells()).filter(|&c| label[c].is_some()).collect();
    while let Some(c) = queue.pop() {
        let piece = label[c].expect("labeled");
        for f in m.boundary_of(dim, c) {
            if cut_faces.contains(&f.id) {
                continue;
            }
            for &other in face_to_cells.get(&f.id).into_iter().flatten() {
                match label[other] {
                    None => {
                        label[other] = Some(piece);
                        queue.push(other);
                    }
                    Some(p) if p != piece => {
                        return Err(KareaError::Invariant(
                            "cut pieces are not separated by the slices".into(),
                        ));
                    }
                    _ => {}
                }
            }
        }
    }
    if label.iter().any(|l| l.is_none()) {
        return Err(KareaError::Invariant(
            "cut could not label every top cell".into(),
        ));
    }

    let mut pieces = Vec::with_capacity(n_pieces);
    for piece in 0..n_pieces {
        let keep: BTreeSet<usize> = (0..m.top_dim_cells())
            .filter(|&c| label[c] == Some(piece))
            .collect();
        if keep.is_empty() {
            return Err(KareaError::Invariant("cut produced an empty piece".into()));
        }
        let (mut sub, maps) = extract_subcomplex(m, &keep)?;
        // Layer indices retained by this piece.
        let lo = if piece == 0 { 0 } else { cut_layers[piece - 1] };
        let hi = if piece == n_pieces - 1 {
            collar.layers.len() - 1
        } else {
            cut_layers[piece]
        };
        let mut layers = Vec::new();
        for (i, layer) in collar.layers.iter().enumerate() {
            if i < lo || i > hi {
                continue;
            }
            let mut cells: [Vec<usize>; 4] = Default::default();
            let mut vertical: [Vec<usize>; 4] = Default::default();
            let mut ok = true;
            for d in 0..4 {
                for &id in &layer.cells[d] {
                    match maps.forward[d][id] {
                        Some(nid) => cells[d].push(nid),
                        None => ok = false,
                    }
                }
                if i < hi {
                    for &id in &layer.vertical[d] {
                        match maps.forward[d + 1][id] {
                            Some(nid) => vertical[d].push(nid),
                            None => ok = false,
                        }
                    }
                }
            }
            if !ok {
                return Err(KareaError::Invariant(
                    "collar layer not fully contained in its cut piece".into(),
                ));
            }
            layers.push(CollarLayer {
                t: layer.t,
                cells,
                vertical,
            });
        }
        let t_range = [layers[0].t, layers[layers.len() - 1].t];
        sub.collar = Some(Collar {
            slice: collar.slice.clone(),
            layers,
            t_range,
        });
        // Keep region labels restricted to the piece.
        let mut regions = BTreeMap::new();
        for (name, set) in &m.regions {
            let mut restricted = CellSet::new();
            for d in 0..=4 {
                for &id in &set.cells[d] {
                    if let Some(nid) = maps.forward[d][id] {
                        restricted.insert(d, nid);
                    }
                }
            }
            if !restricted.is_empty() {
                regions.insert(name.clone(), restricted);
            }
        }
        sub.regions = regions;
        pieces.push(CutPiece {
            mesh: sub,
            maps,
            layer_range: (lo, hi),
        });
    }
    Ok(pieces)
}

/// Plan for 1-surgery on a square torus along an essential band of the
/// given width (in rows).
pub fn plan_torus_band_surgery<S: Scalar>(m: &Mesh<S>, width: usize) -> Result<SurgeryPlan<S>> {
    let (dims, lengths) = torus_generator(m)?;
    if dims.len() != 2 {
        return Err(KareaError::Plan("band surgery expects a 2-torus".into()));
    }
    let (nx, ny) = (dims[0], dims[1]);
    if width == 0 || width + 2 > ny {
        return Err(KareaError::Plan("band width out of range".into()));
    }
    let ix = BoxIndexer::new(dims.clone(), vec![true, true]);
    let mut region = CellSet::new();
    for y in 0..width {
        for x in 0..nx {
            region.insert(2, ix.pid(0, 1, &[x, y]));
        }
    }
    // Handle D^2 x S^0: two triangle-fan disks whose rims match the torus
    // circles.
    let spacing = lengths[0] / sc::<S>(nx as f64);
    let disk = ball_mesh::<S>(2, nx, spacing)?;
    let mut asm = MeshAssembler::new(2);
    asm.add_piece(&disk, false);
    asm.add_piece(&disk, true);
    let (handle, _) = asm.finish()?;
    Ok(SurgeryPlan {
        p: 1,
        q: 1,
        region,
        collar_levels: 4,
        handle,
    })
}

/// Plan for 0-surgery on a cubed sphere (odd n): removes the two opposite
/// face-center cells and bridges them with a product tube D^1 x S^1.
pub fn plan_sphere_tube_surgery<S: Scalar>(m: &Mesh<S>) -> Result<SurgeryPlan<S>> {
    let n = match &m.generator {
        Some(Generator::CubedSphere { n, .. }) => *n,
        _ => Err(KareaError::Plan("tube surgery expects a cubed sphere".into()))?,
    };
    if n % 2 == 0 {
        return Err(KareaError::Plan(
            "tube surgery needs odd cubed-sphere resolution".into(),
        ));
    }
    // Locate the two cells whose four vertices have extreme average z in
    // the generator's projected coordinates; by symmetry these are the
    // face-center cells of the z = +-1 faces. We identify them as the two
    // cells all of whose vertices have maximal/minimal distance-rank along
    // the third axis: reconstructed from combinatorics via eccentricity is
    // brittle, so use the boundary-extraction indexing directly instead.
    let (c_top, c_bot) = cubed_sphere_center_cells(n, m)?;
    let mut region = CellSet::new();
    region.insert(2, c_top);
    region.insert(2, c_bot);
    let keep: BTreeSet<usize> = (0..m.top_dim_cells())
        .filter(|&c| c != c_top && c != c_bot)
        .collect();
    let (complement, _) = extract_subcomplex(m, &keep)?;
    let (b, _, _) = extract_boundary_complex(&complement)?;
    // Split the two boundary circles.
    let (labels, comps) = b.vertex_components();
    if comps != 2 {
        return Err(KareaError::Plan("expected two boundary circles".into()));
    }
    let keep_tops: BTreeSet<usize> = (0..b.edges.len())
        .filter(|&e| labels[b.edges[e][0]] == 0)
        .collect();
    let (c1, _) = extract_subcomplex(&b, &keep_tops)?;
    let other_tops: BTreeSet<usize> = (0..b.edges.len())
        .filter(|&e| labels[b.edges[e][0]] == 1)
        .collect();
    let (c2, _) = extract_subcomplex(&b, &other_tops)?;
    let iso = find_isomorphism(&c1, &c2)
        .ok_or_else(|| KareaError::Plan("hole circles are not isomorphic".into()))?;
    let metric_far = metric_through_iso(&c1, &c2, &iso)?;
    let ts: Vec<S> = (0..=4).map(|i| sc::<S>(i as f64)).collect();
    let (handle, _) = product_with_path(&c1, &ts, Some((&SliceMetric::of(&c1), &metric_far)))?;
    let mut handle = handle;
    handle.collar = None;
    Ok(SurgeryPlan {
        p: 0,
        q: 2,
        region,
        collar_levels: 4,
        handle,
    })
}

/// The two antipodal face-center plaquettes of a cubed sphere.
fn cubed_sphere_center_cells<S: Scalar>(n: usize, m: &Mesh<S>) -> Result<(usize, usize)> {
    // The generator projects the cube surface; opposite face centers are
    // the unique pair of cells at maximal combinatorial distance whose
    // edge lengths are all equal and minimal on their face. Rather than
    // reverse-engineering coordinates, find for each plaquette the vertex
    // set's graph eccentricity pattern: face-center cells are the two
    // whose minimum graph distance to each other is the diameter.
    let adj = {
        let mut adj = vec![Vec::new(); m.num_vertices];
        for [t, h] in &m.edges {
            adj[*t].push(*h);
            adj[*h].push(*t);
        }
        adj
    };
    let bfs = |start: &BTreeSet<usize>| -> Vec<usize> {
        let mut dist = vec![usize::MAX; m.num_vertices];
        let mut queue = std::collections::VecDeque::new();
        for &v in start {
            dist[v] = 0;
            queue.push_back(v);
        }
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    };
    // Square symmetry: a face-center cell's four vertices sit at equal
    // distance from every cube corner ring; operationally, pick the cell
    // maximizing the minimum distance to the 8 corner vertices (degree-3
    // vertices of the cubed sphere).
    let corners: BTreeSet<usize> = (0..m.num_vertices)
        .filter(|&v| adj[v].len() == 3)
        .collect();
    if corners.len() != 8 {
        return Err(KareaError::Plan("mesh lacks cubed-sphere corners".into()));
    }
    let dist = bfs(&corners);
    let score = |p: usize| -> usize {
        m.cell_vertices(2, p).into_iter().map(|v| dist[v]).min().unwrap_or(0)
    };
    let best = (0..m.plaquettes.len()).max_by_key(|&p| score(p)).unwrap();
    let far = bfs(&m.cell_vertices(2, best));
    let other = (0..m.plaquettes.len())
        .filter(|&p| p != best && score(p) == score(best))
        .max_by_key(|&p| m.cell_vertices(2, p).into_iter().map(|v| far[v]).min().unwrap_or(0))
        .ok_or_else(|| KareaError::Plan("no antipodal center cell found".into()))?;
    if n >= 3 && score(other) != score(best) {
        return Err(KareaError::Plan("center cells are asymmetric".into()));
    }
    Ok((best, other))
}

/// Plan for 1-surgery on a hypercubic 4-torus along an essential
/// S^1 x D^3 column (all x, fixed unit block in y,z,w).
pub fn plan_torus4_ring_surgery<S: Scalar>(m: &Mesh<S>) -> Result<SurgeryPlan<S>> {
    let (dims, lengths) = torus_generator(m)?;
    if dims.len() != 4 {
        return Err(KareaError::Plan("ring surgery expects a 4-torus".into()));
    }
    let n = dims[0];
    let spacing = lengths[0] / sc::<S>(n as f64);
    let ix = BoxIndexer::new(dims.clone(), vec![true; 4]);
    let mut region = CellSet::new();
    for x in 0..n {
        region.insert(4, ix.cell_id(4, &[0, 1, 2, 3], &[x, 0, 0, 0]));
    }
    // Handle D^2 x S^2 with rim resolution n and unit shell.
    let disk = ball_mesh::<S>(2, n, spacing)?;
    let s2 = shell::<S>(2, 1, spacing)?;
    let (handle, _) = product(&disk, &s2)?;
    Ok(SurgeryPlan {
        p: 1,
        q: 3,
        region,
        collar_levels: 4,
        handle,
    })
}
