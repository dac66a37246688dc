//! Bundle transplantation across combinatorial surgery: flatten the
//! collar, cut at t = 0, trivialize the cut slice, damp the connection to
//! an exact-identity seam, and cap both halves so the Chern bookkeeping
//! identity between the glued manifold and its two closed pieces can be
//! checked numerically.

use crate::bundle::{
    curvature, gauge, monopole_bundle, perturb, restrict_subcomplex, trivial_bundle,
    write_through_piece_map, Bundle, FluxSpec, GaugeTransform,
};
use crate::chern::chern_densities;
use crate::error::{KareaError, Result};
use crate::linalg::{expm_antiherm, identity, op_norm, unitary_log, CMat};
use crate::mesh::{
    cut_at, double, extract_boundary_complex, extract_subcomplex, find_isomorphism,
    glue_with_flip_retry, metric_through_iso, product_with_path, region_from_piece, remap_collar,
    CellSet, ConnectedSum, ExtractMaps, Generator, Mesh, PieceFinalMap, SignedCell,
    SliceMetric, SliceTopology, SurgeryPlan,
};
use crate::scalar::{sc, Scalar};
use crate::trivialize::{
    layer_edge_dir, trivialize, Obstruction, ObstructionKind, TrivializeOutcome,
};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

const LOG_GUARD: f64 = 1e-6;
const SEAM_TOL: f64 = 1e-9;

/// Name of the region (and flat-region flag) holding the trivially
/// connected cap glued onto a cut piece.
pub const CAP_REGION: &str = "cap";

/// One row of the transplant bookkeeping table.
#[derive(Clone, Debug, serde::Serialize)]
#[serde(bound(serialize = "S: Scalar"))]
pub struct ChernBookkeeping<S: Scalar> {
    pub monomial: String,
    /// Total over the (flattened) input bundle.
    pub total_input: S,
    /// Total over the reconstituted pre-surgery side M' ∪ Y.
    pub total_my: S,
    /// Total over the capped handle side X ∪ (−Y).
    pub total_xy: S,
}

/// Outcome of a successful transplant: both reconstituted closed bundles,
/// the per-monomial integral table, and the bookkeeping defect
/// |∫ input − ∫ M'∪Y − ∫ X∪(−Y)| (worst monomial).
#[derive(Clone, Debug)]
pub struct TransplantResult<S: Scalar> {
    pub bundle_my: Bundle<S>,
    pub bundle_xy: Bundle<S>,
    pub integrals: Vec<ChernBookkeeping<S>>,
    pub identity_residual: S,
    /// Cell maps input mesh -> M-side cut piece, and cut piece -> bundle_my
    /// mesh (for restriction checks).
    pub my_cut_maps: ExtractMaps,
    pub my_piece_map: PieceFinalMap,
    pub xy_cut_maps: ExtractMaps,
    pub xy_piece_map: PieceFinalMap,
}

#[derive(Clone, Debug)]
pub enum TransplantOutcome<S: Scalar> {
    Done(TransplantResult<S>),
    Obstructed(Obstruction<S>),
}

impl<S: Scalar> TransplantOutcome<S> {
    pub fn result(self) -> Result<TransplantResult<S>> {
        match self {
            TransplantOutcome::Done(r) => Ok(r),
            TransplantOutcome::Obstructed(o) => Err(KareaError::Precondition(format!(
                "transplant is obstructed: {:?} at cell {} (value {:.3e}): {}",
                o.kind,
                o.witness_cell,
                o.witness_value.to_f64().unwrap_or(f64::NAN),
                o.detail
            ))),
        }
    }
}

enum CapStyle {
    /// One top cell per cut-boundary component (p = 0: the components are
    /// sphere-like and the removed piece was a disjoint union of cells).
    Filler,
    /// A product tube joining the two cut circles (p = 1, q = 1).
    Tube,
}

/// Transplants a bundle over a surgered mesh back onto its two closed
/// constituents. Requires the `M_prime`/`X` region labels and the collar
/// that `mesh::surgery` installs.
pub fn transplant<S: Scalar>(
    b: &Bundle<S>,
    plan: &SurgeryPlan<S>,
    eps0: S,
) -> Result<TransplantOutcome<S>> {
    if plan.p + plan.q != b.base.dim {
        return Err(KareaError::Plan(
            "plan dimensions do not match the bundle's mesh".into(),
        ));
    }
    match (plan.p, plan.q) {
        (1, 1) => run_transplant(b, eps0, "M_prime", "X", CapStyle::Tube, 1, true),
        (0, q) => run_transplant(b, eps0, "M_prime", "X", CapStyle::Filler, q, false),
        (p, q) => Err(KareaError::Unsupported(format!(
            "transplant across S^{} x S^{} cut slices is not implemented",
            p,
            q - 1
        ))),
    }
}

/// Transplant for connected sums (regions `M1`/`M2`): cuts the joining
/// tube at t = 0 and restores each summand by filling the cut sphere.
pub fn transplant_sum<S: Scalar>(b: &Bundle<S>, eps0: S) -> Result<TransplantOutcome<S>> {
    let dim = b.base.dim;
    run_transplant(b, eps0, "M1", "M2", CapStyle::Filler, dim, false)
}

fn has_top_cells<S: Scalar>(m: &Mesh<S>, label: &str) -> bool {
    m.regions
        .get(label)
        .map_or(false, |set| !set.cells[m.dim].is_empty())
}

fn run_transplant<S: Scalar>(
    b: &Bundle<S>,
    eps0: S,
    m_label: &str,
    x_label: &str,
    cap: CapStyle,
    q: usize,
    double_path: bool,
) -> Result<TransplantOutcome<S>> {
    if eps0 <= S::zero() {
        return Err(KareaError::Config("eps0 must be positive".into()));
    }
    if !b.base.regions.contains_key(m_label) || !b.base.regions.contains_key(x_label) {
        return Err(KareaError::Precondition(format!(
            "mesh lacks the {}/{} region labels of a surgered mesh",
            m_label, x_label
        )));
    }
    match curvature(b) {
        Ok(_) => {}
        Err(KareaError::BranchCutAt {
            plaquette,
            distance,
        }) => {
            return Ok(TransplantOutcome::Obstructed(Obstruction {
                kind: ObstructionKind::BranchCut,
                witness_cell: plaquette,
                witness_value: sc(distance),
                detail: "plaquette holonomy on the log branch cut".into(),
            }))
        }
        Err(e) => return Err(e),
    }

    let bf = crate::trivialize::flatten_collar(b)?;
    let rep_in = chern_densities(&bf)?;

    let mut pieces = cut_at(&bf.base, &[S::zero()])?;
    if pieces.len() != 2 {
        return Err(KareaError::Invariant("cut did not produce two pieces".into()));
    }
    let m_first = has_top_cells(&pieces[0].mesh, m_label);
    let x_first = has_top_cells(&pieces[0].mesh, x_label);
    if m_first == x_first {
        return Err(KareaError::Invariant(
            "cut pieces do not separate the surgery regions".into(),
        ));
    }
    let (piece_m, piece_x) = if m_first {
        let px = pieces.pop().unwrap();
        (pieces.pop().unwrap(), px)
    } else {
        let pm = pieces.pop().unwrap();
        (pieces.pop().unwrap(), pm)
    };
    let mesh_m = Arc::new(piece_m.mesh.clone());
    let mesh_x = Arc::new(piece_x.mesh.clone());
    let pb_m = restrict_subcomplex(&bf, &mesh_m, &piece_m.maps);
    let pb_x = restrict_subcomplex(&bf, &mesh_x, &piece_x.maps);

    // The cut slice bundle, read off the X side (both copies carry the
    // same transports).
    let collar_x = mesh_x
        .collar
        .as_ref()
        .ok_or_else(|| KareaError::Invariant("cut piece lost its collar".into()))?;
    let lx = cut_layer_index(collar_x)?;
    let slice = collar_x.slice.clone();
    let slice_bundle = slice_bundle_at(&pb_x, &collar_x.layers[lx], &slice)?;

    // Slice trivialization: directly over the slice complex, or (p = 1)
    // over the double of the handle-side piece, restricted to the seam.
    let g: Vec<CMat<S>> = if double_path {
        let (dmesh, dmaps) = double(&piece_x.mesh)?;
        let dmesh = Arc::new(dmesh);
        let mut slots: Vec<Option<CMat<S>>> = vec![None; dmesh.edges.len()];
        write_through_piece_map(&pb_x, &dmaps[0], &mut slots, sc(SEAM_TOL))?;
        write_through_piece_map(&pb_x, &dmaps[1], &mut slots, sc(SEAM_TOL))?;
        let transport: Vec<CMat<S>> = slots
            .into_iter()
            .map(|s| s.ok_or_else(|| KareaError::Invariant("double missed an edge".into())))
            .collect::<Result<_>>()?;
        let db = Bundle {
            base: dmesh,
            rank: b.rank,
            transport,
            flat_regions: Vec::new(),
        };
        let cert = match trivialize(&db, eps0)? {
            TrivializeOutcome::Trivial(c) => c,
            TrivializeOutcome::Obstructed(o) => return Ok(TransplantOutcome::Obstructed(o)),
        };
        (0..slice.num_vertices)
            .map(|k| {
                let pv = collar_x.layers[lx].cells[0][k];
                cert.gauge.frame_change[dmaps[0].vertex[pv]].clone()
            })
            .collect()
    } else {
        match trivialize(&slice_bundle, eps0)? {
            TrivializeOutcome::Trivial(c) => c.gauge.frame_change,
            TrivializeOutcome::Obstructed(mut o) => {
                if q == 2 {
                    o.kind = ObstructionKind::NotSimplyConnected;
                    o.detail = format!("cut slice contains a circle factor: {}", o.detail);
                }
                return Ok(TransplantOutcome::Obstructed(o));
            }
        }
    };

    // Logs of the gauged slice transports; these are what the damping
    // spreads over the two collar layers next to the cut.
    let mut omega = Vec::with_capacity(slice.edges.len());
    let idm = identity::<S>(b.rank);
    let mut worst = S::zero();
    for (k, [a, h]) in slice.edges.iter().enumerate() {
        let v = &g[*h] * &slice_bundle.transport[k] * g[*a].adjoint();
        let d = op_norm(&(&v - &idm));
        if d > worst {
            worst = d;
        }
        match unitary_log(&v, sc(LOG_GUARD)) {
            Ok(l) => omega.push(l),
            Err(KareaError::BranchCut { distance }) => {
                return Ok(TransplantOutcome::Obstructed(Obstruction {
                    kind: ObstructionKind::BranchCut,
                    witness_cell: k,
                    witness_value: sc(distance),
                    detail: "gauged slice transport on the log branch cut".into(),
                }))
            }
            Err(e) => return Err(e),
        }
    }
    if worst > eps0 * sc(1.0 + 1e-9) {
        return Err(KareaError::Invariant(format!(
            "slice gauge residual {:.3e} exceeds eps0",
            worst.to_f64().unwrap_or(f64::NAN)
        )));
    }

    let damped_m = damp_piece(&pb_m, &mesh_m, &slice, &g, &omega)?;
    let damped_x = damp_piece(&pb_x, &mesh_x, &slice, &g, &omega)?;

    let (bundle_my, my_piece_map) = cap_and_glue(&piece_m.mesh, &damped_m, &cap)?;
    let (bundle_xy, xy_piece_map) = cap_and_glue(&piece_x.mesh, &damped_x, &cap)?;

    let rep_my = chern_densities(&bundle_my)?;
    let rep_xy = chern_densities(&bundle_xy)?;
    let mut integrals = Vec::with_capacity(rep_in.basis.len());
    let mut identity_residual = S::zero();
    for (i, name) in rep_in.basis.iter().enumerate() {
        let (t_in, t_my, t_xy) = (rep_in.totals[i], rep_my.totals[i], rep_xy.totals[i]);
        let r = (t_in - t_my - t_xy).abs();
        if r > identity_residual {
            identity_residual = r;
        }
        integrals.push(ChernBookkeeping {
            monomial: name.to_string(),
            total_input: t_in,
            total_my: t_my,
            total_xy: t_xy,
        });
    }
    Ok(TransplantOutcome::Done(TransplantResult {
        bundle_my,
        bundle_xy,
        integrals,
        identity_residual,
        my_cut_maps: piece_m.maps,
        my_piece_map,
        xy_cut_maps: piece_x.maps,
        xy_piece_map,
    }))
}

/// Index of the piece-collar layer sitting on the cut (t = 0); it is an
/// end layer of the piece's restricted collar.
fn cut_layer_index<S: Scalar>(collar: &crate::mesh::Collar<S>) -> Result<usize> {
    let l = collar.layer_at(S::zero());
    if collar.layers[l].t.abs() > sc(1e-9) {
        return Err(KareaError::Invariant("piece collar lost the cut layer".into()));
    }
    if l != 0 && l + 1 != collar.layers.len() {
        return Err(KareaError::Invariant("cut layer is not a collar end".into()));
    }
    Ok(l)
}

/// The bundle induced on the cut slice, in the slice's own indexing.
fn slice_bundle_at<S: Scalar>(
    pb: &Bundle<S>,
    layer: &crate::mesh::CollarLayer<S>,
    slice: &SliceTopology<S>,
) -> Result<Bundle<S>> {
    let mut sm = Mesh::<S>::empty(slice.dim);
    sm.num_vertices = slice.num_vertices;
    sm.edges = slice.edges.clone();
    sm.edge_length = slice.edge_length.clone();
    sm.plaquettes = slice.plaquettes.clone();
    sm.plaquette_area = slice.plaquette_area.clone();
    sm.cells3 = slice.cells3.clone();
    sm.cell3_volume = slice.cell3_volume.clone();
    sm.boundary = sm.compute_boundary();
    let mut transport = Vec::with_capacity(slice.edges.len());
    for k in 0..slice.edges.len() {
        let (id, s) = layer_edge_dir(&pb.base, layer, slice, k)?;
        transport.push(pb.transport_along(id, s));
    }
    Ok(Bundle {
        base: Arc::new(sm),
        rank: pb.rank,
        transport,
        flat_regions: Vec::new(),
    })
}

/// Switches the cut layer into the trivialized slice frame and interpolates
/// the two layers next to the cut through chi = 0, 1/2, so the seam
/// transports are bit-exactly the identity while everything from the second
/// layer inward keeps its original holonomies.
fn damp_piece<S: Scalar>(
    pb: &Bundle<S>,
    mesh: &Arc<Mesh<S>>,
    slice: &SliceTopology<S>,
    g: &[CMat<S>],
    omega: &[CMat<S>],
) -> Result<Bundle<S>> {
    let collar = mesh
        .collar
        .as_ref()
        .ok_or_else(|| KareaError::Invariant("cut piece lost its collar".into()))?;
    if collar.layers.len() < 3 {
        return Err(KareaError::Unsupported(
            "piece collar too short to damp (needs at least 3 layers)".into(),
        ));
    }
    let l0 = cut_layer_index(collar)?;
    let d1 = if l0 == 0 { 1 } else { l0 - 1 };
    let cut = &collar.layers[l0];
    let mid = &collar.layers[d1];
    let mut frames = vec![identity::<S>(pb.rank); mesh.num_vertices];
    for k in 0..slice.num_vertices {
        frames[cut.cells[0][k]] = g[k].clone();
    }
    let gt = GaugeTransform {
        rank: pb.rank,
        frame_change: frames,
    };
    let mut out = gauge(pb, &gt)?;
    let idm = identity::<S>(pb.rank);
    let half: S = sc(0.5);
    for k in 0..slice.edges.len() {
        let (e0, _) = layer_edge_dir(mesh, cut, slice, k)?;
        out.transport[e0] = idm.clone();
        let (e1, dir) = layer_edge_dir(mesh, mid, slice, k)?;
        let [a, h] = slice.edges[k];
        let w = g[h].adjoint() * expm_antiherm(&omega[k].scale(half)) * &g[a];
        out.transport[e1] = if dir > 0 { w } else { w.adjoint() };
    }
    Ok(out)
}

fn remap_cellset(set: &CellSet, map: &PieceFinalMap) -> CellSet {
    let mut out = CellSet::new();
    for &v in &set.cells[0] {
        out.insert(0, map.vertex[v]);
    }
    for (d, list) in [
        (1usize, &map.edge),
        (2, &map.plaq),
        (3, &map.cell3),
        (4, &map.cell4),
    ] {
        for &id in &set.cells[d] {
            out.insert(d, list[id].0);
        }
    }
    out
}

/// Glues the cap onto the cut boundary of a piece and transfers the damped
/// transports; the cap itself is trivially connected and flagged flat.
fn cap_and_glue<S: Scalar>(
    piece: &Mesh<S>,
    damped: &Bundle<S>,
    cap: &CapStyle,
) -> Result<(Bundle<S>, PieceFinalMap)> {
    let (cap_mesh, ids) = match cap {
        CapStyle::Filler => build_filler_cap(piece)?,
        CapStyle::Tube => build_tube_cap(piece)?,
    };
    let identify: Vec<(usize, usize, usize, usize)> =
        ids.iter().map(|&(cv, pv)| (0, pv, 1, cv)).collect();
    let outcome = glue_with_flip_retry(&[piece, &cap_mesh], &identify)?;
    let mut glued = outcome.mesh;
    let mut regions = BTreeMap::new();
    for (name, set) in &piece.regions {
        regions.insert(name.clone(), remap_cellset(set, &outcome.piece_maps[0]));
    }
    regions.insert(
        CAP_REGION.to_string(),
        region_from_piece(&outcome.piece_maps[1]),
    );
    glued.regions = regions;
    if let Some(c) = &piece.collar {
        glued.collar = Some(remap_collar(c, &outcome.piece_maps[0]));
    }
    glued.generator = Some(Generator::Other);
    glued.validate()?;
    let glued = Arc::new(glued);
    let cap_arc = Arc::new(cap_mesh);
    let mut slots: Vec<Option<CMat<S>>> = vec![None; glued.edges.len()];
    write_through_piece_map(damped, &outcome.piece_maps[0], &mut slots, sc(SEAM_TOL))?;
    write_through_piece_map(
        &trivial_bundle(&cap_arc, damped.rank),
        &outcome.piece_maps[1],
        &mut slots,
        sc(SEAM_TOL),
    )?;
    let transport: Vec<CMat<S>> = slots
        .into_iter()
        .map(|s| s.ok_or_else(|| KareaError::Invariant("glued mesh has an uncovered edge".into())))
        .collect::<Result<_>>()?;
    let bundle = Bundle {
        base: glued,
        rank: damped.rank,
        transport,
        flat_regions: vec![CAP_REGION.to_string()],
    };
    bundle.validate()?;
    let mut piece_maps = outcome.piece_maps;
    Ok((bundle, piece_maps.swap_remove(0)))
}

/// One top cell per cut-boundary component, with the component's cells as
/// its boundary shell. Returns the cap and (cap vertex, piece vertex)
/// identifications.
fn build_filler_cap<S: Scalar>(piece: &Mesh<S>) -> Result<(Mesh<S>, Vec<(usize, usize)>)> {
    let (bd, bd_maps, _) = extract_boundary_complex(piece)?;
    let dim = piece.dim;
    let mut cap = Mesh::empty(dim);
    cap.num_vertices = bd.num_vertices;
    cap.edges = bd.edges.clone();
    cap.edge_length = bd.edge_length.clone();
    let (labels, comps) = bd.vertex_components();
    match dim {
        2 => {
            // Walk each induced-oriented circle into an ordered cycle.
            let mut next: HashMap<usize, usize> = HashMap::new();
            for (e, [t, _]) in bd.edges.iter().enumerate() {
                if next.insert(*t, e).is_some() {
                    return Err(KareaError::Invariant(
                        "cut boundary is not a disjoint union of circles".into(),
                    ));
                }
            }
            for comp in 0..comps {
                let start = (0..bd.num_vertices)
                    .find(|&v| labels[v] == comp)
                    .ok_or_else(|| KareaError::Invariant("empty boundary component".into()))?;
                let mut rim_edges = Vec::new();
                let mut rim_verts = Vec::new();
                let mut perimeter = S::zero();
                let mut v = start;
                loop {
                    rim_verts.push(v);
                    let &e = next
                        .get(&v)
                        .ok_or_else(|| KareaError::Invariant("open boundary walk".into()))?;
                    rim_edges.push(e);
                    perimeter += bd.edge_length[e];
                    v = bd.edges[e][1];
                    if v == start {
                        break;
                    }
                    if rim_edges.len() > bd.edges.len() {
                        return Err(KareaError::Invariant("boundary walk does not close".into()));
                    }
                }
                // Triangle fan over a hub vertex (plaquettes must stay
                // triangles or quads); spoke length = radius of the round
                // disk with this perimeter.
                let hub = cap.num_vertices;
                cap.num_vertices += 1;
                let radius = perimeter / sc::<S>(std::f64::consts::TAU);
                let m = rim_verts.len();
                let spoke_base = cap.edges.len();
                for &rv in &rim_verts {
                    cap.edges.push([hub, rv]);
                    cap.edge_length.push(radius);
                }
                for (j, &e) in rim_edges.iter().enumerate() {
                    let s0 = spoke_base + j;
                    let s1 = spoke_base + (j + 1) % m;
                    cap.plaquettes.push(vec![
                        SignedCell::new(s0, 1),
                        SignedCell::new(e, 1),
                        SignedCell::new(s1, -1),
                    ]);
                    cap.plaquette_area
                        .push(radius * bd.edge_length[e] / sc::<S>(2.0));
                }
            }
        }
        4 => {
            cap.plaquettes = bd.plaquettes.clone();
            cap.plaquette_area = bd.plaquette_area.clone();
            cap.cells3 = bd.cells3.clone();
            cap.cell3_volume = bd.cell3_volume.clone();
            for comp in 0..comps {
                let mut faces = Vec::new();
                let mut vol = S::zero();
                for c in 0..bd.cells3.len() {
                    let rep = *bd
                        .cell_vertices(3, c)
                        .iter()
                        .next()
                        .ok_or_else(|| KareaError::Invariant("3-cell without vertices".into()))?;
                    if labels[rep] == comp {
                        faces.push(SignedCell::new(c, 1));
                        vol += bd.cell3_volume[c];
                    }
                }
                if faces.is_empty() {
                    return Err(KareaError::Invariant("empty boundary component".into()));
                }
                cap.cells4.push(faces);
                cap.cell4_volume.push(vol);
            }
        }
        d => {
            return Err(KareaError::Unsupported(format!(
                "no filler cap in dimension {}",
                d
            )))
        }
    }
    cap.boundary = cap.compute_boundary();
    let ids = (0..bd.num_vertices).map(|k| (k, bd_maps.back[0][k])).collect();
    Ok((cap, ids))
}

/// Product tube S^1 x D^1 joining the two cut circles (the p = 1, q = 1
/// replacement piece Y).
fn build_tube_cap<S: Scalar>(piece: &Mesh<S>) -> Result<(Mesh<S>, Vec<(usize, usize)>)> {
    let (bd, bd_maps, _) = extract_boundary_complex(piece)?;
    if bd.dim != 1 {
        return Err(KareaError::Unsupported(
            "tube caps need circle boundaries".into(),
        ));
    }
    let (labels, comps) = bd.vertex_components();
    if comps != 2 {
        return Err(KareaError::Gluing("expected two cut circles".into()));
    }
    let side = |want: usize| -> BTreeSet<usize> {
        (0..bd.edges.len())
            .filter(|&e| labels[bd.edges[e][0]] == want)
            .collect()
    };
    let (c1, m1) = extract_subcomplex(&bd, &side(0))?;
    let (c2, m2) = extract_subcomplex(&bd, &side(1))?;
    let iso = find_isomorphism(&c1, &c2)
        .ok_or_else(|| KareaError::Gluing("cut circles are not isomorphic".into()))?;
    let metric = metric_through_iso(&c1, &c2, &iso)?;
    let ts: Vec<S> = (0..=2).map(|i| sc::<S>(i as f64)).collect();
    let (mut tube, layout) =
        product_with_path(&c1, &ts, Some((&SliceMetric::of(&c1), &metric)))?;
    tube.collar = None;
    let mut ids = Vec::new();
    for k in 0..c1.num_vertices {
        ids.push((layout.id(0, k, 0, 0), bd_maps.back[0][m1.back[0][k]]));
        ids.push((layout.id(0, k, 0, 2), bd_maps.back[0][m2.back[0][iso[k]]]));
    }
    Ok((tube, ids))
}

/// Pullback along the degree-1 collapse of the second summand: transports
/// are copied on the first summand's surviving cells and identity on the
/// tube and the second summand. Chern numbers are preserved whenever the
/// input is flat on the removed cell.
pub fn collapse_map_pullback<S: Scalar>(
    b: &Bundle<S>,
    sum: &ConnectedSum<S>,
) -> Result<Bundle<S>> {
    if sum.m1_map[0].len() != b.base.num_vertices || sum.m1_map[1].len() != b.base.edges.len() {
        return Err(KareaError::Config(
            "bundle base does not match the first summand".into(),
        ));
    }
    for label in ["M1", "M2", "collar"] {
        if !sum.mesh.regions.contains_key(label) {
            return Err(KareaError::Config(
                "connected sum lacks its region labels".into(),
            ));
        }
    }
    let target = Arc::new(sum.mesh.clone());
    let mut transport = vec![identity::<S>(b.rank); target.edges.len()];
    for (e, slot) in sum.m1_map[1].iter().enumerate() {
        if let Some((ne, s)) = slot {
            transport[*ne] = b.transport_along(e, *s);
        }
    }
    let out = Bundle {
        base: target,
        rank: b.rank,
        transport,
        flat_regions: Vec::new(),
    };
    out.validate()?;
    Ok(out)
}

/// One corpus bundle of the threshold scan.
#[derive(Clone, Debug, serde::Serialize)]
#[serde(bound(serialize = "S: Scalar"))]
pub struct ThresholdSample<S: Scalar> {
    pub flux: i64,
    pub amplitude: S,
    pub seed: u64,
    pub sup_norm: S,
    pub max_basis_total: S,
}

/// Measured curvature threshold below which every corpus bundle has
/// vanishing basis Chern numbers.
#[derive(Clone, Debug, serde::Serialize)]
#[serde(bound(serialize = "S: Scalar"))]
pub struct ThresholdScan<S: Scalar> {
    pub chern_tol: S,
    pub samples: Vec<ThresholdSample<S>>,
    /// Smallest ‖R‖ among samples with a non-vanishing Chern number; every
    /// sample strictly below it has all basis totals under `chern_tol`.
    pub delta_star: Option<S>,
}

/// Sweeps seeded perturbations of flux bundles over a closed surface and
/// reports the measured Chern-vanishing curvature threshold.
pub fn threshold_scan<S: Scalar>(
    base: &Arc<Mesh<S>>,
    fluxes: &[i64],
    amplitudes: &[S],
    seeds: std::ops::Range<u64>,
    chern_tol: S,
) -> Result<ThresholdScan<S>> {
    let mut samples = Vec::new();
    for &flux in fluxes {
        let b0 = if flux == 0 {
            trivial_bundle(base, 1)
        } else {
            monopole_bundle(base, &FluxSpec::Simple(flux))?
        };
        for &amplitude in amplitudes {
            for seed in seeds.clone() {
                let b = perturb(&b0, amplitude, seed);
                let sup_norm = curvature(&b)?.sup_norm;
                let rep = chern_densities(&b)?;
                let max_basis_total = rep
                    .totals
                    .iter()
                    .fold(S::zero(), |m, t| if t.abs() > m { t.abs() } else { m });
                samples.push(ThresholdSample {
                    flux,
                    amplitude,
                    seed,
                    sup_norm,
                    max_basis_total,
                });
            }
        }
    }
    let mut delta_star: Option<S> = None;
    for s in &samples {
        if s.max_basis_total > chern_tol {
            delta_star = Some(match delta_star {
                Some(d) if d < s.sup_norm => d,
                _ => s.sup_norm,
            });
        }
    }
    Ok(ThresholdScan {
        chern_tol,
        samples,
        delta_star,
    })
}

/// Closes a mesh with boundary by gluing one filler top cell per boundary
/// component; the new cells form the `cap` region.
pub fn cap_off<S: Scalar>(m: &Mesh<S>) -> Result<Mesh<S>> {
    if m.boundary.is_empty() {
        return Err(KareaError::Config("mesh is already closed".into()));
    }
    let (cap_mesh, ids) = build_filler_cap(m)?;
    let identify: Vec<(usize, usize, usize, usize)> =
        ids.iter().map(|&(cv, pv)| (0, pv, 1, cv)).collect();
    let outcome = glue_with_flip_retry(&[m, &cap_mesh], &identify)?;
    let mut glued = outcome.mesh;
    let mut regions = BTreeMap::new();
    for (name, set) in &m.regions {
        regions.insert(name.clone(), remap_cellset(set, &outcome.piece_maps[0]));
    }
    regions.insert(
        CAP_REGION.to_string(),
        region_from_piece(&outcome.piece_maps[1]),
    );
    glued.regions = regions;
    if let Some(c) = &m.collar {
        glued.collar = Some(remap_collar(c, &outcome.piece_maps[0]));
    }
    glued.generator = Some(Generator::Other);
    glued.validate()?;
    Ok(glued)
}
