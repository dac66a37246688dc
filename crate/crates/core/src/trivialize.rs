//! Constructive trivialization: near-identity global frames for
//! small-curvature bundles over simply connected complexes, and collar
//! extension to a flat trivial end through a cutoff profile.

use crate::bundle::{curvature, gauge, Bundle, GaugeTransform};
use crate::chern::chern_densities;
use crate::error::{KareaError, Result};
use crate::linalg::{expm_antiherm, identity, op_norm, unitary_log, CMat};
use crate::mesh::{boundary2_columns, Collar, CollarLayer, GfSpan, Mesh, SignedCell, SliceTopology};
use crate::scalar::{kahan_sum, sc, Scalar};
use std::collections::HashMap;
use std::sync::Arc;

const LOG_GUARD: f64 = 1e-6;

/// Successful trivialization: the frame change, the resulting worst edge
/// residual ‖transport' − I‖, and the residual / input-curvature ratio.
#[derive(Clone, Debug)]
pub struct FrameCertificate<S: Scalar> {
    pub gauge: GaugeTransform<S>,
    pub residual: S,
    pub constant_estimate: S,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObstructionKind {
    NonzeroChern,
    Holonomy,
    NotSimplyConnected,
    BranchCut,
}

/// Why a bundle could not be trivialized, with a recomputable witness.
#[derive(Clone, Debug)]
pub struct Obstruction<S: Scalar> {
    pub kind: ObstructionKind,
    /// Cell id (edge for holonomy witnesses, plaquette for branch cuts).
    pub witness_cell: usize,
    pub witness_value: S,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub enum TrivializeOutcome<S: Scalar> {
    Trivial(FrameCertificate<S>),
    Obstructed(Obstruction<S>),
}

impl<S: Scalar> TrivializeOutcome<S> {
    pub fn certificate(self) -> Result<FrameCertificate<S>> {
        match self {
            TrivializeOutcome::Trivial(c) => Ok(c),
            TrivializeOutcome::Obstructed(o) => Err(KareaError::Precondition(format!(
                "bundle is obstructed: {:?} at cell {} (value {:.3e}): {}",
                o.kind,
                o.witness_cell,
                o.witness_value.to_f64().unwrap_or(f64::NAN),
                o.detail
            ))),
        }
    }
}

/// Worst edge distance from the identity transport.
pub fn frame_residual<S: Scalar>(b: &Bundle<S>) -> S {
    let id = identity::<S>(b.rank);
    let mut worst = S::zero();
    for u in &b.transport {
        let d = op_norm(&(u - &id));
        if d > worst {
            worst = d;
        }
    }
    worst
}

fn sorted_adjacency<S: Scalar>(mesh: &Mesh<S>) -> Vec<Vec<(usize, usize)>> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); mesh.num_vertices];
    for (e, [t, h]) in mesh.edges.iter().enumerate() {
        adj[*t].push((*h, e));
        adj[*h].push((*t, e));
    }
    for l in &mut adj {
        l.sort_unstable();
    }
    adj
}

/// BFS shortest-path forest: per vertex the hop distance and the parent
/// with the lowest index among the previous level.
struct SpanningForest {
    parent: Vec<Option<(usize, usize)>>, // (parent vertex, connecting edge)
    /// Vertices ordered by increasing distance (roots first).
    order: Vec<usize>,
    tree_edge: Vec<bool>,
}

fn spanning_forest<S: Scalar>(
    mesh: &Mesh<S>,
    basepoint: usize,
    adj: &[Vec<(usize, usize)>],
) -> SpanningForest {
    let n = mesh.num_vertices;
    let mut dist = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    // Preferred basepoint first, then the lowest vertex of each remaining
    // component.
    let mut roots: Vec<usize> = vec![basepoint];
    roots.extend(0..n);
    let mut queue = std::collections::VecDeque::new();
    for r in roots {
        if dist[r] != usize::MAX {
            continue;
        }
        dist[r] = 0;
        queue.push_back(r);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &(w, _) in &adj[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
    }
    // Lowest-index parent at the previous BFS level.
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut tree_edge = vec![false; mesh.edges.len()];
    for v in 0..n {
        if dist[v] == 0 {
            continue;
        }
        let best = adj[v]
            .iter()
            .filter(|&&(w, _)| dist[w] + 1 == dist[v])
            .min_by_key(|&&(w, e)| (w, e));
        if let Some(&(w, e)) = best {
            parent[v] = Some((w, e));
            tree_edge[e] = true;
        }
    }
    SpanningForest {
        parent,
        order,
        tree_edge,
    }
}

/// Frame change from parallel transport along a breadth-first shortest-path
/// forest rooted at `basepoint` (other components rooted at their lowest
/// vertex). Tree-edge transports become the identity; non-tree transports
/// become the holonomies of their fundamental loops.
pub fn tree_gauge<S: Scalar>(b: &Bundle<S>, basepoint: usize) -> Result<GaugeTransform<S>> {
    let mesh = &b.base;
    if basepoint >= mesh.num_vertices {
        return Err(KareaError::Config("basepoint out of range".into()));
    }
    let adj = sorted_adjacency(mesh);
    let forest = spanning_forest(mesh, basepoint, &adj);
    let mut frame_change = vec![identity::<S>(b.rank); mesh.num_vertices];
    for &v in &forest.order {
        if let Some((p, e)) = forest.parent[v] {
            // transport'(p -> v) = I requires g(v) = g(p) · u(p -> v)^H.
            let s = if mesh.edges[e][0] == p { 1 } else { -1 };
            frame_change[v] = &frame_change[p] * b.transport_along(e, s).adjoint();
        }
    }
    Ok(GaugeTransform {
        rank: b.rank,
        frame_change,
    })
}

/// Convergence record of the relaxation sweeps.
#[derive(Clone, Debug)]
pub struct RelaxReport<S: Scalar> {
    pub gauge: GaugeTransform<S>,
    /// Objective Σ_e ‖log transport(e)‖²_F after each accepted sweep
    /// (element 0 is the initial value); non-increasing by construction.
    pub objective: Vec<S>,
    pub residual: S,
    pub sweeps: usize,
}

fn greedy_coloring(adj: &[Vec<(usize, usize)>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut color = vec![usize::MAX; n];
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for v in 0..n {
        let mut used: Vec<bool> = vec![false; classes.len() + 1];
        for &(w, _) in &adj[v] {
            if color[w] != usize::MAX {
                used[color[w].min(classes.len())] = true;
            }
        }
        let c = (0..).find(|&c| c >= used.len() || !used[c]).unwrap();
        if c == classes.len() {
            classes.push(Vec::new());
        }
        color[v] = c;
        classes[c].push(v);
    }
    classes
}

fn edge_logs<S: Scalar>(transport: &[CMat<S>]) -> Result<Vec<CMat<S>>> {
    transport
        .iter()
        .map(|u| unitary_log(u, sc(LOG_GUARD)))
        .collect()
}

fn objective_of<S: Scalar>(logs: &[CMat<S>]) -> S {
    kahan_sum(logs.iter().map(|l| {
        let f = crate::linalg::fro_norm(l);
        f * f
    }))
}

fn residual_of<S: Scalar>(transport: &[CMat<S>], rank: usize) -> S {
    let id = identity::<S>(rank);
    let mut worst = S::zero();
    for u in transport {
        let d = op_norm(&(u - &id));
        if d > worst {
            worst = d;
        }
    }
    worst
}

/// Checkerboard Lie-algebra relaxation: per sweep, each vertex class in
/// turn replaces its frame by `exp(damping · mean log)` of its incident
/// transports. The objective Σ ‖log u‖²_F is kept non-increasing by
/// reverting any sweep that raised it and halving the damping.
pub fn relax_gauge<S: Scalar>(
    b: &Bundle<S>,
    max_iters: usize,
    target_residual: S,
) -> Result<RelaxReport<S>> {
    let mesh = &b.base;
    let adj = sorted_adjacency(mesh);
    let classes = greedy_coloring(&adj);
    let mut transport = b.transport.clone();
    let mut frames = vec![identity::<S>(b.rank); mesh.num_vertices];
    let mut objective = vec![objective_of(&edge_logs(&transport)?)];
    let mut residual = residual_of(&transport, b.rank);
    let mut damping: S = sc(0.5);
    let mut sweeps = 0usize;
    while residual > target_residual && sweeps < max_iters && damping > sc(1e-6) {
        let snapshot_t = transport.clone();
        let snapshot_f = frames.clone();
        for class in &classes {
            for &v in class {
                if adj[v].is_empty() {
                    continue;
                }
                let mut x = CMat::<S>::zeros(b.rank, b.rank);
                for &(_, e) in &adj[v] {
                    let l = unitary_log(&transport[e], sc(LOG_GUARD))?;
                    if mesh.edges[e][0] == v {
                        x += l;
                    } else {
                        x -= l;
                    }
                }
                x.scale_mut(damping / sc::<S>(adj[v].len() as f64));
                let g = expm_antiherm(&x);
                frames[v] = &g * &frames[v];
                for &(_, e) in &adj[v] {
                    if mesh.edges[e][0] == v {
                        transport[e] = &transport[e] * g.adjoint();
                    } else {
                        transport[e] = &g * &transport[e];
                    }
                }
            }
        }
        let obj = objective_of(&edge_logs(&transport)?);
        if obj > *objective.last().unwrap() {
            transport = snapshot_t;
            frames = snapshot_f;
            damping *= sc(0.5);
            continue;
        }
        objective.push(obj);
        residual = residual_of(&transport, b.rank);
        sweeps += 1;
    }
    Ok(RelaxReport {
        gauge: GaugeTransform {
            rank: b.rank,
            frame_change: frames,
        },
        objective,
        residual,
        sweeps,
    })
}

/// Fundamental cycle of a non-tree edge as a signed edge chain.
fn fundamental_cycle<S: Scalar>(
    mesh: &Mesh<S>,
    forest: &SpanningForest,
    e: usize,
) -> HashMap<usize, i64> {
    let mut col: HashMap<usize, i64> = HashMap::new();
    let [t, h] = mesh.edges[e];
    col.insert(e, 1);
    for (start, weight) in [(h, 1i64), (t, -1i64)] {
        let mut v = start;
        while let Some((p, pe)) = forest.parent[v] {
            // Traversing v -> parent: +1 if the edge is stored [v, p].
            let s = if mesh.edges[pe][0] == v { 1 } else { -1 };
            *col.entry(pe).or_insert(0) += weight * s;
            v = p;
        }
    }
    col.retain(|_, v| *v != 0);
    col
}

const CHERN_OBSTRUCTION_TOL: f64 = 1e-6;

/// Produces a near-identity global frame (residual ≤ eps) by tree gauge
/// followed by relaxation, or an [`Obstruction`] naming the topological or
/// numerical reason none exists.
pub fn trivialize<S: Scalar>(b: &Bundle<S>, eps: S) -> Result<TrivializeOutcome<S>> {
    if eps <= S::zero() {
        return Err(KareaError::Config("eps must be positive".into()));
    }
    let input_curvature = match curvature(b) {
        Ok(r) => r.sup_norm,
        Err(KareaError::BranchCutAt {
            plaquette,
            distance,
        }) => {
            return Ok(TrivializeOutcome::Obstructed(Obstruction {
                kind: ObstructionKind::BranchCut,
                witness_cell: plaquette,
                witness_value: sc(distance),
                detail: "plaquette holonomy on the log branch cut".into(),
            }))
        }
        Err(e) => return Err(e),
    };
    // Nonzero Chern numbers rule out any near-identity frame regardless of
    // eps (skipped silently where the complex has no Chern-Weil data).
    if let Ok(rep) = chern_densities(b) {
        for (name, total) in rep.basis.iter().zip(&rep.totals) {
            if total.abs() > sc(CHERN_OBSTRUCTION_TOL) {
                return Ok(TrivializeOutcome::Obstructed(Obstruction {
                    kind: ObstructionKind::NonzeroChern,
                    witness_cell: 0,
                    witness_value: *total,
                    detail: format!("{} = {:.6}", name, total.to_f64().unwrap_or(f64::NAN)),
                }));
            }
        }
    }
    let tg = tree_gauge(b, 0)?;
    let tb = gauge(b, &tg)?;
    // Essential (non-fillable) loop holonomies live on non-tree edges after
    // the tree gauge; a large one cannot be relaxed away.
    if b.base.betti1() > 0 {
        let adj = sorted_adjacency(&b.base);
        let forest = spanning_forest(&b.base, 0, &adj);
        let mut span = GfSpan::new();
        for col in boundary2_columns(&b.base) {
            span.insert(col);
        }
        let id = identity::<S>(b.rank);
        for e in 0..b.base.edges.len() {
            if forest.tree_edge[e] {
                continue;
            }
            if span.contains(fundamental_cycle(&b.base, &forest, e)) {
                continue;
            }
            let r = op_norm(&(&tb.transport[e] - &id));
            if r > eps {
                return Ok(TrivializeOutcome::Obstructed(Obstruction {
                    kind: ObstructionKind::Holonomy,
                    witness_cell: e,
                    witness_value: r,
                    detail: "essential loop carries non-identity holonomy".into(),
                }));
            }
        }
    }
    let relax = match relax_gauge(&tb, 2000, eps * sc(0.5)) {
        Ok(r) => r,
        Err(KareaError::BranchCut { distance }) => {
            return Ok(TrivializeOutcome::Obstructed(Obstruction {
                kind: ObstructionKind::BranchCut,
                witness_cell: 0,
                witness_value: sc(distance),
                detail: "edge transport on the log branch cut during relaxation".into(),
            }))
        }
        Err(e) => return Err(e),
    };
    let frame_change: Vec<CMat<S>> = relax
        .gauge
        .frame_change
        .iter()
        .zip(&tg.frame_change)
        .map(|(r, t)| r * t)
        .collect();
    let combined = GaugeTransform {
        rank: b.rank,
        frame_change,
    };
    // Recheck the residual from scratch on the original input.
    let residual = frame_residual(&gauge(b, &combined)?);
    if residual > eps {
        return Err(KareaError::Invariant(format!(
            "relaxation stalled at residual {:.3e} > eps {:.3e}",
            residual.to_f64().unwrap_or(f64::NAN),
            eps.to_f64().unwrap_or(f64::NAN)
        )));
    }
    let constant_estimate = if input_curvature > S::zero() {
        residual / input_curvature
    } else {
        S::zero()
    };
    Ok(TrivializeOutcome::Trivial(FrameCertificate {
        gauge: combined,
        residual,
        constant_estimate,
    }))
}

/// Measured certificate constant for a mesh: twice the worst
/// residual / curvature ratio over a seeded corpus of perturbed trivial
/// bundles.
pub fn calibrate_constant<S: Scalar>(
    mesh: &Arc<Mesh<S>>,
    rank: usize,
    amplitude: S,
    seeds: std::ops::Range<u64>,
) -> Result<S> {
    let base = crate::bundle::trivial_bundle(mesh, rank);
    let mut worst = S::zero();
    for seed in seeds {
        let b = crate::bundle::perturb(&base, amplitude, seed);
        let cert = trivialize(&b, S::one())?.certificate()?;
        if cert.constant_estimate > worst {
            worst = cert.constant_estimate;
        }
    }
    Ok(worst * sc(2.0))
}

/// Piecewise-linear cutoff χ(t): 1 up to t = 2, 0 from t = 4 on, with
/// bounded downhill slope.
#[derive(Clone, Debug)]
pub struct CutoffProfile<S: Scalar> {
    /// (t, χ(t)) samples in increasing t order.
    pub samples: Vec<(S, S)>,
    pub slope_bound: S,
}

impl<S: Scalar> CutoffProfile<S> {
    pub fn standard() -> Self {
        CutoffProfile {
            samples: vec![
                (sc(2.0), sc(1.0)),
                (sc(3.0), sc(0.5)),
                (sc(4.0), sc(0.0)),
                (sc(5.0), sc(0.0)),
                (sc(6.0), sc(0.0)),
            ],
            slope_bound: S::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(KareaError::Config("cutoff profile needs samples".into()));
        }
        if self.slope_bound > S::one() || self.slope_bound <= S::zero() {
            return Err(KareaError::Config(
                "cutoff slope bound must lie in (0, 1]".into(),
            ));
        }
        for pair in self.samples.windows(2) {
            let (t0, c0) = pair[0];
            let (t1, c1) = pair[1];
            if t1 <= t0 {
                return Err(KareaError::Config("cutoff samples must increase".into()));
            }
            let slope = (c0 - c1) / (t1 - t0);
            if slope < S::zero() || slope > self.slope_bound {
                return Err(KareaError::Config(format!(
                    "cutoff slope {:.3} outside [0, {:.3}]",
                    slope.to_f64().unwrap_or(f64::NAN),
                    self.slope_bound.to_f64().unwrap_or(f64::NAN)
                )));
            }
        }
        for &(t, c) in &self.samples {
            if t < sc(2.0) && c != S::one() {
                return Err(KareaError::Config("cutoff must be 1 below t = 2".into()));
            }
            if t > sc(4.0) && c != S::zero() {
                return Err(KareaError::Config("cutoff must be 0 above t = 4".into()));
            }
            if c < S::zero() || c > S::one() {
                return Err(KareaError::Config("cutoff values must lie in [0,1]".into()));
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: S) -> S {
        let first = self.samples[0];
        let last = *self.samples.last().unwrap();
        if t <= first.0 {
            return first.1;
        }
        if t >= last.0 {
            return last.1;
        }
        for pair in self.samples.windows(2) {
            let (t0, c0) = pair[0];
            let (t1, c1) = pair[1];
            if t <= t1 {
                if c0 == c1 {
                    // constant segments stay bit-exact (no rounding).
                    return c0;
                }
                return c0 + (c1 - c0) * (t - t0) / (t1 - t0);
            }
        }
        last.1
    }
}

/// Mesh direction of a collar layer's copy of a slice edge: +1 when stored
/// as [tail, head] through the layer vertex table, -1 when reversed.
pub(crate) fn layer_edge_dir<S: Scalar>(
    mesh: &Mesh<S>,
    layer: &CollarLayer<S>,
    slice: &SliceTopology<S>,
    k: usize,
) -> Result<(usize, i8)> {
    let id = layer.cells[1][k];
    let [a, b] = slice.edges[k];
    let (va, vb) = (layer.cells[0][a], layer.cells[0][b]);
    let [t, h] = mesh.edges[id];
    if t == va && h == vb {
        Ok((id, 1))
    } else if t == vb && h == va {
        Ok((id, -1))
    } else {
        Err(KareaError::Invariant(format!(
            "collar layer edge {} does not match its slice edge",
            id
        )))
    }
}

/// Mesh direction of the vertical edge over slice vertex `v` between two
/// consecutive layers: +1 when stored lower -> upper.
fn vertical_edge_dir<S: Scalar>(
    mesh: &Mesh<S>,
    lower: &CollarLayer<S>,
    upper: &CollarLayer<S>,
    v: usize,
) -> Result<(usize, i8)> {
    let id = lower.vertical[0][v];
    let (lo, up) = (lower.cells[0][v], upper.cells[0][v]);
    let [t, h] = mesh.edges[id];
    if t == lo && h == up {
        Ok((id, 1))
    } else if t == up && h == lo {
        Ok((id, -1))
    } else {
        Err(KareaError::Invariant(format!(
            "collar vertical edge {} does not match its layers",
            id
        )))
    }
}

/// Pulls the bundle back along the degree-1 collar squeeze that sends
/// |t| < 2 to the t = 0 layer and stretches the remaining collar (factor
/// ≤ 2) back out to the ends. Output transports are translation-invariant
/// on |t| < 2; Chern numbers are unchanged.
pub fn flatten_collar<S: Scalar>(b: &Bundle<S>) -> Result<Bundle<S>> {
    let mesh = &b.base;
    let collar = mesh
        .collar
        .as_ref()
        .ok_or_else(|| KareaError::Config("mesh has no collar".into()))?;
    if collar.layers.len() < 5 {
        return Err(KareaError::Config(
            "collar too short to flatten (needs at least 5 layers)".into(),
        ));
    }
    let slice = &collar.slice;
    let two: S = sc(2.0);
    let (t_min, t_max) = (collar.t_range[0], collar.t_range[1]);
    let squeeze = |t: S| -> S {
        if t > two && t_max > two {
            t_max * (t - two) / (t_max - two)
        } else if t < -two && t_min < -two {
            t_min * (t + two) / (t_min + two)
        } else {
            S::zero()
        }
    };
    let target: Vec<usize> = collar
        .layers
        .iter()
        .map(|l| collar.layer_at(squeeze(l.t)))
        .collect();
    let mut transport = b.transport.clone();
    for (i, layer) in collar.layers.iter().enumerate() {
        let src = &collar.layers[target[i]];
        for k in 0..slice.edges.len() {
            let (dst_id, dst_sign) = layer_edge_dir(mesh, layer, slice, k)?;
            let (src_id, src_sign) = layer_edge_dir(mesh, src, slice, k)?;
            let u = b.transport_along(src_id, src_sign);
            transport[dst_id] = if dst_sign > 0 { u } else { u.adjoint() };
        }
    }
    for i in 0..collar.layers.len() - 1 {
        let (j0, j1) = (target[i], target[i + 1]);
        for v in 0..slice.num_vertices {
            let mut up = identity::<S>(b.rank);
            let mut composed = false;
            for m in j0..j1 {
                let (id, s) =
                    vertical_edge_dir(mesh, &collar.layers[m], &collar.layers[m + 1], v)?;
                let step = b.transport_along(id, s);
                up = if composed { &step * &up } else { step };
                composed = true;
            }
            let (dst_id, dst_sign) =
                vertical_edge_dir(mesh, &collar.layers[i], &collar.layers[i + 1], v)?;
            transport[dst_id] = if dst_sign > 0 { up } else { up.adjoint() };
        }
    }
    Ok(Bundle {
        base: b.base.clone(),
        rank: b.rank,
        transport,
        flat_regions: Vec::new(),
    })
}

/// Name of the region holding the exactly-flat end added by
/// [`collar_extend`].
pub const FLAT_END_REGION: &str = "flat_end";

/// Extends a collared bundle by four unit layers, damping the end
/// connection to the exact identity through the cutoff profile: the new
/// layer at parameter t carries `exp(χ(t)·ω₀)` in the trivialized end
/// frame, so layers past χ = 0 are bit-exactly flat trivial.
///
/// The collar connection should be translation-invariant near the end
/// (see [`flatten_collar`]); `eps0` bounds the trivialization residual of
/// the end slice.
pub fn collar_extend<S: Scalar>(
    b: &Bundle<S>,
    profile: &CutoffProfile<S>,
    eps0: S,
) -> Result<Bundle<S>> {
    profile.validate()?;
    let mesh = &b.base;
    let collar = mesh
        .collar
        .as_ref()
        .ok_or_else(|| KareaError::Config("mesh has no collar".into()))?;
    let slice = collar.slice.clone();
    if slice.dim != 1 {
        return Err(KareaError::Unsupported(
            "collar extension is implemented for 1-dimensional cross-sections".into(),
        ));
    }
    let top = collar.layers.last().unwrap().clone();
    let t_top = top.t;
    if profile.eval(t_top) != S::one() {
        return Err(KareaError::Config(
            "cutoff must equal 1 at the collar end".into(),
        ));
    }

    // Trivialize the end slice.
    let nv = slice.num_vertices;
    let ne = slice.edges.len();
    let mut sm = Mesh::<S>::empty(1);
    sm.num_vertices = nv;
    sm.edges = slice.edges.clone();
    sm.edge_length = slice.edge_length.clone();
    let mut slice_transport = Vec::with_capacity(ne);
    for k in 0..ne {
        let (id, s) = layer_edge_dir(mesh, &top, &slice, k)?;
        slice_transport.push(b.transport_along(id, s));
    }
    let slice_bundle = Bundle {
        base: Arc::new(sm),
        rank: b.rank,
        transport: slice_transport,
        flat_regions: Vec::new(),
    };
    let cert = match trivialize(&slice_bundle, eps0)? {
        TrivializeOutcome::Trivial(c) => c,
        TrivializeOutcome::Obstructed(o) => {
            return Err(KareaError::Precondition(format!(
                "end slice is not trivializable: {:?} at cell {}: {}",
                o.kind, o.witness_cell, o.detail
            )))
        }
    };
    let gauged = gauge(&slice_bundle, &cert.gauge)?;
    let omega: Vec<CMat<S>> = gauged
        .transport
        .iter()
        .map(|u| unitary_log(u, sc(LOG_GUARD)))
        .collect::<Result<_>>()?;

    // Existing induced orientation of the top-layer edges, so the appended
    // squares orient coherently against the old top cells.
    let mut induced: HashMap<usize, i64> = HashMap::new();
    for k in 0..ne {
        induced.insert(top.cells[1][k], 0);
    }
    for cycle in &mesh.plaquettes {
        for e in cycle {
            if let Some(acc) = induced.get_mut(&e.id) {
                *acc += e.sign as i64;
            }
        }
    }

    let mut m = (*b.base).clone();
    let mut transport = b.transport.clone();
    let id_mat = identity::<S>(b.rank);
    let mut new_layers: Vec<CollarLayer<S>> = Vec::new();
    let mut prev_vs: Vec<usize> = top.cells[0].clone();
    let mut prev_edges: Vec<(usize, i8)> = (0..ne)
        .map(|k| layer_edge_dir(mesh, &top, &slice, k))
        .collect::<Result<_>>()?;
    let mut prev_chi = S::one();
    let mut flips: Vec<bool> = Vec::new();
    let mut flat_plaquettes: Vec<usize> = Vec::new();
    let mut prev_layer_index = collar.layers.len() - 1;
    let mut all_layers = collar.layers.clone();

    for step in 1..=4usize {
        let t = t_top + sc::<S>(step as f64);
        let chi = profile.eval(t);
        let base_v = m.num_vertices;
        m.num_vertices += nv;
        let new_vs: Vec<usize> = (0..nv).map(|v| base_v + v).collect();
        // Vertical edges; the first rung carries the slice gauge so the new
        // layers live in the trivialized frame.
        let mut vert_ids = Vec::with_capacity(nv);
        for v in 0..nv {
            let id = m.edges.len();
            m.edges.push([prev_vs[v], new_vs[v]]);
            m.edge_length.push(S::one());
            transport.push(if step == 1 {
                cert.gauge.frame_change[v].clone()
            } else {
                id_mat.clone()
            });
            vert_ids.push(id);
        }
        // Horizontal edges of the new layer.
        let mut horiz_ids = Vec::with_capacity(ne);
        for k in 0..ne {
            let id = m.edges.len();
            let [a, bb] = slice.edges[k];
            m.edges.push([new_vs[a], new_vs[bb]]);
            m.edge_length.push(slice.edge_length[k]);
            transport.push(if chi == S::zero() {
                id_mat.clone()
            } else {
                expm_antiherm(&omega[k].scale(chi))
            });
            horiz_ids.push(id);
        }
        // Vertical squares between the previous and the new layer.
        let mut plaq_ids = Vec::with_capacity(ne);
        for k in 0..ne {
            let [a, bb] = slice.edges[k];
            let (lo_id, lo_dir) = prev_edges[k];
            let mut cycle = vec![
                SignedCell::new(lo_id, lo_dir),
                SignedCell::new(vert_ids[bb], 1),
                SignedCell::new(horiz_ids[k], -1),
                SignedCell::new(vert_ids[a], -1),
            ];
            if step == 1 {
                // Oppose the existing induced sign on the old top edge.
                let existing = induced[&lo_id];
                flips.push(lo_dir as i64 != -existing);
            }
            if flips[k] {
                cycle.reverse();
                for e in &mut cycle {
                    e.sign = -e.sign;
                }
            }
            let pid = m.plaquettes.len();
            m.plaquettes.push(cycle);
            m.plaquette_area.push(slice.edge_length[k]);
            if chi == S::zero() && prev_chi == S::zero() {
                flat_plaquettes.push(pid);
            }
            plaq_ids.push(pid);
        }
        // Collar bookkeeping: the previous layer gains its verticals.
        {
            let prev = if prev_layer_index < all_layers.len() {
                &mut all_layers[prev_layer_index]
            } else {
                new_layers.last_mut().unwrap()
            };
            prev.vertical[0] = vert_ids;
            prev.vertical[1] = plaq_ids;
        }
        new_layers.push(CollarLayer {
            t,
            cells: [new_vs.clone(), horiz_ids.clone(), Vec::new(), Vec::new()],
            vertical: [Vec::new(), Vec::new(), Vec::new(), Vec::new()],
        });
        prev_vs = new_vs;
        prev_edges = horiz_ids.into_iter().map(|id| (id, 1)).collect();
        prev_chi = chi;
        prev_layer_index = usize::MAX;
    }

    all_layers.extend(new_layers);
    m.collar = Some(Collar {
        slice,
        layers: all_layers,
        t_range: [collar.t_range[0], t_top + sc(4.0)],
    });
    let mut flat_set = crate::mesh::CellSet::new();
    for p in flat_plaquettes {
        flat_set.insert(2, p);
    }
    m.regions.insert(FLAT_END_REGION.to_string(), flat_set);
    m.generator = Some(crate::mesh::Generator::Other);
    m.boundary = m.compute_boundary();
    m.validate()?;
    let mut flat_regions = b.flat_regions.clone();
    flat_regions.push(FLAT_END_REGION.to_string());
    let out = Bundle {
        base: Arc::new(m),
        rank: b.rank,
        transport,
        flat_regions,
    };
    out.validate()?;
    Ok(out)
}
