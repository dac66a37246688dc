//! Discrete Hermitian bundles with compatible connections: one unitary
//! transport matrix per unoriented edge, holonomy, curvature, pullback,
//! and covering direct image.

use crate::error::{KareaError, Result};
use crate::linalg::{
    self, expm_antiherm, identity, op_norm, random_antihermitian, unitary_log, CMat,
};
use crate::mesh::{
    CoveringMap, ExtractMaps, Generator, Mesh, MeshMap, PieceFinalMap, SignedCell,
};
use crate::scalar::{sc, Scalar};
use nalgebra::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Unitary lattice gauge field over a mesh. Transports are stored once per
/// unoriented edge (tail -> head); the reversed transport is the adjoint.
#[derive(Clone, Debug)]
pub struct Bundle<S: Scalar> {
    pub base: Arc<Mesh<S>>,
    pub rank: usize,
    pub transport: Vec<CMat<S>>,
    /// Names of mesh regions asserted trivially flat.
    pub flat_regions: Vec<String>,
}

/// Per-vertex unitary frame change.
#[derive(Clone, Debug)]
pub struct GaugeTransform<S: Scalar> {
    pub rank: usize,
    pub frame_change: Vec<CMat<S>>,
}

/// Log-holonomy field and its sup operator norm.
#[derive(Clone, Debug)]
pub struct CurvatureReport<S: Scalar> {
    /// Anti-Hermitian `log(holonomy)/area` per plaquette.
    pub field_strength: Vec<CMat<S>>,
    pub sup_norm: S,
    pub argmax_plaquette: usize,
}

/// Integer fluxes: one number for a single 2D factor (S² or T²), or one
/// per coordinate plane of a 4-torus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FluxSpec {
    Simple(i64),
    /// Entries ((axis_a, axis_b), flux) with axis_a < axis_b.
    Planes(Vec<((usize, usize), i64)>),
}

impl<S: Scalar> Bundle<S> {
    /// Transport along an edge in the given direction.
    pub fn transport_along(&self, edge: usize, sign: i8) -> CMat<S> {
        if sign >= 0 {
            self.transport[edge].clone()
        } else {
            self.transport[edge].adjoint()
        }
    }

    /// Holonomy around an edge cycle (product in cycle order, leftmost
    /// factor last).
    pub fn holonomy(&self, cycle: &[SignedCell]) -> CMat<S> {
        let mut acc = identity::<S>(self.rank);
        for e in cycle {
            acc = self.transport_along(e.id, e.sign) * acc;
        }
        acc
    }

    /// Plaquette holonomy.
    pub fn plaquette_holonomy(&self, p: usize) -> CMat<S> {
        self.holonomy(&self.base.plaquettes[p])
    }

    /// Largest unitarity defect across all transports.
    pub fn unitarity_defect(&self) -> S {
        let mut worst = S::zero();
        for u in &self.transport {
            let d = linalg::unitarity_defect(u);
            if d > worst {
                worst = d;
            }
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        if self.transport.len() != self.base.edges.len() {
            return Err(KareaError::Invariant(
                "one transport per edge required".into(),
            ));
        }
        for (e, u) in self.transport.iter().enumerate() {
            if u.nrows() != self.rank || u.ncols() != self.rank {
                return Err(KareaError::Invariant(format!(
                    "transport {} has wrong shape",
                    e
                )));
            }
            if linalg::unitarity_defect(u) > sc(1e-12) {
                return Err(KareaError::Invariant(format!(
                    "transport {} is not unitary",
                    e
                )));
            }
        }
        for name in &self.flat_regions {
            let region = self.base.region(name)?;
            for &p in &region.cells[2] {
                let h = self.plaquette_holonomy(p);
                if op_norm(&(h - identity::<S>(self.rank))) > sc(1e-12) {
                    return Err(KareaError::Invariant(format!(
                        "flat region {} has curved plaquette {}",
                        name, p
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut transports = Vec::with_capacity(self.transport.len());
        for u in &self.transport {
            let mut rows = Vec::with_capacity(self.rank);
            for i in 0..self.rank {
                let mut row = Vec::with_capacity(self.rank);
                for j in 0..self.rank {
                    let z = u[(i, j)];
                    row.push([z.re, z.im]);
                }
                rows.push(row);
            }
            transports.push(rows);
        }
        let doc = BundleJson {
            version: 1,
            mesh_hash: self.base.hash(),
            rank: self.rank,
            transport: transports,
            flat_regions: self.flat_regions.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str, base: Arc<Mesh<S>>) -> Result<Self> {
        let doc: BundleJson<S> = serde_json::from_str(text)?;
        if doc.version != 1 {
            return Err(KareaError::Config(format!(
                "unsupported bundle format version {}",
                doc.version
            )));
        }
        if doc.mesh_hash != base.hash() {
            return Err(KareaError::Config(
                "bundle references a different mesh (hash mismatch)".into(),
            ));
        }
        let mut transport = Vec::with_capacity(doc.transport.len());
        for rows in &doc.transport {
            let mut u = CMat::<S>::zeros(doc.rank, doc.rank);
            for (i, row) in rows.iter().enumerate() {
                for (j, z) in row.iter().enumerate() {
                    u[(i, j)] = Complex::new(z[0], z[1]);
                }
            }
            transport.push(u);
        }
        let b = Bundle {
            base,
            rank: doc.rank,
            transport,
            flat_regions: doc.flat_regions,
        };
        b.validate()?;
        Ok(b)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
struct BundleJson<S: Scalar> {
    version: u32,
    mesh_hash: String,
    rank: usize,
    transport: Vec<Vec<Vec<[S; 2]>>>,
    flat_regions: Vec<String>,
}

/// Flat product bundle of the given rank.
pub fn trivial_bundle<S: Scalar>(base: &Arc<Mesh<S>>, rank: usize) -> Bundle<S> {
    Bundle {
        base: base.clone(),
        rank,
        transport: vec![identity::<S>(rank); base.edges.len()],
        flat_regions: base.regions.keys().cloned().collect(),
    }
}

/// 1x1 unitary `exp(2 pi i turns)`, with turns reduced mod 1 first so
/// integer turn counts give the identity bit-exactly.
fn phase_unitary<S: Scalar>(turns: S) -> CMat<S> {
    let turns = turns - turns.round();
    let theta = sc::<S>(std::f64::consts::TAU) * turns;
    let mut u = CMat::<S>::zeros(1, 1);
    u[(0, 0)] = Complex::new(theta.cos(), theta.sin());
    u
}

/// Normalized per-column weight profile for the separable torus monopole.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Profile {
    /// flux density proportional to area (constant curvature).
    Uniform,
    /// flux concentrated on columns 1 and 2, so everything at the origin
    /// (and the wrap seam around it) stays bit-exactly flat.
    AvoidOrigin,
}

fn profile_weights<S: Scalar>(profile: Profile, n: usize) -> Result<Vec<S>> {
    match profile {
        Profile::Uniform => Ok(vec![S::one() / sc::<S>(n as f64); n]),
        Profile::AvoidOrigin => {
            if n < 4 {
                // Columns 1 and 2 must be disjoint from the flat seam
                // columns 0 and n-1.
                return Err(KareaError::Config(
                    "concentrated monopole needs resolution >= 4".into(),
                ));
            }
            let mut w = vec![S::zero(); n];
            w[1] = sc(0.5);
            w[2] = sc(0.5);
            Ok(w)
        }
    }
}

fn cumulative<S: Scalar>(w: &[S]) -> Vec<S> {
    let mut acc = S::zero();
    let mut out = Vec::with_capacity(w.len() + 1);
    out.push(S::zero());
    for &x in w {
        acc += x;
        out.push(acc);
    }
    out
}

fn flux_planes(fluxes: &FluxSpec, dims: usize) -> Result<Vec<((usize, usize), i64)>> {
    match fluxes {
        FluxSpec::Simple(k) => {
            if dims != 2 {
                return Err(KareaError::Config(
                    "a single flux needs a single 2D factor".into(),
                ));
            }
            Ok(vec![((0, 1), *k)])
        }
        FluxSpec::Planes(list) => {
            for &((a, b), _) in list {
                if a >= b || b >= dims {
                    return Err(KareaError::Config(format!(
                        "invalid flux plane ({}, {})",
                        a, b
                    )));
                }
            }
            Ok(list.clone())
        }
    }
}

fn torus_monopole<S: Scalar>(
    base: &Arc<Mesh<S>>,
    dims: &[usize],
    fluxes: &FluxSpec,
    profile: Profile,
) -> Result<Bundle<S>> {
    use crate::mesh::BoxIndexer;
    let planes = flux_planes(fluxes, dims.len())?;
    let ix = BoxIndexer::new(dims.to_vec(), vec![true; dims.len()]);
    let mut turns = vec![S::zero(); base.edges.len()];
    for &((a, b), k) in &planes {
        if k == 0 {
            continue;
        }
        let ks: S = sc(k as f64);
        let f = profile_weights::<S>(profile, dims[a])?;
        let g = profile_weights::<S>(profile, dims[b])?;
        let cf = cumulative(&f);
        let cg = cumulative(&g);
        for v in 0..base.num_vertices {
            let c = ix.vertex_coords(v);
            // Axis-b edges carry the in-plane potential.
            turns[ix.eid(b, &c)] += ks * cf[c[a]] * g[c[b]];
            // Wrap seam on axis a closes the total flux.
            if c[a] + 1 == dims[a] {
                turns[ix.eid(a, &c)] -= ks * cg[c[b]];
            }
        }
    }
    let transport = turns.iter().map(|&t| phase_unitary(t)).collect();
    Ok(Bundle {
        base: base.clone(),
        rank: 1,
        transport,
        flat_regions: Vec::new(),
    })
}

/// Conjugate-gradient solve of the plaquette Laplacian `D Dᵀ φ = rhs`,
/// where D is the signed plaquette-edge incidence matrix. The solution is
/// the minimal-norm edge phase field `x = Dᵀ φ` with `D x = rhs`.
fn solve_edge_phases<S: Scalar>(mesh: &Mesh<S>, rhs: &[S]) -> Result<Vec<S>> {
    let np = mesh.plaquettes.len();
    let ne = mesh.edges.len();
    let apply = |phi: &[S]| -> Vec<S> {
        let mut x = vec![S::zero(); ne];
        for (p, cycle) in mesh.plaquettes.iter().enumerate() {
            for e in cycle {
                let s = if e.sign > 0 { S::one() } else { -S::one() };
                x[e.id] += s * phi[p];
            }
        }
        let mut out = vec![S::zero(); np];
        for (p, cycle) in mesh.plaquettes.iter().enumerate() {
            for e in cycle {
                let s = if e.sign > 0 { S::one() } else { -S::one() };
                out[p] += s * x[e.id];
            }
        }
        out
    };
    let demean = |v: &mut [S]| {
        let mean: S = v.iter().copied().fold(S::zero(), |a, b| a + b) / sc::<S>(np as f64);
        for x in v.iter_mut() {
            *x -= mean;
        }
    };
    let dot = |a: &[S], b: &[S]| -> S {
        a.iter().zip(b).map(|(&x, &y)| x * y).fold(S::zero(), |s, t| s + t)
    };
    let mut b = rhs.to_vec();
    demean(&mut b);
    let b_norm = dot(&b, &b).sqrt();
    if b_norm == S::zero() {
        return Ok(vec![S::zero(); ne]);
    }
    let mut phi = vec![S::zero(); np];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let tol = sc::<S>(1e-14) * b_norm;
    for _ in 0..(8 * np) {
        if rs.sqrt() <= tol {
            break;
        }
        let ap = apply(&p);
        let alpha = rs / dot(&p, &ap);
        for i in 0..np {
            phi[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        demean(&mut r);
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..np {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rs.sqrt() > sc::<S>(1e-10) * b_norm {
        return Err(KareaError::Invariant(
            "flux potential solve did not converge".into(),
        ));
    }
    let mut x = vec![S::zero(); ne];
    for (pq, cycle) in mesh.plaquettes.iter().enumerate() {
        for e in cycle {
            let s = if e.sign > 0 { S::one() } else { -S::one() };
            x[e.id] += s * phi[pq];
        }
    }
    Ok(x)
}

/// Rank-1 bundle with integer total flux distributed proportionally to
/// plaquette area (constant curvature). Tori use the separable closed
/// form; any other closed connected surface goes through the Laplacian
/// solve.
pub fn monopole_bundle<S: Scalar>(base: &Arc<Mesh<S>>, fluxes: &FluxSpec) -> Result<Bundle<S>> {
    match &base.generator {
        Some(Generator::Torus { dims, .. }) => {
            torus_monopole(base, &dims.clone(), fluxes, Profile::Uniform)
        }
        _ => {
            if base.dim != 2 || !base.boundary.is_empty() || base.vertex_components().1 != 1 {
                return Err(KareaError::Unsupported(
                    "monopole bundles need a torus or a closed connected surface".into(),
                ));
            }
            let k = match fluxes {
                FluxSpec::Simple(k) => *k,
                FluxSpec::Planes(_) => {
                    return Err(KareaError::Config(
                        "a surface takes a single flux".into(),
                    ))
                }
            };
            let total = base.total_area();
            let tau = sc::<S>(std::f64::consts::TAU);
            let ks: S = sc(k as f64);
            // Target plaquette phases minus one 2 pi k defect; the defect
            // disappears in the exponential.
            let mut rhs: Vec<S> = base
                .plaquette_area
                .iter()
                .map(|&a| tau * ks * a / total)
                .collect();
            rhs[0] -= tau * ks;
            let x = solve_edge_phases(base, &rhs)?;
            let transport = x.iter().map(|&theta| phase_unitary(theta / sc::<S>(std::f64::consts::TAU))).collect();
            Ok(Bundle {
                base: base.clone(),
                rank: 1,
                transport,
                flat_regions: Vec::new(),
            })
        }
    }
}

/// Rank-1 torus bundle with the same fluxes as [`monopole_bundle`] but
/// concentrated away from the origin: every transport and plaquette in the
/// closed star of vertex 0 (and along the wrap seam next to it) is
/// bit-exactly the identity / flat.
pub fn concentrated_monopole_bundle<S: Scalar>(
    base: &Arc<Mesh<S>>,
    fluxes: &FluxSpec,
) -> Result<Bundle<S>> {
    match &base.generator {
        Some(Generator::Torus { dims, .. }) => {
            torus_monopole(base, &dims.clone(), fluxes, Profile::AvoidOrigin)
        }
        _ => Err(KareaError::Unsupported(
            "concentrated monopoles need a torus generator".into(),
        )),
    }
}

/// Multiplies each transport by a seeded random unitary `exp(A_e)` with
/// `‖A_e‖ ≤ amplitude`. Stream-per-edge, so results are independent of
/// evaluation order.
pub fn perturb<S: Scalar>(b: &Bundle<S>, amplitude: S, seed: u64) -> Bundle<S> {
    if amplitude <= S::zero() {
        return b.clone();
    }
    let transport: Vec<CMat<S>> = b
        .transport
        .par_iter()
        .enumerate()
        .map(|(e, u)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(e as u64);
            let a = random_antihermitian::<S, _>(&mut rng, b.rank, amplitude);
            expm_antiherm(&a) * u
        })
        .collect();
    Bundle {
        base: b.base.clone(),
        rank: b.rank,
        transport,
        flat_regions: Vec::new(),
    }
}

/// Seeded random gauge transform (each frame change a random unitary).
pub fn random_gauge<S: Scalar>(mesh: &Mesh<S>, rank: usize, seed: u64) -> GaugeTransform<S> {
    let frame_change = (0..mesh.num_vertices)
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(v as u64);
            expm_antiherm(&random_antihermitian::<S, _>(&mut rng, rank, sc(2.0)))
        })
        .collect();
    GaugeTransform {
        rank,
        frame_change,
    }
}

/// Frame change: transport'(v -> w) = g(w) · transport · g(v)⁻¹.
pub fn gauge<S: Scalar>(b: &Bundle<S>, g: &GaugeTransform<S>) -> Result<Bundle<S>> {
    if g.rank != b.rank || g.frame_change.len() != b.base.num_vertices {
        return Err(KareaError::Config(
            "gauge transform does not match the bundle".into(),
        ));
    }
    let transport = b
        .transport
        .iter()
        .enumerate()
        .map(|(e, u)| {
            let [t, h] = b.base.edges[e];
            &g.frame_change[h] * u * g.frame_change[t].adjoint()
        })
        .collect();
    Ok(Bundle {
        base: b.base.clone(),
        rank: b.rank,
        transport,
        flat_regions: b.flat_regions.clone(),
    })
}

/// Field strength `log(holonomy)/area` per plaquette and its sup norm.
pub fn curvature<S: Scalar>(b: &Bundle<S>) -> Result<CurvatureReport<S>> {
    let guard: S = sc(1e-6);
    let per_plaquette: Vec<Result<CMat<S>>> = (0..b.base.plaquettes.len())
        .into_par_iter()
        .map(|p| {
            let h = b.plaquette_holonomy(p);
            let log = unitary_log(&h, guard).map_err(|e| match e {
                KareaError::BranchCut { distance } => KareaError::BranchCutAt {
                    plaquette: p,
                    distance,
                },
                other => other,
            })?;
            Ok(log.scale(S::one() / b.base.plaquette_area[p]))
        })
        .collect();
    let mut field_strength = Vec::with_capacity(per_plaquette.len());
    for r in per_plaquette {
        field_strength.push(r?);
    }
    let mut sup_norm = S::zero();
    let mut argmax_plaquette = 0;
    for (p, f) in field_strength.iter().enumerate() {
        let n = op_norm(f);
        if n > sup_norm {
            sup_norm = n;
            argmax_plaquette = p;
        }
    }
    Ok(CurvatureReport {
        field_strength,
        sup_norm,
        argmax_plaquette,
    })
}

/// Pullback along a cellular map: transports copied from image edges,
/// identity on collapsed edges.
pub fn pullback<S: Scalar>(b: &Bundle<S>, f: &MeshMap<S>) -> Result<Bundle<S>> {
    if !Arc::ptr_eq(&f.target, &b.base) && f.target.hash() != b.base.hash() {
        return Err(KareaError::Config(
            "map target does not match the bundle base".into(),
        ));
    }
    let transport = f
        .edge_map
        .iter()
        .map(|entry| match entry {
            None => identity::<S>(b.rank),
            Some((e, sign)) => b.transport_along(*e, *sign),
        })
        .collect();
    Ok(Bundle {
        base: f.source.clone(),
        rank: b.rank,
        transport,
        flat_regions: Vec::new(),
    })
}

/// Direct image under a covering: rank multiplies by the sheet count and
/// each base transport becomes the block permutation unitary assembling
/// the sheet transports.
pub fn direct_image<S: Scalar>(b: &Bundle<S>, cov: &CoveringMap<S>) -> Result<Bundle<S>> {
    if !Arc::ptr_eq(&b.base, &cov.total) && b.base.hash() != cov.total.hash() {
        return Err(KareaError::Config(
            "bundle base does not match the covering total space".into(),
        ));
    }
    let r = b.rank;
    let big = r * cov.sheets;
    let mut transport = vec![CMat::<S>::zeros(big, big); cov.base.edges.len()];
    for (e, [t, h]) in cov.total.edges.iter().enumerate() {
        let be = cov.edge_map[e];
        let (st, sh) = (cov.vertex_sheet[*t], cov.vertex_sheet[*h]);
        let u = &b.transport[e];
        for i in 0..r {
            for j in 0..r {
                transport[be][(sh * r + i, st * r + j)] = u[(i, j)];
            }
        }
    }
    Ok(Bundle {
        base: cov.base.clone(),
        rank: big,
        transport,
        flat_regions: Vec::new(),
    })
}

/// Restricts a bundle to an extracted subcomplex (orientation preserved).
pub fn restrict_subcomplex<S: Scalar>(
    b: &Bundle<S>,
    sub: &Arc<Mesh<S>>,
    maps: &ExtractMaps,
) -> Bundle<S> {
    let transport = maps.back[1]
        .iter()
        .map(|&parent| b.transport[parent].clone())
        .collect();
    Bundle {
        base: sub.clone(),
        rank: b.rank,
        transport,
        flat_regions: Vec::new(),
    }
}

/// Restricts a bundle to an extracted boundary complex, inverting the
/// transports of edges the induced orientation flipped (1D boundaries).
pub fn restrict_boundary<S: Scalar>(
    b: &Bundle<S>,
    boundary: &Arc<Mesh<S>>,
    maps: &ExtractMaps,
    top_signs: &[i8],
) -> Bundle<S> {
    let mut out = restrict_subcomplex(b, boundary, maps);
    if boundary.dim == 1 {
        for (e, &s) in top_signs.iter().enumerate() {
            if s < 0 {
                out.transport[e] = out.transport[e].adjoint();
            }
        }
    }
    out
}

/// Writes a piece bundle's transports into a glued mesh's transport table,
/// checking agreement (within `tol`) on already-written seam edges.
pub fn write_through_piece_map<S: Scalar>(
    piece: &Bundle<S>,
    map: &PieceFinalMap,
    out: &mut [Option<CMat<S>>],
    tol: S,
) -> Result<()> {
    for (e, &(fid, sign)) in map.edge.iter().enumerate() {
        let u = piece.transport_along(e, sign);
        match &out[fid] {
            None => out[fid] = Some(u),
            Some(existing) => {
                if linalg::fro_norm(&(existing - &u)) > tol {
                    return Err(KareaError::Gluing(format!(
                        "transport mismatch on glued edge {}",
                        fid
                    )));
                }
            }
        }
    }
    Ok(())
}
