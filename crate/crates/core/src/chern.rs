//! Lattice Chern-Weil evaluation: c1 densities on plaquettes, c1^2 / c2
//! densities on 4-cells via clover-averaged plane logarithms, Chern
//! numbers, integrality, and the admissibility predicate.

use crate::bundle::Bundle;
use crate::error::{KareaError, Result};
use crate::linalg::{identity, op_norm, unitary_log, CMat};
use crate::scalar::{kahan_sum, sc, Scalar};
use num_rational::Ratio;
use rayon::prelude::*;
use std::collections::BTreeSet;

const GUARD: f64 = 1e-6;

/// Basis monomials by mesh dimension: `["c1"]` (2D) or `["c1^2", "c2"]`
/// (4D).
#[derive(Clone, Debug)]
pub struct ChernReport<S: Scalar> {
    pub basis: Vec<&'static str>,
    /// One density vector (indexed by top cell) per basis monomial.
    pub densities: Vec<Vec<S>>,
    pub totals: Vec<S>,
    pub integrality_residual: S,
}

impl<S: Scalar> ChernReport<S> {
    pub fn total(&self, monomial: &str) -> Option<S> {
        self.basis
            .iter()
            .position(|&m| m == monomial)
            .map(|i| self.totals[i])
    }
}

/// Formal rational combination of basis monomials of the right degree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChernPolynomial {
    pub dim: usize,
    pub terms: Vec<(String, Ratio<i64>)>,
}

impl ChernPolynomial {
    pub fn new(dim: usize, terms: Vec<(String, Ratio<i64>)>) -> Result<Self> {
        let allowed: &[&str] = match dim {
            2 => &["c1"],
            4 => &["c1^2", "c2"],
            _ => {
                return Err(KareaError::Config(
                    "Chern polynomials need dimension 2 or 4".into(),
                ))
            }
        };
        for (m, _) in &terms {
            if !allowed.contains(&m.as_str()) {
                return Err(KareaError::Config(format!(
                    "monomial {} has the wrong degree for dimension {}",
                    m, dim
                )));
            }
        }
        Ok(ChernPolynomial { dim, terms })
    }

    /// Parses e.g. `c1`, `-c1`, `c1^2 - 2 c2`, `3/2 c1^2 + c2`.
    pub fn parse(dim: usize, text: &str) -> Result<Self> {
        let mut terms = Vec::new();
        let cleaned = text.replace('*', " ");
        let mut rest = cleaned.trim();
        if rest.is_empty() || rest == "0" {
            return Self::new(dim, terms);
        }
        let mut sign = 1i64;
        // Leading sign.
        if let Some(r) = rest.strip_prefix('-') {
            sign = -1;
            rest = r.trim_start();
        } else if let Some(r) = rest.strip_prefix('+') {
            rest = r.trim_start();
        }
        loop {
            // Split off everything up to the next top-level +/-.
            let split = rest
                .char_indices()
                .find(|&(i, c)| i > 0 && (c == '+' || c == '-'))
                .map(|(i, c)| (i, c));
            let (chunk, next) = match split {
                Some((i, c)) => (&rest[..i], Some((c, &rest[i + 1..]))),
                None => (rest, None),
            };
            terms.push(parse_term(chunk.trim(), sign)?);
            match next {
                Some((c, r)) => {
                    sign = if c == '-' { -1 } else { 1 };
                    rest = r.trim_start();
                }
                None => break,
            }
        }
        Self::new(dim, terms)
    }
}

fn parse_term(chunk: &str, sign: i64) -> Result<(String, Ratio<i64>)> {
    let bad = || KareaError::Config(format!("cannot parse Chern term '{}'", chunk));
    // Optional rational coefficient before the monomial name.
    let idx = chunk.find('c').ok_or_else(bad)?;
    let (coef_text, mono) = chunk.split_at(idx);
    let mono = mono.trim();
    if !matches!(mono, "c1" | "c1^2" | "c2") {
        return Err(bad());
    }
    let coef_text = coef_text.trim();
    let coef = if coef_text.is_empty() {
        Ratio::from_integer(1)
    } else if let Some((n, d)) = coef_text.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| bad())?;
        let d: i64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        Ratio::new(n, d)
    } else {
        Ratio::from_integer(coef_text.parse().map_err(|_| bad())?)
    };
    Ok((mono.to_string(), coef * sign))
}

/// Imaginary part of the trace of the principal log of a holonomy.
fn im_tr_log<S: Scalar>(h: &CMat<S>) -> Result<S> {
    let l = unitary_log(h, sc(GUARD))?;
    let mut acc = S::zero();
    for i in 0..l.nrows() {
        acc += l[(i, i)].im;
    }
    Ok(acc)
}

/// Component-grouped compensated total: bit-exact additive over disjoint
/// unions because each component is summed separately.
fn grouped_total<S: Scalar>(values: &[S], component: &[usize], n_components: usize) -> S {
    let mut per: Vec<Vec<S>> = vec![Vec::new(); n_components];
    for (i, &v) in values.iter().enumerate() {
        per[component[i]].push(v);
    }
    let mut total = S::zero();
    for bucket in per {
        total += kahan_sum(bucket.into_iter());
    }
    total
}

fn top_cell_components<S: Scalar>(b: &Bundle<S>) -> (Vec<usize>, usize) {
    let (vlabel, n) = b.base.vertex_components();
    let dim = b.base.dim;
    let comp: Vec<usize> = (0..b.base.top_dim_cells())
        .map(|c| {
            let v = *b
                .base
                .cell_vertices(dim, c)
                .iter()
                .next()
                .expect("cell has vertices");
            vlabel[v]
        })
        .collect();
    (comp, n)
}

/// Clover-averaged plane logarithms of a 4-cell, in plane order
/// (0,1), (0,2), (0,3), (1,2), (1,3), (2,3).
fn plane_logs<S: Scalar>(
    b: &Bundle<S>,
    planes: &crate::mesh::Cell4Planes,
) -> Result<[CMat<S>; 6]> {
    let mut out: [CMat<S>; 6] = std::array::from_fn(|_| CMat::<S>::zeros(b.rank, b.rank));
    for (i, quadrants) in planes.planes.iter().enumerate() {
        let mut acc = CMat::<S>::zeros(b.rank, b.rank);
        for loop_edges in quadrants {
            let h = b.holonomy(loop_edges);
            acc += unitary_log(&h, sc(GUARD))?;
        }
        out[i] = acc.scale(sc(0.25));
    }
    Ok(out)
}

fn tr<S: Scalar>(m: &CMat<S>) -> nalgebra::Complex<S> {
    let mut acc = nalgebra::Complex::new(S::zero(), S::zero());
    for i in 0..m.nrows() {
        acc += m[(i, i)];
    }
    acc
}

/// Plaquette ids in the 2-skeleton of a 4-cell.
fn cell4_plaquettes<S: Scalar>(mesh: &crate::mesh::Mesh<S>, c: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for f3 in mesh.boundary_of(4, c) {
        for f2 in mesh.boundary_of(3, f3.id) {
            out.insert(f2.id);
        }
    }
    out
}

/// Chern-Weil densities and totals.
pub fn chern_densities<S: Scalar>(b: &Bundle<S>) -> Result<ChernReport<S>> {
    match b.base.dim {
        2 => chern_densities_2d(b),
        4 => chern_densities_4d(b),
        d => Err(KareaError::Unsupported(format!(
            "Chern densities need a 2D or 4D mesh, got {}D",
            d
        ))),
    }
}

fn chern_densities_2d<S: Scalar>(b: &Bundle<S>) -> Result<ChernReport<S>> {
    let tau = sc::<S>(std::f64::consts::TAU);
    let per: Vec<Result<S>> = (0..b.base.plaquettes.len())
        .into_par_iter()
        .map(|p| {
            let h = b.plaquette_holonomy(p);
            Ok(im_tr_log(&h).map_err(|e| at_plaquette(e, p))? / tau)
        })
        .collect();
    let mut c1 = Vec::with_capacity(per.len());
    for r in per {
        c1.push(r?);
    }
    let (comp, n) = top_cell_components(b);
    let total = grouped_total(&c1, &comp, n);
    let residual = (total - total.round()).abs();
    Ok(ChernReport {
        basis: vec!["c1"],
        densities: vec![c1],
        totals: vec![total],
        integrality_residual: residual,
    })
}

fn at_plaquette(e: KareaError, p: usize) -> KareaError {
    match e {
        KareaError::BranchCut { distance } => KareaError::BranchCutAt {
            plaquette: p,
            distance,
        },
        other => other,
    }
}

fn chern_densities_4d<S: Scalar>(b: &Bundle<S>) -> Result<ChernReport<S>> {
    let mesh = &b.base;
    let four_pi2 = sc::<S>(4.0 * std::f64::consts::PI * std::f64::consts::PI);
    let flat_tol: S = sc(GUARD);
    let per: Vec<Result<(S, S)>> = (0..mesh.cells4.len())
        .into_par_iter()
        .map(|c| {
            let planes = if mesh.cell4_planes.len() == mesh.cells4.len() {
                mesh.cell4_planes[c].as_ref()
            } else {
                None
            };
            match planes {
                Some(pl) => {
                    let logs = plane_logs(b, pl).map_err(|e| match e {
                        KareaError::BranchCut { distance } => KareaError::BranchCutAt {
                            plaquette: c,
                            distance,
                        },
                        other => other,
                    })?;
                    // Complementary plane pairs with Koszul signs:
                    // (01,23) +, (02,13) -, (03,12) +.
                    let pairs = [(0usize, 5usize, 1i8), (1, 4, -1), (2, 3, 1)];
                    let mut s_trtr = S::zero();
                    let mut s_trprod = S::zero();
                    for &(i, j, sgn) in &pairs {
                        let sg: S = if sgn > 0 { S::one() } else { -S::one() };
                        let ti = tr(&logs[i]);
                        let tj = tr(&logs[j]);
                        s_trtr += sg * (ti * tj).re;
                        s_trprod += sg * tr(&(&logs[i] * &logs[j])).re;
                    }
                    // (i/2pi)^2 wedge normalization: the pair sum enters
                    // twice (antisymmetry), so c1^2 = -s_trtr/(2 pi^2) and
                    // c2 = -(s_trtr - s_trprod)/(4 pi^2).
                    let c1sq = -(s_trtr + s_trtr) / four_pi2;
                    let c2 = -(s_trtr - s_trprod) / four_pi2;
                    Ok((c1sq, c2))
                }
                None => {
                    // No clover metadata: only exactly-flat cells are
                    // evaluable (density 0).
                    let id = identity::<S>(b.rank);
                    for p in cell4_plaquettes(mesh, c) {
                        let h = b.plaquette_holonomy(p);
                        if op_norm(&(h - &id)) > flat_tol {
                            return Err(KareaError::Unsupported(format!(
                                "4-cell {} lacks plane metadata and is not flat",
                                c
                            )));
                        }
                    }
                    Ok((S::zero(), S::zero()))
                }
            }
        })
        .collect();
    let mut c1sq = Vec::with_capacity(per.len());
    let mut c2 = Vec::with_capacity(per.len());
    for r in per {
        let (a, b2) = r?;
        c1sq.push(a);
        c2.push(b2);
    }
    let (comp, n) = top_cell_components(b);
    let t1 = grouped_total(&c1sq, &comp, n);
    let t2 = grouped_total(&c2, &comp, n);
    let r1 = (t1 - t1.round()).abs();
    let r2 = (t2 - t2.round()).abs();
    Ok(ChernReport {
        basis: vec!["c1^2", "c2"],
        densities: vec![c1sq, c2],
        totals: vec![t1, t2],
        integrality_residual: if r1 > r2 { r1 } else { r2 },
    })
}

/// Evaluates a Chern polynomial against the report totals.
pub fn chern_number<S: Scalar>(b: &Bundle<S>, poly: &ChernPolynomial) -> Result<S> {
    if poly.dim != b.base.dim {
        return Err(KareaError::Config(
            "polynomial dimension does not match the mesh".into(),
        ));
    }
    let report = chern_densities(b)?;
    let mut acc = S::zero();
    for (mono, coef) in &poly.terms {
        let t = report
            .total(mono)
            .ok_or_else(|| KareaError::Config(format!("unknown monomial {}", mono)))?;
        let c: S = sc::<S>(*coef.numer() as f64) / sc::<S>(*coef.denom() as f64);
        acc += c * t;
    }
    Ok(acc)
}

/// Admissibility verdict for the K-area supremum class.
#[derive(Clone, Debug)]
pub struct KCrossVerdict<S: Scalar> {
    pub admissible: bool,
    /// Basis monomial witnessing condition (ii), if any.
    pub witness: Option<&'static str>,
    pub flat_regions_ok: bool,
    pub totals: Vec<S>,
}

/// Checks flat-region triviality (condition i) and a nonzero basis Chern
/// number (condition ii).
pub fn in_k_cross<S: Scalar>(b: &Bundle<S>, tol: S) -> Result<KCrossVerdict<S>> {
    let id = identity::<S>(b.rank);
    let mut flat_ok = true;
    for name in &b.flat_regions {
        let region = b.base.region(name)?;
        for &p in &region.cells[2] {
            if op_norm(&(b.plaquette_holonomy(p) - &id)) > tol {
                flat_ok = false;
            }
        }
    }
    let report = chern_densities(b)?;
    let witness = report
        .basis
        .iter()
        .zip(&report.totals)
        .find(|(_, &t)| t.abs() > tol)
        .map(|(&m, _)| m);
    Ok(KCrossVerdict {
        admissible: flat_ok && witness.is_some(),
        witness,
        flat_regions_ok: flat_ok,
        totals: report.totals,
    })
}
