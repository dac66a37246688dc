//! K-area lower bounds: minimize the sup curvature norm over edge
//! unitaries inside a fixed topological sector (the vector of integer
//! Chern totals). The working objective is a smooth power-mean of the
//! per-plaquette field-strength norms; the reported bound always comes
//! from a fresh measurement of the true sup at the final iterate.

use crate::bundle::{curvature, direct_image, monopole_bundle, Bundle, FluxSpec};
use crate::chern::{chern_densities, in_k_cross};
use crate::error::{KareaError, Result};
use crate::linalg::{expm_antiherm, fro_norm, identity, unitary_log, CMat};
use crate::mesh::{covering, scale_metric, Mesh};
use crate::scalar::{sc, Scalar};
use rayon::prelude::*;
use std::sync::Arc;

const LOG_GUARD: f64 = 1e-6;
/// Below this trial step the line search gives up.
const MIN_STEP: f64 = 1e-12;
/// Relative objective decrease treated as convergence.
const CONVERGENCE: f64 = 1e-13;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct OptimizerConfig<S: Scalar> {
    /// Power-mean exponent of the smooth sup-norm surrogate.
    pub smoothing: u32,
    /// Initial step, in units of the mean plaquette area.
    pub step: S,
    pub max_iters: usize,
    /// Allowed drift of the Chern totals from their starting integers.
    pub guard_tol: S,
    pub seed: u64,
}

impl<S: Scalar> Default for OptimizerConfig<S> {
    fn default() -> Self {
        OptimizerConfig {
            smoothing: 8,
            step: sc(0.05),
            max_iters: 2000,
            guard_tol: sc(1e-6),
            seed: 0,
        }
    }
}

impl<S: Scalar> OptimizerConfig<S> {
    fn validate(&self) -> Result<()> {
        if self.smoothing < 2 {
            return Err(KareaError::Config("smoothing exponent must be >= 2".into()));
        }
        if self.step <= S::zero() {
            return Err(KareaError::Config("step must be positive".into()));
        }
        Ok(())
    }
}

/// Result of a sector-constrained curvature minimization.
#[derive(Clone, Debug)]
pub struct KareaEstimate<S: Scalar> {
    /// 1 / ‖R‖ at the optimum (area units); the K-area lower bound this
    /// sector certifies.
    pub lower_bound: S,
    /// True sup field-strength norm at the optimum, measured from scratch.
    pub sup_norm: S,
    /// Smooth objective value at the optimum.
    pub soft_objective: S,
    pub optimum: Bundle<S>,
    /// Objective after every accepted step (index 0 = start).
    pub trace: Vec<S>,
    /// Chern totals after every accepted step, aligned with `trace`.
    pub sector_trace: Vec<Vec<S>>,
    /// The sector: starting Chern totals rounded to integers.
    pub sector: Vec<i64>,
    pub sector_start: Vec<S>,
    pub sector_end: Vec<S>,
    pub iterations: usize,
}

struct EvalPoint<S: Scalar> {
    logs: Vec<CMat<S>>,
    soft: S,
    totals: Vec<S>,
}

/// Area-weighted power mean (exponent `s`) of ‖log holonomy‖_F / area
/// over plaquettes — a smooth lower surrogate of the sup field-strength
/// norm. The area weights make constant-curvature configurations exactly
/// stationary under the induced gradient flow (flux is conserved edge by
/// edge), so the surrogate and the true minimax share their rank-1
/// optima.
pub fn soft_sup_norm<S: Scalar>(b: &Bundle<S>, s: u32) -> Result<S> {
    Ok(evaluate(b, s)?.soft)
}

fn evaluate<S: Scalar>(b: &Bundle<S>, s: u32) -> Result<EvalPoint<S>> {
    let guard: S = sc(LOG_GUARD);
    let logs: Vec<CMat<S>> = (0..b.base.plaquettes.len())
        .into_par_iter()
        .map(|p| unitary_log(&b.plaquette_holonomy(p), guard))
        .collect::<Result<_>>()?;
    let total_area = b.base.total_area();
    let mut acc = S::zero();
    let mut comp = S::zero(); // Kahan
    for (p, l) in logs.iter().enumerate() {
        let a = b.base.plaquette_area[p];
        let n = fro_norm(l) / a;
        let mut term = a;
        for _ in 0..s {
            term *= n;
        }
        let y = term - comp;
        let t = acc + y;
        comp = (t - acc) - y;
        acc = t;
    }
    let soft = (acc / total_area).powf(S::one() / sc::<S>(s as f64));
    let totals = chern_densities(b)?.totals;
    Ok(EvalPoint { logs, soft, totals })
}

/// Euclidean gradient of the power-mean objective with respect to
/// left-translated anti-Hermitian edge directions, at first order in the
/// plaquette logs.
fn gradient<S: Scalar>(b: &Bundle<S>, eval: &EvalPoint<S>, s: u32) -> Vec<CMat<S>> {
    let m = &b.base;
    let total_area = m.total_area();
    let soft = eval.soft;
    let tiny: S = sc(1e-30);
    let per_plaq: Vec<Vec<(usize, CMat<S>)>> = (0..m.plaquettes.len())
        .into_par_iter()
        .map(|p| {
            let l = &eval.logs[p];
            let a = m.plaquette_area[p];
            let lnorm = fro_norm(l);
            if lnorm <= tiny || soft <= tiny {
                return Vec::new();
            }
            let n = lnorm / a;
            // d soft / d n_p for soft = ((1/A) sum a_p n_p^s)^(1/s).
            let mut ratio = S::one();
            for _ in 0..s - 1 {
                ratio *= n / soft;
            }
            let coef = ratio / (total_area * lnorm);
            let cycle = &m.plaquettes[p];
            // suffix[j] = V_{m-1} ... V_j (transports applied after slot j).
            let mut suffix = vec![identity::<S>(b.rank); cycle.len() + 1];
            for j in (0..cycle.len()).rev() {
                let v = b.transport_along(cycle[j].id, cycle[j].sign);
                suffix[j] = &suffix[j + 1] * v;
            }
            cycle
                .iter()
                .enumerate()
                .map(|(j, e)| {
                    let w = if e.sign >= 0 { &suffix[j + 1] } else { &suffix[j] };
                    let mut g = w.adjoint() * l * w;
                    g.scale_mut(if e.sign >= 0 { coef } else { -coef });
                    (e.id, g)
                })
                .collect()
        })
        .collect();
    let mut grad = vec![CMat::<S>::zeros(b.rank, b.rank); m.edges.len()];
    for contributions in per_plaq {
        for (e, g) in contributions {
            grad[e] += g;
        }
    }
    grad
}

fn retract<S: Scalar>(b: &Bundle<S>, grad: &[CMat<S>], step: S) -> Bundle<S> {
    let transport: Vec<CMat<S>> = b
        .transport
        .par_iter()
        .zip(grad.par_iter())
        .map(|(u, g)| {
            let mut xi = g.clone();
            xi.scale_mut(-step);
            expm_antiherm(&xi) * u
        })
        .collect();
    Bundle {
        base: b.base.clone(),
        rank: b.rank,
        transport,
        flat_regions: Vec::new(),
    }
}

fn in_sector<S: Scalar>(totals: &[S], sector: &[i64], tol: S) -> bool {
    totals
        .iter()
        .zip(sector)
        .all(|(t, &k)| (*t - sc::<S>(k as f64)).abs() <= tol)
}

/// Minimizes the sup curvature norm over edge unitaries without leaving
/// the starting topological sector. Accepted steps are monotone
/// non-increasing in the smooth objective; steps that trip the Chern
/// guard or the log branch cut are halved away or, if that fails,
/// reported as a sector escape.
pub fn minimize_curvature<S: Scalar>(
    start: &Bundle<S>,
    cfg: &OptimizerConfig<S>,
) -> Result<KareaEstimate<S>> {
    cfg.validate()?;
    let verdict = in_k_cross(start, sc(0.5))?;
    if !verdict.admissible {
        return Err(KareaError::Precondition(
            "starting bundle is not admissible (flat-region defect or zero Chern numbers)".into(),
        ));
    }
    let s = cfg.smoothing;
    let mut cur = start.clone();
    let mut eval = evaluate(&cur, s)?;
    let sector_start = eval.totals.clone();
    let sector: Vec<i64> = sector_start
        .iter()
        .map(|t| t.to_f64().map(|x| x.round() as i64).unwrap_or(0))
        .collect();
    if !in_sector(&sector_start, &sector, cfg.guard_tol) {
        return Err(KareaError::Precondition(
            "starting Chern totals are not near integers".into(),
        ));
    }

    let mean_area = b_mean_area(&cur.base);
    let mut step = cfg.step * mean_area;
    let min_step: S = sc(MIN_STEP);
    let conv: S = sc(CONVERGENCE);
    let mut trace = vec![eval.soft];
    let mut sector_trace = vec![eval.totals.clone()];
    let mut iterations = 0usize;

    for it in 0..cfg.max_iters {
        let grad = gradient(&cur, &eval, s);
        let gnorm = grad.iter().fold(S::zero(), |m, g| {
            let n = fro_norm(g);
            if n > m {
                n
            } else {
                m
            }
        });
        if gnorm <= sc(1e-16) {
            break;
        }
        let mut accepted = false;
        let mut guard_tripped = false;
        while step >= min_step {
            let trial = retract(&cur, &grad, step);
            match evaluate(&trial, s) {
                Ok(te) => {
                    if !in_sector(&te.totals, &sector, cfg.guard_tol) {
                        guard_tripped = true;
                        step *= sc(0.5);
                        continue;
                    }
                    if te.soft > eval.soft {
                        guard_tripped = false;
                        step *= sc(0.5);
                        continue;
                    }
                    let gain = eval.soft - te.soft;
                    cur = trial;
                    eval = te;
                    trace.push(eval.soft);
                    sector_trace.push(eval.totals.clone());
                    iterations = it + 1;
                    accepted = true;
                    step *= sc(1.5);
                    if gain <= conv * (S::one() + eval.soft) {
                        // Stationary to machine precision.
                        return finish(cur, eval, trace, sector_trace, sector, sector_start, iterations);
                    }
                    break;
                }
                Err(KareaError::BranchCut { .. }) | Err(KareaError::BranchCutAt { .. }) => {
                    guard_tripped = true;
                    step *= sc(0.5);
                }
                Err(e) => return Err(e),
            }
        }
        if !accepted {
            if guard_tripped {
                return Err(KareaError::SectorEscape { iteration: it });
            }
            break;
        }
    }
    finish(cur, eval, trace, sector_trace, sector, sector_start, iterations)
}

fn b_mean_area<S: Scalar>(m: &Mesh<S>) -> S {
    let mut acc = S::zero();
    for a in &m.plaquette_area {
        acc += *a;
    }
    acc / sc::<S>(m.plaquette_area.len() as f64)
}

fn finish<S: Scalar>(
    cur: Bundle<S>,
    eval: EvalPoint<S>,
    trace: Vec<S>,
    sector_trace: Vec<Vec<S>>,
    sector: Vec<i64>,
    sector_start: Vec<S>,
    iterations: usize,
) -> Result<KareaEstimate<S>> {
    let rep = curvature(&cur)?;
    if rep.sup_norm <= S::zero() {
        return Err(KareaError::Invariant(
            "optimum is exactly flat yet claims a nonzero Chern number".into(),
        ));
    }
    Ok(KareaEstimate {
        lower_bound: S::one() / rep.sup_norm,
        sup_norm: rep.sup_norm,
        soft_objective: eval.soft,
        sector_end: eval.totals.clone(),
        optimum: cur,
        trace,
        sector_trace,
        sector,
        sector_start,
        iterations,
    })
}

/// Builds the starting bundle of a sector: a rank-1 flux bundle padded
/// with a trivial complement when rank > 1 (the Chern totals are those of
/// the flux part).
pub fn sector_start<S: Scalar>(
    base: &Arc<Mesh<S>>,
    rank: usize,
    fluxes: &FluxSpec,
) -> Result<Bundle<S>> {
    if rank == 0 {
        return Err(KareaError::Config("sector rank must be positive".into()));
    }
    let mono = monopole_bundle(base, fluxes)?;
    if rank == 1 {
        return Ok(mono);
    }
    let transport: Vec<CMat<S>> = mono
        .transport
        .iter()
        .map(|u| {
            let mut big = identity::<S>(rank);
            big[(0, 0)] = u[(0, 0)];
            big
        })
        .collect();
    Ok(Bundle {
        base: base.clone(),
        rank,
        transport,
        flat_regions: Vec::new(),
    })
}

/// Best K-area lower bound over the given sectors (rank, flux spec).
pub fn karea_lower_bound<S: Scalar>(
    base: &Arc<Mesh<S>>,
    sectors: &[(usize, FluxSpec)],
    cfg: &OptimizerConfig<S>,
) -> Result<KareaEstimate<S>> {
    if sectors.is_empty() {
        return Err(KareaError::Config("no sectors given".into()));
    }
    let mut best: Option<KareaEstimate<S>> = None;
    let mut failures = Vec::new();
    for (rank, fluxes) in sectors {
        let attempt = sector_start(base, *rank, fluxes).and_then(|b| minimize_curvature(&b, cfg));
        match attempt {
            Ok(est) => {
                if best.as_ref().map_or(true, |b| est.lower_bound > b.lower_bound) {
                    best = Some(est);
                }
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    best.ok_or_else(|| {
        KareaError::Precondition(format!("every sector failed: {}", failures.join("; ")))
    })
}

/// Quadratic metric-scaling check: the lower bound must scale by c^2.
#[derive(Clone, Debug, serde::Serialize)]
#[serde(bound(serialize = "S: Scalar"))]
pub struct ScalingReport<S: Scalar> {
    pub c: S,
    pub bound_base: S,
    pub bound_scaled: S,
    pub ratio: S,
    pub expected: S,
    pub tolerance: S,
    pub pass: bool,
}

pub fn scaling_experiment<S: Scalar>(
    base: &Arc<Mesh<S>>,
    c: S,
    sector: (usize, FluxSpec),
    cfg: &OptimizerConfig<S>,
) -> Result<ScalingReport<S>> {
    let scaled = Arc::new(scale_metric(base, c)?);
    let e0 = karea_lower_bound(base, std::slice::from_ref(&sector), cfg)?;
    let e1 = karea_lower_bound(&scaled, std::slice::from_ref(&sector), cfg)?;
    let ratio = e1.lower_bound / e0.lower_bound;
    let expected = c * c;
    let tolerance: S = sc(1e-3);
    Ok(ScalingReport {
        c,
        bound_base: e0.lower_bound,
        bound_scaled: e1.lower_bound,
        ratio,
        expected,
        tolerance,
        pass: ((ratio - expected) / expected).abs() <= tolerance,
    })
}

/// Torus covering check: a (f1, ..., fk) covering multiplies the bound by
/// the sheet count, and the direct image never increases the curvature
/// sup norm.
#[derive(Clone, Debug, serde::Serialize)]
#[serde(bound(serialize = "S: Scalar"))]
pub struct CoveringReport<S: Scalar> {
    pub factors: Vec<usize>,
    pub sheets: usize,
    pub bound_base: S,
    pub bound_total: S,
    pub ratio: S,
    pub expected: S,
    pub tolerance: S,
    pub pass: bool,
    /// Sup norms of the optimizer output upstairs and of its direct image
    /// downstairs; monotone means image <= total + 1e-12.
    pub sup_total: S,
    pub sup_direct_image: S,
    pub monotone: bool,
}

pub fn covering_experiment<S: Scalar>(
    base: &Arc<Mesh<S>>,
    factors: &[usize],
    sector: (usize, FluxSpec),
    cfg: &OptimizerConfig<S>,
) -> Result<CoveringReport<S>> {
    let cov = covering(base, factors)?;
    let e_base = karea_lower_bound(&cov.base, std::slice::from_ref(&sector), cfg)?;
    let e_total = karea_lower_bound(&cov.total, std::slice::from_ref(&sector), cfg)?;
    let ratio = e_total.lower_bound / e_base.lower_bound;
    let expected = sc::<S>(cov.sheets as f64);
    let tolerance: S = sc(0.01);
    let image = direct_image(&e_total.optimum, &cov)?;
    let sup_total = e_total.sup_norm;
    let sup_image = curvature(&image)?.sup_norm;
    Ok(CoveringReport {
        factors: factors.to_vec(),
        sheets: cov.sheets,
        bound_base: e_base.lower_bound,
        bound_total: e_total.lower_bound,
        ratio,
        expected,
        tolerance,
        pass: ((ratio - expected) / expected).abs() <= tolerance,
        sup_total,
        sup_direct_image: sup_image,
        monotone: sup_image <= sup_total + sc(1e-12),
    })
}
