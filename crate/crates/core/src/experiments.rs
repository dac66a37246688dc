//! Scripted, self-checking experiments. Each returns a serializable
//! report with a `pass` flag so the CLI can turn outcomes into exit
//! codes; every numeric comes with the tolerance it was checked against.

use crate::bundle::{curvature, monopole_bundle, perturb, trivial_bundle, Bundle, FluxSpec};
use crate::error::{KareaError, Result};
use crate::karea::{
    covering_experiment, karea_lower_bound, scaling_experiment, CoveringReport, OptimizerConfig,
    ScalingReport,
};
use crate::linalg::identity;
use crate::mesh::{gen_mesh, plan_torus_band_surgery, surgery, GeneratorSpec, Mesh};
use crate::scalar::{sc, Scalar};
use crate::surgery::{cap_off, threshold_scan, transplant, ChernBookkeeping, TransplantOutcome};
use crate::trivialize::{calibrate_constant, layer_edge_dir, trivialize, TrivializeOutcome};
use nalgebra::Complex;
use std::sync::Arc;

/// Cylindrical-end control: a flat bundle with holonomy -1 around a long
/// cylinder is obstructed at zero curvature, while the capped (closed)
/// mesh protects triviality below a positive curvature threshold.
#[derive(Clone, Debug, serde::Serialize)]
#[serde(bound(serialize = "S: Scalar"))]
pub struct CylinderCapReport<S: Scalar> {
    pub n: usize,
    pub levels: usize,
    /// Obstruction kind hit by the flat holonomy bundle on the open
    /// cylinder.
    pub cylinder_obstruction: Option<String>,
    pub cylinder_sup_norm: S,
    /// Chern-vanishing curvature threshold on the capped mesh.
    pub capped_delta_star: Option<S>,
    pub chern_tol: S,
    pub pass: bool,
}

pub fn cylinder_cap_experiment<S: Scalar>(
    n: usize,
    levels: usize,
    seeds: std::ops::Range<u64>,
) -> Result<CylinderCapReport<S>> {
    let tau = sc::<S>(std::f64::consts::TAU);
    let cyl = Arc::new(gen_mesh(&GeneratorSpec::Cylinder {
        n,
        radius: sc::<S>(n as f64) / tau,
        t0: S::zero(),
        t1: sc(levels as f64),
        levels,
    })?);
    // Flat transports with holonomy e^{i pi} = -1 around every ring.
    let mut b = trivial_bundle(&cyl, 1);
    b.flat_regions.clear();
    let collar = cyl
        .collar
        .as_ref()
        .ok_or_else(|| KareaError::Invariant("cylinder lost its collar".into()))?;
    let theta = sc::<S>(std::f64::consts::PI) / sc::<S>(n as f64);
    for layer in &collar.layers {
        for k in 0..collar.slice.edges.len() {
            let (e, dir) = layer_edge_dir(&cyl, layer, &collar.slice, k)?;
            let th = if dir > 0 { theta } else { -theta };
            let mut u = identity::<S>(1);
            u[(0, 0)] = Complex::new(th.cos(), th.sin());
            b.transport[e] = u;
        }
    }
    b.validate()?;
    let cylinder_sup_norm = curvature(&b)?.sup_norm;
    let cylinder_obstruction = match trivialize(&b, sc(0.5))? {
        TrivializeOutcome::Obstructed(o) => Some(format!("{:?}", o.kind)),
        TrivializeOutcome::Trivial(_) => None,
    };

    let capped = Arc::new(cap_off(&cyl)?);
    let chern_tol: S = sc(0.5);
    let scan = threshold_scan(
        &capped,
        &[0, 1],
        &[S::zero(), sc(0.02)],
        seeds,
        chern_tol,
    )?;
    let pass = cylinder_obstruction.is_some()
        && cylinder_sup_norm <= sc(1e-12)
        && scan.delta_star.map_or(false, |d| d > S::zero());
    Ok(CylinderCapReport {
        n,
        levels,
        cylinder_obstruction,
        cylinder_sup_norm,
        capped_delta_star: scan.delta_star,
        chern_tol,
        pass,
    })
}

/// Torus covering: the (2,2) cover quadruples the K-area bound, and the
/// base bound is resolution-stable across refinements of the same metric
/// torus.
#[derive(Clone, Debug, serde::Serialize)]
#[serde(bound(serialize = "S: Scalar"))]
pub struct TorusCoveringReport<S: Scalar> {
    pub covering: CoveringReport<S>,
    /// (resolution, lower bound) over refinements of the same flat torus.
    pub refinement: Vec<(usize, S)>,
    pub refinement_spread: S,
    pub refinement_tolerance: S,
    pub pass: bool,
}

pub fn torus_covering_experiment<S: Scalar>(
    n: usize,
    length: S,
    resolutions: &[usize],
    cfg: &OptimizerConfig<S>,
) -> Result<TorusCoveringReport<S>> {
    let base = Arc::new(gen_mesh(&GeneratorSpec::Torus2 {
        nx: n,
        ny: n,
        lx: length,
        ly: length,
    })?);
    let covering = covering_experiment(&base, &[2, 2], (1, FluxSpec::Simple(1)), cfg)?;
    let mut refinement = Vec::new();
    let (mut lo, mut hi) = (S::zero(), S::zero());
    for (i, &r) in resolutions.iter().enumerate() {
        let m = Arc::new(gen_mesh(&GeneratorSpec::Torus2 {
            nx: r,
            ny: r,
            lx: length,
            ly: length,
        })?);
        let est = karea_lower_bound(&m, &[(1, FluxSpec::Simple(1))], cfg)?;
        if i == 0 {
            lo = est.lower_bound;
            hi = est.lower_bound;
        } else {
            if est.lower_bound < lo {
                lo = est.lower_bound;
            }
            if est.lower_bound > hi {
                hi = est.lower_bound;
            }
        }
        refinement.push((r, est.lower_bound));
    }
    let refinement_spread = hi / lo - S::one();
    let refinement_tolerance: S = sc(0.01);
    let pass = covering.pass && covering.monotone && refinement_spread <= refinement_tolerance;
    Ok(TorusCoveringReport {
        covering,
        refinement,
        refinement_spread,
        refinement_tolerance,
        pass,
    })
}

pub fn torus_scaling_experiment<S: Scalar>(
    n: usize,
    c: S,
    cfg: &OptimizerConfig<S>,
) -> Result<ScalingReport<S>> {
    let base = Arc::new(gen_mesh(&GeneratorSpec::Torus2 {
        nx: n,
        ny: n,
        lx: sc(n as f64),
        ly: sc(n as f64),
    })?);
    scaling_experiment(&base, c, (1, FluxSpec::Simple(1)), cfg)
}

/// Transplant bookkeeping on a 1-surgered torus plus the Chern-vanishing
/// threshold scan on the surgered mesh.
#[derive(Clone, Debug, serde::Serialize)]
#[serde(bound(serialize = "S: Scalar"))]
pub struct SurgeryBookkeepingReport<S: Scalar> {
    pub integrals: Vec<ChernBookkeeping<S>>,
    pub identity_residual: S,
    pub residual_budget: S,
    pub delta_star: Option<S>,
    pub chern_tol: S,
    pub pass: bool,
}

pub fn surgery_bookkeeping_experiment<S: Scalar>(
    n: usize,
    seeds: std::ops::Range<u64>,
) -> Result<SurgeryBookkeepingReport<S>> {
    let m = Arc::new(gen_mesh(&GeneratorSpec::Torus2 {
        nx: n,
        ny: n,
        lx: sc(n as f64),
        ly: sc(n as f64),
    })?);
    let plan = plan_torus_band_surgery(&m, 2)?;
    let surgered = Arc::new(surgery(&m, &plan)?);
    let b = monopole_bundle(&surgered, &FluxSpec::Simple(1))?;
    let res = match transplant(&b, &plan, sc(0.5))? {
        TransplantOutcome::Done(r) => r,
        TransplantOutcome::Obstructed(o) => {
            return Err(KareaError::Invariant(format!(
                "flux transplant unexpectedly obstructed: {:?}",
                o.kind
            )))
        }
    };
    let chern_tol: S = sc(1e-6);
    let scan = threshold_scan(
        &surgered,
        &[0, 1],
        &[S::zero(), sc(0.02)],
        seeds,
        chern_tol,
    )?;
    let below_is_trivial = scan.delta_star.map_or(true, |d| {
        scan.samples
            .iter()
            .filter(|s| s.sup_norm < d)
            .all(|s| s.max_basis_total <= chern_tol)
    });
    let residual_budget: S = sc(1e-6);
    let pass = res.identity_residual <= residual_budget
        && scan.delta_star.map_or(false, |d| d > S::zero())
        && below_is_trivial;
    Ok(SurgeryBookkeepingReport {
        integrals: res.integrals,
        identity_residual: res.identity_residual,
        residual_budget,
        delta_star: scan.delta_star,
        chern_tol,
        pass,
    })
}

/// Trivialization residual scaling: residual <= C_mesh * ||R|| over a
/// corpus of perturbed-flat bundles, with bounded spread of the measured
/// constants.
#[derive(Clone, Debug, serde::Serialize)]
#[serde(bound(serialize = "S: Scalar"))]
pub struct TrivializeThresholdReport<S: Scalar> {
    pub calibrated_constant: S,
    /// (measured ||R||, residual, residual / ||R||) per corpus sample.
    pub samples: Vec<(S, S, S)>,
    pub constant_spread: S,
    pub spread_budget: S,
    pub pass: bool,
}

pub fn trivialize_threshold_experiment<S: Scalar>(
    mesh: &Arc<Mesh<S>>,
    amplitudes: &[S],
    seeds_per_amplitude: u64,
) -> Result<TrivializeThresholdReport<S>> {
    let calibrated_constant = calibrate_constant(mesh, 1, sc(0.01), 0..8)?;
    let base = trivial_bundle(mesh, 1);
    let mut samples = Vec::new();
    let mut pass = true;
    let (mut cmin, mut cmax) = (S::zero(), S::zero());
    for (i, &a) in amplitudes.iter().enumerate() {
        for seed in 0..seeds_per_amplitude {
            let b = perturb(&base, a, 1000 + seed + ((i as u64) << 8));
            let delta = curvature(&b)?.sup_norm;
            let cert = trivialize(&b, S::one())?.certificate()?;
            let ratio = cert.residual / delta;
            if samples.is_empty() {
                cmin = ratio;
                cmax = ratio;
            } else {
                if ratio < cmin {
                    cmin = ratio;
                }
                if ratio > cmax {
                    cmax = ratio;
                }
            }
            if cert.residual > calibrated_constant * delta {
                pass = false;
            }
            samples.push((delta, cert.residual, ratio));
        }
    }
    let constant_spread = if cmin > S::zero() { cmax / cmin } else { S::zero() };
    let spread_budget: S = sc(10.0);
    if constant_spread > spread_budget || constant_spread <= S::zero() {
        pass = false;
    }
    Ok(TrivializeThresholdReport {
        calibrated_constant,
        samples,
        constant_spread,
        spread_budget,
        pass,
    })
}

/// Sanity check shared by perturbed corpora: a Bundle must stay in its
/// integer Chern sector under small perturbations.
pub fn sector_drift<S: Scalar>(b: &Bundle<S>, amplitude: S, seeds: std::ops::Range<u64>) -> Result<S> {
    let rep0 = crate::chern::chern_densities(b)?;
    let mut worst = S::zero();
    for seed in seeds {
        let p = perturb(b, amplitude, seed);
        let rep = crate::chern::chern_densities(&p)?;
        for (a, t) in rep0.totals.iter().zip(&rep.totals) {
            let d = (*t - *a).abs();
            if d > worst {
                worst = d;
            }
        }
    }
    Ok(worst)
}
