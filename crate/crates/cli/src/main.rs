//! `karealab`: command-line front end. Every command prints a JSON report
//! to stdout; report-producing commands also write `<name>.json` and a
//! flattened `<name>.csv` into the output directory (`--out`, or
//! `$KAREALAB_OUT`, or the working directory).
//!
//! Exit codes: 0 success, 1 failed in-report assertion, 2 input/schema
//! error, 3 numerical-domain error (branch cut or sector escape).

mod report;

use clap::{Parser, Subcommand, ValueEnum};
use karea_core::bundle::{
    concentrated_monopole_bundle, curvature, direct_image, gauge, monopole_bundle, perturb,
    pullback, random_gauge, trivial_bundle, Bundle, FluxSpec,
};
use karea_core::chern::{chern_densities, chern_number, ChernPolynomial};
use karea_core::experiments::{
    cylinder_cap_experiment, surgery_bookkeeping_experiment, torus_covering_experiment,
    torus_scaling_experiment, trivialize_threshold_experiment,
};
use karea_core::karea::{
    covering_experiment, minimize_curvature, scaling_experiment, sector_start, OptimizerConfig,
};
use karea_core::mesh::{
    connected_sum, covering, covering_projection_map, gen_mesh, plan_sphere_tube_surgery,
    plan_torus4_ring_surgery, plan_torus_band_surgery, scale_metric, surgery, GeneratorSpec,
};
use karea_core::surgery::{threshold_scan, transplant, transplant_sum, TransplantOutcome};
use karea_core::trivialize::{
    collar_extend, flatten_collar, trivialize, CutoffProfile, TrivializeOutcome,
};
use karea_core::{Bundle64, KareaError, Mesh64, Result, SurgeryPlan64};
use report::{obstruction_value, Sink};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "karealab", version, about = "K-area lattice laboratory")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for seeded operations (perturbations, gauges, scans).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory; overrides $KAREALAB_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate and transform meshes.
    Mesh {
        #[command(subcommand)]
        cmd: MeshCmd,
    },
    /// Generate and transform bundles.
    Bundle {
        #[command(subcommand)]
        cmd: BundleCmd,
    },
    /// Chern-Weil densities and polynomial evaluation.
    Chern {
        #[command(subcommand)]
        cmd: ChernCmd,
    },
    /// Constructive trivialization and collar extension.
    Trivialize {
        #[command(subcommand)]
        cmd: TrivializeCmd,
    },
    /// Surgery plans, bundle transplants, threshold scans.
    Surgery {
        #[command(subcommand)]
        cmd: SurgeryCmd,
    },
    /// Sector-constrained curvature minimization.
    Karea {
        #[command(subcommand)]
        cmd: KareaCmd,
    },
    /// Scripted self-checking experiments.
    Experiment {
        #[command(subcommand)]
        cmd: ExperimentCmd,
    },
}

#[derive(Subcommand)]
enum MeshCmd {
    /// Build a mesh from a generator spec file.
    Gen {
        /// JSON generator spec, e.g. {"Torus2":{"nx":8,"ny":8,"lx":8.0,"ly":8.0}}.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "mesh")]
        name: String,
    },
    /// Summarize a mesh file.
    Info {
        #[arg(long)]
        mesh: PathBuf,
    },
    /// Apply a surgery plan.
    Surgery {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value = "surgered")]
        name: String,
    },
    /// Connected sum of two meshes at the given top cells.
    Sum {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        cell_a: usize,
        #[arg(long)]
        cell_b: usize,
        #[arg(long, default_value = "sum")]
        name: String,
    },
    /// Scale the metric by a factor.
    Scale {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        factor: f64,
        #[arg(long, default_value = "scaled")]
        name: String,
    },
    /// Factor-wise torus covering; writes the total space.
    Cover {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, value_delimiter = ',')]
        factors: Vec<usize>,
        #[arg(long, default_value = "cover")]
        name: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BundleKind {
    Trivial,
    Monopole,
    Concentrated,
}

#[derive(Subcommand)]
enum BundleCmd {
    /// Build a bundle over a mesh.
    Gen {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, value_enum, default_value = "trivial")]
        kind: BundleKind,
        #[arg(long, default_value_t = 1)]
        rank: usize,
        /// Integer, or a FluxSpec JSON like {"Planes":[[[0,1],1]]}.
        #[arg(long)]
        flux: Option<String>,
        /// Post-compose a seeded random perturbation of this amplitude.
        #[arg(long)]
        perturb: Option<f64>,
        #[arg(long, default_value = "bundle")]
        name: String,
    },
    /// Apply a seeded random gauge transform.
    Gauge {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "gauged")]
        name: String,
    },
    /// Curvature report: sup field-strength norm and witness plaquette.
    Curvature {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "curvature")]
        name: String,
    },
    /// Pull a base bundle back along a torus covering projection.
    Pullback {
        /// Base mesh of the covering.
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_delimiter = ',')]
        factors: Vec<usize>,
        #[arg(long, default_value = "pullback")]
        name: String,
    },
    /// Direct image of a total-space bundle down a torus covering.
    Pushforward {
        /// Base mesh of the covering.
        #[arg(long)]
        mesh: PathBuf,
        /// Bundle over the covering total space.
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_delimiter = ',')]
        factors: Vec<usize>,
        #[arg(long, default_value = "pushforward")]
        name: String,
    },
}

#[derive(Subcommand)]
enum ChernCmd {
    /// Evaluate basis Chern numbers, optionally against a polynomial.
    Eval {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        /// Rational combination of basis monomials, e.g. "c1^2 - 2 c2".
        #[arg(long)]
        poly: Option<String>,
        /// Include per-cell densities in the report.
        #[arg(long)]
        densities: bool,
        #[arg(long, default_value = "chern")]
        name: String,
    },
}

#[derive(Subcommand)]
enum TrivializeCmd {
    /// Global frame search; emits a certificate or an obstruction.
    Frame {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        /// Curvature smallness threshold.
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value = "trivialize")]
        name: String,
    },
    /// Flatten the collar and extend it by flat trivial layers.
    Extend {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        /// End-slice trivialization budget.
        #[arg(long)]
        eps0: f64,
        /// Cutoff profile samples file {"samples":[[t,chi],..],"slope_bound":1.0}.
        #[arg(long)]
        chi: Option<PathBuf>,
        /// Skip the collar-flattening pass.
        #[arg(long)]
        no_flatten: bool,
        #[arg(long, default_value = "extended")]
        name: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanKind {
    TorusBand,
    SphereTube,
    Torus4Ring,
}

#[derive(Subcommand)]
enum SurgeryCmd {
    /// Build a surgery plan for a supported mesh family.
    Plan {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, value_enum)]
        kind: PlanKind,
        /// Band width (torus-band plans only).
        #[arg(long, default_value_t = 2)]
        width: usize,
        #[arg(long, default_value = "plan")]
        name: String,
    },
    /// Transplant a bundle over a surgered mesh onto its closed pieces.
    Transplant {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        /// Surgery plan file; omit with --sum for connected sums.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Treat the mesh as a connected sum (regions M1/M2).
        #[arg(long)]
        sum: bool,
        #[arg(long)]
        eps0: f64,
        #[arg(long, default_value = "transplant")]
        name: String,
    },
    /// Sweep perturbed flux bundles and report the Chern-vanishing
    /// curvature threshold.
    ThresholdScan {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1")]
        fluxes: Vec<i64>,
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.02")]
        amplitudes: Vec<f64>,
        /// Number of seeds per (flux, amplitude); offsets by --seed.
        #[arg(long, default_value_t = 2)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-6)]
        chern_tol: f64,
        #[arg(long, default_value = "threshold")]
        name: String,
    },
}

#[derive(Subcommand)]
enum KareaCmd {
    /// Minimize the sup curvature norm within the starting Chern sector.
    Optimize {
        #[arg(long)]
        mesh: PathBuf,
        /// Starting bundle file; omit to start from --rank/--flux.
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        rank: usize,
        #[arg(long, default_value = "1")]
        flux: String,
        /// OptimizerConfig JSON file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "karea")]
        name: String,
    },
    /// Check that scaling the metric by c scales the bound by c^2.
    Scaling {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        c: f64,
        #[arg(long, default_value_t = 1)]
        rank: usize,
        #[arg(long, default_value = "1")]
        flux: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "scaling")]
        name: String,
    },
    /// Check that a torus covering multiplies the bound by the sheet count.
    Covering {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, value_delimiter = ',')]
        factors: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        rank: usize,
        #[arg(long, default_value = "1")]
        flux: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "covering")]
        name: String,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Run a self-checking experiment from a spec file.
    Run {
        spec: PathBuf,
    },
}

/// Experiment spec schema accepted by `experiment run`.
#[derive(serde::Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case", deny_unknown_fields)]
enum ExperimentSpec {
    /// Flat-holonomy obstruction on an open cylinder vs the positive
    /// Chern-vanishing threshold after capping.
    CylinderCap {
        n: usize,
        levels: usize,
        seeds: u64,
    },
    /// (2,2) covering ratio plus refinement stability of the torus bound.
    TorusCovering {
        n: usize,
        length: f64,
        resolutions: Vec<usize>,
        #[serde(default)]
        config: Option<OptimizerConfig<f64>>,
    },
    /// Metric scaling ratio on a square torus.
    Scaling {
        n: usize,
        c: f64,
        #[serde(default)]
        config: Option<OptimizerConfig<f64>>,
    },
    /// Transplant bookkeeping through a torus band surgery.
    SurgeryBookkeeping {
        n: usize,
        seeds: u64,
    },
    /// Residual <= C * ||R|| over a perturbed-flat corpus on a sphere.
    TrivializeThreshold {
        sphere_n: usize,
        amplitudes: Vec<f64>,
        seeds_per_amplitude: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        // Ignore "already initialized": only the first build wins.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &KareaError) -> u8 {
    match e {
        KareaError::BranchCut { .. }
        | KareaError::BranchCutAt { .. }
        | KareaError::SectorEscape { .. } => 3,
        KareaError::Io(_)
        | KareaError::Json(_)
        | KareaError::Config(_)
        | KareaError::Plan(_)
        | KareaError::Unsupported(_)
        | KareaError::Precondition(_) => 2,
        KareaError::Invariant(_) | KareaError::Gluing(_) => 1,
    }
}

fn load_mesh(path: &Path) -> Result<Arc<Mesh64>> {
    let m = Mesh64::from_json(&std::fs::read_to_string(path)?)?;
    m.validate()?;
    Ok(Arc::new(m))
}

fn load_bundle(path: &Path, base: Arc<Mesh64>) -> Result<Bundle64> {
    Bundle::from_json(&std::fs::read_to_string(path)?, base)
}

fn parse_flux(s: &str) -> Result<FluxSpec> {
    if let Ok(k) = s.parse::<i64>() {
        return Ok(FluxSpec::Simple(k));
    }
    serde_json::from_str(s).map_err(KareaError::Json)
}

fn load_config(path: &Option<PathBuf>, seed: u64) -> Result<OptimizerConfig<f64>> {
    match path {
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => Ok(OptimizerConfig {
            seed,
            ..OptimizerConfig::default()
        }),
    }
}

fn mesh_summary(m: &Mesh64) -> Value {
    json!({
        "dim": m.dim,
        "vertices": m.num_vertices,
        "edges": m.edges.len(),
        "plaquettes": m.plaquettes.len(),
        "top_cells": m.top_dim_cells(),
        "euler_characteristic": m.euler_characteristic(),
        "betti1": m.betti1(),
        "total_area": m.total_area(),
        "boundary_cells": m.boundary.len(),
        "regions": m.regions.keys().cloned().collect::<Vec<_>>(),
        "hash": m.hash(),
    })
}

fn run(cli: &Cli) -> Result<bool> {
    let sink = Sink::new(cli.out.clone(), cli.seed)?;
    match &cli.cmd {
        Cmd::Mesh { cmd } => run_mesh(cmd, &sink),
        Cmd::Bundle { cmd } => run_bundle(cmd, &sink, cli.seed),
        Cmd::Chern { cmd } => run_chern(cmd, &sink),
        Cmd::Trivialize { cmd } => run_trivialize(cmd, &sink),
        Cmd::Surgery { cmd } => run_surgery(cmd, &sink, cli.seed),
        Cmd::Karea { cmd } => run_karea(cmd, &sink, cli.seed),
        Cmd::Experiment { cmd } => run_experiment(cmd, &sink),
    }
}

fn run_mesh(cmd: &MeshCmd, sink: &Sink) -> Result<bool> {
    match cmd {
        MeshCmd::Gen { spec, name } => {
            let gspec: GeneratorSpec<f64> = serde_json::from_str(&std::fs::read_to_string(spec)?)?;
            let m = gen_mesh(&gspec)?;
            let path = sink.write_artifact(name, &m.to_json()?)?;
            sink.emit(name, json!({"mesh": mesh_summary(&m), "file": path}))?;
        }
        MeshCmd::Info { mesh } => {
            let m = load_mesh(mesh)?;
            sink.emit("mesh-info", json!({"mesh": mesh_summary(&m)}))?;
        }
        MeshCmd::Surgery { mesh, plan, name } => {
            let m = load_mesh(mesh)?;
            let plan: SurgeryPlan64 = serde_json::from_str(&std::fs::read_to_string(plan)?)?;
            let out = surgery(&m, &plan)?;
            let path = sink.write_artifact(name, &out.to_json()?)?;
            sink.emit(
                name,
                json!({"input_hash": m.hash(), "mesh": mesh_summary(&out), "file": path}),
            )?;
        }
        MeshCmd::Sum {
            a,
            b,
            cell_a,
            cell_b,
            name,
        } => {
            let ma = load_mesh(a)?;
            let mb = load_mesh(b)?;
            let out = connected_sum(&ma, &mb, *cell_a, *cell_b)?.mesh;
            let path = sink.write_artifact(name, &out.to_json()?)?;
            sink.emit(name, json!({"mesh": mesh_summary(&out), "file": path}))?;
        }
        MeshCmd::Scale { mesh, factor, name } => {
            let m = load_mesh(mesh)?;
            let out = scale_metric(&m, *factor)?;
            let path = sink.write_artifact(name, &out.to_json()?)?;
            sink.emit(
                name,
                json!({"factor": factor, "mesh": mesh_summary(&out), "file": path}),
            )?;
        }
        MeshCmd::Cover { mesh, factors, name } => {
            let m = load_mesh(mesh)?;
            let cov = covering(&m, factors)?;
            let path = sink.write_artifact(name, &cov.total.to_json()?)?;
            sink.emit(
                name,
                json!({
                    "base_hash": m.hash(),
                    "sheets": cov.sheets,
                    "mesh": mesh_summary(&cov.total),
                    "file": path,
                }),
            )?;
        }
    }
    Ok(true)
}

fn run_bundle(cmd: &BundleCmd, sink: &Sink, seed: u64) -> Result<bool> {
    match cmd {
        BundleCmd::Gen {
            mesh,
            kind,
            rank,
            flux,
            perturb: amp,
            name,
        } => {
            let m = load_mesh(mesh)?;
            let fluxes = flux.as_deref().map(parse_flux).transpose()?;
            let mut b = match kind {
                BundleKind::Trivial => trivial_bundle(&m, *rank),
                BundleKind::Monopole => {
                    let f = fluxes
                        .ok_or_else(|| KareaError::Config("monopole bundles need --flux".into()))?;
                    if *rank == 1 {
                        monopole_bundle(&m, &f)?
                    } else {
                        sector_start(&m, *rank, &f)?
                    }
                }
                BundleKind::Concentrated => {
                    let f = fluxes
                        .ok_or_else(|| KareaError::Config("concentrated bundles need --flux".into()))?;
                    concentrated_monopole_bundle(&m, &f)?
                }
            };
            if let Some(a) = amp {
                b = perturb(&b, *a, seed);
            }
            let path = sink.write_artifact(name, &b.to_json()?)?;
            sink.emit(
                name,
                json!({
                    "mesh_hash": m.hash(),
                    "rank": b.rank,
                    "sup_norm": curvature(&b)?.sup_norm,
                    "file": path,
                }),
            )?;
        }
        BundleCmd::Gauge { mesh, bundle, name } => {
            let m = load_mesh(mesh)?;
            let b = load_bundle(bundle, m.clone())?;
            let g = random_gauge(&m, b.rank, seed);
            let out = gauge(&b, &g)?;
            let path = sink.write_artifact(name, &out.to_json()?)?;
            sink.emit(name, json!({"mesh_hash": m.hash(), "file": path}))?;
        }
        BundleCmd::Curvature { mesh, bundle, name } => {
            let m = load_mesh(mesh)?;
            let b = load_bundle(bundle, m.clone())?;
            let rep = curvature(&b)?;
            sink.emit(
                name,
                json!({
                    "mesh_hash": m.hash(),
                    "sup_norm": rep.sup_norm,
                    "argmax_plaquette": rep.argmax_plaquette,
                    "unitarity_defect": b.unitarity_defect(),
                }),
            )?;
        }
        BundleCmd::Pullback {
            mesh,
            bundle,
            factors,
            name,
        } => {
            let m = load_mesh(mesh)?;
            let cov = covering(&m, factors)?;
            let b = load_bundle(bundle, cov.base.clone())?;
            let out = pullback(&b, &covering_projection_map(&cov))?;
            let mesh_path = sink.write_artifact(&format!("{}-mesh", name), &cov.total.to_json()?)?;
            let path = sink.write_artifact(name, &out.to_json()?)?;
            sink.emit(
                name,
                json!({
                    "base_hash": m.hash(),
                    "total_hash": cov.total.hash(),
                    "sheets": cov.sheets,
                    "file": path,
                    "mesh_file": mesh_path,
                }),
            )?;
        }
        BundleCmd::Pushforward {
            mesh,
            bundle,
            factors,
            name,
        } => {
            let m = load_mesh(mesh)?;
            let cov = covering(&m, factors)?;
            let b = load_bundle(bundle, cov.total.clone())?;
            let out = direct_image(&b, &cov)?;
            let path = sink.write_artifact(name, &out.to_json()?)?;
            sink.emit(
                name,
                json!({
                    "base_hash": m.hash(),
                    "rank": out.rank,
                    "sup_norm": curvature(&out)?.sup_norm,
                    "file": path,
                }),
            )?;
        }
    }
    Ok(true)
}

fn run_chern(cmd: &ChernCmd, sink: &Sink) -> Result<bool> {
    let ChernCmd::Eval {
        mesh,
        bundle,
        poly,
        densities,
        name,
    } = cmd;
    let m = load_mesh(mesh)?;
    let b = load_bundle(bundle, m.clone())?;
    let rep = chern_densities(&b)?;
    let poly_value = poly
        .as_deref()
        .map(|p| chern_number(&b, &ChernPolynomial::parse(m.dim, p)?))
        .transpose()?;
    let mut body = json!({
        "mesh_hash": m.hash(),
        "basis": rep.basis,
        "totals": rep.totals,
        "integrality_residual": rep.integrality_residual,
    });
    if *densities {
        body["densities"] = json!(rep.densities);
    }
    if let Some(v) = poly_value {
        body["poly"] = json!(poly);
        body["poly_value"] = json!(v);
    }
    sink.emit(name, body)?;
    Ok(true)
}

fn run_trivialize(cmd: &TrivializeCmd, sink: &Sink) -> Result<bool> {
    match cmd {
        TrivializeCmd::Frame {
            mesh,
            bundle,
            eps,
            name,
        } => {
            let m = load_mesh(mesh)?;
            let b = load_bundle(bundle, m.clone())?;
            let body = match trivialize(&b, *eps)? {
                TrivializeOutcome::Trivial(cert) => json!({
                    "mesh_hash": m.hash(),
                    "eps": eps,
                    "outcome": "trivial",
                    "residual": cert.residual,
                    "constant_estimate": cert.constant_estimate,
                }),
                TrivializeOutcome::Obstructed(o) => json!({
                    "mesh_hash": m.hash(),
                    "eps": eps,
                    "outcome": "obstructed",
                    "obstruction": obstruction_value(&o),
                }),
            };
            sink.emit(name, body)?;
        }
        TrivializeCmd::Extend {
            mesh,
            bundle,
            eps0,
            chi,
            no_flatten,
            name,
        } => {
            let m = load_mesh(mesh)?;
            let b = load_bundle(bundle, m.clone())?;
            let profile = match chi {
                Some(p) => {
                    #[derive(serde::Deserialize)]
                    struct ChiFile {
                        samples: Vec<(f64, f64)>,
                        #[serde(default = "one")]
                        slope_bound: f64,
                    }
                    fn one() -> f64 {
                        1.0
                    }
                    let f: ChiFile = serde_json::from_str(&std::fs::read_to_string(p)?)?;
                    CutoffProfile {
                        samples: f.samples,
                        slope_bound: f.slope_bound,
                    }
                }
                None => CutoffProfile::standard(),
            };
            let flat = if *no_flatten { b } else { flatten_collar(&b)? };
            let ext = collar_extend(&flat, &profile, *eps0)?;
            let mesh_path = sink.write_artifact(&format!("{}-mesh", name), &ext.base.to_json()?)?;
            let path = sink.write_artifact(name, &ext.to_json()?)?;
            sink.emit(
                name,
                json!({
                    "input_hash": m.hash(),
                    "eps0": eps0,
                    "extended_hash": ext.base.hash(),
                    "sup_norm": curvature(&ext)?.sup_norm,
                    "file": path,
                    "mesh_file": mesh_path,
                }),
            )?;
        }
    }
    Ok(true)
}

fn run_surgery(cmd: &SurgeryCmd, sink: &Sink, seed: u64) -> Result<bool> {
    match cmd {
        SurgeryCmd::Plan {
            mesh,
            kind,
            width,
            name,
        } => {
            let m = load_mesh(mesh)?;
            let plan = match kind {
                PlanKind::TorusBand => plan_torus_band_surgery(&m, *width)?,
                PlanKind::SphereTube => plan_sphere_tube_surgery(&m)?,
                PlanKind::Torus4Ring => plan_torus4_ring_surgery(&m)?,
            };
            let path = sink.write_artifact(name, &serde_json::to_string_pretty(&plan)?)?;
            sink.emit(
                name,
                json!({
                    "mesh_hash": m.hash(),
                    "p": plan.p,
                    "q": plan.q,
                    "collar_levels": plan.collar_levels,
                    "file": path,
                }),
            )?;
        }
        SurgeryCmd::Transplant {
            mesh,
            bundle,
            plan,
            sum,
            eps0,
            name,
        } => {
            let m = load_mesh(mesh)?;
            let b = load_bundle(bundle, m.clone())?;
            let outcome = if *sum {
                transplant_sum(&b, *eps0)?
            } else {
                let p = plan
                    .as_ref()
                    .ok_or_else(|| KareaError::Config("transplant needs --plan or --sum".into()))?;
                let plan: SurgeryPlan64 = serde_json::from_str(&std::fs::read_to_string(p)?)?;
                transplant(&b, &plan, *eps0)?
            };
            let body = match outcome {
                TransplantOutcome::Done(r) => json!({
                    "mesh_hash": m.hash(),
                    "eps0": eps0,
                    "outcome": "done",
                    "integrals": r.integrals,
                    "identity_residual": r.identity_residual,
                }),
                TransplantOutcome::Obstructed(o) => json!({
                    "mesh_hash": m.hash(),
                    "eps0": eps0,
                    "outcome": "obstructed",
                    "obstruction": obstruction_value(&o),
                }),
            };
            sink.emit(name, body)?;
        }
        SurgeryCmd::ThresholdScan {
            mesh,
            fluxes,
            amplitudes,
            seeds,
            chern_tol,
            name,
        } => {
            let m = load_mesh(mesh)?;
            let scan = threshold_scan(&m, fluxes, amplitudes, seed..seed + seeds, *chern_tol)?;
            sink.emit(
                name,
                json!({"mesh_hash": m.hash(), "scan": scan}),
            )?;
        }
    }
    Ok(true)
}

fn run_karea(cmd: &KareaCmd, sink: &Sink, seed: u64) -> Result<bool> {
    match cmd {
        KareaCmd::Optimize {
            mesh,
            bundle,
            rank,
            flux,
            config,
            name,
        } => {
            let m = load_mesh(mesh)?;
            let cfg = load_config(config, seed)?;
            let start = match bundle {
                Some(p) => load_bundle(p, m.clone())?,
                None => sector_start(&m, *rank, &parse_flux(flux)?)?,
            };
            let est = minimize_curvature(&start, &cfg)?;
            let bundle_path = sink.write_artifact(&format!("{}-optimum", name), &est.optimum.to_json()?)?;
            sink.write_trace_csv(name, &est.trace, &est.sector_trace)?;
            sink.emit(
                name,
                json!({
                    "mesh_hash": m.hash(),
                    "config": cfg,
                    "lower_bound": est.lower_bound,
                    "sup_norm": est.sup_norm,
                    "soft_objective": est.soft_objective,
                    "iterations": est.iterations,
                    "sector": est.sector,
                    "sector_start": est.sector_start,
                    "sector_end": est.sector_end,
                    "trace": est.trace,
                    "sector_trace": est.sector_trace,
                    "optimum_file": bundle_path,
                }),
            )?;
            Ok(true)
        }
        KareaCmd::Scaling {
            mesh,
            c,
            rank,
            flux,
            config,
            name,
        } => {
            let m = load_mesh(mesh)?;
            let cfg = load_config(config, seed)?;
            let rep = scaling_experiment(&m, *c, (*rank, parse_flux(flux)?), &cfg)?;
            let pass = rep.pass;
            sink.emit(name, json!({"mesh_hash": m.hash(), "config": cfg, "report": rep}))?;
            if !pass {
                eprintln!("FAIL: scaling ratio outside tolerance");
            }
            Ok(pass)
        }
        KareaCmd::Covering {
            mesh,
            factors,
            rank,
            flux,
            config,
            name,
        } => {
            let m = load_mesh(mesh)?;
            let cfg = load_config(config, seed)?;
            let rep = covering_experiment(&m, factors, (*rank, parse_flux(flux)?), &cfg)?;
            let pass = rep.pass && rep.monotone;
            sink.emit(name, json!({"mesh_hash": m.hash(), "config": cfg, "report": rep}))?;
            if !rep.pass {
                eprintln!("FAIL: covering ratio outside tolerance");
            } else if !rep.monotone {
                eprintln!("FAIL: direct image increased the curvature sup norm");
            }
            Ok(pass)
        }
    }
}

fn run_experiment(cmd: &ExperimentCmd, sink: &Sink) -> Result<bool> {
    let ExperimentCmd::Run { spec } = cmd;
    let spec: ExperimentSpec = serde_json::from_str(&std::fs::read_to_string(spec)?)?;
    let (name, body, pass, fail_msg) = match spec {
        ExperimentSpec::CylinderCap { n, levels, seeds } => {
            let rep = cylinder_cap_experiment::<f64>(n, levels, 0..seeds)?;
            let fail = if rep.cylinder_obstruction.is_none() {
                "open cylinder was not obstructed"
            } else if rep.cylinder_sup_norm > 1e-12 {
                "obstructed bundle is not flat"
            } else {
                "capped mesh has no positive Chern-vanishing threshold"
            };
            (
                "cylinder-cap",
                serde_json::to_value(&rep)?,
                rep.pass,
                fail,
            )
        }
        ExperimentSpec::TorusCovering {
            n,
            length,
            resolutions,
            config,
        } => {
            let cfg = config.unwrap_or_default();
            let rep = torus_covering_experiment(n, length, &resolutions, &cfg)?;
            let fail = if !rep.covering.pass {
                "covering ratio outside tolerance"
            } else if !rep.covering.monotone {
                "direct image increased the curvature sup norm"
            } else {
                "refinement spread outside tolerance"
            };
            (
                "torus-covering",
                serde_json::to_value(&rep)?,
                rep.pass,
                fail,
            )
        }
        ExperimentSpec::Scaling { n, c, config } => {
            let cfg = config.unwrap_or_default();
            let rep = torus_scaling_experiment(n, c, &cfg)?;
            (
                "scaling",
                serde_json::to_value(&rep)?,
                rep.pass,
                "scaling ratio outside tolerance",
            )
        }
        ExperimentSpec::SurgeryBookkeeping { n, seeds } => {
            let rep = surgery_bookkeeping_experiment::<f64>(n, 0..seeds)?;
            let fail = if rep.identity_residual > rep.residual_budget {
                "bookkeeping identity residual over budget"
            } else {
                "no positive Chern-vanishing threshold on the surgered mesh"
            };
            (
                "surgery-bookkeeping",
                serde_json::to_value(&rep)?,
                rep.pass,
                fail,
            )
        }
        ExperimentSpec::TrivializeThreshold {
            sphere_n,
            amplitudes,
            seeds_per_amplitude,
        } => {
            let m = Arc::new(gen_mesh(&GeneratorSpec::CubedSphere {
                n: sphere_n,
                radius: 1.0,
            })?);
            let rep = trivialize_threshold_experiment(&m, &amplitudes, seeds_per_amplitude)?;
            let fail = if rep.constant_spread > rep.spread_budget {
                "trivialization constant spread over budget"
            } else {
                "a residual exceeded the calibrated constant times ||R||"
            };
            let mut body = serde_json::to_value(&rep)?;
            body["mesh_hash"] = json!(m.hash());
            ("trivialize-threshold", body, rep.pass, fail)
        }
    };
    sink.emit(name, body)?;
    if !pass {
        eprintln!("FAIL: {}", fail_msg);
    }
    Ok(pass)
}
