use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("karealab-{}-{}", name, std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_karealab"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn report(out: &Output) -> Value {
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    v["report"].clone()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn torus_spec(dir: &Path) -> String {
    write(
        dir,
        "spec.json",
        r#"{"Torus2":{"nx":8,"ny":8,"lx":8.0,"ly":8.0}}"#,
    )
}

#[test]
fn mesh_bundle_chern_pipeline_round_trips_through_files() {
    let dir = workdir("pipeline");
    let spec = torus_spec(&dir);
    let out = run(&dir, &["mesh", "gen", "--spec", &spec, "--name", "t8"]);
    assert!(out.status.success(), "{:?}", out);
    let summary = report(&out);
    assert_eq!(summary["mesh"]["betti1"], 2);

    let out = run(
        &dir,
        &[
            "bundle", "gen", "--mesh", "t8.json", "--kind", "monopole", "--flux", "1", "--name",
            "mono",
        ],
    );
    assert!(out.status.success(), "{:?}", out);

    let out = run(
        &dir,
        &[
            "chern", "eval", "--mesh", "t8.json", "--bundle", "mono.json", "--poly", "c1",
        ],
    );
    assert!(out.status.success(), "{:?}", out);
    let rep = report(&out);
    assert!((rep["poly_value"].as_f64().unwrap() - 1.0).abs() <= 1e-9);
    assert_eq!(
        rep["mesh_hash"].as_str().unwrap(),
        summary["mesh"]["hash"].as_str().unwrap()
    );
    // The report pair lands in the output directory.
    assert!(dir.join("chern-report.json").exists());
    assert!(dir.join("chern-report.csv").exists());
}

#[test]
fn karea_optimize_reports_the_flat_torus_bound() {
    let dir = workdir("optimize");
    let spec = torus_spec(&dir);
    run(&dir, &["mesh", "gen", "--spec", &spec, "--name", "t8"]);
    let out = run(
        &dir,
        &["karea", "optimize", "--mesh", "t8.json", "--flux", "1", "--name", "k"],
    );
    assert!(out.status.success(), "{:?}", out);
    let rep = report(&out);
    let oracle = 64.0 / std::f64::consts::TAU;
    assert!((rep["lower_bound"].as_f64().unwrap() - oracle).abs() <= 1e-6 * oracle);
    assert_eq!(rep["sector"][0], 1);
    let trace = std::fs::read_to_string(dir.join("k-trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,objective,total_0\n"));
    assert!(dir.join("k-optimum.json").exists());
}

#[test]
fn scaling_experiment_reports_are_byte_identical_across_reruns() {
    let dir = workdir("determinism");
    let spec = write(&dir, "exp.json", r#"{"experiment":"scaling","n":8,"c":2.0}"#);
    let out = run(&dir, &["experiment", "run", &spec]);
    assert!(out.status.success(), "{:?}", out);
    let first = std::fs::read(dir.join("scaling-report.json")).unwrap();
    let again = run(&dir, &["experiment", "run", &spec]);
    assert!(again.status.success());
    assert_eq!(first, std::fs::read(dir.join("scaling-report.json")).unwrap());
    assert_eq!(out.stdout, again.stdout);
    let rep = report(&out);
    assert!((rep["ratio"].as_f64().unwrap() - 4.0).abs() <= 4e-3);
}

#[test]
fn malformed_experiment_spec_exits_with_code_two() {
    let dir = workdir("schema");
    let spec = write(&dir, "bad.json", r#"{"experiment":"nonsense"}"#);
    let out = run(&dir, &["experiment", "run", &spec]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown variant"), "stderr: {}", err);

    let out = run(&dir, &["mesh", "info", "--mesh", "missing.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn branch_cut_inputs_exit_with_code_three() {
    let dir = workdir("branchcut");
    write(
        &dir,
        "tiny.json",
        r#"{"Torus2":{"nx":4,"ny":4,"lx":4.0,"ly":4.0}}"#,
    );
    run(&dir, &["mesh", "gen", "--spec", "tiny.json", "--name", "t4"]);
    // Flux 8 over 16 plaquettes puts every holonomy at exactly -1.
    let out = run(
        &dir,
        &[
            "bundle", "gen", "--mesh", "t4.json", "--kind", "monopole", "--flux", "8",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{:?}", out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("branch cut"));
}

#[test]
fn trivialize_frame_reports_the_chern_obstruction() {
    let dir = workdir("trivialize");
    let spec = torus_spec(&dir);
    run(&dir, &["mesh", "gen", "--spec", &spec, "--name", "t8"]);
    run(
        &dir,
        &[
            "bundle", "gen", "--mesh", "t8.json", "--kind", "monopole", "--flux", "1", "--name",
            "mono",
        ],
    );
    let out = run(
        &dir,
        &[
            "trivialize", "frame", "--mesh", "t8.json", "--bundle", "mono.json", "--eps", "0.5",
        ],
    );
    assert!(out.status.success(), "{:?}", out);
    let rep = report(&out);
    assert_eq!(rep["outcome"], "obstructed");
    assert_eq!(rep["obstruction"]["kind"], "NonzeroChern");

    run(
        &dir,
        &[
            "bundle", "gen", "--mesh", "t8.json", "--kind", "trivial", "--perturb", "1e-4",
            "--name", "flatish",
        ],
    );
    let out = run(
        &dir,
        &[
            "trivialize", "frame", "--mesh", "t8.json", "--bundle", "flatish.json", "--eps",
            "0.5",
        ],
    );
    assert!(out.status.success(), "{:?}", out);
    let rep = report(&out);
    assert_eq!(rep["outcome"], "trivial");
    assert!(rep["residual"].as_f64().unwrap() <= 1e-2);
}

#[test]
fn surgery_transplant_closes_the_books_through_files() {
    let dir = workdir("transplant");
    write(
        &dir,
        "spec.json",
        r#"{"Torus2":{"nx":12,"ny":12,"lx":12.0,"ly":12.0}}"#,
    );
    run(&dir, &["mesh", "gen", "--spec", "spec.json", "--name", "t12"]);
    let out = run(
        &dir,
        &["surgery", "plan", "--mesh", "t12.json", "--kind", "torus-band", "--name", "plan"],
    );
    assert!(out.status.success(), "{:?}", out);
    let out = run(
        &dir,
        &["mesh", "surgery", "--mesh", "t12.json", "--plan", "plan.json", "--name", "surg"],
    );
    assert!(out.status.success(), "{:?}", out);
    run(
        &dir,
        &[
            "bundle", "gen", "--mesh", "surg.json", "--kind", "monopole", "--flux", "1",
            "--name", "smono",
        ],
    );
    let out = run(
        &dir,
        &[
            "surgery", "transplant", "--mesh", "surg.json", "--bundle", "smono.json", "--plan",
            "plan.json", "--eps0", "0.5",
        ],
    );
    assert!(out.status.success(), "{:?}", out);
    let rep = report(&out);
    assert_eq!(rep["outcome"], "done");
    assert!(rep["identity_residual"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn output_directory_env_var_is_honored() {
    let dir = workdir("envvar");
    let spec = torus_spec(&dir);
    let out = Command::new(env!("CARGO_BIN_EXE_karealab"))
        .env("KAREALAB_OUT", &dir)
        .args(["mesh", "gen", "--spec", &spec, "--name", "env-mesh"])
        .current_dir(std::env::temp_dir())
        .output()
        .unwrap();
    assert!(out.status.success(), "{:?}", out);
    assert!(dir.join("env-mesh.json").exists());
}
