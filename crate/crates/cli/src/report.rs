//! Report emission: JSON to stdout and `<name>.json` / `<name>.csv` file
//! pairs in the output directory. The CSV is a flat key,value projection
//! of the JSON (arrays indexed numerically), so both carry the same data
//! and rerunning a command reproduces both byte for byte.

use karea_core::trivialize::Obstruction;
use karea_core::Result;
use serde_json::{json, Value};
use std::path::PathBuf;

const OUT_ENV: &str = "KAREALAB_OUT";

pub struct Sink {
    dir: PathBuf,
    seed: u64,
}

impl Sink {
    pub fn new(dir: Option<PathBuf>, seed: u64) -> Result<Self> {
        let dir = dir
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir)?;
        Ok(Sink { dir, seed })
    }

    /// Writes a mesh/bundle/plan artifact and returns its path.
    pub fn write_artifact(&self, name: &str, text: &str) -> Result<String> {
        let path = self.dir.join(format!("{}.json", name));
        std::fs::write(&path, text)?;
        Ok(path.to_string_lossy().into_owned())
    }

    /// Wraps the body in the standard envelope, prints it, and writes the
    /// JSON/CSV pair.
    pub fn emit(&self, name: &str, body: Value) -> Result<()> {
        let report = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "command": name,
            "seed": self.seed,
            "report": body,
        });
        let text = format!("{}\n", serde_json::to_string_pretty(&report)?);
        println!("{}", text.trim_end());
        std::fs::write(self.dir.join(format!("{}-report.json", name)), &text)?;
        let mut rows = Vec::new();
        flatten("", &report, &mut rows);
        let mut csv = String::from("key,value\n");
        for (k, v) in rows {
            csv.push_str(&format!("{},{}\n", csv_field(&k), csv_field(&v)));
        }
        std::fs::write(self.dir.join(format!("{}-report.csv", name)), csv)?;
        Ok(())
    }

    /// Plot-ready optimizer trace: one row per accepted step.
    pub fn write_trace_csv(&self, name: &str, trace: &[f64], sectors: &[Vec<f64>]) -> Result<()> {
        let width = sectors.first().map_or(0, Vec::len);
        let mut csv = String::from("iteration,objective");
        for i in 0..width {
            csv.push_str(&format!(",total_{}", i));
        }
        csv.push('\n');
        for (i, obj) in trace.iter().enumerate() {
            csv.push_str(&format!("{},{}", i, obj));
            for t in sectors.get(i).map_or(&[] as &[f64], Vec::as_slice) {
                csv.push_str(&format!(",{}", t));
            }
            csv.push('\n');
        }
        std::fs::write(self.dir.join(format!("{}-trace.csv", name)), csv)?;
        Ok(())
    }
}

pub fn obstruction_value(o: &Obstruction<f64>) -> Value {
    json!({
        "kind": format!("{:?}", o.kind),
        "witness_cell": o.witness_cell,
        "witness_value": o.witness_value,
        "detail": o.detail,
    })
}

fn flatten(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{}.{}", prefix, k)
        }
    };
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                flatten(&key(k), x, rows);
            }
        }
        Value::Array(items) => {
            for (i, x) in items.iter().enumerate() {
                flatten(&key(&i.to_string()), x, rows);
            }
        }
        Value::Null => rows.push((prefix.to_string(), String::new())),
        Value::Bool(b) => rows.push((prefix.to_string(), b.to_string())),
        Value::Number(n) => rows.push((prefix.to_string(), n.to_string())),
        Value::String(s) => rows.push((prefix.to_string(), s.clone())),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
