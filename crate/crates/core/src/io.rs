//! Plot-ready CSV and JSON artifacts. Floats are written with 17
//! significant digits so that every file reproduces the in-memory values
//! exactly; files are written to a temporary sibling and renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::hjb::ValueField;
use crate::measures::MeasureFlow;
use crate::mfg::MFGSolution;
use crate::trajectory::Curve;
use crate::Result;

/// Shortest round-tripping scientific form with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

fn row(out: &mut String, fields: &[f64]) {
    for (i, &f) in fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(f));
    }
    out.push('\n');
}

/// Time indices kept by a stride, always including the last.
pub fn strided(n: usize, stride: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (0..n).step_by(stride.max(1)).collect();
    if ks.last() != Some(&(n - 1)) {
        ks.push(n - 1);
    }
    ks
}

/// `t,x,v,u` for phase-space fields, `t,x,u` for limit fields.
pub fn value_csv(field: &ValueField, stride: usize) -> String {
    let mut out = String::new();
    match field.v {
        Some(va) => {
            out.push_str("t,x,v,u\n");
            for k in strided(field.t.n, stride) {
                for i in 0..field.x.n {
                    for j in 0..va.n {
                        row(
                            &mut out,
                            &[field.t.node(k), field.x.node(i), va.node(j), field.get(k, i, j)],
                        );
                    }
                }
            }
        }
        None => {
            out.push_str("t,x,u\n");
            for k in strided(field.t.n, stride) {
                for i in 0..field.x.n {
                    row(&mut out, &[field.t.node(k), field.x.node(i), field.get(k, i, 0)]);
                }
            }
        }
    }
    out
}

pub fn flow_csv(flow: &MeasureFlow, stride: usize) -> String {
    let mut out = String::from("t,x,v,w\n");
    for k in strided(flow.len(), stride) {
        let t = flow.times[k];
        for (x, v, w) in flow.ensembles[k].iter() {
            row(&mut out, &[t, x, v, w]);
        }
    }
    out
}

pub fn curve_csv(curve: &Curve) -> String {
    let (vel, acc) = (curve.velocity(), curve.acceleration());
    let mut out = String::from("t,gamma,dgamma,ddgamma\n");
    for i in 0..curve.len() {
        row(&mut out, &[curve.time(i), curve.gamma[i], vel[i], acc[i]]);
    }
    out
}

/// Generic CSV with a header line.
pub fn table_csv(header: &str, rows: &[Vec<f64>]) -> String {
    let mut out = String::with_capacity(rows.len() * 24 * header.split(',').count());
    let _ = writeln!(out, "{header}");
    for r in rows {
        row(&mut out, r);
    }
    out
}

/// Write `contents` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Metadata written next to a solution.
#[derive(Debug, Serialize)]
pub struct SolutionMeta<'a, C: Serialize> {
    pub kind: crate::mfg::SolutionKind,
    pub eps: f64,
    pub iterations: usize,
    pub converged: bool,
    pub fixed_point_gap: f64,
    pub gap_history: &'a [f64],
    pub config: &'a C,
}

/// `value.csv`, `flow.csv` and `meta.json` in `dir`.
pub fn write_solution<C: Serialize>(dir: &Path, sol: &MFGSolution, config: &C, stride: usize) -> Result<()> {
    write_atomic(&dir.join("value.csv"), value_csv(&sol.value, stride).as_bytes())?;
    write_atomic(&dir.join("flow.csv"), flow_csv(&sol.flow, stride).as_bytes())?;
    write_json(
        &dir.join("meta.json"),
        &SolutionMeta {
            kind: sol.kind,
            eps: sol.eps,
            iterations: sol.iterations,
            converged: sol.converged,
            fixed_point_gap: sol.fixed_point_gap,
            gap_history: &sol.gap_history,
            config,
        },
    )
}
