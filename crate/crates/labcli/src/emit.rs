//! Output plumbing: diagnostic tables as CSV, raw particle paths as CSV
//! (and back), a JSON manifest with the provenance stamp, and SVG line
//! plots. Every writer formats floats with the shortest round-trip form,
//! so identical reports produce identical bytes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use mvlab_core::particles::MeasureFlow;

use crate::study::StudyReport;
use crate::svg;

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("raw data at {path} is malformed: {reason}")]
    BadRaw { path: String, reason: String },
}

fn write_file(path: &Path, contents: &str) -> Result<(), EmitError> {
    std::fs::write(path, contents).map_err(|source| EmitError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// A study's files on disk. `write_raw` is off when re-emitting from
/// stored raw data (the raw files are the inputs then, not outputs).
pub fn emit_outputs(
    report: &StudyReport,
    out_dir: &Path,
    write_raw: bool,
) -> Result<Vec<String>, EmitError> {
    std::fs::create_dir_all(out_dir).map_err(|source| EmitError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let csv_on = report.config.output.formats.iter().any(|f| f == "csv");
    let json_on = report.config.output.formats.iter().any(|f| f == "json");
    let svg_on = report.config.output.formats.iter().any(|f| f == "svg");
    let d = &report.config.diagnostics;
    let any_diag = d.martingale || d.qv || d.regularity || d.distances;
    let mut files: Vec<String> = Vec::new();

    if csv_on {
        if !report.martingale.is_empty() {
            files.push(write_martingale_csv(report, out_dir)?);
        }
        if !report.qv.is_empty() {
            files.push(write_qv_csv(report, out_dir)?);
        }
        if !report.regularity.is_empty() {
            files.push(write_regularity_csv(report, out_dir)?);
        }
        if !report.distances.is_empty() {
            files.push(write_distances_csv(report, out_dir)?);
        }
        if any_diag {
            for (cell, flows) in report.cells.iter().zip(&report.raw_flows) {
                let Some(flows) = flows else { continue };
                let raw_name = format!("raw_{}_n{}_k{}.csv", report.scenario, cell.n, cell.k);
                if write_raw {
                    write_file(&out_dir.join(&raw_name), &raw_paths_csv(flows))?;
                }
                files.push(raw_name);
                // The simulator records the shared path even when sigma_bar
                // vanishes; only export it when it actually drives the system.
                let common_active = report.config.coefficients.sigma_bar > 0.0;
                if common_active && flows.iter().any(|f| f.common_dim() > 0) {
                    let z_name =
                        format!("common_{}_n{}_k{}.csv", report.scenario, cell.n, cell.k);
                    if write_raw {
                        write_file(&out_dir.join(&z_name), &common_paths_csv(flows))?;
                    }
                    files.push(z_name);
                }
            }
        }
    }

    if svg_on {
        if !report.regularity.is_empty() {
            files.push(write_regularity_svg(report, out_dir)?);
        }
        if !report.distances.is_empty() {
            files.push(write_distances_svg(report, out_dir)?);
        }
    }

    if json_on || files.is_empty() {
        let name = "manifest.json".to_string();
        write_file(&out_dir.join(&name), &manifest_json(report, &files))?;
        files.push(name);
    }
    Ok(files)
}

fn write_martingale_csv(report: &StudyReport, dir: &Path) -> Result<String, EmitError> {
    let mut out = String::from("n,k,reps,seed,test_name,phi_id,s,t,mean,se,z,pass\n");
    for row in &report.martingale {
        let r = &row.report;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            row.n,
            row.k,
            row.reps,
            row.seed,
            row.test_name,
            r.phi_id,
            fmt_f64(r.s),
            fmt_f64(r.t),
            fmt_f64(r.mean),
            fmt_f64(r.se),
            fmt_f64(r.z),
            r.pass
        )
        .expect("write to string");
    }
    let name = format!("martingale_{}.csv", report.scenario);
    write_file(&dir.join(&name), &out)?;
    Ok(name)
}

fn write_qv_csv(report: &StudyReport, dir: &Path) -> Result<String, EmitError> {
    let mut out = String::from("n,k,reps,seed,phi_id,mean_realized,mean_predicted,rel_error,pass\n");
    for row in &report.qv {
        let r = &row.report;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            row.n,
            row.k,
            row.reps,
            row.seed,
            r.phi_id,
            fmt_f64(r.mean_realized),
            fmt_f64(r.mean_predicted),
            fmt_f64(r.mean_relative_error),
            r.pass
        )
        .expect("write to string");
    }
    let name = format!("qv_{}.csv", report.scenario);
    write_file(&dir.join(&name), &out)?;
    Ok(name)
}

fn write_regularity_csv(report: &StudyReport, dir: &Path) -> Result<String, EmitError> {
    let mut out = String::from("n,k,reps,seed,t,mean_norm,q,r,w,fit_c,fit_gamma\n");
    for row in &report.regularity {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            row.n,
            row.k,
            row.reps,
            row.seed,
            fmt_f64(row.t),
            fmt_f64(row.mean_norm),
            fmt_f64(row.q),
            fmt_f64(row.r),
            fmt_f64(row.w),
            fmt_f64(row.fit_c),
            fmt_f64(row.fit_gamma)
        )
        .expect("write to string");
    }
    let name = format!("regularity_{}.csv", report.scenario);
    write_file(&dir.join(&name), &out)?;
    Ok(name)
}

fn write_distances_csv(report: &StudyReport, dir: &Path) -> Result<String, EmitError> {
    let mut out = String::from("n,k,reps,seed,mode,p,xi,t0,value,pair\n");
    for row in &report.distances {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.n,
            row.k,
            row.reps,
            row.seed,
            row.mode,
            fmt_f64(row.p),
            fmt_f64(row.xi),
            fmt_opt(row.t0),
            fmt_f64(row.value),
            row.pair
        )
        .expect("write to string");
    }
    let name = format!("distances_{}.csv", report.scenario);
    write_file(&dir.join(&name), &out)?;
    Ok(name)
}

fn write_regularity_svg(report: &StudyReport, dir: &Path) -> Result<String, EmitError> {
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for row in &report.regularity {
        let label = format!("n={} k={}", row.n, row.k);
        match series.iter_mut().find(|(l, _)| *l == label) {
            Some((_, pts)) => pts.push((row.t, row.mean_norm)),
            None => series.push((label, vec![(row.t, row.mean_norm)])),
        }
    }
    let body = svg::line_plot(
        &format!("L^r norm decay: {}", report.scenario),
        "t",
        "mean_norm",
        &series,
    );
    let name = format!("regularity_{}.svg", report.scenario);
    write_file(&dir.join(&name), &body)?;
    Ok(name)
}

fn write_distances_svg(report: &StudyReport, dir: &Path) -> Result<String, EmitError> {
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for row in &report.distances {
        let (label, x) = match row.mode.as_str() {
            "omega" => (format!("omega k={}", row.k), row.n as f64),
            _ => ("sup_compact".to_string(), row.k as f64),
        };
        match series.iter_mut().find(|(l, _)| *l == label) {
            Some((_, pts)) => pts.push((x, row.value)),
            None => series.push((label, vec![(x, row.value)])),
        }
    }
    let body = svg::line_plot(
        &format!("flow distances: {}", report.scenario),
        "n (omega rows) / k (sup rows)",
        "value",
        &series,
    );
    let name = format!("distances_{}.svg", report.scenario);
    write_file(&dir.join(&name), &body)?;
    Ok(name)
}

fn manifest_json(report: &StudyReport, files: &[String]) -> String {
    #[derive(serde::Serialize)]
    struct Manifest<'a> {
        scenario: &'a str,
        config_hash: &'a str,
        seed: u64,
        code_version: &'a str,
        header_note: &'a str,
        distance_bandwidth: f64,
        cells: &'a [crate::study::CellRow],
        failures: &'a [crate::study::FailureRow],
        files: &'a [String],
    }
    let manifest = Manifest {
        scenario: &report.scenario,
        config_hash: &report.config_hash,
        seed: report.seed,
        code_version: &report.code_version,
        header_note: &report.header_note,
        distance_bandwidth: report.distance_bandwidth,
        cells: &report.cells,
        failures: &report.failures,
        files,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    text
}

/// Raw snapshot export, one row per (replication, stored time, particle).
pub fn raw_paths_csv(flows: &[MeasureFlow]) -> String {
    let d = flows.first().map_or(1, |f| f.dim());
    let mut out = String::from("rep_id,t,particle_id");
    for axis in 1..=d {
        write!(out, ",x_{axis}").expect("write to string");
    }
    out.push('\n');
    for flow in flows {
        for j in 0..flow.len() {
            let t = flow.times()[j];
            for (i, p) in flow.snapshot(j).chunks_exact(d).enumerate() {
                write!(out, "{},{},{}", flow.rep_id, fmt_f64(t), i).expect("write to string");
                for c in p {
                    write!(out, ",{}", fmt_f64(*c)).expect("write to string");
                }
                out.push('\n');
            }
        }
    }
    out
}

/// Common-noise export, one row per (replication, stored time).
pub fn common_paths_csv(flows: &[MeasureFlow]) -> String {
    let m = flows.iter().map(|f| f.common_dim()).max().unwrap_or(0);
    let mut out = String::from("rep_id,t");
    for axis in 1..=m {
        write!(out, ",z_{axis}").expect("write to string");
    }
    out.push('\n');
    for flow in flows {
        if flow.common_dim() == 0 {
            continue;
        }
        for j in 0..flow.len() {
            write!(out, "{},{}", flow.rep_id, fmt_f64(flow.times()[j]))
                .expect("write to string");
            for c in flow.common_at(j) {
                write!(out, ",{}", fmt_f64(*c)).expect("write to string");
            }
            out.push('\n');
        }
    }
    out
}

/// One replication's shared-noise path as stored on disk.
struct StoredCommon {
    times: Vec<f64>,
    z: Vec<Vec<f64>>,
}

/// Parse a common-noise CSV written by [`common_paths_csv`] into a map
/// keyed by replication.
fn read_common_paths(path: &Path) -> Result<HashMap<u64, StoredCommon>, EmitError> {
    let text = std::fs::read_to_string(path).map_err(|source| EmitError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let bad = |reason: String| EmitError::BadRaw {
        path: path.display().to_string(),
        reason,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "rep_id" || cols[1] != "t" || cols[2] != "z_1" {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let m = cols.len() - 2;
    let mut out: HashMap<u64, StoredCommon> = HashMap::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |what: &str| {
            fields
                .next()
                .ok_or_else(|| bad(format!("line {}: missing {what}", lineno + 2)))
        };
        let rep: u64 = next("rep_id")?
            .parse()
            .map_err(|e| bad(format!("line {}: rep_id: {e}", lineno + 2)))?;
        let t: f64 = next("t")?
            .parse()
            .map_err(|e| bad(format!("line {}: t: {e}", lineno + 2)))?;
        let mut z = Vec::with_capacity(m);
        for axis in 0..m {
            let c: f64 = next("component")?
                .parse()
                .map_err(|e| bad(format!("line {}: z_{}: {e}", lineno + 2, axis + 1)))?;
            z.push(c);
        }
        let entry = out.entry(rep).or_insert_with(|| StoredCommon {
            times: Vec::new(),
            z: Vec::new(),
        });
        entry.times.push(t);
        entry.z.push(z);
    }
    Ok(out)
}

/// Parse a raw snapshot CSV back into per-replication flows. Rows must be
/// grouped by replication and time exactly as written by
/// [`raw_paths_csv`]; floats round-trip bit for bit.
pub fn read_raw_paths(path: &Path) -> Result<Vec<MeasureFlow>, EmitError> {
    read_raw_paths_with(path, None)
}

/// As [`read_raw_paths`], reattaching each replication's stored
/// common-noise path when one was exported alongside the snapshots.
fn read_raw_paths_with(
    path: &Path,
    mut common: Option<HashMap<u64, StoredCommon>>,
) -> Result<Vec<MeasureFlow>, EmitError> {
    let text = std::fs::read_to_string(path).map_err(|source| EmitError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let bad = |reason: String| EmitError::BadRaw {
        path: path.display().to_string(),
        reason,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "rep_id" || cols[1] != "t" || cols[2] != "particle_id" {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let d = cols.len() - 3;

    struct Pending {
        rep: u64,
        times: Vec<f64>,
        snapshots: Vec<Vec<f64>>,
    }
    let mut flows = Vec::new();
    let mut pending: Option<Pending> = None;
    let mut finish = |p: Pending, flows: &mut Vec<MeasureFlow>| -> Result<(), EmitError> {
        let z = match common.as_mut().and_then(|map| map.remove(&p.rep)) {
            Some(stored) => {
                if stored.times != p.times {
                    return Err(bad(format!(
                        "replication {}: common-noise times disagree with the snapshots",
                        p.rep
                    )));
                }
                stored.z
            }
            None => Vec::new(),
        };
        let flow = MeasureFlow::from_parts(p.rep, d, p.times, p.snapshots, z)
            .map_err(|e| bad(format!("replication {}: {e}", p.rep)))?;
        flows.push(flow);
        Ok(())
    };
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |what: &str| {
            fields
                .next()
                .ok_or_else(|| bad(format!("line {}: missing {what}", lineno + 2)))
        };
        let rep: u64 = next("rep_id")?
            .parse()
            .map_err(|e| bad(format!("line {}: rep_id: {e}", lineno + 2)))?;
        let t: f64 = next("t")?
            .parse()
            .map_err(|e| bad(format!("line {}: t: {e}", lineno + 2)))?;
        let _particle: usize = next("particle_id")?
            .parse()
            .map_err(|e| bad(format!("line {}: particle_id: {e}", lineno + 2)))?;
        let mut coords = Vec::with_capacity(d);
        for axis in 0..d {
            let c: f64 = next("coordinate")?
                .parse()
                .map_err(|e| bad(format!("line {}: x_{}: {e}", lineno + 2, axis + 1)))?;
            coords.push(c);
        }
        match pending.as_mut() {
            Some(p) if p.rep == rep => {
                if *p.times.last().expect("nonempty") == t {
                    p.snapshots.last_mut().expect("nonempty").extend(coords);
                } else {
                    p.times.push(t);
                    p.snapshots.push(coords);
                }
            }
            _ => {
                if let Some(done) = pending.take() {
                    finish(done, &mut flows)?;
                }
                pending = Some(Pending {
                    rep,
                    times: vec![t],
                    snapshots: vec![coords],
                });
            }
        }
    }
    if let Some(done) = pending.take() {
        finish(done, &mut flows)?;
    }
    if flows.is_empty() {
        return Err(bad("no data rows".into()));
    }
    Ok(flows)
}

/// Load the raw flows for every study cell from `dir`, in cell order;
/// missing files come back as `None` for the caller's failure rows.
pub fn load_raw_flows(
    scenario: &str,
    n_ladder: &[usize],
    delta_count: usize,
    dir: &Path,
) -> Vec<(PathBuf, Option<Vec<MeasureFlow>>)> {
    let mut out = Vec::new();
    for k in 0..delta_count {
        for n in n_ladder {
            let path = dir.join(format!("raw_{scenario}_n{n}_k{k}.csv"));
            let z_path = dir.join(format!("common_{scenario}_n{n}_k{k}.csv"));
            let flows = if z_path.exists() {
                read_common_paths(&z_path)
                    .and_then(|map| read_raw_paths_with(&path, Some(map)))
                    .ok()
            } else {
                read_raw_paths(&path).ok()
            };
            out.push((path, flows));
        }
    }
    out
}
