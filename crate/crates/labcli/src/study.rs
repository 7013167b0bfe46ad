//! The two-step study driver: a grid of (n, delta) simulation cells, per
//! cell the toggled diagnostics, then the cross-cell trend tables that
//! stand in for the two limits (distances between successive-n flows at
//! fixed delta, and between successive-delta flows at the largest n).
//! Every stage is deterministic given the config, and one cell's failure
//! never takes down the rest of the grid.

use rayon::prelude::*;

use mvlab_core::mgdiag::{
    martingale_test, qv_test, residual_series_with, tanh_of_lambda, MartingaleReport,
    QvReport, ResidualSeries,
};
use mvlab_core::particles::{simulate_all, MeasureFlow};
use mvlab_core::regularity::{
    lr_curve, per_time_distances, distance_from_pairs, BandwidthPlan, DensitySpec,
    DistanceMode, LrCurveSpec,
};

use crate::config::ScenarioConfig;

pub const HEADER_NOTE: &str = "Cluster points of the infinite ladders are not computable; \
    the distance tables report finite-ladder Cauchy trends in their place.";

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CellRow {
    pub n: usize,
    pub k: usize,
    pub delta: f64,
    pub reps: usize,
    pub seed: u64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleRow {
    pub n: usize,
    pub k: usize,
    pub reps: usize,
    pub seed: u64,
    pub test_name: String,
    pub report: MartingaleReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QvRow {
    pub n: usize,
    pub k: usize,
    pub reps: usize,
    pub seed: u64,
    pub report: QvReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityPointRow {
    pub n: usize,
    pub k: usize,
    pub reps: usize,
    pub seed: u64,
    pub t: f64,
    pub mean_norm: f64,
    pub q: f64,
    pub r: f64,
    pub w: f64,
    pub fit_c: f64,
    pub fit_gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRow {
    pub n: usize,
    pub k: usize,
    pub reps: usize,
    pub seed: u64,
    pub mode: String,
    pub p: f64,
    pub xi: f64,
    pub t0: Option<f64>,
    pub value: f64,
    /// Human-readable description of the compared pair.
    pub pair: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FailureRow {
    pub n: usize,
    pub k: usize,
    pub stage: String,
    pub message: String,
}

#[derive(Debug)]
pub struct StudyReport {
    pub scenario: String,
    pub config: ScenarioConfig,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub header_note: String,
    /// Study-wide KDE bandwidth used by all distance tables.
    pub distance_bandwidth: f64,
    pub cells: Vec<CellRow>,
    pub martingale: Vec<MartingaleRow>,
    pub qv: Vec<QvRow>,
    pub regularity: Vec<RegularityPointRow>,
    pub distances: Vec<DistanceRow>,
    pub failures: Vec<FailureRow>,
    /// Flows kept for raw export, in cell order; None for failed cells.
    pub raw_flows: Vec<Option<Vec<MeasureFlow>>>,
}

impl StudyReport {
    pub fn succeeded_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.status == "ok").count()
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.len() - self.succeeded_cells()
    }
}

struct CellData {
    martingale: Vec<MartingaleReport>,
    qv: Vec<QvReport>,
    regularity: Vec<RegularityPointRow>,
    flows: Vec<MeasureFlow>,
}

/// Index of the stored time nearest the target; the diagnostics report
/// the time actually used.
fn nearest_time(times: &[f64], target: f64) -> f64 {
    let mut best = times[0];
    for &t in times {
        if (t - target).abs() < (best - target).abs() {
            best = t;
        }
    }
    best
}

fn density_spec(cfg: &ScenarioConfig, bandwidth: BandwidthPlan) -> DensitySpec {
    DensitySpec {
        half_width: cfg.grid.half_width,
        resolution: cfg.grid.resolution,
        bandwidth,
    }
}

fn run_cell(cfg: &ScenarioConfig, n: usize, k: usize, delta: f64) -> Result<CellData, String> {
    let sim = cfg.to_sim_config(n, delta).map_err(|e| e.to_string())?;
    let flows = simulate_all(&sim).map_err(|e| format!("simulation: {e}"))?;
    let coeffs = cfg.build_coefficients();
    let phis = cfg.test_function_list();
    let mut martingale = Vec::new();
    let mut qv = Vec::new();
    let mut regularity = Vec::new();

    if cfg.diagnostics.martingale || cfg.diagnostics.qv {
        for phi in &phis {
            let series: Vec<ResidualSeries> = flows
                .par_iter()
                .map(|flow| {
                    residual_series_with(flow, &coeffs, delta, phi, 1.0, cfg.smoothing_nodes)
                })
                .collect::<Result<_, _>>()
                .map_err(|e| format!("residuals for {}: {e}", phi.id()))?;
            if cfg.diagnostics.martingale {
                let times = &series[0].times;
                let s = nearest_time(times, cfg.diagnostics.s_frac * cfg.horizon);
                let t = nearest_time(times, cfg.diagnostics.t_frac * cfg.horizon);
                let report = martingale_test(&series, &tanh_of_lambda(), s, t)
                    .map_err(|e| format!("martingale test for {}: {e}", phi.id()))?;
                martingale.push(report);
            }
            if cfg.diagnostics.qv {
                let report =
                    qv_test(&series, n).map_err(|e| format!("qv test for {}: {e}", phi.id()))?;
                qv.push(report);
            }
        }
    }

    if cfg.diagnostics.regularity {
        let spec = LrCurveSpec {
            r: 2.0,
            q: 2.0,
            w: 0.0,
            burn_in: 10.0 * cfg.dt,
            density: density_spec(cfg, BandwidthPlan::Silverman),
        };
        let curve = lr_curve(&flows, &spec).map_err(|e| format!("regularity curve: {e}"))?;
        for (t, v) in curve.times.iter().zip(&curve.values) {
            regularity.push(RegularityPointRow {
                n,
                k,
                reps: cfg.replications,
                seed: cfg.seed,
                t: *t,
                mean_norm: *v,
                q: curve.q,
                r: curve.r,
                w: curve.w,
                fit_c: curve.fit_c,
                fit_gamma: curve.fit_gamma,
            });
        }
    }

    Ok(CellData {
        martingale,
        qv,
        regularity,
        flows,
    })
}

/// Replication-averaged flow distance between two cells, pairing flows by
/// replication index (paired replications share noise streams, so the
/// comparison isolates the parameter change).
fn mean_flow_distance(
    a: &[MeasureFlow],
    b: &[MeasureFlow],
    p: f64,
    xi: f64,
    mode: DistanceMode,
    spec: &DensitySpec,
) -> Result<f64, String> {
    let pairs = a.len().min(b.len());
    let mut acc = 0.0;
    for r in 0..pairs {
        let per_time = per_time_distances(&a[r], &b[r], xi, spec)
            .map_err(|e| format!("distance at rep {r}: {e}"))?;
        let report = distance_from_pairs(&per_time, p, xi, mode)
            .map_err(|e| format!("distance reduction at rep {r}: {e}"))?;
        acc += report.value;
    }
    Ok(acc / pairs as f64)
}

pub fn run_two_step_study(cfg: &ScenarioConfig) -> StudyReport {
    let keys: Vec<(usize, usize, f64)> = cfg
        .delta_ladder
        .iter()
        .enumerate()
        .flat_map(|(k, delta)| cfg.n_ladder.iter().map(move |n| (*n, k, *delta)))
        .collect();
    let outcomes: Vec<Result<CellData, String>> = keys
        .par_iter()
        .map(|(n, k, delta)| run_cell(cfg, *n, *k, *delta))
        .collect();

    let mut report = StudyReport {
        scenario: cfg.name.clone(),
        config: cfg.clone(),
        config_hash: cfg.content_hash(),
        seed: cfg.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        header_note: HEADER_NOTE.to_string(),
        distance_bandwidth: 0.0,
        cells: Vec::new(),
        martingale: Vec::new(),
        qv: Vec::new(),
        regularity: Vec::new(),
        distances: Vec::new(),
        failures: Vec::new(),
        raw_flows: Vec::new(),
    };

    let mut cell_data: Vec<Option<CellData>> = Vec::with_capacity(keys.len());
    for ((n, k, delta), outcome) in keys.iter().zip(outcomes) {
        match outcome {
            Ok(data) => {
                report.cells.push(CellRow {
                    n: *n,
                    k: *k,
                    delta: *delta,
                    reps: cfg.replications,
                    seed: cfg.seed,
                    status: "ok".into(),
                });
                cell_data.push(Some(data));
            }
            Err(message) => {
                report.cells.push(CellRow {
                    n: *n,
                    k: *k,
                    delta: *delta,
                    reps: cfg.replications,
                    seed: cfg.seed,
                    status: "failed".into(),
                });
                report.failures.push(FailureRow {
                    n: *n,
                    k: *k,
                    stage: "cell".into(),
                    message,
                });
                cell_data.push(None);
            }
        }
    }

    assemble_cross_cell_tables(cfg, &keys, &mut cell_data, &mut report);

    for (row, data) in report.cells.iter().zip(cell_data.iter()) {
        debug_assert_eq!((row.status == "ok"), data.is_some());
    }
    report.raw_flows = cell_data
        .into_iter()
        .map(|d| d.map(|c| c.flows))
        .collect();
    report
}

/// Rebuild a report from previously exported raw flows instead of
/// simulating; the diagnostics and trend tables are recomputed from the
/// stored snapshots, so a re-emission matches the original run byte for
/// byte when the raw data came from the same config and seed.
pub fn rebuild_from_flows(
    cfg: &ScenarioConfig,
    stored: Vec<Option<Vec<MeasureFlow>>>,
) -> StudyReport {
    let keys: Vec<(usize, usize, f64)> = cfg
        .delta_ladder
        .iter()
        .enumerate()
        .flat_map(|(k, delta)| cfg.n_ladder.iter().map(move |n| (*n, k, *delta)))
        .collect();

    let mut report = StudyReport {
        scenario: cfg.name.clone(),
        config: cfg.clone(),
        config_hash: cfg.content_hash(),
        seed: cfg.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        header_note: HEADER_NOTE.to_string(),
        distance_bandwidth: 0.0,
        cells: Vec::new(),
        martingale: Vec::new(),
        qv: Vec::new(),
        regularity: Vec::new(),
        distances: Vec::new(),
        failures: Vec::new(),
        raw_flows: Vec::new(),
    };

    let coeffs = cfg.build_coefficients();
    let phis = cfg.test_function_list();
    let mut cell_data: Vec<Option<CellData>> = Vec::with_capacity(keys.len());
    for ((n, k, delta), flows) in keys.iter().zip(stored) {
        let Some(flows) = flows else {
            report.cells.push(CellRow {
                n: *n,
                k: *k,
                delta: *delta,
                reps: cfg.replications,
                seed: cfg.seed,
                status: "missing".into(),
            });
            report.failures.push(FailureRow {
                n: *n,
                k: *k,
                stage: "raw-import".into(),
                message: "no stored raw data for this cell".into(),
            });
            cell_data.push(None);
            continue;
        };
        let rebuilt = (|| -> Result<CellData, String> {
            let mut martingale = Vec::new();
            let mut qv = Vec::new();
            let mut regularity = Vec::new();
            if cfg.diagnostics.martingale || cfg.diagnostics.qv {
                for phi in &phis {
                    let series: Vec<ResidualSeries> = flows
                        .par_iter()
                        .map(|flow| {
                            residual_series_with(
                                flow,
                                &coeffs,
                                *delta,
                                phi,
                                1.0,
                                cfg.smoothing_nodes,
                            )
                        })
                        .collect::<Result<_, _>>()
                        .map_err(|e| format!("residuals for {}: {e}", phi.id()))?;
                    if cfg.diagnostics.martingale {
                        let times = &series[0].times;
                        let s = nearest_time(times, cfg.diagnostics.s_frac * cfg.horizon);
                        let t = nearest_time(times, cfg.diagnostics.t_frac * cfg.horizon);
                        martingale.push(
                            martingale_test(&series, &tanh_of_lambda(), s, t)
                                .map_err(|e| format!("martingale test: {e}"))?,
                        );
                    }
                    if cfg.diagnostics.qv {
                        qv.push(qv_test(&series, *n).map_err(|e| format!("qv test: {e}"))?);
                    }
                }
            }
            if cfg.diagnostics.regularity {
                let spec = LrCurveSpec {
                    r: 2.0,
                    q: 2.0,
                    w: 0.0,
                    burn_in: 10.0 * cfg.dt,
                    density: density_spec(cfg, BandwidthPlan::Silverman),
                };
                let curve =
                    lr_curve(&flows, &spec).map_err(|e| format!("regularity curve: {e}"))?;
                for (t, v) in curve.times.iter().zip(&curve.values) {
                    regularity.push(RegularityPointRow {
                        n: *n,
                        k: *k,
                        reps: cfg.replications,
                        seed: cfg.seed,
                        t: *t,
                        mean_norm: *v,
                        q: curve.q,
                        r: curve.r,
                        w: curve.w,
                        fit_c: curve.fit_c,
                        fit_gamma: curve.fit_gamma,
                    });
                }
            }
            Ok(CellData {
                martingale,
                qv,
                regularity,
                flows,
            })
        })();
        match rebuilt {
            Ok(data) => {
                report.cells.push(CellRow {
                    n: *n,
                    k: *k,
                    delta: *delta,
                    reps: cfg.replications,
                    seed: cfg.seed,
                    status: "ok".into(),
                });
                cell_data.push(Some(data));
            }
            Err(message) => {
                report.cells.push(CellRow {
                    n: *n,
                    k: *k,
                    delta: *delta,
                    reps: cfg.replications,
                    seed: cfg.seed,
                    status: "failed".into(),
                });
                report.failures.push(FailureRow {
                    n: *n,
                    k: *k,
                    stage: "rebuild".into(),
                    message,
                });
                cell_data.push(None);
            }
        }
    }

    assemble_cross_cell_tables(cfg, &keys, &mut cell_data, &mut report);
    report.raw_flows = cell_data
        .into_iter()
        .map(|d| d.map(|c| c.flows))
        .collect();
    report
}

fn assemble_cross_cell_tables(
    cfg: &ScenarioConfig,
    keys: &[(usize, usize, f64)],
    cell_data: &mut [Option<CellData>],
    report: &mut StudyReport,
) {
    let cell_index = |n: usize, k: usize| keys.iter().position(|(cn, ck, _)| *cn == n && *ck == k);

    // Per-cell diagnostic rows, in (k, n) order as laid out in `keys`.
    for ((n, k, _delta), data) in keys.iter().zip(cell_data.iter()) {
        let Some(data) = data else { continue };
        for r in &data.martingale {
            report.martingale.push(MartingaleRow {
                n: *n,
                k: *k,
                reps: cfg.replications,
                seed: cfg.seed,
                test_name: "martingale_smoothed".into(),
                report: r.clone(),
            });
        }
        for r in &data.qv {
            report.qv.push(QvRow {
                n: *n,
                k: *k,
                reps: cfg.replications,
                seed: cfg.seed,
                report: r.clone(),
            });
        }
        report.regularity.extend(data.regularity.iter().cloned());
    }

    // One study-wide KDE bandwidth, from the largest-n cell of the first
    // delta, so every distance in the tables shares one estimator.
    let n_max = *cfg.n_ladder.last().expect("validated ladder");
    report.distance_bandwidth = cell_index(n_max, 0)
        .and_then(|i| cell_data[i].as_ref())
        .and_then(|d| d.flows.first())
        .map(|flow| BandwidthPlan::Silverman.bandwidth(flow.snapshot(0), flow.dim()))
        .unwrap_or(0.0);
    if !(report.distance_bandwidth > 0.0) {
        report.distance_bandwidth = 0.25;
    }
    let spec = density_spec(cfg, BandwidthPlan::Fixed(report.distance_bandwidth));

    if cfg.diagnostics.distances {
        // Successive-n distances at each fixed delta.
        for (k, _delta) in cfg.delta_ladder.iter().enumerate() {
            for pair in cfg.n_ladder.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                let (Some(ia), Some(ib)) = (cell_index(a, k), cell_index(b, k)) else {
                    continue;
                };
                let (Some(da), Some(db)) = (cell_data[ia].as_ref(), cell_data[ib].as_ref())
                else {
                    continue;
                };
                match mean_flow_distance(
                    &da.flows,
                    &db.flows,
                    2.0,
                    1.0,
                    DistanceMode::Omega,
                    &spec,
                ) {
                    Ok(value) => report.distances.push(DistanceRow {
                        n: b,
                        k,
                        reps: cfg.replications,
                        seed: cfg.seed,
                        mode: "omega".into(),
                        p: 2.0,
                        xi: 1.0,
                        t0: None,
                        value,
                        pair: format!("n={a} vs n={b}"),
                    }),
                    Err(message) => report.failures.push(FailureRow {
                        n: b,
                        k,
                        stage: "n-distance".into(),
                        message,
                    }),
                }
            }
        }
        // Successive-delta distances at the largest n.
        for k in 1..cfg.delta_ladder.len() {
            let (Some(ia), Some(ib)) = (cell_index(n_max, k - 1), cell_index(n_max, k)) else {
                continue;
            };
            let (Some(da), Some(db)) = (cell_data[ia].as_ref(), cell_data[ib].as_ref()) else {
                continue;
            };
            match mean_flow_distance(
                &da.flows,
                &db.flows,
                1.5,
                1.5,
                DistanceMode::SupCompact {
                    t0: cfg.diagnostics.t0,
                },
                &spec,
            ) {
                Ok(value) => report.distances.push(DistanceRow {
                    n: n_max,
                    k,
                    reps: cfg.replications,
                    seed: cfg.seed,
                    mode: "sup_compact".into(),
                    p: 1.5,
                    xi: 1.5,
                    t0: Some(cfg.diagnostics.t0),
                    value,
                    pair: format!(
                        "delta={} vs delta={}",
                        cfg.delta_ladder[k - 1],
                        cfg.delta_ladder[k]
                    ),
                }),
                Err(message) => report.failures.push(FailureRow {
                    n: n_max,
                    k,
                    stage: "delta-distance".into(),
                    message,
                }),
            }
        }
    }

    // The unsmoothed compensator at the finest cell: the closest the lab
    // gets to the limiting martingale problem. Drifts that need a density
    // fail here by design; the failure is recorded, not fatal.
    if cfg.diagnostics.martingale {
        let k_last = cfg.delta_ladder.len() - 1;
        if let Some(i) = cell_index(n_max, k_last) {
            if let Some(data) = cell_data[i].as_ref() {
                let coeffs = cfg.build_coefficients();
                for phi in cfg.test_function_list() {
                    let series: Result<Vec<ResidualSeries>, _> = data
                        .flows
                        .par_iter()
                        .map(|flow| {
                            residual_series_with(
                                flow,
                                &coeffs,
                                0.0,
                                &phi,
                                1.0,
                                cfg.smoothing_nodes,
                            )
                        })
                        .collect();
                    match series.map_err(|e| e.to_string()).and_then(|series| {
                        let times = &series[0].times;
                        let s = nearest_time(times, cfg.diagnostics.s_frac * cfg.horizon);
                        let t = nearest_time(times, cfg.diagnostics.t_frac * cfg.horizon);
                        martingale_test(&series, &tanh_of_lambda(), s, t)
                            .map_err(|e| e.to_string())
                    }) {
                        Ok(r) => report.martingale.push(MartingaleRow {
                            n: n_max,
                            k: k_last,
                            reps: cfg.replications,
                            seed: cfg.seed,
                            test_name: "martingale_unsmoothed".into(),
                            report: r,
                        }),
                        Err(message) => report.failures.push(FailureRow {
                            n: n_max,
                            k: k_last,
                            stage: "unsmoothed-martingale".into(),
                            message: format!("{}: {message}", phi.id()),
                        }),
                    }
                }
            }
        }
    }
}
