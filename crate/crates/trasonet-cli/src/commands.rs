use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use trasonet::ahp::{
    consistency, priority_vector, recommendation_map, recommendation_map_to_csv, ComparisonMatrix,
    Service, SERVICES,
};
use trasonet::completion::{complete_matrix, estimation_error};
use trasonet::config::ScenarioConfig;
use trasonet::netsim::{
    cell_load_from_estimate, density_bins_to_csv, run_simulation, timeseries_to_csv, CellGrid,
    Infrastructure, Mode, SimMetrics,
};
use trasonet::scenario::{build_road_network, place_vehicles, social_spots, step_mobility};
use trasonet::sensing::{
    average_entropy, build_traffic_matrix, coverage_stats, matrix_to_csv, GpsReport, TrafficMatrix,
};
use trasonet::synthetic::{low_rank_truth, sample_uniform};

use crate::manifest::RunManifest;

pub enum CliError {
    /// Bad input or configuration: exit 2.
    Input(String),
    /// Failure after inputs were accepted: exit 3.
    Runtime(String),
}

impl CliError {
    pub fn input(e: impl std::fmt::Display) -> Self {
        CliError::Input(e.to_string())
    }
    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), CliError>;

fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let config = ScenarioConfig::from_json_file(path).map_err(CliError::input)?;
    config.validate().map_err(CliError::input)?;
    Ok(config)
}

fn write_result(dir: &Path, name: &str, contents: &str) -> CmdResult {
    std::fs::write(dir.join(name), contents).map_err(CliError::runtime)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    write_result(dir, name, &text)
}

fn parse_mode(mode: &str) -> Result<Mode, CliError> {
    match mode {
        "baseline" => Ok(Mode::Baseline),
        "trasonet" => Ok(Mode::Trasonet),
        other => Err(CliError::Input(format!(
            "unknown mode '{other}', expected baseline or trasonet"
        ))),
    }
}

pub fn cmd_simulate(
    config_path: &Path,
    seed: Option<u64>,
    mode: &str,
    out: &Path,
    replicas: usize,
) -> CmdResult {
    let started = Instant::now();
    let config = load_config(config_path)?;
    let mode = parse_mode(mode)?;
    let base_seed = seed.unwrap_or(config.rng_seed);
    if replicas == 0 {
        return Err(CliError::Input("--replicas must be >= 1".into()));
    }

    let mut manifest = RunManifest::new("simulate", out)
        .with_config(config_path)
        .map_err(CliError::input)?;
    manifest.seed = Some(base_seed);
    manifest.mode = Some(mode.as_str().to_string());
    manifest.write(out).map_err(CliError::runtime)?;

    let runs = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..replicas)
            .map(|r| {
                let config = &config;
                scope.spawn(move || run_simulation(config, mode, base_seed + r as u64))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replica thread panicked"))
            .collect::<Result<Vec<_>, _>>()
    })
    .map_err(CliError::runtime)?;

    let base = &runs[0];
    write_json(out, "metrics.json", &base.metrics)?;
    write_result(out, "timeseries.csv", &timeseries_to_csv(&base.timeseries))?;
    write_result(out, "density_bins.csv", &density_bins_to_csv(&base.metrics))?;
    if !base.recommendation_maps.is_empty() {
        write_result(
            out,
            "recommendation.csv",
            &recommendation_map_to_csv(&base.recommendation_maps),
        )?;
    }
    if replicas > 1 {
        let metrics: Vec<&SimMetrics> = runs.iter().map(|r| &r.metrics).collect();
        write_result(out, "replicas_summary.csv", &replica_summary(&metrics))?;
    }

    manifest.finalize(out, started).map_err(CliError::runtime)
}

/// Per-service mean/stddev of the headline metrics across replicas.
fn replica_summary(runs: &[&SimMetrics]) -> String {
    fn stats(values: Vec<f64>) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }
    let mut out = String::from("service,metric,mean,stddev\n");
    for service in SERVICES {
        let name = match service {
            Service::Voice => "voice",
            Service::Video => "video",
        };
        let rows: [(&str, Vec<f64>); 3] = [
            (
                "success_probability",
                runs.iter()
                    .map(|m| m.service(service).success_probability)
                    .collect(),
            ),
            (
                "offload_fraction",
                runs.iter()
                    .map(|m| m.service(service).offload_fraction)
                    .collect(),
            ),
            (
                "mean_cost_rmb",
                runs.iter().map(|m| m.service(service).mean_cost_rmb).collect(),
            ),
        ];
        for (metric, values) in rows {
            let (mean, sd) = stats(values);
            out.push_str(&format!("{name},{metric},{mean:.6},{sd:.6}\n"));
        }
    }
    out
}

#[derive(Serialize)]
struct EstimateMetrics {
    n_segments: usize,
    n_cycles: usize,
    observations: usize,
    road_coverage: f64,
    time_coverage: f64,
    average_entropy: f64,
    iterations_used: usize,
    converged: bool,
    fit_residual: f64,
    estimation_error: Option<f64>,
}

fn run_completion(
    matrix: &TrafficMatrix,
    truth: Option<&DMatrix<f64>>,
    config: &ScenarioConfig,
    rank: Option<usize>,
) -> Result<(DMatrix<f64>, EstimateMetrics), CliError> {
    let mut params = config.completion.clone();
    if let Some(rank) = rank {
        params.target_rank = rank;
    }
    let result =
        complete_matrix(matrix, &params, config.speed_limit_kmh).map_err(CliError::runtime)?;
    if result.empty_input {
        eprintln!("warning: no observations in input, estimate falls back to speed_limit/2");
    }
    let (road_cov, time_cov) = coverage_stats(matrix);
    let error = truth.map(|t| {
        estimation_error(&result.estimate, t, |i, j| matrix.observed(i, j))
    });
    let metrics = EstimateMetrics {
        n_segments: matrix.n_segments(),
        n_cycles: matrix.n_cycles(),
        observations: matrix.observation_count(),
        road_coverage: road_cov,
        time_coverage: time_cov,
        average_entropy: average_entropy(matrix),
        iterations_used: result.iterations_used,
        converged: result.converged,
        fit_residual: result.fit_residual,
        estimation_error: error,
    };
    Ok((result.estimate, metrics))
}

fn dense_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.6}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn parse_sweep(spec: &str) -> Result<Vec<f64>, CliError> {
    let rest = spec
        .strip_prefix("sample_rate=")
        .ok_or_else(|| CliError::Input(format!("--sweep expects sample_rate=r1,r2,..., got '{spec}'")))?;
    let rates: Result<Vec<f64>, _> = rest.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let rates = rates.map_err(CliError::input)?;
    if rates.is_empty() || rates.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
        return Err(CliError::Input("sweep rates must lie in [0, 1]".into()));
    }
    Ok(rates)
}

const SYNTHETIC_SEGMENTS: usize = 100;
const SYNTHETIC_CYCLES: usize = 96;

#[allow(clippy::too_many_arguments)]
pub fn cmd_estimate(
    synthetic: bool,
    reports: Option<&Path>,
    config_path: Option<&Path>,
    rank: usize,
    sample_rate: f64,
    seed: Option<u64>,
    sweep: Option<&str>,
    out: &Path,
) -> CmdResult {
    let started = Instant::now();
    if synthetic == reports.is_some() {
        return Err(CliError::Input(
            "choose exactly one input: --synthetic or --reports <path>".into(),
        ));
    }
    if !(0.0..=1.0).contains(&sample_rate) {
        return Err(CliError::Input("--sample-rate must lie in [0, 1]".into()));
    }
    let sweep_rates = sweep.map(parse_sweep).transpose()?;

    let mut manifest = RunManifest::new("estimate", out);
    let config = match config_path {
        Some(path) => {
            manifest = manifest.with_config(path).map_err(CliError::input)?;
            load_config(path)?
        }
        None if synthetic => ScenarioConfig::default(),
        None => {
            return Err(CliError::Input(
                "--reports requires --config for the road network".into(),
            ))
        }
    };
    let seed = seed.unwrap_or(config.rng_seed);
    manifest.seed = Some(seed);
    manifest.write(out).map_err(CliError::runtime)?;

    let (matrix, truth) = if synthetic {
        let truth = low_rank_truth(SYNTHETIC_SEGMENTS, SYNTHETIC_CYCLES, rank, seed);
        let matrix = sample_uniform(&truth, sample_rate, seed.wrapping_add(1));
        (matrix, Some(truth))
    } else {
        let path = reports.unwrap();
        let parsed = read_reports(path)?;
        if parsed.is_empty() {
            eprintln!("warning: report file {} has no data rows", path.display());
        }
        let network = build_road_network(&config).map_err(CliError::runtime)?;
        let matrix = build_traffic_matrix(&parsed, &network, config.horizon_cycles);
        (matrix, None)
    };

    let (values_csv, mask_csv) = matrix_to_csv(&matrix);
    write_result(out, "matrix_values.csv", &values_csv)?;
    write_result(out, "matrix_mask.csv", &mask_csv)?;
    let (estimate, metrics) = run_completion(&matrix, truth.as_ref(), &config, Some(rank))?;
    write_result(out, "estimate.csv", &dense_to_csv(&estimate))?;
    write_json(out, "metrics.json", &metrics)?;

    if let Some(rates) = sweep_rates {
        if !synthetic {
            return Err(CliError::Input("--sweep requires --synthetic".into()));
        }
        let truth = truth.as_ref().unwrap();
        let mut csv = String::from("sample_rate,average_entropy,estimation_error\n");
        for (k, &rate) in rates.iter().enumerate() {
            let sampled = sample_uniform(truth, rate, seed.wrapping_add(1 + k as u64));
            let (_, m) = run_completion(&sampled, Some(truth), &config, Some(rank))?;
            csv.push_str(&format!(
                "{rate:.6},{:.6},{:.6}\n",
                m.average_entropy,
                m.estimation_error.unwrap()
            ));
        }
        write_result(out, "sweep.csv", &csv)?;
    }

    manifest.finalize(out, started).map_err(CliError::runtime)
}

/// Reports CSV: `vehicle_id,cycle,x,y,speed,heading_x,heading_y` with header.
fn read_reports(path: &Path) -> Result<Vec<GpsReport>, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::input)?;
    let mut reports = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 5 {
            return Err(CliError::Input(format!(
                "{}:{}: expected at least 5 fields",
                path.display(),
                lineno + 1
            )));
        }
        let parse = |i: usize| -> Result<f64, CliError> {
            fields[i].trim().parse::<f64>().map_err(|e| {
                CliError::Input(format!("{}:{}: {e}", path.display(), lineno + 1))
            })
        };
        let heading = if fields.len() >= 7 {
            (parse(5)?, parse(6)?)
        } else {
            (1.0, 0.0)
        };
        reports.push(GpsReport {
            vehicle_id: fields[0].trim().parse().map_err(CliError::input)?,
            cycle_index: fields[1].trim().parse().map_err(CliError::input)?,
            position: (parse(2)?, parse(3)?),
            speed_kmh: parse(4)?,
            heading,
        });
    }
    Ok(reports)
}

pub fn cmd_recommend(
    config_path: &Path,
    estimate: Option<&Path>,
    fresh: bool,
    seed: Option<u64>,
    out: &Path,
) -> CmdResult {
    let started = Instant::now();
    if estimate.is_none() && !fresh {
        return Err(CliError::Input(
            "provide --estimate <csv> or pass --fresh to compute one".into(),
        ));
    }
    let config = load_config(config_path)?;
    let seed = seed.unwrap_or(config.rng_seed);

    let mut manifest = RunManifest::new("recommend", out)
        .with_config(config_path)
        .map_err(CliError::input)?;
    manifest.seed = Some(seed);
    manifest.write(out).map_err(CliError::runtime)?;

    let network = build_road_network(&config).map_err(CliError::runtime)?;
    let infra = Infrastructure::build(&config, &network);
    let grid = CellGrid::build(&config, &network, &infra);
    let spots = social_spots(&config);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vehicles = place_vehicles(&config, &network, &mut rng).map_err(CliError::runtime)?;

    let estimate_matrix = match estimate {
        Some(path) => {
            let m = read_dense_csv(path)?;
            if m.nrows() != network.n_segments() {
                return Err(CliError::Input(format!(
                    "estimate has {} rows, network has {} segments",
                    m.nrows(),
                    network.n_segments()
                )));
            }
            Some(m)
        }
        None => {
            // drive the probe fleet over the horizon, then complete the matrix
            let mut reports = Vec::new();
            for cycle in 0..config.horizon_cycles {
                step_mobility(&mut vehicles, &network, &spots, config.duty_cycle_s, None, &mut rng);
                reports.extend(trasonet::sensing::emit_reports(&vehicles, &network, cycle));
            }
            let matrix = build_traffic_matrix(&reports, &network, config.horizon_cycles);
            if matrix.observation_count() == 0 {
                eprintln!("warning: probe fleet produced no observations");
                None
            } else {
                let result = complete_matrix(&matrix, &config.completion, config.speed_limit_kmh)
                    .map_err(CliError::runtime)?;
                Some(result.estimate)
            }
        }
    };

    let densities = grid.densities(&vehicles, &network);
    let load = estimate_matrix.as_ref().map(|m| {
        cell_load_from_estimate(&grid, &network, m, m.ncols() - 1, config.speed_limit_kmh)
    });
    let states = grid.cell_states(&densities, load.as_deref());

    let mut maps = Vec::new();
    for service in SERVICES {
        maps.push(
            recommendation_map(
                service,
                grid.cell_size_m,
                grid.n_cells_x,
                grid.n_cells_y,
                &states,
            )
            .map_err(CliError::runtime)?,
        );
    }
    write_result(out, "recommendation.csv", &recommendation_map_to_csv(&maps))?;

    manifest.finalize(out, started).map_err(CliError::runtime)
}

fn read_dense_csv(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::input)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| {
            CliError::Input(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(CliError::Input(format!(
                    "{}:{}: ragged row",
                    path.display(),
                    lineno + 1
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!("{}: empty matrix", path.display())));
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

/// Matrix CSV for `ahp`: comma-separated entries, fractions like `1/3` allowed.
fn parse_judgment(s: &str) -> Result<f64, CliError> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let num: f64 = num.trim().parse().map_err(CliError::input)?;
        let den: f64 = den.trim().parse().map_err(CliError::input)?;
        if den == 0.0 {
            return Err(CliError::Input(format!("division by zero in '{s}'")));
        }
        Ok(num / den)
    } else {
        s.parse().map_err(CliError::input)
    }
}

pub fn cmd_ahp(matrix_path: &Path) -> CmdResult {
    let text = std::fs::read_to_string(matrix_path).map_err(CliError::input)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, CliError> =
            line.split(',').map(parse_judgment).collect();
        rows.push(row?);
    }
    let matrix = ComparisonMatrix::from_rows(&rows).map_err(CliError::input)?;
    let weights = priority_vector(&matrix);
    let report = consistency(&matrix).map_err(CliError::input)?;

    let formatted: Vec<String> = weights.weights.iter().map(|w| format!("{w:.6}")).collect();
    println!("priority_vector: [{}]", formatted.join(", "));
    println!("lambda_max: {:.6}", report.lambda_max);
    println!("consistency_index: {:.6}", report.ci);
    println!("consistency_ratio: {:.6}", report.cr);
    println!(
        "acceptable: {}",
        if report.acceptable { "yes (CR < 0.1)" } else { "no (CR >= 0.1)" }
    );
    Ok(())
}
