//! Synthetic low-rank traffic fields and sampling harnesses. These back the
//! `estimate` command's synthetic mode and the estimation-quality checks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ScenarioConfig;
use crate::error::Result;
use crate::scenario::{build_road_network, place_vehicles, social_spots, step_mobility, RoadNetwork, VehicleRole};
use crate::sensing::{
    emit_reports, map_match, plan_fc_routes, random_fc_routes, FcRoutePlan, TrafficMatrix,
};

pub const TRUTH_SPEED_MAX_KMH: f64 = 65.0;

/// Random low-rank speed field, scaled multiplicatively (rank-preserving)
/// into (0, 65] km/h.
pub fn low_rank_truth(n_rows: usize, n_cols: usize, rank: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n_rows, rank, |_, _| rng.gen::<f64>());
    let b = DMatrix::from_fn(n_cols, rank, |_, _| rng.gen::<f64>());
    let mut x = a * b.transpose();
    let max = x.iter().cloned().fold(f64::MIN, f64::max);
    x.apply(|v| *v = *v / max * TRUTH_SPEED_MAX_KMH);
    x
}

/// Observe each entry independently with the given probability.
pub fn sample_uniform(truth: &DMatrix<f64>, rate: f64, seed: u64) -> TrafficMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matrix = TrafficMatrix::new(truth.nrows(), truth.ncols());
    for i in 0..truth.nrows() {
        for j in 0..truth.ncols() {
            if rng.gen::<f64>() < rate {
                matrix.set(i, j, truth[(i, j)]);
            }
        }
    }
    matrix
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcPolicy {
    None,
    Planned,
    Random,
}

pub struct SensingExperiment {
    pub truth: DMatrix<f64>,
    pub matrix: TrafficMatrix,
    pub network_segments: usize,
}

/// Drive probe vehicles through a scenario and record the ground-truth field
/// value wherever a report lands; floating cars add samples per the chosen
/// patrol policy with an identical per-policy sample budget.
pub fn run_sensing_experiment(
    config: &ScenarioConfig,
    truth_rank: usize,
    n_fc: usize,
    policy: FcPolicy,
    seed: u64,
) -> Result<SensingExperiment> {
    let network = build_road_network(config)?;
    let spots = social_spots(config);
    let truth = low_rank_truth(network.n_segments(), config.horizon_cycles, truth_rank, seed ^ 0x5eed);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vehicles = place_vehicles(config, &network, &mut rng)?;
    let mut matrix = TrafficMatrix::new(network.n_segments(), config.horizon_cycles);
    for cycle in 0..config.horizon_cycles {
        step_mobility(&mut vehicles, &network, &spots, config.duty_cycle_s, None, &mut rng);
        for report in emit_reports(&vehicles, &network, cycle) {
            if vehicles[report.vehicle_id].role != VehicleRole::ProbeVehicle {
                continue;
            }
            if let Some(seg) = map_match(report.position, &network) {
                matrix.set(seg, cycle, truth[(seg, cycle)]);
            }
        }
    }

    let plan = match policy {
        FcPolicy::None => FcRoutePlan::empty(),
        FcPolicy::Planned => plan_fc_routes(n_fc, &matrix, &network, config.horizon_cycles, None),
        FcPolicy::Random => {
            let mut frng = ChaCha8Rng::seed_from_u64(seed ^ 0xf1ca);
            random_fc_routes(n_fc, &network, config.horizon_cycles, &mut frng)
        }
    };
    apply_fc_samples(&mut matrix, &truth, &plan);

    Ok(SensingExperiment {
        truth,
        matrix,
        network_segments: network.n_segments(),
    })
}

fn apply_fc_samples(matrix: &mut TrafficMatrix, truth: &DMatrix<f64>, plan: &FcRoutePlan) {
    for route in &plan.routes {
        for (cycle, &seg) in route.iter().enumerate() {
            if cycle < matrix.n_cycles() {
                matrix.set(seg, cycle, truth[(seg, cycle)]);
            }
        }
    }
}

/// Scenario sized for estimation studies: roughly 200 segments by 96 cycles.
pub fn estimation_study_config(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        map_width_m: 5_000.0,
        map_height_m: 5_000.0,
        n_vertical_streets: 10,
        n_horizontal_streets: 11,
        social_spots: vec![(1_500.0, 1_500.0), (3_500.0, 3_500.0)],
        n_vehicles: 120,
        n_probe_vehicles: 25,
        n_floating_cars: 0,
        horizon_cycles: 96,
        mobility_radius_m: 2_000.0,
        rng_seed: seed,
        ..ScenarioConfig::default()
    }
}

#[allow(unused)]
pub fn road_network_for(config: &ScenarioConfig) -> Result<RoadNetwork> {
    build_road_network(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_stays_in_speed_range() {
        let truth = low_rank_truth(30, 20, 3, 1);
        assert!(truth.iter().all(|&v| v > 0.0 && v <= TRUTH_SPEED_MAX_KMH));
    }

    #[test]
    fn uniform_sampling_hits_roughly_the_rate() {
        let truth = low_rank_truth(100, 100, 2, 2);
        let m = sample_uniform(&truth, 0.3, 3);
        let rate = m.observation_count() as f64 / 10_000.0;
        assert!((rate - 0.3).abs() < 0.03, "rate {rate}");
    }

    #[test]
    fn study_scenario_has_about_200_segments() {
        let cfg = estimation_study_config(0);
        let net = build_road_network(&cfg).unwrap();
        // 10 vertical * 10 blocks + 11 horizontal * 9 blocks = 199
        assert_eq!(net.n_segments(), 199);
    }

    #[test]
    fn experiment_samples_match_truth() {
        let cfg = ScenarioConfig {
            horizon_cycles: 10,
            ..estimation_study_config(4)
        };
        let exp = run_sensing_experiment(&cfg, 4, 4, FcPolicy::Planned, 4).unwrap();
        assert!(exp.matrix.observation_count() > 0);
        for i in 0..exp.matrix.n_segments() {
            for j in 0..exp.matrix.n_cycles() {
                if let Some(v) = exp.matrix.get(i, j) {
                    assert_eq!(v, exp.truth[(i, j)]);
                }
            }
        }
    }
}
