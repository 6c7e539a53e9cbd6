//! Cross-module pipeline tests: scenario -> sensing -> completion -> ahp.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trasonet::ahp::{recommendation_map, Service, SERVICES};
use trasonet::completion::complete_matrix;
use trasonet::config::ScenarioConfig;
use trasonet::netsim::{CellGrid, Infrastructure};
use trasonet::scenario::{build_road_network, place_vehicles, social_spots, step_mobility};
use trasonet::sensing::{average_entropy, build_traffic_matrix, coverage_stats, emit_reports};

fn mid_config() -> ScenarioConfig {
    ScenarioConfig {
        map_width_m: 3_000.0,
        map_height_m: 3_000.0,
        n_vertical_streets: 6,
        n_horizontal_streets: 6,
        social_spots: vec![(1_000.0, 1_000.0), (2_000.0, 2_000.0)],
        n_vehicles: 200,
        n_probe_vehicles: 40,
        n_floating_cars: 5,
        horizon_cycles: 24,
        mobility_radius_m: 1_200.0,
        rng_seed: 42,
        ..ScenarioConfig::default()
    }
}

#[test]
fn sensing_to_completion_pipeline() {
    let config = mid_config();
    let network = build_road_network(&config).unwrap();
    let spots = social_spots(&config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut vehicles = place_vehicles(&config, &network, &mut rng).unwrap();

    let mut reports = Vec::new();
    for cycle in 0..config.horizon_cycles {
        step_mobility(&mut vehicles, &network, &spots, config.duty_cycle_s, None, &mut rng);
        reports.extend(emit_reports(&vehicles, &network, cycle));
    }
    assert!(!reports.is_empty());

    let matrix = build_traffic_matrix(&reports, &network, config.horizon_cycles);
    let (road_cov, time_cov) = coverage_stats(&matrix);
    assert!(road_cov > 0.2, "road coverage {road_cov}");
    assert!(time_cov > 0.0 && time_cov <= 1.0);
    let entropy = average_entropy(&matrix);
    assert!(entropy >= 0.0 && entropy <= (network.n_segments() as f64).ln());

    let result = complete_matrix(&matrix, &config.completion, config.speed_limit_kmh).unwrap();
    assert!(!result.empty_input);
    for &v in result.estimate.iter() {
        assert!((0.0..=config.speed_limit_kmh).contains(&v), "estimate {v}");
    }
    // speeds resample uniformly every cycle, so a rank-4 fit only captures
    // part of the variance; just require a sane, finite residual
    assert!(result.fit_residual.is_finite());
    assert!(result.fit_residual < 0.6, "fit residual {}", result.fit_residual);
}

#[test]
fn recommendation_indices_normalize_over_network_grid() {
    let config = mid_config();
    let network = build_road_network(&config).unwrap();
    let infra = Infrastructure::build(&config, &network);
    let grid = CellGrid::build(&config, &network, &infra);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let vehicles = place_vehicles(&config, &network, &mut rng).unwrap();
    let states = grid.cell_states(&grid.densities(&vehicles, &network), None);

    for service in SERVICES {
        let map =
            recommendation_map(service, grid.cell_size_m, grid.n_cells_x, grid.n_cells_y, &states)
                .unwrap();
        assert_eq!(map.cells.len(), grid.n_cells_x * grid.n_cells_y);
        for cell in &map.cells {
            let sum: f64 = cell.indices.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "indices sum {sum}");
        }
    }
}

#[test]
fn shipped_rulebase_matches_builtin_default() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/rulebase.json");
    let text = std::fs::read_to_string(path).unwrap();
    let shipped = trasonet::access::Rulebase::from_json(&text).unwrap();
    assert_eq!(shipped, trasonet::access::default_rulebase());
}

mod properties {
    use proptest::prelude::*;
    use trasonet::access::{default_rulebase, fuzzify_speed, infer, FuzzyInputs};
    use trasonet::ahp::{consistency, priority_vector, ComparisonMatrix, NetworkChoice};
    use trasonet::netsim::max_min_fair;
    use trasonet::sensing::histogram_entropy;

    use super::Service;

    fn network_choice() -> impl Strategy<Value = NetworkChoice> {
        prop_oneof![Just(NetworkChoice::Cellular), Just(NetworkChoice::Vanet)]
    }

    fn service() -> impl Strategy<Value = Service> {
        prop_oneof![Just(Service::Voice), Just(Service::Video)]
    }

    proptest! {
        #[test]
        fn fuzzy_memberships_are_complementary(speed in -10.0f64..120.0) {
            let (lo, hi) = fuzzify_speed(speed);
            prop_assert!((0.0..=1.0).contains(&lo));
            prop_assert!((0.0..=1.0).contains(&hi));
            prop_assert!((lo + hi - 1.0).abs() < 1e-12);
        }

        #[test]
        fn inferred_output_is_bounded(
            speed in 0.0f64..80.0,
            app in service(),
            option in network_choice(),
            rec in network_choice(),
            trust in 0.0f64..1.0,
        ) {
            let inputs = FuzzyInputs {
                speed_kmh: speed,
                application: app,
                current_option: option,
                recommendation: rec,
            };
            let out = infer(&inputs, &default_rulebase(), trust);
            prop_assert!((0.0..=1.0).contains(&out), "output {out}");
        }

        #[test]
        fn entropy_bounded_by_log_n(counts in prop::collection::vec(0usize..50, 1..64)) {
            let h = histogram_entropy(&counts);
            prop_assert!(h >= -1e-12);
            prop_assert!(h <= (counts.len() as f64).ln() + 1e-9);
        }

        #[test]
        fn max_min_fair_conserves_capacity(
            demands in prop::collection::vec(0.0f64..20.0, 1..12),
            capacity in 0.1f64..100.0,
        ) {
            let grants = max_min_fair(&demands, capacity);
            let total: f64 = grants.iter().sum();
            let demand_total: f64 = demands.iter().sum();
            prop_assert!(total <= capacity + 1e-9);
            for (g, d) in grants.iter().zip(&demands) {
                prop_assert!(*g <= d + 1e-9, "grant {g} over demand {d}");
                prop_assert!(*g >= -1e-12);
            }
            // work-conserving: either all demand met or capacity exhausted
            prop_assert!(
                (total - demand_total.min(capacity)).abs() < 1e-6,
                "total {total}, demand {demand_total}, capacity {capacity}"
            );
        }

        #[test]
        fn consistent_matrices_recover_weights(
            raw in prop::collection::vec(0.1f64..10.0, 4)
        ) {
            let sum: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let n = w.len();
            let entries = nalgebra::DMatrix::from_fn(n, n, |i, j| w[i] / w[j]);
            let m = ComparisonMatrix::new(entries).unwrap();
            let got = priority_vector(&m);
            for (a, e) in got.weights.iter().zip(&w) {
                prop_assert!((a - e).abs() < 1e-9, "{:?} vs {w:?}", got.weights);
            }
            let report = consistency(&m).unwrap();
            prop_assert!(report.cr.abs() < 1e-9);
        }
    }
}
