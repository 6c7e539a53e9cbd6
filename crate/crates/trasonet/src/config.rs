//! Run configuration, loaded from a JSON document.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Parameters of the cellular / VANET capacity model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkParams {
    pub enb_grid_spacing_m: f64,
    /// Shared downlink capacity per eNB, megabits per second.
    pub enb_capacity_mbps: f64,
    /// Explicit RSU positions override ring-based placement when present.
    pub rsu_positions: Option<Vec<(f64, f64)>>,
    /// Arc-length spacing of RSUs along streets inside the deployment ring.
    pub rsu_spacing_m: f64,
    /// RSUs are deployed on street points whose distance to the nearest
    /// social spot falls in [ring_inner, ring_outer]. The spot itself is
    /// left uncovered.
    pub rsu_ring_inner_m: f64,
    pub rsu_ring_outer_m: f64,
    pub rsu_radius_m: f64,
    pub rsu_capacity_mbps: f64,
    pub cellular_base_delay_ms: f64,
    pub vanet_delay_per_user_ms: f64,
    /// RMB per megabit on the cellular network.
    pub cellular_price_per_mb: f64,
    /// Flat VANET subscription, RMB per billing period.
    pub vanet_flat_price_rmb: f64,
    /// Data cap of the flat VANET plan, megabits.
    pub vanet_cap_mb: f64,
    pub voice_delay_bound_ms: f64,
    pub video_delay_bound_ms: f64,
    /// Edge length of the recommendation-map cells, meters.
    pub cell_size_m: f64,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self {
            enb_grid_spacing_m: 2_500.0,
            enb_capacity_mbps: 100.0,
            rsu_positions: None,
            rsu_spacing_m: 500.0,
            rsu_ring_inner_m: 1_000.0,
            rsu_ring_outer_m: 1_500.0,
            rsu_radius_m: 200.0,
            rsu_capacity_mbps: 10.0,
            cellular_base_delay_ms: 50.0,
            vanet_delay_per_user_ms: 10.0,
            cellular_price_per_mb: 1.0,
            vanet_flat_price_rmb: 10.0,
            vanet_cap_mb: 2_000.0,
            voice_delay_bound_ms: 100.0,
            video_delay_bound_ms: 150.0,
            cell_size_m: 500.0,
        }
    }
}

impl NetworkParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("enb_grid_spacing_m", self.enb_grid_spacing_m),
            ("enb_capacity_mbps", self.enb_capacity_mbps),
            ("rsu_spacing_m", self.rsu_spacing_m),
            ("rsu_radius_m", self.rsu_radius_m),
            ("rsu_capacity_mbps", self.rsu_capacity_mbps),
            ("cell_size_m", self.cell_size_m),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.rsu_ring_outer_m < self.rsu_ring_inner_m {
            return Err(Error::Config("rsu_ring_outer_m < rsu_ring_inner_m".into()));
        }
        Ok(())
    }
}

/// Low-rank completion solver parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionParams {
    pub target_rank: usize,
    pub max_iterations: usize,
    /// Relative Frobenius-change convergence threshold.
    pub convergence_tol: f64,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            target_rank: 4,
            max_iterations: 200,
            convergence_tol: 1e-6,
        }
    }
}

impl CompletionParams {
    pub fn validate(&self, n_rows: usize, n_cols: usize) -> Result<()> {
        if self.target_rank == 0 {
            return Err(Error::Config("target_rank must be >= 1".into()));
        }
        if self.target_rank > n_rows.min(n_cols) {
            return Err(Error::Config(format!(
                "target_rank {} exceeds min matrix dimension {}",
                self.target_rank,
                n_rows.min(n_cols)
            )));
        }
        if self.convergence_tol <= 0.0 {
            return Err(Error::Config("convergence_tol must be > 0".into()));
        }
        Ok(())
    }
}

/// Full scenario definition. Field names match the JSON schema one-to-one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub map_width_m: f64,
    pub map_height_m: f64,
    pub n_vertical_streets: usize,
    pub n_horizontal_streets: usize,
    pub social_spots: Vec<(f64, f64)>,
    pub n_vehicles: usize,
    /// Power-law exponent of the radial vehicle density around each spot.
    pub gamma: f64,
    pub n_probe_vehicles: usize,
    pub n_floating_cars: usize,
    pub duty_cycle_s: f64,
    pub horizon_cycles: usize,
    pub speed_limit_kmh: f64,
    pub rng_seed: u64,
    /// Fraction of spawned sessions that are voice (the rest are video).
    pub service_mix: f64,
    pub network: NetworkParams,
    pub completion: CompletionParams,
    pub mobility_radius_m: f64,
    pub n_tiers: usize,
    /// Mean inter-arrival time of sessions per vehicle, seconds.
    pub session_arrival_interval_s: f64,
    /// Traffic matrix / recommendation map refresh period, duty cycles.
    pub refresh_interval_cycles: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            map_width_m: 10_000.0,
            map_height_m: 10_000.0,
            n_vertical_streets: 20,
            n_horizontal_streets: 20,
            social_spots: vec![
                (2_500.0, 2_500.0),
                (2_500.0, 7_500.0),
                (7_500.0, 2_500.0),
                (7_500.0, 7_500.0),
                (5_000.0, 5_000.0),
            ],
            n_vehicles: 20_000,
            gamma: 2.0,
            n_probe_vehicles: 2_000,
            n_floating_cars: 260,
            duty_cycle_s: 30.0,
            horizon_cycles: 96,
            speed_limit_kmh: 80.0,
            rng_seed: 1,
            service_mix: 0.5,
            network: NetworkParams::default(),
            completion: CompletionParams::default(),
            mobility_radius_m: 2_500.0,
            n_tiers: 10,
            session_arrival_interval_s: 600.0,
            refresh_interval_cycles: 10,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.map_width_m <= 0.0 || self.map_height_m <= 0.0 {
            return Err(Error::Config("map dimensions must be > 0".into()));
        }
        if self.n_vertical_streets < 2 || self.n_horizontal_streets < 2 {
            return Err(Error::Config("street counts must be >= 2".into()));
        }
        if self.social_spots.is_empty() {
            return Err(Error::Config("at least one social spot is required".into()));
        }
        for &(x, y) in &self.social_spots {
            if x < 0.0 || x > self.map_width_m || y < 0.0 || y > self.map_height_m {
                return Err(Error::Config(format!(
                    "social spot ({x}, {y}) outside map bounds"
                )));
            }
        }
        let sensors = self.n_probe_vehicles + self.n_floating_cars;
        if self.n_vehicles > 0 && (sensors == 0 || sensors > self.n_vehicles) {
            return Err(Error::Config(format!(
                "need 0 < n_probe_vehicles + n_floating_cars <= n_vehicles, got {sensors} of {}",
                self.n_vehicles
            )));
        }
        if self.gamma <= 0.0 {
            return Err(Error::Config("gamma must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.service_mix) {
            return Err(Error::Config("service_mix must be in [0, 1]".into()));
        }
        if self.speed_limit_kmh <= 0.0 {
            return Err(Error::Config("speed_limit_kmh must be > 0".into()));
        }
        if self.duty_cycle_s <= 0.0 {
            return Err(Error::Config("duty_cycle_s must be > 0".into()));
        }
        if self.mobility_radius_m <= 0.0 || self.n_tiers == 0 {
            return Err(Error::Config("mobility_radius_m and n_tiers must be > 0".into()));
        }
        if self.refresh_interval_cycles == 0 {
            return Err(Error::Config("refresh_interval_cycles must be >= 1".into()));
        }
        self.network.validate()?;
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }
}
