//! Cellular / VANET capacity model and the end-to-end simulation loop
//! comparing cellular-only access against the recommender + fuzzy engine.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::access::{default_rulebase, AccessEngine, FuzzyInputs, HandoverPolicy};
use crate::ahp::{recommendation_map, CellState, NetworkChoice, RecommendationMap, Service, SERVICES};
use crate::completion::complete_matrix;
use crate::config::{NetworkParams, ScenarioConfig};
use crate::error::Result;
use crate::scenario::{
    build_road_network, place_vehicles, social_spots, step_mobility, RoadNetwork, VehicleRole,
    VehicleState,
};
use crate::sensing::{
    build_traffic_matrix, emit_reports, plan_fc_routes, FcRoutePlan, GpsReport, TrafficMatrix,
};

pub const VOICE_RATE_MBPS: f64 = 0.0006; // 0.6 Kbps
pub const VIDEO_RATE_MBPS: f64 = 5.0;
pub const VOICE_MEAN_DURATION_S: f64 = 180.0;
pub const VIDEO_MEAN_DURATION_S: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Baseline,
    Trasonet,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Trasonet => "trasonet",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Enb(usize),
    Rsu(usize),
}

/// Fixed infrastructure: eNB grid plus RSUs along streets in a ring around
/// each social spot. The spot's immediate vicinity is deliberately left
/// without RSU coverage.
#[derive(Debug, Clone)]
pub struct Infrastructure {
    pub enbs: Vec<(f64, f64)>,
    pub rsus: Vec<(f64, f64)>,
    pub rsu_radius_m: f64,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

impl Infrastructure {
    pub fn build(config: &ScenarioConfig, network: &RoadNetwork) -> Self {
        let params = &config.network;
        let mut enbs = Vec::new();
        let nx = (config.map_width_m / params.enb_grid_spacing_m).ceil() as usize;
        let ny = (config.map_height_m / params.enb_grid_spacing_m).ceil() as usize;
        for j in 0..ny.max(1) {
            for i in 0..nx.max(1) {
                enbs.push((
                    (i as f64 + 0.5) * params.enb_grid_spacing_m,
                    (j as f64 + 0.5) * params.enb_grid_spacing_m,
                ));
            }
        }

        let rsus = match &params.rsu_positions {
            Some(positions) => positions.clone(),
            None => {
                let mut rsus = Vec::new();
                for seg in &network.segments {
                    let len = seg.length_m();
                    let mut offset = 0.0;
                    while offset <= len {
                        let p = seg.point_at(offset);
                        let nearest_spot = config
                            .social_spots
                            .iter()
                            .map(|&s| dist(p, s))
                            .fold(f64::INFINITY, f64::min);
                        if nearest_spot >= params.rsu_ring_inner_m
                            && nearest_spot <= params.rsu_ring_outer_m
                        {
                            rsus.push(p);
                        }
                        offset += params.rsu_spacing_m;
                    }
                }
                rsus
            }
        };
        Self {
            enbs,
            rsus,
            rsu_radius_m: params.rsu_radius_m,
        }
    }

    pub fn nearest_enb(&self, p: (f64, f64)) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &e) in self.enbs.iter().enumerate() {
            let d = dist(p, e);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Closest RSU whose radius covers the position.
    pub fn rsu_in_range(&self, p: (f64, f64)) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (i, &r) in self.rsus.iter().enumerate() {
            let d = dist(p, r);
            if d <= self.rsu_radius_m && best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        best.map(|(_, i)| i)
    }

    pub fn rsu_covers(&self, p: (f64, f64)) -> bool {
        self.rsu_in_range(p).is_some()
    }
}

/// Max-min fair allocation of a shared capacity over session demands.
pub fn max_min_fair(demands: &[f64], capacity: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by(|&a, &b| demands[a].partial_cmp(&demands[b]).unwrap());
    let mut alloc = vec![0.0; demands.len()];
    let mut remaining = capacity;
    for (k, &idx) in order.iter().enumerate() {
        let fair = remaining / (demands.len() - k) as f64;
        let given = demands[idx].min(fair);
        alloc[idx] = given;
        remaining -= given;
    }
    alloc
}

#[derive(Debug, Clone, Copy)]
pub struct Grant {
    pub rate_mbps: f64,
    pub delay_ms: f64,
}

/// Split each node's capacity max-min fairly over the attached sessions.
/// Cellular delay scales with the node's offered load past saturation; VANET
/// delay grows linearly in the attached-user count.
pub fn allocate_capacity(
    attachments: &[(Node, f64)],
    params: &NetworkParams,
) -> Vec<Grant> {
    let mut by_node: HashMap<Node, Vec<usize>> = HashMap::new();
    for (i, (node, _)) in attachments.iter().enumerate() {
        by_node.entry(*node).or_default().push(i);
    }
    let mut grants = vec![
        Grant {
            rate_mbps: 0.0,
            delay_ms: 0.0,
        };
        attachments.len()
    ];
    for (node, members) in by_node {
        let demands: Vec<f64> = members.iter().map(|&i| attachments[i].1).collect();
        let capacity = match node {
            Node::Enb(_) => params.enb_capacity_mbps,
            Node::Rsu(_) => params.rsu_capacity_mbps,
        };
        let rates = max_min_fair(&demands, capacity);
        let offered: f64 = demands.iter().sum();
        let delay = match node {
            Node::Enb(_) => params.cellular_base_delay_ms * (offered / capacity).max(1.0),
            Node::Rsu(_) => params.vanet_delay_per_user_ms * members.len() as f64,
        };
        for (&i, rate) in members.iter().zip(rates) {
            grants[i] = Grant {
                rate_mbps: rate,
                delay_ms: delay,
            };
        }
    }
    grants
}

/// Marginal cost of sending `megabits` in one cycle. `vanet_used_mb` is the
/// vehicle's cumulative flat-plan usage before this transfer. The flat fee
/// itself is charged once per vehicle per simulated period, outside this call.
pub fn accrue_cost(
    network: NetworkChoice,
    megabits: f64,
    vanet_used_mb: f64,
    params: &NetworkParams,
) -> f64 {
    assert!(megabits >= 0.0);
    match network {
        NetworkChoice::Cellular => megabits * params.cellular_price_per_mb,
        NetworkChoice::Vanet => {
            let over_cap = (vanet_used_mb + megabits - params.vanet_cap_mb).max(0.0);
            over_cap.min(megabits) * params.cellular_price_per_mb
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub service: Service,
    pub demand_mbps: f64,
    pub remaining_cycles: usize,
    pub attached: NetworkChoice,
    good_cycles: usize,
    total_cycles: usize,
    vanet_mb: f64,
    total_mb: f64,
    cost_rmb: f64,
    density_sum: f64,
    last_qos: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DensityBin {
    pub lo: f64,
    pub hi: f64,
    pub sessions: usize,
    pub successes: usize,
}

impl DensityBin {
    pub fn success_probability(&self) -> f64 {
        if self.sessions == 0 {
            1.0
        } else {
            self.successes as f64 / self.sessions as f64
        }
    }
}

pub const DENSITY_BIN_WIDTH: f64 = 0.01;
pub const DENSITY_BIN_COUNT: usize = 11; // last bin open-ended

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServiceMetrics {
    pub sessions: usize,
    pub successes: usize,
    pub success_probability: f64,
    /// True when no session of this service was spawned at all.
    pub zero_count: bool,
    pub offload_fraction: f64,
    pub mean_cost_rmb: f64,
    pub handover_count: usize,
    pub density_bins: Vec<DensityBin>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimMetrics {
    pub mode: Mode,
    pub seed: u64,
    pub voice: ServiceMetrics,
    pub video: ServiceMetrics,
}

impl SimMetrics {
    pub fn service(&self, service: Service) -> &ServiceMetrics {
        match service {
            Service::Voice => &self.voice,
            Service::Video => &self.video,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub service: Service,
    pub mode: Mode,
    /// Fraction of active sessions meeting rate and delay this cycle.
    pub success: f64,
    /// Fraction of this cycle's bytes carried by VANET.
    pub offload: f64,
    /// Cost accrued this cycle, RMB.
    pub cost: f64,
    /// Cumulative handovers up to this cycle.
    pub handover_count: usize,
}

#[derive(Debug, Clone)]
pub struct SimRun {
    pub metrics: SimMetrics,
    pub timeseries: Vec<CycleRecord>,
    pub recommendation_maps: Vec<RecommendationMap>,
}

/// Per-cell vehicle densities (vehicles per street-meter) and load proxies.
pub struct CellGrid {
    pub n_cells_x: usize,
    pub n_cells_y: usize,
    pub cell_size_m: f64,
    street_length: Vec<f64>,
    rsu_covered: Vec<bool>,
}

impl CellGrid {
    pub fn build(config: &ScenarioConfig, network: &RoadNetwork, infra: &Infrastructure) -> Self {
        let cell = config.network.cell_size_m;
        let n_cells_x = (config.map_width_m / cell).ceil() as usize;
        let n_cells_y = (config.map_height_m / cell).ceil() as usize;
        let mut street_length = vec![0.0; n_cells_x * n_cells_y];
        let mut rsu_covered = vec![false; n_cells_x * n_cells_y];
        for cy in 0..n_cells_y {
            for cx in 0..n_cells_x {
                let x0 = cx as f64 * cell;
                let y0 = cy as f64 * cell;
                street_length[cy * n_cells_x + cx] =
                    network.street_length_in_rect(x0, y0, x0 + cell, y0 + cell);
                let center = (x0 + cell / 2.0, y0 + cell / 2.0);
                rsu_covered[cy * n_cells_x + cx] = infra.rsu_covers(center);
            }
        }
        Self {
            n_cells_x,
            n_cells_y,
            cell_size_m: cell,
            street_length,
            rsu_covered,
        }
    }

    pub fn cell_index(&self, p: (f64, f64)) -> usize {
        let cx = ((p.0 / self.cell_size_m) as usize).min(self.n_cells_x - 1);
        let cy = ((p.1 / self.cell_size_m) as usize).min(self.n_cells_y - 1);
        cy * self.n_cells_x + cx
    }

    /// Vehicles per street-meter in every cell.
    pub fn densities(&self, vehicles: &[VehicleState], network: &RoadNetwork) -> Vec<f64> {
        let mut counts = vec![0usize; self.street_length.len()];
        for v in vehicles {
            counts[self.cell_index(v.position(network))] += 1;
        }
        counts
            .iter()
            .zip(&self.street_length)
            .map(|(&c, &len)| if len > 0.0 { c as f64 / len } else { 0.0 })
            .collect()
    }

    pub fn cell_states(
        &self,
        densities: &[f64],
        estimate_load: Option<&[f64]>,
    ) -> Vec<CellState> {
        densities
            .iter()
            .enumerate()
            .map(|(i, &d)| CellState {
                vehicle_density: d,
                rsu_coverage: self.rsu_covered[i],
                cell_load: estimate_load.map(|l| l[i]).unwrap_or(0.0),
            })
            .collect()
    }
}

/// Mean congestion proxy per cell from the completed traffic estimate:
/// 1 - speed/limit averaged over the segments crossing the cell.
pub fn cell_load_from_estimate(
    grid: &CellGrid,
    network: &RoadNetwork,
    estimate: &nalgebra::DMatrix<f64>,
    cycle: usize,
    speed_limit: f64,
) -> Vec<f64> {
    let mut sums = vec![0.0; grid.street_length.len()];
    let mut counts = vec![0usize; grid.street_length.len()];
    let col = cycle.min(estimate.ncols().saturating_sub(1));
    for seg in &network.segments {
        let mid = seg.point_at(seg.length_m() / 2.0);
        let idx = grid.cell_index(mid);
        sums[idx] += 1.0 - (estimate[(seg.segment_id, col)] / speed_limit).clamp(0.0, 1.0);
        counts[idx] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}

fn density_bin_index(density: f64) -> usize {
    ((density / DENSITY_BIN_WIDTH) as usize).min(DENSITY_BIN_COUNT - 1)
}

struct ServiceAccumulator {
    sessions: usize,
    successes: usize,
    vanet_mb: f64,
    total_mb: f64,
    cost_rmb: f64,
    handover_count: usize,
    bins: Vec<DensityBin>,
}

impl ServiceAccumulator {
    fn new() -> Self {
        let bins = (0..DENSITY_BIN_COUNT)
            .map(|i| DensityBin {
                lo: i as f64 * DENSITY_BIN_WIDTH,
                hi: if i + 1 == DENSITY_BIN_COUNT {
                    f64::INFINITY
                } else {
                    (i + 1) as f64 * DENSITY_BIN_WIDTH
                },
                sessions: 0,
                successes: 0,
            })
            .collect();
        Self {
            sessions: 0,
            successes: 0,
            vanet_mb: 0.0,
            total_mb: 0.0,
            cost_rmb: 0.0,
            handover_count: 0,
            bins,
        }
    }

    fn finish_session(&mut self, session: &SessionState) {
        if session.total_cycles == 0 {
            return;
        }
        self.sessions += 1;
        let ok = session.good_cycles as f64 / session.total_cycles as f64 >= 0.95;
        if ok {
            self.successes += 1;
        }
        self.vanet_mb += session.vanet_mb;
        self.total_mb += session.total_mb;
        self.cost_rmb += session.cost_rmb;
        let mean_density = session.density_sum / session.total_cycles as f64;
        let bin = &mut self.bins[density_bin_index(mean_density)];
        bin.sessions += 1;
        if ok {
            bin.successes += 1;
        }
    }

    fn into_metrics(self) -> ServiceMetrics {
        let zero = self.sessions == 0;
        ServiceMetrics {
            success_probability: if zero {
                1.0
            } else {
                self.successes as f64 / self.sessions as f64
            },
            sessions: self.sessions,
            successes: self.successes,
            zero_count: zero,
            offload_fraction: if self.total_mb > 0.0 {
                self.vanet_mb / self.total_mb
            } else {
                0.0
            },
            mean_cost_rmb: if zero {
                0.0
            } else {
                self.cost_rmb / self.sessions as f64
            },
            handover_count: self.handover_count,
            density_bins: self.bins,
        }
    }
}

fn delay_bound_ms(service: Service, params: &NetworkParams) -> f64 {
    match service {
        Service::Voice => params.voice_delay_bound_ms,
        Service::Video => params.video_delay_bound_ms,
    }
}

/// Full scenario simulation. Deterministic for a given (config, seed, mode);
/// Baseline and Trasonet draw identical random streams so paired seeds share
/// mobility, arrivals and durations.
pub fn run_simulation(config: &ScenarioConfig, mode: Mode, seed: u64) -> Result<SimRun> {
    config.validate()?;
    let network = build_road_network(config)?;
    let infra = Infrastructure::build(config, &network);
    let grid = CellGrid::build(config, &network, &infra);
    let spots = social_spots(config);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vehicles = place_vehicles(config, &network, &mut rng)?;
    let fc_ids: Vec<usize> = vehicles
        .iter()
        .filter(|v| v.role == VehicleRole::FloatingCar)
        .map(|v| v.vehicle_id)
        .collect();

    let dt = config.duty_cycle_s;
    let arrival_p = 1.0 - (-dt / config.session_arrival_interval_s).exp();
    let rulebase = default_rulebase();
    let policy = HandoverPolicy::default();

    let mut sessions: HashMap<usize, SessionState> = HashMap::new();
    let mut engines: HashMap<usize, AccessEngine> = HashMap::new();
    let mut vanet_mb_per_vehicle: HashMap<usize, f64> = HashMap::new();
    let mut flat_fee_charged: std::collections::HashSet<usize> = std::collections::HashSet::new();

    let mut all_reports: Vec<GpsReport> = Vec::new();
    let mut fc_plan = FcRoutePlan::empty();
    let mut fc_plan_base_cycle = 0usize;
    let mut rec_maps: Vec<RecommendationMap> = Vec::new();

    let mut voice_acc = ServiceAccumulator::new();
    let mut video_acc = ServiceAccumulator::new();
    let mut timeseries = Vec::new();

    for cycle in 0..config.horizon_cycles {
        // mobility (floating cars follow the current patrol plan)
        let fc_segments = if fc_plan.routes.is_empty() {
            None
        } else {
            Some(fc_plan.segments_for_cycle(&fc_ids, cycle - fc_plan_base_cycle))
        };
        step_mobility(
            &mut vehicles,
            &network,
            &spots,
            dt,
            fc_segments.as_ref(),
            &mut rng,
        );

        // sensing
        all_reports.extend(emit_reports(&vehicles, &network, cycle));

        // periodic estimation + recommendation refresh
        if cycle % config.refresh_interval_cycles == 0 {
            let matrix: TrafficMatrix =
                build_traffic_matrix(&all_reports, &network, config.horizon_cycles);
            let densities = grid.densities(&vehicles, &network);
            let load = if matrix.observation_count() > 0 {
                let completed =
                    complete_matrix(&matrix, &config.completion, config.speed_limit_kmh)?;
                Some(cell_load_from_estimate(
                    &grid,
                    &network,
                    &completed.estimate,
                    cycle,
                    config.speed_limit_kmh,
                ))
            } else {
                None
            };
            let states = grid.cell_states(&densities, load.as_deref());
            rec_maps = SERVICES
                .iter()
                .map(|&service| {
                    recommendation_map(
                        service,
                        grid.cell_size_m,
                        grid.n_cells_x,
                        grid.n_cells_y,
                        &states,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            fc_plan = plan_fc_routes(
                fc_ids.len(),
                &matrix,
                &network,
                config.horizon_cycles - cycle,
                None,
            );
            fc_plan_base_cycle = cycle;
        }

        let densities = grid.densities(&vehicles, &network);

        // session arrivals (identical draws across modes)
        for v in &vehicles {
            let draw = rng.gen::<f64>();
            let service_draw = rng.gen::<f64>();
            let duration_draw = rng.gen::<f64>();
            if sessions.contains_key(&v.vehicle_id) || draw >= arrival_p {
                continue;
            }
            let service = if service_draw < config.service_mix {
                Service::Voice
            } else {
                Service::Video
            };
            let (demand, mean_s) = match service {
                Service::Voice => (VOICE_RATE_MBPS, VOICE_MEAN_DURATION_S),
                Service::Video => (VIDEO_RATE_MBPS, VIDEO_MEAN_DURATION_S),
            };
            let duration_s = -mean_s * (1.0 - duration_draw).ln();
            let duration_cycles = (duration_s / dt).ceil().max(1.0) as usize;

            let attached = match mode {
                Mode::Baseline => NetworkChoice::Cellular,
                Mode::Trasonet => {
                    let pos = v.position(&network);
                    let recommended = rec_maps
                        .iter()
                        .find(|m| m.service == service)
                        .and_then(|m| m.cell_at(pos.0, pos.1))
                        .map(|c| c.argmax)
                        .unwrap_or(NetworkChoice::Cellular);
                    if recommended == NetworkChoice::Vanet && infra.rsu_covers(pos) {
                        NetworkChoice::Vanet
                    } else {
                        NetworkChoice::Cellular
                    }
                }
            };
            sessions.insert(
                v.vehicle_id,
                SessionState {
                    service,
                    demand_mbps: demand,
                    remaining_cycles: duration_cycles,
                    attached,
                    good_cycles: 0,
                    total_cycles: 0,
                    vanet_mb: 0.0,
                    total_mb: 0.0,
                    cost_rmb: 0.0,
                    density_sum: 0.0,
                    last_qos: 0.5,
                },
            );
            if mode == Mode::Trasonet {
                engines
                    .entry(v.vehicle_id)
                    .or_insert_with(|| AccessEngine::new(rulebase.clone(), policy));
            }
        }

        // handover decisions for ongoing Trasonet sessions
        if mode == Mode::Trasonet {
            let mut vids: Vec<usize> = sessions.keys().copied().collect();
            vids.sort_unstable();
            for vid in vids {
                let session = sessions.get_mut(&vid).expect("session exists");
                if session.total_cycles == 0 {
                    continue; // first cycle: no achieved QoS yet
                }
                let vehicle = &vehicles[vid];
                let pos = vehicle.position(&network);
                let recommendation = rec_maps
                    .iter()
                    .find(|m| m.service == session.service)
                    .and_then(|m| m.cell_at(pos.0, pos.1))
                    .map(|c| c.argmax)
                    .unwrap_or(NetworkChoice::Cellular);
                let inputs = FuzzyInputs {
                    speed_kmh: vehicle.speed_kmh,
                    application: session.service,
                    current_option: session.attached,
                    recommendation,
                };
                let engine = engines.get_mut(&vid).expect("engine exists");
                let next = engine.step(&inputs, session.last_qos, cycle);
                if next != session.attached {
                    let acc = match session.service {
                        Service::Voice => &mut voice_acc,
                        Service::Video => &mut video_acc,
                    };
                    acc.handover_count += 1;
                    session.attached = next;
                }
            }
        }

        // attachment resolution and capacity allocation
        let mut order: Vec<usize> = sessions.keys().copied().collect();
        order.sort_unstable();
        let mut attachments: Vec<(Node, f64)> = Vec::with_capacity(order.len());
        let mut resolved: Vec<NetworkChoice> = Vec::with_capacity(order.len());
        for &vid in &order {
            let session = &sessions[&vid];
            let pos = vehicles[vid].position(&network);
            let (node, network_used) = if session.attached == NetworkChoice::Vanet {
                match infra.rsu_in_range(pos) {
                    Some(r) => (Node::Rsu(r), NetworkChoice::Vanet),
                    // out of RSU range: fall back to cellular
                    None => (Node::Enb(infra.nearest_enb(pos)), NetworkChoice::Cellular),
                }
            } else {
                (Node::Enb(infra.nearest_enb(pos)), NetworkChoice::Cellular)
            };
            attachments.push((node, session.demand_mbps));
            resolved.push(network_used);
        }
        let grants = allocate_capacity(&attachments, &config.network);

        // per-session bookkeeping
        let mut cycle_stats: HashMap<Service, (usize, usize, f64, f64, f64)> = HashMap::new();
        let mut finished: Vec<usize> = Vec::new();
        for ((&vid, grant), network_used) in order.iter().zip(&grants).zip(&resolved) {
            let session = sessions.get_mut(&vid).expect("session exists");
            let pos = vehicles[vid].position(&network);
            let bound = delay_bound_ms(session.service, &config.network);
            let rate_ok = grant.rate_mbps >= session.demand_mbps - 1e-12;
            let delay_ok = grant.delay_ms <= bound;
            let good = rate_ok && delay_ok;

            session.total_cycles += 1;
            if good {
                session.good_cycles += 1;
            }
            session.density_sum += densities[grid.cell_index(pos)];

            let megabits = grant.rate_mbps * dt;
            session.total_mb += megabits;
            let used = vanet_mb_per_vehicle.entry(vid).or_insert(0.0);
            let mut cost = accrue_cost(*network_used, megabits, *used, &config.network);
            if *network_used == NetworkChoice::Vanet {
                session.vanet_mb += megabits;
                *used += megabits;
                if flat_fee_charged.insert(vid) {
                    cost += config.network.vanet_flat_price_rmb;
                }
            }
            session.cost_rmb += cost;

            let rate_factor = (grant.rate_mbps / session.demand_mbps).min(1.0);
            let delay_factor = if delay_ok { 1.0 } else { bound / grant.delay_ms };
            session.last_qos = (rate_factor * delay_factor).clamp(0.0, 1.0);

            let entry = cycle_stats.entry(session.service).or_insert((0, 0, 0.0, 0.0, 0.0));
            entry.0 += 1;
            if good {
                entry.1 += 1;
            }
            entry.2 += if *network_used == NetworkChoice::Vanet {
                megabits
            } else {
                0.0
            };
            entry.3 += megabits;
            entry.4 += cost;

            session.remaining_cycles -= 1;
            if session.remaining_cycles == 0 {
                finished.push(vid);
            }
        }

        for service in SERVICES {
            let (active, good, vanet, total, cost) = cycle_stats
                .get(&service)
                .copied()
                .unwrap_or((0, 0, 0.0, 0.0, 0.0));
            let acc = match service {
                Service::Voice => &voice_acc,
                Service::Video => &video_acc,
            };
            timeseries.push(CycleRecord {
                cycle,
                service,
                mode,
                success: if active == 0 {
                    1.0
                } else {
                    good as f64 / active as f64
                },
                offload: if total > 0.0 { vanet / total } else { 0.0 },
                cost,
                handover_count: acc.handover_count,
            });
        }

        for vid in finished {
            let session = sessions.remove(&vid).expect("finished session");
            let acc = match session.service {
                Service::Voice => &mut voice_acc,
                Service::Video => &mut video_acc,
            };
            acc.finish_session(&session);
        }
    }

    // sessions still active at the horizon count with their observed cycles
    let mut remaining: Vec<(usize, SessionState)> = sessions.drain().collect();
    remaining.sort_by_key(|(vid, _)| *vid);
    for (_, session) in remaining {
        let acc = match session.service {
            Service::Voice => &mut voice_acc,
            Service::Video => &mut video_acc,
        };
        acc.finish_session(&session);
    }

    Ok(SimRun {
        metrics: SimMetrics {
            mode,
            seed,
            voice: voice_acc.into_metrics(),
            video: video_acc.into_metrics(),
        },
        timeseries,
        recommendation_maps: rec_maps,
    })
}

/// Time series as CSV: `cycle,service,mode,success,offload,cost,handover_count`.
pub fn timeseries_to_csv(records: &[CycleRecord]) -> String {
    let mut out = String::from("cycle,service,mode,success,offload,cost,handover_count\n");
    for r in records {
        let service = match r.service {
            Service::Voice => "voice",
            Service::Video => "video",
        };
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{}\n",
            r.cycle,
            service,
            r.mode.as_str(),
            r.success,
            r.offload,
            r.cost,
            r.handover_count
        ));
    }
    out
}

/// Density-bin success curves as CSV.
pub fn density_bins_to_csv(metrics: &SimMetrics) -> String {
    let mut out = String::from("service,bin_lo,bin_hi,sessions,successes,success_probability\n");
    for (name, m) in [("voice", &metrics.voice), ("video", &metrics.video)] {
        for b in &m.density_bins {
            out.push_str(&format!(
                "{},{:.6},{:.6},{},{},{:.6}\n",
                name,
                b.lo,
                if b.hi.is_finite() { b.hi } else { 999.0 },
                b.sessions,
                b.successes,
                b.success_probability()
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> NetworkParams {
        NetworkParams::default()
    }

    #[test]
    fn underloaded_rsu_grants_full_demand() {
        let grants = allocate_capacity(&[(Node::Rsu(0), 5.0)], &params());
        assert_eq!(grants[0].rate_mbps, 5.0);
    }

    #[test]
    fn overloaded_rsu_splits_equally() {
        let attachments = vec![(Node::Rsu(0), 5.0); 3];
        let grants = allocate_capacity(&attachments, &params());
        for g in &grants {
            assert!((g.rate_mbps - 10.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn many_voice_sessions_fit_an_enb() {
        let attachments = vec![(Node::Enb(0), VOICE_RATE_MBPS); 1_000];
        let grants = allocate_capacity(&attachments, &params());
        assert!(grants.iter().all(|g| g.rate_mbps >= VOICE_RATE_MBPS - 1e-12));
    }

    #[test]
    fn max_min_protects_small_demands() {
        let rates = max_min_fair(&[0.001, 8.0, 8.0], 10.0);
        assert!((rates[0] - 0.001).abs() < 1e-12);
        assert!((rates[1] - rates[2]).abs() < 1e-12);
        assert!(rates.iter().sum::<f64>() <= 10.0 + 1e-9);
    }

    #[test]
    fn capacity_is_conserved() {
        let attachments: Vec<(Node, f64)> = (0..40).map(|_| (Node::Enb(0), 5.0)).collect();
        let grants = allocate_capacity(&attachments, &params());
        let total: f64 = grants.iter().map(|g| g.rate_mbps).sum();
        assert!(total <= params().enb_capacity_mbps + 1e-9);
    }

    #[test]
    fn cellular_delay_scales_past_saturation() {
        let light = allocate_capacity(&[(Node::Enb(0), 5.0)], &params());
        assert_eq!(light[0].delay_ms, 50.0);
        let heavy: Vec<(Node, f64)> = (0..60).map(|_| (Node::Enb(0), 5.0)).collect();
        let grants = allocate_capacity(&heavy, &params());
        assert!((grants[0].delay_ms - 50.0 * 3.0).abs() < 1e-9);
    }

    #[test]
    fn cost_rules() {
        let p = params();
        assert_eq!(
            accrue_cost(NetworkChoice::Cellular, 10.0, 0.0, &p),
            10.0
        );
        assert_eq!(accrue_cost(NetworkChoice::Vanet, 10.0, 0.0, &p), 0.0);
        // 1 Mb past the 2 Gb cap bills at the cellular rate
        assert_eq!(
            accrue_cost(NetworkChoice::Vanet, 1.0, p.vanet_cap_mb, &p),
            1.0
        );
    }

    #[test]
    fn rsu_ring_leaves_spot_uncovered() {
        let cfg = ScenarioConfig::default();
        let network = build_road_network(&cfg).unwrap();
        let infra = Infrastructure::build(&cfg, &network);
        assert!(!infra.rsus.is_empty());
        for &spot in &cfg.social_spots {
            assert!(!infra.rsu_covers(spot), "spot {spot:?} covered");
            for &rsu in &infra.rsus {
                let nearest = cfg
                    .social_spots
                    .iter()
                    .map(|&s| dist(rsu, s))
                    .fold(f64::INFINITY, f64::min);
                assert!(nearest >= cfg.network.rsu_ring_inner_m - 1e-9);
                assert!(nearest <= cfg.network.rsu_ring_outer_m + 1e-9);
            }
        }
    }

    fn desk_config(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            map_width_m: 2_000.0,
            map_height_m: 2_000.0,
            n_vertical_streets: 8,
            n_horizontal_streets: 8,
            social_spots: vec![(500.0, 500.0), (1_500.0, 1_500.0)],
            n_vehicles: 400,
            n_probe_vehicles: 60,
            n_floating_cars: 6,
            horizon_cycles: 30,
            mobility_radius_m: 900.0,
            rng_seed: seed,
            service_mix: 0.7,
            network: NetworkParams {
                enb_grid_spacing_m: 1_000.0,
                rsu_ring_inner_m: 300.0,
                rsu_ring_outer_m: 800.0,
                ..NetworkParams::default()
            },
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = desk_config(5);
        let a = run_simulation(&cfg, Mode::Trasonet, 5).unwrap();
        let b = run_simulation(&cfg, Mode::Trasonet, 5).unwrap();
        assert_eq!(timeseries_to_csv(&a.timeseries), timeseries_to_csv(&b.timeseries));
        assert_eq!(
            serde_json::to_string(&a.metrics).unwrap(),
            serde_json::to_string(&b.metrics).unwrap()
        );
    }

    #[test]
    fn zero_sessions_reports_vacuous_success() {
        let cfg = ScenarioConfig {
            session_arrival_interval_s: 1e12,
            ..desk_config(1)
        };
        let run = run_simulation(&cfg, Mode::Baseline, 1).unwrap();
        assert!(run.metrics.voice.zero_count);
        assert_eq!(run.metrics.voice.success_probability, 1.0);
    }

    #[test]
    fn trasonet_offloads_some_video() {
        let mut any = 0.0;
        for seed in 0..3 {
            let cfg = desk_config(seed);
            let run = run_simulation(&cfg, Mode::Trasonet, seed).unwrap();
            any += run.metrics.video.offload_fraction;
        }
        assert!(any > 0.0, "no video offload across seeds");
    }
}
