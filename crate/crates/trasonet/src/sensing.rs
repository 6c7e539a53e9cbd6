//! Probe-vehicle sensing: GPS reports, map matching, the observed traffic
//! matrix, sampling-disorder entropy and floating-car route planning.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scenario::{RoadNetwork, VehicleRole, VehicleState};

/// Reports farther than this from every street are dropped.
pub const MAP_MATCH_RADIUS_M: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsReport {
    pub vehicle_id: usize,
    pub cycle_index: usize,
    pub position: (f64, f64),
    pub speed_kmh: f64,
    pub heading: (f64, f64),
}

/// Roads x duty-cycles grid of average speeds with an observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficMatrix {
    n_segments: usize,
    n_cycles: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl TrafficMatrix {
    pub fn new(n_segments: usize, n_cycles: usize) -> Self {
        Self {
            n_segments,
            n_cycles,
            values: vec![f64::NAN; n_segments * n_cycles],
            mask: vec![false; n_segments * n_cycles],
        }
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn n_cycles(&self) -> usize {
        self.n_cycles
    }

    fn idx(&self, segment: usize, cycle: usize) -> usize {
        segment * self.n_cycles + cycle
    }

    pub fn observed(&self, segment: usize, cycle: usize) -> bool {
        self.mask[self.idx(segment, cycle)]
    }

    pub fn get(&self, segment: usize, cycle: usize) -> Option<f64> {
        let i = self.idx(segment, cycle);
        self.mask[i].then(|| self.values[i])
    }

    pub fn set(&mut self, segment: usize, cycle: usize, value: f64) {
        let i = self.idx(segment, cycle);
        self.values[i] = value;
        self.mask[i] = true;
    }

    pub fn observation_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Number of observed cycles per segment row.
    pub fn row_counts(&self) -> Vec<usize> {
        (0..self.n_segments)
            .map(|i| (0..self.n_cycles).filter(|&j| self.observed(i, j)).count())
            .collect()
    }
}

/// Planned patrol routes, one segment per duty cycle per floating car.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcRoutePlan {
    /// routes[fc][cycle] = segment_id
    pub routes: Vec<Vec<usize>>,
}

impl FcRoutePlan {
    pub fn empty() -> Self {
        Self { routes: Vec::new() }
    }

    /// vehicle_id -> planned segment for the given cycle, for the FC vehicle
    /// ids supplied in the same order as the routes.
    pub fn segments_for_cycle(
        &self,
        fc_vehicle_ids: &[usize],
        cycle: usize,
    ) -> HashMap<usize, usize> {
        fc_vehicle_ids
            .iter()
            .zip(&self.routes)
            .filter_map(|(&vid, route)| route.get(cycle).map(|&seg| (vid, seg)))
            .collect()
    }
}

/// One report per probe vehicle and floating car; regular vehicles are silent.
pub fn emit_reports(
    vehicles: &[VehicleState],
    network: &RoadNetwork,
    cycle_index: usize,
) -> Vec<GpsReport> {
    vehicles
        .iter()
        .filter(|v| v.role != VehicleRole::Regular)
        .map(|v| GpsReport {
            vehicle_id: v.vehicle_id,
            cycle_index,
            position: v.position(network),
            speed_kmh: v.speed_kmh,
            heading: v.heading(network),
        })
        .collect()
}

/// Match a report position to the closest segment within the capture radius.
/// Ties go to the lowest segment id.
pub fn map_match(position: (f64, f64), network: &RoadNetwork) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for seg in &network.segments {
        let d = seg.distance_to(position);
        if d > MAP_MATCH_RADIUS_M {
            continue;
        }
        // strict less keeps the lowest id on exact ties
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, seg.segment_id));
        }
    }
    best.map(|(_, id)| id)
}

/// x_ij = mean speed of matched reports for segment i in cycle j.
pub fn build_traffic_matrix(
    reports: &[GpsReport],
    network: &RoadNetwork,
    n_cycles: usize,
) -> TrafficMatrix {
    let mut sums: HashMap<(usize, usize), (f64, usize)> = HashMap::new();
    for report in reports {
        if report.cycle_index >= n_cycles {
            continue;
        }
        let Some(segment) = map_match(report.position, network) else {
            continue;
        };
        let entry = sums.entry((segment, report.cycle_index)).or_insert((0.0, 0));
        entry.0 += report.speed_kmh;
        entry.1 += 1;
    }
    let mut matrix = TrafficMatrix::new(network.n_segments(), n_cycles);
    for ((segment, cycle), (sum, count)) in sums {
        matrix.set(segment, cycle, sum / count as f64);
    }
    matrix
}

/// (road coverage, time coverage): fraction of rows with any observation, and
/// the mean observed-cycle fraction over those rows.
pub fn coverage_stats(matrix: &TrafficMatrix) -> (f64, f64) {
    if matrix.n_segments() == 0 || matrix.n_cycles() == 0 {
        return (0.0, 0.0);
    }
    let counts = matrix.row_counts();
    let covered: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    if covered.is_empty() {
        return (0.0, 0.0);
    }
    let road = covered.len() as f64 / matrix.n_segments() as f64;
    let time = covered
        .iter()
        .map(|&c| c as f64 / matrix.n_cycles() as f64)
        .sum::<f64>()
        / covered.len() as f64;
    (road, time)
}

/// Shannon entropy (nats) of the histogram of per-row observation counts.
/// Perfectly even coverage collapses the histogram to one bin and gives 0.
pub fn average_entropy(matrix: &TrafficMatrix) -> f64 {
    histogram_entropy(&matrix.row_counts())
}

pub fn histogram_entropy(row_counts: &[usize]) -> f64 {
    if row_counts.is_empty() {
        return 0.0;
    }
    let mut histogram: HashMap<usize, usize> = HashMap::new();
    for &c in row_counts {
        *histogram.entry(c).or_insert(0) += 1;
    }
    let n = row_counts.len() as f64;
    histogram
        .values()
        .map(|&bin| {
            let p = bin as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Straight-line continuation of a segment across a node, if the grid has one.
fn straight_continuation(network: &RoadNetwork, seg_id: usize, candidate: usize) -> bool {
    let a = &network.segments[seg_id];
    let b = &network.segments[candidate];
    a.axis == b.axis
        && a.street_index == b.street_index
        && (a.block_index as i64 - b.block_index as i64).abs() == 1
}

/// Greedy patrol planning: each cycle every FC moves to the adjacent segment
/// with the fewest observations so far. Ties prefer going straight, then the
/// lowest segment id. The plan assumes one report per visited segment.
pub fn plan_fc_routes(
    n_fc: usize,
    matrix_so_far: &TrafficMatrix,
    network: &RoadNetwork,
    horizon: usize,
    start_segments: Option<&[usize]>,
) -> FcRoutePlan {
    if n_fc == 0 || horizon == 0 || network.n_segments() == 0 {
        return FcRoutePlan::empty();
    }
    let mut counts = matrix_so_far.row_counts();
    counts.resize(network.n_segments(), 0);

    let stride = (network.n_segments() / n_fc).max(1);
    let mut current: Vec<usize> = (0..n_fc)
        .map(|k| match start_segments {
            Some(starts) => starts[k % starts.len()],
            None => (k * stride) % network.n_segments(),
        })
        .collect();
    let mut routes = vec![Vec::with_capacity(horizon); n_fc];

    for _cycle in 0..horizon {
        for (fc, seg) in current.iter_mut().enumerate() {
            let adjacent = network.adjacent_segments(*seg);
            let next = adjacent
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let key = |s: usize| {
                        (
                            counts[s],
                            !straight_continuation(network, *seg, s),
                            s,
                        )
                    };
                    key(a).cmp(&key(b))
                })
                .unwrap_or(*seg);
            *seg = next;
            counts[next] += 1;
            routes[fc].push(next);
        }
    }
    FcRoutePlan { routes }
}

/// Random patrol baseline used to quantify the planner's benefit.
pub fn random_fc_routes<R: Rng>(
    n_fc: usize,
    network: &RoadNetwork,
    horizon: usize,
    rng: &mut R,
) -> FcRoutePlan {
    if n_fc == 0 || horizon == 0 || network.n_segments() == 0 {
        return FcRoutePlan::empty();
    }
    let stride = (network.n_segments() / n_fc).max(1);
    let mut routes = Vec::with_capacity(n_fc);
    for k in 0..n_fc {
        let mut seg = (k * stride) % network.n_segments();
        let mut route = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let adjacent = network.adjacent_segments(seg);
            if !adjacent.is_empty() {
                seg = adjacent[rng.gen_range(0..adjacent.len())];
            }
            route.push(seg);
        }
        routes.push(route);
    }
    FcRoutePlan { routes }
}

/// Reports as CSV: `vehicle_id,cycle,x,y,speed,heading`.
pub fn reports_to_csv(reports: &[GpsReport]) -> String {
    let mut out = String::from("vehicle_id,cycle,x,y,speed,heading_x,heading_y\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.vehicle_id, r.cycle_index, r.position.0, r.position.1, r.speed_kmh, r.heading.0, r.heading.1
        ));
    }
    out
}

/// Traffic matrix as two CSV bodies (values with NaN sentinel, mask as 0/1).
pub fn matrix_to_csv(matrix: &TrafficMatrix) -> (String, String) {
    let mut values = String::new();
    let mut mask = String::new();
    for i in 0..matrix.n_segments() {
        let mut vrow = Vec::with_capacity(matrix.n_cycles());
        let mut mrow = Vec::with_capacity(matrix.n_cycles());
        for j in 0..matrix.n_cycles() {
            match matrix.get(i, j) {
                Some(v) => {
                    vrow.push(format!("{v:.6}"));
                    mrow.push("1".to_string());
                }
                None => {
                    vrow.push("nan".to_string());
                    mrow.push("0".to_string());
                }
            }
        }
        values.push_str(&vrow.join(","));
        values.push('\n');
        mask.push_str(&mrow.join(","));
        mask.push('\n');
    }
    (values, mask)
}
