//! Grid city, social-spot placement and restricted power-law mobility.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    Vertical,
    Horizontal,
}

/// One inter-intersection block of a street.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub segment_id: usize,
    pub axis: Axis,
    pub street_index: usize,
    pub block_index: usize,
    /// Fixed coordinate of the street (x for vertical, y for horizontal).
    pub cross_m: f64,
    /// Start/end along the running coordinate (y for vertical, x for horizontal).
    pub start_m: f64,
    pub end_m: f64,
}

impl Segment {
    pub fn length_m(&self) -> f64 {
        self.end_m - self.start_m
    }

    pub fn point_at(&self, offset_m: f64) -> (f64, f64) {
        let along = self.start_m + offset_m;
        match self.axis {
            Axis::Vertical => (self.cross_m, along),
            Axis::Horizontal => (along, self.cross_m),
        }
    }

    pub fn endpoints(&self) -> ((f64, f64), (f64, f64)) {
        (self.point_at(0.0), self.point_at(self.length_m()))
    }

    /// Perpendicular distance from a point to this segment (closest point on it).
    pub fn distance_to(&self, p: (f64, f64)) -> f64 {
        let (along, cross) = match self.axis {
            Axis::Vertical => (p.1, p.0),
            Axis::Horizontal => (p.0, p.1),
        };
        let clamped = along.clamp(self.start_m, self.end_m);
        let da = along - clamped;
        let dc = cross - self.cross_m;
        (da * da + dc * dc).sqrt()
    }

    /// Closest point on the segment, returned as offset from start_m.
    pub fn closest_offset(&self, p: (f64, f64)) -> f64 {
        let along = match self.axis {
            Axis::Vertical => p.1,
            Axis::Horizontal => p.0,
        };
        along.clamp(self.start_m, self.end_m) - self.start_m
    }
}

/// Intersection node, identified by (vertical street, horizontal street).
pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct RoadNetwork {
    pub segments: Vec<Segment>,
    pub speed_limit_kmh: f64,
    pub n_vertical: usize,
    pub n_horizontal: usize,
    pub x_streets: Vec<f64>,
    pub y_streets: Vec<f64>,
    /// node id -> segment ids meeting at the intersection.
    node_segments: Vec<Vec<usize>>,
}

impl RoadNetwork {
    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn node_id(&self, vi: usize, hi: usize) -> NodeId {
        hi * self.n_vertical + vi
    }

    pub fn node_position(&self, node: NodeId) -> (f64, f64) {
        let vi = node % self.n_vertical;
        let hi = node / self.n_vertical;
        (self.x_streets[vi], self.y_streets[hi])
    }

    /// Nodes at the two ends of a segment, in (start, end) order.
    pub fn segment_nodes(&self, seg: &Segment) -> (NodeId, NodeId) {
        match seg.axis {
            Axis::Vertical => (
                self.node_id(seg.street_index, seg.block_index),
                self.node_id(seg.street_index, seg.block_index + 1),
            ),
            Axis::Horizontal => (
                self.node_id(seg.block_index, seg.street_index),
                self.node_id(seg.block_index + 1, seg.street_index),
            ),
        }
    }

    pub fn segments_at_node(&self, node: NodeId) -> &[usize] {
        &self.node_segments[node]
    }

    /// Segments sharing a node with `seg`, excluding `seg` itself.
    pub fn adjacent_segments(&self, seg_id: usize) -> Vec<usize> {
        let seg = &self.segments[seg_id];
        let (a, b) = self.segment_nodes(seg);
        let mut out: Vec<usize> = self
            .segments_at_node(a)
            .iter()
            .chain(self.segments_at_node(b))
            .copied()
            .filter(|&s| s != seg_id)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Total length of street within an axis-aligned rectangle.
    pub fn street_length_in_rect(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
        let mut total = 0.0;
        for seg in &self.segments {
            let (lo, hi, cross_lo, cross_hi) = match seg.axis {
                Axis::Vertical => (y0, y1, x0, x1),
                Axis::Horizontal => (x0, x1, y0, y1),
            };
            if seg.cross_m < cross_lo || seg.cross_m > cross_hi {
                continue;
            }
            let overlap = seg.end_m.min(hi) - seg.start_m.max(lo);
            if overlap > 0.0 {
                total += overlap;
            }
        }
        total
    }
}

pub fn build_road_network(config: &ScenarioConfig) -> Result<RoadNetwork> {
    config.validate()?;
    let nv = config.n_vertical_streets;
    let nh = config.n_horizontal_streets;
    let x_streets: Vec<f64> = (0..nv)
        .map(|i| i as f64 * config.map_width_m / (nv - 1) as f64)
        .collect();
    let y_streets: Vec<f64> = (0..nh)
        .map(|i| i as f64 * config.map_height_m / (nh - 1) as f64)
        .collect();

    let mut segments = Vec::with_capacity(nv * (nh - 1) + nh * (nv - 1));
    for vi in 0..nv {
        for block in 0..nh - 1 {
            segments.push(Segment {
                segment_id: segments.len(),
                axis: Axis::Vertical,
                street_index: vi,
                block_index: block,
                cross_m: x_streets[vi],
                start_m: y_streets[block],
                end_m: y_streets[block + 1],
            });
        }
    }
    for hi in 0..nh {
        for block in 0..nv - 1 {
            segments.push(Segment {
                segment_id: segments.len(),
                axis: Axis::Horizontal,
                street_index: hi,
                block_index: block,
                cross_m: y_streets[hi],
                start_m: x_streets[block],
                end_m: x_streets[block + 1],
            });
        }
    }

    let mut node_segments = vec![Vec::new(); nv * nh];
    let mut net = RoadNetwork {
        segments,
        speed_limit_kmh: config.speed_limit_kmh,
        n_vertical: nv,
        n_horizontal: nh,
        x_streets,
        y_streets,
        node_segments: Vec::new(),
    };
    for seg in &net.segments {
        let (a, b) = net.segment_nodes(seg);
        node_segments[a].push(seg.segment_id);
        node_segments[b].push(seg.segment_id);
    }
    for list in &mut node_segments {
        list.sort_unstable();
    }
    net.node_segments = node_segments;
    Ok(net)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocialSpot {
    pub position: (f64, f64),
    pub mobility_radius_m: f64,
    pub n_tiers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VehicleRole {
    Regular,
    ProbeVehicle,
    FloatingCar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub vehicle_id: usize,
    pub home_spot: usize,
    pub segment_id: usize,
    /// Offset from the segment start, meters.
    pub offset_m: f64,
    /// +1 toward end_m, -1 toward start_m.
    pub direction: i8,
    pub speed_kmh: f64,
    pub role: VehicleRole,
}

impl VehicleState {
    pub fn position(&self, network: &RoadNetwork) -> (f64, f64) {
        network.segments[self.segment_id].point_at(self.offset_m)
    }

    /// Unit heading along the current segment.
    pub fn heading(&self, network: &RoadNetwork) -> (f64, f64) {
        let d = self.direction as f64;
        match network.segments[self.segment_id].axis {
            Axis::Vertical => (0.0, d),
            Axis::Horizontal => (d, 0.0),
        }
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Portion of a segment lying inside the disc around `center`, as an offset
/// interval from the segment start. None if the segment misses the disc.
fn segment_disc_interval(seg: &Segment, center: (f64, f64), radius: f64) -> Option<(f64, f64)> {
    let (c_along, c_cross) = match seg.axis {
        Axis::Vertical => (center.1, center.0),
        Axis::Horizontal => (center.0, center.1),
    };
    let dc = c_cross - seg.cross_m;
    let half = radius * radius - dc * dc;
    if half < 0.0 {
        return None;
    }
    let half = half.sqrt();
    let lo = (c_along - half).max(seg.start_m);
    let hi = (c_along + half).min(seg.end_m);
    if lo > hi {
        return None;
    }
    Some((lo - seg.start_m, hi - seg.start_m))
}

pub fn social_spots(config: &ScenarioConfig) -> Vec<SocialSpot> {
    config
        .social_spots
        .iter()
        .map(|&position| SocialSpot {
            position,
            mobility_radius_m: config.mobility_radius_m,
            n_tiers: config.n_tiers,
        })
        .collect()
}

/// Sample a radial distance around a spot so areal density decays as r^(-gamma).
/// The region is split into equal-width tiers; tier k is picked with probability
/// proportional to mid_radius^(-gamma) * tier_area, then the radius is drawn
/// area-uniformly inside the tier.
fn sample_radius<R: Rng>(spot: &SocialSpot, gamma: f64, rng: &mut R) -> f64 {
    let width = spot.mobility_radius_m / spot.n_tiers as f64;
    let weights: Vec<f64> = (0..spot.n_tiers)
        .map(|k| {
            let r_in = k as f64 * width;
            let r_out = r_in + width;
            let mid = 0.5 * (r_in + r_out);
            let area = std::f64::consts::PI * (r_out * r_out - r_in * r_in);
            mid.powf(-gamma) * area
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut pick = rng.gen::<f64>() * total;
    let mut tier = spot.n_tiers - 1;
    for (k, w) in weights.iter().enumerate() {
        if pick < *w {
            tier = k;
            break;
        }
        pick -= w;
    }
    let r_in = tier as f64 * width;
    let r_out = r_in + width;
    // area-uniform within the annulus
    let u = rng.gen::<f64>();
    (r_in * r_in + u * (r_out * r_out - r_in * r_in)).sqrt()
}

pub fn place_vehicles<R: Rng>(
    config: &ScenarioConfig,
    network: &RoadNetwork,
    rng: &mut R,
) -> Result<Vec<VehicleState>> {
    let spots = social_spots(config);
    if config.n_vehicles == 0 {
        return Ok(Vec::new());
    }
    for spot in &spots {
        let reachable = network
            .segments
            .iter()
            .any(|s| segment_disc_interval(s, spot.position, spot.mobility_radius_m).is_some());
        if !reachable {
            return Err(Error::Config(format!(
                "no road segment within {} m of social spot {:?}",
                spot.mobility_radius_m, spot.position
            )));
        }
    }

    let mut vehicles = Vec::with_capacity(config.n_vehicles);
    for vehicle_id in 0..config.n_vehicles {
        let home_spot = rng.gen_range(0..spots.len());
        let spot = &spots[home_spot];
        let r = sample_radius(spot, config.gamma, rng);
        let theta = rng.gen::<f64>() * std::f64::consts::TAU;
        let target = (
            spot.position.0 + r * theta.cos(),
            spot.position.1 + r * theta.sin(),
        );

        // snap to the closest street point that stays inside the region
        let mut best: Option<(f64, usize, f64)> = None;
        for seg in &network.segments {
            let Some((lo, hi)) = segment_disc_interval(seg, spot.position, spot.mobility_radius_m)
            else {
                continue;
            };
            let offset = seg.closest_offset(target).clamp(lo, hi);
            let d = dist(seg.point_at(offset), target);
            if best.map_or(true, |(bd, _, _)| d < bd) {
                best = Some((d, seg.segment_id, offset));
            }
        }
        let (_, segment_id, offset_m) = best.expect("reachability checked above");

        let role = if vehicle_id < config.n_probe_vehicles {
            VehicleRole::ProbeVehicle
        } else if vehicle_id < config.n_probe_vehicles + config.n_floating_cars {
            VehicleRole::FloatingCar
        } else {
            VehicleRole::Regular
        };
        let direction = if rng.gen::<bool>() { 1 } else { -1 };
        let speed_kmh = rng.gen::<f64>() * config.speed_limit_kmh;
        vehicles.push(VehicleState {
            vehicle_id,
            home_spot,
            segment_id,
            offset_m,
            direction,
            speed_kmh,
            role,
        });
    }
    Ok(vehicles)
}

/// Advance one vehicle by `dist_m` along the grid, turning randomly at
/// intersections among segments that keep it inside its mobility region.
pub fn advance_vehicle<R: Rng>(
    vehicle: &mut VehicleState,
    network: &RoadNetwork,
    home: (f64, f64),
    radius_m: f64,
    mut dist_m: f64,
    rng: &mut R,
) {
    // guard against pathological loops on degenerate geometry
    for _ in 0..64 {
        if dist_m <= 1e-9 {
            return;
        }
        let seg = &network.segments[vehicle.segment_id];
        let (lo, hi) = segment_disc_interval(seg, home, radius_m)
            .unwrap_or((vehicle.offset_m, vehicle.offset_m));
        let limit = if vehicle.direction > 0 {
            hi - vehicle.offset_m
        } else {
            vehicle.offset_m - lo
        };
        if dist_m < limit {
            vehicle.offset_m += vehicle.direction as f64 * dist_m;
            return;
        }
        vehicle.offset_m += vehicle.direction as f64 * limit;
        dist_m -= limit;

        // at the end of the allowed stretch: either a node inside the region
        // (turn) or the region boundary mid-segment (reverse)
        let at_end = vehicle.direction > 0 && (seg.length_m() - vehicle.offset_m).abs() < 1e-9;
        let at_start = vehicle.direction < 0 && vehicle.offset_m.abs() < 1e-9;
        if !(at_end || at_start) {
            vehicle.direction = -vehicle.direction;
            continue;
        }
        let (start_node, end_node) = network.segment_nodes(seg);
        let node = if at_end { end_node } else { start_node };
        let node_pos = network.node_position(node);

        // candidate segments: leave this node, far endpoint still inside
        let mut candidates: Vec<(usize, i8)> = Vec::new();
        for &next_id in network.segments_at_node(node) {
            if next_id == vehicle.segment_id {
                continue;
            }
            let next = &network.segments[next_id];
            let (a, b) = next.endpoints();
            let (far, direction) = if dist(a, node_pos) < 1e-6 {
                (b, 1)
            } else {
                (a, -1)
            };
            if dist(far, home) <= radius_m + 1e-9 {
                candidates.push((next_id, direction));
            }
        }
        if candidates.is_empty() {
            vehicle.direction = -vehicle.direction;
            continue;
        }
        let (next_id, direction) = candidates[rng.gen_range(0..candidates.len())];
        let next = &network.segments[next_id];
        vehicle.segment_id = next_id;
        vehicle.direction = direction;
        vehicle.offset_m = if direction > 0 { 0.0 } else { next.length_m() };
    }
}

/// Advance all vehicles by one duty cycle. Speeds are resampled uniformly in
/// [0, speed_limit] each step. Floating cars with a planned segment for this
/// step are teleported to that segment's midpoint instead of moving randomly.
pub fn step_mobility<R: Rng>(
    vehicles: &mut [VehicleState],
    network: &RoadNetwork,
    spots: &[SocialSpot],
    dt_s: f64,
    fc_segments: Option<&std::collections::HashMap<usize, usize>>,
    rng: &mut R,
) {
    assert!(dt_s > 0.0, "dt_s must be > 0");
    for vehicle in vehicles.iter_mut() {
        vehicle.speed_kmh = rng.gen::<f64>() * network.speed_limit_kmh;
        if vehicle.role == VehicleRole::FloatingCar {
            if let Some(plan) = fc_segments.and_then(|m| m.get(&vehicle.vehicle_id)) {
                let seg = &network.segments[*plan];
                vehicle.segment_id = *plan;
                vehicle.offset_m = 0.5 * seg.length_m();
                vehicle.direction = 1;
                continue;
            }
        }
        let spot = &spots[vehicle.home_spot];
        let dist_m = vehicle.speed_kmh / 3.6 * dt_s;
        advance_vehicle(
            vehicle,
            network,
            spot.position,
            spot.mobility_radius_m,
            dist_m,
            rng,
        );
    }
}
