//! Analytic hierarchy process: priority vectors from pairwise comparison
//! matrices, consistency checking, and the per-cell network recommendation map.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RECIPROCITY_TOL: f64 = 1e-9;
const POWER_ITERATION_TOL: f64 = 1e-12;
const POWER_ITERATION_MAX: usize = 10_000;

/// Saaty random consistency indices for n = 1..=9.
const RANDOM_INDEX: [f64; 10] = [0.0, 0.0, 0.0, 0.58, 0.90, 1.12, 1.24, 1.32, 1.41, 1.45];

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonMatrix {
    entries: DMatrix<f64>,
}

impl ComparisonMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::ComparisonMatrix("matrix must be square and non-empty".into()));
        }
        let n = entries.nrows();
        for i in 0..n {
            if (entries[(i, i)] - 1.0).abs() > RECIPROCITY_TOL {
                return Err(Error::ComparisonMatrix(format!("diagonal entry ({i},{i}) != 1")));
            }
            for j in 0..n {
                let a = entries[(i, j)];
                if !(a > 0.0) {
                    return Err(Error::ComparisonMatrix(format!(
                        "entry ({i},{j}) = {a} is not positive"
                    )));
                }
                if (a * entries[(j, i)] - 1.0).abs() > RECIPROCITY_TOL * a.max(1.0) {
                    return Err(Error::ComparisonMatrix(format!(
                        "entries ({i},{j}) and ({j},{i}) are not reciprocal"
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::ComparisonMatrix("ragged rows".into()));
        }
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(m)
    }

    /// 2x2 judgment: `a` is the importance of the first alternative over the
    /// second on the 1-9 scale (values below 1 favor the second).
    pub fn pairwise(a: f64) -> Self {
        Self {
            entries: DMatrix::from_row_slice(2, 2, &[1.0, a, 1.0 / a, 1.0]),
        }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityVector {
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub lambda_max: f64,
    pub ci: f64,
    pub ri: f64,
    pub cr: f64,
    pub acceptable: bool,
}

/// Principal eigenvector by power iteration, normalized to sum 1.
fn principal_eigenpair(m: &DMatrix<f64>) -> (DVector<f64>, f64) {
    let n = m.nrows();
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    let mut lambda = n as f64;
    for _ in 0..POWER_ITERATION_MAX {
        let next = m * &v;
        let sum = next.sum();
        let normalized = &next / sum;
        // with v normalized to sum 1, sum(A v) is the Rayleigh estimate
        lambda = sum;
        let change = (&normalized - &v).amax();
        v = normalized;
        if change < POWER_ITERATION_TOL {
            break;
        }
    }
    (v, lambda)
}

pub fn priority_vector(m: &ComparisonMatrix) -> PriorityVector {
    let (v, _) = principal_eigenpair(m.entries());
    PriorityVector {
        weights: v.iter().copied().collect(),
    }
}

pub fn consistency(m: &ComparisonMatrix) -> Result<ConsistencyReport> {
    let n = m.n();
    if n > 9 {
        return Err(Error::UnsupportedDimension(n));
    }
    let (_, lambda_max) = principal_eigenpair(m.entries());
    if n <= 2 {
        return Ok(ConsistencyReport {
            lambda_max,
            ci: 0.0,
            ri: RANDOM_INDEX[n],
            cr: 0.0,
            acceptable: true,
        });
    }
    let ci = (lambda_max - n as f64) / (n as f64 - 1.0);
    let ri = RANDOM_INDEX[n];
    let cr = ci / ri;
    Ok(ConsistencyReport {
        lambda_max,
        ci,
        ri,
        cr,
        acceptable: cr < 0.1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    TrafficDensity,
    Bandwidth,
    Delay,
    Cost,
}

pub const CRITERIA: [Criterion; 4] = [
    Criterion::TrafficDensity,
    Criterion::Bandwidth,
    Criterion::Delay,
    Criterion::Cost,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NetworkChoice {
    Cellular,
    Vanet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellState {
    /// Vehicles per meter of street within the cell.
    pub vehicle_density: f64,
    pub rsu_coverage: bool,
    /// Fraction of the serving eNB capacity in use, informational.
    pub cell_load: f64,
}

/// Density bands (vehicles/m) and the VANET-favoring judgment per band.
const DENSITY_BANDS: [(f64, f64); 4] = [(0.01, 3.0), (0.02, 5.0), (0.04, 7.0), (0.06, 9.0)];

/// Fixed 2x2 judgment over (Cellular, VANET) per criterion. Without RSU
/// coverage VANET is not a real alternative and cellular dominates at 9.
pub fn score_alternatives(cell: &CellState, criterion: Criterion) -> ComparisonMatrix {
    assert!(cell.vehicle_density >= 0.0, "density must be >= 0");
    if !cell.rsu_coverage {
        return ComparisonMatrix::pairwise(9.0);
    }
    let judgment_vs_cellular = match criterion {
        Criterion::TrafficDensity => {
            let mut value = 1.0;
            for &(threshold, band_value) in &DENSITY_BANDS {
                if cell.vehicle_density > threshold {
                    value = band_value;
                }
            }
            value
        }
        Criterion::Bandwidth => 5.0,
        Criterion::Delay => 1.0 / 5.0,
        Criterion::Cost => 7.0,
    };
    // pairwise() takes the first alternative (Cellular) over the second
    ComparisonMatrix::pairwise(1.0 / judgment_vs_cellular)
}

/// Weighted synthesis of per-criterion alternative priorities, normalized
/// over the alternatives.
pub fn synthesize(
    criteria_weights: &PriorityVector,
    alternative_priorities: &[PriorityVector],
) -> Result<Vec<f64>> {
    if criteria_weights.weights.len() != alternative_priorities.len() {
        return Err(Error::Dimension(format!(
            "{} criteria weights vs {} alternative vectors",
            criteria_weights.weights.len(),
            alternative_priorities.len()
        )));
    }
    let n_alt = alternative_priorities
        .first()
        .map(|p| p.weights.len())
        .unwrap_or(0);
    if alternative_priorities.iter().any(|p| p.weights.len() != n_alt) {
        return Err(Error::Dimension("inconsistent alternative dimensions".into()));
    }
    let mut index = vec![0.0; n_alt];
    for (w, alt) in criteria_weights.weights.iter().zip(alternative_priorities) {
        for (slot, p) in index.iter_mut().zip(&alt.weights) {
            *slot += w * p;
        }
    }
    let total: f64 = index.iter().sum();
    if total > 0.0 {
        for slot in index.iter_mut() {
            *slot /= total;
        }
    }
    Ok(index)
}

/// Paper judgments for the two service types (traffic density, bandwidth,
/// delay, cost rows).
pub fn voice_criteria_matrix() -> ComparisonMatrix {
    ComparisonMatrix::from_rows(&[
        vec![1.0, 5.0, 3.0, 7.0],
        vec![1.0 / 5.0, 1.0, 1.0 / 3.0, 5.0],
        vec![1.0 / 3.0, 3.0, 1.0, 5.0],
        vec![1.0 / 7.0, 1.0 / 5.0, 1.0 / 5.0, 1.0],
    ])
    .expect("voice matrix is reciprocal")
}

pub fn video_criteria_matrix() -> ComparisonMatrix {
    ComparisonMatrix::from_rows(&[
        vec![1.0, 1.0 / 7.0, 1.0 / 5.0, 1.0 / 3.0],
        vec![7.0, 1.0, 3.0, 5.0],
        vec![5.0, 1.0 / 3.0, 1.0, 3.0],
        vec![3.0, 1.0 / 5.0, 1.0 / 3.0, 1.0],
    ])
    .expect("video matrix is reciprocal")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Service {
    Voice,
    Video,
}

pub const SERVICES: [Service; 2] = [Service::Voice, Service::Video];

pub fn criteria_matrix(service: Service) -> ComparisonMatrix {
    match service {
        Service::Voice => voice_criteria_matrix(),
        Service::Video => video_criteria_matrix(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecommendation {
    pub cell_x: usize,
    pub cell_y: usize,
    /// Cell center, meters.
    pub center: (f64, f64),
    pub state: CellStateSnapshot,
    /// (cellular index, vanet index), normalized to sum 1.
    pub indices: [f64; 2],
    pub argmax: NetworkChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStateSnapshot {
    pub vehicle_density: f64,
    pub rsu_coverage: bool,
    pub cell_load: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationMap {
    pub service: Service,
    pub cell_size_m: f64,
    pub n_cells_x: usize,
    pub n_cells_y: usize,
    pub cells: Vec<CellRecommendation>,
}

impl RecommendationMap {
    pub fn cell_at(&self, x_m: f64, y_m: f64) -> Option<&CellRecommendation> {
        let cx = (x_m / self.cell_size_m) as usize;
        let cy = (y_m / self.cell_size_m) as usize;
        if cx >= self.n_cells_x || cy >= self.n_cells_y {
            return None;
        }
        self.cells.get(cy * self.n_cells_x + cx)
    }
}

/// Compute the recommendation for one cell state and service.
pub fn recommend_cell(cell: &CellState, service: Service) -> Result<([f64; 2], NetworkChoice)> {
    let weights = priority_vector(&criteria_matrix(service));
    let alternatives: Vec<PriorityVector> = CRITERIA
        .iter()
        .map(|&c| priority_vector(&score_alternatives(cell, c)))
        .collect();
    let index = synthesize(&weights, &alternatives)?;
    let argmax = if index[0] >= index[1] {
        NetworkChoice::Cellular
    } else {
        NetworkChoice::Vanet
    };
    Ok(([index[0], index[1]], argmax))
}

/// Build a full map over cells of `cell_size_m`, from per-cell densities and
/// RSU coverage supplied by the caller.
pub fn recommendation_map(
    service: Service,
    cell_size_m: f64,
    n_cells_x: usize,
    n_cells_y: usize,
    cell_states: &[CellState],
) -> Result<RecommendationMap> {
    if cell_states.len() != n_cells_x * n_cells_y {
        return Err(Error::Dimension(format!(
            "{} cell states for a {}x{} grid",
            cell_states.len(),
            n_cells_x,
            n_cells_y
        )));
    }
    let mut cells = Vec::with_capacity(cell_states.len());
    for cy in 0..n_cells_y {
        for cx in 0..n_cells_x {
            let state = &cell_states[cy * n_cells_x + cx];
            let (indices, argmax) = recommend_cell(state, service)?;
            cells.push(CellRecommendation {
                cell_x: cx,
                cell_y: cy,
                center: (
                    (cx as f64 + 0.5) * cell_size_m,
                    (cy as f64 + 0.5) * cell_size_m,
                ),
                state: CellStateSnapshot {
                    vehicle_density: state.vehicle_density,
                    rsu_coverage: state.rsu_coverage,
                    cell_load: state.cell_load,
                },
                indices,
                argmax,
            });
        }
    }
    Ok(RecommendationMap {
        service,
        cell_size_m,
        n_cells_x,
        n_cells_y,
        cells,
    })
}

/// CSV export: `cell_x,cell_y,service,network,index,argmax`.
pub fn recommendation_map_to_csv(maps: &[RecommendationMap]) -> String {
    let mut out = String::from("cell_x,cell_y,service,network,index,argmax\n");
    for map in maps {
        let service = match map.service {
            Service::Voice => "voice",
            Service::Video => "video",
        };
        for cell in &map.cells {
            for (network, index) in [("cellular", cell.indices[0]), ("vanet", cell.indices[1])] {
                let argmax = match cell.argmax {
                    NetworkChoice::Cellular => "cellular",
                    NetworkChoice::Vanet => "vanet",
                };
                out.push_str(&format!(
                    "{},{},{},{},{:.6},{}\n",
                    cell.cell_x, cell.cell_y, service, network, index, argmax
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (a, e) in actual.iter().zip(expected) {
            assert!((a - e).abs() <= tol, "{actual:?} vs {expected:?}");
        }
    }

    #[test]
    fn voice_priorities_match_published_values() {
        let w = priority_vector(&voice_criteria_matrix());
        assert_close(&w.weights, &[0.5558, 0.1364, 0.2589, 0.0489], 0.01);
    }

    #[test]
    fn video_priorities_match_published_values() {
        let w = priority_vector(&video_criteria_matrix());
        assert_close(&w.weights, &[0.0553, 0.5650, 0.2622, 0.1175], 0.01);
    }

    #[test]
    fn all_ones_matrix_gives_uniform_weights() {
        let m = ComparisonMatrix::from_rows(&[
            vec![1.0, 1.0, 1.0],
            vec![1.0, 1.0, 1.0],
            vec![1.0, 1.0, 1.0],
        ])
        .unwrap();
        let w = priority_vector(&m);
        assert_close(&w.weights, &[1.0 / 3.0; 3], 1e-12);
    }

    #[test]
    fn weights_sum_to_one() {
        let w = priority_vector(&voice_criteria_matrix());
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_reciprocal_matrix() {
        let m = ComparisonMatrix::from_rows(&[vec![1.0, 2.0], vec![0.4, 1.0]]);
        assert!(m.is_err());
    }

    #[test]
    fn rejects_non_positive_matrix() {
        let m = ComparisonMatrix::from_rows(&[vec![1.0, -2.0], vec![-0.5, 1.0]]);
        assert!(m.is_err());
    }

    #[test]
    fn consistent_matrix_has_zero_cr() {
        let w = [0.6, 0.3, 0.1];
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| w[i] / w[j]).collect())
            .collect();
        let m = ComparisonMatrix::from_rows(&rows).unwrap();
        let report = consistency(&m).unwrap();
        assert!(report.cr.abs() < 1e-9);
        assert!(report.acceptable);
        let priorities = priority_vector(&m);
        assert_close(&priorities.weights, &w, 1e-9);
    }

    #[test]
    fn voice_matrix_is_acceptably_consistent() {
        let report = consistency(&voice_criteria_matrix()).unwrap();
        assert!(report.cr < 0.1, "cr = {}", report.cr);
        assert!(report.acceptable);
    }

    #[test]
    fn intransitive_matrix_is_rejected_by_cr() {
        let m = ComparisonMatrix::from_rows(&[
            vec![1.0, 9.0, 1.0 / 9.0],
            vec![1.0 / 9.0, 1.0, 9.0],
            vec![9.0, 1.0 / 9.0, 1.0],
        ])
        .unwrap();
        let report = consistency(&m).unwrap();
        assert!(report.cr > 0.1, "cr = {}", report.cr);
        assert!(!report.acceptable);
    }

    #[test]
    fn dimension_above_nine_is_unsupported() {
        let n = 10;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0; n]).collect();
        let m = ComparisonMatrix::from_rows(&rows).unwrap();
        assert!(matches!(consistency(&m), Err(Error::UnsupportedDimension(10))));
    }

    #[test]
    fn two_by_two_is_always_consistent() {
        for a in [1.0, 3.0, 9.0, 0.2] {
            let report = consistency(&ComparisonMatrix::pairwise(a)).unwrap();
            assert_eq!(report.cr, 0.0);
            assert!(report.acceptable);
        }
    }

    #[test]
    fn no_rsu_coverage_is_cellular_dominant() {
        let cell = CellState {
            vehicle_density: 0.05,
            rsu_coverage: false,
            cell_load: 0.5,
        };
        for c in CRITERIA {
            let m = score_alternatives(&cell, c);
            assert_eq!(m.entries()[(0, 1)], 9.0);
        }
    }

    #[test]
    fn zero_density_with_rsu_is_balanced_on_density() {
        let cell = CellState {
            vehicle_density: 0.0,
            rsu_coverage: true,
            cell_load: 0.0,
        };
        let m = score_alternatives(&cell, Criterion::TrafficDensity);
        assert_eq!(m.entries()[(0, 1)], 1.0);
    }

    #[test]
    fn density_bands_raise_the_vanet_judgment() {
        let judge = |density| {
            let cell = CellState {
                vehicle_density: density,
                rsu_coverage: true,
                cell_load: 0.0,
            };
            let m = score_alternatives(&cell, Criterion::TrafficDensity);
            m.entries()[(1, 0)]
        };
        assert_eq!(judge(0.005), 1.0);
        assert_eq!(judge(0.015), 3.0);
        assert_eq!(judge(0.03), 5.0);
        assert_eq!(judge(0.05), 7.0);
        assert_eq!(judge(0.08), 9.0);
    }

    #[test]
    fn synthesize_uniform_weights() {
        let weights = PriorityVector {
            weights: vec![0.25; 4],
        };
        let alts: Vec<PriorityVector> = (0..4)
            .map(|_| PriorityVector {
                weights: vec![0.8, 0.2],
            })
            .collect();
        let index = synthesize(&weights, &alts).unwrap();
        assert_close(&index, &[0.8, 0.2], 1e-12);
    }

    #[test]
    fn synthesize_single_active_criterion() {
        let weights = PriorityVector {
            weights: vec![1.0, 0.0],
        };
        let alts = vec![
            PriorityVector {
                weights: vec![0.7, 0.3],
            },
            PriorityVector {
                weights: vec![0.1, 0.9],
            },
        ];
        let index = synthesize(&weights, &alts).unwrap();
        assert_close(&index, &[0.7, 0.3], 1e-12);
    }

    #[test]
    fn recommendation_indices_sum_to_one() {
        let cell = CellState {
            vehicle_density: 0.05,
            rsu_coverage: true,
            cell_load: 0.7,
        };
        for service in SERVICES {
            let (indices, _) = recommend_cell(&cell, service).unwrap();
            assert!((indices[0] + indices[1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_cell_without_rsu_recommends_cellular() {
        let cell = CellState {
            vehicle_density: 0.0,
            rsu_coverage: false,
            cell_load: 0.0,
        };
        for service in SERVICES {
            let (_, argmax) = recommend_cell(&cell, service).unwrap();
            assert_eq!(argmax, NetworkChoice::Cellular);
        }
    }

    #[test]
    fn video_with_rsu_prefers_vanet() {
        let cell = CellState {
            vehicle_density: 0.03,
            rsu_coverage: true,
            cell_load: 0.8,
        };
        let (_, argmax) = recommend_cell(&cell, Service::Video).unwrap();
        assert_eq!(argmax, NetworkChoice::Vanet);
    }
}
