//! Traffic estimation: temporal-continuity initialization followed by
//! fixed-rank alternating least squares on the observed entries.

use nalgebra::{DMatrix, DVector};

use crate::config::CompletionParams;
use crate::error::Result;
use crate::sensing::TrafficMatrix;

const RIDGE: f64 = 1e-6;
/// Guard divisor for relative errors at near-zero speeds, km/h.
const RELATIVE_ERROR_GUARD_KMH: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct CompletionResult {
    /// Full estimate, clamped to [0, speed_limit].
    pub estimate: DMatrix<f64>,
    /// The raw rank-limited product before clamping.
    pub low_rank_estimate: DMatrix<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Relative Frobenius error on the observed entries.
    pub fit_residual: f64,
    /// Set when the input had no observations at all.
    pub empty_input: bool,
}

/// Fill unobserved entries: linear interpolation in time within each row,
/// nearest-value fill at the edges, column means for fully empty rows, and a
/// clamp to [0, speed_limit]. Returns the filled matrix and an all-empty flag.
pub fn initialize_missing(matrix: &TrafficMatrix, speed_limit: f64) -> (DMatrix<f64>, bool) {
    let (n, t) = (matrix.n_segments(), matrix.n_cycles());
    let mut filled = DMatrix::zeros(n, t);

    if matrix.observation_count() == 0 {
        filled.fill(speed_limit / 2.0);
        return (filled, true);
    }

    let mut global_sum = 0.0;
    let mut global_count = 0usize;
    for i in 0..n {
        for j in 0..t {
            if let Some(v) = matrix.get(i, j) {
                global_sum += v;
                global_count += 1;
            }
        }
    }
    let global_mean = global_sum / global_count as f64;

    let mut col_mean = vec![f64::NAN; t];
    for (j, mean) in col_mean.iter_mut().enumerate() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            if let Some(v) = matrix.get(i, j) {
                sum += v;
                count += 1;
            }
        }
        if count > 0 {
            *mean = sum / count as f64;
        }
    }

    for i in 0..n {
        let observed: Vec<(usize, f64)> = (0..t).filter_map(|j| matrix.get(i, j).map(|v| (j, v))).collect();
        if observed.is_empty() {
            for j in 0..t {
                let m = col_mean[j];
                filled[(i, j)] = if m.is_nan() { global_mean } else { m };
            }
            continue;
        }
        for j in 0..t {
            let value = match observed.binary_search_by_key(&j, |&(c, _)| c) {
                Ok(k) => observed[k].1,
                Err(k) => {
                    if k == 0 {
                        observed[0].1
                    } else if k == observed.len() {
                        observed[k - 1].1
                    } else {
                        let (j0, v0) = observed[k - 1];
                        let (j1, v1) = observed[k];
                        let w = (j - j0) as f64 / (j1 - j0) as f64;
                        v0 + w * (v1 - v0)
                    }
                }
            };
            filled[(i, j)] = value;
        }
    }

    filled.apply(|v| *v = v.clamp(0.0, speed_limit));
    (filled, false)
}

/// Rank-`k` truncated SVD factors (U*sqrt(S), V*sqrt(S)).
fn truncated_factors(m: &DMatrix<f64>, rank: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let k = rank.min(svd.singular_values.len());
    let mut left = DMatrix::zeros(m.nrows(), rank);
    let mut right = DMatrix::zeros(m.ncols(), rank);
    for r in 0..k {
        let s = svd.singular_values[r].max(0.0).sqrt();
        for i in 0..m.nrows() {
            left[(i, r)] = u[(i, r)] * s;
        }
        for j in 0..m.ncols() {
            right[(j, r)] = vt[(r, j)] * s;
        }
    }
    (left, right)
}

/// Solve (G + ridge*I) x = b for a small symmetric positive system.
fn ridge_solve(mut gram: DMatrix<f64>, rhs: DVector<f64>) -> DVector<f64> {
    let k = gram.nrows();
    for d in 0..k {
        gram[(d, d)] += RIDGE;
    }
    gram.cholesky()
        .map(|c| c.solve(&rhs))
        .unwrap_or_else(|| DVector::zeros(k))
}

/// Alternating least squares on the observed entries, initialized from the
/// truncated SVD of the temporally interpolated matrix.
pub fn complete_matrix(
    matrix: &TrafficMatrix,
    params: &CompletionParams,
    speed_limit: f64,
) -> Result<CompletionResult> {
    params.validate(matrix.n_segments(), matrix.n_cycles())?;
    let (n, t) = (matrix.n_segments(), matrix.n_cycles());
    let (initial, empty_input) = initialize_missing(matrix, speed_limit);
    let k = params.target_rank;
    let (mut u, mut v) = truncated_factors(&initial, k);

    let row_obs: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| (0..t).filter_map(|j| matrix.get(i, j).map(|x| (j, x))).collect())
        .collect();
    let col_obs: Vec<Vec<(usize, f64)>> = (0..t)
        .map(|j| (0..n).filter_map(|i| matrix.get(i, j).map(|x| (i, x))).collect())
        .collect();

    let mut estimate = &u * v.transpose();
    let mut converged = false;
    let mut iterations_used = 0;
    for iter in 0..params.max_iterations {
        iterations_used = iter + 1;
        for (i, obs) in row_obs.iter().enumerate() {
            if obs.is_empty() {
                continue;
            }
            let mut gram = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for &(j, x) in obs {
                let vj = v.row(j);
                for a in 0..k {
                    rhs[a] += vj[a] * x;
                    for b in 0..k {
                        gram[(a, b)] += vj[a] * vj[b];
                    }
                }
            }
            let sol = ridge_solve(gram, rhs);
            for a in 0..k {
                u[(i, a)] = sol[a];
            }
        }
        for (j, obs) in col_obs.iter().enumerate() {
            if obs.is_empty() {
                continue;
            }
            let mut gram = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for &(i, x) in obs {
                let ui = u.row(i);
                for a in 0..k {
                    rhs[a] += ui[a] * x;
                    for b in 0..k {
                        gram[(a, b)] += ui[a] * ui[b];
                    }
                }
            }
            let sol = ridge_solve(gram, rhs);
            for a in 0..k {
                v[(j, a)] = sol[a];
            }
        }

        let next = &u * v.transpose();
        let denom = estimate.norm().max(1e-12);
        let change = (&next - &estimate).norm() / denom;
        estimate = next;
        if change < params.convergence_tol {
            converged = true;
            break;
        }
    }

    let mut obs_err = 0.0;
    let mut obs_norm = 0.0;
    for i in 0..n {
        for j in 0..t {
            if let Some(x) = matrix.get(i, j) {
                obs_err += (estimate[(i, j)] - x).powi(2);
                obs_norm += x * x;
            }
        }
    }
    let fit_residual = if obs_norm > 0.0 {
        (obs_err / obs_norm).sqrt()
    } else {
        0.0
    };

    let low_rank_estimate = estimate.clone();
    estimate.apply(|x| *x = x.clamp(0.0, speed_limit));
    Ok(CompletionResult {
        estimate,
        low_rank_estimate,
        iterations_used,
        converged,
        fit_residual,
        empty_input,
    })
}

/// Mean absolute relative error over the unobserved entries.
pub fn estimation_error(
    estimate: &DMatrix<f64>,
    ground_truth: &DMatrix<f64>,
    observed: impl Fn(usize, usize) -> bool,
) -> f64 {
    assert_eq!(estimate.shape(), ground_truth.shape(), "shape mismatch");
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..estimate.nrows() {
        for j in 0..estimate.ncols() {
            if observed(i, j) {
                continue;
            }
            let truth = ground_truth[(i, j)];
            sum += (estimate[(i, j)] - truth).abs() / truth.max(RELATIVE_ERROR_GUARD_KMH);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row_matrix(values: &[Option<f64>]) -> TrafficMatrix {
        let mut m = TrafficMatrix::new(1, values.len());
        for (j, v) in values.iter().enumerate() {
            if let Some(x) = v {
                m.set(0, j, *x);
            }
        }
        m
    }

    #[test]
    fn interpolates_interior_gap() {
        let m = row_matrix(&[Some(20.0), None, Some(40.0)]);
        let (filled, empty) = initialize_missing(&m, 80.0);
        assert!(!empty);
        assert_eq!(filled[(0, 1)], 30.0);
    }

    #[test]
    fn edge_gaps_take_nearest_value() {
        let m = row_matrix(&[None, None, Some(50.0)]);
        let (filled, _) = initialize_missing(&m, 80.0);
        assert_eq!(filled[(0, 0)], 50.0);
        assert_eq!(filled[(0, 1)], 50.0);
    }

    #[test]
    fn fill_is_clamped_to_speed_limit() {
        let m = row_matrix(&[Some(90.0), None, Some(90.0)]);
        let (filled, _) = initialize_missing(&m, 80.0);
        assert_eq!(filled[(0, 1)], 80.0);
    }

    #[test]
    fn empty_row_uses_column_mean() {
        let mut m = TrafficMatrix::new(3, 2);
        m.set(0, 0, 20.0);
        m.set(1, 0, 40.0);
        let (filled, _) = initialize_missing(&m, 80.0);
        assert_eq!(filled[(2, 0)], 30.0);
        // column 1 is empty: global mean
        assert_eq!(filled[(2, 1)], 30.0);
    }

    #[test]
    fn all_empty_matrix_fills_half_limit_with_flag() {
        let m = TrafficMatrix::new(3, 4);
        let (filled, empty) = initialize_missing(&m, 80.0);
        assert!(empty);
        assert!(filled.iter().all(|&v| v == 40.0));
    }

    fn synthetic_low_rank(n: usize, t: usize, rank: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, rank, |_, _| rng.gen::<f64>());
        let b = DMatrix::from_fn(t, rank, |_, _| rng.gen::<f64>());
        // multiplicative scaling keeps the exact rank while staying inside a
        // plausible speed range below the limit
        let mut x = a * b.transpose();
        let max = x.iter().cloned().fold(f64::MIN, f64::max);
        x.apply(|v| *v = *v / max * 60.0);
        x
    }

    fn sample(truth: &DMatrix<f64>, rate: f64, seed: u64) -> TrafficMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = TrafficMatrix::new(truth.nrows(), truth.ncols());
        for i in 0..truth.nrows() {
            for j in 0..truth.ncols() {
                if rng.gen::<f64>() < rate {
                    m.set(i, j, truth[(i, j)]);
                }
            }
        }
        m
    }

    #[test]
    fn recovers_rank2_matrix_from_30_percent() {
        let truth = synthetic_low_rank(100, 96, 2, 42);
        let observed = sample(&truth, 0.3, 43);
        let params = CompletionParams {
            target_rank: 2,
            ..CompletionParams::default()
        };
        let result = complete_matrix(&observed, &params, 80.0).unwrap();
        let mut err = 0.0;
        let mut norm = 0.0;
        for i in 0..100 {
            for j in 0..96 {
                if !observed.observed(i, j) {
                    err += (result.estimate[(i, j)] - truth[(i, j)]).powi(2);
                    norm += truth[(i, j)].powi(2);
                }
            }
        }
        let rel = (err / norm).sqrt();
        assert!(rel < 0.05, "relative error {rel}");
    }

    #[test]
    fn fully_observed_matrix_is_reproduced() {
        let truth = synthetic_low_rank(40, 30, 3, 7);
        let observed = sample(&truth, 1.1, 8);
        let params = CompletionParams {
            target_rank: 3,
            convergence_tol: 1e-9,
            ..CompletionParams::default()
        };
        let result = complete_matrix(&observed, &params, 80.0).unwrap();
        assert!(result.fit_residual < 1e-6, "residual {}", result.fit_residual);
    }

    #[test]
    fn observed_fit_not_worse_than_truncated_svd() {
        let truth = synthetic_low_rank(40, 30, 5, 17);
        let observed = sample(&truth, 1.1, 8); // fully observed
        let params = CompletionParams {
            target_rank: 3,
            convergence_tol: 1e-10,
            max_iterations: 500,
            ..CompletionParams::default()
        };
        let result = complete_matrix(&observed, &params, 80.0).unwrap();
        // SVD oracle: best rank-3 approximation of the full matrix
        let (u, v) = truncated_factors(&truth, 3);
        let approx = &u * v.transpose();
        let svd_residual = (&approx - &truth).norm() / truth.norm();
        assert!(
            result.fit_residual <= svd_residual + params.convergence_tol * 10.0,
            "als {} vs svd {}",
            result.fit_residual,
            svd_residual
        );
    }

    #[test]
    fn estimate_has_numerical_rank_at_most_target() {
        let truth = synthetic_low_rank(50, 40, 6, 3);
        let observed = sample(&truth, 0.5, 4);
        let params = CompletionParams {
            target_rank: 4,
            ..CompletionParams::default()
        };
        let result = complete_matrix(&observed, &params, 80.0).unwrap();
        let svd = result.low_rank_estimate.svd(false, false);
        let top = svd.singular_values[0];
        for r in 4..svd.singular_values.len() {
            assert!(svd.singular_values[r] < 1e-8 * top);
        }
    }

    #[test]
    fn outputs_stay_within_speed_bounds() {
        let truth = synthetic_low_rank(30, 20, 2, 5);
        let observed = sample(&truth, 0.2, 6);
        let result = complete_matrix(&observed, &CompletionParams::default(), 50.0).unwrap();
        assert!(result.estimate.iter().all(|&v| (0.0..=50.0).contains(&v)));
    }

    #[test]
    fn completion_is_deterministic() {
        let truth = synthetic_low_rank(30, 20, 2, 5);
        let observed = sample(&truth, 0.3, 6);
        let a = complete_matrix(&observed, &CompletionParams::default(), 80.0).unwrap();
        let b = complete_matrix(&observed, &CompletionParams::default(), 80.0).unwrap();
        assert_eq!(a.estimate, b.estimate);
    }

    #[test]
    fn estimation_error_basics() {
        let truth = DMatrix::from_element(4, 4, 20.0);
        assert_eq!(estimation_error(&truth, &truth, |_, _| false), 0.0);
        let scaled = &truth * 1.1;
        let err = estimation_error(&scaled, &truth, |_, _| false);
        assert!((err - 0.1).abs() < 1e-9);
        // no unobserved entries
        assert_eq!(estimation_error(&scaled, &truth, |_, _| true), 0.0);
    }

    #[test]
    fn error_decreases_with_sample_rate() {
        let rates = [0.1, 0.2, 0.3, 0.4, 0.5];
        let mut means = Vec::new();
        for &rate in &rates {
            let mut total = 0.0;
            for seed in 0..10u64 {
                let truth = synthetic_low_rank(60, 48, 4, 100 + seed);
                let observed = sample(&truth, rate, 200 + seed);
                let result = complete_matrix(&observed, &CompletionParams::default(), 80.0).unwrap();
                total += estimation_error(&result.estimate, &truth, |i, j| observed.observed(i, j));
            }
            means.push(total / 10.0);
        }
        let rho = crate::stats::spearman(&rates, &means);
        assert!(rho < -0.8, "spearman {rho}, means {means:?}");
    }
}
