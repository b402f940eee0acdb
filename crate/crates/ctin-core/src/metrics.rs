//! Trajectory reconstruction from predicted velocity and the evaluation
//! metric suite: ATE, T-RTE, D-RTE, PDE, plus empirical CDF export.
//!
//! All metrics compare horizontal (x, y) positions — the regression target is
//! 2D velocity and the benchmarks evaluate planar trajectories.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::Tensor;
use crate::baselines::Trajectory;
use crate::geometry::Vec3;

/// Which norm goes inside the RMSE.
///
/// `Squared` is the conventional root-mean-squared-error; `Unsquared` takes
/// the error norms to the first power inside the mean (kept switchable for
/// sensitivity checks, some formulations print it that way).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum RmseNorm {
    #[default]
    Squared,
    Unsquared,
}

impl RmseNorm {
    fn reduce(self, sq_norms: impl Iterator<Item = f64>) -> f64 {
        let mut n = 0usize;
        let mut acc = 0.0;
        for s in sq_norms {
            acc += match self {
                RmseNorm::Squared => s,
                RmseNorm::Unsquared => crate::fm::sqrt(s),
            };
            n += 1;
        }
        crate::fm::sqrt(acc / n as f64)
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("trajectory lengths differ: {gt} vs {pred}")]
    LengthMismatch { gt: usize, pred: usize },
    #[error("sequence spans {len} samples but the relative-error interval needs {needed}; configure a smaller t_i")]
    TooShortForInterval { len: usize, needed: usize },
    #[error("ground-truth path length {path:.3} m is shorter than the distance interval {d} m")]
    PathTooShort { path: f64, d: f64 },
    #[error("ground-truth path has zero length")]
    ZeroLengthPath,
    #[error("empty input")]
    EmptyInput,
    #[error("window stitching left timestamp {index} uncovered")]
    CoverageGap { index: usize },
}

/// Per-sequence metric values. Relative metrics are absent when the sequence
/// is too short for the configured interval.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub ate_m: f64,
    pub t_rte_m: Option<f64>,
    pub d_rte_m: Option<f64>,
    /// Final-position drift over total distance traveled, unitless.
    pub pde: f64,
    /// Mean squared error of the stitched velocity, (m/s)².
    pub velocity_mse: Option<f64>,
}

/// Metric configuration: the T-RTE time interval, the D-RTE distance, and the
/// RMSE norm convention.
#[derive(Clone, Copy, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricConfig {
    pub t_rte_seconds: f64,
    pub d_rte_meters: f64,
    pub rmse: RmseNorm,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { t_rte_seconds: 60.0, d_rte_meters: 1.0, rmse: RmseNorm::Squared }
    }
}

/// Forward-Euler position series from an `(m, 2)` velocity array:
/// `p_0 = p0`, `p_t = p_{t−1} + v_{t−1}·dt`.
pub fn integrate_velocity(vel: &Tensor, p0: [f64; 2], dt: f64, t0: f64) -> Trajectory {
    let m = vel.shape()[0];
    let mut positions = Vec::with_capacity(m);
    let mut timestamps = Vec::with_capacity(m);
    let (mut px, mut py) = (p0[0], p0[1]);
    for t in 0..m {
        positions.push(Vec3::new(px, py, 0.0));
        timestamps.push(t0 + t as f64 * dt);
        px += vel.at2(t, 0) * dt;
        py += vel.at2(t, 1) * dt;
    }
    Trajectory { timestamps, positions }
}

/// One window's predicted velocities, anchored at its source index.
#[derive(Clone, Debug)]
pub struct WindowEstimate {
    pub origin_index: usize,
    /// `(m, 2)` predicted velocity.
    pub vel: Tensor,
}

/// Average overlapping window predictions into one full-length velocity
/// series. Every timestamp in `0..seq_len` must be covered by at least one
/// window.
pub fn stitch_velocities(estimates: &[WindowEstimate], seq_len: usize) -> Result<Tensor, MetricError> {
    if estimates.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut sum = vec![0.0; seq_len * 2];
    let mut count = vec![0u32; seq_len];
    for est in estimates {
        let m = est.vel.shape()[0];
        for t in 0..m {
            let idx = est.origin_index + t;
            if idx >= seq_len {
                continue;
            }
            sum[idx * 2] += est.vel.at2(t, 0);
            sum[idx * 2 + 1] += est.vel.at2(t, 1);
            count[idx] += 1;
        }
    }
    if let Some(index) = count.iter().position(|&c| c == 0) {
        return Err(MetricError::CoverageGap { index });
    }
    for (i, c) in count.iter().enumerate() {
        sum[i * 2] /= *c as f64;
        sum[i * 2 + 1] /= *c as f64;
    }
    Ok(Tensor::from_vec(&[seq_len, 2], sum))
}

/// Average overlapping window predictions and integrate from the ground-truth
/// initial position.
pub fn stitch_windows(
    estimates: &[WindowEstimate],
    seq_len: usize,
    p0: [f64; 2],
    dt: f64,
    t0: f64,
) -> Result<Trajectory, MetricError> {
    let vel = stitch_velocities(estimates, seq_len)?;
    Ok(integrate_velocity(&vel, p0, dt, t0))
}

fn check_lengths(gt: &Trajectory, pred: &Trajectory) -> Result<(), MetricError> {
    if gt.len() != pred.len() {
        return Err(MetricError::LengthMismatch { gt: gt.len(), pred: pred.len() });
    }
    if gt.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(())
}

fn sq_err(gt: &Trajectory, pred: &Trajectory, t: usize) -> f64 {
    let dx = gt.positions[t].x - pred.positions[t].x;
    let dy = gt.positions[t].y - pred.positions[t].y;
    dx * dx + dy * dy
}

/// Absolute trajectory error: RMSE of the per-timestamp position error.
pub fn ate(gt: &Trajectory, pred: &Trajectory, norm: RmseNorm) -> Result<f64, MetricError> {
    check_lengths(gt, pred)?;
    Ok(norm.reduce((0..gt.len()).map(|t| sq_err(gt, pred, t))))
}

/// Time-normalized relative trajectory error: RMSE of
/// `(x_{t+k} − x_t) − (x̃_{t+k} − x̃_t)` with `k = t_i·rate` samples, window
/// starts sliding by one sample over every valid position.
pub fn t_rte(
    gt: &Trajectory,
    pred: &Trajectory,
    t_i_seconds: f64,
    rate_hz: f64,
    norm: RmseNorm,
) -> Result<f64, MetricError> {
    check_lengths(gt, pred)?;
    let k = crate::fm::round(t_i_seconds * rate_hz) as usize;
    if k == 0 || k >= gt.len() {
        return Err(MetricError::TooShortForInterval { len: gt.len(), needed: k + 1 });
    }
    Ok(norm.reduce((0..gt.len() - k).map(|t| {
        let gdx = gt.positions[t + k].x - gt.positions[t].x;
        let gdy = gt.positions[t + k].y - gt.positions[t].y;
        let pdx = pred.positions[t + k].x - pred.positions[t].x;
        let pdy = pred.positions[t + k].y - pred.positions[t].y;
        let (ex, ey) = (gdx - pdx, gdy - pdy);
        ex * ex + ey * ey
    })))
}

fn horizontal_arc_prefix(gt: &Trajectory) -> Vec<f64> {
    let mut cum = Vec::with_capacity(gt.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for t in 1..gt.len() {
        let dx = gt.positions[t].x - gt.positions[t - 1].x;
        let dy = gt.positions[t].y - gt.positions[t - 1].y;
        acc += crate::fm::hypot(dx, dy);
        cum.push(acc);
    }
    cum
}

/// Distance-normalized relative trajectory error: for each start, the error of
/// the displacement over the ground-truth segment that first accumulates `d`
/// meters of arc length.
pub fn d_rte(gt: &Trajectory, pred: &Trajectory, d: f64, norm: RmseNorm) -> Result<f64, MetricError> {
    check_lengths(gt, pred)?;
    let cum = horizontal_arc_prefix(gt);
    let total = *cum.last().unwrap();
    if total < d {
        return Err(MetricError::PathTooShort { path: total, d });
    }
    let mut sq = Vec::new();
    let mut j = 0usize;
    for t in 0..gt.len() {
        if j < t {
            j = t;
        }
        while j < gt.len() && cum[j] - cum[t] < d {
            j += 1;
        }
        if j >= gt.len() {
            break;
        }
        let gdx = gt.positions[j].x - gt.positions[t].x;
        let gdy = gt.positions[j].y - gt.positions[t].y;
        let pdx = pred.positions[j].x - pred.positions[t].x;
        let pdy = pred.positions[j].y - pred.positions[t].y;
        let (ex, ey) = (gdx - pdx, gdy - pdy);
        sq.push(ex * ex + ey * ey);
    }
    if sq.is_empty() {
        return Err(MetricError::PathTooShort { path: total, d });
    }
    Ok(norm.reduce(sq.into_iter()))
}

/// Position drift error: final-position error over total ground-truth arc
/// length.
pub fn pde(gt: &Trajectory, pred: &Trajectory) -> Result<f64, MetricError> {
    check_lengths(gt, pred)?;
    let cum = horizontal_arc_prefix(gt);
    let total = *cum.last().unwrap();
    if total <= 0.0 {
        return Err(MetricError::ZeroLengthPath);
    }
    let last = gt.len() - 1;
    Ok(crate::fm::sqrt(sq_err(gt, pred, last)) / total)
}

/// Sorted empirical CDF sampled at `n_points` quantiles; fractions are
/// nondecreasing and end at 1.0.
pub fn cdf_points(values: &[f64], n_points: usize) -> Result<Vec<(f64, f64)>, MetricError> {
    if values.is_empty() || n_points == 0 {
        return Err(MetricError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("metric values must not be NaN"));
    let n = sorted.len();
    let mut out = Vec::with_capacity(n_points);
    for k in 1..=n_points {
        let fraction = k as f64 / n_points as f64;
        let rank = ((fraction * n as f64).ceil() as usize).clamp(1, n);
        out.push((sorted[rank - 1], fraction));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn traj(points: &[(f64, f64)], dt: f64) -> Trajectory {
        Trajectory {
            timestamps: (0..points.len()).map(|k| k as f64 * dt).collect(),
            positions: points.iter().map(|&(x, y)| Vec3::new(x, y, 0.0)).collect(),
        }
    }

    fn random_traj(rng: &mut crate::rng::DetRng, n: usize) -> Trajectory {
        let mut pts = Vec::with_capacity(n);
        let (mut x, mut y) = (0.0, 0.0);
        for _ in 0..n {
            x += crate::rng::uniform(rng, -0.1, 0.12);
            y += crate::rng::uniform(rng, -0.1, 0.11);
            pts.push((x, y));
        }
        traj(&pts, 0.01)
    }

    // Independent brute-force implementations used as oracles.
    fn ate_brute(gt: &Trajectory, pred: &Trajectory) -> f64 {
        let mut acc = 0.0;
        for t in 0..gt.len() {
            let dx = gt.positions[t].x - pred.positions[t].x;
            let dy = gt.positions[t].y - pred.positions[t].y;
            acc += dx * dx + dy * dy;
        }
        (acc / gt.len() as f64).sqrt()
    }

    fn t_rte_brute(gt: &Trajectory, pred: &Trajectory, k: usize) -> f64 {
        let mut acc = 0.0;
        let mut n = 0;
        for t in 0..gt.len() {
            if t + k >= gt.len() {
                break;
            }
            let ex = (gt.positions[t + k].x - gt.positions[t].x)
                - (pred.positions[t + k].x - pred.positions[t].x);
            let ey = (gt.positions[t + k].y - gt.positions[t].y)
                - (pred.positions[t + k].y - pred.positions[t].y);
            acc += ex * ex + ey * ey;
            n += 1;
        }
        (acc / n as f64).sqrt()
    }

    #[test]
    fn integrate_velocity_closed_forms() {
        let vel = Tensor::zeros(&[50, 2]);
        let t = integrate_velocity(&vel, [2.0, 3.0], 0.01, 0.0);
        assert!(t.positions.iter().all(|p| p.x == 2.0 && p.y == 3.0));

        let vel = Tensor::from_vec(&[200, 2], [[1.0, 0.0]; 200].concat());
        let t = integrate_velocity(&vel, [0.0, 0.0], 0.005, 0.0);
        let last = t.positions.last().unwrap();
        assert_abs_diff_eq!(last.x, 0.995, epsilon = 1e-12);
    }

    #[test]
    fn ate_constant_offset_is_the_offset_norm() {
        let mut rng = crate::rng::root(61);
        let gt = random_traj(&mut rng, 300);
        let mut pred = gt.clone();
        for p in pred.positions.iter_mut() {
            p.x += 3.0;
            p.y += 4.0;
        }
        assert_abs_diff_eq!(ate(&gt, &pred, RmseNorm::Squared).unwrap(), 5.0, epsilon = 1e-12);
        assert_eq!(ate(&gt, &gt, RmseNorm::Squared).unwrap(), 0.0);
    }

    #[test]
    fn metrics_match_brute_force_oracles() {
        let mut rng = crate::rng::root(62);
        for _ in 0..20 {
            let gt = random_traj(&mut rng, 500);
            let pred = random_traj(&mut rng, 500);
            let a = ate(&gt, &pred, RmseNorm::Squared).unwrap();
            assert_abs_diff_eq!(a, ate_brute(&gt, &pred), epsilon = 1e-12);
            let k = 120;
            let tr = t_rte(&gt, &pred, 1.2, 100.0, RmseNorm::Squared).unwrap();
            assert_abs_diff_eq!(tr, t_rte_brute(&gt, &pred, k), epsilon = 1e-12);
        }
    }

    #[test]
    fn t_rte_ignores_constant_offsets_and_measures_linear_drift() {
        let mut rng = crate::rng::root(63);
        let gt = random_traj(&mut rng, 400);
        let mut pred = gt.clone();
        for p in pred.positions.iter_mut() {
            p.x += 17.0;
            p.y -= 4.0;
        }
        let v = t_rte(&gt, &pred, 1.0, 100.0, RmseNorm::Squared).unwrap();
        assert!(v < 1e-12, "offsets cancel, got {v}");

        // Linear drift r m/s gives exactly r·t_i.
        let r = 0.35;
        let mut pred = gt.clone();
        for (t, p) in pred.positions.iter_mut().enumerate() {
            p.x += r * t as f64 * 0.01;
        }
        let ti = 1.0;
        let v = t_rte(&gt, &pred, ti, 100.0, RmseNorm::Squared).unwrap();
        assert_abs_diff_eq!(v, r * ti, epsilon = 1e-9);
    }

    #[test]
    fn t_rte_too_short_is_an_error() {
        let gt = traj(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)], 0.5);
        let err = t_rte(&gt, &gt, 60.0, 2.0, RmseNorm::Squared).unwrap_err();
        assert!(matches!(err, MetricError::TooShortForInterval { .. }));
    }

    #[test]
    fn d_rte_equals_t_rte_at_constant_speed() {
        // 1 m/s constant speed: the 1-meter interval is exactly 1 second.
        let n = 500;
        let gt = traj(&(0..n).map(|k| (k as f64 * 0.01, 0.0)).collect::<Vec<_>>(), 0.01);
        let mut rng = crate::rng::root(64);
        let mut pred = gt.clone();
        for p in pred.positions.iter_mut() {
            p.x += crate::rng::uniform(&mut rng, -0.05, 0.05);
            p.y += crate::rng::uniform(&mut rng, -0.05, 0.05);
        }
        let d = d_rte(&gt, &pred, 1.0, RmseNorm::Squared).unwrap();
        let t = t_rte(&gt, &pred, 1.0, 100.0, RmseNorm::Squared).unwrap();
        assert_abs_diff_eq!(d, t, epsilon = 1e-9);
    }

    #[test]
    fn d_rte_matches_brute_force() {
        let mut rng = crate::rng::root(65);
        let gt = random_traj(&mut rng, 600);
        let pred = random_traj(&mut rng, 600);
        let fast = d_rte(&gt, &pred, 1.0, RmseNorm::Squared).unwrap();

        // Brute force: for every start, scan forward for the crossing.
        let cum = horizontal_arc_prefix(&gt);
        let mut acc = 0.0;
        let mut n = 0usize;
        for t in 0..gt.len() {
            let mut j = None;
            for cand in t..gt.len() {
                if cum[cand] - cum[t] >= 1.0 {
                    j = Some(cand);
                    break;
                }
            }
            let Some(j) = j else { break };
            let ex = (gt.positions[j].x - gt.positions[t].x)
                - (pred.positions[j].x - pred.positions[t].x);
            let ey = (gt.positions[j].y - gt.positions[t].y)
                - (pred.positions[j].y - pred.positions[t].y);
            acc += ex * ex + ey * ey;
            n += 1;
        }
        let brute = (acc / n as f64).sqrt();
        assert_abs_diff_eq!(fast, brute, epsilon = 1e-12);
    }

    #[test]
    fn pde_closed_form() {
        // 100 m path, 2 m final error → 0.02.
        let n = 101;
        let gt = traj(&(0..n).map(|k| (k as f64, 0.0)).collect::<Vec<_>>(), 1.0);
        let mut pred = gt.clone();
        pred.positions.last_mut().unwrap().y += 2.0;
        assert_abs_diff_eq!(pde(&gt, &pred).unwrap(), 0.02, epsilon = 1e-12);
        assert_eq!(pde(&gt, &gt).unwrap(), 0.0);
    }

    #[test]
    fn pde_zero_length_path_is_an_error() {
        let gt = traj(&[(1.0, 1.0), (1.0, 1.0)], 0.5);
        assert!(matches!(pde(&gt, &gt), Err(MetricError::ZeroLengthPath)));
    }

    #[test]
    fn stitching_averages_overlaps_and_flags_gaps() {
        let v1 = Tensor::filled(&[4, 2], 1.0);
        let v2 = Tensor::filled(&[4, 2], 3.0);
        // Two half-overlapping windows: [0..4) and [2..6).
        let est = [
            WindowEstimate { origin_index: 0, vel: v1 },
            WindowEstimate { origin_index: 2, vel: v2 },
        ];
        let stitched = stitch_velocities(&est, 6).unwrap();
        assert_eq!(stitched.at2(0, 0), 1.0);
        assert_eq!(stitched.at2(2, 0), 2.0, "mean of the two windows");
        assert_eq!(stitched.at2(5, 0), 3.0);

        let gap = [
            WindowEstimate { origin_index: 0, vel: Tensor::filled(&[2, 2], 1.0) },
            WindowEstimate { origin_index: 4, vel: Tensor::filled(&[2, 2], 1.0) },
        ];
        assert!(matches!(
            stitch_velocities(&gap, 6),
            Err(MetricError::CoverageGap { index: 2 })
        ));
    }

    #[test]
    fn single_window_stitch_is_plain_integration() {
        let mut rng = crate::rng::root(66);
        let vel = Tensor::uniform(&[50, 2], 1.0, &mut rng);
        let est = [WindowEstimate { origin_index: 0, vel: vel.clone() }];
        let a = stitch_windows(&est, 50, [1.0, -2.0], 0.02, 0.0).unwrap();
        let b = integrate_velocity(&vel, [1.0, -2.0], 0.02, 0.0);
        assert_eq!(a, b);

        // Two half-overlapping windows with equal predictions match either.
        let est2 = [
            WindowEstimate { origin_index: 0, vel: Tensor::from_vec(&[30, 2], vel.data()[..60].to_vec()) },
            WindowEstimate { origin_index: 20, vel: Tensor::from_vec(&[30, 2], vel.data()[40..].to_vec()) },
        ];
        let c = stitch_windows(&est2, 50, [1.0, -2.0], 0.02, 0.0).unwrap();
        for (p, q) in a.positions.iter().zip(&c.positions) {
            assert_abs_diff_eq!(p.x, q.x, epsilon = 1e-9);
            assert_abs_diff_eq!(p.y, q.y, epsilon = 1e-9);
        }
    }

    #[test]
    fn cdf_is_monotone_and_ends_at_one() {
        assert_eq!(cdf_points(&[7.5], 1).unwrap(), alloc::vec![(7.5, 1.0)]);

        let values: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let pts = cdf_points(&values, 100).unwrap();
        let median = pts.iter().find(|(_, f)| (*f - 0.5).abs() < 1e-12).unwrap();
        assert!((median.0 - 50.0).abs() <= 1.0, "median {:?}", median);

        let mut rng = crate::rng::root(67);
        let vals: Vec<f64> = (0..37).map(|_| crate::rng::uniform(&mut rng, -4.0, 9.0)).collect();
        let pts = cdf_points(&vals, 10).unwrap();
        for w in pts.windows(2) {
            assert!(w[1].1 >= w[0].1 && w[1].0 >= w[0].0);
        }
        assert_eq!(pts.last().unwrap().1, 1.0);
    }

    #[test]
    fn metrics_are_translation_invariant() {
        let mut rng = crate::rng::root(68);
        let gt = random_traj(&mut rng, 300);
        let pred = random_traj(&mut rng, 300);
        let shift = |t: &Trajectory| -> Trajectory {
            let mut s = t.clone();
            for p in s.positions.iter_mut() {
                p.x += 11.0;
                p.y -= 7.0;
            }
            s
        };
        let (gs, ps) = (shift(&gt), shift(&pred));
        assert_eq!(
            ate(&gt, &pred, RmseNorm::Squared).unwrap(),
            ate(&gs, &ps, RmseNorm::Squared).unwrap()
        );
        assert_eq!(
            t_rte(&gt, &pred, 0.5, 100.0, RmseNorm::Squared).unwrap(),
            t_rte(&gs, &ps, 0.5, 100.0, RmseNorm::Squared).unwrap()
        );
        assert_eq!(
            d_rte(&gt, &pred, 0.5, RmseNorm::Squared).unwrap(),
            d_rte(&gs, &ps, 0.5, RmseNorm::Squared).unwrap()
        );
    }
}
