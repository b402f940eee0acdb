//! Window extraction, navigation-frame rotation, heading-agnostic yaw
//! augmentation, and bias perturbation.

use alloc::vec::Vec;

use crate::autodiff::Tensor;
use crate::dataio::ImuSequence;
use crate::geometry::{UnitQuaternion, Vec3};
use crate::rng::DetRng;

/// Uniform per-axis bias perturbation bound for the accelerometer, m/s².
pub const ACCEL_PERTURBATION_BOUND: f64 = 0.2;
/// Uniform per-axis bias perturbation bound for the gyroscope, rad/s.
pub const GYRO_PERTURBATION_BOUND: f64 = 0.05;

/// One training/evaluation slice.
///
/// `imu` is `(m, 6)` — gyro xyz then accel xyz — already rotated into the
/// navigation frame with the orientation at the window's first sample.
/// `gt_pos` is the forward-Euler integral of `gt_vel` from its first row, by
/// construction of [`window_ground_truth`].
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub imu: Tensor,
    /// `(m, 2)` horizontal-plane velocity, m/s.
    pub gt_vel: Tensor,
    /// `(m, 2)` horizontal-plane position, m.
    pub gt_pos: Tensor,
    pub dt: f64,
    /// Index of the window's first sample in the source sequence.
    pub origin_index: usize,
    /// Orientation used for the navigation-frame rotation.
    pub anchor_orientation: UnitQuaternion,
}

impl Window {
    pub fn len(&self) -> usize {
        self.imu.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum WindowError {
    #[error("window length {window_len} exceeds sequence length {seq_len}")]
    WindowTooLong { window_len: usize, seq_len: usize },
    #[error("window step must be >= 1")]
    BadStep,
    #[error("random shift {shift} must be smaller than the step {step}")]
    ShiftTooLarge { shift: usize, step: usize },
    #[error("slice {start}..{end} out of range for sequence of length {seq_len}")]
    OutOfRange { start: usize, end: usize, seq_len: usize },
}

/// Rotate one body-frame sample pair into the navigation frame using the
/// window's anchor orientation.
pub fn rotate_to_nav_frame(gyro_body: Vec3, accel_body: Vec3, q0: UnitQuaternion) -> (Vec3, Vec3) {
    (q0.rotate(gyro_body), q0.rotate(accel_body))
}

/// Ground-truth slice for a window: horizontal positions and forward-difference
/// velocities `v_t = (p_{t+1} − p_t)/dt` with the final row repeated.
///
/// The repetition keeps the window self-contained while making the
/// forward-Euler integral of `gt_vel` from `gt_pos[0]` reproduce `gt_pos`
/// exactly.
pub fn window_ground_truth(
    seq: &ImuSequence,
    start: usize,
    m: usize,
    dt: f64,
) -> Result<(Tensor, Tensor), WindowError> {
    if start + m > seq.len() || m == 0 {
        return Err(WindowError::OutOfRange { start, end: start + m, seq_len: seq.len() });
    }
    let mut vel = Tensor::zeros(&[m, 2]);
    let mut pos = Tensor::zeros(&[m, 2]);
    for t in 0..m {
        let p = seq.gt_positions[start + t];
        pos.data_mut()[t * 2] = p.x;
        pos.data_mut()[t * 2 + 1] = p.y;
    }
    for t in 0..m - 1 {
        let a = seq.gt_positions[start + t];
        let b = seq.gt_positions[start + t + 1];
        vel.data_mut()[t * 2] = (b.x - a.x) / dt;
        vel.data_mut()[t * 2 + 1] = (b.y - a.y) / dt;
    }
    if m >= 2 {
        let (lx, ly) = (vel.at2(m - 2, 0), vel.at2(m - 2, 1));
        vel.data_mut()[(m - 1) * 2] = lx;
        vel.data_mut()[(m - 1) * 2 + 1] = ly;
    }
    Ok((vel, pos))
}

/// Extract one window starting at `start`.
pub fn extract_window(seq: &ImuSequence, start: usize, m: usize) -> Result<Window, WindowError> {
    let dt = seq.dt();
    let q0 = seq.orientations[start];
    let mut imu = Tensor::zeros(&[m, 6]);
    for t in 0..m {
        let (g, a) = rotate_to_nav_frame(seq.gyro[start + t], seq.accel[start + t], q0);
        let row = &mut imu.data_mut()[t * 6..(t + 1) * 6];
        row[0] = g.x;
        row[1] = g.y;
        row[2] = g.z;
        row[3] = a.x;
        row[4] = a.y;
        row[5] = a.z;
    }
    let (gt_vel, gt_pos) = window_ground_truth(seq, start, m, dt)?;
    Ok(Window { imu, gt_vel, gt_pos, dt, origin_index: start, anchor_orientation: q0 })
}

/// Slide a window of `window_len` samples across the sequence.
///
/// Window `i` starts at `i·step + shift_i` with `shift_i` drawn uniformly from
/// `[0, random_shift_max]` (clipped so the window fits); shifts are drawn in
/// window order from `rng`. The window count is always
/// `floor((L − window_len)/step) + 1`.
pub fn make_windows(
    seq: &ImuSequence,
    window_len: usize,
    step: usize,
    random_shift_max: usize,
    rng: &mut DetRng,
) -> Result<Vec<Window>, WindowError> {
    let len = seq.len();
    if window_len > len || window_len == 0 {
        return Err(WindowError::WindowTooLong { window_len, seq_len: len });
    }
    if step == 0 {
        return Err(WindowError::BadStep);
    }
    if random_shift_max > 0 && random_shift_max >= step {
        return Err(WindowError::ShiftTooLarge { shift: random_shift_max, step });
    }
    use rand::Rng;
    let count = (len - window_len) / step + 1;
    let last_start = len - window_len;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let shift = if random_shift_max == 0 { 0 } else { rng.random_range(0..=random_shift_max) };
        let start = (i * step + shift).min(last_start);
        out.push(extract_window(seq, start, window_len)?);
    }
    Ok(out)
}

/// Rotate a window by `theta` about +Z: IMU xyz triplets, velocities, and
/// positions all turn together; `dt` and indexing are untouched.
pub fn augment_yaw(w: &Window, theta: f64) -> Window {
    let (c, s) = (crate::fm::cos(theta), crate::fm::sin(theta));
    let rot2 = |x: f64, y: f64| (c * x - s * y, s * x + c * y);
    let m = w.len();
    let mut out = w.clone();
    for t in 0..m {
        let row = &mut out.imu.data_mut()[t * 6..(t + 1) * 6];
        let (gx, gy) = rot2(row[0], row[1]);
        let (ax, ay) = rot2(row[3], row[4]);
        row[0] = gx;
        row[1] = gy;
        row[3] = ax;
        row[4] = ay;
        let (vx, vy) = rot2(out.gt_vel.at2(t, 0), out.gt_vel.at2(t, 1));
        out.gt_vel.data_mut()[t * 2] = vx;
        out.gt_vel.data_mut()[t * 2 + 1] = vy;
        let (px, py) = rot2(out.gt_pos.at2(t, 0), out.gt_pos.at2(t, 1));
        out.gt_pos.data_mut()[t * 2] = px;
        out.gt_pos.data_mut()[t * 2 + 1] = py;
    }
    out
}

/// Which frame a drawn bias perturbation is expressed in before it is added
/// to the (navigation-frame) window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BiasFrame {
    /// Add the drawn bias directly to the rotated rows.
    #[default]
    Navigation,
    /// Interpret the drawn bias as a body-frame offset: rotate it by the
    /// window anchor before adding.
    Body,
}

/// Add one constant per-window bias to every row: gyro axes drawn uniformly from
/// ±[`GYRO_PERTURBATION_BOUND`], accel axes from ±[`ACCEL_PERTURBATION_BOUND`].
/// Ground truth is untouched. Draw order: gyro xyz, then accel xyz.
pub fn perturb_bias(w: &Window, rng: &mut DetRng, frame: BiasFrame) -> Window {
    let mut draw = |bound: f64| crate::rng::uniform(rng, -bound, bound);
    let gyro = Vec3::new(
        draw(GYRO_PERTURBATION_BOUND),
        draw(GYRO_PERTURBATION_BOUND),
        draw(GYRO_PERTURBATION_BOUND),
    );
    let accel = Vec3::new(
        draw(ACCEL_PERTURBATION_BOUND),
        draw(ACCEL_PERTURBATION_BOUND),
        draw(ACCEL_PERTURBATION_BOUND),
    );
    let (gyro, accel) = match frame {
        BiasFrame::Navigation => (gyro, accel),
        BiasFrame::Body => (w.anchor_orientation.rotate(gyro), w.anchor_orientation.rotate(accel)),
    };
    let mut out = w.clone();
    for t in 0..w.len() {
        let row = &mut out.imu.data_mut()[t * 6..(t + 1) * 6];
        row[0] += gyro.x;
        row[1] += gyro.y;
        row[2] += gyro.z;
        row[3] += accel.x;
        row[4] += accel.y;
        row[5] += accel.z;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{gen_synthetic, SyntheticSpec, TrajectoryKind};
    use approx::assert_abs_diff_eq;
    use core::f64::consts::PI;

    fn line_seq(len_s: f64, rate: f64) -> ImuSequence {
        gen_synthetic(&SyntheticSpec::clean(TrajectoryKind::Line { heading: 0.0 }, len_s, rate, 1.0))
            .unwrap()
    }

    #[test]
    fn window_count_matches_closed_form() {
        let seq = line_seq(10.0, 100.0); // L = 1000
        let mut rng = crate::rng::root(1);
        let ws = make_windows(&seq, 200, 10, 0, &mut rng).unwrap();
        assert_eq!(ws.len(), 81, "floor((1000-200)/10)+1");
        for (i, w) in ws.iter().enumerate() {
            assert_eq!(w.origin_index, i * 10);
        }
    }

    #[test]
    fn exact_fit_gives_one_window() {
        let seq = line_seq(2.0, 100.0); // L = 200
        let mut rng = crate::rng::root(2);
        let ws = make_windows(&seq, 200, 57, 0, &mut rng).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].origin_index, 0);
    }

    #[test]
    fn oversized_window_is_an_error() {
        let seq = line_seq(1.0, 100.0);
        let mut rng = crate::rng::root(3);
        assert!(matches!(
            make_windows(&seq, 200, 10, 0, &mut rng),
            Err(WindowError::WindowTooLong { .. })
        ));
    }

    #[test]
    fn shifted_windows_fit_and_are_seeded() {
        let seq = line_seq(10.0, 100.0);
        let ws1 = make_windows(&seq, 200, 10, 9, &mut crate::rng::stream(5, 1)).unwrap();
        let ws2 = make_windows(&seq, 200, 10, 9, &mut crate::rng::stream(5, 1)).unwrap();
        assert_eq!(ws1.len(), 81);
        for (a, b) in ws1.iter().zip(&ws2) {
            assert_eq!(a.origin_index, b.origin_index);
        }
        for (i, w) in ws1.iter().enumerate() {
            assert!(w.origin_index >= i * 10 && w.origin_index <= (i * 10 + 9).min(800));
            assert!(w.origin_index + 200 <= seq.len());
        }
    }

    #[test]
    fn rotation_uses_window_anchor() {
        let q0 = UnitQuaternion::yaw_rotation(PI / 2.0);
        let (g, a) = rotate_to_nav_frame(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), q0);
        assert_abs_diff_eq!(g.y, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(a.x, -1.0, epsilon = 1e-9);
        // Identity anchor leaves samples unchanged; norms always preserved.
        let (g, _) = rotate_to_nav_frame(Vec3::new(1.0, 2.0, 3.0), Vec3::ZERO, UnitQuaternion::IDENTITY);
        assert_eq!(g, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn constant_velocity_ground_truth() {
        let seq = line_seq(4.0, 100.0);
        let (vel, pos) = window_ground_truth(&seq, 50, 200, seq.dt()).unwrap();
        for t in 0..200 {
            assert_abs_diff_eq!(vel.at2(t, 0), 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(vel.at2(t, 1), 0.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(pos.at2(0, 0), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn window_positions_are_euler_integral_of_velocities() {
        let spec = SyntheticSpec::clean(TrajectoryKind::Circle { radius_m: 5.0, ccw: true }, 10.0, 100.0, 1.0);
        let seq = gen_synthetic(&spec).unwrap();
        let w = extract_window(&seq, 123, 200).unwrap();
        let (mut px, mut py) = (w.gt_pos.at2(0, 0), w.gt_pos.at2(0, 1));
        for t in 0..w.len() {
            assert_abs_diff_eq!(px, w.gt_pos.at2(t, 0), epsilon = 1e-9);
            assert_abs_diff_eq!(py, w.gt_pos.at2(t, 1), epsilon = 1e-9);
            px += w.gt_vel.at2(t, 0) * w.dt;
            py += w.gt_vel.at2(t, 1) * w.dt;
        }
    }

    #[test]
    fn yaw_augmentation_rotates_and_composes() {
        let seq = line_seq(4.0, 100.0);
        let w = extract_window(&seq, 0, 200).unwrap();
        let id = augment_yaw(&w, 0.0);
        assert_eq!(id, w);

        let quarter = augment_yaw(&w, PI / 2.0);
        assert_abs_diff_eq!(quarter.gt_vel.at2(10, 0), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(quarter.gt_vel.at2(10, 1), 1.0, epsilon = 1e-9);

        // Composition: rotating twice equals rotating by the sum.
        let a = augment_yaw(&augment_yaw(&w, 0.7), 0.9);
        let b = augment_yaw(&w, 1.6);
        for (x, y) in a.imu.data().iter().zip(b.imu.data()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }

        // Speed is preserved row by row.
        let mut rng = crate::rng::root(9);
        let theta = crate::rng::uniform(&mut rng, 0.0, 2.0 * PI);
        let r = augment_yaw(&w, theta);
        for t in 0..w.len() {
            let s0 = crate::fm::hypot(w.gt_vel.at2(t, 0), w.gt_vel.at2(t, 1));
            let s1 = crate::fm::hypot(r.gt_vel.at2(t, 0), r.gt_vel.at2(t, 1));
            assert_abs_diff_eq!(s0, s1, epsilon = 1e-9);
        }
    }

    #[test]
    fn bias_perturbation_is_row_constant_bounded_and_seeded() {
        let seq = line_seq(4.0, 100.0);
        let w = extract_window(&seq, 0, 200).unwrap();

        let p1 = perturb_bias(&w, &mut crate::rng::stream(8, 4), BiasFrame::Navigation);
        let p2 = perturb_bias(&w, &mut crate::rng::stream(8, 4), BiasFrame::Navigation);
        assert_eq!(p1, p2, "fixed seed reproduces offsets");
        assert_eq!(p1.gt_vel, w.gt_vel, "ground truth untouched");

        // Difference is the same for every row.
        let d0: Vec<f64> = (0..6).map(|c| p1.imu.at2(0, c) - w.imu.at2(0, c)).collect();
        for t in 1..w.len() {
            for c in 0..6 {
                assert_abs_diff_eq!(p1.imu.at2(t, c) - w.imu.at2(t, c), d0[c], epsilon = 1e-12);
            }
        }

        // Bounds over many draws.
        let mut rng = crate::rng::root(10);
        for _ in 0..1000 {
            let p = perturb_bias(&w, &mut rng, BiasFrame::Navigation);
            for c in 0..3 {
                let d = p.imu.at2(0, c) - w.imu.at2(0, c);
                assert!(d.abs() <= GYRO_PERTURBATION_BOUND);
            }
            for c in 3..6 {
                let d = p.imu.at2(0, c) - w.imu.at2(0, c);
                assert!(d.abs() <= ACCEL_PERTURBATION_BOUND);
            }
        }
    }

    #[test]
    fn zero_shift_tiling_covers_prefix() {
        let seq = line_seq(10.0, 100.0);
        let mut rng = crate::rng::root(11);
        let ws = make_windows(&seq, 200, 10, 0, &mut rng).unwrap();
        let last_start = ws.last().unwrap().origin_index;
        let mut covered = alloc::vec![false; last_start + 200];
        for w in &ws {
            for t in w.origin_index..w.origin_index + 200 {
                covered[t] = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
    }
}
