//! Classical baselines: strapdown double integration (SINS) and step-based
//! pedestrian dead reckoning (PDR).

use alloc::vec;
use alloc::vec::Vec;

use crate::dataio::{ImuSequence, OrientationSource, SequenceError};
use crate::geometry::{UnitQuaternion, Vec3};

/// Navigation-frame position series. 2D tracks carry z = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub timestamps: Vec<f64>,
    pub positions: Vec<Vec3>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Truncate to the first `seconds` of motion (used for drift-growth
    /// comparisons).
    pub fn prefix_seconds(&self, seconds: f64) -> Trajectory {
        let t0 = self.timestamps[0];
        let n = self.timestamps.iter().take_while(|t| **t - t0 <= seconds).count().max(1);
        Trajectory { timestamps: self.timestamps[..n].to_vec(), positions: self.positions[..n].to_vec() }
    }
}

/// Orientation, velocity, and position advanced by the strapdown recurrence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinematicState {
    pub orientation: UnitQuaternion,
    pub velocity: Vec3,
    pub position: Vec3,
}

impl KinematicState {
    pub fn at_rest(orientation: UnitQuaternion, position: Vec3) -> Self {
        Self { orientation, velocity: Vec3::ZERO, position }
    }
}

/// One strapdown step: orientation advances by the gyro increment, velocity by
/// the gravity-compensated rotated specific force, position by the *previous*
/// velocity.
pub fn sins_step(state: &KinematicState, gyro: Vec3, accel: Vec3, dt: f64, g: Vec3) -> KinematicState {
    let position = state.position + state.velocity.scale(dt);
    let delta = (state.orientation.rotate(accel) - g).scale(dt);
    let velocity = state.velocity + delta;
    let orientation = state.orientation.mul(UnitQuaternion::from_angular_rate(gyro, dt));
    KinematicState { orientation, velocity, position }
}

/// Integrate a whole sequence from `initial`.
///
/// With `GroundTruth` or `DeviceEstimated` orientations the gyro recurrence is
/// bypassed: the provided per-sample orientation rotates the specific force.
/// `ImuIntegrated` propagates `initial.orientation` through the gyro channel.
pub fn sins_integrate(
    seq: &ImuSequence,
    source: OrientationSource,
    initial: KinematicState,
) -> Result<Trajectory, SequenceError> {
    let provided = match source {
        OrientationSource::ImuIntegrated => None,
        other => Some(seq.resolve_orientations(other)?),
    };
    let dt = seq.dt();
    let g = seq.gravity_vec();
    let mut state = initial;
    let mut positions = Vec::with_capacity(seq.len());
    positions.push(state.position);
    for k in 1..seq.len() {
        let rot = provided.as_ref().map_or(state.orientation, |o| o[k - 1]);
        let position = state.position + state.velocity.scale(dt);
        let delta = (rot.rotate(seq.accel[k - 1]) - g).scale(dt);
        state.velocity = state.velocity + delta;
        state.position = position;
        state.orientation = match &provided {
            Some(o) => o[k],
            None => state.orientation.mul(UnitQuaternion::from_angular_rate(seq.gyro[k - 1], dt)),
        };
        positions.push(state.position);
    }
    Ok(Trajectory { timestamps: seq.timestamps.clone(), positions })
}

/// Step-detector knobs. Defaults: 2nd-order low-pass at 3 Hz, peaks above
/// mean + 1σ, 0.3 s refractory gap.
#[derive(Clone, Copy, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepDetectParams {
    pub lowpass_cutoff_hz: f64,
    pub threshold_sigmas: f64,
    pub min_gap_s: f64,
}

impl Default for StepDetectParams {
    fn default() -> Self {
        Self { lowpass_cutoff_hz: 3.0, threshold_sigmas: 1.0, min_gap_s: 0.3 }
    }
}

/// Indices of accepted acceleration-magnitude peaks.
///
/// The magnitude series is low-pass filtered (2nd-order Butterworth), peaks
/// must clear `mean + threshold·std` of the filtered series, and peaks closer
/// than the refractory gap to an accepted one are suppressed (first wins).
/// Requires `rate_hz ≥ 20`.
pub fn detect_steps(accel: &[Vec3], rate_hz: f64, params: &StepDetectParams) -> Vec<usize> {
    assert!(rate_hz >= 20.0, "step detection needs at least 20 Hz, got {rate_hz}");
    if accel.len() < 3 {
        return Vec::new();
    }
    let mag: Vec<f64> = accel.iter().map(|a| a.norm()).collect();
    let filtered = butterworth2_lowpass(&mag, rate_hz, params.lowpass_cutoff_hz);
    let n = filtered.len() as f64;
    let mean = filtered.iter().sum::<f64>() / n;
    let var = filtered.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let threshold = mean + params.threshold_sigmas * crate::fm::sqrt(var);
    let min_gap = (params.min_gap_s * rate_hz) as usize;

    let mut steps = Vec::new();
    let mut last: Option<usize> = None;
    for i in 1..filtered.len() - 1 {
        let is_peak = filtered[i] > threshold
            && filtered[i] > filtered[i - 1]
            && filtered[i] >= filtered[i + 1];
        if is_peak && last.is_none_or(|l| i - l > min_gap) {
            steps.push(i);
            last = Some(i);
        }
    }
    steps
}

/// 2nd-order Butterworth low-pass via the bilinear transform.
fn butterworth2_lowpass(x: &[f64], rate_hz: f64, cutoff_hz: f64) -> Vec<f64> {
    let wc = {
        let ratio = (cutoff_hz / rate_hz).min(0.499);
        let t = core::f64::consts::PI * ratio;
        crate::fm::sin(t) / crate::fm::cos(t)
    };
    let k1 = core::f64::consts::SQRT_2 * wc;
    let k2 = wc * wc;
    let a0 = 1.0 + k1 + k2;
    let b0 = k2 / a0;
    let b1 = 2.0 * b0;
    let b2 = b0;
    let a1 = 2.0 * (k2 - 1.0) / a0;
    let a2 = (1.0 - k1 + k2) / a0;

    let mut y = vec![0.0; x.len()];
    // Prime the filter at the first sample's level to avoid a start-up edge.
    let (mut x1, mut x2) = (x[0], x[0]);
    let (mut y1, mut y2) = (x[0], x[0]);
    for (i, &xi) in x.iter().enumerate() {
        let yi = b0 * xi + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
        y[i] = yi;
        x2 = x1;
        x1 = xi;
        y2 = y1;
        y1 = yi;
    }
    y
}

/// Default stride length per detected step, meters.
pub const DEFAULT_STRIDE_M: f64 = 0.67;

/// Step-and-heading dead reckoning: at each detected step the position
/// advances `stride_m` along the device heading (yaw of the orientation at
/// the step index); constant in between.
pub fn pdr_track(seq: &ImuSequence, stride_m: f64) -> Trajectory {
    pdr_track_with(seq, stride_m, &StepDetectParams::default())
}

/// [`pdr_track`] with explicit detector parameters.
pub fn pdr_track_with(seq: &ImuSequence, stride_m: f64, params: &StepDetectParams) -> Trajectory {
    let steps = detect_steps(&seq.accel, seq.meta.sample_rate_hz, params);
    let mut positions = Vec::with_capacity(seq.len());
    let mut pos = seq.gt_positions[0];
    let mut next = steps.iter().copied().peekable();
    for k in 0..seq.len() {
        if next.peek() == Some(&k) {
            next.next();
            let yaw = seq.orientations[k].yaw();
            pos = pos + Vec3::new(stride_m * crate::fm::cos(yaw), stride_m * crate::fm::sin(yaw), 0.0);
        }
        positions.push(pos);
    }
    Trajectory { timestamps: seq.timestamps.clone(), positions }
}
