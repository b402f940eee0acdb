//! Canonical IMU sequence type, orientation-source policy, and a synthetic
//! sequence generator with analytically exact ground truth.
//!
//! The generator samples a closed-form trajectory and emits *discretely
//! consistent* measurement channels: relative-rotation rates and
//! forward-difference specific forces chosen so the strapdown recurrence
//! telescopes exactly through the stored ground truth. With zero bias and
//! noise, integrating the sequence reproduces `gt_positions` to floating-point
//! roundoff; the channels differ from the instantaneous analytic rates only at
//! the integrator's own order, O(dt).

use alloc::string::String;
use alloc::vec::Vec;

use crate::geometry::{UnitQuaternion, Vec3};
use crate::rng;

/// Default gravity magnitude, m/s².
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Sidecar metadata carried with every sequence.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SequenceMeta {
    pub sample_rate_hz: f64,
    pub dataset_kind: String,
    pub subject: String,
    pub gravity: f64,
}

/// Time-stamped gyroscope/accelerometer stream with ground-truth orientations
/// and positions.
///
/// Frames: gyro/accel are body-frame (gravity included in the accelerometer);
/// orientations map body → navigation; positions are navigation-frame with +Z
/// opposing gravity.
#[derive(Clone, Debug, PartialEq)]
pub struct ImuSequence {
    pub meta: SequenceMeta,
    /// Seconds, strictly increasing, uniform spacing `1/sample_rate_hz`.
    pub timestamps: Vec<f64>,
    /// Body-frame angular rate, rad/s.
    pub gyro: Vec<Vec3>,
    /// Body-frame specific force, m/s².
    pub accel: Vec<Vec3>,
    /// Ground-truth body→navigation orientation per sample.
    pub orientations: Vec<UnitQuaternion>,
    /// Device-estimated orientations, when the source provides them.
    pub device_orientations: Option<Vec<UnitQuaternion>>,
    /// Ground-truth navigation-frame position, m.
    pub gt_positions: Vec<Vec3>,
}

/// Validation failures when assembling or loading a sequence.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SequenceError {
    #[error("sequence needs at least 2 samples, got {len}")]
    TooShort { len: usize },
    #[error("channel lengths differ: {what} has {got}, expected {expect}")]
    LengthMismatch { what: &'static str, got: usize, expect: usize },
    #[error("sample rate must be positive, got {rate}")]
    BadSampleRate { rate: f64 },
    #[error("timestamps not strictly increasing at row {row}")]
    NonMonotonicTimestamps { row: usize },
    #[error("timestamp spacing at row {row} deviates from 1/rate by {dev:e}")]
    NonUniformSpacing { row: usize, dev: f64 },
    #[error("orientation at row {row} is {dev:e} away from unit norm")]
    BadQuaternion { row: usize, dev: f64 },
    #[error("sequence has no {0:?} orientation channel")]
    MissingOrientations(OrientationSource),
}

impl ImuSequence {
    /// Assemble and validate. Quaternions within 1e-3 of unit norm are
    /// renormalized; anything further off is a data error.
    pub fn new(
        meta: SequenceMeta,
        timestamps: Vec<f64>,
        gyro: Vec<Vec3>,
        accel: Vec<Vec3>,
        mut orientations: Vec<UnitQuaternion>,
        gt_positions: Vec<Vec3>,
    ) -> Result<Self, SequenceError> {
        let len = timestamps.len();
        if len < 2 {
            return Err(SequenceError::TooShort { len });
        }
        if !(meta.sample_rate_hz > 0.0) {
            return Err(SequenceError::BadSampleRate { rate: meta.sample_rate_hz });
        }
        for (what, got) in [
            ("gyro", gyro.len()),
            ("accel", accel.len()),
            ("orientations", orientations.len()),
            ("gt_positions", gt_positions.len()),
        ] {
            if got != len {
                return Err(SequenceError::LengthMismatch { what, got, expect: len });
            }
        }
        let dt = 1.0 / meta.sample_rate_hz;
        for row in 1..len {
            let step = timestamps[row] - timestamps[row - 1];
            if step <= 0.0 {
                return Err(SequenceError::NonMonotonicTimestamps { row });
            }
            let dev = crate::fm::abs(step - dt);
            if dev > 1e-9 {
                return Err(SequenceError::NonUniformSpacing { row, dev });
            }
        }
        for (row, q) in orientations.iter_mut().enumerate() {
            let dev = crate::fm::abs(q.norm() - 1.0);
            if dev > 1e-3 {
                return Err(SequenceError::BadQuaternion { row, dev });
            }
            *q = UnitQuaternion::from_components(q.w, q.x, q.y, q.z)
                .ok_or(SequenceError::BadQuaternion { row, dev })?;
        }
        Ok(Self {
            meta,
            timestamps,
            gyro,
            accel,
            orientations,
            device_orientations: None,
            gt_positions,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.meta.sample_rate_hz
    }

    /// Gravity vector to subtract from navigation-frame specific force
    /// (+Z opposes gravity, so the vector points up).
    pub fn gravity_vec(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.meta.gravity)
    }

    /// Per-sample orientations for the requested source.
    ///
    /// `ImuIntegrated` propagates the first ground-truth orientation through
    /// the gyro channel; `DeviceEstimated` requires the optional channel.
    pub fn resolve_orientations(
        &self,
        source: OrientationSource,
    ) -> Result<Vec<UnitQuaternion>, SequenceError> {
        match source {
            OrientationSource::GroundTruth => Ok(self.orientations.clone()),
            OrientationSource::DeviceEstimated => self
                .device_orientations
                .clone()
                .ok_or(SequenceError::MissingOrientations(source)),
            OrientationSource::ImuIntegrated => {
                let dt = self.dt();
                let mut out = Vec::with_capacity(self.len());
                let mut q = self.orientations[0];
                out.push(q);
                for k in 1..self.len() {
                    q = q.mul(UnitQuaternion::from_angular_rate(self.gyro[k - 1], dt));
                    out.push(q);
                }
                Ok(out)
            }
        }
    }

    /// Copy with the ground-truth orientation channel replaced by the
    /// requested source (used to feed windowing with a chosen policy).
    pub fn with_orientation_source(
        &self,
        source: OrientationSource,
    ) -> Result<ImuSequence, SequenceError> {
        let mut out = self.clone();
        out.orientations = self.resolve_orientations(source)?;
        Ok(out)
    }
}

/// Where window rotation and baselines take their orientations from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum OrientationSource {
    GroundTruth,
    DeviceEstimated,
    ImuIntegrated,
}

/// Which split a sequence is being prepared for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Phase {
    Train,
    Validate,
    Test,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("unknown dataset kind {0:?}")]
    UnknownDatasetKind(String),
}

/// Orientation-source policy per dataset family and phase.
///
/// RIDI uses IMU-integrated orientations everywhere. OxIOD trains and
/// validates on ground truth but tests on the device estimate. RoNIN tests on
/// the device estimate; its train/validate rule (device estimate unless the
/// end-sequence alignment error exceeds 20°) is data-conditional and collapses
/// to ground truth here, where estimated channels are synthesized rather than
/// recorded. IDOL, CTIN-style captures, and synthetic data use ground truth
/// throughout.
pub fn select_orientation(dataset_kind: &str, phase: Phase) -> Result<OrientationSource, PolicyError> {
    let kind = dataset_kind.to_lowercase();
    Ok(match (kind.as_str(), phase) {
        ("ridi", _) => OrientationSource::ImuIntegrated,
        ("oxiod", Phase::Test) => OrientationSource::DeviceEstimated,
        ("oxiod", _) => OrientationSource::GroundTruth,
        ("ronin", Phase::Test) => OrientationSource::DeviceEstimated,
        ("ronin", _) => OrientationSource::GroundTruth,
        ("idol" | "ctin" | "synthetic", _) => OrientationSource::GroundTruth,
        _ => return Err(PolicyError::UnknownDatasetKind(dataset_kind.into())),
    })
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

/// One sinusoidal speed-modulation term.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HarmonicTerm {
    /// Relative amplitude (fraction of base speed).
    pub amp: f64,
    pub freq_hz: f64,
    pub phase: f64,
}

/// Speed along the path: constant, or a base speed with sinusoidal
/// modulation (a gait-like surge profile).
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SpeedProfile {
    Constant(f64),
    Modulated { base: f64, terms: Vec<HarmonicTerm> },
}

impl SpeedProfile {
    pub fn base(&self) -> f64 {
        match self {
            SpeedProfile::Constant(v) => *v,
            SpeedProfile::Modulated { base, .. } => *base,
        }
    }

    fn terms(&self) -> &[HarmonicTerm] {
        match self {
            SpeedProfile::Constant(_) => &[],
            SpeedProfile::Modulated { terms, .. } => terms,
        }
    }

    /// Instantaneous speed.
    pub fn speed(&self, t: f64) -> f64 {
        let v0 = self.base();
        let mut s = v0;
        for h in self.terms() {
            s += v0 * h.amp * crate::fm::sin(2.0 * core::f64::consts::PI * h.freq_hz * t + h.phase);
        }
        s
    }

    /// Exact distance along the path since t = 0.
    pub fn distance(&self, t: f64) -> f64 {
        let v0 = self.base();
        let mut d = v0 * t;
        for h in self.terms() {
            let w = 2.0 * core::f64::consts::PI * h.freq_hz;
            d += v0 * h.amp / w * (crate::fm::cos(h.phase) - crate::fm::cos(w * t + h.phase));
        }
        d
    }

    fn validate(&self) -> Result<(), SynthError> {
        let v0 = self.base();
        if !(v0 > 0.0) {
            return Err(SynthError::BadSpeed { speed: v0 });
        }
        let total: f64 = self.terms().iter().map(|h| crate::fm::abs(h.amp)).sum();
        if total >= 0.95 {
            return Err(SynthError::SpeedModulationTooDeep { total });
        }
        for h in self.terms() {
            if !(h.freq_hz > 0.0) {
                return Err(SynthError::BadSpeed { speed: h.freq_hz });
            }
        }
        Ok(())
    }
}

/// Closed-form trajectory families.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TrajectoryKind {
    /// Straight path at a fixed heading (rad).
    Line { heading: f64 },
    /// Circle of the given radius; `ccw` picks the turn direction. Starts at
    /// the origin heading +X.
    Circle { radius_m: f64, ccw: bool },
    /// Lissajous figure-eight with the given lobe amplitudes, traversed once
    /// per `cycle_s` seconds of path time.
    FigureEight { amp_x_m: f64, amp_y_m: f64, cycle_s: f64 },
    /// Slowly rotating base heading at `turn_rate` rad/s; over a long
    /// sequence the heading sweeps the full circle.
    RandomHeadingWalk { turn_rate: f64, initial_heading: f64 },
}

/// Recipe for one synthetic sequence.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticSpec {
    pub trajectory: TrajectoryKind,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub speed: SpeedProfile,
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
    pub gyro_noise_std: f64,
    pub accel_noise_std: f64,
    pub rng_seed: u64,
    /// When set, a device-estimated orientation channel is synthesized as the
    /// ground truth perturbed by a yaw random walk with this std (rad/√s).
    #[cfg_attr(feature = "serde", serde(default))]
    pub device_yaw_walk_std: Option<f64>,
    #[cfg_attr(feature = "serde", serde(default = "default_gravity"))]
    pub gravity: f64,
}

#[cfg(feature = "serde")]
fn default_gravity() -> f64 {
    STANDARD_GRAVITY
}

impl SyntheticSpec {
    /// Constant-speed spec with no bias, noise, or estimated channel.
    pub fn clean(trajectory: TrajectoryKind, duration_s: f64, sample_rate_hz: f64, speed: f64) -> Self {
        Self {
            trajectory,
            duration_s,
            sample_rate_hz,
            speed: SpeedProfile::Constant(speed),
            gyro_bias: Vec3::ZERO,
            accel_bias: Vec3::ZERO,
            gyro_noise_std: 0.0,
            accel_noise_std: 0.0,
            rng_seed: 0,
            device_yaw_walk_std: None,
            gravity: STANDARD_GRAVITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("duration must be positive and cover at least 2 samples, got {0}")]
    BadDuration(f64),
    #[error("sample rate must be positive, got {0}")]
    BadRate(f64),
    #[error("noise std must be nonnegative, got {0}")]
    BadNoise(f64),
    #[error("speed and modulation frequencies must be positive, got {speed}")]
    BadSpeed { speed: f64 },
    #[error("speed modulation amplitudes sum to {total}, speed would cross zero")]
    SpeedModulationTooDeep { total: f64 },
    #[error("trajectory parameter out of range: {0}")]
    BadTrajectory(&'static str),
}

/// Evaluated analytic state at one instant.
struct TrajSample {
    pos: (f64, f64),
    heading: f64,
}

struct Trajectory<'a> {
    kind: &'a TrajectoryKind,
    speed: &'a SpeedProfile,
}

impl Trajectory<'_> {
    fn validate(&self) -> Result<(), SynthError> {
        match self.kind {
            TrajectoryKind::Line { .. } => Ok(()),
            TrajectoryKind::Circle { radius_m, .. } => {
                if *radius_m > 0.0 {
                    Ok(())
                } else {
                    Err(SynthError::BadTrajectory("circle radius must be positive"))
                }
            }
            TrajectoryKind::FigureEight { amp_x_m, amp_y_m, cycle_s } => {
                if *amp_x_m > 0.0 && *amp_y_m > 0.0 && *cycle_s > 0.0 {
                    Ok(())
                } else {
                    Err(SynthError::BadTrajectory("figure-eight amplitudes and cycle must be positive"))
                }
            }
            TrajectoryKind::RandomHeadingWalk { turn_rate, .. } => {
                if crate::fm::abs(*turn_rate) < 1e-4 {
                    return Err(SynthError::BadTrajectory("walk turn rate must be nonzero"));
                }
                // Modulation frequencies must stay clear of the turn rate so
                // the closed-form integral has no vanishing denominators.
                for h in self.speed.terms() {
                    let w = 2.0 * core::f64::consts::PI * h.freq_hz;
                    if crate::fm::abs(w - crate::fm::abs(*turn_rate)) < 1e-6 {
                        return Err(SynthError::BadTrajectory(
                            "speed modulation frequency coincides with walk turn rate",
                        ));
                    }
                }
                Ok(())
            }
        }
    }

    fn at(&self, t: f64) -> TrajSample {
        let dist = self.speed.distance(t);
        match *self.kind {
            TrajectoryKind::Line { heading } => TrajSample {
                pos: (dist * crate::fm::cos(heading), dist * crate::fm::sin(heading)),
                heading,
            },
            TrajectoryKind::Circle { radius_m, ccw } => {
                let theta = dist / radius_m;
                let y = radius_m * (1.0 - crate::fm::cos(theta));
                if ccw {
                    TrajSample { pos: (radius_m * crate::fm::sin(theta), y), heading: wrap_angle(theta) }
                } else {
                    TrajSample { pos: (radius_m * crate::fm::sin(theta), -y), heading: wrap_angle(-theta) }
                }
            }
            TrajectoryKind::FigureEight { amp_x_m, amp_y_m, cycle_s } => {
                let v0 = self.speed.base();
                let w = 2.0 * core::f64::consts::PI / cycle_s;
                let tau = dist / v0;
                let vx = amp_x_m * w * crate::fm::cos(w * tau);
                let vy = 2.0 * amp_y_m * w * crate::fm::cos(2.0 * w * tau);
                TrajSample {
                    pos: (amp_x_m * crate::fm::sin(w * tau), amp_y_m * crate::fm::sin(2.0 * w * tau)),
                    heading: crate::fm::atan2(vy, vx),
                }
            }
            TrajectoryKind::RandomHeadingWalk { turn_rate, initial_heading } => {
                let (px, py) = walk_position(self.speed, turn_rate, initial_heading, t);
                TrajSample { pos: (px, py), heading: wrap_angle(initial_heading + turn_rate * t) }
            }
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * core::f64::consts::PI;
    let mut x = a % two_pi;
    if x > core::f64::consts::PI {
        x -= two_pi;
    } else if x <= -core::f64::consts::PI {
        x += two_pi;
    }
    x
}

/// ∫₀ᵗ s(τ)·(cos(ψ0+Ωτ), sin(ψ0+Ωτ)) dτ in closed form via product-to-sum
/// expansion of the speed modulation.
fn walk_position(speed: &SpeedProfile, omega: f64, psi0: f64, t: f64) -> (f64, f64) {
    let v0 = speed.base();
    let mut px = v0 / omega * (crate::fm::sin(psi0 + omega * t) - crate::fm::sin(psi0));
    let mut py = -v0 / omega * (crate::fm::cos(psi0 + omega * t) - crate::fm::cos(psi0));
    for h in speed.terms() {
        let a = v0 * h.amp;
        let w = 2.0 * core::f64::consts::PI * h.freq_hz;
        let (wp, wm) = (w + omega, w - omega);
        let (pp, pm) = (h.phase + psi0, h.phase - psi0);
        // sin(wτ+φ)cos(Ωτ+ψ0) = ½[sin(wp·τ+pp) + sin(wm·τ+pm)]
        px += -a / 2.0 * (crate::fm::cos(wp * t + pp) - crate::fm::cos(pp)) / wp
            - a / 2.0 * (crate::fm::cos(wm * t + pm) - crate::fm::cos(pm)) / wm;
        // sin(wτ+φ)sin(Ωτ+ψ0) = ½[cos(wm·τ+pm) − cos(wp·τ+pp)]
        py += a / 2.0 * (crate::fm::sin(wm * t + pm) - crate::fm::sin(pm)) / wm
            - a / 2.0 * (crate::fm::sin(wp * t + pp) - crate::fm::sin(pp)) / wp;
    }
    (px, py)
}

/// Generate a synthetic sequence from the spec.
///
/// Orientations (yaw along the instantaneous heading) and positions store the
/// exact closed-form values. Rate channels are built so the strapdown
/// recurrence holds exactly sample-to-sample; measured channels add the spec's
/// constant bias and white Gaussian noise on top. Equal seeds give
/// bit-identical sequences.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<ImuSequence, SynthError> {
    if !(spec.duration_s > 0.0) {
        return Err(SynthError::BadDuration(spec.duration_s));
    }
    if !(spec.sample_rate_hz > 0.0) {
        return Err(SynthError::BadRate(spec.sample_rate_hz));
    }
    if spec.gyro_noise_std < 0.0 {
        return Err(SynthError::BadNoise(spec.gyro_noise_std));
    }
    if spec.accel_noise_std < 0.0 {
        return Err(SynthError::BadNoise(spec.accel_noise_std));
    }
    spec.speed.validate()?;
    let traj = Trajectory { kind: &spec.trajectory, speed: &spec.speed };
    traj.validate()?;

    let rate = spec.sample_rate_hz;
    let dt = 1.0 / rate;
    let len = crate::fm::round(spec.duration_s * rate) as usize;
    if len < 2 {
        return Err(SynthError::BadDuration(spec.duration_s));
    }

    // Sample two steps past the end so forward differences exist everywhere.
    let mut pos = Vec::with_capacity(len + 2);
    let mut quat = Vec::with_capacity(len + 1);
    for k in 0..len + 2 {
        let s = traj.at(k as f64 * dt);
        pos.push(Vec3::new(s.pos.0, s.pos.1, 0.0));
        if k <= len {
            quat.push(UnitQuaternion::yaw_rotation(s.heading));
        }
    }
    // Forward-difference velocity, exact w.r.t. the stored positions.
    let vel: Vec<Vec3> = (0..len + 1).map(|k| (pos[k + 1] - pos[k]).scale(rate)).collect();
    let g_up = Vec3::new(0.0, 0.0, spec.gravity);

    let mut noise_rng = rng::stream(spec.rng_seed, 0);
    let mut normal = rng::Normal::new();
    let mut gyro = Vec::with_capacity(len);
    let mut accel = Vec::with_capacity(len);
    for k in 0..len {
        let true_gyro = UnitQuaternion::rate_between(quat[k], quat[k + 1], dt);
        let dv = (vel[k + 1] - vel[k]).scale(rate);
        let true_accel = quat[k].conj().rotate(dv + g_up);
        let ng = Vec3::new(
            normal.sample(&mut noise_rng),
            normal.sample(&mut noise_rng),
            normal.sample(&mut noise_rng),
        )
        .scale(spec.gyro_noise_std);
        let na = Vec3::new(
            normal.sample(&mut noise_rng),
            normal.sample(&mut noise_rng),
            normal.sample(&mut noise_rng),
        )
        .scale(spec.accel_noise_std);
        gyro.push(true_gyro + spec.gyro_bias + ng);
        accel.push(true_accel + spec.accel_bias + na);
    }

    let timestamps: Vec<f64> = (0..len).map(|k| k as f64 * dt).collect();
    let meta = SequenceMeta {
        sample_rate_hz: rate,
        dataset_kind: "synthetic".into(),
        subject: "synthetic".into(),
        gravity: spec.gravity,
    };
    let mut seq = ImuSequence::new(
        meta,
        timestamps,
        gyro,
        accel,
        quat[..len].to_vec(),
        pos[..len].to_vec(),
    )
    .expect("generator output satisfies sequence invariants");

    if let Some(std) = spec.device_yaw_walk_std {
        let mut walk_rng = rng::stream(spec.rng_seed, 1);
        let mut normal = rng::Normal::new();
        let step = std * crate::fm::sqrt(dt);
        let mut offset = 0.0;
        let device = seq
            .orientations
            .iter()
            .map(|q| {
                offset += step * normal.sample(&mut walk_rng);
                UnitQuaternion::yaw_rotation(offset).mul(*q)
            })
            .collect();
        seq.device_orientations = Some(device);
    }
    Ok(seq)
}
