//! Per-timestep binocular gaze features.
//!
//! The canonical table ([`FeatureName::ALL`]) has 54 entries in three groups:
//! primary quantities (raw inputs, vergence angle and depth, IPD), ratios and
//! differences between the eyes, and higher-order dynamics (first and second
//! finite differences). Positions in [`FeatureFrame::features`] follow the
//! table order exactly.

use serde::Serialize;
use thiserror::Error;

use crate::dataset::SubjectRecording;
use crate::vec3::Vec3;

/// Depth assigned to near-parallel gaze, in cm.
pub const DEFAULT_DEPTH_CAP: f64 = 1000.0;

/// Denominator floor for [`safe_ratio`].
pub const RATIO_EPS: f64 = 1e-6;

pub const FEATURE_COUNT: usize = 54;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("zero-length gaze direction (frame {frame_index})")]
    ZeroDirectionVector { frame_index: u64 },
    #[error("recording `{0}` is empty")]
    EmptyRecording(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Primary,
    RatiosDifferences,
    Dynamics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureName {
    OriginLX,
    OriginLY,
    OriginLZ,
    OriginRX,
    OriginRY,
    OriginRZ,
    DirLX,
    DirLY,
    DirLZ,
    DirRX,
    DirRY,
    DirRZ,
    VergenceAngle,
    VergenceAngleNormalized,
    VergenceAngleCos,
    VergenceDepth,
    VergenceDepthNormalized,
    Ipd,
    DirMagnitudeL,
    DirMagnitudeR,
    DirMagnitudeRatio,
    GazePointDistance,
    AngularDifference,
    AngularDifferenceX,
    DepthDifference,
    WorldDirRatioX,
    WorldDirRatioY,
    WorldDirRatioZ,
    DeltaGazeRatioXY,
    VergenceAngleChange,
    VelocityDirLX,
    VelocityDirLY,
    VelocityDirLZ,
    VelocityDirRX,
    VelocityDirRY,
    VelocityDirRZ,
    AccelerationDirLX,
    AccelerationDirLY,
    AccelerationDirLZ,
    AccelerationDirRX,
    AccelerationDirRY,
    AccelerationDirRZ,
    VergenceAngleVelocity,
    VergenceAngleAcceleration,
    VergenceDepthVelocity,
    VergenceDepthAcceleration,
    DirDeltaX,
    DirDeltaY,
    DirDeltaZ,
    DepthDifferenceNormalized,
    AzimuthL,
    AzimuthR,
    ElevationL,
    ElevationR,
}

impl FeatureName {
    pub const ALL: [FeatureName; FEATURE_COUNT] = {
        use FeatureName::*;
        [
            OriginLX,
            OriginLY,
            OriginLZ,
            OriginRX,
            OriginRY,
            OriginRZ,
            DirLX,
            DirLY,
            DirLZ,
            DirRX,
            DirRY,
            DirRZ,
            VergenceAngle,
            VergenceAngleNormalized,
            VergenceAngleCos,
            VergenceDepth,
            VergenceDepthNormalized,
            Ipd,
            DirMagnitudeL,
            DirMagnitudeR,
            DirMagnitudeRatio,
            GazePointDistance,
            AngularDifference,
            AngularDifferenceX,
            DepthDifference,
            WorldDirRatioX,
            WorldDirRatioY,
            WorldDirRatioZ,
            DeltaGazeRatioXY,
            VergenceAngleChange,
            VelocityDirLX,
            VelocityDirLY,
            VelocityDirLZ,
            VelocityDirRX,
            VelocityDirRY,
            VelocityDirRZ,
            AccelerationDirLX,
            AccelerationDirLY,
            AccelerationDirLZ,
            AccelerationDirRX,
            AccelerationDirRY,
            AccelerationDirRZ,
            VergenceAngleVelocity,
            VergenceAngleAcceleration,
            VergenceDepthVelocity,
            VergenceDepthAcceleration,
            DirDeltaX,
            DirDeltaY,
            DirDeltaZ,
            DepthDifferenceNormalized,
            AzimuthL,
            AzimuthR,
            ElevationL,
            ElevationR,
        ]
    };

    /// Column position in a [`FeatureFrame`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        self.describe().0
    }

    pub fn formula(self) -> &'static str {
        self.describe().1
    }

    pub fn group(self) -> FeatureGroup {
        self.describe().2
    }

    fn describe(self) -> (&'static str, &'static str, FeatureGroup) {
        use FeatureGroup::*;
        use FeatureName::*;
        match self {
            OriginLX => ("origin_l_x", "left gaze origin x (cm)", Primary),
            OriginLY => ("origin_l_y", "left gaze origin y (cm)", Primary),
            OriginLZ => ("origin_l_z", "left gaze origin z (cm)", Primary),
            OriginRX => ("origin_r_x", "right gaze origin x (cm)", Primary),
            OriginRY => ("origin_r_y", "right gaze origin y (cm)", Primary),
            OriginRZ => ("origin_r_z", "right gaze origin z (cm)", Primary),
            DirLX => ("dir_l_x", "L_x", Primary),
            DirLY => ("dir_l_y", "L_y", Primary),
            DirLZ => ("dir_l_z", "L_z", Primary),
            DirRX => ("dir_r_x", "R_x", Primary),
            DirRY => ("dir_r_y", "R_y", Primary),
            DirRZ => ("dir_r_z", "R_z", Primary),
            VergenceAngle => (
                "vergence_angle",
                "VA = arccos(clamp(R.L / (|R||L|), -1, 1))",
                Primary,
            ),
            VergenceAngleNormalized => (
                "vergence_angle_normalized",
                "2 (VA - min VA) / (max VA - min VA) - 1, over the recording",
                Primary,
            ),
            VergenceAngleCos => ("vergence_angle_cos", "cos(VA)", Primary),
            VergenceDepth => (
                "vergence_depth",
                "VD = IPD / (2 tan(VA / 2)), capped at the depth cap for near-parallel gaze",
                Primary,
            ),
            VergenceDepthNormalized => (
                "vergence_depth_normalized",
                "(VD - min VD) / (max VD - min VD), over the recording",
                Primary,
            ),
            Ipd => ("ipd", "|origin_r - origin_l|", Primary),
            DirMagnitudeL => ("dir_magnitude_l", "|L|", RatiosDifferences),
            DirMagnitudeR => ("dir_magnitude_r", "|R|", RatiosDifferences),
            DirMagnitudeRatio => ("dir_magnitude_ratio", "|R| / |L|", RatiosDifferences),
            GazePointDistance => (
                "gaze_point_distance",
                "sqrt((L_x - R_x)^2 + (L_y - R_y)^2)",
                RatiosDifferences,
            ),
            AngularDifference => (
                "angular_difference",
                "atan2(|R x L|, R.L)",
                RatiosDifferences,
            ),
            AngularDifferenceX => (
                "angular_difference_x",
                "theta_RX - theta_LX with theta_X = atan2(d_x, d_z)",
                RatiosDifferences,
            ),
            DepthDifference => ("depth_difference", "R_z - L_z", RatiosDifferences),
            WorldDirRatioX => ("world_dir_ratio_x", "R_x / L_x", RatiosDifferences),
            WorldDirRatioY => ("world_dir_ratio_y", "R_y / L_y", RatiosDifferences),
            WorldDirRatioZ => ("world_dir_ratio_z", "R_z / L_z", RatiosDifferences),
            DeltaGazeRatioXY => (
                "delta_gaze_ratio_xy",
                "(R_x - L_x) / (R_y - L_y)",
                RatiosDifferences,
            ),
            VergenceAngleChange => ("vergence_angle_change", "VA_t - VA_(t-1)", Dynamics),
            VelocityDirLX => ("velocity_dir_l_x", "L_x,t - L_x,t-1", Dynamics),
            VelocityDirLY => ("velocity_dir_l_y", "L_y,t - L_y,t-1", Dynamics),
            VelocityDirLZ => ("velocity_dir_l_z", "L_z,t - L_z,t-1", Dynamics),
            VelocityDirRX => ("velocity_dir_r_x", "R_x,t - R_x,t-1", Dynamics),
            VelocityDirRY => ("velocity_dir_r_y", "R_y,t - R_y,t-1", Dynamics),
            VelocityDirRZ => ("velocity_dir_r_z", "R_z,t - R_z,t-1", Dynamics),
            AccelerationDirLX => ("acceleration_dir_l_x", "second difference of L_x", Dynamics),
            AccelerationDirLY => ("acceleration_dir_l_y", "second difference of L_y", Dynamics),
            AccelerationDirLZ => ("acceleration_dir_l_z", "second difference of L_z", Dynamics),
            AccelerationDirRX => ("acceleration_dir_r_x", "second difference of R_x", Dynamics),
            AccelerationDirRY => ("acceleration_dir_r_y", "second difference of R_y", Dynamics),
            AccelerationDirRZ => ("acceleration_dir_r_z", "second difference of R_z", Dynamics),
            VergenceAngleVelocity => ("vergence_angle_velocity", "VA_t - VA_(t-1)", Dynamics),
            VergenceAngleAcceleration => (
                "vergence_angle_acceleration",
                "second difference of VA",
                Dynamics,
            ),
            VergenceDepthVelocity => ("vergence_depth_velocity", "VD_t - VD_(t-1)", Dynamics),
            VergenceDepthAcceleration => (
                "vergence_depth_acceleration",
                "second difference of VD",
                Dynamics,
            ),
            DirDeltaX => ("dir_delta_x", "L_x - R_x", RatiosDifferences),
            DirDeltaY => ("dir_delta_y", "L_y - R_y", RatiosDifferences),
            DirDeltaZ => ("dir_delta_z", "L_z - R_z", RatiosDifferences),
            DepthDifferenceNormalized => (
                "depth_difference_normalized",
                "(R_z - L_z) mapped onto [0, 1] over the recording",
                RatiosDifferences,
            ),
            AzimuthL => ("azimuth_l", "theta_LX = atan2(L_x, L_z)", Primary),
            AzimuthR => ("azimuth_r", "theta_RX = atan2(R_x, R_z)", Primary),
            ElevationL => ("elevation_l", "atan2(L_y, sqrt(L_x^2 + L_z^2))", Primary),
            ElevationR => ("elevation_r", "atan2(R_y, sqrt(R_x^2 + R_z^2))", Primary),
        }
    }
}

const _: () = assert!(FeatureName::ALL.len() == FEATURE_COUNT);

/// One row of the feature table.
#[derive(Debug, Clone, Serialize)]
pub struct FeatureDescription {
    pub index: usize,
    pub name: &'static str,
    pub formula: &'static str,
    pub group: FeatureGroup,
}

pub fn feature_table() -> Vec<FeatureDescription> {
    FeatureName::ALL
        .iter()
        .map(|&f| FeatureDescription {
            index: f.index(),
            name: f.name(),
            formula: f.formula(),
            group: f.group(),
        })
        .collect()
}

pub fn feature_names() -> Vec<&'static str> {
    FeatureName::ALL.iter().map(|f| f.name()).collect()
}

/// Engineered features for one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub subject_id: String,
    pub frame_index: u64,
    pub features: [f64; FEATURE_COUNT],
    /// Ground-truth depth in cm, when known.
    pub gt_depth: Option<f64>,
}

impl FeatureFrame {
    pub fn get(&self, name: FeatureName) -> f64 {
        self.features[name.index()]
    }
}

pub fn interpupillary_distance(origin_l: Vec3, origin_r: Vec3) -> f64 {
    (origin_r - origin_l).norm()
}

/// Angle between the two gaze directions, in radians within `[0, pi]`.
pub fn vergence_angle(dir_l: Vec3, dir_r: Vec3) -> Result<f64, FeatureError> {
    let (nl, nr) = (dir_l.norm(), dir_r.norm());
    if nl <= 0.0 || nr <= 0.0 {
        return Err(FeatureError::ZeroDirectionVector { frame_index: 0 });
    }
    let cos = (dir_r.dot(dir_l) / (nr * nl)).clamp(-1.0, 1.0);
    Ok(cos.acos())
}

/// Smallest angle that still yields a depth below `depth_cap`.
pub fn angle_floor(ipd: f64, depth_cap: f64) -> f64 {
    2.0 * (ipd / 2.0 / depth_cap).atan()
}

/// Triangulated fixation distance `ipd / (2 tan(angle / 2))`. Angles at or
/// below [`angle_floor`] map to `depth_cap`.
pub fn vergence_depth(ipd: f64, angle: f64, depth_cap: f64) -> f64 {
    if angle <= angle_floor(ipd, depth_cap) {
        return depth_cap;
    }
    ipd / (2.0 * (angle / 2.0).tan())
}

/// Affine map of `[min, max]` of `series` onto `[lo, hi]`. A constant series
/// maps to the midpoint.
pub fn range_normalize(series: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let (min, max) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    let span = max - min;
    if span.is_nan() || span <= 0.0 {
        return vec![(lo + hi) / 2.0; series.len()];
    }
    series
        .iter()
        .map(|&x| (lo + (x - min) / span * (hi - lo)).clamp(lo.min(hi), hi.max(lo)))
        .collect()
}

pub fn directional_magnitude(v: Vec3) -> f64 {
    v.norm()
}

/// Distance between the two directions projected on the x/y plane.
pub fn gaze_point_distance(dir_l: Vec3, dir_r: Vec3) -> f64 {
    (dir_l.x - dir_r.x).hypot(dir_l.y - dir_r.y)
}

/// Backward differences with the first entry fixed at zero.
pub fn finite_difference(series: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    if series.is_empty() {
        return out;
    }
    out.push(0.0);
    out.extend(series.windows(2).map(|w| w[1] - w[0]));
    out
}

/// `a / b`, with `|b|` floored at [`RATIO_EPS`] (sign kept, `sign(0) = +1`).
pub fn safe_ratio(a: f64, b: f64) -> f64 {
    if b.abs() >= RATIO_EPS {
        a / b
    } else if b < 0.0 {
        a / -RATIO_EPS
    } else {
        a / RATIO_EPS
    }
}

fn azimuth(d: Vec3) -> f64 {
    d.x.atan2(d.z)
}

fn elevation(d: Vec3) -> f64 {
    d.y.atan2(d.x.hypot(d.z))
}

/// Computes one frame per sample. Normalized features are scaled over this
/// recording only; temporal features start at zero on the first frame.
pub fn compute_feature_frames(
    recording: &SubjectRecording,
) -> Result<Vec<FeatureFrame>, FeatureError> {
    compute_feature_frames_with_cap(recording, DEFAULT_DEPTH_CAP)
}

pub fn compute_feature_frames_with_cap(
    recording: &SubjectRecording,
    depth_cap: f64,
) -> Result<Vec<FeatureFrame>, FeatureError> {
    use FeatureName::*;
    let n = recording.samples.len();
    if n == 0 {
        return Err(FeatureError::EmptyRecording(recording.subject_id.clone()));
    }

    let mut frames: Vec<FeatureFrame> = Vec::with_capacity(n);
    for s in &recording.samples {
        let va =
            vergence_angle(s.dir_l, s.dir_r).map_err(|_| FeatureError::ZeroDirectionVector {
                frame_index: s.frame_index,
            })?;
        let ipd = interpupillary_distance(s.origin_l, s.origin_r);
        let (l, r) = (s.dir_l, s.dir_r);
        let mut f = [0.0; FEATURE_COUNT];
        f[OriginLX.index()] = s.origin_l.x;
        f[OriginLY.index()] = s.origin_l.y;
        f[OriginLZ.index()] = s.origin_l.z;
        f[OriginRX.index()] = s.origin_r.x;
        f[OriginRY.index()] = s.origin_r.y;
        f[OriginRZ.index()] = s.origin_r.z;
        f[DirLX.index()] = l.x;
        f[DirLY.index()] = l.y;
        f[DirLZ.index()] = l.z;
        f[DirRX.index()] = r.x;
        f[DirRY.index()] = r.y;
        f[DirRZ.index()] = r.z;
        f[VergenceAngle.index()] = va;
        f[VergenceAngleCos.index()] = va.cos();
        f[VergenceDepth.index()] = vergence_depth(ipd, va, depth_cap);
        f[Ipd.index()] = ipd;
        f[DirMagnitudeL.index()] = directional_magnitude(l);
        f[DirMagnitudeR.index()] = directional_magnitude(r);
        f[DirMagnitudeRatio.index()] = safe_ratio(r.norm(), l.norm());
        f[GazePointDistance.index()] = gaze_point_distance(l, r);
        f[AngularDifference.index()] = r.cross(l).norm().atan2(r.dot(l));
        f[AngularDifferenceX.index()] = azimuth(r) - azimuth(l);
        f[DepthDifference.index()] = r.z - l.z;
        f[WorldDirRatioX.index()] = safe_ratio(r.x, l.x);
        f[WorldDirRatioY.index()] = safe_ratio(r.y, l.y);
        f[WorldDirRatioZ.index()] = safe_ratio(r.z, l.z);
        f[DeltaGazeRatioXY.index()] = safe_ratio(r.x - l.x, r.y - l.y);
        f[DirDeltaX.index()] = l.x - r.x;
        f[DirDeltaY.index()] = l.y - r.y;
        f[DirDeltaZ.index()] = l.z - r.z;
        f[AzimuthL.index()] = azimuth(l);
        f[AzimuthR.index()] = azimuth(r);
        f[ElevationL.index()] = elevation(l);
        f[ElevationR.index()] = elevation(r);
        frames.push(FeatureFrame {
            subject_id: recording.subject_id.clone(),
            frame_index: s.frame_index,
            features: f,
            gt_depth: s.gt_depth,
        });
    }

    let column = |frames: &[FeatureFrame], name: FeatureName| -> Vec<f64> {
        frames.iter().map(|fr| fr.get(name)).collect()
    };
    let set = |frames: &mut [FeatureFrame], name: FeatureName, values: Vec<f64>| {
        for (fr, v) in frames.iter_mut().zip(values) {
            fr.features[name.index()] = v;
        }
    };

    let va = column(&frames, VergenceAngle);
    let vd = column(&frames, VergenceDepth);
    let dd = column(&frames, DepthDifference);
    set(
        &mut frames,
        VergenceAngleNormalized,
        range_normalize(&va, -1.0, 1.0),
    );
    set(
        &mut frames,
        VergenceDepthNormalized,
        range_normalize(&vd, 0.0, 1.0),
    );
    set(
        &mut frames,
        DepthDifferenceNormalized,
        range_normalize(&dd, 0.0, 1.0),
    );

    let va_vel = finite_difference(&va);
    let vd_vel = finite_difference(&vd);
    set(&mut frames, VergenceAngleChange, va_vel.clone());
    set(
        &mut frames,
        VergenceAngleAcceleration,
        finite_difference(&va_vel),
    );
    set(&mut frames, VergenceAngleVelocity, va_vel);
    set(
        &mut frames,
        VergenceDepthAcceleration,
        finite_difference(&vd_vel),
    );
    set(&mut frames, VergenceDepthVelocity, vd_vel);

    let dynamics = [
        (DirLX, VelocityDirLX, AccelerationDirLX),
        (DirLY, VelocityDirLY, AccelerationDirLY),
        (DirLZ, VelocityDirLZ, AccelerationDirLZ),
        (DirRX, VelocityDirRX, AccelerationDirRX),
        (DirRY, VelocityDirRY, AccelerationDirRY),
        (DirRZ, VelocityDirRZ, AccelerationDirRZ),
    ];
    for (src, vel, acc) in dynamics {
        let v = finite_difference(&column(&frames, src));
        set(&mut frames, acc, finite_difference(&v));
        set(&mut frames, vel, v);
    }

    debug_assert!(frames
        .iter()
        .all(|fr| fr.features.iter().all(|x| x.is_finite())));
    Ok(frames)
}

/// Features for several recordings, one `Vec` per subject.
pub fn compute_all(
    recordings: &[SubjectRecording],
) -> Result<Vec<Vec<FeatureFrame>>, FeatureError> {
    recordings.iter().map(compute_feature_frames).collect()
}
