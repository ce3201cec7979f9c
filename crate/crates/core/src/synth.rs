//! Synthetic binocular recordings with exact geometric ground truth.
//!
//! A fixation target travels from `depth_min` out to `depth_max` and back
//! while circling `spiral_cycles` times around the forward axis. The circle is
//! seen edge-on from the side: the target stays on the median plane (x = 0)
//! and only its height follows `spiral_radius * sin(phase)`, which keeps the
//! left and right lines of sight the same length so that the vergence
//! triangle is exactly isosceles. Both eyes look at the target exactly; the
//! recorded directions are then perturbed by a per-subject constant rotation
//! (the uncalibrated offset between optical and visual axis) and by
//! independent per-frame angular noise.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{GazeSample, SubjectRecording};
use crate::kv::{KvError, KvMap};
use crate::rng::{self, tag};
use crate::vec3::Vec3;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] KvError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub frames_per_subject: usize,
    /// cm
    pub depth_min: f64,
    /// cm
    pub depth_max: f64,
    /// Revolutions of the circling motion per out-and-back sweep.
    pub spiral_cycles: u32,
    /// Vertical amplitude of the circling motion in cm; below `depth_min`.
    pub spiral_radius: f64,
    pub noise_sigma_deg: f64,
    pub bias_sigma_deg: f64,
    /// cm
    pub ipd_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 6,
            frames_per_subject: 3000,
            depth_min: 35.0,
            depth_max: 300.0,
            spiral_cycles: 1,
            spiral_radius: 30.0,
            noise_sigma_deg: 0.5,
            bias_sigma_deg: 1.0,
            ipd_range: (5.8, 7.0),
            seed: 42,
        }
    }
}

pub const CONFIG_KEYS: [&str; 11] = [
    "n_subjects",
    "frames_per_subject",
    "depth_min",
    "depth_max",
    "spiral_cycles",
    "spiral_radius",
    "noise_sigma_deg",
    "bias_sigma_deg",
    "ipd_min",
    "ipd_max",
    "seed",
];

impl SynthConfig {
    /// Noise-free geometry: both sigmas zero.
    pub fn noiseless(n_subjects: usize, frames_per_subject: usize, seed: u64) -> Self {
        Self {
            n_subjects,
            frames_per_subject,
            noise_sigma_deg: 0.0,
            bias_sigma_deg: 0.0,
            seed,
            ..Self::default()
        }
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self, SynthError> {
        kv.check_keys(&CONFIG_KEYS)?;
        let mut cfg = Self::default();
        kv.apply("n_subjects", &mut cfg.n_subjects)?;
        kv.apply("frames_per_subject", &mut cfg.frames_per_subject)?;
        kv.apply("depth_min", &mut cfg.depth_min)?;
        kv.apply("depth_max", &mut cfg.depth_max)?;
        kv.apply("spiral_cycles", &mut cfg.spiral_cycles)?;
        kv.apply("spiral_radius", &mut cfg.spiral_radius)?;
        kv.apply("noise_sigma_deg", &mut cfg.noise_sigma_deg)?;
        kv.apply("bias_sigma_deg", &mut cfg.bias_sigma_deg)?;
        kv.apply("ipd_min", &mut cfg.ipd_range.0)?;
        kv.apply("ipd_max", &mut cfg.ipd_range.1)?;
        kv.apply("seed", &mut cfg.seed)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Invalid(m.to_string()));
        if self.n_subjects < 1 || self.frames_per_subject < 1 {
            return bad("counts must be at least 1");
        }
        if !(self.depth_min > 0.0 && self.depth_min < self.depth_max && self.depth_max.is_finite())
        {
            return bad("need 0 < depth_min < depth_max");
        }
        if !(self.spiral_radius >= 0.0 && self.spiral_radius < self.depth_min) {
            return bad("need 0 <= spiral_radius < depth_min");
        }
        if !(self.noise_sigma_deg >= 0.0 && self.bias_sigma_deg >= 0.0) {
            return bad("sigmas must be non-negative");
        }
        let (lo, hi) = self.ipd_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("need 0 < ipd_min <= ipd_max");
        }
        Ok(())
    }
}

/// Distance of the target from the cyclopean origin at sweep phase `t`.
pub fn target_distance(t: f64, cfg: &SynthConfig) -> f64 {
    let t = t.clamp(0.0, 1.0);
    let tri = if t <= 0.5 { 2.0 * t } else { 2.0 * (1.0 - t) };
    cfg.depth_min + (cfg.depth_max - cfg.depth_min) * tri
}

/// Target position at sweep phase `t` in `[0, 1]`.
pub fn target_trajectory(t: f64, cfg: &SynthConfig) -> Vec3 {
    let d = target_distance(t, cfg);
    let phi = std::f64::consts::TAU * f64::from(cfg.spiral_cycles) * t.clamp(0.0, 1.0);
    let rho = cfg.spiral_radius;
    let y = rho * phi.sin();
    Vec3::new(0.0, y, (d * d - y * y).sqrt())
}

/// Phase of frame `i` among `n`.
pub fn frame_phase(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

/// Uniformly random unit vector perpendicular to unit `d`.
fn random_perpendicular(d: Vec3, rng: &mut rng::Rng) -> Vec3 {
    let helper = if d.x.abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let u = d.cross(helper).normalized();
    let w = d.cross(u);
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    u * theta.cos() + w * theta.sin()
}

/// Rotates unit `d` by `angle` about a random axis perpendicular to it.
fn jitter(d: Vec3, angle: f64, rng: &mut rng::Rng) -> Vec3 {
    if angle == 0.0 {
        return d;
    }
    let axis = random_perpendicular(d, rng);
    d.rotated(axis, angle).normalized()
}

struct EyeBias {
    axis: Vec3,
    angle: f64,
}

impl EyeBias {
    fn draw(sigma_rad: f64, rng: &mut rng::Rng) -> Self {
        let axis = random_perpendicular(Vec3::new(0.0, 0.0, 1.0), rng);
        let angle = if sigma_rad > 0.0 {
            Normal::new(0.0, sigma_rad)
                .expect("finite sigma")
                .sample(rng)
        } else {
            0.0
        };
        Self { axis, angle }
    }

    fn apply(&self, d: Vec3) -> Vec3 {
        if self.angle == 0.0 {
            d
        } else {
            d.rotated(self.axis, self.angle).normalized()
        }
    }
}

pub fn subject_id(subject_index: usize) -> String {
    format!("s{:02}", subject_index + 1)
}

/// Generates one subject; deterministic in `(cfg.seed, subject_index)`.
pub fn generate_subject(cfg: &SynthConfig, subject_index: usize) -> SubjectRecording {
    let mut rng = rng::stream(cfg.seed, &[tag::SYNTH, subject_index as u64]);
    let (lo, hi) = cfg.ipd_range;
    let ipd = lo + (hi - lo) * rng.random::<f64>();
    let bias_l = EyeBias::draw(cfg.bias_sigma_deg.to_radians(), &mut rng);
    let bias_r = EyeBias::draw(cfg.bias_sigma_deg.to_radians(), &mut rng);
    let noise = Normal::new(0.0, cfg.noise_sigma_deg.to_radians()).expect("finite sigma");

    let origin_l = Vec3::new(-ipd / 2.0, 0.0, 0.0);
    let origin_r = Vec3::new(ipd / 2.0, 0.0, 0.0);
    let id = subject_id(subject_index);
    let n = cfg.frames_per_subject;
    let samples = (0..n)
        .map(|i| {
            let t = frame_phase(i, n);
            let target = target_trajectory(t, cfg);
            let mut dir_l = bias_l.apply((target - origin_l).normalized());
            let mut dir_r = bias_r.apply((target - origin_r).normalized());
            if cfg.noise_sigma_deg > 0.0 {
                dir_l = jitter(dir_l, noise.sample(&mut rng), &mut rng);
                dir_r = jitter(dir_r, noise.sample(&mut rng), &mut rng);
            }
            GazeSample {
                subject_id: id.clone(),
                frame_index: i as u64,
                origin_l,
                origin_r,
                dir_l,
                dir_r,
                gt_depth: Some(target.norm()),
            }
        })
        .collect();
    SubjectRecording {
        subject_id: id,
        samples,
    }
}

/// All subjects of `cfg`, generated in parallel with per-subject streams.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SubjectRecording>, SynthError> {
    cfg.validate()?;
    Ok((0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| generate_subject(cfg, i))
        .collect())
}
