//! Synthetic multi-scene video benchmark with ground-truth anomaly labels.
//!
//! A scene plays the role of one fixed camera: it owns a distinct background
//! and one motion pattern, while the object catalog is shared. Normal videos
//! move a handful of catalog objects along the scene's pattern, each at its
//! own speed inside the normal envelope. The test split injects three
//! anomaly families:
//!
//! - scene-swap: the motion pattern of a *different* scene — legal footage in
//!   the wrong camera, detectable only with the scene label;
//! - speed: the scene's own pattern far outside the speed envelope;
//! - appearance: an object texture absent from the catalog.
//!
//! Injection decisions are logged, and the per-frame labels are produced from
//! that log, so tests can cross-check the two independently. The train split
//! never consults the injectors at all.

use crate::error::Result;
use crate::require;
use crate::tensor::{Real, Tensor};
use crate::video::VideoSequence;
use rand::Rng;

/// Normal per-frame speeds (pixels/frame) a scene's pattern may use.
pub const NORMAL_SPEEDS: [i64; 2] = [1, 2];
/// Speed used by the speed-anomaly injector; far outside [`NORMAL_SPEEDS`].
pub const ANOMALOUS_SPEED: i64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Square,
    Disc,
    Ring,
}

/// One drawable object: shape, RGB color, side/diameter in pixels.
#[derive(Clone, Debug)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub color: [f64; 3],
    pub size: usize,
}

/// Unit step direction of a scene's motion pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MotionPattern {
    pub dx: i64,
    pub dy: i64,
}

const PATTERNS: [MotionPattern; 4] = [
    MotionPattern { dx: 1, dy: 0 },
    MotionPattern { dx: 0, dy: 1 },
    MotionPattern { dx: 1, dy: 1 },
    MotionPattern { dx: -1, dy: 1 },
];

#[derive(Clone, Copy, Debug)]
pub struct AnomalyRates {
    pub scene: f64,
    pub motion: f64,
    pub appearance: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticDatasetSpec {
    pub scenes: usize,
    pub train_videos_per_scene: usize,
    pub test_videos_per_scene: usize,
    pub frames_per_video: usize,
    /// Square frame edge H = W.
    pub frame_size: usize,
    pub channels: usize,
    /// Independently drawn movers per video, all following the scene pattern.
    pub objects_per_video: usize,
    /// Zero-mean Gaussian camera grain added to every pixel of every frame
    /// (clamped back to [0,1]). Keeps no patch perfectly static.
    pub sensor_noise: f64,
    pub catalog: Vec<ObjectSpec>,
    /// One motion pattern per scene.
    pub scene_patterns: Vec<MotionPattern>,
    pub anomaly_rates: AnomalyRates,
    pub seed: u64,
}

impl SyntheticDatasetSpec {
    /// Desk-scale defaults: 32×32×3 frames, catalog of three shapes, one
    /// pattern per scene drawn from the built-in pattern table. With two
    /// scenes this is the 20-video smoke preset.
    pub fn tiny(scenes: usize, seed: u64) -> Self {
        let size = 32;
        SyntheticDatasetSpec {
            scenes,
            train_videos_per_scene: 5,
            test_videos_per_scene: 5,
            frames_per_video: 64,
            frame_size: size,
            channels: 3,
            objects_per_video: 3,
            sensor_noise: 0.01,
            catalog: default_catalog(size),
            scene_patterns: (0..scenes).map(|s| PATTERNS[s % PATTERNS.len()]).collect(),
            anomaly_rates: AnomalyRates {
                scene: 0.1,
                motion: 0.1,
                appearance: 0.1,
            },
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        require!(self.scenes >= 1, "need at least one scene");
        require!(
            self.scene_patterns.len() == self.scenes,
            "need one motion pattern per scene, got {} for {} scenes",
            self.scene_patterns.len(),
            self.scenes
        );
        require!(self.frames_per_video >= 2, "videos need at least 2 frames");
        require!(self.frame_size >= 8, "frame size too small to draw objects");
        require!(self.objects_per_video >= 1, "videos need at least one object");
        require!(
            self.sensor_noise.is_finite() && self.sensor_noise >= 0.0,
            "sensor noise must be a finite non-negative amplitude, got {}",
            self.sensor_noise
        );
        require!(self.channels == 3, "generator draws RGB frames (c = 3)");
        require!(!self.catalog.is_empty(), "object catalog is empty");
        let r = &self.anomaly_rates;
        for (name, v) in [
            ("scene", r.scene),
            ("motion", r.motion),
            ("appearance", r.appearance),
        ] {
            require!(
                (0.0..=1.0).contains(&v),
                "{name} anomaly rate {v} outside [0,1]"
            );
        }
        require!(
            r.scene + r.motion + r.appearance <= 1.0 + 1e-12,
            "anomaly rates sum to {} > 1",
            r.scene + r.motion + r.appearance
        );
        if r.scene > 0.0 {
            require!(
                self.scenes >= 2,
                "scene-swap anomalies need at least 2 scenes"
            );
        }
        Ok(())
    }
}

pub fn default_catalog(frame_size: usize) -> Vec<ObjectSpec> {
    let size = (frame_size / 4).max(4);
    vec![
        ObjectSpec {
            shape: Shape::Square,
            color: [0.90, 0.15, 0.15],
            size,
        },
        ObjectSpec {
            shape: Shape::Disc,
            color: [0.15, 0.85, 0.20],
            size,
        },
        ObjectSpec {
            shape: Shape::Ring,
            color: [0.20, 0.35, 0.95],
            size,
        },
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnomalyKind {
    SceneSwap,
    Speed,
    Appearance,
}

impl AnomalyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::SceneSwap => "scene",
            AnomalyKind::Speed => "motion",
            AnomalyKind::Appearance => "appearance",
        }
    }
}

/// One injector decision: `video_id` is anomalous on frames `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Injection {
    pub video_id: String,
    pub kind: AnomalyKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug)]
pub struct SyntheticDataset {
    pub train: Vec<VideoSequence>,
    pub test: Vec<VideoSequence>,
    pub injections: Vec<Injection>,
}

/// Generate both splits. Fully deterministic: every video draws from its own
/// stream keyed by (seed, split, scene, index).
pub fn generate_synthetic_dataset(spec: &SyntheticDatasetSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut injections = Vec::new();
    for scene in 0..spec.scenes {
        for idx in 0..spec.train_videos_per_scene {
            let id = format!("train_s{scene}_v{idx:03}");
            let mut rng = crate::rng::stream(spec.seed, "synth-video", &[0, scene as u64, idx as u64]);
            let (video, _) = generate_video(spec, scene, &id, false, &mut rng)?;
            train.push(video);
        }
        for idx in 0..spec.test_videos_per_scene {
            let id = format!("test_s{scene}_v{idx:03}");
            let mut rng = crate::rng::stream(spec.seed, "synth-video", &[1, scene as u64, idx as u64]);
            let (video, injection) = generate_video(spec, scene, &id, true, &mut rng)?;
            test.push(video);
            if let Some(inj) = injection {
                injections.push(inj);
            }
        }
    }
    Ok(SyntheticDataset {
        train,
        test,
        injections,
    })
}

struct Mover {
    object: ObjectSpec,
    speed: i64,
    cx: i64,
    cy: i64,
}

fn generate_video<R: Rng>(
    spec: &SyntheticDatasetSpec,
    scene: usize,
    video_id: &str,
    test_split: bool,
    rng: &mut R,
) -> Result<(VideoSequence, Option<Injection>)> {
    let size = spec.frame_size;
    let frames = spec.frames_per_video;
    let pattern = spec.scene_patterns[scene];
    let mut movers: Vec<Mover> = (0..spec.objects_per_video)
        .map(|_| Mover {
            object: spec.catalog[rng.random_range(0..spec.catalog.len())].clone(),
            speed: NORMAL_SPEEDS[rng.random_range(0..NORMAL_SPEEDS.len())],
            cx: rng.random_range(0..size as i64),
            cy: rng.random_range(0..size as i64),
        })
        .collect();

    let injection = if test_split {
        draw_injection(spec, video_id, rng)
    } else {
        None
    };

    let mut data = vec![0.0f32; frames * size * size * spec.channels];
    let mut labels = vec![false; frames];
    for f in 0..frames {
        let anomalous = injection
            .as_ref()
            .is_some_and(|inj| (inj.start..inj.end).contains(&f));
        if anomalous {
            labels[f] = true;
        }
        let frame =
            &mut data[f * size * size * spec.channels..(f + 1) * size * size * spec.channels];
        draw_background(frame, size, spec.channels, scene);
        for m in &mut movers {
            let (step, draw_checker) = match (&injection, anomalous) {
                (Some(inj), true) => match inj.kind {
                    AnomalyKind::SceneSwap => {
                        let other = spec.scene_patterns[(scene + 1) % spec.scenes];
                        ((other.dx * m.speed, other.dy * m.speed), false)
                    }
                    AnomalyKind::Speed => (
                        (pattern.dx * ANOMALOUS_SPEED, pattern.dy * ANOMALOUS_SPEED),
                        false,
                    ),
                    AnomalyKind::Appearance => ((pattern.dx * m.speed, pattern.dy * m.speed), true),
                },
                _ => ((pattern.dx * m.speed, pattern.dy * m.speed), false),
            };
            draw_object(frame, size, spec.channels, &m.object, m.cx, m.cy, draw_checker);
            m.cx = (m.cx + step.0).rem_euclid(size as i64);
            m.cy = (m.cy + step.1).rem_euclid(size as i64);
        }
        if spec.sensor_noise > 0.0 {
            for p in frame.iter_mut() {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                *p = (*p + (spec.sensor_noise * z) as f32).clamp(0.0, 1.0);
            }
        }
    }

    let tensor = Tensor::<Real>::new(vec![frames, size, size, spec.channels], data)?;
    let frame_labels = test_split.then_some(labels);
    let video = VideoSequence::new(video_id, scene, tensor, frame_labels)?;
    Ok((video, injection))
}

/// One categorical draw decides whether (and which) injector fires; if it
/// does, a second draw places the anomalous interval in the middle half of
/// the video.
fn draw_injection<R: Rng>(
    spec: &SyntheticDatasetSpec,
    video_id: &str,
    rng: &mut R,
) -> Option<Injection> {
    let r = &spec.anomaly_rates;
    let u: f64 = rng.random_range(0.0..1.0);
    let kind = if u < r.scene {
        AnomalyKind::SceneSwap
    } else if u < r.scene + r.motion {
        AnomalyKind::Speed
    } else if u < r.scene + r.motion + r.appearance {
        AnomalyKind::Appearance
    } else {
        return None;
    };
    let f = spec.frames_per_video;
    let start = rng.random_range(f / 4..f / 2);
    let len = rng.random_range(f / 4..f / 2);
    let end = (start + len).min(f);
    Some(Injection {
        video_id: video_id.to_string(),
        kind,
        start,
        end,
    })
}

/// Paint the scene's background: a gradient whose orientation and tint are
/// the camera's visual identity.
fn draw_background(frame: &mut [f32], size: usize, channels: usize, scene: usize) {
    let (gx, gy) = match scene % 4 {
        0 => (0.05, 0.10),
        1 => (0.10, 0.05),
        2 => (0.12, -0.03),
        _ => (-0.04, 0.12),
    };
    let tint = [
        0.02 * ((scene % 3) as f64),
        0.02 * (((scene + 1) % 3) as f64),
        0.02 * (((scene + 2) % 3) as f64),
    ];
    for y in 0..size {
        for x in 0..size {
            let base =
                0.25 + gx * (x as f64 / size as f64) + gy * (y as f64 / size as f64);
            let px = (y * size + x) * channels;
            for l in 0..channels {
                frame[px + l] = (base + tint[l % 3]) as f32;
            }
        }
    }
}

/// Rasterize one object at (cx, cy) with toroidal wrap. The checker flag
/// swaps the catalog object's fill for an out-of-catalog checkerboard.
fn draw_object(
    frame: &mut [f32],
    size: usize,
    channels: usize,
    object: &ObjectSpec,
    cx: i64,
    cy: i64,
    checker: bool,
) {
    let r = (object.size / 2) as i64;
    for dy in -r..=r {
        for dx in -r..=r {
            let inside = match object.shape {
                Shape::Square => true,
                Shape::Disc => dx * dx + dy * dy <= r * r,
                Shape::Ring => dx.abs() > r / 2 || dy.abs() > r / 2,
            };
            if !inside {
                continue;
            }
            let x = (cx + dx).rem_euclid(size as i64) as usize;
            let y = (cy + dy).rem_euclid(size as i64) as usize;
            let px = (y * size + x) * channels;
            let color = if checker {
                if (dx + dy).rem_euclid(2) == 0 {
                    [0.98, 0.95, 0.10]
                } else {
                    [0.05, 0.05, 0.05]
                }
            } else {
                object.color
            };
            for l in 0..channels {
                frame[px + l] = color[l] as f32;
            }
        }
    }
}
