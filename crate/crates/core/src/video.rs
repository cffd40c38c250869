//! Video sequences, patch tokenization, noise schedules, perturbation, and
//! key-frame motion weights.
//!
//! A frame window is a rank-4 tensor `[n, H, W, c]` in row-major order.
//! Tokens are `d×d×c` patches flattened row-major (dy, dx, channel), ordered
//! frame-major then row-major then column-major. All weights and noise levels
//! are computed in f64 regardless of the pixel element type.

use crate::error::Result;
use crate::require;
use crate::tensor::{Element, Real, Tensor};
use rand::Rng;

/// A stored video: `F ≥ 2` frames of H×W×c pixels in [0,1], a scene label,
/// and (test split only) per-frame anomaly labels.
#[derive(Clone, Debug)]
pub struct VideoSequence {
    pub video_id: String,
    pub scene_label: usize,
    frames: Tensor<Real>,
    pub frame_labels: Option<Vec<bool>>,
}

impl VideoSequence {
    pub fn new(
        video_id: impl Into<String>,
        scene_label: usize,
        frames: Tensor<Real>,
        frame_labels: Option<Vec<bool>>,
    ) -> Result<Self> {
        require!(
            frames.rank() == 4,
            "video frames must be [frames, H, W, c], got {:?}",
            frames.shape()
        );
        require!(
            frames.shape()[0] >= 2,
            "video needs at least 2 frames, got {}",
            frames.shape()[0]
        );
        for &v in frames.data() {
            require!(
                (0.0..=1.0).contains(&v),
                "pixel value {v} outside [0,1]"
            );
        }
        if let Some(labels) = &frame_labels {
            require!(
                labels.len() == frames.shape()[0],
                "label count {} != frame count {}",
                labels.len(),
                frames.shape()[0]
            );
        }
        Ok(VideoSequence {
            video_id: video_id.into(),
            scene_label,
            frames,
            frame_labels,
        })
    }

    pub fn frames(&self) -> &Tensor<Real> {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.shape()[0]
    }
    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }
    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }
    pub fn channels(&self) -> usize {
        self.frames.shape()[3]
    }

    /// Copy out the `n`-frame window starting at frame `start`.
    pub fn window(&self, start: usize, n: usize) -> Result<Tensor<Real>> {
        require!(n >= 2, "window length must be >= 2, got {n}");
        require!(
            start + n <= self.frame_count(),
            "window [{start}, {}) exceeds {} frames",
            start + n,
            self.frame_count()
        );
        let (h, w, c) = (self.height(), self.width(), self.channels());
        let frame_len = h * w * c;
        let data = self.frames.data()[start * frame_len..(start + n) * frame_len].to_vec();
        Tensor::new(vec![n, h, w, c], data)
    }
}

/// Start indices of consecutive non-overlapping n-frame windows; a partial
/// tail window is dropped.
pub fn window_starts(total_frames: usize, n: usize) -> Vec<usize> {
    if n == 0 {
        return vec![];
    }
    (0..)
        .map(|k| k * n)
        .take_while(|s| s + n <= total_frames)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleMode {
    Geometric,
    Linear,
}

/// Ordered noise levels σ_1 < … < σ_L.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    levels: Vec<f64>,
    mode: ScheduleMode,
}

impl NoiseSchedule {
    /// σ_i = σ_1·r^(i−1) with r = (σ_L/σ_1)^(1/(L−1)); L=1 yields {σ_L}.
    pub fn geometric(sigma1: f64, sigma_l: f64, l: usize) -> Result<Self> {
        Self::check_bounds(sigma1, sigma_l, l)?;
        if l == 1 {
            return Ok(NoiseSchedule {
                levels: vec![sigma_l],
                mode: ScheduleMode::Geometric,
            });
        }
        let (lo, hi) = (sigma1.ln(), sigma_l.ln());
        let mut levels: Vec<f64> = (0..l)
            .map(|i| (lo + (hi - lo) * (i as f64) / ((l - 1) as f64)).exp())
            .collect();
        levels[0] = sigma1;
        levels[l - 1] = sigma_l;
        Ok(NoiseSchedule {
            levels,
            mode: ScheduleMode::Geometric,
        })
    }

    /// Arithmetically spaced levels from σ_1 to σ_L; L=1 yields {σ_L}.
    pub fn linear(sigma1: f64, sigma_l: f64, l: usize) -> Result<Self> {
        Self::check_bounds(sigma1, sigma_l, l)?;
        if l == 1 {
            return Ok(NoiseSchedule {
                levels: vec![sigma_l],
                mode: ScheduleMode::Linear,
            });
        }
        let mut levels: Vec<f64> = (0..l)
            .map(|i| sigma1 + (sigma_l - sigma1) * (i as f64) / ((l - 1) as f64))
            .collect();
        levels[0] = sigma1;
        levels[l - 1] = sigma_l;
        Ok(NoiseSchedule {
            levels,
            mode: ScheduleMode::Linear,
        })
    }

    fn check_bounds(sigma1: f64, sigma_l: f64, l: usize) -> Result<()> {
        require!(sigma1 > 0.0, "sigma1 must be positive, got {sigma1}");
        require!(
            sigma_l > sigma1,
            "sigma_L ({sigma_l}) must exceed sigma1 ({sigma1})"
        );
        require!(l >= 1, "schedule needs at least one level");
        Ok(())
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }
    pub fn len(&self) -> usize {
        self.levels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }
}

/// One σ with ln σ uniform on [ln σ_1, ln σ_L].
pub fn sample_sigma_loguniform<R: Rng>(sigma1: f64, sigma_l: f64, rng: &mut R) -> Result<f64> {
    require!(
        sigma1 > 0.0 && sigma_l > sigma1,
        "log-uniform bounds need 0 < sigma1 < sigma_L, got [{sigma1}, {sigma_l}]"
    );
    let u: f64 = rng.random_range(sigma1.ln()..sigma_l.ln());
    Ok(u.exp().clamp(sigma1, sigma_l))
}

/// Add per-pixel Gaussian noise: x̃ = x + σ·ε. Returns (x̃, ε).
pub fn perturb<T: Element, R: Rng>(
    x: &Tensor<T>,
    sigma: f64,
    rng: &mut R,
) -> Result<(Tensor<T>, Tensor<T>)> {
    require!(sigma >= 0.0, "perturb needs sigma >= 0, got {sigma}");
    let eps = crate::rng::normal_tensor::<T, R>(rng, x.shape());
    let s = T::from_f64(sigma);
    let noisy = Tensor::new(
        x.shape().to_vec(),
        x.data()
            .iter()
            .zip(eps.data())
            .map(|(&xv, &ev)| xv + s * ev)
            .collect(),
    )?;
    Ok((noisy, eps))
}

/// Flattened patches with their (frame, row, col) grid positions.
#[derive(Clone, Debug)]
pub struct TokenBatch<T: Element = Real> {
    /// [N, d·d·c]
    pub tokens: Tensor<T>,
    pub positions: Vec<[usize; 3]>,
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub d: usize,
    pub c: usize,
}

impl<T: Element> TokenBatch<T> {
    pub fn token_count(&self) -> usize {
        self.positions.len()
    }
    pub fn token_width(&self) -> usize {
        self.d * self.d * self.c
    }
}

/// Cut an `[n, H, W, c]` window into d×d×c tokens.
pub fn patchify<T: Element>(window: &Tensor<T>, d: usize) -> Result<TokenBatch<T>> {
    require!(
        window.rank() == 4,
        "patchify expects [n, H, W, c], got {:?}",
        window.shape()
    );
    require!(d > 0, "patch size must be positive");
    let (n, h, w, c) = (
        window.shape()[0],
        window.shape()[1],
        window.shape()[2],
        window.shape()[3],
    );
    require!(
        h % d == 0 && w % d == 0,
        "frame size {h}x{w} not divisible by patch size {d}"
    );
    let (rows, cols) = (h / d, w / d);
    let n_tokens = n * rows * cols;
    let width = d * d * c;
    let mut data = Vec::with_capacity(n_tokens * width);
    let mut positions = Vec::with_capacity(n_tokens);
    let src = window.data();
    for f in 0..n {
        for row in 0..rows {
            for col in 0..cols {
                positions.push([f, row, col]);
                for dy in 0..d {
                    let y = row * d + dy;
                    let base = ((f * h + y) * w + col * d) * c;
                    data.extend_from_slice(&src[base..base + d * c]);
                }
            }
        }
    }
    Ok(TokenBatch {
        tokens: Tensor::new(vec![n_tokens, width], data)?,
        positions,
        n,
        rows,
        cols,
        d,
        c,
    })
}

/// Reassemble tokens into frames by their stored positions. Exact inverse of
/// [`patchify`]; every grid cell must be covered exactly once.
pub fn unpatchify<T: Element>(batch: &TokenBatch<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (n, d, c) = (batch.n, batch.d, batch.c);
    require!(
        h == batch.rows * d && w == batch.cols * d,
        "target {h}x{w} inconsistent with {}x{} patches of size {d}",
        batch.rows,
        batch.cols
    );
    let expected = n * batch.rows * batch.cols;
    require!(
        batch.token_count() == expected,
        "expected {expected} tokens, got {}",
        batch.token_count()
    );
    require!(
        batch.tokens.shape() == [expected, d * d * c],
        "token tensor shape {:?} inconsistent with positions",
        batch.tokens.shape()
    );
    let mut out = vec![T::zero(); n * h * w * c];
    let mut seen = vec![false; expected];
    for (j, &[f, row, col]) in batch.positions.iter().enumerate() {
        require!(
            f < n && row < batch.rows && col < batch.cols,
            "token {j} position ({f},{row},{col}) out of grid"
        );
        let cell = (f * batch.rows + row) * batch.cols + col;
        require!(!seen[cell], "duplicate token at position ({f},{row},{col})");
        seen[cell] = true;
        let tok = &batch.tokens.data()[j * d * d * c..(j + 1) * d * d * c];
        for dy in 0..d {
            let y = row * d + dy;
            let base = ((f * h + y) * w + col * d) * c;
            out[base..base + d * c].copy_from_slice(&tok[dy * d * c..(dy + 1) * d * c]);
        }
    }
    require!(
        seen.iter().all(|&s| s),
        "missing tokens: {} of {expected} grid cells uncovered",
        seen.iter().filter(|&&s| !s).count()
    );
    Tensor::new(vec![n, h, w, c], out)
}

/// Per-token loss weights from the key-frame difference.
#[derive(Clone, Debug)]
pub struct MotionWeights {
    /// One weight per token (length N), non-negative, summing to 1.
    pub omega: Vec<f64>,
    /// Raw per-spatial-patch magnitudes υ_j (length rows·cols), before
    /// normalization and temporal replication.
    pub upsilon: Vec<f64>,
}

/// Weights from `g = |f_last − f_first|`: per spatial patch j,
/// υ_j = (1/c)·Σ_channels max(G_j), normalized over patches, then split
/// evenly across the n temporal tokens of that patch column. A static window
/// (Συ = 0) falls back to uniform 1/N.
pub fn motion_weights<T: Element>(window: &Tensor<T>, d: usize) -> Result<MotionWeights> {
    require!(
        window.rank() == 4,
        "motion weights expect [n, H, W, c], got {:?}",
        window.shape()
    );
    let (n, h, w, c) = (
        window.shape()[0],
        window.shape()[1],
        window.shape()[2],
        window.shape()[3],
    );
    require!(n >= 2, "key-frame difference needs n >= 2, got {n}");
    require!(
        d > 0 && h % d == 0 && w % d == 0,
        "frame size {h}x{w} not divisible by patch size {d}"
    );
    let (rows, cols) = (h / d, w / d);
    let src = window.data();
    let frame_len = h * w * c;
    let first = &src[..frame_len];
    let last = &src[(n - 1) * frame_len..];

    let mut upsilon = vec![0.0f64; rows * cols];
    for (j, ups) in upsilon.iter_mut().enumerate() {
        let (row, col) = (j / cols, j % cols);
        let mut channel_max = vec![0.0f64; c];
        for dy in 0..d {
            let y = row * d + dy;
            for dx in 0..d {
                let x = col * d + dx;
                let base = (y * w + x) * c;
                for (l, cm) in channel_max.iter_mut().enumerate() {
                    let diff = (last[base + l].as_f64() - first[base + l].as_f64()).abs();
                    if diff > *cm {
                        *cm = diff;
                    }
                }
            }
        }
        *ups = channel_max.iter().sum::<f64>() / c as f64;
    }

    let total: f64 = upsilon.iter().sum();
    let n_tokens = n * rows * cols;
    let mut omega = vec![0.0f64; n_tokens];
    if total == 0.0 {
        omega.fill(1.0 / n_tokens as f64);
    } else {
        for f in 0..n {
            for (j, &ups) in upsilon.iter().enumerate() {
                omega[f * rows * cols + j] = ups / total / n as f64;
            }
        }
        // kill residual rounding so the weights always sum to 1 exactly
        let s: f64 = omega.iter().sum();
        for o in omega.iter_mut() {
            *o /= s;
        }
    }
    Ok(MotionWeights { omega, upsilon })
}
