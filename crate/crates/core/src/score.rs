//! Inference: the autoregressive denoising ladder and score aggregation.
//!
//! A video is cut into n-frame windows. For each window the ladder walks an
//! ascending noise schedule; at every level it perturbs the current estimate
//! (or the original window, when autoregression is off), asks the model for
//! the score field, takes one denoising step, and records
//!
//! ```text
//! score_i = ‖s_θ(x̃, σ_i)‖ / PSNR(x̂, x_t)
//! ```
//!
//! where the PSNR always compares the denoised window against the ORIGINAL
//! window: a model that keeps reconstructing something else is evidence of
//! anomaly in itself. Window scores are max-pooled within fixed-length clips,
//! min-max normalized per video and level, and averaged across levels into
//! the final per-frame indicator in [0,1].

use crate::error::{Error, Result};
use crate::require;
use crate::tensor::{Real, Tensor};
use crate::video::{window_starts, VideoSequence};
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

/// Anything that can estimate a score field for a noised window.
pub trait ScoreField: Sync {
    fn score_field(&self, window: &Tensor<Real>, sigma: f64, scene: usize) -> Result<Tensor<Real>>;
}

impl ScoreField for crate::model::NcstModel {
    fn score_field(&self, window: &Tensor<Real>, sigma: f64, scene: usize) -> Result<Tensor<Real>> {
        crate::model::NcstModel::score_field(self, window, sigma, scene)
    }
}

/// Closures work as score fields, which keeps analytic oracles terse.
impl<F> ScoreField for F
where
    F: Fn(&Tensor<Real>, f64, usize) -> Result<Tensor<Real>> + Sync,
{
    fn score_field(&self, window: &Tensor<Real>, sigma: f64, scene: usize) -> Result<Tensor<Real>> {
        self(window, sigma, scene)
    }
}

/// The model that always answers zero: perturbations are never undone.
pub struct ZeroField;

impl ScoreField for ZeroField {
    fn score_field(&self, window: &Tensor<Real>, _sigma: f64, _scene: usize) -> Result<Tensor<Real>> {
        Ok(Tensor::zeros(window.shape()))
    }
}

pub const PSNR_PEAK: f64 = 1.0;
pub const PSNR_MSE_FLOOR: f64 = 1e-10;

/// 10·log₁₀(R²/MSE) with R = 1; the MSE floor caps the value at 100 dB.
pub fn psnr(a: &Tensor<Real>, b: &Tensor<Real>) -> Result<f64> {
    require!(
        a.shape() == b.shape(),
        "psnr over mismatched shapes {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    let mut sum = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x as f64 - y as f64;
        sum += d * d;
    }
    let mse = (sum / a.numel() as f64).max(PSNR_MSE_FLOOR);
    Ok(10.0 * (PSNR_PEAK * PSNR_PEAK / mse).log10())
}

/// One denoising step x̂ = x̃ + σ²·s, accumulated in f64.
pub fn denoise_step(x_tilde: &Tensor<Real>, score: &Tensor<Real>, sigma: f64) -> Result<Tensor<Real>> {
    require!(
        x_tilde.shape() == score.shape(),
        "denoise_step shapes {:?} vs {:?}",
        x_tilde.shape(),
        score.shape()
    );
    require!(sigma > 0.0, "denoise_step needs a positive noise level, got {sigma}");
    let s2 = sigma * sigma;
    let data = x_tilde
        .data()
        .iter()
        .zip(score.data())
        .map(|(&x, &s)| (x as f64 + s2 * s as f64) as Real)
        .collect();
    let t = Tensor::new(x_tilde.shape().to_vec(), data)?;
    t.check_finite("denoise_step")?;
    Ok(t)
}

#[derive(Clone, Copy, Debug)]
pub struct ScoreOptions {
    /// Perturb the running denoised estimate (true) or the original window.
    pub autoregressive: bool,
    /// Divide the score norm by PSNR(x̂, original).
    pub use_psnr: bool,
    /// Reuse one noise draw across all levels instead of fresh draws.
    pub reuse_noise: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            autoregressive: true,
            use_psnr: true,
            reuse_noise: false,
        }
    }
}

/// Per-level outputs of one ladder run.
#[derive(Clone, Debug)]
pub struct LadderTrace {
    pub scores: Vec<f64>,
    /// ‖ẋ − x_t‖ after each level (diagnostic; drives the accumulation tests).
    pub deviations: Vec<f64>,
}

fn check_ascending(levels: &[f64]) -> Result<()> {
    require!(!levels.is_empty(), "noise ladder has no levels");
    require!(levels[0] > 0.0, "noise levels must be positive, got {}", levels[0]);
    for w in levels.windows(2) {
        require!(
            w[1] > w[0],
            "noise ladder must be strictly ascending; got {} after {}",
            w[1],
            w[0]
        );
    }
    Ok(())
}

/// Walk the ladder over one window, recording scores and deviations.
pub fn run_ladder<S: ScoreField + ?Sized, R: rand::Rng>(
    field: &S,
    window: &Tensor<Real>,
    levels: &[f64],
    scene: usize,
    options: &ScoreOptions,
    rng: &mut R,
) -> Result<LadderTrace> {
    check_ascending(levels)?;
    require!(window.rank() == 4, "window must be [n,H,W,c], got {:?}", window.shape());
    let shared_eps: Option<Tensor<Real>> = options
        .reuse_noise
        .then(|| crate::rng::normal_tensor(rng, window.shape()));
    let mut x_hat = window.clone();
    let mut scores = Vec::with_capacity(levels.len());
    let mut deviations = Vec::with_capacity(levels.len());
    for &sigma in levels {
        let base = if options.autoregressive { &x_hat } else { window };
        let fresh;
        let eps = match &shared_eps {
            Some(e) => e,
            None => {
                fresh = crate::rng::normal_tensor::<Real, R>(rng, window.shape());
                &fresh
            }
        };
        let noisy_data: Vec<Real> = base
            .data()
            .iter()
            .zip(eps.data())
            .map(|(&x, &e)| x + sigma as Real * e)
            .collect();
        let x_tilde = Tensor::new(window.shape().to_vec(), noisy_data)?;
        let s = field.score_field(&x_tilde, sigma, scene)?;
        require!(
            s.shape() == window.shape(),
            "score field shape {:?} does not match window {:?}",
            s.shape(),
            window.shape()
        );
        x_hat = denoise_step(&x_tilde, &s, sigma)?;
        let raw = s.norm();
        let score = if options.use_psnr {
            raw / psnr(&x_hat, window)?
        } else {
            raw
        };
        if !score.is_finite() {
            return Err(Error::Numeric {
                op: "ladder_score",
                detail: format!("non-finite score at sigma {sigma}"),
            });
        }
        scores.push(score);
        let mut dev = 0.0f64;
        for (&a, &b) in x_hat.data().iter().zip(window.data()) {
            let d = a as f64 - b as f64;
            dev += d * d;
        }
        deviations.push(dev.sqrt());
    }
    Ok(LadderTrace { scores, deviations })
}

/// Per-level anomaly scores for one window (Algorithm surface).
pub fn autoregressive_score<S: ScoreField + ?Sized, R: rand::Rng>(
    field: &S,
    window: &Tensor<Real>,
    levels: &[f64],
    scene: usize,
    options: &ScoreOptions,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(run_ladder(field, window, levels, scene, options, rng)?.scores)
}

/// Expand per-window scores to per-frame clip scores at one level.
///
/// Frames are grouped into consecutive `clip_frames`-long clips; a clip's
/// score is the max over windows starting inside it. Clips without any
/// window start inherit the nearest preceding clip; a leading empty clip
/// scores 0.
pub fn clip_max_aggregate(
    window_scores: &[(usize, f64)],
    total_frames: usize,
    clip_frames: usize,
) -> Result<Vec<f64>> {
    require!(clip_frames > 0, "clip length must be positive");
    require!(total_frames > 0, "cannot aggregate an empty video");
    for &(start, _) in window_scores {
        require!(
            start < total_frames,
            "window start {start} outside video of {total_frames} frames"
        );
    }
    let n_clips = total_frames.div_ceil(clip_frames);
    let mut clip_scores = vec![None::<f64>; n_clips];
    for &(start, score) in window_scores {
        let k = start / clip_frames;
        clip_scores[k] = Some(match clip_scores[k] {
            None => score,
            Some(prev) => prev.max(score),
        });
    }
    let mut filled = Vec::with_capacity(n_clips);
    let mut last = 0.0f64;
    for c in clip_scores {
        if let Some(v) = c {
            last = v;
        }
        filled.push(last);
    }
    let mut out = Vec::with_capacity(total_frames);
    for f in 0..total_frames {
        out.push(filled[f / clip_frames]);
    }
    Ok(out)
}

/// Min-max normalization to [0,1]; a constant series carries no evidence and
/// maps to zeros.
pub fn normalize_scores(series: &[f64]) -> Vec<f64> {
    if series.is_empty() {
        return Vec::new();
    }
    let min = series.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return vec![0.0; series.len()];
    }
    let span = max - min;
    series.iter().map(|&v| (v - min) / span).collect()
}

/// Weighted average of per-level series into the final indicator.
pub fn fuse_levels(per_level: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    require!(!per_level.is_empty(), "no levels to fuse");
    require!(
        weights.len() == per_level.len(),
        "{} fusion weights for {} levels",
        weights.len(),
        per_level.len()
    );
    let len = per_level[0].len();
    for (i, s) in per_level.iter().enumerate() {
        require!(
            s.len() == len,
            "level {i} has {} entries, level 0 has {len}",
            s.len()
        );
    }
    let mut sum = 0.0f64;
    for &w in weights {
        require!(w >= 0.0, "fusion weights must be non-negative, got {w}");
        sum += w;
    }
    require!(
        (sum - 1.0).abs() <= 1e-9,
        "fusion weights sum to {sum}, need 1 (±1e-9)"
    );
    let mut out = vec![0.0f64; len];
    for (series, &w) in per_level.iter().zip(weights) {
        for (o, &v) in out.iter_mut().zip(series) {
            *o += w * v;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ScoreConfig {
    /// Noise ladder, strictly ascending.
    pub levels: Vec<f64>,
    /// Frames per window (model geometry n).
    pub window_frames: usize,
    /// Frames per aggregation clip, ≥ window_frames.
    pub clip_frames: usize,
    /// Level-fusion weights, summing to 1.
    pub weights: Vec<f64>,
    pub options: ScoreOptions,
    pub seed: u64,
}

impl ScoreConfig {
    /// Defaults: given ladder, clips of 2n frames, uniform fusion.
    pub fn new(levels: Vec<f64>, window_frames: usize, seed: u64) -> Self {
        let l = levels.len().max(1);
        ScoreConfig {
            levels,
            window_frames,
            clip_frames: 2 * window_frames,
            weights: vec![1.0 / l as f64; l],
            options: ScoreOptions::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_ascending(&self.levels)?;
        require!(self.window_frames >= 2, "windows need at least 2 frames");
        require!(
            self.clip_frames >= self.window_frames,
            "clip length {} shorter than window {}",
            self.clip_frames,
            self.window_frames
        );
        require!(
            self.weights.len() == self.levels.len(),
            "{} fusion weights for {} levels",
            self.weights.len(),
            self.levels.len()
        );
        Ok(())
    }
}

/// Scores of one video: raw per-window-per-level plus the fused indicator.
#[derive(Clone, Debug)]
pub struct VideoScores {
    pub video_id: String,
    /// (window start, per-level raw scores).
    pub windows: Vec<(usize, Vec<f64>)>,
    /// Fused per-frame indicator, one entry per video frame.
    pub indicators: Vec<f64>,
}

/// Score one video end to end.
pub fn score_video<S: ScoreField + ?Sized>(
    field: &S,
    video: &VideoSequence,
    cfg: &ScoreConfig,
) -> Result<VideoScores> {
    cfg.validate()?;
    let n = cfg.window_frames;
    let frames = video.frame_count();
    if frames < n {
        return Err(Error::Data(format!(
            "video {} too short: {frames} frames, need a full {n}-frame window",
            video.video_id
        )));
    }
    let mut windows = Vec::new();
    for start in window_starts(frames, n) {
        let w = video.window(start, n)?;
        let mut rng = crate::rng::stream_for(cfg.seed, "score-noise", &video.video_id, &[start as u64]);
        let scores = autoregressive_score(
            field,
            &w,
            &cfg.levels,
            video.scene_label,
            &cfg.options,
            &mut rng,
        )?;
        windows.push((start, scores));
    }
    let n_levels = cfg.levels.len();
    let mut per_level = Vec::with_capacity(n_levels);
    for li in 0..n_levels {
        let level_scores: Vec<(usize, f64)> =
            windows.iter().map(|(t, s)| (*t, s[li])).collect();
        let frames_scores = clip_max_aggregate(&level_scores, frames, cfg.clip_frames)?;
        per_level.push(normalize_scores(&frames_scores));
    }
    let indicators = fuse_levels(&per_level, &cfg.weights)?;
    Ok(VideoScores {
        video_id: video.video_id.clone(),
        windows,
        indicators,
    })
}

/// Score many videos in parallel; output order follows input order.
pub fn score_videos<S: ScoreField>(
    field: &S,
    videos: &[VideoSequence],
    cfg: &ScoreConfig,
) -> Result<Vec<VideoScores>> {
    videos
        .par_iter()
        .map(|v| score_video(field, v, cfg))
        .collect()
}

fn fmt_sig(v: f64) -> String {
    format!("{v:.8e}")
}

/// `scores_raw.csv`: one row per (video, window, level), 1-based levels.
pub fn write_scores_raw(path: &Path, all: &[VideoScores]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "video_id,t,level,score")?;
    for vs in all {
        for (t, levels) in &vs.windows {
            for (li, &s) in levels.iter().enumerate() {
                writeln!(f, "{},{},{},{}", vs.video_id, t, li + 1, fmt_sig(s))?;
            }
        }
    }
    Ok(())
}

/// `scores_final.csv`: one row per (video, frame).
pub fn write_scores_final(path: &Path, all: &[VideoScores]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "video_id,frame_index,indicator")?;
    for vs in all {
        for (fi, &v) in vs.indicators.iter().enumerate() {
            writeln!(f, "{},{},{}", vs.video_id, fi, fmt_sig(v))?;
        }
    }
    Ok(())
}

/// Read back `scores_final.csv`, grouped by video in file order.
pub fn read_scores_final(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("video_id,frame_index,indicator") => {}
        other => {
            return Err(Error::Data(format!(
                "scores_final.csv header missing or wrong: {other:?}"
            )))
        }
    }
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (id, idx, val) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c), None) => (a, b, c),
            _ => {
                return Err(Error::Data(format!(
                    "scores_final.csv line {}: expected 3 columns",
                    lineno + 2
                )))
            }
        };
        let idx: usize = idx.parse().map_err(|_| {
            Error::Data(format!("scores_final.csv line {}: bad frame index", lineno + 2))
        })?;
        let val: f64 = val.parse().map_err(|_| {
            Error::Data(format!("scores_final.csv line {}: bad indicator", lineno + 2))
        })?;
        match out.last_mut() {
            Some((cur, vals)) if cur == id => {
                require!(
                    idx == vals.len(),
                    "scores_final.csv line {}: frame index {idx} out of order",
                    lineno + 2
                );
                vals.push(val);
            }
            _ => {
                require!(
                    idx == 0,
                    "scores_final.csv line {}: video {id} does not start at frame 0",
                    lineno + 2
                );
                out.push((id.to_string(), vec![val]));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::NoiseSchedule;

    fn small_window(seed: u64) -> Tensor<Real> {
        let mut rng = crate::rng::stream(seed, "score-test-window", &[]);
        crate::rng::uniform_tensor(&mut rng, &[2, 4, 4, 1], 0.1, 0.9)
    }

    /// Oracle for data concentrated at a known clean window: the score of
    /// N(clean, σ²) at x̃ is −(x̃−clean)/σ².
    fn oracle_for(clean: Tensor<Real>) -> impl Fn(&Tensor<Real>, f64, usize) -> Result<Tensor<Real>> {
        move |x_tilde, sigma, _| {
            let inv = (1.0 / (sigma * sigma)) as Real;
            let data = x_tilde
                .data()
                .iter()
                .zip(clean.data())
                .map(|(&xn, &xc)| (xc - xn) * inv)
                .collect();
            Tensor::new(x_tilde.shape().to_vec(), data)
        }
    }

    #[test]
    fn psnr_hand_values() {
        let a = small_window(1);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        // uniform offset 0.1 → MSE 0.01 → 20 dB
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-4);
        // uniform offset 1 → MSE 1 → 0 dB
        let c = a.map(|v| v + 1.0);
        assert!(psnr(&a, &c).unwrap().abs() < 1e-4);
        let d = Tensor::<Real>::zeros(&[2, 2]);
        assert!(psnr(&a, &d).is_err());
    }

    #[test]
    fn denoise_step_hand_cases() {
        let x = small_window(2);
        let zero = Tensor::zeros(x.shape());
        assert_eq!(denoise_step(&x, &zero, 0.3).unwrap(), x);

        // oracle cancellation: x̂ recovers the clean window
        let clean = small_window(3);
        let sigma = 0.25;
        let mut rng = crate::rng::stream(4, "denoise", &[]);
        let eps: Tensor<Real> = crate::rng::normal_tensor(&mut rng, clean.shape());
        let noisy_data: Vec<Real> = clean
            .data()
            .iter()
            .zip(eps.data())
            .map(|(&c, &e)| c + sigma as Real * e)
            .collect();
        let noisy = Tensor::new(clean.shape().to_vec(), noisy_data).unwrap();
        let s = oracle_for(clean.clone())(&noisy, sigma, 0).unwrap();
        let xhat = denoise_step(&noisy, &s, sigma).unwrap();
        for (a, b) in xhat.data().iter().zip(clean.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }

        // norm identity ‖x̂−x̃‖ = σ²‖s‖
        let diff: f64 = xhat
            .data()
            .iter()
            .zip(noisy.data())
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt();
        let want = sigma * sigma * s.norm();
        assert!((diff - want).abs() / want < 1e-4, "{diff} vs {want}");

        assert!(denoise_step(&x, &zero, 0.0).is_err());
    }

    #[test]
    fn ladder_rejects_bad_schedules() {
        let w = small_window(5);
        let mut rng = crate::rng::stream(6, "ladder", &[]);
        let opts = ScoreOptions::default();
        assert!(run_ladder(&ZeroField, &w, &[], 0, &opts, &mut rng).is_err());
        assert!(run_ladder(&ZeroField, &w, &[0.5, 0.1], 0, &opts, &mut rng).is_err());
        assert!(run_ladder(&ZeroField, &w, &[-0.1, 0.5], 0, &opts, &mut rng).is_err());
        assert!(run_ladder(&ZeroField, &w, &[0.1, 0.1], 0, &opts, &mut rng).is_err());
    }

    #[test]
    fn oracle_ladder_recovers_window_and_matches_score_formula() {
        let window = small_window(7);
        let sched = NoiseSchedule::geometric(1e-3, 1.0, 20).unwrap();
        let opts = ScoreOptions::default();
        let mut rng = crate::rng::stream_for(9, "score-noise", "vid", &[0]);
        let trace = run_ladder(
            &oracle_for(window.clone()),
            &window,
            sched.levels(),
            0,
            &opts,
            &mut rng,
        )
        .unwrap();

        // the oracle denoises exactly, so the deviation never grows
        for &d in &trace.deviations {
            let per_elem = d / (window.numel() as f64).sqrt();
            assert!(per_elem < 1e-6, "deviation {per_elem} after a level");
        }

        // score_i = ‖ε_i‖/(σ_i·100): replay the same noise stream
        let mut replay = crate::rng::stream_for(9, "score-noise", "vid", &[0]);
        for (i, &sigma) in sched.levels().iter().enumerate() {
            let eps: Tensor<Real> = crate::rng::normal_tensor(&mut replay, window.shape());
            let want = eps.norm() / (sigma * 100.0);
            let got = trace.scores[i];
            let rel = (got - want).abs() / want;
            assert!(rel < 1e-3, "level {i}: {got} vs {want}");
        }
    }

    #[test]
    fn zero_model_noise_accumulates_monotonically() {
        let window = small_window(8);
        let sched = NoiseSchedule::geometric(1e-2, 0.5, 10).unwrap();
        let opts = ScoreOptions {
            use_psnr: false,
            ..ScoreOptions::default()
        };
        let mut rng = crate::rng::stream(10, "ladder-zero", &[]);
        let trace = run_ladder(&ZeroField, &window, sched.levels(), 0, &opts, &mut rng).unwrap();
        for w in trace.deviations.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9,
                "deviation shrank under the zero model: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn non_autoregressive_mode_perturbs_the_original() {
        // with AR off and the zero model, the deviation after level i is
        // exactly σ_i·‖ε_i‖, not an accumulation
        let window = small_window(11);
        let sched = NoiseSchedule::geometric(1e-2, 0.5, 6).unwrap();
        let opts = ScoreOptions {
            autoregressive: false,
            use_psnr: false,
            reuse_noise: false,
        };
        let mut rng = crate::rng::stream_for(12, "score-noise", "v", &[0]);
        let trace = run_ladder(&ZeroField, &window, sched.levels(), 0, &opts, &mut rng).unwrap();
        let mut replay = crate::rng::stream_for(12, "score-noise", "v", &[0]);
        for (i, &sigma) in sched.levels().iter().enumerate() {
            let eps: Tensor<Real> = crate::rng::normal_tensor(&mut replay, window.shape());
            let want = sigma * eps.norm();
            let got = trace.deviations[i];
            assert!(
                (got - want).abs() / want < 1e-3,
                "level {i}: deviation {got}, expected {want}"
            );
        }
    }

    #[test]
    fn reused_noise_is_identical_across_levels() {
        // zero model, AR off, one shared ε: deviations scale exactly with σ
        let window = small_window(13);
        let sched = NoiseSchedule::geometric(1e-2, 0.5, 5).unwrap();
        let opts = ScoreOptions {
            autoregressive: false,
            use_psnr: false,
            reuse_noise: true,
        };
        let mut rng = crate::rng::stream(14, "reuse", &[]);
        let trace = run_ladder(&ZeroField, &window, sched.levels(), 0, &opts, &mut rng).unwrap();
        let base = trace.deviations[0] / sched.levels()[0];
        for (i, &sigma) in sched.levels().iter().enumerate() {
            let ratio = trace.deviations[i] / sigma;
            assert!(
                (ratio - base).abs() / base < 1e-3,
                "level {i}: ε changed between levels"
            );
        }
    }

    #[test]
    fn clip_max_hand_cases() {
        // one window per clip → identity
        let got = clip_max_aggregate(&[(0, 0.3), (4, 0.7)], 8, 4).unwrap();
        assert_eq!(got, vec![0.3, 0.3, 0.3, 0.3, 0.7, 0.7, 0.7, 0.7]);

        // max within a clip
        let got = clip_max_aggregate(&[(0, 0.2), (1, 0.9), (2, 0.4)], 4, 4).unwrap();
        assert_eq!(got, vec![0.9; 4]);

        // empty middle clip inherits, leading empty clip scores zero
        let got = clip_max_aggregate(&[(4, 0.5)], 12, 4).unwrap();
        assert_eq!(got, vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);

        // out-of-range start is refused
        assert!(clip_max_aggregate(&[(12, 0.5)], 12, 4).is_err());
    }

    #[test]
    fn normalization_hand_cases() {
        assert_eq!(normalize_scores(&[1.0, 3.0, 5.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_scores(&[2.0, 2.0, 2.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(normalize_scores(&[0.0, 0.25, 1.0]), vec![0.0, 0.25, 1.0]);
        assert!(normalize_scores(&[]).is_empty());
    }

    #[test]
    fn fusion_hand_cases() {
        let a = vec![0.0, 1.0];
        let b = vec![1.0, 0.0];
        let fused = fuse_levels(&[a.clone(), b.clone()], &[0.5, 0.5]).unwrap();
        assert_eq!(fused, vec![0.5, 0.5]);
        let one_hot = fuse_levels(&[a.clone(), b.clone()], &[0.0, 1.0]).unwrap();
        assert_eq!(one_hot, b);
        assert!(fuse_levels(&[a.clone()], &[0.9]).is_err());
        assert!(fuse_levels(&[a.clone(), b.clone()], &[0.7, 0.4]).is_err());
        assert!(fuse_levels(&[a, b], &[-0.5, 1.5]).is_err());
    }

    fn demo_video(id: &str, frames: usize, seed: u64) -> VideoSequence {
        let mut rng = crate::rng::stream(seed, "score-video", &[]);
        let frames_t = crate::rng::uniform_tensor(&mut rng, &[frames, 4, 4, 1], 0.1, 0.9);
        VideoSequence::new(id.to_string(), 0, frames_t, None).unwrap()
    }

    #[test]
    fn score_video_rejects_short_videos() {
        let v = demo_video("short", 3, 20);
        let cfg = ScoreConfig::new(vec![0.1, 0.5], 4, 1);
        match score_video(&ZeroField, &v, &cfg) {
            Err(Error::Data(msg)) => assert!(msg.contains("too short"), "{msg}"),
            other => panic!("expected too-short error, got {other:?}"),
        }
    }

    #[test]
    fn score_video_is_deterministic_and_bounded() {
        let v = demo_video("vid_a", 20, 21);
        let cfg = ScoreConfig::new(vec![0.05, 0.2, 0.6], 4, 7);
        let field = |x: &Tensor<Real>, sigma: f64, _: usize| {
            // mild contraction toward 0.5 so scores vary across windows
            let inv = (1.0 / (sigma * sigma + 1.0)) as Real;
            Ok(x.map(|v| (0.5 - v) * inv))
        };
        let a = score_video(&field, &v, &cfg).unwrap();
        let b = score_video(&field, &v, &cfg).unwrap();
        assert_eq!(a.indicators, b.indicators);
        assert_eq!(a.windows, b.windows);
        assert_eq!(a.indicators.len(), v.frame_count());
        for &x in &a.indicators {
            assert!((0.0..=1.0).contains(&x), "indicator {x} out of range");
        }
    }

    #[test]
    fn scores_csv_roundtrip_and_format() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("scores_raw.csv");
        let fin = dir.path().join("scores_final.csv");
        let vs = vec![
            VideoScores {
                video_id: "a".into(),
                windows: vec![(0, vec![0.125, 0.5]), (4, vec![1.0 / 3.0, 2.0])],
                indicators: vec![0.0, 0.25, 1.0],
            },
            VideoScores {
                video_id: "b".into(),
                windows: vec![(0, vec![0.75, 0.1])],
                indicators: vec![0.5, 0.5],
            },
        ];
        write_scores_raw(&raw, &vs).unwrap();
        write_scores_final(&fin, &vs).unwrap();

        let raw_text = std::fs::read_to_string(&raw).unwrap();
        let mut lines = raw_text.lines();
        assert_eq!(lines.next(), Some("video_id,t,level,score"));
        assert_eq!(lines.next(), Some("a,0,1,1.25000000e-1"));
        assert_eq!(lines.next(), Some("a,0,2,5.00000000e-1"));
        // nine significant digits survive in the third row's repeating third
        assert_eq!(lines.next(), Some("a,4,1,3.33333333e-1"));

        let back = read_scores_final(&fin).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "a");
        assert_eq!(back[0].1, vec![0.0, 0.25, 1.0]);
        assert_eq!(back[1].1, vec![0.5, 0.5]);
    }

    #[test]
    fn shifted_windows_score_higher_with_gaussian_oracle() {
        // data model: pixels i.i.d. N(0.5, 0.1²); oracle score of the noised
        // marginal N(0.5, 0.1²+σ²) is −(x̃−0.5)/(0.1²+σ²)
        let field = |x: &Tensor<Real>, sigma: f64, _: usize| {
            let inv = (1.0 / (0.01 + sigma * sigma)) as Real;
            Ok(x.map(|v| (0.5 - v) * inv))
        };
        let sched = NoiseSchedule::geometric(0.05, 0.8, 5).unwrap();
        let opts = ScoreOptions::default();
        let shape = [2usize, 4, 4, 1];
        let per_side = 60;
        let mut in_scores = Vec::with_capacity(per_side);
        let mut out_scores = Vec::with_capacity(per_side);
        for k in 0..per_side {
            let mut data_rng = crate::rng::stream(30, "rank-data", &[k as u64]);
            let base: Tensor<Real> =
                crate::rng::normal_tensor_scaled(&mut data_rng, &shape, 0.1).map(|v| v + 0.5);
            let shifted = base.map(|v| v + 0.35);
            let mut r1 = crate::rng::stream(31, "rank-noise", &[k as u64]);
            let mut r2 = crate::rng::stream(31, "rank-noise", &[k as u64]);
            let s_in: f64 = autoregressive_score(&field, &base, sched.levels(), 0, &opts, &mut r1)
                .unwrap()
                .iter()
                .sum();
            let s_out: f64 =
                autoregressive_score(&field, &shifted, sched.levels(), 0, &opts, &mut r2)
                    .unwrap()
                    .iter()
                    .sum();
            in_scores.push(s_in);
            out_scores.push(s_out);
        }
        // rank-sum: nearly every shifted window outscores every in-dist one
        let mut wins = 0usize;
        for &o in &out_scores {
            for &i in &in_scores {
                if o > i {
                    wins += 1;
                }
            }
        }
        let frac = wins as f64 / (per_side * per_side) as f64;
        assert!(frac > 0.9, "shifted windows won only {frac} of pairs");
    }
}
