//! Denoising score matching training.
//!
//! Each training example is an n-frame window x. One noise level σ is drawn
//! log-uniformly per batch element, the window is perturbed to x̃ = x + σε,
//! and the model regresses the score target −(x̃ − x)/σ². The loss weights
//! the per-token squared error by motion weights ω computed from the clean
//! window, and scales by σ²/2 so every noise level contributes at a
//! comparable magnitude:
//!
//! ```text
//! L = (σ²/2) · Σⱼ ωⱼ ‖sθ(x̃)ⱼ − targetⱼ‖²
//! ```
//!
//! A freshly initialized model outputs zero, so its expected loss has the
//! closed form (1/2)·Σⱼ ωⱼ‖εⱼ‖², which the tests pin down exactly.

use crate::autodiff::{Tape, Var};
use crate::checkpoint::OptState;
use crate::error::{Error, Result};
use crate::model::{ncst_forward_on_tape, record_params, sigma_to_u, NcstConfig, NcstParams, NcstVars};
use crate::optim::{cosine_anneal_lr, Adamax};
use crate::require;
use crate::tensor::{Element, Real, Tensor};
use crate::video::{motion_weights, patchify, sample_sigma_loguniform, window_starts, VideoSequence};
use rand::seq::SliceRandom;

/// Score-matching regression target −(x̃ − x)/σ².
pub fn dsm_target(x_noisy: &Tensor<Real>, x_clean: &Tensor<Real>, sigma: f64) -> Result<Tensor<Real>> {
    require!(
        x_noisy.shape() == x_clean.shape(),
        "noisy/clean shape mismatch: {:?} vs {:?}",
        x_noisy.shape(),
        x_clean.shape()
    );
    require!(
        sigma > 0.0,
        "score target is undefined at sigma = {sigma}; perturb with a positive noise level"
    );
    let inv = (1.0 / (sigma * sigma)) as Real;
    let data = x_noisy
        .data()
        .iter()
        .zip(x_clean.data())
        .map(|(&xn, &xc)| (xc - xn) * inv)
        .collect();
    let t = Tensor::new(x_noisy.shape().to_vec(), data)?;
    t.check_finite("dsm_target")?;
    Ok(t)
}

/// Token weights replicated across token width, ready for elementwise use.
/// Motion weighting follows frame differences; otherwise all tokens weigh
/// 1/N, which keeps the loss scale comparable between the two modes.
fn omega_expanded(
    window_clean: &Tensor<Real>,
    d: usize,
    token_width: usize,
    motion_weighted: bool,
) -> Result<Tensor<Real>> {
    let omega: Vec<f64> = if motion_weighted {
        motion_weights(window_clean, d)?.omega
    } else {
        let frames = window_clean.shape()[0];
        let n = frames * (window_clean.shape()[1] / d) * (window_clean.shape()[2] / d);
        vec![1.0 / n as f64; n]
    };
    let n = omega.len();
    let mut data = Vec::with_capacity(n * token_width);
    for &o in &omega {
        data.extend(std::iter::repeat(o as Real).take(token_width));
    }
    Tensor::new(vec![n, token_width], data)
}

/// Loss of one window at one noise draw, recorded on the tape.
pub fn window_loss_on_tape<'t>(
    tape: &'t Tape<Real>,
    vars: &NcstVars<'t>,
    cfg: &NcstConfig,
    window_clean: &Tensor<Real>,
    sigma: f64,
    eps: &Tensor<Real>,
    scene: usize,
    motion_weighted: bool,
) -> Result<Var<'t, Real>> {
    require!(
        eps.shape() == window_clean.shape(),
        "noise shape {:?} does not match window {:?}",
        eps.shape(),
        window_clean.shape()
    );
    let noisy_data: Vec<Real> = window_clean
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| x + sigma as Real * e)
        .collect();
    let noisy = Tensor::new(window_clean.shape().to_vec(), noisy_data)?;
    let target = dsm_target(&noisy, window_clean, sigma)?;

    let tokens = tape.constant(&patchify(&noisy, cfg.d)?.tokens);
    let target_tokens = tape.constant(&patchify(&target, cfg.d)?.tokens);
    let omega = tape.constant(&omega_expanded(
        window_clean,
        cfg.d,
        cfg.token_width(),
        motion_weighted,
    )?);

    let u = sigma_to_u(cfg, sigma)?;
    let s = ncst_forward_on_tape(tape, vars, cfg, tokens, u, scene)?;
    let diff = s.sub(target_tokens)?;
    let weighted = diff.mul(diff)?.mul(omega)?;
    weighted.sum()?.mul_scalar((sigma * sigma / 2.0) as Real)
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Global gradient-norm ceiling; values ≤ 0 disable clipping.
    pub grad_clip: f64,
    /// Weight token losses by frame-difference motion (vs uniform 1/N).
    pub motion_weighted: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 12,
            batch_size: 8,
            lr: 3e-3,
            grad_clip: 1.0,
            motion_weighted: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Mean per-window loss for each epoch.
    pub loss_history: Vec<f64>,
    pub steps: u64,
}

/// Distinct scene labels present in the data, sorted.
pub fn scene_classes(videos: &[VideoSequence]) -> Vec<usize> {
    let mut labels: Vec<usize> = videos.iter().map(|v| v.scene_label).collect();
    labels.sort_unstable();
    labels.dedup();
    labels
}

/// Train from scratch on the windows of `videos`.
pub fn train(
    videos: &[VideoSequence],
    cfg: &NcstConfig,
    tc: &TrainConfig,
) -> Result<(NcstParams, OptState, TrainReport)> {
    cfg.validate()?;
    require!(tc.epochs > 0, "need at least one epoch");
    require!(tc.batch_size > 0, "need a positive batch size");
    require!(!videos.is_empty(), "no training videos");
    let classes = scene_classes(videos);
    if cfg.scene_conditioned {
        // labels must be exactly 0..scene_count so every table row trains
        require!(
            classes.len() == cfg.scene_count
                && classes.last().is_some_and(|&l| l == cfg.scene_count - 1),
            "training data has scene classes {:?}, model expects 0..{}",
            classes,
            cfg.scene_count
        );
    }
    for v in videos {
        require!(
            v.height() == cfg.rows * cfg.d
                && v.width() == cfg.cols * cfg.d
                && v.channels() == cfg.channels,
            "video {} geometry {}x{}x{} does not match model ({}x{}x{})",
            v.video_id,
            v.height(),
            v.width(),
            v.channels(),
            cfg.rows * cfg.d,
            cfg.cols * cfg.d,
            cfg.channels
        );
    }

    // pool of (video index, window start), fixed order then shuffled per epoch
    let mut pool = Vec::new();
    for (vi, v) in videos.iter().enumerate() {
        for start in window_starts(v.frame_count(), cfg.n_frames) {
            pool.push((vi, start));
        }
    }
    require!(!pool.is_empty(), "no full {}-frame windows in training data", cfg.n_frames);

    let mut params = NcstParams::init(cfg, tc.seed)?;
    let shapes: Vec<Vec<usize>> = params
        .named_tensors()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let mut opt = Adamax::<Real>::new(&shape_refs);
    let mut loss_history = Vec::with_capacity(tc.epochs);
    let mut steps = 0u64;

    for epoch in 0..tc.epochs {
        let mut order = pool.clone();
        let mut shuffle_rng = crate::rng::stream(tc.seed, "train-shuffle", &[epoch as u64]);
        order.shuffle(&mut shuffle_rng);
        let mut noise_rng = crate::rng::stream(tc.seed, "train-noise", &[epoch as u64]);
        let lr = cosine_anneal_lr(tc.lr, epoch, tc.epochs);

        let mut epoch_loss = 0.0f64;
        let mut epoch_count = 0usize;
        for (batch_idx, batch) in order.chunks(tc.batch_size).enumerate() {
            let mut sigmas = Vec::with_capacity(batch.len());
            let outcome: Result<f64> = (|| {
                let tape = Tape::new();
                let vars = record_params(&tape, &params, true);
                let mut total: Option<Var<Real>> = None;
                for &(vi, start) in batch {
                    let v = &videos[vi];
                    let window = v.window(start, cfg.n_frames)?;
                    let sigma = sample_sigma_loguniform(cfg.sigma1, cfg.sigma_l, &mut noise_rng)?;
                    sigmas.push(sigma);
                    let eps = crate::rng::normal_tensor(&mut noise_rng, window.shape());
                    let scene = if cfg.scene_conditioned { v.scene_label } else { 0 };
                    let l = window_loss_on_tape(&tape, &vars, cfg, &window, sigma, &eps, scene, tc.motion_weighted)?;
                    total = Some(match total {
                        None => l,
                        Some(t) => t.add(l)?,
                    });
                }
                let total = total.expect("non-empty batch");
                let mean = total.mul_scalar(1.0 / batch.len() as Real)?;
                let loss_value = mean.tensor().scalar_value()?.as_f64();

                let handles = vars.flat();
                let mut grads = mean.grad(&handles)?;
                if tc.grad_clip > 0.0 {
                    let norm_sq: f64 = grads.iter().map(|g| g.sq_norm()).sum();
                    let norm = norm_sq.sqrt();
                    if norm > tc.grad_clip {
                        let scale = (tc.grad_clip / norm) as Real;
                        for g in &mut grads {
                            for v in g.data_mut() {
                                *v *= scale;
                            }
                        }
                    }
                }
                let mut slots = params.named_tensors_mut();
                let mut refs: Vec<&mut Tensor<Real>> =
                    slots.iter_mut().map(|(_, t)| &mut **t).collect();
                opt.step(lr, &mut refs, &grads)?;
                Ok(loss_value)
            })();
            // abort rather than continue past a numeric fault, with enough
            // context to reproduce the failing batch
            let loss_value = outcome.map_err(|e| match e {
                Error::Numeric { op, detail } => Error::Numeric {
                    op,
                    detail: format!(
                        "epoch {epoch}, batch {batch_idx}, sigmas {sigmas:?}: {detail}"
                    ),
                },
                other => other,
            })?;
            epoch_loss += loss_value * batch.len() as f64;
            epoch_count += batch.len();
            steps += 1;
        }
        loss_history.push(epoch_loss / epoch_count as f64);
    }

    let (opt_step, opt_m, opt_u) = opt.state();
    let opt_state = OptState {
        step: opt_step,
        m: opt_m,
        u: opt_u,
    };
    Ok((
        params,
        opt_state,
        TrainReport {
            loss_history,
            steps,
        },
    ))
}
