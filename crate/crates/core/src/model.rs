//! The noise-conditioned score transformer.
//!
//! Tokens are linearly embedded, fixed 3-D sinusoidal position encodings
//! (frame, row, col) are added, and the sequence passes through a stack of
//! adaptively modulated transformer blocks. A per-block MLP maps the shared
//! condition vector z = concat(noise embedding, scene embedding) to six
//! per-channel vectors (γ¹, β¹, α¹, γ², β², α²):
//!
//! ```text
//! h ← h + α¹ ∘ MHA(γ¹ ∘ LayerNorm(h) + β¹)
//! h ← h + α² ∘ FFN(γ² ∘ LayerNorm(h) + β²)
//! ```
//!
//! The modulation MLP's output layer and the final linear head are
//! zero-initialized, and the α gates start at zero, so a freshly initialized
//! model computes the zero score field for every input — which gives early
//! training a stable starting point and tests a closed-form initial loss.
//!
//! Noise conditioning is continuous: a level σ maps to its position
//! u = (ln σ − ln σ₁)/(ln σ_L − ln σ₁) in the configured noise range, so the
//! log-uniform draws seen in training and the discrete ladder used at
//! inference share one embedding. For a geometric ladder, level i lands at
//! exactly u = (i−1)/(L−1).

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::require;
use crate::tensor::{Element, Real, Tensor};
use crate::video::{patchify, unpatchify};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionLayout {
    /// Every block attends over all N tokens.
    Joint,
    /// Blocks alternate: even blocks attend within each frame (spatial),
    /// odd blocks attend across frames at each grid position (temporal).
    Factorized,
}

impl AttentionLayout {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionLayout::Joint => "joint",
            AttentionLayout::Factorized => "factorized",
        }
    }
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(AttentionLayout::Joint),
            "factorized" => Ok(AttentionLayout::Factorized),
            other => Err(Error::Contract(format!(
                "unknown attention layout `{other}` (joint|factorized)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NcstConfig {
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Patch edge in pixels.
    pub d: usize,
    /// Frames per window (n).
    pub n_frames: usize,
    /// Patch-grid rows (H/d) and columns (W/d).
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    /// Width of the noise-level embedding.
    pub t_width: usize,
    /// Width of the scene embedding.
    pub s_width: usize,
    pub scene_count: usize,
    /// When false the scene embedding collapses to a single shared row and
    /// any label is accepted.
    pub scene_conditioned: bool,
    pub layout: AttentionLayout,
    /// Noise range the conditioning is calibrated to.
    pub sigma1: f64,
    pub sigma_l: f64,
}

impl NcstConfig {
    /// Desk-scale defaults for 32×32×3 video, 8-frame windows, 8-px patches.
    pub fn desk(scene_count: usize) -> Self {
        NcstConfig {
            width: 64,
            heads: 4,
            blocks: 4,
            d: 8,
            n_frames: 8,
            rows: 4,
            cols: 4,
            channels: 3,
            t_width: 64,
            s_width: 64,
            scene_count,
            scene_conditioned: true,
            layout: AttentionLayout::Joint,
            sigma1: 1e-3,
            sigma_l: 1.0,
        }
    }

    pub fn token_count(&self) -> usize {
        self.n_frames * self.rows * self.cols
    }

    pub fn token_width(&self) -> usize {
        self.d * self.d * self.channels
    }

    pub fn cond_width(&self) -> usize {
        self.t_width + self.s_width
    }

    pub fn validate(&self) -> Result<()> {
        require!(self.width > 0 && self.heads > 0 && self.blocks > 0, "empty model");
        require!(
            self.width % self.heads == 0,
            "width {} not divisible by {} heads",
            self.width,
            self.heads
        );
        require!(self.width >= 6, "width too small for 3-axis position encoding");
        require!(self.t_width % 2 == 0, "noise embedding width must be even");
        require!(
            self.d > 0 && self.n_frames >= 2 && self.rows > 0 && self.cols > 0 && self.channels > 0,
            "degenerate token geometry"
        );
        require!(self.scene_count >= 1, "need at least one scene class");
        require!(
            self.scene_conditioned || self.scene_count == 1,
            "unconditioned model must declare a single scene class"
        );
        require!(
            self.sigma1 > 0.0 && self.sigma_l > self.sigma1,
            "noise range [{}, {}] invalid",
            self.sigma1,
            self.sigma_l
        );
        Ok(())
    }

    /// Canonical flat key=value serialization; the fingerprint hashes this.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("blocks={}\n", self.blocks));
        s.push_str(&format!("channels={}\n", self.channels));
        s.push_str(&format!("cols={}\n", self.cols));
        s.push_str(&format!("d={}\n", self.d));
        s.push_str(&format!("heads={}\n", self.heads));
        s.push_str(&format!("layout={}\n", self.layout.as_str()));
        s.push_str(&format!("n_frames={}\n", self.n_frames));
        s.push_str(&format!("rows={}\n", self.rows));
        s.push_str(&format!("s_width={}\n", self.s_width));
        s.push_str(&format!("scene_conditioned={}\n", self.scene_conditioned));
        s.push_str(&format!("scene_count={}\n", self.scene_count));
        s.push_str(&format!("sigma1={}\n", self.sigma1));
        s.push_str(&format!("sigma_l={}\n", self.sigma_l));
        s.push_str(&format!("t_width={}\n", self.t_width));
        s.push_str(&format!("width={}\n", self.width));
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("bad config line `{line}`")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<&String> {
            kv.get(k)
                .ok_or_else(|| Error::Data(format!("config missing key `{k}`")))
        };
        let parse_usize = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Data(format!("config key `{k}` is not an integer")))
        };
        let parse_f64 = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Data(format!("config key `{k}` is not a number")))
        };
        let cfg = NcstConfig {
            width: parse_usize("width")?,
            heads: parse_usize("heads")?,
            blocks: parse_usize("blocks")?,
            d: parse_usize("d")?,
            n_frames: parse_usize("n_frames")?,
            rows: parse_usize("rows")?,
            cols: parse_usize("cols")?,
            channels: parse_usize("channels")?,
            t_width: parse_usize("t_width")?,
            s_width: parse_usize("s_width")?,
            scene_count: parse_usize("scene_count")?,
            scene_conditioned: get("scene_conditioned")? == "true",
            layout: AttentionLayout::parse(get("layout")?)?,
            sigma1: parse_f64("sigma1")?,
            sigma_l: parse_f64("sigma_l")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct BlockParams {
    pub mod_w1: Tensor<Real>,
    pub mod_b1: Tensor<Real>,
    pub mod_w2: Tensor<Real>,
    pub mod_b2: Tensor<Real>,
    pub wq: Tensor<Real>,
    pub bq: Tensor<Real>,
    pub wk: Tensor<Real>,
    pub bk: Tensor<Real>,
    pub wv: Tensor<Real>,
    pub bv: Tensor<Real>,
    pub wo: Tensor<Real>,
    pub bo: Tensor<Real>,
    pub ffn_w1: Tensor<Real>,
    pub ffn_b1: Tensor<Real>,
    pub ffn_w2: Tensor<Real>,
    pub ffn_b2: Tensor<Real>,
}

#[derive(Clone, Debug)]
pub struct NcstParams {
    pub embed_w: Tensor<Real>,
    pub embed_b: Tensor<Real>,
    pub t_w1: Tensor<Real>,
    pub t_b1: Tensor<Real>,
    pub t_w2: Tensor<Real>,
    pub t_b2: Tensor<Real>,
    pub scene_table: Tensor<Real>,
    pub blocks: Vec<BlockParams>,
    pub head_w: Tensor<Real>,
    pub head_b: Tensor<Real>,
}

const INIT_STD: f64 = 0.02;

impl NcstParams {
    pub fn init(cfg: &NcstConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = crate::rng::stream(seed, "ncst-init", &[]);
        let w = cfg.width;
        let zw = cfg.cond_width();
        let mut normal = |shape: &[usize]| -> Tensor<Real> {
            crate::rng::normal_tensor_scaled(&mut rng, shape, INIT_STD)
        };
        let blocks = (0..cfg.blocks)
            .map(|_| {
                // α gates start at zero: the output layer of the modulation
                // MLP is zeroed and its bias seeds γ=1, β=0, α=0.
                let mut mod_b2 = Tensor::zeros(&[6 * w]);
                for i in 0..w {
                    mod_b2.data_mut()[i] = 1.0; // γ¹
                    mod_b2.data_mut()[3 * w + i] = 1.0; // γ²
                }
                BlockParams {
                    mod_w1: normal(&[zw, zw]),
                    mod_b1: Tensor::zeros(&[zw]),
                    mod_w2: Tensor::zeros(&[zw, 6 * w]),
                    mod_b2,
                    wq: normal(&[w, w]),
                    bq: Tensor::zeros(&[w]),
                    wk: normal(&[w, w]),
                    bk: Tensor::zeros(&[w]),
                    wv: normal(&[w, w]),
                    bv: Tensor::zeros(&[w]),
                    wo: normal(&[w, w]),
                    bo: Tensor::zeros(&[w]),
                    ffn_w1: normal(&[w, 4 * w]),
                    ffn_b1: Tensor::zeros(&[4 * w]),
                    ffn_w2: normal(&[4 * w, w]),
                    ffn_b2: Tensor::zeros(&[w]),
                }
            })
            .collect();
        Ok(NcstParams {
            embed_w: normal(&[cfg.token_width(), w]),
            embed_b: Tensor::zeros(&[w]),
            t_w1: normal(&[cfg.t_width, cfg.t_width]),
            t_b1: Tensor::zeros(&[cfg.t_width]),
            t_w2: normal(&[cfg.t_width, cfg.t_width]),
            t_b2: Tensor::zeros(&[cfg.t_width]),
            scene_table: normal(&[cfg.scene_count, cfg.s_width]),
            blocks,
            head_w: Tensor::zeros(&[w, cfg.token_width()]),
            head_b: Tensor::zeros(&[cfg.token_width()]),
        })
    }

    /// Stable (name, tensor) listing; checkpoint and optimizer state follow
    /// this order exactly.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<Real>)> {
        let mut out: Vec<(String, &Tensor<Real>)> = vec![
            ("embed.w".into(), &self.embed_w),
            ("embed.b".into(), &self.embed_b),
            ("tmlp.w1".into(), &self.t_w1),
            ("tmlp.b1".into(), &self.t_b1),
            ("tmlp.w2".into(), &self.t_w2),
            ("tmlp.b2".into(), &self.t_b2),
            ("scene.table".into(), &self.scene_table),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (suffix, t) in [
                ("mod.w1", &b.mod_w1),
                ("mod.b1", &b.mod_b1),
                ("mod.w2", &b.mod_w2),
                ("mod.b2", &b.mod_b2),
                ("att.wq", &b.wq),
                ("att.bq", &b.bq),
                ("att.wk", &b.wk),
                ("att.bk", &b.bk),
                ("att.wv", &b.wv),
                ("att.bv", &b.bv),
                ("att.wo", &b.wo),
                ("att.bo", &b.bo),
                ("ffn.w1", &b.ffn_w1),
                ("ffn.b1", &b.ffn_b1),
                ("ffn.w2", &b.ffn_w2),
                ("ffn.b2", &b.ffn_b2),
            ] {
                out.push((format!("block{i}.{suffix}"), t));
            }
        }
        out.push(("head.w".into(), &self.head_w));
        out.push(("head.b".into(), &self.head_b));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<Real>)> {
        let mut out: Vec<(String, &mut Tensor<Real>)> = vec![
            ("embed.w".into(), &mut self.embed_w),
            ("embed.b".into(), &mut self.embed_b),
            ("tmlp.w1".into(), &mut self.t_w1),
            ("tmlp.b1".into(), &mut self.t_b1),
            ("tmlp.w2".into(), &mut self.t_w2),
            ("tmlp.b2".into(), &mut self.t_b2),
            ("scene.table".into(), &mut self.scene_table),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (suffix, t) in [
                ("mod.w1", &mut b.mod_w1),
                ("mod.b1", &mut b.mod_b1),
                ("mod.w2", &mut b.mod_w2),
                ("mod.b2", &mut b.mod_b2),
                ("att.wq", &mut b.wq),
                ("att.bq", &mut b.bq),
                ("att.wk", &mut b.wk),
                ("att.bk", &mut b.bk),
                ("att.wv", &mut b.wv),
                ("att.bv", &mut b.bv),
                ("att.wo", &mut b.wo),
                ("att.bo", &mut b.bo),
                ("ffn.w1", &mut b.ffn_w1),
                ("ffn.b1", &mut b.ffn_b1),
                ("ffn.w2", &mut b.ffn_w2),
                ("ffn.b2", &mut b.ffn_b2),
            ] {
                out.push((format!("block{i}.{suffix}"), t));
            }
        }
        out.push(("head.w".into(), &mut self.head_w));
        out.push(("head.b".into(), &mut self.head_b));
        out
    }

    /// Add N(0, std²) noise to every parameter (test helper for breaking the
    /// identity-at-init symmetry).
    pub fn jitter<R: Rng>(&mut self, std: f64, rng: &mut R) {
        for (_, t) in self.named_tensors_mut() {
            for v in t.data_mut() {
                *v += crate::rng::normal::<Real, R>(rng) * std as Real;
            }
        }
    }
}

/// Fixed 3-D sinusoidal position table over (frame, row, col): width/6
/// frequencies per coordinate pair, zero-padded when 6 ∤ width.
pub fn position_encoding(cfg: &NcstConfig) -> Tensor<Real> {
    let w = cfg.width;
    let k = w / 6;
    let n_tokens = cfg.token_count();
    let mut data = vec![0.0f32; n_tokens * w];
    let omega: Vec<f64> = (0..k)
        .map(|i| 1.0 / 10000f64.powf(i as f64 / k as f64))
        .collect();
    let mut j = 0usize;
    for f in 0..cfg.n_frames {
        for r in 0..cfg.rows {
            for c in 0..cfg.cols {
                let row = &mut data[j * w..(j + 1) * w];
                for (i, &om) in omega.iter().enumerate() {
                    row[i] = ((f as f64) * om).sin() as f32;
                    row[k + i] = ((f as f64) * om).cos() as f32;
                    row[2 * k + i] = ((r as f64) * om).sin() as f32;
                    row[3 * k + i] = ((r as f64) * om).cos() as f32;
                    row[4 * k + i] = ((c as f64) * om).sin() as f32;
                    row[5 * k + i] = ((c as f64) * om).cos() as f32;
                }
                j += 1;
            }
        }
    }
    Tensor::new(vec![n_tokens, w], data).expect("position table shape")
}

/// Noise level → position u ∈ [0,1] in log space over the configured range.
pub fn sigma_to_u(cfg: &NcstConfig, sigma: f64) -> Result<f64> {
    require!(sigma > 0.0, "sigma must be positive, got {sigma}");
    let u = (sigma.ln() - cfg.sigma1.ln()) / (cfg.sigma_l.ln() - cfg.sigma1.ln());
    Ok(u.clamp(0.0, 1.0))
}

/// Discrete ladder index → position u; level i of a geometric L-ladder sits
/// at u = (i−1)/(L−1).
pub fn timestep_to_u(i: usize, l: usize) -> Result<f64> {
    require!(l >= 1, "ladder needs at least one level");
    require!(
        (1..=l).contains(&i),
        "timestep {i} outside ladder 1..={l}"
    );
    if l == 1 {
        return Ok(1.0);
    }
    Ok((i - 1) as f64 / (l - 1) as f64)
}

/// Sinusoidal features of the noise position, input to the noise MLP.
fn noise_features(u: f64, t_width: usize) -> Tensor<Real> {
    let half = t_width / 2;
    let pos = u * 1000.0;
    let mut data = vec![0.0f32; t_width];
    for i in 0..half {
        let om = 1.0 / 10000f64.powf(i as f64 / half as f64);
        data[2 * i] = (pos * om).sin() as f32;
        data[2 * i + 1] = (pos * om).cos() as f32;
    }
    Tensor::new(vec![1, t_width], data).expect("noise feature shape")
}

/// Parameter handles recorded on a tape, mirroring [`NcstParams`].
pub struct NcstVars<'t> {
    pub embed_w: Var<'t, Real>,
    pub embed_b: Var<'t, Real>,
    pub t_w1: Var<'t, Real>,
    pub t_b1: Var<'t, Real>,
    pub t_w2: Var<'t, Real>,
    pub t_b2: Var<'t, Real>,
    pub scene_table: Var<'t, Real>,
    pub blocks: Vec<BlockVars<'t>>,
    pub head_w: Var<'t, Real>,
    pub head_b: Var<'t, Real>,
}

pub struct BlockVars<'t> {
    pub mod_w1: Var<'t, Real>,
    pub mod_b1: Var<'t, Real>,
    pub mod_w2: Var<'t, Real>,
    pub mod_b2: Var<'t, Real>,
    pub wq: Var<'t, Real>,
    pub bq: Var<'t, Real>,
    pub wk: Var<'t, Real>,
    pub bk: Var<'t, Real>,
    pub wv: Var<'t, Real>,
    pub bv: Var<'t, Real>,
    pub wo: Var<'t, Real>,
    pub bo: Var<'t, Real>,
    pub ffn_w1: Var<'t, Real>,
    pub ffn_b1: Var<'t, Real>,
    pub ffn_w2: Var<'t, Real>,
    pub ffn_b2: Var<'t, Real>,
}

/// Record every parameter on the tape. Trainable recording yields gradients;
/// constant recording is for inference.
pub fn record_params<'t>(tape: &'t Tape<Real>, p: &NcstParams, trainable: bool) -> NcstVars<'t> {
    let rec = |t: &Tensor<Real>| {
        if trainable {
            tape.param(t)
        } else {
            tape.constant(t)
        }
    };
    NcstVars {
        embed_w: rec(&p.embed_w),
        embed_b: rec(&p.embed_b),
        t_w1: rec(&p.t_w1),
        t_b1: rec(&p.t_b1),
        t_w2: rec(&p.t_w2),
        t_b2: rec(&p.t_b2),
        scene_table: rec(&p.scene_table),
        blocks: p
            .blocks
            .iter()
            .map(|b| BlockVars {
                mod_w1: rec(&b.mod_w1),
                mod_b1: rec(&b.mod_b1),
                mod_w2: rec(&b.mod_w2),
                mod_b2: rec(&b.mod_b2),
                wq: rec(&b.wq),
                bq: rec(&b.bq),
                wk: rec(&b.wk),
                bk: rec(&b.bk),
                wv: rec(&b.wv),
                bv: rec(&b.bv),
                wo: rec(&b.wo),
                bo: rec(&b.bo),
                ffn_w1: rec(&b.ffn_w1),
                ffn_b1: rec(&b.ffn_b1),
                ffn_w2: rec(&b.ffn_w2),
                ffn_b2: rec(&b.ffn_b2),
            })
            .collect(),
        head_w: rec(&p.head_w),
        head_b: rec(&p.head_b),
    }
}

impl<'t> NcstVars<'t> {
    /// Flat handle list in [`NcstParams::named_tensors`] order.
    pub fn flat(&self) -> Vec<Var<'t, Real>> {
        let mut out = vec![
            self.embed_w,
            self.embed_b,
            self.t_w1,
            self.t_b1,
            self.t_w2,
            self.t_b2,
            self.scene_table,
        ];
        for b in &self.blocks {
            out.extend([
                b.mod_w1, b.mod_b1, b.mod_w2, b.mod_b2, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv,
                b.wo, b.bo, b.ffn_w1, b.ffn_b1, b.ffn_w2, b.ffn_b2,
            ]);
        }
        out.push(self.head_w);
        out.push(self.head_b);
        out
    }
}

/// Noise embedding: sinusoidal features of u through a two-layer GELU MLP.
pub fn embed_noise_on_tape<'t>(
    tape: &'t Tape<Real>,
    vars: &NcstVars<'t>,
    cfg: &NcstConfig,
    u: f64,
) -> Result<Var<'t, Real>> {
    let feats = tape.constant(&noise_features(u, cfg.t_width));
    feats
        .matmul(vars.t_w1)?
        .add(vars.t_b1)?
        .gelu()?
        .matmul(vars.t_w2)?
        .add(vars.t_b2)
}

/// Scene embedding: learned table row. Labels outside the table are refused
/// unless the model is unconditioned (then everything maps to row 0).
pub fn embed_scene_on_tape<'t>(
    vars: &NcstVars<'t>,
    cfg: &NcstConfig,
    scene: usize,
) -> Result<Var<'t, Real>> {
    let row = if cfg.scene_conditioned {
        if scene >= cfg.scene_count {
            return Err(Error::Contract(format!(
                "unseen scene class {scene} (model knows 0..{})",
                cfg.scene_count
            )));
        }
        scene
    } else {
        0
    };
    vars.scene_table.gather_rows(&[row])
}

/// z = concat(noise embedding, scene embedding), shape [1, t_width+s_width].
pub fn combine_condition<'t>(
    tape: &'t Tape<Real>,
    e_t: Var<'t, Real>,
    e_y: Var<'t, Real>,
) -> Result<Var<'t, Real>> {
    require!(
        e_t.shape().len() == 2 && e_t.shape()[0] == 1,
        "noise embedding must be [1, w], got {:?}",
        e_t.shape()
    );
    require!(
        e_y.shape().len() == 2 && e_y.shape()[0] == 1,
        "scene embedding must be [1, w], got {:?}",
        e_y.shape()
    );
    tape.concat(&[e_t, e_y], 1)
}

/// The six modulation vectors [γ¹, β¹, α¹, γ², β², α²], each of model width.
fn block_modulation<'t>(
    bv: &BlockVars<'t>,
    z: Var<'t, Real>,
    width: usize,
) -> Result<[Var<'t, Real>; 6]> {
    let m = z
        .matmul(bv.mod_w1)?
        .add(bv.mod_b1)?
        .gelu()?
        .matmul(bv.mod_w2)?
        .add(bv.mod_b2)?; // [1, 6W]
    let parts = m.split(1, 6)?;
    let mut out = Vec::with_capacity(6);
    for p in parts {
        out.push(p.reshape(&[width])?);
    }
    Ok([out[0], out[1], out[2], out[3], out[4], out[5]])
}

/// Multi-head self-attention over the full token axis.
fn joint_attention<'t>(
    tape: &'t Tape<Real>,
    bv: &BlockVars<'t>,
    h: Var<'t, Real>,
    heads: usize,
) -> Result<Var<'t, Real>> {
    let q = h.matmul(bv.wq)?.add(bv.bq)?;
    let k = h.matmul(bv.wk)?.add(bv.bk)?;
    let v = h.matmul(bv.wv)?.add(bv.bv)?;
    let merged = attend_heads(tape, q, k, v, heads)?;
    merged.matmul(bv.wo)?.add(bv.bo)
}

/// Per-head scaled dot-product attention on already-projected q/k/v.
fn attend_heads<'t>(
    tape: &'t Tape<Real>,
    q: Var<'t, Real>,
    k: Var<'t, Real>,
    v: Var<'t, Real>,
    heads: usize,
) -> Result<Var<'t, Real>> {
    let width = q.shape()[1];
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let qs = q.split(1, heads)?;
    let ks = k.split(1, heads)?;
    let vs = v.split(1, heads)?;
    let mut outs = Vec::with_capacity(heads);
    for i in 0..heads {
        let attn = qs[i]
            .matmul(ks[i].transpose()?)?
            .mul_scalar(scale as Real)?
            .softmax()?;
        outs.push(attn.matmul(vs[i])?);
    }
    tape.concat(&outs, 1)
}

/// Attention restricted to equal-sized contiguous groups of tokens.
fn grouped_attention<'t>(
    tape: &'t Tape<Real>,
    bv: &BlockVars<'t>,
    h: Var<'t, Real>,
    heads: usize,
    groups: usize,
) -> Result<Var<'t, Real>> {
    let q = h.matmul(bv.wq)?.add(bv.bq)?;
    let k = h.matmul(bv.wk)?.add(bv.bk)?;
    let v = h.matmul(bv.wv)?.add(bv.bv)?;
    let qg = q.split(0, groups)?;
    let kg = k.split(0, groups)?;
    let vg = v.split(0, groups)?;
    let mut outs = Vec::with_capacity(groups);
    for g in 0..groups {
        outs.push(attend_heads(tape, qg[g], kg[g], vg[g], heads)?);
    }
    tape.concat(&outs, 0)?.matmul(bv.wo)?.add(bv.bo)
}

/// Token permutation taking frame-major order to position-major order.
fn temporal_perm(cfg: &NcstConfig) -> (Vec<usize>, Vec<usize>) {
    let spatial = cfg.rows * cfg.cols;
    let n = cfg.n_frames;
    let mut perm = Vec::with_capacity(n * spatial);
    for j in 0..spatial {
        for f in 0..n {
            perm.push(f * spatial + j);
        }
    }
    let mut inverse = vec![0usize; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    (perm, inverse)
}

/// One adaptively modulated block: attention sublayer then FFN sublayer,
/// each wrapped as `h + α ∘ sub(γ ∘ LN(h) + β)`.
pub fn s_adaln_block<'t>(
    tape: &'t Tape<Real>,
    bv: &BlockVars<'t>,
    cfg: &NcstConfig,
    block_index: usize,
    h: Var<'t, Real>,
    z: Var<'t, Real>,
) -> Result<Var<'t, Real>> {
    let [g1, b1, a1, g2, b2, a2] = block_modulation(bv, z, cfg.width)?;
    let pre = h.layer_norm()?.mul(g1)?.add(b1)?;
    let attn = match cfg.layout {
        AttentionLayout::Joint => joint_attention(tape, bv, pre, cfg.heads)?,
        AttentionLayout::Factorized => {
            if block_index % 2 == 0 {
                // spatial: tokens of one frame are contiguous
                grouped_attention(tape, bv, pre, cfg.heads, cfg.n_frames)?
            } else {
                // temporal: regroup tokens by grid position
                let (perm, inverse) = temporal_perm(cfg);
                let regrouped = pre.gather_rows(&perm)?;
                let attended =
                    grouped_attention(tape, bv, regrouped, cfg.heads, cfg.rows * cfg.cols)?;
                attended.gather_rows(&inverse)?
            }
        }
    };
    let h = h.add(attn.mul(a1)?)?;
    let pre = h.layer_norm()?.mul(g2)?.add(b2)?;
    let ffn = pre
        .matmul(bv.ffn_w1)?
        .add(bv.ffn_b1)?
        .gelu()?
        .matmul(bv.ffn_w2)?
        .add(bv.ffn_b2)?;
    h.add(ffn.mul(a2)?)
}

/// Full forward pass at a continuous noise position u.
pub fn ncst_forward_on_tape<'t>(
    tape: &'t Tape<Real>,
    vars: &NcstVars<'t>,
    cfg: &NcstConfig,
    tokens: Var<'t, Real>,
    u: f64,
    scene: usize,
) -> Result<Var<'t, Real>> {
    let n = cfg.token_count();
    require!(
        tokens.shape() == [n, cfg.token_width()],
        "expected {} tokens of width {}, got {:?}",
        n,
        cfg.token_width(),
        tokens.shape()
    );
    let e_t = embed_noise_on_tape(tape, vars, cfg, u)?;
    let e_y = embed_scene_on_tape(vars, cfg, scene)?;
    let z = combine_condition(tape, e_t, e_y)?;
    let pos = tape.constant(&position_encoding(cfg));
    let mut h = tokens.matmul(vars.embed_w)?.add(vars.embed_b)?.add(pos)?;
    for (i, bv) in vars.blocks.iter().enumerate() {
        h = s_adaln_block(tape, bv, cfg, i, h, z)?;
    }
    h.layer_norm()?.matmul(vars.head_w)?.add(vars.head_b)
}

/// Frozen model bundle used at inference time.
#[derive(Clone, Debug)]
pub struct NcstModel {
    pub cfg: NcstConfig,
    pub params: NcstParams,
}

impl NcstModel {
    /// Per-token score estimate at noise level σ: a fresh tape with constant
    /// parameters, immediately discarded.
    pub fn score_tokens(&self, tokens: &Tensor<Real>, sigma: f64, scene: usize) -> Result<Tensor<Real>> {
        let u = sigma_to_u(&self.cfg, sigma)?;
        let tape = Tape::new();
        let vars = record_params(&tape, &self.params, false);
        let t = tape.constant(tokens);
        Ok(ncst_forward_on_tape(&tape, &vars, &self.cfg, t, u, scene)?.tensor())
    }

    /// Score estimate at the i-th level of an L-level ladder.
    pub fn score_tokens_at_level(
        &self,
        tokens: &Tensor<Real>,
        i: usize,
        l: usize,
        scene: usize,
    ) -> Result<Tensor<Real>> {
        let u = timestep_to_u(i, l)?;
        let tape = Tape::new();
        let vars = record_params(&tape, &self.params, false);
        let t = tape.constant(tokens);
        Ok(ncst_forward_on_tape(&tape, &vars, &self.cfg, t, u, scene)?.tensor())
    }

    /// Score field over a whole `[n, H, W, c]` window, reassembled to frames.
    pub fn score_field(&self, window: &Tensor<Real>, sigma: f64, scene: usize) -> Result<Tensor<Real>> {
        let batch = patchify(window, self.cfg.d)?;
        let scores = self.score_tokens(&batch.tokens, sigma, scene)?;
        let rebuilt = crate::video::TokenBatch {
            tokens: scores,
            positions: batch.positions,
            n: batch.n,
            rows: batch.rows,
            cols: batch.cols,
            d: batch.d,
            c: batch.c,
        };
        unpatchify(&rebuilt, self.cfg.rows * self.cfg.d, self.cfg.cols * self.cfg.d)
    }

    /// Standalone noise embedding (spec surface for tests).
    pub fn embed_timestep(&self, i: usize, l: usize) -> Result<Tensor<Real>> {
        let u = timestep_to_u(i, l)?;
        let tape = Tape::new();
        let vars = record_params(&tape, &self.params, false);
        Ok(embed_noise_on_tape(&tape, &vars, &self.cfg, u)?.tensor())
    }

    /// Standalone scene embedding (spec surface for tests).
    pub fn embed_scene(&self, scene: usize) -> Result<Tensor<Real>> {
        let tape = Tape::new();
        let vars = record_params(&tape, &self.params, false);
        Ok(embed_scene_on_tape(&vars, &self.cfg, scene)?.tensor())
    }
}

/// Cosine similarity between two equally-shaped tensors, in f64.
pub fn cosine_similarity<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let dot: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x.as_f64() * y.as_f64())
        .sum();
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}
