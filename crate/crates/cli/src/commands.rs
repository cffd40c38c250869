//! The six commands. Each resolves its settings, runs the corresponding
//! library calls, writes artifacts plus a manifest, and can rebuild itself
//! from that manifest for replay.

use crate::config::{parse_fusion_weights, parse_kv, parse_rates, TrainSettings};
use crate::manifest::{Manifest, ReplayManifest};
use crate::svg;
use adsm_core::checkpoint::{self, config_fingerprint, Checkpoint, CheckpointMeta};
use adsm_core::dataset::{load_split, save_dataset};
use adsm_core::eval::{macro_auc, micro_auc, LabeledScores, LabeledVideo};
use adsm_core::mixture::{exhibit_blind_spot, grid_points, mixture_score_field, parse_mixture};
use adsm_core::model::NcstModel;
use adsm_core::score::{
    read_scores_final, score_videos, write_scores_final, write_scores_raw, ScoreConfig,
};
use adsm_core::synth::{default_catalog, generate_synthetic_dataset, SyntheticDatasetSpec};
use adsm_core::train::{scene_classes, train};
use adsm_core::video::NoiseSchedule;
use adsm_core::{Error, Result};
use clap::Args;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Record every regular file of `dir` (sorted) under `<prefix>.<name>`.
fn put_dir_files(m: &mut Manifest, prefix: &str, dir: &Path) -> Result<()> {
    let mut names: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    for name in names {
        m.put_file(&format!("{prefix}.{name}"), &dir.join(&name))?;
    }
    Ok(())
}

/// Accept either a split directory (has scenes.csv) or a dataset root
/// containing the wanted split.
fn resolve_split(data: &Path, split: &str) -> Result<PathBuf> {
    if data.join("scenes.csv").is_file() {
        return Ok(data.to_path_buf());
    }
    let nested = data.join(split);
    if nested.join("scenes.csv").is_file() {
        return Ok(nested);
    }
    Err(Error::Data(format!(
        "{}: neither a split directory nor a dataset root with a `{split}` split",
        data.display()
    )))
}

/// `video_id,frame_index,label` sidecar, as written by the generator.
fn read_labels_csv(path: &Path) -> Result<BTreeMap<String, Vec<(usize, bool)>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: cannot read labels: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("video_id,frame_index,label") => {}
        other => {
            return Err(Error::Data(format!(
                "{}: labels header missing or wrong: {other:?}",
                path.display()
            )))
        }
    }
    let mut out: BTreeMap<String, Vec<(usize, bool)>> = BTreeMap::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Data(format!(
                "{}:{}: expected 3 columns",
                path.display(),
                ln + 2
            )));
        }
        let frame: usize = fields[1].trim().parse().map_err(|_| {
            Error::Data(format!("{}:{}: bad frame index", path.display(), ln + 2))
        })?;
        let label = match fields[2].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Data(format!(
                    "{}:{}: label {other} not 0/1",
                    path.display(),
                    ln + 2
                )))
            }
        };
        out.entry(fields[0].to_string()).or_default().push((frame, label));
    }
    Ok(out)
}

/// Align scored videos with their labels; every scored frame needs one.
fn labeled_scores(
    scores: Vec<(String, Vec<f64>)>,
    labels: &BTreeMap<String, Vec<(usize, bool)>>,
) -> Result<LabeledScores> {
    let mut videos = Vec::with_capacity(scores.len());
    for (id, indicators) in scores {
        let rows = labels
            .get(&id)
            .ok_or_else(|| Error::Data(format!("no labels for scored video {id}")))?;
        let mut frame_labels: Vec<Option<u8>> = vec![None; indicators.len()];
        for &(f, l) in rows {
            if f >= frame_labels.len() {
                return Err(Error::Data(format!(
                    "{id}: label frame {f} beyond {} scored frames",
                    frame_labels.len()
                )));
            }
            frame_labels[f] = Some(u8::from(l));
        }
        let plain: Vec<u8> = frame_labels
            .iter()
            .enumerate()
            .map(|(f, l)| l.ok_or_else(|| Error::Data(format!("{id}: frame {f} unlabeled"))))
            .collect::<Result<_>>()?;
        videos.push(LabeledVideo::new(id, indicators, plain)?);
    }
    Ok(LabeledScores { videos })
}

// ---------------------------------------------------------------- generate

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Number of camera scenes.
    #[arg(long, default_value_t = 2)]
    pub scenes: usize,
    /// Train and test videos per scene (each split gets this many).
    #[arg(long = "videos-per-scene", default_value_t = 5)]
    pub videos_per_scene: usize,
    /// Frames per video.
    #[arg(long, default_value_t = 64)]
    pub frames: usize,
    /// Square frame edge in pixels.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Injector rates `scene,motion,appearance`.
    #[arg(long = "anomaly-rates", default_value = "0.1,0.1,0.1")]
    pub anomaly_rates: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset root to write (`<out>/train`, `<out>/test`).
    #[arg(long)]
    pub out: PathBuf,
}

fn spec_to_manifest(m: &mut Manifest, spec: &SyntheticDatasetSpec) {
    let r = &spec.anomaly_rates;
    let mut s = String::new();
    writeln!(s, "scenes={}", spec.scenes).unwrap();
    writeln!(s, "train_videos_per_scene={}", spec.train_videos_per_scene).unwrap();
    writeln!(s, "test_videos_per_scene={}", spec.test_videos_per_scene).unwrap();
    writeln!(s, "frames_per_video={}", spec.frames_per_video).unwrap();
    writeln!(s, "frame_size={}", spec.frame_size).unwrap();
    writeln!(s, "objects_per_video={}", spec.objects_per_video).unwrap();
    writeln!(s, "sensor_noise={}", spec.sensor_noise).unwrap();
    writeln!(s, "rate_scene={}", r.scene).unwrap();
    writeln!(s, "rate_motion={}", r.motion).unwrap();
    writeln!(s, "rate_appearance={}", r.appearance).unwrap();
    writeln!(s, "seed={}", spec.seed).unwrap();
    m.put_cfg_block(&s);
}

fn spec_from_kv(kv: &BTreeMap<String, String>, origin: &str) -> Result<SyntheticDatasetSpec> {
    let get = |k: &str| -> Result<&String> {
        kv.get(k)
            .ok_or_else(|| Error::Data(format!("{origin}: missing key `{k}`")))
    };
    let usize_of = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Data(format!("{origin}: key `{k}` is not an integer")))
    };
    let f64_of = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Data(format!("{origin}: key `{k}` is not a number")))
    };
    let scenes = usize_of("scenes")?;
    let seed: u64 = get("seed")?
        .parse()
        .map_err(|_| Error::Data(format!("{origin}: bad seed")))?;
    let mut spec = SyntheticDatasetSpec::tiny(scenes, seed);
    spec.train_videos_per_scene = usize_of("train_videos_per_scene")?;
    spec.test_videos_per_scene = usize_of("test_videos_per_scene")?;
    spec.frames_per_video = usize_of("frames_per_video")?;
    spec.frame_size = usize_of("frame_size")?;
    spec.objects_per_video = usize_of("objects_per_video")?;
    spec.sensor_noise = f64_of("sensor_noise")?;
    spec.catalog = default_catalog(spec.frame_size);
    spec.anomaly_rates.scene = f64_of("rate_scene")?;
    spec.anomaly_rates.motion = f64_of("rate_motion")?;
    spec.anomaly_rates.appearance = f64_of("rate_appearance")?;
    Ok(spec)
}

fn run_generate(spec: &SyntheticDatasetSpec, out: &Path) -> Result<()> {
    let mut manifest = Manifest::new("generate");
    spec_to_manifest(&mut manifest, spec);
    let ds = generate_synthetic_dataset(spec)?;
    save_dataset(&ds, out)?;
    manifest.put("output.dir", out.display());
    put_dir_files(&mut manifest, "output.train", &out.join("train"))?;
    put_dir_files(&mut manifest, "output.test", &out.join("test"))?;
    manifest.write(&out.join("generate.manifest"))?;
    println!(
        "generated {} train + {} test videos ({} injected) -> {}",
        ds.train.len(),
        ds.test.len(),
        ds.injections.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let rates = parse_rates(&a.anomaly_rates)?;
    let mut spec = SyntheticDatasetSpec::tiny(a.scenes, a.seed);
    spec.train_videos_per_scene = a.videos_per_scene;
    spec.test_videos_per_scene = a.videos_per_scene;
    spec.frames_per_video = a.frames;
    spec.frame_size = a.size;
    spec.catalog = default_catalog(a.size);
    spec.anomaly_rates.scene = rates[0];
    spec.anomaly_rates.motion = rates[1];
    spec.anomaly_rates.appearance = rates[2];
    run_generate(&spec, &a.out)
}

pub fn replay_generate(m: &ReplayManifest) -> Result<()> {
    let kv = parse_kv(&m.cfg_block(), "manifest cfg")?;
    let spec = spec_from_kv(&kv, "manifest cfg")?;
    run_generate(&spec, Path::new(m.get("output.dir")?))
}

// ------------------------------------------------------------------- train

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Flat key=value config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root or train-split directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Train with uniform token weights instead of motion weights.
    #[arg(long = "no-motion-weights")]
    pub no_motion_weights: bool,
    /// Drop the scene label input (single shared scene embedding).
    #[arg(long = "no-scene-condition")]
    pub no_scene_condition: bool,
}

fn run_train(settings: &TrainSettings, data: &Path, out: &Path) -> Result<()> {
    let mut manifest = Manifest::new("train");
    manifest.put_cfg_block(&settings.to_kv());
    manifest.put("input.data", data.display());
    put_dir_files(&mut manifest, "input.data", data)?;

    let videos = load_split(data)?;
    let (params, opt, report) = train(&videos, &settings.model, &settings.train)?;
    let ckpt = Checkpoint {
        cfg: settings.model.clone(),
        params,
        meta: CheckpointMeta {
            epoch: settings.train.epochs as u32,
            seed: settings.train.seed,
            loss_history: report.loss_history.clone(),
        },
        opt: Some(opt),
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    checkpoint::save(out, &ckpt)?;
    manifest.put_file("output.ckpt", out)?;
    manifest.write(&out.with_extension("manifest"))?;
    println!(
        "trained {} epochs, {} steps; loss {:.4} -> {:.4}; ckpt {}",
        settings.train.epochs,
        report.steps,
        report.loss_history.first().copied().unwrap_or(f64::NAN),
        report.loss_history.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let data = resolve_split(&a.data, "train")?;
    let videos = load_split(&data)?;
    if videos.is_empty() {
        return Err(Error::Data(format!("{}: empty split", data.display())));
    }
    let v0 = &videos[0];
    let mut settings = TrainSettings::defaults(
        v0.height(),
        v0.width(),
        v0.channels(),
        scene_classes(&videos).len(),
    );
    if let Some(cfg) = &a.config {
        settings.apply_file(cfg)?;
    }
    if let Some(seed) = a.seed {
        settings.train.seed = seed;
    }
    if let Some(epochs) = a.epochs {
        settings.train.epochs = epochs;
    }
    if let Some(batch) = a.batch {
        settings.train.batch_size = batch;
    }
    if let Some(lr) = a.lr {
        settings.train.lr = lr;
    }
    if a.no_motion_weights {
        settings.train.motion_weighted = false;
    }
    if a.no_scene_condition {
        settings.model.scene_conditioned = false;
        settings.model.scene_count = 1;
    }
    run_train(&settings, &data, &a.out)
}

pub fn replay_train(m: &ReplayManifest) -> Result<()> {
    let mut settings = TrainSettings::defaults(32, 32, 3, 1);
    settings.apply_block(&m.cfg_block(), "manifest cfg")?;
    run_train(
        &settings,
        Path::new(m.get("input.data")?),
        Path::new(m.get("output.ckpt")?),
    )
}

// ------------------------------------------------------------------- score

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset root or test-split directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of noise levels in the evaluation ladder.
    #[arg(long, default_value_t = 20)]
    pub levels: usize,
    #[arg(long = "sigma-min", default_value_t = 1e-3)]
    pub sigma_min: f64,
    #[arg(long = "sigma-max", default_value_t = 1.0)]
    pub sigma_max: f64,
    /// Ladder spacing: `geometric` or `linear`.
    #[arg(long, default_value = "geometric")]
    pub schedule: String,
    /// Frames per aggregation clip (default: twice the window length).
    #[arg(long = "clip-frames")]
    pub clip_frames: Option<usize>,
    /// Per-level fusion weights: `uniform` or a comma list summing to 1.
    #[arg(long = "fusion-weights", default_value = "uniform")]
    pub fusion_weights: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for scores_raw.csv and scores_final.csv.
    #[arg(long)]
    pub out: PathBuf,
}

fn build_schedule(mode: &str, sigma_min: f64, sigma_max: f64, levels: usize) -> Result<NoiseSchedule> {
    match mode {
        "geometric" => NoiseSchedule::geometric(sigma_min, sigma_max, levels),
        "linear" => NoiseSchedule::linear(sigma_min, sigma_max, levels),
        other => Err(Error::Contract(format!(
            "schedule must be geometric or linear, got `{other}`"
        ))),
    }
}

fn run_score(a: &ScoreArgs) -> Result<()> {
    let data = resolve_split(&a.data, "test")?;
    let mut manifest = Manifest::new("score");
    let mut cfg_blob = String::new();
    writeln!(cfg_blob, "levels={}", a.levels).unwrap();
    writeln!(cfg_blob, "sigma_min={}", a.sigma_min).unwrap();
    writeln!(cfg_blob, "sigma_max={}", a.sigma_max).unwrap();
    writeln!(cfg_blob, "schedule={}", a.schedule).unwrap();
    if let Some(c) = a.clip_frames {
        writeln!(cfg_blob, "clip_frames={c}").unwrap();
    }
    writeln!(cfg_blob, "fusion_weights={}", a.fusion_weights).unwrap();
    writeln!(cfg_blob, "seed={}", a.seed).unwrap();
    manifest.put_cfg_block(&cfg_blob);
    manifest.put_file("input.ckpt", &a.ckpt)?;
    manifest.put("input.data", data.display());
    put_dir_files(&mut manifest, "input.data", &data)?;

    let ckpt = checkpoint::load(&a.ckpt)?;
    let videos = load_split(&data)?;
    let cfg = &ckpt.cfg;
    for v in &videos {
        if v.height() != cfg.rows * cfg.d || v.width() != cfg.cols * cfg.d || v.channels() != cfg.channels
        {
            return Err(Error::Incompatible(format!(
                "checkpoint {} (config fingerprint {}) expects {}x{}x{} frames, but video {} in {} has geometry fingerprint {}x{}x{}",
                a.ckpt.display(),
                hex::encode(config_fingerprint(cfg)),
                cfg.rows * cfg.d,
                cfg.cols * cfg.d,
                cfg.channels,
                v.video_id,
                data.display(),
                v.height(),
                v.width(),
                v.channels(),
            )));
        }
    }

    let schedule = build_schedule(&a.schedule, a.sigma_min, a.sigma_max, a.levels)?;
    let mut score_cfg = ScoreConfig::new(schedule.levels().to_vec(), cfg.n_frames, a.seed);
    if let Some(c) = a.clip_frames {
        score_cfg.clip_frames = c;
    }
    if let Some(w) = parse_fusion_weights(&a.fusion_weights, a.levels)? {
        score_cfg.weights = w;
    }
    let model = NcstModel {
        cfg: ckpt.cfg.clone(),
        params: ckpt.params,
    };
    let scores = score_videos(&model, &videos, &score_cfg)?;

    std::fs::create_dir_all(&a.out)?;
    let raw = a.out.join("scores_raw.csv");
    let fin = a.out.join("scores_final.csv");
    write_scores_raw(&raw, &scores)?;
    write_scores_final(&fin, &scores)?;
    manifest.put("output.dir", a.out.display());
    manifest.put_file("output.scores_raw.csv", &raw)?;
    manifest.put_file("output.scores_final.csv", &fin)?;
    manifest.write(&a.out.join("score.manifest"))?;
    let windows: usize = scores.iter().map(|s| s.windows.len()).sum();
    println!(
        "scored {} videos ({windows} windows, {} levels, {} schedule) -> {}",
        scores.len(),
        a.levels,
        a.schedule,
        a.out.display()
    );
    Ok(())
}

pub fn cmd_score(a: &ScoreArgs) -> Result<()> {
    run_score(a)
}

pub fn replay_score(m: &ReplayManifest) -> Result<()> {
    let kv = parse_kv(&m.cfg_block(), "manifest cfg")?;
    let get = |k: &str| -> Result<&String> {
        kv.get(k)
            .ok_or_else(|| Error::Data(format!("manifest cfg missing `{k}`")))
    };
    let a = ScoreArgs {
        ckpt: PathBuf::from(m.get("input.ckpt")?),
        data: PathBuf::from(m.get("input.data")?),
        levels: get("levels")?
            .parse()
            .map_err(|_| Error::Data("manifest cfg: bad levels".into()))?,
        sigma_min: get("sigma_min")?
            .parse()
            .map_err(|_| Error::Data("manifest cfg: bad sigma_min".into()))?,
        sigma_max: get("sigma_max")?
            .parse()
            .map_err(|_| Error::Data("manifest cfg: bad sigma_max".into()))?,
        schedule: get("schedule")?.clone(),
        clip_frames: match kv.get("clip_frames") {
            Some(v) => Some(
                v.parse()
                    .map_err(|_| Error::Data("manifest cfg: bad clip_frames".into()))?,
            ),
            None => None,
        },
        fusion_weights: get("fusion_weights")?.clone(),
        seed: get("seed")?
            .parse()
            .map_err(|_| Error::Data("manifest cfg: bad seed".into()))?,
        out: PathBuf::from(m.get("output.dir")?),
    };
    run_score(&a)
}

// -------------------------------------------------------------------- eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory containing scores_final.csv.
    #[arg(long)]
    pub scores: PathBuf,
    /// Ground-truth labels CSV (video_id,frame_index,label).
    #[arg(long)]
    pub labels: PathBuf,
    /// Report file to write.
    #[arg(long)]
    pub out: PathBuf,
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let mut manifest = Manifest::new("eval");
    let scores_file = a.scores.join("scores_final.csv");
    manifest.put_file("input.scores", &scores_file)?;
    manifest.put_file("input.labels", &a.labels)?;

    let scores = read_scores_final(&scores_file)?;
    let labels = read_labels_csv(&a.labels)?;
    let data = labeled_scores(scores, &labels)?;
    let micro = micro_auc(&data)?;
    let mac = macro_auc(&data)?;

    let variant = a
        .scores
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scores".into());
    let mut report = String::from("variant,micro_auc,macro_auc,excluded_videos\n");
    writeln!(
        report,
        "{variant},{micro:.6},{:.6},{}",
        mac.value,
        mac.excluded.join(";")
    )
    .unwrap();
    std::fs::write(&a.out, report)?;
    manifest.put_file("output.report", &a.out)?;
    manifest.write(&a.out.with_extension("manifest"))?;
    println!(
        "micro AUC {micro:.4}, macro AUC {:.4} over {} videos ({} excluded)",
        mac.value,
        mac.included,
        mac.excluded.len()
    );
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    run_eval(a)
}

pub fn replay_eval(m: &ReplayManifest) -> Result<()> {
    let scores_file = PathBuf::from(m.get("input.scores")?);
    let scores_dir = scores_file
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    run_eval(&EvalArgs {
        scores: scores_dir,
        labels: PathBuf::from(m.get("input.labels")?),
        out: PathBuf::from(m.get("output.report")?),
    })
}

// -------------------------------------------------------------------- plot

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Directory containing scores_final.csv.
    #[arg(long)]
    pub scores: PathBuf,
    /// Ground-truth labels CSV (video_id,frame_index,label).
    #[arg(long)]
    pub labels: PathBuf,
    /// Directory for one SVG per video.
    #[arg(long)]
    pub out: PathBuf,
}

fn run_plot(a: &PlotArgs) -> Result<()> {
    let mut manifest = Manifest::new("plot");
    let scores_file = a.scores.join("scores_final.csv");
    manifest.put_file("input.scores", &scores_file)?;
    manifest.put_file("input.labels", &a.labels)?;

    let scores = read_scores_final(&scores_file)?;
    let labels = read_labels_csv(&a.labels)?;
    let data = labeled_scores(scores, &labels)?;
    std::fs::create_dir_all(&a.out)?;
    manifest.put("output.dir", a.out.display());
    for v in &data.videos {
        let svg = svg::score_curve(&v.video_id, &v.scores, &v.labels)?;
        let path = a.out.join(format!("{}.svg", v.video_id));
        std::fs::write(&path, svg)?;
        manifest.put_file(&format!("output.{}.svg", v.video_id), &path)?;
    }
    manifest.write(&a.out.join("plot.manifest"))?;
    println!("wrote {} score curves -> {}", data.videos.len(), a.out.display());
    Ok(())
}

pub fn cmd_plot(a: &PlotArgs) -> Result<()> {
    run_plot(a)
}

pub fn replay_plot(m: &ReplayManifest) -> Result<()> {
    let scores_file = PathBuf::from(m.get("input.scores")?);
    run_plot(&PlotArgs {
        scores: scores_file
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
        labels: PathBuf::from(m.get("input.labels")?),
        out: PathBuf::from(m.get("output.dir")?),
    })
}

// -------------------------------------------------------------- demo-modes

#[derive(Args, Debug)]
pub struct DemoModesArgs {
    /// `w,mx,my,var;…` components, or `exhibit` for the 0.95/0.05 pair.
    #[arg(long, default_value = "exhibit")]
    pub mixture: String,
    /// Square grid as `extent,resolution` over [-extent, extent]².
    #[arg(long, default_value = "6.0,121")]
    pub grid: String,
    /// Directory for field.csv and modes.svg.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_grid(s: &str) -> Result<(f64, usize)> {
    let (e, r) = s
        .split_once(',')
        .ok_or_else(|| Error::Data(format!("grid must be `extent,resolution`, got `{s}`")))?;
    let extent: f64 = e
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("grid extent `{e}` is not a number")))?;
    let resolution: usize = r
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("grid resolution `{r}` is not an integer")))?;
    Ok((extent, resolution))
}

fn run_demo_modes(a: &DemoModesArgs) -> Result<()> {
    let mut manifest = Manifest::new("demo-modes");
    manifest.put("cfg.mixture", &a.mixture);
    manifest.put("cfg.grid", &a.grid);

    let mixture = parse_mixture(&a.mixture)?;
    let (extent, resolution) = parse_grid(&a.grid)?;
    let points = grid_points(extent, resolution)?;
    let field = mixture_score_field(&mixture, &points);

    std::fs::create_dir_all(&a.out)?;
    let mut csv = String::from("x,y,density,score_x,score_y,score_norm\n");
    for p in &field {
        writeln!(
            csv,
            "{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
            p.point[0], p.point[1], p.density, p.score[0], p.score[1], p.norm
        )
        .unwrap();
    }
    let csv_path = a.out.join("field.csv");
    std::fs::write(&csv_path, csv)?;
    let svg_path = a.out.join("modes.svg");
    std::fs::write(&svg_path, svg::mode_heat_map(&field, resolution, extent)?)?;

    manifest.put("output.dir", a.out.display());
    manifest.put_file("output.field.csv", &csv_path)?;
    manifest.put_file("output.modes.svg", &svg_path)?;
    manifest.write(&a.out.join("demo-modes.manifest"))?;

    if a.mixture == "exhibit" {
        let b = exhibit_blind_spot()?;
        println!(
            "blind spot at ({:.6}, {:.6}): score norm {:.3e}, density {:.4} of the global mode",
            b.point[0], b.point[1], b.score_norm, b.density_ratio
        );
    }
    println!(
        "field over {resolution}x{resolution} grid (extent {extent}) -> {}",
        a.out.display()
    );
    Ok(())
}

pub fn cmd_demo_modes(a: &DemoModesArgs) -> Result<()> {
    run_demo_modes(a)
}

pub fn replay_demo_modes(m: &ReplayManifest) -> Result<()> {
    run_demo_modes(&DemoModesArgs {
        mixture: m.get("cfg.mixture")?.to_string(),
        grid: m.get("cfg.grid")?.to_string(),
        out: PathBuf::from(m.get("output.dir")?),
    })
}
