//! Component ablation harness.
//!
//! Six variants demonstrate what each part of the method buys, in a fixed
//! row order: a plain score-norm baseline, then one row per single toggle,
//! then everything on.
//!
//! | row             | checkpoint      | inference                |
//! |-----------------|-----------------|--------------------------|
//! | dsm             | base            | perturb original, no PSNR|
//! | +autoregressive | base            | perturb denoised         |
//! | +scene          | scene-aware     | perturb original         |
//! | +motion         | motion-weighted | perturb original         |
//! | +appearance     | base            | original + PSNR divisor  |
//! | full            | scene+motion    | denoised + PSNR divisor  |
//!
//! Scene conditioning and motion weighting change the loss, so those rows
//! retrain; autoregression and the PSNR divisor are inference-time choices
//! and reuse the base checkpoint. Checkpoints are cached in the work
//! directory and only retrained when absent.

use crate::checkpoint::{self, Checkpoint, CheckpointMeta};
use crate::error::{Error, Result};
use crate::eval::{macro_auc, micro_auc, LabeledScores, LabeledVideo};
use crate::model::{NcstConfig, NcstModel};
use crate::require;
use crate::score::{score_videos, ScoreConfig, ScoreOptions};
use crate::train::{scene_classes, train, TrainConfig};
use crate::video::{NoiseSchedule, ScheduleMode, VideoSequence};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug)]
pub struct AblationToggles {
    pub autoregressive: bool,
    pub scene: bool,
    pub motion: bool,
    pub appearance: bool,
}

impl Default for AblationToggles {
    fn default() -> Self {
        AblationToggles {
            autoregressive: true,
            scene: true,
            motion: true,
            appearance: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum CkptKind {
    Base,
    Scene,
    Motion,
    SceneMotion,
}

impl CkptKind {
    fn file_name(self) -> &'static str {
        match self {
            CkptKind::Base => "base.ckpt",
            CkptKind::Scene => "scene.ckpt",
            CkptKind::Motion => "motion.ckpt",
            CkptKind::SceneMotion => "scene_motion.ckpt",
        }
    }
    fn scene_conditioned(self) -> bool {
        matches!(self, CkptKind::Scene | CkptKind::SceneMotion)
    }
    fn motion_weighted(self) -> bool {
        matches!(self, CkptKind::Motion | CkptKind::SceneMotion)
    }
}

#[derive(Clone, Debug)]
pub struct AblationConfig {
    /// Geometry and capacity shared by every variant; scene fields are
    /// overridden per checkpoint kind.
    pub model: NcstConfig,
    pub train: TrainConfig,
    pub levels: usize,
    pub schedule: ScheduleMode,
    /// Frames per aggregation clip at scoring time.
    pub clip_frames: usize,
    pub score_seed: u64,
    pub toggles: AblationToggles,
    /// Train checkpoints that are not already cached in the work directory;
    /// when false, variants with missing checkpoints are reported absent.
    pub train_missing: bool,
}

#[derive(Clone, Debug)]
pub struct VariantMetrics {
    pub micro: f64,
    pub macro_value: f64,
    pub videos_included: usize,
    pub videos_excluded: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct VariantOutcome {
    pub name: &'static str,
    /// None when the variant's checkpoint was missing and training was off.
    pub metrics: Option<VariantMetrics>,
}

fn variant_rows(t: &AblationToggles) -> Vec<(&'static str, CkptKind, ScoreOptions)> {
    let off = ScoreOptions {
        autoregressive: false,
        use_psnr: false,
        reuse_noise: false,
    };
    let mut rows = vec![("dsm", CkptKind::Base, off)];
    if t.autoregressive {
        rows.push((
            "+autoregressive",
            CkptKind::Base,
            ScoreOptions {
                autoregressive: true,
                ..off
            },
        ));
    }
    if t.scene {
        rows.push(("+scene", CkptKind::Scene, off));
    }
    if t.motion {
        rows.push(("+motion", CkptKind::Motion, off));
    }
    if t.appearance {
        rows.push((
            "+appearance",
            CkptKind::Base,
            ScoreOptions {
                use_psnr: true,
                ..off
            },
        ));
    }
    let full_kind = match (t.scene, t.motion) {
        (true, true) => CkptKind::SceneMotion,
        (true, false) => CkptKind::Scene,
        (false, true) => CkptKind::Motion,
        (false, false) => CkptKind::Base,
    };
    rows.push((
        "full",
        full_kind,
        ScoreOptions {
            autoregressive: t.autoregressive,
            use_psnr: t.appearance,
            reuse_noise: false,
        },
    ));
    rows
}

fn config_for(base: &NcstConfig, kind: CkptKind, scene_count: usize) -> NcstConfig {
    let mut cfg = base.clone();
    if kind.scene_conditioned() {
        cfg.scene_conditioned = true;
        cfg.scene_count = scene_count;
    } else {
        cfg.scene_conditioned = false;
        cfg.scene_count = 1;
    }
    cfg
}

fn ensure_checkpoint(
    work_dir: &Path,
    kind: CkptKind,
    cfg: &NcstConfig,
    train_cfg: &TrainConfig,
    train_videos: &[VideoSequence],
    train_missing: bool,
) -> Result<Option<PathBuf>> {
    let path = work_dir.join(kind.file_name());
    if path.exists() {
        return Ok(Some(path));
    }
    if !train_missing {
        return Ok(None);
    }
    let mut tc = train_cfg.clone();
    tc.motion_weighted = kind.motion_weighted();
    let (params, opt, report) = train(train_videos, cfg, &tc)?;
    checkpoint::save(
        &path,
        &Checkpoint {
            cfg: cfg.clone(),
            params,
            meta: CheckpointMeta {
                epoch: tc.epochs as u32,
                seed: tc.seed,
                loss_history: report.loss_history,
            },
            opt: Some(opt),
        },
    )?;
    Ok(Some(path))
}

/// Run the ablation table: train (or reuse) the needed checkpoints, score
/// the test set per variant, and evaluate micro/macro AUC.
pub fn ablation_run(
    work_dir: &Path,
    train_videos: &[VideoSequence],
    test_videos: &[VideoSequence],
    cfg: &AblationConfig,
) -> Result<Vec<VariantOutcome>> {
    require!(!test_videos.is_empty(), "no test videos to evaluate");
    for v in test_videos {
        require!(
            v.frame_labels.is_some(),
            "test video {} has no frame labels",
            v.video_id
        );
    }
    std::fs::create_dir_all(work_dir)?;
    let scene_count = scene_classes(train_videos).len().max(1);
    let rows = variant_rows(&cfg.toggles);

    let mut outcomes = Vec::with_capacity(rows.len());
    for (name, kind, options) in rows {
        let model_cfg = config_for(&cfg.model, kind, scene_count);
        let ckpt_path = ensure_checkpoint(
            work_dir,
            kind,
            &model_cfg,
            &cfg.train,
            train_videos,
            cfg.train_missing,
        )?;
        let Some(ckpt_path) = ckpt_path else {
            outcomes.push(VariantOutcome {
                name,
                metrics: None,
            });
            continue;
        };
        let ckpt = checkpoint::load_expecting(&ckpt_path, &model_cfg)?;
        let model = NcstModel {
            cfg: ckpt.cfg,
            params: ckpt.params,
        };
        let ladder = match cfg.schedule {
            ScheduleMode::Geometric => {
                NoiseSchedule::geometric(cfg.model.sigma1, cfg.model.sigma_l, cfg.levels)?
            }
            ScheduleMode::Linear => {
                NoiseSchedule::linear(cfg.model.sigma1, cfg.model.sigma_l, cfg.levels)?
            }
        };
        let mut score_cfg = ScoreConfig::new(
            ladder.levels().to_vec(),
            cfg.model.n_frames,
            cfg.score_seed,
        );
        score_cfg.clip_frames = cfg.clip_frames;
        score_cfg.options = options;
        let scored = score_videos(&model, test_videos, &score_cfg)?;
        let labeled = LabeledScores {
            videos: scored
                .iter()
                .zip(test_videos)
                .map(|(s, v)| {
                    let labels = v
                        .frame_labels
                        .as_ref()
                        .expect("labels checked above")
                        .iter()
                        .map(|&b| b as u8)
                        .collect();
                    LabeledVideo::new(s.video_id.clone(), s.indicators.clone(), labels)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let micro = micro_auc(&labeled)?;
        let mac = macro_auc(&labeled)?;
        outcomes.push(VariantOutcome {
            name,
            metrics: Some(VariantMetrics {
                micro,
                macro_value: mac.value,
                videos_included: mac.included,
                videos_excluded: mac.excluded,
            }),
        });
    }
    Ok(outcomes)
}

/// `report.csv`: one row per variant in table order.
pub fn write_report(path: &Path, outcomes: &[VariantOutcome]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "variant,micro_auc,macro_auc,excluded_videos")?;
    for o in outcomes {
        match &o.metrics {
            Some(m) => writeln!(
                f,
                "{},{:.6},{:.6},{}",
                o.name,
                m.micro,
                m.macro_value,
                m.videos_excluded.join(";")
            )?,
            None => writeln!(f, "{},,,missing-checkpoint", o.name)?,
        }
    }
    Ok(())
}

/// Read a report back (used by the CLI to display and by tests).
pub fn read_report(path: &Path) -> Result<Vec<(String, Option<(f64, f64)>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("variant,micro_auc,macro_auc,excluded_videos") => {}
        other => {
            return Err(Error::Data(format!(
                "report.csv header missing or wrong: {other:?}"
            )))
        }
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        require!(
            cols.len() == 4,
            "report.csv line {}: expected 4 columns",
            lineno + 2
        );
        if cols[1].is_empty() {
            out.push((cols[0].to_string(), None));
            continue;
        }
        let micro: f64 = cols[1]
            .parse()
            .map_err(|_| Error::Data(format!("report.csv line {}: bad micro", lineno + 2)))?;
        let mac: f64 = cols[2]
            .parse()
            .map_err(|_| Error::Data(format!("report.csv line {}: bad macro", lineno + 2)))?;
        out.push((cols[0].to_string(), Some((micro, mac))));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_order_matches_the_table_structure() {
        let rows = variant_rows(&AblationToggles::default());
        let names: Vec<&str> = rows.iter().map(|(n, _, _)| *n).collect();
        assert_eq!(
            names,
            ["dsm", "+autoregressive", "+scene", "+motion", "+appearance", "full"]
        );
        // row 1 has everything off; row 6 has every toggle on
        let (_, kind, opts) = rows[0];
        assert_eq!(kind, CkptKind::Base);
        assert!(!opts.autoregressive && !opts.use_psnr);
        let (_, kind, opts) = rows[5];
        assert_eq!(kind, CkptKind::SceneMotion);
        assert!(opts.autoregressive && opts.use_psnr);
    }

    #[test]
    fn toggles_shrink_the_table() {
        let rows = variant_rows(&AblationToggles {
            autoregressive: false,
            scene: false,
            motion: true,
            appearance: false,
        });
        let names: Vec<&str> = rows.iter().map(|(n, _, _)| *n).collect();
        assert_eq!(names, ["dsm", "+motion", "full"]);
        assert_eq!(rows[2].1, CkptKind::Motion);
    }

    #[test]
    fn report_roundtrip_including_absent_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let outcomes = vec![
            VariantOutcome {
                name: "dsm",
                metrics: Some(VariantMetrics {
                    micro: 0.71325,
                    macro_value: 0.68875,
                    videos_included: 5,
                    videos_excluded: vec!["v1".into(), "v2".into()],
                }),
            },
            VariantOutcome {
                name: "+scene",
                metrics: None,
            },
        ];
        write_report(&path, &outcomes).unwrap();
        let back = read_report(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "dsm");
        let (micro, mac) = back[0].1.unwrap();
        assert!((micro - 0.71325).abs() < 1e-6);
        assert!((mac - 0.68875).abs() < 1e-6);
        assert_eq!(back[1], ("+scene".to_string(), None));
    }
}
