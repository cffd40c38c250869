//! Frame-level ROC-AUC metrics and the ablation harness.
//!
//! Two AUC flavors: micro pools every frame of every test video into one
//! ranking; macro computes a per-video AUC and averages, skipping (and
//! reporting) videos whose frames are all one class. Ties use the midrank
//! convention, so the result equals the Mann–Whitney statistic
//! P(pos > neg) + ½·P(tie) exactly.

use crate::error::{Error, Result};
use crate::require;

/// Per-video frame indicators with binary ground truth.
#[derive(Clone, Debug)]
pub struct LabeledScores {
    pub videos: Vec<LabeledVideo>,
}

#[derive(Clone, Debug)]
pub struct LabeledVideo {
    pub video_id: String,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl LabeledVideo {
    pub fn new(video_id: String, scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        require!(
            scores.len() == labels.len(),
            "video {video_id}: {} scores vs {} labels",
            scores.len(),
            labels.len()
        );
        require!(!scores.is_empty(), "video {video_id} has no frames");
        for &l in &labels {
            require!(l <= 1, "video {video_id}: labels must be 0/1, got {l}");
        }
        Ok(LabeledVideo {
            video_id,
            scores,
            labels,
        })
    }

    fn has_both_classes(&self) -> bool {
        self.labels.iter().any(|&l| l == 1) && self.labels.iter().any(|&l| l == 0)
    }
}

/// Mann–Whitney AUC via midranks.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    require!(
        scores.len() == labels.len(),
        "{} scores vs {} labels",
        scores.len(),
        labels.len()
    );
    require!(!scores.is_empty(), "empty score set");
    for &s in scores {
        require!(s.is_finite(), "non-finite score {s}");
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data(format!(
            "AUC undefined: {pos} positive and {neg} negative frames"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // midranks: tied scores share the average of their 1-based rank range
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mid;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&r, _)| r)
        .sum();
    let p = pos as f64;
    let n = neg as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// AUC over all frames of all videos pooled together.
pub fn micro_auc(data: &LabeledScores) -> Result<f64> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for v in &data.videos {
        scores.extend_from_slice(&v.scores);
        labels.extend_from_slice(&v.labels);
    }
    roc_auc(&scores, &labels)
}

#[derive(Clone, Debug)]
pub struct MacroAuc {
    pub value: f64,
    pub included: usize,
    /// Videos skipped because every frame shares one label.
    pub excluded: Vec<String>,
}

/// Mean of per-video AUCs; single-class videos are excluded and reported.
pub fn macro_auc(data: &LabeledScores) -> Result<MacroAuc> {
    let mut sum = 0.0f64;
    let mut included = 0usize;
    let mut excluded = Vec::new();
    for v in &data.videos {
        if !v.has_both_classes() {
            excluded.push(v.video_id.clone());
            continue;
        }
        sum += roc_auc(&v.scores, &v.labels)?;
        included += 1;
    }
    if included == 0 {
        return Err(Error::Data(
            "macro AUC undefined: no video has both classes".into(),
        ));
    }
    Ok(MacroAuc {
        value: sum / included as f64,
        included,
        excluded,
    })
}
