//! Flat key=value config files and their resolution against CLI flags.
//!
//! One namespace, no sections, `#` comments. Resolution order is fixed:
//! built-in tiny-preset defaults, then file keys, then flags. Unknown keys
//! are rejected so typos fail loudly instead of silently keeping a default.

use adsm_core::model::{AttentionLayout, NcstConfig};
use adsm_core::train::TrainConfig;
use adsm_core::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

pub fn parse_kv(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut kv = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("{origin}:{}: expected key=value", ln + 1)))?;
        let k = k.trim().to_string();
        let v = v.trim().to_string();
        if kv.insert(k.clone(), v).is_some() {
            return Err(Error::Data(format!(
                "{origin}:{}: duplicate key `{k}`",
                ln + 1
            )));
        }
    }
    Ok(kv)
}

/// Everything `adsm train` needs, after config file and flags are merged.
#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub model: NcstConfig,
    pub train: TrainConfig,
}

impl TrainSettings {
    /// Tiny-preset defaults for the given data geometry: the width-64 model
    /// over d=8 patches, scene-conditioned, trained motion-weighted.
    pub fn defaults(height: usize, width: usize, channels: usize, scene_count: usize) -> Self {
        let mut model = NcstConfig::desk(scene_count.max(1));
        model.d = 8;
        model.rows = height / model.d;
        model.cols = width / model.d;
        model.channels = channels;
        TrainSettings {
            model,
            train: TrainConfig::default(),
        }
    }

    /// Serialize as one flat kv blob (model keys then train keys).
    pub fn to_kv(&self) -> String {
        let mut s = self.model.to_kv();
        s.push_str(&format!("batch_size={}\n", self.train.batch_size));
        s.push_str(&format!("epochs={}\n", self.train.epochs));
        s.push_str(&format!("grad_clip={}\n", self.train.grad_clip));
        s.push_str(&format!("lr={}\n", self.train.lr));
        s.push_str(&format!("motion_weighted={}\n", self.train.motion_weighted));
        s.push_str(&format!("seed={}\n", self.train.seed));
        s
    }

    /// Apply one key=value pair on top of the current settings.
    pub fn apply(&mut self, key: &str, value: &str, origin: &str) -> Result<()> {
        let bad = |what: &str| Error::Data(format!("{origin}: key `{key}`: {what}"));
        let as_usize =
            |v: &str| -> Result<usize> { v.parse().map_err(|_| bad("not a non-negative integer")) };
        let as_f64 = |v: &str| -> Result<f64> { v.parse().map_err(|_| bad("not a number")) };
        let as_bool = |v: &str| -> Result<bool> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(bad("not true/false")),
            }
        };
        match key {
            "width" => self.model.width = as_usize(value)?,
            "heads" => self.model.heads = as_usize(value)?,
            "blocks" => self.model.blocks = as_usize(value)?,
            "d" => self.model.d = as_usize(value)?,
            "n_frames" => self.model.n_frames = as_usize(value)?,
            "rows" => self.model.rows = as_usize(value)?,
            "cols" => self.model.cols = as_usize(value)?,
            "channels" => self.model.channels = as_usize(value)?,
            "t_width" => self.model.t_width = as_usize(value)?,
            "s_width" => self.model.s_width = as_usize(value)?,
            "scene_count" => self.model.scene_count = as_usize(value)?,
            "scene_conditioned" => self.model.scene_conditioned = as_bool(value)?,
            "layout" => self.model.layout = AttentionLayout::parse(value)?,
            "sigma1" => self.model.sigma1 = as_f64(value)?,
            "sigma_l" => self.model.sigma_l = as_f64(value)?,
            "epochs" => self.train.epochs = as_usize(value)?,
            "batch_size" => self.train.batch_size = as_usize(value)?,
            "lr" => self.train.lr = as_f64(value)?,
            "grad_clip" => self.train.grad_clip = as_f64(value)?,
            "motion_weighted" => self.train.motion_weighted = as_bool(value)?,
            "seed" => {
                self.train.seed = value.parse().map_err(|_| bad("not a u64 seed"))?;
            }
            _ => return Err(bad("unknown key")),
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("{}: cannot read config: {e}", path.display())))?;
        let origin = path.display().to_string();
        for (k, v) in parse_kv(&text, &origin)? {
            self.apply(&k, &v, &origin)?;
        }
        Ok(())
    }

    /// Re-apply a kv blob (manifest replay path).
    pub fn apply_block(&mut self, block: &str, origin: &str) -> Result<()> {
        for (k, v) in parse_kv(block, origin)? {
            self.apply(&k, &v, origin)?;
        }
        Ok(())
    }
}

/// Parse `s,m,a` anomaly-rate triples.
pub fn parse_rates(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Data(format!(
            "anomaly rates must be `scene,motion,appearance`, got `{s}`"
        )));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("anomaly rate `{p}` is not a number")))?;
    }
    Ok(out)
}

/// Parse fusion weights: the literal `uniform` or a comma list summing to 1.
pub fn parse_fusion_weights(s: &str, levels: usize) -> Result<Option<Vec<f64>>> {
    if s == "uniform" {
        return Ok(None);
    }
    let weights: Vec<f64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("fusion weight `{p}` is not a number")))
        })
        .collect::<Result<_>>()?;
    if weights.len() != levels {
        return Err(Error::Data(format!(
            "{} fusion weights for {levels} levels",
            weights.len()
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::Data(format!(
            "fusion weights must be non-negative and sum to 1, got sum {sum}"
        )));
    }
    Ok(Some(weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_rejects_junk_and_duplicates() {
        assert!(parse_kv("a=1\nb=2\n# note\n\n", "t").is_ok());
        assert!(parse_kv("a=1\na=2", "t").is_err());
        assert!(parse_kv("just words", "t").is_err());
    }

    #[test]
    fn settings_roundtrip_through_kv() {
        let mut s = TrainSettings::defaults(32, 32, 3, 2);
        s.train.epochs = 7;
        s.model.width = 48;
        let blob = s.to_kv();
        let mut back = TrainSettings::defaults(32, 32, 3, 2);
        back.apply_block(&blob, "test").unwrap();
        assert_eq!(back.to_kv(), blob);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let mut s = TrainSettings::defaults(32, 32, 3, 2);
        assert!(s.apply("wdith", "64", "t").is_err());
    }

    #[test]
    fn rates_and_weights_parse() {
        assert_eq!(parse_rates("0.1,0.2,0.3").unwrap(), [0.1, 0.2, 0.3]);
        assert!(parse_rates("0.1,0.2").is_err());
        assert!(parse_fusion_weights("uniform", 5).unwrap().is_none());
        let w = parse_fusion_weights("0.5,0.5", 2).unwrap().unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        assert!(parse_fusion_weights("0.5,0.6", 2).is_err());
        assert!(parse_fusion_weights("0.5,0.5", 3).is_err());
    }
}
