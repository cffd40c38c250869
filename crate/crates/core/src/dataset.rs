//! Dataset directory layout and the flat binary tensor format.
//!
//! A split directory holds one `<video_id>.bin` per video plus sidecar CSVs:
//! `scenes.csv` (video_id,scene_label) always, `labels.csv`
//! (video_id,frame_index,label) for labeled test splits only.
//!
//! Tensor files carry a 32-byte header — magic `ADSMVID1`, a dtype code
//! (1 = f32), the number of dimensions, and four u32 extents — followed by
//! the row-major little-endian payload.

use crate::error::{Error, Result};
use crate::require;
use crate::tensor::{Real, Tensor};
use crate::video::VideoSequence;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"ADSMVID1";
const DTYPE_F32: u32 = 1;

pub fn write_video_file(path: &Path, frames: &Tensor<Real>) -> Result<()> {
    require!(
        frames.rank() == 4,
        "video file stores rank-4 tensors, got {:?}",
        frames.shape()
    );
    let mut header = Vec::with_capacity(32);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&DTYPE_F32.to_le_bytes());
    header.extend_from_slice(&(frames.rank() as u32).to_le_bytes());
    for &e in frames.shape() {
        header.extend_from_slice(&(e as u32).to_le_bytes());
    }
    debug_assert_eq!(header.len(), 32);
    let mut payload = Vec::with_capacity(frames.numel() * 4);
    for &v in frames.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&header)?;
    file.write_all(&payload)?;
    Ok(())
}

pub fn read_video_file(path: &Path) -> Result<Tensor<Real>> {
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; 32];
    file.read_exact(&mut header)
        .map_err(|_| Error::Data(format!("{}: truncated header", path.display())))?;
    if &header[..8] != MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic, not a video tensor file",
            path.display()
        )));
    }
    let dtype = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if dtype != DTYPE_F32 {
        return Err(Error::Data(format!(
            "{}: unsupported dtype code {dtype}",
            path.display()
        )));
    }
    let ndims = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    if ndims != 4 {
        return Err(Error::Data(format!(
            "{}: expected 4 dimensions, header says {ndims}",
            path.display()
        )));
    }
    let mut shape = Vec::with_capacity(4);
    for d in 0..4 {
        let off = 16 + d * 4;
        shape.push(u32::from_le_bytes(header[off..off + 4].try_into().unwrap()) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut payload = vec![0u8; numel * 4];
    file.read_exact(&mut payload)
        .map_err(|_| Error::Corrupt(format!("{}: payload shorter than header claims", path.display())))?;
    let mut trailing = [0u8; 1];
    if file.read(&mut trailing)? != 0 {
        return Err(Error::Corrupt(format!(
            "{}: trailing bytes after payload",
            path.display()
        )));
    }
    let data: Vec<Real> = payload
        .chunks_exact(4)
        .map(|b| Real::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

/// Write one split (videos + scenes.csv, labels.csv when any video carries
/// frame labels).
pub fn save_split(videos: &[VideoSequence], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut scenes = String::from("video_id,scene_label\n");
    let mut labels = String::from("video_id,frame_index,label\n");
    let mut any_labels = false;
    for v in videos {
        write_video_file(&dir.join(format!("{}.bin", v.video_id)), v.frames())?;
        scenes.push_str(&format!("{},{}\n", v.video_id, v.scene_label));
        if let Some(fl) = &v.frame_labels {
            any_labels = true;
            for (f, &l) in fl.iter().enumerate() {
                labels.push_str(&format!("{},{},{}\n", v.video_id, f, u8::from(l)));
            }
        }
    }
    std::fs::write(dir.join("scenes.csv"), scenes)?;
    if any_labels {
        std::fs::write(dir.join("labels.csv"), labels)?;
    }
    Ok(())
}

/// Load a split directory. Videos come back sorted by id; labels are
/// attached when `labels.csv` is present.
pub fn load_split(dir: &Path) -> Result<Vec<VideoSequence>> {
    let scenes_path = dir.join("scenes.csv");
    let scenes_text = std::fs::read_to_string(&scenes_path)
        .map_err(|_| Error::Data(format!("{}: missing scenes.csv", dir.display())))?;
    let mut scenes: BTreeMap<String, usize> = BTreeMap::new();
    for (ln, line) in scenes_text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (id, scene) = line
            .split_once(',')
            .ok_or_else(|| Error::Data(format!("scenes.csv line {}: expected 2 fields", ln + 1)))?;
        let scene: usize = scene
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("scenes.csv line {}: bad scene label", ln + 1)))?;
        scenes.insert(id.to_string(), scene);
    }
    require!(!scenes.is_empty(), "scenes.csv lists no videos in {}", dir.display());

    let labels_path = dir.join("labels.csv");
    let mut labels: BTreeMap<String, Vec<(usize, bool)>> = BTreeMap::new();
    if labels_path.exists() {
        let text = std::fs::read_to_string(&labels_path)?;
        for (ln, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let (id, frame, label) = match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => {
                    return Err(Error::Data(format!(
                        "labels.csv line {}: expected 3 fields",
                        ln + 1
                    )))
                }
            };
            let frame: usize = frame
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("labels.csv line {}: bad frame index", ln + 1)))?;
            let label = match label.trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Data(format!(
                        "labels.csv line {}: label {other} not 0/1",
                        ln + 1
                    )))
                }
            };
            labels.entry(id.to_string()).or_default().push((frame, label));
        }
    }

    let mut videos = Vec::with_capacity(scenes.len());
    for (id, &scene) in &scenes {
        let frames = read_video_file(&dir.join(format!("{id}.bin")))?;
        let frame_labels = match labels.get(id) {
            Some(rows) => {
                let mut fl = vec![false; frames.shape()[0]];
                for &(f, l) in rows {
                    if f >= fl.len() {
                        return Err(Error::Data(format!(
                            "labels.csv: frame {f} out of range for {id}"
                        )));
                    }
                    fl[f] = l;
                }
                Some(fl)
            }
            None => None,
        };
        videos.push(VideoSequence::new(id.clone(), scene, frames, frame_labels)?);
    }
    Ok(videos)
}

/// Write a full dataset as `<dir>/train` and `<dir>/test`.
pub fn save_dataset(ds: &crate::synth::SyntheticDataset, dir: &Path) -> Result<()> {
    save_split(&ds.train, &dir.join("train"))?;
    save_split(&ds.test, &dir.join("test"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic_dataset, SyntheticDatasetSpec};

    fn tiny_dataset() -> crate::synth::SyntheticDataset {
        let mut spec = SyntheticDatasetSpec::tiny(2, 123);
        spec.train_videos_per_scene = 2;
        spec.test_videos_per_scene = 2;
        spec.frames_per_video = 16;
        generate_synthetic_dataset(&spec).unwrap()
    }

    #[test]
    fn video_file_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = crate::rng::stream(1, "ds-test", &[]);
        let t = crate::rng::uniform_tensor::<Real, _>(&mut rng, &[3, 8, 8, 3], 0.0, 1.0);
        let path = dir.path().join("v.bin");
        write_video_file(&path, &t).unwrap();
        let back = read_video_file(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::<Real>::zeros(&[2, 4, 4, 1]);
        let path = dir.path().join("v.bin");
        write_video_file(&path, &t).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad = dir.path().join("bad.bin");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(read_video_file(&bad), Err(Error::Data(_))));

        let full = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.bin");
        std::fs::write(&cut, &full[..full.len() - 3]).unwrap();
        assert!(matches!(read_video_file(&cut), Err(Error::Corrupt(_))));

        let mut padded = full.clone();
        padded.push(0);
        let fat = dir.path().join("fat.bin");
        std::fs::write(&fat, &padded).unwrap();
        assert!(matches!(read_video_file(&fat), Err(Error::Corrupt(_))));
    }

    #[test]
    fn split_roundtrip_preserves_everything() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();

        let train = load_split(&dir.path().join("train")).unwrap();
        let test = load_split(&dir.path().join("test")).unwrap();
        assert_eq!(train.len(), ds.train.len());
        assert_eq!(test.len(), ds.test.len());
        for (orig, loaded) in ds.test.iter().zip(&test) {
            assert_eq!(orig.video_id, loaded.video_id);
            assert_eq!(orig.scene_label, loaded.scene_label);
            assert_eq!(orig.frames(), loaded.frames());
            assert_eq!(orig.frame_labels, loaded.frame_labels);
        }
        for v in &train {
            assert!(v.frame_labels.is_none(), "train split must stay label-free");
        }
    }

    #[test]
    fn missing_video_file_is_a_data_error() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        save_split(&ds.train, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join(format!("{}.bin", ds.train[0].video_id))).unwrap();
        assert!(load_split(dir.path()).is_err());
    }
}
