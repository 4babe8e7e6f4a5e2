use std::path::Path;

use super::dataset::Dataset;
use super::frames::read_frames;
use crate::encoder::{write_features, FeatureRecord};
use crate::error::{Error, Result};
use crate::numerics::{Checkpoint, Tensor};
use crate::objectives::PretrainModel;

const CHUNK: usize = 64;

/// Loads a pretraining checkpoint. Unreadable, corrupted or foreign
/// checkpoints are all reported as `ConfigMismatch`.
pub fn load_pretrained(path: &Path) -> Result<PretrainModel> {
    let ckpt = match Checkpoint::load(path) {
        Ok(c) => c,
        Err(Error::Io { .. }) if !path.exists() => {
            return Err(Error::ConfigMismatch(format!("no checkpoint at {}", path.display())))
        }
        Err(Error::ConfigMismatch(m)) => return Err(Error::ConfigMismatch(m)),
        Err(e) => return Err(Error::ConfigMismatch(format!("unreadable checkpoint: {e}"))),
    };
    if ckpt.config.get("kind").and_then(|k| k.as_str()) != Some("pretrain") {
        return Err(Error::ConfigMismatch("not a pretraining checkpoint".into()));
    }
    PretrainModel::from_checkpoint(&ckpt).map_err(|e| match e {
        Error::ConfigMismatch(m) => Error::ConfigMismatch(m),
        other => Error::ConfigMismatch(format!("checkpoint does not fit its config: {other}")),
    })
}

/// `F_V` for every segment (id `<match>/<k>`) and every foul view (id
/// `<incident>/v<n>`) of the corpus at `data`, written as an `MVFT` file.
/// Records follow corpus order, so equal inputs give identical bytes.
pub fn extract_features(checkpoint: &Path, data: &Path, out: &Path) -> Result<usize> {
    let model = load_pretrained(checkpoint)?;
    let ds = Dataset::open(data)?;
    let mut jobs: Vec<(String, std::path::PathBuf)> = ds
        .all_segments()
        .into_iter()
        .map(|s| (s.id, s.frames))
        .collect();
    for f in ds.all_fouls() {
        for (id, path) in f.view_ids.iter().zip(&f.views) {
            jobs.push((id.clone(), path.clone()));
        }
    }
    let cfg = &model.encoder.cfg;
    let want = [cfg.frames, 3, cfg.height, cfg.width];
    let mut records = Vec::with_capacity(jobs.len());
    for chunk in jobs.chunks(CHUNK) {
        let frames = chunk
            .iter()
            .map(|(_, p)| {
                let t = read_frames(p)?;
                if t.shape() != want {
                    return Err(Error::ConfigMismatch(format!(
                        "{}: frames {:?}, checkpoint encoder expects {want:?}",
                        p.display(),
                        t.shape()
                    )));
                }
                Ok(t)
            })
            .collect::<Result<Vec<Tensor>>>()?;
        let refs: Vec<&Tensor> = frames.iter().collect();
        let fvs = model.encode_videos(&refs)?;
        records.extend(chunk.iter().zip(fvs).map(|((id, _), features)| FeatureRecord {
            id: id.clone(),
            features,
        }));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_features(out, &records)?;
    Ok(records.len())
}
