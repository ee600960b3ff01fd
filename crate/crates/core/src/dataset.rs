//! In-memory datasets and the on-disk layout.
//!
//! Disk layout under a dataset root:
//!
//! ```text
//! source/images/<stem>.png       8-bit RGB
//! source/labels/<stem>.png       8-bit single-channel class indices
//! target/images/<stem>.png       all target images (train + eval)
//! target/labels_eval/<stem>.png  labels for the evaluation stems only
//! ```
//!
//! Target images whose stem appears in `labels_eval` form the evaluation
//! split; the rest are the unlabeled training split. Training-split labels
//! are never written, so nothing downstream can read them.

use std::path::Path;

use crate::error::{Error, Result};
use crate::pngio;
use crate::raster::{Image, LabelMap};
use crate::scalar::Real;

/// Images of one domain, with labels when the split has them.
#[derive(Debug, Clone)]
pub struct DomainDataset<R> {
    pub names: Vec<String>,
    pub images: Vec<Image<R>>,
    pub labels: Option<Vec<LabelMap>>,
}

impl<R: Real> DomainDataset<R> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() != self.images.len() {
            return Err(Error::Shape("dataset names and images disagree in count".into()));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.images.len() {
                return Err(Error::Shape("dataset labels and images disagree in count".into()));
            }
            for ((img, lab), name) in self.images.iter().zip(labels).zip(&self.names) {
                if img.height() != lab.height() || img.width() != lab.width() {
                    return Err(Error::Shape(format!(
                        "'{name}': image {}x{} vs label {}x{}",
                        img.height(),
                        img.width(),
                        lab.height(),
                        lab.width()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A two-domain dataset: labeled source, unlabeled target training split,
/// and a held-out labeled target evaluation split.
#[derive(Debug, Clone)]
pub struct SyntheticPair<R> {
    pub source: DomainDataset<R>,
    pub target_train: DomainDataset<R>,
    pub target_eval: DomainDataset<R>,
}

fn write_split<R: Real>(dir: &Path, ds: &DomainDataset<R>, with_labels: bool) -> Result<()> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir)
        .map_err(|e| Error::io(images_dir.display().to_string(), e))?;
    for (name, img) in ds.names.iter().zip(&ds.images) {
        pngio::save_image(&pngio::stem_path(&images_dir, name), img)?;
    }
    if with_labels {
        let labels = ds
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("labels requested but absent".into()))?;
        let labels_dir = dir.join(if dir.ends_with("target") { "labels_eval" } else { "labels" });
        std::fs::create_dir_all(&labels_dir)
            .map_err(|e| Error::io(labels_dir.display().to_string(), e))?;
        for (name, lab) in ds.names.iter().zip(labels) {
            pngio::save_label_map(&pngio::stem_path(&labels_dir, name), lab)?;
        }
    }
    Ok(())
}

/// Writes a dataset pair in the standard layout. Target training labels are
/// deliberately not written even when present in memory.
pub fn save_pair<R: Real>(root: &Path, pair: &SyntheticPair<R>) -> Result<()> {
    write_split(&root.join("source"), &pair.source, true)?;
    write_split(&root.join("target"), &pair.target_train, false)?;
    // eval images share target/images; labels go to target/labels_eval
    let target = root.join("target");
    let images_dir = target.join("images");
    for (name, img) in pair.target_eval.names.iter().zip(&pair.target_eval.images) {
        pngio::save_image(&pngio::stem_path(&images_dir, name), img)?;
    }
    let labels = pair
        .target_eval
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("target eval split has no labels".into()))?;
    let labels_dir = target.join("labels_eval");
    std::fs::create_dir_all(&labels_dir)
        .map_err(|e| Error::io(labels_dir.display().to_string(), e))?;
    for (name, lab) in pair.target_eval.names.iter().zip(labels) {
        pngio::save_label_map(&pngio::stem_path(&labels_dir, name), lab)?;
    }
    Ok(())
}

fn load_images<R: Real>(dir: &Path, stems: &[String]) -> Result<Vec<Image<R>>> {
    stems.iter().map(|s| pngio::load_image(&pngio::stem_path(dir, s))).collect()
}

/// Loads the labeled source split.
pub fn load_source<R: Real>(root: &Path, classes: usize) -> Result<DomainDataset<R>> {
    let images_dir = root.join("source").join("images");
    let labels_dir = root.join("source").join("labels");
    let stems = pngio::png_stems(&images_dir)?;
    if stems.is_empty() {
        return Err(Error::Ingestion(format!("no PNGs in {}", images_dir.display())));
    }
    let images = load_images(&images_dir, &stems)?;
    let labels = stems
        .iter()
        .map(|s| pngio::load_label_map(&pngio::stem_path(&labels_dir, s), classes))
        .collect::<Result<Vec<_>>>()?;
    let ds = DomainDataset { names: stems, images, labels: Some(labels) };
    ds.validate()?;
    Ok(ds)
}

/// Loads the target domain: `(train split without labels, eval split with labels)`.
pub fn load_target<R: Real>(root: &Path, classes: usize) -> Result<(DomainDataset<R>, DomainDataset<R>)> {
    let images_dir = root.join("target").join("images");
    let labels_dir = root.join("target").join("labels_eval");
    let stems = pngio::png_stems(&images_dir)?;
    if stems.is_empty() {
        return Err(Error::Ingestion(format!("no PNGs in {}", images_dir.display())));
    }
    let eval_stems: std::collections::HashSet<String> = if labels_dir.is_dir() {
        pngio::png_stems(&labels_dir)?.into_iter().collect()
    } else {
        Default::default()
    };
    let mut train = DomainDataset { names: Vec::new(), images: Vec::new(), labels: None };
    let mut eval_names = Vec::new();
    let mut eval_images = Vec::new();
    let mut eval_labels = Vec::new();
    for stem in stems {
        let img = pngio::load_image(&pngio::stem_path(&images_dir, &stem))?;
        if eval_stems.contains(&stem) {
            eval_labels.push(pngio::load_label_map(&pngio::stem_path(&labels_dir, &stem), classes)?);
            eval_images.push(img);
            eval_names.push(stem);
        } else {
            train.names.push(stem);
            train.images.push(img);
        }
    }
    let eval = DomainDataset { names: eval_names, images: eval_images, labels: Some(eval_labels) };
    eval.validate()?;
    Ok((train, eval))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_synthetic_pair;

    #[test]
    fn disk_round_trip_keeps_splits_apart() {
        let dir = tempfile::tempdir().unwrap();
        let pair = generate_synthetic_pair::<f32>(7, 4, 6, 32).unwrap();
        save_pair(dir.path(), &pair).unwrap();

        let source = load_source::<f32>(dir.path(), 4).unwrap();
        assert_eq!(source.len(), 6);
        assert!(source.labels.is_some());

        let (train, eval) = load_target::<f32>(dir.path(), 4).unwrap();
        assert_eq!(train.len(), pair.target_train.len());
        assert_eq!(eval.len(), pair.target_eval.len());
        // the training split has no labels, by construction
        assert!(train.labels.is_none());
        assert!(eval.labels.is_some());

        // no label files exist for training stems
        for stem in &train.names {
            assert!(!dir.path().join("target/labels_eval").join(format!("{stem}.png")).exists());
        }
    }
}
