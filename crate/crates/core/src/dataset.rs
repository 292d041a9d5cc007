//! Phantom datasets on disk, the manifest format, and stratified k-fold splits.
//!
//! Manifest layout (`manifest.csv`):
//!
//! ```text
//! # nsb-manifest v1
//! id,image_path,mask_path,class,x_min,y_min,x_max,y_max
//! men_0000,images/men_0000.pgm,masks/men_0000.pgm,meningioma,201,88,290,177
//! ```
//!
//! Paths are relative to the manifest's directory. The box is the tight box
//! of the mask at native resolution. Any dataset converted into this layout
//! (PGM image + {0,255} PGM mask per slice) loads the same way.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, BinaryMask};
use crate::image::{self, GrayImage, ImageError};
use crate::phantom::{generate_phantom, PhantomError, PhantomSpec, TumorClass};
use crate::rng::SplitMix64;

pub const MANIFEST_VERSION: &str = "# nsb-manifest v1";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("n_per_class must be at least 1")]
    EmptyRequest,
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("entry {id}: stored box {stored:?} differs from mask tight box {actual:?}")]
    BoxMismatch { id: String, stored: BBox, actual: Option<BBox> },
    #[error("k = {k} invalid for {n} entries (need 2 <= k <= n)")]
    Folds { k: usize, n: usize },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// One labelled slice held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub class: TumorClass,
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub bbox: BBox,
}

/// Generation parameters for a phantom dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub image_size: usize,
    pub noise_sigma: f64,
    pub meningioma_scale: (f64, f64),
    pub glioma_scale: (f64, f64),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            image_size: 512,
            noise_sigma: 6.0,
            meningioma_scale: (0.075, 0.12),
            glioma_scale: (0.075, 0.12),
        }
    }
}

fn sample_id(class: TumorClass, i: usize) -> String {
    let prefix = match class {
        TumorClass::Meningioma => "men",
        TumorClass::Glioma => "gli",
    };
    format!("{prefix}_{i:04}")
}

/// Phantom specs for a dataset: all meningiomas first, then all gliomas.
/// Each phantom draws from its own seed stream.
pub fn dataset_specs(n_per_class: usize, seed: u64, cfg: &DatasetConfig) -> Vec<(String, PhantomSpec)> {
    let mut out = Vec::with_capacity(2 * n_per_class);
    for (ci, class) in TumorClass::ALL.into_iter().enumerate() {
        let (lo, hi) = match class {
            TumorClass::Meningioma => cfg.meningioma_scale,
            TumorClass::Glioma => cfg.glioma_scale,
        };
        for i in 0..n_per_class {
            let mut rng = SplitMix64::derive(seed, (ci * 1_000_000 + i) as u64);
            let mut spec = PhantomSpec::new(rng.next_u64(), class, rng.uniform(lo, hi));
            spec.image_size = cfg.image_size;
            spec.noise_sigma = cfg.noise_sigma;
            out.push((sample_id(class, i), spec));
        }
    }
    out
}

pub fn generate_samples(n_per_class: usize, seed: u64, cfg: &DatasetConfig) -> Result<Vec<Sample>, DatasetError> {
    if n_per_class == 0 {
        return Err(DatasetError::EmptyRequest);
    }
    dataset_specs(n_per_class, seed, cfg)
        .into_iter()
        .map(|(id, spec)| {
            let p = generate_phantom(&spec)?;
            Ok(Sample { id, class: spec.class_label, image: p.image, mask: p.mask, bbox: p.bbox })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub class: TumorClass,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    image_path: String,
    mask_path: String,
    class: String,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl DatasetManifest {
    pub fn classes(&self) -> Vec<TumorClass> {
        self.entries.iter().map(|e| e.class).collect()
    }

    pub fn encode(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(ManifestRow {
                id: e.id.clone(),
                image_path: path_str(&e.image_path),
                mask_path: path_str(&e.mask_path),
                class: e.class.name().to_string(),
                x_min: e.bbox.x_min,
                y_min: e.bbox.y_min,
                x_max: e.bbox.x_max,
                y_max: e.bbox.y_max,
            })
            .expect("in-memory csv write");
        }
        let body = String::from_utf8(w.into_inner().expect("flush")).expect("utf8");
        format!("{MANIFEST_VERSION}\n{body}")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(io_err(path))
    }

    /// Parses a manifest file. Entry paths stay relative; use
    /// [`DatasetManifest::resolve`] to get filesystem paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let bad = |msg: String| DatasetError::Manifest { path: path.to_path_buf(), msg };
        let (first, rest) = text.split_once('\n').unwrap_or((text.as_str(), ""));
        if first.trim_end() != MANIFEST_VERSION {
            return Err(bad(format!("unsupported version line {first:?}")));
        }
        let mut rdr = csv::Reader::from_reader(rest.as_bytes());
        let mut entries = Vec::new();
        for row in rdr.deserialize::<ManifestRow>() {
            let row = row.map_err(|e| bad(e.to_string()))?;
            let class = TumorClass::parse(&row.class)
                .ok_or_else(|| bad(format!("unknown class {:?}", row.class)))?;
            let bbox = BBox::new(row.x_min, row.y_min, row.x_max, row.y_max);
            if !bbox.is_valid() {
                return Err(bad(format!("entry {}: invalid box", row.id)));
            }
            entries.push(ManifestEntry {
                id: row.id,
                image_path: PathBuf::from(row.image_path),
                mask_path: PathBuf::from(row.mask_path),
                class,
                bbox,
            });
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Self { root, entries };
        for e in &manifest.entries {
            for p in [&e.image_path, &e.mask_path] {
                let full = manifest.resolve(p);
                if !full.is_file() {
                    return Err(bad(format!("entry {}: missing file {}", e.id, full.display())));
                }
            }
        }
        Ok(manifest)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Reads one entry's image and mask and checks the stored box.
    pub fn load_sample(&self, entry: &ManifestEntry) -> Result<Sample, DatasetError> {
        let image = image::read_image(self.resolve(&entry.image_path))?;
        let mask = BinaryMask::from_gray(&image::read_image(self.resolve(&entry.mask_path))?);
        let actual = mask.tight_box();
        if actual != Some(entry.bbox) {
            return Err(DatasetError::BoxMismatch { id: entry.id.clone(), stored: entry.bbox, actual });
        }
        Ok(Sample { id: entry.id.clone(), class: entry.class, image, mask, bbox: entry.bbox })
    }

    pub fn load_samples(&self) -> Result<Vec<Sample>, DatasetError> {
        self.entries.iter().map(|e| self.load_sample(e)).collect()
    }
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

/// Writes `2 * n_per_class` phantoms and masks as PGM under `out_dir`,
/// plus `manifest.csv`.
pub fn build_dataset(
    n_per_class: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
    cfg: &DatasetConfig,
) -> Result<DatasetManifest, DatasetError> {
    if n_per_class == 0 {
        return Err(DatasetError::EmptyRequest);
    }
    let out = out_dir.as_ref();
    for sub in ["images", "masks"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let mut entries = Vec::with_capacity(2 * n_per_class);
    for (id, spec) in dataset_specs(n_per_class, seed, cfg) {
        let p = generate_phantom(&spec)?;
        let image_path = PathBuf::from(format!("images/{id}.pgm"));
        let mask_path = PathBuf::from(format!("masks/{id}.pgm"));
        image::write_image(&p.image, out.join(&image_path))?;
        image::write_image(&p.mask.to_gray(), out.join(&mask_path))?;
        entries.push(ManifestEntry { id, image_path, mask_path, class: spec.class_label, bbox: p.bbox });
    }
    let manifest = DatasetManifest { root: out.to_path_buf(), entries };
    manifest.save(out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold split over entry indices. Each class's indices are
/// shuffled with the seed, then the concatenated sequence is dealt round
/// robin across folds, so every fold gets a near-equal share of each class.
pub fn kfold_split(classes: &[TumorClass], k: usize, seed: u64) -> Result<Vec<Fold>, DatasetError> {
    let n = classes.len();
    if k < 2 || k > n {
        return Err(DatasetError::Folds { k, n });
    }
    let mut rng = SplitMix64::new(seed);
    let mut order = Vec::with_capacity(n);
    for class in TumorClass::ALL {
        let mut idx: Vec<usize> = (0..n).filter(|&i| classes[i] == class).collect();
        rng.shuffle(&mut idx);
        order.extend(idx);
    }
    let mut tests = vec![BTreeSet::new(); k];
    for (pos, &i) in order.iter().enumerate() {
        tests[pos % k].insert(i);
    }
    Ok(tests
        .into_iter()
        .map(|test| Fold {
            train: (0..n).filter(|i| !test.contains(i)).collect(),
            test: test.into_iter().collect(),
        })
        .collect())
}

pub fn kfold_manifest(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<Vec<Fold>, DatasetError> {
    kfold_split(&manifest.classes(), k, seed)
}
