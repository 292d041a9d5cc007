//! Full-pipeline evaluation: classify, localize, segment, score.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{self, Classification, ClassifierError, ClassifierWeights, TrainConfig};
use crate::dataset::{self, DatasetError, Sample};
use crate::geometry::{iou, BBox, BinaryMask, Boundary};
use crate::image::{self, GrayImage, ImageError, NormImage};
use crate::localizer::detector::{self, DetectConfig, DetectorError, DetectorTrainConfig, DetectorWeights};
use crate::localizer::{map_box_to_network, map_box_to_original, Detection, NETWORK_SIZE, ORIGINAL_SIZE};
use crate::metrics::{self, MeanInterval, MetricError};
use crate::nn::Tensor3;
use crate::rng::SplitMix64;
use crate::segment::{self, SegmentError};
use crate::TumorClass;

/// Fraction by which a detected box grows on each side before fine
/// segmentation, so a slightly tight detection still contains the contour.
pub const DEFAULT_BOX_MARGIN: f64 = 0.3;
/// Top-1 box IoU counted as a correct localization.
pub const LOCALIZATION_IOU: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("classifier weights are all zero (untrained)")]
    UntrainedClassifier,
    #[error("detector weights are all zero (untrained)")]
    UntrainedDetector,
    #[error("pipeline expects a {expected}x{expected} slice, got {w}x{h}")]
    InputSize { expected: usize, w: usize, h: usize },
    #[error("no images to evaluate")]
    EmptyTestSet,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything the pipeline produces for one slice, in the 512 frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub classification: Classification,
    /// `None` when the detector found nothing.
    pub detection: Option<Detection>,
    pub mask: BinaryMask,
    pub boundary: Boundary,
}

pub trait Pipeline {
    fn analyze(&self, sample: &Sample) -> Result<PipelineOutput, EvalError>;
}

/// Downsamples a 512 slice to the network frame and normalizes it.
pub fn network_input(img: &GrayImage) -> Result<NormImage, EvalError> {
    if (img.width(), img.height()) != (ORIGINAL_SIZE, ORIGINAL_SIZE) {
        return Err(EvalError::InputSize { expected: ORIGINAL_SIZE, w: img.width(), h: img.height() });
    }
    Ok(image::normalize(&image::downsample(img, NETWORK_SIZE, NETWORK_SIZE)?))
}

#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    pub classifier: ClassifierWeights,
    pub detector: DetectorWeights,
    pub detect: DetectConfig,
    pub box_margin: f64,
}

impl TrainedPipeline {
    pub fn new(classifier: ClassifierWeights, detector: DetectorWeights) -> Result<Self, EvalError> {
        if classifier.is_all_zero() {
            return Err(EvalError::UntrainedClassifier);
        }
        if detector.is_all_zero() {
            return Err(EvalError::UntrainedDetector);
        }
        Ok(Self { classifier, detector, detect: DetectConfig::default(), box_margin: DEFAULT_BOX_MARGIN })
    }

    pub fn run(&self, img: &GrayImage) -> Result<PipelineOutput, EvalError> {
        let input = network_input(img)?;
        self.run_prepared(img, &input)
    }

    fn run_prepared(&self, img: &GrayImage, input: &NormImage) -> Result<PipelineOutput, EvalError> {
        let classification = classifier::forward_classify(input, &self.classifier)?;
        let detection = detector::detect(input, &self.detector, &self.detect)?.map(|d| Detection {
            bbox: map_box_to_original(&d.bbox),
            confidence: d.confidence,
        });
        let (mask, boundary) = match &detection {
            Some(d) => {
                let side = ORIGINAL_SIZE as f64;
                let region = d.bbox.expand(self.box_margin).clip(side, side);
                segment::segment_roi(img, &region)?
            }
            None => (BinaryMask::empty(img.width(), img.height()), Boundary::default()),
        };
        Ok(PipelineOutput { classification, detection, mask, boundary })
    }
}

impl Pipeline for TrainedPipeline {
    fn analyze(&self, sample: &Sample) -> Result<PipelineOutput, EvalError> {
        self.run(&sample.image)
    }
}

/// Feeds ground truth through: true class, ground-truth box with
/// confidence 1, ground-truth mask. Scores a perfect pipeline.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePipeline;

impl Pipeline for OraclePipeline {
    fn analyze(&self, sample: &Sample) -> Result<PipelineOutput, EvalError> {
        let mut probabilities = [0.0; classifier::CLASSES];
        probabilities[sample.class.index()] = 1.0;
        Ok(PipelineOutput {
            classification: Classification { probabilities, label: sample.class },
            detection: Some(Detection { bbox: sample.bbox, confidence: 1.0 }),
            mask: sample.mask.clone(),
            boundary: segment::extract_boundary(&sample.mask),
        })
    }
}

/// One row of the per-image table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub image_id: String,
    pub class_true: String,
    pub class_pred: String,
    pub confidence: f64,
    pub iou_box: f64,
    pub dice: f64,
    pub accuracy: f64,
    /// Empty when either boundary is empty.
    pub bde: Option<f64>,
}

pub const CSV_HEADER: &str = "image_id,class_true,class_pred,confidence,iou_box,dice,accuracy,bde";

pub fn score_image(sample: &Sample, out: &PipelineOutput) -> Result<ImageRow, EvalError> {
    let counts = metrics::confusion_counts(&out.mask, &sample.mask)?;
    let gt_boundary = segment::extract_boundary(&sample.mask);
    let bde = match metrics::bde(&out.boundary, &gt_boundary) {
        Ok(s) => Some(s.symmetric),
        Err(MetricError::EmptyBoundary) => None,
        Err(e) => return Err(e.into()),
    };
    let (confidence, iou_box) = out.detection.map_or((0.0, 0.0), |d| (d.confidence, iou(&d.bbox, &sample.bbox)));
    Ok(ImageRow {
        image_id: sample.id.clone(),
        class_true: sample.class.name().to_string(),
        class_pred: out.classification.label.name().to_string(),
        confidence,
        iou_box,
        dice: metrics::dice(&counts).value,
        accuracy: metrics::accuracy(&counts)?,
        bde,
    })
}

/// Aggregate over a test set. `accuracy` is pixel accuracy of the masks;
/// classification accuracy is reported separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_images: usize,
    pub dice: f64,
    pub accuracy: f64,
    /// Mean over images with a defined BDE.
    pub bde: Option<f64>,
    pub bde_undefined: usize,
    /// Mean top-detection confidence (0 for images without a detection).
    pub mean_confidence: f64,
    /// 95% half-width of `mean_confidence`; `None` for a single image.
    pub confidence_half_width: Option<f64>,
    /// 95% half-width of the mean Dice.
    pub dice_half_width: Option<f64>,
    pub classification_accuracy: f64,
    /// Fraction of images whose top-1 box reaches [`LOCALIZATION_IOU`].
    pub localization_rate: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

fn half_width(values: &[f64]) -> Option<f64> {
    metrics::mean_confidence_interval(values).ok().map(|MeanInterval { half_width, .. }| half_width)
}

pub fn summarize(rows: &[ImageRow]) -> Result<MetricReport, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let n = rows.len() as f64;
    let conf: Vec<f64> = rows.iter().map(|r| r.confidence).collect();
    let dice: Vec<f64> = rows.iter().map(|r| r.dice).collect();
    Ok(MetricReport {
        n_images: rows.len(),
        dice: dice.iter().sum::<f64>() / n,
        accuracy: rows.iter().map(|r| r.accuracy).sum::<f64>() / n,
        bde: mean(rows.iter().filter_map(|r| r.bde)),
        bde_undefined: rows.iter().filter(|r| r.bde.is_none()).count(),
        mean_confidence: conf.iter().sum::<f64>() / n,
        confidence_half_width: half_width(&conf),
        dice_half_width: half_width(&dice),
        classification_accuracy: rows.iter().filter(|r| r.class_true == r.class_pred).count() as f64 / n,
        localization_rate: rows.iter().filter(|r| r.iou_box >= LOCALIZATION_IOU).count() as f64 / n,
    })
}

/// Runs `pipeline` on every sample and scores it.
pub fn evaluate_samples(samples: &[Sample], pipeline: &dyn Pipeline) -> Result<(Vec<ImageRow>, MetricReport), EvalError> {
    let rows = samples
        .iter()
        .map(|s| pipeline.analyze(s).and_then(|out| score_image(s, &out)))
        .collect::<Result<Vec<_>, _>>()?;
    let report = summarize(&rows)?;
    Ok((rows, report))
}

/// Loads every manifest entry and evaluates it.
pub fn evaluate_dataset(
    manifest: &dataset::DatasetManifest,
    pipeline: &dyn Pipeline,
) -> Result<(Vec<ImageRow>, MetricReport), EvalError> {
    evaluate_samples(&manifest.load_samples()?, pipeline)
}

pub fn write_rows_csv(rows: &[ImageRow], out: impl Write) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn pct(v: f64) -> String {
    format!("{:.2} %", 100.0 * v)
}

/// Plain-text overall-performance table.
pub fn format_summary(r: &MetricReport) -> String {
    let mut s = String::new();
    let hw = |h: Option<f64>| h.map_or_else(|| "n/a".to_string(), |h| format!("{:.2} %", 100.0 * h));
    let _ = writeln!(s, "Overall performance of the system (n = {})", r.n_images);
    let _ = writeln!(s, "  {:<34}{}  (95% CI +/- {})", "Confidence (mean top detection)", pct(r.mean_confidence), hw(r.confidence_half_width));
    let _ = writeln!(s, "  {:<34}{:.4}  (95% CI +/- {})", "Dice score", r.dice, r.dice_half_width.map_or("n/a".into(), |h| format!("{h:.4}")));
    let _ = writeln!(s, "  {:<34}{:.4}", "Accuracy (pixel)", r.accuracy);
    match r.bde {
        Some(b) => {
            let _ = writeln!(s, "  {:<34}{:.3} px ({} undefined)", "BDE", b, r.bde_undefined);
        }
        None => {
            let _ = writeln!(s, "  {:<34}undefined", "BDE");
        }
    }
    let _ = writeln!(s, "  {:<34}{:.4}", "Classification accuracy", r.classification_accuracy);
    let _ = writeln!(s, "  {:<34}{:.4}", "Localization rate (IoU >= 0.5)", r.localization_rate);
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub classifier: TrainConfig,
    pub detector: DetectorTrainConfig,
    pub detect: DetectConfig,
    pub box_margin: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 1,
            classifier: TrainConfig::default(),
            detector: DetectorTrainConfig::default(),
            detect: DetectConfig::default(),
            box_margin: DEFAULT_BOX_MARGIN,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub rows: Vec<ImageRow>,
    pub report: MetricReport,
    pub classifier_losses: Vec<f64>,
    pub detector_losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub folds: Vec<FoldResult>,
    /// Held-out rows of all folds, fold by fold.
    pub rows: Vec<ImageRow>,
    pub report: MetricReport,
}

/// Stratified k-fold cross-validation of the whole pipeline. Each fold
/// trains both networks from scratch on the other folds and scores its
/// held-out images. Fold `i` trains with seeds derived from `cfg.seed`.
pub fn cross_validate(samples: &[Sample], cfg: &CvConfig) -> Result<CvOutcome, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let classes: Vec<TumorClass> = samples.iter().map(|s| s.class).collect();
    let folds = dataset::kfold_split(&classes, cfg.folds, cfg.seed)?;
    let inputs = samples.iter().map(|s| network_input(&s.image)).collect::<Result<Vec<_>, _>>()?;
    let tensors: Vec<Tensor3> = inputs.iter().map(classifier::image_tensor).collect();
    let mut results = Vec::with_capacity(folds.len());
    for (fi, fold) in folds.iter().enumerate() {
        let cls_data: Vec<(Tensor3, TumorClass)> = fold.train.iter().map(|&i| (tensors[i].clone(), samples[i].class)).collect();
        let det_data: Vec<(Tensor3, BBox)> =
            fold.train.iter().map(|&i| (tensors[i].clone(), map_box_to_network(&samples[i].bbox))).collect();
        let cls_cfg = TrainConfig { seed: SplitMix64::derive(cfg.seed, 2 * fi as u64).next_u64(), ..cfg.classifier };
        let det_cfg = DetectorTrainConfig { seed: SplitMix64::derive(cfg.seed, 2 * fi as u64 + 1).next_u64(), ..cfg.detector };
        let cls = classifier::fit(classifier::INPUT_SIZE, &cls_data, &cls_cfg)?;
        drop(cls_data);
        let det = detector::fit(detector::INPUT_SIZE, &det_data, &det_cfg)?;
        drop(det_data);
        let mut pipeline = TrainedPipeline::new(cls.weights, det.weights)?;
        pipeline.detect = cfg.detect;
        pipeline.box_margin = cfg.box_margin;
        let rows = fold
            .test
            .iter()
            .map(|&i| pipeline.run_prepared(&samples[i].image, &inputs[i]).and_then(|out| score_image(&samples[i], &out)))
            .collect::<Result<Vec<_>, _>>()?;
        let report = summarize(&rows)?;
        results.push(FoldResult {
            rows,
            report,
            classifier_losses: cls.epoch_losses,
            detector_losses: det.epoch_losses,
        });
    }
    let rows: Vec<ImageRow> = results.iter().flat_map(|f| f.rows.iter().cloned()).collect();
    let report = summarize(&rows)?;
    Ok(CvOutcome { folds: results, rows, report })
}
