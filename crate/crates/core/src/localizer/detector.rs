//! Single-class region proposal network used as the tumor localizer.
//!
//! Backbone: two 3x3 conv (zero padding 1) + relu + 2x2 maxpool blocks with
//! 16 and 32 channels, an overall stride of 4, so a 128x128 input gives a
//! 32x32x32 feature map. Heads: a 1x1 conv producing 9 objectness logits
//! per cell and a 1x1 conv producing 36 box deltas (4 per anchor).

use std::path::Path;

use thiserror::Error;

use super::anchors::{assign_anchors, decode_deltas, encode_deltas, generate_anchors, Anchor, AnchorLabel, ANCHORS_PER_CELL};
use super::nms::{detection_order, nms, Detection};
use crate::geometry::BBox;
use crate::image::NormImage;
use crate::nn::{self, glorot_bound, sigmoid, softplus, Conv3x3, Momentum, Pooled, Tensor3};
use crate::rng::SplitMix64;
use crate::weights::{self, NamedTensor, WeightsError};

pub const INPUT_SIZE: usize = 128;
pub const STRIDE: usize = 4;
pub const BACKBONE1: usize = 16;
pub const BACKBONE2: usize = 32;
pub const OBJ_CHANNELS: usize = ANCHORS_PER_CELL;
pub const REG_CHANNELS: usize = 4 * ANCHORS_PER_CELL;
pub const MAX_POSITIVES: usize = 32;
pub const MAX_NEGATIVES: usize = 32;
/// Transition point of the smooth-L1 box loss.
pub const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("detector expects a {expected}x{expected} input, got {w}x{h}")]
    InputSize { expected: usize, w: usize, h: usize },
    #[error("input side {0} must be a positive multiple of {STRIDE}")]
    Architecture(usize),
    #[error("ground-truth box {0:?} is invalid")]
    GroundTruth(BBox),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error(transparent)]
    Weights(#[from] WeightsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorWeights {
    input_size: usize,
    pub conv1: Conv3x3,
    pub conv2: Conv3x3,
    /// `BACKBONE2 x 9`, row-major.
    pub obj_w: Vec<f64>,
    pub obj_b: Vec<f64>,
    /// `BACKBONE2 x 36`, row-major.
    pub reg_w: Vec<f64>,
    pub reg_b: Vec<f64>,
}

const TENSOR_NAMES: [&str; 8] =
    ["det.conv1.w", "det.conv1.b", "det.conv2.w", "det.conv2.b", "det.obj.w", "det.obj.b", "det.reg.w", "det.reg.b"];

impl DetectorWeights {
    pub fn zeros(input_size: usize) -> Result<Self, DetectorError> {
        if input_size == 0 || input_size % STRIDE != 0 {
            return Err(DetectorError::Architecture(input_size));
        }
        Ok(Self {
            input_size,
            conv1: Conv3x3::zeros(1, BACKBONE1, 1),
            conv2: Conv3x3::zeros(BACKBONE1, BACKBONE2, 1),
            obj_w: vec![0.0; BACKBONE2 * OBJ_CHANNELS],
            obj_b: vec![0.0; OBJ_CHANNELS],
            reg_w: vec![0.0; BACKBONE2 * REG_CHANNELS],
            reg_b: vec![0.0; REG_CHANNELS],
        })
    }

    /// Glorot-uniform weights; the regression head starts at a tenth of the
    /// Glorot bound so initial boxes stay close to their anchors.
    pub fn init(input_size: usize, seed: u64) -> Result<Self, DetectorError> {
        let mut w = Self::zeros(input_size)?;
        let mut rng = SplitMix64::new(seed);
        w.conv1 = Conv3x3::glorot(1, BACKBONE1, 1, &mut rng);
        w.conv2 = Conv3x3::glorot(BACKBONE1, BACKBONE2, 1, &mut rng);
        nn::fill_uniform(&mut rng, &mut w.obj_w, glorot_bound(BACKBONE2, OBJ_CHANNELS));
        nn::fill_uniform(&mut rng, &mut w.reg_w, 0.1 * glorot_bound(BACKBONE2, REG_CHANNELS));
        Ok(w)
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn feature_size(&self) -> usize {
        self.input_size / STRIDE
    }

    pub fn anchors(&self) -> Vec<Anchor> {
        let f = self.feature_size();
        generate_anchors(f, f, STRIDE as f64)
    }

    fn params(&self) -> [&[f64]; 8] {
        [
            &self.conv1.weights,
            &self.conv1.bias,
            &self.conv2.weights,
            &self.conv2.bias,
            &self.obj_w,
            &self.obj_b,
            &self.reg_w,
            &self.reg_b,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.conv1.weights,
            &mut self.conv1.bias,
            &mut self.conv2.weights,
            &mut self.conv2.bias,
            &mut self.obj_w,
            &mut self.obj_b,
            &mut self.reg_w,
            &mut self.reg_b,
        ]
    }

    pub fn named_params(&self) -> Vec<(&'static str, &[f64])> {
        TENSOR_NAMES.iter().copied().zip(self.params()).collect()
    }

    pub fn named_params_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        TENSOR_NAMES.iter().copied().zip(self.params_mut()).collect()
    }

    pub fn is_all_zero(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|&v| v == 0.0))
    }

    fn shape_table() -> Vec<(String, Vec<usize>)> {
        let dims: [Vec<usize>; 8] = [
            vec![3, 3, 1, BACKBONE1],
            vec![BACKBONE1],
            vec![3, 3, BACKBONE1, BACKBONE2],
            vec![BACKBONE2],
            vec![BACKBONE2, OBJ_CHANNELS],
            vec![OBJ_CHANNELS],
            vec![BACKBONE2, REG_CHANNELS],
            vec![REG_CHANNELS],
        ];
        TENSOR_NAMES.iter().map(|n| n.to_string()).zip(dims).collect()
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        Self::shape_table()
            .into_iter()
            .zip(self.params())
            .map(|((name, dims), data)| NamedTensor::new(name, dims, data.to_vec()))
            .collect()
    }

    pub fn from_tensors(tensors: Vec<NamedTensor>) -> Result<Self, DetectorError> {
        let mut w = Self::zeros(INPUT_SIZE)?;
        let data = weights::expect_table(tensors, &Self::shape_table())?;
        for (dst, src) in w.params_mut().into_iter().zip(data) {
            dst.copy_from_slice(&src);
        }
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DetectorError> {
        Ok(weights::save(&self.to_tensors(), path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DetectorError> {
        Self::from_tensors(weights::load(path)?)
    }

    fn reset(&mut self) {
        for p in self.params_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[derive(Debug, Clone)]
pub struct DetectorTrace {
    pub input: Tensor3,
    pub conv1: Tensor3,
    pub pool1: Pooled,
    pub conv2: Tensor3,
    pub pool2: Pooled,
    /// `(f, f, 9)` objectness logits.
    pub obj: Tensor3,
    /// `(f, f, 36)` box deltas.
    pub reg: Tensor3,
}

fn head_forward(feat: &Tensor3, w: &[f64], b: &[f64], cout: usize) -> Tensor3 {
    let (h, wd, c) = feat.shape();
    let mut out = Tensor3::zeros(h, wd, cout);
    for cell in 0..h * wd {
        let f = &feat.data()[cell * c..(cell + 1) * c];
        let o = &mut out.data_mut()[cell * cout..(cell + 1) * cout];
        o.copy_from_slice(b);
        for (ci, &x) in f.iter().enumerate() {
            if x != 0.0 {
                for (ov, &wv) in o.iter_mut().zip(&w[ci * cout..(ci + 1) * cout]) {
                    *ov += x * wv;
                }
            }
        }
    }
    out
}

pub fn forward_trace(w: &DetectorWeights, input: &Tensor3) -> Result<DetectorTrace, DetectorError> {
    let n = w.input_size;
    if input.shape() != (n, n, 1) {
        return Err(DetectorError::InputSize { expected: n, w: input.width(), h: input.height() });
    }
    let conv1 = nn::relu(&w.conv1.forward(input).expect("shape checked"));
    let pool1 = nn::maxpool2x2(&conv1);
    let conv2 = nn::relu(&w.conv2.forward(&pool1.out).expect("shape checked"));
    let pool2 = nn::maxpool2x2(&conv2);
    let obj = head_forward(&pool2.out, &w.obj_w, &w.obj_b, OBJ_CHANNELS);
    let reg = head_forward(&pool2.out, &w.reg_w, &w.reg_b, REG_CHANNELS);
    Ok(DetectorTrace { input: input.clone(), conv1, pool1, conv2, pool2, obj, reg })
}

/// Sampled training anchors for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTargets {
    /// `(anchor index, is_positive)` for every anchor in the objectness loss.
    pub sampled: Vec<(usize, bool)>,
    /// `(anchor index, encoded deltas)` for every sampled positive.
    pub regression: Vec<(usize, [f64; 4])>,
}

/// Labels all anchors against `gt` and samples up to 32 positives and 32
/// negatives with `rng`.
pub fn sample_targets(anchors: &[Anchor], gt: &BBox, rng: &mut SplitMix64) -> Result<AnchorTargets, DetectorError> {
    if !gt.is_valid() {
        return Err(DetectorError::GroundTruth(*gt));
    }
    let labels = assign_anchors(anchors, gt);
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == AnchorLabel::Positive).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == AnchorLabel::Negative).collect();
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);
    pos.truncate(MAX_POSITIVES);
    neg.truncate(MAX_NEGATIVES);
    pos.sort_unstable();
    neg.sort_unstable();
    let regression = pos
        .iter()
        .map(|&i| Ok((i, encode_deltas(&anchors[i], gt).map_err(|_| DetectorError::GroundTruth(*gt))?)))
        .collect::<Result<Vec<_>, DetectorError>>()?;
    let mut sampled: Vec<(usize, bool)> = pos.iter().map(|&i| (i, true)).chain(neg.iter().map(|&i| (i, false))).collect();
    sampled.sort_unstable();
    Ok(AnchorTargets { sampled, regression })
}

fn smooth_l1(x: f64) -> (f64, f64) {
    if x.abs() < SMOOTH_L1_BETA {
        (0.5 * x * x / SMOOTH_L1_BETA, x / SMOOTH_L1_BETA)
    } else {
        (x.abs() - 0.5 * SMOOTH_L1_BETA, x.signum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectorLoss {
    pub objectness: f64,
    pub regression: f64,
}

impl DetectorLoss {
    pub fn total(&self) -> f64 {
        self.objectness + self.regression
    }
}

/// Loss of one image: mean binary cross-entropy over the sampled anchors
/// plus smooth-L1 over the positives' deltas, averaged per positive.
/// Accumulates the gradient into `grad`.
pub fn loss_and_grad(
    w: &DetectorWeights,
    input: &Tensor3,
    targets: &AnchorTargets,
    grad: &mut DetectorWeights,
) -> Result<DetectorLoss, DetectorError> {
    let t = forward_trace(w, input)?;
    let (fh, fw, fc) = t.pool2.out.shape();
    let mut dobj = Tensor3::zeros(fh, fw, OBJ_CHANNELS);
    let mut dreg = Tensor3::zeros(fh, fw, REG_CHANNELS);
    let mut loss = DetectorLoss::default();

    let n_obj = targets.sampled.len().max(1) as f64;
    for &(a, positive) in &targets.sampled {
        let z = t.obj.data()[a];
        // BCE with logits: softplus(z) - y z.
        let y = if positive { 1.0 } else { 0.0 };
        loss.objectness += (softplus(z) - y * z) / n_obj;
        dobj.data_mut()[a] += (sigmoid(z) - y) / n_obj;
    }
    let n_reg = targets.regression.len().max(1) as f64;
    for (a, target) in &targets.regression {
        for k in 0..4 {
            let i = a * 4 + k;
            let (l, g) = smooth_l1(t.reg.data()[i] - target[k]);
            loss.regression += l / n_reg;
            dreg.data_mut()[i] += g / n_reg;
        }
    }

    // 1x1 heads.
    let feat = t.pool2.out.data();
    let mut dfeat = Tensor3::zeros(fh, fw, fc);
    for cell in 0..fh * fw {
        let f = &feat[cell * fc..(cell + 1) * fc];
        let go = &dobj.data()[cell * OBJ_CHANNELS..(cell + 1) * OBJ_CHANNELS];
        let gr = &dreg.data()[cell * REG_CHANNELS..(cell + 1) * REG_CHANNELS];
        let any_o = go.iter().any(|&v| v != 0.0);
        let any_r = gr.iter().any(|&v| v != 0.0);
        if !any_o && !any_r {
            continue;
        }
        let df = &mut dfeat.data_mut()[cell * fc..(cell + 1) * fc];
        for (gw, gb, wts, g, cout, any) in [
            (&mut grad.obj_w, &mut grad.obj_b, &w.obj_w, go, OBJ_CHANNELS, any_o),
            (&mut grad.reg_w, &mut grad.reg_b, &w.reg_w, gr, REG_CHANNELS, any_r),
        ] {
            if !any {
                continue;
            }
            for (b, &gv) in gb.iter_mut().zip(g) {
                *b += gv;
            }
            for ci in 0..fc {
                let row = ci * cout..(ci + 1) * cout;
                let x = f[ci];
                let mut s = 0.0;
                for ((gwv, &wv), &gv) in gw[row.clone()].iter_mut().zip(&wts[row]).zip(g) {
                    *gwv += x * gv;
                    s += wv * gv;
                }
                df[ci] += s;
            }
        }
    }

    let mut dconv2 = nn::maxpool_backward(t.conv2.shape(), &t.pool2.argmax, &dfeat);
    nn::relu_backward(&t.conv2, &mut dconv2);
    let dpool1 = w.conv2.backward(&t.pool1.out, &dconv2, &mut grad.conv2, true).expect("input grad");
    let mut dconv1 = nn::maxpool_backward(t.conv1.shape(), &t.pool1.argmax, &dpool1);
    nn::relu_backward(&t.conv1, &mut dconv1);
    w.conv1.backward(&t.input, &dconv1, &mut grad.conv1, false);
    Ok(loss)
}

/// Loss only, for finite-difference checks.
pub fn loss(w: &DetectorWeights, input: &Tensor3, targets: &AnchorTargets) -> Result<DetectorLoss, DetectorError> {
    let mut scratch = DetectorWeights::zeros(w.input_size)?;
    loss_and_grad(w, input, targets, &mut scratch)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self { epochs: 8, learning_rate: 0.01, batch_size: 8, momentum: 0.9, seed: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct DetectorTrainOutcome {
    pub weights: DetectorWeights,
    /// Mean per-image loss of each epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
}

/// Trains on normalized images with one ground-truth box each, in the
/// image's own pixel frame. Anchors are resampled every epoch.
pub fn train_detector(
    train: &[(NormImage, BBox)],
    cfg: &DetectorTrainConfig,
) -> Result<DetectorTrainOutcome, DetectorError> {
    let data: Vec<(Tensor3, BBox)> = train
        .iter()
        .map(|(img, b)| {
            (Tensor3::from_vec(img.height(), img.width(), 1, img.values().to_vec()).expect("image dims"), *b)
        })
        .collect();
    fit(INPUT_SIZE, &data, cfg)
}

pub fn fit(input_size: usize, data: &[(Tensor3, BBox)], cfg: &DetectorTrainConfig) -> Result<DetectorTrainOutcome, DetectorError> {
    if data.is_empty() {
        return Err(DetectorError::EmptyDataset);
    }
    if let Some((_, b)) = data.iter().find(|(_, b)| !b.is_valid()) {
        return Err(DetectorError::GroundTruth(*b));
    }
    let mut rng = SplitMix64::new(cfg.seed);
    let mut w = DetectorWeights::init(input_size, rng.next_u64())?;
    let anchors = w.anchors();
    let mut grad = DetectorWeights::zeros(input_size)?;
    let mut opt = Momentum::new(cfg.learning_rate, cfg.momentum);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            grad.reset();
            for &i in chunk {
                let targets = sample_targets(&anchors, &data[i].1, &mut rng)?;
                total += loss_and_grad(&w, &data[i].0, &targets, &mut grad)?.total();
            }
            if !total.is_finite() {
                return Err(DetectorError::Divergence { epoch });
            }
            opt.step(w.params_mut(), grad.params().to_vec(), 1.0 / chunk.len() as f64);
        }
        if !w.params().iter().all(|p| p.iter().all(|v| v.is_finite())) {
            return Err(DetectorError::Divergence { epoch });
        }
        epoch_losses.push(total / data.len() as f64);
    }
    Ok(DetectorTrainOutcome { weights: w, epoch_losses })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectConfig {
    pub nms_threshold: f64,
    pub min_score: f64,
    /// Highest-scoring proposals kept before suppression.
    pub pre_nms_top_n: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { nms_threshold: 0.5, min_score: 0.05, pre_nms_top_n: 300 }
    }
}

/// Scores every anchor, decodes and clips its box, drops boxes below the
/// minimum score, and suppresses overlaps. Sorted by confidence.
pub fn propose(img: &NormImage, w: &DetectorWeights, cfg: &DetectConfig) -> Result<Vec<Detection>, DetectorError> {
    let input = Tensor3::from_vec(img.height(), img.width(), 1, img.values().to_vec()).expect("image dims");
    let t = forward_trace(w, &input)?;
    let side = w.input_size as f64;
    let anchors = w.anchors();
    let mut dets: Vec<Detection> = anchors
        .iter()
        .enumerate()
        .filter_map(|(i, a)| {
            let confidence = sigmoid(t.obj.data()[i]);
            if !(confidence >= cfg.min_score) {
                return None;
            }
            let r = &t.reg.data()[i * 4..i * 4 + 4];
            let bbox = decode_deltas(a, &[r[0], r[1], r[2], r[3]]).clip(side, side);
            bbox.is_valid().then_some(Detection { bbox, confidence })
        })
        .collect();
    dets.sort_by(detection_order);
    dets.truncate(cfg.pre_nms_top_n);
    Ok(nms(&dets, cfg.nms_threshold))
}

/// The highest-confidence proposal, or `None` when no anchor reaches the
/// minimum score ("no tumor found").
pub fn detect(img: &NormImage, w: &DetectorWeights, cfg: &DetectConfig) -> Result<Option<Detection>, DetectorError> {
    Ok(propose(img, w, cfg)?.into_iter().next())
}
