//! Shallow two-block CNN that labels a 128x128 slice as meningioma or glioma.
//!
//! conv 3x3 (20) -> relu -> maxpool 2x2 -> conv 3x3 (10) -> relu -> maxpool
//! 2x2 -> flatten -> fully connected (2) -> softmax. Convolutions are valid
//! (no padding), which gives the shape chain
//! 128x128x1 -> 126x126x20 -> 63x63x20 -> 61x61x10 -> 30x30x10 -> 9000 -> 2.
//!
//! The network is parameterized by input side length so the same code runs
//! a reduced 12x12 variant for gradient checking.

use std::path::Path;

use thiserror::Error;

use crate::image::NormImage;
use crate::nn::{self, glorot_bound, Conv3x3, Momentum, Pooled, Tensor3};
use crate::phantom::TumorClass;
use crate::rng::SplitMix64;
use crate::weights::{self, NamedTensor, WeightsError};

pub const INPUT_SIZE: usize = 128;
pub const CONV1_FILTERS: usize = 20;
pub const CONV2_FILTERS: usize = 10;
pub const CLASSES: usize = 2;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("classifier expects a {expected}x{expected} input, got {w}x{h}")]
    InputSize { expected: usize, w: usize, h: usize },
    #[error("input side {0} too small for the two conv/pool blocks")]
    Architecture(usize),
    #[error("training set has no {0} examples")]
    EmptyClass(TumorClass),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error(transparent)]
    Weights(#[from] WeightsError),
}

/// Spatial side length after conv -> pool -> conv -> pool.
pub fn feature_side(input: usize) -> Option<usize> {
    let s1 = input.checked_sub(2)? / 2;
    let s2 = s1.checked_sub(2)? / 2;
    (s2 > 0).then_some(s2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    input_size: usize,
    pub conv1: Conv3x3,
    pub conv2: Conv3x3,
    /// Row-major `flat_len x 2`.
    pub fc_w: Vec<f64>,
    pub fc_b: Vec<f64>,
}

impl ClassifierWeights {
    pub fn zeros(input_size: usize) -> Result<Self, ClassifierError> {
        let side = feature_side(input_size).ok_or(ClassifierError::Architecture(input_size))?;
        let flat = side * side * CONV2_FILTERS;
        Ok(Self {
            input_size,
            conv1: Conv3x3::zeros(1, CONV1_FILTERS, 0),
            conv2: Conv3x3::zeros(CONV1_FILTERS, CONV2_FILTERS, 0),
            fc_w: vec![0.0; flat * CLASSES],
            fc_b: vec![0.0; CLASSES],
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(input_size: usize, seed: u64) -> Result<Self, ClassifierError> {
        let mut w = Self::zeros(input_size)?;
        let mut rng = SplitMix64::new(seed);
        w.conv1 = Conv3x3::glorot(1, CONV1_FILTERS, 0, &mut rng);
        w.conv2 = Conv3x3::glorot(CONV1_FILTERS, CONV2_FILTERS, 0, &mut rng);
        let bound = glorot_bound(w.flat_len(), CLASSES);
        nn::fill_uniform(&mut rng, &mut w.fc_w, bound);
        Ok(w)
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn flat_len(&self) -> usize {
        self.fc_w.len() / CLASSES
    }

    fn params(&self) -> [&[f64]; 6] {
        [&self.conv1.weights, &self.conv1.bias, &self.conv2.weights, &self.conv2.bias, &self.fc_w, &self.fc_b]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.conv1.weights,
            &mut self.conv1.bias,
            &mut self.conv2.weights,
            &mut self.conv2.bias,
            &mut self.fc_w,
            &mut self.fc_b,
        ]
    }

    /// Flat parameter views with their tensor names, in container order.
    pub fn named_params(&self) -> Vec<(&'static str, &[f64])> {
        TENSOR_NAMES.iter().copied().zip(self.params()).collect()
    }

    pub fn named_params_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        TENSOR_NAMES.iter().copied().zip(self.params_mut()).collect()
    }

    pub fn is_all_zero(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|&v| v == 0.0))
    }

    fn shape_table(&self) -> Vec<(String, Vec<usize>)> {
        vec![
            ("cls.conv1.w".into(), vec![3, 3, 1, CONV1_FILTERS]),
            ("cls.conv1.b".into(), vec![CONV1_FILTERS]),
            ("cls.conv2.w".into(), vec![3, 3, CONV1_FILTERS, CONV2_FILTERS]),
            ("cls.conv2.b".into(), vec![CONV2_FILTERS]),
            ("cls.fc.w".into(), vec![self.flat_len(), CLASSES]),
            ("cls.fc.b".into(), vec![CLASSES]),
        ]
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        self.shape_table()
            .into_iter()
            .zip(self.params())
            .map(|((name, dims), data)| NamedTensor::new(name, dims, data.to_vec()))
            .collect()
    }

    pub fn from_tensors(tensors: Vec<NamedTensor>) -> Result<Self, ClassifierError> {
        let mut w = Self::zeros(INPUT_SIZE)?;
        let data = weights::expect_table(tensors, &w.shape_table())?;
        for (dst, src) in w.params_mut().into_iter().zip(data) {
            dst.copy_from_slice(&src);
        }
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
        Ok(weights::save(&self.to_tensors(), path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassifierError> {
        Self::from_tensors(weights::load(path)?)
    }

    fn reset(&mut self) {
        for p in self.params_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

const TENSOR_NAMES: [&str; 6] = ["cls.conv1.w", "cls.conv1.b", "cls.conv2.w", "cls.conv2.b", "cls.fc.w", "cls.fc.b"];

/// Every intermediate of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Tensor3,
    pub conv1: Tensor3,
    pub pool1: Pooled,
    pub conv2: Tensor3,
    pub pool2: Pooled,
    pub logits: [f64; CLASSES],
    pub probs: [f64; CLASSES],
}

impl ForwardTrace {
    /// (h, w, c) of conv1, pool1, conv2, pool2, then the flatten length
    /// and logit count.
    pub fn shapes(&self) -> ([(usize, usize, usize); 4], usize, usize) {
        (
            [self.conv1.shape(), self.pool1.out.shape(), self.conv2.shape(), self.pool2.out.shape()],
            self.pool2.out.data().len(),
            self.logits.len(),
        )
    }
}

pub fn image_tensor(img: &NormImage) -> Tensor3 {
    Tensor3::from_vec(img.height(), img.width(), 1, img.values().to_vec()).expect("image dims")
}

pub fn forward_trace(w: &ClassifierWeights, input: &Tensor3) -> Result<ForwardTrace, ClassifierError> {
    let n = w.input_size;
    if input.shape() != (n, n, 1) {
        return Err(ClassifierError::InputSize { expected: n, w: input.width(), h: input.height() });
    }
    let conv1 = nn::relu(&w.conv1.forward(input).expect("shape checked"));
    let pool1 = nn::maxpool2x2(&conv1);
    let conv2 = nn::relu(&w.conv2.forward(&pool1.out).expect("shape checked"));
    let pool2 = nn::maxpool2x2(&conv2);
    let flat = pool2.out.data();
    let mut logits = [0.0; CLASSES];
    for (k, l) in logits.iter_mut().enumerate() {
        *l = w.fc_b[k];
    }
    for (i, &x) in flat.iter().enumerate() {
        if x != 0.0 {
            let row = &w.fc_w[i * CLASSES..(i + 1) * CLASSES];
            for (l, &wv) in logits.iter_mut().zip(row) {
                *l += x * wv;
            }
        }
    }
    let p = nn::softmax(&logits);
    let probs = [p[0], p[1]];
    Ok(ForwardTrace { input: input.clone(), conv1, pool1, conv2, pool2, logits, probs })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    /// Indexed by [`TumorClass::index`].
    pub probabilities: [f64; CLASSES],
    pub label: TumorClass,
}

/// Argmax over the two probabilities; ties go to meningioma.
pub fn decide(probabilities: [f64; CLASSES]) -> TumorClass {
    if probabilities[1] > probabilities[0] {
        TumorClass::Glioma
    } else {
        TumorClass::Meningioma
    }
}

pub fn forward_classify(img: &NormImage, w: &ClassifierWeights) -> Result<Classification, ClassifierError> {
    let t = forward_trace(w, &image_tensor(img))?;
    Ok(Classification { probabilities: t.probs, label: decide(t.probs) })
}

/// Cross-entropy of one example; accumulates its gradient into `grad`.
pub fn loss_and_grad(
    w: &ClassifierWeights,
    input: &Tensor3,
    label: TumorClass,
    grad: &mut ClassifierWeights,
) -> Result<f64, ClassifierError> {
    let t = forward_trace(w, input)?;
    let target = label.index();
    let loss = -t.probs[target].max(f64::MIN_POSITIVE).ln();
    let mut dlogits = t.probs;
    dlogits[target] -= 1.0;

    let flat = t.pool2.out.data();
    let mut dflat = vec![0.0; flat.len()];
    for (i, &x) in flat.iter().enumerate() {
        let row = &w.fc_w[i * CLASSES..(i + 1) * CLASSES];
        let grow = &mut grad.fc_w[i * CLASSES..(i + 1) * CLASSES];
        let mut s = 0.0;
        for k in 0..CLASSES {
            grow[k] += x * dlogits[k];
            s += row[k] * dlogits[k];
        }
        dflat[i] = s;
    }
    for k in 0..CLASSES {
        grad.fc_b[k] += dlogits[k];
    }
    let (ph, pw, pc) = t.pool2.out.shape();
    let dpool2 = Tensor3::from_vec(ph, pw, pc, dflat).expect("flat len");
    let mut dconv2 = nn::maxpool_backward(t.conv2.shape(), &t.pool2.argmax, &dpool2);
    nn::relu_backward(&t.conv2, &mut dconv2);
    let dpool1 = w.conv2.backward(&t.pool1.out, &dconv2, &mut grad.conv2, true).expect("input grad");
    let mut dconv1 = nn::maxpool_backward(t.conv1.shape(), &t.pool1.argmax, &dpool1);
    nn::relu_backward(&t.conv1, &mut dconv1);
    w.conv1.backward(&t.input, &dconv1, &mut grad.conv1, false);
    Ok(loss)
}

pub fn mean_loss(w: &ClassifierWeights, data: &[(Tensor3, TumorClass)]) -> Result<f64, ClassifierError> {
    let mut total = 0.0;
    for (x, y) in data {
        let t = forward_trace(w, x)?;
        total += -t.probs[y.index()].max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / data.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    /// Caps the L2 norm of each mini-batch mean gradient.
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, learning_rate: 0.01, batch_size: 16, momentum: 0.9, max_grad_norm: Some(MAX_GRAD_NORM), seed: 1 }
    }
}

pub const MAX_GRAD_NORM: f64 = 5.0;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ClassifierWeights,
    /// Mean training loss of the initial weights.
    pub initial_loss: f64,
    /// Mean loss over each epoch's mini-batches, measured before each update.
    pub epoch_losses: Vec<f64>,
    /// Mean training loss of the final weights.
    pub final_loss: f64,
}

/// Trains on 128x128 normalized images. Requires both classes present.
pub fn train_classifier(train: &[(NormImage, TumorClass)], cfg: &TrainConfig) -> Result<TrainOutcome, ClassifierError> {
    for class in TumorClass::ALL {
        if !train.iter().any(|(_, c)| *c == class) {
            return Err(ClassifierError::EmptyClass(class));
        }
    }
    let data: Vec<(Tensor3, TumorClass)> = train.iter().map(|(img, c)| (image_tensor(img), *c)).collect();
    fit(INPUT_SIZE, &data, cfg)
}

/// Mini-batch SGD with momentum over prepared tensors, without the class
/// balance precondition. Deterministic in `cfg.seed`: the seed drives the
/// initialization and then every epoch's shuffle.
pub fn fit(input_size: usize, data: &[(Tensor3, TumorClass)], cfg: &TrainConfig) -> Result<TrainOutcome, ClassifierError> {
    if data.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    let mut rng = SplitMix64::new(cfg.seed);
    let mut w = ClassifierWeights::init(input_size, rng.next_u64())?;
    let initial_loss = mean_loss(&w, data)?;
    let mut grad = ClassifierWeights::zeros(input_size)?;
    let mut opt = Momentum::new(cfg.learning_rate, cfg.momentum);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = cfg.batch_size.max(1);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            grad.reset();
            let mut batch_loss = 0.0;
            for &i in chunk {
                batch_loss += loss_and_grad(&w, &data[i].0, data[i].1, &mut grad)?;
            }
            if !batch_loss.is_finite() {
                return Err(ClassifierError::Divergence { epoch });
            }
            total += batch_loss;
            let grads = grad.params();
            let mut scale = 1.0 / chunk.len() as f64;
            if let Some(max) = cfg.max_grad_norm {
                scale = Momentum::clipped_scale(&grads, scale, max);
            }
            opt.step(w.params_mut(), grads.to_vec(), scale);
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || !w.params().iter().all(|p| p.iter().all(|v| v.is_finite())) {
            return Err(ClassifierError::Divergence { epoch });
        }
        epoch_losses.push(mean);
    }
    let final_loss = mean_loss(&w, data)?;
    if !final_loss.is_finite() {
        return Err(ClassifierError::Divergence { epoch: cfg.epochs });
    }
    Ok(TrainOutcome { weights: w, initial_loss, epoch_losses, final_loss })
}
