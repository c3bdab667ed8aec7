//! The fixed network template: `blocks` x (conv -> ReLU -> 2x2 max-pool),
//! then a ReLU hidden layer with inverted dropout, then a two-way softmax.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamHyper, AdamState};
use super::layers::{
    conv2d_backward, conv2d_forward, cross_entropy, dropout_forward, fc_backward, fc_forward,
    maxpool2x2_backward, maxpool2x2_forward, relu_backward, relu_forward, softmax,
    softmax_cross_entropy_grad,
};
use super::tensor::{Scalar, Tensor};
use crate::dataset::{shuffle_batches, PatchDataset};
use crate::error::{Error, Result};
use crate::image::Window;
use crate::metrics::label_mae;
use crate::rng;
use crate::woperator::{check_flat_len, Classifier};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub masks: usize,
    pub mask_size: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::invalid(format!("unknown precision '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub window_w: usize,
    pub window_h: usize,
    pub blocks: Vec<ConvBlock>,
    pub fc_hidden: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            window_w: 9,
            window_h: 9,
            blocks: vec![
                ConvBlock {
                    masks: 32,
                    mask_size: 5,
                },
                ConvBlock {
                    masks: 32,
                    mask_size: 5,
                },
            ],
            fc_hidden: 512,
            num_classes: 2,
            dropout_rate: 0.0,
            learning_rate: 1e-4,
            batch_size: 50,
            epochs: 50,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl CnnConfig {
    pub fn with_window(mut self, size: usize) -> Self {
        self.window_w = size;
        self.window_h = size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.window_w == 0 || self.window_h == 0 {
            return bad("window dimensions must be positive".into());
        }
        if self.blocks.is_empty() {
            return bad("at least one convolution block is required".into());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.masks == 0 || b.mask_size == 0 || b.mask_size % 2 == 0 {
                return bad(format!(
                    "block {i}: need a positive mask count and odd mask size, got {}x{}",
                    b.masks, b.mask_size
                ));
            }
        }
        if self.fc_hidden == 0 {
            return bad("fc_hidden must be positive".into());
        }
        if self.num_classes != 2 {
            return bad(format!("num_classes must be 2, got {}", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        self.feature_dims().map(|_| ())
    }

    /// Spatial size after every block and the flattened feature count.
    pub fn feature_dims(&self) -> Result<(usize, usize, usize)> {
        let (mut h, mut w) = (self.window_h, self.window_w);
        for (i, _) in self.blocks.iter().enumerate() {
            h /= 2;
            w /= 2;
            if h == 0 || w == 0 {
                return Err(Error::invalid(format!(
                    "window {}x{} collapses to zero after pooling block {}",
                    self.window_w,
                    self.window_h,
                    i + 1
                )));
            }
        }
        let c = self.blocks.last().map_or(1, |b| b.masks);
        Ok((h, w, c * h * w))
    }

    /// Names and shapes of the parameter tensors in storage order.
    pub fn param_layout(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let (_, _, flat) = self.feature_dims()?;
        let mut out = Vec::new();
        let mut in_ch = 1;
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((
                format!("conv{}.weight", i + 1),
                vec![b.masks, in_ch, b.mask_size, b.mask_size],
            ));
            out.push((format!("conv{}.bias", i + 1), vec![b.masks]));
            in_ch = b.masks;
        }
        out.push(("fc1.weight".into(), vec![self.fc_hidden, flat]));
        out.push(("fc1.bias".into(), vec![self.fc_hidden]));
        out.push(("fc2.weight".into(), vec![self.num_classes, self.fc_hidden]));
        out.push(("fc2.bias".into(), vec![self.num_classes]));
        Ok(out)
    }

    pub fn window(&self) -> Result<Window> {
        Window::rect(self.window_w, self.window_h)
    }
}

/// Per-epoch training summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's mini-batches, weighted by size.
    pub train_loss: f64,
    /// Fraction of training samples classified correctly during the
    /// epoch's forward passes (dropout active).
    pub train_accuracy: f64,
    pub val_mae: Option<f64>,
}

struct ForwardCache<T> {
    block_inputs: Vec<Tensor<T>>,
    block_relu: Vec<Tensor<T>>,
    pool_arg: Vec<Vec<usize>>,
    flat: Tensor<T>,
    hidden: Tensor<T>,
    mask: Vec<T>,
    dropped: Tensor<T>,
    probs: Tensor<T>,
}

pub struct CnnModel<T: Scalar> {
    config: CnnConfig,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Vec<T>>,
    adam: AdamState<T>,
    hyper: AdamHyper,
    epochs_completed: usize,
    cache: Option<Box<ForwardCache<T>>>,
}

impl<T: Scalar> Clone for CnnModel<T> {
    fn clone(&self) -> Self {
        CnnModel {
            config: self.config.clone(),
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            params: self.params.clone(),
            adam: self.adam.clone(),
            hyper: self.hyper,
            epochs_completed: self.epochs_completed,
            cache: None,
        }
    }
}

impl<T: Scalar> std::fmt::Debug for CnnModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CnnModel")
            .field("config", &self.config)
            .field("params", &self.shapes)
            .field("adam_t", &self.adam.t)
            .field("epochs_completed", &self.epochs_completed)
            .finish()
    }
}

impl<T: Scalar> PartialEq for CnnModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params == other.params
            && self.adam == other.adam
            && self.hyper == other.hyper
            && self.epochs_completed == other.epochs_completed
    }
}

impl<T: Scalar> CnnModel<T> {
    /// Fresh model with He-normal weights (std = sqrt(2 / fan_in)) and zero
    /// biases, drawn from the config seed.
    pub fn new(config: CnnConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.param_layout()?;
        let mut rng = rng::derive(config.seed, &[rng::TAG_INIT]);
        let params = layout
            .iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                if name.ends_with(".bias") {
                    return vec![T::zero(); n];
                }
                let fan_in: usize = shape[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
                (0..n).map(|_| T::of(normal.sample(&mut rng))).collect()
            })
            .collect();
        Self::from_parts(config, params, None, 0)
    }

    pub fn from_parts(
        config: CnnConfig,
        params: Vec<Vec<T>>,
        adam: Option<AdamState<T>>,
        epochs_completed: usize,
    ) -> Result<Self> {
        config.validate()?;
        let layout = config.param_layout()?;
        if params.len() != layout.len()
            || params
                .iter()
                .zip(&layout)
                .any(|(p, (_, s))| p.len() != s.iter().product::<usize>())
        {
            return Err(Error::Shape {
                expected: layout.iter().map(|(_, s)| s.iter().product()).collect(),
                actual: params.iter().map(Vec::len).collect(),
            });
        }
        let adam = match adam {
            Some(a) => {
                if a.m.len() != params.len()
                    || a.v.len() != params.len()
                    || a.m.iter().zip(&params).any(|(m, p)| m.len() != p.len())
                    || a.v.iter().zip(&params).any(|(v, p)| v.len() != p.len())
                {
                    return Err(Error::invalid("optimizer state does not match parameters"));
                }
                a
            }
            None => AdamState::for_params(&params),
        };
        let (names, shapes) = layout.into_iter().unzip();
        Ok(CnnModel {
            config,
            names,
            shapes,
            params,
            adam,
            hyper: AdamHyper::default(),
            epochs_completed,
            cache: None,
        })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    /// Changes the training schedule (learning rate, dropout, epochs,
    /// batch size, seed). Architecture fields must not change.
    pub fn set_schedule(&mut self, config: CnnConfig) -> Result<()> {
        config.validate()?;
        if config.param_layout()? != self.config.param_layout()? {
            return Err(Error::invalid("architecture differs from the model's"));
        }
        self.config = config;
        Ok(())
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn params(&self) -> &[Vec<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.params
    }

    pub fn adam_state(&self) -> &AdamState<T> {
        &self.adam
    }

    pub fn adam_hyper(&self) -> AdamHyper {
        self.hyper
    }

    pub fn epochs_completed(&self) -> usize {
        self.epochs_completed
    }

    pub fn window(&self) -> Window {
        self.config.window().expect("validated window")
    }

    fn tensor(&self, i: usize) -> Tensor<T> {
        Tensor::new(self.shapes[i].clone(), self.params[i].clone()).expect("layout")
    }

    fn nblocks(&self) -> usize {
        self.config.blocks.len()
    }

    /// Input batch `(n, 1, h, w)` from flattened 0/1 patches.
    pub fn batch_from_flat(&self, patches: &[u8]) -> Result<Tensor<T>> {
        let (h, w) = (self.config.window_h, self.config.window_w);
        check_flat_len(patches.len(), h * w)?;
        let n = patches.len() / (h * w);
        Tensor::new(vec![n, 1, h, w], patches.iter().map(|&v| <T as From<u8>>::from(v)).collect())
    }

    /// Input batch for the given dataset samples.
    pub fn batch_from_dataset(&self, ds: &PatchDataset, indices: &[usize]) -> Result<Tensor<T>> {
        self.check_dataset(ds)?;
        let (h, w) = (self.config.window_h, self.config.window_w);
        let mut data = vec![T::zero(); indices.len() * h * w];
        for (chunk, &i) in data.chunks_mut(h * w).zip(indices) {
            ds.unpack_into(i, chunk);
        }
        Tensor::new(vec![indices.len(), 1, h, w], data)
    }

    fn check_dataset(&self, ds: &PatchDataset) -> Result<()> {
        if ds.window().rect_dims() != Some((self.config.window_w, self.config.window_h)) {
            return Err(Error::invalid(format!(
                "dataset window does not match the model's {}x{} window",
                self.config.window_w, self.config.window_h
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor<T>, training: bool, rng: &mut rng::Rng) -> Result<ForwardCache<T>> {
        let expect = [x.shape()[0], 1, self.config.window_h, self.config.window_w];
        if x.shape() != expect {
            return Err(Error::Shape {
                expected: expect.to_vec(),
                actual: x.shape().to_vec(),
            });
        }
        let nb = self.nblocks();
        let mut block_inputs = Vec::with_capacity(nb);
        let mut block_relu = Vec::with_capacity(nb);
        let mut pool_arg = Vec::with_capacity(nb);
        let mut cur = x.clone();
        for b in 0..nb {
            let conv = conv2d_forward(&cur, &self.tensor(2 * b), &self.params[2 * b + 1])?;
            let act = relu_forward(&conv);
            let (pooled, arg) = maxpool2x2_forward(&act)?;
            block_inputs.push(cur);
            block_relu.push(act);
            pool_arg.push(arg);
            cur = pooled;
        }
        let batch = cur.shape()[0];
        let flat_len = cur.len() / batch.max(1);
        let flat = cur.reshape(vec![batch, flat_len])?;
        let fc1 = 2 * nb;
        let hidden = relu_forward(&fc_forward(&flat, &self.tensor(fc1), &self.params[fc1 + 1])?);
        let (dropped, mask) = dropout_forward(&hidden, self.config.dropout_rate, training, rng)?;
        let logits = fc_forward(&dropped, &self.tensor(fc1 + 2), &self.params[fc1 + 3])?;
        let probs = softmax(&logits)?;
        Ok(ForwardCache {
            block_inputs,
            block_relu,
            pool_arg,
            flat,
            hidden,
            mask,
            dropped,
            probs,
        })
    }

    /// Class probabilities with dropout disabled.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        // The generator is never drawn from in inference mode.
        let mut unused = rng::Rng::seed_from_u64(0);
        Ok(self.run(x, false, &mut unused)?.probs)
    }

    /// Training-mode forward pass; caches activations for [`Self::backward`]
    /// and returns class probabilities.
    pub fn forward(&mut self, x: &Tensor<T>, training: bool, rng: &mut rng::Rng) -> Result<Tensor<T>> {
        let cache = self.run(x, training, rng)?;
        let probs = cache.probs.clone();
        self.cache = Some(Box::new(cache));
        Ok(probs)
    }

    /// Gradients of the mean cross-entropy w.r.t. every parameter tensor,
    /// from the cached forward pass. Consumes the cache.
    pub fn backward(&mut self, labels: &[u8]) -> Result<Vec<Vec<T>>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        let nb = self.nblocks();
        let fc1 = 2 * nb;
        let mut grads: Vec<Vec<T>> = vec![Vec::new(); self.params.len()];

        let d_logits = softmax_cross_entropy_grad(&cache.probs, labels)?;
        let g2 = fc_backward(&cache.dropped, &self.tensor(fc1 + 2), &d_logits)?;
        grads[fc1 + 2] = g2.weights.into_data();
        grads[fc1 + 3] = g2.bias;

        let mut d_hidden = g2.input;
        for (d, &m) in d_hidden.data_mut().iter_mut().zip(&cache.mask) {
            *d *= m;
        }
        let d_hidden = relu_backward(&cache.hidden, &d_hidden)?;
        let g1 = fc_backward(&cache.flat, &self.tensor(fc1), &d_hidden)?;
        grads[fc1] = g1.weights.into_data();
        grads[fc1 + 1] = g1.bias;

        let mut d_cur = g1.input;
        for b in (0..nb).rev() {
            let act = &cache.block_relu[b];
            let (bs, c, h, w) = (act.shape()[0], act.shape()[1], act.shape()[2], act.shape()[3]);
            let d_pooled = d_cur.reshape(vec![bs, c, h / 2, w / 2])?;
            let d_act = maxpool2x2_backward(&d_pooled, &cache.pool_arg[b], act.shape())?;
            let d_conv = relu_backward(act, &d_act)?;
            let gc = conv2d_backward(&cache.block_inputs[b], &self.tensor(2 * b), &d_conv, b > 0)?;
            grads[2 * b] = gc.kernels.into_data();
            grads[2 * b + 1] = gc.bias;
            match gc.input {
                Some(dx) => d_cur = dx,
                None => break,
            }
        }
        Ok(grads)
    }

    /// Mean loss and parameter gradients for one batch.
    pub fn loss_and_grads(
        &mut self,
        x: &Tensor<T>,
        labels: &[u8],
        training: bool,
        rng: &mut rng::Rng,
    ) -> Result<(T, Vec<Vec<T>>)> {
        let probs = self.forward(x, training, rng)?;
        let loss = cross_entropy(&probs, labels)?;
        Ok((loss, self.backward(labels)?))
    }

    /// Applies one optimizer step with the configured learning rate.
    pub fn apply_gradients(&mut self, grads: &[Vec<T>]) -> Result<()> {
        adam_step(
            &mut self.params,
            grads,
            &mut self.adam,
            self.config.learning_rate,
            self.hyper,
            &self.names,
        )
    }

    /// Trains from the current epoch up to `config.epochs`. After each
    /// epoch the validation MAE is measured (when a validation set is
    /// given) and `sink` receives the record and the model.
    pub fn train<F>(
        &mut self,
        train: &PatchDataset,
        val: Option<&PatchDataset>,
        mut sink: F,
    ) -> Result<Vec<EpochRecord>>
    where
        F: FnMut(&EpochRecord, &CnnModel<T>) -> Result<()>,
    {
        self.config.validate()?;
        self.check_dataset(train)?;
        if let Some(v) = val {
            self.check_dataset(v)?;
        }
        if train.is_empty() {
            return Err(Error::data("training set is empty"));
        }
        let mut records = Vec::new();
        while self.epochs_completed < self.config.epochs {
            let epoch = self.epochs_completed;
            let mut loss_sum = 0.0;
            let mut correct = 0usize;
            let batches = shuffle_batches(train, self.config.batch_size, self.config.seed, epoch)?;
            for (step, idx) in batches.enumerate() {
                let x = self.batch_from_dataset(train, &idx)?;
                let labels: Vec<u8> = idx.iter().map(|&i| train.label(i)).collect();
                let mut drop_rng = rng::derive(
                    self.config.seed,
                    &[rng::TAG_DROPOUT, epoch as u64, step as u64],
                );
                let diverged = |layer: String| Error::Divergence {
                    layer,
                    epoch: epoch + 1,
                    step: step + 1,
                };
                let probs = self.forward(&x, true, &mut drop_rng)?;
                let loss = cross_entropy(&probs, &labels)?.as_f64();
                if !loss.is_finite() {
                    self.cache = None;
                    return Err(diverged("loss".into()));
                }
                loss_sum += loss * idx.len() as f64;
                correct += probs
                    .data()
                    .chunks(2)
                    .zip(&labels)
                    .filter(|(p, &l)| u8::from(p[1] > p[0]) == l)
                    .count();
                let grads = self.backward(&labels)?;
                self.apply_gradients(&grads).map_err(|e| match e {
                    Error::Divergence { layer, .. } => diverged(layer),
                    other => other,
                })?;
            }
            self.epochs_completed += 1;
            let val_mae = match val {
                Some(v) if !v.is_empty() => {
                    let pred = self.predict_dataset(v)?;
                    Some(label_mae(&pred, v.labels())?)
                }
                _ => None,
            };
            let rec = EpochRecord {
                epoch: self.epochs_completed,
                train_loss: loss_sum / train.len() as f64,
                train_accuracy: correct as f64 / train.len() as f64,
                val_mae,
            };
            sink(&rec, self)?;
            records.push(rec);
        }
        Ok(records)
    }

    fn check_trained(&self) -> Result<()> {
        if self.epochs_completed == 0 {
            return Err(Error::State("model has not been trained".into()));
        }
        Ok(())
    }

    /// Labels for flattened patches; class 1 only when its probability is
    /// strictly larger.
    pub fn predict(&self, patches: &[u8]) -> Result<Vec<u8>> {
        self.check_trained()?;
        let area = self.config.window_w * self.config.window_h;
        check_flat_len(patches.len(), area)?;
        let mut out = Vec::with_capacity(patches.len() / area);
        for chunk in patches.chunks(PREDICT_CHUNK * area) {
            let probs = self.infer(&self.batch_from_flat(chunk)?)?;
            out.extend(probs.data().chunks(2).map(|p| u8::from(p[1] > p[0])));
        }
        Ok(out)
    }

    pub fn predict_dataset(&self, ds: &PatchDataset) -> Result<Vec<u8>> {
        self.check_trained()?;
        self.check_dataset(ds)?;
        let mut out = Vec::with_capacity(ds.len());
        let idx: Vec<usize> = (0..ds.len()).collect();
        for chunk in idx.chunks(PREDICT_CHUNK) {
            let probs = self.infer(&self.batch_from_dataset(ds, chunk)?)?;
            out.extend(probs.data().chunks(2).map(|p| u8::from(p[1] > p[0])));
        }
        Ok(out)
    }
}

const PREDICT_CHUNK: usize = 512;

impl<T: Scalar> Classifier for CnnModel<T> {
    fn input_len(&self) -> usize {
        self.config.window_w * self.config.window_h
    }

    fn is_trained(&self) -> bool {
        self.epochs_completed > 0
    }

    fn predict_flat(&self, patches: &[u8]) -> Result<Vec<u8>> {
        self.predict(patches)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn tiny(window: usize) -> CnnConfig {
        CnnConfig {
            blocks: vec![
                ConvBlock {
                    masks: 3,
                    mask_size: 3,
                },
                ConvBlock {
                    masks: 4,
                    mask_size: 3,
                },
            ],
            fc_hidden: 8,
            learning_rate: 1e-2,
            batch_size: 10,
            epochs: 20,
            seed: 42,
            ..CnnConfig::default().with_window(window)
        }
    }

    /// 200 random 5x5 patches: label-1 patches are dense, label-0 patches
    /// sparse, and the pixel count separates the classes.
    fn separable() -> PatchDataset {
        let mut r = rng::derive(9, &[]);
        let w = Window::square(5).unwrap();
        let mut patches = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let label = (i % 2) as u8;
            let density = if label == 1 { 0.8 } else { 0.2 };
            let p = loop {
                let p: Vec<u8> = (0..25).map(|_| u8::from(r.random::<f64>() < density)).collect();
                let ones = p.iter().filter(|&&v| v == 1).count();
                if u8::from(ones > 12) == label {
                    break p;
                }
            };
            labels.push(label);
            patches.push(p);
        }
        PatchDataset::from_samples(w, &patches, &labels).unwrap()
    }

    #[test]
    fn shape_chain() {
        let c = CnnConfig::default().with_window(9);
        assert_eq!(c.feature_dims().unwrap(), (2, 2, 128));
        let c = CnnConfig::default().with_window(19);
        assert_eq!(c.feature_dims().unwrap(), (4, 4, 512));
        assert_eq!(CnnConfig::default().with_window(15).feature_dims().unwrap().2, 32 * 9);
        assert!(CnnConfig::default().with_window(3).validate().is_err());
        let layout = CnnConfig::default().param_layout().unwrap();
        assert_eq!(layout[0], ("conv1.weight".to_string(), vec![32, 1, 5, 5]));
        assert_eq!(layout[2], ("conv2.weight".to_string(), vec![32, 32, 5, 5]));
        assert_eq!(layout[4], ("fc1.weight".to_string(), vec![512, 128]));
        assert_eq!(layout[6], ("fc2.weight".to_string(), vec![2, 512]));
    }

    #[test]
    fn config_validation() {
        let ok = CnnConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            CnnConfig { epochs: 0, ..ok.clone() },
            CnnConfig { dropout_rate: 1.0, ..ok.clone() },
            CnnConfig { learning_rate: 0.0, ..ok.clone() },
            CnnConfig { batch_size: 0, ..ok.clone() },
            CnnConfig { num_classes: 3, ..ok.clone() },
            CnnConfig {
                blocks: vec![ConvBlock { masks: 2, mask_size: 4 }],
                ..ok.clone()
            },
        ] {
            assert!(matches!(CnnModel::<f32>::new(bad), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut m = CnnModel::<f64>::new(tiny(5)).unwrap();
        assert!(matches!(m.backward(&[0]), Err(Error::State(_))));
    }

    #[test]
    fn untrained_predict_is_state_error() {
        let m = CnnModel::<f32>::new(tiny(5)).unwrap();
        assert!(matches!(m.predict(&[0; 25]), Err(Error::State(_))));
    }

    #[test]
    fn zero_weight_output_layer_has_symmetric_bias_gradient() {
        let mut m = CnnModel::<f64>::new(tiny(5)).unwrap();
        let n = m.params().len();
        m.params_mut()[n - 2].iter_mut().for_each(|v| *v = 0.0);
        m.params_mut()[n - 1].iter_mut().for_each(|v| *v = 0.0);
        let x = m.batch_from_flat(&[[1u8; 25], [0u8; 25]].concat()).unwrap();
        let mut r = rng::derive(0, &[]);
        let (_, g) = m.loss_and_grads(&x, &[0, 1], false, &mut r).unwrap();
        assert!(g[n - 1].iter().all(|v| v.abs() < 1e-15), "{:?}", g[n - 1]);
    }

    #[test]
    fn dead_relu_units_get_no_weight_gradient() {
        let mut m = CnnModel::<f64>::new(tiny(5)).unwrap();
        // Make every first-layer unit negative: zero kernels, negative bias.
        m.params_mut()[0].iter_mut().for_each(|v| *v = 0.0);
        m.params_mut()[1].iter_mut().for_each(|v| *v = -1.0);
        let x = m.batch_from_flat(&[1u8; 50]).unwrap();
        let mut r = rng::derive(0, &[]);
        let (_, g) = m.loss_and_grads(&x, &[0, 1], false, &mut r).unwrap();
        assert!(g[0].iter().all(|&v| v == 0.0));
        assert!(g[1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn learns_separable_toy_set() {
        let ds = separable();
        let mut m = CnnModel::<f32>::new(tiny(5)).unwrap();
        let recs = m.train(&ds, None, |_, _| Ok(())).unwrap();
        assert_eq!(recs.len(), 20);
        assert!(recs[9].train_loss < recs[0].train_loss);
        let pred = m.predict_dataset(&ds).unwrap();
        assert_eq!(pred, ds.labels());
        // Batch partitioning does not change predictions.
        let flat = ds.flat_patches();
        let whole = m.predict(&flat).unwrap();
        let parts: Vec<u8> = flat
            .chunks(25 * 7)
            .flat_map(|c| m.predict(c).unwrap())
            .collect();
        assert_eq!(whole, parts);
        assert_eq!(whole, pred);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = separable();
        let cfg = CnnConfig {
            epochs: 3,
            dropout_rate: 0.25,
            ..tiny(5)
        };
        let run = || {
            let mut m = CnnModel::<f32>::new(cfg.clone()).unwrap();
            let mut snaps = Vec::new();
            m.train(&ds, Some(&ds), |_, m| {
                snaps.push(m.clone());
                Ok(())
            })
            .unwrap();
            snaps
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let ds = separable();
        let cfg = CnnConfig { epochs: 4, dropout_rate: 0.5, ..tiny(5) };
        let mut full = CnnModel::<f64>::new(cfg.clone()).unwrap();
        full.train(&ds, None, |_, _| Ok(())).unwrap();

        let mut part = CnnModel::<f64>::new(CnnConfig { epochs: 2, ..cfg.clone() }).unwrap();
        part.train(&ds, None, |_, _| Ok(())).unwrap();
        part.set_schedule(cfg).unwrap();
        part.train(&ds, None, |_, _| Ok(())).unwrap();
        assert_eq!(part, full);
    }

    #[test]
    fn tie_predicts_class_zero() {
        let mut m = CnnModel::<f64>::new(tiny(5)).unwrap();
        let n = m.params().len();
        m.params_mut()[n - 2].iter_mut().for_each(|v| *v = 0.0);
        m.params_mut()[n - 1].iter_mut().for_each(|v| *v = 0.7);
        m.epochs_completed = 1;
        assert_eq!(m.predict(&[1; 25]).unwrap(), vec![0]);
    }

    #[test]
    fn divergence_is_reported() {
        let ds = separable();
        let mut m = CnnModel::<f32>::new(CnnConfig {
            learning_rate: 1e30,
            epochs: 3,
            ..tiny(5)
        })
        .unwrap();
        match m.train(&ds, None, |_, _| Ok(())) {
            Err(Error::Divergence { epoch, step, .. }) => assert!(epoch >= 1 && step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn wrong_window_rejected() {
        let ds = separable();
        let mut m = CnnModel::<f32>::new(tiny(7)).unwrap();
        assert!(matches!(m.train(&ds, None, |_, _| Ok(())), Err(Error::InvalidArgument(_))));
    }
}
