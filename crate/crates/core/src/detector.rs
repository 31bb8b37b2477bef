//! Small differentiable single-class grid detector and its trainer.
//!
//! Four stride-2 conv + leaky-relu stages take an RGB image down by 16x,
//! then a 1x1 conv head emits `(tx, ty, tw, th, conf)` per grid cell. A
//! single anchor, a single class and no NMS: the attack only needs the
//! confidences of boxes covering the person, and everything else would add
//! nondeterminism. Confidence and box params all pass through a sigmoid.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::render::BoundingBox;
use crate::rng::Rng;
use crate::tensor::{NodeId, Tape, Tensor};

/// Backbone channel plan; input is RGB.
const CHANNELS: [usize; 5] = [3, 8, 16, 32, 64];
const HEAD_OUT: usize = 5;
const LEAKY_SLOPE: f64 = 0.1;
/// Total spatial downsampling of the backbone.
pub const DETECTOR_STRIDE: usize = 16;

const WEIGHTS_MAGIC: [u8; 4] = *b"LCD1";

/// One predicted box with its confidence, in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
    /// Grid cell (row, col) this detection came from.
    pub cell: (usize, usize),
}

/// Fixed-architecture detector weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    kernels: Vec<Tensor>,
    biases: Vec<Tensor>,
    pub version: u32,
}

impl DetectorModel {
    /// Random init scaled by fan-in, deterministic for a given seed.
    pub fn init(seed: u64) -> Self {
        let mut rng = Rng::seeded(seed).split(0x6d6f64656c); // "model" stream
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        for l in 0..4 {
            let (cin, cout) = (CHANNELS[l], CHANNELS[l + 1]);
            kernels.push(rand_kernel(&mut rng, cout, cin, 3));
            biases.push(Tensor::zeros(vec![cout]));
        }
        kernels.push(rand_kernel(&mut rng, HEAD_OUT, CHANNELS[4], 1));
        biases.push(Tensor::zeros(vec![HEAD_OUT]));
        DetectorModel {
            kernels,
            biases,
            version: 1,
        }
    }

    /// Grid side length for a given image size (must divide evenly).
    pub fn grid_size(image_size: usize) -> Result<usize> {
        if image_size == 0 || image_size % DETECTOR_STRIDE != 0 {
            return Err(Error::Dimension(format!(
                "image size {image_size} not divisible by detector stride {DETECTOR_STRIDE}"
            )));
        }
        Ok(image_size / DETECTOR_STRIDE)
    }

    /// All weights flattened in serialization order (kernel, bias per layer).
    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (k, b) in self.kernels.iter().zip(&self.biases) {
            out.extend_from_slice(k.data());
            out.extend_from_slice(b.data());
        }
        out
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let mut pos = 0;
        for (k, b) in self.kernels.iter_mut().zip(self.biases.iter_mut()) {
            let kn = k.len();
            *k = Tensor::new(k.shape().to_vec(), flat[pos..pos + kn].to_vec())?;
            pos += kn;
            let bn = b.len();
            *b = Tensor::new(b.shape().to_vec(), flat[pos..pos + bn].to_vec())?;
            pos += bn;
        }
        debug_assert_eq!(pos, flat.len());
        Ok(())
    }

    /// Serialize to the flat binary weights format: magic `LCD1`, then a
    /// little-endian u32 tensor count, then per tensor u32 rank, u32 dims
    /// and f32 data.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&WEIGHTS_MAGIC);
        let tensors: Vec<&Tensor> = self
            .kernels
            .iter()
            .zip(&self.biases)
            .flat_map(|(k, b)| [k, b])
            .collect();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Encoding("weights file truncated".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let read_u32 = |pos: &mut usize| -> Result<u32> {
            let s = take(pos, 4)?;
            Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        };

        if take(&mut pos, 4)? != WEIGHTS_MAGIC {
            return Err(Error::Encoding("bad weights magic, expected LCD1".into()));
        }
        let count = read_u32(&mut pos)? as usize;
        if count != 10 {
            return Err(Error::Encoding(format!(
                "weights file has {count} tensors, detector expects 10"
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = read_u32(&mut pos)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut pos)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let s = take(&mut pos, 4)?;
                data.push(f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64);
            }
            tensors.push(Tensor::new(shape, data)?);
        }
        if pos != bytes.len() {
            return Err(Error::Encoding("trailing bytes in weights file".into()));
        }

        let reference = DetectorModel::init(0);
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        for (i, pair) in tensors.chunks(2).enumerate() {
            if pair[0].shape() != reference.kernels[i].shape()
                || pair[1].shape() != reference.biases[i].shape()
            {
                return Err(Error::Encoding(format!(
                    "layer {i} shape mismatch: {:?}/{:?}",
                    pair[0].shape(),
                    pair[1].shape()
                )));
            }
            kernels.push(pair[0].clone());
            biases.push(pair[1].clone());
        }
        Ok(DetectorModel {
            kernels,
            biases,
            version: 1,
        })
    }
}

fn rand_kernel(rng: &mut Rng, cout: usize, cin: usize, k: usize) -> Tensor {
    // He-uniform: bound = sqrt(6 / fan_in)
    let fan_in = (cin * k * k) as f64;
    let bound = crate::math::sqrt(6.0 / fan_in);
    let data: Vec<f64> = (0..cout * cin * k * k)
        .map(|_| rng.uniform(-bound, bound))
        .collect();
    Tensor::new(vec![cout, cin, k, k], data).expect("finite init")
}

/// Recorded forward pass: keeps the tape alive so confidences can be
/// back-propagated to the input image. Single use.
pub struct ForwardPass {
    tape: Tape,
    image_node: NodeId,
    sig_node: NodeId,
    grid: usize,
    pub detections: Vec<Detection>,
    consumed: bool,
}

impl ForwardPass {
    pub fn grid(&self) -> usize {
        self.grid
    }

    /// Flat index of a cell's confidence inside the sigmoid output tensor.
    pub fn confidence_index(&self, cell: (usize, usize)) -> usize {
        let s = self.grid;
        4 * s * s + cell.0 * s + cell.1
    }

    /// Sigmoid output value at a flat index (for loss bookkeeping).
    pub fn sigmoid_value(&self, flat: usize) -> f64 {
        self.tape.value(self.sig_node).data()[flat]
    }

    /// Back-propagate seeds placed on sigmoid outputs (usually selected
    /// confidences) down to the input image. Consumes the pass; a second
    /// call is a state error.
    pub fn backward_to_image(&mut self, seeds: &[(usize, f64)]) -> Result<Tensor> {
        if self.consumed {
            return Err(Error::State("forward pass already back-propagated".into()));
        }
        self.consumed = true;
        let n = self.tape.value(self.sig_node).len();
        let mut seed = vec![0.0; n];
        for &(idx, g) in seeds {
            if idx >= n {
                return Err(Error::Index(format!(
                    "sigmoid index {idx} out of range {n}"
                )));
            }
            seed[idx] += g;
        }
        self.tape.backward_seeded(self.sig_node, &seed)?;
        Ok(self.tape.grad(self.image_node).clone())
    }
}

/// Run the detector; returns all `S*S` detections plus the recorded tape.
/// Thresholding is the caller's concern.
pub fn forward(model: &DetectorModel, image: &Tensor) -> Result<ForwardPass> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 || shape[1] != shape[2] {
        return Err(Error::Dimension(format!(
            "detector wants a square [3,H,H] image, got {shape:?}"
        )));
    }
    let image_size = shape[1];
    let grid = DetectorModel::grid_size(image_size)?;
    for &v in image.data() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("image channel {v} outside [0,1]")));
        }
    }

    let mut tape = Tape::new();
    let image_node = tape.leaf(image.clone())?;
    let mut x = image_node;
    for l in 0..4 {
        let k = tape.leaf(model.kernels[l].clone())?;
        let b = tape.leaf(model.biases[l].clone())?;
        let conv = tape.conv2d(x, k, Some(b), 2, 1)?;
        x = tape.leaky_relu(conv, LEAKY_SLOPE)?;
    }
    let hk = tape.leaf(model.kernels[4].clone())?;
    let hb = tape.leaf(model.biases[4].clone())?;
    let head = tape.conv2d(x, hk, Some(hb), 1, 0)?;
    let sig_node = tape.sigmoid(head)?;

    let sig = tape.value(sig_node).data();
    let s = grid;
    let sf = s as f64;
    let mut detections = Vec::with_capacity(s * s);
    for row in 0..s {
        for col in 0..s {
            let at = |ch: usize| sig[(ch * s + row) * s + col];
            detections.push(Detection {
                bbox: BoundingBox {
                    cx: (col as f64 + at(0)) / sf,
                    cy: (row as f64 + at(1)) / sf,
                    w: at(2),
                    h: at(3),
                },
                confidence: at(4),
                cell: (row, col),
            });
        }
    }

    Ok(ForwardPass {
        tape,
        image_node,
        sig_node,
        grid,
        detections,
        consumed: false,
    })
}

/// Detections above `threshold`; an empty result means the person was
/// missed.
pub fn detect(model: &DetectorModel, image: &Tensor, threshold: f64) -> Result<Vec<Detection>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Domain(format!("threshold {threshold} not in (0,1)")));
    }
    let pass = forward(model, image)?;
    Ok(pass
        .detections
        .into_iter()
        .filter(|d| d.confidence > threshold)
        .collect())
}

// ── trainer ──

/// One synthetic training scene: image plus the person box, if any.
#[derive(Debug, Clone)]
pub struct LabeledScene {
    pub image: Tensor,
    pub truth: Option<BoundingBox>,
}

/// Per-epoch trainer bookkeeping plus final held-out metrics.
#[derive(Debug, Clone)]
pub struct DetectorMetrics {
    pub epoch_loss: Vec<f64>,
    pub epoch_recall: Vec<f64>,
    pub epoch_fp_rate: Vec<f64>,
    pub recall: f64,
    pub fp_rate: f64,
    pub threshold: f64,
    pub train_count: usize,
    pub holdout_count: usize,
}

const TRAIN_BATCH: usize = 16;
/// Absolute BCE weight of the one positive cell.
const POSITIVE_CELL_WEIGHT: f64 = 1.0;
/// Total BCE weight shared by the negative cells of one image; kept well
/// above the positive weight so spurious firings stay expensive and the
/// per-image false-positive rate can reach a few percent.
const NEGATIVE_IMAGE_WEIGHT: f64 = 4.0;
const BOX_LOSS_WEIGHT: f64 = 0.5;
const METRIC_THRESHOLD: f64 = 0.6;

/// Supervised trainer: binary cross-entropy on cell confidences (the cell
/// containing the truth box center is positive) plus squared error on the
/// sigmoid box params of positive cells. Adam, deterministic shuffling,
/// last 20% of the dataset held out for recall/false-positive metrics
/// (the whole set when it is too small to split).
pub fn train_detector(
    model: &DetectorModel,
    dataset: &[LabeledScene],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(DetectorModel, DetectorMetrics)> {
    if dataset.is_empty() {
        return Err(Error::Domain("empty detector training dataset".into()));
    }
    let holdout = dataset.len() / 5;
    let (train, held) = dataset.split_at(dataset.len() - holdout);
    let eval_set: &[LabeledScene] = if held.is_empty() { train } else { held };

    let mut trained = model.clone();
    let mut metrics = DetectorMetrics {
        epoch_loss: Vec::new(),
        epoch_recall: Vec::new(),
        epoch_fp_rate: Vec::new(),
        recall: 0.0,
        fp_rate: 0.0,
        threshold: METRIC_THRESHOLD,
        train_count: train.len(),
        holdout_count: eval_set.len(),
    };
    if epochs == 0 {
        let (r, f) = recall_and_fp(&trained, eval_set, METRIC_THRESHOLD)?;
        metrics.recall = r;
        metrics.fp_rate = f;
        return Ok((trained, metrics));
    }

    let mut params = trained.flat_params();
    let mut adam_m = vec![0.0; params.len()];
    let mut adam_v = vec![0.0; params.len()];
    let mut adam_t = 0u32;
    let shuffle_rng = Rng::seeded(seed).split(0x7368756666); // "shuff" stream

    for epoch in 0..epochs {
        // settle into the optimum: one step decay at two thirds of training
        let lr_now = if epoch * 3 >= epochs * 2 { lr * 0.2 } else { lr };
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut er = shuffle_rng.split(epoch as u64);
        for i in (1..order.len()).rev() {
            order.swap(i, er.below(i + 1));
        }

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(TRAIN_BATCH) {
            let mut grad_acc = vec![0.0; params.len()];
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let scene = &train[idx];
                let (loss, grads) = scene_loss_and_grads(&trained, scene)?;
                batch_loss += loss;
                for (a, g) in grad_acc.iter_mut().zip(&grads) {
                    *a += g;
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            epoch_loss += batch_loss;
            adam_t += 1;
            let bc1 = 1.0 - crate::math::powi(0.9, adam_t as i32);
            let bc2 = 1.0 - crate::math::powi(0.999, adam_t as i32);
            for i in 0..params.len() {
                let g = grad_acc[i] * inv;
                adam_m[i] = 0.9 * adam_m[i] + 0.1 * g;
                adam_v[i] = 0.999 * adam_v[i] + 0.001 * g * g;
                let mh = adam_m[i] / bc1;
                let vh = adam_v[i] / bc2;
                params[i] -= lr_now * mh / (crate::math::sqrt(vh) + 1e-8);
            }
            trained.set_flat_params(&params)?;
        }
        metrics.epoch_loss.push(epoch_loss / train.len() as f64);
        let (r, f) = recall_and_fp(&trained, eval_set, METRIC_THRESHOLD)?;
        metrics.epoch_recall.push(r);
        metrics.epoch_fp_rate.push(f);
    }

    metrics.recall = *metrics.epoch_recall.last().unwrap();
    metrics.fp_rate = *metrics.epoch_fp_rate.last().unwrap();
    Ok((trained, metrics))
}

/// Image-level recall and false-positive rate at a confidence threshold:
/// a positive scene counts as detected when any detection clears the
/// threshold; a negative scene counts as a false positive likewise.
pub fn recall_and_fp(
    model: &DetectorModel,
    scenes: &[LabeledScene],
    threshold: f64,
) -> Result<(f64, f64)> {
    let mut pos = 0usize;
    let mut pos_hit = 0usize;
    let mut neg = 0usize;
    let mut neg_hit = 0usize;
    for scene in scenes {
        let hits = !detect(model, &scene.image, threshold)?.is_empty();
        if scene.truth.is_some() {
            pos += 1;
            if hits {
                pos_hit += 1;
            }
        } else {
            neg += 1;
            if hits {
                neg_hit += 1;
            }
        }
    }
    let recall = if pos == 0 {
        1.0
    } else {
        pos_hit as f64 / pos as f64
    };
    let fp = if neg == 0 {
        0.0
    } else {
        neg_hit as f64 / neg as f64
    };
    Ok((recall, fp))
}

fn scene_loss_and_grads(model: &DetectorModel, scene: &LabeledScene) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let image_node = tape.leaf(scene.image.clone())?;
    let mut weight_nodes = Vec::new();
    let mut x = image_node;
    for l in 0..4 {
        let k = tape.leaf(model.kernels[l].clone())?;
        let b = tape.leaf(model.biases[l].clone())?;
        weight_nodes.push((k, b));
        let conv = tape.conv2d(x, k, Some(b), 2, 1)?;
        x = tape.leaky_relu(conv, LEAKY_SLOPE)?;
    }
    let hk = tape.leaf(model.kernels[4].clone())?;
    let hb = tape.leaf(model.biases[4].clone())?;
    weight_nodes.push((hk, hb));
    let head = tape.conv2d(x, hk, Some(hb), 1, 0)?;

    let s = tape.value(head).shape()[1];
    let sf = s as f64;

    // confidence BCE over all cells
    let conf_indices: Vec<usize> = (0..s * s).map(|i| 4 * s * s + i).collect();
    let conf_logits = tape.gather(head, &conf_indices)?;
    let mut targets = vec![0.0; s * s];
    let mut weights = vec![NEGATIVE_IMAGE_WEIGHT / (s * s) as f64; s * s];
    let mut positive_cell = None;
    if let Some(truth) = &scene.truth {
        let col = ((truth.cx * sf) as usize).min(s - 1);
        let row = ((truth.cy * sf) as usize).min(s - 1);
        targets[row * s + col] = 1.0;
        weights[row * s + col] = POSITIVE_CELL_WEIGHT;
        positive_cell = Some((row, col));
    }
    let mut loss = tape.bce_with_logits(conf_logits, &targets, &weights)?;

    // box regression on the positive cell's sigmoid outputs
    if let (Some((row, col)), Some(truth)) = (positive_cell, &scene.truth) {
        let sig = tape.sigmoid(head)?;
        let box_idx: Vec<usize> = (0..4).map(|ch| (ch * s + row) * s + col).collect();
        let pred = tape.gather(sig, &box_idx)?;
        let t = [
            truth.cx * sf - col as f64,
            truth.cy * sf - row as f64,
            truth.w,
            truth.h,
        ];
        let diff = tape.offset(pred, &[-t[0], -t[1], -t[2], -t[3]])?;
        let sq = tape.mul(diff, diff)?;
        let se = tape.sum(sq)?;
        let weighted = tape.affine(se, BOX_LOSS_WEIGHT, 0.0)?;
        loss = tape.add(loss, weighted)?;
    }

    let loss_value = tape.value(loss).item();
    tape.backward_scalar(loss)?;

    let mut grads = Vec::new();
    for (k, b) in weight_nodes {
        grads.extend_from_slice(tape.grad(k).data());
        grads.extend_from_slice(tape.grad(b).data());
    }
    Ok((loss_value, grads))
}
