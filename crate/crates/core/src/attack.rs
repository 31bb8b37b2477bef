//! Adversarial objective and optimization loop: disappearance loss (max
//! confidence of boxes covering the person), total-variance smoothness on
//! the rendered logo pixels, and masked Adam updates of the logo texture
//! through the full differentiable chain.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::detector::{forward, Detection, DetectorModel};
use crate::error::{Error, Result};
use crate::logo::{apply_3d_mapping, backward_3d_mapping, build_2d_mapping, LogoTexture};
use crate::math;
use crate::mesh::MeshScene;
use crate::render::{
    augment_logo_texture, composite, composite_backward, render, render_backward, AugmentParams,
    BoundingBox, Camera, RenderOutput,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A predicted box "contains the person" when its IoU with the rendered
/// person rectangle clears this threshold.
pub const QUALIFY_IOU: f64 = 0.1;

/// Hyperparameters of one attack run. Defaults follow the reference
/// training recipe: λ_DIS 1, λ_TV 2.5, Adam at lr 0.03 decaying 10x every
/// 50 epochs, background batches of 8, one mesh at a time.
#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub lambda_dis: f64,
    pub lambda_tv: f64,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub epochs: usize,
    pub background_batch: usize,
    pub mesh_batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub views: Vec<Camera>,
    pub threshold: f64,
}

impl AttackConfig {
    /// Single-angle defaults (100 epochs) at the given views.
    pub fn defaults(views: Vec<Camera>, seed: u64) -> Self {
        AttackConfig {
            lambda_dis: 1.0,
            lambda_tv: 2.5,
            lr0: 0.03,
            lr_decay: 0.1,
            lr_decay_every: 50,
            epochs: 100,
            background_batch: 8,
            mesh_batch: 1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed,
            views,
            threshold: 0.6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_dis < 0.0 || self.lambda_tv < 0.0 {
            return Err(Error::Domain("loss weights must be nonnegative".into()));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::Domain(format!("learning rate {}", self.lr0)));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Domain("lr_decay_every must be positive".into()));
        }
        if self.background_batch == 0 {
            return Err(Error::Domain("background batch must be positive".into()));
        }
        if self.mesh_batch != 1 {
            return Err(Error::Domain(
                "only mesh_batch = 1 is supported; meshes are visited sequentially".into(),
            ));
        }
        if self.views.is_empty() {
            return Err(Error::Domain("attack needs at least one view".into()));
        }
        for v in &self.views {
            v.validate()?;
        }
        Ok(())
    }
}

/// Step-decay schedule: `lr0 * decay^(epoch / every)`.
pub fn lr_schedule(epoch: usize, cfg: &AttackConfig) -> f64 {
    cfg.lr0 * math::powi(cfg.lr_decay, (epoch / cfg.lr_decay_every) as i32)
}

/// Max confidence among detections whose box overlaps the person rectangle
/// (IoU > 0.1); falls back to the global max when nothing qualifies, and to
/// 0 when there are no detections at all. Returns the winning detection's
/// index so the gradient can be routed to exactly that confidence.
pub fn disappearance_loss(
    detections: &[Detection],
    person_rect: Option<&BoundingBox>,
) -> (f64, Option<usize>) {
    if detections.is_empty() {
        return (0.0, None);
    }
    let mut best: Option<usize> = None;
    if let Some(rect) = person_rect {
        for (i, d) in detections.iter().enumerate() {
            if d.bbox.iou(rect) > QUALIFY_IOU {
                let better = match best {
                    None => true,
                    Some(b) => d.confidence > detections[b].confidence,
                };
                if better {
                    best = Some(i);
                }
            }
        }
    }
    if best.is_none() {
        let mut idx = 0;
        for (i, d) in detections.iter().enumerate() {
            if d.confidence > detections[idx].confidence {
                idx = i;
            }
        }
        best = Some(idx);
    }
    let i = best.unwrap();
    (detections[i].confidence, Some(i))
}

/// Total variance of the rendered logo pixels, Σ |right-neighbor diff| +
/// |down-neighbor diff| over RGB, counting a term only when both pixels are
/// inside the logo mask.
pub fn tv_loss(out: &RenderOutput) -> f64 {
    tv_loss_with_grad(out).0
}

/// TV value plus its subgradient with respect to the rendered pixels
/// (sign routing; zero at zero differences).
pub fn tv_loss_with_grad(out: &RenderOutput) -> (f64, Vec<[f64; 3]>) {
    let size = out.size;
    let mut total = 0.0;
    let mut grad = vec![[0.0; 3]; size * size];
    let pair = |p: usize, q: usize, total: &mut f64, grad: &mut Vec<[f64; 3]>| {
        for ch in 0..3 {
            let d = out.rgb[p][ch] - out.rgb[q][ch];
            *total += math::abs(d);
            if d > 0.0 {
                grad[p][ch] += 1.0;
                grad[q][ch] -= 1.0;
            } else if d < 0.0 {
                grad[p][ch] -= 1.0;
                grad[q][ch] += 1.0;
            }
        }
    };
    for r in 0..size {
        for c in 0..size {
            let p = r * size + c;
            if !out.logo_mask[p] {
                continue;
            }
            if c + 1 < size && out.logo_mask[p + 1] {
                pair(p, p + 1, &mut total, &mut grad);
            }
            if r + 1 < size && out.logo_mask[p + size] {
                pair(p + size, p, &mut total, &mut grad);
            }
        }
    }
    (total, grad)
}

/// Combined objective: `λ_DIS * dis + λ_TV * tv`.
pub fn total_loss(dis: f64, tv: f64, cfg: &AttackConfig) -> f64 {
    cfg.lambda_dis * dis + cfg.lambda_tv * tv
}

/// Adam moments shaped like the logo texture.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<[f64; 3]>,
    v: Vec<[f64; 3]>,
    pub step: u64,
}

impl AdamState {
    pub fn new(texture: &LogoTexture) -> Self {
        AdamState {
            m: vec![[0.0; 3]; texture.pixels.len()],
            v: vec![[0.0; 3]; texture.pixels.len()],
            step: 0,
        }
    }
}

/// One masked Adam update with bias correction; updated pixels are clamped
/// to [0,1] and out-of-mask pixels never move. NaN/Inf gradients abort.
pub fn adam_step(
    texture: &mut LogoTexture,
    grad: &[[f64; 3]],
    state: &mut AdamState,
    lr: f64,
    cfg: &AttackConfig,
) -> Result<()> {
    if grad.len() != texture.pixels.len() || state.m.len() != texture.pixels.len() {
        return Err(Error::Dimension(format!(
            "gradient has {} pixels, texture has {}",
            grad.len(),
            texture.pixels.len()
        )));
    }
    for g in grad {
        if !(g[0].is_finite() && g[1].is_finite() && g[2].is_finite()) {
            return Err(Error::NonFinite("texture gradient".into()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - math::powi(cfg.beta1, t);
    let bc2 = 1.0 - math::powi(cfg.beta2, t);
    for (i, px) in texture.pixels.iter_mut().enumerate() {
        if !texture.mask[i] {
            continue;
        }
        for ch in 0..3 {
            let g = grad[i][ch];
            state.m[i][ch] = cfg.beta1 * state.m[i][ch] + (1.0 - cfg.beta1) * g;
            state.v[i][ch] = cfg.beta2 * state.v[i][ch] + (1.0 - cfg.beta2) * g * g;
            let mh = state.m[i][ch] / bc1;
            let vh = state.v[i][ch] / bc2;
            px[ch] = (px[ch] - lr * mh / (math::sqrt(vh) + cfg.epsilon)).clamp(0.0, 1.0);
        }
    }
    Ok(())
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_dis: f64,
    pub mean_tv: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_dis,mean_tv,total,lr\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.mean_dis, e.mean_tv, e.total, e.lr
            ));
        }
        out
    }
}

/// Pack a row-major RGB image into a `[3,H,W]` tensor.
pub fn rgb_to_tensor(pixels: &[[f64; 3]], size: usize) -> Result<Tensor> {
    if pixels.len() != size * size {
        return Err(Error::Dimension(format!(
            "{} pixels for a {size}x{size} image",
            pixels.len()
        )));
    }
    let mut data = vec![0.0; 3 * size * size];
    for (p, px) in pixels.iter().enumerate() {
        for ch in 0..3 {
            data[ch * size * size + p] = px[ch];
        }
    }
    Tensor::new(vec![3, size, size], data)
}

/// Unpack a `[3,H,W]` gradient tensor into row-major RGB pixels.
pub fn tensor_to_rgb(grad: &Tensor, size: usize) -> Result<Vec<[f64; 3]>> {
    if grad.shape() != [3, size, size] {
        return Err(Error::Dimension(format!(
            "expected [3,{size},{size}] tensor, got {:?}",
            grad.shape()
        )));
    }
    let d = grad.data();
    Ok((0..size * size)
        .map(|p| {
            [
                d[p],
                d[size * size + p],
                d[2 * size * size + p],
            ]
        })
        .collect())
}

/// Optimize the logo texture against a frozen detector over every
/// (mesh, view, background batch) combination per epoch.
///
/// Each step: draw fresh augmentation, recolor the logo faces, render once,
/// composite against each background in the batch, run the detector, select
/// the disappearance confidence, and push `λ_DIS * mean(batch)` detector
/// gradients plus `λ_TV *` TV gradients through the renderer and the logo
/// transformation back to the texture, then take one masked Adam step.
pub fn run_attack(
    scene: &mut MeshScene,
    texture: &LogoTexture,
    backgrounds: &[Vec<[f64; 3]>],
    detector: &DetectorModel,
    cfg: &AttackConfig,
) -> Result<(LogoTexture, TrainReport)> {
    run_attack_observed(scene, texture, backgrounds, detector, cfg, &mut |_, _, _| {})
}

/// [`run_attack`] with a per-epoch observer (snapshotting, progress logs).
pub fn run_attack_observed(
    scene: &mut MeshScene,
    texture: &LogoTexture,
    backgrounds: &[Vec<[f64; 3]>],
    detector: &DetectorModel,
    cfg: &AttackConfig,
    on_epoch: &mut dyn FnMut(usize, &LogoTexture, &EpochStats),
) -> Result<(LogoTexture, TrainReport)> {
    cfg.validate()?;
    if backgrounds.is_empty() {
        return Err(Error::Domain("attack needs at least one background".into()));
    }
    let size = cfg.views[0].image_size;
    for v in &cfg.views {
        if v.image_size != size {
            return Err(Error::Dimension("views disagree on image size".into()));
        }
    }
    for bg in backgrounds {
        if bg.len() != size * size {
            return Err(Error::Dimension(format!(
                "background has {} pixels, frames are {size}x{size}",
                bg.len()
            )));
        }
    }

    let maps: Vec<_> = scene
        .items
        .iter()
        .map(|item| build_2d_mapping(&item.logo, texture))
        .collect::<Result<_>>()?;

    let mut tex = texture.clone();
    let mut adam = AdamState::new(&tex);
    let mut report = TrainReport::default();
    let root = Rng::seeded(cfg.seed);
    let mut step_counter: u64 = 0;

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        let mut dis_sum = 0.0;
        let mut dis_count = 0usize;
        let mut tv_sum = 0.0;
        let mut tv_count = 0usize;

        for mi in 0..scene.items.len() {
            for view in &cfg.views {
                for batch in backgrounds.chunks(cfg.background_batch) {
                    let params = AugmentParams::draw(&mut root.split(step_counter));
                    step_counter += 1;

                    let (aug_tex, aug_tape) = augment_logo_texture(&tex, &params)?;
                    let item = &mut scene.items[mi];
                    apply_3d_mapping(&aug_tex, &maps[mi], &item.logo, &mut item.mesh)?;
                    let out = render(&item.mesh, &item.logo, view)?;
                    let person = out.person_rect();

                    let mut pix_grad = vec![[0.0; 3]; size * size];
                    let inv_batch = 1.0 / batch.len() as f64;
                    for bg in batch {
                        let img = composite(&out, bg)?;
                        let tensor = rgb_to_tensor(&img, size)?;
                        let mut pass = forward(detector, &tensor)?;
                        let (dis, pick) =
                            disappearance_loss(&pass.detections, person.as_ref());
                        dis_sum += dis;
                        dis_count += 1;
                        if let Some(p) = pick {
                            let idx = pass.confidence_index(pass.detections[p].cell);
                            let seed = cfg.lambda_dis * inv_batch;
                            let img_grad = pass.backward_to_image(&[(idx, seed)])?;
                            let rgb_grad = tensor_to_rgb(&img_grad, size)?;
                            let masked = composite_backward(&rgb_grad, &out)?;
                            for (a, g) in pix_grad.iter_mut().zip(&masked) {
                                a[0] += g[0];
                                a[1] += g[1];
                                a[2] += g[2];
                            }
                        }
                    }

                    let (tv, tv_grad) = tv_loss_with_grad(&out);
                    tv_sum += tv;
                    tv_count += 1;
                    for (a, g) in pix_grad.iter_mut().zip(&tv_grad) {
                        a[0] += cfg.lambda_tv * g[0];
                        a[1] += cfg.lambda_tv * g[1];
                        a[2] += cfg.lambda_tv * g[2];
                    }

                    let item = &scene.items[mi];
                    let face_grads =
                        render_backward(&pix_grad, &out, item.mesh.faces.len())?;
                    let logo_grads: Vec<[f64; 3]> = item
                        .logo
                        .face_ids
                        .iter()
                        .map(|&fid| face_grads[fid])
                        .collect();
                    let aug_grad = backward_3d_mapping(&maps[mi], &item.logo, &logo_grads)?;
                    let tex_grad = aug_tape.backward(&aug_grad)?;
                    adam_step(&mut tex, &tex_grad, &mut adam, lr, cfg)?;
                }
            }
        }

        let mean_dis = if dis_count > 0 {
            dis_sum / dis_count as f64
        } else {
            0.0
        };
        let mean_tv = if tv_count > 0 {
            tv_sum / tv_count as f64
        } else {
            0.0
        };
        let stats = EpochStats {
            epoch,
            mean_dis,
            mean_tv,
            total: total_loss(mean_dis, mean_tv, cfg),
            lr,
        };
        on_epoch(epoch, &tex, &stats);
        report.epochs.push(stats);
    }
    Ok((tex, report))
}
