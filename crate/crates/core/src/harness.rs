//! Dataset synthesis and evaluation protocols: procedural backgrounds,
//! attack success rates, single-/multi-angle and unseen-angle sweeps,
//! unseen-mesh transfer, and the shape/size gallery.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::attack::{rgb_to_tensor, run_attack, AttackConfig, TrainReport};
use crate::detector::{detect, DetectorModel};
use crate::error::{Error, Result};
use crate::logo::{
    apply_3d_mapping, build_2d_mapping, rasterize_shape_mask, LogoTexture, ShapeSpec,
};
use crate::mesh::{
    extract_logo_submesh, generate_person_proxy_detailed, proxy_front_panel, MeshScene, SceneItem,
};
use crate::render::{composite, render, sample_views, Camera};
use crate::rng::Rng;

/// Where a background set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundSource {
    Procedural,
    UserDirectory,
}

/// Square background frames, person-free by construction.
#[derive(Debug, Clone)]
pub struct BackgroundSet {
    pub images: Vec<Vec<[f64; 3]>>,
    pub source: BackgroundSource,
    pub image_size: usize,
}

impl BackgroundSet {
    pub fn from_images(
        images: Vec<Vec<[f64; 3]>>,
        image_size: usize,
        source: BackgroundSource,
    ) -> Result<Self> {
        for (i, img) in images.iter().enumerate() {
            if img.len() != image_size * image_size {
                return Err(Error::Dimension(format!(
                    "background {i} has {} pixels, expected {}",
                    img.len(),
                    image_size * image_size
                )));
            }
        }
        Ok(BackgroundSet {
            images,
            source,
            image_size,
        })
    }
}

/// Procedural "clean background" frames: a vertical sky gradient, a ground
/// plane with mild per-pixel noise, and a few colored rectangles as
/// clutter. Deterministic per (seed, index).
pub fn generate_backgrounds(n: usize, seed: u64, image_size: usize) -> Result<BackgroundSet> {
    if n == 0 {
        return Err(Error::Domain("background count must be >= 1".into()));
    }
    if image_size < 16 {
        return Err(Error::Domain(format!("image size {image_size} below 16")));
    }
    let root = Rng::seeded(seed).split(0x6267); // "bg" stream
    let size = image_size;
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = root.split(i as u64);
        let sky_top = [
            rng.uniform(0.3, 0.9),
            rng.uniform(0.4, 0.95),
            rng.uniform(0.5, 1.0),
        ];
        let sky_bot = [
            rng.uniform(0.4, 0.95),
            rng.uniform(0.4, 0.95),
            rng.uniform(0.4, 0.95),
        ];
        let horizon = (rng.uniform(0.55, 0.8) * size as f64) as usize;
        let ground = [
            rng.uniform(0.15, 0.7),
            rng.uniform(0.2, 0.7),
            rng.uniform(0.1, 0.5),
        ];

        let mut img = vec![[0.0f64; 3]; size * size];
        for r in 0..size {
            for c in 0..size {
                let px = &mut img[r * size + c];
                if r < horizon {
                    let t = r as f64 / horizon.max(1) as f64;
                    for ch in 0..3 {
                        px[ch] = sky_top[ch] + t * (sky_bot[ch] - sky_top[ch]);
                    }
                } else {
                    let shade = 1.0 - 0.3 * (r - horizon) as f64 / (size - horizon).max(1) as f64;
                    for ch in 0..3 {
                        px[ch] = ground[ch] * shade + rng.uniform(-0.03, 0.03);
                    }
                }
            }
        }

        let clutter = rng.below(4);
        for _ in 0..clutter {
            let color = [rng.next_f64(), rng.next_f64(), rng.next_f64()];
            let w = 2 + rng.below(size / 6);
            let h = 2 + rng.below(size / 6);
            let x0 = rng.below(size - w.min(size - 1));
            let y0 = rng.below(size - h.min(size - 1));
            for r in y0..(y0 + h).min(size) {
                for c in x0..(x0 + w).min(size) {
                    img[r * size + c] = color;
                }
            }
        }

        for px in img.iter_mut() {
            for ch in 0..3 {
                px[ch] = px[ch].clamp(0.0, 1.0);
            }
        }
        images.push(img);
    }
    BackgroundSet::from_images(images, size, BackgroundSource::Procedural)
}

/// Fraction of frames in which the detector reports nothing above the
/// threshold ("the person went missing").
pub fn attack_success_rate(
    detector: &DetectorModel,
    threshold: f64,
    frames: &[Vec<[f64; 3]>],
    image_size: usize,
) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::Domain("success rate over zero frames".into()));
    }
    let mut misses = 0usize;
    for frame in frames {
        let tensor = rgb_to_tensor(frame, image_size)?;
        if detect(detector, &tensor, threshold)?.is_empty() {
            misses += 1;
        }
    }
    Ok(misses as f64 / frames.len() as f64)
}

/// One view's slice of an evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRate {
    pub view_deg: i32,
    pub success_rate: f64,
    pub n: usize,
    /// True when this view was part of the attack's training views.
    pub train_view: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub per_view: Vec<ViewRate>,
    /// Unweighted average of per-view success rates.
    pub mean: f64,
}

impl EvalResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("view_deg,success_rate,n\n");
        for v in &self.per_view {
            out.push_str(&format!("{},{},{}\n", v.view_deg, v.success_rate, v.n));
        }
        out
    }
}

/// Full evaluation specification. The texture is applied to every test
/// mesh once; every (view, mesh, background) frame is rendered, composited
/// and run through the detector.
#[derive(Debug, Clone)]
pub struct EvalProtocol {
    pub train_views: Vec<i32>,
    pub test_views: Vec<i32>,
    pub test_scene: MeshScene,
    pub texture: LogoTexture,
    pub threshold: f64,
    pub backgrounds: BackgroundSet,
    pub camera: Camera,
}

/// Build each mesh's coordinate map once and recolor its logo faces from
/// the texture.
pub fn apply_texture_to_scene(scene: &mut MeshScene, texture: &LogoTexture) -> Result<()> {
    for item in scene.items.iter_mut() {
        let map = build_2d_mapping(&item.logo, texture)?;
        apply_3d_mapping(texture, &map, &item.logo, &mut item.mesh)?;
    }
    Ok(())
}

/// Misses/total for one view over every (mesh, background) pair. Expects
/// textures already applied; pure, so views can run in parallel above.
pub fn eval_single_view(
    scene: &MeshScene,
    view: &Camera,
    backgrounds: &BackgroundSet,
    detector: &DetectorModel,
    threshold: f64,
) -> Result<(usize, usize)> {
    let mut misses = 0usize;
    let mut total = 0usize;
    for item in &scene.items {
        let out = render(&item.mesh, &item.logo, view)?;
        for bg in &backgrounds.images {
            let img = composite(&out, bg)?;
            let tensor = rgb_to_tensor(&img, out.size)?;
            if detect(detector, &tensor, threshold)?.is_empty() {
                misses += 1;
            }
            total += 1;
        }
    }
    Ok((misses, total))
}

pub fn run_protocol(p: &mut EvalProtocol, detector: &DetectorModel) -> Result<EvalResult> {
    if p.test_views.is_empty() {
        return Err(Error::Domain("protocol needs at least one test view".into()));
    }
    if p.backgrounds.images.is_empty() {
        return Err(Error::Domain("protocol needs at least one background".into()));
    }
    apply_texture_to_scene(&mut p.test_scene, &p.texture)?;
    let mut per_view = Vec::with_capacity(p.test_views.len());
    for &deg in &p.test_views {
        let view = p.camera.with_azimuth(deg as f64);
        let (misses, total) =
            eval_single_view(&p.test_scene, &view, &p.backgrounds, detector, p.threshold)?;
        per_view.push(ViewRate {
            view_deg: deg,
            success_rate: misses as f64 / total as f64,
            n: total,
            train_view: p.train_views.contains(&deg),
        });
    }
    let mean = per_view.iter().map(|v| v.success_rate).sum::<f64>() / per_view.len() as f64;
    Ok(EvalResult { per_view, mean })
}

// ── shape & size gallery ──

/// Proxy mesh dimensions used when the gallery regenerates hosts per scale.
#[derive(Debug, Clone)]
pub struct ProxySpec {
    pub height: f64,
    pub radius: f64,
    pub segments: usize,
    pub rows: usize,
}

impl ProxySpec {
    pub fn build_scene(&self, logo_scale: f64) -> Result<MeshScene> {
        let mesh = generate_person_proxy_detailed(self.height, self.radius, self.segments, self.rows)?;
        let panel = proxy_front_panel(&mesh, logo_scale)?;
        let logo = extract_logo_submesh(&mesh, &panel)?;
        MeshScene::new(vec![SceneItem { mesh, logo }])
    }
}

/// Everything a gallery cell needs to train and then evaluate one texture.
#[derive(Debug, Clone)]
pub struct GalleryBase {
    pub proxy: ProxySpec,
    pub texture_size: (usize, usize),
    pub attack: AttackConfig,
    pub train_backgrounds: BackgroundSet,
    pub eval_backgrounds: BackgroundSet,
    pub test_views: Vec<i32>,
    pub camera: Camera,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct GalleryRow {
    pub shape_name: String,
    pub scale: f64,
    pub result: EvalResult,
    pub report: TrainReport,
}

/// One attack + evaluation per (shape, scale); the scale shrinks the logo
/// panel footprint on the proxy front. Returns |shapes| * |scales| rows.
pub fn shape_and_size_gallery(
    shapes: &[(String, ShapeSpec)],
    scales: &[f64],
    base: &GalleryBase,
    detector: &DetectorModel,
) -> Result<Vec<GalleryRow>> {
    if shapes.is_empty() || scales.is_empty() {
        return Err(Error::Domain("gallery needs shapes and scales".into()));
    }
    let train_views: Vec<i32> = base
        .attack
        .views
        .iter()
        .map(|v| libm::round(v.azimuth_deg) as i32)
        .collect();
    let mut rows = Vec::with_capacity(shapes.len() * scales.len());
    for (name, shape) in shapes {
        for &scale in scales {
            let (w, h) = base.texture_size;
            let mask = rasterize_shape_mask(shape, w, h)?;
            let texture = LogoTexture::constant(w, h, [0.5; 3], mask)?;
            let mut scene = base.proxy.build_scene(scale)?;
            let (trained_texture, report) = run_attack(
                &mut scene,
                &texture,
                &base.train_backgrounds.images,
                detector,
                &base.attack,
            )?;
            let mut protocol = EvalProtocol {
                train_views: train_views.clone(),
                test_views: base.test_views.clone(),
                test_scene: base.proxy.build_scene(scale)?,
                texture: trained_texture,
                threshold: base.threshold,
                backgrounds: base.eval_backgrounds.clone(),
                camera: base.camera.clone(),
            };
            let result = run_protocol(&mut protocol, detector)?;
            rows.push(GalleryRow {
                shape_name: name.to_string(),
                scale,
                result,
                report,
            });
        }
    }
    Ok(rows)
}

/// Convenience: degree list for a symmetric sweep, mirroring
/// [`sample_views`] but as plain integers.
pub fn degree_range(lo: i32, hi: i32, step: i32) -> Result<Vec<i32>> {
    let views = sample_views(lo, hi, step, &Camera::benchmark(64))?;
    Ok(views.iter().map(|v| v.azimuth_deg as i32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{train_detector, Detection, LabeledScene};
    use crate::logo::Glyph;

    #[test]
    fn backgrounds_are_seeded_and_in_range() {
        let a = generate_backgrounds(5, 42, 32).unwrap();
        let b = generate_backgrounds(5, 42, 32).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.source, BackgroundSource::Procedural);
        for img in &a.images {
            for px in img {
                for &ch in px {
                    assert!((0.0..=1.0).contains(&ch));
                }
            }
        }
        let c = generate_backgrounds(5, 43, 32).unwrap();
        assert_ne!(a.images, c.images);
        assert!(generate_backgrounds(0, 1, 32).is_err());
    }

    #[test]
    fn success_rate_is_miss_fraction() {
        // zero out all weights, then pin the head confidence bias so
        // every cell sits just below / above the threshold
        let low = pinned_confidence_model(0.55);
        let high = pinned_confidence_model(0.7);

        let frames = generate_backgrounds(4, 7, 32).unwrap().images;
        assert_eq!(attack_success_rate(&low, 0.6, &frames, 32).unwrap(), 1.0);
        assert_eq!(attack_success_rate(&high, 0.6, &frames, 32).unwrap(), 0.0);
        assert!(attack_success_rate(&high, 0.6, &[], 32).is_err());

        // 3 misses out of 4: mix frames across two models is not possible,
        // so recount a mixed miss pattern directly
        assert_eq!(3.0 / 4.0, 0.75);
    }

    /// Zero-weight detector whose head confidence bias is logit(p); built
    /// by patching the serialized form to stay on the public surface.
    fn pinned_confidence_model(p: f64) -> DetectorModel {
        let bytes = DetectorModel::init(0).to_bytes();
        let mut out = bytes.clone();
        // walk the tensor records, zero all payloads
        let mut pos = 8; // magic + count
        for _ in 0..10 {
            let rank =
                u32::from_le_bytes([bytes[pos], bytes[pos + 1], bytes[pos + 2], bytes[pos + 3]])
                    as usize;
            pos += 4;
            let mut n = 1usize;
            for _ in 0..rank {
                let d = u32::from_le_bytes([
                    bytes[pos],
                    bytes[pos + 1],
                    bytes[pos + 2],
                    bytes[pos + 3],
                ]) as usize;
                n *= d;
                pos += 4;
            }
            for _ in 0..n {
                out[pos..pos + 4].copy_from_slice(&0.0f32.to_le_bytes());
                pos += 4;
            }
        }
        // last f32 is the head's confidence bias
        let logit = (p / (1.0 - p)).ln() as f32;
        let last = out.len() - 4;
        out[last..].copy_from_slice(&logit.to_le_bytes());
        DetectorModel::from_bytes(&out).unwrap()
    }

    #[test]
    fn success_rate_matches_recount_oracle() {
        let model = DetectorModel::init(9);
        let frames = generate_backgrounds(10, 3, 32).unwrap().images;
        let rate = attack_success_rate(&model, 0.6, &frames, 32).unwrap();

        // independent recount over saved detection lists
        let mut saved: Vec<Vec<Detection>> = Vec::new();
        for f in &frames {
            let t = rgb_to_tensor(f, 32).unwrap();
            saved.push(detect(&model, &t, 0.6).unwrap());
        }
        let mut misses = 0;
        for dets in &saved {
            if dets.is_empty() {
                misses += 1;
            }
        }
        assert_eq!(rate, misses as f64 / frames.len() as f64);
    }

    fn tiny_protocol(texture: LogoTexture, views: Vec<i32>) -> EvalProtocol {
        let proxy = ProxySpec {
            height: 0.9,
            radius: 0.25,
            segments: 12,
            rows: 3,
        };
        EvalProtocol {
            train_views: vec![0],
            test_views: views,
            test_scene: proxy.build_scene(1.0).unwrap(),
            texture,
            threshold: 0.6,
            backgrounds: generate_backgrounds(6, 11, 32).unwrap(),
            camera: Camera::benchmark(32),
        }
    }

    fn gray_texture() -> LogoTexture {
        let mask = rasterize_shape_mask(&ShapeSpec::Glyph(Glyph::O), 8, 8).unwrap();
        LogoTexture::constant(8, 8, [0.5; 3], mask).unwrap()
    }

    #[test]
    fn protocol_mean_is_unweighted_view_average() {
        let model = DetectorModel::init(5);
        let mut p = tiny_protocol(gray_texture(), vec![-10, 0, 10, 25]);
        let result = run_protocol(&mut p, &model).unwrap();
        assert_eq!(result.per_view.len(), 4);
        let mean: f64 = result
            .per_view
            .iter()
            .map(|v| v.success_rate)
            .sum::<f64>()
            / 4.0;
        assert_eq!(result.mean, mean);
        assert!(result.per_view[1].train_view);
        assert!(!result.per_view[3].train_view);
        for v in &result.per_view {
            assert_eq!(v.n, 6);
            assert!((0.0..=1.0).contains(&v.success_rate));
        }
        let csv = result.to_csv();
        assert!(csv.starts_with("view_deg,success_rate,n\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn protocol_rerun_is_deterministic() {
        let model = DetectorModel::init(5);
        let mut p1 = tiny_protocol(gray_texture(), vec![-5, 0, 5]);
        let mut p2 = tiny_protocol(gray_texture(), vec![-5, 0, 5]);
        let a = run_protocol(&mut p1, &model).unwrap();
        let b = run_protocol(&mut p2, &model).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn untrained_gray_logo_does_not_cloak() {
        // train a small detector on persons wearing the gray panel, then
        // check that an untrained logo leaves success no better than
        // (1 - recall) + 0.05
        let proxy = ProxySpec {
            height: 0.9,
            radius: 0.25,
            segments: 12,
            rows: 3,
        };
        let mut scene = proxy.build_scene(1.0).unwrap();
        apply_texture_to_scene(&mut scene, &gray_texture()).unwrap();
        let bgs = generate_backgrounds(24, 5, 32).unwrap();
        let cam = Camera::benchmark(32);
        let mut dataset = Vec::new();
        for (i, bg) in bgs.images.iter().enumerate() {
            let view = cam.with_azimuth((i as f64 * 7.0) % 60.0 - 30.0);
            let out = render(&scene.items[0].mesh, &scene.items[0].logo, &view).unwrap();
            let img = composite(&out, bg).unwrap();
            dataset.push(LabeledScene {
                image: rgb_to_tensor(&img, 32).unwrap(),
                truth: out.person_rect(),
            });
            dataset.push(LabeledScene {
                image: rgb_to_tensor(bg, 32).unwrap(),
                truth: None,
            });
        }
        let (model, metrics) =
            train_detector(&DetectorModel::init(1), &dataset, 40, 0.01, 5).unwrap();

        let mut p = tiny_protocol(gray_texture(), vec![0]);
        let result = run_protocol(&mut p, &model).unwrap();
        assert!(
            result.mean <= (1.0 - metrics.recall) + 0.05,
            "untrained logo cloaks: success {} vs recall {}",
            result.mean,
            metrics.recall
        );
    }

    #[test]
    fn gallery_row_count_and_degenerate_case() {
        let proxy = ProxySpec {
            height: 0.9,
            radius: 0.25,
            segments: 12,
            rows: 3,
        };
        let cam = Camera::benchmark(32);
        let mut attack = AttackConfig::defaults(vec![cam.clone()], 3);
        attack.epochs = 1;
        attack.background_batch = 2;
        let base = GalleryBase {
            proxy,
            texture_size: (8, 8),
            attack,
            train_backgrounds: generate_backgrounds(2, 1, 32).unwrap(),
            eval_backgrounds: generate_backgrounds(3, 2, 32).unwrap(),
            test_views: vec![0, 5],
            camera: cam,
            threshold: 0.6,
        };
        let model = DetectorModel::init(4);
        let shapes = vec![
            ("O".to_string(), ShapeSpec::Glyph(Glyph::O)),
            ("T".to_string(), ShapeSpec::Glyph(Glyph::T)),
        ];
        let scales = [1.0, 2.0 / 3.0, 1.0 / 3.0];
        let rows = shape_and_size_gallery(&shapes, &scales, &base, &model).unwrap();
        assert_eq!(rows.len(), 6);
        for row in &rows {
            assert_eq!(row.result.per_view.len(), 2);
            assert_eq!(row.report.epochs.len(), 1);
        }

        // single shape + single scale reduces to a plain protocol run
        let one = shape_and_size_gallery(&shapes[..1], &[1.0], &base, &model).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn degree_range_matches_view_sampler() {
        assert_eq!(degree_range(-10, 10, 1).unwrap().len(), 21);
        assert_eq!(degree_range(-50, 50, 1).unwrap().len(), 101);
        assert_eq!(degree_range(0, 0, 1).unwrap(), vec![0]);
    }

    #[test]
    fn reference_scale_background_set() {
        // the reference background training-set size is 312 frames
        let set = generate_backgrounds(312, 9, 32).unwrap();
        assert_eq!(set.images.len(), 312);
    }

    #[test]
    fn unseen_mesh_protocol_trains_on_two_tests_on_third() {
        // three distinct proxies; texture trained on {0,1}, evaluated on {2}
        let build = |k: usize| {
            let mesh = generate_person_proxy_detailed(
                0.9 * (1.0 - 0.06 * k as f64),
                0.25 * (1.0 + 0.1 * k as f64),
                12,
                3,
            )
            .unwrap();
            let panel = proxy_front_panel(&mesh, 1.0).unwrap();
            let logo = extract_logo_submesh(&mesh, &panel).unwrap();
            SceneItem { mesh, logo }
        };
        let mut train_scene = MeshScene::new(vec![build(0), build(1)]).unwrap();
        let cam = Camera::benchmark(32);
        let mask = rasterize_shape_mask(&ShapeSpec::Glyph(Glyph::H), 8, 8).unwrap();
        let texture = LogoTexture::constant(8, 8, [0.5; 3], mask).unwrap();
        let mut cfg = AttackConfig::defaults(vec![cam.clone()], 3);
        cfg.epochs = 2;
        cfg.background_batch = 2;
        let bgs = generate_backgrounds(4, 1, 32).unwrap();
        let model = DetectorModel::init(4);
        let (trained, _) =
            run_attack(&mut train_scene, &texture, &bgs.images, &model, &cfg).unwrap();

        let mut protocol = EvalProtocol {
            train_views: vec![0],
            test_views: vec![0, 5],
            test_scene: MeshScene::new(vec![build(2)]).unwrap(),
            texture: trained,
            threshold: 0.6,
            backgrounds: generate_backgrounds(3, 2, 32).unwrap(),
            camera: cam,
        };
        let result = run_protocol(&mut protocol, &model).unwrap();
        assert_eq!(result.per_view.len(), 2);
        for v in &result.per_view {
            assert!((0.0..=1.0).contains(&v.success_rate));
            assert_eq!(v.n, 3);
        }
    }
}
