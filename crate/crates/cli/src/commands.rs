//! The four pipeline stages behind the CLI subcommands. Each stage is a
//! plain function over [`RunConfig`] so the acceptance tests can drive it
//! without spawning processes.

use std::fs;
use std::path::{Path, PathBuf};

use advlogo_core::attack::{run_attack_observed, AttackConfig};
use advlogo_core::detector::{detect, train_detector, DetectorModel, LabeledScene};
use advlogo_core::harness::{
    apply_texture_to_scene, eval_single_view, generate_backgrounds, run_protocol, BackgroundSet,
    BackgroundSource, EvalProtocol, EvalResult,
};
use advlogo_core::logo::{
    build_2d_mapping, rasterize_shape_mask, Glyph, LogoTexture, ShapeSpec,
};
use advlogo_core::mesh::{
    extract_logo_submesh, generate_person_proxy_detailed, parse_obj, proxy_front_panel, write_obj,
    MeshScene, SceneItem, TriMesh,
};
use advlogo_core::render::{composite, render, sample_views, Camera};
use advlogo_core::rng::Rng;
use advlogo_core::attack::rgb_to_tensor;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io;

// seed stream tags, one per stage
const STREAM_TRAIN_BG: u64 = 1;
const STREAM_TEST_BG: u64 = 2;
const STREAM_DETECTOR_BG: u64 = 3;
const STREAM_DETECTOR_SCENES: u64 = 4;
const STREAM_DETECTOR_INIT: u64 = 5;

fn stream_seed(root: u64, tag: u64) -> u64 {
    Rng::seeded(root).split(tag).next_u64()
}

pub fn base_camera(cfg: &RunConfig) -> Camera {
    Camera {
        azimuth_deg: 0.0,
        elevation_deg: cfg.elevation_deg,
        distance: cfg.camera_distance,
        fov_deg: cfg.fov_deg,
        image_size: cfg.image_size,
    }
}

fn shape_spec(cfg: &RunConfig) -> Result<ShapeSpec, CliError> {
    if let Some(path) = &cfg.mask_png {
        let (w, h, values) = io::read_gray_png(Path::new(path))?;
        return Ok(ShapeSpec::Bitmap {
            width: w,
            height: h,
            values,
        });
    }
    Glyph::from_name(&cfg.shape)
        .map(ShapeSpec::Glyph)
        .ok_or_else(|| {
            CliError::Config(format!(
                "unknown shape `{}`; expected one of G O C X T H raindrop twitter or a mask_png",
                cfg.shape
            ))
        })
}

fn build_mask(cfg: &RunConfig) -> Result<Vec<bool>, CliError> {
    let spec = shape_spec(cfg)?;
    Ok(rasterize_shape_mask(
        &spec,
        cfg.texture_width,
        cfg.texture_height,
    )?)
}

/// All configured host meshes with their logo face selections.
fn build_hosts(cfg: &RunConfig) -> Result<Vec<(TriMesh, Vec<usize>)>, CliError> {
    if !cfg.mesh_obj_paths.is_empty() {
        if cfg.logo_faces.len() != cfg.mesh_obj_paths.len() {
            return Err(CliError::Config(format!(
                "{} meshes but {} logo_faces lists",
                cfg.mesh_obj_paths.len(),
                cfg.logo_faces.len()
            )));
        }
        let mut hosts = Vec::new();
        for (path, faces) in cfg.mesh_obj_paths.iter().zip(&cfg.logo_faces) {
            let text = fs::read_to_string(path)?;
            let mesh = parse_obj(&text)?;
            hosts.push((mesh, faces.clone()));
        }
        return Ok(hosts);
    }
    if cfg.n_proxy_meshes == 0 {
        return Err(CliError::Config(
            "no meshes: set n_proxy_meshes or mesh_obj_paths".into(),
        ));
    }
    let mut hosts = Vec::new();
    for k in 0..cfg.n_proxy_meshes {
        // vary proportions so joint training sees distinct hosts
        let height = cfg.proxy_height * (1.0 - 0.06 * k as f64);
        let radius = cfg.proxy_radius * (1.0 + 0.10 * k as f64);
        let mesh =
            generate_person_proxy_detailed(height, radius, cfg.proxy_segments, cfg.proxy_rows)?;
        let panel = proxy_front_panel(&mesh, cfg.logo_scale)?;
        hosts.push((mesh, panel));
    }
    Ok(hosts)
}

fn select_scene(cfg: &RunConfig, indices: &[usize]) -> Result<MeshScene, CliError> {
    let hosts = build_hosts(cfg)?;
    let picks: Vec<usize> = if indices.is_empty() {
        (0..hosts.len()).collect()
    } else {
        indices.to_vec()
    };
    let mut items = Vec::new();
    for &i in &picks {
        let (mesh, faces) = hosts.get(i).ok_or_else(|| {
            CliError::Config(format!("mesh index {i} out of range ({})", hosts.len()))
        })?;
        let logo = extract_logo_submesh(mesh, faces)?;
        items.push(SceneItem {
            mesh: mesh.clone(),
            logo,
        });
    }
    Ok(MeshScene::new(items)?)
}

fn backgrounds_for(
    cfg: &RunConfig,
    n: usize,
    stream: u64,
) -> Result<BackgroundSet, CliError> {
    if let Some(dir) = &cfg.background_dir {
        let images = io::load_background_dir(Path::new(dir), cfg.image_size)?;
        return Ok(BackgroundSet::from_images(
            images,
            cfg.image_size,
            BackgroundSource::UserDirectory,
        )?);
    }
    Ok(generate_backgrounds(
        n,
        stream_seed(cfg.seed, stream),
        cfg.image_size,
    )?)
}

fn load_texture(cfg: &RunConfig, mask: Vec<bool>) -> Result<LogoTexture, CliError> {
    let path = match &cfg.texture_png {
        Some(p) => Some(PathBuf::from(p)),
        None => {
            let default = Path::new(&cfg.out_dir).join("texture.png");
            default.exists().then_some(default)
        }
    };
    match path {
        Some(p) => {
            let (w, h, pixels) = io::read_rgb_png(&p)?;
            if w != cfg.texture_width || h != cfg.texture_height {
                return Err(CliError::Config(format!(
                    "texture {} is {w}x{h}, config wants {}x{}",
                    p.display(),
                    cfg.texture_width,
                    cfg.texture_height
                )));
            }
            Ok(LogoTexture::new(w, h, pixels, mask)?)
        }
        None => Ok(LogoTexture::constant(
            cfg.texture_width,
            cfg.texture_height,
            [0.5; 3],
            mask,
        )?),
    }
}

fn attack_settings(cfg: &RunConfig) -> Result<AttackConfig, CliError> {
    let views = sample_views(
        cfg.train_view_lo,
        cfg.train_view_hi,
        cfg.view_step,
        &base_camera(cfg),
    )?;
    let mut ac = AttackConfig::defaults(views, cfg.seed);
    ac.lambda_dis = cfg.lambda_dis;
    ac.lambda_tv = cfg.lambda_tv;
    ac.lr0 = cfg.lr0;
    ac.lr_decay = cfg.lr_decay;
    ac.lr_decay_every = cfg.lr_decay_every;
    ac.epochs = cfg.epochs;
    ac.background_batch = cfg.background_batch;
    ac.mesh_batch = cfg.mesh_batch;
    ac.threshold = cfg.threshold;
    ac.validate()?;
    Ok(ac)
}

// ── gen-assets ──

pub fn cmd_gen_assets(cfg: &RunConfig) -> Result<(), CliError> {
    let assets = Path::new(&cfg.assets_dir);
    fs::create_dir_all(assets)?;

    let hosts = build_hosts(cfg)?;
    for (k, (mesh, panel)) in hosts.iter().enumerate() {
        fs::write(assets.join(format!("proxy_{k}.obj")), write_obj(mesh))?;
        let csv: String = std::iter::once("face_id".to_string())
            .chain(panel.iter().map(|id| id.to_string()))
            .collect::<Vec<_>>()
            .join("\n");
        fs::write(assets.join(format!("proxy_{k}_logo_faces.csv")), csv + "\n")?;
    }

    for glyph in Glyph::ALL {
        let mask = rasterize_shape_mask(
            &ShapeSpec::Glyph(glyph),
            cfg.texture_width,
            cfg.texture_height,
        )?;
        io::write_mask_png(
            &assets.join(format!("mask_{}.png", glyph.name())),
            &mask,
            cfg.texture_width,
            cfg.texture_height,
        )?;
    }

    let train = backgrounds_for(cfg, cfg.n_train_backgrounds, STREAM_TRAIN_BG)?;
    for (i, img) in train.images.iter().enumerate() {
        io::write_rgb_png(
            &assets.join("backgrounds/train").join(format!("bg_{i:04}.png")),
            img,
            cfg.image_size,
            cfg.image_size,
        )?;
    }
    let test = backgrounds_for(cfg, cfg.n_test_backgrounds, STREAM_TEST_BG)?;
    for (i, img) in test.images.iter().enumerate() {
        io::write_rgb_png(
            &assets.join("backgrounds/test").join(format!("bg_{i:04}.png")),
            img,
            cfg.image_size,
            cfg.image_size,
        )?;
    }

    println!(
        "assets: {} meshes, 8 shape masks, {} train + {} test backgrounds -> {}",
        hosts.len(),
        train.images.len(),
        test.images.len(),
        assets.display()
    );
    Ok(())
}

// ── train-detector ──

/// Synthesize a labeled scene set: half persons over backgrounds at random
/// azimuths in [-60, 60], half backgrounds alone. Persons wear the default
/// gray logo panel, exactly what an untrained texture looks like at eval.
pub fn build_detector_dataset(cfg: &RunConfig) -> Result<Vec<LabeledScene>, CliError> {
    let mut scene = select_scene(cfg, &cfg.train_mesh_indices)?;
    let gray = LogoTexture::constant(
        cfg.texture_width,
        cfg.texture_height,
        [0.5; 3],
        build_mask(cfg)?,
    )?;
    apply_texture_to_scene(&mut scene, &gray)?;
    let n = cfg.detector_train_scenes;
    let bgs = if cfg.background_dir.is_some() {
        backgrounds_for(cfg, n, STREAM_DETECTOR_BG)?
    } else {
        generate_backgrounds(n, stream_seed(cfg.seed, STREAM_DETECTOR_BG), cfg.image_size)?
    };
    let camera = base_camera(cfg);
    let root = Rng::seeded(cfg.seed).split(STREAM_DETECTOR_SCENES);

    let mut dataset = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = root.split(i as u64);
        let bg = &bgs.images[i % bgs.images.len()];
        if i % 2 == 0 {
            let item = &scene.items[rng.below(scene.items.len())];
            let view = camera.with_azimuth(rng.uniform(-60.0, 60.0));
            let out = render(&item.mesh, &item.logo, &view)?;
            let img = composite(&out, bg)?;
            dataset.push(LabeledScene {
                image: rgb_to_tensor(&img, cfg.image_size)?,
                truth: out.person_rect(),
            });
        } else {
            dataset.push(LabeledScene {
                image: rgb_to_tensor(bg, cfg.image_size)?,
                truth: None,
            });
        }
    }
    Ok(dataset)
}

pub fn cmd_train_detector(cfg: &RunConfig) -> Result<(), CliError> {
    let dataset = build_detector_dataset(cfg)?;
    eprintln!(
        "training detector on {} scenes ({} epochs, lr {})",
        dataset.len(),
        cfg.detector_epochs,
        cfg.detector_lr
    );
    let init = DetectorModel::init(stream_seed(cfg.seed, STREAM_DETECTOR_INIT));
    let (model, metrics) = train_detector(
        &init,
        &dataset,
        cfg.detector_epochs,
        cfg.detector_lr,
        cfg.seed,
    )?;

    let weights_path = Path::new(&cfg.weights_path);
    if let Some(dir) = weights_path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(weights_path, model.to_bytes())?;

    let out = Path::new(&cfg.out_dir);
    fs::create_dir_all(out)?;
    let mut csv = String::from("epoch,mean_loss,held_out_recall,held_out_fp\n");
    for e in 0..metrics.epoch_loss.len() {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            e, metrics.epoch_loss[e], metrics.epoch_recall[e], metrics.epoch_fp_rate[e]
        ));
    }
    fs::write(out.join("detector_metrics.csv"), csv)?;

    println!(
        "detector: recall {:.3}, fp rate {:.3} at threshold {} ({} train / {} held out) -> {}",
        metrics.recall,
        metrics.fp_rate,
        metrics.threshold,
        metrics.train_count,
        metrics.holdout_count,
        weights_path.display()
    );
    if metrics.recall < 0.9 {
        return Err(CliError::QualityGate(format!(
            "held-out recall {:.3} below 0.9",
            metrics.recall
        )));
    }
    Ok(())
}

// ── attack ──

fn load_model(cfg: &RunConfig) -> Result<DetectorModel, CliError> {
    let bytes = fs::read(&cfg.weights_path).map_err(|e| {
        CliError::Io(format!(
            "{}: {e}; run `advlogo train-detector` first",
            cfg.weights_path
        ))
    })?;
    Ok(DetectorModel::from_bytes(&bytes)?)
}

pub fn cmd_attack(cfg: &RunConfig) -> Result<(), CliError> {
    let model = load_model(cfg)?;
    let mask = build_mask(cfg)?;
    let texture = match &cfg.texture_png {
        Some(_) => load_texture(cfg, mask.clone())?,
        None => LogoTexture::constant(cfg.texture_width, cfg.texture_height, [0.5; 3], mask.clone())?,
    };
    let mut scene = select_scene(cfg, &cfg.train_mesh_indices)?;
    let bgs = backgrounds_for(cfg, cfg.n_train_backgrounds, STREAM_TRAIN_BG)?;
    let settings = attack_settings(cfg)?;

    let out = Path::new(&cfg.out_dir).to_path_buf();
    fs::create_dir_all(&out)?;

    // frozen coordinate maps, exported for inspection
    for (k, item) in scene.items.iter().enumerate() {
        let map = build_2d_mapping(&item.logo, &texture)?;
        fs::write(out.join(format!("texcoords_mesh_{k}.csv")), map.to_csv())?;
    }

    let snapshot_every = cfg.snapshot_every;
    let (tw, th) = (cfg.texture_width, cfg.texture_height);
    let mut snapshot_err: Option<CliError> = None;
    let (trained, report) = run_attack_observed(
        &mut scene,
        &texture,
        &bgs.images,
        &model,
        &settings,
        &mut |epoch, tex, stats| {
            eprintln!(
                "epoch {:>4}: dis {:.4} tv {:.3} total {:.3} lr {}",
                epoch, stats.mean_dis, stats.mean_tv, stats.total, stats.lr
            );
            if snapshot_every > 0 && (epoch + 1) % snapshot_every == 0 && snapshot_err.is_none() {
                let path = out.join(format!("texture_epoch_{:04}.png", epoch + 1));
                if let Err(e) = io::write_rgb_png(&path, &tex.pixels, tw, th) {
                    snapshot_err = Some(e);
                }
            }
        },
    )?;
    if let Some(e) = snapshot_err {
        return Err(e);
    }

    io::write_rgb_png(&out.join("texture.png"), &trained.pixels, tw, th)?;
    io::write_mask_png(&out.join("mask.png"), &trained.mask, tw, th)?;
    fs::write(out.join("attack_report.csv"), report.to_csv())?;
    println!(
        "attack: {} epochs over {} meshes x {} views x {} backgrounds -> {}",
        report.epochs.len(),
        scene.items.len(),
        settings.views.len(),
        bgs.images.len(),
        out.join("texture.png").display()
    );
    if let Some(last) = report.epochs.last() {
        println!(
            "final epoch: mean_dis {:.4}, mean_tv {:.3}, total {:.3}",
            last.mean_dis, last.mean_tv, last.total
        );
    }
    Ok(())
}

// ── eval ──

#[derive(Serialize)]
struct EvalSummary<'a> {
    config: &'a RunConfig,
    train_views: Vec<i32>,
    mean_success_rate: f64,
    per_view: Vec<EvalSummaryRow>,
}

#[derive(Serialize)]
struct EvalSummaryRow {
    view_deg: i32,
    success_rate: f64,
    n: usize,
    train_view: bool,
}

fn eval_views(cfg: &RunConfig) -> (i32, i32) {
    if cfg.sweep {
        (-50, 50)
    } else {
        (cfg.eval_view_lo, cfg.eval_view_hi)
    }
}

/// Per-view evaluation fanned out over `jobs` threads; view order and
/// therefore results are independent of the thread count.
fn run_protocol_parallel(
    protocol: &mut EvalProtocol,
    model: &DetectorModel,
    jobs: usize,
) -> Result<EvalResult, CliError> {
    if jobs <= 1 || protocol.test_views.len() <= 1 {
        return Ok(run_protocol(protocol, model)?);
    }
    apply_texture_to_scene(&mut protocol.test_scene, &protocol.texture)?;
    let views = protocol.test_views.clone();
    let scene = &protocol.test_scene;
    let backgrounds = &protocol.backgrounds;
    let camera = &protocol.camera;
    let threshold = protocol.threshold;

    let chunk = views.len().div_ceil(jobs);
    let results: Vec<Result<Vec<(i32, usize, usize)>, advlogo_core::Error>> =
        std::thread::scope(|s| {
            let handles: Vec<_> = views
                .chunks(chunk)
                .map(|slice| {
                    s.spawn(move || {
                        let mut rows = Vec::with_capacity(slice.len());
                        for &deg in slice {
                            let view = camera.with_azimuth(deg as f64);
                            let (misses, total) =
                                eval_single_view(scene, &view, backgrounds, model, threshold)?;
                            rows.push((deg, misses, total));
                        }
                        Ok(rows)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });

    let mut per_view = Vec::with_capacity(views.len());
    for chunk in results {
        for (deg, misses, total) in chunk? {
            per_view.push(advlogo_core::harness::ViewRate {
                view_deg: deg,
                success_rate: misses as f64 / total as f64,
                n: total,
                train_view: protocol.train_views.contains(&deg),
            });
        }
    }
    let mean = per_view.iter().map(|v| v.success_rate).sum::<f64>() / per_view.len() as f64;
    Ok(EvalResult { per_view, mean })
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let model = load_model(cfg)?;
    let mask = build_mask(cfg)?;
    let texture = load_texture(cfg, mask)?;
    let scene = select_scene(cfg, &cfg.test_mesh_indices)?;
    let out = Path::new(&cfg.out_dir);
    fs::create_dir_all(out)?;
    let camera = base_camera(cfg);

    if cfg.smoke {
        let mut scene = scene;
        apply_texture_to_scene(&mut scene, &texture)?;
        let bgs = backgrounds_for(cfg, 1, STREAM_TEST_BG)?;
        let item = &scene.items[0];
        let frame = render(&item.mesh, &item.logo, &camera)?;
        let img = composite(&frame, &bgs.images[0])?;
        let path = out.join("smoke.png");
        io::write_rgb_png(&path, &img, cfg.image_size, cfg.image_size)?;
        let dets = detect(&model, &rgb_to_tensor(&img, cfg.image_size)?, cfg.threshold)?;
        println!(
            "smoke frame -> {} ({} detections above {})",
            path.display(),
            dets.len(),
            cfg.threshold
        );
        return Ok(());
    }

    let (lo, hi) = eval_views(cfg);
    let test_views: Vec<i32> = {
        let mut v = Vec::new();
        let mut a = lo;
        while a <= hi {
            v.push(a);
            a += cfg.view_step;
        }
        v
    };
    let train_views: Vec<i32> = {
        let mut v = Vec::new();
        let mut a = cfg.train_view_lo;
        while a <= cfg.train_view_hi {
            v.push(a);
            a += cfg.view_step;
        }
        v
    };

    let backgrounds = backgrounds_for(cfg, cfg.n_test_backgrounds, STREAM_TEST_BG)?;
    let mut protocol = EvalProtocol {
        train_views: train_views.clone(),
        test_views,
        test_scene: scene,
        texture,
        threshold: cfg.threshold,
        backgrounds,
        camera,
    };
    let result = run_protocol_parallel(&mut protocol, &model, cfg.jobs)?;

    fs::write(out.join("eval_results.csv"), result.to_csv())?;
    let summary = EvalSummary {
        config: cfg,
        train_views,
        mean_success_rate: result.mean,
        per_view: result
            .per_view
            .iter()
            .map(|v| EvalSummaryRow {
                view_deg: v.view_deg,
                success_rate: v.success_rate,
                n: v.n,
                train_view: v.train_view,
            })
            .collect(),
    };
    fs::write(
        out.join("eval_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;

    if cfg.gallery {
        write_gallery(cfg, &mut protocol, &model, out)?;
    }

    println!(
        "eval: mean success rate {:.4} over {} views x {} frames -> {}",
        result.mean,
        result.per_view.len(),
        result.per_view.first().map(|v| v.n).unwrap_or(0),
        out.join("eval_results.csv").display()
    );
    Ok(())
}

/// Save a few success (missed person) and failure (still detected) frames
/// from the benchmark view.
fn write_gallery(
    cfg: &RunConfig,
    protocol: &mut EvalProtocol,
    model: &DetectorModel,
    out: &Path,
) -> Result<(), CliError> {
    apply_texture_to_scene(&mut protocol.test_scene, &protocol.texture)?;
    let item = &protocol.test_scene.items[0];
    let frame = render(&item.mesh, &item.logo, &protocol.camera)?;
    let mut hits = 0;
    let mut misses = 0;
    for bg in protocol.backgrounds.images.iter() {
        if hits >= 4 && misses >= 4 {
            break;
        }
        let img = composite(&frame, bg)?;
        let detected = !detect(
            model,
            &rgb_to_tensor(&img, cfg.image_size)?,
            protocol.threshold,
        )?
        .is_empty();
        let (label, idx) = if detected {
            hits += 1;
            ("detected", hits)
        } else {
            misses += 1;
            ("missed", misses)
        };
        if (detected && hits <= 4) || (!detected && misses <= 4) {
            io::write_rgb_png(
                &out.join("gallery").join(format!("{label}_{idx}.png")),
                &img,
                cfg.image_size,
                cfg.image_size,
            )?;
        }
    }
    Ok(())
}
