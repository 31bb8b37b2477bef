use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use advlogo_cli::{cmd_attack, cmd_eval, cmd_gen_assets, cmd_train_detector, CliError, RunConfig};

/// Adversarial logo pipeline: texture a logo onto 3D person proxies,
/// render, and optimize it to hide the person from a grid detector.
#[derive(Parser)]
#[command(name = "advlogo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate proxy meshes, shape masks and background images.
    GenAssets(Stage),
    /// Synthesize labeled scenes and train the baseline detector.
    TrainDetector(Stage),
    /// Optimize the logo texture against the trained detector.
    Attack(Stage),
    /// Evaluate a texture: per-view attack success rates.
    Eval(Stage),
}

#[derive(Args)]
struct Stage {
    /// JSON config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

/// One flag per config key; unset flags leave the config value alone.
#[derive(Args)]
struct Overrides {
    /// Root seed for every stage.
    #[arg(long)]
    seed: Option<u64>,
    /// Square frame size in pixels (multiple of 16).
    #[arg(long)]
    image_size: Option<usize>,
    /// Camera distance in model units.
    #[arg(long)]
    camera_distance: Option<f64>,
    /// Camera elevation in degrees.
    #[arg(long, allow_negative_numbers = true)]
    elevation_deg: Option<f64>,
    /// Vertical field of view in degrees.
    #[arg(long)]
    fov_deg: Option<f64>,
    /// Comma-separated OBJ paths for user host meshes.
    #[arg(long, value_delimiter = ',')]
    mesh_obj_paths: Option<Vec<String>>,
    /// Logo face ids for one user mesh (repeat per mesh, comma-separated).
    #[arg(long, action = ArgAction::Append)]
    logo_faces: Option<Vec<String>>,
    /// Number of generated person proxies.
    #[arg(long)]
    n_proxy_meshes: Option<usize>,
    /// Proxy torso height in model units.
    #[arg(long)]
    proxy_height: Option<f64>,
    /// Proxy torso radius in model units.
    #[arg(long)]
    proxy_radius: Option<f64>,
    /// Proxy cylinder segments.
    #[arg(long)]
    proxy_segments: Option<usize>,
    /// Proxy vertical subdivisions.
    #[arg(long)]
    proxy_rows: Option<usize>,
    /// Logo panel footprint scale (1, 2/3, 1/3 in the size study).
    #[arg(long)]
    logo_scale: Option<f64>,
    /// Comma-separated mesh indices used in attack training.
    #[arg(long, value_delimiter = ',')]
    train_mesh_indices: Option<Vec<usize>>,
    /// Comma-separated mesh indices used in evaluation.
    #[arg(long, value_delimiter = ',')]
    test_mesh_indices: Option<Vec<usize>>,
    /// Built-in glyph name (G O C X T H raindrop twitter).
    #[arg(long)]
    shape: Option<String>,
    /// Grayscale PNG to use as the logo contour mask.
    #[arg(long)]
    mask_png: Option<String>,
    /// Logo texture width in pixels.
    #[arg(long)]
    texture_width: Option<usize>,
    /// Logo texture height in pixels.
    #[arg(long)]
    texture_height: Option<usize>,
    /// Input texture PNG (attack init / eval subject).
    #[arg(long)]
    texture_png: Option<String>,
    /// Number of synthetic scenes for detector training.
    #[arg(long)]
    detector_train_scenes: Option<usize>,
    /// Detector training epochs.
    #[arg(long)]
    detector_epochs: Option<usize>,
    /// Detector Adam learning rate.
    #[arg(long)]
    detector_lr: Option<f64>,
    /// Detector weights file path.
    #[arg(long)]
    weights_path: Option<String>,
    /// Disappearance loss weight.
    #[arg(long)]
    lambda_dis: Option<f64>,
    /// Total-variance loss weight.
    #[arg(long)]
    lambda_tv: Option<f64>,
    /// Initial attack learning rate.
    #[arg(long)]
    lr0: Option<f64>,
    /// Learning-rate decay factor.
    #[arg(long)]
    lr_decay: Option<f64>,
    /// Epochs between learning-rate decays.
    #[arg(long)]
    lr_decay_every: Option<usize>,
    /// Attack training epochs (100 single-angle, 20 multi-angle).
    #[arg(long)]
    epochs: Option<usize>,
    /// Background batch size per step.
    #[arg(long)]
    background_batch: Option<usize>,
    /// Mesh batch size (must be 1).
    #[arg(long)]
    mesh_batch: Option<usize>,
    /// Detection confidence threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Lowest training view in degrees.
    #[arg(long, allow_negative_numbers = true)]
    train_view_lo: Option<i32>,
    /// Highest training view in degrees.
    #[arg(long, allow_negative_numbers = true)]
    train_view_hi: Option<i32>,
    /// View sampling step in degrees.
    #[arg(long)]
    view_step: Option<i32>,
    /// Lowest evaluation view in degrees.
    #[arg(long, allow_negative_numbers = true)]
    eval_view_lo: Option<i32>,
    /// Highest evaluation view in degrees.
    #[arg(long, allow_negative_numbers = true)]
    eval_view_hi: Option<i32>,
    /// Extend evaluation views to [-50, 50].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    sweep: Option<bool>,
    /// Render a single composited frame and exit.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    smoke: Option<bool>,
    /// Save success/failure example frames during eval.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    gallery: Option<bool>,
    /// Number of training backgrounds.
    #[arg(long)]
    n_train_backgrounds: Option<usize>,
    /// Number of evaluation backgrounds.
    #[arg(long)]
    n_test_backgrounds: Option<usize>,
    /// Directory of user background PNGs.
    #[arg(long)]
    background_dir: Option<String>,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<String>,
    /// Assets directory.
    #[arg(long)]
    assets_dir: Option<String>,
    /// Texture snapshot PNG every N epochs (0 = off).
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Worker threads for render/eval stages.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Overrides {
    fn apply(self, cfg: &mut RunConfig) -> Result<(), CliError> {
        macro_rules! set {
            ($($field:ident),* $(,)?) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(
            seed,
            image_size,
            camera_distance,
            elevation_deg,
            fov_deg,
            mesh_obj_paths,
            n_proxy_meshes,
            proxy_height,
            proxy_radius,
            proxy_segments,
            proxy_rows,
            logo_scale,
            train_mesh_indices,
            test_mesh_indices,
            shape,
            texture_width,
            texture_height,
            detector_train_scenes,
            detector_epochs,
            detector_lr,
            weights_path,
            lambda_dis,
            lambda_tv,
            lr0,
            lr_decay,
            lr_decay_every,
            epochs,
            background_batch,
            mesh_batch,
            threshold,
            train_view_lo,
            train_view_hi,
            view_step,
            eval_view_lo,
            eval_view_hi,
            sweep,
            smoke,
            gallery,
            n_train_backgrounds,
            n_test_backgrounds,
            out_dir,
            assets_dir,
            snapshot_every,
            jobs,
        );
        if let Some(v) = self.mask_png {
            cfg.mask_png = Some(v);
        }
        if let Some(v) = self.texture_png {
            cfg.texture_png = Some(v);
        }
        if let Some(v) = self.background_dir {
            cfg.background_dir = Some(v);
        }
        if let Some(lists) = self.logo_faces {
            let mut parsed = Vec::new();
            for list in lists {
                let ids: Result<Vec<usize>, _> =
                    list.split(',').map(|t| t.trim().parse::<usize>()).collect();
                parsed.push(ids.map_err(|e| {
                    CliError::Config(format!("logo_faces `{list}`: {e}"))
                })?);
            }
            cfg.logo_faces = parsed;
        }
        Ok(())
    }
}

fn load_config(stage: Stage) -> Result<RunConfig, CliError> {
    let mut cfg = match &stage.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    stage.overrides.apply(&mut cfg)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| -> Result<(), CliError> {
        match cli.command {
            Command::GenAssets(stage) => cmd_gen_assets(&load_config(stage)?),
            Command::TrainDetector(stage) => cmd_train_detector(&load_config(stage)?),
            Command::Attack(stage) => cmd_attack(&load_config(stage)?),
            Command::Eval(stage) => cmd_eval(&load_config(stage)?),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
