//! Run configuration: one flat struct that covers every pipeline stage.
//! Parsed from JSON (unknown keys rejected) with defaults matching the
//! reference training recipe; every field has a matching CLI flag.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every stage derives its own stream from it.
    pub seed: u64,

    // rendering
    pub image_size: usize,
    pub camera_distance: f64,
    pub elevation_deg: f64,
    pub fov_deg: f64,

    // scene: either generated proxies or user OBJ meshes
    pub mesh_obj_paths: Vec<String>,
    /// Logo face ids per user mesh, parallel to `mesh_obj_paths`.
    pub logo_faces: Vec<Vec<usize>>,
    pub n_proxy_meshes: usize,
    pub proxy_height: f64,
    pub proxy_radius: f64,
    pub proxy_segments: usize,
    pub proxy_rows: usize,
    /// Shrinks the logo panel footprint ({1, 2/3, 1/3} in the size study).
    pub logo_scale: f64,
    /// Mesh indices used for attack training (empty = all).
    pub train_mesh_indices: Vec<usize>,
    /// Mesh indices used for evaluation (empty = all).
    pub test_mesh_indices: Vec<usize>,

    // logo texture
    /// Built-in glyph name (G O C X T H raindrop twitter).
    pub shape: String,
    /// Grayscale PNG mask path; overrides `shape` when set.
    pub mask_png: Option<String>,
    pub texture_width: usize,
    pub texture_height: usize,
    /// Initial/input texture PNG; gray 0.5 when absent.
    pub texture_png: Option<String>,

    // detector
    pub detector_train_scenes: usize,
    pub detector_epochs: usize,
    pub detector_lr: f64,
    pub weights_path: String,

    // attack hyperparameters
    pub lambda_dis: f64,
    pub lambda_tv: f64,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub epochs: usize,
    pub background_batch: usize,
    pub mesh_batch: usize,
    pub threshold: f64,
    pub train_view_lo: i32,
    pub train_view_hi: i32,
    pub view_step: i32,

    // evaluation
    pub eval_view_lo: i32,
    pub eval_view_hi: i32,
    /// Extend the evaluation sweep to [-50, 50].
    pub sweep: bool,
    /// Render a single composited frame and exit.
    pub smoke: bool,
    /// Save success/failure example frames during eval.
    pub gallery: bool,

    // backgrounds
    pub n_train_backgrounds: usize,
    pub n_test_backgrounds: usize,
    /// Directory of user background PNGs; procedural generation when unset.
    pub background_dir: Option<String>,

    // outputs
    pub out_dir: String,
    pub assets_dir: String,
    /// Texture snapshot PNG every N epochs (0 = off).
    pub snapshot_every: usize,
    /// Worker threads for render/eval stages.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            image_size: 64,
            camera_distance: 2.0,
            elevation_deg: 0.0,
            fov_deg: 30.0,
            mesh_obj_paths: Vec::new(),
            logo_faces: Vec::new(),
            n_proxy_meshes: 2,
            proxy_height: 0.9,
            proxy_radius: 0.25,
            proxy_segments: 24,
            proxy_rows: 6,
            logo_scale: 1.0,
            train_mesh_indices: Vec::new(),
            test_mesh_indices: Vec::new(),
            shape: "H".to_string(),
            mask_png: None,
            texture_width: 32,
            texture_height: 32,
            texture_png: None,
            detector_train_scenes: 2400,
            detector_epochs: 12,
            detector_lr: 0.01,
            weights_path: "out/detector.weights".to_string(),
            lambda_dis: 1.0,
            lambda_tv: 2.5,
            lr0: 0.03,
            lr_decay: 0.1,
            lr_decay_every: 50,
            epochs: 100,
            background_batch: 8,
            mesh_batch: 1,
            threshold: 0.6,
            train_view_lo: 0,
            train_view_hi: 0,
            view_step: 1,
            eval_view_lo: -10,
            eval_view_hi: 10,
            sweep: false,
            smoke: false,
            gallery: false,
            n_train_backgrounds: 312,
            n_test_backgrounds: 200,
            background_dir: None,
            out_dir: "out".to_string(),
            assets_dir: "assets".to_string(),
            snapshot_every: 0,
            jobs: 1,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
