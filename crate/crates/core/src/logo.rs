//! Logo texture, shape masks, and the two-stage logo transformation: a
//! one-time projection of logo-face centroids into the unit square (the
//! texture coordinate map) and the repeated recoloring of the logo faces
//! from the current texture, plus its exact adjoint for gradients.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::mesh::{LogoSubmesh, TextureCube, TriMesh};

/// Optimizable RGB image restricted to a binary shape mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LogoTexture {
    pub width: usize,
    pub height: usize,
    /// Row-major `height*width` RGB pixels, channels in [0,1].
    pub pixels: Vec<[f64; 3]>,
    /// Row-major mask; true = inside the logo contour.
    pub mask: Vec<bool>,
}

impl LogoTexture {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<[f64; 3]>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if pixels.len() != width * height || mask.len() != width * height {
            return Err(Error::Dimension(format!(
                "texture {width}x{height} wants {} pixels, got {} pixels / {} mask bits",
                width * height,
                pixels.len(),
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Domain("texture mask is empty".into()));
        }
        for p in &pixels {
            for &c in p {
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::Domain(format!("pixel channel {c} outside [0,1]")));
                }
            }
        }
        Ok(LogoTexture {
            width,
            height,
            pixels,
            mask,
        })
    }

    /// Uniform-color texture over the given mask.
    pub fn constant(width: usize, height: usize, color: [f64; 3], mask: Vec<bool>) -> Result<Self> {
        LogoTexture::new(width, height, vec![color; width * height], mask)
    }

    pub fn mask_pixel_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Frozen per-face texture coordinates produced by the 2D mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct TexCoordMap {
    entries: Vec<(f64, f64)>,
    face_ids: Vec<usize>,
    tex_width: usize,
    tex_height: usize,
    host_face_count: usize,
    frozen: bool,
}

impl TexCoordMap {
    pub fn entries(&self) -> &[(f64, f64)] {
        &self.entries
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn face_ids(&self) -> &[usize] {
        &self.face_ids
    }

    /// CSV dump (`face_id,x_hat,y_hat`) for inspection.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("face_id,x_hat,y_hat\n");
        for (&id, &(x, y)) in self.face_ids.iter().zip(&self.entries) {
            out.push_str(&format!("{id},{x},{y}\n"));
        }
        out
    }

    #[cfg(test)]
    fn thawed(mut self) -> Self {
        self.frozen = false;
        self
    }

    fn check_compatible(&self, texture: &LogoTexture, submesh: &LogoSubmesh) -> Result<()> {
        if !self.frozen {
            return Err(Error::State("texture coordinate map is not frozen".into()));
        }
        if self.face_ids != submesh.face_ids || self.host_face_count != submesh.host_face_count {
            return Err(Error::State(
                "texture coordinate map was built for a different submesh".into(),
            ));
        }
        if self.tex_width != texture.width || self.tex_height != texture.height {
            return Err(Error::State(format!(
                "map built for {}x{} texture, got {}x{}",
                self.tex_width, self.tex_height, texture.width, texture.height
            )));
        }
        Ok(())
    }
}

/// Which two relative-centroid axes become the 2D texture coordinate.
/// The front panel of an upright proxy spans x (horizontal) and y
/// (vertical), so XY is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectionAxes {
    #[default]
    XY,
    XZ,
    ZY,
}

/// Nearest-pixel address of a coordinate entry; `ŷ` indexes rows top-down.
#[inline]
pub(crate) fn entry_pixel(entry: (f64, f64), width: usize, height: usize) -> (usize, usize) {
    let col = math::round(entry.0 * (width - 1) as f64) as usize;
    let row = math::round(entry.1 * (height - 1) as f64) as usize;
    (row.min(height - 1), col.min(width - 1))
}

fn relative_coord(v: f64, lo: f64, hi: f64) -> f64 {
    let range = hi - lo;
    if range.abs() < 1e-12 {
        // degenerate bbox axis: center it
        0.5
    } else {
        (v - lo) / range
    }
}

/// Build the frozen texture coordinate map: scale each face centroid into
/// the submesh bounding box, keep the selected axis pair, and pull any
/// entry whose sampled pixel misses the mask to the nearest mask pixel
/// (Euclidean distance in pixel space, lowest row-major index on ties).
pub fn build_2d_mapping_with_axes(
    submesh: &LogoSubmesh,
    texture: &LogoTexture,
    axes: ProjectionAxes,
) -> Result<TexCoordMap> {
    if !texture.mask.iter().any(|&m| m) {
        return Err(Error::Domain("texture mask is empty".into()));
    }
    let (w, h) = (texture.width, texture.height);
    let mut entries = Vec::with_capacity(submesh.face_ids.len());
    for c in &submesh.centroids {
        let rel = [
            relative_coord(c[0], submesh.bbox_min[0], submesh.bbox_max[0]),
            relative_coord(c[1], submesh.bbox_min[1], submesh.bbox_max[1]),
            relative_coord(c[2], submesh.bbox_min[2], submesh.bbox_max[2]),
        ];
        let (x_hat, y_hat) = match axes {
            ProjectionAxes::XY => (rel[0], rel[1]),
            ProjectionAxes::XZ => (rel[0], rel[2]),
            ProjectionAxes::ZY => (rel[2], rel[1]),
        };
        let (row, col) = entry_pixel((x_hat, y_hat), w, h);
        if texture.mask[row * w + col] {
            entries.push((x_hat, y_hat));
        } else {
            // continuous pixel-space position of the raw entry
            let fx = x_hat * (w - 1) as f64;
            let fy = y_hat * (h - 1) as f64;
            let mut best = (f64::INFINITY, 0usize);
            for (i, &m) in texture.mask.iter().enumerate() {
                if !m {
                    continue;
                }
                let (r, c2) = (i / w, i % w);
                let (dx, dy) = (c2 as f64 - fx, r as f64 - fy);
                let d = dx * dx + dy * dy;
                if d < best.0 {
                    best = (d, i);
                }
            }
            let (r, c2) = (best.1 / w, best.1 % w);
            let nx = if w > 1 { c2 as f64 / (w - 1) as f64 } else { 0.0 };
            let ny = if h > 1 { r as f64 / (h - 1) as f64 } else { 0.0 };
            entries.push((nx, ny));
        }
    }
    Ok(TexCoordMap {
        entries,
        face_ids: submesh.face_ids.clone(),
        tex_width: w,
        tex_height: h,
        host_face_count: submesh.host_face_count,
        frozen: true,
    })
}

pub fn build_2d_mapping(submesh: &LogoSubmesh, texture: &LogoTexture) -> Result<TexCoordMap> {
    build_2d_mapping_with_axes(submesh, texture, ProjectionAxes::XY)
}

/// Recolor the logo faces of `host` from `texture`: every logo face gets a
/// texture cube constant-filled with its mapped pixel. Non-logo faces are
/// untouched.
pub fn apply_3d_mapping(
    texture: &LogoTexture,
    map: &TexCoordMap,
    submesh: &LogoSubmesh,
    host: &mut TriMesh,
) -> Result<()> {
    map.check_compatible(texture, submesh)?;
    if submesh.host_face_count != host.faces.len() {
        return Err(Error::State(format!(
            "submesh was extracted from a {}-face mesh, host has {}",
            submesh.host_face_count,
            host.faces.len()
        )));
    }
    for (&face_id, &entry) in submesh.face_ids.iter().zip(&map.entries) {
        let (row, col) = entry_pixel(entry, texture.width, texture.height);
        let color = texture.pixels[row * texture.width + col];
        host.face_textures[face_id] = TextureCube::constant(color);
    }
    Ok(())
}

/// Adjoint of [`apply_3d_mapping`]: scatter-add each face's color gradient
/// (already summed over its cube samples) into the gradient image at the
/// source pixel. Pixels sampled by several faces accumulate; pixels outside
/// the mask stay zero because every entry samples inside the mask.
pub fn backward_3d_mapping(
    map: &TexCoordMap,
    submesh: &LogoSubmesh,
    cube_grads: &[[f64; 3]],
) -> Result<Vec<[f64; 3]>> {
    if !map.frozen {
        return Err(Error::State("texture coordinate map is not frozen".into()));
    }
    if map.face_ids != submesh.face_ids {
        return Err(Error::State(
            "texture coordinate map was built for a different submesh".into(),
        ));
    }
    if cube_grads.len() != map.entries.len() {
        return Err(Error::Dimension(format!(
            "{} cube gradients for {} logo faces",
            cube_grads.len(),
            map.entries.len()
        )));
    }
    let (w, h) = (map.tex_width, map.tex_height);
    let mut grad = vec![[0.0; 3]; w * h];
    for (&entry, g) in map.entries.iter().zip(cube_grads) {
        let (row, col) = entry_pixel(entry, w, h);
        let px = &mut grad[row * w + col];
        px[0] += g[0];
        px[1] += g[1];
        px[2] += g[2];
    }
    Ok(grad)
}

// ── shape masks ──

/// Built-in logo contours. The pixel art is an asset choice; nothing in the
/// pipeline depends on the exact glyph geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Glyph {
    G,
    O,
    C,
    X,
    T,
    H,
    Raindrop,
    Twitter,
}

impl Glyph {
    pub fn from_name(name: &str) -> Option<Glyph> {
        match name.to_ascii_lowercase().as_str() {
            "g" => Some(Glyph::G),
            "o" => Some(Glyph::O),
            "c" => Some(Glyph::C),
            "x" => Some(Glyph::X),
            "t" => Some(Glyph::T),
            "h" => Some(Glyph::H),
            "raindrop" => Some(Glyph::Raindrop),
            "twitter" => Some(Glyph::Twitter),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Glyph::G => "G",
            Glyph::O => "O",
            Glyph::C => "C",
            Glyph::X => "X",
            Glyph::T => "T",
            Glyph::H => "H",
            Glyph::Raindrop => "raindrop",
            Glyph::Twitter => "twitter",
        }
    }

    pub const ALL: [Glyph; 8] = [
        Glyph::G,
        Glyph::O,
        Glyph::C,
        Glyph::X,
        Glyph::T,
        Glyph::H,
        Glyph::Raindrop,
        Glyph::Twitter,
    ];

    fn art(&self) -> [&'static str; 16] {
        match self {
            Glyph::G => [
                "  ############  ",
                " ############## ",
                "#####       ####",
                "####         ###",
                "####            ",
                "####            ",
                "####            ",
                "####    ########",
                "####    ########",
                "####         ###",
                "####         ###",
                "####         ###",
                "#####       ####",
                " ############## ",
                "  ############  ",
                "                ",
            ],
            Glyph::O => [
                "  ############  ",
                " ############## ",
                "####        ####",
                "####        ####",
                "####        ####",
                "####        ####",
                "####        ####",
                "####        ####",
                "####        ####",
                "####        ####",
                "####        ####",
                "####        ####",
                "####        ####",
                " ############## ",
                "  ############  ",
                "                ",
            ],
            Glyph::C => [
                "  ############  ",
                " ############## ",
                "####        ####",
                "####        ####",
                "####            ",
                "####            ",
                "####            ",
                "####            ",
                "####            ",
                "####            ",
                "####            ",
                "####        ####",
                "####        ####",
                " ############## ",
                "  ############  ",
                "                ",
            ],
            Glyph::X => [
                "###          ###",
                "####        ####",
                " ####      #### ",
                "  ####    ####  ",
                "   ####  ####   ",
                "    ########    ",
                "     ######     ",
                "      ####      ",
                "      ####      ",
                "     ######     ",
                "    ########    ",
                "   ####  ####   ",
                "  ####    ####  ",
                " ####      #### ",
                "####        ####",
                "###          ###",
            ],
            Glyph::T => [
                "################",
                "################",
                "################",
                "################",
                "      ####      ",
                "      ####      ",
                "      ####      ",
                "      ####      ",
                "      ####      ",
                "      ####      ",
                "      ####      ",
                "      ####      ",
                "      ####      ",
                "      ####      ",
                "      ####      ",
                "      ####      ",
            ],
            Glyph::H => [
                "####        ####",
                "####        ####",
                "####        ####",
                "####        ####",
                "####        ####",
                "####        ####",
                "################",
                "################",
                "################",
                "################",
                "####        ####",
                "####        ####",
                "####        ####",
                "####        ####",
                "####        ####",
                "####        ####",
            ],
            Glyph::Raindrop => [
                "       ##       ",
                "       ##       ",
                "      ####      ",
                "      ####      ",
                "     ######     ",
                "     ######     ",
                "    ########    ",
                "   ##########   ",
                "  ############  ",
                "  ############  ",
                " ############## ",
                " ############## ",
                " ############## ",
                "  ############  ",
                "   ##########   ",
                "    ########    ",
            ],
            Glyph::Twitter => [
                "                ",
                "          ##    ",
                "  ##     #####  ",
                "  ####  ####### ",
                "   #############",
                "    ############",
                "    ############",
                "   #############",
                "  ##############",
                " ############   ",
                "   ##########   ",
                "    #########   ",
                "     #######    ",
                "      #####     ",
                "        ###     ",
                "                ",
            ],
        }
    }
}

/// A shape source: a built-in glyph or a user-supplied grayscale bitmap.
#[derive(Debug, Clone)]
pub enum ShapeSpec {
    Glyph(Glyph),
    Bitmap {
        width: usize,
        height: usize,
        /// Grayscale values; thresholded at 0.5.
        values: Vec<f64>,
    },
}

/// Rasterize a shape into a `w x h` binary mask. Glyph art is scaled with
/// nearest-neighbor center sampling; user bitmaps are thresholded at 0.5
/// (idempotent on already-binary input).
pub fn rasterize_shape_mask(shape: &ShapeSpec, w: usize, h: usize) -> Result<Vec<bool>> {
    if w < 8 || h < 8 {
        return Err(Error::Domain(format!("mask size {w}x{h} below 8x8 minimum")));
    }
    let mask: Vec<bool> = match shape {
        ShapeSpec::Glyph(g) => {
            let art = g.art();
            let (sw, sh) = (art[0].len(), art.len());
            let mut out = Vec::with_capacity(w * h);
            for row in 0..h {
                let sy = ((row as f64 + 0.5) * sh as f64 / h as f64) as usize;
                let line = art[sy.min(sh - 1)].as_bytes();
                for col in 0..w {
                    let sx = ((col as f64 + 0.5) * sw as f64 / w as f64) as usize;
                    out.push(line[sx.min(sw - 1)] == b'#');
                }
            }
            out
        }
        ShapeSpec::Bitmap {
            width,
            height,
            values,
        } => {
            if values.len() != width * height {
                return Err(Error::Dimension(format!(
                    "bitmap {width}x{height} wants {} values, got {}",
                    width * height,
                    values.len()
                )));
            }
            let mut out = Vec::with_capacity(w * h);
            for row in 0..h {
                let sy = ((row as f64 + 0.5) * *height as f64 / h as f64) as usize;
                for col in 0..w {
                    let sx = ((col as f64 + 0.5) * *width as f64 / w as f64) as usize;
                    out.push(values[sy.min(height - 1) * width + sx.min(width - 1)] >= 0.5);
                }
            }
            out
        }
    };
    if !mask.iter().any(|&m| m) {
        return Err(Error::Domain("rasterized shape mask is empty".into()));
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{extract_logo_submesh, TriMesh, TEXTURE_CUBE_Q};
    use crate::rng::Rng;

    fn full_mask(w: usize, h: usize) -> Vec<bool> {
        vec![true; w * h]
    }

    /// Two-face host whose logo centroids sit at the given points.
    fn mesh_with_centroids(points: &[[f64; 3]]) -> (TriMesh, Vec<usize>) {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for p in points {
            let base = vertices.len();
            vertices.push(*p);
            vertices.push(*p);
            vertices.push(*p);
            faces.push([base, base + 1, base + 2]);
        }
        let ids: Vec<usize> = (0..points.len()).collect();
        (TriMesh::new("t", vertices, faces).unwrap(), ids)
    }

    #[test]
    fn mapping_scaling_endpoints_and_midpoint() {
        let (mesh, ids) =
            mesh_with_centroids(&[[0.0, 0.0, 0.0], [2.0, 4.0, 0.0], [1.0, 2.0, 0.0]]);
        let sub = extract_logo_submesh(&mesh, &ids).unwrap();
        let tex = LogoTexture::constant(16, 16, [0.5; 3], full_mask(16, 16)).unwrap();
        let map = build_2d_mapping(&sub, &tex).unwrap();
        assert!(map.frozen());
        assert_eq!(map.entries()[0], (0.0, 0.0));
        assert_eq!(map.entries()[1], (1.0, 1.0));
        assert_eq!(map.entries()[2], (0.5, 0.5));
    }

    #[test]
    fn degenerate_axis_maps_to_center() {
        // all centroids share x → x̂ = 0.5
        let (mesh, ids) = mesh_with_centroids(&[[1.0, 0.0, 0.0], [1.0, 2.0, 0.0]]);
        let sub = extract_logo_submesh(&mesh, &ids).unwrap();
        let tex = LogoTexture::constant(16, 16, [0.5; 3], full_mask(16, 16)).unwrap();
        let map = build_2d_mapping(&sub, &tex).unwrap();
        assert_eq!(map.entries()[0], (0.5, 0.0));
        assert_eq!(map.entries()[1], (0.5, 1.0));
    }

    #[test]
    fn out_of_mask_entry_snaps_to_nearest_mask_pixel() {
        let (w, h) = (64usize, 64usize);
        // disk of radius 16 centered in the texture
        let mut mask = vec![false; w * h];
        for r in 0..h {
            for c in 0..w {
                let (dx, dy) = (c as f64 - 31.5, r as f64 - 31.5);
                if dx * dx + dy * dy <= (0.25 * w as f64) * (0.25 * w as f64) {
                    mask[r * w + c] = true;
                }
            }
        }
        let tex = LogoTexture::constant(w, h, [0.5; 3], mask.clone()).unwrap();
        // centroid spread so face 0 lands on raw entry (0,0)
        let (mesh, ids) = mesh_with_centroids(&[[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]]);
        let sub = extract_logo_submesh(&mesh, &ids).unwrap();
        let map = build_2d_mapping(&sub, &tex).unwrap();

        // brute-force nearest mask pixel to (0,0), lowest row-major on ties
        let mut best = (f64::INFINITY, 0usize);
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                continue;
            }
            let (r, c) = (i / w, i % w);
            let d = (r * r + c * c) as f64;
            if d < best.0 {
                best = (d, i);
            }
        }
        let expect = (best.1 % w, best.1 / w);
        let got = map.entries()[0];
        assert_eq!(
            (got.0 * 63.0).round() as usize,
            expect.0,
            "column of snapped entry"
        );
        assert_eq!((got.1 * 63.0).round() as usize, expect.1, "row of snapped entry");

        // every sampled pixel is inside the mask
        for &e in map.entries() {
            let (r, c) = entry_pixel(e, w, h);
            assert!(mask[r * w + c]);
        }
    }

    #[test]
    fn rebuilding_map_is_bit_identical() {
        let mesh = crate::mesh::generate_person_proxy_detailed(1.0, 0.3, 16, 4).unwrap();
        let panel = crate::mesh::proxy_front_panel(&mesh, 1.0).unwrap();
        let sub = extract_logo_submesh(&mesh, &panel).unwrap();
        let mask = rasterize_shape_mask(&ShapeSpec::Glyph(Glyph::H), 32, 32).unwrap();
        let tex = LogoTexture::constant(32, 32, [0.5; 3], mask).unwrap();
        let a = build_2d_mapping(&sub, &tex).unwrap();
        let b = build_2d_mapping(&sub, &tex).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn apply_fills_whole_cube_with_mapped_pixel() {
        let (mut mesh, ids) = mesh_with_centroids(&[[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]]);
        let sub = extract_logo_submesh(&mesh, &ids).unwrap();
        let mut pixels = vec![[0.0; 3]; 16 * 16];
        pixels[15 * 16] = [0.2, 0.4, 0.6]; // row 15 (ŷ=1 bottom-left... col 0)
        pixels[0] = [0.9, 0.1, 0.3];
        let tex = LogoTexture::new(16, 16, pixels, full_mask(16, 16)).unwrap();
        let map = build_2d_mapping(&sub, &tex).unwrap();
        apply_3d_mapping(&tex, &map, &sub, &mut mesh).unwrap();
        let q3 = TEXTURE_CUBE_Q * TEXTURE_CUBE_Q * TEXTURE_CUBE_Q;
        assert_eq!(q3, 64);
        // face 0 maps to entry (0,0) → pixel row 0 col 0
        assert!(mesh.face_textures[0]
            .samples()
            .iter()
            .all(|&c| c == [0.9, 0.1, 0.3]));
        assert_eq!(mesh.face_textures[0].samples().len(), 64);
        // face 1 maps to (1,1) → row 15, col 15
        let c1 = mesh.face_textures[1].samples()[0];
        assert_eq!(c1, tex.pixels[15 * 16 + 15]);
    }

    #[test]
    fn apply_leaves_non_logo_faces_alone() {
        let mesh0 = crate::mesh::generate_person_proxy_detailed(1.0, 0.3, 16, 2).unwrap();
        let panel = crate::mesh::proxy_front_panel(&mesh0, 1.0).unwrap();
        let sub = extract_logo_submesh(&mesh0, &panel).unwrap();
        let tex = LogoTexture::constant(16, 16, [0.0; 3], full_mask(16, 16)).unwrap();
        let map = build_2d_mapping(&sub, &tex).unwrap();
        let mut mesh = mesh0.clone();
        apply_3d_mapping(&tex, &map, &sub, &mut mesh).unwrap();
        for (i, cube) in mesh.face_textures.iter().enumerate() {
            if panel.contains(&i) {
                assert_eq!(cube.centroid_color(), [0.0, 0.0, 0.0]);
            } else {
                assert_eq!(cube, &mesh0.face_textures[i]);
            }
        }
    }

    #[test]
    fn apply_matches_per_face_lookup_oracle() {
        let mut rng = Rng::seeded(9);
        let mesh0 = crate::mesh::generate_person_proxy_detailed(1.0, 0.3, 20, 4).unwrap();
        let panel: Vec<usize> = crate::mesh::proxy_front_panel(&mesh0, 1.0).unwrap()
            [..20.min(mesh0.faces.len())]
            .to_vec();
        let sub = extract_logo_submesh(&mesh0, &panel).unwrap();
        let pixels: Vec<[f64; 3]> = (0..24 * 24)
            .map(|_| [rng.next_f64(), rng.next_f64(), rng.next_f64()])
            .collect();
        let tex = LogoTexture::new(24, 24, pixels, full_mask(24, 24)).unwrap();
        let map = build_2d_mapping(&sub, &tex).unwrap();
        let mut mesh = mesh0.clone();
        apply_3d_mapping(&tex, &map, &sub, &mut mesh).unwrap();
        for (i, &fid) in sub.face_ids.iter().enumerate() {
            let (r, c) = entry_pixel(map.entries()[i], 24, 24);
            assert_eq!(
                mesh.face_textures[fid].centroid_color(),
                tex.pixels[r * 24 + c]
            );
        }
    }

    #[test]
    fn unfrozen_or_mismatched_map_is_state_error() {
        let (mut mesh, ids) = mesh_with_centroids(&[[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]]);
        let sub = extract_logo_submesh(&mesh, &ids).unwrap();
        let tex = LogoTexture::constant(16, 16, [0.5; 3], full_mask(16, 16)).unwrap();
        let map = build_2d_mapping(&sub, &tex).unwrap().thawed();
        assert!(matches!(
            apply_3d_mapping(&tex, &map, &sub, &mut mesh),
            Err(Error::State(_))
        ));

        let other_tex = LogoTexture::constant(8, 8, [0.5; 3], full_mask(8, 8)).unwrap();
        let map2 = build_2d_mapping(&sub, &tex).unwrap();
        assert!(matches!(
            apply_3d_mapping(&other_tex, &map2, &sub, &mut mesh),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn backward_accumulates_shared_pixels() {
        // both centroids coincide → same entry → same pixel
        let (mesh, ids) = mesh_with_centroids(&[[1.0, 1.0, 0.0], [1.0, 1.0, 0.0]]);
        // force two distinct faces with identical centroids: dedupe keeps both
        let sub = extract_logo_submesh(&mesh, &ids).unwrap();
        let tex = LogoTexture::constant(16, 16, [0.5; 3], full_mask(16, 16)).unwrap();
        let map = build_2d_mapping(&sub, &tex).unwrap();
        let grads = vec![[1.0, 0.0, 0.0]; 2];
        let img = backward_3d_mapping(&map, &sub, &grads).unwrap();
        let total: f64 = img.iter().map(|p| p[0]).sum();
        assert_eq!(total, 2.0);
        let (r, c) = entry_pixel(map.entries()[0], 16, 16);
        assert_eq!(img[r * 16 + c], [2.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_zero_grads_give_zero_image() {
        let (mesh, ids) = mesh_with_centroids(&[[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]]);
        let sub = extract_logo_submesh(&mesh, &ids).unwrap();
        let tex = LogoTexture::constant(16, 16, [0.5; 3], full_mask(16, 16)).unwrap();
        let map = build_2d_mapping(&sub, &tex).unwrap();
        let img = backward_3d_mapping(&map, &sub, &[[0.0; 3]; 2]).unwrap();
        assert!(img.iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn forward_backward_adjointness() {
        // ⟨G, forward(T)⟩ = ⟨backward(G), T⟩ for the linear recoloring map
        let mut rng = Rng::seeded(17);
        let mesh0 = crate::mesh::generate_person_proxy_detailed(1.0, 0.3, 16, 4).unwrap();
        let panel = crate::mesh::proxy_front_panel(&mesh0, 1.0).unwrap();
        let sub = extract_logo_submesh(&mesh0, &panel).unwrap();
        let mask = rasterize_shape_mask(&ShapeSpec::Glyph(Glyph::O), 24, 24).unwrap();
        let pixels: Vec<[f64; 3]> = (0..24 * 24)
            .map(|_| [rng.next_f64(), rng.next_f64(), rng.next_f64()])
            .collect();
        let tex = LogoTexture::new(24, 24, pixels, mask).unwrap();
        let map = build_2d_mapping(&sub, &tex).unwrap();

        let mut mesh = mesh0.clone();
        apply_3d_mapping(&tex, &map, &sub, &mut mesh).unwrap();
        let fwd: Vec<[f64; 3]> = sub
            .face_ids
            .iter()
            .map(|&fid| mesh.face_textures[fid].centroid_color())
            .collect();

        let grads: Vec<[f64; 3]> = (0..fwd.len())
            .map(|_| {
                [
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                ]
            })
            .collect();
        let back = backward_3d_mapping(&map, &sub, &grads).unwrap();

        let lhs: f64 = grads
            .iter()
            .zip(&fwd)
            .map(|(g, f)| g[0] * f[0] + g[1] * f[1] + g[2] * f[2])
            .sum();
        let rhs: f64 = back
            .iter()
            .zip(&tex.pixels)
            .map(|(b, t)| b[0] * t[0] + b[1] * t[1] + b[2] * t[2])
            .sum();
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12);
        assert!(rel <= 1e-6, "adjointness violated: {lhs} vs {rhs}");
    }

    #[test]
    fn recoloring_is_linear_in_texture() {
        let (mesh0, ids) = mesh_with_centroids(&[[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]]);
        let mut rng = Rng::seeded(23);
        let pixels: Vec<[f64; 3]> = (0..16 * 16)
            .map(|_| {
                [
                    rng.uniform(0.0, 0.5),
                    rng.uniform(0.0, 0.5),
                    rng.uniform(0.0, 0.5),
                ]
            })
            .collect();
        let doubled: Vec<[f64; 3]> = pixels
            .iter()
            .map(|p| [2.0 * p[0], 2.0 * p[1], 2.0 * p[2]])
            .collect();
        let sub = extract_logo_submesh(&mesh0, &ids).unwrap();
        let t1 = LogoTexture::new(16, 16, pixels, full_mask(16, 16)).unwrap();
        let t2 = LogoTexture::new(16, 16, doubled, full_mask(16, 16)).unwrap();
        let map = build_2d_mapping(&sub, &t1).unwrap();
        let mut m1 = mesh0.clone();
        let mut m2 = mesh0.clone();
        apply_3d_mapping(&t1, &map, &sub, &mut m1).unwrap();
        apply_3d_mapping(&t2, &map, &sub, &mut m2).unwrap();
        for &fid in &sub.face_ids {
            let a = m1.face_textures[fid].centroid_color();
            let b = m2.face_textures[fid].centroid_color();
            for k in 0..3 {
                assert!((b[k] - 2.0 * a[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coordinate_range_property_on_random_masks() {
        let mut rng = Rng::seeded(31);
        for trial in 0..20 {
            let (w, h) = (16 + rng.below(32), 16 + rng.below(32));
            let mut mask = vec![false; w * h];
            // random blob mask
            let n = 1 + rng.below(w * h / 4);
            for _ in 0..n {
                mask[rng.below(w * h)] = true;
            }
            let tex = LogoTexture::constant(w, h, [0.5; 3], mask.clone()).unwrap();
            let mesh = crate::mesh::generate_person_proxy_detailed(1.0, 0.3, 16, 3).unwrap();
            let panel = crate::mesh::proxy_front_panel(&mesh, 1.0).unwrap();
            let sub = extract_logo_submesh(&mesh, &panel).unwrap();
            let map = build_2d_mapping(&sub, &tex).unwrap();
            for &(x, y) in map.entries() {
                assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y), "trial {trial}");
                let (r, c) = entry_pixel((x, y), w, h);
                assert!(mask[r * w + c], "sampled pixel outside mask in trial {trial}");
            }
        }
    }

    #[test]
    fn full_rectangle_shape_gives_all_true() {
        let bitmap = ShapeSpec::Bitmap {
            width: 4,
            height: 4,
            values: vec![1.0; 16],
        };
        let mask = rasterize_shape_mask(&bitmap, 16, 16).unwrap();
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn binary_bitmap_threshold_is_idempotent() {
        let values = vec![
            1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0,
        ];
        let bitmap = ShapeSpec::Bitmap {
            width: 4,
            height: 4,
            values: values.clone(),
        };
        let mask = rasterize_shape_mask(&bitmap, 8, 8).unwrap();
        // scale 8x8 back down conceptually: every 2x2 block is constant
        for r in 0..8 {
            for c in 0..8 {
                let expect = values[(r / 2) * 4 + c / 2] >= 0.5;
                assert_eq!(mask[r * 8 + c], expect);
            }
        }
    }

    #[test]
    fn h_glyph_is_left_right_symmetric_at_64() {
        let mask = rasterize_shape_mask(&ShapeSpec::Glyph(Glyph::H), 64, 64).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                assert_eq!(mask[r * 64 + c], mask[r * 64 + (63 - c)], "({r},{c})");
            }
        }
    }

    #[test]
    fn all_glyphs_rasterize_nonempty() {
        for g in Glyph::ALL {
            let mask = rasterize_shape_mask(&ShapeSpec::Glyph(g), 32, 32).unwrap();
            assert!(mask.iter().any(|&m| m), "{:?}", g);
        }
    }

    #[test]
    fn empty_shape_is_domain_error() {
        let bitmap = ShapeSpec::Bitmap {
            width: 4,
            height: 4,
            values: vec![0.0; 16],
        };
        assert!(matches!(
            rasterize_shape_mask(&bitmap, 16, 16),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            rasterize_shape_mask(&ShapeSpec::Glyph(Glyph::H), 4, 4),
            Err(Error::Domain(_))
        ));
    }
}
