//! Perspective software rasterizer with per-pixel face provenance, scene
//! compositing, and logo-texture augmentation.
//!
//! The camera is fixed and the model rotates about the vertical axis
//! (positive azimuth = counterclockwise seen from above). Shading is
//! ambient-only at intensity 1, so a pixel's color is exactly the hit
//! face's cube centroid color; with geometry fixed, the pixel-to-face
//! assignment is constant and [`render_backward`] is the exact adjoint of
//! the color path. Faces with any vertex at or behind the near plane are
//! culled, not clipped; zero-area faces never cover pixels.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::logo::LogoTexture;
use crate::math;
use crate::mesh::{LogoSubmesh, TriMesh};
use crate::rng::Rng;

const NEAR_PLANE: f64 = 1e-6;

/// Fixed camera; azimuth rotates the model, not the eye.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance: f64,
    pub fov_deg: f64,
    pub image_size: usize,
}

impl Camera {
    /// Benchmark view: azimuth 0, elevation 0, distance 2, fov 30.
    pub fn benchmark(image_size: usize) -> Self {
        Camera {
            azimuth_deg: 0.0,
            elevation_deg: 0.0,
            distance: 2.0,
            fov_deg: 30.0,
            image_size,
        }
    }

    pub fn with_azimuth(&self, azimuth_deg: f64) -> Self {
        Camera {
            azimuth_deg,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance > 0.0) {
            return Err(Error::Domain(format!("camera distance {}", self.distance)));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Domain(format!("camera fov {}", self.fov_deg)));
        }
        if self.image_size < 16 {
            return Err(Error::Domain(format!(
                "image size {} below minimum 16",
                self.image_size
            )));
        }
        Ok(())
    }
}

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let (ax0, ax1) = (self.cx - self.w / 2.0, self.cx + self.w / 2.0);
        let (ay0, ay1) = (self.cy - self.h / 2.0, self.cy + self.h / 2.0);
        let (bx0, bx1) = (other.cx - other.w / 2.0, other.cx + other.w / 2.0);
        let (by0, by1) = (other.cy - other.h / 2.0, other.cy + other.h / 2.0);
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        let inter = iw * ih;
        let union = self.w * self.h + other.w * other.h - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// One rendered frame with per-pixel provenance.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub size: usize,
    pub rgb: Vec<[f64; 3]>,
    pub coverage: Vec<bool>,
    pub depth: Vec<f64>,
    /// Hit face index, -1 where nothing was hit.
    pub face_id: Vec<i32>,
    /// True where the hit face belongs to the logo submesh.
    pub logo_mask: Vec<bool>,
}

impl RenderOutput {
    pub fn pixel_index(&self, row: usize, col: usize) -> usize {
        row * self.size + col
    }

    /// Bounding rectangle of the covered pixels in normalized coordinates.
    pub fn person_rect(&self) -> Option<BoundingBox> {
        let mut min_r = usize::MAX;
        let mut max_r = 0usize;
        let mut min_c = usize::MAX;
        let mut max_c = 0usize;
        let mut any = false;
        for r in 0..self.size {
            for c in 0..self.size {
                if self.coverage[r * self.size + c] {
                    any = true;
                    min_r = min_r.min(r);
                    max_r = max_r.max(r);
                    min_c = min_c.min(c);
                    max_c = max_c.max(c);
                }
            }
        }
        if !any {
            return None;
        }
        let s = self.size as f64;
        let (x0, x1) = (min_c as f64 / s, (max_c + 1) as f64 / s);
        let (y0, y1) = (min_r as f64 / s, (max_r + 1) as f64 / s);
        Some(BoundingBox {
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }
}

/// Model-rotated, camera-projected vertex: screen position in pixel units
/// plus positive view depth. `None` when at or behind the near plane.
pub fn project_vertex(v: [f64; 3], camera: &Camera) -> Option<(f64, f64, f64)> {
    let az = camera.azimuth_deg * math::DEG_TO_RAD;
    let (sa, ca) = (math::sin(az), math::cos(az));
    let x = v[0] * ca + v[2] * sa;
    let y = v[1];
    let z = -v[0] * sa + v[2] * ca;

    let el = camera.elevation_deg * math::DEG_TO_RAD;
    let (se, ce) = (math::sin(el), math::cos(el));
    // camera sits at distance along the elevated axis, looking at the origin
    let cam = [0.0, camera.distance * se, camera.distance * ce];
    let rel = [x - cam[0], y - cam[1], z - cam[2]];
    let fwd = [0.0, -se, -ce];
    let right = [1.0, 0.0, 0.0];
    let up = [0.0, ce, -se];

    let xc = rel[0] * right[0] + rel[1] * right[1] + rel[2] * right[2];
    let yc = rel[0] * up[0] + rel[1] * up[1] + rel[2] * up[2];
    let zc = rel[0] * fwd[0] + rel[1] * fwd[1] + rel[2] * fwd[2];
    if zc <= NEAR_PLANE {
        return None;
    }
    let half = camera.image_size as f64 / 2.0;
    let focal = half / math::tan(camera.fov_deg * math::DEG_TO_RAD / 2.0);
    let sx = half + focal * xc / zc;
    let sy = half - focal * yc / zc;
    Some((sx, sy, zc))
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// Rasterize the mesh from `camera`, marking pixels covered by `logo`
/// faces. Per-pixel visibility is a z-buffer at pixel centers with
/// depth ties broken toward the lower face index; back faces are kept.
pub fn render(mesh: &TriMesh, logo: &LogoSubmesh, camera: &Camera) -> Result<RenderOutput> {
    camera.validate()?;
    if logo.host_face_count != mesh.faces.len() {
        return Err(Error::State(format!(
            "logo submesh was extracted from a {}-face mesh, got {}",
            logo.host_face_count,
            mesh.faces.len()
        )));
    }
    let size = camera.image_size;
    let mut out = RenderOutput {
        size,
        rgb: vec![[0.0; 3]; size * size],
        coverage: vec![false; size * size],
        depth: vec![f64::INFINITY; size * size],
        face_id: vec![-1; size * size],
        logo_mask: vec![false; size * size],
    };

    let mut is_logo_face = vec![false; mesh.faces.len()];
    for &id in &logo.face_ids {
        is_logo_face[id] = true;
    }

    let projected: Vec<Option<(f64, f64, f64)>> = mesh
        .vertices
        .iter()
        .map(|&v| project_vertex(v, camera))
        .collect();

    for (fid, face) in mesh.faces.iter().enumerate() {
        let (Some(a), Some(b), Some(c)) = (
            projected[face[0]],
            projected[face[1]],
            projected[face[2]],
        ) else {
            continue;
        };
        let area2 = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
        if area2 == 0.0 {
            continue;
        }
        let min_x = a.0.min(b.0).min(c.0);
        let max_x = a.0.max(b.0).max(c.0);
        let min_y = a.1.min(b.1).min(c.1);
        let max_y = a.1.max(b.1).max(c.1);
        if max_x < 0.0 || min_x > size as f64 || max_y < 0.0 || min_y > size as f64 {
            continue;
        }
        let col_lo = (min_x - 0.5).max(0.0) as usize;
        let col_hi = (max_x - 0.5).min((size - 1) as f64) as usize;
        let row_lo = (min_y - 0.5).max(0.0) as usize;
        let row_hi = (max_y - 0.5).min((size - 1) as f64) as usize;

        let color = mesh.face_textures[fid].centroid_color();
        for row in row_lo..=row_hi {
            let py = row as f64 + 0.5;
            for col in col_lo..=col_hi {
                let px = col as f64 + 0.5;
                let e0 = edge(b.0, b.1, c.0, c.1, px, py);
                let e1 = edge(c.0, c.1, a.0, a.1, px, py);
                let e2 = edge(a.0, a.1, b.0, b.1, px, py);
                let inside = (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0)
                    || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0);
                if !inside {
                    continue;
                }
                let inv_z = (e0 / area2) / a.2 + (e1 / area2) / b.2 + (e2 / area2) / c.2;
                let depth = 1.0 / inv_z;
                let p = row * size + col;
                if depth < out.depth[p] {
                    out.depth[p] = depth;
                    out.coverage[p] = true;
                    out.face_id[p] = fid as i32;
                    out.logo_mask[p] = is_logo_face[fid];
                    out.rgb[p] = color;
                }
            }
        }
    }
    Ok(out)
}

/// Route each covered pixel's RGB gradient to its hit face; returns one
/// summed RGB gradient per mesh face.
pub fn render_backward(
    out_grad: &[[f64; 3]],
    output: &RenderOutput,
    n_faces: usize,
) -> Result<Vec<[f64; 3]>> {
    if out_grad.len() != output.rgb.len() {
        return Err(Error::Dimension(format!(
            "pixel gradient has {} entries, render has {}",
            out_grad.len(),
            output.rgb.len()
        )));
    }
    let mut face_grads = vec![[0.0; 3]; n_faces];
    for (p, g) in out_grad.iter().enumerate() {
        if output.coverage[p] {
            let f = output.face_id[p] as usize;
            if f >= n_faces {
                return Err(Error::Dimension(format!(
                    "render references face {f}, mesh has {n_faces}"
                )));
            }
            face_grads[f][0] += g[0];
            face_grads[f][1] += g[1];
            face_grads[f][2] += g[2];
        }
    }
    Ok(face_grads)
}

/// Person-over-background compositing: rendered pixels where covered,
/// background elsewhere. Gradients pass only through covered pixels.
pub fn composite(person: &RenderOutput, background: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
    if background.len() != person.rgb.len() {
        return Err(Error::Dimension(format!(
            "background has {} pixels, render has {}",
            background.len(),
            person.rgb.len()
        )));
    }
    Ok(person
        .rgb
        .iter()
        .zip(background)
        .zip(&person.coverage)
        .map(|((p, b), &cov)| if cov { *p } else { *b })
        .collect())
}

/// Mask a composite-image gradient down to the covered (rendered) pixels.
pub fn composite_backward(out_grad: &[[f64; 3]], person: &RenderOutput) -> Result<Vec<[f64; 3]>> {
    if out_grad.len() != person.rgb.len() {
        return Err(Error::Dimension(format!(
            "gradient has {} pixels, render has {}",
            out_grad.len(),
            person.rgb.len()
        )));
    }
    Ok(out_grad
        .iter()
        .zip(&person.coverage)
        .map(|(g, &cov)| if cov { *g } else { [0.0; 3] })
        .collect())
}

/// Random photometric perturbation of the logo texture:
/// `clamp01(contrast * pixel + brightness + noise)` inside the mask.
/// Contrast and brightness are uniform in [0,1); noise is per channel
/// uniform in [-amplitude, amplitude) regenerated from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub contrast: f64,
    pub brightness: f64,
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl AugmentParams {
    pub fn draw(rng: &mut Rng) -> Self {
        AugmentParams {
            contrast: rng.next_f64(),
            brightness: rng.next_f64(),
            noise_amplitude: 0.1,
            seed: rng.next_u64(),
        }
    }

    /// No-op augmentation (contrast 1, brightness 0, no noise).
    pub fn identity() -> Self {
        AugmentParams {
            contrast: 1.0,
            brightness: 0.0,
            noise_amplitude: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.contrast)
            || !(0.0..=1.0).contains(&self.brightness)
            || !(0.0..=0.1).contains(&self.noise_amplitude)
        {
            return Err(Error::Domain(format!(
                "augment params out of range: c={} b={} amp={}",
                self.contrast, self.brightness, self.noise_amplitude
            )));
        }
        Ok(())
    }
}

/// What [`augment_logo_texture`] needs to push gradients back: the contrast
/// factor and which pixel channels survived the clamp.
#[derive(Debug, Clone)]
pub struct AugmentTape {
    contrast: f64,
    unclamped: Vec<[bool; 3]>,
}

impl AugmentTape {
    /// d(augmented)/d(original) is `contrast` on unclamped in-mask channels
    /// and 0 elsewhere; out-of-mask pixels pass nothing (they were copied,
    /// but are never optimized either).
    pub fn backward(&self, grad: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        if grad.len() != self.unclamped.len() {
            return Err(Error::Dimension(format!(
                "gradient has {} pixels, augment saw {}",
                grad.len(),
                self.unclamped.len()
            )));
        }
        Ok(grad
            .iter()
            .zip(&self.unclamped)
            .map(|(g, u)| {
                [
                    if u[0] { g[0] * self.contrast } else { 0.0 },
                    if u[1] { g[1] * self.contrast } else { 0.0 },
                    if u[2] { g[2] * self.contrast } else { 0.0 },
                ]
            })
            .collect())
    }
}

pub fn augment_logo_texture(
    texture: &LogoTexture,
    params: &AugmentParams,
) -> Result<(LogoTexture, AugmentTape)> {
    params.validate()?;
    let mut noise_rng = Rng::seeded(params.seed);
    let mut pixels = texture.pixels.clone();
    let mut unclamped = vec![[false; 3]; pixels.len()];
    for (i, px) in pixels.iter_mut().enumerate() {
        if !texture.mask[i] {
            continue;
        }
        for ch in 0..3 {
            let n = if params.noise_amplitude > 0.0 {
                noise_rng.uniform(-params.noise_amplitude, params.noise_amplitude)
            } else {
                0.0
            };
            let v = params.contrast * px[ch] + params.brightness + n;
            unclamped[i][ch] = v > 0.0 && v < 1.0;
            px[ch] = v.clamp(0.0, 1.0);
        }
    }
    let out = LogoTexture::new(texture.width, texture.height, pixels, texture.mask.clone())?;
    Ok((
        out,
        AugmentTape {
            contrast: params.contrast,
            unclamped,
        },
    ))
}

/// Cameras at every `step` degrees from `lo` through `hi`, sharing the
/// base camera's distance, elevation, fov and image size.
pub fn sample_views(lo_deg: i32, hi_deg: i32, step: i32, base: &Camera) -> Result<Vec<Camera>> {
    if lo_deg > hi_deg {
        return Err(Error::Domain(format!("view range [{lo_deg},{hi_deg}]")));
    }
    if step < 1 {
        return Err(Error::Domain(format!("view step {step}")));
    }
    let mut views = Vec::new();
    let mut a = lo_deg;
    while a <= hi_deg {
        views.push(base.with_azimuth(a as f64));
        a += step;
    }
    Ok(views)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{extract_logo_submesh, generate_person_proxy_detailed, TextureCube};
    use crate::rng::Rng;
    use alloc::string::String;

    /// Independent brute-force reference: for every pixel, test every face
    /// with a from-scratch projection + point-in-triangle + depth compare.
    /// No bounding boxes, no incremental z-buffer.
    fn oracle_render(mesh: &TriMesh, camera: &Camera) -> (Vec<bool>, Vec<i32>, Vec<f64>) {
        let size = camera.image_size;
        let half = size as f64 / 2.0;
        let focal = half / math::tan(camera.fov_deg * math::DEG_TO_RAD / 2.0);

        let project = |v: [f64; 3]| -> Option<(f64, f64, f64)> {
            let az = camera.azimuth_deg * math::DEG_TO_RAD;
            let (sa, ca) = (math::sin(az), math::cos(az));
            let x = v[0] * ca + v[2] * sa;
            let y = v[1];
            let z = -v[0] * sa + v[2] * ca;
            let el = camera.elevation_deg * math::DEG_TO_RAD;
            let (se, ce) = (math::sin(el), math::cos(el));
            let cam = [0.0, camera.distance * se, camera.distance * ce];
            let rel = [x - cam[0], y - cam[1], z - cam[2]];
            let fwd = [0.0, -se, -ce];
            let up = [0.0, ce, -se];
            let xc = rel[0];
            let yc = rel[0] * up[0] + rel[1] * up[1] + rel[2] * up[2];
            let zc = rel[0] * fwd[0] + rel[1] * fwd[1] + rel[2] * fwd[2];
            if zc <= NEAR_PLANE {
                None
            } else {
                Some((half + focal * xc / zc, half - focal * yc / zc, zc))
            }
        };

        let verts: Vec<Option<(f64, f64, f64)>> =
            mesh.vertices.iter().map(|&v| project(v)).collect();

        let mut coverage = vec![false; size * size];
        let mut face_id = vec![-1i32; size * size];
        let mut depth = vec![f64::INFINITY; size * size];
        for row in 0..size {
            for col in 0..size {
                let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
                for (fid, face) in mesh.faces.iter().enumerate() {
                    let (Some(a), Some(b), Some(c)) =
                        (verts[face[0]], verts[face[1]], verts[face[2]])
                    else {
                        continue;
                    };
                    let area2 = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
                    if area2 == 0.0 {
                        continue;
                    }
                    let e0 = (c.0 - b.0) * (py - b.1) - (c.1 - b.1) * (px - b.0);
                    let e1 = (a.0 - c.0) * (py - c.1) - (a.1 - c.1) * (px - c.0);
                    let e2 = (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
                    let inside = (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0)
                        || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0);
                    if !inside {
                        continue;
                    }
                    let inv_z = (e0 / area2) / a.2 + (e1 / area2) / b.2 + (e2 / area2) / c.2;
                    let d = 1.0 / inv_z;
                    let p = row * size + col;
                    if d < depth[p] {
                        depth[p] = d;
                        coverage[p] = true;
                        face_id[p] = fid as i32;
                    }
                }
            }
        }
        (coverage, face_id, depth)
    }

    fn random_scene(seed: u64, max_faces: usize) -> (TriMesh, LogoSubmesh, Camera) {
        let mut rng = Rng::seeded(seed);
        let n_verts = 6 + rng.below(40);
        let vertices: Vec<[f64; 3]> = (0..n_verts)
            .map(|_| {
                [
                    rng.uniform(-0.8, 0.8),
                    rng.uniform(-0.8, 0.8),
                    rng.uniform(-0.8, 0.8),
                ]
            })
            .collect();
        let n_faces = 1 + rng.below(max_faces);
        let faces: Vec<[usize; 3]> = (0..n_faces)
            .map(|_| {
                [
                    rng.below(n_verts),
                    rng.below(n_verts),
                    rng.below(n_verts),
                ]
            })
            .collect();
        let mut mesh = TriMesh::new("random", vertices, faces).unwrap();
        for cube in mesh.face_textures.iter_mut() {
            *cube = TextureCube::constant([rng.next_f64(), rng.next_f64(), rng.next_f64()]);
        }
        let n_logo = 1 + rng.below(n_faces);
        let ids: Vec<usize> = (0..n_logo).map(|_| rng.below(n_faces)).collect();
        let logo = extract_logo_submesh(&mesh, &ids).unwrap();
        let mut camera = Camera::benchmark(64);
        camera.azimuth_deg = rng.uniform(-180.0, 180.0);
        (mesh, logo, camera)
    }

    #[test]
    fn mesh_behind_camera_renders_empty() {
        let mesh = TriMesh::new(
            "behind",
            alloc::vec![[0.0, 0.0, 3.0], [0.5, 0.0, 3.0], [0.0, 0.5, 3.0]],
            alloc::vec![[0, 1, 2]],
        )
        .unwrap();
        let logo = extract_logo_submesh(&mesh, &[0]).unwrap();
        let out = render(&mesh, &logo, &Camera::benchmark(32)).unwrap();
        assert!(out.coverage.iter().all(|&c| !c));
        assert!(out.rgb.iter().all(|&p| p == [0.0; 3]));
        assert!(out.face_id.iter().all(|&f| f == -1));
        assert!(out.person_rect().is_none());
    }

    #[test]
    fn single_facing_triangle_hits_center() {
        let mut mesh = TriMesh::new(
            "tri",
            alloc::vec![[-0.5, -0.5, 0.0], [0.5, -0.5, 0.0], [0.0, 0.6, 0.0]],
            alloc::vec![[0, 1, 2]],
        )
        .unwrap();
        mesh.face_textures[0] = TextureCube::constant([1.0, 0.0, 0.0]);
        let logo = extract_logo_submesh(&mesh, &[0]).unwrap();
        let out = render(&mesh, &logo, &Camera::benchmark(64)).unwrap();
        let center = out.pixel_index(32, 32);
        assert!(out.coverage[center]);
        assert_eq!(out.face_id[center], 0);
        assert_eq!(out.rgb[center], [1.0, 0.0, 0.0]);
        assert!(out.logo_mask[center]);
        assert!(out.depth[center] > 0.0 && out.depth[center].is_finite());

        let rect = out.person_rect().unwrap();
        assert!(rect.w > 0.0 && rect.h > 0.0);
        assert!((rect.cx - 0.5).abs() < 0.1);
    }

    #[test]
    fn logo_mask_follows_membership() {
        let mut mesh = TriMesh::new(
            "two",
            alloc::vec![
                [-0.5, -0.5, 0.0],
                [0.5, -0.5, 0.0],
                [0.0, 0.6, 0.0],
                [-0.5, -0.5, -0.5],
                [0.5, -0.5, -0.5],
                [0.0, 0.6, -0.5]
            ],
            alloc::vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        mesh.face_textures[0] = TextureCube::constant([1.0, 0.0, 0.0]);
        // logo on the far face only; near face 0 wins the z-buffer
        let logo = extract_logo_submesh(&mesh, &[1]).unwrap();
        let out = render(&mesh, &logo, &Camera::benchmark(64)).unwrap();
        let center = out.pixel_index(32, 32);
        assert_eq!(out.face_id[center], 0);
        assert!(!out.logo_mask[center]);
    }

    #[test]
    fn rasterizer_matches_bruteforce_oracle() {
        for seed in 0..12u64 {
            let (mesh, logo, camera) = random_scene(seed, 50);
            let out = render(&mesh, &logo, &camera).unwrap();
            let (cov, fid, dep) = oracle_render(&mesh, &camera);
            assert_eq!(out.coverage, cov, "coverage mismatch seed {seed}");
            assert_eq!(out.face_id, fid, "face_id mismatch seed {seed}");
            for (p, (&d1, &d2)) in out.depth.iter().zip(&dep).enumerate() {
                if cov[p] {
                    assert_eq!(d1, d2, "depth mismatch seed {seed} pixel {p}");
                }
            }
            // logo_mask ⊆ coverage, and matches membership of the hit face
            let mut is_logo = alloc::vec![false; mesh.faces.len()];
            for &id in &logo.face_ids {
                is_logo[id] = true;
            }
            for p in 0..out.logo_mask.len() {
                if out.logo_mask[p] {
                    assert!(out.coverage[p]);
                }
                if out.coverage[p] {
                    assert_eq!(out.logo_mask[p], is_logo[out.face_id[p] as usize]);
                }
            }
        }
    }

    #[test]
    fn backward_routes_pixel_grads_to_faces() {
        let mut mesh = TriMesh::new(
            "tri",
            alloc::vec![[-0.5, -0.5, 0.0], [0.5, -0.5, 0.0], [0.0, 0.6, 0.0]],
            alloc::vec![[0, 1, 2]],
        )
        .unwrap();
        mesh.face_textures[0] = TextureCube::constant([0.3, 0.3, 0.3]);
        let logo = extract_logo_submesh(&mesh, &[0]).unwrap();
        let out = render(&mesh, &logo, &Camera::benchmark(64)).unwrap();
        let covered = out.coverage.iter().filter(|&&c| c).count();
        assert!(covered > 10);

        let zero = alloc::vec![[0.0;3]; 64 * 64];
        let g0 = render_backward(&zero, &out, 1).unwrap();
        assert_eq!(g0[0], [0.0; 3]);

        let red = alloc::vec![[1.0, 0.0, 0.0]; 64 * 64];
        let g = render_backward(&red, &out, 1).unwrap();
        assert_eq!(g[0][0], covered as f64);
        assert_eq!(g[0][1], 0.0);

        assert!(render_backward(&red[..10], &out, 1).is_err());
    }

    #[test]
    fn composite_selects_per_pixel() {
        let (mesh, logo, camera) = random_scene(3, 20);
        let out = render(&mesh, &logo, &camera).unwrap();
        let mut rng = Rng::seeded(8);
        let bg: Vec<[f64; 3]> = (0..64 * 64)
            .map(|_| [rng.next_f64(), rng.next_f64(), rng.next_f64()])
            .collect();
        let img = composite(&out, &bg).unwrap();
        for p in 0..img.len() {
            let expect = if out.coverage[p] { out.rgb[p] } else { bg[p] };
            assert_eq!(img[p], expect);
        }
        // gradient only passes through covered pixels
        let ones = alloc::vec![[1.0;3]; 64 * 64];
        let back = composite_backward(&ones, &out).unwrap();
        for p in 0..back.len() {
            assert_eq!(back[p], if out.coverage[p] { [1.0; 3] } else { [0.0; 3] });
        }
    }

    #[test]
    fn composite_of_empty_render_is_background() {
        let mesh = TriMesh::new(
            "behind",
            alloc::vec![[0.0, 0.0, 3.0], [0.5, 0.0, 3.0], [0.0, 0.5, 3.0]],
            alloc::vec![[0, 1, 2]],
        )
        .unwrap();
        let logo = extract_logo_submesh(&mesh, &[0]).unwrap();
        let out = render(&mesh, &logo, &Camera::benchmark(32)).unwrap();
        let bg = alloc::vec![[0.25, 0.5, 0.75]; 32 * 32];
        assert_eq!(composite(&out, &bg).unwrap(), bg);
        assert!(composite(&out, &bg[..100]).is_err());
    }

    #[test]
    fn augment_identity_and_saturation() {
        let mask = alloc::vec![true; 16];
        let tex = LogoTexture::constant(4, 4, [0.5; 3], mask).unwrap();

        let (same, tape) = augment_logo_texture(&tex, &AugmentParams::identity()).unwrap();
        assert_eq!(same.pixels, tex.pixels);
        let g = tape.backward(&alloc::vec![[1.0;3]; 16]).unwrap();
        assert!(g.iter().all(|&p| p == [1.0; 3]));

        // 0.5*0.5 + 0.9 = 1.15 → clamps to 1, gradient 0
        let params = AugmentParams {
            contrast: 0.5,
            brightness: 0.9,
            noise_amplitude: 0.0,
            seed: 0,
        };
        let (sat, tape) = augment_logo_texture(&tex, &params).unwrap();
        assert!(sat.pixels.iter().all(|&p| p == [1.0; 3]));
        let g = tape.backward(&alloc::vec![[1.0;3]; 16]).unwrap();
        assert!(g.iter().all(|&p| p == [0.0; 3]));
    }

    #[test]
    fn augment_same_seed_is_reproducible() {
        let mut mask = alloc::vec![true; 64];
        mask[0] = false; // out-of-mask pixel must pass through untouched
        let mut rng = Rng::seeded(4);
        let pixels: Vec<[f64; 3]> = (0..64)
            .map(|_| [rng.next_f64(), rng.next_f64(), rng.next_f64()])
            .collect();
        let tex = LogoTexture::new(8, 8, pixels, mask).unwrap();
        let params = AugmentParams {
            contrast: 0.8,
            brightness: 0.1,
            noise_amplitude: 0.1,
            seed: 1234,
        };
        let (a, _) = augment_logo_texture(&tex, &params).unwrap();
        let (b, _) = augment_logo_texture(&tex, &params).unwrap();
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.pixels[0], tex.pixels[0]);
        assert_ne!(a.pixels[1], tex.pixels[1]);
    }

    #[test]
    fn view_sampling_counts() {
        let base = Camera::benchmark(64);
        assert_eq!(sample_views(-10, 10, 1, &base).unwrap().len(), 21);
        let single = sample_views(0, 0, 1, &base).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].azimuth_deg, 0.0);
        assert_eq!(sample_views(-50, 50, 1, &base).unwrap().len(), 101);
        assert!(sample_views(10, -10, 1, &base).is_err());
    }

    #[test]
    fn benchmark_render_of_proxy_is_mirror_symmetric() {
        let mesh = generate_person_proxy_detailed(0.9, 0.25, 16, 3).unwrap();
        let panel = crate::mesh::proxy_front_panel(&mesh, 1.0).unwrap();
        let logo = extract_logo_submesh(&mesh, &panel).unwrap();
        let out = render(&mesh, &logo, &Camera::benchmark(64)).unwrap();
        assert!(out.coverage.iter().any(|&c| c));
        let mut mirrored = String::new();
        for r in 0..64 {
            for c in 0..64 {
                if out.coverage[r * 64 + c] != out.coverage[r * 64 + (63 - c)] {
                    mirrored = alloc::format!("asymmetric at ({r},{c})");
                }
            }
        }
        assert!(mirrored.is_empty(), "{mirrored}");
    }

    #[test]
    fn camera_validation() {
        let mut cam = Camera::benchmark(64);
        cam.distance = 0.0;
        assert!(cam.validate().is_err());
        let mut cam = Camera::benchmark(8);
        assert!(cam.validate().is_err());
        cam.image_size = 64;
        cam.fov_deg = 180.0;
        assert!(cam.validate().is_err());
    }
}
