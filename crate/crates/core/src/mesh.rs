//! Triangle meshes, a Wavefront OBJ subset, logo submesh extraction and the
//! procedural person proxy used when no external mesh assets are available.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Per-face color cube edge length. Each face carries `Q^3` RGB samples.
pub const TEXTURE_CUBE_Q: usize = 4;

/// RGB sample block attached to one mesh face. The pipeline always fills a
/// cube with one constant color, but the full sample block is kept so the
/// renderer's centroid sampling is well defined for any cube content.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureCube {
    colors: Vec<[f64; 3]>,
}

impl TextureCube {
    /// Cube with every sample set to `color`. Channels must be in [0,1].
    pub fn constant(color: [f64; 3]) -> Self {
        debug_assert!(color.iter().all(|c| (0.0..=1.0).contains(c)));
        TextureCube {
            colors: vec![color; TEXTURE_CUBE_Q * TEXTURE_CUBE_Q * TEXTURE_CUBE_Q],
        }
    }

    pub fn samples(&self) -> &[[f64; 3]] {
        &self.colors
    }

    /// Centroid color sample: the sample nearest the cube center (index
    /// q/2 along each axis). For a constant-filled cube this is exactly
    /// the face color.
    pub fn centroid_color(&self) -> [f64; 3] {
        let q = TEXTURE_CUBE_Q;
        let c = q / 2;
        self.colors[(c * q + c) * q + c]
    }
}

impl Default for TextureCube {
    fn default() -> Self {
        TextureCube::constant([0.5, 0.5, 0.5])
    }
}

/// Triangle mesh with one texture cube per face.
#[derive(Debug, Clone)]
pub struct TriMesh {
    pub name: String,
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub face_textures: Vec<TextureCube>,
}

impl TriMesh {
    pub fn new(name: &str, vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if faces.is_empty() {
            return Err(Error::Domain("mesh must have at least one face".into()));
        }
        for (i, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= vertices.len() {
                    return Err(Error::Index(format!(
                        "face {i} references vertex {v}, mesh has {}",
                        vertices.len()
                    )));
                }
            }
        }
        let face_textures = vec![TextureCube::default(); faces.len()];
        Ok(TriMesh {
            name: name.to_string(),
            vertices,
            faces,
            face_textures,
        })
    }

    pub fn face_centroid(&self, face: usize) -> [f64; 3] {
        let [a, b, c] = self.faces[face];
        let (va, vb, vc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        [
            (va[0] + vb[0] + vc[0]) / 3.0,
            (va[1] + vb[1] + vc[1]) / 3.0,
            (va[2] + vb[2] + vc[2]) / 3.0,
        ]
    }
}

/// Face-index subset of a host mesh, with cached centroids and their
/// axis-aligned bounding box.
#[derive(Debug, Clone)]
pub struct LogoSubmesh {
    pub face_ids: Vec<usize>,
    pub centroids: Vec<[f64; 3]>,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    /// Face count of the host mesh at extraction time; used to detect a
    /// submesh being replayed against the wrong mesh.
    pub host_face_count: usize,
}

/// Extract a logo submesh. Duplicate ids are dropped (first occurrence
/// kept); the remaining order is the input order.
pub fn extract_logo_submesh(mesh: &TriMesh, face_ids: &[usize]) -> Result<LogoSubmesh> {
    if face_ids.is_empty() {
        return Err(Error::Domain("logo submesh needs at least one face".into()));
    }
    let mut seen = vec![false; mesh.faces.len()];
    let mut ids = Vec::new();
    for &id in face_ids {
        if id >= mesh.faces.len() {
            return Err(Error::Index(format!(
                "logo face id {id} out of range, mesh has {} faces",
                mesh.faces.len()
            )));
        }
        if !seen[id] {
            seen[id] = true;
            ids.push(id);
        }
    }
    let centroids: Vec<[f64; 3]> = ids.iter().map(|&id| mesh.face_centroid(id)).collect();
    let mut bbox_min = [f64::INFINITY; 3];
    let mut bbox_max = [f64::NEG_INFINITY; 3];
    for c in &centroids {
        for k in 0..3 {
            bbox_min[k] = bbox_min[k].min(c[k]);
            bbox_max[k] = bbox_max[k].max(c[k]);
        }
    }
    Ok(LogoSubmesh {
        face_ids: ids,
        centroids,
        bbox_min,
        bbox_max,
        host_face_count: mesh.faces.len(),
    })
}

/// A set of (mesh, logo) pairs trained jointly.
#[derive(Debug, Clone)]
pub struct MeshScene {
    pub items: Vec<SceneItem>,
}

#[derive(Debug, Clone)]
pub struct SceneItem {
    pub mesh: TriMesh,
    pub logo: LogoSubmesh,
}

impl MeshScene {
    pub fn new(items: Vec<SceneItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Domain("scene needs at least one mesh".into()));
        }
        Ok(MeshScene { items })
    }
}

// ── OBJ subset ──

/// Parse the OBJ subset: `v x y z` and triangle `f` lines (slash forms
/// accepted, only the vertex index is used), `o` names the mesh, everything
/// else is ignored. Indices are 1-based.
pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut name = String::from("mesh");
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<(usize, [usize; 3])> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in coords.iter_mut() {
                    let tok = parts.next().ok_or(Error::Parse {
                        line: line_no,
                        msg: "vertex needs 3 coordinates".into(),
                    })?;
                    *c = tok.parse::<f64>().map_err(|_| Error::Parse {
                        line: line_no,
                        msg: format!("malformed number `{tok}`"),
                    })?;
                }
                vertices.push(coords);
            }
            Some("f") => {
                let refs: Vec<&str> = parts.collect();
                if refs.len() > 3 {
                    return Err(Error::UnsupportedFace {
                        line: line_no,
                        msg: format!("{}-gon, only triangles are supported", refs.len()),
                    });
                }
                if refs.len() < 3 {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "face needs 3 vertex references".into(),
                    });
                }
                let mut idx = [0usize; 3];
                for (k, r) in refs.iter().enumerate() {
                    let first = r.split('/').next().unwrap_or("");
                    let v = first.parse::<usize>().map_err(|_| Error::Parse {
                        line: line_no,
                        msg: format!("malformed vertex index `{first}`"),
                    })?;
                    if v == 0 {
                        return Err(Error::Index(format!(
                            "line {line_no}: OBJ indices are 1-based, got 0"
                        )));
                    }
                    idx[k] = v - 1;
                }
                faces.push((line_no, idx));
            }
            Some("o") => {
                if let Some(n) = parts.next() {
                    name = n.to_string();
                }
            }
            _ => {}
        }
    }

    for (line_no, f) in &faces {
        for &v in f {
            if v >= vertices.len() {
                return Err(Error::Index(format!(
                    "line {line_no}: vertex index {} out of range ({} vertices)",
                    v + 1,
                    vertices.len()
                )));
            }
        }
    }
    TriMesh::new(&name, vertices, faces.into_iter().map(|(_, f)| f).collect())
}

/// Inverse of [`parse_obj`] on the supported subset. Coordinates are
/// printed with shortest round-trip formatting, so parse(write(m))
/// reproduces them exactly.
pub fn write_obj(mesh: &TriMesh) -> String {
    let mut out = String::new();
    out.push_str(&format!("o {}\n", mesh.name));
    for v in &mesh.vertices {
        out.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
    }
    for f in &mesh.faces {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    out
}

// ── person proxy ──

/// Capped-cylinder torso stand-in for a human mesh, with `rows` vertical
/// subdivisions of the side wall. Face count is `2*segments*rows` side
/// triangles plus `2*segments` cap triangles. The cylinder is centered at
/// the origin, axis along +y, front toward +z.
pub fn generate_person_proxy_detailed(
    height: f64,
    radius: f64,
    segments: usize,
    rows: usize,
) -> Result<TriMesh> {
    if segments < 8 {
        return Err(Error::Domain(format!(
            "person proxy needs segments >= 8, got {segments}"
        )));
    }
    if rows < 1 {
        return Err(Error::Domain("person proxy needs rows >= 1".into()));
    }
    if !(height > 0.0) || !(radius > 0.0) {
        return Err(Error::Domain(format!(
            "degenerate proxy dimensions: height {height}, radius {radius}"
        )));
    }

    // ring directions with exact x mirror symmetry: entry n-i is entry i
    // with x negated, so an azimuth-0 render is left-right symmetric
    let mut ring_dir = Vec::with_capacity(segments);
    for i in 0..segments {
        if 2 * i <= segments {
            let theta = core::f64::consts::TAU * i as f64 / segments as f64;
            ring_dir.push((math::sin(theta), math::cos(theta)));
        } else {
            let (s, c) = ring_dir[segments - i];
            ring_dir.push((-s, c));
        }
    }

    let mut vertices = Vec::with_capacity(segments * (rows + 1) + 2);
    for r in 0..=rows {
        let y = -height / 2.0 + height * r as f64 / rows as f64;
        for &(s, c) in &ring_dir {
            vertices.push([radius * s, y, radius * c]);
        }
    }
    let bottom_center = vertices.len();
    vertices.push([0.0, -height / 2.0, 0.0]);
    let top_center = vertices.len();
    vertices.push([0.0, height / 2.0, 0.0]);

    let ring = |r: usize, i: usize| r * segments + (i % segments);
    let mut faces = Vec::with_capacity(2 * segments * rows + 2 * segments);
    for r in 0..rows {
        for i in 0..segments {
            let (a, b) = (ring(r, i), ring(r, i + 1));
            let (c, d) = (ring(r + 1, i + 1), ring(r + 1, i));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    for i in 0..segments {
        faces.push([bottom_center, ring(0, i + 1), ring(0, i)]);
    }
    for i in 0..segments {
        faces.push([top_center, ring(rows, i), ring(rows, i + 1)]);
    }

    let mut mesh = TriMesh::new(&format!("person-proxy-{segments}x{rows}"), vertices, faces)?;
    paint_proxy(&mut mesh);
    Ok(mesh)
}

const SHIRT_COLOR: [f64; 3] = [0.55, 0.22, 0.22];
const PANTS_COLOR: [f64; 3] = [0.2, 0.2, 0.3];
const SKIN_COLOR: [f64; 3] = [0.85, 0.68, 0.55];

/// Deterministic base texture for the proxy: shirt above the waist, pants
/// below, skin-toned caps. Gives the detector a person signature that is
/// distinct from background clutter; logo faces get recolored later anyway.
fn paint_proxy(mesh: &mut TriMesh) {
    let mut r_max = 0.0f64;
    for v in &mesh.vertices {
        r_max = r_max.max(math::sqrt(v[0] * v[0] + v[2] * v[2]));
    }
    for id in 0..mesh.faces.len() {
        let on_wall = mesh.faces[id].iter().all(|&v| {
            let p = mesh.vertices[v];
            math::sqrt(p[0] * p[0] + p[2] * p[2]) >= 0.99 * r_max
        });
        let c = mesh.face_centroid(id);
        let color = if !on_wall {
            SKIN_COLOR
        } else if c[1] >= 0.0 {
            SHIRT_COLOR
        } else {
            PANTS_COLOR
        };
        mesh.face_textures[id] = TextureCube::constant(color);
    }
}

/// Half azimuthal extent of the full-scale front panel.
const PANEL_HALF_ANGLE: f64 = 67.5 * math::DEG_TO_RAD;
/// Half vertical extent of the full-scale front panel, as a height fraction.
const PANEL_HALF_HEIGHT: f64 = 0.35;

/// Side faces of a proxy whose centroid falls inside the front panel window
/// scaled by `scale` (both in azimuth and in height). Returned ascending.
pub fn proxy_front_panel(mesh: &TriMesh, scale: f64) -> Result<Vec<usize>> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Domain(format!("panel scale {scale} not in (0,1]")));
    }
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    let mut r_max = 0.0f64;
    for v in &mesh.vertices {
        y_min = y_min.min(v[1]);
        y_max = y_max.max(v[1]);
        r_max = r_max.max(math::sqrt(v[0] * v[0] + v[2] * v[2]));
    }
    let height = y_max - y_min;
    let mid = (y_max + y_min) / 2.0;

    let mut ids = Vec::new();
    for (id, face) in mesh.faces.iter().enumerate() {
        // side faces have all three vertices on the wall radius
        let on_wall = face.iter().all(|&v| {
            let p = mesh.vertices[v];
            math::sqrt(p[0] * p[0] + p[2] * p[2]) >= 0.99 * r_max
        });
        if !on_wall {
            continue;
        }
        let c = mesh.face_centroid(id);
        let angle = math::abs(libm::atan2(c[0], c[2]));
        if angle <= scale * PANEL_HALF_ANGLE
            && math::abs(c[1] - mid) <= scale * PANEL_HALF_HEIGHT * height
        {
            ids.push(id);
        }
    }
    if ids.is_empty() {
        return Err(Error::Domain(format!(
            "front panel at scale {scale} selects no faces; use a proxy with more rows"
        )));
    }
    Ok(ids)
}

/// Single-row person proxy plus its full-scale front-panel face ids.
pub fn generate_person_proxy(
    height: f64,
    radius: f64,
    segments: usize,
) -> Result<(TriMesh, Vec<usize>)> {
    let mesh = generate_person_proxy_detailed(height, radius, segments, 1)?;
    let panel = proxy_front_panel(&mesh, 1.0)?;
    Ok((mesh, panel))
}
