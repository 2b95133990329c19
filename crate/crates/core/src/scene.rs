//! Mesh ingestion and orbital viewpoint generation.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// One triangle: three (position index, uv index) pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Face {
    pub vertices: [u32; 3],
    pub uvs: [u32; 3],
}

/// A triangle mesh with a UV atlas, recentred so its bounding box is centred
/// on the origin.
#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Vector3<f64>>,
    uvs: Vec<[f64; 2]>,
    faces: Vec<Face>,
}

impl Mesh {
    /// Validates indices and uv ranges, then translates the vertices so the
    /// bounding-box centre sits at the origin.
    pub fn new(vertices: Vec<Vector3<f64>>, uvs: Vec<[f64; 2]>, faces: Vec<Face>) -> Result<Self> {
        if faces.is_empty() {
            return Err(Error::InvalidMesh("mesh has no faces".into()));
        }
        for (i, face) in faces.iter().enumerate() {
            if face.vertices.iter().any(|&v| v as usize >= vertices.len()) {
                return Err(Error::InvalidMesh(format!("face {i} references a missing vertex")));
            }
            if face.uvs.iter().any(|&t| t as usize >= uvs.len()) {
                return Err(Error::InvalidMesh(format!("face {i} references a missing uv")));
            }
        }
        if let Some(uv) = uvs
            .iter()
            .find(|uv| !uv.iter().all(|c| (0.0..=1.0).contains(c)))
        {
            return Err(Error::InvalidMesh(format!("uv {uv:?} outside [0,1]")));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh("non-finite vertex position".into()));
        }

        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let centre = (lo + hi) * 0.5;
        let vertices = vertices.into_iter().map(|v| v - centre).collect();
        Ok(Self { vertices, uvs, faces })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn uvs(&self) -> &[[f64; 2]] {
        &self.uvs
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// World-space corners of face `i`.
    pub fn face_positions(&self, i: usize) -> [Vector3<f64>; 3] {
        let f = &self.faces[i];
        f.vertices.map(|v| self.vertices[v as usize])
    }

    /// Texture coordinates of face `i`.
    pub fn face_uvs(&self, i: usize) -> [[f64; 2]; 3] {
        let f = &self.faces[i];
        f.uvs.map(|t| self.uvs[t as usize])
    }

    /// Radius of the smallest origin-centred sphere containing every vertex.
    pub fn bounding_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Reads the `v`/`vt`/`f` subset of a Wavefront OBJ file. Polygons are
/// fan-triangulated; every other record type is ignored.
pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_obj(&text, path)
}

/// [`load_obj`] on an in-memory string; `origin` only labels errors.
pub fn parse_obj(text: &str, origin: &Path) -> Result<Mesh> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };

    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut fields = line.split_whitespace();
        let Some(tag) = fields.next() else { continue };
        match tag {
            "v" => {
                let xyz = parse_floats(fields, 3).map_err(|m| err(lineno, m))?;
                vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
            }
            "vt" => {
                let uv = parse_floats(fields, 2).map_err(|m| err(lineno, m))?;
                uvs.push([uv[0], uv[1]]);
            }
            "f" => {
                let mut corners = Vec::new();
                for token in fields {
                    let mut parts = token.split('/');
                    let v = parts.next().unwrap_or("");
                    let t = parts.next().unwrap_or("");
                    if t.is_empty() {
                        return Err(err(lineno, format!("face corner `{token}` has no uv index")));
                    }
                    let v = resolve_index(v, vertices.len())
                        .map_err(|m| err(lineno, format!("face vertex {m}")))?;
                    let t = resolve_index(t, uvs.len())
                        .map_err(|m| err(lineno, format!("face uv {m}")))?;
                    corners.push((v, t));
                }
                if corners.len() < 3 {
                    return Err(err(lineno, "face needs at least 3 corners".into()));
                }
                for i in 1..corners.len() - 1 {
                    let (a, b, c) = (corners[0], corners[i], corners[i + 1]);
                    faces.push(Face {
                        vertices: [a.0, b.0, c.0],
                        uvs: [a.1, b.1, c.1],
                    });
                }
            }
            _ => {}
        }
    }

    if uvs.is_empty() {
        return Err(err(text.lines().count(), "file has no `vt` records".into()));
    }
    Mesh::new(vertices, uvs, faces).map_err(|e| match e {
        Error::InvalidMesh(msg) => err(0, msg),
        other => other,
    })
}

fn parse_floats<'a>(fields: impl Iterator<Item = &'a str>, n: usize) -> Result<Vec<f64>, String> {
    let values = fields
        .take(n)
        .map(|s| s.parse::<f64>().map_err(|_| format!("bad number `{s}`")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() < n {
        return Err(format!("expected {n} numbers, found {}", values.len()));
    }
    Ok(values)
}

// OBJ indices are 1-based; negative values count back from the latest record.
fn resolve_index(token: &str, count: usize) -> Result<u32, String> {
    let raw: i64 = token.parse().map_err(|_| format!("index `{token}` is not an integer"))?;
    let idx = match raw {
        0 => return Err("index 0 is invalid".into()),
        r if r > 0 => r - 1,
        r => count as i64 + r,
    };
    if idx < 0 || idx as usize >= count {
        return Err(format!("index {raw} out of range ({count} defined)"));
    }
    Ok(idx as u32)
}

/// One orbital viewpoint around the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    azimuth_deg: f64,
    elevation_deg: f64,
    distance_m: f64,
    fov_deg: f64,
    image_w: usize,
    image_h: usize,
}

pub const MIN_IMAGE_DIM: usize = 16;

impl CameraPose {
    pub fn azimuth_deg(&self) -> f64 {
        self.azimuth_deg
    }

    pub fn elevation_deg(&self) -> f64 {
        self.elevation_deg
    }

    pub fn distance_m(&self) -> f64 {
        self.distance_m
    }

    pub fn fov_deg(&self) -> f64 {
        self.fov_deg
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.image_w, self.image_h)
    }

    pub fn eye(&self) -> Vector3<f64> {
        let (az, el) = (self.azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        self.distance_m * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }

    pub fn camera(&self) -> Camera {
        Camera::look_at(
            self.eye(),
            Vector3::zeros(),
            self.fov_deg,
            self.image_w,
            self.image_h,
        )
    }
}

/// Builds a pose on the sphere of radius `distance_m`, looking at the origin.
/// Azimuth wraps into `[0, 360)`.
pub fn make_pose(
    azimuth_deg: f64,
    elevation_deg: f64,
    distance_m: f64,
    fov_deg: f64,
    image_w: usize,
    image_h: usize,
) -> Result<CameraPose> {
    if !azimuth_deg.is_finite() {
        return Err(Error::InvalidPose(format!("azimuth {azimuth_deg} is not finite")));
    }
    if !(0.0..=90.0).contains(&elevation_deg) {
        return Err(Error::InvalidPose(format!("elevation {elevation_deg} outside [0, 90]")));
    }
    if !(distance_m > 0.0 && distance_m.is_finite()) {
        return Err(Error::InvalidPose(format!("distance {distance_m} must be positive")));
    }
    if !(fov_deg > 0.0 && fov_deg < 180.0) {
        return Err(Error::InvalidPose(format!("fov {fov_deg} outside (0, 180)")));
    }
    if image_w < MIN_IMAGE_DIM || image_h < MIN_IMAGE_DIM {
        return Err(Error::InvalidPose(format!(
            "image {image_w}x{image_h} smaller than {MIN_IMAGE_DIM}x{MIN_IMAGE_DIM}"
        )));
    }
    Ok(CameraPose {
        azimuth_deg: azimuth_deg.rem_euclid(360.0),
        elevation_deg,
        distance_m,
        fov_deg,
        image_w,
        image_h,
    })
}

/// Pinhole camera with a symmetric vertical field of view and square pixels.
#[derive(Clone, Copy, Debug)]
pub struct Camera {
    pub eye: Vector3<f64>,
    pub forward: Vector3<f64>,
    pub right: Vector3<f64>,
    pub up: Vector3<f64>,
    /// Focal length in pixels.
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Right-handed look-at with world +Z up. When the view direction is
    /// parallel to +Z the up hint falls back to world +X.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        fov_deg: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = (target - eye).normalize();
        let mut hint = Vector3::z();
        if forward.cross(&hint).norm() < 1e-9 {
            hint = Vector3::x();
        }
        let right = forward.cross(&hint).normalize();
        let up = right.cross(&forward);
        let focal_px = 0.5 * height as f64 / (0.5 * fov_deg.to_radians()).tan();
        Self {
            eye,
            forward,
            right,
            up,
            focal_px,
            width,
            height,
        }
    }

    /// Camera-space coordinates `(right, up, depth)` of a world point.
    pub fn to_view(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.eye;
        Vector3::new(d.dot(&self.right), d.dot(&self.up), d.dot(&self.forward))
    }

    /// Continuous pixel coordinates of a view-space point with positive depth.
    /// Pixel `(x, y)` covers `[x, x+1) × [y, y+1)`, y grows downward.
    pub fn project_view(&self, v: &Vector3<f64>) -> [f64; 2] {
        [
            0.5 * self.width as f64 + self.focal_px * v.x / v.z,
            0.5 * self.height as f64 - self.focal_px * v.y / v.z,
        ]
    }
}

/// Cartesian grid of elevations, evenly spaced azimuths and distances.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseGrid {
    elevations: Vec<f64>,
    azimuth_step_deg: f64,
    distances: Vec<f64>,
}

impl PoseGrid {
    pub fn new(elevations: Vec<f64>, azimuth_step_deg: f64, distances: Vec<f64>) -> Result<Self> {
        if elevations.is_empty() || distances.is_empty() {
            return Err(Error::InvalidGrid("elevation and distance lists must be nonempty".into()));
        }
        if !(azimuth_step_deg > 0.0 && azimuth_step_deg <= 360.0) {
            return Err(Error::InvalidGrid(format!("azimuth step {azimuth_step_deg} outside (0, 360]")));
        }
        let count = 360.0 / azimuth_step_deg;
        if (count - count.round()).abs() > 1e-9 {
            return Err(Error::InvalidGrid(format!("azimuth step {azimuth_step_deg} does not divide 360")));
        }
        if let Some(d) = distances.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidGrid(format!("distance {d} must be positive")));
        }
        if let Some(e) = elevations.iter().find(|e| !(0.0..=90.0).contains(*e)) {
            return Err(Error::InvalidGrid(format!("elevation {e} outside [0, 90]")));
        }
        Ok(Self {
            elevations,
            azimuth_step_deg,
            distances,
        })
    }

    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }

    pub fn azimuth_step_deg(&self) -> f64 {
        self.azimuth_step_deg
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn azimuth_count(&self) -> usize {
        (360.0 / self.azimuth_step_deg).round() as usize
    }

    pub fn len(&self) -> usize {
        self.elevations.len() * self.azimuth_count() * self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Expands a grid into poses ordered distance-major, then elevation, then
/// azimuth.
pub fn pose_grid(grid: &PoseGrid, fov_deg: f64, image_w: usize, image_h: usize) -> Result<Vec<CameraPose>> {
    let mut poses = Vec::with_capacity(grid.len());
    for &d in &grid.distances {
        for &el in &grid.elevations {
            for a in 0..grid.azimuth_count() {
                let az = a as f64 * grid.azimuth_step_deg;
                poses.push(make_pose(az, el, d, fov_deg, image_w, image_h)?);
            }
        }
    }
    Ok(poses)
}

/// Draws `k` distinct poses uniformly without replacement.
pub fn sample_minibatch<R: Rng + ?Sized>(poses: &[CameraPose], k: usize, rng: &mut R) -> Result<Vec<CameraPose>> {
    if k == 0 || k > poses.len() {
        return Err(Error::NotEnoughPoses {
            requested: k,
            available: poses.len(),
        });
    }
    Ok(index::sample(rng, poses.len(), k)
        .into_iter()
        .map(|i| poses[i])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const QUAD: &str = "v -1 -1 0\nv 1 -1 0\nv 1 1 0\nv -1 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nf 1/1 2/2 3/3\nf 1/1 3/3 4/4\n";

    #[test]
    fn parses_single_quad() {
        let mesh = parse_obj(QUAD, Path::new("quad.obj")).unwrap();
        assert_eq!(mesh.faces().len(), 2);
        assert_eq!(mesh.vertices().len(), 4);
    }

    #[test]
    fn polygon_is_fan_triangulated() {
        let src = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nf 1/1/1 2/2/1 3/3/1 4/4/1\n";
        let mesh = parse_obj(src, Path::new("poly.obj")).unwrap();
        assert_eq!(mesh.faces().len(), 2);
        assert_eq!(mesh.faces()[1].vertices, [0, 2, 3]);
    }

    #[test]
    fn out_of_range_face_names_line() {
        let src = QUAD.replace("f 1/1 3/3 4/4", "f 1/1 3/3 9/4");
        let e = parse_obj(&src, Path::new("bad.obj")).unwrap_err();
        match e {
            Error::Parse { line, ref msg, .. } => {
                assert_eq!(line, 10);
                assert!(msg.contains('9'), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn face_without_uv_is_rejected() {
        let src = QUAD.replace("f 1/1 2/2 3/3", "f 1 2 3");
        assert!(matches!(
            parse_obj(&src, Path::new("nouv.obj")),
            Err(Error::Parse { line: 9, .. })
        ));
    }

    #[test]
    fn mesh_is_centred() {
        let src = QUAD.replace("v -1 -1 0", "v -1 -1 4");
        let mesh = parse_obj(&src, Path::new("q.obj")).unwrap();
        let zs: Vec<f64> = mesh.vertices().iter().map(|v| v.z).collect();
        assert_eq!(zs, vec![2.0, -2.0, -2.0, -2.0]);
    }

    #[test]
    fn bundled_car_uvs_in_unit_square() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/car.obj");
        let mesh = load_obj(path).unwrap();
        assert!(mesh.faces().len() > 10);
        for uv in mesh.uvs() {
            assert!(uv.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    fn assert_vec_close(a: Vector3<f64>, b: [f64; 3]) {
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn axis_aligned_eyes() {
        let p = make_pose(0.0, 0.0, 10.0, 60.0, 256, 256).unwrap();
        assert_vec_close(p.eye(), [10.0, 0.0, 0.0]);
        assert_vec_close(p.camera().forward, [-1.0, 0.0, 0.0]);
        let p = make_pose(90.0, 0.0, 10.0, 60.0, 256, 256).unwrap();
        assert_vec_close(p.eye(), [0.0, 10.0, 0.0]);
    }

    #[test]
    fn top_down_pose_uses_x_up() {
        let cam = make_pose(0.0, 90.0, 5.0, 60.0, 256, 256).unwrap().camera();
        assert_vec_close(cam.eye, [0.0, 0.0, 5.0]);
        assert_vec_close(cam.forward, [0.0, 0.0, -1.0]);
        assert_vec_close(cam.up, [1.0, 0.0, 0.0]);
        assert!(cam.right.dot(&cam.forward).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_pose_fields() {
        assert!(make_pose(0.0, 0.0, 0.0, 60.0, 64, 64).is_err());
        assert!(make_pose(0.0, -1.0, 5.0, 60.0, 64, 64).is_err());
        assert!(make_pose(0.0, 91.0, 5.0, 60.0, 64, 64).is_err());
        assert!(make_pose(0.0, 0.0, 5.0, 180.0, 64, 64).is_err());
        assert!(make_pose(0.0, 0.0, 5.0, 60.0, 8, 64).is_err());
    }

    #[test]
    fn grid_counts() {
        let els = vec![0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 45.0, 60.0];
        let g = PoseGrid::new(els.clone(), 2.0, vec![10.0]).unwrap();
        assert_eq!(pose_grid(&g, 60.0, 64, 64).unwrap().len(), 1440);
        let g = PoseGrid::new(vec![0.0], 90.0, vec![5.0]).unwrap();
        let poses = pose_grid(&g, 60.0, 64, 64).unwrap();
        let az: Vec<f64> = poses.iter().map(|p| p.azimuth_deg()).collect();
        assert_eq!(az, vec![0.0, 90.0, 180.0, 270.0]);
        let g = PoseGrid::new(els, 2.0, vec![5.0, 7.5, 10.0, 12.5, 15.0]).unwrap();
        assert_eq!(pose_grid(&g, 60.0, 64, 64).unwrap().len(), 7200);
    }

    #[test]
    fn grid_ordering_is_distance_major() {
        let g = PoseGrid::new(vec![0.0, 30.0], 180.0, vec![5.0, 10.0]).unwrap();
        let poses = pose_grid(&g, 60.0, 64, 64).unwrap();
        let keys: Vec<(f64, f64, f64)> = poses
            .iter()
            .map(|p| (p.distance_m(), p.elevation_deg(), p.azimuth_deg()))
            .collect();
        assert_eq!(
            keys,
            vec![
                (5.0, 0.0, 0.0),
                (5.0, 0.0, 180.0),
                (5.0, 30.0, 0.0),
                (5.0, 30.0, 180.0),
                (10.0, 0.0, 0.0),
                (10.0, 0.0, 180.0),
                (10.0, 30.0, 0.0),
                (10.0, 30.0, 180.0),
            ]
        );
        assert_eq!(poses, pose_grid(&g, 60.0, 64, 64).unwrap());
    }

    #[test]
    fn grid_rejects_non_divisor_step() {
        assert!(PoseGrid::new(vec![0.0], 7.0, vec![5.0]).is_err());
        assert!(PoseGrid::new(vec![0.0], 2.0, vec![0.0]).is_err());
    }

    #[test]
    fn eye_distance_matches_radius() {
        let els = vec![0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 45.0, 60.0, 90.0];
        let g = PoseGrid::new(els, 6.0, vec![0.5, 5.0, 7.5, 10.0, 12.5, 15.0, 1000.0]).unwrap();
        for p in pose_grid(&g, 60.0, 64, 64).unwrap() {
            let rel = (p.eye().norm() - p.distance_m()).abs() / p.distance_m();
            assert!(rel < 1e-9);
        }
    }

    #[test]
    fn minibatch_draws() {
        let els = vec![0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 45.0, 60.0];
        let g = PoseGrid::new(els, 2.0, vec![10.0]).unwrap();
        let poses = pose_grid(&g, 60.0, 32, 32).unwrap();

        let full = sample_minibatch(&poses[..20], 20, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut keys: Vec<_> = full.iter().map(|p| (p.elevation_deg() as i64, p.azimuth_deg() as i64)).collect();
        keys.sort();
        let mut expected: Vec<_> = poses[..20].iter().map(|p| (p.elevation_deg() as i64, p.azimuth_deg() as i64)).collect();
        expected.sort();
        assert_eq!(keys, expected);

        let a = sample_minibatch(&poses, 8, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = sample_minibatch(&poses, 8, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);

        for seed in 0..1000 {
            let batch = sample_minibatch(&poses, 8, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for i in 0..batch.len() {
                for j in i + 1..batch.len() {
                    assert_ne!(batch[i], batch[j]);
                }
            }
        }

        assert!(matches!(
            sample_minibatch(&poses[..3], 4, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::NotEnoughPoses { requested: 4, available: 3 })
        ));
    }
}
