//! Software rasterizer with texel provenance.
//!
//! [`rasterize`] records, for every pixel the mesh covers, which texel the
//! nearest-texel sampler reads. That record is both the forward lookup used by
//! [`shade`] and the routing table [`backprop_to_texture`] uses to scatter
//! image gradients back into the texture.

mod image;
mod texture;

use std::path::Path;

pub use self::image::{Background, Image};
pub use self::texture::{GradField, Texture, TextureDims, TrainableMask};

use crate::error::{Error, Result};
use crate::ppm::{self, Depth};
use crate::scene::{Camera, CameraPose, Mesh};

/// Triangles with any corner closer than this to the camera plane are dropped.
pub const NEAR_PLANE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    /// `(col, row)` of the source texel.
    pub texel: (u32, u32),
    /// View-space depth of the visible surface.
    pub depth: f64,
}

/// Per-pixel coverage (the segmentation S) and texel provenance (UV(φ)).
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMap {
    width: usize,
    height: usize,
    texture: TextureDims,
    samples: Vec<Option<Sample>>,
}

impl SampleMap {
    pub fn empty(width: usize, height: usize, texture: TextureDims) -> Self {
        Self {
            width,
            height,
            texture,
            samples: vec![None; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn texture_dims(&self) -> TextureDims {
        self.texture
    }

    #[inline]
    pub fn sample(&self, x: usize, y: usize) -> Option<Sample> {
        self.samples[y * self.width + x]
    }

    pub fn samples(&self) -> &[Option<Sample>] {
        &self.samples
    }

    #[inline]
    pub fn covered(&self, x: usize, y: usize) -> bool {
        self.sample(x, y).is_some()
    }

    pub fn coverage_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_some()).count()
    }

    /// Texel id read by pixel index `p`, if covered.
    #[inline]
    pub fn texel_id(&self, p: usize) -> Option<usize> {
        self.samples[p].map(|s| self.texture.id(s.texel.0 as usize, s.texel.1 as usize))
    }

    /// Distinct sampled texel ids, ascending.
    pub fn sampled_texels(&self) -> Vec<usize> {
        let mut seen = vec![false; self.texture.len()];
        for p in 0..self.samples.len() {
            if let Some(id) = self.texel_id(p) {
                seen[id] = true;
            }
        }
        (0..seen.len()).filter(|&i| seen[i]).collect()
    }
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Rasterizes the mesh as seen from `pose` into a [`SampleMap`] addressing a
/// texture of size `texture`.
pub fn rasterize(mesh: &Mesh, pose: &CameraPose, texture: TextureDims) -> SampleMap {
    rasterize_camera(mesh, &pose.camera(), texture)
}

/// Z-buffered, back-face-agnostic triangle fill sampling pixel centres.
/// Texture coordinates are interpolated perspective-correctly and rounded to
/// the nearest texel. Depth ties keep the lower face index.
pub fn rasterize_camera(mesh: &Mesh, camera: &Camera, texture: TextureDims) -> SampleMap {
    let (w, h) = (camera.width, camera.height);
    let mut map = SampleMap::empty(w, h, texture);
    let mut zbuf = vec![f64::INFINITY; w * h];

    for f in 0..mesh.faces().len() {
        let view = mesh.face_positions(f).map(|p| camera.to_view(&p));
        if view.iter().any(|v| v.z <= NEAR_PLANE) {
            continue;
        }
        let s = view.map(|v| camera.project_view(&v));
        let area = edge(s[0], s[1], s[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let uv = mesh.face_uvs(f);
        let inv_z = view.map(|v| 1.0 / v.z);

        let xmin = s.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let xmax = s.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let ymin = s.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let ymax = s.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        if xmax < 0.0 || ymax < 0.0 || xmin >= w as f64 || ymin >= h as f64 {
            continue;
        }
        let x0 = (xmin - 0.5).ceil().max(0.0) as usize;
        let x1 = ((xmax - 0.5).floor().min(w as f64 - 1.0)).max(-1.0);
        let y0 = (ymin - 0.5).ceil().max(0.0) as usize;
        let y1 = ((ymax - 0.5).floor().min(h as f64 - 1.0)).max(-1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);

        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let b0 = edge(s[1], s[2], p) / area;
                let b1 = edge(s[2], s[0], p) / area;
                let b2 = edge(s[0], s[1], p) / area;
                if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                    continue;
                }
                let iz = b0 * inv_z[0] + b1 * inv_z[1] + b2 * inv_z[2];
                let depth = 1.0 / iz;
                let idx = y * w + x;
                if depth >= zbuf[idx] {
                    continue;
                }
                zbuf[idx] = depth;
                let interp = |c: usize| {
                    (b0 * uv[0][c] * inv_z[0] + b1 * uv[1][c] * inv_z[1] + b2 * uv[2][c] * inv_z[2]) / iz
                };
                map.samples[idx] = Some(Sample {
                    texel: texture.texel_at([interp(0), interp(1)]),
                    depth,
                });
            }
        }
    }
    map
}

fn check_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Nearest-texel lookup F_S: covered pixels copy their texel, the rest are 0.
pub fn shade(map: &SampleMap, texture: &Texture) -> Result<Image> {
    let td = texture.dims();
    check_dims((map.texture.width, map.texture.height), (td.width, td.height))?;
    let mut img = Image::zeros(map.width, map.height);
    for p in 0..map.samples.len() {
        if let Some(id) = map.texel_id(p) {
            img.data[3 * p..3 * p + 3].copy_from_slice(&texture.texel(id));
        }
    }
    Ok(img)
}

/// `S · foreground + (1 − S) · background` with S taken from coverage. Since S
/// is binary every output pixel is an exact copy of one of the inputs.
pub fn composite(foreground: &Image, map: &SampleMap, background: &Image) -> Result<Image> {
    check_dims(map.dims(), foreground.dims())?;
    check_dims(map.dims(), background.dims())?;
    let mut out = background.clone();
    for (p, s) in map.samples.iter().enumerate() {
        if s.is_some() {
            out.data[3 * p..3 * p + 3].copy_from_slice(&foreground.data[3 * p..3 * p + 3]);
        }
    }
    Ok(out)
}

/// Reverse of shade∘composite: each covered pixel's gradient is summed into
/// its source texel. Uncovered pixels only ever reached the background.
pub fn backprop_to_texture(grad_image: &Image, map: &SampleMap) -> Result<GradField> {
    check_dims(map.dims(), grad_image.dims())?;
    let mut grad = vec![0.0; map.texture.len() * 3];
    for p in 0..map.samples.len() {
        if let Some(id) = map.texel_id(p) {
            for c in 0..3 {
                grad[3 * id + c] += grad_image.data[3 * p + c];
            }
        }
    }
    GradField::from_dense(map.texture, grad)
}

/// Renders and composites one view: returns the provenance map and the image
/// fed to the detector.
pub fn render_view(
    mesh: &Mesh,
    texture: &Texture,
    pose: &CameraPose,
    background: &Image,
) -> Result<(SampleMap, Image)> {
    let map = rasterize(mesh, pose, texture.dims());
    let fg = shade(&map, texture)?;
    let img = composite(&fg, &map, background)?;
    Ok((map, img))
}

/// Per-channel heatmap of a gradient field. Each channel is mapped affinely
/// from its own `[min, max]` onto `[0, 255]`; the header comment records the
/// ranges.
pub fn write_grad_heatmap(path: impl AsRef<Path>, field: &GradField) -> Result<()> {
    let g = field.as_slice();
    let mut ranges = [(f64::INFINITY, f64::NEG_INFINITY); 3];
    for px in g.chunks_exact(3) {
        for c in 0..3 {
            ranges[c].0 = ranges[c].0.min(px[c]);
            ranges[c].1 = ranges[c].1.max(px[c]);
        }
    }
    let norm: Vec<f64> = g
        .chunks_exact(3)
        .flat_map(|px| {
            std::array::from_fn::<f64, 3, _>(|c| {
                let (lo, hi) = ranges[c];
                if hi > lo {
                    (px[c] - lo) / (hi - lo)
                } else {
                    0.0
                }
            })
        })
        .collect();
    let comments: Vec<String> = ["r", "g", "b"]
        .iter()
        .zip(ranges)
        .map(|(name, (lo, hi))| format!("{name} min={lo:e} max={hi:e}"))
        .collect();
    let d = field.dims();
    std::fs::write(path, ppm::encode_p6(d.width, d.height, &norm, Depth::Eight, &comments))?;
    Ok(())
}

/// White texels for `ids`, black elsewhere.
pub fn write_texel_mask(path: impl AsRef<Path>, dims: TextureDims, ids: &[usize]) -> Result<()> {
    let mut rgb = vec![0.0; dims.len() * 3];
    for &id in ids {
        rgb[3 * id..3 * id + 3].fill(1.0);
    }
    ppm::write_p6(path, dims.width, dims.height, &rgb, Depth::Eight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{make_pose, parse_obj};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn car() -> Mesh {
        crate::scene::load_obj(concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/car.obj")).unwrap()
    }

    // 2x2 m quad in the y-z plane facing +x
    fn wall() -> Mesh {
        parse_obj(
            "v 0 -1 -1\nv 0 1 -1\nv 0 1 1\nv 0 -1 1\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nf 1/1 2/2 3/3\nf 1/1 3/3 4/4\n",
            Path::new("wall.obj"),
        )
        .unwrap()
    }

    #[test]
    fn close_quad_fills_frame() {
        // half-height of the view at distance d is d*tan(30°); 1.5 < 1/tan(30°)
        let pose = make_pose(0.0, 0.0, 1.5, 60.0, 32, 32).unwrap();
        let map = rasterize(&wall(), &pose, TextureDims::new(8, 8).unwrap());
        assert_eq!(map.coverage_count(), 32 * 32);
    }

    #[test]
    fn quad_uv_orientation() {
        let pose = make_pose(0.0, 0.0, 1.5, 60.0, 32, 32).unwrap();
        let map = rasterize(&wall(), &pose, TextureDims::new(8, 8).unwrap());
        // camera at +x looking toward -x; its right vector is +y, so the left
        // edge of the frame sees -y (u = 0) and the top row sees +z (v = 1).
        assert_eq!(map.sample(0, 0).unwrap().texel, (0, 0));
        assert_eq!(map.sample(31, 31).unwrap().texel, (7, 7));
    }

    #[test]
    fn looking_away_covers_nothing() {
        let cam = Camera::look_at(Vector3::new(10.0, 0.0, 0.0), Vector3::new(20.0, 0.0, 0.0), 60.0, 32, 32);
        let map = rasterize_camera(&car(), &cam, TextureDims::new(16, 16).unwrap());
        assert_eq!(map.coverage_count(), 0);
        assert!(map.sampled_texels().is_empty());
    }

    #[test]
    fn farther_views_sample_fewer_texels() {
        let mesh = car();
        let dims = TextureDims::new(64, 64).unwrap();
        for &(az, el) in &[(0.0, 0.0), (45.0, 15.0), (90.0, 30.0), (200.0, 60.0), (300.0, 10.0)] {
            let mut last = (usize::MAX, usize::MAX);
            for d in [5.0, 7.5, 10.0, 12.5, 15.0] {
                let map = rasterize(&mesh, &make_pose(az, el, d, 60.0, 64, 64).unwrap(), dims);
                let now = (map.coverage_count(), map.sampled_texels().len());
                assert!(now.0 <= last.0 && now.1 <= last.1, "az {az} el {el} d {d}: {now:?} after {last:?}");
                last = now;
            }
        }
        let near = rasterize(&mesh, &make_pose(30.0, 10.0, 5.0, 60.0, 64, 64).unwrap(), dims);
        let far = rasterize(&mesh, &make_pose(30.0, 10.0, 15.0, 60.0, 64, 64).unwrap(), dims);
        assert!(far.coverage_count() < near.coverage_count());
        assert!(far.sampled_texels().len() < near.sampled_texels().len());
    }

    #[test]
    fn covered_texels_in_bounds_and_deterministic() {
        let mesh = car();
        let dims = TextureDims::new(37, 23).unwrap();
        let pose = make_pose(123.0, 20.0, 6.0, 60.0, 48, 40).unwrap();
        let a = rasterize(&mesh, &pose, dims);
        for s in a.samples().iter().flatten() {
            assert!((s.texel.0 as usize) < dims.width && (s.texel.1 as usize) < dims.height);
            assert!(s.depth > 0.0);
        }
        assert_eq!(a, rasterize(&mesh, &pose, dims));
    }

    #[test]
    fn depth_tie_keeps_lower_face() {
        // the same quad twice with different uvs; face 0/1 must win everywhere
        let src = "v 0 -1 -1\nv 0 1 -1\nv 0 1 1\nv 0 -1 1\nvt 0 0\nvt 0.1 0\nvt 0.1 0.1\nvt 0 0.1\nvt 0.9 0.9\nvt 1 0.9\nvt 1 1\nvt 0.9 1\n\
                   f 1/1 2/2 3/3\nf 1/1 3/3 4/4\nf 1/5 2/6 3/7\nf 1/5 3/7 4/8\n";
        let mesh = parse_obj(src, Path::new("dup.obj")).unwrap();
        let pose = make_pose(0.0, 0.0, 3.0, 60.0, 32, 32).unwrap();
        let map = rasterize(&mesh, &pose, TextureDims::new(10, 10).unwrap());
        assert!(map.coverage_count() > 0);
        for s in map.samples().iter().flatten() {
            assert_eq!(s.texel.0, 0);
            assert_eq!(s.texel.1, 9);
        }
    }

    fn gray_texture(dims: TextureDims) -> Texture {
        Texture::uniform([0.5; 3], TrainableMask::all(dims))
    }

    #[test]
    fn shade_constant_texture() {
        let dims = TextureDims::new(16, 16).unwrap();
        let map = rasterize(&car(), &make_pose(10.0, 10.0, 6.0, 60.0, 32, 32).unwrap(), dims);
        let img = shade(&map, &gray_texture(dims)).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let expect = if map.covered(x, y) { [0.5; 3] } else { [0.0; 3] };
                assert_eq!(img.pixel(x, y), expect);
            }
        }
        let empty = SampleMap::empty(32, 32, dims);
        assert!(shade(&empty, &gray_texture(dims)).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shade_single_red_texel() {
        let dims = TextureDims::new(16, 16).unwrap();
        let map = rasterize(&car(), &make_pose(30.0, 20.0, 5.0, 60.0, 64, 64).unwrap(), dims);
        let target = map.sampled_texels()[3];
        let mut tex = gray_texture(dims);
        tex.set_texel_unmasked(target, [1.0, 0.0, 0.0]);
        let img = shade(&map, &tex).unwrap();
        // inverse index: pixels whose provenance is the target texel
        let expected = (0..64 * 64).filter(|&p| map.texel_id(p) == Some(target)).count();
        let red = img.data.chunks_exact(3).filter(|px| px == &[1.0, 0.0, 0.0]).count();
        assert!(expected > 0);
        assert_eq!(red, expected);
    }

    #[test]
    fn composite_selects_per_pixel() {
        let dims = TextureDims::new(4, 4).unwrap();
        let fg = Image::from_fn(16, 16, |x, y| [x as f64 / 16.0, y as f64 / 16.0, 0.25]);
        let bg = Image::from_fn(16, 16, |_, y| [0.9, 0.1, y as f64 / 32.0]);

        let none = SampleMap::empty(16, 16, dims);
        assert_eq!(composite(&fg, &none, &bg).unwrap(), bg);

        let mut all = SampleMap::empty(16, 16, dims);
        let mut checker = SampleMap::empty(16, 16, dims);
        for p in 0..256 {
            let s = Some(Sample { texel: (0, 0), depth: 1.0 });
            all.samples[p] = s;
            if (p % 16 + p / 16) % 2 == 0 {
                checker.samples[p] = s;
            }
        }
        assert_eq!(composite(&fg, &all, &bg).unwrap(), fg);

        let out = composite(&fg, &checker, &bg).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let expect = if (x + y) % 2 == 0 { fg.pixel(x, y) } else { bg.pixel(x, y) };
                assert_eq!(out.pixel(x, y), expect);
            }
        }
        assert!(composite(&fg, &SampleMap::empty(8, 16, dims), &bg).is_err());
    }

    #[test]
    fn backprop_accumulates() {
        let dims = TextureDims::new(4, 4).unwrap();
        let mut map = SampleMap::empty(4, 4, dims);
        map.samples[0] = Some(Sample { texel: (2, 1), depth: 1.0 });
        map.samples[5] = Some(Sample { texel: (2, 1), depth: 1.0 });
        let mut g = Image::zeros(4, 4);
        g.data[0..3].copy_from_slice(&[1.0, 2.0, 3.0]);
        g.data[15..18].copy_from_slice(&[0.5, -2.0, 1.0]);
        g.data[30..33].copy_from_slice(&[9.0, 9.0, 9.0]); // pixel 10, uncovered
        let field = backprop_to_texture(&g, &map).unwrap();
        assert_eq!(field.get(dims.id(2, 1)), [1.5, 0.0, 4.0]);
        assert_eq!(field.touched(), &[dims.id(2, 1)]);

        let zero = backprop_to_texture(&Image::zeros(4, 4), &map).unwrap();
        assert!(zero.touched().is_empty());
    }

    #[test]
    fn backprop_matches_scatter_oracle() {
        let dims = TextureDims::new(16, 16).unwrap();
        let map = rasterize(&car(), &make_pose(300.0, 25.0, 5.0, 60.0, 48, 48).unwrap(), dims);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Image::from_fn(48, 48, |_, _| std::array::from_fn(|_| rng.random_range(-1.0..1.0)));

        let mut oracle = vec![[0.0f64; 3]; dims.len()];
        for y in 0..48 {
            for x in 0..48 {
                if let Some(s) = map.sample(x, y) {
                    let t = &mut oracle[s.texel.1 as usize * 16 + s.texel.0 as usize];
                    let px = g.pixel(x, y);
                    for c in 0..3 {
                        t[c] += px[c];
                    }
                }
            }
        }
        let field = backprop_to_texture(&g, &map).unwrap();
        for (id, expect) in oracle.iter().enumerate() {
            assert_eq!(&field.get(id), expect);
        }
    }

    #[test]
    fn unsampled_texel_does_not_change_image() {
        let dims = TextureDims::new(32, 32).unwrap();
        let mesh = car();
        let pose = make_pose(10.0, 5.0, 12.0, 60.0, 32, 32).unwrap();
        let map = rasterize(&mesh, &pose, dims);
        let sampled = map.sampled_texels();
        let unsampled = (0..dims.len()).find(|i| sampled.binary_search(i).is_err()).unwrap();
        let tex = gray_texture(dims);
        let mut tex2 = tex.clone();
        tex2.set_texel_unmasked(unsampled, [1.0, 0.0, 1.0]);
        assert_eq!(shade(&map, &tex).unwrap(), shade(&map, &tex2).unwrap());
    }

    #[test]
    fn heatmap_header_records_ranges() {
        let dims = TextureDims::new(2, 1).unwrap();
        let field = GradField::from_dense(dims, vec![-1.0, 0.0, 2.0, 3.0, 0.0, 2.0]).unwrap();
        let dir = std::env::temp_dir().join(format!("texcamo-heat-{}", std::process::id()));
        write_grad_heatmap(&dir, &field).unwrap();
        let bytes = std::fs::read(&dir).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("r min=-1e0 max=3e0"), "{text}");
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 0, 0, 255, 0, 0]);
        std::fs::remove_file(dir).ok();
    }
}
