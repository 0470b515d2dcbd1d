//! Input views and the fixed image-pyramid feature backend.

use nalgebra::{Point2, Vector3};

use crate::camera::{rasterize, Camera};
use crate::mesh::TriMesh;

/// Albedo per instance label; index by label, unlabeled surfaces use the last entry.
const ALBEDO: [[f32; 3]; 3] = [[0.9, 0.55, 0.4], [0.25, 0.45, 0.85], [0.7, 0.7, 0.7]];

/// Interleaved `f32` image, row-major `[height][width][channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

/// Renders an RGB view of a (labeled) scene: per-instance albedo under a
/// headlight, black background.
pub fn render_view(cam: &Camera, scene: &TriMesh) -> Image {
    let raster = rasterize(cam, scene);
    let face_labels = scene.face_labels();
    let (w, h) = (cam.width(), cam.height());
    let rt = cam.rotation().transpose();
    let mut data = vec![0f32; w * h * 3];
    for j in 0..h {
        for i in 0..w {
            let f = raster.face[j * w + i];
            if f == u32::MAX {
                continue;
            }
            let [a, b, c] = scene.triangle(f as usize);
            let n = (b - a).cross(&(c - a)).normalize();
            let ray: Vector3<f64> = (rt * cam.pixel_ray_camera(i as f64, j as f64)).normalize();
            let shade = 0.3 + 0.7 * n.dot(&ray).abs();
            let label = face_labels.as_ref().map_or(2, |l| (l[f as usize] as usize).min(2));
            for (k, alb) in ALBEDO[label].iter().enumerate() {
                data[(j * w + i) * 3 + k] = alb * shade as f32;
            }
        }
    }
    Image { width: w, height: h, channels: 3, data }
}

/// Per-view feature maps sharing one channel count and resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    n_views: usize,
    width: usize,
    height: usize,
    channels: usize,
    /// `[view][y][x][channel]`.
    data: Vec<f32>,
}

/// Box-filter radii of the default pyramid (pixels).
pub const DEFAULT_PYRAMID: [usize; 3] = [0, 2, 8];

impl FeatureGrid {
    /// Multi-scale box-filtered intensities: for every radius, every input
    /// channel averaged over a `(2r+1)²` window (clamped at the border).
    pub fn from_images(images: &[Image], radii: &[usize]) -> Self {
        assert!(!images.is_empty() && !radii.is_empty());
        let (w, h, ch) = (images[0].width, images[0].height, images[0].channels);
        assert!(images.iter().all(|im| im.width == w && im.height == h && im.channels == ch));
        let channels = ch * radii.len();
        let mut data = vec![0f32; images.len() * w * h * channels];
        for (v, im) in images.iter().enumerate() {
            // Summed-area table per input channel, (w+1)×(h+1).
            let mut sat = vec![0f64; (w + 1) * (h + 1) * ch];
            for y in 0..h {
                for x in 0..w {
                    for c in 0..ch {
                        let here = im.get(x, y, c) as f64;
                        let s = here + sat[(y * (w + 1) + x + 1) * ch + c] + sat[((y + 1) * (w + 1) + x) * ch + c]
                            - sat[(y * (w + 1) + x) * ch + c];
                        sat[((y + 1) * (w + 1) + x + 1) * ch + c] = s;
                    }
                }
            }
            let base = v * w * h * channels;
            for y in 0..h {
                for x in 0..w {
                    for (ri, &r) in radii.iter().enumerate() {
                        let x0 = x.saturating_sub(r);
                        let y0 = y.saturating_sub(r);
                        let x1 = (x + r + 1).min(w);
                        let y1 = (y + r + 1).min(h);
                        let area = ((x1 - x0) * (y1 - y0)) as f64;
                        for c in 0..ch {
                            let s = sat[(y1 * (w + 1) + x1) * ch + c] - sat[(y0 * (w + 1) + x1) * ch + c]
                                - sat[(y1 * (w + 1) + x0) * ch + c]
                                + sat[(y0 * (w + 1) + x0) * ch + c];
                            data[base + (y * w + x) * channels + ri * ch + c] = (s / area) as f32;
                        }
                    }
                }
            }
        }
        Self { n_views: images.len(), width: w, height: h, channels, data }
    }

    /// Grid from raw per-view feature values, `[view][y][x][channel]`.
    pub fn from_raw(n_views: usize, width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n_views * width * height * channels);
        Self { n_views, width, height, channels, data }
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn node(&self, view: usize, x: usize, y: usize) -> &[f32] {
        let start = ((view * self.height + y) * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Bilinear interpolation at continuous pixel coordinates; coordinates
    /// outside the image are clamped to the border.
    pub fn sample_feature(&self, view: usize, pixel: &Point2<f64>, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels);
        let x = if pixel.x.is_finite() { pixel.x.clamp(0.0, (self.width - 1) as f64) } else { 0.0 };
        let y = if pixel.y.is_finite() { pixel.y.clamp(0.0, (self.height - 1) as f64) } else { 0.0 };
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let (a, b, c, d) = (self.node(view, x0, y0), self.node(view, x1, y0), self.node(view, x0, y1), self.node(view, x1, y1));
        for k in 0..self.channels {
            let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
            let bottom = c[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
            out[k] = top * (1.0 - fy) + bottom * fy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_grid() -> FeatureGrid {
        // Two channels: x and y coordinate.
        let (w, h) = (4, 3);
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                data.push(x as f32);
                data.push((10 * y) as f32);
            }
        }
        FeatureGrid::from_raw(1, w, h, 2, data)
    }

    #[test]
    fn node_lookup() {
        let g = ramp_grid();
        let mut out = [0.0; 2];
        g.sample_feature(0, &Point2::new(2.0, 1.0), &mut out);
        assert_eq!(out, [2.0, 10.0]);
    }

    #[test]
    fn midpoint_is_mean() {
        let g = ramp_grid();
        let mut out = [0.0; 2];
        g.sample_feature(0, &Point2::new(1.5, 1.0), &mut out);
        assert_eq!(out, [1.5, 10.0]);
        g.sample_feature(0, &Point2::new(1.0, 0.5), &mut out);
        assert_eq!(out, [1.0, 5.0]);
    }

    #[test]
    fn clamps_outside() {
        let g = ramp_grid();
        let mut out = [0.0; 2];
        g.sample_feature(0, &Point2::new(-5.0, 99.0), &mut out);
        assert_eq!(out, [0.0, 20.0]);
    }

    #[test]
    fn constant_grid_is_constant() {
        let g = FeatureGrid::from_raw(2, 5, 5, 1, vec![0.25; 50]);
        let mut out = [0.0];
        for p in [Point2::new(0.3, 3.9), Point2::new(4.0, 4.0), Point2::new(2.2, 0.1)] {
            g.sample_feature(1, &p, &mut out);
            assert_eq!(out[0], 0.25);
        }
    }

    #[test]
    fn pyramid_box_filter() {
        let mut data = vec![0f32; 5 * 5];
        data[12] = 9.0;
        let img = Image { width: 5, height: 5, channels: 1, data };
        let g = FeatureGrid::from_images(&[img], &[0, 1]);
        assert_eq!(g.channels(), 2);
        assert_eq!(g.node(0, 2, 2), &[9.0, 1.0]);
        assert_eq!(g.node(0, 0, 0), &[0.0, 0.0]);
        // The 3×3 window around (3,3) still covers the spike.
        assert_eq!(g.node(0, 3, 3), &[0.0, 1.0]);
    }
}
