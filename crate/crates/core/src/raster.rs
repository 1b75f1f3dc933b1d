//! Real-valued rasters, binary masks, triangle scan conversion and bilinear
//! sampling.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::geometry::{signed_area, Point};

/// Single-channel real-valued raster, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} samples do not fill a {width}x{height} plane",
                data.len()
            )));
        }
        Ok(Plane { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane { width, height, data }
    }

    /// One channel of an 8-bit RGB image.
    pub fn from_channel(img: &RgbImage, channel: usize) -> Self {
        let (w, h) = img.dimensions();
        let data = img.pixels().map(|p| p.0[channel] as f64).collect();
        Plane {
            width: w as usize,
            height: h as usize,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs_diff(&self, other: &Plane) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Clamp to `[0, 255]` and round half up.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 255.0) + 0.5).floor() as u8
}

/// Reassemble three channel planes into an 8-bit image.
pub fn merge_channels(channels: &[Plane; 3]) -> RgbImage {
    let (w, h) = channels[0].dimensions();
    let mut out = RgbImage::new(w as u32, h as u32);
    for (i, px) in out.pixels_mut().enumerate() {
        px.0 = [
            quantize(channels[0].data[i]),
            quantize(channels[1].data[i]),
            quantize(channels[2].data[i]),
        ];
    }
    out
}

/// Binary raster; `true` marks a set pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Mask {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Mask { width, height, bits }
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn to_plane(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn inverted(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }
}

/// Edge function of `p` against the directed edge `a -> b`, evaluated on a
/// canonical endpoint order so the two triangles sharing an edge see exactly
/// opposite values.
#[inline]
fn edge_value(a: Point, b: Point, p: Point) -> f64 {
    let forward = (a.x, a.y) < (b.x, b.y);
    let (s, e) = if forward { (a, b) } else { (b, a) };
    let v = (e.x - s.x) * (p.y - s.y) - (e.y - s.y) * (p.x - s.x);
    if forward {
        v
    } else {
        -v
    }
}

/// Tie-break ownership of pixels lying exactly on an edge. The rule is
/// antisymmetric in the edge direction, so on a shared edge exactly one of
/// the two neighbours claims the pixel.
#[inline]
fn owns_boundary(a: Point, b: Point) -> bool {
    let d = b - a;
    d.y > 0.0 || (d.y == 0.0 && d.x > 0.0)
}

/// Visit every pixel center covered by the triangle, using a top-left style
/// fill rule so that a tiling visits every pixel exactly once.
pub fn rasterize_triangle(
    tri: [Point; 3],
    width: usize,
    height: usize,
    mut visit: impl FnMut(usize, usize),
) {
    let area = signed_area(tri[0], tri[1], tri[2]);
    if area == 0.0 || !area.is_finite() || width == 0 || height == 0 {
        return;
    }
    let [a, b, c] = if area > 0.0 {
        tri
    } else {
        [tri[0], tri[2], tri[1]]
    };
    let min_x = a.x.min(b.x).min(c.x).ceil().max(0.0);
    let max_x = a.x.max(b.x).max(c.x).floor().min((width - 1) as f64);
    let min_y = a.y.min(b.y).min(c.y).ceil().max(0.0);
    let max_y = a.y.max(b.y).max(c.y).floor().min((height - 1) as f64);
    if min_x > max_x || min_y > max_y {
        return;
    }
    let edges = [(a, b), (b, c), (c, a)];
    let owns = [owns_boundary(a, b), owns_boundary(b, c), owns_boundary(c, a)];
    for y in min_y as usize..=max_y as usize {
        for x in min_x as usize..=max_x as usize {
            let p = Point::new(x as f64, y as f64);
            let inside = edges.iter().zip(&owns).all(|(&(s, e), &own)| {
                let v = edge_value(s, e, p);
                v > 0.0 || (v == 0.0 && own)
            });
            if inside {
                visit(x, y);
            }
        }
    }
}

/// Collect the pixel centers covered by a triangle.
pub fn triangle_pixels(tri: [Point; 3], width: usize, height: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    rasterize_triangle(tri, width, height, |x, y| out.push((x, y)));
    out
}

/// Bilinear sample of an RGB image at a real-valued position, clamping to the
/// border. Integer positions return the stored pixel exactly.
pub fn sample_bilinear(img: &RgbImage, p: Point) -> [f64; 3] {
    let (w, h) = img.dimensions();
    let x = p.x.clamp(0.0, (w - 1) as f64);
    let y = p.y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as u32;
    let y0 = y0 as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let p00 = img.get_pixel(x0, y0).0;
    let p10 = img.get_pixel(x1, y0).0;
    let p01 = img.get_pixel(x0, y1).0;
    let p11 = img.get_pixel(x1, y1).0;
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_edge_pixels_are_claimed_once() {
        // Square split along its diagonal; the diagonal passes through pixel centers.
        let a = Point::new(0.0, 0.0);
        let b = Point::new(8.0, 0.0);
        let c = Point::new(8.0, 8.0);
        let d = Point::new(0.0, 8.0);
        let mut hits = vec![0u32; 81];
        rasterize_triangle([a, b, c], 9, 9, |x, y| hits[y * 9 + x] += 1);
        rasterize_triangle([a, c, d], 9, 9, |x, y| hits[y * 9 + x] += 1);
        // Interior of the square plus the diagonal: each exactly once.
        for y in 1..8 {
            for x in 1..8 {
                assert_eq!(hits[y * 9 + x], 1, "pixel ({x},{y})");
            }
        }
        assert!(hits.iter().all(|&h| h <= 1));
    }

    #[test]
    fn fan_around_a_pixel_center_claims_it_once() {
        let center = Point::new(5.0, 5.0);
        let ring: Vec<Point> = (0..7)
            .map(|k| {
                let t = k as f64 * std::f64::consts::TAU / 7.0;
                Point::new(5.0 + 4.0 * t.cos(), 5.0 + 4.0 * t.sin())
            })
            .collect();
        let mut count = 0;
        for k in 0..7 {
            rasterize_triangle([center, ring[k], ring[(k + 1) % 7]], 11, 11, |x, y| {
                if (x, y) == (5, 5) {
                    count += 1;
                }
            });
        }
        assert_eq!(count, 1);
    }

    #[test]
    fn bilinear_is_exact_on_pixel_centers() {
        let img = RgbImage::from_fn(4, 4, |x, y| image::Rgb([(x * 40) as u8, (y * 30) as u8, 7]));
        assert_eq!(sample_bilinear(&img, Point::new(2.0, 3.0)), [80.0, 90.0, 7.0]);
        assert_eq!(sample_bilinear(&img, Point::new(1.5, 0.0)), [60.0, 0.0, 7.0]);
        // Clamped outside the frame.
        assert_eq!(sample_bilinear(&img, Point::new(-3.0, 9.0)), [0.0, 90.0, 7.0]);
    }

    #[test]
    fn quantize_rounds_half_up_and_clamps() {
        assert_eq!(quantize(0.5), 1);
        assert_eq!(quantize(1.4999), 1);
        assert_eq!(quantize(-7.0), 0);
        assert_eq!(quantize(300.0), 255);
    }
}
