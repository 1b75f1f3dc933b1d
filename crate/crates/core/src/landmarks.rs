//! The 68-point facial landmark convention and its sidecar file format.
//!
//! Indices in this module are 0-based; the commonly quoted 1-based numbers are
//! one higher (the chin tip is point 9, index 8).

use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Point;

pub const LANDMARK_COUNT: usize = 68;

pub const JAW: Range<usize> = 0..17;
pub const CHIN: usize = 8;
pub const BROWS: Range<usize> = 17..27;
pub const NOSE: Range<usize> = 27..36;
/// Bottom-center of the nose (1-based point 34).
pub const NOSE_BASE: usize = 33;
/// Eye on the left side of the image (1-based points 37-42).
pub const LEFT_EYE: Range<usize> = 36..42;
/// Eye on the right side of the image (1-based points 43-48).
pub const RIGHT_EYE: Range<usize> = 42..48;
pub const EYES: Range<usize> = 36..48;
pub const MOUTH: Range<usize> = 48..68;

#[derive(Clone, Debug, PartialEq)]
pub struct Landmarks(Vec<Point>);

impl Landmarks {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::Landmark {
                path: Default::default(),
                reason: format!("expected {LANDMARK_COUNT} points, got {}", points.len()),
            });
        }
        if let Some(p) = points.iter().find(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::Landmark {
                path: Default::default(),
                reason: format!("non-finite point {p:?}"),
            });
        }
        Ok(Landmarks(points))
    }

    pub fn points(&self) -> &[Point] {
        &self.0
    }

    pub fn points_mut(&mut self) -> &mut [Point] {
        &mut self.0
    }

    pub fn get(&self, index: usize) -> Point {
        self.0[index]
    }

    pub fn mean_y(&self, range: Range<usize>) -> f64 {
        let n = range.len() as f64;
        self.0[range].iter().map(|p| p.y).sum::<f64>() / n
    }

    pub fn scaled(&self, factor: f64) -> Landmarks {
        Landmarks(self.0.iter().map(|&p| p * factor).collect())
    }

    /// Every point must sit strictly inside the pixel area `(-0.5, side - 0.5)`.
    pub fn check_bounds(&self, side: u32) -> std::result::Result<(), String> {
        let hi = side as f64 - 0.5;
        for (i, p) in self.0.iter().enumerate() {
            if !(p.x > -0.5 && p.x < hi && p.y > -0.5 && p.y < hi) {
                return Err(format!(
                    "point {} at ({}, {}) lies outside the {side}x{side} image",
                    i + 1,
                    p.x,
                    p.y
                ));
            }
        }
        Ok(())
    }

    /// Parse the sidecar format: one `x y` pair per line.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |reason: String| Error::Landmark {
            path: path.to_path_buf(),
            reason,
        };
        let mut points = Vec::with_capacity(LANDMARK_COUNT);
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let (Some(xs), Some(ys), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(err(format!("line {}: expected `x y`", n + 1)));
            };
            let parse = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("line {}: bad coordinate `{s}`", n + 1)))
            };
            points.push(Point::new(parse(xs)?, parse(ys)?));
        }
        if points.len() != LANDMARK_COUNT {
            return Err(err(format!(
                "expected {LANDMARK_COUNT} points, found {}",
                points.len()
            )));
        }
        Ok(Landmarks(points))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(LANDMARK_COUNT * 24);
        for p in &self.0 {
            s.push_str(&format!("{} {}\n", p.x, p.y));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
