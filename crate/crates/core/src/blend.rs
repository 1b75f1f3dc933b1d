//! Laplacian pyramid blending.
//!
//! Kernel is the 5x5 binomial `[1,4,6,4,1]/16` outer product, applied
//! separably. Borders are reflect-101 (`dcb|abcd|cba`), which keeps the
//! even/odd sample parity of the zero-inserted grid in [`expand`], so
//! constants survive both directions exactly.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::raster::{merge_channels, Mask, Plane};

pub const DEFAULT_PYRAMID_LEVELS: usize = 4;
pub const KERNEL_SIZE: usize = 5;
pub const KERNEL_1D: [f64; KERNEL_SIZE] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Reflect-101 index into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Convolve every row of `src` with the kernel, evaluating only output
/// columns `0, step, 2*step, ...`. `sample(row, x)` reads the (possibly
/// virtual) input; `width` is the length of the virtual row.
fn conv_rows(
    height: usize,
    width: usize,
    step: usize,
    gain: f64,
    sample: impl Fn(usize, usize) -> f64,
) -> Vec<f64> {
    let out_w = width.div_ceil(step);
    let taps: Vec<[usize; KERNEL_SIZE]> = (0..out_w)
        .map(|ox| {
            let x = (ox * step) as isize;
            std::array::from_fn(|k| reflect(x + k as isize - 2, width))
        })
        .collect();
    let mut out = Vec::with_capacity(out_w * height);
    for y in 0..height {
        for t in &taps {
            let mut acc = 0.0;
            for (w, &x) in KERNEL_1D.iter().zip(t) {
                acc += w * sample(y, x);
            }
            out.push(gain * acc);
        }
    }
    out
}

fn transpose(data: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            out[x * height + y] = data[y * width + x];
        }
    }
    out
}

/// Blur with the 5x5 kernel and keep every second sample from index 0.
pub fn gaussian_reduce(image: &Plane) -> Result<Plane> {
    let (w, h) = image.dimensions();
    if w < 2 || h < 2 || w % 2 != 0 || h % 2 != 0 {
        return Err(Error::Shape(format!(
            "cannot reduce a {w}x{h} plane: both sides must be even and at least 2"
        )));
    }
    let d = image.data();
    let rows = conv_rows(h, w, 2, 1.0, |y, x| d[y * w + x]);
    let (hw, hh) = (w / 2, h / 2);
    let t = transpose(&rows, hw, h);
    let cols = conv_rows(hw, h, 2, 1.0, |x, y| t[x * h + y]);
    Plane::from_vec(hw, hh, transpose(&cols, hh, hw))
}

/// Zero-insert to double size and convolve with the kernel scaled by 4.
pub fn expand(image: &Plane) -> Plane {
    let (w, h) = image.dimensions();
    let (ew, eh) = (2 * w, 2 * h);
    let d = image.data();
    // Horizontal pass over the original rows; odd virtual columns are zero.
    let rows = conv_rows(h, ew, 1, 2.0, |y, x| if x % 2 == 0 { d[y * w + x / 2] } else { 0.0 });
    let t = transpose(&rows, ew, h);
    let cols = conv_rows(ew, eh, 1, 2.0, |x, y| if y % 2 == 0 { t[x * h + y / 2] } else { 0.0 });
    Plane::from_vec(ew, eh, transpose(&cols, eh, ew)).expect("sizes agree")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PyramidKind {
    Gaussian,
    Laplacian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidStack {
    pub kind: PyramidKind,
    /// Level 0 is full resolution.
    pub levels: Vec<Plane>,
}

impl PyramidStack {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }
}

/// Check that a `width x height` raster supports `levels` pyramid levels.
pub fn check_pyramid_shape(width: usize, height: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::Config("pyramid needs at least one level".into()));
    }
    let div = 1usize << (levels - 1);
    if !width.is_multiple_of(div) || !height.is_multiple_of(div) || width == 0 || height == 0 {
        return Err(Error::Shape(format!(
            "{width}x{height} is not divisible by {div}, required for {levels} pyramid levels"
        )));
    }
    Ok(())
}

pub fn build_gaussian(image: &Plane, levels: usize) -> Result<PyramidStack> {
    let (w, h) = image.dimensions();
    check_pyramid_shape(w, h, levels)?;
    let mut out = vec![image.clone()];
    for _ in 1..levels {
        let next = gaussian_reduce(out.last().unwrap())?;
        out.push(next);
    }
    Ok(PyramidStack {
        kind: PyramidKind::Gaussian,
        levels: out,
    })
}

fn sub(a: &Plane, b: &Plane) -> Plane {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Plane::from_vec(a.width(), a.height(), data).expect("same size")
}

fn add(a: &Plane, b: &Plane) -> Plane {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Plane::from_vec(a.width(), a.height(), data).expect("same size")
}

pub fn build_laplacian(gaussian: &PyramidStack) -> Result<PyramidStack> {
    if gaussian.kind != PyramidKind::Gaussian || gaussian.levels.is_empty() {
        return Err(Error::Shape("laplacian needs a non-empty gaussian stack".into()));
    }
    let g = &gaussian.levels;
    let mut levels: Vec<Plane> = g.windows(2).map(|w| sub(&w[0], &expand(&w[1]))).collect();
    levels.push(g[g.len() - 1].clone());
    Ok(PyramidStack {
        kind: PyramidKind::Laplacian,
        levels,
    })
}

/// `mask * base + (1 - mask) * donor`, per pixel.
pub fn blend_level(base: &Plane, donor: &Plane, mask: &Plane) -> Result<Plane> {
    if base.dimensions() != donor.dimensions() || base.dimensions() != mask.dimensions() {
        return Err(Error::Shape(format!(
            "blend_level sizes differ: base {:?}, donor {:?}, mask {:?}",
            base.dimensions(),
            donor.dimensions(),
            mask.dimensions()
        )));
    }
    let data = base
        .data()
        .iter()
        .zip(donor.data())
        .zip(mask.data())
        .map(|((b, d), g)| g * b + (1.0 - g) * d)
        .collect();
    Plane::from_vec(base.width(), base.height(), data)
}

pub fn collapse(lap: &PyramidStack) -> Result<Plane> {
    if lap.kind != PyramidKind::Laplacian || lap.levels.is_empty() {
        return Err(Error::Shape("collapse needs a non-empty laplacian stack".into()));
    }
    let mut acc = lap.levels[lap.levels.len() - 1].clone();
    for level in lap.levels.iter().rev().skip(1) {
        let up = expand(&acc);
        if up.dimensions() != level.dimensions() {
            return Err(Error::Shape(format!(
                "laplacian level {:?} does not match expanded {:?}",
                level.dimensions(),
                up.dimensions()
            )));
        }
        acc = add(&up, level);
    }
    Ok(acc)
}

/// Blend one channel with a precomputed gaussian mask pyramid.
pub fn blend_plane(current: &Plane, donor: &Plane, mask_pyramid: &PyramidStack) -> Result<Plane> {
    let levels = mask_pyramid.level_count();
    let lc = build_laplacian(&build_gaussian(current, levels)?)?;
    let ld = build_laplacian(&build_gaussian(donor, levels)?)?;
    let blended = lc
        .levels
        .iter()
        .zip(&ld.levels)
        .zip(&mask_pyramid.levels)
        .map(|((c, d), g)| blend_level(c, d, g))
        .collect::<Result<Vec<_>>>()?;
    collapse(&PyramidStack {
        kind: PyramidKind::Laplacian,
        levels: blended,
    })
}

/// Blend `donor` into `current`. The mask is true where `current` is kept.
pub fn blend_patch(current: &RgbImage, donor: &RgbImage, mask: &Mask, levels: usize) -> Result<RgbImage> {
    let (w, h) = current.dimensions();
    let (w, h) = (w as usize, h as usize);
    if donor.dimensions() != current.dimensions() || mask.dimensions() != (w, h) {
        return Err(Error::Shape(format!(
            "blend_patch sizes differ: current {w}x{h}, donor {:?}, mask {:?}",
            donor.dimensions(),
            mask.dimensions()
        )));
    }
    let mask_pyramid = build_gaussian(&mask.to_plane(), levels)?;
    let channel = |c: usize| {
        blend_plane(&Plane::from_channel(current, c), &Plane::from_channel(donor, c), &mask_pyramid)
    };
    let planes = [channel(0)?, channel(1)?, channel(2)?];
    Ok(merge_channels(&planes))
}

/// Map a plane to 0..=255 for viewing: min to 0, max to 255.
pub fn normalized_for_display(p: &Plane) -> Plane {
    let (lo, hi) = p
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = hi - lo;
    let data = p
        .data()
        .iter()
        .map(|&v| if span > 0.0 { (v - lo) / span * 255.0 } else { 128.0 })
        .collect();
    Plane::from_vec(p.width(), p.height(), data).expect("same size")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::quantize;
    use proptest::prelude::*;

    // Direct 2D convolution with an explicit 5x5 kernel, reflect-101 borders.
    fn conv2d_oracle(get: impl Fn(isize, isize) -> f64, x: isize, y: isize) -> f64 {
        let k = [1.0, 4.0, 6.0, 4.0, 1.0];
        let mut acc = 0.0;
        for dy in -2..=2isize {
            for dx in -2..=2isize {
                acc += k[(dx + 2) as usize] * k[(dy + 2) as usize] / 256.0 * get(x + dx, y + dy);
            }
        }
        acc
    }

    fn refl(i: isize, n: isize) -> isize {
        // Mirror without repeating the edge sample.
        let mut i = i;
        while i < 0 || i >= n {
            if i < 0 {
                i = -i;
            }
            if i >= n {
                i = 2 * (n - 1) - i;
            }
        }
        i
    }

    #[test]
    fn reflect_matches_mirroring() {
        for n in 2..7 {
            for i in -12..18 {
                assert_eq!(reflect(i, n as usize) as isize, refl(i, n), "i={i} n={n}");
            }
        }
        assert_eq!(reflect(-3, 1), 0);
    }

    #[test]
    fn reduce_2x2_is_kernel_weighted_mean() {
        let p = Plane::from_vec(2, 2, vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let r = gaussian_reduce(&p).unwrap();
        assert_eq!(r.dimensions(), (1, 1));
        // Taps -2..2 land on 0,1,0,1,0: weights (1+6+1)/16 and (4+4)/16 per axis.
        let expect = conv2d_oracle(|x, y| p.get(refl(x, 2) as usize, refl(y, 2) as usize), 0, 0);
        assert!((expect - 25.0).abs() < 1e-12);
        assert!((r.get(0, 0) - expect).abs() < 1e-12);
    }

    #[test]
    fn reduce_matches_direct_convolution() {
        let p = Plane::from_fn(8, 6, |x, y| ((x * 7 + y * 13) % 11) as f64 + 0.25 * x as f64);
        let r = gaussian_reduce(&p).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                let o = conv2d_oracle(
                    |i, j| p.get(refl(i, 8) as usize, refl(j, 6) as usize),
                    2 * x as isize,
                    2 * y as isize,
                );
                assert!((r.get(x, y) - o).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reduce_rejects_odd_sides() {
        assert!(matches!(gaussian_reduce(&Plane::new(5, 4)), Err(Error::Shape(_))));
        assert!(matches!(gaussian_reduce(&Plane::new(1, 1)), Err(Error::Shape(_))));
    }

    #[test]
    fn expand_matches_zero_insert_convolution() {
        let p = Plane::from_vec(2, 2, vec![0.0, 10.0, 20.0, 30.0]).unwrap();
        let e = expand(&p);
        assert_eq!(e.dimensions(), (4, 4));
        let up = |i: isize, j: isize| {
            let (i, j) = (refl(i, 4), refl(j, 4));
            if i % 2 == 0 && j % 2 == 0 {
                p.get(i as usize / 2, j as usize / 2)
            } else {
                0.0
            }
        };
        for y in 0..4 {
            for x in 0..4 {
                let o = 4.0 * conv2d_oracle(up, x, y);
                assert!((e.get(x as usize, y as usize) - o).abs() < 1e-12, "({x},{y})");
            }
        }
        // Hand values: interior odd/odd sample averages the four neighbours.
        assert!((e.get(1, 1) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn expand_and_reduce_preserve_constants() {
        let one = expand(&Plane::filled(1, 1, 100.0));
        assert!(one.data().iter().all(|&v| (v - 100.0).abs() < 1e-12));
        let two = expand(&Plane::filled(2, 2, 50.0));
        assert_eq!(two.dimensions(), (4, 4));
        assert!(two.data().iter().all(|&v| (v - 50.0).abs() < 1e-12));
        let r = gaussian_reduce(&Plane::filled(4, 4, 100.0)).unwrap();
        assert!(r.data().iter().all(|&v| (v - 100.0).abs() < 1e-12));
    }

    #[test]
    fn gaussian_level_sizes() {
        let g = build_gaussian(&Plane::new(512, 512), DEFAULT_PYRAMID_LEVELS).unwrap();
        let sides: Vec<usize> = g.levels.iter().map(|p| p.width()).collect();
        assert_eq!(sides, [512, 256, 128, 64]);
        let single = build_gaussian(&Plane::filled(6, 6, 3.0), 1).unwrap();
        assert_eq!(single.levels, vec![Plane::filled(6, 6, 3.0)]);
        match build_gaussian(&Plane::new(100, 100), 4) {
            Err(Error::Shape(m)) => assert!(m.contains('8'), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn laplacian_of_constant() {
        let g = build_gaussian(&Plane::filled(16, 16, 77.0), 4).unwrap();
        let l = build_laplacian(&g).unwrap();
        for lv in &l.levels[..3] {
            assert!(lv.data().iter().all(|v| v.abs() < 1e-12));
        }
        assert_eq!(l.levels[3], g.levels[3]);
        let c = collapse(&l).unwrap();
        assert!(c.data().iter().all(|&v| (v - 77.0).abs() < 1e-12));
    }

    #[test]
    fn laplacian_two_levels_gradient() {
        let x = Plane::from_fn(8, 8, |i, j| 3.0 * i as f64 + 5.0 * j as f64);
        let g = build_gaussian(&x, 2).unwrap();
        let l = build_laplacian(&g).unwrap();
        // Oracle: reduce and expand by direct convolution.
        let g1 = Plane::from_fn(4, 4, |i, j| {
            conv2d_oracle(|a, b| x.get(refl(a, 8) as usize, refl(b, 8) as usize), 2 * i as isize, 2 * j as isize)
        });
        let up = |i: isize, j: isize| {
            let (i, j) = (refl(i, 8), refl(j, 8));
            if i % 2 == 0 && j % 2 == 0 {
                g1.get(i as usize / 2, j as usize / 2)
            } else {
                0.0
            }
        };
        for j in 0..8 {
            for i in 0..8 {
                let o = x.get(i, j) - 4.0 * conv2d_oracle(up, i as isize, j as isize);
                assert!((l.levels[0].get(i, j) - o).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn blend_level_examples() {
        let b = Plane::filled(4, 4, 10.0);
        let d = Plane::filled(4, 4, 20.0);
        assert_eq!(blend_level(&b, &d, &Plane::filled(4, 4, 1.0)).unwrap(), b);
        assert_eq!(blend_level(&b, &d, &Plane::filled(4, 4, 0.0)).unwrap(), d);
        let half = blend_level(&b, &d, &Plane::filled(4, 4, 0.5)).unwrap();
        assert!(half.data().iter().all(|&v| v == 15.0));
        assert!(matches!(
            blend_level(&b, &Plane::new(2, 2), &b),
            Err(Error::Shape(_))
        ));
    }

    fn half_plane_blend(levels: usize) -> RgbImage {
        let base = RgbImage::from_pixel(64, 64, image::Rgb([0, 0, 0]));
        let donor = RgbImage::from_pixel(64, 64, image::Rgb([255, 255, 255]));
        let mask = Mask::from_fn(64, 64, |x, _| x < 32);
        blend_patch(&base, &donor, &mask, levels).unwrap()
    }

    #[test]
    fn half_plane_seam_is_monotone_and_settles() {
        let out = half_plane_blend(4);
        for y in 0..64 {
            for x in 1..64 {
                assert!(out.get_pixel(x, y)[0] >= out.get_pixel(x - 1, y)[0]);
            }
        }
        // Constant inputs have flat band-pass levels, so only the top level
        // mixes; its reach at level 0 is the reduce plus expand support,
        // 2 * (2 + 4 + 8) = 28 px. Past that both sides are pure.
        for y in 0..64 {
            for x in 0..64u32 {
                let v = out.get_pixel(x, y)[0];
                if x + 28 < 32 {
                    assert_eq!(v, 0, "x={x}");
                } else if x >= 32 + 28 {
                    assert_eq!(v, 255, "x={x}");
                }
            }
        }
        // With one level the switch is hard.
        let hard = half_plane_blend(1);
        assert_eq!(hard.get_pixel(31, 0)[0], 0);
        assert_eq!(hard.get_pixel(32, 0)[0], 255);
    }

    fn plane_strategy(side: usize) -> impl Strategy<Value = Plane> {
        prop::collection::vec(0.0f64..255.0, side * side)
            .prop_map(move |d| Plane::from_vec(side, side, d).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn round_trip_is_exact(x in plane_strategy(16), levels in 1usize..=5) {
            let back = collapse(&build_laplacian(&build_gaussian(&x, levels).unwrap()).unwrap()).unwrap();
            prop_assert!(back.max_abs_diff(&x) < 1e-9);
            for (a, b) in back.data().iter().zip(x.data()) {
                prop_assert_eq!(quantize(*a), quantize(*b));
            }
        }

        #[test]
        fn blend_level_is_linear(
            a in plane_strategy(4), b in plane_strategy(4), d in plane_strategy(4),
            m in prop::collection::vec(0.0f64..=1.0, 16), s in -3.0f64..3.0,
        ) {
            let m = Plane::from_vec(4, 4, m).unwrap();
            let ab = Plane::from_vec(4, 4, a.data().iter().zip(b.data()).map(|(x, y)| x + s * y).collect()).unwrap();
            let lhs = blend_level(&ab, &d, &m).unwrap();
            let fa = blend_level(&a, &d, &m).unwrap();
            let fb = blend_level(&b, &d, &m).unwrap();
            // f(a + s b) = f(a) + s (f(b) - (1-m) d)
            for i in 0..16 {
                let g = m.data()[i];
                let rhs = fa.data()[i] + s * (fb.data()[i] - (1.0 - g) * d.data()[i]);
                prop_assert!((lhs.data()[i] - rhs).abs() < 1e-9);
            }
        }

        #[test]
        fn blend_patch_switch_and_range(
            seed in any::<u64>(), levels in 1usize..=4,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut img = || RgbImage::from_fn(32, 32, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]));
            let (cur, don) = (img(), img());
            let ones = Mask::new(32, 32, true);
            let zeros = Mask::new(32, 32, false);
            prop_assert_eq!(blend_patch(&cur, &don, &ones, levels).unwrap(), cur.clone());
            prop_assert_eq!(blend_patch(&cur, &don, &zeros, levels).unwrap(), don.clone());
            let m = Mask::from_fn(32, 32, |x, y| (x / 5 + y / 7) % 2 == 0);
            // Output stays a valid image (clamped); dimensions preserved.
            let out = blend_patch(&cur, &don, &m, levels).unwrap();
            prop_assert_eq!(out.dimensions(), (32, 32));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn far_from_the_seam_stays_pure(
            seed in any::<u64>(), levels in 1usize..=4, seam in 8u32..=56, vertical in any::<bool>(), flat in any::<bool>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut img = || {
                let c: [u8; 3] = rng.gen();
                let noise: Vec<u8> = (0..64 * 64 * 3).map(|_| rng.gen()).collect();
                if flat {
                    RgbImage::from_pixel(64, 64, image::Rgb(c))
                } else {
                    RgbImage::from_raw(64, 64, noise).unwrap()
                }
            };
            let (cur, don) = (img(), img());
            let along = |x: u32, y: u32| if vertical { x } else { y };
            let mask = Mask::from_fn(64, 64, |x, y| along(x as u32, y as u32) < seam);
            let out = blend_patch(&cur, &don, &mask, levels).unwrap();
            let reach = 1u32 << levels;
            for (x, y, p) in out.enumerate_pixels() {
                let a = along(x, y);
                let (dist, pure) = if a < seam { (seam - a, cur.get_pixel(x, y)) } else { (a + 1 - seam, don.get_pixel(x, y)) };
                if dist > reach {
                    for c in 0..3 {
                        prop_assert!((p[c] as i32 - pure[c] as i32).abs() <= 1, "({x},{y}) {p:?} vs {pure:?}");
                    }
                }
            }
        }
    }
}
