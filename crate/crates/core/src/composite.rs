//! Donor assignment, triangle warping and color matching.
//!
//! Donor content is always warped into the target mesh: for every target
//! pixel the inverse affine map of its triangle gives a position in the
//! donor image, which is sampled bilinearly.

use std::collections::{BTreeMap, BTreeSet};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Affine, Point};
use crate::mesh::{FaceMesh, Region};
use crate::raster::{quantize, rasterize_triangle, sample_bilinear, Mask};

pub const DEFAULT_C_DONOR: usize = 8;
pub const MIN_C_DONOR: usize = 5;
pub const MAX_C_DONOR: usize = 16;

/// Which image every dual triangle is taken from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DonorAssignment {
    /// Per dual triangle, an index into `donors`.
    pub triangle_donor: Vec<usize>,
    /// Distinct donor image ids, in selection order.
    pub donors: Vec<String>,
    /// Donor of each key region.
    pub region_donors: BTreeMap<Region, String>,
}

impl DonorAssignment {
    pub fn c_donor(&self) -> usize {
        self.triangle_donor.iter().collect::<BTreeSet<_>>().len()
    }

    pub fn triangle_source(&self, t: usize) -> &str {
        &self.donors[self.triangle_donor[t]]
    }

    /// Donor ids actually used, in selection order.
    pub fn used_donors(&self) -> Vec<&str> {
        let used: BTreeSet<usize> = self.triangle_donor.iter().copied().collect();
        used.into_iter().map(|i| self.donors[i].as_str()).collect()
    }
}

/// How key regions are grouped into donor units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EyePolicy {
    /// Both eyes come from one image.
    #[default]
    Shared,
    Split,
}

fn key_units(eyes: EyePolicy) -> Vec<Vec<Region>> {
    match eyes {
        EyePolicy::Shared => vec![
            vec![Region::LeftEye, Region::RightEye],
            vec![Region::Nose],
            vec![Region::Mouth],
        ],
        EyePolicy::Split => vec![
            vec![Region::LeftEye],
            vec![Region::RightEye],
            vec![Region::Nose],
            vec![Region::Mouth],
        ],
    }
}

fn check_budget(budget: usize) -> Result<()> {
    if budget < MIN_C_DONOR {
        return Err(Error::Config(format!(
            "donor budget {budget} is below {MIN_C_DONOR} (four key regions plus a cheek source)"
        )));
    }
    Ok(())
}

/// Pick `min(budget, pool)` donors, give each key unit one image (distinct
/// while the selection allows) and spread the rest over cheek and outer
/// triangles so every selected image is used.
pub fn assign_donors(
    mesh: &FaceMesh,
    pool: &[String],
    budget: usize,
    seed: u64,
    eyes: EyePolicy,
) -> Result<DonorAssignment> {
    check_budget(budget)?;
    if pool.len() < 2 {
        return Err(Error::InsufficientDonors(format!(
            "donor pool has {} image(s); at least 2 are needed",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled: Vec<String> = pool.to_vec();
    shuffled.sort();
    shuffled.dedup();
    shuffled.shuffle(&mut rng);
    shuffled.truncate(budget);
    let units = key_units(eyes);
    let fixed: Vec<String> = (0..units.len()).map(|i| shuffled[i % shuffled.len()].clone()).collect();
    let cheek: Vec<String> = shuffled.iter().skip(units.len()).cloned().collect();
    finish(mesh, &units, &fixed, shuffled.clone(), cheek, &mut rng)
}

/// As [`assign_donors`] with the key regions already decided (one id per
/// unit, in eyes/nose/mouth order). Cheek donors come from `pool` minus
/// those ids, up to the remaining budget.
pub fn assign_donors_with_keys(
    mesh: &FaceMesh,
    key_donors: &[String],
    pool: &[String],
    budget: usize,
    seed: u64,
    eyes: EyePolicy,
) -> Result<DonorAssignment> {
    check_budget(budget)?;
    let units = key_units(eyes);
    if key_donors.len() != units.len() {
        return Err(Error::Config(format!(
            "{} key donors given for {} key units",
            key_donors.len(),
            units.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut donors: Vec<String> = Vec::new();
    for d in key_donors {
        if !donors.contains(d) {
            donors.push(d.clone());
        }
    }
    let mut rest: Vec<String> = pool.iter().filter(|p| !donors.contains(p)).cloned().collect();
    rest.sort();
    rest.dedup();
    rest.shuffle(&mut rng);
    rest.truncate(budget.saturating_sub(donors.len()));
    if donors.len() + rest.len() < 2 {
        return Err(Error::InsufficientDonors("fewer than 2 distinct donor images".into()));
    }
    donors.extend(rest.iter().cloned());
    finish(mesh, &units, key_donors, donors, rest, &mut rng)
}

fn finish(
    mesh: &FaceMesh,
    units: &[Vec<Region>],
    unit_donor: &[String],
    donors: Vec<String>,
    cheek: Vec<String>,
    rng: &mut ChaCha8Rng,
) -> Result<DonorAssignment> {
    let index_of = |id: &str| donors.iter().position(|d| d == id).expect("donor listed");
    let mut triangle_donor = vec![usize::MAX; mesh.dual_triangles.len()];
    let mut region_donors = BTreeMap::new();
    for (unit, id) in units.iter().zip(unit_donor) {
        for &region in unit {
            region_donors.insert(region, id.clone());
            for t in mesh.triangles_in(region) {
                triangle_donor[t] = index_of(id);
            }
        }
    }
    let mut free: Vec<usize> = (0..triangle_donor.len())
        .filter(|&t| triangle_donor[t] == usize::MAX)
        .collect();
    let sources: Vec<usize> = if cheek.is_empty() {
        (0..donors.len()).collect()
    } else {
        cheek.iter().map(|c| index_of(c)).collect()
    };
    if free.len() < sources.len() {
        return Err(Error::Capacity(format!(
            "{} cheek/outer triangles cannot host {} donors",
            free.len(),
            sources.len()
        )));
    }
    // One guaranteed triangle per cheek donor, then uniform draws.
    free.shuffle(rng);
    for (&t, &d) in free.iter().zip(&sources) {
        triangle_donor[t] = d;
    }
    for &t in &free[sources.len()..] {
        triangle_donor[t] = sources[rng.gen_range(0..sources.len())];
    }
    Ok(DonorAssignment {
        triangle_donor,
        donors,
        region_donors,
    })
}

/// Donor pixels resampled into one target triangle.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedPatch {
    pub triangle: usize,
    /// Maps the source triangle onto the target triangle.
    pub affine: Affine,
    pub pixels: Vec<(usize, usize)>,
    pub values: Vec<[f64; 3]>,
}

impl WarpedPatch {
    pub fn mean(&self) -> Result<[f64; 3]> {
        mean_of(self.values.iter().copied(), self.triangle)
    }
}

fn mean_of(values: impl Iterator<Item = [f64; 3]>, triangle: usize) -> Result<[f64; 3]> {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for v in values {
        for c in 0..3 {
            sum[c] += v[c];
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyRegion(format!("triangle {triangle} covers no pixel")));
    }
    Ok(sum.map(|s| s / n as f64))
}

/// Resample `donor` inside `source` onto the pixels of `target`
/// (`width x height` frame).
pub fn warp_triangle(
    donor: &RgbImage,
    source: [Point; 3],
    target: [Point; 3],
    width: usize,
    height: usize,
    triangle: usize,
) -> Result<WarpedPatch> {
    let affine = Affine::from_triangles(source, target)?;
    let back = Affine::from_triangles(target, source)?;
    let mut pixels = Vec::new();
    let mut values = Vec::new();
    rasterize_triangle(target, width, height, |x, y| {
        pixels.push((x, y));
        values.push(sample_bilinear(donor, back.apply(Point::new(x as f64, y as f64))));
    });
    Ok(WarpedPatch {
        triangle,
        affine,
        pixels,
        values,
    })
}

/// Shift every channel of the patch so its mean matches `base` over the
/// same pixels, clamping to [0, 255].
pub fn mean_shift_colors(patch: &WarpedPatch, base: &RgbImage) -> Result<WarpedPatch> {
    let target = mean_of(
        patch.pixels.iter().map(|&(x, y)| base.get_pixel(x as u32, y as u32).0.map(f64::from)),
        patch.triangle,
    )?;
    let own = patch.mean()?;
    let offset = [target[0] - own[0], target[1] - own[1], target[2] - own[2]];
    let values = patch
        .values
        .iter()
        .map(|v| [0, 1, 2].map(|c| (v[c] + offset[c]).clamp(0.0, 255.0)))
        .collect();
    Ok(WarpedPatch {
        values,
        ..patch.clone()
    })
}

/// Owning triangle of every pixel, row-major.
pub fn triangle_index_map(mesh: &FaceMesh) -> Result<Vec<usize>> {
    let s = mesh.side as usize;
    let mut map = vec![usize::MAX; s * s];
    for t in 0..mesh.dual_triangles.len() {
        rasterize_triangle(mesh.triangle_points(t), s, s, |x, y| map[y * s + x] = t);
    }
    if let Some(i) = map.iter().position(|&t| t == usize::MAX) {
        return Err(Error::Topology(format!(
            "pixel ({}, {}) is not covered by the mesh",
            i % s,
            i / s
        )));
    }
    Ok(map)
}

fn write_patch(img: &mut RgbImage, patch: &WarpedPatch) {
    for (&(x, y), v) in patch.pixels.iter().zip(&patch.values) {
        img.put_pixel(x as u32, y as u32, Rgb(v.map(quantize)));
    }
}

/// Warp a whole image into `target` using the source positions of the same
/// topology. Triangles too thin to warp are left black.
pub fn warp_image(image: &RgbImage, source_positions: &[Point], target: &FaceMesh) -> RgbImage {
    let s = target.side as usize;
    let mut out = RgbImage::new(target.side, target.side);
    for (t, tri) in target.dual_triangles.iter().enumerate() {
        if let Ok(p) = warp_triangle(image, tri.points(source_positions), target.triangle_points(t), s, s, t) {
            write_patch(&mut out, &p);
        }
    }
    out
}

/// A donor image warped into the target mesh over the full frame, with
/// every triangle color-matched to `reference`.
pub fn donor_layer(donor: &RgbImage, source_positions: &[Point], target: &FaceMesh, reference: &RgbImage) -> Result<RgbImage> {
    let s = target.side as usize;
    let mut out = reference.clone();
    for (t, tri) in target.dual_triangles.iter().enumerate() {
        let patch = match warp_triangle(donor, tri.points(source_positions), target.triangle_points(t), s, s, t) {
            Ok(p) => p,
            // A triangle folded flat on this donor contributes nothing.
            Err(Error::Geometry(_)) => continue,
            Err(e) => return Err(e),
        };
        if patch.pixels.is_empty() {
            continue;
        }
        write_patch(&mut out, &mean_shift_colors(&patch, reference)?);
    }
    Ok(out)
}

/// Everything needed to blend one synthetic face.
#[derive(Clone, Debug)]
pub struct Composite {
    /// Each pixel from its assigned donor layer.
    pub mosaic: RgbImage,
    /// Donor layers, parallel to `assignment.donors`.
    pub layers: Vec<RgbImage>,
    /// True where a donor contributed, parallel to `assignment.donors`.
    pub masks: Vec<Mask>,
    pub triangle_map: Vec<usize>,
}

impl Composite {
    /// Donor indices in the order of the lowest triangle each one owns.
    pub fn blend_order(&self, assignment: &DonorAssignment) -> Vec<usize> {
        let mut first: BTreeMap<usize, usize> = BTreeMap::new();
        for (t, &d) in assignment.triangle_donor.iter().enumerate() {
            first.entry(d).or_insert(t);
        }
        let mut order: Vec<(usize, usize)> = first.into_iter().map(|(d, t)| (t, d)).collect();
        order.sort();
        order.into_iter().map(|(_, d)| d).collect()
    }
}

/// Assemble the un-blended face. `donor_images` and `donor_landmarks` are
/// parallel to `assignment.donors`; `reference` supplies the per-triangle
/// color means (the base face warped into `target`).
pub fn composite_face(
    target: &FaceMesh,
    reference: &RgbImage,
    assignment: &DonorAssignment,
    donor_images: &[&RgbImage],
    donor_positions: &[Vec<Point>],
) -> Result<Composite> {
    if donor_images.len() != assignment.donors.len() || donor_positions.len() != assignment.donors.len() {
        return Err(Error::Config("donor images do not match the assignment".into()));
    }
    let s = target.side as usize;
    let triangle_map = triangle_index_map(target)?;
    let mut layers = Vec::with_capacity(donor_images.len());
    for (img, pos) in donor_images.iter().zip(donor_positions) {
        if img.dimensions() != (target.side, target.side) {
            return Err(Error::Shape(format!(
                "donor is {:?}, target is {s}x{s}",
                img.dimensions()
            )));
        }
        layers.push(donor_layer(img, pos, target, reference)?);
    }
    let mut masks = vec![Mask::new(s, s, false); layers.len()];
    let mut mosaic = RgbImage::new(target.side, target.side);
    for y in 0..s {
        for x in 0..s {
            let d = assignment.triangle_donor[triangle_map[y * s + x]];
            masks[d].set(x, y, true);
            mosaic.put_pixel(x as u32, y as u32, *layers[d].get_pixel(x as u32, y as u32));
        }
    }
    Ok(Composite {
        mosaic,
        layers,
        masks,
        triangle_map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MeshConfig;
    use crate::procedural::{render_face, Session, SubjectTraits};
    use proptest::prelude::*;
    use rand::Rng;

    fn face(seed: u64, side: u32) -> (RgbImage, FaceMesh) {
        let t = SubjectTraits::sample(seed, "caucasian");
        let (img, lm) = render_face(&t, &Session::sample(seed + 9), side);
        let mesh = FaceMesh::build(&lm, side, &MeshConfig::default()).unwrap();
        (img, mesh)
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i:02}")).collect()
    }

    #[test]
    fn budget_seven_of_ten() {
        let (_, m) = face(1, 256);
        let a = assign_donors(&m, &ids(10), 7, 42, EyePolicy::Shared).unwrap();
        assert_eq!(a.c_donor(), 7);
        assert_eq!(a.donors.len(), 7);
        for r in Region::KEY {
            let srcs: BTreeSet<&str> = m.triangles_in(r).into_iter().map(|t| a.triangle_source(t)).collect();
            assert_eq!(srcs.len(), 1, "{r:?}");
            assert_eq!(srcs.into_iter().next().unwrap(), a.region_donors[&r]);
        }
        assert_eq!(a.region_donors[&Region::LeftEye], a.region_donors[&Region::RightEye]);
        let key: BTreeSet<&String> = [Region::LeftEye, Region::Nose, Region::Mouth]
            .iter()
            .map(|r| &a.region_donors[r])
            .collect();
        assert_eq!(key.len(), 3);
        assert_eq!(a, assign_donors(&m, &ids(10), 7, 42, EyePolicy::Shared).unwrap());
    }

    #[test]
    fn budget_capped_by_pool_and_errors() {
        let (_, m) = face(2, 256);
        assert_eq!(assign_donors(&m, &ids(5), 10, 1, EyePolicy::Shared).unwrap().c_donor(), 5);
        assert!(matches!(assign_donors(&m, &ids(5), 4, 1, EyePolicy::Shared), Err(Error::Config(_))));
        assert!(matches!(
            assign_donors(&m, &ids(1), 8, 1, EyePolicy::Shared),
            Err(Error::InsufficientDonors(_))
        ));
        let split = assign_donors(&m, &ids(9), 8, 1, EyePolicy::Split).unwrap();
        assert_ne!(split.region_donors[&Region::LeftEye], split.region_donors[&Region::RightEye]);
        assert_eq!(split.c_donor(), 8);
    }

    #[test]
    fn fixed_keys_are_respected() {
        let (_, m) = face(3, 256);
        let keys = vec!["k0".to_string(), "k1".to_string(), "k2".to_string()];
        let a = assign_donors_with_keys(&m, &keys, &ids(10), 8, 5, EyePolicy::Shared).unwrap();
        assert_eq!(a.region_donors[&Region::Nose], "k1");
        assert_eq!(a.c_donor(), 8);
    }

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 8).min(255) as u8, (y * 8).min(255) as u8, 100]))
    }

    #[test]
    fn warp_identity_and_translation() {
        let img = gradient(32, 32);
        let tri = [Point::new(2.0, 2.0), Point::new(20.0, 3.0), Point::new(5.0, 18.0)];
        let p = warp_triangle(&img, tri, tri, 32, 32, 0).unwrap();
        for (a, b) in p.affine.0.iter().zip(Affine::IDENTITY.0) {
            assert!((a - b).abs() < 1e-12);
        }
        for (&(x, y), v) in p.pixels.iter().zip(&p.values) {
            let px = img.get_pixel(x as u32, y as u32).0;
            assert_eq!(v.map(|c| c as u8), px);
        }
        let moved = tri.map(|q| q + Point::new(10.0, 0.0));
        let p = warp_triangle(&img, tri, moved, 32, 32, 0).unwrap();
        assert!((p.affine.0[2] - 10.0).abs() < 1e-9 && p.affine.0[5].abs() < 1e-9);
        for (&(x, y), v) in p.pixels.iter().zip(&p.values) {
            assert_eq!(v.map(|c| c as u8), img.get_pixel(x as u32 - 10, y as u32).0);
        }
    }

    #[test]
    fn warp_halving_a_gradient() {
        // value(x, y) = 8x in red; target (u, v) samples source (2u, 2v).
        let img = gradient(32, 32);
        let src = [Point::new(0.0, 0.0), Point::new(8.0, 0.0), Point::new(0.0, 8.0)];
        let dst = [Point::new(0.0, 0.0), Point::new(4.0, 0.0), Point::new(0.0, 4.0)];
        let p = warp_triangle(&img, src, dst, 32, 32, 0).unwrap();
        assert!(!p.pixels.is_empty());
        for (&(u, v), val) in p.pixels.iter().zip(&p.values) {
            assert!((val[0] - 16.0 * u as f64).abs() <= 1.0);
            assert!((val[1] - 16.0 * v as f64).abs() <= 1.0);
        }
        for (s, d) in src.iter().zip(dst) {
            assert!(p.affine.apply(*s).distance(d) < 1e-9);
        }
    }

    #[test]
    fn mean_shift_examples() {
        let patch = WarpedPatch {
            triangle: 0,
            affine: Affine::IDENTITY,
            pixels: vec![(0, 0), (1, 0)],
            values: vec![[90.0, 250.0, 10.0], [110.0, 250.0, 10.0]],
        };
        let base = RgbImage::from_fn(2, 1, |x, _| Rgb([if x == 0 { 110 } else { 130 }, 255, 10]));
        let out = mean_shift_colors(&patch, &base).unwrap();
        // Red: base mean 120, patch mean 100, so 90 -> 110.
        assert_eq!(out.values[0][0], 110.0);
        // Green: +5 on 250 clamps at 255; blue unchanged.
        assert_eq!(out.values[0][1], 255.0);
        assert_eq!(out.values[0][2], 10.0);
        let empty = WarpedPatch { pixels: vec![], values: vec![], ..patch };
        assert!(matches!(mean_shift_colors(&empty, &base), Err(Error::EmptyRegion(_))));
    }

    #[test]
    fn self_composite_reproduces_base() {
        let (img, m) = face(4, 128);
        let a = DonorAssignment {
            triangle_donor: vec![0; m.dual_triangles.len()],
            donors: vec!["self".into()],
            region_donors: BTreeMap::new(),
        };
        let c = composite_face(&m, &img, &a, &[&img], std::slice::from_ref(&m.dual_vertices)).unwrap();
        let diff = c
            .mosaic
            .as_raw()
            .iter()
            .zip(img.as_raw())
            .map(|(a, b)| (*a as i32 - *b as i32).abs())
            .max()
            .unwrap();
        assert!(diff <= 1, "max diff {diff}");
    }

    #[test]
    fn masks_partition_the_frame() {
        let (img, m) = face(5, 128);
        let (img2, m2) = face(6, 128);
        let a = assign_donors(&m, &["a".into(), "b".into()], 5, 3, EyePolicy::Shared).unwrap();
        let imgs: Vec<&RgbImage> = a.donors.iter().map(|d| if d == "a" { &img } else { &img2 }).collect();
        let pos: Vec<Vec<Point>> = a
            .donors
            .iter()
            .map(|d| if d == "a" { m.dual_vertices.clone() } else { m.dual_positions_for(&m2.landmarks) })
            .collect();
        let c = composite_face(&m, &img, &a, &imgs, &pos).unwrap();
        let total: usize = c.masks.iter().map(|k| k.count()).sum();
        assert_eq!(total, 128 * 128);
        for i in 0..128 * 128 {
            assert_eq!(c.masks.iter().filter(|k| k.bits()[i]).count(), 1);
        }
        let again = composite_face(&m, &img, &a, &imgs, &pos).unwrap();
        assert_eq!(again.mosaic, c.mosaic);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn mean_shift_matches_base_mean(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base_level: f64 = rng.gen_range(40.0..200.0);
            let donor_level: f64 = rng.gen_range(40.0..200.0);
            let base = RgbImage::from_fn(40, 40, |_, _| Rgb([0, 1, 2].map(|_| (base_level + rng.gen_range(-20.0..20.0)) as u8)));
            let donor = RgbImage::from_fn(40, 40, |_, _| Rgb([0, 1, 2].map(|_| (donor_level + rng.gen_range(-20.0..20.0)) as u8)));
            let mut pt = || Point::new(rng.gen_range(0.0..39.0), rng.gen_range(0.0..39.0));
            let (a, b, c) = (pt(), pt(), pt());
            prop_assume!(crate::geometry::signed_area(a, b, c).abs() > 20.0);
            let patch = warp_triangle(&donor, [a, b, c], [a, c, b], 40, 40, 0).unwrap();
            prop_assume!(!patch.pixels.is_empty());
            let out = mean_shift_colors(&patch, &base).unwrap();
            let base_mean = mean_of(patch.pixels.iter().map(|&(x, y)| base.get_pixel(x as u32, y as u32).0.map(f64::from)), 0).unwrap();
            let m = out.mean().unwrap();
            for ch in 0..3 {
                prop_assert!((m[ch] - base_mean[ch]).abs() <= 1.0);
            }
        }
    }
}
