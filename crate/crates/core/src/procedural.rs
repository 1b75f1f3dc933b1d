//! Procedurally drawn frontal faces with exact 68-point landmarks.
//!
//! Each subject gets a fixed set of facial proportions, colors and hair; each
//! image of that subject adds small session changes (lighting, background,
//! landmark jitter, slight shift). Used to build self-contained donor sets for
//! tests, demos and the `fixture` CLI command.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    format_embedding, save_image, write_manifest, FaceRecord, Gender, Group, ManifestRecord,
};
use crate::donors::desk_embedding;
use crate::error::{Error, Result};
use crate::geometry::{distance_to_segment, point_in_polygon, Point};
use crate::landmarks::{Landmarks, LEFT_EYE, RIGHT_EYE};
use crate::seed::{derive_seed, splitmix64};

/// Per-subject proportions, in fractions of the image side.
#[derive(Clone, Debug)]
pub struct SubjectTraits {
    pub cx: f64,
    pub face_half_width: f64,
    pub hairline_y: f64,
    pub brow_y: f64,
    pub brow_arch: f64,
    pub brow_thickness: f64,
    pub eye_y: f64,
    pub eye_offset: f64,
    pub eye_width: f64,
    pub eye_height: f64,
    pub nose_y: f64,
    pub nose_width: f64,
    pub mouth_y: f64,
    pub mouth_width: f64,
    pub upper_lip: f64,
    pub lower_lip: f64,
    pub chin_y: f64,
    pub skin: [f64; 3],
    pub hair: [f64; 3],
    pub iris: [f64; 3],
    pub lip: [f64; 3],
    pub hair_volume: f64,
}

fn skin_base(ethnicity: &str) -> [f64; 3] {
    match ethnicity {
        "caucasian" => [226.0, 188.0, 165.0],
        "asian" => [218.0, 182.0, 146.0],
        "african_american" => [128.0, 88.0, 66.0],
        other => {
            let h = splitmix64(crate::seed::fnv1a(other.as_bytes()));
            let t = (h % 1000) as f64 / 1000.0;
            [130.0 + 90.0 * t, 90.0 + 95.0 * t, 66.0 + 96.0 * t]
        }
    }
}

impl SubjectTraits {
    pub fn sample(seed: u64, ethnicity: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
        let brow_y = u(0.335, 0.375);
        let eye_y = brow_y + u(0.055, 0.08);
        let nose_y = eye_y + u(0.12, 0.165);
        let mouth_y = nose_y + u(0.07, 0.1);
        let chin_y = mouth_y + u(0.105, 0.145);
        let base = skin_base(ethnicity);
        let skin_shift = u(-14.0, 14.0);
        let skin = [
            (base[0] + skin_shift + u(-5.0, 5.0)).clamp(40.0, 250.0),
            (base[1] + skin_shift + u(-5.0, 5.0)).clamp(30.0, 240.0),
            (base[2] + skin_shift + u(-5.0, 5.0)).clamp(20.0, 235.0),
        ];
        let hair_l = u(15.0, 150.0);
        let hair = [hair_l + u(0.0, 40.0), hair_l * 0.8 + u(0.0, 20.0), hair_l * 0.6];
        let iris_pick = u(0.0, 1.0);
        let iris = if iris_pick < 0.6 {
            [90.0, 60.0, 35.0]
        } else if iris_pick < 0.8 {
            [70.0, 110.0, 150.0]
        } else {
            [80.0, 110.0, 70.0]
        };
        SubjectTraits {
            cx: 0.5 + u(-0.012, 0.012),
            face_half_width: u(0.26, 0.325),
            hairline_y: u(0.13, 0.22),
            brow_y,
            brow_arch: u(0.006, 0.02),
            brow_thickness: u(0.007, 0.014),
            eye_y,
            eye_offset: u(0.095, 0.125),
            eye_width: u(0.058, 0.078),
            eye_height: u(0.02, 0.03),
            nose_y,
            nose_width: u(0.06, 0.09),
            mouth_y,
            mouth_width: u(0.13, 0.19),
            upper_lip: u(0.01, 0.02),
            lower_lip: u(0.014, 0.026),
            chin_y,
            skin,
            hair,
            iris,
            lip: [
                (skin[0] * 0.85 + 25.0).min(255.0),
                skin[1] * 0.55,
                skin[2] * 0.6,
            ],
            hair_volume: u(1.06, 1.2),
        }
    }
}

/// Session-to-session changes between images of one subject.
#[derive(Clone, Debug)]
pub struct Session {
    pub shift: Point,
    pub jitter: f64,
    pub light: (f64, f64),
    pub background: [f64; 3],
    pub mouth_open: f64,
    pub seed: u64,
}

impl Session {
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bg = rng.gen_range(150.0..195.0);
        Session {
            shift: Point::new(rng.gen_range(-0.006..0.006), rng.gen_range(-0.006..0.006)),
            jitter: 0.0025,
            light: (rng.gen_range(-0.1..0.1), rng.gen_range(-0.05..0.05)),
            background: [
                bg + rng.gen_range(-8.0..8.0),
                bg + rng.gen_range(-8.0..8.0),
                bg + rng.gen_range(-8.0..8.0),
            ],
            mouth_open: rng.gen_range(0.0..0.4),
            seed,
        }
    }
}

/// Landmarks of a subject under a session, in pixels.
pub fn face_landmarks(t: &SubjectTraits, s: &Session, side: u32) -> Landmarks {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x5EED_1A4D);
    let mut pts: Vec<Point> = Vec::with_capacity(68);
    let cx = t.cx;

    // Jaw: 17 points from the left ear, around the chin, to the right ear.
    for i in 0..17 {
        let theta = std::f64::consts::PI * (1.0 - i as f64 / 16.0);
        let dip = theta.sin();
        let x = cx + t.face_half_width * theta.cos() * (1.0 - 0.12 * dip * dip);
        let y = t.eye_y + (t.chin_y - t.eye_y) * dip;
        pts.push(Point::new(x, y));
    }
    // Brows: image-left brow runs outer to inner, image-right inner to outer.
    for side_sign in [-1.0, 1.0] {
        let inner = cx + side_sign * 0.03;
        let outer = cx + side_sign * (t.eye_offset + t.eye_width * 0.75);
        for k in 0..5 {
            let f = k as f64 / 4.0;
            let f = if side_sign < 0.0 { f } else { 1.0 - f };
            // f = 0 at the outer end.
            let x = outer + (inner - outer) * f;
            let y = t.brow_y - t.brow_arch * (std::f64::consts::PI * (0.3 + 0.6 * f)).sin();
            pts.push(Point::new(x, y));
        }
    }
    // Nose bridge, top to tip.
    for k in 0..4 {
        let f = k as f64 / 3.0;
        pts.push(Point::new(cx, t.eye_y - 0.01 + (t.nose_y - 0.03 - t.eye_y + 0.01) * f));
    }
    // Nostrils, left to right, center lowest.
    for (k, dy) in [-0.012, -0.004, 0.0, -0.004, -0.012].iter().enumerate() {
        let x = cx + t.nose_width * (k as f64 / 4.0 - 0.5);
        pts.push(Point::new(x, t.nose_y + dy));
    }
    // Eyes.
    for side_sign in [-1.0, 1.0] {
        let ecx = cx + side_sign * t.eye_offset;
        let (hw, hh) = (t.eye_width / 2.0, t.eye_height / 2.0);
        let corners_first = [
            Point::new(ecx - hw, t.eye_y),
            Point::new(ecx - hw / 3.0, t.eye_y - hh),
            Point::new(ecx + hw / 3.0, t.eye_y - hh),
            Point::new(ecx + hw, t.eye_y),
            Point::new(ecx + hw / 3.0, t.eye_y + hh),
            Point::new(ecx - hw / 3.0, t.eye_y + hh),
        ];
        pts.extend(corners_first);
    }
    // Outer lip: left corner, across the upper lip, back along the lower lip.
    let (mcx, mw) = (cx, t.mouth_width / 2.0);
    let open = s.mouth_open * t.lower_lip * 0.5;
    for k in 0..7 {
        let a = std::f64::consts::PI * (1.0 - k as f64 / 6.0);
        let bow = if k == 3 { 0.3 } else { 0.0 };
        pts.push(Point::new(
            mcx + mw * a.cos(),
            t.mouth_y - t.upper_lip * (a.sin() * (1.0 - bow)) - open * a.sin(),
        ));
    }
    for k in (1..6).rev() {
        let a = std::f64::consts::PI * (1.0 - k as f64 / 6.0);
        pts.push(Point::new(
            mcx + mw * a.cos(),
            t.mouth_y + t.lower_lip * a.sin() + open * a.sin(),
        ));
    }
    // Inner lip: left corner, upper inner, right corner, lower inner.
    let iw = mw * 0.78;
    for k in 0..5 {
        let a = std::f64::consts::PI * (1.0 - k as f64 / 4.0);
        pts.push(Point::new(
            mcx + iw * a.cos(),
            t.mouth_y - open * a.sin() - 0.002 * a.sin(),
        ));
    }
    for k in (1..4).rev() {
        let a = std::f64::consts::PI * (1.0 - k as f64 / 4.0);
        pts.push(Point::new(
            mcx + iw * a.cos(),
            t.mouth_y + open * a.sin() + 0.002 * a.sin(),
        ));
    }
    debug_assert_eq!(pts.len(), 68);

    let scale = side as f64;
    let pts = pts
        .into_iter()
        .map(|p| {
            let j = Point::new(
                rng.gen_range(-s.jitter..s.jitter),
                rng.gen_range(-s.jitter..s.jitter),
            );
            (p + s.shift + j) * scale
        })
        .collect();
    Landmarks::new(pts).expect("68 generated points")
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn scale3(a: [f64; 3], f: f64) -> [f64; 3] {
    [a[0] * f, a[1] * f, a[2] * f]
}

fn hash_noise(seed: u64, x: u32, y: u32) -> f64 {
    let h = splitmix64(seed ^ ((x as u64) << 32 | y as u64));
    (h >> 11) as f64 / (1u64 << 53) as f64 - 0.5
}

/// Draw one face image and return it with its landmarks.
pub fn render_face(t: &SubjectTraits, s: &Session, side: u32) -> (RgbImage, Landmarks) {
    let lm = face_landmarks(t, s, side);
    let sz = side as f64;
    let shift = s.shift * sz;
    let cx = t.cx * sz + shift.x;
    let fw = t.face_half_width * sz;
    let eye_y = t.eye_y * sz + shift.y;
    let chin = t.chin_y * sz + shift.y;
    let hairline = t.hairline_y * sz + shift.y;
    let pts = lm.points();
    let brows: Vec<&[Point]> = vec![&pts[17..22], &pts[22..27]];
    let eyes: Vec<(Point, f64, f64)> = [LEFT_EYE, RIGHT_EYE]
        .into_iter()
        .map(|r| {
            let e = &pts[r];
            let c = Point::new((e[0].x + e[3].x) / 2.0, (e[0].y + e[3].y) / 2.0);
            (c, (e[3].x - e[0].x).abs() / 2.0, t.eye_height * sz / 2.0)
        })
        .collect();
    let outer_lip: Vec<Point> = pts[48..60].to_vec();
    let inner_lip: Vec<Point> = pts[60..68].to_vec();
    let nostrils = [pts[32], pts[34]];
    let nostril_r = t.nose_width * sz * 0.13;
    let brow_r = t.brow_thickness * sz;
    let brow_color = scale3(t.hair, 0.75);

    let img = RgbImage::from_fn(side, side, |x, y| {
        let p = Point::new(x as f64, y as f64);
        let ny = y as f64 / sz;
        let mut c = scale3(s.background, 1.0 - 0.08 * (ny - 0.5));
        let dx = p.x - cx;

        // Hair mass behind the head.
        let hx = dx / (fw * t.hair_volume);
        let hy = (p.y - eye_y) / (eye_y - hairline + 0.06 * sz);
        if p.y < eye_y + 0.1 * sz && hx * hx + hy * hy <= 1.0 {
            c = t.hair;
        }
        // Neck.
        if dx.abs() < fw * 0.55 && p.y > eye_y + 0.1 * sz {
            c = scale3(t.skin, 0.82);
        }
        // Face: jaw ellipse below the eye line, forehead ellipse above.
        let fx = dx / fw;
        let fy = if p.y >= eye_y {
            (p.y - eye_y) / (chin - eye_y)
        } else {
            (eye_y - p.y) / (eye_y - hairline)
        };
        let r2 = fx * fx + fy * fy;
        if r2 <= 1.0 {
            c = scale3(t.skin, 1.0 - 0.16 * r2);
            // Side shading of the nose.
            let nose_top = eye_y + 0.03 * sz;
            if p.y > nose_top && p.y < nostrils[0].y {
                let off = (dx.abs() - t.nose_width * sz * 0.33).abs();
                if off < 0.006 * sz {
                    c = scale3(c, 0.9);
                }
            }
            for n in &nostrils {
                let d = p.distance(*n);
                if d < nostril_r {
                    c = scale3(c, 0.5 + 0.3 * d / nostril_r);
                }
            }
            for brow in &brows {
                let d = brow
                    .windows(2)
                    .map(|w| distance_to_segment(p, w[0], w[1]))
                    .fold(f64::INFINITY, f64::min);
                if d < brow_r {
                    c = mix(c, brow_color, 0.9);
                }
            }
            for &(ec, hw, hh) in &eyes {
                let tx = (p.x - ec.x) / hw;
                let dy = p.y - ec.y;
                if tx.abs() < 1.0 {
                    let lid = hh * (1.0 - tx * tx).powf(0.7);
                    if dy.abs() <= lid {
                        c = [236.0, 233.0, 228.0];
                        let d = p.distance(ec);
                        if d < hh * 0.95 {
                            c = t.iris;
                        }
                        if d < hh * 0.4 {
                            c = [18.0, 16.0, 16.0];
                        }
                    } else if (dy + lid).abs() < hh * 0.25 {
                        c = scale3(c, 0.55);
                    }
                }
            }
            if point_in_polygon(p, &outer_lip) {
                c = if s.mouth_open > 0.15 && point_in_polygon(p, &inner_lip) {
                    [70.0, 30.0, 32.0]
                } else {
                    t.lip
                };
            }
        }
        let light = 1.0 + s.light.0 * (x as f64 / sz - 0.5) * 2.0 + s.light.1 * (ny - 0.5) * 2.0;
        let n = 6.0 * hash_noise(s.seed, x, y);
        Rgb([
            (c[0] * light + n).clamp(0.0, 255.0).round() as u8,
            (c[1] * light + n).clamp(0.0, 255.0).round() as u8,
            (c[2] * light + n).clamp(0.0, 255.0).round() as u8,
        ])
    });
    (img, lm)
}

/// Shape of a generated donor set.
#[derive(Clone, Debug)]
pub struct FixtureSpec {
    pub groups: Vec<(Group, usize)>,
    pub images_per_subject: usize,
    pub side: u32,
    pub seed: u64,
    /// Also write desk embeddings as sidecar files.
    pub with_embeddings: bool,
}

impl FixtureSpec {
    pub fn single_group(subjects: usize, images_per_subject: usize, side: u32, seed: u64) -> Self {
        FixtureSpec {
            groups: vec![(Group::new(Gender::Male, "caucasian"), subjects)],
            images_per_subject,
            side,
            seed,
            with_embeddings: false,
        }
    }
}

pub fn subject_id(group: &Group, k: usize) -> String {
    let g = match group.gender {
        Gender::Male => 'm',
        Gender::Female => 'f',
    };
    format!("{g}_{}_{k:03}", group.ethnicity)
}

/// Generate every face of the fixture in memory. Record paths point at the
/// locations [`write_fixture`] uses.
pub fn generate_faces(spec: &FixtureSpec) -> Vec<FaceRecord> {
    let mut out = Vec::new();
    for (group, count) in &spec.groups {
        for k in 0..*count {
            let subject = subject_id(group, k);
            let traits = SubjectTraits::sample(derive_seed(spec.seed, &subject, 0), &group.ethnicity);
            for j in 0..spec.images_per_subject {
                let image_id = format!("{subject}_{j}");
                let session = Session::sample(derive_seed(spec.seed, &image_id, 1));
                let (image, landmarks) = render_face(&traits, &session, spec.side);
                let record = ManifestRecord {
                    image_id: image_id.clone(),
                    subject_id: subject.clone(),
                    gender: group.gender,
                    ethnicity: group.ethnicity.clone(),
                    image_path: PathBuf::from(format!("{subject}/{image_id}.png")),
                    landmarks_path: PathBuf::from(format!("{subject}/{image_id}.txt")),
                    embedding_path: spec
                        .with_embeddings
                        .then(|| PathBuf::from(format!("{subject}/{image_id}.emb"))),
                };
                out.push(FaceRecord {
                    record,
                    image,
                    landmarks,
                    embedding: None,
                });
            }
        }
    }
    out
}

/// Write a generated donor set (images, landmark sidecars, optional
/// embeddings, `manifest.csv`) under `dir` and return the manifest path.
pub fn write_fixture(spec: &FixtureSpec, dir: &Path) -> Result<PathBuf> {
    let faces = generate_faces(spec);
    for face in &faces {
        let img_path = dir.join(&face.record.image_path);
        if let Some(parent) = img_path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        save_image(&face.image, &img_path)?;
        face.landmarks.save(&dir.join(&face.record.landmarks_path))?;
        if let Some(p) = &face.record.embedding_path {
            let emb = desk_embedding(&face.image)?;
            let path = dir.join(p);
            std::fs::write(&path, format_embedding(&emb)).map_err(|e| Error::io(&path, e))?;
        }
    }
    let records: Vec<ManifestRecord> = faces.into_iter().map(|f| f.record).collect();
    let manifest = dir.join("manifest.csv");
    write_manifest(&records, &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::{CHIN, NOSE_BASE};

    #[test]
    fn landmarks_follow_the_68_point_layout() {
        let t = SubjectTraits::sample(1, "asian");
        let s = Session::sample(2);
        let lm = face_landmarks(&t, &s, 512);
        let p = lm.points();
        assert!(lm.check_bounds(512).is_ok());
        // Chin is the lowest jaw point, jaw runs left to right.
        assert!(p[0].x < p[16].x);
        assert!((0..17).all(|i| p[CHIN].y >= p[i].y));
        // Brows above eyes above nose base above mouth above chin.
        assert!(lm.mean_y(17..27) < lm.mean_y(36..48));
        assert!(lm.mean_y(36..48) < p[NOSE_BASE].y);
        assert!(p[NOSE_BASE].y < lm.mean_y(48..68));
        assert!(lm.mean_y(48..68) < p[CHIN].y);
        // Image-left eye is left of the image-right eye; corners in order.
        assert!(p[39].x < p[42].x);
        assert!(p[36].x < p[39].x && p[42].x < p[45].x);
        // Brow order: 18..22 left to right, 23..27 left to right.
        assert!(p[17].x < p[21].x && p[22].x < p[26].x);
        // Mouth corners.
        assert!(p[48].x < p[54].x && p[60].x < p[64].x);
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = FixtureSpec::single_group(2, 2, 64, 9);
        let a = generate_faces(&spec);
        let b = generate_faces(&spec);
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image.as_raw(), y.image.as_raw());
            assert_eq!(x.landmarks, y.landmarks);
        }
        assert_ne!(a[0].image.as_raw(), a[1].image.as_raw());
    }
}
