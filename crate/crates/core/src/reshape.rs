//! Vertical placement of eyes, nose and mouth.
//!
//! Three ratios, all measured upward from the chin:
//!
//! - eye line: chin→eyes ÷ chin→brows
//! - nose: chin→nose base ÷ chin→eyes
//! - mouth: chin→mouth ÷ chin→nose base
//!
//! Per demographic group the inter-quartile band of each ratio is taken over
//! the donor subjects, and the target's features are slid vertically until
//! their ratios fall inside the bands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::Group;
use crate::error::{Error, Result};
use crate::landmarks::{Landmarks, BROWS, CHIN, EYES, MOUTH, NOSE, NOSE_BASE};
use crate::mesh::{FaceMesh, Region};

pub const MIN_BAND_SAMPLES: usize = 20;
/// Ratios this close to a band edge count as inside it.
const BAND_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceRatios {
    pub eye_line: f64,
    pub nose: f64,
    pub mouth: f64,
}

impl FaceRatios {
    pub const NAMES: [&'static str; 3] = ["eye_line_ratio", "nose_ratio", "mouth_ratio"];

    pub fn as_array(&self) -> [f64; 3] {
        [self.eye_line, self.nose, self.mouth]
    }
}

/// Reference lines in image y.
#[derive(Clone, Copy, Debug)]
struct Lines {
    chin: f64,
    eye: f64,
    brow: f64,
    nose: f64,
    mouth: f64,
}

fn lines(lm: &Landmarks) -> Lines {
    Lines {
        chin: lm.get(CHIN).y,
        eye: lm.mean_y(EYES),
        brow: lm.mean_y(BROWS),
        nose: lm.get(NOSE_BASE).y,
        mouth: lm.mean_y(MOUTH),
    }
}

fn ratio(num: f64, den: f64, what: &str) -> Result<f64> {
    if den.abs() < 1e-9 {
        return Err(Error::Geometry(format!("{what}: zero-length reference distance")));
    }
    let r = num / den;
    if !r.is_finite() {
        return Err(Error::Geometry(format!("{what}: non-finite ratio")));
    }
    Ok(r)
}

pub fn measure_ratios(lm: &Landmarks) -> Result<FaceRatios> {
    let l = lines(lm);
    Ok(FaceRatios {
        eye_line: ratio(l.chin - l.eye, l.chin - l.brow, "eye line ratio")?,
        nose: ratio(l.chin - l.nose, l.chin - l.eye, "nose ratio")?,
        mouth: ratio(l.chin - l.mouth, l.chin - l.nose, "mouth ratio")?,
    })
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Tukey hinges with the median excluded from both halves.
pub fn quartiles(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Numeric("quartiles of an empty list".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("quartiles of non-finite values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.len() == 1 {
        return Ok((v[0], v[0]));
    }
    let half = v.len() / 2;
    Ok((median_sorted(&v[..half]), median_sorted(&v[v.len() - half..])))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub q1: f64,
    pub q3: f64,
}

impl Band {
    pub fn contains(&self, r: f64) -> bool {
        r >= self.q1 - BAND_SLACK && r <= self.q3 + BAND_SLACK
    }

    pub fn clamp(&self, r: f64) -> f64 {
        r.clamp(self.q1, self.q3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BandSource {
    Group,
    /// The group was too small; all subjects of the same gender were used.
    GenderWide,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioBands {
    pub group: Group,
    pub eye_line: Band,
    pub nose: Band,
    pub mouth: Band,
    pub sample_count: usize,
    pub source: BandSource,
}

impl RatioBands {
    pub fn bands(&self) -> [Band; 3] {
        [self.eye_line, self.nose, self.mouth]
    }

    /// Bands with q1 = q3 at the given ratios.
    pub fn exact(group: Group, r: FaceRatios) -> Self {
        let b = |v| Band { q1: v, q3: v };
        RatioBands {
            group,
            eye_line: b(r.eye_line),
            nose: b(r.nose),
            mouth: b(r.mouth),
            sample_count: 1,
            source: BandSource::Group,
        }
    }
}

/// Ratios of one donor image.
#[derive(Clone, Debug)]
pub struct RatioSample {
    pub subject_id: String,
    pub group: Group,
    pub ratios: FaceRatios,
}

/// Mean ratios per subject.
fn per_subject<'a>(samples: impl Iterator<Item = &'a RatioSample>) -> Vec<FaceRatios> {
    let mut acc: BTreeMap<&str, ([f64; 3], usize)> = BTreeMap::new();
    for s in samples {
        let e = acc.entry(&s.subject_id).or_insert(([0.0; 3], 0));
        for (a, r) in e.0.iter_mut().zip(s.ratios.as_array()) {
            *a += r;
        }
        e.1 += 1;
    }
    acc.values()
        .map(|(sum, n)| {
            let n = *n as f64;
            FaceRatios {
                eye_line: sum[0] / n,
                nose: sum[1] / n,
                mouth: sum[2] / n,
            }
        })
        .collect()
}

fn bands_from(group: Group, subjects: &[FaceRatios], source: BandSource) -> Result<RatioBands> {
    let q = |f: fn(&FaceRatios) -> f64| -> Result<Band> {
        let (q1, q3) = quartiles(&subjects.iter().map(f).collect::<Vec<_>>())?;
        Ok(Band { q1, q3 })
    };
    Ok(RatioBands {
        group,
        eye_line: q(|r| r.eye_line)?,
        nose: q(|r| r.nose)?,
        mouth: q(|r| r.mouth)?,
        sample_count: subjects.len(),
        source,
    })
}

/// Bands for `group`, one sample per subject (the mean over their images).
/// Falls back to every subject of the same gender when the group has fewer
/// than `min_subjects`.
pub fn compute_bands(samples: &[RatioSample], group: &Group, min_subjects: usize) -> Result<RatioBands> {
    let own = per_subject(samples.iter().filter(|s| &s.group == group));
    if own.len() >= min_subjects && !own.is_empty() {
        return bands_from(group.clone(), &own, BandSource::Group);
    }
    let wide = per_subject(samples.iter().filter(|s| s.group.gender == group.gender));
    if wide.len() >= min_subjects && !wide.is_empty() {
        log::warn!(
            "group {group} has {} subjects (< {min_subjects}); using {} {} subjects for ratio bands",
            own.len(),
            wide.len(),
            group.gender
        );
        return bands_from(group.clone(), &wide, BandSource::GenderWide);
    }
    Err(Error::Capacity(format!(
        "ratio bands for {group}: {} subjects in group, {} of gender {}; need {min_subjects}",
        own.len(),
        wide.len(),
        group.gender
    )))
}

/// Bands for every group present in `samples`, keyed by group.
pub fn compute_all_bands(samples: &[RatioSample], min_subjects: usize) -> Result<BTreeMap<Group, RatioBands>> {
    let groups: std::collections::BTreeSet<Group> = samples.iter().map(|s| s.group.clone()).collect();
    groups
        .into_iter()
        .map(|g| compute_bands(samples, &g, min_subjects).map(|b| (g, b)))
        .collect()
}

pub fn bands_csv<'a>(bands: impl IntoIterator<Item = &'a RatioBands>) -> String {
    let mut out = String::from("group,ratio_name,q1,q3,n\n");
    for b in bands {
        for (name, band) in FaceRatios::NAMES.iter().zip(b.bands()) {
            let _ = writeln!(out, "{},{name},{},{},{}", b.group, band.q1, band.q3, b.sample_count);
        }
    }
    out
}

pub fn write_bands_csv<'a>(bands: impl IntoIterator<Item = &'a RatioBands>, path: &Path) -> Result<()> {
    std::fs::write(path, bands_csv(bands)).map_err(|e| Error::io(path, e))
}

/// Vertical shifts of the eye, nose and mouth features that clamp each ratio
/// into its band, solved in that order so later ratios see earlier moves.
pub fn solve_shifts(lm: &Landmarks, bands: &RatioBands) -> Result<[f64; 3]> {
    let r = measure_ratios(lm)?;
    let l = lines(lm);
    let mut eye = l.eye;
    if !bands.eye_line.contains(r.eye_line) {
        eye = l.chin - bands.eye_line.clamp(r.eye_line) * (l.chin - l.brow);
    }
    let mut nose = l.nose;
    let rn = ratio(l.chin - l.nose, l.chin - eye, "nose ratio")?;
    if !bands.nose.contains(rn) {
        nose = l.chin - bands.nose.clamp(rn) * (l.chin - eye);
    }
    let mut mouth = l.mouth;
    let rm = ratio(l.chin - l.mouth, l.chin - nose, "mouth ratio")?;
    if !bands.mouth.contains(rm) {
        mouth = l.chin - bands.mouth.clamp(rm) * (l.chin - nose);
    }
    Ok([eye - l.eye, nose - l.nose, mouth - l.mouth])
}

fn feature_of(region: Region) -> Option<usize> {
    match region {
        Region::LeftEye | Region::RightEye => Some(0),
        Region::Nose => Some(1),
        Region::Mouth => Some(2),
        _ => None,
    }
}

/// Slide the key regions so every ratio lands in its band.
pub fn reposition_regions(mesh: &FaceMesh, bands: &RatioBands) -> Result<FaceMesh> {
    reposition_regions_step(mesh, bands, 1.0)
}

/// As [`reposition_regions`], moving only `step` of the way (0 < step ≤ 1).
pub fn reposition_regions_step(mesh: &FaceMesh, bands: &RatioBands, step: f64) -> Result<FaceMesh> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("reshape step {step} outside (0, 1]")));
    }
    let shifts = solve_shifts(&mesh.landmarks, bands)?.map(|d| d * step);
    if shifts.iter().all(|&d| d == 0.0) {
        return Ok(mesh.clone());
    }
    let mut out = mesh.clone();

    let mut lm = mesh.landmarks.clone();
    for (range, dy) in [(EYES, shifts[0]), (NOSE, shifts[1]), (MOUTH, shifts[2])] {
        for p in &mut lm.points_mut()[range] {
            p.y += dy;
        }
    }
    for (slot, &i) in mesh.landmark_subset.iter().enumerate() {
        out.initial_vertices[slot] = lm.get(i);
    }
    out.landmarks = lm;

    // Features touching each dual vertex.
    let n = mesh.dual_vertices.len();
    let mut touching = vec![[false; 3]; n];
    for (t, tri) in mesh.dual_triangles.iter().enumerate() {
        if let Some(f) = feature_of(mesh.region_labels[t]) {
            for &v in &tri.0 {
                touching[v][f] = true;
            }
        }
    }
    let mut dy = vec![0.0; n];
    let mut moved = vec![false; n];
    for v in 0..n {
        let fs: Vec<f64> = (0..3).filter(|&f| touching[v][f]).map(|f| shifts[f]).collect();
        if !fs.is_empty() {
            dy[v] = fs.iter().sum::<f64>() / fs.len() as f64;
            moved[v] = true;
        }
    }
    // One ring of falloff: neighbours of moved vertices take half the mean.
    let mut ring: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for tri in &mesh.dual_triangles {
        for &v in &tri.0 {
            if moved[v] {
                continue;
            }
            for &u in &tri.0 {
                if moved[u] {
                    let e = ring.entry(v).or_insert((0.0, 0));
                    e.0 += dy[u];
                    e.1 += 1;
                }
            }
        }
    }
    for (v, (sum, k)) in ring {
        dy[v] = 0.5 * sum / k as f64;
    }
    for (p, d) in out.dual_vertices.iter_mut().zip(&dy) {
        p.y += d;
    }
    if let Some(t) = (0..out.dual_triangles.len()).find(|&t| out.dual_triangles[t].area(&out.dual_vertices) <= 0.0) {
        return Err(Error::Geometry(format!(
            "reshaping by {shifts:?} px folds dual triangle {t}"
        )));
    }
    Ok(out)
}

/// Try the full move, then half, then a quarter; give up with the mesh
/// unchanged. Returns the step that was used (0 when skipped).
pub fn reposition_or_relax(mesh: &FaceMesh, bands: &RatioBands) -> Result<(FaceMesh, f64)> {
    for step in [1.0, 0.5, 0.25] {
        match reposition_regions_step(mesh, bands, step) {
            Ok(m) => return Ok((m, step)),
            Err(Error::Geometry(msg)) => log::warn!("reshape step {step} rejected: {msg}"),
            Err(e) => return Err(e),
        }
    }
    log::warn!("reshaping skipped; base geometry kept");
    Ok((mesh.clone(), 0.0))
}
