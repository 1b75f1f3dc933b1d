//! Embedding index, cosine scoring and donor pool assembly.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use image::RgbImage;

use crate::dataset::{DatasetManifest, FaceRecord, Group, ManifestRecord};
use crate::error::{Error, Result};

pub const DEFAULT_PROXIMAL_N: usize = 10;
pub const DESK_EMBEDDING_SIDE: usize = 16;

/// Cosine of the angle between two vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "vector dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine similarity of a zero-norm vector".into()));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Similarity metric for donor ranking. Cosine is the only one shipped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Metric {
    #[default]
    Cosine,
}

impl Metric {
    pub fn score(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            Metric::Cosine => cosine_similarity(a, b),
        }
    }
}

/// Where per-image embeddings come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EmbeddingProvider {
    /// Read the sidecar files named in the manifest.
    File,
    /// Compute [`desk_embedding`] from the pixels.
    #[default]
    Desk,
}

impl FromStr for EmbeddingProvider {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "file" => Ok(EmbeddingProvider::File),
            "desk" => Ok(EmbeddingProvider::Desk),
            other => Err(Error::Config(format!("unknown embedding provider `{other}`"))),
        }
    }
}

impl fmt::Display for EmbeddingProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingProvider::File => "file",
            EmbeddingProvider::Desk => "desk",
        })
    }
}

/// Fraction of the side kept on each edge of the face crop: left, right,
/// top, bottom.
pub const DESK_CROP: [f64; 4] = [0.2, 0.8, 0.2, 0.9];

/// Area-average weights of output cell `i` of `n` over pixels `[lo, hi)`.
fn cell_taps(lo: f64, hi: f64, n: usize, i: usize, limit: usize) -> Vec<(usize, f64)> {
    let cell = (hi - lo) / n as f64;
    let a = lo + i as f64 * cell;
    let b = a + cell;
    let mut v = Vec::new();
    let mut k = a.floor() as usize;
    while (k as f64) < b && k < limit {
        let overlap = (b.min(k as f64 + 1.0) - a.max(k as f64)).max(0.0);
        if overlap > 0.0 {
            v.push((k, overlap / cell));
        }
        k += 1;
    }
    v
}

/// A cheap stand-in for a CNN feature extractor: the central face crop
/// averaged down to 16x16 cells per RGB channel, scaled to [0, 1], with the
/// overall mean removed. Cropping drops most of the background, which
/// changes between sessions of one subject.
pub fn desk_embedding(image: &RgbImage) -> Result<Vec<f64>> {
    let (w, h) = image.dimensions();
    if w != h || w == 0 {
        return Err(Error::Shape(format!("desk embedding needs a square image, got {w}x{h}")));
    }
    let side = w as usize;
    let n = DESK_EMBEDDING_SIDE;
    let s = side as f64;
    let tx: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| cell_taps(DESK_CROP[0] * s, DESK_CROP[1] * s, n, i, side))
        .collect();
    let ty: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| cell_taps(DESK_CROP[2] * s, DESK_CROP[3] * s, n, i, side))
        .collect();
    let raw = image.as_raw();
    let mut out = vec![0.0; 3 * n * n];
    for (oy, wy) in ty.iter().enumerate() {
        for (ox, wx) in tx.iter().enumerate() {
            for c in 0..3 {
                let mut acc = 0.0;
                for &(y, ay) in wy {
                    for &(x, ax) in wx {
                        acc += raw[(y * side + x) * 3 + c] as f64 / 255.0 * ay * ax;
                    }
                }
                out[(c * n + oy) * n + ox] = acc;
            }
        }
    }
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    for v in &mut out {
        *v -= mean;
    }
    let norm2: f64 = out.iter().map(|v| v * v).sum();
    if norm2 <= 1e-24 {
        return Err(Error::Numeric("constant image has a zero desk embedding".into()));
    }
    Ok(out)
}

/// Pairwise (tree) summation of equally sized vectors, in the given order.
fn pairwise_sum(vectors: &[&[f64]]) -> Vec<f64> {
    match vectors.len() {
        0 => Vec::new(),
        1 => vectors[0].to_vec(),
        n => {
            let (l, r) = vectors.split_at(n / 2);
            let mut a = pairwise_sum(l);
            let b = pairwise_sum(r);
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
            a
        }
    }
}

/// Per-image embeddings plus per-subject means.
#[derive(Clone, Debug)]
pub struct EmbeddingIndex {
    dimension: usize,
    per_image: BTreeMap<String, Vec<f64>>,
    per_subject_mean: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingIndex {
    /// Build from per-image vectors, computing subject means over `manifest`.
    pub fn build(manifest: &DatasetManifest, per_image: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let dimension = per_image
            .values()
            .next()
            .map(Vec::len)
            .ok_or_else(|| Error::MissingData("no embeddings".into()))?;
        for (id, v) in &per_image {
            if v.len() != dimension {
                return Err(Error::Shape(format!(
                    "embedding of `{id}` has dimension {}, expected {dimension}",
                    v.len()
                )));
            }
            if v.iter().all(|x| *x == 0.0) {
                return Err(Error::Numeric(format!("embedding of `{id}` has zero norm")));
            }
        }
        let per_subject_mean = subject_means(&per_image, manifest)?;
        Ok(EmbeddingIndex {
            dimension,
            per_image,
            per_subject_mean,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn image(&self, image_id: &str) -> Option<&[f64]> {
        self.per_image.get(image_id).map(Vec::as_slice)
    }

    pub fn subject_mean(&self, subject_id: &str) -> Option<&[f64]> {
        self.per_subject_mean.get(subject_id).map(Vec::as_slice)
    }

    pub fn per_image(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.per_image
    }

    pub fn per_subject_mean(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.per_subject_mean
    }
}

/// Component-wise mean embedding of every subject in the manifest.
///
/// Vectors are summed pairwise in image_id order so the result does not
/// depend on how the per-image map was filled.
pub fn subject_means(
    per_image: &BTreeMap<String, Vec<f64>>,
    manifest: &DatasetManifest,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for subject in manifest.subjects() {
        let images = manifest.images_of(subject);
        let mut vecs: Vec<&[f64]> = Vec::with_capacity(images.len());
        for r in &images {
            match per_image.get(&r.image_id) {
                Some(v) => vecs.push(v),
                None => {
                    return Err(Error::MissingData(format!(
                        "image `{}` of subject `{subject}` has no embedding",
                        r.image_id
                    )))
                }
            }
        }
        if vecs.is_empty() {
            return Err(Error::MissingData(format!("subject `{subject}` has no embedded images")));
        }
        let n = vecs.len() as f64;
        let mean = pairwise_sum(&vecs).into_iter().map(|s| s / n).collect();
        out.insert(subject.to_string(), mean);
    }
    Ok(out)
}

/// The `n` subjects of `group` closest to `base_subject` by mean embedding,
/// best first, ties broken by ascending subject id.
pub fn top_n_proximal(
    index: &EmbeddingIndex,
    manifest: &DatasetManifest,
    base_subject: &str,
    group: &Group,
    n: usize,
    metric: Metric,
) -> Result<Vec<(String, f64)>> {
    if n == 0 {
        return Err(Error::Config("proximal subject count must be positive".into()));
    }
    let base = index
        .subject_mean(base_subject)
        .ok_or_else(|| Error::MissingData(format!("no mean embedding for `{base_subject}`")))?;
    let members = manifest
        .groups()
        .get(group)
        .ok_or_else(|| Error::Capacity(format!("group {group} is empty")))?;
    let mut scored = Vec::with_capacity(members.len());
    for s in members.iter().filter(|s| s.as_str() != base_subject) {
        let mean = index
            .subject_mean(s)
            .ok_or_else(|| Error::MissingData(format!("no mean embedding for `{s}`")))?;
        scored.push((s.clone(), metric.score(base, mean)?));
    }
    if scored.len() < n {
        return Err(Error::Capacity(format!(
            "group {group} has {} subjects besides `{base_subject}`, {n} requested",
            scored.len()
        )));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(n);
    Ok(scored)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenerationMode {
    /// New images of an existing identity, donors from that identity.
    ExpandRealId,
    /// A new identity recombined from proximal subjects.
    SynthId,
}

impl FromStr for GenerationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expand" | "expand_real_id" => Ok(GenerationMode::ExpandRealId),
            "synth" | "synth_id" => Ok(GenerationMode::SynthId),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DonorPool {
    pub base_image_id: String,
    pub mode: GenerationMode,
    pub candidates: Vec<ManifestRecord>,
    /// Distinct subjects represented in the pool.
    pub pool_subject_count: usize,
}

impl DonorPool {
    pub fn candidate_ids(&self) -> Vec<&str> {
        self.candidates.iter().map(|r| r.image_id.as_str()).collect()
    }
}

/// Assemble the donor pool for one base face.
///
/// `index` is only consulted in synth mode and may be `None` otherwise.
pub fn build_donor_pool(
    manifest: &DatasetManifest,
    index: Option<&EmbeddingIndex>,
    base: &ManifestRecord,
    mode: GenerationMode,
    n: usize,
    metric: Metric,
) -> Result<DonorPool> {
    match mode {
        GenerationMode::ExpandRealId => {
            let candidates: Vec<ManifestRecord> = manifest
                .images_of(&base.subject_id)
                .into_iter()
                .filter(|r| r.image_id != base.image_id)
                .cloned()
                .collect();
            if candidates.is_empty() {
                return Err(Error::InsufficientDonors(format!(
                    "subject `{}` has no images besides `{}`",
                    base.subject_id, base.image_id
                )));
            }
            Ok(DonorPool {
                base_image_id: base.image_id.clone(),
                mode,
                candidates,
                pool_subject_count: 1,
            })
        }
        GenerationMode::SynthId => {
            let index = index.ok_or_else(|| {
                Error::MissingData("synth mode needs an embedding index".into())
            })?;
            let group = manifest.group_of(&base.subject_id)?.clone();
            let ranked = top_n_proximal(index, manifest, &base.subject_id, &group, n, metric)?;
            let mut candidates = Vec::new();
            for (subject, _) in &ranked {
                candidates.extend(manifest.images_of(subject).into_iter().cloned());
            }
            Ok(DonorPool {
                base_image_id: base.image_id.clone(),
                mode,
                candidates,
                pool_subject_count: ranked.len(),
            })
        }
    }
}

/// Embed every face with the chosen provider.
pub fn embed_faces<'a>(
    faces: impl IntoIterator<Item = &'a FaceRecord>,
    provider: EmbeddingProvider,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for f in faces {
        let v = match provider {
            EmbeddingProvider::Desk => desk_embedding(&f.image)?,
            EmbeddingProvider::File => f.embedding.clone().ok_or_else(|| {
                Error::MissingData(format!("image `{}` has no embedding file", f.image_id()))
            })?,
        };
        out.insert(f.image_id().to_string(), v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Gender, ManifestRecord};

    fn rec(image: &str, subject: &str) -> ManifestRecord {
        ManifestRecord {
            image_id: image.into(),
            subject_id: subject.into(),
            gender: Gender::Female,
            ethnicity: "asian".into(),
            image_path: format!("{image}.png").into(),
            landmarks_path: format!("{image}.txt").into(),
            embedding_path: None,
        }
    }

    fn manifest(rows: &[(&str, &str)]) -> DatasetManifest {
        DatasetManifest::from_records("", rows.iter().map(|(i, s)| rec(i, s)).collect()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[3.0, -1.0], &[3.0, -1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert!((s - 8.0 / 9.0).abs() < 1e-15);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Numeric(_))));
        assert!(matches!(cosine_similarity(&[1.0], &[1.0, 0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn means_of_single_and_pairs() {
        let m = manifest(&[("a", "s1"), ("b", "s1"), ("c", "s2")]);
        let per: BTreeMap<String, Vec<f64>> = [
            ("a".to_string(), vec![0.0, 0.0]),
            ("b".to_string(), vec![2.0, 4.0]),
            ("c".to_string(), vec![5.0, -1.0]),
        ]
        .into();
        let means = subject_means(&per, &m).unwrap();
        assert_eq!(means["s1"], vec![1.0, 2.0]);
        assert_eq!(means["s2"], vec![5.0, -1.0]);
        let mut missing = per.clone();
        missing.remove("b");
        assert!(matches!(subject_means(&missing, &m), Err(Error::MissingData(_))));
    }

    fn index_of(m: &DatasetManifest, vecs: &[(&str, Vec<f64>)]) -> EmbeddingIndex {
        let per = vecs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        EmbeddingIndex::build(m, per).unwrap()
    }

    #[test]
    fn proximal_ranking() {
        let m = manifest(&[("b", "base"), ("p", "near"), ("q", "ortho"), ("r", "opp")]);
        let idx = index_of(
            &m,
            &[
                ("b", vec![1.0, 0.0]),
                ("p", vec![1.0, 0.1]),
                ("q", vec![0.0, 1.0]),
                ("r", vec![-1.0, 0.0]),
            ],
        );
        let g = Group::new(Gender::Female, "asian");
        let top = top_n_proximal(&idx, &m, "base", &g, 2, Metric::Cosine).unwrap();
        let names: Vec<&str> = top.iter().map(|(s, _)| s.as_str()).collect();
        assert_eq!(names, ["near", "ortho"]);
        // Group of 4: three others; asking for 4 leaves the base out.
        assert!(matches!(
            top_n_proximal(&idx, &m, "base", &g, 4, Metric::Cosine),
            Err(Error::Capacity(_))
        ));
        let two = manifest(&[("b", "base"), ("p", "other")]);
        let idx2 = index_of(&two, &[("b", vec![1.0, 0.0]), ("p", vec![0.3, 0.2])]);
        let top = top_n_proximal(&idx2, &two, "base", &g, 1, Metric::Cosine).unwrap();
        assert_eq!(top[0].0, "other");
    }

    #[test]
    fn ties_break_on_subject_id() {
        let m = manifest(&[("b", "base"), ("x", "zeta"), ("y", "alpha")]);
        let idx = index_of(&m, &[("b", vec![1.0, 1.0]), ("x", vec![2.0, 0.5]), ("y", vec![0.5, 2.0])]);
        let g = Group::new(Gender::Female, "asian");
        let top = top_n_proximal(&idx, &m, "base", &g, 2, Metric::Cosine).unwrap();
        assert_eq!(top[0].0, "alpha");
        assert_eq!(top[1].0, "zeta");
    }

    #[test]
    fn expand_pool_excludes_base() {
        let m = manifest(&[("i1", "s"), ("i2", "s"), ("i3", "s"), ("i4", "s"), ("o", "t")]);
        let base = m.record("i1").unwrap().clone();
        let pool =
            build_donor_pool(&m, None, &base, GenerationMode::ExpandRealId, 10, Metric::Cosine).unwrap();
        assert_eq!(pool.candidate_ids(), ["i2", "i3", "i4"]);
        let lone = m.record("o").unwrap().clone();
        assert!(matches!(
            build_donor_pool(&m, None, &lone, GenerationMode::ExpandRealId, 10, Metric::Cosine),
            Err(Error::InsufficientDonors(_))
        ));
    }

    #[test]
    fn synth_pool_capacity() {
        let m = manifest(&[("a", "s1"), ("b", "s2")]);
        let idx = index_of(&m, &[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        let base = m.record("a").unwrap().clone();
        assert!(matches!(
            build_donor_pool(&m, Some(&idx), &base, GenerationMode::SynthId, 3, Metric::Cosine),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn desk_embedding_basics() {
        let flat = RgbImage::from_pixel(64, 64, image::Rgb([128, 128, 128]));
        assert!(matches!(desk_embedding(&flat), Err(Error::Numeric(_))));
        let img = RgbImage::from_fn(64, 64, |x, y| image::Rgb([(x * 3) as u8, (y * 2) as u8, 90]));
        let a = desk_embedding(&img).unwrap();
        assert_eq!(a.len(), 3 * 16 * 16);
        // Pixels outside the crop do not matter.
        let mut edged = img.clone();
        for y in 0..64 {
            edged.put_pixel(0, y, image::Rgb([0, 0, 0]));
            edged.put_pixel(y, 63, image::Rgb([255, 0, 0]));
        }
        assert_eq!(desk_embedding(&edged).unwrap(), a);
        // Differences between cells cancel the mean; compare them with a
        // supersampled integral over the crop.
        let cell = |c: usize, i: usize, j: usize| {
            let (x0, x1) = (12.8 + j as f64 * 2.4, 12.8 + (j + 1) as f64 * 2.4);
            let (y0, y1) = (12.8 + i as f64 * 2.8, 12.8 + (i + 1) as f64 * 2.8);
            let steps = 400;
            let mut acc = 0.0;
            for sy in 0..steps {
                for sx in 0..steps {
                    let x = x0 + (sx as f64 + 0.5) * (x1 - x0) / steps as f64;
                    let y = y0 + (sy as f64 + 0.5) * (y1 - y0) / steps as f64;
                    acc += img.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0;
                }
            }
            acc / (steps * steps) as f64
        };
        for (c, i, j) in [(0, 0, 1), (0, 5, 9), (1, 15, 3), (1, 7, 7)] {
            let got = a[(c * 16 + i) * 16 + j] - a[(c * 16) * 16];
            let want = cell(c, i, j) - cell(c, 0, 0);
            assert!((got - want).abs() < 1e-3, "{c} {i} {j}: {got} vs {want}");
        }
        assert_eq!(a, desk_embedding(&img.clone()).unwrap());
        let sum: f64 = a.iter().sum();
        assert!(sum.abs() < 1e-9);
    }
}
