//! Donor-set manifest, demographic grouping and face loading.
//!
//! The manifest is a CSV file with the fixed header
//! `image_id,subject_id,gender,ethnicity,image_path,landmarks_path,embedding_path`.
//! Extra trailing columns are ignored, which lets generated output manifests
//! (that carry provenance columns) be read back as donor sets. Paths are
//! resolved relative to the directory holding the manifest.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::landmarks::Landmarks;

pub const MANIFEST_HEADER: [&str; 7] = [
    "image_id",
    "subject_id",
    "gender",
    "ethnicity",
    "image_path",
    "landmarks_path",
    "embedding_path",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Gender::Male),
            "female" | "f" => Ok(Gender::Female),
            other => Err(Error::Validation(format!("unknown gender `{other}`"))),
        }
    }
}

/// A (gender, ethnicity) cell of the donor set. Ethnicity is an open label.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Group {
    pub gender: Gender,
    pub ethnicity: String,
}

impl Group {
    pub fn new(gender: Gender, ethnicity: impl Into<String>) -> Self {
        Group {
            gender,
            ethnicity: ethnicity.into(),
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.gender, self.ethnicity)
    }
}

/// One manifest row. Paths are stored exactly as written in the file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image_id: String,
    pub subject_id: String,
    pub gender: Gender,
    pub ethnicity: String,
    pub image_path: PathBuf,
    pub landmarks_path: PathBuf,
    pub embedding_path: Option<PathBuf>,
}

impl ManifestRecord {
    pub fn group(&self) -> Group {
        Group::new(self.gender, self.ethnicity.clone())
    }
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    root: PathBuf,
    records: Vec<ManifestRecord>,
    groups: BTreeMap<Group, Vec<String>>,
    subject_groups: BTreeMap<String, Group>,
    by_image: HashMap<String, usize>,
}

impl DatasetManifest {
    /// Build and validate a manifest from in-memory records. `root` anchors
    /// relative paths.
    pub fn from_records(root: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Result<Self> {
        Self::build(root.into(), records, None)
    }

    fn build(root: PathBuf, records: Vec<ManifestRecord>, lines: Option<&[u64]>) -> Result<Self> {
        let line_of = |i: usize| lines.map_or(i as u64 + 2, |l| l[i]);
        let mut by_image = HashMap::with_capacity(records.len());
        let mut subject_groups: BTreeMap<String, Group> = BTreeMap::new();
        for (i, rec) in records.iter().enumerate() {
            if let Some(&prev) = by_image.get(&rec.image_id) {
                return Err(Error::DuplicateImage {
                    image_id: rec.image_id.clone(),
                    first_line: line_of(prev),
                    second_line: line_of(i),
                });
            }
            by_image.insert(rec.image_id.clone(), i);
            let group = rec.group();
            match subject_groups.get(&rec.subject_id) {
                Some(existing) if *existing != group => {
                    return Err(Error::Validation(format!(
                        "line {}: subject `{}` listed in group {group} but earlier in {existing}",
                        line_of(i),
                        rec.subject_id
                    )))
                }
                Some(_) => {}
                None => {
                    subject_groups.insert(rec.subject_id.clone(), group);
                }
            }
        }
        let mut groups: BTreeMap<Group, Vec<String>> = BTreeMap::new();
        for (subject, group) in &subject_groups {
            groups.entry(group.clone()).or_default().push(subject.clone());
        }
        Ok(DatasetManifest {
            root,
            records,
            groups,
            subject_groups,
            by_image,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn groups(&self) -> &BTreeMap<Group, Vec<String>> {
        &self.groups
    }

    pub fn subjects(&self) -> impl Iterator<Item = &str> {
        self.subject_groups.keys().map(String::as_str)
    }

    pub fn subject_count(&self) -> usize {
        self.subject_groups.len()
    }

    pub fn record(&self, image_id: &str) -> Option<&ManifestRecord> {
        self.by_image.get(image_id).map(|&i| &self.records[i])
    }

    /// All images of a subject, ordered by image_id.
    pub fn images_of(&self, subject_id: &str) -> Vec<&ManifestRecord> {
        let mut v: Vec<&ManifestRecord> = self
            .records
            .iter()
            .filter(|r| r.subject_id == subject_id)
            .collect();
        v.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        v
    }

    /// The unique demographic group of a subject.
    pub fn group_of(&self, subject_id: &str) -> Result<&Group> {
        self.subject_groups
            .get(subject_id)
            .ok_or_else(|| Error::UnknownSubject(subject_id.to_string()))
    }

    /// Subjects of one gender across every ethnicity, sorted.
    pub fn subjects_of_gender(&self, gender: Gender) -> Vec<&str> {
        self.subject_groups
            .iter()
            .filter(|(_, g)| g.gender == gender)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    /// Concatenate manifests, rewriting paths so each still resolves to the
    /// same file.
    pub fn merged(parts: &[DatasetManifest]) -> Result<Self> {
        let mut records = Vec::new();
        for m in parts {
            for r in &m.records {
                records.push(ManifestRecord {
                    image_path: m.resolve(&r.image_path),
                    landmarks_path: m.resolve(&r.landmarks_path),
                    embedding_path: r.embedding_path.as_ref().map(|p| m.resolve(p)),
                    ..r.clone()
                });
            }
        }
        Self::build(PathBuf::new(), records, None)
    }
}

/// Parse a manifest file. Images are not touched.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    parse_manifest(&text, root)
}

pub fn parse_manifest(text: &str, root: PathBuf) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = reader.records();
    let header = match rows.next() {
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "no records".into(),
            })
        }
        Some(h) => h.map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?,
    };
    let names: Vec<&str> = header.iter().collect();
    if names.len() < MANIFEST_HEADER.len() || names[..MANIFEST_HEADER.len()] != MANIFEST_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", MANIFEST_HEADER.join(",")),
        });
    }

    let mut records = Vec::new();
    let mut lines = Vec::new();
    for row in rows {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() == 1 && row.get(0) == Some("") {
            continue;
        }
        if row.len() < MANIFEST_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!(
                    "expected {} fields, found {}",
                    MANIFEST_HEADER.len(),
                    row.len()
                ),
            });
        }
        let field = |i: usize| row.get(i).unwrap_or("");
        for (i, name) in MANIFEST_HEADER.iter().enumerate().take(6) {
            if field(i).is_empty() {
                return Err(Error::Parse {
                    line,
                    message: format!("empty `{name}`"),
                });
            }
        }
        let gender: Gender = field(2).parse().map_err(|e: Error| match e {
            Error::Validation(m) => Error::Validation(format!("line {line}: {m}")),
            other => other,
        })?;
        records.push(ManifestRecord {
            image_id: field(0).to_string(),
            subject_id: field(1).to_string(),
            gender,
            ethnicity: field(3).to_string(),
            image_path: PathBuf::from(field(4)),
            landmarks_path: PathBuf::from(field(5)),
            embedding_path: Some(field(6))
                .filter(|s| !s.is_empty())
                .map(PathBuf::from),
        });
        lines.push(line);
    }
    if records.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no records".into(),
        });
    }
    DatasetManifest::build(root, records, Some(&lines))
}

pub(crate) fn record_fields(r: &ManifestRecord) -> [String; 7] {
    [
        r.image_id.clone(),
        r.subject_id.clone(),
        r.gender.to_string(),
        r.ethnicity.clone(),
        r.image_path.to_string_lossy().into_owned(),
        r.landmarks_path.to_string_lossy().into_owned(),
        r.embedding_path
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_default(),
    ]
}

/// Write records in manifest format. Paths are written verbatim.
pub fn write_manifest(records: &[ManifestRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(MANIFEST_HEADER)?;
    for r in records {
        w.write_record(record_fields(r))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// A loaded face: pixels, landmarks and optional embedding.
#[derive(Clone, Debug)]
pub struct FaceRecord {
    pub record: ManifestRecord,
    pub image: RgbImage,
    pub landmarks: Landmarks,
    pub embedding: Option<Vec<f64>>,
}

impl FaceRecord {
    /// Wrap in-memory data, checking the same invariants as [`load_face`].
    pub fn new(
        record: ManifestRecord,
        image: RgbImage,
        landmarks: Landmarks,
        embedding: Option<Vec<f64>>,
        pyramid_levels: usize,
    ) -> Result<Self> {
        check_image_shape(&image, &record.image_path, pyramid_levels)?;
        landmarks
            .check_bounds(image.width())
            .map_err(|reason| Error::Landmark {
                path: record.landmarks_path.clone(),
                reason,
            })?;
        Ok(FaceRecord {
            record,
            image,
            landmarks,
            embedding,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.record.image_id
    }

    pub fn subject_id(&self) -> &str {
        &self.record.subject_id
    }

    pub fn side(&self) -> u32 {
        self.image.width()
    }
}

/// Square, and each side divisible by `2^(levels-1)` so every pyramid level
/// halves cleanly.
pub fn check_image_shape(image: &RgbImage, path: &Path, pyramid_levels: usize) -> Result<()> {
    let (w, h) = image.dimensions();
    let dim_err = |reason: String| Error::Dimension {
        path: path.to_path_buf(),
        width: w,
        height: h,
        reason,
    };
    if w != h {
        return Err(dim_err("image must be square".into()));
    }
    if w == 0 {
        return Err(dim_err("image is empty".into()));
    }
    let div = 1u32 << pyramid_levels.saturating_sub(1).min(31);
    if w % div != 0 {
        return Err(dim_err(format!(
            "side must be divisible by {div} for {pyramid_levels} pyramid levels"
        )));
    }
    Ok(())
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

pub fn save_image(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Parse a one-line comma separated embedding file.
pub fn parse_embedding(text: &str, path: &Path) -> Result<Vec<f64>> {
    let v = text
        .trim()
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::Validation(format!("{}: bad embedding value `{s}`", path.display()))
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    if v.is_empty() {
        return Err(Error::Validation(format!("{}: empty embedding", path.display())));
    }
    Ok(v)
}

pub fn load_embedding(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embedding(&text, path)
}

pub fn format_embedding(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    parts.join(",") + "\n"
}

/// Load pixels, landmarks and (when listed) the embedding of one record.
pub fn load_face(
    manifest: &DatasetManifest,
    record: &ManifestRecord,
    pyramid_levels: usize,
) -> Result<FaceRecord> {
    let image_path = manifest.resolve(&record.image_path);
    let image = load_image(&image_path)?;
    check_image_shape(&image, &image_path, pyramid_levels)?;
    let lm_path = manifest.resolve(&record.landmarks_path);
    let landmarks = Landmarks::load(&lm_path)?;
    landmarks
        .check_bounds(image.width())
        .map_err(|reason| Error::Landmark {
            path: lm_path.clone(),
            reason,
        })?;
    let embedding = match &record.embedding_path {
        Some(p) => Some(load_embedding(&manifest.resolve(p))?),
        None => None,
    };
    Ok(FaceRecord {
        record: record.clone(),
        image,
        landmarks,
        embedding,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "image_id,subject_id,gender,ethnicity,image_path,landmarks_path,embedding_path\n";

    fn parse(body: &str) -> Result<DatasetManifest> {
        parse_manifest(&format!("{HEADER}{body}"), PathBuf::from("/data"))
    }

    #[test]
    fn three_rows_two_subjects() {
        let m = parse(
            "a1,s1,male,caucasian,a1.png,a1.txt,\n\
             a2,s1,male,caucasian,a2.png,a2.txt,a2.emb\n\
             b1,s2,female,asian,b1.png,b1.txt,\n",
        )
        .unwrap();
        assert_eq!(m.records().len(), 3);
        assert_eq!(m.subject_count(), 2);
        assert_eq!(m.groups().len(), 2);
        assert_eq!(
            m.group_of("s1").unwrap(),
            &Group::new(Gender::Male, "caucasian")
        );
        assert_eq!(m.record("a2").unwrap().embedding_path, Some("a2.emb".into()));
        assert_eq!(m.resolve(Path::new("a1.png")), PathBuf::from("/data/a1.png"));
    }

    #[test]
    fn empty_file_has_no_records() {
        let err = parse_manifest("", PathBuf::new()).unwrap_err();
        assert!(err.to_string().contains("no records"), "{err}");
        let err = parse("").unwrap_err();
        assert!(err.to_string().contains("no records"), "{err}");
    }

    #[test]
    fn duplicate_image_id_cites_both_lines() {
        let err = parse(
            "a,s1,male,x,a.png,a.txt,\n\
             b,s1,male,x,b.png,b.txt,\n\
             c,s1,male,x,c.png,c.txt,\n\
             a,s2,male,x,d.png,d.txt,\n",
        )
        .unwrap_err();
        match err {
            Error::DuplicateImage {
                first_line,
                second_line,
                ..
            } => assert_eq!((first_line, second_line), (2, 5)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_gender_and_short_rows() {
        let err = parse("a,s1,robot,x,a.png,a.txt,\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        let err = parse("a,s1,male\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn subject_in_two_groups_is_rejected() {
        let err = parse(
            "a,s1,male,asian,a.png,a.txt,\n\
             b,s1,male,caucasian,b.png,b.txt,\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn unknown_subject_lookup() {
        let m = parse("a,s1,male,asian,a.png,a.txt,\n").unwrap();
        assert!(matches!(m.group_of("nobody"), Err(Error::UnknownSubject(_))));
    }

    #[test]
    fn bad_header() {
        let err = parse_manifest("id,subject\nx,y\n", PathBuf::new()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn extra_columns_are_ignored() {
        let text = "image_id,subject_id,gender,ethnicity,image_path,landmarks_path,embedding_path,seed\n\
                    a,s1,female,x,a.png,a.txt,,42\n";
        let m = parse_manifest(text, PathBuf::new()).unwrap();
        assert_eq!(m.records()[0].embedding_path, None);
    }

    #[test]
    fn shape_checks() {
        let p = Path::new("img.png");
        assert!(check_image_shape(&RgbImage::new(512, 512), p, 4).is_ok());
        assert!(matches!(
            check_image_shape(&RgbImage::new(512, 500), p, 4),
            Err(Error::Dimension { .. })
        ));
        assert!(check_image_shape(&RgbImage::new(100, 100), p, 4).is_err());
        assert!(check_image_shape(&RgbImage::new(100, 100), p, 3).is_ok());
    }

    #[test]
    fn embedding_parse() {
        assert_eq!(
            parse_embedding("1, 2.5,-3\n", Path::new("e")).unwrap(),
            vec![1.0, 2.5, -3.0]
        );
        assert!(parse_embedding("1,,2", Path::new("e")).is_err());
    }
}
