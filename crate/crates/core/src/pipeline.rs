//! Batch generation: expand real identities or mint synthetic ones, write
//! the images and an output manifest that can be read back as a donor set.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blend::{blend_patch, build_gaussian, build_laplacian, normalized_for_display, DEFAULT_PYRAMID_LEVELS};
use crate::composite::{
    assign_donors, assign_donors_with_keys, composite_face, warp_image, DonorAssignment, EyePolicy, DEFAULT_C_DONOR,
    MAX_C_DONOR, MIN_C_DONOR,
};
use crate::dataset::{
    load_face, DatasetManifest, FaceRecord, Gender, Group, ManifestRecord, MANIFEST_HEADER,
};
use crate::donors::{
    build_donor_pool, embed_faces, EmbeddingIndex, EmbeddingProvider, GenerationMode, Metric, DEFAULT_PROXIMAL_N,
};
use crate::error::{Error, Result};
use crate::landmarks::Landmarks;
use crate::mesh::{FaceMesh, MeshConfig, Region};
use crate::raster::{merge_channels, Plane};
use crate::reshape::{compute_bands, measure_ratios, reposition_or_relax, RatioBands, RatioSample, MIN_BAND_SAMPLES};
use crate::seed::derive_seed;

pub const OUTPUT_MANIFEST: &str = "manifest.csv";
pub const PROVENANCE_HEADER: [&str; 4] = ["base_image_id", "donor_image_ids", "region_donors", "seed"];

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub mode: GenerationMode,
    pub images_per_identity: usize,
    /// Synthetic identities to mint; ignored in expand mode.
    pub identity_count: usize,
    pub c_donor: usize,
    pub proximal_n: usize,
    pub pyramid_levels: usize,
    pub master_seed: u64,
    pub embedding_provider: EmbeddingProvider,
    pub output_dir: PathBuf,
    pub min_band_samples: usize,
    pub eyes: EyePolicy,
    /// Skip subjects too small to expand instead of failing the run.
    pub skip_insufficient: bool,
    pub dump_stages: bool,
    pub export_mesh_svg: bool,
    pub mesh: MeshConfig,
}

impl RunConfig {
    pub fn new(mode: GenerationMode, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            mode,
            images_per_identity: 1,
            identity_count: 1,
            c_donor: DEFAULT_C_DONOR,
            proximal_n: DEFAULT_PROXIMAL_N,
            pyramid_levels: DEFAULT_PYRAMID_LEVELS,
            master_seed: 0,
            embedding_provider: EmbeddingProvider::Desk,
            output_dir: output_dir.into(),
            min_band_samples: MIN_BAND_SAMPLES,
            eyes: EyePolicy::Shared,
            skip_insufficient: true,
            dump_stages: false,
            export_mesh_svg: false,
            mesh: MeshConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.images_per_identity == 0 {
            return Err(Error::Config("images per identity must be at least 1".into()));
        }
        if !(MIN_C_DONOR..=MAX_C_DONOR).contains(&self.c_donor) {
            return Err(Error::Config(format!(
                "c_donor {} outside [{MIN_C_DONOR}, {MAX_C_DONOR}]",
                self.c_donor
            )));
        }
        if self.pyramid_levels == 0 {
            return Err(Error::Config("pyramid levels must be at least 1".into()));
        }
        if self.proximal_n == 0 {
            return Err(Error::Config("proximal subject count must be at least 1".into()));
        }
        if self.min_band_samples == 0 {
            return Err(Error::Config("band sample minimum must be at least 1".into()));
        }
        if self.mode == GenerationMode::SynthId && self.identity_count == 0 {
            return Err(Error::Config("identity count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Provenance of one generated image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputRecord {
    pub synthetic_image_id: String,
    pub identity_label: String,
    pub gender: Gender,
    pub ethnicity: String,
    pub base_image_id: String,
    /// Donors that own at least one triangle, in selection order.
    pub donor_image_ids: Vec<String>,
    pub region_donors: BTreeMap<Region, String>,
    pub seed_used: u64,
}

impl OutputRecord {
    pub fn image_path(&self) -> PathBuf {
        Path::new(&self.identity_label).join(format!("{}.png", self.synthetic_image_id))
    }

    pub fn landmarks_path(&self) -> PathBuf {
        Path::new(&self.identity_label).join(format!("{}.txt", self.synthetic_image_id))
    }

    pub fn manifest_record(&self) -> ManifestRecord {
        ManifestRecord {
            image_id: self.synthetic_image_id.clone(),
            subject_id: self.identity_label.clone(),
            gender: self.gender,
            ethnicity: self.ethnicity.clone(),
            image_path: self.image_path(),
            landmarks_path: self.landmarks_path(),
            embedding_path: None,
        }
    }
}

fn format_region_donors(m: &BTreeMap<Region, String>) -> String {
    m.iter()
        .map(|(r, id)| format!("{}={id}", r.as_str()))
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_region_donors(s: &str) -> Result<BTreeMap<Region, String>> {
    let mut out = BTreeMap::new();
    for part in s.split(';').filter(|p| !p.is_empty()) {
        let (name, id) = part
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("bad region donor `{part}`")))?;
        let region = Region::ALL
            .into_iter()
            .find(|r| r.as_str() == name)
            .ok_or_else(|| Error::Validation(format!("unknown region `{name}`")))?;
        out.insert(region, id.to_string());
    }
    Ok(out)
}

/// A generated face before it is written.
#[derive(Clone, Debug)]
pub struct SynthesizedFace {
    pub record: OutputRecord,
    pub image: RgbImage,
    pub landmarks: Landmarks,
    pub stages: Option<Stages>,
    pub mesh: FaceMesh,
}

/// Intermediate images kept for inspection.
#[derive(Clone, Debug)]
pub struct Stages {
    pub warped_base: RgbImage,
    pub mosaic: RgbImage,
    pub reshape_step: f64,
}

/// Write through a temporary sibling so an interrupted write never
/// leaves a truncated file under the final name.
fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".part");
    let tmp = PathBuf::from(tmp);
    if let Err(e) = write(&tmp) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e);
    }
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    write_atomic(path, |tmp| {
        img.save_with_format(tmp, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    })
}

fn save_text(text: &str, path: &Path) -> Result<()> {
    write_atomic(path, |tmp| std::fs::write(tmp, text).map_err(|e| Error::io(path, e)))
}

/// Image, landmarks and any requested extras of one face.
pub fn write_face(face: &SynthesizedFace, dir: &Path, export_mesh_svg: bool, levels: usize) -> Result<()> {
    let r = &face.record;
    save_png(&face.image, &dir.join(r.image_path()))?;
    save_text(&face.landmarks.to_text(), &dir.join(r.landmarks_path()))?;
    if export_mesh_svg {
        let href = format!("../{}/{}.png", r.identity_label, r.synthetic_image_id);
        let svg = face.mesh.to_svg(Some(&href), false);
        save_text(&svg, &dir.join("meshes").join(format!("{}.svg", r.synthetic_image_id)))?;
    }
    if let Some(st) = &face.stages {
        let sd = dir.join("stages").join(&r.synthetic_image_id);
        save_png(&st.warped_base, &sd.join("warped_base.png"))?;
        save_png(&st.mosaic, &sd.join("mosaic.png"))?;
        save_png(&face.image, &sd.join("final.png"))?;
        for (l, img) in laplacian_views(&face.image, levels)?.iter().enumerate() {
            save_png(img, &sd.join(format!("laplacian_{l}.png")))?;
        }
    }
    Ok(())
}

/// Each Laplacian level stretched to the full 0..=255 range per channel.
pub fn laplacian_views(img: &RgbImage, levels: usize) -> Result<Vec<RgbImage>> {
    let mut per_channel = Vec::with_capacity(3);
    for c in 0..3 {
        let g = build_gaussian(&Plane::from_channel(img, c), levels)?;
        per_channel.push(build_laplacian(&g)?.levels);
    }
    Ok((0..levels)
        .map(|l| {
            merge_channels(&[
                normalized_for_display(&per_channel[0][l]),
                normalized_for_display(&per_channel[1][l]),
                normalized_for_display(&per_channel[2][l]),
            ])
        })
        .collect())
}

pub fn output_manifest_csv(records: &[OutputRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = MANIFEST_HEADER.iter().chain(&PROVENANCE_HEADER).copied().collect();
    w.write_record(&header)?;
    for r in records {
        let m = r.manifest_record();
        w.write_record([
            m.image_id,
            m.subject_id,
            m.gender.to_string(),
            m.ethnicity,
            m.image_path.to_string_lossy().into_owned(),
            m.landmarks_path.to_string_lossy().into_owned(),
            String::new(),
            r.base_image_id.clone(),
            r.donor_image_ids.join(";"),
            format_region_donors(&r.region_donors),
            r.seed_used.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Write every face and then the manifest, sorted by label and image id.
pub fn write_outputs(faces: &[SynthesizedFace], output_dir: &Path) -> Result<PathBuf> {
    for f in faces {
        write_face(f, output_dir, false, DEFAULT_PYRAMID_LEVELS)?;
    }
    let records: Vec<OutputRecord> = faces.iter().map(|f| f.record.clone()).collect();
    write_output_manifest(&records, output_dir)
}

pub fn write_output_manifest(records: &[OutputRecord], output_dir: &Path) -> Result<PathBuf> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| {
        (&a.identity_label, &a.synthetic_image_id).cmp(&(&b.identity_label, &b.synthetic_image_id))
    });
    let path = output_dir.join(OUTPUT_MANIFEST);
    save_text(&output_manifest_csv(&sorted)?, &path)?;
    Ok(path)
}

/// Read the provenance back from an output manifest.
pub fn read_outputs(path: &Path) -> Result<Vec<OutputRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let expected: Vec<&str> = MANIFEST_HEADER.iter().chain(&PROVENANCE_HEADER).copied().collect();
    if header != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let f = |i: usize| row.get(i).unwrap_or("");
        let seed_used = f(10).parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad seed `{}`", f(10)),
        })?;
        out.push(OutputRecord {
            synthetic_image_id: f(0).into(),
            identity_label: f(1).into(),
            gender: f(2).parse()?,
            ethnicity: f(3).into(),
            base_image_id: f(7).into(),
            donor_image_ids: f(8).split(';').filter(|s| !s.is_empty()).map(str::to_string).collect(),
            region_donors: parse_region_donors(f(9))?,
            seed_used,
        });
    }
    Ok(out)
}

/// Faces are loaded on first use and shared between workers.
struct FaceCache<'a> {
    manifest: &'a DatasetManifest,
    levels: usize,
    faces: Mutex<HashMap<String, Arc<FaceRecord>>>,
}

impl<'a> FaceCache<'a> {
    fn new(manifest: &'a DatasetManifest, levels: usize) -> Self {
        FaceCache {
            manifest,
            levels,
            faces: Mutex::new(HashMap::new()),
        }
    }

    fn get(&self, image_id: &str) -> Result<Arc<FaceRecord>> {
        if let Some(f) = self.faces.lock().expect("cache lock").get(image_id) {
            return Ok(f.clone());
        }
        let record = self
            .manifest
            .record(image_id)
            .ok_or_else(|| Error::MissingData(format!("image `{image_id}` is not in the manifest")))?;
        let face = Arc::new(load_face(self.manifest, record, self.levels)?);
        self.faces
            .lock()
            .expect("cache lock")
            .insert(image_id.to_string(), face.clone());
        Ok(face)
    }
}

/// Ratio samples of every manifest image, read from the landmark files.
pub fn ratio_samples(manifest: &DatasetManifest) -> Result<Vec<RatioSample>> {
    manifest
        .records()
        .iter()
        .map(|r| {
            let lm = Landmarks::load(&manifest.resolve(&r.landmarks_path))?;
            Ok(RatioSample {
                subject_id: r.subject_id.clone(),
                group: r.group(),
                ratios: measure_ratios(&lm)?,
            })
        })
        .collect()
}

/// Bands for every group that appears among `groups`.
pub fn bands_for<'g>(
    samples: &[RatioSample],
    groups: impl IntoIterator<Item = &'g Group>,
    min_subjects: usize,
) -> Result<BTreeMap<Group, RatioBands>> {
    let mut out = BTreeMap::new();
    for g in groups {
        if !out.contains_key(g) {
            out.insert(g.clone(), compute_bands(samples, g, min_subjects)?);
        }
    }
    Ok(out)
}

/// How the donors of one face are chosen.
#[derive(Clone, Debug)]
pub enum DonorPlan {
    /// Everything drawn from `pool`.
    Free { pool: Vec<String> },
    /// Key regions fixed, cheek donors drawn from `pool`.
    Keyed { keys: Vec<String>, pool: Vec<String> },
}

/// One face to generate.
#[derive(Clone, Debug)]
pub struct Job {
    pub synthetic_image_id: String,
    pub identity_label: String,
    pub base_image_id: String,
    pub seed: u64,
    pub plan: DonorPlan,
}

/// Build, reshape, composite and blend one face.
pub fn synthesize_face(
    base: &FaceRecord,
    bands: &RatioBands,
    plan: &DonorPlan,
    donor_faces: &dyn Fn(&str) -> Result<Arc<FaceRecord>>,
    seed: u64,
    config: &RunConfig,
) -> Result<(FaceMesh, DonorAssignment, RgbImage, Stages)> {
    let side = base.side();
    let mesh = FaceMesh::build(&base.landmarks, side, &config.mesh)?;
    let (target, step) = reposition_or_relax(&mesh, bands)?;
    let warped_base = warp_image(&base.image, &mesh.dual_vertices, &target);
    let assignment = match plan {
        DonorPlan::Free { pool } => assign_donors(&target, pool, config.c_donor, seed, config.eyes)?,
        DonorPlan::Keyed { keys, pool } => {
            assign_donors_with_keys(&target, keys, pool, config.c_donor, seed, config.eyes)?
        }
    };
    let donors: Vec<Arc<FaceRecord>> = assignment
        .donors
        .iter()
        .map(|id| donor_faces(id))
        .collect::<Result<_>>()?;
    let images: Vec<&RgbImage> = donors.iter().map(|f| &f.image).collect();
    let positions: Vec<_> = donors.iter().map(|f| mesh.dual_positions_for(&f.landmarks)).collect();
    let comp = composite_face(&target, &warped_base, &assignment, &images, &positions)?;
    let mut current = comp.mosaic.clone();
    for d in comp.blend_order(&assignment) {
        current = blend_patch(&current, &comp.layers[d], &comp.masks[d].inverted(), config.pyramid_levels)?;
    }
    Ok((
        target,
        assignment,
        current,
        Stages {
            warped_base,
            mosaic: comp.mosaic,
            reshape_step: step,
        },
    ))
}

/// Jobs of an expand run: every subject with enough images, in id order.
pub fn expand_jobs(manifest: &DatasetManifest, config: &RunConfig) -> Result<Vec<Job>> {
    let mut jobs = Vec::new();
    for subject in manifest.subjects() {
        let images = manifest.images_of(subject);
        if images.len() < 3 {
            let msg = format!(
                "subject `{subject}` has {} image(s); expanding needs at least 3",
                images.len()
            );
            if config.skip_insufficient {
                log::warn!("{msg}; skipped");
                continue;
            }
            return Err(Error::InsufficientDonors(msg));
        }
        for j in 0..config.images_per_identity {
            let base = images[j % images.len()];
            let pool = build_donor_pool(manifest, None, base, GenerationMode::ExpandRealId, 0, Metric::Cosine)?;
            jobs.push(Job {
                synthetic_image_id: format!("{subject}_x{j:03}"),
                identity_label: subject.to_string(),
                base_image_id: base.image_id.clone(),
                seed: derive_seed(config.master_seed, subject, j as u64),
                plan: DonorPlan::Free {
                    pool: pool.candidate_ids().into_iter().map(str::to_string).collect(),
                },
            });
        }
    }
    Ok(jobs)
}

/// Groups with more than `proximal_n` subjects.
pub fn eligible_groups(manifest: &DatasetManifest, proximal_n: usize) -> Result<Vec<Group>> {
    let mut eligible = Vec::new();
    let mut small = Vec::new();
    for (g, subjects) in manifest.groups() {
        if subjects.len() > proximal_n {
            eligible.push(g.clone());
        } else {
            small.push(format!("{g} ({} subjects)", subjects.len()));
        }
    }
    if eligible.is_empty() {
        return Err(Error::Capacity(format!(
            "no group has more than {proximal_n} subjects: {}",
            small.join(", ")
        )));
    }
    if !small.is_empty() {
        log::warn!("groups too small for {proximal_n} proximal subjects, not used: {}", small.join(", "));
    }
    Ok(eligible)
}

/// Identity label `synth_<k>`, suffixed until it matches no real subject.
pub fn mint_label(k: usize, taken: &BTreeSet<&str>) -> String {
    let mut label = format!("synth_{k}");
    let mut n = 0;
    while taken.contains(label.as_str()) {
        n += 1;
        label = format!("synth_{k}_{n}");
    }
    label
}

/// Jobs of a synth run. Identity `k` is anchored on a subject chosen round
/// robin within the eligible groups; its key donors are fixed once from the
/// anchor's proximal pool and every image varies base and cheek donors.
pub fn synth_jobs(manifest: &DatasetManifest, index: &EmbeddingIndex, config: &RunConfig) -> Result<Vec<Job>> {
    let eligible = eligible_groups(manifest, config.proximal_n)?;
    let real: BTreeSet<&str> = manifest.subjects().collect();
    let units = match config.eyes {
        EyePolicy::Shared => 3,
        EyePolicy::Split => 4,
    };
    let mut jobs = Vec::new();
    for k in 0..config.identity_count {
        let group = &eligible[k % eligible.len()];
        let subjects = &manifest.groups()[group];
        let anchor = &subjects[(k / eligible.len()) % subjects.len()];
        let label = mint_label(k, &real);
        let images = manifest.images_of(anchor);
        let pool = build_donor_pool(manifest, Some(index), images[0], GenerationMode::SynthId, config.proximal_n, Metric::Cosine)?;
        let mut candidates: Vec<String> = pool.candidate_ids().into_iter().map(str::to_string).collect();
        candidates.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, &label, u64::MAX));
        candidates.shuffle(&mut rng);
        let keys: Vec<String> = (0..units).map(|i| candidates[i % candidates.len()].clone()).collect();
        let cheek: Vec<String> = candidates.iter().filter(|c| !keys.contains(c)).cloned().collect();
        for j in 0..config.images_per_identity {
            let base = images[j % images.len()];
            jobs.push(Job {
                synthetic_image_id: format!("{label}_{j:03}"),
                identity_label: label.clone(),
                base_image_id: base.image_id.clone(),
                seed: derive_seed(config.master_seed, &label, j as u64),
                plan: DonorPlan::Keyed {
                    keys: keys.clone(),
                    pool: cheek.clone(),
                },
            });
        }
    }
    Ok(jobs)
}

/// Embedding index over the whole manifest.
pub fn build_index(manifest: &DatasetManifest, provider: EmbeddingProvider, levels: usize) -> Result<EmbeddingIndex> {
    let faces: Vec<FaceRecord> = manifest
        .records()
        .iter()
        .map(|r| load_face(manifest, r, levels))
        .collect::<Result<_>>()?;
    EmbeddingIndex::build(manifest, embed_faces(&faces, provider)?)
}

/// Summary of a finished run.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub records: Vec<OutputRecord>,
    pub manifest_path: PathBuf,
    pub bands: BTreeMap<Group, RatioBands>,
}

fn run_job(
    job: &Job,
    cache: &FaceCache<'_>,
    bands: &BTreeMap<Group, RatioBands>,
    config: &RunConfig,
) -> Result<OutputRecord> {
    let base = cache.get(&job.base_image_id)?;
    let group = base.record.group();
    let (mesh, assignment, image, stages) = synthesize_face(
        &base,
        &bands[&group],
        &job.plan,
        &|id| cache.get(id),
        job.seed,
        config,
    )?;
    let record = OutputRecord {
        synthetic_image_id: job.synthetic_image_id.clone(),
        identity_label: job.identity_label.clone(),
        gender: group.gender,
        ethnicity: group.ethnicity.clone(),
        base_image_id: job.base_image_id.clone(),
        donor_image_ids: assignment.used_donors().into_iter().map(str::to_string).collect(),
        region_donors: assignment.region_donors.clone(),
        seed_used: job.seed,
    };
    let face = SynthesizedFace {
        record,
        image,
        landmarks: mesh.landmarks.clone(),
        stages: config.dump_stages.then_some(stages),
        mesh,
    };
    write_face(&face, &config.output_dir, config.export_mesh_svg, config.pyramid_levels)?;
    log::info!("wrote {}", face.record.synthetic_image_id);
    Ok(face.record)
}

#[cfg(feature = "parallel")]
fn run_all(
    jobs: &[Job],
    cache: &FaceCache<'_>,
    bands: &BTreeMap<Group, RatioBands>,
    config: &RunConfig,
) -> Result<Vec<OutputRecord>> {
    use rayon::prelude::*;
    jobs.par_iter().map(|j| run_job(j, cache, bands, config)).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_all(
    jobs: &[Job],
    cache: &FaceCache<'_>,
    bands: &BTreeMap<Group, RatioBands>,
    config: &RunConfig,
) -> Result<Vec<OutputRecord>> {
    jobs.iter().map(|j| run_job(j, cache, bands, config)).collect()
}

fn run_jobs(manifest: &DatasetManifest, jobs: Vec<Job>, config: &RunConfig) -> Result<RunReport> {
    let samples = ratio_samples(manifest)?;
    let groups: Vec<Group> = jobs
        .iter()
        .map(|j| {
            manifest
                .record(&j.base_image_id)
                .map(ManifestRecord::group)
                .ok_or_else(|| Error::MissingData(format!("image `{}` is not in the manifest", j.base_image_id)))
        })
        .collect::<Result<_>>()?;
    let bands = bands_for(&samples, &groups, config.min_band_samples)?;
    std::fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let cache = FaceCache::new(manifest, config.pyramid_levels);
    let records = run_all(&jobs, &cache, &bands, config)?;
    let manifest_path = write_output_manifest(&records, &config.output_dir)?;
    let mut records = records;
    records.sort_by(|a, b| {
        (&a.identity_label, &a.synthetic_image_id).cmp(&(&b.identity_label, &b.synthetic_image_id))
    });
    Ok(RunReport {
        records,
        manifest_path,
        bands,
    })
}

pub fn run_expand(manifest: &DatasetManifest, config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let jobs = expand_jobs(manifest, config)?;
    run_jobs(manifest, jobs, config)
}

pub fn run_synth(manifest: &DatasetManifest, config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    eligible_groups(manifest, config.proximal_n)?;
    let index = build_index(manifest, config.embedding_provider, config.pyramid_levels)?;
    let jobs = synth_jobs(manifest, &index, config)?;
    run_jobs(manifest, jobs, config)
}

/// Dispatch on `config.mode`.
pub fn run(manifest: &DatasetManifest, config: &RunConfig) -> Result<RunReport> {
    match config.mode {
        GenerationMode::ExpandRealId => run_expand(manifest, config),
        GenerationMode::SynthId => run_synth(manifest, config),
    }
}

/// One line per job for logs and dry runs.
pub fn describe_jobs(jobs: &[Job]) -> String {
    let mut out = String::new();
    for j in jobs {
        let _ = writeln!(out, "{} <- {} (seed {})", j.synthetic_image_id, j.base_image_id, j.seed);
    }
    out
}
