//! Browser bindings: render procedural faces, show their meshes, blend two
//! faces along a seam and synthesize a face from generated donors.

use std::collections::BTreeMap;
use std::sync::Arc;

use image::RgbImage;
use srefi::blend::blend_patch;
use srefi::composite::EyePolicy;
use srefi::dataset::{FaceRecord, Gender, Group, ManifestRecord};
use srefi::donors::GenerationMode;
use srefi::mesh::{FaceMesh, MeshConfig};
use srefi::pipeline::{synthesize_face, DonorPlan, RunConfig};
use srefi::procedural::{render_face, Session, SubjectTraits};
use srefi::raster::Mask;
use srefi::reshape::{compute_bands, measure_ratios, RatioSample};
use srefi::seed::derive_seed;
use wasm_bindgen::prelude::*;

const ETHNICITY: &str = "caucasian";

fn face(seed: u64, side: u32) -> (RgbImage, srefi::landmarks::Landmarks) {
    let traits = SubjectTraits::sample(derive_seed(seed, "subject", 0), ETHNICITY);
    render_face(&traits, &Session::sample(derive_seed(seed, "session", 0)), side)
}

fn rgba(img: &RgbImage) -> Vec<u8> {
    img.pixels().flat_map(|p| [p.0[0], p.0[1], p.0[2], 255]).collect()
}

fn check_side(side: u32) -> Result<(), String> {
    if !(32..=1024).contains(&side) || !side.is_multiple_of(32) {
        return Err(format!("side {side} must be a multiple of 32 in [32, 1024]"));
    }
    Ok(())
}

/// RGBA pixels of the procedural face `seed`.
pub fn face_pixels(seed: u64, side: u32) -> Result<Vec<u8>, String> {
    check_side(side)?;
    Ok(rgba(&face(seed, side).0))
}

/// The face drawn under its region-labeled mesh, as an SVG document.
pub fn mesh_svg(seed: u64, side: u32, show_initial: bool) -> Result<String, String> {
    check_side(side)?;
    let (_, lm) = face(seed, side);
    let mesh = FaceMesh::build(&lm, side, &MeshConfig::default()).map_err(|e| e.to_string())?;
    Ok(mesh.to_svg(None, show_initial))
}

/// Face `a` left of column `seam`, face `b` right of it, blended over
/// `levels` pyramid levels. RGBA pixels.
pub fn blend_pixels(a: u64, b: u64, side: u32, seam: u32, levels: usize) -> Result<Vec<u8>, String> {
    check_side(side)?;
    let (ia, _) = face(a, side);
    let (ib, _) = face(b, side);
    let mask = Mask::from_fn(side as usize, side as usize, |x, _| (x as u32) < seam);
    let out = blend_patch(&ia, &ib, &mask, levels).map_err(|e| e.to_string())?;
    Ok(rgba(&out))
}

/// A face recombined from `donors` generated faces around base `seed`.
pub fn synthesize_pixels(seed: u64, side: u32, donors: usize, c_donor: usize, levels: usize) -> Result<Vec<u8>, String> {
    check_side(side)?;
    if donors < 2 {
        return Err("at least 2 donors are needed".into());
    }
    let group = Group::new(Gender::Male, ETHNICITY);
    let record = |id: &str, subject: &str| ManifestRecord {
        image_id: id.into(),
        subject_id: subject.into(),
        gender: group.gender,
        ethnicity: group.ethnicity.clone(),
        image_path: format!("{id}.png").into(),
        landmarks_path: format!("{id}.txt").into(),
        embedding_path: None,
    };
    let mut faces: BTreeMap<String, Arc<FaceRecord>> = BTreeMap::new();
    for k in 0..=donors {
        let id = format!("face{k}");
        let (img, lm) = face(derive_seed(seed, "donor", k as u64), side);
        let f = FaceRecord::new(record(&id, &id), img, lm, None, levels).map_err(|e| e.to_string())?;
        faces.insert(id, Arc::new(f));
    }
    let samples: Vec<RatioSample> = faces
        .values()
        .map(|f| {
            Ok(RatioSample {
                subject_id: f.subject_id().into(),
                group: group.clone(),
                ratios: measure_ratios(&f.landmarks)?,
            })
        })
        .collect::<srefi::Result<_>>()
        .map_err(|e| e.to_string())?;
    let bands = compute_bands(&samples, &group, 1).map_err(|e| e.to_string())?;
    let base = faces["face0"].clone();
    let pool: Vec<String> = faces.keys().filter(|k| *k != "face0").cloned().collect();
    let mut config = RunConfig::new(GenerationMode::ExpandRealId, "");
    config.c_donor = c_donor;
    config.pyramid_levels = levels;
    config.eyes = EyePolicy::Shared;
    config.validate().map_err(|e| e.to_string())?;
    let lookup = |id: &str| {
        faces
            .get(id)
            .cloned()
            .ok_or_else(|| srefi::Error::MissingData(format!("no face `{id}`")))
    };
    let (_, _, img, _) = synthesize_face(&base, &bands, &DonorPlan::Free { pool }, &lookup, seed, &config)
        .map_err(|e| e.to_string())?;
    Ok(rgba(&img))
}

fn js(e: String) -> JsValue {
    JsValue::from_str(&e)
}

#[wasm_bindgen(js_name = facePixels)]
pub fn face_pixels_js(seed: u32, side: u32) -> Result<Vec<u8>, JsValue> {
    face_pixels(seed as u64, side).map_err(js)
}

#[wasm_bindgen(js_name = meshSvg)]
pub fn mesh_svg_js(seed: u32, side: u32, show_initial: bool) -> Result<String, JsValue> {
    mesh_svg(seed as u64, side, show_initial).map_err(js)
}

#[wasm_bindgen(js_name = blendPixels)]
pub fn blend_pixels_js(a: u32, b: u32, side: u32, seam: u32, levels: u32) -> Result<Vec<u8>, JsValue> {
    blend_pixels(a as u64, b as u64, side, seam, levels as usize).map_err(js)
}

#[wasm_bindgen(js_name = synthesizePixels)]
pub fn synthesize_pixels_js(seed: u32, side: u32, donors: u32, c_donor: u32, levels: u32) -> Result<Vec<u8>, JsValue> {
    synthesize_pixels(seed as u64, side, donors as usize, c_donor as usize, levels as usize).map_err(js)
}
