//! Verification scoring: normalize embeddings, score every probe/gallery
//! pair by cosine similarity, and build the ROC curve.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::dataset::{load_embedding, load_image, DatasetManifest, ManifestRecord};
use crate::donors::{cosine_similarity, desk_embedding, EmbeddingProvider};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPair {
    pub probe_image_id: String,
    pub gallery_image_id: String,
    pub mated: bool,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub tar: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    /// One point per distinct score, highest threshold first.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,far,tar\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.far, p.tar);
        }
        let _ = writeln!(out, "# auc={}", self.auc);
        out
    }
}

/// Per-component min-max scaling over the batch; constant components map to 0.
pub fn minmax_normalize(vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Input("cannot normalize an empty batch".into()))?;
    let d = first.len();
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::Shape(format!("mixed dimensions {d} and {}", v.len())));
    }
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for v in vectors {
        for j in 0..d {
            lo[j] = lo[j].min(v[j]);
            hi[j] = hi[j].max(v[j]);
        }
    }
    Ok(vectors
        .iter()
        .map(|v| {
            (0..d)
                .map(|j| {
                    let span = hi[j] - lo[j];
                    if span > 0.0 {
                        (v[j] - lo[j]) / span
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect())
}

/// An image with the identity it is scored under.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Labeled {
    pub image_id: String,
    pub identity: String,
}

/// Full probe x gallery cross product, skipping pairs of an image with itself.
pub fn score_pairs(
    probes: &[Labeled],
    gallery: &[Labeled],
    embeddings: &BTreeMap<String, Vec<f64>>,
) -> Result<Vec<ScoredPair>> {
    let get = |id: &str| {
        embeddings
            .get(id)
            .ok_or_else(|| Error::MissingData(format!("no embedding for image `{id}`")))
    };
    let mut out = Vec::with_capacity(probes.len() * gallery.len());
    for p in probes {
        let pv = get(&p.image_id)?;
        for g in gallery {
            if g.image_id == p.image_id {
                continue;
            }
            out.push(ScoredPair {
                probe_image_id: p.image_id.clone(),
                gallery_image_id: g.image_id.clone(),
                mated: p.identity == g.identity,
                score: cosine_similarity(pv, get(&g.image_id)?)?,
            });
        }
    }
    Ok(out)
}

pub fn roc(pairs: &[ScoredPair]) -> Result<RocCurve> {
    let mated = pairs.iter().filter(|p| p.mated).count();
    let nonmated = pairs.len() - mated;
    if mated == 0 || nonmated == 0 {
        return Err(Error::Evaluation(format!(
            "ROC needs both classes; got {mated} mated and {nonmated} nonmated pairs"
        )));
    }
    if pairs.iter().any(|p| !p.score.is_finite()) {
        return Err(Error::Evaluation("non-finite score".into()));
    }
    let mut sorted: Vec<(f64, bool)> = pairs.iter().map(|p| (p.score, p.mated)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            far: fp as f64 / nonmated as f64,
            tar: tp as f64 / mated as f64,
        });
    }
    let mut auc = 0.0;
    let (mut x0, mut y0) = (0.0, 0.0);
    for p in &points {
        auc += (p.far - x0) * (p.tar + y0) / 2.0;
        x0 = p.far;
        y0 = p.tar;
    }
    Ok(RocCurve { points, auc })
}

pub fn scores_csv(pairs: &[ScoredPair]) -> String {
    let mut out = String::from("probe_image_id,gallery_image_id,label,score\n");
    for p in pairs {
        let label = if p.mated { "mated" } else { "nonmated" };
        let _ = writeln!(out, "{},{},{label},{}", p.probe_image_id, p.gallery_image_id, p.score);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    RealVsReal,
    SynthVsSynth,
    ExpandVsExpand,
    ExpandVsReal,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [
        Experiment::RealVsReal,
        Experiment::SynthVsSynth,
        Experiment::ExpandVsExpand,
        Experiment::ExpandVsReal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::RealVsReal => "real_vs_real",
            Experiment::SynthVsSynth => "synth_vs_synth",
            Experiment::ExpandVsExpand => "expand_vs_expand",
            Experiment::ExpandVsReal => "expand_vs_real",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub experiment: Experiment,
    pub pairs: Vec<ScoredPair>,
    pub curve: RocCurve,
}

impl ExperimentResult {
    pub fn mean_scores(&self) -> (f64, f64) {
        let mean = |mated: bool| {
            let s: Vec<f64> = self.pairs.iter().filter(|p| p.mated == mated).map(|p| p.score).collect();
            s.iter().sum::<f64>() / s.len().max(1) as f64
        };
        (mean(true), mean(false))
    }
}

fn labeled(records: &[&ManifestRecord]) -> Vec<Labeled> {
    let mut v: Vec<Labeled> = records
        .iter()
        .map(|r| Labeled {
            image_id: r.image_id.clone(),
            identity: r.subject_id.clone(),
        })
        .collect();
    v.sort();
    v
}

/// Embed every record of a manifest, keyed by image id.
pub fn embed_manifest(
    manifest: &DatasetManifest,
    records: &[&ManifestRecord],
    provider: EmbeddingProvider,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for r in records {
        let v = match provider {
            EmbeddingProvider::Desk => desk_embedding(&load_image(&manifest.resolve(&r.image_path))?)?,
            EmbeddingProvider::File => {
                let p = r.embedding_path.as_ref().ok_or_else(|| {
                    Error::MissingData(format!("image `{}` has no embedding file", r.image_id))
                })?;
                load_embedding(&manifest.resolve(p))?
            }
        };
        out.insert(r.image_id.clone(), v);
    }
    Ok(out)
}

/// Probe and gallery sets of an experiment. Synthetic records whose label is
/// a real subject are expanded images; all others are synthetic identities.
pub fn experiment_sets<'a>(
    experiment: Experiment,
    real: &'a DatasetManifest,
    synth: Option<&'a DatasetManifest>,
) -> Result<(Vec<&'a ManifestRecord>, Vec<&'a ManifestRecord>)> {
    let real_subjects: BTreeSet<&str> = real.subjects().collect();
    let synth_records = |expanded: bool| -> Result<Vec<&'a ManifestRecord>> {
        let m = synth.ok_or_else(|| Error::Input(format!("{experiment} needs a synthetic manifest")))?;
        let v: Vec<&ManifestRecord> = m
            .records()
            .iter()
            .filter(|r| real_subjects.contains(r.subject_id.as_str()) == expanded)
            .collect();
        if v.is_empty() {
            return Err(Error::Input(format!(
                "{experiment}: the synthetic manifest has no {} images",
                if expanded { "expanded" } else { "synthetic-identity" }
            )));
        }
        Ok(v)
    };
    Ok(match experiment {
        Experiment::RealVsReal => {
            let r: Vec<&ManifestRecord> = real.records().iter().collect();
            (r.clone(), r)
        }
        Experiment::SynthVsSynth => {
            let s = synth_records(false)?;
            (s.clone(), s)
        }
        Experiment::ExpandVsExpand => {
            let s = synth_records(true)?;
            (s.clone(), s)
        }
        Experiment::ExpandVsReal => (synth_records(true)?, real.records().iter().collect()),
    })
}

/// Score one experiment. Normalization is fit on probes and gallery together.
pub fn run_experiment(
    experiment: Experiment,
    real: &DatasetManifest,
    synth: Option<&DatasetManifest>,
    provider: EmbeddingProvider,
) -> Result<ExperimentResult> {
    let (probes, gallery) = experiment_sets(experiment, real, synth)?;
    let (probe_real, gallery_real) = match experiment {
        Experiment::RealVsReal => (true, true),
        Experiment::ExpandVsReal => (false, true),
        _ => (false, false),
    };
    let mut raw = BTreeMap::new();
    for (records, is_real) in [(&probes, probe_real), (&gallery, gallery_real)] {
        let source = if is_real { real } else { synth.expect("synthetic sets imply a manifest") };
        raw.extend(embed_manifest(source, records, provider)?);
    }
    let ids: Vec<String> = raw.keys().cloned().collect();
    let vectors: Vec<Vec<f64>> = raw.into_values().collect();
    let normalized: BTreeMap<String, Vec<f64>> = ids.into_iter().zip(minmax_normalize(&vectors)?).collect();
    let pairs = score_pairs(&labeled(&probes), &labeled(&gallery), &normalized)?;
    let curve = roc(&pairs)?;
    Ok(ExperimentResult {
        experiment,
        pairs,
        curve,
    })
}

pub fn write_roc_csv(curve: &RocCurve, path: &Path) -> Result<()> {
    std::fs::write(path, curve.to_csv()).map_err(|e| Error::io(path, e))
}

pub fn write_scores_csv(pairs: &[ScoredPair], path: &Path) -> Result<()> {
    std::fs::write(path, scores_csv(pairs)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(score: f64, mated: bool) -> ScoredPair {
        ScoredPair {
            probe_image_id: "p".into(),
            gallery_image_id: "g".into(),
            mated,
            score,
        }
    }

    // Brute force: for every candidate threshold count acceptances directly.
    fn sweep_oracle(pairs: &[ScoredPair]) -> Vec<(f64, f64, f64)> {
        let mut ts: Vec<f64> = pairs.iter().map(|p| p.score).collect();
        ts.sort_by(|a, b| b.total_cmp(a));
        ts.dedup();
        let m = pairs.iter().filter(|p| p.mated).count() as f64;
        let n = pairs.len() as f64 - m;
        ts.into_iter()
            .map(|t| {
                let tp = pairs.iter().filter(|p| p.mated && p.score >= t).count() as f64;
                let fp = pairs.iter().filter(|p| !p.mated && p.score >= t).count() as f64;
                (t, fp / n, tp / m)
            })
            .collect()
    }

    #[test]
    fn minmax_example() {
        let out = minmax_normalize(&[vec![0.0, 10.0], vec![5.0, 10.0], vec![10.0, 10.0]]).unwrap();
        assert_eq!(out, vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![1.0, 0.0]]);
        assert_eq!(minmax_normalize(&[vec![3.0, -2.0]]).unwrap(), vec![vec![0.0, 0.0]]);
        assert_eq!(minmax_normalize(&out).unwrap(), out);
        assert!(matches!(minmax_normalize(&[]), Err(Error::Input(_))));
    }

    fn lab(id: &str, who: &str) -> Labeled {
        Labeled { image_id: id.into(), identity: who.into() }
    }

    #[test]
    fn pair_counts() {
        let emb: BTreeMap<String, Vec<f64>> = ["a", "b", "c", "d"]
            .iter()
            .enumerate()
            .map(|(i, s)| (s.to_string(), vec![1.0, i as f64 + 1.0]))
            .collect();
        let p = vec![lab("a", "x"), lab("b", "y")];
        let g = vec![lab("c", "x"), lab("d", "z")];
        assert_eq!(score_pairs(&p, &g, &emb).unwrap().len(), 4);
        let all = vec![lab("a", "x"), lab("b", "x"), lab("c", "y")];
        let s = score_pairs(&all, &all, &emb).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s.iter().filter(|p| p.mated).count(), 2);
        let same: BTreeMap<String, Vec<f64>> = [("a".to_string(), vec![1.0, 2.0]), ("b".to_string(), vec![1.0, 2.0])].into();
        let s = score_pairs(&[lab("a", "x")], &[lab("b", "x")], &same).unwrap();
        assert!((s[0].score - 1.0).abs() < 1e-12);
        assert!(matches!(score_pairs(&[lab("q", "x")], &g, &emb), Err(Error::MissingData(_))));
    }

    #[test]
    fn roc_examples() {
        let r = roc(&[pair(0.9, true), pair(0.1, false)]).unwrap();
        assert_eq!(r.points[0], RocPoint { threshold: 0.9, far: 0.0, tar: 1.0 });
        assert_eq!(r.auc, 1.0);
        let same = [pair(0.2, true), pair(0.7, true), pair(0.2, false), pair(0.7, false)];
        assert_eq!(roc(&same).unwrap().auc, 0.5);
        assert!(matches!(roc(&[pair(0.3, true)]), Err(Error::Evaluation(_))));
        let six = [
            pair(0.9, true),
            pair(0.8, false),
            pair(0.7, true),
            pair(0.6, false),
            pair(0.5, true),
            pair(0.4, false),
        ];
        let r = roc(&six).unwrap();
        let got: Vec<(f64, f64, f64)> = r.points.iter().map(|p| (p.threshold, p.far, p.tar)).collect();
        assert_eq!(got, sweep_oracle(&six));
        assert!((r.auc - 2.0 / 3.0).abs() < 1e-12);
        let csv = r.to_csv();
        assert!(csv.starts_with("threshold,far,tar\n"));
        assert!(csv.trim_end().lines().last().unwrap().starts_with("# auc="));
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.as_str().parse::<Experiment>().unwrap(), e);
        }
        assert!("nope".parse::<Experiment>().is_err());
    }

    proptest! {
        #[test]
        fn roc_matches_sweep_and_is_monotone(
            raw in prop::collection::vec((0u8..20, any::<bool>()), 2..60),
        ) {
            let mut pairs: Vec<ScoredPair> = raw.iter().map(|&(s, m)| pair(s as f64 / 20.0, m)).collect();
            pairs[0].mated = true;
            pairs[1].mated = false;
            let r = roc(&pairs).unwrap();
            let got: Vec<(f64, f64, f64)> = r.points.iter().map(|p| (p.threshold, p.far, p.tar)).collect();
            prop_assert_eq!(got, sweep_oracle(&pairs));
            for w in r.points.windows(2) {
                prop_assert!(w[1].far >= w[0].far && w[1].tar >= w[0].tar);
            }
            prop_assert!((0.0..=1.0).contains(&r.auc));
            // A strictly increasing transform leaves the curve's area alone.
            let warped: Vec<ScoredPair> = pairs.iter().map(|p| ScoredPair { score: (3.0 * p.score).exp(), ..p.clone() }).collect();
            prop_assert!((roc(&warped).unwrap().auc - r.auc).abs() < 1e-12);
        }
    }
}
