use std::path::Path;
use std::process::{Command, Output};

fn srefi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srefi"))
        .args(args)
        .output()
        .expect("run srefi")
}

fn fixture(dir: &Path, groups: &str, images: &str) -> String {
    let out = dir.join("real");
    let o = srefi(&[
        "fixture",
        "--out",
        out.to_str().unwrap(),
        "--groups",
        groups,
        "--images-per-subject",
        images,
        "--side",
        "64",
        "--seed",
        "4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.join("manifest.csv").to_str().unwrap().to_string()
}

fn generate(manifest: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "generate",
        "--manifest",
        manifest,
        "--c-donor",
        "5",
        "--seed",
        "9",
        "--pyramid-levels",
        "3",
        "--min-band-samples",
        "3",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    srefi(&args)
}

#[test]
fn expand_run_writes_everything_requested() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path(), "female/asian:4", "3");
    let out = dir.path().join("gen");
    let bands = dir.path().join("bands.csv");
    let o = generate(
        &m,
        &out,
        &[
            "--mode",
            "expand",
            "--images-per-identity",
            "2",
            "--dump-stages",
            "--export-mesh-svg",
            "--export-bands",
            bands.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 8);
    assert!(manifest.starts_with("image_id,subject_id,gender,ethnicity,image_path,landmarks_path,embedding_path,"));
    let first = manifest.lines().nth(1).unwrap();
    let id = first.split(',').next().unwrap();
    let subject = first.split(',').nth(1).unwrap();
    assert!(out.join(subject).join(format!("{id}.png")).is_file());
    assert!(out.join("meshes").join(format!("{id}.svg")).is_file());
    for stage in ["mosaic.png", "warped_base.png", "final.png", "laplacian_0.png", "laplacian_2.png"] {
        assert!(out.join("stages").join(id).join(stage).is_file(), "{stage}");
    }
    let bands = std::fs::read_to_string(bands).unwrap();
    let mut lines = bands.lines();
    assert_eq!(lines.next(), Some("group,ratio_name,q1,q3,n"));
    assert_eq!(lines.count(), 3);

    // The output manifest is itself a donor set.
    let again = dir.path().join("again");
    let o = generate(
        out.join("manifest.csv").to_str().unwrap(),
        &again,
        &["--mode", "expand"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path(), "male/caucasian:4", "2");
    let out = dir.path().join("gen");
    let bad_budget = srefi(&["generate", "--manifest", &m, "--mode", "synth", "--c-donor", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(bad_budget.status.code(), Some(2));
    let too_few = generate(&m, &out, &["--mode", "synth", "--proximal-n", "10"]);
    assert_eq!(too_few.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&too_few.stderr).contains("male/caucasian"));
    let bad_flag = srefi(&["generate", "--manifest", &m, "--mode", "sideways", "--out", "x"]);
    assert_eq!(bad_flag.status.code(), Some(2));
    let strict = generate(&m, &out, &["--mode", "expand", "--strict"]);
    assert_eq!(strict.status.code(), Some(3));
}

#[test]
fn synth_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path(), "male/caucasian:5", "3");
    let gen = dir.path().join("gen");
    let o = generate(&m, &gen, &["--mode", "synth", "--proximal-n", "3", "--identity-count", "2", "--images-per-identity", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ev = dir.path().join("eval");
    let o = srefi(&[
        "eval",
        "--real",
        &m,
        "--synth",
        gen.join("manifest.csv").to_str().unwrap(),
        "--experiment",
        "synth_vs_synth",
        "--out",
        ev.to_str().unwrap(),
        "--dump-scores",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let roc = std::fs::read_to_string(ev.join("synth_vs_synth_roc.csv")).unwrap();
    assert!(roc.starts_with("threshold,far,tar\n"));
    let auc: f64 = roc.lines().last().unwrap().strip_prefix("# auc=").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    let scores = std::fs::read_to_string(ev.join("synth_vs_synth_scores.csv")).unwrap();
    // 4 images of 2 identities: 12 ordered pairs.
    assert_eq!(scores.lines().count(), 1 + 12);

    // Expanded images are needed for this one.
    let o = srefi(&[
        "eval",
        "--real",
        &m,
        "--synth",
        gen.join("manifest.csv").to_str().unwrap(),
        "--experiment",
        "expand_vs_real",
        "--out",
        ev.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
