use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use srefi::blend::DEFAULT_PYRAMID_LEVELS;
use srefi::composite::{EyePolicy, DEFAULT_C_DONOR};
use srefi::dataset::{load_manifest, DatasetManifest, Gender, Group};
use srefi::donors::{EmbeddingProvider, GenerationMode, DEFAULT_PROXIMAL_N};
use srefi::eval::{run_experiment, write_roc_csv, write_scores_csv, Experiment};
use srefi::pipeline::{run, RunConfig};
use srefi::procedural::{write_fixture, FixtureSpec};
use srefi::reshape::{write_bands_csv, MIN_BAND_SAMPLES};
use srefi::{Error, Result};

#[derive(Parser)]
#[command(name = "srefi", version, about = "Generate synthetic faces by region recombination and score them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expanded or synthetic identities from a manifest.
    Generate(GenerateArgs),
    /// Score verification pairs and write ROC curves.
    Eval(EvalArgs),
    /// Write a procedural donor set for testing.
    Fixture(FixtureArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Expand,
    Synth,
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    File,
    Desk,
}

impl From<Provider> for EmbeddingProvider {
    fn from(p: Provider) -> Self {
        match p {
            Provider::File => EmbeddingProvider::File,
            Provider::Desk => EmbeddingProvider::Desk,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    images_per_identity: usize,
    /// Synthetic identities to mint (synth mode).
    #[arg(long, default_value_t = 1)]
    identity_count: usize,
    #[arg(long, default_value_t = DEFAULT_C_DONOR)]
    c_donor: usize,
    #[arg(long, default_value_t = DEFAULT_PROXIMAL_N)]
    proximal_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "desk")]
    embedding_provider: Provider,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PYRAMID_LEVELS)]
    pyramid_levels: usize,
    /// Subjects needed before a group's own ratio bands are used.
    #[arg(long, default_value_t = MIN_BAND_SAMPLES)]
    min_band_samples: usize,
    /// Give each eye its own donor.
    #[arg(long)]
    split_eyes: bool,
    /// Fail instead of skipping subjects with too few images.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    dump_stages: bool,
    #[arg(long)]
    export_bands: Option<PathBuf>,
    #[arg(long)]
    export_mesh_svg: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Manifest of real images.
    #[arg(long)]
    real: PathBuf,
    /// Output manifests of generation runs; may be repeated.
    #[arg(long)]
    synth: Vec<PathBuf>,
    /// Experiment name, or `all`.
    #[arg(long, default_value = "all")]
    experiment: String,
    #[arg(long, value_enum, default_value = "desk")]
    embedding_provider: Provider,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dump_scores: bool,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    /// Groups as `gender/ethnicity:subjects`, comma separated.
    #[arg(long, default_value = "male/caucasian:12")]
    groups: String,
    #[arg(long, default_value_t = 3)]
    images_per_subject: usize,
    #[arg(long, default_value_t = srefi::DEFAULT_IMAGE_SIDE)]
    side: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write desk embedding files.
    #[arg(long)]
    embeddings: bool,
}

fn generate(a: GenerateArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let mode = match a.mode {
        Mode::Expand => GenerationMode::ExpandRealId,
        Mode::Synth => GenerationMode::SynthId,
    };
    let mut config = RunConfig::new(mode, &a.out);
    config.images_per_identity = a.images_per_identity;
    config.identity_count = a.identity_count;
    config.c_donor = a.c_donor;
    config.proximal_n = a.proximal_n;
    config.pyramid_levels = a.pyramid_levels;
    config.master_seed = a.seed;
    config.embedding_provider = a.embedding_provider.into();
    config.min_band_samples = a.min_band_samples;
    config.eyes = if a.split_eyes { EyePolicy::Split } else { EyePolicy::Shared };
    config.skip_insufficient = !a.strict;
    config.dump_stages = a.dump_stages;
    config.export_mesh_svg = a.export_mesh_svg;
    let report = run(&manifest, &config)?;
    if let Some(path) = &a.export_bands {
        write_bands_csv(report.bands.values(), path)?;
    }
    println!("{} images, manifest {}", report.records.len(), report.manifest_path.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let real = load_manifest(&a.real)?;
    let synth = if a.synth.is_empty() {
        None
    } else {
        let parts = a.synth.iter().map(|p| load_manifest(p)).collect::<Result<Vec<_>>>()?;
        Some(DatasetManifest::merged(&parts)?)
    };
    let experiments: Vec<Experiment> = if a.experiment == "all" {
        if synth.is_some() {
            Experiment::ALL.to_vec()
        } else {
            vec![Experiment::RealVsReal]
        }
    } else {
        vec![a.experiment.parse()?]
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    for e in experiments {
        let r = run_experiment(e, &real, synth.as_ref(), a.embedding_provider.into())?;
        write_roc_csv(&r.curve, &a.out.join(format!("{e}_roc.csv")))?;
        if a.dump_scores {
            write_scores_csv(&r.pairs, &a.out.join(format!("{e}_scores.csv")))?;
        }
        let (mated, nonmated) = r.mean_scores();
        println!(
            "{e}: auc={:.4} pairs={} mean_mated={mated:.4} mean_nonmated={nonmated:.4}",
            r.curve.auc,
            r.pairs.len()
        );
    }
    Ok(())
}

fn parse_groups(s: &str) -> Result<Vec<(Group, usize)>> {
    s.split(',')
        .map(|part| {
            let bad = || Error::Config(format!("bad group `{part}`, expected gender/ethnicity:count"));
            let (g, n) = part.trim().split_once(':').ok_or_else(bad)?;
            let (gender, eth) = g.split_once('/').ok_or_else(bad)?;
            let gender: Gender = gender.parse()?;
            let n: usize = n.parse().map_err(|_| bad())?;
            Ok((Group::new(gender, eth), n))
        })
        .collect()
}

fn fixture(a: FixtureArgs) -> Result<()> {
    let spec = FixtureSpec {
        groups: parse_groups(&a.groups)?,
        images_per_subject: a.images_per_subject,
        side: a.side,
        seed: a.seed,
        with_embeddings: a.embeddings,
    };
    let path = write_fixture(&spec, &a.out)?;
    println!("{}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Eval(a) => eval(a),
        Command::Fixture(a) => fixture(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
