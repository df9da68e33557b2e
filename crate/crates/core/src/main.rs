use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use phytac::codec::{train_codec, CodecParams};
use phytac::config::{GoalSource, RunConfig};
use phytac::dataset::{generate_dataset, Dataset, GraspRecord};
use phytac::diffusion::{sample_goal, train_denoiser, DenoiserParams, DiffusionExample};
use phytac::error::{Error, Result};
use phytac::experiment::{
    build_artifacts, codec_training_images, held_out_grasps, image_table, run_episodes, run_experiment,
    split_held_out, write_episodes_csv, write_image_metrics_csv, write_traces_csv, Artifacts, EpisodeRunner, Policy,
    EPISODES_CSV, IMAGE_METRICS_CSV, TRACES_CSV,
};
use phytac::geometry::{evaluate_scene, rank_candidates, read_scene, RankWeights};
use phytac::metrics::{image_metrics, psnr_for_report};
use phytac::numerics::Rng;

#[derive(Parser)]
#[command(name = "phytac", version, about = "Tactile grasp simulation, training and evaluation")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (a file for the training commands).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    codec: PathBuf,
    #[arg(long)]
    diffusion: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset directory.
    GenData,
    /// Train the imprint codec on a dataset.
    TrainCodec {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the conditional denoiser on a dataset with a trained codec.
    TrainDiffusion {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        codec: PathBuf,
    },
    /// Rank the grasp candidates of a scene file; CSV on stdout.
    RankPoses {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        top_n: Option<usize>,
    },
    /// Run grasp episodes on held-out grasps.
    RunGrasp {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, value_enum, default_value_t = GoalArg::Ldm)]
        goal: GoalArg,
        #[arg(long, value_enum, default_value_t = PolicyArg::Phytac)]
        policy: PolicyArg,
    },
    /// Image metrics of sampled goals on held-out records.
    Eval {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Sample one goal imprint next to the force-optimal imprint.
    Sample {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        record: usize,
    },
    /// Full experiment: every policy on every texture class plus the image
    /// table. Trains from the configuration unless all inputs are given.
    Report {
        #[arg(long, requires_all = ["codec", "diffusion"])]
        data: Option<PathBuf>,
        #[arg(long, requires = "data")]
        codec: Option<PathBuf>,
        #[arg(long, requires = "data")]
        diffusion: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GoalArg {
    Ldm,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Phytac,
    FixedForce,
    OpenLoop,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn out_path(cli_out: &Option<PathBuf>) -> Result<&Path> {
    cli_out
        .as_deref()
        .ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn load_records(dir: &Path) -> Result<(Dataset, Vec<GraspRecord>)> {
    let ds = Dataset::open(dir)?;
    let records = ds.load_all()?;
    Ok((ds, records))
}

fn load_artifacts(inputs: &Inputs) -> Result<Artifacts> {
    let (ds, records) = load_records(&inputs.data)?;
    Ok(Artifacts {
        manifest: ds.manifest,
        records,
        codec: CodecParams::load(&inputs.codec)?,
        denoiser: DenoiserParams::load(&inputs.diffusion)?,
    })
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.clone().or_else(|| config.out_dir.clone());
    let root = Rng::new(config.seed);
    match cli.command {
        Command::GenData => {
            let dir = out_path(&out)?;
            let manifest = generate_dataset(&config.dataset, &config.plant, config.seed, dir)?;
            eprintln!("wrote {} records to {}", manifest.record_count, dir.display());
        }
        Command::TrainCodec { data } => {
            let file = out_path(&out)?;
            let (_, records) = load_records(&data)?;
            let (train, _) = split_held_out(&records, config.experiment.held_out_grasps);
            let images = codec_training_images(&train, config.diffusion.depth_range_mm);
            let (codec, history) = train_codec(&images, &config.codec, &mut root.fork(2))?;
            codec.save(file)?;
            eprintln!(
                "codec: {} images, final L1 {:.4} (mean-image baseline {:.4}) -> {}",
                images.len(),
                history.final_l1,
                history.baseline_l1,
                file.display()
            );
        }
        Command::TrainDiffusion { data, codec } => {
            let file = out_path(&out)?;
            let (ds, records) = load_records(&data)?;
            let codec = CodecParams::load(&codec)?;
            let (train, _) = split_held_out(&records, config.experiment.held_out_grasps);
            let examples: Vec<DiffusionExample> = train
                .iter()
                .map(|r| DiffusionExample::from_record(r, &ds.manifest, config.diffusion.depth_range_mm))
                .collect::<Result<_>>()?;
            let (params, history) = train_denoiser(&examples, &codec, &config.diffusion, &mut root.fork(3))?;
            params.save(file)?;
            let (first, last) = history.smoothed_ends(50);
            eprintln!("denoiser: smoothed loss {first:.4} -> {last:.4} -> {}", file.display());
        }
        Command::RankPoses {
            scene,
            alpha,
            beta,
            gamma,
            delta,
            top_n,
        } => {
            let g = &config.geometry;
            let weights = RankWeights {
                alpha: alpha.unwrap_or(g.alpha),
                beta: beta.unwrap_or(g.beta),
                gamma: gamma.unwrap_or(g.gamma),
                delta: delta.unwrap_or(g.delta),
            };
            weights.validate().map_err(|e| Error::Config(e.to_string()))?;
            let top_n = top_n.unwrap_or(g.top_n);
            let scene = read_scene(&scene)?;
            let sensor = config.dataset.sensor;
            let eval = evaluate_scene(&scene, (sensor.rows, sensor.cols), config.dataset.contact_depth, g.normal_neighbors)?;
            for (i, why) in &eval.skipped {
                eprintln!("candidate {i} skipped: {why}");
            }
            let ranked = rank_candidates(&eval.inputs, &weights)?;
            let mut w = csv::Writer::from_writer(std::io::stdout());
            let csv_err = |e: csv::Error| Error::Format(e.to_string());
            w.write_record(["rank", "candidate", "score", "s_rough", "c_n", "u_c", "f_cost", "w_p"]).map_err(csv_err)?;
            for (rank, r) in ranked.iter().take(top_n).enumerate() {
                w.write_record([
                    (rank + 1).to_string(),
                    eval.source[r.index].to_string(),
                    format!("{:.6}", r.candidate.score),
                    format!("{:.6}", r.metrics.s_rough),
                    format!("{:.6}", r.metrics.c_n),
                    format!("{:.6}", r.metrics.u_c),
                    format!("{:.6}", r.f_cost),
                    format!("{:.6}", r.w_p),
                ])
                .map_err(csv_err)?;
            }
            w.flush().map_err(|e| Error::io("stdout", e))?;
        }
        Command::RunGrasp {
            inputs,
            episodes,
            goal,
            policy,
        } => {
            let dir = out_path(&out)?;
            let artifacts = load_artifacts(&inputs)?;
            let runner = EpisodeRunner::new(&config, &artifacts)?;
            let grasps = held_out_grasps(&artifacts.records, &config);
            let goal = match goal {
                GoalArg::Ldm => GoalSource::Ldm,
                GoalArg::Oracle => GoalSource::Oracle,
            };
            let policy = match policy {
                PolicyArg::Phytac => Policy::Phytac,
                PolicyArg::FixedForce => Policy::FixedForce,
                PolicyArg::OpenLoop => Policy::OpenLoop,
            };
            let eps = run_episodes(&runner, &grasps, policy, goal, episodes, 0)?;
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_traces_csv(&dir.join(TRACES_CSV), &eps)?;
            write_episodes_csv(&dir.join(EPISODES_CSV), &eps)?;
            let n = eps.len() as f64;
            let rate = |f: fn(&phytac::metrics::GraspOutcome) -> bool| eps.iter().filter(|e| f(&e.outcome)).count() as f64 / n;
            println!(
                "{}: {} episodes, SuG {:.2} StG {:.2} FOSG {:.2}",
                policy.name(),
                eps.len(),
                rate(|o| o.sug),
                rate(|o| o.stg),
                rate(|o| o.fosg)
            );
        }
        Command::Eval { inputs } => {
            let dir = out_path(&out)?;
            let artifacts = load_artifacts(&inputs)?;
            let table = image_table(&config, &artifacts)?;
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_image_metrics_csv(&dir.join(IMAGE_METRICS_CSV), &table)?;
            println!(
                "{} held-out records: sampled goal SSIM {:.4}, current imprint SSIM {:.4}",
                table.records, table.predicted.ssim, table.current.ssim
            );
        }
        Command::Sample { inputs, record } => {
            let dir = out_path(&out)?;
            let artifacts = load_artifacts(&inputs)?;
            let r = artifacts.records.get(record).ok_or_else(|| {
                Error::InvalidArgument(format!("record {record} out of range (dataset has {})", artifacts.records.len()))
            })?;
            let ex = DiffusionExample::from_record(r, &artifacts.manifest, config.diffusion.depth_range_mm)?;
            let s = sample_goal(
                &artifacts.denoiser,
                &artifacts.codec,
                &ex.current,
                &ex.depth,
                ex.mass_kg,
                ex.texture,
                config.diffusion.ddim_steps,
                &mut root.fork(7).fork(record as u64),
            )?;
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(format!("sample_{record}.csv"));
            let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Format(e.to_string()))?;
            let csv_err = |e: csv::Error| Error::Format(e.to_string());
            w.write_record(["row", "col", "current", "sampled_goal", "optimal"]).map_err(csv_err)?;
            let (rows, cols) = ex.target.dims();
            for rr in 0..rows {
                for cc in 0..cols {
                    w.write_record([
                        rr.to_string(),
                        cc.to_string(),
                        format!("{:.6}", ex.current.get(rr, cc)),
                        format!("{:.6}", s.image.get(rr, cc)),
                        format!("{:.6}", ex.target.get(rr, cc)),
                    ])
                    .map_err(csv_err)?;
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            let m = image_metrics(&s.image, &ex.target)?;
            println!(
                "record {record}: MAE {:.4} RMSE {:.4} PSNR {:.2} dB SSIM {:.4} -> {}",
                m.mae,
                m.rmse,
                psnr_for_report(m.psnr_db),
                m.ssim,
                path.display()
            );
        }
        Command::Report { data, codec, diffusion } => {
            let dir = out_path(&out)?;
            let artifacts = match (data, codec, diffusion) {
                (Some(data), Some(codec), Some(diffusion)) => load_artifacts(&Inputs { data, codec, diffusion })?,
                _ => build_artifacts(&config)?,
            };
            let report = run_experiment(&config, &artifacts, dir)?;
            let text = phytac::experiment::summary_text(&config, &report);
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("stdout", e))?;
        }
    }
    Ok(())
}
