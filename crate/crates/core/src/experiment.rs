//! Experiment orchestration: training pipeline, grasp policies, episode
//! classification and the CSV report.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{train_codec, CodecParams};
use crate::config::{GoalSource, RunConfig};
use crate::control::{
    fit_scale, identify_offline, latent_error, error_norm, run_servo, DynamicsEstimate, ScaleVector, ServoFrame,
    Transition,
};
use crate::dataset::{synthesize_records, DatasetManifest, GraspRecord, TextureClass};
use crate::diffusion::{sample_goal, train_denoiser, DenoiserParams, DiffusionExample};
use crate::error::{Error, Result};
use crate::image::ImprintImage;
use crate::metrics::{classify_outcome, image_metrics, psnr_for_report, EpisodeSummary, GraspOutcome, ImageMetrics};
use crate::numerics::Rng;
use crate::plant::{Material, Plant, PlantConfig, PlantState};

pub const SUMMARY_CSV: &str = "summary.csv";
pub const EPISODES_CSV: &str = "episodes.csv";
pub const TRACES_CSV: &str = "traces.csv";
pub const IMAGE_METRICS_CSV: &str = "image_metrics.csv";
pub const SUMMARY_TXT: &str = "summary.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Latent LQR servo toward a goal imprint.
    Phytac,
    /// Close until the contact force reaches a preset.
    FixedForce,
    /// Close to a planned width with no feedback.
    OpenLoop,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Phytac, Policy::FixedForce, Policy::OpenLoop];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Phytac => "phytac",
            Policy::FixedForce => "fixed-force",
            Policy::OpenLoop => "open-loop",
        }
    }
}

/// Splits records into training and held-out sets. Held out are whole
/// grasps: the last grasp of each of the first `held_out_grasps` objects.
pub fn split_held_out(records: &[GraspRecord], held_out_grasps: usize) -> (Vec<&GraspRecord>, Vec<&GraspRecord>) {
    let objects = records.iter().map(|r| r.object_index + 1).max().unwrap_or(0);
    let mut last = vec![0usize; objects];
    for r in records {
        last[r.object_index] = last[r.object_index].max(r.grasp_index);
    }
    records
        .iter()
        .partition(|r| !(r.object_index < held_out_grasps && r.grasp_index == last[r.object_index]))
}

/// Codec training set: every current imprint plus, once per grasp, the
/// optimal imprint and the depth image.
pub fn codec_training_images(records: &[&GraspRecord], depth_range_mm: f64) -> Vec<ImprintImage> {
    let mut images: Vec<ImprintImage> = records.iter().map(|r| r.imprint_current.clone()).collect();
    for r in records.iter().filter(|r| r.frame_index == 0) {
        images.push(r.imprint_optimal.clone());
        images.push(r.patch.depth_image(depth_range_mm));
    }
    images
}

/// Per-dimension latent scale over the imprints of `records`.
pub fn latent_scale(codec: &CodecParams, records: &[&GraspRecord]) -> Result<ScaleVector> {
    let mut images: Vec<&ImprintImage> = records.iter().map(|r| &r.imprint_current).collect();
    images.extend(records.iter().filter(|r| r.frame_index == 0).map(|r| &r.imprint_optimal));
    let z = codec.encode_batch(&images)?;
    fit_scale(&(0..z.rows()).map(|r| z.row(r).to_vec()).collect::<Vec<_>>())
}

/// Latent transitions between every ordered pair of frames of a grasp, with
/// errors taken relative to the grasp's optimal imprint. The plant is
/// quasi-static, so any two frames form a valid transition.
pub fn grasp_transitions(codec: &CodecParams, records: &[&GraspRecord], scale: &ScaleVector) -> Result<Vec<Transition>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let key = (records[start].object_index, records[start].grasp_index);
        let end = start + records[start..].iter().take_while(|r| (r.object_index, r.grasp_index) == key).count();
        let grasp = &records[start..end];
        let z_goal = codec.encode_mean(&grasp[0].imprint_optimal)?;
        let errors: Vec<Vec<f64>> = grasp
            .iter()
            .map(|r| latent_error(&codec.encode_mean(&r.imprint_current)?, &z_goal, scale))
            .collect::<Result<_>>()?;
        for (k, from) in grasp.iter().enumerate() {
            for (j, to) in grasp.iter().enumerate() {
                if j != k {
                    out.push(Transition {
                        e_prev: errors[k].clone(),
                        du: to.command_u - from.command_u,
                        e_next: errors[j].clone(),
                    });
                }
            }
        }
        start = end;
    }
    Ok(out)
}

pub fn plant_for(record: &GraspRecord, manifest: &DatasetManifest, config: &PlantConfig) -> Result<Plant> {
    let obj = manifest.object(record.object_index)?;
    Ok(Plant::new(
        record.patch.clone(),
        Material {
            texture: obj.texture,
            friction_mu: obj.friction_mu,
        },
        obj.mass_kg,
        config.clone(),
    ))
}

/// Everything the policies need besides the plant.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub manifest: DatasetManifest,
    pub records: Vec<GraspRecord>,
    pub codec: CodecParams,
    pub denoiser: DenoiserParams,
}

/// Synthesizes the dataset and trains the codec and the denoiser on the
/// non-held-out records.
pub fn build_artifacts(config: &RunConfig) -> Result<Artifacts> {
    let root = Rng::new(config.seed);
    let data = synthesize_records(&config.dataset, &config.plant, config.seed)?;
    let (codec, denoiser) = {
        let (train, _) = split_held_out(&data.records, config.experiment.held_out_grasps);
        let images = codec_training_images(&train, config.diffusion.depth_range_mm);
        let (codec, _) = train_codec(&images, &config.codec, &mut root.fork(2))?;
        let examples: Vec<DiffusionExample> = train
            .iter()
            .map(|r| DiffusionExample::from_record(r, &data.manifest, config.diffusion.depth_range_mm))
            .collect::<Result<_>>()?;
        let (denoiser, _) = train_denoiser(&examples, &codec, &config.diffusion, &mut root.fork(3))?;
        (codec, denoiser)
    };
    Ok(Artifacts {
        manifest: data.manifest,
        records: data.records,
        codec,
        denoiser,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub index: usize,
    pub policy: Policy,
    pub texture: TextureClass,
    pub object_index: usize,
    pub grasp_index: usize,
    pub frames: Vec<ServoFrame>,
    pub hold_frame: Option<usize>,
    pub failed_safety: bool,
    pub final_force: f64,
    pub optimal_force: f64,
    pub slip_force: f64,
    pub outcome: GraspOutcome,
}

/// Shared state of a batch of episodes.
pub struct EpisodeRunner<'a> {
    pub config: &'a RunConfig,
    pub artifacts: &'a Artifacts,
    pub scale: ScaleVector,
    pub warm_start: DynamicsEstimate,
    /// Contact-force preset of the fixed-force policy, N.
    pub force_preset: f64,
}

impl<'a> EpisodeRunner<'a> {
    pub fn new(config: &'a RunConfig, artifacts: &'a Artifacts) -> Result<Self> {
        let (train, _) = split_held_out(&artifacts.records, config.experiment.held_out_grasps);
        if train.is_empty() {
            return Err(Error::Config("experiment.held_out_grasps leaves no training records".into()));
        }
        let scale = latent_scale(&artifacts.codec, &train)?;
        let transitions = grasp_transitions(&artifacts.codec, &train, &scale)?;
        let warm_start = identify_offline(
            &transitions,
            artifacts.codec.latent_dim(),
            &config.control,
            &mut Rng::new(config.seed).fork(4),
        )?;
        // Reference object: the one needing the largest force.
        let mut reference = 0.0f64;
        for obj in &artifacts.manifest.objects {
            reference = reference.max(crate::plant::optimal_force(obj.mass_kg, obj.friction_mu, &config.plant)?);
        }
        Ok(EpisodeRunner {
            config,
            artifacts,
            scale,
            warm_start,
            force_preset: config.experiment.fixed_force_factor * reference,
        })
    }

    fn goal(&self, record: &GraspRecord, source: GoalSource, rng: &mut Rng) -> Result<Vec<f64>> {
        let codec = &self.artifacts.codec;
        match source {
            GoalSource::Oracle => codec.encode_mean(&record.imprint_optimal),
            GoalSource::Ldm => {
                let ex = DiffusionExample::from_record(record, &self.artifacts.manifest, self.config.diffusion.depth_range_mm)?;
                let s = sample_goal(
                    &self.artifacts.denoiser,
                    codec,
                    &ex.current,
                    &ex.depth,
                    ex.mass_kg,
                    ex.texture,
                    self.config.diffusion.ddim_steps,
                    rng,
                )?;
                Ok(s.z_goal)
            }
        }
    }

    /// Runs one episode on the grasp of `record`.
    pub fn run(&self, index: usize, record: &GraspRecord, policy: Policy, goal: GoalSource, rng: &Rng) -> Result<Episode> {
        let plant = plant_for(record, &self.artifacts.manifest, &self.config.plant)?;
        let z_goal = self.goal(record, goal, &mut rng.fork(1))?;
        let control = &self.config.control;
        let start = plant.contact_aperture() + control.start_margin_mm;
        let (frames, hold_frame, post_hold, failed_safety, final_force, final_slipping) = match policy {
            Policy::Phytac => {
                let t = run_servo(
                    &plant,
                    &self.artifacts.codec,
                    &z_goal,
                    &self.scale,
                    Some(&self.warm_start),
                    control,
                    start,
                    &mut rng.fork(2),
                )?;
                let slipped = t.slipped_after_hold();
                (t.frames, t.hold_frame, slipped, t.failed_safety, t.final_force, t.final_slipping)
            }
            Policy::FixedForce => {
                let preset = self.force_preset;
                self.scripted(&plant, &z_goal, start, &mut rng.fork(2), |s| {
                    if s.normal_force >= preset {
                        None
                    } else {
                        Some(-control.max_step_mm)
                    }
                })?
            }
            Policy::OpenLoop => {
                let target = plant.contact_aperture() - self.config.experiment.open_loop_squeeze_mm;
                self.scripted(&plant, &z_goal, start, &mut rng.fork(2), |s| {
                    let gap = target - s.aperture_u;
                    if gap.abs() < 1e-9 {
                        None
                    } else {
                        Some(gap.clamp(-control.max_step_mm, control.max_step_mm))
                    }
                })?
            }
        };
        let optimal_force = plant.optimal_force()?;
        let slip_force = plant.slip_force();
        let outcome = classify_outcome(
            &EpisodeSummary {
                final_force,
                final_slipping,
                slipped_after_hold: post_hold,
                held: hold_frame.is_some(),
                slip_force,
            },
            self.config.experiment.tol_f,
        );
        let obj = self.artifacts.manifest.object(record.object_index)?;
        Ok(Episode {
            index,
            policy,
            texture: obj.texture,
            object_index: record.object_index,
            grasp_index: record.grasp_index,
            frames,
            hold_frame,
            failed_safety,
            final_force,
            optimal_force,
            slip_force,
            outcome,
        })
    }

    /// Baseline loop: `step` returns the next increment, or `None` to stop
    /// and hold. Returns the same tuple as the servo branch.
    #[allow(clippy::type_complexity)]
    fn scripted(
        &self,
        plant: &Plant,
        z_goal: &[f64],
        start: f64,
        noise: &mut Rng,
        step: impl Fn(&PlantState) -> Option<f64>,
    ) -> Result<(Vec<ServoFrame>, Option<usize>, bool, bool, f64, bool)> {
        let control = &self.config.control;
        let codec = &self.artifacts.codec;
        let mut frames = Vec::new();
        let mut state = match plant.state_at(start.clamp(0.0, plant.config.aperture_max), noise) {
            Ok(s) => s,
            Err(Error::ForceLimit { .. }) => return Ok((frames, None, false, true, 0.0, true)),
            Err(e) => return Err(e),
        };
        let d_c = |s: &PlantState| -> Result<f64> {
            Ok(error_norm(&latent_error(&codec.encode_mean(&s.imprint)?, z_goal, &self.scale)?))
        };
        for f in 0..control.frame_budget {
            let du = step(&state);
            frames.push(ServoFrame {
                frame: f,
                aperture: state.aperture_u,
                force: state.normal_force,
                d_c: d_c(&state)?,
                hold: du.is_none(),
                slipping: state.slipping,
                delta_u: du.unwrap_or(0.0),
                clamped: state.clamped,
            });
            let Some(du) = du else {
                let mut slipped = false;
                for _ in 0..control.post_hold_frames {
                    state = plant.step(&state, 0.0, noise)?;
                    slipped |= state.slipping;
                }
                return Ok((frames, Some(f), slipped, false, state.normal_force, state.slipping));
            };
            match plant.step(&state, du, noise) {
                Ok(next) => state = next,
                Err(Error::ForceLimit { .. }) => return Ok((frames, None, false, true, state.normal_force, state.slipping)),
                Err(e) => return Err(e),
            }
        }
        Ok((frames, None, false, false, state.normal_force, state.slipping))
    }
}

/// First-frame records of the held-out grasps, in dataset order.
pub fn held_out_grasps<'r>(records: &'r [GraspRecord], config: &RunConfig) -> Vec<&'r GraspRecord> {
    let (_, held) = split_held_out(records, config.experiment.held_out_grasps);
    held.into_iter().filter(|r| r.frame_index == 0).collect()
}

/// Image metrics of the sampled goal and of the current imprint against the
/// force-optimal imprint, averaged over held-out records.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTable {
    pub records: usize,
    pub predicted: ImageMetrics,
    pub current: ImageMetrics,
}

fn mean_metrics(all: &[ImageMetrics]) -> ImageMetrics {
    let n = all.len().max(1) as f64;
    ImageMetrics {
        mae: all.iter().map(|m| m.mae).sum::<f64>() / n,
        rmse: all.iter().map(|m| m.rmse).sum::<f64>() / n,
        psnr_db: all.iter().map(|m| psnr_for_report(m.psnr_db)).sum::<f64>() / n,
        ssim: all.iter().map(|m| m.ssim).sum::<f64>() / n,
    }
}

pub fn image_table(config: &RunConfig, artifacts: &Artifacts) -> Result<ImageTable> {
    let (_, held) = split_held_out(&artifacts.records, config.experiment.held_out_grasps);
    if held.is_empty() {
        return Err(Error::Config("experiment.held_out_grasps selects no records".into()));
    }
    let root = Rng::new(config.seed).fork(6);
    let mut predicted = Vec::with_capacity(held.len());
    let mut current = Vec::with_capacity(held.len());
    for (i, r) in held.iter().enumerate() {
        let ex = DiffusionExample::from_record(r, &artifacts.manifest, config.diffusion.depth_range_mm)?;
        let s = sample_goal(
            &artifacts.denoiser,
            &artifacts.codec,
            &ex.current,
            &ex.depth,
            ex.mass_kg,
            ex.texture,
            config.diffusion.ddim_steps,
            &mut root.fork(i as u64),
        )?;
        predicted.push(image_metrics(&s.image, &ex.target)?);
        current.push(image_metrics(&ex.current, &ex.target)?);
    }
    Ok(ImageTable {
        records: held.len(),
        predicted: mean_metrics(&predicted),
        current: mean_metrics(&current),
    })
}

/// Runs `episodes` episodes of `policy`, cycling over `grasps`.
pub fn run_episodes(
    runner: &EpisodeRunner,
    grasps: &[&GraspRecord],
    policy: Policy,
    goal: GoalSource,
    episodes: usize,
    first_index: usize,
) -> Result<Vec<Episode>> {
    if grasps.is_empty() {
        return Err(Error::Config("no held-out grasps to run episodes on".into()));
    }
    let root = Rng::new(runner.config.seed).fork(5);
    (0..episodes)
        .map(|k| {
            let index = first_index + k;
            runner.run(index, grasps[k % grasps.len()], policy, goal, &root.fork(index as u64))
        })
        .collect()
}

/// Success rates of one policy on one texture class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub policy: &'static str,
    pub texture: &'static str,
    pub episodes: usize,
    pub sug_rate: f64,
    pub stg_rate: f64,
    pub fosg_rate: f64,
    pub mean_final_force_ratio: f64,
}

pub fn summarize(policy: Policy, texture: TextureClass, episodes: &[Episode]) -> SummaryRow {
    let n = episodes.len().max(1) as f64;
    let rate = |f: fn(&GraspOutcome) -> bool| episodes.iter().filter(|e| f(&e.outcome)).count() as f64 / n;
    SummaryRow {
        policy: policy.name(),
        texture: texture.name(),
        episodes: episodes.len(),
        sug_rate: rate(|o| o.sug),
        stg_rate: rate(|o| o.stg),
        fosg_rate: rate(|o| o.fosg),
        mean_final_force_ratio: episodes.iter().map(|e| e.final_force / e.optimal_force).sum::<f64>() / n,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Format(format!("{}: {e}", path.display()))
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Per-episode outcome table.
pub fn write_episodes_csv(path: &Path, episodes: &[Episode]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record([
        "episode", "policy", "texture", "object", "grasp", "frames", "hold_frame", "failed_safety", "final_force",
        "optimal_force", "slip_force", "sug", "stg", "fosg",
    ])
    .map_err(&err)?;
    for e in episodes {
        w.write_record([
            e.index.to_string(),
            e.policy.name().to_string(),
            e.texture.name().to_string(),
            e.object_index.to_string(),
            e.grasp_index.to_string(),
            e.frames.len().to_string(),
            e.hold_frame.map(|h| h.to_string()).unwrap_or_default(),
            e.failed_safety.to_string(),
            fmt(e.final_force),
            fmt(e.optimal_force),
            fmt(e.slip_force),
            e.outcome.sug.to_string(),
            e.outcome.stg.to_string(),
            e.outcome.fosg.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Frame-by-frame traces: aperture, force, `D_c` and the hold flag.
pub fn write_traces_csv(path: &Path, episodes: &[Episode]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(["episode", "policy", "frame", "aperture", "force", "d_c", "hold"]).map_err(&err)?;
    for e in episodes {
        for f in &e.frames {
            w.write_record([
                e.index.to_string(),
                e.policy.name().to_string(),
                f.frame.to_string(),
                fmt(f.aperture),
                fmt(f.force),
                fmt(f.d_c),
                f.hold.to_string(),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(["policy", "texture", "episodes", "sug_rate", "stg_rate", "fosg_rate", "mean_final_force_ratio"])
        .map_err(&err)?;
    for r in rows {
        w.write_record([
            r.policy.to_string(),
            r.texture.to_string(),
            r.episodes.to_string(),
            fmt(r.sug_rate),
            fmt(r.stg_rate),
            fmt(r.fosg_rate),
            fmt(r.mean_final_force_ratio),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// LPIPS has no desk-scale implementation; the column keeps the table shape.
pub fn write_image_metrics_csv(path: &Path, table: &ImageTable) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(["source", "records", "mae", "rmse", "psnr_db", "ssim", "lpips"]).map_err(&err)?;
    for (name, m) in [("sampled_goal", &table.predicted), ("current_imprint", &table.current)] {
        w.write_record([
            name.to_string(),
            table.records.to_string(),
            fmt(m.mae),
            fmt(m.rmse),
            fmt(m.psnr_db),
            fmt(m.ssim),
            "n/a".to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<SummaryRow>,
    pub episodes: Vec<Episode>,
    pub images: ImageTable,
}

/// Every policy on every texture class, plus the image-metric table.
/// Writes the CSV files and `summary.txt` into `out`.
pub fn run_experiment(config: &RunConfig, artifacts: &Artifacts, out: &Path) -> Result<Report> {
    config.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let runner = EpisodeRunner::new(config, artifacts)?;
    let grasps = held_out_grasps(&artifacts.records, config);
    let per_class = config.experiment.episodes_per_class;
    let mut rows = Vec::new();
    let mut episodes = Vec::new();
    for policy in Policy::ALL {
        for texture in TextureClass::ALL {
            let class: Vec<&GraspRecord> = grasps
                .iter()
                .copied()
                .filter(|r| artifacts.manifest.objects[r.object_index].texture == texture)
                .collect();
            if class.is_empty() {
                return Err(Error::Config(format!(
                    "experiment.held_out_grasps holds out no {texture} object; raise it to cover every class"
                )));
            }
            let eps = run_episodes(&runner, &class, policy, config.experiment.goal, per_class, episodes.len())?;
            rows.push(summarize(policy, texture, &eps));
            episodes.extend(eps);
        }
    }
    let images = image_table(config, artifacts)?;
    write_summary_csv(&out.join(SUMMARY_CSV), &rows)?;
    write_episodes_csv(&out.join(EPISODES_CSV), &episodes)?;
    write_traces_csv(&out.join(TRACES_CSV), &episodes)?;
    write_image_metrics_csv(&out.join(IMAGE_METRICS_CSV), &images)?;
    let report = Report { rows, episodes, images };
    let txt = out.join(SUMMARY_TXT);
    std::fs::write(&txt, summary_text(config, &report)).map_err(|e| Error::io(&txt, e))?;
    Ok(report)
}

pub fn summary_text(config: &RunConfig, report: &Report) -> String {
    let mut s = String::new();
    let goal = match config.experiment.goal {
        GoalSource::Ldm => "diffusion",
        GoalSource::Oracle => "oracle",
    };
    writeln!(s, "seed {}  goal {goal}  episodes per class {}", config.seed, config.experiment.episodes_per_class).unwrap();
    writeln!(s).unwrap();
    writeln!(s, "{:<12} {:<13} {:>6} {:>6} {:>6}", "policy", "texture", "SuG", "StG", "FOSG").unwrap();
    for r in &report.rows {
        writeln!(
            s,
            "{:<12} {:<13} {:>6.2} {:>6.2} {:>6.2}",
            r.policy, r.texture, r.sug_rate, r.stg_rate, r.fosg_rate
        )
        .unwrap();
    }
    writeln!(s).unwrap();
    let img = &report.images;
    writeln!(s, "held-out images: {}", img.records).unwrap();
    writeln!(s, "{:<16} {:>8} {:>8} {:>8} {:>8} {:>6}", "source", "MAE", "RMSE", "PSNR", "SSIM", "LPIPS").unwrap();
    for (name, m) in [("sampled goal", &img.predicted), ("current imprint", &img.current)] {
        writeln!(
            s,
            "{:<16} {:>8.4} {:>8.4} {:>8.2} {:>8.4} {:>6}",
            name, m.mae, m.rmse, m.psnr_db, m.ssim, "n/a"
        )
        .unwrap();
    }
    s
}
