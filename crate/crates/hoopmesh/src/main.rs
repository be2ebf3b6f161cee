use std::path::{Path, PathBuf};
use std::process;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use hoopmesh::config::Config;
use hoopmesh::core::eval::{chamfer, emd, icp, mpjpe, mpvpe, IcpConfig};
use hoopmesh::core::meshnet::TlModel;
use hoopmesh::core::skeleton::{Frame, Pose3D, LSP14};
use hoopmesh::core::synth::{capsule_part_dataset, synth_scene};
use hoopmesh::core::{geom::Vec3, mesh::BodyMesh};
use hoopmesh::formats::binary::{read_params, write_maps, write_params};
use hoopmesh::formats::json::{read_camera, read_json, write_camera, write_json};
use hoopmesh::formats::obj::{read_body_obj, read_obj_points, write_body_obj};
use hoopmesh::pipeline::{self, run_pipeline, run_stage, PipelineReport, Stage, StageReport};
use hoopmesh::scene::{read_scene, split_bundle, write_scene};
use hoopmesh::{Error, ExitCode, Result};

#[derive(Parser)]
#[command(name = "hoopmesh", version, about = "Basketball player mesh reconstruction from broadcast frames")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Seeds {
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds.
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Worker threads; scenes run in parallel, stages within a scene do not.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scene directories.
    Synth {
        #[command(flatten)]
        seeds: Seeds,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the camera from clicks and the line mask of a scene.
    Calibrate {
        #[arg(long)]
        scene: PathBuf,
        /// Camera JSON to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Round-trip the scene's poses through heatmaps and location maps.
    Codec {
        #[arg(long)]
        scene: PathBuf,
        /// Binary map file to write.
        #[arg(long)]
        maps: Option<PathBuf>,
        /// Decoded root-relative 3D pose JSON to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Place the root-relative pose in the world.
    Place {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        /// Root-relative pose to place instead of the scene's pose3d.json.
        #[arg(long)]
        pose: Option<PathBuf>,
        /// World-frame pose JSON to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit bone transforms to a placed pose and skin the rest body.
    Skin {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        /// World-frame pose from `place`.
        #[arg(long)]
        placed: PathBuf,
        /// Posed body OBJ to write.
        #[arg(long)]
        out: PathBuf,
        /// Fitted bone transforms JSON to write.
        #[arg(long)]
        transforms: Option<PathBuf>,
    },
    /// Resolve body/garment interpenetration of a part-grouped OBJ.
    Compose {
        #[arg(long)]
        parts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the toy part network on synthetic capsule arms.
    TrainToy {
        /// Parameter file to write.
        #[arg(long)]
        out: PathBuf,
        /// Per-step loss history JSON to write.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a trained toy part network on one pose.
    InferPart {
        #[arg(long)]
        params: PathBuf,
        /// Three-joint pose JSON; defaults to a training example's pose.
        #[arg(long)]
        pose: Option<PathBuf>,
        /// Training example to take the pose from when `--pose` is absent.
        #[arg(long, default_value_t = 0)]
        example: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted and ground-truth meshes and joints.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "cd,emd")]
        metrics: Vec<Metric>,
        /// Rigidly align the prediction to the ground truth with ICP first.
        #[arg(long)]
        icp: bool,
        /// World-frame joint JSON files for the joint metrics.
        #[arg(long, requires = "gt_joints")]
        pred_joints: Option<PathBuf>,
        #[arg(long, requires = "pred_joints")]
        gt_joints: Option<PathBuf>,
    },
    /// Run every stage on synthetic seeds or on a scene directory.
    Pipeline {
        #[command(flatten)]
        seeds: Seeds,
        /// Scene directory; overrides the seeds.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Directory for per-scene reports, cameras and bodies.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    Cd,
    Emd,
    Mpvpe,
    MpvpePa,
    Mpjpe,
    MpjpePa,
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("reports serialize"));
}

fn stage_report<T>(stage: Stage, f: impl FnOnce(&mut StageReport) -> Result<T>) -> Result<T> {
    let (out, report) = run_stage(stage, f)?;
    print_json(&report);
    Ok(out)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

fn scene_name(seed: u64) -> String {
    format!("scene-{seed:06}")
}

/// Runs `f` over the seeds on `jobs` threads, returning results in seed order.
fn per_seed<T: Send>(seeds: &Seeds, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<Result<T>>> {
    let pool = thread_pool(seeds.jobs)?;
    let end = seeds.seed.checked_add(seeds.count).ok_or_else(|| Error::Config("seed range overflows".into()))?;
    Ok(pool.install(|| (seeds.seed..end).into_par_iter().map(&f).collect()))
}

fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

fn write_pipeline_outputs(dir: &Path, out: &pipeline::PipelineOutput) -> Result<()> {
    write_json(&dir.join("report.json"), &out.report)?;
    write_camera(&dir.join("camera.json"), &out.camera)?;
    write_json(&dir.join("transforms.json"), &out.transforms)?;
    write_body_obj(&dir.join("body.obj"), &out.body)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Synth { seeds, out } => {
            let results = per_seed(&seeds, |seed| {
                let bundle = synth_scene(seed, &cfg.scene)?;
                let dir = out.join(scene_name(seed));
                write_scene(&dir, &bundle)?;
                Ok(dir.display().to_string())
            })?;
            print_json(&first_error(results)?);
        }
        Command::Calibrate { scene, out } => {
            let (inputs, truth) = read_scene(&scene)?;
            let camera = stage_report(Stage::Calibrate, |r| pipeline::calibrate(&inputs, truth.as_ref(), &cfg, r))?;
            write_camera(&out, &camera)?;
        }
        Command::Codec { scene, maps, out } => {
            let (inputs, _) = read_scene(&scene)?;
            let (heat, loc, pose) = stage_report(Stage::Codec, |r| pipeline::codec(&inputs, &cfg, r))?;
            if let Some(p) = maps {
                write_maps(&p, &heat, Some(&loc))?;
            }
            if let Some(p) = out {
                write_json(&p, &pose)?;
            }
        }
        Command::Place { scene, camera, pose, out } => {
            let (inputs, truth) = read_scene(&scene)?;
            let camera = read_camera(&camera)?;
            let pose3d: Pose3D = match pose {
                Some(p) => read_json(&p)?,
                None => inputs.pose3d.clone(),
            };
            let placed = stage_report(Stage::Place, |r| pipeline::place(&inputs, &camera, &pose3d, truth.as_ref(), &cfg, r))?;
            write_json(&out, &placed.pose)?;
        }
        Command::Skin {
            scene,
            camera,
            placed,
            out,
            transforms,
        } => {
            let (inputs, truth) = read_scene(&scene)?;
            let camera = read_camera(&camera)?;
            let placed: Pose3D = read_json(&placed)?;
            if placed.frame != Frame::World {
                return Err(Error::format(&out, "placed pose must be in the world frame"));
            }
            let (fitted, body) = stage_report(Stage::Skin, |r| pipeline::skin(&inputs, &camera, &placed, truth.as_ref(), &cfg, r))?;
            write_body_obj(&out, &body)?;
            if let Some(p) = transforms {
                write_json(&p, &fitted)?;
            }
        }
        Command::Compose { parts, out, report } => {
            let body = read_body_obj(&parts).map_err(|e| e.at_stage(Stage::Compose))?;
            let (composed, stage) = run_stage(Stage::Compose, |r| pipeline::compose(&body, &cfg, r))?;
            let summary = json!({
                "stage": stage,
                "iterations": composed.iterations.iter().map(|i| json!({
                    "collisions": i.collisions,
                    "loss_before": i.loss_before,
                    "loss_after": i.loss_after,
                })).collect::<Vec<_>>(),
                "residual_collisions": composed.residual_collisions,
            });
            print_json(&summary);
            if let Some(p) = report {
                write_json(&p, &summary)?;
            }
            write_body_obj(&out, &composed.mesh)?;
        }
        Command::TrainToy { out, report } => {
            let toy = &cfg.toy;
            let data = capsule_part_dataset(toy.examples, toy.dataset_seed)?;
            let model = TlModel::new(toy.network.clone(), &data.rest)?;
            let init = model.init_params(&mut rand_seed(toy.init_seed));
            let before = model.evaluate(&init, &data.examples, toy.train.w_z, toy.train.w_mesh)?;
            let trained = hoopmesh::core::meshnet::train_toy(&model, &data.examples, &init, &toy.train)?;
            let after = model.evaluate(&trained.params, &data.examples, toy.train.w_z, toy.train.w_mesh)?;
            write_params(&out, &trained.params)?;
            let summary = json!({
                "steps": trained.steps,
                "initial": losses_json(&before),
                "final": losses_json(&after),
                "mesh_ratio": after.mesh_pred / before.mesh_pred,
            });
            print_json(&summary);
            if let Some(p) = report {
                let history: Vec<_> = trained.losses.iter().map(losses_json).collect();
                write_json(&p, &json!({ "summary": summary, "history": history }))?;
            }
        }
        Command::InferPart { params, pose, example, out } => {
            let toy = &cfg.toy;
            let data = capsule_part_dataset(toy.examples.max(example + 1), toy.dataset_seed)?;
            let model = TlModel::new(toy.network.clone(), &data.rest)?;
            let params = read_params(&params)?;
            model.check_params(&params)?;
            let (pose, target) = match pose {
                Some(p) => (read_json::<Pose3D>(&p)?, None),
                None => (data.examples[example].pose.clone(), Some(&data.examples[example].posed)),
            };
            let pred = model.forward(&params, &pose, &data.rest.vertices)?;
            let mut part = data.rest.clone();
            part.vertices = pred.vertices;
            write_body_obj(&out, &BodyMesh::new(vec![part.clone()]))?;
            let mut summary = json!({ "vertices": part.vertices.len() });
            if let Some(t) = target {
                summary["mean_abs_error_m"] = json!(mean_abs(&part.vertices, t));
            }
            print_json(&summary);
        }
        Command::Eval {
            pred,
            gt,
            metrics,
            icp: align,
            pred_joints,
            gt_joints,
        } => {
            let mut p = read_obj_points(&pred)?;
            let g = read_obj_points(&gt)?;
            let mut report = serde_json::Map::new();
            if align {
                let icp_cfg = IcpConfig {
                    max_iterations: cfg.eval.icp_max_iterations,
                    tolerance: cfg.eval.icp_tolerance,
                };
                let fit = icp(&p, &g, &icp_cfg)?;
                p = p.iter().map(|v| fit.transform.apply(v)).collect();
                report.insert("icp_iterations".into(), json!(fit.iterations));
                report.insert("icp_residual".into(), json!(fit.residuals.last()));
            }
            let joints = match (&pred_joints, &gt_joints) {
                (Some(a), Some(b)) => Some((read_json::<Pose3D>(a)?, read_json::<Pose3D>(b)?)),
                _ => None,
            };
            for m in metrics {
                let (name, value) = match m {
                    Metric::Cd => ("chamfer_x1000", chamfer(&p, &g)?),
                    Metric::Emd => ("emd_m", emd(&p, &g, cfg.eval.emd_samples)?),
                    Metric::Mpvpe => ("mpvpe_mm", mpvpe(&p, &g, false)?),
                    Metric::MpvpePa => ("mpvpe_pa_mm", mpvpe(&p, &g, true)?),
                    Metric::Mpjpe | Metric::MpjpePa => {
                        let (a, b) = joints
                            .as_ref()
                            .ok_or_else(|| Error::Config("joint metrics need --pred-joints and --gt-joints".into()))?;
                        let pa = m == Metric::MpjpePa;
                        (if pa { "mpjpe_pa_mm" } else { "mpjpe_mm" }, mpjpe(a, b, &LSP14, pa)?)
                    }
                };
                report.insert(name.into(), json!(value));
            }
            print_json(&report);
        }
        Command::Pipeline { seeds, scene, out } => {
            let reports: Vec<PipelineReport> = match scene {
                Some(dir) => {
                    let (inputs, truth) = read_scene(&dir)?;
                    let result = run_pipeline(&inputs, truth.as_ref(), &cfg)?;
                    if let Some(o) = &out {
                        write_pipeline_outputs(o, &result)?;
                    }
                    vec![result.report]
                }
                None => first_error(per_seed(&seeds, |seed| {
                    let bundle = synth_scene(seed, &cfg.scene)?;
                    let (inputs, truth) = split_bundle(&bundle);
                    let result = run_pipeline(&inputs, Some(&truth), &cfg)?;
                    if let Some(o) = &out {
                        write_pipeline_outputs(&o.join(scene_name(seed)), &result)?;
                    }
                    Ok(result.report)
                })?)?,
            };
            print_json(&reports);
        }
    }
    Ok(())
}

fn rand_seed(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand_chacha::rand_core::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn losses_json(l: &hoopmesh::core::meshnet::TlLosses) -> serde_json::Value {
    json!({ "z": l.z, "mesh_gt": l.mesh_gt, "mesh_pred": l.mesh_pred, "total": l.total })
}

fn mean_abs(a: &[Vec3], b: &[Vec3]) -> f64 {
    let n = 3 * a.len().max(1);
    a.iter().zip(b).map(|(p, q)| (p - q).abs().sum()).sum::<f64>() / n as f64
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let code = e.exit_code();
        debug_assert_ne!(code, ExitCode::Success);
        process::exit(code as i32);
    }
}
