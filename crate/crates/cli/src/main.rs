use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use undetr_core::assignment::AssignmentResult;
use undetr_core::harness::config::PipelineConfig;
use undetr_core::harness::io::{
    read_json, read_jsonl, read_scenes, write_json, write_jsonl, write_scenes, DetectionsRecord, GroundTruthRecord,
    PredictionsRecord,
};
use undetr_core::harness::pipeline::{self, assign, format_report, pr_curve_csv, select_queries, supervision_samples};
use undetr_core::harness::synth::{generate_dataset, Proposal, SyntheticSceneSpec};
use undetr_core::ipp::{train, IppModel};
use undetr_core::metrics::evaluate_dataset;
use undetr_core::postprocess::{dual_criteria, ips_guided_nms, Detection};
use undetr_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "undetr",
    version,
    about = "Unknown-object detection pipeline on query proposals"
)]
struct Cli {
    /// Pipeline config (flat TOML, kebab-case keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for training and synthetic data; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Same-named overrides for every config key.
#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    c_const: Option<f64>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    lambda_ips: Option<f64>,
    #[arg(long, global = true)]
    lambda_cls: Option<f64>,
    #[arg(long, global = true)]
    lambda_box: Option<f64>,
    #[arg(long, global = true)]
    match_lambda_cls: Option<f64>,
    #[arg(long, global = true)]
    match_lambda_box: Option<f64>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    init_scale: Option<f64>,
    #[arg(long, global = true)]
    topk: Option<usize>,
    #[arg(long, global = true)]
    nms_diou: Option<f64>,
    #[arg(long, global = true)]
    cls_thresh: Option<f64>,
    #[arg(long, global = true)]
    ips_thresh: Option<f64>,
    #[arg(long, global = true)]
    iou_threshold: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut PipelineConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(
            alpha,
            beta,
            c_const,
            tau,
            lambda_ips,
            lambda_cls,
            lambda_box,
            match_lambda_cls,
            match_lambda_box,
            learning_rate,
            steps,
            batch_size,
            init_scale,
            topk,
            nms_diou,
            cls_thresh,
            ips_thresh,
            iou_threshold
        );
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Use the noisy preset as the base spec.
    #[arg(long)]
    noisy: bool,
    #[arg(long)]
    known: Option<usize>,
    #[arg(long)]
    unknown: Option<usize>,
    #[arg(long)]
    background: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    duplicates: Option<usize>,
    #[arg(long)]
    box_noise: Option<f64>,
    #[arg(long)]
    logit_noise: Option<f64>,
    #[arg(long)]
    feature_noise: Option<f64>,
    #[arg(long)]
    clutter_fraction: Option<f64>,
    #[arg(long)]
    min_typicality: Option<f64>,
}

impl SynthArgs {
    fn spec(&self, seed: u64) -> Result<SyntheticSceneSpec> {
        let mut spec = if self.noisy {
            SyntheticSceneSpec::noisy(seed)
        } else {
            SyntheticSceneSpec {
                seed,
                ..SyntheticSceneSpec::default()
            }
        };
        macro_rules! set {
            ($($arg:ident => $field:ident),*) => {
                $(if let Some(v) = self.$arg { spec.$field = v; })*
            };
        }
        set!(
            known => n_known,
            unknown => n_unknown,
            background => n_background,
            dim => embedding_dim,
            classes => k_classes,
            duplicates => duplicates,
            box_noise => box_noise,
            logit_noise => logit_noise,
            feature_noise => feature_noise,
            clutter_fraction => clutter_fraction,
            min_typicality => min_typicality
        );
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes: detections.jsonl and gt.jsonl.
    Synth {
        #[arg(long, default_value_t = 100)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        first_scene: u64,
        #[command(flatten)]
        spec: SynthArgs,
    },
    /// One-to-many matching of known ground truths to proposals.
    Match {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Train an IPS predictor on the positive queries of every scene.
    TrainIpp {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Keep the top-k proposals ranked by an IPS predictor.
    Select {
        #[arg(long)]
        detections: PathBuf,
        /// Model used for ranking.
        #[arg(long)]
        model: PathBuf,
        /// Model whose IPS is attached to the kept proposals; defaults to `--model`.
        #[arg(long)]
        scorer: Option<PathBuf>,
    },
    /// IPS-guided NMS on scored proposals.
    Nms {
        #[arg(long)]
        detections: PathBuf,
    },
    /// Dual-criteria verdicts for scored proposals.
    Classify {
        #[arg(long)]
        detections: PathBuf,
    },
    /// Unknown-class metrics and known mAP for a predictions file.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Train both predictors and evaluate, on files or on synthetic scenes.
    Pipeline {
        #[arg(long, requires_all = ["train_gt", "test_detections", "test_gt"])]
        train_detections: Option<PathBuf>,
        #[arg(long)]
        train_gt: Option<PathBuf>,
        #[arg(long)]
        test_detections: Option<PathBuf>,
        #[arg(long)]
        test_gt: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        train_scenes: usize,
        #[arg(long, default_value_t = 200)]
        test_scenes: usize,
        #[command(flatten)]
        spec: SynthArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Detections of every proposal, which must all carry an `ips`.
fn scored_detections(record: &DetectionsRecord, path: &Path, line: usize) -> Result<Vec<Detection>> {
    record
        .proposals
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let ips = p.ips.ok_or_else(|| Error::Schema {
                path: path.to_path_buf(),
                line,
                message: format!("proposal {j} has no \"ips\"; run `select` first"),
            })?;
            Detection::new(p.bbox, p.logits.clone(), ips).map_err(|e| Error::Schema {
                path: path.to_path_buf(),
                line,
                message: format!("proposal {j}: {e}"),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct MatchRecord<'a> {
    image_id: &'a str,
    #[serde(flatten)]
    assignment: AssignmentResult,
}

#[derive(Serialize)]
struct TrainRecord {
    samples: usize,
    epoch_losses: Vec<f64>,
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::Synth {
            scenes,
            first_scene,
            spec,
        } => {
            let spec = spec.spec(cfg.seed)?;
            let data = generate_dataset(&spec, *first_scene, *scenes)?;
            create_dir(out)?;
            write_scenes(&data, &out.join("detections.jsonl"), &out.join("gt.jsonl"))?;
            println!("wrote {} scenes to {}", data.len(), out.display());
        }
        Command::Match { detections, gt } => {
            let scenes = read_scenes(detections, gt)?;
            let mut records = Vec::with_capacity(scenes.len());
            for s in &scenes {
                let assignment = assign(&s.proposals, &s.known_gts(), cfg.match_weights())?;
                records.push(MatchRecord {
                    image_id: &s.image_id,
                    assignment,
                });
            }
            create_dir(out)?;
            write_jsonl(&out.join("matches.jsonl"), &records)?;
            println!("matched {} scenes", records.len());
        }
        Command::TrainIpp { detections, gt } => {
            let scenes = read_scenes(detections, gt)?;
            let sup = cfg.supervision();
            let mut data = Vec::new();
            for s in &scenes {
                let gts = s.known_gts();
                let assignment = assign(&s.proposals, &gts, cfg.match_weights())?;
                data.extend(supervision_samples(&s.proposals, &gts, &assignment, &sup));
            }
            let outcome = train(&data, &cfg.trainer(), &sup)?;
            create_dir(out)?;
            write_json(&out.join(pipeline::MODEL_FILE), &outcome.model)?;
            let last = outcome.epoch_losses.last().copied().unwrap_or(0.0);
            write_json(
                &out.join(pipeline::TRAINING_FILE),
                &TrainRecord {
                    samples: data.len(),
                    epoch_losses: outcome.epoch_losses,
                },
            )?;
            println!("trained on {} samples, final epoch loss {last:.6}", data.len());
        }
        Command::Select {
            detections,
            model,
            scorer,
        } => {
            let ranker: IppModel = read_json(model)?;
            let scorer: IppModel = match scorer {
                Some(p) => read_json(p)?,
                None => ranker.clone(),
            };
            let records: Vec<DetectionsRecord> = read_jsonl(detections)?;
            let selected = records
                .into_iter()
                .map(|r| {
                    let proposals = select_queries(&r.proposals, &ranker, Some(&scorer), cfg.topk)?;
                    Ok(DetectionsRecord {
                        image_id: r.image_id,
                        proposals,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            create_dir(out)?;
            write_jsonl(&out.join("selected.jsonl"), &selected)?;
            println!("selected up to {} proposals in {} scenes", cfg.topk, selected.len());
        }
        Command::Nms { detections } => {
            let records: Vec<DetectionsRecord> = read_jsonl(detections)?;
            let post = cfg.postprocess();
            let mut kept_total = 0;
            let mut kept_records = Vec::with_capacity(records.len());
            for (i, r) in records.iter().enumerate() {
                let dets = scored_detections(r, detections, i + 1)?;
                let kept: Vec<Proposal> = ips_guided_nms(&dets, &post)
                    .into_iter()
                    .map(|d| {
                        let j = dets
                            .iter()
                            .position(|x| *x == d)
                            .expect("kept detection comes from input");
                        r.proposals[j].clone()
                    })
                    .collect();
                kept_total += kept.len();
                kept_records.push(DetectionsRecord {
                    image_id: r.image_id.clone(),
                    proposals: kept,
                });
            }
            create_dir(out)?;
            write_jsonl(&out.join("nms.jsonl"), &kept_records)?;
            println!("kept {kept_total} proposals");
        }
        Command::Classify { detections } => {
            let records: Vec<DetectionsRecord> = read_jsonl(detections)?;
            let post = cfg.postprocess();
            let predictions = records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let dets = scored_detections(r, detections, i + 1)?;
                    Ok(PredictionsRecord {
                        image_id: r.image_id.clone(),
                        predictions: dets.iter().filter_map(|d| dual_criteria(d, &post)).collect(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            create_dir(out)?;
            write_jsonl(&out.join(pipeline::PREDICTIONS_FILE), &predictions)?;
            println!("classified {} scenes", predictions.len());
        }
        Command::Evaluate { predictions, gt } => {
            let preds: Vec<PredictionsRecord> = read_jsonl(predictions)?;
            let gts: Vec<GroundTruthRecord> = read_jsonl(gt)?;
            if preds.len() != gts.len() {
                return Err(Error::Dimension(format!(
                    "{} prediction records vs {} ground-truth records",
                    preds.len(),
                    gts.len()
                )));
            }
            for (i, (p, g)) in preds.iter().zip(&gts).enumerate() {
                if p.image_id != g.image_id {
                    return Err(Error::Schema {
                        path: gt.clone(),
                        line: i + 1,
                        message: format!("image_id {:?} does not match predictions {:?}", g.image_id, p.image_id),
                    });
                }
            }
            let p: Vec<_> = preds.into_iter().map(|r| r.predictions).collect();
            let g: Vec<_> = gts.into_iter().map(|r| r.objects).collect();
            let (report, outcome) = evaluate_dataset(&p, &g, &cfg.metrics())?;
            create_dir(out)?;
            write_json(&out.join(pipeline::REPORT_FILE), &report)?;
            write_text(&out.join(pipeline::PR_CURVE_FILE), &pr_curve_csv(&outcome))?;
            print!("{}", format_report(&report));
        }
        Command::Pipeline {
            train_detections,
            train_gt,
            test_detections,
            test_gt,
            train_scenes,
            test_scenes,
            spec,
        } => {
            let (train_set, test_set) = match (train_detections, train_gt, test_detections, test_gt) {
                (Some(td), Some(tg), Some(vd), Some(vg)) => (read_scenes(td, tg)?, read_scenes(vd, vg)?),
                _ => {
                    let spec = spec.spec(cfg.seed)?;
                    let train_set = generate_dataset(&spec, 0, *train_scenes)?;
                    let test_set = generate_dataset(&spec, *train_scenes as u64, *test_scenes)?;
                    (train_set, test_set)
                }
            };
            let run = pipeline::run_pipeline(&train_set, &test_set, &cfg)?;
            pipeline::write_artifacts(&run, &cfg, out)?;
            print!("{}", format_report(&run.report));
        }
    }
    Ok(())
}
