//! End-to-end run: supervise and train the query-selection and detection
//! IPS predictors on training scenes, then select, suppress, classify and
//! evaluate the test scenes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assignment::{solve_one_to_many, AssignmentResult, CostMatrix, MatchWeights};
use crate::error::{Error, Result};
use crate::ipp::{train, IppModel, IppSample};
use crate::metrics::{evaluate_dataset, precision_recall_curve, EvalReport, GroundTruthObject, MatchOutcome};
use crate::postprocess::{postprocess, Detection};
use crate::selection::{score_proposals, select_topk, ProposalSet};
use crate::supervision::{
    categorical_objectness, detection_losses, ips_loss, positional_objectness, supervision_target, total_loss,
    IpsSample, LossBreakdown, SupervisionConfig,
};

use super::config::PipelineConfig;
use super::io::{to_json_pretty, write_json, write_jsonl, PredictionsRecord};
use super::synth::{Proposal, Scene};

/// One-to-many assignment of a scene's known ground truths to proposals.
pub fn assign(
    proposals: &[Proposal],
    known_gts: &[GroundTruthObject],
    weights: MatchWeights,
) -> Result<AssignmentResult> {
    let dets: Vec<Detection> = proposals.iter().map(Proposal::to_detection).collect();
    let costs = CostMatrix::build(&dets, known_gts, weights)?;
    solve_one_to_many(&costs)
}

/// IPS supervision for every positive query of one scene.
pub fn supervision_samples(
    proposals: &[Proposal],
    known_gts: &[GroundTruthObject],
    assignment: &AssignmentResult,
    sup: &SupervisionConfig,
) -> Vec<IppSample> {
    assignment
        .positive_pairs()
        .map(|(g, p)| {
            let prop = &proposals[p];
            let giou = positional_objectness(&known_gts[g].bbox, &prop.bbox);
            let p_f = categorical_objectness(&prop.logits);
            IppSample {
                embedding: prop.embedding.clone(),
                giou,
                target: supervision_target(giou, p_f, sup),
            }
        })
        .collect()
}

fn scene_samples(
    scene: &Scene,
    proposals: &[Proposal],
    cfg: &PipelineConfig,
) -> Result<(Vec<IppSample>, AssignmentResult)> {
    let gts = scene.known_gts();
    let assignment = assign(proposals, &gts, cfg.match_weights())
        .map_err(|e| Error::Dimension(format!("{}: {e}", scene.image_id)))?;
    let samples = supervision_samples(proposals, &gts, &assignment, &cfg.supervision());
    Ok((samples, assignment))
}

/// The `topk` proposals ranked by `selector`, each tagged with the IPS of
/// `scorer` when one is given.
pub fn select_queries(
    proposals: &[Proposal],
    selector: &IppModel,
    scorer: Option<&IppModel>,
    topk: usize,
) -> Result<Vec<Proposal>> {
    let set = ProposalSet::new(
        proposals.iter().map(|p| p.embedding.clone()).collect(),
        proposals.iter().map(|p| p.bbox).collect(),
    )?;
    let picked = select_topk(&score_proposals(set, selector)?, topk)?;
    picked
        .indices
        .iter()
        .map(|&i| {
            let mut p = proposals[i].clone();
            p.ips = match scorer {
                Some(m) => Some(m.forward(&p.embedding)?),
                None => None,
            };
            Ok(p)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub selector_samples: usize,
    pub scorer_samples: usize,
    pub selector_epoch_losses: Vec<f64>,
    pub scorer_epoch_losses: Vec<f64>,
    /// Losses of the trained scorer on the training scenes.
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub selector: IppModel,
    pub scorer: IppModel,
    pub training: TrainingSummary,
    pub predictions: Vec<PredictionsRecord>,
    pub report: EvalReport,
    pub outcome: MatchOutcome,
}

/// Trains the query selector on every proposal of the training scenes,
/// then the detection scorer on the queries the selector keeps.
pub fn train_predictors(train_scenes: &[Scene], cfg: &PipelineConfig) -> Result<(IppModel, IppModel, TrainingSummary)> {
    cfg.validate()?;
    let sup = cfg.supervision();

    let mut selector_data = Vec::new();
    for scene in train_scenes {
        selector_data.extend(scene_samples(scene, &scene.proposals, cfg)?.0);
    }
    let selector_run = train(&selector_data, &cfg.trainer(), &sup)?;
    let selector = selector_run.model;

    let mut scorer_data = Vec::new();
    let mut queries = Vec::with_capacity(train_scenes.len());
    for scene in train_scenes {
        let q = select_queries(&scene.proposals, &selector, None, cfg.topk)?;
        let (samples, assignment) = scene_samples(scene, &q, cfg)?;
        scorer_data.extend(samples);
        queries.push((q, assignment));
    }
    let mut trainer = cfg.trainer();
    trainer.seed = trainer.seed.wrapping_add(1);
    let scorer_run = train(&scorer_data, &trainer, &sup)?;
    let scorer = scorer_run.model;

    let mut ips_samples = Vec::new();
    let mut matched = Vec::new();
    for (scene, (q, assignment)) in train_scenes.iter().zip(&queries) {
        let gts = scene.known_gts();
        for s in supervision_samples(q, &gts, assignment, &sup) {
            ips_samples.push(IpsSample {
                giou: s.giou,
                target: s.target,
                ips: scorer.forward(&s.embedding)?,
            });
        }
        for &(g, p) in &assignment.best {
            matched.push((q[p].to_detection(), gts[g].clone()));
        }
    }
    let pairs: Vec<(&Detection, &GroundTruthObject)> = matched.iter().map(|(d, g)| (d, g)).collect();
    let det = detection_losses(&pairs)?;
    let losses = total_loss(ips_loss(&ips_samples, &sup), det.l_cls, det.l_box, &sup);

    let summary = TrainingSummary {
        selector_samples: selector_data.len(),
        scorer_samples: scorer_data.len(),
        selector_epoch_losses: selector_run.epoch_losses,
        scorer_epoch_losses: scorer_run.epoch_losses,
        losses,
    };
    Ok((selector, scorer, summary))
}

/// Query selection, IPS-guided NMS and the dual-criteria verdict for one
/// scene.
pub fn predict_scene(
    proposals: &[Proposal],
    selector: &IppModel,
    scorer: &IppModel,
    cfg: &PipelineConfig,
) -> Result<PredictionsRecord> {
    let queries = select_queries(proposals, selector, Some(scorer), cfg.topk)?;
    let dets: Vec<Detection> = queries.iter().map(Proposal::to_detection).collect();
    Ok(PredictionsRecord {
        image_id: String::new(),
        predictions: postprocess(&dets, &cfg.postprocess()),
    })
}

pub fn run_pipeline(train_scenes: &[Scene], test_scenes: &[Scene], cfg: &PipelineConfig) -> Result<PipelineRun> {
    let (selector, scorer, training) = train_predictors(train_scenes, cfg)?;
    let predictions = test_scenes
        .iter()
        .map(|s| {
            let mut rec = predict_scene(&s.proposals, &selector, &scorer, cfg)?;
            rec.image_id = s.image_id.clone();
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<_> = predictions.iter().map(|r| r.predictions.clone()).collect();
    let gts: Vec<_> = test_scenes.iter().map(|s| s.gts.clone()).collect();
    let (report, outcome) = evaluate_dataset(&preds, &gts, &cfg.metrics())?;
    Ok(PipelineRun {
        selector,
        scorer,
        training,
        predictions,
        report,
        outcome,
    })
}

/// `recall,precision` rows for the unknown class.
pub fn pr_curve_csv(outcome: &MatchOutcome) -> String {
    let curve = precision_recall_curve(&outcome.unknown.ranked_flags(), outcome.unknown.num_gt);
    let mut out = String::from("recall,precision\n");
    for (r, p) in curve {
        out.push_str(&format!("{r:.9},{p:.9}\n"));
    }
    out
}

pub const MODEL_FILE: &str = "ipp_model.json";
pub const SELECTOR_FILE: &str = "selector_model.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const TRAINING_FILE: &str = "training.json";
pub const PR_CURVE_FILE: &str = "pr_curve_unknown.csv";
pub const CONFIG_FILE: &str = "config.toml";

/// Writes every artifact of `run` into `out_dir`.
pub fn write_artifacts(run: &PipelineRun, cfg: &PipelineConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_json(&out_dir.join(MODEL_FILE), &run.scorer)?;
    write_json(&out_dir.join(SELECTOR_FILE), &run.selector)?;
    write_json(&out_dir.join(TRAINING_FILE), &run.training)?;
    write_json(&out_dir.join(REPORT_FILE), &run.report)?;
    write_jsonl(&out_dir.join(PREDICTIONS_FILE), &run.predictions)?;
    let pr = out_dir.join(PR_CURVE_FILE);
    fs::write(&pr, pr_curve_csv(&run.outcome)).map_err(|e| Error::io(pr, e))?;
    let c = out_dir.join(CONFIG_FILE);
    fs::write(&c, cfg.to_toml_string()).map_err(|e| Error::io(c, e))?;
    Ok(())
}

/// Human-readable metric table.
pub fn format_report(report: &EvalReport) -> String {
    let c = &report.counts;
    format!(
        "U-AP   {:.4}\nU-PRE  {:.4}\nU-REC  {:.4}\nU-F1   {:.4}\nmAP    {:.4}\nTP_u {}  FP_u {}  FN_u {}  (unknown GT {}, known GT {}, scenes {})\n",
        report.u_ap, report.u_pre, report.u_rec, report.u_f1, report.map_known, c.tp_u, c.fp_u, c.fn_u,
        c.unknown_gt, c.known_gt, c.scenes
    )
}

/// Report as it is written to disk.
pub fn report_json(report: &EvalReport) -> Result<String> {
    to_json_pretty(report)
}
