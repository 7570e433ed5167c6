//! End-to-end steps shared by the CLI and the test suites: dataset
//! generation, frame planning, the training driver, index building,
//! evaluation and single-frame queries.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use poco_core::cloud::synth::{synth_generate, SynthConfig};
use poco_core::cloud::{estimate_normals, PointFrame, Split, NORMAL_RADIUS};
use poco_core::net::{plan_frame, FramePlan, Model, ModelConfig};
use poco_core::retrieve::{
    evaluate_recall, query, select_split, DescriptorIndex, IndexEntry, QueryItem, RecallTable,
    RetrievalResult,
};
use poco_core::train::{steps_per_epoch, TrainConfig, Trainer, TripletPlans, TripletSpec};
use poco_core::Diagnostics;
use rayon::prelude::*;

use crate::config::EvalConfig;
use crate::dataset::{self, Dataset};
use crate::error::{Error, Result};
use crate::formats::pck::{save_model, CheckpointMeta};
use crate::metrics::{format_epoch, format_step, MetricsLog};

pub const INIT_CHECKPOINT: &str = "init.pck";
pub const LAST_CHECKPOINT: &str = "last.pck";
pub const MODEL_CHECKPOINT: &str = "model.pck";
pub const METRICS_LOG: &str = "metrics.log";
pub const INDEX_FILE: &str = "index.pdb";

/// Generates the synthetic dataset and writes it under `dir`.
pub fn generate(cfg: &SynthConfig, dir: &Path) -> Result<Dataset> {
    let ds = Dataset::from_synth(synth_generate(cfg)?);
    dataset::save(&ds, dir)?;
    Ok(ds)
}

/// Planned frames keyed by frame id.
#[derive(Debug, Clone, Default)]
pub struct Plans {
    by_id: HashMap<String, FramePlan>,
}

impl Plans {
    /// Plans the frames of `splits` in parallel.
    pub fn new(ds: &Dataset, splits: &[Split], cfg: &ModelConfig) -> Result<Plans> {
        let picked: Vec<&PointFrame> = ds
            .manifest
            .frames()
            .zip(&ds.frames)
            .filter(|(r, _)| splits.contains(&r.frame.split))
            .map(|(_, f)| f)
            .collect();
        let plans = picked
            .par_iter()
            .map(|f| plan_frame(f, cfg))
            .collect::<poco_core::Result<Vec<_>>>()?;
        Ok(Plans {
            by_id: picked
                .iter()
                .map(|f| f.frame_id.clone())
                .zip(plans)
                .collect(),
        })
    }

    pub fn get(&self, frame_id: &str) -> Result<&FramePlan> {
        self.by_id.get(frame_id).ok_or_else(|| {
            Error::Core(poco_core::Error::Contract(format!(
                "frame {frame_id} was not planned"
            )))
        })
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

/// Database index and query descriptors of one split.
#[derive(Debug, Clone)]
pub struct Gallery {
    pub index: DescriptorIndex,
    pub queries: Vec<QueryItem>,
}

/// Selects database frames per scene (greedy spacing sweep) and describes
/// every frame of `split` in parallel. The index spans all scenes jointly.
pub fn build_gallery(
    model: &Model,
    ds: &Dataset,
    plans: &Plans,
    split: Split,
    spacing: f64,
) -> Result<Gallery> {
    let sel = select_split(&ds.manifest, split, spacing)?;
    let db: Vec<_> = sel.iter().flat_map(|s| s.database.iter()).collect();
    let qs: Vec<_> = sel.iter().flat_map(|s| s.queries.iter()).collect();
    let describe = |id: &str| -> Result<Vec<f64>> { Ok(model.descriptor(plans.get(id)?)) };
    let entries = db
        .par_iter()
        .map(|f| {
            Ok(IndexEntry::new(
                f.frame.frame_id.clone(),
                f.scene_id,
                f.pose(),
                &describe(&f.frame.frame_id)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let queries = qs
        .par_iter()
        .map(|f| {
            Ok(QueryItem {
                frame_id: f.frame.frame_id.clone(),
                scene_id: f.scene_id.to_string(),
                pose: f.pose(),
                descriptor: describe(&f.frame.frame_id)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let index = DescriptorIndex::new(model.config.descriptor_dim, entries)?;
    Ok(Gallery { index, queries })
}

/// Recall table of `model` on `eval.split`.
pub fn evaluate(model: &Model, ds: &Dataset, eval: &EvalConfig) -> Result<RecallTable> {
    let plans = Plans::new(ds, &[eval.split], &model.config)?;
    evaluate_planned(model, ds, &plans, eval.split, eval)
}

pub fn evaluate_planned(
    model: &Model,
    ds: &Dataset,
    plans: &Plans,
    split: Split,
    eval: &EvalConfig,
) -> Result<RecallTable> {
    let g = build_gallery(model, ds, plans, split, eval.db_spacing)?;
    Ok(evaluate_recall(
        &g.index,
        &g.queries,
        &eval.ks,
        eval.match_radius,
    )?)
}

/// Adds normals when a frame file has none.
pub fn prepare_frame(frame: PointFrame) -> Result<PointFrame> {
    if frame.normals.is_some() {
        return Ok(frame);
    }
    let mut diag = Diagnostics::default();
    Ok(estimate_normals(
        &frame,
        NORMAL_RADIUS,
        [0.0; 3],
        &mut diag,
    )?)
}

/// Ranks the index against one frame.
pub fn query_frame(
    model: &Model,
    index: &DescriptorIndex,
    frame: &PointFrame,
    top_k: usize,
) -> Result<RetrievalResult> {
    if index.dim() != model.config.descriptor_dim {
        return Err(Error::Core(poco_core::Error::Contract(format!(
            "index dimension {} does not match the checkpoint's descriptor dimension {}",
            index.dim(),
            model.config.descriptor_dim
        ))));
    }
    let d = model.describe(frame)?;
    let mut diag = Diagnostics::default();
    Ok(query(index, &frame.frame_id, &d, top_k, &mut diag)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub val_recall1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: Model,
    /// The model before the first update.
    pub init: Model,
    pub steps: u64,
    pub epochs: Vec<EpochSummary>,
    pub diagnostics: Diagnostics,
}

/// Where the training driver writes; nothing is written without it.
#[derive(Debug, Clone)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

fn meta(cfg: &TrainConfig, step: u64) -> CheckpointMeta {
    CheckpointMeta {
        step,
        train: cfg.clone(),
    }
}

/// Trains on the train split for `cfg.epochs` epochs.
///
/// With a run directory: `init.pck` before the first step, `last.pck`
/// after every epoch, `model.pck` at the end, and the step log in
/// `metrics.log`. A non-finite loss stops training; `last.pck` then holds
/// the last finite model and the error is returned.
pub fn train(
    ds: &Dataset,
    cfg: &TrainConfig,
    eval: &EvalConfig,
    out: Option<&RunDir>,
    on_epoch: &mut dyn FnMut(&EpochSummary),
) -> Result<TrainReport> {
    cfg.validate()?;
    let has_val = ds.manifest.frames_in(Split::Val).next().is_some();
    let splits: &[Split] = if has_val {
        &[Split::Train, Split::Val]
    } else {
        &[Split::Train]
    };
    let plans = Plans::new(ds, splits, &cfg.model)?;
    let mut trainer = Trainer::new(cfg.clone(), 1)?;
    let schedule: Vec<Vec<TripletSpec>> = (0..cfg.epochs)
        .map(|e| trainer.epoch_triplets(&ds.manifest, Split::Train, e))
        .collect::<poco_core::Result<_>>()?;
    if schedule[0].is_empty() {
        return Err(Error::Core(poco_core::Error::InvalidInput(
            "the train split yields no triplets".into(),
        )));
    }
    let total: usize = schedule
        .iter()
        .map(|t| steps_per_epoch(t.len(), cfg.batch_size))
        .sum();
    trainer.schedule = cfg.schedule(total as u64);
    let init = trainer.model.clone();

    let mut log = match out {
        Some(dir) => {
            save_model(&trainer.model, &meta(cfg, 0), &dir.path(INIT_CHECKPOINT))?;
            Some(MetricsLog::open(&dir.path(METRICS_LOG), true)?)
        }
        None => None,
    };
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for (epoch, triplets) in schedule.iter().enumerate() {
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in triplets.chunks(cfg.batch_size) {
            let negs: Vec<Vec<&FramePlan>> = chunk
                .iter()
                .map(|t| {
                    t.negative_ids
                        .iter()
                        .map(|n| plans.get(n))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            let batch = chunk
                .iter()
                .zip(&negs)
                .map(|(t, n)| {
                    Ok(TripletPlans {
                        query: plans.get(&t.query_id)?,
                        positive: plans.get(&t.positive_id)?,
                        negatives: n,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let rec = match trainer.step(&batch) {
                Ok(r) => r,
                Err(e) => {
                    if let (Some(dir), Some(log)) = (out, log.as_mut()) {
                        log.line(&format!("aborted step={} reason={}", trainer.step, e))?;
                        log.flush()?;
                        save_model(
                            &trainer.model,
                            &meta(cfg, trainer.step),
                            &dir.path(LAST_CHECKPOINT),
                        )?;
                    }
                    return Err(e.into());
                }
            };
            if let Some(log) = log.as_mut() {
                log.line(&format_step(&rec))?;
            }
            sum += rec.loss_total;
            steps += 1;
        }
        let val_recall1 = if has_val {
            let t = evaluate_planned(&trainer.model, ds, &plans, Split::Val, eval)?;
            Some(t.recall(0))
        } else {
            None
        };
        let summary = EpochSummary {
            epoch,
            steps,
            mean_loss: sum / steps as f64,
            val_recall1,
        };
        if let (Some(dir), Some(log)) = (out, log.as_mut()) {
            log.line(&format_epoch(epoch, steps, summary.mean_loss, val_recall1))?;
            log.flush()?;
            save_model(
                &trainer.model,
                &meta(cfg, trainer.step),
                &dir.path(LAST_CHECKPOINT),
            )?;
        }
        on_epoch(&summary);
        epochs.push(summary);
    }
    if let Some(dir) = out {
        save_model(
            &trainer.model,
            &meta(cfg, trainer.step),
            &dir.path(MODEL_CHECKPOINT),
        )?;
    }
    Ok(TrainReport {
        model: trainer.model,
        init,
        steps: trainer.step,
        epochs,
        diagnostics: trainer.diagnostics,
    })
}
