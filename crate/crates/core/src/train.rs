//! Triplet mining and the optimization step.
//!
//! The driver that owns files, checkpoints and logs lives in the `poco`
//! crate; everything here is deterministic given the seed.

use alloc::string::String;
use alloc::vec::Vec;

use crate::cloud::{DatasetManifest, Split};
use crate::diag::Diagnostics;
use crate::diffcore::{Adam, Graph, LrSchedule};
use crate::loss::{query_batch_loss, CircleConfig, LossWeights, TripletConfig};
use crate::math::{dist2_3, sqrt};
use crate::net::{FramePlan, Model, ModelConfig};
use crate::rng::SeededRng;
use crate::{contract, Error, Result};

/// One query with a positive and its negatives, by frame id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletSpec {
    pub query_id: String,
    pub positive_id: String,
    pub negative_ids: Vec<String>,
}

/// Distance thresholds for positives and negatives, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct MiningConfig {
    /// Same-scene frames strictly closer than this are positives.
    pub positive_radius: f64,
    /// Same-scene frames strictly farther than this are negatives.
    pub negative_radius: f64,
    pub negatives: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            positive_radius: 2.0,
            negative_radius: 4.0,
            negatives: 4,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.positive_radius > 0.0 && self.negative_radius >= self.positive_radius)
            || self.negatives == 0
        {
            return Err(contract!(
                "mining needs 0 < positive_radius <= negative_radius and negatives > 0: {:?}",
                self
            ));
        }
        Ok(())
    }
}

struct Candidate<'a> {
    id: &'a str,
    scene: &'a str,
    pose: [f64; 3],
}

fn distance(a: &Candidate<'_>, b: &Candidate<'_>) -> f64 {
    sqrt(dist2_3(a.pose, b.pose))
}

/// Mines one triplet per frame of `split` that has a positive.
///
/// Positives and negatives come from the same split. Negatives are
/// same-scene frames beyond `negative_radius` or frames of any other
/// scene; they are drawn without replacement when enough exist and with
/// replacement otherwise. Queries without a positive are skipped and
/// counted in `diag.queries_without_positive`; queries without any
/// negative are skipped as well.
pub fn mine_triplets(
    manifest: &DatasetManifest,
    split: Split,
    cfg: &MiningConfig,
    seed: u64,
    diag: &mut Diagnostics,
) -> Result<Vec<TripletSpec>> {
    cfg.validate()?;
    let frames: Vec<Candidate<'_>> = manifest
        .frames_in(split)
        .map(|f| Candidate {
            id: f.frame.frame_id.as_str(),
            scene: f.scene_id,
            pose: f.pose(),
        })
        .collect();
    if frames.is_empty() {
        return Err(contract!("split {} has no frames to mine", split.as_str()));
    }
    let mut rng = SeededRng::derived(seed, 0x6d69_6e65);
    let mut out = Vec::new();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for q in &frames {
        positives.clear();
        negatives.clear();
        for (j, c) in frames.iter().enumerate() {
            if c.id == q.id {
                continue;
            }
            if c.scene != q.scene {
                negatives.push(j);
                continue;
            }
            let d = distance(q, c);
            if d < cfg.positive_radius {
                positives.push(j);
            } else if d > cfg.negative_radius {
                negatives.push(j);
            }
        }
        if positives.is_empty() {
            diag.queries_without_positive += 1;
            continue;
        }
        if negatives.is_empty() {
            continue;
        }
        let p = positives[rng.below(positives.len())];
        let picks: Vec<usize> = if negatives.len() >= cfg.negatives {
            rng.sample_indices(negatives.len(), cfg.negatives)
        } else {
            (0..cfg.negatives)
                .map(|_| rng.below(negatives.len()))
                .collect()
        };
        out.push(TripletSpec {
            query_id: q.id.into(),
            positive_id: frames[p].id.into(),
            negative_ids: picks
                .iter()
                .map(|&i| frames[negatives[i]].id.into())
                .collect(),
        });
    }
    Ok(out)
}

/// Checks a triplet against the thresholds; `Err` names the violation.
pub fn check_triplet(
    manifest: &DatasetManifest,
    t: &TripletSpec,
    cfg: &MiningConfig,
) -> core::result::Result<(), String> {
    let get = |id: &str| {
        manifest
            .find(id)
            .ok_or_else(|| alloc::format!("unknown frame {id}"))
    };
    let q = get(&t.query_id)?;
    let p = get(&t.positive_id)?;
    let dist = |a: [f64; 3], b: [f64; 3]| sqrt(dist2_3(a, b));
    if p.scene_id != q.scene_id
        || !(dist(p.pose(), q.pose()) < cfg.positive_radius)
        || t.positive_id == t.query_id
    {
        return Err(alloc::format!(
            "positive {} is not within range of {}",
            t.positive_id,
            t.query_id
        ));
    }
    for n in &t.negative_ids {
        let nf = get(n)?;
        if nf.scene_id == q.scene_id && !(dist(nf.pose(), q.pose()) > cfg.negative_radius) {
            return Err(alloc::format!(
                "negative {n} is too close to {}",
                t.query_id
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub epochs: usize,
    /// Triplets per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weights: LossWeights,
    pub circle: CircleConfig,
    pub triplet: TripletConfig,
    pub mining: MiningConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 1,
            seed: 7,
            lr_max: 1e-4,
            lr_min: 1e-7,
            weights: LossWeights::default(),
            circle: CircleConfig::default(),
            triplet: TripletConfig::default(),
            mining: MiningConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(contract!("epochs and batch_size must be positive"));
        }
        self.weights.validate()?;
        self.circle.validate()?;
        self.triplet.validate()?;
        self.mining.validate()?;
        self.model.validate()?;
        self.schedule(1).validate()
    }

    /// Schedule spanning `total_steps` optimizer steps: the first step uses
    /// `lr_max` and the last `lr_min`.
    pub fn schedule(&self, total_steps: u64) -> LrSchedule {
        LrSchedule {
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            total_steps: total_steps.saturating_sub(1).max(1),
        }
    }
}

/// Planned frames of one triplet.
#[derive(Debug, Clone, Copy)]
pub struct TripletPlans<'a> {
    pub query: &'a FramePlan,
    pub positive: &'a FramePlan,
    pub negatives: &'a [&'a FramePlan],
}

/// Batch-mean loss terms and the gradient of the total.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    pub loss_circle: f64,
    pub loss_triplet: f64,
    pub loss_total: f64,
    /// One entry per model parameter, in store order.
    pub grads: Vec<Vec<f64>>,
}

/// Forward and backward over a batch; the loss is the mean over triplets.
pub fn batch_gradients(
    model: &Model,
    batch: &[TripletPlans<'_>],
    cfg: &TrainConfig,
    diag: &mut Diagnostics,
) -> BatchGradients {
    assert!(!batch.is_empty(), "contract violation: empty batch");
    let mut g = Graph::new();
    let vars = model.params.bind(&mut g);
    let inv = 1.0 / batch.len() as f64;
    let (mut lc, mut lt) = (0.0, 0.0);
    let mut total = None;
    for t in batch {
        let q = model.forward(&mut g, &vars, t.query);
        let p = model.forward(&mut g, &vars, t.positive);
        let ns: Vec<_> = t
            .negatives
            .iter()
            .map(|n| model.forward(&mut g, &vars, n))
            .collect();
        let l = query_batch_loss(&mut g, q, p, &ns, &cfg.circle, &cfg.triplet, &cfg.weights);
        lc += g.value(l.circle).item() * inv;
        lt += g.value(l.triplet).item() * inv;
        let scaled = g.scale(l.total, inv);
        total = Some(match total {
            None => scaled,
            Some(acc) => g.add(acc, scaled),
        });
    }
    let total = total.expect("non-empty batch");
    let loss_total = g.value(total).item();
    if loss_total.is_finite() {
        g.backward(total);
    }
    diag.zero_norm_floors += g.diagnostics.zero_norm_floors;
    let grads = model.params.collect_grads(&g, &vars);
    BatchGradients {
        loss_circle: lc,
        loss_triplet: lt,
        loss_total,
        grads,
    }
}

/// One logged optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss_circle: f64,
    pub loss_triplet: f64,
    pub loss_total: f64,
}

/// Model, optimizer state and step counter.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    pub schedule: LrSchedule,
    pub adam: Adam,
    pub step: u64,
    pub diagnostics: Diagnostics,
}

impl Trainer {
    /// Fresh model from `cfg.seed`, scheduled over `total_steps`.
    pub fn new(cfg: TrainConfig, total_steps: u64) -> Result<Trainer> {
        cfg.validate()?;
        let model = Model::new(cfg.model.clone(), cfg.seed)?;
        Ok(Trainer::resume(model, cfg, total_steps, 0))
    }

    pub fn resume(model: Model, cfg: TrainConfig, total_steps: u64, step: u64) -> Trainer {
        let schedule = cfg.schedule(total_steps);
        Trainer {
            model,
            cfg,
            schedule,
            adam: Adam::default(),
            step,
            diagnostics: Diagnostics::default(),
        }
    }

    /// Mined triplets of an epoch in the order they are consumed.
    pub fn epoch_triplets(
        &mut self,
        manifest: &DatasetManifest,
        split: Split,
        epoch: usize,
    ) -> Result<Vec<TripletSpec>> {
        let seed = self.cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut t = mine_triplets(
            manifest,
            split,
            &self.cfg.mining,
            seed,
            &mut self.diagnostics,
        )?;
        SeededRng::derived(seed, 0x7368_7566).shuffle(&mut t);
        Ok(t)
    }

    /// Computes the batch loss, and when it is finite applies one Adam
    /// update at `lr_at(step)`. A non-finite loss leaves the model
    /// untouched and returns [`Error::NonFinite`]. Parameters are kept
    /// `f32`-representable.
    pub fn step(&mut self, batch: &[TripletPlans<'_>]) -> Result<StepRecord> {
        let lr = self.schedule.lr_at(self.step, &mut self.diagnostics);
        let b = batch_gradients(&self.model, batch, &self.cfg, &mut self.diagnostics);
        if !b.loss_total.is_finite() {
            return Err(Error::NonFinite(alloc::format!(
                "loss {} at step {}",
                b.loss_total,
                self.step
            )));
        }
        self.adam
            .step(&mut self.model.params, &b.grads, lr, &mut self.diagnostics);
        self.model.params.round_to_f32();
        let rec = StepRecord {
            step: self.step,
            lr,
            loss_circle: b.loss_circle,
            loss_triplet: b.loss_triplet,
            loss_total: b.loss_total,
        };
        self.step += 1;
        Ok(rec)
    }
}

/// Number of triplet batches per epoch for `triplets` mined triplets.
pub fn steps_per_epoch(triplets: usize, batch_size: usize) -> usize {
    triplets.div_ceil(batch_size.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{CoordFrame, FrameRecord, SceneRecord};
    use alloc::vec;

    fn manifest(frames: &[(&str, &str, [f64; 3])]) -> DatasetManifest {
        let mut scenes: Vec<SceneRecord> = Vec::new();
        for (id, scene, pose) in frames {
            let rec = FrameRecord {
                frame_id: (*id).into(),
                path: alloc::format!("{id}.pcf"),
                pose_translation: *pose,
                split: Split::Train,
            };
            match scenes.iter_mut().find(|s| s.scene_id == *scene) {
                Some(s) => s.frames.push(rec),
                None => scenes.push(SceneRecord {
                    scene_id: (*scene).into(),
                    frames: vec![rec],
                }),
            }
        }
        DatasetManifest {
            coordinates: CoordFrame::World,
            scenes,
        }
    }

    #[test]
    fn thresholds_force_the_triplet() {
        let m = manifest(&[
            ("a", "s", [0.0; 3]),
            ("b", "s", [1.0, 0.0, 0.0]),
            ("c", "s", [10.0, 0.0, 0.0]),
        ]);
        let cfg = MiningConfig {
            negatives: 1,
            ..Default::default()
        };
        let mut d = Diagnostics::default();
        let t = mine_triplets(&m, Split::Train, &cfg, 3, &mut d).unwrap();
        let a: Vec<_> = t.iter().filter(|t| t.query_id == "a").collect();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].positive_id, "b");
        assert_eq!(a[0].negative_ids, vec![String::from("c")]);
        // c has no positive
        assert_eq!(d.queries_without_positive, 1);
    }

    #[test]
    fn isolated_frames_yield_nothing() {
        let m = manifest(&[
            ("a", "s", [0.0; 3]),
            ("b", "s", [5.0, 0.0, 0.0]),
            ("c", "s", [10.0, 0.0, 0.0]),
        ]);
        let mut d = Diagnostics::default();
        let t = mine_triplets(&m, Split::Train, &MiningConfig::default(), 3, &mut d).unwrap();
        assert!(t.is_empty());
        assert_eq!(d.queries_without_positive, 3);
    }

    #[test]
    fn empty_split_is_rejected() {
        let m = manifest(&[("a", "s", [0.0; 3])]);
        let mut d = Diagnostics::default();
        assert!(mine_triplets(&m, Split::Test, &MiningConfig::default(), 3, &mut d).is_err());
    }

    #[test]
    fn schedule_spans_every_step() {
        let cfg = TrainConfig::default();
        let s = cfg.schedule(100);
        let mut d = Diagnostics::default();
        assert_eq!(s.lr_at(0, &mut d), 1e-4);
        assert_eq!(s.lr_at(99, &mut d), 1e-7);
        assert_eq!(d.lr_step_clamped, 0);
    }
}
