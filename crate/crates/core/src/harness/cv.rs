use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricsReport};
use super::tasks::TaskSet;
use super::train::{align_pairs, fit_task, fit_unimodal, predict, unimodal_head, AlignData, ModelKind, TrainConfig};
use super::HarnessError;
use crate::model::{ModelConfig, ModelParams};
use crate::signalio::{Dataset, Group};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FoldScheme {
    /// Shuffled, label-stratified k folds.
    KFold { k: usize },
    /// One fold per subject.
    Loso,
}

/// Fold of every task sample. Samples sharing a source epoch always share
/// a fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub scheme: FoldScheme,
    pub seed: u64,
    pub n_folds: usize,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn kfold(set: &TaskSet, k: usize, seed: u64) -> Result<Self, HarnessError> {
        // one label per source epoch
        let mut units: BTreeMap<usize, usize> = BTreeMap::new();
        for s in &set.samples {
            units.insert(s.source, s.label);
        }
        if k < 2 || k > units.len() {
            return Err(HarnessError::Plan(format!(
                "{k} folds requested for {} independent epochs",
                units.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fold_of: BTreeMap<usize, usize> = BTreeMap::new();
        let mut next = 0;
        for class in 0..set.n_classes {
            let mut members: Vec<usize> = units.iter().filter(|(_, &l)| l == class).map(|(&u, _)| u).collect();
            members.shuffle(&mut rng);
            // dealing continues across classes so fold sizes stay within one
            for u in members {
                fold_of.insert(u, next % k);
                next += 1;
            }
        }
        Ok(Self {
            scheme: FoldScheme::KFold { k },
            seed,
            n_folds: k,
            assignments: set.samples.iter().map(|s| fold_of[&s.source]).collect(),
        })
    }

    /// Folds in ascending subject order.
    pub fn loso(set: &TaskSet) -> Result<Self, HarnessError> {
        let subjects: BTreeSet<u32> = set.samples.iter().map(|s| s.subject_id).collect();
        if subjects.len() < 2 {
            return Err(HarnessError::Plan(
                "leave-one-subject-out needs two or more subjects".into(),
            ));
        }
        let index: BTreeMap<u32, usize> = subjects.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        Ok(Self {
            scheme: FoldScheme::Loso,
            seed: 0,
            n_folds: subjects.len(),
            assignments: set.samples.iter().map(|s| index[&s.subject_id]).collect(),
        })
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    /// Hard checks that the plan partitions `set` without leakage: every
    /// fold is non-empty, no source epoch spans folds, and under
    /// leave-one-subject-out each test fold is exactly one subject that
    /// appears in no training fold.
    pub fn check(&self, set: &TaskSet) -> Result<(), HarnessError> {
        if self.assignments.len() != set.samples.len() {
            return Err(HarnessError::Plan(format!(
                "plan covers {} samples, task has {}",
                self.assignments.len(),
                set.samples.len()
            )));
        }
        if let Some(&f) = self.assignments.iter().find(|&&f| f >= self.n_folds) {
            return Err(HarnessError::Plan(format!("fold {f} outside 0..{}", self.n_folds)));
        }
        let mut source_fold: BTreeMap<usize, usize> = BTreeMap::new();
        for (s, &f) in set.samples.iter().zip(&self.assignments) {
            if *source_fold.entry(s.source).or_insert(f) != f {
                return Err(HarnessError::Plan(format!(
                    "windows of epoch {} fall in more than one fold",
                    s.source
                )));
            }
        }
        for fold in 0..self.n_folds {
            let test = self.test_indices(fold);
            if test.is_empty() {
                return Err(HarnessError::Plan(format!("fold {fold} has no test samples")));
            }
            if self.scheme == FoldScheme::Loso {
                let test_subjects: BTreeSet<u32> = test.iter().map(|&i| set.samples[i].subject_id).collect();
                let train_subjects: BTreeSet<u32> = self
                    .train_indices(fold)
                    .iter()
                    .map(|&i| set.samples[i].subject_id)
                    .collect();
                if test_subjects.len() != 1 {
                    return Err(HarnessError::Plan(format!(
                        "fold {fold} tests subjects {test_subjects:?}; expected exactly one"
                    )));
                }
                if let Some(s) = test_subjects.intersection(&train_subjects).next() {
                    return Err(HarnessError::Plan(format!(
                        "subject {s} leaks between the training and test sets of fold {fold}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossvalConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub kind: ModelKind,
    /// Folds trained concurrently; results are identical for any value.
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub task: String,
    pub kind: ModelKind,
    pub scheme: FoldScheme,
    pub test_sizes: Vec<usize>,
    pub metrics: MetricsReport,
}

struct FoldResult {
    preds: Vec<usize>,
    labels: Vec<usize>,
}

fn run_fold(
    ds: &Dataset,
    set: &TaskSet,
    plan: &FoldPlan,
    fold: usize,
    cfg: &CrossvalConfig,
) -> Result<FoldResult, HarnessError> {
    let train = plan.train_indices(fold);
    let test = plan.test_indices(fold);
    let fold_cfg = TrainConfig {
        seed: cfg.train.seed.wrapping_add(fold as u64),
        ..cfg.train.clone()
    };
    let (params, head) = match cfg.kind {
        ModelKind::Fused => {
            // the contrastive stage never sees test epochs, nor (under
            // leave-one-subject-out) any epoch of a test subject
            let test_sources: BTreeSet<usize> = test.iter().map(|&i| set.samples[i].source).collect();
            let test_subjects: BTreeSet<u32> = test.iter().map(|&i| set.samples[i].subject_id).collect();
            let pairs: Vec<_> = ds
                .epochs
                .iter()
                .enumerate()
                .filter(|(i, e)| {
                    !test_sources.contains(i)
                        && !(plan.scheme == FoldScheme::Loso && test_subjects.contains(&e.subject_id))
                        && (fold_cfg.align_data == AlignData::All || e.group == Group::Hc)
                })
                .map(|(_, e)| (&e.eeg, &e.fnirs))
                .collect();
            let base = ModelParams::init(cfg.model.clone(), fold_cfg.seed)?;
            let aligned = align_pairs(base, &pairs, &fold_cfg)?;
            let tuned = fit_task(set, &train, &aligned.params, &fold_cfg)?;
            (tuned.params, set.task.as_str().to_string())
        }
        kind => {
            let out = fit_unimodal(set, &train, &cfg.model, kind, &fold_cfg)?;
            (out.params, unimodal_head(set.task, kind))
        }
    };
    Ok(FoldResult {
        preds: predict(&params, &head, set, &test)?,
        labels: test.iter().map(|&i| set.samples[i].label).collect(),
    })
}

/// Trains a fresh model per fold and evaluates it on the held-out fold.
/// Fold metrics are averaged with equal weight (per subject under
/// leave-one-subject-out).
pub fn crossval(
    ds: &Dataset,
    set: &TaskSet,
    plan: &FoldPlan,
    cfg: &CrossvalConfig,
) -> Result<CrossvalReport, HarnessError> {
    plan.check(set)?;
    cfg.train.validate()?;
    let workers = cfg.workers.clamp(1, plan.n_folds);
    let mut results: Vec<Option<Result<FoldResult, HarnessError>>> = (0..plan.n_folds).map(|_| None).collect();
    std::thread::scope(|scope| {
        for chunk in results.chunks_mut(plan.n_folds.div_ceil(workers)).enumerate() {
            let (c, slots) = chunk;
            let start = c * plan.n_folds.div_ceil(workers);
            scope.spawn(move || {
                for (j, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(run_fold(ds, set, plan, start + j, cfg));
                }
            });
        }
    });
    let mut folds = Vec::with_capacity(plan.n_folds);
    let mut sizes = Vec::with_capacity(plan.n_folds);
    for r in results {
        let r = r.expect("every fold ran")?;
        sizes.push(r.labels.len());
        folds.push(compute_metrics(&r.preds, &r.labels, set.n_classes, set.positive_class)?);
    }
    Ok(CrossvalReport {
        task: set.task.as_str().to_string(),
        kind: cfg.kind,
        scheme: plan.scheme,
        test_sizes: sizes,
        metrics: MetricsReport::from_folds(folds)?,
    })
}
