use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dsp::sliding_window_starts;
use crate::signalio::{Cue, Dataset, Group};

/// Downstream classification problems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskId {
    /// Healthy controls (0) against patients before treatment (1).
    #[serde(rename = "hc-vs-mbt")]
    HcVsMbt,
    /// Low / medium / high craving on patients' drug-cue epochs.
    #[serde(rename = "craving")]
    Craving,
    /// Before (0) against after (1) treatment, on windowed patient epochs.
    #[serde(rename = "mbt-vs-mat")]
    MbtVsMat,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [Self::HcVsMbt, Self::Craving, Self::MbtVsMat];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::HcVsMbt => "hc-vs-mbt",
            Self::Craving => "craving",
            Self::MbtVsMat => "mbt-vs-mat",
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            Self::Craving => 3,
            _ => 2,
        }
    }

    /// Class whose recall is reported as sensitivity.
    pub fn positive_class(self) -> usize {
        match self {
            Self::Craving => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| HarnessError::Lookup {
                kind: "task",
                name: s.to_string(),
            })
    }
}

/// Windowing and subject selection for task construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskOptions {
    /// Window length for the treatment task; 0 keeps whole epochs.
    pub window_seconds: f64,
    pub window_overlap: f64,
    /// Restrict to one subject (patient-specific models).
    pub subject: Option<u32>,
}

impl Default for TaskOptions {
    fn default() -> Self {
        Self {
            window_seconds: 4.0,
            window_overlap: 0.5,
            subject: None,
        }
    }
}

/// One labelled input pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSample {
    pub eeg: Array2<f64>,
    pub fnirs: Array2<f64>,
    pub label: usize,
    pub subject_id: u32,
    /// Index of the dataset epoch the sample was cut from; windows of one
    /// epoch share it and are always kept in the same fold.
    pub source: usize,
}

#[derive(Clone, Debug)]
pub struct TaskSet {
    pub task: TaskId,
    pub n_classes: usize,
    pub positive_class: usize,
    pub samples: Vec<TaskSample>,
    pub fs_eeg: f64,
    pub fs_fnirs: f64,
}

impl TaskSet {
    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn classes_present(&self, indices: &[usize]) -> BTreeSet<usize> {
        indices.iter().map(|&i| self.samples[i].label).collect()
    }
}

fn label_of(task: TaskId, group: Group, cue: Cue, craving: Option<usize>) -> Option<usize> {
    match task {
        TaskId::HcVsMbt => match group {
            Group::Hc => Some(0),
            Group::Mbt => Some(1),
            Group::Mat => None,
        },
        TaskId::Craving => (group == Group::Mbt && cue == Cue::Meth).then_some(craving).flatten(),
        TaskId::MbtVsMat => match group {
            Group::Mbt => Some(0),
            Group::Mat => Some(1),
            Group::Hc => None,
        },
    }
}

/// Selects and labels the epochs of `task`, cutting treatment-task epochs
/// into aligned EEG/fNIRS windows when configured.
pub fn build_task(ds: &Dataset, task: TaskId, opts: &TaskOptions) -> Result<TaskSet, HarnessError> {
    let window = match (task, opts.window_seconds) {
        (TaskId::MbtVsMat, w) if w > 0.0 => {
            let we = (w * ds.fs_eeg).round() as usize;
            let wf = (w * ds.fs_fnirs).round() as usize;
            if we == 0 || wf == 0 || we > ds.eeg_samples() || wf > ds.fnirs_samples() {
                return Err(HarnessError::Config(format!(
                    "window of {w} s does not fit {} s epochs",
                    ds.epoch_seconds
                )));
            }
            let starts = sliding_window_starts(ds.eeg_samples(), we, opts.window_overlap)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            // fNIRS windows start at the same instants
            let ratio = ds.fs_fnirs / ds.fs_eeg;
            let pairs: Vec<(usize, usize)> = starts
                .into_iter()
                .map(|s| (s, ((s as f64) * ratio).round() as usize))
                .filter(|&(_, sf)| sf + wf <= ds.fnirs_samples())
                .collect();
            Some((we, wf, pairs))
        }
        _ => None,
    };
    let mut samples = Vec::new();
    for (i, e) in ds.epochs.iter().enumerate() {
        if opts.subject.is_some_and(|s| s != e.subject_id) {
            continue;
        }
        let Some(label) = label_of(task, e.group, e.cue, e.craving_level.map(|c| c.index())) else {
            continue;
        };
        match &window {
            None => samples.push(TaskSample {
                eeg: e.eeg.clone(),
                fnirs: e.fnirs.clone(),
                label,
                subject_id: e.subject_id,
                source: i,
            }),
            Some((we, wf, pairs)) => {
                for &(se, sf) in pairs {
                    samples.push(TaskSample {
                        eeg: e.eeg.slice(s![.., se..se + we]).to_owned(),
                        fnirs: e.fnirs.slice(s![.., sf..sf + wf]).to_owned(),
                        label,
                        subject_id: e.subject_id,
                        source: i,
                    });
                }
            }
        }
    }
    let set = TaskSet {
        task,
        n_classes: task.n_classes(),
        positive_class: task.positive_class(),
        samples,
        fs_eeg: ds.fs_eeg,
        fs_fnirs: ds.fs_fnirs,
    };
    let all: Vec<usize> = (0..set.samples.len()).collect();
    let present = set.classes_present(&all);
    if present.len() < 2 {
        return Err(HarnessError::Data(format!(
            "task `{task}` needs at least two classes, found {present:?}"
        )));
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signalio::{generate_synthetic_dataset, SynthConfig};

    fn small() -> Dataset {
        generate_synthetic_dataset(&SynthConfig {
            n_subjects_per_group: 2,
            epochs_per_subject: 6,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn task_names_round_trip() {
        for t in TaskId::ALL {
            assert_eq!(t.as_str().parse::<TaskId>().unwrap(), t);
        }
        assert!(matches!("valence".parse::<TaskId>(), Err(HarnessError::Lookup { .. })));
    }

    #[test]
    fn hc_vs_mbt_drops_post_treatment() {
        let ds = small();
        let set = build_task(&ds, TaskId::HcVsMbt, &TaskOptions::default()).unwrap();
        assert_eq!(set.samples.len(), 24);
        let labels = set.labels();
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 12);
    }

    #[test]
    fn craving_uses_patient_cue_epochs() {
        // enough cue epochs per patient to cycle through every craving level
        let ds = generate_synthetic_dataset(&SynthConfig {
            n_subjects_per_group: 2,
            epochs_per_subject: 30,
            ..SynthConfig::default()
        })
        .unwrap();
        let set = build_task(&ds, TaskId::Craving, &TaskOptions::default()).unwrap();
        assert!(set.samples.iter().all(|s| ds.epochs[s.source].cue == Cue::Meth));
        assert!(set.samples.iter().all(|s| ds.epochs[s.source].group == Group::Mbt));
        assert_eq!(set.n_classes, 3);
    }

    #[test]
    fn windows_are_aligned_in_time() {
        let ds = small();
        let opts = TaskOptions {
            window_seconds: 4.0,
            window_overlap: 0.5,
            subject: Some(2),
        };
        let set = build_task(&ds, TaskId::MbtVsMat, &opts).unwrap();
        // 7 s epochs, 4 s windows, 2 s stride: starts 0 s and 2 s
        assert_eq!(set.samples.len(), 2 * 12);
        let first = &set.samples[1];
        let src = &ds.epochs[first.source];
        assert_eq!(first.eeg.dim(), (4, 160));
        assert_eq!(first.fnirs.dim(), (7, 40));
        assert_eq!(first.eeg[[0, 0]], src.eeg[[0, 80]]);
        assert_eq!(first.fnirs[[0, 0]], src.fnirs[[0, 20]]);
        assert!(set.samples.iter().all(|s| s.subject_id == 2));
    }

    #[test]
    fn single_class_selection_is_a_data_error() {
        let ds = small();
        let opts = TaskOptions {
            subject: Some(0),
            ..TaskOptions::default()
        };
        assert!(matches!(
            build_task(&ds, TaskId::HcVsMbt, &opts),
            Err(HarnessError::Data(_))
        ));
    }
}
