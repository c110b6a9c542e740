use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CravingLevel, Cue, Dataset, Group, MultimodalEpoch, Provenance, SignalIoError, SubjectRecord};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_EEG: &str = "eeg.f32le";
pub const BLOB_FNIRS: &str = "fnirs.f32le";
pub const CHECKSUM_FILE: &str = "checksums.txt";

const FORMAT_TAG: &str = "neuroclip-dataset-v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    n_epochs: usize,
    fs_eeg: f64,
    fs_fnirs: f64,
    epoch_seconds: f64,
    eeg_samples: usize,
    fnirs_samples: usize,
    eeg_channel_names: Vec<String>,
    roi_names: Vec<String>,
    provenance: Provenance,
    seed: Option<u64>,
    subjects: Vec<SubjectRecord>,
    epochs: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpochRecord {
    subject_id: u32,
    group: Group,
    cue: Cue,
    craving_level: Option<CravingLevel>,
    epoch_index: u32,
    image_id: Option<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn pack<'a>(arrays: impl Iterator<Item = &'a Array2<f64>>) -> Vec<u8> {
    let mut out = Vec::new();
    for a in arrays {
        // iter() walks in logical row-major order regardless of layout
        for &v in a.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Writes the manifest, both sample blobs and their checksums into `dir`,
/// creating it if needed. Samples are stored as 32-bit floats.
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<(), SignalIoError> {
    ds.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format: FORMAT_TAG.to_string(),
        n_epochs: ds.epochs.len(),
        fs_eeg: ds.fs_eeg,
        fs_fnirs: ds.fs_fnirs,
        epoch_seconds: ds.epoch_seconds,
        eeg_samples: ds.eeg_samples(),
        fnirs_samples: ds.fnirs_samples(),
        eeg_channel_names: ds.eeg_channel_names.clone(),
        roi_names: ds.roi_names.clone(),
        provenance: ds.provenance,
        seed: ds.seed,
        subjects: ds.subjects.clone(),
        epochs: ds
            .epochs
            .iter()
            .map(|e| EpochRecord {
                subject_id: e.subject_id,
                group: e.group,
                cue: e.cue,
                craving_level: e.craving_level,
                epoch_index: e.epoch_index,
                image_id: e.image_id.clone(),
            })
            .collect(),
    };
    let eeg = pack(ds.epochs.iter().map(|e| &e.eeg));
    let fnirs = pack(ds.epochs.iter().map(|e| &e.fnirs));
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| SignalIoError::Invalid(format!("manifest serialisation failed: {e}")))?;
    fs::write(dir.join(MANIFEST_FILE), json)?;
    fs::write(dir.join(BLOB_EEG), &eeg)?;
    fs::write(dir.join(BLOB_FNIRS), &fnirs)?;
    fs::write(
        dir.join(CHECKSUM_FILE),
        format!(
            "{}  {BLOB_EEG}\n{}  {BLOB_FNIRS}\n",
            sha256_hex(&eeg),
            sha256_hex(&fnirs)
        ),
    )?;
    Ok(())
}

fn parse_checksums(text: &str) -> Result<Vec<(String, String)>, SignalIoError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(digest), Some(name), None) => {
                    Ok((name.trim_start_matches('*').to_string(), digest.to_lowercase()))
                }
                _ => Err(SignalIoError::Corrupt(format!("malformed checksum line `{line}`"))),
            }
        })
        .collect()
}

fn unpack(
    bytes: &[u8],
    n_epochs: usize,
    rows: usize,
    cols: usize,
    what: &str,
) -> Result<Vec<Array2<f64>>, SignalIoError> {
    let expected = n_epochs * rows * cols * 4;
    if bytes.len() != expected {
        return Err(SignalIoError::Corrupt(format!(
            "{what} blob holds {} bytes, manifest implies {expected} ({n_epochs} epochs × {rows} channels × {cols} samples)",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let per = rows * cols;
    let mut out = Vec::with_capacity(n_epochs);
    for i in 0..n_epochs {
        let a = Array2::from_shape_vec((rows, cols), values[i * per..(i + 1) * per].to_vec())
            .expect("length checked above");
        if a.iter().any(|v| !v.is_finite()) {
            return Err(SignalIoError::Corrupt(format!(
                "{what} epoch {i} holds non-finite samples"
            )));
        }
        out.push(a);
    }
    Ok(out)
}

/// Reads a dataset directory written by [`write_dataset`], verifying the
/// checksums and every shape recorded in the manifest.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset, SignalIoError> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| SignalIoError::Corrupt(format!("unreadable manifest: {e}")))?;
    if m.format != FORMAT_TAG {
        return Err(SignalIoError::Corrupt(format!("unknown format tag `{}`", m.format)));
    }
    if m.epochs.len() != m.n_epochs {
        return Err(SignalIoError::Corrupt(format!(
            "manifest lists {} epoch records but n_epochs = {}",
            m.epochs.len(),
            m.n_epochs
        )));
    }
    let eeg = fs::read(dir.join(BLOB_EEG))?;
    let fnirs = fs::read(dir.join(BLOB_FNIRS))?;
    let sums = parse_checksums(&fs::read_to_string(dir.join(CHECKSUM_FILE))?)?;
    for (name, bytes) in [(BLOB_EEG, &eeg), (BLOB_FNIRS, &fnirs)] {
        let recorded = sums
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| SignalIoError::Corrupt(format!("no checksum recorded for {name}")))?;
        if recorded.1 != sha256_hex(bytes) {
            return Err(SignalIoError::Corrupt(format!("checksum mismatch for {name}")));
        }
    }
    let eeg = unpack(&eeg, m.n_epochs, m.eeg_channel_names.len(), m.eeg_samples, "EEG")?;
    let fnirs = unpack(&fnirs, m.n_epochs, m.roi_names.len(), m.fnirs_samples, "fNIRS")?;
    let epochs = m
        .epochs
        .into_iter()
        .zip(eeg.into_iter().zip(fnirs))
        .map(|(r, (eeg, fnirs))| MultimodalEpoch {
            eeg,
            fnirs,
            subject_id: r.subject_id,
            group: r.group,
            cue: r.cue,
            craving_level: r.craving_level,
            epoch_index: r.epoch_index,
            image_id: r.image_id,
        })
        .collect();
    let ds = Dataset {
        epochs,
        fs_eeg: m.fs_eeg,
        fs_fnirs: m.fs_fnirs,
        epoch_seconds: m.epoch_seconds,
        eeg_channel_names: m.eeg_channel_names,
        roi_names: m.roi_names,
        provenance: m.provenance,
        seed: m.seed,
        subjects: m.subjects,
    };
    if ds.eeg_samples() != m.eeg_samples || ds.fnirs_samples() != m.fnirs_samples {
        return Err(SignalIoError::Corrupt(
            "sample counts disagree with epoch length and rates".to_string(),
        ));
    }
    ds.validate().map_err(|e| SignalIoError::Corrupt(e.to_string()))?;
    Ok(ds)
}
