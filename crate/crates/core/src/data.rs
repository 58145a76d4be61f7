//! 4D cine volumes, 2D slice extraction, and deterministic splits/subsets.
//!
//! On disk a subject is one NIfTI image (x, y, z, t), labels either as a
//! single 4D file (unlabeled frames zero-filled) or one 3D file per labeled
//! frame, and a JSON sidecar carrying what NIfTI does not: vendor, labeled
//! frame indices and their cardiac phases.

use crate::error::{Error, Result};
use crate::nifti;
use crate::rng;
use ndarray::{Array2, Array3, Array4};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const N_CLASSES: usize = 4; // background, LV, MYO, RV

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Vendor {
    A,
    B,
    C,
    D,
}

impl Vendor {
    pub const ALL: [Vendor; 4] = [Vendor::A, Vendor::B, Vendor::C, Vendor::D];

    /// The two scanner-vendor groups used by the generalization experiments.
    pub fn group_ab(self) -> bool {
        matches!(self, Vendor::A | Vendor::B)
    }
}

impl std::fmt::Display for Vendor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Vendor::A => "A",
            Vendor::B => "B",
            Vendor::C => "C",
            Vendor::D => "D",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "ED")]
    Ed,
    #[serde(rename = "ES")]
    Es,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Ed => "ED",
            Phase::Es => "ES",
        })
    }
}

/// One subject's 4D cine image plus labels for the ED/ES frames.
#[derive(Debug, Clone)]
pub struct CineVolume {
    pub subject_id: String,
    /// (slice, time, row, col); arbitrary intensity units.
    pub image: Array4<f32>,
    /// Sorted labeled time indices (the ED and ES frames).
    pub labeled_frames: Vec<usize>,
    /// Labeled time index -> (slice, row, col) labels in {0,1,2,3}.
    pub masks: BTreeMap<usize, Array3<u8>>,
    pub phase_of: BTreeMap<usize, Phase>,
    pub vendor: Vendor,
    /// (row_mm, col_mm, slice_mm)
    pub pixel_spacing: (f32, f32, f32),
}

impl CineVolume {
    pub fn n_slices(&self) -> usize {
        self.image.dim().0
    }

    pub fn n_frames(&self) -> usize {
        self.image.dim().1
    }

    pub fn frame_of(&self, phase: Phase) -> Option<usize> {
        self.phase_of
            .iter()
            .find(|(_, &p)| p == phase)
            .map(|(&t, _)| t)
    }

    pub fn validate(&self) -> Result<()> {
        let (s, t, r, c) = self.image.dim();
        if self.labeled_frames.len() != 2 {
            return Err(Error::Validation(format!(
                "{}: expected exactly 2 labeled frames (ED and ES), got {}",
                self.subject_id,
                self.labeled_frames.len()
            )));
        }
        let phases: Vec<Phase> = self.phase_of.values().copied().collect();
        if !(phases.contains(&Phase::Ed) && phases.contains(&Phase::Es)) {
            return Err(Error::Validation(format!(
                "{}: labeled frames must cover one ED and one ES phase",
                self.subject_id
            )));
        }
        for &frame in &self.labeled_frames {
            if frame >= t {
                return Err(Error::Validation(format!(
                    "{}: labeled frame {frame} outside time range 0..{t}",
                    self.subject_id
                )));
            }
            let mask = self.masks.get(&frame).ok_or_else(|| {
                Error::Validation(format!(
                    "{}: labeled frame {frame} has no mask",
                    self.subject_id
                ))
            })?;
            let (ms, mr, mc) = mask.dim();
            for (axis, got, want) in [("slice", ms, s), ("row", mr, r), ("col", mc, c)] {
                if got != want {
                    return Err(Error::Validation(format!(
                        "{}: mask shape mismatch on {axis} axis (mask {got}, image {want})",
                        self.subject_id
                    )));
                }
            }
            if mask.iter().any(|&v| v as usize >= N_CLASSES) {
                return Err(Error::Validation(format!(
                    "{}: label value out of range in frame {frame}",
                    self.subject_id
                )));
            }
        }
        Ok(())
    }
}

/// A 2D slice cut from a volume, with its relative through-plane position.
#[derive(Debug, Clone)]
pub struct SliceSample {
    pub subject_id: String,
    pub slice_index: usize,
    pub time_index: usize,
    pub image2d: Array2<f32>,
    pub relative_position: f32,
    pub mask2d: Option<Array2<u8>>,
    pub vendor: Vendor,
    pub phase: Option<Phase>,
}

/// slice_index / (S-1); a single-slice stack maps to 0.5.
pub fn relative_position(slice_index: usize, n_slices: usize) -> f32 {
    if n_slices <= 1 {
        0.5
    } else {
        slice_index as f32 / (n_slices - 1) as f32
    }
}

/// Cuts a volume into 2D samples: every (slice, frame) pair when
/// `labeled_only` is false, only labeled frames (with masks) when true.
pub fn extract_slices(volume: &CineVolume, labeled_only: bool) -> Vec<SliceSample> {
    let (s, t, _, _) = volume.image.dim();
    let frames: Vec<usize> = if labeled_only {
        volume.labeled_frames.clone()
    } else {
        (0..t).collect()
    };
    let mut out = Vec::with_capacity(s * frames.len());
    for si in 0..s {
        for &ti in &frames {
            let image2d = volume
                .image
                .index_axis(ndarray::Axis(0), si)
                .index_axis(ndarray::Axis(0), ti)
                .to_owned();
            let mask2d = volume
                .masks
                .get(&ti)
                .map(|m| m.index_axis(ndarray::Axis(0), si).to_owned());
            out.push(SliceSample {
                subject_id: volume.subject_id.clone(),
                slice_index: si,
                time_index: ti,
                image2d,
                relative_position: relative_position(si, s),
                mask2d,
                vendor: volume.vendor,
                phase: volume.phase_of.get(&ti).copied(),
            });
        }
    }
    out
}

/// Subject-level split, serialized as `{train, val, test, seed}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl SplitManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Validation(format!("manifest serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: invalid manifest: {e}", path.display())))
    }
}

/// Deterministic train/val/test split with the test portion stratified by
/// vendor (proportional allocation, largest-remainder rounding) and the
/// remainder divided train/val at the requested ratio.
pub fn make_split(
    subject_ids: &[String],
    strata: &BTreeMap<String, Vendor>,
    sizes: (usize, usize, usize),
    seed: u64,
) -> Result<SplitManifest> {
    let (n_train, n_val, n_test) = sizes;
    let n = subject_ids.len();
    if n_train + n_val + n_test != n {
        return Err(Error::Validation(format!(
            "split sizes {n_train}+{n_val}+{n_test} do not sum to cohort size {n}"
        )));
    }
    for id in subject_ids {
        if !strata.contains_key(id) {
            return Err(Error::Validation(format!("subject {id} has no vendor tag")));
        }
    }

    let mut sorted: Vec<String> = subject_ids.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != n {
        return Err(Error::Validation("duplicate subject ids".into()));
    }

    let mut by_vendor: BTreeMap<Vendor, Vec<String>> = BTreeMap::new();
    for id in &sorted {
        by_vendor.entry(strata[id]).or_default().push(id.clone());
    }

    // proportional test quotas with largest-remainder rounding
    let vendors: Vec<Vendor> = by_vendor.keys().copied().collect();
    let mut quotas: Vec<usize> = Vec::new();
    let mut remainders: Vec<(f64, usize)> = Vec::new();
    for (vi, v) in vendors.iter().enumerate() {
        let nv = by_vendor[v].len();
        let exact = n_test as f64 * nv as f64 / n as f64;
        quotas.push(exact.floor() as usize);
        remainders.push((exact - exact.floor(), vi));
    }
    let mut assigned: usize = quotas.iter().sum();
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut ri = 0;
    while assigned < n_test {
        let (_, vi) = remainders[ri % remainders.len()];
        if quotas[vi] < by_vendor[&vendors[vi]].len() {
            quotas[vi] += 1;
            assigned += 1;
        }
        ri += 1;
    }

    let mut test = Vec::with_capacity(n_test);
    let mut pool = Vec::with_capacity(n - n_test);
    for (vi, v) in vendors.iter().enumerate() {
        let mut ids = by_vendor[v].clone();
        let mut r = rng::stream(seed, &[1, vi as u64]);
        ids.shuffle(&mut r);
        test.extend(ids.drain(..quotas[vi]));
        pool.extend(ids);
    }

    pool.sort();
    let mut r = rng::stream(seed, &[2]);
    pool.shuffle(&mut r);
    let train: Vec<String> = pool.drain(..n_train).collect();
    let val: Vec<String> = pool;

    test.sort();
    Ok(SplitManifest {
        train,
        val,
        test,
        seed,
    })
}

/// Uniform sample of `n` training subjects without replacement,
/// deterministic per seed, returned in the pool's order.
pub fn sample_subset(train_subjects: &[String], n: usize, seed: u64) -> Result<Vec<String>> {
    if n > train_subjects.len() {
        return Err(Error::Validation(format!(
            "subset size {n} exceeds training pool of {}",
            train_subjects.len()
        )));
    }
    let mut r = rng::stream(seed, &[3]);
    let mut picked = rand::seq::index::sample(&mut r, train_subjects.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| train_subjects[i].clone())
        .collect())
}

// ---------------------------------------------------------------------------
// on-disk layout
// ---------------------------------------------------------------------------

/// JSON sidecar describing one subject's files and metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectSidecar {
    pub subject_id: String,
    pub vendor: Vendor,
    pub labeled_frames: Vec<usize>,
    /// Frame index (as string key) -> phase tag.
    pub phases: BTreeMap<String, Phase>,
    /// (row_mm, col_mm, slice_mm)
    pub pixel_spacing_mm: [f32; 3],
    /// Image filename, relative to the sidecar.
    pub image: String,
    pub labels: Option<LabelSource>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelSource {
    /// Single 4D label file with unlabeled frames zero-filled.
    Volume4d(String),
    /// Frame index (as string key) -> 3D label file.
    PerFrame(BTreeMap<String, String>),
}

/// Label file locations resolved to absolute paths.
#[derive(Debug, Clone)]
pub enum LabelPaths {
    Volume4d(PathBuf),
    PerFrame(BTreeMap<usize, PathBuf>),
}

/// Metadata needed to assemble a [`CineVolume`] around a raw image file.
#[derive(Debug, Clone)]
pub struct VolumeMeta {
    pub subject_id: String,
    pub vendor: Vendor,
    pub labeled_frames: Vec<usize>,
    pub phase_of: BTreeMap<usize, Phase>,
}

fn raw_to_image4d(raw: &nifti::RawVolume, path: &Path) -> Result<Array4<f32>> {
    let dims = &raw.dims;
    if dims.len() != 4 {
        return Err(Error::Validation(format!(
            "{}: expected a 4D image, got {}D",
            path.display(),
            dims.len()
        )));
    }
    let (nx, ny, nz, nt) = (dims[0], dims[1], dims[2], dims[3]);
    let mut image = Array4::zeros((nz, nt, ny, nx));
    for t in 0..nt {
        for z in 0..nz {
            for y in 0..ny {
                let base = ((t * nz + z) * ny + y) * nx;
                for x in 0..nx {
                    image[(z, t, y, x)] = raw.data[base + x];
                }
            }
        }
    }
    Ok(image)
}

fn raw_to_mask3d(raw: &nifti::RawVolume, path: &Path) -> Result<Array3<u8>> {
    let dims = &raw.dims;
    if dims.len() != 3 {
        return Err(Error::Validation(format!(
            "{}: expected a 3D label volume, got {}D",
            path.display(),
            dims.len()
        )));
    }
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let mut mask = Array3::zeros((nz, ny, nx));
    for z in 0..nz {
        for y in 0..ny {
            let base = (z * ny + y) * nx;
            for x in 0..nx {
                let v = raw.data[base + x];
                mask[(z, y, x)] = v as u8;
            }
        }
    }
    Ok(mask)
}

/// Loads one subject's image and optional labels into a validated volume.
pub fn load_volume(
    image_path: &Path,
    labels: Option<&LabelPaths>,
    meta: VolumeMeta,
) -> Result<CineVolume> {
    let raw = nifti::read(image_path)?;
    let image = raw_to_image4d(&raw, image_path)?;
    let (_, nt, ny, nx) = image.dim();

    let mut masks: BTreeMap<usize, Array3<u8>> = BTreeMap::new();
    match labels {
        None => {}
        Some(LabelPaths::PerFrame(map)) => {
            for (&frame, path) in map {
                let raw = nifti::read(path)?;
                masks.insert(frame, raw_to_mask3d(&raw, path)?);
            }
        }
        Some(LabelPaths::Volume4d(path)) => {
            let raw = nifti::read(path)?;
            let lab4 = raw_to_image4d(&raw, path)?;
            let (ls, lt, lr, lc) = lab4.dim();
            if (lr, lc) != (ny, nx) || lt != nt {
                return Err(Error::Validation(format!(
                    "{}: 4D label dims ({ls},{lt},{lr},{lc}) incompatible with image",
                    path.display()
                )));
            }
            for &frame in &meta.labeled_frames {
                let m = lab4
                    .index_axis(ndarray::Axis(1), frame)
                    .mapv(|v| v as u8)
                    .to_owned();
                masks.insert(frame, m);
            }
        }
    }

    let mut labeled_frames = meta.labeled_frames;
    labeled_frames.sort_unstable();
    let volume = CineVolume {
        subject_id: meta.subject_id,
        image,
        labeled_frames,
        masks,
        phase_of: meta.phase_of,
        vendor: meta.vendor,
        pixel_spacing: (raw.spacing[1], raw.spacing[0], raw.spacing[2]),
    };
    volume.validate()?;
    Ok(volume)
}

/// Loads a subject from its JSON sidecar.
pub fn load_subject(sidecar_path: &Path) -> Result<CineVolume> {
    let text = std::fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
    let sidecar: SubjectSidecar = serde_json::from_str(&text).map_err(|e| {
        Error::Validation(format!("{}: invalid sidecar: {e}", sidecar_path.display()))
    })?;
    let dir = sidecar_path.parent().unwrap_or(Path::new("."));

    let mut phase_of = BTreeMap::new();
    for (k, v) in &sidecar.phases {
        let frame: usize = k.parse().map_err(|_| {
            Error::Validation(format!("{}: bad frame index {k}", sidecar_path.display()))
        })?;
        phase_of.insert(frame, *v);
    }

    let labels = match &sidecar.labels {
        None => None,
        Some(LabelSource::Volume4d(name)) => Some(LabelPaths::Volume4d(dir.join(name))),
        Some(LabelSource::PerFrame(map)) => {
            let mut paths = BTreeMap::new();
            for (k, name) in map {
                let frame: usize = k.parse().map_err(|_| {
                    Error::Validation(format!("{}: bad frame index {k}", sidecar_path.display()))
                })?;
                paths.insert(frame, dir.join(name));
            }
            Some(LabelPaths::PerFrame(paths))
        }
    };

    load_volume(
        &dir.join(&sidecar.image),
        labels.as_ref(),
        VolumeMeta {
            subject_id: sidecar.subject_id,
            vendor: sidecar.vendor,
            labeled_frames: sidecar.labeled_frames,
            phase_of,
        },
    )
}

/// Loads every `*.json` sidecar under `dir`, sorted by subject id.
pub fn load_dataset(dir: &Path) -> Result<Vec<CineVolume>> {
    let mut sidecars: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    sidecars.sort();
    let mut volumes: Vec<CineVolume> = sidecars
        .iter()
        .map(|p| load_subject(p))
        .collect::<Result<_>>()?;
    volumes.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(volumes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy_volume(s: usize, t: usize, labeled: [usize; 2]) -> CineVolume {
        let image = Array4::from_elem((s, t, 6, 6), 1.0);
        let mut masks = BTreeMap::new();
        let mut phase_of = BTreeMap::new();
        masks.insert(labeled[0], Array3::zeros((s, 6, 6)));
        masks.insert(labeled[1], Array3::zeros((s, 6, 6)));
        phase_of.insert(labeled[0], Phase::Ed);
        phase_of.insert(labeled[1], Phase::Es);
        CineVolume {
            subject_id: "subj".into(),
            image,
            labeled_frames: labeled.to_vec(),
            masks,
            phase_of,
            vendor: Vendor::A,
            pixel_spacing: (1.0, 1.0, 10.0),
        }
    }

    #[test]
    fn slice_counts_match_dims() {
        let v = dummy_volume(4, 8, [0, 4]);
        assert_eq!(extract_slices(&v, false).len(), 32);
        let labeled = extract_slices(&v, true);
        assert_eq!(labeled.len(), 8);
        assert!(labeled.iter().all(|s| s.mask2d.is_some()));
    }

    #[test]
    fn relative_position_endpoints() {
        assert_eq!(relative_position(0, 11), 0.0);
        assert_eq!(relative_position(10, 11), 1.0);
        assert_eq!(relative_position(0, 1), 0.5);
        let v = dummy_volume(5, 2, [0, 1]);
        let slices = extract_slices(&v, true);
        let mut last = -1.0f32;
        for s in slices.iter().filter(|s| s.time_index == 0) {
            assert!(s.relative_position >= last);
            last = s.relative_position;
        }
    }

    #[test]
    fn mask_value_out_of_range_rejected() {
        let mut v = dummy_volume(3, 4, [1, 2]);
        v.masks.get_mut(&1).unwrap()[(0, 0, 0)] = 4;
        let err = v.validate().unwrap_err();
        assert!(err.to_string().contains("label value out of range"));
    }

    #[test]
    fn mask_shape_mismatch_names_axis() {
        let mut v = dummy_volume(5, 4, [1, 2]);
        v.masks.insert(1, Array3::zeros((4, 6, 6)));
        let err = v.validate().unwrap_err();
        assert!(err.to_string().contains("slice axis"), "{err}");
    }

    #[test]
    fn split_is_deterministic_and_stratified() {
        let ids: Vec<String> = (0..8).map(|i| format!("s{i:02}")).collect();
        let mut strata = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            strata.insert(id.clone(), if i < 4 { Vendor::A } else { Vendor::C });
        }
        let a = make_split(&ids, &strata, (3, 1, 4), 0).unwrap();
        let b = make_split(&ids, &strata, (3, 1, 4), 0).unwrap();
        assert_eq!(a, b);
        let per_vendor_a = a.test.iter().filter(|id| strata[*id] == Vendor::A).count();
        assert_eq!(per_vendor_a, 2, "2 test subjects per vendor");

        // disjoint and covering
        let mut all: Vec<&String> = a.train.iter().chain(&a.val).chain(&a.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 8);
    }

    #[test]
    fn split_size_mismatch_rejected() {
        let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let strata: BTreeMap<String, Vendor> =
            ids.iter().map(|i| (i.clone(), Vendor::B)).collect();
        assert!(make_split(&ids, &strata, (5, 2, 2), 1).is_err());
    }

    #[test]
    fn subset_sampling_contract() {
        let pool: Vec<String> = (0..20).map(|i| format!("s{i:02}")).collect();
        let full = sample_subset(&pool, 20, 7).unwrap();
        let mut sorted = full.clone();
        sorted.sort();
        let mut expect = pool.clone();
        expect.sort();
        assert_eq!(sorted, expect);

        let a = sample_subset(&pool, 10, 3).unwrap();
        let b = sample_subset(&pool, 10, 3).unwrap();
        assert_eq!(a, b);
        assert!(sample_subset(&pool, 21, 3).is_err());
    }
}
