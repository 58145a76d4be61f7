//! Synthetic 4D cine phantoms with analytically known LV/MYO/RV masks.
//!
//! Geometry is a concentric LV cavity + myocardial ring with a crescent RV,
//! contracting sinusoidally over the cardiac cycle and tapering toward the
//! apex, so every pipeline stage (slicing, positions, phases, vendors) is
//! exercisable without clinical data. Two synthetic "vendor" intensity
//! regimes (gain, bias field, noise) make the vendor-generalization
//! experiments runnable end to end.

use crate::data::{CineVolume, LabelSource, Phase, SubjectSidecar, Vendor};
use crate::error::{Error, Result};
use crate::nifti;
use crate::parallel;
use crate::rng;
use ndarray::{Array2, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub n_subjects: usize,
    pub slices: usize,
    pub frames: usize,
    pub image_size: (usize, usize),
    /// LV cavity radius as a fraction of the smaller image dimension.
    pub lv_radius_frac: f64,
    /// Myocardial ring thickness, same units.
    pub myo_thickness_frac: f64,
    /// RV disc radius, same units.
    pub rv_radius_frac: f64,
    /// Radius shrink from base (slice 0) to apex, in [0, 1).
    pub apex_taper: f64,
    /// Cavity radius reduction at end systole, in [0, 1).
    pub contraction_amplitude: f64,
    /// Standard deviation of additive intensity noise.
    pub noise_level: f64,
    /// Vendor assignment cycle over subjects.
    pub vendors: Vec<Vendor>,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            n_subjects: 8,
            slices: 4,
            frames: 6,
            image_size: (64, 64),
            lv_radius_frac: 0.13,
            myo_thickness_frac: 0.07,
            rv_radius_frac: 0.12,
            apex_taper: 0.45,
            contraction_amplitude: 0.35,
            noise_level: 0.03,
            vendors: Vendor::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.slices == 0 || self.frames < 2 {
            return Err(Error::Validation(
                "phantom needs >=1 subject, >=1 slice, >=2 frames".into(),
            ));
        }
        if self.lv_radius_frac <= 0.0 || self.myo_thickness_frac <= 0.0 || self.rv_radius_frac <= 0.0
        {
            return Err(Error::Validation("phantom radii must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.apex_taper) || !(0.0..1.0).contains(&self.contraction_amplitude)
        {
            return Err(Error::Validation(
                "apex_taper and contraction_amplitude must lie in [0, 1)".into(),
            ));
        }
        if self.vendors.is_empty() {
            return Err(Error::Validation("vendor cycle must not be empty".into()));
        }
        // structures must fit: RV sits left of the LV ring
        let occupied = self.lv_radius_frac * 1.15 + self.myo_thickness_frac * 1.35
            + 2.0 * self.rv_radius_frac * 1.15;
        if 0.58 + self.lv_radius_frac * 1.15 + self.myo_thickness_frac * 1.35 >= 1.0
            || occupied >= 0.58
        {
            return Err(Error::Validation(
                "phantom geometry does not fit in the field of view".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: PhantomSpec = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("phantom spec serialization: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

struct SubjectGeometry {
    lv_center: (f64, f64),
    rv_center: (f64, f64),
    lv_radius: f64,
    myo_thickness: f64,
    rv_radius: f64,
    gain: f64,
    bias_amp: f64,
    noise: f64,
}

/// Normalized contraction phase: 0 at frame 0 (maximal cavity), 1 at T/2.
fn phase_curve(t: usize, frames: usize) -> f64 {
    0.5 * (1.0 - (2.0 * std::f64::consts::PI * t as f64 / frames as f64).cos())
}

fn subject_geometry(spec: &PhantomSpec, vendor: Vendor, rng: &mut ChaCha8Rng) -> SubjectGeometry {
    let (h, w) = spec.image_size;
    let m = h.min(w) as f64;
    let jitter = |rng: &mut ChaCha8Rng, rel: f64| 1.0 + rng.random_range(-rel..rel);

    let lv_center = (
        h as f64 * (0.50 + rng.random_range(-0.03..0.03)),
        w as f64 * (0.58 + rng.random_range(-0.03..0.03)),
    );
    let lv_radius = m * spec.lv_radius_frac * jitter(rng, 0.12);
    let myo_thickness = m * spec.myo_thickness_frac * jitter(rng, 0.15);
    let rv_radius = m * spec.rv_radius_frac * jitter(rng, 0.12);
    // the RV disc overlaps the ring region and is carved into a crescent
    let rv_center = (
        lv_center.0 + rng.random_range(-1.5..1.5),
        lv_center.1 - (lv_radius + myo_thickness + rv_radius * 0.7),
    );

    // two intensity regimes: vendors A/B bright and clean, C/D dimmer with a
    // stronger bias field and more noise
    let (gain, bias_amp, noise_mult) = if vendor.group_ab() {
        (1.0, 0.05, 1.0)
    } else {
        (0.75, 0.20, 1.6)
    };
    SubjectGeometry {
        lv_center,
        rv_center,
        lv_radius,
        myo_thickness,
        rv_radius,
        gain: gain * jitter(rng, 0.05),
        bias_amp,
        noise: spec.noise_level * noise_mult,
    }
}

/// Builds one subject deterministically from `spec.seed` and its index.
pub fn generate_subject(spec: &PhantomSpec, index: usize) -> CineVolume {
    let (h, w) = spec.image_size;
    let (s_n, t_n) = (spec.slices, spec.frames);
    let vendor = spec.vendors[index % spec.vendors.len()];
    let mut rng = rng::stream(spec.seed, &[40, index as u64]);
    let geo = subject_geometry(spec, vendor, &mut rng);

    let taper = |s: usize| {
        if s_n <= 1 {
            1.0
        } else {
            1.0 - spec.apex_taper * (s as f64 / (s_n - 1) as f64)
        }
    };
    let contraction = |t: usize| 1.0 - spec.contraction_amplitude * phase_curve(t, t_n);

    // class mask for one (slice, frame)
    let frame_mask = |s: usize, t: usize| -> Array2<u8> {
        let f = contraction(t);
        let r_lv = geo.lv_radius * taper(s) * f;
        let th = geo.myo_thickness * (1.0 + 0.3 * spec.contraction_amplitude * phase_curve(t, t_n));
        let r_outer = r_lv + th;
        let r_rv = geo.rv_radius * taper(s) * f;
        let mut mask = Array2::zeros((h, w));
        for r in 0..h {
            for c in 0..w {
                let d_lv = ((r as f64 - geo.lv_center.0).powi(2)
                    + (c as f64 - geo.lv_center.1).powi(2))
                .sqrt();
                let d_rv = ((r as f64 - geo.rv_center.0).powi(2)
                    + (c as f64 - geo.rv_center.1).powi(2))
                .sqrt();
                mask[(r, c)] = if d_lv < r_lv {
                    1
                } else if d_lv < r_outer {
                    2
                } else if d_rv < r_rv {
                    3
                } else {
                    0
                };
            }
        }
        mask
    };

    let mut image = Array4::zeros((s_n, t_n, h, w));
    for s in 0..s_n {
        for t in 0..t_n {
            let mask = frame_mask(s, t);
            for r in 0..h {
                for c in 0..w {
                    let tissue = match mask[(r, c)] {
                        1 => 1.0,  // LV blood pool
                        2 => 0.42, // myocardium
                        3 => 0.88, // RV blood pool
                        _ => 0.08,
                    };
                    let bias = 1.0
                        + geo.bias_amp
                            * (std::f64::consts::PI * r as f64 / h as f64).sin()
                            * (std::f64::consts::PI * c as f64 / w as f64).cos();
                    let n: f64 = StandardNormal.sample(&mut rng);
                    image[(s, t, r, c)] = (tissue * geo.gain * bias + n * geo.noise) as f32;
                }
            }
        }
    }

    // ED = frame of maximal cavity area (ties -> earliest), ES = minimal
    // (ties -> latest), so a motionless phantom still gets two distinct frames
    let mut ed = 0;
    let mut es = 0;
    for t in 0..t_n {
        if contraction(t) > contraction(ed) {
            ed = t;
        }
        if contraction(t) <= contraction(es) {
            es = t;
        }
    }
    if es == ed {
        es = t_n - 1;
    }

    let mut masks = BTreeMap::new();
    let mut phase_of = BTreeMap::new();
    for (frame, phase) in [(ed, Phase::Ed), (es, Phase::Es)] {
        let mut m3 = Array3::zeros((s_n, h, w));
        for s in 0..s_n {
            let m = frame_mask(s, frame);
            m3.index_axis_mut(ndarray::Axis(0), s).assign(&m);
        }
        masks.insert(frame, m3);
        phase_of.insert(frame, phase);
    }

    let mut labeled_frames = vec![ed, es];
    labeled_frames.sort_unstable();
    CineVolume {
        subject_id: format!("phantom_{index:03}"),
        image,
        labeled_frames,
        masks,
        phase_of,
        vendor,
        pixel_spacing: (1.0, 1.0, 8.0),
    }
}

/// Generates the whole cohort, parallel over subjects.
pub fn generate(spec: &PhantomSpec) -> Result<Vec<CineVolume>> {
    spec.validate()?;
    let volumes = parallel::map_collect(spec.n_subjects, |i| generate_subject(spec, i));
    for v in &volumes {
        v.validate()?;
    }
    Ok(volumes)
}

/// Writes volumes in the layout `data::load_dataset` ingests: per subject a
/// 4D float32 image, a 4D uint8 label volume (unlabeled frames zero-filled),
/// and a JSON sidecar.
pub fn write_dataset(volumes: &[CineVolume], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for v in volumes {
        let (s_n, t_n, h, w) = v.image.dim();
        let dims = [w, h, s_n, t_n]; // nifti order: x, y, z, t
        let spacing = [v.pixel_spacing.1, v.pixel_spacing.0, v.pixel_spacing.2];

        let mut img_data = Vec::with_capacity(v.image.len());
        for t in 0..t_n {
            for z in 0..s_n {
                for y in 0..h {
                    for x in 0..w {
                        img_data.push(v.image[(z, t, y, x)]);
                    }
                }
            }
        }
        let img_name = format!("{}.nii", v.subject_id);
        nifti::write(&dir.join(&img_name), &dims, spacing, &img_data, nifti::DT_FLOAT32)?;

        let mut gt_data = vec![0.0f32; v.image.len()];
        for (&frame, mask) in &v.masks {
            for z in 0..s_n {
                for y in 0..h {
                    for x in 0..w {
                        let flat = ((frame * s_n + z) * h + y) * w + x;
                        gt_data[flat] = f32::from(mask[(z, y, x)]);
                    }
                }
            }
        }
        let gt_name = format!("{}_gt.nii", v.subject_id);
        nifti::write(&dir.join(&gt_name), &dims, spacing, &gt_data, nifti::DT_UINT8)?;

        let sidecar = SubjectSidecar {
            subject_id: v.subject_id.clone(),
            vendor: v.vendor,
            labeled_frames: v.labeled_frames.clone(),
            phases: v
                .phase_of
                .iter()
                .map(|(t, p)| (t.to_string(), *p))
                .collect(),
            pixel_spacing_mm: [v.pixel_spacing.0, v.pixel_spacing.1, v.pixel_spacing.2],
            image: img_name,
            labels: Some(LabelSource::Volume4d(gt_name)),
        };
        let path = dir.join(format!("{}.json", v.subject_id));
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::Validation(format!("sidecar serialization: {e}")))?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;

    #[test]
    fn generated_volumes_pass_invariants() {
        let spec = PhantomSpec {
            n_subjects: 4,
            ..Default::default()
        };
        let vols = generate(&spec).unwrap();
        assert_eq!(vols.len(), 4);
        for v in &vols {
            v.validate().unwrap();
        }
        // vendor cycle covers all four vendors
        let vendors: Vec<Vendor> = vols.iter().map(|v| v.vendor).collect();
        assert_eq!(vendors, Vendor::ALL.to_vec());
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let spec = PhantomSpec {
            n_subjects: 2,
            ..Default::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        for (va, vb) in a.iter().zip(&b) {
            assert_eq!(va.image, vb.image);
            assert_eq!(va.masks, vb.masks);
            assert_eq!(va.labeled_frames, vb.labeled_frames);
        }
    }

    #[test]
    fn zero_contraction_gives_identical_ed_es_masks() {
        let spec = PhantomSpec {
            n_subjects: 1,
            contraction_amplitude: 0.0,
            ..Default::default()
        };
        let v = &generate(&spec).unwrap()[0];
        let frames = &v.labeled_frames;
        assert_eq!(frames.len(), 2);
        assert_eq!(v.masks[&frames[0]], v.masks[&frames[1]]);
    }

    #[test]
    fn ed_cavity_larger_than_es() {
        let spec = PhantomSpec {
            n_subjects: 1,
            ..Default::default()
        };
        let v = &generate(&spec).unwrap()[0];
        let ed = v.frame_of(Phase::Ed).unwrap();
        let es = v.frame_of(Phase::Es).unwrap();
        let area = |t: usize| v.masks[&t].iter().filter(|&&x| x == 1).count();
        assert!(area(ed) > area(es), "ED {} vs ES {}", area(ed), area(es));
    }

    #[test]
    fn myocardium_surrounds_cavity_with_no_overlap() {
        let spec = PhantomSpec {
            n_subjects: 1,
            ..Default::default()
        };
        let v = &generate(&spec).unwrap()[0];
        for mask in v.masks.values() {
            let (s_n, h, w) = mask.dim();
            for s in 0..s_n {
                for r in 1..h - 1 {
                    for c in 1..w - 1 {
                        if mask[(s, r, c)] == 1 {
                            for (dr, dc) in [(0i32, 1i32), (0, -1), (1, 0), (-1, 0)] {
                                let v2 = mask[(
                                    s,
                                    (r as i32 + dr) as usize,
                                    (c as i32 + dc) as usize,
                                )];
                                assert!(
                                    v2 == 1 || v2 == 2,
                                    "LV pixel bordered by class {v2}"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn dataset_roundtrips_through_disk() {
        let spec = PhantomSpec {
            n_subjects: 2,
            slices: 3,
            frames: 4,
            image_size: (32, 32),
            ..Default::default()
        };
        let vols = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&vols, dir.path()).unwrap();
        let loaded = data::load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        for (orig, back) in vols.iter().zip(&loaded) {
            assert_eq!(orig.subject_id, back.subject_id);
            assert_eq!(orig.image, back.image);
            assert_eq!(orig.masks, back.masks);
            assert_eq!(orig.vendor, back.vendor);
            assert_eq!(orig.phase_of, back.phase_of);
        }
    }
}
