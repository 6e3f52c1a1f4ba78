//! Procedural anatomy phantoms: a grayscale pseudo-radiograph with exact
//! organ masks and optional lesion ground truth.
//!
//! Geometry varies modestly per seed (lung/heart ellipse axes and centers);
//! the background gradient and rib banding are fixed so the out-of-lesion
//! appearance is learnable from small datasets.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which lung a lesion sits in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Coarse vertical sub-region of a lung.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionCue {
    Upper,
    Lower,
    Whole,
}

/// Lung selection for prompts and ROI construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LungSelect {
    Left,
    Right,
    Both,
}

impl From<Side> for LungSelect {
    fn from(s: Side) -> Self {
        match s {
            Side::Left => LungSelect::Left,
            Side::Right => LungSelect::Right,
        }
    }
}

/// Binary organ maps; values are exactly 0 or 1.
#[derive(Debug, Clone)]
pub struct OrganMaskSet<T: Scalar> {
    pub left_lung: Tensor<T>,
    pub right_lung: Tensor<T>,
    pub heart: Tensor<T>,
}

impl<T: Scalar> OrganMaskSet<T> {
    pub fn side(&self) -> usize {
        self.left_lung.shape()[0]
    }

    pub fn lung(&self, side: Side) -> &Tensor<T> {
        match side {
            Side::Left => &self.left_lung,
            Side::Right => &self.right_lung,
        }
    }

    /// Union of all three organ maps.
    pub fn union(&self) -> Tensor<T> {
        let n = self.left_lung.len();
        let mut data = vec![T::zero(); n];
        for i in 0..n {
            let v = self.left_lung.data()[i] + self.right_lung.data()[i] + self.heart.data()[i];
            data[i] = if v > T::zero() { T::one() } else { T::zero() };
        }
        Tensor::from_vec(self.left_lung.shape().to_vec(), data).expect("same shape")
    }
}

/// Ground truth for one synthetic lesion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    /// (row, col) in pixels.
    pub center: (usize, usize),
    /// Radius in pixels; the intensity bump is feathered and truncated at 2x.
    pub radius: usize,
    /// Peak added intensity, in [0,1].
    pub amplitude: f64,
    pub laterality: Side,
    pub region: RegionCue,
}

/// A synthetic study: image, masks, optional lesion ground truth.
#[derive(Debug, Clone)]
pub struct Phantom<T: Scalar> {
    pub image: Tensor<T>,
    pub masks: OrganMaskSet<T>,
    pub lesion: Option<LesionSpec>,
    pub seed: u64,
}

/// Value ranges for lesion sampling.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LesionRanges {
    pub radius: (usize, usize),
    pub amplitude: (f64, f64),
}

impl Default for LesionRanges {
    fn default() -> Self {
        LesionRanges { radius: (3, 6), amplitude: (0.2, 0.4) }
    }
}

/// Geometry and sampling parameters for phantom generation. Lengths are
/// fractions of the image side.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub side: usize,
    /// Every factor here must divide `side` (attention pooling factors).
    pub pool_factors: Vec<usize>,
    pub lung_half_width: (f64, f64),
    pub lung_half_height: (f64, f64),
    /// Uniform jitter applied to organ centers, +/- this fraction.
    pub center_jitter: f64,
    pub heart_half_width: (f64, f64),
    pub heart_half_height: (f64, f64),
    /// Acceptable per-lung mask area as a fraction of side^2.
    pub lung_area_bounds: (f64, f64),
    pub lesion: Option<LesionRanges>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            side: 64,
            pool_factors: vec![4, 8],
            lung_half_width: (0.13, 0.16),
            lung_half_height: (0.24, 0.28),
            center_jitter: 0.015,
            heart_half_width: (0.12, 0.14),
            heart_half_height: (0.15, 0.18),
            lung_area_bounds: (0.08, 0.16),
            lesion: Some(LesionRanges::default()),
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.side < 32 {
            return Err(Error::Invalid(format!("phantom side {} < 32", self.side)));
        }
        for &f in &self.pool_factors {
            if f == 0 || self.side % f != 0 {
                return Err(Error::Invalid(format!(
                    "side {} not divisible by pool factor {f}",
                    self.side
                )));
            }
        }
        Ok(())
    }
}

struct Ellipse {
    cr: f64,
    cc: f64,
    ar: f64,
    ac: f64,
}

impl Ellipse {
    fn level(&self, r: f64, c: f64) -> f64 {
        let dr = (r - self.cr) / self.ar;
        let dc = (c - self.cc) / self.ac;
        dr * dr + dc * dc
    }

    fn mask<T: Scalar>(&self, side: usize) -> Tensor<T> {
        let mut data = vec![T::zero(); side * side];
        for r in 0..side {
            for c in 0..side {
                if self.level(r as f64, c as f64) <= 1.0 {
                    data[r * side + c] = T::one();
                }
            }
        }
        Tensor::from_vec(vec![side, side], data).expect("sized")
    }

    /// Soft coverage in [0,1]: 1 well inside, 0 outside, a short linear ramp
    /// at the boundary so the rendered image has no hard staircase.
    fn feather(&self, r: f64, c: f64) -> f64 {
        let e = self.level(r, c);
        ((1.0 - e) / 0.15).clamp(0.0, 1.0)
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    rng.random_range(range.0..=range.1)
}

/// Generates one phantom. The same (seed, config) always produces the same
/// phantom, bit for bit.
pub fn generate_phantom<T: Scalar>(seed: u64, config: &PhantomConfig) -> Result<Phantom<T>> {
    generate_phantom_with(seed, config, None)
}

/// Like [`generate_phantom`] but optionally forcing the lesion laterality
/// (dataset construction balances sides this way).
pub fn generate_phantom_with<T: Scalar>(
    seed: u64,
    config: &PhantomConfig,
    force_side: Option<Side>,
) -> Result<Phantom<T>> {
    config.validate()?;
    let s = config.side;
    let sf = s as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let jitter = config.center_jitter;
    let mut organ = |cr: f64, cc: f64, half_h: (f64, f64), half_w: (f64, f64), rng: &mut ChaCha8Rng| {
        let ar = uniform_in(rng, half_h) * sf;
        let ac = uniform_in(rng, half_w) * sf;
        let jr = uniform_in(rng, (-jitter, jitter)) * sf;
        let jc = uniform_in(rng, (-jitter, jitter)) * sf;
        Ellipse { cr: cr * sf + jr, cc: cc * sf + jc, ar, ac }
    };

    let left = organ(0.44, 0.30, config.lung_half_height, config.lung_half_width, &mut rng);
    let right = organ(0.44, 0.70, config.lung_half_height, config.lung_half_width, &mut rng);
    let heart = organ(0.62, 0.50, config.heart_half_height, config.heart_half_width, &mut rng);

    // Fixed-appearance background: soft vertical gradient plus rib banding.
    let mut img = vec![T::zero(); s * s];
    for r in 0..s {
        for c in 0..s {
            let u = r as f64 / sf;
            let mut v = 0.52 + 0.06 * (u - 0.5);
            v += 0.03 * (2.0 * std::f64::consts::PI * u * 7.0 + 1.3).sin();
            // Lungs darken, heart brightens, both feathered.
            let fl = left.feather(r as f64, c as f64).max(right.feather(r as f64, c as f64));
            v = v * (1.0 - fl) + 0.25 * fl;
            let fh = heart.feather(r as f64, c as f64);
            v = v * (1.0 - fh) + 0.72 * fh;
            img[r * s + c] = T::fromf(v.clamp(0.0, 1.0));
        }
    }
    let image = Tensor::from_vec(vec![s, s], img)?;
    let masks = OrganMaskSet {
        left_lung: left.mask::<T>(s),
        right_lung: right.mask::<T>(s),
        heart: heart.mask::<T>(s),
    };

    let lesion = match &config.lesion {
        None => None,
        Some(ranges) => {
            let side_pick = force_side.unwrap_or_else(|| {
                if rng.random_bool(0.5) {
                    Side::Left
                } else {
                    Side::Right
                }
            });
            let region = if rng.random_bool(0.5) { RegionCue::Upper } else { RegionCue::Lower };
            let mut radius = rng.random_range(ranges.radius.0..=ranges.radius.1);
            let amplitude = uniform_in(&mut rng, ranges.amplitude);
            let lung = masks.lung(side_pick);
            let heart_mask = &masks.heart;

            // Candidate centers: the full disk stays inside the lung, clear of
            // the heart silhouette, and in the requested vertical half.
            let spec = loop {
                let candidates =
                    eligible_centers(lung, heart_mask, radius, region, s);
                if let Some(cands) = candidates {
                    let pick = cands[rng.random_range(0..cands.len())];
                    break LesionSpec {
                        center: pick,
                        radius,
                        amplitude,
                        laterality: side_pick,
                        region,
                    };
                }
                if radius <= 1 {
                    return Err(Error::Invalid(format!(
                        "no lesion placement exists for seed {seed}"
                    )));
                }
                radius -= 1;
            };
            Some(spec)
        }
    };

    Ok(Phantom { image, masks, lesion, seed })
}

fn lung_bbox<T: Scalar>(mask: &Tensor<T>) -> Option<(usize, usize)> {
    let (h, w) = mask.rows_cols().ok()?;
    let mut rmin = h;
    let mut rmax = 0;
    for r in 0..h {
        for c in 0..w {
            if mask.data()[r * w + c] > T::zero() {
                rmin = rmin.min(r);
                rmax = rmax.max(r);
            }
        }
    }
    if rmin > rmax {
        None
    } else {
        Some((rmin, rmax))
    }
}

fn eligible_centers<T: Scalar>(
    lung: &Tensor<T>,
    heart: &Tensor<T>,
    radius: usize,
    region: RegionCue,
    s: usize,
) -> Option<Vec<(usize, usize)>> {
    let (rmin, rmax) = lung_bbox(lung)?;
    let in_region = |r: usize| match region {
        RegionCue::Whole => true,
        RegionCue::Upper => 2 * r < rmin + rmax,
        RegionCue::Lower => 2 * r >= rmin + rmax,
    };
    let rad = radius as i64;
    let mut out = Vec::new();
    for r in 0..s {
        if !in_region(r) {
            continue;
        }
        'cols: for c in 0..s {
            if lung.data()[r * s + c] == T::zero() {
                continue;
            }
            for dr in -rad..=rad {
                for dc in -rad..=rad {
                    if dr * dr + dc * dc > rad * rad {
                        continue;
                    }
                    let rr = r as i64 + dr;
                    let cc = c as i64 + dc;
                    if rr < 0 || cc < 0 || rr >= s as i64 || cc >= s as i64 {
                        continue 'cols;
                    }
                    let idx = rr as usize * s + cc as usize;
                    if lung.data()[idx] == T::zero() || heart.data()[idx] != T::zero() {
                        continue 'cols;
                    }
                }
            }
            out.push((r, c));
        }
    }
    if out.is_empty() {
        None
    } else {
        Some(out)
    }
}

/// Adds a Gaussian-feathered bright disk. Pixels farther than 2x radius from
/// the center are untouched; the result is clamped to [0,1].
pub fn apply_lesion<T: Scalar>(
    image: &Tensor<T>,
    masks: &OrganMaskSet<T>,
    spec: &LesionSpec,
) -> Result<Tensor<T>> {
    if spec.amplitude < 0.0 {
        return Err(Error::Invalid(format!("negative lesion amplitude {}", spec.amplitude)));
    }
    let (h, w) = image.rows_cols()?;
    let lung = masks.lung(spec.laterality);
    let (cr, cc) = spec.center;
    let rad = spec.radius as i64;
    // The defining disk must not escape the lung.
    for dr in -rad..=rad {
        for dc in -rad..=rad {
            if dr * dr + dc * dc > rad * rad {
                continue;
            }
            let rr = cr as i64 + dr;
            let cc2 = cc as i64 + dc;
            let inside = rr >= 0
                && cc2 >= 0
                && rr < h as i64
                && cc2 < w as i64
                && lung.data()[rr as usize * w + cc2 as usize] != T::zero();
            if !inside {
                return Err(Error::Invalid(format!(
                    "lesion disk at ({cr},{cc}) r={} escapes the {} lung mask",
                    spec.radius,
                    match spec.laterality {
                        Side::Left => "left",
                        Side::Right => "right",
                    }
                )));
            }
        }
    }

    let sigma = spec.radius as f64 / 1.5;
    let cut = (2 * spec.radius) as f64;
    let mut out = image.data().to_vec();
    for r in 0..h {
        for c in 0..w {
            let d2 = (r as f64 - cr as f64).powi(2) + (c as f64 - cc as f64).powi(2);
            if d2 > cut * cut {
                continue;
            }
            let bump = spec.amplitude * (-d2 / (2.0 * sigma * sigma)).exp();
            let v = (out[r * w + c].tof() + bump).clamp(0.0, 1.0);
            out[r * w + c] = T::fromf(v);
        }
    }
    Tensor::from_vec(vec![h, w], out)
}

// ---------------------------------------------------------------------------
// Dataset construction.
// ---------------------------------------------------------------------------

/// One manifest row, file names relative to the dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub image: String,
    pub lesioned_image: String,
    pub mask_left: String,
    pub mask_right: String,
    pub mask_heart: String,
    pub lesion: LesionSpec,
}

pub type Manifest = Vec<ManifestEntry>;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Generates `n` phantom pairs under `out_dir` and writes `manifest.json`.
/// Laterality alternates for an even split. Pure function of (n, seed, config).
pub fn build_dataset<T: Scalar>(
    n: usize,
    seed: u64,
    out_dir: &Path,
    config: &PhantomConfig,
) -> Result<Manifest> {
    config.validate()?;
    if config.lesion.is_none() {
        return Err(Error::Invalid("dataset generation needs lesion ranges".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = Vec::with_capacity(n);
    for i in 0..n {
        let phantom_seed = seed.wrapping_add(i as u64);
        let force = if i % 2 == 0 { Side::Left } else { Side::Right };
        let ph: Phantom<T> = generate_phantom_with(phantom_seed, config, Some(force))?;
        let spec = ph.lesion.clone().expect("lesion ranges set");
        let lesioned = apply_lesion(&ph.image, &ph.masks, &spec)?;

        let id = format!("ph{i:04}");
        let entry = ManifestEntry {
            id: id.clone(),
            seed: phantom_seed,
            image: format!("{id}_image.pgm"),
            lesioned_image: format!("{id}_lesioned.pgm"),
            mask_left: format!("{id}_mask_left.pgm"),
            mask_right: format!("{id}_mask_right.pgm"),
            mask_heart: format!("{id}_mask_heart.pgm"),
            lesion: spec,
        };
        io::write_pgm(&out_dir.join(&entry.image), &ph.image)?;
        io::write_pgm(&out_dir.join(&entry.lesioned_image), &lesioned)?;
        io::write_pgm(&out_dir.join(&entry.mask_left), &ph.masks.left_lung)?;
        io::write_pgm(&out_dir.join(&entry.mask_right), &ph.masks.right_lung)?;
        io::write_pgm(&out_dir.join(&entry.mask_heart), &ph.masks.heart)?;
        manifest.push(entry);
    }
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(out_dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

impl ManifestEntry {
    pub fn load_masks<T: Scalar>(&self, dir: &Path) -> Result<OrganMaskSet<T>> {
        Ok(OrganMaskSet {
            left_lung: io::binarize(&io::read_pgm(&dir.join(&self.mask_left))?),
            right_lung: io::binarize(&io::read_pgm(&dir.join(&self.mask_right))?),
            heart: io::binarize(&io::read_pgm(&dir.join(&self.mask_heart))?),
        })
    }

    pub fn load_clean<T: Scalar>(&self, dir: &Path) -> Result<Tensor<T>> {
        io::read_pgm(&dir.join(&self.image))
    }

    pub fn load_lesioned<T: Scalar>(&self, dir: &Path) -> Result<Tensor<T>> {
        io::read_pgm(&dir.join(&self.lesioned_image))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_ones<T: Scalar>(m: &Tensor<T>) -> usize {
        m.data().iter().filter(|&&v| v > T::zero()).count()
    }

    fn connected<T: Scalar>(m: &Tensor<T>) -> bool {
        let (h, w) = m.rows_cols().unwrap();
        let total = count_ones(m);
        if total == 0 {
            return false;
        }
        let start = m.data().iter().position(|&v| v > T::zero()).unwrap();
        let mut seen = vec![false; h * w];
        let mut stack = vec![start];
        seen[start] = true;
        let mut reached = 0;
        while let Some(i) = stack.pop() {
            reached += 1;
            let (r, c) = (i / w, i % w);
            let mut push = |rr: i64, cc: i64, stack: &mut Vec<usize>, seen: &mut Vec<bool>| {
                if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                    return;
                }
                let j = rr as usize * w + cc as usize;
                if !seen[j] && m.data()[j] > T::zero() {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            push(r as i64 - 1, c as i64, &mut stack, &mut seen);
            push(r as i64 + 1, c as i64, &mut stack, &mut seen);
            push(r as i64, c as i64 - 1, &mut stack, &mut seen);
            push(r as i64, c as i64 + 1, &mut stack, &mut seen);
        }
        reached == total
    }

    #[test]
    fn deterministic_generation() {
        let cfg = PhantomConfig::default();
        let a: Phantom<f32> = generate_phantom(42, &cfg).unwrap();
        let b: Phantom<f32> = generate_phantom(42, &cfg).unwrap();
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.masks.left_lung.data(), b.masks.left_lung.data());
        assert_eq!(a.lesion, b.lesion);
    }

    #[test]
    fn masks_disjoint_and_bounded_over_seeds() {
        let cfg = PhantomConfig::default();
        let area = (cfg.side * cfg.side) as f64;
        for seed in 0..100u64 {
            let ph: Phantom<f32> = generate_phantom(seed, &cfg).unwrap();
            let l = &ph.masks.left_lung;
            let r = &ph.masks.right_lung;
            for (a, b) in l.data().iter().zip(r.data()) {
                assert!(!(*a > 0.0 && *b > 0.0), "lungs overlap at seed {seed}");
            }
            for m in [l, r] {
                let frac = count_ones(m) as f64 / area;
                assert!(
                    frac >= cfg.lung_area_bounds.0 && frac <= cfg.lung_area_bounds.1,
                    "area fraction {frac} outside bounds at seed {seed}"
                );
                // Mask values are exactly 0 or 1.
                assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
            }
            assert!(ph.image.min_value() >= 0.0 && ph.image.max_value() <= 1.0);
        }
    }

    #[test]
    fn organ_masks_connected() {
        let cfg = PhantomConfig::default();
        for seed in [0u64, 7, 19, 151] {
            let ph: Phantom<f64> = generate_phantom(seed, &cfg).unwrap();
            assert!(connected(&ph.masks.left_lung));
            assert!(connected(&ph.masks.right_lung));
            assert!(connected(&ph.masks.heart));
        }
    }

    #[test]
    fn lesion_inside_matching_lung() {
        let cfg = PhantomConfig::default();
        for seed in 0..50u64 {
            let ph: Phantom<f32> = generate_phantom(seed, &cfg).unwrap();
            let spec = ph.lesion.unwrap();
            let lung = ph.masks.lung(spec.laterality);
            let (h, w) = lung.rows_cols().unwrap();
            let rad = spec.radius as i64;
            for dr in -rad..=rad {
                for dc in -rad..=rad {
                    if dr * dr + dc * dc > rad * rad {
                        continue;
                    }
                    let rr = spec.center.0 as i64 + dr;
                    let cc = spec.center.1 as i64 + dc;
                    assert!(rr >= 0 && cc >= 0 && rr < h as i64 && cc < w as i64);
                    assert!(lung.data()[rr as usize * w + cc as usize] > 0.0);
                }
            }
        }
    }

    #[test]
    fn apply_lesion_contract() {
        let cfg = PhantomConfig::default();
        let ph: Phantom<f64> = generate_phantom(3, &cfg).unwrap();
        let mut spec = ph.lesion.clone().unwrap();

        // Zero amplitude changes nothing.
        spec.amplitude = 0.0;
        let out = apply_lesion(&ph.image, &ph.masks, &spec).unwrap();
        assert_eq!(out.data(), ph.image.data());

        // Far pixels (beyond 2x radius) unchanged; disk mean rises by at
        // least half the amplitude.
        let mut spec = ph.lesion.clone().unwrap();
        spec.amplitude = 0.3;
        spec.radius = spec.radius.min(6);
        let out = apply_lesion(&ph.image, &ph.masks, &spec).unwrap();
        let (h, w) = out.rows_cols().unwrap();
        let (cr, cc) = spec.center;
        let lim = (2 * spec.radius) as f64;
        let mut in_sum = 0.0;
        let mut in_count = 0;
        for r in 0..h {
            for c in 0..w {
                let d2 = (r as f64 - cr as f64).powi(2) + (c as f64 - cc as f64).powi(2);
                let delta = out.data()[r * w + c] - ph.image.data()[r * w + c];
                if d2 > lim * lim {
                    assert_eq!(delta, 0.0);
                } else {
                    assert!(delta >= 0.0); // additive and monotone
                }
                if d2 <= (spec.radius as f64).powi(2) {
                    in_sum += delta;
                    in_count += 1;
                }
            }
        }
        assert!(in_sum / in_count as f64 >= 0.5 * spec.amplitude);
    }

    #[test]
    fn lesion_escaping_mask_rejected() {
        let cfg = PhantomConfig::default();
        let ph: Phantom<f32> = generate_phantom(5, &cfg).unwrap();
        let spec = LesionSpec {
            center: (1, 1), // in the corner, outside any lung
            radius: 3,
            amplitude: 0.3,
            laterality: Side::Left,
            region: RegionCue::Upper,
        };
        assert!(apply_lesion(&ph.image, &ph.masks, &spec).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = PhantomConfig { side: 16, ..PhantomConfig::default() };
        assert!(cfg.validate().is_err());
        cfg.side = 60;
        cfg.pool_factors = vec![8];
        assert!(cfg.validate().is_err());
        cfg.side = 64;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn dataset_round_trip_and_balance() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PhantomConfig::default();
        let manifest = build_dataset::<f32>(5, 77, dir.path(), &cfg).unwrap();
        assert_eq!(manifest.len(), 5);
        let lefts = manifest
            .iter()
            .filter(|e| e.lesion.laterality == Side::Left)
            .count();
        assert!((lefts as i64 - (5 - lefts) as i64).abs() <= 1);

        for entry in &manifest {
            assert!(dir.path().join(&entry.image).exists());
            assert!(dir.path().join(&entry.lesioned_image).exists());
            let masks = entry.load_masks::<f32>(dir.path()).unwrap();
            assert!(masks.left_lung.data().iter().any(|&v| v > 0.0));
        }

        // Re-running with the same seed reproduces the manifest byte for byte.
        let bytes1 = std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        build_dataset::<f32>(5, 77, dir2.path(), &cfg).unwrap();
        let bytes2 = std::fs::read(dir2.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(bytes1, bytes2);

        let loaded = load_manifest(dir.path()).unwrap();
        assert_eq!(loaded.len(), 5);
        assert_eq!(loaded[0].id, manifest[0].id);
    }
}
