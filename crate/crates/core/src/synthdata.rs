//! Synthetic multi-site voxel segmentation data.
//!
//! Each case holds one ellipsoidal tumor. Every channel carries a base signal
//! (`tumor_contrast` inside the tumor, 0 outside), a site-wide offset
//! `feature_shift[c]`, an optional per-case offset drawn from
//! `N(0, case_jitter^2)`, and voxel noise `N(0, noise_scale^2)`. Distinct
//! shifts across sites make the data non-IID.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GmlError, Result};
use crate::rng::SimRng;
use crate::segcore::{FeatureVolume, GridDims, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitRule {
    /// test = round(0.2 n), validation = round(0.1 n), train = remainder;
    /// test and validation are raised to 1 when rounding would empty them.
    Proportional,
    Explicit { train: usize, validation: usize, test: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitRule {
    pub fn sizes(&self, n_cases: usize) -> Result<SplitSizes> {
        let sizes = match *self {
            SplitRule::Proportional => {
                let round = |f: f64| libm::round(f * n_cases as f64) as usize;
                let test = round(0.2).max(1);
                let validation = round(0.1).max(1);
                SplitSizes {
                    train: n_cases.saturating_sub(test + validation),
                    validation,
                    test,
                }
            }
            SplitRule::Explicit {
                train,
                validation,
                test,
            } => {
                if train + validation + test != n_cases {
                    return Err(GmlError::InvalidSpec(format!(
                        "explicit split {train}+{validation}+{test} does not sum to {n_cases} cases"
                    )));
                }
                SplitSizes {
                    train,
                    validation,
                    test,
                }
            }
        };
        if sizes.train == 0 || sizes.validation == 0 || sizes.test == 0 {
            return Err(GmlError::InvalidSpec(format!(
                "split {sizes:?} of {n_cases} cases leaves an empty partition"
            )));
        }
        Ok(sizes)
    }
}

fn default_contrast() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    pub site_id: u32,
    pub n_cases: usize,
    /// Per-channel offset added to every voxel of this site.
    pub feature_shift: Vec<f64>,
    pub noise_scale: f64,
    /// Semi-axis range in voxels, `(min, max)`.
    pub tumor_radius_range: (f64, f64),
    pub grid: GridDims,
    #[serde(default = "default_contrast")]
    pub tumor_contrast: f64,
    #[serde(default)]
    pub case_jitter: f64,
    pub split: SplitRule,
}

impl SiteSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GmlError::InvalidSpec(format!("site {}: {msg}", self.site_id)));
        if self.grid.validate().is_err() {
            return bad(format!("invalid grid {:?}", self.grid));
        }
        if self.n_cases < 3 {
            return bad(format!("needs at least 3 cases, got {}", self.n_cases));
        }
        if self.feature_shift.len() != self.grid.channels {
            return bad(format!(
                "feature_shift has {} entries for {} channels",
                self.feature_shift.len(),
                self.grid.channels
            ));
        }
        let finite = self.feature_shift.iter().all(|s| s.is_finite())
            && self.tumor_contrast.is_finite()
            && self.case_jitter.is_finite()
            && self.noise_scale.is_finite();
        if !finite {
            return bad("non-finite generation parameter".into());
        }
        if self.noise_scale < 0.0 || self.case_jitter < 0.0 {
            return bad("noise_scale and case_jitter must be non-negative".into());
        }
        let (lo, hi) = self.tumor_radius_range;
        if !(lo >= 1.0 && lo <= hi) {
            return bad(format!("radius range ({lo}, {hi}) must satisfy 1 <= min <= max"));
        }
        let smallest = self.grid.depth.min(self.grid.height).min(self.grid.width);
        if 2.0 * hi > (smallest - 1) as f64 {
            return bad(format!(
                "radius {hi} does not fit inside a {}x{}x{} grid",
                self.grid.depth, self.grid.height, self.grid.width
            ));
        }
        self.split.sizes(self.n_cases)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: String,
    pub volume: FeatureVolume,
    pub truth: Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteDataset {
    pub site_id: u32,
    /// Seed the dataset was generated from (0 for hand-built data).
    pub seed: u64,
    pub train: Vec<Case>,
    pub validation: Vec<Case>,
    pub test: Vec<Case>,
}

impl SiteDataset {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GmlError::InvalidInput(format!("site {}: {msg}", self.site_id)));
        if self.train.is_empty() || self.validation.is_empty() || self.test.is_empty() {
            return bad("every split must hold at least one case".into());
        }
        let mut ids = BTreeSet::new();
        let dims = self.train[0].volume.dims();
        for case in self.all_cases() {
            if !ids.insert(case.case_id.as_str()) {
                return bad(format!("case id {} appears twice", case.case_id));
            }
            if case.volume.dims() != dims || !case.truth.dims().same_grid(&dims) {
                return bad(format!("case {} has inconsistent dimensions", case.case_id));
            }
        }
        Ok(())
    }

    pub fn all_cases(&self) -> impl Iterator<Item = &Case> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }

    pub fn n_cases(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn dims(&self) -> Option<GridDims> {
        self.all_cases().next().map(|c| c.volume.dims())
    }
}

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, i: usize, j: usize, k: usize) -> bool {
        let pos = [i as f64, j as f64, k as f64];
        (0..3)
            .map(|a| {
                let d = (pos[a] - self.center[a]) / self.radii[a];
                d * d
            })
            .sum::<f64>()
            <= 1.0
    }
}

fn generate_case(spec: &SiteSpec, index: usize, rng: &mut SimRng) -> Result<Case> {
    let g = spec.grid;
    let (lo, hi) = spec.tumor_radius_range;
    let extent = [g.depth, g.height, g.width];
    let mut radii = [0.0; 3];
    let mut center = [0.0; 3];
    for a in 0..3 {
        radii[a] = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let upper = (extent[a] - 1) as f64 - radii[a];
        center[a] = if upper > radii[a] {
            rng.random_range(radii[a]..=upper)
        } else {
            radii[a]
        };
    }
    let tumor = Ellipsoid { center, radii };

    let mut bits = Vec::with_capacity(g.voxels());
    for i in 0..g.depth {
        for j in 0..g.height {
            for k in 0..g.width {
                bits.push(u8::from(tumor.contains(i, j, k)));
            }
        }
    }

    let offsets: Vec<f64> = (0..g.channels)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            spec.case_jitter * z
        })
        .collect();
    let mut values = Vec::with_capacity(g.channels * g.voxels());
    for (shift, offset) in spec.feature_shift.iter().zip(&offsets) {
        let level = shift + offset;
        for &b in &bits {
            let z: f64 = StandardNormal.sample(rng);
            let base = if b == 1 { spec.tumor_contrast } else { 0.0 };
            values.push((base + level + spec.noise_scale * z) as f32);
        }
    }

    Ok(Case {
        case_id: format!("site{}_case{:03}", spec.site_id, index),
        volume: FeatureVolume::new(g, values)?,
        truth: Mask::new(g, bits)?,
    })
}

/// Generates all cases of one site and splits them. A pure function of `(spec, seed)`.
pub fn generate_site_dataset(spec: &SiteSpec, seed: u64) -> Result<SiteDataset> {
    spec.validate()?;
    let sizes = spec.split.sizes(spec.n_cases)?;
    let mut rng = SimRng::seed_from_u64(seed);
    let mut cases = (0..spec.n_cases)
        .map(|i| generate_case(spec, i, &mut rng).map(Some))
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..spec.n_cases).collect();
    order.shuffle(&mut rng);
    let mut take = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter()
            .map(|i| cases[i].take().expect("each case is assigned once"))
            .collect::<Vec<_>>()
    };
    let test = take(&order[..sizes.test]);
    let validation = take(&order[sizes.test..sizes.test + sizes.validation]);
    let train = take(&order[sizes.test + sizes.validation..]);

    Ok(SiteDataset {
        site_id: spec.site_id,
        seed,
        train,
        validation,
        test,
    })
}

/// Training/validation/test counts of the four-site layout.
pub const FOUR_SITE_SPLITS: [(usize, usize, usize); 4] = [(32, 5, 10), (23, 4, 7), (21, 3, 6), (23, 4, 8)];

/// Per-site channel offsets of the default heterogeneous benchmark.
pub const FOUR_SITE_SHIFTS: [[f64; 3]; 4] = [
    [0.0, 0.0, 0.0],
    [0.3, -0.2, 0.1],
    [-0.25, 0.15, 0.3],
    [0.1, 0.3, -0.25],
];

/// The default four-site benchmark: a 16x16x16 grid with 3 channels.
///
/// Tumor contrast 2 against unit noise keeps the per-voxel task learnable by
/// a linear model; a per-case offset (jitter 0.5) adds inter-case variation on
/// top of the per-site channel shifts.
pub fn default_site_specs() -> Vec<SiteSpec> {
    let grid = GridDims {
        depth: 16,
        height: 16,
        width: 16,
        channels: 3,
    };
    FOUR_SITE_SPLITS
        .iter()
        .zip(FOUR_SITE_SHIFTS)
        .enumerate()
        .map(|(i, (&(train, validation, test), shift))| SiteSpec {
            site_id: i as u32 + 1,
            n_cases: train + validation + test,
            feature_shift: shift.to_vec(),
            noise_scale: 1.0,
            tumor_radius_range: (2.5, 5.0),
            grid,
            tumor_contrast: 2.0,
            case_jitter: 0.5,
            split: SplitRule::Explicit {
                train,
                validation,
                test,
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn small_spec() -> SiteSpec {
        SiteSpec {
            site_id: 2,
            n_cases: 10,
            feature_shift: vec![0.5, -0.5],
            noise_scale: 0.3,
            tumor_radius_range: (1.0, 2.0),
            grid: GridDims::new(6, 6, 6, 2).unwrap(),
            tumor_contrast: 1.0,
            case_jitter: 0.1,
            split: SplitRule::Proportional,
        }
    }

    #[test]
    fn proportional_split_sizes() {
        let s = SplitRule::Proportional.sizes(47).unwrap();
        assert_eq!((s.train, s.validation, s.test), (33, 5, 9));
        let s = SplitRule::Proportional.sizes(3).unwrap();
        assert_eq!((s.train, s.validation, s.test), (1, 1, 1));
        assert!(SplitRule::Proportional.sizes(2).is_err());
        assert!(SplitRule::Explicit { train: 1, validation: 1, test: 1 }.sizes(4).is_err());
    }

    #[test]
    fn default_specs_follow_four_site_counts() {
        let specs = default_site_specs();
        let totals: Vec<usize> = specs.iter().map(|s| s.n_cases).collect();
        assert_eq!(totals, vec![47, 34, 30, 35]);
        for s in &specs {
            s.validate().unwrap();
        }
    }

    #[test]
    fn generation_is_deterministic_and_split() {
        let spec = small_spec();
        let a = generate_site_dataset(&spec, 99).unwrap();
        let b = generate_site_dataset(&spec, 99).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_site_dataset(&spec, 100).unwrap());
        a.validate().unwrap();
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (7, 1, 2));
        assert!(a.all_cases().all(|c| c.truth.count() > 0));
    }

    #[test]
    fn noiseless_tumor_is_brighter() {
        let mut spec = small_spec();
        spec.noise_scale = 0.0;
        spec.case_jitter = 0.0;
        spec.feature_shift = vec![0.0, 0.0];
        let ds = generate_site_dataset(&spec, 5).unwrap();
        for case in ds.all_cases() {
            for c in 0..2 {
                let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0, 0.0, 0);
                for (&x, &t) in case.volume.channel(c).iter().zip(case.truth.bits()) {
                    if t == 1 {
                        inside += x as f64;
                        n_in += 1;
                    } else {
                        outside += x as f64;
                        n_out += 1;
                    }
                }
                assert!(inside / n_in as f64 > outside / n_out as f64);
            }
        }
    }

    #[test]
    fn oversized_radius_is_rejected() {
        let mut spec = small_spec();
        spec.tumor_radius_range = (1.0, 3.0);
        assert!(matches!(generate_site_dataset(&spec, 1), Err(GmlError::InvalidSpec(_))));
        spec.tumor_radius_range = (0.5, 2.0);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn dataset_validation_catches_duplicates_and_empty_splits() {
        let mut ds = generate_site_dataset(&small_spec(), 3).unwrap();
        ds.test[0].case_id = ds.train[0].case_id.clone();
        assert!(ds.validate().is_err());
        let mut ds = generate_site_dataset(&small_spec(), 3).unwrap();
        ds.validation.clear();
        assert!(ds.validate().is_err());
    }
}
