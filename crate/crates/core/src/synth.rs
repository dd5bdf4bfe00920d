//! Deterministic pseudo-radiograph phantoms with injected group differences.
//!
//! A phantom is a bright torso ellipse on a black background with two dark
//! lung ellipses carrying a sinusoidal rib texture, and two bright shoulder
//! bands above the lungs. Group B images shift the lung intensity by
//! `opacity_delta`, scale the shoulder-band thickness by `1 + shoulder_delta`
//! and scale the torso (lungs and bands follow it) by `1 + chest_scale_delta`.
//! `jitter` drives seeded per-image geometric and intensity perturbations,
//! which are identical for both groups at the same item seed.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::manifest::Split;
use crate::rng::{derive_index_seed, fnv1a, rng_from_seed};

pub const GROUP_ATTRIBUTE: &str = "group";
pub const ITEM_SEED_ATTRIBUTE: &str = "item_seed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Group {
    A,
    B,
}

impl Group {
    pub fn parse(label: &str) -> Result<Self> {
        match label {
            "A" => Ok(Group::A),
            "B" => Ok(Group::B),
            other => Err(Error::invalid(alloc::format!(
                "group label must be \"A\" or \"B\", got {other:?}"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::A => "A",
            Group::B => "B",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SynthParams {
    pub image_size: usize,
    pub opacity_delta: f32,
    pub shoulder_delta: f32,
    pub chest_scale_delta: f32,
    pub jitter: f32,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            image_size: 64,
            opacity_delta: 0.3,
            shoulder_delta: 0.15,
            chest_scale_delta: 0.0,
            jitter: 0.05,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.image_size, 32 | 64 | 128) {
            return Err(Error::invalid(alloc::format!(
                "image_size must be 32, 64 or 128, got {}",
                self.image_size
            )));
        }
        let check = |name: &str, v: f32, bound: f32| {
            if v.is_finite() && v.abs() <= bound {
                Ok(())
            } else {
                Err(Error::invalid(alloc::format!("{name} = {v} outside [-{bound}, {bound}]")))
            }
        };
        check("opacity_delta", self.opacity_delta, 0.5)?;
        check("shoulder_delta", self.shoulder_delta, 0.3)?;
        check("chest_scale_delta", self.chest_scale_delta, 0.2)?;
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::invalid(alloc::format!("jitter = {} must be >= 0", self.jitter)));
        }
        Ok(())
    }
}

/// Axis-aligned pixel rectangle, inclusive of `x0, y0` and exclusive of `x1, y1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f32,
    cy: f32,
    rx: f32,
    ry: f32,
}

impl Ellipse {
    /// Coverage in [0, 1] with a one-pixel linear ramp at the border.
    fn coverage(&self, x: f32, y: f32) -> f32 {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        let r = libm::sqrtf(dx * dx + dy * dy);
        let dist = (r - 1.0) * self.rx.min(self.ry);
        (0.5 - dist).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Band {
    x0: f32,
    x1: f32,
    cy: f32,
    half: f32,
}

impl Band {
    fn coverage(&self, x: f32, y: f32) -> f32 {
        let dy = libm::fabsf(y - self.cy) - self.half;
        let dx = (self.x0 - x).max(x - self.x1);
        (0.5 - dy.max(dx)).clamp(0.0, 1.0)
    }
}

/// Resolved geometry and intensities of one phantom, in pixel units.
#[derive(Debug, Clone)]
pub struct PhantomGeometry {
    size: usize,
    torso: Ellipse,
    lungs: [Ellipse; 2],
    bands: [Band; 2],
    torso_level: f32,
    lung_level: f32,
    bone_level: f32,
    rib_period: f32,
    rib_phase: f32,
}

impl PhantomGeometry {
    pub fn new(params: &SynthParams, group: Group, item_seed: u64) -> Self {
        let mut rng = rng_from_seed(item_seed);
        let mut normal = || -> f32 { StandardNormal.sample(&mut rng) };
        let j = params.jitter;
        // Draw all perturbations unconditionally so both groups see the same ones.
        let shift_x = 0.5 * j * normal();
        let shift_y = 0.5 * j * normal();
        let scale_jit = 1.0 + j * normal();
        let torso_jit = j * normal();
        let lung_jit = j * normal();
        let band_jit = 1.0 + j * normal();
        let phase_jit = 20.0 * j * normal();

        let is_b = group == Group::B;
        let chest = if is_b { 1.0 + params.chest_scale_delta } else { 1.0 };
        let shoulder = if is_b { 1.0 + params.shoulder_delta } else { 1.0 };
        let opacity = if is_b { params.opacity_delta } else { 0.0 };

        let n = params.image_size as f32;
        let s = (scale_jit * chest).max(0.2);
        let cx = (0.5 + shift_x) * n;
        let cy = (0.58 + shift_y) * n;
        let torso = Ellipse { cx, cy, rx: 0.40 * s * n, ry: 0.40 * s * n };
        let lung = |side: f32| Ellipse {
            cx: cx + side * 0.17 * s * n,
            cy: cy - 0.03 * s * n,
            rx: 0.11 * s * n,
            ry: 0.24 * s * n,
        };
        let half = 0.5 * 0.045 * band_jit.max(0.2) * shoulder * n;
        let band_y = cy - 0.36 * s * n;
        let band = |side: f32| {
            let (a, b) = (cx + side * 0.05 * s * n, cx + side * 0.38 * s * n);
            Band { x0: a.min(b), x1: a.max(b), cy: band_y, half }
        };
        Self {
            size: params.image_size,
            torso,
            lungs: [lung(-1.0), lung(1.0)],
            bands: [band(-1.0), band(1.0)],
            torso_level: 0.15 + torso_jit,
            lung_level: -0.55 + lung_jit + opacity,
            bone_level: 0.75,
            rib_period: 0.07 * s * n,
            rib_phase: phase_jit,
        }
    }

    fn lung_coverage(&self, x: f32, y: f32) -> f32 {
        self.lungs[0].coverage(x, y).max(self.lungs[1].coverage(x, y))
    }

    /// True where the lung ellipses (including their soft border) cover the pixel.
    pub fn in_lungs(&self, px: usize, py: usize) -> bool {
        self.lung_coverage(px as f32 + 0.5, py as f32 + 0.5) > 0.0
    }

    /// Bounding boxes of the two shoulder bands, including the soft border.
    pub fn shoulder_boxes(&self) -> [PixelBox; 2] {
        let clamp = |v: f32| (libm::floorf(v).max(0.0) as usize).min(self.size);
        self.bands.map(|b| PixelBox {
            x0: clamp(b.x0 - 1.0),
            y0: clamp(b.cy - b.half - 1.0),
            x1: clamp(b.x1 + 2.0),
            y1: clamp(b.cy + b.half + 2.0),
        })
    }

    pub fn render(&self) -> ImageTensor {
        let n = self.size;
        let mut data = Vec::with_capacity(n * n);
        let omega = 2.0 * core::f32::consts::PI / self.rib_period;
        for py in 0..n {
            for px in 0..n {
                let (x, y) = (px as f32 + 0.5, py as f32 + 0.5);
                let mut v = -1.0 + self.torso.coverage(x, y) * (self.torso_level + 1.0);
                let wl = self.lung_coverage(x, y);
                if wl > 0.0 {
                    let rib = 0.12 * libm::sinf(omega * (y - self.torso.cy) + self.rib_phase).max(0.0);
                    v += wl * (self.lung_level + rib - v);
                }
                for band in &self.bands {
                    let wb = band.coverage(x, y);
                    if wb > 0.0 {
                        v += wb * (self.bone_level - v);
                    }
                }
                data.push(v.clamp(-1.0, 1.0));
            }
        }
        ImageTensor::new(n, data).expect("square buffer")
    }
}

/// Renders one phantom. Identical inputs give bit-identical images.
pub fn render_phantom(params: &SynthParams, group: Group, item_seed: u64) -> Result<ImageTensor> {
    params.validate()?;
    Ok(PhantomGeometry::new(params, group, item_seed).render())
}

/// Ground-truth group effect at a fixed item seed: `render(B) - render(A)`.
pub fn group_difference(params: &SynthParams, item_seed: u64) -> Result<Vec<f32>> {
    let a = render_phantom(params, Group::A, item_seed)?;
    let b = render_phantom(params, Group::B, item_seed)?;
    Ok(b.pixels().iter().zip(a.pixels()).map(|(b, a)| b - a).collect())
}

/// One planned cohort row.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortItem {
    pub index: usize,
    pub group: Group,
    pub item_seed: u64,
    pub split: Split,
}

impl CohortItem {
    pub fn file_name(&self) -> String {
        alloc::format!("img_{:05}.png", self.index)
    }

    pub fn item_seed_string(&self) -> String {
        self.item_seed.to_string()
    }
}

/// Plans a cohort of `2 * n_per_group` images: rows alternate A, B; item
/// seeds come from the cohort seed and row index; each group is split
/// 80/10/10 (rounded, test takes the remainder) in order of a hash of the
/// row index.
pub fn plan_cohort(params: &SynthParams, n_per_group: usize) -> Result<Vec<CohortItem>> {
    params.validate()?;
    if n_per_group == 0 {
        return Err(Error::invalid("n_per_group must be at least 1"));
    }
    let mut items: Vec<CohortItem> = (0..2 * n_per_group)
        .map(|index| CohortItem {
            index,
            group: if index % 2 == 0 { Group::A } else { Group::B },
            item_seed: derive_index_seed(params.seed, index as u64),
            split: Split::Train,
        })
        .collect();
    let n_train = libm::round(0.8 * n_per_group as f64) as usize;
    let n_val = libm::round(0.1 * n_per_group as f64) as usize;
    for group in [Group::A, Group::B] {
        let mut members: Vec<(u64, usize)> = items
            .iter()
            .filter(|it| it.group == group)
            .map(|it| {
                let mut key = [0u8; 16];
                key[..8].copy_from_slice(&params.seed.to_le_bytes());
                key[8..].copy_from_slice(&(it.index as u64).to_le_bytes());
                (fnv1a(&key), it.index)
            })
            .collect();
        members.sort_unstable();
        for (rank, &(_, index)) in members.iter().enumerate() {
            items[index].split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(items)
}
