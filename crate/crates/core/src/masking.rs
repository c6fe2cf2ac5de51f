//! Hierarchical condition masking (human / part / joint levels).
//!
//! A mask drops conditioning joints; dropped joints have their condition
//! entries zeroed. Training samples masks from an `HPJ-xyz` configuration;
//! inference masks are spelled out explicitly (`part:left_leg`, `joint:3`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::SkeletonDef;

/// Drop probabilities for the three mask levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    /// Probability the whole condition is dropped.
    pub p_h: f64,
    /// Per-part drop probability.
    pub p_p: f64,
    /// Per-joint drop probability.
    pub p_j: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            p_h: 0.0,
            p_p: 0.0,
            p_j: 0.0,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_h", self.p_h), ("p_p", self.p_p), ("p_j", self.p_j)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!(
                    "mask probability {name}={p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Renders back to the `HPJ-xyz` notation where possible.
    pub fn hpj_code(&self) -> String {
        let digit = |p: f64| -> char {
            if (p - 1.0).abs() < 1e-12 {
                'T'
            } else {
                let d = (p * 10.0).round() as u32;
                char::from_digit(d.min(9), 10).unwrap()
            }
        };
        format!("HPJ-{}{}{}", digit(self.p_h), digit(self.p_p), digit(self.p_j))
    }
}

/// Parses an `HPJ-xyz` code: digit `d` means probability `d/10`, `T` means 1.0.
pub fn parse_hpj(code: &str) -> Result<MaskConfig> {
    let body = code
        .strip_prefix("HPJ-")
        .ok_or_else(|| Error::validation(format!("mask code '{code}' must start with 'HPJ-'")))?;
    let chars: Vec<char> = body.chars().collect();
    if chars.len() != 3 {
        return Err(Error::validation(format!(
            "mask code '{code}' must have exactly three level characters"
        )));
    }
    let prob = |c: char| -> Result<f64> {
        match c {
            'T' => Ok(1.0),
            d if d.is_ascii_digit() => Ok(d.to_digit(10).unwrap() as f64 / 10.0),
            other => Err(Error::validation(format!(
                "mask code '{code}': invalid character '{other}'"
            ))),
        }
    };
    Ok(MaskConfig {
        p_h: prob(chars[0])?,
        p_p: prob(chars[1])?,
        p_j: prob(chars[2])?,
    })
}

/// Per-joint keep flags over the model joints (packing order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointMask {
    pub keep: Vec<bool>,
}

impl JointMask {
    pub fn all_keep(n: usize) -> Self {
        JointMask {
            keep: vec![true; n],
        }
    }

    pub fn all_drop(n: usize) -> Self {
        JointMask {
            keep: vec![false; n],
        }
    }

    pub fn dropped_count(&self) -> usize {
        self.keep.iter().filter(|&&k| !k).count()
    }
}

/// What a condition vector carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKind {
    None,
    Pose2d,
    Pose3d,
}

impl std::fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ConditionKind::None => "none",
            ConditionKind::Pose2d => "pose2d",
            ConditionKind::Pose3d => "pose3d",
        };
        f.write_str(s)
    }
}

/// Flat condition payload: three lanes per model joint.
///
/// 2D conditions carry zero in the third lane so 2D and 3D conditioning
/// share one width. `kind == None` implies all-zero values.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVector {
    pub values: Vec<f64>,
    pub kind: ConditionKind,
}

impl ConditionVector {
    pub fn none(model_joints: usize) -> Self {
        ConditionVector {
            values: vec![0.0; 3 * model_joints],
            kind: ConditionKind::None,
        }
    }

    pub fn joint_count(&self) -> usize {
        self.values.len() / 3
    }
}

/// The three level draws behind one sampled mask.
#[derive(Debug, Clone)]
pub struct MaskDraw {
    pub human_drop: bool,
    /// Part label -> dropped at the part level.
    pub part_drop: std::collections::BTreeMap<String, bool>,
    /// Per model joint, dropped at the joint level.
    pub joint_drop: Vec<bool>,
    pub mask: JointMask,
}

/// Samples the mask levels top-down: human level first, then parts, then
/// joints. Lower levels are skipped once the human level drops; the
/// composition is the elementwise AND of the levels either way.
pub fn sample_mask_levels<R: Rng>(cfg: &MaskConfig, skel: &SkeletonDef, rng: &mut R) -> MaskDraw {
    let n = skel.model_joints().len();
    let human_drop = cfg.p_h > 0.0 && rng.gen::<f64>() < cfg.p_h;
    let mut part_drop = std::collections::BTreeMap::new();
    let mut joint_drop = vec![false; n];
    let mut mask = if human_drop {
        JointMask::all_drop(n)
    } else {
        JointMask::all_keep(n)
    };
    if !human_drop {
        if cfg.p_p > 0.0 {
            for (label, positions) in skel.part_model_positions() {
                let drop = rng.gen::<f64>() < cfg.p_p;
                if drop {
                    for &pos in &positions {
                        mask.keep[pos] = false;
                    }
                }
                part_drop.insert(label, drop);
            }
        }
        if cfg.p_j > 0.0 {
            for (pos, keep) in mask.keep.iter_mut().enumerate() {
                if *keep && rng.gen::<f64>() < cfg.p_j {
                    *keep = false;
                    joint_drop[pos] = true;
                }
            }
        }
    }
    MaskDraw {
        human_drop,
        part_drop,
        joint_drop,
        mask,
    }
}

/// Samples a hierarchical mask per the configured level probabilities.
pub fn sample_mask<R: Rng>(cfg: &MaskConfig, skel: &SkeletonDef, rng: &mut R) -> JointMask {
    sample_mask_levels(cfg, skel, rng).mask
}

/// Zeroes the lanes of dropped joints; kept entries and kind are unchanged.
pub fn apply_mask(c: &ConditionVector, m: &JointMask) -> Result<ConditionVector> {
    if c.values.len() != 3 * m.keep.len() {
        return Err(Error::shape(
            "apply_mask",
            3 * m.keep.len(),
            c.values.len(),
        ));
    }
    let mut out = c.clone();
    for (pos, &keep) in m.keep.iter().enumerate() {
        if !keep {
            out.values[3 * pos..3 * pos + 3].fill(0.0);
        }
    }
    Ok(out)
}

/// An explicit inference-time occlusion: named parts and joint indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OcclusionSpec {
    pub parts: Vec<String>,
    pub joints: Vec<usize>,
}

impl OcclusionSpec {
    /// Parses a comma-separated spec like `part:left_leg,joint:3,joint:7`.
    ///
    /// Joint indices refer to the skeleton's original joint numbering.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut out = OcclusionSpec::default();
        for item in spec.split(',').filter(|s| !s.is_empty()) {
            if let Some(name) = item.strip_prefix("part:") {
                out.parts.push(name.to_string());
            } else if let Some(idx) = item.strip_prefix("joint:") {
                let joint: usize = idx.parse().map_err(|_| {
                    Error::validation(format!("occlusion spec: bad joint index '{idx}'"))
                })?;
                out.joints.push(joint);
            } else {
                return Err(Error::validation(format!(
                    "occlusion spec item '{item}' must be part:<name> or joint:<index>"
                )));
            }
        }
        Ok(out)
    }

    /// Resolves to a keep-mask over the model joints.
    pub fn to_mask(&self, skel: &SkeletonDef) -> Result<JointMask> {
        let mut mask = JointMask::all_keep(skel.model_joints().len());
        let part_positions = skel.part_model_positions();
        for part in &self.parts {
            let positions = part_positions.get(part).ok_or_else(|| {
                Error::validation(format!(
                    "unknown part '{part}' (have: {})",
                    part_positions
                        .keys()
                        .cloned()
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            })?;
            for &pos in positions {
                mask.keep[pos] = false;
            }
        }
        for &joint in &self.joints {
            let pos = skel.model_position(joint).ok_or_else(|| {
                Error::validation(format!(
                    "joint {joint} is not a model joint (root or out of range)"
                ))
            })?;
            mask.keep[pos] = false;
        }
        Ok(mask)
    }
}
