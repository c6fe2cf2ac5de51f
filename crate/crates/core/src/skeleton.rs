//! Articulated skeleton definition, pose representations and packing.
//!
//! Poses live in meters, root-relative. A pose is packed into a flat
//! model vector (joint-major `[x, y, z]`, root excluded by default) before
//! entering the diffusion machinery; conditions follow the same joint order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five body parts used by the part-level condition mask.
pub const PART_LABELS: [&str; 5] = ["left_leg", "right_leg", "left_arm", "right_arm", "torso"];

/// Skeleton topology: joint names, parent tree and body-part assignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonDef {
    pub joint_names: Vec<String>,
    /// `parent[j]` is the parent joint of `j`; the root is its own parent.
    pub parent: Vec<usize>,
    pub root_index: usize,
    /// Part label -> joint indices. Parts partition the non-root joints.
    pub parts: BTreeMap<String, Vec<usize>>,
    /// Keep the (identically zero) root coordinates in the model vector.
    #[serde(default)]
    pub include_root_in_model: bool,
}

impl SkeletonDef {
    /// Validates the tree and part structure, returning the definition.
    pub fn new(
        joint_names: Vec<String>,
        parent: Vec<usize>,
        root_index: usize,
        parts: BTreeMap<String, Vec<usize>>,
        include_root_in_model: bool,
    ) -> Result<Self> {
        let def = SkeletonDef {
            joint_names,
            parent,
            root_index,
            parts,
            include_root_in_model,
        };
        def.validate()?;
        Ok(def)
    }

    /// The built-in 17-joint skeleton in the common mocap convention.
    pub fn h36m17() -> Self {
        let joint_names = [
            "pelvis",
            "right_hip",
            "right_knee",
            "right_ankle",
            "left_hip",
            "left_knee",
            "left_ankle",
            "spine",
            "thorax",
            "neck",
            "head",
            "left_shoulder",
            "left_elbow",
            "left_wrist",
            "right_shoulder",
            "right_elbow",
            "right_wrist",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let parent = vec![0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15];
        let mut parts = BTreeMap::new();
        parts.insert("right_leg".to_string(), vec![1, 2, 3]);
        parts.insert("left_leg".to_string(), vec![4, 5, 6]);
        parts.insert("torso".to_string(), vec![7, 8, 9, 10]);
        parts.insert("left_arm".to_string(), vec![11, 12, 13]);
        parts.insert("right_arm".to_string(), vec![14, 15, 16]);
        SkeletonDef::new(joint_names, parent, 0, parts, false)
            .expect("built-in skeleton is valid")
    }

    /// Looks up a skeleton by name. Only `"h36m17"` is compiled in.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "h36m17" => Ok(Self::h36m17()),
            other => Err(Error::validation(format!(
                "unknown skeleton '{other}' (built-in: h36m17)"
            ))),
        }
    }

    /// Parses a skeleton from its JSON document form.
    pub fn from_json(json: &str) -> Result<Self> {
        let def: SkeletonDef = serde_json::from_str(json)?;
        def.validate()?;
        Ok(def)
    }

    fn validate(&self) -> Result<()> {
        let j = self.joint_names.len();
        if j == 0 {
            return Err(Error::validation("skeleton has no joints"));
        }
        if self.parent.len() != j {
            return Err(Error::shape("skeleton parent array", j, self.parent.len()));
        }
        if self.root_index >= j {
            return Err(Error::validation(format!(
                "root_index {} out of range for {} joints",
                self.root_index, j
            )));
        }
        // Exactly one self-parent, and it is the root.
        for (i, &p) in self.parent.iter().enumerate() {
            if p >= j {
                return Err(Error::validation(format!(
                    "parent[{i}] = {p} out of range"
                )));
            }
            if (p == i) != (i == self.root_index) {
                return Err(Error::validation(format!(
                    "joint {i}: self-parent allowed only for the root ({})",
                    self.root_index
                )));
            }
        }
        // Every joint must reach the root without cycles.
        for start in 0..j {
            let mut cur = start;
            for _ in 0..=j {
                if cur == self.root_index {
                    break;
                }
                cur = self.parent[cur];
            }
            if cur != self.root_index {
                return Err(Error::validation(format!(
                    "joint {start} does not reach the root (cycle in parent array)"
                )));
            }
        }
        // Parts partition the non-root joints.
        let mut seen = vec![false; j];
        for (label, joints) in &self.parts {
            for &joint in joints {
                if joint >= j {
                    return Err(Error::validation(format!(
                        "part '{label}' references joint {joint} out of range"
                    )));
                }
                if joint == self.root_index {
                    return Err(Error::validation(format!(
                        "part '{label}' must not contain the root joint"
                    )));
                }
                if seen[joint] {
                    return Err(Error::validation(format!(
                        "joint {joint} assigned to more than one part"
                    )));
                }
                seen[joint] = true;
            }
        }
        for (i, &s) in seen.iter().enumerate() {
            if i != self.root_index && !s {
                return Err(Error::validation(format!(
                    "joint {i} ('{}') belongs to no part",
                    self.joint_names[i]
                )));
            }
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    /// Joints that enter the model vector, in packing order.
    pub fn model_joints(&self) -> Vec<usize> {
        (0..self.joint_count())
            .filter(|&i| self.include_root_in_model || i != self.root_index)
            .collect()
    }

    /// Length of the flat model vector: `3 * (J - 1)` unless the root is kept.
    pub fn model_dim(&self) -> usize {
        3 * self.model_joints().len()
    }

    /// Maps an original joint index to its position in the packing order.
    pub fn model_position(&self, joint: usize) -> Option<usize> {
        self.model_joints().iter().position(|&i| i == joint)
    }

    /// Part label -> positions in the packing order.
    pub fn part_model_positions(&self) -> BTreeMap<String, Vec<usize>> {
        self.parts
            .iter()
            .map(|(label, joints)| {
                let pos = joints
                    .iter()
                    .filter_map(|&joint| self.model_position(joint))
                    .collect();
                (label.clone(), pos)
            })
            .collect()
    }
}

/// A 3D pose: one `[x, y, z]` row per joint, meters, root-relative.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3D {
    pub coords: Vec<[f64; 3]>,
}

impl Pose3D {
    pub fn new(coords: Vec<[f64; 3]>) -> Result<Self> {
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("pose contains non-finite coordinates"));
        }
        Ok(Pose3D { coords })
    }

    pub fn zeros(joints: usize) -> Self {
        Pose3D {
            coords: vec![[0.0; 3]; joints],
        }
    }

    pub fn joint_count(&self) -> usize {
        self.coords.len()
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().flatten().all(|v| v.is_finite())
    }
}

/// A 2D pose in normalized image-plane units.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose2D {
    pub coords: Vec<[f64; 2]>,
}

impl Pose2D {
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("2d pose contains non-finite coordinates"));
        }
        Ok(Pose2D { coords })
    }

    pub fn joint_count(&self) -> usize {
        self.coords.len()
    }
}

/// Camera used to synthesize 2D conditions from 3D poses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CameraModel {
    /// Drop the depth axis.
    Orthographic,
    /// Pinhole at `subject_distance` meters in front of the root.
    Perspective { focal: f64, subject_distance: f64 },
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel::Orthographic
    }
}

/// Translates a pose so the root joint sits exactly at the origin.
pub fn root_center(pose: &Pose3D, skel: &SkeletonDef) -> Result<Pose3D> {
    if !pose.is_finite() {
        return Err(Error::validation("root_center: non-finite pose"));
    }
    if pose.joint_count() != skel.joint_count() {
        return Err(Error::shape(
            "root_center",
            skel.joint_count(),
            pose.joint_count(),
        ));
    }
    let root = pose.coords[skel.root_index];
    let coords = pose
        .coords
        .iter()
        .map(|c| [c[0] - root[0], c[1] - root[1], c[2] - root[2]])
        .collect();
    Ok(Pose3D { coords })
}

/// Flattens a root-centered pose into the model vector.
pub fn pack(pose: &Pose3D, skel: &SkeletonDef) -> Result<Vec<f64>> {
    if pose.joint_count() != skel.joint_count() {
        return Err(Error::shape("pack", skel.joint_count(), pose.joint_count()));
    }
    let mut out = Vec::with_capacity(skel.model_dim());
    for joint in skel.model_joints() {
        out.extend_from_slice(&pose.coords[joint]);
    }
    Ok(out)
}

/// Inverse of [`pack`]: root row restored as zero.
pub fn unpack(vector: &[f64], skel: &SkeletonDef) -> Result<Pose3D> {
    if vector.len() != skel.model_dim() {
        return Err(Error::shape("unpack", skel.model_dim(), vector.len()));
    }
    let mut coords = vec![[0.0f64; 3]; skel.joint_count()];
    for (pos, joint) in skel.model_joints().into_iter().enumerate() {
        coords[joint] = [vector[3 * pos], vector[3 * pos + 1], vector[3 * pos + 2]];
    }
    Ok(Pose3D { coords })
}

/// Projects a 3D pose to the 2D image plane.
pub fn project(pose: &Pose3D, cam: &CameraModel) -> Result<Pose2D> {
    let coords = match *cam {
        CameraModel::Orthographic => pose.coords.iter().map(|c| [c[0], c[1]]).collect(),
        CameraModel::Perspective {
            focal,
            subject_distance,
        } => {
            let mut out = Vec::with_capacity(pose.joint_count());
            for (i, c) in pose.coords.iter().enumerate() {
                let depth = c[2] + subject_distance;
                if depth <= 0.0 {
                    return Err(Error::validation(format!(
                        "perspective projection: joint {i} has non-positive depth {depth}"
                    )));
                }
                out.push([focal * c[0] / depth, focal * c[1] / depth]);
            }
            out
        }
    };
    Pose2D::new(coords)
}

/// Euclidean length of each non-root joint to its parent, packing order.
pub fn bone_lengths(pose: &Pose3D, skel: &SkeletonDef) -> Result<Vec<f64>> {
    if pose.joint_count() != skel.joint_count() {
        return Err(Error::shape(
            "bone_lengths",
            skel.joint_count(),
            pose.joint_count(),
        ));
    }
    let mut out = Vec::with_capacity(skel.joint_count() - 1);
    for joint in 0..skel.joint_count() {
        if joint == skel.root_index {
            continue;
        }
        let child = pose.coords[joint];
        let parent = pose.coords[skel.parent[joint]];
        let d = [
            child[0] - parent[0],
            child[1] - parent[1],
            child[2] - parent[2],
        ];
        out.push((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shifted(pose: &Pose3D, by: [f64; 3]) -> Pose3D {
        Pose3D {
            coords: pose
                .coords
                .iter()
                .map(|c| [c[0] + by[0], c[1] + by[1], c[2] + by[2]])
                .collect(),
        }
    }

    #[test]
    fn h36m17_shape() {
        let skel = SkeletonDef::h36m17();
        assert_eq!(skel.joint_count(), 17);
        assert_eq!(skel.model_dim(), 48);
        assert_eq!(skel.parts.len(), 5);
    }

    #[test]
    fn part_map_partitions_non_root() {
        let skel = SkeletonDef::h36m17();
        let mut covered: Vec<usize> = skel.parts.values().flatten().copied().collect();
        covered.sort_unstable();
        assert_eq!(covered, (1..17).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_cyclic_parent() {
        let mut skel = SkeletonDef::h36m17();
        skel.parent[2] = 3; // 2 -> 3 -> 2 cycle
        assert!(skel.validate().is_err());
    }

    #[test]
    fn rejects_overlapping_parts() {
        let mut skel = SkeletonDef::h36m17();
        skel.parts.get_mut("torso").unwrap().push(1);
        assert!(skel.validate().is_err());
    }

    #[test]
    fn root_center_fixed_point_and_translation_invariance() {
        let skel = SkeletonDef::h36m17();
        let base = crate::data::anchor_poses()[0].clone();
        let centered = root_center(&base, &skel).unwrap();
        assert_eq!(centered, base, "already-centered pose is a fixed point");

        let moved = shifted(&base, [1.0, 2.0, 3.0]);
        assert_eq!(root_center(&moved, &skel).unwrap(), centered);
    }

    #[test]
    fn root_center_idempotent_on_random_pose() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let skel = SkeletonDef::h36m17();
        let pose = Pose3D::new(
            (0..17)
                .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
                .collect(),
        )
        .unwrap();
        let once = root_center(&pose, &skel).unwrap();
        assert_eq!(once.coords[0], [0.0, 0.0, 0.0]);
        let twice = root_center(&once, &skel).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn root_center_rejects_non_finite() {
        let skel = SkeletonDef::h36m17();
        let mut pose = Pose3D::zeros(17);
        pose.coords[3][1] = f64::NAN;
        assert!(root_center(&pose, &skel).is_err());
    }

    #[test]
    fn pack_shape_and_zero() {
        let skel = SkeletonDef::h36m17();
        let zero = Pose3D::zeros(17);
        let v = pack(&zero, &skel).unwrap();
        assert_eq!(v.len(), 48);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pack_unpack_round_trip_exact() {
        let skel = SkeletonDef::h36m17();
        for pose in crate::data::anchor_poses() {
            let v = pack(&pose, &skel).unwrap();
            let back = unpack(&v, &skel).unwrap();
            assert_eq!(back, pose);
        }
    }

    #[test]
    fn pack_with_root_included() {
        let mut skel = SkeletonDef::h36m17();
        skel.include_root_in_model = true;
        assert_eq!(skel.model_dim(), 51);
        let pose = crate::data::anchor_poses()[1].clone();
        let v = pack(&pose, &skel).unwrap();
        assert_eq!(v.len(), 51);
        assert_eq!(unpack(&v, &skel).unwrap(), pose);
    }

    #[test]
    fn pack_dimension_mismatch() {
        let skel = SkeletonDef::h36m17();
        assert!(pack(&Pose3D::zeros(12), &skel).is_err());
        assert!(unpack(&vec![0.0; 20], &skel).is_err());
    }

    #[test]
    fn orthographic_drops_depth() {
        let pose = crate::data::anchor_poses()[0].clone();
        let p2 = project(&pose, &CameraModel::Orthographic).unwrap();
        for (a, b) in pose.coords.iter().zip(&p2.coords) {
            assert_eq!([a[0], a[1]], *b);
        }
    }

    #[test]
    fn perspective_on_axis_and_hand_value() {
        let cam = CameraModel::Perspective {
            focal: 1.0,
            subject_distance: 5.0,
        };
        let pose = Pose3D::new(vec![[0.0, 0.0, 0.0], [1.0, 2.0, 0.0]]).unwrap();
        let p2 = project(&pose, &cam).unwrap();
        assert_eq!(p2.coords[0], [0.0, 0.0]);
        // u = 1/5, v = 2/5
        assert!((p2.coords[1][0] - 0.2).abs() < 1e-15);
        assert!((p2.coords[1][1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn perspective_rejects_non_positive_depth() {
        let cam = CameraModel::Perspective {
            focal: 1.0,
            subject_distance: 1.0,
        };
        let pose = Pose3D::new(vec![[0.0, 0.0, -1.5]]).unwrap();
        assert!(project(&pose, &cam).is_err());
    }

    #[test]
    fn bone_lengths_basics() {
        let skel = SkeletonDef::h36m17();
        let zero = Pose3D::zeros(17);
        assert!(bone_lengths(&zero, &skel)
            .unwrap()
            .iter()
            .all(|&b| b == 0.0));

        let mut pose = Pose3D::zeros(17);
        pose.coords[1] = [0.0, 0.0, 0.4]; // child of root
        let lens = bone_lengths(&pose, &skel).unwrap();
        assert!((lens[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn bone_lengths_scale_with_pose() {
        let skel = SkeletonDef::h36m17();
        let pose = crate::data::anchor_poses()[2].clone();
        let lens = bone_lengths(&pose, &skel).unwrap();
        let scaled = Pose3D {
            coords: pose
                .coords
                .iter()
                .map(|c| [2.5 * c[0], 2.5 * c[1], 2.5 * c[2]])
                .collect(),
        };
        let scaled_lens = bone_lengths(&scaled, &skel).unwrap();
        for (a, b) in lens.iter().zip(&scaled_lens) {
            assert!((b - 2.5 * a).abs() < 1e-12);
        }
    }

    #[test]
    fn skeleton_json_round_trip() {
        let skel = SkeletonDef::h36m17();
        let json = serde_json::to_string(&skel).unwrap();
        let back = SkeletonDef::from_json(&json).unwrap();
        assert_eq!(back.joint_names, skel.joint_names);
        assert_eq!(back.parent, skel.parent);
        assert_eq!(back.parts, skel.parts);
    }

    #[test]
    fn skeleton_json_rejects_unknown_keys() {
        let json = r#"{"joint_names":["a"],"parent":[0],"root_index":0,"parts":{},"bogus":1}"#;
        assert!(SkeletonDef::from_json(json).is_err());
    }
}
