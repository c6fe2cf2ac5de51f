//! Dataset I/O, synthetic benchmark generation and condition construction.
//!
//! The synthetic benchmark is a Gaussian mixture around a library of
//! hand-posed anchor skeletons. Its diffused marginals stay Gaussian
//! mixtures in closed form, which yields exact score oracles for testing
//! the sampler and the trained network.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::masking::{ConditionKind, ConditionVector};
use crate::score::ScoreModel;
use crate::skeleton::{pack, project, root_center, CameraModel, Pose3D, SkeletonDef};

const GFDS_MAGIC: &[u8; 4] = b"GFDS";
const GFDS_VERSION: u32 = 1;

/// A set of poses sharing one skeleton, with optional per-pose metadata.
#[derive(Debug, Clone)]
pub struct PoseDataset {
    pub skeleton_name: String,
    pub skeleton: SkeletonDef,
    pub poses: Vec<Pose3D>,
    /// Per-pose string metadata (subject, action, camera ...).
    pub per_pose_meta: Option<Vec<BTreeMap<String, String>>>,
    /// When this file stores hypothesis sets: samples per source item.
    pub hyps_per_item: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GfdsMetadata {
    skeleton: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    skeleton_def: Option<SkeletonDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    per_pose: Option<Vec<BTreeMap<String, String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hyps_per_item: Option<u32>,
}

impl PoseDataset {
    pub fn new(skeleton_name: &str, skeleton: SkeletonDef, poses: Vec<Pose3D>) -> Result<Self> {
        for (i, pose) in poses.iter().enumerate() {
            if pose.joint_count() != skeleton.joint_count() {
                return Err(Error::shape(
                    format!("dataset pose {i}"),
                    skeleton.joint_count(),
                    pose.joint_count(),
                ));
            }
            if !pose.is_finite() {
                return Err(Error::validation(format!("dataset pose {i} is non-finite")));
            }
        }
        // Root-center on construction so the invariant holds everywhere else.
        let poses = poses
            .iter()
            .map(|p| root_center(p, &skeleton))
            .collect::<Result<Vec<_>>>()?;
        Ok(PoseDataset {
            skeleton_name: skeleton_name.to_string(),
            skeleton,
            poses,
            per_pose_meta: None,
            hyps_per_item: None,
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Packs every pose into a row of a matrix in the requested precision.
    pub fn packed_matrix<T: Element>(&self) -> Result<Array2<T>> {
        let dim = self.skeleton.model_dim();
        let mut out = Array2::zeros((self.len(), dim));
        for (i, pose) in self.poses.iter().enumerate() {
            let v = pack(pose, &self.skeleton)?;
            for (j, &x) in v.iter().enumerate() {
                out[[i, j]] = T::from_f64(x);
            }
        }
        Ok(out)
    }

    /// Serializes to the GFDS container.
    ///
    /// Layout: magic `GFDS`, u32 version, u32 joint count, u64 pose count,
    /// u64 metadata length + UTF-8 JSON metadata, then `count * J * 3`
    /// little-endian f32 coordinates in meters.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = GfdsMetadata {
            skeleton: self.skeleton_name.clone(),
            skeleton_def: if SkeletonDef::by_name(&self.skeleton_name).is_ok() {
                None
            } else {
                Some(self.skeleton.clone())
            },
            per_pose: self.per_pose_meta.clone(),
            hyps_per_item: self.hyps_per_item,
        };
        let meta_json = serde_json::to_vec(&meta)?;
        let j = self.skeleton.joint_count();
        let mut out = Vec::with_capacity(32 + meta_json.len() + self.len() * j * 12);
        out.extend_from_slice(GFDS_MAGIC);
        out.extend_from_slice(&GFDS_VERSION.to_le_bytes());
        out.extend_from_slice(&(j as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta_json);
        for pose in &self.poses {
            for c in &pose.coords {
                for &v in c {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let magic = cur.take_bytes(4, "magic")?;
        if magic != GFDS_MAGIC {
            return Err(Error::format(format!(
                "bad dataset magic {:?}, expected \"GFDS\"",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = cur.take_u32("version")?;
        if version != GFDS_VERSION {
            return Err(Error::format(format!(
                "unsupported dataset version {version}, expected {GFDS_VERSION}"
            )));
        }
        let joints = cur.take_u32("joint count")? as usize;
        let count = cur.take_u64("pose count")? as usize;
        let meta_len = cur.take_u64("metadata length")? as usize;
        let meta_bytes = cur.take_bytes(meta_len, "metadata block")?;
        let meta: GfdsMetadata = serde_json::from_slice(meta_bytes)
            .map_err(|e| Error::format(format!("metadata JSON: {e}")))?;

        let need = count * joints * 3 * 4;
        if cur.remaining() != need {
            return Err(Error::format(format!(
                "payload length mismatch: need {need} bytes for {count} poses x {joints} joints, \
                 have {} ({} missing)",
                cur.remaining(),
                need.saturating_sub(cur.remaining())
            )));
        }

        let skeleton = match meta.skeleton_def {
            Some(def) => def,
            None => SkeletonDef::by_name(&meta.skeleton)?,
        };
        if skeleton.joint_count() != joints {
            return Err(Error::format(format!(
                "header says {joints} joints but skeleton '{}' has {}",
                meta.skeleton,
                skeleton.joint_count()
            )));
        }

        let mut poses = Vec::with_capacity(count);
        for p in 0..count {
            let mut coords = vec![[0.0f64; 3]; joints];
            for c in coords.iter_mut() {
                for v in c.iter_mut() {
                    *v = f32::from_le_bytes(cur.take_bytes(4, "pose payload")?.try_into().unwrap())
                        as f64;
                }
            }
            let pose = Pose3D::new(coords)
                .map_err(|_| Error::format(format!("pose {p} contains non-finite values")))?;
            poses.push(pose);
        }

        let mut ds = PoseDataset::new(&meta.skeleton, skeleton, poses)?;
        ds.per_pose_meta = meta.per_pose;
        ds.hyps_per_item = meta.hyps_per_item;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Imports plain numeric CSV: one pose per row, `3 J` columns, optional
    /// header row. `mm = true` divides values by 1000 on import.
    pub fn from_csv(text: &str, skeleton: SkeletonDef, name: &str, mm: bool) -> Result<Self> {
        let want = skeleton.joint_count() * 3;
        let mut poses = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: std::result::Result<Vec<f64>, _> =
                fields.iter().map(|f| f.parse::<f64>()).collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if poses.is_empty() && lineno == 0 => continue, // header row
                Err(e) => {
                    return Err(Error::format(format!(
                        "csv line {}: unparseable number ({e})",
                        lineno + 1
                    )))
                }
            };
            if values.len() != want {
                return Err(Error::format(format!(
                    "csv line {}: expected {want} columns, got {}",
                    lineno + 1,
                    values.len()
                )));
            }
            let scale = if mm { 1e-3 } else { 1.0 };
            let coords = values
                .chunks_exact(3)
                .map(|c| [c[0] * scale, c[1] * scale, c[2] * scale])
                .collect();
            poses.push(Pose3D::new(coords)?);
        }
        PoseDataset::new(name, skeleton, poses)
    }

    /// Exports to the same plain CSV layout (meters).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for pose in &self.poses {
            let mut first = true;
            for c in &pose.coords {
                for v in c {
                    if !first {
                        out.push(',');
                    }
                    out.push_str(&format!("{v}"));
                    first = false;
                }
            }
            out.push('\n');
        }
        out
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take_bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(format!(
                "truncated while reading {what}: need {n} bytes, have {} ({} missing)",
                self.remaining(),
                n - self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn take_u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take_bytes(4, what)?.try_into().unwrap(),
        ))
    }

    fn take_u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take_bytes(8, what)?.try_into().unwrap(),
        ))
    }
}

/// The five hand-posed anchor skeletons (stand, sit, reach, crouch, step),
/// root-centered, meters, ~1.7 m stature.
pub fn anchor_poses() -> Vec<Pose3D> {
    let stand = vec![
        [0.00, 0.00, 0.00],
        [0.13, 0.00, 0.00],
        [0.13, -0.45, 0.00],
        [0.13, -0.90, 0.00],
        [-0.13, 0.00, 0.00],
        [-0.13, -0.45, 0.00],
        [-0.13, -0.90, 0.00],
        [0.00, 0.25, 0.00],
        [0.00, 0.50, 0.00],
        [0.00, 0.60, 0.03],
        [0.00, 0.72, 0.05],
        [-0.18, 0.50, 0.00],
        [-0.22, 0.24, 0.00],
        [-0.24, 0.00, 0.02],
        [0.18, 0.50, 0.00],
        [0.22, 0.24, 0.00],
        [0.24, 0.00, 0.02],
    ];
    let sit = vec![
        [0.00, 0.00, 0.00],
        [0.13, 0.00, 0.00],
        [0.13, 0.00, 0.45],
        [0.13, -0.45, 0.45],
        [-0.13, 0.00, 0.00],
        [-0.13, 0.00, 0.45],
        [-0.13, -0.45, 0.45],
        [0.00, 0.25, 0.00],
        [0.00, 0.50, 0.00],
        [0.00, 0.60, 0.03],
        [0.00, 0.72, 0.05],
        [-0.18, 0.50, 0.00],
        [-0.20, 0.25, 0.10],
        [-0.18, 0.06, 0.30],
        [0.18, 0.50, 0.00],
        [0.20, 0.25, 0.10],
        [0.18, 0.06, 0.30],
    ];
    let reach = vec![
        [0.00, 0.00, 0.00],
        [0.13, 0.00, 0.00],
        [0.13, -0.45, 0.00],
        [0.13, -0.90, 0.00],
        [-0.13, 0.00, 0.00],
        [-0.13, -0.45, 0.00],
        [-0.13, -0.90, 0.00],
        [0.00, 0.25, 0.00],
        [0.00, 0.50, 0.00],
        [0.00, 0.60, 0.03],
        [0.00, 0.72, 0.05],
        [-0.18, 0.50, 0.00],
        [-0.20, 0.76, 0.02],
        [-0.21, 1.00, 0.04],
        [0.18, 0.50, 0.00],
        [0.20, 0.76, 0.02],
        [0.21, 1.00, 0.04],
    ];
    let crouch = vec![
        [0.00, 0.00, 0.00],
        [0.13, 0.00, 0.00],
        [0.13, -0.25, 0.30],
        [0.13, -0.60, 0.12],
        [-0.13, 0.00, 0.00],
        [-0.13, -0.25, 0.30],
        [-0.13, -0.60, 0.12],
        [0.00, 0.24, 0.07],
        [0.00, 0.46, 0.16],
        [0.00, 0.54, 0.22],
        [0.00, 0.64, 0.28],
        [-0.18, 0.46, 0.16],
        [-0.20, 0.22, 0.28],
        [-0.18, 0.18, 0.50],
        [0.18, 0.46, 0.16],
        [0.20, 0.22, 0.28],
        [0.18, 0.18, 0.50],
    ];
    let step = vec![
        [0.00, 0.00, 0.00],
        [0.13, 0.00, 0.00],
        [0.13, -0.42, 0.15],
        [0.13, -0.85, 0.28],
        [-0.13, 0.00, 0.00],
        [-0.13, -0.44, -0.10],
        [-0.13, -0.86, -0.22],
        [0.00, 0.25, 0.00],
        [0.00, 0.50, 0.00],
        [0.00, 0.60, 0.03],
        [0.00, 0.72, 0.05],
        [-0.18, 0.50, 0.00],
        [-0.21, 0.25, 0.12],
        [-0.23, 0.02, 0.25],
        [0.18, 0.50, 0.00],
        [0.21, 0.23, -0.10],
        [0.23, 0.00, -0.20],
    ];
    [stand, sit, reach, crouch, step]
        .into_iter()
        .map(|coords| Pose3D { coords })
        .collect()
}

/// Specification of the Gaussian-mixture pose benchmark.
#[derive(Debug, Clone)]
pub struct GmmBenchSpec {
    pub anchors: Vec<Pose3D>,
    /// Isotropic per-coordinate noise around each anchor, meters.
    pub component_std: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl GmmBenchSpec {
    /// Uses the first `k` built-in anchor poses.
    pub fn builtin(k: usize, component_std: f64, train_size: usize, seed: u64) -> Result<Self> {
        let all = anchor_poses();
        if k == 0 || k > all.len() {
            return Err(Error::validation(format!(
                "GMM benchmark supports 1..={} anchors, got {k}",
                all.len()
            )));
        }
        if component_std < 0.0 {
            return Err(Error::validation("component_std must be >= 0"));
        }
        Ok(GmmBenchSpec {
            anchors: all.into_iter().take(k).collect(),
            component_std,
            train_size,
            test_size: 0,
            seed,
        })
    }
}

/// Draws `count` poses: uniform anchor choice plus isotropic noise on the
/// non-root joints (the root stays pinned at the origin).
fn draw_gmm_poses(
    spec: &GmmBenchSpec,
    skel: &SkeletonDef,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Pose3D> {
    let mut poses = Vec::with_capacity(count);
    for _ in 0..count {
        let anchor = &spec.anchors[rng.gen_range(0..spec.anchors.len())];
        let mut coords = anchor.coords.clone();
        if spec.component_std > 0.0 {
            for (j, c) in coords.iter_mut().enumerate() {
                if j == skel.root_index {
                    continue;
                }
                for v in c.iter_mut() {
                    let n: f64 = rng.sample(StandardNormal);
                    *v += spec.component_std * n;
                }
            }
        }
        poses.push(Pose3D { coords });
    }
    poses
}

/// Synthesizes the training split of the GMM benchmark.
pub fn synth_gmm_dataset(spec: &GmmBenchSpec) -> Result<PoseDataset> {
    let skel = SkeletonDef::h36m17();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let poses = draw_gmm_poses(spec, &skel, spec.train_size, &mut rng);
    PoseDataset::new("h36m17", skel, poses)
}

/// Synthesizes a held-out test split (decorrelated from the training draw).
pub fn synth_gmm_test_set(spec: &GmmBenchSpec, count: usize) -> Result<PoseDataset> {
    let skel = SkeletonDef::h36m17();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let poses = draw_gmm_poses(spec, &skel, count, &mut rng);
    PoseDataset::new("h36m17", skel, poses)
}

/// Exact score of the diffused GMM benchmark in model-vector space.
///
/// At time `t` the marginal is `(1/K) sum_k N(x; alpha a_k, v I)` with
/// `v = alpha^2 std^2 + sigma^2`, so the score is a softmax-weighted pull
/// toward the shrunk anchors, computed with log-sum-exp stabilization.
#[derive(Debug, Clone)]
pub struct GmmScore {
    anchors: Vec<Vec<f64>>,
    component_std: f64,
    sched: NoiseSchedule,
    dim: usize,
}

impl GmmScore {
    pub fn new(spec: &GmmBenchSpec, skel: &SkeletonDef, sched: NoiseSchedule) -> Result<Self> {
        let anchors = spec
            .anchors
            .iter()
            .map(|a| pack(a, skel))
            .collect::<Result<Vec<_>>>()?;
        Ok(GmmScore {
            anchors,
            component_std: spec.component_std,
            sched,
            dim: skel.model_dim(),
        })
    }

    pub fn from_anchors(
        anchors: Vec<Vec<f64>>,
        component_std: f64,
        sched: NoiseSchedule,
    ) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::validation("GMM score needs at least one anchor"));
        }
        let dim = anchors[0].len();
        if anchors.iter().any(|a| a.len() != dim) {
            return Err(Error::validation("GMM anchors must share one dimension"));
        }
        Ok(GmmScore {
            anchors,
            component_std,
            sched,
            dim,
        })
    }

    /// Marginal variance per coordinate at time `t`.
    pub fn marginal_var(&self, t: f64) -> Result<f64> {
        let c = self.sched.perturb_coeffs(t)?;
        let v = c.alpha * c.alpha * self.component_std * self.component_std + c.sigma * c.sigma;
        if v <= 0.0 {
            return Err(Error::validation(format!(
                "GMM marginal is singular at t={t} with component_std={}",
                self.component_std
            )));
        }
        Ok(v)
    }

    /// Log-density of the diffused mixture (up to the normalization shared
    /// by all components), used by the finite-difference oracle tests.
    pub fn log_density(&self, x: &[f64], t: f64) -> Result<f64> {
        let c = self.sched.perturb_coeffs(t)?;
        let v = self.marginal_var(t)?;
        let mut logs = Vec::with_capacity(self.anchors.len());
        for a in &self.anchors {
            let sq: f64 = x
                .iter()
                .zip(a)
                .map(|(&xi, &ai)| {
                    let d = xi - c.alpha * ai;
                    d * d
                })
                .sum();
            logs.push(-0.5 * sq / v);
        }
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logs.iter().map(|l| (l - m).exp()).sum();
        Ok(m + sum.ln() - (self.anchors.len() as f64).ln()
            - 0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI * v).ln())
    }

    /// Exact score `grad_x log p_t(x)`.
    pub fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::shape("GMM score input", self.dim, x.len()));
        }
        let c = self.sched.perturb_coeffs(t)?;
        let v = self.marginal_var(t)?;
        let mut logs = Vec::with_capacity(self.anchors.len());
        for a in &self.anchors {
            let sq: f64 = x
                .iter()
                .zip(a)
                .map(|(&xi, &ai)| {
                    let d = xi - c.alpha * ai;
                    d * d
                })
                .sum();
            logs.push(-0.5 * sq / v);
        }
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        let mut out = vec![0.0; self.dim];
        for (w, a) in weights.iter().zip(&self.anchors) {
            for (o, &ai) in out.iter_mut().zip(a) {
                *o += w * c.alpha * ai;
            }
        }
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = (*o - xi) / v;
        }
        Ok(out)
    }
}

impl<T: Element> ScoreModel<T> for GmmScore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn cond_dim(&self) -> usize {
        0
    }

    fn score_batch(
        &self,
        x: ArrayView2<T>,
        t: ArrayView1<T>,
        _c: ArrayView2<T>,
    ) -> Result<Array2<T>> {
        if x.ncols() != self.dim {
            return Err(Error::shape("GMM score batch", self.dim, x.ncols()));
        }
        if t.len() != x.nrows() {
            return Err(Error::shape("GMM score times", x.nrows(), t.len()));
        }
        let mut out = Array2::zeros((x.nrows(), x.ncols()));
        let mut buf = vec![0.0f64; self.dim];
        for (i, row) in x.rows().into_iter().enumerate() {
            for (b, &v) in buf.iter_mut().zip(row.iter()) {
                *b = v.to_f64();
            }
            let s = self.score(&buf, t[i].to_f64())?;
            for (j, &v) in s.iter().enumerate() {
                out[[i, j]] = T::from_f64(v);
            }
        }
        Ok(out)
    }
}

/// Builds per-pose condition vectors for a dataset.
///
/// `pose2d` projects each pose with `cam` and adds Gaussian image-plane
/// noise of `noise_std_2d` (a stand-in for 2D detector error); `pose3d`
/// copies the pose itself; `none` yields zero conditions.
pub fn make_conditions(
    ds: &PoseDataset,
    kind: ConditionKind,
    cam: &CameraModel,
    noise_std_2d: f64,
    seed: u64,
) -> Result<Vec<ConditionVector>> {
    let skel = &ds.skeleton;
    let model_joints = skel.model_joints();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(ds.len());
    for pose in &ds.poses {
        let cond = match kind {
            ConditionKind::None => ConditionVector::none(model_joints.len()),
            ConditionKind::Pose3d => {
                let packed = pack(pose, skel)?;
                ConditionVector {
                    values: packed,
                    kind,
                }
            }
            ConditionKind::Pose2d => {
                let p2 = project(pose, cam)?;
                let mut values = vec![0.0; 3 * model_joints.len()];
                for (pos, &joint) in model_joints.iter().enumerate() {
                    let mut u = p2.coords[joint][0];
                    let mut v = p2.coords[joint][1];
                    if noise_std_2d > 0.0 {
                        let nu: f64 = rng.sample(StandardNormal);
                        let nv: f64 = rng.sample(StandardNormal);
                        u += noise_std_2d * nu;
                        v += noise_std_2d * nv;
                    }
                    values[3 * pos] = u;
                    values[3 * pos + 1] = v;
                    // third lane stays zero: unified 2D/3D width
                }
                ConditionVector { values, kind }
            }
        };
        out.push(cond);
    }
    Ok(out)
}
