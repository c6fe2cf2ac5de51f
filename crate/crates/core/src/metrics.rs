//! Evaluation metrics: MPJPE (protocol 1), Procrustes-aligned MPJPE
//! (protocol 2), minimum-over-hypotheses MPJPE and PCK.
//!
//! Poses are compared in meters internally; every public metric reports
//! millimeters.

use nalgebra::{Matrix3, Matrix3xX, Vector3};

use crate::error::{Error, Result};
use crate::skeleton::{root_center, Pose3D, SkeletonDef};

const MM_PER_M: f64 = 1000.0;

/// Similarity transform `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, pose: &Pose3D) -> Pose3D {
        let coords = pose
            .coords
            .iter()
            .map(|c| {
                let v = self.scale * (self.rotation * Vector3::new(c[0], c[1], c[2]))
                    + self.translation;
                [v.x, v.y, v.z]
            })
            .collect();
        Pose3D { coords }
    }
}

fn check_pair(pred: &Pose3D, gt: &Pose3D, skel: &SkeletonDef) -> Result<()> {
    if pred.joint_count() != skel.joint_count() || gt.joint_count() != skel.joint_count() {
        return Err(Error::shape(
            "metric poses",
            skel.joint_count(),
            format!("pred {} / gt {}", pred.joint_count(), gt.joint_count()),
        ));
    }
    if !pred.is_finite() || !gt.is_finite() {
        return Err(Error::validation("metric poses must be finite"));
    }
    Ok(())
}

/// Protocol 1: mean per-joint position error in mm after root alignment.
pub fn mpjpe(pred: &Pose3D, gt: &Pose3D, skel: &SkeletonDef) -> Result<f64> {
    check_pair(pred, gt, skel)?;
    let p = root_center(pred, skel)?;
    let g = root_center(gt, skel)?;
    let sum: f64 = p
        .coords
        .iter()
        .zip(&g.coords)
        .map(|(a, b)| {
            let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        })
        .sum();
    Ok(MM_PER_M * sum / skel.joint_count() as f64)
}

/// Minimum MPJPE over a hypothesis set.
pub fn min_mpjpe(hypotheses: &[Pose3D], gt: &Pose3D, skel: &SkeletonDef) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::validation("min_mpjpe over an empty hypothesis set"));
    }
    let mut best = f64::INFINITY;
    for hyp in hypotheses {
        best = best.min(mpjpe(hyp, gt, skel)?);
    }
    Ok(best)
}

/// Least-squares similarity alignment of `pred` onto `gt` (Umeyama).
///
/// With `with_scale = false` the scale is pinned to one (strict rigid mode).
pub fn procrustes_align(
    pred: &Pose3D,
    gt: &Pose3D,
    with_scale: bool,
) -> Result<SimilarityTransform> {
    let n = pred.joint_count();
    if n != gt.joint_count() {
        return Err(Error::shape("procrustes_align", n, gt.joint_count()));
    }
    if n < 3 {
        return Err(Error::Degenerate(format!(
            "procrustes alignment needs at least 3 joints, got {n}"
        )));
    }

    let x = Matrix3xX::from_fn(n, |r, c| pred.coords[c][r]);
    let y = Matrix3xX::from_fn(n, |r, c| gt.coords[c][r]);
    let mx = x.column_mean();
    let my = y.column_mean();
    let mut xc = x.clone();
    let mut yc = y.clone();
    for mut col in xc.column_iter_mut() {
        col -= mx;
    }
    for mut col in yc.column_iter_mut() {
        col -= my;
    }

    let x_var: f64 = xc.iter().map(|v| v * v).sum();
    if x_var <= f64::EPSILON {
        return Err(Error::Degenerate(
            "procrustes alignment: all predicted joints coincide".to_string(),
        ));
    }

    // Cross-covariance maximizing trace(R * a) over rotations R.
    let a: Matrix3<f64> = &xc * yc.transpose();
    let svd = a.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Degenerate("svd failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("svd failed".into()))?;
    let sv = svd.singular_values;
    if sv[1] <= 1e-12 * sv[0].max(f64::EPSILON) {
        return Err(Error::Degenerate(
            "procrustes alignment: joints are collinear".to_string(),
        ));
    }

    let v = v_t.transpose();
    let d = if (v * u.transpose()).determinant() < 0.0 {
        -1.0
    } else {
        1.0
    };
    let s_fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * s_fix * u.transpose();
    let scale = if with_scale {
        (sv[0] + sv[1] + d * sv[2]) / x_var
    } else {
        1.0
    };
    if scale <= 0.0 {
        return Err(Error::Degenerate(format!(
            "procrustes alignment produced non-positive scale {scale}"
        )));
    }
    let translation = my - scale * (rotation * mx);
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

/// Protocol 2: MPJPE in mm after optimal similarity alignment.
pub fn p_mpjpe(pred: &Pose3D, gt: &Pose3D, skel: &SkeletonDef, with_scale: bool) -> Result<f64> {
    check_pair(pred, gt, skel)?;
    let transform = procrustes_align(pred, gt, with_scale)?;
    let aligned = transform.apply(pred);
    let sum: f64 = aligned
        .coords
        .iter()
        .zip(&gt.coords)
        .map(|(a, b)| {
            let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        })
        .sum();
    Ok(MM_PER_M * sum / skel.joint_count() as f64)
}

/// Fraction of non-root joints within `threshold_mm` after root alignment.
///
/// The root is excluded: root alignment makes its error identically zero,
/// so counting it would only inflate the score.
pub fn pck(pred: &Pose3D, gt: &Pose3D, skel: &SkeletonDef, threshold_mm: f64) -> Result<f64> {
    check_pair(pred, gt, skel)?;
    let p = root_center(pred, skel)?;
    let g = root_center(gt, skel)?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for joint in 0..skel.joint_count() {
        if joint == skel.root_index {
            continue;
        }
        let a = p.coords[joint];
        let b = g.coords[joint];
        let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let err_mm = MM_PER_M * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if err_mm < threshold_mm {
            correct += 1;
        }
        total += 1;
    }
    Ok(correct as f64 / total as f64)
}

pub const PCK_DEFAULT_THRESHOLD_MM: f64 = 150.0;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::anchor_poses;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, scale: f64) -> Pose3D {
        let mut coords = vec![[0.0; 3]; 17];
        for c in coords.iter_mut().skip(1) {
            *c = [
                scale * (rng.gen::<f64>() - 0.5),
                scale * (rng.gen::<f64>() - 0.5),
                scale * (rng.gen::<f64>() - 0.5),
            ];
        }
        Pose3D { coords }
    }

    #[test]
    fn mpjpe_identical_is_zero() {
        let skel = SkeletonDef::h36m17();
        let p = anchor_poses()[0].clone();
        assert_eq!(mpjpe(&p, &p, &skel).unwrap(), 0.0);
    }

    #[test]
    fn mpjpe_single_joint_displacement() {
        let skel = SkeletonDef::h36m17();
        let gt = anchor_poses()[0].clone();
        let mut pred = gt.clone();
        // 3-4-0 mm displacement -> 5 mm error on one joint of 17.
        pred.coords[5][0] += 0.003;
        pred.coords[5][1] += 0.004;
        let e = mpjpe(&pred, &gt, &skel).unwrap();
        assert!((e - 5.0 / 17.0).abs() < 1e-9, "got {e}");
    }

    #[test]
    fn mpjpe_translation_invariant() {
        let skel = SkeletonDef::h36m17();
        let gt = anchor_poses()[1].clone();
        let mut pred = anchor_poses()[2].clone();
        let base = mpjpe(&pred, &gt, &skel).unwrap();
        for c in pred.coords.iter_mut() {
            c[0] += 4.2;
            c[1] -= 1.7;
            c[2] += 0.3;
        }
        let moved = mpjpe(&pred, &gt, &skel).unwrap();
        assert!((base - moved).abs() < 1e-9);
    }

    #[test]
    fn min_mpjpe_basics() {
        let skel = SkeletonDef::h36m17();
        let gt = anchor_poses()[0].clone();
        let other = anchor_poses()[3].clone();
        let single = min_mpjpe(&[other.clone()], &gt, &skel).unwrap();
        assert_eq!(single, mpjpe(&other, &gt, &skel).unwrap());
        let with_gt = min_mpjpe(&[other, gt.clone()], &gt, &skel).unwrap();
        assert_eq!(with_gt, 0.0);
        assert!(min_mpjpe(&[], &gt, &skel).is_err());
    }

    #[test]
    fn min_mpjpe_matches_exhaustive_scan() {
        let skel = SkeletonDef::h36m17();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gt = random_pose(&mut rng, 1.0);
        let hyps: Vec<Pose3D> = (0..25).map(|_| random_pose(&mut rng, 1.0)).collect();
        let fast = min_mpjpe(&hyps, &gt, &skel).unwrap();
        let brute = hyps
            .iter()
            .map(|h| mpjpe(h, &gt, &skel).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(fast, brute);
    }

    #[test]
    fn procrustes_identity_on_equal_poses() {
        let p = anchor_poses()[0].clone();
        let t = procrustes_align(&p, &p, true).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-9);
        assert!((t.rotation - Matrix3::identity()).norm() < 1e-9);
        assert!(t.translation.norm() < 1e-9);
    }

    fn rotation_about(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
        nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
            .into_inner()
    }

    #[test]
    fn procrustes_recovers_similarity_transform() {
        let skel = SkeletonDef::h36m17();
        let gt = anchor_poses()[2].clone();
        let r = rotation_about(Vector3::new(0.3, 1.0, -0.2), 1.1);
        let true_t = SimilarityTransform {
            scale: 2.0,
            rotation: r,
            translation: Vector3::new(0.4, -0.2, 1.5),
        };
        // pred = T(gt); aligning pred back onto gt must be exact.
        let pred = true_t.apply(&gt);
        let residual = p_mpjpe(&pred, &gt, &skel, true).unwrap();
        assert!(residual < 1e-9, "residual {residual} mm");
    }

    #[test]
    fn procrustes_beats_random_transforms() {
        let skel = SkeletonDef::h36m17();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let gt = random_pose(&mut rng, 1.0);
        let mut pred = random_pose(&mut rng, 1.0);
        for c in pred.coords.iter_mut() {
            c[0] += 0.1;
        }
        let t = procrustes_align(&pred, &gt, true).unwrap();
        let best = {
            let aligned = t.apply(&pred);
            aligned
                .coords
                .iter()
                .zip(&gt.coords)
                .map(|(a, b)| {
                    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
                    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
                })
                .sum::<f64>()
        };
        // Random-search lower bound: no random similarity transform should
        // achieve a smaller sum of squares than the closed-form optimum.
        for _ in 0..10_000 {
            let cand = SimilarityTransform {
                scale: 0.25 + 2.0 * rng.gen::<f64>(),
                rotation: rotation_about(
                    Vector3::new(
                        rng.gen::<f64>() - 0.5,
                        rng.gen::<f64>() - 0.5,
                        rng.gen::<f64>() - 0.5,
                    ),
                    std::f64::consts::TAU * rng.gen::<f64>(),
                ),
                translation: Vector3::new(
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                ),
            };
            let aligned = cand.apply(&pred);
            let ss = aligned
                .coords
                .iter()
                .zip(&gt.coords)
                .map(|(a, b)| {
                    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
                    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
                })
                .sum::<f64>();
            assert!(ss + 1e-12 >= best);
        }
    }

    #[test]
    fn procrustes_rotation_is_proper_even_for_reflected_input() {
        let gt = anchor_poses()[0].clone();
        let mut pred = gt.clone();
        // Mirror the pose; the unconstrained optimum would be a reflection.
        for c in pred.coords.iter_mut() {
            c[0] = -c[0];
        }
        let t = procrustes_align(&pred, &gt, true).unwrap();
        assert!((t.rotation.determinant() - 1.0).abs() < 1e-9);
        assert!((t.rotation.transpose() * t.rotation - Matrix3::identity()).norm() < 1e-9);
    }

    #[test]
    fn procrustes_rejects_collinear() {
        let mut coords = vec![[0.0; 3]; 17];
        for (i, c) in coords.iter_mut().enumerate() {
            *c = [i as f64 * 0.1, 0.0, 0.0];
        }
        let line = Pose3D { coords };
        let gt = anchor_poses()[0].clone();
        assert!(matches!(
            procrustes_align(&line, &gt, true),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn p_mpjpe_leq_mpjpe_on_random_pairs() {
        let skel = SkeletonDef::h36m17();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let gt = random_pose(&mut rng, 1.0);
            let pred = random_pose(&mut rng, 1.0);
            let m = mpjpe(&pred, &gt, &skel).unwrap();
            let pm = p_mpjpe(&pred, &gt, &skel, true).unwrap();
            assert!(pm <= m + 1e-9, "p-mpjpe {pm} > mpjpe {m}");
        }
    }

    #[test]
    fn p_mpjpe_zero_on_similarity_copies() {
        let skel = SkeletonDef::h36m17();
        for (i, gt) in anchor_poses().iter().enumerate() {
            assert_eq!(p_mpjpe(gt, gt, &skel, true).unwrap(), 0.0);
            let t = SimilarityTransform {
                scale: 0.5 + 0.3 * i as f64,
                rotation: rotation_about(Vector3::new(1.0, 0.2 * i as f64, 0.5), 0.4 + i as f64),
                translation: Vector3::new(i as f64, -1.0, 2.0),
            };
            let pred = t.apply(gt);
            let residual = p_mpjpe(&pred, gt, &skel, true).unwrap();
            assert!(residual < 1e-9, "pose {i}: residual {residual} mm");
        }
    }

    #[test]
    fn pck_extremes_and_fixture() {
        let skel = SkeletonDef::h36m17();
        let gt = anchor_poses()[0].clone();
        assert_eq!(pck(&gt, &gt, &skel, PCK_DEFAULT_THRESHOLD_MM).unwrap(), 1.0);

        let mut all_off = gt.clone();
        for (j, c) in all_off.coords.iter_mut().enumerate() {
            if j != 0 {
                c[1] += 0.2; // 200 mm on every non-root joint
            }
        }
        assert_eq!(pck(&all_off, &gt, &skel, PCK_DEFAULT_THRESHOLD_MM).unwrap(), 0.0);

        // Exactly 4 of the 16 non-root joints pushed beyond 150 mm.
        let mut mixed = gt.clone();
        for j in [2usize, 6, 10, 13] {
            mixed.coords[j][2] += 0.2;
        }
        for j in [3usize, 4] {
            mixed.coords[j][0] += 0.05; // within threshold
        }
        assert_eq!(pck(&mixed, &gt, &skel, PCK_DEFAULT_THRESHOLD_MM).unwrap(), 0.75);
    }
}
