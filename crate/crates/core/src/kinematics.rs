//! Simplified 20-DOF hand skeleton.
//!
//! Five fingers hang off a rigid palm, each with MCP flexion, MCP abduction,
//! PIP flexion and DIP flexion. The palm lies in the `z = 0` plane with
//! fingers pointing along `+y` at the zero pose; positive flexion curls
//! toward `-z`. Angles are degrees at the API and radians internally.
//!
//! Joint order: `0..5` MCP flexion, `5..10` PIP, `10..15` DIP, `15..20` MCP
//! abduction, each block ordered thumb, index, middle, ring, pinky. A model
//! that predicts fewer than 20 joints drives the leading DOFs of this order
//! and leaves the rest at zero (see [`pad_pose`]).
//!
//! Landmarks: `0` is the wrist, then four per finger (MCP, PIP, DIP, tip).

use nalgebra::{Rotation3, Vector3};

use crate::error::{Error, Result};

pub const NUM_DOFS: usize = 20;
pub const NUM_FINGERS: usize = 5;
pub const NUM_LANDMARKS: usize = 1 + 4 * NUM_FINGERS;

pub const FINGER_NAMES: [&str; NUM_FINGERS] = ["thumb", "index", "middle", "ring", "pinky"];

pub type Point = [f64; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct FingerChain {
    /// MCP position on the palm, mm.
    pub base: Point,
    /// Rotation of the finger about the palm normal at the zero pose, degrees.
    pub splay_deg: f64,
    /// Proximal, middle and distal bone lengths, mm.
    pub bones: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandModel {
    pub fingers: [FingerChain; NUM_FINGERS],
}

pub fn mcp_flex(finger: usize) -> usize {
    finger
}
pub fn pip(finger: usize) -> usize {
    5 + finger
}
pub fn dip(finger: usize) -> usize {
    10 + finger
}
pub fn mcp_abd(finger: usize) -> usize {
    15 + finger
}

/// Expands a model-space pose of `J <= 20` joints to the full DOF vector.
pub fn pad_pose(joints: &[f64]) -> Result<[f64; NUM_DOFS]> {
    if joints.len() > NUM_DOFS {
        return Err(Error::InvalidArgument(format!("pose has {} joints, hand has {NUM_DOFS}", joints.len())));
    }
    let mut full = [0.0; NUM_DOFS];
    full[..joints.len()].copy_from_slice(joints);
    Ok(full)
}

fn check_pose(pose: &[f64]) -> Result<()> {
    if pose.len() != NUM_DOFS {
        return Err(Error::InvalidArgument(format!("expected {NUM_DOFS} joint angles, got {}", pose.len())));
    }
    if pose.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("joint angles".into()));
    }
    Ok(())
}

fn v(p: Vector3<f64>) -> Point {
    [p.x, p.y, p.z]
}

/// World positions of one finger's MCP, PIP, DIP and tip plus the shared
/// flexion axis (unit, world frame).
struct FingerPose {
    joints: [Vector3<f64>; 4],
    flex_axis: Vector3<f64>,
}

impl Default for HandModel {
    fn default() -> Self {
        Self::canonical()
    }
}

impl HandModel {
    /// Fixed skeleton shared by every synthetic user. Bone lengths are a
    /// 45/25/20 mm chain scaled per finger.
    pub fn canonical() -> Self {
        let chain = |base: Point, splay_deg: f64, scale: f64| FingerChain {
            base,
            splay_deg,
            bones: [45.0 * scale, 25.0 * scale, 20.0 * scale],
        };
        Self {
            fingers: [
                chain([-32.0, 30.0, 0.0], 55.0, 0.85),
                chain([-22.0, 88.0, 0.0], 8.0, 0.95),
                chain([0.0, 92.0, 0.0], 0.0, 1.0),
                chain([19.0, 88.0, 0.0], -6.0, 0.95),
                chain([36.0, 80.0, 0.0], -14.0, 0.8),
            ],
        }
    }

    /// Longest wrist-free chain: the sum of a finger's three bones, maximized
    /// over fingers.
    pub fn max_chain_length(&self) -> f64 {
        self.fingers.iter().map(|f| f.bones.iter().sum::<f64>()).fold(0.0, f64::max)
    }

    fn finger_pose(&self, f: usize, pose: &[f64]) -> FingerPose {
        let chain = &self.fingers[f];
        let rad = |deg: f64| deg.to_radians();
        let z = Vector3::z_axis();
        let x = Vector3::x_axis();
        let yaw = Rotation3::from_axis_angle(&z, rad(chain.splay_deg + pose[mcp_abd(f)]));
        let r1 = yaw * Rotation3::from_axis_angle(&x, -rad(pose[mcp_flex(f)]));
        let r2 = r1 * Rotation3::from_axis_angle(&x, -rad(pose[pip(f)]));
        let r3 = r2 * Rotation3::from_axis_angle(&x, -rad(pose[dip(f)]));
        let bone = |len: f64| Vector3::new(0.0, len, 0.0);
        let mcp = Vector3::from(chain.base);
        let pipp = mcp + r1 * bone(chain.bones[0]);
        let dipp = pipp + r2 * bone(chain.bones[1]);
        let tip = dipp + r3 * bone(chain.bones[2]);
        FingerPose { joints: [mcp, pipp, dipp, tip], flex_axis: yaw * -Vector3::x() }
    }

    /// All 21 landmarks, mm.
    pub fn fk_landmarks(&self, pose_deg: &[f64]) -> Result<[Point; NUM_LANDMARKS]> {
        check_pose(pose_deg)?;
        let mut out = [[0.0; 3]; NUM_LANDMARKS];
        for f in 0..NUM_FINGERS {
            let fp = self.finger_pose(f, pose_deg);
            for (k, j) in fp.joints.iter().enumerate() {
                out[1 + 4 * f + k] = v(*j);
            }
        }
        Ok(out)
    }

    pub fn fingertip_positions(&self, pose_deg: &[f64]) -> Result<[Point; NUM_FINGERS]> {
        check_pose(pose_deg)?;
        let mut out = [[0.0; 3]; NUM_FINGERS];
        for (f, tip) in out.iter_mut().enumerate() {
            *tip = v(self.finger_pose(f, pose_deg).joints[3]);
        }
        Ok(out)
    }

    /// Fingertip positions and their derivatives with respect to every DOF,
    /// in mm per degree. `jac[f][d]` is d tip_f / d angle_d.
    pub fn fingertip_jacobian(&self, pose_deg: &[f64]) -> Result<([Point; NUM_FINGERS], Box<[[Point; NUM_DOFS]; NUM_FINGERS]>)> {
        check_pose(pose_deg)?;
        let per_deg = std::f64::consts::PI / 180.0;
        let mut tips = [[0.0; 3]; NUM_FINGERS];
        let mut jac = Box::new([[[0.0; 3]; NUM_DOFS]; NUM_FINGERS]);
        for f in 0..NUM_FINGERS {
            let fp = self.finger_pose(f, pose_deg);
            let tip = fp.joints[3];
            tips[f] = v(tip);
            // Revolute joint: d tip / d theta = axis x (tip - pivot).
            let d = |axis: Vector3<f64>, pivot: Vector3<f64>| v(axis.cross(&(tip - pivot)) * per_deg);
            jac[f][mcp_abd(f)] = d(Vector3::z(), fp.joints[0]);
            jac[f][mcp_flex(f)] = d(fp.flex_axis, fp.joints[0]);
            jac[f][pip(f)] = d(fp.flex_axis, fp.joints[1]);
            jac[f][dip(f)] = d(fp.flex_axis, fp.joints[2]);
        }
        Ok((tips, jac))
    }

    /// Mean Euclidean distance between corresponding landmarks, mm.
    pub fn landmark_distance(&self, pred_deg: &[f64], gt_deg: &[f64]) -> Result<f64> {
        let a = self.fk_landmarks(pred_deg)?;
        let b = self.fk_landmarks(gt_deg)?;
        Ok(a.iter().zip(&b).map(|(p, q)| dist(p, q)).sum::<f64>() / NUM_LANDMARKS as f64)
    }
}

pub fn dist(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn landmark_name(index: usize) -> String {
    if index == 0 {
        return "wrist".into();
    }
    let f = (index - 1) / 4;
    let part = ["mcp", "pip", "dip", "tip"][(index - 1) % 4];
    format!("{}_{part}", FINGER_NAMES[f])
}

/// CSV table of landmark positions (`landmark,x_mm,y_mm,z_mm`).
pub fn landmarks_csv(landmarks: &[Point]) -> String {
    let mut s = String::from("landmark,x_mm,y_mm,z_mm\n");
    for (i, p) in landmarks.iter().enumerate() {
        s.push_str(&format!("{},{:.9},{:.9},{:.9}\n", landmark_name(i), p[0], p[1], p[2]));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hand() -> HandModel {
        HandModel::canonical()
    }

    #[test]
    fn zero_pose_matches_golden_table() {
        let golden = include_str!("../tests/data/zero_pose_landmarks.csv");
        let lm = hand().fk_landmarks(&[0.0; NUM_DOFS]).unwrap();
        let rows: Vec<&str> = golden.lines().skip(1).collect();
        assert_eq!(rows.len(), NUM_LANDMARKS);
        for (i, row) in rows.iter().enumerate() {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols[0], landmark_name(i));
            for k in 0..3 {
                let g: f64 = cols[k + 1].parse().unwrap();
                assert!((g - lm[i][k]).abs() < 1e-6, "landmark {i} axis {k}: {g} vs {}", lm[i][k]);
            }
        }
    }

    #[test]
    fn full_turn_is_identity() {
        let mut pose = [0.0; NUM_DOFS];
        for (i, a) in pose.iter_mut().enumerate() {
            *a = 7.0 * i as f64 - 40.0;
        }
        let base = hand().fk_landmarks(&pose).unwrap();
        for d in 0..NUM_DOFS {
            let mut p = pose;
            p[d] += 360.0;
            let turned = hand().fk_landmarks(&p).unwrap();
            for (a, b) in base.iter().zip(&turned) {
                assert!(dist(a, b) < 1e-9);
            }
        }
    }

    #[test]
    fn pip_flexion_moves_only_its_finger_distal_landmarks() {
        let h = hand();
        let zero = h.fk_landmarks(&[0.0; NUM_DOFS]).unwrap();
        let mut pose = [0.0; NUM_DOFS];
        pose[pip(1)] = 90.0;
        let bent = h.fk_landmarks(&pose).unwrap();
        for i in 0..NUM_LANDMARKS {
            let moved = dist(&zero[i], &bent[i]) > 1e-9;
            let expect = i == 1 + 4 + 2 || i == 1 + 4 + 3;
            assert_eq!(moved, expect, "landmark {}", landmark_name(i));
        }
    }

    #[test]
    fn dip_right_angle_distance_matches_brute_force() {
        let h = hand();
        assert_eq!(h.fingers[2].bones[2], 20.0);
        let mut pose = [0.0; NUM_DOFS];
        pose[dip(2)] = 90.0;
        let d = h.landmark_distance(&pose, &[0.0; NUM_DOFS]).unwrap();
        // Only the middle fingertip moves, along a 90 degree arc of radius 20.
        let expected = 20.0 * 2f64.sqrt() / NUM_LANDMARKS as f64;
        assert!((d - expected).abs() < 1e-12, "{d} vs {expected}");
        let a = h.fk_landmarks(&pose).unwrap();
        let b = h.fk_landmarks(&[0.0; NUM_DOFS]).unwrap();
        let brute: f64 = a.iter().zip(&b).map(|(p, q)| dist(p, q)).sum::<f64>() / 21.0;
        assert!((d - brute).abs() < 1e-12);
        assert_eq!(h.landmark_distance(&pose, &pose).unwrap(), 0.0);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let h = hand();
        assert!(h.fk_landmarks(&[0.0; 19]).is_err());
        let mut p = [0.0; NUM_DOFS];
        p[3] = f64::NAN;
        assert!(matches!(h.fk_landmarks(&p), Err(Error::NonFinite(_))));
        assert!(pad_pose(&[0.0; 21]).is_err());
        assert_eq!(pad_pose(&[1.0, 2.0]).unwrap()[..3], [1.0, 2.0, 0.0]);
    }

    #[test]
    fn fingertip_jacobian_matches_finite_differences() {
        let h = hand();
        let mut pose = [0.0; NUM_DOFS];
        for (i, a) in pose.iter_mut().enumerate() {
            *a = ((i * 37) % 23) as f64 * 3.0 - 20.0;
        }
        let (tips, jac) = h.fingertip_jacobian(&pose).unwrap();
        assert_eq!(tips, h.fingertip_positions(&pose).unwrap());
        let eps = 1e-4;
        for d in 0..NUM_DOFS {
            let mut up = pose;
            up[d] += eps;
            let mut down = pose;
            down[d] -= eps;
            let tu = h.fingertip_positions(&up).unwrap();
            let td = h.fingertip_positions(&down).unwrap();
            for f in 0..NUM_FINGERS {
                for k in 0..3 {
                    let num = (tu[f][k] - td[f][k]) / (2.0 * eps);
                    let ana = jac[f][d][k];
                    let scale = num.abs().max(ana.abs()).max(1e-3);
                    assert!((num - ana).abs() / scale < 1e-6, "dof {d} finger {f}: {ana} vs {num}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn landmark_distance_is_symmetric_and_nonnegative(
            a in proptest::collection::vec(-90.0f64..90.0, NUM_DOFS),
            b in proptest::collection::vec(-90.0f64..90.0, NUM_DOFS),
        ) {
            let h = hand();
            let ab = h.landmark_distance(&a, &b).unwrap();
            let ba = h.landmark_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn displacement_is_bounded_by_chain_length(
            a in proptest::collection::vec(-90.0f64..90.0, NUM_DOFS),
            delta in proptest::collection::vec(-10.0f64..10.0, NUM_DOFS),
        ) {
            let h = hand();
            let b: Vec<f64> = a.iter().zip(&delta).map(|(x, d)| x + d).collect();
            let la = h.fk_landmarks(&a).unwrap();
            let lb = h.fk_landmarks(&b).unwrap();
            let bound = h.max_chain_length() * delta.iter().map(|d| d.abs().to_radians()).sum::<f64>();
            for (p, q) in la.iter().zip(&lb) {
                prop_assert!(dist(p, q) <= bound + 1e-9);
            }
        }
    }
}
