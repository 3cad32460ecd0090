//! Planar four-joint arm standing in for the robot's right arm.
//!
//! Pen positions fitted into [`WorkspaceRect`] are turned into joint angles
//! with damped least squares, seeding each solve with the previous solution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const NUM_JOINTS: usize = 4;

/// Position tolerance for [`ArmModel::inverse`], in length units.
pub const IK_TOLERANCE: f64 = 1e-6;
pub const IK_MAX_ITERS: usize = 200;

pub type JointAngles<T> = [T; NUM_JOINTS];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceRect<T> {
    pub y_range: (T, T),
    pub z_range: (T, T),
}

impl<T: Scalar> WorkspaceRect<T> {
    pub fn width(&self) -> T {
        self.y_range.1 - self.y_range.0
    }

    pub fn height(&self) -> T {
        self.z_range.1 - self.z_range.0
    }

    pub fn center(&self) -> (T, T) {
        (
            (self.y_range.0 + self.y_range.1) * T::half(),
            (self.z_range.0 + self.z_range.1) * T::half(),
        )
    }

    pub fn diagonal(&self) -> T {
        self.width().hypot(self.height())
    }

    pub fn corners(&self) -> [(T, T); 4] {
        let (y0, y1) = self.y_range;
        let (z0, z1) = self.z_range;
        [(y0, z0), (y0, z1), (y1, z0), (y1, z1)]
    }

    pub fn contains(&self, p: (T, T)) -> bool {
        p.0 >= self.y_range.0 && p.0 <= self.y_range.1 && p.1 >= self.z_range.0 && p.1 <= self.z_range.1
    }
}

impl Default for WorkspaceRect<f64> {
    fn default() -> Self {
        WorkspaceRect {
            y_range: (0.3, 0.7),
            z_range: (-0.2, 0.2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmModel<T> {
    pub link_lengths: [T; NUM_JOINTS],
    pub base: (T, T),
    pub joint_limits: [(T, T); NUM_JOINTS],
    /// Posture used to seed the first solve of a trajectory.
    pub rest: JointAngles<T>,
}

impl Default for ArmModel<f64> {
    fn default() -> Self {
        ArmModel {
            link_lengths: [0.25; NUM_JOINTS],
            base: (0.0, 0.0),
            joint_limits: [(-3.1, 3.1), (-2.6, 2.6), (-2.6, 2.6), (-2.6, 2.6)],
            rest: [-0.6, 0.9, 0.6, 0.3],
        }
    }
}

impl<T: Scalar> ArmModel<T> {
    pub fn cast<U: Scalar>(&self) -> ArmModel<U> {
        let c = |x: T| U::of(x.as_f64());
        ArmModel {
            link_lengths: self.link_lengths.map(c),
            base: (c(self.base.0), c(self.base.1)),
            joint_limits: self.joint_limits.map(|(a, b)| (c(a), c(b))),
            rest: self.rest.map(c),
        }
    }

    pub fn reach(&self) -> T {
        self.link_lengths.iter().copied().sum()
    }

    pub fn mean_link(&self) -> T {
        self.reach() / T::of(NUM_JOINTS as f64)
    }

    /// Damping factor of the least-squares step: 0.1 x mean link length.
    pub fn damping(&self) -> T {
        T::of(0.1) * self.mean_link()
    }

    /// Checks link lengths, joint limits and that `ws` lies strictly inside the reachable disk.
    pub fn validate(&self, ws: &WorkspaceRect<T>) -> Result<()> {
        if self.link_lengths.iter().any(|l| !(*l > T::zero())) {
            return Err(Error::Config("link lengths must be positive".into()));
        }
        if self.joint_limits.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Config("joint limits must satisfy min < max".into()));
        }
        if !(ws.width() > T::zero() && ws.height() > T::zero()) {
            return Err(Error::Config("workspace rectangle needs positive extent on both axes".into()));
        }
        let far = ws
            .corners()
            .iter()
            .map(|&(y, z)| (y - self.base.0).hypot(z - self.base.1))
            .fold(T::zero(), T::max);
        if !(self.reach() > far) {
            return Err(Error::Config(format!(
                "arm reach {} does not cover workspace corner at distance {}",
                self.reach(),
                far
            )));
        }
        Ok(())
    }

    /// End-effector position: base plus the sum of links at cumulative angles.
    pub fn forward(&self, q: &JointAngles<T>) -> (T, T) {
        let mut theta = T::zero();
        let (mut y, mut z) = self.base;
        for (l, qi) in self.link_lengths.iter().zip(q) {
            theta += *qi;
            y += *l * theta.cos();
            z += *l * theta.sin();
        }
        (y, z)
    }

    /// 2 x 4 position Jacobian, rows (dy/dq, dz/dq).
    pub fn jacobian(&self, q: &JointAngles<T>) -> [[T; NUM_JOINTS]; 2] {
        let mut theta = T::zero();
        let mut sin_terms = [T::zero(); NUM_JOINTS];
        let mut cos_terms = [T::zero(); NUM_JOINTS];
        for i in 0..NUM_JOINTS {
            theta += q[i];
            sin_terms[i] = self.link_lengths[i] * theta.sin();
            cos_terms[i] = self.link_lengths[i] * theta.cos();
        }
        let mut jac = [[T::zero(); NUM_JOINTS]; 2];
        let (mut sy, mut sz) = (T::zero(), T::zero());
        for j in (0..NUM_JOINTS).rev() {
            sy += sin_terms[j];
            sz += cos_terms[j];
            jac[0][j] = -sy;
            jac[1][j] = sz;
        }
        jac
    }

    fn clamp(&self, q: &mut JointAngles<T>) {
        for (qi, (lo, hi)) in q.iter_mut().zip(&self.joint_limits) {
            *qi = qi.max(*lo).min(*hi);
        }
    }

    /// Damped least squares from `q_init` until the position error drops
    /// below [`IK_TOLERANCE`] or [`IK_MAX_ITERS`] steps are spent.
    pub fn inverse(&self, target: (T, T), q_init: &JointAngles<T>) -> Result<JointAngles<T>> {
        let (q, residual) = self.solve(target, q_init);
        if residual < T::of(IK_TOLERANCE) {
            return Ok(q);
        }
        Err(Error::IkFailure {
            y: target.0.as_f64(),
            z: target.1.as_f64(),
            residual: residual.as_f64(),
        })
    }

    /// The raw iteration behind [`ArmModel::inverse`]: final posture and its residual.
    pub fn solve(&self, target: (T, T), q_init: &JointAngles<T>) -> (JointAngles<T>, T) {
        let tol = T::of(IK_TOLERANCE);
        let lambda2 = self.damping() * self.damping();
        let max_step = self.mean_link();
        let mut q = *q_init;
        for _ in 0..IK_MAX_ITERS {
            let (y, z) = self.forward(&q);
            let (mut ey, mut ez) = (target.0 - y, target.1 - z);
            let err = ey.hypot(ez);
            if err < tol {
                return (q, err);
            }
            if err > max_step {
                ey = ey * max_step / err;
                ez = ez * max_step / err;
            }
            let j = self.jacobian(&q);
            // (J J^T + lambda^2 I) is 2x2 symmetric positive definite.
            let mut a = lambda2;
            let mut b = T::zero();
            let mut d = lambda2;
            for k in 0..NUM_JOINTS {
                a += j[0][k] * j[0][k];
                b += j[0][k] * j[1][k];
                d += j[1][k] * j[1][k];
            }
            let det = a * d - b * b;
            let wy = (d * ey - b * ez) / det;
            let wz = (a * ez - b * ey) / det;
            for k in 0..NUM_JOINTS {
                q[k] += j[0][k] * wy + j[1][k] * wz;
            }
            self.clamp(&mut q);
        }
        let (y, z) = self.forward(&q);
        (q, (target.0 - y).hypot(target.1 - z))
    }

    /// Solves a whole path, seeding each point with the previous solution
    /// and the first with [`ArmModel::rest`].
    pub fn inverse_path(&self, path: &[(T, T)]) -> Result<Vec<JointAngles<T>>> {
        let mut seed = self.rest;
        let mut out = Vec::with_capacity(path.len());
        for &p in path {
            seed = self.inverse(p, &seed)?;
            out.push(seed);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn arm() -> ArmModel<f64> {
        ArmModel::default()
    }

    /// Explicit trigonometric expansion of the four-link chain.
    fn forward_expanded(a: &ArmModel<f64>, q: &[f64; 4]) -> (f64, f64) {
        let [l1, l2, l3, l4] = a.link_lengths;
        let (t1, t2, t3, t4) = (q[0], q[0] + q[1], q[0] + q[1] + q[2], q[0] + q[1] + q[2] + q[3]);
        (
            a.base.0 + l1 * t1.cos() + l2 * t2.cos() + l3 * t3.cos() + l4 * t4.cos(),
            a.base.1 + l1 * t1.sin() + l2 * t2.sin() + l3 * t3.sin() + l4 * t4.sin(),
        )
    }

    #[test]
    fn straight_arm_reaches_along_y() {
        let a = arm();
        let (y, z) = a.forward(&[0.0; 4]);
        assert_eq!((y, z), (a.base.0 + a.reach(), a.base.1));
    }

    #[test]
    fn quarter_turn_points_up() {
        let a = arm();
        let (y, z) = a.forward(&[FRAC_PI_2, 0.0, 0.0, 0.0]);
        assert!((y - a.base.0).abs() < 1e-15);
        assert!((z - a.base.1 - a.reach()).abs() < 1e-15);
    }

    #[test]
    fn fixed_point_is_returned_unchanged() {
        let a = arm();
        let q = [-0.4, 0.7, 0.5, 0.2];
        let target = a.forward(&q);
        assert_eq!(a.inverse(target, &q).unwrap(), q);
    }

    #[test]
    fn full_extension_points_at_target() {
        let a = arm();
        let theta = 0.3f64;
        let target = (a.reach() * theta.cos(), a.reach() * theta.sin());
        // The straight posture is singular, so convergence there is slow.
        let (q, residual) = a.solve(target, &[0.25, 0.05, 0.05, 0.05]);
        assert!(residual < 1e-4, "residual {residual}");
        assert!((q[0] - theta).abs() < 1e-2, "{q:?}");
        for qi in &q[1..] {
            assert!(qi.abs() < 2e-2, "{q:?}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let a = arm();
        let q = [0.3, -0.8, 1.1, 0.4];
        let j = a.jacobian(&q);
        let h = 1e-6;
        for k in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let (yp, zp) = a.forward(&qp);
            let (ym, zm) = a.forward(&qm);
            assert!((j[0][k] - (yp - ym) / (2.0 * h)).abs() < 1e-8);
            assert!((j[1][k] - (zp - zm) / (2.0 * h)).abs() < 1e-8);
        }
    }

    #[test]
    fn unreachable_target_reports_failure() {
        let a = arm();
        let err = a.inverse((3.0, 0.0), &a.rest).unwrap_err();
        assert!(matches!(err, Error::IkFailure { .. }));
    }

    #[test]
    fn default_workspace_is_reachable() {
        arm().validate(&WorkspaceRect::default()).unwrap();
        let too_far = WorkspaceRect {
            y_range: (0.5, 1.2),
            z_range: (-0.2, 0.2),
        };
        assert!(arm().validate(&too_far).is_err());
    }

    #[test]
    fn path_through_workspace_is_continuous() {
        let a = arm();
        let ws = WorkspaceRect::default();
        let (cy, cz) = ws.center();
        let path: Vec<(f64, f64)> = (0..50)
            .map(|i| {
                let s = i as f64 / 49.0 * 2.0 * std::f64::consts::PI;
                (cy + 0.19 * s.cos(), cz + 0.19 * (2.0 * s).sin())
            })
            .collect();
        let qs = a.inverse_path(&path).unwrap();
        for (p, q) in path.iter().zip(&qs) {
            let (y, z) = a.forward(q);
            assert!((y - p.0).hypot(z - p.1) < IK_TOLERANCE);
        }
        for w in qs.windows(2) {
            for k in 0..4 {
                assert!((w[1][k] - w[0][k]).abs() < 0.3);
            }
        }
    }

    proptest! {
        #[test]
        fn forward_matches_expansion(q in prop::array::uniform4(-3.0f64..3.0)) {
            let a = arm();
            let (y, z) = a.forward(&q);
            let (ey, ez) = forward_expanded(&a, &q);
            prop_assert!((y - ey).abs() < 1e-12 && (z - ez).abs() < 1e-12);
        }

        #[test]
        fn inverse_round_trips_inside_workspace(fy in 0.0f64..=1.0, fz in 0.0f64..=1.0) {
            let a = arm();
            let ws = WorkspaceRect::default();
            let p = (ws.y_range.0 + fy * ws.width(), ws.z_range.0 + fz * ws.height());
            let q = a.inverse(p, &a.rest).unwrap();
            let (y, z) = a.forward(&q);
            prop_assert!((y - p.0).hypot(z - p.1) < IK_TOLERANCE);
        }

        #[test]
        fn small_target_steps_give_small_joint_steps(
            fy in 0.05f64..0.95, fz in 0.05f64..0.95, angle in 0.0f64..6.28, frac in 0.0f64..0.02,
        ) {
            let a = arm();
            let ws = WorkspaceRect::default();
            let p = (ws.y_range.0 + fy * ws.width(), ws.z_range.0 + fz * ws.height());
            let q = a.inverse(p, &a.rest).unwrap();
            let step = frac * ws.diagonal();
            let next = (p.0 + step * angle.cos(), p.1 + step * angle.sin());
            let q2 = a.inverse(next, &q).unwrap();
            for k in 0..4 {
                prop_assert!((q2[k] - q[k]).abs() < 0.3, "{:?} -> {:?}", q, q2);
            }
        }
    }
}
