//! Serial-link arm description and kinematics.
//!
//! Every arm in a model shares the same link chain. Joint 0 yaws the arm
//! about the trunk z axis, link 0 rises vertically from the mount, and the
//! remaining joints pitch the chain inside the yawed vertical plane. Link
//! masses sit at link midpoints, the gripper mass at the tip.

use crate::error::{ensure_finite, Error, Result};
use crate::state::Vec3;

#[derive(Clone, Debug, PartialEq)]
pub struct ArmModel {
    pub name: String,
    /// Per-arm link lengths, m. Index 1 is the biceps.
    pub link_lengths: Vec<f64>,
    pub link_masses: Vec<f64>,
    pub gripper_mass: f64,
    /// Mount point of each arm relative to the trunk COM, body frame.
    pub mounts: Vec<Vec3>,
    /// Per-joint `(min, max)` in rad, shared by all arms.
    pub joint_limits: Vec<(f64, f64)>,
}

/// A point mass in the body frame, relative to the trunk COM.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMass {
    pub position: Vec3,
    pub mass: f64,
}

const DEFAULT_MOUNT: [f64; 3] = [0.15, 0.0, 0.06];

impl ArmModel {
    fn desk_arm(name: &str, biceps: f64, gripper_mass: f64, mounts: Vec<Vec3>) -> Self {
        Self {
            name: name.to_string(),
            link_lengths: vec![0.07, biceps, 0.14, 0.08],
            link_masses: vec![0.15, 0.2, 0.15, 0.1],
            gripper_mass,
            mounts,
            joint_limits: vec![(-1.5, 1.5), (-0.3, 1.6), (-2.6, 0.6), (-1.6, 1.6)],
        }
    }

    pub fn regular() -> Self {
        Self::desk_arm("regular", 0.14, 0.1, vec![Vec3::from(DEFAULT_MOUNT)])
    }

    pub fn longer() -> Self {
        Self::desk_arm("longer", 0.28, 0.1, vec![Vec3::from(DEFAULT_MOUNT)])
    }

    pub fn heavier() -> Self {
        Self::desk_arm("heavier", 0.14, 0.5, vec![Vec3::from(DEFAULT_MOUNT)])
    }

    pub fn double() -> Self {
        Self::desk_arm(
            "double",
            0.14,
            0.1,
            vec![Vec3::new(0.15, 0.08, 0.06), Vec3::new(0.15, -0.08, 0.06)],
        )
    }

    /// Regular geometry with every mass set to zero.
    pub fn massless() -> Self {
        let mut a = Self::regular();
        a.name = "massless".into();
        a.link_masses.iter_mut().for_each(|m| *m = 0.0);
        a.gripper_mass = 0.0;
        a
    }

    /// No arm at all: zero joints.
    pub fn none() -> Self {
        Self {
            name: "none".into(),
            link_lengths: vec![],
            link_masses: vec![],
            gripper_mass: 0.0,
            mounts: vec![],
            joint_limits: vec![],
        }
    }

    pub fn catalog(name: &str) -> Option<Self> {
        match name {
            "regular" => Some(Self::regular()),
            "longer" => Some(Self::longer()),
            "heavier" => Some(Self::heavier()),
            "double" => Some(Self::double()),
            "massless" => Some(Self::massless()),
            "none" => Some(Self::none()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.link_lengths.len();
        if self.link_masses.len() != d || self.joint_limits.len() != d {
            return Err(Error::Parameter(format!(
                "arm '{}': link lengths, masses and joint limits must share one length",
                self.name
            )));
        }
        if d > 0 && self.mounts.is_empty() {
            return Err(Error::Parameter(format!("arm '{}' has links but no mount", self.name)));
        }
        ensure_finite("link lengths", &self.link_lengths)?;
        ensure_finite("link masses", &self.link_masses)?;
        if self.link_lengths.iter().any(|&l| l <= 0.0) {
            return Err(Error::Parameter("link lengths must be positive".into()));
        }
        if self.link_masses.iter().any(|&m| m < 0.0) || !(self.gripper_mass >= 0.0) {
            return Err(Error::Parameter("masses must be non-negative".into()));
        }
        if self.joint_limits.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::Parameter("joint limits must satisfy min < max".into()));
        }
        Ok(())
    }

    /// Joints per arm.
    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn arm_count(&self) -> usize {
        if self.dof() == 0 {
            0
        } else {
            self.mounts.len()
        }
    }

    /// Length of the concatenated joint vector over all arms.
    pub fn total_dof(&self) -> usize {
        self.dof() * self.arm_count()
    }

    pub fn total_mass(&self) -> f64 {
        (self.link_masses.iter().sum::<f64>() + self.gripper_mass) * self.arm_count() as f64
    }

    /// Copy of the model carrying an extra point mass in each gripper.
    pub fn with_payload(&self, payload: f64) -> Self {
        let mut m = self.clone();
        m.gripper_mass += payload;
        m
    }

    pub fn limits_for(&self, joint: usize) -> (f64, f64) {
        self.joint_limits[joint % self.dof()]
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.total_dof()
            && q.iter().enumerate().all(|(i, &v)| {
                let (lo, hi) = self.limits_for(i);
                v >= lo - 1e-12 && v <= hi + 1e-12
            })
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for (i, v) in q.iter_mut().enumerate() {
            let (lo, hi) = self.limits_for(i);
            *v = v.clamp(lo, hi);
        }
    }

    /// Compact pose with the gripper held over the trunk.
    pub fn folded_pose(&self) -> Vec<f64> {
        self.replicate(&[0.0, 1.4, -2.4, 0.9])
    }

    /// Arm reaching forward at roughly shoulder height.
    pub fn extended_pose(&self) -> Vec<f64> {
        self.replicate(&[0.0, 0.3, -0.4, 0.1])
    }

    /// Repeats a per-arm joint template across arms, padding or truncating to `dof`.
    pub fn replicate(&self, template: &[f64]) -> Vec<f64> {
        let mut q = Vec::with_capacity(self.total_dof());
        for _ in 0..self.arm_count() {
            for j in 0..self.dof() {
                q.push(template.get(j).copied().unwrap_or(0.0));
            }
        }
        self.clamp(&mut q);
        q
    }

    /// Point masses and tip positions for a joint vector, body frame relative to COM.
    pub fn kinematics(&self, q: &[f64]) -> Result<(Vec<PointMass>, Vec<Vec3>)> {
        if q.len() != self.total_dof() {
            return Err(Error::Dimension {
                context: "arm joint vector",
                expected: self.total_dof(),
                got: q.len(),
            });
        }
        let d = self.dof();
        let mut masses = Vec::with_capacity(self.arm_count() * (d + 1));
        let mut tips = Vec::with_capacity(self.arm_count());
        for (arm, mount) in self.mounts.iter().enumerate().take(self.arm_count()) {
            let qa = &q[arm * d..(arm + 1) * d];
            let (sy, cy) = qa[0].sin_cos();
            let mut p = *mount;
            let mut elevation = 0.0;
            for j in 0..d {
                let dir = if j == 0 {
                    Vec3::z()
                } else {
                    elevation += qa[j];
                    let (se, ce) = f64::sin_cos(elevation);
                    Vec3::new(ce * cy, ce * sy, se)
                };
                let next = p + dir * self.link_lengths[j];
                masses.push(PointMass {
                    position: (p + next) * 0.5,
                    mass: self.link_masses[j],
                });
                p = next;
            }
            masses.push(PointMass {
                position: p,
                mass: self.gripper_mass,
            });
            tips.push(p);
        }
        Ok((masses, tips))
    }
}
