//! Task scenarios: what the body should track, how the arm moves, and which
//! external forces reach the gripper.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::controller::GaitMode;
use crate::error::{Error, Result};
use crate::sim::arm::ArmModel;
use crate::state::{TrajectoryPoint, Vec3};

pub const NOMINAL_HEIGHT: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Standing,
    Reaching,
    Pushing,
    Carrying,
    /// Random body velocity commands and random arm motion, for data collection.
    RandomMotion,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Standing => "standing",
            TaskKind::Reaching => "reaching",
            TaskKind::Pushing => "pushing",
            TaskKind::Carrying => "carrying",
            TaskKind::RandomMotion => "random",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "standing" => Ok(TaskKind::Standing),
            "reaching" => Ok(TaskKind::Reaching),
            "pushing" => Ok(TaskKind::Pushing),
            "carrying" => Ok(TaskKind::Carrying),
            "random" => Ok(TaskKind::RandomMotion),
            other => Err(Error::InvalidArgument(format!("unknown task '{other}'"))),
        }
    }
}

/// Random horizontal force pulses at the gripper.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PulseConfig {
    pub max_magnitude: f64,
    pub duration: f64,
    pub mean_interval: f64,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            max_magnitude: 20.0,
            duration: 0.5,
            mean_interval: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub height: f64,
    /// Forward speed while pushing, m/s.
    pub push_speed: f64,
    /// Box resistance at the gripper while pushing, N.
    pub push_force: f64,
    /// Time at which the gripper meets the box, s.
    pub push_contact_time: f64,
    /// Mass of one carried ball, kg.
    pub ball_mass: f64,
    pub ball_count: usize,
    /// Table surface height above the ground, m.
    pub table_height: f64,
    /// Seconds per reaching waypoint.
    pub reach_interval: f64,
    /// Bound on random velocity commands for random motion, m/s and rad/s.
    pub random_speed: f64,
    /// Seconds between random velocity commands.
    pub random_resample: f64,
    pub pulses: Option<PulseConfig>,
    /// Constant world-frame force at the gripper, on top of everything else.
    pub constant_tip_force: Vec3,
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            height: NOMINAL_HEIGHT,
            push_speed: 0.2,
            push_force: 15.0,
            push_contact_time: 1.0,
            ball_mass: 0.2,
            ball_count: 3,
            table_height: 0.2,
            reach_interval: 2.0,
            random_speed: 0.3,
            random_resample: 1.0,
            pulses: None,
            constant_tip_force: Vec3::zeros(),
        }
    }

    pub fn with_pulses(mut self, pulses: PulseConfig) -> Self {
        self.pulses = Some(pulses);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("push_speed", self.push_speed),
            ("push_force", self.push_force),
            ("push_contact_time", self.push_contact_time),
            ("ball_mass", self.ball_mass),
            ("table_height", self.table_height),
            ("random_speed", self.random_speed),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Parameter(format!("task {name} must be finite and >= 0")));
            }
        }
        if !(self.height > 0.1 && self.height < 0.38) {
            return Err(Error::Parameter("task height must lie in (0.1, 0.38) m".into()));
        }
        if !(self.reach_interval > 0.0 && self.random_resample > 0.0) {
            return Err(Error::Parameter("task intervals must be positive".into()));
        }
        if let Some(p) = self.pulses {
            if !(p.max_magnitude >= 0.0 && p.duration > 0.0 && p.mean_interval > 0.0) {
                return Err(Error::Parameter("pulse parameters must be positive".into()));
            }
        }
        if self.constant_tip_force.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("constant tip force must be finite".into()));
        }
        Ok(())
    }

    pub fn gait(&self) -> GaitMode {
        match self.kind {
            TaskKind::Pushing | TaskKind::RandomMotion => GaitMode::Trot,
            _ => GaitMode::Stand,
        }
    }

    pub fn initial_arm_pose(&self, arm: &ArmModel) -> Vec<f64> {
        match self.kind {
            TaskKind::Pushing => arm.extended_pose(),
            _ => arm.folded_pose(),
        }
    }
}

/// Everything the task dictates for one control instant.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskFrame {
    pub desired: TrajectoryPoint,
    pub arm_command: Vec<f64>,
    /// World frame force at the gripper.
    pub tip_force: Vec3,
    pub payload: f64,
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

fn blend(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    let w = smoothstep(s);
    a.iter().zip(b).map(|(x, y)| x + (y - x) * w).collect()
}

/// Stateful, seeded script that turns a [`TaskSpec`] into [`TaskFrame`]s.
///
/// Body commands, arm motion and force pulses draw from separate random
/// streams, so e.g. swapping the arm leaves the body command sequence intact.
#[derive(Clone, Debug)]
pub struct TaskRunner {
    pub spec: TaskSpec,
    arm: ArmModel,
    body_rng: ChaCha8Rng,
    arm_rng: ChaCha8Rng,
    pulse_rng: ChaCha8Rng,
    velocity: [f64; 3],
    next_resample: f64,
    from_pose: Vec<f64>,
    to_pose: Vec<f64>,
    segment_start: f64,
    segment_length: f64,
    pulse_force: Vec3,
    pulse_end: f64,
    next_pulse: f64,
    /// Per-ball `(pick yaw, place yaw magnitude)` for carrying.
    ball_layout: Vec<(f64, f64)>,
}

/// Stream identifiers for [`TaskRunner`] random sources.
const BODY_STREAM: u64 = 1;
const ARM_STREAM: u64 = 2;
const PULSE_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl TaskRunner {
    pub fn new(spec: TaskSpec, arm: &ArmModel, seed: u64) -> Result<Self> {
        spec.validate()?;
        let start = spec.initial_arm_pose(arm);
        let mut runner = Self {
            arm: arm.clone(),
            body_rng: stream(seed, BODY_STREAM),
            arm_rng: stream(seed, ARM_STREAM),
            pulse_rng: stream(seed, PULSE_STREAM),
            velocity: [0.0; 3],
            next_resample: 0.0,
            from_pose: start.clone(),
            to_pose: start,
            segment_start: 0.0,
            segment_length: 1.0,
            pulse_force: Vec3::zeros(),
            pulse_end: f64::NEG_INFINITY,
            next_pulse: f64::INFINITY,
            ball_layout: Vec::new(),
            spec,
        };
        if runner.spec.kind == TaskKind::Carrying {
            runner.ball_layout = (0..runner.spec.ball_count)
                .map(|_| {
                    (
                        runner.arm_rng.random_range(-0.3..=0.3),
                        runner.arm_rng.random_range(0.6..=1.0),
                    )
                })
                .collect();
        }
        if let Some(p) = runner.spec.pulses {
            runner.next_pulse = runner.draw_interval(&p);
        }
        Ok(runner)
    }

    fn draw_interval(&mut self, p: &PulseConfig) -> f64 {
        Exp::new(1.0 / p.mean_interval)
            .map(|d| d.sample(&mut self.pulse_rng))
            .unwrap_or(f64::INFINITY)
    }

    fn random_pose(&mut self) -> Vec<f64> {
        let mut q = Vec::with_capacity(self.arm.total_dof());
        for i in 0..self.arm.total_dof() {
            let (lo, hi) = self.arm.limits_for(i);
            // Stay clear of the limits so the lag never saturates.
            let margin = 0.15 * (hi - lo);
            q.push(self.arm_rng.random_range(lo + margin..hi - margin));
        }
        q
    }

    /// Pick pose reaching down to the table surface.
    fn pick_pose(&self, yaw: f64) -> Vec<f64> {
        let lift = (self.spec.table_height - 0.2) / 0.3;
        self.arm.replicate(&[yaw, lift, -1.0, -0.6])
    }

    fn carry_pose(&self) -> Vec<f64> {
        self.arm.replicate(&[0.0, 0.9, -1.6, 0.2])
    }

    fn arm_target(&mut self, t: f64) -> (Vec<f64>, f64) {
        let s = self.spec.clone();
        match s.kind {
            TaskKind::Standing | TaskKind::Pushing => (self.to_pose.clone(), 0.0),
            TaskKind::Reaching | TaskKind::RandomMotion => {
                let interval = if s.kind == TaskKind::Reaching {
                    s.reach_interval
                } else {
                    1.5
                };
                if t >= self.segment_start + self.segment_length {
                    self.from_pose = self.to_pose.clone();
                    self.to_pose = self.random_pose();
                    self.segment_start = t;
                    self.segment_length = if s.kind == TaskKind::Reaching {
                        interval
                    } else {
                        self.arm_rng.random_range(0.5 * interval..1.5 * interval)
                    };
                }
                // Reaching moves during the first half of a segment and holds after.
                let travel = if s.kind == TaskKind::Reaching { 0.5 } else { 1.0 };
                let u = (t - self.segment_start) / (travel * self.segment_length);
                (blend(&self.from_pose, &self.to_pose, u), 0.0)
            }
            TaskKind::Carrying => {
                // One ball per 4 s cycle: pick, lift, place to the side, return.
                let cycle = 4.0;
                let k = (t / cycle).floor() as usize;
                if k >= s.ball_count {
                    return (self.carry_pose(), 0.0);
                }
                let (pick_yaw, place_yaw) = self.ball_layout[k];
                let side = if k % 2 == 0 { place_yaw } else { -place_yaw };
                let tc = t - k as f64 * cycle;
                let carry = self.carry_pose();
                let pick = self.pick_pose(pick_yaw);
                let place = self.pick_pose(side);
                let holding = (1.5..3.0).contains(&tc);
                let pose = if tc < 1.0 {
                    blend(&carry, &pick, tc)
                } else if tc < 1.5 {
                    pick
                } else if tc < 2.5 {
                    let mut via = carry.clone();
                    let d = self.arm.dof();
                    for a in 0..self.arm.arm_count() {
                        via[a * d] = side;
                    }
                    if tc < 2.0 {
                        blend(&pick, &via, (tc - 1.5) / 0.5)
                    } else {
                        blend(&via, &place, (tc - 2.0) / 0.5)
                    }
                } else if tc < 3.0 {
                    place
                } else {
                    blend(&place, &carry, tc - 3.0)
                };
                (pose, if holding { s.ball_mass } else { 0.0 })
            }
        }
    }

    fn desired(&mut self, t: f64) -> TrajectoryPoint {
        let s = &self.spec;
        let mut d = TrajectoryPoint::stand(s.height);
        match s.kind {
            TaskKind::Pushing => d.desired_linear_velocity = [s.push_speed, 0.0],
            TaskKind::RandomMotion => {
                if t >= self.next_resample {
                    let v = s.random_speed;
                    self.velocity = [
                        self.body_rng.random_range(-v..=v),
                        self.body_rng.random_range(-v..=v),
                        self.body_rng.random_range(-v..=v),
                    ];
                    self.next_resample += s.random_resample;
                }
                d.desired_linear_velocity = [self.velocity[0], self.velocity[1]];
                d.desired_yaw_rate = self.velocity[2];
            }
            _ => {}
        }
        d
    }

    fn pulse(&mut self, t: f64) -> Vec3 {
        let Some(p) = self.spec.pulses else {
            return Vec3::zeros();
        };
        while t >= self.next_pulse {
            let mag = self.pulse_rng.random_range(0.0..=p.max_magnitude);
            let dir = self.pulse_rng.random_range(0.0..std::f64::consts::TAU);
            self.pulse_force = Vec3::new(mag * dir.cos(), mag * dir.sin(), 0.0);
            self.pulse_end = self.next_pulse + p.duration;
            self.next_pulse += p.duration + self.draw_interval(&p);
        }
        if t < self.pulse_end {
            self.pulse_force
        } else {
            Vec3::zeros()
        }
    }

    /// Task frame at time `t`. Calls must use non-decreasing `t`. `yaw` is
    /// the current trunk heading, used to orient the box resistance.
    pub fn frame(&mut self, t: f64, yaw: f64) -> TaskFrame {
        let desired = self.desired(t);
        let (arm_command, payload) = self.arm_target(t);
        let mut tip_force = self.pulse(t) + self.spec.constant_tip_force;
        if self.spec.kind == TaskKind::Pushing && t >= self.spec.push_contact_time {
            tip_force += Vec3::new(-yaw.cos(), -yaw.sin(), 0.0) * self.spec.push_force;
        }
        TaskFrame {
            desired,
            arm_command,
            tip_force,
            payload,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(spec: TaskSpec, arm: &ArmModel, seed: u64, until: f64) -> Vec<TaskFrame> {
        let mut r = TaskRunner::new(spec, arm, seed).unwrap();
        let mut out = Vec::new();
        let mut t = 0.0;
        while t < until {
            out.push(r.frame(t, 0.0));
            t += 0.01;
        }
        out
    }

    #[test]
    fn arm_commands_stay_within_limits() {
        for kind in [
            TaskKind::Standing,
            TaskKind::Reaching,
            TaskKind::Pushing,
            TaskKind::Carrying,
            TaskKind::RandomMotion,
        ] {
            for arm in [ArmModel::regular(), ArmModel::double()] {
                for f in run(TaskSpec::new(kind), &arm, 3, 10.0) {
                    assert!(arm.within_limits(&f.arm_command), "{kind:?}");
                }
            }
        }
    }

    #[test]
    fn pushing_applies_resistance_after_contact() {
        let frames = run(TaskSpec::new(TaskKind::Pushing), &ArmModel::regular(), 0, 2.0);
        assert_eq!(frames[50].tip_force, Vec3::zeros());
        assert!((frames[150].tip_force - Vec3::new(-15.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(frames[150].desired.desired_linear_velocity, [0.2, 0.0]);
    }

    #[test]
    fn carrying_holds_payload_between_pick_and_place() {
        let mut spec = TaskSpec::new(TaskKind::Carrying);
        spec.ball_count = 2;
        let frames = run(spec, &ArmModel::heavier(), 0, 10.0);
        let payload_at = |t: f64| frames[(t / 0.01).round() as usize].payload;
        assert_eq!(payload_at(1.0), 0.0);
        assert_eq!(payload_at(2.0), 0.2);
        assert_eq!(payload_at(3.5), 0.0);
        assert_eq!(payload_at(6.0), 0.2);
        assert_eq!(payload_at(9.0), 0.0);
    }

    #[test]
    fn higher_table_raises_pick_pose() {
        let arm = ArmModel::regular();
        let tip_z = |h: f64| {
            let mut spec = TaskSpec::new(TaskKind::Carrying);
            spec.table_height = h;
            let frames = run(spec, &arm, 0, 1.3);
            let (_, tips) = arm.kinematics(&frames.last().unwrap().arm_command).unwrap();
            tips[0].z
        };
        assert!(tip_z(0.3) > tip_z(0.2));
    }

    #[test]
    fn pulses_respect_magnitude_and_are_seeded() {
        let spec = TaskSpec::new(TaskKind::Reaching).with_pulses(PulseConfig::default());
        let a = run(spec.clone(), &ArmModel::regular(), 11, 60.0);
        let b = run(spec, &ArmModel::regular(), 11, 60.0);
        assert_eq!(a, b);
        let active = a.iter().filter(|f| f.tip_force.norm() > 0.0).count();
        assert!(active > 0);
        assert!(a
            .iter()
            .all(|f| f.tip_force.norm() <= 20.0 + 1e-12 && f.tip_force.z == 0.0));
        // Mean interval 2 s plus 0.5 s pulses: roughly a fifth of the time is loaded.
        let frac = active as f64 / a.len() as f64;
        assert!(frac > 0.08 && frac < 0.4, "{frac}");
    }

    #[test]
    fn random_motion_body_stream_ignores_arm() {
        let spec = TaskSpec::new(TaskKind::RandomMotion);
        let a = run(spec.clone(), &ArmModel::none(), 5, 5.0);
        let b = run(spec, &ArmModel::heavier(), 5, 5.0);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.desired, y.desired);
        }
        assert!(a.iter().any(|f| f.desired.desired_linear_velocity[0] != 0.0));
    }

    #[test]
    fn task_names_round_trip() {
        for k in [
            TaskKind::Standing,
            TaskKind::Reaching,
            TaskKind::Pushing,
            TaskKind::Carrying,
            TaskKind::RandomMotion,
        ] {
            assert_eq!(TaskKind::parse(k.name()).unwrap(), k);
        }
        assert!(TaskKind::parse("juggling").is_err());
    }
}
