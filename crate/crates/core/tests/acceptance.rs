//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p child-core --test acceptance`; exits nonzero if any fails.

use std::f64::consts::{FRAC_PI_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use child_core::config::{DeviceConfig, Rig, Side};
use child_core::feedback::{bias_torque, FeedbackPhase, GainSchedule, SpringParams};
use child_core::follower_sim::scenario::run_scenario;
use child_core::follower_sim::{step_follower, FollowerState, TrackingParams};
use child_core::leader_source::{GestureScript, GripTarget, LeaderSource, ScriptEvent};
use child_core::locomotion::{hip_to_velocity, JoystickCalibration};
use child_core::retarget::{euler_to_quat, map_joints, quat_to_euler, EulerAngles, Quat};
use child_core::session::{step, GestureKind, Phase, SessionState};
use child_core::transport::{decode_frame, encode_frame, latency_probe, DecodeError, StateFrame};
use nalgebra::{Quaternion, Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DT: Duration = Duration::from_millis(10);

type Check = Result<String, String>;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> DeviceConfig {
    DeviceConfig::load(root().join("configs").join(name)).unwrap()
}

fn rig(leader: &str, follower: &str) -> Rig {
    Rig::new(config(leader), config(follower)).unwrap()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn frame(q: &[f64], triggers: &[f64], orientation: Quat) -> StateFrame {
    StateFrame::new(
        q.iter().map(|&x| x as f32).collect(),
        vec![0.0; q.len()],
        triggers.iter().map(|&x| x as f32).collect(),
        orientation.map(|c| c as f32),
    )
}

/// Session plus follower driven tick by tick.
struct Loop<'a> {
    rig: &'a Rig,
    session: SessionState,
    follower: FollowerState,
    params: TrackingParams,
}

impl<'a> Loop<'a> {
    fn new(rig: &'a Rig) -> Self {
        Loop {
            rig,
            session: SessionState::new(rig),
            follower: FollowerState::at_home(&rig.follower),
            params: TrackingParams::from_config(&rig.follower),
        }
    }

    fn tick(&mut self, f: Option<&StateFrame>) -> child_core::session::StepOutput {
        let out = step(&mut self.session, f, &self.follower, DT, self.rig);
        self.follower = step_follower(&self.follower, &out.commands, DT, &self.params);
        out
    }
}

// 1 ------------------------------------------------------------------------

fn latency() -> Check {
    let start = Instant::now();
    let report = latency_probe("127.0.0.1:0", Duration::from_secs(10), 100.0).map_err(|e| e.to_string())?;
    let runtime = start.elapsed().as_secs_f64();
    let mean_ms = report.mean_ns * 1e-6;
    let summary = format!(
        "mean {mean_ms:.3} ms, p99 {:.3} ms, loss {:.4}%, {} frames, runtime {runtime:.2} s",
        report.p99_ns as f64 * 1e-6,
        report.loss_fraction * 100.0,
        report.sent
    );
    ensure(mean_ms <= 14.0 && report.loss_fraction < 0.001 && runtime <= 15.0 && report.sent == 1000, || summary.clone())?;
    Ok(summary)
}

// 2 ------------------------------------------------------------------------

/// Ticks from `events` on which `kind` fired.
fn fired(events: &[(u64, GestureKind)], kind: GestureKind) -> Vec<u64> {
    events.iter().filter(|(_, k)| *k == kind).map(|(t, _)| *t).collect()
}

/// Close the grips in `grip` over `[start, start + hold)` seconds via a
/// gesture script and collect events.
fn scripted<'a>(rig: &'a Rig, prefix: &[ScriptEvent], grip: GripTarget, start: f64, hold: f64, ticks: u64) -> (Vec<(u64, GestureKind)>, Loop<'a>) {
    let mut events = prefix.to_vec();
    events.push(ScriptEvent::grip(start, grip, 1.0));
    events.push(ScriptEvent::grip(start + hold, grip, 0.0));
    let mut source = GestureScript::new(&rig.leader, &events, None).unwrap();
    let mut l = Loop::new(rig);
    let mut log = Vec::new();
    for k in 0..ticks {
        let f = source.frame_at(k * 10_000_000);
        for e in l.tick(Some(&f)).events {
            log.push((k, e.kind));
        }
    }
    (log, l)
}

fn gesture_timing() -> Check {
    let rig = rig("g1_leader.toml", "g1_follower.toml");
    let act = GestureKind::SessionActivated;
    let engage = GestureKind::JoystickEngaged(Side::Left);

    let (e, _) = scripted(&rig, &[], GripTarget::Both, 0.5, 2.9, 500);
    ensure(fired(&e, act).is_empty(), || format!("2.9 s hold activated: {e:?}"))?;
    let (e, _) = scripted(&rig, &[], GripTarget::Both, 0.5, 3.0, 500);
    // closed from tick 50, activation on the 300th closed tick
    ensure(fired(&e, act) == vec![349], || format!("3.0 s hold: {e:?}"))?;

    let activate = [ScriptEvent::grip(0.2, GripTarget::Both, 1.0), ScriptEvent::grip(3.4, GripTarget::Both, 0.0)];
    let (e, l) = scripted(&rig, &activate, GripTarget::Left, 5.0, 0.9, 700);
    ensure(fired(&e, engage).is_empty() && !l.session.leg_joystick[0], || format!("0.9 s toggle engaged: {e:?}"))?;
    let (e, l) = scripted(&rig, &activate, GripTarget::Left, 5.0, 1.0, 700);
    ensure(fired(&e, engage) == vec![599] && l.session.leg_joystick[0], || format!("1.0 s toggle: {e:?}"))?;

    // property: a hold of n ticks activates iff n >= 300, on the n-th tick
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let home = rig.leader.home_positions();
    let mut cases = 0;
    for _ in 0..120 {
        let n: u64 = rng.gen_range(250..=350);
        let lead: u64 = rng.gen_range(0..40);
        let mut l = Loop::new(&rig);
        let mut at = None;
        for k in 0..lead + n + 20 {
            let closed = k >= lead && k < lead + n;
            let t = if closed { rng.gen_range(0.8..=1.0) } else { rng.gen_range(0.0..0.6) };
            for e in l.tick(Some(&frame(&home, &[t, t], [1.0, 0.0, 0.0, 0.0]))).events {
                if e.kind == act {
                    at = Some(k);
                }
            }
        }
        let expected = (n >= 300).then_some(lead + 299);
        ensure(at == expected, || format!("hold of {n} ticks: activation at {at:?}, expected {expected:?}"))?;
        cases += 1;
    }
    Ok(format!("2.9 s no, 3.0 s yes, 0.9 s no, 1.0 s yes at 100 Hz; {cases} random holds exact to the tick"))
}

// 3 ------------------------------------------------------------------------

fn zero_velocity_default() -> Check {
    let rig = rig("g1_leader.toml", "g1_follower.toml");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let limits: Vec<(f64, f64)> = rig.leader.joints().map(|j| (j.position_min, j.position_max)).collect();
    let mut l = Loop::new(&rig);
    let mut q = rig.leader.home_positions();
    let mut grips = [0.0; 2];
    let (mut engaged_ticks, mut zero_checked, mut stale_ticks) = (0, 0, 0);
    let mut segment_left = 0;
    let mut stale = false;
    for tick in 0..10_000 {
        if segment_left == 0 {
            // pick a behaviour for the next stretch of ticks
            segment_left = rng.gen_range(20..400);
            stale = rng.gen_bool(0.1);
            grips = match rng.gen_range(0..5) {
                0 => [1.0, 1.0],
                1 => [1.0, 0.0],
                2 => [0.0, 1.0],
                3 => [rng.gen_range(0.5..0.9), rng.gen_range(0.5..0.9)],
                _ => [0.0, 0.0],
            };
        }
        segment_left -= 1;
        for (qi, &(lo, hi)) in q.iter_mut().zip(&limits) {
            *qi = (*qi + rng.gen_range(-0.002..0.002)).clamp(lo, hi);
        }
        let f = frame(&q, &grips, [1.0, 0.0, 0.0, 0.0]);
        let out = l.tick(if stale { None } else { Some(&f) });
        let engaged = l.session.leg_joystick.iter().any(|&e| e);
        if engaged && !stale {
            engaged_ticks += 1;
        }
        if stale {
            stale_ticks += 1;
        }
        if !engaged || stale {
            zero_checked += 1;
            let v = out.commands.velocity;
            ensure(v.vx == 0.0 && v.vy == 0.0 && v.wz == 0.0, || format!("tick {tick}: nonzero velocity {v:?}"))?;
        }
    }
    ensure(engaged_ticks > 500, || format!("fuzz barely engaged a leg ({engaged_ticks} ticks)"))?;
    Ok(format!("10000 ticks: {zero_checked} unengaged or stale ticks all zero ({stale_ticks} stale), {engaged_ticks} engaged"))
}

// 4 ------------------------------------------------------------------------

fn axis_oracle(angle: f64, neutral: f64, deadband: f64, gain: f64, max: f64) -> f64 {
    let e = angle - neutral;
    if e.abs() <= deadband {
        0.0
    } else if e > 0.0 {
        (gain * (e - deadband)).min(max)
    } else {
        (gain * (e + deadband)).max(-max)
    }
}

fn joystick_grid() -> Check {
    let cal = JoystickCalibration {
        deadband: 0.05,
        roll_gain: 1.0,
        pitch_gain: 2.0,
        yaw_gain: 1.5,
        vx_max: 0.6,
        vy_max: 0.4,
        wz_max: 1.0,
        neutral: [0.1, -0.2, 0.05],
    };
    let grid: Vec<f64> = (0..21).map(|i| -0.6 + 0.06 * i as f64).collect();
    let mut compared = 0;
    for &roll in &grid {
        for &pitch in &grid {
            for &yaw in &grid {
                let v = hip_to_velocity([roll, pitch, yaw], &cal, true, 7);
                let [nr, np, ny] = cal.neutral;
                let want = (
                    axis_oracle(pitch, np, cal.deadband, cal.pitch_gain, cal.vx_max),
                    axis_oracle(roll, nr, cal.deadband, cal.roll_gain, cal.vy_max),
                    axis_oracle(yaw, ny, cal.deadband, cal.yaw_gain, cal.wz_max),
                );
                ensure((v.vx, v.vy, v.wz) == want, || format!("hips ({roll}, {pitch}, {yaw}): {v:?} vs {want:?}"))?;
                let off = hip_to_velocity([roll, pitch, yaw], &cal, false, 7);
                ensure(off.is_zero(), || format!("disengaged output {off:?}"))?;
                compared += 1;
            }
        }
    }
    // roll -> left/right, pitch -> forward/backward, yaw -> rotation
    let c = cal.with_neutral([0.0; 3]);
    let signs = [
        ([0.3, 0.0, 0.0], (0.0, 1.0, 0.0)),
        ([-0.3, 0.0, 0.0], (0.0, -1.0, 0.0)),
        ([0.0, 0.3, 0.0], (1.0, 0.0, 0.0)),
        ([0.0, -0.3, 0.0], (-1.0, 0.0, 0.0)),
        ([0.0, 0.0, 0.3], (0.0, 0.0, 1.0)),
        ([0.0, 0.0, -0.3], (0.0, 0.0, -1.0)),
    ];
    for (hips, (sx, sy, sz)) in signs {
        let v = hip_to_velocity(hips, &c, true, 0);
        let sign = |x: f64| if x == 0.0 { 0.0 } else { x.signum() };
        ensure((sign(v.vx), sign(v.vy), sign(v.wz)) == (sx, sy, sz), || format!("sign table at {hips:?}: {v:?}"))?;
    }
    Ok(format!("{compared} grid points exact, sign table roll->vy pitch->vx yaw->wz"))
}

// 5 ------------------------------------------------------------------------

fn feedback() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let schedule = GainSchedule { tau_max: 1e9, ..GainSchedule::default() };
    let phases = [FeedbackPhase::Idle, FeedbackPhase::Synchronizing, FeedbackPhase::NormalActive, FeedbackPhase::DeactivatedArm];
    let ratio = schedule.multiplier(FeedbackPhase::DeactivatedArm) / schedule.multiplier(FeedbackPhase::NormalActive);
    let n = 32;
    let mut worst_fd: f64 = 0.0;
    for _ in 0..2_000 {
        let k: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..20.0)).collect();
        let base: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let springs = SpringParams::new(k.clone(), base.clone()).unwrap();
        for phase in phases {
            let t = bias_torque(&base, &springs, phase, &schedule).unwrap();
            ensure(t.iter().all(|&x| x == 0.0), || format!("{phase:?}: nonzero torque at base"))?;
        }
        let q: Vec<f64> = base.iter().map(|b| b + rng.gen_range(-1.0..1.0)).collect();
        let active = bias_torque(&q, &springs, FeedbackPhase::NormalActive, &schedule).unwrap();
        let deact = bias_torque(&q, &springs, FeedbackPhase::DeactivatedArm, &schedule).unwrap();
        for i in 0..n {
            ensure(deact[i] == ratio * active[i], || format!("deactivated {} != {ratio} x {}", deact[i], active[i]))?;
        }
        for phase in phases {
            let m = schedule.multiplier(phase);
            let tau = bias_torque(&q, &springs, phase, &schedule).unwrap();
            for i in 0..n {
                // potential 0.5 m k (q - base)^2, torque is its negative gradient
                let u = |x: f64| 0.5 * m * k[i] * (x - base[i]).powi(2);
                let h = 1e-6;
                let fd = -(u(q[i] + h) - u(q[i] - h)) / (2.0 * h);
                let scale = tau[i].abs().max(1e-3);
                let rel = (fd - tau[i]).abs() / scale;
                worst_fd = worst_fd.max(rel);
                ensure(rel <= 1e-6, || format!("finite difference {fd} vs torque {} ({phase:?})", tau[i]))?;
                let linear = -m * k[i] * (q[i] - base[i]);
                ensure((tau[i] - linear).abs() <= 1e-12 * linear.abs().max(1.0), || format!("not linear: {} vs {linear}", tau[i]))?;
            }
        }
        // superposition and scaling in the displacement
        let a = rng.gen_range(-3.0..3.0);
        let d1: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let d2: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let at = |d: &[f64]| {
            let q: Vec<f64> = base.iter().zip(d).map(|(b, x)| b + x).collect();
            bias_torque(&q, &springs, FeedbackPhase::NormalActive, &schedule).unwrap()
        };
        let (t1, t2) = (at(&d1), at(&d2));
        let sum: Vec<f64> = d1.iter().zip(&d2).map(|(x, y)| x + y).collect();
        let scaled: Vec<f64> = d1.iter().map(|x| a * x).collect();
        let (ts, ta) = (at(&sum), at(&scaled));
        for i in 0..n {
            ensure((ts[i] - (t1[i] + t2[i])).abs() <= 1e-9, || format!("superposition off at {i}"))?;
            ensure((ta[i] - a * t1[i]).abs() <= 1e-9, || format!("scaling off at {i}"))?;
        }
    }
    Ok(format!("zero at base, worst finite-difference error {worst_fd:.1e}, deactivated = {ratio} x active exactly, linear"))
}

// 6 ------------------------------------------------------------------------

fn random_unit_quat(rng: &mut ChaCha8Rng) -> Quat {
    loop {
        let q: Quat = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return q.map(|c| c / n);
        }
    }
}

fn wrapped_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn matrix_of(q: &Quat) -> Rotation3<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3])).to_rotation_matrix()
}

fn retargeting() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);

    // identity pair: every leader joint maps onto a follower joint with sign +1,
    // no offset and wider limits
    let id = rig("dual_arm_leader.toml", "dual_arm_follower.toml");
    let leader_limits: Vec<(f64, f64)> = id.leader.joints().map(|j| (j.position_min, j.position_max)).collect();
    for _ in 0..10_000 {
        let q: Vec<f64> = leader_limits.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect();
        let f = frame(&q, &[0.0, 0.0], [1.0, 0.0, 0.0, 0.0]);
        let out = map_joints(&f, &id).map_err(|e| e.to_string())?;
        let expected: Vec<f64> = f.joint_positions.iter().map(|&x| f64::from(x)).collect();
        ensure(out.follower_targets == expected, || "identity mapping changed a value".into())?;
    }

    // limits over random frames, including far out-of-range leader values
    let mut clamped = 0usize;
    for (leader, follower) in [
        ("g1_leader.toml", "g1_follower.toml"),
        ("g1_leader.toml", "g1_follower_full_body.toml"),
        ("g1_leader.toml", "g1_follower_crawl.toml"),
        ("dual_arm_leader.toml", "dual_arm_follower.toml"),
    ] {
        let r = rig(leader, follower);
        let l_limits: Vec<(f64, f64)> = r.leader.joints().map(|j| (j.position_min, j.position_max)).collect();
        let f_limits: Vec<(f64, f64)> = r.follower.joints().map(|j| (j.position_min, j.position_max)).collect();
        let grips = vec![0.0; r.leader.gripper_count()];
        for _ in 0..250_000 {
            let q: Vec<f64> = l_limits.iter().map(|&(lo, hi)| rng.gen_range(lo - 1.0..hi + 1.0)).collect();
            let f = frame(&q, &grips, random_unit_quat(&mut rng));
            let out = map_joints(&f, &r).map_err(|e| e.to_string())?;
            clamped += out.clamped_joints.len();
            for (t, &(lo, hi)) in out.follower_targets.iter().zip(&f_limits) {
                ensure(*t >= lo && *t <= hi, || format!("{follower}: target {t} outside [{lo}, {hi}]"))?;
            }
        }
    }

    // round trip away from gimbal lock
    let mut worst_rt: f64 = 0.0;
    for _ in 0..200_000 {
        let e = EulerAngles::new(rng.gen_range(-PI..PI), rng.gen_range(-FRAC_PI_2 + 0.01..FRAC_PI_2 - 0.01), rng.gen_range(-PI..PI));
        let back = quat_to_euler(&euler_to_quat(&e)).map_err(|e| e.to_string())?;
        let err = wrapped_diff(e.roll, back.roll).max(wrapped_diff(e.pitch, back.pitch)).max(wrapped_diff(e.yaw, back.yaw));
        worst_rt = worst_rt.max(err);
        let q = random_unit_quat(&mut rng);
        let e2 = quat_to_euler(&q).map_err(|e| e.to_string())?;
        if e2.pitch.abs() < FRAC_PI_2 - 0.01 {
            let q2 = euler_to_quat(&e2);
            let dot: f64 = q.iter().zip(&q2).map(|(a, b)| a * b).sum();
            let err = q.iter().zip(&q2).map(|(a, b)| (a - dot.signum() * b).abs()).fold(0.0, f64::max);
            worst_rt = worst_rt.max(err);
        }
    }
    ensure(worst_rt < 1e-9, || format!("round trip error {worst_rt:e}"))?;

    // at gimbal lock the twist folds into yaw; the rotation must not change
    let mut worst_gimbal: f64 = 0.0;
    for _ in 0..100_000 {
        // exactly at the lock, or within rounding distance of it
        let offset = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..1e-7) };
        let pitch = (FRAC_PI_2 - offset).copysign(rng.gen_range(-1.0..1.0));
        let e = EulerAngles::new(rng.gen_range(-PI..PI), pitch, rng.gen_range(-PI..PI));
        let q = euler_to_quat(&e);
        let back = quat_to_euler(&q).map_err(|e| e.to_string())?;
        ensure(back.roll == 0.0, || format!("gimbal roll {} not folded", back.roll))?;
        let oracle = Rotation3::from_euler_angles(e.roll, e.pitch, e.yaw);
        let got = Rotation3::from_euler_angles(back.roll, back.pitch, back.yaw);
        let err = (oracle.matrix() - got.matrix()).abs().max();
        let err_q = (matrix_of(&q).matrix() - oracle.matrix()).abs().max();
        worst_gimbal = worst_gimbal.max(err).max(err_q);
    }
    ensure(worst_gimbal < 1e-6, || format!("gimbal rotation error {worst_gimbal:e}"))?;
    Ok(format!(
        "identity exact, 10^6 frames within limits ({clamped} clamps), round trip {worst_rt:.1e}, gimbal {worst_gimbal:.1e}"
    ))
}

// 7 ------------------------------------------------------------------------

fn synchronization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut trials = 0;
    let mut worst_ratio: f64 = 0.0;
    let mut longest = 0;
    for follower in ["g1_follower.toml", "g1_follower_full_body.toml", "g1_follower_crawl.toml"] {
        let r = rig("g1_leader.toml", follower);
        let fraction = r.follower.session.sync_velocity_fraction;
        let epsilon = r.follower.session.sync_epsilon;
        let vel: Vec<f64> = r.follower.joints().map(|j| j.velocity_max * fraction).collect();
        let f_limits: Vec<(f64, f64)> = r.follower.joints().map(|j| (j.position_min, j.position_max)).collect();
        let l_limits: Vec<(f64, f64)> = r.leader.joints().map(|j| (j.position_min, j.position_max)).collect();
        for _ in 0..60 {
            let mut l = Loop::new(&r);
            l.follower.joints = f_limits.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect();
            let q: Vec<f64> = l_limits.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect();
            let orientation = euler_to_quat(&EulerAngles::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)));
            let closed = frame(&q, &[1.0, 1.0], orientation);
            let open = frame(&q, &[0.0, 0.0], orientation);
            let target = map_joints(&closed, &r).map_err(|e| e.to_string())?.follower_targets;

            let mut prev: Option<Vec<f64>> = None;
            let mut sync_ticks = 0u64;
            let mut bound = None;
            for k in 0..3_000 {
                let was_sync = matches!(l.session.phase, Phase::Synchronizing { .. });
                let start_pose = l.follower.joints.clone();
                let out = l.tick(Some(if k < 300 { &closed } else { &open }));
                if out.events.iter().any(|e| e.kind == GestureKind::SessionActivated) {
                    // commands start from the pose held at activation
                    prev = Some(start_pose.clone());
                    let ticks = start_pose
                        .iter()
                        .zip(&target)
                        .zip(&vel)
                        .map(|((a, b), v)| ((a - b).abs() / (v * DT.as_secs_f64())).ceil() as u64)
                        .max()
                        .unwrap();
                    bound = Some(ticks + 1);
                }
                if was_sync {
                    sync_ticks += 1;
                    let cmd = out.commands.joint_targets.clone().ok_or("no targets while synchronizing")?;
                    let before = prev.as_ref().ok_or("synchronizing before activation")?;
                    for i in 0..cmd.len() {
                        let step = (cmd[i] - before[i]).abs();
                        let limit = vel[i] * DT.as_secs_f64();
                        worst_ratio = worst_ratio.max(step / limit);
                        ensure(step <= limit * (1.0 + 1e-12), || format!("joint {i} moved {step} > {limit} in one tick"))?;
                    }
                    prev = Some(cmd);
                }
                if l.session.phase == Phase::Active {
                    break;
                }
            }
            let bound = bound.ok_or("never activated")?;
            ensure(l.session.phase == Phase::Active, || format!("not converged after {sync_ticks} ticks"))?;
            ensure(sync_ticks <= bound, || format!("took {sync_ticks} ticks, bound {bound}"))?;
            let last = prev.unwrap();
            let err = last.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            ensure(err < epsilon, || format!("final error {err}"))?;
            longest = longest.max(sync_ticks);
            trials += 1;
        }
    }
    Ok(format!("{trials} random starts, max step {:.3} of v*dt, converged within bound (longest {longest} ticks)", worst_ratio))
}

// 8 ------------------------------------------------------------------------

fn random_frame(rng: &mut ChaCha8Rng) -> StateFrame {
    let n = rng.gen_range(0..64);
    let g = rng.gen_range(0..4);
    let mut f = StateFrame::new(
        (0..n).map(|_| rng.gen_range(-10.0f32..10.0)).collect(),
        (0..n).map(|_| rng.gen_range(-50.0f32..50.0)).collect(),
        (0..g).map(|_| rng.gen_range(0.0f32..=1.0)).collect(),
        random_unit_quat(rng).map(|c| c as f32),
    );
    f.seq = rng.gen();
    f.stamp_ns = rng.gen();
    f
}

fn wire_format() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pool = Vec::new();
    for i in 0..100_000 {
        let f = random_frame(&mut rng);
        let bytes = encode_frame(&f).map_err(|e| e.to_string())?;
        let back = decode_frame(&bytes).map_err(|e| format!("round trip {i}: {e}"))?;
        ensure(back == f, || format!("round trip {i} changed the frame"))?;
        if i < 512 {
            pool.push(bytes);
        }
    }

    let mut accepted = 0;
    for i in 0..1_000_000u32 {
        let input: Vec<u8> = if i % 2 == 0 {
            let len = rng.gen_range(0..400);
            (0..len).map(|_| rng.gen()).collect()
        } else {
            let mut b = pool[rng.gen_range(0..pool.len())].clone();
            match rng.gen_range(0..4) {
                0 => b.truncate(rng.gen_range(0..=b.len())),
                1 => b.extend((0..rng.gen_range(1..16)).map(|_| rng.gen::<u8>())),
                _ => {
                    for _ in 0..rng.gen_range(1..8) {
                        let at = rng.gen_range(0..b.len());
                        b[at] = rng.gen();
                    }
                }
            }
            b
        };
        let result = catch_unwind(AssertUnwindSafe(|| decode_frame(&input))).map_err(|_| format!("decoder panicked on input {i}"))?;
        if let Ok(f) = result {
            accepted += 1;
            ensure(encode_frame(&f).ok().as_deref() == Some(&input[..]), || format!("input {i} decoded to a different frame"))?;
        }
    }

    let mut flips = 0;
    for bytes in pool.iter().take(200) {
        for bit in 0..bytes.len() * 8 {
            let mut b = bytes.clone();
            b[bit / 8] ^= 1 << (bit % 8);
            let r = decode_frame(&b);
            ensure(matches!(r, Err(DecodeError::BadCrc { .. })), || format!("bit {bit} flip gave {r:?}"))?;
            flips += 1;
        }
    }
    Ok(format!("10^5 round trips, 10^6 fuzzed inputs without a panic ({accepted} valid), {flips} bit flips all BadCrc"))
}

// 9 ------------------------------------------------------------------------

fn scenarios() -> Check {
    let mut parts = Vec::new();
    for name in ["loco_manipulation", "full_body", "crawling"] {
        let start = Instant::now();
        let report = run_scenario(root().join("scenarios").join(format!("{name}.toml"))).map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        let golden = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.events")))
            .map_err(|e| format!("{name} golden: {e}"))?;
        ensure(report.passed(), || format!("{name} assertions failed:\n{report}"))?;
        ensure(report.event_log == golden, || format!("{name} event log differs from golden"))?;
        ensure(secs < 5.0, || format!("{name} took {secs:.2} s"))?;
        parts.push(format!("{name} {secs:.2} s"));
    }
    Ok(format!("event logs byte-identical to goldens: {}", parts.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("latency", latency),
        ("gesture timing", gesture_timing),
        ("zero-velocity default", zero_velocity_default),
        ("joystick axis mapping", joystick_grid),
        ("force feedback", feedback),
        ("retargeting", retargeting),
        ("synchronization safety", synchronization),
        ("wire format", wire_format),
        ("scenario regressions", scenarios),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
