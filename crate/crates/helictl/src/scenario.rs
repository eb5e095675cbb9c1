//! Closed-loop scenario runner: waypoints, wind, sensor noise, flight logs.
//!
//! One run is a single deterministic loop. Position and velocity are measured
//! and the position loop updated at the control rate; the attitude law is
//! evaluated every dynamics step from freshly sampled attitude and rate
//! measurements and held over the step. Given a seed, the whole pipeline is
//! reproducible bit for bit.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::Write;
use thiserror::Error;

use crate::dynamics::{self, ControlInputs, VehicleState, DEFAULT_MAX_DT};
use crate::hinf::GainSet;
use crate::linearize::TrimPoint;
use crate::outer_loop::{
    attitude_command, error_controller, normalized_errors, OuterLoopState, PerformanceEnvelope,
};
use crate::params::{ControllerParams, HelicopterParams};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("scenario invalid: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("unknown built-in scenario `{0}`")]
    UnknownBuiltin(String),
}

/// Target point with a hold time.
#[derive(Debug, Clone, Copy)]
pub struct Waypoint {
    /// NED position, m.
    pub pos: Vector3<f64>,
    /// Heading target, rad.
    pub heading: f64,
    /// Hold duration after arrival, s.
    pub hold: f64,
}

/// One wind event: ramp up, hold, ramp down.
#[derive(Debug, Clone, Copy)]
pub struct WindSegment {
    pub start: f64,
    pub duration: f64,
    /// Direction in NED (normalized at load).
    pub dir: Vector3<f64>,
    pub speed: f64,
    pub ramp: f64,
}

/// Measurement noise, one standard deviation each.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    pub pos: f64,
    pub vel: f64,
    pub att: f64,
    pub rate: f64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    /// Start position in NED, m.
    pub start_pos: Vector3<f64>,
    pub start_heading: f64,
    pub waypoints: Vec<Waypoint>,
    pub transit_speed: f64,
    pub transit_accel: f64,
    pub yaw_rate: f64,
    pub wind: Vec<WindSegment>,
    pub noise: NoiseSpec,
    pub dt: f64,
    pub seed: u64,
    /// Ground level as altitude, m; touchdown freezes the dynamics.
    pub platform_alt: f64,
    /// Extra logged time after the last waypoint hold, s.
    pub extra_hold: f64,
}

impl Scenario {
    /// The flight experiment: lift off a 0.20 m platform, climb to 0.65 m,
    /// swing the heading to 273.5 deg, hold for a minute under a 3 m/s side
    /// gust, then land.
    pub fn paper_hover() -> Scenario {
        let heading = (273.5f64 - 360.0).to_radians();
        // gust blows horizontally, normal to the hover heading
        let gust_dir = Vector3::new(-heading.sin(), heading.cos(), 0.0);
        Scenario {
            name: "paper_hover".into(),
            start_pos: Vector3::new(0.0, 0.0, -0.20),
            start_heading: 0.0,
            waypoints: vec![
                Waypoint {
                    pos: Vector3::new(0.0, 0.0, -0.65),
                    heading,
                    hold: 60.0,
                },
                Waypoint {
                    pos: Vector3::new(0.0, 0.0, -0.20),
                    heading,
                    hold: 3.0,
                },
            ],
            transit_speed: 0.25,
            transit_accel: 0.25,
            yaw_rate: 30f64.to_radians(),
            wind: vec![WindSegment {
                start: 20.0,
                duration: 20.0,
                dir: gust_dir,
                speed: 3.0,
                ramp: 1.0,
            }],
            noise: NoiseSpec {
                pos: 0.05,
                vel: 0.05,
                att: 0.1f64.to_radians(),
                rate: 0.1f64.to_radians(),
            },
            dt: 0.002,
            seed: 42,
            platform_alt: 0.20,
            extra_hold: 2.0,
        }
    }

    /// Quiet ten-second hover at altitude, no wind.
    pub fn hover_hold() -> Scenario {
        Scenario {
            name: "hover_hold".into(),
            start_pos: Vector3::new(0.0, 0.0, -0.65),
            start_heading: 0.0,
            waypoints: vec![Waypoint {
                pos: Vector3::new(0.0, 0.0, -0.65),
                heading: 0.0,
                hold: 10.0,
            }],
            transit_speed: 0.3,
            transit_accel: 0.3,
            yaw_rate: 30f64.to_radians(),
            wind: Vec::new(),
            noise: NoiseSpec {
                pos: 0.05,
                vel: 0.05,
                att: 0.1f64.to_radians(),
                rate: 0.1f64.to_radians(),
            },
            dt: 0.002,
            seed: 42,
            platform_alt: 0.0,
            extra_hold: 1.0,
        }
    }

    pub fn builtin(name: &str) -> Result<Scenario, ScenarioError> {
        match name {
            "paper_hover" => Ok(Self::paper_hover()),
            "hover_hold" => Ok(Self::hover_hold()),
            other => Err(ScenarioError::UnknownBuiltin(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::Invalid(msg));
        if !(self.dt > 0.0 && self.dt <= DEFAULT_MAX_DT) {
            return bad(format!("dt must be in (0, {DEFAULT_MAX_DT}], got {}", self.dt));
        }
        if self.waypoints.is_empty() {
            return bad("at least one waypoint required".into());
        }
        if !(self.transit_speed > 0.0 && self.transit_accel > 0.0 && self.yaw_rate > 0.0) {
            return bad("transit speed, acceleration and yaw rate must be positive".into());
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            if !(w.pos.iter().all(|v| v.is_finite()) && w.heading.is_finite() && w.hold >= 0.0) {
                return bad(format!("waypoint {i} not finite or negative hold"));
            }
        }
        for (i, w) in self.wind.iter().enumerate() {
            if w.speed < 0.0 || w.duration < 0.0 || w.ramp < 0.0 || w.start < 0.0 {
                return bad(format!("wind segment {i} has negative fields"));
            }
            if !w.dir.iter().all(|v| v.is_finite()) || w.dir.norm() == 0.0 {
                return bad(format!("wind segment {i} direction degenerate"));
            }
        }
        if self.noise.pos < 0.0 || self.noise.vel < 0.0 || self.noise.att < 0.0 || self.noise.rate < 0.0
        {
            return bad("noise standard deviations must be >= 0".into());
        }
        if !self.start_pos.iter().all(|v| v.is_finite()) || !self.start_heading.is_finite() {
            return bad("start pose not finite".into());
        }
        Ok(())
    }
}

// --- wind ----------------------------------------------------------------

/// Wind velocity in NED at a given time: each segment ramps in over `ramp`,
/// holds, and ramps out; zero outside segments.
pub fn wind_at(segments: &[WindSegment], t: f64) -> Vector3<f64> {
    let mut total = Vector3::zeros();
    for seg in segments {
        let end = seg.start + seg.duration;
        if t <= seg.start || t >= end {
            continue;
        }
        let ramp = seg.ramp.min(0.5 * seg.duration).max(0.0);
        let scale = if ramp == 0.0 {
            1.0
        } else if t < seg.start + ramp {
            (t - seg.start) / ramp
        } else if t > end - ramp {
            (end - t) / ramp
        } else {
            1.0
        };
        total += seg.dir.normalize() * (seg.speed * scale);
    }
    total
}

// --- reference trajectory --------------------------------------------------

/// Scalar trapezoidal speed profile over a given distance.
#[derive(Debug, Clone, Copy)]
struct Trapezoid {
    dist: f64,
    v_peak: f64,
    t_acc: f64,
    t_cruise: f64,
    accel: f64,
}

impl Trapezoid {
    fn plan(dist: f64, v_max: f64, accel: f64) -> Trapezoid {
        if dist <= 0.0 {
            return Trapezoid {
                dist: 0.0,
                v_peak: 0.0,
                t_acc: 0.0,
                t_cruise: 0.0,
                accel,
            };
        }
        let d_acc = v_max * v_max / accel; // accelerate + decelerate distance
        if dist <= d_acc {
            let t_acc = (dist / accel).sqrt();
            Trapezoid {
                dist,
                v_peak: accel * t_acc,
                t_acc,
                t_cruise: 0.0,
                accel,
            }
        } else {
            let t_acc = v_max / accel;
            Trapezoid {
                dist,
                v_peak: v_max,
                t_acc,
                t_cruise: (dist - d_acc) / v_max,
                accel,
            }
        }
    }

    fn total_time(&self) -> f64 {
        2.0 * self.t_acc + self.t_cruise
    }

    /// (distance, speed) at time t from the profile start.
    fn sample(&self, t: f64) -> (f64, f64) {
        if self.dist == 0.0 {
            return (0.0, 0.0);
        }
        let t = t.clamp(0.0, self.total_time());
        if t < self.t_acc {
            (0.5 * self.accel * t * t, self.accel * t)
        } else if t < self.t_acc + self.t_cruise {
            let d0 = 0.5 * self.accel * self.t_acc * self.t_acc;
            (d0 + self.v_peak * (t - self.t_acc), self.v_peak)
        } else {
            let td = self.total_time() - t;
            (self.dist - 0.5 * self.accel * td * td, self.accel * td)
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Phase {
    t_start: f64,
    t_hold_start: f64,
    t_end: f64,
    from_pos: Vector3<f64>,
    to_pos: Vector3<f64>,
    dir: Vector3<f64>,
    profile: Trapezoid,
    from_heading: f64,
    to_heading: f64,
    yaw_dur: f64,
}

/// Reference state at one instant.
#[derive(Debug, Clone, Copy)]
pub struct RefSample {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    /// Continuous (unwrapped) heading reference, rad.
    pub heading: f64,
    /// True while the reference descends (positive NED z rate).
    pub descending: bool,
}

/// Piecewise waypoint reference with trapezoidal transits and rate-limited
/// heading ramps.
#[derive(Debug, Clone)]
pub struct Reference {
    phases: Vec<Phase>,
    final_pos: Vector3<f64>,
    final_heading: f64,
    pub total_time: f64,
}

fn wrap_pi(a: f64) -> f64 {
    let mut x = (a + std::f64::consts::PI) % (2.0 * std::f64::consts::PI);
    if x < 0.0 {
        x += 2.0 * std::f64::consts::PI;
    }
    x - std::f64::consts::PI
}

impl Reference {
    pub fn plan(sc: &Scenario) -> Reference {
        let mut phases = Vec::new();
        let mut pos = sc.start_pos;
        let mut heading = sc.start_heading;
        let mut t = 0.0;
        for wp in &sc.waypoints {
            let delta = wp.pos - pos;
            let dist = delta.norm();
            let dir = if dist > 0.0 { delta / dist } else { Vector3::zeros() };
            let profile = Trapezoid::plan(dist, sc.transit_speed, sc.transit_accel);
            let to_heading = heading + wrap_pi(wp.heading - heading);
            let yaw_dur = (to_heading - heading).abs() / sc.yaw_rate;
            let t_hold_start = t + profile.total_time().max(yaw_dur);
            let t_end = t_hold_start + wp.hold;
            phases.push(Phase {
                t_start: t,
                t_hold_start,
                t_end,
                from_pos: pos,
                to_pos: wp.pos,
                dir,
                profile,
                from_heading: heading,
                to_heading,
                yaw_dur,
            });
            pos = wp.pos;
            heading = to_heading;
            t = t_end;
        }
        Reference {
            phases,
            final_pos: pos,
            final_heading: heading,
            total_time: t,
        }
    }

    pub fn sample(&self, t: f64) -> RefSample {
        for ph in &self.phases {
            if t > ph.t_end {
                continue;
            }
            let tau = (t - ph.t_start).max(0.0);
            let (d, v) = ph.profile.sample(tau);
            let pos = ph.from_pos + ph.dir * d;
            let vel = ph.dir * v;
            let heading = if ph.yaw_dur > 0.0 && tau < ph.yaw_dur {
                ph.from_heading + (ph.to_heading - ph.from_heading) * (tau / ph.yaw_dur)
            } else {
                ph.to_heading
            };
            return RefSample {
                pos,
                vel,
                heading,
                descending: vel.z > 1e-6,
            };
        }
        RefSample {
            pos: self.final_pos,
            vel: Vector3::zeros(),
            heading: self.final_heading,
            descending: false,
        }
    }
}

// --- flight log -------------------------------------------------------------

pub const FLAG_SERVO_SAT: u8 = 1;
pub const FLAG_TILT_CLAMP: u8 = 2;
pub const FLAG_CMD_HELD: u8 = 4;
pub const FLAG_LANDED: u8 = 8;

#[derive(Debug, Clone, Copy)]
pub struct LogRow {
    pub t: f64,
    pub state: VehicleState,
    pub meas_pos: Vector3<f64>,
    pub meas_vel: Vector3<f64>,
    pub meas_att: Vector3<f64>,
    pub meas_rate: Vector3<f64>,
    pub r_out: [f64; 4],
    pub u: ControlInputs,
    pub eps_p: Vector3<f64>,
    pub eps_v: Vector3<f64>,
    pub e: Vector3<f64>,
    pub margins: Vector3<f64>,
    pub wind_ned: Vector3<f64>,
    pub flags: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    EnvelopeViolation(String),
    Aborted(String),
}

#[derive(Debug, Clone)]
pub struct FlightLog {
    pub scenario: String,
    pub seed: u64,
    pub dt: f64,
    pub rows: Vec<LogRow>,
    pub outcome: RunOutcome,
}

impl FlightLog {
    pub fn completed(&self) -> bool {
        self.outcome == RunOutcome::Completed
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(
            w,
            "t_s,pos_n_m,pos_e_m,pos_d_m,vb_u_mps,vb_v_mps,vb_w_mps,roll_rad,pitch_rad,yaw_rad,\
             p_radps,q_radps,r_radps,flap_a_rad,flap_b_rad,tail_cmd,\
             meas_n_m,meas_e_m,meas_d_m,meas_vn_mps,meas_ve_mps,meas_vd_mps,\
             meas_roll_rad,meas_pitch_rad,meas_yaw_rad,meas_p_radps,meas_q_radps,meas_r_radps,\
             cmd_roll_rad,cmd_pitch_rad,cmd_yaw_rad,cmd_col,\
             u_lat,u_lon,u_ped,u_col,\
             eps_p_n_m,eps_p_e_m,eps_p_d_m,eps_v_n_mps,eps_v_e_mps,eps_v_d_mps,\
             e_x,e_y,e_z,margin_x,margin_y,margin_z,\
             wind_n_mps,wind_e_mps,wind_d_mps,flags"
        )?;
        for r in &self.rows {
            let s = &r.state;
            let vals = [
                r.t,
                s.p_ned.x,
                s.p_ned.y,
                s.p_ned.z,
                s.v_b.x,
                s.v_b.y,
                s.v_b.z,
                s.euler.x,
                s.euler.y,
                s.euler.z,
                s.omega_b.x,
                s.omega_b.y,
                s.omega_b.z,
                s.flap.x,
                s.flap.y,
                s.yaw_gyro.cmd,
                r.meas_pos.x,
                r.meas_pos.y,
                r.meas_pos.z,
                r.meas_vel.x,
                r.meas_vel.y,
                r.meas_vel.z,
                r.meas_att.x,
                r.meas_att.y,
                r.meas_att.z,
                r.meas_rate.x,
                r.meas_rate.y,
                r.meas_rate.z,
                r.r_out[0],
                r.r_out[1],
                r.r_out[2],
                r.r_out[3],
                r.u.lat,
                r.u.lon,
                r.u.ped,
                r.u.col,
                r.eps_p.x,
                r.eps_p.y,
                r.eps_p.z,
                r.eps_v.x,
                r.eps_v.y,
                r.eps_v.z,
                r.e.x,
                r.e.y,
                r.e.z,
                r.margins.x,
                r.margins.y,
                r.margins.z,
                r.wind_ned.x,
                r.wind_ned.y,
                r.wind_ned.z,
            ];
            let mut line = String::with_capacity(52 * 18);
            for v in vals {
                line.push_str(&format!("{v:.8e},"));
            }
            line.push_str(&format!("{}", r.flags));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Plot-ready CSV bundles: attitudes, rates, controller outputs, path.
    pub fn write_plot_bundles(&self, dir: &std::path::Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut att = std::fs::File::create(dir.join("attitudes.csv"))?;
        writeln!(att, "t_s,roll_rad,pitch_rad,yaw_rad,cmd_roll_rad,cmd_pitch_rad,cmd_yaw_rad")?;
        let mut rates = std::fs::File::create(dir.join("rates.csv"))?;
        writeln!(rates, "t_s,p_radps,q_radps,r_radps")?;
        let mut ctrl = std::fs::File::create(dir.join("controller.csv"))?;
        writeln!(ctrl, "t_s,cmd_roll_rad,cmd_pitch_rad,cmd_yaw_rad,cmd_col,u_lat,u_lon,u_ped,u_col")?;
        let mut path = std::fs::File::create(dir.join("path3d.csv"))?;
        writeln!(path, "t_s,pos_n_m,pos_e_m,pos_d_m,alt_m")?;
        for r in &self.rows {
            let s = &r.state;
            writeln!(
                att,
                "{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
                r.t, s.euler.x, s.euler.y, s.euler.z, r.r_out[0], r.r_out[1], r.r_out[2]
            )?;
            writeln!(
                rates,
                "{:.8e},{:.8e},{:.8e},{:.8e}",
                r.t, s.omega_b.x, s.omega_b.y, s.omega_b.z
            )?;
            writeln!(
                ctrl,
                "{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
                r.t,
                r.r_out[0],
                r.r_out[1],
                r.r_out[2],
                r.r_out[3],
                r.u.lat,
                r.u.lon,
                r.u.ped,
                r.u.col
            )?;
            writeln!(
                path,
                "{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
                r.t, s.p_ned.x, s.p_ned.y, s.p_ned.z, -s.p_ned.z
            )?;
        }
        Ok(())
    }
}

// --- runner ------------------------------------------------------------------

struct Sensors {
    rng: ChaCha8Rng,
    noise: NoiseSpec,
    unit: Normal<f64>,
}

impl Sensors {
    fn new(seed: u64, noise: NoiseSpec) -> Sensors {
        Sensors {
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
            unit: Normal::new(0.0, 1.0).expect("unit normal"),
        }
    }

    fn gauss3(&mut self, sigma: f64) -> Vector3<f64> {
        let a = self.unit.sample(&mut self.rng) * sigma;
        let b = self.unit.sample(&mut self.rng) * sigma;
        let c = self.unit.sample(&mut self.rng) * sigma;
        Vector3::new(a, b, c)
    }

    /// Position and NED velocity at the position-loop rate.
    fn measure_nav(&mut self, s: &VehicleState) -> (Vector3<f64>, Vector3<f64>) {
        let v_ned = dynamics::rotation_matrix(&s.euler).transpose() * s.v_b;
        (s.p_ned + self.gauss3(self.noise.pos), v_ned + self.gauss3(self.noise.vel))
    }

    /// Attitude and body rates at the attitude-loop rate.
    fn measure_imu(&mut self, s: &VehicleState) -> (Vector3<f64>, Vector3<f64>) {
        (
            s.euler + self.gauss3(self.noise.att),
            s.omega_b + self.gauss3(self.noise.rate),
        )
    }
}

/// Run one closed-loop scenario. The log always carries every step up to and
/// including the failure step; `outcome` says how the run ended.
pub fn run_scenario(
    sc: &Scenario,
    heli: &HelicopterParams,
    ctrl: &ControllerParams,
    gains: &GainSet,
    trim: &TrimPoint,
) -> Result<FlightLog, ScenarioError> {
    sc.validate()?;
    let reference = Reference::plan(sc);
    let duration = reference.total_time + sc.extra_hold;
    let n_sub = (ctrl.control_dt / sc.dt).round().max(1.0) as usize;

    // initial state: trim attitude at the scenario start pose
    let mut state = trim.state;
    state.p_ned = sc.start_pos;
    state.euler.z = sc.start_heading;
    let psi_trim = sc.start_heading;
    let x_trim = {
        let mut x = trim.x_synth();
        x[8] = psi_trim;
        x
    };

    let mut sensors = Sensors::new(sc.seed, sc.noise);
    let mut outer = OuterLoopState::new();

    // envelope, optionally widened by the initial errors
    let r0 = reference.sample(0.0);
    let env = if ctrl.envelope_auto_init {
        let v0 = dynamics::rotation_matrix(&state.euler).transpose() * state.v_b;
        let eps_p0 = r0.pos - state.p_ned;
        let eps_v0 = r0.vel - v0;
        PerformanceEnvelope::auto_init(ctrl, &eps_p0, &eps_v0)
    } else {
        PerformanceEnvelope::from_params(ctrl)
    };

    let total_steps = (duration / sc.dt).round() as usize;
    let mut rows: Vec<LogRow> = Vec::with_capacity(total_steps + 1);
    let mut outcome = RunOutcome::Completed;
    let mut landed = false;

    // log template updated through the loop
    let mut last_r_out = [0.0, 0.0, sc.start_heading, -ctrl.col_bias];
    let mut last_u = trim.inputs;
    let mut last_meas_pos = state.p_ned;
    let mut last_meas_vel = Vector3::zeros();
    let mut last_meas_att = state.euler;
    let mut last_meas_rate = state.omega_b;
    let mut last_errs = normalized_errors(
        &state.p_ned,
        &Vector3::zeros(),
        &r0.pos,
        &r0.vel,
        &env,
        0.0,
    )
    .map_err(|e| ScenarioError::Invalid(format!("initial state outside envelope: {e}")))?;

    let mut step_idx: usize = 0;
    rows.push(LogRow {
        t: 0.0,
        state,
        meas_pos: last_meas_pos,
        meas_vel: last_meas_vel,
        meas_att: last_meas_att,
        meas_rate: last_meas_rate,
        r_out: last_r_out,
        u: last_u,
        eps_p: last_errs.eps_p,
        eps_v: last_errs.eps_v,
        e: last_errs.e,
        margins: last_errs.margins,
        wind_ned: wind_at(&sc.wind, 0.0),
        flags: 0,
    });

    'outer: while step_idx < total_steps {
        let t = step_idx as f64 * sc.dt;
        // position loop tick
        let (meas_pos, meas_vel) = sensors.measure_nav(&state);
        last_meas_pos = meas_pos;
        last_meas_vel = meas_vel;
        let r = reference.sample(t);
        match normalized_errors(&meas_pos, &meas_vel, &r.pos, &r.vel, &env, t) {
            Ok(errs) => last_errs = errs,
            Err(e) => {
                outcome = RunOutcome::EnvelopeViolation(e.to_string());
                // flush the failure step with the last known commands
                let flags = if landed { FLAG_LANDED } else { 0 };
                rows.push(LogRow {
                    t: t + sc.dt,
                    state,
                    meas_pos,
                    meas_vel,
                    meas_att: last_meas_att,
                    meas_rate: last_meas_rate,
                    r_out: last_r_out,
                    u: last_u,
                    eps_p: last_errs.eps_p,
                    eps_v: last_errs.eps_v,
                    e: last_errs.e,
                    margins: last_errs.margins,
                    wind_ned: wind_at(&sc.wind, t),
                    flags,
                });
                break 'outer;
            }
        }
        let u_m = error_controller(
            &last_errs.e,
            &env,
            ctrl,
            &mut outer,
            last_meas_att.z,
            t,
            ctrl.control_dt,
        );
        let cmd = attitude_command(&u_m, r.heading, ctrl.attitude_limit, &mut outer);
        last_r_out = cmd.r_out;
        let mut tick_tilt_clamped = cmd.clamped;
        let mut tick_servo_sat = false;

        // attitude loop substeps
        for _ in 0..n_sub {
            let t_sub = step_idx as f64 * sc.dt;
            let (meas_att, meas_rate) = sensors.measure_imu(&state);
            last_meas_att = meas_att;
            last_meas_rate = meas_rate;

            let x_dev = [
                meas_att.x - x_trim[0],
                meas_att.y - x_trim[1],
                meas_rate.x - x_trim[2],
                meas_rate.y - x_trim[3],
                state.flap.x - x_trim[4],
                state.flap.y - x_trim[5],
                meas_rate.z - x_trim[6],
                0.0, // tail-command deviation derived inside the law
                meas_att.z - x_trim[8],
            ];
            let r_dev = [
                cmd.r_out[0],
                cmd.r_out[1],
                cmd.r_out[2] - psi_trim,
                cmd.r_out[3] + ctrl.col_bias,
            ];
            let (u, _tail_cmd) = crate::hinf::attitude_control_gyro(
                &x_dev,
                &r_dev,
                gains,
                &trim.inputs,
                heli.servo_limit,
                heli.gyro_kp,
                heli.gyro_ki,
                heli.gyro_gain,
                meas_rate.z,
                state.yaw_gyro.integrator,
                x_trim[7],
            );
            let at_limit = |v: f64| v.abs() >= heli.servo_limit - 1e-12;
            tick_servo_sat |= at_limit(u.lat) || at_limit(u.lon) || at_limit(u.ped) || at_limit(u.col);
            last_u = u;

            let wind_ned = wind_at(&sc.wind, t_sub);
            let wind_body = dynamics::rotation_matrix(&state.euler) * wind_ned;

            if !landed {
                match dynamics::step(&state, &u, &wind_body, sc.dt, heli) {
                    Ok(next) => state = next,
                    Err(e) => {
                        outcome = RunOutcome::Aborted(e.to_string());
                        let mut flags = 0;
                        if tick_servo_sat {
                            flags |= FLAG_SERVO_SAT;
                        }
                        rows.push(LogRow {
                            t: t_sub + sc.dt,
                            state,
                            meas_pos: last_meas_pos,
                            meas_vel: last_meas_vel,
                            meas_att,
                            meas_rate,
                            r_out: cmd.r_out,
                            u,
                            eps_p: last_errs.eps_p,
                            eps_v: last_errs.eps_v,
                            e: last_errs.e,
                            margins: last_errs.margins,
                            wind_ned,
                            flags,
                        });
                        break 'outer;
                    }
                }
                // touchdown: descending reference and at or below the pad
                if r.descending && state.altitude() <= sc.platform_alt {
                    landed = true;
                    state.p_ned.z = -sc.platform_alt;
                    state.v_b = Vector3::zeros();
                    state.omega_b = Vector3::zeros();
                }
            }

            step_idx += 1;
            let mut flags = 0;
            if tick_servo_sat {
                flags |= FLAG_SERVO_SAT;
            }
            if tick_tilt_clamped {
                flags |= FLAG_TILT_CLAMP;
            }
            if cmd.held {
                flags |= FLAG_CMD_HELD;
            }
            if landed {
                flags |= FLAG_LANDED;
            }
            rows.push(LogRow {
                t: step_idx as f64 * sc.dt,
                state,
                meas_pos: last_meas_pos,
                meas_vel: last_meas_vel,
                meas_att,
                meas_rate,
                r_out: cmd.r_out,
                u,
                eps_p: last_errs.eps_p,
                eps_v: last_errs.eps_v,
                e: last_errs.e,
                margins: last_errs.margins,
                wind_ned,
                flags,
            });
            if step_idx >= total_steps {
                break;
            }
        }

        // anti-windup for the next tick
        outer.freeze_lateral = tick_tilt_clamped;
        outer.freeze_vertical = tick_servo_sat;
        tick_tilt_clamped = false;
    }

    Ok(FlightLog {
        scenario: sc.name.clone(),
        seed: sc.seed,
        dt: sc.dt,
        rows,
        outcome,
    })
}

// --- scenario files -----------------------------------------------------------

/// Parse the scenario file format: `key = value...` lines, `#` comments,
/// repeatable `waypoint` and `wind` keys, altitudes given positive-up.
pub fn parse_scenario_str(text: &str) -> Result<Scenario, ScenarioError> {
    let mut sc = Scenario {
        name: "custom".into(),
        start_pos: Vector3::zeros(),
        start_heading: 0.0,
        waypoints: Vec::new(),
        transit_speed: 0.3,
        transit_accel: 0.3,
        yaw_rate: 30f64.to_radians(),
        wind: Vec::new(),
        noise: NoiseSpec {
            pos: 0.05,
            vel: 0.05,
            att: 0.1f64.to_radians(),
            rate: 0.1f64.to_radians(),
        },
        dt: 0.002,
        seed: 42,
        platform_alt: 0.0,
        extra_hold: 2.0,
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line.split_once('=').ok_or(ScenarioError::Parse {
            line: line_no,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim().to_ascii_lowercase();
        let rest = rest.trim();
        let nums = |want: usize| -> Result<Vec<f64>, ScenarioError> {
            let vals: Result<Vec<f64>, _> =
                rest.split_whitespace().map(|t| t.parse::<f64>()).collect();
            let vals = vals.map_err(|_| ScenarioError::Parse {
                line: line_no,
                msg: format!("`{rest}` is not a list of numbers"),
            })?;
            if vals.len() != want {
                return Err(ScenarioError::Parse {
                    line: line_no,
                    msg: format!("`{key}` needs {want} values, got {}", vals.len()),
                });
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(ScenarioError::Parse {
                    line: line_no,
                    msg: format!("`{key}` carries a non-finite value"),
                });
            }
            Ok(vals)
        };
        match key.as_str() {
            "name" => sc.name = rest.to_string(),
            "start" => {
                let v = nums(3)?;
                // north east altitude -> NED
                sc.start_pos = Vector3::new(v[0], v[1], -v[2]);
            }
            "heading_deg" => sc.start_heading = nums(1)?[0].to_radians(),
            "transit_speed" => sc.transit_speed = nums(1)?[0],
            "transit_accel" => sc.transit_accel = nums(1)?[0],
            "yaw_rate_dps" => sc.yaw_rate = nums(1)?[0].to_radians(),
            "dt" => sc.dt = nums(1)?[0],
            "seed" => {
                sc.seed = rest.parse().map_err(|_| ScenarioError::Parse {
                    line: line_no,
                    msg: format!("`{rest}` is not an unsigned integer seed"),
                })?
            }
            "platform_alt" => sc.platform_alt = nums(1)?[0],
            "extra_hold" => sc.extra_hold = nums(1)?[0],
            "noise_pos" => sc.noise.pos = nums(1)?[0],
            "noise_vel" => sc.noise.vel = nums(1)?[0],
            "noise_att_deg" => sc.noise.att = nums(1)?[0].to_radians(),
            "noise_rate_dps" => sc.noise.rate = nums(1)?[0].to_radians(),
            "waypoint" => {
                let v = nums(5)?;
                sc.waypoints.push(Waypoint {
                    pos: Vector3::new(v[0], v[1], -v[2]),
                    heading: v[3].to_radians(),
                    hold: v[4],
                });
            }
            "wind" => {
                let v = nums(7)?;
                sc.wind.push(WindSegment {
                    start: v[0],
                    dir: Vector3::new(v[1], v[2], v[3]),
                    speed: v[4],
                    ramp: v[5],
                    duration: v[6],
                });
            }
            other => {
                return Err(ScenarioError::Parse {
                    line: line_no,
                    msg: format!("unknown key `{other}`"),
                })
            }
        }
    }
    sc.validate()?;
    Ok(sc)
}

pub fn load_scenario(path: impl AsRef<std::path::Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario_str(&text)
}

/// Render a scenario in the file format (altitudes positive-up).
pub fn scenario_to_string(sc: &Scenario) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "# helictl scenario");
    let _ = writeln!(out, "name = {}", sc.name);
    let _ = writeln!(
        out,
        "start = {} {} {}",
        sc.start_pos.x, sc.start_pos.y, -sc.start_pos.z
    );
    let _ = writeln!(out, "heading_deg = {}", sc.start_heading.to_degrees());
    let _ = writeln!(out, "transit_speed = {}", sc.transit_speed);
    let _ = writeln!(out, "transit_accel = {}", sc.transit_accel);
    let _ = writeln!(out, "yaw_rate_dps = {}", sc.yaw_rate.to_degrees());
    let _ = writeln!(out, "dt = {}", sc.dt);
    let _ = writeln!(out, "seed = {}", sc.seed);
    let _ = writeln!(out, "platform_alt = {}", sc.platform_alt);
    let _ = writeln!(out, "extra_hold = {}", sc.extra_hold);
    let _ = writeln!(out, "noise_pos = {}", sc.noise.pos);
    let _ = writeln!(out, "noise_vel = {}", sc.noise.vel);
    let _ = writeln!(out, "noise_att_deg = {}", sc.noise.att.to_degrees());
    let _ = writeln!(out, "noise_rate_dps = {}", sc.noise.rate.to_degrees());
    for w in &sc.waypoints {
        let _ = writeln!(
            out,
            "waypoint = {} {} {} {} {}",
            w.pos.x,
            w.pos.y,
            -w.pos.z,
            w.heading.to_degrees(),
            w.hold
        );
    }
    for w in &sc.wind {
        let _ = writeln!(
            out,
            "wind = {} {} {} {} {} {} {}",
            w.start, w.dir.x, w.dir.y, w.dir.z, w.speed, w.ramp, w.duration
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wind_profile_ramps_and_gates() {
        let segs = vec![WindSegment {
            start: 10.0,
            duration: 20.0,
            dir: Vector3::new(1.0, 0.0, 0.0),
            speed: 3.0,
            ramp: 1.0,
        }];
        assert_eq!(wind_at(&segs, 5.0), Vector3::zeros());
        assert_eq!(wind_at(&segs, 40.0), Vector3::zeros());
        let mid = wind_at(&segs, 20.0);
        assert!((mid - Vector3::new(3.0, 0.0, 0.0)).norm() < 1e-12);
        let half = wind_at(&segs, 10.5);
        assert!((half.x - 1.5).abs() < 1e-12, "mid-ramp must be half amplitude");
    }

    #[test]
    fn reference_hits_waypoints_and_limits_speed() {
        let sc = Scenario::paper_hover();
        let r = Reference::plan(&sc);
        let early = r.sample(0.0);
        assert!((early.pos - sc.start_pos).norm() < 1e-12);
        let mut max_speed = 0.0f64;
        let mut t = 0.0;
        while t < r.total_time {
            let s = r.sample(t);
            max_speed = max_speed.max(s.vel.norm());
            t += 0.01;
        }
        assert!(max_speed <= sc.transit_speed + 1e-9);
        // mid-hold the reference is at the hover waypoint
        let hold = r.sample(30.0);
        assert!((hold.pos - Vector3::new(0.0, 0.0, -0.65)).norm() < 1e-12);
        assert!((hold.heading - (273.5f64 - 360.0).to_radians()).abs() < 1e-12);
        // final sample rests on the pad
        let fin = r.sample(r.total_time + 10.0);
        assert!((fin.pos.z + 0.2).abs() < 1e-12);
        assert!(!fin.descending);
    }

    #[test]
    fn heading_ramp_is_rate_limited() {
        let sc = Scenario::paper_hover();
        let r = Reference::plan(&sc);
        let mut prev = r.sample(0.0).heading;
        let dt = 0.01;
        let mut t = dt;
        while t < r.total_time {
            let h = r.sample(t).heading;
            assert!(((h - prev) / dt).abs() <= sc.yaw_rate + 1e-9);
            prev = h;
            t += dt;
        }
        assert!((prev - (273.5f64 - 360.0).to_radians()).abs() < 1e-9);
    }

    #[test]
    fn scenario_file_round_trip() {
        let sc = Scenario::paper_hover();
        let text = scenario_to_string(&sc);
        let back = parse_scenario_str(&text).unwrap();
        assert_eq!(back.name, sc.name);
        assert!((back.start_pos - sc.start_pos).norm() < 1e-12);
        assert_eq!(back.waypoints.len(), sc.waypoints.len());
        assert!((back.waypoints[0].heading - sc.waypoints[0].heading).abs() < 1e-12);
        assert_eq!(back.wind.len(), 1);
        assert!((back.wind[0].speed - 3.0).abs() < 1e-12);
    }

    #[test]
    fn scenario_parse_rejects_garbage() {
        assert!(parse_scenario_str("start = 1 2\n").is_err());
        assert!(parse_scenario_str("bogus_key = 1\n").is_err());
        assert!(parse_scenario_str("waypoint = 0 0 x 0 1\n").is_err());
        assert!(parse_scenario_str("dt = -0.001\nwaypoint = 0 0 1 0 1\n").is_err());
        assert!(parse_scenario_str("seed = -4\nwaypoint = 0 0 1 0 1\n").is_err());
        // no waypoints
        assert!(parse_scenario_str("dt = 0.002\n").is_err());
    }

    #[test]
    fn trapezoid_profile_is_consistent() {
        let p = Trapezoid::plan(2.0, 0.5, 0.25);
        let (d0, v0) = p.sample(0.0);
        assert_eq!((d0, v0), (0.0, 0.0));
        let (d_end, v_end) = p.sample(p.total_time());
        assert!((d_end - 2.0).abs() < 1e-12);
        assert!(v_end.abs() < 1e-12);
        // triangular case
        let p = Trapezoid::plan(0.1, 0.5, 0.25);
        assert_eq!(p.t_cruise, 0.0);
        let (d_end, _) = p.sample(p.total_time());
        assert!((d_end - 0.1).abs() < 1e-12);
    }
}
