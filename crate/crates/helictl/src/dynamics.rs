//! Nonlinear continuous-time vehicle model and the fixed-step integrator.
//!
//! Frames: NED inertial, body axes fixed to the airframe, ZYX Euler angles.
//! Every function here is a pure map from (state, inputs, wind, params) to
//! outputs; nothing caches across calls, so identical inputs give bitwise
//! identical results.

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::params::{derived_constants, HelicopterParams};

/// Default cos(pitch) guard below which Euler kinematics count as singular.
pub const DEFAULT_GIMBAL_EPS: f64 = 1e-6;
/// Largest integrator step accepted by `step`.
pub const DEFAULT_MAX_DT: f64 = 2e-3;
/// Packed state dimension (delta'_ped is derived, not integrated).
pub const STATE_DIM: usize = 15;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("euler kinematics singular: |cos(pitch)| = {cos_theta:.3e} at pitch {pitch:.6} rad")]
    GimbalLock { pitch: f64, cos_theta: f64 },
    #[error(
        "induced-velocity fixed point did not converge after {iterations} iterations \
         (last residual {residual:.3e})"
    )]
    InducedVelocityDiverged { iterations: usize, residual: f64 },
    #[error("state became non-finite during integration (max |component| {max_abs:.3e})")]
    IntegrationBlowup { max_abs: f64 },
    #[error("step size {dt} outside (0, {max_dt}]")]
    BadStepSize { dt: f64, max_dt: f64 },
}

/// Yaw-gyro block: the PI integrator is the true state; `cmd` caches the
/// resulting tail-servo signal delta'_ped for logging and tail thrust.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct YawGyro {
    pub cmd: f64,
    pub integrator: f64,
}

/// Full simulation state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    /// Position in NED, m. Altitude is -z.
    pub p_ned: Vector3<f64>,
    /// Body-frame velocity (u, v, w), m/s.
    pub v_b: Vector3<f64>,
    /// Euler angles (roll, pitch, yaw), rad.
    pub euler: Vector3<f64>,
    /// Body rates (p, q, r), rad/s.
    pub omega_b: Vector3<f64>,
    /// Rotor tip-path-plane tilt (a_s, b_s), rad.
    pub flap: Vector2<f64>,
    pub yaw_gyro: YawGyro,
}

impl VehicleState {
    pub fn zeroed() -> Self {
        VehicleState {
            p_ned: Vector3::zeros(),
            v_b: Vector3::zeros(),
            euler: Vector3::zeros(),
            omega_b: Vector3::zeros(),
            flap: Vector2::zeros(),
            yaw_gyro: YawGyro::default(),
        }
    }

    /// Altitude above the NED origin, m.
    pub fn altitude(&self) -> f64 {
        -self.p_ned.z
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite()) && self.yaw_gyro.cmd.is_finite()
    }

    /// Pack the integrated states (gyro `cmd` excluded; it is derived).
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.p_ned.x,
            self.p_ned.y,
            self.p_ned.z,
            self.v_b.x,
            self.v_b.y,
            self.v_b.z,
            self.euler.x,
            self.euler.y,
            self.euler.z,
            self.omega_b.x,
            self.omega_b.y,
            self.omega_b.z,
            self.flap.x,
            self.flap.y,
            self.yaw_gyro.integrator,
        ]
    }

    pub fn from_array(x: &[f64; STATE_DIM]) -> Self {
        VehicleState {
            p_ned: Vector3::new(x[0], x[1], x[2]),
            v_b: Vector3::new(x[3], x[4], x[5]),
            euler: Vector3::new(x[6], x[7], x[8]),
            omega_b: Vector3::new(x[9], x[10], x[11]),
            flap: Vector2::new(x[12], x[13]),
            yaw_gyro: YawGyro {
                cmd: 0.0,
                integrator: x[14],
            },
        }
    }
}

/// Servo commands, dimensionless, clamped to the configured interval.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInputs {
    pub lat: f64,
    pub lon: f64,
    pub ped: f64,
    pub col: f64,
}

impl ControlInputs {
    pub fn new(lat: f64, lon: f64, ped: f64, col: f64) -> Self {
        ControlInputs { lat, lon, ped, col }
    }

    pub fn saturated(&self, limit: f64) -> Self {
        ControlInputs {
            lat: self.lat.clamp(-limit, limit),
            lon: self.lon.clamp(-limit, limit),
            ped: self.ped.clamp(-limit, limit),
            col: self.col.clamp(-limit, limit),
        }
    }

    pub fn any_saturated(&self, limit: f64) -> bool {
        [self.lat, self.lon, self.ped, self.col]
            .iter()
            .any(|v| v.abs() > limit)
    }
}

/// Wind velocity along the body axes, m/s.
pub type WindVector = Vector3<f64>;

/// Force/moment pair in body axes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub moment: Vector3<f64>,
}

impl std::ops::Add for Wrench {
    type Output = Wrench;
    fn add(self, rhs: Wrench) -> Wrench {
        Wrench {
            force: self.force + rhs.force,
            moment: self.moment + rhs.moment,
        }
    }
}

/// Time derivative of the integrated state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub p_ned_dot: Vector3<f64>,
    pub v_b_dot: Vector3<f64>,
    pub euler_dot: Vector3<f64>,
    pub omega_dot: Vector3<f64>,
    pub flap_dot: Vector2<f64>,
    pub gyro_integrator_dot: f64,
}

impl StateDerivative {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.p_ned_dot.x,
            self.p_ned_dot.y,
            self.p_ned_dot.z,
            self.v_b_dot.x,
            self.v_b_dot.y,
            self.v_b_dot.z,
            self.euler_dot.x,
            self.euler_dot.y,
            self.euler_dot.z,
            self.omega_dot.x,
            self.omega_dot.y,
            self.omega_dot.z,
            self.flap_dot.x,
            self.flap_dot.y,
            self.gyro_integrator_dot,
        ]
    }

    pub fn norm(&self) -> f64 {
        self.to_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

// --- kinematics -------------------------------------------------------

/// NED-to-body rotation for ZYX Euler angles (roll, pitch, yaw).
pub fn rotation_matrix(euler: &Vector3<f64>) -> Matrix3<f64> {
    let (sp, cp) = euler.x.sin_cos();
    let (st, ct) = euler.y.sin_cos();
    let (ss, cs) = euler.z.sin_cos();
    Matrix3::new(
        ct * cs,
        ct * ss,
        -st,
        sp * st * cs - cp * ss,
        sp * st * ss + cp * cs,
        sp * ct,
        cp * st * cs + sp * ss,
        cp * st * ss - sp * cs,
        cp * ct,
    )
}

/// Map from body rates to Euler-angle rates. Singular at pitch +-90 deg.
pub fn euler_rate_matrix(euler: &Vector3<f64>) -> Result<Matrix3<f64>, DynamicsError> {
    euler_rate_matrix_eps(euler, DEFAULT_GIMBAL_EPS)
}

pub fn euler_rate_matrix_eps(euler: &Vector3<f64>, eps: f64) -> Result<Matrix3<f64>, DynamicsError> {
    let (sp, cp) = euler.x.sin_cos();
    let (st, ct) = euler.y.sin_cos();
    if ct.abs() < eps {
        return Err(DynamicsError::GimbalLock {
            pitch: euler.y,
            cos_theta: ct.abs(),
        });
    }
    let tt = st / ct;
    Ok(Matrix3::new(
        1.0,
        tt * sp,
        tt * cp,
        0.0,
        cp,
        -sp,
        0.0,
        sp / ct,
        cp / ct,
    ))
}

// --- main rotor -------------------------------------------------------

/// Converged rotor thrust/inflow pair with solver diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorFlow {
    /// Main rotor thrust, N (clamped at zero from below).
    pub thrust: f64,
    /// Induced velocity through the disk, m/s (>= 0).
    pub induced_velocity: f64,
    /// Relative residual of the inflow equation at the returned pair.
    pub residual: f64,
    pub iterations: usize,
    /// True when the inflow square root had to be clamped at zero.
    pub clamped: bool,
}

fn air_relative(v_b: &Vector3<f64>, wind: &WindVector) -> Vector3<f64> {
    v_b - wind
}

/// Thrust coefficient: N of thrust per m/s of net blade inflow.
fn thrust_coefficient(p: &HelicopterParams) -> f64 {
    p.air_density
        * p.rotor_speed
        * p.rotor_radius
        * p.rotor_radius
        * p.lift_slope
        * p.blade_count
        * p.chord
        / 4.0
}

/// Solve the coupled thrust/induced-velocity fixed point.
///
/// The pair satisfies
///   T = max(0, coef * (wbar + a_s ubar - b_s vbar + (2/3) Omega R k_col d_col - v))
///   v^2 = sqrt(vhat^4/4 + (T / (2 rho pi R^2))^2) - vhat^2/2
/// with vhat^2 = ubar^2 + vbar^2 + wbar (wbar - 2 v) evaluated at the
/// converged v. Damped iteration with relaxation 0.5, bisection fallback.
pub fn induced_velocity_and_thrust(
    state: &VehicleState,
    delta_col: f64,
    wind: &WindVector,
    params: &HelicopterParams,
    guess: Option<f64>,
) -> Result<RotorFlow, DynamicsError> {
    let rel = air_relative(&state.v_b, wind);
    let coef = thrust_coefficient(params);
    let pitch_term =
        (2.0 / 3.0) * params.rotor_speed * params.rotor_radius * params.k_col * delta_col;
    let inflow_sum = rel.z + state.flap.x * rel.x - state.flap.y * rel.y + pitch_term;
    let disk = 2.0 * params.air_density * std::f64::consts::PI * params.rotor_radius.powi(2);

    let thrust_at = |v: f64| (coef * (inflow_sum - v)).max(0.0);
    // induced-velocity model: returns (v_new^2, clamped)
    let vsq_at = |v: f64| {
        let t = thrust_at(v);
        let vhat2 = rel.x * rel.x + rel.y * rel.y + rel.z * (rel.z - 2.0 * v);
        let inner = vhat2 * vhat2 / 4.0 + (t / disk).powi(2);
        let raw = inner.sqrt() - vhat2 / 2.0;
        (raw.max(0.0), raw < 0.0)
    };
    let rel_residual = |v: f64| {
        let (vsq, _) = vsq_at(v);
        (v * v - vsq).abs() / (1.0 + v * v)
    };

    const TOL: f64 = 1e-13;
    const N_MAX: usize = 200;
    if rel_residual(0.0) == 0.0 {
        // no lift and no through-flow: the pair (T, v) = (thrust_at(0), 0) is exact
        return Ok(RotorFlow {
            thrust: thrust_at(0.0),
            induced_velocity: 0.0,
            residual: 0.0,
            iterations: 0,
            clamped: false,
        });
    }
    let mut v = guess.unwrap_or(params.induced_vel_init).max(0.0);
    let mut clamped = false;
    let mut iterations = 0;
    for _ in 0..N_MAX {
        iterations += 1;
        let (vsq, cl) = vsq_at(v);
        clamped |= cl;
        let target = vsq.sqrt();
        let next = (v + 0.5 * (target - v)).max(0.0);
        v = next;
        if rel_residual(v) < TOL {
            break;
        }
    }

    if rel_residual(v) >= TOL {
        // bisection on g(v) = v^2 - vsq(v); g(0) <= 0 and g grows with v
        let mut lo = 0.0;
        let mut hi = (2.0 * v).max(1.0);
        let g = |v: f64| v * v - vsq_at(v).0;
        let mut expand = 0;
        while g(hi) < 0.0 && expand < 60 {
            hi *= 2.0;
            expand += 1;
        }
        if g(hi) < 0.0 {
            return Err(DynamicsError::InducedVelocityDiverged {
                iterations,
                residual: rel_residual(v),
            });
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            iterations += 1;
        }
        v = 0.5 * (lo + hi);
        if rel_residual(v) >= 1e-9 {
            return Err(DynamicsError::InducedVelocityDiverged {
                iterations,
                residual: rel_residual(v),
            });
        }
    }

    Ok(RotorFlow {
        thrust: thrust_at(v),
        induced_velocity: v,
        residual: rel_residual(v),
        iterations,
        clamped,
    })
}

/// Main rotor force and moment given a converged (T, v_im) pair.
pub fn main_rotor_wrench(
    state: &VehicleState,
    thrust: f64,
    v_im: f64,
    wind: &WindVector,
    params: &HelicopterParams,
) -> Wrench {
    let rel = air_relative(&state.v_b, wind);
    let (a_s, b_s) = (state.flap.x, state.flap.y);
    let hub = params.spring_constant + thrust * params.hub_offset;

    let force = Vector3::new(
        -thrust * a_s.sin(),
        thrust * b_s.sin(),
        -thrust * a_s.cos() * b_s.cos(),
    );

    let fus = fuselage_drag(&state.v_b, v_im, wind, params);
    let tip_speed = params.rotor_speed * params.rotor_radius;
    let profile = params.air_density * params.rotor_radius.powi(2) * params.blade_count
        * params.chord
        / params.torque_profile_div
        * (tip_speed * tip_speed + params.torque_advance_factor * (rel.x * rel.x + rel.y * rel.y));
    let climb_term = if rel.z < 0.0 {
        -params.mass * params.gravity * rel.z
    } else {
        0.0
    };
    let yaw_torque = -(profile
        + thrust * v_im
        + (fus.x * rel.x).abs()
        + (fus.y * rel.y).abs()
        + (fus.z * (rel.z - v_im)).abs()
        + climb_term);

    let moment = Vector3::new(hub * b_s.sin(), hub * a_s.sin(), yaw_torque);
    Wrench { force, moment }
}

// --- fuselage and tail ------------------------------------------------

/// Flat-plate fuselage drag; the rotor wake sets the reference speed near
/// hover, hence the max with the induced velocity.
pub fn fuselage_drag(
    v_b: &Vector3<f64>,
    v_im: f64,
    wind: &WindVector,
    params: &HelicopterParams,
) -> Vector3<f64> {
    let rel = air_relative(v_b, wind);
    let q = 0.5 * params.air_density;
    let wz = rel.z - v_im;
    Vector3::new(
        -q * params.drag_area.x * rel.x * rel.x.abs().max(v_im.abs()),
        -q * params.drag_area.y * rel.y * rel.y.abs().max(v_im.abs()),
        -q * params.drag_area.z * wz * wz.abs().max(v_im.abs()),
    )
}

/// Tail rotor wrench from the gyro-shaped pedal command.
pub fn tail_rotor_wrench(delta_ped_cmd: f64, params: &HelicopterParams) -> Wrench {
    let t_tr = params.tail_thrust_gain * delta_ped_cmd;
    Wrench {
        force: Vector3::new(0.0, -t_tr, 0.0),
        moment: Vector3::new(t_tr * params.tail_roll_arm, 0.0, t_tr * params.tail_yaw_arm),
    }
}

// --- rotor flapping and yaw gyro ---------------------------------------

/// First-order coupled tip-path-plane dynamics.
pub fn flapping_derivatives(
    state: &VehicleState,
    delta_lat: f64,
    delta_lon: f64,
    params: &HelicopterParams,
) -> (f64, f64) {
    let d = derived_constants(params);
    let tau = d.flap_time_constant;
    let (a_s, b_s) = (state.flap.x, state.flap.y);
    let theta_a = params.k_lon * delta_lon;
    let theta_b = params.k_lat * delta_lat;
    let a_dot = -state.omega_b.y - a_s / tau + d.flap_coupling * b_s + theta_a / tau;
    let b_dot = -state.omega_b.x - b_s / tau - d.flap_coupling * a_s + theta_b / tau;
    (a_dot, b_dot)
}

/// Tail servo signal produced by the PI yaw gyro.
pub fn gyro_output(r: f64, delta_ped: f64, integrator: f64, params: &HelicopterParams) -> f64 {
    let err = params.gyro_gain * delta_ped - r;
    params.gyro_kp * err + params.gyro_ki * integrator
}

/// Integrator state derivative of the yaw gyro.
pub fn yaw_gyro_derivative(r: f64, delta_ped: f64, _gyro_state: f64, params: &HelicopterParams) -> f64 {
    params.gyro_gain * delta_ped - r
}

// --- assembled model ---------------------------------------------------

/// Aerodynamic wrench: main rotor + fuselage + tail rotor.
pub fn aero_wrench(
    state: &VehicleState,
    inputs: &ControlInputs,
    wind: &WindVector,
    params: &HelicopterParams,
) -> Result<(Wrench, RotorFlow, f64), DynamicsError> {
    let flow = induced_velocity_and_thrust(state, inputs.col, wind, params, None)?;
    let rotor = main_rotor_wrench(state, flow.thrust, flow.induced_velocity, wind, params);
    let fus = Wrench {
        force: fuselage_drag(&state.v_b, flow.induced_velocity, wind, params),
        moment: Vector3::zeros(),
    };
    let ped_cmd = gyro_output(state.omega_b.z, inputs.ped, state.yaw_gyro.integrator, params);
    let tail = tail_rotor_wrench(ped_cmd, params);
    Ok((rotor + fus + tail, flow, ped_cmd))
}

/// Gravity force in body axes.
pub fn gravity_force(euler: &Vector3<f64>, params: &HelicopterParams) -> Vector3<f64> {
    let (sp, cp) = euler.x.sin_cos();
    let (st, ct) = euler.y.sin_cos();
    params.mass * params.gravity * Vector3::new(-st, sp * ct, cp * ct)
}

/// Rigid-body part of the derivative for a given total force/moment.
pub fn rigid_body_derivative(
    state: &VehicleState,
    total_force_b: &Vector3<f64>,
    total_moment_b: &Vector3<f64>,
    params: &HelicopterParams,
) -> Result<(Vector3<f64>, Vector3<f64>, Vector3<f64>, Vector3<f64>), DynamicsError> {
    let v = state.v_b;
    let w = state.omega_b;
    let j = params.inertia;
    let v_dot = -w.cross(&v) + total_force_b / params.mass;
    let j_omega = Vector3::new(j.x * w.x, j.y * w.y, j.z * w.z);
    let m_eff = total_moment_b - w.cross(&j_omega);
    let omega_dot = Vector3::new(m_eff.x / j.x, m_eff.y / j.y, m_eff.z / j.z);
    let p_dot = rotation_matrix(&state.euler).transpose() * v;
    let euler_dot = euler_rate_matrix(&state.euler)? * w;
    Ok((p_dot, v_dot, euler_dot, omega_dot))
}

/// Full state derivative. Inputs saturate before entering the model.
pub fn state_derivative(
    state: &VehicleState,
    inputs: &ControlInputs,
    wind: &WindVector,
    params: &HelicopterParams,
) -> Result<StateDerivative, DynamicsError> {
    let u = inputs.saturated(params.servo_limit);
    let (aero, _flow, _ped) = aero_wrench(state, &u, wind, params)?;
    let total_force = aero.force + gravity_force(&state.euler, params);
    let (p_dot, v_dot, euler_dot, omega_dot) =
        rigid_body_derivative(state, &total_force, &aero.moment, params)?;
    let (a_dot, b_dot) = flapping_derivatives(state, u.lat, u.lon, params);
    let z_dot = yaw_gyro_derivative(state.omega_b.z, u.ped, state.yaw_gyro.integrator, params);
    Ok(StateDerivative {
        p_ned_dot: p_dot,
        v_b_dot: v_dot,
        euler_dot,
        omega_dot,
        flap_dot: Vector2::new(a_dot, b_dot),
        gyro_integrator_dot: z_dot,
    })
}

// --- integrator ---------------------------------------------------------

/// One classical 4-stage Runge-Kutta step over a fixed-size state array.
/// The derivative may fail; the error aborts the step.
pub fn rk4_step<const N: usize, E>(
    mut f: impl FnMut(&[f64; N]) -> Result<[f64; N], E>,
    x: &[f64; N],
    dt: f64,
) -> Result<[f64; N], E> {
    let k1 = f(x)?;
    let mut x2 = *x;
    for i in 0..N {
        x2[i] = x[i] + 0.5 * dt * k1[i];
    }
    let k2 = f(&x2)?;
    let mut x3 = *x;
    for i in 0..N {
        x3[i] = x[i] + 0.5 * dt * k2[i];
    }
    let k3 = f(&x3)?;
    let mut x4 = *x;
    for i in 0..N {
        x4[i] = x[i] + dt * k3[i];
    }
    let k4 = f(&x4)?;
    let mut out = *x;
    for i in 0..N {
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

/// Advance the vehicle one step with inputs and wind held constant.
pub fn step(
    state: &VehicleState,
    inputs: &ControlInputs,
    wind: &WindVector,
    dt: f64,
    params: &HelicopterParams,
) -> Result<VehicleState, DynamicsError> {
    step_max_dt(state, inputs, wind, dt, params, DEFAULT_MAX_DT)
}

pub fn step_max_dt(
    state: &VehicleState,
    inputs: &ControlInputs,
    wind: &WindVector,
    dt: f64,
    params: &HelicopterParams,
    max_dt: f64,
) -> Result<VehicleState, DynamicsError> {
    if !(dt > 0.0 && dt <= max_dt) {
        return Err(DynamicsError::BadStepSize { dt, max_dt });
    }
    let x0 = state.to_array();
    let x1 = rk4_step(
        |x: &[f64; STATE_DIM]| {
            let s = VehicleState::from_array(x);
            state_derivative(&s, inputs, wind, params).map(|d| d.to_array())
        },
        &x0,
        dt,
    )?;
    let mut next = VehicleState::from_array(&x1);
    next.yaw_gyro.cmd = gyro_output(
        next.omega_b.z,
        inputs.saturated(params.servo_limit).ped,
        next.yaw_gyro.integrator,
        params,
    );
    if !next.is_finite() {
        let max_abs = x1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        return Err(DynamicsError::IntegrationBlowup { max_abs });
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::default_params;
    use nalgebra::Vector3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn hover_state() -> VehicleState {
        VehicleState::zeroed()
    }

    #[test]
    fn rotation_identity_at_zero_attitude() {
        let r = rotation_matrix(&Vector3::zeros());
        assert!((r - Matrix3::identity()).norm() < 1e-15);
    }

    #[test]
    fn rotation_pure_yaw_quarter_turn() {
        let r = rotation_matrix(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        // body x axis picks up the NED y axis
        assert!((r[(0, 0)]).abs() < 1e-15);
        assert!((r[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((r[(0, 2)]).abs() < 1e-15);
    }

    #[test]
    fn rotation_orthonormal_for_random_attitudes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let e = Vector3::new(
                rng.gen_range(-3.1..3.1),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-3.1..3.1),
            );
            let r = rotation_matrix(&e);
            let err = (r.transpose() * r - Matrix3::identity()).norm();
            assert!(err < 1e-12, "orthonormality error {err:.3e} at {e:?}");
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_rate_matrix_matches_hand_values() {
        let s = euler_rate_matrix(&Vector3::new(0.0, std::f64::consts::FRAC_PI_4, 0.3)).unwrap();
        assert!((s[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(s[(0, 1)].abs() < 1e-15);
        assert!((s[(0, 2)] - 1.0).abs() < 1e-12);
        assert!(s[(2, 1)].abs() < 1e-15);
        assert!((s[(2, 2)] - 2f64.sqrt()).abs() < 1e-12);
        // zero pitch: identity
        let s0 = euler_rate_matrix(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((s0 - Matrix3::identity()).norm() < 1e-15);
    }

    #[test]
    fn euler_rate_matrix_near_gimbal_lock_errors() {
        let e = Vector3::new(0.0, std::f64::consts::FRAC_PI_2 - 1e-9, 0.0);
        match euler_rate_matrix(&e) {
            Err(DynamicsError::GimbalLock { .. }) => {}
            other => panic!("expected gimbal lock, got {other:?}"),
        }
    }

    #[test]
    fn euler_rate_round_trip_recovers_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let e = Vector3::new(
                rng.gen_range(-1.3..1.3),
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-3.1..3.1),
            );
            let w = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let s = euler_rate_matrix(&e).unwrap();
            let back = s.try_inverse().unwrap() * (s * w);
            assert!((back - w).norm() < 1e-12);
        }
    }

    /// Momentum theory fixes the hover inflow: v = sqrt(T / (2 rho pi R^2)).
    #[test]
    fn hover_inflow_matches_momentum_theory() {
        let set = default_params();
        let p = &set.heli;
        // pick the collective that balances weight exactly, by bisection on thrust
        let weight = p.mass * p.gravity;
        let mut lo = 0.0;
        let mut hi = 0.2;
        for _ in 0..200 {
            let col = 0.5 * (lo + hi);
            let flow = induced_velocity_and_thrust(
                &hover_state(),
                col,
                &Vector3::zeros(),
                p,
                None,
            )
            .unwrap();
            if flow.thrust < weight {
                lo = col;
            } else {
                hi = col;
            }
        }
        let flow =
            induced_velocity_and_thrust(&hover_state(), 0.5 * (lo + hi), &Vector3::zeros(), p, None)
                .unwrap();
        assert!((flow.thrust - weight).abs() < 1e-6 * weight);
        let disk = 2.0 * p.air_density * std::f64::consts::PI * p.rotor_radius.powi(2);
        let v_mt = (flow.thrust / disk).sqrt();
        assert!(
            (flow.induced_velocity - v_mt).abs() / v_mt < 1e-9,
            "v_im {} vs momentum theory {}",
            flow.induced_velocity,
            v_mt
        );
        assert!((v_mt - 3.7955).abs() < 1e-3, "expected about 3.80 m/s, got {v_mt}");
        assert!(flow.residual < 1e-9);
    }

    #[test]
    fn zero_pitch_sum_gives_zero_thrust_and_inflow() {
        let set = default_params();
        let flow =
            induced_velocity_and_thrust(&hover_state(), 0.0, &Vector3::zeros(), &set.heli, None)
                .unwrap();
        assert_eq!(flow.thrust, 0.0);
        assert!(flow.induced_velocity.abs() < 1e-12);
    }

    /// Independent route: fine bisection on the scalar inflow residual.
    #[test]
    fn lateral_wind_fixed_point_matches_bisection_oracle() {
        let set = default_params();
        let p = &set.heli;
        let wind = Vector3::new(0.0, 3.0, 0.0);
        let col = 0.02;
        let flow = induced_velocity_and_thrust(&hover_state(), col, &wind, p, None).unwrap();

        // oracle: dense scan then bisection on g(v) = v^2 - rhs(v)
        let coef = thrust_coefficient(p);
        let pitch = (2.0 / 3.0) * p.rotor_speed * p.rotor_radius * p.k_col * col;
        let rel = -wind;
        let disk = 2.0 * p.air_density * std::f64::consts::PI * p.rotor_radius.powi(2);
        let g = |v: f64| {
            let t = (coef * (rel.z + pitch - v)).max(0.0);
            let vhat2 = rel.x * rel.x + rel.y * rel.y + rel.z * (rel.z - 2.0 * v);
            v * v - ((vhat2 * vhat2 / 4.0 + (t / disk).powi(2)).sqrt() - vhat2 / 2.0)
        };
        let mut lo = 0.0;
        let mut hi = 0.0;
        let mut v = 0.0;
        while v < 50.0 {
            if g(v) > 0.0 {
                hi = v;
                break;
            }
            lo = v;
            v += 0.01;
        }
        assert!(hi > 0.0, "oracle bracket not found");
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let v_oracle = 0.5 * (lo + hi);
        let t_oracle = (coef * (rel.z + pitch - v_oracle)).max(0.0);
        assert!(
            (flow.induced_velocity - v_oracle).abs() / v_oracle < 1e-6,
            "v {} vs oracle {}",
            flow.induced_velocity,
            v_oracle
        );
        assert!((flow.thrust - t_oracle).abs() / t_oracle < 1e-6);
    }

    #[test]
    fn rotor_wrench_zero_flapping_is_pure_vertical() {
        let set = default_params();
        let w = main_rotor_wrench(&hover_state(), 74.556, 3.8, &Vector3::zeros(), &set.heli);
        assert_eq!(w.force.x, 0.0);
        assert_eq!(w.force.y, 0.0);
        assert!((w.force.z + 74.556).abs() < 1e-12);
        assert_eq!(w.moment.x, 0.0);
        assert_eq!(w.moment.y, 0.0);
    }

    #[test]
    fn rotor_pitch_moment_matches_direct_formula() {
        let set = default_params();
        let p = &set.heli;
        let mut s = hover_state();
        s.flap.x = 0.01;
        let t = 74.556;
        let w = main_rotor_wrench(&s, t, 3.8, &Vector3::zeros(), p);
        let expected = (p.spring_constant + t * p.hub_offset) * 0.01f64.sin();
        assert!((w.moment.y - expected).abs() < 1e-12);
    }

    #[test]
    fn climb_power_term_activates_for_negative_relative_w() {
        let set = default_params();
        let p = &set.heli;
        let mut s = hover_state();
        s.v_b.z = -1.0; // climbing: wbar < 0
        let w_climb = main_rotor_wrench(&s, 74.556, 3.8, &Vector3::zeros(), p);
        s.v_b.z = 0.0;
        let w_hover = main_rotor_wrench(&s, 74.556, 3.8, &Vector3::zeros(), p);
        let delta = w_hover.moment.z - w_climb.moment.z;
        // climb adds m g |wbar| to the torque magnitude, minus small drag-term shifts
        let mg = p.mass * p.gravity;
        assert!(
            (delta - mg).abs() / mg < 0.05,
            "climb torque contribution {delta} vs m g = {mg}"
        );
    }

    #[test]
    fn fuselage_drag_picks_rotor_wash_reference() {
        let set = default_params();
        let p = &set.heli;
        let d = fuselage_drag(&Vector3::new(2.0, 0.0, 0.0), 3.8, &Vector3::zeros(), p);
        let expected = -0.5 * p.air_density * p.drag_area.x * 2.0 * 3.8;
        assert!((d.x - expected).abs() < 1e-12);
        // odd symmetry in the airspeed component
        let d_neg = fuselage_drag(&Vector3::new(-2.0, 0.0, 0.0), 3.8, &Vector3::zeros(), p);
        assert!((d.x + d_neg.x).abs() < 1e-15);
        // zero everything: zero drag
        let d0 = fuselage_drag(&Vector3::zeros(), 0.0, &Vector3::zeros(), p);
        assert_eq!(d0, Vector3::zeros());
    }

    #[test]
    fn tail_rotor_wrench_scales_with_command() {
        let set = default_params();
        let p = &set.heli;
        let z = tail_rotor_wrench(0.0, p);
        assert_eq!(z.force, Vector3::zeros());
        assert_eq!(z.moment, Vector3::zeros());
        let w = tail_rotor_wrench(0.1, p);
        let t = 0.1 * p.tail_thrust_gain;
        assert!((w.force.y + t).abs() < 1e-15);
        assert!((w.moment.x - t * p.tail_roll_arm).abs() < 1e-15);
        assert!((w.moment.z - t * p.tail_yaw_arm).abs() < 1e-15);
        let wn = tail_rotor_wrench(-0.1, p);
        assert!((w.force.y + wn.force.y).abs() < 1e-15);
    }

    #[test]
    fn flapping_steady_state_follows_cyclic() {
        let mut set = default_params();
        set.heli.spring_constant = 0.0; // kill cross-coupling
        let p = &set.heli;
        let d = derived_constants(p);
        // integrate the flap pair alone, holding rates at zero
        let mut s = hover_state();
        let dt = 1e-4;
        for _ in 0..200_000 {
            let (da, db) = flapping_derivatives(&s, 0.0, 0.1, p);
            s.flap.x += dt * da;
            s.flap.y += dt * db;
        }
        assert!((s.flap.x - p.k_lon * 0.1).abs() < 1e-9, "a_s at {}", s.flap.x);
        assert!((s.flap.y).abs() < 1e-9);

        // first-order step response: 63.2% at t = tau
        let mut s = hover_state();
        let tau = d.flap_time_constant;
        let n = (tau / dt).round() as usize;
        for _ in 0..n {
            let (da, db) = flapping_derivatives(&s, 0.0, 0.1, p);
            s.flap.x += dt * da;
            s.flap.y += dt * db;
        }
        let target = p.k_lon * 0.1;
        let expected = target * (1.0 - (-1.0f64).exp());
        assert!(
            (s.flap.x - expected).abs() < 1e-4,
            "step response {} vs analytic {}",
            s.flap.x,
            expected
        );
    }

    #[test]
    fn gyro_matched_reference_is_quiet() {
        let set = default_params();
        let p = &set.heli;
        let r = p.gyro_gain * 0.2;
        assert_eq!(gyro_output(r, 0.2, 0.0, p), 0.0);
        assert_eq!(yaw_gyro_derivative(r, 0.2, 0.0, p), 0.0);
    }

    #[test]
    fn gyro_step_response_is_the_analytic_ramp() {
        let set = default_params();
        let p = &set.heli;
        let dped = 0.3;
        let dt = 1e-4;
        let mut z = 0.0;
        let t_end = 2.0;
        let n = (t_end / dt) as usize;
        for _ in 0..n {
            z += dt * yaw_gyro_derivative(0.0, dped, z, p);
        }
        let out = gyro_output(0.0, dped, z, p);
        let expected = p.gyro_kp * p.gyro_gain * dped + p.gyro_ki * p.gyro_gain * dped * t_end;
        assert!((out - expected).abs() < 1e-9);
        // pure proportional path
        let mut set2 = default_params();
        set2.heli.gyro_ki = 0.0;
        let out_p = gyro_output(0.1, dped, 123.0, &set2.heli);
        assert!((out_p - set2.heli.gyro_kp * (set2.heli.gyro_gain * dped - 0.1)).abs() < 1e-15);
    }

    #[test]
    fn gravity_only_free_fall_accelerates_down() {
        let set = default_params();
        let p = &set.heli;
        let s = hover_state();
        let fg = gravity_force(&s.euler, p);
        let (p_dot, v_dot, euler_dot, omega_dot) =
            rigid_body_derivative(&s, &fg, &Vector3::zeros(), p).unwrap();
        assert!((v_dot - Vector3::new(0.0, 0.0, p.gravity)).norm() < 1e-14);
        assert_eq!(p_dot, Vector3::zeros());
        assert_eq!(euler_dot, Vector3::zeros());
        assert_eq!(omega_dot, Vector3::zeros());
    }

    #[test]
    fn pure_roll_rate_maps_to_roll_angle_rate() {
        let set = default_params();
        let mut s = hover_state();
        s.omega_b.x = 0.7;
        let (_, _, euler_dot, _) =
            rigid_body_derivative(&s, &Vector3::zeros(), &Vector3::zeros(), &set.heli).unwrap();
        assert!((euler_dot - Vector3::new(0.7, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn derivative_is_deterministic() {
        let set = default_params();
        let mut s = hover_state();
        s.v_b = Vector3::new(0.3, -0.2, 0.1);
        s.euler = Vector3::new(0.05, -0.03, 1.2);
        s.omega_b = Vector3::new(0.01, 0.02, -0.03);
        s.flap = Vector2::new(0.002, -0.004);
        s.yaw_gyro.integrator = 60.0;
        let u = ControlInputs::new(0.01, -0.02, 0.0, 0.02);
        let wind = Vector3::new(1.0, -0.5, 0.2);
        let d1 = state_derivative(&s, &u, &wind, &set.heli).unwrap();
        let d2 = state_derivative(&s, &u, &wind, &set.heli).unwrap();
        assert_eq!(d1.to_array(), d2.to_array());
    }

    #[test]
    fn zero_derivative_leaves_state_unchanged() {
        let x0 = [1.0, -2.0, 3.0];
        let x1 = rk4_step(
            |_: &[f64; 3]| Ok::<_, std::convert::Infallible>([0.0; 3]),
            &x0,
            1e-3,
        )
        .unwrap();
        assert_eq!(x0, x1);
    }

    #[test]
    fn step_rejects_bad_dt() {
        let set = default_params();
        let s = hover_state();
        let u = ControlInputs::default();
        let w = Vector3::zeros();
        assert!(matches!(
            step(&s, &u, &w, 0.0, &set.heli),
            Err(DynamicsError::BadStepSize { .. })
        ));
        assert!(matches!(
            step(&s, &u, &w, 0.01, &set.heli),
            Err(DynamicsError::BadStepSize { .. })
        ));
    }

    /// Halving dt on a linear system must cut the global error about 16x.
    #[test]
    fn integrator_is_fourth_order_on_linear_oracle() {
        use nalgebra::Matrix4;
        let a = Matrix4::new(
            -0.3, 1.0, 0.0, 0.0, //
            -1.0, -0.3, 0.0, 0.0, //
            0.0, 0.0, -0.1, 2.0, //
            0.0, 0.0, -2.0, -0.1,
        );
        let x0 = [1.0, 0.5, -0.3, 0.8];
        let t_end = 2.0;
        let exact = (a * t_end).exp() * nalgebra::Vector4::from_column_slice(&x0);
        let run = |dt: f64| {
            let n = (t_end / dt).round() as usize;
            let mut x = x0;
            for _ in 0..n {
                x = rk4_step(
                    |x: &[f64; 4]| {
                        let v = nalgebra::Vector4::from_column_slice(x);
                        let d = a * v;
                        Ok::<_, std::convert::Infallible>([d[0], d[1], d[2], d[3]])
                    },
                    &x,
                    dt,
                )
                .unwrap();
            }
            (nalgebra::Vector4::from_column_slice(&x) - exact).norm()
        };
        let e1 = run(0.02);
        let e2 = run(0.01);
        let ratio = e1 / e2;
        assert!(
            (3.7..=4.3).contains(&(ratio.log2())),
            "observed order {} (errors {e1:.3e}, {e2:.3e})",
            ratio.log2()
        );
    }
}
