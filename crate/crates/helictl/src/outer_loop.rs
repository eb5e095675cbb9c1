//! Model-free prescribed-performance position loop.
//!
//! Position and velocity errors (reference minus measured, NED) combine per
//! axis into e_i = (eps_v_i + m_i eps_p_i) / tau_i(t). The decaying envelope
//! tau_i keeps |e_i| < 1; an inverse-hyperbolic barrier turns the normalized
//! error into the intermediate control u_m, and a spherical transform maps
//! u_m into roll/pitch/collective references for the attitude loop.

use nalgebra::Vector3;
use thiserror::Error;

use crate::dynamics::{self, ControlInputs, VehicleState, WindVector};
use crate::params::ControllerParams;

/// Normalized errors this close to the barrier raise a violation instead.
pub const ENVELOPE_GUARD: f64 = 1e-6;
/// Below this intermediate-control magnitude the spherical transform is
/// degenerate and the previous command holds.
pub const DEGENERATE_NORM: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OuterLoopError {
    #[error(
        "performance envelope violated on axis {axis}: |{combined:.4}| >= tau = {bound:.4} at t = {t:.3} s"
    )]
    EnvelopeViolation {
        axis: usize,
        combined: f64,
        bound: f64,
        t: f64,
    },
}

/// Per-axis envelope parameters.
#[derive(Debug, Clone, Copy)]
pub struct PerformanceEnvelope {
    pub tau_init: Vector3<f64>,
    pub tau_final: Vector3<f64>,
    pub decay: Vector3<f64>,
    pub pos_gain: Vector3<f64>,
}

impl PerformanceEnvelope {
    pub fn from_params(c: &ControllerParams) -> Self {
        PerformanceEnvelope {
            tau_init: c.tau_init,
            tau_final: c.tau_final,
            decay: c.decay_rate,
            pos_gain: c.pos_gain,
        }
    }

    /// Widen the initial envelope so the combined error starts inside it:
    /// tau_0 = 2 |eps_v(0) + m eps_p(0)| + the configured start value.
    pub fn auto_init(
        c: &ControllerParams,
        eps_p0: &Vector3<f64>,
        eps_v0: &Vector3<f64>,
    ) -> Self {
        let mut env = Self::from_params(c);
        for i in 0..3 {
            let combined = (eps_v0[i] + c.pos_gain[i] * eps_p0[i]).abs();
            env.tau_init[i] += 2.0 * combined;
        }
        env
    }
}

/// tau_i(t) = (tau_0 - tau_inf) e^(-c t) + tau_inf.
pub fn performance_function(t: f64, env: &PerformanceEnvelope, axis: usize) -> f64 {
    (env.tau_init[axis] - env.tau_final[axis]) * (-env.decay[axis] * t).exp()
        + env.tau_final[axis]
}

/// Errors and envelope margins for one control tick.
#[derive(Debug, Clone, Copy)]
pub struct ErrorSample {
    /// Position error, reference minus measured, NED, m.
    pub eps_p: Vector3<f64>,
    /// Velocity error, reference minus measured, NED, m/s.
    pub eps_v: Vector3<f64>,
    /// Combined error eps_v + m .* eps_p.
    pub combined: Vector3<f64>,
    /// Normalized errors, each strictly inside (-1, 1).
    pub e: Vector3<f64>,
    /// Envelope margins tau_i(t) - |combined_i|.
    pub margins: Vector3<f64>,
}

/// Normalize the combined errors by the envelope; fails when any axis
/// touches the barrier.
pub fn normalized_errors(
    meas_pos: &Vector3<f64>,
    meas_vel: &Vector3<f64>,
    ref_pos: &Vector3<f64>,
    ref_vel: &Vector3<f64>,
    env: &PerformanceEnvelope,
    t: f64,
) -> Result<ErrorSample, OuterLoopError> {
    let eps_p = ref_pos - meas_pos;
    let eps_v = ref_vel - meas_vel;
    let mut combined = Vector3::zeros();
    let mut e = Vector3::zeros();
    let mut margins = Vector3::zeros();
    for i in 0..3 {
        combined[i] = eps_v[i] + env.pos_gain[i] * eps_p[i];
        let tau = performance_function(t, env, i);
        e[i] = combined[i] / tau;
        margins[i] = tau - combined[i].abs();
        if e[i].abs() >= 1.0 - ENVELOPE_GUARD {
            return Err(OuterLoopError::EnvelopeViolation {
                axis: i,
                combined: combined[i],
                bound: tau,
                t,
            });
        }
    }
    Ok(ErrorSample {
        eps_p,
        eps_v,
        combined,
        e,
        margins,
    })
}

/// Accumulators and hold-over values owned by one control loop.
#[derive(Debug, Clone)]
pub struct OuterLoopState {
    /// Integral of atanh(e_i) per axis.
    pub integrals: Vector3<f64>,
    /// Previous barrier values for trapezoidal integration.
    prev_barrier: Option<Vector3<f64>>,
    /// Last accepted attitude command, held through degenerate transforms.
    pub last_command: Option<[f64; 4]>,
    /// Anti-windup: lateral axes freeze while tilt commands saturate.
    pub freeze_lateral: bool,
    /// Anti-windup: vertical axis freezes while the collective saturates.
    pub freeze_vertical: bool,
}

impl OuterLoopState {
    pub fn new() -> Self {
        OuterLoopState {
            integrals: Vector3::zeros(),
            prev_barrier: None,
            last_command: None,
            freeze_lateral: false,
            freeze_vertical: false,
        }
    }
}

impl Default for OuterLoopState {
    fn default() -> Self {
        Self::new()
    }
}

/// Barrier error controller: u_m = -K R(yaw) [atanh(e) + p int atanh(e)]
/// with K_ii = k_i / ((1 - e_i^2) tau_i(t)), then the hover bias on the
/// vertical channel. Integrals advance by the trapezoidal rule.
pub fn error_controller(
    e: &Vector3<f64>,
    env: &PerformanceEnvelope,
    ctrl: &ControllerParams,
    state: &mut OuterLoopState,
    yaw: f64,
    t: f64,
    dt: f64,
) -> Vector3<f64> {
    let barrier = Vector3::new(e.x.atanh(), e.y.atanh(), e.z.atanh());
    if let Some(prev) = state.prev_barrier {
        let lim = ctrl.integral_limit;
        for i in 0..3 {
            let frozen = if i == 2 {
                state.freeze_vertical
            } else {
                state.freeze_lateral
            };
            if !frozen {
                state.integrals[i] =
                    (state.integrals[i] + 0.5 * dt * (prev[i] + barrier[i])).clamp(-lim, lim);
            }
        }
    }
    state.prev_barrier = Some(barrier);

    let w = barrier + ctrl.int_gain.component_mul(&state.integrals);
    // heading-frame rotation of the horizontal channels
    let (sy, cy) = yaw.sin_cos();
    let w_h = Vector3::new(cy * w.x + sy * w.y, -sy * w.x + cy * w.y, w.z);
    let mut u = Vector3::zeros();
    for i in 0..3 {
        let tau = performance_function(t, env, i);
        let gain = ctrl.err_gain[i] / ((1.0 - e[i] * e[i]) * tau);
        u[i] = -gain * w_h[i];
    }
    u.z -= ctrl.col_bias;
    u
}

/// Attitude-and-collective command from the intermediate control.
#[derive(Debug, Clone, Copy)]
pub struct AttitudeCommand {
    /// [roll_out, pitch_out, yaw_out (absolute), collective reference].
    pub r_out: [f64; 4],
    /// True when a tilt channel hit the configured limit.
    pub clamped: bool,
    /// True when the transform was degenerate and the previous command held.
    pub held: bool,
}

/// Spherical transform of u_m: roll_out = -asin(u_y/|u|),
/// pitch_out = -atan(u_x/u_z), yaw_out = the heading reference,
/// collective = -|u|. Tilt outputs clamp to the configured limit.
/// Meaningful for u_z < 0 (net upward thrust demand).
pub fn attitude_command(
    u_m: &Vector3<f64>,
    psi_ref: f64,
    attitude_limit: f64,
    state: &mut OuterLoopState,
) -> AttitudeCommand {
    let norm = u_m.norm();
    if norm < DEGENERATE_NORM || u_m.z == 0.0 {
        let r_out = state
            .last_command
            .unwrap_or([0.0, 0.0, psi_ref, -norm.max(DEGENERATE_NORM)]);
        return AttitudeCommand {
            r_out,
            clamped: false,
            held: true,
        };
    }
    let roll = -(u_m.y / norm).clamp(-1.0, 1.0).asin();
    let pitch = -(u_m.x / u_m.z).atan();
    let roll_c = roll.clamp(-attitude_limit, attitude_limit);
    let pitch_c = pitch.clamp(-attitude_limit, attitude_limit);
    let clamped = roll_c != roll || pitch_c != pitch;
    let r_out = [roll_c, pitch_c, psi_ref, -norm];
    state.last_command = Some(r_out);
    AttitudeCommand {
        r_out,
        clamped,
        held: false,
    }
}

/// Velocity-error derivative along the true dynamics, for analysis only:
/// d(eps_v)/dt = a_ref - a_vehicle(NED).
pub fn position_error_dynamics(
    state: &VehicleState,
    inputs: &ControlInputs,
    wind: &WindVector,
    ref_accel: &Vector3<f64>,
    params: &crate::params::HelicopterParams,
) -> Result<Vector3<f64>, crate::dynamics::DynamicsError> {
    let u = inputs.saturated(params.servo_limit);
    let (aero, _, _) = dynamics::aero_wrench(state, &u, wind, params)?;
    let total = aero.force + dynamics::gravity_force(&state.euler, params);
    // NED acceleration of the airframe: transport terms cancel, leaving the
    // rotated specific force
    let a_ned = dynamics::rotation_matrix(&state.euler).transpose() * (total / params.mass);
    Ok(ref_accel - a_ned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::default_params;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn env222() -> PerformanceEnvelope {
        PerformanceEnvelope {
            tau_init: Vector3::new(2.0, 2.0, 2.0),
            tau_final: Vector3::new(0.5, 0.5, 0.5),
            decay: Vector3::new(1.1, 1.1, 1.1),
            pos_gain: Vector3::new(1.7, 1.6, 3.5),
        }
    }

    #[test]
    fn performance_function_endpoints_and_value() {
        let env = env222();
        assert_eq!(performance_function(0.0, &env, 0), 2.0);
        assert!((performance_function(1e3, &env, 0) - 0.5).abs() < 1e-12);
        // c = 1.1, tau0 = 2, tau_inf = 0.5, t = 1
        let v = performance_function(1.0, &env, 0);
        assert!((v - 0.999_306_625_5).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn performance_function_strictly_decreasing() {
        let env = env222();
        let mut prev = f64::INFINITY;
        for k in 0..500 {
            let t = k as f64 * 0.02;
            let v = performance_function(t, &env, 1);
            assert!(v < prev);
            assert!(v > env.tau_final[1]);
            prev = v;
        }
    }

    #[test]
    fn normalized_errors_match_hand_values() {
        let env = env222();
        let zero = Vector3::zeros();
        let s = normalized_errors(&zero, &zero, &zero, &zero, &env, 0.0).unwrap();
        assert_eq!(s.e, Vector3::zeros());

        // one metre of x position error at t = 0: e_x = 1.7 / 2 = 0.85
        let meas = Vector3::new(-1.0, 0.0, 0.0);
        let s = normalized_errors(&meas, &zero, &zero, &zero, &env, 0.0).unwrap();
        assert!((s.e.x - 0.85).abs() < 1e-12);
        assert!((s.margins.x - (2.0 - 1.7)).abs() < 1e-12);
    }

    #[test]
    fn envelope_boundary_raises_violation() {
        let env = env222();
        let zero = Vector3::zeros();
        // combined error equal to tau: violation
        let meas = Vector3::new(0.0, 0.0, -(2.0 / 3.5));
        let err = normalized_errors(&meas, &zero, &zero, &zero, &env, 0.0).unwrap_err();
        match err {
            OuterLoopError::EnvelopeViolation { axis, .. } => assert_eq!(axis, 2),
        }
    }

    #[test]
    fn zero_error_yields_pure_hover_bias() {
        let set = default_params();
        let env = env222();
        let mut st = OuterLoopState::new();
        let u = error_controller(
            &Vector3::zeros(),
            &env,
            &set.ctrl,
            &mut st,
            0.0,
            0.0,
            0.01,
        );
        assert_eq!(u.x, 0.0);
        assert_eq!(u.y, 0.0);
        assert!((u.z + set.ctrl.col_bias).abs() < 1e-15);
    }

    #[test]
    fn barrier_gain_matches_hand_value() {
        let set = default_params();
        let mut ctrl = set.ctrl.clone();
        ctrl.col_bias = 0.0;
        // e_x = 0.5, tau_x = 1, k_x = 0.16: u_x = -0.16/0.75 * atanh(0.5)
        let env = PerformanceEnvelope {
            tau_init: Vector3::new(1.0, 1.0, 1.0),
            tau_final: Vector3::new(0.999_999_999, 1.0, 1.0),
            decay: Vector3::new(0.0, 0.0, 0.0),
            pos_gain: ctrl.pos_gain,
        };
        let mut st = OuterLoopState::new();
        let u = error_controller(
            &Vector3::new(0.5, 0.0, 0.0),
            &env,
            &ctrl,
            &mut st,
            0.0,
            0.0,
            0.01,
        );
        let expected = -(0.16 / (0.75 * 1.0)) * 0.5f64.atanh();
        assert!((u.x - expected).abs() < 1e-9, "{} vs {expected}", u.x);
        assert!((expected + 0.1172).abs() < 1e-4);
    }

    #[test]
    fn barrier_diverges_towards_the_boundary() {
        let set = default_params();
        let env = env222();
        let mut prev_mag = 0.0;
        for k in 1..40 {
            let e = 1.0 - 1.0 / (k as f64 * 10.0);
            let mut st = OuterLoopState::new();
            let u = error_controller(
                &Vector3::new(e, 0.0, 0.0),
                &env,
                &set.ctrl,
                &mut st,
                0.0,
                0.0,
                0.01,
            );
            assert!(u.x.abs() > prev_mag, "barrier must grow towards e = 1");
            prev_mag = u.x.abs();
        }
    }

    #[test]
    fn integral_term_accumulates_trapezoidally() {
        let set = default_params();
        let env = env222();
        let mut st = OuterLoopState::new();
        let e = Vector3::new(0.2, 0.0, 0.0);
        // first call records the barrier, second integrates one trapezoid
        error_controller(&e, &env, &set.ctrl, &mut st, 0.0, 0.0, 0.01);
        error_controller(&e, &env, &set.ctrl, &mut st, 0.0, 0.01, 0.01);
        let expected = 0.01 * 0.2f64.atanh();
        assert!((st.integrals.x - expected).abs() < 1e-15);
        // frozen axes hold
        st.freeze_lateral = true;
        error_controller(&e, &env, &set.ctrl, &mut st, 0.0, 0.02, 0.01);
        assert!((st.integrals.x - expected).abs() < 1e-15);
    }

    #[test]
    fn heading_rotation_moves_north_error_into_body_pitch_channel() {
        let set = default_params();
        let mut ctrl = set.ctrl.clone();
        ctrl.col_bias = 0.0;
        ctrl.int_gain = Vector3::zeros();
        let env = env222();
        let e = Vector3::new(0.3, 0.0, 0.0);
        // facing east (yaw 90 deg): a north error lands on the body y channel
        let mut st = OuterLoopState::new();
        let u = error_controller(
            &e,
            &env,
            &ctrl,
            &mut st,
            std::f64::consts::FRAC_PI_2,
            0.0,
            0.01,
        );
        assert!(u.x.abs() < 1e-12);
        assert!(u.y.abs() > 1e-3);
    }

    #[test]
    fn attitude_command_pure_vertical() {
        let mut st = OuterLoopState::new();
        let cmd = attitude_command(&Vector3::new(0.0, 0.0, -0.8), 1.0, 0.35, &mut st);
        assert_eq!(cmd.r_out[0], 0.0);
        assert_eq!(cmd.r_out[1], 0.0);
        assert_eq!(cmd.r_out[2], 1.0);
        assert!((cmd.r_out[3] + 0.8).abs() < 1e-15);
        assert!(!cmd.clamped && !cmd.held);
    }

    #[test]
    fn attitude_command_lateral_only_tilts_roll() {
        let mut st = OuterLoopState::new();
        let u = Vector3::new(0.0, 0.3, -1.0);
        let cmd = attitude_command(&u, 0.0, 0.6, &mut st);
        assert_eq!(cmd.r_out[1], 0.0);
        assert!((cmd.r_out[0] + (0.3 / u.norm()).asin()).abs() < 1e-12);
    }

    #[test]
    fn attitude_command_round_trip_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut st = OuterLoopState::new();
        for _ in 0..10_000 {
            let u = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-3.0..-0.1),
            );
            let cmd = attitude_command(&u, 0.0, 10.0, &mut st);
            let (roll, pitch) = (cmd.r_out[0], cmd.r_out[1]);
            let dir = Vector3::new(
                pitch.sin() * roll.cos(),
                -roll.sin(),
                -pitch.cos() * roll.cos(),
            );
            let err = (dir - u / u.norm()).norm();
            assert!(err < 1e-10, "reconstruction error {err:.3e} for {u:?}");
        }
    }

    #[test]
    fn attitude_command_degenerate_holds_last() {
        let mut st = OuterLoopState::new();
        let cmd1 = attitude_command(&Vector3::new(0.1, 0.0, -1.0), 0.5, 0.35, &mut st);
        let cmd2 = attitude_command(&Vector3::new(0.0, 0.0, 0.0), 0.5, 0.35, &mut st);
        assert!(cmd2.held);
        assert_eq!(cmd1.r_out, cmd2.r_out);
    }

    #[test]
    fn error_dynamics_zero_at_steady_hover() {
        let set = default_params();
        let trim =
            crate::linearize::find_trim(&set.heli, crate::linearize::TrimTargets::default())
                .unwrap();
        let eps = position_error_dynamics(
            &trim.state,
            &trim.inputs,
            &Vector3::zeros(),
            &Vector3::zeros(),
            &set.heli,
        )
        .unwrap();
        assert!(eps.norm() < 1e-7, "residual error dynamics {eps:?}");
    }

    #[test]
    fn error_dynamics_match_finite_differences_along_trajectory() {
        let set = default_params();
        let trim =
            crate::linearize::find_trim(&set.heli, crate::linearize::TrimTargets::default())
                .unwrap();
        // offset inputs to fly an arc, reference fixed
        let mut inputs = trim.inputs;
        inputs.lon += 0.01;
        inputs.col += 0.002;
        let wind = Vector3::new(0.4, -0.2, 0.0);
        let mut s = trim.state;
        let dt = 1e-3;
        for _ in 0..100 {
            s = crate::dynamics::step(&s, &inputs, &wind, dt, &set.heli).unwrap();
        }
        // eps_v = -v_ned (reference at rest), compare against central difference
        let v_ned = |s: &VehicleState| {
            crate::dynamics::rotation_matrix(&s.euler).transpose() * s.v_b
        };
        let analytic =
            position_error_dynamics(&s, &inputs, &wind, &Vector3::zeros(), &set.heli).unwrap();
        let s_next = crate::dynamics::step(&s, &inputs, &wind, dt, &set.heli).unwrap();
        let mut s_back = trim.state;
        for _ in 0..99 {
            s_back = crate::dynamics::step(&s_back, &inputs, &wind, dt, &set.heli).unwrap();
        }
        let fd = -(v_ned(&s_next) - v_ned(&s_back)) / (2.0 * dt);
        let err = (analytic - fd).norm();
        assert!(err < 1e-4, "error-dynamics mismatch {err:.3e}");
    }
}
