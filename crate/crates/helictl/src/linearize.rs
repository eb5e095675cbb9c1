//! Hover trim search and extraction of the linear attitude model.
//!
//! The synthesis model uses the nine attitude states
//! `[phi, theta, p, q, a_s, b_s, r, dped, psi]` where `dped` is the
//! gyro-shaped tail command. The simulator integrates the gyro integrator
//! instead, so this module maps between the two coordinate sets exactly.

use nalgebra::{Complex, DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::dynamics::{
    state_derivative, ControlInputs, DynamicsError, VehicleState, WindVector,
};
use crate::matio::{self, MatError};
use crate::params::{ControllerParams, HelicopterParams, N_INPUTS, SYNTH_STATES};

pub const STATE_LABELS: [&str; SYNTH_STATES] =
    ["phi", "theta", "p", "q", "a_s", "b_s", "r", "dped", "psi"];
pub const INPUT_LABELS: [&str; N_INPUTS] = ["lat", "lon", "ped", "col"];

#[derive(Debug, Error)]
pub enum TrimError {
    #[error("trim search did not converge after {iterations} iterations (residual {last:.3e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },
    #[error("trim attitude implausible for hover: roll {roll:.3} rad, pitch {pitch:.3} rad")]
    Implausible { roll: f64, pitch: f64 },
    #[error("gyro integral gain must be positive to close the yaw trim, got {0}")]
    GyroConfig(f64),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Error)]
pub enum LinError {
    #[error("pair (A, B) not stabilizable: mode {eig} uncontrollable (PBH sigma {sigma:.3e})")]
    NotStabilizable { eig: Complex<f64>, sigma: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Mat(#[from] MatError),
    #[error("model file invalid: {0}")]
    BadModelFile(String),
}

/// What the trim search aims for.
#[derive(Debug, Clone, Copy)]
pub struct TrimTargets {
    /// Heading to hold, rad.
    pub heading: f64,
}

impl Default for TrimTargets {
    fn default() -> Self {
        TrimTargets { heading: 0.0 }
    }
}

/// Converged hover equilibrium.
#[derive(Debug, Clone)]
pub struct TrimPoint {
    pub state: VehicleState,
    pub inputs: ControlInputs,
    /// Norm of the dynamic residual at the equilibrium.
    pub residual: f64,
}

impl TrimPoint {
    /// Trim values of the nine synthesis states.
    pub fn x_synth(&self) -> [f64; SYNTH_STATES] {
        [
            self.state.euler.x,
            self.state.euler.y,
            self.state.omega_b.x,
            self.state.omega_b.y,
            self.state.flap.x,
            self.state.flap.y,
            self.state.omega_b.z,
            self.state.yaw_gyro.cmd,
            self.state.euler.z,
        ]
    }

    pub fn u_array(&self) -> [f64; N_INPUTS] {
        [self.inputs.lat, self.inputs.lon, self.inputs.ped, self.inputs.col]
    }
}

/// Linearized attitude model about a trim point.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Wind input matrix (body-frame wind components).
    pub e: DMatrix<f64>,
    /// Output weight of h = C x + D u used by the synthesis.
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// Selector of the body rates [p, q, r].
    pub c_out: DMatrix<f64>,
    pub x_trim: [f64; SYNTH_STATES],
    pub u_trim: [f64; N_INPUTS],
    /// Entries whose two-step finite differences disagreed.
    pub warnings: Vec<String>,
}

/// Rate-selector rows for h_out = [p q r].
pub fn rate_selector() -> DMatrix<f64> {
    let mut c = DMatrix::zeros(3, SYNTH_STATES);
    c[(0, 2)] = 1.0;
    c[(1, 3)] = 1.0;
    c[(2, 6)] = 1.0;
    c
}

// --- trim ---------------------------------------------------------------

/// Dynamic residual for the trim unknowns
/// `[phi, theta, a_s, b_s, lat, lon, ped, col, gyro integrator]`.
fn trim_residual(
    unknowns: &[f64; 9],
    heading: f64,
    params: &HelicopterParams,
) -> Result<[f64; 9], DynamicsError> {
    let mut s = VehicleState::zeroed();
    s.euler = Vector3::new(unknowns[0], unknowns[1], heading);
    s.flap = nalgebra::Vector2::new(unknowns[2], unknowns[3]);
    s.yaw_gyro.integrator = unknowns[8];
    let u = ControlInputs::new(unknowns[4], unknowns[5], unknowns[6], unknowns[7]);
    let d = state_derivative(&s, &u, &Vector3::zeros(), params)?;
    Ok([
        d.v_b_dot.x,
        d.v_b_dot.y,
        d.v_b_dot.z,
        d.omega_dot.x,
        d.omega_dot.y,
        d.omega_dot.z,
        d.flap_dot.x,
        d.flap_dot.y,
        d.gyro_integrator_dot,
    ])
}

/// Damped least-squares (Levenberg) search for the hover equilibrium with
/// zero velocity and zero rates at a fixed heading.
pub fn find_trim(params: &HelicopterParams, targets: TrimTargets) -> Result<TrimPoint, TrimError> {
    if params.gyro_ki <= 0.0 {
        return Err(TrimError::GyroConfig(params.gyro_ki));
    }

    // initial guess from static force/torque estimates
    let disk = 2.0 * params.air_density * std::f64::consts::PI * params.rotor_radius.powi(2);
    let weight = params.mass * params.gravity;
    let v_h = (weight / disk).sqrt();
    let coef = params.air_density
        * params.rotor_speed
        * params.rotor_radius.powi(2)
        * params.lift_slope
        * params.blade_count
        * params.chord
        / 4.0;
    let col0 = (weight / coef + v_h)
        / ((2.0 / 3.0) * params.rotor_speed * params.rotor_radius * params.k_col);
    let tip = params.rotor_speed * params.rotor_radius;
    let profile = params.air_density * params.rotor_radius.powi(2) * params.blade_count
        * params.chord
        / params.torque_profile_div
        * tip
        * tip;
    let ped_cmd0 = if params.tail_thrust_gain.abs() > 1e-12 && params.tail_yaw_arm.abs() > 1e-12 {
        (profile + weight * v_h) / (params.tail_thrust_gain * params.tail_yaw_arm)
    } else {
        0.0
    };
    let mut x = [0.0f64; 9];
    x[7] = col0;
    x[8] = ped_cmd0 / params.gyro_ki;

    let bound = params.servo_limit;
    let clamp = |x: &mut [f64; 9]| {
        for i in 4..8 {
            x[i] = x[i].clamp(-bound, bound);
        }
    };

    let fd_step = 1e-7;
    let mut lambda = 1e-3;
    let mut history = Vec::new();
    let mut f = trim_residual(&x, targets.heading, params)?;
    let mut norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    history.push(norm);

    for _iter in 0..300 {
        if norm < 1e-10 {
            break;
        }
        // finite-difference Jacobian
        let mut jac = DMatrix::<f64>::zeros(9, 9);
        for j in 0..9 {
            let mut xp = x;
            let mut xm = x;
            let h = fd_step * (1.0 + x[j].abs());
            xp[j] += h;
            xm[j] -= h;
            let fp = trim_residual(&xp, targets.heading, params)?;
            let fm = trim_residual(&xm, targets.heading, params)?;
            for i in 0..9 {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let jtf = &jt * DVector::from_column_slice(&f);

        let mut accepted = false;
        for _ in 0..12 {
            let mut lhs = jtj.clone();
            for i in 0..9 {
                lhs[(i, i)] += lambda * (1.0 + jtj[(i, i)].abs());
            }
            let Some(delta) = lhs.lu().solve(&(-&jtf)) else {
                lambda *= 10.0;
                continue;
            };
            let mut xn = x;
            for i in 0..9 {
                xn[i] += delta[i];
            }
            clamp(&mut xn);
            match trim_residual(&xn, targets.heading, params) {
                Ok(fn_) => {
                    let norm_n = fn_.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm_n < norm {
                        x = xn;
                        f = fn_;
                        norm = norm_n;
                        lambda = (lambda * 0.3).max(1e-12);
                        accepted = true;
                        break;
                    }
                }
                Err(_) => {}
            }
            lambda *= 10.0;
        }
        history.push(norm);
        if !accepted && norm >= 1e-10 {
            return Err(TrimError::NonConvergence {
                iterations: history.len(),
                last: norm,
                history,
            });
        }
    }

    if norm >= 1e-8 {
        return Err(TrimError::NonConvergence {
            iterations: history.len(),
            last: norm,
            history,
        });
    }
    if x[0].abs() >= 0.2 || x[1].abs() >= 0.2 {
        return Err(TrimError::Implausible {
            roll: x[0],
            pitch: x[1],
        });
    }

    let mut state = VehicleState::zeroed();
    state.euler = Vector3::new(x[0], x[1], targets.heading);
    state.flap = nalgebra::Vector2::new(x[2], x[3]);
    state.yaw_gyro.integrator = x[8];
    let inputs = ControlInputs::new(x[4], x[5], x[6], x[7]);
    state.yaw_gyro.cmd = crate::dynamics::gyro_output(0.0, inputs.ped, x[8], params);
    Ok(TrimPoint {
        state,
        inputs,
        residual: norm,
    })
}

// --- linearization -------------------------------------------------------

/// Finite-difference step sizes, one per perturbation family.
#[derive(Debug, Clone, Copy)]
pub struct FdSteps {
    pub state: f64,
    pub input: f64,
    pub wind: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        FdSteps {
            state: 1e-5,
            input: 1e-5,
            wind: 1e-4,
        }
    }
}

/// Build the full simulator state for given synthesis coordinates. The tail
/// command coordinate is converted back to the gyro integrator exactly.
pub fn synth_to_state(
    x9: &[f64; SYNTH_STATES],
    base: &VehicleState,
    u: &ControlInputs,
    params: &HelicopterParams,
) -> VehicleState {
    let mut s = *base;
    s.euler = Vector3::new(x9[0], x9[1], x9[8]);
    s.omega_b = Vector3::new(x9[2], x9[3], x9[6]);
    s.flap = nalgebra::Vector2::new(x9[4], x9[5]);
    let err = params.gyro_gain * u.ped - x9[6];
    s.yaw_gyro.integrator = (x9[7] - params.gyro_kp * err) / params.gyro_ki;
    s.yaw_gyro.cmd = x9[7];
    s
}

/// Synthesis-coordinate derivative; the tail-command row is
/// d(dped)/dt = -kp * rdot + ki * zdot, exactly the chain rule for
/// piecewise-constant inputs. Translational states stay at the base values,
/// which is what the nine-state attitude model assumes.
pub fn synth_derivative(
    x9: &[f64; SYNTH_STATES],
    base: &VehicleState,
    u: &ControlInputs,
    wind: &WindVector,
    params: &HelicopterParams,
) -> Result<[f64; SYNTH_STATES], DynamicsError> {
    let s = synth_to_state(x9, base, u, params);
    let d = state_derivative(&s, u, wind, params)?;
    let dped_dot = -params.gyro_kp * d.omega_dot.z + params.gyro_ki * d.gyro_integrator_dot;
    Ok([
        d.euler_dot.x,
        d.euler_dot.y,
        d.omega_dot.x,
        d.omega_dot.y,
        d.flap_dot.x,
        d.flap_dot.y,
        d.omega_dot.z,
        dped_dot,
        d.euler_dot.z,
    ])
}

/// Central-difference linear model about a trim point. Each column is
/// validated by comparing two step sizes; disagreements land in `warnings`.
pub fn jacobians(
    trim: &TrimPoint,
    params: &HelicopterParams,
    ctrl: &ControllerParams,
    steps: FdSteps,
) -> Result<LinearModel, LinError> {
    if params.gyro_ki <= 0.0 {
        return Err(LinError::BadModelFile(
            "gyro integral gain must be positive for the synthesis model".into(),
        ));
    }
    let x0 = trim.x_synth();
    let u0 = trim.inputs;
    let wind0: WindVector = Vector3::zeros();
    let base = trim.state;

    let col_fd = |j: usize, h: f64| -> Result<DVector<f64>, DynamicsError> {
        let mut xp = x0;
        let mut xm = x0;
        xp[j] += h;
        xm[j] -= h;
        let fp = synth_derivative(&xp, &base, &u0, &wind0, params)?;
        let fm = synth_derivative(&xm, &base, &u0, &wind0, params)?;
        Ok(DVector::from_iterator(
            SYNTH_STATES,
            fp.iter().zip(fm.iter()).map(|(p, m)| (p - m) / (2.0 * h)),
        ))
    };
    let input_fd = |j: usize, h: f64| -> Result<DVector<f64>, DynamicsError> {
        let mut up = u0;
        let mut um = u0;
        match j {
            0 => {
                up.lat += h;
                um.lat -= h;
            }
            1 => {
                up.lon += h;
                um.lon -= h;
            }
            2 => {
                up.ped += h;
                um.ped -= h;
            }
            _ => {
                up.col += h;
                um.col -= h;
            }
        }
        let fp = synth_derivative(&x0, &base, &up, &wind0, params)?;
        let fm = synth_derivative(&x0, &base, &um, &wind0, params)?;
        Ok(DVector::from_iterator(
            SYNTH_STATES,
            fp.iter().zip(fm.iter()).map(|(p, m)| (p - m) / (2.0 * h)),
        ))
    };
    let wind_fd = |j: usize, h: f64| -> Result<DVector<f64>, DynamicsError> {
        let mut wp = wind0;
        let mut wm = wind0;
        wp[j] += h;
        wm[j] -= h;
        let fp = synth_derivative(&x0, &base, &u0, &wp, params)?;
        let fm = synth_derivative(&x0, &base, &u0, &wm, params)?;
        Ok(DVector::from_iterator(
            SYNTH_STATES,
            fp.iter().zip(fm.iter()).map(|(p, m)| (p - m) / (2.0 * h)),
        ))
    };

    let mut warnings = Vec::new();
    let richardson = |label: String,
                          col_h: DVector<f64>,
                          col_2h: DVector<f64>,
                          warnings: &mut Vec<String>|
     -> DVector<f64> {
        for i in 0..SYNTH_STATES {
            let rel = (col_h[i] - col_2h[i]).abs() / (1.0 + col_h[i].abs());
            if rel > 1e-4 {
                warnings.push(format!(
                    "entry ({}, {label}): step-size disagreement {rel:.2e}",
                    STATE_LABELS[i]
                ));
            }
        }
        col_h
    };

    let mut a = DMatrix::<f64>::zeros(SYNTH_STATES, SYNTH_STATES);
    for j in 0..SYNTH_STATES {
        let c1 = col_fd(j, steps.state)?;
        let c2 = col_fd(j, 2.0 * steps.state)?;
        a.set_column(j, &richardson(STATE_LABELS[j].into(), c1, c2, &mut warnings));
    }
    let mut b = DMatrix::<f64>::zeros(SYNTH_STATES, N_INPUTS);
    for j in 0..N_INPUTS {
        let c1 = input_fd(j, steps.input)?;
        let c2 = input_fd(j, 2.0 * steps.input)?;
        b.set_column(j, &richardson(INPUT_LABELS[j].into(), c1, c2, &mut warnings));
    }
    let mut e = DMatrix::<f64>::zeros(SYNTH_STATES, 3);
    for j in 0..3 {
        let c1 = wind_fd(j, steps.wind)?;
        let c2 = wind_fd(j, 2.0 * steps.wind)?;
        let label = ["wind_u", "wind_v", "wind_w"][j];
        e.set_column(j, &richardson(label.into(), c1, c2, &mut warnings));
    }

    let model = LinearModel {
        a,
        b,
        e,
        c: ctrl.output_weight_c.clone(),
        d: ctrl.output_weight_d.clone(),
        c_out: rate_selector(),
        x_trim: x0,
        u_trim: trim.u_array(),
        warnings,
    };
    check_stabilizable(&model.a, &model.b)?;
    Ok(model)
}

/// PBH test on every eigenvalue at or right of the imaginary axis.
fn check_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(), LinError> {
    let n = a.nrows();
    let eigs = a.clone().complex_eigenvalues();
    let scale = a.norm() + b.norm();
    for eig in eigs.iter() {
        if eig.re < -1e-9 {
            continue;
        }
        let mut m = DMatrix::<Complex<f64>>::zeros(n, n + b.ncols());
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = Complex::new(a[(i, j)], 0.0);
            }
            m[(i, i)] -= *eig;
            for j in 0..b.ncols() {
                m[(i, n + j)] = Complex::new(b[(i, j)], 0.0);
            }
        }
        let svd = m.svd(false, false);
        let sigma = svd.singular_values[svd.singular_values.len() - 1];
        if sigma < 1e-9 * scale {
            return Err(LinError::NotStabilizable { eig: *eig, sigma });
        }
    }
    Ok(())
}

// --- model file I/O -------------------------------------------------------

pub fn model_to_text(m: &LinearModel) -> String {
    let xt = DMatrix::from_row_slice(SYNTH_STATES, 1, &m.x_trim);
    let ut = DMatrix::from_row_slice(N_INPUTS, 1, &m.u_trim);
    matio::write_matrices(&[
        ("A", &m.a),
        ("B", &m.b),
        ("E", &m.e),
        ("C", &m.c),
        ("D", &m.d),
        ("C_out", &m.c_out),
        ("x_trim", &xt),
        ("u_trim", &ut),
    ])
}

pub fn model_from_text(text: &str) -> Result<LinearModel, LinError> {
    let items = matio::parse_matrices(text)?;
    let a = matio::find_shaped(&items, "A", SYNTH_STATES, SYNTH_STATES)?.clone();
    let b = matio::find_shaped(&items, "B", SYNTH_STATES, N_INPUTS)?.clone();
    let e = matio::find_shaped(&items, "E", SYNTH_STATES, 3)?.clone();
    let c = matio::find(&items, "C")?.clone();
    let d = matio::find(&items, "D")?.clone();
    if c.ncols() != SYNTH_STATES {
        return Err(LinError::BadModelFile(format!(
            "C must have {SYNTH_STATES} columns, got {}",
            c.ncols()
        )));
    }
    if d.ncols() != N_INPUTS || d.nrows() != c.nrows() {
        return Err(LinError::BadModelFile(format!(
            "D must be {}x{N_INPUTS}, got {}x{}",
            c.nrows(),
            d.nrows(),
            d.ncols()
        )));
    }
    let c_out = matio::find_shaped(&items, "C_out", 3, SYNTH_STATES)?.clone();
    let xt = matio::find_shaped(&items, "x_trim", SYNTH_STATES, 1)?;
    let ut = matio::find_shaped(&items, "u_trim", N_INPUTS, 1)?;
    let mut x_trim = [0.0; SYNTH_STATES];
    for i in 0..SYNTH_STATES {
        x_trim[i] = xt[(i, 0)];
    }
    let mut u_trim = [0.0; N_INPUTS];
    for i in 0..N_INPUTS {
        u_trim[i] = ut[(i, 0)];
    }
    check_stabilizable(&a, &b)?;
    Ok(LinearModel {
        a,
        b,
        e,
        c,
        d,
        c_out,
        x_trim,
        u_trim,
        warnings: Vec::new(),
    })
}
