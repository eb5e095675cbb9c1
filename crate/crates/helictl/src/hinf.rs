//! State-feedback synthesis for wind-disturbance attenuation.
//!
//! The controller solves the game-type Riccati equation
//!
//!   P A + A'P + C'C + P E E' P / g^2 - (P B + C'D)(D'D)^-1 (D'C + B'P) = 0
//!
//! for its stabilizing positive-semidefinite solution, derives the feedback
//! F and the reference-injection matrix G, picks the attenuation level g by
//! bisection on feasibility, and certifies the achieved closed-loop norm by
//! a frequency sweep.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

use crate::dynamics::ControlInputs;
use crate::linearize::LinearModel;
use crate::matio::{self, MatError};
use crate::params::{N_INPUTS, SYNTH_STATES};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("D^T D is singular; the input weight must have full column rank")]
    SingularInputWeight,
    #[error("no stabilizing Riccati solution at gamma = {gamma}: {reason}")]
    GammaInfeasible { gamma: f64, reason: String },
    #[error("synthesis infeasible even at gamma = {0}")]
    InfeasibleAtMax(f64),
    #[error("uncontrollable output at DC: tracked-output DC map is singular")]
    UncontrollableAtDc,
    #[error("linear matrix equation unsolvable: {0}")]
    LinearSolve(String),
    #[error(transparent)]
    Mat(#[from] MatError),
    #[error("gain file invalid: {0}")]
    BadGainFile(String),
}

/// Synthesis products for one design point.
#[derive(Debug, Clone)]
pub struct GainSet {
    /// Stabilizing Riccati solution.
    pub p: DMatrix<f64>,
    pub gamma: f64,
    /// State feedback, inputs x states.
    pub f: DMatrix<f64>,
    /// Reference injection, inputs x references.
    pub g: DMatrix<f64>,
    /// Tracked output rows used to build G: roll, pitch, yaw and the
    /// collective pass-through channel.
    pub c_aug: DMatrix<f64>,
    pub closed_loop_eigs: Vec<Complex<f64>>,
}

/// Residual of the game Riccati equation, exactly as the synthesis states it.
pub fn riccati_residual(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    e: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    gamma: f64,
) -> DMatrix<f64> {
    let dtd_inv = (d.transpose() * d)
        .try_inverse()
        .expect("D^T D invertible (validated upstream)");
    let cross = p * b + c.transpose() * d;
    p * a + a.transpose() * p
        + c.transpose() * c
        + p * e * e.transpose() * p / (gamma * gamma)
        - &cross * dtd_inv * cross.transpose()
}

/// Solve A' X + X A + Q = 0 by direct vectorized linear solve.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, SynthError> {
    let n = a.nrows();
    let mut m = DMatrix::<f64>::zeros(n * n, n * n);
    // vec(A'X) = (I (x) A') vec(X); vec(XA) = (A' (x) I) vec(X)
    let at = a.transpose();
    for col in 0..n {
        for row in 0..n {
            // block (row, col) of the Kronecker operators, column-major vec
            for i in 0..n {
                for j in 0..n {
                    // I (x) A' term
                    if col == j {
                        m[(col * n + i, j * n + row)] += at[(i, row)];
                    }
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                // (A' (x) I): X A column j picks sum_k X[:,k] A[k,j]
                m[(j * n + i, k * n + i)] += a[(k, j)];
            }
        }
    }
    let rhs = DVector::from_iterator(n * n, (0..n * n).map(|idx| -q[(idx % n, idx / n)]));
    let lu = m.lu();
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| SynthError::LinearSolve("lyapunov operator singular".into()))?;
    let sol = DMatrix::from_fn(n, n, |i, j| x[j * n + i]);
    let resid = (a.transpose() * &sol + &sol * a + q).norm() / (1.0 + sol.norm());
    if !resid.is_finite() || resid > 1e-6 {
        return Err(SynthError::LinearSolve(format!(
            "lyapunov residual {resid:.3e}"
        )));
    }
    Ok(sol)
}

fn hurwitz_margin(eigs: &[Complex<f64>]) -> f64 {
    eigs.iter().fold(f64::NEG_INFINITY, |m, e| m.max(e.re))
}

/// Standard CARE A'P + P A - P S P + Q = 0 via the matrix sign of the
/// Hamiltonian. Needs no initial guess, which makes it a good seed for the
/// Newton iteration below.
pub fn solve_care_sign(
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>, SynthError> {
    let n = a.nrows();
    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    // Newton iteration for sign(H) with determinant scaling
    let mut z = h.clone();
    let mut converged = false;
    for _ in 0..120 {
        let lu = z.clone().lu();
        let det: f64 = lu.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(SynthError::LinearSolve("sign iteration hit singular Z".into()));
        }
        let zinv = lu
            .try_inverse()
            .ok_or_else(|| SynthError::LinearSolve("sign iteration inverse failed".into()))?;
        let mu = det.abs().powf(-1.0 / (2.0 * n as f64));
        let next = 0.5 * (mu * &z + (1.0 / mu) * zinv);
        let delta = (&next - &z).norm() / (1.0 + next.norm());
        z = next;
        if delta < 1e-14 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SynthError::LinearSolve("matrix sign did not converge".into()));
    }

    // stable invariant subspace = range of (I - sign(H)) / 2
    let proj = 0.5 * (DMatrix::identity(2 * n, 2 * n) - &z);
    let qr = proj.col_piv_qr();
    let qmat = qr.q();
    let basis = qmat.columns(0, n);
    let u1 = basis.rows(0, n).into_owned();
    let u2 = basis.rows(n, n).into_owned();
    let u1_inv = u1
        .try_inverse()
        .ok_or_else(|| SynthError::LinearSolve("stable subspace projection singular".into()))?;
    let p = u2 * u1_inv;
    let p = 0.5 * (&p + &p.transpose());
    let resid = (a.transpose() * &p + &p * a - &p * s * &p + q).norm() / (1.0 + p.norm());
    if !resid.is_finite() || resid > 1e-7 {
        return Err(SynthError::LinearSolve(format!(
            "sign-function CARE residual {resid:.3e}"
        )));
    }
    Ok(p)
}

/// Stabilizing solution of the game Riccati equation at a given gamma.
///
/// Newton iteration on the Riccati operator, seeded with the disturbance-free
/// solution; every step solves one Lyapunov-type equation by direct
/// vectorized linear solve.
pub fn solve_game_riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    e: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    gamma: f64,
) -> Result<DMatrix<f64>, SynthError> {
    assert!(gamma > 0.0, "gamma must be positive");
    let dtd = d.transpose() * d;
    let dtd_inv = dtd.try_inverse().ok_or(SynthError::SingularInputWeight)?;

    // reduced data: A_hat = A - B (D'D)^-1 D'C, Q_hat = C'C - C'D (D'D)^-1 D'C
    let dtc = d.transpose() * c;
    let a_hat = a - b * &dtd_inv * &dtc;
    let q_hat = c.transpose() * c - dtc.transpose() * &dtd_inv * &dtc;
    let s = b * &dtd_inv * b.transpose();
    let w_gamma = e * e.transpose() / (gamma * gamma) - &s;

    let infeasible = |reason: String| SynthError::GammaInfeasible { gamma, reason };

    // disturbance-free seed
    let mut p = solve_care_sign(&a_hat, &s, &q_hat)
        .map_err(|e| infeasible(format!("disturbance-free seed failed: {e}")))?;

    let mut last_norm = f64::INFINITY;
    let mut stall = 0;
    let mut done = false;
    for _ in 0..60 {
        let r = a_hat.transpose() * &p + &p * &a_hat + &q_hat + &p * &w_gamma * &p;
        let rnorm = r.norm() / (1.0 + p.norm());
        if rnorm < 1e-12 {
            done = true;
            break;
        }
        if !rnorm.is_finite() || p.norm() > 1e14 {
            return Err(infeasible(format!("Newton diverged (residual {rnorm:.3e})")));
        }
        if rnorm >= last_norm * 0.9 {
            stall += 1;
            if stall > 6 {
                return Err(infeasible(format!("Newton stalled at residual {rnorm:.3e}")));
            }
        } else {
            stall = 0;
        }
        last_norm = rnorm;
        let a_k = &a_hat + &w_gamma * &p;
        let delta = solve_lyapunov(&a_k, &r)
            .map_err(|e| infeasible(format!("Newton step unsolvable: {e}")))?;
        p += delta;
        p = 0.5 * (&p + &p.transpose());
    }
    if !done {
        let r = a_hat.transpose() * &p + &p * &a_hat + &q_hat + &p * &w_gamma * &p;
        let rnorm = r.norm() / (1.0 + p.norm());
        if rnorm >= 1e-10 {
            return Err(infeasible(format!(
                "Newton did not reach tolerance (residual {rnorm:.3e})"
            )));
        }
    }

    // acceptance checks: symmetric PSD, Hurwitz closed loop, worst-case loop
    let eig_min = p
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(*v));
    if eig_min < -1e-10 * (1.0 + p.norm()) {
        return Err(infeasible(format!("P indefinite (min eigenvalue {eig_min:.3e})")));
    }
    let f = -(&dtd_inv * (&dtc + b.transpose() * &p));
    let a_cl = a + b * &f;
    let margin = hurwitz_margin(a_cl.complex_eigenvalues().as_slice());
    if margin >= 0.0 {
        return Err(infeasible(format!(
            "closed loop not Hurwitz (max Re eig {margin:.3e})"
        )));
    }
    let a_worst = &a_hat + &w_gamma * &p;
    let margin_w = hurwitz_margin(a_worst.complex_eigenvalues().as_slice());
    if margin_w >= 0.0 {
        return Err(infeasible(format!(
            "worst-case loop not Hurwitz (max Re eig {margin_w:.3e})"
        )));
    }
    Ok(p)
}

/// Gamma selection report. The bisection value is the one the design uses;
/// the formula fields reproduce the closed-form expression
/// sqrt(max eig(L R^-1)) under its two defensible readings and are reported
/// for comparison only.
#[derive(Debug, Clone)]
pub struct GammaSelection {
    pub gamma: f64,
    pub infimum: f64,
    /// L solves the Lyapunov equation on the open-loop A (often undefined
    /// for a hovering airframe with integrator modes).
    pub formula_open_loop: Option<f64>,
    /// L solves the Lyapunov equation on the disturbance-free closed loop.
    pub formula_closed_loop: Option<f64>,
}

/// Smallest gamma the bisection will report when the disturbance channel is
/// absent or trivially attenuated.
pub const GAMMA_FLOOR: f64 = 1e-3;
pub const GAMMA_MAX: f64 = 1e6;

/// Pick the attenuation level by bisection on Riccati feasibility,
/// returning 1.05x the feasibility infimum (relative tolerance 1e-3).
pub fn select_gamma(model: &LinearModel) -> Result<GammaSelection, SynthError> {
    let feasible = |gamma: f64| {
        solve_game_riccati(&model.a, &model.b, &model.e, &model.c, &model.d, gamma).is_ok()
    };

    let infimum = if model.e.norm() == 0.0 || feasible(GAMMA_FLOOR) {
        GAMMA_FLOOR
    } else {
        let mut hi = 1.0;
        while !feasible(hi) {
            hi *= 4.0;
            if hi > GAMMA_MAX {
                return Err(SynthError::InfeasibleAtMax(GAMMA_MAX));
            }
        }
        let mut lo = hi / 4.0;
        while hi / lo > 1.0 + 1e-3 {
            let mid = (lo * hi).sqrt();
            if feasible(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };

    let gamma = infimum * 1.05;
    if !feasible(gamma) {
        return Err(SynthError::GammaInfeasible {
            gamma,
            reason: "bisection result failed the confirmation solve".into(),
        });
    }

    // closed-form report values
    let ctc = model.c.transpose() * &model.c;
    let r_a = {
        let dtd_inv = (model.d.transpose() * &model.d)
            .try_inverse()
            .ok_or(SynthError::SingularInputWeight)?;
        let dtc = model.d.transpose() * &model.c;
        let a_hat = &model.a - &model.b * &dtd_inv * &dtc;
        let q_hat = &ctc - dtc.transpose() * &dtd_inv * &dtc;
        let s = &model.b * &dtd_inv * model.b.transpose();
        solve_care_sign(&a_hat, &s, &q_hat).ok()
    };
    let formula = |l: Option<DMatrix<f64>>, r: &Option<DMatrix<f64>>| -> Option<f64> {
        let l = l?;
        let r_inv = r.as_ref()?.clone().try_inverse()?;
        let prod = l * r_inv;
        let max_re = prod
            .complex_eigenvalues()
            .iter()
            .fold(f64::NEG_INFINITY, |m, e| m.max(e.re));
        if max_re > 0.0 {
            Some(max_re.sqrt())
        } else {
            None
        }
    };
    let formula_open_loop = formula(solve_lyapunov(&model.a, &ctc).ok(), &r_a);
    let formula_closed_loop = r_a.as_ref().and_then(|p0| {
        let dtd_inv = (model.d.transpose() * &model.d).try_inverse()?;
        let dtc = model.d.transpose() * &model.c;
        let f = -(&dtd_inv * (&dtc + model.b.transpose() * p0));
        let a_cl = &model.a + &model.b * f;
        formula(solve_lyapunov(&a_cl, &ctc).ok(), &r_a)
    });

    Ok(GammaSelection {
        gamma,
        infimum,
        formula_open_loop,
        formula_closed_loop,
    })
}

/// G = -[C (A+BF)^-1 B]^-1 for an arbitrary tracked-output selector.
pub fn tracking_gain(
    a_cl: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c_track: &DMatrix<f64>,
) -> Result<DMatrix<f64>, SynthError> {
    debug_assert_eq!(c_track.ncols(), a_cl.nrows());
    let a_inv = a_cl
        .clone()
        .try_inverse()
        .ok_or(SynthError::UncontrollableAtDc)?;
    // G = -(C A_cl^-1 B)^-1 = (-(C A_cl^-1 B))^-1
    let dc = -(c_track * a_inv * b);
    let det = dc.determinant();
    if !det.is_finite() || det.abs() < 1e-300 {
        return Err(SynthError::UncontrollableAtDc);
    }
    dc.try_inverse().ok_or(SynthError::UncontrollableAtDc)
}

/// Build the full gain set at a solved design point.
///
/// The tracked output stacks the three attitude angles with a computed
/// collective channel chosen so the collective reference passes through to
/// the collective servo one-to-one at DC.
pub fn synthesize_gains(
    model: &LinearModel,
    p: &DMatrix<f64>,
    gamma: f64,
) -> Result<GainSet, SynthError> {
    let dtd_inv = (model.d.transpose() * &model.d)
        .try_inverse()
        .ok_or(SynthError::SingularInputWeight)?;
    let dtc = model.d.transpose() * &model.c;
    let f = -(&dtd_inv * (&dtc + model.b.transpose() * p));
    let a_cl = &model.a + &model.b * &f;
    let eigs: Vec<Complex<f64>> = a_cl.complex_eigenvalues().iter().copied().collect();
    if hurwitz_margin(&eigs) >= 0.0 {
        return Err(SynthError::GammaInfeasible {
            gamma,
            reason: "closed loop not Hurwitz at gain synthesis".into(),
        });
    }

    // Tracked output: roll, pitch, yaw, plus the collective servo channel.
    // Roll and pitch references enter through the DC inversion over the two
    // cyclic servos. The yaw reference enters in feedback-error form, -F e_psi,
    // because the gyro integrator already gives that channel exact integral
    // action and a DC inversion there degenerates into huge pedal cross-gains.
    // The collective reference passes straight through to the collective servo.
    let mut c_aug = DMatrix::<f64>::zeros(N_INPUTS, SYNTH_STATES);
    c_aug[(0, 0)] = 1.0;
    c_aug[(1, 1)] = 1.0;
    c_aug[(2, 8)] = 1.0;
    let c2 = c_aug.rows(0, 2).into_owned();
    let b2 = model.b.columns(0, 2).into_owned();
    let g2 = tracking_gain(&a_cl, &b2, &c2)?;
    let mut g = DMatrix::<f64>::zeros(N_INPUTS, N_INPUTS);
    for i in 0..2 {
        for j in 0..2 {
            g[(i, j)] = g2[(i, j)];
        }
    }
    for i in 0..N_INPUTS {
        g[(i, 2)] = -f[(i, 8)];
    }
    g[(3, 3)] = 1.0;

    Ok(GainSet {
        p: p.clone(),
        gamma,
        f,
        g,
        c_aug,
        closed_loop_eigs: eigs,
    })
}

/// Full pipeline: pick gamma (honoring an override), solve, build gains.
pub fn design(model: &LinearModel, gamma_override: Option<f64>) -> Result<(GainSet, GammaSelection), SynthError> {
    let selection = match gamma_override {
        Some(g) => GammaSelection {
            gamma: g,
            infimum: g,
            formula_open_loop: None,
            formula_closed_loop: None,
        },
        None => select_gamma(model)?,
    };
    let p = solve_game_riccati(
        &model.a,
        &model.b,
        &model.e,
        &model.c,
        &model.d,
        selection.gamma,
    )?;
    let gains = synthesize_gains(model, &p, selection.gamma)?;
    Ok((gains, selection))
}

/// Inner control law: u = u_trim + F x + G r, then saturation.
pub fn attitude_control(
    x_dev: &[f64; SYNTH_STATES],
    r_out: &[f64; N_INPUTS],
    gains: &GainSet,
    u_trim: &ControlInputs,
    servo_limit: f64,
) -> ControlInputs {
    let x = DVector::from_column_slice(x_dev);
    let r = DVector::from_column_slice(r_out);
    let du = &gains.f * x + &gains.g * r;
    ControlInputs::new(
        u_trim.lat + du[0],
        u_trim.lon + du[1],
        u_trim.ped + du[2],
        u_trim.col + du[3],
    )
    .saturated(servo_limit)
}

/// Sampled implementation of the same law when the tail-command state is
/// reconstructed from the gyro. The state x8 = kp (Ka u_ped - r) + ki z
/// carries direct feedthrough from the pedal input being computed, so the
/// discrete loop must solve that scalar algebraic loop instead of using the
/// previous step's value; a one-step delay there oscillates whenever
/// |F[ped, x8]| kp Ka exceeds one.
///
/// `x_dev` supplies every deviation except slot 7, which is derived here.
/// Returns the commands and the consistent tail-command value.
#[allow(clippy::too_many_arguments)]
pub fn attitude_control_gyro(
    x_dev: &[f64; SYNTH_STATES],
    r_out: &[f64; N_INPUTS],
    gains: &GainSet,
    u_trim: &ControlInputs,
    servo_limit: f64,
    gyro_kp: f64,
    gyro_ki: f64,
    gyro_gain: f64,
    rate_meas: f64,
    integrator: f64,
    tail_cmd_trim: f64,
) -> (ControlInputs, f64) {
    // tail-command deviation split into the input-independent part and the
    // pedal feedthrough
    let base_x7 = -gyro_kp * rate_meas + gyro_ki * integrator - tail_cmd_trim;
    let feed = gyro_kp * gyro_gain;
    let r = DVector::from_column_slice(r_out);
    let gr = &gains.g * r;
    let mut lin = [0.0; N_INPUTS];
    let trim_arr = [u_trim.lat, u_trim.lon, u_trim.ped, u_trim.col];
    for i in 0..N_INPUTS {
        let mut acc = trim_arr[i] + gr[i] + gains.f[(i, 7)] * base_x7;
        for j in 0..SYNTH_STATES {
            if j != 7 {
                acc += gains.f[(i, j)] * x_dev[j];
            }
        }
        lin[i] = acc;
    }
    let denom = 1.0 - gains.f[(2, 7)] * feed;
    let ped = if denom.abs() > 1e-9 { lin[2] / denom } else { lin[2] };
    let ped_sat = ped.clamp(-servo_limit, servo_limit);
    let x7 = base_x7 + feed * ped_sat;
    let u = ControlInputs::new(
        lin[0] + gains.f[(0, 7)] * feed * ped_sat,
        lin[1] + gains.f[(1, 7)] * feed * ped_sat,
        ped_sat,
        lin[3] + gains.f[(3, 7)] * feed * ped_sat,
    )
    .saturated(servo_limit);
    (u, x7 + tail_cmd_trim)
}

/// Frequency-sweep certificate for the closed-loop wind-to-output norm.
#[derive(Debug, Clone, Copy)]
pub struct NormCertificate {
    pub estimate: f64,
    pub peak_freq: f64,
    pub gamma: f64,
    pub satisfied: bool,
}

fn sigma_max_at(
    a_cl: &DMatrix<f64>,
    e: &DMatrix<f64>,
    c_cl: &DMatrix<f64>,
    omega: f64,
) -> f64 {
    let n = a_cl.nrows();
    let mut m = DMatrix::<Complex<f64>>::from_fn(n, n, |i, j| Complex::new(-a_cl[(i, j)], 0.0));
    for i in 0..n {
        m[(i, i)] += Complex::new(0.0, omega);
    }
    let ec = e.map(|v| Complex::new(v, 0.0));
    let Some(x) = m.lu().solve(&ec) else {
        return f64::INFINITY;
    };
    let t = c_cl.map(|v| Complex::new(v, 0.0)) * x;
    let svd = t.svd(false, false);
    svd.singular_values.iter().fold(0.0f64, |m, s| m.max(*s))
}

/// Estimate sup over frequency of the largest singular value of the transfer
/// from wind to the weighted output, and compare against gamma.
pub fn verify_hinf_norm(model: &LinearModel, gains: &GainSet) -> NormCertificate {
    let a_cl = &model.a + &model.b * &gains.f;
    let c_cl = &model.c + &model.d * &gains.f;
    let n_pts = 2000;
    let (lo, hi) = (1e-2f64, 1e3f64);
    let mut best = (0.0f64, lo);
    for i in 0..n_pts {
        let t = i as f64 / (n_pts - 1) as f64;
        let omega = lo * (hi / lo).powf(t);
        let s = sigma_max_at(&a_cl, &model.e, &c_cl, omega);
        if s > best.0 {
            best = (s, omega);
        }
    }
    // include the DC-ish end: the sweep floor already sits well below the
    // slowest closed-loop mode, but check a decade lower too
    let s_dc = sigma_max_at(&a_cl, &model.e, &c_cl, lo / 10.0);
    if s_dc > best.0 {
        best = (s_dc, lo / 10.0);
    }

    // golden-section refinement on log-frequency around the grid peak
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = (best.1 / (hi / lo).powf(1.0 / (n_pts - 1) as f64)).ln();
    let mut b = (best.1 * (hi / lo).powf(1.0 / (n_pts - 1) as f64)).ln();
    let eval = |lw: f64| sigma_max_at(&a_cl, &model.e, &c_cl, lw.exp());
    let mut c1 = b - phi * (b - a);
    let mut c2 = a + phi * (b - a);
    let mut f1 = eval(c1);
    let mut f2 = eval(c2);
    for _ in 0..60 {
        if f1 > f2 {
            b = c2;
            c2 = c1;
            f2 = f1;
            c1 = b - phi * (b - a);
            f1 = eval(c1);
        } else {
            a = c1;
            c1 = c2;
            f1 = f2;
            c2 = a + phi * (b - a);
            f2 = eval(c2);
        }
    }
    let refined = f1.max(f2);
    let (estimate, peak) = if refined > best.0 {
        (refined, (0.5 * (a + b)).exp())
    } else {
        best
    };
    NormCertificate {
        estimate,
        peak_freq: peak,
        gamma: gains.gamma,
        satisfied: estimate <= gains.gamma * (1.0 + 1e-3),
    }
}

// --- gain file I/O -------------------------------------------------------

pub fn gains_to_text(gains: &GainSet) -> String {
    let gm = DMatrix::from_element(1, 1, gains.gamma);
    matio::write_matrices(&[
        ("P", &gains.p),
        ("gamma", &gm),
        ("F", &gains.f),
        ("G", &gains.g),
        ("C_aug", &gains.c_aug),
    ])
}

pub fn gains_from_text(text: &str) -> Result<GainSet, SynthError> {
    let items = matio::parse_matrices(text)?;
    let p = matio::find_shaped(&items, "P", SYNTH_STATES, SYNTH_STATES)?.clone();
    let gm = matio::find_shaped(&items, "gamma", 1, 1)?;
    let f = matio::find_shaped(&items, "F", N_INPUTS, SYNTH_STATES)?.clone();
    let g = matio::find_shaped(&items, "G", N_INPUTS, N_INPUTS)?.clone();
    let c_aug = matio::find_shaped(&items, "C_aug", N_INPUTS, SYNTH_STATES)?.clone();
    let gamma = gm[(0, 0)];
    if gamma <= 0.0 {
        return Err(SynthError::BadGainFile(format!("gamma must be > 0, got {gamma}")));
    }
    Ok(GainSet {
        p,
        gamma,
        f,
        g,
        c_aug,
        closed_loop_eigs: Vec::new(),
    })
}
