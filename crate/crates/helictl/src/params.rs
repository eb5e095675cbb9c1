//! Physical constants and controller gains, plus the plain-text config format.
//!
//! Everything that drives the model lives here: the vehicle constants, the
//! controller tuning, validation of both, and a provenance report that says
//! which values came from the config file and which fell back to built-in
//! defaults. All units are SI; angles are radians unless a key name says
//! otherwise.

use nalgebra::{DMatrix, Vector3};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("config validation failed: {0}")]
    Validation(String),
}

/// Vehicle constants. Field comments give the conventional symbol and unit.
#[derive(Debug, Clone, PartialEq)]
pub struct HelicopterParams {
    pub mass: f64,               // m, kg
    pub inertia: Vector3<f64>,   // diag(J_x, J_y, J_z), kg m^2
    pub gravity: f64,            // g, m/s^2
    pub rotor_radius: f64,       // R, m
    pub rotor_speed: f64,        // Omega_mr, rad/s
    pub lock_number: f64,        // gamma_mr
    pub flap_inertia: f64,       // I_beta, kg m^2
    pub blade_count: f64,        // b_mr
    pub chord: f64,              // c_mr, m
    pub lift_slope: f64,         // C_mr, 1/rad
    pub air_density: f64,        // rho, kg/m^3
    pub k_lat: f64,              // lateral cyclic linkage gain
    pub k_lon: f64,              // longitudinal cyclic linkage gain
    pub k_col: f64,              // collective linkage gain
    pub spring_constant: f64,    // k_beta, N m/rad
    pub hinge_offset: f64,       // e_mr, m
    pub hub_offset: f64,         // l_hg, hub to CG vertical distance, m
    pub tail_roll_arm: f64,      // l_htr, m
    pub tail_yaw_arm: f64,       // l_dtr, m
    pub drag_area: Vector3<f64>, // S_fus_{x,y,z}, m^2
    pub tail_thrust_gain: f64,   // k_tr, N per unit pedal command
    pub gyro_kp: f64,            // yaw gyro proportional gain
    pub gyro_ki: f64,            // yaw gyro integral gain
    pub gyro_gain: f64,          // K_a, pedal amplifier
    pub induced_vel_init: f64,   // v_im0, fixed-point starting guess, m/s
    pub torque_profile_div: f64, // divisor of the rotor profile-torque term
    pub torque_advance_factor: f64, // advance-speed factor in the same term
    pub servo_limit: f64,        // actuator saturation bound (commands clamped to +-limit)
}

/// Controller tuning: outer-loop envelope and gains, inner-loop weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    pub pos_gain: Vector3<f64>,   // m_x, m_y, m_z (1/s)
    pub decay_rate: Vector3<f64>, // c_x, c_y, c_z (1/s)
    pub tau_init: Vector3<f64>,   // envelope start values
    pub tau_final: Vector3<f64>,  // envelope floors
    pub err_gain: Vector3<f64>,   // k_x, k_y, k_z
    pub int_gain: Vector3<f64>,   // p_x, p_y, p_z
    pub weight_attitude: f64,
    pub weight_yaw: f64,
    pub weight_rate: f64,
    pub weight_yaw_rate: f64,
    pub weight_tail_cmd: f64,
    /// Input penalties per servo channel (lat, lon, ped, col). The collective
    /// channel carries a heavy weight: the position loop owns it, so the
    /// attitude loop must not spend it on yaw torque.
    pub weight_inputs: [f64; 4],
    /// Output weight C of the synthesis output h = C x + D u.
    pub output_weight_c: DMatrix<f64>,
    /// Input weight D of the same output; D^T D must be nonsingular.
    pub output_weight_d: DMatrix<f64>,
    pub gamma_override: Option<f64>,
    pub attitude_limit: f64, // rad, clamp on commanded tilt
    pub integral_limit: f64, // clamp on outer-loop integral accumulators
    pub col_bias: f64,       // hover thrust-direction magnitude in command units
    pub envelope_auto_init: bool,
    pub control_dt: f64, // outer/inner control period, s
}

/// Where a config value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    ConfigFile,
    Default,
}

/// One provenance entry per known key, in key order.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub entries: Vec<(String, f64, Source)>,
}

impl Provenance {
    pub fn defaulted_keys(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, _, s)| *s == Source::Default)
            .map(|(k, _, _)| k.as_str())
            .collect()
    }

    /// Plain-text report, one line per key.
    pub fn render(&self) -> String {
        let mut out = String::from("# parameter provenance\n");
        for (k, v, s) in &self.entries {
            let tag = match s {
                Source::ConfigFile => "config",
                Source::Default => "defaulted",
            };
            let _ = writeln!(out, "{k} = {v}  [{tag}]");
        }
        out
    }
}

/// Loaded parameter bundle.
#[derive(Debug, Clone)]
pub struct ParamSet {
    pub heli: HelicopterParams,
    pub ctrl: ControllerParams,
    pub provenance: Provenance,
}

/// Quantities derived from the vehicle constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    /// Rotor flapping time constant tau_mr, s.
    pub flap_time_constant: f64,
    /// Flapping cross-coupling A_bs (B_bs = -A_bs).
    pub flap_coupling: f64,
}

/// tau_mr = 48 R / (gamma Omega (3R - 8 e)); A_bs = 8 k_beta / (gamma Omega^2 I_beta).
pub fn derived_constants(p: &HelicopterParams) -> DerivedConstants {
    let tau = 48.0 * p.rotor_radius
        / (p.lock_number * p.rotor_speed * (3.0 * p.rotor_radius - 8.0 * p.hinge_offset));
    let a_bs = 8.0 * p.spring_constant
        / (p.lock_number * p.rotor_speed * p.rotor_speed * p.flap_inertia);
    DerivedConstants {
        flap_time_constant: tau,
        flap_coupling: a_bs,
    }
}

// --- defaults ---------------------------------------------------------

/// Key/default table for the vehicle section. The first block carries the
/// measured vehicle constants; the second block are engineering defaults for
/// quantities the measurement campaign did not cover.
const HELI_DEFAULTS: &[(&str, f64)] = &[
    ("m", 7.6),
    ("j_x", 0.19),
    ("j_y", 0.46),
    ("j_z", 0.31),
    ("g", 9.81),
    ("r", 0.82),
    ("omega_mr", 175.2),
    ("gamma_mr", 1.131),
    ("i_beta", 0.0913),
    ("b_mr", 2.0),
    ("c_mr", 0.06),
    ("k_lat", 0.53),
    ("k_lon", 0.54),
    ("k_col", 3.77),
    // engineering defaults
    ("lift_slope", 5.5),
    ("rho", 1.225),
    ("k_beta", 54.0),
    ("e_mr", 0.0),
    ("l_hg", 0.25),
    ("l_htr", 0.05),
    ("l_dtr", 120.0),
    ("s_fus_x", 0.08),
    ("s_fus_y", 0.20),
    ("s_fus_z", 0.03),
    ("k_tr", 8.0),
    ("gyro_kp", 0.012),
    ("gyro_ki", 0.05),
    ("gyro_ka", 1.0),
    ("v_im0", 3.8),
    ("torque_profile_div", 14.0),
    ("torque_advance_factor", 4.6),
    ("servo_limit", 1.0),
];

const CTRL_DEFAULTS: &[(&str, f64)] = &[
    ("m_x", 1.7),
    ("m_y", 1.6),
    ("m_z", 3.5),
    ("c_x", 1.1),
    ("c_y", 1.1),
    ("c_z", 1.1),
    ("tau0_x", 2.0),
    ("tau0_y", 2.0),
    ("tau0_z", 6.0),
    ("tauinf_x", 0.5),
    ("tauinf_y", 0.5),
    ("tauinf_z", 2.5),
    ("k_x", 0.16),
    ("k_y", 0.13),
    ("k_z", 0.06),
    ("p_x", 0.3),
    ("p_y", 0.4),
    ("p_z", 0.7),
    ("weight_attitude", 1.0),
    ("weight_yaw", 2.0),
    ("weight_rate", 0.3),
    ("weight_yaw_rate", 0.05),
    ("weight_tail_cmd", 1.0),
    ("w_u_lat", 0.3),
    ("w_u_lon", 0.3),
    ("w_u_ped", 1.0),
    ("w_u_col", 20000.0),
    ("attitude_limit", 0.35),
    ("integral_limit", 2.0),
    ("col_bias", 1.0),
    ("envelope_auto_init", 0.0),
    ("control_dt", 0.01),
];

/// State dimension of the attitude synthesis model.
pub const SYNTH_STATES: usize = 9;
/// Number of servo inputs.
pub const N_INPUTS: usize = 4;

/// Build the default output weights from the scalar weights:
/// C stacks attitude-angle, body-rate and tail-command rows over zero rows;
/// D puts the input weights on the zero rows so C^T D = 0 and D^T D is
/// nonsingular.
pub fn default_output_weights(
    w_att: f64,
    w_yaw: f64,
    w_rate: f64,
    w_yaw_rate: f64,
    w_tail: f64,
    w_inputs: &[f64; 4],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let rows = 11;
    let mut c = DMatrix::<f64>::zeros(rows, SYNTH_STATES);
    // state order: [phi, theta, p, q, a_s, b_s, r, dped, psi]
    c[(0, 0)] = w_att;
    c[(1, 1)] = w_att;
    c[(2, 8)] = w_yaw;
    c[(3, 2)] = w_rate;
    c[(4, 3)] = w_rate;
    c[(5, 6)] = w_yaw_rate;
    c[(6, 7)] = w_tail;
    let mut d = DMatrix::<f64>::zeros(rows, N_INPUTS);
    for j in 0..N_INPUTS {
        d[(7 + j, j)] = w_inputs[j];
    }
    (c, d)
}

// --- parsing ----------------------------------------------------------

/// Parse the flat `key = value` format: one pair per line, `#` starts a
/// comment, keys are case-insensitive. Returns pairs in file order.
pub fn parse_config_str(text: &str) -> Result<Vec<(String, f64)>, ParamError> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ParamError::Parse {
            line: idx + 1,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim().to_ascii_lowercase();
        if key.is_empty() {
            return Err(ParamError::Parse {
                line: idx + 1,
                msg: "empty key".into(),
            });
        }
        let value: f64 = value.trim().parse().map_err(|_| ParamError::Parse {
            line: idx + 1,
            msg: format!("`{}` is not a number", value.trim()),
        })?;
        if !value.is_finite() {
            return Err(ParamError::Parse {
                line: idx + 1,
                msg: format!("non-finite value for `{key}`"),
            });
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

/// Assemble a parameter set from parsed pairs; later duplicates win.
/// Unknown keys are rejected so typos cannot silently fall back to defaults.
pub fn build_params(pairs: &[(String, f64)]) -> Result<ParamSet, ParamError> {
    let mut map: BTreeMap<&str, f64> = BTreeMap::new();
    let known: Vec<&str> = HELI_DEFAULTS
        .iter()
        .chain(CTRL_DEFAULTS.iter())
        .map(|(k, _)| *k)
        .chain(std::iter::once("gamma_override"))
        .collect();
    for (k, v) in pairs {
        if !known.contains(&k.as_str()) {
            return Err(ParamError::Validation(format!("unknown key `{k}`")));
        }
        map.insert(k.as_str(), *v);
    }

    let mut provenance = Vec::new();
    let mut get = |key: &str, default: f64| -> f64 {
        match map.get(key) {
            Some(v) => {
                provenance.push((key.to_string(), *v, Source::ConfigFile));
                *v
            }
            None => {
                provenance.push((key.to_string(), default, Source::Default));
                default
            }
        }
    };

    let mut h = BTreeMap::new();
    for (k, d) in HELI_DEFAULTS {
        h.insert(*k, get(k, *d));
    }
    let mut c = BTreeMap::new();
    for (k, d) in CTRL_DEFAULTS {
        c.insert(*k, get(k, *d));
    }
    let gamma_override = map.get("gamma_override").copied();
    if let Some(g) = gamma_override {
        provenance.push(("gamma_override".into(), g, Source::ConfigFile));
    }

    let heli = HelicopterParams {
        mass: h["m"],
        inertia: Vector3::new(h["j_x"], h["j_y"], h["j_z"]),
        gravity: h["g"],
        rotor_radius: h["r"],
        rotor_speed: h["omega_mr"],
        lock_number: h["gamma_mr"],
        flap_inertia: h["i_beta"],
        blade_count: h["b_mr"],
        chord: h["c_mr"],
        lift_slope: h["lift_slope"],
        air_density: h["rho"],
        k_lat: h["k_lat"],
        k_lon: h["k_lon"],
        k_col: h["k_col"],
        spring_constant: h["k_beta"],
        hinge_offset: h["e_mr"],
        hub_offset: h["l_hg"],
        tail_roll_arm: h["l_htr"],
        tail_yaw_arm: h["l_dtr"],
        drag_area: Vector3::new(h["s_fus_x"], h["s_fus_y"], h["s_fus_z"]),
        tail_thrust_gain: h["k_tr"],
        gyro_kp: h["gyro_kp"],
        gyro_ki: h["gyro_ki"],
        gyro_gain: h["gyro_ka"],
        induced_vel_init: h["v_im0"],
        torque_profile_div: h["torque_profile_div"],
        torque_advance_factor: h["torque_advance_factor"],
        servo_limit: h["servo_limit"],
    };

    let w_inputs = [c["w_u_lat"], c["w_u_lon"], c["w_u_ped"], c["w_u_col"]];
    let (wc, wd) = default_output_weights(
        c["weight_attitude"],
        c["weight_yaw"],
        c["weight_rate"],
        c["weight_yaw_rate"],
        c["weight_tail_cmd"],
        &w_inputs,
    );
    let ctrl = ControllerParams {
        pos_gain: Vector3::new(c["m_x"], c["m_y"], c["m_z"]),
        decay_rate: Vector3::new(c["c_x"], c["c_y"], c["c_z"]),
        tau_init: Vector3::new(c["tau0_x"], c["tau0_y"], c["tau0_z"]),
        tau_final: Vector3::new(c["tauinf_x"], c["tauinf_y"], c["tauinf_z"]),
        err_gain: Vector3::new(c["k_x"], c["k_y"], c["k_z"]),
        int_gain: Vector3::new(c["p_x"], c["p_y"], c["p_z"]),
        weight_attitude: c["weight_attitude"],
        weight_yaw: c["weight_yaw"],
        weight_rate: c["weight_rate"],
        weight_yaw_rate: c["weight_yaw_rate"],
        weight_tail_cmd: c["weight_tail_cmd"],
        weight_inputs: w_inputs,
        output_weight_c: wc,
        output_weight_d: wd,
        gamma_override,
        attitude_limit: c["attitude_limit"],
        integral_limit: c["integral_limit"],
        col_bias: c["col_bias"],
        envelope_auto_init: c["envelope_auto_init"] != 0.0,
        control_dt: c["control_dt"],
    };

    validate(&heli, &ctrl)?;
    Ok(ParamSet {
        heli,
        ctrl,
        provenance: Provenance {
            entries: provenance,
        },
    })
}

/// Load and validate a parameter set from a config file.
pub fn load_params(path: impl AsRef<Path>) -> Result<ParamSet, ParamError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ParamError::Io {
        path: path.display().to_string(),
        source,
    })?;
    build_params(&parse_config_str(&text)?)
}

/// Default parameter set (no config file).
pub fn default_params() -> ParamSet {
    build_params(&[]).expect("built-in defaults must validate")
}

fn validate(h: &HelicopterParams, c: &ControllerParams) -> Result<(), ParamError> {
    let err = |msg: String| Err(ParamError::Validation(msg));
    if h.mass <= 0.0 {
        return err(format!("m must be > 0, got {}", h.mass));
    }
    for (axis, j) in [("j_x", h.inertia.x), ("j_y", h.inertia.y), ("j_z", h.inertia.z)] {
        if j <= 0.0 {
            return err(format!("{axis} must be > 0, got {j}"));
        }
    }
    if h.rotor_radius <= 0.0 {
        return err(format!("r must be > 0, got {}", h.rotor_radius));
    }
    if h.rotor_speed <= 0.0 {
        return err(format!("omega_mr must be > 0, got {}", h.rotor_speed));
    }
    if h.air_density <= 0.0 {
        return err(format!("rho must be > 0, got {}", h.air_density));
    }
    if h.flap_inertia <= 0.0 {
        return err(format!("i_beta must be > 0, got {}", h.flap_inertia));
    }
    if h.lock_number <= 0.0 {
        return err(format!("gamma_mr must be > 0, got {}", h.lock_number));
    }
    let e_max = 3.0 * h.rotor_radius / 8.0;
    if !(0.0..e_max).contains(&h.hinge_offset) {
        return err(format!(
            "hinge offset must satisfy 0 <= e_mr < 3R/8 = {e_max} (flap time constant pole), got {}",
            h.hinge_offset
        ));
    }
    if h.drag_area.min() < 0.0 {
        return err(format!("drag areas must be >= 0, got {:?}", h.drag_area));
    }
    if h.torque_profile_div == 0.0 {
        return err("torque_profile_div must be nonzero".into());
    }
    if h.servo_limit <= 0.0 {
        return err(format!("servo_limit must be > 0, got {}", h.servo_limit));
    }

    for i in 0..3 {
        if c.pos_gain[i] <= c.decay_rate[i] {
            return err(format!(
                "position gain must exceed decay rate per axis (m_i > c_i), axis {i}: {} <= {}",
                c.pos_gain[i], c.decay_rate[i]
            ));
        }
        if !(c.tau_final[i] > 0.0 && c.tau_init[i] > c.tau_final[i]) {
            return err(format!(
                "envelope must satisfy tau_0 > tau_inf > 0, axis {i}: tau0={} tauinf={}",
                c.tau_init[i], c.tau_final[i]
            ));
        }
    }
    let dtd = c.output_weight_d.transpose() * &c.output_weight_d;
    let n = dtd.nrows();
    if dtd.clone().lu().try_inverse().is_none() || dtd.determinant().abs() < 1e-300 {
        return err(format!("D^T D ({n}x{n}) must be nonsingular"));
    }
    if let Some(g) = c.gamma_override {
        if g <= 0.0 {
            return err(format!("gamma_override must be > 0, got {g}"));
        }
    }
    if c.control_dt <= 0.0 {
        return err(format!("control_dt must be > 0, got {}", c.control_dt));
    }
    if c.attitude_limit <= 0.0 {
        return err(format!("attitude_limit must be > 0, got {}", c.attitude_limit));
    }
    Ok(())
}

// --- serialization ----------------------------------------------------

/// Render a parameter set back to the config format. Values print in f64
/// round-trip form, so save/load reproduces them bit for bit.
pub fn to_config_string(h: &HelicopterParams, c: &ControllerParams) -> String {
    let mut out = String::from("# helictl configuration (SI units)\n");
    let heli_vals: &[(&str, f64)] = &[
        ("m", h.mass),
        ("j_x", h.inertia.x),
        ("j_y", h.inertia.y),
        ("j_z", h.inertia.z),
        ("g", h.gravity),
        ("r", h.rotor_radius),
        ("omega_mr", h.rotor_speed),
        ("gamma_mr", h.lock_number),
        ("i_beta", h.flap_inertia),
        ("b_mr", h.blade_count),
        ("c_mr", h.chord),
        ("k_lat", h.k_lat),
        ("k_lon", h.k_lon),
        ("k_col", h.k_col),
        ("lift_slope", h.lift_slope),
        ("rho", h.air_density),
        ("k_beta", h.spring_constant),
        ("e_mr", h.hinge_offset),
        ("l_hg", h.hub_offset),
        ("l_htr", h.tail_roll_arm),
        ("l_dtr", h.tail_yaw_arm),
        ("s_fus_x", h.drag_area.x),
        ("s_fus_y", h.drag_area.y),
        ("s_fus_z", h.drag_area.z),
        ("k_tr", h.tail_thrust_gain),
        ("gyro_kp", h.gyro_kp),
        ("gyro_ki", h.gyro_ki),
        ("gyro_ka", h.gyro_gain),
        ("v_im0", h.induced_vel_init),
        ("torque_profile_div", h.torque_profile_div),
        ("torque_advance_factor", h.torque_advance_factor),
        ("servo_limit", h.servo_limit),
    ];
    for (k, v) in heli_vals {
        let _ = writeln!(out, "{k} = {v}");
    }
    out.push('\n');
    let ctrl_vals: &[(&str, f64)] = &[
        ("m_x", c.pos_gain.x),
        ("m_y", c.pos_gain.y),
        ("m_z", c.pos_gain.z),
        ("c_x", c.decay_rate.x),
        ("c_y", c.decay_rate.y),
        ("c_z", c.decay_rate.z),
        ("tau0_x", c.tau_init.x),
        ("tau0_y", c.tau_init.y),
        ("tau0_z", c.tau_init.z),
        ("tauinf_x", c.tau_final.x),
        ("tauinf_y", c.tau_final.y),
        ("tauinf_z", c.tau_final.z),
        ("k_x", c.err_gain.x),
        ("k_y", c.err_gain.y),
        ("k_z", c.err_gain.z),
        ("p_x", c.int_gain.x),
        ("p_y", c.int_gain.y),
        ("p_z", c.int_gain.z),
        ("weight_attitude", c.weight_attitude),
        ("weight_yaw", c.weight_yaw),
        ("weight_rate", c.weight_rate),
        ("weight_yaw_rate", c.weight_yaw_rate),
        ("weight_tail_cmd", c.weight_tail_cmd),
        ("w_u_lat", c.weight_inputs[0]),
        ("w_u_lon", c.weight_inputs[1]),
        ("w_u_ped", c.weight_inputs[2]),
        ("w_u_col", c.weight_inputs[3]),
        ("attitude_limit", c.attitude_limit),
        ("integral_limit", c.integral_limit),
        ("col_bias", c.col_bias),
        ("envelope_auto_init", if c.envelope_auto_init { 1.0 } else { 0.0 }),
        ("control_dt", c.control_dt),
    ];
    for (k, v) in ctrl_vals {
        let _ = writeln!(out, "{k} = {v}");
    }
    if let Some(g) = c.gamma_override {
        let _ = writeln!(out, "gamma_override = {g}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_carry_table_values() {
        let set = default_params();
        assert_eq!(set.heli.mass, 7.6);
        assert_eq!(set.heli.inertia, Vector3::new(0.19, 0.46, 0.31));
        assert_eq!(set.heli.rotor_speed, 175.2);
        assert_eq!(set.ctrl.pos_gain, Vector3::new(1.7, 1.6, 3.5));
        assert_eq!(set.ctrl.err_gain, Vector3::new(0.16, 0.13, 0.06));
    }

    #[test]
    fn config_values_override_defaults() {
        let text = "m = 7.6\nJ_x = 0.19\nJ_y=0.46\n j_z = 0.31 # kg m^2\n";
        let set = build_params(&parse_config_str(text).unwrap()).unwrap();
        assert_eq!(set.heli.mass, 7.6);
        assert_eq!(set.heli.inertia, Vector3::new(0.19, 0.46, 0.31));
        // everything else fell back
        let defaulted = set.provenance.defaulted_keys();
        assert!(defaulted.contains(&"rho"));
        assert!(!defaulted.contains(&"m"));
    }

    #[test]
    fn omitted_density_defaults_and_is_flagged() {
        let set = build_params(&parse_config_str("m = 8.0\n").unwrap()).unwrap();
        assert_eq!(set.heli.air_density, 1.225);
        let report = set.provenance.render();
        assert!(report.contains("rho = 1.225  [defaulted]"));
        assert!(report.contains("m = 8  [config]"));
    }

    #[test]
    fn hinge_offset_at_radius_names_the_invariant() {
        let err = build_params(&parse_config_str("e_mr = 0.82\n").unwrap()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("e_mr < 3R/8"), "message was: {msg}");
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse_config_str("m 7.6\n").is_err());
        assert!(parse_config_str("m = seven\n").is_err());
        assert!(parse_config_str("m = inf\n").is_err());
        assert!(build_params(&parse_config_str("mass_typo = 1\n").unwrap()).is_err());
    }

    #[test]
    fn flap_time_constant_matches_direct_evaluation() {
        let set = default_params();
        let d = derived_constants(&set.heli);
        // 48*0.82 / (1.131*175.2*3*0.82), hinge offset zero
        let expected = 39.36 / (1.131 * 175.2 * 2.46);
        assert!((d.flap_time_constant - expected).abs() < 1e-15);
        assert!((d.flap_time_constant - 0.080_746_419_905_607_44).abs() < 1e-12);
    }

    #[test]
    fn zero_spring_constant_kills_coupling() {
        let mut set = default_params();
        set.heli.spring_constant = 0.0;
        let d = derived_constants(&set.heli);
        assert_eq!(d.flap_coupling, 0.0);
    }

    #[test]
    fn flap_time_constant_monotone_in_hinge_offset() {
        let set = default_params();
        let mut prev = 0.0;
        let e_max = 3.0 * set.heli.rotor_radius / 8.0;
        for i in 0..50 {
            let mut h = set.heli.clone();
            h.hinge_offset = e_max * 0.999 * (i as f64) / 50.0;
            let tau = derived_constants(&h).flap_time_constant;
            assert!(tau > prev, "tau must increase with hinge offset");
            prev = tau;
        }
    }

    #[test]
    fn config_round_trip_is_bitwise() {
        let text = "m = 7.603\nrho = 1.1937\nk_beta = 53.77001\ntau0_x = 2.25\n";
        let a = build_params(&parse_config_str(text).unwrap()).unwrap();
        let rendered = to_config_string(&a.heli, &a.ctrl);
        let b = build_params(&parse_config_str(&rendered).unwrap()).unwrap();
        assert_eq!(a.heli, b.heli);
        assert_eq!(a.ctrl, b.ctrl);
    }

    #[test]
    fn envelope_invariants_enforced() {
        // m_i > c_i
        let err = build_params(&parse_config_str("m_x = 0.5\n").unwrap()).unwrap_err();
        assert!(err.to_string().contains("m_i > c_i"));
        // tau ordering
        let err = build_params(&parse_config_str("tauinf_x = 3.0\n").unwrap()).unwrap_err();
        assert!(err.to_string().contains("tau_0 > tau_inf"));
    }

    #[test]
    fn dtd_nonsingular_enforced() {
        let err = build_params(&parse_config_str("w_u_ped = 0.0\n").unwrap()).unwrap_err();
        assert!(err.to_string().contains("nonsingular"));
    }
}
