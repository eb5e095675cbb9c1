use helictl::{dynamics, hinf, linearize, params, scenario};
use nalgebra::Vector3;

fn main() {
    let set = params::default_params();
    let sc = scenario::Scenario::paper_hover();
    let trim = linearize::find_trim(&set.heli, linearize::TrimTargets { heading: sc.start_heading }).unwrap();
    let model = linearize::jacobians(&trim, &set.heli, &set.ctrl, linearize::FdSteps::default()).unwrap();
    let (gains, _sel) = hinf::design(&model, set.ctrl.gamma_override).unwrap();
    println!("F[2] = {:?}", (0..9).map(|j| (gains.f[(2,j)]*1000.0).round()/1000.0).collect::<Vec<_>>());

    // noise-free yaw ramp only, no climb, no outer loop
    let mut state = trim.state;
    state.p_ned = sc.start_pos;
    let x_trim = trim.x_synth();
    let dt = 0.002;
    let mut t = 0.0;
    for k in 0..4000 {
        let psi_ref = (-(30f64.to_radians()) * t).max((273.5f64 - 360.0).to_radians());
        let x_dev = [
            state.euler.x - x_trim[0],
            state.euler.y - x_trim[1],
            state.omega_b.x,
            state.omega_b.y,
            state.flap.x - x_trim[4],
            state.flap.y - x_trim[5],
            state.omega_b.z,
            0.0,
            state.euler.z,
        ];
        let r_dev = [0.0, 0.0, psi_ref, 0.0];
        let (u, _dped) = hinf::attitude_control_gyro(
            &x_dev, &r_dev, &gains, &trim.inputs, 1.0,
            set.heli.gyro_kp, set.heli.gyro_ki, set.heli.gyro_gain,
            state.omega_b.z, state.yaw_gyro.integrator, x_trim[7],
        );
        if k % 250 == 0 {
            println!(
                "t {:.2} psi {:.4} ref {:.4} r {:.4} dped {:.4} u_ped {:.3} u_lat {:.3} u_lon {:.3} u_col {:.4} alt {:.3}",
                t, state.euler.z, psi_ref, state.omega_b.z, state.yaw_gyro.cmd, u.ped, u.lat, u.lon, u.col, state.altitude()
            );
        }
        state = dynamics::step(&state, &u, &Vector3::zeros(), dt, &set.heli).unwrap();
        t += dt;
    }
}
