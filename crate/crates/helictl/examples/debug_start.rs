use helictl::{hinf, linearize, params, scenario};

fn main() {
    let set = params::default_params();
    let sc = scenario::Scenario::paper_hover();
    let trim = linearize::find_trim(&set.heli, linearize::TrimTargets { heading: sc.start_heading }).unwrap();
    let model = linearize::jacobians(&trim, &set.heli, &set.ctrl, linearize::FdSteps::default()).unwrap();
    let (gains, _sel) = hinf::design(&model, set.ctrl.gamma_override).unwrap();
    println!("F = {:.4}", gains.f);
    println!("G = {:.4}", gains.g);
    println!("cl eigs: {:?}", gains.closed_loop_eigs.iter().map(|e| (e.re*100.0).round()/100.0).collect::<Vec<_>>());
    let log = scenario::run_scenario(&sc, &set.heli, &set.ctrl, &gains, &trim).unwrap();
    println!("outcome {:?}", log.outcome);
    for r in log.rows.iter().step_by(50) {
        println!(
            "t {:.2} alt {:.3} roll {:.3} pitch {:.3} yaw {:.3} r {:.3} dped {:.3} | cmd [{:.3} {:.3} {:.3} {:.3}] u [{:.3} {:.3} {:.3} {:.4}] e [{:.2} {:.2} {:.2}] fl {}",
            r.t, r.state.altitude(), r.state.euler.x, r.state.euler.y, r.state.euler.z,
            r.state.omega_b.z, r.state.yaw_gyro.cmd,
            r.r_out[0], r.r_out[1], r.r_out[2], r.r_out[3],
            r.u.lat, r.u.lon, r.u.ped, r.u.col,
            r.e.x, r.e.y, r.e.z, r.flags
        );
    }
}
