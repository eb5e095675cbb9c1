use helictl::{hinf, linearize, params, scenario};

fn main() {
    let set = params::default_params();
    let sc = scenario::Scenario::paper_hover();
    let trim = linearize::find_trim(&set.heli, linearize::TrimTargets { heading: sc.start_heading }).unwrap();
    let model = linearize::jacobians(&trim, &set.heli, &set.ctrl, linearize::FdSteps::default()).unwrap();
    let (gains, sel) = hinf::design(&model, set.ctrl.gamma_override).unwrap();
    println!("gamma {:.4} (infimum {:.4})", gains.gamma, sel.infimum);

    let t0 = std::time::Instant::now();
    let log = scenario::run_scenario(&sc, &set.heli, &set.ctrl, &gains, &trim).unwrap();
    println!("run: {:?} rows {} outcome {:?}", t0.elapsed(), log.rows.len(), log.outcome);

    // hover window metrics vs reference (0,0,-0.65)
    let reference = scenario::Reference::plan(&sc);
    println!("total ref time {:.2}", reference.total_time);
    let hold_start = {
        // phase 0 hold start: transit + yaw ramp
        let r = (0..4000).map(|i| i as f64 * 0.01)
            .find(|&t| {
                let s = reference.sample(t);
                (s.pos.z + 0.65).abs() < 1e-9 && s.vel.norm() < 1e-9
            }).unwrap();
        r
    };
    println!("hold starts ~{hold_start:.2}");
    let win = (hold_start + 5.0, hold_start + 60.0);
    let mut sum2 = 0.0;
    let mut n = 0usize;
    let mut max_err: f64 = 0.0;
    let mut max_yaw_err: f64 = 0.0;
    let mut min_margin = f64::INFINITY;
    let psi_ref = (273.5f64 - 360.0).to_radians();
    for r in &log.rows {
        let m = r.margins.min();
        if m < min_margin { min_margin = m; }
        if r.t >= win.0 && r.t <= win.1 {
            let e = ((r.state.p_ned.x).powi(2) + (r.state.p_ned.y).powi(2) + (r.state.p_ned.z + 0.65).powi(2)).sqrt();
            sum2 += e * e;
            n += 1;
            max_err = max_err.max(e);
            max_yaw_err = max_yaw_err.max((r.state.euler.z - psi_ref).abs());
        }
    }
    println!("hover RMS {:.4} m (max {:.4}), max yaw err {:.3} deg, min margin {:.4}", (sum2 / n as f64).sqrt(), max_err, max_yaw_err.to_degrees(), min_margin);

    // yaw overshoot relative to the -86.5 deg step
    let step = psi_ref - 0.0;
    let mut overshoot: f64 = 0.0;
    for r in &log.rows {
        let frac = (r.state.euler.z - 0.0) / step;
        overshoot = overshoot.max(frac - 1.0);
    }
    println!("yaw overshoot {:.2}%", overshoot * 100.0);

    // saturation / clamp flags
    let sat = log.rows.iter().filter(|r| r.flags & scenario::FLAG_SERVO_SAT != 0).count();
    let clamp = log.rows.iter().filter(|r| r.flags & scenario::FLAG_TILT_CLAMP != 0).count();
    let landed = log.rows.iter().filter(|r| r.flags & scenario::FLAG_LANDED != 0).count();
    println!("flags: sat {sat} clamp {clamp} landed {landed}");
    let last = log.rows.last().unwrap();
    println!("final: t {:.2} pos {:?} alt {:.3}", last.t, last.state.p_ned.as_slice(), last.state.altitude());
}
