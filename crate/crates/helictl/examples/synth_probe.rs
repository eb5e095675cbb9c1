use helictl::{hinf, linearize, params};

fn main() {
    let set = params::default_params();
    let trim = linearize::find_trim(&set.heli, linearize::TrimTargets::default()).unwrap();
    println!("trim: residual {:.2e}", trim.residual);
    println!("  euler = {:?}", trim.state.euler.as_slice());
    println!("  flap  = {:?}", trim.state.flap.as_slice());
    println!("  u     = {:?}", trim.inputs);
    println!("  dped  = {}", trim.state.yaw_gyro.cmd);

    let model = linearize::jacobians(&trim, &set.heli, &set.ctrl, linearize::FdSteps::default()).unwrap();
    println!("warnings: {}", model.warnings.len());
    for w in model.warnings.iter().take(8) { println!("  warn: {w}"); }
    println!("A eigs:");
    for e in model.a.clone().complex_eigenvalues().iter() {
        println!("  {:.4} + {:.4}i", e.re, e.im);
    }
    println!("E norm: {:.4e}", model.e.norm());
    println!("E = {:.4}", model.e);

    let t0 = std::time::Instant::now();
    let sel = hinf::select_gamma(&model).unwrap();
    println!("gamma: {} (infimum {}) in {:?}", sel.gamma, sel.infimum, t0.elapsed());
    println!("  eq25 open-loop reading: {:?}", sel.formula_open_loop);
    println!("  eq25 closed-loop reading: {:?}", sel.formula_closed_loop);

    let p = hinf::solve_game_riccati(&model.a, &model.b, &model.e, &model.c, &model.d, sel.gamma).unwrap();
    let gains = hinf::synthesize_gains(&model, &p, sel.gamma).unwrap();
    println!("closed-loop eigs:");
    for e in &gains.closed_loop_eigs {
        println!("  {:.4} + {:.4}i", e.re, e.im);
    }
    let cert = hinf::verify_hinf_norm(&model, &gains);
    println!("norm estimate {:.6} at {:.3} rad/s, gamma {:.6}, ok={}", cert.estimate, cert.peak_freq, cert.gamma, cert.satisfied);
    println!("F = {:.4}", gains.f);
    println!("G = {:.4}", gains.g);
}
