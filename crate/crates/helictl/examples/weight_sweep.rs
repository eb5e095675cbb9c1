use helictl::{hinf, linearize, params};
use nalgebra::DMatrix;

fn weights(w_att: f64, w_psi: f64, w_rate: f64, w_r: f64, w_dped: f64, wu: [f64; 4]) -> (DMatrix<f64>, DMatrix<f64>) {
    let rows = 11;
    let mut c = DMatrix::<f64>::zeros(rows, 9);
    c[(0, 0)] = w_att;
    c[(1, 1)] = w_att;
    c[(2, 8)] = w_psi;
    c[(3, 2)] = w_rate;
    c[(4, 3)] = w_rate;
    c[(5, 6)] = w_r;
    c[(6, 7)] = w_dped;
    let mut d = DMatrix::<f64>::zeros(rows, 4);
    for j in 0..4 {
        d[(7 + j, j)] = wu[j];
    }
    (c, d)
}

fn main() {
    let set = params::default_params();
    let trim = linearize::find_trim(&set.heli, linearize::TrimTargets::default()).unwrap();
    let base = linearize::jacobians(&trim, &set.heli, &set.ctrl, linearize::FdSteps::default()).unwrap();

    let combos: &[(f64, f64, f64, f64, f64, [f64; 4], f64)] = &[
        // w_att, w_psi, w_rate, w_r, w_dped, wu, gamma_mult
        (1.0, 2.0, 0.3, 0.05, 0.3, [0.3, 0.3, 1.0, 200.0], 1.05),
        (1.0, 2.0, 0.3, 0.05, 1.0, [0.3, 0.3, 1.0, 200.0], 1.05),
        (1.0, 2.0, 0.3, 0.05, 3.0, [0.3, 0.3, 1.0, 200.0], 1.05),
        (1.0, 2.0, 0.3, 0.05, 1.0, [0.3, 0.3, 1.0, 200.0], 2.0),
        (1.0, 3.0, 0.3, 0.05, 1.0, [0.3, 0.3, 1.0, 300.0], 1.05),
    ];
    for (w_att, w_psi, w_rate, w_r, w_dped, wu, mult) in combos {
        let mut model = base.clone();
        let (c, d) = weights(*w_att, *w_psi, *w_rate, *w_r, *w_dped, *wu);
        model.c = c;
        model.d = d;
        let sel = match hinf::select_gamma(&model) {
            Ok(s) => s,
            Err(e) => { println!("gamma failed: {e}"); continue; }
        };
        let gamma = sel.infimum * mult;
        let p = hinf::solve_game_riccati(&model.a, &model.b, &model.e, &model.c, &model.d, gamma).unwrap();
        let gains = match hinf::synthesize_gains(&model, &p, gamma) {
            Ok(g) => g,
            Err(e) => { println!("gains failed: {e}"); continue; }
        };
        let fastest = gains.closed_loop_eigs.iter().map(|e| e.re).fold(0.0f64, f64::min);
        let slowest = gains.closed_loop_eigs.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
        let cert = hinf::verify_hinf_norm(&model, &gains);

        // discrete-loop stability at the integrator rate (ZOH state feedback)
        let dt = 0.002;
        let a_cl_discrete = {
            let n = 9;
            // phi = expm(A dt), gamma_d = int expm(A s) ds B  (via augmented expm)
            let mut aug = DMatrix::<f64>::zeros(n + 4, n + 4);
            aug.view_mut((0, 0), (n, n)).copy_from(&model.a);
            aug.view_mut((0, n), (n, 4)).copy_from(&model.b);
            let e_aug = (aug * dt).exp();
            let phi = e_aug.view((0, 0), (n, n)).into_owned();
            let gam = e_aug.view((0, n), (n, 4)).into_owned();
            phi + gam * &gains.f
        };
        let disc_rho = a_cl_discrete
            .complex_eigenvalues()
            .iter()
            .fold(0.0f64, |m, e| m.max((e.re * e.re + e.im * e.im).sqrt()));

        // linear yaw step: x' = A_cl x + B G r, r = [0,0,psi*,0], psi* = -1.51 rad
        let a_cl = &model.a + &model.b * &gains.f;
        let bg = &model.b * &gains.g;
        let mut x = nalgebra::DVector::<f64>::zeros(9);
        let psi_star = -1.5097f64;
        let r = nalgebra::DVector::from_column_slice(&[0.0, 0.0, psi_star, 0.0]);
        let h = 0.001;
        let mut t = 0.0;
        let mut t90 = None;
        let mut overshoot: f64 = 0.0;
        let mut settle = None;
        while t < 40.0 {
            let dx1 = &a_cl * &x + &bg * &r;
            let dx2 = &a_cl * (&x + 0.5 * h * &dx1) + &bg * &r;
            let dx3 = &a_cl * (&x + 0.5 * h * &dx2) + &bg * &r;
            let dx4 = &a_cl * (&x + h * &dx3) + &bg * &r;
            x += h / 6.0 * (dx1 + 2.0 * dx2 + 2.0 * dx3 + dx4);
            t += h;
            let psi = x[8];
            let frac = psi / psi_star;
            if t90.is_none() && frac > 0.9 { t90 = Some(t); }
            overshoot = overshoot.max((frac - 1.0).max(0.0));
            if settle.is_none() && (frac - 1.0).abs() < 0.0232 { settle = Some(t); } // 2 deg of 86.5
            else if (frac - 1.0).abs() >= 0.0232 { settle = None; }
        }
        println!(
            "psi={w_psi} r={w_r} dped={w_dped} wu={wu:?} mult={mult}: g={gamma:.3} poles [{fastest:.1}, {slowest:.3}] disc_rho={disc_rho:.4} norm_ok={} t90={:?} ovs={:.1}% settle={:?}",
            cert.satisfied, t90.map(|v| (v * 10.0).round() / 10.0), overshoot * 100.0, settle.map(|v| (v * 10.0).round() / 10.0)
        );
    }
}
