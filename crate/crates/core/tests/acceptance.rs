//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use bubble_reduction_core::expansion::{
    b4_limit, critical_mass, cross_check_constants, default_b4_sequence, energy_components, interaction_sum,
    predicted_gap,
};
use bubble_reduction_core::geometry::{reflect, rotate};
use bubble_reduction_core::linearized::{interior_ray_points, iterate_correction, solve_linear, CollocationSystem};
use bubble_reduction_core::quadrature::{
    build_sector_grid, build_sector_grid_with, integrate_boundary, sample_points, verify_appendix_estimates,
    GridOptions,
};
use bubble_reduction_core::special::{linear_fit, riemann_zeta};
use bubble_reduction_core::{
    assemble, build_spikes, compute_constants, energy_exact, find_critical_point, kazdan_warner, lambda0, mu_of,
    norm_dstar, positivity_check, residual_eval, HalfSpacePoint, KProfile, ProblemParams, SpikeConfig,
};

type Outcome = Result<String, String>;

fn check(condition: bool, detail: String) -> Outcome {
    if condition {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn sci(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
}

fn defaults() -> ProblemParams {
    ProblemParams::default()
}

fn critical_config(params: &ProblemParams, k: usize) -> Result<SpikeConfig, String> {
    let constants = compute_constants(params).map_err(fail)?;
    let report = find_critical_point(&constants, params, k).map_err(fail)?;
    build_spikes(params, k, report.r_star, report.lambda_star).map_err(fail)
}

fn criterion_1() -> Outcome {
    let mut details = Vec::new();
    for n in [5, 6] {
        let params = defaults().with_dimension(n, 2.0).map_err(fail)?;
        let checks = cross_check_constants(&params, 1_000_000, 20_240_601).map_err(fail)?;
        let worst = checks.iter().map(|c| c.z_score).fold(0.0, f64::max);
        if worst > 3.0 {
            return Err(format!("N={n}: largest z-score {worst:.3} exceeds 3"));
        }
        details.push(format!("N={n} max z {worst:.2}"));
    }
    let constants = compute_constants(&defaults()).map_err(fail)?;
    let pi2 = PI * PI;
    let a_err = (constants.a_n - 13.5 * pi2).abs() / (13.5 * pi2);
    let c3_err = (constants.c3n - 108.0 * pi2).abs() / (108.0 * pi2);
    details.push(format!("A_N rel {a_err:.1e}, C3N rel {c3_err:.1e}"));
    check(a_err < 1e-10 && c3_err < 1e-10, details.join("; "))
}

fn criterion_2() -> Outcome {
    let params = defaults();
    let profile = KProfile::local_max(&params);
    let mut log_mu = Vec::new();
    let mut log_r = Vec::new();
    for k in [8, 16, 32, 64] {
        let config = critical_config(&params, k)?;
        let grid = build_sector_grid(&config, 1).map_err(fail)?;
        let samples: Vec<(HalfSpacePoint, f64)> = sample_points(&grid, &config, 16)
            .into_iter()
            .map(|z| {
                let p = HalfSpacePoint::boundary(z);
                let r = residual_eval(&config, &profile, &p);
                (p, r)
            })
            .collect();
        let value = norm_dstar(&config, &params, &samples).map_err(fail)?;
        log_mu.push(config.mu().ln());
        log_r.push(value.ln());
    }
    let (slope, _, _) = linear_fit(&log_mu, &log_r);
    check(slope <= -0.85, format!("slope {slope:.4} (limit -0.85)"))
}

fn criterion_3() -> Outcome {
    let sequence = default_b4_sequence();
    let b4 = b4_limit(5, &sequence).map_err(fail)?;
    let target = riemann_zeta(3.0) / (4.0 * PI.powi(3));
    let rel = (b4 - target).abs() / target;
    let (log_k, log_e): (Vec<f64>, Vec<f64>) = sequence
        .iter()
        .map(|&k| {
            let kf = k as f64;
            (kf.ln(), (interaction_sum(k, 1.0, 5) / kf.powi(3) - b4).abs().ln())
        })
        .unzip();
    let (slope, _, _) = linear_fit(&log_k, &log_e);
    let exponent = -slope;
    check(
        rel < 1e-6 && exponent >= 1.7,
        format!("B4 rel error {rel:.2e} (limit 1e-6), correction exponent {exponent:.3} (limit 1.7)"),
    )
}

fn criterion_4() -> Outcome {
    let params = defaults();
    let constants = compute_constants(&params).map_err(fail)?;
    let l0 = lambda0(&constants, &params);
    let mut last = f64::INFINITY;
    let mut gaps = Vec::new();
    for k in [16, 64, 256] {
        let report = find_critical_point(&constants, &params, k).map_err(fail)?;
        let mu = mu_of(&params, k);
        let gap = (report.lambda_star - l0).abs();
        if !report.converged {
            return Err(format!("k={k}: Newton did not converge"));
        }
        if (report.r_star - mu * params.r0()).abs() > mu.powf(-0.1) {
            return Err(format!("k={k}: r* outside the mu^-0.1 window"));
        }
        if report.lambda_star < 0.5 * l0 || report.lambda_star > 2.0 * l0 {
            return Err(format!(
                "k={k}: lambda* = {} outside [lambda0/2, 2 lambda0]",
                report.lambda_star
            ));
        }
        if gap >= last {
            return Err(format!("k={k}: |lambda* - lambda0| = {gap:.3e} did not decrease"));
        }
        last = gap;
        gaps.push(format!("{gap:.2e}"));
    }
    Ok(format!("|lambda* - lambda0| = {}", gaps.join(", ")))
}

fn criterion_5() -> Outcome {
    let params = defaults();
    let constants = compute_constants(&params).map_err(fail)?;
    let single = build_spikes(&params, 1, 1.0, 1.0).map_err(fail)?;
    let grid = build_sector_grid(&single, 1).map_err(fail)?;
    let energy = energy_exact(&constants, &single, &KProfile::constant(1.0).map_err(fail)?, &grid).map_err(fail)?;
    let single_rel = (energy - constants.a).abs() / constants.a;
    if single_rel >= 5e-3 {
        return Err(format!("single bubble energy off A by {single_rel:.3e}"));
    }
    let profile = KProfile::local_max(&params);
    let mut ratios = Vec::new();
    for k in [8, 16, 32] {
        let config = critical_config(&params, k)?;
        let grid = build_sector_grid(&config, 1).map_err(fail)?;
        let parts = energy_components(&constants, &config, &profile, &grid).map_err(fail)?;
        let predicted = predicted_gap(&constants, &params, k, config.r(), config.lambda());
        ratios.push(parts.gap_per_spike / predicted);
    }
    let last = *ratios.last().expect("three ratios");
    check(
        (last - 1.0).abs() <= 0.2,
        format!("single bubble rel {single_rel:.2e}; gap ratios {ratios:.4?}"),
    )
}

fn criterion_6() -> Outcome {
    let params = defaults();
    let single = build_spikes(&params, 1, params.r0(), 1.0).map_err(fail)?;
    let grid = build_sector_grid(&single, 1).map_err(fail)?;
    let flat = kazdan_warner(&single, &KProfile::constant(1.0).map_err(fail)?, &grid, None).map_err(fail)?;
    let mass = critical_mass(&single, &grid, None).map_err(fail)?;
    let monotone = kazdan_warner(&single, &KProfile::monotone(0.5).map_err(fail)?, &grid, None).map_err(fail)? / mass;
    if flat.abs() >= 1e-10 {
        return Err(format!("constant-K integral {flat:.3e}"));
    }
    if monotone.abs() <= 1e-3 {
        return Err(format!("monotone normalised integral {monotone:.3e}"));
    }
    let profile = KProfile::local_max(&params);
    let mut ratios = Vec::new();
    for k in [8, 16] {
        let config = critical_config(&params, k)?;
        let grid = build_sector_grid_with(&config, &GridOptions::collocation(1).map_err(fail)?).map_err(fail)?;
        let system = assemble(&params, &config, &profile, &grid).map_err(fail)?;
        let solution = iterate_correction(&system, 25, 1e-6).map_err(fail)?;
        let phi = Some(solution.phi_values.as_slice());
        let corrected = kazdan_warner(&config, &profile, &grid, phi).map_err(fail)?
            / critical_mass(&config, &grid, phi).map_err(fail)?;
        let shifted_r = config.mu() * (params.r0() + params.delta() / 2.0);
        let shifted = config.with_r_lambda(shifted_r, config.lambda()).map_err(fail)?;
        let shifted_grid = build_sector_grid(&shifted, 1).map_err(fail)?;
        let off = kazdan_warner(&shifted, &profile, &shifted_grid, None).map_err(fail)?
            / critical_mass(&shifted, &shifted_grid, None).map_err(fail)?;
        ratios.push(off.abs() / corrected.abs());
    }
    let worst = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    check(
        worst >= 10.0,
        format!(
            "constant {flat:.1e}, monotone {monotone:.3e}, shifted/corrected ratios {}",
            sci(&ratios)
        ),
    )
}

fn linear_checks(system: &CollocationSystem) -> Result<(), String> {
    let zero = solve_linear(system, &vec![0.0; system.grid().len()]).map_err(fail)?;
    if zero.phi_values.iter().any(|v| *v != 0.0) || zero.c1 != 0.0 || zero.c2 != 0.0 {
        return Err("zero right-hand side gave a nonzero solution".into());
    }
    let h = system.residual_values();
    let h2: Vec<f64> = h.iter().map(|v| 2.0 * v).collect();
    let a = solve_linear(system, &h).map_err(fail)?;
    let b = solve_linear(system, &h2).map_err(fail)?;
    let scale = a.phi_values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let defect = a
        .phi_values
        .iter()
        .zip(&b.phi_values)
        .fold(0.0f64, |m, (x, y)| m.max((2.0 * x - y).abs()));
    if defect >= 1e-12 * scale {
        return Err(format!("linearity defect {:.3e}", defect / scale));
    }
    if a.orthogonality.iter().any(|v| *v >= 1e-8) {
        return Err(format!("orthogonality residuals {:?}", a.orthogonality));
    }
    Ok(())
}

fn criterion_7() -> Outcome {
    let params = defaults();
    let profile = KProfile::local_max(&params);
    let mut norms = Vec::new();
    let mut factors = Vec::new();
    for k in [8, 16] {
        let config = critical_config(&params, k)?;
        let grid = build_sector_grid_with(&config, &GridOptions::collocation(1).map_err(fail)?).map_err(fail)?;
        let system = assemble(&params, &config, &profile, &grid).map_err(fail)?;
        linear_checks(&system).map_err(|e| format!("k={k}: {e}"))?;
        let solution = iterate_correction(&system, 25, 1e-6).map_err(fail)?;
        let factor = solution.contraction_factors.iter().copied().fold(0.0, f64::max);
        if !solution.converged || factor >= 0.5 {
            return Err(format!(
                "k={k}: converged {} with contraction factor {factor:.3e}",
                solution.converged
            ));
        }
        if solution.orthogonality.iter().any(|v| *v >= 1e-8) {
            return Err(format!("k={k}: orthogonality {:?}", solution.orthogonality));
        }
        let interior = interior_ray_points(&config, grid.annuli().cutoff, 16).map_err(fail)?;
        let positivity = positivity_check(&config, &grid, &solution, &interior).map_err(fail)?;
        if !positivity.positive {
            return Err(format!("k={k}: W + phi reaches {:.3e}", positivity.minimum));
        }
        norms.push(solution.norm_star_value);
        factors.push(factor);
    }
    check(
        norms[1] < norms[0],
        format!("|phi|* = {}, contraction factors {}", sci(&norms), sci(&factors)),
    )
}

fn laplacian(config: &SpikeConfig, y: &[f64], h: f64, step: f64) -> (f64, f64) {
    let centre = config.ansatz(y, h);
    let mut lap = 0.0;
    let mut shifted = y.to_vec();
    for i in 0..y.len() {
        shifted[i] = y[i] + step;
        let up = config.ansatz(&shifted, h);
        shifted[i] = y[i] - step;
        let down = config.ansatz(&shifted, h);
        shifted[i] = y[i];
        lap += up + down - 2.0 * centre;
    }
    lap += config.ansatz(y, h + step) + config.ansatz(y, h - step) - 2.0 * centre;
    (lap / (step * step), centre / (h * h).max(1e-2))
}

fn criterion_8() -> Outcome {
    let params = defaults();
    let q = params.two_sharp() - 1.0;
    let cluster = build_spikes(&params, 6, 4.0, 1.1).map_err(fail)?;
    let mut state = 7u64;
    let mut next = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..200 {
        let y: Vec<f64> = (0..4).map(|_| 12.0 * next() - 6.0).collect();
        let h = 0.2 + 3.0 * next();
        let (lap, scale) = laplacian(&cluster, &y, h, 1e-3);
        if lap.abs() >= 1e-4 * scale {
            return Err(format!("harmonicity defect {lap:.3e} at height {h}"));
        }
    }
    let single = build_spikes(&params, 1, 1.5, 0.9).map_err(fail)?;
    let eps = 1e-5;
    for y in [
        vec![1.0, 0.2, 0.0, 0.0],
        vec![2.5, 1.0, -0.5, 0.3],
        vec![-1.0, 2.0, 1.0, 1.0],
    ] {
        let u = single.ansatz(&y, 0.0);
        let flux = -(single.ansatz(&y, eps) - single.ansatz(&y, -eps)) / (2.0 * eps);
        if (flux - u.powf(q)).abs() >= 1e-6 * u.powf(q) {
            return Err(format!("boundary flux defect at {y:?}"));
        }
        for j in 1..=2 {
            let z = single.kernel(0, j, &y, 0.0);
            let kflux = -(single.kernel(0, j, &y, eps) - single.kernel(0, j, &y, -eps)) / (2.0 * eps);
            let target = q * u.powf(q - 1.0) * z;
            if (kflux - target).abs() >= 1e-6 * target.abs().max(1e-3 * u.powf(q)) {
                return Err(format!("linearized kernel defect j={j} at {y:?}"));
            }
        }
    }
    let grid = build_sector_grid(&single, 1).map_err(fail)?;
    let weight = |z: &[f64]| single.ansatz(z, 0.0).powf(q - 1.0);
    let cross = integrate_boundary(&grid, |z| {
        weight(z) * single.kernel(0, 1, z, 0.0) * single.kernel(0, 2, z, 0.0)
    })
    .map_err(fail)?;
    let d1 = integrate_boundary(&grid, |z| weight(z) * single.kernel(0, 1, z, 0.0).powi(2)).map_err(fail)?;
    let d2 = integrate_boundary(&grid, |z| weight(z) * single.kernel(0, 2, z, 0.0).powi(2)).map_err(fail)?;
    let orthogonality = cross.abs() / (d1 * d2).sqrt();
    if orthogonality >= 1e-8 {
        return Err(format!("Z-orthogonality defect {orthogonality:.3e}"));
    }
    let k = 8;
    let config = critical_config(&params, k)?;
    let profile = KProfile::local_max(&params);
    let scale = config.r();
    for _ in 0..200 {
        let y: Vec<f64> = (0..4).map(|_| scale * (3.0 * next() - 1.5)).collect();
        let w = config.ansatz(&y, 0.0);
        let r = residual_eval(&config, &profile, &HalfSpacePoint::boundary(y.clone()));
        for image in [rotate(&y, k, 1), rotate(&y, k, 5), reflect(&y)] {
            let wi = config.ansatz(&image, 0.0);
            let ri = residual_eval(&config, &profile, &HalfSpacePoint::boundary(image));
            if (w - wi).abs() > 1e-12 * w || (r - ri).abs() > 1e-10 * r.abs().max(1e-300) + 1e-13 * w.powf(q) {
                return Err(format!("symmetry defect at {y:?}"));
            }
        }
    }
    let appendix = verify_appendix_estimates(&params, &config, 1000, 5).map_err(fail)?;
    let unstable: Vec<String> = appendix
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} {:?}", c.lemma, c.exponents))
        .collect();
    check(
        appendix.passed,
        if unstable.is_empty() {
            format!(
                "Z-orthogonality {orthogonality:.1e}; {} appendix constants stable",
                appendix.checks.len()
            )
        } else {
            format!("unstable appendix constants: {}", unstable.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Outcome); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let mut failed = 0;
    for (n, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS ({secs:.1} s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL ({secs:.1} s) {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
