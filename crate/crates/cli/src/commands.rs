//! The seven commands. Each one fans out over `k_list` and assembles its
//! table in ascending `k` order.

use std::time::Instant;

use bubble_reduction_core::expansion::{
    critical_mass, cross_check_constants, energy_components, find_critical_point_with, predicted_gap,
    CriticalPointOptions, InteractionForm,
};
use bubble_reduction_core::linearized::{
    assemble, interior_ray_points, iterate_correction, positivity_check, CorrectionSolution,
};
use bubble_reduction_core::quadrature::{
    build_sector_grid, build_sector_grid_with, sample_points, verify_appendix_estimates, GridOptions,
};
use bubble_reduction_core::special::linear_fit;
use bubble_reduction_core::{
    build_spikes, compute_constants, f_asym, kazdan_warner, lambda0, mu_of, norm_dstar, residual_eval, Error,
    ExpansionConstants, HalfSpacePoint, KProfile, SpikeConfig,
};
use rayon::prelude::*;
use serde_json::Value;

use crate::config::{ProfileSpec, RunConfig};
use crate::error::CliError;
use crate::report::{num, Fit, RunReport, Timing};

/// Command names accepted on the command line.
pub const COMMANDS: [&str; 7] = [
    "constants",
    "residual-scan",
    "critical-point",
    "energy-compare",
    "kw-check",
    "correct",
    "lemma-check",
];

/// Runs `command` on a validated configuration.
pub fn run(command: &str, config: &RunConfig) -> Result<(RunReport, Timing), CliError> {
    config.validate()?;
    let start = Instant::now();
    let (report, stages) = match command {
        "constants" => cmd_constants(config)?,
        "residual-scan" => cmd_residual_scan(config)?,
        "critical-point" => cmd_critical_point(config)?,
        "energy-compare" => cmd_energy_compare(config)?,
        "kw-check" => cmd_kw_check(config)?,
        "correct" => cmd_correct(config)?,
        "lemma-check" => cmd_lemma_check(config)?,
        other => return Err(CliError::Config(format!("unknown command {other}"))),
    };
    let timing = Timing {
        command: command.to_string(),
        total_seconds: start.elapsed().as_secs_f64(),
        stages,
    };
    Ok((report, timing))
}

type Stages = Vec<(String, f64)>;

fn critical_options(config: &RunConfig) -> CriticalPointOptions {
    CriticalPointOptions {
        theta_bar: config.options.theta_bar,
        k_min: config.options.k_min,
        ..CriticalPointOptions::default()
    }
}

/// Where the bubbles of one row sit.
struct Placement {
    config: SpikeConfig,
    label: &'static str,
}

/// The reduced critical point for the local-maximum profile when `k`
/// reaches `k_min`, and the balance point `(μr₀, Λ₀)` otherwise.
fn place(run: &RunConfig, constants: &ExpansionConstants, k: usize) -> Result<Placement, CliError> {
    let params = &run.params;
    if run.profile == ProfileSpec::LocalMax && k >= run.options.k_min {
        let report = find_critical_point_with(constants, params, k, &critical_options(run))?;
        let config = build_spikes(params, k, report.r_star, report.lambda_star)?;
        return Ok(Placement {
            config,
            label: "critical",
        });
    }
    let config = build_spikes(params, k, mu_of(params, k) * params.r0(), lambda0(constants, params))?;
    Ok(Placement {
        config,
        label: "balance",
    })
}

fn timed<T>(stages: &mut Stages, results: Vec<(T, String, f64)>) -> Vec<T> {
    results
        .into_iter()
        .map(|(value, name, secs)| {
            stages.push((name, secs));
            value
        })
        .collect()
}

/// Runs `f` for every `k` concurrently, returning results in `k_list` order.
fn fan_out<T, F>(run: &RunConfig, stages: &mut Stages, f: F) -> Result<Vec<T>, CliError>
where
    T: Send,
    F: Fn(usize) -> Result<T, CliError> + Sync,
{
    let results: Vec<(T, String, f64)> = run
        .k_list
        .par_iter()
        .map(|&k| {
            let t = Instant::now();
            let v = f(k)?;
            Ok((v, format!("k={k}"), t.elapsed().as_secs_f64()))
        })
        .collect::<Result<_, CliError>>()?;
    Ok(timed(stages, results))
}

fn fit_log_log(name: &str, x: &[f64], y: &[f64]) -> Option<Fit> {
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pairs.len() < 2 {
        return None;
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (slope, intercept, rms) = linear_fit(&lx, &ly);
    Some(Fit {
        name: name.to_string(),
        slope,
        intercept,
        rms_residual: rms,
    })
}

/// Closed-form constants against Monte-Carlo estimates.
pub fn cmd_constants(run: &RunConfig) -> Result<(RunReport, Stages), CliError> {
    let mut stages = Stages::new();
    let t = Instant::now();
    let constants = compute_constants(&run.params)?;
    let checks = cross_check_constants(&run.params, run.options.mc_samples, run.seed)?;
    stages.push(("constants".into(), t.elapsed().as_secs_f64()));
    let mut report = RunReport::new(
        "constants",
        run,
        &[
            "name",
            "closed_form",
            "monte_carlo",
            "standard_error",
            "z_score",
            "agrees",
        ],
    );
    let threshold = run.options.z_threshold;
    let mut worst: f64 = 0.0;
    for c in &checks {
        let agrees = c.z_score <= threshold;
        worst = worst.max(c.z_score);
        report.push_row(vec![
            Value::from(c.name.clone()),
            num(c.closed_form),
            num(c.monte_carlo),
            num(c.standard_error),
            num(c.z_score),
            Value::from(agrees),
        ]);
    }
    let derived = [
        ("A", constants.a),
        ("B1", constants.b1),
        ("B2", constants.b2),
        ("B3", constants.b3),
        ("B4", constants.b4),
    ];
    for (name, value) in derived {
        report.push_row(vec![
            Value::from(name),
            num(value),
            Value::Null,
            Value::Null,
            Value::Null,
            Value::Null,
        ]);
    }
    report.push_verdict(
        "oracle_agreement",
        worst <= threshold,
        format!("largest z-score {worst:.3} against threshold {threshold}"),
    );
    Ok((report, stages))
}

/// Sampled `‖R‖**` along `k_list` and its decay rate in `μ`.
pub fn cmd_residual_scan(run: &RunConfig) -> Result<(RunReport, Stages), CliError> {
    if run.k_list.len() < 3 {
        return Err(CliError::Config("residual-scan needs at least three k values".into()));
    }
    let constants = compute_constants(&run.params)?;
    let profile = run.profile.build(&run.params)?;
    let mut stages = Stages::new();
    let rows = fan_out(run, &mut stages, |k| {
        let placement = place(run, &constants, k)?;
        let config = &placement.config;
        let grid = build_sector_grid(config, run.refinement)?;
        let samples: Vec<(HalfSpacePoint, f64)> = sample_points(&grid, config, run.options.per_ray)
            .into_iter()
            .map(|z| {
                let p = HalfSpacePoint::boundary(z);
                let r = residual_eval(config, &profile, &p);
                (p, r)
            })
            .collect();
        let value = norm_dstar(config, &run.params, &samples)?;
        Ok((k, config.mu(), config.r(), config.lambda(), placement.label, value))
    })?;
    let mut report = RunReport::new(
        "residual-scan",
        run,
        &["k", "mu", "r", "lambda", "placement", "residual_dstar", "decreased"],
    );
    let mut previous = f64::INFINITY;
    for &(k, mu, r, lambda, label, value) in &rows {
        report.push_row(vec![
            Value::from(k),
            num(mu),
            num(r),
            num(lambda),
            Value::from(label),
            num(value),
            Value::from(value < previous),
        ]);
        previous = value;
    }
    let mu: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let values: Vec<f64> = rows.iter().map(|r| r.5).collect();
    let limit = -run.params.m() / 2.0 + run.options.slope_margin;
    match fit_log_log("log residual_dstar vs log mu", &mu, &values) {
        Some(fit) => {
            report.push_verdict(
                "decay_rate",
                fit.slope <= limit,
                format!("slope {:.4} against limit {limit:.4}", fit.slope),
            );
            report.fits.push(fit);
        }
        None => report.push_verdict("decay_rate", false, "fewer than two positive residuals to fit".into()),
    }
    Ok((report, stages))
}

/// Newton search for the reduced critical point for every `k`.
pub fn cmd_critical_point(run: &RunConfig) -> Result<(RunReport, Stages), CliError> {
    let constants = compute_constants(&run.params)?;
    let l0 = lambda0(&constants, &run.params);
    let opts = critical_options(run);
    let mut stages = Stages::new();
    let reports = fan_out(run, &mut stages, |k| {
        Ok(find_critical_point_with(&constants, &run.params, k, &opts)?)
    })?;
    let mut report = RunReport::new(
        "critical-point",
        run,
        &[
            "k",
            "mu",
            "r_star",
            "lambda_star",
            "lambda0",
            "lambda_gap",
            "r_gap",
            "r_tolerance",
            "in_domain",
            "lambda_in_band",
            "converged",
            "iterations",
            "gradient_norm",
        ],
    );
    let mut all_contained = true;
    let mut ks = Vec::new();
    let mut gaps = Vec::new();
    for rep in &reports {
        let mu = mu_of(&run.params, rep.k);
        let lambda_gap = (rep.lambda_star - l0).abs();
        let r_gap = (rep.r_star - mu * run.params.r0()).abs();
        let tolerance = mu.powf(-opts.theta_bar);
        let in_domain = rep.domain.contains(rep.r_star, rep.lambda_star) && r_gap <= tolerance;
        let in_band = rep.lambda_star >= 0.5 * l0 && rep.lambda_star <= 2.0 * l0;
        all_contained &= in_domain && in_band && rep.converged;
        ks.push(rep.k as f64);
        gaps.push(lambda_gap);
        report.push_row(vec![
            Value::from(rep.k),
            num(mu),
            num(rep.r_star),
            num(rep.lambda_star),
            num(l0),
            num(lambda_gap),
            num(r_gap),
            num(tolerance),
            Value::from(in_domain),
            Value::from(in_band),
            Value::from(rep.converged),
            Value::from(rep.iterations),
            num(rep.gradient_norm),
        ]);
    }
    if let Some(fit) = fit_log_log("log lambda_gap vs log k", &ks, &gaps) {
        report.fits.push(fit);
    }
    report.push_verdict(
        "containment",
        all_contained,
        "every k converged inside D with lambda* in [lambda0/2, 2 lambda0]".into(),
    );
    Ok((report, stages))
}

/// Quadrature energy of the ansatz against the reduced expansion.
pub fn cmd_energy_compare(run: &RunConfig) -> Result<(RunReport, Stages), CliError> {
    let constants = compute_constants(&run.params)?;
    let profile = run.profile.build(&run.params)?;
    let mut stages = Stages::new();
    let rows = fan_out(run, &mut stages, |k| {
        let placement = place(run, &constants, k)?;
        let config = &placement.config;
        let grid = build_sector_grid(config, run.refinement)?;
        let energy = energy_components(&constants, config, &profile, &grid)?;
        let (r, lambda) = (config.r(), config.lambda());
        let predicted = predicted_gap(&constants, &run.params, k, r, lambda);
        let difference = (f_asym(&constants, &run.params, k, r, lambda, InteractionForm::Asymptotic)
            - f_asym(&constants, &run.params, k, r, lambda, InteractionForm::Exact))
            / k as f64;
        Ok(vec![
            Value::from(k),
            num(r),
            num(lambda),
            Value::from(placement.label),
            num(energy.total / k as f64),
            num(constants.a),
            num((energy.total / k as f64 - constants.a).abs() / constants.a),
            num(energy.gap_per_spike),
            num(predicted),
            num(energy.gap_per_spike / predicted),
            num(difference),
        ])
    })?;
    let mut report = RunReport::new(
        "energy-compare",
        run,
        &[
            "k",
            "r",
            "lambda",
            "placement",
            "energy_per_spike",
            "A",
            "relative_to_A",
            "measured_gap",
            "predicted_gap",
            "gap_ratio",
            "b4_form_difference",
        ],
    );
    for row in rows {
        report.push_row(row);
    }
    Ok((report, stages))
}

fn normalised_kw(config: &SpikeConfig, profile: &KProfile, refinement: usize) -> Result<(f64, f64), CliError> {
    let grid = build_sector_grid(config, refinement)?;
    let integral = kazdan_warner(config, profile, &grid, None)?;
    let mass = critical_mass(config, &grid, None)?;
    Ok((integral, mass))
}

/// Kazdan-Warner integrals for constant, monotone and local-maximum profiles.
pub fn cmd_kw_check(run: &RunConfig) -> Result<(RunReport, Stages), CliError> {
    let params = &run.params;
    let constants = compute_constants(params)?;
    let l0 = lambda0(&constants, params);
    let mut stages = Stages::new();
    let mut report = RunReport::new(
        "kw-check",
        run,
        &["case", "k", "r", "lambda", "integral", "mass", "normalised"],
    );
    let t = Instant::now();
    let single = build_spikes(params, 1, params.r0(), l0)?;
    let constant = KProfile::constant(1.0)?;
    let (a_int, a_mass) = normalised_kw(&single, &constant, run.refinement)?;
    let monotone = KProfile::monotone(run.options.kw_slope)?;
    let (b_int, b_mass) = normalised_kw(&single, &monotone, run.refinement)?;
    stages.push(("single bubble".into(), t.elapsed().as_secs_f64()));
    for (case, int, mass) in [("constant", a_int, a_mass), ("monotone", b_int, b_mass)] {
        report.push_row(vec![
            Value::from(case),
            Value::from(1),
            num(single.r()),
            num(single.lambda()),
            num(int),
            num(mass),
            num(int / mass),
        ]);
    }
    report.push_verdict(
        "constant_vanishes",
        a_int.abs() <= 1e-10,
        format!("|integral| = {:.3e}", a_int.abs()),
    );
    let b_norm = (b_int / b_mass).abs();
    report.push_verdict(
        "monotone_obstructed",
        b_norm > run.options.kw_threshold,
        format!(
            "normalised |integral| = {b_norm:.3e} against {}",
            run.options.kw_threshold
        ),
    );

    let local = KProfile::local_max(params);
    let eligible: Vec<usize> = run.k_list.iter().copied().filter(|&k| k >= run.options.k_min).collect();
    let sub = RunConfig {
        k_list: eligible,
        ..run.clone()
    };
    if !sub.k_list.is_empty() {
        let rows = fan_out(&sub, &mut stages, |k| {
            let report = find_critical_point_with(&constants, params, k, &critical_options(run))?;
            let config = build_spikes(params, k, report.r_star, report.lambda_star)?;
            let grid = build_sector_grid_with(&config, &GridOptions::collocation(run.options.collocation_level)?)?;
            let system = assemble(params, &config, &local, &grid)?;
            let solution = iterate_correction(&system, run.options.max_iter, run.options.tol)?;
            let phi = Some(solution.phi_values.as_slice());
            let corrected = kazdan_warner(&config, &local, &grid, phi)?;
            let corrected_mass = critical_mass(&config, &grid, phi)?;
            let shifted = build_spikes(
                params,
                k,
                config.mu() * (params.r0() + params.delta() / 2.0),
                report.lambda_star,
            )?;
            let (s_int, s_mass) = normalised_kw(&shifted, &local, run.refinement)?;
            Ok((k, config, corrected, corrected_mass, shifted, s_int, s_mass))
        })?;
        let mut worst_ratio = f64::INFINITY;
        for (k, config, c_int, c_mass, shifted, s_int, s_mass) in rows {
            report.push_row(vec![
                Value::from("local_max_corrected"),
                Value::from(k),
                num(config.r()),
                num(config.lambda()),
                num(c_int),
                num(c_mass),
                num(c_int / c_mass),
            ]);
            report.push_row(vec![
                Value::from("local_max_shifted"),
                Value::from(k),
                num(shifted.r()),
                num(shifted.lambda()),
                num(s_int),
                num(s_mass),
                num(s_int / s_mass),
            ]);
            worst_ratio = worst_ratio.min((s_int / s_mass).abs() / (c_int / c_mass).abs());
        }
        report.push_verdict(
            "critical_configuration_balanced",
            worst_ratio >= run.options.kw_ratio,
            format!(
                "smallest shifted/corrected ratio {worst_ratio:.3e} against {}",
                run.options.kw_ratio
            ),
        );
    }
    Ok((report, stages))
}

/// Nonlinear correction at the placement of every `k`.
pub fn cmd_correct(run: &RunConfig) -> Result<(RunReport, Stages), CliError> {
    let params = &run.params;
    let constants = compute_constants(params)?;
    let profile = run.profile.build(params)?;
    let mut stages = Stages::new();
    let outcomes = fan_out(run, &mut stages, |k| {
        let placement = place(run, &constants, k)?;
        let config = placement.config;
        let grid = build_sector_grid_with(&config, &GridOptions::collocation(run.options.collocation_level)?)?;
        let system = assemble(params, &config, &profile, &grid)?;
        let outcome: Result<CorrectionSolution, Error> =
            iterate_correction(&system, run.options.max_iter, run.options.tol);
        let positivity = match &outcome {
            Ok(solution) => {
                let interior = interior_ray_points(&config, grid.annuli().cutoff, run.options.per_ray)?;
                Some(positivity_check(&config, &grid, solution, &interior)?)
            }
            Err(_) => None,
        };
        Ok((
            k,
            config,
            grid.len(),
            system.green().len(),
            system.condition_estimate(),
            outcome,
            positivity,
        ))
    })?;
    let mut report = RunReport::new(
        "correct",
        run,
        &[
            "k",
            "r",
            "lambda",
            "nodes",
            "unknowns",
            "condition",
            "norm_star",
            "c1",
            "c2",
            "iterations",
            "converged",
            "contracting",
            "max_contraction",
            "fixed_point_residual",
            "orthogonality",
            "positive",
            "min_ratio",
        ],
    );
    let mut contracting_all = true;
    let mut positive_all = true;
    for (k, config, nodes, unknowns, condition, outcome, positivity) in outcomes {
        let mut cells = vec![
            Value::from(k),
            num(config.r()),
            num(config.lambda()),
            Value::from(nodes),
            Value::from(unknowns),
            num(condition),
        ];
        match outcome {
            Ok(s) => {
                let pos = positivity.expect("checked for solved corrections");
                let max_factor = s.contraction_factors.iter().copied().fold(0.0, f64::max);
                positive_all &= pos.positive;
                cells.extend([
                    num(s.norm_star_value),
                    num(s.c1),
                    num(s.c2),
                    Value::from(s.iterations),
                    Value::from(s.converged),
                    Value::from(true),
                    num(max_factor),
                    s.fixed_point_residual.map_or(Value::Null, num),
                    num(s.orthogonality[0].max(s.orthogonality[1])),
                    Value::from(pos.positive),
                    num(pos.minimum_ratio),
                ]);
            }
            Err(Error::NotContracting { iteration }) => {
                contracting_all = false;
                cells.extend([
                    Value::Null,
                    Value::Null,
                    Value::Null,
                    Value::from(iteration),
                    Value::from(false),
                    Value::from(false),
                    Value::Null,
                    Value::Null,
                    Value::Null,
                    Value::Null,
                    Value::Null,
                ]);
            }
            Err(other) => return Err(other.into()),
        }
        report.push_row(cells);
    }
    report.push_verdict(
        "contracting",
        contracting_all,
        "no Picard iteration grew three times in a row".into(),
    );
    report.push_verdict(
        "positivity",
        positive_all,
        "W + phi > 0 at every node and interior sample".into(),
    );
    Ok((report, stages))
}

/// Sampled constants of the auxiliary pair and convolution estimates.
pub fn cmd_lemma_check(run: &RunConfig) -> Result<(RunReport, Stages), CliError> {
    let constants = compute_constants(&run.params)?;
    let mut stages = Stages::new();
    let reports = fan_out(run, &mut stages, |k| {
        let placement = place(run, &constants, k)?;
        let seed = run.seed.wrapping_add(k as u64);
        Ok((
            k,
            verify_appendix_estimates(&run.params, &placement.config, run.options.lemma_samples, seed)?,
        ))
    })?;
    let mut report = RunReport::new(
        "lemma-check",
        run,
        &[
            "k",
            "lemma",
            "region",
            "samples",
            "constant",
            "constant_doubled",
            "bound",
            "stable",
            "passed",
        ],
    );
    let mut all = true;
    for (k, appendix) in reports {
        all &= appendix.passed;
        for c in appendix.checks {
            report.push_row(vec![
                Value::from(k),
                Value::from(c.lemma),
                Value::from(c.region),
                Value::from(c.samples),
                num(c.constant),
                num(c.constant_doubled),
                c.bound.map_or(Value::Null, num),
                Value::from(c.stable),
                Value::from(c.passed),
            ]);
        }
    }
    report.push_verdict(
        "stability",
        all,
        "every empirical constant is finite, bounded and stable".into(),
    );
    Ok((report, stages))
}
