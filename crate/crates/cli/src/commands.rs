//! Subcommand implementations.

use std::f64::consts::TAU;
use std::path::PathBuf;
// the core glob re-exports its own Result alias; keep std's two-parameter form
use std::result::Result;
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;

use fluctlab_core::convolve::ConvolveMethod;
use fluctlab_core::fluct::mart_eta_variance_prediction;
use fluctlab_core::*;

use crate::config::RunConfig;
use crate::output::{fmt_float, OutputDir};
use crate::{
    ChiArgs, CliError, FluctArgs, IdentityArgs, MartingaleArgs, MckvArgs, ResidualArgs,
    ScalingArgs, SimulateArgs,
};

pub struct Context {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub file_cfg: RunConfig,
}

fn parse_method(name: &str) -> Result<ConvolveMethod, CliError> {
    match name {
        "direct" => Ok(ConvolveMethod::Direct),
        "fast" => Ok(ConvolveMethod::Fast),
        "auto" => Ok(ConvolveMethod::Auto),
        other => Err(CliError::Config(format!("unknown method '{other}'"))),
    }
}

fn build_model(
    name: &str,
    sigma: f64,
    coupling_k: f64,
    initial: InitialLaw,
) -> Result<ModelSpec, CliError> {
    match name {
        "kuramoto" => Ok(build_kuramoto(
            coupling_k,
            sigma,
            DisorderLaw::dirac(0.0),
            initial,
        )),
        "probe" => Ok(build_probe(coupling_k)
            .with_sigma(sigma)
            .with_initial(initial)),
        "free" => Ok(build_free(sigma).with_initial(initial)),
        other => Err(CliError::Config(format!("unknown model '{other}'"))),
    }
}

pub fn chi(ctx: &Context, args: &ChiArgs) -> Result<(), CliError> {
    let alphas = args
        .alphas
        .clone()
        .or_else(|| ctx.file_cfg.chi.alphas.clone())
        .unwrap_or_else(|| vec![0.0, 0.25, 0.5, 0.75]);
    let tol = args.tol.or(ctx.file_cfg.chi.tol).unwrap_or(1e-6);
    let resolved = json!({"command": "chi", "alphas": alphas, "tol": tol, "seed": ctx.seed});
    let out = OutputDir::create(&ctx.output_dir, &resolved).map_err(CliError::Config)?;
    let mut rows = Vec::new();
    for &alpha in &alphas {
        let value = chi_alpha(alpha, tol)?;
        rows.push(format!("{},{}", fmt_float(alpha), fmt_float(value)));
    }
    out.write_csv("chi.csv", "alpha,chi", &rows)
        .map_err(CliError::Config)?;
    out.write_metadata("chi", &resolved, ctx.seed)
        .map_err(CliError::Config)?;
    println!("chi: wrote {} rows (config {})", rows.len(), out.hash());
    Ok(())
}

pub fn residual(ctx: &Context, args: &ResidualArgs) -> Result<(), CliError> {
    let alphas = args
        .alphas
        .clone()
        .or_else(|| ctx.file_cfg.residual.alphas.clone())
        .unwrap_or_else(|| vec![0.0, 0.25, 0.5, 0.75]);
    let ladder = args
        .n_ladder
        .clone()
        .or_else(|| ctx.file_cfg.residual.n_ladder.clone())
        .unwrap_or_else(|| vec![1 << 10, 1 << 14, 1 << 18, 1 << 22]);
    let resolved =
        json!({"command": "residual", "alphas": alphas, "n_ladder": ladder, "seed": ctx.seed});
    let out = OutputDir::create(&ctx.output_dir, &resolved).map_err(CliError::Config)?;
    let mut rows = Vec::new();
    for &alpha in &alphas {
        let values = riemann_residual_ladder(&ladder, alpha)?;
        for (&n, &v) in ladder.iter().zip(values.iter()) {
            rows.push(format!("{},{n},{}", fmt_float(alpha), fmt_float(v)));
        }
    }
    out.write_csv("residual.csv", "alpha,n_half,residual", &rows)
        .map_err(CliError::Config)?;
    out.write_metadata("residual", &resolved, ctx.seed)
        .map_err(CliError::Config)?;
    println!("residual: wrote {} rows (config {})", rows.len(), out.hash());
    Ok(())
}

pub fn simulate(ctx: &Context, args: &SimulateArgs) -> Result<(), CliError> {
    let blk = &ctx.file_cfg.simulate;
    let model_name = args
        .model
        .clone()
        .or_else(|| blk.model.clone())
        .unwrap_or_else(|| "kuramoto".into());
    let alpha = args.alpha.or(blk.alpha).unwrap_or(0.25);
    let n = args.n.or(blk.n).unwrap_or(256);
    let dt = args.dt.or(blk.dt).unwrap_or(1e-3);
    let t_end = args.t_end.or(blk.t_end).unwrap_or(1.0);
    let sigma = args.sigma.or(blk.sigma).unwrap_or(1.0);
    let coupling_k = args.coupling_k.or(blk.coupling_k).unwrap_or(1.0);
    let method = parse_method(
        &args
            .method
            .clone()
            .or_else(|| blk.method.clone())
            .unwrap_or_else(|| "auto".into()),
    )?;
    let record_stride = args.record_stride.or(blk.record_stride).unwrap_or(10);
    let coupled = args.coupled || blk.coupled.unwrap_or(false);

    let resolved = json!({
        "command": "simulate", "model": model_name, "alpha": alpha, "n": n,
        "dt": dt, "t_end": t_end, "sigma": sigma, "coupling_k": coupling_k,
        "record_stride": record_stride, "coupled": coupled, "seed": ctx.seed,
    });
    let out = OutputDir::create(&ctx.output_dir, &resolved).map_err(CliError::Config)?;

    let model = Arc::new(build_model(
        &model_name,
        sigma,
        coupling_k,
        InitialLaw::UniformCircle,
    )?);
    let lattice = Arc::new(Lattice::build(n, alpha)?);
    let config = SimConfig {
        dt,
        t_end,
        seed: ctx.seed,
        record_stride,
        method,
    };
    let observables = vec![TestFn1::sin_theta(), TestFn1::cos_theta()];
    let mut sim = Simulation::new(model.clone(), lattice, config).with_observables(observables);
    if coupled {
        // Γ-constant models couple to the closed-form field; the incoherent
        // Kuramoto field vanishes.
        let field = match model_name.as_str() {
            "probe" => CouplingSolution::constant(coupling_k * integral_psi(alpha), t_end),
            _ => CouplingSolution::zero(t_end),
        };
        sim = sim.with_coupling(Arc::new(field));
    }
    let traj = sim.run()?;

    let mut rows = Vec::new();
    for (k, &time) in traj.times.iter().enumerate() {
        for (j, id) in traj.observable_ids.iter().enumerate() {
            rows.push(format!(
                "{},{id},{}",
                fmt_float(time),
                fmt_float(traj.values[k][j])
            ));
            rows.push(format!(
                "{},mart:{id},{}",
                fmt_float(time),
                fmt_float(traj.mart_eta[k][j])
            ));
        }
        rows.push(format!(
            "{},order_param,{}",
            fmt_float(time),
            fmt_float(traj.order_param[k])
        ));
        if coupled {
            rows.push(format!(
                "{},coupling_error,{}",
                fmt_float(time),
                fmt_float(traj.coupling_error[k])
            ));
        }
    }
    out.write_csv("trajectory.csv", "time,observable_id,value", &rows)
        .map_err(CliError::Config)?;
    out.write_metadata("simulate", &resolved, ctx.seed)
        .map_err(CliError::Config)?;
    println!(
        "simulate: {} records, {} particles (config {})",
        traj.times.len(),
        2 * n,
        out.hash()
    );
    Ok(())
}

pub fn mckv(ctx: &Context, args: &MckvArgs) -> Result<(), CliError> {
    let blk = &ctx.file_cfg.mckv;
    let model_name = args
        .model
        .clone()
        .or_else(|| blk.model.clone())
        .unwrap_or_else(|| "kuramoto".into());
    let alpha = args.alpha.or(blk.alpha).unwrap_or(0.25);
    let cells = args.cells.or(blk.cells).unwrap_or(256);
    let t_end = args.t_end.or(blk.t_end).unwrap_or(1.0);
    let sigma = args.sigma.or(blk.sigma).unwrap_or(1.0);
    let coupling_k = args.coupling_k.or(blk.coupling_k).unwrap_or(1.0);
    let initial_name = args
        .initial
        .clone()
        .or_else(|| blk.initial.clone())
        .unwrap_or_else(|| "uniform".into());
    let initial = match initial_name.as_str() {
        "uniform" => InitialLaw::UniformCircle,
        "tilted" => InitialLaw::TiltedCosine,
        other => return Err(CliError::Config(format!("unknown initial '{other}'"))),
    };
    // default dt: 40% of the diffusive CFL bound
    let width = TAU / cells as f64;
    let default_dt = if sigma > 0.0 {
        0.4 * width * width / (sigma * sigma)
    } else {
        1e-3
    };
    let dt = args.dt.or(blk.dt).unwrap_or(default_dt);

    let resolved = json!({
        "command": "mckv", "model": model_name, "alpha": alpha, "cells": cells,
        "dt": dt, "t_end": t_end, "sigma": sigma, "coupling_k": coupling_k,
        "initial": initial_name, "seed": ctx.seed,
    });
    let out = OutputDir::create(&ctx.output_dir, &resolved).map_err(CliError::Config)?;

    let model = build_model(&model_name, sigma, coupling_k, initial)?;
    let atoms = model
        .disorder
        .atoms()
        .ok_or_else(|| CliError::Config("mckv needs finite disorder support".into()))?
        .to_vec();
    let grid0 = DensityGrid::from_initial(&model.initial, atoms, cells)?;
    let steps = (t_end / dt).round() as usize;
    let path = solve_density(&model, alpha, &grid0, t_end / steps as f64, t_end, steps)?;
    let last = path.grids.last().unwrap();
    let mut rows = Vec::new();
    for (a, (omega, _)) in last.atoms.iter().enumerate() {
        for m in 0..last.cells {
            rows.push(format!(
                "{},{},{}",
                fmt_float(last.theta_center(m)),
                fmt_float(*omega),
                fmt_float(last.values[a][m])
            ));
        }
    }
    out.write_csv("density.csv", "theta_cell_center,omega_value,density", &rows)
        .map_err(CliError::Config)?;
    out.write_metadata("mckv", &resolved, ctx.seed)
        .map_err(CliError::Config)?;
    println!(
        "mckv: final time {} with {} cells (config {})",
        last.time,
        last.cells,
        out.hash()
    );
    Ok(())
}

fn standard_fluct_fns() -> (Vec<TestFn1>, Vec<TestFn2>) {
    let f_sin = TestFn1::sin_theta();
    let f_cos = TestFn1::cos_theta();
    let g_one = TestFn2::constant_one();
    let g_cc = TestFn2::product(&f_cos, &f_cos);
    (vec![f_sin, f_cos], vec![g_one, g_cc])
}

pub fn fluct(ctx: &Context, args: &FluctArgs) -> Result<(), CliError> {
    let blk = &ctx.file_cfg.fluct;
    let model_name = args
        .model
        .clone()
        .or_else(|| blk.model.clone())
        .unwrap_or_else(|| "kuramoto".into());
    let alpha = args.alpha.or(blk.alpha).unwrap_or(0.25);
    let n = args.n.or(blk.n).unwrap_or(512);
    let replicas = args.replicas.or(blk.replicas).unwrap_or(200);
    let t_end = args.t_end.or(blk.t_end).unwrap_or(0.0);
    let dt = args.dt.or(blk.dt).unwrap_or(1e-3);

    let resolved = json!({
        "command": "fluct", "model": model_name, "alpha": alpha, "n": n,
        "replicas": replicas, "t_end": t_end, "dt": dt, "seed": ctx.seed,
        "critical_alpha": is_critical_alpha(alpha),
    });
    let out = OutputDir::create(&ctx.output_dir, &resolved).map_err(CliError::Config)?;

    let model = Arc::new(build_model(&model_name, 1.0, 1.0, InitialLaw::UniformCircle)?);
    let lattice = Arc::new(Lattice::build(n, alpha)?);
    let grid = DensityGrid::uniform(
        model
            .disorder
            .atoms()
            .ok_or_else(|| CliError::Config("fluct needs finite disorder".into()))?
            .to_vec(),
        256,
    )?;
    let (f_list, g_list) = standard_fluct_fns();
    let a_n = scaling_a_n(n, alpha);
    let mut lines = Vec::new();

    let mut emit = |replica: usize, time: f64, theta: &[f64], omega: &[f64]| -> Result<(), CliError> {
        for f in &f_list {
            let v = eta_pair(&lattice, theta, omega, &grid, f, alpha);
            lines.push(json!({"alpha": alpha, "n": n, "replica": replica, "time": time,
                "fn_id": format!("eta:{}", f.id), "value": v, "a_n": a_n}));
        }
        for g in &g_list {
            let v = h_pair(&lattice, theta, omega, &grid, g, alpha, ConvolveMethod::Auto)?;
            lines.push(json!({"alpha": alpha, "n": n, "replica": replica, "time": time,
                "fn_id": format!("h:{}", g.id), "value": v, "a_n": a_n}));
            let check = duality_gap(&lattice, theta, omega, &grid, g, alpha)?;
            lines.push(json!({"alpha": alpha, "n": n, "replica": replica, "time": time,
                "fn_id": format!("duality_gap:{}", g.id), "value": check.gap(), "a_n": a_n}));
        }
        Ok(())
    };

    if t_end == 0.0 {
        for rep in 0..replicas {
            let seed = replica_seed(ctx.seed, rep as u64);
            let mut rng = rng_from_seed(seed);
            let (theta, omega) = sample_populations(&model, lattice.size(), &mut rng)?;
            emit(rep, 0.0, &theta, &omega)?;
        }
    } else {
        let config = SimConfig {
            dt,
            t_end,
            seed: ctx.seed,
            record_stride: ((t_end / dt).round() as usize / 20).max(1),
            method: ConvolveMethod::Auto,
        };
        let traj = Simulation::new(model.clone(), lattice.clone(), config)
            .recording_states()
            .run()?;
        for (k, &time) in traj.times.iter().enumerate() {
            emit(0, time, &traj.thetas[k], &traj.final_state.omega)?;
        }
    }
    out.write_jsonl("fluct.jsonl", &lines)
        .map_err(CliError::Config)?;
    out.write_metadata("fluct", &resolved, ctx.seed)
        .map_err(CliError::Config)?;
    println!("fluct: {} samples (config {})", lines.len(), out.hash());
    Ok(())
}

pub fn martingale(ctx: &Context, args: &MartingaleArgs) -> Result<(), CliError> {
    let blk = &ctx.file_cfg.martingale;
    let alpha = args.alpha.or(blk.alpha).unwrap_or(0.25);
    let n = args.n.or(blk.n).unwrap_or(512);
    let replicas = args.replicas.or(blk.replicas).unwrap_or(500);
    let t_end = args.t_end.or(blk.t_end).unwrap_or(1.0);
    let dt = args.dt.or(blk.dt).unwrap_or(2e-3);

    let resolved = json!({
        "command": "martingale", "alpha": alpha, "n": n, "replicas": replicas,
        "t_end": t_end, "dt": dt, "seed": ctx.seed,
    });
    let out = OutputDir::create(&ctx.output_dir, &resolved).map_err(CliError::Config)?;

    let model = Arc::new(build_free(1.0));
    let lattice = Arc::new(Lattice::build(n, alpha)?);
    let f = TestFn1::sin_theta();
    let samples: Result<Vec<f64>, FluctError> = (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let config = SimConfig {
                dt,
                t_end,
                seed: replica_seed(ctx.seed, rep as u64),
                record_stride: (t_end / dt).round() as usize,
                method: ConvolveMethod::Auto,
            };
            let traj = Simulation::new(model.clone(), lattice.clone(), config)
                .with_observables(vec![f.clone()])
                .run()?;
            Ok(traj.mart_eta.last().unwrap()[0])
        })
        .collect();
    let samples = samples?;
    let r = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / r;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0);
    let stderr = var * (2.0 / (r - 1.0)).sqrt();

    let grid = DensityGrid::uniform(vec![(0.0, 1.0)], 256)?;
    let path = DensityPath::stationary(grid, t_end, alpha);
    let k_eta = martingale_cov(&f, &f, None, t_end, &path)?.k_eta;
    let prediction = mart_eta_variance_prediction(n, alpha, k_eta);
    let z = (var - prediction) / stderr;

    let rows = vec![format!(
        "mart:{},{replicas},{},{},{},{}",
        f.id,
        fmt_float(var),
        fmt_float(stderr),
        fmt_float(prediction),
        fmt_float(z)
    )];
    out.write_csv(
        "martingale.csv",
        "fn_id,replicas,mc_var,mc_stderr,prediction,z",
        &rows,
    )
    .map_err(CliError::Config)?;
    out.write_metadata("martingale", &resolved, ctx.seed)
        .map_err(CliError::Config)?;
    println!(
        "martingale: var {var:.6} vs prediction {prediction:.6} (z = {z:.2}, config {})",
        out.hash()
    );
    if z.abs() > 3.0 {
        return Err(CliError::Numeric(format!(
            "martingale variance off prediction: z = {z:.2}"
        )));
    }
    Ok(())
}

pub fn scaling(ctx: &Context, args: &ScalingArgs) -> Result<(), CliError> {
    let blk = &ctx.file_cfg.scaling;
    let model_name = args
        .model
        .clone()
        .or_else(|| blk.model.clone())
        .unwrap_or_else(|| "kuramoto".into());
    let alpha = args.alpha.or(blk.alpha).unwrap_or(0.25);
    let statistic_name = args
        .statistic
        .clone()
        .or_else(|| blk.statistic.clone())
        .unwrap_or_else(|| "sd".into());
    let n_ladder = args
        .n_ladder
        .clone()
        .or_else(|| blk.n_ladder.clone())
        .unwrap_or_else(|| vec![256, 512, 1024, 2048]);
    let replicas = args.replicas.or(blk.replicas).unwrap_or(200);
    let dt = args.dt.or(blk.dt).unwrap_or(5e-3);
    let t_end = args.t_end.or(blk.t_end).unwrap_or(1.0);
    let sigma = args.sigma.or(blk.sigma).unwrap_or(1.0);
    // default K keeps K·∫Ψ < σ² for every α < 1, so the incoherent state the
    // ladder references stays linearly stable
    let coupling_k = args.coupling_k.or(blk.coupling_k).unwrap_or(0.1);
    let tolerance = args.tolerance.or(blk.tolerance).unwrap_or(0.1);

    let statistic = match statistic_name.as_str() {
        "sd" => LadderStatistic::ReplicaSd,
        "bias" => LadderStatistic::ReplicaAbsMean,
        "coupling" => LadderStatistic::MeanCouplingError,
        other => return Err(CliError::Config(format!("unknown statistic '{other}'"))),
    };
    let resolved = json!({
        "command": "scaling", "model": model_name, "alpha": alpha,
        "statistic": statistic_name, "n_ladder": n_ladder, "replicas": replicas,
        "dt": dt, "t_end": t_end, "sigma": sigma, "coupling_k": coupling_k,
        "tolerance": tolerance, "seed": ctx.seed,
    });
    let out = OutputDir::create(&ctx.output_dir, &resolved).map_err(CliError::Config)?;

    let (model, oracle) = match model_name.as_str() {
        "probe" => {
            let model = build_probe(coupling_k)
                .with_sigma(sigma)
                .with_initial(InitialLaw::Dirac(1.0));
            let oracle = MeanFieldOracle::ProbeFlow {
                theta0: 1.0,
                gamma_const: coupling_k,
            };
            (model, oracle)
        }
        _ => {
            let model = build_model(&model_name, sigma, coupling_k, InitialLaw::UniformCircle)?;
            let oracle = MeanFieldOracle::IncoherentUniform {
                atoms: vec![(0.0, 1.0)],
                cells: 256,
            };
            (model, oracle)
        }
    };
    let config = LadderConfig {
        alphas: vec![alpha],
        n_halves: n_ladder,
        replicas,
        base_seed: ctx.seed,
        observable: TestFn1::sin_theta(),
        sim: SimConfig {
            dt,
            t_end,
            seed: 0,
            record_stride: (t_end / dt).round() as usize,
            method: ConvolveMethod::Auto,
        },
    };
    let rows = run_ladder(&config, Arc::new(model), statistic, &oracle)?;
    let est = fit_exponent(&weights_from_rows(&rows))?.annotate(alpha, tolerance);
    let regime = classify_regime(alpha, &est, tolerance);

    let csv_rows: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{statistic_name},{},{},{},{},{regime}",
                fmt_float(r.alpha),
                r.n_half,
                r.replicas,
                fmt_float(r.value),
                fmt_float(r.stderr),
                fmt_float(est.slope),
                fmt_float(est.stderr),
            )
        })
        .collect();
    out.write_csv(
        "scaling.csv",
        "alpha,n,replicas,statistic,value,stderr,slope,slope_stderr,regime",
        &csv_rows,
    )
    .map_err(CliError::Config)?;
    out.write_metadata("scaling", &resolved, ctx.seed)
        .map_err(CliError::Config)?;
    println!(
        "scaling: slope {:.4} ± {:.4} → {regime} (config {})",
        est.slope,
        est.stderr,
        out.hash()
    );
    Ok(())
}

pub fn identity_suite(ctx: &Context, args: &IdentityArgs) -> Result<(), CliError> {
    let blk = &ctx.file_cfg.identity;
    let alpha = args.alpha.or(blk.alpha).unwrap_or(0.75);
    let n = args.n.or(blk.n).unwrap_or(512);
    let pairs = args.pairs.or(blk.pairs).unwrap_or(20);

    let resolved = json!({
        "command": "identity-suite", "alpha": alpha, "n": n, "pairs": pairs, "seed": ctx.seed,
    });
    let out = OutputDir::create(&ctx.output_dir, &resolved).map_err(CliError::Config)?;

    let lattice = Arc::new(Lattice::build(n, alpha)?);
    let model = Arc::new(build_kuramoto(
        1.0,
        1.0,
        DisorderLaw::dirac(0.0),
        InitialLaw::UniformCircle,
    ));
    let grid = DensityGrid::uniform(vec![(0.0, 1.0)], 256)?;
    let state = ParticleState::sample(&model, lattice.clone(), ctx.seed)?;

    struct Check {
        name: &'static str,
        value: f64,
        tolerance: f64,
    }
    let mut checks: Vec<Check> = Vec::new();

    let kernel = lattice.kernel();
    let sym = (1..lattice.size())
        .map(|k| (kernel[k] - kernel[lattice.size() - k]).abs())
        .fold(0.0, f64::max);
    checks.push(Check {
        name: "kernel_symmetry",
        value: sym,
        tolerance: 1e-12,
    });

    checks.push(Check {
        name: "residual_alpha0_exact",
        value: (riemann_residual_closed(n as u64, 0.0) + 0.5).abs(),
        tolerance: 1e-12,
    });

    let mut rng = rng_from_seed(splitmix64(ctx.seed ^ 0xc0ffee));
    use rand::Rng;
    let signal: Vec<f64> = (0..lattice.size())
        .map(|_| rng.random::<f64>() - 0.5)
        .collect();
    let direct = circular_convolve(kernel, &signal, ConvolveMethod::Direct)?;
    let fast = circular_convolve(kernel, &signal, ConvolveMethod::Fast)?;
    let scale = direct.iter().map(|v| v.abs()).fold(1.0, f64::max);
    let conv_diff = direct
        .iter()
        .zip(fast.iter())
        .map(|(d, f)| (d - f).abs())
        .fold(0.0, f64::max)
        / scale;
    checks.push(Check {
        name: "convolve_fast_vs_direct",
        value: conv_diff,
        tolerance: 1e-10,
    });

    let field_fast = interaction_field(&state, &model, ConvolveMethod::Fast)?;
    let field_direct = interaction_field(&state, &model, ConvolveMethod::Direct)?;
    let field_diff = field_fast
        .iter()
        .zip(field_direct.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    checks.push(Check {
        name: "interaction_fast_vs_direct",
        value: field_diff,
        tolerance: 1e-10,
    });

    checks.push(Check {
        name: "eta_mass_cancellation",
        value: eta_pair(&lattice, &state.theta, &state.omega, &grid, &TestFn1::one(), alpha).abs(),
        tolerance: 1e-12,
    });

    let h_one = h_pair(
        &lattice,
        &state.theta,
        &state.omega,
        &grid,
        &TestFn2::constant_one(),
        alpha,
        ConvolveMethod::Auto,
    )?;
    let expect = scaling_a_n(n, alpha) * (lattice.mean_weight() - integral_psi(alpha));
    checks.push(Check {
        name: "h_constant_g_residual",
        value: (h_one - expect).abs(),
        tolerance: 1e-12,
    });

    let mut worst_gap = 0.0f64;
    for p in 0..pairs {
        let seed = replica_seed(ctx.seed, 1000 + p as u64);
        let mut rng = rng_from_seed(seed);
        let (theta, omega) = sample_populations(&model, lattice.size(), &mut rng)?;
        let f1 = random_testfn(&mut rng, "g1");
        let f2 = random_testfn(&mut rng, "g2");
        let g = TestFn2::product(&f1, &f2);
        let check = duality_gap(&lattice, &theta, &omega, &grid, &g, alpha)?;
        worst_gap = worst_gap.max(check.relative_gap());
    }
    checks.push(Check {
        name: "duality_gap_worst",
        value: worst_gap,
        tolerance: 1e-10,
    });

    let mut rows = Vec::new();
    let mut all_pass = true;
    for c in &checks {
        let pass = c.value <= c.tolerance;
        all_pass &= pass;
        rows.push(format!(
            "{},{},{},{}",
            c.name,
            fmt_float(c.value),
            fmt_float(c.tolerance),
            pass
        ));
        println!(
            "identity {}: {} (value {:.3e}, tol {:.0e})",
            c.name,
            if pass { "PASS" } else { "FAIL" },
            c.value,
            c.tolerance
        );
    }
    out.write_csv("identity.csv", "check,value,tolerance,pass", &rows)
        .map_err(CliError::Config)?;
    out.write_metadata("identity-suite", &resolved, ctx.seed)
        .map_err(CliError::Config)?;
    if !all_pass {
        return Err(CliError::Numeric("identity suite failed".into()));
    }
    Ok(())
}

fn random_testfn<R: rand::Rng>(rng: &mut R, id: &str) -> TestFn1 {
    let theta = match rng.random_range(0..3) {
        0 => ThetaPart::Sin(rng.random_range(1..=3)),
        1 => ThetaPart::Cos(rng.random_range(1..=3)),
        _ => ThetaPart::One,
    };
    let omega = match rng.random_range(0..2) {
        0 => vec![1.0],
        _ => vec![rng.random::<f64>(), rng.random::<f64>() - 0.5],
    };
    let x = match rng.random_range(0..3) {
        0 => XPart::Cos(rng.random_range(1..=2)),
        1 => XPart::Sin(rng.random_range(1..=2)),
        _ => XPart::One,
    };
    TestFn1::new(id, theta, omega, x)
}
