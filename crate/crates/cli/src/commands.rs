//! The five commands behind the binary. Each loads its inputs, does the
//! work, prints a short summary, and leaves artifacts plus exactly one
//! manifest per run directory.

use std::fs::File;
use std::path::Path;
use std::time::Instant;

use pipeclear::dynamics::steady_state_solve;
use pipeclear::error::Result;
use pipeclear::io::{
    price_rows, ratio_rows, read_baseline, read_bids, read_config, schedule_rows, write_manifest,
    write_prices_csv, write_ratios_csv, write_schedule_csv, write_solver_log, InputDigest,
    PriceRow, ReplaySummary, ScheduleRow, TrajectoryTable,
};
use pipeclear::market::check_baseline_balance;
use pipeclear::network::Profile;
use pipeclear::simulator::{simulate, total_linepack, validate_solution, SimScenario};
use pipeclear::solver::{
    extract_ltv, jacobian_density, solve, verify_kkt, PriceSeries, SolveResult, SolveStatus,
};
use pipeclear::transcription::{transcribe, NlpProblem};

use crate::inputs::{build_grid, coverage_hours, digest, load_network, new_manifest, scaling_of};

pub struct Ctx<'a> {
    pub config: Option<&'a Path>,
    pub out_dir: &'a Path,
    pub nondim: bool,
}

fn create(path: &Path) -> Result<File> {
    Ok(File::create(path)?)
}

fn base_digests(ctx: &Ctx) -> Result<Vec<InputDigest>> {
    match ctx.config {
        Some(p) => Ok(vec![digest(p)?]),
        None => Ok(Vec::new()),
    }
}

/// Schema, connectivity, bid sanity, and baseline balance. Exit 0 only when
/// every check passes without a warning.
pub fn validate(
    ctx: &Ctx,
    network: &Path,
    bids: Option<&Path>,
    baseline: Option<&Path>,
) -> Result<u8> {
    let started = Instant::now();
    let cfg = read_config(ctx.config)?;
    let mut digests = base_digests(ctx)?;
    digests.push(digest(network)?);

    let net = load_network(&cfg, network)?;
    let sc = scaling_of(&net);
    let grid = build_grid(&cfg, &net)?;
    println!(
        "network: {} nodes ({} supply), {} segments, {} compressors",
        net.nodes.len(),
        net.n_slack(),
        net.n_edges(),
        net.compressors.len()
    );

    let window = coverage_hours(&cfg);
    let mut warnings = 0usize;

    if let Some(path) = bids {
        digests.push(digest(path)?);
        let transfers = read_bids(path, &net, window)?;
        println!("bids: {} transfers over {window} h", transfers.len());
    }
    if let Some(path) = baseline {
        digests.push(digest(path)?);
        let base = read_baseline(path, &net, window)?;
        let hours: Vec<f64> = (0..grid.n()).map(|k| sc.time_to_hours(grid.point(k))).collect();
        let samples: Vec<Vec<f64>> = base
            .per_free
            .iter()
            .map(|p| hours.iter().map(|&h| p.sample(h)).collect())
            .collect();
        // Report in SI flow-hours: a constant 1 kg/s surplus over a 24 h
        // horizon reads as 24.
        let to_flow_hours = sc.mass_flow() * sc.time_to_hours(1.0);
        let residual = check_baseline_balance(&samples, &grid) * to_flow_hours;
        let gross: f64 = samples
            .iter()
            .flatten()
            .map(|q| q.abs() * grid.weight())
            .sum::<f64>()
            * to_flow_hours;
        println!("baseline: {} free-node series over {window} h", samples.len());
        if residual.abs() > 1e-8 * gross.max(1.0) {
            println!(
                "warning: baseline withdrawals integrate to {residual:.3} flow-hours \
                 (kg/s x h) over the horizon; a periodic schedule needs 0"
            );
            warnings += 1;
        }
    }

    std::fs::create_dir_all(ctx.out_dir)?;
    let mut man = new_manifest("validate", &cfg, digests);
    man.status = if warnings == 0 {
        "clean".into()
    } else {
        format!("{warnings} warning(s)")
    };
    man.wall_seconds = started.elapsed().as_secs_f64();
    write_manifest(&ctx.out_dir.join("manifest.json"), &man)?;
    Ok(if warnings == 0 { 0 } else { 1 })
}

/// Steady flow of the horizon-averaged data with every station idle.
pub fn steady(ctx: &Ctx, network: &Path, baseline: &Path) -> Result<u8> {
    let started = Instant::now();
    let cfg = read_config(ctx.config)?;
    let mut digests = base_digests(ctx)?;
    digests.push(digest(network)?);
    digests.push(digest(baseline)?);

    let net = load_network(&cfg, network)?;
    let sc = scaling_of(&net);
    let grid = build_grid(&cfg, &net)?;
    let base = read_baseline(baseline, &net, coverage_hours(&cfg))?;

    let hours: Vec<f64> = (0..grid.n()).map(|k| sc.time_to_hours(grid.point(k))).collect();
    let mean = |p: &Profile| hours.iter().map(|&h| p.sample(h)).sum::<f64>() / hours.len() as f64;
    let sigma: Vec<f64> = net
        .nodes
        .iter()
        .take(net.n_slack())
        .map(|n| mean(n.slack_density.as_ref().expect("slack node carries a profile")))
        .collect();
    let q: Vec<f64> = base.per_free.iter().map(|p| mean(p)).collect();

    let ones = vec![1.0; net.n_edges()];
    let state = steady_state_solve(&net, &sigma, &q, &ones, &ones)?;
    let inc = net.incidence()?;
    let mut varrho = sigma.clone();
    varrho.extend_from_slice(&state.rho);

    let table = |si: bool| {
        let (dr, df, dl) = if si {
            (sc.density, sc.mass_flow(), sc.stock())
        } else {
            (1.0, 1.0, 1.0)
        };
        let flux: Vec<f64> = state
            .phi
            .iter()
            .enumerate()
            .map(|(k, f)| f * if si { inc.area[k] } else { 1.0 } * df)
            .collect();
        TrajectoryTable {
            time: vec![0.0],
            node_ids: net.nodes.iter().map(|n| n.id.clone()).collect(),
            edge_ids: net.pipes.iter().map(|p| p.id.clone()).collect(),
            density: vec![varrho.iter().map(|r| r * dr).collect()],
            inlet: vec![flux.clone()],
            outlet: vec![flux],
            linepack: vec![total_linepack(&inc, &varrho, &ones, &ones) * dl],
        }
    };

    std::fs::create_dir_all(ctx.out_dir)?;
    table(true).write_csv(create(&ctx.out_dir.join("steady.csv"))?)?;
    if ctx.nondim {
        table(false).write_csv(create(&ctx.out_dir.join("steady_nondim.csv"))?)?;
    }
    let mut man = new_manifest("steady", &cfg, digests);
    man.status = "steady".into();
    man.wall_seconds = started.elapsed().as_secs_f64();
    write_manifest(&ctx.out_dir.join("manifest.json"), &man)?;
    println!(
        "steady flow of the averaged data: linepack {:.3e} kg, artifacts in {}",
        total_linepack(&inc, &varrho, &ones, &ones) * sc.stock(),
        ctx.out_dir.display()
    );
    Ok(0)
}

/// Integrates the baseline withdrawals forward from a steady start with
/// idle stations; no market, no optimization.
pub fn simulate_baseline(ctx: &Ctx, network: &Path, baseline: &Path) -> Result<u8> {
    let started = Instant::now();
    let cfg = read_config(ctx.config)?;
    let mut digests = base_digests(ctx)?;
    digests.push(digest(network)?);
    digests.push(digest(baseline)?);

    let net = load_network(&cfg, network)?;
    let sc = scaling_of(&net);
    let grid = build_grid(&cfg, &net)?;
    let base = read_baseline(baseline, &net, coverage_hours(&cfg))?;
    let p = transcribe(&net, Vec::new(), &base, grid, cfg.transcribe_options(0.0)?)?;

    let inc = p.incidence();
    let (s, m) = (inc.n_slack, inc.n_free);
    let substeps = cfg.simulate.substeps.max(1);
    let n = grid.n();
    let h = grid.weight() / substeps as f64;
    let sigma_series: Vec<Vec<f64>> = (0..s).map(|i| p.supply_series(i)).collect();
    let q_series: Vec<Vec<f64>> = (0..m).map(|j| p.market().baseline[j].clone()).collect();

    let fine = n * substeps;
    let mut supply = Vec::with_capacity(fine + 1);
    let mut withdrawal = Vec::with_capacity(fine + 1);
    for f in 0..=fine {
        let t = grid.wrap(f as f64 * h);
        let row = |series: &[Vec<f64>]| -> Result<Vec<f64>> {
            series.iter().map(|sv| grid.interpolate(sv, t)).collect()
        };
        supply.push(row(&sigma_series)?);
        withdrawal.push(row(&q_series)?);
    }
    let ratio = vec![vec![1.0; net.compressors.len()]; fine + 1];

    let ones = vec![1.0; net.n_edges()];
    let initial = steady_state_solve(&net, &supply[0], &withdrawal[0], &ones, &ones)?;
    let scn = SimScenario {
        net: net.clone(),
        initial,
        supply,
        withdrawal,
        ratio,
        step: h,
        duration: grid.horizon(),
        smoothing: cfg.run.smoothing,
    };
    let traj = simulate(&scn)?;

    std::fs::create_dir_all(ctx.out_dir)?;
    TrajectoryTable::from_simulation(&p, &traj, 0.0, true)?
        .write_csv(create(&ctx.out_dir.join("trajectory.csv"))?)?;
    if ctx.nondim {
        TrajectoryTable::from_simulation(&p, &traj, 0.0, false)?
            .write_csv(create(&ctx.out_dir.join("trajectory_nondim.csv"))?)?;
    }
    let drift = (traj.linepack.last().unwrap() - traj.linepack[0]) * sc.stock();
    let mut man = new_manifest("simulate", &cfg, digests);
    man.status = "simulated".into();
    man.wall_seconds = started.elapsed().as_secs_f64();
    write_manifest(&ctx.out_dir.join("manifest.json"), &man)?;
    println!(
        "replayed {} h in {} steps; linepack drift {drift:.3e} kg; artifacts in {}",
        cfg.run.horizon_hours,
        fine,
        ctx.out_dir.display()
    );
    Ok(0)
}

/// Writes the artifact set of one solve into `dir`; prices only when the
/// status makes duals meaningful. Non-optimal runs keep their primal tables
/// and are marked in the manifest by the caller.
fn write_solve_artifacts(
    dir: &Path,
    p: &NlpProblem,
    res: &SolveResult,
    nondim: bool,
) -> Result<Option<PriceSeries>> {
    std::fs::create_dir_all(dir)?;
    write_solver_log(create(&dir.join("solver_log.jsonl"))?, &res.log)?;
    TrajectoryTable::from_solution(p, &res.x, true)?
        .write_csv(create(&dir.join("trajectory.csv"))?)?;
    write_schedule_csv(create(&dir.join("schedule.csv"))?, &schedule_rows(p, &res.x, true))?;
    if p.n_compressors() > 0 {
        write_ratios_csv(create(&dir.join("ratios.csv"))?, &ratio_rows(p, &res.x)?)?;
    }
    if nondim {
        TrajectoryTable::from_solution(p, &res.x, false)?
            .write_csv(create(&dir.join("trajectory_nondim.csv"))?)?;
        write_schedule_csv(
            create(&dir.join("schedule_nondim.csv"))?,
            &schedule_rows(p, &res.x, false),
        )?;
    }
    if res.status == SolveStatus::Optimal {
        let series = extract_ltv(res, &p.mass_row_map(), p.grid(), 1.0)?;
        write_prices_csv(create(&dir.join("prices.csv"))?, &price_rows(p, &series))?;
        Ok(Some(series))
    } else {
        Ok(None)
    }
}

/// Clears the market over one horizon: schedules, prices, flows, station
/// settings, solver log, manifest, and the optional independent replay.
pub fn optimize(ctx: &Ctx, network: &Path, bids: &Path, baseline: &Path) -> Result<u8> {
    let started = Instant::now();
    let cfg = read_config(ctx.config)?;
    let mut digests = base_digests(ctx)?;
    digests.push(digest(network)?);
    digests.push(digest(bids)?);
    digests.push(digest(baseline)?);

    let net = load_network(&cfg, network)?;
    let sc = scaling_of(&net);
    let grid = build_grid(&cfg, &net)?;
    let window = coverage_hours(&cfg);
    let transfers = read_bids(bids, &net, window)?;
    let base = read_baseline(baseline, &net, window)?;

    let p = transcribe(&net, transfers, &base, grid, cfg.transcribe_options(0.0)?)?;
    let res = solve(&p, &cfg.solver_options())?;
    write_solve_artifacts(ctx.out_dir, &p, &res, ctx.nondim)?;

    let mut man = new_manifest("optimize", &cfg, digests);
    man.status = format!("{:?}", res.status);
    man.optimal = res.status == SolveStatus::Optimal;
    man.objective_surplus_si = Some(p.surplus(&res.x) * sc.stock());
    man.kkt_max = Some(verify_kkt(&p, &res).max());
    man.jacobian_nnz_fraction = Some(jacobian_density(&p));
    man.iterations = Some(res.iterations);
    if man.optimal && cfg.simulate.check {
        let rep = validate_solution(&p, &res.x, cfg.simulate.substeps.max(4))?;
        man.replay = Some(ReplaySummary {
            density_deviation: rep.density_deviation,
            flux_deviation: rep.flux_deviation,
            periodicity_gap: rep.periodicity_gap,
            worst_pressure_slack: rep.worst_pressure_slack,
            worst_power_margin_watts: rep
                .worst_power_margin
                .is_finite()
                .then_some(rep.worst_power_margin),
        });
    }
    man.wall_seconds = started.elapsed().as_secs_f64();
    write_manifest(&ctx.out_dir.join("manifest.json"), &man)?;

    println!(
        "status: {} after {} iterations ({:.2} s)",
        man.status, res.iterations, man.wall_seconds
    );
    println!(
        "market surplus: {:.6e}, worst KKT residual: {:.3e}, Jacobian fill: {:.4}%",
        man.objective_surplus_si.unwrap(),
        man.kkt_max.unwrap(),
        100.0 * man.jacobian_nnz_fraction.unwrap()
    );
    if let Some(rep) = &man.replay {
        println!(
            "replay: density deviation {:.3e}, periodicity gap {:.3e}",
            rep.density_deviation, rep.periodicity_gap
        );
    }
    println!("artifacts in {}", ctx.out_dir.display());
    Ok(if man.optimal { 0 } else { 2 })
}

/// Rolls the horizon forward `steps` times, pinning each step's initial
/// state to the previous trajectory, and stitches the first hour of every
/// step into one delivered series.
pub fn mpc(ctx: &Ctx, network: &Path, bids: &Path, baseline: &Path) -> Result<u8> {
    let started = Instant::now();
    let cfg = read_config(ctx.config)?;
    let mut digests = base_digests(ctx)?;
    digests.push(digest(network)?);
    digests.push(digest(bids)?);
    digests.push(digest(baseline)?);

    let net = load_network(&cfg, network)?;
    let grid = build_grid(&cfg, &net)?;
    let window = coverage_hours(&cfg);
    let transfers = read_bids(bids, &net, window)?;
    let base = read_baseline(baseline, &net, window)?;
    let solver_opts = cfg.solver_options();
    let steps = cfg.mpc.steps.max(1);

    let mut p = transcribe(&net, transfers, &base, grid, cfg.transcribe_options(0.0)?)?;
    let mut stitched_schedule: Vec<ScheduleRow> = Vec::new();
    let mut stitched_prices: Vec<PriceRow> = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    let mut done = 0usize;
    let mut code = 0u8;

    for step in 0..steps {
        let step_started = Instant::now();
        if let Some(x) = &prev {
            p = p.mpc_step(x, cfg.mpc.shift_hours)?;
        }
        let res = solve(&p, &solver_opts)?;
        let dir = ctx.out_dir.join(format!("step_{step}"));
        let prices = write_solve_artifacts(&dir, &p, &res, ctx.nondim)?;

        let mut man = new_manifest(&format!("mpc step {step}"), &cfg, digests.clone());
        man.status = format!("{:?}", res.status);
        man.optimal = res.status == SolveStatus::Optimal;
        man.objective_surplus_si = Some(p.surplus(&res.x) * scaling_of(&net).stock());
        man.kkt_max = Some(verify_kkt(&p, &res).max());
        man.jacobian_nnz_fraction = Some(jacobian_density(&p));
        man.iterations = Some(res.iterations);
        man.wall_seconds = step_started.elapsed().as_secs_f64();
        write_manifest(&dir.join("manifest.json"), &man)?;
        println!(
            "step {step}: {} after {} iterations ({:.2} s)",
            man.status, res.iterations, man.wall_seconds
        );

        if !man.optimal {
            eprintln!("step {step} did not reach optimality; halting with {done} completed step(s)");
            code = 2;
            break;
        }
        let first = p.hours()[0];
        stitched_schedule.extend(
            schedule_rows(&p, &res.x, true)
                .into_iter()
                .filter(|r| r.hour == first),
        );
        let series = prices.expect("optimal steps carry prices");
        stitched_prices.extend(price_rows(&p, &series).into_iter().filter(|r| r.hour == first));
        prev = Some(res.x);
        done += 1;
    }

    std::fs::create_dir_all(ctx.out_dir)?;
    write_schedule_csv(
        create(&ctx.out_dir.join("stitched_schedule.csv"))?,
        &stitched_schedule,
    )?;
    write_prices_csv(create(&ctx.out_dir.join("stitched_prices.csv"))?, &stitched_prices)?;
    let mut man = new_manifest("mpc", &cfg, digests);
    man.status = format!("completed {done} of {steps} steps");
    man.optimal = done == steps;
    man.wall_seconds = started.elapsed().as_secs_f64();
    write_manifest(&ctx.out_dir.join("manifest.json"), &man)?;
    println!(
        "stitched {done} first-hour slice(s) into {}",
        ctx.out_dir.display()
    );
    Ok(code)
}
