use std::path::Path;
use std::sync::Arc;

use oedtomo::bayesrisk::sample_covariance_factor;
use oedtomo::datagen::{gen_pentagons, gen_phantoms, gen_rectangles, gen_shapes, PhantomParams, TrainingSet};
use oedtomo::io::{self, format_g17, CsvTable, FormatError};
use oedtomo::oed::{
    self, landscape_scan, log_space, multi_start_oed_b, random_starts, solve_oed_a, LandscapeMode, OedError, ProblemA,
};
use oedtomo::qp::ConstraintSpec;
use oedtomo::report;
use oedtomo::Grid;

use crate::config::RunConfig;
use crate::CliError;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn from_format(e: FormatError) -> CliError {
    CliError::Usage(e.to_string())
}

/// Numerical failures exit with 3, everything else is a usage error.
fn from_oed(e: OedError) -> CliError {
    match e {
        OedError::Inner { .. }
        | OedError::Sensitivity { .. }
        | OedError::Risk(_)
        | OedError::EmptySupport
        | OedError::OverRegularized { .. } => CliError::Numerical(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))
}

fn write_csv(table: &CsvTable, path: &Path) -> Result<(), CliError> {
    table.write(path).map_err(from_format)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn load_dataset(cfg: &RunConfig) -> Result<TrainingSet, CliError> {
    let path: String = cfg.require("dataset")?;
    io::read_tomoset(Path::new(&path)).map_err(from_format)
}

fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|v| format_g17(*v)).collect::<Vec<_>>().join(", ")
}

pub fn generate(cfg: &RunConfig, kind: &str, path: &Path) -> Result<(), CliError> {
    let count: usize = cfg.get_or("count", 20)?;
    let size: usize = cfg.get_or("size", 64)?;
    let seed = cfg.seed()?;
    if count == 0 {
        return Err(usage("count must be positive"));
    }
    let grid = Grid::square(size).map_err(|e| usage(e.to_string()))?;
    let ts = match kind {
        "rectangles" => gen_rectangles(count, grid, seed),
        "pentagons" => gen_pentagons(count, grid, seed),
        "shapes" => gen_shapes(count, grid, seed),
        "phantom" | "phantoms" => gen_phantoms(count, grid, seed, &PhantomParams::default()),
        other => return Err(usage(format!("unknown dataset `{other}` (rectangles|pentagons|shapes|phantom)"))),
    }
    .map_err(|e| usage(e.to_string()))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    io::write_tomoset(path, &ts).map_err(from_format)?;
    let all = ts.images().iter().flat_map(|im| im.values().iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    println!(
        "{kind}: {} images, grid {}x{}, values in [{}, {}] -> {}",
        ts.len(),
        grid.height(),
        grid.width(),
        format_g17(lo),
        format_g17(hi),
        path.display()
    );
    Ok(())
}

pub fn landscape(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let ts = load_dataset(cfg)?;
    let oc = cfg.oed_config()?;
    let step: f64 = cfg.get_or("step", 5.0)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(usage(format!("step must be positive, got {step}")));
    }
    let (mode, column) = match cfg.raw("mode").unwrap_or("bayes") {
        "bayes" => (LandscapeMode::BayesIdentity, "bayes_risk"),
        "bayes-cov" => {
            let ridge = cfg.get_or("ridge", 1e-2)?;
            let (_, gamma) = sample_covariance_factor(&ts, ridge).map_err(|e| usage(e.to_string()))?;
            (LandscapeMode::BayesCovariance(Arc::new(gamma)), "bayes_risk")
        }
        "empirical" => (LandscapeMode::Empirical, "objective_J_N"),
        other => return Err(usage(format!("invalid mode `{other}` (bayes|bayes-cov|empirical)"))),
    };
    let scan = landscape_scan(&ts, &oc, step, &mode).map_err(from_oed)?;
    ensure_dir(out)?;
    write_csv(&report::landscape_table(&scan, column), &out.join("landscape.csv"))?;
    write_csv(&report::best_cells_table(&scan, 2, column), &out.join("landscape_best.csv"))?;
    let (k, values) = report::landscape_heatmap(&scan);
    io::write_pgm(&out.join("landscape.pgm"), k, k, &values).map_err(from_format)?;
    for (r, c) in scan.best(2).iter().enumerate() {
        println!("best {}: ({}, {}) {column} = {}", r + 1, format_g17(c.p1), format_g17(c.p2), format_g17(c.value));
    }
    Ok(())
}

fn angle_grid(step: f64) -> Result<Vec<f64>, CliError> {
    if !(step > 0.0 && step < 180.0) {
        return Err(usage(format!("angle_step must lie in (0, 180), got {step}")));
    }
    Ok(oed::scan_angles(step).into_iter().filter(|&a| a < 180.0).collect())
}

pub fn oed_a(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let ts = load_dataset(cfg)?;
    let oc = cfg.oed_config()?;
    let angles = angle_grid(cfg.get_or("angle_step", 10.0)?)?;
    ensure_dir(out)?;
    if let Some(betas) = cfg.list("betas")? {
        let rows = oed::beta_sweep(&ts, &angles, &oc, &betas).map_err(from_oed)?;
        write_csv(&report::beta_sweep_table(&rows), &out.join("beta_sweep.csv"))?;
        for r in &rows {
            println!(
                "beta {}: {} angles [{}], mse_per_pixel {}",
                format_g17(r.beta),
                r.support_angles.len(),
                fmt_list(&r.support_angles),
                format_g17(r.mse)
            );
        }
        return Ok(());
    }
    let res = solve_oed_a(&ts, &angles, &oc).map_err(from_oed)?;
    write_csv(&report::design_a_table(&res), &out.join("design_a.csv"))?;
    let row = oed::BetaSweepRow {
        beta: oc.beta,
        support_angles: res.support_angles(),
        weights: res.support.iter().map(|&k| res.p_opt[k]).collect(),
        mse: res.mse(),
    };
    write_csv(&report::beta_sweep_table(&[row]), &out.join("beta_sweep.csv"))?;
    write_csv(
        &report::trace_table(&[
            ("a".into(), "1".into(), &res.phase1_trace),
            ("a".into(), "2".into(), &res.objective_trace),
        ]),
        &out.join("trace_a.csv"),
    )?;
    let count: usize = cfg.get_or("reconstructions", 4)?;
    let problem = ProblemA::new(&ts.truncated(count.min(ts.len())), &angles, &oc).map_err(from_oed)?;
    let (_, recon) = problem.reconstruct(&res.p_opt).map_err(from_oed)?;
    let g = ts.grid();
    for (i, f_hat) in recon.iter().enumerate() {
        let truth = ts.images()[i].values();
        let err: Vec<f64> = f_hat.iter().zip(truth).map(|(a, b)| (a - b).abs()).collect();
        io::write_pgm(&out.join(format!("recon_{i}.pgm")), g.width(), g.height(), f_hat).map_err(from_format)?;
        io::write_pgm(&out.join(format!("error_{i}.pgm")), g.width(), g.height(), &err).map_err(from_format)?;
    }
    println!(
        "support: {} angles [{}], mse_per_pixel {}, stop {:?}",
        res.support.len(),
        fmt_list(&res.support_angles()),
        format_g17(res.mse()),
        res.stop
    );
    Ok(())
}

pub fn oed_b(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let ts = load_dataset(cfg)?;
    let oc = cfg.oed_config()?;
    let lo: f64 = cfg.get_or("lo", 0.0)?;
    let hi: f64 = cfg.get_or("hi", 180.0)?;
    let starts = match cfg.list("design")? {
        Some(p0) => vec![p0],
        None => {
            let count: usize = cfg.get_or("starts", 10)?;
            let num_angles: usize = cfg.get_or("num_angles", 2)?;
            if count == 0 || num_angles == 0 {
                return Err(usage("starts and num_angles must be positive"));
            }
            random_starts(count, num_angles, (lo, hi), cfg.seed()?)
        }
    };
    let results = multi_start_oed_b(&ts, &starts, (lo, hi), &oc).map_err(from_oed)?;
    let runs: Vec<(Vec<f64>, oed::OedResult)> = starts.into_iter().zip(results).collect();
    ensure_dir(out)?;
    write_csv(&report::starts_table(&runs), &out.join("starts.csv"))?;
    let traces: Vec<(String, String, &[f64])> = runs
        .iter()
        .enumerate()
        .map(|(i, (_, r))| (i.to_string(), "1".to_string(), r.objective_trace.as_slice()))
        .collect();
    write_csv(&report::trace_table(&traces), &out.join("trace_b.csv"))?;
    let final_value = |r: &oed::OedResult| *r.objective_trace.last().expect("nonempty trace");
    let (best_i, (_, best)) = runs
        .iter()
        .enumerate()
        .min_by(|a, b| final_value(&a.1 .1).total_cmp(&final_value(&b.1 .1)).then(a.0.cmp(&b.0)))
        .expect("at least one start");
    let mut design = CsvTable::new(&["angle_deg"]);
    for &a in &best.p_opt {
        design.push(vec![format_g17(a)]);
    }
    write_csv(&design, &out.join("design_b.csv"))?;
    println!(
        "best start {best_i}: angles [{}], J_N {}, mse_per_pixel {}",
        fmt_list(&best.p_opt),
        format_g17(final_value(best)),
        format_g17(best.mse())
    );
    Ok(())
}

pub fn alpha_sweep(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let ts = load_dataset(cfg)?;
    let oc = cfg.oed_config()?;
    let design = cfg.list("design")?.ok_or_else(|| usage("missing required setting `design`"))?;
    let constraints = cfg.constraints("constraints")?.unwrap_or_else(|| {
        vec![
            ConstraintSpec::Unconstrained,
            ConstraintSpec::NonNegative,
            ConstraintSpec::Box { lo: 0.0, hi: 1.0 },
        ]
    });
    let (lo, hi): (f64, f64) = (cfg.get_or("alpha_min", 1e-4)?, cfg.get_or("alpha_max", 1e3)?);
    let count: usize = cfg.get_or("alpha_count", 20)?;
    if !(lo > 0.0 && hi >= lo && count > 0) {
        return Err(usage("alpha range needs 0 < alpha_min <= alpha_max and alpha_count > 0"));
    }
    let rows = oed::alpha_sweep(&ts, &design, &oc, &log_space(lo, hi, count), &constraints).map_err(from_oed)?;
    ensure_dir(out)?;
    write_csv(&report::alpha_sweep_table(&rows), &out.join("alpha_sweep.csv"))?;
    println!("{} rows ({} alphas x {} constraints)", rows.len(), count, constraints.len());
    Ok(())
}
