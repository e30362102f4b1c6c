//! Tables and images for experiment outputs. Every number is written with
//! [`format_g17`], so equal results give byte-identical files.

use crate::io::{format_g17, CsvTable};
use crate::oed::{AlphaSweepRow, BetaSweepRow, Landscape, OedResult};

fn join_g17(values: &[f64]) -> String {
    values.iter().map(|&v| format_g17(v)).collect::<Vec<_>>().join(" ")
}

/// `p1_deg,p2_deg,<objective>` with one row per scanned cell.
pub fn landscape_table(scan: &Landscape, objective: &str) -> CsvTable {
    let mut t = CsvTable::new(&["p1_deg", "p2_deg", objective]);
    for c in &scan.cells {
        t.push(vec![format_g17(c.p1), format_g17(c.p2), format_g17(c.value)]);
    }
    t
}

/// Square heatmap over the scan angles (row `p1`, column `p2`), mirrored
/// across the diagonal. Returns the side length and row-major values.
pub fn landscape_heatmap(scan: &Landscape) -> (usize, Vec<f64>) {
    let angles = crate::oed::scan_angles(scan.step);
    let k = angles.len();
    let mut values = vec![f64::NAN; k * k];
    for c in &scan.cells {
        let i = (c.p1 / scan.step).round() as usize;
        let j = (c.p2 / scan.step).round() as usize;
        values[i * k + j] = c.value;
        values[j * k + i] = c.value;
    }
    (k, values)
}

/// The `count` best cells: `rank,p1_deg,p2_deg,<objective>`.
pub fn best_cells_table(scan: &Landscape, count: usize, objective: &str) -> CsvTable {
    let mut t = CsvTable::new(&["rank", "p1_deg", "p2_deg", objective]);
    for (r, c) in scan.best(count).iter().enumerate() {
        t.push(vec![(r + 1).to_string(), format_g17(c.p1), format_g17(c.p2), format_g17(c.value)]);
    }
    t
}

pub fn alpha_sweep_table(rows: &[AlphaSweepRow]) -> CsvTable {
    let mut t = CsvTable::new(&["alpha", "constraint", "mse_per_pixel"]);
    for r in rows {
        t.push(vec![format_g17(r.alpha), r.constraint.clone(), format_g17(r.mse)]);
    }
    t
}

/// `beta,num_angles,support_angles_deg,weights,mse_per_pixel`; angle and
/// weight lists are space separated.
pub fn beta_sweep_table(rows: &[BetaSweepRow]) -> CsvTable {
    let mut t = CsvTable::new(&["beta", "num_angles", "support_angles_deg", "weights", "mse_per_pixel"]);
    for r in rows {
        t.push(vec![
            format_g17(r.beta),
            r.support_angles.len().to_string(),
            join_g17(&r.support_angles),
            join_g17(&r.weights),
            format_g17(r.mse),
        ]);
    }
    t
}

/// Problem-A design on the full grid: `angle_deg,phase1_weight,weight,in_support`.
pub fn design_a_table(res: &OedResult) -> CsvTable {
    let mut t = CsvTable::new(&["angle_deg", "phase1_weight", "weight", "in_support"]);
    for (k, &a) in res.angles.iter().enumerate() {
        t.push(vec![
            format_g17(a),
            format_g17(res.phase1_weights[k]),
            format_g17(res.p_opt[k]),
            u8::from(res.support.contains(&k)).to_string(),
        ]);
    }
    t
}

/// Objective per accepted outer step: `run,phase,iteration,objective_J_N`,
/// from `(run, phase, trace)` triples.
pub fn trace_table(runs: &[(String, String, &[f64])]) -> CsvTable {
    let mut t = CsvTable::new(&["run", "phase", "iteration", "objective_J_N"]);
    for (run, phase, trace) in runs {
        for (i, &v) in trace.iter().enumerate() {
            t.push(vec![run.clone(), phase.clone(), i.to_string(), format_g17(v)]);
        }
    }
    t
}

/// One row per Problem-B start:
/// `start,initial_angles_deg,angles_deg,objective_J_N,mse_per_pixel,iterations`.
pub fn starts_table(runs: &[(Vec<f64>, OedResult)]) -> CsvTable {
    let mut t = CsvTable::new(&[
        "start",
        "initial_angles_deg",
        "angles_deg",
        "objective_J_N",
        "mse_per_pixel",
        "iterations",
    ]);
    for (i, (p0, res)) in runs.iter().enumerate() {
        t.push(vec![
            i.to_string(),
            join_g17(p0),
            join_g17(&res.p_opt),
            format_g17(*res.objective_trace.last().expect("trace holds the start value")),
            format_g17(res.mse()),
            (res.objective_trace.len() - 1).to_string(),
        ]);
    }
    t
}
