//! Artifact writers. Floats in CSV files carry 17 significant digits.

use std::fs;
use std::path::Path;

use canomap::hamilton::hamiltonian;
use canomap::mapping::CanonicityReport;
use canomap::{DynamicSystem, Trajectory};

use crate::CliError;

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// `t, x_1..x_n, lam_1..lam_n, H`.
pub fn write_trajectory(path: &Path, sys: &DynamicSystem, traj: &Trajectory) -> Result<(), CliError> {
    let n = sys.dim();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=n).map(|i| format!("lam_{i}")));
    header.push("H".into());
    w.write_record(&header)?;
    for s in &traj.samples {
        let mut row = vec![float(s.t)];
        row.extend(s.x.iter().map(|v| float(*v)));
        row.extend(s.lam.iter().map(|v| float(*v)));
        row.push(float(hamiltonian(sys, s)?));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `t, residual, det_y, det_mu`.
pub fn write_canonicity(path: &Path, rep: &CanonicityReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "residual", "det_y", "det_mu"])?;
    for k in 0..rep.times.len() {
        w.write_record([
            float(rep.times[k]),
            float(rep.residual_series[k]),
            float(rep.det_y[k]),
            float(rep.det_mu[k]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Gnuplot script plotting the phase coordinates and the criterion residual.
pub fn write_plot(path: &Path, n: usize) -> Result<(), CliError> {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\nset multiplot layout 2,1\n");
    let cols: Vec<String> = (0..n)
        .map(|i| format!("'trajectory.csv' using 1:{} with lines", i + 2))
        .collect();
    s.push_str(&format!("plot {}\n", cols.join(", ")));
    s.push_str("set logscale y\nplot 'canonicity.csv' using 1:($2+1e-300) with lines title 'residual'\nunset multiplot\n");
    fs::write(path, s)?;
    Ok(())
}
