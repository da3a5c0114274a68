//! Stroboscopic Poincaré sections of periodically forced systems.

use std::collections::HashSet;
use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::evaluate::{ModelField, VectorField};
use crate::integrate::{collocation_flow_step, fmt_f64, CollocationTableau};
use crate::model::SphsModel;
use crate::{Error, Result};

/// Shortest trajectory accepted, in forcing periods.
pub const MIN_PERIODS: f64 = 50.0;
/// Periods discarded as transient by default.
pub const DEFAULT_TRANSIENT: usize = 10;

fn check_period(period: f64) -> Result<()> {
    if !(period.is_finite() && period > 0.0) {
        return Err(Error::config("period", "forcing period must be positive and finite"));
    }
    Ok(())
}

/// Sample a stored trajectory at `t = t₀ + k·period`, interpolating linearly
/// between grid points and dropping the first `transient` periods.
pub fn poincare_section(
    times: &[f64],
    states: &[DVector<f64>],
    period: f64,
    transient: usize,
) -> Result<Vec<DVector<f64>>> {
    check_period(period)?;
    if times.len() != states.len() || times.len() < 2 {
        return Err(Error::config("trajectory", "times and states must match and hold at least two samples"));
    }
    let (t0, t_end) = (times[0], *times.last().expect("non-empty"));
    if t_end - t0 < MIN_PERIODS * period * (1.0 - 1e-12) {
        return Err(Error::config(
            "horizon",
            format!("trajectory spans {:.3} periods; at least {MIN_PERIODS} are required", (t_end - t0) / period),
        ));
    }
    let mut out = Vec::new();
    let mut i = 0;
    let mut k = transient;
    loop {
        let target = t0 + k as f64 * period;
        if target > t_end + 1e-9 * period {
            break;
        }
        while i + 1 < times.len() - 1 && times[i + 1] < target {
            i += 1;
        }
        let (ta, tb) = (times[i], times[i + 1]);
        let w = if tb > ta { ((target - ta) / (tb - ta)).clamp(0.0, 1.0) } else { 0.0 };
        out.push(&states[i] * (1.0 - w) + &states[i + 1] * w);
        k += 1;
    }
    Ok(out)
}

/// Integrate a deterministic field with a step that divides the period, so
/// section points fall on the grid; only section points are kept.
#[allow(clippy::too_many_arguments)]
pub fn field_section(
    field: &dyn VectorField,
    x0: &DVector<f64>,
    period: f64,
    n_periods: usize,
    steps_per_period: usize,
    stages: usize,
    transient: usize,
) -> Result<Vec<DVector<f64>>> {
    check_period(period)?;
    if (n_periods as f64) < MIN_PERIODS {
        return Err(Error::config("n_periods", format!("at least {MIN_PERIODS} periods are required")));
    }
    if steps_per_period == 0 {
        return Err(Error::config("steps_per_period", "must be positive"));
    }
    let tableau = CollocationTableau::gauss(stages)
        .ok_or_else(|| Error::config("stages", "collocation supports 1 to 3 stages"))?;
    let h = period / steps_per_period as f64;
    let f = |t: f64, x: &DVector<f64>, out: &mut DVector<f64>| field.derivative(t, x, out);
    let mut x = x0.clone();
    let mut out = Vec::new();
    if transient == 0 {
        out.push(x.clone());
    }
    for k in 1..=n_periods {
        for s in 0..steps_per_period {
            let t = (k - 1) as f64 * period + s as f64 * h;
            x = collocation_flow_step(&f, &tableau, t, h, &x, 1e-12, 200)?;
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::numeric(format!("section rollout diverged in period {k}"), x.as_slice()));
            }
        }
        if k >= transient {
            out.push(x.clone());
        }
    }
    Ok(out)
}

/// Section of a model's deterministic drift under its default input,
/// integrated with two-stage collocation.
pub fn model_section(
    model: &SphsModel,
    x0: &DVector<f64>,
    period: f64,
    n_periods: usize,
    steps_per_period: usize,
) -> Result<Vec<DVector<f64>>> {
    model.check_state(x0)?;
    field_section(&ModelField(model), x0, period, n_periods, steps_per_period, 2, DEFAULT_TRANSIENT)
}

/// Spread of a point cloud.
///
/// `distinct` counts points after rounding every coordinate to `1e-3`.
/// `clusters` greedily assigns each point to the first leader within
/// `radius = radius_fraction × diameter` and opens a new leader otherwise,
/// so a cloud that collapses onto `c` attractor points gives `clusters ≈ c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub n_points: usize,
    pub distinct: usize,
    pub diameter: f64,
    pub radius: f64,
    pub clusters: usize,
}

pub fn dispersion(points: &[DVector<f64>], radius_fraction: f64) -> Dispersion {
    let distinct = points
        .iter()
        .map(|p| p.iter().map(|v| (v * 1e3).round() as i64).collect::<Vec<_>>())
        .collect::<HashSet<_>>()
        .len();
    let mut diameter: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            diameter = diameter.max((a - b).norm());
        }
    }
    let radius = radius_fraction * diameter;
    let mut leaders: Vec<&DVector<f64>> = Vec::new();
    for p in points {
        if !leaders.iter().any(|l| (*l - p).norm() <= radius) {
            leaders.push(p);
        }
    }
    Dispersion {
        n_points: points.len(),
        distinct,
        diameter,
        radius,
        clusters: leaders.len(),
    }
}

/// Write section points as `index,q…,p…`.
pub fn write_section_csv(points: &[DVector<f64>], mut w: impl Write) -> Result<()> {
    let n = points.first().map_or(2, |p| p.len());
    let dof = n / 2;
    let mut header = vec!["index".to_string()];
    header.extend((1..=dof).map(|i| format!("q{i}")));
    header.extend((1..=n - dof).map(|i| format!("p{i}")));
    writeln!(w, "{}", header.join(","))?;
    for (k, p) in points.iter().enumerate() {
        let cols: Vec<String> = p.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{k},{}", cols.join(","))?;
    }
    Ok(())
}
