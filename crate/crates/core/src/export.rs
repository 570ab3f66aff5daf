//! Plain-text output helpers shared by the CSV writers.

use std::io::Write;

use crate::error::Result;
use crate::lattice::Trajectory;

/// Shortest decimal string that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Optional value: empty field when absent.
pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Trajectory table with header `t,v_<first>,...,v_<last>`.
///
/// Snapshots taken after a window shift keep their own layer labels only if
/// they match the first snapshot, so recentred runs are not accepted here.
pub fn write_trajectory_csv<W: Write>(trajectory: &Trajectory, mut out: W) -> Result<()> {
    let Some(first) = trajectory.snapshots.first() else {
        writeln!(out, "t")?;
        return Ok(());
    };
    let mut header = String::from("t");
    for (j, _) in first.layers() {
        header.push_str(&format!(",v_{j}"));
    }
    writeln!(out, "{header}")?;
    for state in &trajectory.snapshots {
        if state.first_layer != first.first_layer || state.values.len() != first.values.len() {
            return Err(crate::Error::InvalidSettings(
                "snapshots do not share one layer window".into(),
            ));
        }
        let mut line = fmt_f64(state.t);
        for v in &state.values {
            line.push(',');
            line.push_str(&fmt_f64(*v));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Metadata written next to a trajectory table.
pub fn trajectory_sidecar(trajectory: &Trajectory) -> serde_json::Value {
    serde_json::json!({
        "params": trajectory.params,
        "topology": trajectory.topology,
        "input": trajectory.input,
        "dt": trajectory.settings.dt,
        "t_end": trajectory.settings.t_end,
        "sample_every": trajectory.settings.sample_every,
        "method": trajectory.settings.method,
        "guard": trajectory.settings.guard,
        "guard_triggered": trajectory.guard_triggered,
        "samples": trajectory.snapshots.len(),
    })
}
