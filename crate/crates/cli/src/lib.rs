//! Scenario files, presets, run orchestration and artifact output for the
//! `bohmlab` command.

pub mod io;
pub mod plot;
pub mod runner;
pub mod scenario;

use std::path::Path;

use bohmlab_core::{Error, Result};

/// Which artifacts a run writes besides `report.json`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Emit {
    pub trajectories: bool,
    pub histograms: bool,
    pub fields: bool,
    pub plots: bool,
    pub timing: bool,
}

impl Default for Emit {
    fn default() -> Self {
        Emit {
            trajectories: true,
            histograms: true,
            fields: false,
            plots: false,
            timing: true,
        }
    }
}

impl Emit {
    pub const NONE: Emit = Emit {
        trajectories: false,
        histograms: false,
        fields: false,
        plots: false,
        timing: false,
    };

    /// Comma-separated list of `trajectories`, `histograms`, `fields`,
    /// `plots`, `timing`, or `all` / `none`.
    pub fn parse(s: &str) -> Result<Emit> {
        let mut e = Emit::NONE;
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match item {
                "none" => {}
                "all" => {
                    e = Emit {
                        trajectories: true,
                        histograms: true,
                        fields: true,
                        plots: true,
                        timing: true,
                    }
                }
                "trajectories" => e.trajectories = true,
                "histograms" => e.histograms = true,
                "fields" => e.fields = true,
                "plots" => e.plots = true,
                "timing" => e.timing = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown emit flag `{other}` (expected trajectories, histograms, fields, plots, timing, all or none)"
                    )))
                }
            }
        }
        Ok(e)
    }
}

/// Writes `report.json` and the requested artifacts into `dir`.
pub fn write_artifacts(out: &runner::RunOutput, dir: &Path, emit: Emit) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let report = serde_json::to_string_pretty(&out.report).expect("report is serializable");
    std::fs::write(dir.join("report.json"), report + "\n")?;
    if emit.trajectories {
        io::write_trajectories(&dir.join("trajectories.csv"), &out.ensemble)?;
    }
    if emit.histograms && !out.histograms.is_empty() {
        io::write_histograms(&dir.join("histograms.csv"), &out.histograms)?;
    }
    if emit.fields {
        if let Some(f) = &out.field {
            io::write_field(dir, "field", f)?;
        }
    }
    if emit.plots {
        let plots = dir.join("plots");
        std::fs::create_dir_all(&plots)?;
        for h in out.histograms.iter().filter(|h| !h.name.ends_with("-quadrature") && !h.name.ends_with("-conditional")) {
            let stem = h.name.trim_end_matches("-empirical");
            let partner = out
                .histograms
                .iter()
                .find(|o| o.name == format!("{stem}-quadrature") || o.name == format!("{stem}-conditional"));
            plot::histogram(&plots.join(format!("{stem}.svg")), h, partner)?;
        }
        plot::trajectory_fan(&plots.join("trajectories.svg"), &out.ensemble, out.fan_axis, 200)?;
    }
    if emit.timing {
        let timing = serde_json::json!({ "elapsed_seconds": out.elapsed.as_secs_f64() });
        std::fs::write(dir.join("timing.json"), timing.to_string() + "\n")?;
    }
    Ok(())
}
