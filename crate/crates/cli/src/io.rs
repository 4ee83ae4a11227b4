//! On-disk artifacts: trajectory and histogram tables, field snapshots.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use bohmlab_core::experiments::NamedHistogram;
use bohmlab_core::guidance::{TrajectoryEnsemble, TrajectoryStatus};
use bohmlab_core::{Boundary, Error, GridField, Result};

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// One row per `(trajectory, time)`: `trajectory,time,x0[,x1[,x2]],status,regularized`.
pub fn write_trajectories(path: &Path, ens: &TrajectoryEnsemble) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let dims = ens.trajectories.first().map_or(0, |t| t.initial().dims());
    let mut header = vec!["trajectory".to_string(), "time".to_string()];
    header.extend((0..dims).map(|a| format!("x{a}")));
    header.extend(["status".to_string(), "regularized".to_string()]);
    w.write_record(&header).map_err(csv_error)?;
    for (i, t) in ens.trajectories.iter().enumerate() {
        let absorbed_at = match t.status {
            TrajectoryStatus::Active => f64::INFINITY,
            TrajectoryStatus::Absorbed { time } => time,
        };
        for (time, x) in t.times.iter().zip(&t.samples) {
            let mut row = vec![i.to_string(), time.to_string()];
            row.extend(x.coords().iter().map(f64::to_string));
            row.push(if *time >= absorbed_at { "absorbed" } else { "active" }.to_string());
            let frozen = t.node_events.iter().any(|e| e <= time);
            row.push((frozen as u8).to_string());
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Final position of every trajectory in a trajectory table.
pub fn read_final_positions(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header = r.headers().map_err(csv_error)?.clone();
    let coords: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('x') && h[1..].parse::<usize>().is_ok())
        .map(|(i, _)| i)
        .collect();
    if header.get(0) != Some("trajectory") || coords.is_empty() {
        return Err(Error::Schema(format!("{} is not a trajectory table", path.display())));
    }
    let mut finals: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let parse = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Schema(format!("bad number `{}` in {}", &rec[i], path.display())))
        };
        let id = parse(0)? as usize;
        let x = coords.iter().map(|&i| parse(i)).collect::<Result<Vec<_>>>()?;
        match id.cmp(&finals.len()) {
            std::cmp::Ordering::Less => finals[id] = x,
            std::cmp::Ordering::Equal => finals.push(x),
            std::cmp::Ordering::Greater => {
                return Err(Error::Schema(format!("trajectory ids in {} are not contiguous", path.display())))
            }
        }
    }
    Ok(finals)
}

/// `histogram,bin,lo,hi,value` for one-axis histograms.
pub fn write_histograms(path: &Path, hists: &[NamedHistogram]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["histogram", "bin", "lo", "hi", "value"]).map_err(csv_error)?;
    for h in hists {
        let edges = &h.histogram.edges[0];
        for (b, v) in h.histogram.values.iter().enumerate() {
            w.write_record([
                h.name.clone(),
                b.to_string(),
                edges[b].to_string(),
                edges[b + 1].to_string(),
                v.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `<stem>.bin` holds little-endian `(re, im)` f64 pairs in row-major order
/// (last axis fastest); `<stem>.txt` describes the grid.
pub fn write_field(dir: &Path, stem: &str, f: &GridField) -> Result<()> {
    let mut bin = BufWriter::new(File::create(dir.join(format!("{stem}.bin")))?);
    for z in f.amplitudes() {
        bin.write_all(&z.re.to_le_bytes())?;
        bin.write_all(&z.im.to_le_bytes())?;
    }
    bin.flush()?;
    let spec = f.spec();
    let mut txt = String::new();
    txt.push_str("format complex128-le re,im row-major last-axis-fastest\n");
    txt.push_str(&format!("time {}\n", f.time()));
    txt.push_str(&format!("dims {}\n", spec.dims()));
    for (a, ax) in spec.axes.iter().enumerate() {
        txt.push_str(&format!("axis {a} min {} max {} points {}\n", ax.min, ax.max, ax.points));
    }
    let boundary = match spec.boundary {
        Boundary::Periodic => "periodic",
        Boundary::AbsorbingLayer => "absorbing-layer",
    };
    txt.push_str(&format!("boundary {boundary}\n"));
    std::fs::write(dir.join(format!("{stem}.txt")), txt)?;
    Ok(())
}
