//! Plain-text output: trajectory and control CSV, JSON-lines history.
//!
//! A trajectory file starts with one comment line describing the grid,
//! `# grid <x_min> <x_max> <n_cells> <dt> <n_steps>` (or `# point <dt> <n_steps>`
//! for the scalar problem), followed by one row `t, v_0, ..., v_{n-1}` per
//! snapshot. Floats are written in shortest round-trip form, so reading a
//! file back reproduces the values bit for bit.

use std::io::{BufRead, BufReader, Read, Write};

use serde::Serialize;

use crate::dynamics::{ControlField, Model, PathTrajectory};
use crate::error::{Error, Result};
use crate::grid::{Domain, SpatialGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesCsv {
    pub domain: Domain,
    pub dt: f64,
    pub n_steps: usize,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

fn header(domain: &Domain, dt: f64, n_steps: usize) -> String {
    match domain {
        Domain::Interval(g) => format!(
            "# grid {} {} {} {} {}\n",
            g.x_min, g.x_max, g.n_cells, dt, n_steps
        ),
        Domain::Point => format!("# point {dt} {n_steps}\n"),
    }
}

fn write_rows<W: Write>(
    mut out: W,
    head: &str,
    rows: impl Iterator<Item = (f64, Vec<f64>)>,
) -> Result<()> {
    out.write_all(head.as_bytes())?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    for (t, values) in rows {
        let mut record = Vec::with_capacity(values.len() + 1);
        record.push(t.to_string());
        record.extend(values.iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every snapshot `u(t_n)`, `n = 0..=N`.
pub fn write_trajectory<W: Write>(out: W, model: &Model, path: &PathTrajectory) -> Result<()> {
    let dt = model.dt();
    let rows = path
        .snapshots()
        .enumerate()
        .map(|(n, u)| (n as f64 * dt, u.to_vec()));
    write_rows(out, &header(model.domain(), dt, path.n_steps), rows)
}

/// Writes one row per step `g_n`, timestamped at the left end of the step.
pub fn write_control<W: Write>(out: W, model: &Model, g: &ControlField) -> Result<()> {
    let dt = model.dt();
    let rows = (0..g.n_steps).map(|n| (n as f64 * dt, g.slice(n).to_vec()));
    write_rows(out, &header(model.domain(), dt, g.n_steps), rows)
}

fn parse_header(line: &str) -> Result<(Domain, f64, usize)> {
    let bad = || Error::config(format!("malformed header line '{}'", line.trim_end()));
    let fields: Vec<&str> = line.split_whitespace().collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
    let int = |s: &str| s.parse::<usize>().map_err(|_| bad());
    match fields.as_slice() {
        ["#", "grid", a, b, n, dt, steps] => Ok((
            Domain::Interval(SpatialGrid::new(num(a)?, num(b)?, int(n)?)?),
            num(dt)?,
            int(steps)?,
        )),
        ["#", "point", dt, steps] => Ok((Domain::Point, num(dt)?, int(steps)?)),
        _ => Err(bad()),
    }
}

pub fn read_time_series<R: Read>(input: R) -> Result<TimeSeriesCsv> {
    let mut input = BufReader::new(input);
    let mut first = String::new();
    input.read_line(&mut first)?;
    let (domain, dt, n_steps) = parse_header(&first)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(input);
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let mut values = record.iter().map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad number '{s}'")))
        });
        let t = values.next().ok_or_else(|| Error::config("empty row"))??;
        let row = values.collect::<Result<Vec<f64>>>()?;
        domain.check_len(row.len())?;
        times.push(t);
        rows.push(row);
    }
    Ok(TimeSeriesCsv {
        domain,
        dt,
        n_steps,
        times,
        rows,
    })
}

/// Writes one JSON object per line.
pub fn write_json_lines<W: Write, T: Serialize>(mut out: W, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
