//! Flat-file formats: parameter files, trial and point-cloud CSVs, segment
//! and waypoint CSVs, PGM grids.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use crate::dynamics::{ActuatorState, Param, ParamSet, VesselState};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::perception::{LineSegment, OccupancyGrid, PointCloud};
use crate::sysid::{simulate_rollout, TrialDataset, TrialKind};

const EXTRA_KEYS: [&str; 2] = ["l_y", "delta_max_deg"];

/// `key = value` lines; floats use the shortest exact representation.
pub fn format_params(p: &ParamSet) -> String {
    let mut out = String::new();
    for which in Param::ALL {
        let _ = writeln!(out, "{} = {}", which.key(), p.get(which));
    }
    let _ = writeln!(out, "l_y = {}", p.l_y);
    let _ = writeln!(out, "delta_max_deg = {}", p.delta_max.to_degrees());
    out
}

/// Parses [`format_params`] output. Blank lines and `#` comments are
/// skipped; every key must appear exactly once.
pub fn parse_params(text: &str) -> Result<ParamSet> {
    let mut p = ParamSet::reference_boat();
    let mut seen: Vec<&str> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim();
        let value: f64 = value.trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("`{}` is not a number", value.trim()),
        })?;
        let canonical = Param::ALL
            .iter()
            .map(|w| w.key())
            .chain(EXTRA_KEYS)
            .find(|k| *k == key)
            .ok_or_else(|| Error::Parse {
                line,
                msg: format!("unknown key `{key}`"),
            })?;
        if seen.contains(&canonical) {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate key `{key}`"),
            });
        }
        seen.push(canonical);
        match canonical {
            "l_y" => p.l_y = value,
            "delta_max_deg" => p.delta_max = value.to_radians(),
            _ => {
                let which = Param::ALL.into_iter().find(|w| w.key() == canonical).unwrap();
                p.set(which, value);
            }
        }
    }
    let missing: Vec<&str> = Param::ALL
        .iter()
        .map(|w| w.key())
        .chain(EXTRA_KEYS)
        .filter(|k| !seen.contains(k))
        .collect();
    if !missing.is_empty() {
        return Err(Error::InvalidParameters(format!(
            "missing keys: {}",
            missing.join(", ")
        )));
    }
    p.validate()?;
    Ok(p)
}

pub fn read_params(path: &Path) -> Result<ParamSet> {
    parse_params(&fs::read_to_string(path)?)
}

pub fn write_params(path: &Path, p: &ParamSet) -> Result<()> {
    fs::write(path, format_params(p))?;
    Ok(())
}

const TRIAL_HEADER: [&str; 9] = ["t", "x", "y", "psi", "u", "v", "r", "n_T", "n_S"];

/// One row per state; the actuator columns hold the command applied over
/// the following interval (the last row repeats the final command).
pub fn write_trial_csv<W: std::io::Write>(w: W, data: &TrialDataset) -> Result<()> {
    data.validate()?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(TRIAL_HEADER)?;
    for (k, (t, s)) in data.times.iter().zip(&data.states).enumerate() {
        let a = data.inputs[k.min(data.inputs.len() - 1)];
        wtr.write_record([*t, s.x, s.y, s.psi, s.u, s.v, s.r, a.throttle, a.steering].map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_trial_csv<R: Read>(r: R, kind: TrialKind) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != TRIAL_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {}, got {}", TRIAL_HEADER.join(","), header.join(",")),
        });
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut acts = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let v = parse_row::<9>(&rec, line)?;
        times.push(v[0]);
        states.push(VesselState::new(v[1], v[2], v[3], v[4], v[5], v[6]));
        acts.push(ActuatorState::new(v[7], v[8]));
    }
    acts.pop();
    let data = TrialDataset {
        kind,
        times,
        states,
        inputs: acts,
    };
    data.validate()?;
    Ok(data)
}

pub fn read_trial_file(path: &Path, kind: TrialKind) -> Result<TrialDataset> {
    read_trial_csv(fs::File::open(path)?, kind)
}

pub fn write_trial_file(path: &Path, data: &TrialDataset) -> Result<()> {
    write_trial_csv(fs::File::create(path)?, data)
}

fn parse_row<const N: usize>(rec: &csv::StringRecord, line: usize) -> Result<[f64; N]> {
    if rec.len() != N {
        return Err(Error::Parse {
            line,
            msg: format!("expected {N} fields, got {}", rec.len()),
        });
    }
    let mut out = [0.0; N];
    for (o, field) in out.iter_mut().zip(rec.iter()) {
        *o = field.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("`{field}` is not a number"),
        })?;
    }
    Ok(out)
}

/// Open-loop rollout errors of `fitted` against each trial.
pub fn write_residual_csv<W: std::io::Write>(w: W, data: &[TrialDataset], fitted: &ParamSet) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["trial", "kind", "t", "e_x", "e_y", "e_psi", "e_u", "e_v", "e_r"])?;
    for (i, d) in data.iter().enumerate() {
        let sim = simulate_rollout(&d.states[0], &d.inputs, fitted, d.dt())?;
        for ((t, m), s) in d.times.iter().zip(&d.states).zip(&sim) {
            let mut row = vec![i.to_string(), d.kind.as_str().to_string(), t.to_string()];
            let e = [
                s.x - m.x,
                s.y - m.y,
                crate::dynamics::wrap_angle(s.psi - m.psi),
                s.u - m.u,
                s.v - m.v,
                s.r - m.r,
            ];
            row.extend(e.iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads `x,y,z` rows; a header line is optional.
pub fn read_point_cloud<R: Read>(r: R) -> Result<PointCloud> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(r);
    let mut pts = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if i == 0 && rec.iter().next().is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        pts.push(parse_row::<3>(&rec, i + 1)?);
    }
    Ok(PointCloud::new(pts))
}

pub fn write_point_cloud<W: std::io::Write>(w: W, cloud: &PointCloud) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["x", "y", "z"])?;
    for p in &cloud.points {
        wtr.write_record(p.map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_segments<W: std::io::Write>(w: W, segs: &[LineSegment]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["x_c", "y_c", "theta", "l"])?;
    for s in segs {
        wtr.write_record([s.x_c, s.y_c, s.theta, s.length].map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_segments<R: Read>(r: R) -> Result<Vec<LineSegment>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let v = parse_row::<4>(&rec?, i + 2)?;
        out.push(LineSegment::new(v[0], v[1], v[2], v[3]));
    }
    Ok(out)
}

pub fn write_waypoints<W: std::io::Write>(w: W, pts: &[Point]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["x", "y"])?;
    for p in pts {
        wtr.write_record([p.x.to_string(), p.y.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Plain (ASCII) PGM, occupied cells black, top row at the largest y.
pub fn grid_to_pgm(grid: &OccupancyGrid) -> String {
    let mut out = format!("P2\n{} {}\n255\n", grid.width, grid.height);
    for j in (0..grid.height).rev() {
        let row: Vec<&str> = (0..grid.width)
            .map(|i| if grid.is_occupied(i, j) { "0" } else { "255" })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}
