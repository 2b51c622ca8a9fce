//! CSV tables, demo datasets and run manifests.

use std::fmt::Write as _;
use std::path::Path;

use crate::envs::{Mode, TrajStep, Trajectory};
use crate::Error;

use super::checkpoint::checksum;

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// A header plus string rows; every cell of a numeric column is written
/// with the shortest representation that parses back to the same value.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Result<usize, Error> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing column {name:?}")))
    }

    /// Column `name` parsed as numbers; empty cells become NaN.
    pub fn numbers(&self, name: &str) -> Result<Vec<f32>, Error> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .map(|r| {
                let cell = r[c].trim();
                if cell.is_empty() {
                    return Ok(f32::NAN);
                }
                cell.parse()
                    .map_err(|_| Error::Format(format!("column {name:?}: bad number {cell:?}")))
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<(), Error> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, Error> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let header = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()).map_err(csv_err))
            .collect::<Result<_, _>>()?;
        Ok(Self { header, rows })
    }
}

/// Formats an optional number, leaving the cell empty when absent.
pub fn opt_cell(v: Option<f32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const DEMO_HEADER: [&str; 9] = ["traj", "mode", "success", "step", "x", "y", "ax", "ay", "reward"];

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::NarrowGate => "narrow",
        Mode::WideGate => "wide",
    }
}

fn parse_mode(s: &str) -> Result<Mode, Error> {
    match s {
        "narrow" => Ok(Mode::NarrowGate),
        "wide" => Ok(Mode::WideGate),
        _ => Err(Error::Format(format!("unknown demo mode {s:?}"))),
    }
}

/// One row per step plus a closing row holding the final observation with
/// empty action and reward cells.
pub fn write_demos(path: &Path, trajectories: &[Trajectory], modes: &[Mode]) -> Result<(), Error> {
    let mut t = Table::new(&DEMO_HEADER);
    for (i, (traj, &mode)) in trajectories.iter().zip(modes).enumerate() {
        let head = [i.to_string(), mode_name(mode).to_string(), traj.success.to_string()];
        for (j, st) in traj.steps.iter().enumerate() {
            let mut row = head.to_vec();
            row.extend([
                j.to_string(),
                st.obs[0].to_string(),
                st.obs[1].to_string(),
                st.action[0].to_string(),
                st.action[1].to_string(),
                st.reward.to_string(),
            ]);
            t.push(row);
        }
        let mut row = head.to_vec();
        row.extend([
            traj.steps.len().to_string(),
            traj.final_obs[0].to_string(),
            traj.final_obs[1].to_string(),
            String::new(),
            String::new(),
            String::new(),
        ]);
        t.push(row);
    }
    t.write(path)
}

fn cell<T: std::str::FromStr>(row: &[String], i: usize) -> Result<T, Error> {
    row[i]
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad demo cell {:?} in column {}", row[i], DEMO_HEADER[i])))
}

/// Inverse of [`write_demos`]; returns are recomputed with `gamma`.
pub fn read_demos(path: &Path, gamma: f32) -> Result<(Vec<Trajectory>, Vec<Mode>), Error> {
    let t = Table::read(path)?;
    if t.header != DEMO_HEADER {
        return Err(Error::Format("demo file has an unexpected header".into()));
    }
    let mut trajs = Vec::new();
    let mut modes = Vec::new();
    let mut steps: Vec<TrajStep> = Vec::new();
    for row in &t.rows {
        let traj: usize = cell(row, 0)?;
        let step: usize = cell(row, 3)?;
        if traj != trajs.len() || step != steps.len() {
            return Err(Error::Format(format!("demo rows out of order at trajectory {traj} step {step}")));
        }
        let obs = [cell(row, 4)?, cell(row, 5)?];
        if row[6].is_empty() {
            let success: bool = cell(row, 2)?;
            trajs.push(Trajectory::new(std::mem::take(&mut steps), obs, success, gamma));
            modes.push(parse_mode(&row[1])?);
        } else {
            steps.push(TrajStep {
                obs,
                action: [cell(row, 6)?, cell(row, 7)?],
                reward: cell(row, 8)?,
            });
        }
    }
    if !steps.is_empty() {
        return Err(Error::Format("last demonstration has no closing row".into()));
    }
    Ok((trajs, modes))
}

/// Resolved config, seed and checksums of every input file; contains
/// nothing time-dependent.
pub fn write_manifest(path: &Path, command: &str, seed: u64, config_text: &str, inputs: &[&Path]) -> Result<(), Error> {
    let mut out = String::new();
    let _ = writeln!(out, "command = {command}");
    let _ = writeln!(out, "seed = {seed}");
    for p in inputs {
        let bytes = std::fs::read(p)?;
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let _ = writeln!(out, "input {name} = {:016x}", checksum(&bytes));
    }
    out.push_str("\n# resolved config\n");
    out.push_str(config_text);
    std::fs::write(path, out)?;
    Ok(())
}
