//! CSV and JSON artifacts shared by the experiments and the command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{StateVec, Trajectory};
use crate::environment::Episode;
use crate::error::{Error, Result};
use crate::ocp::OcSolution;

pub const MANIFEST_NAME: &str = "manifest.json";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn state_fields(x: &StateVec<f64>) -> [String; 4] {
    [x.n.to_string(), x.t.to_string(), x.i.to_string(), x.c.to_string()]
}

/// `t,N,T,I,C,u`; the last row has no dose.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "N", "T", "I", "C", "u"])?;
    for (k, (t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
        let [n, tt, i, c] = state_fields(x);
        w.write_record([t.to_string(), n, tt, i, c, opt(traj.controls.get(k).copied())])?;
    }
    w.flush()?;
    Ok(())
}

/// `t,N,T,I,C,u,reward`; dose and reward of row `k` cover the step leaving it.
pub fn write_episode_csv<W: Write>(ep: &Episode, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "N", "T", "I", "C", "u", "reward"])?;
    for (k, (t, x)) in ep.times.iter().zip(&ep.states).enumerate() {
        let [n, tt, i, c] = state_fields(x);
        w.write_record([
            t.to_string(),
            n,
            tt,
            i,
            c,
            opt(ep.doses.get(k).copied()),
            opt(ep.rewards.get(k).copied()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Collocation nodes and midpoints as `t,N,T,I,C,u`.
pub fn write_oc_solution_csv<W: Write>(sol: &OcSolution, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "N", "T", "I", "C", "u"])?;
    for (t, x, u) in sol.samples() {
        let [n, tt, i, c] = state_fields(&x);
        w.write_record([t.to_string(), n, tt, i, c, u.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a `t,N,T,I,C,u` file back into times, states and doses.
pub fn read_trajectory_csv<R: std::io::Read>(input: R) -> Result<Trajectory> {
    let mut r = csv::Reader::from_reader(input);
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        controls: Vec::new(),
        cure_time: None,
        saturated: false,
    };
    for rec in r.records() {
        let rec = rec?;
        let field = |k: usize| -> Result<f64> {
            rec.get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("missing column {k}")))?
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(e.to_string()))
        };
        traj.times.push(field(0)?);
        traj.states.push(StateVec::new(field(1)?, field(2)?, field(3)?, field(4)?));
        if rec.get(5).is_some_and(|s| !s.is_empty()) {
            traj.controls.push(field(5)?);
        }
    }
    Ok(traj)
}

/// Record of one command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Files written next to the manifest, in creation order.
    pub files: Vec<String>,
    pub wall_time_s: f64,
}

/// Output directory that remembers every file written into it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn register(&mut self, name: &str) -> Result<PathBuf> {
        if name == MANIFEST_NAME || name.contains(['/', '\\']) {
            return Err(Error::InvalidArgument(format!("invalid output file name {name:?}")));
        }
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(self.root.join(name))
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.register(name)?;
        fs::write(&path, bytes)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes whatever `fill` produces into `name`.
    pub fn write_with(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    pub fn finish(self, command: &str, seed: u64, config: serde_json::Value, wall_time_s: f64) -> Result<Manifest> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
            files: self.files,
            wall_time_s,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.root.join(MANIFEST_NAME), text)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, ConstantDose, PatientParams, SimOptions};

    fn short_run() -> Trajectory {
        let opts = SimOptions { max_days: 0.9, ..SimOptions::default() };
        simulate(&PatientParams::nominal(), &ConstantDose(2.5), StateVec::diagnosis(), &opts).unwrap()
    }

    #[test]
    fn trajectory_csv_layout() {
        let traj = short_run();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,N,T,I,C,u");
        assert_eq!(lines.len(), traj.len() + 1);
        assert_eq!(lines[1], "0,1,0.7,1,0,2.5");
        assert!(lines.last().unwrap().ends_with(','));
        let back = read_trajectory_csv(text.as_bytes()).unwrap();
        assert_eq!(back.times, traj.times);
        assert_eq!(back.states, traj.states);
        assert_eq!(back.controls, traj.controls);
    }

    #[test]
    fn output_dir_tracks_files() {
        let root = std::env::temp_dir().join(format!("chemo-io-{}", std::process::id()));
        let mut dir = OutputDir::create(&root).unwrap();
        dir.write_bytes("a.csv", b"x\n").unwrap();
        dir.write_json("b.json", &[1, 2]).unwrap();
        dir.write_bytes("a.csv", b"y\n").unwrap();
        assert!(dir.write_bytes(MANIFEST_NAME, b"{}").is_err());
        assert!(dir.write_bytes("../escape", b"").is_err());
        let m = dir.finish("test", 3, serde_json::json!({"k": 1}), 0.0).unwrap();
        assert_eq!(m.files, vec!["a.csv", "b.json"]);
        let back: Manifest = serde_json::from_str(&fs::read_to_string(root.join(MANIFEST_NAME)).unwrap()).unwrap();
        assert_eq!(back, m);
        fs::remove_dir_all(root).unwrap();
    }
}
