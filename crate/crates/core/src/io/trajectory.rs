//! Columnar text format for rollouts.
//!
//! ```text
//! # flocklab-trajectory v1
//! # config_hash 3f9a0c1d22e4b7a1
//! # controller expert
//! # seed 1000
//! # agents 50
//! # steps 100
//! t agent rx ry vx vy ux uy ex ey degree
//! 0 0 1.25 -0.5 2.1 0.3 -4 1.5 -4 1.5 3
//! ```
//!
//! One row per (step, agent). `u` is the executed acceleration, `e` the
//! expert's, and `degree` the agent's neighbor count at that step. Numbers
//! use the shortest representation that parses back to the same `f64`.
//! An optional `# hash_mismatch` line flags a checkpoint trained under a
//! different config.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::training::Trajectory;
use crate::vec2::Vec2;

pub const TRAJECTORY_MAGIC: &str = "# flocklab-trajectory";
pub const TRAJECTORY_VERSION: u32 = 1;
pub const COLUMNS: &str = "t agent rx ry vx vy ux uy ex ey degree";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: usize,
    pub agent: usize,
    pub position: Vec2,
    pub velocity: Vec2,
    pub executed: Vec2,
    pub expert: Vec2,
    pub degree: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryFile {
    pub config_hash: String,
    pub controller: String,
    pub seed: u64,
    pub agents: usize,
    pub steps: usize,
    pub hash_mismatch: bool,
    /// Ordered by step, then agent.
    pub rows: Vec<TrajectoryRow>,
}

fn fmt_err(message: impl Into<String>) -> Error {
    Error::Format {
        kind: "trajectory",
        message: message.into(),
    }
}

impl TrajectoryFile {
    pub fn from_trajectory(tr: &Trajectory, config_hash: &str) -> Self {
        let mut rows = Vec::with_capacity(tr.len() * tr.n_agents());
        for (t, rec) in tr.records.iter().enumerate() {
            for (i, a) in rec.state.agents.iter().enumerate() {
                rows.push(TrajectoryRow {
                    t,
                    agent: i,
                    position: a.position,
                    velocity: a.velocity,
                    executed: Vec2::new(rec.executed[[i, 0]], rec.executed[[i, 1]]),
                    expert: Vec2::new(rec.expert[[i, 0]], rec.expert[[i, 1]]),
                    degree: rec.snapshot.degree(i),
                });
            }
        }
        TrajectoryFile {
            config_hash: config_hash.to_string(),
            controller: tr.controller.clone(),
            seed: tr.seed,
            agents: tr.n_agents(),
            steps: tr.len(),
            hash_mismatch: false,
            rows,
        }
    }

    /// Rows of step `t`.
    pub fn step(&self, t: usize) -> &[TrajectoryRow] {
        let start = (t * self.agents).min(self.rows.len());
        let end = ((t + 1) * self.agents).min(self.rows.len());
        &self.rows[start..end]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 8));
        let _ = writeln!(out, "{TRAJECTORY_MAGIC} v{TRAJECTORY_VERSION}");
        let _ = writeln!(out, "# config_hash {}", self.config_hash);
        let _ = writeln!(out, "# controller {}", self.controller);
        let _ = writeln!(out, "# seed {}", self.seed);
        let _ = writeln!(out, "# agents {}", self.agents);
        let _ = writeln!(out, "# steps {}", self.steps);
        if self.hash_mismatch {
            let _ = writeln!(out, "# hash_mismatch");
        }
        let _ = writeln!(out, "{COLUMNS}");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {} {} {} {}",
                r.t,
                r.agent,
                r.position.x,
                r.position.y,
                r.velocity.x,
                r.velocity.y,
                r.executed.x,
                r.executed.y,
                r.expert.x,
                r.expert.y,
                r.degree
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| fmt_err("empty file"))?;
        let version = first
            .strip_prefix(TRAJECTORY_MAGIC)
            .and_then(|rest| rest.trim().strip_prefix('v'))
            .ok_or_else(|| fmt_err("missing trajectory header"))?
            .parse::<u32>()
            .map_err(|_| fmt_err("unreadable version"))?;
        if version != TRAJECTORY_VERSION {
            return Err(Error::Version {
                kind: "trajectory",
                found: version,
                expected: TRAJECTORY_VERSION,
            });
        }
        let mut file = TrajectoryFile {
            config_hash: String::new(),
            controller: String::new(),
            seed: 0,
            agents: 0,
            steps: 0,
            hash_mismatch: false,
            rows: Vec::new(),
        };
        let mut saw_columns = false;
        for (n, line) in lines {
            let lineno = n + 1;
            if let Some(meta) = line.strip_prefix("# ") {
                let (key, value) = meta.split_once(' ').unwrap_or((meta, ""));
                let num = |v: &str| v.parse::<u64>().map_err(|_| fmt_err(format!("line {lineno}: bad {key}")));
                match key {
                    "config_hash" => file.config_hash = value.to_string(),
                    "controller" => file.controller = value.to_string(),
                    "seed" => file.seed = num(value)?,
                    "agents" => file.agents = num(value)? as usize,
                    "steps" => file.steps = num(value)? as usize,
                    "hash_mismatch" => file.hash_mismatch = true,
                    _ => {}
                }
                continue;
            }
            if !saw_columns {
                if line.trim() != COLUMNS {
                    return Err(fmt_err(format!("line {lineno}: expected column header")));
                }
                saw_columns = true;
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            file.rows.push(parse_row(line).map_err(|m| fmt_err(format!("line {lineno}: {m}")))?);
        }
        if !saw_columns {
            return Err(fmt_err("missing column header"));
        }
        if file.rows.len() != file.agents * file.steps {
            return Err(fmt_err(format!(
                "expected {} rows for {} agents over {} steps, found {}",
                file.agents * file.steps,
                file.agents,
                file.steps,
                file.rows.len()
            )));
        }
        for (k, r) in file.rows.iter().enumerate() {
            if file.agents > 0 && (r.t != k / file.agents || r.agent != k % file.agents) {
                return Err(fmt_err(format!("row {k} is out of order")));
            }
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&super::read_text(path)?)
    }
}

fn parse_row(line: &str) -> std::result::Result<TrajectoryRow, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 11 {
        return Err(format!("expected 11 columns, found {}", fields.len()));
    }
    let int = |k: usize| fields[k].parse::<usize>().map_err(|_| format!("bad integer {:?}", fields[k]));
    let float = |k: usize| fields[k].parse::<f64>().map_err(|_| format!("bad number {:?}", fields[k]));
    Ok(TrajectoryRow {
        t: int(0)?,
        agent: int(1)?,
        position: Vec2::new(float(2)?, float(3)?),
        velocity: Vec2::new(float(4)?, float(5)?),
        executed: Vec2::new(float(6)?, float(7)?),
        expert: Vec2::new(float(8)?, float(9)?),
        degree: int(10)?,
    })
}
