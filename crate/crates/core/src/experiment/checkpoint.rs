//! Text checkpoints of value tables, model estimates and RNG state.
//!
//! ```text
//! prl-checkpoint 1
//! scalar <name> <value>
//! table <name> <rows> <cols>
//! <cols values>        (one line per row)
//! ```
//!
//! Floats are written in shortest round-trip form, so save/load is exact.

use crate::agent::Agent;
use crate::mdp::{ActionId, ActionValueTable, StateId};
use crate::planner::SelectionMode;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

const MAGIC: &str = "prl-checkpoint 1";
const MAX_CELLS: usize = 1 << 26;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing {0}")]
    Missing(String),
    #[error("table {table}: expected {expected:?}, found {found:?}")]
    DimensionMismatch { table: String, expected: (usize, usize), found: (usize, usize) },
    #[error("invalid checkpoint: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn parse_err(line: usize, message: impl Into<String>) -> CheckpointError {
    CheckpointError::Parse { line, message: message.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub scalars: Vec<(String, String)>,
    pub tables: Vec<Table>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_scalar(&mut self, name: &str, value: impl ToString) {
        debug_assert!(valid_name(name));
        self.scalars.push((name.to_string(), value.to_string()));
    }

    pub fn push_table(&mut self, name: &str, rows: usize, cols: usize, values: Vec<f64>) {
        debug_assert!(valid_name(name) && rows * cols == values.len());
        self.tables.push(Table { name: name.to_string(), rows, cols, values });
    }

    pub fn scalar(&self, name: &str) -> Result<&str, CheckpointError> {
        self.scalars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| CheckpointError::Missing(format!("scalar {name}")))
    }

    fn parsed<T: std::str::FromStr>(&self, name: &str) -> Result<T, CheckpointError> {
        self.scalar(name)?.parse().map_err(|_| CheckpointError::Invalid(format!("scalar {name} is malformed")))
    }

    pub fn table(&self, name: &str) -> Result<&Table, CheckpointError> {
        self.tables.iter().find(|t| t.name == name).ok_or_else(|| CheckpointError::Missing(format!("table {name}")))
    }

    /// Table `name`, required to be `rows x cols`.
    pub fn table_with(&self, name: &str, rows: usize, cols: usize) -> Result<&Table, CheckpointError> {
        let t = self.table(name)?;
        if (t.rows, t.cols) != (rows, cols) {
            return Err(CheckpointError::DimensionMismatch {
                table: name.to_string(),
                expected: (rows, cols),
                found: (t.rows, t.cols),
            });
        }
        Ok(t)
    }

    fn counts(&self, name: &str, rows: usize, cols: usize) -> Result<Vec<u64>, CheckpointError> {
        self.table_with(name, rows, cols)?
            .values
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(53) {
                    Ok(v as u64)
                } else {
                    Err(CheckpointError::Invalid(format!("table {name} holds a non-count {v}")))
                }
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC}\n");
        for (name, value) in &self.scalars {
            let _ = writeln!(out, "scalar {name} {value}");
        }
        for t in &self.tables {
            let _ = writeln!(out, "table {} {} {}", t.name, t.rows, t.cols);
            for row in t.values.chunks(t.cols.max(1)) {
                let line: Vec<String> = row.iter().map(ToString::to_string).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CheckpointError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(parse_err(1, format!("expected header {MAGIC:?}"))),
        }
        let mut ck = Checkpoint::new();
        let mut last = 1;
        while let Some((lineno, line)) = lines.next() {
            last = lineno;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.first().copied() {
                Some("scalar") => {
                    let [_, name, value] = f[..] else {
                        return Err(parse_err(lineno, "expected `scalar <name> <value>`"));
                    };
                    if !valid_name(name) {
                        return Err(parse_err(lineno, format!("bad name {name:?}")));
                    }
                    if ck.scalars.iter().any(|(n, _)| n == name) {
                        return Err(parse_err(lineno, format!("scalar {name} repeated")));
                    }
                    ck.scalars.push((name.to_string(), value.to_string()));
                }
                Some("table") => {
                    let [_, name, rows, cols] = f[..] else {
                        return Err(parse_err(lineno, "expected `table <name> <rows> <cols>`"));
                    };
                    if !valid_name(name) {
                        return Err(parse_err(lineno, format!("bad name {name:?}")));
                    }
                    if ck.tables.iter().any(|t| t.name == name) {
                        return Err(parse_err(lineno, format!("table {name} repeated")));
                    }
                    let dim = |s: &str| s.parse::<usize>().map_err(|_| parse_err(lineno, format!("bad dimension {s:?}")));
                    let (rows, cols) = (dim(rows)?, dim(cols)?);
                    if cols == 0 || rows.checked_mul(cols).is_none_or(|n| n > MAX_CELLS) {
                        return Err(parse_err(lineno, "table dimensions out of range"));
                    }
                    let mut values = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        let (rl, row) = lines.next().ok_or_else(|| parse_err(lineno + r + 1, format!("table {name} truncated")))?;
                        last = rl;
                        let before = values.len();
                        for tok in row.split_whitespace() {
                            let v: f64 = tok.parse().map_err(|_| parse_err(rl, format!("bad number {tok:?}")))?;
                            if !v.is_finite() {
                                return Err(parse_err(rl, "non-finite value"));
                            }
                            values.push(v);
                        }
                        if values.len() - before != cols {
                            return Err(parse_err(rl, format!("expected {cols} values, found {}", values.len() - before)));
                        }
                    }
                    ck.tables.push(Table { name: name.to_string(), rows, cols, values });
                }
                _ => return Err(parse_err(lineno, format!("unexpected line {line:?}"))),
            }
        }
        let _ = last;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Checkpoint holding a single Q table.
pub fn q_checkpoint(q: &ActionValueTable) -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.push_table("q", q.n_states(), q.n_actions(), q.as_slice().to_vec());
    ck
}

pub fn load_q(ck: &Checkpoint, n_states: usize, n_actions: usize) -> Result<ActionValueTable, CheckpointError> {
    let t = ck.table_with("q", n_states, n_actions)?;
    ActionValueTable::from_vec(n_states, n_actions, t.values.clone()).map_err(|e| CheckpointError::Invalid(e.to_string()))
}

fn seed_hex(seed: &[u8; 32]) -> String {
    seed.iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_seed(s: &str) -> Result<[u8; 32], CheckpointError> {
    let bad = || CheckpointError::Invalid("rng_seed must be 64 hex digits".into());
    if s.len() != 64 || !s.is_ascii() {
        return Err(bad());
    }
    let mut seed = [0u8; 32];
    for (i, byte) in seed.iter_mut().enumerate() {
        *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(seed)
}

/// Full agent state plus the RNG position, enough to resume bit-exactly.
pub fn agent_checkpoint(agent: &Agent, rng: &ChaCha8Rng) -> Checkpoint {
    let q = agent.q();
    let (n, m) = (q.n_states(), q.n_actions());
    let mut ck = Checkpoint::new();
    ck.push_scalar("state", agent.state());
    ck.push_scalar("episode_steps", agent.episode_steps());
    match agent.pending_action() {
        Some((a, mode)) => {
            ck.push_scalar("pending_action", a);
            ck.push_scalar("pending_mode", if mode == SelectionMode::Planning { "planning" } else { "basic" });
        }
        None => {
            ck.push_scalar("pending_action", "none");
            ck.push_scalar("pending_mode", "none");
        }
    }
    ck.push_scalar("rng_seed", seed_hex(&rng.get_seed()));
    ck.push_scalar("rng_stream", rng.get_stream());
    ck.push_scalar("rng_word_pos", rng.get_word_pos());
    ck.push_table("q", n, m, q.as_slice().to_vec());
    ck.push_table("visits", n, m, agent.learner_visits().iter().map(|&v| v as f64).collect());
    if let Some(l) = agent.sarsa() {
        ck.push_table("eligibility", n, m, l.eligibility_table().to_vec());
    }
    if let Some(p) = agent.planner() {
        let raw = p.model.raw();
        let pairs = p.model.n_pairs();
        ck.push_table("v_hat", n, 1, p.v_hat.as_slice().to_vec());
        if pairs > 0 {
            ck.push_table("p_hat", pairs, 1, raw.p_hat.to_vec());
            ck.push_table("r_hat", pairs, 1, raw.r_hat.to_vec());
            ck.push_table("p_visits", pairs, 1, raw.p_visits.iter().map(|&v| v as f64).collect());
            ck.push_table("r_visits", pairs, 1, raw.r_visits.iter().map(|&v| v as f64).collect());
        }
    }
    ck
}

/// Loads `ck` into an agent built with the same configuration, returning
/// the RNG positioned where the checkpoint was taken.
pub fn restore_agent(agent: &mut Agent, ck: &Checkpoint) -> Result<ChaCha8Rng, CheckpointError> {
    let (n, m) = (agent.q().n_states(), agent.q().n_actions());
    let invalid = |e: &dyn std::fmt::Display| CheckpointError::Invalid(e.to_string());
    let q = load_q(ck, n, m)?;
    let visits = ck.counts("visits", n, m)?;
    let eligibility = match agent.sarsa() {
        Some(_) => Some(ck.table_with("eligibility", n, m)?.values.clone()),
        None => None,
    };
    if let Some(e) = &eligibility {
        if e.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(CheckpointError::Invalid("eligibility outside [0, 1]".into()));
        }
    }
    agent.restore_learner(q, eligibility, visits).map_err(|e| invalid(&e))?;

    if let Some(pairs) = agent.planner().map(|p| p.model.n_pairs()) {
        let v_hat = ck.table_with("v_hat", n, 1)?.values.clone();
        let (p_hat, r_hat, pv, rv) = if pairs > 0 {
            (
                ck.table_with("p_hat", pairs, 1)?.values.clone(),
                ck.table_with("r_hat", pairs, 1)?.values.clone(),
                ck.counts("p_visits", pairs, 1)?,
                ck.counts("r_visits", pairs, 1)?,
            )
        } else {
            Default::default()
        };
        let p = agent.planner_mut().expect("checked above");
        p.v_hat.restore(v_hat).map_err(|e| invalid(&e))?;
        p.model.restore(p_hat, r_hat, pv, rv).map_err(|e| invalid(&e))?;
    }

    let state = StateId(ck.parsed("state")?);
    let episode_steps = ck.parsed("episode_steps")?;
    let pending = match (ck.scalar("pending_action")?, ck.scalar("pending_mode")?) {
        ("none", "none") => None,
        (a, mode) => {
            let a = ActionId(a.parse().map_err(|_| CheckpointError::Invalid("bad pending_action".into()))?);
            let mode = match mode {
                "planning" => SelectionMode::Planning,
                "basic" => SelectionMode::Basic,
                _ => return Err(CheckpointError::Invalid("bad pending_mode".into())),
            };
            Some((a, mode))
        }
    };
    agent.restore_position(state, pending, episode_steps).map_err(|e| invalid(&e))?;

    let mut rng = ChaCha8Rng::from_seed(parse_seed(ck.scalar("rng_seed")?)?);
    rng.set_stream(ck.parsed("rng_stream")?);
    rng.set_word_pos(ck.parsed("rng_word_pos")?);
    Ok(rng)
}
