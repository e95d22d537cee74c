//! Seeded stochastic mazes.
//!
//! Cells are numbered row-major (`state = row * width + col`), rows grow
//! southwards and columns eastwards. The agent starts in the top-left cell
//! and the goal is the bottom-right cell. An action succeeds with the
//! cell's `p_succ`; otherwise one of the three other compass moves is taken
//! uniformly. Moves off the grid leave the agent in place. Rewards are paid
//! on arrival.

use crate::mdp::{ActionId, MdpError, Outcome, StateId, TabularMdp};
use crate::planner::{InverseDynamics, PlannerError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

pub const NORTH: ActionId = ActionId(0);
pub const SOUTH: ActionId = ActionId(1);
pub const EAST: ActionId = ActionId(2);
pub const WEST: ActionId = ActionId(3);
pub const ACTIONS: [ActionId; 4] = [NORTH, SOUTH, EAST, WEST];

#[derive(Debug, Error)]
pub enum MazeError {
    #[error("invalid maze configuration: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

fn parse_err(line: usize, message: impl Into<String>) -> MazeError {
    MazeError::Parse { line, message: message.into() }
}

/// An axis-aligned block of cells, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRect {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl CellRect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..=self.row1).contains(&row) && (self.col0..=self.col1).contains(&col)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MazeConfig {
    pub width: usize,
    pub height: usize,
    pub p_succ_floor: f64,
    pub n_high_regions: usize,
    /// Disc radius in cells.
    pub high_region_extent: f64,
    pub n_pitfall_domains: usize,
    /// Half-side of each pitfall square, in cells.
    pub pitfall_extent: usize,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub pitfall_reward: f64,
    /// Blocks forced to `p_succ = 1`.
    pub deterministic_rects: Vec<CellRect>,
    pub seed: u64,
}

impl Default for MazeConfig {
    fn default() -> Self {
        MazeConfig {
            width: 40,
            height: 40,
            p_succ_floor: 0.7,
            n_high_regions: 4,
            high_region_extent: 5.0,
            n_pitfall_domains: 6,
            pitfall_extent: 2,
            step_reward: -0.1,
            goal_reward: 200.0,
            pitfall_reward: -1.0,
            deterministic_rects: Vec::new(),
            seed: 0,
        }
    }
}

impl MazeConfig {
    /// 10x10 maze with a deterministic corridor along the top row.
    pub fn desk() -> Self {
        MazeConfig {
            width: 10,
            height: 10,
            n_high_regions: 0,
            n_pitfall_domains: 2,
            pitfall_extent: 1,
            deterministic_rects: vec![CellRect { row0: 0, col0: 0, row1: 0, col1: 9 }],
            ..MazeConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), MazeError> {
        let fail = |m: String| Err(MazeError::Config(m));
        if self.width < 2 || self.height < 2 {
            return fail(format!("maze must be at least 2x2, got {}x{}", self.width, self.height));
        }
        if !(self.p_succ_floor > 0.0 && self.p_succ_floor <= 1.0) {
            return fail(format!("p_succ_floor must lie in (0, 1], got {}", self.p_succ_floor));
        }
        if !(self.high_region_extent >= 0.0 && self.high_region_extent.is_finite()) {
            return fail("high_region_extent must be finite and non-negative".into());
        }
        if ![self.step_reward, self.goal_reward, self.pitfall_reward].iter().all(|r| r.is_finite()) {
            return fail("rewards must be finite".into());
        }
        for r in &self.deterministic_rects {
            if r.row0 > r.row1 || r.col0 > r.col1 || r.row1 >= self.height || r.col1 >= self.width {
                return fail(format!("deterministic block {r:?} outside the grid"));
            }
        }
        Ok(())
    }
}

/// A concrete maze: per-cell success probability and arrival reward.
#[derive(Debug, Clone, PartialEq)]
pub struct MazeSpec {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub p_succ: Vec<f64>,
    pub reward: Vec<f64>,
    pub goal: StateId,
}

impl MazeSpec {
    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn start(&self) -> StateId {
        StateId(0)
    }

    pub fn cell(&self, row: usize, col: usize) -> StateId {
        StateId(row * self.width + col)
    }

    pub fn coords(&self, x: StateId) -> (usize, usize) {
        (x.0 / self.width, x.0 % self.width)
    }

    /// Cell reached by moving in `dir`, or `x` itself at the border.
    pub fn neighbor(&self, x: StateId, dir: ActionId) -> StateId {
        let (r, c) = self.coords(x);
        match dir {
            NORTH if r > 0 => self.cell(r - 1, c),
            SOUTH if r + 1 < self.height => self.cell(r + 1, c),
            EAST if c + 1 < self.width => self.cell(r, c + 1),
            WEST if c > 0 => self.cell(r, c - 1),
            _ => x,
        }
    }

    /// Checks the invariants a loaded file must satisfy.
    pub fn validate(&self) -> Result<(), MazeError> {
        let n = self.n_cells();
        if self.width < 2 || self.height < 2 {
            return Err(MazeError::Config("maze must be at least 2x2".into()));
        }
        if self.p_succ.len() != n || self.reward.len() != n || self.goal.0 >= n {
            return Err(MazeError::Config("cell arrays do not match the dimensions".into()));
        }
        if self.p_succ.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(MazeError::Config("p_succ must lie in (0, 1]".into()));
        }
        if self.reward.iter().any(|r| !r.is_finite()) {
            return Err(MazeError::Config("rewards must be finite".into()));
        }
        Ok(())
    }

    /// Length of the shortest start-to-goal path, ignoring stochasticity.
    pub fn shortest_path_len(&self) -> usize {
        let (gr, gc) = self.coords(self.goal);
        gr + gc
    }

    /// Row-major `height x width` CSV grid of `p_succ`.
    pub fn p_succ_csv(&self) -> String {
        self.grid_csv(&self.p_succ)
    }

    /// Row-major `height x width` CSV grid of arrival rewards.
    pub fn reward_csv(&self) -> String {
        self.grid_csv(&self.reward)
    }

    fn grid_csv(&self, values: &[f64]) -> String {
        let mut out = String::new();
        for row in values.chunks(self.width) {
            let line: Vec<String> = row.iter().map(ToString::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Text form: `maze <width> <height> <seed>` then one
    /// `row col p_succ reward [goal]` line per cell.
    pub fn to_text(&self) -> String {
        let mut out = format!("maze {} {} {}\n", self.width, self.height, self.seed);
        for i in 0..self.n_cells() {
            let (r, c) = self.coords(StateId(i));
            let _ = write!(out, "{r} {c} {} {}", self.p_succ[i], self.reward[i]);
            if StateId(i) == self.goal {
                out.push_str(" goal");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, MazeError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [tag, w, h, seed] = fields[..] else {
            return Err(parse_err(hline, "header must be `maze <width> <height> <seed>`"));
        };
        if tag != "maze" {
            return Err(parse_err(hline, "header must start with `maze`"));
        }
        let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| parse_err(hline, format!("bad {what} {s:?}")));
        let (width, height) = (num(w, "width")?, num(h, "height")?);
        let seed = seed.parse::<u64>().map_err(|_| parse_err(hline, format!("bad seed {seed:?}")))?;
        if width < 2 || height < 2 {
            return Err(parse_err(hline, "maze must be at least 2x2"));
        }
        let n = width.checked_mul(height).filter(|&n| n <= 1 << 24).ok_or_else(|| parse_err(hline, "maze too large"))?;

        let mut p_succ = vec![f64::NAN; n];
        let mut reward = vec![0.0; n];
        let mut seen = vec![false; n];
        let mut goal = None;
        let mut last_line = hline;
        for (lineno, line) in lines {
            last_line = lineno;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 && f.len() != 5 {
                return Err(parse_err(lineno, "expected `row col p_succ reward [goal]`"));
            }
            let row = f[0].parse::<usize>().map_err(|_| parse_err(lineno, "bad row"))?;
            let col = f[1].parse::<usize>().map_err(|_| parse_err(lineno, "bad column"))?;
            if row >= height || col >= width {
                return Err(parse_err(lineno, format!("cell ({row}, {col}) outside the grid")));
            }
            let p = f[2].parse::<f64>().map_err(|_| parse_err(lineno, "bad p_succ"))?;
            if !(p > 0.0 && p <= 1.0) {
                return Err(parse_err(lineno, format!("p_succ {p} outside (0, 1]")));
            }
            let r = f[3].parse::<f64>().map_err(|_| parse_err(lineno, "bad reward"))?;
            if !r.is_finite() {
                return Err(parse_err(lineno, "reward must be finite"));
            }
            let i = row * width + col;
            if seen[i] {
                return Err(parse_err(lineno, format!("cell ({row}, {col}) listed twice")));
            }
            seen[i] = true;
            p_succ[i] = p;
            reward[i] = r;
            if f.len() == 5 {
                if f[4] != "goal" {
                    return Err(parse_err(lineno, format!("unexpected marker {:?}", f[4])));
                }
                if goal.replace(StateId(i)).is_some() {
                    return Err(parse_err(lineno, "more than one goal"));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(parse_err(
                last_line + 1,
                format!("truncated: cell ({}, {}) missing", missing / width, missing % width),
            ));
        }
        let goal = goal.ok_or_else(|| parse_err(last_line + 1, "no goal cell"))?;
        Ok(MazeSpec { width, height, seed, p_succ, reward, goal })
    }
}

/// Generates a maze; a pure function of `config`.
pub fn generate_maze(config: &MazeConfig) -> Result<MazeSpec, MazeError> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let n = w * h;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let floor = config.p_succ_floor;

    let mut p_succ = vec![floor; n];
    for _ in 0..config.n_high_regions {
        let (cr, cc) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let radius = config.high_region_extent;
        for r in 0..h {
            for c in 0..w {
                let d = ((r as f64 - cr as f64).powi(2) + (c as f64 - cc as f64).powi(2)).sqrt();
                let p = if d == 0.0 {
                    1.0
                } else if d < radius {
                    1.0 - (1.0 - floor) * d / radius
                } else {
                    continue;
                };
                let cell = &mut p_succ[r * w + c];
                *cell = cell.max(p);
            }
        }
    }
    for rect in &config.deterministic_rects {
        for r in rect.row0..=rect.row1 {
            for c in rect.col0..=rect.col1 {
                p_succ[r * w + c] = 1.0;
            }
        }
    }

    let mut reward = vec![config.step_reward; n];
    let ext = config.pitfall_extent;
    for _ in 0..config.n_pitfall_domains {
        let (cr, cc) = (rng.gen_range(0..h), rng.gen_range(0..w));
        for r in cr.saturating_sub(ext)..=(cr + ext).min(h - 1) {
            for c in cc.saturating_sub(ext)..=(cc + ext).min(w - 1) {
                reward[r * w + c] += config.pitfall_reward;
            }
        }
    }
    let goal = StateId(n - 1);
    reward[goal.0] = config.goal_reward;
    Ok(MazeSpec { width: w, height: h, seed: config.seed, p_succ, reward, goal })
}

/// Compiles the maze into a four-action MDP with an absorbing goal.
pub fn compile_mdp(maze: &MazeSpec, discount: f64) -> Result<TabularMdp, MazeError> {
    maze.validate()?;
    let mut rows = Vec::with_capacity(maze.n_cells() * 4);
    for x in (0..maze.n_cells()).map(StateId) {
        let p = maze.p_succ[x.0];
        for intended in ACTIONS {
            let row = ACTIONS
                .iter()
                .map(|&dir| {
                    let prob = if dir == intended { p } else { (1.0 - p) / 3.0 };
                    let y = maze.neighbor(x, dir);
                    Outcome { next: y, prob, reward: maze.reward[y.0] }
                })
                .collect();
            rows.push(row);
        }
    }
    Ok(TabularMdp::new(maze.n_cells(), 4, rows, &[maze.goal], discount)?)
}

/// `phi` over grid-adjacent cells: the compass action pointing from `x` to `y`.
pub fn inverse_dynamics(maze: &MazeSpec) -> Result<InverseDynamics, PlannerError> {
    let mut pairs = Vec::with_capacity(maze.n_cells() * 4);
    for x in (0..maze.n_cells()).map(StateId) {
        for dir in ACTIONS {
            let y = maze.neighbor(x, dir);
            if y != x {
                pairs.push((x, y, dir));
            }
        }
    }
    InverseDynamics::new(maze.n_cells(), pairs)
}

pub fn save_maze(maze: &MazeSpec, path: &Path) -> Result<(), MazeError> {
    std::fs::write(path, maze.to_text())?;
    Ok(())
}

pub fn load_maze(path: &Path) -> Result<MazeSpec, MazeError> {
    MazeSpec::parse(&std::fs::read_to_string(path)?)
}
