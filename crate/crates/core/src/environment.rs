//! The generative process: deterministic tile layouts and episodic stepping.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AifError, Result};

pub const NUM_ACTIONS: usize = 4;

/// Movement directions in action-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Right = 0,
    Down = 1,
    Left = 2,
    Up = 3,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Right, Action::Down, Action::Left, Action::Up];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn arrow(self) -> &'static str {
        match self {
            Action::Right => "→",
            Action::Down => "↓",
            Action::Left => "←",
            Action::Up => "↑",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutName {
    Tmaze4,
    Gridw9,
}

impl LayoutName {
    pub const ALL: [LayoutName; 2] = [LayoutName::Tmaze4, LayoutName::Gridw9];

    pub fn as_str(self) -> &'static str {
        match self {
            LayoutName::Tmaze4 => "tmaze4",
            LayoutName::Gridw9 => "gridw9",
        }
    }
}

impl fmt::Display for LayoutName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LayoutName {
    type Err = AifError;

    fn from_str(s: &str) -> Result<Self> {
        LayoutName::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| AifError::UnknownLayout {
                name: s.to_string(),
                valid: LayoutName::ALL.map(|l| l.as_str()).join(", "),
            })
    }
}

/// Tile graph of an environment. Tiles are 0-based internally; the
/// human-facing numbering used in output is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub name: LayoutName,
    pub num_tiles: usize,
    /// `adjacency[tile][action]` is the successor tile.
    pub adjacency: Vec<[usize; NUM_ACTIONS]>,
    pub start_tile: usize,
    pub goal_tile: usize,
    /// Episode length used by the reference experiments.
    pub default_steps: usize,
}

impl Layout {
    pub fn successor(&self, tile: usize, action: usize) -> usize {
        self.adjacency[tile][action]
    }

    /// Tile reached from the start tile after executing `actions`.
    pub fn rollout(&self, actions: &[usize]) -> usize {
        actions
            .iter()
            .fold(self.start_tile, |tile, &a| self.successor(tile, a))
    }

    /// Fewest moves from start to goal (breadth-first).
    pub fn shortest_path_len(&self) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.num_tiles];
        let mut queue = std::collections::VecDeque::from([self.start_tile]);
        dist[self.start_tile] = 0;
        while let Some(tile) = queue.pop_front() {
            for &next in &self.adjacency[tile] {
                if dist[next] == usize::MAX {
                    dist[next] = dist[tile] + 1;
                    queue.push_back(next);
                }
            }
        }
        (dist[self.goal_tile] != usize::MAX).then_some(dist[self.goal_tile])
    }
}

/// Ground-truth emission and transition maps of a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMaps {
    /// One column-stochastic `m × m` matrix per action, `B[next, current]`.
    pub transitions: Vec<Array2<f64>>,
    /// `n × m` emission matrix, `A[observation, state]`.
    pub emission: Array2<f64>,
}

impl GroundTruthMaps {
    fn from_layout(layout: &Layout) -> Self {
        let m = layout.num_tiles;
        let transitions = (0..NUM_ACTIONS)
            .map(|a| {
                let mut b = Array2::zeros((m, m));
                for tile in 0..m {
                    b[[layout.successor(tile, a), tile]] = 1.0;
                }
                b
            })
            .collect();
        Self {
            transitions,
            emission: Array2::eye(m),
        }
    }
}

fn grid_adjacency(rows: usize, cols: usize) -> Vec<[usize; NUM_ACTIONS]> {
    (0..rows * cols)
        .map(|tile| {
            let (r, c) = (tile / cols, tile % cols);
            let right = if c + 1 < cols { tile + 1 } else { tile };
            let down = if r + 1 < rows { tile + cols } else { tile };
            let left = if c > 0 { tile - 1 } else { tile };
            let up = if r > 0 { tile - cols } else { tile };
            [right, down, left, up]
        })
        .collect()
}

/// Builds a named layout and its ground-truth maps.
///
/// `tmaze4`: tiles 1, 2, 3 form the top row (1 is the left arm and goal),
/// tile 4 sits below the junction 2 and tile 5 below 4; the agent starts
/// on 5. `gridw9`: 3×3 grid numbered row-major from the top-left, start 1,
/// goal 9. Blocked moves leave the agent in place.
pub fn build_layout(name: LayoutName) -> (Layout, GroundTruthMaps) {
    let layout = match name {
        LayoutName::Tmaze4 => Layout {
            name,
            num_tiles: 5,
            //              right down left up
            adjacency: vec![
                [1, 0, 0, 0],
                [2, 3, 0, 1],
                [2, 2, 1, 2],
                [3, 4, 3, 1],
                [4, 4, 4, 3],
            ],
            start_tile: 4,
            goal_tile: 0,
            default_steps: 4,
        },
        LayoutName::Gridw9 => Layout {
            name,
            num_tiles: 9,
            adjacency: grid_adjacency(3, 3),
            start_tile: 0,
            goal_tile: 8,
            default_steps: 5,
        },
    };
    let maps = GroundTruthMaps::from_layout(&layout);
    (layout, maps)
}

/// Mutable part of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvState {
    pub current_tile: usize,
    /// 1-based step index within the episode.
    pub step_index: usize,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub tile: usize,
    pub observation: usize,
    pub done: bool,
}

/// Episodic environment driven by one agent.
#[derive(Debug, Clone)]
pub struct GridEnv {
    layout: Arc<Layout>,
    maps: Arc<GroundTruthMaps>,
    num_steps: usize,
    state: EnvState,
    rng: ChaCha8Rng,
}

fn sample_column(column: ArrayView1<f64>, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in column.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap at the top of the CDF
    column.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

impl GridEnv {
    pub fn new(layout: Arc<Layout>, maps: Arc<GroundTruthMaps>, num_steps: usize) -> Self {
        let state = EnvState {
            current_tile: layout.start_tile,
            step_index: 1,
            rng_seed: 0,
        };
        Self {
            layout,
            maps,
            num_steps,
            state,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn maps(&self) -> &GroundTruthMaps {
        &self.maps
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn state(&self) -> EnvState {
        self.state
    }

    /// Places the agent on the start tile and emits the first observation.
    pub fn reset(&mut self, seed: u64) -> (usize, usize) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = EnvState {
            current_tile: self.layout.start_tile,
            step_index: 1,
            rng_seed: seed,
        };
        let obs = self.emit();
        (self.state.current_tile, obs)
    }

    fn emit(&mut self) -> usize {
        let column = self.maps.emission.column(self.state.current_tile);
        sample_column(column, &mut self.rng)
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.state.step_index >= self.num_steps {
            return Err(AifError::EpisodeFinished(self.state.step_index));
        }
        if action >= NUM_ACTIONS {
            return Err(AifError::OutOfRange {
                index: action,
                size: NUM_ACTIONS,
            });
        }
        let column = self.maps.transitions[action].column(self.state.current_tile);
        self.state.current_tile = sample_column(column, &mut self.rng);
        self.state.step_index += 1;
        let observation = self.emit();
        Ok(StepOutcome {
            tile: self.state.current_tile,
            observation,
            done: self.state.step_index == self.num_steps,
        })
    }
}
