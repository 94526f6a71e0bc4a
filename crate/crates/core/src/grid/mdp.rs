use rand::Rng;
use serde::{Deserialize, Serialize};

use super::board::{jaccard, Board};
use crate::agents::{EpsilonSchedule, QTable};
use crate::bicluster::Bicluster;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
    ];

    /// Cell reached from `(x, y)` on an `n x n` board, `None` off-grid.
    pub fn apply(self, n: usize, x: usize, y: usize) -> Option<(usize, usize)> {
        match self {
            Direction::Up => x.checked_sub(1).map(|x| (x, y)),
            Direction::Down => (x + 1 < n).then_some((x + 1, y)),
            Direction::Left => y.checked_sub(1).map(|y| (x, y)),
            Direction::Right => (y + 1 < n).then_some((x, y + 1)),
        }
    }
}

/// A move on one board (zero-based). Index `4 * board + direction`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridAction {
    pub board: usize,
    pub dir: Direction,
}

impl GridAction {
    pub fn index(self) -> usize {
        4 * self.board + self.dir as usize
    }

    pub fn from_index(i: usize) -> Self {
        GridAction {
            board: i / 4,
            dir: Direction::ALL[i % 4],
        }
    }
}

/// A bicluster together with where it sits on every board.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiBoardState {
    pub id: usize,
    pub coords: Vec<(usize, usize)>,
}

/// The view of a gridworld that Q-learning and recommendation need. States
/// are dense indices in `0..n_states`.
pub trait GridMdp {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// State placed at `cell` (row-major) of the first board.
    fn state_at_cell(&self, cell: usize) -> usize;
    /// State holding `bicluster`.
    fn state_of(&self, bicluster: usize) -> usize;
    /// Successor, `None` when the move leaves its board.
    fn next(&self, state: usize, action: usize) -> Option<usize>;
    fn users(&self, state: usize) -> &[usize];
    fn items(&self, state: usize) -> &[usize];

    /// Jaccard similarity of the two states' user sets.
    fn reward(&self, state: usize, next: usize) -> f64 {
        jaccard(self.users(state), self.users(next))
    }
}

fn check_biclusters(n: usize, biclusters: &[Bicluster]) -> Result<()> {
    if biclusters.len() != n * n {
        return Err(Error::Shape {
            context: "biclusters on board",
            expected: n * n,
            actual: biclusters.len(),
        });
    }
    Ok(())
}

/// The original single-board world: states are cells, four actions.
#[derive(Debug, Clone)]
pub struct SingleBoard {
    board: Board,
    biclusters: Vec<Bicluster>,
}

impl SingleBoard {
    pub fn new(board: Board, biclusters: Vec<Bicluster>) -> Result<Self> {
        check_biclusters(board.n(), &biclusters)?;
        Ok(SingleBoard { board, biclusters })
    }

    pub fn board(&self) -> &Board {
        &self.board
    }
}

impl GridMdp for SingleBoard {
    fn n_states(&self) -> usize {
        self.biclusters.len()
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn state_at_cell(&self, cell: usize) -> usize {
        cell
    }

    fn state_of(&self, bicluster: usize) -> usize {
        self.board.cell_of(bicluster)
    }

    fn next(&self, state: usize, action: usize) -> Option<usize> {
        let n = self.board.n();
        let (x, y) = Direction::ALL[action].apply(n, state / n, state % n)?;
        Some(x * n + y)
    }

    fn users(&self, state: usize) -> &[usize] {
        &self.biclusters[self.board.cells()[state]].users
    }

    fn items(&self, state: usize) -> &[usize] {
        &self.biclusters[self.board.cells()[state]].items
    }
}

/// K boards over the same biclusters: states are bicluster ids and each
/// board contributes four actions.
#[derive(Debug, Clone)]
pub struct Gridworld {
    boards: Vec<Board>,
    biclusters: Vec<Bicluster>,
}

impl Gridworld {
    pub fn new(boards: Vec<Board>, biclusters: Vec<Bicluster>) -> Result<Self> {
        let Some(first) = boards.first() else {
            return Err(Error::config("gridworld needs at least one board"));
        };
        let n = first.n();
        if boards.iter().any(|b| b.n() != n) {
            return Err(Error::data("boards differ in size"));
        }
        check_biclusters(n, &biclusters)?;
        Ok(Gridworld { boards, biclusters })
    }

    pub fn n(&self) -> usize {
        self.boards[0].n()
    }

    pub fn k(&self) -> usize {
        self.boards.len()
    }

    pub fn boards(&self) -> &[Board] {
        &self.boards
    }

    pub fn biclusters(&self) -> &[Bicluster] {
        &self.biclusters
    }

    pub fn state(&self, id: usize) -> MultiBoardState {
        MultiBoardState {
            id,
            coords: self.boards.iter().map(|b| b.position(id)).collect(),
        }
    }

    pub fn is_valid(&self, id: usize, action: GridAction) -> bool {
        action.board < self.k() && self.next(id, action.index()).is_some()
    }

    /// Moves on one board; the landing cell's bicluster fixes the
    /// coordinates on every board.
    pub fn transition(
        &self,
        state: &MultiBoardState,
        action: GridAction,
    ) -> Result<MultiBoardState> {
        if action.board >= self.k() {
            return Err(Error::InvalidAction(format!(
                "board {} of {}",
                action.board,
                self.k()
            )));
        }
        let (x, y) = state.coords[action.board];
        let (nx, ny) = action.dir.apply(self.n(), x, y).ok_or_else(|| {
            Error::InvalidAction(format!(
                "{:?} from ({x}, {y}) leaves board {}",
                action.dir, action.board
            ))
        })?;
        Ok(self.state(self.boards[action.board].at(nx, ny)))
    }
}

impl GridMdp for Gridworld {
    fn n_states(&self) -> usize {
        self.biclusters.len()
    }

    fn n_actions(&self) -> usize {
        4 * self.k()
    }

    fn state_at_cell(&self, cell: usize) -> usize {
        self.boards[0].cells()[cell]
    }

    fn state_of(&self, bicluster: usize) -> usize {
        bicluster
    }

    fn next(&self, state: usize, action: usize) -> Option<usize> {
        let a = GridAction::from_index(action);
        let board = self.boards.get(a.board)?;
        let (x, y) = board.position(state);
        let (nx, ny) = a.dir.apply(board.n(), x, y)?;
        Some(board.at(nx, ny))
    }

    fn users(&self, state: usize) -> &[usize] {
        &self.biclusters[state].users
    }

    fn items(&self, state: usize) -> &[usize] {
        &self.biclusters[state].items
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridQConfig {
    pub episodes: u64,
    pub alpha: f64,
    pub gamma: f64,
    /// Decays per episode.
    pub epsilon: EpsilonSchedule,
    /// Steps per episode; `4 * n * n` when unset.
    pub max_steps: Option<usize>,
}

impl Default for GridQConfig {
    fn default() -> Self {
        GridQConfig {
            episodes: 2000,
            alpha: 0.1,
            gamma: 0.9,
            epsilon: EpsilonSchedule::default(),
            max_steps: None,
        }
    }
}

impl GridQConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!(
                "alpha {} must lie in (0, 1]",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!(
                "gamma {} must lie in [0, 1)",
                self.gamma
            )));
        }
        for e in [self.epsilon.start, self.epsilon.end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::config(format!("epsilon {e} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

fn valid_actions<W: GridMdp + ?Sized>(world: &W, s: usize) -> Vec<usize> {
    (0..world.n_actions())
        .filter(|&a| world.next(s, a).is_some())
        .collect()
}

/// Greedy action under `table`, masked to moves that stay on the board.
pub fn greedy_action<W: GridMdp + ?Sized>(world: &W, table: &QTable, s: usize) -> Option<usize> {
    table.best_action(s, |a| world.next(s, a).is_some())
}

/// Tabular Q-learning with epsilon-greedy exploration over valid moves.
/// Each episode starts on a uniformly drawn cell of the first board.
/// Returns the table and the mean step reward of every episode.
pub fn q_learn<W: GridMdp + ?Sized, R: Rng + ?Sized>(
    world: &W,
    cfg: &GridQConfig,
    rng: &mut R,
) -> Result<(QTable, Vec<f64>)> {
    cfg.validate()?;
    let mut table = QTable::new(world.n_actions());
    let cells = world.n_states();
    let max_steps = cfg.max_steps.unwrap_or(4 * cells);
    let mut trace = Vec::with_capacity(cfg.episodes as usize);
    for ep in 0..cfg.episodes {
        let eps = cfg.epsilon.value(ep, cfg.episodes);
        let mut s = world.state_at_cell(rng.gen_range(0..cells));
        let (mut total, mut steps) = (0.0, 0usize);
        for _ in 0..max_steps {
            let valid = valid_actions(world, s);
            if valid.is_empty() {
                break;
            }
            let a = if rng.gen::<f64>() < eps {
                valid[rng.gen_range(0..valid.len())]
            } else {
                greedy_action(world, &table, s).expect("valid actions exist")
            };
            let s2 = world.next(s, a).expect("action was valid");
            let r = world.reward(s, s2);
            let target = r + cfg.gamma * table.max_value(s2, |b| world.next(s2, b).is_some());
            table.update(s, a, target, cfg.alpha);
            total += r;
            steps += 1;
            s = s2;
        }
        trace.push(if steps == 0 {
            0.0
        } else {
            total / steps as f64
        });
    }
    Ok((table, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bcs(users: &[&[usize]]) -> Vec<Bicluster> {
        users
            .iter()
            .enumerate()
            .map(|(i, u)| Bicluster::new(u.to_vec(), vec![i]).unwrap())
            .collect()
    }

    #[test]
    fn down_increments_x() {
        let board = Board::from_cells(2, vec![0, 1, 2, 3]).unwrap();
        let world = Gridworld::new(vec![board], bcs(&[&[0], &[1], &[2], &[3]])).unwrap();
        let down = GridAction {
            board: 0,
            dir: Direction::Down,
        };
        let s = world.transition(&world.state(0), down).unwrap();
        assert_eq!(s.coords, vec![(1, 0)]);
        assert_eq!(s.id, 2);
        let up = GridAction {
            board: 0,
            dir: Direction::Up,
        };
        assert!(matches!(
            world.transition(&world.state(0), up),
            Err(Error::InvalidAction(_))
        ));
        assert_eq!(world.transition(&s, up).unwrap(), world.state(0));
    }

    #[test]
    fn second_board_move_updates_first_board_coords() {
        // board 1: 0 1 / 2 3   board 2: 3 2 / 1 0
        let b1 = Board::from_cells(2, vec![0, 1, 2, 3]).unwrap();
        let b2 = Board::from_cells(2, vec![3, 2, 1, 0]).unwrap();
        let world = Gridworld::new(vec![b1, b2], bcs(&[&[0], &[1], &[2], &[3]])).unwrap();
        let s = world.state(0);
        assert_eq!(s.coords, vec![(0, 0), (1, 1)]);
        let left = GridAction {
            board: 1,
            dir: Direction::Left,
        };
        let t = world.transition(&s, left).unwrap();
        // board 2 cell (1, 0) holds bicluster 1, which is at (0, 1) on board 1
        assert_eq!(t.id, 1);
        assert_eq!(t.coords, vec![(0, 1), (1, 0)]);
        assert_eq!(world.n_actions(), 8);
    }

    #[test]
    fn action_index_round_trip() {
        for i in 0..12 {
            assert_eq!(GridAction::from_index(i).index(), i);
        }
    }

    #[test]
    fn gamma_zero_learns_immediate_rewards() {
        let board = Board::from_cells(2, vec![0, 1, 2, 3]).unwrap();
        let world = Gridworld::new(vec![board], bcs(&[&[0, 1], &[1, 2], &[0, 1], &[5]])).unwrap();
        let cfg = GridQConfig {
            episodes: 400,
            gamma: 0.0,
            alpha: 0.5,
            ..GridQConfig::default()
        };
        let (table, trace) = q_learn(&world, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(trace.len(), 400);
        for s in 0..4 {
            for a in 0..4 {
                if let Some(s2) = world.next(s, a) {
                    assert!(
                        (table.get(s, a) - world.reward(s, s2)).abs() < 1e-6,
                        "s {s} a {a}"
                    );
                }
            }
        }
    }

    #[test]
    fn reward_is_symmetric_similarity() {
        let board = Board::from_cells(2, vec![0, 1, 2, 3]).unwrap();
        let world = Gridworld::new(vec![board], bcs(&[&[1, 2], &[2, 3], &[1, 2], &[7]])).unwrap();
        assert!((world.reward(0, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(world.reward(0, 2), 1.0);
        assert_eq!(world.reward(0, 3), 0.0);
        assert_eq!(world.reward(1, 0), world.reward(0, 1));
    }
}
