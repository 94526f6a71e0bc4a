use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bicluster::Bicluster;
use crate::error::{Error, Result};

/// `|a ∩ b| / |a ∪ b|` over sorted, duplicate-free slices. Two empty sets
/// count as identical.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - common;
    if union == 0 {
        1.0
    } else {
        common as f64 / union as f64
    }
}

/// Jaccard distance between the user sets.
pub fn bicluster_distance(a: &Bicluster, b: &Bicluster) -> f64 {
    1.0 - jaccard(&a.users, &b.users)
}

/// Dense symmetric matrix of pairwise bicluster distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    len: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_biclusters(biclusters: &[Bicluster]) -> Self {
        let len = biclusters.len();
        let d = (0..len)
            .into_par_iter()
            .flat_map_iter(|a| {
                (0..len).map(move |b| bicluster_distance(&biclusters[a], &biclusters[b]))
            })
            .collect();
        DistanceMatrix { len, d }
    }

    pub fn from_fn(len: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let d = (0..len * len).map(|k| f(k / len, k % len)).collect();
        DistanceMatrix { len, d }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.d[a * self.len + b]
    }
}

/// `n x n` grid of bicluster ids. Cell `(x, y)` sits in row `x`, column `y`;
/// moving down increases `x`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BoardRepr", into = "BoardRepr")]
pub struct Board {
    n: usize,
    cells: Vec<usize>,
    pos: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct BoardRepr {
    n: usize,
    cells: Vec<usize>,
}

impl TryFrom<BoardRepr> for Board {
    type Error = Error;

    fn try_from(r: BoardRepr) -> Result<Self> {
        Board::from_cells(r.n, r.cells)
    }
}

impl From<Board> for BoardRepr {
    fn from(b: Board) -> Self {
        BoardRepr {
            n: b.n,
            cells: b.cells,
        }
    }
}

impl Board {
    /// `cells` lists ids row by row and must be a permutation of `0..n*n`.
    pub fn from_cells(n: usize, cells: Vec<usize>) -> Result<Self> {
        if n == 0 || cells.len() != n * n {
            return Err(Error::Shape {
                context: "board cells",
                expected: n * n,
                actual: cells.len(),
            });
        }
        let mut pos = vec![usize::MAX; cells.len()];
        for (c, &id) in cells.iter().enumerate() {
            if id >= cells.len() || pos[id] != usize::MAX {
                return Err(Error::data(format!(
                    "board cells are not a permutation (id {id})"
                )));
            }
            pos[id] = c;
        }
        Ok(Board { n, cells, pos })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn at(&self, x: usize, y: usize) -> usize {
        self.cells[x * self.n + y]
    }

    pub fn position(&self, id: usize) -> (usize, usize) {
        let c = self.pos[id];
        (c / self.n, c % self.n)
    }

    pub fn cell_of(&self, id: usize) -> usize {
        self.pos[id]
    }

    fn swap(&mut self, p: usize, q: usize) {
        self.cells.swap(p, q);
        self.pos[self.cells[p]] = p;
        self.pos[self.cells[q]] = q;
    }

    /// Sum of distances from cell `c` to its 4-neighbourhood.
    fn local(&self, dist: &DistanceMatrix, c: usize) -> f64 {
        let id = self.cells[c];
        neighbours(self.n, c)
            .map(|v| dist.get(id, self.cells[v]))
            .sum()
    }

    /// Change of [`h`] if cells `p` and `q` were swapped.
    fn swap_delta(&mut self, dist: &DistanceMatrix, p: usize, q: usize) -> f64 {
        let before = self.local(dist, p) + self.local(dist, q);
        self.swap(p, q);
        let after = self.local(dist, p) + self.local(dist, q);
        self.swap(p, q);
        2.0 * (after - before)
    }
}

/// Cell indices adjacent to `c` on an `n x n` grid.
pub fn neighbours(n: usize, c: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (c / n, c % n);
    [
        (x > 0).then(|| c - n),
        (x + 1 < n).then(|| c + n),
        (y > 0).then(|| c - 1),
        (y + 1 < n).then(|| c + 1),
    ]
    .into_iter()
    .flatten()
}

/// Total distance between adjacent cells, summed from every cell over its
/// neighbours, so each adjacent pair contributes twice.
pub fn h(board: &Board, dist: &DistanceMatrix) -> f64 {
    (0..board.cells.len()).map(|c| board.local(dist, c)).sum()
}

fn check_size(dist: &DistanceMatrix, n: usize) -> Result<()> {
    if n == 0 || dist.len() != n * n {
        return Err(Error::Shape {
            context: "biclusters for board",
            expected: n * n,
            actual: dist.len(),
        });
    }
    Ok(())
}

/// Fills cells row by row. The first cell gets a random bicluster; every
/// later cell takes the unplaced bicluster closest in summed distance to
/// its already placed neighbours (lowest id on ties).
pub fn greedy_arrange<R: Rng + ?Sized>(
    dist: &DistanceMatrix,
    n: usize,
    rng: &mut R,
) -> Result<Board> {
    check_size(dist, n)?;
    let m = n * n;
    let mut placed = vec![false; m];
    let mut cells = Vec::with_capacity(m);
    let first = rng.gen_range(0..m);
    placed[first] = true;
    cells.push(first);
    for c in 1..m {
        let (x, y) = (c / n, c % n);
        let mut near = Vec::with_capacity(2);
        if x > 0 {
            near.push(cells[c - n]);
        }
        if y > 0 {
            near.push(cells[c - 1]);
        }
        let mut best: Option<(usize, f64)> = None;
        for id in (0..m).filter(|&id| !placed[id]) {
            let cost: f64 = near.iter().map(|&v| dist.get(id, v)).sum();
            if best.is_none_or(|(_, b)| cost < b) {
                best = Some((id, cost));
            }
        }
        let (id, _) = best.expect("an unplaced bicluster remains");
        placed[id] = true;
        cells.push(id);
    }
    Board::from_cells(n, cells)
}

/// Geometric cooling schedule. Unset temperatures are derived from the
/// starting board: `t0` is the mean `|Δh|` over 100 random swaps and
/// `t_min` is `1e-3 * t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaSchedule {
    pub t0: Option<f64>,
    pub cooling: f64,
    pub iterations_per_temp: usize,
    pub t_min: Option<f64>,
}

impl Default for SaSchedule {
    fn default() -> Self {
        SaSchedule {
            t0: None,
            cooling: 0.995,
            iterations_per_temp: 200,
            t_min: None,
        }
    }
}

impl SaSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return Err(Error::config(format!(
                "cooling factor {} must lie in (0, 1)",
                self.cooling
            )));
        }
        for (name, t) in [("t0", self.t0), ("t_min", self.t_min)] {
            if let Some(t) = t {
                if !(t.is_finite() && t > 0.0) {
                    return Err(Error::config(format!("{name} must be positive, got {t}")));
                }
            }
        }
        if let (Some(t0), Some(tm)) = (self.t0, self.t_min) {
            if tm >= t0 {
                return Err(Error::config(format!("t_min {tm} must be below t0 {t0}")));
            }
        }
        Ok(())
    }
}

const T0_PROBES: usize = 100;

fn random_pair<R: Rng + ?Sized>(m: usize, rng: &mut R) -> (usize, usize) {
    let p = rng.gen_range(0..m);
    let mut q = rng.gen_range(0..m - 1);
    if q >= p {
        q += 1;
    }
    (p, q)
}

/// Simulated annealing over cell swaps, started from [`greedy_arrange`].
/// Returns the best board seen, so its `h` never exceeds the greedy one.
pub fn sa_arrange<R: Rng + ?Sized>(
    dist: &DistanceMatrix,
    n: usize,
    schedule: &SaSchedule,
    rng: &mut R,
) -> Result<Board> {
    schedule.validate()?;
    let mut board = greedy_arrange(dist, n, rng)?;
    let m = n * n;
    if m < 2 {
        return Ok(board);
    }
    let t0 = match schedule.t0 {
        Some(t) => t,
        None => {
            let total: f64 = (0..T0_PROBES)
                .map(|_| {
                    let (p, q) = random_pair(m, rng);
                    board.swap_delta(dist, p, q).abs()
                })
                .sum();
            let mean = total / T0_PROBES as f64;
            if mean > 0.0 {
                mean
            } else {
                1.0
            }
        }
    };
    let t_min = schedule.t_min.unwrap_or(1e-3 * t0);
    if t_min >= t0 {
        return Err(Error::config(format!(
            "t_min {t_min} must be below t0 {t0}"
        )));
    }

    let mut current = h(&board, dist);
    let mut best = board.clone();
    let mut best_h = current;
    let mut t = t0;
    while t > t_min {
        for _ in 0..schedule.iterations_per_temp {
            let (p, q) = random_pair(m, rng);
            let delta = board.swap_delta(dist, p, q);
            if delta <= 0.0 || rng.gen::<f64>() < (-delta / t).exp() {
                board.swap(p, q);
                current += delta;
                if current < best_h - 1e-12 {
                    best_h = current;
                    best.clone_from(&board);
                }
            }
        }
        t *= schedule.cooling;
    }
    Ok(best)
}

/// `k` annealing runs on independent streams seeded from `rng`. All boards
/// hold the same bicluster ids.
pub fn build_boards<R: Rng + ?Sized>(
    dist: &DistanceMatrix,
    n: usize,
    k: usize,
    schedule: &SaSchedule,
    rng: &mut R,
) -> Result<Vec<Board>> {
    if k == 0 {
        return Err(Error::config("number of boards must be at least 1"));
    }
    schedule.validate()?;
    let seeds: Vec<u64> = (0..k).map(|_| rng.gen()).collect();
    seeds
        .into_par_iter()
        .map(|s| sa_arrange(dist, n, schedule, &mut ChaCha8Rng::seed_from_u64(s)))
        .collect()
}
