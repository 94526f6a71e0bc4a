//! Biclusters laid out on `n x n` boards, a multi-board gridworld whose
//! reward is the Jaccard similarity of neighbouring user sets, Q-learning
//! over it, and the recommendation walk evaluated by recall.

mod board;
mod mdp;
mod recommend;

pub use board::{
    bicluster_distance, build_boards, greedy_arrange, h, jaccard, neighbours, sa_arrange, Board,
    DistanceMatrix, SaSchedule,
};
pub use mdp::{
    greedy_action, q_learn, Direction, GridAction, GridMdp, GridQConfig, Gridworld,
    MultiBoardState, SingleBoard,
};
pub use recommend::{
    choose_starts, recall_at_n, recommend, write_recall_csv, RecallMode, RecallReport,
    RecommendationTrace, StopReason, UserRecall,
};
