//! Built-in environments: counterexample tree games and the GoalGather gridworld.

pub mod grid;
pub mod tree;

pub use grid::{GoalGather, GridState, GridTeamSpec, Move};
pub use tree::{
    build_example1, build_example2, build_random_tree, TreeConstruction, TreeGame, TreeGameSpec, TreeKind,
    TreeState,
};
