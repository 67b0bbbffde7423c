//! Benchmark plants and the obstacle environment.

pub mod cartpole;
pub mod forest;
pub mod quadrotor;
pub mod racecar;

pub use cartpole::CartPole;
pub use forest::{generate_forest, Obstacle, ObstacleForest};
pub use quadrotor::{smooth_obstacle_cost, Quadrotor, QuadrotorCost, QuadrotorSmoothCost};
pub use racecar::RaceCar;
