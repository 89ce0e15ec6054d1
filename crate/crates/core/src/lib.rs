//! Behaviour-decomposed PPO navigation for a reconfigurable wheel-legged
//! robot: a kinematic 2.5-D simulator, a hand-written actor-critic network,
//! curriculum training of secondary behaviours, essential-area domain
//! randomisation and mixed-batch training of the primary policy.

pub mod geometry;
pub mod sim;
pub mod heightmap;
pub mod nn;
pub mod ppo;
pub mod curriculum;
pub mod domrand;
pub mod evaluation;
pub mod primary;
pub mod seed;
