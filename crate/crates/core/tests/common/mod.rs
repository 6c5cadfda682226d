#![allow(dead_code)]

use trajcover_core::synthdata::{generate, ScenarioSpec};
use trajcover_core::Trajectory;

/// Agent-frame futures from a generated corpus.
pub fn futures(seed: u64, n: usize) -> Vec<Trajectory> {
    let spec = ScenarioSpec { seed, n_scenes: n, ..ScenarioSpec::default() };
    generate(&spec)
        .unwrap()
        .into_iter()
        .map(|g| g.scene.future_in_agent_frame().unwrap().unwrap())
        .collect()
}
