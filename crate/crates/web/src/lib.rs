//! Browser bindings: build a behaviour scene, solve it with the scripted
//! manoeuvre, show the height map the robot sees, and compare two paths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use wlnav::curriculum::{make_behavior_env, scripted_actions, BehaviorId};
use wlnav::domrand::replay_states;
use wlnav::evaluation::{render_scene, trajectory_distance};
use wlnav::heightmap::{render, MAP_SIZE};
use wlnav::sim::{EnvConfig, RobotState};

/// A behaviour environment plus, once solved, its scripted path.
#[wasm_bindgen]
pub struct Scene {
    env: EnvConfig,
    states: Vec<RobotState>,
}

#[wasm_bindgen]
impl Scene {
    /// `behavior` is `b1`..`b5` or a full behaviour name.
    #[wasm_bindgen(constructor)]
    pub fn new(behavior: &str, seed: u64) -> Result<Scene, JsError> {
        let b = BehaviorId::from_name(behavior)
            .ok_or_else(|| JsError::new(&format!("unknown behaviour {behavior:?}")))?;
        let env = make_behavior_env(b, &mut ChaCha8Rng::seed_from_u64(seed));
        let states = match scripted_actions(b, &env) {
            Some(a) => replay_states(&env, &a).map_err(|e| JsError::new(&e.to_string()))?,
            None => vec![env.start],
        };
        Ok(Scene { env, states })
    }

    /// The environment as a TOML document, as `wlnav render` reads it.
    pub fn env_text(&self) -> String {
        self.env.to_text()
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// Flat `[x0, y0, x1, y1, ...]` of the scripted path.
    pub fn path(&self) -> Vec<f64> {
        self.states.iter().flat_map(|s| s.position()).collect()
    }

    /// Side of the square [`Scene::rgba`] image in pixels.
    pub fn image_side(&self) -> usize {
        ppm_side(&render_scene(&self.env, None))
    }

    /// RGBA pixels of the top view, with the path when `with_path`.
    pub fn rgba(&self, with_path: bool) -> Vec<u8> {
        let path: Vec<[f64; 2]> = self.states.iter().map(|s| s.position()).collect();
        ppm_to_rgba(&render_scene(&self.env, with_path.then_some(path.as_slice())))
    }

    /// 32x32 height map seen at path step `t` (clamped), row 0 at the bottom.
    pub fn heightmap(&self, t: usize) -> Vec<f32> {
        let s = self.states[t.min(self.states.len() - 1)];
        render(&self.env, &s).as_slice().to_vec()
    }

    /// `[x, y, theta, h, w]` at path step `t` (clamped).
    pub fn state(&self, t: usize) -> Vec<f64> {
        let s = self.states[t.min(self.states.len() - 1)];
        vec![s.x, s.y, s.theta, s.h, s.w]
    }
}

#[wasm_bindgen]
pub fn heightmap_side() -> usize {
    MAP_SIZE
}

/// Discrete Fréchet distance between two flat `[x0, y0, x1, y1, ...]` paths.
#[wasm_bindgen]
pub fn frechet(a: &[f64], b: &[f64]) -> Result<f64, JsError> {
    let pts = |v: &[f64]| -> Result<Vec<[f64; 2]>, JsError> {
        if v.is_empty() || !v.len().is_multiple_of(2) {
            return Err(JsError::new("paths need a positive, even number of coordinates"));
        }
        Ok(v.chunks(2).map(|c| [c[0], c[1]]).collect())
    };
    Ok(trajectory_distance(&pts(a)?, &pts(b)?))
}

fn ppm_header_end(ppm: &[u8]) -> usize {
    // "P6\n<side> <side>\n255\n": the pixels follow the third newline.
    ppm.iter()
        .enumerate()
        .filter(|(_, &c)| c == b'\n')
        .nth(2)
        .map_or(0, |(i, _)| i + 1)
}

fn ppm_side(ppm: &[u8]) -> usize {
    let n = (ppm.len() - ppm_header_end(ppm)) / 3;
    (n as f64).sqrt().round() as usize
}

fn ppm_to_rgba(ppm: &[u8]) -> Vec<u8> {
    ppm[ppm_header_end(ppm)..]
        .chunks(3)
        .flat_map(|p| [p[0], p[1], p[2], 255])
        .collect()
}
