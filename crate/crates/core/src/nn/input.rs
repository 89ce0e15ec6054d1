use crate::geometry::WALL_HEIGHT;
use crate::heightmap::{Observation, MAP_SIZE, PROPRIO_LEN};

use super::scalar::Scalar;

/// Mid-range and half-range of the height and width channels.
const H_MID: f64 = 0.125;
const H_HALF: f64 = 0.075;
const W_MID: f64 = 0.30;
const W_HALF: f64 = 0.10;

/// A batch of encoded observations: maps stored channel-major
/// (`[n][side][side]`, single channel) and proprioception row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsBatch<T> {
    side: usize,
    proprio_len: usize,
    maps: Vec<T>,
    proprio: Vec<T>,
}

impl<T: Scalar> ObsBatch<T> {
    pub fn new(side: usize, proprio_len: usize) -> Self {
        ObsBatch {
            side,
            proprio_len,
            maps: Vec::new(),
            proprio: Vec::new(),
        }
    }

    pub fn standard() -> Self {
        Self::new(MAP_SIZE, PROPRIO_LEN)
    }

    pub fn with_capacity(side: usize, proprio_len: usize, n: usize) -> Self {
        ObsBatch {
            side,
            proprio_len,
            maps: Vec::with_capacity(n * side * side),
            proprio: Vec::with_capacity(n * proprio_len),
        }
    }

    pub fn from_observations<'a>(obs: impl IntoIterator<Item = &'a Observation>) -> Self {
        let mut b = Self::standard();
        for o in obs {
            b.push_observation(o);
        }
        b
    }

    /// Appends already-encoded inputs.
    pub fn push_raw(&mut self, map: &[T], proprio: &[T]) {
        assert_eq!(map.len(), self.side * self.side, "map size");
        assert_eq!(proprio.len(), self.proprio_len, "proprio size");
        self.maps.extend_from_slice(map);
        self.proprio.extend_from_slice(proprio);
    }

    pub fn push_observation(&mut self, o: &Observation) {
        self.push_unencoded(o.heightmap.as_slice(), &o.proprio);
    }

    /// Encodes and appends a raw height map (metres) and proprioception.
    pub fn push_unencoded(&mut self, map: &[f32], proprio: &[f32; PROPRIO_LEN]) {
        assert_eq!(self.side, MAP_SIZE);
        assert_eq!(self.proprio_len, PROPRIO_LEN);
        assert_eq!(map.len(), MAP_SIZE * MAP_SIZE, "map size");
        self.maps
            .extend(map.iter().map(|&v| T::of(f64::from(v) / WALL_HEIGHT)));
        self.proprio.extend(encode_proprio(proprio).map(T::of));
    }

    pub fn len(&self) -> usize {
        self.proprio.len() / self.proprio_len.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.proprio.is_empty()
    }

    pub fn clear(&mut self) {
        self.maps.clear();
        self.proprio.clear();
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn proprio_len(&self) -> usize {
        self.proprio_len
    }

    pub fn maps(&self) -> &[T] {
        &self.maps
    }

    pub fn proprio(&self) -> &[T] {
        &self.proprio
    }

    /// Rows `idx` gathered into a new batch.
    pub fn gather(&self, idx: &[usize]) -> Self {
        let mut b = Self::with_capacity(self.side, self.proprio_len, idx.len());
        let m = self.side * self.side;
        let p = self.proprio_len;
        for &i in idx {
            b.maps.extend_from_slice(&self.maps[i * m..(i + 1) * m]);
            b.proprio.extend_from_slice(&self.proprio[i * p..(i + 1) * p]);
        }
        b
    }
}

/// Centres height and width on their ranges; heading and target offset pass
/// through.
pub fn encode_proprio(p: &[f32; PROPRIO_LEN]) -> [f64; PROPRIO_LEN] {
    let f = |i: usize| f64::from(p[i]);
    [
        f(0),
        f(1),
        (f(2) - H_MID) / H_HALF,
        (f(3) - W_MID) / W_HALF,
        f(4),
        f(5),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heightmap::observe;
    use crate::sim::{EnvConfig, RobotState};

    #[test]
    fn encoding_ranges() {
        let e = encode_proprio(&[1.0, 0.0, 0.05, 0.20, 0.8, 0.0]);
        assert!((e[2] + 1.0).abs() < 1e-6);
        assert!((e[3] + 1.0).abs() < 1e-6);
        let e = encode_proprio(&[1.0, 0.0, 0.20, 0.40, 0.8, 0.0]);
        assert!((e[2] - 1.0).abs() < 1e-6);
        assert!((e[3] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gather_and_len() {
        let env = EnvConfig::empty(RobotState::at_rest(0.0, 0.0, 0.0), [0.8, 0.0]);
        let a = observe(&env, &RobotState::at_rest(0.0, 0.0, 0.0));
        let b = observe(&env, &RobotState::at_rest(0.8, 0.8, 0.0));
        let batch = ObsBatch::<f32>::from_observations([&a, &b]);
        assert_eq!(batch.len(), 2);
        let g = batch.gather(&[1, 1, 0]);
        assert_eq!(g.len(), 3);
        assert_eq!(g.maps()[..1024], batch.maps()[1024..]);
        assert_eq!(g.proprio()[12..], batch.proprio()[..6]);
        assert!(batch.maps()[1024..].iter().any(|&v| v == 1.0));
    }
}
