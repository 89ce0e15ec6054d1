//! Trajectory batch container.
//!
//! ```text
//! header   "WLNAVBAT" u32:version f64:gamma u32:geometry_hash
//!          u32:n_envs u32:n_traj u32:n_rand
//! record*  u32:len body[len] u32:crc32(body)
//! body     u8:behavior u32:env_id u32:traj_id u32:rand_id
//!          f64 x5:start f64 x2:target u32:max_steps u16:n (u8:col u8:row u8:shape) xn
//!          u32:steps (f32 x1024:map f32 x6:proprio i8 x5:action f64:reward f64:return) xsteps
//! ```
//!
//! All little-endian. The `.idx` sidecar holds `"WLNAVIDX" u32:version
//! u64:count u64 x count` record offsets.

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::curriculum::BehaviorId;
use crate::geometry::geometry_hash;
use crate::heightmap::{MAP_SIZE, PROPRIO_LEN};
use crate::sim::{Action, Cell, EnvConfig, Obstacle, ObstacleShape, RobotState, N_CHANNELS};

use super::{BatchEpisode, DomrandError, Provenance};

pub const MAGIC: &[u8; 8] = b"WLNAVBAT";
pub const INDEX_MAGIC: &[u8; 8] = b"WLNAVIDX";
pub const VERSION: u32 = 1;
const HEADER_LEN: u64 = 8 + 4 + 8 + 4 + 12;
const MAP_LEN: usize = MAP_SIZE * MAP_SIZE;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchHeader {
    pub gamma: f64,
    pub geometry_hash: u32,
    pub n_envs: u32,
    pub n_traj: u32,
    pub n_rand: u32,
}

impl BatchHeader {
    pub fn new(gamma: f64, n_envs: u32, n_traj: u32, n_rand: u32) -> Self {
        BatchHeader {
            gamma,
            geometry_hash: geometry_hash(),
            n_envs,
            n_traj,
            n_rand,
        }
    }

    fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(HEADER_LEN as usize);
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&self.gamma.to_le_bytes());
        b.extend_from_slice(&self.geometry_hash.to_le_bytes());
        b.extend_from_slice(&self.n_envs.to_le_bytes());
        b.extend_from_slice(&self.n_traj.to_le_bytes());
        b.extend_from_slice(&self.n_rand.to_le_bytes());
        b
    }

    fn decode(b: &[u8]) -> Result<Self, DomrandError> {
        if &b[..8] != MAGIC {
            return Err(DomrandError::Format("not a trajectory batch".into()));
        }
        let mut c = Cursor::new(&b[8..]);
        let version = c.u32()?;
        if version != VERSION {
            return Err(DomrandError::Format(format!("unsupported batch version {version}")));
        }
        let h = BatchHeader {
            gamma: c.f64()?,
            geometry_hash: c.u32()?,
            n_envs: c.u32()?,
            n_traj: c.u32()?,
            n_rand: c.u32()?,
        };
        if h.geometry_hash != geometry_hash() {
            return Err(DomrandError::Format(
                "batch was written with different geometry constants".into(),
            ));
        }
        Ok(h)
    }
}

pub fn index_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".idx");
    PathBuf::from(p)
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(b: &'a [u8]) -> Self {
        Cursor { b, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DomrandError> {
        let end = self.pos + n;
        if end > self.b.len() {
            return Err(DomrandError::Format("record truncated".into()));
        }
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DomrandError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DomrandError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DomrandError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, DomrandError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, DomrandError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn encode_episode(ep: &BatchEpisode) -> Vec<u8> {
    let n = ep.len();
    let mut b = Vec::with_capacity(64 + n * (MAP_LEN * 4 + 24 + 5 + 16));
    let p = &ep.provenance;
    b.push(p.behavior.index() as u8);
    for v in [p.env_id, p.traj_id, p.rand_id] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    let s = &ep.env.start;
    for v in [s.x, s.y, s.theta, s.h, s.w, ep.env.target[0], ep.env.target[1]] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend_from_slice(&ep.env.max_steps.to_le_bytes());
    b.extend_from_slice(&(ep.env.obstacles.len() as u16).to_le_bytes());
    for o in &ep.env.obstacles {
        b.extend_from_slice(&[o.cell.col, o.cell.row, o.shape.code()]);
    }
    b.extend_from_slice(&(n as u32).to_le_bytes());
    for t in 0..n {
        for v in &ep.maps[t * MAP_LEN..(t + 1) * MAP_LEN] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for v in &ep.proprio[t] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend(ep.actions[t].symbols().iter().map(|&s| s as u8));
        b.extend_from_slice(&ep.rewards[t].to_le_bytes());
        b.extend_from_slice(&ep.returns[t].to_le_bytes());
    }
    b
}

pub fn decode_episode(body: &[u8]) -> Result<BatchEpisode, DomrandError> {
    let mut c = Cursor::new(body);
    let behavior = BehaviorId::from_index(c.u8()? as usize)
        .ok_or_else(|| DomrandError::Format("unknown behavior id".into()))?;
    let provenance = Provenance {
        behavior,
        env_id: c.u32()?,
        traj_id: c.u32()?,
        rand_id: c.u32()?,
    };
    let start = RobotState {
        x: c.f64()?,
        y: c.f64()?,
        theta: c.f64()?,
        h: c.f64()?,
        w: c.f64()?,
    };
    let target = [c.f64()?, c.f64()?];
    let max_steps = c.u32()?;
    let n_obs = c.u16()?;
    let mut obstacles = Vec::with_capacity(n_obs as usize);
    for _ in 0..n_obs {
        let (col, row, code) = (c.u8()?, c.u8()?, c.u8()?);
        let shape = ObstacleShape::from_code(code)
            .ok_or_else(|| DomrandError::Format(format!("unknown obstacle code {code}")))?;
        obstacles.push(Obstacle {
            cell: Cell::new(col as usize, row as usize),
            shape,
        });
    }
    let env = EnvConfig {
        obstacles,
        start,
        target,
        max_steps,
    };
    let n = c.u32()? as usize;
    let mut ep = BatchEpisode {
        provenance,
        env,
        maps: Vec::with_capacity(n * MAP_LEN),
        proprio: Vec::with_capacity(n),
        actions: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
        returns: Vec::with_capacity(n),
    };
    for _ in 0..n {
        for _ in 0..MAP_LEN {
            ep.maps.push(c.f32()?);
        }
        let mut p = [0f32; PROPRIO_LEN];
        for v in &mut p {
            *v = c.f32()?;
        }
        ep.proprio.push(p);
        let mut sym = [0i8; N_CHANNELS];
        for s in &mut sym {
            *s = c.u8()? as i8;
        }
        ep.actions
            .push(Action::new(sym).map_err(|e| DomrandError::Format(e.to_string()))?);
        ep.rewards.push(c.f64()?);
        ep.returns.push(c.f64()?);
    }
    if c.pos != body.len() {
        return Err(DomrandError::Format("trailing bytes in record".into()));
    }
    Ok(ep)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DomrandError + '_ {
    move |e| DomrandError::Io(path.display().to_string(), e)
}

/// Single appender; the index is written by [`BatchWriter::finish`].
pub struct BatchWriter {
    path: PathBuf,
    out: BufWriter<File>,
    offset: u64,
    offsets: Vec<u64>,
}

impl BatchWriter {
    pub fn create(path: &Path, header: &BatchHeader) -> Result<Self, DomrandError> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(file);
        out.write_all(&header.encode()).map_err(io_err(path))?;
        Ok(BatchWriter {
            path: path.to_path_buf(),
            out,
            offset: HEADER_LEN,
            offsets: Vec::new(),
        })
    }

    pub fn append(&mut self, ep: &BatchEpisode) -> Result<(), DomrandError> {
        let body = encode_episode(ep);
        let crc = crc32fast::hash(&body);
        let err = io_err(&self.path);
        self.out
            .write_all(&(body.len() as u32).to_le_bytes())
            .map_err(&err)?;
        self.out.write_all(&body).map_err(&err)?;
        self.out.write_all(&crc.to_le_bytes()).map_err(&err)?;
        self.offsets.push(self.offset);
        self.offset += 8 + body.len() as u64;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn finish(mut self) -> Result<usize, DomrandError> {
        self.out.flush().map_err(io_err(&self.path))?;
        let idx = index_path(&self.path);
        let mut b = Vec::with_capacity(20 + 8 * self.offsets.len());
        b.extend_from_slice(INDEX_MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(self.offsets.len() as u64).to_le_bytes());
        for o in &self.offsets {
            b.extend_from_slice(&o.to_le_bytes());
        }
        std::fs::write(&idx, b).map_err(io_err(&idx))?;
        Ok(self.offsets.len())
    }
}

/// Random access through the offset index. Reads may come from several
/// threads.
pub struct BatchReader {
    path: PathBuf,
    pub header: BatchHeader,
    offsets: Vec<u64>,
    file_len: u64,
    file: Mutex<File>,
}

impl BatchReader {
    pub fn open(path: &Path) -> Result<Self, DomrandError> {
        let mut file = File::open(path).map_err(io_err(path))?;
        let mut head = vec![0u8; HEADER_LEN as usize];
        file.read_exact(&mut head)
            .map_err(|_| DomrandError::Format("truncated batch header".into()))?;
        let header = BatchHeader::decode(&head)?;
        let file_len = file.metadata().map_err(io_err(path))?.len();
        let idx = index_path(path);
        let raw = std::fs::read(&idx).map_err(io_err(&idx))?;
        if raw.len() < 20 || &raw[..8] != INDEX_MAGIC {
            return Err(DomrandError::Format(format!("{} is not a batch index", idx.display())));
        }
        let count = u64::from_le_bytes(raw[12..20].try_into().unwrap()) as usize;
        if raw.len() != 20 + 8 * count {
            return Err(DomrandError::Format("index length mismatch".into()));
        }
        let offsets = raw[20..]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(BatchReader {
            path: path.to_path_buf(),
            header,
            offsets,
            file_len,
            file: Mutex::new(file),
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[u64] {
        &self.offsets
    }

    pub fn read(&self, i: usize) -> Result<BatchEpisode, DomrandError> {
        let off = *self
            .offsets
            .get(i)
            .ok_or_else(|| DomrandError::Format(format!("episode {i} out of range")))?;
        let err = io_err(&self.path);
        let body = {
            let mut f = self.file.lock().expect("batch file lock poisoned");
            f.seek(SeekFrom::Start(off)).map_err(&err)?;
            let mut len = [0u8; 4];
            f.read_exact(&mut len).map_err(&err)?;
            let len = u64::from(u32::from_le_bytes(len));
            if off + 8 + len > self.file_len {
                return Err(DomrandError::Format(format!("episode {i}: record truncated")));
            }
            let mut buf = vec![0u8; len as usize + 4];
            f.read_exact(&mut buf).map_err(&err)?;
            buf
        };
        let (body, crc) = body.split_at(body.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(DomrandError::Format(format!("episode {i}: checksum mismatch")));
        }
        decode_episode(body)
    }

    pub fn read_all(&self) -> Result<Vec<BatchEpisode>, DomrandError> {
        (0..self.len()).map(|i| self.read(i)).collect()
    }
}

/// Writes `episodes` to `path` plus its index.
pub fn write_batch(
    path: &Path,
    header: &BatchHeader,
    episodes: &[BatchEpisode],
) -> Result<usize, DomrandError> {
    let mut w = BatchWriter::create(path, header)?;
    for ep in episodes {
        w.append(ep)?;
    }
    w.finish()
}
