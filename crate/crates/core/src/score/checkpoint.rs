//! Binary checkpoint format for trained score networks.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic            8 bytes  "RFLDIFC1"
//! version          u32      currently 1
//! domain kind      u8       0 interval, 1 hypercube, 2 projected simplex
//! domain dim       u32
//! data_dim         u32
//! hidden_width     u32
//! hidden_layers    u32
//! time_embed_dim   u32
//! output_scale     u8       0 or 1
//! sigma0           f64
//! sigma1           f64
//! t_min            f64
//! param_count      u64
//! params           f64 * param_count   (declaration order)
//! ema params       f64 * param_count
//! ```

use crate::geometry::Domain;
use crate::schedule::NoiseSchedule;
use crate::score::network::{NetworkArch, ScoreNetwork};
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"RFLDIFC1";
const VERSION: u32 = 1;

/// A trained model: domain, network, and its EMA parameter snapshot.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub domain: Domain,
    pub network: ScoreNetwork,
    pub ema_params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(domain: Domain, network: ScoreNetwork, ema_params: Vec<f64>) -> Result<Self> {
        if ema_params.len() != network.n_params() {
            return Err(Error::DimensionMismatch {
                expected: network.n_params(),
                got: ema_params.len(),
            });
        }
        Ok(Self { domain, network, ema_params })
    }

    /// The EMA snapshot as a usable network.
    pub fn ema_network(&self) -> Result<ScoreNetwork> {
        self.network.with_params(self.ema_params.clone())
    }

    /// Serialize; written atomically (temp file + rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let (kind, dim) = match self.domain {
            Domain::UnitInterval => (0u8, 1u32),
            Domain::UnitHypercube(d) => (1, d as u32),
            Domain::ProjectedSimplex(d) => (2, d as u32),
        };
        buf.push(kind);
        buf.extend_from_slice(&dim.to_le_bytes());
        let arch = self.network.arch();
        buf.extend_from_slice(&(arch.data_dim as u32).to_le_bytes());
        buf.extend_from_slice(&(arch.hidden_width as u32).to_le_bytes());
        buf.extend_from_slice(&(arch.hidden_layers as u32).to_le_bytes());
        buf.extend_from_slice(&(arch.time_embed_dim as u32).to_le_bytes());
        buf.push(arch.output_scale as u8);
        let schedule = self.network.schedule();
        buf.extend_from_slice(&schedule.sigma0().to_le_bytes());
        buf.extend_from_slice(&schedule.sigma1().to_le_bytes());
        buf.extend_from_slice(&schedule.t_min.to_le_bytes());
        buf.extend_from_slice(&(self.network.n_params() as u64).to_le_bytes());
        for p in self.network.params() {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        for p in &self.ema_params {
            buf.extend_from_slice(&p.to_le_bytes());
        }

        let tmp = path.with_extension("tmp");
        let io = |e: std::io::Error| Error::Checkpoint(format!("{}: {e}", path.display()));
        let mut file = std::fs::File::create(&tmp).map_err(io)?;
        file.write_all(&buf).map_err(io)?;
        file.sync_all().map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let io = |e: std::io::Error| Error::Checkpoint(format!("{}: {e}", path.display()));
        let mut bytes = Vec::new();
        std::fs::File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
        let mut cursor = Reader { bytes: &bytes, pos: 0 };

        if cursor.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = cursor.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = cursor.u8()?;
        let dim = cursor.u32()? as usize;
        let domain = match kind {
            0 => Domain::UnitInterval,
            1 => Domain::UnitHypercube(dim),
            2 => Domain::ProjectedSimplex(dim),
            other => return Err(Error::Checkpoint(format!("unknown domain kind {other}"))),
        };
        let arch = NetworkArch {
            data_dim: cursor.u32()? as usize,
            hidden_width: cursor.u32()? as usize,
            hidden_layers: cursor.u32()? as usize,
            time_embed_dim: cursor.u32()? as usize,
            output_scale: cursor.u8()? != 0,
        };
        let sigma0 = cursor.f64()?;
        let sigma1 = cursor.f64()?;
        let t_min = cursor.f64()?;
        let schedule = NoiseSchedule::new(sigma0, sigma1)?.with_t_min(t_min)?;
        let count = cursor.u64()? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(cursor.f64()?);
        }
        let mut ema = Vec::with_capacity(count);
        for _ in 0..count {
            ema.push(cursor.f64()?);
        }
        if cursor.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let network = ScoreNetwork::from_params(arch, schedule, params)?;
        Checkpoint::new(domain, network, ema)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
