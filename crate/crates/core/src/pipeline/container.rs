//! Binary dataset container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        8 bytes  "FWIDATA1"
//! version      u16      1
//! byte order   u16      0xFEFF as written by the producer
//! family       u8       0 = FlatVel, 1 = CurvedVel
//! count        u32      number of records
//! nz, nx       u32 x 2  model grid
//! ns, nr, nt   u32 x 3  gather extent
//! dx, dt       f64 x 2  metres, seconds
//! records      count x { spec_len u32, spec bytes, nz*nx f32 model,
//!                        ns*nr*nt f32 gather }
//! ```
//!
//! The generator-spec bytes are the bincode encoding of the record's
//! [`ModelGenSpec`], so every model can be regenerated from the file alone.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::geomodel::{Family, ModelGenSpec, VelocityModel};
use crate::numerics::Tensor;
use crate::wavesim::ShotGather;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FWIDATA1";
pub const FORMAT_VERSION: u16 = 1;
pub const BYTE_ORDER_MARK: u16 = 0xFEFF;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub family: Family,
    pub model_dims: (usize, usize),
    pub gather_dims: (usize, usize, usize),
    pub dx: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub spec: ModelGenSpec,
    pub model: Vec<f32>,
    pub gather: Vec<f32>,
}

impl DatasetRecord {
    pub fn new(spec: ModelGenSpec, model: &VelocityModel, gather: &ShotGather) -> Self {
        Self {
            spec,
            model: model.grid().data().iter().map(|&v| v as f32).collect(),
            gather: gather.data().data().iter().map(|&v| v as f32).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn new(header: DatasetHeader, records: Vec<DatasetRecord>) -> Result<Self> {
        let ds = Self { header, records };
        ds.check()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn check(&self) -> Result<()> {
        let (nz, nx) = self.header.model_dims;
        let (ns, nr, nt) = self.header.gather_dims;
        for (i, r) in self.records.iter().enumerate() {
            if r.model.len() != nz * nx || r.gather.len() != ns * nr * nt {
                return Err(Error::ShapeMismatch(format!(
                    "record {i} holds {} model and {} gather values, header says {}x{} and {}x{}x{}",
                    r.model.len(),
                    r.gather.len(),
                    nz,
                    nx,
                    ns,
                    nr,
                    nt
                )));
            }
        }
        Ok(())
    }

    pub fn model(&self, i: usize) -> VelocityModel {
        let (nz, nx) = self.header.model_dims;
        let data = self.records[i].model.iter().map(|&v| v as f64).collect();
        VelocityModel::new(Tensor::new(vec![nz, nx], data).expect("checked dims"), self.header.dx).expect("checked dims")
    }

    pub fn gather(&self, i: usize) -> ShotGather {
        let (ns, nr, nt) = self.header.gather_dims;
        let data = self.records[i].gather.iter().map(|&v| v as f64).collect();
        ShotGather::new(Tensor::new(vec![ns, nr, nt], data).expect("checked dims"), self.header.dt).expect("finite values")
    }

    pub fn models(&self) -> Vec<VelocityModel> {
        (0..self.len()).map(|i| self.model(i)).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        self.check()?;
        let h = &self.header;
        let u32_of = |v: usize| -> Result<[u8; 4]> {
            u32::try_from(v).map(u32::to_le_bytes).map_err(|_| Error::Format(format!("{v} does not fit in u32")))
        };
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&BYTE_ORDER_MARK.to_le_bytes())?;
        w.write_all(&[h.family.tag()])?;
        w.write_all(&u32_of(self.records.len())?)?;
        for v in [h.model_dims.0, h.model_dims.1, h.gather_dims.0, h.gather_dims.1, h.gather_dims.2] {
            w.write_all(&u32_of(v)?)?;
        }
        w.write_all(&h.dx.to_le_bytes())?;
        w.write_all(&h.dt.to_le_bytes())?;
        for r in &self.records {
            let spec = bincode::serialize(&r.spec)?;
            w.write_all(&u32_of(spec.len())?)?;
            w.write_all(&spec)?;
            for v in r.model.iter().chain(&r.gather) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = read_u16(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let bom = read_u16(r)?;
        if bom != BYTE_ORDER_MARK {
            return Err(Error::Format(format!("byte order mark {bom:#06x}, expected little-endian {BYTE_ORDER_MARK:#06x}")));
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let family = Family::from_tag(tag[0])?;
        let count = read_u32(r)? as usize;
        let (nz, nx) = (read_u32(r)? as usize, read_u32(r)? as usize);
        let (ns, nr, nt) = (read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)? as usize);
        let dx = read_f64(r)?;
        let dt = read_f64(r)?;
        let header = DatasetHeader { family, model_dims: (nz, nx), gather_dims: (ns, nr, nt), dx, dt };
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            let mut spec = vec![0u8; len];
            r.read_exact(&mut spec)?;
            let spec: ModelGenSpec = bincode::deserialize(&spec)?;
            let model = read_f32s(r, nz * nx)?;
            let gather = read_f32s(r, ns * nr * nt)?;
            records.push(DatasetRecord { spec, model, gather });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after the last record".into()));
        }
        Self::new(header, records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; 4 * n];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}
