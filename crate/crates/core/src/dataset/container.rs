//! Little-endian binary container; layout documented in docs/FORMAT.md.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::{DataPair, Dataset, DatasetHeader};
use crate::error::{Error, Result};
use crate::integrate::TrajectoryRecord;
use crate::params::N_VARIED;
use crate::system::{OUTPUT_CHANNELS, WHEELSETS};

pub const CONTAINER_MAGIC: [u8; 8] = *b"MBDNODS\0";
pub const CONTAINER_VERSION: u32 = 1;

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::Format(format!("name too long: {s}")))?;
    w.write_u16::<LE>(len)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = r.read_u16::<LE>()? as usize;
    let mut buf = vec![0; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("name is not UTF-8".into()))
}

fn write_matrix(w: &mut impl Write, m: &Array2<f64>) -> Result<()> {
    // channel-major: row by row
    for v in m.rows().into_iter().flat_map(|r| r.into_iter()) {
        w.write_f64::<LE>(*v)?;
    }
    Ok(())
}

fn read_matrix(r: &mut impl Read, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut data = vec![0.0; rows * cols];
    r.read_f64_into::<LE>(&mut data)?;
    Ok(Array2::from_shape_vec((rows, cols), data).expect("shape matches length"))
}

pub fn write_container(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let h = &dataset.header;
    let n_time = h.n_time;
    if h.n_train + h.n_val != dataset.pairs.len() {
        return Err(Error::DimensionMismatch {
            expected: h.n_train + h.n_val,
            actual: dataset.pairs.len(),
            context: "pairs in dataset",
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CONTAINER_MAGIC)?;
    w.write_u32::<LE>(CONTAINER_VERSION)?;
    w.write_u64::<LE>(dataset.pairs.len() as u64)?;
    w.write_u64::<LE>(h.n_train as u64)?;
    w.write_u64::<LE>(h.n_val as u64)?;
    w.write_u64::<LE>(n_time as u64)?;
    w.write_u32::<LE>(OUTPUT_CHANNELS as u32)?;
    w.write_u32::<LE>(WHEELSETS as u32)?;
    w.write_u32::<LE>(N_VARIED as u32)?;
    w.write_f64::<LE>(h.dt_out)?;
    w.write_f64::<LE>(h.duration)?;
    w.write_u64::<LE>(h.master_seed)?;
    for name in h.channel_names.iter().chain(&h.param_names) {
        write_str(&mut w, name)?;
    }
    w.write_u32::<LE>(h.base_params.len() as u32)?;
    w.write_all(h.base_params.as_bytes())?;
    for pair in &dataset.pairs {
        let r = &pair.record;
        if r.len() != n_time || r.params.len() != N_VARIED {
            return Err(Error::DimensionMismatch {
                expected: n_time,
                actual: r.len(),
                context: "record length",
            });
        }
        w.write_u64::<LE>(pair.seed)?;
        w.write_f64::<LE>(r.residual_ratio)?;
        for p in &r.params {
            w.write_f64::<LE>(*p)?;
        }
        write_matrix(&mut w, &r.irregularity)?;
        write_matrix(&mut w, &r.x)?;
        write_matrix(&mut w, &r.v)?;
        write_matrix(&mut w, &r.a)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != CONTAINER_MAGIC {
        return Err(Error::Format("not a dataset container (bad magic)".into()));
    }
    let version = r.read_u32::<LE>()?;
    if version != CONTAINER_VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let n = r.read_u64::<LE>()? as usize;
    let n_train = r.read_u64::<LE>()? as usize;
    let n_val = r.read_u64::<LE>()? as usize;
    let n_time = r.read_u64::<LE>()? as usize;
    let n_ch = r.read_u32::<LE>()? as usize;
    let n_exc = r.read_u32::<LE>()? as usize;
    let n_par = r.read_u32::<LE>()? as usize;
    if n != n_train + n_val || n_ch != OUTPUT_CHANNELS || n_exc != WHEELSETS || n_par != N_VARIED {
        return Err(Error::Format("inconsistent container header counts".into()));
    }
    let dt_out = r.read_f64::<LE>()?;
    let duration = r.read_f64::<LE>()?;
    let master_seed = r.read_u64::<LE>()?;
    let channel_names = (0..n_ch).map(|_| read_str(&mut r)).collect::<Result<Vec<_>>>()?;
    let param_names = (0..n_par).map(|_| read_str(&mut r)).collect::<Result<Vec<_>>>()?;
    let len = r.read_u32::<LE>()? as usize;
    let mut buf = vec![0; len];
    r.read_exact(&mut buf)?;
    let base_params = String::from_utf8(buf).map_err(|_| Error::Format("base parameters not UTF-8".into()))?;
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let seed = r.read_u64::<LE>()?;
        let residual_ratio = r.read_f64::<LE>()?;
        let mut params = vec![0.0; n_par];
        r.read_f64_into::<LE>(&mut params)?;
        let irregularity = read_matrix(&mut r, n_exc, n_time)?;
        let x = read_matrix(&mut r, n_ch, n_time)?;
        let v = read_matrix(&mut r, n_ch, n_time)?;
        let a = read_matrix(&mut r, n_ch, n_time)?;
        pairs.push(DataPair {
            seed,
            record: TrajectoryRecord {
                dt_out,
                params,
                irregularity,
                x,
                v,
                a,
                modal: None,
                residual_ratio,
            },
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    Ok(Dataset {
        header: DatasetHeader {
            n_train,
            n_val,
            n_time,
            dt_out,
            duration,
            master_seed,
            channel_names,
            param_names,
            base_params,
        },
        pairs,
    })
}
