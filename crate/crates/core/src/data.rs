//! In-memory datasets and the `UPDE` container.
//!
//! Layout (little-endian): magic `UPDE`, `u16` version, family name, grid,
//! value dtype, `u64` sample count, field schema (name and channel count of
//! the input and output fields), then one record per sample: components
//! block, input, output, split tag.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::components::{
    validate, BoundaryType, EdgeCondition, EdgeKind, Field, GridSpec, PdeComponents, Sample, Sampling, SplitTag,
};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: [u8; 4] = *b"UPDE";
pub const DATASET_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("sample {index} is invalid: {message}")]
    InvalidSample { index: usize, message: String },
    #[error("sample {index}: {field} has {actual} channels, schema declares {expected}")]
    Schema {
        index: usize,
        field: &'static str,
        expected: usize,
        actual: usize,
    },
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Codec(CodecError::Io(e))
    }
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Storage precision of field values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub family: String,
    pub grid: GridSpec,
    pub dtype: Dtype,
    pub samples: Vec<Sample>,
}

/// Distinct coefficient maps with their split tag, in first-seen order.
pub type ConditionGroup = (BTreeMap<String, f64>, SplitTag);

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn condition_groups(&self) -> Vec<ConditionGroup> {
        let mut out: Vec<ConditionGroup> = Vec::new();
        for s in &self.samples {
            let key = (s.components.coefficients.clone(), s.split);
            if !out.contains(&key) {
                out.push(key);
            }
        }
        out
    }

    /// Samples with the given tag, everything else dropped.
    pub fn filter_split(&self, split: SplitTag) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| s.split == split).cloned().collect(),
            ..self.clone()
        }
    }

    /// Checks every sample against the grid.
    pub fn validate(&self) -> Result<()> {
        for (index, s) in self.samples.iter().enumerate() {
            let v = validate(s, &self.grid);
            if !v.is_empty() {
                let message = v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ");
                return Err(DataError::InvalidSample { index, message });
            }
        }
        Ok(())
    }

    fn schema(&self) -> (usize, usize) {
        self.samples
            .first()
            .map(|s| (s.input.shape()[0], s.output.shape()[0]))
            .unwrap_or((0, 0))
    }

    pub fn write_to(&self, out: impl Write) -> Result<()> {
        self.validate()?;
        let (cin, cout) = self.schema();
        let mut w = Writer::new(out);
        w.bytes(&DATASET_MAGIC)?;
        w.u16(DATASET_VERSION)?;
        w.str(&self.family)?;
        write_grid(&mut w, &self.grid)?;
        w.u8(match self.dtype {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        })?;
        w.u64(self.samples.len() as u64)?;
        w.u32(2)?;
        for (name, ch) in [("input", cin), ("output", cout)] {
            w.str(name)?;
            w.u32(ch as u32)?;
        }
        for (index, s) in self.samples.iter().enumerate() {
            for (field, expected, t) in [("input", cin, &s.input), ("output", cout, &s.output)] {
                if t.shape()[0] != expected {
                    return Err(DataError::Schema {
                        index,
                        field,
                        expected,
                        actual: t.shape()[0],
                    });
                }
            }
            write_components(&mut w, &s.components, self.dtype)?;
            write_tensor(&mut w, &s.input, self.dtype)?;
            write_tensor(&mut w, &s.output, self.dtype)?;
            w.u8(match s.split {
                SplitTag::InDistribution => 0,
                SplitTag::OutOfDistribution => 1,
            })?;
        }
        Ok(())
    }

    pub fn read_from(input: impl Read) -> Result<Dataset> {
        let mut r = Reader::new(input);
        r.magic(DATASET_MAGIC)?;
        let version = r.u16()?;
        if version != DATASET_VERSION {
            return Err(CodecError::UnsupportedVersion(version).into());
        }
        let family = r.str()?;
        let grid = read_grid(&mut r)?;
        let dtype = match r.u8()? {
            0 => Dtype::F32,
            1 => Dtype::F64,
            t => return Err(corrupt(format!("unknown dtype tag {t}"))),
        };
        let count = r.u64()? as usize;
        let n_fields = r.u32()?;
        let mut schema = Vec::new();
        for _ in 0..n_fields {
            let name = r.str()?;
            schema.push((name, r.u32()? as usize));
        }
        let channels = |name: &str| schema.iter().find(|(n, _)| n == name).map(|(_, c)| *c);
        let (cin, cout) = match (channels("input"), channels("output")) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(corrupt("schema lacks input/output fields".into())),
        };
        let mut samples = Vec::with_capacity(count.min(1 << 20));
        for index in 0..count {
            let components = read_components(&mut r, dtype)?;
            let input = read_tensor(&mut r, dtype)?;
            let output = read_tensor(&mut r, dtype)?;
            for (field, expected, t) in [("input", cin, &input), ("output", cout, &output)] {
                if t.shape()[0] != expected {
                    return Err(DataError::Schema {
                        index,
                        field,
                        expected,
                        actual: t.shape()[0],
                    });
                }
            }
            let split = match r.u8()? {
                0 => SplitTag::InDistribution,
                1 => SplitTag::OutOfDistribution,
                t => return Err(corrupt(format!("unknown split tag {t}"))),
            };
            samples.push(Sample {
                input,
                output,
                components,
                split,
            });
        }
        r.finish()?;
        let ds = Dataset {
            family,
            grid,
            dtype,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        Dataset::read_from(BufReader::new(File::open(path)?))
    }
}

fn corrupt(msg: String) -> DataError {
    DataError::Codec(CodecError::Corrupt(msg))
}

pub(crate) fn write_grid<W: Write>(w: &mut Writer<W>, g: &GridSpec) -> crate::codec::Result<()> {
    w.u64(g.n_x as u64)?;
    w.u64(g.n_y.unwrap_or(0) as u64)?;
    w.u64(g.n_t as u64)?;
    for v in [g.x_range.0, g.x_range.1, g.t_range.0, g.t_range.1] {
        w.f64(v)?;
    }
    w.u8(match g.sampling {
        Sampling::Periodic => 0,
        Sampling::Endpoints => 1,
        Sampling::CellCentered => 2,
    })
}

pub(crate) fn read_grid<R: Read>(r: &mut Reader<R>) -> crate::codec::Result<GridSpec> {
    let n_x = r.u64()? as usize;
    let n_y = match r.u64()? {
        0 => None,
        n => Some(n as usize),
    };
    let n_t = r.u64()? as usize;
    let x_range = (r.f64()?, r.f64()?);
    let t_range = (r.f64()?, r.f64()?);
    let sampling = match r.u8()? {
        0 => Sampling::Periodic,
        1 => Sampling::Endpoints,
        2 => Sampling::CellCentered,
        t => return Err(CodecError::Corrupt(format!("unknown sampling tag {t}"))),
    };
    Ok(GridSpec {
        n_x,
        n_y,
        n_t,
        x_range,
        t_range,
        sampling,
    })
}

fn write_tensor<W: Write>(w: &mut Writer<W>, t: &Tensor, dtype: Dtype) -> crate::codec::Result<()> {
    w.u8(t.rank() as u8)?;
    for &d in t.shape() {
        w.u64(d as u64)?;
    }
    for &v in t.data() {
        match dtype {
            Dtype::F32 => w.f32(v as f32)?,
            Dtype::F64 => w.f64(v)?,
        }
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut Reader<R>, dtype: Dtype) -> Result<Tensor> {
    let rank = r.u8()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u64()? as usize);
    }
    let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let n = match n {
        Some(n) if n <= 1 << 32 => n,
        _ => return Err(corrupt(format!("implausible tensor shape {shape:?}"))),
    };
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(match dtype {
            Dtype::F32 => r.f32()? as f64,
            Dtype::F64 => r.f64()?,
        });
    }
    Ok(Tensor::new(shape, data).expect("length matches shape"))
}

fn write_components<W: Write>(w: &mut Writer<W>, c: &PdeComponents, dtype: Dtype) -> crate::codec::Result<()> {
    w.str(&c.symbols)?;
    w.u32(c.coefficients.len() as u32)?;
    for (k, v) in &c.coefficients {
        w.str(k)?;
        w.f64(*v)?;
    }
    match &c.boundary {
        BoundaryType::Periodic => w.u8(0)?,
        BoundaryType::NonPeriodic(edges) => {
            w.u8(1)?;
            w.u32(edges.len() as u32)?;
            for e in edges {
                w.u8(match e.kind {
                    EdgeKind::Dirichlet => 0,
                    EdgeKind::Neumann => 1,
                    EdgeKind::Robin => 2,
                })?;
                w.f64(e.alpha)?;
                w.f64(e.beta)?;
                w.f64(e.gamma)?;
            }
        }
    }
    let fields = c.point_fields();
    let flags = fields
        .iter()
        .enumerate()
        .fold(0u8, |acc, (i, (_, f))| if f.is_some() { acc | (1 << i) } else { acc });
    w.u8(flags)?;
    for (_, f) in fields {
        if let Some(f) = f {
            write_tensor(w, f, dtype)?;
        }
    }
    Ok(())
}

fn read_components<R: Read>(r: &mut Reader<R>, dtype: Dtype) -> Result<PdeComponents> {
    let symbols = r.str()?;
    let n = r.u32()?;
    let mut coefficients = BTreeMap::new();
    for _ in 0..n {
        let k = r.str()?;
        coefficients.insert(k, r.f64()?);
    }
    let boundary = match r.u8()? {
        0 => BoundaryType::Periodic,
        1 => {
            let n = r.u32()?;
            let mut edges = Vec::new();
            for _ in 0..n {
                let kind = match r.u8()? {
                    0 => EdgeKind::Dirichlet,
                    1 => EdgeKind::Neumann,
                    2 => EdgeKind::Robin,
                    t => return Err(corrupt(format!("unknown edge kind {t}"))),
                };
                edges.push(EdgeCondition {
                    kind,
                    alpha: r.f64()?,
                    beta: r.f64()?,
                    gamma: r.f64()?,
                });
            }
            BoundaryType::NonPeriodic(edges)
        }
        t => return Err(corrupt(format!("unknown boundary tag {t}"))),
    };
    let flags = r.u8()?;
    if flags >> 4 != 0 {
        return Err(corrupt(format!("unknown presence flags {flags:#x}")));
    }
    let mut fields: [Option<Field>; 4] = [None, None, None, None];
    for (i, slot) in fields.iter_mut().enumerate() {
        if flags & (1 << i) != 0 {
            *slot = Some(read_tensor(r, dtype)?);
        }
    }
    let [force, kappa, geometry_mask, boundary_values] = fields;
    Ok(PdeComponents {
        symbols,
        coefficients,
        boundary,
        force,
        kappa,
        geometry_mask,
        boundary_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(dtype: Dtype) -> Dataset {
        let grid = GridSpec::new_1d(4, 3, (-1.0, 1.0), (0.0, 1.0), Sampling::CellCentered);
        let mut comp = PdeComponents::new(
            "\\partial_t u = 0",
            BoundaryType::NonPeriodic(vec![EdgeCondition::robin(0.7, 1.0, 0.1), EdgeCondition::neumann(0.2)]),
        )
        .with_coefficient("c01", 1.25);
        comp.kappa = Some(Tensor::new(vec![1, 4], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        comp.boundary_values = Some(Tensor::new(vec![1, 4], vec![0.1, 0.0, 0.0, 0.2]).unwrap());
        let s = Sample {
            input: Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 1.0 / 3.0]).unwrap(),
            output: Tensor::new(vec![1, 3, 4], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap(),
            components: comp,
            split: SplitTag::OutOfDistribution,
        };
        Dataset {
            family: "family1d".into(),
            grid,
            dtype,
            samples: vec![s.clone(), s],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for dtype in [Dtype::F32, Dtype::F64] {
            let ds = dataset(dtype);
            let bytes = ds.to_bytes().unwrap();
            let back = Dataset::read_from(bytes.as_slice()).unwrap();
            assert_eq!(back.to_bytes().unwrap(), bytes);
            if dtype == Dtype::F64 {
                assert_eq!(back, ds);
            }
        }
    }

    #[test]
    fn wrong_version_is_named() {
        let mut bytes = dataset(Dtype::F64).to_bytes().unwrap();
        bytes[4] = 9;
        let err = Dataset::read_from(bytes.as_slice()).unwrap_err();
        assert_eq!(err.to_string(), "format version 9 unsupported");
        bytes[0] = b'X';
        assert!(matches!(
            Dataset::read_from(bytes.as_slice()),
            Err(DataError::Codec(CodecError::BadMagic { .. }))
        ));
    }

    #[test]
    fn truncated_and_trailing_bytes_are_rejected() {
        let bytes = dataset(Dtype::F64).to_bytes().unwrap();
        assert!(Dataset::read_from(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(Dataset::read_from(long.as_slice()).is_err());
    }

    #[test]
    fn invalid_samples_are_not_written() {
        let mut ds = dataset(Dtype::F64);
        ds.samples[1].components.geometry_mask = Some(Tensor::new(vec![1, 4], vec![0.0, 0.5, 1.0, 1.0]).unwrap());
        assert!(matches!(ds.to_bytes(), Err(DataError::InvalidSample { index: 1, .. })));
    }

    #[test]
    fn condition_groups_are_distinct() {
        let mut ds = dataset(Dtype::F64);
        ds.samples[1].split = SplitTag::InDistribution;
        assert_eq!(ds.condition_groups().len(), 2);
    }
}
