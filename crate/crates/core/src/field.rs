//! Sampled space-time fields and their raw on-disk form.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Domain, GridError, SpaceTimeGrid};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("field values have shape {got:?}, grid expects {expected:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed raw header: {0}")]
    Header(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Where a field came from; enough to regenerate it bit for bit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub operator: String,
    pub forcing: String,
    pub seed: u64,
    pub sample_index: u64,
}

/// One realization on a [`SpaceTimeGrid`]: `values[[level, node]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField<T> {
    grid: SpaceTimeGrid<T>,
    values: Array2<T>,
    provenance: Provenance,
}

impl<T: Real> SpaceTimeField<T> {
    pub fn new(grid: SpaceTimeGrid<T>, values: Array2<T>, provenance: Provenance) -> Result<Self, FieldError> {
        let expected = (grid.time_levels(), grid.spatial().len());
        if values.dim() != expected {
            return Err(FieldError::Shape {
                expected,
                got: values.dim(),
            });
        }
        Ok(Self {
            grid,
            values,
            provenance,
        })
    }

    pub fn zeros(grid: SpaceTimeGrid<T>, provenance: Provenance) -> Self {
        let values = Array2::zeros((grid.time_levels(), grid.spatial().len()));
        Self {
            grid,
            values,
            provenance,
        }
    }

    /// Builds a field by evaluating `g(x, t)` at every node.
    pub fn from_fn(grid: SpaceTimeGrid<T>, g: impl Fn(&[T], T) -> T) -> Self {
        let sg = grid.spatial();
        let coords: Vec<Vec<T>> = (0..sg.len()).map(|i| sg.coords(i)).collect();
        let values = Array2::from_shape_fn((grid.time_levels(), sg.len()), |(l, i)| g(&coords[i], grid.time_at(l)));
        Self {
            grid,
            values,
            provenance: Provenance::default(),
        }
    }

    pub fn grid(&self) -> &SpaceTimeGrid<T> {
        &self.grid
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<T> {
        &mut self.values
    }

    pub fn level(&self, l: usize) -> ArrayView1<'_, T> {
        self.values.row(l)
    }

    pub fn at(&self, level: usize, node: usize) -> T {
        self.values[[level, node]]
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Largest absolute value on the spatial boundary over all levels.
    pub fn boundary_max(&self) -> T {
        let sg = self.grid.spatial();
        let mut m = T::zero();
        for i in (0..sg.len()).filter(|&i| sg.is_boundary(i)) {
            for l in 0..self.grid.time_levels() {
                m = m.max(self.values[[l, i]].abs());
            }
        }
        m
    }

    pub fn to_f64(&self) -> SpaceTimeField<f64> {
        let g = &self.grid;
        let grid = SpaceTimeGrid::new(g.domain(), g.nx(), g.dt().to_f64_lossy(), g.t0().to_f64_lossy())
            .expect("an f32 grid converts to a valid f64 grid");
        SpaceTimeField {
            grid,
            values: self.values.mapv(|v| v.to_f64_lossy()),
            provenance: self.provenance.clone(),
        }
    }

    /// Writes `<stem>.bin` (little-endian f64, level-major) and
    /// `<stem>.json` (grid and provenance) into `dir`.
    pub fn write_raw(&self, dir: &Path, stem: &str) -> Result<(), FieldError> {
        let header = RawHeader {
            dim: self.grid.dim(),
            nx: self.grid.nx(),
            dt: self.grid.dt().to_f64_lossy(),
            t0: self.grid.t0().to_f64_lossy(),
            time_levels: self.grid.time_levels(),
            nodes: self.grid.spatial().len(),
            scalar: "f64".into(),
            byte_order: "little".into(),
            provenance: self.provenance.clone(),
        };
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in self.values.iter() {
            bytes.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
        let json = serde_json::to_vec_pretty(&header).map_err(|e| FieldError::Header(e.to_string()))?;
        write_atomic(&dir.join(format!("{stem}.bin")), &bytes)?;
        write_atomic(&dir.join(format!("{stem}.json")), &json)?;
        Ok(())
    }
}

impl SpaceTimeField<f64> {
    pub fn read_raw(dir: &Path, stem: &str) -> Result<Self, FieldError> {
        let hpath = dir.join(format!("{stem}.json"));
        let bpath = dir.join(format!("{stem}.bin"));
        let text = fs::read(&hpath).map_err(|source| FieldError::Io {
            path: hpath.clone(),
            source,
        })?;
        let header: RawHeader = serde_json::from_slice(&text).map_err(|e| FieldError::Header(e.to_string()))?;
        if header.scalar != "f64" || header.byte_order != "little" {
            return Err(FieldError::Header(format!(
                "unsupported encoding {}/{}",
                header.scalar, header.byte_order
            )));
        }
        let bytes = fs::read(&bpath).map_err(|source| FieldError::Io {
            path: bpath.clone(),
            source,
        })?;
        let count = header.time_levels * header.nodes;
        if bytes.len() != count * 8 {
            return Err(FieldError::Header(format!(
                "expected {} bytes of data, found {}",
                count * 8,
                bytes.len()
            )));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let grid = SpaceTimeGrid::new(Domain::new(header.dim)?, header.nx, header.dt, header.t0)?;
        let values = Array2::from_shape_vec((header.time_levels, header.nodes), data)
            .map_err(|e| FieldError::Header(e.to_string()))?;
        Self::new(grid, values, header.provenance)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHeader {
    dim: usize,
    nx: usize,
    dt: f64,
    t0: f64,
    time_levels: usize,
    nodes: usize,
    scalar: String,
    byte_order: String,
    provenance: Provenance,
}

/// Writes through a sibling temporary file and renames it into place, so
/// readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FieldError> {
    let io = |source| FieldError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> SpaceTimeGrid<f64> {
        SpaceTimeGrid::new(Domain::new(1).unwrap(), 9, 0.125, 2.0).unwrap()
    }

    #[test]
    fn shape_is_checked() {
        let err = SpaceTimeField::new(grid(), Array2::zeros((3, 9)), Provenance::default()).unwrap_err();
        assert!(matches!(err, FieldError::Shape { expected: (9, 9), .. }));
    }

    #[test]
    fn raw_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let f = SpaceTimeField::from_fn(grid(), |x, t| (x[0] * 7.1 + t).sin() / 3.0).with_provenance(Provenance {
            operator: "laplacian".into(),
            forcing: "constant_one".into(),
            seed: 99,
            sample_index: 4,
        });
        f.write_raw(dir.path(), "s4").unwrap();
        let back = SpaceTimeField::read_raw(dir.path(), "s4").unwrap();
        assert_eq!(back.grid(), f.grid());
        assert_eq!(back.provenance(), f.provenance());
        for (a, b) in f.values().iter().zip(back.values().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_data_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        SpaceTimeField::zeros(grid(), Provenance::default())
            .write_raw(dir.path(), "z")
            .unwrap();
        let p = dir.path().join("z.bin");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            SpaceTimeField::read_raw(dir.path(), "z"),
            Err(FieldError::Header(_))
        ));
    }
}
