//! Flat binary grid files and the JSON manifest binding them to kernel
//! arguments.
//!
//! File layout, all little-endian:
//!   u64 rank | u64 extent per dim | u64 element code (0 = f32, 1 = f64)
//!   | row-major elements (4 or 8 bytes each).

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geom::IBox;
use crate::ir::ScalarType;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub extents: Vec<i64>,
    pub element: ScalarType,
    /// Values widened to f64. For f32 grids every value is exactly
    /// representable in f32.
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(extents: Vec<i64>, element: ScalarType) -> Self {
        let n: i64 = extents.iter().product();
        Grid {
            extents,
            element,
            data: vec![0.0; n.max(0) as usize],
        }
    }

    pub fn rank(&self) -> usize {
        self.extents.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ibox(&self) -> IBox {
        IBox::from_extents(&self.extents)
    }

    /// Round a value through the element precision.
    pub fn quantize(&self, v: f64) -> f64 {
        match self.element {
            ScalarType::F32 => v as f32 as f64,
            _ => v,
        }
    }

    /// Bit-exact comparison with another grid.
    pub fn bits_equal(&self, other: &Grid) -> bool {
        self.extents == other.extents
            && self.element == other.element
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug)]
pub enum GridIoError {
    Io(std::io::Error),
    Format(String),
}

impl fmt::Display for GridIoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridIoError::Io(e) => write!(f, "grid i/o: {e}"),
            GridIoError::Format(m) => write!(f, "grid format: {m}"),
        }
    }
}

impl std::error::Error for GridIoError {}

impl From<std::io::Error> for GridIoError {
    fn from(e: std::io::Error) -> Self {
        GridIoError::Io(e)
    }
}

pub fn write_grid(path: &Path, g: &Grid) -> Result<(), GridIoError> {
    let mut f = fs::File::create(path)?;
    let mut buf = Vec::with_capacity(24 + g.data.len() * 8);
    buf.extend_from_slice(&(g.extents.len() as u64).to_le_bytes());
    for e in &g.extents {
        buf.extend_from_slice(&(*e as u64).to_le_bytes());
    }
    let code: u64 = match g.element {
        ScalarType::F32 => 0,
        ScalarType::F64 => 1,
        other => return Err(GridIoError::Format(format!("unsupported element {other}"))),
    };
    buf.extend_from_slice(&code.to_le_bytes());
    for v in &g.data {
        match g.element {
            ScalarType::F32 => buf.extend_from_slice(&(*v as f32).to_le_bytes()),
            _ => buf.extend_from_slice(&v.to_le_bytes()),
        }
    }
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<Grid, GridIoError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut off = 0usize;
    let mut take_u64 = |what: &str| -> Result<u64, GridIoError> {
        if off + 8 > bytes.len() {
            return Err(GridIoError::Format(format!("truncated header at {what}")));
        }
        let v = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        off += 8;
        Ok(v)
    };
    let rank = take_u64("rank")? as usize;
    if !(1..=3).contains(&rank) {
        return Err(GridIoError::Format(format!("rank {rank} out of range")));
    }
    let mut extents = Vec::with_capacity(rank);
    for _ in 0..rank {
        extents.push(take_u64("extent")? as i64);
    }
    let element = match take_u64("element code")? {
        0 => ScalarType::F32,
        1 => ScalarType::F64,
        c => return Err(GridIoError::Format(format!("unknown element code {c}"))),
    };
    let n: i64 = extents.iter().product();
    let n = n.max(0) as usize;
    let width = if element == ScalarType::F32 { 4 } else { 8 };
    if bytes.len() - off != n * width {
        return Err(GridIoError::Format(format!(
            "body holds {} bytes, expected {}",
            bytes.len() - off,
            n * width
        )));
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let s = off + i * width;
        let v = if element == ScalarType::F32 {
            f32::from_le_bytes(bytes[s..s + 4].try_into().unwrap()) as f64
        } else {
            f64::from_le_bytes(bytes[s..s + 8].try_into().unwrap())
        };
        data.push(v);
    }
    Ok(Grid {
        extents,
        element,
        data,
    })
}

/// JSON manifest naming each kernel argument's data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub grids: Vec<ManifestEntry>,
    #[serde(default)]
    pub scalars: Vec<ScalarEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Kernel argument index.
    pub arg: usize,
    pub name: String,
    /// Input path, relative to the manifest file. Absent for outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarEntry {
    pub arg: usize,
    pub name: String,
    pub value: f64,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest, GridIoError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| GridIoError::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), GridIoError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| GridIoError::Format(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_round_trip_preserves_bits() {
        let dir = std::env::temp_dir().join("shmls-grid-test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut g = Grid::zeros(vec![3, 4], ScalarType::F64);
        for (i, v) in g.data.iter_mut().enumerate() {
            *v = (i as f64).sin() * 1e100;
        }
        let path = dir.join("t.grid");
        write_grid(&path, &g).unwrap();
        let back = read_grid(&path).unwrap();
        assert!(g.bits_equal(&back));

        let mut g32 = Grid::zeros(vec![5], ScalarType::F32);
        for (i, v) in g32.data.iter_mut().enumerate() {
            *v = (i as f32 * 0.3) as f64;
        }
        let p32 = dir.join("t32.grid");
        write_grid(&p32, &g32).unwrap();
        assert!(g32.bits_equal(&read_grid(&p32).unwrap()));
    }
}
