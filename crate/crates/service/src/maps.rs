//! Ground-truth and source map descriptions shared by the CLI and the HTTP API.

use std::path::PathBuf;
use std::sync::Arc;

use redzone_core::data::{load_grid_csv, synth_map, DataError, GridMap, SynthSpec};
use redzone_core::transfer::{SourceDataset, TransferError};
use redzone_core::{GridDomain, LabeledDataset, Position};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error("{0}")]
    Invalid(String),
}

/// Regular lattice with equal spacing on both axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cols: usize,
    pub rows: usize,
    pub spacing_mm: f64,
    #[serde(default = "origin_zero")]
    pub origin_mm: Position,
}

fn origin_zero() -> Position {
    Position::new(0.0, 0.0)
}

impl GridSpec {
    pub fn regular(cols: usize, rows: usize, spacing_mm: f64) -> Self {
        Self {
            cols,
            rows,
            spacing_mm,
            origin_mm: origin_zero(),
        }
    }

    pub fn domain(&self) -> Result<GridDomain, MapError> {
        GridDomain::new(
            self.origin_mm,
            self.spacing_mm,
            self.spacing_mm,
            self.cols,
            self.rows,
        )
        .map_err(|e| MapError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MapSpec {
    Synthetic {
        grid: GridSpec,
        synth: SynthSpec,
        #[serde(default)]
        seed: u64,
    },
    /// CSV with header `x_mm,y_mm,value`.
    File { path: PathBuf },
    /// Row-major values over `grid`.
    Inline { grid: GridSpec, values: Vec<f64> },
}

impl MapSpec {
    /// The 40x40 edge-band surface at 2 mm used by the benchmark.
    pub fn edge_band_benchmark() -> Self {
        MapSpec::Synthetic {
            grid: GridSpec::regular(40, 40, 2.0),
            synth: SynthSpec::EdgeBand {
                high: 5.0,
                low: 1.0,
                band_mm: 10.0,
            },
            seed: 0,
        }
    }

    pub fn load(&self) -> Result<GridMap, MapError> {
        match self {
            MapSpec::Synthetic { grid, synth, seed } => Ok(synth_map(synth, &grid.domain()?, *seed)?),
            MapSpec::File { path } => Ok(load_grid_csv(path)?),
            MapSpec::Inline { grid, values } => Ok(GridMap::new(grid.domain()?, values.clone())?),
        }
    }
}

/// Previously measured surface used by the transfer strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub map: MapSpec,
    /// Keep every `stride`-th point, row-major.
    #[serde(default = "one")]
    pub stride: usize,
}

fn one() -> usize {
    1
}

impl SourceSpec {
    pub fn build(&self) -> Result<Arc<SourceDataset>, MapError> {
        let map = self.map.load()?;
        Ok(Arc::new(source_from_map(&map, self.stride)?))
    }
}

pub fn source_from_map(map: &GridMap, stride: usize) -> Result<SourceDataset, MapError> {
    let data = LabeledDataset::new(map.domain().points(), map.values().to_vec())
        .map_err(|e| MapError::Invalid(e.to_string()))?;
    Ok(SourceDataset::fit(data, stride)?)
}
