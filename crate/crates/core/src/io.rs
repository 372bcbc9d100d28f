//! Artifact persistence and plain-text data export.
//!
//! A trained model is stored as a directory holding a human-readable
//! `manifest.json` (configuration, tolerances, spectra, regression models,
//! interpolation systems) and a single `fields.bin` with every nodal array
//! appended back to back as little-endian `f64`, in exactly the order the
//! manifest's blob index lists. The fixed ordering makes artifacts
//! byte-reproducible for identical runs.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::gp::GpModel;
use crate::grid::{GridDensity, GridField, TensorGrid};
use crate::registration::TransportModes;
use crate::rom::{
    Forms, OfflineArtifacts, ProblemSpec, RomOptions, SpectraReport, ToleranceSet,
    ARTIFACT_VERSION,
};
use crate::Result;

/// File names inside an artifact directory.
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FIELDS_FILE: &str = "fields.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridMeta {
    dim: usize,
    nodes: Vec<usize>,
    domain: Vec<[f64; 2]>,
}

impl GridMeta {
    fn of(grid: &TensorGrid) -> Self {
        let dim = grid.dim();
        GridMeta {
            dim,
            nodes: (0..dim).map(|a| grid.axis_nodes(a)).collect(),
            domain: (0..dim).map(|a| grid.domain(a)).collect(),
        }
    }

    fn build(&self) -> Result<TensorGrid> {
        TensorGrid::new(self.dim, &self.nodes, &self.domain)
    }
}

/// One named array inside `fields.bin`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    /// Offset in f64 units from the start of the file.
    offset: usize,
    /// Length in f64 units.
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    problem: ProblemSpec,
    options: RomOptions,
    tolerances: ToleranceSet,
    spectra: SpectraReport,
    timings: Vec<(String, f64)>,
    training_parameters: Vec<Vec<f64>>,
    coefficient_models: Vec<GpModel>,
    grid: GridMeta,
    ot_grid: GridMeta,
    mode_eigenvalues: Vec<f64>,
    /// `[mode][snapshot]` coefficients of the retained modes.
    mode_coefficients: Vec<Vec<f64>>,
    mode_count: usize,
    basis_size: usize,
    plain_size: usize,
    forms: Forms,
    blobs: Vec<BlobEntry>,
}

struct BlobWriter {
    bytes: Vec<u8>,
    index: Vec<BlobEntry>,
}

impl BlobWriter {
    fn new() -> Self {
        BlobWriter {
            bytes: Vec::new(),
            index: Vec::new(),
        }
    }

    fn push(&mut self, name: &str, values: &[f64]) {
        let offset = self.bytes.len() / 8;
        for v in values {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.index.push(BlobEntry {
            name: name.to_string(),
            offset,
            len: values.len(),
        });
    }
}

struct BlobReader {
    values: Vec<f64>,
    index: Vec<BlobEntry>,
    cursor: usize,
}

impl BlobReader {
    fn new(bytes: &[u8], index: Vec<BlobEntry>) -> Result<Self> {
        if bytes.len() % 8 != 0 {
            return Err(Error::Artifact(format!(
                "field file length {} is not a multiple of 8",
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(BlobReader {
            values,
            index,
            cursor: 0,
        })
    }

    /// Read the next blob in order, checking its recorded name.
    fn take(&mut self, name: &str) -> Result<Vec<f64>> {
        let entry = self.index.get(self.cursor).ok_or_else(|| {
            Error::Artifact(format!("missing field blob `{name}`"))
        })?;
        if entry.name != name {
            return Err(Error::Artifact(format!(
                "field blob order mismatch: expected `{name}`, found `{}`",
                entry.name
            )));
        }
        let end = entry.offset + entry.len;
        if end > self.values.len() {
            return Err(Error::Artifact(format!(
                "field blob `{name}` runs past the end of the field file"
            )));
        }
        self.cursor += 1;
        Ok(self.values[entry.offset..end].to_vec())
    }
}

/// Persist a trained model into `dir` (created if absent).
pub fn save_artifacts(dir: &Path, artifacts: &OfflineArtifacts) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blobs = BlobWriter::new();
    blobs.push("reference_density", artifacts.reference_density.field().values());
    blobs.push(
        "reference_density_pde",
        artifacts.reference_density_pde.field().values(),
    );
    for (j, m) in artifacts.modes.modes().iter().enumerate() {
        blobs.push(&format!("mode_{j}"), m.values());
    }
    for (i, b) in artifacts.reference_basis.iter().enumerate() {
        blobs.push(&format!("basis_{i}"), b.values());
    }
    for (i, b) in artifacts.plain_basis.iter().enumerate() {
        blobs.push(&format!("plain_{i}"), b.values());
    }
    let manifest = Manifest {
        version: artifacts.version,
        problem: artifacts.problem.clone(),
        options: artifacts.options.clone(),
        tolerances: artifacts.tolerances.clone(),
        spectra: artifacts.spectra.clone(),
        timings: artifacts.timings.clone(),
        training_parameters: artifacts.training_parameters.clone(),
        coefficient_models: artifacts.coefficient_models.clone(),
        grid: GridMeta::of(&artifacts.grid),
        ot_grid: GridMeta::of(&artifacts.ot_grid),
        mode_eigenvalues: artifacts.modes.eigenvalues().to_vec(),
        mode_coefficients: artifacts.modes.coefficients().to_vec(),
        mode_count: artifacts.mode_count(),
        basis_size: artifacts.basis_size(),
        plain_size: artifacts.plain_basis.len(),
        forms: artifacts.forms.clone(),
        blobs: blobs.index,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_FILE), json)?;
    fs::write(dir.join(FIELDS_FILE), &blobs.bytes)?;
    Ok(())
}

/// Load a trained model from `dir`, rejecting version mismatches.
pub fn load_artifacts(dir: &Path) -> Result<OfflineArtifacts> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = fs::read_to_string(&manifest_path).map_err(|e| {
        Error::Artifact(format!(
            "cannot read {}: {e}",
            manifest_path.display()
        ))
    })?;
    let manifest: Manifest = serde_json::from_str(&json)?;
    if manifest.version != ARTIFACT_VERSION {
        return Err(Error::Artifact(format!(
            "artifact version {} does not match supported version {}",
            manifest.version, ARTIFACT_VERSION
        )));
    }
    let bytes = fs::read(dir.join(FIELDS_FILE))?;
    let mut blobs = BlobReader::new(&bytes, manifest.blobs)?;
    let grid = manifest.grid.build()?;
    let ot_grid = manifest.ot_grid.build()?;
    let density = |vals: Vec<f64>, g: TensorGrid| -> Result<GridDensity> {
        GridDensity::new(GridField::new(g, vals)?)
    };
    let reference_density = density(blobs.take("reference_density")?, ot_grid)?;
    let reference_density_pde = density(blobs.take("reference_density_pde")?, grid)?;
    let mut mode_fields = Vec::with_capacity(manifest.mode_count);
    for j in 0..manifest.mode_count {
        mode_fields.push(GridField::new(grid, blobs.take(&format!("mode_{j}"))?)?);
    }
    let modes = TransportModes::from_parts(
        grid,
        mode_fields,
        manifest.mode_eigenvalues,
        manifest.mode_coefficients,
    )?;
    let mut reference_basis = Vec::with_capacity(manifest.basis_size);
    for i in 0..manifest.basis_size {
        reference_basis.push(GridField::new(grid, blobs.take(&format!("basis_{i}"))?)?);
    }
    let mut plain_basis = Vec::with_capacity(manifest.plain_size);
    for i in 0..manifest.plain_size {
        plain_basis.push(GridField::new(grid, blobs.take(&format!("plain_{i}"))?)?);
    }
    Ok(OfflineArtifacts {
        version: manifest.version,
        problem: manifest.problem,
        options: manifest.options,
        grid,
        ot_grid,
        reference_density,
        reference_density_pde,
        modes,
        coefficient_models: manifest.coefficient_models,
        reference_basis,
        plain_basis,
        training_parameters: manifest.training_parameters,
        forms: manifest.forms,
        spectra: manifest.spectra,
        tolerances: manifest.tolerances,
        timings: manifest.timings,
    })
}

/// Serialize any value as pretty JSON at `path`.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json)?;
    Ok(())
}

fn write_comment_block(out: &mut impl std::io::Write, comment: &str) -> std::io::Result<()> {
    for line in comment.lines() {
        writeln!(out, "# {line}")?;
    }
    Ok(())
}

/// Write a CSV file: `#`-prefixed comment lines carrying the resolved
/// configuration, a header row, then one row per record with every number
/// printed as full-precision scientific notation so identical runs produce
/// byte-identical files.
pub fn write_csv(path: &Path, comment: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = Vec::new();
    write_comment_block(&mut out, comment)?;
    writeln!(out, "{}", columns.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write a two-column whitespace-separated .dat series (plot-tool friendly).
pub fn write_dat(path: &Path, comment: &str, pairs: &[(f64, f64)]) -> Result<()> {
    let mut out = Vec::new();
    write_comment_block(&mut out, comment)?;
    for (x, y) in pairs {
        writeln!(out, "{x:.16e} {y:.16e}")?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Dump a nodal field as `x,y,value` (or `x,value` in 1D) CSV rows.
pub fn write_field_csv(path: &Path, comment: &str, field: &GridField) -> Result<()> {
    let grid = *field.grid();
    let dim = grid.dim();
    let columns: &[&str] = if dim == 1 {
        &["x", "value"]
    } else {
        &["x", "y", "value"]
    };
    let rows: Vec<Vec<f64>> = (0..grid.node_count())
        .map(|i| {
            let p = grid.position(i);
            let mut row: Vec<f64> = p[..dim].to_vec();
            row.push(field.values()[i]);
            row
        })
        .collect();
    write_csv(path, comment, columns, &rows)
}
