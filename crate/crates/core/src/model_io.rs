//! Model file format: a JSON document holding grid dimensions, spacing,
//! the material table, source/observer points, boundary conditions, and a
//! base64 section with the per-element material ids (little-endian u16 per
//! element, row-major x-fastest). An optional base64 bitmask marks inactive
//! elements; when absent, every element is active.

use crate::error::{CoreError, Result};
use crate::voxel::{Material, MaterialId, PointSet, VoxelGrid};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub ds_m: f64,
    pub materials: Vec<NamedMaterial>,
    /// Little-endian u16 material id per element, base64-encoded.
    pub material_ids_base64: String,
    /// Optional little-endian bitmask (bit i = element i active).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_base64: Option<String>,
    /// Constrained (node, axis) pairs.
    pub dirichlet: Vec<(u64, u8)>,
    pub points: PointSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedMaterial {
    pub name: String,
    #[serde(flatten)]
    pub material: Material,
}

/// Serializes a grid and its point set into the model document.
pub fn to_model_file(grid: &VoxelGrid, names: &[&str], points: &PointSet) -> ModelFile {
    let mut id_bytes = Vec::with_capacity(2 * grid.elem_count());
    for m in &grid.material_of {
        id_bytes.extend_from_slice(&m.0.to_le_bytes());
    }
    let active_base64 = if grid.active.iter().all(|&a| a) {
        None
    } else {
        let mut bits = vec![0u8; grid.elem_count().div_ceil(8)];
        for (i, &a) in grid.active.iter().enumerate() {
            if a {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        Some(B64.encode(bits))
    };
    let mut dirichlet = Vec::new();
    for (dof, &fixed) in grid.dirichlet.iter().enumerate() {
        if fixed {
            dirichlet.push(((dof / 3) as u64, (dof % 3) as u8));
        }
    }
    ModelFile {
        schema_version: MODEL_SCHEMA_VERSION,
        nx: grid.nx,
        ny: grid.ny,
        nz: grid.nz,
        ds_m: grid.ds,
        materials: grid
            .materials
            .iter()
            .enumerate()
            .map(|(i, m)| NamedMaterial {
                name: names.get(i).copied().unwrap_or("material").to_string(),
                material: m.clone(),
            })
            .collect(),
        material_ids_base64: B64.encode(id_bytes),
        active_base64,
        dirichlet,
        points: points.clone(),
    }
}

/// Rebuilds the grid (and point set) from a model document.
pub fn from_model_file(doc: &ModelFile) -> Result<(VoxelGrid, PointSet)> {
    if doc.schema_version != MODEL_SCHEMA_VERSION {
        return Err(CoreError::ModelFormat(format!(
            "unsupported schema version {}",
            doc.schema_version
        )));
    }
    let elem_count = doc.nx * doc.ny * doc.nz;
    let id_bytes = B64
        .decode(&doc.material_ids_base64)
        .map_err(|e| CoreError::ModelFormat(format!("material id section: {e}")))?;
    if id_bytes.len() != 2 * elem_count {
        return Err(CoreError::ModelFormat(format!(
            "material id section holds {} bytes, expected {}",
            id_bytes.len(),
            2 * elem_count
        )));
    }
    let material_of: Vec<MaterialId> = id_bytes
        .chunks_exact(2)
        .map(|c| MaterialId(u16::from_le_bytes([c[0], c[1]])))
        .collect();
    let active = match &doc.active_base64 {
        None => vec![true; elem_count],
        Some(b64) => {
            let bits = B64
                .decode(b64)
                .map_err(|e| CoreError::ModelFormat(format!("active section: {e}")))?;
            if bits.len() != elem_count.div_ceil(8) {
                return Err(CoreError::ModelFormat("active mask length mismatch".into()));
            }
            (0..elem_count)
                .map(|i| bits[i / 8] & (1 << (i % 8)) != 0)
                .collect()
        }
    };
    let node_count = (doc.nx + 1) * (doc.ny + 1) * (doc.nz + 1);
    let mut dirichlet = vec![false; 3 * node_count];
    for &(node, axis) in &doc.dirichlet {
        let node = node as usize;
        if node >= node_count || axis > 2 {
            return Err(CoreError::ModelFormat(format!(
                "dirichlet entry ({node}, {axis}) out of range"
            )));
        }
        dirichlet[3 * node + axis as usize] = true;
    }
    let grid = VoxelGrid {
        nx: doc.nx,
        ny: doc.ny,
        nz: doc.nz,
        ds: doc.ds_m,
        materials: doc.materials.iter().map(|m| m.material.clone()).collect(),
        material_of,
        active,
        dirichlet,
    };
    grid.validate()?;
    Ok((grid, doc.points.clone()))
}

pub fn save_model(path: &Path, doc: &ModelFile) -> Result<()> {
    let json = serde_json::to_string_pretty(doc)
        .map_err(|e| CoreError::ModelFormat(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(VoxelGrid, PointSet)> {
    let text = std::fs::read_to_string(path)?;
    let doc: ModelFile =
        serde_json::from_str(&text).map_err(|e| CoreError::ModelFormat(e.to_string()))?;
    from_model_file(&doc)
}
