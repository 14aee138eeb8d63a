//! Structured voxel grids: node/element numbering, material assignment,
//! boundary conditions, and model geometry generators.
//!
//! All quantities are SI (meters, seconds, kilograms, pascals). Nodes and
//! elements are numbered row-major with x fastest, then y, then z, which
//! keeps elements that are contiguous in x contiguous in memory.

use crate::error::{CoreError, Result};

/// Index of a material in [`VoxelGrid::materials`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MaterialId(pub u16);

/// Element index, row-major x-fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ElemId(pub u32);

/// Node index, row-major x-fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub u32);

impl MaterialId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}
impl ElemId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}
impl NodeId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Linear isotropic elastic material with Rayleigh damping coefficients.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Material {
    /// Density in kg/m^3.
    pub rho: f64,
    /// Bulk modulus in Pa.
    pub kappa: f64,
    /// Shear modulus in Pa.
    pub shear_g: f64,
    /// Mass-proportional damping coefficient in 1/s.
    pub rayleigh_alpha: f64,
    /// Stiffness-proportional damping coefficient in s.
    pub rayleigh_beta: f64,
}

impl Material {
    pub fn new(rho: f64, kappa: f64, shear_g: f64) -> Result<Self> {
        let m = Material {
            rho,
            kappa,
            shear_g,
            rayleigh_alpha: 0.0,
            rayleigh_beta: 0.0,
        };
        m.validate()?;
        Ok(m)
    }

    /// Builds a material from P- and S-wave speeds:
    /// `G = rho*vs^2`, `kappa = rho*(vp^2 - 4/3*vs^2)`.
    pub fn from_wave_speeds(rho: f64, vp: f64, vs: f64) -> Result<Self> {
        if !(rho > 0.0 && vp > 0.0 && vs > 0.0 && vp * vp > 4.0 / 3.0 * vs * vs) {
            return Err(CoreError::InvalidInput(format!(
                "invalid wave speeds rho={rho} vp={vp} vs={vs}"
            )));
        }
        Material::new(rho, rho * (vp * vp - 4.0 / 3.0 * vs * vs), rho * vs * vs)
    }

    /// Placeholder concrete (rho=2400 kg/m^3, Vp=4000 m/s, Vs=2400 m/s).
    /// Not calibrated against any measurement; accuracy comparisons in the
    /// test suite are self-referential and do not depend on these numbers.
    pub fn default_concrete() -> Self {
        Material::from_wave_speeds(2400.0, 4000.0, 2400.0).unwrap()
    }

    /// Placeholder steel (rho=7850 kg/m^3, Vp=5900 m/s, Vs=3200 m/s).
    pub fn default_steel() -> Self {
        Material::from_wave_speeds(7850.0, 5900.0, 3200.0).unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(CoreError::InvalidInput(format!("rho must be > 0, got {}", self.rho)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(CoreError::InvalidInput(format!(
                "kappa must be > 0, got {}",
                self.kappa
            )));
        }
        if !(self.shear_g > 0.0 && self.shear_g.is_finite()) {
            return Err(CoreError::InvalidInput(format!(
                "shear modulus must be > 0, got {}",
                self.shear_g
            )));
        }
        if self.rayleigh_alpha < 0.0 || self.rayleigh_beta < 0.0 {
            return Err(CoreError::InvalidInput(
                "rayleigh coefficients must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Axis selector for boundary conditions, sources, and recorders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn from_index(i: usize) -> Option<Axis> {
        match i {
            0 => Some(Axis::X),
            1 => Some(Axis::Y),
            2 => Some(Axis::Z),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

/// Structured hexahedral mesh of cubic elements with edge length `ds`.
///
/// Immutable after construction; safe to share across threads read-only.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Element edge length in meters.
    pub ds: f64,
    /// Material table referenced by `material_of`.
    pub materials: Vec<Material>,
    /// Per-element material assignment, row-major x-fastest.
    pub material_of: Vec<MaterialId>,
    /// Per-element active flag; inactive elements contribute nothing.
    pub active: Vec<bool>,
    /// Per-dof Dirichlet mask (3 entries per node, node-major).
    pub dirichlet: Vec<bool>,
}

impl VoxelGrid {
    #[inline]
    pub fn elem_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1) * (self.nz + 1)
    }

    #[inline]
    pub fn dof_count(&self) -> usize {
        3 * self.node_count()
    }

    #[inline]
    pub fn node_id(&self, i: usize, j: usize, k: usize) -> NodeId {
        debug_assert!(i <= self.nx && j <= self.ny && k <= self.nz);
        NodeId((i + (self.nx + 1) * (j + (self.ny + 1) * k)) as u32)
    }

    #[inline]
    pub fn elem_id(&self, i: usize, j: usize, k: usize) -> ElemId {
        debug_assert!(i < self.nx && j < self.ny && k < self.nz);
        ElemId((i + self.nx * (j + self.ny * k)) as u32)
    }

    /// (i, j, k) coordinates of an element.
    #[inline]
    pub fn elem_ijk(&self, e: ElemId) -> (usize, usize, usize) {
        let idx = e.idx();
        let i = idx % self.nx;
        let j = (idx / self.nx) % self.ny;
        let k = idx / (self.nx * self.ny);
        (i, j, k)
    }

    /// Physical position of a node in meters.
    pub fn node_pos(&self, n: NodeId) -> [f64; 3] {
        let idx = n.idx();
        let i = idx % (self.nx + 1);
        let j = (idx / (self.nx + 1)) % (self.ny + 1);
        let k = idx / ((self.nx + 1) * (self.ny + 1));
        [i as f64 * self.ds, j as f64 * self.ds, k as f64 * self.ds]
    }

    /// Center of an element in meters.
    pub fn elem_center(&self, e: ElemId) -> [f64; 3] {
        let (i, j, k) = self.elem_ijk(e);
        [
            (i as f64 + 0.5) * self.ds,
            (j as f64 + 0.5) * self.ds,
            (k as f64 + 0.5) * self.ds,
        ]
    }

    /// The 8 corner nodes of an element in local octant order: local node
    /// `n = dx + 2*dy + 4*dz` sits at offset `(dx, dy, dz)` from the
    /// low-corner node, so numbering runs x-fastest like the global order.
    pub fn element_nodes(&self, e: ElemId) -> Result<[NodeId; 8]> {
        if e.idx() >= self.elem_count() {
            return Err(CoreError::InvalidInput(format!(
                "element {} out of range (count {})",
                e.idx(),
                self.elem_count()
            )));
        }
        let (i, j, k) = self.elem_ijk(e);
        let mut out = [NodeId(0); 8];
        for local in 0..8 {
            let dx = local & 1;
            let dy = (local >> 1) & 1;
            let dz = (local >> 2) & 1;
            out[local] = self.node_id(i + dx, j + dy, k + dz);
        }
        Ok(out)
    }

    /// Local octant sign triple of a local node: +1 toward increasing axis.
    #[inline]
    pub fn local_signs(local: usize) -> [i32; 3] {
        [
            if local & 1 == 1 { 1 } else { -1 },
            if (local >> 1) & 1 == 1 { 1 } else { -1 },
            if (local >> 2) & 1 == 1 { 1 } else { -1 },
        ]
    }

    pub fn material(&self, e: ElemId) -> &Material {
        &self.materials[self.material_of[e.idx()].idx()]
    }

    /// Marks one node component as constrained.
    pub fn set_dirichlet(&mut self, n: NodeId, axis: Axis) {
        self.dirichlet[3 * n.idx() + axis as usize] = true;
    }

    pub fn is_constrained(&self, n: NodeId, axis: Axis) -> bool {
        self.dirichlet[3 * n.idx() + axis as usize]
    }

    pub fn validate(&self) -> Result<()> {
        if self.ds <= 0.0 || !self.ds.is_finite() {
            return Err(CoreError::InvalidInput(format!("ds must be > 0, got {}", self.ds)));
        }
        if self.material_of.len() != self.elem_count() || self.active.len() != self.elem_count() {
            return Err(CoreError::InvalidInput("element array length mismatch".into()));
        }
        if self.dirichlet.len() != self.dof_count() {
            return Err(CoreError::InvalidInput("dirichlet mask length mismatch".into()));
        }
        for (idx, (mid, act)) in self.material_of.iter().zip(&self.active).enumerate() {
            if *act && mid.idx() >= self.materials.len() {
                return Err(CoreError::InvalidInput(format!(
                    "element {idx} references undefined material {}",
                    mid.idx()
                )));
            }
        }
        for m in &self.materials {
            m.validate()?;
        }
        Ok(())
    }
}

/// Builds a fully active grid with a positional material assignment.
/// `assign` receives element centers in meters and must return an id into
/// `materials`.
pub fn build_grid(
    nx: usize,
    ny: usize,
    nz: usize,
    ds: f64,
    materials: Vec<Material>,
    assign: impl Fn([f64; 3]) -> MaterialId,
) -> Result<VoxelGrid> {
    if nx < 1 || ny < 1 || nz < 1 {
        return Err(CoreError::InvalidInput(format!(
            "grid dimensions must be >= 1, got {nx}x{ny}x{nz}"
        )));
    }
    if !(ds > 0.0 && ds.is_finite()) {
        return Err(CoreError::InvalidInput(format!("ds must be > 0, got {ds}")));
    }
    if materials.is_empty() {
        return Err(CoreError::InvalidInput("material table is empty".into()));
    }
    let elem_count = nx * ny * nz;
    let mut material_of = Vec::with_capacity(elem_count);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let center = [
                    (i as f64 + 0.5) * ds,
                    (j as f64 + 0.5) * ds,
                    (k as f64 + 0.5) * ds,
                ];
                material_of.push(assign(center));
            }
        }
    }
    let grid = VoxelGrid {
        nx,
        ny,
        nz,
        ds,
        materials,
        material_of,
        active: vec![true; elem_count],
        dirichlet: vec![false; 3 * (nx + 1) * (ny + 1) * (nz + 1)],
    };
    grid.validate()?;
    Ok(grid)
}

/// Id of the concrete entry in the rebar model's material table.
pub const REBAR_CONCRETE: MaterialId = MaterialId(0);
/// Id of the steel entry in the rebar model's material table.
pub const REBAR_STEEL: MaterialId = MaterialId(1);

/// Builds the rebar-in-concrete model: a box of `box_m = [Lx, Ly, Lz]`
/// meters with a cylindrical rebar of radius `radius_m` whose axis runs
/// along y through `(x, z) = center_xz_m`. Elements whose center lies
/// within the cylinder get the steel material. The four bottom corner
/// nodes (z = 0) are fixed in all three directions.
pub fn generate_rebar_model(
    box_m: [f64; 3],
    radius_m: f64,
    center_xz_m: [f64; 2],
    ds: f64,
    concrete: Material,
    steel: Material,
) -> Result<VoxelGrid> {
    if !(radius_m > 0.0) {
        return Err(CoreError::InvalidInput(format!(
            "rebar radius must be > 0, got {radius_m}"
        )));
    }
    let counts = box_m
        .iter()
        .map(|&len| {
            let n = len / ds;
            let rounded = n.round();
            if (n - rounded).abs() > 1e-9 * n.max(1.0) || rounded < 1.0 {
                Err(CoreError::InvalidInput(format!(
                    "ds = {ds} does not divide box length {len}"
                )))
            } else {
                Ok(rounded as usize)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let (nx, ny, nz) = (counts[0], counts[1], counts[2]);
    let r2 = radius_m * radius_m;
    let mut grid = build_grid(nx, ny, nz, ds, vec![concrete, steel], |c| {
        let dx = c[0] - center_xz_m[0];
        let dz = c[2] - center_xz_m[1];
        if dx * dx + dz * dz <= r2 {
            REBAR_STEEL
        } else {
            REBAR_CONCRETE
        }
    })?;
    for &i in &[0, nx] {
        for &j in &[0, ny] {
            let n = grid.node_id(i, j, 0);
            for axis in Axis::ALL {
                grid.set_dirichlet(n, axis);
            }
        }
    }
    Ok(grid)
}

/// A labeled position in meters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LabeledPoint {
    pub label: String,
    pub pos_m: [f64; 3],
}

/// Source and observer positions for a simulation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PointSet {
    pub source: LabeledPoint,
    pub source_axis: Axis,
    pub observers: Vec<LabeledPoint>,
}

/// A point set resolved onto grid nodes.
#[derive(Debug, Clone)]
pub struct SnappedPoints {
    pub source: NodeId,
    pub source_axis: Axis,
    /// (label, node, snap distance in meters) per observer.
    pub observers: Vec<(String, NodeId, f64)>,
    pub source_snap_distance: f64,
}

fn nearest_node(grid: &VoxelGrid, pos: [f64; 3]) -> (NodeId, f64) {
    let limits = [grid.nx, grid.ny, grid.nz];
    let mut ijk = [0usize; 3];
    for a in 0..3 {
        // Ties round away from zero, so a point exactly between two node
        // planes snaps toward the higher index.
        let raw = (pos[a] / grid.ds).round();
        ijk[a] = (raw.max(0.0) as usize).min(limits[a]);
    }
    let node = grid.node_id(ijk[0], ijk[1], ijk[2]);
    let np = grid.node_pos(node);
    let d2: f64 = (0..3).map(|a| (pos[a] - np[a]) * (pos[a] - np[a])).sum();
    (node, d2.sqrt())
}

/// Snaps each point of the set to its nearest grid node. A point with snap
/// distance >= ds/2 is rejected with the offending label.
pub fn snap_points(grid: &VoxelGrid, points: &PointSet) -> Result<SnappedPoints> {
    let limit = grid.ds / 2.0;
    let snap_one = |p: &LabeledPoint| -> Result<(NodeId, f64)> {
        let (node, dist) = nearest_node(grid, p.pos_m);
        if dist >= limit {
            return Err(CoreError::OffGridPoint {
                label: p.label.clone(),
                distance_m: dist,
                limit_m: limit,
            });
        }
        Ok((node, dist))
    };
    let (source, source_snap_distance) = snap_one(&points.source)?;
    let observers = points
        .observers
        .iter()
        .map(|p| snap_one(p).map(|(n, d)| (p.label.clone(), n, d)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SnappedPoints {
        source,
        source_axis: points.source_axis,
        observers,
        source_snap_distance,
    })
}

/// Unconditionally moves each point of the set to its nearest grid node and
/// returns the adjusted set together with the displacement of every point.
/// Used by model generators whose nominal coordinates need not be exact node
/// positions on coarse grids; run-time inputs go through [`snap_points`].
pub fn snap_points_lossy(grid: &VoxelGrid, points: &PointSet) -> (PointSet, Vec<(String, f64)>) {
    let mut moved = Vec::new();
    let mut adjust = |p: &LabeledPoint| -> LabeledPoint {
        let (node, dist) = nearest_node(grid, p.pos_m);
        moved.push((p.label.clone(), dist));
        LabeledPoint {
            label: p.label.clone(),
            pos_m: grid.node_pos(node),
        }
    };
    let source = adjust(&points.source);
    let observers = points.observers.iter().map(&mut adjust).collect();
    (
        PointSet {
            source,
            source_axis: points.source_axis,
            observers,
        },
        moved,
    )
}
