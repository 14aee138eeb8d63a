//! Global element-by-element stiffness matrix-vector product.
//!
//! `f = K u` is evaluated without assembling `K`: elements are gathered,
//! multiplied by their per-material element matrix, and scattered back in a
//! fixed block-then-slot order, which makes every backend bitwise
//! deterministic. Elements are grouped into blocks of 32 contiguous along
//! x; block sweeps advance through y rows and then z layers so consecutive
//! elements share nodal cache lines.
//!
//! Backends: FP64 (trilinear or orthogonal-basis elements), FP32 element
//! arithmetic with FP64 scatter, the integer-expansion pipeline, and an
//! exact dyadic-arithmetic oracle for desk-scale grids.

use crate::element::{Int8Kernel, KernelSet, ELEM_DOFS};
use crate::error::{CoreError, Result};
use crate::exact::Dyadic;
use crate::expand::{self, BlockDigits, PreparedA, StagedWorkspace, BLOCK_ELEMS, VEC_LEN};
use crate::voxel::{ElemId, VoxelGrid};
use nalgebra::{DMatrix, SVector};

/// Node-major displacement/force vector, 3 components per node.
pub type GlobalVector = Vec<f64>;

/// Which element formulation backs the product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StiffnessKind {
    Vfem,
    Ovfem,
}

/// Matrix-vector backend selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    VfemFp64,
    OvfemFp64,
    OvfemFp32,
    OvfemInt8 { stages: usize },
}

impl Backend {
    pub fn name(&self) -> String {
        match self {
            Backend::VfemFp64 => "vfem-fp64".into(),
            Backend::OvfemFp64 => "ovfem-fp64".into(),
            Backend::OvfemFp32 => "ovfem-fp32".into(),
            Backend::OvfemInt8 { .. } => "ovfem-int8".into(),
        }
    }

    pub fn from_name(name: &str, stages: usize) -> Result<Backend> {
        match name {
            "vfem-fp64" => Ok(Backend::VfemFp64),
            "ovfem-fp64" => Ok(Backend::OvfemFp64),
            "ovfem-fp32" => Ok(Backend::OvfemFp32),
            "ovfem-int8" => Ok(Backend::OvfemInt8 { stages }),
            other => Err(CoreError::InvalidInput(format!("unknown backend '{other}'"))),
        }
    }

    pub fn stiffness_kind(&self) -> StiffnessKind {
        match self {
            Backend::VfemFp64 => StiffnessKind::Vfem,
            _ => StiffnessKind::Ovfem,
        }
    }
}

/// Sentinel for padded block slots.
pub const EMPTY_SLOT: u32 = u32::MAX;

/// 32 element slots contiguous along x; tail and inactive slots hold
/// [`EMPTY_SLOT`] and contribute nothing.
#[derive(Debug, Clone)]
pub struct ElementBlock {
    pub slots: [u32; BLOCK_ELEMS],
}

/// Deterministic x-line blocking: rows are chunked into ceil(nx/32) blocks,
/// ordered x-chunk fastest, then y, then z.
pub fn build_blocks(grid: &VoxelGrid) -> Vec<ElementBlock> {
    let chunks = grid.nx.div_ceil(BLOCK_ELEMS);
    let mut blocks = Vec::with_capacity(chunks * grid.ny * grid.nz);
    for k in 0..grid.nz {
        for j in 0..grid.ny {
            for chunk in 0..chunks {
                let mut slots = [EMPTY_SLOT; BLOCK_ELEMS];
                for (s, slot) in slots.iter_mut().enumerate() {
                    let i = chunk * BLOCK_ELEMS + s;
                    if i < grid.nx {
                        let e = grid.elem_id(i, j, k);
                        if grid.active[e.idx()] {
                            *slot = e.0;
                        }
                    }
                }
                blocks.push(ElementBlock { slots });
            }
        }
    }
    blocks
}

/// Node-index offsets of an element's 8 corners in local octant order.
#[inline]
fn corner_offsets(grid: &VoxelGrid) -> [usize; 8] {
    let sx = grid.nx + 1;
    let sxy = sx * (grid.ny + 1);
    [0, 1, sx, sx + 1, sxy, sxy + 1, sxy + sx, sxy + sx + 1]
}

#[inline]
fn elem_base_node(grid: &VoxelGrid, e: ElemId) -> usize {
    let (i, j, k) = grid.elem_ijk(e);
    i + (grid.nx + 1) * (j + (grid.ny + 1) * k)
}

fn check_dims(grid: &VoxelGrid, u: &[f64]) -> Result<()> {
    if u.len() != grid.dof_count() {
        return Err(CoreError::InvalidInput(format!(
            "vector length {} does not match {} dofs",
            u.len(),
            grid.dof_count()
        )));
    }
    Ok(())
}

/// Copy of `u` with constrained components forced to zero, so values held
/// in constrained slots cannot inject energy.
fn masked_input(grid: &VoxelGrid, u: &[f64]) -> Vec<f64> {
    let mut w = u.to_vec();
    for (x, &fixed) in w.iter_mut().zip(&grid.dirichlet) {
        if fixed {
            *x = 0.0;
        }
    }
    w
}

fn mask_output(grid: &VoxelGrid, f: &mut [f64]) {
    for (x, &fixed) in f.iter_mut().zip(&grid.dirichlet) {
        if fixed {
            *x = 0.0;
        }
    }
}

#[inline]
fn gather(u: &[f64], base: usize, offsets: &[usize; 8]) -> [f64; ELEM_DOFS] {
    let mut out = [0.0; ELEM_DOFS];
    for (local, &off) in offsets.iter().enumerate() {
        let g = 3 * (base + off);
        out[3 * local] = u[g];
        out[3 * local + 1] = u[g + 1];
        out[3 * local + 2] = u[g + 2];
    }
    out
}

#[inline]
fn scatter_add(f: &mut [f64], base: usize, offsets: &[usize; 8], fe: &[f64]) {
    debug_assert_eq!(fe.len(), ELEM_DOFS);
    for (local, &off) in offsets.iter().enumerate() {
        let g = 3 * (base + off);
        f[g] += fe[3 * local];
        f[g + 1] += fe[3 * local + 1];
        f[g + 2] += fe[3 * local + 2];
    }
}

/// FP64 element-by-element product with the selected element formulation.
pub fn matvec_fp64(
    grid: &VoxelGrid,
    kernels: &KernelSet,
    blocks: &[ElementBlock],
    u: &[f64],
    kind: StiffnessKind,
) -> Result<GlobalVector> {
    check_dims(grid, u)?;
    let uw = masked_input(grid, u);
    let offsets = corner_offsets(grid);
    let mut f = vec![0.0; grid.dof_count()];
    for block in blocks {
        for &slot in &block.slots {
            if slot == EMPTY_SLOT {
                continue;
            }
            let e = ElemId(slot);
            let base = elem_base_node(grid, e);
            let ue = SVector::<f64, ELEM_DOFS>::from(gather(&uw, base, &offsets));
            let mk = &kernels.materials[grid.material_of[e.idx()].idx()];
            let ke = match kind {
                StiffnessKind::Vfem => &mk.vfem.stiffness,
                StiffnessKind::Ovfem => &mk.ovfem.stiffness,
            };
            let fe = ke * ue;
            scatter_add(&mut f, base, &offsets, fe.as_ref());
        }
    }
    mask_output(grid, &mut f);
    Ok(f)
}

/// FP32 element arithmetic (orthogonal-basis kernel) with FP64 scatter
/// accumulation, isolating element precision from accumulation noise.
pub fn matvec_fp32(
    grid: &VoxelGrid,
    kernels: &KernelSet,
    blocks: &[ElementBlock],
    u: &[f64],
) -> Result<GlobalVector> {
    check_dims(grid, u)?;
    let uw = masked_input(grid, u);
    let offsets = corner_offsets(grid);
    let mut f = vec![0.0; grid.dof_count()];
    for block in blocks {
        for &slot in &block.slots {
            if slot == EMPTY_SLOT {
                continue;
            }
            let e = ElemId(slot);
            let base = elem_base_node(grid, e);
            let ue64 = gather(&uw, base, &offsets);
            let ue = SVector::<f32, ELEM_DOFS>::from_fn(|i, _| ue64[i] as f32);
            let mk = &kernels.materials[grid.material_of[e.idx()].idx()];
            let fe = mk.ovfem_f32 * ue;
            let mut fe64 = [0.0f64; ELEM_DOFS];
            for (o, &x) in fe64.iter_mut().zip(fe.iter()) {
                *o = x as f64;
            }
            scatter_add(&mut f, base, &offsets, &fe64);
        }
    }
    mask_output(grid, &mut f);
    Ok(f)
}

/// Counters from one integer-backend product.
#[derive(Debug, Clone, Copy, Default)]
pub struct Int8Stats {
    pub blocks: usize,
    /// Blocks whose every column scale was zero; no product executed.
    pub skipped_blocks: usize,
    /// Staged (24x48)x(48x32) products executed (one per stage per block).
    pub matmuls: usize,
}

/// Integer-expansion product: per block the 32 element vectors are
/// augmented, scaled, truncated, digit-expanded, multiplied through the
/// tiled integer pipeline, and the rescaled results are added directly
/// into the global output together with the identity term and prefactor.
/// Mixed materials within a block carry their own factors.
pub fn matvec_int8(
    grid: &VoxelGrid,
    kernels: &KernelSet,
    blocks: &[ElementBlock],
    u: &[f64],
    stages: usize,
) -> Result<(GlobalVector, Int8Stats)> {
    check_dims(grid, u)?;
    if !(1..=expand::MAX_STAGES).contains(&stages) {
        return Err(CoreError::InvalidInput(format!("invalid stage count {stages}")));
    }
    let uw = masked_input(grid, u);
    let offsets = corner_offsets(grid);
    let ds = kernels.ds;
    struct Factors {
        augment: f64,
        residual: f64,
        prefactor: f64,
    }
    let factors: Vec<Factors> = grid
        .materials
        .iter()
        .map(|m| Factors {
            augment: Int8Kernel::augment_factor(m),
            residual: Int8Kernel::residual_factor(m),
            prefactor: Int8Kernel::prefactor(m, ds),
        })
        .collect();

    let prepared = PreparedA::new(&kernels.int8.matrix);
    let mut digits = BlockDigits::new(stages);
    let mut ws = StagedWorkspace::default();
    let mut recon = Box::new([[0.0; expand::OUT_ROWS]; BLOCK_ELEMS]);
    let mut ue_cache = vec![[0.0f64; ELEM_DOFS]; BLOCK_ELEMS];
    let mut stats = Int8Stats::default();

    let mut f = vec![0.0; grid.dof_count()];
    for block in blocks {
        stats.blocks += 1;
        let mut any = false;
        for (slot_idx, &slot) in block.slots.iter().enumerate() {
            if slot == EMPTY_SLOT {
                digits.set_column(slot_idx, 0.0, &[0; VEC_LEN]);
                continue;
            }
            let e = ElemId(slot);
            let base = elem_base_node(grid, e);
            let ue = gather(&uw, base, &offsets);
            ue_cache[slot_idx] = ue;
            let aug = factors[grid.material_of[e.idx()].idx()].augment;
            let mut u_bar = [0.0f64; VEC_LEN];
            u_bar[..ELEM_DOFS].copy_from_slice(&ue);
            for i in 0..ELEM_DOFS {
                u_bar[ELEM_DOFS + i] = aug * ue[i];
            }
            let (scale, scaled) = expand::scale_vector(&u_bar)?;
            if scale == 0.0 {
                digits.set_column(slot_idx, 0.0, &[0; VEC_LEN]);
                continue;
            }
            any = true;
            let v64 = expand::to_int64(&scaled, expand::scale_constant(stages));
            digits.set_column(slot_idx, scale, &v64);
        }
        if !any {
            stats.skipped_blocks += 1;
            continue;
        }
        ws.run(&prepared, &digits, &mut recon);
        stats.matmuls += stages;
        for (slot_idx, &slot) in block.slots.iter().enumerate() {
            if slot == EMPTY_SLOT {
                continue;
            }
            let e = ElemId(slot);
            let fac = &factors[grid.material_of[e.idx()].idx()];
            let base = elem_base_node(grid, e);
            let ue = &ue_cache[slot_idx];
            let rec = &recon[slot_idx];
            let mut fe = [0.0f64; ELEM_DOFS];
            for i in 0..ELEM_DOFS {
                fe[i] = fac.prefactor * (rec[i] + fac.residual * ue[i]);
            }
            scatter_add(&mut f, base, &offsets, &fe);
        }
    }
    mask_output(grid, &mut f);
    Ok((f, stats))
}

/// Upper element-count bound for the exact oracle.
pub const ORACLE_ELEM_LIMIT: usize = 10_000;

/// Exact integer decomposition of one material's element stiffness:
/// `K = ds * (kappa * MK + G * MG) / den`.
struct ExactKernel {
    mk: Box<[[i64; 24]; 24]>,
    mg: Box<[[i64; 24]; 24]>,
    s_kappa: Dyadic,
    s_g: Dyadic,
    den: u64,
}

impl ExactKernel {
    fn build_all(kernels: &KernelSet, grid: &VoxelGrid, kind: StiffnessKind) -> Vec<ExactKernel> {
        grid.materials
            .iter()
            .map(|m| {
                let (mk, mg, den) = match kind {
                    StiffnessKind::Vfem => {
                        let (mk, mg) = crate::element::vfem::exact_integer_parts();
                        (mk, mg, 432)
                    }
                    StiffnessKind::Ovfem => {
                        let (mk, mg) = kernels.int8.exact_integer_parts();
                        (mk, mg, 768)
                    }
                };
                let ds = Dyadic::from_f64(kernels.ds);
                ExactKernel {
                    mk,
                    mg,
                    s_kappa: ds.mul(&Dyadic::from_f64(m.kappa)),
                    s_g: ds.mul(&Dyadic::from_f64(m.shear_g)),
                    den,
                }
            })
            .collect()
    }

    fn apply(&self, ue: &[f64; ELEM_DOFS], out: &mut [Dyadic]) {
        let u_dy: [Dyadic; ELEM_DOFS] = std::array::from_fn(|i| Dyadic::from_f64(ue[i]));
        for r in 0..ELEM_DOFS {
            let mut tk = Dyadic::zero();
            let mut tg = Dyadic::zero();
            for (j, u) in u_dy.iter().enumerate() {
                if self.mk[r][j] != 0 {
                    tk.add_assign(&u.mul_i64(self.mk[r][j]));
                }
                if self.mg[r][j] != 0 {
                    tg.add_assign(&u.mul_i64(self.mg[r][j]));
                }
            }
            out[r].add_assign(&self.s_kappa.mul(&tk));
            out[r].add_assign(&self.s_g.mul(&tg));
        }
    }
}

/// Exact-arithmetic oracle: element matrices and input treated as exact
/// binary rationals, the product accumulated without rounding, and each
/// output component rounded to the nearest FP64 once. Desk-scale only.
pub fn matvec_exact(
    grid: &VoxelGrid,
    kernels: &KernelSet,
    u: &[f64],
    kind: StiffnessKind,
) -> Result<GlobalVector> {
    check_dims(grid, u)?;
    let active = grid.active.iter().filter(|a| **a).count();
    if active > ORACLE_ELEM_LIMIT {
        return Err(CoreError::OracleTooLarge {
            elems: active,
            limit: ORACLE_ELEM_LIMIT,
        });
    }
    let uw = masked_input(grid, u);
    let offsets = corner_offsets(grid);
    let exact = ExactKernel::build_all(kernels, grid, kind);
    let mut acc: Vec<Dyadic> = vec![Dyadic::zero(); grid.dof_count()];
    let mut elem_out: Vec<Dyadic> = vec![Dyadic::zero(); ELEM_DOFS];
    for eidx in 0..grid.elem_count() {
        if !grid.active[eidx] {
            continue;
        }
        let e = ElemId(eidx as u32);
        let base = elem_base_node(grid, e);
        let ue = gather(&uw, base, &offsets);
        for d in elem_out.iter_mut() {
            *d = Dyadic::zero();
        }
        let k = &exact[grid.material_of[eidx].idx()];
        k.apply(&ue, &mut elem_out);
        for (local, &off) in offsets.iter().enumerate() {
            let g = 3 * (base + off);
            for c in 0..3 {
                acc[g + c].add_assign(&elem_out[3 * local + c]);
            }
        }
    }
    let den = exact.first().map(|k| k.den).unwrap_or(1);
    let mut f: Vec<f64> = acc.iter().map(|d| d.to_f64_div(den)).collect();
    mask_output(grid, &mut f);
    Ok(f)
}

/// Dense assembled stiffness; desk-scale oracle only, no constraint
/// handling (tests apply masks themselves).
pub fn assemble_dense(
    grid: &VoxelGrid,
    kernels: &KernelSet,
    kind: StiffnessKind,
) -> Result<DMatrix<f64>> {
    let n = grid.dof_count();
    if grid.elem_count() > ORACLE_ELEM_LIMIT {
        return Err(CoreError::OracleTooLarge {
            elems: grid.elem_count(),
            limit: ORACLE_ELEM_LIMIT,
        });
    }
    let mut k_global = DMatrix::<f64>::zeros(n, n);
    for eidx in 0..grid.elem_count() {
        if !grid.active[eidx] {
            continue;
        }
        let e = ElemId(eidx as u32);
        let nodes = grid.element_nodes(e)?;
        let mk = &kernels.materials[grid.material_of[eidx].idx()];
        let ke = match kind {
            StiffnessKind::Vfem => &mk.vfem.stiffness,
            StiffnessKind::Ovfem => &mk.ovfem.stiffness,
        };
        for (la, na) in nodes.iter().enumerate() {
            for (lb, nb) in nodes.iter().enumerate() {
                for da in 0..3 {
                    for db in 0..3 {
                        k_global[(3 * na.idx() + da, 3 * nb.idx() + db)] +=
                            ke[(3 * la + da, 3 * lb + db)];
                    }
                }
            }
        }
    }
    Ok(k_global)
}

/// Global diagonal mass vector (3 identical entries per node) assembled
/// from the per-element diagonal rho*ds^3/8.
pub fn assemble_mass(grid: &VoxelGrid, kernels: &KernelSet) -> Vec<f64> {
    let mut m = vec![0.0; grid.dof_count()];
    let offsets = corner_offsets(grid);
    for eidx in 0..grid.elem_count() {
        if !grid.active[eidx] {
            continue;
        }
        let e = ElemId(eidx as u32);
        let base = elem_base_node(grid, e);
        let mk = &kernels.materials[grid.material_of[eidx].idx()];
        let entry = mk.ovfem.mass[0];
        for &off in &offsets {
            let g = 3 * (base + off);
            m[g] += entry;
            m[g + 1] += entry;
            m[g + 2] += entry;
        }
    }
    m
}

/// Unified dispatch over the four backends.
pub fn apply_backend(
    backend: Backend,
    grid: &VoxelGrid,
    kernels: &KernelSet,
    blocks: &[ElementBlock],
    u: &[f64],
) -> Result<GlobalVector> {
    match backend {
        Backend::VfemFp64 => matvec_fp64(grid, kernels, blocks, u, StiffnessKind::Vfem),
        Backend::OvfemFp64 => matvec_fp64(grid, kernels, blocks, u, StiffnessKind::Ovfem),
        Backend::OvfemFp32 => matvec_fp32(grid, kernels, blocks, u),
        Backend::OvfemInt8 { stages } => {
            matvec_int8(grid, kernels, blocks, u, stages).map(|(f, _)| f)
        }
    }
}

/// Cache-traffic proxy: counts node lines (x-rows of nodes) newly touched
/// between consecutive elements of a sweep. Blocked sweeps reuse the four
/// lines of the previous element; a shuffled sweep touches fresh lines
/// almost every step, so the ratio approximates the cache-reuse gain of
/// the x-line ordering.
pub fn cache_line_stats(grid: &VoxelGrid, blocks: &[ElementBlock]) -> CacheStats {
    let line_of = |e: ElemId| -> [usize; 4] {
        let (_, j, k) = grid.elem_ijk(e);
        let rows = grid.ny + 1;
        [
            j + rows * k,
            j + 1 + rows * k,
            j + rows * (k + 1),
            j + 1 + rows * (k + 1),
        ]
    };
    let blocked_order: Vec<ElemId> = blocks
        .iter()
        .flat_map(|b| b.slots.iter().copied())
        .filter(|&s| s != EMPTY_SLOT)
        .map(ElemId)
        .collect();
    let mut shuffled = blocked_order.clone();
    // Deterministic shuffle for the comparison sweep.
    let mut state = 0x2545f4914f6cdd1du64;
    for i in (1..shuffled.len()).rev() {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let j = (state >> 33) as usize % (i + 1);
        shuffled.swap(i, j);
    }
    let count = |order: &[ElemId]| -> u64 {
        let mut prev: Option<[usize; 4]> = None;
        let mut fresh = 0u64;
        for &e in order {
            let lines = line_of(e);
            match prev {
                None => fresh += 4,
                Some(p) => {
                    for l in lines {
                        if !p.contains(&l) {
                            fresh += 1;
                        }
                    }
                }
            }
            prev = Some(lines);
        }
        fresh
    };
    CacheStats {
        blocked_lines: count(&blocked_order),
        shuffled_lines: count(&shuffled),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CacheStats {
    pub blocked_lines: u64,
    pub shuffled_lines: u64,
}

impl CacheStats {
    pub fn reuse_ratio(&self) -> f64 {
        self.shuffled_lines as f64 / self.blocked_lines.max(1) as f64
    }
}
