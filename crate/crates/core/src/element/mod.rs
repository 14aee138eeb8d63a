//! Element matrix factory.
//!
//! Computes, per material, the trilinear voxel element stiffness with its
//! lumped mass (`vfem`), the orthogonal-basis element stiffness with its
//! exactly diagonal mass (`ovfem`), and the constant 24x48 signed 8-bit
//! integer matrix that reproduces the orthogonal-basis stiffness action
//! through per-element scalar factors (`int8`).
//!
//! Conventions used throughout:
//! * local nodes are numbered octant-style, `local = dx + 2*dy + 4*dz`;
//! * element dof ordering is node-major with x, y, z within each node;
//! * Voigt order is xx, yy, zz, xy, yz, zx with engineering (factor-2)
//!   shear strains.

pub mod int8;
pub mod ovfem;
pub mod vfem;

use crate::error::Result;
use crate::voxel::Material;
use nalgebra::{SMatrix, SVector};

pub use int8::Int8Kernel;

/// Degrees of freedom per element (8 nodes x 3 components).
pub const ELEM_DOFS: usize = 24;
/// Stress/strain components in Voigt order.
pub const VOIGT: usize = 6;
/// Polynomial stress modes of the orthogonal basis.
pub const PSI_MODES: usize = 7;
/// Rows of the equivalent strain-displacement map (modes x components).
pub const BBAR_ROWS: usize = PSI_MODES * VOIGT;

pub type ElemMatrix = SMatrix<f64, ELEM_DOFS, ELEM_DOFS>;
pub type ElemVector = SVector<f64, ELEM_DOFS>;
pub type BbarMatrix = SMatrix<f64, BBAR_ROWS, ELEM_DOFS>;
pub type ModeMatrix = SMatrix<f64, BBAR_ROWS, BBAR_ROWS>;

/// Isotropic elasticity matrix in Voigt order from bulk and shear moduli.
pub fn elasticity_matrix(kappa: f64, shear_g: f64) -> SMatrix<f64, VOIGT, VOIGT> {
    let lambda = kappa - 2.0 * shear_g / 3.0;
    let mut c = SMatrix::<f64, VOIGT, VOIGT>::zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[(i, j)] = if i == j { lambda + 2.0 * shear_g } else { lambda };
        }
        c[(3 + i, 3 + i)] = shear_g;
    }
    c
}

/// Derivative of the elasticity matrix with respect to the bulk modulus.
pub fn c_kappa() -> SMatrix<f64, VOIGT, VOIGT> {
    let mut c = SMatrix::zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[(i, j)] = 1.0;
        }
    }
    c
}

/// Derivative of the elasticity matrix with respect to the shear modulus.
pub fn c_shear() -> SMatrix<f64, VOIGT, VOIGT> {
    let mut c = SMatrix::zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[(i, j)] = if i == j { 4.0 / 3.0 } else { -2.0 / 3.0 };
        }
        c[(3 + i, 3 + i)] = 1.0;
    }
    c
}

/// Trilinear element matrices for one material.
#[derive(Debug, Clone)]
pub struct VfemKernel {
    /// 24x24 stiffness, N/m per unit nodal displacement.
    pub stiffness: ElemMatrix,
    /// Diagonal of the lumped mass matrix; every entry is rho*ds^3/8.
    pub lumped_mass: ElemVector,
}

impl VfemKernel {
    pub fn build(mat: &Material, ds: f64) -> Result<Self> {
        mat.validate()?;
        Ok(VfemKernel {
            stiffness: vfem::stiffness(mat, ds)?,
            lumped_mass: vfem::lumped_mass(mat.rho, ds)?,
        })
    }
}

/// Orthogonal-basis element matrices for one material.
#[derive(Debug, Clone)]
pub struct OvfemKernel {
    /// 24x24 stiffness assembled from the equivalent strain-displacement map.
    pub stiffness: ElemMatrix,
    /// Diagonal mass; exact (no lumping), every entry rho*ds^3/8.
    pub mass: ElemVector,
    /// Equivalent strain-displacement map, mode-major rows.
    pub bbar: BbarMatrix,
    /// Bulk-modulus contribution to the mode-space constitutive matrix.
    pub d_kappa: ModeMatrix,
    /// Shear-modulus contribution to the mode-space constitutive matrix.
    pub d_shear: ModeMatrix,
}

impl OvfemKernel {
    pub fn build(mat: &Material, ds: f64) -> Result<Self> {
        mat.validate()?;
        Ok(OvfemKernel {
            stiffness: ovfem::stiffness(mat, ds)?,
            mass: ovfem::mass(mat.rho, ds)?,
            bbar: ovfem::psi_grad_phi(ds)?,
            d_kappa: ovfem::d_kappa(),
            d_shear: ovfem::d_shear(),
        })
    }
}

/// All element matrices for one material at a fixed ds.
#[derive(Debug, Clone)]
pub struct MaterialKernels {
    pub vfem: VfemKernel,
    pub ovfem: OvfemKernel,
    /// Single-precision copy of the orthogonal-basis stiffness for the
    /// FP32 backend.
    pub ovfem_f32: SMatrix<f32, ELEM_DOFS, ELEM_DOFS>,
}

/// Element matrices for every material of a grid plus the shared integer
/// kernel. Matrices are computed once per material; all elements of that
/// material share them.
#[derive(Debug, Clone)]
pub struct KernelSet {
    pub materials: Vec<MaterialKernels>,
    pub int8: Int8Kernel,
    pub ds: f64,
}

impl KernelSet {
    pub fn build(materials: &[Material], ds: f64) -> Result<Self> {
        let mut per_mat = Vec::with_capacity(materials.len());
        for mat in materials {
            let vfem = VfemKernel::build(mat, ds)?;
            let ovfem = OvfemKernel::build(mat, ds)?;
            let ovfem_f32 = ovfem.stiffness.map(|x| x as f32);
            per_mat.push(MaterialKernels {
                vfem,
                ovfem,
                ovfem_f32,
            });
        }
        Ok(KernelSet {
            materials: per_mat,
            int8: Int8Kernel::build()?,
            ds,
        })
    }
}
