//! Constant signed 8-bit integer element kernel.
//!
//! For a linear isotropic material the orthogonal-basis element stiffness
//! splits into bulk and shear parts whose mode-space matrices are exact
//! small rationals. Scaling those parts by 256/3 and 128 lands every entry
//! on an integer in [-128, 127], giving a constant 24x48 matrix
//! `K = [K_kappa | K_shear]` that is independent of both material and ds.
//! The stiffness action is recovered per element as
//!
//! `K_o u = kappa*ds/256 * (K * [u | 2/3 G/kappa u] + 256/3 G/kappa u)`.

use super::{ovfem, ElemMatrix, ELEM_DOFS, PSI_MODES, VOIGT};
use crate::error::{CoreError, Result};
use crate::voxel::{Material, VoxelGrid};

/// Columns of the integer kernel: bulk block then shear block.
pub const INT8_COLS: usize = 2 * ELEM_DOFS;

/// The constant integer element kernel with its per-material scaling rules.
#[derive(Debug, Clone)]
pub struct Int8Kernel {
    /// 24x48 signed 8-bit entries, bulk block in columns 0..24, shear
    /// block in columns 24..48.
    pub matrix: [[i8; INT8_COLS]; ELEM_DOFS],
    /// Widened copy for 16-bit multiply-accumulate paths.
    pub matrix_i16: [[i16; INT8_COLS]; ELEM_DOFS],
}

impl Int8Kernel {
    /// Scale factor in front of the reconstruction: `kappa * ds / 256`.
    #[inline]
    pub fn prefactor(mat: &Material, ds: f64) -> f64 {
        mat.kappa * ds / 256.0
    }

    /// Identity-term factor inside the reconstruction: `256/3 * G/kappa`.
    #[inline]
    pub fn residual_factor(mat: &Material) -> f64 {
        (256.0 / 3.0) * (mat.shear_g / mat.kappa)
    }

    /// Augmentation factor for the second half of the element vector:
    /// `2/3 * G/kappa`.
    #[inline]
    pub fn augment_factor(mat: &Material) -> f64 {
        (2.0 / 3.0) * (mat.shear_g / mat.kappa)
    }

    /// Builds the kernel from exact integer arithmetic and cross-checks it
    /// against the FP64 mode-space composition at two ds values. Any entry
    /// off an integer by more than 1e-6 or outside [-128, 127] is a
    /// derivation bug and fails construction.
    pub fn build() -> Result<Self> {
        let (kappa_block, shear_block) = integer_blocks()?;
        let mut matrix = [[0i8; INT8_COLS]; ELEM_DOFS];
        for r in 0..ELEM_DOFS {
            for c in 0..ELEM_DOFS {
                matrix[r][c] = int8_checked(kappa_block[r][c], r, c)?;
                matrix[r][ELEM_DOFS + c] = int8_checked(shear_block[r][c], r, ELEM_DOFS + c)?;
            }
        }
        for &ds in &[1.0, 0.002] {
            check_against_float_route(&matrix, ds)?;
        }
        let mut matrix_i16 = [[0i16; INT8_COLS]; ELEM_DOFS];
        for r in 0..ELEM_DOFS {
            for c in 0..INT8_COLS {
                matrix_i16[r][c] = matrix[r][c] as i16;
            }
        }
        Ok(Int8Kernel { matrix, matrix_i16 })
    }

    /// Applies the full reconstruction in FP64 for one element:
    /// `prefactor * (K * u_bar + residual * u)` with
    /// `u_bar = [u | augment * u]`.
    pub fn apply_fp64(&self, mat: &Material, ds: f64, u: &[f64; ELEM_DOFS]) -> [f64; ELEM_DOFS] {
        let aug = Self::augment_factor(mat);
        let resid = Self::residual_factor(mat);
        let pref = Self::prefactor(mat, ds);
        let mut out = [0.0; ELEM_DOFS];
        for r in 0..ELEM_DOFS {
            let mut acc = 0.0;
            for c in 0..ELEM_DOFS {
                acc += self.matrix[r][c] as f64 * u[c];
                acc += self.matrix[r][ELEM_DOFS + c] as f64 * (aug * u[c]);
            }
            out[r] = pref * (acc + resid * u[r]);
        }
        out
    }

    /// Integer decomposition of the exact stiffness for the oracle:
    /// `K_o = ds * (kappa * MK + G * MG) / 768` with
    /// `MK = 3 * K_kappa` and `MG = 2 * K_shear + 256 * I`.
    pub fn exact_integer_parts(&self) -> (Box<[[i64; 24]; 24]>, Box<[[i64; 24]; 24]>) {
        let mut mk = Box::new([[0i64; 24]; 24]);
        let mut mg = Box::new([[0i64; 24]; 24]);
        for r in 0..ELEM_DOFS {
            for c in 0..ELEM_DOFS {
                mk[r][c] = 3 * self.matrix[r][c] as i64;
                mg[r][c] = 2 * self.matrix[r][ELEM_DOFS + c] as i64
                    + if r == c { 256 } else { 0 };
            }
        }
        (mk, mg)
    }

    /// Debug dump: 24 rows of 48 comma-separated integers.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in &self.matrix {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

fn int8_checked(v: i64, row: usize, col: usize) -> Result<i8> {
    if !(-128..=127).contains(&v) {
        return Err(CoreError::KernelConstruction {
            row,
            col,
            value: v as f64,
        });
    }
    Ok(v as i8)
}

/// Integer mode-space composition. With `V = 4*W` (integral entries), the
/// bulk block is `sum_beta m_beta V^T c_kappa V` and the shear block is
/// `(sum_beta m_beta V^T (3 c_shear) V)/2 - 128 I`; the half must divide
/// exactly.
fn integer_blocks() -> Result<(Box<[[i64; 24]; 24]>, Box<[[i64; 24]; 24]>)> {
    // Integer constitutive blocks: dc/dkappa and 3*dc/dG.
    let mut ck = [[0i64; VOIGT]; VOIGT];
    let mut cg3 = [[0i64; VOIGT]; VOIGT];
    for i in 0..3 {
        for j in 0..3 {
            ck[i][j] = 1;
            cg3[i][j] = if i == j { 4 } else { -2 };
        }
        cg3[3 + i][3 + i] = 3;
    }

    let v_entry = |beta: usize, voigt: usize, col: usize| -> i64 {
        let alpha = col / 3;
        let d = col % 3;
        let s = VoxelGrid::local_signs(alpha);
        let w = |dir: usize| ovfem::w_times4(beta, dir, s);
        match (voigt, d) {
            (0, 0) => w(0),
            (1, 1) => w(1),
            (2, 2) => w(2),
            (3, 0) => w(1),
            (3, 1) => w(0),
            (4, 1) => w(2),
            (4, 2) => w(1),
            (5, 0) => w(2),
            (5, 2) => w(0),
            _ => 0,
        }
    };

    let mut kappa_block = Box::new([[0i64; 24]; 24]);
    let mut shear_twice = Box::new([[0i64; 24]; 24]);
    for beta in 0..PSI_MODES {
        let m = ovfem::MODE_WEIGHT[beta];
        // v[voigt][col] for this mode.
        let mut v = [[0i64; ELEM_DOFS]; VOIGT];
        for (voigt, row) in v.iter_mut().enumerate() {
            for (col, entry) in row.iter_mut().enumerate() {
                *entry = v_entry(beta, voigt, col);
            }
        }
        for r in 0..ELEM_DOFS {
            for c in 0..ELEM_DOFS {
                let mut acc_k = 0i64;
                let mut acc_g = 0i64;
                for a in 0..VOIGT {
                    if v[a][r] == 0 {
                        continue;
                    }
                    for b in 0..VOIGT {
                        acc_k += v[a][r] * ck[a][b] * v[b][c];
                        acc_g += v[a][r] * cg3[a][b] * v[b][c];
                    }
                }
                kappa_block[r][c] += m * acc_k;
                shear_twice[r][c] += m * acc_g;
            }
        }
    }
    let mut shear_block = Box::new([[0i64; 24]; 24]);
    for r in 0..ELEM_DOFS {
        for c in 0..ELEM_DOFS {
            let t = shear_twice[r][c];
            if t % 2 != 0 {
                return Err(CoreError::KernelConstruction {
                    row: r,
                    col: ELEM_DOFS + c,
                    value: t as f64 / 2.0,
                });
            }
            shear_block[r][c] = t / 2 - if r == c { 128 } else { 0 };
        }
    }
    Ok((kappa_block, shear_block))
}

/// FP64 route through the mode-space matrices: `256/3 Bbar^T Dk Bbar / ds^4`
/// and `128 Bbar^T Dg Bbar / ds^4 - 128 I`. Guards the integer derivation.
fn check_against_float_route(matrix: &[[i8; INT8_COLS]; ELEM_DOFS], ds: f64) -> Result<()> {
    let bbar = ovfem::psi_grad_phi(ds)?;
    let ds4 = ds.powi(4);
    let kappa_f: ElemMatrix = bbar.transpose() * ovfem::d_kappa() * bbar * (256.0 / 3.0 / ds4);
    let shear_f: ElemMatrix = bbar.transpose() * ovfem::d_shear() * bbar * (128.0 / ds4)
        - ElemMatrix::identity() * 128.0;
    for r in 0..ELEM_DOFS {
        for c in 0..ELEM_DOFS {
            for (col, float_val) in [(c, kappa_f[(r, c)]), (ELEM_DOFS + c, shear_f[(r, c)])] {
                let int_val = matrix[r][col] as f64;
                if (float_val - int_val).abs() > 1e-6 || float_val.round() != int_val {
                    return Err(CoreError::KernelConstruction {
                        row: r,
                        col,
                        value: float_val,
                    });
                }
            }
        }
    }
    Ok(())
}
