//! Orthogonal-basis voxel element.
//!
//! Displacements use Heaviside octant indicators `phi = H(a1 r1) H(a2 r2)
//! H(a3 r3)` per node, stresses the polynomial modes
//! `psi = {1, r1, r2, r3, r1 r2, r2 r3, r1 r3}`. The indicator basis makes
//! the mass matrix diagonal without lumping; the stiffness follows from the
//! two-field stationarity as
//! `K = Bbar^T (psi-Gram)^-1 (x) c Bbar`,
//! where `Bbar` collects the mixed integrals `(psi^b grad phi^a)_e`.
//!
//! The mixed integrals are evaluated by parts,
//! `(psi d_i phi)_e = surface flux - (d_i psi, phi)_e`,
//! which collapses to sampling `psi` on the interior sheet `r_i = 0` of
//! each octant; no distributional evaluation is required. In closed form,
//! with octant signs `s` and a factor `ds^2/4`, the nonzero values are the
//! `w4/4` table in [`w_times4`].

use super::{
    c_kappa, c_shear, elasticity_matrix, BbarMatrix, ElemMatrix, ElemVector, ModeMatrix,
    PSI_MODES, VOIGT,
};
use crate::error::{CoreError, Result};
use crate::voxel::VoxelGrid;
use crate::voxel::Material;
use nalgebra::SMatrix;

/// `ds^3 / gram(beta)` for each stress mode: the constant mode integrates
/// to the volume, linear modes to a third, bilinear modes to a ninth.
pub const MODE_WEIGHT: [i64; PSI_MODES] = [1, 3, 3, 3, 9, 9, 9];

/// Four times the dimensionless mixed integral `w(beta, dir, s)`:
/// `(psi^beta d_dir phi^s)_e = ds^2/4 * w`. Values are exact integers in
/// {0, +-1, +-2, +-4}.
pub(crate) fn w_times4(beta: usize, dir: usize, s: [i32; 3]) -> i64 {
    let (s1, s2, s3) = (s[0] as i64, s[1] as i64, s[2] as i64);
    match (beta, dir) {
        (0, 0) => 4 * s1,
        (0, 1) => 4 * s2,
        (0, 2) => 4 * s3,
        (1, 1) => 2 * s1 * s2,
        (1, 2) => 2 * s1 * s3,
        (2, 0) => 2 * s1 * s2,
        (2, 2) => 2 * s2 * s3,
        (3, 0) => 2 * s1 * s3,
        (3, 1) => 2 * s2 * s3,
        (4, 2) => s1 * s2 * s3,
        (5, 0) => s1 * s2 * s3,
        (6, 1) => s1 * s2 * s3,
        _ => 0,
    }
}

/// Diagonal Gram matrix of the stress modes over the element. Off-diagonal
/// pairs mix monomials of differing parity and integrate to zero exactly.
pub fn psi_gram(ds: f64) -> Result<SMatrix<f64, PSI_MODES, PSI_MODES>> {
    if !(ds > 0.0 && ds.is_finite()) {
        return Err(CoreError::InvalidInput(format!("ds must be > 0, got {ds}")));
    }
    let vol = ds * ds * ds;
    let mut g = SMatrix::zeros();
    for (beta, &m) in MODE_WEIGHT.iter().enumerate() {
        g[(beta, beta)] = vol / m as f64;
    }
    Ok(g)
}

/// Mixed integrals of the stress modes against gradients of the octant
/// indicator basis, assembled mode-major: row `beta*6 + voigt`, column
/// `node*3 + axis`. Entries are homogeneous of degree 2 in `ds`.
pub fn psi_grad_phi(ds: f64) -> Result<BbarMatrix> {
    if !(ds > 0.0 && ds.is_finite()) {
        return Err(CoreError::InvalidInput(format!("ds must be > 0, got {ds}")));
    }
    let scale = ds * ds / 16.0; // ds^2/4 per integral, w4 carries another 4
    let mut b = BbarMatrix::zeros();
    for alpha in 0..8 {
        let s = VoxelGrid::local_signs(alpha);
        for beta in 0..PSI_MODES {
            let w = |dir: usize| scale * w_times4(beta, dir, s) as f64;
            let row = beta * VOIGT;
            let col = alpha * 3;
            b[(row, col)] = w(0); // xx <- d/dx u_x
            b[(row + 1, col + 1)] = w(1); // yy
            b[(row + 2, col + 2)] = w(2); // zz
            b[(row + 3, col)] = w(1); // xy <- d/dy u_x
            b[(row + 3, col + 1)] = w(0); // xy <- d/dx u_y
            b[(row + 4, col + 1)] = w(2); // yz
            b[(row + 4, col + 2)] = w(1);
            b[(row + 5, col)] = w(2); // zx
            b[(row + 5, col + 2)] = w(0);
        }
    }
    Ok(b)
}

/// Bulk-modulus contribution to the mode-space constitutive matrix:
/// `3 * ds^3 * gram^-1 (x) dc/dkappa`, which is dimensionless.
pub fn d_kappa() -> ModeMatrix {
    kron_mode(c_kappa())
}

/// Shear-modulus contribution, `3 * ds^3 * gram^-1 (x) dc/dG`.
pub fn d_shear() -> ModeMatrix {
    kron_mode(c_shear())
}

fn kron_mode(c: SMatrix<f64, VOIGT, VOIGT>) -> ModeMatrix {
    let mut d = ModeMatrix::zeros();
    for (beta, &m) in MODE_WEIGHT.iter().enumerate() {
        let f = 3.0 * m as f64;
        for i in 0..VOIGT {
            for j in 0..VOIGT {
                d[(beta * VOIGT + i, beta * VOIGT + j)] = f * c[(i, j)];
            }
        }
    }
    d
}

/// Element stiffness `Bbar^T [gram^-1 (x) c] Bbar`, composed in FP64.
pub fn stiffness(mat: &Material, ds: f64) -> Result<ElemMatrix> {
    mat.validate()?;
    let bbar = psi_grad_phi(ds)?;
    let gram = psi_gram(ds)?;
    let c = elasticity_matrix(mat.kappa, mat.shear_g);
    let mut k = ElemMatrix::zeros();
    for beta in 0..PSI_MODES {
        let rows = bbar.fixed_rows::<VOIGT>(beta * VOIGT);
        k += rows.transpose() * (c / gram[(beta, beta)]) * rows;
    }
    Ok(k)
}

/// Exact diagonal mass: the octant indicators are orthogonal with volume
/// ds^3/8 each, so the diagonal equals the lumped-mass value without any
/// approximation.
pub fn mass(rho: f64, ds: f64) -> Result<ElemVector> {
    super::vfem::lumped_mass(rho, ds)
}

#[cfg(test)]
mod tests {
    use super::super::ELEM_DOFS;
    use super::*;
    use approx::assert_relative_eq;

    fn concrete() -> Material {
        Material::default_concrete()
    }

    #[test]
    fn gram_entries() {
        let ds = 0.002;
        let g = psi_gram(ds).unwrap();
        let vol = ds * ds * ds;
        assert_relative_eq!(g[(0, 0)], vol, max_relative = 1e-15);
        assert_relative_eq!(g[(1, 1)], vol / 3.0, max_relative = 1e-15);
        assert_relative_eq!(g[(4, 4)], vol / 9.0, max_relative = 1e-15);
        for i in 0..PSI_MODES {
            for j in 0..PSI_MODES {
                if i != j {
                    assert_eq!(g[(i, j)], 0.0);
                }
            }
        }
    }

    /// Evaluates one psi monomial at a reference point.
    fn psi(beta: usize, r: [f64; 3]) -> f64 {
        match beta {
            0 => 1.0,
            1 => r[0],
            2 => r[1],
            3 => r[2],
            4 => r[0] * r[1],
            5 => r[1] * r[2],
            6 => r[0] * r[2],
            _ => unreachable!(),
        }
    }

    fn grad_psi(beta: usize, r: [f64; 3]) -> [f64; 3] {
        match beta {
            0 => [0.0, 0.0, 0.0],
            1 => [1.0, 0.0, 0.0],
            2 => [0.0, 1.0, 0.0],
            3 => [0.0, 0.0, 1.0],
            4 => [r[1], r[0], 0.0],
            5 => [0.0, r[2], r[1]],
            6 => [r[2], 0.0, r[0]],
            _ => unreachable!(),
        }
    }

    /// Independent by-parts evaluation with numerical quadrature: surface
    /// flux over the three outer quarter-faces of the octant minus the
    /// volume integral of the psi gradient over the octant.
    fn mixed_integral_quadrature(beta: usize, dir: usize, s: [i32; 3], ds: f64) -> f64 {
        // 6-point Gauss on [0,1].
        let xs = [
            0.033_765_242_898_423_99,
            0.169_395_306_766_867_74,
            0.380_690_406_958_401_56,
            0.619_309_593_041_598_44,
            0.830_604_693_233_132_3,
            0.966_234_757_101_576,
        ];
        let ws = [
            0.085_662_246_189_585_18,
            0.180_380_786_524_069_3,
            0.233_956_967_286_345_54,
            0.233_956_967_286_345_54,
            0.180_380_786_524_069_3,
            0.085_662_246_189_585_18,
        ];
        let sf = |a: usize| s[a] as f64;
        // Surface term: only the face r_dir = s_dir of the octant carries a
        // normal along `dir`; integrate psi over its quarter-face.
        let (j, k) = match dir {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mut surf = 0.0;
        for (xj, wj) in xs.iter().zip(&ws) {
            for (xk, wk) in xs.iter().zip(&ws) {
                let mut r = [0.0; 3];
                r[dir] = sf(dir);
                r[j] = sf(j) * xj;
                r[k] = sf(k) * xk;
                surf += wj * wk * psi(beta, r);
            }
        }
        surf *= sf(dir) * (ds / 2.0) * (ds / 2.0);
        // Volume term: gradient of psi over the octant, physical gradient
        // carries 2/ds and the volume element (ds/2)^3.
        let mut vol = 0.0;
        for (x1, w1) in xs.iter().zip(&ws) {
            for (x2, w2) in xs.iter().zip(&ws) {
                for (x3, w3) in xs.iter().zip(&ws) {
                    let r = [sf(0) * x1, sf(1) * x2, sf(2) * x3];
                    vol += w1 * w2 * w3 * grad_psi(beta, r)[dir];
                }
            }
        }
        vol *= (2.0 / ds) * (ds / 2.0).powi(3);
        surf - vol
    }

    #[test]
    fn by_parts_quadrature_oracle_matches_closed_form() {
        let ds = 0.002;
        let scale = ds * ds / 4.0;
        for alpha in 0..8 {
            let s = VoxelGrid::local_signs(alpha);
            for beta in 0..PSI_MODES {
                for dir in 0..3 {
                    let closed = scale * w_times4(beta, dir, s) as f64 / 4.0;
                    let quad = mixed_integral_quadrature(beta, dir, s, ds);
                    assert!(
                        (closed - quad).abs() <= 1e-12 * scale.max(quad.abs()),
                        "beta={beta} dir={dir} alpha={alpha}: closed {closed} quad {quad}"
                    );
                }
            }
        }
    }

    #[test]
    fn partition_of_unity_columns_sum_to_zero() {
        // Sum over the 8 indicators is the constant 1, whose gradient
        // vanishes, so every (beta, dir) block must sum to zero.
        for beta in 0..PSI_MODES {
            for dir in 0..3 {
                let total: i64 = (0..8)
                    .map(|alpha| w_times4(beta, dir, VoxelGrid::local_signs(alpha)))
                    .sum();
                assert_eq!(total, 0, "beta={beta} dir={dir}");
            }
        }
    }

    #[test]
    fn bbar_scales_quadratically_in_ds() {
        let b1 = psi_grad_phi(0.001).unwrap();
        let b2 = psi_grad_phi(0.002).unwrap();
        assert!((b2 - b1 * 4.0).abs().max() <= 1e-15 * b2.abs().max());
    }

    #[test]
    fn mass_is_exactly_the_lumped_value() {
        let a = mass(2400.0, 0.002).unwrap();
        let b = super::super::vfem::lumped_mass(2400.0, 0.002).unwrap();
        assert_eq!(a, b, "same closed form, bit for bit");
        assert!(a.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn indicator_cross_products_vanish() {
        // Midpoint sampling of phi^a phi^b on a fine sub-grid: indicators
        // have disjoint supports, so any cross pair integrates to zero.
        let n = 8;
        for a in 0..8 {
            let sa = VoxelGrid::local_signs(a);
            for b in 0..8 {
                let sb = VoxelGrid::local_signs(b);
                let mut acc = 0usize;
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            let r = [
                                (i as f64 + 0.5) / n as f64 * 2.0 - 1.0,
                                (j as f64 + 0.5) / n as f64 * 2.0 - 1.0,
                                (k as f64 + 0.5) / n as f64 * 2.0 - 1.0,
                            ];
                            let ind = |s: [i32; 3]| {
                                (0..3).all(|d| s[d] as f64 * r[d] > 0.0)
                            };
                            if ind(sa) && ind(sb) {
                                acc += 1;
                            }
                        }
                    }
                }
                if a == b {
                    assert_eq!(acc, n * n * n / 8);
                } else {
                    assert_eq!(acc, 0);
                }
            }
        }
    }

    #[test]
    fn stiffness_annihilates_translations() {
        let k = stiffness(&concrete(), 0.002).unwrap();
        let scale = k.abs().max();
        for axis in 0..3 {
            let mut t = ElemVector::zeros();
            for n in 0..8 {
                t[3 * n + axis] = 1.0;
            }
            assert!((k * t).abs().max() <= 1e-10 * scale);
        }
    }

    #[test]
    fn stiffness_symmetric_and_psd() {
        let k = stiffness(&concrete(), 0.002).unwrap();
        let scale = k.abs().max();
        for i in 0..ELEM_DOFS {
            for j in 0..i {
                assert!((k[(i, j)] - k[(j, i)]).abs() <= 1e-12 * scale);
            }
        }
        let dm = nalgebra::DMatrix::from_fn(ELEM_DOFS, ELEM_DOFS, |i, j| k[(i, j)]);
        let eig = dm.symmetric_eigen();
        let max_ev = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        for ev in eig.eigenvalues.iter() {
            assert!(*ev >= -1e-10 * max_ev, "eigenvalue {ev} vs max {max_ev}");
        }
    }

    #[test]
    fn stiffness_scales_linearly_in_ds() {
        let k1 = stiffness(&concrete(), 0.003).unwrap();
        let k2 = stiffness(&concrete(), 0.006).unwrap();
        assert!((k2 - k1 * 2.0).abs().max() <= 1e-12 * k2.abs().max());
    }

    #[test]
    fn rotation_residual_is_measured_not_asserted() {
        // Linearized rotation about z: u = (y, -x, 0) sampled at nodes.
        let ds = 0.002;
        let k_o = stiffness(&concrete(), ds).unwrap();
        let k_v = super::super::vfem::stiffness(&concrete(), ds).unwrap();
        let mut u = ElemVector::zeros();
        for local in 0..8 {
            let s = VoxelGrid::local_signs(local);
            u[3 * local] = 0.5 * ds * s[1] as f64;
            u[3 * local + 1] = -0.5 * ds * s[0] as f64;
        }
        let r_o = (k_o * u).abs().max() / (k_o.abs().max() * u.abs().max());
        let r_v = (k_v * u).abs().max() / (k_v.abs().max() * u.abs().max());
        println!("rotation-mode residual: orthogonal-basis {r_o:.3e}, trilinear {r_v:.3e}");
        assert!(r_o.is_finite() && r_v.is_finite());
    }
}
