//! Trilinear voxel element: stiffness by Gauss quadrature and lumped mass.
//!
//! The basis for node `beta` with octant signs `a` is
//! `phi = 1/8 (1 + a1 r1)(1 + a2 r2)(1 + a3 r3)` on the reference cube
//! `[-1,1]^3`; physical coordinates are `x_i = ds/2 * r_i` from the element
//! center, so gradients carry a factor `2/ds` and the Jacobian determinant
//! is `(ds/2)^3`.

use super::{elasticity_matrix, ElemMatrix, ElemVector, ELEM_DOFS, VOIGT};
use crate::error::{CoreError, Result};
use crate::voxel::{Material, VoxelGrid};
use nalgebra::SMatrix;

/// Gauss-Legendre abscissae/weights on [-1, 1].
fn gauss_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    match n {
        2 => {
            let x = 1.0 / 3.0_f64.sqrt();
            (vec![-x, x], vec![1.0, 1.0])
        }
        5 => (
            vec![
                -0.906_179_845_938_664_0,
                -0.538_469_310_105_683_1,
                0.0,
                0.538_469_310_105_683_1,
                0.906_179_845_938_664_0,
            ],
            vec![
                0.236_926_885_056_189_08,
                0.478_628_670_499_366_47,
                0.568_888_888_888_888_9,
                0.478_628_670_499_366_47,
                0.236_926_885_056_189_08,
            ],
        ),
        _ => unreachable!("unsupported rule"),
    }
}

/// Physical gradient of the trilinear basis of local node `local` at
/// reference point `r`.
fn grad_phi(local: usize, r: [f64; 3], ds: f64) -> [f64; 3] {
    let a = VoxelGrid::local_signs(local);
    let f = [
        1.0 + a[0] as f64 * r[0],
        1.0 + a[1] as f64 * r[1],
        1.0 + a[2] as f64 * r[2],
    ];
    let scale = 2.0 / ds / 8.0;
    [
        scale * a[0] as f64 * f[1] * f[2],
        scale * a[1] as f64 * f[0] * f[2],
        scale * a[2] as f64 * f[0] * f[1],
    ]
}

pub(crate) fn stiffness_gauss(mat: &Material, ds: f64, points: usize) -> ElemMatrix {
    let c = elasticity_matrix(mat.kappa, mat.shear_g);
    let (xs, ws) = gauss_rule(points);
    let det_j = (ds / 2.0).powi(3);
    let mut k = ElemMatrix::zeros();
    for (ix, &rx) in xs.iter().enumerate() {
        for (iy, &ry) in xs.iter().enumerate() {
            for (iz, &rz) in xs.iter().enumerate() {
                let w = ws[ix] * ws[iy] * ws[iz] * det_j;
                let mut b = SMatrix::<f64, VOIGT, ELEM_DOFS>::zeros();
                for local in 0..8 {
                    let g = grad_phi(local, [rx, ry, rz], ds);
                    let col = 3 * local;
                    b[(0, col)] = g[0];
                    b[(1, col + 1)] = g[1];
                    b[(2, col + 2)] = g[2];
                    b[(3, col)] = g[1];
                    b[(3, col + 1)] = g[0];
                    b[(4, col + 1)] = g[2];
                    b[(4, col + 2)] = g[1];
                    b[(5, col)] = g[2];
                    b[(5, col + 2)] = g[0];
                }
                k += b.transpose() * c * b * w;
            }
        }
    }
    k
}

/// Trilinear hexahedral stiffness via 2x2x2 Gauss quadrature, which is
/// exact for the cube element.
pub fn stiffness(mat: &Material, ds: f64) -> Result<ElemMatrix> {
    mat.validate()?;
    if !(ds > 0.0 && ds.is_finite()) {
        return Err(CoreError::InvalidInput(format!("ds must be > 0, got {ds}")));
    }
    Ok(stiffness_gauss(mat, ds, 2))
}

/// Lumped mass diagonal: every entry is rho*ds^3/8.
pub fn lumped_mass(rho: f64, ds: f64) -> Result<ElemVector> {
    if !(rho > 0.0 && ds > 0.0) {
        return Err(CoreError::InvalidInput(format!(
            "rho and ds must be > 0, got rho={rho} ds={ds}"
        )));
    }
    Ok(ElemVector::repeat(rho * ds * ds * ds / 8.0))
}

/// Integer decomposition of the exact trilinear stiffness:
/// `K = ds * (kappa * MK + G * MG) / 432`.
///
/// Derived from the closed-form gradient-product integrals
/// `(d_i phi^a, d_j phi^b) = ds * H_ij(a,b) / 144` with
/// `H_ii = a_i b_i (3+s_j)(3+s_k)` and `H_ij = 3 a_i b_j (3+s_m)` for
/// `i != j`, where `s_m = a_m b_m` and `m` is the remaining axis.
pub(crate) fn exact_integer_parts() -> (Box<[[i64; 24]; 24]>, Box<[[i64; 24]; 24]>) {
    fn h(i: usize, j: usize, a: [i32; 3], b: [i32; 3]) -> i64 {
        if i == j {
            let mut prod = (a[i] * b[i]) as i64;
            for k in 0..3 {
                if k != i {
                    prod *= (3 + a[k] * b[k]) as i64;
                }
            }
            prod
        } else {
            let m = 3 - i - j;
            3 * (a[i] * b[j]) as i64 * (3 + a[m] * b[m]) as i64
        }
    }
    let mut mk = Box::new([[0i64; 24]; 24]);
    let mut mg = Box::new([[0i64; 24]; 24]);
    for alpha in 0..8 {
        let a = VoxelGrid::local_signs(alpha);
        for beta in 0..8 {
            let b = VoxelGrid::local_signs(beta);
            let h_tr: i64 = (0..3).map(|k| h(k, k, a, b)).sum();
            for d in 0..3 {
                for dp in 0..3 {
                    let row = 3 * alpha + d;
                    let col = 3 * beta + dp;
                    let h_a = h(d, dp, a, b);
                    let h_b = h(dp, d, a, b);
                    mk[row][col] = 3 * h_a;
                    mg[row][col] = -2 * h_a + 3 * h_b + if d == dp { 3 * h_tr } else { 0 };
                }
            }
        }
    }
    (mk, mg)
}
