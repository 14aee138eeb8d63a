//! Integer-expansion matrix-vector pipeline.
//!
//! An element right-hand-side vector (48 FP64 values) is scaled by its max
//! magnitude, truncated to 64-bit integers with `a = 2^(7*M)` (2^56 for the
//! default M = 8 stages), and split into M signed base-128 digit slices.
//! The constant 24x48 integer kernel then multiplies one digit slice of 32
//! elements at a time as a (24x48)x(48x32) 8-bit integer matrix product,
//! decomposed into nine (8x16)x(16x32) tiles with 32-bit accumulators.
//! Stage results are combined exactly in a 128-bit accumulator and scaled
//! back once per output component.
//!
//! Every integer step is exact, so the tiled product is bitwise equal to a
//! naive 64-bit product and the only approximation in the whole pipeline is
//! the initial truncation of the scaled input.

use crate::error::{CoreError, Result};

/// Element vector length (24 dofs + 24 augmented dofs).
pub const VEC_LEN: usize = 48;
/// Output rows of the element kernel.
pub const OUT_ROWS: usize = 24;
/// Elements processed together as the columns of one matrix product.
pub const BLOCK_ELEMS: usize = 32;
/// Digit base `b = 2^7`.
pub const DIGIT_BASE: i64 = 128;
/// Maximum (and default) number of digit stages; `b^8 = 2^56`.
pub const MAX_STAGES: usize = 8;

/// Truncation scale for a given stage count: `a = b^M = 2^(7M)`.
pub fn scale_constant(stages: usize) -> f64 {
    debug_assert!((1..=MAX_STAGES).contains(&stages));
    (1u64 << (7 * stages as u32)) as f64
}

/// Scales a vector by its maximum magnitude so every component lies in
/// [-1, 1]. Returns the scale and the scaled vector; an all-zero input
/// short-circuits with scale 0.
pub fn scale_vector(u: &[f64; VEC_LEN]) -> Result<(f64, [f64; VEC_LEN])> {
    let mut s = 0.0f64;
    for &x in u {
        if !x.is_finite() {
            return Err(CoreError::InvalidInput(format!("non-finite component {x}")));
        }
        s = s.max(x.abs());
    }
    if s == 0.0 {
        return Ok((0.0, [0.0; VEC_LEN]));
    }
    let mut out = [0.0; VEC_LEN];
    for (o, &x) in out.iter_mut().zip(u) {
        *o = x / s;
    }
    Ok((s, out))
}

/// Componentwise truncation toward zero of `a * u`, clamped to
/// `+-(a - 1)` so the result always fits the digit budget.
pub fn to_int64(u_scaled: &[f64; VEC_LEN], a: f64) -> [i64; VEC_LEN] {
    let limit = a as i64 - 1;
    let mut v = [0i64; VEC_LEN];
    for (o, &x) in v.iter_mut().zip(u_scaled) {
        // Multiplication by a power of two is exact; trunc() implements
        // the toward-zero integer conversion.
        let t = (a * x).trunc() as i64;
        *o = t.clamp(-limit, limit);
    }
    v
}

/// Splits `v` into `stages` signed base-128 digits, least significant
/// first: `sum_j b^(j-1) d_j = v` exactly with every digit in [-127, 127].
/// Digits of a negative value are the negated digits of its magnitude.
pub fn digit_decompose(v: i64, stages: usize) -> Result<[i8; MAX_STAGES]> {
    let limit = 1i64 << (7 * stages as u32);
    if v.abs() >= limit {
        return Err(CoreError::InvalidInput(format!(
            "|{v}| >= b^{stages}, not representable in {stages} digits"
        )));
    }
    let mut digits = [0i8; MAX_STAGES];
    let sign = v >> 63; // all ones for negative v
    let av = (v ^ sign) - sign;
    for (j, d) in digits.iter_mut().take(stages).enumerate() {
        let raw = (av >> (7 * j as u32)) & 127;
        *d = ((raw ^ sign) - sign) as i8;
    }
    Ok(digits)
}

/// Reconstructs the value of a digit slice; test oracle for
/// [`digit_decompose`].
pub fn digit_reconstruct(digits: &[i8]) -> i64 {
    digits
        .iter()
        .enumerate()
        .map(|(j, &d)| (d as i64) << (7 * j as u32))
        .sum()
}

/// Scale factor, integer image, and digit slices of one element vector.
#[derive(Debug, Clone)]
pub struct DigitExpansion {
    /// Max-magnitude scale `s_e`; zero short-circuits the whole product.
    pub scale: f64,
    /// Truncated integer image of the scaled vector.
    pub v64: [i64; VEC_LEN],
    /// `digits[j][k]` is digit j (least significant first) of component k.
    pub digits: [[i8; VEC_LEN]; MAX_STAGES],
    pub stages: usize,
}

impl DigitExpansion {
    pub fn expand(u_bar: &[f64; VEC_LEN], stages: usize) -> Result<Self> {
        if !(1..=MAX_STAGES).contains(&stages) {
            return Err(CoreError::InvalidInput(format!(
                "stage count {stages} outside 1..={MAX_STAGES}"
            )));
        }
        let (scale, scaled) = scale_vector(u_bar)?;
        let mut out = DigitExpansion {
            scale,
            v64: [0; VEC_LEN],
            digits: [[0; VEC_LEN]; MAX_STAGES],
            stages,
        };
        if scale == 0.0 {
            return Ok(out);
        }
        out.v64 = to_int64(&scaled, scale_constant(stages));
        for (k, &v) in out.v64.iter().enumerate() {
            let d = digit_decompose(v, stages)?;
            for j in 0..stages {
                out.digits[j][k] = d[j];
            }
        }
        Ok(out)
    }
}

/// 24x48 A operand in row-major i8.
pub type MatA = [[i8; VEC_LEN]; OUT_ROWS];
/// 48x32 B operand in row-major i8.
pub type MatB = [[i8; BLOCK_ELEMS]; VEC_LEN];
/// 24x32 C result in row-major i32.
pub type MatC = [[i32; BLOCK_ELEMS]; OUT_ROWS];

/// A operand prepared for the pairwise multiply-accumulate kernels: entry
/// pairs along k widened to i16, plus the same pairs packed little-endian
/// into one i32 each for the SIMD broadcasts.
#[derive(Debug, Clone)]
pub struct PreparedA {
    pairs: [[[i16; 2]; VEC_LEN / 2]; OUT_ROWS],
    packed: [[i32; VEC_LEN / 2]; OUT_ROWS],
}

impl PreparedA {
    pub fn new(a: &MatA) -> Self {
        let mut pairs = [[[0i16; 2]; VEC_LEN / 2]; OUT_ROWS];
        let mut packed = [[0i32; VEC_LEN / 2]; OUT_ROWS];
        for r in 0..OUT_ROWS {
            for p in 0..VEC_LEN / 2 {
                let lo = a[r][2 * p] as i16;
                let hi = a[r][2 * p + 1] as i16;
                pairs[r][p] = [lo, hi];
                packed[r][p] = (lo as u16 as u32 | ((hi as u16 as u32) << 16)) as i32;
            }
        }
        PreparedA { pairs, packed }
    }
}

/// B operand packed for the pairwise kernels: for k-pair p and column n,
/// `buf[p*64 + 2n]` holds `B[2p][n]` and `buf[p*64 + 2n + 1]` holds
/// `B[2p+1][n]`, widened to i16.
pub type PackedB = [i16; (VEC_LEN / 2) * 2 * BLOCK_ELEMS];

pub fn pack_b(b: &MatB) -> Box<PackedB> {
    let mut buf = Box::new([0i16; (VEC_LEN / 2) * 2 * BLOCK_ELEMS]);
    for p in 0..VEC_LEN / 2 {
        for n in 0..BLOCK_ELEMS {
            buf[p * 64 + 2 * n] = b[2 * p][n] as i16;
            buf[p * 64 + 2 * n + 1] = b[2 * p + 1][n] as i16;
        }
    }
    buf
}

/// Which multiply-accumulate implementation is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmaPath {
    Scalar,
    Avx2,
    Avx512,
}

pub fn detect_mma_path() -> MmaPath {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512bw") {
            return MmaPath::Avx512;
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            return MmaPath::Avx2;
        }
    }
    MmaPath::Scalar
}

/// One (8x16)x(16x32) tile product accumulated into an 8x32 slice of C.
/// `row0` selects the A row tile, `ktile` the shared k tile.
#[inline]
fn mma_tile_scalar(a: &PreparedA, b: &PackedB, c: &mut MatC, row0: usize, ktile: usize) {
    for i in 0..8 {
        let arow = &a.pairs[row0 + i];
        let crow = &mut c[row0 + i];
        for p in 8 * ktile..8 * ktile + 8 {
            let [alo, ahi] = arow[p];
            let base = p * 64;
            for n in 0..BLOCK_ELEMS {
                crow[n] += alo as i32 * b[base + 2 * n] as i32
                    + ahi as i32 * b[base + 2 * n + 1] as i32;
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod simd {
    use super::{MatC, PackedB, PreparedA};

    #[target_feature(enable = "avx2")]
    pub unsafe fn mma_tile_avx2(
        a: &PreparedA,
        b: &PackedB,
        c: &mut MatC,
        row0: usize,
        ktile: usize,
    ) {
        use std::arch::x86_64::*;
        for i in 0..8 {
            let apack = &a.packed[row0 + i];
            let crow = c[row0 + i].as_mut_ptr() as *mut __m256i;
            let mut acc = [
                _mm256_loadu_si256(crow),
                _mm256_loadu_si256(crow.add(1)),
                _mm256_loadu_si256(crow.add(2)),
                _mm256_loadu_si256(crow.add(3)),
            ];
            for p in 8 * ktile..8 * ktile + 8 {
                let av = _mm256_set1_epi32(apack[p]);
                let bp = b.as_ptr().add(p * 64) as *const __m256i;
                for (v, slot) in acc.iter_mut().enumerate() {
                    let prod = _mm256_madd_epi16(av, _mm256_loadu_si256(bp.add(v)));
                    *slot = _mm256_add_epi32(*slot, prod);
                }
            }
            for (v, slot) in acc.iter().enumerate() {
                _mm256_storeu_si256(crow.add(v), *slot);
            }
        }
    }

    #[target_feature(enable = "avx512bw")]
    pub unsafe fn mma_tile_avx512(
        a: &PreparedA,
        b: &PackedB,
        c: &mut MatC,
        row0: usize,
        ktile: usize,
    ) {
        use std::arch::x86_64::*;
        for i in 0..8 {
            let apack = &a.packed[row0 + i];
            let crow = c[row0 + i].as_mut_ptr();
            let mut acc0 = _mm512_loadu_si512(crow as *const _);
            let mut acc1 = _mm512_loadu_si512(crow.add(16) as *const _);
            for p in 8 * ktile..8 * ktile + 8 {
                let av = _mm512_set1_epi32(apack[p]);
                let bp = b.as_ptr().add(p * 64);
                let b0 = _mm512_loadu_si512(bp as *const _);
                let b1 = _mm512_loadu_si512(bp.add(32) as *const _);
                acc0 = _mm512_add_epi32(acc0, _mm512_madd_epi16(av, b0));
                acc1 = _mm512_add_epi32(acc1, _mm512_madd_epi16(av, b1));
            }
            _mm512_storeu_si512(crow as *mut _, acc0);
            _mm512_storeu_si512(crow.add(16) as *mut _, acc1);
        }
    }
}

#[inline]
fn mma_tile(path: MmaPath, a: &PreparedA, b: &PackedB, c: &mut MatC, row0: usize, ktile: usize) {
    match path {
        MmaPath::Scalar => mma_tile_scalar(a, b, c, row0, ktile),
        #[cfg(target_arch = "x86_64")]
        MmaPath::Avx2 => unsafe { simd::mma_tile_avx2(a, b, c, row0, ktile) },
        #[cfg(target_arch = "x86_64")]
        MmaPath::Avx512 => unsafe { simd::mma_tile_avx512(a, b, c, row0, ktile) },
        #[cfg(not(target_arch = "x86_64"))]
        _ => mma_tile_scalar(a, b, c, row0, ktile),
    }
}

/// Exact (24x48)x(48x32) 8-bit integer product with 32-bit accumulation,
/// decomposed into nine (8x16)x(16x32) tile products. Per output entry at
/// most 48 i8*i8 terms accumulate, bounded by 48*127*128 < 2^20, so i32
/// overflow is impossible.
pub fn tiled_int8_matmul(a: &MatA, b: &MatB) -> Box<MatC> {
    let prepared = PreparedA::new(a);
    let packed = pack_b(b);
    let path = detect_mma_path();
    let mut c = Box::new([[0i32; BLOCK_ELEMS]; OUT_ROWS]);
    for row_tile in 0..3 {
        for ktile in 0..3 {
            mma_tile(path, &prepared, &packed, &mut c, 8 * row_tile, ktile);
        }
    }
    c
}

/// Per-stage digit matrices of one block, kept in the packed kernel
/// layout, with the per-column scale factors.
pub struct BlockDigits {
    packed: [Box<PackedB>; MAX_STAGES],
    scales: [f64; BLOCK_ELEMS],
    stages: usize,
    any_nonzero: bool,
}

impl BlockDigits {
    pub fn new(stages: usize) -> Self {
        BlockDigits {
            packed: std::array::from_fn(|_| Box::new([0i16; (VEC_LEN / 2) * 2 * BLOCK_ELEMS])),
            scales: [0.0; BLOCK_ELEMS],
            stages,
            any_nonzero: false,
        }
    }

    pub fn clear(&mut self) {
        for p in self.packed.iter_mut().take(self.stages) {
            p.fill(0);
        }
        self.scales = [0.0; BLOCK_ELEMS];
        self.any_nonzero = false;
    }

    /// Extracts the digit slices of a scaled integer image straight into
    /// the packed layout of column `slot`. A zero scale leaves the column
    /// empty (padded or short-circuited slot).
    pub fn set_column(&mut self, slot: usize, scale: f64, v64: &[i64; VEC_LEN]) {
        self.scales[slot] = scale;
        if scale == 0.0 {
            return;
        }
        self.any_nonzero = true;
        for (k, &v) in v64.iter().enumerate() {
            let sign = v >> 63;
            let av = (v ^ sign) - sign;
            let dst = (k / 2) * 64 + 2 * slot + (k & 1);
            for j in 0..self.stages {
                let raw = (av >> (7 * j as u32)) & 127;
                self.packed[j][dst] = ((raw ^ sign) - sign) as i16;
            }
        }
    }

    pub fn set_column_expansion(&mut self, slot: usize, exp: &DigitExpansion) {
        debug_assert_eq!(exp.stages, self.stages);
        self.set_column(slot, exp.scale, &exp.v64);
    }
}

/// Reusable buffers for the staged product of one block.
pub struct StagedWorkspace {
    c: Box<MatC>,
    wide: Box<[[i128; BLOCK_ELEMS]; OUT_ROWS]>,
    path: MmaPath,
}

impl Default for StagedWorkspace {
    fn default() -> Self {
        StagedWorkspace {
            c: Box::new([[0; BLOCK_ELEMS]; OUT_ROWS]),
            wide: Box::new([[0; BLOCK_ELEMS]; OUT_ROWS]),
            path: detect_mma_path(),
        }
    }
}

impl StagedWorkspace {
    /// Runs the staged product `sum_j b^(j-1) * (A x B_j)` into the wide
    /// accumulator and writes the rescaled FP64 results as `out[slot][row]`.
    /// Returns false (leaving zeros) when every column scale is zero and no
    /// product was executed.
    ///
    /// The prepared A tiles are reused across the stage loop, and the i32
    /// tile accumulators are flushed into the wide buffer after each group
    /// of 3 k-tiles.
    pub fn run(
        &mut self,
        a: &PreparedA,
        digits: &BlockDigits,
        out: &mut [[f64; OUT_ROWS]; BLOCK_ELEMS],
    ) -> bool {
        for col in out.iter_mut() {
            col.fill(0.0);
        }
        if !digits.any_nonzero {
            return false;
        }
        for row in self.wide.iter_mut() {
            row.fill(0);
        }
        for j in 0..digits.stages {
            let shift = 7 * j as u32;
            let b = &digits.packed[j];
            for row_tile in 0..3 {
                let row0 = 8 * row_tile;
                for r in row0..row0 + 8 {
                    self.c[r].fill(0);
                }
                for ktile in 0..3 {
                    mma_tile(self.path, a, b, &mut self.c, row0, ktile);
                }
                // Flush the 32-bit tile into the wide accumulator.
                for r in row0..row0 + 8 {
                    for n in 0..BLOCK_ELEMS {
                        self.wide[r][n] += (self.c[r][n] as i128) << shift;
                    }
                }
            }
        }
        let inv_a = 1.0 / scale_constant(digits.stages);
        for (n, col) in out.iter_mut().enumerate() {
            let s = digits.scales[n];
            if s == 0.0 {
                continue;
            }
            let factor = s * inv_a; // exact power-of-two scaling of s
            for (r, o) in col.iter_mut().enumerate() {
                *o = self.wide[r][n] as f64 * factor;
            }
        }
        true
    }

    /// FP64-accumulation variant: stage results are converted to FP64 and
    /// added most-significant stage first instead of using the exact wide
    /// accumulator. Mirrors accumulation through a finite hardware buffer;
    /// the test suite quantifies its deviation from the exact path.
    pub fn run_f64_accum(
        &mut self,
        a: &PreparedA,
        digits: &BlockDigits,
        out: &mut [[f64; OUT_ROWS]; BLOCK_ELEMS],
    ) -> bool {
        for col in out.iter_mut() {
            col.fill(0.0);
        }
        if !digits.any_nonzero {
            return false;
        }
        let mut acc = [[0.0f64; BLOCK_ELEMS]; OUT_ROWS];
        for j in (0..digits.stages).rev() {
            let weight = (1u64 << (7 * j as u32)) as f64;
            let b = &digits.packed[j];
            for row in self.c.iter_mut() {
                row.fill(0);
            }
            for row_tile in 0..3 {
                for ktile in 0..3 {
                    mma_tile(self.path, a, b, &mut self.c, 8 * row_tile, ktile);
                }
            }
            for r in 0..OUT_ROWS {
                for n in 0..BLOCK_ELEMS {
                    acc[r][n] += self.c[r][n] as f64 * weight;
                }
            }
        }
        let inv_a = 1.0 / scale_constant(digits.stages);
        for (n, col) in out.iter_mut().enumerate() {
            let s = digits.scales[n];
            if s == 0.0 {
                continue;
            }
            for (r, o) in col.iter_mut().enumerate() {
                *o = acc[r][n] * (s * inv_a);
            }
        }
        true
    }
}

/// Staged matrix-vector product for up to 32 element expansions sharing
/// one kernel. Returns `out[slot][row]` in FP64.
pub fn staged_matvec(
    kernel: &MatA,
    expansions: &[DigitExpansion],
) -> Result<Box<[[f64; OUT_ROWS]; BLOCK_ELEMS]>> {
    if expansions.is_empty() || expansions.len() > BLOCK_ELEMS {
        return Err(CoreError::InvalidInput(format!(
            "expected 1..=32 expansions, got {}",
            expansions.len()
        )));
    }
    let stages = expansions[0].stages;
    if expansions.iter().any(|e| e.stages != stages) {
        return Err(CoreError::InvalidInput("mixed stage counts in one block".into()));
    }
    let mut digits = BlockDigits::new(stages);
    for (slot, exp) in expansions.iter().enumerate() {
        digits.set_column_expansion(slot, exp);
    }
    let prepared = PreparedA::new(kernel);
    let mut ws = StagedWorkspace::default();
    let mut out = Box::new([[0.0; OUT_ROWS]; BLOCK_ELEMS]);
    ws.run(&prepared, &digits, &mut out);
    Ok(out)
}
