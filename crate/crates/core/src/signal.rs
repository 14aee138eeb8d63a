//! Band-limited impulse synthesis, the channel-averaged relative waveform
//! misfit, and energy diagnostics.

use crate::element::KernelSet;
use crate::error::{CoreError, Result};
use crate::integrate::SimState;
use crate::matvec::{self, ElementBlock, StiffnessKind};
use crate::voxel::{Axis, VoxelGrid};
use rustfft::{num_complex::Complex, FftPlanner};

/// A sampled force signal with its band metadata.
#[derive(Debug, Clone)]
pub struct SourceSignal {
    pub samples: Vec<f64>,
    pub dt: f64,
    pub t_center: f64,
    pub band_hz: (f64, f64),
}

/// Difference-of-sincs band-pass impulse, Hann-windowed with half-width
/// `4 / f_lo` around the center time and normalized to unit peak:
/// `h(t) = 2 f_hi sinc(2 f_hi tau) - 2 f_lo sinc(2 f_lo tau)`.
pub fn bandlimited_impulse(
    t_center: f64,
    f_lo: f64,
    f_hi: f64,
    dt: f64,
    n: usize,
) -> Result<SourceSignal> {
    if !(f_lo > 0.0 && f_hi > f_lo) {
        return Err(CoreError::InvalidInput(format!(
            "need 0 < f_lo < f_hi, got {f_lo} {f_hi}"
        )));
    }
    if f_hi >= 0.5 / dt {
        return Err(CoreError::InvalidInput(format!(
            "f_hi = {f_hi} violates the Nyquist limit {}",
            0.5 / dt
        )));
    }
    if !(0.0..=n as f64 * dt).contains(&t_center) {
        return Err(CoreError::InvalidInput(format!(
            "center time {t_center} outside the sampled window"
        )));
    }
    let sinc = |x: f64| {
        if x == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        }
    };
    let half_width = 4.0 / f_lo;
    let mut samples = Vec::with_capacity(n);
    let mut peak = 0.0f64;
    for i in 0..n {
        let tau = i as f64 * dt - t_center;
        let h = if tau.abs() >= half_width {
            0.0
        } else {
            let window = 0.5 * (1.0 + (std::f64::consts::PI * tau / half_width).cos());
            (2.0 * f_hi * sinc(2.0 * f_hi * tau) - 2.0 * f_lo * sinc(2.0 * f_lo * tau)) * window
        };
        peak = peak.max(h.abs());
        samples.push(h);
    }
    if peak > 0.0 {
        for s in samples.iter_mut() {
            *s /= peak;
        }
    }
    Ok(SourceSignal {
        samples,
        dt,
        t_center,
        band_hz: (f_lo, f_hi),
    })
}

/// Fraction of spectral energy inside `[lo_hz, hi_hz]`.
pub fn spectral_energy_fraction(samples: &[f64], dt: f64, lo_hz: f64, hi_hz: f64) -> f64 {
    let n = samples.len();
    if n == 0 {
        return 0.0;
    }
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = 1.0 / (n as f64 * dt);
    let mut total = 0.0;
    let mut in_band = 0.0;
    for (k, c) in buf.iter().enumerate().take(n / 2 + 1) {
        let f = k as f64 * df;
        let p = c.norm_sqr();
        total += p;
        if (lo_hz..=hi_hz).contains(&f) {
            in_band += p;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        in_band / total
    }
}

/// Frequency of the spectral magnitude peak.
pub fn spectral_peak_hz(samples: &[f64], dt: f64) -> f64 {
    let n = samples.len();
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = 1.0 / (n as f64 * dt);
    let mut best = (0usize, 0.0f64);
    for (k, c) in buf.iter().enumerate().take(n / 2 + 1) {
        let p = c.norm_sqr();
        if p > best.1 {
            best = (k, p);
        }
    }
    best.0 as f64 * df
}

/// Per-channel displacement traces; channel = (observer label, axis).
#[derive(Debug, Clone)]
pub struct WaveformSet {
    pub channels: Vec<(String, Axis)>,
    pub data: Vec<Vec<f64>>,
    /// Sample spacing of the stored traces in seconds.
    pub dt: f64,
}

impl WaveformSet {
    pub fn n_samples(&self) -> usize {
        self.data.first().map(|d| d.len()).unwrap_or(0)
    }

    pub fn peak_amplitude(&self) -> f64 {
        self.data
            .iter()
            .flatten()
            .fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}

/// Channel-averaged relative misfit:
/// `Err = 1/n_c sum_i [ sum_j (obs_ij - ref_ij)^2 / sum_j ref_ij^2 ]`.
///
/// Channels are matched by (label, axis). When the reference is sampled at
/// an integer multiple of the observed rate (or vice versa), the finer set
/// is decimated; non-integer rate ratios are rejected. A reference channel
/// with zero energy is rejected.
pub fn err_metric(obs: &WaveformSet, reference: &WaveformSet) -> Result<f64> {
    if obs.channels.len() != reference.channels.len() {
        return Err(CoreError::ChannelMismatch(format!(
            "{} observed vs {} reference channels",
            obs.channels.len(),
            reference.channels.len()
        )));
    }
    // Decimation factors to bring both to the coarser timeline.
    let ratio = obs.dt / reference.dt;
    let (obs_step, ref_step) = if (ratio - ratio.round()).abs() < 1e-9 && ratio >= 1.0 {
        (1usize, ratio.round() as usize)
    } else {
        let inv = reference.dt / obs.dt;
        if (inv - inv.round()).abs() < 1e-9 && inv >= 1.0 {
            (inv.round() as usize, 1usize)
        } else {
            return Err(CoreError::ChannelMismatch(format!(
                "sample rates are not integer multiples: {} vs {}",
                obs.dt, reference.dt
            )));
        }
    };
    let mut total = 0.0;
    for (label, axis) in &obs.channels {
        let ci = obs
            .channels
            .iter()
            .position(|(l, a)| l == label && a == axis)
            .unwrap();
        let ri = reference
            .channels
            .iter()
            .position(|(l, a)| l == label && a == axis)
            .ok_or_else(|| {
                CoreError::ChannelMismatch(format!("reference lacks channel {label}/{}", axis.name()))
            })?;
        let o = &obs.data[ci];
        let r = &reference.data[ri];
        let n = (o.len() / obs_step).min(r.len() / ref_step);
        if n == 0 {
            return Err(CoreError::ChannelMismatch("empty channel".into()));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..n {
            let ov = o[(j + 1) * obs_step - 1];
            let rv = r[(j + 1) * ref_step - 1];
            num += (ov - rv) * (ov - rv);
            den += rv * rv;
        }
        if den == 0.0 {
            return Err(CoreError::ChannelMismatch(format!(
                "reference channel {label}/{} has zero energy",
                axis.name()
            )));
        }
        total += num / den;
    }
    Ok(total / obs.channels.len() as f64)
}

/// Kinetic and strain energy of the current state: kinetic from the
/// midpoint velocity `(u - u_prev)/dt`, strain from the midpoint
/// displacement `(u + u_prev)/2`.
pub fn energy(
    state: &SimState,
    grid: &VoxelGrid,
    kernels: &KernelSet,
    blocks: &[ElementBlock],
    kind: StiffnessKind,
    mass: &[f64],
    dt: f64,
) -> Result<(f64, f64)> {
    let n = state.u_curr.len();
    let mut v = vec![0.0; n];
    let mut um = vec![0.0; n];
    for i in 0..n {
        v[i] = (state.u_curr[i] - state.u_prev[i]) / dt;
        um[i] = 0.5 * (state.u_curr[i] + state.u_prev[i]);
    }
    let kinetic: f64 = 0.5
        * v.iter()
            .zip(mass)
            .map(|(&vi, &mi)| mi * vi * vi)
            .sum::<f64>();
    let ku = matvec::matvec_fp64(grid, kernels, blocks, &um, kind)?;
    let strain: f64 = 0.5 * um.iter().zip(&ku).map(|(&a, &b)| a * b).sum::<f64>();
    Ok((kinetic, strain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::Axis;

    #[test]
    fn impulse_peaks_at_center_and_shifts() {
        let dt = 5e-8;
        let sig = bandlimited_impulse(4.096e-4, 1.0e5, 1.25e5, dt, 16384).unwrap();
        let argmax = sig
            .samples
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0;
        let t_peak = argmax as f64 * dt;
        assert!((t_peak - 4.096e-4).abs() <= 0.01 * 4.096e-4, "peak at {t_peak}");

        let shifted = bandlimited_impulse(4.096e-4 + 10.0 * dt, 1.0e5, 1.25e5, dt, 16384).unwrap();
        let argmax2 = shifted
            .samples
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0;
        assert_eq!(argmax2, argmax + 10);
    }

    #[test]
    fn impulse_spectrum_is_in_band() {
        let dt = 5e-8;
        let sig = bandlimited_impulse(4.096e-4, 1.0e5, 1.25e5, dt, 16384).unwrap();
        let peak = spectral_peak_hz(&sig.samples, dt);
        assert!(
            (1.0e5..=1.25e5).contains(&peak),
            "spectral peak {peak} outside band"
        );
        let frac = spectral_energy_fraction(&sig.samples, dt, 0.5e5, 1.875e5);
        assert!(frac >= 0.95, "in-band energy fraction {frac}");
    }

    #[test]
    fn spectral_concentration_over_parameter_sweep() {
        for &(f_lo, f_hi, dt) in &[
            (1.0e5, 1.25e5, 5.0e-8),
            (0.5e5, 1.0e5, 1.0e-7),
            (2.0e4, 6.0e4, 2.0e-7),
        ] {
            let t_c = 6.0 / f_lo;
            let n = (2.5 * t_c / dt) as usize;
            let sig = bandlimited_impulse(t_c, f_lo, f_hi, dt, n).unwrap();
            let frac = spectral_energy_fraction(&sig.samples, dt, 0.5 * f_lo, 1.5 * f_hi);
            assert!(frac >= 0.95, "fraction {frac} for band {f_lo}..{f_hi}");
        }
    }

    #[test]
    fn low_f_lo_limit_is_a_lowpass_pulse() {
        let dt = 1e-7;
        let sig = bandlimited_impulse(2e-3, 1.0e3, 1.0e5, dt, 40000).unwrap();
        let argmax = sig
            .samples
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0;
        assert!((argmax as f64 * dt - 2e-3).abs() < 1e-5);
        assert_eq!(sig.samples[argmax].abs(), 1.0, "unit peak normalization");
    }

    #[test]
    fn nyquist_violation_rejected() {
        assert!(bandlimited_impulse(1e-4, 1e5, 1.25e7, 5e-8, 1000).is_err());
    }

    fn wave(dt: f64, data: Vec<Vec<f64>>) -> WaveformSet {
        WaveformSet {
            channels: (0..data.len())
                .map(|i| (format!("c{i}"), Axis::X))
                .collect(),
            data,
            dt,
        }
    }

    #[test]
    fn err_metric_identities() {
        let a = wave(1.0, vec![vec![1.0, 2.0, 3.0], vec![0.5, -0.25, 4.0]]);
        assert_eq!(err_metric(&a, &a).unwrap(), 0.0);

        let zeros = wave(1.0, vec![vec![0.0; 3], vec![0.0; 3]]);
        assert_eq!(err_metric(&zeros, &a).unwrap(), 1.0);

        // Uniform scaling by 1.1: each channel contributes (0.1)^2 = 0.01.
        let scaled = wave(
            1.0,
            a.data.iter().map(|c| c.iter().map(|x| 1.1 * x).collect()).collect(),
        );
        let e = err_metric(&scaled, &a).unwrap();
        assert!((e - 0.01).abs() < 1e-12, "err {e}");
    }

    #[test]
    fn err_metric_is_scale_covariant() {
        let a = wave(1.0, vec![vec![1.0, -2.0, 3.0]]);
        let b = wave(1.0, vec![vec![1.5, -1.0, 2.5]]);
        let e1 = err_metric(&a, &b).unwrap();
        let s = 7.25e-3;
        let a2 = wave(1.0, vec![a.data[0].iter().map(|x| s * x).collect()]);
        let b2 = wave(1.0, vec![b.data[0].iter().map(|x| s * x).collect()]);
        let e2 = err_metric(&a2, &b2).unwrap();
        assert!((e1 - e2).abs() <= 1e-14 * e1.abs());
    }

    #[test]
    fn err_metric_rejects_mismatch_and_zero_reference() {
        let a = wave(1.0, vec![vec![1.0, 2.0]]);
        let b = wave(1.0, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(err_metric(&a, &b).is_err());
        let z = wave(1.0, vec![vec![0.0, 0.0]]);
        assert!(err_metric(&a, &z).is_err());
    }

    #[test]
    fn err_metric_decimates_integer_rate_ratios() {
        // Reference at dt/2 with duplicated samples decimates cleanly.
        let obs = wave(2.0, vec![vec![1.0, 2.0, 3.0]]);
        let refr = wave(1.0, vec![vec![0.0, 1.0, 0.0, 2.0, 0.0, 3.0]]);
        assert_eq!(err_metric(&obs, &refr).unwrap(), 0.0);
        let odd = wave(1.5, vec![vec![1.0, 2.0]]);
        assert!(err_metric(&odd, &refr).is_err());
    }

    #[test]
    fn energy_of_static_and_zero_states() {
        use crate::matvec::build_blocks;
        use crate::voxel::{build_grid, Material, MaterialId};
        let grid = build_grid(2, 2, 2, 0.002, vec![Material::default_concrete()], |_| {
            MaterialId(0)
        })
        .unwrap();
        let kernels = KernelSet::build(&grid.materials, 0.002).unwrap();
        let blocks = build_blocks(&grid);
        let mass = matvec::assemble_mass(&grid, &kernels);
        let mut state = SimState::zeros(grid.dof_count());
        let (ke, se) = energy(
            &state, &grid, &kernels, &blocks, StiffnessKind::Ovfem, &mass, 1e-7,
        )
        .unwrap();
        assert_eq!((ke, se), (0.0, 0.0));
        // Static displaced state: kinetic zero, strain positive.
        for i in 0..state.u_curr.len() {
            let x = ((i * 37 % 11) as f64 - 5.0) * 1e-6;
            state.u_curr[i] = x;
            state.u_prev[i] = x;
        }
        let (ke, se) = energy(
            &state, &grid, &kernels, &blocks, StiffnessKind::Ovfem, &mass, 1e-7,
        )
        .unwrap();
        assert_eq!(ke, 0.0);
        assert!(se > 0.0);
    }

    #[test]
    fn single_element_mode_strain_energy() {
        use crate::matvec::{assemble_dense, build_blocks};
        use crate::voxel::{build_grid, Material, MaterialId};
        let grid = build_grid(1, 1, 1, 0.002, vec![Material::default_concrete()], |_| {
            MaterialId(0)
        })
        .unwrap();
        let kernels = KernelSet::build(&grid.materials, 0.002).unwrap();
        let blocks = build_blocks(&grid);
        let mass = matvec::assemble_mass(&grid, &kernels);
        let dense = assemble_dense(&grid, &kernels, StiffnessKind::Ovfem).unwrap();
        let eig = (&dense / mass[0]).symmetric_eigen();
        let mut best = (0usize, f64::MIN);
        for (i, &v) in eig.eigenvalues.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        let (col, lambda) = best;
        let v: Vec<f64> = eig.eigenvectors.column(col).iter().cloned().collect();
        let mut state = SimState::zeros(grid.dof_count());
        state.u_curr.copy_from_slice(&v);
        state.u_prev.copy_from_slice(&v);
        let (_, se) = energy(
            &state, &grid, &kernels, &blocks, StiffnessKind::Ovfem, &mass, 1e-7,
        )
        .unwrap();
        // Strain energy of an eigenvector: 1/2 * lambda * m * |v|^2.
        let want = 0.5 * lambda * mass[0];
        assert!((se - want).abs() <= 1e-10 * want, "{se} vs {want}");
    }
}
