//! Unitary DFT machinery for joint constellation columns.
//!
//! Frequency bins follow `w_{n,k} = exp(2πj nk/N)/√N`. A column
//! `c = [c_1, c_2, ..., c_{2N_J+1}]` occupies the DC bin (`c_1`, real) and
//! bins `k = 1..=N_J` as `c_{2k} + j c_{2k+1}`, mirrored conjugate at `N-k`.
//! Time index `n` runs over `1..=N`; sample vectors are stored at position
//! `n mod N`, so position 0 holds `n = N`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// `w_{n,k}` of the unitary DFT matrix.
pub fn dft_weight(n: usize, k: usize, size: usize) -> Complex64 {
    let phase = 2.0 * PI * ((n * k) % size) as f64 / size as f64;
    Complex64::from_polar(1.0 / (size as f64).sqrt(), phase)
}

/// Number of joint subcarriers encoded by a column of length `dims`.
fn joint_bins(dims: usize) -> usize {
    (dims - 1) / 2
}

fn check_shape(c: &[f64], n: usize) -> Result<usize> {
    if c.is_empty() || c.len().is_multiple_of(2) {
        return Err(Error::DimensionMismatch(format!(
            "column length {} is not of the form 2N_J+1",
            c.len()
        )));
    }
    let n_j = joint_bins(c.len());
    if n < 2 || !n.is_multiple_of(2) || n_j + 1 > n / 2 {
        return Err(Error::DimensionMismatch(format!(
            "{n_j} joint subcarriers do not fit an IFFT of length {n}"
        )));
    }
    Ok(n_j)
}

/// Coefficients `φ_n` such that `φ_n · c` is the `n`-th IFFT output of the
/// joint component.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiVector {
    pub n: usize,
    pub coeffs: Vec<f64>,
}

impl PhiVector {
    pub fn dot(&self, c: &[f64]) -> f64 {
        self.coeffs.iter().zip(c).map(|(a, b)| a * b).sum()
    }
}

/// `φ_n = [1/√N, 2Re w_{n,1}, -2Im w_{n,1}, ..., 2Re w_{n,N_J}, -2Im w_{n,N_J}]`
/// for `1 ≤ n ≤ N`.
pub fn phi_vector(n: usize, size: usize, n_j: usize) -> Result<PhiVector> {
    if n == 0 || n > size {
        return Err(Error::IndexOutOfRange(format!(
            "time index {n} outside 1..={size}"
        )));
    }
    let mut coeffs = Vec::with_capacity(2 * n_j + 1);
    coeffs.push(1.0 / (size as f64).sqrt());
    for k in 1..=n_j {
        let w = dft_weight(n, k, size);
        coeffs.push(2.0 * w.re);
        coeffs.push(-2.0 * w.im);
    }
    Ok(PhiVector { n, coeffs })
}

/// All `N` φ-vectors as a row-major `N × (2N_J+1)` matrix, row `i` holding
/// the sample at storage position `i`.
pub fn phi_matrix(size: usize, n_j: usize) -> Vec<f64> {
    let d = 2 * n_j + 1;
    let mut out = vec![0.0; size * d];
    for i in 0..size {
        let n = if i == 0 { size } else { i };
        let phi = phi_vector(n, size, n_j).expect("index in range");
        out[i * d..(i + 1) * d].copy_from_slice(&phi.coeffs);
    }
    out
}

/// Hermitian-symmetric frequency vector of one joint column.
pub fn assemble_frequency(c: &[f64], n: usize) -> Result<Vec<Complex64>> {
    let n_j = check_shape(c, n)?;
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    x[0] = Complex64::new(c[0], 0.0);
    for k in 1..=n_j {
        let v = Complex64::new(c[2 * k - 1], c[2 * k]);
        x[k] = v;
        x[n - k] = v.conj();
    }
    Ok(x)
}

/// Inverse unitary DFT, `x_n = Σ_k w_{n,k} x̃_k`.
pub fn idft(freq: &[Complex64]) -> Vec<Complex64> {
    let size = freq.len();
    (0..size)
        .map(|n| {
            freq.iter()
                .enumerate()
                .map(|(k, v)| dft_weight(n, k, size) * v)
                .sum()
        })
        .collect()
}

/// Forward unitary DFT, the adjoint of [`idft`].
pub fn dft(time: &[Complex64]) -> Vec<Complex64> {
    let size = time.len();
    (0..size)
        .map(|k| {
            time.iter()
                .enumerate()
                .map(|(n, v)| dft_weight(n, k, size).conj() * v)
                .sum()
        })
        .collect()
}

/// Real time samples of a frequency vector; errors if the imaginary
/// residue exceeds `1e-9` of the signal scale (input not Hermitian).
pub fn real_samples(freq: &[Complex64]) -> Result<Vec<f64>> {
    let t = idft(freq);
    let scale = 1.0 + freq.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if t.iter().any(|v| v.im.abs() > 1e-9 * scale) {
        return Err(Error::InvalidInput(
            "frequency vector is not Hermitian-symmetric".into(),
        ));
    }
    Ok(t.into_iter().map(|v| v.re).collect())
}

/// Time-domain joint component of one column.
pub fn time_samples(c: &[f64], n: usize) -> Result<Vec<f64>> {
    let freq = assemble_frequency(c, n)?;
    Ok(idft(&freq).into_iter().map(|v| v.re).collect())
}

/// Bins occupied by the joint design: DC, `1..=N_J`, their mirrors, and the
/// Nyquist bin which is always zero.
pub fn reserved_bins(n: usize, n_j: usize) -> Vec<usize> {
    let mut bins: Vec<usize> = (0..=n_j).collect();
    bins.push(n / 2);
    bins.extend((n - n_j..n).filter(|&k| k > n / 2));
    bins.sort_unstable();
    bins.dedup();
    bins
}

/// Joint component plus independent symbols plus a residual bias.
///
/// `indep` is a full length-`N` frequency vector whose only non-zero bins
/// lie outside [`reserved_bins`] and satisfy Hermitian symmetry.
pub fn combined_samples(c: &[f64], indep: &[Complex64], bias: f64) -> Result<Vec<f64>> {
    let n = indep.len();
    let n_j = check_shape(c, n)?;
    for k in reserved_bins(n, n_j) {
        if indep[k] != Complex64::new(0.0, 0.0) {
            return Err(Error::InvalidInput(format!(
                "independent symbol on reserved bin {k}"
            )));
        }
    }
    for k in 1..n / 2 {
        if (indep[k] - indep[n - k].conj()).norm() > 1e-12 * (1.0 + indep[k].norm()) {
            return Err(Error::InvalidInput(format!(
                "independent bins {k} and {} are not conjugate",
                n - k
            )));
        }
    }
    let mut freq = assemble_frequency(c, n)?;
    for (f, v) in freq.iter_mut().zip(indep) {
        *f += v;
    }
    Ok(idft(&freq).into_iter().map(|v| v.re + bias).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const S8: f64 = 0.353_553_390_593_273_8; // 1/√8

    fn random_column(rng: &mut ChaCha8Rng, dims: usize) -> Vec<f64> {
        (0..dims).map(|_| rng.random_range(-3.0..3.0)).collect()
    }

    #[test]
    fn phi_at_last_index() {
        let phi = phi_vector(8, 8, 1).unwrap();
        assert!((phi.coeffs[0] - S8).abs() < 1e-15);
        assert!((phi.coeffs[1] - 2.0 * S8).abs() < 1e-15);
        assert!(phi.coeffs[2].abs() < 1e-15);
    }

    #[test]
    fn phi_at_half_period() {
        let phi = phi_vector(4, 8, 1).unwrap();
        assert!((phi.coeffs[0] - S8).abs() < 1e-15);
        assert!((phi.coeffs[1] + 2.0 * S8).abs() < 1e-15);
        assert!(phi.coeffs[2].abs() < 1e-15);
    }

    #[test]
    fn phi_rejects_out_of_range() {
        assert!(phi_vector(0, 8, 3).is_err());
        assert!(phi_vector(9, 8, 3).is_err());
        let phi = phi_vector(3, 8, 3).unwrap();
        assert_eq!(phi.dot(&[0.0; 7]), 0.0);
    }

    #[test]
    fn dc_only_assembly() {
        let x = assemble_frequency(&[5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 8).unwrap();
        assert_eq!(x[0], Complex64::new(5.0, 0.0));
        assert!(x[1..].iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn first_bin_assembly() {
        let x = assemble_frequency(&[0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0], 8).unwrap();
        assert_eq!(x[1], Complex64::new(1.0, 1.0));
        assert_eq!(x[7], Complex64::new(1.0, -1.0));
        for k in [0, 2, 3, 4, 5, 6] {
            assert_eq!(x[k].norm(), 0.0);
        }
        assert!(assemble_frequency(&[0.0; 6], 8).is_err());
        assert!(assemble_frequency(&[0.0; 9], 8).is_err());
    }

    #[test]
    fn dc_column_gives_constant_samples() {
        let b = 1.7;
        let x = time_samples(&[8f64.sqrt() * b, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 8).unwrap();
        assert!(x.iter().all(|v| (v - b).abs() < 1e-12));
    }

    #[test]
    fn single_tone_closed_form() {
        let x = time_samples(&[0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0], 8).unwrap();
        for (i, v) in x.iter().enumerate() {
            let th = 2.0 * PI * i as f64 / 8.0;
            let expected = 2.0 / 8f64.sqrt() * (th.cos() - th.sin());
            assert!((v - expected).abs() < 1e-12, "n={i}: {v} vs {expected}");
        }
    }

    #[test]
    fn phi_matches_direct_dft_and_output_is_real() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, n_j) in &[(8, 3), (8, 1), (16, 7), (16, 2), (2, 0)] {
            let d = 2 * n_j + 1;
            let phi = phi_matrix(n, n_j);
            for _ in 0..1000 {
                let c = random_column(&mut rng, d);
                let freq = assemble_frequency(&c, n).unwrap();
                let t = idft(&freq);
                for (i, v) in t.iter().enumerate() {
                    assert!(v.im.abs() <= 1e-12);
                    let dot: f64 = (0..d).map(|j| phi[i * d + j] * c[j]).sum();
                    assert!((dot - v.re).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let c = random_column(&mut rng, 7);
            let x = time_samples(&c, 8).unwrap();
            let time_energy: f64 = x.iter().map(|v| v * v).sum();
            let freq_energy = c[0] * c[0] + 2.0 * c[1..].iter().map(|v| v * v).sum::<f64>();
            assert!((time_energy - freq_energy).abs() <= 1e-10 * freq_energy);
        }
    }

    #[test]
    fn dft_inverts_idft() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<Complex64> = (0..16)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let back = dft(&idft(&v));
        for (a, b) in back.iter().zip(&v) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    fn indep_pair(n: usize, k: usize, s: Complex64) -> Vec<Complex64> {
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        v[k] = s;
        v[n - k] = s.conj();
        v
    }

    #[test]
    fn combined_reduces_to_joint() {
        let c = [2.0, 0.3, -0.4, 0.1, 0.2];
        let zero = vec![Complex64::new(0.0, 0.0); 16];
        let a = combined_samples(&c, &zero, 0.0).unwrap();
        let b = time_samples(&c, 16).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn combined_with_exhaustive_bias_is_non_negative() {
        // one independent 4-QAM pair on bin 3 of N = 8 with N_J = 2
        let qam = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];
        let c = [0.0; 5];
        let mut peak: f64 = 0.0;
        for &(re, im) in &qam {
            let s = indep_pair(8, 3, Complex64::new(re, im));
            let x = combined_samples(&c, &s, 0.0).unwrap();
            peak = peak.max(-x.iter().cloned().fold(f64::INFINITY, f64::min));
        }
        // single tone of amplitude 2√2/√8
        assert!((peak - 1.0).abs() < 1e-12);
        for &(re, im) in &qam {
            let s = indep_pair(8, 3, Complex64::new(re, im));
            let x = combined_samples(&c, &s, peak).unwrap();
            assert!(x.iter().all(|&v| v >= -1e-12));
        }
    }

    #[test]
    fn combined_superposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_column(&mut rng, 3);
        let s = indep_pair(8, 2, Complex64::new(0.7, -1.3));
        let zero = vec![Complex64::new(0.0, 0.0); 8];
        let total = combined_samples(&c, &s, 0.9).unwrap();
        let joint = combined_samples(&c, &zero, 0.0).unwrap();
        let ind = combined_samples(&[0.0; 3], &s, 0.0).unwrap();
        for i in 0..8 {
            assert!((total[i] - joint[i] - ind[i] - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn combined_rejects_overlap_and_asymmetry() {
        let c = [1.0, 0.0, 0.0];
        let mut s = vec![Complex64::new(0.0, 0.0); 8];
        s[1] = Complex64::new(1.0, 0.0);
        s[7] = Complex64::new(1.0, 0.0);
        assert!(combined_samples(&c, &s, 0.0).is_err());
        let mut s = vec![Complex64::new(0.0, 0.0); 8];
        s[2] = Complex64::new(1.0, 1.0);
        s[6] = Complex64::new(1.0, 1.0);
        assert!(combined_samples(&c, &s, 0.0).is_err());
    }

    #[test]
    fn reserved_bin_sets() {
        assert_eq!(reserved_bins(8, 3), (0..8).collect::<Vec<_>>());
        assert_eq!(reserved_bins(16, 2), vec![0, 1, 2, 8, 14, 15]);
        assert_eq!(reserved_bins(8, 0), vec![0, 4]);
    }
}
