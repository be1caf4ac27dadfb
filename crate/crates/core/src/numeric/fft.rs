//! Discrete Fourier transforms: iterative radix-2 for power-of-two lengths,
//! Bluestein's chirp-z reformulation for everything else.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use num_complex::Complex64;

use crate::error::{Result, SeedError};

/// Spectrum of a length-`L` series, one complex value per bin.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum {
    bins: Vec<Complex64>,
}

impl ComplexSpectrum {
    pub fn new(bins: Vec<Complex64>) -> Self {
        Self { bins }
    }

    pub fn from_parts(re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != im.len() {
            return Err(SeedError::shape(format!(
                "spectrum parts differ in length: {} vs {}",
                re.len(),
                im.len()
            )));
        }
        Ok(Self {
            bins: re
                .iter()
                .zip(im)
                .map(|(&r, &i)| Complex64::new(r, i))
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn into_bins(self) -> Vec<Complex64> {
        self.bins
    }

    pub fn re(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.re).collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.im).collect()
    }

    /// Squared magnitude per bin.
    pub fn power(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm_sqr()).collect()
    }
}

enum Plan {
    Radix2 {
        twiddles: Vec<Complex64>,
    },
    Bluestein {
        chirp: Vec<Complex64>,
        // FFT of the conjugate chirp filter, length `inner_len`
        filter_hat: Vec<Complex64>,
        inner: Rc<Plan>,
        inner_len: usize,
    },
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Rc<Plan>>> = RefCell::new(HashMap::new());
}

fn plan_for(n: usize) -> Rc<Plan> {
    if let Some(p) = PLANS.with(|m| m.borrow().get(&n).cloned()) {
        return p;
    }
    let plan = Rc::new(build_plan(n));
    PLANS.with(|m| m.borrow_mut().insert(n, plan.clone()));
    plan
}

fn build_plan(n: usize) -> Plan {
    if n.is_power_of_two() {
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        return Plan::Radix2 { twiddles };
    }
    let inner_len = (2 * n - 1).next_power_of_two();
    // n^2 mod 2n keeps the chirp angle small and exact in integers
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let q = (k as u128 * k as u128 % (2 * n as u128)) as f64;
            Complex64::from_polar(1.0, -PI * q / n as f64)
        })
        .collect();
    let mut filter = vec![Complex64::new(0.0, 0.0); inner_len];
    filter[0] = chirp[0].conj();
    for k in 1..n {
        filter[k] = chirp[k].conj();
        filter[inner_len - k] = chirp[k].conj();
    }
    let inner = plan_for(inner_len);
    run_plan(&inner, &mut filter);
    Plan::Bluestein {
        chirp,
        filter_hat: filter,
        inner,
        inner_len,
    }
}

fn run_plan(plan: &Plan, buf: &mut [Complex64]) {
    match plan {
        Plan::Radix2 { twiddles } => radix2(buf, twiddles),
        Plan::Bluestein {
            chirp,
            filter_hat,
            inner,
            inner_len,
        } => {
            let n = buf.len();
            let mut work = vec![Complex64::new(0.0, 0.0); *inner_len];
            for k in 0..n {
                work[k] = buf[k] * chirp[k];
            }
            run_plan(inner, &mut work);
            for (w, f) in work.iter_mut().zip(filter_hat) {
                *w *= f;
            }
            // inverse transform through conjugation
            for w in work.iter_mut() {
                *w = w.conj();
            }
            run_plan(inner, &mut work);
            let scale = 1.0 / *inner_len as f64;
            for k in 0..n {
                buf[k] = work[k].conj() * scale * chirp[k];
            }
        }
    }
}

fn radix2(buf: &mut [Complex64], twiddles: &[Complex64]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let step = n / size;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let t = buf[start + k + half] * twiddles[k * step];
                let u = buf[start + k];
                buf[start + k] = u + t;
                buf[start + k + half] = u - t;
            }
        }
        size *= 2;
    }
}

/// Forward DFT, `X_k = sum_t x_t e^{-2 pi i k t / L}`, any length.
pub fn fft(input: &[Complex64]) -> Vec<Complex64> {
    let mut buf = input.to_vec();
    if buf.len() > 1 {
        run_plan(&plan_for(buf.len()), &mut buf);
    }
    buf
}

/// Inverse DFT including the `1/L` factor.
pub fn ifft(input: &[Complex64]) -> Vec<Complex64> {
    let n = input.len();
    let conj: Vec<Complex64> = input.iter().map(|c| c.conj()).collect();
    let scale = 1.0 / n.max(1) as f64;
    fft(&conj).into_iter().map(|c| c.conj() * scale).collect()
}

/// DFT of a real series.
pub fn fft_real(x: &[f64]) -> Result<ComplexSpectrum> {
    if x.len() < 2 {
        return Err(SeedError::Input(format!(
            "fft needs at least 2 samples, got {}",
            x.len()
        )));
    }
    let buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    Ok(ComplexSpectrum::new(fft(&buf)))
}

/// Real part of the inverse DFT.
pub fn ifft_real(spectrum: &ComplexSpectrum) -> Vec<f64> {
    ifft(spectrum.bins()).into_iter().map(|c| c.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngState;

    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| {
                        let ang = -2.0 * PI * (k * t % n) as f64 / n as f64;
                        Complex64::from_polar(v, ang)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn constant_series_is_dc_only() {
        let s = fft_real(&[2.5; 12]).unwrap();
        assert!((s.bins()[0].re - 30.0).abs() < 1e-12);
        for b in &s.bins()[1..] {
            assert!(b.norm() < 1e-12);
        }
    }

    #[test]
    fn single_tone_hits_two_bins() {
        for n in [16usize, 96] {
            let k = 3;
            let x: Vec<f64> = (0..n)
                .map(|t| (2.0 * PI * (k * t) as f64 / n as f64).cos())
                .collect();
            let p = fft_real(&x).unwrap().power();
            for (i, v) in p.iter().enumerate() {
                if i == k || i == n - k {
                    assert!((v - (n as f64 / 2.0).powi(2)).abs() < 1e-8);
                } else {
                    assert!(*v < 1e-18, "bin {i} power {v}");
                }
            }
        }
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = RngState::new(3);
        for n in [2usize, 3, 5, 8, 12, 96, 97, 128] {
            let x = rng.normals(n);
            let got = fft_real(&x).unwrap();
            let want = naive_dft(&x);
            for (g, w) in got.bins().iter().zip(&want) {
                assert!((g - w).norm() < 1e-9, "n={n}");
            }
        }
    }

    #[test]
    fn conjugate_symmetry_and_inverse() {
        let mut rng = RngState::new(9);
        let x = rng.normals(96);
        let s = fft_real(&x).unwrap();
        let b = s.bins();
        for k in 1..96 {
            assert!((b[k] - b[96 - k].conj()).norm() < 1e-9);
        }
        let back = ifft_real(&s);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn short_input_is_rejected() {
        assert!(fft_real(&[1.0]).is_err());
        assert!(ComplexSpectrum::from_parts(&[1.0], &[]).is_err());
    }
}
