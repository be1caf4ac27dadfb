//! Dependency evaluation in the frequency domain: a learnable per-bin
//! shaping filter, power spectral density and normalized spectral entropy,
//! plus the autocorrelation and synthetic-signal tooling used to study how
//! entropy tracks predictability.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Result, SeedError};
use crate::numeric::{fft, fft_real, ifft, ComplexSpectrum, CustomOp, RngState, Tape, Tensor, Var};
use crate::stats;
use crate::window::SeriesWindow;

/// Relative power below which a mean-removed series is treated as constant.
const DEGENERATE_REL_POWER: f64 = 1e-20;

/// Learnable complex multiplier, one weight per frequency bin.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapingFilter {
    weights: Vec<Complex64>,
}

impl ShapingFilter {
    /// All-pass filter (every weight `1 + 0i`).
    pub fn identity(len: usize) -> Self {
        Self {
            weights: vec![Complex64::new(1.0, 0.0); len],
        }
    }

    pub fn new(weights: Vec<Complex64>) -> Self {
        Self { weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    /// Packs the weights as a `[2, L]` tensor (real row, imaginary row).
    pub fn to_tensor(&self) -> Tensor {
        let l = self.len();
        let mut data = Vec::with_capacity(2 * l);
        data.extend(self.weights.iter().map(|w| w.re));
        data.extend(self.weights.iter().map(|w| w.im));
        Tensor::new(vec![2, l], data).expect("filter tensor shape")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.ndim() != 2 || t.shape()[0] != 2 {
            return Err(SeedError::shape(format!(
                "shaping filter tensor must be [2, L], got {:?}",
                t.shape()
            )));
        }
        let l = t.shape()[1];
        let (re, im) = t.data().split_at(l);
        Ok(Self {
            weights: re
                .iter()
                .zip(im)
                .map(|(&r, &i)| Complex64::new(r, i))
                .collect(),
        })
    }
}

/// Per-variable normalized spectral entropy, each entry in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyVector {
    values: Vec<f64>,
}

impl EntropyVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SeedError::Input(format!("entropy {v} outside [0, 1]")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-bin complex product of a spectrum with the filter weights.
pub fn apply_filter(spectrum: &ComplexSpectrum, filter: &ShapingFilter) -> Result<ComplexSpectrum> {
    if spectrum.len() != filter.len() {
        return Err(SeedError::shape(format!(
            "spectrum has {} bins, filter has {}",
            spectrum.len(),
            filter.len()
        )));
    }
    Ok(ComplexSpectrum::new(
        spectrum
            .bins()
            .iter()
            .zip(filter.weights())
            .map(|(z, h)| z * h)
            .collect(),
    ))
}

/// Normalizes a power spectrum into a probability distribution over bins.
pub fn power_distribution(psd: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = psd.iter().sum();
    if psd.iter().any(|p| *p < 0.0 || !p.is_finite()) {
        return Err(SeedError::Numeric("power must be finite and non-negative".into()));
    }
    if total <= 0.0 {
        return Err(SeedError::Degenerate("spectrum carries no power".into()));
    }
    Ok(psd.iter().map(|p| p / total).collect())
}

/// Shannon entropy of the normalized power spectrum divided by `ln L`.
pub fn entropy_of_power(psd: &[f64]) -> Result<f64> {
    if psd.len() < 2 {
        return Err(SeedError::Input("need at least 2 frequency bins".into()));
    }
    let p = power_distribution(psd)?;
    let h: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
    Ok((h / (psd.len() as f64).ln()).clamp(0.0, 1.0))
}

/// Normalized entropy of a spectrum's power, with no mean handling.
pub fn spectrum_entropy(spectrum: &ComplexSpectrum) -> Result<f64> {
    entropy_of_power(&spectrum.power())
}

fn demean(x: &[f64]) -> Vec<f64> {
    let m = stats::mean(x);
    x.iter().map(|v| v - m).collect()
}

/// Normalized spectral entropy of a real series. The series is
/// mean-subtracted before the transform; a series with no power left
/// (constant) is a [`SeedError::Degenerate`] error.
pub fn spectral_entropy(x: &[f64], filter: Option<&ShapingFilter>) -> Result<f64> {
    let l = x.len();
    if l < 2 {
        return Err(SeedError::Input(format!("series length {l} < 2")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SeedError::Numeric("series contains non-finite values".into()));
    }
    let raw_energy: f64 = x.iter().map(|v| v * v).sum();
    let spectrum = fft_real(&demean(x))?;
    let unfiltered: f64 = spectrum.power().iter().sum();
    if unfiltered <= DEGENERATE_REL_POWER * l as f64 * raw_energy {
        return Err(SeedError::Degenerate("series is constant".into()));
    }
    let spectrum = match filter {
        Some(f) => apply_filter(&spectrum, f)?,
        None => spectrum,
    };
    spectrum_entropy(&spectrum)
}

/// [`spectral_entropy`] with constant series mapped to 0.
pub fn spectral_entropy_or_zero(x: &[f64], filter: Option<&ShapingFilter>) -> Result<f64> {
    match spectral_entropy(x, filter) {
        Err(SeedError::Degenerate(_)) => Ok(0.0),
        other => other,
    }
}

/// Spectral entropy of every variable in the window.
pub fn evaluate_dependencies(window: &SeriesWindow, filter: &ShapingFilter) -> Result<EntropyVector> {
    if window.len() < 2 {
        return Err(SeedError::Input(format!(
            "window length {} < 2",
            window.len()
        )));
    }
    let values = window
        .rows()
        .map(|row| spectral_entropy(row, Some(filter)))
        .collect::<Result<Vec<_>>>()?;
    EntropyVector::new(values)
}

// ---------------------------------------------------------------------------
// Differentiable entropy.

struct EntropyRow {
    spectrum: Vec<Complex64>,
    filter_gain: Vec<f64>,
    p: Vec<f64>,
    total: f64,
    degenerate: bool,
}

fn entropy_row(x: &[f64], filter: Option<&[Complex64]>) -> (f64, EntropyRow) {
    let l = x.len();
    let raw_energy: f64 = x.iter().map(|v| v * v).sum();
    let centered: Vec<Complex64> = demean(x).into_iter().map(|v| Complex64::new(v, 0.0)).collect();
    let spectrum = fft(&centered);
    let unfiltered: f64 = spectrum.iter().map(|z| z.norm_sqr()).sum();
    let filter_gain: Vec<f64> = match filter {
        Some(h) => h.iter().map(|w| w.norm_sqr()).collect(),
        None => vec![1.0; l],
    };
    let power: Vec<f64> = spectrum
        .iter()
        .zip(&filter_gain)
        .map(|(z, g)| z.norm_sqr() * g)
        .collect();
    let total: f64 = power.iter().sum();
    let degenerate = unfiltered <= DEGENERATE_REL_POWER * l as f64 * raw_energy
        || total <= 0.0
        || !total.is_finite();
    if degenerate {
        let row = EntropyRow {
            spectrum,
            filter_gain,
            p: vec![0.0; l],
            total,
            degenerate,
        };
        return (0.0, row);
    }
    let p: Vec<f64> = power.iter().map(|v| v / total).collect();
    let h: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
    let value = h / (l as f64).ln();
    let row = EntropyRow {
        spectrum,
        filter_gain,
        p,
        total,
        degenerate,
    };
    (value, row)
}

struct SpectralEntropyOp {
    rows: Vec<EntropyRow>,
}

impl CustomOp for SpectralEntropyOp {
    fn name(&self) -> &'static str {
        "spectral_entropy"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let l = x.last_dim();
        let log_l = (l as f64).ln();
        let mut dx = needs[0].then(|| Tensor::zeros(x.shape()));
        let mut dfilter = needs.get(1).copied().unwrap_or(false).then(|| Tensor::zeros(&[2, l]));
        let filter = inputs.get(1).map(|t| t.data());

        for (r, row) in self.rows.iter().enumerate() {
            let g = grad.data()[r];
            if row.degenerate || g == 0.0 {
                continue;
            }
            // dE/dp, then through the normalization p = P / sum(P)
            let de_dp: Vec<f64> = row
                .p
                .iter()
                .map(|&p| if p > 0.0 { -(p.ln() + 1.0) / log_l } else { 0.0 })
                .collect();
            let dot: f64 = row.p.iter().zip(&de_dp).map(|(p, d)| p * d).sum();
            let de_dpow: Vec<f64> = de_dp.iter().map(|d| g * (d - dot) / row.total).collect();

            if let Some(dx) = dx.as_mut() {
                let q: Vec<Complex64> = de_dpow
                    .iter()
                    .zip(&row.filter_gain)
                    .zip(&row.spectrum)
                    .map(|((d, gain), z)| z * (d * gain))
                    .collect();
                let back = ifft(&q);
                let scale = 2.0 * l as f64;
                let centered: Vec<f64> = back.iter().map(|c| scale * c.re).collect();
                let m = stats::mean(&centered);
                let out = &mut dx.data_mut()[r * l..(r + 1) * l];
                for (o, c) in out.iter_mut().zip(&centered) {
                    *o = c - m;
                }
            }
            if let (Some(df), Some(h)) = (dfilter.as_mut(), filter) {
                let (h_re, h_im) = h.split_at(l);
                let data = df.data_mut();
                for i in 0..l {
                    let k = de_dpow[i] * row.spectrum[i].norm_sqr() * 2.0;
                    data[i] += k * h_re[i];
                    data[l + i] += k * h_im[i];
                }
            }
        }
        let mut out = vec![dx];
        if inputs.len() > 1 {
            out.push(dfilter);
        }
        out
    }
}

/// Differentiable spectral entropy over the last axis of `x`; the output
/// drops that axis. Constant rows evaluate to 0 with zero gradient.
/// `filter`, when given, is a `[2, L]` real/imaginary weight tensor.
pub fn spectral_entropy_var(tape: &mut Tape, x: Var, filter: Option<Var>) -> Result<Var> {
    let xv = tape.value(x);
    let l = xv.last_dim();
    if xv.ndim() == 0 || l < 2 {
        return Err(SeedError::Input(format!(
            "spectral entropy needs a trailing axis of length >= 2, got {:?}",
            xv.shape()
        )));
    }
    let weights: Option<Vec<Complex64>> = match filter {
        Some(f) => {
            let fv = tape.value(f);
            if fv.shape() != [2, l] {
                return Err(SeedError::shape(format!(
                    "filter {:?} does not match series length {l}",
                    fv.shape()
                )));
            }
            Some(ShapingFilter::from_tensor(fv)?.weights)
        }
        None => None,
    };
    let mut values = Vec::with_capacity(xv.numel() / l);
    let mut rows = Vec::with_capacity(xv.numel() / l);
    for row in xv.data().chunks(l) {
        let (v, cache) = entropy_row(row, weights.as_deref());
        values.push(v);
        rows.push(cache);
    }
    let out = Tensor::new(xv.shape()[..xv.ndim() - 1].to_vec(), values)?;
    let inputs: Vec<Var> = std::iter::once(x).chain(filter).collect();
    Ok(tape.custom(&inputs, out, Box::new(SpectralEntropyOp { rows })))
}

// ---------------------------------------------------------------------------
// Autocorrelation and the synthetic noise-mixture study.

/// Biased, mean-removed autocorrelation normalized by lag 0; returns lags
/// `1..=max_lag`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag >= x.len() {
        return Err(SeedError::Input(format!(
            "max_lag {max_lag} must be below series length {}",
            x.len()
        )));
    }
    let c = demean(x);
    let r0: f64 = c.iter().map(|v| v * v).sum();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if r0 <= DEGENERATE_REL_POWER * energy || r0 == 0.0 {
        return Err(SeedError::Degenerate("zero-variance series".into()));
    }
    Ok((1..=max_lag)
        .map(|lag| {
            let s: f64 = c.iter().zip(&c[lag..]).map(|(a, b)| a * b).sum();
            s / r0
        })
        .collect())
}

/// Signal model `x_t = (1 - alpha) sin(2 pi t / period) + alpha eps_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub alpha: f64,
    pub period: usize,
    pub length: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(SeedError::Input(format!("alpha {} not in [0, 1]", self.alpha)));
        }
        if self.period < 2 {
            return Err(SeedError::Input(format!("period {} < 2", self.period)));
        }
        if self.length < 2 * self.period {
            return Err(SeedError::Input(format!(
                "length {} shorter than two periods ({})",
                self.length,
                2 * self.period
            )));
        }
        Ok(())
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self {
            alpha,
            ..self.clone()
        }
    }
}

/// Unit-amplitude sinusoid with the given period, `t = 1..=length`.
pub fn periodic_component(period: usize, length: usize) -> Vec<f64> {
    (1..=length)
        .map(|t| (2.0 * PI * t as f64 / period as f64).sin())
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let signal = periodic_component(spec.period, spec.length);
    let noise = RngState::new(spec.seed).normals(spec.length);
    Ok(signal
        .iter()
        .zip(&noise)
        .map(|(s, e)| {
            if spec.alpha == 0.0 {
                *s
            } else if spec.alpha == 1.0 {
                *e
            } else {
                (1.0 - spec.alpha) * s + spec.alpha * e
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub alpha: f64,
    pub acf_peak: f64,
    pub spectral_entropy: f64,
}

/// Largest lag considered when locating the autocorrelation peak.
pub fn study_max_lag(spec: &SyntheticSpec) -> usize {
    (2 * spec.period).min(spec.length - 1)
}

/// For each noise fraction, the autocorrelation peak over lags >= 1 and the
/// unfiltered spectral entropy. Every row shares the same noise draw.
pub fn acf_entropy_study(alphas: &[f64], spec: &SyntheticSpec) -> Result<Vec<StudyRow>> {
    if alphas.is_empty() {
        return Err(SeedError::Input("empty alpha grid".into()));
    }
    alphas
        .iter()
        .map(|&alpha| {
            let s = spec.with_alpha(alpha);
            let x = generate_synthetic(&s)?;
            let acf = autocorrelation(&x, study_max_lag(&s))?;
            let acf_peak = acf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(StudyRow {
                alpha,
                acf_peak,
                spectral_entropy: spectral_entropy(&x, None)?,
            })
        })
        .collect()
}

pub fn study_to_csv(rows: &[StudyRow]) -> String {
    let mut out = String::from("alpha,acf_peak,spectral_entropy\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.alpha, r.acf_peak, r.spectral_entropy));
    }
    out
}
