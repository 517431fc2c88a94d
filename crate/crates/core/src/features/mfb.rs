use std::collections::BTreeMap;
use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::netcore::Tensor;

pub const NUM_FILTERS: usize = 40;
pub const WINDOW_S: f64 = 0.025;
pub const HOP_S: f64 = 0.010;
/// Floor applied to filter energies before the log.
pub const ENERGY_FLOOR: f64 = 1e-10;

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::Config(format!("sample rate must be > 0, got {sample_rate}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-mel filters spanning 0 Hz to Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `num_filters × (fft_size/2 + 1)` weights.
    weights: Vec<Vec<f64>>,
    edges_hz: Vec<f64>,
    fft_size: usize,
    sample_rate: f64,
}

impl MelFilterbank {
    pub fn new(num_filters: usize, fft_size: usize, sample_rate: f64) -> Self {
        let nyquist = sample_rate / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges_hz: Vec<f64> = (0..num_filters + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (num_filters + 1) as f64))
            .collect();
        let bins = fft_size / 2 + 1;
        let weights = (0..num_filters)
            .map(|m| {
                let (lo, mid, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
                (0..bins)
                    .map(|k| {
                        let f = k as f64 * sample_rate / fft_size as f64;
                        if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            weights,
            edges_hz,
            fft_size,
            sample_rate,
        }
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn centers_hz(&self) -> Vec<f64> {
        self.edges_hz[1..self.edges_hz.len() - 1].to_vec()
    }

    /// Lowest and highest frequency covered by any filter.
    pub fn band_hz(&self) -> (f64, f64) {
        (self.edges_hz[0], *self.edges_hz.last().expect("edges"))
    }

    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate / self.fft_size as f64
    }

    fn apply(&self, power: &[f64], out: &mut Vec<f64>) {
        for w in &self.weights {
            let e: f64 = w.iter().zip(power).map(|(a, b)| a * b).sum();
            out.push(e.max(ENERGY_FLOOR).ln());
        }
    }
}

/// Frame geometry of the MFB front end at a given sample rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSpec {
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl FrameSpec {
    pub fn for_rate(sample_rate: f64) -> Self {
        let window = (WINDOW_S * sample_rate).round() as usize;
        let hop = (HOP_S * sample_rate).round() as usize;
        Self {
            window,
            hop,
            fft_size: window.next_power_of_two(),
        }
    }

    pub fn num_frames(&self, samples: usize) -> usize {
        if samples < self.window {
            0
        } else {
            (samples - self.window) / self.hop + 1
        }
    }
}

/// 40-dimensional log mel filterbank energies, one row per 10 ms frame.
pub fn compute_mfb(w: &Waveform) -> Result<Tensor> {
    if !(w.sample_rate > 0.0) {
        return Err(Error::Config(format!("sample rate must be > 0, got {}", w.sample_rate)));
    }
    let fs = FrameSpec::for_rate(w.sample_rate);
    if fs.window == 0 || fs.hop == 0 {
        return Err(Error::Config(format!("sample rate {} too low", w.sample_rate)));
    }
    let frames = fs.num_frames(w.samples.len());
    if frames == 0 {
        return Err(Error::SequenceTooShort {
            len: w.samples.len(),
            required: fs.window,
        });
    }
    let hamming: Vec<f64> = (0..fs.window)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (fs.window - 1).max(1) as f64).cos())
        .collect();
    let bank = MelFilterbank::new(NUM_FILTERS, fs.fft_size, w.sample_rate);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fs.fft_size);
    let bins = fs.fft_size / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); fs.fft_size];
    let mut power = vec![0.0; bins];
    let mut out = Vec::with_capacity(frames * NUM_FILTERS);
    for f in 0..frames {
        let start = f * fs.hop;
        for (i, c) in buf.iter_mut().enumerate() {
            let v = if i < fs.window {
                w.samples[start + i] * hamming[i]
            } else {
                0.0
            };
            *c = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        bank.apply(&power, &mut out);
    }
    Tensor::new(vec![frames, NUM_FILTERS], out)
}

/// Per-session, per-coefficient z-normalization pooled over all frames of a
/// session. Coefficients with zero spread become 0.
pub fn znormalize(groups: &BTreeMap<String, Vec<Tensor>>) -> Result<BTreeMap<String, Vec<Tensor>>> {
    let mut out = BTreeMap::new();
    for (session, seqs) in groups {
        let first = seqs
            .first()
            .ok_or_else(|| Error::Data(format!("session {session} has no sequences")))?;
        let d = first.cols();
        if seqs.iter().any(|s| s.rank() != 2 || s.cols() != d) {
            return Err(Error::shape("znormalize", format!("session {session} mixes widths")));
        }
        let n: usize = seqs.iter().map(Tensor::rows).sum();
        let mut mean = vec![0.0; d];
        for s in seqs {
            for r in 0..s.rows() {
                for (m, v) in mean.iter_mut().zip(s.row(r)) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for s in seqs {
            for r in 0..s.rows() {
                for ((acc, v), m) in var.iter_mut().zip(s.row(r)).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
        }
        let sd: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
        let normed = seqs
            .iter()
            .map(|s| {
                let mut t = s.clone();
                for (i, v) in t.data_mut().iter_mut().enumerate() {
                    let c = i % d;
                    *v = if sd[c] > 0.0 { (*v - mean[c]) / sd[c] } else { 0.0 };
                }
                t
            })
            .collect();
        out.insert(session.clone(), normed);
    }
    Ok(out)
}
