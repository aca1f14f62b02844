//! Sine rendering of mapped frequencies: one-shot tones, 16-bit WAV files
//! and a phase-continuous streaming oscillator.

use std::f64::consts::TAU;
use std::io::Cursor;
use std::path::Path;
use std::sync::mpsc::Receiver;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SAMPLE_RATE: u32 = 48_000;
pub const DEFAULT_FADE_MS: f64 = 10.0;
pub const DEFAULT_GLIDE_MS: f64 = 30.0;
const PCM_SCALE: f64 = 32767.0;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("invalid tone: {0}")]
    InvalidTone(String),
    #[error("{frequency} Hz is at or above the Nyquist limit of {nyquist} Hz")]
    Nyquist { frequency: f64, nyquist: f64 },
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("expected 16-bit mono PCM, found {channels} channel(s) at {bits} bits")]
    WavFormat { channels: u16, bits: u16 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToneSpec {
    pub frequency_hz: f64,
    pub amplitude: f64,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub fade_ms: f64,
}

impl ToneSpec {
    /// Full-scale tone at 48 kHz with a 10 ms fade.
    pub fn new(frequency_hz: f64, duration_s: f64) -> Self {
        Self { frequency_hz, amplitude: 1.0, sample_rate: DEFAULT_SAMPLE_RATE, duration_s, fade_ms: DEFAULT_FADE_MS }
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        if self.sample_rate == 0 {
            return Err(AudioError::InvalidTone("sample rate must be positive".into()));
        }
        check_frequency(self.frequency_hz, self.sample_rate)?;
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return Err(AudioError::InvalidTone(format!("amplitude must lie in (0, 1], got {}", self.amplitude)));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(AudioError::InvalidTone(format!("duration must be positive, got {} s", self.duration_s)));
        }
        if !(self.fade_ms >= 0.0 && self.fade_ms.is_finite()) {
            return Err(AudioError::InvalidTone(format!("fade must be non-negative, got {} ms", self.fade_ms)));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s * f64::from(self.sample_rate)).round() as usize
    }
}

fn check_frequency(frequency: f64, sample_rate: u32) -> Result<(), AudioError> {
    let nyquist = f64::from(sample_rate) / 2.0;
    if !(frequency > 0.0) || !frequency.is_finite() {
        return Err(AudioError::InvalidTone(format!("frequency must be positive, got {frequency} Hz")));
    }
    if frequency >= nyquist {
        return Err(AudioError::Nyquist { frequency, nyquist });
    }
    Ok(())
}

/// `s[k] = A·env(k)·sin(2π·f·k/sr)`, where `env` ramps linearly from 0 to 1
/// over the first `fade_ms` and back down over the last.
pub fn render_tone(spec: &ToneSpec) -> Result<Vec<f32>, AudioError> {
    spec.validate()?;
    let n = spec.sample_count();
    let sr = f64::from(spec.sample_rate);
    let fade = ((spec.fade_ms * sr / 1000.0).round() as usize).min(n / 2);
    Ok((0..n)
        .map(|k| {
            let env = if fade == 0 { 1.0 } else { (k.min(n - 1 - k) as f64 / fade as f64).min(1.0) };
            (spec.amplitude * env * (TAU * spec.frequency_hz * k as f64 / sr).sin()) as f32
        })
        .collect())
}

fn wav_spec(sample_rate: u32) -> hound::WavSpec {
    hound::WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int }
}

fn quantize(s: f32) -> i16 {
    // f64::round rounds half away from zero.
    (f64::from(s).clamp(-1.0, 1.0) * PCM_SCALE).round() as i16
}

/// The complete RIFF/WAVE file for `samples`: 16-bit mono PCM.
pub fn wav_bytes(samples: &[f32], sample_rate: u32) -> Result<Vec<u8>, AudioError> {
    let mut cursor = Cursor::new(Vec::with_capacity(44 + 2 * samples.len()));
    {
        let mut writer = hound::WavWriter::new(&mut cursor, wav_spec(sample_rate))?;
        let mut w16 = writer.get_i16_writer(samples.len() as u32);
        for &s in samples {
            w16.write_sample(quantize(s));
        }
        w16.flush()?;
        writer.finalize()?;
    }
    Ok(cursor.into_inner())
}

pub fn write_wav(samples: &[f32], sample_rate: u32, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let mut writer = hound::WavWriter::create(path, wav_spec(sample_rate))?;
    for &s in samples {
        writer.write_sample(quantize(s))?;
    }
    writer.finalize()?;
    Ok(())
}

/// Samples scaled back to `[-1, 1]`, and the sample rate.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f32>, u32), AudioError> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(AudioError::WavFormat { channels: spec.channels, bits: spec.bits_per_sample });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| (f64::from(v) / PCM_SCALE) as f32))
        .collect::<Result<_, _>>()?;
    Ok((samples, spec.sample_rate))
}

/// Phase-accumulating oscillator whose frequency glides linearly to each
/// new target.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamState {
    phase: f64,
    frequency: f64,
    target: f64,
    step: f64,
    glide_left: usize,
    amplitude: f64,
    sample_rate: u32,
    glide_ms: f64,
}

impl StreamState {
    pub fn new(frequency_hz: f64, amplitude: f64, sample_rate: u32) -> Result<Self, AudioError> {
        ToneSpec { frequency_hz, amplitude, sample_rate, duration_s: 1.0, fade_ms: 0.0 }.validate()?;
        Ok(Self {
            phase: 0.0,
            frequency: frequency_hz,
            target: frequency_hz,
            step: 0.0,
            glide_left: 0,
            amplitude,
            sample_rate,
            glide_ms: DEFAULT_GLIDE_MS,
        })
    }

    pub fn with_glide_ms(mut self, glide_ms: f64) -> Self {
        self.glide_ms = glide_ms.max(0.0);
        self
    }

    /// Current phase in `[0, 2π)`.
    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    /// Samples of glide still to run.
    pub fn glide_remaining(&self) -> usize {
        self.glide_left
    }

    /// Starts a linear glide from the current frequency to `frequency_hz`.
    /// Retargeting to the frequency already sounding changes nothing.
    pub fn retarget(&mut self, frequency_hz: f64) -> Result<(), AudioError> {
        check_frequency(frequency_hz, self.sample_rate)?;
        if frequency_hz == self.target && (self.glide_left > 0 || frequency_hz == self.frequency) {
            return Ok(());
        }
        let samples = (self.glide_ms * f64::from(self.sample_rate) / 1000.0).round() as usize;
        self.target = frequency_hz;
        if samples == 0 {
            self.frequency = frequency_hz;
            self.glide_left = 0;
        } else {
            self.step = (frequency_hz - self.frequency) / samples as f64;
            self.glide_left = samples;
        }
        Ok(())
    }

    /// Fills `out` and returns the number of samples written.
    pub fn fill(&mut self, out: &mut [f32]) -> usize {
        let sr = f64::from(self.sample_rate);
        for s in out.iter_mut() {
            *s = (self.amplitude * self.phase.sin()) as f32;
            if self.glide_left > 0 {
                self.glide_left -= 1;
                self.frequency = if self.glide_left == 0 { self.target } else { self.frequency + self.step };
            }
            self.phase = (self.phase + TAU * self.frequency / sr).rem_euclid(TAU);
        }
        out.len()
    }

    /// Applies every pending retarget from `commands`, latest last, then
    /// fills `out`. Never blocks.
    pub fn fill_from(&mut self, commands: &Receiver<f64>, out: &mut [f32]) -> usize {
        while let Ok(f) = commands.try_recv() {
            if let Err(e) = self.retarget(f) {
                log::warn!("ignoring retarget: {e}");
            }
        }
        self.fill(out)
    }

    pub fn next_samples(&mut self, n: usize) -> Vec<f32> {
        let mut out = vec![0.0; n];
        self.fill(&mut out);
        out
    }
}
