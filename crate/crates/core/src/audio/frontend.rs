use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{build_mel_filterbank, AudioBuffer, AudioError, MelFilterbank, SAMPLE_RATE_HZ};

/// 40 ms analysis frame.
pub const FRAME_LEN: usize = 640;
/// 20 ms hop (50% overlap).
pub const FRAME_HOP: usize = 320;
/// 20 ms sub-window.
pub const SUB_WINDOW_LEN: usize = 320;
/// Sub-window starts relative to the frame start: 5 ms and 15 ms.
pub const SUB_WINDOW_OFFSETS: [usize; 2] = [80, 240];
/// Three 80-bin blocks.
pub const FRAME_DIM: usize = 240;

#[derive(Clone, Debug, PartialEq)]
pub struct FrontEndConfig {
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    /// Added to mel energies before the log.
    pub floor: f64,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            n_mels: 80,
            fmin_hz: 125.0,
            fmax_hz: 7600.0,
            floor: 1e-5,
        }
    }
}

/// 240 log-mel energies: the full 40 ms window followed by the 5-25 ms and
/// 15-35 ms sub-windows.
#[derive(Clone, Debug, PartialEq)]
pub struct DualWindowFrame {
    pub bins: Vec<f32>,
    pub frame_index: usize,
}

impl DualWindowFrame {
    pub const HOP_MS: u32 = 20;

    /// The 80-bin block of the full 40 ms window.
    pub fn long_block(&self) -> &[f32] {
        &self.bins[..self.bins.len() / 3]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<DualWindowFrame>,
    pub source_id: String,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Row-major `T x 240` copy of all frames.
    pub fn to_matrix(&self) -> Vec<f32> {
        self.frames.iter().flat_map(|f| f.bins.iter().copied()).collect()
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Reusable dual-window analysis: filterbank, FFT plan and windows.
#[derive(Clone)]
pub struct FrontEnd {
    fb: MelFilterbank,
    floor: f64,
    fft: Arc<dyn Fft<f64>>,
    long_window: Vec<f64>,
    short_window: Vec<f64>,
}

impl std::fmt::Debug for FrontEnd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrontEnd")
            .field("n_mels", &self.fb.n_mels())
            .field("n_fft", &self.fb.n_fft())
            .field("floor", &self.floor)
            .finish()
    }
}

impl FrontEnd {
    pub fn new(config: &FrontEndConfig) -> Result<Self, AudioError> {
        let fb = build_mel_filterbank(
            config.n_fft,
            config.n_mels,
            config.fmin_hz,
            config.fmax_hz,
            SAMPLE_RATE_HZ,
        )?;
        Ok(Self::with_filterbank(fb, config.floor))
    }

    pub fn with_filterbank(fb: MelFilterbank, floor: f64) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(fb.n_fft());
        Self {
            fb,
            floor,
            fft,
            long_window: hann_window(FRAME_LEN),
            short_window: hann_window(SUB_WINDOW_LEN),
        }
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.fb
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn frame_dim(&self) -> usize {
        3 * self.fb.n_mels()
    }

    /// One-sided power spectrum `|X_k|^2`, `k = 0..=n_fft/2`, of a windowed
    /// block zero-padded to `n_fft`.
    pub fn power_spectrum(&self, windowed: &[f64]) -> Vec<f64> {
        let n_fft = self.fb.n_fft();
        debug_assert!(windowed.len() <= n_fft);
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        for (b, &x) in buf.iter_mut().zip(windowed) {
            b.re = x;
        }
        self.fft.process(&mut buf);
        buf[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    fn log_mel_block(&self, samples: &[f32], window: &[f64], out: &mut [f32]) {
        let windowed: Vec<f64> = samples.iter().zip(window).map(|(&s, &w)| s as f64 * w).collect();
        let energies = self.fb.apply(&self.power_spectrum(&windowed));
        for (o, e) in out.iter_mut().zip(energies) {
            *o = (e + self.floor).ln() as f32;
        }
    }

    /// Frame starting at `start`, computed from raw samples.
    pub fn frame_bins(&self, samples: &[f32], start: usize) -> Result<Vec<f32>, AudioError> {
        if start + FRAME_LEN > samples.len() {
            return Err(AudioError::OutOfBounds {
                start,
                needed: FRAME_LEN,
                len: samples.len(),
            });
        }
        let n_mels = self.fb.n_mels();
        let mut bins = vec![0.0f32; 3 * n_mels];
        self.log_mel_block(
            &samples[start..start + FRAME_LEN],
            &self.long_window,
            &mut bins[..n_mels],
        );
        for (block, &offset) in SUB_WINDOW_OFFSETS.iter().enumerate() {
            let s = start + offset;
            self.log_mel_block(
                &samples[s..s + SUB_WINDOW_LEN],
                &self.short_window,
                &mut bins[(block + 1) * n_mels..(block + 2) * n_mels],
            );
        }
        Ok(bins)
    }

    pub fn frame_at(&self, audio: &AudioBuffer, start: usize) -> Result<DualWindowFrame, AudioError> {
        Ok(DualWindowFrame {
            bins: self.frame_bins(audio.samples(), start)?,
            frame_index: start / FRAME_HOP,
        })
    }

    /// Number of frames for `len` samples (zero if shorter than one frame).
    pub fn frame_count(len: usize) -> usize {
        if len < FRAME_LEN {
            0
        } else {
            (len - FRAME_LEN) / FRAME_HOP + 1
        }
    }

    /// Frames at 0, 320, 640, ... samples.
    pub fn frame_utterance(&self, audio: &AudioBuffer) -> Result<FrameSequence, AudioError> {
        self.frame_utterance_named(audio, "")
    }

    pub fn frame_utterance_named(
        &self,
        audio: &AudioBuffer,
        source_id: &str,
    ) -> Result<FrameSequence, AudioError> {
        if audio.len() < FRAME_LEN {
            return Err(AudioError::TooShort {
                len: audio.len(),
                needed: FRAME_LEN,
            });
        }
        let frames = (0..Self::frame_count(audio.len()))
            .map(|i| {
                Ok(DualWindowFrame {
                    bins: self.frame_bins(audio.samples(), i * FRAME_HOP)?,
                    frame_index: i,
                })
            })
            .collect::<Result<Vec<_>, AudioError>>()?;
        Ok(FrameSequence {
            frames,
            source_id: source_id.to_string(),
        })
    }
}

/// One dual-window frame; builds a throwaway [`FrontEnd`].
pub fn dual_window_frame(
    audio: &AudioBuffer,
    frame_start_sample: usize,
    fb: &MelFilterbank,
    floor: f64,
) -> Result<DualWindowFrame, AudioError> {
    FrontEnd::with_filterbank(fb.clone(), floor).frame_at(audio, frame_start_sample)
}

pub fn frame_utterance(
    audio: &AudioBuffer,
    fb: &MelFilterbank,
    floor: f64,
) -> Result<FrameSequence, AudioError> {
    FrontEnd::with_filterbank(fb.clone(), floor).frame_utterance(audio)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, amp: f64, len: usize) -> AudioBuffer {
        AudioBuffer::new(
            (0..len)
                .map(|n| (amp * (2.0 * std::f64::consts::PI * freq * n as f64 / 16000.0).sin()) as f32)
                .collect(),
        )
        .unwrap()
    }

    fn frontend() -> FrontEnd {
        FrontEnd::new(&FrontEndConfig::default()).unwrap()
    }

    #[test]
    fn frame_counts() {
        let fe = frontend();
        for (len, count) in [(640, 1), (959, 1), (960, 2), (16000, 49)] {
            assert_eq!(fe.frame_utterance(&AudioBuffer::silence(len)).unwrap().len(), count);
        }
        assert!(matches!(
            fe.frame_utterance(&AudioBuffer::silence(639)),
            Err(AudioError::TooShort { .. })
        ));
    }

    #[test]
    fn out_of_bounds_frame() {
        let fe = frontend();
        assert!(matches!(
            fe.frame_at(&AudioBuffer::silence(1000), 361),
            Err(AudioError::OutOfBounds { .. })
        ));
        assert!(fe.frame_at(&AudioBuffer::silence(1000), 360).is_ok());
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let fe = frontend();
        let f = fe.frame_at(&AudioBuffer::silence(640), 0).unwrap();
        assert_eq!(f.bins.len(), 240);
        let floor = (1e-5f64).ln() as f32;
        assert!(f.bins.iter().all(|&b| b == floor));
    }

    #[test]
    fn sine_peaks_at_nearest_filter() {
        let fe = frontend();
        let nearest = fe
            .filterbank()
            .centers_hz()
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        let f = fe.frame_at(&sine(1000.0, 1.0, 640), 0).unwrap();
        for block in f.bins.chunks(80) {
            let argmax = block.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(argmax, nearest);
        }
    }

    #[test]
    fn doubling_amplitude_adds_log4() {
        let fe = frontend();
        let a = fe.frame_at(&sine(1000.0, 0.25, 640), 0).unwrap();
        let b = fe.frame_at(&sine(1000.0, 0.5, 640), 0).unwrap();
        let mut checked = 0;
        for (x, y) in a.bins.iter().zip(&b.bins) {
            if (*x as f64) > (1e-5f64).ln() + 12.0 {
                assert!(((y - x) as f64 - 4f64.ln()).abs() < 1e-3, "{x} -> {y}");
                checked += 1;
            }
        }
        assert!(checked >= 3);
    }

    #[test]
    fn parseval() {
        let fe = frontend();
        let x: Vec<f64> = sine(440.0, 0.7, 640)
            .samples()
            .iter()
            .zip(hann_window(640))
            .map(|(&s, w)| s as f64 * w)
            .collect();
        let p = fe.power_spectrum(&x);
        let n = 1024;
        let spectral: f64 = p[0] + p[n / 2] + 2.0 * p[1..n / 2].iter().sum::<f64>();
        let temporal: f64 = x.iter().map(|v| v * v).sum();
        assert!((spectral / n as f64 - temporal).abs() / temporal < 1e-6);
    }

    #[test]
    fn shift_by_one_hop_shifts_frames() {
        let fe = frontend();
        let base: Vec<f32> = (0..4000).map(|n| ((n as f32) * 0.37).sin() * 0.3).collect();
        let mut shifted = vec![0.0f32; FRAME_HOP];
        shifted.extend_from_slice(&base);
        let a = fe.frame_utterance(&AudioBuffer::new(base).unwrap()).unwrap();
        let b = fe.frame_utterance(&AudioBuffer::new(shifted).unwrap()).unwrap();
        assert_eq!(b.len(), a.len() + 1);
        for (fa, fb) in a.frames.iter().zip(&b.frames[1..]) {
            assert_eq!(fa.bins, fb.bins);
        }
    }

    #[test]
    fn free_functions_match_frontend() {
        let fe = frontend();
        let audio = sine(300.0, 0.4, 2000);
        let a = dual_window_frame(&audio, 320, fe.filterbank(), 1e-5).unwrap();
        assert_eq!(a, fe.frame_at(&audio, 320).unwrap());
        assert_eq!(a.frame_index, 1);
        let seq = frame_utterance(&audio, fe.filterbank(), 1e-5).unwrap();
        assert_eq!(seq.frames[1], a);
    }
}
