//! Instrument body: convolution of the string signal with a measured impulse
//! response, and the commuted variant that convolves the force instead.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::config::AudioBuffer;
use crate::error::{Error, Result};
use crate::modal::ModalBank;
use crate::waveguide::{render_string, LoopPlan};

/// Peak level the convolved output is normalized to.
pub const OUTPUT_PEAK_DBFS: f64 = -1.0;

/// Body impulse response. Must share the render sample rate; nothing is resampled.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyIR {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl BodyIR {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::validation("ir", "impulse response is empty"));
        }
        let buf = AudioBuffer::new(samples, sample_rate)?;
        Ok(Self {
            sample_rate: buf.sample_rate(),
            samples: buf.into_samples(),
        })
    }

    pub fn from_audio(audio: AudioBuffer) -> Result<Self> {
        Self::new(audio.samples().to_vec(), audio.sample_rate())
    }

    /// The identity IR, [1].
    pub fn unit(sample_rate: f64) -> Self {
        Self {
            samples: vec![1.0],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    fn check_rate(&self, rate: f64) -> Result<()> {
        if rate != self.sample_rate {
            return Err(Error::SampleRateMismatch {
                signal: rate,
                ir: self.sample_rate,
            });
        }
        Ok(())
    }
}

/// Full linear convolution by FFT overlap-add; output length is
/// `x.len() + h.len() − 1`.
pub fn fast_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    let fft_len = (2 * h.len()).max(1024).next_power_of_two();
    let block = fft_len - h.len() + 1;

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(fft_len);
    let inverse = planner.plan_fft_inverse(fft_len);

    let mut h_spec: Vec<Complex64> = (0..fft_len)
        .map(|i| Complex64::new(h.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    forward.process(&mut h_spec);

    let scale = 1.0 / fft_len as f64;
    let mut out = vec![0.0; out_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
    for start in (0..x.len()).step_by(block) {
        let chunk = &x[start..(start + block).min(x.len())];
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(chunk.get(i).copied().unwrap_or(0.0), 0.0);
        }
        forward.process(&mut buf);
        for (b, hs) in buf.iter_mut().zip(&h_spec) {
            *b *= hs;
        }
        inverse.process(&mut buf);
        let valid = (chunk.len() + h.len() - 1).min(out_len - start);
        for (o, b) in out[start..start + valid].iter_mut().zip(&buf) {
            *o += b.re * scale;
        }
    }
    out
}

/// Convolves the string signal with the body IR. With `normalize`, the result
/// is scaled to a −1 dBFS peak.
pub fn convolve_body(
    string_signal: &AudioBuffer,
    ir: &BodyIR,
    normalize: bool,
) -> Result<AudioBuffer> {
    ir.check_rate(string_signal.sample_rate())?;
    let out = AudioBuffer::new(
        fast_convolve(string_signal.samples(), ir.samples()),
        string_signal.sample_rate(),
    )?;
    Ok(if normalize {
        out.normalized_to(OUTPUT_PEAK_DBFS)
    } else {
        out
    })
}

/// Commuted synthesis: the IR is convolved with the excitation force, and the
/// result drives the modal bank and the waveguide loop.
///
/// The modal output is handed to the loop over the whole `length`, since the
/// convolved force lasts as long as the IR. By linearity this equals
/// `convolve_body(render_string(bank.render_driven(force)))` truncated to `length`.
pub fn commuted_render(
    excitation_force: &AudioBuffer,
    ir: &BodyIR,
    plan: &LoopPlan,
    bank: &ModalBank,
    length: usize,
) -> Result<AudioBuffer> {
    ir.check_rate(excitation_force.sample_rate())?;
    if bank.sample_rate() != ir.sample_rate() {
        return Err(Error::SampleRateMismatch {
            signal: bank.sample_rate(),
            ir: ir.sample_rate(),
        });
    }
    let force = fast_convolve(excitation_force.samples(), ir.samples());
    let excitation = bank.render_driven(&force, length);
    Ok(render_string(&excitation, plan, length))
}

/// The post-convolved counterpart of [`commuted_render`], truncated to `length`.
pub fn post_convolved_render(
    excitation_force: &AudioBuffer,
    ir: &BodyIR,
    plan: &LoopPlan,
    bank: &ModalBank,
    length: usize,
) -> Result<AudioBuffer> {
    let excitation = bank.render_driven(excitation_force.samples(), length);
    let string = render_string(&excitation, plan, length);
    Ok(convolve_body(&string, ir, false)?.truncated(length))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len() + h.len() - 1];
        for (i, a) in x.iter().enumerate() {
            for (j, b) in h.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        out
    }

    #[test]
    fn unit_ir_is_identity() {
        let x = AudioBuffer::new(vec![0.5, -0.25, 1.0, 0.0, 0.125], 48_000.0).unwrap();
        let y = convolve_body(&x, &BodyIR::unit(48_000.0), false).unwrap();
        assert_eq!(y.len(), x.len());
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn shifted_impulse_delays_by_one() {
        let x = AudioBuffer::new(vec![0.5, -0.25, 1.0], 48_000.0).unwrap();
        let ir = BodyIR::new(vec![0.0, 1.0], 48_000.0).unwrap();
        let y = convolve_body(&x, &ir, false).unwrap();
        let expected = [0.0, 0.5, -0.25, 1.0];
        assert_eq!(y.len(), 4);
        for (a, b) in expected.iter().zip(y.samples()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn overlap_add_matches_direct_sum_across_block_edges() {
        let x: Vec<f64> = (0..5000)
            .map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0)
            .collect();
        let h: Vec<f64> = (0..700).map(|i| (-(i as f64) / 100.0).exp()).collect();
        let fast = fast_convolve(&x, &h);
        let slow = direct(&x, &h);
        assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rate_mismatch_is_rejected() {
        let x = AudioBuffer::new(vec![1.0], 48_000.0).unwrap();
        let ir = BodyIR::unit(44_100.0);
        assert!(matches!(
            convolve_body(&x, &ir, false),
            Err(Error::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn normalization_hits_minus_one_dbfs() {
        let x = AudioBuffer::new(vec![0.1, -0.3, 0.2], 48_000.0).unwrap();
        let y = convolve_body(&x, &BodyIR::unit(48_000.0), true).unwrap();
        assert!((y.peak() - 10f64.powf(-1.0 / 20.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_ir_is_rejected() {
        assert!(BodyIR::new(vec![], 48_000.0).is_err());
    }

    #[test]
    fn convolution_is_linear() {
        let x: Vec<f64> = (0..3000).map(|i| ((i * 31) % 17) as f64 - 8.0).collect();
        let y: Vec<f64> = (0..3000).map(|i| ((i * 7) % 13) as f64 / 13.0).collect();
        let h: Vec<f64> = (0..400)
            .map(|i| (-(i as f64) / 50.0).exp() * (i as f64 * 0.3).cos())
            .collect();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let lhs = fast_convolve(&mix, &h);
        let cx = fast_convolve(&x, &h);
        let cy = fast_convolve(&y, &h);
        for i in 0..lhs.len() {
            assert!((lhs[i] - (2.0 * cx[i] - 0.5 * cy[i])).abs() < 1e-9);
        }
    }
}
