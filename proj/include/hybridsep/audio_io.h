#pragma once

#include <string>

#include "hybridsep/dsp.h"

namespace hybridsep::audio_io {

enum class SampleFormat { kPcm16, kFloat32 };

/// Reads a PCM-16 or float-32 WAV file. Multi-channel files are averaged to
/// mono. When target_rate_hz > 0 and differs from the file rate, the signal
/// is resampled with resample().
dsp::Waveform read_wav(const std::string& path, int target_rate_hz = 0);

/// Writes a mono WAV file; PCM-16 output is clipped to [-1, 1).
void write_wav(const std::string& path, const dsp::Waveform& wave, SampleFormat format = SampleFormat::kPcm16);

/// Rational polyphase resampler with a Kaiser-windowed sinc kernel
/// (16 zero crossings per side, beta 8.6, cutoff at 0.95 of the lower Nyquist).
dsp::Waveform resample(const dsp::Waveform& wave, int target_rate_hz);

}  // namespace hybridsep::audio_io
