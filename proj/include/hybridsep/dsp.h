#pragma once

// Signal substrate: waveforms, the 4-band pseudo-QMF filterbank and the
// short-time Fourier transform. Multi-dimensional results are Tensors; the
// batched variants are differentiable.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hybridsep/tensor.h"

namespace hybridsep::dsp {

struct Waveform {
  std::vector<double> samples;
  int sample_rate_hz = 16000;

  int64_t size() const { return static_cast<int64_t>(samples.size()); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
};

/// Throws std::invalid_argument unless the waveform is nonempty, finite and has a positive rate.
void validate(const Waveform& wave);

// ---------------------------------------------------------------------------
// PQMF

struct PQMFBank {
  int num_bands = 4;
  int taps_len = 0;
  std::vector<double> prototype_taps;
  /// Cosine-modulated filters, [band][tap], sqrt(num_bands) gain each side.
  std::vector<std::vector<double>> analysis_filters;
  std::vector<std::vector<double>> synthesis_filters;
  double cutoff_rad = 0.0;  // prototype cutoff, radians/sample
  double kaiser_beta = 0.0;
  /// Achieved round-trip reconstruction error on white noise, as positive dB.
  double stopband_atten_db = 0.0;

  /// Round-trip delay of the causal filterbank.
  int delay() const { return taps_len - 1; }
};

class PqmfDesignError : public std::runtime_error {
 public:
  PqmfDesignError(const std::string& msg, double achieved_db)
      : std::runtime_error(msg), achieved_db_(achieved_db) {}
  double achieved_db() const { return achieved_db_; }

 private:
  double achieved_db_;
};

/// Kaiser-windowed cosine-modulated prototype; the cutoff is tuned by scalar
/// search to minimise the expected white-noise round-trip error.
/// Throws std::invalid_argument on bad arguments and PqmfDesignError when the
/// achieved round-trip error does not reach -target_atten_db.
PQMFBank design_pqmf(int num_bands, int taps_len, double target_atten_db);

/// Expected round-trip error power for unit white noise, in dB (negative).
double pqmf_expected_roundtrip_error_db(const PQMFBank& bank);

enum class PqmfAlignment {
  /// Analysis samples are centred on the input and synthesis removes the
  /// filterbank delay, so synthesize(analyze(x)) ~ x sample-aligned.
  kCompensated,
  /// Plain causal filtering: synthesize(analyze(x))[n] ~ x[n - delay()].
  kCausal,
};

/// x [B, T] -> bands [B, 4, ceil(T/4)]. Differentiable.
Tensor pqmf_analyze(const PQMFBank& bank, const Tensor& x, PqmfAlignment align = PqmfAlignment::kCompensated);
/// bands [B, 4, N] -> [B, out_len]; out_len defaults to 4N. Differentiable.
Tensor pqmf_synthesize(const PQMFBank& bank, const Tensor& bands, PqmfAlignment align = PqmfAlignment::kCompensated,
                       int64_t out_len = -1);

/// Waveform -> [4, ceil(T/4)]; requires T >= taps_len.
Tensor pqmf_analyze(const PQMFBank& bank, const Waveform& wave, PqmfAlignment align = PqmfAlignment::kCompensated);
/// [4, N] -> waveform of length 4N at `sample_rate_hz`.
Waveform pqmf_synthesize(const PQMFBank& bank, const Tensor& bands, int sample_rate_hz,
                         PqmfAlignment align = PqmfAlignment::kCompensated);

// ---------------------------------------------------------------------------
// STFT

/// Periodic Hann window of length n.
std::vector<double> hann_window(int64_t n);

/// Throws std::invalid_argument unless the Hann window satisfies constant
/// overlap-add at `hop_len` (and hop_len <= window_len).
void check_cola(int64_t window_len, int64_t hop_len);

/// Frames produced for `length` samples: signals are reflect-padded by
/// window_len/2 on both sides, so frames = floor(length / hop_len) + 1.
int64_t stft_frame_count(int64_t length, int64_t window_len, int64_t hop_len);

/// x [..., T] -> complex spectrogram [..., frames, window_len/2 + 1, 2] (re, im).
/// Unnormalised DFT of Hann-windowed frames. Differentiable.
Tensor stft(const Tensor& x, int64_t window_len, int64_t hop_len);

/// Inverse of stft by weighted overlap-add: [..., frames, bins, 2] -> [..., out_len].
Tensor istft(const Tensor& spec, int64_t window_len, int64_t hop_len, int64_t out_len);

/// Magnitude |X| of a [..., 2] complex tensor (no gradient).
Tensor magnitude(const Tensor& spec);

// ---------------------------------------------------------------------------
// Mel features (no gradient)

/// Triangular HTK-mel filterbank [n_mels, n_fft/2 + 1].
std::vector<std::vector<double>> mel_filterbank(int n_mels, int64_t n_fft, int sample_rate_hz, double fmin_hz,
                                                double fmax_hz);

/// Natural-log mel power frames [frames, n_mels] with a floor of `floor_power`.
Tensor log_mel_frames(const Waveform& wave, int64_t n_fft, int64_t hop_len, int n_mels, double floor_power = 1e-10);

}  // namespace hybridsep::dsp
