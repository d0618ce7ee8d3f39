#pragma once

// Thin FFTW wrapper: cached real<->complex plans per transform size.

#include <complex>
#include <cstdint>
#include <span>

namespace hybridsep::fft {

/// Unnormalised forward DFT of n real samples into n/2 + 1 bins.
void rfft(std::span<const double> in, std::span<std::complex<double>> out);

/// Unnormalised inverse: n/2 + 1 Hermitian bins -> n real samples
/// (out[j] = sum over the full Hermitian spectrum, no 1/n factor).
void irfft_unnormalized(std::span<const std::complex<double>> in, std::span<double> out);

}  // namespace hybridsep::fft
