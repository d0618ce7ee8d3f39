#pragma once

#include <string>
#include <vector>

#include "hybridsep/dsp.h"
#include "hybridsep/encoders.h"

namespace hybridsep::metrics {

/// Value returned by sdr() when the estimate matches the reference exactly.
constexpr double kSdrCapDb = 200.0;

/// 10 log10(|ref|^2 / |ref - est|^2), capped at kSdrCapDb.
double sdr(const dsp::Waveform& reference, const dsp::Waveform& estimate);
/// Scale-invariant variant: the reference is first scaled by its projection on the estimate.
double si_sdr(const dsp::Waveform& reference, const dsp::Waveform& estimate);
/// sdr(ref, est) - sdr(ref, mixture); the si variant when `scale_invariant`.
double sdri(const dsp::Waveform& reference, const dsp::Waveform& estimate, const dsp::Waveform& mixture,
            bool scale_invariant = false);

/// 100 x cosine(audio(estimate), text(query)).
double clap_score(const dsp::Waveform& estimate, const std::string& query, const encoders::EncoderSuite& suite);
/// 100 x cosine(audio(estimate), audio(target)).
double clap_score_a(const dsp::Waveform& estimate, const dsp::Waveform& target, const encoders::EncoderSuite& suite);

/// Frechet distance between Gaussian fits of two embedding sets:
/// |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2).
/// A ridge of 1e-6 is added to a covariance only when it is singular (for
/// example when a set has no more points than dimensions).
double fad(const std::vector<std::vector<double>>& set_a, const std::vector<std::vector<double>>& set_b);

}  // namespace hybridsep::metrics
