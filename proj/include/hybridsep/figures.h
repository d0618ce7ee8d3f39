#pragma once

// Spectrogram images for case studies: panels side by side, one per waveform.

#include <array>
#include <string>
#include <vector>

#include "hybridsep/dsp.h"

namespace hybridsep::figures {

/// Colour scale: dB relative to the loudest bin over all panels, clipped to
/// [kDbFloor, 0]; black at the floor through red and yellow to white at 0 dB.
constexpr double kDbFloor = -80.0;

struct SpectrogramOptions {
  int64_t n_fft = 512;
  int64_t hop = 128;
  int gap_px = 4;  // white separator between panels
};

/// Maps a dB value in [kDbFloor, 0] to RGB.
std::array<unsigned char, 3> colour_for_db(double db);

/// Writes an 8-bit RGB PNG with one panel per waveform, low frequencies at the
/// bottom. Panels may differ in length; shorter ones are padded with the floor
/// colour. Returns the image size {width, height}.
std::array<int, 2> write_spectrogram_png(const std::string& path, const std::vector<dsp::Waveform>& panels,
                                         const SpectrogramOptions& opts = {});

}  // namespace hybridsep::figures
