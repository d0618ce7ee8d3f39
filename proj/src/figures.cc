#include "hybridsep/figures.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace hybridsep::figures {

namespace {

struct FileCloser {
  void operator()(FILE* f) const { std::fclose(f); }
};

// |STFT|^2 as [frames][bins]; signals shorter than one window are zero padded.
std::vector<std::vector<double>> power_frames(const dsp::Waveform& wave, const SpectrogramOptions& o) {
  std::vector<double> x = wave.samples;
  if (static_cast<int64_t>(x.size()) < o.n_fft) x.resize(static_cast<size_t>(o.n_fft), 0.0);
  NoGradGuard guard;
  const int64_t n = static_cast<int64_t>(x.size());
  Tensor spec = dsp::stft(Tensor::from({n}, x), o.n_fft, o.hop);
  const int64_t F = spec.size(0), K = spec.size(1);
  std::vector<std::vector<double>> out(static_cast<size_t>(F), std::vector<double>(static_cast<size_t>(K)));
  auto s = spec.data();
  for (int64_t f = 0; f < F; ++f)
    for (int64_t k = 0; k < K; ++k) {
      const double re = s[(f * K + k) * 2], im = s[(f * K + k) * 2 + 1];
      out[f][k] = re * re + im * im;
    }
  return out;
}

}  // namespace

std::array<unsigned char, 3> colour_for_db(double db) {
  const double t = std::clamp((db - kDbFloor) / -kDbFloor, 0.0, 1.0);
  // black -> red -> yellow -> white in three equal segments
  auto ch = [](double v) { return static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); };
  return {ch(3.0 * t), ch(3.0 * t - 1.0), ch(3.0 * t - 2.0)};
}

std::array<int, 2> write_spectrogram_png(const std::string& path, const std::vector<dsp::Waveform>& panels,
                                         const SpectrogramOptions& opts) {
  if (panels.empty()) throw std::invalid_argument("write_spectrogram_png: no panels");
  std::vector<std::vector<std::vector<double>>> specs;
  double peak = 0.0;
  for (const auto& w : panels) {
    specs.push_back(power_frames(w, opts));
    for (const auto& frame : specs.back())
      for (double p : frame) peak = std::max(peak, p);
  }
  const int bins = static_cast<int>(opts.n_fft / 2 + 1);
  int frames = 0;
  for (const auto& s : specs) frames = std::max(frames, static_cast<int>(s.size()));
  const int n = static_cast<int>(panels.size());
  const int width = n * frames + (n - 1) * opts.gap_px, height = bins;

  std::vector<unsigned char> rgb(static_cast<size_t>(width) * height * 3, 255);
  const auto floor_colour = colour_for_db(kDbFloor);
  for (int p = 0; p < n; ++p) {
    const int x0 = p * (frames + opts.gap_px);
    for (int f = 0; f < frames; ++f)
      for (int k = 0; k < bins; ++k) {
        std::array<unsigned char, 3> c = floor_colour;
        if (f < static_cast<int>(specs[p].size()) && peak > 0.0) {
          const double power = specs[p][f][k];
          c = colour_for_db(power > 0.0 ? 10.0 * std::log10(power / peak) : kDbFloor);
        }
        const int row = bins - 1 - k;
        std::copy(c.begin(), c.end(), rgb.begin() + (static_cast<size_t>(row) * width + x0 + f) * 3);
      }
  }

  std::unique_ptr<FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + path);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < height; ++r) png_write_row(png, rgb.data() + static_cast<size_t>(r) * width * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return {width, height};
}

}  // namespace hybridsep::figures
