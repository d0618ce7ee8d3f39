#include "hybridsep/audio_io.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace hybridsep::audio_io {

namespace {

uint32_t read_u32(const unsigned char* p) { return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<uint32_t>(p[3]) << 24); }
uint16_t read_u16(const unsigned char* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::vector<unsigned char>& out, uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

double bessel_i0(double x) {
  double sum = 1.0, term = 1.0, q = 0.25 * x * x;
  for (int k = 1; k < 100; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

}  // namespace

dsp::Waveform read_wav(const std::string& path, int target_rate_hz) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error(path + ": not a RIFF/WAVE file");

  int format = -1, channels = 0, bits = 0;
  uint32_t rate = 0;
  const unsigned char* data = nullptr;
  size_t data_size = 0;
  size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* chunk = buf.data() + pos;
    uint32_t size = read_u32(chunk + 4);
    size_t body = pos + 8;
    if (body + size > buf.size()) size = static_cast<uint32_t>(buf.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0 && size >= 16) {
      format = read_u16(buf.data() + body);
      channels = read_u16(buf.data() + body + 2);
      rate = read_u32(buf.data() + body + 4);
      bits = read_u16(buf.data() + body + 14);
      if (format == 0xFFFE && size >= 26) format = read_u16(buf.data() + body + 24);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = buf.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1);
  }
  if (format < 0 || data == nullptr) throw std::runtime_error(path + ": missing fmt or data chunk");
  if (channels < 1) throw std::runtime_error(path + ": bad channel count");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) throw std::runtime_error(path + ": only 16-bit PCM and 32-bit float WAV are supported");

  const size_t bytes = bits / 8;
  const size_t frames = data_size / (bytes * channels);
  dsp::Waveform wave;
  wave.sample_rate_hz = static_cast<int>(rate);
  wave.samples.resize(frames);
  for (size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * bytes;
      if (pcm16) {
        acc += static_cast<int16_t>(read_u16(p)) / 32768.0;
      } else {
        uint32_t u = read_u32(p);
        float f;
        std::memcpy(&f, &u, 4);
        acc += f;
      }
    }
    wave.samples[i] = acc / channels;
  }
  if (target_rate_hz > 0 && target_rate_hz != wave.sample_rate_hz) return resample(wave, target_rate_hz);
  return wave;
}

void write_wav(const std::string& path, const dsp::Waveform& wave, SampleFormat format) {
  const bool pcm16 = format == SampleFormat::kPcm16;
  const uint16_t bits = pcm16 ? 16 : 32;
  const uint32_t data_size = static_cast<uint32_t>(wave.samples.size() * (bits / 8));
  std::vector<unsigned char> out;
  out.reserve(44 + data_size);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_size);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, pcm16 ? 1 : 3);
  put_u16(out, 1);
  put_u32(out, static_cast<uint32_t>(wave.sample_rate_hz));
  put_u32(out, static_cast<uint32_t>(wave.sample_rate_hz) * (bits / 8));
  put_u16(out, bits / 8);
  put_u16(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_size);
  for (double v : wave.samples) {
    if (pcm16) {
      double s = std::round(std::clamp(v, -1.0, 1.0) * 32768.0);
      put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(std::clamp(s, -32768.0, 32767.0))));
    } else {
      float f = static_cast<float>(v);
      uint32_t u;
      std::memcpy(&u, &f, 4);
      put_u32(out, u);
    }
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

dsp::Waveform resample(const dsp::Waveform& wave, int target_rate_hz) {
  if (target_rate_hz <= 0) throw std::invalid_argument("target sample rate must be positive");
  if (target_rate_hz == wave.sample_rate_hz) return wave;
  const int64_t g = std::gcd(static_cast<int64_t>(wave.sample_rate_hz), static_cast<int64_t>(target_rate_hz));
  const int64_t up = target_rate_hz / g, down = wave.sample_rate_hz / g;
  const double scale = std::min(1.0, static_cast<double>(up) / down);
  const double cutoff = 0.95 * scale;
  constexpr int kZeros = 16;
  constexpr double kBeta = 8.6;
  const int64_t half = static_cast<int64_t>(std::ceil(kZeros / cutoff));

  // One kernel per output phase; phase p corresponds to a fractional offset p/up.
  std::vector<std::vector<double>> phases(static_cast<size_t>(up), std::vector<double>(2 * half));
  const double i0b = bessel_i0(kBeta);
  for (int64_t p = 0; p < up; ++p) {
    const double frac = static_cast<double>(p) / up;
    for (int64_t j = 0; j < 2 * half; ++j) {
      double t = frac + static_cast<double>(half - 1 - j);  // distance from tap to output time
      double x = cutoff * t;
      double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
      double r = t / static_cast<double>(half);
      double win = std::abs(r) >= 1.0 ? 0.0 : bessel_i0(kBeta * std::sqrt(1.0 - r * r)) / i0b;
      phases[p][j] = cutoff * sinc * win;
    }
  }
  const int64_t n_in = wave.size();
  const int64_t n_out = (n_in * up + down - 1) / down;
  dsp::Waveform out;
  out.sample_rate_hz = target_rate_hz;
  out.samples.assign(static_cast<size_t>(n_out), 0.0);
  for (int64_t n = 0; n < n_out; ++n) {
    const int64_t num = n * down;
    const int64_t i0 = num / up, p = num % up;
    const auto& h = phases[p];
    double acc = 0.0;
    for (int64_t j = 0; j < 2 * half; ++j) {
      int64_t idx = i0 - half + 1 + j;
      if (idx >= 0 && idx < n_in) acc += h[j] * wave.samples[idx];
    }
    out.samples[n] = acc;
  }
  return out;
}

}  // namespace hybridsep::audio_io
