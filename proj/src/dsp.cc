#include "hybridsep/dsp.h"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <memory>

#include "fft.h"

namespace hybridsep::dsp {

namespace {

using ImplPtr = std::shared_ptr<detail::TensorImpl>;
using cd = std::complex<double>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Zeroth-order modified Bessel function of the first kind (power series).
double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = 0.25 * x * x;
  for (int k = 1; k < 200; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

std::vector<double> kaiser_window(int n, double beta) {
  std::vector<double> w(n);
  const double denom = bessel_i0(beta);
  for (int i = 0; i < n; ++i) {
    double r = n == 1 ? 0.0 : 2.0 * i / (n - 1) - 1.0;
    w[i] = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / denom;
  }
  return w;
}

// Kaiser's empirical beta for a stopband attenuation in dB.
double kaiser_beta_for(double atten_db) {
  if (atten_db > 50.0) return 0.1102 * (atten_db - 8.7);
  if (atten_db >= 21.0) return 0.5842 * std::pow(atten_db - 21.0, 0.4) + 0.07886 * (atten_db - 21.0);
  return 0.0;
}

void build_filters(PQMFBank& bank, double cutoff, double beta) {
  const int L = bank.taps_len, M = bank.num_bands;
  const double center = 0.5 * (L - 1);
  auto win = kaiser_window(L, beta);
  bank.prototype_taps.assign(L, 0.0);
  for (int n = 0; n < L; ++n) {
    double t = n - center;  // half-integer for even L, never zero
    double ideal = std::abs(t) < 1e-12 ? cutoff / M_PI : std::sin(cutoff * t) / (M_PI * t);
    bank.prototype_taps[n] = ideal * win[n];
  }
  const double gain = 2.0 * std::sqrt(static_cast<double>(M));
  bank.analysis_filters.assign(M, std::vector<double>(L));
  bank.synthesis_filters.assign(M, std::vector<double>(L));
  for (int k = 0; k < M; ++k) {
    const double phase = (k % 2 == 0 ? 1.0 : -1.0) * M_PI / 4.0;
    const double freq = (2 * k + 1) * M_PI / (2.0 * M);
    for (int n = 0; n < L; ++n) {
      double arg = freq * (n - center);
      bank.analysis_filters[k][n] = gain * bank.prototype_taps[n] * std::cos(arg + phase);
      bank.synthesis_filters[k][n] = gain * bank.prototype_taps[n] * std::cos(arg - phase);
    }
  }
  bank.cutoff_rad = cutoff;
  bank.kaiser_beta = beta;
}

// Analysis kernel for one row: bands[k][m] = sum_j h_k[j] x[4m + a - j].
void analyze_row(const PQMFBank& bank, const double* x, int64_t T, int64_t a, int64_t N, double* bands) {
  const int M = bank.num_bands, L = bank.taps_len;
  for (int k = 0; k < M; ++k) {
    const double* h = bank.analysis_filters[k].data();
    for (int64_t m = 0; m < N; ++m) {
      const int64_t c = static_cast<int64_t>(M) * m + a;  // x index for j = 0
      const int64_t j0 = std::max<int64_t>(0, c - (T - 1));
      const int64_t j1 = std::min<int64_t>(L - 1, c);
      double acc = 0.0;
      for (int64_t j = j0; j <= j1; ++j) acc += h[j] * x[c - j];
      bands[k * N + m] = acc;
    }
  }
}

void analyze_row_adjoint(const PQMFBank& bank, const double* g, int64_t T, int64_t a, int64_t N, double* gx) {
  const int M = bank.num_bands, L = bank.taps_len;
  for (int k = 0; k < M; ++k) {
    const double* h = bank.analysis_filters[k].data();
    for (int64_t m = 0; m < N; ++m) {
      const int64_t c = static_cast<int64_t>(M) * m + a;
      const int64_t j0 = std::max<int64_t>(0, c - (T - 1));
      const int64_t j1 = std::min<int64_t>(L - 1, c);
      const double gm = g[k * N + m];
      for (int64_t j = j0; j <= j1; ++j) gx[c - j] += h[j] * gm;
    }
  }
}

// Synthesis kernel for one row: y[n] = sum_k sum_m g_k[n + s - 4m] bands[k][m].
void synthesize_row(const PQMFBank& bank, const double* bands, int64_t N, int64_t s, int64_t out_len, double* y) {
  const int M = bank.num_bands, L = bank.taps_len;
  std::fill_n(y, out_len, 0.0);
  for (int k = 0; k < M; ++k) {
    const double* g = bank.synthesis_filters[k].data();
    for (int64_t m = 0; m < N; ++m) {
      const double b = bands[k * N + m];
      if (b == 0.0) continue;
      const int64_t base = static_cast<int64_t>(M) * m - s;  // y index for j = 0
      const int64_t j0 = std::max<int64_t>(0, -base);
      const int64_t j1 = std::min<int64_t>(L, out_len - base);
      for (int64_t j = j0; j < j1; ++j) y[base + j] += g[j] * b;
    }
  }
}

void synthesize_row_adjoint(const PQMFBank& bank, const double* gy, int64_t N, int64_t s, int64_t out_len,
                            double* gbands) {
  const int M = bank.num_bands, L = bank.taps_len;
  for (int k = 0; k < M; ++k) {
    const double* g = bank.synthesis_filters[k].data();
    for (int64_t m = 0; m < N; ++m) {
      const int64_t base = static_cast<int64_t>(M) * m - s;
      const int64_t j0 = std::max<int64_t>(0, -base);
      const int64_t j1 = std::min<int64_t>(L, out_len - base);
      double acc = 0.0;
      for (int64_t j = j0; j < j1; ++j) acc += g[j] * gy[base + j];
      gbands[k * N + m] += acc;
    }
  }
}

int64_t analysis_offset(const PQMFBank& bank, PqmfAlignment align) {
  return align == PqmfAlignment::kCompensated ? bank.taps_len / 2 : 0;
}

int64_t synthesis_shift(const PQMFBank& bank, PqmfAlignment align) {
  return align == PqmfAlignment::kCompensated ? bank.delay() - analysis_offset(bank, align) : 0;
}

}  // namespace

void validate(const Waveform& wave) {
  require(wave.sample_rate_hz > 0, "waveform sample rate must be positive");
  require(!wave.samples.empty(), "waveform must contain at least one sample");
  for (double v : wave.samples) require(std::isfinite(v), "waveform contains non-finite samples");
}

// ---------------------------------------------------------------------------
// PQMF

double pqmf_expected_roundtrip_error_db(const PQMFBank& bank) {
  const int M = bank.num_bands, L = bank.taps_len;
  const int64_t T = 4LL * L;
  const int64_t N = T / M;
  std::vector<double> x(T), bands(static_cast<size_t>(M * N)), y(T);
  double err = 0.0;
  for (int p = 0; p < M; ++p) {
    std::fill(x.begin(), x.end(), 0.0);
    const int64_t n0 = L + p;
    x[n0] = 1.0;
    analyze_row(bank, x.data(), T, 0, N, bands.data());
    synthesize_row(bank, bands.data(), N, 0, T, y.data());
    for (int64_t n = 0; n < T; ++n) {
      double d = y[n] - (n == n0 + bank.delay() ? 1.0 : 0.0);
      err += d * d;
    }
  }
  err /= M;
  return 10.0 * std::log10(std::max(err, 1e-300));
}

PQMFBank design_pqmf(int num_bands, int taps_len, double target_atten_db) {
  require(num_bands == 4, "num_bands must be 4 (got " + std::to_string(num_bands) + ")");
  require(taps_len >= 16 * num_bands, "taps_len must be at least 16 * num_bands");
  require(taps_len % num_bands == 0, "taps_len must be divisible by num_bands");
  require(target_atten_db > 0 && std::isfinite(target_atten_db), "target attenuation must be positive");

  PQMFBank bank;
  bank.num_bands = num_bands;
  bank.taps_len = taps_len;
  const double beta = kaiser_beta_for(target_atten_db + 40.0);
  auto error_at = [&](double cutoff) {
    build_filters(bank, cutoff, beta);
    return pqmf_expected_roundtrip_error_db(bank);
  };

  // Coarse scan around the nominal half-band cutoff, then golden-section refinement.
  const double nominal = M_PI / (2.0 * num_bands);
  double lo = 0.6 * nominal, hi = 1.6 * nominal;
  constexpr int kScan = 60;
  double best_c = nominal, best_e = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= kScan; ++i) {
    double c = lo + (hi - lo) * i / kScan;
    double e = error_at(c);
    if (e < best_e) {
      best_e = e;
      best_c = c;
    }
  }
  const double step = (hi - lo) / kScan;
  double a = best_c - step, b = best_c + step;
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double c1 = b - phi * (b - a), c2 = a + phi * (b - a);
  double e1 = error_at(c1), e2 = error_at(c2);
  for (int it = 0; it < 50; ++it) {
    if (e1 < e2) {
      b = c2;
      c2 = c1;
      e2 = e1;
      c1 = b - phi * (b - a);
      e1 = error_at(c1);
    } else {
      a = c1;
      c1 = c2;
      e1 = e2;
      c2 = a + phi * (b - a);
      e2 = error_at(c2);
    }
  }
  double c = e1 < e2 ? c1 : c2;
  if (std::min(e1, e2) > best_e) c = best_c;
  const double achieved = -error_at(c);
  bank.stopband_atten_db = achieved;
  if (achieved < target_atten_db)
    throw PqmfDesignError("PQMF design reached " + std::to_string(achieved) + " dB, target " +
                              std::to_string(target_atten_db) + " dB",
                          achieved);
  return bank;
}

Tensor pqmf_analyze(const PQMFBank& bank, const Tensor& x, PqmfAlignment align) {
  require(x.ndim() == 2, "pqmf_analyze expects [B, T]");
  const int64_t B = x.size(0), T = x.size(1), M = bank.num_bands;
  const int64_t N = (T + M - 1) / M;
  const int64_t a = analysis_offset(bank, align);
  Buffer out(static_cast<size_t>(B * M * N));
  for (int64_t r = 0; r < B; ++r) analyze_row(bank, x.data().data() + r * T, T, a, N, out.data() + r * M * N);
  ImplPtr xi = x.impl();
  auto bank_ptr = std::make_shared<PQMFBank>(bank);
  return make_result({B, M, N}, std::move(out), {x}, [xi, bank_ptr, B, T, M, N, a](const Buffer& g) {
    auto& gx = xi->grad_buffer();
    for (int64_t r = 0; r < B; ++r)
      analyze_row_adjoint(*bank_ptr, g.data() + r * M * N, T, a, N, gx.data() + r * T);
  });
}

Tensor pqmf_synthesize(const PQMFBank& bank, const Tensor& bands, PqmfAlignment align, int64_t out_len) {
  require(bands.ndim() == 3, "pqmf_synthesize expects [B, bands, N]");
  require(bands.size(1) == bank.num_bands, "pqmf_synthesize: band count " + std::to_string(bands.size(1)) +
                                               " != " + std::to_string(bank.num_bands));
  const int64_t B = bands.size(0), M = bank.num_bands, N = bands.size(2);
  if (out_len < 0) out_len = M * N;
  const int64_t s = synthesis_shift(bank, align);
  Buffer out(static_cast<size_t>(B * out_len));
  for (int64_t r = 0; r < B; ++r)
    synthesize_row(bank, bands.data().data() + r * M * N, N, s, out_len, out.data() + r * out_len);
  ImplPtr bi = bands.impl();
  auto bank_ptr = std::make_shared<PQMFBank>(bank);
  return make_result({B, out_len}, std::move(out), {bands}, [bi, bank_ptr, B, M, N, s, out_len](const Buffer& g) {
    auto& gb = bi->grad_buffer();
    for (int64_t r = 0; r < B; ++r)
      synthesize_row_adjoint(*bank_ptr, g.data() + r * out_len, N, s, out_len, gb.data() + r * M * N);
  });
}

Tensor pqmf_analyze(const PQMFBank& bank, const Waveform& wave, PqmfAlignment align) {
  validate(wave);
  require(wave.size() >= bank.taps_len, "pqmf_analyze: input shorter than the filter length (" +
                                            std::to_string(wave.size()) + " < " + std::to_string(bank.taps_len) + ")");
  Tensor x = Tensor::from({1, wave.size()}, wave.samples);
  Tensor bands = pqmf_analyze(bank, x, align);
  return Tensor::from({bands.size(1), bands.size(2)}, bands.to_vector());
}

Waveform pqmf_synthesize(const PQMFBank& bank, const Tensor& bands, int sample_rate_hz, PqmfAlignment align) {
  require(bands.ndim() == 2, "pqmf_synthesize expects [bands, N]");
  for (double v : bands.data()) require(std::isfinite(v), "pqmf_synthesize: non-finite band sample");
  Tensor y = pqmf_synthesize(bank, Tensor::from({1, bands.size(0), bands.size(1)}, bands.to_vector()), align);
  return Waveform{y.to_vector(), sample_rate_hz};
}

// ---------------------------------------------------------------------------
// STFT

std::vector<double> hann_window(int64_t n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / static_cast<double>(n));
  return w;
}

void check_cola(int64_t window_len, int64_t hop_len) {
  require(window_len >= 2 && window_len % 2 == 0, "window_len must be even and >= 2");
  require(hop_len >= 1 && hop_len <= window_len, "hop_len must be in [1, window_len]");
  auto w = hann_window(window_len);
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (int64_t n = 0; n < hop_len; ++n) {
    double s = 0.0;
    for (int64_t j = n; j < window_len; j += hop_len) s += w[j];
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  if (!(lo > 0.0) || (hi - lo) > 1e-9 * hi)
    throw std::invalid_argument("Hann window of length " + std::to_string(window_len) +
                                " is not constant-overlap-add at hop " + std::to_string(hop_len));
}

int64_t stft_frame_count(int64_t length, int64_t window_len, int64_t hop_len) {
  (void)window_len;
  return length / hop_len + 1;
}

namespace {

int64_t reflect_index(int64_t i, int64_t T) {
  if (i < 0) return -i;
  if (i >= T) return 2 * (T - 1) - i;
  return i;
}

Tensor stft_impl(const Tensor& x, int64_t window_len, int64_t hop_len) {
  require(x.ndim() >= 1, "stft: input must have a time axis");
  const int64_t T = x.size(-1);
  const int64_t R = x.numel() / std::max<int64_t>(T, 1);
  const int64_t pad = window_len / 2;
  require(T > pad, "stft: signal of length " + std::to_string(T) + " too short for reflect padding of " +
                       std::to_string(pad));
  const int64_t F = stft_frame_count(T, window_len, hop_len);
  const int64_t K = window_len / 2 + 1;
  auto w = std::make_shared<std::vector<double>>(hann_window(window_len));
  Buffer out(static_cast<size_t>(R * F * K * 2));
  std::vector<double> seg(window_len);
  std::vector<cd> bins(K);
  const double* X = x.data().data();
  for (int64_t r = 0; r < R; ++r) {
    const double* xr = X + r * T;
    for (int64_t f = 0; f < F; ++f) {
      for (int64_t n = 0; n < window_len; ++n) seg[n] = (*w)[n] * xr[reflect_index(f * hop_len + n - pad, T)];
      fft::rfft(seg, bins);
      double* o = out.data() + ((r * F + f) * K) * 2;
      for (int64_t k = 0; k < K; ++k) {
        o[2 * k] = bins[k].real();
        o[2 * k + 1] = bins[k].imag();
      }
    }
  }
  Shape shape = x.shape();
  shape.back() = F;
  shape.push_back(K);
  shape.push_back(2);
  ImplPtr xi = x.impl();
  return make_result(shape, std::move(out), {x}, [xi, w, R, T, F, K, window_len, hop_len, pad](const Buffer& g) {
    auto& gx = xi->grad_buffer();
    std::vector<cd> G(K);
    std::vector<double> seg(window_len);
    for (int64_t r = 0; r < R; ++r)
      for (int64_t f = 0; f < F; ++f) {
        const double* gf = g.data() + ((r * F + f) * K) * 2;
        for (int64_t k = 0; k < K; ++k) {
          double scale = (k == 0 || k == K - 1) ? 1.0 : 0.5;
          G[k] = cd(gf[2 * k] * scale, gf[2 * k + 1] * scale);
        }
        fft::irfft_unnormalized(G, seg);
        for (int64_t n = 0; n < window_len; ++n)
          gx[r * T + reflect_index(f * hop_len + n - pad, T)] += (*w)[n] * seg[n];
      }
  });
}

}  // namespace

Tensor stft(const Tensor& x, int64_t window_len, int64_t hop_len) {
  check_cola(window_len, hop_len);
  return stft_impl(x, window_len, hop_len);
}

Tensor istft(const Tensor& spec, int64_t window_len, int64_t hop_len, int64_t out_len) {
  check_cola(window_len, hop_len);
  require(spec.ndim() >= 3 && spec.size(-1) == 2, "istft expects [..., frames, bins, 2]");
  const int64_t K = spec.size(-2), F = spec.size(-3);
  require(K == window_len / 2 + 1, "istft: bin count " + std::to_string(K) + " does not match window_len " +
                                       std::to_string(window_len));
  require(out_len >= 1, "istft: out_len must be positive");
  const int64_t R = spec.numel() / (F * K * 2);
  const int64_t pad = window_len / 2;
  const int64_t padded = (F - 1) * hop_len + window_len;
  auto w = std::make_shared<std::vector<double>>(hann_window(window_len));
  auto inv_env = std::make_shared<std::vector<double>>(static_cast<size_t>(padded), 0.0);
  for (int64_t f = 0; f < F; ++f)
    for (int64_t n = 0; n < window_len; ++n) (*inv_env)[f * hop_len + n] += (*w)[n] * (*w)[n];
  for (double& e : *inv_env) e = e > 1e-11 ? 1.0 / e : 0.0;

  const double invN = 1.0 / static_cast<double>(window_len);
  Buffer out(static_cast<size_t>(R * out_len), 0.0);
  std::vector<double> acc(static_cast<size_t>(padded));
  std::vector<cd> bins(K);
  std::vector<double> frame(window_len);
  const double* S = spec.data().data();
  for (int64_t r = 0; r < R; ++r) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int64_t f = 0; f < F; ++f) {
      const double* sf = S + ((r * F + f) * K) * 2;
      for (int64_t k = 0; k < K; ++k) bins[k] = cd(sf[2 * k], sf[2 * k + 1]);
      fft::irfft_unnormalized(bins, frame);
      for (int64_t n = 0; n < window_len; ++n) acc[f * hop_len + n] += (*w)[n] * frame[n] * invN;
    }
    for (int64_t i = 0; i < out_len; ++i) {
      int64_t p = i + pad;
      if (p < padded) out[r * out_len + i] = acc[p] * (*inv_env)[p];
    }
  }
  Shape shape(spec.shape().begin(), spec.shape().end() - 3);
  shape.push_back(out_len);
  ImplPtr si = spec.impl();
  return make_result(shape, std::move(out), {spec},
                     [si, w, inv_env, R, F, K, window_len, hop_len, pad, padded, out_len, invN](const Buffer& g) {
                       auto& gs = si->grad_buffer();
                       std::vector<double> gacc(static_cast<size_t>(padded));
                       std::vector<double> seg(window_len);
                       std::vector<cd> bins(K);
                       for (int64_t r = 0; r < R; ++r) {
                         std::fill(gacc.begin(), gacc.end(), 0.0);
                         for (int64_t i = 0; i < out_len; ++i) {
                           int64_t p = i + pad;
                           if (p < padded) gacc[p] = g[r * out_len + i] * (*inv_env)[p];
                         }
                         for (int64_t f = 0; f < F; ++f) {
                           for (int64_t n = 0; n < window_len; ++n) seg[n] = (*w)[n] * gacc[f * hop_len + n] * invN;
                           fft::rfft(seg, bins);
                           double* gf = gs.data() + ((r * F + f) * K) * 2;
                           for (int64_t k = 0; k < K; ++k) {
                             bool edge = (k == 0 || k == K - 1);
                             double c = edge ? 1.0 : 2.0;
                             gf[2 * k] += c * bins[k].real();
                             if (!edge) gf[2 * k + 1] += c * bins[k].imag();
                           }
                         }
                       }
                     });
}

Tensor magnitude(const Tensor& spec) {
  require(spec.size(-1) == 2, "magnitude expects a trailing (re, im) axis");
  Shape shape(spec.shape().begin(), spec.shape().end() - 1);
  Buffer out(static_cast<size_t>(spec.numel() / 2));
  auto S = spec.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::hypot(S[2 * i], S[2 * i + 1]);
  return Tensor::from_buffer(shape, std::move(out));
}

// ---------------------------------------------------------------------------
// Mel

std::vector<std::vector<double>> mel_filterbank(int n_mels, int64_t n_fft, int sample_rate_hz, double fmin_hz,
                                                double fmax_hz) {
  auto hz_to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto mel_to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const int64_t K = n_fft / 2 + 1;
  const double mlo = hz_to_mel(fmin_hz), mhi = hz_to_mel(fmax_hz);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) edges[i] = mel_to_hz(mlo + (mhi - mlo) * i / (n_mels + 1));
  std::vector<std::vector<double>> fb(n_mels, std::vector<double>(K, 0.0));
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], c = edges[m + 1], hi = edges[m + 2];
    for (int64_t k = 0; k < K; ++k) {
      double f = static_cast<double>(k) * sample_rate_hz / static_cast<double>(n_fft);
      double v = std::min((f - lo) / (c - lo), (hi - f) / (hi - c));
      fb[m][k] = std::max(0.0, v);
    }
  }
  return fb;
}

Tensor log_mel_frames(const Waveform& wave, int64_t n_fft, int64_t hop_len, int n_mels, double floor_power) {
  validate(wave);
  Waveform padded = wave;
  // Reflect padding needs more than n_fft/2 samples.
  if (padded.size() <= n_fft / 2) padded.samples.resize(static_cast<size_t>(n_fft / 2 + 1), 0.0);
  Tensor spec = stft_impl(Tensor::from({padded.size()}, padded.samples), n_fft, hop_len);
  const int64_t F = spec.size(0), K = spec.size(1);
  auto fb = mel_filterbank(n_mels, n_fft, wave.sample_rate_hz, 0.0, 0.5 * wave.sample_rate_hz);
  Buffer out(static_cast<size_t>(F * n_mels));
  auto S = spec.data();
  std::vector<double> power(K);
  for (int64_t f = 0; f < F; ++f) {
    for (int64_t k = 0; k < K; ++k) {
      double re = S[(f * K + k) * 2], im = S[(f * K + k) * 2 + 1];
      power[k] = re * re + im * im;
    }
    for (int m = 0; m < n_mels; ++m) {
      double e = 0.0;
      for (int64_t k = 0; k < K; ++k) e += fb[m][k] * power[k];
      out[f * n_mels + m] = std::log(e + floor_power);
    }
  }
  return Tensor::from_buffer({F, n_mels}, std::move(out));
}

}  // namespace hybridsep::dsp
