/*
 * Copyright 2026 The bmae Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "bmae/dsp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>

#include "bmae/error.hpp"

namespace bmae {

namespace {

constexpr double kPi = std::numbers::pi;

// In-place iterative radix-2 FFT for power-of-two sizes; falls back to a
// direct DFT otherwise.
class Fft {
 public:
  explicit Fft(std::size_t n) : n_(n), pow2_(std::has_single_bit(n)) {
    twiddle_.resize(n / 2 + 1);
    for (std::size_t k = 0; k < twiddle_.size(); ++k) {
      const double a = -2.0 * kPi * static_cast<double>(k) / static_cast<double>(n);
      twiddle_[k] = {std::cos(a), std::sin(a)};
    }
    if (pow2_) {
      rev_.resize(n);
      const int bits = std::countr_zero(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = 0;
        for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
        rev_[i] = r;
      }
    }
  }

  void forward(std::vector<std::complex<double>>& x) const {
    if (!pow2_) {
      std::vector<std::complex<double>> out(n_);
      for (std::size_t k = 0; k < n_; ++k) {
        std::complex<double> acc = 0;
        for (std::size_t t = 0; t < n_; ++t) {
          const double a = -2.0 * kPi * static_cast<double>((k * t) % n_) /
                           static_cast<double>(n_);
          acc += x[t] * std::complex<double>(std::cos(a), std::sin(a));
        }
        out[k] = acc;
      }
      x.swap(out);
      return;
    }
    for (std::size_t i = 0; i < n_; ++i)
      if (i < rev_[i]) std::swap(x[i], x[rev_[i]]);
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t step = n_ / len;
      const std::size_t half = len / 2;
      for (std::size_t i = 0; i < n_; i += len) {
        for (std::size_t j = 0; j < half; ++j) {
          const auto w = twiddle_[j * step];
          const auto u = x[i + j];
          const auto v = x[i + j + half] * w;
          x[i + j] = u + v;
          x[i + j + half] = u - v;
        }
      }
    }
  }

 private:
  std::size_t n_;
  bool pow2_;
  std::vector<std::complex<double>> twiddle_;
  std::vector<std::size_t> rev_;
};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const char* p) {
  const auto* u = reinterpret_cast<const unsigned char*>(p);
  return std::uint32_t(u[0]) | std::uint32_t(u[1]) << 8 |
         std::uint32_t(u[2]) << 16 | std::uint32_t(u[3]) << 24;
}

static_assert(std::endian::native == std::endian::little,
              "spectrogram cache I/O assumes a little-endian host");

}  // namespace

void DspConfig::validate() const {
  auto bad = [](const std::string& what) { return ConfigError("dsp: " + what); };
  if (sample_rate <= 0) throw bad("sample_rate must be positive");
  if (win <= hop || hop <= 0) throw bad("require win > hop > 0");
  if (n_mels < 1) throw bad("n_mels must be >= 1");
  if (!(fmin >= 0.0 && fmin < fmax)) throw bad("require 0 <= fmin < fmax");
  if (fmax > sample_rate / 2.0) throw bad("fmax exceeds Nyquist");
  if (!(log_floor > 0.0)) throw bad("log_floor must be positive");
  if (segment_s <= 0.0 || stride_s <= 0.0) throw bad("segment_s and stride_s must be positive");
  if (segment_samples() < win) throw bad("segment shorter than one STFT window");
  if (n_frames < 1 || n_frames > stft_frames())
    throw bad("n_frames must be in [1, " + std::to_string(stft_frames()) + "]");
}

std::int64_t DspConfig::segment_samples() const {
  return std::llround(segment_s * sample_rate);
}

std::int64_t DspConfig::stride_samples() const {
  return std::llround(stride_s * sample_rate);
}

std::int64_t DspConfig::stft_frames() const {
  return (segment_samples() - win) / hop + 1;
}

std::vector<float> resample(std::span<const float> samples, double src_rate,
                            int dst_rate) {
  BMAE_REQUIRE(src_rate > 0.0 && dst_rate > 0,
               "resample: rates must be positive");
  if (samples.empty()) return {};
  if (src_rate == static_cast<double>(dst_rate)) {
    return std::vector<float>(samples.begin(), samples.end());
  }
  const double ratio = dst_rate / src_rate;
  const double cutoff = std::min(1.0, ratio);  // relative to input Nyquist
  constexpr double kZeroCrossings = 16.0;
  const double half_width = kZeroCrossings / cutoff;  // in input samples
  const auto n_in = static_cast<std::int64_t>(samples.size());
  const auto n_out = std::max<std::int64_t>(1, std::llround(n_in * ratio));
  std::vector<float> out(static_cast<std::size_t>(n_out));
  for (std::int64_t j = 0; j < n_out; ++j) {
    const double t = static_cast<double>(j) / ratio;
    const auto lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(t - half_width)));
    const auto hi = std::min<std::int64_t>(n_in - 1, static_cast<std::int64_t>(std::floor(t + half_width)));
    double acc = 0.0;
    for (std::int64_t i = lo; i <= hi; ++i) {
      const double u = t - static_cast<double>(i);
      const double x = cutoff * u;
      const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(kPi * x) / (kPi * x);
      const double window = 0.5 + 0.5 * std::cos(kPi * u / half_width);
      acc += samples[i] * cutoff * sinc * window;
    }
    out[j] = static_cast<float>(acc);
  }
  return out;
}

std::int64_t segment_count(std::int64_t n_samples, const DspConfig& cfg) {
  const auto len = cfg.segment_samples();
  const auto stride = cfg.stride_samples();
  if (n_samples <= len) return 1;
  const auto extra = n_samples - len;
  return (extra + stride - 1) / stride + 1;
}

SegmentIndex segment(std::int64_t n_samples, const DspConfig& cfg) {
  const auto len = cfg.segment_samples();
  const auto stride = cfg.stride_samples();
  const auto count = segment_count(n_samples, cfg);
  SegmentIndex index;
  index.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    const auto start = i * stride;
    index.push_back({static_cast<std::int32_t>(i), start,
                     std::clamp<std::int64_t>(n_samples - start, 0, len)});
  }
  return index;
}

std::vector<float> extract_segment(std::span<const float> samples,
                                   const SegmentSpan& span,
                                   const DspConfig& cfg) {
  std::vector<float> out(static_cast<std::size_t>(cfg.segment_samples()), 0.0f);
  const auto n = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(samples.size()) - span.start_sample, 0,
      cfg.segment_samples());
  if (n > 0) {
    std::copy_n(samples.begin() + span.start_sample, n, out.begin());
  }
  return out;
}

Matrix stft_power(std::span<const float> segment, const DspConfig& cfg) {
  BMAE_REQUIRE(static_cast<std::int64_t>(segment.size()) == cfg.segment_samples(),
               "stft_power: segment has " + std::to_string(segment.size()) +
                   " samples, expected " + std::to_string(cfg.segment_samples()));
  const auto win = static_cast<std::size_t>(cfg.win);
  std::vector<double> window(win);
  for (std::size_t n = 0; n < win; ++n)
    window[n] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(n) /
                                     static_cast<double>(win));
  const auto frames = cfg.stft_frames();
  const auto bins = cfg.n_bins();
  Matrix power(bins, frames);
  Fft fft(win);
  std::vector<std::complex<double>> buf(win);
  for (std::int64_t f = 0; f < frames; ++f) {
    const float* x = segment.data() + f * cfg.hop;
    for (std::size_t n = 0; n < win; ++n) buf[n] = {x[n] * window[n], 0.0};
    fft.forward(buf);
    for (int b = 0; b < bins; ++b) power(b, f) = std::norm(buf[b]);
  }
  return power;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Matrix mel_filterbank(const DspConfig& cfg) {
  const int bins = cfg.n_bins();
  Matrix fb(cfg.n_mels, bins);
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (cfg.n_mels + 1));
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * cfg.sample_rate / cfg.win;
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      fb(m, b) = std::max(0.0, std::min(up, down));
    }
    double total = 0.0;
    for (int b = 0; b < bins; ++b) total += fb(m, b);
    if (total > 0.0)
      for (int b = 0; b < bins; ++b) fb(m, b) /= total;
  }
  return fb;
}

Matrix mel_project(const Matrix& power, const DspConfig& cfg) {
  BMAE_REQUIRE(power.rows == cfg.n_bins(),
               "mel_project: power has " + std::to_string(power.rows) +
                   " rows, expected " + std::to_string(cfg.n_bins()));
  const Matrix fb = mel_filterbank(cfg);
  Matrix mel(cfg.n_mels, power.cols);
  for (int m = 0; m < cfg.n_mels; ++m) {
    for (int b = 0; b < fb.cols; ++b) {
      const double w = fb(m, b);
      if (w == 0.0) continue;
      const double* src = power.data.data() + b * power.cols;
      double* dst = mel.data.data() + m * mel.cols;
      for (std::int64_t f = 0; f < power.cols; ++f) dst[f] += w * src[f];
    }
  }
  return mel;
}

Spectrogram log_and_crop(const Matrix& mel, const DspConfig& cfg) {
  BMAE_REQUIRE(mel.cols >= cfg.n_frames,
               "log_and_crop: only " + std::to_string(mel.cols) + " frames");
  Spectrogram spec;
  spec.n_mels = mel.rows;
  spec.n_frames = cfg.n_frames;
  spec.values.resize(static_cast<std::size_t>(mel.rows * cfg.n_frames));
  for (std::int64_t m = 0; m < mel.rows; ++m)
    for (std::int64_t f = 0; f < cfg.n_frames; ++f)
      spec.values[m * cfg.n_frames + f] =
          static_cast<float>(std::log(std::max(mel(m, f), cfg.log_floor)));
  return spec;
}

Spectrogram compute_spectrogram(std::span<const float> segment,
                                const DspConfig& cfg) {
  return log_and_crop(mel_project(stft_power(segment, cfg), cfg), cfg);
}

std::vector<Spectrogram> recording_spectrograms(std::span<const float> samples,
                                                const std::string& recording_id,
                                                const DspConfig& cfg) {
  std::vector<Spectrogram> out;
  for (const auto& span : segment(static_cast<std::int64_t>(samples.size()), cfg)) {
    auto spec = compute_spectrogram(extract_segment(samples, span, cfg), cfg);
    spec.recording_id = recording_id;
    spec.segment_idx = span.segment_idx;
    spec.start_s = static_cast<double>(span.start_sample) / cfg.sample_rate;
    out.push_back(std::move(spec));
  }
  return out;
}

void write_spectrogram_cache(const std::filesystem::path& path,
                             std::span<const Spectrogram> specs) {
  std::string buf;
  for (const auto& s : specs) {
    buf += "SPG1";
    put_u32(buf, static_cast<std::uint32_t>(s.n_mels));
    put_u32(buf, static_cast<std::uint32_t>(s.n_frames));
    put_u32(buf, static_cast<std::uint32_t>(s.segment_idx));
    const auto* raw = reinterpret_cast<const char*>(s.values.data());
    buf.append(raw, s.values.size() * sizeof(float));
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write spectrogram cache " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("write failed for spectrogram cache " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<Spectrogram> read_spectrogram_cache(
    const std::filesystem::path& path, const std::string& recording_id,
    const DspConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing spectrogram cache " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  std::vector<Spectrogram> out;
  std::size_t pos = 0;
  while (pos < buf.size()) {
    if (buf.size() - pos < 16 || std::memcmp(buf.data() + pos, "SPG1", 4) != 0)
      throw FormatError("bad spectrogram record header in " + path.string(), pos);
    Spectrogram s;
    s.recording_id = recording_id;
    s.n_mels = get_u32(buf.data() + pos + 4);
    s.n_frames = get_u32(buf.data() + pos + 8);
    s.segment_idx = static_cast<std::int32_t>(get_u32(buf.data() + pos + 12));
    s.start_s = s.segment_idx * cfg.stride_s;
    const std::size_t bytes = static_cast<std::size_t>(s.n_mels * s.n_frames) * sizeof(float);
    if (buf.size() - pos - 16 < bytes)
      throw FormatError("truncated spectrogram payload in " + path.string(), pos + 16);
    s.values.resize(static_cast<std::size_t>(s.n_mels * s.n_frames));
    std::memcpy(s.values.data(), buf.data() + pos + 16, bytes);
    pos += 16 + bytes;
    out.push_back(std::move(s));
  }
  return out;
}

std::int64_t cached_segment_count(const std::filesystem::path& path,
                                  std::int64_t n_mels, std::int64_t n_frames) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw DataError("missing spectrogram cache " + path.string());
  const auto record = 16 + static_cast<std::uintmax_t>(n_mels * n_frames) * sizeof(float);
  if (size % record != 0)
    throw FormatError("spectrogram cache " + path.string() + " is not a whole number of records",
                      static_cast<std::size_t>(size - size % record));
  return static_cast<std::int64_t>(size / record);
}

std::vector<float> read_cached_segment(const std::filesystem::path& path,
                                       std::int64_t segment_idx,
                                       std::int64_t n_mels, std::int64_t n_frames) {
  const auto n = static_cast<std::size_t>(n_mels * n_frames);
  const auto record = 16 + n * sizeof(float);
  const auto offset = static_cast<std::size_t>(segment_idx) * record;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing spectrogram cache " + path.string());
  in.seekg(static_cast<std::streamoff>(offset));
  char head[16];
  if (!in.read(head, 16)) throw FormatError("truncated spectrogram cache " + path.string(), offset);
  if (std::memcmp(head, "SPG1", 4) != 0 || get_u32(head + 4) != n_mels ||
      get_u32(head + 8) != n_frames || get_u32(head + 12) != segment_idx)
    throw FormatError("unexpected spectrogram record header in " + path.string(), offset);
  std::vector<float> values(n);
  if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(float))))
    throw FormatError("truncated spectrogram payload in " + path.string(), offset + 16);
  return values;
}

}  // namespace bmae
