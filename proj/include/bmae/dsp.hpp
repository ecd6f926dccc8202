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

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace bmae {

/// Log-mel frontend parameters. Defaults give 128 x 512 spectrograms from
/// 3 s windows at 22.05 kHz with a 1.5 s stride.
struct DspConfig {
  int sample_rate = 22050;
  int win = 512;
  int hop = 128;
  int n_mels = 128;
  double fmin = 50.0;
  double fmax = 11025.0;
  double segment_s = 3.0;
  double stride_s = 1.5;
  double log_floor = 1e-10;
  int n_frames = 512;  // frames kept after cropping

  void validate() const;  // throws ConfigError
  std::int64_t segment_samples() const;
  std::int64_t stride_samples() const;
  int n_bins() const { return win / 2 + 1; }
  /// Non-centered STFT frame count for one segment.
  std::int64_t stft_frames() const;
};

/// Row-major dense matrix of doubles.
struct Matrix {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::int64_t r, std::int64_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& operator()(std::int64_t r, std::int64_t c) { return data[r * cols + c]; }
  double operator()(std::int64_t r, std::int64_t c) const { return data[r * cols + c]; }
};

/// One analysis window of a recording. `n_samples` counts real samples taken
/// from the recording; the remainder of the window is zero padding.
struct SegmentSpan {
  std::int32_t segment_idx = 0;
  std::int64_t start_sample = 0;
  std::int64_t n_samples = 0;
};

using SegmentIndex = std::vector<SegmentSpan>;

/// n_mels x n_frames log-mel matrix for one segment, row-major (mel-major).
struct Spectrogram {
  std::string recording_id;
  std::int32_t segment_idx = 0;
  double start_s = 0.0;
  std::int64_t n_mels = 0;
  std::int64_t n_frames = 0;
  std::vector<float> values;
};

/// Band-limited windowed-sinc resampling to dst_rate. Identity (bitwise) when
/// the rates match; empty input gives empty output.
std::vector<float> resample(std::span<const float> samples, double src_rate,
                            int dst_rate = 22050);

/// Number of windows for a recording of n_samples:
/// max(1, ceil((n - L) / S) + 1).
std::int64_t segment_count(std::int64_t n_samples, const DspConfig& cfg);
SegmentIndex segment(std::int64_t n_samples, const DspConfig& cfg);

/// Copies one window out of the recording, zero-padded to full length.
std::vector<float> extract_segment(std::span<const float> samples,
                                   const SegmentSpan& span,
                                   const DspConfig& cfg);

/// Hann-windowed (periodic), non-centered STFT power: n_bins x n_frames.
/// Throws ContractError unless the segment has exactly segment_samples().
Matrix stft_power(std::span<const float> segment, const DspConfig& cfg);

/// HTK-mel triangular filterbank, n_mels x n_bins. Filters are point-sampled
/// at the FFT bin frequencies and scaled to unit sum, so each mel value is a
/// weighted average of bin powers. A filter that falls between two bins has
/// no support and stays all-zero.
Matrix mel_filterbank(const DspConfig& cfg);
Matrix mel_project(const Matrix& power, const DspConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// ln(max(mel, log_floor)), keeping the first cfg.n_frames frames.
Spectrogram log_and_crop(const Matrix& mel, const DspConfig& cfg);

/// Full pipeline for one zero-padded segment.
Spectrogram compute_spectrogram(std::span<const float> segment,
                                const DspConfig& cfg);

/// Segments a waveform (already at cfg.sample_rate) and computes every
/// window's spectrogram.
std::vector<Spectrogram> recording_spectrograms(std::span<const float> samples,
                                                const std::string& recording_id,
                                                const DspConfig& cfg);

/// Per-recording cache: a sequence of records, each a 16-byte little-endian
/// header {"SPG1", u32 n_mels, u32 n_frames, u32 segment_idx} followed by
/// n_mels * n_frames float32 values, row-major.
void write_spectrogram_cache(const std::filesystem::path& path,
                             std::span<const Spectrogram> specs);
std::vector<Spectrogram> read_spectrogram_cache(
    const std::filesystem::path& path, const std::string& recording_id,
    const DspConfig& cfg);

/// Number of records in a cache whose records are all n_mels x n_frames.
/// Throws FormatError when the file size is not a whole number of records.
std::int64_t cached_segment_count(const std::filesystem::path& path,
                                  std::int64_t n_mels, std::int64_t n_frames);
/// Reads record `segment_idx` only, validating its header.
std::vector<float> read_cached_segment(const std::filesystem::path& path,
                                       std::int64_t segment_idx,
                                       std::int64_t n_mels, std::int64_t n_frames);

}  // namespace bmae
