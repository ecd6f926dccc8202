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

#include "bmae/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "bmae/error.hpp"

namespace bmae {

namespace {

std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
         std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}
void put32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

std::int16_t to_pcm16(float x) {
  const float c = std::clamp(x, -1.0f, 1.0f);
  return static_cast<std::int16_t>(std::lrint(c * 32767.0f));
}

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open WAV file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& why) -> DataError {
    return DataError("invalid WAV file " + path.string() + ": " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw fail("missing RIFF/WAVE header");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t len = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) {
      // Tolerate a truncated data chunk (common for streamed writers).
      if (std::memcmp(chunk, "data", 4) != 0) throw fail("truncated chunk");
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16) throw fail("short fmt chunk");
      format = le16(chunk + 8);
      channels = le16(chunk + 10);
      rate = le32(chunk + 12);
      bits = le16(chunk + 22);
      if (format == 0xFFFE && len >= 40) format = le16(chunk + 32);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = std::min<std::size_t>(len, bytes.size() - body);
    }
    pos = body + len + (len & 1);
  }
  if (channels == 0 || rate == 0) throw fail("no fmt chunk");
  if (!data) throw fail("no data chunk");

  WavData out;
  out.sample_rate = static_cast<int>(rate);
  const std::size_t frame_bytes = std::size_t(channels) * (bits / 8);
  if (frame_bytes == 0) throw fail("zero frame size");
  const std::size_t frames = data_len / frame_bytes;
  out.samples.resize(frames);
  if (format == 1 && bits == 16) {
    for (std::size_t f = 0; f < frames; ++f) {
      float acc = 0.0f;
      for (std::uint16_t c = 0; c < channels; ++c) {
        const auto v = static_cast<std::int16_t>(
            le16(data + f * frame_bytes + c * 2));
        acc += static_cast<float>(v) / 32767.0f;
      }
      out.samples[f] = acc / channels;
    }
  } else if (format == 3 && bits == 32) {
    for (std::size_t f = 0; f < frames; ++f) {
      float acc = 0.0f;
      for (std::uint16_t c = 0; c < channels; ++c) {
        const std::uint32_t raw = le32(data + f * frame_bytes + c * 4);
        float v;
        std::memcpy(&v, &raw, 4);
        acc += v;
      }
      out.samples[f] = acc / channels;
    }
  } else {
    throw fail("unsupported sample format " + std::to_string(format) + "/" +
               std::to_string(bits) + " bit");
  }
  return out;
}

void write_wav_pcm16(const std::filesystem::path& path,
                     std::span<const float> samples, int sample_rate) {
  const auto data_len = static_cast<std::uint32_t>(samples.size() * 2);
  std::string buf;
  buf.reserve(44 + data_len);
  buf += "RIFF";
  put32(buf, 36 + data_len);
  buf += "WAVEfmt ";
  put32(buf, 16);
  put16(buf, 1);
  put16(buf, 1);
  put32(buf, static_cast<std::uint32_t>(sample_rate));
  put32(buf, static_cast<std::uint32_t>(sample_rate) * 2);
  put16(buf, 2);
  put16(buf, 16);
  buf += "data";
  put32(buf, data_len);
  for (float x : samples) put16(buf, static_cast<std::uint16_t>(to_pcm16(x)));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write WAV file " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("write failed for WAV file " + path.string());
}

std::vector<float> quantize_pcm16(std::span<const float> samples) {
  std::vector<float> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    out[i] = static_cast<float>(to_pcm16(samples[i])) / 32767.0f;
  return out;
}

}  // namespace bmae
