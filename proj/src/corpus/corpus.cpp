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

#include "bmae/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "bmae/error.hpp"
#include "bmae/parallel.hpp"

namespace bmae {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kMinFreq = 300.0;
constexpr double kMaxFreq = 3500.0;
constexpr double kCallAmplitude = 0.25;

struct Canvas {
  std::vector<double> x;
  int rate;
};

// Adds one linear chirp call starting at t0 seconds.
// With `coherent` set, phases are referenced to absolute time so that
// back-to-back calls of a flat chirp join into one continuous tone.
void render_call(Canvas& c, const SpeciesPrototype& p, double t0, bool coherent,
                 Prng& rng) {
  const auto n = static_cast<std::int64_t>(c.x.size());
  const auto first = static_cast<std::int64_t>(std::llround(t0 * c.rate));
  const auto len = static_cast<std::int64_t>(std::llround(kCallSeconds * c.rate));
  std::vector<double> phase0(static_cast<std::size_t>(p.n_harmonics));
  for (std::size_t h = 0; h < phase0.size(); ++h)
    phase0[h] = coherent ? kTwoPi * (h + 1) * p.base_freq * t0 : kTwoPi * rng.uniform();
  const double base = p.base_freq;
  const double slope = p.chirp_slope;
  for (std::int64_t i = 0; i < len && first + i < n; ++i) {
    if (first + i < 0) continue;
    const double tau = static_cast<double>(i) / c.rate;
    const double phase =
        kTwoPi * (base * tau + slope * (0.5 * tau * tau - 0.5 * kCallSeconds * tau));
    const double taper = std::sin(std::numbers::pi * tau / kCallSeconds);
    const double am = (1.0 + 0.6 * std::sin(kTwoPi * p.am_rate * tau)) / 1.6;
    double v = 0.0;
    for (int h = 1; h <= p.n_harmonics; ++h)
      v += std::sin(h * phase + phase0[h - 1]) / h;
    c.x[first + i] += kCallAmplitude * taper * taper * am * v;
  }
}

// Amplitude-modulated resonant noise band around `center` Hz.
void render_texture(Canvas& c, const SpeciesPrototype& p, double center,
                    Prng& rng) {
  const double r = 0.995;
  const double w = kTwoPi * center / c.rate;
  const double a1 = 2.0 * r * std::cos(w), a2 = -r * r;
  double y1 = 0.0, y2 = 0.0;
  const double gain = (1.0 - r) * 0.5;
  for (std::size_t i = 0; i < c.x.size(); ++i) {
    const double y = rng.normal() * gain + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    const double t = static_cast<double>(i) / c.rate;
    const double am = 0.5 + 0.5 * std::sin(kTwoPi * p.am_rate * 0.5 * t);
    c.x[i] += y * am;
  }
}

}  // namespace

void CorpusSpec::validate() const {
  auto bad = [](const std::string& what) { return ConfigError("corpus: " + what); };
  if (n_classes < 2) throw bad("n_classes must be >= 2");
  if (recordings_per_class < 1) throw bad("recordings_per_class must be >= 1");
  if (min_s < 3.0) throw bad("min duration must be >= 3.0 s");
  if (max_s < min_s) throw bad("duration range is empty");
  if (snr_hi_db < snr_lo_db) throw bad("snr range is empty");
  if (domain_mix < 0.0 || domain_mix > 1.0) throw bad("domain_mix must be in [0, 1]");
  if (val_frac < 0.0 || test_frac < 0.0 || val_frac + test_frac >= 1.0)
    throw bad("val_frac + test_frac must be in [0, 1)");
  if (sample_rate <= 0) throw bad("sample_rate must be positive");
}

std::string recording_id(std::int32_t class_id, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "c%03d_r%04d", class_id, index);
  return buf;
}

std::vector<SpeciesPrototype> generate_prototypes(int n_classes,
                                                  std::uint64_t seed,
                                                  double domain_mix) {
  if (n_classes < 2) throw ConfigError("corpus: n_classes must be >= 2");
  Prng rng(seed, "prototypes");
  // Log-spaced base frequencies with jitter below half the spacing keeps every
  // pair distinct while neighbours stay acoustically close.
  const double log_step = std::log(kMaxFreq / kMinFreq) / (n_classes - 1);
  std::vector<double> freqs(static_cast<std::size_t>(n_classes));
  for (int i = 0; i < n_classes; ++i) {
    const double jitter = rng.uniform(-0.3, 0.3) * log_step;
    freqs[i] = kMinFreq * std::exp(log_step * i + (i == 0 ? std::abs(jitter) : jitter));
  }
  const auto order = rng.permutation(n_classes);
  const auto n_bio = static_cast<int>(std::lround(domain_mix * n_classes));

  std::vector<SpeciesPrototype> protos;
  for (int c = 0; c < n_classes; ++c) {
    SpeciesPrototype p;
    p.class_id = c;
    p.domain = c < n_bio ? Domain::kBio : Domain::kGeneral;
    p.base_freq = freqs[order[c]];
    const double max_slope = (p.base_freq - 100.0) / (0.5 * kCallSeconds);
    p.chirp_slope = std::clamp(rng.uniform(-2000.0, 2000.0), -max_slope, max_slope);
    // General textures also carry a noise band at 1.5x the fundamental.
    const double stretch = p.domain == Domain::kGeneral ? 1.5 : 1.0;
    const double top =
        stretch * (p.base_freq + std::abs(p.chirp_slope) * 0.5 * kCallSeconds);
    p.n_harmonics = 1 + static_cast<int>(rng.below(3));
    while (p.n_harmonics > 1 && top * p.n_harmonics > 10500.0) --p.n_harmonics;
    p.am_rate = rng.uniform(3.0, 15.0);
    p.duty_cycle = p.domain == Domain::kBio ? rng.uniform(0.35, 0.65) : 1.0;
    protos.push_back(p);
  }
  return protos;
}

Recording synthesize_recording(const SpeciesPrototype& proto,
                               const CorpusSpec& spec, Prng& rng) {
  const int rate = spec.sample_rate;
  const double duration = rng.uniform(spec.min_s, spec.max_s);
  const auto n = static_cast<std::size_t>(std::llround(duration * rate));
  const double snr_db = rng.uniform(spec.snr_lo_db, spec.snr_hi_db);
  Canvas canvas{std::vector<double>(n, 0.0), rate};
  Recording rec;
  rec.sample_rate = rate;
  rec.label = proto.class_id;
  rec.domain = proto.domain;

  if (proto.domain == Domain::kBio && proto.duty_cycle < 1.0) {
    double gap = (1.0 - proto.duty_cycle) * duration;
    if (duration >= 6.0) gap = std::min(std::max(gap, kMinSilenceSeconds), duration - 1.0);
    const double gap_start = rng.uniform(0.0, duration - gap);
    const Interval active[2] = {{0.0, gap_start}, {gap_start + gap, duration}};
    for (const auto& span : active) {
      double t = span.start_s + rng.uniform(0.0, 0.2);
      while (t + kCallSeconds <= span.end_s) {
        render_call(canvas, proto, t, false, rng);
        rec.events.push_back({t, t + kCallSeconds});
        t += kCallSeconds + rng.uniform(0.05, 0.35);
      }
    }
    if (rec.events.empty()) {
      const auto& longer = active[0].end_s - active[0].start_s >=
                                   active[1].end_s - active[1].start_s
                               ? active[0]
                               : active[1];
      const double t = std::max(0.0, std::min(longer.start_s, duration - kCallSeconds));
      render_call(canvas, proto, t, false, rng);
      rec.events.push_back({t, std::min(duration, t + kCallSeconds)});
    }
  } else {
    // Gapless texture: calls overlapping by half their length plus a resonant
    // noise band above the fundamental.
    for (double t = -rng.uniform(0.0, kCallSeconds); t < duration; t += 0.5 * kCallSeconds)
      render_call(canvas, proto, t, true, rng);
    render_texture(canvas, proto, 1.5 * proto.base_freq, rng);
    rec.events.push_back({0.0, duration});
  }

  double power = 0.0;
  std::size_t counted = 0;
  for (const auto& ev : rec.events) {
    const auto a = static_cast<std::size_t>(std::max(0.0, ev.start_s) * rate);
    const auto b = std::min(n, static_cast<std::size_t>(ev.end_s * rate));
    for (std::size_t i = a; i < b; ++i) power += canvas.x[i] * canvas.x[i];
    counted += b > a ? b - a : 0;
  }
  power = counted ? power / counted : 0.0;
  const double noise_sigma =
      std::sqrt(std::max(power, 1e-12) / std::pow(10.0, snr_db / 10.0));
  rec.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = canvas.x[i] + noise_sigma * rng.normal();
    rec.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return rec;
}

std::vector<PlannedRecording> plan_corpus(const CorpusSpec& spec) {
  spec.validate();
  const auto n_bio = static_cast<int>(std::lround(spec.domain_mix * spec.n_classes));
  const auto per = spec.recordings_per_class;
  const auto n_val = std::lround(spec.val_frac * per);
  const auto n_test = std::lround(spec.test_frac * per);
  std::vector<PlannedRecording> out;
  out.reserve(static_cast<std::size_t>(spec.n_classes) * per);
  for (std::int32_t c = 0; c < spec.n_classes; ++c) {
    Prng rng(spec.seed, "split/" + std::to_string(c));
    const auto order = rng.permutation(per);
    for (int i = 0; i < per; ++i) {
      const auto rank = order[i];
      const Split split = rank < n_val            ? Split::kVal
                          : rank < n_val + n_test ? Split::kTest
                                                  : Split::kTrain;
      out.push_back({recording_id(c, i), c, split, c < n_bio ? Domain::kBio : Domain::kGeneral});
    }
  }
  return out;
}

Recording render_planned(const PlannedRecording& plan,
                         const std::vector<SpeciesPrototype>& protos,
                         const CorpusSpec& spec) {
  Prng rng(spec.seed, "recording/" + plan.id);
  auto rec = synthesize_recording(protos.at(plan.label), spec, rng);
  rec.id = plan.id;
  rec.split = plan.split;
  return rec;
}

std::vector<Recording> synthesize_corpus(const CorpusSpec& spec) {
  const auto plan = plan_corpus(spec);
  const auto protos = generate_prototypes(spec.n_classes, spec.seed, spec.domain_mix);
  std::vector<Recording> out(plan.size());
  parallel_for(static_cast<std::int64_t>(plan.size()), [&](std::int64_t j) {
    out[j] = render_planned(plan[j], protos, spec);
  });
  return out;
}

}  // namespace bmae
