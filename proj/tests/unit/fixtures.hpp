#pragma once

// Small synthetic mixtures built in memory for tests.

#include <vector>

#include "dcem/data.hpp"

namespace dcem::fixtures {

inline std::vector<MixtureSample> toy_samples(int count, double duration, uint64_t seed) {
  auto speakers = make_speakers(4, seed);
  std::vector<MixtureSample> out;
  for (int i = 0; i < count; ++i) {
    const auto& spk = speakers[static_cast<std::size_t>(i % 4)];
    const auto& other = speakers[static_cast<std::size_t>((i + 1) % 4)];
    auto target = synth_utterance(spk, duration, seed * 1000 + static_cast<uint64_t>(i));
    auto interf = synth_utterance(other, duration, seed * 1000 + 500 + static_cast<uint64_t>(i));
    auto noise = make_noise(target.size(), seed * 7 + static_cast<uint64_t>(i));
    auto m = make_mixture(target, &interf, &noise, 0.0, 10.0);
    m.sample_id = "toy" + std::to_string(i);
    m.split = "test";
    m.speaker_id = spk.id;
    m.interferer_speaker_id = other.id;
    m.enrollment = synth_utterance(spk, 1.0, seed * 1000 + 900 + static_cast<uint64_t>(i));
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace dcem::fixtures
