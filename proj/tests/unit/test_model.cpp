#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "dcem/data.hpp"
#include "dcem/errors.hpp"
#include "dcem/model.hpp"

using namespace dcem;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.base_channels = 8;
  c.channel_mult = {1, 2, 2};
  c.embedding_dim = 8;
  c.encoder_channels = 8;
  return c;
}

torch::Tensor unit_rows(int64_t b, int64_t d, uint64_t seed) {
  torch::manual_seed(seed);
  return torch::nn::functional::normalize(torch::randn({b, d}),
                                          torch::nn::functional::NormalizeFuncOptions().dim(1));
}

double rel_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return ((a - b).norm() / std::max(a.norm().item<double>(), 1e-30)).item<double>();
}

}  // namespace

TEST(Film, IdentityAtInit) {
  torch::manual_seed(0);
  Film film(6, 4);
  {
    torch::NoGradGuard g;
    film->proj->weight.zero_();
  }
  auto h = torch::randn({2, 4, 5, 3});
  auto s = torch::randn({2, 6});
  EXPECT_TRUE(torch::equal(film(h, s), h));
}

TEST(Film, ZeroScaleGivesShift) {
  Film film(3, 2);
  {
    torch::NoGradGuard g;
    film->proj->weight.zero_();
    film->proj->bias.copy_(torch::tensor({0.0f, 0.0f, 0.25f, -1.5f}));
  }
  auto out = film(torch::randn({1, 2, 4, 4}), torch::randn({1, 3}));
  EXPECT_TRUE(torch::allclose(out[0][0], torch::full({4, 4}, 0.25f)));
  EXPECT_TRUE(torch::allclose(out[0][1], torch::full({4, 4}, -1.5f)));
}

TEST(Film, GradientMatchesFiniteDifferences) {
  torch::manual_seed(3);
  Film film(5, 3);
  film->to(torch::kDouble);
  auto h = torch::randn({1, 3, 4, 4}, torch::kDouble);
  auto s = torch::randn({1, 5}, torch::kDouble);
  auto r = torch::randn({1, 3, 4, 4}, torch::kDouble);
  auto objective = [&] { return (film(h, s) * r).sum(); };
  film->zero_grad();
  objective().backward();
  const double eps = 1e-6;
  for (auto* p : {&film->proj->weight, &film->proj->bias}) {
    auto grad = p->grad().clone();
    auto flat = p->detach().view({-1});
    for (int64_t i = 0; i < flat.numel(); ++i) {
      torch::NoGradGuard g;
      const double orig = flat[i].item<double>();
      flat[i] = orig + eps;
      const double up = objective().item<double>();
      flat[i] = orig - eps;
      const double down = objective().item<double>();
      flat[i] = orig;
      const double fd = (up - down) / (2 * eps);
      const double an = grad.view({-1})[i].item<double>();
      EXPECT_LT(std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8}), 1e-4);
    }
  }
}

TEST(Film, DimensionMismatchIsContractError) {
  Film film(4, 2);
  EXPECT_THROW(film(torch::randn({1, 2, 3, 3}), torch::randn({1, 5})), ContractError);
  EXPECT_THROW(film(torch::randn({1, 3, 3, 3}), torch::randn({1, 4})), ContractError);
}

TEST(ConcatCondition, ShapesAndPassThrough) {
  auto h = torch::randn({2, 5, 4, 3});
  auto s = torch::randn({2, 7});
  auto out = concat_condition(h, s);
  EXPECT_EQ(out.size(1), 12);
  EXPECT_TRUE(torch::equal(out.slice(1, 0, 5), h));
  EXPECT_TRUE(torch::equal(out[1].slice(0, 5, 12).select(1, 2).select(1, 1), s[1]));
}

TEST(Denoiser, ZeroOutputLayerGivesZeros) {
  DcemNet net(small_config());
  net->zero_output_layer();
  auto out = net->forward(torch::randn({1, 2, 256, 16}), torch::rand({1}), unit_rows(1, 8, 1));
  EXPECT_EQ(out.abs().max().item<float>(), 0.0f);
}

TEST(Denoiser, OutputShapeMatchesInput) {
  DcemNet net(small_config());
  for (int64_t frames : {64, 128, 63}) {
    auto x = torch::randn({2, 2, 256, frames});
    auto out = net->forward(x, torch::rand({2}), unit_rows(2, 8, 2));
    EXPECT_EQ(out.sizes(), x.sizes());
  }
}

TEST(Denoiser, DependsOnSpeakerEmbedding) {
  torch::manual_seed(5);
  DcemNet net(small_config());
  auto x = torch::randn({1, 2, 256, 32});
  auto t = torch::full({1}, 0.4f);
  auto a = net->forward(x, t, unit_rows(1, 8, 10));
  auto att_a = net->last_attention_output.clone();
  auto b = net->forward(x, t, unit_rows(1, 8, 11));
  EXPECT_GT(rel_diff(a, b), 1e-6);
  EXPECT_GT(rel_diff(att_a, net->last_attention_output), 1e-6);
}

TEST(Denoiser, Deterministic) {
  DcemNet net(small_config());
  auto x = torch::randn({1, 2, 256, 16});
  auto t = torch::full({1}, 0.7f);
  auto s = unit_rows(1, 8, 4);
  EXPECT_TRUE(torch::equal(net->forward(x, t, s), net->forward(x, t, s)));
}

TEST(Denoiser, NonFiniteInputRejected) {
  NetDenoiser d{DcemNet(small_config())};
  auto x = torch::zeros({2, 256, 16}, torch::kDouble);
  x[0][3][4] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(d.denoise(x, 0.5, torch::ones({8}, torch::kDouble)), NumericError);
  EXPECT_THROW(d.denoise(torch::zeros({2, 256, 16}, torch::kDouble), 1.5,
                         torch::ones({8}, torch::kDouble)),
               DomainError);
}

TEST(Denoiser, BadShapesAreContractErrors) {
  DcemNet net(small_config());
  EXPECT_THROW(net->forward(torch::randn({1, 2, 100, 8}), torch::rand({1}), unit_rows(1, 8, 0)),
               ContractError);
  EXPECT_THROW(net->forward(torch::randn({1, 2, 256, 8}), torch::rand({1}), unit_rows(1, 5, 0)),
               ContractError);
}

TEST(Denoiser, DefaultConfigUnderFiveMillionParameters) {
  DcemNet net(ModelConfig{});
  EXPECT_LT(net->parameter_count(), 5'000'000);
  EXPECT_GT(net->parameter_count(), 100'000);
}

TEST(Denoiser, TinyConfigIsTiny) {
  ModelConfig c = tiny_model_config();
  DcemNet net(c);
  EXPECT_LE(net->parameter_count(), 10'000);
}

TEST(ModelConfig, Validation) {
  ModelConfig c;
  c.channel_mult = {};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.speaker_encoder = "lookup";
  EXPECT_THROW(c.validate(), ConfigError);
  c.num_speakers = 3;
  EXPECT_NO_THROW(c.validate());
  c = {};
  c.freq_bins = 255;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SpeakerEmbedding, UnitNormAndDeterministic) {
  DcemNet net(small_config());
  auto spk = make_speakers(2, 1);
  auto enr = synth_utterance(spk[0], 1.0, 5);
  auto a = embed_speaker(net, enr, TransformConfig{});
  auto b = embed_speaker(net, enr, TransformConfig{});
  EXPECT_NEAR(a.vector.norm().item<double>(), 1.0, 1e-6);
  EXPECT_TRUE(torch::equal(a.vector, b.vector));
}

TEST(SpeakerEmbedding, TooShortIsDomainError) {
  DcemNet net(small_config());
  Waveform w;
  w.samples.assign(7999, 0.1);
  EXPECT_THROW(embed_speaker(net, w, TransformConfig{}), DomainError);
}

TEST(SpeakerEmbedding, LookupMode) {
  ModelConfig c = small_config();
  c.speaker_encoder = "lookup";
  c.num_speakers = 4;
  DcemNet net(c);
  Waveform w;
  w.samples.assign(16000, 0.0);
  auto a = embed_speaker(net, w, TransformConfig{}, 2);
  auto b = embed_speaker(net, w, TransformConfig{}, 3);
  EXPECT_NEAR(a.vector.norm().item<double>(), 1.0, 1e-6);
  EXPECT_FALSE(torch::equal(a.vector, b.vector));
  EXPECT_THROW(embed_speaker(net, w, TransformConfig{}), ContractError);
}

TEST(SpeakerEmbedding, SameSpeakerCloserThanOthers) {
  torch::manual_seed(1);
  DcemNet net(ModelConfig{});
  auto speakers = make_speakers(6, 42);
  std::vector<std::vector<torch::Tensor>> emb(speakers.size());
  for (std::size_t s = 0; s < speakers.size(); ++s)
    for (int u = 0; u < 4; ++u)
      emb[s].push_back(
          embed_speaker(net, synth_utterance(speakers[s], 1.5, 100 * s + u), TransformConfig{})
              .vector);
  double intra = 0, inter = 0;
  int ni = 0, ne = 0;
  for (std::size_t a = 0; a < emb.size(); ++a)
    for (std::size_t b = a; b < emb.size(); ++b)
      for (std::size_t i = 0; i < emb[a].size(); ++i)
        for (std::size_t j = 0; j < emb[b].size(); ++j) {
          if (a == b && j <= i) continue;
          const double cos = (emb[a][i] * emb[b][j]).sum().item<double>();
          if (a == b) intra += cos, ++ni;
          else inter += cos, ++ne;
        }
  EXPECT_GT(intra / ni, inter / ne);
}

TEST(Checkpoint, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "dcem_test_ckpt";
  std::filesystem::remove_all(dir);
  torch::manual_seed(9);
  DcemNet live(small_config());
  DcemNet ema(small_config());
  save_checkpoint(dir / "a.bin", live, ema, 2, 7, R"({"x":1})");
  auto ck = load_checkpoint(dir / "a.bin");
  EXPECT_EQ(ck.stage, 2);
  EXPECT_EQ(ck.epoch, 7);
  EXPECT_EQ(ck.meta, R"({"x":1})");
  EXPECT_EQ(ck.config, small_config());
  auto x = torch::randn({1, 2, 256, 8});
  auto t = torch::full({1}, 0.3f);
  auto s = unit_rows(1, 8, 3);
  EXPECT_TRUE(torch::equal(live->forward(x, t, s), ck.live->forward(x, t, s)));
  EXPECT_TRUE(torch::equal(ema->forward(x, t, s), ck.ema->forward(x, t, s)));
  EXPECT_FALSE(std::filesystem::exists(dir / "a.bin.tmp"));
}

TEST(Checkpoint, CorruptOrMissingIsDataError) {
  const auto dir = std::filesystem::temp_directory_path() / "dcem_test_ckpt_bad";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "bad.bin") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir / "bad.bin"), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing.bin"), DataError);
}

TEST(CloneNet, IndependentCopy) {
  DcemNet a(small_config());
  auto b = clone_net(a);
  {
    torch::NoGradGuard g;
    a->conv_out->bias.add_(1.0);
  }
  EXPECT_FALSE(torch::equal(a->conv_out->bias, b->conv_out->bias));
}
