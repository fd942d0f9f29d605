#include <gtest/gtest.h>

#include <cmath>

#include "scribeid/errors.hpp"
#include "scribeid/rng.hpp"
#include "scribeid/synth.hpp"

using namespace scribeid;

namespace {

double mean_distance(const NormalizedTrajectory& a, const NormalizedTrajectory& b) {
  double s = 0.0;
  for (int t = 0; t < a.timesteps(); ++t) s += std::hypot(a.x(t) - b.x(t), a.y(t) - b.y(t));
  return s / a.timesteps();
}

}  // namespace

TEST(Synth, SameSeedsGiveIdenticalTrajectories) {
  const WriterStyleModel style = synth_writer(123);
  for (char l : std::string(kTemplateLetters)) {
    EXPECT_EQ(synth_trajectory(style, l, 9), synth_trajectory(synth_writer(123), l, 9));
  }
}

TEST(Synth, IdentityStyleReproducesBaseTemplate) {
  WriterStyleModel style;
  style.writer_seed = 5;
  StyleMode identity;
  identity.tempo_ms = 600.0;
  style.letters['g'] = {identity};
  RawTrajectory a = synth_trajectory(style, 'g', 17);
  const RawTrajectory b = sample_base_template('g');
  a.device.reset();
  EXPECT_EQ(a, b);
}

TEST(Synth, MixtureWeightsArePositiveAndSumToOne) {
  const WriterStyleModel style = synth_writer(77);
  for (const auto& [letter, modes] : style.letters) {
    EXPECT_EQ(modes.size(), 3u);
    double total = 0.0;
    for (const StyleMode& m : modes) {
      EXPECT_GT(m.weight, 0.0);
      total += m.weight;
    }
    EXPECT_NEAR(total, 1.0, 1e-12) << letter;
  }
}

TEST(Synth, UnknownLetterThrows) {
  const WriterStyleModel style = synth_writer(1);
  EXPECT_THROW(synth_trajectory(style, 'z', 0), UnsupportedLetterError);
  EXPECT_THROW(sample_base_template('q'), UnsupportedLetterError);
}

TEST(Synth, OutputIsValidAndTimed) {
  const WriterStyleModel style = synth_writer(31);
  for (char l : std::string(kTemplateLetters)) {
    for (std::uint64_t k = 0; k < 20; ++k) {
      const RawTrajectory r = synth_trajectory(style, l, k);
      ASSERT_NO_THROW(validate(r));
      for (const Point& p : r.points) {
        ASSERT_TRUE(p.t.has_value());
        ASSERT_TRUE(std::isfinite(p.x) && std::isfinite(p.y));
      }
    }
  }
}

TEST(Synth, WritersAreFartherApartThanInstances) {
  for (char l : std::string(kTemplateLetters)) {
    const WriterStyleModel a = synth_writer(derive_seed(2024, {1})), b = synth_writer(derive_seed(2024, {2}));
    double within = 0.0, between = 0.0;
    for (std::uint64_t k = 0; k < 100; ++k) {
      const NormalizedTrajectory x = normalize(synth_trajectory(a, l, k));
      within += mean_distance(x, normalize(synth_trajectory(a, l, k + 1000)));
      between += mean_distance(x, normalize(synth_trajectory(b, l, k)));
    }
    EXPECT_GT(between, within) << l;
  }
}

TEST(Synth, CorpusIsPureFunctionOfSeed) {
  CorpusSpec spec;
  spec.writers = 3;
  spec.instances = 2;
  const auto a = generate_corpus(spec), b = generate_corpus(spec);
  ASSERT_EQ(a.size(), 3u * 6u * 2u);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.front().writer_id, "w000");
  EXPECT_EQ(a.back().writer_id, "w002");
  spec.seed += 1;
  EXPECT_NE(generate_corpus(spec), a);
}
