#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dehaze/haze_model.hpp"

namespace dehaze::haze {
namespace {

ImageTensor filled(int h, int w, float v) { return ImageTensor(h, w, 3, v); }

TEST(Synthesize, UnitTransmissionIsIdentity) {
  ImageTensor j(4, 5, 3);
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> u(0, 1);
  for (float& v : j.values()) v = u(rng);
  EXPECT_EQ(synthesize_haze(j, TransmissionMap(4, 5, 1.0f), AtmosphericLight{{0.8f, 0.9f, 1.0f}}), j);
}

TEST(Synthesize, ZeroTransmissionGivesAirlight) {
  const auto out = synthesize_haze(filled(3, 3, 0.2f), TransmissionMap(3, 3, 0.0f), AtmosphericLight{{0.7f, 0.8f, 0.9f}});
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 3; ++x) {
      EXPECT_FLOAT_EQ(out.at(y, x, 0), 0.7f);
      EXPECT_FLOAT_EQ(out.at(y, x, 1), 0.8f);
      EXPECT_FLOAT_EQ(out.at(y, x, 2), 0.9f);
    }
  }
}

TEST(Synthesize, ScalarExample) {
  const auto out = synthesize_haze(filled(1, 1, 0.5f), TransmissionMap(1, 1, 0.5f), AtmosphericLight::gray(1.0f));
  EXPECT_FLOAT_EQ(out.at(0, 0, 0), 0.75f);
}

TEST(Synthesize, SingleChannelUsesFirstAirlightComponent) {
  const auto out = synthesize_haze(ImageTensor(2, 2, 1, 0.0f), TransmissionMap(2, 2, 0.5f), AtmosphericLight::gray(0.8f));
  EXPECT_FLOAT_EQ(out.at(1, 1, 0), 0.4f);
}

TEST(Synthesize, ShapeMismatchNamesBothShapes) {
  try {
    synthesize_haze(filled(4, 4, 0.5f), TransmissionMap(3, 4, 0.5f), AtmosphericLight{});
    FAIL() << "expected InvalidArgument";
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("4x4x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("3x4"), std::string::npos) << msg;
  }
}

TEST(Transmission, Examples) {
  DepthMap d{1, 3, {0.0f, 1.0f, 2.0f}};
  const auto t = transmission_from_depth(d, std::log(2.0));
  EXPECT_FLOAT_EQ(t.at(0, 0), 1.0f);
  EXPECT_NEAR(t.at(0, 1), 0.5f, 1e-7);
  EXPECT_NEAR(transmission_from_depth(d, 0.6).at(0, 2), std::exp(-1.2), 1e-7);
  EXPECT_NEAR(transmission_from_depth(d, 0.6).at(0, 2), 0.3012, 5e-5);
}

TEST(Transmission, RejectsNonPositiveBeta) {
  DepthMap d{1, 1, {1.0f}};
  EXPECT_THROW(transmission_from_depth(d, 0.0), InvalidArgument);
  EXPECT_THROW(transmission_from_depth(d, -1.0), InvalidArgument);
}

TEST(Transmission, StrictlyDecreasingInBeta) {
  DepthMap d{1, 3, {0.25f, 1.0f, 3.0f}};
  for (int px = 0; px < 3; ++px) {
    float prev = 2.0f;
    for (double beta = 0.1; beta <= 2.0; beta += 0.1) {
      const float t = transmission_from_depth(d, beta).data[px];
      EXPECT_LT(t, prev) << "beta " << beta;
      EXPECT_GT(t, 0.0f);
      EXPECT_LE(t, 1.0f);
      prev = t;
    }
  }
}

TEST(Recover, Examples) {
  EXPECT_FLOAT_EQ(recover_clear(filled(1, 1, 0.75f), TransmissionMap(1, 1, 0.5f), AtmosphericLight::gray(1.0f)).at(0, 0, 1),
                  0.5f);
  ImageTensor h(2, 3, 3, 0.3f);
  EXPECT_EQ(recover_clear(h, TransmissionMap(2, 3, 1.0f), AtmosphericLight::gray(0.9f)), h);
}

TEST(Recover, FloorsTransmission) {
  // (0.5 - 1) / max(0.01, 0.05) + 1 = -9 -> clamped to 0
  const auto out = recover_clear(filled(1, 1, 0.5f), TransmissionMap(1, 1, 0.01f), AtmosphericLight::gray(1.0f));
  EXPECT_EQ(out.at(0, 0, 0), 0.0f);
  const auto mild = recover_clear(filled(1, 1, 0.99f), TransmissionMap(1, 1, 0.01f), AtmosphericLight::gray(1.0f));
  EXPECT_NEAR(mild.at(0, 0, 0), 1.0f - 0.01f / kTransmissionFloor, 1e-6);
}

TEST(Properties, RoundTripAndRange) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<float> u01(0, 1), ua(0.7f, 1.0f), ut(0.2f, 0.9f);
  for (int trial = 0; trial < 50; ++trial) {
    ImageTensor j(8, 9, 3);
    for (float& v : j.values()) v = u01(rng);
    TransmissionMap t(8, 9, 1.0f);
    for (float& v : t.data) v = ut(rng);
    const AtmosphericLight a{{ua(rng), ua(rng), ua(rng)}};
    const auto hazy = synthesize_haze(j, t, a);
    const auto back = recover_clear(hazy, t, a);
    for (std::size_t i = 0; i < j.size(); ++i) {
      EXPECT_NEAR(back.values()[i], j.values()[i], 1e-5);
      EXPECT_GE(hazy.values()[i], 0.0f);
      EXPECT_LE(hazy.values()[i], 1.0f);
    }
  }
}

}  // namespace
}  // namespace dehaze::haze
