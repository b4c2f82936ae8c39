#include <gtest/gtest.h>

#include <fstream>

#include "dehaze/archive.hpp"
#include "dehaze/image.hpp"
#include "support/fixtures.hpp"

namespace dehaze {
namespace {

using testing::TempDir;

TEST(ImageTensor, RejectsBadExtents) {
  EXPECT_THROW(ImageTensor(0, 4, 3), InvalidArgument);
  EXPECT_THROW(ImageTensor(4, 4, 2), InvalidArgument);
  EXPECT_THROW(ImageTensor(2, 2, 3, std::vector<float>(5)), InvalidArgument);
}

TEST(ImageIo, PngRoundTripIsExactOnTheEightBitGrid) {
  TempDir dir("img");
  const ImageTensor im = testing::procedural_image(13, 17, 3);
  write_png(dir / "a.png", im);
  EXPECT_EQ(read_image(dir / "a.png"), im);
}

TEST(ImageIo, ChannelOrderIsRgb) {
  TempDir dir("rgb");
  ImageTensor im(1, 1, 3);
  im.at(0, 0, 0) = 1.0f;  // pure red
  write_png(dir / "r.png", im);
  const auto back = read_image(dir / "r.png");
  EXPECT_EQ(back.at(0, 0, 0), 1.0f);
  EXPECT_EQ(back.at(0, 0, 2), 0.0f);
}

TEST(ImageIo, GrayscaleExpandsUnlessAskedNotTo) {
  TempDir dir("gray");
  write_png(dir / "g.png", ImageTensor(3, 3, 1, 0.4f));
  EXPECT_EQ(read_image(dir / "g.png").channels(), 3);
  EXPECT_EQ(read_image(dir / "g.png", false).channels(), 1);
}

TEST(ImageIo, MissingFileRaisesIoError) { EXPECT_THROW(read_image("/nonexistent/x.png"), IoError); }

TEST(Image, ReflectPadMirrorsWithoutRepeatingTheEdge) {
  ImageTensor im(1, 3, 1, std::vector<float>{0.1f, 0.2f, 0.3f});
  const auto p = reflect_pad(im, 2, 2);
  ASSERT_EQ(p.height(), 3);
  ASSERT_EQ(p.width(), 5);
  EXPECT_FLOAT_EQ(p.at(0, 3, 0), 0.2f);
  EXPECT_FLOAT_EQ(p.at(0, 4, 0), 0.1f);
  EXPECT_FLOAT_EQ(p.at(2, 4, 0), 0.1f);
}

TEST(Image, CropAndBatchRoundTrip) {
  const ImageTensor im = testing::procedural_image(8, 8, 5);
  const auto c = crop(im, 2, 3, 4, 5);
  EXPECT_EQ(c.at(0, 0, 1), im.at(2, 3, 1));
  EXPECT_EQ(c.at(3, 4, 2), im.at(5, 7, 2));
  EXPECT_THROW(crop(im, 6, 0, 4, 4), InvalidArgument);
  const std::vector<ImageTensor> v{im, im};
  const auto b = to_batch<float>(v);
  EXPECT_EQ(b.shape(), (Shape{2, 3, 8, 8}));
  EXPECT_EQ(from_batch(b, 1), im);
}

TEST(Archive, SaveLoadRoundTripAndDeterministicBytes) {
  TempDir dir("arch");
  Archive a;
  a.set_meta("z", "last");
  a.set_meta("a", "first");
  Tensor<float> t(Shape{1, 2, 2, 3});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i) * 0.25f - 1.0f;
  a.put("w", t);
  a.save(dir / "x.dhz");
  a.save(dir / "y.dhz");
  EXPECT_EQ(file_fingerprint(dir / "x.dhz"), file_fingerprint(dir / "y.dhz"));

  const Archive b = Archive::load(dir / "x.dhz");
  EXPECT_EQ(b.require_meta("a"), "first");
  EXPECT_EQ(b.get("w").shape(), t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(b.get("w")[i], t[i]);
  EXPECT_THROW(b.get("missing"), IoError);
  EXPECT_THROW(b.require_meta("missing"), IoError);
}

TEST(Archive, RejectsGarbage) {
  TempDir dir("garbage");
  std::ofstream(dir / "bad.dhz") << "not an archive";
  EXPECT_THROW(Archive::load(dir / "bad.dhz"), IoError);
}

TEST(Archive, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(to_hex(0xabcull), "0000000000000abc");
}

}  // namespace
}  // namespace dehaze
