#include "annealprune/data.hpp"

#include <algorithm>
#include <cmath>
#include <gtest/gtest.h>
#include <map>

#include "annealprune/error.hpp"
#include "annealprune/network.hpp"
#include "testing/fixtures.hpp"

using namespace annealprune;
using namespace annealprune::testing;

namespace {

TEST(PixelBytes, FloatRoundTripRecoversEveryByte) {
  for (int b = 0; b < 256; ++b) {
    const float v = static_cast<float>(b) / 255.0f;
    EXPECT_EQ(std::lround(v * 255.0f), b);
  }
}

TEST(Cifar10, FixtureLoadsWithExactPixels) {
  const std::string dir = fresh_dir("cifar_small");
  write_cifar_archive(dir, {1, 1, 0, 0, 0}, 2, 31);
  const auto [train, test] = load_cifar10(dir);
  EXPECT_EQ(train.count(), 2u);
  EXPECT_EQ(test.count(), 2u);
  EXPECT_EQ(train.images.shape, (std::vector<std::size_t>{2, 32, 32, 3}));

  // Re-read the raw files and cross-check interleaving: pixel (y,x,ch)
  // comes from plane ch at offset y*32+x.
  std::ifstream in(dir + "/data_batch_1.bin", std::ios::binary);
  std::vector<unsigned char> raw(3073);
  in.read(reinterpret_cast<char*>(raw.data()), 3073);
  EXPECT_EQ(train.labels[0], raw[0]);
  for (const std::size_t probe : {0u, 17u, 555u, 1023u}) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const float expected =
          static_cast<float>(raw[1 + ch * 1024 + probe]) / 255.0f;
      EXPECT_EQ(train.images.data[probe * 3 + ch], expected);
    }
  }
}

TEST(Cifar10, ArchiveRoundTripsBitExact) {
  const std::string dir = fresh_dir("cifar_roundtrip");
  const auto files = write_cifar_archive(dir, {3, 2, 1, 2, 3}, 4, 77);
  const auto [train, test] = load_cifar10(dir);
  ASSERT_EQ(train.count(), 11u);
  ASSERT_EQ(test.count(), 4u);

  // Rebuild the byte stream from the loaded dataset and compare.
  auto rebuild = [](const Dataset& ds) {
    std::vector<std::uint8_t> out;
    for (std::size_t r = 0; r < ds.count(); ++r) {
      out.push_back(static_cast<std::uint8_t>(ds.labels[r]));
      const float* img = ds.images.data.data() + r * 3072;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t p = 0; p < 1024; ++p) {
          out.push_back(static_cast<std::uint8_t>(
              std::lround(img[p * 3 + ch] * 255.0f)));
        }
      }
    }
    return out;
  };
  std::vector<std::uint8_t> train_bytes;
  for (std::size_t f = 0; f < 5; ++f) {
    train_bytes.insert(train_bytes.end(), files[f].begin(), files[f].end());
  }
  EXPECT_EQ(rebuild(train), train_bytes);
  EXPECT_EQ(rebuild(test), files[5]);
}

TEST(Cifar10, OutOfRangeLabelNamesFileAndOffset) {
  const std::string dir = fresh_dir("cifar_badlabel");
  write_cifar_archive(dir, {1, 1, 1, 1, 1}, 1, 5);
  Rng rng(1);
  auto rec = cifar_record(10, rng);  // label byte out of range
  std::vector<std::uint8_t> bytes;
  auto good = cifar_record(3, rng);
  bytes.insert(bytes.end(), good.begin(), good.end());
  bytes.insert(bytes.end(), rec.begin(), rec.end());
  write_bytes(dir + "/data_batch_2.bin", bytes);
  try {
    load_cifar10(dir);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("data_batch_2.bin"), std::string::npos) << msg;
    EXPECT_NE(msg.find("3073"), std::string::npos) << msg;
  }
}

TEST(Cifar10, TruncatedRecordRejected) {
  const std::string dir = fresh_dir("cifar_trunc");
  write_cifar_archive(dir, {1, 1, 1, 1, 1}, 1, 5);
  Rng rng(1);
  auto rec = cifar_record(3, rng);
  rec.pop_back();
  write_bytes(dir + "/test_batch.bin", rec);
  EXPECT_THROW(load_cifar10(dir), FormatError);
}

TEST(Cifar10, MissingFileRejected) {
  const std::string dir = fresh_dir("cifar_missing");
  write_cifar_archive(dir, {1, 1, 1, 1, 1}, 1, 5);
  std::filesystem::remove(dir + "/data_batch_4.bin");
  EXPECT_THROW(load_cifar10(dir), FormatError);
}

TEST(MnistIdx, OneImageFixtureRoundTrips) {
  const std::string dir = fresh_dir("idx_one");
  Rng rng(13);
  std::vector<std::uint8_t> img(784);
  for (auto& b : img) b = static_cast<std::uint8_t>(rng.next_below(256));
  write_bytes(dir + "/img.idx", idx_image_bytes({img}, 28, 28));
  write_bytes(dir + "/lab.idx", idx_label_bytes({7}));

  const Dataset ds = load_mnist_idx(dir + "/img.idx", dir + "/lab.idx");
  ASSERT_EQ(ds.count(), 1u);
  EXPECT_EQ(ds.images.shape, (std::vector<std::size_t>{1, 28, 28, 1}));
  EXPECT_EQ(ds.labels[0], 7);
  for (std::size_t i = 0; i < 784; ++i) {
    EXPECT_EQ(std::lround(ds.images.data[i] * 255.0f), img[i]);
  }
}

TEST(MnistIdx, SwappedFilesGiveMagicError) {
  const std::string dir = fresh_dir("idx_swap");
  std::vector<std::uint8_t> img(784, 1);
  write_bytes(dir + "/img.idx", idx_image_bytes({img}, 28, 28));
  write_bytes(dir + "/lab.idx", idx_label_bytes({3}));
  EXPECT_THROW(load_mnist_idx(dir + "/lab.idx", dir + "/img.idx"),
               FormatError);
}

TEST(MnistIdx, TruncatedBodyRejected) {
  const std::string dir = fresh_dir("idx_trunc");
  std::vector<std::uint8_t> img(784, 1);
  auto bytes = idx_image_bytes({img}, 28, 28);
  // Count header says 60000 but only one image body follows.
  bytes[4] = 0;
  bytes[5] = 0;
  bytes[6] = 0xEA;
  bytes[7] = 0x60;
  write_bytes(dir + "/img.idx", bytes);
  std::vector<std::uint8_t> labels(60000, 0);
  write_bytes(dir + "/lab.idx", idx_label_bytes(labels));
  EXPECT_THROW(load_mnist_idx(dir + "/img.idx", dir + "/lab.idx"),
               FormatError);
}

TEST(MnistIdx, CountMismatchRejected) {
  const std::string dir = fresh_dir("idx_counts");
  std::vector<std::uint8_t> img(784, 1);
  write_bytes(dir + "/img.idx", idx_image_bytes({img}, 28, 28));
  write_bytes(dir + "/lab.idx", idx_label_bytes({1, 2}));
  EXPECT_THROW(load_mnist_idx(dir + "/img.idx", dir + "/lab.idx"),
               FormatError);
}

TEST(SynthBlobs, ZeroSpreadCollapsesOntoCenters) {
  const Dataset ds = synth_blobs(3, 5, 4, 0.0, 99);
  ASSERT_EQ(ds.count(), 15u);
  for (std::size_t c = 0; c < 3; ++c) {
    const float* first = ds.images.data.data() + (c * 5) * 4;
    for (std::size_t s = 1; s < 5; ++s) {
      const float* cur = ds.images.data.data() + (c * 5 + s) * 4;
      for (std::size_t d = 0; d < 4; ++d) {
        EXPECT_EQ(cur[d], first[d]);
      }
    }
  }
}

TEST(SynthBlobs, SameSeedSameDataset) {
  const Dataset a = synth_blobs(4, 10, 6, 0.2, 1234);
  const Dataset b = synth_blobs(4, 10, 6, 0.2, 1234);
  EXPECT_EQ(a.images.data, b.images.data);
  EXPECT_EQ(a.labels, b.labels);
  const Dataset c = synth_blobs(4, 10, 6, 0.2, 1235);
  EXPECT_NE(c.images.data, a.images.data);
}

TEST(SynthBlobs, ValuesStayInUnitInterval) {
  const Dataset ds = synth_blobs(3, 50, 5, 0.8, 4);
  for (float v : ds.images.data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(SynthBlobs, FewerThanTwoClassesRejected) {
  EXPECT_THROW(synth_blobs(1, 5, 4, 0.1, 1), ArgumentError);
}

TEST(SynthBlobs, LinearlySeparableForSoftmaxProbe) {
  const Dataset ds = synth_blobs(2, 100, 8, 0.02, 21);
  Rng init(22);
  Network net({LayerSpec::dense(2), LayerSpec::softmax()}, {8}, init);
  Rng fwd(23);
  for (int step = 0; step < 50; ++step) {
    const ForwardCache cache = net.forward(ds.images, Mode::Train, fwd);
    net.backward(cache, ds.labels);
    net.sgd_step(0.5f);
  }
  const ForwardCache cache = net.forward(ds.images, Mode::Eval, fwd);
  const LossReport rep = net.loss_report(cache, ds.labels);
  EXPECT_GE(static_cast<double>(rep.correct) / ds.count(), 0.99);
}

TEST(Batches, SizesWithShortFinalBatch) {
  const Dataset ds = synth_blobs(2, 5, 3, 0.1, 8);  // 10 samples
  const Batcher batcher(ds, BatchPlan{3, 42, 1});
  ASSERT_EQ(batcher.batch_count(), 4u);
  EXPECT_EQ(batcher.get(0).labels.size(), 3u);
  EXPECT_EQ(batcher.get(1).labels.size(), 3u);
  EXPECT_EQ(batcher.get(2).labels.size(), 3u);
  EXPECT_EQ(batcher.get(3).labels.size(), 1u);
}

TEST(Batches, OneEpochCoversDatasetExactly) {
  const Dataset ds = synth_blobs(3, 7, 4, 0.3, 9);  // 21 samples
  const Batcher batcher(ds, BatchPlan{4, 5, 2});
  std::multiset<std::pair<std::vector<float>, int>> seen, expected;
  for (std::size_t r = 0; r < ds.count(); ++r) {
    const float* img = ds.images.data.data() + r * 4;
    expected.insert({{img, img + 4}, ds.labels[r]});
  }
  for (std::size_t b = 0; b < batcher.batch_count(); ++b) {
    const Batch batch = batcher.get(b);
    for (std::size_t s = 0; s < batch.labels.size(); ++s) {
      const float* img = batch.images.data.data() + s * 4;
      seen.insert({{img, img + 4}, batch.labels[s]});
    }
  }
  EXPECT_EQ(seen, expected);
}

TEST(Batches, EpochCounterChangesOrder) {
  const Dataset ds = synth_blobs(2, 50, 3, 0.3, 10);
  const Batcher a(ds, BatchPlan{100, 6, 1});
  const Batcher b(ds, BatchPlan{100, 6, 2});
  EXPECT_NE(a.get(0).labels, b.get(0).labels);
  const Batcher c(ds, BatchPlan{100, 6, 1});
  EXPECT_EQ(a.get(0).labels, c.get(0).labels);
  EXPECT_EQ(a.get(0).images.data, c.get(0).images.data);
}

TEST(Batches, ZeroBatchSizeRejected) {
  const Dataset ds = synth_blobs(2, 5, 3, 0.1, 11);
  EXPECT_THROW(Batcher(ds, BatchPlan{0, 1, 1}), ArgumentError);
}

}  // namespace
