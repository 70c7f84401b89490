#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "istapp/checkpoint.hpp"
#include "istapp/gradcheck.hpp"
#include "istapp/measurement_io.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace istapp;
using istapp::testing::TempDir;

namespace {

NetConfig cfg_k(std::size_t K) {
  NetConfig cfg = gradcheck::tiny_config(5);
  cfg.stages = K;
  cfg.ratios = {0.25, 0.5};
  return cfg;
}

// Checkpoint with non-trivial optimizer state and counters.
ModelCheckpoint populated(std::size_t K = 2) {
  ModelCheckpoint ck = make_checkpoint(cfg_k(K), 11, AdamHyper{3e-4, 0.8, 0.99, 1e-7});
  std::uint64_t seed = 100;
  for (Parameter* p : ck.model.parameters()) {
    p->grad = istapp::testing::random_tensor(p->value.shape(), seed++);
  }
  adam_step(ck.model.parameters(), ck.adam);
  ck.epoch = 7;
  ck.running_loss = 0.1 + 1.0 / 3.0;
  return ck;
}

bool bits_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

void expect_identical(const ModelCheckpoint& a, const ModelCheckpoint& b) {
  EXPECT_TRUE(a.model.config() == b.model.config());
  const auto pa = a.model.parameters(), pb = b.model.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(bits_equal(pa[i]->value, pb[i]->value)) << pa[i]->name;
  ASSERT_EQ(a.operators.size(), b.operators.size());
  for (std::size_t i = 0; i < a.operators.size(); ++i) {
    EXPECT_TRUE(bits_equal(a.operators[i].phi, b.operators[i].phi));
    EXPECT_TRUE(bits_equal(a.operators[i].w_phi, b.operators[i].w_phi));
    EXPECT_EQ(a.operators[i].seed, b.operators[i].seed);
    EXPECT_EQ(a.operators[i].ratio, b.operators[i].ratio);
  }
  ASSERT_EQ(a.adam.m.size(), b.adam.m.size());
  for (std::size_t i = 0; i < a.adam.m.size(); ++i) {
    EXPECT_TRUE(bits_equal(a.adam.m[i], b.adam.m[i]));
    EXPECT_TRUE(bits_equal(a.adam.v[i], b.adam.v[i]));
  }
  EXPECT_EQ(a.adam.t, b.adam.t);
  EXPECT_EQ(a.adam.hyper.lr, b.adam.hyper.lr);
  EXPECT_EQ(a.adam.hyper.beta1, b.adam.hyper.beta1);
  EXPECT_EQ(a.adam.hyper.beta2, b.adam.hyper.beta2);
  EXPECT_EQ(a.adam.hyper.eps, b.adam.hyper.eps);
  EXPECT_EQ(a.epoch, b.epoch);
  EXPECT_EQ(a.running_loss, b.running_loss);
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(Checkpoint, SaveLoadIsBitExact) {
  TempDir dir("ckpt");
  const ModelCheckpoint ck = populated();
  checkpoint::save(dir / "a.ckpt", ck);
  const ModelCheckpoint back = checkpoint::load(dir / "a.ckpt");
  expect_identical(ck, back);
  EXPECT_EQ(checkpoint::encode(back), checkpoint::encode(ck));
}

TEST(Checkpoint, FreshStateWithoutMomentsRoundTrips) {
  const ModelCheckpoint ck = make_checkpoint(cfg_k(1), 3);
  const ModelCheckpoint back = checkpoint::decode(checkpoint::encode(ck));
  expect_identical(ck, back);
  EXPECT_TRUE(back.adam.m.empty());
}

TEST(Checkpoint, SizeMatchesHeaderCounts) {
  const ModelCheckpoint ck = populated();
  const auto bytes = checkpoint::encode(ck);
  std::uint64_t header_len = 0;
  for (int i = 7; i >= 0; --i) header_len = (header_len << 8) | bytes[8 + static_cast<std::size_t>(i)];
  std::size_t doubles = 3 * ck.model.parameter_count();
  for (const auto& op : ck.operators) doubles += op.phi.size();
  EXPECT_EQ(bytes.size(), 16 + header_len + 8 * doubles);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "ISTAPP01");
}

TEST(Checkpoint, StoredOperatorsAreUsedVerbatim) {
  ModelCheckpoint ck = make_checkpoint(cfg_k(1), 3);
  ck.operators[0].phi[0] = 42.0;  // no longer what the seed would regenerate
  ck.operators[0] = operator_from_matrix(8, 0.25, 3, ck.operators[0].phi);
  const ModelCheckpoint back = checkpoint::decode(checkpoint::encode(ck));
  EXPECT_EQ(back.operators[0].phi[0], 42.0);
}

TEST(Checkpoint, TruncationIsRejectedWithOffset) {
  TempDir dir("ckpt");
  const auto bytes = checkpoint::encode(populated());
  for (std::size_t keep : {std::size_t{4}, std::size_t{12}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    write_bytes(dir / "t.ckpt", {bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep)});
    try {
      checkpoint::load(dir / "t.ckpt");
      ADD_FAILURE() << "accepted truncated file of " << keep << " bytes";
    } catch (const FormatError& e) {
      EXPECT_LE(e.offset(), keep);
      EXPECT_NE(std::string(e.what()).find("t.ckpt"), std::string::npos);
    }
  }
}

TEST(Checkpoint, TrailingBytesAreRejected) {
  auto bytes = checkpoint::encode(populated());
  bytes.push_back(0);
  EXPECT_THROW(checkpoint::decode(bytes), FormatError);
}

TEST(Checkpoint, BadMagicIsRejectedAtOffsetZero) {
  auto bytes = checkpoint::encode(populated());
  bytes[3] = 'X';
  try {
    checkpoint::decode(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(Checkpoint, VersionMismatchIsDetectedBeforeParameters) {
  const auto good = checkpoint::encode(populated());
  std::string text(good.begin(), good.end());
  const auto pos = text.find("format_version=1");
  ASSERT_NE(pos, std::string::npos);
  text[pos + 15] = '9';
  // Drop the whole payload: if parameters were read first this would be a truncation error instead.
  std::uint64_t header_len = 0;
  for (int i = 7; i >= 0; --i) header_len = (header_len << 8) | static_cast<unsigned char>(text[8 + static_cast<std::size_t>(i)]);
  const std::vector<unsigned char> bytes(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(16 + header_len));
  try {
    checkpoint::decode(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
    EXPECT_LT(e.offset(), 16 + header_len);
  }
}

TEST(Checkpoint, ExpectedConfigIsChecked) {
  TempDir dir("ckpt");
  checkpoint::save(dir / "k2.ckpt", populated(2));
  EXPECT_NO_THROW(checkpoint::load(dir / "k2.ckpt", cfg_k(2)));
  NetConfig other_seed = cfg_k(2);
  other_seed.seed = 999;
  EXPECT_NO_THROW(checkpoint::load(dir / "k2.ckpt", other_seed));
  EXPECT_THROW(checkpoint::load(dir / "k2.ckpt", cfg_k(3)), ShapeError);
  NetConfig no_cbs = cfg_k(2);
  no_cbs.cbs = false;
  EXPECT_THROW(checkpoint::load(dir / "k2.ckpt", no_cbs), ShapeError);
}

TEST(Checkpoint, MissingFileIsIoError) {
  TempDir dir("ckpt");
  EXPECT_THROW(checkpoint::load(dir / "absent.ckpt"), IoError);
}

TEST(Checkpoint, SaveReplacesAtomically) {
  TempDir dir("ckpt");
  ModelCheckpoint ck = populated();
  checkpoint::save(dir / "c.ckpt", ck);
  ck.epoch = 8;
  checkpoint::save(dir / "c.ckpt", ck);
  EXPECT_EQ(checkpoint::load(dir / "c.ckpt").epoch, 8u);
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++files;
  EXPECT_EQ(files, 1u);  // no temporary left behind
}

TEST(Checkpoint, OperatorLookupByRatio) {
  const ModelCheckpoint ck = make_checkpoint(cfg_k(1), 20);
  EXPECT_EQ(ck.operator_for(0.5).seed, 21u);
  EXPECT_EQ(ck.operator_for(0.25).measurements, 16u);
  EXPECT_THROW(ck.operator_for(0.3), DomainError);
}

TEST(MeasurementFile, RoundTripAndValidation) {
  TempDir dir("meas");
  const SamplingOperator op = make_operator(8, 0.25, 5);
  MeasurementFile m;
  m.block_size = 8;
  m.ratio = 0.25;
  m.seed = 5;
  m.image_height = 13;
  m.image_width = 16;
  m.values = measure(op, istapp::testing::random_tensor({1, 16, 16}, 1));
  measurement_io::save(dir / "m.meas", m);
  const MeasurementFile back = measurement_io::load(dir / "m.meas");
  EXPECT_TRUE(bits_equal(back.values, m.values));
  EXPECT_EQ(back.image_height, 13u);
  EXPECT_EQ(back.regenerate_operator().phi, op.phi);

  auto bytes = measurement_io::encode(m);
  bytes.pop_back();
  EXPECT_THROW(measurement_io::decode(bytes), FormatError);
  m.values = Tensor({15, 2, 2});  // wrong M for B=8, gamma=0.25
  EXPECT_THROW(measurement_io::decode(measurement_io::encode(m)), FormatError);
}
