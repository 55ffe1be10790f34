#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "test_support.hpp"

using namespace dag;
using namespace dag::testing;

namespace {

const char* kSample = R"(# planted synthetic benchmark
synth.n_exo = 3
synth.length = 600
synth.seed = 4
data.split = 6:2:2
model.lookback = 16
model.horizon = 4
model.d_model = 8
model.patch_len = 8
model.stride = 4
model.lambda1 = 0.25
model.channel_alpha = 0.5
train.epochs = 3
train.lr = 0.003
train.lambda2 = 0.1
)";

std::string expect_config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no ConfigError for:\n" << text;
  return {};
}

}  // namespace

TEST(Config, ParsesValues) {
  const RunConfig c = parse_config(kSample);
  ASSERT_TRUE(c.synth);
  EXPECT_EQ(c.synth->n_exo, 3u);
  EXPECT_EQ(c.synth->seed, 4u);
  EXPECT_EQ(c.data.split.str(), "6:2:2");
  EXPECT_EQ(c.model.stride, 4u);
  EXPECT_EQ(c.model.lambda1, 0.25);
  EXPECT_EQ(c.model.wiring.channel_alpha, 0.5);
  EXPECT_FALSE(c.model.wiring.temporal_alpha);
  EXPECT_EQ(c.train.epochs, 3u);
  EXPECT_EQ(c.train.lambda2, 0.1);
  EXPECT_EQ(c.out_dir, "out");
}

TEST(Config, TextRoundTrip) {
  const RunConfig c = parse_config(kSample);
  const std::string text = to_text(c);
  const RunConfig back = parse_config(text);
  EXPECT_EQ(to_text(back), text);
  EXPECT_EQ(run_fingerprint(entries(back)), run_fingerprint(entries(c)));
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_NE(expect_config_error(std::string(kSample) + "model.d_modle = 4\n").find("model.d_modle"), std::string::npos);
  EXPECT_NE(expect_config_error(std::string(kSample) + "train.lr = 0.01\n").find("train.lr"), std::string::npos);
  std::string bad = kSample;
  bad.replace(bad.find("model.lambda1 = 0.25"), 20, "model.lambda1 = high");
  EXPECT_NE(expect_config_error(bad).find("model.lambda1"), std::string::npos);
  bad = kSample;
  bad.replace(bad.find("train.epochs = 3"), 16, "train.epochs = -3");
  EXPECT_NE(expect_config_error(bad).find("train.epochs"), std::string::npos);
  EXPECT_NE(expect_config_error("model.lookback = 16\n").find("data.path"), std::string::npos);
  EXPECT_NE(expect_config_error("data.path = x.csv\nnonsense\n").find("line 2"), std::string::npos);
  EXPECT_NE(expect_config_error(std::string(kSample) + "data.split = 1:1\n").find("data.split"), std::string::npos);
  EXPECT_NE(expect_config_error("data.path = x.csv\nmodel.normalize = maybe\n").find("model.normalize"),
            std::string::npos);
  EXPECT_NE(expect_config_error("synth.ar = 0.9,0.2,0.1\n").find("synth.ar"), std::string::npos);
}

TEST(Config, LoadResolvesRelativeDataPath) {
  const auto dir = std::filesystem::temp_directory_path() / "dag_cfg_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "run.cfg");
    out << "data.path = series.csv\nmodel.lookback = 4\nmodel.horizon = 2\nmodel.patch_len = 2\nmodel.stride = 2\n";
  }
  const RunConfig c = load_config((dir / "run.cfg").string());
  EXPECT_EQ(c.data.path, (dir / "series.csv").string());
  EXPECT_THROW(load_config((dir / "missing.cfg").string()), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Config, ResolveDatasetSetsChannelCounts) {
  RunConfig c = parse_config(kSample);
  const auto ds = resolve_dataset(c);
  EXPECT_EQ(c.model.n_exo, 3u);
  EXPECT_EQ(c.model.n_endo, 1u);
  EXPECT_EQ(ds->length, 600u);
}

TEST(Checkpoint, BitwiseRoundTrip) {
  RunConfig c = parse_config(kSample);
  resolve_dataset(c);
  c.model.seed = 17;
  const DagModel m(c.model);
  const auto path = (std::filesystem::temp_directory_path() / "dag_ckpt_test.bin").string();
  save_model(path, c, m);
  const LoadedModel back = load_model(path);
  EXPECT_EQ(to_text(back.config), to_text(c));
  const auto a = m.named_parameters(), b = back.model.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].tensor.vec(), b[i].tensor.vec()) << a[i].name;
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, SpecialValuesSurvive) {
  CheckpointData ck{"k = v\n", {{"x", {2, 2}, {-0.0, 1e-310, 1.0 / 3.0, -1e300}}}};
  const CheckpointData back = decode_checkpoint(encode_checkpoint(ck));
  EXPECT_EQ(back.config_text, ck.config_text);
  ASSERT_EQ(back.records.size(), 1u);
  EXPECT_EQ(back.records[0].shape, (Shape{2, 2}));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back.records[0].values[i]), std::bit_cast<std::uint64_t>(ck.records[0].values[i]));
  }
}

TEST(Checkpoint, DetectsCorruption) {
  CheckpointData ck{"a = 1\n", {{"w", {3}, {1, 2, 3}}}};
  const std::string good = encode_checkpoint(ck);
  for (std::size_t pos : {std::size_t{3}, std::size_t{10}, good.size() / 2, good.size() - 1}) {
    std::string bad = good;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x5a);
    EXPECT_THROW(decode_checkpoint(bad), ParseError) << pos;
  }
  EXPECT_THROW(decode_checkpoint(good.substr(0, good.size() - 3)), ParseError);
  EXPECT_THROW(decode_checkpoint(""), ParseError);
  EXPECT_THROW(read_checkpoint("/nonexistent/dag.ckpt"), IoError);
}

TEST(Checkpoint, RecordsMustMatchModel) {
  const DagModel m(tiny_config());
  auto records = records_of(m.named_parameters());
  records.pop_back();
  EXPECT_THROW(assign_records(m.named_parameters(), records), ParseError);
  records = records_of(m.named_parameters());
  records.push_back({"extra", {1}, {0.0}});
  EXPECT_THROW(assign_records(m.named_parameters(), records), ParseError);
  records = records_of(m.named_parameters());
  records[0].shape = {records[0].values.size()};
  if (records[0].shape != m.named_parameters()[0].tensor.shape()) {
    EXPECT_THROW(assign_records(m.named_parameters(), records), ParseError);
  }
}
