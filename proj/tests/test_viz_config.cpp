#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "testing.hpp"
#include "wednet/config.hpp"
#include "wednet/viz.hpp"

using namespace wednet;
using wednet::testing::random_windows;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("wednet_viz_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<std::string> lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

Array3<double> random_map(int outer, int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Array3<double> a(outer, n, n);
  for (auto& v : a.data()) v = u(rng);
  return a;
}

KeyValues parse(const std::string& text) {
  std::istringstream in(text);
  return parse_key_values(in);
}

}  // namespace

// ---------------------------------------------------------------------------
// Canvas

TEST(Canvas, WritesBinaryPpm) {
  Canvas c(3, 2);
  c.set(1, 0, {255, 0, 0});
  c.set(9, 9, {0, 0, 0});  // out of range: ignored
  const auto dir = scratch("ppm");
  c.write_ppm(dir / "a.ppm");
  std::ifstream in(dir / "a.ppm", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = "P6\n3 2\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 18);
  EXPECT_EQ(bytes.substr(0, header.size()), header);
  EXPECT_EQ(static_cast<unsigned char>(bytes[header.size() + 3]), 255);
  EXPECT_EQ(static_cast<unsigned char>(bytes[header.size() + 4]), 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[header.size()]), 255);  // white background
}

TEST(Canvas, LineEndpointsArePainted) {
  Canvas c(10, 10);
  c.line(1, 2, 8, 7, {0, 0, 0});
  EXPECT_EQ(c.at(1, 2), (Rgb{0, 0, 0}));
  EXPECT_EQ(c.at(8, 7), (Rgb{0, 0, 0}));
  EXPECT_EQ(c.at(9, 0), (Rgb{255, 255, 255}));
}

// ---------------------------------------------------------------------------
// causal_map

TEST(CausalMap, IntensitiesAreIdentifySpatialScores) {
  std::mt19937_64 rng(1);
  AttentionBundle b;
  b.self_spatial = random_map(3, 6, rng);
  b.cross_spatial = random_map(3, 6, rng);
  const auto sel = identify_spatial(b.self_spatial, b.cross_spatial, 0.2);
  for (int target = 0; target < 6; ++target) {
    const auto rows = causal_map(b, target, 0.2);
    ASSERT_EQ(rows.size(), 6u);
    for (int j = 0; j < 6; ++j) {
      EXPECT_EQ(rows[static_cast<std::size_t>(j)].intensity, sel.score[static_cast<std::size_t>(target)][static_cast<std::size_t>(j)]);
      const auto& m = sel.per_parcel[static_cast<std::size_t>(target)];
      EXPECT_EQ(rows[static_cast<std::size_t>(j)].causal, std::find(m.begin(), m.end(), j) != m.end());
    }
  }
  EXPECT_THROW(causal_map(b, 6, 0.2), ValidationError);
  const auto dir = scratch("causal");
  write_causal_map(dir / "m", causal_map(b, 2, 0.2), nullptr, 2);
  const auto csv = lines(dir / "m.csv");
  EXPECT_EQ(csv.front(), "parcel,intensity,causal");
  EXPECT_EQ(csv.size(), 7u);
  EXPECT_TRUE(std::filesystem::exists(dir / "m.ppm"));
}

// ---------------------------------------------------------------------------
// pca

TEST(Pca, RecoversDominantAxisWithFixedSign) {
  // Points exactly on a line along (3, 4) / 5, plus a third column of small noise.
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0, 1);
  Eigen::MatrixXd x(50, 3);
  for (int i = 0; i < 50; ++i) {
    const double s = 10 * g(rng);
    x(i, 0) = 0.6 * s + 7;
    x(i, 1) = 0.8 * s - 2;
    x(i, 2) = 0.01 * g(rng);
  }
  const auto p = pca2(x);
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  for (int i = 0; i < 50; ++i) EXPECT_NEAR(p(i, 0), centered.row(i).dot(Eigen::Vector3d(0.6, 0.8, 0.0)), 1e-4);
  EXPECT_NEAR(p.col(0).mean(), 0.0, 1e-9);
  // Negating the data keeps the axes, so projections negate.
  const auto q = pca2(-x);
  EXPECT_LT((q + p).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_THROW(pca2(Eigen::MatrixXd(1, 3)), ValidationError);
}

TEST(Pca, ProjectionHasOneRowPerWindowAndBranch) {
  const auto ws = random_windows(12, 3, 2, 4, 3);
  const auto mc = shape_model(ModelConfig::reduced(0, 0), ws.front());
  WedNet<double> model(mc, 3);
  const auto nz = Normalizer::fit(ws);
  const auto rows = pca_projection(model, nz, ws, 5);
  ASSERT_EQ(rows.size(), 24u);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(rows[i].branch, "intrinsic");
    EXPECT_EQ(rows[12 + i].branch, "weather");
    EXPECT_EQ(rows[i].window, ws[i].id);
    EXPECT_EQ(rows[12 + i].condition, ws[i].condition.value);
  }
  const auto dir = scratch("pca");
  write_pca(dir / "p", rows);
  const auto csv = lines(dir / "p.csv");
  EXPECT_EQ(csv.front(), "pc1,pc2,branch,condition,window");
  EXPECT_EQ(csv.size(), 25u);
  auto nw = mc;
  nw.variant = Variant::no_weather;
  WedNet<double> plain(nw, 3);
  EXPECT_THROW(pca_projection(plain, nz, ws), ValidationError);
}

TEST(PredCurve, PointsFollowWindows) {
  const auto ws = random_windows(7, 3, 2, 4, 4);
  const auto mc = shape_model(ModelConfig::reduced(0, 0), ws.front());
  WedNet<double> model(mc, 4);
  const auto nz = Normalizer::fit(ws);
  const auto pts = prediction_curve(model, nz, ws, 2, 1, 3);
  ASSERT_EQ(pts.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(pts[i].truth, ws[i].flow_future(0, 2, 1));
    EXPECT_EQ(pts[i].time, ws[i].start_time + 3 * kSecondsPerHour);
    EXPECT_TRUE(std::isfinite(pts[i].prediction));
  }
  EXPECT_THROW(prediction_curve(model, nz, ws, 4), ValidationError);
  const auto dir = scratch("curve");
  write_pred_curve(dir / "c", pts);
  EXPECT_EQ(lines(dir / "c.csv").size(), 8u);
}

// ---------------------------------------------------------------------------
// Config files

TEST(Config, ParsesCommentsAndWhitespace) {
  const auto kv = parse("# header\n lr = 0.01  # inline\n\nepochs=3\r\n");
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv.at("lr"), "0.01");
  EXPECT_EQ(kv.at("epochs"), "3");
  EXPECT_THROW(parse("lr 0.01\n"), ValidationError);
  EXPECT_THROW(parse(" = 3\n"), ValidationError);
  EXPECT_THROW(read_key_values("/nonexistent/wednet.cfg"), ValidationError);
}

TEST(Config, AppliesTrainingKeys) {
  TrainConfig c;
  apply_config(c, parse("preset = desk\nepochs = 7\nvariant = no_memory\nembed = 4,4,4,2,2\ngrl_lambda = 0.5\nseed = 12\n"));
  const auto desk = desk_config();
  EXPECT_EQ(c.epochs, 7);
  EXPECT_EQ(c.batch_size, desk.batch_size);
  EXPECT_EQ(c.model.variant, Variant::no_memory);
  EXPECT_EQ(c.model.width(), 16);
  EXPECT_EQ(c.model.embed.time_of_day, 2);
  EXPECT_DOUBLE_EQ(c.model.grl_lambda, 0.5);
  EXPECT_EQ(c.seed, 12u);
  TrainConfig full;
  apply_config(full, parse("preset = full\n"));
  EXPECT_EQ(full.hash(), TrainConfig{}.hash());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  TrainConfig c;
  EXPECT_THROW(apply_config(c, parse("learning_rate = 1\n")), ValidationError);
  EXPECT_THROW(apply_config(c, parse("lr = fast\n")), ValidationError);
  EXPECT_THROW(apply_config(c, parse("epochs = 3x\n")), ValidationError);
  EXPECT_THROW(apply_config(c, parse("embed = 1,2,3\n")), ValidationError);
  EXPECT_THROW(apply_config(c, parse("preset = huge\n")), ValidationError);
  EXPECT_THROW(apply_config(c, parse("variant = bogus\n")), ValidationError);
  EXPECT_THROW(apply_config(c, parse("epochs = 0\n")), ValidationError);
}

TEST(Config, AppliesAugmentKeys) {
  AugmentOptions o;
  apply_config(o, parse("r = 5\nr_a = 0.1\nwindow = 0\nseed = 3\n"));
  EXPECT_EQ(o.r, 5);
  EXPECT_DOUBLE_EQ(o.r_a, 0.1);
  EXPECT_EQ(o.window, 0);
  EXPECT_EQ(o.seed, 3u);
  EXPECT_THROW(apply_config(o, parse("r_a = 0\n")), ValidationError);
  EXPECT_THROW(apply_config(o, parse("lr = 1\n")), ValidationError);
}
