#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "bodycomp/nnet.hpp"
#include "bodycomp/rng.hpp"
#include "test_util.hpp"

using namespace bodycomp;

namespace {

ArchitectureSpec tiny_arch() {
  ArchitectureSpec a;
  a.image_side = 8;
  a.conv_channels = {2, 2};
  a.structured_widths = {4, 4};
  a.trunk_widths = {8};
  a.head_hidden = 3;
  return a;
}

PreprocessedSample random_sample(int side, Rng& rng, double pbf, double smm) {
  PreprocessedSample s;
  s.full_face = Image::make(side, side, 1);
  for (auto& p : s.full_face.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  for (auto& q : s.quarters) {
    q = Image::make(side, side, 1);
    for (auto& p : q.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  }
  s.structured.resize(7);
  for (auto& v : s.structured) v = rng.normal();
  s.pbf = pbf;
  s.smm = smm;
  return s;
}

std::map<std::string, const Tensor*> param_map(const NetworkModel& m) {
  const auto registry = parameter_registry(m.arch);
  std::map<std::string, const Tensor*> map;
  for (std::size_t i = 0; i < registry.size(); ++i) {
    map[registry[i].name] = &m.params[i];
  }
  return map;
}

// ---------------------------------------------------------------------------
// Independent forward pass, gather-style per output element, for a
// single-conv-level architecture.

std::vector<double> naive_conv_relu_gap(const std::vector<double>& img,
                                        int side, const Tensor& w,
                                        const Tensor& b, int cout, int k) {
  std::vector<double> gap(cout, 0.0);
  for (int co = 0; co < cout; ++co) {
    double sum = 0;
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        double acc = b[co];
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const int sy = y + ky - k / 2;
            const int sx = x + kx - k / 2;
            if (sy < 0 || sy >= side || sx < 0 || sx >= side) continue;
            acc += w[((co * 1 + 0) * k + ky) * k + kx] * img[sy * side + sx];
          }
        }
        sum += std::max(0.0, acc);
      }
    }
    gap[co] = sum / (side * side);
  }
  return gap;
}

std::vector<double> naive_dense(const std::vector<double>& x, const Tensor& w,
                                const Tensor& b, int out_dim, bool relu) {
  const int in_dim = static_cast<int>(x.size());
  std::vector<double> y(out_dim, 0.0);
  for (int o = 0; o < out_dim; ++o) {
    double acc = b[o];
    for (int i = 0; i < in_dim; ++i) acc += w[o * in_dim + i] * x[i];
    y[o] = relu ? std::max(0.0, acc) : acc;
  }
  return y;
}

Prediction naive_forward(const NetworkModel& m, const PreprocessedSample& s) {
  const auto pm = param_map(m);
  const ArchitectureSpec& a = m.arch;
  const char* branches[5] = {"full_face", "quarter_UL", "quarter_UR",
                             "quarter_LL", "quarter_LR"};
  std::vector<double> concat;
  for (int b = 0; b < 5; ++b) {
    const Image& img = b == 0 ? s.full_face : s.quarters[b - 1];
    std::vector<double> scaled(img.pixels.size());
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = img.pixels[i] / 255.0;
    const auto emb = naive_conv_relu_gap(
        scaled, a.image_side, *pm.at(std::string(branches[b]) + ".conv0.weight"),
        *pm.at(std::string(branches[b]) + ".conv0.bias"), a.conv_channels[0],
        a.conv_kernel);
    concat.insert(concat.end(), emb.begin(), emb.end());
  }
  std::vector<double> sv(s.structured.begin(), s.structured.end());
  for (std::size_t i = 0; i < a.structured_widths.size(); ++i) {
    const bool relu = i + 1 < a.structured_widths.size();
    sv = naive_dense(sv, *pm.at("structured.dense" + std::to_string(i) + ".weight"),
                     *pm.at("structured.dense" + std::to_string(i) + ".bias"),
                     a.structured_widths[i], relu);
  }
  concat.insert(concat.end(), sv.begin(), sv.end());
  std::vector<double> t = concat;
  for (std::size_t i = 0; i < a.trunk_widths.size(); ++i) {
    t = naive_dense(t, *pm.at("trunk.dense" + std::to_string(i) + ".weight"),
                    *pm.at("trunk.dense" + std::to_string(i) + ".bias"),
                    a.trunk_widths[i], true);
  }
  const auto head = [&](const std::string& name) {
    auto h = naive_dense(t, *pm.at(name + ".hidden.weight"),
                         *pm.at(name + ".hidden.bias"), a.head_hidden, true);
    return naive_dense(h, *pm.at(name + ".out.weight"), *pm.at(name + ".out.bias"),
                       1, false)[0];
  };
  return {head("head_pbf") * m.target_stats.pbf_sd + m.target_stats.pbf_mean,
          head("head_smm") * m.target_stats.smm_sd + m.target_stats.smm_mean};
}

}  // namespace

TEST_SUITE("nnet") {

TEST_CASE("init is deterministic with zero biases and He-uniform spread") {
  ArchitectureSpec arch;  // default sizes
  const NetworkModel a = init_model(arch, 42);
  const NetworkModel b = init_model(arch, 42);
  const NetworkModel c = init_model(arch, 43);
  const auto registry = parameter_registry(arch);
  REQUIRE(a.params.size() == registry.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < registry.size(); ++i) {
    REQUIRE(a.params[i] == b.params[i]);
    if (!(a.params[i] == c.params[i])) any_diff = true;
    if (registry[i].shape.size() == 1) {
      for (std::size_t j = 0; j < a.params[i].size(); ++j) {
        REQUIRE(a.params[i][j] == 0.0);
      }
    }
  }
  CHECK(any_diff);

  // Sample variance of a large weight tensor is close to 2/fan_in.
  for (std::size_t i = 0; i < registry.size(); ++i) {
    if (registry[i].name != "trunk.dense0.weight") continue;
    const std::size_t fan_in = registry[i].shape[1];
    double mean = 0;
    for (std::size_t j = 0; j < a.params[i].size(); ++j) mean += a.params[i][j];
    mean /= a.params[i].size();
    double var = 0;
    for (std::size_t j = 0; j < a.params[i].size(); ++j) {
      var += (a.params[i][j] - mean) * (a.params[i][j] - mean);
    }
    var /= a.params[i].size();
    const double expected = 2.0 / static_cast<double>(fan_in);
    CHECK(std::fabs(var - expected) < 0.2 * expected);
  }
}

TEST_CASE("zero parameters predict the target means") {
  NetworkModel m = init_model(tiny_arch(), 1);
  for (auto& p : m.params) p.fill(0.0);
  m.target_stats = {25.5, 7.0, 26.25, 5.0};
  Rng rng(2);
  const auto s = random_sample(8, rng, 30.0, 20.0);
  const Prediction pred = forward(m, s);
  CHECK(pred.pbf == doctest::Approx(25.5).epsilon(1e-12));
  CHECK(pred.smm == doctest::Approx(26.25).epsilon(1e-12));
}

TEST_CASE("forward is a pure function of model and sample") {
  NetworkModel m = init_model(tiny_arch(), 5);
  m.target_stats = {25, 5, 26, 6};
  Rng rng(6);
  const auto s = random_sample(8, rng, 30, 20);
  const Prediction p1 = forward(m, s);
  const Prediction p2 = forward(m, s);
  CHECK(p1.pbf == p2.pbf);
  CHECK(p1.smm == p2.smm);
}

TEST_CASE("forward matches an independent naive implementation") {
  ArchitectureSpec a;
  a.image_side = 4;
  a.conv_channels = {2};
  a.structured_widths = {3, 3};
  a.trunk_widths = {4};
  a.head_hidden = 2;
  NetworkModel m = init_model(a, 77);
  m.target_stats = {24, 6, 27, 5};
  Rng rng(78);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = random_sample(4, rng, 25, 25);
    const Prediction fast = forward(m, s);
    const Prediction slow = naive_forward(m, s);
    CHECK(std::fabs(fast.pbf - slow.pbf) < 1e-12);
    CHECK(std::fabs(fast.smm - slow.smm) < 1e-12);
  }
}

TEST_CASE("forward rejects mismatched shapes naming the branch") {
  NetworkModel m = init_model(tiny_arch(), 5);
  Rng rng(6);
  auto s = random_sample(8, rng, 30, 20);
  s.quarters[1] = Image::make(4, 4, 1);
  CHECK_THROWS_WITH_AS(forward(m, s), doctest::Contains("quarter_UR"),
                       std::runtime_error);
  auto s2 = random_sample(8, rng, 30, 20);
  s2.structured.resize(5);
  CHECK_THROWS_WITH_AS(forward(m, s2), doctest::Contains("structured"),
                       std::runtime_error);
}

TEST_CASE("loss hand values") {
  const TargetStats stats{0, 1, 0, 1};
  CHECK(loss({3.5, 4.5}, 3.5, 4.5, {1, 1}, stats) == 0.0);
  CHECK(loss({1, 2}, 0, 0, {1, 1}, stats) == doctest::Approx(5.0));
  // lambda_smm = 0 ignores the smm error entirely
  CHECK(loss({1, 99}, 0, 0, {1, 0}, stats) == doctest::Approx(1.0));
}

TEST_CASE("backward on zeroed parameters matches the hand derivation") {
  NetworkModel m = init_model(tiny_arch(), 9);
  for (auto& p : m.params) p.fill(0.0);
  m.target_stats = {20, 4, 24, 8};
  Rng rng(10);
  auto s = random_sample(8, rng, 28.0, 24.0);  // pbf z-target: (28-20)/4 = 2
  const auto registry = parameter_registry(m.arch);
  const auto grads = backward(m, {s}, {1, 1});
  REQUIRE(grads.size() == registry.size());
  for (std::size_t i = 0; i < registry.size(); ++i) {
    if (registry[i].name == "head_pbf.out.bias") {
      // d/db of (z_hat - z_t)^2 at z_hat = 0: 2 * (0 - z_t)
      CHECK(grads[i][0] == doctest::Approx(-4.0).epsilon(1e-12));
    } else if (registry[i].name == "head_smm.out.bias") {
      CHECK(grads[i][0] == doctest::Approx(0.0));  // smm target == mean
    } else {
      for (std::size_t j = 0; j < grads[i].size(); ++j) {
        REQUIRE(grads[i][j] == 0.0);
      }
    }
  }
}

TEST_CASE("zero-loss batch yields all-zero gradients") {
  NetworkModel m = init_model(tiny_arch(), 11);
  for (auto& p : m.params) p.fill(0.0);
  m.target_stats = {20, 4, 24, 8};
  Rng rng(12);
  const auto s = random_sample(8, rng, 20.0, 24.0);  // targets == means
  for (const auto& g : backward(m, {s, s}, {1, 1})) {
    for (std::size_t j = 0; j < g.size(); ++j) REQUIRE(g[j] == 0.0);
  }
}

TEST_CASE("gradients match central finite differences on the mini architecture") {
  NetworkModel m = init_model(tiny_arch(), 13);
  m.target_stats = {25, 5, 25, 5};
  Rng rng(14);
  std::vector<PreprocessedSample> batch = {random_sample(8, rng, 29, 22),
                                           random_sample(8, rng, 18, 31)};
  const TaskWeights weights{1.0, 1.0};
  const auto grads = backward(m, batch, weights);
  const auto registry = parameter_registry(m.arch);

  const double h = 1e-5;
  std::size_t checked = 0, failed = 0;
  for (std::size_t p = 0; p < registry.size(); ++p) {
    for (std::size_t j = 0; j < m.params[p].size(); ++j) {
      NetworkModel probe = m;
      probe.params[p][j] = m.params[p][j] + h;
      const double lp = batch_loss(probe, batch, weights);
      probe.params[p][j] = m.params[p][j] - h;
      const double lm = batch_loss(probe, batch, weights);
      const double fd = (lp - lm) / (2 * h);
      const double g = grads[p][j];
      const double err = std::fabs(g - fd);
      const double scale = std::max(std::fabs(g), std::fabs(fd));
      ++checked;
      if (err > 1e-7 && err > 1e-4 * scale) ++failed;
    }
  }
  CHECK(checked > 500);
  CHECK(failed == 0);
}

TEST_CASE("permuting a batch changes the mean gradient only by roundoff") {
  NetworkModel m = init_model(tiny_arch(), 15);
  m.target_stats = {25, 5, 25, 5};
  Rng rng(16);
  std::vector<PreprocessedSample> batch;
  for (int i = 0; i < 5; ++i) batch.push_back(random_sample(8, rng, 20 + i, 30 - i));
  std::vector<PreprocessedSample> reversed(batch.rbegin(), batch.rend());
  const auto g1 = backward(m, batch, {1, 1});
  const auto g2 = backward(m, reversed, {1, 1});
  for (std::size_t p = 0; p < g1.size(); ++p) {
    for (std::size_t j = 0; j < g1[p].size(); ++j) {
      CHECK(std::fabs(g1[p][j] - g2[p][j]) < 1e-10);
    }
  }
}

TEST_CASE("with lambda_smm = 0 the smm head is frozen but the trunk learns") {
  NetworkModel m = init_model(tiny_arch(), 17);
  m.target_stats = {25, 5, 25, 5};
  Rng rng(18);
  std::vector<PreprocessedSample> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_sample(8, rng, 20 + 2 * i, 22 + i));
  const auto grads = backward(m, batch, {1.0, 0.0});
  const auto registry = parameter_registry(m.arch);
  double smm_head_norm = 0, trunk_norm = 0, pbf_head_norm = 0;
  for (std::size_t p = 0; p < registry.size(); ++p) {
    double norm = 0;
    for (std::size_t j = 0; j < grads[p].size(); ++j) norm += grads[p][j] * grads[p][j];
    if (registry[p].name.starts_with("head_smm")) smm_head_norm += norm;
    if (registry[p].name.starts_with("trunk")) trunk_norm += norm;
    if (registry[p].name.starts_with("head_pbf")) pbf_head_norm += norm;
  }
  CHECK(smm_head_norm == 0.0);
  CHECK(trunk_norm > 0.0);
  CHECK(pbf_head_norm > 0.0);
}

TEST_CASE("predict_batch is order-preserving and thread-invariant") {
  NetworkModel m = init_model(tiny_arch(), 19);
  m.target_stats = {25, 5, 25, 5};
  CHECK(predict_batch(m, {}).empty());

  Rng rng(20);
  std::vector<PreprocessedSample> samples;
  for (int i = 0; i < 7; ++i) samples.push_back(random_sample(8, rng, 20 + i, 30 - i));
  const auto seq = predict_batch(m, samples, 1);
  const auto par = predict_batch(m, samples, 4);
  REQUIRE(seq.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(seq[i].pbf == par[i].pbf);
    CHECK(seq[i].smm == par[i].smm);
  }
  const Prediction single = forward(m, samples[3]);
  CHECK(single.pbf == seq[3].pbf);
  CHECK(single.smm == seq[3].smm);
}

TEST_CASE("model files round-trip bit-exactly and reject corruption") {
  const auto dir = testutil::test_dir("nnet_io");
  NetworkModel m = init_model(tiny_arch(), 21);
  m.norm_stats = {165.3, 9.1, 40.2, 12.5, 63.7, 15.2};
  m.target_stats = {25.1, 8.3, 25.9, 6.4};
  save_model(m, dir / "m.bcm");
  const NetworkModel back = load_model(dir / "m.bcm");
  CHECK(back.params == m.params);
  CHECK(back.norm_stats == m.norm_stats);
  CHECK(back.target_stats == m.target_stats);

  Rng rng(22);
  const auto s = random_sample(8, rng, 24, 26);
  const Prediction a = forward(m, s);
  const Prediction b = forward(back, s);
  CHECK(a.pbf == b.pbf);
  CHECK(a.smm == b.smm);

  auto bytes = testutil::read_bytes(dir / "m.bcm");
  bytes.resize(bytes.size() - 16);
  testutil::write_bytes(dir / "trunc.bcm", bytes);
  CHECK_THROWS_WITH_AS(load_model(dir / "trunc.bcm"),
                       doctest::Contains("truncated"), std::runtime_error);

  auto corrupt = testutil::read_bytes(dir / "m.bcm");
  corrupt[corrupt.size() - 5] ^= 0x40;
  testutil::write_bytes(dir / "bad.bcm", corrupt);
  CHECK_THROWS_WITH_AS(load_model(dir / "bad.bcm"),
                       doctest::Contains("checksum"), std::runtime_error);
}

TEST_CASE("training descends, checkpoints and reproduces exactly") {
  const auto dir = testutil::test_dir("nnet_train");
  GeneratorConfig gen;
  gen.n_subjects = 50;
  gen.seed = 4242;
  gen.image_side = 64;
  const auto recs = generate_synthetic(gen, dir);
  const auto [train_recs, val_recs] = split_dataset(recs, {0.8, 3});
  const NormStats stats = compute_norm_stats(train_recs);

  PreprocessConfig pp;
  pp.image_side = 16;
  std::vector<SampleSource> train_src, val_src;
  for (const auto& r : train_recs) train_src.push_back(load_sample_source(r, pp, dir));
  for (const auto& r : val_recs) val_src.push_back(load_sample_source(r, pp, dir));

  ArchitectureSpec arch;
  arch.image_side = 16;
  arch.conv_channels = {2, 4};
  arch.structured_widths = {8, 8};
  arch.trunk_widths = {16, 8};
  arch.head_hidden = 4;

  NetworkModel model = init_model(arch, 31);
  model.norm_stats = stats;

  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 8;
  cfg.seed = 77;
  cfg.preprocess = pp;
  cfg.threads = 2;

  const TrainResult result = train(model, train_src, val_src, cfg);
  REQUIRE(result.history.size() == 30);
  CHECK(result.history.back().train_loss < result.history.front().train_loss);
  CHECK(result.best_epoch >= 0);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : result.history) best = std::min(best, e.val_loss);
  CHECK(result.history[result.best_epoch].val_loss == best);

  SUBCASE("same config twice gives identical history") {
    TrainConfig cfg2 = cfg;
    cfg2.epochs = 4;
    cfg2.threads = 1;
    const TrainResult r1 = train(model, train_src, val_src, cfg2);
    cfg2.threads = 2;
    const TrainResult r2 = train(model, train_src, val_src, cfg2);
    REQUIRE(r1.history.size() == r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
      CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
      CHECK(r1.history[i].val_loss == r2.history[i].val_loss);
      CHECK(r1.history[i].val_pbf_mae == r2.history[i].val_pbf_mae);
      CHECK(r1.history[i].val_smm_mae == r2.history[i].val_smm_mae);
    }
    CHECK(r1.model.params == r2.model.params);
  }

  SUBCASE("lambda_pbf = 0 freezes the pbf head across training") {
    TrainConfig cfg3 = cfg;
    cfg3.epochs = 3;
    cfg3.task_weights = {0.0, 1.0};
    const TrainResult r = train(model, train_src, val_src, cfg3);
    const auto registry = parameter_registry(arch);
    bool trunk_moved = false;
    for (std::size_t p = 0; p < registry.size(); ++p) {
      if (registry[p].name.starts_with("head_pbf")) {
        CHECK(r.model.params[p] == model.params[p]);
      }
      if (registry[p].name.starts_with("trunk") &&
          !(r.model.params[p] == model.params[p])) {
        trunk_moved = true;
      }
    }
    CHECK(trunk_moved);
  }
}

}  // TEST_SUITE
