#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "magicnet/model.hpp"
#include "testutil.hpp"

using namespace magicnet;

namespace {

MagicNetConfig tiny_config() {
  MagicNetConfig c;
  c.n_mels = 6;
  c.width = 4;
  c.expansion = 8;
  c.prologue_kernel = 5;
  c.prologue_stride = 2;
  c.blocks = {{3, 2, false}};
  c.gru_layers = 1;
  c.gru_hidden = 4;
  return c;
}

MagicNetConfig tiny_residual_config() {
  MagicNetConfig c = tiny_config();
  c.blocks = {{3, 1, true}};
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// schema and parameter accounting

TEST_CASE("parameter counts match independent arithmetic") {
  const MagicNetConfig c;
  const ParamCounts pc = param_counts(c);

  // conv stage: w[out, in/g, k] + b[out] + bn gamma/beta trainable,
  // running mean/var total-only
  const auto conv_train = [](int64_t in, int64_t out, int64_t k, int64_t g) {
    return out * (in / g) * k + out + 2 * out;
  };
  const auto conv_total = [&](int64_t in, int64_t out, int64_t k, int64_t g) {
    return conv_train(in, out, k, g) + 2 * out;
  };

  std::map<std::string, std::pair<int64_t, int64_t>> expect;
  expect["prologue.dw"] = {conv_train(40, 40, 40, 40), conv_total(40, 40, 40, 40)};
  expect["prologue.pw1"] = {conv_train(40, 20, 1, 1), conv_total(40, 20, 1, 1)};
  expect["prologue.pw2"] = {conv_train(20, 20, 1, 1), conv_total(20, 20, 1, 1)};
  expect["block1.expand"] = {conv_train(20, 80, 1, 1), conv_total(20, 80, 1, 1)};
  expect["block1.dw"] = {conv_train(80, 80, 41, 80), conv_total(80, 80, 41, 80)};
  expect["block1.project"] = {conv_train(80, 20, 1, 1), conv_total(80, 20, 1, 1)};
  expect["block2.expand"] = {conv_train(20, 80, 1, 1), conv_total(20, 80, 1, 1)};
  expect["block2.dw"] = {conv_train(80, 80, 21, 80), conv_total(80, 80, 21, 80)};
  expect["block2.project"] = {conv_train(80, 20, 1, 1), conv_total(80, 20, 1, 1)};
  const int64_t gru = 3 * 20 * 20 + 3 * 20 * 20 + 3 * 20 + 3 * 20;  // per layer
  expect["gru.l0"] = {gru, gru};
  expect["gru.l1"] = {gru, gru};
  expect["fc"] = {20 + 1, 20 + 1};
  expect["feat"] = {0, 80};

  int64_t sum_train = 0, sum_total = 0;
  for (const auto& [layer, counts] : expect) {
    sum_train += counts.first;
    sum_total += counts.second;
  }

  REQUIRE(pc.rows.size() == expect.size());
  for (const ParamCountRow& row : pc.rows) {
    REQUIRE(expect.count(row.layer) == 1);
    CHECK(row.trainable == expect[row.layer].first);
    CHECK(row.total == expect[row.layer].second);
  }
  CHECK(pc.trainable == sum_train);
  CHECK(pc.total == sum_total);

  // frozen values: these are load-bearing for the published size budget
  CHECK(pc.trainable == 20541);
  CHECK(pc.total == 21501);
}

TEST_CASE("tensor schema is complete and unique") {
  const MagicNetConfig c;
  const auto schema = tensor_schema(c);
  CHECK(schema.size() == 66);  // 9 conv stages x 6 + 2 GRU layers x 4 + fc x 2 + feat x 2

  std::set<std::string> names;
  size_t trainable = 0;
  for (const TensorInfo& info : schema) {
    CHECK(names.insert(info.name).second);  // no duplicates
    if (info.trainable) ++trainable;
  }
  CHECK(trainable == 46);  // 9 x 4 conv + 8 gru + 2 fc

  // spot-check shapes
  const auto find = [&](const std::string& n) {
    for (const auto& info : schema)
      if (info.name == n) return info;
    FAIL("missing tensor ", n);
    return schema[0];
  };
  CHECK(find("prologue.dw.w").dims == std::vector<uint32_t>{40, 1, 40});
  CHECK(find("block1.dw.w").dims == std::vector<uint32_t>{80, 1, 41});
  CHECK(find("block2.dw.w").dims == std::vector<uint32_t>{80, 1, 21});
  CHECK(find("gru.l0.w_ih").dims == std::vector<uint32_t>{60, 20});
  CHECK(find("gru.l1.w_ih").dims == std::vector<uint32_t>{60, 20});
  CHECK(find("fc.w").dims == std::vector<uint32_t>{1, 20});
  CHECK(find("feat.mean").dims == std::vector<uint32_t>{40});
  CHECK_FALSE(find("prologue.dw.bn.running_var").trainable);
}

TEST_CASE("config validation rejects inconsistent settings") {
  MagicNetConfig c;
  c.gru_hidden = 24;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  MagicNetConfig c2;
  c2.expansion = 70;  // not a multiple of width 20
  CHECK_THROWS_AS(c2.validate(), ConfigError);

  MagicNetConfig c3;
  c3.blocks = {{41, 2, true}};  // residual skip needs stride 1
  CHECK_THROWS_AS(c3.validate(), ConfigError);

  CHECK_NOTHROW(MagicNetConfig{}.validate());
  CHECK_NOTHROW(tiny_residual_config().validate());
}

TEST_CASE("output length follows nested ceil division") {
  const MagicNetConfig c;
  CHECK(model_out_time(c, 1) == 1);
  CHECK(model_out_time(c, 8) == 1);
  CHECK(model_out_time(c, 9) == 2);
  CHECK(model_out_time(c, 1998) == 250);  // a 20 s clip
  for (int64_t t : {1, 7, 16, 100, 333, 1998})
    CHECK(model_out_time(c, t) == (t + 7) / 8);
}

// ---------------------------------------------------------------------------
// receptive field

TEST_CASE("receptive field arithmetic") {
  const ReceptiveField rf = receptive_field(MagicNetConfig{});
  CHECK(rf.frames == 200);
  CHECK(rf.downsample == 8);
  CHECK(rf.recurrent_unbounded);

  const ReceptiveField rf_tiny = receptive_field(tiny_config());
  CHECK(rf_tiny.frames == 1 + 4 * 1 + 2 * 2);
  CHECK(rf_tiny.downsample == 4);
}

TEST_CASE("conv front end touches exactly the advertised window") {
  // Monotone construction: positive weights, positive-affine BN, inputs > 0.
  // Every value stays strictly positive, so ReLU is transparent and any
  // in-window perturbation must strictly increase the outputs it reaches.
  const MagicNetConfig config;
  const auto stages = conv_stages(config);
  const ReceptiveField rf = receptive_field(config);

  Rng rng(2024);
  std::map<std::string, Tensor<double>> p;
  for (const ConvStage& st : stages) {
    const uint32_t out = static_cast<uint32_t>(st.spec.out_channels);
    const uint32_t ipg = static_cast<uint32_t>(st.spec.in_channels / st.spec.groups);
    p[st.name + ".w"] =
        testutil::random_tensor<double>(rng, {out, ipg, static_cast<uint32_t>(st.spec.kernel)},
                                        0.02, 0.1);
    Tensor<double> b({out}), gamma({out}), beta({out}), rm({out}), rv({out});
    std::fill(b.data.begin(), b.data.end(), 0.05);
    std::fill(gamma.data.begin(), gamma.data.end(), 1.0);
    std::fill(beta.data.begin(), beta.data.end(), 1.0);
    std::fill(rv.data.begin(), rv.data.end(), 24.0);  // damps growth across stages
    p[st.name + ".b"] = std::move(b);
    p[st.name + ".gamma"] = std::move(gamma);
    p[st.name + ".beta"] = std::move(beta);
    p[st.name + ".rm"] = std::move(rm);
    p[st.name + ".rv"] = std::move(rv);
  }

  const auto run = [&](const Tensor2D<double>& input) {
    Tensor2D<double> x = input;
    for (const ConvStage& st : stages) {
      x = causal_conv1d_forward(x, p.at(st.name + ".w"), p.at(st.name + ".b"), st.spec);
      x = batchnorm_infer(x, p.at(st.name + ".gamma"), p.at(st.name + ".beta"),
                          p.at(st.name + ".rm"), p.at(st.name + ".rv"));
      if (st.relu) x = relu_forward(x);
    }
    return x;
  };

  const int64_t t_in = 360;
  const Tensor2D<double> base = testutil::random_matrix<double>(rng, 40, t_in, 0.1, 1.0);
  const Tensor2D<double> y0 = run(base);
  const int64_t t_out = y0.time;
  REQUIRE(t_out == (t_in + rf.downsample - 1) / rf.downsample);

  for (const int64_t t : {int64_t(0), int64_t(5), int64_t(53), int64_t(200), int64_t(359)}) {
    Tensor2D<double> perturbed = base;
    for (int c = 0; c < 40; ++c) perturbed.at(c, t) += 1e4;
    const Tensor2D<double> y1 = run(perturbed);

    // output j reads input frames [d*j - (frames-1), d*j]
    const int64_t lo = std::max<int64_t>(0, (t + rf.downsample - 1) / rf.downsample);
    const int64_t hi = std::min<int64_t>(t_out - 1, (t + rf.frames - 1) / rf.downsample);
    for (int64_t j = 0; j < t_out; ++j) {
      bool changed = false;
      for (int c = 0; c < y0.channels; ++c)
        if (y1.at(c, j) != y0.at(c, j)) changed = true;
      CHECK(changed == (j >= lo && j <= hi));
    }
  }
}

// ---------------------------------------------------------------------------
// weights

TEST_CASE("build_weights is deterministic and respects init rules") {
  const MagicNetConfig c;
  const auto a = build_weights<float>(c, 7);
  const auto b = build_weights<float>(c, 7);
  const auto other = build_weights<float>(c, 8);

  REQUIRE(a.tensors.size() == 66);
  bool any_diff = false;
  for (const auto& [name, t] : a.tensors) {
    CHECK(b.at(name).data == t.data);
    if (other.at(name).data != t.data) any_diff = true;
  }
  CHECK(any_diff);

  // identity batch norm, unit feature stats
  for (const float v : a.at("block1.dw.bn.gamma").data) CHECK(v == 1.0f);
  for (const float v : a.at("block1.dw.bn.beta").data) CHECK(v == 0.0f);
  for (const float v : a.at("block1.dw.bn.running_mean").data) CHECK(v == 0.0f);
  for (const float v : a.at("block1.dw.bn.running_var").data) CHECK(v == 1.0f);
  for (const float v : a.at("feat.mean").data) CHECK(v == 0.0f);
  for (const float v : a.at("feat.std").data) CHECK(v == 1.0f);

  // fan-in bounds
  const float conv_bound = 1.0f / std::sqrt(40.0f);  // prologue.dw: 1 ch x 40 taps
  for (const float v : a.at("prologue.dw.w").data) CHECK(std::abs(v) <= conv_bound);
  const float gru_bound = 1.0f / std::sqrt(20.0f);
  for (const float v : a.at("gru.l0.w_hh").data) CHECK(std::abs(v) <= gru_bound);
  for (const float v : a.at("fc.w").data) CHECK(std::abs(v) <= gru_bound);

  CHECK_THROWS_AS(a.at("no.such.tensor"), ArgumentError);
}

// ---------------------------------------------------------------------------
// causality and streaming

TEST_CASE("later frames never influence earlier output steps") {
  const MagicNetConfig config;
  Rng rng(301);
  const auto weights = build_weights<float>(config, 11);

  for (int trial = 0; trial < 10; ++trial) {
    const int64_t t_n = 40 + static_cast<int64_t>(rng.uniform_index(120));
    const Tensor2D<float> base = testutil::random_matrix<float>(rng, 40, t_n, -2.0, 2.0);
    const auto out0 = forward_batch(config, weights, base);

    const int64_t t = 1 + static_cast<int64_t>(rng.uniform_index(t_n - 1));
    Tensor2D<float> perturbed = base;
    for (int c = 0; c < 40; ++c) perturbed.at(c, t) += 5.0f;
    const auto out1 = forward_batch(config, weights, perturbed);

    REQUIRE(out0.logits.size() == out1.logits.size());
    // compare logits, not probs: a heavily attenuated change can be bitwise
    // visible in the logit yet round away inside the sigmoid
    bool any_changed = false;
    for (size_t j = 0; j < out0.logits.size(); ++j) {
      if (8 * static_cast<int64_t>(j) < t) {
        CHECK(out0.logits[j] == out1.logits[j]);  // bitwise: strictly causal
      } else if (out0.logits[j] != out1.logits[j]) {
        any_changed = true;
      }
    }
    // frames past the last emitted step's window cannot reach any output yet
    const int64_t last_window_end = 8 * (static_cast<int64_t>(out0.logits.size()) - 1);
    if (t <= last_window_end) CHECK(any_changed);
  }
}

TEST_CASE("streaming inference reproduces batch inference exactly") {
  const MagicNetConfig config;
  Rng rng(302);
  const auto weights = build_weights<float>(config, 21);

  for (int trial = 0; trial < 5; ++trial) {
    const int64_t t_n = 50 + static_cast<int64_t>(rng.uniform_index(350));
    const Tensor2D<float> features = testutil::random_matrix<float>(rng, 40, t_n, -2.0, 2.0);
    const auto batch = forward_batch(config, weights, features).probs;

    StreamState<float> state = make_stream_state(config, weights);
    std::vector<float> stream;
    std::vector<float> frame(40);
    for (int64_t t = 0; t < t_n; ++t) {
      for (int c = 0; c < 40; ++c) frame[c] = features.at(c, t);
      float prob = 0;
      if (stream_push(state, std::span<const float>(frame), &prob)) stream.push_back(prob);
    }

    REQUIRE(stream.size() == batch.size());
    CHECK(static_cast<int64_t>(stream.size()) == model_out_time(config, t_n));
    CHECK(state.emitted == static_cast<int64_t>(stream.size()));
    for (size_t j = 0; j < batch.size(); ++j) CHECK(stream[j] == batch[j]);  // bitwise
  }
}

TEST_CASE("streaming matches batch through a residual block") {
  const MagicNetConfig config = tiny_residual_config();
  Rng rng(303);
  const auto weights = build_weights<float>(config, 31);
  // non-trivial running stats so the BN path is exercised
  auto w = weights;
  for (auto& [name, t] : w.tensors) {
    if (name.find("running_mean") != std::string::npos)
      for (auto& v : t.data) v = static_cast<float>(rng.uniform(-0.2, 0.2));
    if (name.find("running_var") != std::string::npos)
      for (auto& v : t.data) v = static_cast<float>(rng.uniform(0.5, 2.0));
  }

  const int64_t t_n = 37;
  const Tensor2D<float> features = testutil::random_matrix<float>(rng, 6, t_n, -1.0, 1.0);
  const auto batch = forward_batch(config, w, features).probs;

  StreamState<float> state = make_stream_state(config, w);
  std::vector<float> stream;
  std::vector<float> frame(6);
  for (int64_t t = 0; t < t_n; ++t) {
    for (int c = 0; c < 6; ++c) frame[c] = features.at(c, t);
    float prob = 0;
    if (stream_push(state, std::span<const float>(frame), &prob)) stream.push_back(prob);
  }
  REQUIRE(stream.size() == batch.size());
  for (size_t j = 0; j < batch.size(); ++j) CHECK(stream[j] == batch[j]);
}

TEST_CASE("forward_batch rejects wrong feature channel counts") {
  const MagicNetConfig config;
  const auto weights = build_weights<float>(config, 1);
  Tensor2D<float> wrong(39, 10);
  CHECK_THROWS_AS(forward_batch(config, weights, wrong), ShapeError);
}

// ---------------------------------------------------------------------------
// serialization

TEST_CASE("weights survive a save/load round trip bit-exactly") {
  testutil::TempDir dir("weights");
  const MagicNetConfig config;
  const auto w = build_weights<float>(config, 99);
  save_weights(w, dir / "w.mgnt");
  const auto r = load_weights<float>(dir / "w.mgnt", config);

  REQUIRE(r.tensors.size() == w.tensors.size());
  for (const auto& [name, t] : w.tensors) {
    const Tensor<float>& rt = r.at(name);
    CHECK(rt.dims == t.dims);
    CHECK(rt.data == t.data);  // bitwise
  }

  // double in memory round-trips through the f32 container
  const auto wd = build_weights<double>(config, 99);
  save_weights(wd, dir / "wd.mgnt");
  const auto rd = load_weights<double>(dir / "wd.mgnt", config);
  for (const auto& [name, t] : wd.tensors) {
    const Tensor<double>& rt = rd.at(name);
    for (size_t i = 0; i < t.data.size(); ++i)
      CHECK(rt.data[i] == static_cast<double>(static_cast<float>(t.data[i])));
  }
}

TEST_CASE("weight loading rejects malformed files with typed errors") {
  testutil::TempDir dir("badweights");
  const MagicNetConfig config;
  const auto w = build_weights<float>(config, 5);
  save_weights(w, dir / "good.mgnt");
  const std::vector<uint8_t> good = detail::read_file_bytes(dir / "good.mgnt");

  const auto expect_code = [&](const std::vector<uint8_t>& bytes, LoadErrorCode code) {
    detail::write_file_bytes(dir / "bad.mgnt", bytes);
    try {
      load_weights<float>(dir / "bad.mgnt", config);
      FAIL("expected a load error");
    } catch (const LoadError& e) {
      CHECK(e.code() == code);
    }
  };

  SUBCASE("bad magic") {
    auto bytes = good;
    bytes[0] = 'X';
    expect_code(bytes, LoadErrorCode::bad_magic);
  }

  SUBCASE("unsupported version") {
    auto bytes = good;
    bytes[4] = 2;
    expect_code(bytes, LoadErrorCode::bad_version);
  }

  SUBCASE("implausible tensor count") {
    auto bytes = good;
    bytes[8] = 0x9F;  // 99999 little-endian
    bytes[9] = 0x86;
    bytes[10] = 0x01;
    bytes[11] = 0x00;
    expect_code(bytes, LoadErrorCode::bad_metadata);
  }

  SUBCASE("count below the actual record count leaves trailing bytes") {
    auto bytes = good;
    bytes[8] = 65;
    bytes[9] = bytes[10] = bytes[11] = 0;
    expect_code(bytes, LoadErrorCode::bad_metadata);
  }

  SUBCASE("count above the actual record count runs off the end") {
    auto bytes = good;
    bytes[8] = 67;
    bytes[9] = bytes[10] = bytes[11] = 0;
    expect_code(bytes, LoadErrorCode::truncated);
  }

  SUBCASE("truncated data") {
    auto bytes = good;
    bytes.resize(bytes.size() - 5);
    expect_code(bytes, LoadErrorCode::truncated);
  }

  SUBCASE("random truncation points always fail cleanly") {
    Rng rng(404);
    for (int i = 0; i < 10; ++i) {
      auto bytes = good;
      bytes.resize(rng.uniform_index(good.size()));
      detail::write_file_bytes(dir / "bad.mgnt", bytes);
      CHECK_THROWS_AS(load_weights<float>(dir / "bad.mgnt", config), LoadError);
    }
  }

  SUBCASE("zero-length tensor name") {
    std::vector<uint8_t> bytes(good.begin(), good.begin() + 12);
    bytes[8] = 1;  // count = 1
    bytes[9] = bytes[10] = bytes[11] = 0;
    detail::append_u16(bytes, 0);
    expect_code(bytes, LoadErrorCode::bad_metadata);
  }

  SUBCASE("implausible rank") {
    std::vector<uint8_t> bytes(good.begin(), good.begin() + 12);
    bytes[8] = 1;
    bytes[9] = bytes[10] = bytes[11] = 0;
    const std::string name = "fc.b";
    detail::append_u16(bytes, static_cast<uint16_t>(name.size()));
    bytes.insert(bytes.end(), name.begin(), name.end());
    bytes.push_back(9);  // rank limit is 8
    expect_code(bytes, LoadErrorCode::bad_metadata);
  }

  SUBCASE("implausible element count") {
    std::vector<uint8_t> bytes(good.begin(), good.begin() + 12);
    bytes[8] = 1;
    bytes[9] = bytes[10] = bytes[11] = 0;
    const std::string name = "fc.w";
    detail::append_u16(bytes, static_cast<uint16_t>(name.size()));
    bytes.insert(bytes.end(), name.begin(), name.end());
    bytes.push_back(2);
    detail::append_u32(bytes, 100000);
    detail::append_u32(bytes, 100000);  // 1e10 elements
    expect_code(bytes, LoadErrorCode::bad_metadata);
  }

  SUBCASE("unknown tensor name") {
    auto extra = w;
    Tensor<float> bogus({1});
    bogus.data = {1.0f};
    extra.tensors.emplace("bogus.w", std::move(bogus));
    save_weights(extra, dir / "bad.mgnt");
    try {
      load_weights<float>(dir / "bad.mgnt", config);
      FAIL("expected a load error");
    } catch (const LoadError& e) {
      CHECK(e.code() == LoadErrorCode::unknown_tensor);
    }
  }

  SUBCASE("missing tensor") {
    auto partial = w;
    partial.tensors.erase("fc.b");
    save_weights(partial, dir / "bad.mgnt");
    try {
      load_weights<float>(dir / "bad.mgnt", config);
      FAIL("expected a load error");
    } catch (const LoadError& e) {
      CHECK(e.code() == LoadErrorCode::missing_tensor);
    }
  }

  SUBCASE("wrong tensor shape") {
    auto reshaped = w;
    Tensor<float> fat({2});
    fat.data = {1.0f, 2.0f};
    reshaped.tensors["fc.b"] = std::move(fat);
    save_weights(reshaped, dir / "bad.mgnt");
    try {
      load_weights<float>(dir / "bad.mgnt", config);
      FAIL("expected a load error");
    } catch (const LoadError& e) {
      CHECK(e.code() == LoadErrorCode::shape_mismatch);
    }
  }

  SUBCASE("duplicate tensor record") {
    std::vector<uint8_t> bytes(good.begin(), good.begin() + 12);
    bytes[8] = 2;
    bytes[9] = bytes[10] = bytes[11] = 0;
    for (int rep = 0; rep < 2; ++rep) {
      const std::string name = "feat.mean";
      detail::append_u16(bytes, static_cast<uint16_t>(name.size()));
      bytes.insert(bytes.end(), name.begin(), name.end());
      bytes.push_back(1);
      detail::append_u32(bytes, 40);
      for (int i = 0; i < 40; ++i) detail::append_f32(bytes, 0.0f);
    }
    expect_code(bytes, LoadErrorCode::duplicate_tensor);
  }

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_weights<float>(dir / "nope.mgnt", config), ArgumentError);
  }
}

// ---------------------------------------------------------------------------
// end-to-end gradients

namespace {

// Full training-path gradient check in double precision: analytic gradients
// from the layered backward pass against central finite differences of the
// BCE loss. Seeds are advanced until no pre-ReLU value sits close enough to
// the kink for a probe to cross it.
void e2e_gradcheck(const MagicNetConfig& config, uint64_t seed_base) {
  const int64_t t_n = 12;
  Rng rng(seed_base * 1000 + 17);
  const Tensor2D<double> features =
      testutil::random_matrix<double>(rng, config.n_mels, t_n, -1.0, 1.0);

  ModelWeights<double> w;
  bool found = false;
  for (uint64_t seed = seed_base; seed < seed_base + 100; ++seed) {
    w = build_weights<double>(config, seed);
    for (auto& v : w.at("feat.mean").data) v = rng.uniform(-0.3, 0.3);
    for (auto& v : w.at("feat.std").data) v = rng.uniform(0.5, 2.0);
    ModelWeights<double> wc = w;
    ModelCache<double> cache;
    model_forward_train(config, wc, features, cache);
    if (cache.min_abs_pre_relu > 1e-3) {
      found = true;
      break;
    }
  }
  REQUIRE_MESSAGE(found, "no seed kept pre-ReLU values clear of the kink");

  const int64_t t_out = model_out_time(config, t_n);
  REQUIRE(t_out >= 2);
  std::vector<double> targets(t_out);
  for (auto& v : targets) v = rng.uniform() < 0.5 ? 0.0 : 1.0;

  const auto loss = [&]() {
    ModelWeights<double> wc = w;  // train mode mutates running stats
    ModelCache<double> cache;
    const Tensor2D<double> logits = model_forward_train(config, wc, features, cache);
    return bce_with_logits<double>(std::span<const double>(logits.data), targets);
  };

  ModelWeights<double> wf = w;
  ModelCache<double> cache;
  const Tensor2D<double> logits = model_forward_train(config, wf, features, cache);
  const auto dl = bce_with_logits_grad<double>(std::span<const double>(logits.data), targets);
  Tensor2D<double> dlogits(1, t_out);
  dlogits.data = dl;
  const auto grads = backward_from_logits(config, wf, cache, dlogits);

  // gradient map covers the trainable schema exactly
  size_t trainable = 0;
  for (const TensorInfo& info : tensor_schema(config)) {
    if (!info.trainable) continue;
    ++trainable;
    REQUIRE(grads.count(info.name) == 1);
  }
  CHECK(grads.size() == trainable);

  size_t checked = 0, failed = 0;
  for (const auto& [name, g] : grads) {
    std::vector<double>& data = w.at(name).data;
    REQUIRE(data.size() == g.data.size());
    for (size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      const double h = 1e-6 * std::max(1.0, std::abs(orig));
      data[i] = orig + h;
      const double up = loss();
      data[i] = orig - h;
      const double dn = loss();
      data[i] = orig;
      const double numeric = (up - dn) / (2.0 * h);
      ++checked;
      if (testutil::rel_err(g.data[i], numeric) >= 1e-6) {
        ++failed;
        CAPTURE(name);
        CAPTURE(i);
        CHECK(testutil::rel_err(g.data[i], numeric) < 1e-6);
      }
    }
  }
  CHECK(checked > 300);
  CHECK(failed == 0);
}

}  // namespace

TEST_CASE("end-to-end gradients match finite differences (strided blocks)") {
  e2e_gradcheck(tiny_config(), 1);
}

TEST_CASE("end-to-end gradients match finite differences (residual block)") {
  e2e_gradcheck(tiny_residual_config(), 2);
}
