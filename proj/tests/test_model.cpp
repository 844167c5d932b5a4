#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "diffmt/checkpoint.hpp"
#include "diffmt/model.hpp"

using namespace diffmt;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.vocab_size = 8;
  cfg.seq_len = 5;
  cfg.steps = 10;
  return cfg;
}

// Random batch; source positions from `pad_from` on are [PAD] (id 0).
DenoiserInput random_input(const ModelConfig& cfg, int batch, int pad_from, std::uint64_t seed) {
  Rng rng(seed);
  DenoiserInput in;
  in.batch = batch;
  const int L = cfg.seq_len;
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < L; ++i) {
      in.noisy.push_back(static_cast<Token>(uniform_index(rng, cfg.vocab_size)));
      in.source.push_back(i < pad_from ? static_cast<Token>(1 + uniform_index(rng, cfg.vocab_size - 1)) : 0);
    }
    in.steps.push_back(1 + static_cast<int>(uniform_index(rng, cfg.steps)));
  }
  return in;
}

// Output head scaled up so outputs depend visibly on the inputs.
DenoiserParams<double> generic_params(const ModelConfig& cfg, std::uint64_t seed) {
  auto p = DenoiserParams<double>::init(cfg, seed);
  p.out_w *= 10.0;
  return p;
}

double max_abs_diff(const ProbTable& a, const ProbTable& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(tiny_config().validate());
  auto cfg = tiny_config();
  cfg.n_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = tiny_config();
  cfg.seq_len = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("parameter count depends on the config only") {
  const auto cfg = tiny_config();
  const auto a = DenoiserParams<float>::init(cfg, 1);
  const auto b = DenoiserParams<float>::init(cfg, 2);
  CHECK(a.parameter_count() == b.parameter_count());
  CHECK(a.parameter_count() == DenoiserParams<float>::zeros(cfg).parameter_count());
  CHECK(a.all_finite());
  CHECK(a.token_embedding.rows() == cfg.vocab_size);
  CHECK(a.token_embedding.cols() == cfg.d_model);
  CHECK(a.out_w.rows() == cfg.d_model);
  CHECK(a.out_w.cols() == cfg.vocab_size);
  CHECK(a.encoder.size() == 2);
  CHECK(a.decoder.size() == 2);
  auto bigger = cfg;
  bigger.n_layers = 3;
  CHECK(DenoiserParams<float>::zeros(bigger).parameter_count() > a.parameter_count());
}

TEST_CASE("time encoding") {
  const auto cfg = tiny_config();
  const auto params = generic_params(cfg, 3);
  CHECK(time_encoding(4, params, cfg) == time_encoding(4, params, cfg));
  for (int t1 = 1; t1 <= cfg.steps; ++t1) {
    for (int t2 = t1 + 1; t2 <= cfg.steps; ++t2) {
      CHECK(sinusoidal_embedding(t1, cfg.d_model) != sinusoidal_embedding(t2, cfg.d_model));
      CHECK(time_encoding(t1, params, cfg) != time_encoding(t2, params, cfg));
    }
  }
  auto zero = params;
  zero.time_w.setZero();
  zero.time_b.setZero();
  for (int t = 1; t <= cfg.steps; ++t) {
    for (double v : time_encoding(t, zero, cfg)) CHECK(v == 0.0);
  }
  CHECK_THROWS_AS(time_encoding(0, params, cfg), InvalidArgument);
  CHECK_THROWS_AS(time_encoding(cfg.steps + 1, params, cfg), InvalidArgument);

  const auto e = sinusoidal_embedding(3.0, 4);
  CHECK(e[0] == doctest::Approx(std::sin(3.0)));
  CHECK(e[1] == doctest::Approx(std::cos(3.0)));
  CHECK(e[2] == doctest::Approx(std::sin(3.0 / 100.0)));
  CHECK(e[3] == doctest::Approx(std::cos(3.0 / 100.0)));
}

TEST_CASE("forward shape, normalization and purity") {
  const auto cfg = tiny_config();
  const auto params = DenoiserParams<float>::init(cfg, 5);
  const auto in = random_input(cfg, 3, 3, 7);
  const auto out = forward(params, cfg, in);
  REQUIRE(out.rows() == 3 * cfg.seq_len);
  REQUIRE(out.cols() == cfg.vocab_size);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    CHECK(std::abs(out.row(r).sum() - 1.0) < 1e-6);
    CHECK(out.row(r).minCoeff() >= 0.0);
  }
  CHECK(forward(params, cfg, in) == out);

  auto bad = in;
  bad.noisy.pop_back();
  CHECK_THROWS_AS(forward(params, cfg, bad), InvalidArgument);
  bad = in;
  bad.noisy[0] = cfg.vocab_size;
  CHECK_THROWS_AS(forward(params, cfg, bad), InvalidArgument);
  bad = in;
  bad.steps[0] = 0;
  CHECK_THROWS_AS(forward(params, cfg, bad), InvalidArgument);
}

TEST_CASE("fresh init predicts a near-uniform x0") {
  const auto cfg = tiny_config();
  const auto out = forward(DenoiserParams<float>::init(cfg, 9), cfg, random_input(cfg, 2, 5, 1));
  CHECK(out.maxCoeff() < 2.0 / cfg.vocab_size);
}

TEST_CASE("padded source tail is masked") {
  const auto cfg = tiny_config();
  const auto params = generic_params(cfg, 11);
  auto in = random_input(cfg, 2, 3, 13);
  // Explicit mask over the real tokens, then garbage in the tail.
  in.source_mask.assign(in.source.size(), 0);
  for (std::size_t i = 0; i < in.source.size(); ++i) in.source_mask[i] = in.source[i] != 0;
  const auto base = forward(params, cfg, in);
  auto perturbed = in;
  for (int b = 0; b < 2; ++b) {
    for (int i = 3; i < cfg.seq_len; ++i) perturbed.source[b * cfg.seq_len + i] = static_cast<Token>(1 + (i + b) % 7);
  }
  CHECK(max_abs_diff(base, forward(params, cfg, perturbed)) == 0.0);

  // Without the mask the same change is visible.
  perturbed.source_mask.clear();
  CHECK(max_abs_diff(base, forward(params, cfg, perturbed)) > 1e-6);
}

TEST_CASE("decoder is not causal") {
  const auto cfg = tiny_config();
  const auto params = generic_params(cfg, 17);
  const auto in = random_input(cfg, 1, 5, 19);
  const auto base = forward(params, cfg, in);
  auto changed = in;
  const int last = cfg.seq_len - 1;
  changed.noisy[last] = (changed.noisy[last] + 1) % cfg.vocab_size;
  const auto out = forward(params, cfg, changed);
  CHECK((base.row(0) - out.row(0)).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("outputs are equivariant under vocabulary relabeling") {
  const auto cfg = tiny_config();
  const auto params = generic_params(cfg, 23);
  const auto in = random_input(cfg, 2, 4, 29);
  // perm keeps [PAD] at 0 so the derived source mask stays the same.
  const std::vector<Token> perm{0, 3, 5, 1, 7, 2, 6, 4};
  auto relabeled = params;
  for (int k = 0; k < cfg.vocab_size; ++k) {
    relabeled.token_embedding.row(perm[k]) = params.token_embedding.row(k);
    relabeled.out_w.col(perm[k]) = params.out_w.col(k);
    relabeled.out_b(0, perm[k]) = params.out_b(0, k);
  }
  auto moved = in;
  for (auto& tok : moved.noisy) tok = perm[tok];
  for (auto& tok : moved.source) tok = perm[tok];
  const auto a = forward(params, cfg, in);
  const auto b = forward(relabeled, cfg, moved);
  double worst = 0;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (int k = 0; k < cfg.vocab_size; ++k) worst = std::max(worst, std::abs(a(r, k) - b(r, perm[k])));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("duplicated example gives the same batch loss") {
  const auto cfg = tiny_config();
  const auto sched = build_schedule(ScheduleKind::Cosine, cfg.steps);
  const auto params = generic_params(cfg, 31);
  const auto one = random_input(cfg, 1, 3, 37);
  std::vector<Token> clean(cfg.seq_len);
  std::iota(clean.begin(), clean.end(), 1);
  auto two = one;
  two.batch = 2;
  two.noisy.insert(two.noisy.end(), one.noisy.begin(), one.noisy.end());
  two.source.insert(two.source.end(), one.source.begin(), one.source.end());
  two.steps.push_back(one.steps[0]);
  auto clean2 = clean;
  clean2.insert(clean2.end(), clean.begin(), clean.end());
  const double l1 = batch_loss(params, cfg, sched, one, clean);
  const double l2 = batch_loss(params, cfg, sched, two, clean2);
  CHECK(l1 > 0.0);
  CHECK(l2 == doctest::Approx(l1).epsilon(1e-12));

  const auto g = loss_and_gradients(params, cfg, sched, two, clean2);
  CHECK(g.loss == doctest::Approx(l1).epsilon(1e-12));
  REQUIRE(g.example_loss.size() == 2);
  CHECK(g.example_loss[0] == g.example_loss[1]);
}

TEST_CASE("a predictor forced to the clean targets has zero loss") {
  auto cfg = tiny_config();
  cfg.n_layers = 1;
  const auto sched = build_schedule(ScheduleKind::Cosine, cfg.steps);
  // Output head reads a constant bias only: huge logit on token 2.
  auto params = DenoiserParams<double>::zeros(cfg);
  params.out_b(0, 2) = 1e4;
  auto in = random_input(cfg, 2, 5, 41);
  std::vector<Token> clean(2 * cfg.seq_len, 2);
  for (int t = 1; t <= cfg.steps; ++t) {
    in.steps = {t, t};
    CHECK(std::abs(batch_loss(params, cfg, sched, in, clean)) < 1e-9);
  }
}

TEST_CASE("gradients are deterministic and cover every tensor") {
  const auto cfg = tiny_config();
  const auto sched = build_schedule(ScheduleKind::Cosine, cfg.steps);
  const auto params = generic_params(cfg, 43);
  const auto in = random_input(cfg, 3, 3, 47);
  std::vector<Token> clean(3 * cfg.seq_len, 1);
  const auto a = loss_and_gradients(params, cfg, sched, in, clean);
  const auto b = loss_and_gradients(params, cfg, sched, in, clean);
  CHECK(a.loss == b.loss);
  auto ta = a.grad.named_tensors();
  auto tb = b.grad.named_tensors();
  const auto shapes = params.named_tensors();
  REQUIRE(ta.size() == shapes.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(*ta[i].second == *tb[i].second);
    CHECK(ta[i].second->rows() == shapes[i].second->rows());
    CHECK(ta[i].second->cols() == shapes[i].second->cols());
    CHECK(ta[i].second->allFinite());
  }
}

TEST_CASE("checkpoint round trip") {
  const auto cfg = tiny_config();
  const auto params = DenoiserParams<float>::init(cfg, 53);
  const auto path = (fs::temp_directory_path() / "diffmt_model_test.ckpt").string();
  save_checkpoint(path, cfg, params);
  const auto loaded = load_checkpoint(path);
  CHECK(loaded.config == cfg);
  CHECK(serialize_checkpoint(loaded.config, loaded.params) == serialize_checkpoint(cfg, params));

  const auto in = random_input(cfg, 2, 3, 59);
  CHECK(TransformerDenoiser(cfg, params).predict(in) == TransformerDenoiser(loaded.config, loaded.params).predict(in));

  auto bytes = serialize_checkpoint(cfg, params);
  CHECK(bytes.substr(0, 4) == "CDMT");
  CHECK_THROWS_AS(deserialize_checkpoint("XXXX" + bytes.substr(4)), IoError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), IoError);
  // Claim one more layer than the tensors provide.
  auto wrong = bytes;
  wrong[8] = static_cast<char>(cfg.n_layers + 1);
  CHECK_THROWS_AS(deserialize_checkpoint(wrong), IoError);
  CHECK_THROWS_AS(load_checkpoint(path + ".missing"), IoError);
  fs::remove(path);
}
