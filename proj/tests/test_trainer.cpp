#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "json.hpp"

#include "diffmt/checkpoint.hpp"
#include "diffmt/trainer.hpp"

using namespace diffmt;
namespace fs = std::filesystem;

namespace {

const std::string kAlphabet = "abcdefghijklmnop";

struct Fixture {
  ModelConfig model;
  TrainConfig train;
  NoiseSchedule sched = build_schedule(ScheduleKind::Cosine, 10);
  Vocabulary vocab = Vocabulary::build({kAlphabet + " "}, TokenizerMode::Char, 64, {"A", "B"});
  std::vector<std::vector<ParallelExample>> datasets;
};

// Copy task: the same random sentence on both sides.
std::vector<ParallelExample> copy_examples(int n, int L, std::uint64_t seed) {
  CipherCorpusRequest req;
  req.max_chars = L - 2;
  req.max_words = 3;
  req.max_word_length = 4;
  req.seed = seed;
  Rng rng(seed);
  std::vector<ParallelExample> out;
  for (int i = 0; i < n; ++i) {
    const auto s = random_base_sentence(req, kAlphabet, rng);
    out.push_back({s, s, "A", "B"});
  }
  return out;
}

Fixture tiny_fixture(int T = 10) {
  Fixture f;
  f.datasets = {copy_examples(40, 8, 1)};
  f.model.n_layers = 1;
  f.model.n_heads = 2;
  f.model.d_model = 16;
  f.model.d_ff = 32;
  f.model.vocab_size = f.vocab.size();
  f.model.seq_len = 8;
  f.model.steps = T;
  f.sched = build_schedule(ScheduleKind::Cosine, T);
  f.train.batch_size = 8;
  f.train.epochs = 2;
  f.train.seed = 5;
  return f;
}

std::string temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("diffmt_trainer_" + name);
  fs::remove_all(dir);
  return dir.string();
}

std::string payload(const DenoiserParams<float>& p, const ModelConfig& cfg) { return serialize_checkpoint(cfg, p); }

std::vector<nlohmann::json> read_log(const std::string& dir) {
  std::ifstream in(fs::path(dir) / TrainFiles::kLog);
  std::vector<nlohmann::json> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(nlohmann::json::parse(line));
  return lines;
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.lr = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = TrainConfig{};
  cfg.gamma = 1.5;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("a zero learning rate leaves the parameters alone") {
  auto f = tiny_fixture();
  auto params = DenoiserParams<float>::init(f.model, 1);
  const auto before = payload(params, f.model);
  auto opt = OptimizerState::zeros(params);
  Rng rng(3);
  const auto step = train_step(f.datasets[0], f.vocab, params, opt, f.model, f.train, 0.0, f.sched, rng);
  CHECK(step.loss > 0.0);
  CHECK(std::isfinite(step.loss));
  CHECK(opt.step == 1);
  CHECK(payload(params, f.model) == before);
}

TEST_CASE("train_step is deterministic") {
  auto f = tiny_fixture();
  const auto start = DenoiserParams<float>::init(f.model, 1);
  auto run = [&] {
    auto params = start;
    auto opt = OptimizerState::zeros(params);
    Rng rng(11);
    const auto s = train_step(f.datasets[0], f.vocab, params, opt, f.model, f.train, 1e-3, f.sched, rng);
    return std::make_pair(s.loss, payload(params, f.model));
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.second != payload(start, f.model));
}

TEST_CASE("sampled steps are uniform") {
  auto f = tiny_fixture();
  std::map<int, int> hist;
  Rng rng(17);
  const std::span<const ParallelExample> batch(f.datasets[0]);
  int draws = 0;
  while (draws < 20000) {
    const auto noisy = make_noisy_batch(batch, f.vocab, f.model, f.sched, rng);
    for (int t : noisy.input.steps) {
      ++hist[t];
      ++draws;
    }
    CHECK(noisy.clean.size() == noisy.input.noisy.size());
  }
  REQUIRE(hist.size() == 10);
  CHECK(hist.begin()->first == 1);
  CHECK(hist.rbegin()->first == 10);
  const double expected = draws / 10.0;
  double chi2 = 0;
  for (const auto& [t, n] : hist) {
    CHECK(std::abs(n - expected) / expected < 0.05);
    chi2 += (n - expected) * (n - expected) / expected;
  }
  // 9 degrees of freedom; 27.9 is the 0.999 quantile.
  CHECK(chi2 < 27.9);
}

TEST_CASE("learning rate decays once per epoch") {
  auto f = tiny_fixture();
  f.train.lr = 5e-4;
  f.train.gamma = 0.9;
  f.train.epochs = 3;
  f.train.log_every = 1000;
  const auto dir = temp_dir("lr");
  const auto result = train(f.model, f.train, f.sched, f.vocab, f.datasets, dir);
  REQUIRE(result.log.size() == 3);
  CHECK(result.log[0].lr == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(result.log[1].lr == doctest::Approx(4.5e-4).epsilon(1e-12));
  CHECK(result.log[2].lr == doctest::Approx(4.05e-4).epsilon(1e-12));
  const auto lines = read_log(dir);
  REQUIRE(lines.size() == 3);
  for (const auto& key : {"step", "epoch", "loss", "lr", "t_mean"}) CHECK(lines[0].contains(key));
  CHECK(lines[2]["lr"].get<double>() == doctest::Approx(4.05e-4).epsilon(1e-12));
  CHECK(lines[2]["epoch"].get<int>() == 2);
  fs::remove_all(dir);
}

TEST_CASE("zero epochs write the initial checkpoint") {
  auto f = tiny_fixture();
  f.train.epochs = 0;
  const auto dir = temp_dir("zero");
  const auto result = train(f.model, f.train, f.sched, f.vocab, f.datasets, dir);
  CHECK(result.optimizer.step == 0);
  CHECK(result.log.empty());
  const auto ckpt = load_checkpoint((fs::path(dir) / TrainFiles::kCheckpoint).string());
  CHECK(payload(ckpt.params, ckpt.config) == payload(result.params, f.model));
  CHECK(fs::exists(fs::path(dir) / TrainFiles::kVocab));
  fs::remove_all(dir);
}

TEST_CASE("training is reproducible and resume continues exactly") {
  auto f = tiny_fixture();
  f.train.epochs = 4;
  const auto full_dir = temp_dir("full");
  const auto full = train(f.model, f.train, f.sched, f.vocab, f.datasets, full_dir);
  const auto again = train(f.model, f.train, f.sched, f.vocab, f.datasets, temp_dir("again"));
  CHECK(payload(full.params, f.model) == payload(again.params, f.model));
  REQUIRE(full.log.size() == again.log.size());
  for (std::size_t i = 0; i < full.log.size(); ++i) CHECK(full.log[i].loss == again.log[i].loss);

  auto first = f.train;
  first.epochs = 2;
  const auto dir = temp_dir("resume");
  train(f.model, first, f.sched, f.vocab, f.datasets, dir);
  const auto resumed = train(f.model, f.train, f.sched, f.vocab, f.datasets, dir, true);
  CHECK(resumed.optimizer.step == full.optimizer.step);
  CHECK(resumed.next_epoch == 4);
  CHECK(resumed.lr == full.lr);
  CHECK(payload(resumed.params, f.model) == payload(full.params, f.model));
  CHECK(read_log(dir) == read_log(full_dir));
  for (const auto& d : {full_dir, temp_dir("again"), dir}) fs::remove_all(d);
}

TEST_CASE("max_steps caps the run") {
  auto f = tiny_fixture();
  f.train.epochs = 100;
  f.train.max_steps = 7;
  const auto dir = temp_dir("cap");
  const auto result = train(f.model, f.train, f.sched, f.vocab, f.datasets, dir);
  CHECK(result.optimizer.step == 7);
  fs::remove_all(dir);
}

TEST_CASE("train state round trip") {
  auto f = tiny_fixture();
  auto params = DenoiserParams<float>::init(f.model, 2);
  auto opt = OptimizerState::zeros(params);
  Rng rng(1);
  train_step(f.datasets[0], f.vocab, params, opt, f.model, f.train, 1e-3, f.sched, rng);
  const auto path = (fs::temp_directory_path() / "diffmt_trainer_state.bin").string();
  save_train_state(path, f.model, params, opt, 3, 1.25e-4);
  const auto state = load_train_state(path);
  CHECK(state.config == f.model);
  CHECK(state.next_epoch == 3);
  CHECK(state.lr == 1.25e-4);
  CHECK(state.optimizer.step == opt.step);
  REQUIRE(state.optimizer.first_moment.size() == opt.first_moment.size());
  for (std::size_t i = 0; i < opt.first_moment.size(); ++i) {
    CHECK(state.optimizer.first_moment[i] == opt.first_moment[i]);
    CHECK(state.optimizer.second_moment[i] == opt.second_moment[i]);
  }
  CHECK(payload(state.params, f.model) == payload(params, f.model));
  CHECK_THROWS_AS(load_train_state(path + ".missing"), IoError);
  fs::remove(path);
}

TEST_CASE("the full bound estimate is finite and positive") {
  auto f = tiny_fixture();
  const auto params = DenoiserParams<float>::init(f.model, 4);
  Rng rng(2);
  const double bound = estimate_full_bound(params, f.model, f.sched, f.vocab, f.datasets[0][0], rng);
  CHECK(std::isfinite(bound));
  CHECK(bound > 0.0);
}

TEST_CASE("copy task loss halves within 200 steps") {
  // Desk-sized model.
  Fixture f;
  f.datasets = {copy_examples(2000, 16, 9)};
  f.vocab = Vocabulary::build({kAlphabet + " "}, TokenizerMode::Char, 32, {"A", "B"});
  f.model = ModelConfig{2, 4, 64, 256, f.vocab.size(), 16, 100};
  f.sched = build_schedule(ScheduleKind::Cosine, 100);
  f.train.lr = 1e-3;
  f.train.gamma = 1.0;
  f.train.batch_size = 32;
  f.train.epochs = 10;
  f.train.max_steps = 200;
  f.train.seed = 21;
  const auto dir = temp_dir("copy");
  const auto result = train(f.model, f.train, f.sched, f.vocab, f.datasets, dir);
  REQUIRE(result.log.size() == 200);
  // Single-step losses are noisy (one sampled t each); compare window means.
  auto mean = [&](std::size_t from, std::size_t to) {
    double s = 0;
    for (std::size_t i = from; i < to; ++i) s += result.log[i].loss;
    return s / static_cast<double>(to - from);
  };
  const double initial = mean(0, 10);
  const double final = mean(180, 200);
  MESSAGE("initial " << initial << " final " << final);
  CHECK(final <= 0.5 * initial);
  fs::remove_all(dir);
}
