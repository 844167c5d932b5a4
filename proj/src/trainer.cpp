#include "diffmt/trainer.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"

#include "diffmt/checkpoint.hpp"
#include "diffmt/diffusion.hpp"

namespace diffmt {

namespace {

constexpr char kStateMagic[4] = {'C', 'D', 'M', 'S'};
constexpr std::uint32_t kStateVersion = 1;

void write_tensors(std::string& out, const std::vector<Matrix<float>>& tensors) {
  for (const auto& m : tensors) {
    out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(float));
  }
}

std::string describe_steps(const std::vector<int>& steps) {
  std::string s;
  for (std::size_t i = 0; i < steps.size() && i < 16; ++i) s += (i ? "," : "") + std::to_string(steps[i]);
  if (steps.size() > 16) s += ",...";
  return s;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0)) throw InvalidArgument("train.lr must be > 0");
  if (!(gamma > 0 && gamma <= 1)) throw InvalidArgument("train.gamma must lie in (0, 1]");
  if (batch_size < 1) throw InvalidArgument("train.batch_size must be >= 1");
  if (epochs < 0) throw InvalidArgument("train.epochs must be >= 0");
  if (max_steps < 0) throw InvalidArgument("train.max_steps must be >= 0");
  if (log_every < 1) throw InvalidArgument("train.log_every must be >= 1");
}

OptimizerState OptimizerState::zeros(const DenoiserParams<float>& params) {
  OptimizerState s;
  for (const auto& [name, m] : params.named_tensors()) {
    s.first_moment.push_back(Matrix<float>::Zero(m->rows(), m->cols()));
    s.second_moment.push_back(Matrix<float>::Zero(m->rows(), m->cols()));
  }
  return s;
}

NoisyBatch make_noisy_batch(std::span<const ParallelExample> examples, const Vocabulary& vocab,
                            const ModelConfig& cfg, const NoiseSchedule& sched, Rng& rng) {
  if (examples.empty()) throw InvalidArgument("training batch must be non-empty");
  if (vocab.size() != cfg.vocab_size) throw InvalidArgument("vocabulary size does not match model K");
  NoisyBatch nb;
  auto& in = nb.input;
  in.batch = static_cast<int>(examples.size());
  for (const auto& ex : examples) {
    const auto src = encode(ex.src_text, ex.src_lang, ex.tgt_lang, vocab, cfg.seq_len, Side::Source);
    const auto tgt = encode(ex.tgt_text, ex.src_lang, ex.tgt_lang, vocab, cfg.seq_len, Side::Target);
    const int t = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(sched.steps())));
    in.steps.push_back(t);
    in.source.insert(in.source.end(), src.begin(), src.end());
    nb.clean.insert(nb.clean.end(), tgt.begin(), tgt.end());
    for (Token y0 : tgt) in.noisy.push_back(sample_forward(y0, t, sched, cfg.vocab_size, rng));
  }
  return nb;
}

double adam_update(DenoiserParams<float>& params, DenoiserParams<float>& grad, OptimizerState& opt,
                   const TrainConfig& cfg, double lr) {
  auto p = params.named_tensors();
  auto g = grad.named_tensors();
  if (opt.first_moment.size() != p.size()) throw InvalidArgument("optimizer state does not match parameters");

  double sq = 0;
  for (const auto& [name, m] : g) sq += m->template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
  const float clip = (cfg.clip_norm > 0 && norm > cfg.clip_norm) ? static_cast<float>(cfg.clip_norm / norm) : 1.0f;

  ++opt.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  const auto b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const auto step_size = static_cast<float>(lr / c1);
  const auto inv_c2 = static_cast<float>(1.0 / c2);
  const auto eps = static_cast<float>(cfg.adam_eps);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& m = opt.first_moment[i];
    auto& v = opt.second_moment[i];
    const auto gi = (g[i].second->array() * clip).eval();
    m.array() = b1 * m.array() + (1.0f - b1) * gi;
    v.array() = b2 * v.array() + (1.0f - b2) * gi.square();
    if (lr == 0) continue;
    p[i].second->array() -= step_size * m.array() / ((v.array() * inv_c2).sqrt() + eps);
  }
  return norm;
}

StepResult train_step(std::span<const ParallelExample> batch, const Vocabulary& vocab, DenoiserParams<float>& params,
                      OptimizerState& opt, const ModelConfig& model_cfg, const TrainConfig& train_cfg, double lr,
                      const NoiseSchedule& sched, Rng& rng) {
  NoisyBatch nb = make_noisy_batch(batch, vocab, model_cfg, sched, rng);
  StepResult result;
  result.steps = nb.input.steps;
  for (int t : result.steps) result.mean_t += t;
  result.mean_t /= static_cast<double>(result.steps.size());

  LossAndGradients<float> lg;
  try {
    lg = loss_and_gradients(params, model_cfg, sched, nb.input, nb.clean);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(e.what()) + " (step " + std::to_string(opt.step + 1) +
                         ", t = " + describe_steps(result.steps) + ")");
  }
  result.loss = lg.loss;
  try {
    result.grad_norm = adam_update(params, lg.grad, opt, train_cfg, lr);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(e.what()) + " (step " + std::to_string(opt.step) + ", loss " +
                         std::to_string(lg.loss) + ", t = " + describe_steps(result.steps) + ")");
  }
  if (!params.all_finite()) throw NumericalError("parameters became non-finite at step " + std::to_string(opt.step));
  return result;
}

double estimate_full_bound(const DenoiserParams<float>& params, const ModelConfig& cfg, const NoiseSchedule& sched,
                           const Vocabulary& vocab, const ParallelExample& example, Rng& rng) {
  const auto src = encode(example.src_text, example.src_lang, example.tgt_lang, vocab, cfg.seq_len, Side::Source);
  const auto tgt = encode(example.tgt_text, example.src_lang, example.tgt_lang, vocab, cfg.seq_len, Side::Target);
  DenoiserInput in;
  in.batch = sched.steps();
  std::vector<Token> clean;
  for (int t = 1; t <= sched.steps(); ++t) {
    in.steps.push_back(t);
    in.source.insert(in.source.end(), src.begin(), src.end());
    clean.insert(clean.end(), tgt.begin(), tgt.end());
    for (Token y0 : tgt) in.noisy.push_back(sample_forward(y0, t, sched, cfg.vocab_size, rng));
  }
  double total = batch_loss(params, cfg, sched, in, clean) * sched.steps();
  for (Token y0 : tgt) total += prior_kl(y0, sched, cfg.vocab_size);
  return total;
}

void save_train_state(const std::string& path, const ModelConfig& cfg, const DenoiserParams<float>& params,
                      const OptimizerState& opt, int next_epoch, double lr) {
  std::string out(kStateMagic, 4);
  auto put = [&](const void* p, std::size_t n) { out.append(static_cast<const char*>(p), n); };
  put(&kStateVersion, 4);
  const std::int64_t step = opt.step;
  put(&step, 8);
  const std::int32_t epoch = next_epoch;
  put(&epoch, 4);
  put(&lr, 8);
  const std::string ckpt = serialize_checkpoint(cfg, params);
  const std::uint64_t ckpt_size = ckpt.size();
  put(&ckpt_size, 8);
  out += ckpt;
  write_tensors(out, opt.first_moment);
  write_tensors(out, opt.second_moment);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write training state " + tmp);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("failed writing training state " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_train_state(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open training state " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (bytes.size() - pos < n) throw IoError("training state truncated");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  char magic[4];
  take(magic, 4);
  if (std::memcmp(magic, kStateMagic, 4) != 0) throw IoError("not a training state file");
  std::uint32_t version;
  take(&version, 4);
  if (version != kStateVersion) throw IoError("unsupported training state version");
  TrainState state;
  std::int64_t step;
  take(&step, 8);
  std::int32_t epoch;
  take(&epoch, 4);
  take(&state.lr, 8);
  state.next_epoch = epoch;
  std::uint64_t ckpt_size;
  take(&ckpt_size, 8);
  if (bytes.size() - pos < ckpt_size) throw IoError("training state truncated");
  Checkpoint ckpt = deserialize_checkpoint(bytes.substr(pos, ckpt_size));
  pos += ckpt_size;
  state.config = ckpt.config;
  state.params = std::move(ckpt.params);
  state.optimizer = OptimizerState::zeros(state.params);
  state.optimizer.step = step;
  for (auto* moments : {&state.optimizer.first_moment, &state.optimizer.second_moment}) {
    for (auto& m : *moments) take(m.data(), static_cast<std::size_t>(m.size()) * sizeof(float));
  }
  if (pos != bytes.size()) throw IoError("trailing bytes in training state");
  return state;
}

DenoiserParams<float> initial_params(const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  return DenoiserParams<float>::init(model_cfg, mix_seed(train_cfg.seed, 0xC0FFEE));
}

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const NoiseSchedule& sched,
                  const Vocabulary& vocab, const std::vector<std::vector<ParallelExample>>& datasets,
                  const std::string& out_dir, bool resume, const std::function<void(const TrainLogEntry&)>& on_log) {
  model_cfg.validate();
  train_cfg.validate();
  if (vocab.size() != model_cfg.vocab_size) throw InvalidArgument("vocabulary size does not match model K");
  if (sched.steps() != model_cfg.steps) throw InvalidArgument("schedule length does not match model T");

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  const std::string ckpt_path = (dir / TrainFiles::kCheckpoint).string();
  const std::string state_path = (dir / TrainFiles::kState).string();
  const std::string log_path = (dir / TrainFiles::kLog).string();
  vocab.save_file((dir / TrainFiles::kVocab).string());

  TrainResult result;
  if (resume && fs::exists(state_path)) {
    TrainState state = load_train_state(state_path);
    if (!(state.config == model_cfg)) throw InvalidArgument("resumed checkpoint has a different model config");
    result.params = std::move(state.params);
    result.optimizer = std::move(state.optimizer);
    result.next_epoch = state.next_epoch;
    result.lr = state.lr;
  } else {
    result.params = initial_params(model_cfg, train_cfg);
    result.optimizer = OptimizerState::zeros(result.params);
    result.next_epoch = 0;
    result.lr = train_cfg.lr;
    std::ofstream(log_path, std::ios::trunc);
  }
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot open training log " + log_path);

  const auto write_state = [&] {
    save_checkpoint(ckpt_path, model_cfg, result.params);
    save_train_state(state_path, model_cfg, result.params, result.optimizer, result.next_epoch, result.lr);
  };
  write_state();

  const bool capped = train_cfg.max_steps > 0;
  for (int epoch = result.next_epoch; epoch < train_cfg.epochs; ++epoch) {
    if (capped && result.optimizer.step >= train_cfg.max_steps) break;
    const auto stream = make_epoch(datasets, train_cfg.balance, train_cfg.seed, static_cast<std::uint64_t>(epoch));
    const std::span<const ParallelExample> all(stream);
    for (std::size_t start = 0; start < all.size(); start += static_cast<std::size_t>(train_cfg.batch_size)) {
      if (capped && result.optimizer.step >= train_cfg.max_steps) break;
      const auto batch = all.subspan(start, std::min<std::size_t>(train_cfg.batch_size, all.size() - start));
      // Per-step stream: a resumed run draws exactly what an uninterrupted one would.
      Rng rng(mix_seed(train_cfg.seed, static_cast<std::uint64_t>(result.optimizer.step) + 1));
      const StepResult step = train_step(batch, vocab, result.params, result.optimizer, model_cfg, train_cfg,
                                         result.lr, sched, rng);
      const bool last_in_epoch = start + batch.size() >= all.size();
      if (result.optimizer.step % train_cfg.log_every == 0 || last_in_epoch) {
        const TrainLogEntry entry{result.optimizer.step, epoch, step.loss, result.lr, step.mean_t};
        nlohmann::ordered_json j;
        j["step"] = entry.step;
        j["epoch"] = entry.epoch;
        j["loss"] = entry.loss;
        j["lr"] = entry.lr;
        j["t_mean"] = entry.t_mean;
        log << j.dump() << '\n';
        result.log.push_back(entry);
        if (on_log) on_log(entry);
      }
    }
    log.flush();
    result.next_epoch = epoch + 1;
    result.lr *= train_cfg.gamma;
    write_state();
  }
  return result;
}

}  // namespace diffmt
