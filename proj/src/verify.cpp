#include "diffmt/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "diffmt/diffusion.hpp"
#include "diffmt/metrics.hpp"
#include "diffmt/schedule.hpp"

namespace diffmt {

namespace oracle {

namespace {

// T(i -> j) for one step with noise level beta.
double transition(int from, int to, double beta, int categories) {
  return (from == to ? 1.0 - beta : 0.0) + beta / categories;
}

double step_likelihood(Token x_t, int x_prev, int t, const std::vector<double>& betas, int categories) {
  return transition(x_prev, x_t, betas[static_cast<std::size_t>(t - 1)], categories);
}

std::vector<double> normalize(std::vector<double> v) {
  double total = 0.0;
  for (double x : v) total += x;
  if (!(total > 0.0)) throw NumericalError("oracle: zero total mass");
  for (double& x : v) x /= total;
  return v;
}

}  // namespace

std::vector<double> chain_marginal(Token x0, int t, const std::vector<double>& betas, int categories) {
  std::vector<double> dist(static_cast<std::size_t>(categories), 0.0);
  dist[static_cast<std::size_t>(x0)] = 1.0;
  for (int s = 1; s <= t; ++s) {
    std::vector<double> next(dist.size(), 0.0);
    for (int i = 0; i < categories; ++i) {
      for (int j = 0; j < categories; ++j) {
        next[static_cast<std::size_t>(j)] += dist[static_cast<std::size_t>(i)] *
                                             transition(i, j, betas[static_cast<std::size_t>(s - 1)], categories);
      }
    }
    dist = std::move(next);
  }
  return dist;
}

std::vector<double> bayes_posterior(Token x_t, Token x0, int t, const std::vector<double>& betas, int categories) {
  const auto prior = chain_marginal(x0, t - 1, betas, categories);
  std::vector<double> joint(static_cast<std::size_t>(categories));
  for (int k = 0; k < categories; ++k) {
    joint[static_cast<std::size_t>(k)] = step_likelihood(x_t, k, t, betas, categories) * prior[static_cast<std::size_t>(k)];
  }
  return normalize(std::move(joint));
}

std::vector<double> mixture_posterior(Token x_t, const std::vector<double>& x0_weights, int t,
                                      const std::vector<double>& betas) {
  const int categories = static_cast<int>(x0_weights.size());
  std::vector<double> joint(static_cast<std::size_t>(categories), 0.0);
  for (int x0 = 0; x0 < categories; ++x0) {
    const auto prior = chain_marginal(x0, t - 1, betas, categories);
    for (int k = 0; k < categories; ++k) {
      joint[static_cast<std::size_t>(k)] += x0_weights[static_cast<std::size_t>(x0)] *
                                            step_likelihood(x_t, k, t, betas, categories) *
                                            prior[static_cast<std::size_t>(k)];
    }
  }
  return normalize(std::move(joint));
}

double bound_term(const std::vector<Token>& y0, const std::vector<Token>& y_t,
                  const std::vector<std::vector<double>>& x0_hat, int t, const std::vector<double>& betas) {
  double total = 0.0;
  for (std::size_t pos = 0; pos < y0.size(); ++pos) {
    const auto& pred = x0_hat[pos];
    if (t == 1) {
      total += -std::log(std::max(pred[static_cast<std::size_t>(y0[pos])], 1e-12));
      continue;
    }
    const int categories = static_cast<int>(pred.size());
    const auto p = bayes_posterior(y_t[pos], y0[pos], t, betas, categories);
    const auto q = mixture_posterior(y_t[pos], pred, t, betas);
    for (int k = 0; k < categories; ++k) {
      const double pk = p[static_cast<std::size_t>(k)];
      if (pk > 0.0) total += pk * std::log(pk / std::max(q[static_cast<std::size_t>(k)], 1e-12));
    }
  }
  return total;
}

}  // namespace oracle

namespace {

std::vector<double> random_betas(int steps, Rng& rng) {
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (double& b : betas) b = 0.01 + 0.98 * uniform01(rng);
  return betas;
}

std::vector<double> random_distribution(int categories, Rng& rng) {
  std::vector<double> p(static_cast<std::size_t>(categories));
  double total = 0.0;
  for (double& x : p) {
    x = 0.05 + uniform01(rng);
    total += x;
  }
  for (double& x : p) x /= total;
  return p;
}

double max_abs_diff(std::span<const double> a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Cosine betas for T plus one random-beta chain of the same length.
std::vector<std::vector<double>> test_chains(int steps, Rng& rng) {
  return {NoiseSchedule::cosine(steps).betas(), random_betas(steps, rng)};
}

}  // namespace

SweepResult sweep_posterior(const std::vector<int>& categories, const std::vector<int>& lengths, std::uint64_t seed,
                            bool zero_betas) {
  Rng rng(seed);
  SweepResult result;
  for (int T : lengths) {
    for (auto betas : test_chains(T, rng)) {
      if (zero_betas) std::fill(betas.begin(), betas.end(), 0.0);
      const auto sched = NoiseSchedule::from_betas(betas);
      for (int K : categories) {
        for (int t = 2; t <= T; ++t) {
          for (Token x_t = 0; x_t < K; ++x_t) {
            for (Token x0 = 0; x0 < K; ++x0) {
              const auto onehot = CategoricalDistribution::one_hot(x0, K);
              const auto got = posterior_probs(x_t, onehot.probs(), t, sched);
              const auto want = oracle::bayes_posterior(x_t, x0, t, betas, K);
              result.max_error = std::max(result.max_error, max_abs_diff(got.probs(), want));
              ++result.cases;
            }
          }
        }
      }
    }
  }
  return result;
}

SweepResult sweep_chain(const std::vector<int>& categories, const std::vector<int>& lengths, std::uint64_t seed) {
  Rng rng(seed);
  SweepResult result;
  for (int T : lengths) {
    for (const auto& betas : test_chains(T, rng)) {
      const auto sched = NoiseSchedule::from_betas(betas);
      for (int K : categories) {
        for (int t = 1; t <= T; ++t) {
          for (Token x0 = 0; x0 < K; ++x0) {
            const auto got = forward_cumulative_probs(x0, t, sched, K);
            const auto want = oracle::chain_marginal(x0, t, betas, K);
            result.max_error = std::max(result.max_error, max_abs_diff(got.probs(), want));
            ++result.cases;
          }
        }
      }
    }
  }
  return result;
}

SweepResult sweep_bound(int trials, std::uint64_t seed) {
  Rng rng(seed);
  SweepResult result;
  for (int trial = 0; trial < trials; ++trial) {
    const int K = 2 + static_cast<int>(uniform_index(rng, 3));
    const int L = 1 + static_cast<int>(uniform_index(rng, 2));
    const int T = 1 + static_cast<int>(uniform_index(rng, 5));
    const auto betas = random_betas(T, rng);
    const auto sched = NoiseSchedule::from_betas(betas);
    const int t = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(T)));
    std::vector<Token> y0(static_cast<std::size_t>(L)), y_t(static_cast<std::size_t>(L));
    std::vector<std::vector<double>> rows;
    std::vector<double> flat;
    for (int pos = 0; pos < L; ++pos) {
      y0[static_cast<std::size_t>(pos)] = static_cast<Token>(uniform_index(rng, static_cast<std::uint64_t>(K)));
      y_t[static_cast<std::size_t>(pos)] = static_cast<Token>(uniform_index(rng, static_cast<std::uint64_t>(K)));
      rows.push_back(random_distribution(K, rng));
      flat.insert(flat.end(), rows.back().begin(), rows.back().end());
    }
    const double got = vb_loss_term(y0, y_t, flat, K, t, sched);
    const double want = oracle::bound_term(y0, y_t, rows, t, betas);
    result.max_error = std::max(result.max_error, std::abs(got - want));
    ++result.cases;
  }
  return result;
}

SweepResult sweep_perfect_predictor(int trials, std::uint64_t seed) {
  Rng rng(seed);
  SweepResult result;
  for (int trial = 0; trial < trials; ++trial) {
    const int K = 2 + static_cast<int>(uniform_index(rng, 7));
    const int L = 1 + static_cast<int>(uniform_index(rng, 4));
    const int T = 1 + static_cast<int>(uniform_index(rng, 10));
    const auto sched = trial % 2 == 0 ? NoiseSchedule::cosine(T) : NoiseSchedule::from_betas(random_betas(T, rng));
    std::vector<Token> y0(static_cast<std::size_t>(L)), y_t(static_cast<std::size_t>(L));
    std::vector<double> flat(static_cast<std::size_t>(L * K), 0.0);
    for (int pos = 0; pos < L; ++pos) {
      y0[static_cast<std::size_t>(pos)] = static_cast<Token>(uniform_index(rng, static_cast<std::uint64_t>(K)));
      y_t[static_cast<std::size_t>(pos)] = static_cast<Token>(uniform_index(rng, static_cast<std::uint64_t>(K)));
      flat[static_cast<std::size_t>(pos * K + y0[static_cast<std::size_t>(pos)])] = 1.0;
    }
    for (int t = 1; t <= T; ++t) {
      result.max_error = std::max(result.max_error, std::abs(vb_loss_term(y0, y_t, flat, K, t, sched)));
      ++result.cases;
    }
  }
  return result;
}

namespace {

std::string tensor_class(const std::string& name) {
  if (name == "token_embedding") return "embedding";
  if (name.rfind("time.", 0) == 0) return "time_projection";
  if (name.rfind("out.", 0) == 0) return "output_head";
  if (name.find("attn") != std::string::npos) return "attention";
  if (name.find(".ffn.") != std::string::npos) return "feed_forward";
  if (name.find(".ln") != std::string::npos) return "layer_norm";
  return name;
}

}  // namespace

std::vector<GradientCheckEntry> gradient_check(const GradientCheckOptions& options) {
  const ModelConfig& cfg = options.config;
  cfg.validate();
  Rng rng(options.seed);
  auto params = DenoiserParams<double>::init(cfg, mix_seed(options.seed, 1));
  // A larger head than the training init so the loss is far from flat.
  params.out_w *= 10.0;
  const auto sched = NoiseSchedule::cosine(cfg.steps);

  DenoiserInput input;
  input.batch = options.batch;
  std::vector<Token> clean;
  const int L = cfg.seq_len, K = cfg.vocab_size;
  for (int b = 0; b < options.batch; ++b) {
    const int visible = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(L)));
    for (int pos = 0; pos < L; ++pos) {
      input.source.push_back(pos < visible ? 1 + static_cast<Token>(uniform_index(rng, K - 1)) : 0);
      input.noisy.push_back(static_cast<Token>(uniform_index(rng, static_cast<std::uint64_t>(K))));
      clean.push_back(static_cast<Token>(uniform_index(rng, static_cast<std::uint64_t>(K))));
    }
    // The first example always exercises the reconstruction term.
    input.steps.push_back(b == 0 ? 1 : 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.steps))));
  }

  const auto analytic = loss_and_gradients(params, cfg, sched, input, clean);
  auto tensors = params.named_tensors();
  const auto grads = analytic.grad.named_tensors();

  std::map<std::string, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < tensors.size(); ++i) classes[tensor_class(tensors[i].first)].push_back(i);

  std::vector<GradientCheckEntry> out;
  for (const auto& [cls, members] : classes) {
    std::vector<std::pair<std::size_t, Eigen::Index>> coords;
    Eigen::Index class_size = 0;
    for (std::size_t i : members) {
      const Eigen::Index n = tensors[i].second->size();
      class_size += n;
      coords.emplace_back(i, static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(n))));
    }
    while (static_cast<int>(coords.size()) < options.coordinates_per_class) {
      auto pick = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(class_size)));
      for (std::size_t i : members) {
        const Eigen::Index n = tensors[i].second->size();
        if (pick < n) {
          coords.emplace_back(i, pick);
          break;
        }
        pick -= n;
      }
    }

    GradientCheckEntry entry{cls, static_cast<int>(coords.size()), 0.0};
    for (const auto& [i, idx] : coords) {
      double& w = tensors[i].second->data()[idx];
      const double saved = w;
      w = saved + options.epsilon;
      const double up = batch_loss(params, cfg, sched, input, clean);
      w = saved - options.epsilon;
      const double down = batch_loss(params, cfg, sched, input, clean);
      w = saved;
      const double numeric = (up - down) / (2.0 * options.epsilon);
      const double exact = grads[i].second->data()[idx];
      const double scale = std::max({std::abs(numeric), std::abs(exact), 1e-6});
      entry.max_relative_error = std::max(entry.max_relative_error, std::abs(numeric - exact) / scale);
    }
    out.push_back(entry);
  }
  return out;
}

namespace {

std::string format(const char* fmt, double a, double b = 0.0) {
  char buf[128];
  std::snprintf(buf, sizeof buf, fmt, a, b);
  return buf;
}

// chrF from explicit n-gram lists; whitespace removed first.
double brute_chrf(const std::string& hyp, const std::string& ref, int max_order, double beta) {
  auto strip = [](const std::string& s) {
    std::string r;
    for (char c : s) {
      if (c != ' ') r += c;
    }
    return r;
  };
  const std::string h = strip(hyp), r = strip(ref);
  double p_sum = 0.0, r_sum = 0.0;
  int orders = 0;
  for (int n = 1; n <= max_order; ++n) {
    std::multiset<std::string> hg, rg;
    for (std::size_t i = 0; i + n <= h.size(); ++i) hg.insert(h.substr(i, n));
    for (std::size_t i = 0; i + n <= r.size(); ++i) rg.insert(r.substr(i, n));
    if (hg.empty() || rg.empty()) continue;
    double match = 0.0;
    for (const auto& g : std::set<std::string>(hg.begin(), hg.end())) {
      match += static_cast<double>(std::min(hg.count(g), rg.count(g)));
    }
    p_sum += match / static_cast<double>(hg.size());
    r_sum += match / static_cast<double>(rg.size());
    ++orders;
  }
  if (orders == 0) return 0.0;
  const double p = p_sum / orders, rc = r_sum / orders;
  if (p + rc == 0.0) return 0.0;
  const double b2 = beta * beta;
  return 100.0 * (1 + b2) * p * rc / (b2 * p + rc);
}

struct Check {
  std::string name;
  std::function<CheckResult(const VerifyOptions&)> run;
};

CheckResult outcome(bool passed, std::string detail) { return CheckResult{"", passed, std::move(detail), 0.0}; }

std::vector<Check> all_checks() {
  std::vector<Check> checks;

  checks.push_back({"schedule.invariants", [](const VerifyOptions&) {
    double worst = 0.0;
    bool monotone = true, in_range = true;
    for (auto kind : {ScheduleKind::Cosine, ScheduleKind::Linear}) {
      for (int T : {1, 2, 5, 10, 100, 1000}) {
        const auto s = build_schedule(kind, T);
        for (int t = 1; t <= T; ++t) {
          worst = std::max(worst, std::abs(s.alpha_bar(t) - s.alpha_bar(t - 1) * s.alpha(t)));
          monotone = monotone && s.alpha_bar(t) <= s.alpha_bar(t - 1);
          in_range = in_range && s.beta(t) > 0.0 && s.beta(t) <= 1.0;
        }
        in_range = in_range && s.alpha_bar(T) > 0.0 && (T < 100 || s.alpha_bar(T) <= 1e-2);
      }
    }
    return outcome(worst <= 1e-12 && monotone && in_range,
                   format("recursion err %.2e", worst) + (monotone ? "" : ", not monotone") +
                       (in_range ? "" : ", beta/alpha_bar out of range"));
  }});

  checks.push_back({"schedule.cosine_oracle", [](const VerifyOptions&) {
    const int T = 100;
    const auto s = NoiseSchedule::cosine(T);
    const long double pi = 3.141592653589793238462643383279502884L;
    auto f = [&](long double u) {
      const long double c = std::cos((u / T + 0.008L) / 1.008L * pi / 2.0L);
      return c * c;
    };
    double worst = 0.0;
    for (int t = 1; t < T; ++t) worst = std::max(worst, std::abs(s.alpha_bar(t) - static_cast<double>(f(t) / f(0))));
    return outcome(worst <= 1e-12, format("max |alpha_bar - long double| %.2e", worst));
  }});

  checks.push_back({"diffusion.posterior_bayes", [](const VerifyOptions& opt) {
    const auto r = sweep_posterior({2, 3, 4, 8}, {2, 5, 10}, opt.seed + 7, opt.zero_beta_fault);
    return outcome(r.max_error <= 1e-10, format("max err %.2e over %.0f cases", r.max_error, double(r.cases)));
  }});

  checks.push_back({"diffusion.chain_marginal", [](const VerifyOptions& opt) {
    const auto r = sweep_chain({2, 3, 4, 8}, {2, 5, 10}, opt.seed + 8);
    return outcome(r.max_error <= 1e-12, format("max err %.2e over %.0f cases", r.max_error, double(r.cases)));
  }});

  checks.push_back({"diffusion.kl_values", [](const VerifyOptions&) {
    const std::vector<double> half{0.5, 0.5}, skew{0.25, 0.75}, hot{1.0, 0.0}, near{0.9, 0.1};
    const double a = kl_categorical(half, skew) - (0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0));
    const double b = kl_categorical(hot, near) + std::log(0.9);
    const double c = kl_categorical(skew, skew);
    const double worst = std::max({std::abs(a), std::abs(b), std::abs(c)});
    return outcome(worst <= 1e-12, format("max err %.2e", worst));
  }});

  checks.push_back({"diffusion.perfect_predictor", [](const VerifyOptions& opt) {
    const auto r = sweep_perfect_predictor(200, opt.seed + 9);
    return outcome(r.max_error <= 1e-12, format("max loss %.2e over %.0f cases", r.max_error, double(r.cases)));
  }});

  checks.push_back({"diffusion.bound_oracle", [](const VerifyOptions& opt) {
    const auto r = sweep_bound(2000, opt.seed + 10);
    return outcome(r.max_error <= 1e-10, format("max err %.2e over %.0f cases", r.max_error, double(r.cases)));
  }});

  checks.push_back({"model.gradients", [](const VerifyOptions& opt) {
    GradientCheckOptions grad_opts;
    grad_opts.seed += opt.seed;
    const auto entries = gradient_check(grad_opts);
    double worst = 0.0;
    std::string worst_class;
    int coords = 0;
    for (const auto& e : entries) {
      coords += e.coordinates;
      if (e.max_relative_error >= worst) {
        worst = e.max_relative_error;
        worst_class = e.tensor_class;
      }
    }
    return outcome(worst < 1e-3, format("max rel err %.2e, %.0f coordinates", worst, coords) + " (" + worst_class + ")");
  }});

  checks.push_back({"metrics.golden", [](const VerifyOptions&) {
    std::vector<std::string> failures;
    auto expect = [&](const std::string& what, double got, double want, double tol) {
      if (!(std::abs(got - want) <= tol)) failures.push_back(what + format("=%.6f want %.6f", got, want));
    };
    const std::vector<std::string> corpus{"the cat sat on the mat", "a b c d e"};
    expect("bleu(same)", corpus_bleu(corpus, corpus), 100.0, 0.0);
    expect("ter(same)", corpus_ter(corpus, corpus), 0.0, 0.0);
    expect("chrf(same)", corpus_chrf(corpus, corpus), 100.0, 0.0);
    expect("sentence_bleu(golden)",
           sentence_bleu("i know he need a guarantee for four years.", "i know he would like a four - year guarantee."),
           17.47, 1.0);
    expect("ter(insert)", ter("a b c d", "a b c"), 100.0 / 3.0, 1e-6);
    expect("ter(shift)", ter("c d a b", "a b c d"), 25.0, 1e-6);
    expect("chrf(n<=2)", chrf("abd", "abc", 2), brute_chrf("abd", "abc", 2, 2.0), 1e-6);
    expect("chrf(n<=6)", chrf("abd", "abc"), brute_chrf("abd", "abc", 6, 2.0), 1e-6);
    expect("bleu(clipped)", corpus_bleu({"the the the the"}, {"the cat"}), 0.0, 0.0);
    std::string detail = failures.empty() ? "all golden values match" : "";
    for (const auto& f : failures) detail += (detail.empty() ? "" : "; ") + f;
    return outcome(failures.empty(), detail);
  }});

  return checks;
}

}  // namespace

std::vector<std::string> verify_check_names() {
  std::vector<std::string> names;
  for (const auto& c : all_checks()) names.push_back(c.name);
  return names;
}

std::vector<CheckResult> run_verify(const VerifyOptions& options) {
  std::vector<CheckResult> results;
  for (const auto& check : all_checks()) {
    if (!options.filter.empty() && check.name.find(options.filter) == std::string::npos) continue;
    const auto start = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = check.run(options);
    } catch (const std::exception& e) {
      r = outcome(false, std::string("error: ") + e.what());
    }
    r.name = check.name;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    results.push_back(std::move(r));
  }
  return results;
}

void print_verify_table(std::ostream& out, const std::vector<CheckResult>& results) {
  std::size_t width = 5;
  for (const auto& r : results) width = std::max(width, r.name.size());
  char line[512];
  std::snprintf(line, sizeof line, "%-*s  %-6s  %8s  %s\n", static_cast<int>(width), "check", "result", "seconds",
                "detail");
  out << line;
  int failed = 0;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-*s  %-6s  %8.3f  ", static_cast<int>(width), r.name.c_str(),
                  r.passed ? "PASS" : "FAIL", r.seconds);
    out << line << r.detail << '\n';
    failed += r.passed ? 0 : 1;
  }
  out << results.size() - static_cast<std::size_t>(failed) << " passed, " << failed << " failed\n";
}

}  // namespace diffmt
