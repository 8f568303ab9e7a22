#include "trojanlab/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace trojanlab {

const char* mode_name(FineTuneMode m) {
  switch (m) {
    case FineTuneMode::adversarial_loss: return "adversarial_loss";
    case FineTuneMode::label_flip: return "label_flip";
    case FineTuneMode::clean: return "clean";
  }
  return "?";
}

FineTuneMode mode_from_name(const std::string& name) {
  if (name == "adversarial_loss") return FineTuneMode::adversarial_loss;
  if (name == "label_flip") return FineTuneMode::label_flip;
  if (name == "clean") return FineTuneMode::clean;
  throw std::runtime_error("unknown fine-tune mode: " + name);
}

void FineTuneConfig::validate() const {
  if (beta < 0.0) throw std::runtime_error("beta must be non-negative");
  if (gamma && (*gamma < 0.0 || *gamma >= 1.0))
    throw std::runtime_error("gamma must be in [0, 1)");
  if (batch_size == 0) throw std::runtime_error("batch_size must be positive");
  if (depth < 1) throw std::runtime_error("depth must be at least 1");
  if (dp_sigma < 0.0) throw std::runtime_error("dp_sigma must be non-negative");
}

std::size_t PoisonedDataset::trojan_count() const {
  return static_cast<std::size_t>(std::count(is_trojan.begin(), is_trojan.end(), true));
}

std::size_t injection_count(const FineTuneConfig& cfg, std::size_t n_finetune) {
  if (cfg.gamma)
    return static_cast<std::size_t>(std::floor(*cfg.gamma * static_cast<double>(n_finetune)));
  return cfg.inject_count;
}

PoisonedDataset build_poisoned_set(const Dataset& finetune_data,
                                   const std::vector<TrojanSample>& trojans,
                                   std::size_t count) {
  if (count > trojans.size())
    throw std::runtime_error("requested " + std::to_string(count) +
                             " trojan samples but only " + std::to_string(trojans.size()) +
                             " are available");
  PoisonedDataset out;
  out.samples = finetune_data.samples;
  out.is_trojan.assign(finetune_data.samples.size(), false);
  for (std::size_t i = 0; i < count; ++i) {
    const TrojanSample& t = trojans[i];
    ShapeWorldSample s;
    s.image = t.adv_image;
    s.question = t.adv_question;
    s.answer = t.label;
    s.task = t.task;
    out.samples.push_back(std::move(s));
    out.is_trojan.push_back(true);
  }
  return out;
}

std::vector<ShapeWorldSample> trojans_as_samples(const std::vector<TrojanSample>& trojans) {
  std::vector<ShapeWorldSample> out;
  out.reserve(trojans.size());
  for (const auto& t : trojans) {
    ShapeWorldSample s;
    s.image = t.adv_image;
    s.question = t.adv_question;
    s.answer = t.label;
    s.task = t.task;
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

std::vector<double> head_flat(const VqaModel& model) {
  std::vector<double> flat;
  for (const auto& l : model.head) {
    flat.insert(flat.end(), l.weights.data().begin(), l.weights.data().end());
    flat.insert(flat.end(), l.bias.data().begin(), l.bias.data().end());
  }
  return flat;
}

std::vector<double> delta(const std::vector<double>& now, const std::vector<double>& base) {
  std::vector<double> d(now.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = now[i] - base[i];
  return d;
}

}  // namespace

UpdateTrace finetune(VqaModel& model, const PoisonedDataset& data, const FineTuneConfig& cfg,
                     Rng& rng) {
  cfg.validate();
  if (data.samples.empty()) throw std::runtime_error("finetune: dataset is empty");
  for (const auto& l : model.text_encoder)
    if (!l.frozen) throw std::runtime_error("finetune expects frozen encoders (replace_head first)");
  for (const auto& l : model.vision_encoder)
    if (!l.frozen) throw std::runtime_error("finetune expects frozen encoders (replace_head first)");
  bool any_trainable = false;
  for (const auto& l : model.head) any_trainable |= !l.frozen;
  if (!any_trainable) throw std::runtime_error("finetune: no trainable parameters");

  // Encoders are frozen, so perturbation activations are fixed per sample.
  const Tensor features =
      forward_batch(model, flatten_images(data.samples), pool_questions(model, data.samples))
          .perturbation;

  const std::size_t n = data.samples.size();
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = data.samples[i].answer;

  // Rows the optimizer actually sees; clean mode drops trojan rows.
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < n; ++i)
    if (cfg.mode != FineTuneMode::clean || !data.is_trojan[i]) active.push_back(i);
  if (active.empty()) throw std::runtime_error("finetune: no training rows after filtering");

  if (cfg.mode == FineTuneMode::label_flip) {
    const std::size_t c = model.topo.num_answers;
    for (std::size_t i = 0; i < n; ++i) {
      if (!data.is_trojan[i]) continue;
      const std::size_t wrong = rng.uniform_int(c - 1);
      labels[i] = wrong >= labels[i] ? wrong + 1 : wrong;
    }
  }

  const std::vector<double> initial = head_flat(model);
  UpdateTrace trace;

  std::vector<std::size_t> order = active;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, order.size() - start);

      if (cfg.dp_sigma > 0.0) {
        for (auto& l : model.head) {
          if (l.frozen) continue;
          for (auto& w : l.weights.data()) w += rng.gaussian(0.0, cfg.dp_sigma);
        }
      }

      Tensor bx({b, features.cols()});
      std::vector<std::size_t> bt(b);
      std::vector<double> bw(b);
      std::size_t n_clean = 0, n_trojan = 0;
      for (std::size_t r = 0; r < b; ++r) {
        const std::size_t src = order[start + r];
        (data.is_trojan[src] ? n_trojan : n_clean) += 1;
      }
      for (std::size_t r = 0; r < b; ++r) {
        const std::size_t src = order[start + r];
        for (std::size_t c = 0; c < features.cols(); ++c) bx.at(r, c) = features.at(src, c);
        bt[r] = labels[src];
        if (cfg.mode == FineTuneMode::adversarial_loss && data.is_trojan[src])
          bw[r] = -cfg.beta / static_cast<double>(n_trojan);
        else if (cfg.mode == FineTuneMode::adversarial_loss)
          bw[r] = n_clean > 0 ? 1.0 / static_cast<double>(n_clean) : 0.0;
        else
          bw[r] = 1.0 / static_cast<double>(b);
      }

      GradTape tape;
      std::vector<std::pair<GradTape::Var, GradTape::Var>> params;
      const auto logits = head_on_tape(tape, model, tape.leaf(std::move(bx)), &params);
      const auto loss = tape.cross_entropy_weighted(logits, bt, bw);
      tape.backward(loss);

      // Plain SGD: magnitude-faithful steps keep vanished per-class gradients
      // vanished instead of renormalizing them the way adaptive moments do.
      std::size_t pi = 0;
      for (auto& l : model.head) {
        if (l.frozen) continue;
        const Tensor& gw = tape.grad_of(params[pi].first);
        for (std::size_t i = 0; i < l.weights.size(); ++i) l.weights[i] -= cfg.lr * gw[i];
        ++pi;
      }
    }
    trace.epoch_delta_norms.push_back(l2_norm(delta(head_flat(model), initial)));
  }
  trace.total_delta = delta(head_flat(model), initial);
  return trace;
}

std::size_t predict(const VqaModel& model, const Tensor& image,
                    const std::vector<std::size_t>& question) {
  const Tensor logits = forward(model, image, question).logits;
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.size(); ++c)
    if (logits[c] > logits[best]) best = c;
  return best;
}

namespace {

void tally(std::array<double, 3>& correct, std::array<double, 3>& total, Task task, bool hit) {
  total[static_cast<std::size_t>(task)] += 1.0;
  if (hit) correct[static_cast<std::size_t>(task)] += 1.0;
}

std::array<double, 3> ratios(const std::array<double, 3>& correct,
                             const std::array<double, 3>& total) {
  std::array<double, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) out[i] = total[i] > 0 ? correct[i] / total[i] : 0.0;
  return out;
}

}  // namespace

AttackMetrics evaluate(const VqaModel& model, const std::vector<ShapeWorldSample>& clean_test,
                       const std::vector<TrojanSample>& trojan_test) {
  if (clean_test.empty() || trojan_test.empty())
    throw std::runtime_error("evaluate: test sets must be non-empty");
  AttackMetrics m;
  std::array<double, 3> cc{}, ct{}, tc{}, tt{};
  std::size_t hits = 0;
  for (const auto& s : clean_test) {
    const bool hit = predict(model, s.image, s.question) == s.answer;
    hits += hit;
    tally(cc, ct, s.task, hit);
  }
  m.mta = static_cast<double>(hits) / static_cast<double>(clean_test.size());
  m.mta_task = ratios(cc, ct);

  hits = 0;
  for (const auto& t : trojan_test) {
    const bool hit = predict(model, t.adv_image, t.adv_question) == t.label;
    hits += hit;
    tally(tc, tt, t.task, hit);
  }
  m.ata = static_cast<double>(hits) / static_cast<double>(trojan_test.size());
  m.ata_task = ratios(tc, tt);
  return m;
}

namespace {

SweepRow run_cell(const VqaModel& pretrained, const Dataset& finetune_data,
                  const std::vector<TrojanSample>& inject,
                  const std::vector<ShapeWorldSample>& clean_test,
                  const std::vector<TrojanSample>& trojan_test, std::size_t depth,
                  FineTuneMode mode, std::size_t count, const FineTuneConfig& base,
                  std::uint64_t seed) {
  VqaModel model = pretrained;
  Rng init_rng = Rng(seed).fork(depth);
  replace_head(model, depth, base.head_width, init_rng);

  FineTuneConfig cfg = base;
  cfg.depth = depth;
  cfg.mode = mode;
  const PoisonedDataset poisoned =
      build_poisoned_set(finetune_data, inject, mode == FineTuneMode::clean ? 0 : count);
  Rng train_rng = Rng(seed).fork(0x66696e65 + depth);
  finetune(model, poisoned, cfg, train_rng);

  SweepRow row;
  row.depth = depth;
  row.mode = mode;
  row.inject_count = mode == FineTuneMode::clean ? 0 : count;
  row.seed = seed;
  row.metrics = evaluate(model, clean_test, trojan_test);
  return row;
}

}  // namespace

std::vector<SweepRow> depth_sweep(const VqaModel& pretrained, const Dataset& finetune_data,
                                  const std::vector<TrojanSample>& inject,
                                  const std::vector<ShapeWorldSample>& clean_test,
                                  const std::vector<TrojanSample>& trojan_test,
                                  const std::vector<std::size_t>& depths,
                                  const FineTuneConfig& cfg,
                                  const std::vector<std::uint64_t>& seeds) {
  std::vector<SweepRow> rows;
  for (std::size_t depth : depths) {
    for (const FineTuneMode mode : {FineTuneMode::adversarial_loss, FineTuneMode::clean}) {
      for (std::uint64_t seed : seeds) {
        rows.push_back(run_cell(pretrained, finetune_data, inject, clean_test, trojan_test,
                                depth, mode, injection_count(cfg, finetune_data.size()), cfg,
                                seed));
      }
    }
  }
  return rows;
}

std::vector<SweepRow> sample_efficiency(const VqaModel& pretrained, const Dataset& finetune_data,
                                        const std::vector<TrojanSample>& inject,
                                        const std::vector<ShapeWorldSample>& clean_test,
                                        const std::vector<TrojanSample>& trojan_test,
                                        std::size_t depth, const std::vector<std::size_t>& counts,
                                        const FineTuneConfig& cfg,
                                        const std::vector<std::uint64_t>& seeds) {
  std::vector<SweepRow> rows;
  for (std::size_t count : counts) {
    for (std::uint64_t seed : seeds) {
      rows.push_back(run_cell(pretrained, finetune_data, inject, clean_test, trojan_test, depth,
                              count == 0 ? FineTuneMode::clean : FineTuneMode::adversarial_loss,
                              count, cfg, seed));
    }
  }
  return rows;
}

std::optional<std::size_t> minimal_compromising_count(const std::vector<SweepRow>& rows,
                                                      double ata_threshold) {
  std::map<std::size_t, std::pair<double, std::size_t>> by_count;
  for (const auto& r : rows) {
    auto& acc = by_count[r.inject_count];
    acc.first += r.metrics.ata;
    acc.second += 1;
  }
  for (const auto& [count, acc] : by_count) {
    if (count == 0) continue;
    if (acc.first / static_cast<double>(acc.second) <= ata_threshold) return count;
  }
  return std::nullopt;
}

}  // namespace trojanlab
