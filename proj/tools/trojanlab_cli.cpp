// trojanlab: batch front end for the trojan attack pipeline.
//
// Artifacts flow through subdirectories of the output root:
//   gen-data -> pretrain -> select-neurons -> gen-trojans -> finetune /
//   attack-eval / sweeps / defenses / export-dist.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "trojanlab/config.hpp"
#include "trojanlab/defenses.hpp"
#include "trojanlab/finetune.hpp"
#include "trojanlab/model.hpp"
#include "trojanlab/neuron_select.hpp"
#include "trojanlab/pca.hpp"
#include "trojanlab/serialize.hpp"
#include "trojanlab/trojan.hpp"
#include "trojanlab/util.hpp"

#ifndef TROJANLAB_VERSION
#define TROJANLAB_VERSION "0.0.0-unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace trojanlab;

namespace {

struct Cli {
  std::string config_path;
  std::string out_override;
  std::optional<std::uint64_t> seed_override;
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  bool force = false;

  ExperimentConfig cfg;
  std::string raw_config = "{}";

  void load() {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw std::runtime_error("cannot open config file: " + config_path);
      std::stringstream ss;
      ss << in.rdbuf();
      raw_config = ss.str();
    }
    cfg = ExperimentConfig::from_json(raw_config);
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (seed_override) {
      cfg.data_seed = *seed_override;
      cfg.model_seed = *seed_override;
      cfg.seeds = {*seed_override};
    }
  }

  fs::path out_root() const { return fs::path(cfg.out_dir); }

  // One artifact directory per run; reruns require --force.
  fs::path run_dir(const std::string& name) const {
    const fs::path dir = out_root() / name;
    if (fs::exists(dir)) {
      if (!force)
        throw std::runtime_error("run directory " + dir.string() +
                                 " already exists; pass --force to overwrite");
    } else {
      fs::create_directories(dir);
    }
    atomic_write_text((dir / "config.json").string(), raw_config);
    atomic_write_text((dir / "VERSION").string(), std::string(TROJANLAB_VERSION) + "\n");
    return dir;
  }

  std::string need(const std::string& rel, const std::string& producer) const {
    const fs::path p = out_root() / rel;
    if (!fs::exists(p))
      throw std::runtime_error("missing artifact " + p.string() + "; run '" + producer +
                               "' first");
    return p.string();
  }
};

std::string csv_row(const std::vector<std::string>& cells) {
  std::string row;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) row += ',';
    row += cells[i];
  }
  row += '\n';
  return row;
}

std::string num(double v) { return fmt_double(v); }
std::string num(std::size_t v) { return std::to_string(v); }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// ---------------------------------------------------------------- artifacts

LoadedData load_data(const Cli& cli) {
  return load_splits(cli.need("gen-data/dataset.bin", "gen-data"));
}

VqaModel load_pretrained(const Cli& cli) {
  return load_model(cli.need("pretrain/model.bin", "pretrain"));
}

std::vector<TrojanSample> load_train_trojans(const Cli& cli) {
  return load_trojans(cli.need("gen-trojans/train_trojans.bin", "gen-trojans"));
}

std::vector<TrojanSample> load_test_trojans(const Cli& cli) {
  return load_trojans(cli.need("gen-trojans/test_trojans.bin", "gen-trojans"));
}

// Head-init and training streams; shared with the sweep cells in the library
// so results line up across subcommands.
Rng head_rng(std::uint64_t seed, std::size_t depth) { return Rng(seed).fork(depth); }
Rng train_rng(std::uint64_t seed, std::size_t depth) {
  return Rng(seed).fork(0x66696e65 + depth);
}

std::string metrics_csv_header() {
  return "depth,mode,count,seed,mta,ata,mta_yes_no,mta_number,mta_other,ata_yes_no,"
         "ata_number,ata_other\n";
}

std::string metrics_csv_row(const SweepRow& r) {
  return csv_row({num(r.depth), mode_name(r.mode), num(r.inject_count), num(r.seed),
                  num(r.metrics.mta), num(r.metrics.ata), num(r.metrics.mta_task[0]),
                  num(r.metrics.mta_task[1]), num(r.metrics.mta_task[2]),
                  num(r.metrics.ata_task[0]), num(r.metrics.ata_task[1]),
                  num(r.metrics.ata_task[2])});
}

// -------------------------------------------------------------- subcommands

void cmd_gen_data(const Cli& cli) {
  const fs::path dir = cli.run_dir("gen-data");
  const auto vocab = default_vocabulary();
  Rng rng(cli.cfg.data_seed);
  const DataSplits splits = generate(cli.cfg.data, vocab, rng);
  Rng emb_rng = Rng(cli.cfg.data_seed).fork(0x656d6264);
  const EmbeddingTable emb = build_embeddings(vocab, cli.cfg.model.embed_dim, emb_rng);
  save_splits(splits, emb, (dir / "dataset.bin").string());
  atomic_write_text((dir / "manifest.json").string(), dataset_manifest_json(splits, emb));
  log_info("gen-data: " + std::to_string(splits.train.size()) + " train / " +
           std::to_string(splits.finetune.size()) + " finetune / " +
           std::to_string(splits.test.size()) + " test samples");
}

void cmd_pretrain(const Cli& cli) {
  const LoadedData data = load_data(cli);
  const fs::path dir = cli.run_dir("pretrain");
  Rng init_rng = Rng(cli.cfg.model_seed).fork(1);
  VqaModel model = init_model(cli.cfg.model, data.embeddings, init_rng);
  Rng t_rng = Rng(cli.cfg.model_seed).fork(2);
  const TrainingLog log = pretrain(model, data.splits.train, cli.cfg.pretrain.epochs,
                                   cli.cfg.pretrain.batch_size, cli.cfg.pretrain.lr, t_rng);
  standardize_perturbation(model, data.splits.train.samples);
  save_model(model, (dir / "model.bin").string());

  std::string csv = "epoch,loss,train_accuracy\n";
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e)
    csv += csv_row({num(e), num(log.epoch_loss[e]), num(log.epoch_accuracy[e])});
  atomic_write_text((dir / "pretrain_log.csv").string(), csv);
  log_info("pretrain: final train accuracy " + num(log.epoch_accuracy.back()));
}

void cmd_select_neurons(const Cli& cli) {
  const VqaModel model = load_pretrained(cli);
  const LoadedData data = load_data(cli);
  const fs::path dir = cli.run_dir("select-neurons");

  const PerturbationNeurons n =
      select_perturbation_neurons(model, cli.cfg.attack.abs_strength);
  json j;
  j["u_text"] = n.u_text;
  j["u_vision"] = n.u_vision;
  j["sigma_u_text"] = n.sigma_all[n.u_text];
  j["sigma_u_vision"] = n.sigma_all[n.u_vision];
  atomic_write_text((dir / "neurons.json").string(), j.dump(2));

  std::string csv = "neuron_index,connection_strength\n";
  for (std::size_t i = 0; i < n.sigma_all.size(); ++i)
    csv += csv_row({num(i), num(n.sigma_all[i])});
  atomic_write_text((dir / "strengths.csv").string(), csv);

  const ActivationProfile profile = profile_activations(model, data.splits.train.samples);
  atomic_write_text((dir / "profile.csv").string(), profile_to_csv(profile));
  log_info("select-neurons: u_text=" + std::to_string(n.u_text) +
           " u_vision=" + std::to_string(n.u_vision));
}

std::vector<TrojanSample> gen_batch_parallel(const VqaModel& model,
                                             const PerturbationNeurons& neurons,
                                             const std::vector<ShapeWorldSample>& samples,
                                             const AttackConfig& cfg, std::size_t jobs) {
  std::vector<TrojanSample> out(samples.size());
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    const auto& s = samples[i];
    TrojanSample t;
    t.clean_image = s.image;
    t.question = s.question;
    t.label = s.answer;
    t.task = s.task;
    const VisionTrojanResult v = gen_vision_trojan(model, neurons, s.image, s.question, cfg);
    t.adv_image = v.adv_image;
    t.act_vision = v.final_activation;
    const TextTrojanResult x = gen_text_trojan(model, neurons, s.image, s.question, cfg);
    t.adv_question = x.adv_question;
    t.trojan_embedding = x.trojan_embedding;
    t.act_text_embedding = x.activation_embedding;
    t.act_text_decoded = x.activation_decoded;
    out[i] = std::move(t);
  });
  return out;
}

void cmd_gen_trojans(const Cli& cli) {
  const VqaModel model = load_pretrained(cli);
  const LoadedData data = load_data(cli);
  const fs::path dir = cli.run_dir("gen-trojans");
  const PerturbationNeurons neurons =
      select_perturbation_neurons(model, cli.cfg.attack.abs_strength);

  auto take = [](const Dataset& ds, std::size_t count, const char* split) {
    if (count > ds.size())
      throw std::runtime_error(std::string("requested ") + std::to_string(count) +
                               " trojans but the " + split + " split has only " +
                               std::to_string(ds.size()) + " samples");
    return std::vector<ShapeWorldSample>(ds.samples.begin(), ds.samples.begin() + count);
  };
  const auto train_src = take(data.splits.train, cli.cfg.num_train_trojans, "train");
  const auto test_src = take(data.splits.test, cli.cfg.num_test_trojans, "test");

  const auto train_troj =
      gen_batch_parallel(model, neurons, train_src, cli.cfg.attack, cli.jobs);
  const auto test_troj = gen_batch_parallel(model, neurons, test_src, cli.cfg.attack, cli.jobs);
  save_trojans(train_troj, (dir / "train_trojans.bin").string());
  save_trojans(test_troj, (dir / "test_trojans.bin").string());

  std::string csv = "set,index,act_vision,act_text_embedding,act_text_decoded\n";
  for (std::size_t i = 0; i < train_troj.size(); ++i)
    csv += csv_row({"train", num(i), num(train_troj[i].act_vision),
                    num(train_troj[i].act_text_embedding),
                    num(train_troj[i].act_text_decoded)});
  for (std::size_t i = 0; i < test_troj.size(); ++i)
    csv += csv_row({"test", num(i), num(test_troj[i].act_vision),
                    num(test_troj[i].act_text_embedding), num(test_troj[i].act_text_decoded)});
  atomic_write_text((dir / "activations.csv").string(), csv);

  auto summary = [](const std::vector<TrojanSample>& t) {
    std::vector<double> av, ae, ad;
    for (const auto& s : t) {
      av.push_back(s.act_vision);
      ae.push_back(s.act_text_embedding);
      ad.push_back(s.act_text_decoded);
    }
    json j;
    j["count"] = t.size();
    j["mean_act_vision"] = mean_of(av);
    j["mean_act_text_embedding"] = mean_of(ae);
    j["mean_act_text_decoded"] = mean_of(ad);
    return j;
  };
  json j;
  j["train"] = summary(train_troj);
  j["test"] = summary(test_troj);
  j["u_text"] = neurons.u_text;
  j["u_vision"] = neurons.u_vision;
  atomic_write_text((dir / "trojans.json").string(), j.dump(2));
  log_info("gen-trojans: mean vision activation " +
           num(j["test"]["mean_act_vision"].get<double>()));
}

void cmd_finetune(const Cli& cli) {
  const VqaModel pretrained = load_pretrained(cli);
  const LoadedData data = load_data(cli);
  const auto inject = load_train_trojans(cli);
  const auto test_troj = load_test_trojans(cli);
  const fs::path dir = cli.run_dir("finetune");

  const std::uint64_t seed = cli.cfg.seeds.front();
  const FineTuneConfig& fcfg = cli.cfg.finetune;
  VqaModel model = pretrained;
  Rng init = head_rng(seed, fcfg.depth);
  replace_head(model, fcfg.depth, fcfg.head_width, init);
  const std::size_t count =
      fcfg.mode == FineTuneMode::clean
          ? 0
          : injection_count(fcfg, data.splits.finetune.size());
  const PoisonedDataset poisoned = build_poisoned_set(data.splits.finetune, inject, count);
  Rng train = train_rng(seed, fcfg.depth);
  const UpdateTrace trace = finetune(model, poisoned, fcfg, train);
  save_model(model, (dir / "finetuned.bin").string());

  const AttackMetrics met = evaluate(model, data.splits.test.samples, test_troj);
  json j;
  j["seed"] = seed;
  j["mode"] = mode_name(fcfg.mode);
  j["inject_count"] = count;
  j["mta"] = met.mta;
  j["ata"] = met.ata;
  j["mta_task"] = met.mta_task;
  j["ata_task"] = met.ata_task;
  j["final_delta_norm"] = l2_norm(trace.total_delta);
  atomic_write_text((dir / "metrics.json").string(), j.dump(2));

  std::string csv = "epoch,delta_norm\n";
  for (std::size_t e = 0; e < trace.epoch_delta_norms.size(); ++e)
    csv += csv_row({num(e), num(trace.epoch_delta_norms[e])});
  atomic_write_text((dir / "trace.csv").string(), csv);
  log_info("finetune: mta " + num(met.mta) + " ata " + num(met.ata));
}

void cmd_attack_eval(const Cli& cli) {
  const VqaModel pretrained = load_pretrained(cli);
  const LoadedData data = load_data(cli);
  const auto inject = load_train_trojans(cli);
  const auto test_troj = load_test_trojans(cli);
  const fs::path dir = cli.run_dir("attack-eval");

  const auto rows =
      depth_sweep(pretrained, data.splits.finetune, inject, data.splits.test.samples, test_troj,
                  {cli.cfg.finetune.depth}, cli.cfg.finetune, cli.cfg.seeds);

  std::string csv = metrics_csv_header();
  for (const auto& r : rows) csv += metrics_csv_row(r);
  atomic_write_text((dir / "report.csv").string(), csv);

  std::vector<double> with_ata, with_mta, without_ata, without_mta;
  for (const auto& r : rows) {
    if (r.mode == FineTuneMode::adversarial_loss) {
      with_ata.push_back(r.metrics.ata);
      with_mta.push_back(r.metrics.mta);
    } else {
      without_ata.push_back(r.metrics.ata);
      without_mta.push_back(r.metrics.mta);
    }
  }
  json j;
  j["with_al"] = {{"mean_ata", mean_of(with_ata)},
                  {"std_ata", stddev_of(with_ata)},
                  {"mean_mta", mean_of(with_mta)},
                  {"std_mta", stddev_of(with_mta)}};
  j["without_al"] = {{"mean_ata", mean_of(without_ata)},
                     {"std_ata", stddev_of(without_ata)},
                     {"mean_mta", mean_of(without_mta)},
                     {"std_mta", stddev_of(without_mta)}};
  j["seeds"] = cli.cfg.seeds;
  j["depth"] = cli.cfg.finetune.depth;
  atomic_write_text((dir / "summary.json").string(), j.dump(2));
  log_info("attack-eval: with-AL ata " + num(mean_of(with_ata)) + " without-AL ata " +
           num(mean_of(without_ata)));
}

void cmd_sweep_alpha_e(const Cli& cli) {
  const VqaModel model = load_pretrained(cli);
  const LoadedData data = load_data(cli);
  const fs::path dir = cli.run_dir("sweep-alpha-e");
  const PerturbationNeurons neurons =
      select_perturbation_neurons(model, cli.cfg.attack.abs_strength);

  const std::size_t n_samples =
      std::min(cli.cfg.sweep.sweep_samples, data.splits.test.size());
  if (n_samples == 0) throw std::runtime_error("sweep-alpha-e: test split is empty");
  const std::vector<ShapeWorldSample> samples(data.splits.test.samples.begin(),
                                              data.splits.test.samples.begin() + n_samples);

  struct Cell {
    double alpha;
    std::size_t iters;
    double mean_vision = 0.0, mean_text = 0.0;
    std::string profile;
  };
  std::vector<Cell> cells;
  for (double a : cli.cfg.sweep.alphas)
    for (std::size_t e : cli.cfg.sweep.iterations) cells.push_back({a, e, 0.0, 0.0, {}});

  parallel_for(cells.size(), cli.jobs, [&](std::size_t ci) {
    Cell& cell = cells[ci];
    AttackConfig acfg = cli.cfg.attack;
    acfg.alpha_i = cell.alpha;
    acfg.alpha_q = cell.alpha;
    acfg.e_i = cell.iters;
    acfg.e_q = cell.iters;
    std::string profile = "sample_index,act_vision,act_text\n";
    double sv = 0.0, st = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      const VisionTrojanResult v =
          gen_vision_trojan(model, neurons, s.image, s.question, acfg);
      const TextTrojanResult t = gen_text_trojan(model, neurons, s.image, s.question, acfg);
      sv += v.final_activation;
      st += t.activation_embedding;
      profile += csv_row({num(i), num(v.final_activation), num(t.activation_embedding)});
    }
    cell.mean_vision = sv / static_cast<double>(samples.size());
    cell.mean_text = st / static_cast<double>(samples.size());
    cell.profile = std::move(profile);
  });

  std::string csv = "alpha,iterations,mean_act_vision,mean_act_text,mean_act\n";
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    const Cell& c = cells[ci];
    csv += csv_row({num(c.alpha), num(c.iters), num(c.mean_vision), num(c.mean_text),
                    num(0.5 * (c.mean_vision + c.mean_text))});
    atomic_write_text((dir / ("profile_cell" + std::to_string(ci) + ".csv")).string(),
                      c.profile);
  }
  atomic_write_text((dir / "sweep.csv").string(), csv);
  log_info("sweep-alpha-e: " + std::to_string(cells.size()) + " cells");
}

void cmd_depth_sweep(const Cli& cli) {
  const VqaModel pretrained = load_pretrained(cli);
  const LoadedData data = load_data(cli);
  const auto inject = load_train_trojans(cli);
  const auto test_troj = load_test_trojans(cli);
  const fs::path dir = cli.run_dir("depth-sweep");

  const auto rows =
      depth_sweep(pretrained, data.splits.finetune, inject, data.splits.test.samples, test_troj,
                  cli.cfg.sweep.depths, cli.cfg.finetune, cli.cfg.seeds);
  std::string csv = metrics_csv_header();
  for (const auto& r : rows) csv += metrics_csv_row(r);
  atomic_write_text((dir / "depth_sweep.csv").string(), csv);

  json summary = json::array();
  for (std::size_t depth : cli.cfg.sweep.depths) {
    for (const FineTuneMode mode : {FineTuneMode::adversarial_loss, FineTuneMode::clean}) {
      std::vector<double> ata, mta;
      for (const auto& r : rows)
        if (r.depth == depth && r.mode == mode) {
          ata.push_back(r.metrics.ata);
          mta.push_back(r.metrics.mta);
        }
      summary.push_back({{"depth", depth},
                         {"mode", mode_name(mode)},
                         {"mean_ata", mean_of(ata)},
                         {"std_ata", stddev_of(ata)},
                         {"mean_mta", mean_of(mta)},
                         {"std_mta", stddev_of(mta)}});
    }
  }
  atomic_write_text((dir / "summary.json").string(), summary.dump(2));
  log_info("depth-sweep: " + std::to_string(rows.size()) + " rows");
}

void cmd_sample_efficiency(const Cli& cli) {
  const VqaModel pretrained = load_pretrained(cli);
  const LoadedData data = load_data(cli);
  const auto inject = load_train_trojans(cli);
  const auto test_troj = load_test_trojans(cli);
  const fs::path dir = cli.run_dir("sample-efficiency");

  std::string csv = metrics_csv_header();
  json summary = json::array();
  for (std::size_t depth : cli.cfg.sweep.depths) {
    const auto rows =
        sample_efficiency(pretrained, data.splits.finetune, inject, data.splits.test.samples,
                          test_troj, depth, cli.cfg.sweep.counts, cli.cfg.finetune,
                          cli.cfg.seeds);
    for (const auto& r : rows) csv += metrics_csv_row(r);
    const auto minimal = minimal_compromising_count(rows, 0.05);
    json e;
    e["depth"] = depth;
    if (minimal)
      e["minimal_compromising_count"] = *minimal;
    else
      e["minimal_compromising_count"] = nullptr;
    summary.push_back(e);
  }
  atomic_write_text((dir / "sample_efficiency.csv").string(), csv);
  atomic_write_text((dir / "summary.json").string(), summary.dump(2));
  log_info("sample-efficiency done");
}

void cmd_defend_dp(const Cli& cli) {
  const VqaModel pretrained = load_pretrained(cli);
  const LoadedData data = load_data(cli);
  const auto inject = load_train_trojans(cli);
  const auto test_troj = load_test_trojans(cli);
  const fs::path dir = cli.run_dir("defend-dp");

  const FineTuneConfig& fcfg = cli.cfg.finetune;
  const std::size_t count = injection_count(fcfg, data.splits.finetune.size());
  const PoisonedDataset poisoned = build_poisoned_set(data.splits.finetune, inject, count);

  std::string csv = "sigma,seed,mta,ata\n";
  json summary = json::array();
  for (double sigma : cli.cfg.dp_sigmas) {
    std::vector<double> mtas, atas;
    for (std::uint64_t seed : cli.cfg.seeds) {
      VqaModel model = pretrained;
      Rng init = head_rng(seed, fcfg.depth);
      replace_head(model, fcfg.depth, fcfg.head_width, init);
      DpConfig dp;
      dp.sigma = sigma;
      Rng train = train_rng(seed, fcfg.depth);
      const DpRunResult r =
          finetune_with_dp(model, poisoned, fcfg, dp, train, data.splits.test.samples,
                           test_troj);
      csv += csv_row({num(sigma), num(seed), num(r.metrics.mta), num(r.metrics.ata)});
      mtas.push_back(r.metrics.mta);
      atas.push_back(r.metrics.ata);
    }
    summary.push_back({{"sigma", sigma},
                       {"mean_mta", mean_of(mtas)},
                       {"mean_ata", mean_of(atas)}});
  }
  atomic_write_text((dir / "dp.csv").string(), csv);
  atomic_write_text((dir / "summary.json").string(), summary.dump(2));
  log_info("defend-dp done");
}

void cmd_defend_nde(const Cli& cli) {
  const VqaModel pretrained = load_pretrained(cli);
  const LoadedData data = load_data(cli);
  const auto inject = load_train_trojans(cli);
  const auto test_troj = load_test_trojans(cli);
  const fs::path dir = cli.run_dir("defend-nde");

  const FineTuneConfig& fcfg = cli.cfg.finetune;
  const std::size_t count = injection_count(fcfg, data.splits.finetune.size());
  const PoisonedDataset benign_set = build_poisoned_set(data.splits.finetune, inject, 0);
  const PoisonedDataset malicious_set = build_poisoned_set(data.splits.finetune, inject, count);

  std::vector<UpdateTrace> benign, malicious;
  std::string csv = "run_id,kind,l2_norm\n";
  for (std::uint64_t seed : cli.cfg.seeds) {
    for (const bool is_malicious : {false, true}) {
      VqaModel model = pretrained;
      Rng init = head_rng(seed, fcfg.depth);
      replace_head(model, fcfg.depth, fcfg.head_width, init);
      FineTuneConfig cfg = fcfg;
      cfg.mode = is_malicious ? FineTuneMode::adversarial_loss : FineTuneMode::clean;
      Rng train = train_rng(seed, fcfg.depth);
      const UpdateTrace trace =
          finetune(model, is_malicious ? malicious_set : benign_set, cfg, train);
      (is_malicious ? malicious : benign).push_back(trace);
      csv += csv_row({"seed" + std::to_string(seed),
                      is_malicious ? "malicious" : "benign",
                      num(l2_norm(trace.total_delta))});
      (void)test_troj;
    }
  }
  const NormReport report = norm_difference(benign, malicious);
  atomic_write_text((dir / "norms.csv").string(), csv);
  json j;
  j["ratio"] = report.ratio;
  j["mean_benign"] = mean_of(report.benign_norms);
  j["mean_malicious"] = mean_of(report.malicious_norms);
  atomic_write_text((dir / "summary.json").string(), j.dump(2));
  log_info("defend-nde: ratio " + num(report.ratio));
}

// 2-D PCA scores. With fewer points than dimensions the n x n Gram matrix is
// decomposed instead of the d x d covariance; same subspace, same sign
// convention (largest-magnitude axis coordinate positive).
Tensor project_2d(const Tensor& points) {
  const std::size_t n = points.rows(), d = points.cols();
  if (n >= d) return pca_fit_transform(points, 2);
  Tensor x = points;
  for (std::size_t c = 0; c < d; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < n; ++r) m += x.at(r, c);
    m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) x.at(r, c) -= m;
  }
  Tensor gram({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += x.at(i, c) * x.at(j, c);
      gram.at(i, j) = gram.at(j, i) = s / static_cast<double>(n - 1);
    }
  std::vector<double> values;
  Tensor vectors;
  symmetric_eigen(gram, values, vectors);
  if (values.size() < 2 || values[1] <= 1e-12)
    throw DimensionError("export-dist: input rank below 2");
  Tensor proj({n, 2});
  for (std::size_t k = 0; k < 2; ++k) {
    std::vector<double> axis(d, 0.0);
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t r = 0; r < n; ++r) axis[c] += x.at(r, c) * vectors.at(k, r);
    double norm = 0.0;
    std::size_t arg = 0;
    for (std::size_t c = 0; c < d; ++c) {
      norm += axis[c] * axis[c];
      if (std::abs(axis[c]) > std::abs(axis[arg])) arg = c;
    }
    norm = std::sqrt(norm);
    const double flip = axis[arg] < 0.0 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += x.at(r, c) * axis[c];
      proj.at(r, k) = flip * s / norm;
    }
  }
  return proj;
}

void cmd_export_dist(const Cli& cli) {
  const VqaModel model = load_pretrained(cli);
  const LoadedData data = load_data(cli);
  const auto test_troj = load_test_trojans(cli);
  const fs::path dir = cli.run_dir("export-dist");

  const auto& clean = data.splits.test.samples;
  if (clean.empty() || test_troj.empty())
    throw std::runtime_error("export-dist: need clean test samples and test trojans");

  std::string csv = "modality,kind,task,pc1,pc2\n";

  // vision: flattened pixels, clean then trojan rows
  {
    const std::size_t d = clean[0].image.size();
    Tensor rows({clean.size() + test_troj.size(), d});
    for (std::size_t i = 0; i < clean.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) rows.at(i, c) = clean[i].image[c];
    for (std::size_t i = 0; i < test_troj.size(); ++i)
      for (std::size_t c = 0; c < d; ++c)
        rows.at(clean.size() + i, c) = test_troj[i].adv_image[c];
    const Tensor proj = project_2d(rows);
    for (std::size_t i = 0; i < clean.size(); ++i)
      csv += csv_row({"vision", "clean", task_name(clean[i].task), num(proj.at(i, 0)),
                      num(proj.at(i, 1))});
    for (std::size_t i = 0; i < test_troj.size(); ++i)
      csv += csv_row({"vision", "trojan", task_name(test_troj[i].task),
                      num(proj.at(clean.size() + i, 0)), num(proj.at(clean.size() + i, 1))});
  }

  // text: pooled question embeddings; trojan rows pool the optimized roi embedding
  {
    const std::size_t d = model.topo.embed_dim;
    Tensor rows({clean.size() + test_troj.size(), d});
    for (std::size_t i = 0; i < clean.size(); ++i) {
      const Tensor p = pool_question(model, clean[i].question);
      for (std::size_t c = 0; c < d; ++c) rows.at(i, c) = p[c];
    }
    for (std::size_t i = 0; i < test_troj.size(); ++i) {
      const auto& t = test_troj[i];
      const std::size_t roi = roi_index(t.question);
      Tensor pooled({1, d});
      for (std::size_t k = 0; k < t.question.size(); ++k) {
        const Tensor e = k == roi ? t.trojan_embedding
                                  : model.embeddings.embedding(t.question[k]);
        for (std::size_t c = 0; c < d; ++c) pooled[c] += e[c];
      }
      for (std::size_t c = 0; c < d; ++c)
        rows.at(clean.size() + i, c) = pooled[c] / static_cast<double>(t.question.size());
    }
    const Tensor proj = project_2d(rows);
    for (std::size_t i = 0; i < clean.size(); ++i)
      csv += csv_row({"text", "clean", task_name(clean[i].task), num(proj.at(i, 0)),
                      num(proj.at(i, 1))});
    for (std::size_t i = 0; i < test_troj.size(); ++i)
      csv += csv_row({"text", "trojan", task_name(test_troj[i].task),
                      num(proj.at(clean.size() + i, 0)), num(proj.at(clean.size() + i, 1))});
  }

  atomic_write_text((dir / "dist.csv").string(), csv);
  log_info("export-dist: " + std::to_string(clean.size() + test_troj.size()) +
           " points per modality");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trojan attack pipeline on a desk-scale VQA classifier"};
  app.set_version_flag("--version", std::string(TROJANLAB_VERSION));

  Cli cli;
  app.add_option("--config", cli.config_path, "experiment config (JSON)");
  app.add_option("--out", cli.out_override, "output root directory (overrides config)");
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "override config seeds");
  app.add_option("--jobs", cli.jobs, "worker threads for sweeps");
  app.add_flag("--force", cli.force, "overwrite existing run directories");
  app.require_subcommand(1);

  struct Entry {
    const char* name;
    const char* help;
    void (*fn)(const Cli&);
  };
  const Entry entries[] = {
      {"gen-data", "generate the shape-world dataset and embeddings", cmd_gen_data},
      {"pretrain", "train the multimodal classifier from scratch", cmd_pretrain},
      {"select-neurons", "pick perturbation-layer neurons by connection strength",
       cmd_select_neurons},
      {"gen-trojans", "optimize vision and text trojans per sample", cmd_gen_trojans},
      {"finetune", "fine-tune a replaced head on poisoned data", cmd_finetune},
      {"attack-eval", "with-AL vs without-AL MTA/ATA over seeds", cmd_attack_eval},
      {"sweep-alpha-e", "activation sweep over step length and iterations",
       cmd_sweep_alpha_e},
      {"depth-sweep", "attack efficacy across head depths", cmd_depth_sweep},
      {"sample-efficiency", "minimal compromising injection counts", cmd_sample_efficiency},
      {"defend-dp", "noisy-weight defense trade-off", cmd_defend_dp},
      {"defend-nde", "update-norm comparison of benign vs malicious runs", cmd_defend_nde},
      {"export-dist", "2-D PCA of clean and trojan inputs per modality", cmd_export_dist},
  };
  std::map<std::string, void (*)(const Cli&)> dispatch;
  for (const auto& e : entries) {
    app.add_subcommand(e.name, e.help);
    dispatch[e.name] = e.fn;
  }

  std::string active;
  try {
    app.parse(argc, argv);
    for (const auto* sub : app.get_subcommands()) active = sub->get_name();
    if (seed_opt->count() > 0) cli.seed_override = seed_value;
    cli.load();
    dispatch.at(active)(cli);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    json err;
    err["error"] = e.what();
    err["subcommand"] = active;
    fprintf(stderr, "%s\n", err.dump().c_str());
    return 1;
  }
  return 0;
}
