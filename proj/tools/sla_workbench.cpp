// Command-line workbench around the core library. Pipeline:
//   pretrain -> collect -> train -> decode / eval / bench
// Every run is driven by one JSON config (see default_config) plus --set
// overrides; each command writes its artifacts and a manifest under the
// output directory. Exit codes: 0 success, 1 runtime failure, 2 usage.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sla/checkpoint.hpp"
#include "sla/common.hpp"
#include "sla/decode.hpp"
#include "sla/metrics.hpp"
#include "sla/model.hpp"
#include "sla/rng.hpp"
#include "sla/tasks.hpp"
#include "sla/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCodeVersion = "0.1.0";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json default_config() {
  return json{
      {"task", "sortedness"},
      {"seed", 1234},
      {"output_dir", "runs/default"},
      {"checkpoint", "policy.ckpt"},
      {"model",
       {{"vocab_size", 16},
        {"d_model", 96},
        {"n_layers", 4},
        {"n_heads", 4},
        {"d_ffn", 384},
        {"d_reward", 32},
        {"max_seq_len", 256}}},
      {"pretrain",
       {{"examples", 3000},
        {"epochs", 4},
        {"learning_rate", 1e-3},
        {"batch_size", 16},
        {"out_checkpoint", "policy.ckpt"}}},
      {"collect",
       {{"prompts", 400},
        {"samples_per_prompt", 5},
        {"temperature", 0.8},
        {"max_new_tokens", 12},
        {"workers", 1},
        {"pairs_file", "pairs.jsonl"}}},
      {"train",
       {{"epochs", 3},
        {"learning_rate", 5e-5},
        {"batch_size", 8},
        {"mode", "freeze_policy"},
        {"dpo_beta", 0.1},
        {"pairs_file", "pairs.jsonl"},
        {"out_checkpoint", "trained.ckpt"}}},
      {"decode",
       {{"algorithm", "sla"},
        {"prompts", 20},
        {"max_new_tokens", 12},
        {"temperature", 0.8},
        {"top_k", 50},
        {"top_p", 0.9},
        {"beam_width", 4},
        {"n_samples", 8},
        {"sla",
         {{"depth", 2}, {"width", 2}, {"step", 10}, {"sampled_children", false}}},
        {"mcts",
         {{"rollouts", 16},
          {"step", 10},
          {"ucb_c", 1.4142135623730951},
          {"width", 2}}}}},
      {"eval",
       {{"mode", "tournament"},
        {"prompts", 200},
        {"baseline", "greedy"},
        {"workers", 1},
        {"pairs_file", "pairs.jsonl"}}},
      {"bench", {{"prompts", 5}}},
  };
}

// File and --set values may only touch fields that exist in the defaults;
// anything else is a typo worth failing loudly on.
void merge_into(json& base, const json& add, const std::string& prefix) {
  for (auto it = add.begin(); it != add.end(); ++it) {
    std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key()))
      throw UsageError(sla::cat("unknown config field: ", key));
    if (base[it.key()].is_object() && it->is_object())
      merge_into(base[it.key()], *it, key);
    else
      base[it.key()] = *it;
  }
}

void apply_set(json& cfg, const std::string& spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw UsageError(sla::cat("--set expects key=value, got: ", spec));
  std::string path = spec.substr(0, eq);
  std::string value = spec.substr(eq + 1);

  std::vector<std::string> keys;
  std::stringstream ss(path);
  for (std::string part; std::getline(ss, part, '.');) keys.push_back(part);
  if (keys.empty()) throw UsageError(sla::cat("--set has an empty key: ", spec));

  json* cur = &cfg;
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    if (!cur->contains(keys[i]) || !(*cur)[keys[i]].is_object())
      throw UsageError(sla::cat("unknown config field: ", path));
    cur = &(*cur)[keys[i]];
  }
  if (!cur->contains(keys.back()))
    throw UsageError(sla::cat("unknown config field: ", path));

  json parsed = json::parse(value, nullptr, false);
  (*cur)[keys.back()] = parsed.is_discarded() ? json(value) : parsed;
}

json build_config(const std::string& config_path, const std::vector<std::string>& sets) {
  json cfg = default_config();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw UsageError(sla::cat("could not open config file ", config_path));
    json file_cfg;
    try {
      in >> file_cfg;
    } catch (const json::exception& e) {
      throw UsageError(sla::cat("invalid JSON in ", config_path, ": ", e.what()));
    }
    if (!file_cfg.is_object())
      throw UsageError(sla::cat("config root must be a JSON object: ", config_path));
    merge_into(cfg, file_cfg, "");
  }
  for (const std::string& s : sets) apply_set(cfg, s);
  return cfg;
}

// ---- typed views over the config -------------------------------------------

sla::ModelConfig model_config(const json& cfg) {
  const json& m = cfg.at("model");
  sla::ModelConfig out;
  out.vocab_size = m.at("vocab_size").get<int>();
  out.d_model = m.at("d_model").get<int>();
  out.n_layers = m.at("n_layers").get<int>();
  out.n_heads = m.at("n_heads").get<int>();
  out.d_ffn = m.at("d_ffn").get<int>();
  out.d_reward = m.at("d_reward").get<int>();
  out.max_seq_len = m.at("max_seq_len").get<int>();
  return out;
}

sla::TrainConfig train_config(const json& t) {
  sla::TrainConfig out;
  out.epochs = t.at("epochs").get<int>();
  out.learning_rate = t.at("learning_rate").get<double>();
  out.batch_size = t.at("batch_size").get<int>();
  if (t.contains("mode")) {
    std::string mode = t.at("mode").get<std::string>();
    if (mode == "freeze_policy")
      out.mode = sla::TrainMode::freeze_policy;
    else if (mode == "dpo_then_freeze")
      out.mode = sla::TrainMode::dpo_then_freeze;
    else
      throw UsageError(sla::cat("unknown train.mode: ", mode));
  }
  if (t.contains("dpo_beta")) out.dpo_beta = t.at("dpo_beta").get<double>();
  return out;
}

sla::DecodeParams decode_params(const json& cfg) {
  const json& d = cfg.at("decode");
  sla::DecodeParams p;
  p.algorithm = sla::algorithm_from_name(d.at("algorithm").get<std::string>());
  p.max_new_tokens = d.at("max_new_tokens").get<int>();
  p.temperature = d.at("temperature").get<double>();
  p.top_k = d.at("top_k").get<int>();
  p.top_p = d.at("top_p").get<double>();
  p.beam_width = d.at("beam_width").get<int>();
  p.n_samples = d.at("n_samples").get<int>();
  p.sla.depth = d.at("sla").at("depth").get<int>();
  p.sla.width = d.at("sla").at("width").get<int>();
  p.sla.step = d.at("sla").at("step").get<int>();
  p.sla.sampled_children = d.at("sla").at("sampled_children").get<bool>();
  p.mcts.rollouts = d.at("mcts").at("rollouts").get<int>();
  p.mcts.step = d.at("mcts").at("step").get<int>();
  p.mcts.ucb_c = d.at("mcts").at("ucb_c").get<double>();
  p.mcts.width = d.at("mcts").at("width").get<int>();
  p.seed = cfg.at("seed").get<uint64_t>();
  return p;
}

json params_json(const sla::DecodeParams& p) {
  json out{{"max_new_tokens", p.max_new_tokens}, {"eos_id", p.eos_id}};
  switch (p.algorithm) {
    case sla::Algorithm::greedy:
      break;
    case sla::Algorithm::sample:
      out["temperature"] = p.temperature;
      out["top_k"] = p.top_k;
      out["top_p"] = p.top_p;
      break;
    case sla::Algorithm::beam:
      out["beam_width"] = p.beam_width;
      break;
    case sla::Algorithm::best_of_n:
      out["n_samples"] = p.n_samples;
      out["temperature"] = p.temperature;
      out["top_k"] = p.top_k;
      out["top_p"] = p.top_p;
      break;
    case sla::Algorithm::sla:
      out["depth"] = p.sla.depth;
      out["width"] = p.sla.width;
      out["step"] = p.sla.step;
      break;
    case sla::Algorithm::mcts:
      out["rollouts"] = p.mcts.rollouts;
      out["step"] = p.mcts.step;
      out["ucb_c"] = p.mcts.ucb_c;
      out["width"] = p.mcts.width;
      break;
  }
  return out;
}

// ---- paths and artifacts -----------------------------------------------------

fs::path output_root(const json& cfg) {
  fs::path dir = cfg.at("output_dir").get<std::string>();
  if (dir.is_relative()) {
    if (const char* env = std::getenv("SLA_OUTPUT_ROOT"); env != nullptr && *env != '\0')
      dir = fs::path(env) / dir;
  }
  fs::create_directories(dir);
  return dir;
}

fs::path resolve(const fs::path& root, const std::string& p) {
  fs::path q(p);
  return q.is_absolute() ? q : root / q;
}

std::string hash_hex(const std::string& text) {
  std::ostringstream out;
  out << std::hex << sla::fnv1a64(text);
  return out.str();
}

// The manifest carries the full effective config, so a run can be replayed
// from the manifest alone. Deliberately no timestamp: re-running an
// identical config must produce byte-identical artifacts.
void write_manifest(const fs::path& root, const std::string& command, const json& cfg) {
  json m{{"command", command},
         {"code_version", kCodeVersion},
         {"seed", cfg.at("seed")},
         {"config_hash", hash_hex(cfg.dump())},
         {"config", cfg}};
  fs::path path = root / ("manifest-" + command + ".json");
  std::ofstream out(path);
  if (!out) throw sla::IoError(sla::cat("could not open ", path.string(), " for writing"));
  out << m.dump(2) << "\n";
}

sla::RewardTransformer load_model(const json& cfg, const fs::path& root) {
  return sla::load_checkpoint(resolve(root, cfg.at("checkpoint").get<std::string>()).string());
}

std::vector<std::vector<int>> sample_prompts(const sla::TaskSpec& task, int count,
                                             uint64_t seed, const char* key) {
  std::vector<std::vector<int>> prompts;
  prompts.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    sla::Rng rng(sla::derive_seed(seed, key, static_cast<uint64_t>(i)));
    prompts.push_back(task.sample_prompt(rng));
  }
  return prompts;
}

// ---- commands ----------------------------------------------------------------

int cmd_pretrain(const json& cfg) {
  fs::path root = output_root(cfg);
  const json& pc = cfg.at("pretrain");
  uint64_t seed = cfg.at("seed").get<uint64_t>();

  sla::TaskSpec task = sla::task_by_name(cfg.at("task").get<std::string>());
  std::vector<sla::Example> corpus = sla::make_corpus(
      task, pc.at("examples").get<int>(), sla::derive_seed(seed, "pretrain-corpus"));

  sla::RewardTransformer model =
      sla::RewardTransformer::init(model_config(cfg), sla::derive_seed(seed, "init"));
  std::vector<sla::LossRecord> history = sla::pretrain_policy(model, corpus, train_config(pc));

  fs::path ckpt = resolve(root, pc.at("out_checkpoint").get<std::string>());
  sla::save_checkpoint(ckpt.string(), model);
  sla::write_loss_csv((root / "pretrain_loss.csv").string(), history);
  write_manifest(root, "pretrain", cfg);

  sla::ChannelCounts counts = sla::parameter_counts(model.config);
  std::cout << "pretrain: " << corpus.size() << " examples, "
            << counts.policy + counts.reward << " params, final loss "
            << (history.empty() ? 0.0 : history.back().loss) << ", wrote "
            << ckpt.string() << "\n";
  return 0;
}

int cmd_collect(const json& cfg) {
  fs::path root = output_root(cfg);
  const json& cc = cfg.at("collect");
  uint64_t seed = cfg.at("seed").get<uint64_t>();

  sla::TaskSpec task = sla::task_by_name(cfg.at("task").get<std::string>());
  sla::RewardTransformer model = load_model(cfg, root);
  std::vector<std::vector<int>> prompts =
      sample_prompts(task, cc.at("prompts").get<int>(), seed, "collect-prompts");

  sla::CollectConfig collect;
  collect.samples_per_prompt = cc.at("samples_per_prompt").get<int>();
  collect.temperature = cc.at("temperature").get<double>();
  collect.max_new_tokens = cc.at("max_new_tokens").get<int>();
  collect.workers = cc.at("workers").get<int>();
  collect.seed = sla::derive_seed(seed, "collect");

  std::vector<sla::PreferencePair> pairs =
      sla::collect_pairs(model, prompts, task.oracle, collect);
  fs::path out = resolve(root, cc.at("pairs_file").get<std::string>());
  sla::write_pairs_jsonl(out.string(), pairs);
  write_manifest(root, "collect", cfg);

  std::cout << "collect: " << pairs.size() << " pairs from " << prompts.size()
            << " prompts, wrote " << out.string() << "\n";
  return 0;
}

int cmd_train(const json& cfg) {
  fs::path root = output_root(cfg);
  const json& tc = cfg.at("train");
  sla::RewardTransformer model = load_model(cfg, root);
  std::vector<sla::PreferencePair> pairs =
      sla::read_pairs_jsonl(resolve(root, tc.at("pairs_file").get<std::string>()).string());
  sla::TrainConfig config = train_config(tc);

  if (config.mode == sla::TrainMode::freeze_policy) {
    std::vector<sla::LossRecord> history = sla::train_reward_channel(model, pairs, config);
    sla::write_loss_csv((root / "reward_loss.csv").string(), history);
    std::cout << "train: reward channel, " << pairs.size() << " pairs, final loss "
              << (history.empty() ? 0.0 : history.back().loss) << "\n";
  } else {
    sla::RewardTransformer reference = model.clone();
    sla::DpoResult result = sla::train_dpo(model, reference, pairs, config);
    sla::write_loss_csv((root / "dpo_loss.csv").string(), result.dpo_history);
    sla::write_loss_csv((root / "reward_loss.csv").string(), result.reward_history);
    std::cout << "train: dpo then reward channel, " << pairs.size()
              << " pairs, final dpo loss "
              << (result.dpo_history.empty() ? 0.0 : result.dpo_history.back().loss)
              << ", final reward loss "
              << (result.reward_history.empty() ? 0.0 : result.reward_history.back().loss)
              << "\n";
  }

  fs::path ckpt = resolve(root, tc.at("out_checkpoint").get<std::string>());
  sla::save_checkpoint(ckpt.string(), model);
  write_manifest(root, "train", cfg);
  std::cout << "train: wrote " << ckpt.string() << "\n";
  return 0;
}

int cmd_decode(const json& cfg) {
  fs::path root = output_root(cfg);
  uint64_t seed = cfg.at("seed").get<uint64_t>();

  sla::TaskSpec task = sla::task_by_name(cfg.at("task").get<std::string>());
  sla::RewardTransformer model = load_model(cfg, root);
  int count = cfg.at("decode").at("prompts").get<int>();
  std::vector<std::vector<int>> prompts = sample_prompts(task, count, seed, "decode-prompts");
  sla::DecodeParams base = decode_params(cfg);

  std::ofstream jsonl(root / "decodes.jsonl");
  std::ofstream plain(root / "responses.txt");
  if (!jsonl || !plain) throw sla::IoError("could not open decode outputs for writing");

  double oracle_sum = 0.0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    sla::DecodeParams p = base;
    p.seed = sla::derive_seed(seed, "decode", i);
    sla::Trajectory t = sla::decode(model, prompts[i], p);
    oracle_sum += task.oracle(t.prompt, t.response);

    json line{{"prompt", t.prompt},
              {"response", t.response},
              {"algorithm", sla::algorithm_name(p.algorithm)},
              {"params", params_json(p)},
              {"step_q", t.step_q},
              {"final_reward", t.final_reward}};
    jsonl << line.dump() << "\n";

    for (std::size_t j = 0; j < t.response.size(); ++j)
      plain << (j ? " " : "") << t.response[j];
    plain << "\n";
  }
  if (!jsonl || !plain) throw sla::IoError("failed while writing decode outputs");
  write_manifest(root, "decode", cfg);

  std::cout << "decode: " << prompts.size() << " prompts with "
            << sla::algorithm_name(base.algorithm) << ", mean oracle score "
            << (prompts.empty() ? 0.0 : oracle_sum / static_cast<double>(prompts.size()))
            << "\n";
  return 0;
}

int cmd_eval(const json& cfg) {
  fs::path root = output_root(cfg);
  const json& ec = cfg.at("eval");
  uint64_t seed = cfg.at("seed").get<uint64_t>();
  std::string mode = ec.at("mode").get<std::string>();

  sla::RewardTransformer model = load_model(cfg, root);

  if (mode == "tournament") {
    sla::TaskSpec task = sla::task_by_name(cfg.at("task").get<std::string>());
    std::vector<std::vector<int>> prompts =
        sample_prompts(task, ec.at("prompts").get<int>(), seed, "eval-prompts");
    sla::DecodeParams candidate = decode_params(cfg);
    sla::DecodeParams baseline = candidate;
    baseline.algorithm = sla::algorithm_from_name(ec.at("baseline").get<std::string>());

    sla::TournamentResult result = sla::run_tournament(
        model, prompts, candidate, baseline, task.oracle, ec.at("workers").get<int>());
    sla::write_tournament_csv((root / "tournament.csv").string(), result.outcomes);
    write_manifest(root, "eval", cfg);

    int wins = 0, ties = 0, losses = 0;
    for (const sla::MatchOutcome& o : result.outcomes) {
      if (o.verdict == sla::Verdict::win) ++wins;
      if (o.verdict == sla::Verdict::tie) ++ties;
      if (o.verdict == sla::Verdict::loss) ++losses;
    }
    std::cout << "eval: " << sla::config_label(candidate) << " vs "
              << sla::config_label(baseline) << " on " << prompts.size()
              << " prompts: win_rate " << result.win_rate << " (" << wins << "W/"
              << ties << "T/" << losses << "L)\n";
    return 0;
  }
  if (mode == "autrc") {
    std::vector<sla::PreferencePair> pairs =
        sla::read_pairs_jsonl(resolve(root, ec.at("pairs_file").get<std::string>()).string());
    sla::TRCurve curve = sla::autrc(model, pairs);
    sla::write_autrc_csv((root / "autrc.csv").string(), curve);
    write_manifest(root, "eval", cfg);
    std::cout << "eval: autrc " << curve.area << " over " << pairs.size() << " pairs\n";
    return 0;
  }
  throw UsageError(sla::cat("unknown eval.mode: ", mode, " (tournament|autrc)"));
}

int cmd_bench(const json& cfg) {
  fs::path root = output_root(cfg);
  uint64_t seed = cfg.at("seed").get<uint64_t>();

  sla::TaskSpec task = sla::task_by_name(cfg.at("task").get<std::string>());
  sla::RewardTransformer model = load_model(cfg, root);
  std::vector<std::vector<int>> prompts =
      sample_prompts(task, cfg.at("bench").at("prompts").get<int>(), seed, "bench-prompts");

  std::vector<sla::DecodeParams> configs{decode_params(cfg)};
  std::vector<sla::LatencyRow> rows = sla::benchmark_latency(model, prompts, configs);
  sla::write_latency_csv((root / "latency.csv").string(), rows);
  write_manifest(root, "bench", cfg);

  for (const sla::LatencyRow& r : rows)
    std::cout << "bench: " << r.config << " " << r.tokens_per_sec << " tok/s, ratio "
              << r.ratio_vs_greedy << ", forwards/token " << r.forwards_per_token
              << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Workbench for a joint policy/reward transformer: pretraining, "
               "preference collection, reward training, lookahead decoding, "
               "evaluation, and latency measurement."};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "JSON run configuration file");
  app.add_option("--set", sets,
                 "Override a config field by dotted path, e.g. --set decode.sla.depth=3");

  CLI::App* sub_pretrain =
      app.add_subcommand("pretrain", "Train the policy on task reference responses");
  CLI::App* sub_collect =
      app.add_subcommand("collect", "Sample responses and build preference pairs");
  CLI::App* sub_train =
      app.add_subcommand("train", "Train the reward channel (optionally DPO first)");
  CLI::App* sub_decode = app.add_subcommand("decode", "Decode prompts with one algorithm");
  CLI::App* sub_eval =
      app.add_subcommand("eval", "Tournament win rate or reward-curve area");
  CLI::App* sub_bench = app.add_subcommand("bench", "Wall-clock latency comparison");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    json cfg = build_config(config_path, sets);
    if (sub_pretrain->parsed()) return cmd_pretrain(cfg);
    if (sub_collect->parsed()) return cmd_collect(cfg);
    if (sub_train->parsed()) return cmd_train(cfg);
    if (sub_decode->parsed()) return cmd_decode(cfg);
    if (sub_eval->parsed()) return cmd_eval(cfg);
    if (sub_bench->parsed()) return cmd_bench(cfg);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
