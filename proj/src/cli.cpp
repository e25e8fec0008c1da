#include "halluc/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "halluc/annotation_server.hpp"
#include "halluc/corpus.hpp"
#include "halluc/fdpo.hpp"
#include "halluc/metrics.hpp"
#include "halluc/reward.hpp"
#include "halluc/scorer.hpp"
#include "halluc/segmenter.hpp"
#include "halluc/random.hpp"
#include "halluc/selector.hpp"

namespace halluc::cli {

namespace {

using nlohmann::json;

/// A failure the user can fix by changing their input; maps to exit code 1.
class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CommandError("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_output(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw CommandError("cannot write " + path);
  file << text;
}

// Config files are JSON objects or `key = value` lines ('#' comments).
json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  const std::string text = read_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      throw CommandError(path + ": " + e.what());
    }
  }
  json doc = json::object();
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) {
        throw CommandError(path + ": expected key=value, got \"" + line + "\"");
      }
      continue;
    }
    const auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      std::size_t used = 0;
      const double number = std::stod(value, &used);
      if (used == value.size()) {
        doc[key] = number;
        continue;
      }
    } catch (const std::exception&) {
    }
    doc[key] = value;
  }
  return doc;
}

template <typename T>
T config_value(const json& config, const char* key, T fallback) {
  if (!config.contains(key)) return fallback;
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      const double v = config[key].get<double>();
      if (v < 0 || v != std::floor(v)) throw CommandError(std::string("config \"") + key + "\" must be a non-negative integer");
      return static_cast<T>(v);
    } else {
      return config[key].get<T>();
    }
  } catch (const json::exception&) {
    throw CommandError(std::string("config \"") + key + "\" has the wrong type");
  }
}

Density parse_density(const std::string& text) {
  if (text == "sentence") return Density::Sentence;
  if (text == "segment") return Density::Segment;
  throw CommandError("density must be sentence or segment");
}

Granularity parse_granularity(const std::string& text) {
  if (text == "binary") return Granularity::Binary;
  if (text == "ternary") return Granularity::Ternary;
  throw CommandError("granularity must be binary or ternary");
}

Corpus split_of(const Corpus& corpus, Split split) {
  Corpus out;
  std::copy_if(corpus.begin(), corpus.end(), std::back_inserter(out),
               [split](const auto& r) { return r.split == split; });
  return out;
}

std::string format_double(double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.17g", v);
  return buffer;
}

void print_issues(const IngestError& e, std::ostream& out) {
  for (const auto& issue : e.issues()) {
    out << "line " << issue.line;
    if (!issue.id.empty()) out << " id=" << issue.id;
    out << ": " << to_string(issue.violation.kind) << ": " << issue.violation.message << '\n';
  }
}

struct RmOptions {
  std::string corpus;
  std::string config;
  std::string density;
  std::string granularity;
  std::string model;
  std::string output;
  std::string split = "val";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> learning_rate;
};

RmConfig rm_config(const RmOptions& o, const json& config) {
  RmConfig cfg;
  cfg.density = parse_density(o.density.empty() ? config_value<std::string>(config, "density", "sentence")
                                                : o.density);
  cfg.granularity = parse_granularity(
      o.granularity.empty() ? config_value<std::string>(config, "granularity", "binary") : o.granularity);
  cfg.epochs = o.epochs.value_or(config_value<std::size_t>(config, "epochs", cfg.epochs));
  cfg.learning_rate = o.learning_rate.value_or(config_value<double>(config, "learning_rate", cfg.learning_rate));
  cfg.batch_size = config_value<std::size_t>(config, "batch_size", cfg.batch_size);
  cfg.seed = o.seed.value_or(config_value<std::uint64_t>(config, "seed", cfg.seed));
  return cfg;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fine-grained hallucination toolkit: corpora, reward models, FDPO, rejection sampling"};
  app.name("halluc");
  app.require_subcommand(1);
  std::function<int()> action;

  // validate
  std::string validate_path;
  auto* validate_cmd = app.add_subcommand("validate", "Check a span-annotated corpus");
  validate_cmd->add_option("corpus", validate_path, "Corpus JSONL")->required();
  validate_cmd->callback([&] {
    action = [&] {
      try {
        ingest(validate_path);
      } catch (const IngestError& e) {
        print_issues(e, out);
        return kExitFailure;
      }
      return kExitOk;
    };
  });

  // stats
  std::string stats_path, stats_format = "csv", stats_output;
  auto* stats_cmd = app.add_subcommand("stats", "Corpus statistics and Inaccurate density histogram");
  stats_cmd->add_option("corpus", stats_path, "Corpus JSONL")->required();
  stats_cmd->add_option("--out", stats_format, "Output format")->check(CLI::IsMember({"csv", "json"}));
  stats_cmd->add_option("-o,--output", stats_output, "Write to a file instead of stdout");
  stats_cmd->callback([&] {
    action = [&] {
      const auto s = stats(ingest(stats_path));
      if (stats_format == "csv") {
        write_output(stats_output, stats_csv(s), out);
      } else {
        nlohmann::ordered_json doc;
        doc["records_train"] = s.train_records;
        doc["records_val"] = s.val_records;
        doc["characters_total"] = s.total_characters;
        doc["characters_implicit_accurate"] = s.implicit_accurate_characters;
        for (std::size_t l = 0; l < kLabelCount; ++l) {
          const std::string name(to_string(static_cast<Label>(l)));
          doc["characters"][name] = s.label_characters[l];
          doc["spans"][name] = s.label_spans[l];
        }
        doc["sentences"] = s.sentences;
        doc["inaccurate_density"] = s.inaccurate_density;
        write_output(stats_output, doc.dump(2) + "\n", out);
      }
      return kExitOk;
    };
  });

  // condense
  std::string condense_path, condense_output;
  auto* condense_cmd = app.add_subcommand("condense", "Emit sentence-level labels");
  condense_cmd->add_option("corpus", condense_path, "Corpus JSONL")->required();
  condense_cmd->add_option("-o,--output", condense_output, "Write to a file instead of stdout");
  condense_cmd->callback([&] {
    action = [&] {
      std::string text;
      for (const auto& record : ingest(condense_path)) {
        text += export_condensed(record);
        text += '\n';
      }
      write_output(condense_output, text, out);
      return kExitOk;
    };
  });

  // train-rm
  RmOptions train_rm_opts;
  std::optional<std::size_t> rm_dim;
  auto* train_rm_cmd = app.add_subcommand("train-rm", "Train a reward model on the train split");
  train_rm_cmd->add_option("corpus", train_rm_opts.corpus, "Corpus JSONL")->required();
  train_rm_cmd->add_option("--density", train_rm_opts.density)->check(CLI::IsMember({"sentence", "segment"}));
  train_rm_cmd->add_option("--granularity", train_rm_opts.granularity)->check(CLI::IsMember({"binary", "ternary"}));
  train_rm_cmd->add_option("--config", train_rm_opts.config, "JSON or key=value config file");
  train_rm_cmd->add_option("--out", train_rm_opts.output, "Checkpoint path")->required();
  train_rm_cmd->add_option("--seed", train_rm_opts.seed);
  train_rm_cmd->add_option("--epochs", train_rm_opts.epochs);
  train_rm_cmd->add_option("--lr", train_rm_opts.learning_rate);
  train_rm_cmd->add_option("--dim", rm_dim);
  train_rm_cmd->callback([&] {
    action = [&] {
      const json config = read_config(train_rm_opts.config);
      const RmConfig cfg = rm_config(train_rm_opts, config);
      const Corpus train = split_of(ingest(train_rm_opts.corpus), Split::Train);
      if (train.empty()) throw CommandError("corpus has no train records");
      ScorerConfig sc;
      sc.dim = rm_dim.value_or(config_value<std::size_t>(config, "dim", sc.dim));
      sc.decay = config_value<double>(config, "decay", sc.decay);
      sc.classes = class_count(cfg.granularity);
      sc.seed = cfg.seed;
      Scorer model(Vocabulary::build(train), sc);
      auto result = train_rm(std::move(model), train, cfg);
      result.model.save(train_rm_opts.output);
      nlohmann::ordered_json doc;
      doc["density"] = to_string(cfg.density);
      doc["granularity"] = to_string(cfg.granularity);
      doc["initial_loss"] = result.initial_loss;
      doc["epoch_loss"] = result.epoch_loss;
      out << doc.dump() << '\n';
      return kExitOk;
    };
  });

  // eval-rm
  RmOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("eval-rm", "Accuracy, macro-F1 and confusion matrix");
  eval_cmd->add_option("corpus", eval_opts.corpus, "Corpus JSONL")->required();
  eval_cmd->add_option("--model", eval_opts.model, "Checkpoint")->required();
  eval_cmd->add_option("--density", eval_opts.density)->check(CLI::IsMember({"sentence", "segment"}));
  eval_cmd->add_option("--config", eval_opts.config);
  eval_cmd->add_option("--split", eval_opts.split)->check(CLI::IsMember({"train", "val"}));
  eval_cmd->callback([&] {
    action = [&] {
      const Scorer model = Scorer::load(eval_opts.model);
      RmConfig cfg = rm_config(eval_opts, read_config(eval_opts.config));
      cfg.granularity = granularity_of(model);
      const Corpus data = split_of(ingest(eval_opts.corpus), *parse_split(eval_opts.split));
      const auto m = eval_rm(model, data, cfg);
      nlohmann::ordered_json doc;
      doc["accuracy"] = m.accuracy;
      doc["macro_f1"] = m.macro_f1;
      doc["per_class_f1"] = m.per_class_f1;
      doc["confusion"] = m.confusion;
      doc["total"] = m.total;
      if (cfg.granularity == Granularity::Ternary) {
        const auto merged = metrics_from_confusion(reduce_ternary_to_binary(m.confusion));
        doc["binary_from_ternary"] = {{"accuracy", merged.accuracy},
                                      {"macro_f1", merged.macro_f1},
                                      {"confusion", merged.confusion}};
      }
      out << doc.dump() << '\n';
      return kExitOk;
    };
  });

  // train-fdpo
  std::string fdpo_corpus, fdpo_mode, fdpo_config, fdpo_model, fdpo_output;
  std::optional<std::uint64_t> fdpo_seed;
  std::optional<double> fdpo_lr, fdpo_beta;
  std::optional<std::size_t> fdpo_epochs;
  auto* fdpo_cmd = app.add_subcommand("train-fdpo", "Fine-grained preference optimization on the train split");
  fdpo_cmd->add_option("corpus", fdpo_corpus, "Corpus JSONL")->required();
  fdpo_cmd->add_option("--mode", fdpo_mode, "ia: ignore Analysis, da: disprefer Analysis")
      ->check(CLI::IsMember({"ia", "da"}));
  fdpo_cmd->add_option("--config", fdpo_config, "JSON or key=value config file");
  fdpo_cmd->add_option("--model", fdpo_model, "Initial policy checkpoint (fresh scorer if omitted)");
  fdpo_cmd->add_option("--out", fdpo_output, "Policy checkpoint path")->required();
  fdpo_cmd->add_option("--seed", fdpo_seed);
  fdpo_cmd->add_option("--lr", fdpo_lr);
  fdpo_cmd->add_option("--beta", fdpo_beta);
  fdpo_cmd->add_option("--epochs", fdpo_epochs);
  fdpo_cmd->callback([&] {
    action = [&] {
      const json config = read_config(fdpo_config);
      FdpoConfig cfg;
      cfg.beta = fdpo_beta.value_or(config_value<double>(config, "beta", cfg.beta));
      cfg.epochs = fdpo_epochs.value_or(config_value<std::size_t>(config, "epochs", cfg.epochs));
      cfg.learning_rate = fdpo_lr.value_or(config_value<double>(config, "learning_rate", cfg.learning_rate));
      cfg.warmup_ratio = config_value<double>(config, "warmup_ratio", cfg.warmup_ratio);
      cfg.batch_size = config_value<std::size_t>(config, "batch_size", cfg.batch_size);
      cfg.seed = fdpo_seed.value_or(config_value<std::uint64_t>(config, "seed", cfg.seed));
      try {
        cfg.validate();
      } catch (const std::invalid_argument& e) {
        throw CommandError(e.what());
      }
      const std::string mode_text =
          fdpo_mode.empty() ? config_value<std::string>(config, "mode", "ia") : fdpo_mode;
      const auto mode = parse_analysis_mode(mode_text);
      if (!mode) throw CommandError("mode must be ia or da");
      const ClassMap map{*mode};

      const Corpus train = split_of(ingest(fdpo_corpus), Split::Train);
      if (train.empty()) throw CommandError("corpus has no train records");
      auto make_policy = [&] {
        if (!fdpo_model.empty()) return Scorer::load(fdpo_model);
        ScorerConfig sc;
        sc.dim = config_value<std::size_t>(config, "dim", sc.dim);
        sc.decay = config_value<double>(config, "decay", sc.decay);
        sc.seed = cfg.seed;
        return Scorer(Vocabulary::build(train), sc);
      };
      const Scorer reference = make_policy();
      auto result = train_fdpo(reference, reference, train, map, cfg);
      result.policy.save(fdpo_output);

      double r_pref = 0.0, r_dispref = 0.0;
      std::size_t n_pref = 0, n_dispref = 0;
      for (const auto& record : train) {
        const auto seq = make_fdpo_sequence(record, reference.vocab(), map);
        const auto r = segment_rewards(result.policy, reference, seq);
        for (std::size_t k = 0; k < r.size(); ++k) {
          if (seq.segments[k].cls == PreferenceClass::Preferred) {
            r_pref += r[k];
            ++n_pref;
          } else if (seq.segments[k].cls == PreferenceClass::Dispreferred) {
            r_dispref += r[k];
            ++n_dispref;
          }
        }
      }
      nlohmann::ordered_json doc;
      doc["mode"] = to_string(*mode);
      doc["epoch_loss"] = result.epoch_loss;
      doc["steps"] = result.steps;
      doc["updates"] = result.updates;
      doc["mean_reward_preferred"] = n_pref ? r_pref / static_cast<double>(n_pref) : 0.0;
      doc["mean_reward_dispreferred"] = n_dispref ? r_dispref / static_cast<double>(n_dispref) : 0.0;
      out << doc.dump() << '\n';
      return kExitOk;
    };
  });

  // score
  std::string score_path, score_model, score_output;
  auto* score_cmd = app.add_subcommand("score", "Passage reward scores for candidate generations");
  score_cmd->add_option("generations", score_path, "JSONL of {prompt_id, candidate_id, prompt, response}")
      ->required();
  score_cmd->add_option("--model", score_model, "Sentence-density reward model checkpoint")->required();
  score_cmd->add_option("-o,--output", score_output, "Write to a file instead of stdout");
  score_cmd->callback([&] {
    action = [&] {
      const Scorer model = Scorer::load(score_model);
      const auto generations = parse_generations(read_file(score_path));
      const auto sets = score_external(generations, model);
      write_output(score_output, score_report(sets), out);
      return kExitOk;
    };
  });

  // select
  std::string select_path, select_mode = "best", select_output;
  std::size_t select_n = 1;
  std::uint64_t select_seed = 0;
  auto* select_cmd = app.add_subcommand("select", "Best-of-n / worst-of-n rejection sampling");
  select_cmd->add_option("scores", select_path, "Score report JSONL")->required();
  select_cmd->add_option("--n", select_n, "Subset size")->required();
  select_cmd->add_option("--mode", select_mode)->check(CLI::IsMember({"best", "worst"}));
  select_cmd->add_option("--seed", select_seed);
  select_cmd->add_option("-o,--output", select_output, "Write to a file instead of stdout");
  select_cmd->callback([&] {
    action = [&] {
      const auto sets = parse_score_report(read_file(select_path));
      const SelectMode mode = *parse_select_mode(select_mode);
      std::string text;
      for (std::size_t i = 0; i < sets.size(); ++i) {
        const auto& chosen = select(sets[i], select_n, mode, mix_seed(select_seed, i));
        text += selection_report_line(sets[i].prompt_id, select_n, mode, chosen);
        text += '\n';
      }
      write_output(select_output, text, out);
      return kExitOk;
    };
  });

  // curve
  std::string curve_path, curve_grid = "1,4,16,64", curve_output, curve_mode = "best";
  std::size_t curve_draws = 100;
  std::uint64_t curve_seed = 0;
  bool curve_detail = false;
  auto* curve_cmd = app.add_subcommand("curve", "Mean and variance of the selected score versus n");
  curve_cmd->add_option("scores", curve_path, "Score report JSONL")->required();
  curve_cmd->add_option("--grid", curve_grid, "Comma-separated subset sizes");
  curve_cmd->add_option("--draws", curve_draws, "Resampling draws per prompt");
  curve_cmd->add_option("--mode", curve_mode)->check(CLI::IsMember({"best", "worst"}));
  curve_cmd->add_option("--seed", curve_seed);
  curve_cmd->add_flag("--variance-detail", curve_detail, "Also report across-prompt and across-draw variance");
  curve_cmd->add_option("-o,--output", curve_output, "Write to a file instead of stdout");
  curve_cmd->callback([&] {
    action = [&] {
      std::vector<std::size_t> grid;
      std::stringstream items(curve_grid);
      std::string item;
      while (std::getline(items, item, ',')) {
        try {
          grid.push_back(std::stoul(item));
        } catch (const std::exception&) {
          throw CommandError("bad grid value \"" + item + "\"");
        }
      }
      const auto sets = parse_score_report(read_file(curve_path));
      const auto c = curve(sets, grid, curve_draws, curve_seed, *parse_select_mode(curve_mode));
      write_output(curve_output, curve_csv(c, curve_detail), out);
      return kExitOk;
    };
  });

  // rate
  std::string rate_path, rate_scores, rate_output;
  auto* rate_cmd = app.add_subcommand("rate", "Word-level hallucination rate per record");
  rate_cmd->add_option("corpus", rate_path, "Human-annotated corpus JSONL")->required();
  rate_cmd->add_option("--scores", rate_scores,
                       "Score report to join on id; emits id,reward_score,human_score");
  rate_cmd->add_option("-o,--output", rate_output, "Write to a file instead of stdout");
  rate_cmd->callback([&] {
    action = [&] {
      const Corpus corpus = ingest(rate_path);
      if (rate_scores.empty()) {
        std::string text = "id,hallucination_rate,human_score\n";
        double sum = 0.0;
        for (const auto& record : corpus) {
          const double rate = hallucination_rate(record);
          sum += rate;
          text += record.id + "," + format_double(rate) + "," + format_double(1.0 - rate) + "\n";
        }
        write_output(rate_output, text, out);
        if (!corpus.empty() && !rate_output.empty()) {
          out << "mean_hallucination_rate," << format_double(sum / static_cast<double>(corpus.size()))
              << '\n';
        }
        return kExitOk;
      }
      std::map<std::string, double> scores;
      for (const auto& set : parse_score_report(read_file(rate_scores))) {
        for (const auto& c : set.candidates) scores[c.id] = c.score.passage;
      }
      std::vector<EvalRecord> records;
      for (const auto& record : corpus) {
        auto it = scores.find(record.id);
        if (it == scores.end()) throw CommandError("no reward score for record \"" + record.id + "\"");
        records.push_back(make_eval_record(record, it->second));
      }
      write_output(rate_output, correlation_csv(records), out);
      return kExitOk;
    };
  });

  // correlate
  std::string correlate_path, correlate_points;
  auto* correlate_cmd = app.add_subcommand("correlate", "Pearson r between reward and human scores");
  correlate_cmd->add_option("csv", correlate_path, "CSV with id,reward_score,human_score")->required();
  correlate_cmd->add_option("--points", correlate_points, "Write the paired points as CSV");
  correlate_cmd->callback([&] {
    action = [&] {
      std::vector<EvalRecord> records;
      try {
        records = parse_correlation_csv(read_file(correlate_path));
      } catch (const std::invalid_argument& e) {
        throw CommandError(e.what());
      }
      if (!correlate_points.empty()) write_output(correlate_points, correlation_csv(records), out);
      const auto r = correlate(records);
      out << "n," << records.size() << '\n';
      if (!r) {
        out << "pearson_r,undefined\n";
        err << "correlation undefined: fewer than two points or zero variance\n";
        return kExitFailure;
      }
      out << "pearson_r," << format_double(*r) << '\n';
      return kExitOk;
    };
  });

  // serve
  std::string serve_tasks, serve_out, serve_host = "127.0.0.1", serve_static;
  int serve_port = 8080;
  std::size_t serve_responses = 4;
  auto* serve_cmd = app.add_subcommand("serve", "Annotation backend for the labeling workbench");
  serve_cmd->add_option("--tasks", serve_tasks, "Tasks JSONL")->required();
  serve_cmd->add_option("--out", serve_out, "Annotation output JSONL")->required();
  serve_cmd->add_option("--port", serve_port);
  serve_cmd->add_option("--host", serve_host);
  serve_cmd->add_option("--static", serve_static, "Directory of UI assets served at /");
  serve_cmd->add_option("--responses", serve_responses, "Responses per task");
  serve_cmd->callback([&] {
    action = [&] {
      std::vector<TaskRecord> tasks;
      try {
        tasks = parse_tasks(read_file(serve_tasks), serve_responses);
      } catch (const TaskFileError& e) {
        throw CommandError(e.what());
      }
      AnnotationService service(std::move(tasks), serve_out);
      httplib::Server server;
      std::optional<std::filesystem::path> static_dir;
      if (!serve_static.empty()) static_dir = serve_static;
      register_routes(server, service, static_dir);
      err << "serving on http://" << serve_host << ':' << serve_port << '\n';
      if (!server.listen(serve_host, serve_port)) {
        throw CommandError("cannot listen on " + serve_host + ":" + std::to_string(serve_port));
      }
      return kExitOk;
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    const CLI::App* failing = &app;
    for (auto* sub : app.get_subcommands()) failing = sub;
    err << failing->help();
    return kExitUsage;
  }

  if (!action) return kExitUsage;
  try {
    return action();
  } catch (const IngestError& e) {
    print_issues(e, err);
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace halluc::cli
