// clir: batch cross-lingual retrieval experiments.
//
//   clir align  --source-vectors S --target-vectors T --seed-dict D --out-map W
//   clir index  --collection C.jsonl --vectors T --out-dir IDX
//   clir run    --model tbt-qt --index IDX --topics Q.tsv ... --out RUN
//   clir eval   --run RUN --qrels QRELS
//
// Every subcommand accepts `--config FILE` with key=value lines naming the
// same long options; flags given on the command line take precedence.
//
// Exit codes: 0 success, 1 usage, 2 input format, 3 numeric/contract failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clir/error.hpp"
#include "clir/pipeline.hpp"

namespace {

// Expands `--config FILE` into `--key=value` arguments placed right after the
// subcommand, so explicit flags (which come later) override them.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  for (std::size_t i = 1; i < args.size(); ++i) {
    std::string path;
    std::size_t consumed = 0;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      consumed = 2;
    } else if (args[i].starts_with("--config=")) {
      path = args[i].substr(9);
      consumed = 1;
    } else {
      continue;
    }
    std::ifstream in(path);
    if (!in) throw clir::UsageError("cannot open config file '" + path + "'");
    std::vector<std::string> injected;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto first = line.find_first_not_of(" \t");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw clir::UsageError("config line " + std::to_string(line_no) + ": expected key=value");
      }
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      injected.push_back("--" + trim(line.substr(0, eq)) + "=" + trim(line.substr(eq + 1)));
    }
    args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + consumed));
    args.insert(args.begin() + 2, injected.begin(), injected.end());
    break;
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-lingual retrieval: align embedding spaces, index, rank, evaluate"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_file;

  // align
  clir::AlignConfig align;
  std::string align_metric = "cosine";
  auto* a = app.add_subcommand("align", "Fit an orthogonal map from source to target vectors");
  a->add_option("--config", config_file, "key=value config file");
  a->add_option("--source-vectors", align.source_vectors, "Source-language vectors (text format)")->required();
  a->add_option("--target-vectors", align.target_vectors, "Target-language vectors (text format)")->required();
  a->add_option("--source-lang", align.source_lang);
  a->add_option("--target-lang", align.target_lang);
  a->add_option("--seed-dict", align.seed_dict, "Seed translation pairs");
  a->add_option("--init-map", align.init_map, "Start from an existing map instead of a seed dictionary");
  a->add_option("--test-dict", align.test_dict, "Held-out pairs for precision@1/@5");
  a->add_option("--out-map", align.out_map, "Where to write the fitted map")->required();
  a->add_option("--aligned-out", align.aligned_out, "Also write projected source vectors");
  a->add_option("--max-vocab", align.max_vocab);
  a->add_option("--max-pairs", align.max_pairs, "Cap on mutual-NN pairs per refinement round");
  a->add_option("--metric", align_metric, "cosine or csls")->capture_default_str();
  a->add_option("--csls-n", align.metric.csls_n)->capture_default_str();
  a->add_option("--refine-iters", align.refine_iters)->capture_default_str();
  a->add_flag("--center", align.center, "Mean-center paired rows before fitting");
  a->add_option("--jobs", align.jobs)->capture_default_str();

  // index
  clir::IndexConfig index;
  auto* x = app.add_subcommand("index", "Build a collection index");
  x->add_option("--config", config_file, "key=value config file");
  x->add_option("--collection", index.collection, "JSONL collection with id and text fields")->required();
  x->add_option("--vectors", index.vectors, "Target vectors in the shared space");
  x->add_option("--lang", index.lang);
  x->add_option("--stopwords", index.stopwords);
  x->add_option("--out-dir", index.out_dir)->required();
  x->add_option("--max-vocab", index.max_vocab);
  x->add_option("--jobs", index.jobs)->capture_default_str();

  // run
  clir::RunConfig run;
  auto* r = app.add_subcommand("run", "Rank the collection for each topic");
  r->add_option("--config", config_file, "key=value config file");
  r->add_option("--model", run.model, std::string(clir::kModelNames))->capture_default_str();
  r->add_option("--index", run.index_dir);
  r->add_option("--topics", run.topics, "TSV: query_id, title, description");
  r->add_option("--source-vectors", run.source_vectors);
  r->add_option("--target-vectors", run.target_vectors);
  r->add_option("--map", run.map, "Alignment map applied to the source vectors");
  r->add_option("--source-stopwords", run.source_stopwords);
  r->add_option("--source-lang", run.source_lang);
  r->add_option("--target-lang", run.target_lang);
  r->add_option("--run1", run.run1, "Ensemble: first run (TbT-QT)");
  r->add_option("--run2", run.run2, "Ensemble: second run (BWE-Agg-IDF)");
  r->add_option("--mu", run.mu)->capture_default_str();
  r->add_option("--lambda", run.lambda)->capture_default_str();
  r->add_option("--depth", run.depth)->capture_default_str();
  r->add_option("--max-vocab", run.max_vocab);
  r->add_option("--run-tag", run.run_tag)->capture_default_str();
  r->add_option("--out", run.out)->required();
  r->add_option("--jobs", run.jobs)->capture_default_str();

  // eval
  clir::EvalConfig eval;
  auto* e = app.add_subcommand("eval", "Score a run against qrels");
  e->add_option("--config", config_file, "key=value config file");
  e->add_option("--run", eval.run)->required();
  e->add_option("--qrels", eval.qrels)->required();
  e->add_option("--out", eval.out, "Also write the metric table here");

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = expand_config(std::move(args));
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(reversed);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : static_cast<int>(clir::ErrorKind::usage);
  } catch (const clir::Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return err.exit_code();
  }

  try {
    if (*a) {
      align.metric.metric = clir::parse_metric(align_metric);
      std::cout << clir::cmd_align(align);
    } else if (*x) {
      std::cout << clir::cmd_index(index);
    } else if (*r) {
      std::cout << clir::cmd_run(run);
    } else if (*e) {
      std::string notes;
      std::cout << clir::cmd_eval(eval, &notes);
      std::cerr << notes;
    }
  } catch (const clir::Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return err.exit_code();
  } catch (const std::filesystem::filesystem_error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return static_cast<int>(clir::ErrorKind::input_format);
  }
  return 0;
}
