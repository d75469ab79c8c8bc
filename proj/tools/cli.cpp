#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>

#include "malfuse/config.hpp"
#include "malfuse/error.hpp"
#include "malfuse/gradcheck_suite.hpp"
#include "malfuse/io.hpp"
#include "malfuse/pipeline.hpp"
#include "malfuse/synth.hpp"

namespace malfuse::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::map<std::string, std::string> overrides;
  std::string work = ".";
  std::string manifest;
  std::string out;
  bool random_init = false;
  nn::Index divisor = 32;
};

const std::vector<std::pair<std::string, std::string>>& descriptions() {
  static const std::vector<std::pair<std::string, std::string>> d{
      {"ingest", "Index a BIG-2015 style corpus (<id>.bytes, <id>.asm, trainLabels.csv) into a manifest"},
      {"synth", "Generate a synthetic nine-family corpus and its manifest"},
      {"featurize", "Split the corpus, build byte images, the TRAIN vocabulary and the opcode TF table"},
      {"train-cnn", "Train the five-layer CNN on byte images and write its class probabilities"},
      {"pretrain-cae", "Train the two stacked convolutional autoencoders on TRAIN images"},
      {"train-pretrained-cnn", "Fine-tune the CNN initialized from the autoencoder encoders"},
      {"baseline-svm", "Train linear and RBF one-vs-rest SVMs on the opcode TF table"},
      {"baseline-mlp", "Train the pixel MLP baseline"},
      {"select", "Wrapper forward/backward opcode selection scored on VAL"},
      {"fuse", "Concatenate both CNN probability blocks with the selected opcodes"},
      {"train-mlp", "Train the fusion MLP on the hybrid table"},
      {"evaluate", "TEST log loss, accuracy and confusion matrix of every trained model"},
      {"run-all", "Run the whole flow for several seeds and write the experiment report"},
      {"gradcheck", "Finite-difference gradient checks for every layer kind and network"},
  };
  return d;
}

/// Files each work-directory stage writes.
const std::map<std::string, std::vector<const char*>>& stage_outputs() {
  using namespace layout;
  static const std::map<std::string, std::vector<const char*>> m{
      {"featurize", {kSplit, kImages, kVocabulary, kTf}},
      {"train-cnn", {kCnn, kCnnLog, kCnnProbs}},
      {"pretrain-cae", {kCae1, kCae2, kCaeLog}},
      {"train-pretrained-cnn", {kPretrained, kPretrainedLog, kPretrainedProbs}},
      {"baseline-svm", {kSvmLinearProbs, kSvmRbfProbs, kSvmRbfModel}},
      {"baseline-mlp", {kMlp, kMlpLog, kMlpProbs}},
      {"select", {kTrace, kSubset}},
      {"fuse", {kHybrid, kHybridNorm}},
      {"train-mlp", {kFusion, kFusionLog, kFusionProbs}},
      {"evaluate", {kEvaluation, kConfusion}},
  };
  return m;
}

void print_manifest(std::ostream& out, const std::vector<fs::path>& paths) {
  for (const auto& p : paths) out << "wrote " << p.string() << "\n";
}

void write_fingerprint(const ExperimentConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  io::write_lines(dir / layout::kFingerprint, {config_fingerprint(c), std::to_string(c.seed)});
}

int run_stage_command(const std::string& name, const Options& o, const ExperimentConfig& config, std::ostream& out) {
  const fs::path work = o.work;
  fs::create_directories(work);
  AccessLog log;
  const fs::path log_path = work / layout::kAccessLog;
  if (fs::exists(log_path)) log = read_access_log(log_path);
  StageContext ctx{config, work, o.manifest, config.seed, &log, &out};
  if (name == "featurize") {
    stage_split(ctx);
    stage_featurize(ctx);
  } else if (name == "train-cnn") {
    stage_train_cnn(ctx);
  } else if (name == "pretrain-cae") {
    stage_pretrain_cae(ctx);
  } else if (name == "train-pretrained-cnn") {
    stage_train_pretrained_cnn(ctx, o.random_init);
  } else if (name == "baseline-svm") {
    stage_baseline_svm(ctx);
  } else if (name == "baseline-mlp") {
    stage_baseline_mlp(ctx);
  } else if (name == "select") {
    stage_select(ctx);
  } else if (name == "fuse") {
    stage_fuse(ctx);
  } else if (name == "train-mlp") {
    stage_train_fusion_mlp(ctx);
  } else if (name == "evaluate") {
    stage_evaluate(ctx);
  }
  write_access_log(log, log_path);
  write_fingerprint(config, work);
  std::vector<fs::path> written;
  if (name == "train-pretrained-cnn" && o.random_init)
    written = {work / layout::kRandomInit, work / layout::kRandomInitLog};
  else
    for (const char* f : stage_outputs().at(name)) written.push_back(work / f);
  written.push_back(work / layout::kAccessLog);
  written.push_back(work / layout::kFingerprint);
  print_manifest(out, written);
  return 0;
}

/// First token that is not an option or an option's value.
std::string first_command(const std::vector<std::string>& args) {
  static const std::set<std::string> takes_value{"--config", "-c", "--set"};
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& a = args[i];
    if (a.rfind("-", 0) == 0) {
      if (takes_value.count(a) && a.find('=') == std::string::npos) ++i;
      continue;
    }
    return a;
  }
  return {};
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [k, v] : descriptions()) n.push_back(k);
    return n;
  }();
  return names;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Malware family classification from byte images and opcode features", "malfuse"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("-c,--config", o.config, "Key-value config file ([section] headers, key = value)")->type_name("FILE");
  app.add_option("--set", o.sets, "Override a config key, e.g. --set cnn.epochs=5 (repeatable)")->type_name("KEY=VALUE");

  std::map<std::string, CLI::App*> sub;
  for (const auto& [name, text] : descriptions()) sub[name] = app.add_subcommand(name, text);

  std::string data_root;
  sub["ingest"]->add_option("--data-root", data_root, "Corpus directory (or set MALFUSE_DATA_ROOT)")->type_name("DIR");
  sub["ingest"]->add_option("--out", o.out, "Directory for manifest.tsv")->type_name("DIR")->required();

  std::string seed, runs, families, per_family;
  sub["synth"]->add_option("--families", families, "Number of families (2..9)")->type_name("N");
  sub["synth"]->add_option("--per-family", per_family, "Samples per family")->type_name("N");
  sub["synth"]->add_option("--seed", seed, "Corpus seed")->type_name("N");
  sub["synth"]->add_option("--out", o.out, "Output directory for the corpus and manifest.tsv")->type_name("DIR")->required();

  for (const auto& [name, outputs] : stage_outputs()) {
    auto* s = sub[name];
    s->add_option("--work", o.work, "Work directory holding this stage's inputs and outputs")
        ->type_name("DIR")
        ->capture_default_str();
    s->add_option("--manifest", o.manifest, "Corpus manifest (default <work>/manifest.tsv)")->type_name("FILE");
    if (name == "featurize" || name.rfind("train-", 0) == 0 || name == "pretrain-cae" || name == "baseline-mlp")
      s->add_option("--seed", seed, "Seed for the split, initialization and batch order")->type_name("N");
  }
  sub["train-pretrained-cnn"]->add_flag("--random-init", o.random_init,
                                        "Train the same architecture from random weights instead");

  sub["run-all"]->add_option("--out", o.out, "Output root for all runs and reports")->type_name("DIR");
  sub["run-all"]->add_option("--runs", runs, "Number of independent runs")->type_name("N");
  sub["run-all"]->add_option("--seed", seed, "Seed of the first run")->type_name("N");
  sub["run-all"]->add_option("--data-root", data_root, "BIG-2015 corpus directory (omit to synthesize)")->type_name("DIR");

  sub["gradcheck"]->add_option("--divisor", o.divisor, "Divide network widths by this factor")->type_name("N")->capture_default_str();
  sub["gradcheck"]->add_option("--seed", seed, "Initialization seed")->type_name("N");

  const std::string cmd = first_command(args);
  if (!cmd.empty() && !sub.count(cmd)) {
    const Error e(ErrorKind::UnknownSubcommand, "'" + cmd + "' (try --help)");
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  }

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    const auto parsed = app.get_subcommands();
    if (parsed.empty())
      out << app.help("", CLI::AppFormatMode::All);
    else
      out << parsed.front()->help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << to_string(ErrorKind::ConfigError) << ": " << e.what() << "\n";
    return exit_code_for(ErrorKind::ConfigError);
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    for (const auto& s : o.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos)
        throw Error(ErrorKind::ConfigError, "--set expects KEY=VALUE, got '" + s + "'");
      o.overrides[s.substr(0, eq)] = s.substr(eq + 1);
    }
    if (!seed.empty()) o.overrides["general.seed"] = seed;
    if (!runs.empty()) o.overrides["general.runs"] = runs;
    if (!data_root.empty()) o.overrides["general.data_root"] = data_root;
    if (!families.empty()) o.overrides["synth.families"] = families;
    if (!per_family.empty()) o.overrides["synth.per_family"] = per_family;
    if (name == "run-all" && !o.out.empty()) o.overrides["general.output_root"] = o.out;
    const auto config = load_config(o.config, o.overrides);

    if (name == "ingest") {
      if (config.data_root.empty())
        throw Error(ErrorKind::ConfigError, "key 'general.data_root': ingest needs --data-root or MALFUSE_DATA_ROOT");
      const fs::path manifest = fs::path(o.out) / layout::kManifest;
      const auto m = stage_corpus(config, {}, manifest);
      write_fingerprint(config, o.out);
      out << "ingested " << m.samples.size() << " samples\n";
      print_manifest(out, {manifest, fs::path(o.out) / layout::kFingerprint});
    } else if (name == "synth") {
      ExperimentConfig c = config;
      c.data_root.clear();
      const fs::path manifest = fs::path(o.out) / layout::kManifest;
      const auto m = stage_corpus(c, o.out, manifest);
      out << "generated " << m.samples.size() << " samples in " << o.out << "\n";
      print_manifest(out, {manifest, fs::path(o.out) / "trainLabels.csv"});
    } else if (name == "run-all") {
      const auto report = run_experiment(config, &out);
      write_report_text(report, out);
      const fs::path root = config.output_root;
      print_manifest(out, {root / "report.txt", root / "runs.csv", root / "summary.csv", root / layout::kConfusion,
                           root / layout::kFingerprint});
    } else if (name == "gradcheck") {
      const auto outcomes = run_gradcheck_suite(o.divisor, config.seed, &out);
      const auto failed = std::count_if(outcomes.begin(), outcomes.end(), [](const auto& x) { return !x.passed(); });
      if (failed) throw Error(ErrorKind::StageError, std::to_string(failed) + " gradient check(s) failed");
      out << "all " << outcomes.size() << " gradient checks passed\n";
    } else {
      return run_stage_command(name, o, config, out);
    }
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << to_string(ErrorKind::StageError) << ": " << e.what() << "\n";
    return exit_code_for(ErrorKind::StageError);
  }
}

}  // namespace malfuse::cli
