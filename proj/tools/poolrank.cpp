// poolrank command-line interface.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "poolrank/config.hpp"
#include "poolrank/error.hpp"
#include "poolrank/pipeline.hpp"

namespace fs = std::filesystem;
using namespace poolrank;

namespace {

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    io::write_text(out_path, text);
  }
}

struct WhiteningFlags {
  bool pca = false;
  std::string mode;
  double epsilon = 1e-6;
  bool prenormalize = false;

  void add(CLI::App* cmd) {
    cmd->add_flag("--pca", pca, "PCA-whitening (rotate then scale) instead of per-dimension whitening");
    cmd->add_option("--whitening", mode, "none | plain | pca (overrides --pca)")
        ->check(CLI::IsMember({"none", "plain", "pca"}));
    cmd->add_option("--epsilon", epsilon, "variance clamp / eigenvalue regularizer")->check(CLI::PositiveNumber);
    cmd->add_flag("--prenormalize", prenormalize, "l2-normalize descriptors before whitening");
  }

  std::optional<WhiteningOptions> options() const {
    auto m = mode.empty() ? (pca ? WhiteningMode::pca : WhiteningMode::plain) : *parse_whitening_mode(mode);
    if (m == WhiteningMode::none) return std::nullopt;
    return WhiteningOptions{m == WhiteningMode::pca, epsilon, prenormalize};
  }
};

struct ClassifierFlags {
  std::string strategy = "avg";
  WhiteningFlags whitening;
  SgdHyperparams hyper;
  std::string vote_mode = "argmax";

  void add(CLI::App* cmd) {
    cmd->add_option("--strategy", strategy, "max | avg | hybrid")->check(CLI::IsMember({"max", "avg", "hybrid"}));
    whitening.add(cmd);
    cmd->add_option("--epochs", hyper.epochs, "SGD epochs");
    cmd->add_option("--lambda", hyper.lambda, "L2 regularization");
    cmd->add_option("--lr", hyper.lr0, "initial learning rate");
    cmd->add_option("--seed", hyper.seed, "shuffle seed");
    cmd->add_option("--vote-mode", vote_mode, "argmax | ovr-sign")->check(CLI::IsMember({"argmax", "ovr-sign"}));
  }

  ClassificationConfig config(std::size_t threads) const {
    ClassificationConfig c;
    c.strategy = *parse_strategy(strategy);
    c.whitening = whitening.options();
    c.hyper = hyper;
    c.vote_mode = *parse_vote_mode(vote_mode);
    c.threads = threads;
    return c;
  }
};

std::optional<WhiteningModel> maybe_model(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_model(path);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"poolrank: pooled convolutional descriptors for retrieval and scene classification"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "worker threads (default: POOLRANK_THREADS or hardware)");

  // validate
  auto* validate = app.add_subcommand("validate", "check a manifest and every tensor it references");
  std::string manifest_path;
  validate->add_option("--manifest", manifest_path)->required();

  // pool
  auto* pool_cmd = app.add_subcommand("pool", "pool every (image, view) stack into descriptor files");
  std::string strategy = "avg";
  std::string out_path;
  pool_cmd->add_option("--manifest", manifest_path)->required();
  pool_cmd->add_option("--strategy", strategy)->check(CLI::IsMember({"max", "avg", "hybrid"}));
  pool_cmd->add_option("--out", out_path, "output directory")->required();

  // fit-whitener
  auto* fit = app.add_subcommand("fit-whitener", "fit a whitening model on reference/train descriptors");
  std::string descriptors_dir;
  WhiteningFlags fit_flags;
  fit->add_option("--descriptors", descriptors_dir)->required();
  fit_flags.add(fit);
  fit->add_option("--out", out_path, "model file")->required();

  // index
  auto* index_cmd = app.add_subcommand("index", "build a rotation-aware retrieval index");
  std::string whitener_path;
  std::string rotations = "all";
  bool include_self = false;
  index_cmd->add_option("--descriptors", descriptors_dir)->required();
  index_cmd->add_option("--manifest", manifest_path)->required();
  index_cmd->add_option("--whitener", whitener_path, "whitening model applied before indexing");
  index_cmd->add_option("--rotations", rotations)->check(CLI::IsMember({"all", "rot0"}));
  index_cmd->add_flag("--include-self", include_self, "also index query images (sensitivity analysis)");
  index_cmd->add_option("--out", out_path, "index file")->required();

  // query
  auto* query_cmd = app.add_subcommand("query", "rank references for each query (TSV)");
  std::string index_path;
  std::string metric = "cosine";
  std::size_t topk = 10;
  query_cmd->add_option("--index", index_path)->required();
  query_cmd->add_option("--query-descriptors", descriptors_dir)->required();
  query_cmd->add_option("--whitener", whitener_path);
  query_cmd->add_option("--topk", topk);
  query_cmd->add_option("--metric", metric)->check(CLI::IsMember({"cosine", "euclidean"}));
  query_cmd->add_flag("--include-self", include_self);
  query_cmd->add_option("--out", out_path, "TSV file (default stdout)");

  // eval-map
  auto* eval_map = app.add_subcommand("eval-map", "per-query AP and mAP (TSV)");
  eval_map->add_option("--index", index_path)->required();
  eval_map->add_option("--queries", descriptors_dir)->required();
  eval_map->add_option("--whitener", whitener_path);
  eval_map->add_option("--metric", metric)->check(CLI::IsMember({"cosine", "euclidean"}));
  eval_map->add_flag("--include-self", include_self);
  eval_map->add_option("--out", out_path, "TSV file (default stdout)");

  // train
  auto* train_cmd = app.add_subcommand("train", "train the one-vs-rest linear classifier on one split");
  ClassifierFlags clf_flags;
  std::optional<int> split;
  train_cmd->add_option("--manifest", manifest_path)->required();
  clf_flags.add(train_cmd);
  train_cmd->add_option("--split", split, "split id (default: lowest)");
  train_cmd->add_option("--out", out_path, "classifier file")->required();

  // eval-classify
  auto* eval_cls = app.add_subcommand("eval-classify", "ten-crop evaluation (per-class accuracy TSV)");
  std::string clf_path;
  eval_cls->add_option("--manifest", manifest_path)->required();
  eval_cls->add_option("--clf", clf_path, "trained classifier; without it every split is trained and evaluated");
  clf_flags.add(eval_cls);
  eval_cls->add_option("--out", out_path, "TSV file (default stdout)");

  // run
  auto* run_cmd = app.add_subcommand("run", "end-to-end pipeline with a run report");
  std::string config_path;
  std::map<std::string, std::string> run_values;
  run_cmd->add_option("--config", config_path, "TOML-style run configuration");
  auto bind = [&](const char* flag, const char* key, const char* help) {
    run_cmd->add_option_function<std::string>(flag, [&run_values, key](const std::string& v) { run_values[key] = v; },
                                              help);
  };
  bind("--manifest", "run.manifest", "dataset manifest");
  bind("--out", "run.out", "output directory");
  bind("--seed", "run.seed", "seed for all randomized stages");
  bind("--strategy", "pooling.strategy", "max | avg | hybrid");
  bind("--whitening", "whitening.mode", "none | plain | pca");
  bind("--epsilon", "whitening.epsilon", "whitening epsilon");
  bind("--metric", "retrieval.metric", "cosine | euclidean");
  bind("--rotations", "retrieval.rotations", "all | rot0");
  bind("--epochs", "classify.epochs", "SGD epochs");
  bind("--lambda", "classify.lambda", "SGD regularization");
  bind("--lr", "classify.lr", "SGD learning rate");
  bind("--vote-mode", "classify.vote_mode", "argmax | ovr-sign");
  bool run_include_self = false;
  bool run_prenormalize = false;
  run_cmd->add_flag("--include-self", run_include_self);
  run_cmd->add_flag("--prenormalize", run_prenormalize);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  if (*validate) {
    auto manifest = load_manifest(manifest_path);
    std::cout << format_validation(validate_manifest(manifest, threads));
  } else if (*pool_cmd) {
    auto manifest = load_manifest(manifest_path);
    write_descriptor_set(pool_manifest(manifest, *parse_strategy(strategy), threads), out_path);
  } else if (*fit) {
    auto options = fit_flags.options();
    if (!options) throw Error(ErrorCode::invalid_argument, "fit-whitener needs plain or pca mode");
    auto model = fit_on_set(read_descriptor_set(descriptors_dir), *options);
    save_model(model, out_path);
    std::cout << "fitted " << model.identity() << " on " << model.fit_count << " descriptors, dim " << model.dim
              << "\n";
  } else if (*index_cmd) {
    auto model = maybe_model(whitener_path);
    auto index = index_set(read_descriptor_set(descriptors_dir), load_manifest(manifest_path),
                           model ? &*model : nullptr, {rotations == "all", include_self});
    save_index(index, out_path);
    std::cout << "indexed " << index.size() << " images, " << index.rows() << " descriptors, dim " << index.dim()
              << "\n";
  } else if (*query_cmd || *eval_map) {
    auto model = maybe_model(whitener_path);
    auto index = load_index(index_path);
    auto queries = prepare_queries(index, read_descriptor_set(descriptors_dir), model ? &*model : nullptr);
    QueryOptions options{*parse_metric(metric), !include_self};
    if (*query_cmd) {
      std::vector<Descriptor> ds;
      for (auto& q : queries) ds.push_back(std::move(q.descriptor));
      emit(format_rankings(query_batch(index, ds, options, threads), topk), out_path);
    } else {
      emit(format_ap(evaluate_map(index, queries, options, threads)), out_path);
    }
  } else if (*train_cmd) {
    auto config = clf_flags.config(threads);
    auto manifest = load_manifest(manifest_path);
    if (manifest.mode != ManifestMode::classification)
      throw Error(ErrorCode::bad_manifest, "train needs a classification manifest");
    int s = split.value_or(*manifest.splits().begin());
    auto set = pool_manifest(manifest, config.strategy, threads);
    save_classifier(train_bundle(manifest, set, s, config), out_path);
  } else if (*eval_cls) {
    auto manifest = load_manifest(manifest_path);
    if (manifest.mode != ManifestMode::classification)
      throw Error(ErrorCode::bad_manifest, "eval-classify needs a classification manifest");
    if (!clf_path.empty()) {
      auto bundle = load_classifier(clf_path);
      auto set = pool_manifest(manifest, bundle.strategy, threads);
      emit(format_split(evaluate_bundle(manifest, set, bundle, threads)), out_path);
    } else {
      auto config = clf_flags.config(threads);
      auto set = pool_manifest(manifest, config.strategy, threads);
      emit(format_report(evaluate_splits(manifest, crop_table(set), config)), out_path);
    }
  } else if (*run_cmd) {
    RunConfig config;
    config.threads = threads;
    if (!config_path.empty()) apply_config(config, parse_config_text(
                                                       [&] {
                                                         auto bytes = io::read_file(config_path);
                                                         return std::string(bytes.begin(), bytes.end());
                                                       }()));
    apply_config(config, run_values);
    if (run_include_self) config.include_self = true;
    if (run_prenormalize) config.prenormalize = true;
    if (threads != 0) config.threads = threads;
    auto report = run_pipeline(config);
    for (const auto& [name, value] : report.metrics) std::cout << name << "\t" << format_real(value, 6) << "\n";
    std::cout << "report\t" << report.report_path.string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const Error& e) {
    std::cerr << "poolrank: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "poolrank: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  }
}
