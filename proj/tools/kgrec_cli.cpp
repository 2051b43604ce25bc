#include "CLI11.hpp"
#include "kgrec/kgrec.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace kgrec;

namespace {

struct Shared {
  std::string data;
  std::string out;
  std::uint64_t seed = 0;
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  bool deterministic = false;
  std::string config;
};

struct TrainFlags {
  std::string mode = "kmpn";
  std::optional<Index> epochs;
  std::optional<Index> batch_size;
  double lr = 1e-3;
  double lr_end = 0.0;
  Index hidden = 64;
  Index layers = 3;
  Index n_pref = 8;
  Index n_meta = 64;
  LossWeights weights;
  std::string content_items;
  std::string content_users;
  Index buckets = 4096;
  Index history = 8;
  Index negatives = 4;
};

struct EvalFlags {
  std::string split = "test";
  std::vector<Index> ks{20, 60, 100};
  std::string checkpoint;
  std::string content_items;
  std::string content_users;
};

struct GradcheckFlags {
  std::string model = "all";
  double tolerance = 1e-4;
  double step = 1e-4;
};

struct ExportFlags {
  std::string checkpoint;
  std::string format = "binary";
};

void add_shared(CLI::App* cmd, Shared& s) {
  cmd->add_option("--data", s.data, "dataset directory");
  cmd->add_option("--out", s.out, "output directory");
  cmd->add_option("--seed", s.seed, "random seed");
  cmd->add_option("--threads", s.threads, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--deterministic", s.deterministic, "fixed reduction order");
  cmd->add_option("--config", s.config, "key=value file; explicit flags win");
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  s = s.substr(b, e - b + 1);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) s = s.substr(1, s.size() - 2);
  return s;
}

bool truthy(const std::string& v) { return v == "true" || v == "1" || v == "yes" || v == "on"; }

// Appends `--key value` for every config entry whose flag was not given on the
// command line. Flags (no value) are appended only when truthy.
std::vector<std::string> merge_config(std::vector<std::string> args, CLI::App& app) {
  std::string path;
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--config") path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (args.size() && args.back().rfind("--config=", 0) == 0) path = args.back().substr(9);
  if (path.empty()) return args;
  if (args.empty()) return args;
  CLI::App* cmd = nullptr;
  for (auto* sub : app.get_subcommands({})) {
    if (sub->get_name() == args.front()) cmd = sub;
  }
  if (!cmd) return args;

  std::ifstream in(path);
  if (!in) fail("cannot open config ", path);
  auto given = [&](const std::string& key) {
    const std::string flag = "--" + key;
    for (const auto& a : args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };
  std::string line;
  Index lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';' || t[0] == '[') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail(path, ":", lineno, ": expected key=value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key == "command") {
      if (value != cmd->get_name()) fail(path, ": config is for command '", value, "'");
      continue;
    }
    if (key == "config" || given(key)) continue;
    const CLI::Option* opt = nullptr;
    try {
      opt = cmd->get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      fail(path, ":", lineno, ": unknown key '", key, "'");
    }
    if (opt->get_expected_min() == 0) {
      if (truthy(value)) args.push_back("--" + key);
    } else if (!value.empty()) {
      args.push_back("--" + key);
      args.push_back(value);
    }
  }
  return args;
}

std::string option_value(const CLI::Option* opt) {
  std::string v;
  if (opt->count() > 0) {
    if (opt->get_expected_min() == 0) return "true";
    for (const auto& r : opt->results()) v += (v.empty() ? "" : ",") + r;
    return v;
  }
  v = opt->get_default_str();
  if (opt->get_expected_min() == 0) return v.empty() ? "false" : v;
  std::string clean;
  for (char c : v) {
    if (c != '[' && c != ']' && c != ' ' && c != '"') clean += c;
  }
  return clean;
}

// Every resolved option of the command, in a form `--config` accepts back.
void write_run_meta(const CLI::App& cmd, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "run.meta", std::ios::binary);
  if (!out) fail("cannot write ", (dir / "run.meta").string());
  out << "command=" << cmd.get_name() << '\n';
  for (const CLI::Option* opt : cmd.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config" || name == "out") continue;
    out << name << '=' << option_value(opt) << '\n';
  }
}

fs::path require_dir(const std::string& dir, const char* flag) {
  if (dir.empty()) fail(flag, " is required");
  return dir;
}

void cmd_prepare(const Shared& s) {
  const Dataset ds = load_dataset(require_dir(s.data, "--data"));
  validate(ds.store);
  std::printf("users\titems\tentities\trelations\ttriplets\tinteractions\n");
  std::printf("%lld\t%lld\t%lld\t%lld\t%lld\t%lld\n", static_cast<long long>(ds.store.num_users),
              static_cast<long long>(ds.store.num_items), static_cast<long long>(ds.graph.num_entities()),
              static_cast<long long>(ds.graph.num_relations_raw()), static_cast<long long>(ds.graph.num_triplets()),
              static_cast<long long>(ds.store.num_interactions()));
}

void cmd_synth(const Shared& s, const SyntheticSpec& spec) {
  const fs::path out = require_dir(s.out, "--out");
  const auto syn = make_synthetic_dataset(spec, s.seed);
  fs::create_directories(out);
  write_dataset(syn.data, out);
  std::printf("wrote %lld users, %lld items, %lld entities to %s\n", static_cast<long long>(syn.data.store.num_users),
              static_cast<long long>(syn.data.store.num_items),
              static_cast<long long>(syn.data.graph.num_entities()), out.string().c_str());
}

void write_content_log(const std::vector<double>& loss, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path.string());
  char buf[64];
  for (std::size_t e = 0; e < loss.size(); ++e) {
    std::snprintf(buf, sizeof(buf), "%zu\t%.17g\n", e + 1, loss[e]);
    out << buf;
  }
}

void cmd_train(const Shared& s, const TrainFlags& f) {
  const fs::path out = require_dir(s.out, "--out");
  if (f.mode != "kmpn" && f.mode != "ckmpn" && f.mode != "content") fail("unknown mode '", f.mode, "'");
  if (f.mode == "ckmpn" && f.content_items.empty()) fail("--mode ckmpn requires --content-items");
  if (f.mode == "ckmpn" && f.content_users.empty()) fail("--mode ckmpn requires --content-users");
  if (f.mode != "ckmpn" && (!f.content_items.empty() || !f.content_users.empty())) {
    fail("--content-items/--content-users only apply to --mode ckmpn");
  }
  const Dataset ds = load_dataset(require_dir(s.data, "--data"));
  fs::create_directories(out);

  if (f.mode == "content") {
    ContentHyper hyper{f.hidden, f.buckets, f.history, f.negatives};
    ContentTrainConfig cfg;
    cfg.epochs = f.epochs.value_or(cfg.epochs);
    cfg.batch_size = f.batch_size.value_or(cfg.batch_size);
    cfg.lr = f.lr;
    cfg.seed = s.seed;
    Rng rng(s.seed);
    const auto res = train_content(ds.corpus, ds.store, ContentParams::init(hyper, rng), cfg);
    save_content_params(res.params, out / "content.ckpt");
    write_content_log(res.epoch_loss, out / "content_loss.log");
    if (!res.epoch_loss.empty()) std::printf("final click loss %.6f\n", res.epoch_loss.back());
    return;
  }

  TrainConfig cfg;
  cfg.epochs = f.epochs.value_or(cfg.epochs);
  cfg.batch_size = f.batch_size.value_or(cfg.batch_size);
  cfg.lr_start = f.lr;
  cfg.lr_end = f.lr_end;
  cfg.weights = f.weights;
  cfg.seed = s.seed;
  cfg.deterministic = s.deterministic;
  const KmpnDims dims{f.hidden, f.layers, f.n_meta, f.n_pref};
  KmpnParams::check_dims(dims);
  Rng rng(s.seed);
  KmpnParams init =
      KmpnParams::init(ds.graph.num_entities(), ds.graph.num_relations(), ds.store.num_users, dims, rng);
  TrainResult res;
  if (f.mode == "ckmpn") {
    const auto anchors =
        ContentAnchors::from_files(import_embeddings(f.content_users), import_embeddings(f.content_items),
                                   ds.store.num_users, ds.store.num_items, dims.hidden);
    res = train_ckmpn(ds.graph, ds.store, std::move(init), anchors, cfg);
  } else {
    res = train_kmpn(ds.graph, ds.store, std::move(init), cfg);
  }
  write_loss_log(res.log, out / "loss.log");
  save_checkpoint(res.params, out / "model.ckpt");
  if (!res.log.empty()) std::fputs(format_log_line(res.log.back()).c_str(), stdout);
}

void cmd_eval(const Shared& s, const EvalFlags& f) {
  const fs::path out = require_dir(s.out, "--out");
  const EvalSplit split = parse_split(f.split);
  const bool embeddings = !f.content_items.empty() || !f.content_users.empty();
  if (embeddings && !f.checkpoint.empty()) fail("give either --checkpoint or content embedding files, not both");
  if (!embeddings && f.checkpoint.empty()) fail("eval needs --checkpoint or --content-items/--content-users");
  if (embeddings && (f.content_items.empty() || f.content_users.empty())) {
    fail("embedding eval needs both --content-items and --content-users");
  }
  const Dataset ds = load_dataset(require_dir(s.data, "--data"));
  MetricsReport rep;
  if (embeddings) {
    const auto items = import_embeddings(f.content_items);
    const auto users = import_embeddings(f.content_users);
    const auto a = ContentAnchors::from_files(users, items, ds.store.num_users, ds.store.num_items, items.dim());
    rep = evaluate_embeddings(a.user, a.item, ds.store, split, f.ks, s.threads);
  } else {
    rep = evaluate_kmpn(load_checkpoint(f.checkpoint), ds.graph, ds.store, split, f.ks, s.threads);
  }
  const std::string text = format_report(rep);
  fs::create_directories(out);
  std::ofstream file(out / concat("eval_", split_name(split), ".tsv"), std::ios::binary);
  if (!file) fail("cannot write report in ", out.string());
  file << text;
  std::fputs(text.c_str(), stdout);
}

bool cmd_gradcheck(const GradcheckFlags& f, std::uint64_t seed, bool seeded) {
  std::vector<ModelKind> kinds;
  if (f.model == "all") kinds = {ModelKind::kmpn, ModelKind::ckmpn, ModelKind::content};
  else if (f.model == "kmpn") kinds = {ModelKind::kmpn};
  else if (f.model == "ckmpn") kinds = {ModelKind::ckmpn};
  else if (f.model == "content") kinds = {ModelKind::content};
  else fail("unknown gradcheck model '", f.model, "'");
  GradCheckSpec spec;
  spec.step = f.step;
  if (seeded) spec.seed = seed;
  bool ok = true;
  for (ModelKind k : kinds) {
    const auto rep = grad_check(k, spec, f.tolerance);
    for (const auto& t : rep.tensors) {
      std::printf("%s\t%s\t%lld\t%.3e\t%.3e\t%s\n", model_kind_name(k), t.name.c_str(), static_cast<long long>(t.size),
                  t.max_rel_error, t.max_abs_error, t.ok ? "ok" : "FAIL");
    }
    std::printf("%s\tmax_rel_error=%.3e\t%s\n", model_kind_name(k), rep.max_rel_error, rep.ok ? "PASS" : "FAIL");
    ok = ok && rep.ok;
  }
  return ok;
}

void cmd_export(const Shared& s, const ExportFlags& f) {
  const fs::path out = require_dir(s.out, "--out");
  if (f.checkpoint.empty()) fail("--checkpoint is required");
  const char* ext = nullptr;
  if (f.format == "binary") ext = ".bin";
  else if (f.format == "text") ext = ".txt";
  else fail("unknown format '", f.format, "'");
  const Dataset ds = load_dataset(require_dir(s.data, "--data"));
  const auto params = load_content_params(f.checkpoint);
  fs::create_directories(out);
  const auto ex = export_embeddings(params, ds.corpus, ds.store, out / concat("content_items", ext),
                                    out / concat("content_users", ext));
  std::printf("exported %lld items and %lld users (dim %lld)\n", static_cast<long long>(ex.items.count()),
              static_cast<long long>(ex.users.count()), static_cast<long long>(ex.items.dim()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-graph enhanced collaborative filtering", "kgrec"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  Shared shared;
  TrainFlags tf;
  EvalFlags ef;
  GradcheckFlags gf;
  ExportFlags xf;
  SyntheticSpec spec;

  auto* prepare = app.add_subcommand("prepare", "validate a dataset and print its counts");
  add_shared(prepare, shared);

  auto* synth = app.add_subcommand("synth", "generate a synthetic clustered dataset");
  add_shared(synth, shared);
  synth->add_option("--users", spec.num_users);
  synth->add_option("--items", spec.num_items);
  synth->add_option("--clusters", spec.num_clusters);
  synth->add_option("--density", spec.density);
  synth->add_option("--held-out", spec.held_out);
  synth->add_option("--cold-fraction", spec.cold_fraction);
  synth->add_option("--noise", spec.noise);

  auto* train = app.add_subcommand("train", "train kmpn, ckmpn or the content encoder");
  train->set_help_flag("--help", "Print this help message and exit");
  add_shared(train, shared);
  train->add_option("--mode", tf.mode)->check(CLI::IsMember({"kmpn", "ckmpn", "content"}));
  train->add_option("--epochs", tf.epochs, "default 300 (content: 50)");
  train->add_option("--batch-size", tf.batch_size, "default 256 (content: 32)");
  train->add_option("--lr", tf.lr);
  train->add_option("--lr-end", tf.lr_end);
  train->add_option("--h", tf.hidden);
  train->add_option("--layers", tf.layers);
  train->add_option("--n-pref", tf.n_pref);
  train->add_option("--n-meta", tf.n_meta);
  train->add_option("--epsilon", tf.weights.epsilon);
  train->add_option("--lambda1", tf.weights.lambda1);
  train->add_option("--lambda2", tf.weights.lambda2);
  train->add_option("--lambda-cs", tf.weights.lambda_cs);
  train->add_option("--content-items", tf.content_items);
  train->add_option("--content-users", tf.content_users);
  train->add_option("--buckets", tf.buckets);
  train->add_option("--history", tf.history);
  train->add_option("--negatives", tf.negatives);

  auto* eval = app.add_subcommand("eval", "rank the full catalog and report Recall/ndcg/HitRatio");
  add_shared(eval, shared);
  eval->add_option("--split", ef.split)->check(CLI::IsMember({"valid", "test", "cold_start"}));
  eval->add_option("--k", ef.ks)->delimiter(',');
  eval->add_option("--checkpoint", ef.checkpoint);
  eval->add_option("--content-items", ef.content_items);
  eval->add_option("--content-users", ef.content_users);

  auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
  add_shared(gradcheck, shared);
  gradcheck->add_option("--model", gf.model)->check(CLI::IsMember({"all", "kmpn", "ckmpn", "content"}));
  gradcheck->add_option("--tolerance", gf.tolerance);
  gradcheck->add_option("--step", gf.step);

  auto* exportc = app.add_subcommand("export-content", "write content item/user embedding files");
  add_shared(exportc, shared);
  exportc->add_option("--checkpoint", xf.checkpoint);
  exportc->add_option("--format", xf.format)->check(CLI::IsMember({"binary", "text"}));

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = merge_config(std::move(args), app);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }

  try {
    CLI::App* cmd = app.get_subcommands().front();
    if (!shared.out.empty()) write_run_meta(*cmd, shared.out);
    const std::string name = cmd->get_name();
    if (name == "prepare") cmd_prepare(shared);
    else if (name == "synth") cmd_synth(shared, spec);
    else if (name == "train") cmd_train(shared, tf);
    else if (name == "eval") cmd_eval(shared, ef);
    else if (name == "export-content") cmd_export(shared, xf);
    else if (name == "gradcheck") {
      const bool seeded = cmd->get_option("--seed")->count() > 0;
      if (!cmd_gradcheck(gf, shared.seed, seeded)) {
        std::fprintf(stderr, "error: gradient check failed\n");
        return 1;
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
