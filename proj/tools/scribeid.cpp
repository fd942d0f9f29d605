// scribeid command-line interface.

#include <signal.h>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <pthread.h>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <thread>

#include "httplib.h"
#include "scribeid/dataset.hpp"
#include "scribeid/evaluation.hpp"
#include "scribeid/gradient_suite.hpp"
#include "scribeid/http_server.hpp"
#include "scribeid/jsonl.hpp"
#include "scribeid/model.hpp"
#include "scribeid/runtime.hpp"
#include "scribeid/service.hpp"
#include "scribeid/synth.hpp"
#include "scribeid/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scribeid;

namespace {

void print_json(const json& j) { std::cout << j.dump(2) << std::endl; }

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("cannot write " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void fail(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", {{"code", code}, {"message", message}}}}.dump() << std::endl;
}

// ---- gen-data ----

struct GenArgs {
  int writers = 40;
  int instances = 40;
  std::uint64_t seed = 20210501;
  std::string alphabet = kDefaultAlphabet;
  fs::path out;
};

void cmd_gen_data(const GenArgs& a) {
  CorpusSpec spec;
  spec.writers = a.writers;
  spec.instances = a.instances;
  spec.seed = a.seed;
  spec.alphabet = a.alphabet;
  const auto records = generate_corpus(spec);
  fs::create_directories(a.out);
  save_jsonl(a.out / "corpus.jsonl", records);
  DatasetManifest m = build_manifest(records, spec.alphabet, spec.seed);
  m.files = {"corpus.jsonl"};
  save_manifest(a.out / "manifest.json", m);
  print_json({{"manifest", (a.out / "manifest.json").string()},
              {"records", records.size()},
              {"writers", m.writers.size()},
              {"alphabet", m.alphabet},
              {"seed", spec.seed}});
}

// ---- select ----

struct SelectArgs {
  fs::path manifest;
  int m = 30;
  int n = 60;
  fs::path out;  // optional: write the selected sub-corpus here
};

void cmd_select(const SelectArgs& a) {
  const Dataset ds = load_dataset(a.manifest);
  const Selection sel = select_writers(ds.manifest.counts, a.m, a.n);
  json report = {{"m", a.m}, {"n", a.n}, {"letters", sel.letters}, {"writers", sel.writers},
                 {"num_letters", sel.letters.size()}, {"num_writers", sel.writers.size()}};
  if (!a.out.empty()) {
    const std::set<std::string> keep(sel.writers.begin(), sel.writers.end());
    std::vector<RawTrajectory> records;
    for (const RawTrajectory& r : ds.records) {
      if (keep.count(r.writer_id) != 0 && sel.letters.find(r.letter) != std::string::npos) records.push_back(r);
    }
    fs::create_directories(a.out);
    save_jsonl(a.out / "corpus.jsonl", records);
    DatasetManifest m = build_manifest(records, sel.letters, ds.manifest.master_seed);
    m.files = {"corpus.jsonl"};
    save_manifest(a.out / "manifest.json", m);
    report["manifest"] = (a.out / "manifest.json").string();
    report["records"] = records.size();
  }
  print_json(report);
}

// ---- split ----

struct SplitArgs {
  fs::path manifest;
  std::string mode;
  std::string ratio = "3:1";
  int train_writers = 0;
  std::uint64_t seed = 1;
  fs::path out;  // defaults to rewriting the manifest
};

std::pair<int, int> parse_ratio(const std::string& s) {
  const auto colon = s.find(':');
  int a = 0, b = 0;
  auto ok = [](const std::string& part, int& v) {
    const auto r = std::from_chars(part.data(), part.data() + part.size(), v);
    return r.ec == std::errc() && r.ptr == part.data() + part.size();
  };
  if (colon == std::string::npos || !ok(s.substr(0, colon), a) || !ok(s.substr(colon + 1), b) || a <= 0 || b <= 0) {
    throw ConfigurationError("ratio must look like 3:1");
  }
  return {a, b};
}

void cmd_split(const SplitArgs& a) {
  Dataset ds = load_dataset(a.manifest);
  const SplitMode mode = split_mode_from_string(a.mode);
  if (mode == SplitMode::Closed) {
    const auto [tr, te] = parse_ratio(a.ratio);
    split_closed(ds.manifest, ds.records, tr, te, a.seed);
  } else if (mode == SplitMode::Open) {
    if (a.train_writers <= 0) throw ConfigurationError("open split needs --train-writers");
    split_open(ds.manifest, ds.records, a.train_writers, a.seed);
  } else {
    throw ConfigurationError("mode must be closed or open");
  }
  fs::path out = a.out.empty() ? a.manifest : a.out;
  if (!a.out.empty()) {
    // Keep data files reachable from the new location.
    for (std::string& f : ds.manifest.files) {
      f = fs::relative(fs::absolute(a.manifest).parent_path() / f, fs::absolute(out).parent_path()).string();
    }
  }
  save_manifest(out, ds.manifest);
  long train = 0;
  for (Partition p : ds.manifest.assignment) train += p == Partition::Train ? 1 : 0;
  print_json({{"manifest", out.string()},
              {"mode", to_string(mode)},
              {"seed", a.seed},
              {"train_records", train},
              {"test_records", static_cast<long>(ds.manifest.assignment.size()) - train}});
}

// ---- shared loading ----

struct Loaded {
  Dataset dataset;
  PreparedCorpus corpus;
};

Loaded load_corpus(const fs::path& manifest, const ModelConfig& mc) {
  Loaded l{load_dataset(manifest), {}};
  l.corpus = prepare_corpus(l.dataset.records, mc.alphabet, mc.timesteps, mc.raster);
  return l;
}

std::unique_ptr<WriterNet> load_checkpoint(const fs::path& path) {
  auto net = WriterNet::load(path);
  spdlog::debug("loaded {} ({} parameters)", path.string(), net->parameter_count());
  return net;
}

// ---- train ----

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

void cmd_train(const fs::path& config_path) {
  const json cfg = read_json_file(config_path);
  const fs::path base = fs::absolute(config_path).parent_path();
  if (!cfg.contains("manifest") || !cfg.contains("output")) {
    throw ConfigurationError("train config needs 'manifest' and 'output'");
  }
  const fs::path manifest = resolve(base, cfg.at("manifest").get<std::string>());
  const fs::path out = resolve(base, cfg.at("output").get<std::string>());
  ModelConfig mc = model_config_from_json(cfg.value("model", json::object()));
  json train_json = cfg.value("train", json::object());
  if (train_json.value("checkpoint_every", 0) > 0 && !train_json.contains("checkpoint_dir")) {
    train_json["checkpoint_dir"] = (out / "checkpoints").string();
  }
  TrainConfig tc = train_config_from_json(train_json);
  if (!tc.checkpoint_dir.empty()) tc.checkpoint_dir = resolve(base, tc.checkpoint_dir);

  Loaded data = load_corpus(manifest, mc);
  const std::string letters = tc.letters.empty() ? mc.alphabet : tc.letters;
  const auto writers = training_writers(data.corpus, data.dataset.manifest.assignment, letters);
  if (mc.num_writers == 0) mc.num_writers = static_cast<int>(writers.size());

  fs::create_directories(out);
  WriterNet net(mc);
  net.metadata["manifest"] = fs::absolute(manifest).string();
  net.metadata["split_mode"] = to_string(data.dataset.manifest.split_mode);
  net.metadata["split_seed"] = data.dataset.manifest.split_seed;
  net.metadata["train"] = to_json(tc);

  std::ofstream metrics(out / "metrics.jsonl");
  if (!metrics) throw IoError("cannot write " + (out / "metrics.jsonl").string());
  spdlog::info("training {} parameters on {} writers", net.parameter_count(), writers.size());
  const TrainReport rep = train(net, data.corpus, data.dataset.manifest.assignment, tc, [&](const EpochRecord& r) {
    metrics << to_json(r).dump() << std::endl;
    spdlog::info("epoch {} loss {:.5f} acc {:.4f}", r.epoch, r.loss, r.train_acc);
  });
  const fs::path ckpt = out / "model.ckpt";
  net.save(ckpt);
  json summary = {{"checkpoint", ckpt.string()},
                  {"checkpoint_hash", file_sha256(ckpt)},
                  {"metrics", (out / "metrics.jsonl").string()},
                  {"parameters", net.parameter_count()},
                  {"steps", rep.steps},
                  {"epochs", rep.epochs.size()}};
  if (!rep.epochs.empty()) summary["final_loss"] = rep.epochs.back().loss;
  print_json(summary);
}

// ---- eval ----

struct EvalArgs {
  std::string mode;
  fs::path checkpoint;
  fs::path manifest;
  int draws = 10;
  std::uint64_t seed = 1;
  std::vector<std::string> subsets;
  int min_size = 2;
  int retrain_epochs = 0;
  double retrain_lr = 1e-3;
  bool text = false;
  fs::path out;
};

void emit(const json& report, const std::string& text, const EvalArgs& a) {
  if (!a.out.empty()) write_json_file(a.out, report);
  if (a.text) {
    std::cout << text;
  } else {
    print_json(report);
  }
}

// Fewer letters with the letter head retrained per subset.
FewerLettersReport fewer_letters_retrained(const EvalArgs& a, const Loaded& data, SplitMode mode,
                                           const std::vector<std::string>& subsets) {
  FewerLettersReport out;
  out.mode = mode;
  std::map<int, std::pair<double, double>> sums;
  std::map<int, int> counts;
  for (const std::string& s : subsets) {
    auto net = load_checkpoint(a.checkpoint);
    TrainConfig tc = train_config_from_json(net->metadata.value("train", json::object()));
    tc.letters = s;
    tc.letter_independent = false;
    tc.epochs = a.retrain_epochs;
    tc.lr = a.retrain_lr;
    tc.decay_interval = std::max(tc.decay_interval, a.retrain_epochs + 1);
    tc.trainable_prefixes = {"hap/letter/"};
    tc.freeze_statistics = true;
    tc.checkpoint_every = 0;
    tc.report_accuracy = false;
    train(*net, data.corpus, data.dataset.manifest.assignment, tc);
    const FewerLettersReport one =
        eval_fewer_letters(*net, data.corpus, data.dataset.manifest.assignment, mode, {s}, a.draws, a.seed);
    out.subsets.push_back(one.subsets.at(0));
    const int k = static_cast<int>(s.size());
    sums[k].first += one.subsets[0].rank1;
    sums[k].second += one.subsets[0].rank5;
    counts[k] += 1;
  }
  for (auto it = sums.rbegin(); it != sums.rend(); ++it) {
    out.mean_rank1.push_back({it->first, it->second.first / counts[it->first]});
    out.mean_rank5.push_back({it->first, it->second.second / counts[it->first]});
  }
  return out;
}

void cmd_eval(const EvalArgs& a) {
  auto net = load_checkpoint(a.checkpoint);
  const Loaded data = load_corpus(a.manifest, net->config());
  const auto& assignment = data.dataset.manifest.assignment;
  if (a.mode == "closed") {
    const ClosedReport r = eval_closed(*net, data.corpus, assignment, a.seed);
    json j = to_json(r);
    j["mode"] = "closed";
    emit(j, "accuracy " + std::to_string(r.accuracy) + " (" + std::to_string(r.correct) + "/" +
                std::to_string(r.samples) + ")\n",
         a);
  } else if (a.mode == "open") {
    const RankReport r = eval_open(*net, data.corpus, assignment, a.draws, a.seed);
    json j = to_json(r);
    j["mode"] = "open";
    emit(j, to_text(r), a);
  } else if (a.mode == "fewer-letters") {
    const SplitMode mode = data.dataset.manifest.split_mode;
    if (mode == SplitMode::None) throw ProtocolError("manifest has no split");
    const auto subsets = a.subsets.empty() ? letter_subsets(net->config().alphabet, a.min_size) : a.subsets;
    const FewerLettersReport r =
        a.retrain_epochs > 0 ? fewer_letters_retrained(a, data, mode, subsets)
                             : eval_fewer_letters(*net, data.corpus, assignment, mode, subsets, a.draws, a.seed);
    json j = to_json(r);
    j["retrain_epochs"] = a.retrain_epochs;
    emit(j, to_text(r), a);
  } else {
    throw ConfigurationError("mode must be closed, open or fewer-letters");
  }
}

// ---- export-embeddings ----

void cmd_export(const fs::path& checkpoint, const fs::path& manifest, const fs::path& out, std::uint64_t seed,
                bool all) {
  auto net = load_checkpoint(checkpoint);
  const Loaded data = load_corpus(manifest, net->config());
  const std::vector<Partition> none;
  const long rows = export_embeddings(*net, data.corpus, all ? none : data.dataset.manifest.assignment, out, seed);
  print_json({{"path", out.string()}, {"rows", rows}, {"dim", net->config().feature_dim()}});
}

// ---- gradcheck ----

int cmd_gradcheck(std::uint64_t seed, bool verbose) {
  const auto t0 = std::chrono::steady_clock::now();
  const GradientSuiteResult r = run_gradient_suite(seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& [name, rep] : r.cases) {
    if (verbose || !rep.passed) {
      std::printf("%-40s %s  max_rel_error %.3e\n", name.c_str(), rep.passed ? "ok  " : "FAIL", rep.max_rel_error);
    }
  }
  std::printf("cases %zu  max_rel_error %.3e  tolerance 1e-04  time %.1fs  %s\n", r.cases.size(), r.max_rel_error,
              secs, r.passed ? "PASS" : "FAIL");
  if (!r.passed) {
    fail("gradcheck_failed", "max relative error " + std::to_string(r.max_rel_error) + " exceeds 1e-4");
    return 1;
  }
  return 0;
}

// ---- serve ----

int cmd_serve(const fs::path& checkpoint, const std::string& host, int port, const fs::path& store, bool dev,
              int min_letters) {
  // Handle SIGINT/SIGTERM on a dedicated thread so the server stops cleanly.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  const std::string hash = file_sha256(checkpoint);
  IdentificationService service(load_checkpoint(checkpoint), hash, store, ServiceOptions{min_letters});
  if (service.store().recovered_bytes() > 0) {
    spdlog::warn("dropped {} bytes of an interrupted enrollment from {}", service.store().recovered_bytes(),
                 store.string());
  }
  auto server = make_server(service, dev);
  int bound = port;
  if (port == 0) {
    bound = server->bind_to_any_port(host);
  } else if (!server->bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw IoError("cannot listen on " + host + ":" + std::to_string(port));

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    spdlog::info("signal {}, shutting down", sig);
    server->stop();
  });
  waiter.detach();
  spdlog::info("listening on {}:{} (checkpoint {}, {} enrollments{})", host, bound, hash.substr(0, 12),
               service.store().size(), dev ? ", dev endpoints on" : "");
  // A machine-readable line for scripts that start the server on port 0.
  std::cout << json{{"listening", {{"host", host}, {"port", bound}}}}.dump() << std::endl;
  server->listen_after_bind();
  return 0;
}

// ---- bench-latency ----

void cmd_bench_latency(const fs::path& checkpoint, int reps, std::uint64_t seed) {
  auto net = load_checkpoint(checkpoint);
  const ModelConfig& c = net->config();
  const WriterStyleModel style = synth_writer(seed);
  ModelInput input;
  for (char l : c.alphabet) {
    if (!has_template(l)) throw UnsupportedLetterError(std::string("no synthetic template for letter '") + l + "'");
    const RawTrajectory raw = synth_trajectory(style, l, seed + static_cast<unsigned char>(l));
    input.letters.push_back(make_group(std::vector<NormalizedTrajectory>{normalize(raw, c.timesteps)}, l, c.raster));
  }
  {
    Tape warm;
    warm.set_grad_enabled(false);
    net->forward(warm, input, NormContext{false, false});
  }
  const LatencyReport r = measure_latency(*net, input, reps);
  print_json({{"median_ms", r.median_ms},
              {"reps", reps},
              {"letters", c.alphabet},
              {"threads", 1},
              {"samples_ms", r.samples_ms},
              {"parameters", net->parameter_count()}});
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  spdlog::set_default_logger(spdlog::stderr_color_mt("scribeid"));
  configure_logging();
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");

  CLI::App app{"Letter-level online writer identification"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic corpus and its manifest");
  gen_cmd->add_option("--writers", gen.writers)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--instances", gen.instances)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--alphabet", gen.alphabet);
  gen_cmd->add_option("--out", gen.out)->required();

  SelectArgs sel;
  auto* sel_cmd = app.add_subcommand("select", "Writer/letter selection by per-cell counts");
  sel_cmd->add_option("--manifest", sel.manifest)->required();
  sel_cmd->add_option("--m", sel.m);
  sel_cmd->add_option("--n", sel.n);
  sel_cmd->add_option("--out", sel.out, "Write the selected sub-corpus to this directory");

  SplitArgs split;
  auto* split_cmd = app.add_subcommand("split", "Assign records to train and test");
  split_cmd->add_option("--manifest", split.manifest)->required();
  split_cmd->add_option("--mode", split.mode)->required()->check(CLI::IsMember({"closed", "open"}));
  split_cmd->add_option("--ratio", split.ratio);
  split_cmd->add_option("--train-writers", split.train_writers);
  split_cmd->add_option("--seed", split.seed);
  split_cmd->add_option("--out", split.out, "Write the split manifest here instead of in place");

  fs::path train_config;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON config");
  train_cmd->add_option("--config", train_config)->required()->check(CLI::ExistingFile);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Closed-set, open-set or fewer-letters evaluation");
  eval_cmd->add_option("--mode", ev.mode)->required()->check(CLI::IsMember({"closed", "open", "fewer-letters"}));
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--manifest", ev.manifest)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--draws", ev.draws)->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", ev.seed);
  eval_cmd->add_option("--subsets", ev.subsets, "Letter subsets, e.g. --subsets ab abc")->delimiter(',');
  eval_cmd->add_option("--min-size", ev.min_size);
  eval_cmd->add_option("--retrain-epochs", ev.retrain_epochs, "Retrain the letter head per subset");
  eval_cmd->add_option("--retrain-lr", ev.retrain_lr);
  eval_cmd->add_flag("--text", ev.text, "Print a table instead of JSON");
  eval_cmd->add_option("--out", ev.out, "Also write the JSON report here");

  fs::path ex_ckpt, ex_manifest, ex_out;
  std::uint64_t ex_seed = 1;
  bool ex_all = false;
  auto* export_cmd = app.add_subcommand("export-embeddings", "Write test-sample embeddings as CSV");
  export_cmd->add_option("--checkpoint", ex_ckpt)->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--manifest", ex_manifest)->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--out", ex_out)->required();
  export_cmd->add_option("--seed", ex_seed);
  export_cmd->add_flag("--all", ex_all, "Ignore the split and embed every record");

  std::uint64_t gc_seed = 1;
  bool gc_verbose = false;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Run the gradient oracle suite");
  gc_cmd->add_option("--seed", gc_seed);
  gc_cmd->add_flag("-v,--verbose", gc_verbose);

  fs::path sv_ckpt, sv_store = "enrollments.jsonl";
  std::string sv_host = "127.0.0.1";
  int sv_port = 8080, sv_min = 0;
  bool sv_dev = false;
  auto* serve_cmd = app.add_subcommand("serve", "Serve enroll/identify over HTTP");
  serve_cmd->add_option("--checkpoint", sv_ckpt)->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--port", sv_port)->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--host", sv_host);
  serve_cmd->add_option("--store", sv_store, "Enrollment journal (JSONL)");
  serve_cmd->add_option("--min-letters", sv_min, "Letters required to enroll (0: whole alphabet)");
  serve_cmd->add_flag("--dev", sv_dev, "Enable POST /dev/echo");

  fs::path bl_ckpt;
  int bl_reps = 25;
  std::uint64_t bl_seed = 1;
  auto* bench_cmd = app.add_subcommand("bench-latency", "Median single-thread identification forward time");
  bench_cmd->add_option("--checkpoint", bl_ckpt)->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--reps", bl_reps)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", bl_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("usage_error", e.what());
    return 2;
  }

  try {
    if (*gen_cmd) cmd_gen_data(gen);
    if (*sel_cmd) cmd_select(sel);
    if (*split_cmd) cmd_split(split);
    if (*train_cmd) cmd_train(train_config);
    if (*eval_cmd) cmd_eval(ev);
    if (*export_cmd) cmd_export(ex_ckpt, ex_manifest, ex_out, ex_seed, ex_all);
    if (*gc_cmd) return cmd_gradcheck(gc_seed, gc_verbose);
    if (*serve_cmd) return cmd_serve(sv_ckpt, sv_host, sv_port, sv_store, sv_dev, sv_min);
    if (*bench_cmd) cmd_bench_latency(bl_ckpt, bl_reps, bl_seed);
  } catch (const Error& e) {
    fail(e.code(), e.what());
    return 1;
  } catch (const json::exception& e) {
    fail("parse_error", e.what());
    return 1;
  } catch (const std::exception& e) {
    fail("internal", e.what());
    return 1;
  }
  return 0;
}
