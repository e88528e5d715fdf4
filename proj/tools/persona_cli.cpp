// persona: operator CLI for building persona libraries and scoring prompts.
//
// Exit codes: 0 success, 1 validation failure, 2 configuration error,
// 3 upstream (gateway or backend) failure.

#include <algorithm>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "persona/persona.hpp"

namespace fs = std::filesystem;
using namespace persona;
using ojson = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kValidation = 1, kConfig = 2, kUpstream = 3 };

struct Options {
  std::string config = "configs/synthetic.json";
  std::string traits;
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed;
  std::string replay;
  std::string record;
  std::string out = "out";
  std::string format = "human";
  std::optional<int> pairs;
  std::optional<int> situations;
  std::optional<double> min_r2;
  std::string library;
  std::string prompt;
  std::string prompt_file;
  std::string host;
  int port = 0;
};

/// Everything a phase needs, built once per invocation.
struct Context {
  Options opt;
  StudioConfig cfg;
  TraitRegistry registry;
  fs::path out;

  std::shared_ptr<ActivationBackend> backend_;
  std::unique_ptr<Gateway> gateway_;

  ActivationBackend& backend() {
    if (!backend_) backend_ = make_backend(cfg);
    return *backend_;
  }
  Gateway& gateway() {
    if (!gateway_) gateway_ = std::make_unique<Gateway>(make_gateway(cfg, registry, opt.replay, opt.record));
    return *gateway_;
  }

  std::vector<std::string> traits() const {
    if (opt.traits.empty()) return registry.dimension_ids();
    std::vector<std::string> out;
    std::stringstream ss(opt.traits);
    std::string t;
    while (std::getline(ss, t, ',')) {
      if (t.empty()) continue;
      if (!registry.has_dimension(t)) throw Error(ErrorCode::config_error, "unknown trait '" + t + "' in --traits");
      out.push_back(t);
    }
    return out;
  }

  /// Fixed timestamp for reproducible runs: SOURCE_DATE_EPOCH if set, epoch
  /// zero under --replay, wall clock otherwise.
  std::string timestamp() const {
    if (std::getenv("SOURCE_DATE_EPOCH") == nullptr && !opt.replay.empty()) return format_utc(0);
    return utc_timestamp();
  }

  bool structured() const { return opt.format == "structured"; }
};

void say(const Context& ctx, const std::string& line) {
  if (!ctx.structured()) std::cout << line << "\n";
}

// ---- phases

void run_dataset(Context& ctx) {
  const int pairs = ctx.opt.pairs.value_or(ctx.cfg.pairs);
  const int situations = ctx.opt.situations.value_or(ctx.cfg.situations);
  ojson summary = ojson::array();
  for (const auto& trait : ctx.traits()) {
    const auto path = checkpoint::dataset_path(ctx.out, trait);
    ResponseSet set;
    bool resumed = false;
    if (fs::exists(path)) {
      set = checkpoint::response_set_from_json(io::read_json(path));
      resumed = static_cast<int>(set.pairs.size()) == pairs && static_cast<int>(set.situations.size()) == situations &&
                set.backend.same_model(ctx.backend().descriptor());
    }
    if (!resumed) {
      set = collect_responses(trait, ctx.backend(), ctx.gateway(), {pairs, situations, ctx.opt.jobs});
      checkpoint::write(path, checkpoint::to_json(set));
    }
    // Judging resumes too: records already scored keep their score.
    const bool needs_judging = std::any_of(set.records.begin(), set.records.end(), [](const TaggedRecord& r) {
      return !r.failed() && !r.record.refusal && !r.judge_score;
    });
    if (needs_judging) {
      judge_responses(set, ctx.gateway(), ctx.opt.jobs);
      checkpoint::write(path, checkpoint::to_json(set));
    }
    std::size_t refusals = 0;
    for (const auto& r : set.records) refusals += r.record.refusal;
    say(ctx, trait + ": " + std::to_string(set.records.size() - set.failures()) + " records (" +
                 std::to_string(set.failures()) + " failed, " + std::to_string(refusals) + " refusals)" +
                 (resumed ? " [resumed]" : ""));
    summary.push_back({{"trait", trait},
                       {"records", set.records.size() - set.failures()},
                       {"failed", set.failures()},
                       {"refusals", refusals}});
  }
  if (ctx.structured()) std::cout << summary.dump(2) << "\n";
}

void run_extract(Context& ctx) {
  for (const auto& trait : ctx.traits()) {
    auto set = checkpoint::response_set_from_json(checkpoint::read(checkpoint::dataset_path(ctx.out, trait), "dataset"));
    const auto filtered = partition_by_judge(set.records);
    if (filtered.kept_positive.empty() || filtered.kept_negative.empty()) {
      throw Error(ErrorCode::extraction_impossible, "trait '" + trait + "': kept " +
                                                        std::to_string(filtered.kept_positive.size()) + " positive and " +
                                                        std::to_string(filtered.kept_negative.size()) + " negative");
    }
    auto vec = extract_persona_vector(set, filtered);
    vec.created_at = ctx.timestamp();
    checkpoint::write(checkpoint::vector_path(ctx.out, trait), checkpoint::to_json(vec, filtered, set));
    std::string line = trait + ": kept " + std::to_string(vec.kept_positive) + "+/" + std::to_string(vec.kept_negative) +
                       "-, dropped " + std::to_string(filtered.dropped.size());
    if (!vec.degenerate_layers.empty()) line += ", degenerate layers " + std::to_string(vec.degenerate_layers.size());
    say(ctx, line);
  }
}

std::map<std::string, PersonaVector> load_vectors(const Context& ctx, const std::vector<std::string>& traits) {
  std::map<std::string, PersonaVector> out;
  for (const auto& t : traits) {
    out[t] = checkpoint::persona_vector_from_json(checkpoint::read(checkpoint::vector_path(ctx.out, t), "extract"));
  }
  return out;
}

void print_selection(const Context& ctx, const LayerSelection& sel) {
  if (ctx.structured()) {
    std::cout << checkpoint::to_json(sel).dump(2) << "\n";
    return;
  }
  std::printf("%-14s", "trait");
  for (std::size_t l = 0; l < sel.mean_r_squared.size(); ++l) std::printf("  layer %-3zu", l);
  std::printf("\n");
  for (std::size_t t = 0; t < sel.traits.size(); ++t) {
    std::printf("%-14s", sel.traits[t].c_str());
    for (const auto& f : sel.fits[t]) std::printf("  %9.6f", f.r_squared);
    std::printf("\n");
  }
  std::printf("%-14s", "mean");
  for (double m : sel.mean_r_squared) std::printf("  %9.6f", m);
  std::printf("\nselected layer %zu (ties toward %s layers)\n", sel.selected_layer, sel.tie_break.c_str());
}

void run_select_layer(Context& ctx) {
  const auto traits = ctx.traits();
  const auto vectors = load_vectors(ctx, traits);
  std::map<std::string, LeveledScores> leveled;
  for (const auto& t : traits) {
    leveled[t] = score_leveled_prompts(t, vectors.at(t), ctx.backend(), ctx.gateway(), ctx.cfg.mode,
                                       ctx.cfg.leveled_per_level, ctx.opt.jobs);
    checkpoint::write(checkpoint::leveled_path(ctx.out, t), checkpoint::to_json(leveled[t]));
  }
  const auto sel = select_layer(vectors, leveled);
  checkpoint::write(checkpoint::selection_path(ctx.out), checkpoint::to_json(sel));
  print_selection(ctx, sel);
}

void run_calibrate(Context& ctx) {
  const auto sel = checkpoint::selection_from_json(checkpoint::read(checkpoint::selection_path(ctx.out), "select-layer"));
  const auto traits = ctx.traits();
  const auto vectors = load_vectors(ctx, traits);
  for (const auto& t : traits) {
    auto cal = calibrate(t, vectors.at(t), sel.selected_layer, ctx.backend(), ctx.gateway(), ctx.cfg.mode,
                         ctx.cfg.calibration_per_length, ctx.opt.jobs);
    checkpoint::write(checkpoint::calibration_path(ctx.out, t), checkpoint::to_json(cal));
    char line[160];
    std::snprintf(line, sizeof line, "%s: layer %zu max_pos %.6f min_neg %.6f (%zu prompts)", t.c_str(),
                  sel.selected_layer, cal.bounds.max_pos, cal.bounds.min_neg, cal.samples.size());
    say(ctx, line);
  }
}

void run_build_library(Context& ctx) {
  const auto traits = ctx.traits();
  for (const auto& dim : ctx.registry.dimensions()) {
    if (std::find(traits.begin(), traits.end(), dim.id) == traits.end()) {
      throw Error(ErrorCode::config_error, "a library needs every registry dimension; '" + dim.id + "' is filtered out");
    }
  }
  auto missing = [&](auto path_fn) {
    return std::any_of(traits.begin(), traits.end(), [&](const std::string& t) { return !fs::exists(path_fn(ctx.out, t)); });
  };
  if (missing(checkpoint::dataset_path)) run_dataset(ctx);
  if (missing(checkpoint::vector_path)) run_extract(ctx);
  if (missing(checkpoint::leveled_path) || !fs::exists(checkpoint::selection_path(ctx.out))) run_select_layer(ctx);
  if (missing(checkpoint::calibration_path)) run_calibrate(ctx);

  const auto sel = checkpoint::selection_from_json(checkpoint::read(checkpoint::selection_path(ctx.out), "select-layer"));
  PersonaLibrary lib;
  lib.registry = ctx.registry;
  lib.selected_layer = sel.selected_layer;
  lib.mode = ctx.cfg.mode;
  for (auto& [t, vec] : load_vectors(ctx, traits)) {
    if (lib.backend.model_name.empty()) lib.backend = vec.backend;
    auto cal = checkpoint::calibration_from_json(checkpoint::read(checkpoint::calibration_path(ctx.out, t), "calibrate"));
    if (cal.bounds.layer != sel.selected_layer || cal.bounds.mode != lib.mode) {
      throw Error(ErrorCode::calibration_failure, "trait '" + t + "': calibration is stale; rerun 'calibrate'");
    }
    lib.traits[t] = LibraryEntry{std::move(vec), cal.bounds};
  }
  save_library(lib, checkpoint::library_path(ctx.out));
  say(ctx, "wrote " + checkpoint::library_path(ctx.out).string() + " (library " + library_id(lib) + ", layer " +
               std::to_string(lib.selected_layer) + ")");
  if (ctx.structured()) {
    std::cout << ojson{{"library", checkpoint::library_path(ctx.out).string()},
                       {"library_id", library_id(lib)},
                       {"selected_layer", lib.selected_layer}}
                     .dump(2)
              << "\n";
  }
}

PersonaLibrary load_cli_library(const Context& ctx) {
  const fs::path path = ctx.opt.library.empty() ? checkpoint::library_path(ctx.out) : fs::path(ctx.opt.library);
  if (!fs::exists(path)) {
    throw Error(ErrorCode::not_found, "no library at " + path.string() + "; run 'build-library' or pass --library");
  }
  return load_library(path);
}

void run_validate(Context& ctx) {
  const auto lib = load_cli_library(ctx);
  ojson doc;
  doc["library_id"] = library_id(lib);
  doc["selected_layer"] = lib.selected_layer;
  doc["projection_mode"] = to_string(lib.mode);
  doc["traits"] = ojson::array();

  struct Row {
    std::string trait;
    RegressionResult fit;
    ojson points;
  };
  std::vector<Row> rows;
  for (const auto& dim : lib.registry.dimensions()) {
    const auto& entry = lib.entry(dim.id);
    Row row{dim.id, {}, ojson::array()};
    std::vector<double> xs, ys;
    for (int level = 1; level <= 5; ++level) {
      for (int s = 0; s < ctx.cfg.leveled_per_level; ++s) {
        const auto text = ctx.gateway().generate_leveled_prompt(dim.id, level, s);
        const auto raw = raw_score(ctx.backend().prompt_activations(text), entry.vector, lib.selected_layer, lib.mode);
        xs.push_back(level);
        ys.push_back(raw.value);
        row.points.push_back({{"level", level}, {"raw", raw.value}, {"rescaled", rescale(raw, entry.bounds).value}});
      }
    }
    row.fit = linear_fit(xs, ys);
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.fit.r_squared > b.fit.r_squared; });
  bool below = false;
  for (const auto& r : rows) {
    ojson t;
    t["trait"] = r.trait;
    t["r_squared"] = r.fit.r_squared;
    t["slope"] = r.fit.slope;
    t["intercept"] = r.fit.intercept;
    t["n"] = r.fit.n;
    t["points"] = r.points;
    doc["traits"].push_back(std::move(t));
    if (ctx.opt.min_r2 && r.fit.r_squared < *ctx.opt.min_r2) below = true;
  }
  checkpoint::write(checkpoint::validation_path(ctx.out), doc);
  if (ctx.structured()) {
    std::cout << doc.dump(2) << "\n";
  } else {
    for (const auto& r : rows) {
      std::printf("%-14s R^2 %.6f  slope %+.6f  intercept %+.6f\n", r.trait.c_str(), r.fit.r_squared, r.fit.slope,
                  r.fit.intercept);
    }
  }
  if (below) {
    throw Error(ErrorCode::calibration_failure, "at least one trait has R^2 below " + std::to_string(*ctx.opt.min_r2));
  }
}

void run_score(Context& ctx) {
  std::string prompt = ctx.opt.prompt;
  if (!ctx.opt.prompt_file.empty()) {
    if (!prompt.empty()) throw Error(ErrorCode::config_error, "pass either a prompt or --file, not both");
    try {
      prompt = io::read_file(ctx.opt.prompt_file);
    } catch (const Error& e) {
      throw Error(ErrorCode::config_error, e.what());
    }
    while (!prompt.empty() && (prompt.back() == '\n' || prompt.back() == '\r')) prompt.pop_back();
  }
  if (prompt.empty()) throw Error(ErrorCode::config_error, "no prompt given");
  const auto lib = load_cli_library(ctx);
  const auto report = score_all(prompt, lib, ctx.backend(), utc_timestamp());
  if (ctx.structured()) {
    std::cout << to_json(report).dump(2) << "\n";
  } else {
    std::cout << render_human(report, lib.registry);
  }
}

template <typename Server>
void serve_until_signal(Server& server, const std::string& host, int port, const std::string& what) {
  if (!server.bind(host, port)) throw Error(ErrorCode::config_error, "cannot bind " + host + ":" + std::to_string(port));
  static Server* active = nullptr;
  active = &server;
  std::signal(SIGINT, [](int) { active->stop(); });
  std::signal(SIGTERM, [](int) { active->stop(); });
  std::cerr << what << " listening on " << host << ":" << port << std::endl;
  server.listen_after_bind();
}

void run_serve(Context& ctx) {
  auto sc = ctx.cfg.service;
  sc.apply_env_overrides();
  if (!ctx.opt.host.empty()) sc.host = ctx.opt.host;
  if (ctx.opt.port) sc.port = ctx.opt.port;
  if (!ctx.opt.library.empty()) sc.library_path = ctx.opt.library;
  if (sc.library_path.empty()) sc.library_path = checkpoint::library_path(ctx.out).string();
  if (!fs::exists(sc.library_path)) throw Error(ErrorCode::config_error, "no library at " + sc.library_path);
  auto lib = load_library(sc.library_path);

  std::shared_ptr<const ActivationBackend> backend;
  if (!sc.backend_url.empty()) {
    backend = std::make_shared<RemoteBackend>(sc.backend_url);
  } else {
    backend = std::make_shared<SyntheticBackend>(synthetic_config_for(sc.synthetic_config_path, ctx.cfg));
  }
  auto store = std::make_shared<SessionStore>(sc.session_dir, utc_timestamp, sc.snapshot_every);
  PersonaService service(std::move(lib), backend, store, sc, utc_timestamp);
  serve_until_signal(service, sc.host, sc.port, "persona service");
}

void run_backend_serve(Context& ctx) {
  auto cfg = synthetic_config_for(ctx.cfg.backend_synthetic_config, ctx.cfg);
  SyntheticBackend backend(cfg);
  WireServer server(backend);
  serve_until_signal(server, ctx.opt.host.empty() ? "127.0.0.1" : ctx.opt.host, ctx.opt.port ? ctx.opt.port : 8081,
                     "synthetic backend " + backend.descriptor().model_name);
}

int exit_code_for(ErrorCode code) {
  if (is_upstream(code)) return kUpstream;
  switch (code) {
    case ErrorCode::config_error:
    case ErrorCode::not_found:
      return kConfig;
    default:
      return kValidation;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Persona vector pipeline, scoring and studio service"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Options opt;
  app.add_option("--config", opt.config, "run configuration file")->capture_default_str();
  app.add_option("--traits", opt.traits, "comma-separated trait dimensions (default: all)");
  app.add_option("--jobs", opt.jobs, "parallel requests per phase")->check(CLI::Range(1, 256))->capture_default_str();
  app.add_option("--seed", opt.seed, "override the synthetic seed");
  app.add_option("--replay", opt.replay, "serve generator and judge completions from this fixture directory");
  app.add_option("--record", opt.record, "record generator and judge completions into this directory");
  app.add_option("--out", opt.out, "checkpoint and output directory")->capture_default_str();
  app.add_option("--format", opt.format, "output format")->check(CLI::IsMember({"human", "structured"}))->capture_default_str();

  std::map<std::string, std::function<void(Context&)>> phases;
  auto* dataset = app.add_subcommand("dataset", "generate prompts and collect judged responses");
  dataset->add_option("--pairs", opt.pairs, "contrastive prompt pairs per trait");
  dataset->add_option("--situations", opt.situations, "situation questions per trait");
  phases["dataset"] = run_dataset;
  phases["extract"] = run_extract;
  app.add_subcommand("extract", "filter responses and extract persona vectors");
  phases["select-layer"] = run_select_layer;
  app.add_subcommand("select-layer", "score leveled prompts and pick the layer with the highest mean R^2");
  phases["calibrate"] = run_calibrate;
  app.add_subcommand("calibrate", "compute rescaling bounds from extremal prompts");
  auto* build = app.add_subcommand("build-library", "run any missing phases and write the persona library");
  build->add_option("--pairs", opt.pairs, "contrastive prompt pairs per trait");
  build->add_option("--situations", opt.situations, "situation questions per trait");
  phases["build-library"] = run_build_library;
  auto* validate = app.add_subcommand("validate", "regression report of leveled prompts against the library");
  validate->add_option("--library", opt.library, "library file (default: <out>/library.json)");
  validate->add_option("--min-r2", opt.min_r2, "fail when any trait's R^2 is below this");
  phases["validate"] = run_validate;
  auto* score = app.add_subcommand("score", "score a system prompt");
  score->add_option("prompt", opt.prompt, "system prompt text");
  score->add_option("--file", opt.prompt_file, "read the system prompt from a file");
  score->add_option("--library", opt.library, "library file (default: <out>/library.json)");
  phases["score"] = run_score;
  auto* serve = app.add_subcommand("serve", "run the studio HTTP service");
  serve->add_option("--host", opt.host, "listen address");
  serve->add_option("--port", opt.port, "listen port");
  serve->add_option("--library", opt.library, "library file");
  phases["serve"] = run_serve;
  auto* backend_serve = app.add_subcommand("backend-serve", "serve the synthetic backend over the wire protocol");
  backend_serve->add_option("--host", opt.host, "listen address");
  backend_serve->add_option("--port", opt.port, "listen port (default 8081)");
  phases["backend-serve"] = run_backend_serve;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  const std::string phase = app.get_subcommands().front()->get_name();
  try {
    Context ctx;
    ctx.opt = opt;
    ctx.cfg = load_studio_config(opt.config);
    ctx.cfg.seed_override = opt.seed;
    try {
      ctx.registry = load_registry_file(ctx.cfg.registry_path);
    } catch (const Error& e) {
      throw Error(ErrorCode::config_error, e.what());
    }
    ctx.out = opt.out;
    phases.at(phase)(ctx);
    return kOk;
  } catch (const Error& e) {
    std::cerr << "persona " << phase << ": " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "persona " << phase << ": " << e.what() << "\n";
    return kValidation;
  }
}
