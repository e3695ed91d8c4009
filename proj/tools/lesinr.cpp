// Command-line front end: synth, train, predict, fewshot, eval, ground, serve.
//
// Exit codes: 0 success, 1 usage or configuration, 2 data or format, 3 numeric.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <regex>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lesinr/data/embedding_client.hpp"
#include "lesinr/data/synthetic.hpp"
#include "lesinr/eval.hpp"
#include "lesinr/fewshot.hpp"
#include "lesinr/service.hpp"
#include "lesinr/training.hpp"

namespace fs = std::filesystem;
using namespace lesinr;

namespace {

struct Common {
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string grid;
  std::string out;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    throw ConfigError("cannot write " + p.string());
  }
}

geo::Grid parse_grid(const std::string& text, std::uint32_t w = 96, std::uint32_t h = 48) {
  if (!text.empty()) {
    static const std::regex re(R"((\d+)x(\d+))");
    std::smatch m;
    if (!std::regex_match(text, m, re)) throw ConfigError("--grid must look like WxH, got '" + text + "'");
    w = static_cast<std::uint32_t>(std::stoul(m[1]));
    h = static_cast<std::uint32_t>(std::stoul(m[2]));
  }
  return geo::Grid(w, h, geo::BoundingBox::global());
}

std::vector<std::uint32_t> parse_ids(const std::string& text) {
  std::vector<std::uint32_t> ids;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      ids.push_back(static_cast<std::uint32_t>(std::stoul(item)));
    } catch (const std::exception&) {
      throw ConfigError("'" + item + "' is not a species id");
    }
  }
  return ids;
}

// Raster output by extension: .png (viridis over [lo, hi]) or the raster file format.
void write_raster(const geo::RangeRaster& r, const fs::path& out, float lo, float hi) {
  if (out.empty()) throw ConfigError("--out is required");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  if (out.extension() == ".png") {
    eval::write_png(r, out, lo, hi);
  } else {
    r.save(out);
  }
}

std::pair<float, float> value_range(const geo::RangeRaster& r) {
  float lo = INFINITY, hi = -INFINITY;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!r.valid[i]) continue;
    lo = std::min(lo, r.values[i]);
    hi = std::max(hi, r.values[i]);
  }
  if (!(hi > lo)) hi = lo + 1.0f;
  return {lo, hi};
}

// Text input shared by predict, fewshot and ground.
struct TextSource {
  std::string embeddings;
  std::uint32_t species = 0;
  std::string kind = "range_summary";
  std::string text;
  std::string embed_url;

  void add(CLI::App* app, bool required_any = true) {
    app->add_option("--embeddings", embeddings, "Embedding store (.lese) holding the species' text");
    app->add_option("--species", species, "Species id to look up in --embeddings");
    app->add_option("--kind", kind, "Record kind: range_summary, habitat_summary or section")
        ->check(CLI::IsMember({"range_summary", "habitat_summary", "section"}));
    app->add_option("--text", text, "Free text, embedded through the external embedding service");
    app->add_option("--embed-url", embed_url, "Embedding service URL (default: $LESINR_EMBED_URL)");
    (void)required_any;
  }

  bool given() const { return !embeddings.empty() || !text.empty(); }

  std::vector<float> resolve(std::uint32_t expected_dim) const {
    if (!embeddings.empty() && !text.empty()) throw ConfigError("give either --embeddings/--species or --text");
    if (!embeddings.empty()) {
      const auto store = data::EmbeddingStore::load(embeddings);
      const auto* rec = store.find(species, data::parse_kind(kind));
      if (!rec) throw LookupError("no " + kind + " record for species " + std::to_string(species) + " in " + embeddings);
      return rec->vector;
    }
    if (text.empty()) throw ConfigError("need --embeddings with --species, or --text");
    data::EmbeddingClientConfig c;
    c.url = embed_url;
    if (c.url.empty()) {
      if (const char* env = std::getenv("LESINR_EMBED_URL")) c.url = env;
    }
    if (c.url.empty()) {
      throw ConfigError("--text needs an embedding service: pass --embed-url URL or set LESINR_EMBED_URL");
    }
    c.expected_dim = expected_dim;
    data::EmbeddingClient client(c);
    return client.fetch(text);
  }
};

std::optional<geo::CovariateStack> covariates_for(const model::Model<float>& m, const std::string& path) {
  if (m.config().env_channels == 0) return std::nullopt;
  if (path.empty()) throw ConfigError("checkpoint uses environmental covariates; pass --covariates");
  return geo::CovariateStack::load(path);
}

int cmd_synth(const Common& common, const std::string& spec_path) {
  auto spec = spec_path.empty() ? data::SyntheticWorldSpec{} : data::SyntheticWorldSpec::from_json(read_file(spec_path));
  if (common.seed_set) spec.seed = common.seed;
  if (!common.grid.empty()) {
    const auto g = parse_grid(common.grid);
    spec.grid_width = g.width;
    spec.grid_height = g.height;
  }
  if (common.out.empty()) throw ConfigError("--out DIR is required");
  const auto world = data::generate_synthetic_world(spec);
  world.save(common.out);
  std::printf("synthetic world: %zu species (%zu held out), %zu observations -> %s\n", world.species.size(),
              world.held_out_ids().size(), world.observations.size(), common.out.c_str());
  return 0;
}

struct TrainArgs {
  std::string world, observations, embeddings, covariates, held_out, config, report;
  std::optional<std::uint32_t> epochs, batch_size, negatives, cap;
  std::optional<double> lr, lambda_pos;
  bool env = false, no_text = false;
};

int cmd_train(const Common& common, const TrainArgs& a) {
  auto c = a.config.empty() ? training::TrainConfig{} : training::TrainConfig::from_json(read_file(a.config));
  if (common.seed_set) c.seed = common.seed;
  if (a.epochs) c.epochs = *a.epochs;
  if (a.batch_size) c.batch_size = *a.batch_size;
  if (a.negatives) c.negatives = *a.negatives;
  if (a.lr) c.learning_rate = *a.lr;
  if (a.lambda_pos) c.lambda_pos = *a.lambda_pos;
  if (a.env) c.use_env = true;
  if (a.no_text) c.text_branch = false;
  c.validate();
  if (common.out.empty()) throw ConfigError("--out CHECKPOINT is required");

  std::vector<data::ObservationRecord> records;
  std::optional<data::EmbeddingStore> text;
  std::optional<geo::CovariateStack> cov;
  std::set<std::uint32_t> held;
  if (!a.world.empty()) {
    if (!a.observations.empty()) throw ConfigError("give either --world or --observations");
    auto world = data::SyntheticWorld::load(a.world);
    records = std::move(world.observations);
    text = std::move(world.embeddings);
    cov = std::move(world.climate);
    for (auto id : world.held_out_ids()) held.insert(id);
  } else {
    if (a.observations.empty()) throw ConfigError("need --world DIR or --observations FILE");
    records = data::read_observations(a.observations);
    if (!a.embeddings.empty()) text = data::EmbeddingStore::load(a.embeddings);
    if (!a.covariates.empty()) cov = geo::CovariateStack::load(a.covariates);
  }
  for (auto id : parse_ids(a.held_out)) held.insert(id);
  const auto split = data::split_observations(records, {.cap = a.cap.value_or(1000), .seed = c.seed, .held_out = held});
  training::Trainer<float> trainer(c, split.train, text ? &*text : nullptr, cov ? &*cov : nullptr);
  std::printf("training on %zu observations of %zu species (%zu held out)\n", split.train.size(),
              trainer.model().species_count(), held.size());
  const auto report = trainer.train(common.out, a.report);
  for (const auto& n : report.notes) std::printf("note: %s\n", n.c_str());
  for (const auto& e : report.epochs) {
    std::printf("epoch %u token_loss %.5f text_loss %.5f %.0f obs/s\n", e.epoch, e.token_loss, e.text_loss,
                e.observations_per_second);
  }
  std::printf("checkpoint -> %s\n", common.out.c_str());
  return 0;
}

int cmd_predict(const Common& common, const std::string& checkpoint, const TextSource& src,
                const std::string& covariates) {
  const auto m = model::load_checkpoint<float>(checkpoint);
  const auto v = src.resolve(m.config().text_dim);
  const auto cov = covariates_for(m, covariates);
  const auto grid = eval::feature_grid(m, parse_grid(common.grid), cov ? &*cov : nullptr);
  const auto r = eval::zero_shot_raster(m, grid, v);
  write_raster(r, common.out, 0.0f, 1.0f);
  std::printf("zero-shot raster %ux%u -> %s\n", r.grid.width, r.grid.height, common.out.c_str());
  return 0;
}

struct FewShotArgs {
  std::string checkpoint, observations, train_observations, covariates, fit_json;
  double lambda = 20.0;
  std::uint32_t negatives = 20000;
  std::uint32_t max_iterations = 500;
};

int cmd_fewshot(const Common& common, const FewShotArgs& a, const TextSource& src) {
  const auto m = model::load_checkpoint<float>(a.checkpoint);
  const auto obs = data::read_observations(a.observations);
  if (obs.empty()) throw ConfigError("few-shot fitting needs at least one observation in " + a.observations);
  const auto cov = covariates_for(m, a.covariates);
  const auto* covp = cov ? &*cov : nullptr;

  fewshot::FewShotConfig fc;
  fc.lambda = a.lambda;
  fc.negatives = a.negatives;
  fc.max_iterations = a.max_iterations;
  fc.seed = common.seed;
  if (src.given()) {
    const auto w = m.text_species_embedding(src.resolve(m.config().text_dim));
    fc.prior = std::vector<double>(w.data().begin(), w.data().end());
  }
  const auto train = a.train_observations.empty() ? std::vector<data::ObservationRecord>{}
                                                  : data::read_observations(a.train_observations);
  Rng rng(common.seed);
  const auto neg = fewshot::sample_fewshot_negatives(train, a.negatives, rng);
  if (neg.fallback) std::printf("note: no training observations given; all negatives are sphere-uniform\n");
  std::vector<geo::GeoPoint> pts;
  for (const auto& o : obs) pts.push_back(o.location());
  const auto fit = fewshot::fit_logreg(eval::point_features(m, pts, covp), eval::point_features(m, neg.points, covp), fc);
  const auto grid = eval::feature_grid(m, parse_grid(common.grid), covp);
  write_raster(eval::weight_raster(grid, fit.w), common.out, 0.0f, 1.0f);
  std::printf("fit: n_p=%zu converged=%d iterations=%u objective=%.6f gradient_norm=%.2e -> %s\n", obs.size(),
              fit.converged, fit.iterations, fit.objective, fit.gradient_norm, common.out.c_str());
  if (!a.fit_json.empty()) {
    const nlohmann::json j{{"converged", fit.converged},
                           {"iterations", fit.iterations},
                           {"objective", fit.objective},
                           {"gradient_norm", fit.gradient_norm},
                           {"observations", obs.size()},
                           {"negatives", neg.fallback ? "uniform_fallback" : "uniform_and_observed"}};
    write_file(a.fit_json, j.dump(2) + "\n");
  }
  return 0;
}

struct EvalArgs {
  std::string checkpoint, world, split = "held-out", conditions, shots = "1,5", csv;
  std::uint32_t seeds = 1;
  std::uint32_t negatives = 20000;
  bool area_weighted = false;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_eval(const Common& common, const EvalArgs& a) {
  if (a.world.empty()) throw ConfigError("--world DIR is required");
  if (common.out.empty()) throw ConfigError("--out REPORT.json is required");
  const auto m = model::load_checkpoint<float>(a.checkpoint);
  const auto world = data::SyntheticWorld::load(a.world);
  const auto split = eval::split_world(world);
  std::vector<std::string> notes;
  const auto tasks = eval::world_tasks(world, split, a.split == "seen", &notes);
  eval::BenchmarkConfig bc;
  // Seen species have tokens but no held-back observations; held-out species the reverse.
  if (!a.conditions.empty()) {
    bc.conditions = split_list(a.conditions);
  } else if (a.split == "seen") {
    bc.conditions = {eval::condition::kConstant, eval::condition::kModelMean, eval::condition::kHabitat,
                     eval::condition::kRange, eval::condition::kToken};
  } else {
    bc.conditions = {eval::condition::kConstant, eval::condition::kModelMean,    eval::condition::kHabitat,
                     eval::condition::kRange,    eval::condition::kFewShotPrior, eval::condition::kFewShotNone};
  }
  bc.shots.clear();
  for (auto n : parse_ids(a.shots)) bc.shots.push_back(n);
  bc.seeds.clear();
  for (std::uint32_t s = 0; s < a.seeds; ++s) bc.seeds.push_back(common.seed + s);
  bc.fewshot_negatives = a.negatives;
  bc.area_weighted = a.area_weighted;
  bc.validate();
  const auto* cov = m.config().env_channels > 0 ? &world.climate : nullptr;
  auto report = eval::run_benchmark(m, tasks, bc, {.train_observations = &split.train, .covariates = cov});
  report.notes.insert(report.notes.begin(), notes.begin(), notes.end());
  write_file(common.out, report.to_json());
  if (!a.csv.empty()) write_file(a.csv, report.to_csv());
  for (const auto& r : report.results) {
    if (r.shots == 0) {
      std::printf("%-22s MAP %.4f\n", r.condition.c_str(), r.map);
    } else {
      std::printf("%-22s n_p=%-3u seed=%-3llu MAP %.4f\n", r.condition.c_str(), r.shots,
                  static_cast<unsigned long long>(r.seed), r.map);
    }
  }
  for (const auto& n : report.notes) std::printf("note: %s\n", n.c_str());
  std::printf("report -> %s\n", common.out.c_str());
  return 0;
}

int cmd_ground(const Common& common, const std::string& checkpoint, const TextSource& src, const std::string& world_dir,
               std::optional<std::uint32_t> field_index, const std::string& covariates) {
  const auto m = model::load_checkpoint<float>(checkpoint);
  std::vector<float> v;
  std::optional<data::SyntheticWorld> world;
  if (field_index) {
    if (world_dir.empty()) throw ConfigError("--concept needs --world");
    world = data::SyntheticWorld::load(world_dir);
    const auto* rec = world->concepts.find(*field_index, data::TextKind::section);
    if (!rec) throw LookupError("world has no concept query for field " + std::to_string(*field_index));
    v = rec->vector;
  } else {
    v = src.resolve(m.config().text_dim);
  }
  const auto cov = covariates_for(m, covariates);
  const auto grid = eval::feature_grid(m, parse_grid(common.grid), cov ? &*cov : nullptr);
  const auto r = eval::ground_text_raster(m, grid, v);
  const auto [lo, hi] = value_range(r);
  write_raster(r, common.out, lo, hi);
  std::printf("grounding raster %ux%u, range [%.4f, %.4f] -> %s\n", r.grid.width, r.grid.height, lo, hi,
              common.out.c_str());
  if (world) {
    std::vector<double> field(r.size());
    for (std::size_t i = 0; i < field.size(); ++i) field[i] = data::standardized_climate(world->climate, *field_index, i);
    if (grid.grid == world->climate.grid()) {
      std::printf("top-decile overlap with field %u top quartile: %.3f\n", *field_index,
                  eval::top_decile_overlap(r.values, field));
    }
  }
  return 0;
}

struct ServeArgs {
  std::string config, checkpoint, host, embed_url, train_observations, covariates;
  std::optional<std::uint16_t> port;
  std::optional<std::uint32_t> workers;
};

int cmd_serve(const Common& common, const ServeArgs& a) {
  auto c = a.config.empty() ? service::ServiceConfig{} : service::ServiceConfig::load(a.config);
  if (!a.checkpoint.empty()) c.checkpoint = a.checkpoint;
  if (!a.host.empty()) c.host = a.host;
  if (a.port) c.port = *a.port;
  if (a.workers) c.workers = *a.workers;
  if (!a.embed_url.empty()) c.embedding.url = a.embed_url;
  if (!a.train_observations.empty()) c.train_observations = a.train_observations;
  if (!a.covariates.empty()) c.covariates = a.covariates;
  if (!common.grid.empty()) {
    const auto g = parse_grid(common.grid);
    c.grid_width = g.width;
    c.grid_height = g.height;
  }
  if (common.seed_set) c.seed = common.seed;
  if (c.checkpoint.empty()) throw ConfigError("serve needs a checkpoint (--checkpoint or 'checkpoint' in --config)");
  service::Service s(c);
  s.load();
  service::serve(s);
  return 0;
}

int fail(int code, const char* kind, const std::string& what) {
  std::fprintf(stderr, "lesinr: %s: %s\n", kind, what.c_str());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Location-text species range models: training, zero-shot and few-shot range maps"};
  app.require_subcommand(1);
  Common common;

  auto add_common = [&](CLI::App* sub, bool grid, bool out) {
    sub->add_option_function<std::uint64_t>(
        "--seed",
        [&](const std::uint64_t& s) {
          common.seed = s;
          common.seed_set = true;
        },
        "Random seed");
    if (grid) sub->add_option("--grid", common.grid, "Output grid as WxH (default 96x48)");
    if (out) sub->add_option("--out", common.out, "Output path");
  };

  std::string spec_path;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic world from a spec file");
  synth->add_option("--spec", spec_path, "Synthetic world spec (JSON); defaults when omitted")->check(CLI::ExistingFile);
  add_common(synth, true, true);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a checkpoint from observations and text embeddings");
  train->add_option("--world", ta.world, "Synthetic world directory (observations, text, held-out split)");
  train->add_option("--observations", ta.observations, "Observations (.csv or .leso)");
  train->add_option("--embeddings", ta.embeddings, "Text embedding store (.lese)");
  train->add_option("--covariates", ta.covariates, "Covariate stack (.lesc)");
  train->add_option("--held-out", ta.held_out, "Comma-separated species ids to exclude");
  train->add_option("--config", ta.config, "Training config (JSON)");
  train->add_option("--epochs", ta.epochs, "Epochs");
  train->add_option("--batch-size", ta.batch_size, "Observations per step");
  train->add_option("--negatives", ta.negatives, "Negatives per location (M)");
  train->add_option("--lr", ta.lr, "Learning rate");
  train->add_option("--lambda-pos", ta.lambda_pos, "Positive weight");
  train->add_option("--cap", ta.cap, "Maximum observations per species");
  train->add_option("--report", ta.report, "Per-epoch JSON lines report");
  train->add_flag("--env", ta.env, "Append covariates to the location input");
  train->add_flag("--no-text", ta.no_text, "Train the token branch only");
  add_common(train, false, true);

  std::string checkpoint, covariates;
  TextSource text;
  auto* predict = app.add_subcommand("predict", "Zero-shot range raster from text");
  predict->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  predict->add_option("--covariates", covariates, "Covariate stack for +Env checkpoints");
  text.add(predict);
  add_common(predict, true, true);

  FewShotArgs fa;
  auto* few = app.add_subcommand("fewshot", "Few-shot range raster from observations and an optional text prior");
  few->add_option("--checkpoint", fa.checkpoint, "Model checkpoint")->required();
  few->add_option("--observations", fa.observations, "Presence observations (.csv or .leso)")->required();
  few->add_option("--train-observations", fa.train_observations, "Training observations for data-drawn negatives");
  few->add_option("--covariates", fa.covariates, "Covariate stack for +Env checkpoints");
  few->add_option("--lambda", fa.lambda, "Regularization strength")->check(CLI::NonNegativeNumber);
  few->add_option("--negatives", fa.negatives, "Number of negatives")->check(CLI::Range(2u, 1000000u));
  few->add_option("--max-iterations", fa.max_iterations, "Solver iteration cap");
  few->add_option("--fit-json", fa.fit_json, "Write fit diagnostics as JSON");
  text.add(few);
  add_common(few, true, true);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Benchmark a checkpoint on a synthetic world");
  ev->add_option("--checkpoint", ea.checkpoint, "Model checkpoint")->required();
  ev->add_option("--world", ea.world, "Synthetic world directory");
  ev->add_option("--split", ea.split, "held-out or seen species")->check(CLI::IsMember({"held-out", "seen"}));
  ev->add_option("--conditions", ea.conditions, "Comma-separated conditions");
  ev->add_option("--shots", ea.shots, "Comma-separated few-shot sizes");
  ev->add_option("--seeds", ea.seeds, "Number of few-shot sampling seeds, starting at --seed");
  ev->add_option("--negatives", ea.negatives, "Few-shot negatives");
  ev->add_option("--csv", ea.csv, "Per-species AP table");
  ev->add_flag("--area-weighted", ea.area_weighted, "Weight cells by area");
  add_common(ev, false, true);

  std::string world_dir;
  std::optional<std::uint32_t> field_index;
  auto* ground = app.add_subcommand("ground", "Inner-product raster between location features and a text embedding");
  ground->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  ground->add_option("--world", world_dir, "Synthetic world (with --field_index)");
  ground->add_option("--concept", field_index, "Climate field index of the world's concept query");
  ground->add_option("--covariates", covariates, "Covariate stack for +Env checkpoints");
  text.add(ground);
  add_common(ground, true, true);

  ServeArgs sa;
  auto* serve = app.add_subcommand("serve", "Start the HTTP service");
  serve->add_option("--config", sa.config, "Service config (JSON)");
  serve->add_option("--checkpoint", sa.checkpoint, "Model checkpoint");
  serve->add_option("--host", sa.host, "Listen address");
  serve->add_option("--port", sa.port, "Listen port");
  serve->add_option("--workers", sa.workers, "Request worker threads");
  serve->add_option("--embed-url", sa.embed_url, "Embedding service URL");
  serve->add_option("--train-observations", sa.train_observations, "Training observations for few-shot negatives");
  serve->add_option("--covariates", sa.covariates, "Covariate stack for +Env checkpoints");
  add_common(serve, true, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 1;
  }

  try {
    if (*synth) return cmd_synth(common, spec_path);
    if (*train) return cmd_train(common, ta);
    if (*predict) return cmd_predict(common, checkpoint, text, covariates);
    if (*few) return cmd_fewshot(common, fa, text);
    if (*ev) return cmd_eval(common, ea);
    if (*ground) return cmd_ground(common, checkpoint, text, world_dir, field_index, covariates);
    if (*serve) return cmd_serve(common, sa);
  } catch (const ConfigError& e) {
    return fail(1, "usage", e.what());
  } catch (const NumericError& e) {
    return fail(3, "numeric", e.what());
  } catch (const Error& e) {
    return fail(2, "data", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(2, "data", e.what());
  } catch (const std::exception& e) {
    return fail(2, "data", e.what());
  }
  return 1;
}
