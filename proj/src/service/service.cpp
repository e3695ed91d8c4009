#include "lesinr/service.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>

#include "httplib.h"
#include "json.hpp"
#include "lesinr/fewshot.hpp"
#include "lesinr/io/hash.hpp"

namespace lesinr::service {

using json = nlohmann::json;

namespace {

constexpr std::uint32_t kMaxNegatives = 200000;
constexpr std::size_t kMaxObservations = 10000;

// An error that maps straight onto an HTTP status.
struct HttpError {
  int status;
  std::string message;
};

Response json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

Response error_response(int status, const std::string& message) {
  return json_response(status, json{{"error", message}, {"status", status}});
}

json parse_body(const std::string& body) {
  try {
    auto j = json::parse(body);
    if (!j.is_object()) throw HttpError{400, "request body must be a JSON object"};
    return j;
  } catch (const json::exception& e) {
    throw HttpError{400, std::string("malformed JSON body: ") + e.what()};
  }
}

std::optional<std::vector<float>> optional_vector(const json& body) {
  if (!body.contains("vector") || body.at("vector").is_null()) return std::nullopt;
  const auto& v = body.at("vector");
  if (!v.is_array()) throw HttpError{400, "'vector' must be an array of numbers"};
  std::vector<float> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) throw HttpError{400, "'vector' must be an array of numbers"};
    const double d = x.get<double>();
    if (!std::isfinite(d)) throw HttpError{400, "'vector' holds a non-finite value"};
    out.push_back(static_cast<float>(d));
  }
  return out;
}

std::optional<std::string> optional_text(const json& body) {
  if (!body.contains("text") || body.at("text").is_null()) return std::nullopt;
  if (!body.at("text").is_string()) throw HttpError{400, "'text' must be a string"};
  auto t = body.at("text").get<std::string>();
  if (t.empty()) throw HttpError{400, "'text' must not be empty"};
  return t;
}

template <typename U>
U number_or(const json& body, const char* key, U fallback) {
  if (!body.contains(key) || body.at(key).is_null()) return fallback;
  const auto& v = body.at(key);
  if (!v.is_number()) throw HttpError{400, std::string("'") + key + "' must be a number"};
  if constexpr (std::is_integral_v<U>) {
    if (!v.is_number_integer() || v.get<double>() < 0) {
      throw HttpError{400, std::string("'") + key + "' must be a non-negative integer"};
    }
  }
  return v.get<U>();
}

json raster_stats(const geo::RangeRaster& r) {
  double lo = INFINITY, hi = -INFINITY, sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!r.valid[i]) continue;
    lo = std::min<double>(lo, r.values[i]);
    hi = std::max<double>(hi, r.values[i]);
    sum += r.values[i];
    ++n;
  }
  if (n == 0) return json{{"valid_cells", 0}};
  return json{{"min", lo}, {"max", hi}, {"mean", sum / static_cast<double>(n)}, {"valid_cells", n}};
}

std::pair<std::uint32_t, std::uint32_t> parse_grid(const std::string& text) {
  static const std::regex re(R"((\d+)x(\d+))");
  std::smatch m;
  if (!std::regex_match(text, m, re)) throw ConfigError("grid must look like WxH, got '" + text + "'");
  const auto w = std::stoul(m[1]), h = std::stoul(m[2]);
  if (w == 0 || h == 0 || w > 100000 || h > 100000) throw ConfigError("grid dimensions out of range: " + text);
  return {static_cast<std::uint32_t>(w), static_cast<std::uint32_t>(h)};
}

struct Negatives {
  numkit::Tensor<float> features;
  std::vector<double> curvature;
  bool fallback = false;
};

}  // namespace

struct Snapshot {
  explicit Snapshot(model::Model<float> m) : model(std::move(m)) {}

  model::Model<float> model;
  eval::FeatureGrid<float> grid;
  std::string checkpoint_hash;
  std::mutex negatives_mutex;
  std::map<std::uint32_t, std::shared_ptr<const Negatives>> negatives;
};

void ServiceConfig::validate() const {
  if (grid_width == 0 || grid_height == 0) throw ConfigError("service grid must be at least 1x1");
  if (workers == 0) throw ConfigError("service needs at least one worker");
  if (cache_capacity == 0) throw ConfigError("raster cache capacity must be positive");
}

std::string ServiceConfig::to_json() const {
  return json{{"host", host},
              {"port", port},
              {"checkpoint", checkpoint.string()},
              {"grid", std::to_string(grid_width) + "x" + std::to_string(grid_height)},
              {"train_observations", train_observations.string()},
              {"covariates", covariates.string()},
              {"embedding_url", embedding.url},
              {"auth_token_env", embedding.auth_token_env},
              {"embedding_dim", embedding.expected_dim},
              {"embedding_cache_dir", embedding.cache_dir.string()},
              {"workers", workers},
              {"seed", seed},
              {"cache_capacity", cache_capacity}}
      .dump(2);
}

ServiceConfig ServiceConfig::from_json(std::string_view text) {
  ServiceConfig c;
  try {
    const auto j = json::parse(text);
    if (!j.is_object()) throw ConfigError("service config must be a JSON object");
    const auto known = json::parse(c.to_json());
    for (const auto& [key, _] : j.items()) {
      if (!known.contains(key)) throw ConfigError("unknown service config key '" + key + "'");
    }
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    auto get_path = [&](const char* key, std::filesystem::path& field) {
      if (j.contains(key)) field = j.at(key).get<std::string>();
    };
    get("host", c.host);
    get("port", c.port);
    get_path("checkpoint", c.checkpoint);
    if (j.contains("grid")) std::tie(c.grid_width, c.grid_height) = parse_grid(j.at("grid").get<std::string>());
    get_path("train_observations", c.train_observations);
    get_path("covariates", c.covariates);
    get("embedding_url", c.embedding.url);
    get("auth_token_env", c.embedding.auth_token_env);
    get("embedding_dim", c.embedding.expected_dim);
    get_path("embedding_cache_dir", c.embedding.cache_dir);
    get("workers", c.workers);
    get("seed", c.seed);
    get("cache_capacity", c.cache_capacity);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad service config: ") + e.what());
  }
  c.validate();
  return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read service config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

Service::Service(ServiceConfig config, data::Transport transport)
    : config_(std::move(config)), client_(config_.embedding, std::move(transport)) {
  config_.validate();
}

Service::~Service() = default;

void Service::load() {
  if (!config_.covariates.empty()) covariates_ = geo::CovariateStack::load(config_.covariates);
  if (!config_.train_observations.empty()) set_train_observations(data::read_observations(config_.train_observations));
  if (!config_.checkpoint.empty()) set_model(model::load_checkpoint<float>(config_.checkpoint));
}

void Service::set_model(model::Model<float> model) {
  if (model.config().env_channels > 0) {
    if (!covariates_) throw ConfigError("checkpoint uses environmental covariates; configure 'covariates'");
    if (covariates_->channels() != model.config().env_channels) {
      throw DimensionError("covariate stack has " + std::to_string(covariates_->channels()) +
                           " channels, checkpoint expects " + std::to_string(model.config().env_channels));
    }
  }
  const auto* cov = model.config().env_channels > 0 ? &*covariates_ : nullptr;
  const geo::Grid grid(config_.grid_width, config_.grid_height, geo::BoundingBox::global());
  auto snap = std::make_shared<Snapshot>(std::move(model));
  snap->grid = eval::feature_grid(snap->model, grid, cov);
  snap->checkpoint_hash = io::sha256_hex(model::serialize_checkpoint(snap->model));
  std::lock_guard lock(snapshot_mutex_);
  snapshot_ = std::move(snap);
}

void Service::set_train_observations(std::vector<data::ObservationRecord> observations) {
  auto hash = io::sha256_hex(data::serialize_observations(observations));
  auto train = std::make_shared<const std::vector<data::ObservationRecord>>(std::move(observations));
  std::lock_guard lock(snapshot_mutex_);
  train_hash_ = std::move(hash);
  train_ = std::move(train);
  // Negatives depend on the observations; rebuild them lazily.
  if (snapshot_) {
    std::lock_guard neg(snapshot_->negatives_mutex);
    snapshot_->negatives.clear();
  }
}

bool Service::loaded() const { return snapshot() != nullptr; }

std::shared_ptr<Snapshot> Service::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return snapshot_;
}

std::string Service::store(const std::string& key, geo::RangeRaster raster, float lo, float hi) {
  const auto id = io::sha256_hex(key);
  std::lock_guard lock(cache_mutex_);
  if (!cache_.contains(id)) {
    if (cache_.size() >= config_.cache_capacity) {
      cache_.erase(cache_order_.front());
      cache_order_.erase(cache_order_.begin());
    }
    cache_order_.push_back(id);
  }
  cache_[id] = CachedRaster{std::move(raster), lo, hi};
  return id;
}

std::vector<float> Service::vector_or_text(std::optional<std::vector<float>> vector,
                                           const std::optional<std::string>& text) {
  if (vector && text) throw HttpError{400, "give either 'vector' or 'text', not both"};
  if (vector) return std::move(*vector);
  if (!text) throw HttpError{400, "request needs 'vector' or 'text'"};
  if (!client_.configured()) throw HttpError{502, "no embedding service configured; set embedding_url"};
  return client_.fetch(*text);
}

Response Service::embed(const Request& r) {
  const auto body = parse_body(r.body);
  const auto text = optional_text(body);
  if (!text) throw HttpError{400, "request needs 'text'"};
  const auto v = vector_or_text(std::nullopt, text);
  return json_response(200, json{{"vector", v}, {"dim", v.size()}});
}

Response Service::zeroshot(const Request& r) {
  const auto snap = snapshot();
  if (!snap) throw HttpError{503, "no model loaded"};
  const auto body = parse_body(r.body);
  const auto v = vector_or_text(optional_vector(body), optional_text(body));
  if (v.size() != snap->model.config().text_dim) {
    throw HttpError{422, "vector has width " + std::to_string(v.size()) + ", model expects " +
                             std::to_string(snap->model.config().text_dim)};
  }
  auto raster = eval::zero_shot_raster(snap->model, snap->grid, v);
  const json key{{"kind", "zeroshot"}, {"checkpoint", snap->checkpoint_hash}, {"grid", snap->grid.grid.width},
                 {"grid_h", snap->grid.grid.height}, {"vector", v}};
  const auto stats = raster_stats(raster);
  const auto id = store(key.dump(), std::move(raster), 0.0f, 1.0f);
  return json_response(200, json{{"raster_id", id}, {"stats", stats}});
}

Response Service::fewshot(const Request& r) {
  const auto snap = snapshot();
  if (!snap) throw HttpError{503, "no model loaded"};
  const auto body = parse_body(r.body);
  if (!body.contains("observations") || !body.at("observations").is_array()) {
    throw HttpError{400, "'observations' must be an array of {lat, lon}"};
  }
  const auto& obs = body.at("observations");
  if (obs.empty()) throw HttpError{400, "few-shot fitting needs at least one observation"};
  if (obs.size() > kMaxObservations) throw HttpError{400, "too many observations"};
  std::vector<geo::GeoPoint> points;
  json canonical_points = json::array();
  for (const auto& o : obs) {
    if (!o.is_object() || !o.contains("lat") || !o.contains("lon") || !o.at("lat").is_number() ||
        !o.at("lon").is_number()) {
      throw HttpError{400, "each observation needs numeric 'lat' and 'lon'"};
    }
    const double lat = o.at("lat").get<double>(), lon = o.at("lon").get<double>();
    if (!(lat >= -90.0 && lat <= 90.0 && lon >= -180.0 && lon <= 180.0)) {
      throw HttpError{400, "observation outside lat [-90, 90] / lon [-180, 180]"};
    }
    points.emplace_back(lat, lon);
    canonical_points.push_back({lat, lon});
  }
  const double lambda = number_or<double>(body, "lambda", 20.0);
  if (!std::isfinite(lambda) || lambda < 0.0) throw HttpError{400, "'lambda' must be finite and >= 0"};
  const auto n_neg = number_or<std::uint32_t>(body, "n_neg", 20000);
  if (n_neg < 2 || n_neg > kMaxNegatives) {
    throw HttpError{400, "'n_neg' must lie in [2, " + std::to_string(kMaxNegatives) + "]"};
  }
  const auto raw = optional_vector(body);
  const auto text = optional_text(body);
  std::optional<std::vector<float>> vector;
  if (raw || text) vector = vector_or_text(raw, text);
  if (vector && vector->size() != snap->model.config().text_dim) {
    throw HttpError{422, "vector has width " + std::to_string(vector->size()) + ", model expects " +
                             std::to_string(snap->model.config().text_dim)};
  }

  const auto* cov = snap->model.config().env_channels > 0 ? &*covariates_ : nullptr;
  std::shared_ptr<const std::vector<data::ObservationRecord>> train;
  std::string train_hash;
  {
    std::lock_guard lock(snapshot_mutex_);
    train = train_;
    train_hash = train_hash_;
  }
  std::shared_ptr<const Negatives> neg;
  {
    std::lock_guard lock(snap->negatives_mutex);
    auto& slot = snap->negatives[n_neg];
    if (!slot) {
      std::seed_seq seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32), n_neg};
      Rng rng(seq);
      static const std::vector<data::ObservationRecord> kNone;
      const auto sample = fewshot::sample_fewshot_negatives(train ? *train : kNone, n_neg, rng);
      auto n = std::make_shared<Negatives>();
      n->features = eval::point_features(snap->model, sample.points, cov);
      n->curvature = fewshot::negative_curvature(n->features);
      n->fallback = sample.fallback;
      slot = std::move(n);
    }
    neg = slot;
  }

  fewshot::FewShotConfig fc;
  fc.negatives = n_neg;
  fc.lambda = lambda;
  if (vector) {
    const auto w = snap->model.text_species_embedding(*vector);
    fc.prior = std::vector<double>(w.data().begin(), w.data().end());
  }
  const auto pos = eval::point_features(snap->model, points, cov);
  const auto fit = fewshot::fit_logreg(pos, neg->features, fc, &neg->curvature);
  auto raster = eval::weight_raster(snap->grid, fit.w);

  json key{{"kind", "fewshot"},  {"checkpoint", snap->checkpoint_hash}, {"grid", snap->grid.grid.width},
           {"grid_h", snap->grid.grid.height}, {"observations", canonical_points}, {"lambda", lambda},
           {"n_neg", n_neg},     {"seed", config_.seed},     {"negatives_from", train_hash}};
  if (vector) key["vector"] = *vector;
  const auto stats = raster_stats(raster);
  const auto id = store(key.dump(), std::move(raster), 0.0f, 1.0f);
  return json_response(200, json{{"raster_id", id},
                                 {"stats", stats},
                                 {"negatives", neg->fallback ? "uniform_fallback" : "uniform_and_observed"},
                                 {"fit",
                                  {{"converged", fit.converged},
                                   {"iterations", fit.iterations},
                                   {"objective", fit.objective},
                                   {"gradient_norm", fit.gradient_norm}}}});
}

Response Service::ground(const Request& r) {
  const auto snap = snapshot();
  if (!snap) throw HttpError{503, "no model loaded"};
  const auto it = r.query.find("text");
  if (it == r.query.end() || it->second.empty()) throw HttpError{400, "query parameter 'text' is required"};
  const auto v = vector_or_text(std::nullopt, it->second);
  if (v.size() != snap->model.config().text_dim) {
    throw HttpError{422, "embedding service returned width " + std::to_string(v.size()) + ", model expects " +
                             std::to_string(snap->model.config().text_dim)};
  }
  auto raster = eval::ground_text_raster(snap->model, snap->grid, v);
  const auto stats = raster_stats(raster);
  const float lo = stats.contains("min") ? stats["min"].get<float>() : 0.0f;
  const float hi = stats.contains("max") ? stats["max"].get<float>() : 1.0f;
  const json key{{"kind", "ground"}, {"checkpoint", snap->checkpoint_hash}, {"grid", snap->grid.grid.width},
                 {"grid_h", snap->grid.grid.height}, {"vector", v}};
  const auto id = store(key.dump(), std::move(raster), lo, hi > lo ? hi : lo + 1.0f);
  return json_response(200, json{{"raster_id", id}, {"stats", stats}});
}

Response Service::model_info() {
  const auto snap = snapshot();
  if (!snap) throw HttpError{503, "no model loaded"};
  const auto& c = snap->model.config();
  return json_response(200, json{{"embed_dim", c.embed_dim},
                                 {"text_dim", c.text_dim},
                                 {"env_channels", c.env_channels},
                                 {"residual_blocks", c.residual_blocks},
                                 {"species_count", c.species_ids.size()},
                                 {"parameters", snap->model.params().scalar_count()},
                                 {"checkpoint_hash", snap->checkpoint_hash},
                                 {"grid", {{"width", snap->grid.grid.width}, {"height", snap->grid.grid.height}}}});
}

Response Service::raster(const std::string& name) {
  const auto dot = name.rfind('.');
  if (dot == std::string::npos) throw HttpError{404, "raster path must end in .png or .bin"};
  const auto id = name.substr(0, dot), ext = name.substr(dot + 1);
  if (ext != "png" && ext != "bin") throw HttpError{404, "raster path must end in .png or .bin"};
  CachedRaster entry;
  {
    std::lock_guard lock(cache_mutex_);
    const auto it = cache_.find(id);
    if (it == cache_.end()) throw HttpError{404, "unknown raster id " + id};
    entry = it->second;
  }
  if (ext == "bin") return {200, "application/octet-stream", entry.raster.serialize()};
  return {200, "image/png", eval::encode_png(entry.raster, entry.lo, entry.hi)};
}

Response Service::handle(const Request& r) {
  try {
    const auto& p = r.path;
    const bool get = r.method == "GET", post = r.method == "POST";
    auto route = [&](bool method_ok, auto&& fn) -> Response {
      if (!method_ok) return error_response(405, "method " + r.method + " not allowed on " + p);
      return fn();
    };
    if (p == "/api/embed") return route(post, [&] { return embed(r); });
    if (p == "/api/predict/zeroshot") return route(post, [&] { return zeroshot(r); });
    if (p == "/api/predict/fewshot") return route(post, [&] { return fewshot(r); });
    if (p == "/api/ground") return route(get, [&] { return ground(r); });
    if (p == "/api/model/info") return route(get, [&] { return model_info(); });
    const std::string prefix = "/api/raster/";
    if (p.starts_with(prefix) && p.size() > prefix.size()) {
      return route(get, [&] { return raster(p.substr(prefix.size())); });
    }
    return error_response(404, "no route for " + p);
  } catch (const HttpError& e) {
    return error_response(e.status, e.message);
  } catch (const NetworkError& e) {
    return error_response(502, std::string("embedding service failure: ") + e.what());
  } catch (const ProtocolError& e) {
    return error_response(502, std::string("embedding service failure: ") + e.what());
  } catch (const DimensionError& e) {
    return error_response(422, e.what());
  } catch (const Error& e) {
    return error_response(400, e.what());
  } catch (const std::exception& e) {
    return error_response(500, std::string("internal error: ") + e.what());
  }
}

void Service::bind(httplib::Server& server) {
  const auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    Request r{.method = req.method, .path = req.path, .body = req.body, .query = {}};
    for (const auto& [k, v] : req.params) r.query.emplace(k, v);
    const auto out = handle(r);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  server.Get(R"(/api/.*)", forward);
  server.Post(R"(/api/.*)", forward);
  server.new_task_queue = [n = config_.workers] { return new httplib::ThreadPool(n); };
}

void serve(Service& service) {
  httplib::Server server;
  service.bind(server);
  const auto& c = service.config();
  std::fprintf(stderr, "lesinr: serving on http://%s:%u\n", c.host.c_str(), static_cast<unsigned>(c.port));
  if (!server.listen(c.host, c.port)) {
    throw ConfigError("cannot listen on " + c.host + ":" + std::to_string(c.port));
  }
}

}  // namespace lesinr::service
