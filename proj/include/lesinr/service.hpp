#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "lesinr/data/embedding_client.hpp"
#include "lesinr/data/observations.hpp"
#include "lesinr/eval.hpp"
#include "lesinr/model.hpp"

namespace httplib {
class Server;
}

namespace lesinr::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 8080;
  std::filesystem::path checkpoint{};
  std::uint32_t grid_width = 96;
  std::uint32_t grid_height = 48;
  // Training observations for the data-drawn half of few-shot negatives;
  // without them every negative is sphere-uniform.
  std::filesystem::path train_observations{};
  // Required when the checkpoint was trained with environmental covariates.
  std::filesystem::path covariates{};
  data::EmbeddingClientConfig embedding{};
  std::uint32_t workers = 4;
  std::uint64_t seed = 0;  // few-shot negative sampling
  std::size_t cache_capacity = 512;

  void validate() const;
  std::string to_json() const;
  // Keys: host, port, checkpoint, grid ("WxH"), train_observations,
  // covariates, embedding_url, auth_token_env, embedding_dim,
  // embedding_cache_dir, workers, seed, cache_capacity.
  static ServiceConfig from_json(std::string_view text);
  static ServiceConfig load(const std::filesystem::path& path);
};

struct Request {
  std::string method;
  std::string path;
  std::string body{};
  std::map<std::string, std::string> query{};
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body{};
};

// Everything a request needs from one checkpoint. Immutable apart from the
// lazily filled few-shot negative cache.
struct Snapshot;

// HTTP API over one checkpoint. Requests read an immutable snapshot that
// set_model swaps atomically; rasters are stored under the SHA-256 of their
// normalised request and the checkpoint hash, so an id always names the same
// raster.
class Service {
 public:
  explicit Service(ServiceConfig config, data::Transport transport = {});
  ~Service();

  // Loads config.checkpoint (and the optional observation/covariate files).
  void load();
  void set_model(model::Model<float> model);
  void set_train_observations(std::vector<data::ObservationRecord> observations);
  bool loaded() const;

  Response handle(const Request& request);
  // Registers every route on `server`, each forwarding to handle().
  void bind(httplib::Server& server);

  const ServiceConfig& config() const { return config_; }
  std::uint64_t embedding_calls() const { return client_.network_calls(); }

 private:
  struct CachedRaster {
    geo::RangeRaster raster;
    float lo = 0.0f, hi = 1.0f;  // colormap range for PNG export
  };

  std::shared_ptr<Snapshot> snapshot() const;
  Response embed(const Request& r);
  Response zeroshot(const Request& r);
  Response fewshot(const Request& r);
  Response ground(const Request& r);
  Response model_info();
  Response raster(const std::string& name);
  std::string store(const std::string& key, geo::RangeRaster raster, float lo, float hi);
  std::vector<float> vector_or_text(std::optional<std::vector<float>> vector, const std::optional<std::string>& text);

  ServiceConfig config_;
  data::EmbeddingClient client_;
  std::optional<geo::CovariateStack> covariates_;
  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<Snapshot> snapshot_;
  std::shared_ptr<const std::vector<data::ObservationRecord>> train_;
  std::string train_hash_;
  std::mutex cache_mutex_;
  std::map<std::string, CachedRaster> cache_;
  std::vector<std::string> cache_order_;  // insertion order, oldest first
};

// Blocks serving config.host:config.port until the process is stopped.
void serve(Service& service);

}  // namespace lesinr::service
