#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "lesinr/errors.hpp"

namespace lesinr::data {

struct EmbeddingClientConfig {
  std::string url{};  // http://host:port/path; empty means "not configured"
  // Environment variable holding a bearer token, if any.
  std::string auth_token_env = "LESINR_EMBED_TOKEN";
  std::uint32_t expected_dim = 4096;
  int max_attempts = 4;
  double initial_backoff_seconds = 0.25;  // doubled after each failed attempt
  double timeout_seconds = 30.0;
  std::filesystem::path cache_dir{};  // optional on-disk cache
};

struct HttpReply {
  int status = 0;
  std::string body;
};

// POSTs `body` to `url`. Throws NetworkError when no reply was received.
using Transport = std::function<HttpReply(const std::string& url, const std::string& body, const std::string& token)>;

Transport http_transport(double timeout_seconds);

// Client for the external text-embedding service. Requests are
// {"text": ...}, replies {"vector": [...]}. Results are cached by the SHA-256
// of the text, in memory and optionally on disk.
class EmbeddingClient {
 public:
  explicit EmbeddingClient(EmbeddingClientConfig config, Transport transport = {});

  bool configured() const { return !config_.url.empty(); }
  const EmbeddingClientConfig& config() const { return config_; }

  // ConfigError when unconfigured, NetworkError after exhausted retries,
  // ProtocolError on malformed replies or a wrong width.
  std::vector<float> fetch(const std::string& text);
  bool cached(const std::string& text) const;
  std::uint64_t network_calls() const;

  static std::string cache_key(const std::string& text);

 private:
  std::vector<float> request(const std::string& text);
  std::filesystem::path cache_path(const std::string& key) const;

  EmbeddingClientConfig config_;
  Transport transport_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::vector<float>> memory_;
  std::uint64_t calls_ = 0;
};

}  // namespace lesinr::data
