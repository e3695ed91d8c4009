#include "lesinr/data/embedding_client.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "lesinr/io/binary.hpp"
#include "lesinr/io/hash.hpp"

namespace lesinr::data {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("embedding endpoint '" + url + "' is not an http:// URL");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

Transport http_transport(double timeout_seconds) {
  return [timeout_seconds](const std::string& url, const std::string& body, const std::string& token) {
    const auto parts = split_url(url);
    httplib::Client client(parts.origin);
    const auto timeout = std::chrono::duration<double>(timeout_seconds);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    httplib::Headers headers;
    if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
    auto res = client.Post(parts.path, headers, body, "application/json");
    if (!res) throw NetworkError("embedding service unreachable: " + httplib::to_string(res.error()));
    return HttpReply{res->status, res->body};
  };
}

EmbeddingClient::EmbeddingClient(EmbeddingClientConfig config, Transport transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
  if (config_.expected_dim == 0) throw ConfigError("expected embedding width must be positive");
  if (config_.max_attempts < 1) throw ConfigError("max_attempts must be at least 1");
  if (!transport_) transport_ = http_transport(config_.timeout_seconds);
}

std::string EmbeddingClient::cache_key(const std::string& text) { return io::sha256_hex(text); }

std::filesystem::path EmbeddingClient::cache_path(const std::string& key) const {
  return config_.cache_dir / (key + ".f32");
}

bool EmbeddingClient::cached(const std::string& text) const {
  const auto key = cache_key(text);
  std::lock_guard lock(mutex_);
  if (memory_.contains(key)) return true;
  return !config_.cache_dir.empty() && std::filesystem::exists(cache_path(key));
}

std::uint64_t EmbeddingClient::network_calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

std::vector<float> EmbeddingClient::fetch(const std::string& text) {
  const auto key = cache_key(text);
  {
    std::lock_guard lock(mutex_);
    if (auto it = memory_.find(key); it != memory_.end()) return it->second;
    if (!config_.cache_dir.empty() && std::filesystem::exists(cache_path(key))) {
      const auto bytes = io::read_file(cache_path(key));
      if (bytes.size() == std::size_t{config_.expected_dim} * 4) {
        std::vector<float> v(config_.expected_dim);
        io::ByteReader(bytes).get_all<float>(v);
        memory_.emplace(key, v);
        return v;
      }
    }
  }
  if (!configured()) {
    throw ConfigError("no embedding endpoint configured; set embedding_url in the config or pass --embed-url");
  }
  auto v = request(text);
  std::lock_guard lock(mutex_);
  if (!config_.cache_dir.empty()) {
    std::filesystem::create_directories(config_.cache_dir);
    io::ByteWriter w;
    w.put_all<float>(v);
    io::write_file_atomic(cache_path(key), w.bytes());
  }
  memory_.emplace(key, v);
  return v;
}

std::vector<float> EmbeddingClient::request(const std::string& text) {
  std::string token;
  if (!config_.auth_token_env.empty()) {
    if (const char* t = std::getenv(config_.auth_token_env.c_str())) token = t;
  }
  const std::string body = nlohmann::json{{"text", text}}.dump();
  double backoff = config_.initial_backoff_seconds;
  std::string last_failure;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    if (attempt > 1 && backoff > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2;
    }
    HttpReply reply;
    try {
      {
        std::lock_guard lock(mutex_);
        ++calls_;
      }
      reply = transport_(config_.url, body, token);
    } catch (const NetworkError& e) {
      last_failure = e.what();
      continue;
    }
    if (reply.status >= 500 || reply.status == 429) {
      last_failure = "embedding service returned HTTP " + std::to_string(reply.status);
      continue;
    }
    if (reply.status != 200) {
      throw ProtocolError("embedding service returned HTTP " + std::to_string(reply.status));
    }
    std::vector<float> v;
    try {
      const auto j = nlohmann::json::parse(reply.body);
      for (const auto& x : j.at("vector")) v.push_back(static_cast<float>(x.get<double>()));
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError(std::string("malformed embedding reply: ") + e.what());
    }
    if (v.size() != config_.expected_dim) {
      throw ProtocolError("embedding service returned " + std::to_string(v.size()) + " values, expected " +
                          std::to_string(config_.expected_dim));
    }
    for (float x : v) {
      if (!std::isfinite(x)) throw ProtocolError("embedding service returned a non-finite value");
    }
    return v;
  }
  throw NetworkError("embedding request failed after " + std::to_string(config_.max_attempts) +
                     " attempts: " + last_failure);
}

}  // namespace lesinr::data
