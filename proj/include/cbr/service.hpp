#pragma once

// Routing gateway: JSON over HTTP around one immutable checkpoint, with an
// optional out-of-process embedding client for text requests.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"

#include "cbr/checkpoint.hpp"
#include "cbr/numerics.hpp"

namespace httplib {
class Server;
}

namespace cbr {

struct EmbeddingClientConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:9000/embed
  std::chrono::milliseconds timeout{2000};
  std::size_t dimension = 0;
  std::size_t retries = 2;  // extra attempts after the first
};

class EmbeddingClient {
public:
  virtual ~EmbeddingClient() = default;
  virtual Vector embed(const std::string& text) = 0;
};

// Seeded hash-to-vector stand-in for a real embedder.
class MockEmbeddingClient final : public EmbeddingClient {
public:
  MockEmbeddingClient(std::size_t dimension, std::uint64_t seed = 0);
  Vector embed(const std::string& text) override;

private:
  std::size_t dimension_;
  std::uint64_t seed_;
};

// POSTs {"text": ...} and expects {"embedding": [...]}.
class HttpEmbeddingClient final : public EmbeddingClient {
public:
  explicit HttpEmbeddingClient(EmbeddingClientConfig config);
  Vector embed(const std::string& text) override;

private:
  EmbeddingClientConfig config_;
  std::string base_;
  std::string path_;
};

// Embedding width a policy expects; 0 when it accepts any width.
std::size_t input_dim(const Policy& policy);

// Calls the client and checks the width: IntegrityError on mismatch.
Vector embed_via_client(EmbeddingClient& client, const std::string& text,
                        std::size_t expected_dimension);

struct ServiceConfig {
  std::string bind_address = "127.0.0.1:8080";
  std::filesystem::path checkpoint_path;
  std::optional<EmbeddingClientConfig> embedding;
  bool mock_embeddings = false;  // text requests use MockEmbeddingClient
  std::uint64_t mock_seed = 0;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

ServiceConfig service_config_from_json(const nlohmann::json& j);
nlohmann::json service_config_to_json(const ServiceConfig& config);
// BIND_ADDR, CHECKPOINT_PATH, EMBED_ENDPOINT, EMBED_TIMEOUT_MS.
void apply_env_overrides(ServiceConfig& config, const EnvLookup& lookup);
EnvLookup process_env();

// "host:port"; throws ConfigError on malformed input.
std::pair<std::string, int> parse_bind_address(const std::string& address);

struct Reply {
  int status = 200;
  nlohmann::json body;
};

class RoutingService {
public:
  RoutingService(Checkpoint checkpoint, std::string version,
                 std::shared_ptr<EmbeddingClient> client = nullptr);
  static RoutingService from_file(const std::filesystem::path& path,
                                  std::shared_ptr<EmbeddingClient> client = nullptr);

  Reply handle_route_text(std::string_view body) const;
  Reply handle_route(const nlohmann::json& request) const;
  nlohmann::json health() const;
  nlohmann::json info() const;

  const Checkpoint& checkpoint() const { return checkpoint_; }
  const std::string& version() const { return version_; }
  std::uint64_t requests_served() const { return requests_.load(); }
  std::uint64_t requests_failed() const { return failures_.load(); }

private:
  nlohmann::json route_json(const nlohmann::json& request) const;

  const Checkpoint checkpoint_;
  const std::string version_;
  const nlohmann::json info_;
  std::shared_ptr<EmbeddingClient> client_;
  mutable std::atomic<std::uint64_t> requests_{0};
  mutable std::atomic<std::uint64_t> failures_{0};
};

// Error body {code, message} and HTTP status for an exception.
Reply error_reply(const std::exception& error);

class HttpGateway {
public:
  explicit HttpGateway(const RoutingService& service);
  ~HttpGateway();
  HttpGateway(const HttpGateway&) = delete;
  HttpGateway& operator=(const HttpGateway&) = delete;

  // Port 0 binds an ephemeral port. Returns the bound port.
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void stop();

private:
  const RoutingService& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace cbr
