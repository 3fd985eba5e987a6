#include "cbr/service.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "httplib.h"

#include "cbr/errors.hpp"
#include "cbr/rng.hpp"
#include "cbr/routers.hpp"

namespace cbr {

using nlohmann::json;

MockEmbeddingClient::MockEmbeddingClient(std::size_t dimension, std::uint64_t seed)
    : dimension_(dimension), seed_(seed) {
  if (dimension == 0) {
    throw ConfigError("mock embedding dimension must be positive");
  }
}

Vector MockEmbeddingClient::embed(const std::string& text) {
  Rng rng(mix_seed(seed_, fnv1a(text)));
  Vector v(dimension_);
  for (double& x : v) {
    x = rng.normal();
  }
  return v;
}

HttpEmbeddingClient::HttpEmbeddingClient(EmbeddingClientConfig config)
    : config_(std::move(config)) {
  const auto scheme = config_.endpoint.find("://");
  if (scheme == std::string::npos) {
    throw ConfigError("embedding endpoint needs a scheme: " + config_.endpoint);
  }
  const auto slash = config_.endpoint.find('/', scheme + 3);
  base_ = config_.endpoint.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : config_.endpoint.substr(slash);
  if (config_.timeout.count() <= 0) {
    throw ConfigError("embedding timeout must be positive");
  }
}

Vector HttpEmbeddingClient::embed(const std::string& text) {
  httplib::Client client(base_);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);
  const std::string body = json{{"text", text}}.dump();
  std::string last_error = "no attempt made";
  for (std::size_t attempt = 0; attempt <= config_.retries; ++attempt) {
    auto res = client.Post(path_, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "status " + std::to_string(res->status);
      if (res->status < 500) {
        break;
      }
      continue;
    }
    json parsed = json::parse(res->body, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("embedding") ||
        !parsed["embedding"].is_array()) {
      throw IntegrityError("embedding service returned a malformed body");
    }
    Vector v;
    for (const json& x : parsed["embedding"]) {
      if (!x.is_number()) {
        throw IntegrityError("embedding service returned a non-numeric value");
      }
      v.push_back(x.get<double>());
    }
    return v;
  }
  throw UpstreamError("embedding service at " + config_.endpoint + " failed after " +
                      std::to_string(config_.retries + 1) + " attempt(s): " + last_error);
}

Vector embed_via_client(EmbeddingClient& client, const std::string& text,
                        std::size_t expected_dimension) {
  Vector v = client.embed(text);
  if (v.size() != expected_dimension) {
    throw IntegrityError("embedding service returned " + std::to_string(v.size()) +
                         " values, checkpoint expects " + std::to_string(expected_dimension));
  }
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw IntegrityError("embedding service returned a non-finite value");
    }
  }
  return v;
}

ServiceConfig service_config_from_json(const json& j) {
  ServiceConfig c;
  try {
    c.bind_address = j.value("bind_address", c.bind_address);
    c.checkpoint_path = j.value("checkpoint_path", std::string());
    c.mock_embeddings = j.value("mock_embeddings", false);
    c.mock_seed = j.value("mock_seed", std::uint64_t{0});
    if (j.contains("embedding") && !j["embedding"].is_null()) {
      const json& e = j["embedding"];
      EmbeddingClientConfig ec;
      ec.endpoint = e.at("endpoint").get<std::string>();
      ec.timeout = std::chrono::milliseconds(e.value("timeout_ms", 2000));
      ec.dimension = e.value("dimension", std::size_t{0});
      ec.retries = e.value("retries", std::size_t{2});
      c.embedding = ec;
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("service config: ") + e.what());
  }
  return c;
}

json service_config_to_json(const ServiceConfig& c) {
  json j{{"bind_address", c.bind_address},
         {"checkpoint_path", c.checkpoint_path.string()},
         {"mock_embeddings", c.mock_embeddings},
         {"mock_seed", c.mock_seed}};
  if (c.embedding) {
    j["embedding"] = {{"endpoint", c.embedding->endpoint},
                      {"timeout_ms", c.embedding->timeout.count()},
                      {"dimension", c.embedding->dimension},
                      {"retries", c.embedding->retries}};
  } else {
    j["embedding"] = nullptr;
  }
  return j;
}

void apply_env_overrides(ServiceConfig& config, const EnvLookup& lookup) {
  if (auto v = lookup("BIND_ADDR")) {
    config.bind_address = *v;
  }
  if (auto v = lookup("CHECKPOINT_PATH")) {
    config.checkpoint_path = *v;
  }
  if (auto v = lookup("EMBED_ENDPOINT")) {
    if (!config.embedding) {
      config.embedding = EmbeddingClientConfig{};
    }
    config.embedding->endpoint = *v;
  }
  if (auto v = lookup("EMBED_TIMEOUT_MS")) {
    if (!config.embedding) {
      config.embedding = EmbeddingClientConfig{};
    }
    try {
      std::size_t used = 0;
      const long ms = std::stol(*v, &used);
      if (used != v->size() || ms <= 0) {
        throw std::invalid_argument(*v);
      }
      config.embedding->timeout = std::chrono::milliseconds(ms);
    } catch (const std::exception&) {
      throw ConfigError("EMBED_TIMEOUT_MS must be a positive integer, got '" + *v + "'");
    }
  }
}

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (v == nullptr) {
      return std::nullopt;
    }
    return std::string(v);
  };
}

std::pair<std::string, int> parse_bind_address(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0) {
    throw ConfigError("bind address must look like host:port, got '" + address + "'");
  }
  try {
    std::size_t used = 0;
    const std::string port_text = address.substr(colon + 1);
    const int port = std::stoi(port_text, &used);
    if (used != port_text.size() || port < 0 || port > 65535) {
      throw std::out_of_range(port_text);
    }
    return {address.substr(0, colon), port};
  } catch (const std::exception&) {
    throw ConfigError("bad port in bind address '" + address + "'");
  }
}

namespace {

struct ErrorInfo {
  int status;
  const char* code;
};

ErrorInfo classify(const std::exception& e) {
  if (dynamic_cast<const UpstreamError*>(&e)) return {502, "upstream_error"};
  if (dynamic_cast<const IntegrityError*>(&e)) return {502, "integrity_error"};
  if (dynamic_cast<const ParseError*>(&e)) return {400, "parse_error"};
  if (dynamic_cast<const SchemaError*>(&e)) return {400, "schema_error"};
  if (dynamic_cast<const ShapeError*>(&e)) return {400, "shape_error"};
  if (dynamic_cast<const ValueError*>(&e)) return {400, "value_error"};
  if (dynamic_cast<const ContractError*>(&e)) return {400, "contract_error"};
  if (dynamic_cast<const ConfigError*>(&e)) return {400, "config_error"};
  if (dynamic_cast<const StateError*>(&e)) return {503, "state_error"};
  return {500, "internal_error"};
}

json decision_json(const RoutingDecision& d, const ModelCatalog& catalog, bool verbose) {
  json scores = json::object();
  for (std::size_t m = 0; m < catalog.size(); ++m) {
    scores[catalog.models[m].name] = d.scores[m];
  }
  json out{{"model", d.model_name}, {"model_index", d.model_index}, {"scores", scores}};
  if (d.rationale) {
    json rationale = json::object();
    for (const GroupRationale& g : *d.rationale) {
      json entry{{"active", g.active}, {"intervened", g.intervened}};
      if (!g.values.empty()) {
        entry["values"] = g.values;
      }
      rationale[g.group] = entry;
    }
    out["rationale"] = rationale;
  }
  if (verbose && d.concepts) {
    out["concepts"] = *d.concepts;
  }
  return out;
}

Vector numbers_of(const json& j, const char* field) {
  if (!j.is_array()) {
    throw ParseError(std::string("'") + field + "' must be an array of numbers");
  }
  Vector v;
  v.reserve(j.size());
  for (const json& x : j) {
    if (!x.is_number()) {
      throw ParseError(std::string("'") + field + "' must contain only numbers");
    }
    v.push_back(x.get<double>());
  }
  return v;
}

}  // namespace

std::size_t input_dim(const Policy& p) {
  return std::visit(
      [](const auto& r) -> std::size_t {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, BottleneckRouter>) return r.concept_head.in_dim();
        else if constexpr (std::is_same_v<T, BlackBoxRouter>) return r.head.in_dim();
        else if constexpr (std::is_same_v<T, KnnRouter>) return r.embeddings.cols();
        else if constexpr (std::is_same_v<T, FactorizationRouter>) return r.projection.in_dim();
        else return 0;
      },
      p);
}

Reply error_reply(const std::exception& error) {
  const ErrorInfo info = classify(error);
  return {info.status, json{{"code", info.code}, {"message", error.what()}}};
}

RoutingService::RoutingService(Checkpoint checkpoint, std::string version,
                               std::shared_ptr<EmbeddingClient> client)
    : checkpoint_(std::move(checkpoint)),
      version_(std::move(version)),
      info_(checkpoint_info(checkpoint_)),
      client_(std::move(client)) {}

RoutingService RoutingService::from_file(const std::filesystem::path& path,
                                         std::shared_ptr<EmbeddingClient> client) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open checkpoint " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string bytes = buffer.str();
  Checkpoint ckpt = deserialize_checkpoint(bytes);
  if (kind_of(ckpt.policy) == PolicyKind::oracle) {
    throw ContractError("the oracle policy cannot be served");
  }
  return RoutingService(std::move(ckpt), checkpoint_version(bytes), std::move(client));
}

json RoutingService::route_json(const json& request) const {
  if (!request.is_object()) {
    throw ParseError("request body must be a JSON object");
  }
  const bool has_embedding = request.contains("embedding");
  const bool has_text = request.contains("text");
  if (has_embedding == has_text) {
    throw ParseError("request needs exactly one of 'embedding' or 'text'");
  }
  std::string id;
  if (request.contains("id")) {
    if (!request["id"].is_string()) {
      throw ParseError("'id' must be a string");
    }
    id = request["id"].get<std::string>();
  }
  const bool verbose = request.value("verbose", false);

  Vector embedding;
  if (has_embedding) {
    embedding = numbers_of(request["embedding"], "embedding");
  } else {
    if (!request["text"].is_string()) {
      throw ParseError("'text' must be a string");
    }
    if (!client_) {
      throw ConfigError(
          "text requests need an embedding client; set EMBED_ENDPOINT or the embedding section "
          "of the service config");
    }
    const std::string text = request["text"].get<std::string>();
    const std::size_t dim = input_dim(checkpoint_.policy);
    // Random routers accept any width.
    embedding = dim > 0 ? embed_via_client(*client_, text, dim) : client_->embed(text);
  }

  RoutingDecision decision;
  if (request.contains("intervention") && !request["intervention"].is_null()) {
    const json& iv = request["intervention"];
    if (!iv.is_object() || !iv.contains("group") || !iv["group"].is_string() ||
        !iv.contains("values")) {
      throw ParseError("'intervention' needs a 'group' string and a 'values' array");
    }
    const auto* router = std::get_if<BottleneckRouter>(&checkpoint_.policy);
    if (router == nullptr) {
      throw ContractError("interventions need a bottleneck checkpoint");
    }
    decision = route_with_intervention(*router, embedding, iv["group"].get<std::string>(),
                                       numbers_of(iv["values"], "values"));
  } else {
    decision = route(checkpoint_.policy, embedding);
  }
  json out = decision_json(decision, catalog_of(checkpoint_.policy), verbose);
  out["id"] = id;
  out["checkpoint_version"] = version_;
  return out;
}

Reply RoutingService::handle_route(const json& request) const {
  const auto start = std::chrono::steady_clock::now();
  ++requests_;
  try {
    json body = route_json(request);
    const std::chrono::duration<double, std::milli> elapsed =
        std::chrono::steady_clock::now() - start;
    body["processing_ms"] = elapsed.count();
    return {200, std::move(body)};
  } catch (const std::exception& e) {
    ++failures_;
    return error_reply(e);
  }
}

Reply RoutingService::handle_route_text(std::string_view body) const {
  json parsed = json::parse(body, nullptr, false);
  if (parsed.is_discarded()) {
    ++requests_;
    ++failures_;
    return error_reply(ParseError("request body is not valid JSON"));
  }
  return handle_route(parsed);
}

json RoutingService::health() const {
  return {{"status", "ok"},
          {"checkpoint_version", version_},
          {"requests", requests_.load()},
          {"failures", failures_.load()}};
}

json RoutingService::info() const {
  json out = info_;
  out["checkpoint_version"] = version_;
  out["text_requests"] = client_ != nullptr;
  return out;
}

HttpGateway::HttpGateway(const RoutingService& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto send = [](httplib::Response& res, const Reply& reply) {
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json");
  };
  server_->Post("/route", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.handle_route_text(req.body));
  });
  server_->Get("/health", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, {200, service_.health()});
  });
  server_->Get("/info", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, {200, service_.info()});
  });
  server_->set_exception_handler(
      [send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
          std::rethrow_exception(ep);
        } catch (const std::exception& e) {
          send(res, error_reply(e));
        } catch (...) {
          send(res, {500, json{{"code", "internal_error"}, {"message", "unknown error"}}});
        }
      });
}

HttpGateway::~HttpGateway() { stop(); }

int HttpGateway::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) {
      throw Error("cannot bind " + host + " to an ephemeral port");
    }
    return bound;
  }
  if (!server_->bind_to_port(host, port)) {
    throw Error("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpGateway::listen() { server_->listen_after_bind(); }

void HttpGateway::stop() {
  if (server_ && server_->is_running()) {
    server_->stop();
  }
}

}  // namespace cbr
