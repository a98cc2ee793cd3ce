#include "mfmdp/text_service.hpp"

#include <cstdlib>

#include "httplib.h"
#include "json.hpp"

namespace mfmdp {

TextServiceConfig text_service_config_from_env() {
  TextServiceConfig config;
  if (const char* ep = std::getenv("MFMDP_TEXT_ENDPOINT")) config.endpoint = ep;
  if (const char* tok = std::getenv("MFMDP_TEXT_TOKEN")) config.auth_token = tok;
  return config;
}

TextServiceClient::TextServiceClient(TextServiceConfig config) : config_(std::move(config)) {
  // Split http://host:port/path; https is out of scope for the desk client.
  std::string url = config_.endpoint;
  const std::string scheme = "http://";
  if (url.rfind(scheme, 0) == 0) url = url.substr(scheme.size());
  const auto slash = url.find('/');
  std::string hostport = slash == std::string::npos ? url : url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url.substr(slash);
  const auto colon = hostport.find(':');
  if (colon == std::string::npos) {
    host_ = hostport;
    port_ = 80;
  } else {
    host_ = hostport.substr(0, colon);
    port_ = std::stoi(hostport.substr(colon + 1));
  }
  if (host_.empty()) throw ServiceError("text service endpoint not configured");
}

TextResponse TextServiceClient::complete(const TextRequest& request) {
  nlohmann::json body;
  body["prompt"] = request.prompt;
  body["max_tokens"] = request.max_tokens;
  body["temperature"] = request.temperature;
  if (request.seed) body["seed"] = *request.seed;

  httplib::Client client(host_, port_);
  client.set_connection_timeout(0, config_.timeout_ms * 1000);
  client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
  httplib::Headers headers;
  if (!config_.auth_token.empty()) {
    headers.emplace("Authorization", "Bearer " + config_.auth_token);
  }
  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) throw ServiceError("text service unreachable: " + config_.endpoint);
  if (res->status != 200) {
    throw ServiceError("text service returned status " + std::to_string(res->status));
  }
  try {
    auto j = nlohmann::json::parse(res->body);
    TextResponse out;
    out.text = j.at("text").get<std::string>();
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed text service response: ") + e.what());
  }
}

}  // namespace mfmdp
