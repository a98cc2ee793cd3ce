#pragma once

#include <optional>
#include <string>

#include "mfmdp/errors.hpp"

namespace mfmdp {

// Wire format of the external text-generation service:
//   POST <endpoint>  {"prompt", "max_tokens", "temperature", "seed"?}
//   ->               {"text": "..."}
struct TextRequest {
  std::string prompt;
  int max_tokens = 128;
  double temperature = 0.0;
  std::optional<std::uint64_t> seed;
};

struct TextResponse {
  std::string text;
};

struct TextServiceConfig {
  std::string endpoint;   // e.g. http://127.0.0.1:8080/generate
  std::string auth_token; // sent as a bearer token when non-empty
  int timeout_ms = 10000;
};

// Read endpoint/token from MFMDP_TEXT_ENDPOINT / MFMDP_TEXT_TOKEN.
TextServiceConfig text_service_config_from_env();

class TextServiceClient {
 public:
  explicit TextServiceClient(TextServiceConfig config);

  // One request; throws ServiceError on transport failure and ParseError on
  // a malformed response body.
  TextResponse complete(const TextRequest& request);

  const TextServiceConfig& config() const { return config_; }

 private:
  TextServiceConfig config_;
  std::string host_;
  std::string path_;
  int port_ = 80;
};

}  // namespace mfmdp
