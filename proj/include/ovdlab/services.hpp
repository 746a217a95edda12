#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ovdlab/quad_schema.hpp"

// Contracts for the external models the forge talks to. Each client is an
// independent object; workers construct their own.
namespace ovdlab {

struct GroundingRequest {
  std::string image_uri;
  std::vector<std::string> phrases;
  double score_threshold = 0.3;
};

struct ScoredPhraseBox {
  BoxXYXY bbox{};
  int phrase_index = 0;
  double score = 0.0;
};

struct GroundingReply {
  std::vector<ScoredPhraseBox> boxes;
};

class GroundingClient {
 public:
  virtual ~GroundingClient() = default;
  // Throws TransportError when the service cannot be reached.
  virtual GroundingReply detect(const GroundingRequest& req) = 0;
};

struct TextRequest {
  std::string image_uri;
  std::string prompt;
};

// The judge and the captioner share one shape: image + prompt in, text out.
class TextClient {
 public:
  virtual ~TextClient() = default;
  virtual std::string complete(const TextRequest& req) = 0;
};

// JSON over HTTP. base_url like "http://127.0.0.1:8080"; path is the POST route.
std::unique_ptr<GroundingClient> make_http_grounding_client(const std::string& base_url,
                                                            const std::string& path = "/detect",
                                                            int timeout_seconds = 30);
std::unique_ptr<TextClient> make_http_text_client(const std::string& base_url, const std::string& path,
                                                  int timeout_seconds = 60);

std::string grounding_request_json(const GroundingRequest& req);
GroundingReply parse_grounding_reply(const std::string& body);

}  // namespace ovdlab
