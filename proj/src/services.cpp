#include "ovdlab/services.hpp"

#include <httplib.h>

#include <json.hpp>

#include "ovdlab/errors.hpp"

namespace ovdlab {

using nlohmann::json;

std::string grounding_request_json(const GroundingRequest& req) {
  json j;
  j["image_uri"] = req.image_uri;
  j["phrases"] = req.phrases;
  j["score_threshold"] = req.score_threshold;
  return j.dump();
}

GroundingReply parse_grounding_reply(const std::string& body) {
  GroundingReply out;
  try {
    const auto j = json::parse(body);
    for (const auto& b : j.at("boxes")) {
      ScoredPhraseBox s;
      const auto& bb = b.at("bbox");
      if (!bb.is_array() || bb.size() != 4) throw ServiceError("grounding reply: bbox must have 4 numbers", false);
      for (int k = 0; k < 4; ++k) s.bbox[k] = bb.at(k).get<double>();
      s.phrase_index = b.at("phrase_index").get<int>();
      s.score = b.at("score").get<double>();
      out.boxes.push_back(s);
    }
  } catch (const json::exception& e) {
    throw ServiceError(std::string("grounding reply: ") + e.what(), false);
  }
  return out;
}

namespace {

std::string post_json(httplib::Client& cli, const std::string& path, const std::string& body) {
  auto res = cli.Post(path, body, "application/json");
  if (!res) throw TransportError("POST " + path + ": " + httplib::to_string(res.error()));
  if (res->status >= 500) throw TransportError("POST " + path + ": HTTP " + std::to_string(res->status));
  if (res->status != 200) throw ServiceError("POST " + path + ": HTTP " + std::to_string(res->status), false);
  return res->body;
}

class HttpGroundingClient : public GroundingClient {
 public:
  HttpGroundingClient(const std::string& base, std::string path, int timeout) : cli_(base), path_(std::move(path)) {
    cli_.set_connection_timeout(timeout, 0);
    cli_.set_read_timeout(timeout, 0);
  }
  GroundingReply detect(const GroundingRequest& req) override {
    return parse_grounding_reply(post_json(cli_, path_, grounding_request_json(req)));
  }

 private:
  httplib::Client cli_;
  std::string path_;
};

class HttpTextClient : public TextClient {
 public:
  HttpTextClient(const std::string& base, std::string path, int timeout) : cli_(base), path_(std::move(path)) {
    cli_.set_connection_timeout(timeout, 0);
    cli_.set_read_timeout(timeout, 0);
  }
  std::string complete(const TextRequest& req) override {
    json j;
    j["image_uri"] = req.image_uri;
    j["prompt"] = req.prompt;
    const auto body = post_json(cli_, path_, j.dump());
    try {
      return json::parse(body).at("text").get<std::string>();
    } catch (const json::exception& e) {
      throw ServiceError(std::string("text reply: ") + e.what(), false);
    }
  }

 private:
  httplib::Client cli_;
  std::string path_;
};

}  // namespace

std::unique_ptr<GroundingClient> make_http_grounding_client(const std::string& base_url, const std::string& path,
                                                            int timeout_seconds) {
  return std::make_unique<HttpGroundingClient>(base_url, path, timeout_seconds);
}

std::unique_ptr<TextClient> make_http_text_client(const std::string& base_url, const std::string& path,
                                                  int timeout_seconds) {
  return std::make_unique<HttpTextClient>(base_url, path, timeout_seconds);
}

}  // namespace ovdlab
