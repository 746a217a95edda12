// forge: corpus construction.
//   forge build --config <file> --out <corpus>
//   forge synth --count N --classes K --seed S --out <corpus>
//   forge judge --corpus <file> --judge-url <url> --out <scores.jsonl>
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "ovdlab/dataset_forge.hpp"
#include "ovdlab/errors.hpp"
#include "ovdlab/synthetic.hpp"

using namespace ovdlab;

namespace {

// "synthetic" selects the in-process stand-in; anything else is a base URL,
// optionally followed by a route ("http://host:port/route").
std::pair<std::string, std::string> split_url(const std::string& url, const std::string& default_path) {
  const auto scheme = url.find("://");
  const auto slash = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (slash == std::string::npos) return {url, default_path};
  return {url.substr(0, slash), url.substr(slash)};
}

std::unique_ptr<GroundingClient> grounding_client(const std::string& spec) {
  if (spec.empty()) return nullptr;
  if (spec == "synthetic") return std::make_unique<SyntheticGroundingClient>();
  const auto [base, path] = split_url(spec, "/detect");
  return make_http_grounding_client(base, path);
}

std::unique_ptr<TextClient> text_client(const std::string& spec, const std::string& default_path) {
  if (spec.empty()) return nullptr;
  if (spec == "synthetic") return std::make_unique<SyntheticCaptioner>();
  const auto [base, path] = split_url(spec, default_path);
  return make_http_text_client(base, path);
}

int build(const std::string& config_path, const std::string& out) {
  const auto kv = KeyValueConfig::load(config_path);
  const auto cfg = forge_config_from(kv);
  auto sources = kv.get_list("sources", {});
  if (sources.empty()) throw ConfigError(config_path + ": sources is empty");
  // Relative source paths are resolved against the config file's directory.
  const auto base = std::filesystem::path(config_path).parent_path();
  for (auto& s : sources)
    if (std::filesystem::path(s).is_relative()) s = (base / s).string();
  auto grounding = grounding_client(kv.get_string("grounding", ""));
  auto captioner = text_client(kv.get_string("captioner", ""), "/caption");
  const std::string stats_path = kv.get_string("stats", out + ".stats.json");
  kv.reject_unused();

  BuildReport report;
  const auto manifest = build_manifest(sources, cfg, {grounding.get(), captioner.get()}, &report);
  write_corpus(out, manifest.records);
  std::ofstream(stats_path) << emit_manifest_stats(manifest.stats, out) << "\n";
  std::cout << emit_build_report(report) << "\n";
  return 0;
}

int synth(int count, int classes, std::uint64_t seed, const std::string& kind, const std::string& out) {
  if (count < 1 || classes < 1) throw ArgumentError("count and classes must be positive");
  std::vector<Quadruple> recs;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
    const bool caption_only = kind == "image_text" || (kind == "mixed" && i % 2 == 1);
    recs.push_back(caption_only ? scene_caption_pair(s, classes) : scene_quadruple(s, classes));
  }
  write_corpus(out, recs);
  std::cout << emit_manifest_stats(compute_stats(recs), out) << "\n";
  return 0;
}

int judge(const std::string& corpus, const std::string& url, const std::string& out, int attempts) {
  const auto recs = read_corpus(corpus);
  auto client = text_client(url, "/judge");
  if (!client) throw ArgumentError("--judge-url is required");
  std::ofstream os(out);
  if (!os) throw ArgumentError("cannot write " + out);
  for (const auto& q : recs) {
    const auto s = judge_caption_quality(q.image, q.caption, *client, attempts);
    nlohmann::ordered_json j;
    j["id"] = q.image.id;
    j["detailedness"] = s.detailedness;
    j["hallucination"] = s.hallucination;
    os << j.dump() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forge: build grounding/caption corpora"};
  app.require_subcommand(1);

  auto* b = app.add_subcommand("build", "clean, merge and box a corpus from the sources in a config");
  std::string config, out;
  b->add_option("--config", config, "key = value config file")->required();
  b->add_option("--out", out, "output corpus (JSONL)")->required();

  auto* s = app.add_subcommand("synth", "write a synthetic scene corpus");
  int count = 8, classes = 6;
  std::uint64_t seed = 100;
  std::string kind = "detection";
  s->add_option("--count", count);
  s->add_option("--classes", classes);
  s->add_option("--seed", seed);
  s->add_option("--kind", kind)->check(CLI::IsMember({"detection", "image_text", "mixed"}));
  s->add_option("--out", out)->required();

  auto* j = app.add_subcommand("judge", "score captions with the detailedness and hallucination prompts");
  std::string corpus, judge_url;
  int attempts = 3;
  j->add_option("--corpus", corpus)->required();
  j->add_option("--judge-url", judge_url, "judge service, e.g. http://127.0.0.1:8080/judge")->required();
  j->add_option("--attempts", attempts);
  j->add_option("--out", out)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*b) return build(config, out);
    if (*s) return synth(count, classes, seed, kind, out);
    if (*j) return judge(corpus, judge_url, out, attempts);
  } catch (const std::exception& e) {
    std::cerr << "forge: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
