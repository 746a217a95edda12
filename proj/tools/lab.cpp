// lab: training, evaluation and generation.
//   lab train --step 1|2 --config <file> --data <corpus> --out <ckpt> [--resume <ckpt>] [--log <csv>]
//   lab eval --ckpt <file> --dataset <corpus> --chunk-size 40 [--groups <file>] --report <json>
//   lab generate --ckpt <file> --kind image|region --dataset <corpus> [--index i]
//   lab rec --ckpt <file> --image <uri> --expression <text>
//   lab --dump-prompts
#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "ovdlab/errors.hpp"
#include "ovdlab/eval_harness.hpp"
#include "ovdlab/synthetic.hpp"
#include "ovdlab/train_pipeline.hpp"

using namespace ovdlab;

namespace {

TrainConfig load_train_config(const std::string& path) {
  return path.empty() ? TrainConfig::desk() : train_config_from(KeyValueConfig::load(path));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int train(int step, const std::string& config, const std::string& data, const std::string& resume,
          const std::string& out, const std::string& log_path, const std::string& export_path) {
  auto cfg = load_train_config(config);
  if (step != 0) cfg.step = static_cast<TrainStep>(step);
  const auto samples = prepare_samples(read_corpus(data));
  TrainSession session(cfg);
  if (!resume.empty()) session.load(resume);
  std::ofstream file;
  std::ostream* log = &std::cout;
  if (!log_path.empty()) {
    // A resumed run continues its own log.
    const bool append = session.iteration() > 0;
    file.open(log_path, append ? std::ios::app : std::ios::trunc);
    if (!file) throw ArgumentError("cannot write " + log_path);
    log = &file;
  }
  if (cfg.step == TrainStep::align_projector)
    run_step1(session, samples, log);
  else
    run_step2(session, samples, log);
  session.save(out);
  if (!export_path.empty()) session.export_detector(export_path);
  return 0;
}

int eval(const std::string& ckpt, const std::string& dataset, int chunk_size, const std::string& groups_path,
         const std::string& report_path) {
  const auto det = load_detector(ckpt);
  const auto data = read_corpus(dataset);
  std::vector<std::string> vocab;
  std::set<std::string> seen;
  for (const auto& q : data)
    for (const auto& b : q.boxes)
      if (seen.insert(b.phrase).second) vocab.push_back(b.phrase);
  const FrequencyGroups groups = groups_path.empty() ? FrequencyGroups{} : parse_groups(read_file(groups_path));
  for (const auto& [g, members] : groups)
    for (const auto& c : members)
      if (seen.insert(c).second) vocab.push_back(c);
  const auto report = evaluate_chunked(*det, data, chunk_vocabulary(vocab, chunk_size), groups);
  const auto json = report_to_json(report);
  if (report_path.empty()) {
    std::cout << json;
  } else {
    std::ofstream(report_path) << json;
    std::cout << "overall_ap " << report.overall_ap << "\n";
  }
  return 0;
}

int generate(const std::string& ckpt, const std::string& config, const std::string& kind,
             const std::string& dataset, std::size_t index, int max_tokens, double threshold) {
  auto cfg = load_train_config(config);
  TrainSession session(cfg);
  session.load(ckpt);
  const auto data = read_corpus(dataset);
  if (index >= data.size()) throw ArgumentError("--index out of range");
  const auto& rec = data[index];
  const Image img = load_image(rec.image);
  ag::NoGradGuard guard;
  const auto fp = session.detector().extract_features(img);
  if (kind == "image") {
    const auto v = session.llm().project_image_tokens(fp, cfg.grid);
    std::cout << session.llm().generate_caption(v, VisualKind::image_level, max_tokens) << "\n";
    return 0;
  }
  // Region captions for the confident queries of the record's own phrases.
  const auto targets = make_targets(rec);
  const auto qs = session.detector().decode_queries(
      fp, session.detector().embed_text(rec.grounding_text, targets.phrase_spans));
  std::vector<std::string> vocab;
  for (const auto& s : targets.phrase_spans) vocab.push_back(rec.grounding_text.substr(s.start, s.end - s.start));
  for (const auto& d : session.detector().detect(img, vocab, threshold, cfg.caps.max_regions)) {
    auto v = session.llm().project_region_token(ag::slice_rows(qs.embeddings, d.query, 1), fp);
    if (!cfg.toggles.use_ca_region) v.source_maps.reset();
    nlohmann::ordered_json j;
    j["query"] = d.query;
    j["bbox"] = d.bbox;
    j["score"] = d.score;
    j["detected_phrase"] = d.phrase;
    j["caption"] = session.llm().generate_caption(v, VisualKind::region_level, max_tokens);
    std::cout << j.dump() << "\n";
  }
  return 0;
}

int rec(const std::string& ckpt, const std::string& uri, const std::string& expression) {
  const auto det = load_detector(ckpt);
  const auto parsed = parse_synth_uri(uri);
  if (!parsed) throw ArgumentError("--image must be a synthetic uri (synth:<seed>:<classes>)");
  ImageRef ref{"rec", kSceneSize, kSceneSize, uri};
  const auto r = rec_localize(*det, load_image(ref), expression);
  nlohmann::ordered_json j;
  j["expression"] = r.expression;
  j["subject"] = r.subject;
  j["found"] = r.found;
  if (r.found) {
    j["box"] = r.box;
    j["score"] = r.score;
  }
  std::cout << j.dump() << "\n";
  return 0;
}

void dump_prompts() {
  nlohmann::ordered_json j;
  j["system"] = kSystemMessage;
  j["image"] = prompt_for(VisualKind::image_level);
  j["region"] = prompt_for(VisualKind::region_level);
  std::cout << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lab: train, evaluate and caption with the grounded detector"};
  bool dump = false;
  app.add_flag("--dump-prompts", dump, "print the fixed system and task prompts as JSON");

  auto* t = app.add_subcommand("train", "run step 1 (projector) or step 2 (finetune)");
  int step = 0;
  std::string config, data, resume, out, log_path, export_path;
  t->add_option("--step", step, "overrides the config's step")->check(CLI::IsMember({1, 2}));
  t->add_option("--config", config, "key = value training config (desk defaults when omitted)");
  t->add_option("--data", data, "training corpus (JSONL)")->required();
  t->add_option("--resume", resume, "checkpoint to resume or, for step 2, the step-1 checkpoint");
  t->add_option("--out", out, "checkpoint written at the end")->required();
  t->add_option("--log", log_path, "per-iteration CSV (stdout when omitted)");
  t->add_option("--export-detector", export_path, "also write a detector-only checkpoint");

  auto* e = app.add_subcommand("eval", "chunked zero-shot detection AP");
  std::string ckpt, dataset, groups, report;
  int chunk_size = 40;
  e->add_option("--ckpt", ckpt)->required();
  e->add_option("--dataset", dataset)->required();
  e->add_option("--chunk-size", chunk_size);
  e->add_option("--groups", groups, "lines of 'group: class, class, ...'");
  e->add_option("--report", report, "JSON report path (stdout when omitted)");

  auto* g = app.add_subcommand("generate", "greedy image or region captions");
  std::string kind = "image";
  std::size_t index = 0;
  int max_tokens = 256;
  double threshold = 0.3;
  g->add_option("--ckpt", ckpt)->required();
  g->add_option("--config", config, "the config the checkpoint was trained with");
  g->add_option("--kind", kind)->check(CLI::IsMember({"image", "region"}));
  g->add_option("--dataset", dataset)->required();
  g->add_option("--index", index);
  g->add_option("--max-tokens", max_tokens);
  g->add_option("--threshold", threshold, "detection score threshold for region captions");

  auto* r = app.add_subcommand("rec", "referring-expression localization");
  std::string image, expression;
  r->add_option("--ckpt", ckpt)->required();
  r->add_option("--image", image, "synth:<seed>:<classes>")->required();
  r->add_option("--expression", expression)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (dump) {
      dump_prompts();
      return 0;
    }
    if (*t) return train(step, config, data, resume, out, log_path, export_path);
    if (*e) return eval(ckpt, dataset, chunk_size, groups, report);
    if (*g) return generate(ckpt, config, kind, dataset, index, max_tokens, threshold);
    if (*r) return rec(ckpt, image, expression);
    std::cerr << app.help();
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "lab: " << ex.what() << "\n";
    return 1;
  }
}
