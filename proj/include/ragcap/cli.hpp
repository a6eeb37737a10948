#pragma once

// `ragcap` command line: build-index, caption, evaluate, ablate, plus
// serve-mock and conformance for working with providers.
//
// Every subcommand accepts --config FILE, an INI/TOML-style `key = value`
// file whose keys are long option names (optionally under a [subcommand]
// section). Precedence: flags > RAGCAP_PROVIDER > config file > defaults.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <regex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ragcap/caption_pipeline.hpp"
#include "ragcap/conformance.hpp"
#include "ragcap/default_shots.hpp"
#include "ragcap/embedding_store.hpp"
#include "ragcap/error.hpp"
#include "ragcap/eval_metrics.hpp"
#include "ragcap/hash.hpp"
#include "ragcap/prompt_builder.hpp"
#include "ragcap/provider_gateway.hpp"
#include "ragcap/provider_server.hpp"

namespace ragcap::cli {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr const char* kProviderEnv = "RAGCAP_PROVIDER";

// ---------------------------------------------------------------------------
// Options

struct CaptionOptions {
  std::string image;
  std::string images;
  std::string index;
  std::string lang = "en";
  std::size_t k = 4;
  std::size_t n = 3;
  std::size_t c = 3;
  std::size_t beam = 3;
  std::size_t max_new_tokens = 40;
  std::string prompt_template = "retrieval";
  std::string shots;  // empty: built-in default set
  std::string provider = "mock";
  std::string out = "-";
  unsigned jobs = 0;

  bool operator==(const CaptionOptions&) const = default;
};

inline void add_caption_options(CLI::App& app, CaptionOptions& o) {
  app.add_option("--image", o.image, "Image to caption");
  app.add_option("--images", o.images, "List file: one image path (or `id<TAB>path`) per line");
  app.add_option("--index", o.index, "Index file written by build-index")->required();
  app.add_option("--lang", o.lang, "Target language code")->capture_default_str();
  app.add_option("--k", o.k, "Retrieved captions in the prompt (K)")->capture_default_str();
  app.add_option("--n", o.n, "Few-shot demonstrations (N)")->capture_default_str();
  app.add_option("--c", o.c, "Candidates to generate and rerank (c)")->capture_default_str();
  app.add_option("--beam", o.beam, "Beam size")->capture_default_str();
  app.add_option("--max-new-tokens", o.max_new_tokens, "Generation length limit")->capture_default_str();
  app.add_option("--template", o.prompt_template, "retrieval | socratic")
      ->check(CLI::IsMember({"retrieval", "socratic"}))
      ->capture_default_str();
  app.add_option("--shots", o.shots, "Shots file (JSON array); default: built-in 3-shot set");
  app.add_option("--provider", o.provider, "Provider base URL or `mock`")->envname(kProviderEnv)->capture_default_str();
  app.add_option("--out", o.out, "Output jsonl (`-` for stdout)")->capture_default_str();
  app.add_option("--jobs", o.jobs, "Concurrent images (0: min(8, cores))");
}

// Inverse of add_caption_options: every field as explicit flags.
inline std::vector<std::string> to_args(const CaptionOptions& o) {
  std::vector<std::string> a;
  auto put = [&](const char* flag, const std::string& v) {
    a.emplace_back(flag);
    a.push_back(v);
  };
  if (!o.image.empty()) put("--image", o.image);
  if (!o.images.empty()) put("--images", o.images);
  put("--index", o.index);
  put("--lang", o.lang);
  put("--k", std::to_string(o.k));
  put("--n", std::to_string(o.n));
  put("--c", std::to_string(o.c));
  put("--beam", std::to_string(o.beam));
  put("--max-new-tokens", std::to_string(o.max_new_tokens));
  put("--template", o.prompt_template);
  if (!o.shots.empty()) put("--shots", o.shots);
  put("--provider", o.provider);
  put("--out", o.out);
  put("--jobs", std::to_string(o.jobs));
  return a;
}

inline CaptionOptions parse_caption_args(std::vector<std::string> args) {
  CLI::App app("caption");
  CaptionOptions o;
  add_caption_options(app, o);
  std::reverse(args.begin(), args.end());
  app.parse(args);
  return o;
}

// ---------------------------------------------------------------------------
// Run provenance

inline std::string manifest_timestamp(const std::string& provider) {
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) return utc_timestamp(std::strtoll(epoch, nullptr, 10));
  if (provider == "mock") return utc_timestamp(0);
  return utc_now();
}

inline nlohmann::ordered_json run_manifest(const std::string& command, const nlohmann::ordered_json& config,
                                           const std::string& provider) {
  nlohmann::ordered_json m;
  m["tool"] = "ragcap";
  m["version"] = kToolVersion;
  m["command"] = command;
  m["config"] = config;
  m["provider"] = provider;
  m["created_at"] = manifest_timestamp(provider);
  return m;
}

inline nlohmann::ordered_json pipeline_config_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["k"] = c.k;
  j["n"] = c.n;
  j["c"] = c.c;
  j["beam"] = c.beam_size;
  j["max_new_tokens"] = c.max_new_tokens;
  j["language"] = c.language;
  j["template"] = to_string(c.prompt_template);
  return j;
}

// ---------------------------------------------------------------------------
// Helpers

inline std::vector<ImageInput> read_image_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open image list " + path);
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<ImageInput> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto tab = t.find('\t');
    std::filesystem::path p(std::string(tab == std::string_view::npos ? t : trim(t.substr(tab + 1))));
    if (p.is_relative()) p = base / p;
    ImageInput img = ImageInput::from_path(p);
    if (tab != std::string_view::npos) img.id = std::string(trim(t.substr(0, tab)));
    out.push_back(std::move(img));
  }
  if (out.empty()) throw InputError("image list " + path + " is empty");
  return out;
}

inline ShotSet load_shots(const std::string& path) {
  if (path.empty()) return default_shots();
  std::ifstream in(path);
  if (!in) throw InputError("cannot open shots file " + path);
  try {
    return parse_shots(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("bad shots file " + path + ": " + e.what());
  }
}

inline std::string shots_hash(const std::string& path) {
  return path.empty() ? to_hex(fnv1a64(kDefaultShotsJson)) : file_content_hash(path);
}

class OutputSink {
 public:
  OutputSink(const std::string& path, std::ostream& stdout_stream) {
    if (path.empty() || path == "-") {
      stream_ = &stdout_stream;
    } else {
      file_.open(path, std::ios::binary | std::ios::trunc);
      if (!file_) throw InputError("cannot write " + path);
      stream_ = &file_;
    }
  }
  std::ostream& stream() { return *stream_; }

 private:
  std::ofstream file_;
  std::ostream* stream_ = nullptr;
};

// ---------------------------------------------------------------------------
// Ablation grid
//
// Grammar: sections separated by '|'; each section is a cartesian product of
// axes separated by ';' (or ',' directly before another `name=`). An axis is
// `name=values` with values a comma list of integers or `a..b` ranges
// (`template` takes names). Axes: k, n, c, beam, template. The preset
// "table3" expands to "k=1..5;n=1 | k=4;n=1..4".

struct GridCell {
  std::size_t group = 0;
  std::size_t k = 4;
  std::size_t n = 3;
  std::size_t c = 3;
  std::size_t beam = 3;
  PromptTemplate prompt_template = PromptTemplate::retrieval;

  bool operator==(const GridCell&) const = default;
};

inline constexpr std::string_view kTable3Grid = "k=1..5;n=1 | k=4;n=1..4";

inline std::vector<std::size_t> parse_int_values(const std::string& axis, const std::string& spec) {
  std::vector<std::size_t> out;
  std::stringstream ss(spec);
  std::string item;
  static const std::regex range(R"(^\s*(\d+)\s*\.\.\s*(\d+)\s*$)");
  static const std::regex single(R"(^\s*(\d+)\s*$)");
  while (std::getline(ss, item, ',')) {
    std::smatch m;
    if (std::regex_match(item, m, range)) {
      const auto a = std::stoul(m[1]), b = std::stoul(m[2]);
      if (a > b) throw InputError("grid axis " + axis + ": empty range " + item);
      for (auto v = a; v <= b; ++v) out.push_back(v);
    } else if (std::regex_match(item, m, single)) {
      out.push_back(std::stoul(m[1]));
    } else {
      throw InputError("grid axis " + axis + ": bad value '" + item + "'");
    }
  }
  if (out.empty()) throw InputError("grid axis " + axis + " has no values");
  return out;
}

inline std::vector<GridCell> parse_grid(std::string grid, const GridCell& base) {
  if (trim(grid) == "table3") grid = std::string(kTable3Grid);
  std::vector<GridCell> cells;
  std::stringstream sections(grid);
  std::string section;
  std::size_t group = 0;
  static const std::regex axis_split(R"(;|,(?=\s*[a-z]+\s*=))");
  static const std::regex axis_re(R"(^\s*([a-z]+)\s*=\s*(.+?)\s*$)");
  while (std::getline(sections, section, '|')) {
    if (trim(section).empty()) throw InputError("empty grid section in '" + grid + "'");
    std::vector<GridCell> partial{base};
    for (auto& c : partial) c.group = group;
    std::sregex_token_iterator it(section.begin(), section.end(), axis_split, -1), end;
    for (; it != end; ++it) {
      const std::string axis_text = *it;
      if (trim(axis_text).empty()) continue;
      std::smatch m;
      if (!std::regex_match(axis_text, m, axis_re)) throw InputError("bad grid axis '" + axis_text + "'");
      const std::string name = m[1], values = m[2];
      std::vector<GridCell> next;
      if (name == "template") {
        std::stringstream vs(values);
        std::string v;
        std::vector<PromptTemplate> ts;
        while (std::getline(vs, v, ',')) ts.push_back(parse_template(trim(v)));
        for (const auto& cell : partial)
          for (auto t : ts) {
            auto x = cell;
            x.prompt_template = t;
            next.push_back(x);
          }
      } else {
        const auto vals = parse_int_values(name, values);
        std::size_t GridCell::*field = nullptr;
        if (name == "k") field = &GridCell::k;
        else if (name == "n") field = &GridCell::n;
        else if (name == "c") field = &GridCell::c;
        else if (name == "beam") field = &GridCell::beam;
        else throw InputError("unknown grid axis '" + name + "'");
        for (const auto& cell : partial)
          for (auto v : vals) {
            auto x = cell;
            x.*field = v;
            next.push_back(x);
          }
      }
      partial = std::move(next);
    }
    cells.insert(cells.end(), partial.begin(), partial.end());
    ++group;
  }
  if (cells.empty()) throw InputError("grid '" + grid + "' has no cells");
  return cells;
}

inline std::string cell_label(const GridCell& c) {
  std::string s = c.prompt_template == PromptTemplate::socratic ? "Socratic " : "";
  return s + "K=" + std::to_string(c.k) + ", N=" + std::to_string(c.n);
}

inline std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Subcommands

struct BuildIndexOptions {
  std::vector<std::string> captions;
  std::string format = "jsonl";
  std::string out;
  std::string provider = "mock";
  std::string language = "en";
  std::vector<std::string> sources{"corpus"};
};

inline int cmd_build_index(const BuildIndexOptions& o, std::ostream& out) {
  const auto format = parse_caption_format(o.format);
  if (o.sources.size() != 1 && o.sources.size() != o.captions.size())
    throw InputError("give one --source, or one per --captions file");
  for (const auto& path : o.captions)
    if (!std::filesystem::exists(path)) throw InputError("captions file not found: " + path);
  Gateway gateway(make_provider(o.provider));
  const auto& pm = gateway.manifest();
  EmbeddingStore store(pm.embedding_dimension, pm.provider_id);
  store.set_created_at(manifest_timestamp(o.provider));
  for (std::size_t i = 0; i < o.captions.size(); ++i) {
    const auto& source = o.sources.size() == 1 ? o.sources[0] : o.sources[i];
    ingest_captions(store, o.captions[i], format, source, o.language, gateway.text_embedder());
  }
  store.freeze();
  const auto m = store.save(o.out);
  out << to_json(m).dump() << "\n";
  return 0;
}

inline PipelineConfig pipeline_config(const CaptionOptions& o) {
  PipelineConfig c;
  c.k = o.k;
  c.n = o.n;
  c.c = o.c;
  c.beam_size = o.beam;
  c.max_new_tokens = o.max_new_tokens;
  c.language = o.lang;
  c.prompt_template = parse_template(o.prompt_template);
  c.shots = load_shots(o.shots);
  c.parallelism = o.jobs;
  return c;
}

inline int report_batch_errors(const BatchResult& r, std::ostream& err) {
  int code = 0;
  for (const auto& e : r.errors) {
    err << "error: image " << e.index << " (" << e.id << ") failed at stage " << e.stage << ": " << e.message
        << "\n";
    code = std::max(code, exit_code_for(e.kind));
  }
  return code;
}

inline int cmd_caption(const CaptionOptions& o, std::ostream& out, std::ostream& err) {
  if (o.image.empty() == o.images.empty()) throw InputError("give exactly one of --image or --images");
  std::vector<ImageInput> images;
  if (!o.image.empty())
    images.push_back(ImageInput::from_path(o.image));
  else
    images = read_image_list(o.images);

  PipelineConfig config = pipeline_config(o);
  const auto store = EmbeddingStore::load(o.index);
  Gateway gateway(make_provider(o.provider));
  CaptionPipeline pipeline(store, gateway, config);

  auto cfg = pipeline_config_json(config);
  cfg["index"] = o.index;
  cfg["index_hash"] = file_content_hash(o.index);
  cfg["shots"] = o.shots.empty() ? "builtin" : o.shots;
  cfg["shots_hash"] = shots_hash(o.shots);
  const auto manifest = run_manifest("caption", cfg, o.provider);

  const auto batch = pipeline.caption_batch(images);
  OutputSink sink(o.out, out);
  sink.stream() << nlohmann::ordered_json{{"run_manifest", manifest}}.dump() << "\n";
  for (const auto& r : batch.results)
    if (r) sink.stream() << to_json(*r).dump() << "\n";
  sink.stream().flush();
  return report_batch_errors(batch, err);
}

struct EvaluateOptions {
  std::string predictions;
  std::string references;
  std::string out = "-";
  std::string lang;
};

inline int cmd_evaluate(const EvaluateOptions& o, std::ostream& out) {
  nlohmann::ordered_json pred_manifest;
  {
    std::ifstream in(o.predictions);
    if (!in) throw InputError("cannot open predictions " + o.predictions);
    std::string first;
    if (std::getline(in, first)) {
      try {
        const auto j = nlohmann::ordered_json::parse(first);
        if (j.contains("run_manifest")) pred_manifest = j["run_manifest"];
      } catch (const nlohmann::json::exception&) {
      }
    }
  }
  std::string lang = o.lang;
  if (lang.empty() && pred_manifest.is_object() && pred_manifest.contains("config"))
    lang = pred_manifest["config"].value("language", "");
  const auto report = evaluate_run(o.predictions, o.references, lang);
  auto j = to_json(report);
  nlohmann::ordered_json cfg;
  cfg["predictions"] = o.predictions;
  cfg["predictions_hash"] = file_content_hash(o.predictions);
  cfg["references"] = o.references;
  cfg["references_hash"] = file_content_hash(o.references);
  if (!pred_manifest.is_null()) cfg["predictions_manifest"] = pred_manifest;
  const std::string provider = pred_manifest.is_object() ? pred_manifest.value("provider", "") : "";
  j["run_manifest"] = run_manifest("evaluate", cfg, provider);
  OutputSink sink(o.out, out);
  sink.stream() << j.dump(2) << "\n";
  return 0;
}

struct AblateOptions {
  std::string grid = std::string(kTable3Grid);
  std::vector<std::string> indexes;
  std::string images;
  std::string references;
  std::string lang = "en";
  std::size_t c = 3;
  std::size_t beam = 3;
  std::size_t max_new_tokens = 40;
  std::string prompt_template = "retrieval";
  std::string shots;
  std::string provider = "mock";
  std::string out = "-";
  unsigned jobs = 0;
};

inline int cmd_ablate(const AblateOptions& o, std::ostream& out) {
  GridCell base;
  base.c = o.c;
  base.beam = o.beam;
  base.prompt_template = parse_template(o.prompt_template);
  const auto cells = parse_grid(o.grid, base);
  const auto images = read_image_list(o.images);
  const auto refs = load_references(o.references);
  const auto shots = load_shots(o.shots);
  Gateway gateway(make_provider(o.provider));

  nlohmann::ordered_json cfg;
  cfg["grid"] = o.grid;
  cfg["language"] = o.lang;
  cfg["images"] = o.images;
  cfg["images_hash"] = file_content_hash(o.images);
  cfg["references"] = o.references;
  cfg["references_hash"] = file_content_hash(o.references);
  cfg["shots"] = o.shots.empty() ? "builtin" : o.shots;
  cfg["shots_hash"] = shots_hash(o.shots);
  cfg["indexes"] = nlohmann::ordered_json::array();
  for (const auto& idx : o.indexes) cfg["indexes"].push_back({{"path", idx}, {"hash", file_content_hash(idx)}});
  const auto manifest = run_manifest("ablate", cfg, o.provider);

  OutputSink sink(o.out, out);
  auto& s = sink.stream();
  s << "# run_manifest: " << manifest.dump() << "\n";
  s << "group\tsetup\tdatastore\tk\tn\tc\ttemplate\tinstances\tbleu1\tbleu4\trougeL\tciderD\n";
  for (const auto& index_path : o.indexes) {
    const auto store = EmbeddingStore::load(index_path);
    const std::string datastore = std::filesystem::path(index_path).stem().string();
    for (const auto& cell : cells) {
      PipelineConfig pc;
      pc.k = cell.k;
      pc.n = cell.n;
      pc.c = cell.c;
      pc.beam_size = cell.beam;
      pc.max_new_tokens = o.max_new_tokens;
      pc.language = o.lang;
      pc.prompt_template = cell.prompt_template;
      pc.shots = shots;
      pc.parallelism = o.jobs;
      CaptionPipeline pipeline(store, gateway, pc);
      const auto batch = pipeline.caption_batch(images);
      if (!batch.errors.empty()) {
        const auto& e = batch.errors.front();
        throw Error(e.kind, "cell " + cell_label(cell) + ": image " + e.id + " failed: " + e.message);
      }
      std::vector<Prediction> preds;
      for (const auto& r : batch.results) preds.push_back({r->id, r->chosen});
      const auto rep = evaluate(preds, refs, o.lang);
      s << cell.group << '\t' << cell_label(cell) << '\t' << datastore << '\t' << cell.k << '\t' << cell.n << '\t'
        << cell.c << '\t' << to_string(cell.prompt_template) << '\t' << rep.instances << '\t' << fmt6(rep.bleu1)
        << '\t' << fmt6(rep.bleu4) << '\t' << fmt6(rep.rouge_l) << '\t' << fmt6(rep.cider_d) << '\n';
    }
  }
  s.flush();
  return 0;
}

inline int cmd_conformance(const std::string& provider, std::ostream& out) {
  auto p = make_provider(provider);
  int failures = 0;
  for (const auto& c : run_conformance(*p)) {
    out << (c.passed ? "PASS  " : "FAIL  ") << c.name;
    if (!c.passed) {
      out << " -- " << c.detail;
      ++failures;
    }
    out << "\n";
  }
  return failures ? 3 : 0;
}

// ---------------------------------------------------------------------------
// Entry point

// Splices the entries of `--config FILE` in right after the subcommand name,
// so any flag given on the command line comes later and wins.
inline std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.empty()) return args;
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  if (!std::filesystem::exists(path)) throw InputError("config file not found: " + path);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_file(path);
  } catch (const CLI::Error& e) {
    throw InputError("bad config file " + path + ": " + e.what());
  }
  std::vector<std::string> out{args[0]};
  for (const auto& item : items) {
    if (!item.parents.empty() && item.parents.front() != args[0]) continue;
    if (item.name == "config" || item.name.empty()) continue;
    if (item.name == "provider" && std::getenv(kProviderEnv)) continue;
    for (const auto& v : item.inputs) {
      out.push_back("--" + item.name);
      out.push_back(v);
    }
  }
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

// `args` excludes the program name.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app("ragcap: retrieval-augmented multilingual image captioning", "ragcap");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_file;
  auto add_config = [&](CLI::App* sub) { sub->add_option("--config", config_file, "Config file (key = value)"); };

  BuildIndexOptions bo;
  auto* build = app.add_subcommand("build-index", "Embed a caption corpus and write an index file");
  add_config(build);
  build->add_option("--captions", bo.captions, "Caption file(s)")->required();
  build->add_option("--format", bo.format, "jsonl | coco-json")
      ->check(CLI::IsMember({"jsonl", "coco-json"}))
      ->capture_default_str();
  build->add_option("--out", bo.out, "Index file to write")->required();
  build->add_option("--provider", bo.provider, "Provider base URL or `mock`")->envname(kProviderEnv)->capture_default_str();
  build->add_option("--language", bo.language, "Language code for captions without one")->capture_default_str();
  build->add_option("--source", bo.sources, "Corpus tag (one, or one per --captions)")->capture_default_str();

  CaptionOptions co;
  auto* caption = app.add_subcommand("caption", "Caption images");
  add_config(caption);
  add_caption_options(*caption, co);

  EvaluateOptions eo;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score predictions against references");
  add_config(evaluate_cmd);
  evaluate_cmd->add_option("--predictions", eo.predictions, "Predictions jsonl")->required();
  evaluate_cmd->add_option("--references", eo.references, "References JSON (id -> [refs] or COCO annotations)")
      ->required();
  evaluate_cmd->add_option("--out", eo.out, "Report JSON (`-` for stdout)")->capture_default_str();
  evaluate_cmd->add_option("--lang", eo.lang, "Language label (default: from the predictions manifest)");

  AblateOptions ao;
  auto* ablate = app.add_subcommand("ablate", "Sweep K/N/c/template over a grid and score each cell");
  add_config(ablate);
  ablate->add_option("--grid", ao.grid, "Grid, e.g. \"k=1..5;n=1 | k=4;n=1..4\" or `table3`")->capture_default_str();
  ablate->add_option("--index", ao.indexes, "Index file(s); one sweep per datastore")->required();
  ablate->add_option("--images", ao.images, "Image list file")->required();
  ablate->add_option("--references", ao.references, "References JSON")->required();
  ablate->add_option("--lang", ao.lang, "Target language code")->capture_default_str();
  ablate->add_option("--c", ao.c, "Default candidate count")->capture_default_str();
  ablate->add_option("--beam", ao.beam, "Default beam size")->capture_default_str();
  ablate->add_option("--max-new-tokens", ao.max_new_tokens, "Generation length limit")->capture_default_str();
  ablate->add_option("--template", ao.prompt_template, "Default template")
      ->check(CLI::IsMember({"retrieval", "socratic"}))
      ->capture_default_str();
  ablate->add_option("--shots", ao.shots, "Shots file");
  ablate->add_option("--provider", ao.provider, "Provider base URL or `mock`")->envname(kProviderEnv)->capture_default_str();
  ablate->add_option("--out", ao.out, "TSV output (`-` for stdout)")->capture_default_str();
  ablate->add_option("--jobs", ao.jobs, "Concurrent images");

  std::string serve_host = "127.0.0.1";
  int serve_port = 8089;
  auto* serve = app.add_subcommand("serve-mock", "Serve the mock provider over HTTP");
  add_config(serve);
  serve->add_option("--host", serve_host)->capture_default_str();
  serve->add_option("--port", serve_port)->capture_default_str();

  std::string conf_provider;
  auto* conformance = app.add_subcommand("conformance", "Check a provider against the wire protocol contract");
  add_config(conformance);
  conformance->add_option("--provider", conf_provider, "Provider base URL or `mock`")->envname(kProviderEnv)->required();

  try {
    args = expand_config(args);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  }
  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*build) return cmd_build_index(bo, out);
    if (*caption) return cmd_caption(co, out, err);
    if (*evaluate_cmd) return cmd_evaluate(eo, out);
    if (*ablate) return cmd_ablate(ao, out);
    if (*conformance) return cmd_conformance(conf_provider, out);
    if (*serve) {
      ProviderServer server(std::make_shared<MockProvider>());
      err << "serving mock provider on http://" << serve_host << ":" << serve_port << "\n";
      server.listen(serve_host, serve_port);
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 4;
  }
  return 4;
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args));
}

}  // namespace ragcap::cli
