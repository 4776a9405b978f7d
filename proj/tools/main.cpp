// cinetraj command-line entry point.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "cinetraj/align.hpp"
#include "cinetraj/caption.hpp"
#include "cinetraj/checkpoint.hpp"
#include "cinetraj/clatr.hpp"
#include "cinetraj/clean.hpp"
#include "cinetraj/config.hpp"
#include "cinetraj/director.hpp"
#include "cinetraj/error.hpp"
#include "cinetraj/etj.hpp"
#include "cinetraj/metrics.hpp"
#include "cinetraj/synth.hpp"
#include "cinetraj/tagging.hpp"
#include "cinetraj/vocab.hpp"

namespace fs = std::filesystem;
using namespace cinetraj;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 64;
constexpr int kExitMalformed = 65;
constexpr int kExitDegenerate = 2;

json config_or_empty(const std::string& path) {
  return path.empty() ? json::object() : read_json_file(path);
}

std::string env_or(const char* name, const std::string& fallback) {
  if (!fallback.empty()) return fallback;
  const char* v = std::getenv(name);
  return v ? v : "";
}

void emit(const json& line) {
  std::cout << line.dump() << '\n' << std::flush;
}

nn::Mat hips_matrix(const std::vector<Vec3>& hips) {
  nn::Mat h(static_cast<Eigen::Index>(hips.size()), 3);
  for (std::size_t i = 0; i < hips.size(); ++i) h.row(static_cast<Eigen::Index>(i)) = hips[i].transpose();
  return h;
}

std::vector<Vec3> hips_or_static(const EtjDocument& doc) {
  if (doc.character_hips) return *doc.character_hips;
  return std::vector<Vec3>(doc.camera.size(), kCharacterStart);
}

std::vector<EtjDocument> load_split(const fs::path& manifest, const std::string& split) {
  std::vector<EtjDocument> out;
  for (const auto& e : load_manifest(manifest)) {
    if (split.empty() || e.split == split) out.push_back(load_etj(e.path));
  }
  if (out.empty()) throw Error(ErrorCode::kInput, manifest.string() + ": no entries in split '" + split + "'");
  return out;
}

const std::string& require_caption(const EtjDocument& doc, std::size_t index) {
  if (!doc.caption || doc.caption->empty()) {
    throw Error(ErrorCode::kInput, "entry " + std::to_string(index) + " has no caption");
  }
  return *doc.caption;
}

// --- commands --------------------------------------------------------------

struct AlignArgs {
  std::string chunks, out;
};
int run_align(const AlignArgs& a) {
  std::vector<Chunk> chunks;
  for (const auto& e : load_manifest(a.chunks)) {
    const EtjDocument doc = load_etj(e.path);
    Chunk c;
    c.cameras = doc.camera;
    c.character = doc.character();
    c.overlap_len = e.overlap_len.value_or(kDefaultOverlap);
    chunks.push_back(std::move(c));
  }
  const AlignedShot shot = align_chunks(chunks);
  EtjDocument out;
  out.camera = shot.cameras;
  if (!shot.character.hips.empty()) out.character_hips = shot.character.hips;
  save_etj(a.out, out);
  json transforms = json::array();
  for (const auto& t : shot.transforms) {
    transforms.push_back({{"s", t.s}, {"b", {t.b.x(), t.b.y(), t.b.z()}}, {"residual_rms", t.residual_rms}});
  }
  emit({{"frames", shot.cameras.size()}, {"transforms", transforms}});
  return 0;
}

struct CleanArgs {
  std::string in, out_dir, config;
};
int run_clean(const CleanArgs& a) {
  const CleanConfig cfg = clean_config_from_json(config_or_empty(a.config));
  const EtjDocument doc = load_etj(a.in);
  const auto pieces = clean_shot(doc.camera, doc.character(), cfg);
  fs::create_directories(a.out_dir);
  const std::string stem = fs::path(a.in).stem().string();
  json written = json::array();
  for (std::size_t k = 0; k < pieces.size(); ++k) {
    EtjDocument o;
    o.camera = pieces[k].camera;
    if (!pieces[k].character.hips.empty()) o.character_hips = pieces[k].character.hips;
    char name[64];
    std::snprintf(name, sizeof(name), "_%03zu.etj", k);
    const fs::path p = fs::path(a.out_dir) / (stem + name);
    save_etj(p, o);
    written.push_back({{"path", p.string()}, {"source_start", pieces[k].source_start}, {"frames", o.camera.size()}});
  }
  emit({{"pieces", written}});
  return 0;
}

struct TagArgs {
  std::string in, out, config;
};
int run_tag(const TagArgs& a) {
  const TagConfig cfg = tag_config_from_json(config_or_empty(a.config));
  EtjDocument doc = load_etj(a.in);
  doc.camera_tags = tag_camera(doc.camera, cfg);
  if (doc.character_hips) {
    const Mat3 ref = doc.camera.poses.front().rotation;
    doc.character_tags = tag_character(doc.character(), cfg, ref);
  }
  save_etj(a.out.empty() ? a.in : a.out, doc);
  return 0;
}

struct CaptionArgs {
  std::string in, out, mode = "rule", kind = "camera-character", endpoint, key;
  int timeout_ms = 30000;
};
int run_caption(const CaptionArgs& a) {
  EtjDocument doc = load_etj(a.in);
  if (!doc.camera_tags) throw Error(ErrorCode::kInput, a.in + ": no camera tags; run `tag` first");
  const std::vector<TagSegment> empty;
  const auto& character = doc.character_tags ? *doc.character_tags : empty;
  if (a.mode == "prompt") {
    std::cout << build_llm_prompt(build_outline(*doc.camera_tags, character, doc.camera.size())) << std::flush;
    return 0;
  }
  Caption cap;
  if (a.mode == "rule") {
    cap = rule_based_caption(*doc.camera_tags, character, caption_kind_from_string(a.kind));
  } else {
    LlmRequest req;
    req.endpoint = env_or("CINETRAJ_LLM_ENDPOINT", a.endpoint);
    req.key = env_or("CINETRAJ_LLM_KEY", a.key);
    if (req.endpoint.empty()) throw Error(ErrorCode::kConfig, "llm mode needs --llm-endpoint or CINETRAJ_LLM_ENDPOINT");
    req.prompt = build_llm_prompt(build_outline(*doc.camera_tags, character, doc.camera.size()));
    req.timeout = std::chrono::milliseconds(a.timeout_ms);
    cap = llm_caption(req);
  }
  doc.caption = cap.text;
  doc.caption_kind = cap.kind;
  save_etj(a.out.empty() ? a.in : a.out, doc);
  emit({{"caption", cap.text}});
  return 0;
}

struct SynthArgs {
  std::string spec, out_dir;
};
int run_synth(const SynthArgs& a) {
  const SynthSpec spec = synth_spec_from_json(read_json_file(a.spec));
  const auto entries = gen_dataset(spec, a.out_dir);
  emit({{"samples", entries.size()}, {"manifest", (fs::path(a.out_dir) / "manifest.json").string()}});
  return 0;
}

struct TrainArgs {
  std::string model, data, config, out;
  int log_every = 1;
};

int train_director(const TrainArgs& a) {
  const DirectorSetup setup = director_setup_from_json(config_or_empty(a.config));
  const auto& vocab = Vocabulary::captions();
  const auto docs = load_split(a.data, "train");
  std::vector<CameraTrajectory> trajs;
  for (const auto& d : docs) trajs.push_back(d.camera);
  const double scale = Director::fit_translation_scale(trajs, setup.diffusion.sigma_data);
  std::vector<DirectorExample> data;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    DirectorExample ex;
    ex.x = trajectory_features(docs[i].camera, scale);
    ex.cond = {hips_matrix(hips_or_static(docs[i])), vocab.encode(require_caption(docs[i], i)), false};
    ex.mask = docs[i].camera.mask;
    data.push_back(std::move(ex));
  }
  Director model(setup.net, setup.diffusion, vocab.size(), setup.init_seed);
  model.set_translation_scale(scale);
  DirectorTrainOptions opt = setup.train;
  opt.on_step = [&](const TrainStep& s) {
    if ((s.step + 1) % a.log_every == 0 || s.step + 1 == opt.steps) {
      emit({{"step", s.step}, {"loss", s.loss}, {"lr", s.lr}, {"grad_norm", s.grad_norm}, {"sigma", s.last_sigma}});
    }
  };
  model.train(data, opt);
  model.save(a.out, vocab.hash());
  return 0;
}

int train_clatr(const TrainArgs& a) {
  const ClatrConfig cfg = clatr_config_from_json(config_or_empty(a.config));
  const auto& vocab = Vocabulary::captions();
  const auto docs = load_split(a.data, "train");
  std::vector<CameraTrajectory> trajs;
  std::vector<ClatrExample> data;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    trajs.push_back(docs[i].camera);
    data.push_back({trajectory_features(docs[i].camera), docs[i].camera.mask, vocab.encode(require_caption(docs[i], i))});
  }
  Clatr model(cfg, vocab.size());
  model.set_translation_scale(Director::fit_translation_scale(trajs, 1.0));
  model.train(data, [&](const ClatrTrainStep& s) {
    if ((s.step + 1) % a.log_every != 0 && s.step + 1 != cfg.steps) return;
    json weights = json::object();
    for (std::size_t k = 0; k < ClatrLoss::kLabels.size(); ++k) weights[std::string(ClatrLoss::kLabels[k])] = s.loss.weights[k];
    emit({{"step", s.step},
          {"loss", s.loss.total},
          {"recon", s.loss.recon},
          {"latent", s.loss.latent},
          {"kl", s.loss.kl},
          {"contrastive", s.loss.contrastive},
          {"weights", weights}});
  });
  model.save(a.out, vocab.hash());
  return 0;
}

struct SampleArgs {
  std::string ckpt, caption, character = "none", out;
  int steps = 0, frames = 100;
  double guidance = 2.0, fps = 25.0;
  std::uint64_t seed = 0;
};
int run_sample(const SampleArgs& a) {
  const auto& vocab = Vocabulary::captions();
  Director model = Director::load(a.ckpt, vocab.hash());
  if (a.steps > 0) model.diffusion().steps = a.steps;
  model.diffusion().guidance_w = a.guidance;
  model.diffusion().seed = a.seed;
  model.diffusion().validate();
  std::vector<Vec3> hips;
  double fps = a.fps;
  if (a.character == "none") {
    if (a.frames < 1 || a.frames > static_cast<int>(kMaxFrames)) throw Error(ErrorCode::kConfig, "--frames must be in [1, 300]");
    hips.assign(static_cast<std::size_t>(a.frames), kCharacterStart);
  } else {
    const EtjDocument c = load_etj(a.character);
    if (!c.character_hips) throw Error(ErrorCode::kInput, a.character + ": no character_hips");
    hips = *c.character_hips;
    fps = c.camera.fps;
  }
  const std::vector<SampleRequest> req{{vocab.encode(a.caption), hips_matrix(hips), fps}};
  EtjDocument out;
  out.camera = model.sample(req).front();
  out.character_hips = hips;
  out.caption = a.caption;
  out.caption_kind = CaptionKind::kCameraCharacter;
  save_etj(a.out, out);
  return 0;
}

struct EvalArgs {
  std::string ckpt, real, gen, out, config;
  int k = 3;
};
int run_eval(const EvalArgs& a) {
  const auto& vocab = Vocabulary::captions();
  const Clatr model = Clatr::load(a.ckpt, vocab.hash());
  const TagConfig cfg = tag_config_from_json(config_or_empty(a.config));
  std::vector<CameraTrajectory> real, gen;
  for (const auto& d : load_split(a.real, "")) real.push_back(d.camera);
  std::vector<std::vector<int>> tokens;
  std::vector<LabelSet> tags;
  const auto gdocs = load_split(a.gen, "");
  for (std::size_t i = 0; i < gdocs.size(); ++i) {
    const std::string& cap = require_caption(gdocs[i], i);
    gen.push_back(gdocs[i].camera);
    tokens.push_back(vocab.encode(cap));
    const auto labels = caption_camera_labels(cap);
    if (labels.empty()) throw Error(ErrorCode::kInput, "entry " + std::to_string(i) + ": caption names no camera motion");
    tags.emplace_back(labels.begin(), labels.end());
  }
  const MetricReport r = evaluate(model, {real, gen, tokens, tags}, cfg, a.k);
  write_file_atomic(a.out, r.to_json().dump(2) + "\n");
  emit(r.to_json());
  return 0;
}

struct PlotArgs {
  std::string in, out;
};
int run_export_plot(const PlotArgs& a) {
  const EtjDocument doc = load_etj(a.in);
  std::vector<std::string> tag(doc.camera.size());
  if (doc.camera_tags) {
    for (const auto& s : *doc.camera_tags) {
      for (std::size_t f = s.start; f <= s.end && f < tag.size(); ++f) tag[f] = s.label;
    }
  }
  std::string csv = "frame,tx,ty,tz,r0,r1,r2,r3,r4,r5,tag\n";
  char buf[512];
  for (std::size_t i = 0; i < doc.camera.size(); ++i) {
    const auto& p = doc.camera.poses[i];
    const Rot6D r = rot_to_6d(p.rotation);
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,", i, p.translation.x(),
                  p.translation.y(), p.translation.z(), r[0], r[1], r[2], r[3], r[4], r[5]);
    csv += buf;
    csv += tag[i] + "\n";
  }
  write_file_atomic(a.out, csv);
  return 0;
}

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::kFormat:
      return kExitMalformed;
    case ErrorCode::kDegenerateOverlap:
      return kExitDegenerate;
    default:
      return 1;
  }
}

int report(std::string_view code, const std::string& message, int exit_code) {
  std::cerr << json{{"error", code}, {"message", message}, {"exit", exit_code}}.dump() << '\n';
  return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Camera trajectory toolkit: alignment, cleaning, tagging, captioning, generation and metrics"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Cap on internal worker threads")->check(CLI::PositiveNumber);

  std::function<int()> action;

  AlignArgs align;
  auto* c_align = app.add_subcommand("align", "Merge overlapping chunks into one trajectory");
  c_align->add_option("--chunks", align.chunks, "Chunk manifest")->required();
  c_align->add_option("--out", align.out, "Output ETJ")->required();
  c_align->callback([&] { action = [&] { return run_align(align); }; });

  CleanArgs clean;
  auto* c_clean = app.add_subcommand("clean", "Drop outliers, split, smooth and crop");
  c_clean->add_option("--in", clean.in)->required();
  c_clean->add_option("--out-dir", clean.out_dir)->required();
  c_clean->add_option("--config", clean.config);
  c_clean->callback([&] { action = [&] { return run_clean(clean); }; });

  TagArgs tag;
  auto* c_tag = app.add_subcommand("tag", "Write camera and character motion tags");
  c_tag->add_option("--in", tag.in)->required();
  c_tag->add_option("--out", tag.out, "Defaults to rewriting --in");
  c_tag->add_option("--config", tag.config);
  c_tag->callback([&] { action = [&] { return run_tag(tag); }; });

  CaptionArgs cap;
  auto* c_cap = app.add_subcommand("caption", "Caption a tagged trajectory");
  c_cap->add_option("--in", cap.in)->required();
  c_cap->add_option("--out", cap.out, "Defaults to rewriting --in");
  c_cap->add_option("--mode", cap.mode)->check(CLI::IsMember({"rule", "prompt", "llm"}));
  c_cap->add_option("--kind", cap.kind)->check(CLI::IsMember({"camera", "camera-character"}));
  c_cap->add_option("--llm-endpoint", cap.endpoint);
  c_cap->add_option("--llm-key", cap.key);
  c_cap->add_option("--llm-timeout-ms", cap.timeout_ms)->check(CLI::PositiveNumber);
  c_cap->callback([&] { action = [&] { return run_caption(cap); }; });

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  c_synth->add_option("--spec", synth.spec)->required();
  c_synth->add_option("--out-dir", synth.out_dir)->required();
  c_synth->callback([&] { action = [&] { return run_synth(synth); }; });

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model; one JSON line per step on stdout");
  c_train->add_option("model", train.model)->required()->check(CLI::IsMember({"director", "clatr"}));
  c_train->add_option("--data", train.data)->required();
  c_train->add_option("--config", train.config);
  c_train->add_option("--out", train.out)->required();
  c_train->add_option("--log-every", train.log_every)->check(CLI::PositiveNumber);
  c_train->callback([&] {
    action = [&] { return train.model == "director" ? train_director(train) : train_clatr(train); };
  });

  SampleArgs sample;
  auto* c_sample = app.add_subcommand("sample", "Generate a camera trajectory");
  c_sample->add_option("--ckpt", sample.ckpt)->required();
  c_sample->add_option("--caption", sample.caption)->required();
  c_sample->add_option("--character", sample.character, "ETJ with character_hips, or none");
  c_sample->add_option("--frames", sample.frames, "Length when --character none");
  c_sample->add_option("--fps", sample.fps);
  c_sample->add_option("--steps", sample.steps, "Sampler steps; 0 keeps the checkpoint's");
  c_sample->add_option("--guidance", sample.guidance);
  c_sample->add_option("--seed", sample.seed);
  c_sample->add_option("--out", sample.out)->required();
  c_sample->callback([&] { action = [&] { return run_sample(sample); }; });

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Compute generation metrics");
  c_eval->add_option("--ckpt-clatr", ev.ckpt)->required();
  c_eval->add_option("--real", ev.real)->required();
  c_eval->add_option("--gen", ev.gen)->required();
  c_eval->add_option("--out", ev.out)->required();
  c_eval->add_option("--k", ev.k)->check(CLI::PositiveNumber);
  c_eval->add_option("--tag-config", ev.config);
  c_eval->callback([&] { action = [&] { return run_eval(ev); }; });

  PlotArgs plot;
  auto* c_plot = app.add_subcommand("export-plot", "Per-frame CSV for external plotting");
  c_plot->add_option("--in", plot.in)->required();
  c_plot->add_option("--out", plot.out)->required();
  c_plot->callback([&] { action = [&] { return run_export_plot(plot); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  // Computation is single-threaded; the cap also bounds Eigen.
  Eigen::setNbThreads(threads);

  try {
    return action();
  } catch (const Error& e) {
    return report(to_string(e.code()), e.what(), exit_code_for(e.code()));
  } catch (const json::exception& e) {
    return report("format", e.what(), kExitMalformed);
  } catch (const std::exception& e) {
    return report("internal", e.what(), 1);
  }
}
