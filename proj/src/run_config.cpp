#include "mpiv/run_config.hpp"

#include <fstream>
#include <functional>
#include <initializer_list>

#include "json.hpp"

namespace mpiv {
namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& what) { throw ConfigInvalid("run config: " + what); }

// Walks one section object, dispatching each key through `field`; `field`
// returns false for keys it does not know.
void walk_section(const json& doc, const char* name,
                  const std::function<bool(const std::string&, const json&)>& field) {
  if (!doc.contains(name)) return;
  const json& section = doc[name];
  if (!section.is_object()) bad(std::string(name) + " must be an object");
  for (const auto& [key, value] : section.items())
    if (!field(key, value)) bad(std::string(name) + "." + key + " is not a recognized key");
}

int get_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) bad(where + " must be an integer");
  return v.get<int>();
}

int64_t get_int64(const json& v, const std::string& where) {
  if (!v.is_number_integer()) bad(where + " must be an integer");
  return v.get<int64_t>();
}

double get_number(const json& v, const std::string& where) {
  if (!v.is_number()) bad(where + " must be a number");
  return v.get<double>();
}

bool get_bool(const json& v, const std::string& where) {
  if (!v.is_boolean()) bad(where + " must be a boolean");
  return v.get<bool>();
}

std::string get_string(const json& v, const std::string& where) {
  if (!v.is_string()) bad(where + " must be a string");
  return v.get<std::string>();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  const json doc = json::parse(json_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) bad("not a JSON object");
  for (const auto& [key, value] : doc.items()) {
    (void)value;
    bool known = false;
    for (const char* section : {"model", "sampler", "train", "scene", "stereo", "render", "bench"})
      known |= key == section;
    if (!known) bad("\"" + key + "\" is not a recognized section");
  }

  RunConfig out;

  walk_section(doc, "model", [&](const std::string& k, const json& v) {
    if (k == "planes") out.model.planes = get_int(v, "model.planes");
    else if (k == "hidden") out.model.hidden = get_int(v, "model.hidden");
    else if (k == "steps") out.model.steps = get_int(v, "model.steps");
    else return false;
    return true;
  });

  walk_section(doc, "sampler", [&](const std::string& k, const json& v) {
    if (k == "steps") out.sampler.steps = get_int(v, "sampler.steps");
    else if (k == "eta") out.sampler.eta = get_number(v, "sampler.eta");
    else if (k == "ref_scale") out.sampler.ref_scale = get_number(v, "sampler.ref_scale");
    else if (k == "ramp_frames") out.sampler.ramp_frames = get_int(v, "sampler.ramp_frames");
    else if (k == "video_frames") out.sampler.video_frames = get_int(v, "sampler.video_frames");
    else return false;
    return true;
  });

  walk_section(doc, "train", [&](const std::string& k, const json& v) {
    TrainConfig& c = out.train.config;
    if (k == "stage") out.train.stage = get_string(v, "train.stage");
    else if (k == "steps") out.train.steps = get_int64(v, "train.steps");
    else if (k == "video_frames") out.train.video_frames = get_int(v, "train.video_frames");
    else if (k == "lr") c.lr = get_number(v, "train.lr");
    else if (k == "beta1") c.beta1 = get_number(v, "train.beta1");
    else if (k == "beta2") c.beta2 = get_number(v, "train.beta2");
    else if (k == "eps") c.eps = get_number(v, "train.eps");
    else if (k == "mask_w") c.mask_w = get_number(v, "train.mask_w");
    else if (k == "smooth_w") c.smooth_w = get_number(v, "train.smooth_w");
    else if (k == "disparity_w") c.disparity_w = get_number(v, "train.disparity_w");
    else if (k == "lpips_w") c.lpips_w = get_number(v, "train.lpips_w");
    else if (k == "p_side") c.p_side = get_number(v, "train.p_side");
    else if (k == "pseudo_gt_steps") c.pseudo_gt_steps = get_int(v, "train.pseudo_gt_steps");
    else if (k == "late_stage_min") c.late_stage_min = get_int(v, "train.late_stage_min");
    else if (k == "p_drop_first_frame")
      c.p_drop_first_frame = get_number(v, "train.p_drop_first_frame");
    else if (k == "p_drop_reference") c.p_drop_reference = get_number(v, "train.p_drop_reference");
    else if (k == "use_residual") c.use_residual = get_bool(v, "train.use_residual");
    else if (k == "late_stage") c.late_stage = get_bool(v, "train.late_stage");
    else return false;
    return true;
  });

  walk_section(doc, "scene", [&](const std::string& k, const json& v) {
    if (k == "scenes") out.scene.scenes = get_int(v, "scene.scenes");
    else if (k == "frames_per_clip") out.scene.frames_per_clip = get_int(v, "scene.frames_per_clip");
    else return false;
    return true;
  });

  walk_section(doc, "stereo", [&](const std::string& k, const json& v) {
    if (k == "baseline") out.stereo.baseline = get_number(v, "stereo.baseline");
    else if (k == "distance") out.stereo.distance = get_number(v, "stereo.distance");
    else if (k == "window") out.stereo.window = get_int(v, "stereo.window");
    else if (k == "max_disp") out.stereo.max_disp = get_int(v, "stereo.max_disp");
    else if (k == "min_contrast") out.stereo.min_contrast = get_number(v, "stereo.min_contrast");
    else return false;
    return true;
  });

  walk_section(doc, "render", [&](const std::string& k, const json& v) {
    if (k == "distance") out.render.distance = get_number(v, "render.distance");
    else return false;
    return true;
  });

  walk_section(doc, "bench", [&](const std::string& k, const json& v) {
    if (k == "width") out.bench.width = get_int(v, "bench.width");
    else if (k == "height") out.bench.height = get_int(v, "bench.height");
    else if (k == "planes") out.bench.planes = get_int(v, "bench.planes");
    else if (k == "frames") out.bench.frames = get_int(v, "bench.frames");
    else if (k == "repeats") out.bench.repeats = get_int(v, "bench.repeats");
    else return false;
    return true;
  });

  if (out.model.planes < 2 || out.model.hidden < 1 || out.model.steps < 1)
    bad("model section out of range");
  if (out.sampler.steps < 1 || out.sampler.ramp_frames < 0 || out.sampler.video_frames < 1)
    bad("sampler section out of range");
  if (out.train.stage != "bootstrap" && out.train.stage != "alternating")
    bad("train.stage must be \"bootstrap\" or \"alternating\"");
  if (out.train.steps < 0 || out.train.video_frames < 1) bad("train section out of range");
  if (out.scene.scenes < 1 || out.scene.frames_per_clip < 1) bad("scene section out of range");
  if (!(out.stereo.baseline > 0) || !(out.stereo.distance > 0) || out.stereo.max_disp < 0)
    bad("stereo section out of range");
  if (!(out.render.distance > 0.15)) bad("render.distance too small for the MPI volume");
  if (out.bench.width < 1 || out.bench.height < 1 || out.bench.planes < 2 ||
      out.bench.frames < 1 || out.bench.repeats < 1)
    bad("bench section out of range");

  out.train.config.stage =
      out.train.stage == "bootstrap" ? TrainStage::kBootstrap : TrainStage::kAlternating;
  return out;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

}  // namespace mpiv
