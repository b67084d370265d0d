#pragma once

#include <cstdint>
#include <string>

#include "mpiv/model.hpp"
#include "mpiv/train.hpp"

namespace mpiv {

// JSON run configuration shared by every CLI command. Each section maps to
// one object in the file; absent sections and absent keys keep their
// defaults, unknown keys are rejected. The full schema:
//
//   {
//     "model":   {"planes", "hidden", "steps"},
//     "sampler": {"steps", "eta", "ref_scale", "ramp_frames", "video_frames"},
//     "train":   {"stage", "steps", "video_frames", "lr", "beta1", "beta2",
//                 "eps", "mask_w", "smooth_w", "disparity_w", "lpips_w",
//                 "p_side", "pseudo_gt_steps", "late_stage_min",
//                 "p_drop_first_frame", "p_drop_reference", "use_residual",
//                 "late_stage"},
//     "scene":   {"scenes", "frames_per_clip"},
//     "stereo":  {"baseline", "distance", "window", "max_disp",
//                 "min_contrast"},
//     "render":  {"distance"},
//     "bench":   {"width", "height", "planes", "frames", "repeats"}
//   }

struct SamplerSection {
  int steps = 8;
  double eta = 0.0;
  double ref_scale = 1.5;
  int ramp_frames = 16;
  int video_frames = 32;
};

struct TrainSection {
  std::string stage = "bootstrap";  // "bootstrap" | "alternating"
  int64_t steps = 200;
  int video_frames = 4;
  TrainConfig config;
};

struct SceneSection {
  int scenes = 4;
  int frames_per_clip = 32;
};

struct StereoSection {
  double baseline = 0.05;
  double distance = 1.0;
  int window = 7;
  int max_disp = 0;  // 0 = sized from baseline and distance
  double min_contrast = 0.01;
};

struct RenderSection {
  double distance = 1.0;  // subject distance defining the MPI volume
};

struct BenchSection {
  int width = 512;
  int height = 512;
  int planes = 24;
  int frames = 24;
  int repeats = 3;
};

struct RunConfig {
  Denoiser::Config model{8, 32, 64};
  SamplerSection sampler;
  TrainSection train;
  SceneSection scene;
  StereoSection stereo;
  RenderSection render;
  BenchSection bench;
};

// Throws ConfigInvalid on structural problems, unknown keys, wrong types, or
// out-of-range values; IoError when the file cannot be read.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

}  // namespace mpiv
