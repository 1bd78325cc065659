#pragma once

// Configuration schema for the model, training, inference/evaluation and the
// synthetic-scene generator. Schema defaults carry the published values;
// configs/desk.json overrides them with the desk-scale setup used by the
// bundled experiments.

#include <cstdint>
#include <string>
#include <vector>

#include "lpnet/box.hpp"

namespace lpnet {

struct ModelConfig {
  // three stages separated by the two pooling layers
  std::vector<std::vector<int>> backbone_stages{{32}, {32}, {64, 64, 128, 128}};
  int fc_width = 2048;
  int rec_channels = 512;
  int lstm_units = 512;
  double dropout_rate = 0.5;
  double head_init_std = 0.01;
  AnchorSpec anchor{};
  double rpn_nms_iou = 0.7;
  int rpn_top_n = 100;
  int pre_nms_top_n = 2000;
  // "fresh" trains the backbone at the fresh-layer rate; "pretrain_analog"
  // mirrors the published two-rate split
  std::string backbone_group = "fresh";
  uint64_t init_seed = 1;

  void validate() const;
};

struct TrainConfig {
  int iterations = 20000;
  double lr_pretrain = 1e-5;
  double lr_fresh = 1e-4;
  int halve_every = 10000;
  double lr_floor = 1e-5;
  int resize_shorter = 700;
  int resize_longer_cap = 1500;
  uint64_t seed = 1;
  int checkpoint_every = 1000;
  int checkpoint_keep = 3;
  std::string precision = "f32";  // "f64" for the bit-reproducible reference mode
  int freeze_convs = 0;           // leading backbone convs excluded from updates
  int backbone_train_until = 0;   // >0: backbone updates stop after this iteration

  void validate() const;
};

struct EvalConfig {
  std::vector<int> scales{600, 1200};  // shorter-side targets
  double score_threshold = 0.95;
  double final_nms_iou = 0.5;
  int resize_longer_cap = 1500;
  // "primary": keep the single best plate per image (7-char preference rule);
  // "all": keep every detection
  std::string selection = "primary";
  std::string wildcard = "*";  // empty string disables wildcard matching

  void validate() const;
};

struct SceneConfig {
  int image_w = 480, image_h = 270;
  double plate_h_min = 20, plate_h_max = 80;
  int plates_min = 1, plates_max = 1;
  int distractors = 3;
  std::string background = "clutter";  // noise | gradient | clutter
  double brightness_jitter = 0.15;
  double contrast_jitter = 0.2;
  double blur_sigma_max = 0.8;
  int label_length = 7;
  bool augment = false;
  double augment_rotation_deg = 5.0;
  double augment_shear = 0.08;

  void validate() const;
  // the generated plate sizes must be coverable by the anchor inventory
  void validate_against_anchors(const AnchorSpec& spec) const;
};

struct Config {
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  SceneConfig synth;
};

// JSON round trip. Parsing is lenient about missing keys (schema defaults
// apply) and strict about unknown ones.
Config config_from_json_text(const std::string& text);
std::string config_to_json_text(const Config& cfg);
Config load_config_file(const std::string& path);

std::string model_config_to_json_text(const ModelConfig& cfg);
ModelConfig model_config_from_json_text(const std::string& text);

// Checkpoint header: model configuration, the embedded alphabet, the training
// iteration the file was written at, and the numeric precision of payloads.
std::string checkpoint_header_json(const ModelConfig& cfg, int64_t iteration,
                                   const std::string& precision);
void parse_checkpoint_header(const std::string& text, ModelConfig* cfg,
                             int64_t* iteration, std::string* precision);

}  // namespace lpnet
