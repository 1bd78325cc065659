#include "lpnet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "lpnet/image.hpp"

namespace lpnet {

using nlohmann::json;

namespace {

// assigns dst from obj[key] when present; records the key as consumed
template <typename V>
void take(const json& obj, std::set<std::string>& seen, const char* key, V& dst) {
  if (obj.contains(key)) {
    seen.insert(key);
    dst = obj.at(key).get<V>();
  }
}

void reject_unknown(const json& obj, const std::set<std::string>& seen,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!seen.count(it.key()))
      throw DataError("config: unknown key '" + it.key() + "' in " + where);
}

json anchor_to_json(const AnchorSpec& a) {
  return json{{"heights", a.heights},
              {"aspect_ratio", a.aspect_ratio},
              {"stride", a.stride},
              {"units", a.units == AnchorUnits::kFeature ? "feature" : "image"}};
}

AnchorSpec anchor_from_json(const json& j) {
  AnchorSpec a;
  std::set<std::string> seen;
  take(j, seen, "heights", a.heights);
  take(j, seen, "aspect_ratio", a.aspect_ratio);
  take(j, seen, "stride", a.stride);
  std::string units = a.units == AnchorUnits::kFeature ? "feature" : "image";
  take(j, seen, "units", units);
  if (units == "feature")
    a.units = AnchorUnits::kFeature;
  else if (units == "image")
    a.units = AnchorUnits::kImage;
  else
    throw DataError("config: anchor units must be 'image' or 'feature'");
  reject_unknown(j, seen, "anchor");
  a.validate();
  return a;
}

json model_to_json(const ModelConfig& m) {
  return json{{"backbone_stages", m.backbone_stages},
              {"fc_width", m.fc_width},
              {"rec_channels", m.rec_channels},
              {"lstm_units", m.lstm_units},
              {"dropout_rate", m.dropout_rate},
              {"head_init_std", m.head_init_std},
              {"anchor", anchor_to_json(m.anchor)},
              {"rpn_nms_iou", m.rpn_nms_iou},
              {"rpn_top_n", m.rpn_top_n},
              {"pre_nms_top_n", m.pre_nms_top_n},
              {"backbone_group", m.backbone_group},
              {"init_seed", m.init_seed}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  std::set<std::string> seen;
  take(j, seen, "backbone_stages", m.backbone_stages);
  take(j, seen, "fc_width", m.fc_width);
  take(j, seen, "rec_channels", m.rec_channels);
  take(j, seen, "lstm_units", m.lstm_units);
  take(j, seen, "dropout_rate", m.dropout_rate);
  take(j, seen, "head_init_std", m.head_init_std);
  if (j.contains("anchor")) {
    seen.insert("anchor");
    m.anchor = anchor_from_json(j.at("anchor"));
  }
  take(j, seen, "rpn_nms_iou", m.rpn_nms_iou);
  take(j, seen, "rpn_top_n", m.rpn_top_n);
  take(j, seen, "pre_nms_top_n", m.pre_nms_top_n);
  take(j, seen, "backbone_group", m.backbone_group);
  take(j, seen, "init_seed", m.init_seed);
  reject_unknown(j, seen, "model");
  m.validate();
  return m;
}

json train_to_json(const TrainConfig& t) {
  return json{{"iterations", t.iterations},
              {"lr_pretrain", t.lr_pretrain},
              {"lr_fresh", t.lr_fresh},
              {"halve_every", t.halve_every},
              {"lr_floor", t.lr_floor},
              {"resize_shorter", t.resize_shorter},
              {"resize_longer_cap", t.resize_longer_cap},
              {"seed", t.seed},
              {"checkpoint_every", t.checkpoint_every},
              {"checkpoint_keep", t.checkpoint_keep},
              {"precision", t.precision},
              {"freeze_convs", t.freeze_convs},
              {"backbone_train_until", t.backbone_train_until}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  std::set<std::string> seen;
  take(j, seen, "iterations", t.iterations);
  take(j, seen, "lr_pretrain", t.lr_pretrain);
  take(j, seen, "lr_fresh", t.lr_fresh);
  take(j, seen, "halve_every", t.halve_every);
  take(j, seen, "lr_floor", t.lr_floor);
  take(j, seen, "resize_shorter", t.resize_shorter);
  take(j, seen, "resize_longer_cap", t.resize_longer_cap);
  take(j, seen, "seed", t.seed);
  take(j, seen, "checkpoint_every", t.checkpoint_every);
  take(j, seen, "checkpoint_keep", t.checkpoint_keep);
  take(j, seen, "precision", t.precision);
  take(j, seen, "freeze_convs", t.freeze_convs);
  take(j, seen, "backbone_train_until", t.backbone_train_until);
  reject_unknown(j, seen, "train");
  t.validate();
  return t;
}

json eval_to_json(const EvalConfig& e) {
  return json{{"scales", e.scales},
              {"score_threshold", e.score_threshold},
              {"final_nms_iou", e.final_nms_iou},
              {"resize_longer_cap", e.resize_longer_cap},
              {"selection", e.selection},
              {"wildcard", e.wildcard}};
}

EvalConfig eval_from_json(const json& j) {
  EvalConfig e;
  std::set<std::string> seen;
  take(j, seen, "scales", e.scales);
  take(j, seen, "score_threshold", e.score_threshold);
  take(j, seen, "final_nms_iou", e.final_nms_iou);
  take(j, seen, "resize_longer_cap", e.resize_longer_cap);
  take(j, seen, "selection", e.selection);
  take(j, seen, "wildcard", e.wildcard);
  reject_unknown(j, seen, "eval");
  e.validate();
  return e;
}

json synth_to_json(const SceneConfig& s) {
  return json{{"image_w", s.image_w},
              {"image_h", s.image_h},
              {"plate_h_min", s.plate_h_min},
              {"plate_h_max", s.plate_h_max},
              {"plates_min", s.plates_min},
              {"plates_max", s.plates_max},
              {"distractors", s.distractors},
              {"background", s.background},
              {"brightness_jitter", s.brightness_jitter},
              {"contrast_jitter", s.contrast_jitter},
              {"blur_sigma_max", s.blur_sigma_max},
              {"label_length", s.label_length},
              {"augment", s.augment},
              {"augment_rotation_deg", s.augment_rotation_deg},
              {"augment_shear", s.augment_shear}};
}

SceneConfig synth_from_json(const json& j) {
  SceneConfig s;
  std::set<std::string> seen;
  take(j, seen, "image_w", s.image_w);
  take(j, seen, "image_h", s.image_h);
  take(j, seen, "plate_h_min", s.plate_h_min);
  take(j, seen, "plate_h_max", s.plate_h_max);
  take(j, seen, "plates_min", s.plates_min);
  take(j, seen, "plates_max", s.plates_max);
  take(j, seen, "distractors", s.distractors);
  take(j, seen, "background", s.background);
  take(j, seen, "brightness_jitter", s.brightness_jitter);
  take(j, seen, "contrast_jitter", s.contrast_jitter);
  take(j, seen, "blur_sigma_max", s.blur_sigma_max);
  take(j, seen, "label_length", s.label_length);
  take(j, seen, "augment", s.augment);
  take(j, seen, "augment_rotation_deg", s.augment_rotation_deg);
  take(j, seen, "augment_shear", s.augment_shear);
  reject_unknown(j, seen, "synth");
  s.validate();
  return s;
}

}  // namespace

void ModelConfig::validate() const {
  if (backbone_stages.size() != 3)
    throw DataError("config: backbone_stages must have exactly 3 stages");
  for (const auto& st : backbone_stages) {
    if (st.empty()) throw DataError("config: empty backbone stage");
    for (int c : st)
      if (c <= 0) throw DataError("config: non-positive backbone channel count");
  }
  if (fc_width <= 0 || rec_channels <= 0 || lstm_units <= 0)
    throw DataError("config: head widths must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw DataError("config: dropout_rate must lie in [0,1)");
  if (backbone_group != "fresh" && backbone_group != "pretrain_analog")
    throw DataError("config: backbone_group must be 'fresh' or 'pretrain_analog'");
  anchor.validate();
}

void TrainConfig::validate() const {
  if (iterations < 0) throw DataError("config: iterations must be >= 0");
  if (lr_pretrain <= 0 || lr_fresh <= 0 || lr_floor <= 0)
    throw DataError("config: learning rates must be positive");
  if (halve_every <= 0) throw DataError("config: halve_every must be positive");
  if (resize_shorter <= 0 || resize_longer_cap <= 0)
    throw DataError("config: resize targets must be positive");
  if (checkpoint_every <= 0 || checkpoint_keep <= 0)
    throw DataError("config: checkpoint cadence must be positive");
  if (precision != "f32" && precision != "f64")
    throw DataError("config: precision must be 'f32' or 'f64'");
}

void EvalConfig::validate() const {
  if (scales.empty()) throw DataError("config: eval scales must be non-empty");
  for (int s : scales)
    if (s <= 0) throw DataError("config: eval scales must be positive");
  if (score_threshold < 0 || score_threshold > 1)
    throw DataError("config: score_threshold must lie in [0,1]");
  if (selection != "primary" && selection != "all")
    throw DataError("config: selection must be 'primary' or 'all'");
  if (wildcard.size() > 1)
    throw DataError("config: wildcard must be a single symbol or empty");
}

void SceneConfig::validate() const {
  if (image_w < 64 || image_h < 64) throw DataError("config: scene too small");
  if (plate_h_min <= 0 || plate_h_max < plate_h_min)
    throw DataError("config: bad plate height range");
  if (plates_min < 1 || plates_max < plates_min)
    throw DataError("config: bad plate count range");
  if (distractors < 0) throw DataError("config: negative distractor count");
  if (background != "noise" && background != "gradient" && background != "clutter")
    throw DataError("config: background must be noise|gradient|clutter");
  if (label_length < 1) throw DataError("config: label_length must be >= 1");
  if (augment_rotation_deg < 0 || augment_rotation_deg > 15)
    throw DataError("config: augment rotation must lie in [0,15] degrees");
  if (augment_shear < 0 || augment_shear > 0.2)
    throw DataError("config: augment shear must lie in [0,0.2]");
}

void SceneConfig::validate_against_anchors(const AnchorSpec& spec) const {
  const double lo = spec.image_height(0);
  const double hi = spec.image_height(spec.count() - 1);
  if (plate_h_min < lo - 1e-9 || plate_h_max > hi + 1e-9)
    throw DataError("config: plate height range [" + std::to_string(plate_h_min) +
                    "," + std::to_string(plate_h_max) +
                    "] falls outside anchor coverage [" + std::to_string(lo) + "," +
                    std::to_string(hi) + "]");
}

Config config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("config: JSON parse error: ") + e.what());
  }
  Config cfg;
  std::set<std::string> seen;
  if (j.contains("model")) {
    seen.insert("model");
    cfg.model = model_from_json(j.at("model"));
  }
  if (j.contains("train")) {
    seen.insert("train");
    cfg.train = train_from_json(j.at("train"));
  }
  if (j.contains("eval")) {
    seen.insert("eval");
    cfg.eval = eval_from_json(j.at("eval"));
  }
  if (j.contains("synth")) {
    seen.insert("synth");
    cfg.synth = synth_from_json(j.at("synth"));
  }
  reject_unknown(j, seen, "top level");
  return cfg;
}

std::string config_to_json_text(const Config& cfg) {
  json j{{"model", model_to_json(cfg.model)},
         {"train", train_to_json(cfg.train)},
         {"eval", eval_to_json(cfg.eval)},
         {"synth", synth_to_json(cfg.synth)}};
  return j.dump(2) + "\n";
}

Config load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("config: cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return config_from_json_text(buf.str());
}

std::string model_config_to_json_text(const ModelConfig& cfg) {
  return model_to_json(cfg).dump();
}

ModelConfig model_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("model config: JSON parse error: ") + e.what());
  }
  return model_from_json(j);
}

std::string checkpoint_header_json(const ModelConfig& cfg, int64_t iteration,
                                   const std::string& precision) {
  json j{{"format", "lpnet-checkpoint"},
         {"alphabet", "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"},
         {"blank_index", 36},
         {"iteration", iteration},
         {"precision", precision},
         {"model", model_to_json(cfg)}};
  return j.dump();
}

void parse_checkpoint_header(const std::string& text, ModelConfig* cfg,
                             int64_t* iteration, std::string* precision) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint header: JSON parse error: ") + e.what());
  }
  if (!j.contains("format") || j.at("format") != "lpnet-checkpoint")
    throw DataError("checkpoint header: unrecognized format tag");
  if (cfg) *cfg = model_from_json(j.at("model"));
  if (iteration) *iteration = j.value("iteration", int64_t(0));
  if (precision) *precision = j.value("precision", std::string("f64"));
}

}  // namespace lpnet
