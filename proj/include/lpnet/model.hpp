#pragma once

// The full network: shared backbone feeding the RPN, the detection head and
// the recognition head, plus checkpoint save/load.

#include <string>
#include <utility>

#include "lpnet/config.hpp"
#include "lpnet/detector.hpp"
#include "lpnet/recognizer.hpp"

namespace lpnet {

template <typename T>
struct PlateModel {
  ModelConfig cfg;
  Backbone<T> backbone;
  RpnHead<T> rpn;
  DetectionHead<T> det;
  RecognitionHead<T> rec;

  explicit PlateModel(const ModelConfig& c) : cfg(c) {
    cfg.validate();
    Rng rng(mix_seed(cfg.init_seed, 0x6d6f64656cULL));
    LearningGroup bgroup = cfg.backbone_group == "pretrain_analog"
                               ? LearningGroup::kPretrainAnalog
                               : LearningGroup::kFresh;
    backbone = Backbone<T>(cfg.backbone_stages, bgroup, rng);
    rpn = RpnHead<T>(backbone.out_channels, cfg.anchor.count(), cfg.head_init_std, rng);
    det = DetectionHead<T>(backbone.out_channels, 4, 20, cfg.fc_width,
                           cfg.dropout_rate, cfg.head_init_std, rng);
    rec = RecognitionHead<T>(backbone.out_channels, cfg.rec_channels, cfg.lstm_units,
                             cfg.head_init_std, rng);
  }

  ParamRefs<T> params() {
    ParamRefs<T> out;
    backbone.collect(out);
    rpn.collect(out);
    det.collect(out);
    rec.collect(out);
    check_unique_names(out);
    return out;
  }

  Tensor<T> extract_features(const Tensor<T>& image) const {
    return backbone.forward(image);
  }

  void save(const std::string& path, int64_t iteration) {
    const std::string precision = sizeof(T) == 4 ? "f32" : "f64";
    save_checkpoint(path, checkpoint_header_json(cfg, iteration, precision), params());
  }

  static std::pair<PlateModel<T>, int64_t> load(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    ModelConfig cfg;
    int64_t iteration = 0;
    parse_checkpoint_header(ck.header_json, &cfg, &iteration, nullptr);
    PlateModel<T> model(cfg);
    restore_params(ck, model.params());
    return {std::move(model), iteration};
  }
};

}  // namespace lpnet
