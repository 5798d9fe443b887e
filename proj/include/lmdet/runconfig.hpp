#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "lmdet/error.hpp"
#include "lmdet/loss.hpp"
#include "lmdet/model.hpp"
#include "lmdet/optim.hpp"

namespace lmdet {

enum class DecodeMethod { argmax, shifted, dark };

inline const char* decode_method_name(DecodeMethod m) {
  switch (m) {
    case DecodeMethod::argmax: return "argmax";
    case DecodeMethod::shifted: return "shifted";
    case DecodeMethod::dark: return "dark";
  }
  return "?";
}

inline DecodeMethod decode_method_from(const std::string& s) {
  if (s == "argmax") return DecodeMethod::argmax;
  if (s == "shifted") return DecodeMethod::shifted;
  if (s == "dark") return DecodeMethod::dark;
  fail(ErrorClass::config, "unknown decoder \"" + s + "\" (argmax|shifted|dark)");
}

struct AugmentConfig {
  bool enabled = true;
  double flip_prob = 0.5;
  double scale_min = 0.75;
  double scale_max = 1.25;
  double rot_deg = 15.0;
  double translate_frac = 0.05;  // of the input side
};

// Every knob of a run in one document. Unknown keys are rejected; the full
// effective config is echoed into every output directory.
struct RunConfig {
  uint64_t seed = 1;

  struct {
    std::string train_dir;
    std::string val_dir;
    int input_height = 128;
    int input_width = 128;
  } data;

  struct {
    int in_channels = 1;
    int stem_channels = 16;
    std::vector<int> stage_channels = {16, 32, 64, 128};
    int neck_channels = 32;
    int num_keypoints = 4;
    std::vector<int> supervised_scales = {2, 3};
    std::vector<int> upscale;  // empty: s_i = 2^i (full-resolution heatmaps)
    int lkc_kernel = 9;
  } model;

  struct {
    double sigma = 6.0;
    double truncate_sigmas = 3.0;
  } encode;

  struct {
    DecodeMethod method = DecodeMethod::dark;
    bool dark_modulate = false;
    bool flip_test = false;
    int eval_scale = 0;  // 0: finest supervised scale
  } decode;

  LossConfig loss;
  AdamConfig optim;

  struct {
    int epochs = 30;
    int batch_size = 2;
    int checkpoint_every = 0;  // epochs; 0 keeps only the final parameters
    bool val_flip_test = false;
  } train;

  AugmentConfig augment;

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.input_h = data.input_height;
    mc.input_w = data.input_width;
    mc.backbone.in_channels = model.in_channels;
    mc.backbone.stem_channels = model.stem_channels;
    mc.backbone.stage_channels = model.stage_channels;
    mc.neck_channels = model.neck_channels;
    mc.head.num_keypoints = model.num_keypoints;
    mc.head.supervised_scales = model.supervised_scales;
    mc.head.upscale = model.upscale;
    mc.head.lkc_kernel = model.lkc_kernel;
    return mc;
  }

  // The scale whose heatmaps are decoded at evaluation time.
  int effective_eval_scale() const {
    if (decode.eval_scale != 0) return decode.eval_scale;
    int best = model.supervised_scales.front();
    for (int s : model.supervised_scales) best = std::min(best, s);
    return best;
  }

  void validate() const {
    model_config().validate();
    if (!(encode.sigma > 0.0)) fail(ErrorClass::config, "encode.sigma must be positive");
    if (!(encode.truncate_sigmas > 0.0))
      fail(ErrorClass::config, "encode.truncate_sigmas must be positive");
    if (loss.ohkm_topk < 0 || loss.ohkm_topk > model.num_keypoints)
      fail(ErrorClass::config, "loss.ohkm_topk outside [0, num_keypoints]");
    if (!(optim.lr > 0.0)) fail(ErrorClass::config, "optim.lr must be positive");
    if (train.epochs < 0 || train.batch_size < 1)
      fail(ErrorClass::config, "train.epochs/batch_size out of range");
    if (decode.eval_scale != 0) {
      bool found = false;
      for (int s : model.supervised_scales) found |= (s == decode.eval_scale);
      if (!found) fail(ErrorClass::config, "decode.eval_scale is not a supervised scale");
    }
    if (augment.flip_prob < 0.0 || augment.flip_prob > 1.0)
      fail(ErrorClass::config, "augment.flip_prob outside [0,1]");
    if (!(augment.scale_min > 0.0) || augment.scale_max < augment.scale_min)
      fail(ErrorClass::config, "augment scale range invalid");
    if (augment.translate_frac < 0.0 || augment.translate_frac > 0.5)
      fail(ErrorClass::config, "augment.translate_frac outside [0, 0.5]");
  }
};

inline nlohmann::json runconfig_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["data"]["train_dir"] = c.data.train_dir;
  j["data"]["val_dir"] = c.data.val_dir;
  j["data"]["input_height"] = c.data.input_height;
  j["data"]["input_width"] = c.data.input_width;
  j["model"]["in_channels"] = c.model.in_channels;
  j["model"]["stem_channels"] = c.model.stem_channels;
  j["model"]["stage_channels"] = c.model.stage_channels;
  j["model"]["neck_channels"] = c.model.neck_channels;
  j["model"]["num_keypoints"] = c.model.num_keypoints;
  j["model"]["supervised_scales"] = c.model.supervised_scales;
  j["model"]["upscale"] = c.model.upscale;
  j["model"]["lkc_kernel"] = c.model.lkc_kernel;
  j["encode"]["sigma"] = c.encode.sigma;
  j["encode"]["truncate_sigmas"] = c.encode.truncate_sigmas;
  j["decode"]["method"] = decode_method_name(c.decode.method);
  j["decode"]["dark_modulate"] = c.decode.dark_modulate;
  j["decode"]["flip_test"] = c.decode.flip_test;
  j["decode"]["eval_scale"] = c.decode.eval_scale;
  j["loss"]["mode"] = c.loss.mode == LossMode::mse ? "mse" : "l2norm";
  j["loss"]["ohkm_topk"] = c.loss.ohkm_topk;
  j["optim"]["lr"] = c.optim.lr;
  j["optim"]["beta1"] = c.optim.beta1;
  j["optim"]["beta2"] = c.optim.beta2;
  j["optim"]["epsilon"] = c.optim.epsilon;
  j["train"]["epochs"] = c.train.epochs;
  j["train"]["batch_size"] = c.train.batch_size;
  j["train"]["checkpoint_every"] = c.train.checkpoint_every;
  j["train"]["val_flip_test"] = c.train.val_flip_test;
  j["augment"]["enabled"] = c.augment.enabled;
  j["augment"]["flip_prob"] = c.augment.flip_prob;
  j["augment"]["scale_min"] = c.augment.scale_min;
  j["augment"]["scale_max"] = c.augment.scale_max;
  j["augment"]["rot_deg"] = c.augment.rot_deg;
  j["augment"]["translate_frac"] = c.augment.translate_frac;
  return j;
}

namespace detail {

// Any key in `doc` that the skeleton does not know is an error; this is what
// makes typos in config files loud instead of silent.
inline void check_unknown_keys(const nlohmann::json& doc, const nlohmann::json& skeleton,
                               const std::string& path) {
  if (!doc.is_object()) return;
  if (!skeleton.is_object())
    fail(ErrorClass::config, "config key \"" + path + "\" should be a scalar or array");
  for (const auto& [key, value] : doc.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!skeleton.contains(key))
      fail(ErrorClass::config, "unknown config key \"" + where + "\"");
    check_unknown_keys(value, skeleton.at(key), where);
  }
}

}  // namespace detail

// Parses a (possibly partial) config document over the defaults.
inline RunConfig runconfig_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::check_unknown_keys(j, runconfig_to_json(c), "");
  try {
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
    if (j.contains("data")) {
      const auto& d = j["data"];
      if (d.contains("train_dir")) c.data.train_dir = d["train_dir"].get<std::string>();
      if (d.contains("val_dir")) c.data.val_dir = d["val_dir"].get<std::string>();
      if (d.contains("input_height")) c.data.input_height = d["input_height"].get<int>();
      if (d.contains("input_width")) c.data.input_width = d["input_width"].get<int>();
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      if (m.contains("in_channels")) c.model.in_channels = m["in_channels"].get<int>();
      if (m.contains("stem_channels")) c.model.stem_channels = m["stem_channels"].get<int>();
      if (m.contains("stage_channels"))
        c.model.stage_channels = m["stage_channels"].get<std::vector<int>>();
      if (m.contains("neck_channels")) c.model.neck_channels = m["neck_channels"].get<int>();
      if (m.contains("num_keypoints")) c.model.num_keypoints = m["num_keypoints"].get<int>();
      if (m.contains("supervised_scales"))
        c.model.supervised_scales = m["supervised_scales"].get<std::vector<int>>();
      if (m.contains("upscale")) c.model.upscale = m["upscale"].get<std::vector<int>>();
      if (m.contains("lkc_kernel")) c.model.lkc_kernel = m["lkc_kernel"].get<int>();
    }
    if (j.contains("encode")) {
      const auto& e = j["encode"];
      if (e.contains("sigma")) c.encode.sigma = e["sigma"].get<double>();
      if (e.contains("truncate_sigmas"))
        c.encode.truncate_sigmas = e["truncate_sigmas"].get<double>();
    }
    if (j.contains("decode")) {
      const auto& d = j["decode"];
      if (d.contains("method"))
        c.decode.method = decode_method_from(d["method"].get<std::string>());
      if (d.contains("dark_modulate")) c.decode.dark_modulate = d["dark_modulate"].get<bool>();
      if (d.contains("flip_test")) c.decode.flip_test = d["flip_test"].get<bool>();
      if (d.contains("eval_scale")) c.decode.eval_scale = d["eval_scale"].get<int>();
    }
    if (j.contains("loss")) {
      const auto& l = j["loss"];
      if (l.contains("mode")) {
        const auto mode = l["mode"].get<std::string>();
        if (mode == "mse") c.loss.mode = LossMode::mse;
        else if (mode == "l2norm") c.loss.mode = LossMode::l2norm;
        else fail(ErrorClass::config, "unknown loss mode \"" + mode + "\" (mse|l2norm)");
      }
      if (l.contains("ohkm_topk")) c.loss.ohkm_topk = l["ohkm_topk"].get<int>();
    }
    if (j.contains("optim")) {
      const auto& o = j["optim"];
      if (o.contains("lr")) c.optim.lr = o["lr"].get<double>();
      if (o.contains("beta1")) c.optim.beta1 = o["beta1"].get<double>();
      if (o.contains("beta2")) c.optim.beta2 = o["beta2"].get<double>();
      if (o.contains("epsilon")) c.optim.epsilon = o["epsilon"].get<double>();
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      if (t.contains("epochs")) c.train.epochs = t["epochs"].get<int>();
      if (t.contains("batch_size")) c.train.batch_size = t["batch_size"].get<int>();
      if (t.contains("checkpoint_every"))
        c.train.checkpoint_every = t["checkpoint_every"].get<int>();
      if (t.contains("val_flip_test")) c.train.val_flip_test = t["val_flip_test"].get<bool>();
    }
    if (j.contains("augment")) {
      const auto& a = j["augment"];
      if (a.contains("enabled")) c.augment.enabled = a["enabled"].get<bool>();
      if (a.contains("flip_prob")) c.augment.flip_prob = a["flip_prob"].get<double>();
      if (a.contains("scale_min")) c.augment.scale_min = a["scale_min"].get<double>();
      if (a.contains("scale_max")) c.augment.scale_max = a["scale_max"].get<double>();
      if (a.contains("rot_deg")) c.augment.rot_deg = a["rot_deg"].get<double>();
      if (a.contains("translate_frac"))
        c.augment.translate_frac = a["translate_frac"].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorClass::config, std::string("malformed config value: ") + e.what());
  }
  return c;
}

inline RunConfig load_runconfig(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorClass::io, "cannot open config: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorClass::config, "invalid JSON in " + path + ": " + e.what());
  }
  return runconfig_from_json(j);
}

inline void save_runconfig(const RunConfig& c, const std::string& path) {
  std::ofstream f(path);
  if (!f) fail(ErrorClass::io, "cannot open for writing: " + path);
  f << runconfig_to_json(c).dump(2) << "\n";
  if (!f) fail(ErrorClass::io, "short write: " + path);
}

}  // namespace lmdet
